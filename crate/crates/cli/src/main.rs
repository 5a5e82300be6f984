//! Command-line front end for the benchmark pipeline.
//!
//! Exit codes: 0 on success, 2 for configuration problems, 3 for data or
//! execution problems, 4 for a run that finished but skipped cells or
//! recorded estimator failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use catebench_core::datagen::{self, Dataset, DgpFamily, DgpSpec};
use catebench_core::numerics::RngStream;
use catebench_core::pipeline::{self, BenchConfig, BenchmarkReport, PipelineError, RawResults};

const EXIT_OK: u8 = 0;
const EXIT_PARTIAL: u8 = 4;

/// Benchmarks observational model-selection metrics for treatment-effect
/// estimators against the oracle PEHE.
#[derive(Parser)]
#[command(name = "catebench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and write it as CSV.
    Generate(GenerateArgs),
    /// Run the benchmark described by a TOML config file.
    Run(RunArgs),
    /// Rebuild the aggregate report from a raw results table.
    Aggregate(AggregateArgs),
    /// Render the tables of a stored report.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Effect surface; one of linear-constant, linear-heterogeneous,
    /// polynomial-heterogeneous, step-heterogeneous.
    #[arg(long, value_parser = parse_family)]
    family: DgpFamily,

    /// Rows to draw.
    #[arg(long)]
    n: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,

    /// Covariate dimension.
    #[arg(long)]
    dim: Option<usize>,

    /// Strength of the confounding between covariates and assignment.
    #[arg(long)]
    confounding: Option<f64>,

    /// Floor (and one minus the ceiling) on treatment probabilities.
    #[arg(long)]
    overlap_floor: Option<f64>,

    /// Outcome noise standard deviation.
    #[arg(long)]
    noise_sd: Option<f64>,

    /// Multiplier on the effect surface.
    #[arg(long)]
    effect_scale: Option<f64>,

    /// Write only the observational columns, dropping the ground truth.
    #[arg(long)]
    observational: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Benchmark config file.
    #[arg(long)]
    config: PathBuf,

    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    /// A raw_results.csv produced by `run`.
    #[arg(long)]
    raw: PathBuf,

    /// Directory for the rebuilt report files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A report.json produced by `run` or `aggregate`.
    #[arg(long)]
    report: PathBuf,
}

fn parse_family(text: &str) -> Result<DgpFamily, String> {
    let all = [
        DgpFamily::LinearConstant,
        DgpFamily::LinearHeterogeneous,
        DgpFamily::PolynomialHeterogeneous,
        DgpFamily::StepHeterogeneous,
    ];
    all.into_iter()
        .find(|f| f.label() == text)
        .ok_or_else(|| {
            let labels: Vec<&str> = all.iter().map(|f| f.label()).collect();
            format!("unknown family `{text}`; expected one of {}", labels.join(", "))
        })
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_config() { 2 } else { 3 })
        }
    }
}

fn execute(command: Command) -> Result<u8, PipelineError> {
    match command {
        Command::Generate(args) => generate(args),
        Command::Run(args) => run(args),
        Command::Aggregate(args) => aggregate(args),
        Command::Report(args) => report(args),
    }
}

fn generate(args: GenerateArgs) -> Result<u8, PipelineError> {
    let mut spec = DgpSpec::new(args.family);
    if let Some(dim) = args.dim {
        spec.dim = dim;
    }
    if let Some(c) = args.confounding {
        spec.confounding_strength = c;
    }
    if let Some(floor) = args.overlap_floor {
        spec.overlap_floor = floor;
    }
    if let Some(sd) = args.noise_sd {
        spec.noise_sd = sd;
    }
    if let Some(scale) = args.effect_scale {
        spec.effect_scale = scale;
    }
    // Parameter mistakes are config errors, not data errors.
    spec.validate().map_err(|e| PipelineError::Config {
        reason: e.to_string(),
    })?;

    let drawn = datagen::generate(&spec, args.n, &RngStream::new(args.seed))?;
    let dataset = if args.observational {
        Dataset::Observational(drawn.observational().clone())
    } else {
        Dataset::Oracle(drawn)
    };
    datagen::write_csv(&dataset, &args.out)?;
    println!(
        "wrote {} rows ({}) to {}",
        dataset.observational().n(),
        spec.family.label(),
        args.out.display()
    );
    Ok(EXIT_OK)
}

fn run(args: RunArgs) -> Result<u8, PipelineError> {
    let mut config = BenchConfig::load(&args.config)?;
    if let Some(out) = args.out {
        config.output_dir = out;
    }
    let results = pipeline::run(&config)?;
    let report = pipeline::build_report(&results)?;
    pipeline::emit(&results, &report, &config.output_dir)?;
    print!("{}", report.to_summary());
    println!("\nwrote {}", config.output_dir.display());
    if results.skips.is_empty() && results.failures.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "partial run: {} skipped cell(s), {} estimator failure(s); see report.json",
            results.skips.len(),
            results.failures.len()
        );
        Ok(EXIT_PARTIAL)
    }
}

fn aggregate(args: AggregateArgs) -> Result<u8, PipelineError> {
    let results = RawResults::read_csv(&args.raw)?;
    let report = pipeline::build_report(&results)?;
    pipeline::emit(&results, &report, &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(EXIT_OK)
}

fn report(args: ReportArgs) -> Result<u8, PipelineError> {
    let text = std::fs::read_to_string(&args.report).map_err(|source| PipelineError::Io {
        context: format!("reading {}", args.report.display()),
        source,
    })?;
    let report = BenchmarkReport::from_json(&text)?;
    print!("{}", report.to_summary());
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names_parse_and_junk_is_rejected() {
        for label in [
            "linear-constant",
            "linear-heterogeneous",
            "polynomial-heterogeneous",
            "step-heterogeneous",
        ] {
            assert_eq!(parse_family(label).unwrap().label(), label);
        }
        let err = parse_family("quadratic").unwrap_err();
        assert!(err.contains("expected one of"));
    }

    #[test]
    fn cli_surface_stays_wired() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn generate_writes_a_loadable_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data.csv");
        let code = generate(GenerateArgs {
            family: DgpFamily::LinearHeterogeneous,
            n: 60,
            seed: 1,
            out: out.clone(),
            dim: Some(3),
            confounding: None,
            overlap_floor: None,
            noise_sd: None,
            effect_scale: None,
            observational: false,
        })
        .unwrap();
        assert_eq!(code, EXIT_OK);
        let back = datagen::read_csv(&out, true).unwrap();
        assert_eq!(back.observational().n(), 60);
        assert!(back.oracle().is_some());

        let bad = generate(GenerateArgs {
            family: DgpFamily::LinearHeterogeneous,
            n: 60,
            seed: 1,
            out,
            dim: Some(0),
            confounding: None,
            overlap_floor: None,
            noise_sd: None,
            effect_scale: None,
            observational: false,
        })
        .unwrap_err();
        assert!(bad.is_config());
    }

    #[test]
    fn run_aggregate_and_report_agree_end_to_end() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("bench.toml");
        std::fs::write(
            &config_path,
            format!(
                r#"
seeds = [0]
kinds = ["s", "t"]
metrics = ["tau_t", "value", "oracle_pehe"]
budget = {{ max_candidates = 3, cv_folds = 3 }}
output_dir = "{}"

[[dataset]]
group = "lin"
name = "het"
n = 150
dgp = {{ family = "linear-heterogeneous", d = 3, noise_sd = 0.5 }}
"#,
                dir.path().join("out").display()
            ),
        )
        .unwrap();

        let code = run(RunArgs {
            config: config_path,
            out: None,
        })
        .unwrap();
        assert_eq!(code, EXIT_OK);
        let out = dir.path().join("out");
        let report_bytes = std::fs::read(out.join("report.json")).unwrap();

        let rebuilt = dir.path().join("rebuilt");
        let code = aggregate(AggregateArgs {
            raw: out.join("raw_results.csv"),
            out: rebuilt.clone(),
        })
        .unwrap();
        assert_eq!(code, EXIT_OK);
        assert_eq!(std::fs::read(rebuilt.join("report.json")).unwrap(), report_bytes);

        let code = report(ReportArgs {
            report: rebuilt.join("report.json"),
        })
        .unwrap();
        assert_eq!(code, EXIT_OK);
    }

    #[test]
    fn missing_config_is_a_config_error() {
        let err = run(RunArgs {
            config: PathBuf::from("/nonexistent/bench.toml"),
            out: None,
        })
        .unwrap_err();
        assert!(err.is_config());
    }
}
