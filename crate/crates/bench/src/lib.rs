//! Shared fixtures for the criterion benchmarks.
//!
//! Everything here is deterministic: fixed seeds, fixed sizes, and nuisance
//! values taken from the generating truth, so benchmark numbers move only
//! when the measured code does.

use catebench_core::datagen::{self, DgpFamily, DgpSpec, OracleDataset};
use catebench_core::numerics::RngStream;
use catebench_core::scores::{MetricContext, PolicyDirection};

/// A polynomial-heterogeneous draw, the workhorse input for both benches.
pub fn dataset(n: usize) -> OracleDataset {
    let mut spec = DgpSpec::new(DgpFamily::PolynomialHeterogeneous);
    spec.noise_sd = 0.5;
    datagen::generate(&spec, n, &RngStream::new(7)).expect("fixture draw")
}

/// A metric context filled with the generating truth, paired with the true
/// effects. Benches built on it time metric arithmetic, not model fitting.
pub fn exact_context(n: usize) -> (MetricContext, Vec<f64>) {
    let ds = dataset(n);
    let g: Vec<f64> = ds
        .pi()
        .iter()
        .zip(ds.mu0())
        .zip(ds.mu1())
        .map(|((&p, &m0), &m1)| (1.0 - p) * m0 + p * m1)
        .collect();
    let ctx = MetricContext::from_values(
        ds.observational(),
        ds.pi().to_vec(),
        ds.mu0().to_vec(),
        ds.mu1().to_vec(),
        ds.mu0().to_vec(),
        ds.mu1().to_vec(),
        g,
        PolicyDirection::HigherIsBetter,
    )
    .expect("fixture context");
    (ctx, ds.tau().to_vec())
}
