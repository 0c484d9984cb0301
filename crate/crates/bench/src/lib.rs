//! Fixtures shared by the kernel benchmarks.

use ndarray::Array1;
use onebit_core::{sample_ensemble, synth_generator, BinaryObservation, CovarianceSpec, GeneratorNetwork, MeasurementEnsemble, SynthSpec};

/// The default desk-scale generator: `5 -> 50 -> 100`.
pub fn default_generator() -> GeneratorNetwork {
    synth_generator(&SynthSpec::new(5, 100, vec![50], 0)).expect("valid spec")
}

/// A normalized truth in the generator range, its ensemble and observation.
pub fn problem(net: &GeneratorNetwork, m: usize) -> (MeasurementEnsemble, BinaryObservation) {
    let cov = CovarianceSpec::toeplitz(net.output_dim(), 0.3);
    let ens = sample_ensemble(m, cov, 0.1, 0.97, 1).expect("valid ensemble");
    let x = net.forward(latent(net.latent_dim()).view()).expect("forward");
    let norm = onebit_core::sigma_norm(&ens.cov, x.view()).expect("norm");
    let obs = ens.observe((x / norm).view(), 2).expect("observe");
    (ens, obs)
}

pub fn latent(k: usize) -> Array1<f64> {
    Array1::from_shape_fn(k, |i| ((i as f64) * 0.7).sin())
}
