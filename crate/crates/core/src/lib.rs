//! One-bit compressed sensing with generative priors.
//!
//! The crate covers the measurement model `y = η ⊙ sign(A x* + ε)`, latent
//! least-squares decoding through a ReLU generator, sparse baselines,
//! empirical validators for the restricted-eigenvalue and concentration
//! machinery, and explicit bit-extraction memorization networks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod container;
pub mod decoders;
pub mod generator;
pub mod harness;
pub mod linalg;
pub mod measurement;
pub mod memorizer;
pub mod rng;
pub mod theory;

pub use decoders::{
    biht_decode, estimation_error, ls_decode, pv_convex_decode, DecoderError, DecoderResult, EstimationError,
    LsDecoderConfig, LsMode, StepRule,
};
pub use generator::{
    synth_generator, Activation, GeneratorError, GeneratorNetwork, LatentPoint, Layer, OutputNorm, SynthSpec,
};
pub use measurement::{
    sample_ensemble, scaling_constant, sigma_norm, BinaryObservation, CovarianceKind, CovarianceSpec,
    MeasurementEnsemble, MeasurementError, Truth,
};
pub use harness::{
    fit_scaling, flip_robustness_report, run_grid, CellResult, DecoderKind, ExperimentGrid, FlipMetric, FlipReport,
    HarnessError, ScalingFit,
};
pub use memorizer::{
    build_bit_extractor, build_fitter, build_indexed_memorizer, build_theorem_generator, count_dimensions, BitSample,
    Construction, MemorizerError, MemorizerNet, TheoremGenerator,
};
pub use theory::{
    build_eps_net, check_jl, check_srec, concentration_diagnostics, estimate_local_mean_width, pass_rate,
    ConcentrationReport, EpsNet, JlReport, MeanWidthEstimate, PassRate, SrecReport, TheoryError,
};
