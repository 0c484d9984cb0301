//! Empirical validators for the covering, restricted-eigenvalue,
//! distance-preservation, mean-width and concentration statements behind
//! the recovery guarantees.
//!
//! Probabilistic statements are checked as seeded pass rates (see
//! [`pass_rate`]); no single draw is treated as a proof.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{GeneratorError, GeneratorNetwork};
use crate::linalg::{compensated_sum, mean_and_stderr, spectral_norm, sym_extreme_eigenvalues};
use crate::measurement::{
    sample_ensemble, scaling_constant, sigma_norm, BinaryObservation, CovarianceKind, CovarianceSpec,
    MeasurementEnsemble, MeasurementError,
};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("lattice net would hold about {estimated:.3e} points (budget {budget}); use the random net for k = {k}")]
    Capacity { k: usize, estimated: f64, budget: usize },
    #[error("every generator output lies within γ = {gamma} of G(z̄); the direction set is empty")]
    DegenerateCone { gamma: f64 },
    #[error("covariance is singular or invalid: {0}")]
    Covariance(#[from] MeasurementError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

/// Largest lattice the default constructor will enumerate.
pub const LATTICE_BUDGET: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetMethod {
    Lattice,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsNet {
    pub points: Vec<Array1<f64>>,
    pub epsilon: f64,
    pub r: f64,
    pub method: NetMethod,
}

impl EpsNet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `k log(4r/ε)`, the log-cardinality bound for a covering of `B(r)`.
    pub fn log_cardinality_bound(&self) -> f64 {
        let k = self.points.first().map_or(0, |p| p.len());
        k as f64 * (4.0 * self.r / self.epsilon).ln()
    }

    pub fn nearest_distance(&self, p: ArrayView1<'_, f64>) -> f64 {
        self.points
            .iter()
            .map(|q| {
                let d = &p - q;
                d.dot(&d)
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    }

    /// Largest distance from `samples` uniform points of `B(r)` to the net.
    pub fn max_cover_distance(&self, samples: usize, seed: u64) -> f64 {
        let k = self.points[0].len();
        let mut rng = stream_rng(seed, Stream::Latent, &[0xc0de]);
        let pts: Vec<Array1<f64>> = (0..samples).map(|_| uniform_in_ball(&mut rng, k, self.r)).collect();
        pts.par_iter().map(|p| self.nearest_distance(p.view())).reduce(|| 0.0, f64::max)
    }
}

/// Uniform sample from `B_2^k(r)`.
pub fn uniform_in_ball(rng: &mut ChaCha8Rng, k: usize, r: f64) -> Array1<f64> {
    loop {
        let g: Array1<f64> = Array1::from_shape_simple_fn(k, || StandardNormal.sample(&mut *rng));
        let norm = g.dot(&g).sqrt();
        if norm > 0.0 {
            let u: f64 = rng.random();
            return g * (r * u.powf(1.0 / k as f64) / norm);
        }
    }
}

fn check_net_params(k: usize, r: f64, epsilon: f64) -> Result<(), TheoryError> {
    if k == 0 {
        return Err(TheoryError::Invalid("k must be at least 1".into()));
    }
    if !(r > 0.0) || !(epsilon > 0.0) || !r.is_finite() || !epsilon.is_finite() {
        return Err(TheoryError::Invalid(format!("need r > 0 and ε > 0, got r={r}, ε={epsilon}")));
    }
    Ok(())
}

/// Lattice ε-net of `B_2^k(r)`.
///
/// Uses the cubic lattice of pitch `2ε/√k`, whose cells have circumradius
/// `ε`. Every lattice point whose cell meets the ball is kept and points
/// outside the ball are pulled radially onto its boundary; the radial map is
/// the metric projection onto a convex set, so the covering radius stays at
/// most `ε`.
pub fn build_eps_net(k: usize, r: f64, epsilon: f64) -> Result<EpsNet, TheoryError> {
    build_eps_net_with_budget(k, r, epsilon, LATTICE_BUDGET)
}

pub fn build_eps_net_with_budget(k: usize, r: f64, epsilon: f64, budget: usize) -> Result<EpsNet, TheoryError> {
    check_net_params(k, r, epsilon)?;
    if epsilon >= r {
        return Ok(EpsNet { points: vec![Array1::zeros(k)], epsilon, r, method: NetMethod::Lattice });
    }
    let h = 2.0 * epsilon / (k as f64).sqrt();
    let half = (r / h + 0.5).ceil() as i64;
    let side = (2 * half + 1) as f64;
    let estimated = side.powi(k as i32);
    if estimated > budget as f64 * 8.0 {
        // the box is far bigger than the budget even before ball pruning
        return Err(TheoryError::Capacity { k, estimated, budget });
    }
    let mut points = Vec::new();
    let mut idx = vec![-half; k];
    'outer: loop {
        let gap2: f64 = idx
            .iter()
            .map(|&i| {
                let g = (i as f64 * h).abs() - h / 2.0;
                if g > 0.0 {
                    g * g
                } else {
                    0.0
                }
            })
            .sum();
        if gap2 <= r * r {
            let mut p: Array1<f64> = idx.iter().map(|&i| i as f64 * h).collect();
            let norm = p.dot(&p).sqrt();
            if norm > r {
                p *= r / norm;
            }
            points.push(p);
            if points.len() > budget {
                return Err(TheoryError::Capacity { k, estimated, budget });
            }
        }
        for i in idx.iter_mut() {
            *i += 1;
            if *i <= half {
                continue 'outer;
            }
            *i = -half;
        }
        break;
    }
    Ok(EpsNet { points, epsilon, r, method: NetMethod::Lattice })
}

/// Greedy random ε-separated set in `B_2^k(r)`, for dimensions where the
/// lattice is too large.
///
/// Candidates are drawn uniformly and kept when farther than `ε` from every
/// kept point; sampling stops after `patience` consecutive rejections. The
/// covering property is certified afterwards on `certify_samples` fresh
/// points and the certified radius is returned alongside the net.
pub fn build_random_eps_net(
    k: usize,
    r: f64,
    epsilon: f64,
    patience: usize,
    certify_samples: usize,
    seed: u64,
) -> Result<(EpsNet, f64), TheoryError> {
    check_net_params(k, r, epsilon)?;
    let mut rng = stream_rng(seed, Stream::Net, &[]);
    let mut net = EpsNet { points: vec![Array1::zeros(k)], epsilon, r, method: NetMethod::Random };
    let mut misses = 0;
    while misses < patience {
        let p = uniform_in_ball(&mut rng, k, r);
        if net.nearest_distance(p.view()) > epsilon {
            net.points.push(p);
            misses = 0;
        } else {
            misses += 1;
        }
    }
    let certified = net.max_cover_distance(certify_samples, seed);
    Ok((net, certified))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrecReport {
    pub gamma: f64,
    pub delta: f64,
    pub pairs_tested: usize,
    pub violations: usize,
    pub min_ratio: f64,
    pub m: usize,
    pub seed: u64,
    pub pass: bool,
}

/// Samples latent pairs uniformly from `B_2^k(r)` and counts pairs with
/// `(1/m)||A(x₁ - x₂)||² < γ||x₁ - x₂||² - δ`, where `x = G(z)`.
///
/// `min_ratio` is the minimum of `((1/m)||AΔ||² + δ)/||Δ||²` over pairs with
/// `||Δ|| >= 1e-9`.
pub fn check_srec(
    ens: &MeasurementEnsemble,
    net: &GeneratorNetwork,
    r: f64,
    gamma: f64,
    delta: f64,
    num_pairs: usize,
    seed: u64,
) -> Result<SrecReport, TheoryError> {
    if num_pairs == 0 {
        return Err(TheoryError::Invalid("num_pairs must be at least 1".into()));
    }
    if net.output_dim() != ens.n() {
        return Err(TheoryError::Invalid(format!(
            "generator output {} does not match A with {} columns",
            net.output_dim(),
            ens.n()
        )));
    }
    let k = net.latent_dim();
    let mut rng = stream_rng(seed, Stream::Pairs, &[]);
    let pairs: Vec<(Array1<f64>, Array1<f64>)> =
        (0..num_pairs).map(|_| (uniform_in_ball(&mut rng, k, r), uniform_in_ball(&mut rng, k, r))).collect();
    let m = ens.m() as f64;
    let diffs: Vec<Array1<f64>> = pairs
        .par_iter()
        .map(|(z1, z2)| Ok(net.forward(z1.view())? - net.forward(z2.view())?))
        .collect::<Result<_, GeneratorError>>()?;
    let n = ens.n();
    let d = Array2::from_shape_fn((num_pairs, n), |(i, j)| diffs[i][j]);
    let ad = d.dot(&ens.a.t());
    let mut violations = 0;
    let mut min_ratio = f64::INFINITY;
    for (row, arow) in d.rows().into_iter().zip(ad.rows()) {
        let dd = row.dot(&row);
        let lhs = arow.dot(&arow) / m;
        violations += usize::from(lhs < gamma * dd - delta);
        if dd.sqrt() >= 1e-9 {
            min_ratio = min_ratio.min((lhs + delta) / dd);
        }
    }
    Ok(SrecReport { gamma, delta, pairs_tested: num_pairs, violations, min_ratio, m: ens.m(), seed, pass: violations == 0 })
}

/// `sqrt(σ_min(Σ))/2`, the restricted-eigenvalue constant for Gaussian rows.
pub fn srec_gamma(ens: &MeasurementEnsemble) -> f64 {
    let lo = match ens.cov.kind {
        CovarianceKind::Identity => 1.0,
        _ => sym_extreme_eigenvalues(ens.cov.matrix().view()).0,
    };
    0.5 * lo.sqrt()
}

/// `5 k log(L/δ)`, rounded up.
pub fn srec_measurements(k: usize, lipschitz: f64, delta: f64) -> usize {
    (5.0 * k as f64 * (lipschitz / delta).ln()).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JlReport {
    pub epsilon: f64,
    pub pairs: usize,
    pub max_distortion: f64,
    pub pass: bool,
}

/// Distortion of `t -> (1/√m) A Σ^{-1/2} t` on the `Σ^{1/2}`-images of
/// `points`: the maximum over pairs of `| ||AΔ|| / (√m ||Δ||_Σ) - 1 |`.
/// Coincident points are skipped.
pub fn check_jl(ens: &MeasurementEnsemble, points: &[Array1<f64>], epsilon: f64) -> Result<JlReport, TheoryError> {
    if points.len() < 2 {
        return Err(TheoryError::Invalid("need at least two points".into()));
    }
    ens.cov.cholesky_factor()?;
    let sigma = ens.cov.matrix();
    let images: Vec<Array1<f64>> = points.iter().map(|p| ens.a.dot(p)).collect();
    let sm = (ens.m() as f64).sqrt();
    let pairs: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|i| (i + 1..points.len()).map(move |j| (i, j))).collect();
    let results: Vec<Option<f64>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let d = &points[i] - &points[j];
            let q = d.dot(&sigma.dot(&d));
            if !(q > 1e-24) {
                return None;
            }
            let ad = &images[i] - &images[j];
            Some((ad.dot(&ad).sqrt() / (sm * q.sqrt()) - 1.0).abs())
        })
        .collect();
    let used: Vec<f64> = results.into_iter().flatten().collect();
    let max_distortion = used.iter().copied().fold(0.0, f64::max);
    Ok(JlReport { epsilon, pairs: used.len(), max_distortion, pass: !used.is_empty() && max_distortion <= epsilon })
}

/// `m >= 8 log|T| / ε²`, rounded up.
pub fn jl_measurements(points: usize, epsilon: f64) -> usize {
    (8.0 * (points as f64).ln() / (epsilon * epsilon)).ceil().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanWidthEstimate {
    pub omega_hat: f64,
    pub std_err: f64,
    pub gaussians_used: usize,
    pub net_size: usize,
    pub gamma_scale: f64,
    pub directions: usize,
    /// `sqrt(2k log(16 L r / (γ ε))) + sqrt(n) ε`
    pub bound: f64,
    /// `sqrt(2 log |C|)` for the finite direction set
    pub massart_bound: f64,
}

/// Monte Carlo estimate of `E max_{v in C} <g, v>` with `g ~ N(0, I_n)`.
///
/// Gaussian `i` comes from its own derived stream so the estimate does not
/// depend on how the work is split across threads.
pub fn mean_width_of_directions(directions: &[Array1<f64>], num_gaussians: usize, seed: u64) -> (f64, f64) {
    let n = directions[0].len();
    let d = Array2::from_shape_fn((directions.len(), n), |(i, j)| directions[i][j]);
    let maxima: Vec<f64> = (0..num_gaussians)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, Stream::Gaussians, &[i as u64]);
            let g = Array1::from_shape_simple_fn(n, || StandardNormal.sample(&mut rng));
            d.dot(&g).iter().copied().fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    mean_and_stderr(&maxima)
}

/// Local mean width of the normalized difference set
/// `C = {(G(u) - G(z̄))/||G(u) - G(z̄)|| : u in U, ||G(u) - G(z̄)|| >= γ}`
/// over a lattice `net_epsilon`-net `U` of `B_2^k(r)`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_local_mean_width(
    net: &GeneratorNetwork,
    z_bar: ArrayView1<'_, f64>,
    r: f64,
    gamma_scale: f64,
    num_gaussians: usize,
    net_epsilon: f64,
    seed: u64,
) -> Result<MeanWidthEstimate, TheoryError> {
    if !(gamma_scale > 0.0) || num_gaussians == 0 || !(net_epsilon > 0.0) || !(r > 0.0) {
        return Err(TheoryError::Invalid("γ, ε, r and the Gaussian count must be positive".into()));
    }
    let u = build_eps_net(net.latent_dim(), r, net_epsilon)?;
    let center = net.forward(z_bar)?;
    let mut directions = Vec::new();
    for p in &u.points {
        let d = net.forward(p.view())? - &center;
        let norm = d.dot(&d).sqrt();
        if norm >= gamma_scale {
            directions.push(d / norm);
        }
    }
    if directions.is_empty() {
        return Err(TheoryError::DegenerateCone { gamma: gamma_scale });
    }
    let (omega_hat, std_err) = mean_width_of_directions(&directions, num_gaussians, seed);
    let k = net.latent_dim() as f64;
    let n = net.output_dim() as f64;
    let l = net.lipschitz_bound();
    let bound = (2.0 * k * (16.0 * l * r / (gamma_scale * net_epsilon)).ln()).max(0.0).sqrt() + n.sqrt() * net_epsilon;
    Ok(MeanWidthEstimate {
        omega_hat,
        std_err,
        gaussians_used: num_gaussians,
        net_size: u.len(),
        gamma_scale,
        directions: directions.len(),
        bound,
        massart_bound: (2.0 * (directions.len() as f64).ln()).sqrt(),
    })
}

/// `max{τ, (k/m) log(L r n / k) + sqrt(log n / m)}`.
pub fn default_gamma_scale(tau: f64, k: usize, m: usize, lipschitz: f64, r: f64, n: usize) -> f64 {
    let (k, m, n) = (k as f64, m as f64, n as f64);
    tau.max((k / m) * (lipschitz * r * n / k).ln() + (n.ln() / m).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    /// `||Aᵀy/m - E[a y]||_∞`
    pub linf_grad: f64,
    /// `||AᵀA/m - Σ||_max`
    pub linf_cov: f64,
    /// `||AᵀA/m - Σ||_2`
    pub spec_cov: f64,
    pub m: usize,
    pub n: usize,
    /// `sqrt(log n / m)`
    pub linf_rate: f64,
    /// `(sqrt(n/m) + n/m) ||Σ||_2`
    pub spec_rate: f64,
}

/// `E[a y] = (2q - 1) sqrt(2/π) Σx / sqrt(||x||_Σ² + σ²)`, which equals
/// `c Σx` when `||x||_Σ = 1`.
pub fn expected_correlation(ens: &MeasurementEnsemble, x: ArrayView1<'_, f64>) -> Result<Array1<f64>, TheoryError> {
    let s = sigma_norm(&ens.cov, x)?;
    let sx = match ens.cov.kind {
        CovarianceKind::Identity => x.to_owned(),
        _ => ens.cov.matrix().dot(&x),
    };
    let scale = (2.0 * ens.q - 1.0) * (2.0 / std::f64::consts::PI).sqrt() / (s * s + ens.sigma * ens.sigma).sqrt();
    debug_assert!((s - 1.0).abs() > 1e-12 || (scale - scaling_constant(ens.sigma, ens.q)).abs() < 1e-12);
    Ok(sx * scale)
}

pub fn concentration_diagnostics(
    ens: &MeasurementEnsemble,
    obs: &BinaryObservation,
) -> Result<ConcentrationReport, TheoryError> {
    if obs.y.len() != ens.m() || obs.truth.x_star.len() != ens.n() {
        return Err(TheoryError::Invalid("observation does not match the ensemble".into()));
    }
    let m = ens.m() as f64;
    let sigma = ens.cov.matrix();
    let grad = ens.a.t().dot(&obs.y) / m - expected_correlation(ens, obs.truth.x_star.view())?;
    let diff = ens.a.t().dot(&ens.a) / m - &sigma;
    let linf = |v: &mut dyn Iterator<Item = f64>| v.map(f64::abs).fold(0.0, f64::max);
    let n = ens.n() as f64;
    let top = spectral_norm(sigma.view(), 30, 2000, 1e-10);
    Ok(ConcentrationReport {
        linf_grad: linf(&mut grad.iter().copied()),
        linf_cov: linf(&mut diff.iter().copied()),
        spec_cov: spectral_norm(diff.view(), 30, 5000, 1e-10),
        m: ens.m(),
        n: ens.n(),
        linf_rate: (n.ln() / m).sqrt(),
        spec_rate: ((n / m).sqrt() + n / m) * top,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRate {
    pub passes: usize,
    pub runs: usize,
    pub rate: f64,
}

impl PassRate {
    pub fn at_least(&self, passes: usize) -> bool {
        self.passes >= passes
    }
}

/// Runs `check(seed_i)` for `runs` derived seeds in parallel and counts passes.
pub fn pass_rate<F>(runs: usize, base_seed: u64, check: F) -> PassRate
where
    F: Fn(u64) -> bool + Sync,
{
    let passes = (0..runs)
        .into_par_iter()
        .map(|i| usize::from(check(crate::rng::derive_seed(base_seed, &[i as u64]))))
        .sum();
    PassRate { passes, runs, rate: passes as f64 / runs.max(1) as f64 }
}

/// Mean of `values` with compensated summation; reported means do not
/// depend on reduction order beyond the final rounding.
pub fn stable_mean(values: &[f64]) -> f64 {
    compensated_sum(values.iter().copied()) / values.len() as f64
}

// ---------------------------------------------------------------------------
// seeded studies

/// Covariance `Σ_jk = ν^|j-k|`, or the identity for `ν = 0`.
pub fn protocol_covariance(n: usize, nu: f64) -> CovarianceSpec {
    if nu == 0.0 {
        CovarianceSpec::identity(n)
    } else {
        CovarianceSpec::toeplitz(n, nu)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrecStudy {
    pub delta: f64,
    /// defaults to `⌈5k log(L/δ)⌉`
    pub m: Option<usize>,
    pub radius: f64,
    pub pairs: usize,
    pub runs: usize,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrecStudyReport {
    pub m: usize,
    pub k: usize,
    pub lipschitz: f64,
    pub gamma: f64,
    pub delta: f64,
    pub pairs: usize,
    pub pass_rate: PassRate,
    pub total_violations: usize,
    pub worst_min_ratio: f64,
}

/// S-REC with `γ = sqrt(σ_min(Σ))/2` on `runs` independent ensembles.
pub fn srec_study(net: &GeneratorNetwork, study: &SrecStudy, seed: u64) -> Result<SrecStudyReport, TheoryError> {
    if study.runs == 0 || !(study.delta > 0.0) {
        return Err(TheoryError::Invalid("runs must be positive and δ > 0".into()));
    }
    let k = net.latent_dim();
    let lipschitz = net.lipschitz_bound();
    let m = study.m.unwrap_or_else(|| srec_measurements(k, lipschitz, study.delta));
    let cov = protocol_covariance(net.output_dim(), study.nu);
    let reports: Vec<SrecReport> = (0..study.runs)
        .into_par_iter()
        .map(|i| {
            let s = crate::rng::derive_seed(seed, &[i as u64]);
            let ens = sample_ensemble(m, cov.clone(), 0.0, 1.0, s)?;
            check_srec(&ens, net, study.radius, srec_gamma(&ens), study.delta, study.pairs, s)
        })
        .collect::<Result<_, _>>()?;
    let passes = reports.iter().filter(|r| r.pass).count();
    Ok(SrecStudyReport {
        m,
        k,
        lipschitz,
        gamma: reports[0].gamma,
        delta: study.delta,
        pairs: study.pairs,
        pass_rate: PassRate { passes, runs: study.runs, rate: passes as f64 / study.runs as f64 },
        total_violations: reports.iter().map(|r| r.violations).sum(),
        worst_min_ratio: reports.iter().map(|r| r.min_ratio).fold(f64::INFINITY, f64::min),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JlStudyReport {
    pub m: usize,
    pub points: usize,
    pub epsilon: f64,
    pub pass_rate: PassRate,
    pub worst_distortion: f64,
}

/// Distance preservation on `T = {G(z_i)}` with `points` latents drawn
/// uniformly from `B_2^k(radius)`; `m` defaults to `⌈8 log|T|/ε²⌉`.
#[allow(clippy::too_many_arguments)]
pub fn jl_study(
    net: &GeneratorNetwork,
    points: usize,
    radius: f64,
    epsilon: f64,
    m: Option<usize>,
    runs: usize,
    nu: f64,
    seed: u64,
) -> Result<JlStudyReport, TheoryError> {
    if runs == 0 || points < 2 || !(epsilon > 0.0) {
        return Err(TheoryError::Invalid("need runs >= 1, at least two points and ε > 0".into()));
    }
    let mut rng = stream_rng(seed, Stream::Latent, &[]);
    let set: Vec<Array1<f64>> = (0..points)
        .map(|_| net.forward(uniform_in_ball(&mut rng, net.latent_dim(), radius).view()))
        .collect::<Result<_, _>>()?;
    let m = m.unwrap_or_else(|| jl_measurements(points, epsilon));
    let cov = protocol_covariance(net.output_dim(), nu);
    let reports: Vec<JlReport> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let s = crate::rng::derive_seed(seed, &[i as u64]);
            check_jl(&sample_ensemble(m, cov.clone(), 0.0, 1.0, s)?, &set, epsilon)
        })
        .collect::<Result<_, _>>()?;
    let passes = reports.iter().filter(|r| r.pass).count();
    Ok(JlStudyReport {
        m,
        points,
        epsilon,
        pass_rate: PassRate { passes, runs, rate: passes as f64 / runs as f64 },
        worst_distortion: reports.iter().map(|r| r.max_distortion).fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationStudyReport {
    pub n: usize,
    pub m: usize,
    pub constant: f64,
    /// runs with `||AᵀA/m - Σ||_max <= constant * sqrt(log n / m)`
    pub linf_cov: PassRate,
    /// runs with `||AᵀA/m - Σ||_2 <= constant * (sqrt(n/m) + n/m) ||Σ||_2`
    pub spec_cov: PassRate,
    pub mean_linf_cov: f64,
    pub mean_spec_cov: f64,
    pub mean_linf_grad: f64,
    pub linf_rate: f64,
    pub spec_rate: f64,
}

/// Concentration of the sample covariance and of `Aᵀy/m` for a fixed
/// unit-`Σ`-norm signal, over `runs` independent ensembles.
#[allow(clippy::too_many_arguments)]
pub fn concentration_study(
    n: usize,
    m: usize,
    runs: usize,
    constant: f64,
    nu: f64,
    sigma: f64,
    q: f64,
    seed: u64,
) -> Result<ConcentrationStudyReport, TheoryError> {
    if runs == 0 || n == 0 || m == 0 {
        return Err(TheoryError::Invalid("n, m and runs must be positive".into()));
    }
    let cov = protocol_covariance(n, nu);
    let x = {
        let v = Array1::from_elem(n, 1.0);
        let s = sigma_norm(&cov, v.view())?;
        v / s
    };
    let reports: Vec<ConcentrationReport> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let s = crate::rng::derive_seed(seed, &[i as u64]);
            let ens = sample_ensemble(m, cov.clone(), sigma, q, s)?;
            let obs = ens.observe(x.view(), s)?;
            concentration_diagnostics(&ens, &obs)
        })
        .collect::<Result<_, _>>()?;
    let rate = |passes: usize| PassRate { passes, runs, rate: passes as f64 / runs as f64 };
    let first = &reports[0];
    let mean = |f: &dyn Fn(&ConcentrationReport) -> f64| stable_mean(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(ConcentrationStudyReport {
        n,
        m,
        constant,
        linf_cov: rate(reports.iter().filter(|r| r.linf_cov <= constant * r.linf_rate).count()),
        spec_cov: rate(reports.iter().filter(|r| r.spec_cov <= constant * r.spec_rate).count()),
        mean_linf_cov: mean(&|r| r.linf_cov),
        mean_spec_cov: mean(&|r| r.spec_cov),
        mean_linf_grad: mean(&|r| r.linf_grad),
        linf_rate: first.linf_rate,
        spec_rate: first.spec_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn one_dimensional_net() {
        let net = build_eps_net(1, 1.0, 0.5).unwrap();
        assert!(net.len() <= 9);
        // brute-force covering check on a fine grid of [-1, 1]
        for i in 0..=2000 {
            let t = -1.0 + i as f64 / 1000.0;
            assert!(net.nearest_distance(array![t].view()) <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn lattice_nets_cover_and_stay_in_ball() {
        for (k, r, eps) in [(2, 1.0, 0.3), (3, 2.0, 0.7), (5, 1.0, 0.5)] {
            let net = build_eps_net(k, r, eps).unwrap();
            assert!(net.points.iter().all(|p| p.dot(p).sqrt() <= r + 1e-12));
            assert!(net.max_cover_distance(2000, 3) <= eps);
            let bound = (4.0 * r / eps).powi(k as i32);
            assert!((net.len() as f64) <= bound * 4f64.powi(k as i32));
        }
    }

    #[test]
    fn coarse_epsilon_gives_origin() {
        let net = build_eps_net(4, 1.0, 1.5).unwrap();
        assert_eq!(net.len(), 1);
    }

    #[test]
    fn capacity_error_for_large_k() {
        assert!(matches!(build_eps_net(12, 1.0, 0.1), Err(TheoryError::Capacity { .. })));
        assert!(build_eps_net(0, 1.0, 0.1).is_err());
    }

    #[test]
    fn random_net_is_certified() {
        let (net, certified) = build_random_eps_net(3, 1.0, 0.5, 500, 2000, 4).unwrap();
        assert_eq!(net.method, NetMethod::Random);
        assert!(certified <= 0.5 + 0.1);
    }

    #[test]
    fn mean_width_of_single_and_symmetric_directions() {
        let (single, se) = mean_width_of_directions(&[array![1.0, 0.0]], 20000, 1);
        assert!(single.abs() <= 3.0 * se + 1e-12);
        let (two, se) = mean_width_of_directions(&[array![1.0, 0.0], array![-1.0, 0.0]], 20000, 1);
        assert!((two - (2.0 / std::f64::consts::PI).sqrt()).abs() <= 3.0 * se);
    }

    #[test]
    fn interior_points_do_not_change_width() {
        let extremes = vec![array![1.0, 0.0], array![-1.0, 0.0], array![0.0, 1.0]];
        let mut with_interior = extremes.clone();
        with_interior.push(array![0.1, 0.2]);
        with_interior.push(array![-0.3, 0.1]);
        let a = mean_width_of_directions(&extremes, 5000, 2).0;
        let b = mean_width_of_directions(&with_interior, 5000, 2).0;
        assert_eq!(a, b);
    }

    #[test]
    fn expected_correlation_reduces_to_c_sigma_x() {
        let ens = sample_ensemble(5, CovarianceSpec::toeplitz(3, 0.3), 0.1, 0.97, 1).unwrap();
        let x = array![1.0, 0.5, -0.2];
        let x = &x / sigma_norm(&ens.cov, x.view()).unwrap();
        let e = expected_correlation(&ens, x.view()).unwrap();
        let want = ens.cov.matrix().dot(&x) * scaling_constant(0.1, 0.97);
        for (a, b) in e.iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn concentration_is_finite_for_one_row() {
        let ens = sample_ensemble(1, CovarianceSpec::identity(4), 0.1, 0.9, 1).unwrap();
        let obs = ens.observe(array![0.5, 0.5, 0.5, 0.5].view(), 2).unwrap();
        let rep = concentration_diagnostics(&ens, &obs).unwrap();
        assert!(rep.linf_cov.is_finite() && rep.spec_cov.is_finite() && rep.linf_grad.is_finite());
        assert!(rep.spec_cov >= rep.linf_cov);
    }

    #[test]
    fn jl_skips_repeated_points() {
        let ens = sample_ensemble(200, CovarianceSpec::identity(3), 0.0, 1.0, 1).unwrap();
        let pts = vec![array![1.0, 0.0, 0.0], array![1.0, 0.0, 0.0], array![0.0, 1.0, 0.0]];
        let rep = check_jl(&ens, &pts, 0.5).unwrap();
        assert_eq!(rep.pairs, 2);
        assert!(check_jl(&ens, &pts[..1], 0.5).is_err());
    }

    #[test]
    fn gamma_and_measurement_helpers() {
        let ens = sample_ensemble(3, CovarianceSpec::identity(4), 0.0, 1.0, 0).unwrap();
        assert!((srec_gamma(&ens) - 0.5).abs() < 1e-15);
        let t = sample_ensemble(3, CovarianceSpec::explicit(Array2::eye(2) * 4.0), 0.0, 1.0, 0).unwrap();
        assert!((srec_gamma(&t) - 1.0).abs() < 1e-9);
        assert_eq!(srec_measurements(5, std::f64::consts::E, 1.0), 25);
        assert_eq!(jl_measurements(100, 0.5), 148);
    }
}
