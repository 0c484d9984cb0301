//! Signal decoders for one-bit observations.
//!
//! * [`ls_decode`]: least squares over the latent code of a generator,
//!   `min_z (1/2m) ||y - A G(z)||² (+ λ ||z||²)`, optionally constrained to a
//!   latent ball, solved by gradient descent with random restarts.
//! * [`biht_decode`]: binary iterative hard thresholding for s-sparse signals.
//! * [`pv_convex_decode`]: the convex decoder maximizing `<y, Ax>/m` over the
//!   intersection of an l1 ball and the unit l2 ball.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{GeneratorError, GeneratorNetwork};
use crate::measurement::{scaling_constant, sign, BinaryObservation, MeasurementEnsemble};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid decoder configuration: {0}")]
    Config(String),
    #[error("non-finite loss in restart {restart} at step {step}")]
    Diverged { restart: usize, step: usize },
    #[error("estimate has zero norm; cosine similarity is undefined")]
    ZeroNorm,
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LsMode {
    /// `||z|| <= radius`, enforced by radial projection after every step
    Constrained { radius: f64 },
    /// penalty `λ ||z||²`
    Lagrangian { lambda: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `0.1 / L̂²` with `L̂` the generator's Lipschitz bound
    Auto,
    Fixed(f64),
    /// Armijo backtracking on the projected step, starting from `initial`
    /// and growing by 2 after every accepted step.
    Backtracking { initial: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsDecoderConfig {
    pub mode: LsMode,
    pub restarts: usize,
    pub steps_per_restart: usize,
    pub step: StepRule,
    pub seed: u64,
    pub init_scale: f64,
}

impl Default for LsDecoderConfig {
    fn default() -> Self {
        Self {
            mode: LsMode::Lagrangian { lambda: 0.001 },
            restarts: 10,
            steps_per_restart: 1000,
            step: StepRule::Auto,
            seed: 0,
            init_scale: 1.0,
        }
    }
}

impl LsDecoderConfig {
    pub fn validate(&self) -> Result<(), DecoderError> {
        match self.mode {
            LsMode::Constrained { radius } if !(radius > 0.0) => {
                return Err(DecoderError::Config(format!("radius must be positive, got {radius}")))
            }
            LsMode::Lagrangian { lambda } if !(lambda >= 0.0) => {
                return Err(DecoderError::Config(format!("λ must be nonnegative, got {lambda}")))
            }
            _ => {}
        }
        if self.restarts == 0 || self.steps_per_restart == 0 {
            return Err(DecoderError::Config("restarts and steps_per_restart must be at least 1".into()));
        }
        let step_ok = match self.step {
            StepRule::Auto => true,
            StepRule::Fixed(s) => s > 0.0 && s.is_finite(),
            StepRule::Backtracking { initial } => initial > 0.0 && initial.is_finite(),
        };
        if !step_ok {
            return Err(DecoderError::Config("step size must be positive and finite".into()));
        }
        if !(self.init_scale > 0.0) {
            return Err(DecoderError::Config("init_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderResult {
    pub z_hat: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub objective: f64,
    pub loss_trace: Vec<f64>,
    pub restart_index: usize,
    pub iterations: usize,
    /// Wall-clock seconds, recorded only on request so that results stay reproducible.
    pub wall_time: Option<f64>,
}

/// Sufficient statistics of the quadratic loss: `AᵀA/m`, `Aᵀy/m`, `||y||²/2m`.
struct Quadratic {
    gram: Array2<f64>,
    aty: Array1<f64>,
    yy: f64,
}

impl Quadratic {
    fn new(ens: &MeasurementEnsemble, y: ArrayView1<'_, f64>) -> Self {
        let m = ens.m() as f64;
        Self {
            gram: ens.a.t().dot(&ens.a) / m,
            aty: ens.a.t().dot(&y) / m,
            yy: y.dot(&y) / (2.0 * m),
        }
    }

    /// `(loss, ∇_x loss)` at `x`
    fn eval(&self, x: &Array1<f64>) -> (f64, Array1<f64>) {
        let gx = self.gram.dot(x);
        let loss = self.yy - self.aty.dot(x) + 0.5 * x.dot(&gx);
        (loss, gx - &self.aty)
    }
}

fn check_shapes(
    obs: &BinaryObservation,
    ens: &MeasurementEnsemble,
    n_expected: Option<usize>,
) -> Result<(), DecoderError> {
    if obs.y.len() != ens.m() {
        return Err(DecoderError::Shape(format!("y has {} entries but A has {} rows", obs.y.len(), ens.m())));
    }
    if let Some(n) = n_expected {
        if n != ens.n() {
            return Err(DecoderError::Shape(format!("generator output {n} but A has {} columns", ens.n())));
        }
    }
    Ok(())
}

fn project_ball(z: &mut Array1<f64>, radius: f64) {
    let norm = z.dot(z).sqrt();
    if norm > radius {
        *z *= radius / norm;
    }
}

/// The decoder objective evaluated directly from `y` and `A`.
pub fn ls_objective(
    obs: &BinaryObservation,
    ens: &MeasurementEnsemble,
    net: &GeneratorNetwork,
    mode: LsMode,
    z: ArrayView1<'_, f64>,
) -> Result<f64, DecoderError> {
    check_shapes(obs, ens, Some(net.output_dim()))?;
    let x = net.forward(z)?;
    let r = &obs.y - &ens.a.dot(&x);
    let mut f = r.dot(&r) / (2.0 * ens.m() as f64);
    if let LsMode::Lagrangian { lambda } = mode {
        f += lambda * z.dot(&z);
    }
    Ok(f)
}

struct Trajectory {
    z: Array1<f64>,
    trace: Vec<f64>,
}

struct Problem<'a> {
    net: &'a GeneratorNetwork,
    quad: Quadratic,
    mode: LsMode,
}

impl Problem<'_> {
    fn lambda(&self) -> f64 {
        match self.mode {
            LsMode::Lagrangian { lambda } => lambda,
            LsMode::Constrained { .. } => 0.0,
        }
    }

    fn loss(&self, z: &Array1<f64>) -> Result<f64, DecoderError> {
        let x = self.net.forward(z.view())?;
        Ok(self.quad.eval(&x).0 + self.lambda() * z.dot(z))
    }

    fn loss_and_grad(&self, z: &Array1<f64>) -> Result<(f64, Array1<f64>), DecoderError> {
        let tape = self.net.forward_tape(z.view())?;
        let (loss, gx) = self.quad.eval(tape.output());
        let mut g = self.net.vjp(&tape, gx.view())?;
        let lambda = self.lambda();
        if lambda != 0.0 {
            g.scaled_add(2.0 * lambda, z);
        }
        Ok((loss + lambda * z.dot(z), g))
    }

    fn project(&self, z: &mut Array1<f64>) {
        if let LsMode::Constrained { radius } = self.mode {
            project_ball(z, radius);
        }
    }

    fn run(&self, restart: usize, mut z: Array1<f64>, steps: usize, rule: StepRule, auto: f64) -> Result<Trajectory, DecoderError> {
        self.project(&mut z);
        let mut trace = Vec::with_capacity(steps + 1);
        let (mut f, mut g) = self.loss_and_grad(&z)?;
        if !f.is_finite() {
            return Err(DecoderError::Diverged { restart, step: 0 });
        }
        trace.push(f);
        let mut t = match rule {
            StepRule::Auto => auto,
            StepRule::Fixed(s) => s,
            StepRule::Backtracking { initial } => initial,
        };
        for step in 1..=steps {
            let next = match rule {
                StepRule::Backtracking { .. } => {
                    let mut accepted = None;
                    // at most 60 halvings; beyond that the step is below rounding
                    for _ in 0..60 {
                        let mut cand = &z - &(&g * t);
                        self.project(&mut cand);
                        let d = &cand - &z;
                        let fc = self.loss(&cand)?;
                        if fc.is_finite() && fc <= f + g.dot(&d) + d.dot(&d) / (2.0 * t) {
                            accepted = Some(cand);
                            break;
                        }
                        t *= 0.5;
                    }
                    let cand = accepted.unwrap_or_else(|| z.clone());
                    t *= 2.0;
                    cand
                }
                _ => {
                    let mut cand = &z - &(&g * t);
                    self.project(&mut cand);
                    cand
                }
            };
            z = next;
            let (fz, gz) = self.loss_and_grad(&z)?;
            if !fz.is_finite() || gz.iter().any(|v| !v.is_finite()) {
                return Err(DecoderError::Diverged { restart, step });
            }
            f = fz;
            g = gz;
            trace.push(f);
        }
        Ok(Trajectory { z, trace })
    }
}

/// Least-squares latent decoding with random restarts.
///
/// Restart `r` starts from `z₀ ~ N(0, init_scale² I)` drawn from its own
/// stream of `cfg.seed`; restarts run in parallel and the endpoint with the
/// smallest objective wins, ties going to the lowest restart index.
pub fn ls_decode(
    obs: &BinaryObservation,
    ens: &MeasurementEnsemble,
    net: &GeneratorNetwork,
    cfg: &LsDecoderConfig,
) -> Result<DecoderResult, DecoderError> {
    ls_decode_inner(obs, ens, net, cfg, false)
}

/// As [`ls_decode`], additionally recording wall time.
pub fn ls_decode_timed(
    obs: &BinaryObservation,
    ens: &MeasurementEnsemble,
    net: &GeneratorNetwork,
    cfg: &LsDecoderConfig,
) -> Result<DecoderResult, DecoderError> {
    ls_decode_inner(obs, ens, net, cfg, true)
}

fn ls_decode_inner(
    obs: &BinaryObservation,
    ens: &MeasurementEnsemble,
    net: &GeneratorNetwork,
    cfg: &LsDecoderConfig,
    timed: bool,
) -> Result<DecoderResult, DecoderError> {
    cfg.validate()?;
    check_shapes(obs, ens, Some(net.output_dim()))?;
    let start = Instant::now();
    let problem = Problem { net, quad: Quadratic::new(ens, obs.y.view()), mode: cfg.mode };
    let lhat = net.lipschitz_bound();
    let auto = if lhat > 0.0 { 0.1 / (lhat * lhat) } else { 0.1 };
    let k = net.latent_dim();

    let runs: Vec<Result<Trajectory, DecoderError>> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(cfg.seed, Stream::Restart, &[r as u64]);
            let z0 = Array1::from_shape_simple_fn(k, || {
                let g: f64 = StandardNormal.sample(&mut rng);
                cfg.init_scale * g
            });
            problem.run(r, z0, cfg.steps_per_restart, cfg.step, auto)
        })
        .collect();

    let mut best: Option<(usize, Trajectory)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let traj = run?;
        let end = *traj.trace.last().unwrap();
        let better = match &best {
            None => true,
            Some((_, b)) => end < *b.trace.last().unwrap(),
        };
        if better {
            best = Some((r, traj));
        }
    }
    let (restart_index, traj) = best.expect("at least one restart");
    let x_hat = net.forward(traj.z.view())?;
    let objective = ls_objective(obs, ens, net, cfg.mode, traj.z.view())?;
    Ok(DecoderResult {
        z_hat: traj.z.to_vec(),
        x_hat: x_hat.to_vec(),
        objective,
        iterations: traj.trace.len() - 1,
        loss_trace: traj.trace,
        restart_index,
        wall_time: timed.then(|| start.elapsed().as_secs_f64()),
    })
}

/// Indices of the `s` largest magnitudes; ties go to the lower index.
fn top_s(v: &Array1<f64>, s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    idx.truncate(s);
    idx
}

/// `H_s`: keeps the `s` largest-magnitude entries.
pub fn hard_threshold(v: &Array1<f64>, s: usize) -> Array1<f64> {
    let mut out = Array1::zeros(v.len());
    for i in top_s(v, s) {
        out[i] = v[i];
    }
    out
}

/// Binary iterative hard thresholding,
/// `x <- H_s(x + (step/m) Aᵀ(y - sign(Ax)))` followed by normalization.
///
/// Starts from the normalized `H_s(Aᵀy)`. The output is s-sparse with unit
/// l2 norm.
pub fn biht_decode(
    obs: &BinaryObservation,
    ens: &MeasurementEnsemble,
    s: usize,
    iters: usize,
    step: f64,
) -> Result<Array1<f64>, DecoderError> {
    check_shapes(obs, ens, None)?;
    let n = ens.n();
    if s == 0 || s > n {
        return Err(DecoderError::Config(format!("sparsity must lie in [1, {n}], got {s}")));
    }
    let m = ens.m() as f64;
    let normalize = |v: Array1<f64>, fallback: &Array1<f64>| {
        let norm = v.dot(&v).sqrt();
        if norm > 0.0 && norm.is_finite() {
            v / norm
        } else {
            fallback.clone()
        }
    };
    let mut e1 = Array1::zeros(n);
    e1[0] = 1.0;
    let mut x = normalize(hard_threshold(&ens.a.t().dot(&obs.y), s), &e1);
    for _ in 0..iters {
        let ax = ens.a.dot(&x);
        let resid = Array1::from_shape_fn(ax.len(), |i| obs.y[i] - sign(ax[i]));
        let mut v = x.clone();
        v.scaled_add(step / m, &ens.a.t().dot(&resid));
        x = normalize(hard_threshold(&v, s), &x);
    }
    Ok(x)
}

/// Euclidean projection onto `{x : ||x||_1 <= radius}` (sort-based).
pub fn project_l1_ball(v: &Array1<f64>, radius: f64) -> Array1<f64> {
    let l1: f64 = v.iter().map(|a| a.abs()).sum();
    if l1 <= radius {
        return v.clone();
    }
    let mut u: Vec<f64> = v.iter().map(|a| a.abs()).collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - radius) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    v.mapv(|a| a.signum() * (a.abs() - theta).max(0.0))
}

/// Projected ascent on `<y, Ax>/m` over `{||x||_1 <= s_ell1, ||x||_2 <= 1}`.
///
/// Each step alternates l1-ball and unit-ball projections (l1 first) until
/// both hold within 1e-9, at most 100 rounds; the final radial rescale keeps
/// both constraints, so the output is always feasible.
pub fn pv_convex_decode(
    obs: &BinaryObservation,
    ens: &MeasurementEnsemble,
    s_ell1: f64,
    iters: usize,
    step: f64,
) -> Result<Array1<f64>, DecoderError> {
    check_shapes(obs, ens, None)?;
    if !(s_ell1 > 0.0) {
        return Err(DecoderError::Config(format!("l1 radius must be positive, got {s_ell1}")));
    }
    let aty = ens.a.t().dot(&obs.y) / ens.m() as f64;
    let mut x = Array1::<f64>::zeros(ens.n());
    for _ in 0..iters {
        let mut v = &x + &(&aty * step);
        for _ in 0..100 {
            v = project_l1_ball(&v, s_ell1);
            project_ball(&mut v, 1.0);
            let l1: f64 = v.iter().map(|a| a.abs()).sum();
            if l1 <= s_ell1 + 1e-9 && v.dot(&v).sqrt() <= 1.0 + 1e-9 {
                break;
            }
        }
        x = v;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationError {
    /// `||x̂ - c x*||_2`
    pub l2_err: f64,
    pub cosine: f64,
    /// `l2_err / sqrt(n)`
    pub per_pixel: f64,
    /// `||x̂/||x̂|| - x*/||x*|| ||_2 / sqrt(n)`
    pub normalized_per_pixel: f64,
}

pub fn estimation_error(
    x_hat: ArrayView1<'_, f64>,
    x_star: ArrayView1<'_, f64>,
    sigma: f64,
    q: f64,
) -> Result<EstimationError, DecoderError> {
    if x_hat.len() != x_star.len() {
        return Err(DecoderError::Shape(format!("x̂ has {} entries, x* has {}", x_hat.len(), x_star.len())));
    }
    let c = scaling_constant(sigma, q);
    let l2_err = (&x_hat - &(&x_star * c)).dot(&(&x_hat - &(&x_star * c))).sqrt();
    let nh = x_hat.dot(&x_hat).sqrt();
    let ns = x_star.dot(&x_star).sqrt();
    if nh == 0.0 || ns == 0.0 {
        return Err(DecoderError::ZeroNorm);
    }
    let cosine = (x_hat.dot(&x_star) / (nh * ns)).clamp(-1.0, 1.0);
    let dir = &x_hat / nh - &x_star / ns;
    let rn = (x_hat.len() as f64).sqrt();
    Ok(EstimationError {
        l2_err,
        cosine,
        per_pixel: l2_err / rn,
        normalized_per_pixel: dir.dot(&dir).sqrt() / rn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{Activation, Layer};
    use crate::measurement::{sample_ensemble, CovarianceSpec, Truth};
    use ndarray::array;

    fn identity_net(n: usize) -> GeneratorNetwork {
        GeneratorNetwork::new(vec![Layer::new(Array2::eye(n), Array1::zeros(n))], Activation::Identity).unwrap()
    }

    fn raw_obs(y: Array1<f64>, x_star: Array1<f64>) -> BinaryObservation {
        let m = y.len();
        BinaryObservation { y, truth: Truth { x_star, eta: Array1::ones(m), eps: Array1::zeros(m) } }
    }

    #[test]
    fn hard_threshold_ties_prefer_low_index() {
        let v = array![1.0, -2.0, 2.0, 0.5];
        assert_eq!(hard_threshold(&v, 1), array![0.0, -2.0, 0.0, 0.0]);
        assert_eq!(hard_threshold(&v, 4), v);
    }

    #[test]
    fn l1_projection_matches_closed_form() {
        // (3, 1) onto the unit l1 ball: soft threshold at 1 gives (1, 0)
        assert_eq!(project_l1_ball(&array![3.0, 1.0], 1.0), array![1.0, 0.0]);
        let p = project_l1_ball(&array![0.5, -0.5, 0.5], 1.0);
        for v in p.iter() {
            assert!((v.abs() - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(project_l1_ball(&array![0.2, 0.1], 1.0), array![0.2, 0.1]);
    }

    #[test]
    fn estimation_error_cases() {
        let x = array![0.6, 0.8];
        let c = scaling_constant(0.1, 0.97);
        let e = estimation_error((&x * c).view(), x.view(), 0.1, 0.97).unwrap();
        assert!(e.l2_err < 1e-15 && (e.cosine - 1.0).abs() < 1e-15);
        let e = estimation_error((-&x).view(), x.view(), 0.0, 1.0).unwrap();
        assert_eq!(e.cosine, -1.0);
        let e = estimation_error(x.view(), x.view(), 0.1, 0.97).unwrap();
        assert!((e.l2_err - (1.0 - c)).abs() < 1e-15);
        assert!((e.l2_err - 0.253_710_677_196_378_5).abs() < 1e-14);
        assert!(matches!(
            estimation_error(Array1::zeros(2).view(), x.view(), 0.0, 1.0),
            Err(DecoderError::ZeroNorm)
        ));
    }

    #[test]
    fn default_config_is_the_experiment_protocol() {
        let cfg = LsDecoderConfig::default();
        assert_eq!(cfg.mode, LsMode::Lagrangian { lambda: 0.001 });
        assert_eq!((cfg.restarts, cfg.steps_per_restart), (10, 1000));
        assert_eq!(cfg.init_scale, 1.0);
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            LsDecoderConfig { restarts: 0, ..Default::default() },
            LsDecoderConfig { mode: LsMode::Constrained { radius: 0.0 }, ..Default::default() },
            LsDecoderConfig { mode: LsMode::Lagrangian { lambda: -1.0 }, ..Default::default() },
            LsDecoderConfig { step: StepRule::Fixed(f64::NAN), ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn divergence_names_restart_and_step() {
        let ens = sample_ensemble(40, CovarianceSpec::identity(4), 0.0, 1.0, 1).unwrap();
        let obs = ens.observe(array![1.0, 0.0, 0.0, 0.0].view(), 2).unwrap();
        let cfg = LsDecoderConfig { step: StepRule::Fixed(1e200), restarts: 2, steps_per_restart: 20, ..Default::default() };
        match ls_decode(&obs, &ens, &identity_net(4), &cfg) {
            Err(DecoderError::Diverged { restart: 0, step }) => assert!(step >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn fits_its_own_forward_model() {
        let ens = sample_ensemble(60, CovarianceSpec::identity(6), 0.0, 1.0, 3).unwrap();
        let net = identity_net(6);
        let z0 = array![0.3, -0.2, 0.1, 0.5, 0.0, -0.4];
        let y = ens.a.dot(&z0);
        let obs = raw_obs(y, z0.clone());
        let cfg = LsDecoderConfig {
            mode: LsMode::Lagrangian { lambda: 0.0 },
            restarts: 2,
            steps_per_restart: 300,
            step: StepRule::Backtracking { initial: 1.0 },
            ..Default::default()
        };
        let res = ls_decode(&obs, &ens, &net, &cfg).unwrap();
        assert!(res.objective <= 1e-6);
        let diff = Array1::from(res.x_hat.clone()) - &z0;
        assert!(diff.dot(&diff).sqrt() < 1e-3);
    }

    #[test]
    fn result_matches_direct_recomputation() {
        let ens = sample_ensemble(30, CovarianceSpec::toeplitz(5, 0.3), 0.1, 0.9, 5).unwrap();
        let obs = ens.observe(array![0.2, 0.1, -0.3, 0.4, 0.0].view(), 6).unwrap();
        let net = identity_net(5);
        let cfg = LsDecoderConfig { restarts: 3, steps_per_restart: 50, ..Default::default() };
        let res = ls_decode(&obs, &ens, &net, &cfg).unwrap();
        let z = Array1::from(res.z_hat.clone());
        assert_eq!(net.forward(z.view()).unwrap().to_vec(), res.x_hat);
        let direct = ls_objective(&obs, &ens, &net, cfg.mode, z.view()).unwrap();
        assert!((direct - res.objective).abs() < 1e-10);
        assert!((res.loss_trace.last().unwrap() - res.objective).abs() < 1e-10);
        assert_eq!(res.loss_trace.len(), 51);
        assert_eq!(ls_decode(&obs, &ens, &net, &cfg).unwrap(), res);
    }

    #[test]
    fn constrained_mode_stays_in_ball() {
        let ens = sample_ensemble(30, CovarianceSpec::identity(3), 0.0, 1.0, 5).unwrap();
        let obs = ens.observe(array![3.0, 1.0, 0.0].view(), 6).unwrap();
        let cfg = LsDecoderConfig {
            mode: LsMode::Constrained { radius: 0.25 },
            restarts: 2,
            steps_per_restart: 100,
            step: StepRule::Fixed(0.1),
            ..Default::default()
        };
        let res = ls_decode(&obs, &ens, &identity_net(3), &cfg).unwrap();
        let z = Array1::from(res.z_hat);
        assert!(z.dot(&z).sqrt() <= 0.25 + 1e-15);
    }

    #[test]
    fn biht_contracts() {
        let ens = sample_ensemble(80, CovarianceSpec::identity(10), 0.1, 0.9, 2).unwrap();
        let obs = ens.observe(Array1::from_shape_fn(10, |i| i as f64 - 4.5).view(), 1).unwrap();
        for s in [1, 3, 10] {
            let x = biht_decode(&obs, &ens, s, 30, 1.0).unwrap();
            assert!(x.iter().filter(|v| **v != 0.0).count() <= s);
            assert!((x.dot(&x).sqrt() - 1.0).abs() < 1e-12);
        }
        assert!(biht_decode(&obs, &ens, 0, 5, 1.0).is_err());
        assert!(biht_decode(&obs, &ens, 11, 5, 1.0).is_err());
    }

    #[test]
    fn pv_feasible_and_ascending() {
        let ens = sample_ensemble(80, CovarianceSpec::toeplitz(10, 0.3), 0.1, 0.9, 2).unwrap();
        let obs = ens.observe(Array1::from_shape_fn(10, |i| (i as f64).sin()).view(), 1).unwrap();
        for s in [0.5, 1.0, 3.0] {
            let x = pv_convex_decode(&obs, &ens, s, 50, 1.0).unwrap();
            assert!(x.iter().map(|v| v.abs()).sum::<f64>() <= s + 1e-8);
            assert!(x.dot(&x).sqrt() <= 1.0 + 1e-8);
            let obj = ens.a.dot(&x).dot(&obs.y) / ens.m() as f64;
            assert!(obj >= 0.0);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let ens = sample_ensemble(10, CovarianceSpec::identity(3), 0.0, 1.0, 0).unwrap();
        let obs = raw_obs(Array1::ones(9), Array1::zeros(3));
        assert!(matches!(biht_decode(&obs, &ens, 1, 1, 1.0), Err(DecoderError::Shape(_))));
        let obs = raw_obs(Array1::ones(10), Array1::zeros(3));
        assert!(matches!(
            ls_decode(&obs, &ens, &identity_net(4), &LsDecoderConfig::default()),
            Err(DecoderError::Shape(_))
        ));
    }
}
