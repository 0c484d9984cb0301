//! Seeded experiment sweeps.
//!
//! A sweep is an [`ExperimentGrid`] read from a flat TOML file. Each cell
//! `(m, trial)` gets its own seed `derive_seed(base_seed, [m, trial])`, from
//! which the ensemble, the latent truth, the noise and the decoder restarts
//! are drawn. Cells run in parallel and the rows are sorted by
//! `(m, decoder, trial)` before writing, so the CSV depends only on the
//! configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array1;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoders::{
    biht_decode, estimation_error, ls_decode, ls_decode_timed, pv_convex_decode, DecoderError, LsDecoderConfig,
    LsMode, StepRule,
};
use crate::generator::{synth_generator, GeneratorError, GeneratorNetwork, SynthSpec};
use crate::linalg::median;
use crate::measurement::{sample_ensemble, sigma_norm, CovarianceSpec, MeasurementError};
use crate::rng::{derive_seed, stream_rng, Stream};

pub const CSV_HEADER: &str = "m,decoder,trial,seed,l2_err,cosine,per_pixel,runtime_s,converged";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("grids do not match: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    Biht,
    Ls,
    Pv,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Biht => "biht",
            DecoderKind::Ls => "ls",
            DecoderKind::Pv => "pv",
        }
    }
}

impl FromStr for DecoderKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ls" => Ok(DecoderKind::Ls),
            "biht" => Ok(DecoderKind::Biht),
            "pv" => Ok(DecoderKind::Pv),
            other => Err(HarnessError::Config(format!("unknown decoder `{other}`"))),
        }
    }
}

/// Parses `auto`, `backtracking`, `backtracking:<initial>` or a fixed step.
pub fn parse_step_rule(s: &str) -> Result<StepRule, HarnessError> {
    let s = s.trim();
    if s == "auto" {
        return Ok(StepRule::Auto);
    }
    if s == "backtracking" {
        return Ok(StepRule::Backtracking { initial: 1.0 });
    }
    if let Some(rest) = s.strip_prefix("backtracking:") {
        let initial = rest.parse().map_err(|_| HarnessError::Config(format!("bad step rule `{s}`")))?;
        return Ok(StepRule::Backtracking { initial });
    }
    s.parse().map(StepRule::Fixed).map_err(|_| HarnessError::Config(format!("bad step rule `{s}`")))
}

fn default_k() -> usize {
    5
}
fn default_n() -> usize {
    100
}
fn default_hidden() -> Vec<usize> {
    vec![50]
}
fn default_m_values() -> Vec<usize> {
    vec![50, 100, 150, 200, 250, 300]
}
fn default_sigma() -> f64 {
    0.1
}
fn default_q() -> f64 {
    0.97
}
fn default_nu() -> f64 {
    0.3
}
fn default_trials() -> usize {
    10
}
fn default_decoders() -> Vec<DecoderKind> {
    vec![DecoderKind::Ls, DecoderKind::Biht, DecoderKind::Pv]
}
fn default_restarts() -> usize {
    10
}
fn default_steps() -> usize {
    1000
}
fn default_lambda() -> f64 {
    0.001
}
fn default_step() -> String {
    "auto".into()
}
fn default_biht_iters() -> usize {
    300
}
fn default_one() -> f64 {
    1.0
}
fn default_pv_iters() -> usize {
    200
}

/// A sweep over `m`, read from flat `key = value` TOML.
///
/// | key | default | meaning |
/// |---|---|---|
/// | `generator` | unset | path of a saved generator; otherwise one is synthesized |
/// | `k`, `n`, `hidden`, `generator_seed` | 5, 100, [50], 0 | synthetic generator shape and seed |
/// | `m_values` | [50 .. 300 by 50] | measurement counts |
/// | `sigma`, `q`, `nu` | 0.1, 0.97, 0.3 | noise level, sign-keep probability, Toeplitz parameter |
/// | `trials` | 10 | trials per `m` |
/// | `decoders` | ["ls", "biht", "pv"] | decoders to run |
/// | `base_seed` | 0 | seed of the sweep |
/// | `output` | unset | CSV path used by the command line |
/// | `ls_restarts`, `ls_steps`, `ls_lambda`, `ls_step` | 10, 1000, 0.001, "auto" | LS decoder |
/// | `biht_sparsity`, `biht_iters`, `biht_step` | n, 300, 1.0 | BIHT |
/// | `pv_radius`, `pv_iters`, `pv_step` | √n, 200, 1.0 | l1/l2 constrained baseline |
/// | `timing` | false | record wall time in `runtime_s` |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentGrid {
    #[serde(default)]
    pub generator: Option<String>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub generator_seed: u64,
    #[serde(default = "default_m_values")]
    pub m_values: Vec<usize>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_decoders")]
    pub decoders: Vec<DecoderKind>,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default = "default_restarts")]
    pub ls_restarts: usize,
    #[serde(default = "default_steps")]
    pub ls_steps: usize,
    #[serde(default = "default_lambda")]
    pub ls_lambda: f64,
    #[serde(default = "default_step")]
    pub ls_step: String,
    #[serde(default)]
    pub biht_sparsity: Option<usize>,
    #[serde(default = "default_biht_iters")]
    pub biht_iters: usize,
    #[serde(default = "default_one")]
    pub biht_step: f64,
    #[serde(default)]
    pub pv_radius: Option<f64>,
    #[serde(default = "default_pv_iters")]
    pub pv_iters: usize,
    #[serde(default = "default_one")]
    pub pv_step: f64,
    #[serde(default)]
    pub timing: bool,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl ExperimentGrid {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let grid: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        grid.validate()?;
        Ok(grid)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("grid serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.into()));
        if self.m_values.is_empty() || self.m_values.contains(&0) {
            return bad("m_values must be nonempty and every m at least 1");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.decoders.is_empty() {
            return bad("decoders must be nonempty");
        }
        if self.generator.is_none() && (self.k == 0 || self.n == 0 || self.hidden.contains(&0)) {
            return bad("generator dimensions must be positive");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !(0.0..=1.0).contains(&self.q) {
            return bad("need σ >= 0 and q in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.nu.abs()) {
            return bad("ν must satisfy |ν| < 1");
        }
        if self.ls_restarts == 0 || self.ls_steps == 0 || !(self.ls_lambda >= 0.0) {
            return bad("LS needs restarts, steps >= 1 and λ >= 0");
        }
        parse_step_rule(&self.ls_step)?;
        if self.biht_step <= 0.0 || self.pv_step <= 0.0 || self.pv_radius.is_some_and(|r| r <= 0.0) {
            return bad("baseline steps and radii must be positive");
        }
        Ok(())
    }

    pub fn ls_config(&self, seed: u64) -> Result<LsDecoderConfig, HarnessError> {
        Ok(LsDecoderConfig {
            mode: LsMode::Lagrangian { lambda: self.ls_lambda },
            restarts: self.ls_restarts,
            steps_per_restart: self.ls_steps,
            step: parse_step_rule(&self.ls_step)?,
            seed,
            init_scale: 1.0,
        })
    }

    /// The generator named by the grid, loaded or synthesized.
    pub fn build_generator(&self) -> Result<GeneratorNetwork, HarnessError> {
        match &self.generator {
            Some(path) => Ok(GeneratorNetwork::load(path)?),
            None => Ok(synth_generator(&SynthSpec::new(self.k, self.n, self.hidden.clone(), self.generator_seed))?),
        }
    }

    pub fn cell_seed(&self, m: usize, trial: usize) -> u64 {
        derive_seed(self.base_seed, &[m as u64, trial as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub m: usize,
    pub decoder: DecoderKind,
    pub trial: usize,
    pub seed: u64,
    pub l2_err: f64,
    pub cosine: f64,
    pub per_pixel: f64,
    pub runtime_s: f64,
    pub converged: bool,
}

impl CellResult {
    /// `||x̂/||x̂|| - x*/||x*|| ||_2 = sqrt(2 - 2 cos)`.
    pub fn direction_err(&self) -> f64 {
        (2.0 - 2.0 * self.cosine).max(0.0).sqrt()
    }
}

/// Latent truth for a cell: `z* ~ N(0, I_k)`, redrawn while `G(z*) = 0`,
/// rescaled so that `||G(z*)||_Σ = 1`. For a bias-free ReLU generator the
/// rescaled signal stays in the range of `G`.
pub fn draw_truth(
    net: &GeneratorNetwork,
    cov: &CovarianceSpec,
    seed: u64,
) -> Result<(Array1<f64>, Array1<f64>), HarnessError> {
    let mut rng = stream_rng(seed, Stream::Latent, &[]);
    for _ in 0..1000 {
        let z = Array1::from_shape_simple_fn(net.latent_dim(), || StandardNormal.sample(&mut rng));
        let x = net.forward(z.view())?;
        let norm = sigma_norm(cov, x.view())?;
        if norm > 0.0 && norm.is_finite() {
            return Ok((z / norm, x / norm));
        }
    }
    Err(HarnessError::Config("generator output vanishes on 1000 latent draws".into()))
}

fn run_cell(
    grid: &ExperimentGrid,
    net: &GeneratorNetwork,
    cov: &CovarianceSpec,
    m: usize,
    trial: usize,
) -> Result<Vec<CellResult>, HarnessError> {
    let seed = grid.cell_seed(m, trial);
    let ens = sample_ensemble(m, cov.clone(), grid.sigma, grid.q, seed)?;
    let (_, x_star) = draw_truth(net, cov, seed)?;
    let obs = ens.observe(x_star.view(), seed)?;
    let n = ens.n();
    let mut rows = Vec::with_capacity(grid.decoders.len());
    for &decoder in &grid.decoders {
        let start = std::time::Instant::now();
        let x_hat: Result<Array1<f64>, DecoderError> = match decoder {
            DecoderKind::Ls => {
                let cfg = grid.ls_config(seed)?;
                let res = if grid.timing { ls_decode_timed(&obs, &ens, net, &cfg) } else { ls_decode(&obs, &ens, net, &cfg) };
                res.map(|r| Array1::from(r.x_hat))
            }
            DecoderKind::Biht => {
                let s = grid.biht_sparsity.unwrap_or(n).clamp(1, n);
                biht_decode(&obs, &ens, s, grid.biht_iters, grid.biht_step)
            }
            DecoderKind::Pv => {
                let radius = grid.pv_radius.unwrap_or((n as f64).sqrt());
                pv_convex_decode(&obs, &ens, radius, grid.pv_iters, grid.pv_step)
            }
        };
        let runtime_s = if grid.timing { start.elapsed().as_secs_f64() } else { 0.0 };
        let (x_hat, converged) = match x_hat {
            Ok(x) if x.iter().all(|v| v.is_finite()) => (x, true),
            Ok(_) | Err(DecoderError::Diverged { .. }) => (Array1::zeros(n), false),
            Err(e) => return Err(e.into()),
        };
        let (l2_err, cosine, per_pixel) = match estimation_error(x_hat.view(), x_star.view(), grid.sigma, grid.q) {
            Ok(e) => (e.l2_err, e.cosine, e.per_pixel),
            Err(DecoderError::ZeroNorm) => {
                let c = crate::measurement::scaling_constant(grid.sigma, grid.q);
                let l2 = c.abs() * x_star.dot(&x_star).sqrt();
                (l2, 0.0, l2 / (n as f64).sqrt())
            }
            Err(e) => return Err(e.into()),
        };
        rows.push(CellResult { m, decoder, trial, seed, l2_err, cosine, per_pixel, runtime_s, converged });
    }
    Ok(rows)
}

/// Runs every `(m, trial)` cell and returns rows sorted by `(m, decoder, trial)`.
pub fn run_grid(grid: &ExperimentGrid) -> Result<Vec<CellResult>, HarnessError> {
    grid.validate()?;
    let net = grid.build_generator()?;
    let n = net.output_dim();
    let cov = CovarianceSpec::toeplitz(n, grid.nu);
    cov.validate()?;
    let cells: Vec<(usize, usize)> =
        grid.m_values.iter().flat_map(|&m| (0..grid.trials).map(move |t| (m, t))).collect();
    let nested: Vec<Vec<CellResult>> =
        cells.par_iter().map(|&(m, t)| run_cell(grid, &net, &cov, m, t)).collect::<Result<_, _>>()?;
    let mut rows: Vec<CellResult> = nested.into_iter().flatten().collect();
    rows.sort_by(|a, b| (a.m, a.decoder.name(), a.trial).cmp(&(b.m, b.decoder.name(), b.trial)));
    Ok(rows)
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn results_to_csv(rows: &[CellResult]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.m,
            r.decoder.name(),
            r.trial,
            r.seed,
            fmt_float(r.l2_err),
            fmt_float(r.cosine),
            fmt_float(r.per_pixel),
            fmt_float(r.runtime_s),
            r.converged
        ));
    }
    out
}

pub fn write_results(path: impl AsRef<Path>, rows: &[CellResult]) -> Result<(), HarnessError> {
    Ok(std::fs::write(path, results_to_csv(rows))?)
}

pub fn parse_results(text: &str) -> Result<Vec<CellResult>, HarnessError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(HarnessError::Config(format!("unexpected header `{}`", header.join(","))));
    }
    reader.deserialize().map(|r| r.map_err(HarnessError::from)).collect()
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<CellResult>, HarnessError> {
    parse_results(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub decoder: DecoderKind,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// `(m, median error)` pairs used in the fit
    pub points: Vec<(usize, f64)>,
}

/// Median `l2_err` per `m` over positive, finite errors of one decoder;
/// `m` values with fewer than three such trials are dropped.
pub fn median_by_m(rows: &[CellResult], decoder: DecoderKind) -> Vec<(usize, f64)> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.decoder == decoder) {
        if r.l2_err > 0.0 && r.l2_err.is_finite() {
            groups.entry(r.m).or_default().push(r.l2_err);
        }
    }
    groups.into_iter().filter(|(_, v)| v.len() >= 3).map(|(m, v)| (m, median(&v))).collect()
}

/// Least-squares line through `(log m, log median error)`.
pub fn fit_scaling(rows: &[CellResult], decoder: DecoderKind) -> Result<ScalingFit, HarnessError> {
    let points = median_by_m(rows, decoder);
    if points.len() < 3 {
        return Err(HarnessError::InsufficientData(format!(
            "{} usable m values for {}, need 3 with at least 3 trials each",
            points.len(),
            decoder.name()
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r2) = ols(&xs, &ys);
    Ok(ScalingFit { decoder, slope, intercept, r2, points })
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = rx.len() as f64;
    let m = (n + 1.0) / 2.0;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - m) * (b - m)).sum();
    let vx: f64 = rx.iter().map(|a| (a - m) * (a - m)).sum();
    let vy: f64 = ry.iter().map(|b| (b - m) * (b - m)).sum();
    cov / (vx * vy).sqrt()
}

/// Error used to compare runs with and without sign flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipMetric {
    /// `||x̂ - c x*||_2` with `c` taken at each run's own `q`
    L2,
    /// `||x̂/||x̂|| - x*/||x*|| ||_2`, insensitive to the scale of `x̂`
    Direction,
}

impl FlipMetric {
    fn of(self, r: &CellResult) -> f64 {
        match self {
            FlipMetric::L2 => r.l2_err,
            FlipMetric::Direction => r.direction_err(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipRow {
    pub m: usize,
    pub decoder: DecoderKind,
    pub median_noflip: f64,
    pub median_flip: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub metric: FlipMetric,
    pub rows: Vec<FlipRow>,
    /// fraction of `m` values where the LS ratio is at most the BIHT ratio
    pub ls_not_worse_fraction: Option<f64>,
    /// `ls_not_worse_fraction > 1/2`
    pub ls_more_robust: Option<bool>,
}

impl FlipReport {
    pub fn ratio(&self, m: usize, decoder: DecoderKind) -> Option<f64> {
        self.rows.iter().find(|r| r.m == m && r.decoder == decoder).map(|r| r.ratio)
    }
}

/// Median error ratio flip / no-flip per `(m, decoder)`. The two result
/// sets must cover the same `(m, decoder, trial)` cells.
pub fn flip_robustness_report(
    noflip: &[CellResult],
    flip: &[CellResult],
    metric: FlipMetric,
) -> Result<FlipReport, HarnessError> {
    let keys = |rows: &[CellResult]| -> BTreeSet<(usize, DecoderKind, usize)> {
        rows.iter().map(|r| (r.m, r.decoder, r.trial)).collect()
    };
    if keys(noflip) != keys(flip) || noflip.len() != flip.len() {
        return Err(HarnessError::Mismatch("the two runs cover different (m, decoder, trial) cells".into()));
    }
    let group = |rows: &[CellResult]| -> BTreeMap<(usize, DecoderKind), Vec<f64>> {
        let mut g: BTreeMap<(usize, DecoderKind), Vec<f64>> = BTreeMap::new();
        for r in rows {
            g.entry((r.m, r.decoder)).or_default().push(metric.of(r));
        }
        g
    };
    let (a, b) = (group(noflip), group(flip));
    let rows: Vec<FlipRow> = a
        .iter()
        .map(|(&(m, decoder), va)| {
            let median_noflip = median(va);
            let median_flip = median(&b[&(m, decoder)]);
            let ratio = if median_noflip == median_flip { 1.0 } else { median_flip / median_noflip };
            FlipRow { m, decoder, median_noflip, median_flip, ratio }
        })
        .collect();
    let ms: BTreeSet<usize> = rows.iter().map(|r| r.m).collect();
    let find = |m: usize, d: DecoderKind| rows.iter().find(|r| r.m == m && r.decoder == d).map(|r| r.ratio);
    let compared: Vec<bool> =
        ms.iter().filter_map(|&m| Some(find(m, DecoderKind::Ls)? <= find(m, DecoderKind::Biht)?)).collect();
    let ls_not_worse_fraction =
        (!compared.is_empty()).then(|| compared.iter().filter(|&&b| b).count() as f64 / compared.len() as f64);
    Ok(FlipReport { metric, rows, ls_not_worse_fraction, ls_more_robust: ls_not_worse_fraction.map(|f| f > 0.5) })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(m: usize, decoder: DecoderKind, trial: usize, l2: f64) -> CellResult {
        CellResult { m, decoder, trial, seed: 0, l2_err: l2, cosine: 0.5, per_pixel: l2 / 10.0, runtime_s: 0.0, converged: true }
    }

    fn small_grid() -> ExperimentGrid {
        ExperimentGrid::from_toml(
            "k = 2\nn = 12\nhidden = [6]\nm_values = [40, 80]\ntrials = 2\nls_restarts = 2\nls_steps = 60\nbiht_iters = 20\npv_iters = 20\nbase_seed = 3",
        )
        .unwrap()
    }

    #[test]
    fn defaults_follow_protocol() {
        let g = ExperimentGrid::default();
        assert_eq!((g.nu, g.sigma, g.q), (0.3, 0.1, 0.97));
        assert_eq!((g.ls_restarts, g.ls_steps, g.ls_lambda), (10, 1000, 0.001));
        assert_eq!(ExperimentGrid::from_toml(&g.to_toml()).unwrap(), g);
    }

    #[test]
    fn config_errors() {
        assert!(ExperimentGrid::from_toml("m_values = []").is_err());
        assert!(ExperimentGrid::from_toml("trials = 0").is_err());
        assert!(ExperimentGrid::from_toml("decoders = []").is_err());
        assert!(ExperimentGrid::from_toml("decoders = [\"lasso\"]").is_err());
        assert!(ExperimentGrid::from_toml("unknown_key = 1").is_err());
        assert!(ExperimentGrid::from_toml("ls_step = \"fast\"").is_err());
    }

    #[test]
    fn step_rules_parse() {
        assert_eq!(parse_step_rule("auto").unwrap(), StepRule::Auto);
        assert_eq!(parse_step_rule("0.5").unwrap(), StepRule::Fixed(0.5));
        assert_eq!(parse_step_rule("backtracking:2").unwrap(), StepRule::Backtracking { initial: 2.0 });
    }

    #[test]
    fn grid_is_deterministic_and_complete() {
        let g = small_grid();
        let a = run_grid(&g).unwrap();
        let b = run_grid(&g).unwrap();
        assert_eq!(results_to_csv(&a), results_to_csv(&b));
        assert_eq!(a.len(), 2 * 2 * 3);
        assert!(a.iter().all(|r| r.l2_err >= 0.0 && (-1.0..=1.0).contains(&r.cosine)));
        assert_eq!(parse_results(&results_to_csv(&a)).unwrap(), a);
        let keys: Vec<_> = a.iter().map(|r| (r.m, r.decoder.name(), r.trial)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn ls_only_grid_has_no_baseline_rows() {
        let mut g = small_grid();
        g.decoders = vec![DecoderKind::Ls];
        let rows = run_grid(&g).unwrap();
        assert!(rows.iter().all(|r| r.decoder == DecoderKind::Ls));
        assert_eq!(rows.len(), 4);
    }

    #[test]
    fn csv_header_and_float_format() {
        let text = results_to_csv(&[row(10, DecoderKind::Ls, 0, 0.1)]);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert!(lines.next().unwrap().contains("1.0000000000000001e-1"));
    }

    #[test]
    fn exact_power_law_fit() {
        let rows: Vec<CellResult> = [100usize, 400, 1600, 6400]
            .iter()
            .flat_map(|&m| (0..3).map(move |t| row(m, DecoderKind::Ls, t, (m as f64).powf(-0.5))))
            .collect();
        let fit = fit_scaling(&rows, DecoderKind::Ls).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!(fit.intercept.abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_errors_fit_flat() {
        let rows: Vec<CellResult> =
            [10usize, 20, 40].iter().flat_map(|&m| (0..3).map(move |t| row(m, DecoderKind::Ls, t, 0.3))).collect();
        assert_eq!(fit_scaling(&rows, DecoderKind::Ls).unwrap().slope, 0.0);
    }

    #[test]
    fn fit_needs_three_points() {
        let rows: Vec<CellResult> = [10usize, 20]
            .iter()
            .flat_map(|&m| (0..3).map(move |t| row(m, DecoderKind::Ls, t, 0.3)))
            .chain([row(40, DecoderKind::Ls, 0, 0.0), row(40, DecoderKind::Ls, 1, 0.2), row(40, DecoderKind::Ls, 2, 0.2)])
            .collect();
        assert!(matches!(fit_scaling(&rows, DecoderKind::Ls), Err(HarnessError::InsufficientData(_))));
    }

    #[test]
    fn spearman_of_monotone_data() {
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[9.0, 5.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flip_report_identical_inputs() {
        let rows: Vec<CellResult> = [DecoderKind::Ls, DecoderKind::Biht]
            .iter()
            .flat_map(|&d| (0..3).map(move |t| row(300, d, t, 0.1 * (t + 1) as f64)))
            .collect();
        let rep = flip_robustness_report(&rows, &rows, FlipMetric::L2).unwrap();
        assert!(rep.rows.iter().all(|r| r.ratio == 1.0));
        assert_eq!(rep.ls_not_worse_fraction, Some(1.0));
        let err = flip_robustness_report(&rows, &rows[1..], FlipMetric::L2);
        assert!(matches!(err, Err(HarnessError::Mismatch(_))));
    }
}
