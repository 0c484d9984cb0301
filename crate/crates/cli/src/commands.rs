use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use ndarray::Array1;
use serde::Serialize;

use onebit_core::decoders::{biht_decode, estimation_error, ls_decode, pv_convex_decode, LsDecoderConfig, LsMode};
use onebit_core::generator::{synth_generator, GeneratorNetwork, OutputNorm, SynthSpec};
use onebit_core::harness::{
    draw_truth, fit_scaling, parse_step_rule, read_results, results_to_csv, run_grid, DecoderKind, ExperimentGrid,
};
use onebit_core::measurement::{sample_ensemble, BinaryObservation, MeasurementEnsemble};
use onebit_core::memorizer::{build_theorem_generator, count_dimensions};
use onebit_core::rng::{stream_rng, Stream};
use onebit_core::theory::{
    build_eps_net, build_random_eps_net, concentration_study, estimate_local_mean_width, jl_study,
    mean_width_of_directions, protocol_covariance, srec_study, SrecStudy, TheoryError, LATTICE_BUDGET,
};
use onebit_core::{DecoderError, GeneratorError, HarnessError, MeasurementError, MemorizerError};

use crate::{Cli, Command, Common};

/// Comma separated layer widths, e.g. `50,50`.
#[derive(Debug, Clone)]
pub struct Widths(pub Vec<usize>);

impl std::str::FromStr for Widths {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Widths(Vec::new()));
        }
        s.split(',').map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}"))).collect::<Result<_, _>>().map(Widths)
    }
}

/// Synthetic generator flags shared by several subcommands.
#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    /// Saved generator; overrides the synthetic shape flags
    #[arg(long)]
    pub generator: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Hidden widths, comma separated
    #[arg(long, default_value = "50")]
    pub hidden: Widths,
    /// Seed of the synthetic generator weights
    #[arg(long, default_value_t = 0)]
    pub gen_seed: u64,
}

impl GenArgs {
    fn build(&self) -> Result<GeneratorNetwork> {
        match &self.generator {
            Some(p) => GeneratorNetwork::load(p).with_context(|| format!("loading {}", p.display())),
            None => Ok(synth_generator(&SynthSpec::new(self.k, self.n, self.hidden.0.clone(), self.gen_seed))?),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value = "50")]
    pub hidden: Widths,
    /// Weight standard deviation is `scale / sqrt(fan_in)`
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long, default_value_t = 0.0)]
    pub bias_scale: f64,
    /// none, unit_sphere or l1_ball
    #[arg(long, default_value = "none")]
    pub output_norm: String,
    /// Write the JSON form instead of the binary container
    #[arg(long)]
    pub text: bool,
}

#[derive(Debug, Args)]
pub struct MeasureArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    #[arg(long, default_value_t = 300)]
    pub m: usize,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.97)]
    pub q: f64,
    /// Toeplitz parameter; 0 gives the identity
    #[arg(long, default_value_t = 0.3)]
    pub nu: f64,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    /// Directory written by `measure`
    #[arg(long)]
    pub measurements: PathBuf,
    /// ls, biht or pv
    #[arg(long, default_value = "ls")]
    pub decoder: String,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lambda: f64,
    /// Constrain `||z|| <= radius` instead of penalizing
    #[arg(long)]
    pub radius: Option<f64>,
    /// auto, backtracking, backtracking:<initial> or a fixed step
    #[arg(long, default_value = "auto")]
    pub step: String,
    /// BIHT sparsity, default n
    #[arg(long)]
    pub sparsity: Option<usize>,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    /// BIHT and PV step
    #[arg(long, default_value_t = 1.0)]
    pub baseline_step: f64,
    /// PV l1 radius, default sqrt(n)
    #[arg(long)]
    pub l1_radius: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// Run with threads for timing (`runtime_s`)
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV written by `grid`
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, default_value = "ls")]
    pub decoder: String,
}

#[derive(Debug, Subcommand)]
pub enum Validate {
    /// Restricted eigenvalue condition on the generator range
    Srec(SrecArgs),
    /// Distance preservation on a finite set of generator outputs
    Jl(JlArgs),
    /// Concentration of the sample covariance
    Concentration(ConcentrationArgs),
    /// Gaussian mean width of normalized differences
    MeanWidth(MeanWidthArgs),
    /// Covering net of a latent ball
    EpsNet(EpsNetArgs),
}

#[derive(Debug, Args)]
pub struct SrecArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    /// Defaults to ceil(5 k log(L/δ))
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    #[arg(long, default_value_t = 0.3)]
    pub nu: f64,
}

#[derive(Debug, Args)]
pub struct JlArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    /// Defaults to ceil(8 log|T| / ε²)
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    #[arg(long, default_value_t = 0.3)]
    pub nu: f64,
}

#[derive(Debug, Args)]
pub struct ConcentrationArgs {
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, default_value_t = 100_000)]
    pub m: usize,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    #[arg(long, default_value_t = 4.0)]
    pub constant: f64,
    #[arg(long, default_value_t = 0.0)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.1)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.97)]
    pub q: f64,
}

#[derive(Debug, Args)]
pub struct MeanWidthArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    /// Use the direction set {+e1, -e1} in R^n instead of a generator
    #[arg(long)]
    pub pm_e1: bool,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    /// Minimum difference norm kept in the direction set
    #[arg(long, default_value_t = 0.1)]
    pub gamma_scale: f64,
    /// Pitch parameter of the latent net
    #[arg(long, default_value_t = 0.25)]
    pub net_epsilon: f64,
    #[arg(long, default_value_t = 2000)]
    pub gaussians: usize,
}

#[derive(Debug, Args)]
pub struct EpsNetArgs {
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 0.25)]
    pub epsilon: f64,
    /// Greedy random net instead of the lattice
    #[arg(long)]
    pub random: bool,
    #[arg(long, default_value_t = 2000)]
    pub patience: usize,
    /// Fresh points used to certify the covering radius
    #[arg(long, default_value_t = 10_000)]
    pub certify: usize,
}

#[derive(Debug, Args)]
pub struct MemorizeArgs {
    /// JSON array of target vectors in [0, 1]^n; random targets otherwise
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Number of random targets
    #[arg(long, default_value_t = 5)]
    pub s: usize,
    /// Dimension of random targets
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 0.25)]
    pub tau: f64,
    /// Latent dimension of the built generator
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long)]
    pub max_width: Option<usize>,
}

fn generator_numerical(e: &GeneratorError) -> bool {
    matches!(e, GeneratorError::NonFinite(_))
}

fn measurement_numerical(e: &MeasurementError) -> bool {
    matches!(e, MeasurementError::NotSpd(_))
}

fn decoder_numerical(e: &DecoderError) -> bool {
    match e {
        DecoderError::Diverged { .. } | DecoderError::ZeroNorm => true,
        DecoderError::Generator(g) => generator_numerical(g),
        _ => false,
    }
}

fn numerical(cause: &(dyn std::error::Error + 'static)) -> bool {
    if let Some(e) = cause.downcast_ref::<DecoderError>() {
        decoder_numerical(e)
    } else if let Some(e) = cause.downcast_ref::<MeasurementError>() {
        measurement_numerical(e)
    } else if let Some(e) = cause.downcast_ref::<GeneratorError>() {
        generator_numerical(e)
    } else if let Some(e) = cause.downcast_ref::<TheoryError>() {
        match e {
            TheoryError::DegenerateCone { .. } | TheoryError::Capacity { .. } => true,
            TheoryError::Covariance(m) => measurement_numerical(m),
            TheoryError::Generator(g) => generator_numerical(g),
            TheoryError::Invalid(_) => false,
        }
    } else if let Some(e) = cause.downcast_ref::<MemorizerError>() {
        match e {
            MemorizerError::WidthBudget { .. } => true,
            MemorizerError::Generator(g) => generator_numerical(g),
            _ => false,
        }
    } else if let Some(e) = cause.downcast_ref::<HarnessError>() {
        match e {
            HarnessError::InsufficientData(_) => true,
            HarnessError::Generator(g) => generator_numerical(g),
            HarnessError::Measurement(m) => measurement_numerical(m),
            HarnessError::Decoder(d) => decoder_numerical(d),
            _ => false,
        }
    } else {
        false
    }
}

/// Numerical failures exit with 2, everything else with 1.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(numerical) {
        2
    } else {
        1
    }
}

struct Ctx {
    common: Common,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.common.seed.unwrap_or(0)
    }

    fn progress(&self, msg: &str) {
        if !self.common.quiet {
            eprintln!("{msg}");
        }
    }

    fn out(&self) -> Result<&Path> {
        self.common.out.as_deref().context("--out is required for this command")
    }

    /// Prints one JSON line and, with `--out`, writes it to the file too.
    fn emit<T: Serialize>(&self, value: &T) -> Result<()> {
        let line = serde_json::to_string(value)?;
        println!("{line}");
        if let Some(p) = &self.common.out {
            fs::write(p, format!("{line}\n")).with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx { common: cli.common };
    match cli.command {
        Command::SynthGen(a) => synth_gen(&ctx, a),
        Command::Measure(a) => measure(&ctx, a),
        Command::Decode(a) => decode(&ctx, a),
        Command::Grid(a) => grid(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Validate(v) => validate(&ctx, v),
        Command::Memorize(a) => memorize(&ctx, a),
    }
}

fn synth_gen(ctx: &Ctx, a: SynthGenArgs) -> Result<()> {
    let Some(norm) = OutputNorm::from_tag(&a.output_norm) else {
        bail!("unknown output norm `{}`", a.output_norm);
    };
    let spec = SynthSpec {
        scale: a.scale,
        bias_scale: a.bias_scale,
        output_norm: norm,
        ..SynthSpec::new(a.k, a.n, a.hidden.0, ctx.seed())
    };
    let net = synth_generator(&spec)?;
    let out = ctx.out()?;
    if a.text {
        net.save_text(out)?;
    } else {
        net.save(out)?;
    }
    ctx.progress(&format!("wrote generator {:?} to {}", net.layer_dims(), out.display()));
    Ok(())
}

const ENSEMBLE_FILE: &str = "ensemble.bin";
const OBSERVATION_FILE: &str = "observation.bin";

fn measure(ctx: &Ctx, a: MeasureArgs) -> Result<()> {
    let net = a.gen.build()?;
    let cov = protocol_covariance(net.output_dim(), a.nu);
    let seed = ctx.seed();
    let ens = sample_ensemble(a.m, cov.clone(), a.sigma, a.q, seed)?;
    let (_, x_star) = draw_truth(&net, &cov, seed)?;
    let obs = ens.observe(x_star.view(), seed)?;
    let dir = ctx.out()?;
    fs::create_dir_all(dir)?;
    ens.save(dir.join(ENSEMBLE_FILE))?;
    obs.save(dir.join(OBSERVATION_FILE))?;
    ctx.progress(&format!("wrote m = {} measurements of n = {} to {}", a.m, ens.n(), dir.display()));
    Ok(())
}

#[derive(Serialize)]
struct DecodeOutput {
    decoder: &'static str,
    x_hat: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ls: Option<onebit_core::DecoderResult>,
    l2_err: f64,
    cosine: f64,
    per_pixel: f64,
}

fn decode(ctx: &Ctx, a: DecodeArgs) -> Result<()> {
    let ens = MeasurementEnsemble::load(a.measurements.join(ENSEMBLE_FILE))?;
    let obs = BinaryObservation::load(a.measurements.join(OBSERVATION_FILE))?;
    let kind: DecoderKind = a.decoder.parse()?;
    let n = ens.n();
    let (x_hat, ls) = match kind {
        DecoderKind::Ls => {
            let net = a.gen.build()?;
            let cfg = LsDecoderConfig {
                mode: match a.radius {
                    Some(radius) => LsMode::Constrained { radius },
                    None => LsMode::Lagrangian { lambda: a.lambda },
                },
                restarts: a.restarts,
                steps_per_restart: a.steps,
                step: parse_step_rule(&a.step)?,
                seed: ctx.seed(),
                init_scale: 1.0,
            };
            let res = ls_decode(&obs, &ens, &net, &cfg)?;
            (Array1::from(res.x_hat.clone()), Some(res))
        }
        DecoderKind::Biht => {
            (biht_decode(&obs, &ens, a.sparsity.unwrap_or(n).clamp(1, n), a.iters, a.baseline_step)?, None)
        }
        DecoderKind::Pv => {
            (pv_convex_decode(&obs, &ens, a.l1_radius.unwrap_or((n as f64).sqrt()), a.iters, a.baseline_step)?, None)
        }
    };
    let err = estimation_error(x_hat.view(), obs.truth.x_star.view(), ens.sigma, ens.q)?;
    ctx.progress(&format!("{}: l2 error {:.6}, cosine {:.6}", kind.name(), err.l2_err, err.cosine));
    let out = DecodeOutput {
        decoder: kind.name(),
        x_hat: x_hat.to_vec(),
        ls,
        l2_err: err.l2_err,
        cosine: err.cosine,
        per_pixel: err.per_pixel,
    };
    let text = serde_json::to_string_pretty(&out)?;
    match &ctx.common.out {
        Some(p) => fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn grid(ctx: &Ctx, a: GridArgs) -> Result<()> {
    let mut g = match &ctx.common.config {
        Some(p) => ExperimentGrid::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ExperimentGrid::default(),
    };
    if let Some(seed) = ctx.common.seed {
        g.base_seed = seed;
    }
    g.timing |= a.timing;
    let out = ctx.common.out.clone().or_else(|| g.output.as_ref().map(PathBuf::from));
    ctx.progress(&format!(
        "grid: {} m values x {} trials x {} decoders",
        g.m_values.len(),
        g.trials,
        g.decoders.len()
    ));
    let rows = run_grid(&g)?;
    let csv = results_to_csv(&rows);
    match out {
        Some(p) => {
            fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?;
            ctx.progress(&format!("wrote {} rows to {}", rows.len(), p.display()));
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn fit(ctx: &Ctx, a: FitArgs) -> Result<()> {
    let rows = read_results(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let fit = fit_scaling(&rows, a.decoder.parse()?)?;
    #[derive(Serialize)]
    struct Record {
        decoder: &'static str,
        slope: f64,
        intercept: f64,
        r2: f64,
    }
    ctx.emit(&Record { decoder: fit.decoder.name(), slope: fit.slope, intercept: fit.intercept, r2: fit.r2 })
}

fn validate(ctx: &Ctx, v: Validate) -> Result<()> {
    let seed = ctx.seed();
    match v {
        Validate::Srec(a) => {
            let net = a.gen.build()?;
            let study =
                SrecStudy { delta: a.delta, m: a.m, radius: a.radius, pairs: a.pairs, runs: a.runs, nu: a.nu };
            ctx.progress(&format!("S-REC: {} runs of {} pairs", a.runs, a.pairs));
            ctx.emit(&srec_study(&net, &study, seed)?)
        }
        Validate::Jl(a) => {
            let net = a.gen.build()?;
            ctx.emit(&jl_study(&net, a.points, a.radius, a.epsilon, a.m, a.runs, a.nu, seed)?)
        }
        Validate::Concentration(a) => {
            ctx.progress(&format!("concentration: {} runs at m = {}", a.runs, a.m));
            ctx.emit(&concentration_study(a.n, a.m, a.runs, a.constant, a.nu, a.sigma, a.q, seed)?)
        }
        Validate::MeanWidth(a) => {
            if a.pm_e1 {
                let mut e = Array1::zeros(a.gen.n);
                e[0] = 1.0;
                let (estimate, std_err) = mean_width_of_directions(&[e.clone(), -e], a.gaussians, seed);
                #[derive(Serialize)]
                struct Record {
                    estimate: f64,
                    std_err: f64,
                    expected: f64,
                }
                return ctx.emit(&Record { estimate, std_err, expected: (2.0 / std::f64::consts::PI).sqrt() });
            }
            let net = a.gen.build()?;
            let mut rng = stream_rng(seed, Stream::Latent, &[]);
            let z_bar = onebit_core::theory::uniform_in_ball(&mut rng, net.latent_dim(), a.radius);
            let est =
                estimate_local_mean_width(&net, z_bar.view(), a.radius, a.gamma_scale, a.gaussians, a.net_epsilon, seed)?;
            ctx.emit(&est)
        }
        Validate::EpsNet(a) => {
            #[derive(Serialize)]
            struct Record {
                method: &'static str,
                points: usize,
                log_cardinality_bound: f64,
                certified_radius: f64,
                epsilon: f64,
            }
            let (net, certified, method) = if a.random {
                let (net, c) = build_random_eps_net(a.k, a.radius, a.epsilon, a.patience, a.certify, seed)?;
                (net, c, "random")
            } else {
                let net = build_eps_net(a.k, a.radius, a.epsilon)?;
                let c = net.max_cover_distance(a.certify, seed);
                (net, c, "lattice")
            };
            ctx.progress(&format!("{method} net with {} points (lattice budget {LATTICE_BUDGET})", net.len()));
            ctx.emit(&Record {
                method,
                points: net.len(),
                log_cardinality_bound: net.log_cardinality_bound(),
                certified_radius: certified,
                epsilon: a.epsilon,
            })
        }
    }
}

fn memorize(ctx: &Ctx, a: MemorizeArgs) -> Result<()> {
    let targets: Vec<Array1<f64>> = match &a.targets {
        Some(p) => {
            let raw: Vec<Vec<f64>> = serde_json::from_str(&fs::read_to_string(p)?)
                .with_context(|| format!("parsing {}", p.display()))?;
            raw.into_iter().map(Array1::from).collect()
        }
        None => {
            use rand::Rng;
            let mut rng = stream_rng(ctx.seed(), Stream::Cell, &[]);
            (0..a.s).map(|_| Array1::from_shape_simple_fn(a.n, || rng.random::<f64>())).collect()
        }
    };
    let g = build_theorem_generator(&targets, a.tau, a.k, a.max_width)?;
    let (width, depth) = count_dimensions(g.net.network());
    #[derive(Serialize)]
    struct Record {
        s: usize,
        n: usize,
        ell: usize,
        w: usize,
        declared_width: usize,
        declared_depth: usize,
        counted_width: usize,
        counted_depth: usize,
        max_truncation_residual: f64,
        max_l2_gap: f64,
        tau: f64,
        within_tau: bool,
    }
    if let Some(p) = &ctx.common.out {
        g.net.network().save(p)?;
        ctx.progress(&format!("wrote generator to {}", p.display()));
    }
    let record = Record {
        s: targets.len(),
        n: targets[0].len(),
        ell: g.ell,
        w: g.w,
        declared_width: g.net.declared_width(),
        declared_depth: g.net.declared_depth(),
        counted_width: width,
        counted_depth: depth,
        max_truncation_residual: g.max_truncation_residual,
        max_l2_gap: g.max_l2_gap,
        tau: a.tau,
        within_tau: g.max_l2_gap <= a.tau,
    };
    println!("{}", serde_json::to_string(&record)?);
    Ok(())
}
