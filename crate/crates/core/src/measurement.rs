//! Correlated Gaussian sensing matrices and one-bit observations
//! `y = η ⊙ sign(A x* + ε)` with `sign(0) = +1`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::container::{Container, ContainerError};
use crate::linalg::{cholesky, LinalgError};
use crate::rng::{stream_rng, Stream};

pub const ENS_MAGIC: &str = "OBGCS-ENS v1";
pub const OBS_MAGIC: &str = "OBGCS-OBS v1";

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("shape mismatch: expected length {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("covariance is not positive definite: {0}")]
    NotSpd(#[from] LinalgError),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<ContainerError> for MeasurementError {
    fn from(e: ContainerError) -> Self {
        match e {
            ContainerError::Io(io) => MeasurementError::Io(io),
            other => MeasurementError::Malformed(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceKind {
    Identity,
    /// `Σ_jk = ν^|j-k|`
    Toeplitz(f64),
    Explicit(Array2<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub n: usize,
    pub kind: CovarianceKind,
}

impl CovarianceSpec {
    pub fn identity(n: usize) -> Self {
        Self { n, kind: CovarianceKind::Identity }
    }

    pub fn toeplitz(n: usize, nu: f64) -> Self {
        Self { n, kind: CovarianceKind::Toeplitz(nu) }
    }

    pub fn explicit(sigma: Array2<f64>) -> Self {
        Self { n: sigma.nrows(), kind: CovarianceKind::Explicit(sigma) }
    }

    pub fn validate(&self) -> Result<(), MeasurementError> {
        if self.n == 0 {
            return Err(MeasurementError::Invalid("ambient dimension must be positive".into()));
        }
        match &self.kind {
            CovarianceKind::Identity => Ok(()),
            CovarianceKind::Toeplitz(nu) => {
                if nu.is_finite() && nu.abs() < 1.0 {
                    Ok(())
                } else {
                    Err(MeasurementError::Invalid(format!("toeplitz ν must lie in (-1, 1), got {nu}")))
                }
            }
            CovarianceKind::Explicit(s) => {
                if s.dim() != (self.n, self.n) {
                    return Err(MeasurementError::Invalid(format!("Σ is {:?}, expected {n}x{n}", s.dim(), n = self.n)));
                }
                for i in 0..self.n {
                    for j in 0..i {
                        let (a, b) = (s[[i, j]], s[[j, i]]);
                        if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                            return Err(MeasurementError::Invalid(format!("Σ is not symmetric at ({i}, {j})")));
                        }
                    }
                }
                cholesky(s.view())?;
                Ok(())
            }
        }
    }

    pub fn matrix(&self) -> Array2<f64> {
        match &self.kind {
            CovarianceKind::Identity => Array2::eye(self.n),
            CovarianceKind::Toeplitz(nu) => {
                Array2::from_shape_fn((self.n, self.n), |(j, k)| nu.powi(j.abs_diff(k) as i32))
            }
            CovarianceKind::Explicit(s) => s.clone(),
        }
    }

    pub fn cholesky_factor(&self) -> Result<Array2<f64>, MeasurementError> {
        self.validate()?;
        match &self.kind {
            CovarianceKind::Identity => Ok(Array2::eye(self.n)),
            _ => Ok(cholesky(self.matrix().view())?),
        }
    }

    fn tag(&self) -> String {
        match &self.kind {
            CovarianceKind::Identity => "identity".into(),
            CovarianceKind::Toeplitz(nu) => format!("toeplitz {nu:e}"),
            CovarianceKind::Explicit(_) => "explicit".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementEnsemble {
    /// `m x n`
    pub a: Array2<f64>,
    pub cov: CovarianceSpec,
    pub sigma: f64,
    /// probability that a sign is kept, `P[η = +1]`
    pub q: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub x_star: Array1<f64>,
    pub eta: Array1<f64>,
    pub eps: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryObservation {
    pub y: Array1<f64>,
    pub truth: Truth,
}

fn check_noise(sigma: f64, q: f64) -> Result<(), MeasurementError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(MeasurementError::Invalid(format!("σ must be finite and nonnegative, got {sigma}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(MeasurementError::Invalid(format!("q must lie in [0, 1], got {q}")));
    }
    Ok(())
}

/// Draws `A = Z Cᵀ` with `Z` i.i.d. standard normal and `C Cᵀ = Σ`.
pub fn sample_ensemble(
    m: usize,
    cov: CovarianceSpec,
    sigma: f64,
    q: f64,
    seed: u64,
) -> Result<MeasurementEnsemble, MeasurementError> {
    if m == 0 {
        return Err(MeasurementError::Invalid("m must be at least 1".into()));
    }
    check_noise(sigma, q)?;
    let c = cov.cholesky_factor()?;
    let mut rng = stream_rng(seed, Stream::Matrix, &[]);
    let z = Array2::from_shape_simple_fn((m, cov.n), || StandardNormal.sample(&mut rng));
    let a = match cov.kind {
        CovarianceKind::Identity => z,
        _ => z.dot(&c.t()),
    };
    Ok(MeasurementEnsemble { a, cov, sigma, q, seed })
}

impl MeasurementEnsemble {
    pub fn m(&self) -> usize {
        self.a.nrows()
    }

    pub fn n(&self) -> usize {
        self.a.ncols()
    }

    /// Draws `ε ~ N(0, σ² I)` and `η` with `P[η = +1] = q` from streams of `seed`.
    pub fn observe(&self, x_star: ArrayView1<'_, f64>, seed: u64) -> Result<BinaryObservation, MeasurementError> {
        if x_star.len() != self.n() {
            return Err(MeasurementError::Shape { expected: self.n(), got: x_star.len() });
        }
        let m = self.m();
        let mut noise = stream_rng(seed, Stream::Noise, &[]);
        let eps = Array1::from_shape_simple_fn(m, || {
            let g: f64 = StandardNormal.sample(&mut noise);
            self.sigma * g
        });
        let mut flips = stream_rng(seed, Stream::Flips, &[]);
        let eta = Array1::from_shape_simple_fn(m, || if flips.random::<f64>() < self.q { 1.0 } else { -1.0 });
        let y = quantize(self.a.view(), x_star, eps.view(), eta.view());
        Ok(BinaryObservation { y, truth: Truth { x_star: x_star.to_owned(), eta, eps } })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MeasurementError> {
        fs::write(path, self.to_container().to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MeasurementError> {
        Self::from_container(&Container::from_bytes(&fs::read(path)?, ENS_MAGIC)?)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(ENS_MAGIC)
            .field("m", self.m())
            .field("n", self.n())
            .field("cov", self.cov.tag())
            .field("sigma", format!("{:e}", self.sigma))
            .field("q", format!("{:e}", self.q))
            .field("seed", self.seed)
            .array("A", self.a.iter().copied().collect());
        if let CovarianceKind::Explicit(s) = &self.cov.kind {
            c = c.array("Sigma", s.iter().copied().collect());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self, MeasurementError> {
        let m: usize = c.get_parsed("m")?;
        let n: usize = c.get_parsed("n")?;
        let sigma: f64 = c.get_parsed("sigma")?;
        let q: f64 = c.get_parsed("q")?;
        let seed: u64 = c.get_parsed("seed")?;
        let tag = c.get("cov")?;
        let kind = match tag.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["identity"] => CovarianceKind::Identity,
            ["toeplitz", nu] => CovarianceKind::Toeplitz(
                nu.parse().map_err(|_| MeasurementError::Malformed(format!("bad ν in `{tag}`")))?,
            ),
            ["explicit"] => {
                let s = c.get_array("Sigma")?;
                if s.len() != n * n {
                    return Err(MeasurementError::Shape { expected: n * n, got: s.len() });
                }
                CovarianceKind::Explicit(Array2::from_shape_vec((n, n), s.to_vec()).expect("length checked"))
            }
            _ => return Err(MeasurementError::Malformed(format!("unknown covariance `{tag}`"))),
        };
        let a = c.get_array("A")?;
        if a.len() != m * n {
            return Err(MeasurementError::Shape { expected: m * n, got: a.len() });
        }
        let cov = CovarianceSpec { n, kind };
        cov.validate()?;
        check_noise(sigma, q)?;
        Ok(Self { a: Array2::from_shape_vec((m, n), a.to_vec()).expect("length checked"), cov, sigma, q, seed })
    }
}

/// `η ⊙ sign(A x + ε)` with `sign(0) = +1`.
pub fn quantize(
    a: ArrayView2<'_, f64>,
    x: ArrayView1<'_, f64>,
    eps: ArrayView1<'_, f64>,
    eta: ArrayView1<'_, f64>,
) -> Array1<f64> {
    let ax = a.dot(&x);
    Array1::from_shape_fn(ax.len(), |i| eta[i] * sign(ax[i] + eps[i]))
}

pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

impl BinaryObservation {
    pub fn m(&self) -> usize {
        self.y.len()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), MeasurementError> {
        fs::write(path, self.to_container().to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MeasurementError> {
        Self::from_container(&Container::from_bytes(&fs::read(path)?, OBS_MAGIC)?)
    }

    pub fn to_container(&self) -> Container {
        Container::new(OBS_MAGIC)
            .field("m", self.m())
            .field("n", self.truth.x_star.len())
            .array("y", self.y.to_vec())
            .array("x_star", self.truth.x_star.to_vec())
            .array("eta", self.truth.eta.to_vec())
            .array("eps", self.truth.eps.to_vec())
    }

    pub fn from_container(c: &Container) -> Result<Self, MeasurementError> {
        let m: usize = c.get_parsed("m")?;
        let n: usize = c.get_parsed("n")?;
        let grab = |name: &str, len: usize| -> Result<Array1<f64>, MeasurementError> {
            let v = c.get_array(name)?;
            if v.len() != len {
                return Err(MeasurementError::Shape { expected: len, got: v.len() });
            }
            Ok(Array1::from(v.to_vec()))
        };
        let y = grab("y", m)?;
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(MeasurementError::Malformed("y entries must be ±1".into()));
        }
        Ok(Self { y, truth: Truth { x_star: grab("x_star", n)?, eta: grab("eta", m)?, eps: grab("eps", m)? } })
    }
}

/// `c = (2q - 1) sqrt(2 / (π (σ² + 1)))`.
pub fn scaling_constant(sigma: f64, q: f64) -> f64 {
    (2.0 * q - 1.0) * (2.0 / (std::f64::consts::PI * (sigma * sigma + 1.0))).sqrt()
}

/// `sqrt(xᵀ Σ x)`.
pub fn sigma_norm(cov: &CovarianceSpec, x: ArrayView1<'_, f64>) -> Result<f64, MeasurementError> {
    if x.len() != cov.n {
        return Err(MeasurementError::Shape { expected: cov.n, got: x.len() });
    }
    let quad = match &cov.kind {
        CovarianceKind::Identity => x.dot(&x),
        _ => x.dot(&cov.matrix().dot(&x)),
    };
    if quad < 0.0 {
        return Err(MeasurementError::Invalid(format!("negative quadratic form {quad:e}")));
    }
    Ok(quad.sqrt())
}
