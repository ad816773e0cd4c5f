//! Noise correlation families, the exact noise level of a design, and sampling of
//! synthetic experiments `Y = XA + eps`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::design::{DesignSchedule, MeasurementSeries};
use crate::error::{Error, Result};
use crate::permutation::contrast_trace;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Random stream for replicate `r` of a run seeded with `seed`.
///
/// Each replicate owns an independent ChaCha stream, so results do not depend on
/// which worker thread evaluates which replicate.
pub fn substream(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    rng
}

/// Parametric noise family. All families except `Block` describe a correlation
/// matrix with unit diagonal; `Block` describes a covariance directly.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceModel {
    Iid,
    /// `lambda1 * exp(-|t-u| / lambda2) + (1 - lambda1) * 1(t = u)`.
    ExpNugget { lambda1: f64, lambda2: f64 },
    /// `sigma2_b * 1(same block) + sigma2_e * 1(t = u)`.
    Block { sigma2_b: f64, sigma2_e: f64 },
    /// Stationary `eps_t = eta_t + sum_k a_k eps_{t-k}`, normalized to unit variance.
    Ar { coefficients: Vec<f64> },
}

impl CovarianceModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Iid => Ok(()),
            Self::ExpNugget { lambda1, lambda2 } => check_exp_nugget(*lambda1, *lambda2),
            Self::Block { sigma2_b, sigma2_e } => check_block(*sigma2_b, *sigma2_e),
            Self::Ar { coefficients } => {
                if ar_is_stationary(coefficients) {
                    Ok(())
                } else {
                    Err(Error::NonStationary(coefficients.clone()))
                }
            }
        }
    }

    /// Whether entries depend only on `|t - u|`.
    pub fn is_toeplitz(&self) -> bool {
        !matches!(self, Self::Block { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Iid => "iid",
            Self::ExpNugget { .. } => "exp_nugget",
            Self::Block { .. } => "block",
            Self::Ar { .. } => "ar",
        }
    }

    /// Dense `T x T` matrix for this design.
    pub fn matrix(&self, d: &DesignSchedule) -> Result<DMatrix<f64>> {
        let t = d.len();
        match self {
            Self::Iid => Ok(DMatrix::identity(t, t)),
            Self::ExpNugget { lambda1, lambda2 } => cov_exp_nugget(t, *lambda1, *lambda2),
            Self::Block { sigma2_b, sigma2_e } => cov_block(d, *sigma2_b, *sigma2_e),
            Self::Ar { coefficients } => cov_ar(t, coefficients, 1.0),
        }
    }

    /// Exact noise level `sigma2_eps * tr((B - G) Sigma) / ((m - 1) n)` without a dense matrix.
    pub fn noise_level(&self, d: &DesignSchedule, sigma2_eps: f64) -> Result<f64> {
        let (within, total) = self.within_and_total(d)?;
        let t = d.len();
        let trace = within / d.repeats() as f64 - total / t as f64;
        Ok(sigma2_eps * trace / ((d.num_stimuli() - 1) * d.repeats()) as f64)
    }

    /// `1' Sigma 1`, the sum of all entries.
    pub fn grand_sum(&self, d: &DesignSchedule) -> Result<f64> {
        Ok(self.within_and_total(d)?.1)
    }

    /// Sum of entries over same-stimulus pairs, and over all pairs.
    fn within_and_total(&self, d: &DesignSchedule) -> Result<(f64, f64)> {
        self.validate()?;
        let t = d.len();
        let within_and_total = |rho: &dyn Fn(usize) -> f64| {
            let mut within = 0.0;
            for slots in d.slots_by_stimulus() {
                for &a in &slots {
                    for &b in &slots {
                        within += rho(a.abs_diff(b));
                    }
                }
            }
            let mut total = t as f64 * rho(0);
            for lag in 1..t {
                total += 2.0 * (t - lag) as f64 * rho(lag);
            }
            (within, total)
        };
        let (within, total) = match self {
            Self::Iid => (t as f64, t as f64),
            Self::ExpNugget { lambda1, lambda2 } => {
                let (l1, l2) = (*lambda1, *lambda2);
                within_and_total(&move |lag| exp_nugget_rho(l1, l2, lag))
            }
            Self::Ar { coefficients } => {
                let rho = ar_autocorrelation(coefficients, t.saturating_sub(1))?;
                within_and_total(&|lag| rho[lag])
            }
            Self::Block { sigma2_b, sigma2_e } => {
                let blocks = d.block_of().ok_or(Error::MissingBlocks)?;
                let mut within = 0.0;
                for slots in d.slots_by_stimulus() {
                    for &a in &slots {
                        for &b in &slots {
                            if blocks[a] == blocks[b] {
                                within += sigma2_b;
                            }
                        }
                    }
                }
                within += t as f64 * sigma2_e;
                let mut sizes = vec![0usize; d.num_blocks().unwrap_or(0)];
                blocks.iter().for_each(|&b| sizes[b] += 1);
                let total = sizes.iter().map(|&s| (s * s) as f64).sum::<f64>() * sigma2_b
                    + t as f64 * sigma2_e;
                (within, total)
            }
        };
        Ok((within, total))
    }
}

impl fmt::Display for CovarianceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Iid => write!(f, "iid"),
            Self::ExpNugget { lambda1, lambda2 } => write!(f, "exp_nugget:{lambda1},{lambda2}"),
            Self::Block { sigma2_b, sigma2_e } => write!(f, "block:{sigma2_b},{sigma2_e}"),
            Self::Ar { coefficients } => {
                let parts: Vec<String> = coefficients.iter().map(f64::to_string).collect();
                write!(f, "ar:{}", parts.join(","))
            }
        }
    }
}

/// Parses `iid`, `exp_nugget:L1,L2`, `block:SB,SE` or `ar:A1,...,Ap`.
impl FromStr for CovarianceModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = args
            .split(',')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .map(|a| a.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Config(format!("bad numbers in noise model {s:?}")))?;
        let model = match (name.trim().to_ascii_lowercase().as_str(), nums.as_slice()) {
            ("iid", []) => Self::Iid,
            ("exp_nugget" | "exp-nugget", [l1, l2]) => Self::ExpNugget {
                lambda1: *l1,
                lambda2: *l2,
            },
            ("block", [b, e]) => Self::Block {
                sigma2_b: *b,
                sigma2_e: *e,
            },
            ("ar", a) if !a.is_empty() => Self::Ar {
                coefficients: a.to_vec(),
            },
            _ => return Err(Error::Config(format!("unknown noise model {s:?}"))),
        };
        model.validate()?;
        Ok(model)
    }
}

fn check_exp_nugget(lambda1: f64, lambda2: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda1) || !(lambda2 > 0.0) || !lambda2.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "exp_nugget needs 0 <= lambda1 <= 1 and lambda2 > 0, got ({lambda1}, {lambda2})"
        )));
    }
    Ok(())
}

fn check_block(sigma2_b: f64, sigma2_e: f64) -> Result<()> {
    let ok = sigma2_b >= 0.0 && sigma2_e >= 0.0 && sigma2_b + sigma2_e > 0.0;
    if !ok || !sigma2_b.is_finite() || !sigma2_e.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "block variances must be nonnegative and not both zero, got ({sigma2_b}, {sigma2_e})"
        )));
    }
    Ok(())
}

pub(crate) fn exp_nugget_rho(lambda1: f64, lambda2: f64, lag: usize) -> f64 {
    if lag == 0 {
        1.0
    } else {
        lambda1 * (-(lag as f64) / lambda2).exp()
    }
}

/// Exponentially decaying correlation with a nugget.
pub fn cov_exp_nugget(t: usize, lambda1: f64, lambda2: f64) -> Result<DMatrix<f64>> {
    check_exp_nugget(lambda1, lambda2)?;
    Ok(DMatrix::from_fn(t, t, |a, b| {
        exp_nugget_rho(lambda1, lambda2, a.abs_diff(b))
    }))
}

/// Additive block effect plus white noise.
pub fn cov_block(d: &DesignSchedule, sigma2_b: f64, sigma2_e: f64) -> Result<DMatrix<f64>> {
    check_block(sigma2_b, sigma2_e)?;
    let blocks = d.block_of().ok_or(Error::MissingBlocks)?;
    let t = d.len();
    Ok(DMatrix::from_fn(t, t, |a, b| {
        let mut v = 0.0;
        if blocks[a] == blocks[b] {
            v += sigma2_b;
        }
        if a == b {
            v += sigma2_e;
        }
        v
    }))
}

/// Stationarity test by Levinson step-down: every partial autocorrelation must lie in (-1, 1).
pub fn ar_is_stationary(coefficients: &[f64]) -> bool {
    ar_partial_autocorrelations(coefficients).is_some()
}

/// Partial autocorrelations of a stationary AR process, `None` if not stationary.
pub fn ar_partial_autocorrelations(coefficients: &[f64]) -> Option<Vec<f64>> {
    if coefficients.iter().any(|a| !a.is_finite()) {
        return None;
    }
    let mut a = coefficients.to_vec();
    let mut pacf = vec![0.0; a.len()];
    for k in (1..=a.len()).rev() {
        let kappa = a[k - 1];
        if kappa.abs() >= 1.0 {
            return None;
        }
        pacf[k - 1] = kappa;
        let denom = 1.0 - kappa * kappa;
        let prev: Vec<f64> = (0..k - 1)
            .map(|i| (a[i] + kappa * a[k - 2 - i]) / denom)
            .collect();
        a = prev;
    }
    Some(pacf)
}

/// Autocovariances `gamma_0..=gamma_max_lag` of an AR process with the given innovation variance.
pub fn ar_autocovariance(
    coefficients: &[f64],
    innovation_variance: f64,
    max_lag: usize,
) -> Result<Vec<f64>> {
    if !ar_is_stationary(coefficients) {
        return Err(Error::NonStationary(coefficients.to_vec()));
    }
    if !(innovation_variance > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "innovation variance must be positive, got {innovation_variance}"
        )));
    }
    let p = coefficients.len();
    let mut rho = vec![1.0];
    if p > 0 {
        // Yule-Walker: rho_k - sum_i a_i rho_{|k-i|} = 0 for k = 1..p, rho_0 = 1.
        let mut lhs = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        for k in 1..=p {
            lhs[(k - 1, k - 1)] += 1.0;
            for (i, &a) in coefficients.iter().enumerate() {
                let lag = k.abs_diff(i + 1);
                if lag == 0 {
                    rhs[k - 1] += a;
                } else {
                    lhs[(k - 1, lag - 1)] -= a;
                }
            }
        }
        let sol = lhs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NonStationary(coefficients.to_vec()))?;
        rho.extend(sol.iter().copied());
    }
    let needed = max_lag.max(p);
    while rho.len() <= needed {
        let k = rho.len();
        let next = coefficients
            .iter()
            .enumerate()
            .map(|(i, a)| a * rho[k.abs_diff(i + 1)])
            .sum();
        rho.push(next);
    }
    let explained: f64 = coefficients
        .iter()
        .enumerate()
        .map(|(i, a)| a * rho[i + 1])
        .sum();
    let gamma0 = innovation_variance / (1.0 - explained);
    Ok(rho[..=max_lag].iter().map(|r| r * gamma0).collect())
}

/// Autocorrelations `rho_0..=rho_max_lag` of a stationary AR process.
pub fn ar_autocorrelation(coefficients: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let g = ar_autocovariance(coefficients, 1.0, max_lag)?;
    let g0 = g[0];
    Ok(g.iter().map(|v| v / g0).collect())
}

/// Toeplitz AR correlation matrix built from Yule-Walker autocovariances.
pub fn cov_ar(t: usize, coefficients: &[f64], innovation_variance: f64) -> Result<DMatrix<f64>> {
    let g = ar_autocovariance(coefficients, innovation_variance, t.saturating_sub(1))?;
    Ok(DMatrix::from_fn(t, t, |a, b| g[a.abs_diff(b)] / g[0]))
}

/// Exact noise level `sigma2_eps * tr((B - G) Sigma) / ((m - 1) n)` for a dense `Sigma`.
pub fn noise_level(sigma: &DMatrix<f64>, d: &DesignSchedule, sigma2_eps: f64) -> Result<f64> {
    if sigma.nrows() != d.len() || sigma.ncols() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            actual: sigma.nrows().max(sigma.ncols()),
        });
    }
    let trace = contrast_trace(d, |a, b| sigma[(a, b)]);
    Ok(sigma2_eps * trace / ((d.num_stimuli() - 1) * d.repeats()) as f64)
}

/// Population quantities of one simulated configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentTruth {
    pub sigma2_a: f64,
    pub noise_level: f64,
    pub total: f64,
    pub omega2: f64,
    pub degenerate: bool,
}

impl ExperimentTruth {
    pub fn new(sigma2_a: f64, noise_level: f64) -> Self {
        let total = sigma2_a + noise_level;
        let degenerate = total <= 0.0;
        let omega2 = if degenerate {
            0.0
        } else {
            (sigma2_a / total).clamp(0.0, 1.0)
        };
        Self {
            sigma2_a,
            noise_level,
            total,
            omega2,
            degenerate,
        }
    }
}

/// Lower Cholesky factor, retrying with diagonal jitter `1e-10, 1e-9, ..., 1e-6`.
pub fn cholesky_with_jitter(sigma: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if let Some(c) = sigma.clone().cholesky() {
        return Ok((c.unpack(), 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * 1.000_001 {
        let mut m = sigma.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c.unpack(), jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::FactorizationFailure { jitter: JITTER_MAX })
}

/// Draws zero-mean noise vectors with covariance `Sigma` (before the `sigma2_eps` scale).
///
/// Named families use exact structural recursions in `O(T)`; arbitrary dense matrices
/// use a Cholesky factor.
#[derive(Debug, Clone)]
pub enum NoiseSampler {
    Iid,
    ExpNugget { lambda1: f64, phi: f64 },
    Block { blocks: Vec<usize>, num_blocks: usize, sd_b: f64, sd_e: f64 },
    Ar { coefficients: Vec<f64>, init_factor: DMatrix<f64>, scale: f64 },
    Dense { factor: DMatrix<f64> },
}

impl NoiseSampler {
    pub fn new(model: &CovarianceModel, d: &DesignSchedule) -> Result<Self> {
        model.validate()?;
        Ok(match model {
            CovarianceModel::Iid => Self::Iid,
            CovarianceModel::ExpNugget { lambda1, lambda2 } => Self::ExpNugget {
                lambda1: *lambda1,
                phi: (-1.0 / lambda2).exp(),
            },
            CovarianceModel::Block { sigma2_b, sigma2_e } => Self::Block {
                blocks: d.block_of().ok_or(Error::MissingBlocks)?.to_vec(),
                num_blocks: d.num_blocks().unwrap_or(0),
                sd_b: sigma2_b.sqrt(),
                sd_e: sigma2_e.sqrt(),
            },
            CovarianceModel::Ar { coefficients } => {
                let p = coefficients.len();
                let gamma = ar_autocovariance(coefficients, 1.0, p)?;
                let init = DMatrix::from_fn(p, p, |a, b| gamma[a.abs_diff(b)]);
                let init_factor = if p == 0 {
                    init
                } else {
                    cholesky_with_jitter(&init)?.0
                };
                Self::Ar {
                    coefficients: coefficients.clone(),
                    init_factor,
                    scale: 1.0 / gamma[0].sqrt(),
                }
            }
        })
    }

    /// Sampler from a dense covariance through its Cholesky factor.
    pub fn dense(sigma: &DMatrix<f64>) -> Result<Self> {
        Ok(Self::Dense {
            factor: cholesky_with_jitter(sigma)?.0,
        })
    }

    /// Fills `out` with one draw.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let mut z = || -> f64 { rng.sample(StandardNormal) };
        match self {
            Self::Iid => out.iter_mut().for_each(|v| *v = z()),
            Self::ExpNugget { lambda1, phi } => {
                let (a, w) = (lambda1.sqrt(), (1.0 - lambda1).sqrt());
                let innov = (1.0 - phi * phi).sqrt();
                let mut x = z();
                for (t, v) in out.iter_mut().enumerate() {
                    if t > 0 {
                        x = phi * x + innov * z();
                    }
                    *v = a * x + w * z();
                }
            }
            Self::Block { blocks, num_blocks, sd_b, sd_e } => {
                let effects: Vec<f64> = (0..*num_blocks).map(|_| sd_b * z()).collect();
                for (v, &b) in out.iter_mut().zip(blocks) {
                    *v = effects[b] + sd_e * z();
                }
            }
            Self::Ar { coefficients, init_factor, scale } => {
                let p = coefficients.len();
                let head: Vec<f64> = (0..p.min(out.len()).max(p)).map(|_| z()).collect();
                let mut x = vec![0.0; out.len().max(p)];
                for i in 0..p {
                    x[i] = (0..=i).map(|k| init_factor[(i, k)] * head[k]).sum();
                }
                for t in p..x.len() {
                    x[t] = z() + coefficients
                        .iter()
                        .enumerate()
                        .map(|(k, a)| a * x[t - k - 1])
                        .sum::<f64>();
                }
                for (v, xi) in out.iter_mut().zip(&x) {
                    *v = xi * scale;
                }
            }
            Self::Dense { factor } => {
                let zs = DVector::from_fn(factor.nrows(), |_, _| z());
                let e = factor * zs;
                out.copy_from_slice(e.as_slice());
            }
        }
    }
}

/// Reusable generator for `Y = XA + eps` under one design and noise model.
#[derive(Debug, Clone)]
pub struct ExperimentSampler {
    design: DesignSchedule,
    noise: NoiseSampler,
    sigma_a: f64,
    sigma_eps: f64,
    truth: ExperimentTruth,
}

impl ExperimentSampler {
    pub fn new(
        d: &DesignSchedule,
        sigma2_a: f64,
        model: &CovarianceModel,
        sigma2_eps: f64,
    ) -> Result<Self> {
        check_variances(sigma2_a, sigma2_eps)?;
        let noise = NoiseSampler::new(model, d)?;
        let level = model.noise_level(d, sigma2_eps)?;
        Ok(Self {
            design: d.clone(),
            noise,
            sigma_a: sigma2_a.sqrt(),
            sigma_eps: sigma2_eps.sqrt(),
            truth: ExperimentTruth::new(sigma2_a, level),
        })
    }

    /// Generator for an arbitrary dense noise matrix.
    pub fn with_dense(
        d: &DesignSchedule,
        sigma2_a: f64,
        sigma: &DMatrix<f64>,
        sigma2_eps: f64,
    ) -> Result<Self> {
        check_variances(sigma2_a, sigma2_eps)?;
        let level = noise_level(sigma, d, sigma2_eps)?;
        Ok(Self {
            design: d.clone(),
            noise: NoiseSampler::dense(sigma)?,
            sigma_a: sigma2_a.sqrt(),
            sigma_eps: sigma2_eps.sqrt(),
            truth: ExperimentTruth::new(sigma2_a, level),
        })
    }

    pub fn truth(&self) -> ExperimentTruth {
        self.truth
    }

    pub fn design(&self) -> &DesignSchedule {
        &self.design
    }

    /// One draw of the response vector together with the realized effects `A`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let effects: Vec<f64> = (0..self.design.num_stimuli())
            .map(|_| self.sigma_a * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut y = vec![0.0; self.design.len()];
        self.noise.sample_into(rng, &mut y);
        for (v, &j) in y.iter_mut().zip(self.design.stimulus_of()) {
            *v = effects[j] + self.sigma_eps * *v;
        }
        (y, effects)
    }
}

fn check_variances(sigma2_a: f64, sigma2_eps: f64) -> Result<()> {
    if !(sigma2_a >= 0.0 && sigma2_eps >= 0.0) || !sigma2_a.is_finite() || !sigma2_eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "variances must be finite and nonnegative, got ({sigma2_a}, {sigma2_eps})"
        )));
    }
    Ok(())
}

/// Simulates one experiment with Gaussian effects and noise; deterministic in `seed`.
pub fn sample_experiment(
    d: &DesignSchedule,
    sigma2_a: f64,
    model: &CovarianceModel,
    sigma2_eps: f64,
    seed: u64,
) -> Result<(MeasurementSeries, ExperimentTruth)> {
    let sampler = ExperimentSampler::new(d, sigma2_a, model, sigma2_eps)?;
    let mut rng = substream(seed, 0);
    let (y, _) = sampler.draw(&mut rng);
    Ok((MeasurementSeries::new(format!("sim-{seed}"), y)?, sampler.truth()))
}
