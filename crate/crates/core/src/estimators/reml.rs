//! Restricted maximum likelihood for `cov(Y) = s2_a XX' + s2_eps Sigma(theta)` with an
//! unknown intercept.
//!
//! The likelihood is evaluated without forming `T x T` matrices. Every supported
//! family is `Sigma = lambda1 * R + (1 - lambda1) I` where `R` is a stationary AR
//! correlation with banded precision, so `W = Sigma` is handled through banded
//! Cholesky solves and the `m` random effects through a Woodbury update:
//!
//! ```text
//! V0 = tau XX' + W,   V0^-1 = W^-1 - tau W^-1 X (I + tau M)^-1 X' W^-1,   M = X' W^-1 X
//! log|V0| = log|W| + log|I + tau M|
//! ```
//!
//! The scale `s2_eps` is profiled out, leaving `(log tau, theta)` for the simplex search.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::band::{BandCholesky, SymBand};
use crate::design::{ms_between, ms_within, DesignSchedule};
use crate::error::{Error, Result};
use crate::noise::{ar_autocovariance, ar_is_stationary, substream, CovarianceModel};
use crate::optim::{nelder_mead, NelderMeadOptions};

use super::{Method, VarianceEstimate};

const LOG_TAU_RANGE: (f64, f64) = (-30.0, 12.0);
const LOGIT_RANGE: f64 = 18.0;
const LOG_LAMBDA2_RANGE: (f64, f64) = (-5.0, 10.0);

/// Noise correlation family assumed by the REML fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemlFamily {
    Iid,
    ExpNugget,
    /// Autoregressive of the given order (1 to 3).
    Ar(usize),
}

impl fmt::Display for RemlFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Iid => write!(f, "iid"),
            Self::ExpNugget => write!(f, "exp_nugget"),
            Self::Ar(p) => write!(f, "ar{p}"),
        }
    }
}

impl FromStr for RemlFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "iid" => Ok(Self::Iid),
            "exp_nugget" | "exp-nugget" => Ok(Self::ExpNugget),
            _ => {
                let order = s
                    .strip_prefix("ar")
                    .and_then(|p| p.trim_start_matches(['(', ':']).trim_end_matches(')').parse::<usize>().ok())
                    .filter(|p| (1..=3).contains(p))
                    .ok_or_else(|| Error::Config(format!("unknown REML family {s:?}")))?;
                Ok(Self::Ar(order))
            }
        }
    }
}

impl RemlFamily {
    fn dim(&self) -> usize {
        match self {
            Self::Iid => 1,
            Self::ExpNugget => 3,
            Self::Ar(p) => 1 + p,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RemlOptions {
    pub starts: usize,
    pub max_evals: usize,
    pub diameter_tol: f64,
    /// Series longer than this are rejected.
    pub max_len: usize,
    /// Seed for the random multi-starts.
    pub seed: u64,
}

impl Default for RemlOptions {
    fn default() -> Self {
        Self {
            starts: 5,
            max_evals: 2000,
            diameter_tol: 1e-8,
            max_len: 4096,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemlFit {
    pub sigma2_a: f64,
    pub sigma2_eps: f64,
    /// `[lambda1, lambda2]` for exp_nugget, AR coefficients for ar(p), empty for iid.
    pub theta: Vec<f64>,
    pub noise_model: CovarianceModel,
    pub log_restricted_likelihood: f64,
    pub converged: bool,
    /// Likelihood evaluations over all starts.
    pub iterations: usize,
}

/// Noise correlation `W = lambda1 * R_ar + (1 - lambda1) I` in factored form.
enum NoiseStructure {
    Identity,
    /// No nugget: `W^-1` is the banded AR precision.
    Precision { q: SymBand, log_det: f64 },
    /// `W^-1 = (I + nu Q_s)^-1 Q_s` with `Q_s = Q_ar / lambda1`, `nu = 1 - lambda1`.
    Nugget {
        q_s: SymBand,
        factor: BandCholesky,
        log_det: f64,
    },
}

/// Banded precision of the unit-variance AR correlation and `log|R|`; requires `T > p`.
fn ar_precision(coefficients: &[f64], t: usize) -> Option<(SymBand, f64)> {
    let p = coefficients.len();
    if t <= p || !ar_is_stationary(coefficients) {
        return None;
    }
    let gamma = ar_autocovariance(coefficients, 1.0, p).ok()?;
    let mut q = SymBand::zeros(t, p);
    let mut log_det_head = 0.0;
    if p > 0 {
        let head = DMatrix::from_fn(p, p, |a, b| gamma[a.abs_diff(b)]);
        let chol = head.cholesky()?;
        log_det_head = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inv = chol.inverse();
        for a in 0..p {
            for b in 0..=a {
                q.add(a, b, inv[(a, b)]);
            }
        }
    }
    // Conditional terms (x_s - sum_k a_k x_{s-k})^2 for s >= p.
    for s in p..t {
        let c = |k: usize| if k == 0 { 1.0 } else { -coefficients[k - 1] };
        for k1 in 0..=p {
            for k2 in 0..=k1 {
                q.add(s - k2, s - k1, c(k1) * c(k2));
            }
        }
    }
    let gamma0 = gamma[0];
    q.scale(gamma0);
    Some((q, log_det_head - t as f64 * gamma0.ln()))
}

impl NoiseStructure {
    fn new(lambda1: f64, coefficients: &[f64], t: usize) -> Option<Self> {
        if lambda1 <= 0.0 {
            return Some(Self::Identity);
        }
        let (q_ar, log_det_r) = ar_precision(coefficients, t)?;
        if lambda1 >= 1.0 {
            return Some(Self::Precision {
                q: q_ar,
                log_det: log_det_r,
            });
        }
        let nu = 1.0 - lambda1;
        let mut q_s = q_ar;
        q_s.scale(1.0 / lambda1);
        let mut h = q_s.clone();
        h.scale(nu);
        h.add_diagonal(1.0);
        let factor = h.cholesky()?;
        // |lambda1 R + nu I| = |lambda1 R| |I + nu Q_s|.
        let log_det = t as f64 * lambda1.ln() + log_det_r + factor.log_det();
        Some(Self::Nugget {
            q_s,
            factor,
            log_det,
        })
    }

    fn log_det(&self) -> f64 {
        match self {
            Self::Identity => 0.0,
            Self::Precision { log_det, .. } | Self::Nugget { log_det, .. } => *log_det,
        }
    }

    fn apply_inv(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Identity => v.to_vec(),
            Self::Precision { q, .. } => q.mul_vec(v),
            Self::Nugget { q_s, factor, .. } => {
                let mut out = q_s.mul_vec(v);
                factor.solve_in_place(&mut out);
                out
            }
        }
    }

    /// `M = X' W^-1 X`.
    fn design_gram(&self, d: &DesignSchedule) -> DMatrix<f64> {
        let m = d.num_stimuli();
        let h = d.stimulus_of();
        match self {
            Self::Identity => DMatrix::identity(m, m) * d.repeats() as f64,
            Self::Precision { q, .. } => {
                let mut g = DMatrix::zeros(m, m);
                for i in 0..q.size() {
                    g[(h[i], h[i])] += q.get(i, i);
                    for k in 1..=q.bandwidth().min(i) {
                        let v = q.get(i, i - k);
                        g[(h[i], h[i - k])] += v;
                        g[(h[i - k], h[i])] += v;
                    }
                }
                g
            }
            Self::Nugget { q_s, factor, .. } => {
                // Rows of Q_s X, then H^-1 applied to all m columns at once.
                let (t, p) = (q_s.size(), q_s.bandwidth());
                let mut z = vec![0.0; t * m];
                for i in 0..t {
                    for u in i.saturating_sub(p)..(i + p + 1).min(t) {
                        z[i * m + h[u]] += q_s.get(i, u);
                    }
                }
                factor.solve_rows_in_place(&mut z, m);
                let mut acc = vec![0.0; m * m];
                for i in 0..t {
                    let row = &z[i * m..(i + 1) * m];
                    let target = &mut acc[h[i] * m..(h[i] + 1) * m];
                    target.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                }
                let g = DMatrix::from_row_slice(m, m, &acc);
                // Symmetrize rounding noise.
                (&g + g.transpose()) * 0.5
            }
        }
    }
}

fn aggregate(v: &[f64], d: &DesignSchedule) -> DVector<f64> {
    let mut out = DVector::zeros(d.num_stimuli());
    for (x, &j) in v.iter().zip(d.stimulus_of()) {
        out[j] += x;
    }
    out
}

/// Ingredients of the restricted likelihood at fixed `(tau, theta)`.
struct Evaluated {
    log_det_v0: f64,
    /// `1' V0^-1 1`.
    s11: f64,
    /// `r' V0^-1 r` at the GLS intercept.
    q: f64,
}

fn evaluate(y: &[f64], d: &DesignSchedule, tau: f64, w: &NoiseStructure) -> Option<Evaluated> {
    let t = d.len();
    let ones = vec![1.0; t];
    let winv_y = w.apply_inv(y);
    let winv_1 = w.apply_inv(&ones);
    let gram = w.design_gram(d);
    let m = d.num_stimuli();
    let dmat = DMatrix::identity(m, m) + gram * tau;
    let chol = dmat.cholesky()?;
    let log_det_d = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let b_y = aggregate(&winv_y, d);
    let b_1 = aggregate(&winv_1, d);
    let d_inv_b1 = chol.solve(&b_1);
    let d_inv_by = chol.solve(&b_y);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let s11 = dot(&ones, &winv_1) - tau * b_1.dot(&d_inv_b1);
    let s1y = dot(&ones, &winv_y) - tau * b_1.dot(&d_inv_by);
    let syy = dot(y, &winv_y) - tau * b_y.dot(&d_inv_by);
    let q = syy - s1y * s1y / s11;
    if !(s11 > 0.0) || !(q > 0.0) || !q.is_finite() {
        return None;
    }
    Some(Evaluated {
        log_det_v0: w.log_det() + log_det_d,
        s11,
        q,
    })
}

fn reml_terms(t: usize, sigma2: f64, e: &Evaluated) -> f64 {
    let dof = (t - 1) as f64;
    -0.5 * (dof * (2.0 * PI).ln() + dof * sigma2.ln() + e.log_det_v0 + e.s11.ln() + e.q / sigma2)
}

/// Parameters of one candidate in the search space.
#[derive(Debug, Clone)]
struct Candidate {
    tau: f64,
    lambda1: f64,
    lambda2: f64,
    coefficients: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn decode(family: RemlFamily, x: &[f64]) -> Candidate {
    let tau = x[0].clamp(LOG_TAU_RANGE.0, LOG_TAU_RANGE.1).exp();
    match family {
        RemlFamily::Iid => Candidate {
            tau,
            lambda1: 0.0,
            lambda2: 1.0,
            coefficients: Vec::new(),
        },
        RemlFamily::ExpNugget => {
            let lambda2 = x[2].clamp(LOG_LAMBDA2_RANGE.0, LOG_LAMBDA2_RANGE.1).exp();
            Candidate {
                tau,
                lambda1: sigmoid(x[1].clamp(-LOGIT_RANGE, LOGIT_RANGE)),
                lambda2,
                coefficients: vec![(-1.0 / lambda2).exp()],
            }
        }
        RemlFamily::Ar(_) => Candidate {
            tau,
            lambda1: 1.0,
            lambda2: 1.0,
            coefficients: x[1..].to_vec(),
        },
    }
}

fn profiled(y: &[f64], d: &DesignSchedule, c: &Candidate) -> Option<(f64, f64)> {
    let w = NoiseStructure::new(c.lambda1, &c.coefficients, d.len())?;
    let e = evaluate(y, d, c.tau, &w)?;
    let sigma2 = e.q / (d.len() - 1) as f64;
    let ll = reml_terms(d.len(), sigma2, &e);
    ll.is_finite().then_some((ll, sigma2))
}

fn noise_model(family: RemlFamily, c: &Candidate) -> CovarianceModel {
    match family {
        RemlFamily::Iid => CovarianceModel::Iid,
        RemlFamily::ExpNugget => CovarianceModel::ExpNugget {
            lambda1: c.lambda1,
            lambda2: c.lambda2,
        },
        RemlFamily::Ar(_) => CovarianceModel::Ar {
            coefficients: c.coefficients.clone(),
        },
    }
}

/// Coefficients of the AR process with the given partial autocorrelations.
fn pacf_to_ar(pacf: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::new();
    for &kappa in pacf {
        let k = a.len();
        let mut next: Vec<f64> = (0..k).map(|i| a[i] - kappa * a[k - 1 - i]).collect();
        next.push(kappa);
        a = next;
    }
    a
}

fn check_inputs(y: &[f64], d: &DesignSchedule, family: RemlFamily, opts: &RemlOptions) -> Result<()> {
    if y.len() != d.len() {
        return Err(Error::LengthMismatch {
            expected: d.len(),
            actual: y.len(),
        });
    }
    if d.len() > opts.max_len {
        return Err(Error::SizeGuard {
            len: d.len(),
            limit: opts.max_len,
        });
    }
    if let RemlFamily::Ar(p) = family {
        if !(1..=3).contains(&p) {
            return Err(Error::InvalidParameter(format!("AR order {p} outside 1..=3")));
        }
    }
    Ok(())
}

/// Full restricted log-likelihood at explicit parameters.
pub fn restricted_log_likelihood(
    y: &[f64],
    d: &DesignSchedule,
    sigma2_a: f64,
    sigma2_eps: f64,
    noise: &CovarianceModel,
) -> Result<f64> {
    if y.len() != d.len() {
        return Err(Error::LengthMismatch {
            expected: d.len(),
            actual: y.len(),
        });
    }
    noise.validate()?;
    if !(sigma2_eps > 0.0) || !(sigma2_a >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need sigma2_a >= 0 and sigma2_eps > 0, got ({sigma2_a}, {sigma2_eps})"
        )));
    }
    let w = match noise {
        CovarianceModel::Iid => NoiseStructure::new(0.0, &[], d.len()),
        CovarianceModel::ExpNugget { lambda1, lambda2 } => {
            NoiseStructure::new(*lambda1, &[(-1.0 / lambda2).exp()], d.len())
        }
        CovarianceModel::Ar { coefficients } => NoiseStructure::new(1.0, coefficients, d.len()),
        CovarianceModel::Block { .. } => {
            return Err(Error::InvalidParameter(
                "block noise has no banded REML structure".into(),
            ))
        }
    }
    .ok_or_else(|| Error::InvalidParameter("noise structure is not positive definite".into()))?;
    let e = evaluate(y, d, sigma2_a / sigma2_eps, &w)
        .ok_or_else(|| Error::InvalidParameter("likelihood is undefined here".into()))?;
    Ok(reml_terms(d.len(), sigma2_eps, &e))
}

/// Same likelihood from the dense `T x T` covariance, for cross-checking.
pub fn restricted_log_likelihood_dense(
    y: &[f64],
    d: &DesignSchedule,
    sigma2_a: f64,
    sigma2_eps: f64,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    let t = d.len();
    if y.len() != t || sigma.nrows() != t || sigma.ncols() != t {
        return Err(Error::DimensionMismatch {
            expected: t,
            actual: y.len().max(sigma.nrows()),
        });
    }
    let h = d.stimulus_of();
    let v = DMatrix::from_fn(t, t, |a, b| {
        let signal = if h[a] == h[b] { sigma2_a } else { 0.0 };
        signal + sigma2_eps * sigma[(a, b)]
    });
    let chol = v
        .cholesky()
        .ok_or(Error::FactorizationFailure { jitter: 0.0 })?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let ones = DVector::from_element(t, 1.0);
    let yv = DVector::from_column_slice(y);
    let vinv_1 = chol.solve(&ones);
    let s11 = ones.dot(&vinv_1);
    let beta = vinv_1.dot(&yv) / s11;
    let r = &yv - &ones * beta;
    let quad = r.dot(&chol.solve(&r));
    let dof = (t - 1) as f64;
    Ok(-0.5 * (dof * (2.0 * PI).ln() + log_det + s11.ln() + quad))
}

struct StartResult {
    x: Vec<f64>,
    value: f64,
    evals: usize,
    converged: bool,
}

/// Fits the variance components by REML with a multi-start simplex search.
///
/// The best finite likelihood over all starts wins; ties go to the lowest start index.
/// A fit whose winning start exhausted its evaluation budget is returned with
/// `converged = false` rather than as an error.
pub fn reml_estimate(
    y: &[f64],
    d: &DesignSchedule,
    family: RemlFamily,
    opts: &RemlOptions,
) -> Result<(RemlFit, VarianceEstimate)> {
    check_inputs(y, d, family, opts)?;
    let total = ms_between(y, d)?;

    let between = total;
    let within = ms_within(y, d)?;
    let tau0 = if within > 0.0 {
        ((between - within / d.repeats() as f64) / within).clamp(1e-3, 1e3)
    } else {
        1e3
    };
    let mut starts = Vec::with_capacity(opts.starts.max(1));
    for s in 0..opts.starts.max(1) {
        let mut x = Vec::with_capacity(family.dim());
        if s == 0 {
            x.push(tau0.ln());
            match family {
                RemlFamily::Iid => {}
                RemlFamily::ExpNugget => x.extend([0.0, 10f64.ln()]),
                RemlFamily::Ar(p) => x.extend(std::iter::repeat(0.0).take(p)),
            }
        } else {
            let mut rng = substream(opts.seed, s as u64);
            x.push(tau0.ln() + rng.random_range(-2.0..2.0));
            match family {
                RemlFamily::Iid => {}
                RemlFamily::ExpNugget => {
                    x.push(rng.random_range(-2.0..2.0));
                    x.push(rng.random_range(0.0..100f64.ln()));
                }
                RemlFamily::Ar(p) => {
                    let pacf: Vec<f64> = (0..p).map(|_| rng.random_range(-0.6..0.6)).collect();
                    x.extend(pacf_to_ar(&pacf));
                }
            }
        }
        starts.push(x);
    }

    let nm = NelderMeadOptions {
        diameter_tol: opts.diameter_tol,
        max_evals: opts.max_evals,
        initial_step: 0.5,
    };
    let results: Vec<StartResult> = starts
        .par_iter()
        .map(|x0| {
            let cost = |x: &[f64]| match profiled(y, d, &decode(family, x)) {
                Some((ll, _)) => -ll,
                None => f64::INFINITY,
            };
            let m = nelder_mead(cost, x0, &nm);
            StartResult {
                x: m.x,
                value: m.value,
                evals: m.evals,
                converged: m.converged,
            }
        })
        .collect();

    let evals = results.iter().map(|r| r.evals).sum();
    let best = results
        .iter()
        .filter(|r| r.value.is_finite())
        .fold(None::<&StartResult>, |acc, r| match acc {
            Some(b) if b.value <= r.value => Some(b),
            _ => Some(r),
        })
        .ok_or(Error::AllStartsFailed)?;

    let cand = decode(family, &best.x);
    let (ll, sigma2_eps) = profiled(y, d, &cand).ok_or(Error::AllStartsFailed)?;
    let sigma2_a = cand.tau * sigma2_eps;
    let model = noise_model(family, &cand);
    let theta = match family {
        RemlFamily::Iid => Vec::new(),
        RemlFamily::ExpNugget => vec![cand.lambda1, cand.lambda2],
        RemlFamily::Ar(_) => cand.coefficients.clone(),
    };
    let level = model.noise_level(d, sigma2_eps)?;
    let fit = RemlFit {
        sigma2_a,
        sigma2_eps,
        theta,
        noise_model: model,
        log_restricted_likelihood: ll,
        converged: best.converged,
        iterations: evals,
    };
    let mut est = VarianceEstimate::from_raw(sigma2_a, total, level, Method::Reml(family));
    est.flags.non_converged = !fit.converged;
    Ok((fit, est))
}
