//! Estimators of the signal variance, noise level and explainable variance of one series.

mod consistency;
mod mom;
pub mod reml;
mod shuffle;

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

pub use consistency::consistency_diagnostic;
pub use mom::mom_estimate;
pub use reml::{reml_estimate, RemlFamily, RemlFit, RemlOptions};
pub use shuffle::{average_shuffle, shuffle_estimate, TRIVIAL_ALPHA_TOL};

/// Which estimator produced a [`VarianceEstimate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Method {
    Shuffle,
    ShuffleAverage,
    MethodOfMoments,
    Reml(RemlFamily),
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Shuffle => write!(f, "shuffle"),
            Self::ShuffleAverage => write!(f, "shuffle-avg"),
            Self::MethodOfMoments => write!(f, "mom"),
            Self::Reml(family) => write!(f, "reml:{family}"),
        }
    }
}

/// Parses `shuffle`, `shuffle-avg`, `mom` or `reml:FAMILY`.
impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim() {
            "shuffle" => Ok(Self::Shuffle),
            "shuffle-avg" => Ok(Self::ShuffleAverage),
            "mom" => Ok(Self::MethodOfMoments),
            other => other
                .strip_prefix("reml:")
                .ok_or_else(|| Error::Config(format!("unknown estimator {other:?}")))?
                .parse()
                .map(Self::Reml),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EstimateFlags {
    /// The raw signal estimate was negative and was clamped to zero.
    pub clamped: bool,
    /// `MS_bet` is zero, so the explainable variance is reported as 0.
    pub degenerate: bool,
    pub non_converged: bool,
    /// The permutation only approximately conserves stationary noise.
    pub approximate_permutation: bool,
}

impl EstimateFlags {
    /// `;`-separated flag names, empty when no flag is set.
    pub fn labels(&self) -> String {
        let mut out = Vec::new();
        if self.clamped {
            out.push("clamped");
        }
        if self.degenerate {
            out.push("degenerate");
        }
        if self.non_converged {
            out.push("non_converged");
        }
        if self.approximate_permutation {
            out.push("approximate_permutation");
        }
        out.join(";")
    }
}

/// Signal/noise decomposition of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    /// Unclamped signal variance estimate; may be negative.
    pub sigma2_a_raw: f64,
    /// `max(0, sigma2_a_raw)`.
    pub sigma2_a: f64,
    pub noise_level: f64,
    /// `MS_bet(Y)`, the estimate of the total variance of treatment averages.
    pub total: f64,
    pub omega2: f64,
    pub method: Method,
    pub alpha: Option<f64>,
    /// `MS_bet / (MS_wit / n)` for the method of moments.
    pub f_statistic: Option<f64>,
    pub flags: EstimateFlags,
}

impl VarianceEstimate {
    /// Clamps the raw estimate and forms the plug-in explainable variance.
    pub(crate) fn from_raw(raw: f64, total: f64, noise_level: f64, method: Method) -> Self {
        let sigma2_a = raw.max(0.0);
        let degenerate = !(total > 0.0);
        let omega2 = if degenerate {
            0.0
        } else {
            (sigma2_a / total).min(1.0)
        };
        Self {
            sigma2_a_raw: raw,
            sigma2_a,
            noise_level,
            total,
            omega2,
            method,
            alpha: None,
            f_statistic: None,
            flags: EstimateFlags {
                clamped: raw < 0.0,
                degenerate,
                ..Default::default()
            },
        }
    }
}
