use crate::design::{ms_between, ms_within, DesignSchedule};
use crate::error::Result;

use super::{Method, VarianceEstimate};

/// Method of moments ignoring noise correlation: `MS_bet - MS_wit / n`.
pub fn mom_estimate(y: &[f64], d: &DesignSchedule) -> Result<VarianceEstimate> {
    let total = ms_between(y, d)?;
    let within = ms_within(y, d)?;
    let level = within / d.repeats() as f64;
    let raw = total - level;
    let mut est = VarianceEstimate::from_raw(raw, total, level, Method::MethodOfMoments);
    est.f_statistic = Some(if level > 0.0 {
        total / level
    } else {
        f64::INFINITY
    });
    Ok(est)
}
