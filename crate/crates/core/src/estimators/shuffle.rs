use crate::design::{ms_between_unchecked, DesignSchedule};
use crate::error::{Error, Result};
use crate::permutation::{alpha, PermutationSpec};

use super::{Method, VarianceEstimate};

/// `|1 - alpha|` at or below this marks a permutation as carrying no information.
pub const TRIVIAL_ALPHA_TOL: f64 = 1e-12;

struct ShuffleParts {
    total: f64,
    raw: f64,
    alpha: f64,
}

fn shuffle_parts(y: &[f64], d: &DesignSchedule, p: &PermutationSpec) -> Result<ShuffleParts> {
    if y.len() != d.len() {
        return Err(Error::LengthMismatch {
            expected: d.len(),
            actual: y.len(),
        });
    }
    let a = alpha(d, p)?;
    if (1.0 - a).abs() <= TRIVIAL_ALPHA_TOL {
        return Err(Error::TrivialPermutation { alpha: a });
    }
    let shuffled: Vec<f64> = p.mapping().iter().map(|&g| y[g]).collect();
    let total = ms_between_unchecked(y, d);
    let permuted = ms_between_unchecked(&shuffled, d);
    Ok(ShuffleParts {
        total,
        raw: (total - permuted) / (1.0 - a),
        alpha: a,
    })
}

/// Shuffle estimate `(MS_bet(Y) - MS_bet(PY)) / (1 - alpha)`.
///
/// The noise level is `MS_bet(Y)` minus the raw signal estimate; the explainable
/// variance uses the estimate clamped at zero.
pub fn shuffle_estimate(
    y: &[f64],
    d: &DesignSchedule,
    p: &PermutationSpec,
) -> Result<VarianceEstimate> {
    let parts = shuffle_parts(y, d, p)?;
    let mut est = VarianceEstimate::from_raw(
        parts.raw,
        parts.total,
        parts.total - parts.raw,
        Method::Shuffle,
    );
    est.alpha = Some(parts.alpha);
    est.flags.approximate_permutation = p.family().is_approximate();
    Ok(est)
}

/// Mean of the raw shuffle estimates over several permutations, then clamped.
/// The reported `alpha` is the mean mixing coefficient.
pub fn average_shuffle(
    y: &[f64],
    d: &DesignSchedule,
    perms: &[PermutationSpec],
) -> Result<VarianceEstimate> {
    if perms.is_empty() {
        return Err(Error::InvalidParameter("no permutations supplied".into()));
    }
    let parts = perms
        .iter()
        .map(|p| shuffle_parts(y, d, p))
        .collect::<Result<Vec<_>>>()?;
    let k = parts.len() as f64;
    let total = parts[0].total;
    let raw = parts.iter().map(|s| s.raw).sum::<f64>() / k;
    let mut est = VarianceEstimate::from_raw(raw, total, total - raw, Method::ShuffleAverage);
    est.alpha = Some(parts.iter().map(|s| s.alpha).sum::<f64>() / k);
    est.flags.approximate_permutation = perms.iter().any(|p| p.family().is_approximate());
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::permutation::{cyclic_shift, reverse_perm};

    fn design6() -> DesignSchedule {
        DesignSchedule::build(&["a", "a", "b", "b", "a", "b"], None).unwrap()
    }

    #[test]
    fn equal_contrasts_give_zero_signal() {
        // Palindromic series: PY = Y under reversal.
        let y = [1.0, 4.0, 2.0, 2.0, 4.0, 1.0];
        let est = shuffle_estimate(&y, &design6(), &reverse_perm(6)).unwrap();
        assert_eq!(est.sigma2_a_raw, 0.0);
        assert_eq!(est.omega2, 0.0);
        assert!(!est.flags.clamped);
        assert!((est.alpha.unwrap() - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn identity_is_rejected() {
        let y = [1.0, 4.0, 2.0, 2.0, 4.0, 1.0];
        let err = shuffle_estimate(&y, &design6(), &PermutationSpec::identity(6)).unwrap_err();
        assert!(matches!(err, Error::TrivialPermutation { .. }));
        let d = DesignSchedule::build(&["a", "a", "b", "b"], None).unwrap();
        assert!(shuffle_estimate(&[1.0, 2.0, 3.0, 4.0], &d, &reverse_perm(4)).is_err());
    }

    #[test]
    fn hand_computed_estimate() {
        // Y = [1,2,3,4,5,6] on aabbab: averages a = 8/3, b = 13/3, MS_bet = 25/18.
        // Reversed [6,5,4,3,2,1]: averages a = 13/3, b = 8/3, MS_bet = 25/18.
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let est = shuffle_estimate(&y, &design6(), &reverse_perm(6)).unwrap();
        assert!((est.total - 25.0 / 18.0).abs() < 1e-12);
        assert!(est.sigma2_a_raw.abs() < 1e-12);

        let y = [3.0, 1.0, 0.0, 0.0, 2.0, 0.0];
        // a = {3, 1, 2} -> 2, b = 0 -> MS_bet = 2; reversed [0,2,0,0,1,3]: a = 1, b = 1 -> 0.
        let est = shuffle_estimate(&y, &design6(), &reverse_perm(6)).unwrap();
        assert!((est.total - 2.0).abs() < 1e-12);
        assert!((est.sigma2_a_raw - 2.25).abs() < 1e-12);
        assert!((est.noise_level + 0.25).abs() < 1e-12);
        assert_eq!(est.omega2, 1.0);
    }

    #[test]
    fn clamping_and_flags() {
        // MS_bet(PY) > MS_bet(Y) gives a negative raw estimate.
        let y = [0.0, 2.0, 0.0, 0.0, 1.0, 3.0];
        let est = shuffle_estimate(&y, &design6(), &reverse_perm(6)).unwrap();
        assert!(est.sigma2_a_raw < 0.0);
        assert_eq!(est.sigma2_a, 0.0);
        assert!(est.flags.clamped);
        assert_eq!(est.omega2, 0.0);
        assert!((est.total - est.sigma2_a_raw - est.noise_level).abs() < 1e-12);

        let y = [5.0; 6];
        let est = shuffle_estimate(&y, &design6(), &reverse_perm(6)).unwrap();
        assert!(est.flags.degenerate);
        assert_eq!(est.omega2, 0.0);

        let shifted = shuffle_estimate(&[0.0, 1.0, 2.0, 3.0, 1.0, 0.5], &design6(), &cyclic_shift(6, 1).unwrap()).unwrap();
        assert!(shifted.flags.approximate_permutation);
    }

    #[test]
    fn averaging() {
        let y = [3.0, 1.0, 0.0, 0.0, 2.0, 0.0];
        let d = design6();
        let p = reverse_perm(6);
        let single = shuffle_estimate(&y, &d, &p).unwrap();
        let avg1 = average_shuffle(&y, &d, std::slice::from_ref(&p)).unwrap();
        let avg2 = average_shuffle(&y, &d, &[p.clone(), p.clone()]).unwrap();
        assert_eq!(avg1.sigma2_a_raw, single.sigma2_a_raw);
        assert_eq!(avg2.sigma2_a_raw, single.sigma2_a_raw);
        assert_eq!(avg2.omega2, single.omega2);
        assert!(average_shuffle(&y, &d, &[p, PermutationSpec::identity(6)]).is_err());
        assert!(average_shuffle(&y, &d, &[]).is_err());
    }
}
