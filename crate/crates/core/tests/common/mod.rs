//! Strategies and property checks shared by the property and acceptance suites.
#![allow(dead_code)]

use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::seq::SliceRandom;
use shuffle_ev::estimators::{mom_estimate, shuffle_estimate};
use shuffle_ev::noise::substream;
use shuffle_ev::permutation::{alpha, alpha_dense, apply, is_trivial, reverse_perm};
use shuffle_ev::simulation::{random_design, Layout};
use shuffle_ev::{ms_between, DesignSchedule, PermutationFamily, PermutationSpec};

pub type Check = Result<(), TestCaseError>;

pub fn design(m: usize, n: usize, seed: u64) -> DesignSchedule {
    random_design(m, n, Layout::Random, &mut substream(seed, 0)).unwrap()
}

pub fn random_perm(t: usize, seed: u64) -> PermutationSpec {
    let mut g: Vec<usize> = (0..t).collect();
    g.shuffle(&mut substream(seed, 1));
    PermutationSpec::from_mapping(g, PermutationFamily::Custom).unwrap()
}

/// A permutation sending every slot of stimulus `j` to a slot of stimulus `pi(j)`.
pub fn relabeling_perm(d: &DesignSchedule, seed: u64) -> PermutationSpec {
    let mut rng = substream(seed, 2);
    let slots = d.slots_by_stimulus();
    let mut pi: Vec<usize> = (0..slots.len()).collect();
    pi.shuffle(&mut rng);
    let mut g = vec![0; d.len()];
    for (j, own) in slots.iter().enumerate() {
        let mut target = slots[pi[j]].clone();
        target.shuffle(&mut rng);
        for (&t, &u) in own.iter().zip(&target) {
            g[t] = u;
        }
    }
    PermutationSpec::from_mapping(g, PermutationFamily::Custom).unwrap()
}

/// Random balanced design with a response vector.
pub fn case() -> impl Strategy<Value = (DesignSchedule, Vec<f64>)> {
    (2usize..7, 2usize..6, any::<u64>()).prop_flat_map(|(m, n, seed)| {
        let d = design(m, n, seed);
        let t = d.len();
        (Just(d), vec(-10.0f64..10.0, t))
    })
}

/// Dyadic data on a design with power-of-two `m` and `n`, where all arithmetic is exact.
pub fn dyadic_case() -> impl Strategy<Value = (DesignSchedule, Vec<f64>, f64)> {
    (0u32..3, 1u32..3, any::<u64>(), -64i32..64).prop_flat_map(|(em, en, seed, c)| {
        let d = design(2 << em, 1 << en, seed);
        let t = d.len();
        (Just(d), vec((-80i32..80).prop_map(|v| v as f64 / 8.0), t), Just(c as f64))
    })
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * (1.0 + a.abs().max(b.abs()))
}

/// Shuffle estimate with the reversal, unless reversal is trivial for `d`.
fn reverse_estimate(y: &[f64], d: &DesignSchedule) -> Option<shuffle_ev::VarianceEstimate> {
    let p = reverse_perm(d.len());
    (!is_trivial(&p, d).unwrap()).then(|| shuffle_estimate(y, d, &p).unwrap())
}

pub fn check_shift(d: &DesignSchedule, y: &[f64], c: f64) -> Check {
    let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
    prop_assert!(close(ms_between(&shifted, d).unwrap(), ms_between(y, d).unwrap(), 1e-9));
    if let (Some(a), Some(b)) = (reverse_estimate(y, d), reverse_estimate(&shifted, d)) {
        prop_assert!(close(a.sigma2_a_raw, b.sigma2_a_raw, 1e-9));
        prop_assert!(close(a.omega2, b.omega2, 1e-9));
        prop_assert_eq!(a.alpha, b.alpha);
    }
    Ok(())
}

pub fn check_shift_exact(d: &DesignSchedule, y: &[f64], c: f64) -> Check {
    let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
    prop_assert_eq!(ms_between(&shifted, d).unwrap(), ms_between(y, d).unwrap());
    prop_assert_eq!(reverse_estimate(y, d), reverse_estimate(&shifted, d));
    Ok(())
}

pub fn check_scale(d: &DesignSchedule, y: &[f64], k: i32, c: f64) -> Check {
    let base = ms_between(y, d).unwrap();
    let pow = 2f64.powi(k);
    let scaled: Vec<f64> = y.iter().map(|v| v * pow).collect();
    prop_assert_eq!(ms_between(&scaled, d).unwrap(), pow * pow * base);
    let general: Vec<f64> = y.iter().map(|v| v * c).collect();
    prop_assert!(close(ms_between(&general, d).unwrap(), c * c * base, 1e-12));
    if let (Some(a), Some(b)) = (reverse_estimate(y, d), reverse_estimate(&scaled, d)) {
        prop_assert_eq!(b.sigma2_a_raw, pow * pow * a.sigma2_a_raw);
        prop_assert_eq!(b.omega2, a.omega2);
    }
    if let (Some(a), Some(b)) = (reverse_estimate(y, d), reverse_estimate(&general, d)) {
        prop_assert!(close(b.sigma2_a_raw, c * c * a.sigma2_a_raw, 1e-9 * (1.0 + c * c)));
        if a.total > 1e-9 {
            prop_assert!(close(b.omega2, a.omega2, 1e-9));
        }
    }
    Ok(())
}

pub fn check_apply(y: &[f64], seed: u64) -> Check {
    let p = random_perm(y.len(), seed);
    let py = apply(&p, y).unwrap();
    let (mut a, mut b) = (y.to_vec(), py.clone());
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    prop_assert_eq!(a, b);
    prop_assert_eq!(apply(&p, &apply(&p.inverse(), y).unwrap()).unwrap(), y.to_vec());
    Ok(())
}

pub fn check_omega_range(d: &DesignSchedule, y: &[f64], seed: u64) -> Check {
    let p = random_perm(d.len(), seed);
    let mut estimates = vec![mom_estimate(y, d).unwrap()];
    if !is_trivial(&p, d).unwrap() {
        estimates.push(shuffle_estimate(y, d, &p).unwrap());
    }
    for e in estimates {
        prop_assert!((0.0..=1.0).contains(&e.omega2), "{:?}", e);
        prop_assert_eq!(e.flags.clamped, e.sigma2_a_raw < 0.0);
        prop_assert_eq!(e.sigma2_a, e.sigma2_a_raw.max(0.0));
    }
    Ok(())
}

pub fn check_trivial_invariance(d: &DesignSchedule, y: &[f64], seed: u64) -> Check {
    let p = relabeling_perm(d, seed);
    prop_assert!(is_trivial(&p, d).unwrap());
    prop_assert!((alpha(d, &p).unwrap() - 1.0).abs() <= 1e-12);
    prop_assert_eq!(ms_between(&apply(&p, y).unwrap(), d).unwrap(), ms_between(y, d).unwrap());
    Ok(())
}

pub fn check_alpha(d: &DesignSchedule, seed: u64) -> Check {
    for p in [random_perm(d.len(), seed), relabeling_perm(d, seed), reverse_perm(d.len())] {
        let a = alpha(d, &p).unwrap();
        prop_assert!(a <= 1.0 + 1e-12);
        prop_assert!((a - alpha_dense(d, &p).unwrap()).abs() <= 1e-12);
        prop_assert_eq!((1.0 - a).abs() <= 1e-12, is_trivial(&p, d).unwrap());
    }
    Ok(())
}
