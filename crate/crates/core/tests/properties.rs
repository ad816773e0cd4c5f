mod common;

use common::*;
use proptest::prelude::*;
use shuffle_ev::design::ms_between_dense;
use shuffle_ev::noise::{cov_exp_nugget, substream};
use shuffle_ev::permutation::{block_random_perm, noise_conservation_gap, reverse_perm};
use shuffle_ev::simulation::{random_design, run_prediction_check, run_sweep, Layout, PredictionConfig, SweepConfig};
use shuffle_ev::{ms_between, CovarianceModel, Method};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ms_between_matches_quadratic_form((d, y) in case()) {
        let direct = ms_between(&y, &d).unwrap();
        let dense = ms_between_dense(&y, &d).unwrap();
        prop_assert!((direct - dense).abs() <= 1e-10 * dense.abs().max(1e-300));
    }

    #[test]
    fn shift_invariance((d, y) in case(), c in -1e3f64..1e3) {
        check_shift(&d, &y, c)?;
    }

    #[test]
    fn shift_invariance_is_exact_on_dyadic_data((d, y, c) in dyadic_case()) {
        check_shift_exact(&d, &y, c)?;
    }

    #[test]
    fn scale_equivariance((d, y) in case(), k in -20i32..20, c in 0.01f64..100.0) {
        check_scale(&d, &y, k, c)?;
    }

    #[test]
    fn apply_preserves_multiset(y in proptest::collection::vec(-1e6f64..1e6, 1..80), seed in any::<u64>()) {
        check_apply(&y, seed)?;
    }

    #[test]
    fn omega2_in_unit_interval((d, y) in case(), seed in any::<u64>()) {
        check_omega_range(&d, &y, seed)?;
    }

    #[test]
    fn trivial_permutation_leaves_ms_between_unchanged((d, y) in case(), seed in any::<u64>()) {
        check_trivial_invariance(&d, &y, seed)?;
    }

    #[test]
    fn alpha_bounded_and_counting_matches_dense(m in 2usize..7, n in 1usize..8, seed in any::<u64>()) {
        prop_assume!(m * n <= 60);
        check_alpha(&design(m, n, seed), seed)?;
    }

    #[test]
    fn conservation_gap_vanishes(m in 2usize..6, n in 2usize..5, l1 in 0.0f64..1.0, l2 in 0.5f64..20.0, seed in any::<u64>()) {
        let d = design(m, n, seed);
        let toeplitz = cov_exp_nugget(d.len(), l1, l2).unwrap();
        prop_assert!(noise_conservation_gap(&toeplitz, &d, &reverse_perm(d.len())).unwrap().abs() < 1e-12);

        let blocked = random_design(2 * m, n, Layout::Blocked { blocks: 2 }, &mut substream(seed, 3)).unwrap();
        let sigma = CovarianceModel::Block { sigma2_b: l1, sigma2_e: l2 }.matrix(&blocked).unwrap();
        let p = block_random_perm(&blocked, seed).unwrap();
        prop_assert!(noise_conservation_gap(&sigma, &blocked, &p).unwrap().abs() < 1e-12);
    }
}

#[test]
fn sweeps_are_deterministic_across_thread_counts() {
    let cfg = SweepConfig {
        m: 16,
        n: 4,
        grid: vec![0.0, 0.3],
        replicates: 30,
        estimators: vec![Method::Shuffle, Method::MethodOfMoments, "reml:exp_nugget".parse().unwrap()],
        reml: shuffle_ev::RemlOptions { starts: 2, ..Default::default() },
        ..SweepConfig::timeseries_defaults()
    };
    let runs: Vec<_> = [1, 2, 5]
        .into_iter()
        .map(|k| run_sweep(&SweepConfig { threads: Some(k), ..cfg.clone() }).unwrap())
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0], runs[2]);

    let pred = PredictionConfig { population: 100, m: 10, n: 3, replicates: 50, ..Default::default() };
    let a = run_prediction_check(&PredictionConfig { threads: Some(1), ..pred.clone() }).unwrap();
    let b = run_prediction_check(&PredictionConfig { threads: Some(4), ..pred }).unwrap();
    assert_eq!(a, b);
}
