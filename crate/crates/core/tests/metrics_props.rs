use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scatternet_core::metrics::{is_saturated_branch, saturation_choice};
use scatternet_core::scenario::training11;
use scatternet_core::*;

fn training_trials(algo: Algo, n: u64) -> Vec<TrialResult> {
    let sc = training11();
    (0..n).map(|s| run_trial(&sc, algo, s).unwrap()).collect()
}

#[test]
fn engine_flags_agree_with_recount() {
    for algo in Algo::ALL {
        for t in training_trials(algo, 20) {
            assert_eq!(t.sat_branch, is_saturated_branch(&t, t.theta_sat));
            assert_eq!(t.eligible_sat, saturation_choice(&t, t.theta_sat).is_some());
            assert_eq!(t.avoided_sat, saturation_choice(&t, t.theta_sat));
        }
    }
}

#[test]
fn pct_sat_matches_flag_count() {
    let trials = training_trials(Algo::Baseline, 20);
    let report = aggregate(&trials, 0.8).unwrap();
    let flagged = trials.iter().filter(|t| t.sat_branch == Some(true)).count();
    let joined = trials.iter().filter(|t| t.joined()).count();
    assert_eq!(report.pct_sat, flagged as f64 / joined as f64);
}

#[test]
fn aggregation_ignores_trial_order() {
    let mut trials = training_trials(Algo::Scored, 16);
    let reference = aggregate(&trials, 0.8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        trials.shuffle(&mut rng);
        assert_eq!(aggregate(&trials, 0.8).unwrap(), reference);
    }
}

#[test]
fn comparing_a_report_with_itself_gains_nothing() {
    let report = aggregate(&training_trials(Algo::Baseline, 5), 0.8).unwrap();
    let gain = compare(&report, &report);
    assert_eq!(gain.delay_gain, Some(0.0));
    assert_eq!(gain.pdr_gain, 0.0);
    assert_eq!(gain.sat_reduction_pp, 0.0);
}

#[test]
fn report_fractions_stay_in_range() {
    for algo in Algo::ALL {
        let r = aggregate(&training_trials(algo, 10), 0.8).unwrap();
        for f in [r.mu_pdr, r.sigma_pdr, r.pct_sat] {
            assert!((0.0..=1.0).contains(&f));
        }
        assert_eq!(r.avoid_sat.is_some(), r.n_eligible_sat_trials > 0);
        assert!(r.sigma_d_ms.unwrap() >= 0.0);
    }
}

proptest! {
    #[test]
    fn mean_sd_is_order_free(mut v in proptest::collection::vec(-1e6f64..1e6, 1..50), seed in any::<u64>()) {
        let a = metrics::mean_sd(&v).unwrap();
        v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(a, metrics::mean_sd(&v).unwrap());
        prop_assert!(a.1 >= 0.0);
    }
}
