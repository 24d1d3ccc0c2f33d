use std::ffi::{CStr, CString};
use std::ptr;

use predmdp_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(predmdp_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

const TWO_STATE: &str = "2 2 0.9\n0.1 0.8 0.2\n0.0 0.3 0.7\n1.0 0.6 0.4\n0.5 0.1 0.9\n";

fn two_state() -> *mut PredmdpMdp {
    let text = CString::new(TWO_STATE).unwrap();
    let mut mdp = ptr::null_mut();
    assert_eq!(unsafe { predmdp_mdp_from_text(text.as_ptr(), &mut mdp) }, PredmdpStatus::Ok);
    mdp
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(predmdp_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn value_iteration_matches_exact_policy_value() {
    let mdp = two_state();
    unsafe {
        assert_eq!(predmdp_mdp_num_states(mdp), 2);
        assert_eq!(predmdp_mdp_num_actions(mdp), 2);
        assert_eq!(predmdp_mdp_discount(mdp), 0.9);
        let mut v = [0.0; 2];
        let mut iters = 0;
        let status = predmdp_value_iteration(mdp, 1e-10, 100_000, v.as_mut_ptr(), 2, &mut iters);
        assert_eq!(status, PredmdpStatus::Ok);
        // Optimal policy (1, 0); its value solves a 2×2 system exactly.
        assert!((v[0] - 630.0 / 127.0).abs() < 1e-8, "{v:?}");
        assert!((v[1] - 730.0 / 127.0).abs() < 1e-8, "{v:?}");
        assert!(iters > 0);
        predmdp_mdp_free(mdp);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let bad = [0.5, 0.4];
        let reward = [0.0];
        let mut mdp = ptr::null_mut();
        let status = predmdp_mdp_new(1, 1, bad.as_ptr(), reward.as_ptr(), 0.9, &mut mdp);
        assert_eq!(status, PredmdpStatus::InvalidMdp);
        assert!(mdp.is_null());
        assert!(!last_error().is_empty());

        let status = predmdp_mdp_from_text(ptr::null(), &mut mdp);
        assert_eq!(status, PredmdpStatus::NullPointer);
        assert!(last_error().contains("text"));

        let garbage = CString::new("2 2\n").unwrap();
        assert_eq!(predmdp_mdp_from_text(garbage.as_ptr(), &mut mdp), PredmdpStatus::Parse);

        let good = two_state();
        let mut small = [0.0; 1];
        let status = predmdp_value_iteration(good, 1e-8, 1000, small.as_mut_ptr(), 1, ptr::null_mut());
        assert_eq!(status, PredmdpStatus::BufferTooSmall);

        let mut scenarios = ptr::null_mut();
        let status = predmdp_scenarios_sample(good, 1, ptr::null(), 0, 99, 0.0, 4, 1, &mut scenarios);
        assert_eq!(status, PredmdpStatus::InvalidArgument);
        predmdp_mdp_free(good);
        predmdp_mdp_free(ptr::null_mut());
    }
}

#[test]
fn bayes_with_no_predictable_actions_equals_classical() {
    unsafe {
        let mut mdp = ptr::null_mut();
        assert_eq!(predmdp_mdp_random(6, 3, 0.9, 11, &mut mdp), PredmdpStatus::Ok);
        let mut scenarios = ptr::null_mut();
        let status = predmdp_scenarios_sample(mdp, 1, ptr::null(), 0, PREDMDP_NOISE_NONE, 0.0, 3, 5, &mut scenarios);
        assert_eq!(status, PredmdpStatus::Ok, "{}", last_error());
        assert_eq!(predmdp_scenarios_len(scenarios), 3);
        let mut classical = [0.0; 6];
        let mut bayes = [0.0; 6];
        let tol = 1e-8;
        assert_eq!(
            predmdp_value_iteration(mdp, tol, 100_000, classical.as_mut_ptr(), 6, ptr::null_mut()),
            PredmdpStatus::Ok
        );
        assert_eq!(
            predmdp_bayes_value_iteration(mdp, scenarios, tol, 100_000, bayes.as_mut_ptr(), 6, ptr::null_mut()),
            PredmdpStatus::Ok
        );
        for (a, b) in classical.iter().zip(&bayes) {
            assert!((a - b).abs() <= 2.0 * tol, "{a} vs {b}");
        }
        predmdp_scenarios_free(scenarios);
        predmdp_mdp_free(mdp);
    }
}

#[test]
fn exact_law_and_oracle_planning() {
    unsafe {
        let mdp = two_state();
        let actions = [0usize, 1];
        let mut exact = ptr::null_mut();
        let status = predmdp_scenarios_exact(mdp, 2, actions.as_ptr(), 2, 1000, &mut exact);
        assert_eq!(status, PredmdpStatus::Ok, "{}", last_error());
        // Two states × two actions, each with two successors, over two steps.
        assert_eq!(predmdp_scenarios_len(exact), 256);
        let status = predmdp_scenarios_exact(mdp, 2, actions.as_ptr(), 2, 10, &mut exact);
        assert_eq!(status, PredmdpStatus::EnumerationBudget);
        predmdp_scenarios_free(exact);

        let mut oracle = ptr::null_mut();
        let status = predmdp_oracle_new(mdp, 3, actions.as_ptr(), 2, PREDMDP_NOISE_UNIFORM_MIX, 0.1, 9, &mut oracle);
        assert_eq!(status, PredmdpStatus::Ok, "{}", last_error());
        let terminal = [0.0, 0.0];
        let mut plan = [usize::MAX; 3];
        let mut ret = f64::NAN;
        let status = predmdp_oracle_plan(oracle, 0, terminal.as_ptr(), 2, plan.as_mut_ptr(), 3, &mut ret);
        assert_eq!(status, PredmdpStatus::Ok, "{}", last_error());
        assert!(plan.iter().all(|&a| a < 2));
        assert!(ret.is_finite() && ret >= 0.0);
        let status = predmdp_oracle_plan(oracle, 0, terminal.as_ptr(), 1, plan.as_mut_ptr(), 3, &mut ret);
        assert_eq!(status, PredmdpStatus::ShapeMismatch);
        predmdp_oracle_free(oracle);
        predmdp_mdp_free(mdp);
    }
}

#[test]
fn budget_full_coverage_has_minimal_d1() {
    let inputs = PredmdpBudgetInputs {
        gamma: 0.9,
        horizon: 2,
        num_states: 10,
        num_actions: 5,
        num_predictable: 5,
        delta: 0.1,
        epsilon: 0.1,
        alpha: 0.5,
    };
    let mut out = PredmdpBudget::default();
    assert_eq!(unsafe { predmdp_compute_budget(&inputs, &mut out) }, PredmdpStatus::Ok);
    assert_eq!(out.d1, 50);
    assert_eq!(out.d2, out.n2);
    let bad = PredmdpBudgetInputs { alpha: 1.5, ..inputs };
    assert_eq!(unsafe { predmdp_compute_budget(&bad, &mut out) }, PredmdpStatus::InvalidArgument);
    assert!(last_error().contains("alpha"), "{}", last_error());
}
