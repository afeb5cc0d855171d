mod common;

use cifusion::ci::{solve_ci, CostFunction};
use cifusion::error::Error;
use cifusion::linalg::psd_certify;
use cifusion::problem::FusionProblem;
use cifusion::sampling::{random_problem, seeded_rng};
use cifusion::verify::{
    adversarial_x_search, lmi_certificate_tol, lmi_search, monte_carlo_joint,
    monte_carlo_joint_with, petersen_certificate, petersen_value, tau_certificate,
    violation_tolerance, FusionRule, JointSampling, LinearFusionRule, QPair, VERIFY_TOL,
};
use common::{interior_instance, mutate, MUTATIONS};

/// Runs the LMI, Petersen and direct scalar checks at `alpha` and returns their verdicts.
fn verdicts<R: LinearFusionRule>(
    rule: &R,
    problem: &FusionProblem,
    alpha: f64,
) -> (bool, bool, bool) {
    let lmi = lmi_certificate_tol(rule, problem, alpha, VERIFY_TOL)
        .unwrap()
        .passed;
    let tau = tau_certificate(rule, problem, alpha).unwrap().passed;
    let petersen = if alpha > 0.0 && alpha < 1.0 {
        let q = QPair::new(rule, problem).unwrap();
        let at_tau = petersen_value(&q, rule.p_hat(), 1.0 / alpha - 1.0)
            <= violation_tolerance(rule.p_hat());
        match petersen_certificate(rule, problem) {
            Ok(outcome) => outcome.is_feasible() && at_tau,
            Err(Error::DegenerateQ(_)) => tau,
            Err(e) => panic!("{e}"),
        }
    } else {
        tau
    };
    (lmi, petersen, tau)
}

#[test]
fn certificates_agree() {
    let mut rng = seeded_rng(500);
    let mut interior = 0;
    for i in 0..200 {
        let problem = random_problem(&mut rng, 5);
        let cost = if i % 2 == 0 {
            CostFunction::Det
        } else {
            CostFunction::Trace
        };
        let r = solve_ci(&problem, cost).unwrap();
        interior += (r.alpha > 0.0 && r.alpha < 1.0) as usize;
        assert_eq!(verdicts(&r, &problem, r.alpha), (true, true, true));
        for factor in [0.5, 0.95, 1.5] {
            let mut rule = FusionRule::from_rule(&r);
            rule.p_hat = rule.p_hat.scaled(factor);
            let (lmi, petersen, tau) = verdicts(&rule, &problem, r.alpha);
            assert_eq!(lmi, petersen, "factor {factor}, α = {}", r.alpha);
            assert_eq!(lmi, tau, "factor {factor}, α = {}", r.alpha);
            assert_eq!(lmi, factor > 1.0);
        }
    }
    assert!(interior > 100);
}

#[test]
fn degenerate_q_cases_use_endpoint_branches() {
    let problem = common::full_state_pair();
    let r = solve_ci(&problem, CostFunction::Det).unwrap();
    assert_eq!(r.alpha, 0.0);
    assert!(matches!(
        petersen_certificate(&r, &problem),
        Err(Error::DegenerateQ(_))
    ));
    assert_eq!(verdicts(&r, &problem, 0.0), (true, true, true));
    // the Q1 = 0 branch still rejects a shrunken covariance
    let mut rule = FusionRule::from_rule(&r);
    rule.p_hat = rule.p_hat.scaled(0.9);
    assert_eq!(verdicts(&rule, &problem, 0.0), (false, false, false));
    // and α = 1 cannot certify a rule whose second gain is nonzero
    assert!(!tau_certificate(&r, &problem, 1.0).unwrap().passed);
    assert!(
        !lmi_certificate_tol(&r, &problem, 1.0, VERIFY_TOL)
            .unwrap()
            .passed
    );
}

#[test]
fn sampling_finds_no_violation_on_ci_solutions() {
    let mut rng = seeded_rng(501);
    for i in 0..20 {
        let problem = random_problem(&mut rng, 5);
        let r = solve_ci(
            &problem,
            if i % 2 == 0 {
                CostFunction::Det
            } else {
                CostFunction::Trace
            },
        )
        .unwrap();
        let tol = violation_tolerance(r.p_hat.as_sym());
        assert!(adversarial_x_search(&r, &problem, 1000, i).unwrap() <= tol);
        assert!(monte_carlo_joint(&r, &problem, 1000, i).unwrap() <= tol);
    }
}

#[test]
fn exact_and_shrunken_sampling_agree_on_mutants() {
    let mut rng = seeded_rng(502);
    for i in 0..10 {
        let (problem, r) = interior_instance(&mut rng, 4, CostFunction::Det);
        let rule = mutate(&problem, &r, i % MUTATIONS);
        let tol = violation_tolerance(rule.p_hat());
        let exact =
            monte_carlo_joint_with(&rule, &problem, 1000, i as u64, JointSampling::Exact).unwrap();
        let shrunk =
            monte_carlo_joint_with(&rule, &problem, 1000, i as u64, JointSampling::Shrunken)
                .unwrap();
        assert_eq!(
            exact > tol,
            shrunk > tol,
            "mutant {i}: exact {exact:e}, shrunken {shrunk:e}"
        );
        assert!(exact > tol, "mutant {i} should be caught");

        let exact =
            monte_carlo_joint_with(&r, &problem, 1000, i as u64, JointSampling::Exact).unwrap();
        let shrunk =
            monte_carlo_joint_with(&r, &problem, 1000, i as u64, JointSampling::Shrunken).unwrap();
        assert!(exact <= tol && shrunk <= tol);
    }
}

#[test]
fn mutants_fail_the_lmi_for_every_alpha() {
    let mut rng = seeded_rng(503);
    for i in 0..20 {
        let (problem, r) = interior_instance(&mut rng, 5, CostFunction::Trace);
        let rule = mutate(&problem, &r, i % MUTATIONS);
        assert!(!lmi_search(&rule, &problem).unwrap().passed);
        assert!(lmi_search(&r, &problem).unwrap().passed);
    }
}

#[test]
fn fused_covariance_is_strictly_positive() {
    let mut rng = seeded_rng(504);
    for _ in 0..100 {
        let problem = random_problem(&mut rng, 5);
        for cost in [CostFunction::Det, CostFunction::Trace] {
            let r = solve_ci(&problem, cost).unwrap();
            assert!(psd_certify(r.p_hat.as_sym(), 1e-9).unwrap().is_strict());
        }
    }
}
