mod common;

use cifusion::ci::{
    classify_family, delta, ku_rule, solve_ci, solve_ci_det, solve_ci_trace, Branch, CostFunction,
    FamilyCase,
};
use cifusion::linalg::{loewner_compare, numerical_rank, SymMatrix, PSD_TOL};
use cifusion::problem::{estimate_from_rows, FusionProblem, PartialEstimate, SigmaPair};
use cifusion::sampling::{
    gaussian_vector, random_observation, random_pd, random_problem, seeded_rng, SimRng,
};
use common::{
    axis_pair, direct_cost, full_state_det, full_state_det_slope, full_state_pair, grid_minimum,
};
use nalgebra::DMatrix;
use rand::Rng;

const COSTS: [CostFunction; 2] = [CostFunction::Det, CostFunction::Trace];

/// `αΣ1 + (1 − α)Σ0` without the range check, for finite differences at the endpoints.
fn combo(pair: &SigmaPair, a: f64) -> SymMatrix {
    pair.sigma1
        .as_sym()
        .scaled(a)
        .add(&pair.sigma0.as_sym().scaled(1.0 - a))
}

/// A problem whose second estimate observes the full state with a small covariance,
/// so that `Σ0 ≻ Σ1` holds often.
fn dominated_problem(rng: &mut SimRng, n: usize) -> FusionProblem {
    let p1 = rng.random_range(1..=n);
    let h1 = random_observation(rng, p1, n);
    let h2 = random_observation(rng, n, n);
    let e1 = PartialEstimate::new(
        h1,
        gaussian_vector(rng, p1),
        random_pd(rng, p1, 10.0).scaled(50.0),
    )
    .unwrap();
    let e2 = PartialEstimate::new(
        h2,
        gaussian_vector(rng, n),
        random_pd(rng, n, 10.0).scaled(0.02),
    )
    .unwrap();
    FusionProblem::new(e1, e2).unwrap()
}

#[test]
fn family_members_are_unbiased_and_consistent() {
    let mut rng = seeded_rng(400);
    for _ in 0..100 {
        let problem = random_problem(&mut rng, 5);
        for cost in COSTS {
            let r = solve_ci(&problem, cost).unwrap();
            let n = problem.n();
            let unbias =
                &r.k1 * problem.est1().h() + &r.k2 * problem.est2().h() - DMatrix::identity(n, n);
            assert!(unbias.amax() <= 1e-10);
            let sigma = problem.sigma_pair().sigma_alpha(r.alpha).unwrap();
            let info = r.p_hat.as_sym().cholesky_inverse().unwrap();
            assert!((info.as_matrix() - sigma.as_matrix()).amax() <= 1e-9 * sigma.max_abs());
            let x = &r.k1 * problem.est1().x_hat() + &r.k2 * problem.est2().x_hat();
            assert!((x - &r.fused_x).amax() <= 1e-12 * r.fused_x.amax().max(1.0));
            assert!(r.p_hat.is_strict());
        }
    }
}

#[test]
fn parametrization_is_one_to_one() {
    let mut rng = seeded_rng(401);
    let grid: Vec<f64> = (1..10).map(|k| k as f64 / 10.0).collect();
    let mut checked = 0;
    while checked < 100 {
        let problem = random_problem(&mut rng, 4);
        if classify_family(&problem.sigma_pair()).unwrap() != FamilyCase::General {
            continue;
        }
        let rules: Vec<_> = grid
            .iter()
            .map(|&a| ku_rule(&problem, a).unwrap())
            .collect();
        for i in 0..rules.len() {
            for j in i + 1..rules.len() {
                let (a, b) = (&rules[i], &rules[j]);
                let diff = (&a.k1 - &b.k1)
                    .amax()
                    .max((&a.k2 - &b.k2).amax())
                    .max((a.p_hat.as_matrix() - b.p_hat.as_matrix()).amax());
                assert!(diff > 1e-8);
            }
        }
        checked += 1;
    }
}

#[test]
fn optimum_beats_every_grid_member() {
    let mut rng = seeded_rng(402);
    for _ in 0..60 {
        let problem = random_problem(&mut rng, 5);
        let pair = problem.sigma_pair();
        for cost in COSTS {
            let r = solve_ci(&problem, cost).unwrap();
            let best = direct_cost(cost, &pair.sigma_alpha(r.alpha).unwrap());
            assert!((best - r.cost_value).abs() <= 1e-9 * best.max(1.0));
            for k in 0..=1000 {
                let a = k as f64 / 1000.0;
                let v = cost
                    .evaluate_information(&pair.sigma_alpha(a).unwrap())
                    .value();
                assert!(
                    r.cost_value <= v + 1e-9,
                    "{cost} α*={} J={} grid α={a} J={v}",
                    r.alpha,
                    r.cost_value
                );
            }
        }
    }
}

#[test]
fn dominance_forces_invertible_full_observation() {
    let mut rng = seeded_rng(403);
    let mut seen = 0;
    for i in 0..300 {
        let n = rng.random_range(1..=4);
        let problem = if i % 2 == 0 {
            dominated_problem(&mut rng, n)
        } else {
            random_problem(&mut rng, 4)
        };
        let problem = if i % 4 == 0 {
            problem.swapped()
        } else {
            problem
        };
        let pair = problem.sigma_pair();
        let rel = loewner_compare(pair.sigma0.as_sym(), pair.sigma1.as_sym(), PSD_TOL).unwrap();
        if rel == cifusion::linalg::LoewnerRelation::Equal {
            continue;
        }
        if rel.is_ge() {
            seen += 1;
            assert_eq!(problem.p2(), problem.n());
            assert_eq!(numerical_rank(problem.est2().h(), 1e-10), problem.n());
        }
        if rel.is_le() {
            seen += 1;
            assert_eq!(problem.p1(), problem.n());
            assert_eq!(numerical_rank(problem.est1().h(), 1e-10), problem.n());
        }
    }
    assert!(seen > 50);
}

#[test]
fn corner_instances_select_endpoints() {
    let mut rng = seeded_rng(404);
    let mut seen = 0;
    while seen < 20 {
        let n = rng.random_range(1..=4);
        let problem = dominated_problem(&mut rng, n).swapped();
        if classify_family(&problem.sigma_pair()).unwrap() != FamilyCase::Sigma1Dominates {
            continue;
        }
        seen += 1;
        for cost in COSTS {
            let r = solve_ci(&problem, cost).unwrap();
            assert_eq!(r.alpha, 1.0);
            let (a, _) = grid_minimum(&problem, cost, 1001);
            assert_eq!(a, 1.0);
            assert!(ku_rule(&problem, 0.5).is_err());
        }
    }
}

#[test]
fn delta_sign_matches_finite_differences() {
    let mut rng = seeded_rng(405);
    let mut compared = 0;
    for _ in 0..200 {
        let problem = random_problem(&mut rng, 4);
        let pair = problem.sigma_pair();
        for (end, inward) in [(0.0, 1.0), (1.0, -1.0)] {
            let g = |a: f64| CostFunction::Det.evaluate_information(&combo(&pair, a));
            if !g(end).is_finite() {
                continue;
            }
            let d = delta(&pair, end);
            // keep the step small against the distance to singularity
            let reach = combo(&pair, end).min_eigenvalue() / pair.difference().max_abs();
            let h = 1e-4 * reach.min(1.0) * inward;
            let fd = (-3.0 * g(end).value() + 4.0 * g(end + h).value() - g(end + 2.0 * h).value())
                / (2.0 * h);
            let det = combo(&pair, end).determinant();
            let predicted = -d / (det * det);
            if predicted.abs() < 1e-3 * g(end).value() {
                continue;
            }
            assert_eq!(fd.signum(), predicted.signum());
            assert!(
                (fd - predicted).abs() <= 1e-3 * predicted.abs(),
                "fd {fd:e} predicted {predicted:e} g {:e} end {end} eig {:e}",
                g(end).value(),
                combo(&pair, end).min_eigenvalue()
            );
            compared += 1;
        }
    }
    assert!(compared > 100);
}

#[test]
fn full_state_pair_derivative_formula() {
    let pair = full_state_pair().sigma_pair();
    for a in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let h = 1e-5;
        let g = |x: f64| {
            CostFunction::Det
                .evaluate_information(&combo(&pair, x))
                .value()
        };
        let fd = (g(a + h) - g(a - h)) / (2.0 * h);
        assert!((fd - full_state_det_slope(a)).abs() < 1e-6);
        assert!((g(a) - full_state_det(a)).abs() < 1e-14);
    }
}

#[test]
fn full_state_pair_trace_optimum_matches_grid() {
    let problem = full_state_pair();
    let r = solve_ci_trace(&problem).unwrap();
    let (a, _) = grid_minimum(&problem, CostFunction::Trace, 100_001);
    assert!((r.alpha - a).abs() < 1e-4);
    assert!(r.alpha > 0.0 && r.alpha < 1.0);
    assert!(r.diagnostics.fixed_point_residual.unwrap() <= 1e-6);
}

#[test]
fn axis_pair_det_matches_grid() {
    let problem = axis_pair();
    let r = solve_ci_det(&problem).unwrap();
    assert_eq!(r.diagnostics.branch, Branch::DeltaRoot);
    let (a, _) = grid_minimum(&problem, CostFunction::Det, 100_001);
    assert!((r.alpha - a).abs() < 1e-4);
}

#[test]
fn scalar_case_is_consistent_with_grid() {
    let problem = FusionProblem::new(
        estimate_from_rows(1, 1, &[1.0], &[2.0], &[1.0]).unwrap(),
        estimate_from_rows(1, 1, &[1.0], &[3.0], &[4.0]).unwrap(),
    )
    .unwrap();
    let r = solve_ci_trace(&problem).unwrap();
    let (a, _) = grid_minimum(&problem, CostFunction::Trace, 100_001);
    assert_eq!(r.alpha, a);
    // r2 = 0 at α = 1, so the ratio r1/(r1 + r2) is 1 as well
    assert_eq!(r.diagnostics.fixed_point_residual, Some(0.0));
    assert_eq!(r.fused_x[0], 2.0);
}

#[test]
fn trace_fixed_point_holds() {
    let mut rng = seeded_rng(406);
    let mut interior = 0;
    for _ in 0..200 {
        let problem = random_problem(&mut rng, 5);
        let r = solve_ci_trace(&problem).unwrap();
        let res = r.diagnostics.fixed_point_residual.unwrap();
        if r.alpha > 0.0 && r.alpha < 1.0 {
            interior += 1;
            assert!(res <= 1e-6, "residual {res:e} at α = {}", r.alpha);
        } else {
            let r1 = problem.est1().p_hat().as_sym().congruence(&r.k1).trace();
            let r2 = problem.est2().p_hat().as_sym().congruence(&r.k2).trace();
            if r.alpha == 0.0 {
                assert_eq!(r1, 0.0);
            } else {
                assert_eq!(r2, 0.0);
            }
        }
    }
    assert!(interior > 100);
}

#[test]
fn swapping_estimates_mirrors_alpha() {
    let mut rng = seeded_rng(407);
    for _ in 0..100 {
        let problem = random_problem(&mut rng, 5);
        for cost in COSTS {
            let a = solve_ci(&problem, cost).unwrap();
            let b = solve_ci(&problem.swapped(), cost).unwrap();
            assert!(
                (a.alpha + b.alpha - 1.0).abs() < 1e-6,
                "{} vs {}",
                a.alpha,
                b.alpha
            );
            assert!((a.cost_value - b.cost_value).abs() <= 1e-9 * a.cost_value.max(1.0));
        }
    }
}
