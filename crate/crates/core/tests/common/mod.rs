#![allow(dead_code)]

use cifusion::joint::JointCovariance;
use cifusion::linalg::cross_from_factor;
use cifusion::linalg::{SymMatrix, PSD_TOL};
use cifusion::problem::{estimate_from_rows, FusionProblem};
use cifusion::sampling::{gaussian_matrix, random_contraction, SimRng};
use nalgebra::DMatrix;
use rand::Rng;

pub const ID2: [f64; 4] = [1.0, 0.0, 0.0, 1.0];

pub fn axis_pair() -> FusionProblem {
    FusionProblem::new(
        estimate_from_rows(1, 2, &[1.0, 0.0], &[0.0], &[1.0]).unwrap(),
        estimate_from_rows(1, 2, &[0.0, 1.0], &[0.0], &[1.0]).unwrap(),
    )
    .unwrap()
}

pub fn full_state_pair() -> FusionProblem {
    FusionProblem::new(
        estimate_from_rows(2, 2, &ID2, &[0.0, 0.0], &ID2).unwrap(),
        estimate_from_rows(2, 2, &ID2, &[0.0, 0.0], &[1.25, 0.0, 0.0, 0.1]).unwrap(),
    )
    .unwrap()
}

/// `det((Σα)⁻¹)` for the full-state pair, written out by hand: `Σα = diag(0.8 + 0.2α, 10 − 9α)`.
pub fn full_state_det(alpha: f64) -> f64 {
    1.0 / ((0.8 + 0.2 * alpha) * (10.0 - 9.0 * alpha))
}

/// Derivative of [`full_state_det`] in closed form.
pub fn full_state_det_slope(alpha: f64) -> f64 {
    10.0 * (9.0 * alpha + 13.0) / ((9.0 * alpha - 10.0).powi(2) * (alpha + 4.0).powi(2))
}

/// Random `K` with `K H = I`: `K = H⁺ + Y (I − H H⁺)` for Gaussian `Y`.
pub fn random_unbiased_k(rng: &mut SimRng, h: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = h.shape();
    let hth = (h.transpose() * h).try_inverse().expect("full column rank");
    let pinv = &hth * h.transpose();
    let proj = DMatrix::identity(m, m) - h * &pinv;
    let scale: f64 = rng.random_range(0.1..3.0);
    pinv + gaussian_matrix(rng, n, m) * scale * proj
}

/// Random PD joint with the problem's `P̂i` on the diagonal and `σmax(X) = radius`.
pub fn random_joint(rng: &mut SimRng, problem: &FusionProblem, radius: f64) -> JointCovariance {
    let (a, b) = (problem.est1().p_hat(), problem.est2().p_hat());
    let x = random_contraction(rng, problem.p1(), problem.p2(), radius);
    let p12 = cross_from_factor(a, b, &x).unwrap();
    JointCovariance::new(a.as_sym().clone(), b.as_sym().clone(), p12, PSD_TOL).unwrap()
}

/// Dense grid of the extended cost `α ↦ J̃(Σα⁻¹)`; returns `(argmin, min)`.
pub fn grid_minimum(
    problem: &FusionProblem,
    cost: cifusion::ci::CostFunction,
    points: usize,
) -> (f64, f64) {
    let pair = problem.sigma_pair();
    let mut best = (f64::NAN, f64::INFINITY);
    for k in 0..points {
        let a = k as f64 / (points - 1) as f64;
        let v = cost
            .evaluate_information(&pair.sigma_alpha(a).unwrap())
            .value();
        if v < best.1 {
            best = (a, v);
        }
    }
    best
}

/// `det` and `trace` of `P` straight from the inverse, as an independent check.
pub fn direct_cost(cost: cifusion::ci::CostFunction, sigma: &SymMatrix) -> f64 {
    let inv = sigma
        .as_matrix()
        .clone()
        .try_inverse()
        .expect("nonsingular");
    match cost {
        cifusion::ci::CostFunction::Det => inv.determinant(),
        cifusion::ci::CostFunction::Trace => inv.trace(),
    }
}

pub const MUTATIONS: usize = 5;

/// Non-conservative variants of a family member.
///
/// 0: `P̂/2`; 1: `0.8 P̂`; 2: `P̂ = Q1Q1ᵀ + Q2Q2ᵀ`; 3: Gauß-Markov weights for
/// an assumed zero cross-covariance with their nominal covariance;
/// 4: `P̂` halved along its leading eigenvector.
pub fn mutate(
    problem: &FusionProblem,
    r: &cifusion::ci::FusionResult,
    kind: usize,
) -> cifusion::verify::FusionRule {
    use cifusion::verify::{FusionRule, QPair};
    let mut rule = FusionRule::from_rule(r);
    match kind {
        0 => rule.p_hat = rule.p_hat.scaled(0.5),
        1 => rule.p_hat = rule.p_hat.scaled(0.8),
        2 => {
            let q = QPair::new(r, problem).unwrap();
            rule.p_hat =
                SymMatrix::new(&q.q1 * q.q1.transpose() + &q.q2 * q.q2.transpose()).unwrap();
        }
        3 => {
            let joint = JointCovariance::new(
                problem.est1().p_hat().as_sym().clone(),
                problem.est2().p_hat().as_sym().clone(),
                DMatrix::zeros(problem.p1(), problem.p2()),
                PSD_TOL,
            )
            .unwrap();
            let gm = cifusion::known_cross::optimal_fusion_known_cross(problem, &joint).unwrap();
            rule.k1 = gm.k1();
            rule.k2 = gm.k2();
            rule.p_hat = gm.p_star.as_sym().clone();
        }
        _ => {
            let spec = rule.p_hat.spectrum();
            let v = spec.vectors.column(spec.values.len() - 1).into_owned();
            let bump = SymMatrix::new(&v * v.transpose() * (0.5 * spec.max())).unwrap();
            rule.p_hat = rule.p_hat.sub(&bump);
        }
    }
    rule
}

/// Random problem whose optimal α is interior for `cost`.
pub fn interior_instance(
    rng: &mut SimRng,
    max_n: usize,
    cost: cifusion::ci::CostFunction,
) -> (FusionProblem, cifusion::ci::FusionResult) {
    loop {
        let problem = cifusion::sampling::random_problem(rng, max_n);
        let r = cifusion::ci::solve_ci(&problem, cost).unwrap();
        if r.alpha > 0.0 && r.alpha < 1.0 {
            return (problem, r);
        }
    }
}
