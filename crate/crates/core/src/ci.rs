//! The Kahan-Uhlmann fusion family and optimal selection of its parameter.
//!
//! For `α ∈ [0, 1]` the family member is `P̂ = Σα⁻¹` with
//! `Σα = α Σ1 + (1 − α) Σ0`, `K1 = α P̂ H1ᵀ P̂1⁻¹` and
//! `K2 = (1 − α) P̂ H2ᵀ P̂2⁻¹`.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::ellipsoids::{golden_max, kahan_interpose, Ellipsoid};
use crate::error::{Error, Result};
use crate::linalg::{
    adjugate, loewner_compare, pd_certify, LoewnerRelation, PsdMatrix, SymMatrix, PSD_TOL,
};
use crate::problem::{FusionProblem, SigmaPair};
use crate::verify::{lmi_certificate, LinearFusionRule};

/// `Σ` counts as singular when `λmin ≤ SINGULAR_RTOL · λmax`.
pub const SINGULAR_RTOL: f64 = 1e-12;

/// Final bracket width for bisection and golden section.
pub const ALPHA_WIDTH: f64 = 1e-12;

/// Iteration cap for golden section.
pub const GOLDEN_CAP: usize = 200;

const SCAN_POINTS: usize = 65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CostFunction {
    Det,
    Trace,
}

impl CostFunction {
    /// `J(P)` for a covariance `P`.
    pub fn evaluate(self, p: &SymMatrix) -> f64 {
        match self {
            CostFunction::Det => p.determinant(),
            CostFunction::Trace => p.trace(),
        }
    }

    /// `J̃(Σ⁻¹)`, infinite when `Σ` is singular.
    pub fn evaluate_information(self, sigma: &SymMatrix) -> ExtendedCost {
        let spec = sigma.spectrum();
        if is_singular_spectrum(spec.min(), spec.max()) {
            return ExtendedCost::Infinite;
        }
        let inv = spec.values.iter().map(|l| 1.0 / l);
        ExtendedCost::Finite(match self {
            CostFunction::Det => inv.product(),
            CostFunction::Trace => inv.sum(),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CostFunction::Det => "det",
            CostFunction::Trace => "trace",
        }
    }
}

impl fmt::Display for CostFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CostFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "det" | "determinant" => Ok(CostFunction::Det),
            "trace" | "tr" => Ok(CostFunction::Trace),
            other => Err(Error::InvalidInput(format!(
                "unknown cost function '{other}'"
            ))),
        }
    }
}

/// A cost value on the extended reals; `Finite` values order below `Infinite`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum ExtendedCost {
    Finite(f64),
    Infinite,
}

impl ExtendedCost {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedCost::Finite(_))
    }

    /// The value as an `f64`, with `Infinite` mapped to `f64::INFINITY`.
    pub fn value(self) -> f64 {
        match self {
            ExtendedCost::Finite(v) => v,
            ExtendedCost::Infinite => f64::INFINITY,
        }
    }
}

fn is_singular_spectrum(min: f64, max: f64) -> bool {
    max <= 0.0 || min <= SINGULAR_RTOL * max
}

pub fn is_singular(sigma: &SymMatrix) -> bool {
    let spec = sigma.spectrum();
    is_singular_spectrum(spec.min(), spec.max())
}

/// Which admissible set the family parameter ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyCase {
    /// `Σ0 = Σ1`: every `α` gives the same rule.
    Equal,
    /// `Σ0 ≻ Σ1`: only `α = 0`.
    Sigma0Dominates,
    /// `Σ1 ≻ Σ0`: only `α = 1`.
    Sigma1Dominates,
    /// Any `α` with nonsingular `Σα`.
    General,
}

pub fn classify_family(pair: &SigmaPair) -> Result<FamilyCase> {
    Ok(
        match loewner_compare(pair.sigma0.as_sym(), pair.sigma1.as_sym(), PSD_TOL)? {
            LoewnerRelation::Equal => FamilyCase::Equal,
            LoewnerRelation::StrictlyGreater => FamilyCase::Sigma0Dominates,
            LoewnerRelation::StrictlyLess => FamilyCase::Sigma1Dominates,
            _ => FamilyCase::General,
        },
    )
}

/// How a solver arrived at its `α`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Supplied by the caller.
    Fixed,
    /// `Σ0 = Σ1`; the midpoint is returned.
    Degenerate,
    /// `Δ(0) ≤ 0` with `Σ0` nonsingular.
    DeltaLower,
    /// `Δ(1) ≥ 0` with `Σ1` nonsingular.
    DeltaUpper,
    /// Root of `Δ` inside `(0, 1)`.
    DeltaRoot,
    /// Forced by a strict Löwner ordering of `Σ0` and `Σ1`.
    Corner,
    /// Numerical minimization of the trace cost.
    Minimized,
}

impl Branch {
    pub fn label(self) -> &'static str {
        match self {
            Branch::Fixed => "fixed",
            Branch::Degenerate => "degenerate",
            Branch::DeltaLower => "delta_lower",
            Branch::DeltaUpper => "delta_upper",
            Branch::DeltaRoot => "delta_root",
            Branch::Corner => "corner",
            Branch::Minimized => "minimized",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    pub branch: Branch,
    pub family_case: FamilyCase,
    /// `‖K1 H1 + K2 H2 − I‖max`.
    pub unbiasedness_residual: f64,
    /// `‖P̂ Σα − I‖max`.
    pub information_residual: f64,
    /// `|α − r1/(r1 + r2)|` with `ri = sqrt(tr(Ki P̂i Kiᵀ))`; absent if `r1 = r2 = 0`.
    pub fixed_point_residual: Option<f64>,
    /// `(Δ(0), Δ(1))` for the determinant solver.
    pub delta_endpoints: Option<(f64, f64)>,
    /// Smallest eigenvalue of the LMI block, set by [`solve_ci`].
    pub lmi_min_eig: Option<f64>,
    pub note: Option<String>,
}

/// A member of the family together with its estimate and cost.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionResult {
    pub alpha: f64,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub p_hat: PsdMatrix,
    pub fused_x: DVector<f64>,
    pub cost: CostFunction,
    pub cost_value: f64,
    pub diagnostics: Diagnostics,
}

impl LinearFusionRule for FusionResult {
    fn k1(&self) -> &DMatrix<f64> {
        &self.k1
    }

    fn k2(&self) -> &DMatrix<f64> {
        &self.k2
    }

    fn p_hat(&self) -> &SymMatrix {
        self.p_hat.as_sym()
    }
}

fn check_family(case: FamilyCase, alpha: f64) -> Result<()> {
    let reject = |reason: &str| {
        Err(Error::InvalidFamilyParameter {
            alpha,
            reason: reason.into(),
        })
    };
    match case {
        FamilyCase::Sigma0Dominates if alpha != 0.0 => reject("Σ0 ≻ Σ1 admits only α = 0"),
        FamilyCase::Sigma1Dominates if alpha != 1.0 => reject("Σ1 ≻ Σ0 admits only α = 1"),
        _ => Ok(()),
    }
}

/// The family member for `alpha` with the determinant as reported cost.
pub fn ku_rule(problem: &FusionProblem, alpha: f64) -> Result<FusionResult> {
    ku_rule_with_cost(problem, alpha, CostFunction::Det)
}

pub fn ku_rule_with_cost(
    problem: &FusionProblem,
    alpha: f64,
    cost: CostFunction,
) -> Result<FusionResult> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange { value: alpha });
    }
    let pair = problem.sigma_pair();
    let case = classify_family(&pair)?;
    check_family(case, alpha)?;
    build(problem, &pair, alpha, cost, case, Branch::Fixed)
}

fn build(
    problem: &FusionProblem,
    pair: &SigmaPair,
    alpha: f64,
    cost: CostFunction,
    family_case: FamilyCase,
    branch: Branch,
) -> Result<FusionResult> {
    let sigma = pair.combine(alpha);
    if is_singular(&sigma) {
        return Err(Error::SingularSigma { alpha });
    }
    let p_hat = sigma
        .cholesky_inverse()
        .map_err(|_| Error::SingularSigma { alpha })?;
    let p_hat = pd_certify(&p_hat, PSD_TOL).map_err(|_| Error::SingularSigma { alpha })?;
    let (e1, e2) = (problem.est1(), problem.est2());
    let w1 = e1.p_hat().as_sym().cholesky_inverse()?;
    let w2 = e2.p_hat().as_sym().cholesky_inverse()?;
    let k1 = p_hat.as_matrix() * e1.h().transpose() * w1.as_matrix() * alpha;
    let k2 = p_hat.as_matrix() * e2.h().transpose() * w2.as_matrix() * (1.0 - alpha);
    let fused_x = &k1 * e1.x_hat() + &k2 * e2.x_hat();

    let n = problem.n();
    let eye = DMatrix::<f64>::identity(n, n);
    let unbiasedness_residual = (&k1 * e1.h() + &k2 * e2.h() - &eye).amax();
    let information_residual = (p_hat.as_matrix() * sigma.as_matrix() - &eye).amax();
    let r1 = e1.p_hat().as_sym().congruence(&k1).trace().max(0.0).sqrt();
    let r2 = e2.p_hat().as_sym().congruence(&k2).trace().max(0.0).sqrt();
    let fixed_point_residual = (r1 + r2 > 0.0).then(|| (alpha - r1 / (r1 + r2)).abs());
    let cost_value = cost.evaluate_information(&sigma).value();

    Ok(FusionResult {
        alpha,
        k1,
        k2,
        p_hat,
        fused_x,
        cost,
        cost_value,
        diagnostics: Diagnostics {
            branch,
            family_case,
            unbiasedness_residual,
            information_residual,
            fixed_point_residual,
            delta_endpoints: None,
            lmi_min_eig: None,
            note: None,
        },
    })
}

/// `Δ(α) = tr(adj(Σα)(Σ1 − Σ0))`, the derivative of `det Σα`.
pub fn delta(pair: &SigmaPair, alpha: f64) -> f64 {
    let adj = adjugate(&pair.combine(alpha));
    (adj.as_matrix() * pair.difference().as_matrix()).trace()
}

/// Coefficients of the polynomial `Δ` in ascending powers of `α`.
///
/// `Δ` has degree at most `n − 1`; it is interpolated at `n` equispaced
/// nodes in `[0, 1]`.
pub fn delta_coefficients(pair: &SigmaPair) -> Vec<f64> {
    let n = pair.sigma1.dim();
    if n == 1 {
        return vec![delta(pair, 0.0)];
    }
    let nodes: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64).collect();
    let vander = DMatrix::from_fn(n, n, |i, j| nodes[i].powi(j as i32));
    let values = DVector::from_iterator(n, nodes.iter().map(|&a| delta(pair, a)));
    let coeffs = vander
        .lu()
        .solve(&values)
        .expect("Vandermonde on distinct nodes");
    coeffs.iter().copied().collect()
}

fn degenerate(
    problem: &FusionProblem,
    pair: &SigmaPair,
    cost: CostFunction,
) -> Result<FusionResult> {
    let mut r = build(
        problem,
        pair,
        0.5,
        cost,
        FamilyCase::Equal,
        Branch::Degenerate,
    )?;
    r.diagnostics.note = Some("degenerate: any alpha optimal".into());
    Ok(r)
}

/// Determinant-optimal member of the family.
///
/// `α* = 0` if `Δ(0) ≤ 0`, `α* = 1` if `Δ(1) ≥ 0`, otherwise the root of `Δ`
/// in `(0, 1)` by bisection. An endpoint branch is only taken when `Σα` is
/// nonsingular there: with `rank Σ0 ≤ n − 2` the adjugate vanishes and
/// `Δ(0) = 0` although the cost at `α = 0` is infinite. Such endpoints are
/// treated as lying on the side where `Δ > 0` (resp. `Δ < 0`).
pub fn solve_ci_det(problem: &FusionProblem) -> Result<FusionResult> {
    let pair = problem.sigma_pair();
    let case = classify_family(&pair)?;
    if case == FamilyCase::Equal {
        return degenerate(problem, &pair, CostFunction::Det);
    }
    let d0 = delta(&pair, 0.0);
    let d1 = delta(&pair, 1.0);
    let sing0 = is_singular(pair.sigma0.as_sym());
    let sing1 = is_singular(pair.sigma1.as_sym());
    let (alpha, branch) = if !sing0 && d0 <= 0.0 {
        (0.0, Branch::DeltaLower)
    } else if !sing1 && d1 >= 0.0 {
        (1.0, Branch::DeltaUpper)
    } else {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > ALPHA_WIDTH {
            let mid = 0.5 * (lo + hi);
            if delta(&pair, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi), Branch::DeltaRoot)
    };
    check_family(case, alpha)?;
    let mut r = build(problem, &pair, alpha, CostFunction::Det, case, branch)?;
    r.diagnostics.delta_endpoints = Some((d0, d1));
    Ok(r)
}

/// Trace-optimal member of the family.
///
/// Singular endpoints have infinite cost. Starting from `α = 1/2`, the
/// bracket end next to a singular endpoint moves geometrically towards it
/// until the cost exceeds the midpoint cost. A 65-point scan of the bracket
/// picks a cell, golden section refines it, and a bisection on the
/// derivative `−tr(P̂ (Σ1 − Σ0) P̂)` polishes the result. The finite
/// endpoints compete with the interior candidate.
pub fn solve_ci_trace(problem: &FusionProblem) -> Result<FusionResult> {
    let cost = CostFunction::Trace;
    let pair = problem.sigma_pair();
    let case = classify_family(&pair)?;
    let corner = |alpha| build(problem, &pair, alpha, cost, case, Branch::Corner);
    match case {
        FamilyCase::Equal => return degenerate(problem, &pair, cost),
        FamilyCase::Sigma0Dominates => return corner(0.0),
        FamilyCase::Sigma1Dominates => return corner(1.0),
        FamilyCase::General => {}
    }

    let j = |a: f64| cost.evaluate_information(&pair.combine(a)).value();
    let mid = j(0.5);
    let shrink = |end: f64| -> f64 {
        if j(end).is_finite() {
            return end;
        }
        let mut gap = 0.25;
        loop {
            let probe = if end == 0.0 { gap } else { 1.0 - gap };
            if j(probe) > mid || gap < 1e-300 {
                return probe;
            }
            gap *= 0.5;
        }
    };
    let lo = shrink(0.0);
    let hi = shrink(1.0);

    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..SCAN_POINTS).map(|k| lo + k as f64 * step).collect();
    let best = (0..SCAN_POINTS)
        .min_by(|&a, &b| j(grid[a]).total_cmp(&j(grid[b])))
        .expect("non-empty scan");
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(SCAN_POINTS - 1)];
    let golden = golden_max(|x| -j(x), a, b, ALPHA_WIDTH, GOLDEN_CAP);

    let diff = pair.difference();
    let slope = |x: f64| -> Option<f64> {
        let p = pair.combine(x).cholesky_inverse().ok()?;
        Some(-(p.as_matrix() * diff.as_matrix() * p.as_matrix()).trace())
    };
    let mut candidates = vec![];
    if j(0.0).is_finite() {
        candidates.push(0.0);
    }
    if j(1.0).is_finite() {
        candidates.push(1.0);
    }
    if let (Some(sa), Some(sb)) = (slope(a), slope(b)) {
        if sa < 0.0 && sb > 0.0 {
            let (mut l, mut h) = (a, b);
            for _ in 0..200 {
                if h - l <= 1e-15 {
                    break;
                }
                let m = 0.5 * (l + h);
                match slope(m) {
                    Some(s) if s < 0.0 => l = m,
                    _ => h = m,
                }
            }
            candidates.push(0.5 * (l + h));
        }
    }
    candidates.push(golden);
    let alpha = candidates
        .iter()
        .copied()
        .fold(None, |acc: Option<f64>, c| match acc {
            Some(best) if j(best) <= j(c) => Some(best),
            _ => Some(c),
        })
        .expect("at least one candidate");
    build(problem, &pair, alpha, cost, case, Branch::Minimized)
}

/// Optimal family member for `cost`, with its LMI certificate asserted.
pub fn solve_ci(problem: &FusionProblem, cost: CostFunction) -> Result<FusionResult> {
    let mut r = match cost {
        CostFunction::Det => solve_ci_det(problem)?,
        CostFunction::Trace => solve_ci_trace(problem)?,
    };
    check_family(r.diagnostics.family_case, r.alpha)?;
    let cert = lmi_certificate(&r, problem, r.alpha)?;
    r.diagnostics.lmi_min_eig = Some(cert.lmi_min_eig);
    if !cert.passed {
        return Err(Error::InternalInconsistency(format!(
            "LMI certificate failed at α = {} (min eigenvalue {:e})",
            r.alpha, cert.lmi_min_eig
        )));
    }
    Ok(r)
}

/// Outcome of [`lower_bound_witness`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Witness {
    /// `candidate ⪰ Σα⁻¹` at this `α`.
    Alpha(f64),
    Violation,
}

/// Looks for `α` with `candidate ⪰ Σα⁻¹`, i.e. `Σα ⪰ candidate⁻¹`.
pub fn lower_bound_witness(
    problem: &FusionProblem,
    candidate: &SymMatrix,
    grid: usize,
) -> Result<Witness> {
    if candidate.dim() != problem.n() {
        return Err(Error::DimensionMismatch(format!(
            "candidate is {0}x{0}, state dimension is {1}",
            candidate.dim(),
            problem.n()
        )));
    }
    let target = pd_certify(candidate, PSD_TOL)?
        .into_sym()
        .cholesky_inverse()?;
    let pair = problem.sigma_pair();
    let found = kahan_interpose(
        &Ellipsoid::from_psd(pair.sigma1.clone()),
        &Ellipsoid::from_psd(pair.sigma0.clone()),
        &Ellipsoid::new(&target)?,
        grid,
    )?;
    Ok(found.map_or(Witness::Violation, Witness::Alpha))
}
