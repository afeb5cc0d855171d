//! Numerical certificates that a linear fusion rule preserves conservativeness.
//!
//! A rule `(K1, K2, P̂)` is conservative when `K Pjoint Kᵀ ⪯ P̂` for every
//! admissible joint covariance. With `Qi = Ki P̂i^{1/2}` this is equivalent
//! to the existence of `α ∈ [0, 1]` with
//! `[P̂ Q1 Q2; Q1ᵀ αI 0; Q2ᵀ 0 (1−α)I] ⪰ 0`. The LMI is the proof; the
//! sampling methods are searches whose violations are conclusive.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::ci::{classify_family, FamilyCase, FusionResult};
use crate::ellipsoids::golden_max;
use crate::error::{Error, Result};
use crate::linalg::{
    block_psd_report, cross_from_factor, pd_certify, sqrt_psd, PsdMatrix, SymMatrix, PSD_TOL,
};
use crate::problem::FusionProblem;
use crate::sampling::{random_contraction, random_orthogonal, stream_rng, SimRng};

/// Absolute tolerance on `λmax` violations, scaled by `max(1, max diag P̂)`.
pub const VERIFY_TOL: f64 = 1e-8;

const CHUNK: usize = 64;
const EPS_RANGE: (f64, f64) = (1e-8, 1e8);

/// Anything that fuses two estimates linearly with a claimed covariance.
pub trait LinearFusionRule {
    fn k1(&self) -> &DMatrix<f64>;
    fn k2(&self) -> &DMatrix<f64>;
    fn p_hat(&self) -> &SymMatrix;
}

/// A rule given directly by its matrices, not necessarily conservative.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionRule {
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub p_hat: SymMatrix,
}

impl FusionRule {
    pub fn from_rule<R: LinearFusionRule + ?Sized>(rule: &R) -> Self {
        Self {
            k1: rule.k1().clone(),
            k2: rule.k2().clone(),
            p_hat: rule.p_hat().clone(),
        }
    }
}

impl LinearFusionRule for FusionRule {
    fn k1(&self) -> &DMatrix<f64> {
        &self.k1
    }

    fn k2(&self) -> &DMatrix<f64> {
        &self.k2
    }

    fn p_hat(&self) -> &SymMatrix {
        &self.p_hat
    }
}

pub fn violation_tolerance(p_hat: &SymMatrix) -> f64 {
    let diag = p_hat.as_matrix().diagonal().max();
    VERIFY_TOL * diag.max(1.0)
}

/// `Q1 = K1 P̂1^{1/2}` and `Q2 = K2 P̂2^{1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QPair {
    pub q1: DMatrix<f64>,
    pub q2: DMatrix<f64>,
}

impl QPair {
    pub fn new<R: LinearFusionRule + ?Sized>(rule: &R, problem: &FusionProblem) -> Result<Self> {
        check_dims(rule, problem)?;
        Ok(Self {
            q1: rule.k1() * sqrt_psd(problem.est1().p_hat()).as_matrix(),
            q2: rule.k2() * sqrt_psd(problem.est2().p_hat()).as_matrix(),
        })
    }

    /// `Q1 Q1ᵀ + Q1 X Q2ᵀ + Q2 Xᵀ Q1ᵀ + Q2 Q2ᵀ`, the fused covariance when
    /// `Pi = P̂i` and `P12 = P̂1^{1/2} X P̂2^{1/2}`.
    pub fn fused_covariance(&self, x: &DMatrix<f64>) -> SymMatrix {
        let cross = &self.q1 * x * self.q2.transpose();
        SymMatrix::new(
            &self.q1 * self.q1.transpose()
                + &cross
                + cross.transpose()
                + &self.q2 * self.q2.transpose(),
        )
        .expect("square")
    }

    fn gram(&self) -> (SymMatrix, SymMatrix) {
        (
            SymMatrix::new(&self.q1 * self.q1.transpose()).expect("square"),
            SymMatrix::new(&self.q2 * self.q2.transpose()).expect("square"),
        )
    }
}

fn check_dims<R: LinearFusionRule + ?Sized>(rule: &R, problem: &FusionProblem) -> Result<()> {
    let (n, p1, p2) = (problem.n(), problem.p1(), problem.p2());
    let ok =
        rule.k1().shape() == (n, p1) && rule.k2().shape() == (n, p2) && rule.p_hat().dim() == n;
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "rule has K1 {:?}, K2 {:?}, P̂ {}x{}; problem needs K1 ({n}, {p1}), K2 ({n}, {p2})",
            rule.k1().shape(),
            rule.k2().shape(),
            rule.p_hat().dim(),
            rule.p_hat().dim()
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Lmi,
    Tau,
    Petersen,
    Adversarial,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub method: Method,
    pub alpha: f64,
    /// `1/α − 1` for `α ∈ (0, 1)`.
    pub tau: Option<f64>,
    /// Smallest eigenvalue of the matrix that `method` requires to be PSD.
    pub lmi_min_eig: f64,
    pub passed: bool,
}

fn tau_of(alpha: f64) -> Option<f64> {
    (alpha > 0.0 && alpha < 1.0).then(|| 1.0 / alpha - 1.0)
}

/// The LMI at `alpha` with the default relative tolerance.
pub fn lmi_certificate<R: LinearFusionRule + ?Sized>(
    rule: &R,
    problem: &FusionProblem,
    alpha: f64,
) -> Result<Certificate> {
    lmi_certificate_tol(rule, problem, alpha, PSD_TOL)
}

pub fn lmi_certificate_tol<R: LinearFusionRule + ?Sized>(
    rule: &R,
    problem: &FusionProblem,
    alpha: f64,
    tol: f64,
) -> Result<Certificate> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange { value: alpha });
    }
    let q = QPair::new(rule, problem)?;
    let report = lmi_report(rule.p_hat(), &q, alpha, tol)?;
    Ok(Certificate {
        method: Method::Lmi,
        alpha,
        tau: tau_of(alpha),
        lmi_min_eig: report.min_eig,
        passed: report.psd,
    })
}

fn lmi_report(
    p_hat: &SymMatrix,
    q: &QPair,
    alpha: f64,
    tol: f64,
) -> Result<crate::linalg::BlockPsdReport> {
    let (n, p1, p2) = (p_hat.dim(), q.q1.ncols(), q.q2.ncols());
    // Jacobi equilibration of the P̂ block; a congruence, so PSD-ness is unchanged
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = p_hat.as_matrix()[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d));
    let p_hat = SymMatrix::from_matrix(&d * p_hat.as_matrix() * &d);
    let mut s = DMatrix::zeros(n, p1 + p2);
    s.columns_mut(0, p1).copy_from(&(&d * &q.q1));
    s.columns_mut(p1, p2).copy_from(&(&d * &q.q2));
    let diag: Vec<f64> = (0..p1 + p2)
        .map(|i| if i < p1 { alpha } else { 1.0 - alpha })
        .collect();
    block_psd_report(&p_hat, &s, &SymMatrix::from_diagonal(&diag), tol)
}

/// Best LMI parameter of an arbitrary rule.
///
/// The block matrix is affine in `α`, so its smallest eigenvalue is concave
/// and golden section finds the maximizer; the endpoints are checked too.
pub fn lmi_search<R: LinearFusionRule + ?Sized>(
    rule: &R,
    problem: &FusionProblem,
) -> Result<Certificate> {
    let q = QPair::new(rule, problem)?;
    let margin = |a: f64| {
        lmi_report(rule.p_hat(), &q, a, PSD_TOL)
            .map(|r| r.min_eig)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let inner = golden_max(margin, 0.0, 1.0, 1e-13, 200);
    let mut best = lmi_certificate(rule, problem, inner)?;
    for a in [0.0, 1.0] {
        let c = lmi_certificate(rule, problem, a)?;
        if (c.passed && !best.passed)
            || (c.passed == best.passed && c.lmi_min_eig > best.lmi_min_eig)
        {
            best = c;
        }
    }
    Ok(best)
}

/// One LMI evaluation per point of a uniform grid over `[0, 1]`.
pub fn lmi_scan<R: LinearFusionRule + ?Sized>(
    rule: &R,
    problem: &FusionProblem,
    grid: usize,
) -> Result<Vec<Certificate>> {
    let grid = grid.max(2);
    (0..grid)
        .map(|k| lmi_certificate(rule, problem, k as f64 / (grid - 1) as f64))
        .collect()
}

/// The scalar inequality behind the LMI:
/// `Q1Q1ᵀ/α + Q2Q2ᵀ/(1−α) ⪯ P̂` for `α ∈ (0, 1)`, and at the endpoints
/// `Q1 = 0, Q2Q2ᵀ ⪯ P̂` (`α = 0`) or `Q2 = 0, Q1Q1ᵀ ⪯ P̂` (`α = 1`).
pub fn tau_certificate<R: LinearFusionRule + ?Sized>(
    rule: &R,
    problem: &FusionProblem,
    alpha: f64,
) -> Result<Certificate> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange { value: alpha });
    }
    let q = QPair::new(rule, problem)?;
    let (g1, g2) = q.gram();
    let p = rule.p_hat();
    let tol = violation_tolerance(p);
    let zero_tol = tol.sqrt();
    let (slack, vanishing) = if alpha == 0.0 {
        (p.sub(&g2), q.q1.amax() <= zero_tol)
    } else if alpha == 1.0 {
        (p.sub(&g1), q.q2.amax() <= zero_tol)
    } else {
        (
            p.sub(&g1.scaled(1.0 / alpha))
                .sub(&g2.scaled(1.0 / (1.0 - alpha))),
            true,
        )
    };
    let min_eig = slack.min_eigenvalue();
    Ok(Certificate {
        method: Method::Tau,
        alpha,
        tau: tau_of(alpha),
        lmi_min_eig: min_eig,
        passed: vanishing && min_eig >= -tol,
    })
}

/// Result of the Petersen ε search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PetersenOutcome {
    Feasible { epsilon: f64, value: f64 },
    Infeasible { epsilon: f64, value: f64 },
}

impl PetersenOutcome {
    pub fn is_feasible(self) -> bool {
        matches!(self, PetersenOutcome::Feasible { .. })
    }
}

/// `λmax(G + ε Q1Q1ᵀ + (1/ε) Q2Q2ᵀ)` with `G = Q1Q1ᵀ + Q2Q2ᵀ − P̂`.
pub fn petersen_value(q: &QPair, p_hat: &SymMatrix, epsilon: f64) -> f64 {
    let (g1, g2) = q.gram();
    g1.scaled(1.0 + epsilon)
        .add(&g2.scaled(1.0 + 1.0 / epsilon))
        .sub(p_hat)
        .max_eigenvalue()
}

/// Minimizes [`petersen_value`] over `ε ∈ [1e-8, 1e8]` by golden section on
/// `log ε`; feasible when the minimum is within the violation tolerance.
pub fn petersen_certificate<R: LinearFusionRule + ?Sized>(
    rule: &R,
    problem: &FusionProblem,
) -> Result<PetersenOutcome> {
    let q = QPair::new(rule, problem)?;
    let p = rule.p_hat();
    let tol = violation_tolerance(p);
    let zero = 1e-12 * p.max_abs().max(1.0).sqrt();
    if q.q1.amax() <= zero {
        return Err(Error::DegenerateQ("Q1 vanishes".into()));
    }
    if q.q2.amax() <= zero {
        return Err(Error::DegenerateQ("Q2 vanishes".into()));
    }
    let f = |t: f64| petersen_value(&q, p, t.exp());
    let t = golden_max(|t| -f(t), EPS_RANGE.0.ln(), EPS_RANGE.1.ln(), 1e-12, 200);
    let epsilon = t.exp();
    let value = f(t);
    Ok(if value <= tol {
        PetersenOutcome::Feasible { epsilon, value }
    } else {
        PetersenOutcome::Infeasible { epsilon, value }
    })
}

/// Largest `λmax(Q1Q1ᵀ + Q1XQ2ᵀ + Q2XᵀQ1ᵀ + Q2Q2ᵀ − P̂)` over sampled
/// contractions `X`.
///
/// Besides `samples` random draws (Gaussian direction, radius uniform in
/// `[0, 1]`), the candidates `X = 0`, `X = ±UVᵀ` from the SVD of `Q1ᵀQ2`
/// and the end point of an alternating rank-one ascent are always included.
pub fn adversarial_x_search<R: LinearFusionRule + ?Sized>(
    rule: &R,
    problem: &FusionProblem,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let q = QPair::new(rule, problem)?;
    let p = rule.p_hat();
    let (p1, p2) = (problem.p1(), problem.p2());
    let violation = |x: &DMatrix<f64>| q.fused_covariance(x).sub(p).max_eigenvalue();

    let mut worst = violation(&DMatrix::zeros(p1, p2));
    let svd = (q.q1.transpose() * &q.q2).svd(true, true);
    let aligned = svd.u.expect("u requested") * svd.v_t.expect("v requested");
    worst = worst.max(violation(&aligned)).max(violation(&(-&aligned)));
    worst = worst.max(rank_one_ascent(&q, p, aligned, &violation));

    let chunks = samples.div_ceil(CHUNK);
    let sampled = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let count = CHUNK.min(samples - c * CHUNK);
            (0..count)
                .map(|_| {
                    let radius: f64 = rng.random();
                    violation(&random_contraction(&mut rng, p1, p2, radius))
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(worst.max(sampled))
}

fn rank_one_ascent(
    q: &QPair,
    p: &SymMatrix,
    start: DMatrix<f64>,
    violation: &impl Fn(&DMatrix<f64>) -> f64,
) -> f64 {
    let mut x = start;
    let mut best = violation(&x);
    for _ in 0..50 {
        let m = q.fused_covariance(&x).sub(p);
        let spec = m.spectrum();
        let v = spec.vectors.column(spec.values.len() - 1).into_owned();
        let a = q.q1.transpose() * &v;
        let b = q.q2.transpose() * &v;
        let (na, nb) = (a.norm(), b.norm());
        if na == 0.0 || nb == 0.0 {
            break;
        }
        x = (a * b.transpose()) / (na * nb);
        let val = violation(&x);
        if val <= best {
            break;
        }
        best = val;
    }
    best
}

/// How [`monte_carlo_joint_with`] draws the diagonal blocks of the joint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointSampling {
    /// `Pi = P̂i^{1/2} C P̂i^{1/2}` with `C` having eigenvalues in `(0.05, 1]`.
    Shrunken,
    /// `Pi = P̂i`; only the cross-covariance varies.
    Exact,
}

pub fn monte_carlo_joint<R: LinearFusionRule + Sync + ?Sized>(
    rule: &R,
    problem: &FusionProblem,
    truth_samples: usize,
    seed: u64,
) -> Result<f64> {
    monte_carlo_joint_with(rule, problem, truth_samples, seed, JointSampling::Shrunken)
}

/// Largest `λmax(K Pjoint Kᵀ − P̂)` over sampled admissible joints.
///
/// Cross-covariances are `P1^{1/2} X P2^{1/2}` with `σmax(X) < 1` and radii
/// concentrated near 1. The joint `Pi = P̂i`, `P12 = 0` is always included.
pub fn monte_carlo_joint_with<R: LinearFusionRule + Sync + ?Sized>(
    rule: &R,
    problem: &FusionProblem,
    truth_samples: usize,
    seed: u64,
    sampling: JointSampling,
) -> Result<f64> {
    check_dims(rule, problem)?;
    let (p1, p2) = (problem.p1(), problem.p2());
    let mut k = DMatrix::zeros(problem.n(), p1 + p2);
    k.columns_mut(0, p1).copy_from(rule.k1());
    k.columns_mut(p1, p2).copy_from(rule.k2());
    let hat1 = problem.est1().p_hat();
    let hat2 = problem.est2().p_hat();
    let roots = (sqrt_psd(hat1), sqrt_psd(hat2));
    let p = rule.p_hat();

    let evaluate = |a: &PsdMatrix, b: &PsdMatrix, x: &DMatrix<f64>| -> Result<f64> {
        let p12 = cross_from_factor(a, b, x)?;
        let mut joint = DMatrix::zeros(p1 + p2, p1 + p2);
        joint.view_mut((0, 0), (p1, p1)).copy_from(a.as_matrix());
        joint.view_mut((p1, p1), (p2, p2)).copy_from(b.as_matrix());
        joint.view_mut((0, p1), (p1, p2)).copy_from(&p12);
        joint
            .view_mut((p1, 0), (p2, p1))
            .copy_from(&p12.transpose());
        let fused = SymMatrix::new(&k * joint * k.transpose()).expect("square");
        Ok(fused.sub(p).max_eigenvalue())
    };
    let shrink = |rng: &mut SimRng, root: &SymMatrix| -> Result<PsdMatrix> {
        let dim = root.dim();
        let eigs: Vec<f64> = (0..dim)
            .map(|_| {
                let u: f64 = rng.random();
                1.0 - 0.95 * u * u
            })
            .collect();
        let o = random_orthogonal(rng, dim);
        let c = SymMatrix::from_diagonal(&eigs).congruence(&o);
        pd_certify(&c.congruence(root.as_matrix()), PSD_TOL)
    };

    let baseline = evaluate(hat1, hat2, &DMatrix::zeros(p1, p2))?;
    let chunks = truth_samples.div_ceil(CHUNK);
    let sampled = (0..chunks)
        .into_par_iter()
        .map(|c| -> Result<f64> {
            let mut rng = stream_rng(seed, c as u64);
            let count = CHUNK.min(truth_samples - c * CHUNK);
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..count {
                let (a, b) = match sampling {
                    JointSampling::Shrunken => {
                        (shrink(&mut rng, &roots.0)?, shrink(&mut rng, &roots.1)?)
                    }
                    JointSampling::Exact => (hat1.clone(), hat2.clone()),
                };
                let u: f64 = rng.random();
                let radius = 1.0 - (1e-6 + 0.999 * u * u);
                let x = random_contraction(&mut rng, p1, p2, radius);
                worst = worst.max(evaluate(&a, &b, &x)?);
            }
            Ok(worst)
        })
        .try_reduce(|| f64::NEG_INFINITY, |a, b| Ok(a.max(b)))?;
    Ok(baseline.max(sampled))
}

/// Outcome of [`alpha_uniqueness_check`].
#[derive(Debug, Clone, PartialEq)]
pub enum Uniqueness {
    /// Every LMI-feasible grid point lies within one step of the family `α`.
    Unique { feasible: Vec<f64> },
    /// The family `α` itself fails the LMI, or a distant grid point passes.
    Ambiguous { feasible: Vec<f64> },
    /// `Σ0 = Σ1`: every parameter gives the same rule.
    NotApplicable,
}

impl Uniqueness {
    pub fn holds(&self) -> bool {
        matches!(self, Uniqueness::Unique { .. })
    }
}

/// For a family member the LMI holds only at its own parameter; this scans a
/// uniform grid of `α′` and checks that claim.
pub fn alpha_uniqueness_check(
    result: &FusionResult,
    problem: &FusionProblem,
    grid: usize,
) -> Result<Uniqueness> {
    if classify_family(&problem.sigma_pair())? == FamilyCase::Equal {
        return Ok(Uniqueness::NotApplicable);
    }
    let grid = grid.max(2);
    let step = 1.0 / (grid - 1) as f64;
    let feasible: Vec<f64> = lmi_scan(result, problem, grid)?
        .into_iter()
        .filter(|c| c.passed)
        .map(|c| c.alpha)
        .collect();
    let own = lmi_certificate(result, problem, result.alpha)?.passed;
    let isolated = feasible
        .iter()
        .all(|a| (a - result.alpha).abs() <= step * (1.0 + 1e-9));
    Ok(if own && isolated {
        Uniqueness::Unique { feasible }
    } else {
        Uniqueness::Ambiguous { feasible }
    })
}
