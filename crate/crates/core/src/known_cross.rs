//! Optimal unbiased linear fusion when the full joint covariance is known.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::joint::JointCovariance;
use crate::linalg::{loewner_compare, pd_certify, PsdMatrix, SymMatrix, PSD_TOL};
use crate::problem::FusionProblem;

/// Gauß-Markov optimal weights `K* = [K1* K2*]` and covariance `P*`.
#[derive(Debug, Clone)]
pub struct KnownCrossResult {
    pub k_star: DMatrix<f64>,
    pub p_star: PsdMatrix,
    /// Post-hoc checks that only failed within the boundary allowance.
    pub warnings: Vec<String>,
    p2: usize,
}

impl KnownCrossResult {
    pub fn k1(&self) -> DMatrix<f64> {
        let p1 = self.k_star.ncols() - self.p2;
        self.k_star.columns(0, p1).into_owned()
    }

    pub fn k2(&self) -> DMatrix<f64> {
        let p1 = self.k_star.ncols() - self.p2;
        self.k_star.columns(p1, self.p2).into_owned()
    }

    /// `x̂ = K1* x̂1 + K2* x̂2`.
    pub fn fused_estimate(&self, problem: &FusionProblem) -> DVector<f64> {
        self.k1() * problem.est1().x_hat() + self.k2() * problem.est2().x_hat()
    }
}

impl KnownCrossResult {
    fn new(k_star: DMatrix<f64>, p_star: PsdMatrix, p2: usize, warnings: Vec<String>) -> Self {
        Self {
            k_star,
            p_star,
            warnings,
            p2,
        }
    }
}

/// `Hᵀ Pjoint⁻¹ H`, the inverse of the optimal fused covariance.
pub fn fused_information(problem: &FusionProblem, joint: &JointCovariance) -> Result<SymMatrix> {
    let (p1, p2) = joint.dims();
    if p1 != problem.p1() || p2 != problem.p2() {
        return Err(Error::DimensionMismatch(format!(
            "joint has blocks {p1}/{p2}, problem has {}/{}",
            problem.p1(),
            problem.p2()
        )));
    }
    if !joint.is_pd() {
        return Err(Error::SingularJoint);
    }
    let joint_inv = joint
        .assembled()
        .cholesky_inverse()
        .map_err(|_| Error::SingularJoint)?;
    Ok(joint_inv.congruence(&problem.h().transpose()))
}

/// `P* = (Hᵀ Pjoint⁻¹ H)⁻¹` and `K* = P* Hᵀ Pjoint⁻¹`.
///
/// Afterwards both `(P*)⁻¹ ⪰ Hiᵀ Pi⁻¹ Hi` are checked; a violation within
/// ten times the tolerance is recorded as a warning, a larger one is an error.
pub fn optimal_fusion_known_cross(
    problem: &FusionProblem,
    joint: &JointCovariance,
) -> Result<KnownCrossResult> {
    let (p1, p2) = joint.dims();
    if p1 != problem.p1() || p2 != problem.p2() {
        return Err(Error::DimensionMismatch(format!(
            "joint has blocks {p1}/{p2}, problem has {}/{}",
            problem.p1(),
            problem.p2()
        )));
    }
    if !joint.is_pd() {
        return Err(Error::SingularJoint);
    }
    let joint_inv = joint
        .assembled()
        .cholesky_inverse()
        .map_err(|_| Error::SingularJoint)?;
    let h = problem.h();
    let info = joint_inv.congruence(&h.transpose());
    let p_star = info
        .cholesky_inverse()
        .map_err(|_| Error::RankDeficient("Hᵀ Pjoint⁻¹ H is singular".into()))?;
    let k_star = p_star.as_matrix() * h.transpose() * joint_inv.as_matrix();
    let p_star = pd_certify(&p_star, PSD_TOL)?;

    let mut warnings = Vec::new();
    for (k, block, hk) in [
        (1, joint.p1(), problem.est1().h()),
        (2, joint.p2(), problem.est2().h()),
    ] {
        let prior = block
            .as_sym()
            .cholesky_inverse()
            .map_err(|_| Error::SingularJoint)?
            .congruence(&hk.transpose());
        if !loewner_compare(&info, &prior, PSD_TOL)?.is_ge() {
            if loewner_compare(&info, &prior, 10.0 * PSD_TOL)?.is_ge() {
                warnings.push(format!(
                    "fused information dominates prior {k} only within 10x tolerance"
                ));
            } else {
                return Err(Error::InternalInconsistency(format!(
                    "fused information does not dominate prior {k}"
                )));
            }
        }
    }
    Ok(KnownCrossResult::new(k_star, p_star, p2, warnings))
}

/// Bar-Shalom/Campo form for two full-state estimates (`H1 = H2 = I`):
/// `K1* = I − (P1 − P12)Δ⁻¹`, `K2* = (P1 − P12)Δ⁻¹`,
/// `P* = P1 − (P1 − P12)Δ⁻¹(P1 − P12ᵀ)` with `Δ = P1 + P2 − P12 − P12ᵀ`.
pub fn bar_shalom_campo(joint: &JointCovariance) -> Result<KnownCrossResult> {
    let (p1, p2) = joint.dims();
    if p1 != p2 {
        return Err(Error::DimensionMismatch(format!(
            "full-state fusion needs equal block sizes, got {p1} and {p2}"
        )));
    }
    if !joint.is_pd() {
        return Err(Error::SingularJoint);
    }
    let n = p1;
    let a = joint.p1().as_matrix();
    let c = joint.p12();
    let delta = SymMatrix::from_matrix(a + joint.p2().as_matrix() - c - c.transpose());
    let delta_inv = delta.cholesky_inverse().map_err(|_| Error::SingularJoint)?;
    let gain = (a - c) * delta_inv.as_matrix();
    let k1 = DMatrix::identity(n, n) - &gain;
    let p_star = SymMatrix::from_matrix(a - &gain * (a - c.transpose()));
    let p_star = pd_certify(&p_star, PSD_TOL)?;
    let mut k_star = DMatrix::zeros(n, 2 * n);
    k_star.columns_mut(0, n).copy_from(&k1);
    k_star.columns_mut(n, n).copy_from(&gain);
    Ok(KnownCrossResult::new(k_star, p_star, n, Vec::new()))
}
