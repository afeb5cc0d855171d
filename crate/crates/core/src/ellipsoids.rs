//! Centered ellipsoids `E(Σ) = {x | xᵀΣx ≤ 1}` and the constructions built on them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::joint::JointCovariance;
use crate::known_cross::fused_information;
use crate::linalg::{
    inv_sqrt_pd, loewner_compare, psd_certify, sqrt_psd, PsdMatrix, SymMatrix, PSD_TOL,
};
use crate::problem::FusionProblem;

/// Half-width of the boundary band in [`membership`].
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Points with `xᵀΣi x` above `1 − INTERIOR_MARGIN` are not strictly interior.
pub const INTERIOR_MARGIN: f64 = 1e-6;

/// Default number of grid points for [`kahan_interpose`].
pub const DEFAULT_GRID: usize = 10001;

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    shape: PsdMatrix,
}

impl Ellipsoid {
    /// Degenerate (unbounded) ellipsoids with singular `shape` are allowed.
    pub fn new(shape: &SymMatrix) -> Result<Self> {
        Ok(Self {
            shape: psd_certify(shape, PSD_TOL)?,
        })
    }

    pub fn from_psd(shape: PsdMatrix) -> Self {
        Self { shape }
    }

    pub fn shape(&self) -> &SymMatrix {
        self.shape.as_sym()
    }

    pub fn dim(&self) -> usize {
        self.shape.dim()
    }
}

/// `E(outer) ⊇ E(inner)`, which holds exactly when `inner ⪰ outer`.
pub fn contains(outer: &Ellipsoid, inner: &Ellipsoid, tol: f64) -> Result<bool> {
    Ok(loewner_compare(inner.shape(), outer.shape(), tol)?.is_ge())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MembershipKind {
    Interior,
    Boundary,
    Outside,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub kind: MembershipKind,
    /// The quadratic form `xᵀΣx`.
    pub value: f64,
}

pub fn membership(x: &DVector<f64>, e: &Ellipsoid) -> Result<Membership> {
    if x.len() != e.dim() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries, ellipsoid is {}-dimensional",
            x.len(),
            e.dim()
        )));
    }
    let value = e.shape().quadratic_form(x);
    let kind = if value < 1.0 - MEMBERSHIP_TOL {
        MembershipKind::Interior
    } else if value <= 1.0 + MEMBERSHIP_TOL {
        MembershipKind::Boundary
    } else {
        MembershipKind::Outside
    };
    Ok(Membership { kind, value })
}

/// Smallest `α` on a uniform grid over `[0, 1]` with
/// `α Σ1 + (1 − α) Σ2 ⪰ Σtarget`, i.e. `E(target) ⊇ E(αΣ1 + (1−α)Σ2)`.
///
/// If no grid point qualifies, the concave function
/// `α ↦ λmin(αΣ1 + (1−α)Σ2 − Σtarget)` is maximized by golden section and
/// the maximizer is returned when it qualifies. This catches interposing
/// parameters that fall strictly between grid points.
pub fn kahan_interpose(
    sigma1: &Ellipsoid,
    sigma2: &Ellipsoid,
    target: &Ellipsoid,
    grid: usize,
) -> Result<Option<f64>> {
    let n = target.dim();
    if sigma1.dim() != n || sigma2.dim() != n {
        return Err(Error::DimensionMismatch(
            "ellipsoids differ in dimension".into(),
        ));
    }
    let grid = grid.max(2);
    let combo = |a: f64| {
        sigma1
            .shape()
            .scaled(a)
            .add(&sigma2.shape().scaled(1.0 - a))
    };
    let qualifies = |a: f64| -> Result<bool> {
        Ok(loewner_compare(&combo(a), target.shape(), PSD_TOL)?.is_ge())
    };
    for k in 0..grid {
        let a = k as f64 / (grid - 1) as f64;
        if qualifies(a)? {
            return Ok(Some(a));
        }
    }
    let margin = |a: f64| combo(a).sub(target.shape()).min_eigenvalue();
    let best = golden_max(margin, 0.0, 1.0, 1e-14, 200);
    let candidates = [0.0, best, 1.0];
    for a in candidates {
        if qualifies(a)? {
            return Ok(Some(a));
        }
    }
    Ok(None)
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, width: f64, cap: usize) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..cap {
        if b - a <= width {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Orthogonal-column map `W` (`dst.len() × src.len()`, `σmax(W) ≤ 1`) with
/// `W·src = dst` when both have equal norm.
///
/// Both vectors are zero-padded to a common dimension and normalized, a
/// Householder reflector maps one onto the other and the leading block is
/// returned. Zero vectors give the leading block of the identity.
fn aligning_map(src: &DVector<f64>, dst: &DVector<f64>) -> DMatrix<f64> {
    let (k, m) = (dst.len(), src.len());
    let d = k.max(m);
    let (ns, nd) = (src.norm(), dst.norm());
    if ns == 0.0 || nd == 0.0 {
        return DMatrix::identity(k, m);
    }
    let mut u = DVector::zeros(d);
    u.rows_mut(0, m).copy_from(&(src / ns));
    let mut v = DVector::zeros(d);
    v.rows_mut(0, k).copy_from(&(dst / nd));
    let w = &u - &v;
    let ww = w.norm_squared();
    let r = if ww <= 1e-30 {
        DMatrix::identity(d, d)
    } else {
        DMatrix::identity(d, d) - (&w * w.transpose()) * (2.0 / ww)
    };
    r.view((0, 0), (k, m)).into_owned()
}

/// A cross-covariance `P12` for which `Pjoint(P12) ≻ 0` and `x` lies in the
/// optimal fused ellipsoid `E((P*(P12))⁻¹)`.
///
/// With `qi = xᵀ Hiᵀ P̂i⁻¹ Hi x` and `q1 < q2`, `P12 = λ P̂1^{1/2} W P̂2^{1/2}`
/// where `λ² = q1/q2` and `W` maps `λ P̂2^{-1/2} H2 x` onto `P̂1^{-1/2} H1 x`.
/// Nearly equal forms use `(1 − ε)` times the `λ = 1` construction, halving
/// `ε` until the point is covered.
pub fn covering_cross_cov(
    x: &DVector<f64>,
    problem: &FusionProblem,
    eps: f64,
) -> Result<DMatrix<f64>> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::OutOfRange { value: eps });
    }
    if x.len() != problem.n() {
        return Err(Error::DimensionMismatch(format!(
            "point has {} entries, state dimension is {}",
            x.len(),
            problem.n()
        )));
    }
    if problem.p1() > problem.p2() {
        return covering_cross_cov(x, &problem.swapped(), eps).map(|m| m.transpose());
    }
    let (e1, e2) = (problem.est1(), problem.est2());
    let a1 = inv_sqrt_pd(e1.p_hat().as_sym())?.as_matrix() * (e1.h() * x);
    let a2 = inv_sqrt_pd(e2.p_hat().as_sym())?.as_matrix() * (e2.h() * x);
    let (q1, q2) = (a1.norm_squared(), a2.norm_squared());
    if q1 > 1.0 - INTERIOR_MARGIN || q2 > 1.0 - INTERIOR_MARGIN {
        return Err(Error::NotInterior { q1, q2 });
    }
    let (p1, p2) = (problem.p1(), problem.p2());
    if x.amax() == 0.0 {
        return Ok(DMatrix::zeros(p1, p2));
    }
    if q1 == 0.0 && q2 == 0.0 {
        return Err(Error::DegenerateDirection(
            "the point lies in the kernel of both observation matrices".into(),
        ));
    }
    let s1 = sqrt_psd(e1.p_hat());
    let s2 = sqrt_psd(e2.p_hat());
    let covered = |p12: &DMatrix<f64>| -> Result<Option<f64>> {
        let joint = JointCovariance::new(
            e1.p_hat().as_sym().clone(),
            e2.p_hat().as_sym().clone(),
            p12.clone(),
            PSD_TOL,
        )?;
        if !joint.is_pd() {
            return Ok(None);
        }
        let value = fused_information(problem, &joint)?.quadratic_form(x);
        Ok((value < 1.0).then_some(value))
    };

    let q = q1.max(q2);
    if (q1 - q2).abs() > INTERIOR_MARGIN * q {
        let p12 = if q1 < q2 {
            let lambda = (q1 / q2).sqrt();
            let w = aligning_map(&(&a2 * lambda), &a1);
            s1.as_matrix() * w * s2.as_matrix() * lambda
        } else {
            let lambda = (q2 / q1).sqrt();
            let v = aligning_map(&(&a1 * lambda), &a2);
            (s2.as_matrix() * v * s1.as_matrix() * lambda).transpose()
        };
        return match covered(&p12)? {
            Some(_) => Ok(p12),
            None => Err(Error::InternalInconsistency(
                "constructed cross-covariance does not cover the point".into(),
            )),
        };
    }

    let w = aligning_map(&(&a2 * (q1 / q2).sqrt()), &a1);
    let base = s1.as_matrix() * w * s2.as_matrix();
    let mut eps = eps;
    for _ in 0..60 {
        let p12 = &base * (1.0 - eps);
        if covered(&p12)?.is_some() {
            return Ok(p12);
        }
        eps *= 0.5;
    }
    Err(Error::InternalInconsistency(
        "perturbed construction failed to cover the point".into(),
    ))
}
