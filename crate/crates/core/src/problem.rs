//! Fusion problem definition and validation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, pd_certify, psd_certify, PsdMatrix, SymMatrix, PSD_TOL};

/// Singular values at or below `RANK_RTOL · σmax` count as zero in rank tests.
pub const RANK_RTOL: f64 = 1e-10;

/// One node's unbiased estimate of `H x̄` with a conservative covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialEstimate {
    h: DMatrix<f64>,
    x_hat: DVector<f64>,
    p_hat: PsdMatrix,
}

impl PartialEstimate {
    pub fn new(h: DMatrix<f64>, x_hat: DVector<f64>, p_hat: SymMatrix) -> Result<Self> {
        let p = h.nrows();
        if p == 0 || h.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "observation matrix is empty".into(),
            ));
        }
        if x_hat.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "estimate has {} entries but the observation matrix has {p} rows",
                x_hat.len()
            )));
        }
        if p_hat.dim() != p {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {0}x{0} but the observation matrix has {p} rows",
                p_hat.dim()
            )));
        }
        if h.iter().chain(x_hat.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entry in estimate".into()));
        }
        let p_hat = pd_certify(&p_hat, PSD_TOL)?;
        Ok(Self { h, x_hat, p_hat })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn x_hat(&self) -> &DVector<f64> {
        &self.x_hat
    }

    pub fn p_hat(&self) -> &PsdMatrix {
        &self.p_hat
    }

    /// Number of observed components.
    pub fn rows(&self) -> usize {
        self.h.nrows()
    }

    /// `Hᵀ P̂⁻¹ H`, the information this estimate carries about the full state.
    pub fn information(&self) -> SymMatrix {
        let inv = self
            .p_hat
            .as_sym()
            .cholesky_inverse()
            .expect("covariance certified PD at construction");
        inv.congruence(&self.h.transpose())
    }
}

/// A validated pair of partial estimates.
///
/// Construction enforces the rank condition (A1): `rank(H1) = p1`,
/// `rank(H2) = p2` and `rank([H1; H2]) = n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionProblem {
    est1: PartialEstimate,
    est2: PartialEstimate,
}

impl FusionProblem {
    pub fn new(est1: PartialEstimate, est2: PartialEstimate) -> Result<Self> {
        let n = est1.h.ncols();
        if est2.h.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "observation matrices have {} and {} columns",
                n,
                est2.h.ncols()
            )));
        }
        for (k, est) in [(1, &est1), (2, &est2)] {
            let r = numerical_rank(&est.h, RANK_RTOL);
            if r != est.rows() {
                return Err(Error::RankCondition(format!(
                    "H{k} has rank {r} but {} rows; it must have full row rank",
                    est.rows()
                )));
            }
        }
        let stacked = stack_rows(&est1.h, &est2.h);
        let r = numerical_rank(&stacked, RANK_RTOL);
        if r != n {
            return Err(Error::RankCondition(format!(
                "stacked observation matrix has rank {r} but the state dimension is {n}"
            )));
        }
        Ok(Self { est1, est2 })
    }

    pub fn est1(&self) -> &PartialEstimate {
        &self.est1
    }

    pub fn est2(&self) -> &PartialEstimate {
        &self.est2
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.est1.h.ncols()
    }

    pub fn p1(&self) -> usize {
        self.est1.rows()
    }

    pub fn p2(&self) -> usize {
        self.est2.rows()
    }

    /// `H = [H1; H2]`.
    pub fn h(&self) -> DMatrix<f64> {
        stack_rows(&self.est1.h, &self.est2.h)
    }

    /// The problem with the two estimates exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            est1: self.est2.clone(),
            est2: self.est1.clone(),
        }
    }

    pub fn sigma_pair(&self) -> SigmaPair {
        SigmaPair::new(self)
    }
}

pub(crate) fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

/// The two information matrices `Σ1 = H1ᵀP̂1⁻¹H1` and `Σ0 = H2ᵀP̂2⁻¹H2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPair {
    pub sigma1: PsdMatrix,
    pub sigma0: PsdMatrix,
}

impl SigmaPair {
    pub fn new(problem: &FusionProblem) -> Self {
        let certify =
            |s: SymMatrix| psd_certify(&s, PSD_TOL).expect("congruence of a PD matrix is PSD");
        Self {
            sigma1: certify(problem.est1.information()),
            sigma0: certify(problem.est2.information()),
        }
    }

    /// `Σα = α Σ1 + (1 − α) Σ0`.
    pub fn sigma_alpha(&self, alpha: f64) -> Result<SymMatrix> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::OutOfRange { value: alpha });
        }
        Ok(self.combine(alpha))
    }

    pub(crate) fn combine(&self, alpha: f64) -> SymMatrix {
        self.sigma1
            .as_sym()
            .scaled(alpha)
            .add(&self.sigma0.as_sym().scaled(1.0 - alpha))
    }

    /// `Σ1 − Σ0`.
    pub fn difference(&self) -> SymMatrix {
        self.sigma1.as_sym().sub(self.sigma0.as_sym())
    }
}

/// Convenience constructor from row-major slices.
pub fn estimate_from_rows(
    p: usize,
    n: usize,
    h: &[f64],
    x_hat: &[f64],
    p_hat: &[f64],
) -> Result<PartialEstimate> {
    if h.len() != p * n {
        return Err(Error::DimensionMismatch(format!(
            "observation matrix needs {} entries, got {}",
            p * n,
            h.len()
        )));
    }
    PartialEstimate::new(
        DMatrix::from_row_slice(p, n, h),
        DVector::from_column_slice(x_hat),
        SymMatrix::from_row_slice(p, p_hat)?,
    )
}
