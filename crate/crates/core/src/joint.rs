use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{assemble_block, psd_certify, PsdMatrix, SymMatrix};

/// Joint error covariance `[P1 P12; P12ᵀ P2]` of two estimates.
///
/// The assembled block is certified PSD on construction; `is_pd` records
/// whether it was also certified positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    p1: PsdMatrix,
    p2: PsdMatrix,
    p12: DMatrix<f64>,
    full: PsdMatrix,
}

impl JointCovariance {
    pub fn new(p1: SymMatrix, p2: SymMatrix, p12: DMatrix<f64>, tol: f64) -> Result<Self> {
        let full = assemble_block(&p1, &p12, &p2)?;
        let full = psd_certify(&full, tol)?;
        Ok(Self {
            p1: psd_certify(&p1, tol)?,
            p2: psd_certify(&p2, tol)?,
            p12,
            full,
        })
    }

    /// Rebuilds a joint from an assembled `(p1+p2)`-square matrix.
    pub fn from_assembled(full: &SymMatrix, p1: usize, tol: f64) -> Result<Self> {
        let dim = full.dim();
        if p1 == 0 || p1 >= dim {
            return Err(Error::DimensionMismatch(format!(
                "cannot split a {dim}x{dim} joint at {p1}"
            )));
        }
        let m = full.as_matrix();
        let p2 = dim - p1;
        Self::new(
            SymMatrix::from_matrix(m.view((0, 0), (p1, p1)).into_owned()),
            SymMatrix::from_matrix(m.view((p1, p1), (p2, p2)).into_owned()),
            m.view((0, p1), (p1, p2)).into_owned(),
            tol,
        )
    }

    pub fn p1(&self) -> &PsdMatrix {
        &self.p1
    }

    pub fn p2(&self) -> &PsdMatrix {
        &self.p2
    }

    pub fn p12(&self) -> &DMatrix<f64> {
        &self.p12
    }

    pub fn is_pd(&self) -> bool {
        self.full.is_strict()
    }

    pub fn assembled(&self) -> &SymMatrix {
        self.full.as_sym()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.p1.dim(), self.p2.dim())
    }

    /// The same joint with the two estimates exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            p1: self.p2.clone(),
            p2: self.p1.clone(),
            p12: self.p12.transpose(),
            full: {
                let (a, b) = self.dims();
                let m = self.full.as_matrix();
                let mut perm = DMatrix::zeros(a + b, a + b);
                for i in 0..b {
                    perm[(i, a + i)] = 1.0;
                }
                for i in 0..a {
                    perm[(b + i, i)] = 1.0;
                }
                // a permutation similarity keeps the spectrum
                PsdMatrix::from_parts(
                    SymMatrix::from_matrix(&perm * m * perm.transpose()),
                    self.full.min_eig(),
                    self.full.is_strict(),
                )
            },
        }
    }
}
