//! Dense symmetric-matrix primitives.
//!
//! Everything spectral goes through [`SymMatrix::spectrum`], a thin wrapper
//! around nalgebra's symmetric eigensolver (Householder tridiagonalization
//! followed by implicit-shift QR). Tolerances are relative: an eigenvalue
//! is treated as non-negative when it is at least `-tol * scale`, where
//! `scale = max(1, largest |eigenvalue|)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::joint::JointCovariance;

/// Default relative tolerance for PSD and Löwner-order decisions.
pub const PSD_TOL: f64 = 1e-9;

/// Relative cut-off below which eigenvalues count as zero in pseudo-inverses.
pub const PINV_RTOL: f64 = 1e-12;

/// A real symmetric matrix. Construction symmetrizes the input as `(A + Aᵀ)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

/// Eigenvalues in ascending order with matching unit eigenvectors (columns).
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `max(1, largest |eigenvalue|)`.
    pub fn scale(&self) -> f64 {
        self.min().abs().max(self.max().abs()).max(1.0)
    }

    /// Rebuilds `V f(Λ) Vᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let mut scaled = self.vectors.clone();
        for (j, &lambda) in self.values.iter().enumerate() {
            let fj = f(lambda);
            scaled.column_mut(j).scale_mut(fj);
        }
        SymMatrix::from_matrix(&scaled * self.vectors.transpose())
    }
}

impl SymMatrix {
    /// Symmetrizes a square matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.nrows() == 0 {
            return Err(Error::DimensionMismatch("empty matrix".into()));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix has non-finite entries".into()));
        }
        Ok(Self::from_matrix(m))
    }

    /// Symmetrizes without validation; callers guarantee a square matrix.
    pub(crate) fn from_matrix(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_row_slice(dim: usize, values: &[f64]) -> Result<Self> {
        if values.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "expected {} entries for a {dim}x{dim} matrix, got {}",
                dim * dim,
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(dim, dim, values))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn spectrum(&self) -> Spectrum {
        let eig = SymmetricEigen::new(self.0.clone());
        let n = self.dim();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        Spectrum { values, vectors }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.spectrum().min()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.spectrum().max()
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.amax()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    pub fn scaled(&self, factor: f64) -> SymMatrix {
        SymMatrix(&self.0 * factor)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &other.0)
    }

    /// `M · self · Mᵀ`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> SymMatrix {
        SymMatrix::from_matrix(m * &self.0 * m.transpose())
    }

    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }

    /// Inverse through Cholesky; fails when the matrix is not numerically PD.
    pub fn cholesky_inverse(&self) -> Result<SymMatrix> {
        let chol = nalgebra::Cholesky::new(self.0.clone())
            .ok_or_else(|| Error::NotPd("Cholesky factorization failed".into()))?;
        Ok(SymMatrix::from_matrix(chol.inverse()))
    }

    /// Moore-Penrose pseudo-inverse; eigenvalues with `|λ| <= 1e-12 λmax` count as zero.
    pub fn pseudo_inverse(&self) -> SymMatrix {
        let spec = self.spectrum();
        let cutoff = PINV_RTOL * spec.min().abs().max(spec.max().abs());
        spec.map(|l| if l.abs() <= cutoff { 0.0 } else { 1.0 / l })
    }
}

/// A symmetric matrix certified to lie in the PSD cone.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    base: SymMatrix,
    min_eig: f64,
    strict: bool,
}

impl PsdMatrix {
    pub(crate) fn from_parts(base: SymMatrix, min_eig: f64, strict: bool) -> Self {
        Self {
            base,
            min_eig,
            strict,
        }
    }

    pub fn as_sym(&self) -> &SymMatrix {
        &self.base
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.base.as_matrix()
    }

    pub fn into_sym(self) -> SymMatrix {
        self.base
    }

    pub fn min_eig(&self) -> f64 {
        self.min_eig
    }

    /// True when the matrix was certified positive definite.
    pub fn is_strict(&self) -> bool {
        self.strict
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }
}

/// Certifies `a ⪰ 0` at relative tolerance `tol`.
pub fn psd_certify(a: &SymMatrix, tol: f64) -> Result<PsdMatrix> {
    let spec = a.spectrum();
    let scale = spec.scale();
    let min_eig = spec.min();
    if min_eig < -tol * scale {
        return Err(Error::NotPsd { min_eig });
    }
    Ok(PsdMatrix {
        base: a.clone(),
        min_eig,
        strict: min_eig > tol * scale,
    })
}

/// Certifies `a ≻ 0`.
pub fn pd_certify(a: &SymMatrix, tol: f64) -> Result<PsdMatrix> {
    let p = psd_certify(a, tol)?;
    if !p.strict {
        return Err(Error::NotPd(format!(
            "smallest eigenvalue {:e} is not positive at tolerance",
            p.min_eig
        )));
    }
    Ok(p)
}

/// Result of comparing two symmetric matrices in the Löwner order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoewnerRelation {
    StrictlyGreater,
    GreaterEqual,
    Equal,
    LessEqual,
    StrictlyLess,
    Incomparable,
}

impl LoewnerRelation {
    /// `A ⪰ B` holds (at tolerance).
    pub fn is_ge(self) -> bool {
        matches!(
            self,
            LoewnerRelation::StrictlyGreater
                | LoewnerRelation::GreaterEqual
                | LoewnerRelation::Equal
        )
    }

    /// `A ⪯ B` holds (at tolerance).
    pub fn is_le(self) -> bool {
        matches!(
            self,
            LoewnerRelation::StrictlyLess | LoewnerRelation::LessEqual | LoewnerRelation::Equal
        )
    }

    pub fn reversed(self) -> Self {
        use LoewnerRelation::*;
        match self {
            StrictlyGreater => StrictlyLess,
            GreaterEqual => LessEqual,
            Equal => Equal,
            LessEqual => GreaterEqual,
            StrictlyLess => StrictlyGreater,
            Incomparable => Incomparable,
        }
    }
}

fn spectral_radius(a: &SymMatrix) -> f64 {
    let s = a.spectrum();
    s.min().abs().max(s.max().abs())
}

/// Classifies `A − B` in the Löwner order.
///
/// The tolerance is relative to `max(1, ρ(A), ρ(B))` so that swapping the
/// arguments yields exactly the reversed relation.
pub fn loewner_compare(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<LoewnerRelation> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "cannot compare {0}x{0} with {1}x{1}",
            a.dim(),
            b.dim()
        )));
    }
    let scale = spectral_radius(a).max(spectral_radius(b)).max(1.0);
    let band = tol * scale;
    let diff = a.sub(b);
    if diff.max_abs() <= band {
        return Ok(LoewnerRelation::Equal);
    }
    let spec = diff.spectrum();
    let (lo, hi) = (spec.min(), spec.max());
    Ok(if lo > band {
        LoewnerRelation::StrictlyGreater
    } else if hi < -band {
        LoewnerRelation::StrictlyLess
    } else if lo >= -band {
        LoewnerRelation::GreaterEqual
    } else if hi <= band {
        LoewnerRelation::LessEqual
    } else {
        LoewnerRelation::Incomparable
    })
}

/// Principal square root of a PSD matrix (negative eigenvalues clamped to 0).
pub fn sqrt_psd(a: &PsdMatrix) -> SymMatrix {
    a.as_sym().spectrum().map(|l| l.max(0.0).sqrt())
}

/// `A^{-1/2}` for a positive definite matrix.
pub fn inv_sqrt_pd(a: &SymMatrix) -> Result<SymMatrix> {
    let spec = a.spectrum();
    if spec.min() <= 0.0 {
        return Err(Error::NotPd(format!(
            "smallest eigenvalue {:e} is not positive",
            spec.min()
        )));
    }
    Ok(spec.map(|l| 1.0 / l.sqrt()))
}

// Determinant as an explicit polynomial in the entries (Laplace expansion).
fn laplace_det(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => 1.0,
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        n => (0..n)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[(0, j)] * laplace_det(&m.clone().remove_row(0).remove_column(j))
            })
            .sum(),
    }
}

/// Adjugate (classical adjoint) `adj(A)` with `A·adj(A) = det(A)·I`.
///
/// Dimensions up to 4 use cofactors, which are exact polynomials in the
/// entries and therefore well defined at singular matrices. Larger matrices
/// use the spectral form `V·diag(∏_{j≠i} λ_j)·Vᵀ`, which is also valid on
/// singular inputs.
pub fn adjugate(a: &SymMatrix) -> SymMatrix {
    let n = a.dim();
    if n == 1 {
        return SymMatrix::identity(1);
    }
    if n <= 4 {
        let m = a.as_matrix();
        let mut adj = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let minor = m.clone().remove_row(j).remove_column(i);
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                adj[(i, j)] = sign * laplace_det(&minor);
            }
        }
        return SymMatrix::from_matrix(adj);
    }
    let spec = a.spectrum();
    let values: Vec<f64> = spec.values.iter().copied().collect();
    let mut cof = spec.vectors.clone();
    for i in 0..n {
        let prod: f64 = values
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, v)| *v)
            .product();
        cof.column_mut(i).scale_mut(prod);
    }
    SymMatrix::from_matrix(&cof * spec.vectors.transpose())
}

/// Outcome of a block PSD test with both criteria evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockPsdReport {
    pub psd: bool,
    /// Smallest eigenvalue of the assembled block matrix.
    pub min_eig: f64,
    /// `max(1, largest |eigenvalue|)` of the assembled block matrix.
    pub scale: f64,
}

/// Assembles `[Q S; Sᵀ R]`.
pub fn assemble_block(q: &SymMatrix, s: &DMatrix<f64>, r: &SymMatrix) -> Result<SymMatrix> {
    let (nq, nr) = (q.dim(), r.dim());
    if s.nrows() != nq || s.ncols() != nr {
        return Err(Error::DimensionMismatch(format!(
            "off-diagonal block is {}x{}, expected {nq}x{nr}",
            s.nrows(),
            s.ncols()
        )));
    }
    let mut full = DMatrix::zeros(nq + nr, nq + nr);
    full.view_mut((0, 0), (nq, nq)).copy_from(q.as_matrix());
    full.view_mut((0, nq), (nq, nr)).copy_from(s);
    full.view_mut((nq, 0), (nr, nq)).copy_from(&s.transpose());
    full.view_mut((nq, nq), (nr, nr)).copy_from(r.as_matrix());
    Ok(SymMatrix::from_matrix(full))
}

/// Decides `[Q S; Sᵀ R] ⪰ 0` twice: from the spectrum of the assembled
/// matrix, and from the generalized Schur complement criterion
/// `R ⪰ 0, Q − S R⁺ Sᵀ ⪰ 0, S(I − R R⁺) = 0`.
///
/// The two verdicts may only differ when one of them sits within `100·tol`
/// of the PSD boundary; in that case the direct spectral verdict is kept.
/// Any other disagreement is an [`Error::InternalInconsistency`].
pub fn block_psd_report(
    q: &SymMatrix,
    s: &DMatrix<f64>,
    r: &SymMatrix,
    tol: f64,
) -> Result<BlockPsdReport> {
    let full = assemble_block(q, s, r)?;
    let spec = full.spectrum();
    let scale = spec.scale();
    let min_eig = spec.min();
    let direct = min_eig >= -tol * scale;

    let r_spec = r.spectrum();
    let r_pinv = r.pseudo_inverse();
    let schur = q.sub(&SymMatrix::from_matrix(
        s * r_pinv.as_matrix() * s.transpose(),
    ));
    let schur_min = schur.min_eigenvalue();
    let proj = DMatrix::identity(r.dim(), r.dim()) - r.as_matrix() * r_pinv.as_matrix();
    let range_residual = if s.is_empty() { 0.0 } else { (s * proj).amax() };
    let r_ok = r_spec.min() >= -tol * scale;
    let schur_ok = schur_min >= -tol * scale;
    let range_ok = range_residual <= tol.sqrt() * scale;
    let via_schur = r_ok && schur_ok && range_ok;

    if direct != via_schur {
        let loose = 100.0 * tol * scale;
        let borderline = min_eig.abs() <= loose
            || (r_spec.min() >= -loose && (schur_min.abs() <= loose || !range_ok));
        if !borderline {
            return Err(Error::InternalInconsistency(format!(
                "block PSD criteria disagree: spectral min {min_eig:e}, Schur complement min {schur_min:e}, range residual {range_residual:e}"
            )));
        }
    }
    Ok(BlockPsdReport {
        psd: direct,
        min_eig,
        scale,
    })
}

/// `[Q S; Sᵀ R] ⪰ 0`, see [`block_psd_report`].
pub fn block_psd_check(q: &SymMatrix, s: &DMatrix<f64>, r: &SymMatrix, tol: f64) -> Result<bool> {
    block_psd_report(q, s, r, tol).map(|rep| rep.psd)
}

/// `X = P1^{-1/2} P12 P2^{-1/2}`; `σmax(X) < 1` exactly when the joint is PD.
pub fn cross_factor(joint: &JointCovariance) -> Result<DMatrix<f64>> {
    let p1 = joint.p1().as_sym();
    let p2 = joint.p2().as_sym();
    let a = inv_sqrt_pd(p1).map_err(|_| Error::NotPd("first diagonal block is singular".into()))?;
    let b =
        inv_sqrt_pd(p2).map_err(|_| Error::NotPd("second diagonal block is singular".into()))?;
    Ok(a.as_matrix() * joint.p12() * b.as_matrix())
}

/// Inverse of [`cross_factor`]: `P12 = P1^{1/2} X P2^{1/2}`.
pub fn cross_from_factor(p1: &PsdMatrix, p2: &PsdMatrix, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != p1.dim() || x.ncols() != p2.dim() {
        return Err(Error::DimensionMismatch(format!(
            "factor is {}x{}, expected {}x{}",
            x.nrows(),
            x.ncols(),
            p1.dim(),
            p2.dim()
        )));
    }
    Ok(sqrt_psd(p1).as_matrix() * x * sqrt_psd(p2).as_matrix())
}

/// Largest singular value.
pub fn sigma_max(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Numerical rank with threshold `σ > rtol · σmax`.
pub fn numerical_rank(m: &DMatrix<f64>, rtol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rtol * top).count()
}
