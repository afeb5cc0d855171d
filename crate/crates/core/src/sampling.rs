//! Seeded random matrices and fusion problems.
//!
//! Every generator takes an explicit RNG. Parallel samplers derive one
//! ChaCha stream per work chunk from `(seed, chunk index)`, so results do
//! not depend on the number of threads.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{numerical_rank, sigma_max, SymMatrix};
use crate::problem::{stack_rows, FusionProblem, PartialEstimate, RANK_RTOL};

pub type SimRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
pub fn random_orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, n, n).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Random positive definite matrix with condition number at most `cond_max`.
///
/// Eigenvalues are log-uniform on `[s, s·cond_max]` with the base scale `s`
/// drawn log-uniformly from `[0.2, 2]`.
pub fn random_pd<R: Rng + ?Sized>(rng: &mut R, n: usize, cond_max: f64) -> SymMatrix {
    let base = (rng.random_range(0.2f64.ln()..2.0f64.ln())).exp();
    let span = cond_max.max(1.0).ln();
    let eigs: Vec<f64> = (0..n)
        .map(|_| base * (rng.random::<f64>() * span).exp())
        .collect();
    with_eigenvalues(rng, &eigs)
}

/// `Q diag(eigs) Qᵀ` with a random orthogonal `Q`.
pub fn with_eigenvalues<R: Rng + ?Sized>(rng: &mut R, eigs: &[f64]) -> SymMatrix {
    let q = random_orthogonal(rng, eigs.len());
    SymMatrix::from_diagonal(eigs).congruence(&q)
}

/// Random PSD matrix `G Gᵀ` of the given rank, scaled to unit trace.
pub fn random_psd<R: Rng + ?Sized>(rng: &mut R, n: usize, rank: usize) -> SymMatrix {
    if rank == 0 {
        return SymMatrix::zeros(n);
    }
    let g = gaussian_matrix(rng, n, rank);
    let m = SymMatrix::new(&g * g.transpose()).expect("square");
    let tr = m.trace();
    m.scaled(1.0 / tr)
}

/// Random matrix with `σmax = radius`, direction drawn from a Gaussian.
pub fn random_contraction<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    radius: f64,
) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, rows, cols);
    let s = sigma_max(&g);
    if s == 0.0 {
        return g;
    }
    g * (radius / s)
}

/// Gaussian `p×n` matrix with full row rank.
pub fn random_observation<R: Rng + ?Sized>(rng: &mut R, p: usize, n: usize) -> DMatrix<f64> {
    loop {
        let h = gaussian_matrix(rng, p, n);
        if numerical_rank(&h, 1e-6) == p {
            return h;
        }
    }
}

/// Shape of randomly generated problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemShape {
    pub n: usize,
    pub p1: usize,
    pub p2: usize,
    pub cond_max: f64,
}

/// Random problem of a given shape satisfying the rank condition (A1).
pub fn random_problem_with<R: Rng + ?Sized>(rng: &mut R, shape: ProblemShape) -> FusionProblem {
    assert!(
        shape.p1 + shape.p2 >= shape.n,
        "shape cannot satisfy the rank condition"
    );
    loop {
        let h1 = random_observation(rng, shape.p1, shape.n);
        let h2 = random_observation(rng, shape.p2, shape.n);
        if numerical_rank(&stack_rows(&h1, &h2), 1e-6) < shape.n {
            continue;
        }
        let est1 = PartialEstimate::new(
            h1,
            gaussian_vector(rng, shape.p1),
            random_pd(rng, shape.p1, shape.cond_max),
        )
        .expect("valid estimate");
        let est2 = PartialEstimate::new(
            h2,
            gaussian_vector(rng, shape.p2),
            random_pd(rng, shape.p2, shape.cond_max),
        )
        .expect("valid estimate");
        if let Ok(problem) = FusionProblem::new(est1, est2) {
            debug_assert!(numerical_rank(&problem.h(), RANK_RTOL) == shape.n);
            return problem;
        }
    }
}

/// Random shape with `1 <= n <= max_n` and `p1 + p2 >= n`.
pub fn random_shape<R: Rng + ?Sized>(rng: &mut R, max_n: usize) -> ProblemShape {
    let n = rng.random_range(1..=max_n);
    loop {
        let p1 = rng.random_range(1..=n);
        let p2 = rng.random_range(1..=n);
        if p1 + p2 >= n {
            return ProblemShape {
                n,
                p1,
                p2,
                cond_max: 100.0,
            };
        }
    }
}

pub fn random_problem<R: Rng + ?Sized>(rng: &mut R, max_n: usize) -> FusionProblem {
    let shape = random_shape(rng, max_n);
    random_problem_with(rng, shape)
}
