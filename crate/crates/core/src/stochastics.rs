//! Seeded random streams, Gaussian sampling and densities, and a Cholesky
//! factorization that tolerates positive semi-definite input.
//!
//! The generator is ChaCha8 (`rand_chacha`), seeded with `seed_from_u64`
//! and switched to an independent stream with `set_stream`. Standard normal
//! variates use the ziggurat sampler from `rand_distr`. Both are portable,
//! so a `(seed, stream)` pair reproduces the same draws on every platform.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};

/// Relative jitter levels tried in order, as multiples of the trace.
const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Deterministic random stream identified by `(seed, stream)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = M + jitter·I`.
#[derive(Debug, Clone)]
pub struct PsdFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl PsdFactor {
    /// Wraps a lower-triangular `L`; no check beyond squareness.
    pub fn from_lower(lower: DMatrix<f64>) -> Self {
        debug_assert_eq!(lower.nrows(), lower.ncols());
        Self { lower, jitter: 0.0 }
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Diagonal jitter that had to be added for the factorization to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `L⁻¹ b`
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.forward_in_place(x.as_mut_slice());
        x
    }

    /// `(L Lᵀ)⁻¹ b`
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.forward_in_place(x.as_mut_slice());
        self.backward_in_place(x.as_mut_slice());
        x
    }

    /// `(L Lᵀ)⁻¹ B`, column by column.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        for mut col in x.column_iter_mut() {
            let slice = col.as_mut_slice();
            self.forward_in_place(slice);
            self.backward_in_place(slice);
        }
        x
    }

    fn forward_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lower[(i, k)] * x[k];
            }
            x[i] = s / self.lower[(i, i)];
        }
    }

    fn backward_in_place(&self, x: &mut [f64]) {
        let n = self.dim();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.lower[(k, i)] * x[k];
            }
            x[i] = s / self.lower[(i, i)];
        }
    }
}

/// Cholesky factorization with a jitter ladder for semi-definite input.
///
/// Only the lower triangle of `m` is read. Jitter levels `0, 1e-12, 1e-10,
/// 1e-8` times the trace are tried in turn; the first that yields strictly
/// positive pivots is kept.
pub fn factor_psd(m: &DMatrix<f64>) -> Result<PsdFactor> {
    check_dim("factor_psd (square)", m.nrows(), m.ncols())?;
    let n = m.nrows();
    let max_diag = m.diagonal().iter().fold(0.0_f64, |a, &d| a.max(d.abs()));
    for rel in JITTER_LADDER {
        let jitter = rel * m.trace();
        if rel > 0.0 && !(jitter > 0.0) {
            break;
        }
        let tol = (n as f64) * f64::EPSILON * (max_diag + jitter);
        if let Some(lower) = cholesky_lower(m, jitter, tol) {
            return Ok(PsdFactor { lower, jitter });
        }
    }
    Err(Error::NotPsd {
        min_eigenvalue: min_eigenvalue(m),
    })
}

/// Lower-triangular `L` with `L Lᵀ = A Aᵀ`, taken from a QR factorization of
/// `Aᵀ`. The product is never formed, so `L Lᵀ` stays positive semi-definite
/// however badly scaled the columns of `A` are.
pub fn triangularize(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = a.shape();
    let mut at = DMatrix::zeros(cols.max(rows), rows);
    at.view_mut((0, 0), (cols, rows)).copy_from(&a.transpose());
    let r = at.qr().r();
    let mut lower = r.transpose();
    for j in 0..rows {
        if lower[(j, j)] < 0.0 {
            lower.column_mut(j).neg_mut();
        }
    }
    lower
}

fn cholesky_lower(m: &DMatrix<f64>, jitter: f64, tol: f64) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)] + jitter;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > tol) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = symmetrize(m);
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

/// `(M + Mᵀ) / 2`
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Draw from `N(mean, cov)`. An all-zero covariance returns `mean` unchanged.
pub fn mvn_sample(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut RngStream) -> Result<DVector<f64>> {
    check_dim("mvn_sample covariance", mean.len(), cov.nrows())?;
    if cov.iter().all(|&v| v == 0.0) {
        return Ok(mean.clone());
    }
    let factor = factor_psd(cov)?;
    Ok(mvn_sample_factored(mean, &factor, rng))
}

/// Draw from `N(mean, L Lᵀ)` given an existing factor.
pub fn mvn_sample_factored(mean: &DVector<f64>, factor: &PsdFactor, rng: &mut RngStream) -> DVector<f64> {
    let xi = DVector::from_fn(mean.len(), |_, _| rng.standard_normal());
    mean + factor.lower() * xi
}

/// Log-density of `N(mean, cov)` at `x`, evaluated through the Cholesky factor.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    check_dim("mvn_logpdf mean", x.len(), mean.len())?;
    check_dim("mvn_logpdf covariance", x.len(), cov.nrows())?;
    let factor = factor_psd(cov)?;
    Ok(mvn_logpdf_factored(x, mean, &factor))
}

pub fn mvn_logpdf_factored(x: &DVector<f64>, mean: &DVector<f64>, factor: &PsdFactor) -> f64 {
    let w = factor.solve_lower(&(x - mean));
    -0.5 * (x.len() as f64 * LN_2PI + factor.log_det() + w.norm_squared())
}
