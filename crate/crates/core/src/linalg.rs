//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest eigenvalue allowed in covariance-like matrices after an M step.
pub const EIG_FLOOR: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order and
/// each eigenvector signed so that its largest-magnitude entry is positive.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let d = m.nrows();
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(d, order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = DMatrix::zeros(d, d);
    for (c, &k) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(k).clone_owned();
        let mut best = 0;
        for i in 1..d {
            if v[i].abs() > v[best].abs() + 1e-12 {
                best = i;
            }
        }
        if v[best] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(c, &v);
    }
    (values, vectors)
}

/// Symmetrize and raise every eigenvalue to at least `floor`.
pub fn floor_eigen(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let s = symmetrize(m);
    let eig = SymmetricEigen::new(s.clone());
    if eig.eigenvalues.iter().all(|&v| v >= floor) {
        return s;
    }
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let r = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    symmetrize(&r)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Cholesky factorization of a symmetric positive-definite matrix.
pub fn cholesky(m: &DMatrix<f64>, op: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(op, "non-finite matrix entries"));
    }
    Cholesky::new(symmetrize(m))
        .ok_or_else(|| Error::numerical(op, "matrix is not positive definite"))
}

/// Cholesky factorization that adds a small diagonal jitter when the matrix is
/// numerically semi-definite.
pub fn cholesky_jitter(m: &DMatrix<f64>, op: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Ok(c) = cholesky(m, op) {
        return Ok(c);
    }
    let scale = m
        .diagonal()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let mut jitter = 1e-12 * scale;
    let eye = DMatrix::<f64>::identity(m.nrows(), m.nrows());
    for _ in 0..8 {
        if let Some(c) = Cholesky::new(symmetrize(m) + &eye * jitter) {
            return Ok(c);
        }
        jitter *= 100.0;
    }
    Err(Error::numerical(op, "matrix is not positive definite"))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>, op: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky_jitter(m, op)?.inverse()))
}

/// `log det` from a Cholesky factor.
pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>()
}

/// Gaussian log-density evaluator with a cached factorization.
#[derive(Debug, Clone)]
pub struct GaussianLogPdf {
    pub mean: DVector<f64>,
    l: DMatrix<f64>,
    constant: f64,
}

impl GaussianLogPdf {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>, op: &str) -> Result<Self> {
        let c = cholesky_jitter(cov, op)?;
        let d = mean.len() as f64;
        let constant = -0.5 * (d * LN_2PI + chol_logdet(&c));
        Ok(GaussianLogPdf {
            mean,
            l: c.l(),
            constant,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Log-density at `x` given as a slice.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let mut buf = [0.0f64; 32];
        let mut heap;
        let r: &mut [f64] = if d <= 32 {
            &mut buf[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap[..]
        };
        for i in 0..d {
            r[i] = x[i] - self.mean[i];
        }
        // forward substitution L y = r
        let mut quad = 0.0;
        for i in 0..d {
            let mut s = r[i];
            for k in 0..i {
                s -= self.l[(i, k)] * r[k];
            }
            let yi = s / self.l[(i, i)];
            r[i] = yi;
            quad += yi * yi;
        }
        self.constant - 0.5 * quad
    }
}

/// Sampler of `N(mean, cov)` through a Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    pub mean: DVector<f64>,
    pub l: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>, op: &str) -> Result<Self> {
        let c = cholesky_jitter(cov, op)?;
        Ok(GaussianSampler { mean, l: c.l() })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Write `mean + shift + L eps` into `out`.
    pub fn draw_into(&self, shift: Option<&[f64]>, eps: &[f64], out: &mut [f64]) {
        let d = self.mean.len();
        for i in 0..d {
            let mut v = self.mean[i];
            if let Some(s) = shift {
                v += s[i];
            }
            for k in 0..=i {
                v += self.l[(i, k)] * eps[k];
            }
            out[i] = v;
        }
    }
}

/// Numerically stable `log Σ exp(x)`; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if m == f64::INFINITY {
        return f64::INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalize log-weights into probabilities in place and return the log
/// normalizer. An all `-inf` input becomes uniform.
pub fn normalize_log_weights(logw: &mut [f64]) -> f64 {
    let lse = logsumexp(logw);
    if !lse.is_finite() {
        let u = 1.0 / logw.len() as f64;
        for w in logw.iter_mut() {
            *w = u;
        }
        return lse;
    }
    for w in logw.iter_mut() {
        *w = (*w - lse).exp();
    }
    lse
}

/// Solve the symmetric positive semi-definite system `A X = B`, adding a ridge
/// when `A` is rank-deficient. Returns the solution and whether the ridge was
/// needed.
pub fn solve_psd(a: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> Result<(DMatrix<f64>, bool)> {
    let s = symmetrize(a);
    if let Some(c) = Cholesky::new(s.clone()) {
        let diag_min = c
            .l_dirty()
            .diagonal()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let diag_max = c.l_dirty().diagonal().iter().cloned().fold(0.0, f64::max);
        if diag_min > 1e-7 * diag_max.max(1e-300) {
            return Ok((c.solve(b), false));
        }
    }
    let scale = s
        .diagonal()
        .iter()
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        .max(1.0);
    let eye = DMatrix::<f64>::identity(s.nrows(), s.nrows());
    let c = Cholesky::new(&s + eye * (ridge * scale)).ok_or_else(|| {
        Error::numerical(
            "solve_psd",
            "ridge-regularized system not positive definite",
        )
    })?;
    Ok((c.solve(b), true))
}

/// Column means of a matrix.
pub fn column_means(m: &DMatrix<f64>) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), (0..m.ncols()).map(|j| m.column(j).sum() / n))
}

/// Sample covariance with divisor `n` (maximum-likelihood form).
pub fn covariance_mle(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows().max(1) as f64;
    let mu = column_means(m);
    let mut c = m.clone();
    for mut row in c.row_iter_mut() {
        row -= mu.transpose();
    }
    symmetrize(&(c.transpose() * &c / n))
}

/// Rows of `m` whose indices are listed.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Columns of `m` whose indices are listed.
pub fn select_cols(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
