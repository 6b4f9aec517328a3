use nalgebra::{DMatrix, DVector};

use crate::data::{MixedDataset, VarKind};
use crate::error::{Error, Result};
use crate::linalg::{column_means, covariance_mle, spd_inverse, sym_eigen_desc, symmetrize};

/// Principal components of a data matrix.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// `n × r` projections of the centered data.
    pub scores: DMatrix<f64>,
    /// `d × r` orthonormal directions.
    pub loadings: DMatrix<f64>,
    /// Every eigenvalue of the covariance (divisor `n`), decreasing.
    pub eigenvalues: Vec<f64>,
    /// Share of total variance carried by each retained component.
    pub explained: Vec<f64>,
    pub mean: DVector<f64>,
}

fn center(z: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let mu = column_means(z);
    let mut c = z.clone();
    for mut row in c.row_iter_mut() {
        row -= mu.transpose();
    }
    (c, mu)
}

/// PCA through the eigendecomposition of the covariance matrix.
pub fn pca(z: &DMatrix<f64>, r: usize) -> Result<PcaResult> {
    let d = z.ncols();
    if r == 0 || r > d {
        return Err(Error::Input(format!(
            "cannot extract {r} components from {d} columns"
        )));
    }
    let (c, mean) = center(z);
    let cov = covariance_mle(z);
    let (vals, vecs) = sym_eigen_desc(&cov);
    let eigenvalues: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = eigenvalues.iter().sum();
    let loadings = vecs.columns(0, r).clone_owned();
    let scores = &c * &loadings;
    let explained = eigenvalues[..r]
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaResult {
        scores,
        loadings,
        eigenvalues,
        explained,
        mean,
    })
}

/// Multiple correspondence analysis of coded categorical columns.
#[derive(Debug, Clone)]
pub struct McaResult {
    /// Row principal coordinates, `n × r`.
    pub scores: DMatrix<f64>,
    /// Column principal coordinates of the retained levels, `levels × r`.
    pub column_coords: DMatrix<f64>,
    /// Principal inertias (squared singular values), decreasing.
    pub inertias: Vec<f64>,
    /// Share of total inertia per retained dimension.
    pub explained: Vec<f64>,
    /// `(column, code)` of every retained level.
    pub levels: Vec<(usize, u32)>,
    pub warnings: Vec<String>,
}

/// Indicator columns of the observed levels, with their `(column, code)`.
fn indicator(
    codes: &DMatrix<u32>,
    n_levels: &[usize],
) -> (DMatrix<f64>, Vec<(usize, u32)>, Vec<String>) {
    let n = codes.nrows();
    let mut levels = Vec::new();
    let mut warnings = Vec::new();
    for (j, &nl) in n_levels.iter().enumerate() {
        for code in 0..nl as u32 {
            if (0..n).any(|i| codes[(i, j)] == code) {
                levels.push((j, code));
            } else {
                warnings.push(format!("column {j}: level {code} never observed, dropped"));
            }
        }
    }
    let z = DMatrix::from_fn(n, levels.len(), |i, k| {
        let (j, code) = levels[k];
        f64::from(u8::from(codes[(i, j)] == code))
    });
    (z, levels, warnings)
}

/// Correspondence analysis of the complete disjunctive table, through the
/// eigendecomposition of `SᵀS` for the standardized residuals `S`.
pub fn mca(codes: &DMatrix<u32>, n_levels: &[usize], r: usize) -> Result<McaResult> {
    let (n, q) = codes.shape();
    if n == 0 || q == 0 {
        return Err(Error::Input(
            "correspondence analysis of an empty table".into(),
        ));
    }
    let (z, levels, warnings) = indicator(codes, n_levels);
    let j = levels.len();
    let max_dim = j.saturating_sub(q);
    if r == 0 || r > max_dim {
        return Err(Error::Input(format!(
            "correspondence analysis supports at most {max_dim} dimensions here, {r} requested"
        )));
    }
    let total = (n * q) as f64;
    let col_mass: Vec<f64> = (0..j).map(|k| z.column(k).sum() / total).collect();
    let row_mass = 1.0 / n as f64;
    let s = DMatrix::from_fn(n, j, |i, k| {
        (z[(i, k)] / total - row_mass * col_mass[k]) / (row_mass * col_mass[k]).sqrt()
    });
    let sts = symmetrize(&(s.transpose() * &s));
    let (vals, vecs) = sym_eigen_desc(&sts);
    let inertias: Vec<f64> = vals.iter().map(|v| v.max(0.0)).collect();
    let total_inertia: f64 = inertias.iter().sum();
    let v = vecs.columns(0, r).clone_owned();
    // F = D_r^{-1/2} S V
    let scores = (&s * &v) / row_mass.sqrt();
    // G = D_c^{-1/2} V Σ
    let column_coords = DMatrix::from_fn(j, r, |k, d| {
        v[(k, d)] * inertias[d].sqrt() / col_mass[k].sqrt()
    });
    let explained = inertias[..r]
        .iter()
        .map(|x| {
            if total_inertia > 0.0 {
                x / total_inertia
            } else {
                0.0
            }
        })
        .collect();
    Ok(McaResult {
        scores,
        column_coords,
        inertias,
        explained,
        levels,
        warnings,
    })
}

/// Factor analysis of mixed data: PCA of the standardized numeric columns
/// joined with centered indicator columns scaled by `1/√p_level`. Count
/// columns are standardized and treated as numeric.
pub fn famd(ds: &MixedDataset, r: usize) -> Result<PcaResult> {
    let n = ds.n;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (col, spec) in ds.schema.columns.iter().enumerate() {
        if let Some(pos) = ds.continuous_cols.iter().position(|&c| c == col) {
            cols.push(standardized((0..n).map(|i| ds.y_c[(i, pos)]).collect()));
            continue;
        }
        let pos = ds.discrete_cols.iter().position(|&c| c == col).unwrap();
        if spec.kind == VarKind::Count {
            cols.push(standardized(
                (0..n).map(|i| ds.y_d[(i, pos)] as f64).collect(),
            ));
            continue;
        }
        for code in 0..ds.n_levels[pos] as u32 {
            let ind: Vec<f64> = (0..n)
                .map(|i| f64::from(u8::from(ds.y_d[(i, pos)] == code)))
                .collect();
            let p = ind.iter().sum::<f64>() / n as f64;
            if p > 0.0 {
                cols.push(ind.iter().map(|v| (v - p) / p.sqrt()).collect());
            }
        }
    }
    let x = DMatrix::from_fn(n, cols.len(), |i, k| cols[k][i]);
    pca(&x, r)
}

fn standardized(v: Vec<f64>) -> Vec<f64> {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    let s = if s > 0.0 { s } else { 1.0 };
    v.iter().map(|x| (x - m) / s).collect()
}

/// Factor-analysis fit `y = μ + Λ z + ε`, `ε ~ N(0, diag ψ)`.
#[derive(Debug, Clone)]
pub struct FaResult {
    pub mean: DVector<f64>,
    pub loading: DMatrix<f64>,
    pub psi: DVector<f64>,
    /// Posterior means `E[z | y]`, `n × r`.
    pub scores: DMatrix<f64>,
    /// Log-likelihood after each EM iteration.
    pub loglik: Vec<f64>,
    pub converged: bool,
}

/// Lower bound of the factor-analysis noise variances.
pub const FA_PSI_FLOOR: f64 = 1e-6;

fn fa_loglik(s: &DMatrix<f64>, lambda: &DMatrix<f64>, psi: &DVector<f64>, n: f64) -> f64 {
    let d = s.nrows();
    let sigma = lambda * lambda.transpose() + DMatrix::from_diagonal(psi);
    match crate::linalg::cholesky_jitter(&sigma, "fa_em") {
        Ok(c) => {
            let logdet = crate::linalg::chol_logdet(&c);
            let tr = (c.solve(s)).trace();
            -0.5 * n * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + tr)
        }
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Maximum-likelihood factor analysis by EM on the sample covariance, started
/// from principal components; stops after `max_iter` iterations or when the
/// relative log-likelihood gain drops below 1e-6.
pub fn fa_em(z: &DMatrix<f64>, r: usize, max_iter: usize) -> Result<FaResult> {
    let (n, d) = z.shape();
    if r == 0 || r >= d {
        return Err(Error::Input(format!(
            "factor analysis needs 0 < r < d, got r={r}, d={d}"
        )));
    }
    if n == 0 {
        return Err(Error::Input("factor analysis of no observations".into()));
    }
    let (c, mean) = center(z);
    let s = covariance_mle(z);
    let (vals, vecs) = sym_eigen_desc(&s);
    let noise = (r..d).map(|k| vals[k].max(0.0)).sum::<f64>() / (d - r) as f64;
    let mut lambda = DMatrix::from_fn(d, r, |a, k| {
        vecs[(a, k)] * (vals[k] - noise).max(1e-6).sqrt()
    });
    let mut psi = DVector::from_fn(d, |a, _| {
        (s[(a, a)] - lambda.row(a).norm_squared()).max(FA_PSI_FLOOR.max(1e-3 * s[(a, a)]))
    });
    let nf = n as f64;
    let mut trace = vec![fa_loglik(&s, &lambda, &psi, nf)];
    let mut converged = false;
    for _ in 0..max_iter {
        let sigma = &lambda * lambda.transpose() + DMatrix::from_diagonal(&psi);
        let sigma_inv = spd_inverse(&sigma, "fa_em")?;
        let beta = lambda.transpose() * &sigma_inv;
        let ezz = DMatrix::identity(r, r) - &beta * &lambda + &beta * &s * beta.transpose();
        let ezz_inv = spd_inverse(&ezz, "fa_em")?;
        let new_lambda = &s * beta.transpose() * ezz_inv;
        let fit = &new_lambda * &beta * &s;
        let new_psi = DVector::from_fn(d, |a, _| (s[(a, a)] - fit[(a, a)]).max(FA_PSI_FLOOR));
        lambda = new_lambda;
        psi = new_psi;
        let ll = fa_loglik(&s, &lambda, &psi, nf);
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if (ll - prev).abs() <= 1e-6 * prev.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let sigma = &lambda * lambda.transpose() + DMatrix::from_diagonal(&psi);
    let beta = lambda.transpose() * spd_inverse(&sigma, "fa_em")?;
    let scores = &c * beta.transpose();
    Ok(FaResult {
        mean,
        loading: lambda,
        psi,
        scores,
        loglik: trace,
        converged,
    })
}

/// Partial least squares regression of `Y` on `X` (PLS2).
#[derive(Debug, Clone)]
pub struct PlsResult {
    /// X weights, `px × r`.
    pub x_weights: DMatrix<f64>,
    /// X loadings, `px × r`.
    pub x_loadings: DMatrix<f64>,
    /// Y loadings, `py × r`.
    pub y_loadings: DMatrix<f64>,
    /// X scores, `n × r`.
    pub x_scores: DMatrix<f64>,
    /// Regression map on centered data: `Ŷ − ȳ = (X − x̄) B`, `px × py`.
    pub coef: DMatrix<f64>,
    pub x_mean: DVector<f64>,
    pub y_mean: DVector<f64>,
}

impl PlsResult {
    /// Intercept of the fitted map on raw data.
    pub fn intercept(&self) -> DVector<f64> {
        &self.y_mean - self.coef.transpose() * &self.x_mean
    }
}

/// PLS2 with deflation; each weight vector is the dominant left singular
/// vector of `XᵀY` for the current residual blocks.
pub fn pls_regression(x: &DMatrix<f64>, y: &DMatrix<f64>, r: usize) -> Result<PlsResult> {
    let (n, px) = x.shape();
    let py = y.ncols();
    if y.nrows() != n {
        return Err(Error::Input("PLS blocks have different row counts".into()));
    }
    if r == 0 || r > px.min(py).max(1).min(px) {
        return Err(Error::Input(format!("PLS cannot extract {r} components")));
    }
    let (mut xr, x_mean) = center(x);
    let (mut yr, y_mean) = center(y);
    if xr.norm() == 0.0 || yr.norm() == 0.0 {
        return Err(Error::Input("PLS block with zero variance".into()));
    }
    let mut w_mat = DMatrix::zeros(px, r);
    let mut p_mat = DMatrix::zeros(px, r);
    let mut q_mat = DMatrix::zeros(py, r);
    let mut t_mat = DMatrix::zeros(n, r);
    let mut extracted = 0;
    for k in 0..r {
        let cross = xr.transpose() * &yr;
        let (vals, vecs) = sym_eigen_desc(&(&cross * cross.transpose()));
        if vals[0] <= 1e-24 {
            break;
        }
        let w = vecs.column(0).into_owned();
        let t = &xr * &w;
        let tt = t.norm_squared();
        if tt <= 1e-300 {
            break;
        }
        let p = xr.transpose() * &t / tt;
        let q = yr.transpose() * &t / tt;
        xr -= &t * p.transpose();
        yr -= &t * q.transpose();
        w_mat.set_column(k, &w);
        p_mat.set_column(k, &p);
        q_mat.set_column(k, &q);
        t_mat.set_column(k, &t);
        extracted += 1;
    }
    if extracted == 0 {
        return Err(Error::Input("PLS blocks are uncorrelated".into()));
    }
    let w_mat = w_mat.columns(0, extracted).clone_owned();
    let p_mat = p_mat.columns(0, extracted).clone_owned();
    let q_mat = q_mat.columns(0, extracted).clone_owned();
    let t_mat = t_mat.columns(0, extracted).clone_owned();
    let ptw = p_mat.transpose() * &w_mat;
    let ptw_inv = ptw
        .try_inverse()
        .ok_or_else(|| Error::numerical("pls_regression", "singular PᵀW"))?;
    let coef = &w_mat * ptw_inv * q_mat.transpose();
    Ok(PlsResult {
        x_weights: w_mat,
        x_loadings: p_mat,
        y_loadings: q_mat,
        x_scores: t_mat,
        coef,
        x_mean,
        y_mean,
    })
}
