//! Single-variable regressions of one observed variable on latent scores:
//! maximum-likelihood link fits and Wald tests.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::data::VarKind;
use crate::linalg::solve_psd;
use crate::links::{sigmoid, weighted_loglik_grad, LinkParams, VARIANCE_FLOOR};
use crate::optim::{bfgs_minimize, BfgsOptions};

/// Logistic (binomial) regression by iteratively reweighted least squares.
///
/// `x` is `n × p` without an intercept column; `trials` is 1 for binary data.
/// The ridge penalizes the slopes only. Returns `(intercept, slopes)`.
pub fn irls_logistic(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    trials: f64,
    ridge: f64,
    max_iter: usize,
) -> (f64, Vec<f64>) {
    let (n, p) = x.shape();
    let mut beta = DVector::zeros(p + 1);
    // start the intercept at the weighted logit of the mean response
    let sw: f64 = w.iter().sum();
    let mean = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / (sw * trials).max(1e-300);
    let mean = mean.clamp(1e-4, 1.0 - 1e-4);
    beta[0] = (mean / (1.0 - mean)).ln();
    for _ in 0..max_iter {
        let mut xtwx = DMatrix::zeros(p + 1, p + 1);
        let mut xtwz = DVector::zeros(p + 1);
        for i in 0..n {
            let mut eta = beta[0];
            for a in 0..p {
                eta += beta[a + 1] * x[(i, a)];
            }
            let mu = sigmoid(eta.clamp(-35.0, 35.0));
            let var = (trials * mu * (1.0 - mu)).max(1e-10);
            let z = eta + (y[i] - trials * mu) / var;
            let wi = w[i] * var;
            for a in 0..=p {
                let xa = if a == 0 { 1.0 } else { x[(i, a - 1)] };
                xtwz[a] += wi * xa * z;
                for b in a..=p {
                    let xb = if b == 0 { 1.0 } else { x[(i, b - 1)] };
                    xtwx[(a, b)] += wi * xa * xb;
                }
            }
        }
        for a in 0..=p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        for a in 1..=p {
            xtwx[(a, a)] += ridge;
        }
        let Ok((next, _)) = solve_psd(
            &xtwx,
            &DMatrix::from_column_slice(p + 1, 1, xtwz.as_slice()),
            1e-10,
        ) else {
            break;
        };
        let next = next.column(0).into_owned();
        let delta = (&next - &beta).amax();
        beta = next;
        if delta < 1e-10 {
            break;
        }
    }
    (beta[0], beta.rows(1, p).iter().cloned().collect())
}

/// Weighted least squares of `y` on `(1, x)` with a ridge on the slopes.
/// Returns `(intercept, slopes, residual variance)`.
pub fn weighted_ols(x: &DMatrix<f64>, y: &[f64], w: &[f64], ridge: f64) -> (f64, Vec<f64>, f64) {
    let (n, p) = x.shape();
    let mut a = DMatrix::zeros(p + 1, p + 1);
    let mut b = DMatrix::zeros(p + 1, 1);
    for i in 0..n {
        for r in 0..=p {
            let xr = if r == 0 { 1.0 } else { x[(i, r - 1)] };
            b[(r, 0)] += w[i] * xr * y[i];
            for c in 0..=p {
                let xc = if c == 0 { 1.0 } else { x[(i, c - 1)] };
                a[(r, c)] += w[i] * xr * xc;
            }
        }
    }
    for r in 1..=p {
        a[(r, r)] += ridge;
    }
    let coef = solve_psd(&a, &b, 1e-10)
        .map(|(c, _)| c)
        .unwrap_or_else(|_| DMatrix::zeros(p + 1, 1));
    let sw: f64 = w.iter().sum::<f64>().max(1e-300);
    let mut rss = 0.0;
    for i in 0..n {
        let mut f = coef[(0, 0)];
        for c in 0..p {
            f += coef[(c + 1, 0)] * x[(i, c)];
        }
        rss += w[i] * (y[i] - f).powi(2);
    }
    (
        coef[(0, 0)],
        (0..p).map(|c| coef[(c + 1, 0)]).collect(),
        (rss / sw).max(VARIANCE_FLOOR),
    )
}

/// Free-coordinate indices of the loadings of `p`.
fn loading_positions(p: &LinkParams) -> Vec<usize> {
    let n_int = p.intercepts.len();
    let f = p.free_dims.min(p.dim());
    (0..p.loadings.len() * f).map(|k| n_int + k).collect()
}

/// Penalized maximum likelihood of a link by BFGS in free coordinates:
/// maximizes `Σ w log f(y | z) / Σ w − ridge/2 ‖loadings‖²`.
pub fn fit_link(
    p0: &LinkParams,
    ys: &[f64],
    zs: &[f64],
    ws: &[f64],
    ridge: f64,
    max_iter: usize,
) -> LinkParams {
    let sw: f64 = ws.iter().sum::<f64>().max(1e-300);
    let wn: Vec<f64> = ws.iter().map(|w| w / sw).collect();
    let pos = loading_positions(p0);
    let objective = |x: &[f64]| {
        let p = p0.from_free(x);
        let (f, g) = weighted_loglik_grad(&p, ys, zs, &wn);
        let mut gf: Vec<f64> = p.free_grad(&g).iter().map(|v| -v).collect();
        let mut pen = 0.0;
        for &k in &pos {
            pen += 0.5 * ridge * x[k] * x[k];
            gf[k] += ridge * x[k];
        }
        (-f + pen, gf)
    };
    let x0 = p0.to_free();
    let res = bfgs_minimize(
        objective,
        &x0,
        BfgsOptions {
            max_iter,
            grad_tol: 1e-9,
            f_tol: 1e-14,
        },
    );
    let mut p = p0.from_free(&res.x);
    p.apply_mask();
    p
}

/// Observed information of the natural parameters at `p`, by central
/// differences of the analytic gradient.
fn observed_information(p: &LinkParams, ys: &[f64], zs: &[f64], ws: &[f64]) -> DMatrix<f64> {
    let theta = p.to_vec();
    let k = theta.len();
    let mut h = DMatrix::zeros(k, k);
    for a in 0..k {
        let step = 1e-5 * theta[a].abs().max(1.0);
        let mut tp = theta.clone();
        tp[a] += step;
        let mut tm = theta.clone();
        tm[a] -= step;
        let (_, gp) = weighted_loglik_grad(&p.with_vec(&tp), ys, zs, ws);
        let (_, gm) = weighted_loglik_grad(&p.with_vec(&tm), ys, zs, ws);
        for b in 0..k {
            h[(b, a)] = -(gp[b] - gm[b]) / (2.0 * step);
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Wald p-value of every latent dimension's effect on a fitted link.
///
/// For a single loading row the test is on one coefficient; for categorical
/// links it is the joint chi-square test of the dimension's loadings across
/// levels. Masked dimensions get p-value 1.
pub fn wald_pvalues(p: &LinkParams, ys: &[f64], zs: &[f64], ws: &[f64], ridge: f64) -> Vec<f64> {
    let r = p.dim();
    let info = observed_information(p, ys, zs, ws);
    let k = info.nrows();
    let mut reg = info.clone();
    let n_int = p.intercepts.len();
    for a in 0..k {
        reg[(a, a)] += if a >= n_int && a < n_int + p.loadings.len() * r {
            ridge
        } else {
            1e-10
        };
    }
    // masked loadings carry no information: pin them down
    for (row, _) in p.loadings.iter().enumerate() {
        for d in p.free_dims.min(r)..r {
            let a = n_int + row * r + d;
            reg[(a, a)] += 1.0;
        }
    }
    let Ok((cov, _)) = solve_psd(&reg, &DMatrix::identity(k, k), 1e-8) else {
        return vec![1.0; r];
    };
    let theta = p.to_vec();
    (0..r)
        .map(|d| {
            if d >= p.free_dims {
                return 1.0;
            }
            let idx: Vec<usize> = (0..p.loadings.len())
                .map(|row| n_int + row * r + d)
                .collect();
            let m = idx.len();
            let sub = DMatrix::from_fn(m, m, |a, b| cov[(idx[a], idx[b])]);
            let beta = DVector::from_iterator(m, idx.iter().map(|&a| theta[a]));
            let stat = match solve_psd(
                &sub,
                &DMatrix::from_column_slice(m, 1, beta.as_slice()),
                1e-12,
            ) {
                Ok((x, _)) => beta.dot(&x.column(0)),
                Err(_) => 0.0,
            };
            if !stat.is_finite() {
                return 1.0;
            }
            let chi = ChiSquared::new(m as f64).expect("positive degrees of freedom");
            1.0 - chi.cdf(stat.max(0.0))
        })
        .collect()
}

/// Seed a link by regressing `y` on latent scores: IRLS for binary and count,
/// least squares for continuous, penalized BFGS otherwise.
pub fn seed_link(p0: &LinkParams, ys: &[f64], zs: &[f64], ridge: f64) -> LinkParams {
    let r = p0.dim();
    let n = ys.len();
    let f = p0.free_dims.min(r);
    let x = DMatrix::from_fn(n, f, |i, d| zs[i * r + d]);
    let w = vec![1.0; n];
    let mut p = p0.clone();
    match p0.kind {
        VarKind::Binary | VarKind::Count => {
            let trials = if p0.kind == VarKind::Count {
                p0.trials as f64
            } else {
                1.0
            };
            let (b0, b) = irls_logistic(&x, ys, &w, trials, ridge, 100);
            p.intercepts[0] = b0;
            p.loadings[0] = (0..r).map(|d| if d < f { b[d] } else { 0.0 }).collect();
        }
        VarKind::Continuous => {
            let (b0, b, v) = weighted_ols(&x, ys, &w, ridge);
            p.intercepts[0] = b0;
            p.loadings[0] = (0..r).map(|d| if d < f { b[d] } else { 0.0 }).collect();
            p.variance = v;
        }
        VarKind::Ordinal | VarKind::Categorical => {
            p = fit_link(p0, ys, zs, &w, ridge, 100);
        }
    }
    p.apply_mask();
    p
}
