//! Exponential-family links of the GLLVM layer.
//!
//! Each observed variable `y_j` depends on the embedding latent `z` through a
//! linear predictor:
//!
//! * binary: Bernoulli with logit link;
//! * count: binomial with `trials` draws and logit link;
//! * ordinal: cumulative logit, `P(y ≤ c) = σ(τ_c − Λ_j·z)` with increasing cut-points;
//! * categorical: multinomial logit against reference level 0;
//! * continuous (m1 mode only): Gaussian with free variance.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::VarKind;
use crate::error::{Error, Result};

/// Linear predictors are clamped to `[-ETA_CLAMP, ETA_CLAMP]`.
pub const ETA_CLAMP: f64 = 35.0;
/// Lower bound of a Gaussian link variance.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Coefficients of one variable's link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    /// Column index in the schema.
    pub variable_index: usize,
    pub kind: VarKind,
    /// Binomial trials (count kind only).
    #[serde(default)]
    pub trials: u32,
    /// One intercept for binary/count/continuous, increasing cut-points for
    /// ordinal, one intercept per non-reference level for categorical.
    pub intercepts: Vec<f64>,
    /// One loading row per linear predictor: a single row, or one row per
    /// non-reference level for categorical.
    pub loadings: Vec<Vec<f64>>,
    /// Gaussian variance (continuous kind only).
    #[serde(default = "one")]
    pub variance: f64,
    /// Loadings at column `>= free_dims` are held at zero.
    pub free_dims: usize,
}

fn one() -> f64 {
    1.0
}

#[inline]
fn clamp_eta(x: f64) -> f64 {
    x.clamp(-ETA_CLAMP, ETA_CLAMP)
}

#[inline]
fn clamp_slope(x: f64) -> f64 {
    if x.abs() > ETA_CLAMP {
        0.0
    } else {
        1.0
    }
}

/// `log σ(x)` without overflow.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn dot(a: &[f64], z: &[f64]) -> f64 {
    a.iter().zip(z).map(|(x, y)| x * y).sum()
}

fn ln_choose(n: u32, k: u32) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Reparameterization of increasing cut-points: the first value is kept and the
/// following ones are replaced by log-increments.
pub fn cutpoint_encode(cuts: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(cuts.len());
    for (k, &c) in cuts.iter().enumerate() {
        if !c.is_finite() {
            return Err(Error::Params("non-finite cut-point".into()));
        }
        if k == 0 {
            out.push(c);
        } else {
            let d = c - cuts[k - 1];
            if d <= 0.0 {
                return Err(Error::Params(
                    "cut-points are not strictly increasing".into(),
                ));
            }
            out.push(d.ln());
        }
    }
    Ok(out)
}

/// Inverse of [`cutpoint_encode`]; the output is strictly increasing for any
/// finite input.
pub fn cutpoint_decode(u: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(u.len());
    for (k, &v) in u.iter().enumerate() {
        if k == 0 {
            out.push(v);
        } else {
            let prev = out[k - 1];
            let mut c = prev + v.exp();
            if c <= prev {
                c = prev.next_up();
            }
            out.push(c);
        }
    }
    out
}

impl LinkParams {
    /// Zero-initialized link for a variable with `n_levels` categories and an
    /// `r`-dimensional embedding.
    pub fn zeros(
        variable_index: usize,
        kind: VarKind,
        n_levels: usize,
        trials: u32,
        r: usize,
    ) -> Self {
        let (n_int, n_rows) = match kind {
            VarKind::Ordinal => (n_levels.saturating_sub(1), 1),
            VarKind::Categorical => (n_levels.saturating_sub(1), n_levels.saturating_sub(1)),
            _ => (1, 1),
        };
        let intercepts = if kind == VarKind::Ordinal {
            let m = n_int as f64;
            (0..n_int).map(|k| k as f64 - (m - 1.0) / 2.0).collect()
        } else {
            vec![0.0; n_int]
        };
        LinkParams {
            variable_index,
            kind,
            trials,
            intercepts,
            loadings: vec![vec![0.0; r]; n_rows],
            variance: 1.0,
            free_dims: r,
        }
    }

    /// Embedding dimension.
    pub fn dim(&self) -> usize {
        self.loadings.first().map_or(0, |r| r.len())
    }

    /// Number of categories of the variable (0 for continuous).
    pub fn n_levels(&self) -> usize {
        match self.kind {
            VarKind::Continuous => 0,
            VarKind::Binary => 2,
            VarKind::Count => self.trials as usize + 1,
            VarKind::Ordinal | VarKind::Categorical => self.intercepts.len() + 1,
        }
    }

    /// Length of the natural parameter layout: intercepts, loadings row-major,
    /// then the variance for continuous links.
    pub fn n_params(&self) -> usize {
        self.intercepts.len()
            + self.loadings.iter().map(|r| r.len()).sum::<usize>()
            + usize::from(self.kind == VarKind::Continuous)
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.intercepts.clone();
        for row in &self.loadings {
            v.extend_from_slice(row);
        }
        if self.kind == VarKind::Continuous {
            v.push(self.variance);
        }
        v
    }

    pub fn with_vec(&self, v: &[f64]) -> LinkParams {
        let mut p = self.clone();
        let mut k = 0;
        for x in p.intercepts.iter_mut() {
            *x = v[k];
            k += 1;
        }
        for row in p.loadings.iter_mut() {
            for x in row.iter_mut() {
                *x = v[k];
                k += 1;
            }
        }
        if p.kind == VarKind::Continuous {
            p.variance = v[k];
        }
        p
    }

    /// Zero the loadings outside the free columns.
    pub fn apply_mask(&mut self) {
        let f = self.free_dims;
        for row in self.loadings.iter_mut() {
            for x in row.iter_mut().skip(f) {
                *x = 0.0;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.dim();
        if self.loadings.iter().any(|row| row.len() != r) {
            return Err(Error::Params("ragged loading rows".into()));
        }
        let expected_rows = if self.kind == VarKind::Categorical {
            self.intercepts.len()
        } else {
            1
        };
        if self.loadings.len() != expected_rows {
            return Err(Error::Params(format!(
                "{:?} link expects {expected_rows} loading rows, found {}",
                self.kind,
                self.loadings.len()
            )));
        }
        match self.kind {
            VarKind::Ordinal => {
                if self.intercepts.is_empty() {
                    return Err(Error::Params("ordinal link without cut-points".into()));
                }
                if self.intercepts.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Params("non-increasing cut-points".into()));
                }
            }
            VarKind::Categorical => {
                if self.intercepts.is_empty() {
                    return Err(Error::Params("categorical link without levels".into()));
                }
            }
            _ => {
                if self.intercepts.len() != 1 {
                    return Err(Error::Params("link expects one intercept".into()));
                }
            }
        }
        if self.kind == VarKind::Continuous && !(self.variance >= VARIANCE_FLOOR) {
            return Err(Error::Params("Gaussian link variance below floor".into()));
        }
        if self.kind == VarKind::Count && self.trials == 0 {
            return Err(Error::Params("count link with zero trials".into()));
        }
        Ok(())
    }

    fn check_value(&self, y: f64, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(Error::Input(format!(
                "latent has dimension {}, link expects {}",
                z.len(),
                self.dim()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite latent".into()));
        }
        if !y.is_finite() {
            return Err(Error::Input("non-finite observation".into()));
        }
        if self.kind != VarKind::Continuous {
            let levels = self.n_levels();
            if y < 0.0 || y.fract() != 0.0 || y as usize >= levels {
                return Err(Error::Input(format!(
                    "invalid code {y} for a {:?} variable with {levels} categories",
                    self.kind
                )));
            }
        }
        Ok(())
    }

    /// `log f(y | z)` without argument checks.
    #[inline]
    pub fn log_density_unchecked(&self, y: f64, z: &[f64]) -> f64 {
        match self.kind {
            VarKind::Binary => {
                let eta = clamp_eta(self.intercepts[0] + dot(&self.loadings[0], z));
                if y > 0.5 {
                    log_sigmoid(eta)
                } else {
                    log_sigmoid(-eta)
                }
            }
            VarKind::Count => {
                let eta = clamp_eta(self.intercepts[0] + dot(&self.loadings[0], z));
                let k = y as u32;
                let n = self.trials;
                ln_choose(n, k) + y * log_sigmoid(eta) + (n as f64 - y) * log_sigmoid(-eta)
            }
            VarKind::Continuous => {
                let mu = self.intercepts[0] + dot(&self.loadings[0], z);
                let v = self.variance.max(VARIANCE_FLOOR);
                -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + (y - mu) * (y - mu) / v)
            }
            VarKind::Ordinal => {
                let ell = clamp_eta(dot(&self.loadings[0], z));
                let c = y as usize;
                let m = self.intercepts.len();
                if c == 0 {
                    log_sigmoid(self.intercepts[0] - ell)
                } else if c == m {
                    log_sigmoid(ell - self.intercepts[m - 1])
                } else {
                    let a = self.intercepts[c] - ell;
                    let b = self.intercepts[c - 1] - ell;
                    log_sigmoid(a) + log_sigmoid(-b) + (-(b - a).exp_m1()).ln()
                }
            }
            VarKind::Categorical => {
                let c = y as usize;
                let mut max = 0.0f64;
                let mut etas = [0.0f64; 64];
                let m = self.intercepts.len();
                let mut heap;
                let e: &mut [f64] = if m <= 64 {
                    &mut etas[..m]
                } else {
                    heap = vec![0.0; m];
                    &mut heap[..]
                };
                for k in 0..m {
                    e[k] = clamp_eta(self.intercepts[k] + dot(&self.loadings[k], z));
                    max = max.max(e[k]);
                }
                let mut s = (-max).exp();
                for &v in e.iter() {
                    s += (v - max).exp();
                }
                let lse = max + s.ln();
                let num = if c == 0 { 0.0 } else { e[c - 1] };
                num - lse
            }
        }
    }

    /// Add `weight · ∇ log f(y | z)` (natural layout) into `grad` and return
    /// `log f(y | z)`.
    pub fn accumulate_grad(&self, y: f64, z: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
        let n_int = self.intercepts.len();
        let r = self.dim();
        match self.kind {
            VarKind::Binary | VarKind::Count => {
                let raw = self.intercepts[0] + dot(&self.loadings[0], z);
                let eta = clamp_eta(raw);
                let n = if self.kind == VarKind::Binary {
                    1.0
                } else {
                    self.trials as f64
                };
                let g = (y - n * sigmoid(eta)) * clamp_slope(raw) * weight;
                grad[0] += g;
                for d in 0..r {
                    grad[1 + d] += g * z[d];
                }
                self.log_density_unchecked(y, z)
            }
            VarKind::Continuous => {
                let mu = self.intercepts[0] + dot(&self.loadings[0], z);
                let v = self.variance.max(VARIANCE_FLOOR);
                let res = y - mu;
                let g = res / v * weight;
                grad[0] += g;
                for d in 0..r {
                    grad[1 + d] += g * z[d];
                }
                grad[1 + r] += weight * (-0.5 / v + 0.5 * res * res / (v * v));
                -0.5 * ((2.0 * std::f64::consts::PI * v).ln() + res * res / v)
            }
            VarKind::Ordinal => {
                let raw = dot(&self.loadings[0], z);
                let ell = clamp_eta(raw);
                let slope = clamp_slope(raw);
                let c = y as usize;
                let m = n_int;
                let (lp, g_ell) = if c == 0 {
                    let x = self.intercepts[0] - ell;
                    let g = sigmoid(-x);
                    grad[0] += weight * g;
                    (log_sigmoid(x), -g)
                } else if c == m {
                    let x = ell - self.intercepts[m - 1];
                    let g = sigmoid(-x);
                    grad[m - 1] -= weight * g;
                    (log_sigmoid(x), g)
                } else {
                    let a = self.intercepts[c] - ell;
                    let b = self.intercepts[c - 1] - ell;
                    let ebma = (b - a).exp();
                    let e = -(b - a).exp_m1();
                    let ga = sigmoid(-a) + ebma / e;
                    let gb = -sigmoid(b) - ebma / e;
                    grad[c] += weight * ga;
                    grad[c - 1] += weight * gb;
                    (log_sigmoid(a) + log_sigmoid(-b) + e.ln(), -(ga + gb))
                };
                let g = g_ell * slope * weight;
                for d in 0..r {
                    grad[m + d] += g * z[d];
                }
                lp
            }
            VarKind::Categorical => {
                let c = y as usize;
                let m = n_int;
                let mut raw = vec![0.0; m];
                let mut max = 0.0f64;
                for k in 0..m {
                    raw[k] = self.intercepts[k] + dot(&self.loadings[k], z);
                    max = max.max(clamp_eta(raw[k]));
                }
                let mut s = (-max).exp();
                for &v in &raw {
                    s += (clamp_eta(v) - max).exp();
                }
                let lse = max + s.ln();
                for k in 0..m {
                    let p = (clamp_eta(raw[k]) - lse).exp();
                    let ind = if c == k + 1 { 1.0 } else { 0.0 };
                    let g = (ind - p) * clamp_slope(raw[k]) * weight;
                    grad[k] += g;
                    let off = m + k * r;
                    for d in 0..r {
                        grad[off + d] += g * z[d];
                    }
                }
                let num = if c == 0 { 0.0 } else { clamp_eta(raw[c - 1]) };
                num - lse
            }
        }
    }

    /// Unconstrained coordinates used by the optimizer: cut-points encoded,
    /// masked loadings removed, variance as `ln(v − floor)`.
    pub fn to_free(&self) -> Vec<f64> {
        let mut v = if self.kind == VarKind::Ordinal {
            cutpoint_encode(&self.intercepts).unwrap_or_else(|_| self.intercepts.clone())
        } else {
            self.intercepts.clone()
        };
        for row in &self.loadings {
            v.extend_from_slice(&row[..self.free_dims.min(row.len())]);
        }
        if self.kind == VarKind::Continuous {
            v.push((self.variance - VARIANCE_FLOOR).max(1e-300).ln());
        }
        v
    }

    pub fn from_free(&self, x: &[f64]) -> LinkParams {
        let mut p = self.clone();
        let n_int = p.intercepts.len();
        p.intercepts = if p.kind == VarKind::Ordinal {
            cutpoint_decode(&x[..n_int])
        } else {
            x[..n_int].to_vec()
        };
        let f = p.free_dims.min(p.dim());
        let mut k = n_int;
        for row in p.loadings.iter_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                if d < f {
                    *v = x[k];
                    k += 1;
                } else {
                    *v = 0.0;
                }
            }
        }
        if p.kind == VarKind::Continuous {
            p.variance = VARIANCE_FLOOR + x[k].exp();
        }
        p
    }

    /// Chain rule from the natural gradient to the free coordinates of
    /// [`LinkParams::to_free`], evaluated at `self`.
    pub fn free_grad(&self, natural: &[f64]) -> Vec<f64> {
        let n_int = self.intercepts.len();
        let r = self.dim();
        let f = self.free_dims.min(r);
        let mut g = Vec::with_capacity(n_int + self.loadings.len() * f + 1);
        if self.kind == VarKind::Ordinal {
            // τ_c = u_0 + Σ_{j=1..c} exp(u_j)
            let mut tail = vec![0.0; n_int + 1];
            for c in (0..n_int).rev() {
                tail[c] = tail[c + 1] + natural[c];
            }
            for j in 0..n_int {
                if j == 0 {
                    g.push(tail[0]);
                } else {
                    let inc = self.intercepts[j] - self.intercepts[j - 1];
                    g.push(tail[j] * inc);
                }
            }
        } else {
            g.extend_from_slice(&natural[..n_int]);
        }
        for (k, _) in self.loadings.iter().enumerate() {
            let off = n_int + k * r;
            g.extend_from_slice(&natural[off..off + f]);
        }
        if self.kind == VarKind::Continuous {
            let idx = n_int + self.loadings.len() * r;
            g.push(natural[idx] * (self.variance - VARIANCE_FLOOR));
        }
        g
    }
}

/// `log f(y_j | z)` with argument validation.
pub fn log_density(p: &LinkParams, y: f64, z: &[f64]) -> Result<f64> {
    p.validate()?;
    p.check_value(y, z)?;
    Ok(p.log_density_unchecked(y, z))
}

/// Gradient of `log f(y_j | z)` with respect to the natural parameter layout
/// (intercepts, loadings row-major, then the variance for continuous links).
pub fn grad_log_density(p: &LinkParams, y: f64, z: &[f64]) -> Result<Vec<f64>> {
    p.validate()?;
    p.check_value(y, z)?;
    let mut g = vec![0.0; p.n_params()];
    p.accumulate_grad(y, z, 1.0, &mut g);
    Ok(g)
}

/// Weighted log-likelihood `Σ_k w_k log f(y_k | z_k)` and its natural gradient.
/// `zs` is row-major with `dim()` entries per row.
pub fn weighted_loglik_grad(p: &LinkParams, ys: &[f64], zs: &[f64], ws: &[f64]) -> (f64, Vec<f64>) {
    let r = p.dim();
    let mut g = vec![0.0; p.n_params()];
    let mut f = 0.0;
    for (k, (&y, &w)) in ys.iter().zip(ws).enumerate() {
        let z = &zs[k * r..(k + 1) * r];
        f += w * p.accumulate_grad(y, z, w, &mut g);
    }
    (f, g)
}

/// Weighted log-likelihood only.
pub fn weighted_loglik(p: &LinkParams, ys: &[f64], zs: &[f64], ws: &[f64]) -> f64 {
    let r = p.dim();
    ys.iter()
        .zip(ws)
        .enumerate()
        .map(|(k, (&y, &w))| w * p.log_density_unchecked(y, &zs[k * r..(k + 1) * r]))
        .sum()
}
