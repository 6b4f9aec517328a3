use nalgebra::{DMatrix, DVector};

use super::arch::{Architecture, Head};
use super::params::{LayerParams, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, symmetrize};

/// All index tuples with `ks[v]` choices at position `v`, in lexicographic
/// order (position 0 most significant).
pub fn enumerate_combos(ks: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = ks.iter().product();
    let mut out = Vec::with_capacity(total);
    if ks.iter().any(|&k| k == 0) {
        return out;
    }
    let mut cur = vec![0usize; ks.len()];
    for _ in 0..total {
        out.push(cur.clone());
        for pos in (0..ks.len()).rev() {
            cur[pos] += 1;
            if cur[pos] < ks[pos] {
                break;
            }
            cur[pos] = 0;
        }
    }
    out
}

/// Paths through one head chain, their priors and cached Gaussian moments.
#[derive(Debug, Clone)]
pub struct PathTable {
    pub head: Head,
    /// Component counts per chain layer.
    pub ks: Vec<usize>,
    pub paths: Vec<Vec<usize>>,
    pub priors: Vec<f64>,
    /// `moments[s][v]`: mean and covariance of the latent at level `v` along
    /// path `s`, for `v = 0..=L` (level `L` is the standard-normal terminal).
    /// Empty until filled from parameters.
    pub moments: Vec<Vec<(DVector<f64>, DMatrix<f64>)>>,
}

impl PathTable {
    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Depth of the chain.
    pub fn depth(&self) -> usize {
        self.ks.len()
    }
}

/// Enumerate the full paths of a head chain. Priors assume uniform
/// component probabilities; [`path_table`] fills them from parameters.
pub fn enumerate_paths(arch: &Architecture, head: Head) -> PathTable {
    let ks: Vec<usize> = arch.chain(head).iter().map(|l| l.components).collect();
    let paths = enumerate_combos(&ks);
    let p = 1.0 / paths.len().max(1) as f64;
    PathTable {
        head,
        priors: vec![p; paths.len()],
        ks,
        paths,
        moments: Vec::new(),
    }
}

/// Product of component probabilities along a path through `layers`.
pub fn path_prior(layers: &[&LayerParams], path: &[usize]) -> f64 {
    layers.iter().zip(path).map(|(l, &k)| l.pi[k]).product()
}

/// Path table with priors and moments computed from `params`.
pub fn path_table(params: &ModelParams, head: Head) -> Result<PathTable> {
    let chain = params.chain(head);
    let ks: Vec<usize> = chain.iter().map(|l| l.k()).collect();
    let paths = enumerate_combos(&ks);
    let mut priors = Vec::with_capacity(paths.len());
    let mut moments = Vec::with_capacity(paths.len());
    for p in &paths {
        priors.push(path_prior(&chain, p));
        moments.push(chain_moments(&chain, p)?);
    }
    Ok(PathTable {
        head,
        ks,
        paths,
        priors,
        moments,
    })
}

fn check_path(chain: &[&LayerParams], path: &[usize]) -> Result<()> {
    if path.len() != chain.len() || path.iter().zip(chain).any(|(&k, l)| k >= l.k()) {
        return Err(Error::Input(format!(
            "path {path:?} does not fit the chain"
        )));
    }
    for w in chain.windows(2) {
        if w[0].shape().1 != w[1].shape().0 {
            return Err(Error::Params("layer shapes do not chain".into()));
        }
    }
    Ok(())
}

/// Moments of every level along a path, from the terminal `N(0, I)` down.
pub fn chain_moments(
    chain: &[&LayerParams],
    path: &[usize],
) -> Result<Vec<(DVector<f64>, DMatrix<f64>)>> {
    check_path(chain, path)?;
    let depth = chain.len();
    let top = chain[depth - 1].shape().1;
    let mut out = vec![(DVector::zeros(0), DMatrix::zeros(0, 0)); depth + 1];
    out[depth] = (DVector::zeros(top), DMatrix::identity(top, top));
    for v in (0..depth).rev() {
        let c = &chain[v].components[path[v]];
        let (mu_up, sig_up) = &out[v + 1];
        let mu = &c.eta + &c.lambda * mu_up;
        let sig = symmetrize(&(&c.psi + &c.lambda * sig_up * c.lambda.transpose()));
        out[v] = (mu, sig);
    }
    Ok(out)
}

/// Mean and covariance of the latent at `level` along `path` of a head chain.
pub fn path_moments(
    params: &ModelParams,
    head: Head,
    path: &[usize],
    level: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let chain = params.chain(head);
    if level > chain.len() {
        return Err(Error::Input(format!(
            "level {level} beyond chain depth {}",
            chain.len()
        )));
    }
    let mut m = chain_moments(&chain, path)?;
    Ok(m.swap_remove(level))
}

/// Posterior of the next latent given the current one, as an affine map.
///
/// `z_{v+1} | z_v ~ N(G z_v + h, ξ)`.
#[derive(Debug, Clone)]
pub struct LevelConditional {
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
    pub xi: DMatrix<f64>,
    /// Lower Cholesky factor of `ξ`.
    pub xi_l: DMatrix<f64>,
}

impl LevelConditional {
    /// Conditioning of `z_up ~ N(mu, sigma)` observed through
    /// `z = η + Λ z_up + N(0, Ψ)`.
    pub fn new(
        eta: &DVector<f64>,
        lambda: &DMatrix<f64>,
        psi: &DMatrix<f64>,
        mu: &DVector<f64>,
        sigma: &DMatrix<f64>,
    ) -> Result<Self> {
        let sl = sigma * lambda.transpose();
        let s = symmetrize(&(lambda * &sl + psi));
        let chol = cholesky_jitter(&s, "condition_next_layer")?;
        // K = Σ Λᵀ S⁻¹, computed as (S⁻¹ Λ Σ)ᵀ
        let k = chol.solve(&sl.transpose()).transpose();
        let g = k.clone();
        let h = mu - &k * (eta + lambda * mu);
        let xi = symmetrize(&(sigma - &k * sl.transpose()));
        let xi_l = cholesky_jitter(&xi, "condition_next_layer")?.l();
        Ok(LevelConditional { g, h, xi, xi_l })
    }

    pub fn mean(&self, z: &[f64]) -> DVector<f64> {
        &self.g * DVector::from_column_slice(z) + &self.h
    }

    /// Write `G z + h + L ε` into `out`.
    #[inline]
    pub fn draw_into(&self, z: &[f64], eps: &[f64], out: &mut [f64]) {
        let d_up = self.h.len();
        let d = z.len();
        for i in 0..d_up {
            let mut v = self.h[i];
            for j in 0..d {
                v += self.g[(i, j)] * z[j];
            }
            for k in 0..=i {
                v += self.xi_l[(i, k)] * eps[k];
            }
            out[i] = v;
        }
    }
}

/// Exact posterior `(ρ, ξ)` of the latent at `level + 1` given `z` at `level`
/// along `path`.
pub fn condition_next_layer(
    params: &ModelParams,
    head: Head,
    path: &[usize],
    level: usize,
    z: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let chain = params.chain(head);
    if level >= chain.len() {
        return Err(Error::Input(format!("level {level} has no layer above it")));
    }
    let m = chain_moments(&chain, path)?;
    let c = &chain[level].components[path[level]];
    if z.len() != c.eta.len() {
        return Err(Error::Input("latent width does not match the layer".into()));
    }
    let (mu, sigma) = &m[level + 1];
    let lc = LevelConditional::new(&c.eta, &c.lambda, &c.psi, mu, sigma)?;
    Ok((lc.mean(z), lc.xi))
}

/// Conditionals for every level of one path: entry `v` maps level `v` to
/// level `v + 1`.
pub fn path_conditionals(
    chain: &[&LayerParams],
    path: &[usize],
    moments: &[(DVector<f64>, DMatrix<f64>)],
) -> Result<Vec<LevelConditional>> {
    (0..chain.len())
        .map(|v| {
            let c = &chain[v].components[path[v]];
            let (mu, sigma) = &moments[v + 1];
            LevelConditional::new(&c.eta, &c.lambda, &c.psi, mu, sigma)
        })
        .collect()
}

/// Distribution of level 0 given the latent at level `top` along the first
/// `top` layers of a chain: `z_0 | z_top ~ N(a + A z_top, Ω)`.
pub fn affine_to_bottom(
    chain: &[&LayerParams],
    path: &[usize],
    top: usize,
) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let d = chain[top - 1].shape().1;
    let mut a = DVector::zeros(d);
    let mut am = DMatrix::identity(d, d);
    let mut om = DMatrix::zeros(d, d);
    for v in (0..top).rev() {
        let c = &chain[v].components[path[v]];
        a = &c.eta + &c.lambda * a;
        am = &c.lambda * am;
        om = symmetrize(&(&c.psi + &c.lambda * om * c.lambda.transpose()));
    }
    (a, am, om)
}

/// Mixture moments of the latent generated by a layer, assuming its input is
/// standard normal: `E = Σ π η`, `Var = Σ π (ΛΛᵀ + Ψ + ηηᵀ) − E Eᵀ`.
pub fn mixture_moments(layer: &LayerParams) -> (DVector<f64>, DMatrix<f64>) {
    let (d, _) = layer.shape();
    let mut e = DVector::zeros(d);
    let mut second = DMatrix::zeros(d, d);
    for (c, &p) in layer.components.iter().zip(&layer.pi) {
        e += &c.eta * p;
        second += (&c.lambda * c.lambda.transpose() + &c.psi + &c.eta * c.eta.transpose()) * p;
    }
    let var = symmetrize(&(second - &e * e.transpose()));
    (e, var)
}

/// Moments of the latent generated by chain layer `v` of a head.
pub fn layer_moments(
    params: &ModelParams,
    head: Head,
    v: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let chain = params.chain(head);
    let layer = chain
        .get(v)
        .ok_or_else(|| Error::Input(format!("layer {v} beyond chain depth {}", chain.len())))?;
    Ok(mixture_moments(layer))
}
