//! Random models and independent oracles shared by the integration tests.
#![allow(dead_code)]

use mixclus_core::gaussnet::{
    Architecture, ComponentParams, Head, LayerParams, LayerSpec, Mode, ModelParams,
};
use mixclus_core::links::LinkParams;
use mixclus_core::nalgebra::{DMatrix, DVector};
use mixclus_core::VarKind;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec<R: Rng>(rng: &mut R, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| normal(rng))
}

pub fn normal_mat<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * normal(rng))
}

/// `A Aᵀ / d + floor·I`, well conditioned.
pub fn random_spd<R: Rng>(rng: &mut R, d: usize, floor: f64) -> DMatrix<f64> {
    let a = normal_mat(rng, d, d, 1.0);
    &a * a.transpose() / d as f64 + DMatrix::identity(d, d) * floor
}

/// Probabilities bounded away from zero.
pub fn random_simplex<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| 0.2 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

pub fn random_layer<R: Rng>(rng: &mut R, d_out: usize, d_in: usize, k: usize) -> LayerParams {
    LayerParams {
        components: (0..k)
            .map(|_| {
                ComponentParams::new(
                    normal_vec(rng, d_out),
                    normal_mat(rng, d_out, d_in, 0.8),
                    random_spd(rng, d_out, 0.1) * 0.5,
                )
            })
            .collect(),
        pi: random_simplex(rng, k),
    }
}

/// Strictly decreasing widths starting below `top`.
fn decreasing<R: Rng>(rng: &mut R, top: usize, len: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(len);
    let mut cur = top;
    for left in (0..len).rev() {
        let hi = cur - 1;
        let lo = left + 1;
        let v = rng.random_range(lo..=hi);
        w.push(v);
        cur = v;
    }
    w
}

/// A random valid architecture with its data widths `(p_c, p_d)`.
pub fn random_architecture<R: Rng>(rng: &mut R) -> (Architecture, usize, usize) {
    let mode = [Mode::Dgmm, Mode::Ddgmm, Mode::M1, Mode::M2][rng.random_range(0..4)];
    let ks =
        |rng: &mut R, n: usize| -> Vec<usize> { (0..n).map(|_| rng.random_range(1..4)).collect() };
    match mode {
        Mode::Dgmm => {
            let p_c = rng.random_range(3..7);
            let depth = rng.random_range(1..=(p_c - 1).min(3));
            let w = decreasing(rng, p_c, depth);
            let k = ks(rng, depth);
            (Architecture::from_rk(mode, &w, &k).unwrap(), p_c, 0)
        }
        Mode::Ddgmm | Mode::M1 => {
            let r0 = rng.random_range(2..6);
            let depth = rng.random_range(1..=(r0 - 1).min(3));
            let mut w = vec![r0];
            w.extend(decreasing(rng, r0, depth));
            let k = ks(rng, depth);
            let (p_c, p_d) = if mode == Mode::M1 { (2, 4) } else { (0, 6) };
            (Architecture::from_rk(mode, &w, &k).unwrap(), p_c, p_d)
        }
        Mode::M2 => {
            let p_c = rng.random_range(4..7);
            let r_d0 = rng.random_range(3..5);
            let junction = rng.random_range(2..r_d0.min(p_c - 1));
            let n_tail = rng.random_range(1..=(junction - 1).min(2));
            let mut r_t = vec![junction];
            r_t.extend(decreasing(rng, junction, n_tail));
            let mut k_t = ks(rng, n_tail);
            k_t.push(1);
            let arch = Architecture::from_m2_lists(
                &[p_c],
                &[r_d0],
                &r_t,
                &[rng.random_range(1..4)],
                &[rng.random_range(1..4)],
                &k_t,
            )
            .unwrap();
            (arch, p_c, 5)
        }
    }
}

/// Links over `kinds` for an embedding of width `r`, first binary/count
/// links masked upper-triangularly.
pub fn random_links<R: Rng>(rng: &mut R, kinds: &[VarKind], r: usize) -> Vec<LinkParams> {
    let mut masked = 0;
    kinds
        .iter()
        .enumerate()
        .map(|(j, &kind)| {
            let mut p = LinkParams::zeros(j, kind, 3, 2, r);
            for row in p.loadings.iter_mut() {
                for v in row.iter_mut() {
                    *v = 0.7 * normal(rng);
                }
            }
            if kind == VarKind::Ordinal {
                p.intercepts = vec![-0.5 + 0.3 * normal(rng), 0.8 + 0.3 * normal(rng)];
            } else {
                for v in p.intercepts.iter_mut() {
                    *v = 0.5 * normal(rng);
                }
            }
            if kind == VarKind::Continuous {
                p.variance = 0.5 + rng.random::<f64>();
            }
            if matches!(kind, VarKind::Binary | VarKind::Count) {
                masked += 1;
                p.free_dims = masked.min(r);
                p.apply_mask();
            }
            p
        })
        .collect()
}

/// Random parameters matching an architecture.
pub fn random_params<R: Rng>(rng: &mut R, arch: &Architecture, p_c: usize) -> ModelParams {
    let build = |rng: &mut R, specs: &[LayerSpec], bottom: usize| -> Vec<LayerParams> {
        let mut out = Vec::new();
        let mut d = bottom;
        for s in specs {
            out.push(random_layer(rng, d, s.width, s.components));
            d = s.width;
        }
        out
    };
    let layers_c = build(rng, &arch.head_c, p_c);
    let layers_d = build(rng, &arch.head_d, arch.embedding_dim);
    let junction = arch.tail_output_width(0, p_c);
    let layers_tail = build(rng, &arch.tail, junction);
    let gllvm = match arch.mode {
        Mode::Dgmm => Vec::new(),
        Mode::M1 => random_links(
            rng,
            &[
                VarKind::Continuous,
                VarKind::Continuous,
                VarKind::Binary,
                VarKind::Ordinal,
                VarKind::Categorical,
                VarKind::Count,
            ],
            arch.embedding_dim,
        ),
        _ => random_links(
            rng,
            &[
                VarKind::Binary,
                VarKind::Ordinal,
                VarKind::Categorical,
                VarKind::Count,
            ],
            arch.embedding_dim,
        ),
    };
    ModelParams {
        mode: arch.mode,
        gllvm,
        layers_c,
        layers_d,
        layers_tail,
    }
}

/// Sample every level of a chain along a fixed path, terminal first.
pub fn sample_path<R: Rng>(
    rng: &mut R,
    chain: &[&LayerParams],
    path: &[usize],
) -> Vec<DVector<f64>> {
    let depth = chain.len();
    let top = chain[depth - 1].shape().1;
    let mut levels = vec![DVector::zeros(0); depth + 1];
    levels[depth] = normal_vec(rng, top);
    for v in (0..depth).rev() {
        let c = &chain[v].components[path[v]];
        let l = c.psi.clone().cholesky().unwrap().l();
        let noise = &l * normal_vec(rng, c.eta.len());
        levels[v] = &c.eta + &c.lambda * &levels[v + 1] + noise;
    }
    levels
}

/// Sample a path from the layer probabilities.
pub fn sample_components<R: Rng>(rng: &mut R, chain: &[&LayerParams]) -> Vec<usize> {
    chain
        .iter()
        .map(|l| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, p) in l.pi.iter().enumerate() {
                acc += p;
                if u < acc {
                    return k;
                }
            }
            l.pi.len() - 1
        })
        .collect()
}

/// Moments by direct recursion, written independently of the library.
pub fn oracle_path_moments(
    chain: &[&LayerParams],
    path: &[usize],
    level: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let top = chain[chain.len() - 1].shape().1;
    let mut mu = DVector::zeros(top);
    let mut sig = DMatrix::identity(top, top);
    for v in (level..chain.len()).rev() {
        let c = &chain[v].components[path[v]];
        mu = &c.eta + &c.lambda * mu;
        sig = &c.psi + &c.lambda * sig * c.lambda.transpose();
    }
    (mu, sig)
}

/// Condition `z_up ~ N(μ, Σ)` on `z = η + Λ z_up + N(0, Ψ)` by assembling the
/// joint covariance of `(z_up, z)` and applying the Schur complement.
pub fn oracle_condition(
    eta: &DVector<f64>,
    lambda: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    z: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (d, r) = lambda.shape();
    let n = r + d;
    let mut joint = DMatrix::zeros(n, n);
    let cross = sigma * lambda.transpose();
    joint.view_mut((0, 0), (r, r)).copy_from(sigma);
    joint.view_mut((0, r), (r, d)).copy_from(&cross);
    joint.view_mut((r, 0), (d, r)).copy_from(&cross.transpose());
    joint
        .view_mut((r, r), (d, d))
        .copy_from(&(lambda * sigma * lambda.transpose() + psi));
    let s12 = joint.view((0, r), (r, d)).into_owned();
    let s22 = joint.view((r, r), (d, d)).into_owned();
    let s22_inv = s22.try_inverse().unwrap();
    let m2 = eta + lambda * mu;
    let rho = mu + &s12 * &s22_inv * (z - m2);
    let xi = sigma - &s12 * &s22_inv * s12.transpose();
    (rho, xi)
}

/// Independent EM for a single factor analyzer `x = μ + Λ f + e`, diagonal
/// noise, started from the leading principal axes.
pub fn oracle_fa(x: &DMatrix<f64>, r: usize, iters: usize) -> (DMatrix<f64>, DVector<f64>) {
    let (n, p) = x.shape();
    let mean = DVector::from_fn(p, |j, _| x.column(j).mean());
    let mut s = DMatrix::zeros(p, p);
    for i in 0..n {
        let d = x.row(i).transpose() - &mean;
        s += &d * d.transpose();
    }
    s /= n as f64;
    let eig = s.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut lambda = DMatrix::from_fn(p, r, |i, k| {
        eig.eigenvectors[(i, order[k])] * eig.eigenvalues[order[k]].max(1e-6).sqrt() * 0.9
    });
    let mut psi = DVector::from_fn(p, |j, _| s[(j, j)] * 0.5);
    for _ in 0..iters {
        let psi_inv = DMatrix::from_diagonal(&psi.map(|v| 1.0 / v));
        let m = DMatrix::identity(r, r) + lambda.transpose() * &psi_inv * &lambda;
        let m_inv = m.try_inverse().unwrap();
        let beta = &m_inv * lambda.transpose() * &psi_inv;
        let ezz = &m_inv + &beta * &s * beta.transpose();
        let new_lambda = &s * beta.transpose() * ezz.try_inverse().unwrap();
        let resid = &s - &new_lambda * &beta * &s;
        psi = DVector::from_fn(p, |j, _| resid[(j, j)].max(1e-8));
        lambda = new_lambda;
    }
    (lambda, psi)
}

/// Gauss–Hermite nodes and weights for `∫ e^{-x²} f(x) dx`, by Golub–Welsch.
pub fn gauss_hermite(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::zeros(m, m);
    for k in 1..m {
        let b = (k as f64 / 2.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = j.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Heads that generate latent (not observed) levels, for moment checks.
pub fn latent_generators(params: &ModelParams) -> Vec<(Head, usize)> {
    let mut out = Vec::new();
    for &h in params.mode.heads() {
        let n_head = params.head_layers(h).len();
        for v in 0..params.chain(h).len() {
            let observed = h == Head::C && v == 0;
            let shared_tail = v >= n_head && h != params.mode.heads()[0];
            if !observed && !shared_tail {
                out.push((h, v));
            }
        }
    }
    out
}
