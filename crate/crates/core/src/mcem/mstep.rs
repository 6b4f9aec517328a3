use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{EState, Observed, RegStats, Slots};
use crate::error::Result;
use crate::gaussnet::{ComponentParams, Head, LayerParams, ModelParams};
use crate::linalg::{floor_eigen, solve_psd, symmetrize, EIG_FLOOR};
use crate::links::{weighted_loglik_grad, LinkParams};
use crate::optim::{bfgs_minimize, BfgsOptions};

/// M-step settings.
#[derive(Debug, Clone, Copy)]
pub struct MStepOptions {
    /// Inner quasi-Newton iterations per GLLVM variable.
    pub gllvm_max_inner: usize,
}

impl Default for MStepOptions {
    fn default() -> Self {
        MStepOptions {
            gllvm_max_inner: 30,
        }
    }
}

/// Weighted least squares of `x` on `(1, u)` from accumulated moments.
/// Components with no weight keep their previous values.
pub fn regression_update(
    stats: &[RegStats],
    old: &LayerParams,
) -> (Vec<ComponentParams>, Vec<String>) {
    let mut warnings = Vec::new();
    let comps = stats
        .iter()
        .zip(&old.components)
        .enumerate()
        .map(|(k, (st, prev))| {
            let w = st.weight();
            if !(w > 1e-12) {
                return prev.clone();
            }
            let (dx, du) = (st.dx, st.du);
            let m = st.matrix();
            let uidx: Vec<usize> = std::iter::once(0).chain(1 + dx..1 + dx + du).collect();
            let a = DMatrix::from_fn(1 + du, 1 + du, |r, c| m[(uidx[r], uidx[c])]);
            let b = DMatrix::from_fn(1 + du, dx, |r, c| m[(uidx[r], 1 + c)]);
            let sxx = m.view((1, 1), (dx, dx)).clone_owned();
            let Ok((coef, ridged)) = solve_psd(&a, &b, 1e-8) else {
                warnings.push(format!(
                    "component {k}: singular moment matrix, kept previous values"
                ));
                return prev.clone();
            };
            if ridged {
                warnings.push(format!(
                    "component {k}: rank-deficient moments, ridge 1e-8 added"
                ));
            }
            let eta = coef.row(0).transpose();
            let lambda = coef.rows(1, du).transpose();
            let psi = (sxx - b.transpose() * &coef) / w;
            let psi = floor_eigen(&symmetrize(&psi), EIG_FLOOR);
            if eta
                .iter()
                .chain(lambda.iter())
                .chain(psi.iter())
                .any(|v| !v.is_finite())
            {
                warnings.push(format!(
                    "component {k}: non-finite update, kept previous values"
                ));
                return prev.clone();
            }
            ComponentParams::new(eta, lambda, psi)
        })
        .collect();
    (comps, warnings)
}

/// Closed-form update of chain layer `v` of `head` from the E-step moments.
pub fn update_dgmm_layer(
    estate: &EState,
    params: &ModelParams,
    head: Head,
    v: usize,
) -> (Vec<ComponentParams>, Vec<String>) {
    let slot = Slots::of(params).chain(head, v);
    let layer = params.chain(head)[v];
    regression_update(&estate.stats.reg[slot], layer)
}

/// `π̂_k = (1/n) Σ_i f(s = k | y_i)` for every layer slot.
pub fn update_path_probs(estate: &EState) -> Vec<Vec<f64>> {
    estate
        .stats
        .pi
        .iter()
        .map(|acc| {
            let tot: f64 = acc.iter().sum();
            if tot > 0.0 {
                acc.iter().map(|a| a / tot).collect()
            } else {
                vec![1.0 / acc.len() as f64; acc.len()]
            }
        })
        .collect()
}

/// Maximize `Σ_i Σ_m W_im log f(y_ij | z_im)` for every link by BFGS in the
/// unconstrained coordinates, starting from `current`. A link whose objective
/// does not improve keeps its input values.
pub fn optimize_gllvm(
    estate: &EState,
    obs: &Observed,
    current: &[LinkParams],
    max_inner: usize,
) -> (Vec<LinkParams>, Vec<String>) {
    if max_inner == 0 || current.is_empty() {
        return (current.to_vec(), Vec::new());
    }
    let r = current[0].dim();
    let n = estate.n.max(1) as f64;
    let mut zs = Vec::new();
    let mut ws = Vec::new();
    let mut owner = Vec::new();
    for (i, o) in estate.obs.iter().enumerate() {
        zs.extend_from_slice(&o.gllvm_z);
        for &w in &o.gllvm_w {
            ws.push(w / n);
            owner.push(i);
        }
    }
    debug_assert_eq!(zs.len(), ws.len() * r);
    let results: Vec<(LinkParams, Option<String>)> = current
        .par_iter()
        .enumerate()
        .map(|(j, p0)| {
            let ys: Vec<f64> = owner.iter().map(|&i| obs.y_g_row(i)[j]).collect();
            let objective = |x: &[f64]| {
                let p = p0.from_free(x);
                let (f, g) = weighted_loglik_grad(&p, &ys, &zs, &ws);
                (-f, p.free_grad(&g).iter().map(|v| -v).collect::<Vec<f64>>())
            };
            let x0 = p0.to_free();
            let (f0, _) = objective(&x0);
            let res = bfgs_minimize(
                objective,
                &x0,
                BfgsOptions {
                    max_iter: max_inner,
                    ..BfgsOptions::default()
                },
            );
            if res.f < f0 && res.x.iter().all(|v| v.is_finite()) {
                let mut p = p0.from_free(&res.x);
                p.apply_mask();
                (p, None)
            } else {
                let note = if res.line_search_failed {
                    Some(format!(
                        "link {j}: line search failed, kept previous values"
                    ))
                } else {
                    None
                };
                (p0.clone(), note)
            }
        })
        .collect();
    let mut links = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for (p, w) in results {
        links.push(p);
        warnings.extend(w);
    }
    (links, warnings)
}

/// Full M step: GLLVM links, every DGMM layer and every layer's component
/// probabilities.
pub fn m_step(
    params: &ModelParams,
    estate: &EState,
    obs: &Observed,
    opts: &MStepOptions,
) -> Result<(ModelParams, Vec<String>)> {
    let mut next = params.clone();
    let mut warnings = Vec::new();
    if params.mode.has_gllvm() {
        let (links, w) = optimize_gllvm(estate, obs, &params.gllvm, opts.gllvm_max_inner);
        next.gllvm = links;
        warnings.extend(w);
    }
    let slots = Slots::of(params);
    let pis = update_path_probs(estate);
    let mut slot = 0;
    let n_c = slots.n_c;
    let n_d = slots.n_d;
    for (group, count) in [(0usize, n_c), (1, n_d), (2, slots.n_tail)] {
        for v in 0..count {
            let layer = match group {
                0 => &mut next.layers_c[v],
                1 => &mut next.layers_d[v],
                _ => &mut next.layers_tail[v],
            };
            let (comps, w) = regression_update(&estate.stats.reg[slot], layer);
            layer.components = comps;
            layer.pi = pis[slot].clone();
            warnings.extend(w.into_iter().map(|m| format!("layer slot {slot}: {m}")));
            slot += 1;
        }
    }
    Ok((next, warnings))
}
