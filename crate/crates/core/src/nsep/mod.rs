//! Nested embedding initialization: every layer is seeded from the one below
//! it, bottom-up.
//!
//! The D head's embedding comes from MCA (discrete columns) or FAMD (every
//! column, m1). Each layer then fits a Gaussian mixture to its input, splits
//! the rows by hard assignment and fits a factor analyzer per group; the
//! factor scores feed the next layer. In m2 the junction latent is the PCA of
//! both heads' last inputs and the last head layers are PLS maps from it.
//! GLLVM links are seeded by regressing each variable on the embedding.

mod factor;
mod gmm;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use factor::{
    fa_em, famd, mca, pca, pls_regression, FaResult, McaResult, PcaResult, PlsResult, FA_PSI_FLOOR,
};
pub use gmm::{gmm_em, GmmResult};

use crate::data::{MixedDataset, VarKind};
use crate::error::{Error, Result};
use crate::gaussnet::{
    rescale_layers, Architecture, ComponentParams, LayerParams, LayerSpec, Mode, ModelParams,
};
use crate::glm::seed_link;
use crate::linalg::{select_rows, spd_inverse, EIG_FLOOR};
use crate::links::LinkParams;

/// Iteration cap of the mixture and factor-analysis fits.
pub const SUBFIT_MAX_ITER: usize = 200;
/// Ridge of the link seed regressions.
pub const SEED_RIDGE: f64 = 1e-4;
/// Smallest initial component probability.
const MIN_PI: f64 = 1e-4;

/// Summary of one initialized layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerInit {
    /// `"c0"`, `"d1"`, `"t0"`: head or tail and index.
    pub layer: String,
    /// Mixture weights of the layer's input.
    pub weights: Vec<f64>,
    pub gmm_converged: bool,
    /// Per component, the share of the group's variance carried by each
    /// factor, decreasing.
    pub explained: Vec<Vec<f64>>,
    pub fa_converged: Vec<bool>,
    /// Components fitted on all rows because their group was too small.
    pub global_fallback: Vec<bool>,
}

/// What the initialization did.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct InitReport {
    /// Explained variance (or inertia) fraction of each embedding dimension.
    pub embedding_explained: Vec<f64>,
    /// Explained variance fraction of each junction dimension (m2).
    pub junction_explained: Vec<f64>,
    pub layers: Vec<LayerInit>,
    pub warnings: Vec<String>,
}

/// Schema columns modelled by the GLLVM head, in link order.
pub fn gllvm_columns(ds: &MixedDataset, mode: Mode) -> Vec<usize> {
    match mode {
        Mode::Dgmm => Vec::new(),
        Mode::M1 => (0..ds.schema.width()).collect(),
        Mode::Ddgmm | Mode::M2 => ds.discrete_cols.clone(),
    }
}

/// Values of a schema column: standardized for continuous, codes otherwise.
pub fn column_values(ds: &MixedDataset, col: usize) -> Vec<f64> {
    if let Some(pos) = ds.continuous_cols.iter().position(|&c| c == col) {
        (0..ds.n).map(|i| ds.y_c[(i, pos)]).collect()
    } else {
        let pos = ds
            .discrete_cols
            .iter()
            .position(|&c| c == col)
            .expect("column is neither continuous nor discrete");
        (0..ds.n).map(|i| ds.y_d[(i, pos)] as f64).collect()
    }
}

/// Zero links for the GLLVM head. The `j`-th binary or count link loads on
/// the first `j + 1` embedding dimensions only, which pins the rotation.
pub fn initial_links(ds: &MixedDataset, mode: Mode, r: usize) -> Vec<LinkParams> {
    let mut n_masked = 0;
    gllvm_columns(ds, mode)
        .into_iter()
        .map(|col| {
            let kind = ds.schema.columns[col].kind;
            let (levels, trials) = match ds.discrete_cols.iter().position(|&c| c == col) {
                Some(pos) => (ds.n_levels[pos], ds.trials[pos]),
                None => (0, 0),
            };
            let mut p = LinkParams::zeros(col, kind, levels, trials, r);
            if matches!(kind, VarKind::Binary | VarKind::Count) {
                p.free_dims = (n_masked + 1).min(r);
                n_masked += 1;
            }
            p
        })
        .collect()
}

fn standardize_cols(m: &mut DMatrix<f64>) {
    let n = m.nrows() as f64;
    for mut c in m.column_iter_mut() {
        let mean = c.sum() / n;
        c.add_scalar_mut(-mean);
        let sd = (c.norm_squared() / n).sqrt();
        if sd > 0.0 {
            c /= sd;
        }
    }
}

fn sub_seed(seed: u64, task: u64) -> u64 {
    seed ^ task.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Rotate a group's factor model onto the global loadings and express its
/// latent relative to the global mean, so that group offsets survive in the
/// scores passed upward. Returns `(η, Λ, scores of the rows of z)`.
fn aligned_component(
    fa: &FaResult,
    global: &FaResult,
    z: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let svd = (fa.loading.transpose() * &global.loading).svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::numerical("nsep_init", "alignment SVD failed")),
    };
    let lambda = &fa.loading * (u * vt);
    let sigma = &lambda * lambda.transpose() + DMatrix::from_diagonal(&fa.psi);
    let beta = lambda.transpose() * spd_inverse(&sigma, "nsep_init")?;
    let offset = &beta * (&fa.mean - &global.mean);
    let eta = &fa.mean - &lambda * offset;
    let mut c = z.clone();
    for mut row in c.row_iter_mut() {
        row -= global.mean.transpose();
    }
    Ok((eta, lambda, c * beta.transpose()))
}

fn explained_by_factors(loading: &DMatrix<f64>, total: f64) -> Vec<f64> {
    let (vals, _) = crate::linalg::sym_eigen_desc(&(loading.transpose() * loading));
    vals.iter()
        .map(|v| {
            if total > 0.0 {
                (v / total).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// Mixture probabilities floored away from zero.
fn floored_pi(w: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = w.iter().map(|v| v.max(MIN_PI)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Hard groups of a mixture fit (all rows in one group for `k = 1`).
fn mixture_groups(
    x: &DMatrix<f64>,
    k: usize,
    seed: u64,
) -> Result<(Vec<Vec<usize>>, Vec<f64>, bool)> {
    let n = x.nrows();
    if k == 1 {
        return Ok((vec![(0..n).collect()], vec![1.0], true));
    }
    let g = gmm_em(x, k, seed, SUBFIT_MAX_ITER)?;
    let mut groups = vec![Vec::new(); k];
    for (i, l) in g.hard_labels().into_iter().enumerate() {
        groups[l].push(i);
    }
    Ok((groups, g.weights, g.converged))
}

/// Mixture of factor analyzers seeded by a Gaussian mixture: returns the
/// layer and the factor scores of every row.
fn fit_layer(
    x: &DMatrix<f64>,
    spec: LayerSpec,
    seed: u64,
    name: String,
) -> Result<(LayerParams, DMatrix<f64>, LayerInit)> {
    let n = x.nrows();
    let r = spec.width;
    let (groups, weights, gmm_converged) = mixture_groups(x, spec.components, seed)?;
    let global = fa_em(x, r, SUBFIT_MAX_ITER)?;
    let fits: Vec<(FaResult, bool)> = groups
        .par_iter()
        .map(|rows| {
            if rows.len() >= r + 2 {
                if let Ok(fa) = fa_em(&select_rows(x, rows), r, SUBFIT_MAX_ITER) {
                    return (fa, false);
                }
            }
            (global.clone(), true)
        })
        .collect();
    let mut scores = DMatrix::zeros(n, r);
    let mut comps = Vec::with_capacity(groups.len());
    let mut explained = Vec::new();
    let mut fa_converged = Vec::new();
    let mut fallback = Vec::new();
    for (rows, (fa, glob)) in groups.iter().zip(&fits) {
        let (eta, lambda, s) = aligned_component(fa, &global, &select_rows(x, rows))?;
        for (a, &i) in rows.iter().enumerate() {
            scores.set_row(i, &s.row(a));
        }
        let total = lambda.norm_squared() + fa.psi.sum();
        explained.push(explained_by_factors(&lambda, total));
        fa_converged.push(fa.converged);
        fallback.push(*glob);
        let psi = DMatrix::from_diagonal(&fa.psi.map(|v| v.max(EIG_FLOOR)));
        comps.push(ComponentParams::new(eta, lambda, psi));
    }
    let layer = LayerParams {
        components: comps,
        pi: floored_pi(&weights),
    };
    let report = LayerInit {
        layer: name,
        weights,
        gmm_converged,
        explained,
        fa_converged,
        global_fallback: fallback,
    };
    Ok((layer, scores, report))
}

/// Fit consecutive layers from `x0` upward. Returns the layers, the input of
/// every layer (`inputs[v]` feeds layer `v`), and the reports.
fn fit_stack(
    x0: &DMatrix<f64>,
    specs: &[LayerSpec],
    seed: u64,
    names: &[String],
    task_base: u64,
) -> Result<(Vec<LayerParams>, DMatrix<f64>, Vec<LayerInit>)> {
    let mut x = x0.clone();
    let mut layers = Vec::new();
    let mut reports = Vec::new();
    for (v, spec) in specs.iter().enumerate() {
        let (layer, next, rep) = fit_layer(
            &x,
            *spec,
            sub_seed(seed, task_base + v as u64),
            names[v].clone(),
        )?;
        layers.push(layer);
        reports.push(rep);
        x = next;
    }
    Ok((layers, x, reports))
}

/// Layer generating `x` from the junction scores `zj`: a mixture over `x`,
/// then one PLS map per group.
fn fit_pls_layer(
    x: &DMatrix<f64>,
    zj: &DMatrix<f64>,
    k: usize,
    seed: u64,
    name: String,
) -> Result<(LayerParams, LayerInit)> {
    let rj = zj.ncols();
    let (groups, weights, gmm_converged) = mixture_groups(x, k, seed)?;
    let fit = |rows: &[usize]| -> Result<ComponentParams> {
        let xs = select_rows(x, rows);
        let zs = select_rows(zj, rows);
        let pls = pls_regression(&zs, &xs, rj.min(xs.ncols()))?;
        let lambda = pls.coef.transpose();
        let eta = pls.intercept();
        let d = x.ncols();
        let mut psi = DVector::zeros(d);
        for i in 0..rows.len() {
            let fitted = &eta + &lambda * zs.row(i).transpose();
            for a in 0..d {
                psi[a] += (xs[(i, a)] - fitted[a]).powi(2);
            }
        }
        psi /= rows.len() as f64;
        let psi = psi.map(|v| v.max(FA_PSI_FLOOR));
        Ok(ComponentParams::new(
            eta,
            lambda,
            DMatrix::from_diagonal(&psi),
        ))
    };
    let all: Vec<usize> = (0..x.nrows()).collect();
    let global = fit(&all)?;
    let mut comps = Vec::new();
    let mut fallback = Vec::new();
    let mut explained = Vec::new();
    for rows in &groups {
        let (c, glob) = if rows.len() >= rj + 2 {
            match fit(rows) {
                Ok(c) => (c, false),
                Err(_) => (global.clone(), true),
            }
        } else {
            (global.clone(), true)
        };
        let total = c.lambda.norm_squared() + c.psi.trace();
        explained.push(explained_by_factors(&c.lambda, total));
        comps.push(c);
        fallback.push(glob);
    }
    let layer = LayerParams {
        components: comps,
        pi: floored_pi(&weights),
    };
    let n_comp = layer.k();
    Ok((
        layer,
        LayerInit {
            layer: name,
            weights,
            gmm_converged,
            explained,
            fa_converged: vec![true; n_comp],
            global_fallback: fallback,
        },
    ))
}

fn names(prefix: &str, range: std::ops::Range<usize>) -> Vec<String> {
    range.map(|v| format!("{prefix}{v}")).collect()
}

/// Embedding scores of the D head, standardized, and the explained fractions.
fn embedding(
    ds: &MixedDataset,
    mode: Mode,
    r: usize,
) -> Result<(DMatrix<f64>, Vec<f64>, Vec<String>)> {
    let (mut scores, explained, warnings) = if mode == Mode::M1 {
        let f = famd(ds, r)?;
        (f.scores, f.explained, Vec::new())
    } else {
        let m = mca(&ds.y_d, &ds.n_levels, r)?;
        (m.scores, m.explained, m.warnings)
    };
    standardize_cols(&mut scores);
    Ok((scores, explained, warnings))
}

/// Seed each link by regressing its variable on the embedding scores.
fn seed_links(ds: &MixedDataset, mode: Mode, emb: &DMatrix<f64>) -> Vec<LinkParams> {
    let r = emb.ncols();
    let zs: Vec<f64> = (0..emb.nrows())
        .flat_map(|i| emb.row(i).iter().cloned().collect::<Vec<_>>())
        .collect();
    initial_links(ds, mode, r)
        .par_iter()
        .map(|p0| seed_link(p0, &column_values(ds, p0.variable_index), &zs, SEED_RIDGE))
        .collect()
}

/// Complete initial parameters for `arch`, standardized layer by layer.
pub fn nsep_init(
    ds: &MixedDataset,
    arch: &Architecture,
    seed: u64,
) -> Result<(ModelParams, InitReport)> {
    arch.validate(ds.p_c(), ds.p_d())?;
    let mut report = InitReport::default();
    let n_head_c = arch.head_c.len();
    let n_head_d = arch.head_d.len();
    let mut params = ModelParams {
        mode: arch.mode,
        gllvm: Vec::new(),
        layers_c: Vec::new(),
        layers_d: Vec::new(),
        layers_tail: Vec::new(),
    };
    let emb = if arch.mode.has_gllvm() {
        let (emb, explained, w) = embedding(ds, arch.mode, arch.embedding_dim)?;
        report.embedding_explained = explained;
        report.warnings.extend(w);
        params.gllvm = seed_links(ds, arch.mode, &emb);
        Some(emb)
    } else {
        None
    };
    let tail_names = names("t", 0..arch.tail.len());
    match arch.mode {
        Mode::Dgmm | Mode::Ddgmm | Mode::M1 => {
            let (x0, head, prefix, n_head) = if arch.mode == Mode::Dgmm {
                (ds.y_c.clone(), &arch.head_c, "c", n_head_c)
            } else {
                (emb.clone().unwrap(), &arch.head_d, "d", n_head_d)
            };
            let mut specs = head.clone();
            specs.extend_from_slice(&arch.tail);
            let mut all_names = names(prefix, 0..n_head);
            all_names.extend(tail_names);
            let (mut layers, _, reps) = fit_stack(&x0, &specs, seed, &all_names, 0)?;
            report.layers.extend(reps);
            let tail = layers.split_off(n_head);
            if arch.mode == Mode::Dgmm {
                params.layers_c = layers;
            } else {
                params.layers_d = layers;
            }
            params.layers_tail = tail;
        }
        Mode::M2 => {
            let emb = emb.unwrap();
            let (lc, xc, rc) = fit_stack(
                &ds.y_c,
                &arch.head_c[..n_head_c - 1],
                seed,
                &names("c", 0..n_head_c - 1),
                0,
            )?;
            let (ld, xd, rd) = fit_stack(
                &emb,
                &arch.head_d[..n_head_d - 1],
                seed,
                &names("d", 0..n_head_d - 1),
                100,
            )?;
            report.layers.extend(rc);
            report.layers.extend(rd);
            let rj = arch.head_c[n_head_c - 1].width;
            let stacked = DMatrix::from_fn(ds.n, xc.ncols() + xd.ncols(), |i, a| {
                if a < xc.ncols() {
                    xc[(i, a)]
                } else {
                    xd[(i, a - xc.ncols())]
                }
            });
            let mut stacked = stacked;
            standardize_cols(&mut stacked);
            let junction = pca(&stacked, rj)?;
            report.junction_explained = junction.explained.clone();
            // raw scores keep the variance ordering the tail mixture relies on
            let zj = junction.scores;
            let (last_c, rep_c) = fit_pls_layer(
                &xc,
                &zj,
                arch.head_c[n_head_c - 1].components,
                sub_seed(seed, 200),
                format!("c{}", n_head_c - 1),
            )?;
            let (last_d, rep_d) = fit_pls_layer(
                &xd,
                &zj,
                arch.head_d[n_head_d - 1].components,
                sub_seed(seed, 201),
                format!("d{}", n_head_d - 1),
            )?;
            report.layers.push(rep_c);
            report.layers.push(rep_d);
            let (tail, _, rt) = fit_stack(&zj, &arch.tail, seed, &tail_names, 300)?;
            report.layers.extend(rt);
            params.layers_c = lc;
            params.layers_c.push(last_c);
            params.layers_d = ld;
            params.layers_d.push(last_d);
            params.layers_tail = tail;
        }
    }
    let params = rescale_layers(&params)?;
    params
        .validate()
        .map_err(|e| Error::numerical("nsep_init", format!("initial parameters invalid: {e}")))?;
    Ok((params, report))
}
