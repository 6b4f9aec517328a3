//! On-the-fly architecture pruning: low-probability components, weak latent
//! dimensions and the layer deletions they imply.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussnet::{Architecture, Head, LayerParams, LayerSpec, Mode, ModelParams};
use crate::glm::{fit_link, wald_pvalues};
use crate::linalg::sym_eigen_desc;
use crate::mcem::{EState, Observed};

/// Components with probability below `1 / (4 k)` are removed.
pub const COMPONENT_FACTOR: f64 = 0.25;
/// Wald test level for embedding dimensions.
pub const WALD_LEVEL: f64 = 0.10;
/// Share of (variable, path) votes that removes an embedding dimension.
pub const PATH_VOTE: f64 = 0.25;
/// Mean first-component contribution below which a DGMM dimension is removed.
pub const PC_THRESHOLD: f64 = 0.2;
/// Ridge of the per-path link refits.
const VOTE_RIDGE: f64 = 1e-4;
const VOTE_MAX_ITER: usize = 50;

/// Components of a layer that survive pruning, in increasing order. The most
/// probable component always survives; a frozen layer keeps everything.
pub fn prune_components(layer: &LayerParams, frozen: bool) -> Vec<usize> {
    let k = layer.k();
    if frozen || k <= 1 {
        return (0..k).collect();
    }
    let threshold = COMPONENT_FACTOR / k as f64;
    let best = (0..k).fold(0, |b, c| if layer.pi[c] > layer.pi[b] { c } else { b });
    (0..k)
        .filter(|&c| c == best || layer.pi[c] >= threshold)
        .collect()
}

/// Absolute entries of the leading eigenvector of each covariance, averaged.
pub fn first_pc_contributions(covs: &[DMatrix<f64>]) -> Vec<f64> {
    let Some(d) = covs.first().map(|c| c.nrows()) else {
        return Vec::new();
    };
    let mut acc = vec![0.0; d];
    for c in covs {
        let (_, vecs) = sym_eigen_desc(c);
        for (a, v) in acc.iter_mut().enumerate() {
            *v += vecs[(a, 0)].abs();
        }
    }
    acc.iter().map(|v| v / covs.len() as f64).collect()
}

/// Dimensions whose mean contribution reaches the threshold; the strongest
/// one is kept when none does.
pub fn dims_from_contributions(contrib: &[f64]) -> Vec<usize> {
    let kept: Vec<usize> = (0..contrib.len())
        .filter(|&a| contrib[a] >= PC_THRESHOLD)
        .collect();
    if kept.is_empty() && !contrib.is_empty() {
        let best = (0..contrib.len()).fold(0, |b, a| if contrib[a] > contrib[b] { a } else { b });
        return vec![best];
    }
    kept
}

/// Kept input dimensions of chain layer `v` of `head`, from the deviations of
/// the layer-input draws around their conditional means, pooled over paths.
/// `None` when the E step carried no deviation moments for the layer.
pub fn select_dgmm_dims(estate: &EState, head: Head, v: usize) -> Option<Vec<usize>> {
    let ci = estate.heads.iter().position(|&h| h == head)?;
    let covs: Vec<DMatrix<f64>> = estate
        .stats
        .dev
        .get(ci)?
        .iter()
        .filter_map(|levels| levels.get(v))
        .filter(|d| d.w > 0.0)
        .map(|d| &d.m / d.w)
        .collect();
    if covs.is_empty() {
        return None;
    }
    Some(dims_from_contributions(&first_pc_contributions(&covs)))
}

/// Insignificant and total vote counts per embedding dimension: for every
/// D-chain path and GLLVM variable, the link is refitted on the path's
/// posterior-mean embedding weighted by the path posterior, and each free
/// dimension is tested at the Wald level.
pub fn embedding_votes(
    params: &ModelParams,
    obs: &Observed,
    estate: &EState,
) -> (Vec<usize>, Vec<usize>) {
    let Some(r) = params.gllvm.first().map(|p| p.dim()) else {
        return (Vec::new(), Vec::new());
    };
    let Some(ci) = estate.heads.iter().position(|&h| h == Head::D) else {
        return (vec![0; r], vec![0; r]);
    };
    let n_paths = estate.paths[ci].len();
    let tasks: Vec<(usize, usize)> = (0..n_paths)
        .flat_map(|s| (0..params.gllvm.len()).map(move |j| (s, j)))
        .collect();
    let votes: Vec<Vec<Option<bool>>> = tasks
        .par_iter()
        .map(|&(s, j)| {
            let p0 = &params.gllvm[j];
            let ys: Vec<f64> = (0..estate.n).map(|i| obs.y_g_row(i)[j]).collect();
            let zs: Vec<f64> = estate
                .obs
                .iter()
                .flat_map(|o| o.d_path_means[s * r..(s + 1) * r].iter().cloned())
                .collect();
            let ws: Vec<f64> = estate.obs.iter().map(|o| o.head_post[ci][s]).collect();
            if ws.iter().sum::<f64>() < 1e-8 {
                return vec![None; r];
            }
            let fitted = fit_link(p0, &ys, &zs, &ws, VOTE_RIDGE, VOTE_MAX_ITER);
            let pv = wald_pvalues(&fitted, &ys, &zs, &ws, VOTE_RIDGE);
            (0..r)
                .map(|d| (d < p0.free_dims).then(|| pv[d] > WALD_LEVEL))
                .collect()
        })
        .collect();
    let mut insignificant = vec![0; r];
    let mut total = vec![0; r];
    for v in &votes {
        for d in 0..r {
            if let Some(flag) = v[d] {
                total[d] += 1;
                insignificant[d] += usize::from(flag);
            }
        }
    }
    (insignificant, total)
}

/// Embedding dimensions kept by the pooled path vote; at least one survives.
pub fn dims_from_votes(insignificant: &[usize], total: &[usize]) -> Vec<usize> {
    let r = insignificant.len();
    let share = |d: usize| {
        if total[d] == 0 {
            0.0
        } else {
            insignificant[d] as f64 / total[d] as f64
        }
    };
    let kept: Vec<usize> = (0..r).filter(|&d| share(d) < PATH_VOTE).collect();
    if kept.is_empty() && r > 0 {
        let best = (0..r).fold(0, |b, d| if share(d) < share(b) { d } else { b });
        return vec![best];
    }
    kept
}

/// Kept dimensions of the GLLVM embedding.
pub fn select_embedding_dims(params: &ModelParams, obs: &Observed, estate: &EState) -> Vec<usize> {
    let (ins, tot) = embedding_votes(params, obs, estate);
    dims_from_votes(&ins, &tot)
}

/// What to keep in one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDecision {
    /// Surviving component indices.
    pub components: Vec<usize>,
    /// Surviving dimensions of the layer's input latent.
    pub dims: Vec<usize>,
}

impl LayerDecision {
    fn keep_all(spec: &LayerSpec) -> Self {
        LayerDecision {
            components: (0..spec.components).collect(),
            dims: (0..spec.width).collect(),
        }
    }
}

/// Outcome of one selection pass, before repair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionDecision {
    /// Surviving GLLVM embedding dimensions (empty in dgmm mode).
    pub embedding_dims: Vec<usize>,
    pub head_c: Vec<LayerDecision>,
    pub head_d: Vec<LayerDecision>,
    pub tail: Vec<LayerDecision>,
}

impl SelectionDecision {
    /// Keep everything.
    pub fn identity(arch: &Architecture) -> Self {
        let all = |ls: &[LayerSpec]| ls.iter().map(LayerDecision::keep_all).collect();
        SelectionDecision {
            embedding_dims: if arch.mode.has_gllvm() {
                (0..arch.embedding_dim).collect()
            } else {
                Vec::new()
            },
            head_c: all(&arch.head_c),
            head_d: all(&arch.head_d),
            tail: all(&arch.tail),
        }
    }
}

/// Which layers may lose components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    /// The clustering layer may lose components.
    pub autoclus: bool,
    /// Every tail layer keeps its components and width.
    pub multi_clustering: bool,
    pub clustering_layer: usize,
}

impl SelectionPolicy {
    fn tail_frozen(&self, q: usize) -> bool {
        self.multi_clustering || (q == self.clustering_layer && !self.autoclus)
    }
}

/// Run every selection rule on the state of one E step. Dimension rules need
/// the deviation moments of that E step.
pub fn decide(
    params: &ModelParams,
    obs: &Observed,
    estate: &EState,
    policy: &SelectionPolicy,
) -> SelectionDecision {
    let arch = params.architecture();
    let mut dec = SelectionDecision::identity(&arch);
    for (v, l) in params.layers_c.iter().enumerate() {
        dec.head_c[v].components = prune_components(l, false);
    }
    for (v, l) in params.layers_d.iter().enumerate() {
        dec.head_d[v].components = prune_components(l, false);
    }
    for (q, l) in params.layers_tail.iter().enumerate() {
        dec.tail[q].components = prune_components(l, policy.tail_frozen(q));
    }
    if params.mode.has_gllvm() {
        dec.embedding_dims = select_embedding_dims(params, obs, estate);
    }
    for &h in params.mode.heads() {
        let n_head = params.head_layers(h).len();
        for v in 0..n_head {
            if let Some(d) = select_dgmm_dims(estate, h, v) {
                match h {
                    Head::C => dec.head_c[v].dims = d,
                    Head::D => dec.head_d[v].dims = d,
                }
            }
        }
    }
    // tail input dimensions: union over the chains that reach the layer
    let tail_dims = if policy.multi_clustering {
        0
    } else {
        params.layers_tail.len()
    };
    for q in 0..tail_dims {
        let mut union: Option<BTreeSet<usize>> = None;
        for &h in params.mode.heads() {
            let v = params.head_layers(h).len() + q;
            if let Some(d) = select_dgmm_dims(estate, h, v) {
                union.get_or_insert_with(BTreeSet::new).extend(d);
            }
        }
        if let Some(u) = union {
            dec.tail[q].dims = u.into_iter().collect();
        }
    }
    // the junction is the input of both last head layers
    if params.mode == Mode::M2 {
        let (lc, ld) = (dec.head_c.len() - 1, dec.head_d.len() - 1);
        let union: BTreeSet<usize> = dec.head_c[lc]
            .dims
            .iter()
            .chain(&dec.head_d[ld].dims)
            .cloned()
            .collect();
        let union: Vec<usize> = union.into_iter().collect();
        dec.head_c[lc].dims = union.clone();
        dec.head_d[ld].dims = union;
    }
    // every tail layer is a clustering: keep the junction and tail widths so
    // no tail layer is deleted
    if policy.multi_clustering {
        for (layers, specs) in [
            (&mut dec.head_c, &arch.head_c),
            (&mut dec.head_d, &arch.head_d),
        ] {
            if let (Some(d), Some(l)) = (layers.last_mut(), specs.last()) {
                d.dims = (0..l.width).collect();
            }
        }
    }
    dec
}

/// Result of applying a decision.
#[derive(Debug, Clone)]
pub struct ArchitectureUpdate {
    pub architecture: Architecture,
    /// Sliced parameters. They chain only when no head layer was deleted.
    pub params: ModelParams,
    /// A head layer was deleted: training must restart.
    pub restart_required: bool,
    pub deleted_head_layers: Vec<(Head, usize)>,
    pub deleted_tail_layers: Vec<usize>,
    pub changed: bool,
}

/// Resize `set` to lie in `[lo, hi]`: drop the highest indices, or add back
/// the lowest missing indices of `0..width`.
fn clamp_set(set: &[usize], lo: usize, hi: usize, width: usize) -> Vec<usize> {
    let mut s: BTreeSet<usize> = set.iter().cloned().collect();
    while s.len() > hi.max(1) {
        let last = *s.iter().next_back().unwrap();
        s.remove(&last);
    }
    let mut cand = 0;
    while s.len() < lo.min(width) && cand < width {
        s.insert(cand);
        cand += 1;
    }
    s.into_iter().collect()
}

fn slice_layer(
    layer: &LayerParams,
    comps: &[usize],
    rows: &[usize],
    cols: &[usize],
) -> LayerParams {
    let components: Vec<_> = comps
        .iter()
        .map(|&k| {
            let c = &layer.components[k];
            let mut c2 = c.clone();
            c2.eta = nalgebra::DVector::from_iterator(rows.len(), rows.iter().map(|&a| c.eta[a]));
            c2.lambda =
                DMatrix::from_fn(rows.len(), cols.len(), |a, b| c.lambda[(rows[a], cols[b])]);
            c2.psi = DMatrix::from_fn(rows.len(), rows.len(), |a, b| c.psi[(rows[a], rows[b])]);
            c2
        })
        .collect();
    let tot: f64 = comps.iter().map(|&k| layer.pi[k]).sum();
    let pi = comps.iter().map(|&k| layer.pi[k] / tot).collect();
    LayerParams { components, pi }
}

/// Apply a decision: slice components and dimensions, delete the tail layers
/// above a width-1 tail latent and, in single-head modes, the head layers
/// above a head latent of width at most 2, then restore strictly decreasing
/// widths.
pub fn apply_architecture_update(
    arch: &Architecture,
    params: &ModelParams,
    decision: &SelectionDecision,
) -> Result<ArchitectureUpdate> {
    if decision.head_c.len() != arch.head_c.len()
        || decision.head_d.len() != arch.head_d.len()
        || decision.tail.len() != arch.tail.len()
    {
        return Err(Error::Architecture(
            "selection decision does not match the architecture".into(),
        ));
    }
    for (d, s) in decision
        .head_c
        .iter()
        .chain(&decision.head_d)
        .chain(&decision.tail)
        .zip(arch.head_c.iter().chain(&arch.head_d).chain(&arch.tail))
    {
        if d.components.is_empty()
            || d.dims.is_empty()
            || d.components.iter().any(|&k| k >= s.components)
            || d.dims.iter().any(|&a| a >= s.width)
        {
            return Err(Error::Architecture(
                "selection decision does not match the architecture".into(),
            ));
        }
    }
    let mut n_tail = arch.tail.len();
    for q in 0..arch.tail.len().saturating_sub(1) {
        if decision.tail[q].dims.len() == 1 {
            n_tail = q + 1;
            break;
        }
    }
    let deleted_tail_layers: Vec<usize> = (n_tail..arch.tail.len()).collect();
    let mut deleted_head_layers = Vec::new();
    let mut n_head = [arch.head_c.len(), arch.head_d.len()];
    if arch.mode != Mode::M2 {
        for (hi, h) in [Head::C, Head::D].into_iter().enumerate() {
            let dec = if h == Head::C {
                &decision.head_c
            } else {
                &decision.head_d
            };
            for v in 0..dec.len().saturating_sub(1) {
                if dec[v].dims.len() <= 2 {
                    n_head[hi] = v + 1;
                    deleted_head_layers.extend((v + 1..dec.len()).map(|u| (h, u)));
                    break;
                }
            }
        }
    }
    let restart_required = !deleted_head_layers.is_empty();

    // surviving layers and their raw input-dimension sets
    let head_c: Vec<&LayerDecision> = decision.head_c[..n_head[0]].iter().collect();
    let head_d: Vec<&LayerDecision> = decision.head_d[..n_head[1]].iter().collect();
    let tail: Vec<&LayerDecision> = decision.tail[..n_tail].iter().collect();
    let t = tail.len();
    // widths: floor keeps room for every latent above, cap keeps decrease
    let clamp_chain =
        |bottom: usize, head: &[&LayerDecision], specs: &[LayerSpec]| -> Vec<Vec<usize>> {
            let top = head.len() + t;
            let mut prev = bottom;
            let mut out = Vec::new();
            for (v, d) in head.iter().enumerate() {
                let s = clamp_set(&d.dims, top - v, prev - 1, specs[v].width);
                prev = s.len();
                out.push(s);
            }
            out
        };
    let p_c = params
        .layers_c
        .first()
        .or(params.layers_tail.first())
        .map_or(0, |l| l.shape().0);
    let emb_dims: Vec<usize> = if arch.mode.has_gllvm() {
        let d_top = n_head[1] + t;
        clamp_set(
            &decision.embedding_dims,
            d_top + 1,
            arch.embedding_dim,
            arch.embedding_dim,
        )
    } else {
        Vec::new()
    };
    let c_sets = if arch.mode.heads().contains(&Head::C) {
        clamp_chain(p_c, &head_c, &arch.head_c)
    } else {
        Vec::new()
    };
    let mut d_sets = if arch.mode.heads().contains(&Head::D) {
        clamp_chain(emb_dims.len(), &head_d, &arch.head_d)
    } else {
        Vec::new()
    };
    let mut c_sets = c_sets;
    if arch.mode == Mode::M2 {
        // both heads end on the same junction latent
        let (a, b) = (c_sets.last().unwrap(), d_sets.last().unwrap());
        if a != b {
            let union: Vec<usize> = a
                .iter()
                .chain(b)
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let s = clamp_set(
                &union,
                t + 1,
                a.len().min(b.len()),
                arch.head_c.last().unwrap().width,
            );
            *c_sets.last_mut().unwrap() = s.clone();
            *d_sets.last_mut().unwrap() = s;
        }
    }
    let junction_width =
        |sets: &Vec<Vec<usize>>, bottom: usize| sets.last().map_or(bottom, |s| s.len());
    let mut prev = match arch.mode {
        Mode::Dgmm => junction_width(&c_sets, p_c),
        _ => junction_width(&d_sets, emb_dims.len()),
    };
    let mut tail_sets = Vec::new();
    for (q, d) in tail.iter().enumerate() {
        let s = clamp_set(&d.dims, t - q, prev - 1, arch.tail[q].width);
        prev = s.len();
        tail_sets.push(s);
    }

    // slice parameters along every chain
    let mut p = params.clone();
    let all = |w: usize| (0..w).collect::<Vec<usize>>();
    let slice_head = |layers: &[LayerParams],
                      decs: &[&LayerDecision],
                      sets: &[Vec<usize>],
                      bottom: Vec<usize>| {
        let mut rows = bottom;
        let mut out = Vec::new();
        for (v, d) in decs.iter().enumerate() {
            out.push(slice_layer(&layers[v], &d.components, &rows, &sets[v]));
            rows = sets[v].clone();
        }
        (out, rows)
    };
    let (lc, c_top) = slice_head(&params.layers_c, &head_c, &c_sets, all(p_c));
    let (ld, d_top) = slice_head(&params.layers_d, &head_d, &d_sets, emb_dims.clone());
    p.layers_c = lc;
    p.layers_d = ld;
    let mut rows = match arch.mode {
        Mode::Dgmm => c_top,
        _ => d_top,
    };
    p.layers_tail = Vec::new();
    for (q, d) in tail.iter().enumerate() {
        p.layers_tail.push(slice_layer(
            &params.layers_tail[q],
            &d.components,
            &rows,
            &tail_sets[q],
        ));
        rows = tail_sets[q].clone();
    }
    if arch.mode.has_gllvm() {
        for link in p.gllvm.iter_mut() {
            let free = emb_dims
                .iter()
                .filter(|&&a| a < link.free_dims)
                .count()
                .max(1);
            for row in link.loadings.iter_mut() {
                *row = emb_dims.iter().map(|&a| row[a]).collect();
            }
            link.free_dims = free.min(emb_dims.len());
            link.apply_mask();
        }
    }
    let spec = |decs: &[&LayerDecision], sets: &[Vec<usize>]| -> Vec<LayerSpec> {
        decs.iter()
            .zip(sets)
            .map(|(d, s)| LayerSpec::new(s.len(), d.components.len()))
            .collect()
    };
    let architecture = Architecture {
        mode: arch.mode,
        embedding_dim: emb_dims.len(),
        head_c: spec(&head_c, &c_sets),
        head_d: spec(&head_d, &d_sets),
        tail: spec(&tail, &tail_sets),
    };
    let changed = architecture != *arch;
    Ok(ArchitectureUpdate {
        architecture,
        params: p,
        restart_required,
        deleted_head_layers,
        deleted_tail_layers,
        changed,
    })
}
