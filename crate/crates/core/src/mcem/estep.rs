use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    DevStats, EOptions, EState, LevelDraws, ObsEState, Observed, PathDraws, RegStats, Slots,
    SuffStats,
};
use crate::error::{Error, Result};
use crate::gaussnet::{
    affine_to_bottom, enumerate_combos, path_conditionals, path_prior, path_table, Head,
    LevelConditional, ModelParams,
};
use crate::linalg::{cholesky_jitter, logsumexp, normalize_log_weights, GaussianLogPdf};
use crate::links::LinkParams;
use crate::rng::{fill_normal, observation_rng};

struct ChainCtx {
    head: Head,
    paths: Vec<Vec<usize>>,
    log_prior: Vec<f64>,
    conds: Vec<Vec<LevelConditional>>,
    /// C chain: exact density of the data per path.
    bottom_pdf: Vec<GaussianLogPdf>,
    /// D chain: prior of the embedding per path.
    bottom_mean: Vec<Vec<f64>>,
    bottom_l: Vec<DMatrix<f64>>,
    junction: usize,
    top: usize,
    schedule: Vec<usize>,
    widths: Vec<usize>,
}

/// `f(y^C | z_J, c) = N(y; a + A z_J, Ω)` for every head-C path `c`.
struct CrossHead {
    log_prior: Vec<f64>,
    a: Vec<DVector<f64>>,
    am: Vec<DMatrix<f64>>,
    pdf: Vec<GaussianLogPdf>,
}

struct Ctx<'a> {
    params: &'a ModelParams,
    obs: &'a Observed,
    opts: &'a EOptions,
    chains: Vec<ChainCtx>,
    cross: Option<CrossHead>,
    slots: Slots,
}

struct ObsStats {
    reg: Vec<Vec<RegStats>>,
    pi: Vec<Vec<f64>>,
    dev: Vec<Vec<Vec<DevStats>>>,
}

fn build_chain(params: &ModelParams, head: Head, opts: &EOptions) -> Result<ChainCtx> {
    let table = path_table(params, head)?;
    let chain = params.chain(head);
    let depth = chain.len();
    let junction = params.head_layers(head).len();
    let top = if params.mode == crate::gaussnet::Mode::M2 && head == Head::C {
        junction
    } else {
        depth
    };
    let schedule = match head {
        Head::C => opts.schedule_c.clone(),
        Head::D => opts.schedule_d.clone(),
    };
    if schedule.len() < top + 1 || schedule.iter().take(top + 1).any(|&m| m == 0) {
        return Err(Error::Input(format!(
            "the {head:?} chain needs {} positive schedule entries",
            top + 1
        )));
    }
    let mut widths = vec![chain[0].shape().0];
    widths.extend(chain.iter().map(|l| l.shape().1));
    let mut conds = Vec::with_capacity(table.len());
    let mut bottom_pdf = Vec::new();
    let mut bottom_mean = Vec::new();
    let mut bottom_l = Vec::new();
    for (s, path) in table.paths.iter().enumerate() {
        let m = &table.moments[s];
        conds.push(path_conditionals(&chain, path, m)?);
        let (mu0, sig0) = &m[0];
        match head {
            Head::C => bottom_pdf.push(GaussianLogPdf::new(
                mu0.clone(),
                sig0,
                "head_path_posteriors",
            )?),
            Head::D => {
                bottom_mean.push(mu0.as_slice().to_vec());
                bottom_l.push(cholesky_jitter(sig0, "draw_layer_latents")?.l());
            }
        }
    }
    Ok(ChainCtx {
        head,
        log_prior: table.priors.iter().map(|p| p.ln()).collect(),
        paths: table.paths,
        conds,
        bottom_pdf,
        bottom_mean,
        bottom_l,
        junction,
        top,
        schedule,
        widths,
    })
}

fn build_cross(params: &ModelParams) -> Result<CrossHead> {
    let chain = params.chain(Head::C);
    let head: Vec<_> = params.layers_c.iter().collect();
    let ks: Vec<usize> = head.iter().map(|l| l.k()).collect();
    let j = head.len();
    let mut out = CrossHead {
        log_prior: Vec::new(),
        a: Vec::new(),
        am: Vec::new(),
        pdf: Vec::new(),
    };
    for c in enumerate_combos(&ks) {
        out.log_prior.push(path_prior(&head, &c).ln());
        let (a, am, om) = affine_to_bottom(&chain, &c, j);
        let d = a.len();
        out.pdf.push(GaussianLogPdf::new(
            DVector::zeros(d),
            &om,
            "tail_posteriors",
        )?);
        out.a.push(a);
        out.am.push(am);
    }
    Ok(out)
}

impl<'a> Ctx<'a> {
    fn new(params: &'a ModelParams, obs: &'a Observed, opts: &'a EOptions) -> Result<Self> {
        let heads = params.mode.heads();
        let mut chains = Vec::new();
        for &h in heads {
            chains.push(build_chain(params, h, opts)?);
        }
        if params.mode.has_gllvm() && obs.n_links != params.gllvm.len() {
            return Err(Error::Input(
                "observed data does not match the GLLVM links".into(),
            ));
        }
        if heads.contains(&Head::C) && obs.p_c != chains[0].widths[0] {
            return Err(Error::Input(
                "continuous data width does not match the C head".into(),
            ));
        }
        let cross = if params.mode == crate::gaussnet::Mode::M2 {
            Some(build_cross(params)?)
        } else {
            None
        };
        Ok(Ctx {
            params,
            obs,
            opts,
            chains,
            cross,
            slots: Slots::of(params),
        })
    }

    fn empty_stats(&self) -> ObsStats {
        let p = self.params;
        let layers: Vec<_> = p
            .layers_c
            .iter()
            .chain(&p.layers_d)
            .chain(&p.layers_tail)
            .collect();
        let reg = layers
            .iter()
            .map(|l| {
                let (dx, du) = l.shape();
                vec![RegStats::new(dx, du); l.k()]
            })
            .collect();
        let pi = layers.iter().map(|l| vec![0.0; l.k()]).collect();
        let dev = if self.opts.dev_stats {
            self.chains
                .iter()
                .map(|c| {
                    c.paths
                        .iter()
                        .map(|_| {
                            (1..=c.top)
                                .map(|v| DevStats {
                                    w: 0.0,
                                    m: DMatrix::zeros(c.widths[v], c.widths[v]),
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        } else {
            Vec::new()
        };
        ObsStats { reg, pi, dev }
    }
}

/// Indices covering `1 − prune_mass` of the weight, in increasing order.
fn kept_indices(w: &[f64], prune_mass: f64) -> Vec<usize> {
    if prune_mass <= 0.0 {
        return (0..w.len()).collect();
    }
    let mut order: Vec<usize> = (0..w.len()).filter(|&m| w[m] > 0.0).collect();
    order.sort_by(|&a, &b| w[b].partial_cmp(&w[a]).unwrap().then(a.cmp(&b)));
    let mut cum = 0.0;
    let mut keep = Vec::new();
    for m in order {
        keep.push(m);
        cum += w[m];
        if cum >= 1.0 - prune_mass {
            break;
        }
    }
    keep.sort_unstable();
    keep
}

fn draw_path(
    ctx: &Ctx,
    ch: &ChainCtx,
    s: usize,
    i: usize,
    rng: &mut ChaCha8Rng,
    eps: &mut [f64],
) -> PathDraws {
    let mut levels = Vec::with_capacity(ch.top + 1);
    let log_lik;
    match ch.head {
        Head::C => {
            let y = ctx.obs.y_c_row(i);
            log_lik = ch.bottom_pdf[s].eval(y);
            levels.push(LevelDraws {
                dim: y.len(),
                z: y.to_vec(),
                w: vec![1.0],
                parent: Vec::new(),
            });
        }
        Head::D => {
            let r = ch.widths[0];
            let m0 = ch.schedule[0];
            let mean = &ch.bottom_mean[s];
            let l = &ch.bottom_l[s];
            let y = ctx.obs.y_g_row(i);
            let links: &[LinkParams] = &ctx.params.gllvm;
            let mut z = vec![0.0; m0 * r];
            let mut lw = vec![0.0; m0];
            for m in 0..m0 {
                fill_normal(rng, &mut eps[..r]);
                let out = &mut z[m * r..(m + 1) * r];
                for a in 0..r {
                    let mut v = mean[a];
                    for b in 0..=a {
                        v += l[(a, b)] * eps[b];
                    }
                    out[a] = v;
                }
                lw[m] = links
                    .iter()
                    .zip(y)
                    .map(|(p, &yj)| p.log_density_unchecked(yj, out))
                    .sum();
            }
            let lse = normalize_log_weights(&mut lw);
            log_lik = lse - (m0 as f64).ln();
            levels.push(LevelDraws {
                dim: r,
                z,
                w: lw,
                parent: Vec::new(),
            });
        }
    }
    for v in 0..ch.top {
        let below = &levels[v];
        let parents = if v == 0 {
            kept_indices(&below.w, ctx.opts.prune_mass)
        } else {
            (0..below.len()).collect()
        };
        let kept_mass: f64 = parents.iter().map(|&p| below.w[p]).sum();
        let d_up = ch.widths[v + 1];
        let c = ch.schedule[v + 1]
            .min(ctx.opts.max_draws_per_level / parents.len().max(1))
            .max(1);
        let cond = &ch.conds[s][v];
        let mut z = vec![0.0; parents.len() * c * d_up];
        let mut w = Vec::with_capacity(parents.len() * c);
        let mut parent = Vec::with_capacity(parents.len() * c);
        let mut k = 0;
        for &p in &parents {
            let zp = below.row(p);
            let wc = if kept_mass > 0.0 {
                below.w[p] / kept_mass / c as f64
            } else {
                0.0
            };
            for _ in 0..c {
                fill_normal(rng, &mut eps[..d_up]);
                cond.draw_into(zp, &eps[..d_up], &mut z[k * d_up..(k + 1) * d_up]);
                w.push(wc);
                parent.push(p as u32);
                k += 1;
            }
        }
        levels.push(LevelDraws {
            dim: d_up,
            z,
            w,
            parent,
        });
    }
    PathDraws { levels, log_lik }
}

/// Tail weights for levels `J..=top` of one path, from the junction weights.
fn tail_weights(
    pd: &PathDraws,
    junction: usize,
    top: usize,
    at_junction: Vec<f64>,
) -> Vec<Vec<f64>> {
    let mut tw = vec![at_junction];
    for v in junction..top {
        let below = &pd.levels[v];
        let up = &pd.levels[v + 1];
        let prev = &tw[v - junction];
        let next: Vec<f64> = (0..up.len())
            .map(|c| {
                let p = up.parent[c] as usize;
                let wp = below.w[p];
                if wp > 0.0 {
                    prev[p] * up.w[c] / wp
                } else {
                    0.0
                }
            })
            .collect();
        tw.push(next);
    }
    tw
}

fn obs_estep(ctx: &Ctx, i: usize) -> Result<(ObsEState, ObsStats)> {
    let opts = ctx.opts;
    let mut rng = observation_rng(opts.seed, opts.iteration, i as u64);
    let max_w = ctx
        .chains
        .iter()
        .flat_map(|c| c.widths.iter())
        .cloned()
        .max()
        .unwrap_or(1);
    let mut eps = vec![0.0; max_w];
    let mut draws: Vec<Vec<PathDraws>> = Vec::with_capacity(ctx.chains.len());
    let mut head_post = Vec::with_capacity(ctx.chains.len());
    let mut head_lse = Vec::with_capacity(ctx.chains.len());
    for ch in &ctx.chains {
        let pds: Vec<PathDraws> = (0..ch.paths.len())
            .map(|s| draw_path(ctx, ch, s, i, &mut rng, &mut eps))
            .collect();
        let mut lj: Vec<f64> = pds
            .iter()
            .zip(&ch.log_prior)
            .map(|(pd, lp)| lp + pd.log_lik)
            .collect();
        let lse = normalize_log_weights(&mut lj);
        head_post.push(lj);
        head_lse.push(lse);
        draws.push(pds);
    }
    let t_idx = ctx.chains.len() - 1;
    let tch = &ctx.chains[t_idx];
    let n_tail = ctx.params.layers_tail.len();
    let mut tail_post: Vec<Vec<f64>> = ctx
        .params
        .layers_tail
        .iter()
        .map(|l| vec![0.0; l.k()])
        .collect();
    let loglik;
    let mut junction_w: Vec<Vec<f64>> = Vec::with_capacity(tch.paths.len());
    let mut path_mass = vec![0.0; tch.paths.len()];
    if let Some(cross) = &ctx.cross {
        // joint over head-C paths c and D-chain paths (d, t)
        let y = ctx.obs.y_c_row(i);
        let jd = tch.junction;
        let n_c = cross.log_prior.len();
        let n_s = tch.paths.len();
        let mut logf: Vec<Vec<f64>> = Vec::with_capacity(n_c * n_s);
        let mut joint = vec![0.0; n_c * n_s];
        let mut resid = vec![0.0; y.len()];
        for c in 0..n_c {
            let b: Vec<f64> = y
                .iter()
                .zip(cross.a[c].iter())
                .map(|(a, b)| a - b)
                .collect();
            let am = &cross.am[c];
            for s in 0..n_s {
                let lev = &draws[t_idx][s].levels[jd];
                let mut lf = Vec::with_capacity(lev.len());
                for m in 0..lev.len() {
                    let z = lev.row(m);
                    for (a, ra) in resid.iter_mut().enumerate() {
                        let mut v = b[a];
                        for (bb, zb) in z.iter().enumerate() {
                            v -= am[(a, bb)] * zb;
                        }
                        *ra = v;
                    }
                    let wm = lev.w[m];
                    lf.push(if wm > 0.0 {
                        wm.ln() + cross.pdf[c].eval(&resid)
                    } else {
                        f64::NEG_INFINITY
                    });
                }
                let l = logsumexp(&lf);
                joint[c * n_s + s] =
                    cross.log_prior[c] + tch.log_prior[s] + draws[t_idx][s].log_lik + l;
                for v in lf.iter_mut() {
                    *v -= l;
                }
                logf.push(lf);
            }
        }
        let lse = normalize_log_weights(&mut joint);
        loglik = lse;
        for s in 0..n_s {
            let n_m = draws[t_idx][s].levels[jd].len();
            let mut om = vec![0.0; n_m];
            for c in 0..n_c {
                let p = joint[c * n_s + s];
                path_mass[s] += p;
                if p > 0.0 {
                    for (o, lr) in om.iter_mut().zip(&logf[c * n_s + s]) {
                        *o += p * lr.exp();
                    }
                }
            }
            junction_w.push(om);
        }
    } else {
        loglik = head_lse[t_idx];
        for s in 0..tch.paths.len() {
            let g = head_post[t_idx][s];
            path_mass[s] = g;
            junction_w.push(
                draws[t_idx][s].levels[tch.junction]
                    .w
                    .iter()
                    .map(|w| g * w)
                    .collect(),
            );
        }
    }
    if !loglik.is_finite() {
        return Err(Error::numerical(
            "tail_posteriors",
            format!("observation {i} has zero likelihood under every path"),
        ));
    }
    for s in 0..tch.paths.len() {
        for (q, tp) in tail_post.iter_mut().enumerate() {
            tp[tch.paths[s][tch.junction + q]] += path_mass[s];
        }
    }
    // tail weights on the tail chain, embeddings
    let tws: Vec<Vec<Vec<f64>>> = (0..tch.paths.len())
        .map(|s| {
            tail_weights(
                &draws[t_idx][s],
                tch.junction,
                tch.top,
                std::mem::take(&mut junction_w[s]),
            )
        })
        .collect();
    let mut embedding = Vec::with_capacity(n_tail);
    for q in 0..n_tail {
        let v = tch.junction + q;
        let d = tch.widths[v];
        let mut e = vec![0.0; d];
        let mut tot = 0.0;
        for s in 0..tch.paths.len() {
            let lev = &draws[t_idx][s].levels[v];
            for (m, &w) in tws[s][q].iter().enumerate() {
                if w > 0.0 {
                    tot += w;
                    for (a, za) in lev.row(m).iter().enumerate() {
                        e[a] += w * za;
                    }
                }
            }
        }
        if tot > 0.0 {
            e.iter_mut().for_each(|x| *x /= tot);
        }
        embedding.push(e);
    }
    // statistics
    let mut st = ctx.empty_stats();
    for (ci, ch) in ctx.chains.iter().enumerate() {
        for (s, path) in ch.paths.iter().enumerate() {
            let g = head_post[ci][s];
            let pd = &draws[ci][s];
            for v in 0..ch.top {
                let slot = ctx.slots.chain(ch.head, v);
                let k = path[v];
                let below = &pd.levels[v];
                let up = &pd.levels[v + 1];
                let in_tail = v >= ch.junction;
                if !in_tail {
                    st.pi[slot][k] += g;
                }
                let cond = &ch.conds[s][v];
                for c in 0..up.len() {
                    let w = if in_tail {
                        tws[s][v + 1 - ch.junction][c]
                    } else {
                        g * up.w[c]
                    };
                    if w <= 0.0 {
                        continue;
                    }
                    let p = up.parent[c] as usize;
                    let zu = up.row(c);
                    let zx = below.row(p);
                    st.reg[slot][k].add(zx, zu, w);
                    if opts.dev_stats {
                        let rho = cond.mean(zx);
                        let dv = DVector::from_iterator(
                            zu.len(),
                            zu.iter().zip(rho.iter()).map(|(a, b)| a - b),
                        );
                        let ds = &mut st.dev[ci][s][v];
                        ds.w += w;
                        ds.m += &dv * dv.transpose() * w;
                    }
                }
            }
        }
    }
    for (q, tp) in tail_post.iter().enumerate() {
        let slot = ctx.slots.tail(q);
        for (k, p) in tp.iter().enumerate() {
            st.pi[slot][k] += p;
        }
    }
    // GLLVM particles and per-path embedding means
    let mut gllvm_z = Vec::new();
    let mut gllvm_w = Vec::new();
    let mut d_path_means = Vec::new();
    if ctx.params.mode.has_gllvm() {
        let dch = &ctx.chains[t_idx];
        let r = dch.widths[0];
        let mut pool_w = Vec::new();
        let mut pool_ref = Vec::new();
        for s in 0..dch.paths.len() {
            let lev = &draws[t_idx][s].levels[0];
            let g = head_post[t_idx][s];
            let mut mean = vec![0.0; r];
            for m in 0..lev.len() {
                let w = lev.w[m];
                for (a, za) in lev.row(m).iter().enumerate() {
                    mean[a] += w * za;
                }
                if g * w > 0.0 {
                    pool_w.push(g * w);
                    pool_ref.push((s, m));
                }
            }
            d_path_means.extend(mean);
        }
        let keep = kept_indices(&pool_w, opts.prune_mass);
        let tot: f64 = keep.iter().map(|&k| pool_w[k]).sum();
        for k in keep {
            let (s, m) = pool_ref[k];
            gllvm_z.extend_from_slice(draws[t_idx][s].levels[0].row(m));
            gllvm_w.push(pool_w[k] / tot);
        }
    }
    let state = ObsEState {
        head_post,
        tail_post,
        embedding,
        loglik,
        gllvm_z,
        gllvm_w,
        d_path_means,
        draws: if opts.keep_draws { Some(draws) } else { None },
    };
    Ok((state, st))
}

/// Run the E step for every observation. Observations are processed in
/// parallel; statistics are reduced in index order, so the result does not
/// depend on the number of threads.
pub fn e_step(params: &ModelParams, obs: &Observed, opts: &EOptions) -> Result<EState> {
    let ctx = Ctx::new(params, obs, opts)?;
    let results: Vec<(ObsEState, ObsStats)> = (0..obs.n)
        .into_par_iter()
        .map(|i| obs_estep(&ctx, i))
        .collect::<Result<Vec<_>>>()?;
    let mut stats = ctx.empty_stats();
    let mut states = Vec::with_capacity(obs.n);
    for (o, st) in results {
        for (a, b) in stats.reg.iter_mut().zip(&st.reg) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
        for (a, b) in stats.pi.iter_mut().zip(&st.pi) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in stats.dev.iter_mut().zip(&st.dev) {
            for (pa, pb) in a.iter_mut().zip(b) {
                for (x, y) in pa.iter_mut().zip(pb) {
                    x.w += y.w;
                    x.m += &y.m;
                }
            }
        }
        states.push(o);
    }
    Ok(EState {
        n: obs.n,
        obs: states,
        stats: SuffStats {
            reg: stats.reg,
            pi: stats.pi,
            dev: stats.dev,
        },
        paths: ctx.chains.iter().map(|c| c.paths.clone()).collect(),
        heads: ctx.chains.iter().map(|c| c.head).collect(),
        warnings: Vec::new(),
    })
}

/// Draws of every chain for every observation: `[observation][chain][path]`.
pub fn draw_layer_latents(
    params: &ModelParams,
    obs: &Observed,
    opts: &EOptions,
) -> Result<Vec<Vec<Vec<PathDraws>>>> {
    let mut o = opts.clone();
    o.keep_draws = true;
    let es = e_step(params, obs, &o)?;
    Ok(es
        .obs
        .into_iter()
        .map(|s| s.draws.unwrap_or_default())
        .collect())
}
