//! Monte-Carlo EM orchestration: draw schedule, stopping, architecture
//! selection passes and choice of the reported iteration.

use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::MixedDataset;
use crate::error::{Error, Result};
use crate::gaussnet::{diagonalize_loadings, rescale_layers, Architecture, Head, ModelParams};
use crate::mcem::{e_step, m_step, EOptions, EState, MStepOptions, Observed};
use crate::metrics::{gower_matrix, silhouette, DistanceMatrix};
use crate::nsep::{nsep_init, InitReport};
use crate::selection::{apply_architecture_update, decide, SelectionPolicy};

/// Draws per parent at iteration `t` for a latent of width `r`:
/// `⌊40 / ln n · t · √r⌋`, at least 1.
pub fn mc_schedule(n: usize, t: usize, r: usize) -> usize {
    let n = n.max(2) as f64;
    let m = (40.0 / n.ln() * t as f64 * (r as f64).sqrt()).floor();
    (m as usize).max(1)
}

fn default_max_iter() -> usize {
    30
}
fn default_patience() -> usize {
    1
}
fn default_selection_iters() -> Vec<usize> {
    vec![3]
}
fn default_draw_cap() -> usize {
    2000
}
fn default_prune_mass() -> f64 {
    1e-3
}
fn default_inner() -> usize {
    MStepOptions::default().gllvm_max_inner
}

/// Training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub architecture: Architecture,
    #[serde(default)]
    pub seed: u64,
    /// Total number of iterations over all restarts.
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Non-improving iterations tolerated before stopping; 0 never stops early.
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Iterations (1-based) that end with a selection pass.
    #[serde(default = "default_selection_iters")]
    pub selection_iters: Vec<usize>,
    /// Let component pruning change the clustering layer.
    #[serde(default)]
    pub autoclus: bool,
    /// Keep every tail layer's components.
    #[serde(default)]
    pub multi_clustering: bool,
    /// Tail layer whose components are the clusters.
    #[serde(default)]
    pub clustering_layer: usize,
    /// Particles spawned per level and path for one observation.
    #[serde(default = "default_draw_cap")]
    pub max_draws_per_level: usize,
    /// Importance mass left out of the deeper draws and the GLLVM update.
    #[serde(default = "default_prune_mass")]
    pub prune_mass: f64,
    /// Quasi-Newton iterations per link and M step.
    #[serde(default = "default_inner")]
    pub gllvm_max_inner: usize,
}

impl FitConfig {
    pub fn new(architecture: Architecture) -> Self {
        FitConfig {
            architecture,
            seed: 0,
            max_iter: default_max_iter(),
            patience: default_patience(),
            selection_iters: default_selection_iters(),
            autoclus: false,
            multi_clustering: false,
            clustering_layer: 0,
            max_draws_per_level: default_draw_cap(),
            prune_mass: default_prune_mass(),
            gllvm_max_inner: default_inner(),
        }
    }

    pub fn validate(&self, ds: &MixedDataset) -> Result<()> {
        self.architecture.validate(ds.p_c(), ds.p_d())?;
        if self.max_iter == 0 {
            return Err(Error::Input("max_iter must be positive".into()));
        }
        if let Some(&s) = self.selection_iters.iter().find(|&&s| s >= self.max_iter) {
            return Err(Error::Input(format!(
                "selection iteration {s} is not below max_iter {}",
                self.max_iter
            )));
        }
        if self.clustering_layer >= self.architecture.tail.len() {
            return Err(Error::Input(format!(
                "clustering layer {} outside a tail of {} layers",
                self.clustering_layer,
                self.architecture.tail.len()
            )));
        }
        if !(0.0..1.0).contains(&self.prune_mass) {
            return Err(Error::Input("prune_mass must lie in [0, 1)".into()));
        }
        if self.max_draws_per_level == 0 {
            return Err(Error::Input("max_draws_per_level must be positive".into()));
        }
        if ds.n < 2 {
            return Err(Error::Input("at least two observations are needed".into()));
        }
        Ok(())
    }
}

/// One executed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based over the whole run.
    pub iteration: usize,
    /// Index of the architecture segment (0 before any restart).
    pub segment: usize,
    /// Estimated observed log-likelihood of the parameters entering the iteration.
    pub loglik: f64,
    /// Silhouette of the hard labels; `None` with a single occupied cluster.
    pub silhouette: Option<f64>,
    /// Draws per parent at a width-1 latent; wider latents get `√r` times more.
    pub mc_draws: usize,
    pub n_clusters: usize,
    pub seconds: f64,
}

/// Outcome of training.
#[derive(Debug, Clone)]
pub struct FitResult {
    /// Parameters of the selected iteration, with diagonalized loadings.
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
    pub labels: Vec<usize>,
    /// Posterior-mean latent generated by each tail layer, `n × width`.
    pub embeddings: Vec<DMatrix<f64>>,
    /// Posterior component probabilities of each tail layer: `[layer][i][k]`.
    pub posteriors: Vec<Vec<Vec<f64>>>,
    pub selected_iteration: usize,
    pub architecture_final: Architecture,
    pub clustering_layer: usize,
    pub init_report: InitReport,
    pub warnings: Vec<String>,
}

/// Argmax of each row, ties to the lowest index.
pub fn assign_clusters(posteriors: &[Vec<f64>]) -> Vec<usize> {
    posteriors
        .iter()
        .map(|p| {
            let mut best = 0;
            for k in 1..p.len() {
                if p[k] > p[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Posterior-mean embedding of tail layer `layer`.
pub fn latent_embedding(result: &FitResult, layer: usize) -> Result<&DMatrix<f64>> {
    result
        .embeddings
        .get(layer)
        .ok_or_else(|| Error::Input(format!("no tail layer {layer}")))
}

struct Snapshot {
    iteration: usize,
    silhouette: Option<f64>,
    loglik: f64,
    params: ModelParams,
    posteriors: Vec<Vec<Vec<f64>>>,
    embeddings: Vec<DMatrix<f64>>,
}

impl Snapshot {
    fn take(
        iteration: usize,
        sil: Option<f64>,
        loglik: f64,
        params: &ModelParams,
        es: &EState,
    ) -> Snapshot {
        let n_tail = params.layers_tail.len();
        let posteriors = (0..n_tail)
            .map(|q| es.obs.iter().map(|o| o.tail_post[q].clone()).collect())
            .collect();
        let embeddings = (0..n_tail)
            .map(|q| {
                let w = es.obs.first().map_or(0, |o| o.embedding[q].len());
                DMatrix::from_fn(es.n, w, |i, a| es.obs[i].embedding[q][a])
            })
            .collect();
        Snapshot {
            iteration,
            silhouette: sil,
            loglik,
            params: params.clone(),
            posteriors,
            embeddings,
        }
    }

    /// Best silhouette wins; iterations without one rank below, by log-likelihood.
    fn beats(&self, other: &Snapshot) -> bool {
        match (self.silhouette, other.silhouette) {
            (Some(a), Some(b)) => a > b,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => self.loglik > other.loglik,
        }
    }
}

fn e_options(
    params: &ModelParams,
    cfg: &FitConfig,
    n: usize,
    p_c: usize,
    t: usize,
    iteration: usize,
) -> EOptions {
    let arch = params.architecture();
    let sched = |h: Head| -> Vec<usize> {
        if params.mode.heads().contains(&h) {
            arch.chain_widths(h, p_c)
                .iter()
                .map(|&r| mc_schedule(n, t, r))
                .collect()
        } else {
            vec![1; arch.chain(h).len() + 1]
        }
    };
    EOptions {
        seed: cfg.seed,
        iteration: iteration as u64,
        schedule_c: sched(Head::C),
        schedule_d: sched(Head::D),
        max_draws_per_level: cfg.max_draws_per_level,
        prune_mass: cfg.prune_mass,
        keep_draws: false,
        dev_stats: false,
    }
}

/// Train a model: initialize, iterate MCEM with patience stopping and
/// selection passes, and report the iteration of best silhouette within the
/// final architecture.
pub fn fit(ds: &MixedDataset, config: &FitConfig) -> Result<FitResult> {
    config.validate(ds)?;
    let (gower, _) = gower_matrix(ds)?;
    let mut arch = config.architecture.clone();
    let mut warnings = Vec::new();
    let mut trace = Vec::new();
    let mut segment = 0;
    let mut iteration = 0;
    let policy = SelectionPolicy {
        autoclus: config.autoclus,
        multi_clustering: config.multi_clustering,
        clustering_layer: config.clustering_layer,
    };
    let mopts = MStepOptions {
        gllvm_max_inner: config.gllvm_max_inner,
    };
    'segments: loop {
        let (mut params, init_report) = nsep_init(ds, &arch, config.seed)?;
        warnings.extend(init_report.warnings.iter().cloned());
        let obs = Observed::new(ds, &params)?;
        let mut best: Option<Snapshot> = None;
        let mut best_ll = f64::NEG_INFINITY;
        let mut stall = 0;
        let mut t = 0;
        while iteration < config.max_iter {
            iteration += 1;
            t += 1;
            let start = Instant::now();
            let selecting = config.selection_iters.contains(&iteration);
            let mut opts = e_options(&params, config, ds.n, ds.p_c(), t, iteration);
            opts.dev_stats = selecting;
            let es = e_step(&params, &obs, &opts).map_err(|e| e.at_iteration(iteration))?;
            let ll = es.loglik();
            let layer = config.clustering_layer.min(params.layers_tail.len() - 1);
            let post: Vec<Vec<f64>> = es.obs.iter().map(|o| o.tail_post[layer].clone()).collect();
            let labels = assign_clusters(&post);
            let mut occupied = labels.clone();
            occupied.sort_unstable();
            occupied.dedup();
            let sil = silhouette(&labels, &gower);
            let snap = Snapshot::take(iteration, sil, ll, &params, &es);
            if best.as_ref().is_none_or(|b| snap.beats(b)) {
                best = Some(snap);
            }
            let improved = ll > best_ll;
            if improved {
                best_ll = ll;
                stall = 0;
            } else {
                stall += 1;
            }
            if selecting {
                let decision = decide(&params, &obs, &es, &policy);
                let update = apply_architecture_update(&arch, &params, &decision)?;
                if update.changed {
                    match update.architecture.validate(ds.p_c(), ds.p_d()) {
                        Ok(()) if config.clustering_layer < update.architecture.tail.len() => {
                            trace.push(row(
                                iteration,
                                segment,
                                ll,
                                sil,
                                mc_schedule(ds.n, t, 1),
                                occupied.len(),
                                start,
                            ));
                            warnings.push(format!(
                                "iteration {iteration}: architecture changed, refitting from initialization"
                            ));
                            arch = update.architecture;
                            segment += 1;
                            continue 'segments;
                        }
                        Ok(()) => warnings.push(format!(
                            "iteration {iteration}: selection removed the clustering layer, ignored"
                        )),
                        Err(e) => {
                            warnings.push(format!("iteration {iteration}: selection ignored: {e}"))
                        }
                    }
                }
            }
            trace.push(row(
                iteration,
                segment,
                ll,
                sil,
                mc_schedule(ds.n, t, 1),
                occupied.len(),
                start,
            ));
            if config.patience > 0 && stall >= config.patience {
                break;
            }
            if iteration == config.max_iter {
                break;
            }
            let (next, w) =
                m_step(&params, &es, &obs, &mopts).map_err(|e| e.at_iteration(iteration))?;
            warnings.extend(w.into_iter().map(|m| format!("iteration {iteration}: {m}")));
            params = rescale_layers(&next).map_err(|e| e.at_iteration(iteration))?;
        }
        let best = best.ok_or_else(|| Error::numerical("fit", "no iteration was executed"))?;
        let params = diagonalize_loadings(&best.params)?;
        let labels = assign_clusters(&best.posteriors[config.clustering_layer]);
        return Ok(FitResult {
            architecture_final: params.architecture(),
            params,
            trace,
            labels,
            embeddings: best.embeddings,
            posteriors: best.posteriors,
            selected_iteration: best.iteration,
            clustering_layer: config.clustering_layer,
            init_report,
            warnings,
        });
    }
}

fn row(
    iteration: usize,
    segment: usize,
    loglik: f64,
    sil: Option<f64>,
    mc_draws: usize,
    k: usize,
    start: Instant,
) -> TraceRow {
    TraceRow {
        iteration,
        segment,
        loglik,
        silhouette: sil,
        mc_draws,
        n_clusters: k,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Silhouette of arbitrary labels on Gower distances of `ds`.
pub fn gower_silhouette(ds: &MixedDataset, labels: &[usize]) -> Result<Option<f64>> {
    let (d, _): (DistanceMatrix, _) = gower_matrix(ds)?;
    Ok(silhouette(labels, &d))
}
