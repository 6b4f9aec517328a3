//! One Monte-Carlo EM iteration: latent draws, importance weights, head and
//! tail posteriors, closed-form DGMM updates, the numerical GLLVM update and
//! path-probability updates.
//!
//! Conventions. A head chain has levels `0..=L`: level 0 is the bottom
//! variable (continuous data for the C head, the GLLVM embedding for the D
//! head) and chain layer `v` generates level `v` from level `v + 1`. The
//! junction level `J` is the number of head layers; tail layer `q` generates
//! level `J + q`.

mod estep;
mod mstep;

use nalgebra::DMatrix;

use crate::data::MixedDataset;
use crate::error::{Error, Result};
use crate::gaussnet::{Head, ModelParams};

pub use estep::{draw_layer_latents, e_step};
pub use mstep::{
    m_step, optimize_gllvm, regression_update, update_dgmm_layer, update_path_probs, MStepOptions,
};

/// Observations arranged for the E step.
#[derive(Debug, Clone)]
pub struct Observed {
    pub n: usize,
    pub p_c: usize,
    /// Continuous block, row-major `n × p_c`.
    pub y_c: Vec<f64>,
    pub n_links: usize,
    /// GLLVM observations in link order, row-major `n × n_links`.
    pub y_g: Vec<f64>,
}

impl Observed {
    /// Arrange `ds` for the links of `params`.
    pub fn new(ds: &MixedDataset, params: &ModelParams) -> Result<Observed> {
        let n = ds.n;
        let p_c = ds.p_c();
        let mut y_c = Vec::with_capacity(n * p_c);
        for i in 0..n {
            for j in 0..p_c {
                y_c.push(ds.y_c[(i, j)]);
            }
        }
        let n_links = params.gllvm.len();
        let mut cols = Vec::with_capacity(n_links);
        for link in &params.gllvm {
            let col = link.variable_index;
            if let Some(pos) = ds.continuous_cols.iter().position(|&c| c == col) {
                cols.push((true, pos));
            } else if let Some(pos) = ds.discrete_cols.iter().position(|&c| c == col) {
                cols.push((false, pos));
            } else {
                return Err(Error::Params(format!(
                    "link refers to unknown column {col}"
                )));
            }
        }
        let mut y_g = Vec::with_capacity(n * n_links);
        for i in 0..n {
            for &(cont, pos) in &cols {
                y_g.push(if cont {
                    ds.y_c[(i, pos)]
                } else {
                    ds.y_d[(i, pos)] as f64
                });
            }
        }
        Ok(Observed {
            n,
            p_c,
            y_c,
            n_links,
            y_g,
        })
    }

    /// Build directly from arrays (tests and tools).
    pub fn from_parts(
        n: usize,
        p_c: usize,
        y_c: Vec<f64>,
        n_links: usize,
        y_g: Vec<f64>,
    ) -> Observed {
        Observed {
            n,
            p_c,
            y_c,
            n_links,
            y_g,
        }
    }

    pub fn y_c_row(&self, i: usize) -> &[f64] {
        &self.y_c[i * self.p_c..(i + 1) * self.p_c]
    }

    pub fn y_g_row(&self, i: usize) -> &[f64] {
        &self.y_g[i * self.n_links..(i + 1) * self.n_links]
    }
}

/// E-step settings.
#[derive(Debug, Clone)]
pub struct EOptions {
    pub seed: u64,
    pub iteration: u64,
    /// Draws per parent at each level of the C chain (entry 0 unused).
    pub schedule_c: Vec<usize>,
    /// Draws per parent at each level of the D chain (entry 0: prior draws of
    /// the embedding).
    pub schedule_d: Vec<usize>,
    /// Upper bound on the particles spawned per level; every parent keeps at
    /// least one child.
    pub max_draws_per_level: usize,
    /// Particles beyond this fraction of the importance mass spawn no children
    /// and are left out of the GLLVM update.
    pub prune_mass: f64,
    /// Keep every draw in the returned state.
    pub keep_draws: bool,
    /// Accumulate within-parent deviation moments for dimension selection.
    pub dev_stats: bool,
}

impl EOptions {
    /// Same number of draws per parent at every level.
    pub fn uniform(params: &ModelParams, m: usize, seed: u64, iteration: u64) -> EOptions {
        let depth = |h: Head| params.chain(h).len() + 1;
        EOptions {
            seed,
            iteration,
            schedule_c: vec![m; depth(Head::C)],
            schedule_d: vec![m; depth(Head::D)],
            max_draws_per_level: usize::MAX,
            prune_mass: 0.0,
            keep_draws: false,
            dev_stats: false,
        }
    }
}

/// Draws of one level along one path.
#[derive(Debug, Clone, Default)]
pub struct LevelDraws {
    pub dim: usize,
    /// Particles, row-major.
    pub z: Vec<f64>,
    /// Importance weights, summing to 1 over the level.
    pub w: Vec<f64>,
    /// Index of each particle's parent in the level below.
    pub parent: Vec<u32>,
}

impl LevelDraws {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.z[m * self.dim..(m + 1) * self.dim]
    }
}

/// All draws of one path for one observation.
#[derive(Debug, Clone, Default)]
pub struct PathDraws {
    pub levels: Vec<LevelDraws>,
    /// `log f̂(y^h | s)`: exact for the C head, Monte-Carlo for the D head.
    pub log_lik: f64,
}

/// Per-observation E-step output.
#[derive(Debug, Clone, Default)]
pub struct ObsEState {
    /// Posterior over the full paths of each chain given that head's data,
    /// chains in the order of `Mode::heads`.
    pub head_post: Vec<Vec<f64>>,
    /// Posterior component probabilities of each tail layer given all data.
    pub tail_post: Vec<Vec<f64>>,
    /// Posterior mean of the latent generated by each tail layer.
    pub embedding: Vec<Vec<f64>>,
    /// Estimated `log f(y_i)`.
    pub loglik: f64,
    /// Pooled embedding particles for the GLLVM update (row-major).
    pub gllvm_z: Vec<f64>,
    /// Their weights, summing to 1.
    pub gllvm_w: Vec<f64>,
    /// Posterior mean of the embedding per D-chain path, row-major.
    pub d_path_means: Vec<f64>,
    /// Every draw, when requested: `[chain][path]`.
    pub draws: Option<Vec<Vec<PathDraws>>>,
}

/// Weighted moments `Σ w v vᵀ` of `v = (1, x, u)` for a regression of `x` on `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegStats {
    pub dx: usize,
    pub du: usize,
    /// Upper triangle is authoritative; `(1+dx+du)²` entries row-major.
    pub m: Vec<f64>,
}

impl RegStats {
    pub fn new(dx: usize, du: usize) -> Self {
        let d = 1 + dx + du;
        RegStats {
            dx,
            du,
            m: vec![0.0; d * d],
        }
    }

    pub fn weight(&self) -> f64 {
        self.m[0]
    }

    #[inline]
    pub fn add(&mut self, x: &[f64], u: &[f64], w: f64) {
        if w == 0.0 {
            return;
        }
        let d = 1 + self.dx + self.du;
        let val = |k: usize| -> f64 {
            if k == 0 {
                1.0
            } else if k <= self.dx {
                x[k - 1]
            } else {
                u[k - 1 - self.dx]
            }
        };
        let mut v = [0.0f64; 64];
        let mut heap;
        let vv: &mut [f64] = if d <= 64 {
            &mut v[..d]
        } else {
            heap = vec![0.0; d];
            &mut heap[..]
        };
        for (k, slot) in vv.iter_mut().enumerate() {
            *slot = val(k);
        }
        for a in 0..d {
            let wa = w * vv[a];
            let row = &mut self.m[a * d..(a + 1) * d];
            for b in a..d {
                row[b] += wa * vv[b];
            }
        }
    }

    pub fn merge(&mut self, other: &RegStats) {
        for (a, b) in self.m.iter_mut().zip(&other.m) {
            *a += b;
        }
    }

    /// Full symmetric moment matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = 1 + self.dx + self.du;
        DMatrix::from_fn(d, d, |a, b| {
            if a <= b {
                self.m[a * d + b]
            } else {
                self.m[b * d + a]
            }
        })
    }
}

/// Within-parent deviation moments of one path level: `Σ w`, `Σ w δ δᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DevStats {
    pub w: f64,
    pub m: DMatrix<f64>,
}

/// Sufficient statistics reduced over observations in index order.
#[derive(Debug, Clone)]
pub struct SuffStats {
    /// `[slot][component]`; slots are head C layers, head D layers, then tail.
    pub reg: Vec<Vec<RegStats>>,
    /// `Σ_i f(s^(slot) = k | y_i)`.
    pub pi: Vec<Vec<f64>>,
    /// `[chain][path][level − 1]` deviation moments (when requested).
    pub dev: Vec<Vec<Vec<DevStats>>>,
}

/// The state of one E step.
#[derive(Debug, Clone)]
pub struct EState {
    pub n: usize,
    pub obs: Vec<ObsEState>,
    pub stats: SuffStats,
    /// Full paths of each chain (order of `Mode::heads`).
    pub paths: Vec<Vec<Vec<usize>>>,
    pub heads: Vec<Head>,
    pub warnings: Vec<String>,
}

impl EState {
    /// `Σ_i log f̂(y_i)`.
    pub fn loglik(&self) -> f64 {
        observed_loglik_estimate(self)
    }

    /// Posterior path probabilities of a head.
    pub fn head_path_posteriors(&self, head: Head) -> Option<Vec<&[f64]>> {
        let c = self.heads.iter().position(|&h| h == head)?;
        Some(self.obs.iter().map(|o| o.head_post[c].as_slice()).collect())
    }

    /// Posterior component probabilities of tail layer `q`.
    pub fn tail_posteriors(&self, q: usize) -> Option<Vec<&[f64]>> {
        self.obs
            .iter()
            .map(|o| o.tail_post.get(q).map(|v| v.as_slice()))
            .collect()
    }
}

/// Slot layout of the layer statistics.
#[derive(Debug, Clone, Copy)]
pub struct Slots {
    pub n_c: usize,
    pub n_d: usize,
    pub n_tail: usize,
}

impl Slots {
    pub fn of(params: &ModelParams) -> Slots {
        Slots {
            n_c: params.layers_c.len(),
            n_d: params.layers_d.len(),
            n_tail: params.layers_tail.len(),
        }
    }

    pub fn total(&self) -> usize {
        self.n_c + self.n_d + self.n_tail
    }

    pub fn head(&self, head: Head, v: usize) -> usize {
        match head {
            Head::C => v,
            Head::D => self.n_c + v,
        }
    }

    pub fn tail(&self, q: usize) -> usize {
        self.n_c + self.n_d + q
    }

    /// Slot of chain layer `v` of `head`.
    pub fn chain(&self, head: Head, v: usize) -> usize {
        let j = match head {
            Head::C => self.n_c,
            Head::D => self.n_d,
        };
        if v < j {
            self.head(head, v)
        } else {
            self.tail(v - j)
        }
    }
}

/// `Σ_i log f̂(y_i)` from an E state.
pub fn observed_loglik_estimate(estate: &EState) -> f64 {
    estate.obs.iter().map(|o| o.loglik).sum()
}
