use std::path::PathBuf;

use mixclus_core::{Architecture, FitConfig, Mode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Architecture as written in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchitectureSpec {
    /// Single-head shorthand, see [`Architecture::from_rk`].
    Shorthand { r: Vec<usize>, k: Vec<usize> },
    /// Per-head lists for m2, see [`Architecture::from_m2_lists`].
    M2Lists {
        r_c: Vec<usize>,
        r_d: Vec<usize>,
        r_t: Vec<usize>,
        k_c: Vec<usize>,
        k_d: Vec<usize>,
        k_t: Vec<usize>,
    },
    /// Explicit layer lists.
    Full(Architecture),
}

impl ArchitectureSpec {
    pub fn resolve(&self, mode: Mode) -> Result<Architecture, CliError> {
        let arch = match self {
            ArchitectureSpec::Shorthand { r, k } => Architecture::from_rk(mode, r, k)?,
            ArchitectureSpec::M2Lists {
                r_c,
                r_d,
                r_t,
                k_c,
                k_d,
                k_t,
            } => {
                if mode != Mode::M2 {
                    return Err(CliError::Config(
                        "per-head architecture lists need mode m2".into(),
                    ));
                }
                Architecture::from_m2_lists(r_c, r_d, r_t, k_c, k_d, k_t)?
            }
            ArchitectureSpec::Full(a) => Architecture { mode, ..a.clone() },
        };
        Ok(arch)
    }

    fn mode(&self) -> Option<Mode> {
        match self {
            ArchitectureSpec::Full(a) => Some(a.mode),
            ArchitectureSpec::M2Lists { .. } => Some(Mode::M2),
            ArchitectureSpec::Shorthand { .. } => None,
        }
    }
}

/// Contents of the JSON file given to `--config`. Every field is optional;
/// command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub mode: Option<String>,
    pub architecture: Option<ArchitectureSpec>,
    pub seed: Option<u64>,
    pub max_iter: Option<usize>,
    pub patience: Option<usize>,
    pub selection_iters: Option<Vec<usize>>,
    pub autoclus: Option<bool>,
    pub multi_clustering: Option<bool>,
    pub clustering_layer: Option<usize>,
    pub max_draws_per_level: Option<usize>,
    pub prune_mass: Option<f64>,
    pub gllvm_max_inner: Option<usize>,
    pub threads: Option<usize>,
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    /// Fields set in `over` replace those of `self`.
    pub fn overridden_by(self, over: RunConfig) -> RunConfig {
        RunConfig {
            data: over.data.or(self.data),
            schema: over.schema.or(self.schema),
            mode: over.mode.or(self.mode),
            architecture: over.architecture.or(self.architecture),
            seed: over.seed.or(self.seed),
            max_iter: over.max_iter.or(self.max_iter),
            patience: over.patience.or(self.patience),
            selection_iters: over.selection_iters.or(self.selection_iters),
            autoclus: over.autoclus.or(self.autoclus),
            multi_clustering: over.multi_clustering.or(self.multi_clustering),
            clustering_layer: over.clustering_layer.or(self.clustering_layer),
            max_draws_per_level: over.max_draws_per_level.or(self.max_draws_per_level),
            prune_mass: over.prune_mass.or(self.prune_mass),
            gllvm_max_inner: over.gllvm_max_inner.or(self.gllvm_max_inner),
            threads: over.threads.or(self.threads),
            labels: over.labels.or(self.labels),
            out: over.out.or(self.out),
        }
    }

    pub fn mode(&self) -> Result<Mode, CliError> {
        match (
            &self.mode,
            self.architecture.as_ref().and_then(|a| a.mode()),
        ) {
            (Some(m), _) => Ok(Mode::parse(m)?),
            (None, Some(m)) => Ok(m),
            (None, None) => Err(CliError::Config("no mode given".into())),
        }
    }

    /// Trainer configuration with library defaults for unset fields.
    pub fn fit_config(&self) -> Result<FitConfig, CliError> {
        let spec = self
            .architecture
            .as_ref()
            .ok_or_else(|| CliError::Config("no architecture given".into()))?;
        let mut fc = FitConfig::new(spec.resolve(self.mode()?)?);
        if let Some(v) = self.seed {
            fc.seed = v;
        }
        if let Some(v) = self.max_iter {
            fc.max_iter = v;
        }
        if let Some(v) = self.patience {
            fc.patience = v;
        }
        if let Some(v) = &self.selection_iters {
            fc.selection_iters = v.clone();
        }
        if let Some(v) = self.autoclus {
            fc.autoclus = v;
        }
        if let Some(v) = self.multi_clustering {
            fc.multi_clustering = v;
        }
        if let Some(v) = self.clustering_layer {
            fc.clustering_layer = v;
        }
        if let Some(v) = self.max_draws_per_level {
            fc.max_draws_per_level = v;
        }
        if let Some(v) = self.prune_mass {
            fc.prune_mass = v;
        }
        if let Some(v) = self.gllvm_max_inner {
            fc.gllvm_max_inner = v;
        }
        Ok(fc)
    }
}

/// Hex SHA-256 of the canonical JSON of a resolved trainer configuration.
pub fn config_hash(fc: &FitConfig) -> String {
    let text = serde_json::to_string(fc).expect("configuration serializes");
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Thread count: the flag, then `MIXCLUS_THREADS`, then the config file.
pub fn thread_count(
    flag: Option<usize>,
    env: Option<&str>,
    file: Option<usize>,
) -> Result<Option<usize>, CliError> {
    let env = match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) => Some(
            s.parse::<usize>()
                .map_err(|_| CliError::Config(format!("MIXCLUS_THREADS is not a count: '{s}'")))?,
        ),
        None => None,
    };
    let n = flag.or(env).or(file);
    if n == Some(0) {
        return Err(CliError::Config("thread count must be positive".into()));
    }
    Ok(n)
}
