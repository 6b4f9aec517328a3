//! Clustering of mixed continuous and discrete data with deep Gaussian mixture
//! models.
//!
//! Four model families share one engine:
//!
//! * `dgmm`: continuous data only, a stack of mixtures of factor analyzers;
//! * `ddgmm`: discrete data only, a GLLVM embedding layer feeding a DGMM;
//! * `m1`: every variable goes through one GLLVM head (continuous variables
//!   with a Gaussian link);
//! * `m2`: a continuous DGMM head and a discrete GLLVM head merged by a common
//!   tail.
//!
//! Training is Monte-Carlo EM ([`trainer::fit`]) started from the nested
//! embedding initialization ([`nsep::nsep_init`]), with optional on-the-fly
//! pruning of components, dimensions and layers ([`selection`]).

pub mod data;
pub mod error;
pub mod gaussnet;
pub mod glm;
pub mod linalg;
pub mod links;
pub mod mcem;
pub mod metrics;
pub mod nsep;
pub mod optim;
pub mod rng;
pub mod selection;
pub mod synthetic;
pub mod trainer;

pub use data::{load_dataset, parse_schema, MixedDataset, Schema, VarKind, VariableSpec};
pub use error::{Error, Result};
pub use gaussnet::{Architecture, LayerSpec, Mode, ModelParams};
pub use links::LinkParams;
pub use nalgebra;
pub use trainer::{fit, FitConfig, FitResult};
