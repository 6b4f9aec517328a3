//! Deep Gaussian network algebra: architectures, parameters, paths, Gaussian
//! moments, conditioning and identifiability transforms.

mod arch;
mod ident;
mod params;
mod paths;

pub use arch::{Architecture, Head, LayerSpec, Mode};
pub use ident::{diagonalize_loadings, rescale_layers};
pub use params::{nested, ComponentParams, LayerParams, ModelParams};
pub use paths::{
    affine_to_bottom, chain_moments, condition_next_layer, enumerate_combos, enumerate_paths,
    layer_moments, mixture_moments, path_conditionals, path_moments, path_prior, path_table,
    LevelConditional, PathTable,
};
