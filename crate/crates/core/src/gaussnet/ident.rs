//! Identifiability transforms: per-layer standardization and loading
//! diagonalization.

use nalgebra::{DMatrix, DVector};

use super::arch::{Head, Mode};
use super::params::{LayerParams, ModelParams};
use super::paths::mixture_moments;
use crate::data::VarKind;
use crate::error::{Error, Result};
use crate::linalg::{floor_eigen, spd_inverse, sym_eigen_desc, symmetrize, EIG_FLOOR};
use crate::links::LinkParams;

/// Standardize the latent generated by `layer`: with `Var = L Lᵀ`,
/// `η ← L⁻¹(η − E)`, `Λ ← L⁻¹Λ`, `Ψ ← L⁻¹ΨL⁻ᵀ`. Returns `(E, L)`.
fn standardize_generator(layer: &mut LayerParams) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (e, var) = mixture_moments(layer);
    let chol = crate::linalg::cholesky(&var, "rescale_layers").map_err(|_| {
        Error::numerical("rescale_layers", "latent variance is not positive definite")
    })?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(l.nrows(), l.nrows()))
        .ok_or_else(|| Error::numerical("rescale_layers", "singular variance factor"))?;
    for c in layer.components.iter_mut() {
        c.eta = &l_inv * (&c.eta - &e);
        c.lambda = &l_inv * &c.lambda;
        let psi = symmetrize(&(&l_inv * &c.psi * l_inv.transpose()));
        c.psi = floor_eigen(&psi, EIG_FLOOR);
    }
    Ok((e, l))
}

/// A DGMM layer consuming a latent `z = E + L z'`: `η += ΛE`, `Λ ← ΛL`.
fn compensate_layer(layer: &mut LayerParams, e: &DVector<f64>, l: &DMatrix<f64>) {
    for c in layer.components.iter_mut() {
        c.eta += &c.lambda * e;
        c.lambda = &c.lambda * l;
    }
}

/// GLLVM links consuming `z = E + L z'`. The lower-triangular `L` keeps the
/// zero pattern of masked loadings.
fn compensate_links(links: &mut [LinkParams], e: &DVector<f64>, l: &DMatrix<f64>) {
    for p in links.iter_mut() {
        let shifts: Vec<f64> = p
            .loadings
            .iter()
            .map(|row| row.iter().zip(e.iter()).map(|(a, b)| a * b).sum())
            .collect();
        match p.kind {
            VarKind::Ordinal => {
                for t in p.intercepts.iter_mut() {
                    *t -= shifts[0];
                }
            }
            _ => {
                for (t, s) in p.intercepts.iter_mut().zip(&shifts) {
                    *t += s;
                }
            }
        }
        let r = l.nrows();
        for row in p.loadings.iter_mut() {
            let new: Vec<f64> = (0..r)
                .map(|d| (d..r).map(|k| row[k] * l[(k, d)]).sum())
                .collect();
            *row = new;
        }
        p.apply_mask();
    }
}

/// Make every latent layer zero-mean with identity covariance, deepest first,
/// compensating the layer (or GLLVM links) that consumes each latent so the
/// observed-data model is unchanged.
pub fn rescale_layers(params: &ModelParams) -> Result<ModelParams> {
    let mut p = params.clone();
    let n_tail = p.layers_tail.len();
    let heads: Vec<Head> = p.mode.heads().to_vec();
    for q in (0..n_tail).rev() {
        if q == 0 && p.mode == Mode::Dgmm && p.layers_c.is_empty() {
            // tail layer 0 generates the observed continuous data
            break;
        }
        let (e, l) = standardize_generator(&mut p.layers_tail[q])?;
        if q > 0 {
            compensate_layer(&mut p.layers_tail[q - 1], &e, &l);
            continue;
        }
        // the junction feeds every head
        for &h in &heads {
            let consumer = p.head_layers(h).len();
            if consumer > 0 {
                let layer = p.head_layers_mut(h).last_mut().unwrap();
                compensate_layer(layer, &e, &l);
            } else if h == Head::D {
                compensate_links(&mut p.gllvm, &e, &l);
            }
        }
    }
    for &h in &heads {
        let n_head = p.head_layers(h).len();
        for v in (0..n_head).rev() {
            if h == Head::C && v == 0 {
                // generates the observed continuous data
                continue;
            }
            let (e, l) = standardize_generator(&mut p.head_layers_mut(h)[v])?;
            if v > 0 {
                compensate_layer(&mut p.head_layers_mut(h)[v - 1], &e, &l);
            } else {
                compensate_links(&mut p.gllvm, &e, &l);
            }
        }
    }
    Ok(p)
}

/// Rotate every component's loadings so that `ΛᵀΨ⁻¹Λ` is diagonal with
/// non-increasing entries. `ΛΛᵀ` is unchanged.
pub fn diagonalize_loadings(params: &ModelParams) -> Result<ModelParams> {
    let mut p = params.clone();
    for layer in p
        .layers_c
        .iter_mut()
        .chain(p.layers_d.iter_mut())
        .chain(p.layers_tail.iter_mut())
    {
        for c in layer.components.iter_mut() {
            let psi_inv = spd_inverse(&c.psi, "diagonalize_loadings")?;
            let b = c.lambda.transpose() * psi_inv * &c.lambda;
            let (_, vecs) = sym_eigen_desc(&b);
            c.lambda = &c.lambda * vecs;
        }
    }
    Ok(p)
}
