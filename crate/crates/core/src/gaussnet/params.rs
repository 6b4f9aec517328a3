use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::arch::{Architecture, Head, Mode};
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, EIG_FLOOR};
use crate::links::LinkParams;

/// Serde helpers writing matrices as nested rows and vectors as flat lists.
pub mod nested {
    use nalgebra::{DMatrix, DVector};
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows())
            .map(|i| m.row(i).iter().cloned().collect())
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>], ncols: Option<usize>) -> Result<DMatrix<f64>, String> {
        let c = rows.first().map_or(ncols.unwrap_or(0), |r| r.len());
        if rows.iter().any(|r| r.len() != c) {
            return Err("ragged matrix rows".into());
        }
        Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
    }

    pub mod matrix {
        use super::*;

        pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
            to_rows(m).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
            let rows = Vec::<Vec<f64>>::deserialize(d)?;
            from_rows(&rows, None).map_err(D::Error::custom)
        }
    }

    pub mod vector {
        use super::*;

        pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
            v.as_slice().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
            Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
        }
    }
}

/// One mixture component: `z_below = η + Λ z_above + u`, `u ~ N(0, Ψ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentParams {
    #[serde(with = "nested::vector")]
    pub eta: DVector<f64>,
    #[serde(with = "nested::matrix")]
    pub lambda: DMatrix<f64>,
    #[serde(with = "nested::matrix")]
    pub psi: DMatrix<f64>,
}

impl ComponentParams {
    pub fn new(eta: DVector<f64>, lambda: DMatrix<f64>, psi: DMatrix<f64>) -> Self {
        ComponentParams { eta, lambda, psi }
    }

    /// Output and input widths.
    pub fn shape(&self) -> (usize, usize) {
        (self.lambda.nrows(), self.lambda.ncols())
    }
}

/// A DGMM layer: its components and their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub components: Vec<ComponentParams>,
    pub pi: Vec<f64>,
}

impl LayerParams {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// `(output width, input width)`.
    pub fn shape(&self) -> (usize, usize) {
        self.components[0].shape()
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() || self.components.len() != self.pi.len() {
            return Err(Error::Params(
                "layer components and probabilities disagree".into(),
            ));
        }
        let (d_out, d_in) = self.shape();
        for c in &self.components {
            if c.lambda.shape() != (d_out, d_in)
                || c.eta.len() != d_out
                || c.psi.shape() != (d_out, d_out)
            {
                return Err(Error::Params(
                    "component shapes disagree within a layer".into(),
                ));
            }
            if c.eta
                .iter()
                .chain(c.lambda.iter())
                .chain(c.psi.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::Params("non-finite layer parameter".into()));
            }
            if min_eigenvalue(&c.psi) < EIG_FLOOR * (1.0 - 1e-6) {
                return Err(Error::Params(
                    "noise covariance below the eigenvalue floor".into(),
                ));
            }
        }
        if self.pi.iter().any(|p| !(*p >= 0.0)) || (self.pi.iter().sum::<f64>() - 1.0).abs() > 1e-10
        {
            return Err(Error::Params("layer probabilities off the simplex".into()));
        }
        Ok(())
    }
}

/// All model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mode: Mode,
    /// GLLVM links, in the order of the discrete head (every variable in m1).
    pub gllvm: Vec<LinkParams>,
    pub layers_c: Vec<LayerParams>,
    pub layers_d: Vec<LayerParams>,
    pub layers_tail: Vec<LayerParams>,
}

impl ModelParams {
    pub fn head_layers(&self, head: Head) -> &[LayerParams] {
        match head {
            Head::C => &self.layers_c,
            Head::D => &self.layers_d,
        }
    }

    pub fn head_layers_mut(&mut self, head: Head) -> &mut Vec<LayerParams> {
        match head {
            Head::C => &mut self.layers_c,
            Head::D => &mut self.layers_d,
        }
    }

    /// Head layers followed by tail layers.
    pub fn chain(&self, head: Head) -> Vec<&LayerParams> {
        self.head_layers(head)
            .iter()
            .chain(&self.layers_tail)
            .collect()
    }

    /// Chain layer `v` of a head, mutably.
    pub fn chain_layer_mut(&mut self, head: Head, v: usize) -> &mut LayerParams {
        let h = self.head_layers(head).len();
        if v < h {
            &mut self.head_layers_mut(head)[v]
        } else {
            &mut self.layers_tail[v - h]
        }
    }

    /// Architecture implied by the parameter shapes.
    pub fn architecture(&self) -> Architecture {
        let specs = |ls: &[LayerParams]| {
            ls.iter()
                .map(|l| super::LayerSpec::new(l.shape().1, l.k()))
                .collect::<Vec<_>>()
        };
        let embedding_dim = self.gllvm.first().map_or(0, |p| p.dim());
        Architecture {
            mode: self.mode,
            embedding_dim: if self.mode.has_gllvm() {
                embedding_dim
            } else {
                0
            },
            head_c: specs(&self.layers_c),
            head_d: specs(&self.layers_d),
            tail: specs(&self.layers_tail),
        }
    }

    /// Check shapes, simplexes and noise covariances.
    pub fn validate(&self) -> Result<()> {
        if self.layers_tail.is_empty() {
            return Err(Error::Params("no tail layers".into()));
        }
        for l in self
            .layers_c
            .iter()
            .chain(&self.layers_d)
            .chain(&self.layers_tail)
        {
            l.validate()?;
        }
        for p in &self.gllvm {
            p.validate()?;
        }
        if self.mode.has_gllvm() {
            let r = self.gllvm.first().map_or(0, |p| p.dim());
            if self.gllvm.iter().any(|p| p.dim() != r) {
                return Err(Error::Params("GLLVM loadings of unequal width".into()));
            }
            let bottom = self.chain(Head::D)[0].shape().0;
            if bottom != r {
                return Err(Error::Params(format!(
                    "GLLVM width {r} does not match the first discrete layer output {bottom}"
                )));
            }
        }
        for head in self.mode.heads() {
            let chain = self.chain(*head);
            for w in chain.windows(2) {
                if w[0].shape().1 != w[1].shape().0 {
                    return Err(Error::Params(format!(
                        "layer shapes do not chain along the {head:?} head"
                    )));
                }
            }
        }
        Ok(())
    }
}
