use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Continuous data only.
    Dgmm,
    /// Discrete data only, through a GLLVM head.
    Ddgmm,
    /// All variables through one GLLVM head.
    M1,
    /// Continuous DGMM head plus discrete GLLVM head with a common tail.
    M2,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "dgmm" => Ok(Mode::Dgmm),
            "ddgmm" => Ok(Mode::Ddgmm),
            "m1" | "m1dgmm" => Ok(Mode::M1),
            "m2" | "m2dgmm" => Ok(Mode::M2),
            other => Err(Error::Architecture(format!("unknown mode '{other}'"))),
        }
    }

    /// Heads used by the mode, continuous first.
    pub fn heads(self) -> &'static [Head] {
        match self {
            Mode::Dgmm => &[Head::C],
            Mode::Ddgmm | Mode::M1 => &[Head::D],
            Mode::M2 => &[Head::C, Head::D],
        }
    }

    /// Whether the mode has a GLLVM embedding layer.
    pub fn has_gllvm(self) -> bool {
        self != Mode::Dgmm
    }
}

/// Data-type specific front of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Head {
    /// Continuous head: its bottom variable is the standardized data itself.
    C,
    /// Discrete head: its bottom variable is the GLLVM embedding.
    D,
}

/// One DGMM layer: `components` mixture components generate the latent below
/// from a latent of dimension `width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub width: usize,
    pub components: usize,
}

impl LayerSpec {
    pub fn new(width: usize, components: usize) -> Self {
        LayerSpec { width, components }
    }
}

/// Layer widths and component counts of a model.
///
/// A head chain starts at its bottom variable (the continuous data for the C
/// head, the `embedding_dim`-dimensional GLLVM latent for the D head) and runs
/// through the head layers then the tail layers. Layer ℓ of a chain maps
/// `z^(ℓ)` (dimension `width`) to `z^(ℓ−1)`; the last tail latent is standard
/// normal. The latent generated by the first tail layer is the junction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub mode: Mode,
    /// Width of the GLLVM latent (ignored in dgmm mode).
    #[serde(default)]
    pub embedding_dim: usize,
    #[serde(default)]
    pub head_c: Vec<LayerSpec>,
    #[serde(default)]
    pub head_d: Vec<LayerSpec>,
    pub tail: Vec<LayerSpec>,
}

fn zip_layers(widths: &[usize], ks: &[usize]) -> Vec<LayerSpec> {
    widths
        .iter()
        .zip(ks)
        .map(|(&w, &k)| LayerSpec::new(w, k))
        .collect()
}

impl Architecture {
    /// Single-head shorthand.
    ///
    /// For ddgmm and m1, `r = (r₁, …, r_L)` starts with the embedding width and
    /// `k` has one entry fewer: `r=(5,4,3), k=(4,2)` is an embedding of width 5,
    /// a 4-component layer from width 4 and a 2-component layer from width 3.
    /// For dgmm, `r` lists latent widths below the data and `k` has the same
    /// length. The first layer forms the head when there are at least two
    /// layers; the rest is the tail.
    pub fn from_rk(mode: Mode, r: &[usize], k: &[usize]) -> Result<Architecture> {
        let (embedding_dim, layers) = match mode {
            Mode::Dgmm => {
                if r.len() != k.len() {
                    return Err(Error::Architecture(
                        "dgmm shorthand needs as many widths as component counts".into(),
                    ));
                }
                (0, zip_layers(r, k))
            }
            Mode::Ddgmm | Mode::M1 => {
                if r.len() != k.len() + 1 {
                    return Err(Error::Architecture(
                        "shorthand needs one more width than component counts".into(),
                    ));
                }
                (r[0], zip_layers(&r[1..], k))
            }
            Mode::M2 => {
                return Err(Error::Architecture(
                    "m2 needs per-head lists, not the single-head shorthand".into(),
                ))
            }
        };
        if layers.is_empty() {
            return Err(Error::Architecture("architecture has no layers".into()));
        }
        let split = usize::from(layers.len() >= 2);
        let head = layers[..split].to_vec();
        let tail = layers[split..].to_vec();
        let (head_c, head_d) = if mode == Mode::Dgmm {
            (head, Vec::new())
        } else {
            (Vec::new(), head)
        };
        Ok(Architecture {
            mode,
            embedding_dim,
            head_c,
            head_d,
            tail,
        })
    }

    /// m2 lists: `r_c` starts with the continuous width, `r_d` with the
    /// embedding width, `r_t` with the junction width; `k_t` ends with the
    /// terminal standard-normal layer, which must have one component.
    pub fn from_m2_lists(
        r_c: &[usize],
        r_d: &[usize],
        r_t: &[usize],
        k_c: &[usize],
        k_d: &[usize],
        k_t: &[usize],
    ) -> Result<Architecture> {
        if r_c.len() != k_c.len() || r_d.len() != k_d.len() || r_t.len() != k_t.len() {
            return Err(Error::Architecture(
                "m2 lists need matching width and component counts".into(),
            ));
        }
        if r_c.is_empty() || r_d.is_empty() || r_t.is_empty() {
            return Err(Error::Architecture("m2 lists must be non-empty".into()));
        }
        if *k_t.last().unwrap() != 1 {
            return Err(Error::Architecture(
                "the last tail entry is the standard-normal terminal and must have one component"
                    .into(),
            ));
        }
        let junction = r_t[0];
        let head = |r: &[usize], k: &[usize]| {
            let mut widths: Vec<usize> = r[1..].to_vec();
            widths.push(junction);
            zip_layers(&widths, k)
        };
        Ok(Architecture {
            mode: Mode::M2,
            embedding_dim: r_d[0],
            head_c: head(r_c, k_c),
            head_d: head(r_d, k_d),
            tail: zip_layers(&r_t[1..], &k_t[..k_t.len() - 1]),
        })
    }

    pub fn head_layers(&self, head: Head) -> &[LayerSpec] {
        match head {
            Head::C => &self.head_c,
            Head::D => &self.head_d,
        }
    }

    /// Head layers followed by tail layers.
    pub fn chain(&self, head: Head) -> Vec<LayerSpec> {
        let mut c = self.head_layers(head).to_vec();
        c.extend_from_slice(&self.tail);
        c
    }

    /// Width of a head's bottom variable.
    pub fn bottom_width(&self, head: Head, p_c: usize) -> usize {
        match head {
            Head::C => p_c,
            Head::D => self.embedding_dim,
        }
    }

    /// Widths `(d₀, d₁, …, d_L)` of the latents along a head chain.
    pub fn chain_widths(&self, head: Head, p_c: usize) -> Vec<usize> {
        let mut w = vec![self.bottom_width(head, p_c)];
        w.extend(self.chain(head).iter().map(|l| l.width));
        w
    }

    /// Number of full paths through a head chain.
    pub fn n_paths(&self, head: Head) -> usize {
        self.chain(head).iter().map(|l| l.components).product()
    }

    /// Width of the latent generated by tail layer `q`.
    pub fn tail_output_width(&self, q: usize, p_c: usize) -> usize {
        if q == 0 {
            let head = self.mode.heads()[self.mode.heads().len() - 1];
            let layers = self.head_layers(head);
            layers
                .last()
                .map_or(self.bottom_width(head, p_c), |l| l.width)
        } else {
            self.tail[q - 1].width
        }
    }

    /// Check the architecture against the data widths.
    pub fn validate(&self, p_c: usize, p_d: usize) -> Result<()> {
        let err = |m: String| Err(Error::Architecture(m));
        if self.tail.is_empty() {
            return err("the tail needs at least one layer".into());
        }
        match self.mode {
            Mode::Dgmm => {
                if p_c == 0 {
                    return err("dgmm mode needs continuous columns".into());
                }
                if !self.head_d.is_empty() {
                    return err("dgmm mode uses the continuous head only".into());
                }
            }
            Mode::Ddgmm => {
                if p_d == 0 {
                    return err("ddgmm mode needs discrete columns".into());
                }
                if !self.head_c.is_empty() {
                    return err("ddgmm mode uses the discrete head only".into());
                }
            }
            Mode::M1 => {
                if p_c + p_d == 0 {
                    return err("no columns".into());
                }
                if !self.head_c.is_empty() {
                    return err("m1 mode uses a single GLLVM head".into());
                }
            }
            Mode::M2 => {
                if p_c == 0 || p_d == 0 {
                    return err("m2 mode needs both continuous and discrete columns".into());
                }
                if self.head_c.is_empty() || self.head_d.is_empty() {
                    return err("m2 mode needs both heads non-empty".into());
                }
                if self.head_c.last().unwrap().width != self.head_d.last().unwrap().width {
                    return err("both heads must end on the junction width".into());
                }
            }
        }
        if self.mode.has_gllvm() {
            if self.embedding_dim == 0 {
                return err("embedding width must be positive".into());
            }
            let p_h = if self.mode == Mode::M1 {
                p_c + p_d
            } else {
                p_d
            };
            if self.embedding_dim >= p_h {
                return err(format!(
                    "embedding width {} must be below the {p_h} variables it summarizes",
                    self.embedding_dim
                ));
            }
        }
        for head in self.mode.heads() {
            let widths = self.chain_widths(*head, p_c);
            for w in widths.windows(2) {
                if w[1] >= w[0] {
                    return err(format!(
                        "widths must strictly decrease along the {head:?} chain, got {widths:?}"
                    ));
                }
            }
            if *widths.last().unwrap() < 1 {
                return err("the last tail width must be at least 1".into());
            }
            if self.chain(*head).iter().any(|l| l.components == 0) {
                return err("every layer needs at least one component".into());
            }
        }
        Ok(())
    }
}
