//! Evaluation metrics: Gower distance, silhouette and aligned precision.

use std::collections::BTreeMap;

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use rayon::prelude::*;

use crate::data::{MixedDataset, VarKind};
use crate::error::{Error, Result};

/// Symmetric distance matrix with zero diagonal, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    pub n: usize,
    pub d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> DistanceMatrix {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix { n, d }
    }

    /// Euclidean distances between the rows of a row-major point set.
    pub fn euclidean(points: &[f64], dim: usize) -> DistanceMatrix {
        let n = points.len() / dim.max(1);
        DistanceMatrix::from_fn(n, |i, j| {
            (0..dim)
                .map(|a| (points[i * dim + a] - points[j * dim + a]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    /// Multiply every distance by `s`.
    pub fn scaled(&self, s: f64) -> DistanceMatrix {
        DistanceMatrix {
            n: self.n,
            d: self.d.iter().map(|v| v * s).collect(),
        }
    }
}

/// Gower distances between the rows of a dataset, with the names of skipped
/// zero-range features.
///
/// Continuous, ordinal and count features contribute `|a − b| / range`;
/// binary and categorical features contribute a 0/1 mismatch. Contributions
/// are averaged with equal weights over the features that have a range.
pub fn gower_matrix(ds: &MixedDataset) -> Result<(DistanceMatrix, Vec<String>)> {
    let n = ds.n;
    if n < 2 {
        return Err(Error::Input(
            "Gower distances need at least two rows".into(),
        ));
    }
    enum Feat {
        Range(Vec<f64>, f64),
        Mismatch(Vec<u32>),
    }
    let mut feats = Vec::new();
    let mut skipped = Vec::new();
    for (col, spec) in ds.schema.columns.iter().enumerate() {
        let values: Option<Vec<f64>> =
            if let Some(pos) = ds.continuous_cols.iter().position(|&c| c == col) {
                Some((0..n).map(|i| ds.y_c[(i, pos)]).collect())
            } else {
                let pos = ds.discrete_cols.iter().position(|&c| c == col).unwrap();
                match spec.kind {
                    VarKind::Ordinal | VarKind::Count => {
                        Some((0..n).map(|i| ds.y_d[(i, pos)] as f64).collect())
                    }
                    _ => {
                        feats.push(Feat::Mismatch((0..n).map(|i| ds.y_d[(i, pos)]).collect()));
                        None
                    }
                }
            };
        if let Some(v) = values {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo > 0.0 {
                feats.push(Feat::Range(v, hi - lo));
            } else {
                skipped.push(spec.name.clone());
            }
        }
    }
    let p = feats.len().max(1) as f64;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        return 0.0;
                    }
                    let s: f64 = feats
                        .iter()
                        .map(|f| match f {
                            Feat::Range(v, r) => ((v[i] - v[j]).abs() / r).min(1.0),
                            Feat::Mismatch(v) => f64::from(u8::from(v[i] != v[j])),
                        })
                        .sum();
                    s / p
                })
                .collect()
        })
        .collect();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            // same accumulation order for (i, j) and (j, i)
            d[i * n + j] = rows[i][j];
            d[j * n + i] = rows[i][j];
        }
    }
    Ok((DistanceMatrix { n, d }, skipped))
}

/// Mean silhouette: per-point `(b − a) / max(a, b)`, averaged within each
/// cluster and then over clusters. Points alone in their cluster score 0.
/// `None` when fewer than two clusters are present.
pub fn silhouette(labels: &[usize], d: &DistanceMatrix) -> Option<f64> {
    let n = labels.len();
    assert_eq!(n, d.n, "labels and distance matrix disagree");
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        clusters.entry(l).or_default().push(i);
    }
    if clusters.len() < 2 {
        return None;
    }
    let ids: Vec<usize> = clusters.keys().cloned().collect();
    let members: Vec<&Vec<usize>> = clusters.values().collect();
    let per_point: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = ids.iter().position(|&c| c == labels[i]).unwrap();
            if members[own].len() == 1 {
                return 0.0;
            }
            let row = d.row(i);
            let mut b = f64::INFINITY;
            let mut a = 0.0;
            for (c, m) in members.iter().enumerate() {
                let s: f64 = m.iter().map(|&j| row[j]).sum();
                if c == own {
                    a = s / (m.len() - 1) as f64;
                } else {
                    b = b.min(s / m.len() as f64);
                }
            }
            let den = a.max(b);
            if den > 0.0 {
                (b - a) / den
            } else {
                0.0
            }
        })
        .collect();
    let means: Vec<f64> = members
        .iter()
        .map(|m| m.iter().map(|&i| per_point[i]).sum::<f64>() / m.len() as f64)
        .collect();
    Some(means.iter().sum::<f64>() / means.len() as f64)
}

/// Micro and macro precision after the one-to-one alignment of predicted
/// clusters to true classes that maximizes the number of matches.
///
/// Micro is the share of matched observations. Macro averages, over true
/// classes, the fraction of the aligned cluster that belongs to the class
/// (0 when no cluster is aligned to it).
pub fn precision_scores<P: Ord + Clone, T: Ord + Clone>(
    pred: &[P],
    truth: &[T],
) -> Result<(f64, f64)> {
    if pred.is_empty() {
        return Err(Error::Input("empty label vectors".into()));
    }
    if pred.len() != truth.len() {
        return Err(Error::Input(format!(
            "{} predicted labels for {} true labels",
            pred.len(),
            truth.len()
        )));
    }
    let p_ids: Vec<P> = {
        let mut v = pred.to_vec();
        v.sort();
        v.dedup();
        v
    };
    let t_ids: Vec<T> = {
        let mut v = truth.to_vec();
        v.sort();
        v.dedup();
        v
    };
    let (np, nt) = (p_ids.len(), t_ids.len());
    let mut table = vec![vec![0i64; nt]; np];
    let mut sizes = vec![0usize; np];
    for (a, b) in pred.iter().zip(truth) {
        let i = p_ids.binary_search(a).unwrap();
        let j = t_ids.binary_search(b).unwrap();
        table[i][j] += 1;
        sizes[i] += 1;
    }
    // Matched count first; among maximal alignments, the largest macro sum, so
    // the result does not depend on how labels happen to be ordered.
    const FINE: f64 = (1u64 << 30) as f64;
    let coarse = (1i64 << 30) * (np.max(nt) as i64 + 1);
    let weights: Vec<Vec<i64>> = (0..np)
        .map(|i| {
            (0..nt)
                .map(|j| {
                    let share = if sizes[i] > 0 {
                        table[i][j] as f64 / sizes[i] as f64
                    } else {
                        0.0
                    };
                    table[i][j] * coarse + (share * FINE).round() as i64
                })
                .collect()
        })
        .collect();
    // kuhn_munkres needs at least as many columns as rows
    let mut cluster_of_class: Vec<Option<usize>> = vec![None; nt];
    if np <= nt {
        let m = Matrix::from_rows(weights).map_err(|e| Error::Input(e.to_string()))?;
        let (_, assign) = kuhn_munkres(&m);
        for (i, &j) in assign.iter().enumerate() {
            cluster_of_class[j] = Some(i);
        }
    } else {
        let tr: Vec<Vec<i64>> = (0..nt)
            .map(|j| (0..np).map(|i| weights[i][j]).collect())
            .collect();
        let m = Matrix::from_rows(tr).map_err(|e| Error::Input(e.to_string()))?;
        let (_, assign) = kuhn_munkres(&m);
        for (j, &i) in assign.iter().enumerate() {
            cluster_of_class[j] = Some(i);
        }
    }
    let n = pred.len() as f64;
    let mut matched = 0i64;
    let mut macro_sum = 0.0;
    for (j, c) in cluster_of_class.iter().enumerate() {
        if let Some(i) = *c {
            let tp = table[i][j];
            matched += tp;
            if sizes[i] > 0 {
                macro_sum += tp as f64 / sizes[i] as f64;
            }
        }
    }
    Ok((matched as f64 / n, macro_sum / nt as f64))
}
