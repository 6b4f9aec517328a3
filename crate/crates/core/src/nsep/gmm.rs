use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{covariance_mle, floor_eigen, logsumexp, symmetrize, GaussianLogPdf};
use crate::rng::task_rng;

/// Smallest eigenvalue allowed in a mixture covariance, relative to the
/// largest variance of the data. Keeps a component from collapsing onto the
/// lattice that discrete scores leave in the latent space.
const COV_FLOOR: f64 = 1e-2;

/// Full-covariance Gaussian mixture fit.
#[derive(Debug, Clone)]
pub struct GmmResult {
    pub weights: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    /// `n × K`, rows on the simplex.
    pub responsibilities: DMatrix<f64>,
    /// Log-likelihood after each M step.
    pub loglik: Vec<f64>,
    pub converged: bool,
    /// Components re-seeded after a collapse.
    pub reseeded: usize,
}

impl GmmResult {
    /// Component of highest responsibility for every row, ties to the lowest index.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.responsibilities
            .row_iter()
            .map(|r| {
                let mut best = 0;
                for k in 1..r.len() {
                    if r[k] > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

fn sq_dist(z: &DMatrix<f64>, i: usize, c: &DVector<f64>) -> f64 {
    (0..z.ncols()).map(|a| (z[(i, a)] - c[a]).powi(2)).sum()
}

/// k-means++ seeding: the first center uniformly, each next one with
/// probability proportional to the squared distance to the nearest center.
fn kmeanspp<R: Rng>(z: &DMatrix<f64>, k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    let n = z.nrows();
    let row = |i: usize| z.row(i).transpose();
    let mut centers = vec![row(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(z, i, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = row(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(z, i, &c));
        }
        centers.push(c);
    }
    centers
}

/// E step: responsibilities and total log-likelihood.
fn responsibilities(
    z: &DMatrix<f64>,
    weights: &[f64],
    means: &[DVector<f64>],
    covs: &[DMatrix<f64>],
) -> Result<(DMatrix<f64>, f64)> {
    let (n, k) = (z.nrows(), weights.len());
    let pdfs = means
        .iter()
        .zip(covs)
        .map(|(m, c)| GaussianLogPdf::new(m.clone(), c, "gmm_em"))
        .collect::<Result<Vec<_>>>()?;
    let mut resp = DMatrix::zeros(n, k);
    let mut ll = 0.0;
    let mut buf = vec![0.0; k];
    let mut x = vec![0.0; z.ncols()];
    for i in 0..n {
        for (a, v) in x.iter_mut().enumerate() {
            *v = z[(i, a)];
        }
        for c in 0..k {
            buf[c] = if weights[c] > 0.0 {
                weights[c].ln() + pdfs[c].eval(&x)
            } else {
                f64::NEG_INFINITY
            };
        }
        let lse = logsumexp(&buf);
        if !lse.is_finite() {
            return Err(Error::numerical(
                "gmm_em",
                "observation with zero mixture density",
            ));
        }
        ll += lse;
        for c in 0..k {
            resp[(i, c)] = (buf[c] - lse).exp();
        }
    }
    Ok((resp, ll))
}

/// Number of k-means++ starts; the fit of highest likelihood is kept.
pub const GMM_STARTS: u64 = 5;

/// Gaussian mixture by EM, best of [`GMM_STARTS`] k-means++ starts derived
/// from `seed`. Within a start, a component whose weight collapses is
/// re-seeded once at the worst-explained observations with the data
/// covariance; a second collapse fails that start.
pub fn gmm_em(z: &DMatrix<f64>, k: usize, seed: u64, max_iter: usize) -> Result<GmmResult> {
    let mut best: Option<GmmResult> = None;
    let mut last_err = None;
    for start in 0..GMM_STARTS {
        match gmm_single(z, k, seed, start, max_iter) {
            Ok(g) => {
                let ll = *g.loglik.last().unwrap_or(&f64::NEG_INFINITY);
                if best
                    .as_ref()
                    .is_none_or(|b| ll > *b.loglik.last().unwrap_or(&f64::NEG_INFINITY))
                {
                    best = Some(g);
                }
            }
            Err(e @ Error::Input(_)) => return Err(e),
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap())
}

fn gmm_single(
    z: &DMatrix<f64>,
    k: usize,
    seed: u64,
    start: u64,
    max_iter: usize,
) -> Result<GmmResult> {
    let (n, d) = z.shape();
    if k == 0 {
        return Err(Error::Input("mixture needs at least one component".into()));
    }
    if n <= k {
        return Err(Error::Input(format!(
            "mixture of {k} components on {n} observations"
        )));
    }
    let data_cov = covariance_mle(z);
    let scale = (0..d)
        .map(|a| data_cov[(a, a)])
        .fold(0.0, f64::max)
        .max(1e-12);
    let floor = COV_FLOOR * scale;
    let mut rng = task_rng(seed, 0x6d6d + start);
    let mut means = kmeanspp(z, k, &mut rng);
    let mut covs = vec![floor_eigen(&data_cov, floor); k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut reseeded = 0;
    let mut may_reseed = true;
    let (mut resp, _) = responsibilities(z, &weights, &means, &covs)?;
    for _ in 0..max_iter.max(1) {
        // M step
        let mut collapsed = Vec::new();
        for c in 0..k {
            let nk: f64 = resp.column(c).sum();
            if nk < 1e-8 * n as f64 + 1e-12 {
                collapsed.push(c);
                continue;
            }
            let mut mu = DVector::zeros(d);
            for i in 0..n {
                mu += resp[(i, c)] * z.row(i).transpose();
            }
            mu /= nk;
            let mut cov = DMatrix::zeros(d, d);
            for i in 0..n {
                let dv = z.row(i).transpose() - &mu;
                cov += resp[(i, c)] * &dv * dv.transpose();
            }
            cov /= nk;
            weights[c] = nk / n as f64;
            means[c] = mu;
            covs[c] = floor_eigen(&symmetrize(&cov), floor);
        }
        if !collapsed.is_empty() {
            if !may_reseed {
                return Err(Error::numerical(
                    "gmm_em",
                    "mixture component collapsed twice",
                ));
            }
            may_reseed = false;
            // re-seed at the worst-explained observations under the live components
            let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
            let live: Vec<usize> = (0..k).filter(|c| !collapsed.contains(c)).collect();
            let pdfs = live
                .iter()
                .map(|&c| GaussianLogPdf::new(means[c].clone(), &covs[c], "gmm_em"))
                .collect::<Result<Vec<_>>>()?;
            for i in 0..n {
                let x: Vec<f64> = z.row(i).iter().cloned().collect();
                let terms: Vec<f64> = live
                    .iter()
                    .zip(&pdfs)
                    .map(|(&c, p)| weights[c].max(1e-300).ln() + p.eval(&x))
                    .collect();
                order.push((logsumexp(&terms), i));
            }
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (slot, &c) in collapsed.iter().enumerate() {
                means[c] = z.row(order[slot % n].1).transpose();
                covs[c] = floor_eigen(&data_cov, floor);
                weights[c] = 1.0 / k as f64;
                reseeded += 1;
            }
            let tot: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w /= tot;
            }
            trace.clear();
        }
        let (r, ll) = responsibilities(z, &weights, &means, &covs)?;
        resp = r;
        let prev = trace.last().copied();
        trace.push(ll);
        if let Some(p) = prev {
            if (ll - p).abs() <= 1e-10 * ll.abs().max(1.0) {
                converged = true;
                break;
            }
        }
    }
    Ok(GmmResult {
        weights,
        means,
        covariances: covs,
        responsibilities: resp,
        loglik: trace,
        converged,
        reseeded,
    })
}
