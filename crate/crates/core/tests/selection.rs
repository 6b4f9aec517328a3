mod common;

use common::*;
use mixclus_core::gaussnet::{
    Architecture, ComponentParams, Head, LayerParams, LayerSpec, Mode, ModelParams,
};
use mixclus_core::links::LinkParams;
use mixclus_core::mcem::{e_step, EOptions, Observed};
use mixclus_core::nalgebra::{DMatrix, DVector};
use mixclus_core::rng::task_rng;
use mixclus_core::selection::{
    apply_architecture_update, dims_from_contributions, dims_from_votes, first_pc_contributions,
    prune_components, select_dgmm_dims, select_embedding_dims, SelectionDecision,
};
use mixclus_core::VarKind;
use rand::seq::SliceRandom;
use rand::Rng;

fn layer_with_pi(pi: &[f64]) -> LayerParams {
    LayerParams {
        components: pi
            .iter()
            .map(|_| {
                ComponentParams::new(
                    DVector::zeros(1),
                    DMatrix::zeros(1, 1),
                    DMatrix::identity(1, 1),
                )
            })
            .collect(),
        pi: pi.to_vec(),
    }
}

#[test]
fn component_threshold_examples() {
    assert_eq!(
        prune_components(&layer_with_pi(&[0.5, 0.3, 0.15, 0.05]), false),
        vec![0, 1, 2]
    );
    assert_eq!(
        prune_components(&layer_with_pi(&[0.25; 4]), false),
        vec![0, 1, 2, 3]
    );
    assert_eq!(
        prune_components(&layer_with_pi(&[0.9, 0.1]), false),
        vec![0]
    );
    // just above 1/(4k) survives
    assert_eq!(
        prune_components(&layer_with_pi(&[0.87, 0.13]), false),
        vec![0, 1]
    );
    assert_eq!(
        prune_components(&layer_with_pi(&[0.9, 0.1]), true),
        vec![0, 1]
    );
    assert_eq!(prune_components(&layer_with_pi(&[1.0]), false), vec![0]);
}

/// Sample covariances of `m` Gaussian batches with covariance `sig`.
fn sample_covs<R: Rng>(
    rng: &mut R,
    sig: &DMatrix<f64>,
    batches: usize,
    m: usize,
) -> Vec<DMatrix<f64>> {
    let d = sig.nrows();
    let l = sig.clone().cholesky().unwrap().l();
    (0..batches)
        .map(|_| {
            let mut c = DMatrix::zeros(d, d);
            for _ in 0..m {
                let z = &l * normal_vec(rng, d);
                c += &z * z.transpose();
            }
            c / m as f64
        })
        .collect()
}

#[test]
fn dominant_dimension_kept_alone() {
    let mut rng = task_rng(1, 0);
    let sig = DMatrix::from_diagonal(&DVector::from_vec(vec![0.01, 4.0, 0.02]));
    let contrib = first_pc_contributions(&sample_covs(&mut rng, &sig, 50, 40));
    assert_eq!(dims_from_contributions(&contrib), vec![1]);
    assert!(contrib[1] > 0.99);
}

#[test]
fn isotropic_dimensions_both_kept() {
    let mut rng = task_rng(2, 0);
    let covs = sample_covs(&mut rng, &DMatrix::identity(2, 2), 400, 50);
    let contrib = first_pc_contributions(&covs);
    // leading axis of a noisy isotropic sample is uniform in angle: E|cos θ| = 2/π
    for c in &contrib {
        assert!((c - 2.0 / std::f64::consts::PI).abs() < 0.05, "{c}");
    }
    assert_eq!(dims_from_contributions(&contrib), vec![0, 1]);
    // an exactly isotropic matrix splits evenly when its axes are rotated by 45°
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let q = DMatrix::from_row_slice(2, 2, &[r, -r, r, r]);
    let c = &q * DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 + 1e-9, 1.0])) * q.transpose();
    let even = first_pc_contributions(&[c]);
    assert!((even[0] - r).abs() < 1e-6 && (even[1] - r).abs() < 1e-6);
    assert_eq!(dims_from_contributions(&[0.05]), vec![0]);
    assert_eq!(dims_from_contributions(&[0.1, 0.15]), vec![1]);
}

#[test]
fn dgmm_dims_from_estep_deviations() {
    // layer input of width 3 of which only the first axis carries variance
    let mut rng = task_rng(3, 0);
    let head = LayerParams {
        components: vec![ComponentParams::new(
            DVector::zeros(4),
            DMatrix::from_fn(4, 3, |a, b| if b == 0 { 1.0 + a as f64 * 0.3 } else { 0.0 }),
            DMatrix::identity(4, 4) * 0.2,
        )],
        pi: vec![1.0],
    };
    let tail = LayerParams {
        components: vec![ComponentParams::new(
            DVector::zeros(3),
            DMatrix::zeros(3, 1),
            DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 0.01, 0.01])),
        )],
        pi: vec![1.0],
    };
    let params = ModelParams {
        mode: Mode::Dgmm,
        gllvm: Vec::new(),
        layers_c: vec![head],
        layers_d: Vec::new(),
        layers_tail: vec![tail],
    };
    let obs = Observed::from_parts(
        20,
        4,
        (0..80).map(|_| normal(&mut rng)).collect(),
        0,
        Vec::new(),
    );
    let mut o = EOptions::uniform(&params, 30, 1, 0);
    o.dev_stats = true;
    let es = e_step(&params, &obs, &o).unwrap();
    // the conditional of the layer input given the data is wide only along
    // directions the data does not pin down: axes 1 and 2 carry prior
    // variance 0.01, axis 0 is shrunk by the data but stays dominant
    let d = select_dgmm_dims(&es, Head::C, 1).unwrap();
    assert_eq!(d, vec![0]);
    let without = e_step(&params, &obs, &EOptions::uniform(&params, 30, 1, 0)).unwrap();
    assert!(select_dgmm_dims(&without, Head::C, 1).is_none());
}

#[test]
fn vote_rule_examples() {
    // share of insignificant votes at or above 25% drops the dimension
    assert_eq!(dims_from_votes(&[0, 3, 1], &[4, 4, 4]), vec![0]);
    assert_eq!(dims_from_votes(&[0, 3, 1], &[4, 4, 5]), vec![0, 2]);
    assert_eq!(dims_from_votes(&[1, 0], &[4, 4]), vec![1]);
    assert_eq!(dims_from_votes(&[4, 3], &[4, 4]), vec![1]);
    assert_eq!(dims_from_votes(&[2], &[2]), vec![0]);
    // a dimension nobody could test (masked everywhere) is kept
    assert_eq!(dims_from_votes(&[0, 0], &[3, 0]), vec![0, 1]);
}

fn binary_link(j: usize, a: f64, b: &[f64], free: usize) -> LinkParams {
    let mut p = LinkParams::zeros(j, VarKind::Binary, 2, 0, b.len());
    p.intercepts = vec![a];
    p.loadings = vec![b.to_vec()];
    p.free_dims = free;
    p
}

/// Binary data from `σ(a + b·z)` with standard-normal `z`, and the ddgmm model
/// that generated it.
fn binary_model<R: Rng>(rng: &mut R, links: Vec<LinkParams>, n: usize) -> (ModelParams, Observed) {
    let r = links[0].dim();
    let mut y = Vec::with_capacity(n * links.len());
    for _ in 0..n {
        let z = normal_vec(rng, r);
        for l in &links {
            let eta = l.intercepts[0]
                + l.loadings[0]
                    .iter()
                    .zip(z.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            y.push(if rng.random::<f64>() < 1.0 / (1.0 + (-eta).exp()) {
                1.0
            } else {
                0.0
            });
        }
    }
    let params = ModelParams {
        mode: Mode::Ddgmm,
        gllvm: links.clone(),
        layers_c: Vec::new(),
        layers_d: Vec::new(),
        layers_tail: vec![LayerParams {
            components: vec![
                ComponentParams::new(
                    DVector::zeros(r),
                    DMatrix::zeros(r, 1),
                    DMatrix::identity(r, r),
                ),
                ComponentParams::new(
                    DVector::zeros(r),
                    DMatrix::zeros(r, 1),
                    DMatrix::identity(r, r),
                ),
            ],
            pi: vec![0.5, 0.5],
        }],
    };
    let obs = Observed::from_parts(n, 0, Vec::new(), links.len(), y);
    (params, obs)
}

#[test]
fn noise_embedding_dimension_dropped() {
    let mut dropped = 0;
    for seed in 0..20 {
        let mut rng = task_rng(seed, 4);
        let links: Vec<LinkParams> = (0..6)
            .map(|j| {
                binary_link(
                    j,
                    0.3 * normal(&mut rng),
                    &[2.0 + 0.5 * normal(&mut rng), 0.0],
                    if j == 0 { 1 } else { 2 },
                )
            })
            .collect();
        let (params, obs) = binary_model(&mut rng, links, 300);
        let es = e_step(&params, &obs, &EOptions::uniform(&params, 100, seed, 0)).unwrap();
        let kept = select_embedding_dims(&params, &obs, &es);
        assert!(kept.contains(&0), "seed {seed}: informative dimension lost");
        if kept == vec![0] {
            dropped += 1;
        }
    }
    assert!(
        dropped >= 18,
        "noise dimension dropped in {dropped}/20 runs"
    );
}

#[test]
fn predictive_embedding_dimensions_kept() {
    let mut rng = task_rng(5, 4);
    let loads = [
        [2.5, 0.0],
        [2.0, 2.0],
        [-2.0, 2.0],
        [2.0, -2.5],
        [0.5, 2.5],
        [-2.5, -2.0],
    ];
    let links: Vec<LinkParams> = loads
        .iter()
        .enumerate()
        .map(|(j, b)| binary_link(j, 0.0, b, if j == 0 { 1 } else { 2 }))
        .collect();
    let (params, obs) = binary_model(&mut rng, links, 400);
    let es = e_step(&params, &obs, &EOptions::uniform(&params, 100, 5, 0)).unwrap();
    assert_eq!(select_embedding_dims(&params, &obs, &es), vec![0, 1]);

    let single: Vec<LinkParams> = (0..3).map(|j| binary_link(j, 0.0, &[0.0], 1)).collect();
    let (params, obs) = binary_model(&mut rng, single, 100);
    let es = e_step(&params, &obs, &EOptions::uniform(&params, 20, 5, 0)).unwrap();
    assert_eq!(select_embedding_dims(&params, &obs, &es), vec![0]);
}

fn dgmm_stack() -> Architecture {
    Architecture {
        mode: Mode::Dgmm,
        embedding_dim: 0,
        head_c: vec![LayerSpec::new(5, 2)],
        head_d: Vec::new(),
        tail: vec![
            LayerSpec::new(4, 2),
            LayerSpec::new(3, 2),
            LayerSpec::new(2, 1),
        ],
    }
}

#[test]
fn no_deletion_is_identity() {
    let mut rng = task_rng(6, 0);
    let arch = dgmm_stack();
    let params = random_params(&mut rng, &arch, 6);
    let up =
        apply_architecture_update(&arch, &params, &SelectionDecision::identity(&arch)).unwrap();
    assert_eq!(up.architecture, arch);
    assert_eq!(up.params, params);
    assert!(!up.restart_required && !up.changed);
}

#[test]
fn tail_above_width_one_deleted() {
    let mut rng = task_rng(7, 0);
    let arch = dgmm_stack();
    let params = random_params(&mut rng, &arch, 6);
    let mut dec = SelectionDecision::identity(&arch);
    // tail input widths (4, 3, 2) become (4, 1, ·)
    dec.tail[1].dims = vec![2];
    let up = apply_architecture_update(&arch, &params, &dec).unwrap();
    assert_eq!(up.deleted_tail_layers, vec![2]);
    assert_eq!(up.architecture.tail.len(), 2);
    assert_eq!(up.architecture.tail[1].width, 1);
    assert!(!up.restart_required && up.changed);
    up.architecture.validate(6, 0).unwrap();
    up.params.validate().unwrap();
    assert_eq!(up.params.architecture(), up.architecture);
    // the kept input dimension is sliced out of the layer's loadings
    let before = &params.layers_tail[1].components[0].lambda;
    let after = &up.params.layers_tail[1].components[0].lambda;
    assert_eq!(after.column(0), before.column(2));
}

#[test]
fn narrow_head_layer_deletes_following_head_layers() {
    let arch = Architecture {
        mode: Mode::Dgmm,
        embedding_dim: 0,
        head_c: vec![LayerSpec::new(5, 2), LayerSpec::new(4, 2)],
        head_d: Vec::new(),
        tail: vec![LayerSpec::new(1, 1)],
    };
    arch.validate(6, 0).unwrap();
    let mut rng = task_rng(8, 0);
    let params = random_params(&mut rng, &arch, 6);
    let mut dec = SelectionDecision::identity(&arch);
    dec.head_c[0].dims = vec![1, 3];
    let up = apply_architecture_update(&arch, &params, &dec).unwrap();
    assert!(up.restart_required);
    assert_eq!(up.deleted_head_layers, vec![(Head::C, 1)]);
    assert_eq!(up.architecture.head_c.len(), 1);
    assert_eq!(up.architecture.head_c[0].width, 2);
    up.architecture.validate(6, 0).unwrap();
}

#[test]
fn mismatched_decision_rejected() {
    let arch = dgmm_stack();
    let mut rng = task_rng(9, 0);
    let params = random_params(&mut rng, &arch, 6);
    let mut dec = SelectionDecision::identity(&arch);
    dec.tail.pop();
    assert!(apply_architecture_update(&arch, &params, &dec).is_err());
    let mut dec = SelectionDecision::identity(&arch);
    dec.head_c[0].components = vec![5];
    assert!(apply_architecture_update(&arch, &params, &dec).is_err());
}

fn random_subset<R: Rng>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let mut s = idx[..rng.random_range(1..=n)].to_vec();
    s.sort_unstable();
    s
}

#[test]
fn random_decisions_yield_valid_architectures() {
    let mut rng = task_rng(10, 0);
    for _ in 0..200 {
        let (arch, p_c, p_d) = random_architecture(&mut rng);
        let params = random_params(&mut rng, &arch, p_c);
        let mut dec = SelectionDecision::identity(&arch);
        for (d, s) in dec.head_c.iter_mut().zip(&arch.head_c) {
            d.components = random_subset(&mut rng, s.components);
            d.dims = random_subset(&mut rng, s.width);
        }
        for (d, s) in dec.head_d.iter_mut().zip(&arch.head_d) {
            d.components = random_subset(&mut rng, s.components);
            d.dims = random_subset(&mut rng, s.width);
        }
        for (d, s) in dec.tail.iter_mut().zip(&arch.tail) {
            d.components = random_subset(&mut rng, s.components);
            d.dims = random_subset(&mut rng, s.width);
        }
        if arch.mode.has_gllvm() {
            dec.embedding_dims = random_subset(&mut rng, arch.embedding_dim);
        }
        let up = apply_architecture_update(&arch, &params, &dec).unwrap();
        up.architecture.validate(p_c, p_d).unwrap();
        if !up.restart_required {
            up.params.validate().unwrap();
            assert_eq!(up.params.architecture(), up.architecture);
        }
        // kept components keep their relative proportions
        let pairs = params
            .layers_c
            .iter()
            .zip(&dec.head_c)
            .zip(&up.params.layers_c)
            .chain(
                params
                    .layers_tail
                    .iter()
                    .zip(&dec.tail)
                    .zip(&up.params.layers_tail),
            );
        for ((old, d), new) in pairs {
            if new.k() != d.components.len() {
                continue;
            }
            let tot: f64 = d.components.iter().map(|&k| old.pi[k]).sum();
            for (j, &k) in d.components.iter().enumerate() {
                assert!((new.pi[j] - old.pi[k] / tot).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn clustering_layer_components_never_increase() {
    let mut rng = task_rng(11, 0);
    let arch = Architecture::from_rk(Mode::Dgmm, &[3, 2], &[2, 4]).unwrap();
    let mut params = random_params(&mut rng, &arch, 4);
    let mut arch = arch;
    let mut prev = params.layers_tail[0].k();
    for _ in 0..6 {
        // skew the clustering layer so its weakest component falls below 1/(4k)
        let k = params.layers_tail[0].k();
        let mut pi: Vec<f64> = (0..k).map(|c| 2f64.powi(-(c as i32) * 3)).collect();
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
        params.layers_tail[0].pi = pi;
        let mut dec = SelectionDecision::identity(&arch);
        dec.tail[0].components = prune_components(&params.layers_tail[0], false);
        let up = apply_architecture_update(&arch, &params, &dec).unwrap();
        let now = up.params.layers_tail[0].k();
        assert!(now <= prev && now >= 1);
        prev = now;
        arch = up.architecture;
        params = up.params;
    }
    assert_eq!(prev, 1);
}
