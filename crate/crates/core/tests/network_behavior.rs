mod common;

use nvdp::audit::AuditConfig;
use nvdp::embedding_io::{generate_synthetic, EmbeddingRecord, Label, SyntheticConfig};
use nvdp::network::{
    denoising_attention, kl_regularizers, loss, predict_sample, project_posterior, sanitize, train, Example,
    LossWeights, ModelParams, TrainConfig, STREAM_INIT,
};
use nvdp::pipeline::{examples_from_records, run_cell};
use nvdp::posterior::{sample_with_noise, DPPosterior, PriorParams, ReparamNoise, WeightedVectorSample};
use nvdp::renyi::{rd_dp_posteriors, RenyiOrder};
use nvdp::sampling::RngState;

fn data(n_examples: usize, n_range: (usize, usize), sep: f64, seed: u64) -> Vec<EmbeddingRecord> {
    generate_synthetic(&SyntheticConfig { n_examples, d: 8, n_range, n_classes: 2, class_separation: sep, seed })
        .unwrap()
}

fn init(d: usize, h: usize, c: usize, seed: u64) -> ModelParams {
    ModelParams::init(d, h, c, &mut RngState::new(seed, STREAM_INIT)).unwrap()
}

/// Plain logistic regression on mean-pooled tokens, fitted by full-batch
/// gradient descent.
fn logistic_oracle_accuracy(train_set: &[EmbeddingRecord], val_set: &[EmbeddingRecord]) -> f64 {
    let pooled = |r: &EmbeddingRecord| {
        let x = r.x_f64();
        let mut m = vec![0.0; r.d];
        for row in x.chunks(r.d) {
            m.iter_mut().zip(row).for_each(|(a, b)| *a += b / r.n() as f64);
        }
        m
    };
    let label = |r: &EmbeddingRecord| match r.label {
        Label::Int(k) => k as f64,
        Label::Real(_) => unreachable!(),
    };
    let xs: Vec<Vec<f64>> = train_set.iter().map(pooled).collect();
    let ys: Vec<f64> = train_set.iter().map(label).collect();
    let d = xs[0].len();
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..500 {
        let (mut gw, mut gb) = (vec![0.0; d], 0.0);
        for (x, y) in xs.iter().zip(&ys) {
            let z: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b;
            let e = 1.0 / (1.0 + (-z).exp()) - y;
            gw.iter_mut().zip(x).for_each(|(g, xi)| *g += e * xi);
            gb += e;
        }
        let k = 0.1 / xs.len() as f64;
        w.iter_mut().zip(&gw).for_each(|(a, g)| *a -= k * g);
        b -= k * gb;
    }
    let hits = val_set
        .iter()
        .filter(|r| {
            let z: f64 = w.iter().zip(pooled(r)).map(|(a, b)| a * b).sum::<f64>() + b;
            (z > 0.0) == (label(r) == 1.0)
        })
        .count();
    hits as f64 / val_set.len() as f64
}

#[test]
fn bottleneck_on_prior_blocks_token_content() {
    let d = 8;
    let mut params = init(d, 2, 2, 1);
    params.proj_alpha.b[0] = -1000.0;
    let prior = PriorParams::standard(d);
    let mut r = common::rng(1);
    let a = common::random_examples(&mut r, 1, 1, d, 2).remove(0);
    let mut b = a.clone();
    b.x.iter_mut().enumerate().for_each(|(k, v)| *v = -3.0 * *v + k as f64);
    let mut x5 = common::random_examples(&mut r, 1, 1, d, 2).remove(0);
    x5.x = (0..5 * d).map(|k| (k as f64).sin()).collect();
    let mut y5 = x5.clone();
    y5.x.iter_mut().for_each(|v| *v = 2.0 - *v);

    for (x, y) in [(&a.x, &b.x), (&x5.x, &y5.x)] {
        let n = x.len() / d;
        let noise = ReparamNoise::draw(&mut RngState::new(9, 0), n + 1, d);
        let sx = sample_with_noise(&project_posterior(x, &params, &prior).unwrap(), &noise).unwrap();
        let sy = sample_with_noise(&project_posterior(y, &params, &prior).unwrap(), &noise).unwrap();
        assert_eq!(sx.pi, sy.pi);
        assert_eq!(sx.pi[n], 1.0);
        assert_ne!(sx.z, sy.z);
        // queries fixed, token values replaced
        assert_eq!(
            denoising_attention(&sx.z, &sx, &params).unwrap(),
            denoising_attention(&sx.z, &sy, &params).unwrap()
        );
        assert_eq!(predict_sample(&sx, &params).unwrap(), predict_sample(&sy, &params).unwrap());
    }
}

#[test]
fn one_hot_sample_returns_projected_value() {
    let d = 4;
    let params = init(d, 2, 2, 2);
    let z = vec![0.3, -0.2, 1.0, 0.5];
    let s = WeightedVectorSample::new(vec![1.0], z.clone(), d).unwrap();
    let queries: Vec<f64> = (0..3 * d).map(|k| k as f64 * 0.1).collect();
    let out = denoising_attention(&queries, &s, &params).unwrap();
    let mut v = vec![0.0; d];
    params.attn_v.apply(&z, &mut v);
    let mut want = vec![0.0; d];
    params.attn_o.apply(&v, &mut want);
    for row in out.chunks(d) {
        assert_eq!(row, want.as_slice());
    }
}

#[test]
fn attention_symmetries() {
    let d = 4;
    let params = init(d, 2, 2, 3);
    let z: Vec<f64> = [0.4, 0.1, -0.7, 0.2].repeat(3);
    let s = WeightedVectorSample::new(vec![1.0 / 3.0; 3], z, d).unwrap();
    let q1: Vec<f64> = (0..2 * d).map(|k| k as f64).collect();
    let q2: Vec<f64> = (0..2 * d).map(|k| -(k as f64) * 0.3).collect();
    let o1 = denoising_attention(&q1, &s, &params).unwrap();
    let o2 = denoising_attention(&q2, &s, &params).unwrap();
    assert!(o1.iter().zip(&o2).all(|(a, b)| (a - b).abs() < 1e-12));

    let z: Vec<f64> = (0..3 * d).map(|k| (k as f64 * 0.7).cos()).collect();
    let s = WeightedVectorSample::new(vec![0.2, 0.5, 0.3], z.clone(), d).unwrap();
    let doubled = WeightedVectorSample::new(vec![0.4, 1.0, 0.6], z, d).unwrap();
    let a = denoising_attention(&q1, &s, &params).unwrap();
    let b = denoising_attention(&q1, &doubled, &params).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));

    let zero = WeightedVectorSample::new(vec![0.0; 3], vec![0.0; 3 * d], d).unwrap();
    assert!(denoising_attention(&q1, &zero, &params).is_err());
}

#[test]
fn zero_parameters_project_to_unit_tokens() {
    let params = ModelParams::zeros(3, 1, 2).unwrap();
    let q = project_posterior(&[1.0, 2.0, 3.0, -1.0, 0.0, 4.0], &params, &PriorParams::standard(3)).unwrap();
    assert_eq!(q.components(), 3);
    for i in 0..2 {
        assert_eq!(q.alpha()[i], 2f64.ln());
        assert_eq!(q.mu(i), &[0.0; 3]);
        assert_eq!(q.sigma(i), &[1.0; 3]);
    }
}

#[test]
fn loss_parts_compose() {
    let d = 8;
    let mut r = common::rng(4);
    let batch = common::random_examples(&mut r, 6, 5, d, 3);
    let params = init(d, 2, 3, 4);
    let prior = PriorParams::standard(d);
    let w = LossWeights::new(0.37, 1.9).unwrap();
    let p = loss(&batch, &params, w, &prior, &mut RngState::new(4, 0)).unwrap();
    assert!((p.total - (p.task + 0.37 * p.dirichlet + 1.9 * p.gaussian)).abs() <= 1e-12 * p.total.abs().max(1.0));
    let z = loss(&batch, &params, LossWeights::tied(0.0).unwrap(), &prior, &mut RngState::new(4, 0)).unwrap();
    assert_eq!(z.total, z.task);
}

#[test]
fn regularizers_vanish_at_the_prior() {
    let d = 3;
    let prior = PriorParams { alpha0: 2.0, mu: vec![0.5, -0.5, 0.0], sigma: vec![1.5, 0.5, 1.0] };
    let n = 4;
    let mut mu = Vec::new();
    let mut sigma = Vec::new();
    for _ in 0..=n {
        mu.extend_from_slice(&prior.mu);
        sigma.extend_from_slice(&prior.sigma);
    }
    let q = DPPosterior::from_parts(d, vec![0.4; n + 1], mu, sigma, vec![1; n + 1]).unwrap();
    assert_eq!(kl_regularizers(&q, &prior).unwrap(), (0.0, 0.0));
}

#[test]
fn regularizers_match_near_one_divergence_blocks() {
    let d = 4;
    let prior = PriorParams { alpha0: 1.5, mu: vec![0.1; d], sigma: vec![0.9; d] };
    let mut r = common::rng(5);
    let near_one = RenyiOrder::KL_LIMIT;
    for _ in 0..20 {
        let mut q = common::random_posterior(&mut r, 3, d);
        // the last component is the prior in every model posterior
        let k = q.components();
        let mut mu: Vec<f64> = (0..k).flat_map(|i| q.mu(i).to_vec()).collect();
        let mut sigma: Vec<f64> = (0..k).flat_map(|i| q.sigma(i).to_vec()).collect();
        mu[(k - 1) * d..].copy_from_slice(&prior.mu);
        sigma[(k - 1) * d..].copy_from_slice(&prior.sigma);
        q = DPPosterior::from_parts(d, q.alpha().to_vec(), mu, sigma, vec![1; k]).unwrap();
        let reference = DPPosterior::from_parts(
            d,
            vec![prior.alpha0 / k as f64; k],
            prior.mu.repeat(k),
            prior.sigma.repeat(k),
            vec![1; k],
        )
        .unwrap();
        let (ld, lg) = kl_regularizers(&q, &prior).unwrap();
        let b = rd_dp_posteriors(&q, &reference, near_one).unwrap().blocks;
        let dir = b.dirichlet_total + b.dirichlet_components;
        assert!(common::rel_err(ld, dir, 1e-12) < 1e-2, "{ld} vs {dir}");
        assert!(common::rel_err(lg, b.gaussian_components, 1e-12) < 1e-2, "{lg} vs {}", b.gaussian_components);
    }
}

#[test]
fn sanitize_is_seeded() {
    let d = 8;
    let params = init(d, 1, 2, 6);
    let prior = PriorParams::standard(d);
    let x: Vec<f64> = (0..3 * d).map(|k| (k as f64).sqrt()).collect();
    let a = sanitize(&x, &params, &prior, &mut RngState::new(1, 0)).unwrap();
    let b = sanitize(&x, &params, &prior, &mut RngState::new(1, 0)).unwrap();
    let c = sanitize(&x, &params, &prior, &mut RngState::new(2, 0)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.z, c.z);
    assert_eq!(a.m(), 4);
}

#[test]
fn zero_epochs_return_initial_parameters() {
    let recs = data(20, (2, 4), 6.0, 7);
    let (ex, c) = examples_from_records(&recs).unwrap();
    let p0 = init(8, 1, c, 7);
    let cfg = TrainConfig { epochs: 0, ..Default::default() };
    let out = train(&ex[..15], &ex[15..], p0.clone(), &PriorParams::standard(8), &cfg, LossWeights::tied(0.1).unwrap())
        .unwrap();
    assert_eq!(out.params, p0);
    assert!(out.log.is_empty() && out.aborted.is_none());
}

#[test]
fn unregularized_training_matches_logistic_baseline() {
    let (tr, va) = (data(200, (2, 12), 6.0, 8), data(100, (2, 12), 6.0, 9));
    let oracle = logistic_oracle_accuracy(&tr, &va);
    assert!(oracle >= 0.99, "oracle {oracle}");
    let (train_ex, c) = examples_from_records(&tr).unwrap();
    let (val_ex, _) = examples_from_records(&va).unwrap();
    let cfg = TrainConfig { epochs: 200, seed: 8, ..Default::default() };
    let out = train(&train_ex, &val_ex, init(8, 1, c, 8), &PriorParams::standard(8), &cfg, LossWeights::tied(0.0).unwrap())
        .unwrap();
    let acc = out.log[out.best_epoch - 1].val_acc;
    assert!(acc >= 0.95, "val accuracy {acc}");
}

#[test]
fn chance_level_without_separation() {
    let (tr, va) = (data(200, (2, 6), 0.0, 10), data(400, (2, 6), 0.0, 11));
    let acc = logistic_oracle_accuracy(&tr, &va);
    assert!((acc - 0.5).abs() < 0.1, "{acc}");
}

#[test]
fn regularizers_decrease_under_strong_weights() {
    let recs = data(120, (2, 8), 6.0, 12);
    let (ex, c) = examples_from_records(&recs).unwrap();
    let cfg = TrainConfig { epochs: 10, seed: 12, ..Default::default() };
    let out = train(&ex[..96], &ex[96..], init(8, 1, c, 12), &PriorParams::standard(8), &cfg, LossWeights::tied(1.0).unwrap())
        .unwrap();
    for w in out.log.windows(2) {
        assert!(w[1].train.dirichlet < w[0].train.dirichlet, "{:?}", out.log);
        assert!(w[1].train.gaussian < w[0].train.gaussian);
    }
}

#[test]
fn released_samples_reproduce_training_accuracy() {
    let (tr, va) = (data(400, (6, 6), 6.0, 13), data(200, (6, 6), 6.0, 14));
    let mut gap = 0.0;
    for seed in 0..5 {
        let run = run_cell(
            &tr,
            &va,
            LossWeights::tied(1e-2).unwrap(),
            seed,
            1,
            &TrainConfig { epochs: 30, ..Default::default() },
            &AuditConfig { max_pairs: Some(10), ..Default::default() },
        )
        .unwrap();
        gap += run.accuracy - run.outcome.log[run.outcome.best_epoch - 1].val_acc;
    }
    assert!((gap / 5.0).abs() <= 0.02, "mean gap {}", gap / 5.0);
}

#[test]
fn stronger_regularization_lowers_worst_case_divergence() {
    let (tr, va) = (data(400, (6, 6), 6.0, 15), data(200, (6, 6), 6.0, 16));
    let cfg = TrainConfig::default();
    let rd = |w: f64| {
        run_cell(&tr, &va, LossWeights::tied(w).unwrap(), 0, 1, &cfg, &AuditConfig::default())
            .unwrap()
            .report
            .rd_max
    };
    let (weak, strong) = (rd(1e-3), rd(1.0));
    assert!(strong < weak, "{strong} vs {weak}");
    assert!(strong.is_finite());
}

#[test]
fn regression_targets_use_a_single_output() {
    let mut recs = data(40, (2, 4), 6.0, 17);
    for (k, r) in recs.iter_mut().enumerate() {
        r.label = Label::Real((k % 3) as f64);
    }
    let (ex, c) = examples_from_records(&recs).unwrap();
    assert_eq!(c, 1);
    let cfg = TrainConfig { epochs: 3, ..Default::default() };
    let out = train(&ex[..30], &ex[30..], init(8, 1, 1, 17), &PriorParams::standard(8), &cfg, LossWeights::tied(0.1).unwrap())
        .unwrap();
    assert_eq!(out.log.len(), 3);
    let bad = Example { target: nvdp::network::Target::Class(0), ..ex[0].clone() };
    assert!(loss(&[bad], &out.params, LossWeights::tied(0.1).unwrap(), &PriorParams::standard(8), &mut RngState::new(0, 0)).is_err());
}
