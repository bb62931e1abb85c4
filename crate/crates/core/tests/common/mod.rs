#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use triad::classifier::Checklist;
use triad::config::{Ablation, LossWeights, ModelConfig};
use triad::corpus::{Study, BOS, EOS};
use triad::encoders::{TokenSequence, ViewImage, ViewTag};
use triad::model::{Model, PassMode};
use triad::tensor::{relative_error, Tape};

pub fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// e=8, n=3, k=4, v=16, one block, 8×8 images.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        image_size: 8,
        conv1_channels: 2,
        conv2_channels: 2,
        c: 8,
        e: 8,
        n: 3,
        k: 4,
        v: 16,
        layers: 1,
        heads: 2,
        ffn: 8,
        max_len: 8,
        ..ModelConfig::default()
    }
}

/// Random study for `cfg`: 1–3 views, report of at most 6 tokens
/// (`BOS … EOS`), history of 1–4 words.
pub fn random_study(cfg: &ModelConfig, seed: u64) -> Study {
    let mut r = rng(seed);
    let s = cfg.image_size;
    let tags = [ViewTag::Pa, ViewTag::La, ViewTag::Ap];
    let views = (0..r.gen_range(1..=3))
        .map(|i| {
            let px = (0..s * s).map(|_| r.gen::<f32>()).collect();
            ViewImage::new(tags[i], s, s, px).unwrap()
        })
        .collect();
    let word = |r: &mut Xoshiro256PlusPlus| r.gen_range(4..cfg.v);
    let history = TokenSequence((0..r.gen_range(1..=4)).map(|_| word(&mut r)).collect());
    let mut report = vec![BOS];
    for _ in 0..r.gen_range(1..=4) {
        report.push(word(&mut r));
    }
    report.push(EOS);
    let states: Vec<usize> = (0..cfg.n).map(|_| r.gen_range(0..cfg.k)).collect();
    Study {
        id: format!("r{seed}"),
        views,
        history,
        report: TokenSequence(report),
        truth: Checklist::one_hot(cfg.k, &states).unwrap(),
    }
}

/// Model with every parameter perturbed away from its structured init
/// (unit gains, zero biases) so no gradient is trivially symmetric.
pub fn random_model(cfg: &ModelConfig, seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::init(cfg.clone(), seed).unwrap();
    let mut r = rng(seed ^ 0xABCD);
    for (_, t) in m.params.iter_mut() {
        for x in t.data_mut() {
            *x += r.gen_range(-0.2..0.2);
        }
    }
    m
}

pub fn loss_value(
    model: &Model<f64>,
    ablation: &Ablation,
    weights: &LossWeights,
    mode: PassMode,
    study: &Study,
) -> f64 {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, |_| false);
    let f = model.forward(&mut tape, &p, ablation, weights, mode, study).unwrap();
    tape.value(f.total).item()
}

/// Analytic gradients of the total loss for every parameter `trainable`
/// accepts.
pub fn analytic_grads(
    model: &Model<f64>,
    ablation: &Ablation,
    weights: &LossWeights,
    mode: PassMode,
    study: &Study,
    trainable: impl Fn(&str) -> bool,
) -> Vec<(String, Vec<f64>)> {
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, &trainable);
    let f = model.forward(&mut tape, &p, ablation, weights, mode, study).unwrap();
    tape.backward(f.total).unwrap();
    p.iter()
        .filter(|(n, _)| trainable(n))
        .map(|(n, &v)| {
            let numel = model.params.get(n).unwrap().numel();
            (n.clone(), tape.grad(v).map_or(vec![0.0; numel], <[f64]>::to_vec))
        })
        .collect()
}

/// Worst norm-wise relative error between analytic and central-difference
/// gradients, over at most `per_tensor` sampled coordinates of each
/// trainable tensor. Returns `(worst, coordinates checked)`.
#[allow(clippy::too_many_arguments)]
pub fn end_to_end_check(
    model: &Model<f64>,
    ablation: &Ablation,
    weights: &LossWeights,
    mode: PassMode,
    study: &Study,
    trainable: impl Fn(&str) -> bool,
    per_tensor: usize,
    seed: u64,
) -> (f64, usize) {
    let grads = analytic_grads(model, ablation, weights, mode, study, &trainable);
    let mut r = rng(seed);
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut work = model.clone();
    let eps = 1e-5;
    for (name, g) in &grads {
        let numel = g.len();
        let coords: Vec<usize> = if numel <= per_tensor {
            (0..numel).collect()
        } else {
            (0..per_tensor).map(|_| r.gen_range(0..numel)).collect()
        };
        for i in coords {
            let orig = work.params.get(name).unwrap().data()[i];
            let mut eval = |x: f64| {
                work.params.get_mut(name).unwrap().data_mut()[i] = x;
                loss_value(&work, ablation, weights, mode, study)
            };
            let plus = eval(orig + eps);
            let minus = eval(orig - eps);
            work.params.get_mut(name).unwrap().data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * eps));
            analytic.push(g[i]);
        }
    }
    (relative_error(&analytic, &numeric, 1e-8), analytic.len())
}
