//! Shared helpers for the integration tests: random inputs and plain
//! scalar-loop reference implementations written without the tape.

#![allow(dead_code)]

pub mod grads;
pub mod oracles;
pub mod props;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rmn::nn::{Activation, ParamStore};
use rmn::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), rand_vec(rng, n, scale)).unwrap()
}

/// Values bounded away from zero, for checks through `|x|` and relu kinks.
pub fn rand_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.2..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// `x · W + b` with `W` stored `[in, out]` row-major.
pub fn affine(store: &ParamStore, prefix: &str, x: &[f64]) -> Vec<f64> {
    let w = store.get(&format!("{prefix}.w")).unwrap();
    let b = store.get(&format!("{prefix}.b")).unwrap();
    let (fi, fo) = (w.rows(), w.cols());
    assert_eq!(x.len(), fi);
    (0..fo)
        .map(|j| b.data()[j] + (0..fi).map(|i| x[i] * w.at(i, j)).sum::<f64>())
        .collect()
}

/// MLP without batch norm: affine and activation on hidden layers, bare
/// affine on the last.
pub fn mlp(store: &ParamStore, prefix: &str, layers: usize, act: Activation, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for i in 0..layers {
        h = affine(store, &format!("{prefix}.l{i}"), &h);
        if i + 1 < layers {
            h = h
                .iter()
                .map(|v| match act {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                })
                .collect();
        }
    }
    h
}

pub fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Needle-story corpus (train, valid, test) of `stories` training stories.
pub fn needle_corpus(stories: usize, sentences: usize, seed: u64) -> rmn::data::Corpus {
    use rmn::data::corpus::{build_story_corpus, hold_out};
    use rmn::data::story::parse_story_str;
    use rmn::data::synth::needle_text;
    let train = parse_story_str(&needle_text(stories, sentences, seed), 1, "train").unwrap();
    let test = parse_story_str(&needle_text(stories / 4 + 1, sentences, seed + 1000), 1, "test").unwrap();
    let (train, valid) = hold_out(train);
    build_story_corpus(vec![("train".into(), train), ("valid".into(), valid), ("test".into(), test)]).unwrap()
}

/// Small, fast training config.
pub fn tiny_config() -> rmn::train::TrainConfig {
    use rmn::train::config::Widths;
    rmn::train::TrainConfig {
        word_dim: 8,
        hidden_dim: 8,
        g_layers: Widths::fixed(&[16, 1]),
        f_layers: Widths::auto(&[16]),
        batch_norm: false,
        lr: 1e-3,
        batch_size: 16,
        epochs: 3,
        ..rmn::train::TrainConfig::story()
    }
}
