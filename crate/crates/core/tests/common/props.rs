//! Property checks of attention weights, temperature, erasure and the
//! pairwise baseline, each run for a given number of random cases.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::seq::SliceRandom;

use rmn::feature_map::{count_pair_evaluations, rn_forward, RnParams};
use rmn::model::{
    attention_hop, beta_transform, memory_update, Architecture, Batch, HopParams, MemoryState, Model, ModelConfig,
    ModelDims,
};
use rmn::nn::{Activation, ParamStore, Session};
use rmn::{Tape, Tensor};

use super::{rand_tensor, rng, softplus};

pub type Check = Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn run<S: Strategy>(cases: u32, s: S, f: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Check {
    runner(cases).run(&s, f).map_err(|e| e.to_string())
}

/// Segment lengths and matching scores.
fn segmented_scores() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    prop::collection::vec(1usize..8, 1..5).prop_flat_map(|lengths| {
        let n: usize = lengths.iter().sum();
        (Just(lengths), prop::collection::vec(-20.0f64..20.0, n))
    })
}

fn segment_softmax(w: &[f64], lengths: &[usize]) -> Vec<f64> {
    let mut t = Tape::new();
    let v = t.constant(Tensor::vector(w.to_vec()).unwrap());
    let a = t.segment_softmax(v, lengths).unwrap();
    t.value(a).to_vec()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

fn permute_rows(m: &Tensor, order: &[usize]) -> Tensor {
    Tensor::from_rows(&order.iter().map(|&i| m.row(i).to_vec()).collect::<Vec<_>>()).unwrap()
}

pub fn alpha_simplex(cases: u32) -> Check {
    run(cases, (segmented_scores(), -5.0f64..5.0), |((lengths, w), z)| {
        let beta = beta_transform(z);
        let scaled: Vec<f64> = w.iter().map(|v| v * beta).collect();
        let a = segment_softmax(&scaled, &lengths);
        let mut start = 0;
        for n in lengths {
            let seg = &a[start..start + n];
            prop_assert!(seg.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!((seg.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            start += n;
        }
        Ok(())
    })
}

pub fn beta_above_one(cases: u32) -> Check {
    run(cases, -30.0f64..30.0, |z| {
        let b = beta_transform(z);
        prop_assert!(b > 1.0 && b.is_finite());
        prop_assert!((b - 1.0 - softplus(z)).abs() < 1e-12);
        Ok(())
    })
}

pub fn erasure_contracts(cases: u32) -> Check {
    let rows = prop::collection::vec((prop::collection::vec(-10.0f64..10.0, 3), 0.0f64..=1.0), 1..10);
    run(cases, rows, |rows| {
        let n = rows.len();
        let m = Tensor::new(vec![n, 3], rows.iter().flat_map(|r| r.0.clone()).collect()).unwrap();
        let al = Tensor::vector(rows.iter().map(|r| r.1).collect()).unwrap();
        let mut t = Tape::new();
        let (mv, av) = (t.constant(m.clone()), t.constant(al.clone()));
        let out = memory_update(&mut t, mv, av).unwrap();
        let out = t.value(out);
        for i in 0..n {
            let before: f64 = m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            let after: f64 = out.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(after <= before + 1e-12);
            prop_assert!((after - (1.0 - al.data()[i]) * before).abs() < 1e-9);
        }
        Ok(())
    })
}

pub fn erasure_rejects_bad_weights(cases: u32) -> Check {
    run(cases, prop_oneof![-5.0f64..-1e-9, 1.0f64 + 1e-9..5.0], |a| {
        let mut t = Tape::new();
        let m = t.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
        let al = t.constant(Tensor::vector(vec![a]).unwrap());
        prop_assert!(memory_update(&mut t, m, al).is_err());
        Ok(())
    })
}

pub fn softmax_shift_invariant(cases: u32) -> Check {
    run(cases, (segmented_scores(), -50.0f64..50.0), |((lengths, w), c)| {
        let shifted: Vec<f64> = w.iter().map(|v| v + c).collect();
        let a = segment_softmax(&w, &lengths);
        let b = segment_softmax(&shifted, &lengths);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        Ok(())
    })
}

pub fn entropy_falls_with_beta(cases: u32) -> Check {
    let s = (prop::collection::vec(-3.0f64..3.0, 2..10), -5.0f64..5.0, 0.01f64..5.0);
    run(cases, s, |(w, z1, dz)| {
        let (b1, b2) = (beta_transform(z1), beta_transform(z1 + dz));
        let h = |b: f64| entropy(&segment_softmax(&w.iter().map(|v| v * b).collect::<Vec<_>>(), &[w.len()]));
        prop_assert!(h(b2) <= h(b1) + 1e-12);
        Ok(())
    })
}

pub fn rn_permutation_invariant(cases: u32) -> Check {
    run(cases, (1usize..7, 0u64..1000, 0u64..1000), |(n, seed, perm_seed)| {
        let (d_m, d_q) = (3, 2);
        let p = RnParams::new(d_m, d_q, &[5, 4], &[4, 3], Activation::Relu, false).unwrap();
        let mut store = ParamStore::new();
        p.init(&mut store, &mut rng(seed));
        let mut r = rng(seed + 1);
        let mem = rand_tensor(&mut r, &[n, d_m], 1.0);
        let q = rand_tensor(&mut r, &[1, d_q], 1.0);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(perm_seed));
        let run = |m: &Tensor| {
            let mut s = Session::eval(&store);
            let (mv, qv) = (s.constant(m.clone()), s.constant(q.clone()));
            let out = rn_forward(&mut s, mv, qv, &[n], &p).unwrap();
            s.value(out).to_vec()
        };
        let (a, b) = (run(&mem), run(&permute_rows(&mem, &order)));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        Ok(())
    })
}

/// Permuting sentences permutes `α` the same way and leaves `r` unchanged.
pub fn attention_permutation_equivariant(cases: u32) -> Check {
    run(cases, (1usize..7, 0u64..1000, 0u64..1000), |(n, seed, perm_seed)| {
        let params = HopParams::new(0, 5, &[6, 1], Activation::Tanh, false).unwrap();
        let mut store = ParamStore::new();
        params.init(&mut store, &mut rng(seed));
        let mut r = rng(seed + 1);
        let mem = rand_tensor(&mut r, &[n, 3], 1.0);
        let q = rand_tensor(&mut r, &[1, 2], 1.0);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng(perm_seed));
        let run = |m: &Tensor| {
            let mut s = Session::eval(&store);
            let (mv, qv) = (s.constant(m.clone()), s.constant(q.clone()));
            let out = attention_hop(&mut s, &MemoryState::new(mv, qv, vec![n]), &params).unwrap();
            (s.value(out.alpha).to_vec(), s.value(out.relation).to_vec())
        };
        let ((a, ra), (b, rb)) = (run(&mem), run(&permute_rows(&mem, &order)));
        for (k, &i) in order.iter().enumerate() {
            prop_assert!((b[k] - a[i]).abs() < 1e-12);
        }
        for (x, y) in ra.iter().zip(&rb) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        Ok(())
    })
}

/// `g` evaluations of a forward pass: `Σ n²` pairs for the baseline and
/// `T·Σ n` rows for the hop model.
pub fn pair_counts(cases: u32) -> Check {
    run(cases, (prop::collection::vec(1usize..9, 1..4), 1usize..4), |(lengths, hops)| {
        let dims = ModelDims {
            vocab_size: 6,
            num_classes: 3,
            max_sentence_len: 2,
            max_question_len: 2,
            match_fields: 0,
        };
        let n: usize = lengths.iter().sum();
        let batch = Batch {
            sentences: (0..n).map(|i| vec![3 + i % 3, 0]).collect(),
            lengths: lengths.clone(),
            questions: vec![vec![4, 5]; lengths.len()],
            answers: vec![0; lengths.len()],
            tasks: vec![1; lengths.len()],
            match_flags: None,
        };
        let small = ModelConfig {
            word_dim: 3,
            hidden_dim: 3,
            g_layers: vec![4, 1],
            f_layers: vec![4, 3],
            hops,
            batch_norm: false,
            ..ModelConfig::default()
        };
        let rn = ModelConfig {
            architecture: Architecture::Rn,
            g_layers: vec![4, 4],
            ..small.clone()
        };
        for cfg in [small, rn] {
            let arch = cfg.architecture;
            let m = Model::new(cfg, dims.clone()).unwrap();
            let mut s = Session::eval(&m.params);
            let f = m.net.forward(&mut s, &batch).unwrap();
            let want: usize = match arch {
                Architecture::Rn => lengths.iter().map(|l| l * l).sum(),
                Architecture::Rmn => hops * n,
            };
            prop_assert_eq!(f.g_evaluations, want);
            let per_episode: usize = lengths.iter().map(|&l| count_pair_evaluations(arch, l, hops)).sum();
            prop_assert_eq!(per_episode, want);
        }
        Ok(())
    })
}
