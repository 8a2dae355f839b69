//! Optimizer, checkpoint and training-loop behavior.

mod common;

use std::collections::BTreeMap;

use common::{needle_corpus, tiny_config};
use rmn::data::make_batch;
use rmn::nn::ParamStore;
use rmn::train::adam::{adam_step, clip_global_norm, global_norm, AdamState};
use rmn::train::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use rmn::train::{read_metrics, write_metrics, TrainError, Trainer};
use rmn::Tensor;

#[test]
fn adam_matches_hand_rolled_update_on_a_quadratic() {
    let mut store = ParamStore::new();
    store.insert("x", Tensor::vector(vec![3.0, -2.0]).unwrap());
    let mut st = AdamState::default();
    let lr = 0.1;
    let (mut x, mut m, mut v) = ([3.0f64, -2.0], [0.0f64; 2], [0.0f64; 2]);
    for t in 1..=50 {
        let g: Vec<f64> = store.get("x").unwrap().data().iter().map(|x| 2.0 * x).collect();
        let grads = BTreeMap::from([("x".to_string(), Tensor::vector(g).unwrap())]);
        adam_step(&mut store, &grads, &mut st, lr).unwrap();
        for i in 0..2 {
            let gi = 2.0 * x[i];
            m[i] = 0.9 * m[i] + 0.1 * gi;
            v[i] = 0.999 * v[i] + 0.001 * gi * gi;
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            x[i] -= lr * mh / (vh.sqrt() + 1e-8);
        }
        let got = store.get("x").unwrap().data();
        assert!((got[0] - x[0]).abs() < 1e-12 && (got[1] - x[1]).abs() < 1e-12, "step {t}");
    }
    // First step moves each coordinate by lr against its gradient sign.
    let mut s2 = ParamStore::new();
    s2.insert("x", Tensor::vector(vec![3.0]).unwrap());
    let g = BTreeMap::from([("x".to_string(), Tensor::vector(vec![6.0]).unwrap())]);
    adam_step(&mut s2, &g, &mut AdamState::default(), 0.1).unwrap();
    assert!((s2.get("x").unwrap().data()[0] - 2.9).abs() < 1e-9);
}

#[test]
fn adam_skips_parameters_without_gradients() {
    let mut store = ParamStore::new();
    store.insert("a", Tensor::vector(vec![1.0]).unwrap());
    store.insert("b", Tensor::vector(vec![1.0]).unwrap());
    let mut st = AdamState::default();
    let g = BTreeMap::from([("a".to_string(), Tensor::vector(vec![1.0]).unwrap())]);
    adam_step(&mut store, &g, &mut st, 0.1).unwrap();
    assert_eq!(store.get("b").unwrap().data(), &[1.0]);
    assert!(!st.moments.contains_key("b"));
    let wrong = BTreeMap::from([("a".to_string(), Tensor::vector(vec![1.0, 2.0]).unwrap())]);
    assert!(adam_step(&mut store, &wrong, &mut st, 0.1).is_err());
}

#[test]
fn clipping_bounds_the_global_norm() {
    let mut g = BTreeMap::from([
        ("a".to_string(), Tensor::vector(vec![3.0]).unwrap()),
        ("b".to_string(), Tensor::vector(vec![4.0]).unwrap()),
    ]);
    assert!((global_norm(&g) - 5.0).abs() < 1e-12);
    clip_global_norm(&mut g, 1.0);
    assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    assert!((g["a"].data()[0] - 0.6).abs() < 1e-12);
}

fn trained(epochs: usize) -> (Trainer, rmn::data::Corpus) {
    let corpus = needle_corpus(120, 5, 3);
    let mut t = Trainer::new(tiny_config(), &corpus).unwrap();
    t.config.epochs = epochs;
    t.train(&corpus, |_| {}).unwrap();
    (t, corpus)
}

#[test]
fn checkpoint_save_load_is_byte_identical() {
    let (t, _) = trained(2);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.rmn1");
    save_checkpoint(&p, &t.checkpoint()).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], b"RMN1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    let ck = load_checkpoint(&p).unwrap();
    assert_eq!(ck, t.checkpoint());
    assert_eq!(ck.to_bytes(), bytes);
    let model = ck.model().unwrap();
    assert_eq!(model.params, t.model.params);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let (t, _) = trained(1);
    let bytes = t.checkpoint().to_bytes();
    let mut flipped = bytes.clone();
    let last = flipped.len() - 3;
    flipped[last] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(TrainError::Checkpoint(_))));
    let mut magic = bytes.clone();
    magic[1] = b'X';
    assert!(Checkpoint::from_bytes(&magic).is_err());
    let mut version = bytes.clone();
    version[4] = 9;
    assert!(Checkpoint::from_bytes(&version).is_err());
    for cut in [0, 6, bytes.len() / 3, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    // A parameter with the wrong shape fails when the model is rebuilt.
    let mut ck = t.checkpoint();
    ck.params.insert("embed.A", Tensor::zeros(&[2, 2]).unwrap());
    assert!(ck.model().is_err());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let (straight, corpus) = trained(4);
    let (half, _) = trained(2);
    let ck = Checkpoint::from_bytes(&half.checkpoint().to_bytes()).unwrap();
    let mut resumed = Trainer::from_checkpoint(ck).unwrap();
    resumed.config.epochs = 4;
    resumed.train(&corpus, |_| {}).unwrap();
    assert_eq!(resumed.model.params, straight.model.params);
    assert_eq!(resumed.adam, straight.adam);
    assert_eq!(resumed.history, straight.history);
}

#[test]
fn same_seed_same_run_and_other_seed_differs() {
    let (a, corpus) = trained(2);
    let (b, _) = trained(2);
    assert_eq!(a.model.params, b.model.params);
    let mut cfg = tiny_config();
    cfg.seed = 2;
    cfg.epochs = 2;
    let mut c = Trainer::new(cfg, &corpus).unwrap();
    c.train(&corpus, |_| {}).unwrap();
    assert_ne!(a.model.params, c.model.params);
}

#[test]
fn untrained_model_sits_at_chance() {
    let corpus = needle_corpus(400, 5, 4);
    let classes = corpus.answers.len();
    let t = Trainer::new(tiny_config(), &corpus).unwrap();
    let table = rmn::train::evaluate(&t.model, corpus.episodes("train"), 64).unwrap();
    // Six places are the only gold answers; an untrained model guesses.
    assert!(table.accuracy_pct() < 100.0 * 3.0 / 6.0, "accuracy {}", table.accuracy_pct());
    let ln_c = (classes as f64).ln();
    assert!((table.mean_loss() - ln_c).abs() < 0.5, "loss {} vs ln C {ln_c}", table.mean_loss());
}

#[test]
fn repeated_steps_on_one_batch_lower_its_loss() {
    let corpus = needle_corpus(40, 5, 5);
    let mut cfg = tiny_config();
    cfg.lr = 1e-3;
    let mut t = Trainer::new(cfg, &corpus).unwrap();
    let eps: Vec<_> = corpus.episodes("train").iter().take(16).collect();
    let batch = make_batch(&eps, corpus.answers.len(), 0);
    let mut losses = Vec::new();
    for _ in 0..6 {
        losses.push(t.train_step(&batch).unwrap().loss);
    }
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{losses:?}");
    }
}

#[test]
fn non_finite_parameters_are_divergence() {
    let corpus = needle_corpus(40, 5, 6);
    let mut t = Trainer::new(tiny_config(), &corpus).unwrap();
    t.model.params.get_mut("embed.A").unwrap().data_mut()[40] = f64::NAN;
    let eps: Vec<_> = corpus.episodes("train").iter().collect();
    let batch = make_batch(&eps, corpus.answers.len(), 0);
    assert!(matches!(t.train_step(&batch), Err(TrainError::Divergence(_))));
    assert!(matches!(t.run_epoch(&corpus), Err(TrainError::Divergence(_))));
}

#[test]
fn early_stopping_and_time_budget() {
    let corpus = needle_corpus(80, 5, 7);
    let mut cfg = tiny_config();
    cfg.lr = 1e-12;
    cfg.patience = 2;
    cfg.epochs = 50;
    let mut t = Trainer::new(cfg.clone(), &corpus).unwrap();
    t.train(&corpus, |_| {}).unwrap();
    assert!(t.state.stopped);
    assert_eq!(t.state.epoch, 3);

    cfg.patience = 0;
    cfg.time_budget_secs = 1e-9;
    let mut t = Trainer::new(cfg, &corpus).unwrap();
    t.train(&corpus, |_| {}).unwrap();
    assert_eq!(t.state.epoch, 1);
}

#[test]
fn mismatched_output_width_is_a_config_error() {
    let corpus = needle_corpus(20, 3, 8);
    let mut cfg = tiny_config();
    cfg.f_layers = rmn::train::config::Widths::fixed(&[16, 159]);
    assert!(matches!(Trainer::new(cfg, &corpus), Err(TrainError::Config(_))));
}

#[test]
fn metrics_csv_round_trip() {
    let (mut t, corpus) = trained(2);
    t.test(&corpus, "test").unwrap();
    let mut buf = Vec::new();
    write_metrics(&t.history, Some("abc"), &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("# manifest abc\nepoch,split,task,error_pct,loss\n"));
    let back = read_metrics(&buf[..]).unwrap();
    assert_eq!(back, t.history);
    let splits: Vec<&str> = back.iter().map(|r| r.split.as_str()).collect();
    assert!(splits.contains(&"train") && splits.contains(&"valid") && splits.contains(&"test"));
}
