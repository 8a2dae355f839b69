//! Finite-difference checks of the tape primitives and the full model loss.

use std::collections::HashMap;

use rmn::autodiff::ReduceOp;
use rmn::model::{Batch, Model, ModelConfig, ModelDims};
use rmn::nn::Session;
use rmn::{grad_check, BatchNormState, ElemOp, Tape, Tensor, TensorError, Var};

use super::{rand_off_zero, rand_tensor, rng};

pub const EPS: f64 = 1e-6;

/// Reduces `y` to a scalar through fixed random weights so every output
/// element carries a distinct gradient.
fn weighted(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(rand_tensor(&mut rng(seed), &shape, 1.0));
    let p = tape.mul(y, w)?;
    let n = tape.value(p).len();
    let flat = tape.reshape(p, vec![n])?;
    tape.sum_all(flat)
}

fn check(inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>) -> f64 {
    grad_check(
        |t, v| {
            let y = f(t, v)?;
            if t.value(y).is_scalar() {
                Ok(y)
            } else {
                weighted(t, y, 99)
            }
        },
        inputs,
        EPS,
    )
    .unwrap()
}

/// Worst relative error of every differentiable primitive, by name.
pub fn primitive_errors() -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut r = rng(1);
    let x = rand_off_zero(&mut r, &[3, 4]);
    for op in [ElemOp::Relu, ElemOp::Tanh, ElemOp::Sigmoid, ElemOp::Softplus, ElemOp::Exp, ElemOp::Abs] {
        out.push((format!("{op:?}"), check(std::slice::from_ref(&x), |t, v| t.elementwise(op, v[0], None))));
    }
    let pos = x.map(|v| v.abs() + 0.1).unwrap();
    out.push(("Log".into(), check(&[pos], |t, v| t.log(v[0]))));

    let a = rand_tensor(&mut r, &[3, 4], 1.0);
    let b = rand_tensor(&mut r, &[3, 4], 1.0);
    for op in [ElemOp::Add, ElemOp::Sub, ElemOp::Mul] {
        out.push((format!("{op:?}"), check(&[a.clone(), b.clone()], |t, v| t.elementwise(op, v[0], Some(v[1])))));
    }
    let s = Tensor::scalar(0.7).unwrap();
    out.push(("mul by scalar tensor".into(), check(&[a.clone(), s], |t, v| t.mul(v[0], v[1]))));
    out.push(("add_scalar".into(), check(std::slice::from_ref(&a), |t, v| t.add_scalar(v[0], 2.5))));
    out.push(("mul_scalar".into(), check(std::slice::from_ref(&a), |t, v| t.mul_scalar(v[0], -1.5))));
    out.push(("rsub_scalar".into(), check(std::slice::from_ref(&a), |t, v| t.rsub_scalar(1.0, v[0]))));

    let m = rand_tensor(&mut r, &[3, 5], 1.0);
    let w = rand_tensor(&mut r, &[5, 2], 1.0);
    out.push(("matmul".into(), check(&[m.clone(), w], |t, v| t.matmul(v[0], v[1]))));
    out.push(("add_bias".into(), check(&[m.clone(), rand_tensor(&mut r, &[5], 1.0)], |t, v| t.add_bias(v[0], v[1]))));
    out.push(("reshape".into(), check(std::slice::from_ref(&m), |t, v| t.reshape(v[0], vec![5, 3]))));
    out.push(("slice_cols".into(), check(std::slice::from_ref(&m), |t, v| t.slice_cols(v[0], 1, 3))));
    let c = rand_tensor(&mut r, &[3, 2], 1.0);
    out.push(("concat cols".into(), check(&[m.clone(), c], |t, v| t.concat(&[v[0], v[1]], 1))));
    let d = rand_tensor(&mut r, &[2, 5], 1.0);
    out.push(("concat rows".into(), check(&[m, d], |t, v| t.concat(&[v[0], v[1]], 0))));

    let z = rand_tensor(&mut r, &[3, 4], 2.0);
    for axis in [0, 1] {
        out.push((format!("sum axis {axis}"), check(std::slice::from_ref(&z), |t, v| t.reduce(ReduceOp::Sum, v[0], axis))));
        out.push((format!("mean axis {axis}"), check(std::slice::from_ref(&z), |t, v| t.reduce(ReduceOp::Mean, v[0], axis))));
        out.push((format!("softmax axis {axis}"), check(std::slice::from_ref(&z), |t, v| t.softmax(v[0], axis))));
    }
    out.push(("cross_entropy".into(), check(&[z], |t, v| t.cross_entropy(v[0], &[1, 3, 0]))));

    let table = rand_tensor(&mut r, &[6, 3], 1.0);
    out.push(("gather_rows".into(), check(std::slice::from_ref(&table), |t, v| t.gather_rows(v[0], &[4, 0, 4, 2]))));
    out.push(("lookup".into(), check(std::slice::from_ref(&table), |t, v| t.lookup(v[0], &[1, 1, 5]))));
    let lengths = [2, 3, 1];
    out.push(("segment_sum".into(), check(std::slice::from_ref(&table), |t, v| t.segment_sum(v[0], &lengths))));
    let sw = rand_tensor(&mut r, &[6], 2.0);
    out.push(("segment_softmax".into(), check(std::slice::from_ref(&sw), |t, v| t.segment_softmax(v[0], &lengths))));
    out.push(("scale_rows".into(), check(&[table, sw], |t, v| t.scale_rows(v[0], v[1]))));

    let bx = rand_tensor(&mut r, &[5, 3], 1.0);
    let gamma = rand_tensor(&mut r, &[3], 1.0);
    let beta = rand_tensor(&mut r, &[3], 1.0);
    let inputs = [bx.clone(), gamma.clone(), beta.clone()];
    out.push((
        "batch_norm_train".into(),
        check(&inputs, |t, v| {
            let mut st = BatchNormState::new(3);
            t.batch_norm_train(v[0], v[1], v[2], &mut st)
        }),
    ));
    let mut st = BatchNormState::new(3);
    {
        let mut t = Tape::new();
        let (a, b, c) = (t.constant(bx), t.constant(gamma), t.constant(beta));
        t.batch_norm_train(a, b, c, &mut st).unwrap();
    }
    out.push(("batch_norm_eval".into(), check(&inputs, |t, v| t.batch_norm_eval(v[0], v[1], v[2], &st))));
    out
}

pub fn small_dims(match_fields: usize) -> ModelDims {
    ModelDims {
        vocab_size: 9,
        num_classes: 5,
        max_sentence_len: 4,
        max_question_len: 3,
        match_fields,
    }
}

/// Two episodes (3 and 2 sentences), or only the first when `single`.
pub fn small_batch(match_fields: usize, single: bool) -> Batch {
    let b = if single { 1 } else { 2 };
    let mut sentences = vec![vec![3, 4, 5, 0], vec![6, 7, 0, 0], vec![8, 3, 4, 5], vec![1, 2, 0, 0], vec![4, 4, 0, 0]];
    let mut lengths = vec![3, 2];
    let mut questions = vec![vec![3, 6, 0], vec![5, 1, 2]];
    let mut answers = vec![1, 4];
    if single {
        sentences.truncate(3);
        lengths.truncate(1);
        questions.truncate(1);
        answers.truncate(1);
    }
    let flags = (match_fields > 0).then(|| {
        let data = (0..b * 5 * match_fields).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect();
        Tensor::new(vec![b * 5, match_fields], data).unwrap()
    });
    Batch {
        sentences,
        lengths,
        questions,
        answers,
        tasks: vec![1; b],
        match_flags: flags,
    }
}

/// Worst relative error of the batch loss with respect to every parameter.
pub fn model_loss_error(config: ModelConfig, batch: &Batch, match_fields: usize) -> f64 {
    let model = Model::new(config, small_dims(match_fields)).unwrap();
    let names: Vec<String> = model.params.tensors().keys().cloned().collect();
    let inputs: Vec<Tensor> = model.params.tensors().values().cloned().collect();
    grad_check(
        |tape, vars| {
            let mut store = model.params.clone();
            let t = std::mem::take(tape);
            let bound: HashMap<String, Var> = names.iter().cloned().zip(vars.iter().copied()).collect();
            let mut s = Session::with_bindings(t, &mut store, bound);
            let (loss, _) = model.net.loss(&mut s, batch).map_err(|e| TensorError::Invalid(e.to_string()))?;
            *tape = s.into_tape();
            Ok(loss)
        },
        &inputs,
        EPS,
    )
    .unwrap()
}

/// Small two-hop layout used by the loss checks.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        word_dim: 4,
        hidden_dim: 3,
        g_layers: vec![5, 4, 1],
        f_layers: vec![6, 5],
        ..ModelConfig::default()
    }
}
