//! Reverse-mode gradients against central differences for a few tape
//! primitives and for a small softmax-attention read.
//!
//! cargo run --release --example autodiff_gradcheck

use rmn::{grad_check, Tape, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::matrix(2, 3, vec![0.3, -1.2, 0.8, 1.5, -0.4, 0.1])?;
    let w = Tensor::matrix(3, 2, vec![0.2, -0.7, 1.1, 0.4, -0.3, 0.9])?;
    let scores = Tensor::vector(vec![0.1, 2.0, -1.0, 0.5, 0.3])?;
    let memory = Tensor::matrix(5, 2, vec![1.0, 0.0, 0.5, -0.5, -1.0, 2.0, 0.3, 0.3, 0.0, 1.0])?;
    let eps = 1e-6;

    let checks: Vec<(&str, f64)> = vec![
        ("tanh(x W)", grad_check(|t: &mut Tape, v| { let y = t.matmul(v[0], v[1])?; let y = t.tanh(y)?; t.sum_all(y) }, &[x.clone(), w.clone()], eps)?),
        ("softplus", grad_check(|t: &mut Tape, v| { let y = t.softplus(v[0])?; t.sum_all(y) }, std::slice::from_ref(&x), eps)?),
        ("cross entropy", grad_check(|t: &mut Tape, v| { let y = t.matmul(v[0], v[1])?; t.cross_entropy(y, &[1, 0]) }, &[x, w], eps)?),
        // Two episodes with 3 and 2 sentences: per-episode softmax, then a
        // weighted read of the stacked memory.
        ("segment attention read", grad_check(|t: &mut Tape, v| {
            let a = t.segment_softmax(v[0], &[3, 2])?;
            let m = t.scale_rows(v[1], a)?;
            let r = t.segment_sum(m, &[3, 2])?;
            let r = t.tanh(r)?;
            t.sum_all(r)
        }, &[scores, memory], eps)?),
    ];
    for (name, err) in checks {
        println!("{name:<24} max relative error {err:.2e}");
    }
    Ok(())
}
