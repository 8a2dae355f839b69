//! Batched tape computations against straightforward per-episode loops.
//! Each check returns the largest absolute deviation over its instances.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rmn::feature_map::{absdiff_hop, gated_inner_product_hop, inner_product_hop, rn_forward, RnParams};
use rmn::model::{attention_hop, memory_update, reason, HopParams, MemoryState};
use rmn::nn::{init_affine, Activation, Mlp, ParamStore, Session};
use rmn::{Tape, Tensor};

use super::{affine, cat, max_abs_diff, mlp, rand_tensor, rng, rows, softmax, softplus};

struct Instance {
    lengths: Vec<usize>,
    memory: Tensor,
    question: Tensor,
}

fn instance(r: &mut ChaCha8Rng, d_m: usize, d_q: usize) -> Instance {
    let b = r.gen_range(1..5);
    let lengths: Vec<usize> = (0..b).map(|_| r.gen_range(1..7)).collect();
    let n = lengths.iter().sum();
    Instance {
        memory: rand_tensor(r, &[n, d_m], 1.0),
        question: rand_tensor(r, &[b, d_q], 1.0),
        lengths,
    }
}

/// Row ranges of each episode.
fn segments(lengths: &[usize]) -> Vec<std::ops::Range<usize>> {
    let mut start = 0;
    lengths
        .iter()
        .map(|&n| {
            start += n;
            start - n..start
        })
        .collect()
}

fn act(r: &mut ChaCha8Rng) -> Activation {
    if r.gen_bool(0.5) {
        Activation::Relu
    } else {
        Activation::Tanh
    }
}

pub fn attention_hop_error(seed: u64, instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(seed);
    for k in 0..instances {
        let (d_m, d_q) = (r.gen_range(1..6), r.gen_range(1..6));
        let inst = instance(&mut r, d_m, d_q);
        let a = act(&mut r);
        let params = HopParams::new(0, d_m + d_q, &[7, 4, 1], a, false).unwrap();
        let mut store = ParamStore::new();
        params.init(&mut store, &mut rng(k));
        let z = r.gen_range(-3.0..3.0);
        store.insert(params.beta_z.clone(), Tensor::scalar(z).unwrap());

        let mut s = Session::eval(&store);
        let m = s.constant(inst.memory.clone());
        let q = s.constant(inst.question.clone());
        let state = MemoryState::new(m, q, inst.lengths.clone());
        let out = attention_hop(&mut s, &state, &params).unwrap();

        let beta = 1.0 + softplus(z);
        worst = worst.max((out.beta - beta).abs());
        let (mem, qs) = (rows(&inst.memory), rows(&inst.question));
        let mut alpha = Vec::new();
        let mut rel = Vec::new();
        for (b, seg) in segments(&inst.lengths).into_iter().enumerate() {
            let w: Vec<f64> = seg.clone().map(|i| mlp(&store, "hop0.g", 3, a, &cat(&[&mem[i], &qs[b]]))[0]).collect();
            let al = softmax(&w.iter().map(|v| beta * v).collect::<Vec<_>>());
            let mut rv = vec![0.0; d_m];
            for (j, i) in seg.enumerate() {
                for c in 0..d_m {
                    rv[c] += al[j] * mem[i][c];
                }
            }
            alpha.extend(al);
            rel.extend(rv);
        }
        worst = worst.max(max_abs_diff(s.value(out.alpha).data(), &alpha));
        worst = worst.max(max_abs_diff(s.value(out.relation).data(), &rel));
    }
    worst
}

pub fn memory_update_error(seed: u64, instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(seed);
    for _ in 0..instances {
        let (n, d) = (r.gen_range(1..10), r.gen_range(1..6));
        let m = rand_tensor(&mut r, &[n, d], 2.0);
        let al: Vec<f64> = (0..n).map(|_| r.gen_range(0.0..=1.0)).collect();
        let mut t = Tape::new();
        let mv = t.constant(m.clone());
        let av = t.constant(Tensor::vector(al.clone()).unwrap());
        let out = memory_update(&mut t, mv, av).unwrap();
        let mut want = Vec::new();
        for (i, a) in al.iter().enumerate() {
            want.extend(m.row(i).iter().map(|v| (1.0 - a) * v));
        }
        worst = worst.max(max_abs_diff(t.value(out).data(), &want));
    }
    worst
}

pub fn reason_error(seed: u64, instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(seed);
    for k in 0..instances {
        let (b, d_r, d_q, c) = (r.gen_range(1..5), r.gen_range(1..6), r.gen_range(1..6), r.gen_range(2..8));
        let a = act(&mut r);
        let f = Mlp::new("f", d_r + d_q, &[9, c], a, false).unwrap();
        let mut store = ParamStore::new();
        f.init(&mut store, &mut rng(100 + k));
        let rel = rand_tensor(&mut r, &[b, d_r], 1.0);
        let q = rand_tensor(&mut r, &[b, d_q], 1.0);
        let mut s = Session::eval(&store);
        let (rv, qv) = (s.constant(rel.clone()), s.constant(q.clone()));
        let out = reason(&mut s, rv, qv, &f).unwrap();
        let want: Vec<f64> = (0..b).flat_map(|i| mlp(&store, "f", 2, a, &cat(&[rel.row(i), q.row(i)]))).collect();
        worst = worst.max(max_abs_diff(s.value(out).data(), &want));
    }
    worst
}

pub fn rn_forward_error(seed: u64, instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(seed);
    for k in 0..instances {
        let (d_m, d_q) = (r.gen_range(1..5), r.gen_range(1..5));
        let inst = instance(&mut r, d_m, d_q);
        let a = act(&mut r);
        let p = RnParams::new(d_m, d_q, &[6, 5], &[7, 3], a, false).unwrap();
        let mut store = ParamStore::new();
        p.init(&mut store, &mut rng(200 + k));
        let mut s = Session::eval(&store);
        let (m, q) = (s.constant(inst.memory.clone()), s.constant(inst.question.clone()));
        let out = rn_forward(&mut s, m, q, &inst.lengths, &p).unwrap();

        let (mem, qs) = (rows(&inst.memory), rows(&inst.question));
        let mut want = Vec::new();
        for (b, seg) in segments(&inst.lengths).into_iter().enumerate() {
            let mut pooled = vec![0.0; 5];
            for i in seg.clone() {
                for j in seg.clone() {
                    let g = mlp(&store, "rn.g", 2, a, &cat(&[&mem[i], &mem[j], &qs[b]]));
                    for (acc, v) in pooled.iter_mut().zip(g) {
                        *acc += v;
                    }
                }
            }
            want.extend(mlp(&store, "rn.f", 2, a, &pooled));
        }
        worst = worst.max(max_abs_diff(s.value(out).data(), &want));
    }
    worst
}

/// Per-episode `softmax(r·m_i)` and `Σ α_i m_i`.
fn dot_read(mem: &[Vec<f64>], r: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w: Vec<f64> = mem.iter().map(|m| m.iter().zip(r).map(|(a, b)| a * b).sum()).collect();
    let al = softmax(&w);
    let mut o = vec![0.0; r.len()];
    for (m, a) in mem.iter().zip(&al) {
        for (oc, mc) in o.iter_mut().zip(m) {
            *oc += a * mc;
        }
    }
    (al, o)
}

pub fn inner_product_hops_error(seed: u64, instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(seed);
    for k in 0..instances {
        let d = r.gen_range(1..6);
        let inst = instance(&mut r, d, d);
        let mut store = ParamStore::new();
        init_affine(&mut store, &mut rng(300 + k), "gate", d, d);
        let mut s = Session::eval(&store);
        let (m, q) = (s.constant(inst.memory.clone()), s.constant(inst.question.clone()));
        let state = MemoryState::new(m, q, inst.lengths.clone());
        let plain = inner_product_hop(&mut s, &state).unwrap();
        let gated = gated_inner_product_hop(&mut s, &state, "gate").unwrap();

        let (mem, qs) = (rows(&inst.memory), rows(&inst.question));
        let (mut alpha, mut rp, mut rg) = (Vec::new(), Vec::new(), Vec::new());
        for (b, seg) in segments(&inst.lengths).into_iter().enumerate() {
            let (al, o) = dot_read(&mem[seg], &qs[b]);
            let g: Vec<f64> = affine(&store, "gate", &qs[b]).iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
            alpha.extend(al);
            rp.extend(o.iter().zip(&qs[b]).map(|(o, q)| o + q));
            rg.extend((0..d).map(|c| g[c] * o[c] + (1.0 - g[c]) * qs[b][c]));
        }
        worst = worst.max(max_abs_diff(s.value(plain.alpha).data(), &alpha));
        worst = worst.max(max_abs_diff(s.value(gated.alpha).data(), &alpha));
        worst = worst.max(max_abs_diff(s.value(plain.relation).data(), &rp));
        worst = worst.max(max_abs_diff(s.value(gated.relation).data(), &rg));
    }
    worst
}

pub fn absdiff_hop_error(seed: u64, instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut r = rng(seed);
    for k in 0..instances {
        let d = r.gen_range(1..6);
        let inst = instance(&mut r, d, d);
        let n = inst.memory.rows();
        let second = rand_tensor(&mut r, &[n, d], 1.0);
        let mut store = ParamStore::new();
        init_affine(&mut store, &mut rng(400 + k), "score", 4 * d, 1);
        let mut s = Session::eval(&store);
        let (m, q, m2) = (
            s.constant(inst.memory.clone()),
            s.constant(inst.question.clone()),
            s.constant(second.clone()),
        );
        let state = MemoryState::new(m, q, inst.lengths.clone());
        let out = absdiff_hop(&mut s, &state, m2, "score").unwrap();

        let (mem, mem2, qs) = (rows(&inst.memory), rows(&second), rows(&inst.question));
        let (mut alpha, mut rel) = (Vec::new(), Vec::new());
        for (b, seg) in segments(&inst.lengths).into_iter().enumerate() {
            let q = &qs[b];
            let w: Vec<f64> = seg
                .clone()
                .map(|i| {
                    let mut x = Vec::new();
                    for m in [&mem[i], &mem2[i]] {
                        x.extend(m.iter().zip(q).map(|(a, b)| a * b));
                        x.extend(m.iter().zip(q).map(|(a, b)| (a - b).abs()));
                    }
                    affine(&store, "score", &x)[0]
                })
                .collect();
            let al = softmax(&w);
            let mut o = vec![0.0; d];
            for (j, i) in seg.enumerate() {
                for c in 0..d {
                    o[c] += al[j] * mem[i][c];
                }
            }
            alpha.extend(al);
            rel.extend(o);
        }
        worst = worst.max(max_abs_diff(s.value(out.alpha).data(), &alpha));
        worst = worst.max(max_abs_diff(s.value(out.relation).data(), &rel));
    }
    worst
}
