//! Alternative attention scorers and the pairwise Relation Network baseline,
//! plus a timing harness comparing how step cost grows with memory size.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::model::{row_owners, weighted_sum, Architecture, Batch, HopOutput, MemoryState, Model, ModelConfig, ModelDims};
use crate::nn::{affine, Activation, Mlp, ModelError, ParamStore, Result, Session};

/// How a hop scores memory rows against the relation vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureMapKind {
    /// `g_θ([m_i, r])` with the learned temperature; the default.
    Mlp,
    /// `rᵀ m_i`, residual relation update, memory mapped by `W^t`.
    InnerProduct,
    /// Inner product with a sigmoid gate on the relation update.
    GatedInnerProduct,
    /// `[m⊙r, |m−r|]` under two word tables, scored by an affine map.
    AbsDiffTwoEmbeddings,
}

impl FeatureMapKind {
    pub const ALL: [FeatureMapKind; 4] = [
        FeatureMapKind::Mlp,
        FeatureMapKind::InnerProduct,
        FeatureMapKind::GatedInnerProduct,
        FeatureMapKind::AbsDiffTwoEmbeddings,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureMapKind::Mlp => "mlp",
            FeatureMapKind::InnerProduct => "inner_product",
            FeatureMapKind::GatedInnerProduct => "gated_inner_product",
            FeatureMapKind::AbsDiffTwoEmbeddings => "absdiff_two_embeddings",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

pub fn map_name(hop: usize) -> String {
    format!("hop{hop}.map")
}

pub fn gate_prefix(hop: usize) -> String {
    format!("hop{hop}.gate")
}

pub fn score_prefix(hop: usize) -> String {
    format!("hop{hop}.score")
}

fn same_width(s: &Session, state: &MemoryState, op: &str) -> Result<usize> {
    let (dm, dr) = (s.value(state.memory).cols(), s.value(state.relation).cols());
    if dm != dr {
        return Err(ModelError::Dimension(format!(
            "{op} needs equal memory and relation widths, got {dm} and {dr}"
        )));
    }
    Ok(dm)
}

/// `α = softmax(rᵀ m_i)`, `r_next = Σ α_i m_i + r_prev`.
pub fn inner_product_hop(s: &mut Session, state: &MemoryState) -> Result<HopOutput> {
    let (w, alpha, o) = inner_product_read(s, state)?;
    let relation = s.tape.add(o, state.relation)?;
    Ok(HopOutput {
        w,
        alpha,
        beta: 1.0,
        relation,
    })
}

fn inner_product_read(s: &mut Session, state: &MemoryState) -> Result<(crate::Var, crate::Var, crate::Var)> {
    same_width(s, state, "inner product attention")?;
    let rep = s.tape.gather_rows(state.relation, &row_owners(&state.lengths))?;
    let prod = s.tape.mul(state.memory, rep)?;
    let w = s.tape.sum(prod, 1)?;
    let alpha = s.tape.segment_softmax(w, &state.lengths)?;
    let o = weighted_sum(&mut s.tape, state.memory, alpha, &state.lengths)?;
    Ok((w, alpha, o))
}

/// Inner-product read with `r_next = g⊙o + (1−g)⊙r_prev`,
/// `g = σ(affine(r_prev))`.
pub fn gated_inner_product_hop(s: &mut Session, state: &MemoryState, gate: &str) -> Result<HopOutput> {
    let (w, alpha, o) = inner_product_read(s, state)?;
    let pre = affine(s, state.relation, gate)?;
    let g = s.tape.sigmoid(pre)?;
    let go = s.tape.mul(g, o)?;
    let keep = s.tape.rsub_scalar(1.0, g)?;
    let kr = s.tape.mul(keep, state.relation)?;
    let relation = s.tape.add(go, kr)?;
    Ok(HopOutput {
        w,
        alpha,
        beta: 1.0,
        relation,
    })
}

/// Scores `affine([m⊙r, |m−r|, m₂⊙r, |m₂−r|])` where `m₂` are the same
/// sentences under a second word table; `r_next = Σ α_i m_i`.
pub fn absdiff_hop(s: &mut Session, state: &MemoryState, second: crate::Var, score: &str) -> Result<HopOutput> {
    same_width(s, state, "absdiff attention")?;
    let rep = s.tape.gather_rows(state.relation, &row_owners(&state.lengths))?;
    let mut feats = Vec::with_capacity(4);
    for m in [state.memory, second] {
        feats.push(s.tape.mul(m, rep)?);
        let d = s.tape.sub(m, rep)?;
        feats.push(s.tape.abs(d)?);
    }
    let x = s.tape.concat(&feats, 1)?;
    let w = affine(s, x, score)?;
    let n = s.value(w).rows();
    let w = s.tape.reshape(w, vec![n])?;
    let alpha = s.tape.segment_softmax(w, &state.lengths)?;
    let relation = weighted_sum(&mut s.tape, state.memory, alpha, &state.lengths)?;
    Ok(HopOutput {
        w,
        alpha,
        beta: 1.0,
        relation,
    })
}

/// Pairwise `g_θ` over `[m_i, m_j, q]` and the answer MLP on the summed
/// relations.
#[derive(Clone, Debug, PartialEq)]
pub struct RnParams {
    pub g: Mlp,
    pub f: Mlp,
}

impl RnParams {
    pub fn new(d_m: usize, d_q: usize, g_layers: &[usize], f_layers: &[usize], act: Activation, bn: bool) -> Result<Self> {
        let g = Mlp::new("rn.g", 2 * d_m + d_q, g_layers, act, bn)?;
        let f = Mlp::new("rn.f", g.output(), f_layers, act, bn)?;
        Ok(Self { g, f })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.g.init(store, rng);
        self.f.init(store, rng);
    }
}

/// Relation Network logits: `f(Σ_{i,j} g([m_i, m_j, q]))` over all ordered
/// pairs, self-pairs included.
pub fn rn_forward(s: &mut Session, memory: crate::Var, question: crate::Var, lengths: &[usize], p: &RnParams) -> Result<crate::Var> {
    let pairs: usize = lengths.iter().map(|n| n * n).sum();
    let (mut left, mut right, mut owner) = (Vec::with_capacity(pairs), Vec::with_capacity(pairs), Vec::with_capacity(pairs));
    let mut start = 0;
    for (b, &n) in lengths.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                left.push(start + i);
                right.push(start + j);
                owner.push(b);
            }
        }
        start += n;
    }
    let l = s.tape.gather_rows(memory, &left)?;
    let r = s.tape.gather_rows(memory, &right)?;
    let q = s.tape.gather_rows(question, &owner)?;
    let x = s.tape.concat(&[l, r, q], 1)?;
    let g = p.g.forward(s, x)?;
    let sq: Vec<usize> = lengths.iter().map(|n| n * n).collect();
    let pooled = s.tape.segment_sum(g, &sq)?;
    p.f.forward(s, pooled)
}

/// `g_θ` evaluations per episode: `n²` for the pairwise baseline, `T·n`
/// for the hop model.
pub fn count_pair_evaluations(arch: Architecture, n: usize, hops: usize) -> usize {
    match arch {
        Architecture::Rn => n * n,
        Architecture::Rmn => hops * n,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostRow {
    pub model: String,
    pub n: usize,
    pub pair_evals: usize,
    pub wall_ms: f64,
}

/// Random batch with `batch_size` episodes of `n` four-word sentences.
pub fn synthetic_batch(rng: &mut ChaCha8Rng, dims: &ModelDims, n: usize, batch_size: usize) -> Batch {
    let mut word = |len: usize| -> Vec<usize> { (0..len).map(|_| rng.gen_range(1..dims.vocab_size)).collect() };
    let sentences = (0..n * batch_size).map(|_| word(dims.max_sentence_len)).collect();
    let questions = (0..batch_size).map(|_| word(dims.max_question_len)).collect();
    Batch {
        sentences,
        lengths: vec![n; batch_size],
        questions,
        answers: (0..batch_size).map(|i| i % dims.num_classes).collect(),
        tasks: vec![1; batch_size],
        match_flags: None,
    }
}

/// Time one training step (forward and backward) per memory size, keeping
/// the fastest of `reps` runs.
pub fn step_cost_profile(models: &[(String, ModelConfig)], ns: &[usize], batch_size: usize, reps: usize) -> Result<Vec<CostRow>> {
    let mut rows = Vec::new();
    for (label, config) in models {
        let dims = ModelDims {
            vocab_size: 32,
            num_classes: *config.f_layers.last().unwrap_or(&1),
            max_sentence_len: 4,
            max_question_len: 4,
            match_fields: 0,
        };
        let mut model = Model::new(config.clone(), dims.clone())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for &n in ns {
            let batch = synthetic_batch(&mut rng, &dims, n, batch_size);
            model.step(&batch)?;
            let mut best = f64::INFINITY;
            for _ in 0..reps.max(1) {
                let t0 = Instant::now();
                model.step(&batch)?;
                best = best.min(t0.elapsed().as_secs_f64() * 1e3);
            }
            rows.push(CostRow {
                model: label.clone(),
                n,
                pair_evals: count_pair_evaluations(config.architecture, n, config.hops),
                wall_ms: best,
            });
        }
    }
    Ok(rows)
}

pub fn write_cost_csv<W: Write>(rows: &[CostRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}
