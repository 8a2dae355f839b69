//! The Relation Memory Network: embedding, T attention hops with a learned
//! temperature, erasure of attended memory between hops, and an MLP answer
//! head.
//!
//! Everything is batched over episodes. Memory rows of all episodes in a
//! batch are stacked into one `[N, d_m]` matrix and `lengths[b]` says how
//! many consecutive rows belong to episode `b`; per-episode softmaxes and
//! sums run over those segments. This keeps batch norm inside the MLPs
//! free of padding rows.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{softplus, Tape, Var};
use crate::embed::{EmbeddingKind, Encoder};
use crate::feature_map::{self, FeatureMapKind, RnParams};
use crate::nn::{init_affine, uniform, Activation, Mlp, ModelError, ParamStore, Result, Session};
use crate::tensor::Tensor;

/// `β(z) = 1 + ln(1 + e^z)`, always strictly above 1 for finite `z`.
pub fn beta_transform(z: f64) -> f64 {
    1.0 + softplus(z)
}

/// Episode index of every stacked memory row.
pub fn row_owners(lengths: &[usize]) -> Vec<usize> {
    lengths
        .iter()
        .enumerate()
        .flat_map(|(b, &n)| std::iter::repeat_n(b, n))
        .collect()
}

/// Memory, question and current relation vector for one hop.
#[derive(Clone, Debug)]
pub struct MemoryState {
    /// `[N, d_m]`, rows `m_i^t` of every episode in the batch.
    pub memory: Var,
    /// `[B, d_q]`.
    pub question: Var,
    /// `[B, d_r]`; equals `question` before the first hop.
    pub relation: Var,
    pub hop: usize,
    pub lengths: Vec<usize>,
}

impl MemoryState {
    pub fn new(memory: Var, question: Var, lengths: Vec<usize>) -> Self {
        Self {
            memory,
            question,
            relation: question,
            hop: 0,
            lengths,
        }
    }
}

/// Parameters of one MLP attention hop.
#[derive(Clone, Debug, PartialEq)]
pub struct HopParams {
    pub g: Mlp,
    /// Name of the scalar `z` with `β = 1 + softplus(z)`.
    pub beta_z: String,
}

impl HopParams {
    pub fn new(hop: usize, input: usize, widths: &[usize], activation: Activation, batch_norm: bool) -> Result<Self> {
        if widths.last() != Some(&1) {
            return Err(ModelError::Dimension(format!(
                "attention MLP must end in one unit, got {widths:?}"
            )));
        }
        Ok(Self {
            g: Mlp::new(format!("hop{hop}.g"), input, widths, activation, batch_norm)?,
            beta_z: format!("hop{hop}.beta_z"),
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.g.init(store, rng);
        store.insert(self.beta_z.clone(), Tensor::scalar(0.0).expect("scalar"));
    }
}

/// Tape handles produced by one hop.
#[derive(Clone, Copy, Debug)]
pub struct HopOutput {
    /// Raw scores `w_i`, `[N]`.
    pub w: Var,
    /// Normalized weights `α_i`, `[N]`.
    pub alpha: Var,
    /// Temperature used for this hop (1 for unscaled variants).
    pub beta: f64,
    /// `[B, d_m]`.
    pub relation: Var,
}

/// `w_i = g([m_i, r_prev])`, `α = softmax(β w)` per episode,
/// `r_next = Σ_i α_i m_i`.
pub fn attention_hop(s: &mut Session, state: &MemoryState, params: &HopParams) -> Result<HopOutput> {
    let d_m = s.value(state.memory).cols();
    let d_r = s.value(state.relation).cols();
    if params.g.input != d_m + d_r {
        return Err(ModelError::Dimension(format!(
            "{} takes {} inputs but [m, r] has {} + {}",
            params.g.prefix, params.g.input, d_m, d_r
        )));
    }
    let owners = row_owners(&state.lengths);
    let rep = s.tape.gather_rows(state.relation, &owners)?;
    let x = s.tape.concat(&[state.memory, rep], 1)?;
    let w = params.g.forward(s, x)?;
    let n = s.value(w).rows();
    let w = s.tape.reshape(w, vec![n])?;
    let z = s.param(&params.beta_z)?;
    let sp = s.tape.softplus(z)?;
    let beta = s.tape.add_scalar(sp, 1.0)?;
    let beta_value = s.value(beta).item();
    let scaled = s.tape.mul(w, beta)?;
    let alpha = s.tape.segment_softmax(scaled, &state.lengths)?;
    let relation = weighted_sum(&mut s.tape, state.memory, alpha, &state.lengths)?;
    Ok(HopOutput {
        w,
        alpha,
        beta: beta_value,
        relation,
    })
}

/// `Σ_i α_i m_i` within each episode segment.
pub fn weighted_sum(tape: &mut Tape, memory: Var, alpha: Var, lengths: &[usize]) -> Result<Var> {
    let scaled = tape.scale_rows(memory, alpha)?;
    Ok(tape.segment_sum(scaled, lengths)?)
}

/// `m_i ← (1 - α_i) m_i`.
pub fn memory_update(tape: &mut Tape, memory: Var, alpha: Var) -> Result<Var> {
    if let Some(a) = tape.value(alpha).data().iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(ModelError::Input(format!("attention weight {a} outside [0, 1]")));
    }
    let keep = tape.rsub_scalar(1.0, alpha)?;
    Ok(tape.scale_rows(memory, keep)?)
}

/// Logits of `f_φ([r, q])`; apply a softmax for the answer distribution.
pub fn reason(s: &mut Session, relation: Var, question: Var, f: &Mlp) -> Result<Var> {
    let (dr, dq) = (s.value(relation).cols(), s.value(question).cols());
    if f.input != dr + dq {
        return Err(ModelError::Dimension(format!(
            "{} takes {} inputs but [r, q] has {dr} + {dq}",
            f.prefix, f.input
        )));
    }
    let x = s.tape.concat(&[relation, question], 1)?;
    f.forward(s, x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    Rmn,
    Rn,
}

impl Architecture {
    pub fn name(self) -> &'static str {
        match self {
            Architecture::Rmn => "rmn",
            Architecture::Rn => "rn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rmn" => Some(Architecture::Rmn),
            "rn" => Some(Architecture::Rn),
            _ => None,
        }
    }
}

/// Architecture choices independent of the dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub feature_map: FeatureMapKind,
    pub embedding: EmbeddingKind,
    pub word_dim: usize,
    /// Recurrent encoder width (ignored by bag-of-words encoders).
    pub hidden_dim: usize,
    pub hops: usize,
    /// Attention MLP widths, last must be 1. For the RN baseline this is the
    /// pairwise `g_θ` and its last width is the relation vector size.
    pub g_layers: Vec<usize>,
    /// Answer MLP widths, last must equal the number of answer classes.
    pub f_layers: Vec<usize>,
    pub activation: Activation,
    pub batch_norm: bool,
    pub match_features: bool,
    /// Half-width of the uniform word-table init.
    pub embed_init: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Joint story setup: 32-d words, 32-unit LSTMs, g = 256/128/1,
    /// f = 512/512/159, ReLU, batch norm, two hops.
    fn default() -> Self {
        Self {
            architecture: Architecture::Rmn,
            feature_map: FeatureMapKind::Mlp,
            embedding: EmbeddingKind::Lstm,
            word_dim: 32,
            hidden_dim: 32,
            hops: 2,
            g_layers: vec![256, 128, 1],
            f_layers: vec![512, 512, 159],
            activation: Activation::Relu,
            batch_norm: true,
            match_features: false,
            embed_init: 1.0,
            seed: 1,
        }
    }
}

/// Dataset-derived sizes the network is built against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub num_classes: usize,
    pub max_sentence_len: usize,
    pub max_question_len: usize,
    /// Number of match-type fields per candidate (0 disables the term).
    pub match_fields: usize,
}

/// Probabilities over answer classes for one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct AnswerDistribution {
    pub probs: Vec<f64>,
}

impl AnswerDistribution {
    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
            .0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HopRecord {
    pub w: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: f64,
}

/// Per-hop attention of one episode.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AttentionTrace {
    pub hops: Vec<HopRecord>,
}

/// A stacked batch of encoded episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// Memory sentences of all episodes, episode-major.
    pub sentences: Vec<Vec<usize>>,
    /// Number of memory sentences per episode.
    pub lengths: Vec<usize>,
    pub questions: Vec<Vec<usize>>,
    pub answers: Vec<usize>,
    pub tasks: Vec<u32>,
    /// `[B * C, F]` match-type bits, present for dialog with match features.
    pub match_flags: Option<Tensor>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }
}

/// Immutable layout of the network; tensors live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub story: Encoder,
    pub question: Encoder,
    pub hops: Vec<HopParams>,
    pub f: Mlp,
    pub rn: Option<RnParams>,
}

pub const WORD_TABLE: &str = "embed.A";
pub const SECOND_TABLE: &str = "embed.A2";
pub const MATCH_WEIGHTS: &str = "match.w";

/// Output of a batched forward pass.
pub struct Forward {
    pub logits: Var,
    pub traces: Vec<AttentionTrace>,
    /// Number of `g_θ` evaluations performed (rows or pairs).
    pub g_evaluations: usize,
}

impl Network {
    pub fn new(config: ModelConfig, dims: ModelDims) -> Result<Self> {
        if config.hops == 0 {
            return Err(ModelError::Dimension("hop count must be at least 1".into()));
        }
        if config.f_layers.last() != Some(&dims.num_classes) {
            return Err(ModelError::Dimension(format!(
                "answer MLP ends in {:?} units but the corpus has {} answer classes",
                config.f_layers.last(),
                dims.num_classes
            )));
        }
        let story = Encoder::new(config.embedding, WORD_TABLE, config.word_dim, config.hidden_dim, dims.max_sentence_len, "story_rnn")?;
        let question = Encoder::new(config.embedding, WORD_TABLE, config.word_dim, config.hidden_dim, dims.max_question_len, "question_rnn")?;
        let (d_m, d_q) = (story.width(), question.width());
        let act = config.activation;
        let bn = config.batch_norm;

        let mut hops = Vec::new();
        let mut rn = None;
        let f_input;
        match config.architecture {
            Architecture::Rn => {
                let p = RnParams::new(d_m, d_q, &config.g_layers, &config.f_layers, act, bn)?;
                f_input = p.g.output();
                rn = Some(p);
            }
            Architecture::Rmn => {
                if config.feature_map == FeatureMapKind::Mlp {
                    for t in 0..config.hops {
                        let d_r = if t == 0 { d_q } else { d_m };
                        hops.push(HopParams::new(t, d_m + d_r, &config.g_layers, act, bn)?);
                    }
                } else if d_m != d_q {
                    return Err(ModelError::Dimension(format!(
                        "{} attention needs equal memory and question widths, got {d_m} and {d_q}",
                        config.feature_map.name()
                    )));
                }
                f_input = d_m + d_q;
            }
        }
        let f = match &rn {
            Some(p) => p.f.clone(),
            None => Mlp::new("f", f_input, &config.f_layers, act, bn)?,
        };
        Ok(Self {
            config,
            dims,
            story,
            question,
            hops,
            f,
            rn,
        })
    }

    pub fn init(&self, rng: &mut ChaCha8Rng) -> ParamStore {
        let mut store = ParamStore::new();
        let c = &self.config;
        store.insert(WORD_TABLE, uniform(rng, &[self.dims.vocab_size, c.word_dim], c.embed_init));
        self.story.init(&mut store, rng);
        self.question.init(&mut store, rng);
        match &self.rn {
            Some(p) => p.init(&mut store, rng),
            None => {
                for h in &self.hops {
                    h.init(&mut store, rng);
                }
                let d = self.story.width();
                match c.feature_map {
                    FeatureMapKind::Mlp => {}
                    FeatureMapKind::InnerProduct | FeatureMapKind::GatedInnerProduct => {
                        for t in 0..c.hops {
                            store.insert(feature_map::map_name(t), Tensor::identity(d).expect("identity"));
                            if c.feature_map == FeatureMapKind::GatedInnerProduct {
                                init_affine(&mut store, rng, &feature_map::gate_prefix(t), d, d);
                            }
                        }
                    }
                    FeatureMapKind::AbsDiffTwoEmbeddings => {
                        store.insert(SECOND_TABLE, uniform(rng, &[self.dims.vocab_size, c.word_dim], c.embed_init));
                        for t in 0..c.hops {
                            init_affine(&mut store, rng, &feature_map::score_prefix(t), 4 * d, 1);
                        }
                    }
                }
                self.f.init(&mut store, rng);
            }
        }
        if c.match_features && self.dims.match_fields > 0 {
            store.insert(MATCH_WEIGHTS, Tensor::zeros(&[self.dims.match_fields, 1]).expect("shape"));
        }
        store
    }

    pub fn embed(&self, s: &mut Session, batch: &Batch) -> Result<(Var, Var)> {
        if batch.is_empty() || batch.lengths.contains(&0) {
            return Err(ModelError::Input("every episode needs at least one memory sentence".into()));
        }
        if batch.lengths.iter().sum::<usize>() != batch.sentences.len() || batch.questions.len() != batch.len() {
            return Err(ModelError::Input("batch lengths disagree with its contents".into()));
        }
        let m = self.story.encode(s, &batch.sentences)?;
        let q = self.question.encode(s, &batch.questions)?;
        Ok((m, q))
    }

    pub fn forward(&self, s: &mut Session, batch: &Batch) -> Result<Forward> {
        let (m, q) = self.embed(s, batch)?;
        let b = batch.len();
        let mut traces = vec![AttentionTrace::default(); b];
        let (relation, g_evaluations) = match &self.rn {
            Some(p) => {
                let logits = feature_map::rn_forward(s, m, q, &batch.lengths, p)?;
                let pairs = batch.lengths.iter().map(|n| n * n).sum();
                let logits = self.add_match_term(s, logits, batch)?;
                return Ok(Forward {
                    logits,
                    traces,
                    g_evaluations: pairs,
                });
            }
            None => self.run_hops(s, batch, m, q, &mut traces)?,
        };
        let logits = reason(s, relation, q, &self.f)?;
        let logits = self.add_match_term(s, logits, batch)?;
        Ok(Forward {
            logits,
            traces,
            g_evaluations,
        })
    }

    fn run_hops(&self, s: &mut Session, batch: &Batch, m: Var, q: Var, traces: &mut [AttentionTrace]) -> Result<(Var, usize)> {
        let c = &self.config;
        let mut state = MemoryState::new(m, q, batch.lengths.clone());
        let second = if c.feature_map == FeatureMapKind::AbsDiffTwoEmbeddings {
            Some(self.story.encode_with_table(s, SECOND_TABLE, &batch.sentences)?)
        } else {
            None
        };
        let mut evals = 0;
        for t in 0..c.hops {
            let out = match c.feature_map {
                FeatureMapKind::Mlp => {
                    evals += batch.sentences.len();
                    attention_hop(s, &state, &self.hops[t])?
                }
                FeatureMapKind::InnerProduct => feature_map::inner_product_hop(s, &state)?,
                FeatureMapKind::GatedInnerProduct => {
                    feature_map::gated_inner_product_hop(s, &state, &feature_map::gate_prefix(t))?
                }
                FeatureMapKind::AbsDiffTwoEmbeddings => feature_map::absdiff_hop(
                    s,
                    &state,
                    second.expect("second embedding"),
                    &feature_map::score_prefix(t),
                )?,
            };
            record_trace(s, &out, &batch.lengths, traces);
            let last = t + 1 == c.hops;
            if !last {
                state.memory = match c.feature_map {
                    FeatureMapKind::Mlp => memory_update(&mut s.tape, state.memory, out.alpha)?,
                    FeatureMapKind::InnerProduct | FeatureMapKind::GatedInnerProduct => {
                        let w = s.param(&feature_map::map_name(t))?;
                        s.tape.matmul(state.memory, w)?
                    }
                    FeatureMapKind::AbsDiffTwoEmbeddings => state.memory,
                };
            }
            state.relation = out.relation;
            state.hop = t + 1;
        }
        Ok((state.relation, evals))
    }

    fn add_match_term(&self, s: &mut Session, logits: Var, batch: &Batch) -> Result<Var> {
        if !(self.config.match_features && self.dims.match_fields > 0) {
            return Ok(logits);
        }
        let flags = batch
            .match_flags
            .as_ref()
            .ok_or_else(|| ModelError::Input("model uses match features but batch has none".into()))?;
        let (b, c) = (batch.len(), self.dims.num_classes);
        if flags.shape() != [b * c, self.dims.match_fields] {
            return Err(ModelError::Dimension(format!(
                "match flags {:?}, expected [{}, {}]",
                flags.shape(),
                b * c,
                self.dims.match_fields
            )));
        }
        let fv = s.constant(flags.clone());
        let w = s.param(MATCH_WEIGHTS)?;
        let bonus = s.tape.matmul(fv, w)?;
        let bonus = s.tape.reshape(bonus, vec![b, c])?;
        Ok(s.tape.add(logits, bonus)?)
    }

    /// Training loss on `batch`: mean cross-entropy of the gold answers.
    pub fn loss(&self, s: &mut Session, batch: &Batch) -> Result<(Var, Forward)> {
        let fwd = self.forward(s, batch)?;
        let loss = s.tape.cross_entropy(fwd.logits, &batch.answers)?;
        Ok((loss, fwd))
    }
}

fn record_trace(s: &Session, out: &HopOutput, lengths: &[usize], traces: &mut [AttentionTrace]) {
    let (w, a) = (s.value(out.w).data(), s.value(out.alpha).data());
    let mut start = 0;
    for (trace, &n) in traces.iter_mut().zip(lengths) {
        trace.hops.push(HopRecord {
            w: w[start..start + n].to_vec(),
            alpha: a[start..start + n].to_vec(),
            beta: out.beta,
        });
        start += n;
    }
}

/// A network layout together with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub net: Network,
    pub params: ParamStore,
}

pub struct StepOutput {
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor>,
    pub correct: usize,
}

impl Model {
    pub fn new(config: ModelConfig, dims: ModelDims) -> Result<Self> {
        let net = Network::new(config, dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(net.config.seed);
        let params = net.init(&mut rng);
        Ok(Self { net, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    pub fn dims(&self) -> &ModelDims {
        &self.net.dims
    }

    /// Train-mode forward and backward on one batch.
    pub fn step(&mut self, batch: &Batch) -> Result<StepOutput> {
        let mut s = Session::train(&mut self.params);
        let (loss, fwd) = self.net.loss(&mut s, batch)?;
        let correct = count_correct(s.value(fwd.logits), &batch.answers);
        let grads = s.tape.backward(loss)?;
        Ok(StepOutput {
            loss: s.value(loss).item(),
            grads: s.param_grads(&grads),
            correct,
        })
    }

    /// Eval-mode answer distributions and attention traces; never mutates
    /// the model.
    pub fn predict(&self, batch: &Batch) -> Result<(Vec<AnswerDistribution>, Vec<AttentionTrace>, f64)> {
        let mut s = Session::eval(&self.params);
        let (loss, fwd) = self.net.loss(&mut s, batch)?;
        let probs = s.tape.softmax(fwd.logits, 1)?;
        let p = s.value(probs);
        let dists = (0..batch.len())
            .map(|r| AnswerDistribution {
                probs: p.row(r).to_vec(),
            })
            .collect();
        Ok((dists, fwd.traces, s.value(loss).item()))
    }

    pub fn num_parameters(&self) -> usize {
        self.params.param_count()
    }
}

/// Number of rows whose argmax logit equals the target.
pub fn count_correct(logits: &Tensor, targets: &[usize]) -> usize {
    targets
        .iter()
        .enumerate()
        .filter(|(r, &t)| {
            let row = logits.row(*r);
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
                .0;
            best == t
        })
        .count()
}
