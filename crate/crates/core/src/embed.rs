//! Sentence and question encoders.
//!
//! All five encoders share one word table stored as `V × d` (row `w` is the
//! embedding of word `w`, i.e. column `w` of the `d × V` matrix `A`). Word
//! id 0 is padding: it is dropped by the bag-of-words encoders and masked
//! out of recurrent steps.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::nn::{uniform, ModelError, ParamStore, Result, Session};
use crate::tensor::Tensor;

pub const PAD: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    Sum,
    Position,
    Concat,
    Lstm,
    Gru,
}

impl EmbeddingKind {
    pub fn name(self) -> &'static str {
        match self {
            EmbeddingKind::Sum => "sum",
            EmbeddingKind::Position => "position",
            EmbeddingKind::Concat => "concat",
            EmbeddingKind::Lstm => "lstm",
            EmbeddingKind::Gru => "gru",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sum" => EmbeddingKind::Sum,
            "position" => EmbeddingKind::Position,
            "concat" | "concatenation" => EmbeddingKind::Concat,
            "lstm" => EmbeddingKind::Lstm,
            "gru" => EmbeddingKind::Gru,
            _ => return None,
        })
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, EmbeddingKind::Lstm | EmbeddingKind::Gru)
    }
}

/// `l[k][j] = (1 - j/n) - (k/d)(1 - 2j/n)` for 1-based `k ≤ d`, `j ≤ n`,
/// returned as a `d × n` tensor.
pub fn position_weights(d: usize, n: usize) -> Tensor {
    let mut data = Vec::with_capacity(d * n);
    for k in 1..=d {
        for j in 1..=n {
            let (k, j, d, n) = (k as f64, j as f64, d as f64, n as f64);
            data.push((1.0 - j / n) - (k / d) * (1.0 - 2.0 * j / n));
        }
    }
    Tensor::matrix(d, n, data).expect("positive extents")
}

fn strip_padding(ids: &[usize]) -> Result<Vec<usize>> {
    let words: Vec<usize> = ids.iter().copied().filter(|&w| w != PAD).collect();
    if words.is_empty() {
        return Err(ModelError::Input("empty sentence".into()));
    }
    Ok(words)
}

/// `m = Σ_j A x_j`.
pub fn embed_sum(tape: &mut Tape, table: Var, ids: &[usize]) -> Result<Var> {
    let words = strip_padding(ids)?;
    let rows = tape.lookup(table, &words)?;
    Ok(tape.sum(rows, 0)?)
}

/// `m = Σ_j l_j ⊙ A x_j`.
pub fn embed_position(tape: &mut Tape, table: Var, ids: &[usize]) -> Result<Var> {
    let words = strip_padding(ids)?;
    let d = tape.value(table).cols();
    let rows = tape.lookup(table, &words)?;
    let l = position_weights(d, words.len());
    let lt = transpose(&l);
    let lt = tape.constant(lt);
    let weighted = tape.mul(rows, lt)?;
    Ok(tape.sum(weighted, 0)?)
}

/// `m = [A x_1; …; A x_n; 0; …]`, zero-padded to `max_len` blocks.
pub fn embed_concat(tape: &mut Tape, table: Var, ids: &[usize], max_len: usize) -> Result<Var> {
    let words = strip_padding(ids)?;
    if words.len() > max_len {
        return Err(ModelError::Input(format!(
            "sentence of {} words exceeds max_len {max_len}",
            words.len()
        )));
    }
    let d = tape.value(table).cols();
    let rows = tape.lookup(table, &words)?;
    let flat = tape.reshape(rows, vec![words.len() * d])?;
    if words.len() == max_len {
        return Ok(flat);
    }
    let pad = tape.constant(Tensor::zeros(&[(max_len - words.len()) * d])?);
    Ok(tape.concat(&[flat, pad], 0)?)
}

/// Final hidden state of a recurrent cell over the embedded words.
pub fn embed_recurrent(s: &mut Session, table: &str, cell: &RecurrentCell, ids: &[usize]) -> Result<Var> {
    let words = strip_padding(ids)?;
    let t = s.param(table)?;
    let h = cell.run(s, t, &[words])?;
    Ok(s.tape.reshape(h, vec![cell.hidden])?)
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.at(i, j);
        }
    }
    Tensor::matrix(c, r, out).expect("same element count")
}

/// Gate weights of an LSTM or GRU cell, stored under `prefix`.
///
/// LSTM: `w_x [d, 4h]`, `w_h [h, 4h]`, `b [4h]`, gate order input, forget,
/// candidate, output. GRU: `w_x [d, 3h]`, `w_h [h, 3h]`, `b [3h]`,
/// `b_h [3h]`, gate order update, reset, candidate, with the reset gate
/// applied to the recurrent candidate term.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentCell {
    pub prefix: String,
    pub kind: EmbeddingKind,
    pub input: usize,
    pub hidden: usize,
}

impl RecurrentCell {
    pub fn new(prefix: impl Into<String>, kind: EmbeddingKind, input: usize, hidden: usize) -> Result<Self> {
        if !kind.is_recurrent() {
            return Err(ModelError::Input(format!("{} is not a recurrent kind", kind.name())));
        }
        Ok(Self {
            prefix: prefix.into(),
            kind,
            input,
            hidden,
        })
    }

    fn gates(&self) -> usize {
        match self.kind {
            EmbeddingKind::Lstm => 4,
            _ => 3,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let g = self.gates() * self.hidden;
        let sc = 1.0 / (self.hidden as f64).sqrt();
        let p = &self.prefix;
        store.insert(format!("{p}.w_x"), uniform(rng, &[self.input, g], sc));
        store.insert(format!("{p}.w_h"), uniform(rng, &[self.hidden, g], sc));
        store.insert(format!("{p}.b"), uniform(rng, &[g], sc));
        if self.kind == EmbeddingKind::Gru {
            store.insert(format!("{p}.b_h"), uniform(rng, &[g], sc));
        }
    }

    /// Runs the cell over every sentence from a zero state and returns the
    /// `[S, h]` matrix of final hidden states. Sentences must be padding-free
    /// and non-empty; shorter ones keep their state once they end.
    pub fn run(&self, s: &mut Session, table: Var, sentences: &[Vec<usize>]) -> Result<Var> {
        let n = sentences.len();
        let h = self.hidden;
        let max_len = sentences.iter().map(Vec::len).max().unwrap_or(0);
        if n == 0 || sentences.iter().any(Vec::is_empty) {
            return Err(ModelError::Input("empty sentence".into()));
        }
        let p = &self.prefix;
        let w_x = s.param(&format!("{p}.w_x"))?;
        let w_h = s.param(&format!("{p}.w_h"))?;
        let b = s.param(&format!("{p}.b"))?;
        let b_h = if self.kind == EmbeddingKind::Gru {
            Some(s.param(&format!("{p}.b_h"))?)
        } else {
            None
        };
        let mut hid = s.constant(Tensor::zeros(&[n, h])?);
        let mut cell = s.constant(Tensor::zeros(&[n, h])?);
        for t in 0..max_len {
            let ids: Vec<usize> = sentences.iter().map(|w| w.get(t).copied().unwrap_or(PAD)).collect();
            let x = s.tape.lookup(table, &ids)?;
            let active: Vec<f64> = sentences
                .iter()
                .flat_map(|w| std::iter::repeat_n(if t < w.len() { 1.0 } else { 0.0 }, h))
                .collect();
            let all_active = active.iter().all(|&v| v == 1.0);
            let (new_h, new_c) = match self.kind {
                EmbeddingKind::Lstm => self.lstm_step(&mut s.tape, x, hid, cell, w_x, w_h, b)?,
                _ => (self.gru_step(&mut s.tape, x, hid, w_x, w_h, b, b_h.expect("gru bias"))?, cell),
            };
            if all_active {
                hid = new_h;
                cell = new_c;
            } else {
                let keep: Vec<f64> = active.iter().map(|a| 1.0 - a).collect();
                let m = s.tape.constant(Tensor::matrix(n, h, active)?);
                let k = s.tape.constant(Tensor::matrix(n, h, keep)?);
                hid = blend(&mut s.tape, m, k, new_h, hid)?;
                if self.kind == EmbeddingKind::Lstm {
                    cell = blend(&mut s.tape, m, k, new_c, cell)?;
                }
            }
        }
        Ok(hid)
    }

    #[allow(clippy::too_many_arguments)]
    fn lstm_step(&self, tape: &mut Tape, x: Var, h: Var, c: Var, w_x: Var, w_h: Var, b: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        let xw = tape.matmul(x, w_x)?;
        let hw = tape.matmul(h, w_h)?;
        let pre = tape.add(xw, hw)?;
        let pre = tape.add_bias(pre, b)?;
        let i = tape.slice_cols(pre, 0, hd)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice_cols(pre, hd, hd)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice_cols(pre, 2 * hd, hd)?;
        let g = tape.tanh(g)?;
        let o = tape.slice_cols(pre, 3 * hd, hd)?;
        let o = tape.sigmoid(o)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c2 = tape.add(fc, ig)?;
        let tc = tape.tanh(c2)?;
        let h2 = tape.mul(o, tc)?;
        Ok((h2, c2))
    }

    #[allow(clippy::too_many_arguments)]
    fn gru_step(&self, tape: &mut Tape, x: Var, h: Var, w_x: Var, w_h: Var, b: Var, b_h: Var) -> Result<Var> {
        let hd = self.hidden;
        let xw = tape.matmul(x, w_x)?;
        let xw = tape.add_bias(xw, b)?;
        let hw = tape.matmul(h, w_h)?;
        let hw = tape.add_bias(hw, b_h)?;
        let xz = tape.slice_cols(xw, 0, hd)?;
        let hz = tape.slice_cols(hw, 0, hd)?;
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z)?;
        let xr = tape.slice_cols(xw, hd, hd)?;
        let hr = tape.slice_cols(hw, hd, hd)?;
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r)?;
        let xn = tape.slice_cols(xw, 2 * hd, hd)?;
        let hn = tape.slice_cols(hw, 2 * hd, hd)?;
        let rhn = tape.mul(r, hn)?;
        let n = tape.add(xn, rhn)?;
        let n = tape.tanh(n)?;
        // h' = (1 - z) n + z h
        let one_minus_z = tape.rsub_scalar(1.0, z)?;
        let a = tape.mul(one_minus_z, n)?;
        let zh = tape.mul(z, h)?;
        Ok(tape.add(a, zh)?)
    }
}

fn blend(tape: &mut Tape, m: Var, keep: Var, new: Var, old: Var) -> Result<Var> {
    let a = tape.mul(m, new)?;
    let b = tape.mul(keep, old)?;
    Ok(tape.add(a, b)?)
}

/// Batched encoder for one role (story sentences or question).
///
/// Story and question encoders share the word table but own separate
/// recurrent parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub kind: EmbeddingKind,
    pub table: String,
    pub word_dim: usize,
    pub max_len: usize,
    pub cell: Option<RecurrentCell>,
    /// When false, every position weight is 1 (position mode degrades to sum).
    pub position_weighting: bool,
}

impl Encoder {
    pub fn new(kind: EmbeddingKind, table: &str, word_dim: usize, hidden: usize, max_len: usize, rnn_prefix: &str) -> Result<Self> {
        let cell = if kind.is_recurrent() {
            Some(RecurrentCell::new(rnn_prefix, kind, word_dim, hidden)?)
        } else {
            None
        };
        if kind == EmbeddingKind::Concat && max_len == 0 {
            return Err(ModelError::Dimension("concat encoder needs max_len > 0".into()));
        }
        Ok(Self {
            kind,
            table: table.to_string(),
            word_dim,
            max_len,
            cell,
            position_weighting: true,
        })
    }

    pub fn width(&self) -> usize {
        match self.kind {
            EmbeddingKind::Sum | EmbeddingKind::Position => self.word_dim,
            EmbeddingKind::Concat => self.word_dim * self.max_len,
            EmbeddingKind::Lstm | EmbeddingKind::Gru => self.cell.as_ref().expect("recurrent cell").hidden,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        if let Some(c) = &self.cell {
            c.init(store, rng);
        }
    }

    /// Encodes `sentences` into an `[S, width]` matrix.
    pub fn encode(&self, s: &mut Session, sentences: &[Vec<usize>]) -> Result<Var> {
        self.encode_with_table(s, &self.table.clone(), sentences)
    }

    pub fn encode_with_table(&self, s: &mut Session, table: &str, sentences: &[Vec<usize>]) -> Result<Var> {
        let words: Vec<Vec<usize>> = sentences.iter().map(|w| strip_padding(w)).collect::<Result<_>>()?;
        let table = s.param(table)?;
        let d = self.word_dim;
        match self.kind {
            EmbeddingKind::Sum | EmbeddingKind::Position => {
                let flat: Vec<usize> = words.iter().flatten().copied().collect();
                let lengths: Vec<usize> = words.iter().map(Vec::len).collect();
                let rows = s.tape.lookup(table, &flat)?;
                let rows = if self.kind == EmbeddingKind::Position && self.position_weighting {
                    let mut w = Vec::with_capacity(flat.len() * d);
                    for n in &lengths {
                        let l = position_weights(d, *n);
                        for j in 0..*n {
                            w.extend((0..d).map(|k| l.at(k, j)));
                        }
                    }
                    let w = s.constant(Tensor::matrix(flat.len(), d, w)?);
                    s.tape.mul(rows, w)?
                } else {
                    rows
                };
                Ok(s.tape.segment_sum(rows, &lengths)?)
            }
            EmbeddingKind::Concat => {
                let flat: Vec<usize> = words.iter().flatten().copied().collect();
                if let Some(w) = words.iter().find(|w| w.len() > self.max_len) {
                    return Err(ModelError::Input(format!(
                        "sentence of {} words exceeds max_len {}",
                        w.len(),
                        self.max_len
                    )));
                }
                let rows = s.tape.lookup(table, &flat)?;
                let zero = s.constant(Tensor::zeros(&[1, d])?);
                let ext = s.tape.concat(&[rows, zero], 0)?;
                let zero_row = flat.len();
                let mut idx = Vec::with_capacity(words.len() * self.max_len);
                let mut offset = 0;
                for w in &words {
                    idx.extend(offset..offset + w.len());
                    idx.extend(std::iter::repeat_n(zero_row, self.max_len - w.len()));
                    offset += w.len();
                }
                let g = s.tape.gather_rows(ext, &idx)?;
                Ok(s.tape.reshape(g, vec![words.len(), self.max_len * d])?)
            }
            EmbeddingKind::Lstm | EmbeddingKind::Gru => {
                let cell = self.cell.as_ref().expect("recurrent cell");
                cell.run(s, table, &words)
            }
        }
    }
}
