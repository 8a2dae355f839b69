//! `RMN1` checkpoint files.
//!
//! ```text
//! "RMN1"  u32 version  u32 text_len  text (UTF-8)  sha256 (32 bytes)
//! u32 array_count, then per array:
//!     u32 name_len  name  u32 rank  u32 dims..  f64 data.. (little-endian)
//! ```
//!
//! The text block holds the training config, model dimensions, optimizer
//! and RNG state, batch-norm counters and the metrics history. The digest
//! covers the text block and every array byte, so any corruption is caught
//! before anything is returned.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::BatchNormState;
use crate::model::{Model, ModelDims, Network};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

use super::{AdamState, MetricRow, Result, TrainConfig, TrainError, TrainState};

pub const MAGIC: &[u8; 4] = b"RMN1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub dims: ModelDims,
    pub params: ParamStore,
    pub adam: AdamState,
    pub state: TrainState,
    pub history: Vec<MetricRow>,
    pub corpus_digest: String,
}

fn bad(msg: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Rebuilds the model, checking that every parameter the layout needs is
    /// present with the right shape and nothing else is.
    pub fn model(&self) -> Result<Model> {
        let net = Network::new(self.config.model_config(&self.dims), self.dims.clone())?;
        let fresh = net.init(&mut ChaCha8Rng::seed_from_u64(0));
        let want: Vec<(&String, &[usize])> = fresh.tensors().iter().map(|(k, t)| (k, t.shape())).collect();
        let have: Vec<(&String, &[usize])> = self.params.tensors().iter().map(|(k, t)| (k, t.shape())).collect();
        if want != have {
            return Err(bad("parameter names or shapes do not match the configured network"));
        }
        let norms_ok = fresh.norms().len() == self.params.norms().len()
            && fresh
                .norms()
                .iter()
                .zip(self.params.norms())
                .all(|((a, x), (b, y))| a == b && x.features() == y.features());
        if !norms_ok {
            return Err(bad("batch-norm layers do not match the configured network"));
        }
        Ok(Model {
            net,
            params: self.params.clone(),
        })
    }

    fn text(&self) -> String {
        let mut s = String::from("[config]\n");
        s.push_str(&self.config.to_text());
        let d = &self.dims;
        let _ = write!(
            s,
            "[model]\nvocab_size = {}\nnum_classes = {}\nmax_sentence_len = {}\nmax_question_len = {}\nmatch_fields = {}\n",
            d.vocab_size, d.num_classes, d.max_sentence_len, d.max_question_len, d.match_fields
        );
        let st = &self.state;
        let _ = write!(
            s,
            "[state]\nepoch = {}\nbest_valid = {:?}\nbad_epochs = {}\nstopped = {}\nrng_seed = {}\nrng_stream = {}\nrng_word_pos = {}\nadam_step = {}\nadam = {:?},{:?},{:?}\ncorpus_digest = {}\n",
            st.epoch,
            st.best_valid,
            st.bad_epochs,
            st.stopped,
            hex::encode(st.rng.get_seed()),
            st.rng.get_stream(),
            st.rng.get_word_pos(),
            self.adam.step,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps,
            self.corpus_digest
        );
        s.push_str("[norms]\n");
        for (k, n) in self.params.norms() {
            let _ = writeln!(s, "{k} = {},{:?},{:?}", n.updates, n.momentum, n.eps);
        }
        s.push_str("[metrics]\n");
        for r in &self.history {
            let _ = writeln!(s, "{},{},{},{:?},{:?}", r.epoch, r.split, r.task, r.error_pct, r.loss);
        }
        s
    }

    fn arrays(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (k, t) in self.params.tensors() {
            out.push((format!("param/{k}"), t.shape().to_vec(), t.data()));
        }
        for (k, n) in self.params.norms() {
            out.push((format!("bn/{k}/mean"), vec![n.features()], n.running_mean.as_slice()));
            out.push((format!("bn/{k}/var"), vec![n.features()], n.running_var.as_slice()));
        }
        for (k, (m, v)) in &self.adam.moments {
            out.push((format!("adam/{k}/m"), vec![m.len()], m.as_slice()));
            out.push((format!("adam/{k}/v"), vec![v.len()], v.as_slice()));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.text();
        let mut body = Vec::new();
        let arrays = self.arrays();
        body.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
        for (name, shape, data) in arrays {
            body.extend_from_slice(&(name.len() as u32).to_le_bytes());
            body.extend_from_slice(name.as_bytes());
            body.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for d in shape {
                body.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for x in data {
                body.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut h = Sha256::new();
        h.update(text.as_bytes());
        h.update(&body);
        let digest = h.finalize();
        let mut out = Vec::with_capacity(44 + text.len() + body.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&digest);
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(bad(format!("truncated at byte {pos}")));
            }
            pos += n;
            Ok(&bytes[pos - n..pos])
        };
        if take(4)? != MAGIC {
            return Err(bad("bad magic, not an RMN1 checkpoint"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let tlen = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
        let text_bytes = take(tlen)?;
        let digest = take(32)?;
        let body = &bytes[pos..];
        let mut h = Sha256::new();
        h.update(text_bytes);
        h.update(body);
        if h.finalize().as_slice() != digest {
            return Err(bad("digest mismatch, file is corrupted"));
        }
        let text = std::str::from_utf8(text_bytes).map_err(|_| bad("config block is not UTF-8"))?;
        let arrays = parse_arrays(body)?;
        parse_checkpoint(text, arrays)
    }
}

/// Shape and values of each named array.
type Arrays = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

fn parse_arrays(body: &[u8]) -> Result<Arrays> {
    let mut pos = 0;
    let mut take = |n: usize| -> Result<&[u8]> {
        if body.len() - pos < n {
            return Err(bad(format!("truncated array block at byte {pos}")));
        }
        pos += n;
        Ok(&body[pos - n..pos])
    };
    let count = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
    let mut out = BTreeMap::new();
    for _ in 0..count {
        let nlen = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
        let name = String::from_utf8(take(nlen)?.to_vec()).map_err(|_| bad("array name is not UTF-8"))?;
        let rank = u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(take(4)?.try_into().expect("4")) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(8 * n)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
        out.insert(name, (shape, data));
    }
    if pos != body.len() {
        return Err(bad("trailing bytes after arrays"));
    }
    Ok(out)
}

fn sections(text: &str) -> BTreeMap<&str, Vec<&str>> {
    let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    let mut cur = "";
    for line in text.lines() {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            cur = name;
            out.entry(cur).or_default();
        } else if !line.is_empty() {
            out.entry(cur).or_default().push(line);
        }
    }
    out
}

fn kv<'a>(lines: &[&'a str]) -> BTreeMap<&'a str, &'a str> {
    lines
        .iter()
        .filter_map(|l| l.split_once(" = "))
        .collect()
}

fn field<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| bad(format!("missing `{key}`")))?
        .parse()
        .map_err(|_| bad(format!("bad value for `{key}`")))
}

fn parse_checkpoint(text: &str, mut arrays: BTreeMap<String, (Vec<usize>, Vec<f64>)>) -> Result<Checkpoint> {
    let sec = sections(text);
    let get = |name: &str| sec.get(name).cloned().unwrap_or_default();
    let config = TrainConfig::parse(&get("config").join("\n"))?;
    let m = kv(&get("model"));
    let dims = ModelDims {
        vocab_size: field(&m, "vocab_size")?,
        num_classes: field(&m, "num_classes")?,
        max_sentence_len: field(&m, "max_sentence_len")?,
        max_question_len: field(&m, "max_question_len")?,
        match_fields: field(&m, "match_fields")?,
    };
    let s = kv(&get("state"));
    let seed_hex: String = field(&s, "rng_seed")?;
    let seed: [u8; 32] = hex::decode(seed_hex)
        .ok()
        .and_then(|v| v.try_into().ok())
        .ok_or_else(|| bad("bad rng seed"))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(field(&s, "rng_stream")?);
    rng.set_word_pos(field(&s, "rng_word_pos")?);
    let state = TrainState {
        epoch: field(&s, "epoch")?,
        rng,
        best_valid: field(&s, "best_valid")?,
        bad_epochs: field(&s, "bad_epochs")?,
        stopped: field(&s, "stopped")?,
    };
    let adam_hp: String = field(&s, "adam")?;
    let hp: Vec<f64> = adam_hp.split(',').map(|x| x.parse().map_err(|_| bad("bad adam hyperparameters"))).collect::<Result<_>>()?;
    let [beta1, beta2, eps] = hp[..] else {
        return Err(bad("bad adam hyperparameters"));
    };

    let mut params = ParamStore::new();
    let names: Vec<String> = arrays.keys().cloned().collect();
    for name in &names {
        if let Some(p) = name.strip_prefix("param/") {
            let (shape, data) = arrays.remove(name).expect("present");
            params.insert(p.to_string(), Tensor::new(shape, data).map_err(|e| bad(format!("{name}: {e}")))?);
        }
    }
    for line in get("norms") {
        let (name, rest) = line.split_once(" = ").ok_or_else(|| bad("bad norms line"))?;
        let parts: Vec<&str> = rest.split(',').collect();
        let [updates, momentum, eps] = parts[..] else {
            return Err(bad("bad norms line"));
        };
        let (_, mean) = arrays.remove(&format!("bn/{name}/mean")).ok_or_else(|| bad(format!("missing bn/{name}/mean")))?;
        let (_, var) = arrays.remove(&format!("bn/{name}/var")).ok_or_else(|| bad(format!("missing bn/{name}/var")))?;
        let mut st = BatchNormState::new(mean.len());
        st.running_mean = mean;
        st.running_var = var;
        st.updates = updates.parse().map_err(|_| bad("bad bn update count"))?;
        st.momentum = momentum.parse().map_err(|_| bad("bad bn momentum"))?;
        st.eps = eps.parse().map_err(|_| bad("bad bn eps"))?;
        params.insert_norm(name, st);
    }
    let mut moments = BTreeMap::new();
    let names: Vec<String> = arrays.keys().cloned().collect();
    for name in &names {
        if let Some(p) = name.strip_prefix("adam/").and_then(|n| n.strip_suffix("/m")) {
            let (_, m) = arrays.remove(name).expect("present");
            let (_, v) = arrays.remove(&format!("adam/{p}/v")).ok_or_else(|| bad(format!("missing adam/{p}/v")))?;
            moments.insert(p.to_string(), (m, v));
        }
    }
    if let Some(extra) = arrays.keys().next() {
        return Err(bad(format!("unexpected array `{extra}`")));
    }
    let adam = AdamState {
        beta1,
        beta2,
        eps,
        step: field(&s, "adam_step")?,
        moments,
    };
    let history = get("metrics")
        .iter()
        .map(|l| {
            let p: Vec<&str> = l.split(',').collect();
            let [epoch, split, task, err, loss] = p[..] else {
                return Err(bad("bad metrics line"));
            };
            Ok(MetricRow {
                epoch: epoch.parse().map_err(|_| bad("bad metrics epoch"))?,
                split: split.into(),
                task: task.into(),
                error_pct: err.parse().map_err(|_| bad("bad metrics error"))?,
                loss: loss.parse().map_err(|_| bad("bad metrics loss"))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Checkpoint {
        config,
        dims,
        params,
        adam,
        state,
        history,
        corpus_digest: field(&s, "corpus_digest")?,
    })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, ck.to_bytes()).map_err(|e| TrainError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
