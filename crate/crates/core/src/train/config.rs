//! Training configuration: a plain `key = value` text format with a fixed
//! schema. Unknown keys and bad values are collected and reported together.

use std::fmt::Write as _;

use crate::embed::EmbeddingKind;
use crate::feature_map::FeatureMapKind;
use crate::model::{Architecture, ModelConfig, ModelDims};
use crate::nn::Activation;

use super::TrainError;

pub const SEED_ENV: &str = "RMN_SEED";

/// Width list whose last entry may be `auto` (the corpus class count).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Widths {
    pub hidden: Vec<usize>,
    /// `None` means `auto`.
    pub last: Option<usize>,
}

impl Widths {
    pub fn fixed(all: &[usize]) -> Self {
        let (last, hidden) = all.split_last().expect("non-empty widths");
        Self {
            hidden: hidden.to_vec(),
            last: Some(*last),
        }
    }

    pub fn auto(hidden: &[usize]) -> Self {
        Self {
            hidden: hidden.to_vec(),
            last: None,
        }
    }

    pub fn resolve(&self, classes: usize) -> Vec<usize> {
        let mut v = self.hidden.clone();
        v.push(self.last.unwrap_or(classes));
        v
    }

    fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let (last, hidden) = parts.split_last().ok_or("empty width list")?;
        let hidden = hidden
            .iter()
            .map(|p| p.parse::<usize>().ok().filter(|&w| w > 0).ok_or(format!("bad width `{p}`")))
            .collect::<Result<Vec<_>, _>>()?;
        let last = match *last {
            "auto" => None,
            p => Some(p.parse::<usize>().ok().filter(|&w| w > 0).ok_or(format!("bad width `{p}`"))?),
        };
        Ok(Self { hidden, last })
    }

    fn render(&self) -> String {
        let mut parts: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        parts.push(self.last.map_or("auto".into(), |w| w.to_string()));
        parts.join(",")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub feature_map: FeatureMapKind,
    pub embedding: EmbeddingKind,
    pub word_dim: usize,
    pub hidden_dim: usize,
    pub hops: usize,
    pub g_layers: Widths,
    pub f_layers: Widths,
    pub activation: Activation,
    pub batch_norm: bool,
    pub match_features: bool,
    pub embed_init: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    /// Wall-clock budget checked after each epoch; 0 disables.
    pub time_budget_secs: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Joint story training setup.
    fn default() -> Self {
        Self {
            architecture: Architecture::Rmn,
            feature_map: FeatureMapKind::Mlp,
            embedding: EmbeddingKind::Lstm,
            word_dim: 32,
            hidden_dim: 32,
            hops: 2,
            g_layers: Widths::fixed(&[256, 128, 1]),
            f_layers: Widths::auto(&[512, 512]),
            activation: Activation::Relu,
            batch_norm: true,
            match_features: false,
            embed_init: 1.0,
            lr: 2e-4,
            batch_size: 32,
            epochs: 200,
            patience: 10,
            clip_norm: 0.0,
            time_budget_secs: 0.0,
            seed: 1,
        }
    }
}

/// `(key, type, description)` for every accepted key.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("architecture", "rmn|rn", "hop model or pairwise baseline"),
    ("feature_map", "mlp|inner_product|gated_inner_product|absdiff_two_embeddings", "attention scorer"),
    ("embedding", "sum|position|concat|lstm|gru", "sentence encoder"),
    ("word_dim", "int > 0", "word embedding width"),
    ("hidden_dim", "int > 0", "recurrent encoder width"),
    ("hops", "int > 0", "attention hops"),
    ("g_layers", "int list", "attention MLP widths, last is 1 (rn: relation width)"),
    ("f_layers", "int list, last may be auto", "answer MLP widths, last = answer classes"),
    ("activation", "relu|tanh", "hidden activation"),
    ("batch_norm", "bool", "batch norm after hidden affine layers"),
    ("match_features", "bool", "dialog match-type logit term"),
    ("embed_init", "float > 0", "word table init half-width"),
    ("lr", "float > 0", "Adam learning rate"),
    ("batch_size", "int > 0", "episodes per step"),
    ("epochs", "int > 0", "maximum epochs"),
    ("patience", "int >= 0", "early-stopping patience in epochs, 0 = off"),
    ("clip_norm", "float >= 0", "global gradient norm clip, 0 = off"),
    ("time_budget_secs", "float >= 0", "stop after the epoch that exceeds it, 0 = off"),
    ("seed", "u64", "init and shuffle seed; RMN_SEED overrides"),
];

pub fn schema_text() -> String {
    let mut s = String::from("# key = value, one per line; `#` starts a comment\n");
    for (k, t, d) in SCHEMA {
        let _ = writeln!(s, "{k:<18} {t:<60} {d}");
    }
    s
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(format!("expected a bool, got `{v}`")),
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("bad number `{v}`"))
}

fn positive(v: usize) -> Result<usize, String> {
    if v > 0 {
        Ok(v)
    } else {
        Err("must be positive".into())
    }
}

fn nonneg(v: f64) -> Result<f64, String> {
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("must be a finite value >= 0, got {v}"))
    }
}

impl TrainConfig {
    /// Starts from `base` and applies every `key = value` line of `text`.
    pub fn parse_with_base(text: &str, base: TrainConfig) -> Result<Self, TrainError> {
        let mut c = base;
        let mut issues = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                issues.push(format!("line {}: expected `key = value`", i + 1));
                continue;
            };
            let (k, v) = (k.trim(), v.trim());
            if let Err(e) = c.set(k, v) {
                issues.push(format!("line {}: {k}: {e}", i + 1));
            }
        }
        issues.extend(c.check());
        if issues.is_empty() {
            Ok(c)
        } else {
            Err(TrainError::Config(issues))
        }
    }

    pub fn parse(text: &str) -> Result<Self, TrainError> {
        Self::parse_with_base(text, Self::default())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "architecture" => self.architecture = Architecture::parse(v).ok_or(format!("unknown architecture `{v}`"))?,
            "feature_map" => self.feature_map = FeatureMapKind::parse(v).ok_or(format!("unknown feature map `{v}`"))?,
            "embedding" => self.embedding = EmbeddingKind::parse(v).ok_or(format!("unknown embedding `{v}`"))?,
            "word_dim" => self.word_dim = positive(parse_num(v)?)?,
            "hidden_dim" => self.hidden_dim = positive(parse_num(v)?)?,
            "hops" => self.hops = positive(parse_num(v)?)?,
            "g_layers" => self.g_layers = Widths::parse(v)?,
            "f_layers" => self.f_layers = Widths::parse(v)?,
            "activation" => self.activation = Activation::parse(v).ok_or(format!("unknown activation `{v}`"))?,
            "batch_norm" => self.batch_norm = parse_bool(v)?,
            "match_features" => self.match_features = parse_bool(v)?,
            "embed_init" => self.embed_init = nonneg(parse_num(v)?)?,
            "lr" => self.lr = nonneg(parse_num(v)?)?,
            "batch_size" => self.batch_size = positive(parse_num(v)?)?,
            "epochs" => self.epochs = positive(parse_num(v)?)?,
            "patience" => self.patience = parse_num(v)?,
            "clip_norm" => self.clip_norm = nonneg(parse_num(v)?)?,
            "time_budget_secs" => self.time_budget_secs = nonneg(parse_num(v)?)?,
            "seed" => self.seed = parse_num(v)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Cross-field checks.
    pub fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.lr <= 0.0 {
            out.push("lr: must be positive".into());
        }
        if self.embed_init <= 0.0 {
            out.push("embed_init: must be positive".into());
        }
        if self.g_layers.last.is_none() {
            out.push("g_layers: last width cannot be auto".into());
        }
        if self.architecture == Architecture::Rmn && self.feature_map == FeatureMapKind::Mlp && self.g_layers.last != Some(1) {
            out.push("g_layers: attention MLP must end in 1 unit".into());
        }
        out
    }

    /// Canonical text form; `parse(to_text())` returns an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("architecture", self.architecture.name().into());
        kv("feature_map", self.feature_map.name().into());
        kv("embedding", self.embedding.name().into());
        kv("word_dim", self.word_dim.to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("hops", self.hops.to_string());
        kv("g_layers", self.g_layers.render());
        kv("f_layers", self.f_layers.render());
        kv("activation", self.activation.name().into());
        kv("batch_norm", self.batch_norm.to_string());
        kv("match_features", self.match_features.to_string());
        kv("embed_init", format!("{:?}", self.embed_init));
        kv("lr", format!("{:?}", self.lr));
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("clip_norm", format!("{:?}", self.clip_norm));
        kv("time_budget_secs", format!("{:?}", self.time_budget_secs));
        kv("seed", self.seed.to_string());
        s
    }

    /// Replaces the seed with `RMN_SEED` when set. Returns an error for a
    /// value that is not a u64.
    pub fn apply_env_seed(&mut self) -> Result<bool, TrainError> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                self.seed = v
                    .trim()
                    .parse()
                    .map_err(|_| TrainError::Config(vec![format!("{SEED_ENV}: not a u64: `{v}`")]))?;
                Ok(true)
            }
            Err(_) => Ok(false),
        }
    }

    pub fn model_config(&self, dims: &ModelDims) -> ModelConfig {
        ModelConfig {
            architecture: self.architecture,
            feature_map: self.feature_map,
            embedding: self.embedding,
            word_dim: self.word_dim,
            hidden_dim: self.hidden_dim,
            hops: self.hops,
            g_layers: self.g_layers.resolve(1),
            f_layers: self.f_layers.resolve(dims.num_classes),
            activation: self.activation,
            batch_norm: self.batch_norm,
            match_features: self.match_features,
            embed_init: self.embed_init,
            seed: self.seed,
        }
    }

    /// Joint story defaults: LSTM encoders, two hops, lr 2e-4. The last `f`
    /// width is `auto`, which is 159 on the joint 20-task corpus.
    pub fn story() -> Self {
        Self::default()
    }

    /// Per-task dialog setup (tasks 1–5); `None` for other task ids. The
    /// last `f` width is `auto`, which is 4212 on the full candidate set.
    pub fn dialog_task(task: u32) -> Option<Self> {
        let (embedding, dim, hops, g, f): (_, _, _, &[usize], &[usize]) = match task {
            1 => (EmbeddingKind::Sum, 128, 1, &[2048, 2048, 1], &[2048, 2048]),
            2 => (EmbeddingKind::Sum, 128, 1, &[1024, 1024, 1], &[1024, 1024]),
            3 => (EmbeddingKind::Sum, 128, 1, &[1024, 1024, 1024, 1], &[1024, 1024, 1024]),
            4 => (EmbeddingKind::Concat, 50, 1, &[1024, 1024, 1], &[1024, 1024]),
            5 => (EmbeddingKind::Concat, 64, 2, &[4096, 4096, 1], &[4096, 4096]),
            _ => return None,
        };
        Some(Self {
            embedding,
            word_dim: dim,
            hidden_dim: dim,
            hops,
            g_layers: Widths::fixed(g),
            f_layers: Widths::auto(f),
            activation: Activation::Tanh,
            batch_norm: true,
            lr: 1e-4,
            ..Self::default()
        })
    }
}
