//! Named parameter storage, per-step tape sessions, and MLP stacks.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{BatchNormState, Gradients, NormMode, Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown parameter `{0}`")]
    MissingParam(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Input(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Trainable tensors and batch-norm buffers keyed by dotted names.
///
/// `BTreeMap` keeps iteration order stable, which the optimizer and the
/// checkpoint writer both rely on for bit-identical output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
    norms: BTreeMap<String, BatchNormState>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t.with_grad());
    }

    pub fn insert_norm(&mut self, name: impl Into<String>, s: BatchNormState) {
        self.norms.insert(name.into(), s);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn norm(&self, name: &str) -> Result<&BatchNormState> {
        self.norms
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn norm_mut(&mut self, name: &str) -> Result<&mut BatchNormState> {
        self.norms
            .get_mut(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    pub fn norms(&self) -> &BTreeMap<String, BatchNormState> {
        &self.norms
    }

    pub fn set_mode(&mut self, mode: NormMode) {
        self.norms.values_mut().for_each(|n| n.mode = mode);
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

enum Norms<'a> {
    Train(&'a mut BTreeMap<String, BatchNormState>),
    Eval(&'a BTreeMap<String, BatchNormState>),
}

/// One forward (and optionally backward) pass over a [`ParamStore`].
///
/// Parameters are bound to tape leaves lazily, so a pass only records the
/// parameters it actually touches.
pub struct Session<'a> {
    pub tape: Tape,
    tensors: &'a BTreeMap<String, Tensor>,
    norms: Norms<'a>,
    bound: HashMap<String, Var>,
}

impl<'a> Session<'a> {
    /// Batch norm uses batch statistics and updates running averages.
    pub fn train(store: &'a mut ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            tensors: &store.tensors,
            norms: Norms::Train(&mut store.norms),
            bound: HashMap::new(),
        }
    }

    /// Batch norm reads running averages; the store is never mutated.
    pub fn eval(store: &'a ParamStore) -> Self {
        Self {
            tape: Tape::new(),
            tensors: &store.tensors,
            norms: Norms::Eval(&store.norms),
            bound: HashMap::new(),
        }
    }

    /// Train-mode session continuing `tape`, with some parameters already
    /// bound to existing vars (used for finite-difference checks).
    pub fn with_bindings(tape: Tape, store: &'a mut ParamStore, bound: HashMap<String, Var>) -> Self {
        Self {
            tape,
            tensors: &store.tensors,
            norms: Norms::Train(&mut store.norms),
            bound,
        }
    }

    pub fn into_tape(self) -> Tape {
        self.tape
    }

    pub fn is_training(&self) -> bool {
        matches!(self.norms, Norms::Train(_))
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let t = self
            .tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
        let v = self.tape.param(t.clone());
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    pub fn batch_norm(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let gamma = self.param(&format!("{prefix}.gamma"))?;
        let beta = self.param(&format!("{prefix}.beta"))?;
        let missing = || ModelError::MissingParam(prefix.to_string());
        let out = match &mut self.norms {
            Norms::Train(map) => {
                let st = map.get_mut(prefix).ok_or_else(missing)?;
                self.tape.batch_norm_train(x, gamma, beta, st)?
            }
            Norms::Eval(map) => {
                let st = map.get(prefix).ok_or_else(missing)?;
                self.tape.batch_norm_eval(x, gamma, beta, st)?
            }
        };
        Ok(out)
    }

    /// Gradients of every bound parameter, keyed by name.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .map(|(name, v)| (name.clone(), grads.wrt(&self.tape, *v)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }
}

/// Uniform `U(-s, s)` tensor with `s = scale`.
pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..=scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite uniform sample")
}

/// Fan-in scaled uniform init for an affine layer `[fan_in, fan_out]`.
pub fn init_affine(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, fan_in: usize, fan_out: usize) {
    let s = 1.0 / (fan_in as f64).sqrt();
    store.insert(format!("{prefix}.w"), uniform(rng, &[fan_in, fan_out], s));
    store.insert(format!("{prefix}.b"), uniform(rng, &[fan_out], s));
}

/// Affine layer `x[N, in] · W[in, out] + b`.
pub fn affine(s: &mut Session, x: Var, prefix: &str) -> Result<Var> {
    let w = s.param(&format!("{prefix}.w"))?;
    let b = s.param(&format!("{prefix}.b"))?;
    let xw = s.tape.matmul(x, w)?;
    Ok(s.tape.add_bias(xw, b)?)
}

/// Layout of a multi-layer perceptron whose tensors live in a [`ParamStore`].
///
/// Hidden layers run affine, then batch norm when enabled, then the
/// activation. The last layer is a bare affine map.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub input: usize,
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub batch_norm: bool,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, input: usize, widths: &[usize], activation: Activation, batch_norm: bool) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || input == 0 {
            return Err(ModelError::Dimension(format!(
                "MLP needs non-empty positive widths, got input {input} and {widths:?}"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            input,
            widths: widths.to_vec(),
            activation,
            batch_norm,
        })
    }

    pub fn output(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    pub fn layer_prefix(&self, i: usize) -> String {
        format!("{}.l{i}", self.prefix)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        let mut fan_in = self.input;
        for (i, &w) in self.widths.iter().enumerate() {
            let p = self.layer_prefix(i);
            init_affine(store, rng, &p, fan_in, w);
            if self.batch_norm && i + 1 < self.widths.len() {
                store.insert(format!("{p}.bn.gamma"), Tensor::filled(&[w], 1.0).expect("shape"));
                store.insert(format!("{p}.bn.beta"), Tensor::zeros(&[w]).expect("shape"));
                store.insert_norm(format!("{p}.bn"), BatchNormState::new(w));
            }
            fan_in = w;
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var> {
        let got = s.value(x).shape().to_vec();
        if got.len() != 2 || got[1] != self.input {
            return Err(ModelError::Dimension(format!(
                "{} expects [N, {}] input, got {got:?}",
                self.prefix, self.input
            )));
        }
        let mut h = x;
        let last = self.widths.len() - 1;
        for i in 0..=last {
            let p = self.layer_prefix(i);
            h = affine(s, h, &p)?;
            if i < last {
                if self.batch_norm {
                    h = s.batch_norm(h, &format!("{p}.bn"))?;
                }
                h = match self.activation {
                    Activation::Relu => s.tape.relu(h)?,
                    Activation::Tanh => s.tape.tanh(h)?,
                };
            }
        }
        Ok(h)
    }
}
