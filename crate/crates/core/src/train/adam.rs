//! Bias-corrected Adam and global-norm gradient clipping.

use std::collections::BTreeMap;

use crate::nn::ParamStore;
use crate::tensor::Tensor;

use super::TrainError;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First and second moments per parameter name.
    pub moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }
}

/// One Adam update. Parameters without an entry in `grads` keep their value
/// and moments.
pub fn adam_step(params: &mut ParamStore, grads: &BTreeMap<String, Tensor>, state: &mut AdamState, lr: f64) -> Result<(), TrainError> {
    for (name, g) in grads {
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(TrainError::Shape(format!(
                "gradient of `{name}` has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name)?;
        let n = p.len();
        let (m, v) = state
            .moments
            .entry(name.clone())
            .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
        let data = p.data_mut();
        for (i, &gi) in g.data().iter().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            data[i] -= lr * mh / (vh.sqrt() + eps);
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(TrainError::Divergence(format!("parameter `{name}` became {x}")));
        }
    }
    Ok(())
}

pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads
        .values()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::scalar(x).unwrap());
        s
    }

    fn grad(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("x".to_string(), Tensor::scalar(g).unwrap())])
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let mut p = store(1.0);
            let mut st = AdamState::default();
            adam_step(&mut p, &grad(g), &mut st, 0.01).unwrap();
            let delta = p.get("x").unwrap().item() - 1.0;
            assert!((delta + 0.01 * g.signum()).abs() < 1e-6, "{delta}");
        }
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = store(1.0);
        let mut st = AdamState::default();
        adam_step(&mut p, &grad(0.0), &mut st, 0.01).unwrap();
        assert_eq!(p.get("x").unwrap().item(), 1.0);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn clipping() {
        let mut g = grad(10.0);
        assert_eq!(clip_global_norm(&mut g, 2.0), 10.0);
        assert!((g["x"].item() - 2.0).abs() < 1e-12);
    }
}
