//! Named parameter sets and the Adam optimizer.

use super::{sc, Scalar, Tensor};
use crate::{Error, Result};

/// Ordered, named collection of trainable tensors. Registration order is the
/// checkpoint serialization order.
#[derive(Clone)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> usize {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn get(&self, idx: usize) -> &Tensor<T> {
        &self.tensors[idx]
    }

    pub fn set(&mut self, idx: usize, t: Tensor<T>) {
        debug_assert_eq!(self.tensors[idx].shape(), t.shape());
        self.tensors[idx] = t;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.tensors.iter())
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers plus the shared step counter.
#[derive(Clone)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_params(params: &ParamSet<T>) -> Self {
        AdamState {
            m: params.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect(),
            v: params.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction. `grads[i] == None` is treated as a
/// zero gradient for that parameter.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &[Option<&[T]>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    assert_eq!(grads.len(), params.len());
    state.step += 1;
    let t = state.step as i32;
    let b1 = sc::<T>(cfg.beta1);
    let b2 = sc::<T>(cfg.beta2);
    let one = T::one();
    let bc1 = sc::<T>(1.0 - cfg.beta1.powi(t));
    let bc2 = sc::<T>(1.0 - cfg.beta2.powi(t));
    let lr = sc::<T>(cfg.lr);
    let eps = sc::<T>(cfg.eps);

    for i in 0..params.len() {
        if let Some(g) = grads[i] {
            if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(format!(
                    "{} (value {})",
                    params.name(i),
                    bad
                )));
            }
            debug_assert_eq!(g.len(), params.get(i).len());
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let old = params.get(i);
        let mut new = old.to_vec();
        for (j, p) in new.iter_mut().enumerate() {
            let gj = grads[i].map_or(T::zero(), |g| g[j]);
            m[j] = b1 * m[j] + (one - b1) * gj;
            v[j] = b2 * v[j] + (one - b2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *p = *p - lr * mhat / (vhat.sqrt() + eps);
        }
        let shape = old.shape().to_vec();
        params.set(i, Tensor::from_vec(shape, new)?);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(x: f64) -> (ParamSet<f64>, AdamState<f64>) {
        let mut p = ParamSet::new();
        p.register("x", Tensor::scalar(x));
        let s = AdamState::for_params(&p);
        (p, s)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut p, mut s) = single_param(1.25);
        let cfg = AdamConfig::with_lr(0.1);
        adam_step(&mut p, &[Some(&[0.0])], &mut s, &cfg).unwrap();
        assert_eq!(p.get(0).item(), 1.25);
        adam_step(&mut p, &[None], &mut s, &cfg).unwrap();
        assert_eq!(p.get(0).item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut p, mut s) = single_param(0.0);
        let cfg = AdamConfig::with_lr(0.05);
        adam_step(&mut p, &[Some(&[3.7])], &mut s, &cfg).unwrap();
        let moved = p.get(0).item();
        // bias-corrected first step: -lr * g / (|g| + eps') ~ -lr * sign(g)
        assert!((moved + 0.05).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn fifty_steps_on_quadratic_approach_minimum() {
        // Oracle: the same scalar recurrence run by hand.
        let (lr, b1, b2, eps) = (0.3, 0.9, 0.999, 1e-8);
        let mut xo = 0.0f64;
        let (mut mo, mut vo) = (0.0f64, 0.0f64);
        let mut oracle_trace = Vec::new();
        for t in 1..=50 {
            let g = 2.0 * (xo - 3.0);
            mo = b1 * mo + (1.0 - b1) * g;
            vo = b2 * vo + (1.0 - b2) * g * g;
            let mhat = mo / (1.0 - b1.powi(t));
            let vhat = vo / (1.0 - b2.powi(t));
            xo -= lr * mhat / (vhat.sqrt() + eps);
            oracle_trace.push(xo);
        }
        assert!((xo - 3.0).abs() < 0.5, "oracle ended at {xo}");

        let (mut p, mut s) = single_param(0.0);
        let cfg = AdamConfig::with_lr(lr);
        for want in oracle_trace {
            let g = 2.0 * (p.get(0).item() - 3.0);
            adam_step(&mut p, &[Some(&[g])], &mut s, &cfg).unwrap();
            assert!((p.get(0).item() - want).abs() < 1e-12);
        }
        assert!((p.get(0).item() - 3.0).abs() < 0.5);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut p, mut s) = single_param(0.0);
        let cfg = AdamConfig::with_lr(0.1);
        let err = adam_step(&mut p, &[Some(&[f64::NAN])], &mut s, &cfg).unwrap_err();
        assert!(err.to_string().contains('x'), "{err}");
    }
}
