use super::{NumericsError, ParamStore};

/// Global-norm threshold applied before every update.
pub const CLIP_NORM: f64 = 5.0;
/// Post-clip mean |grad| above which an update is refused.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// Summary of the gradients consumed by one update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    pub mean_abs_grad: f64,
}

/// Moment buffers and step counter, aligned with the parameters of one store.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

pub trait Optimizer {
    /// Applies one update from the gradients in `store`, then clears them.
    fn step(&mut self, store: &mut ParamStore) -> Result<StepStats, NumericsError>;
    fn state(&self) -> &OptimizerState;
    fn state_mut(&mut self) -> &mut OptimizerState;
}

/// Clips gradients to `max_norm` in place and reports their statistics.
fn clip_grads(store: &mut ParamStore, max_norm: Option<f64>) -> Result<StepStats, NumericsError> {
    let mut sq = 0.0;
    let mut count = 0usize;
    for id in store.ids().collect::<Vec<_>>() {
        let g = store
            .get(id)
            .grad()
            .ok_or_else(|| NumericsError::MissingGrad { name: store.name(id).to_string() })?;
        sq += g.iter().map(|x| x * x).sum::<f64>();
        count += g.len();
    }
    let norm = sq.sqrt();
    let factor = match max_norm {
        Some(m) if norm > m => m / norm,
        _ => 1.0,
    };
    let mut abs_sum = 0.0;
    for t in store.tensors_mut() {
        if let Some(g) = t.grad_mut() {
            for x in g.iter_mut() {
                *x *= factor;
                abs_sum += x.abs();
            }
        }
    }
    let mean_abs = if count == 0 { 0.0 } else { abs_sum / count as f64 };
    Ok(StepStats { grad_norm: norm, mean_abs_grad: mean_abs })
}

fn guard(store: &mut ParamStore, stats: StepStats) -> Result<(), NumericsError> {
    if !stats.grad_norm.is_finite() || !(stats.mean_abs_grad <= DIVERGENCE_LIMIT) {
        store.zero_grads();
        return Err(NumericsError::Diverged { mean_abs_grad: stats.mean_abs_grad });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
    state: OptimizerState,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(CLIP_NORM), state: OptimizerState::default() }
    }

    pub fn with_betas(mut self, beta1: f64, beta2: f64, eps: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.eps = eps;
        self
    }
}

impl Optimizer for Adam {
    fn step(&mut self, store: &mut ParamStore) -> Result<StepStats, NumericsError> {
        let stats = clip_grads(store, self.clip_norm)?;
        guard(store, stats)?;
        if self.state.first.len() != store.len() {
            self.state.first = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.state.second = self.state.first.clone();
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, tensor) in store.tensors_mut().iter_mut().enumerate() {
            let g = tensor.grad().expect("checked by clip_grads").to_vec();
            let m = &mut self.state.first[i];
            let v = &mut self.state.second[i];
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        store.zero_grads();
        Ok(stats)
    }

    fn state(&self) -> &OptimizerState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut OptimizerState {
        &mut self.state
    }
}

/// SGD with classical momentum; the velocity lives in `first`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    state: OptimizerState,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Sgd { lr, momentum, clip_norm: Some(CLIP_NORM), state: OptimizerState::default() }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, store: &mut ParamStore) -> Result<StepStats, NumericsError> {
        let stats = clip_grads(store, self.clip_norm)?;
        guard(store, stats)?;
        if self.state.first.len() != store.len() {
            self.state.first = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        }
        self.state.step += 1;
        for (i, tensor) in store.tensors_mut().iter_mut().enumerate() {
            let g = tensor.grad().expect("checked by clip_grads").to_vec();
            let vel = &mut self.state.first[i];
            for (j, p) in tensor.data_mut().iter_mut().enumerate() {
                vel[j] = self.momentum * vel[j] + g[j];
                *p -= self.lr * vel[j];
            }
        }
        store.zero_grads();
        Ok(stats)
    }

    fn state(&self) -> &OptimizerState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut OptimizerState {
        &mut self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn scalar_store(v: f64) -> (ParamStore, crate::numerics::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(v));
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut s, id) = scalar_store(1.5);
        s.get_mut(id).accumulate_grad(&[0.0]);
        Adam::new(0.1).step(&mut s).unwrap();
        assert_eq!(s.get(id).data(), &[1.5]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // m = 0.1, v = 0.001; bias-corrected both equal 1 -> step = lr / (1 + eps).
        let (mut s, id) = scalar_store(0.0);
        s.get_mut(id).accumulate_grad(&[1.0]);
        let mut opt = Adam::new(0.1);
        opt.step(&mut s).unwrap();
        let want = -0.1 / (1.0 + 1e-8);
        assert!((s.get(id).item() - want).abs() < 1e-15);
        assert!(s.get(id).grad().is_none());
        assert_eq!(opt.state().step, 1);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let (mut s, _) = scalar_store(0.0);
        assert!(matches!(Adam::new(0.1).step(&mut s), Err(NumericsError::MissingGrad { .. })));
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros(&[2]).unwrap());
        s.get_mut(id).accumulate_grad(&[30.0, 40.0]);
        let stats = Sgd::new(1.0, 0.0).step(&mut s).unwrap();
        assert_eq!(stats.grad_norm, 50.0);
        assert!((s.get(id).data()[0] + 3.0).abs() < 1e-12);
        assert!((s.get(id).data()[1] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn nan_gradient_trips_divergence_guard() {
        let (mut s, id) = scalar_store(1.0);
        s.get_mut(id).accumulate_grad(&[f64::NAN]);
        assert!(matches!(Adam::new(0.1).step(&mut s), Err(NumericsError::Diverged { .. })));
        assert_eq!(s.get(id).item(), 1.0);
    }

    #[test]
    fn repeated_steps_are_reproducible() {
        let run = || {
            let (mut s, id) = scalar_store(0.3);
            let mut opt = Adam::new(0.05);
            for _ in 0..2 {
                s.get_mut(id).accumulate_grad(&[0.7]);
                opt.step(&mut s).unwrap();
            }
            s.get(id).item()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }
}
