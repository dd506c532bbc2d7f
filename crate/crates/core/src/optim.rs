//! SGD with momentum, dampening and weight decay under a stepwise exponential schedule.

use crate::nn::ParamSet;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("invalid optimiser config: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in `{tensor}` at {index}")]
    NonFiniteGradient { tensor: String, index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub dampening: f64,
    pub weight_decay: f64,
    pub gamma: f64,
    pub decay_every: u64,
}

impl OptimConfig {
    pub fn with_lr(lr0: f64) -> Self {
        Self { lr0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: &str| Err(OptimError::InvalidConfig(m.to_string()));
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.dampening) {
            return bad("dampening must lie in [0, 1]");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight decay must be finite and non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.decay_every == 0 {
            return bad("decay_every must be positive");
        }
        Ok(())
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { lr0: 0.01, momentum: 0.9, dampening: 0.1, weight_decay: 0.004, gamma: 0.99, decay_every: 100 }
    }
}

/// `lr0 · gamma^⌊step / decay_every⌋`.
pub fn lr_schedule(step: u64, cfg: &OptimConfig) -> f64 {
    let k = step / cfg.decay_every.max(1);
    cfg.lr0 * cfg.gamma.powi(k.min(i32::MAX as u64) as i32)
}

/// Momentum buffers mirror the parameter tensors; they are created on the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimState {
    pub buffers: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One update at `lr_schedule(state.step)`:
/// `g = grad + wd·p`; `buf = g` on the first step, else `buf = μ·buf + (1 − d)·g`;
/// `p -= lr·buf`. Nothing is modified if any check fails.
pub fn sgd_step<P: ParamSet>(params: &mut P, grads: &P, state: &mut OptimState, cfg: &OptimConfig) -> Result<f64, OptimError> {
    cfg.validate()?;
    let gt = grads.tensors();
    let pt = params.tensors();
    if gt.len() != pt.len() {
        return Err(OptimError::Shape(format!("{} gradient tensors for {} parameters", gt.len(), pt.len())));
    }
    for (p, g) in pt.iter().zip(&gt) {
        if p.dims != g.dims || p.data.len() != g.data.len() {
            return Err(OptimError::Shape(format!("`{}` {:?} vs gradient {:?}", p.name, p.dims, g.dims)));
        }
        if let Some(index) = g.data.iter().position(|x| !x.is_finite()) {
            return Err(OptimError::NonFiniteGradient { tensor: p.name.clone(), index });
        }
    }
    let first = state.step == 0 || state.buffers.is_empty();
    if !first && (state.buffers.len() != pt.len() || state.buffers.iter().zip(&pt).any(|(b, p)| b.len() != p.len())) {
        return Err(OptimError::Shape("momentum buffers do not match parameters".into()));
    }
    drop(pt);

    let lr = lr_schedule(state.step, cfg);
    if first {
        state.buffers = gt.iter().map(|g| vec![0.0; g.len()]).collect();
    }
    for ((p, g), buf) in params.tensors_mut().into_iter().zip(&gt).zip(state.buffers.iter_mut()) {
        for ((x, &gv), b) in p.data.iter_mut().zip(&g.data).zip(buf.iter_mut()) {
            let g = gv + cfg.weight_decay * *x;
            *b = if first { g } else { cfg.momentum * *b + (1.0 - cfg.dampening) * g };
            *x -= lr * *b;
        }
    }
    state.step += 1;
    Ok(lr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[derive(Clone, Debug, PartialEq)]
    struct One(Tensor);

    impl ParamSet for One {
        fn tensors(&self) -> Vec<&Tensor> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
            vec![&mut self.0]
        }
    }

    fn scalar(x: f64) -> One {
        One(Tensor { name: "p".into(), dims: vec![1], data: vec![x] })
    }

    #[test]
    fn plain_sgd() {
        let cfg = OptimConfig { lr0: 0.1, momentum: 0.0, dampening: 0.0, weight_decay: 0.0, ..Default::default() };
        let mut p = scalar(1.0);
        sgd_step(&mut p, &scalar(0.5), &mut OptimState::new(), &cfg).unwrap();
        assert!((p.0.data[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn first_step_with_decay() {
        let cfg = OptimConfig { lr0: 0.1, ..Default::default() };
        let mut p = scalar(1.0);
        let mut st = OptimState::new();
        sgd_step(&mut p, &scalar(1.0), &mut st, &cfg).unwrap();
        assert!((p.0.data[0] - 0.8996).abs() < 1e-15);
        assert_eq!(st.buffers, vec![vec![1.004]]);
        // second step: buf = 0.9·1.004 + 0.9·(1 + 0.004·0.8996)
        sgd_step(&mut p, &scalar(1.0), &mut st, &cfg).unwrap();
        let buf = 0.9 * 1.004 + 0.9 * (1.0 + 0.004 * 0.8996);
        assert!((st.buffers[0][0] - buf).abs() < 1e-15);
        assert!((p.0.data[0] - (0.8996 - 0.1 * buf)).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let cfg = OptimConfig::with_lr(0.0);
        let mut p = scalar(0.3);
        sgd_step(&mut p, &scalar(7.0), &mut OptimState::new(), &cfg).unwrap();
        assert_eq!(p, scalar(0.3));
    }

    #[test]
    fn schedule_steps() {
        let cfg = OptimConfig::with_lr(0.01);
        assert_eq!(lr_schedule(0, &cfg), 0.01);
        assert!((lr_schedule(100, &cfg) - 0.0099).abs() < 1e-15);
        assert!((lr_schedule(250, &cfg) - 0.009801).abs() < 1e-15);
        assert_eq!(lr_schedule(99, &cfg), 0.01);
    }

    #[test]
    fn rejects_bad_gradients() {
        let cfg = OptimConfig::default();
        let mut p = scalar(1.0);
        let mut st = OptimState::new();
        assert!(matches!(
            sgd_step(&mut p, &scalar(f64::NAN), &mut st, &cfg),
            Err(OptimError::NonFiniteGradient { index: 0, .. })
        ));
        let wrong = One(Tensor { name: "p".into(), dims: vec![2], data: vec![0.0; 2] });
        assert!(matches!(sgd_step(&mut p, &wrong, &mut st, &cfg), Err(OptimError::Shape(_))));
        assert_eq!(p, scalar(1.0));
        assert_eq!(st.step, 0);
    }
}
