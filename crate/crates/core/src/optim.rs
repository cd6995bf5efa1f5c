//! AdamW with decoupled weight decay and the warmup + cosine learning-rate schedule.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A collection of parameter tensors viewed as flat slices in a fixed order.
pub trait ParamSet: Sized {
    fn slices(&self) -> Vec<&[f64]>;
    fn slices_mut(&mut self) -> Vec<&mut [f64]>;
    fn zeros_like(&self) -> Self;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.2,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<P> {
    pub m: P,
    pub v: P,
    pub step: u64,
}

impl<P: ParamSet> OptimizerState<P> {
    pub fn new(params: &P) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One AdamW update:
///
/// ```text
/// m <- b1 m + (1 - b1) g          v <- b2 v + (1 - b2) g^2
/// p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
/// ```
///
/// A non-finite gradient leaves `params` and `state` untouched.
pub fn adamw_step<P: ParamSet>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState<P>,
    lr: f64,
    config: &AdamWConfig,
) -> Result<()> {
    let g_slices = grads.slices();
    if g_slices.iter().any(|s| s.iter().any(|g| !g.is_finite())) {
        return Err(Error::NonFiniteGradient);
    }
    let mut p_slices = params.slices_mut();
    if p_slices.len() != g_slices.len()
        || p_slices.iter().zip(&g_slices).any(|(p, g)| p.len() != g.len())
    {
        return Err(Error::shape("adamw_step", "gradients do not mirror parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let (b1, b2) = (config.beta1, config.beta2);
    let mut m_slices = state.m.slices_mut();
    let mut v_slices = state.v.slices_mut();
    for (((p, g), m), v) in p_slices
        .iter_mut()
        .zip(&g_slices)
        .zip(m_slices.iter_mut())
        .zip(v_slices.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * (m_hat / (v_hat.sqrt() + config.epsilon) + config.weight_decay * p[i]);
        }
    }
    Ok(())
}

/// Index of the step at which warmup ends and the learning rate peaks.
pub fn warmup_steps(total_steps: u64, warmup_fraction: f64) -> u64 {
    let mut w = (warmup_fraction * total_steps as f64).floor() as u64;
    if warmup_fraction > 0.0 {
        w = w.max(1);
    }
    w.min(total_steps.saturating_sub(1))
}

/// Linear warmup from 0 to `peak_lr`, then half-cosine decay to 0 at `total_steps`.
pub fn lr_at(step: u64, total_steps: u64, peak_lr: f64, warmup_fraction: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::InvalidConfig("total_steps must be > 0".into()));
    }
    if !(0.0..1.0).contains(&warmup_fraction) {
        return Err(Error::InvalidConfig("warmup_fraction must be in [0, 1)".into()));
    }
    if step > total_steps {
        return Err(Error::InvalidConfig(format!("step {step} beyond total {total_steps}")));
    }
    let warmup = warmup_steps(total_steps, warmup_fraction);
    if step < warmup {
        return Ok(peak_lr * step as f64 / warmup as f64);
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    Ok(peak_lr * 0.5 * (1.0 + (PI * progress).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    struct Flat(Vec<f64>);

    impl ParamSet for Flat {
        fn slices(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
        fn zeros_like(&self) -> Self {
            Flat(vec![0.0; self.0.len()])
        }
    }

    #[test]
    fn schedule_anchor_points() {
        let peak = 3e-4;
        assert_eq!(lr_at(0, 1000, peak, 0.1).unwrap(), 0.0);
        assert_eq!(lr_at(100, 1000, peak, 0.1).unwrap(), peak);
        assert!(lr_at(1000, 1000, peak, 0.1).unwrap().abs() <= 1e-12 * peak);
        assert!((lr_at(50, 1000, peak, 0.1).unwrap() - peak / 2.0).abs() < 1e-18);
        assert!((lr_at(550, 1000, peak, 0.1).unwrap() - peak / 2.0).abs() < 1e-15);
    }

    #[test]
    fn schedule_rejects_zero_total() {
        assert!(matches!(lr_at(0, 0, 1.0, 0.1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn schedule_is_unimodal() {
        let lrs: Vec<f64> = (0..=97).map(|s| lr_at(s, 97, 1.0, 0.1).unwrap()).collect();
        let peak = warmup_steps(97, 0.1) as usize;
        assert!(lrs[..=peak].windows(2).all(|w| w[0] <= w[1]));
        assert!(lrs[peak..].windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn single_step_matches_hand_evaluation() {
        // t = 1: m = 0.1, v = 0.001, m_hat = 1, v_hat = 1.
        let mut p = Flat(vec![1.0]);
        let g = Flat(vec![1.0]);
        let mut s = OptimizerState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &g, &mut s, 0.1, &cfg).unwrap();
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.0[0] - expected).abs() < 1e-10);
        assert!((p.0[0] - 0.9).abs() < 1e-8);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point_without_decay() {
        let mut p = Flat(vec![1.0, -2.0, 3.5]);
        let before = p.clone();
        let mut s = OptimizerState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
        adamw_step(&mut p, &Flat(vec![0.0; 3]), &mut s, 0.1, &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn decoupled_decay_scales_params() {
        let mut p = Flat(vec![1.0, -2.0, 3.5]);
        let mut s = OptimizerState::new(&p);
        let cfg = AdamWConfig::default();
        adamw_step(&mut p, &Flat(vec![0.0; 3]), &mut s, 0.1, &cfg).unwrap();
        for (a, b) in p.0.iter().zip([1.0, -2.0, 3.5]) {
            assert!((a - b * (1.0 - 0.02)).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = Flat(vec![1.0]);
        let mut s = OptimizerState::new(&p);
        let r = adamw_step(&mut p, &Flat(vec![f64::INFINITY]), &mut s, 0.1, &AdamWConfig::default());
        assert!(matches!(r, Err(Error::NonFiniteGradient)));
        assert_eq!(p.0, vec![1.0]);
        assert_eq!(s.step, 0);
    }
}
