//! Adam and Ranger (RAdam wrapped in Lookahead), both with decoupled weight
//! decay.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Ranger,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Ranger => "ranger",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "ranger" => Ok(OptimizerKind::Ranger),
            other => Err(Error::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Lookahead synchronization interval (Ranger only).
    pub lookahead_k: u64,
    /// Lookahead blend toward the fast weights (Ranger only).
    pub lookahead_alpha: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lookahead_k: 6,
            lookahead_alpha: 0.5,
        }
    }
}

/// RAdam falls back to an unadapted momentum step while ρ_t is at or below this.
pub const RECTIFICATION_THRESHOLD: f64 = 4.0;

/// One tensor the optimizer updates in place.
pub struct ParamSlot<'a> {
    pub values: &'a mut [f64],
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    /// Lookahead slow weights; empty for Adam.
    pub slow: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn ensure_shape(&mut self, params: &[ParamSlot<'_>], grads: &[&[f64]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Shape(format!("{} tensors but {} gradients", params.len(), grads.len())));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.values.len() != g.len() {
                return Err(Error::Shape(format!(
                    "tensor {i} has {} values but its gradient has {}",
                    p.values.len(),
                    g.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of tensor {i}")));
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| vec![0.0; p.values.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len()
            || self.first_moment.iter().zip(params).any(|(m, p)| m.len() != p.values.len())
        {
            return Err(Error::Shape("optimizer state does not match the parameters".into()));
        }
        Ok(())
    }
}

fn apply_decay(params: &mut [ParamSlot<'_>], cfg: &OptimConfig) {
    if cfg.weight_decay == 0.0 {
        return;
    }
    let shrink = cfg.lr * cfg.weight_decay;
    for slot in params.iter_mut().filter(|s| s.decay) {
        for v in slot.values.iter_mut() {
            *v -= shrink * *v;
        }
    }
}

fn update_moments(state: &mut OptimizerState, grads: &[&[f64]], cfg: &OptimConfig) {
    for ((m, v), g) in state.first_moment.iter_mut().zip(&mut state.second_moment).zip(grads) {
        for ((m, v), &g) in m.iter_mut().zip(v.iter_mut()).zip(g.iter()) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        }
    }
}

/// Bias-corrected Adam step.
pub fn adam_step(params: &mut [ParamSlot<'_>], grads: &[&[f64]], state: &mut OptimizerState, cfg: &OptimConfig) -> Result<()> {
    state.ensure_shape(params, grads)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    apply_decay(params, cfg);
    update_moments(state, grads, cfg);
    for ((slot, m), v) in params.iter_mut().zip(&state.first_moment).zip(&state.second_moment) {
        for ((p, m), v) in slot.values.iter_mut().zip(m).zip(v) {
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Length of the approximated simple moving average, ρ_t, for RAdam.
pub fn rho(step: u64, beta2: f64) -> f64 {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let b = beta2.powi(step as i32);
    rho_inf - 2.0 * step as f64 * b / (1.0 - b)
}

/// Variance rectification term, or `None` while ρ_t is too small.
pub fn rectification(step: u64, beta2: f64) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let rho_t = rho(step, beta2);
    if rho_t <= RECTIFICATION_THRESHOLD {
        return None;
    }
    Some(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t)).sqrt())
}

/// RAdam step followed by Lookahead synchronization every `lookahead_k` steps.
pub fn ranger_step(params: &mut [ParamSlot<'_>], grads: &[&[f64]], state: &mut OptimizerState, cfg: &OptimConfig) -> Result<()> {
    if cfg.lookahead_k == 0 {
        return Err(Error::InvalidConfig("lookahead interval must be at least 1".into()));
    }
    state.ensure_shape(params, grads)?;
    if state.slow.is_empty() {
        state.slow = params.iter().map(|p| p.values.to_vec()).collect();
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    apply_decay(params, cfg);
    update_moments(state, grads, cfg);
    let rect = rectification(state.step, cfg.beta2);
    for ((slot, m), v) in params.iter_mut().zip(&state.first_moment).zip(&state.second_moment) {
        for ((p, m), v) in slot.values.iter_mut().zip(m).zip(v) {
            let m_hat = m / bc1;
            match rect {
                Some(r) => {
                    let v_hat = v / bc2;
                    *p -= cfg.lr * r * m_hat / (v_hat.sqrt() + cfg.eps);
                }
                None => *p -= cfg.lr * m_hat,
            }
        }
    }
    if state.step.is_multiple_of(cfg.lookahead_k) {
        for (slot, slow) in params.iter_mut().zip(&mut state.slow) {
            for (fast, s) in slot.values.iter_mut().zip(slow.iter_mut()) {
                *s += cfg.lookahead_alpha * (*fast - *s);
                *fast = *s;
            }
        }
    }
    Ok(())
}

/// An optimizer bound to its hyperparameters and state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub config: OptimConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, config: OptimConfig) -> Self {
        Self {
            kind,
            config,
            state: OptimizerState::default(),
        }
    }

    pub fn step(&mut self, params: &mut [ParamSlot<'_>], grads: &[&[f64]]) -> Result<()> {
        match self.kind {
            OptimizerKind::Adam => adam_step(params, grads, &mut self.state, &self.config),
            OptimizerKind::Ranger => ranger_step(params, grads, &mut self.state, &self.config),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(kind: OptimizerKind, cfg: OptimConfig, theta: &mut Vec<f64>, steps: usize, grad: impl Fn(&[f64]) -> Vec<f64>) -> OptimizerState {
        let mut opt = Optimizer::new(kind, cfg);
        for _ in 0..steps {
            let g = grad(theta);
            let mut slots = [ParamSlot {
                values: theta.as_mut_slice(),
                decay: true,
            }];
            opt.step(&mut slots, &[&g]).unwrap();
        }
        opt.state
    }

    fn quadratic(theta: &[f64]) -> f64 {
        theta.iter().map(|v| v * v).sum()
    }

    fn quadratic_grad(theta: &[f64]) -> Vec<f64> {
        theta.iter().map(|v| 2.0 * v).collect()
    }

    #[test]
    fn zero_gradient_leaves_parameters_alone() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        for kind in [OptimizerKind::Adam, OptimizerKind::Ranger] {
            let mut theta = vec![1.5, -0.25];
            run(kind, cfg, &mut theta, 25, |t| vec![0.0; t.len()]);
            assert_eq!(theta, vec![1.5, -0.25]);
        }
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let cfg = OptimConfig {
            lr: 0.0,
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        for kind in [OptimizerKind::Adam, OptimizerKind::Ranger] {
            let mut theta = vec![0.75, -2.0, 3.0];
            run(kind, cfg, &mut theta, 13, quadratic_grad);
            assert_eq!(theta, vec![0.75, -2.0, 3.0]);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = OptimConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        for g in [3.0, -0.002, 250.0] {
            let mut theta = vec![1.0];
            run(OptimizerKind::Adam, cfg, &mut theta, 1, |_| vec![g]);
            let moved = 1.0 - theta[0];
            assert!((moved - 0.01 * f64::signum(g)).abs() < 1e-6, "{g}: {moved}");
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let cfg = OptimConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut theta = vec![1.0, -1.0];
        let start = quadratic(&theta);
        run(OptimizerKind::Adam, cfg, &mut theta, 2, quadratic_grad);
        assert!(quadratic(&theta) < start);
    }

    #[test]
    fn ranger_converges_on_a_quadratic() {
        let cfg = OptimConfig {
            lr: 0.2,
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut theta = vec![1.0, -2.0, 0.5];
        let start = quadratic(&theta);
        run(OptimizerKind::Ranger, cfg, &mut theta, 200, quadratic_grad);
        assert!(quadratic(&theta) < 1e-3 * start, "{}", quadratic(&theta));
    }

    #[test]
    fn lookahead_synchronizes_every_k_steps() {
        let cfg = OptimConfig {
            lr: 0.01,
            ..OptimConfig::default()
        };
        let mut theta = vec![0.3, -0.7];
        let mut opt = Optimizer::new(OptimizerKind::Ranger, cfg);
        for step in 1..=18u64 {
            let g = quadratic_grad(&theta);
            let mut slots = [ParamSlot {
                values: theta.as_mut_slice(),
                decay: false,
            }];
            opt.step(&mut slots, &[&g]).unwrap();
            let synced = opt.state.slow[0] == theta;
            assert_eq!(synced, step % 6 == 0, "step {step}");
        }
    }

    #[test]
    fn rectification_starts_after_rho_exceeds_four() {
        assert!(rectification(1, 0.999).is_none());
        let first = (1..50).find(|&t| rectification(t, 0.999).is_some()).unwrap();
        assert!(rho(first - 1, 0.999) <= 4.0 && rho(first, 0.999) > 4.0);
        assert!(rectification(100_000, 0.999).unwrap() > 0.99);
    }

    #[test]
    fn weight_decay_is_decoupled_and_selective() {
        let cfg = OptimConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..OptimConfig::default()
        };
        let mut decayed = vec![2.0];
        let mut exempt = vec![2.0];
        let mut opt = Optimizer::new(OptimizerKind::Adam, cfg);
        let zero = [0.0];
        let mut slots = [
            ParamSlot {
                values: decayed.as_mut_slice(),
                decay: true,
            },
            ParamSlot {
                values: exempt.as_mut_slice(),
                decay: false,
            },
        ];
        opt.step(&mut slots, &[&zero, &zero]).unwrap();
        assert!((decayed[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
        assert_eq!(exempt[0], 2.0);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_mutation() {
        let mut theta = vec![1.0];
        let mut opt = Optimizer::new(OptimizerKind::Ranger, OptimConfig::default());
        let mut slots = [ParamSlot {
            values: theta.as_mut_slice(),
            decay: true,
        }];
        assert!(matches!(opt.step(&mut slots, &[&[f64::NAN]]), Err(Error::NonFinite(_))));
        assert_eq!(theta, vec![1.0]);
        assert_eq!(opt.state.step, 0);
    }
}
