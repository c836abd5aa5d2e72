//! SGD and Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub const ADAM: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OptimizerState {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        /// Number of updates taken so far.
        t: u64,
        m: Vec<f64>,
        v: Vec<f64>,
    },
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, num_weights: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => OptimizerState::Sgd,
            OptimizerKind::Adam { beta1, beta2, eps } => OptimizerState::Adam {
                beta1,
                beta2,
                eps,
                t: 0,
                m: vec![0.0; num_weights],
                v: vec![0.0; num_weights],
            },
        }
    }
}

/// One descent step on `params` along `grad`.
pub fn optimizer_step(params: &mut PolicyParams, grad: &[f64], state: &mut OptimizerState, lr: f64) -> Result<()> {
    let n = params.weights.len();
    if grad.len() != n {
        return Err(Error::Contract(format!("gradient has {} entries, params {n}", grad.len())));
    }
    match state {
        OptimizerState::Sgd => {
            for (w, g) in params.weights.iter_mut().zip(grad) {
                *w -= lr * g;
            }
        }
        OptimizerState::Adam {
            beta1,
            beta2,
            eps,
            t,
            m,
            v,
        } => {
            if m.len() != n || v.len() != n {
                return Err(Error::Contract("Adam moments do not match params".into()));
            }
            *t += 1;
            let bc1 = 1.0 - beta1.powi(*t as i32);
            let bc2 = 1.0 - beta2.powi(*t as i32);
            for i in 0..n {
                let g = grad[i];
                m[i] = *beta1 * m[i] + (1.0 - *beta1) * g;
                v[i] = *beta2 * v[i] + (1.0 - *beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                params.weights[i] -= lr * m_hat / (v_hat.sqrt() + *eps);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{policy_init, FeatureMap};

    #[test]
    fn zero_gradient_leaves_params() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::ADAM] {
            let mut p = policy_init(4, 2, 1).unwrap();
            let before = p.clone();
            let mut s = OptimizerState::new(kind, p.weights.len());
            optimizer_step(&mut p, &vec![0.0; before.weights.len()], &mut s, 0.1).unwrap();
            assert_eq!(p, before);
        }
    }

    #[test]
    fn sgd_unit_rate_on_own_weights_zeroes() {
        let mut p = policy_init(4, 2, 1).unwrap();
        let g = p.weights.clone();
        optimizer_step(&mut p, &g, &mut OptimizerState::Sgd, 1.0).unwrap();
        assert!(p.weights.iter().all(|&w| w == 0.0));
    }

    /// First Adam iterate: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps).
    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = PolicyParams::zeros(4, 1, FeatureMap::OneHotLastK).unwrap();
        let g: Vec<f64> = (0..16).map(|i| (i as f64 - 7.5) * 0.3).collect();
        let mut s = OptimizerState::new(OptimizerKind::ADAM, 16);
        optimizer_step(&mut p, &g, &mut s, 0.01).unwrap();
        for (w, g) in p.weights.iter().zip(&g) {
            let expect = -0.01 * g / (g.abs() + 1e-8);
            assert!((w - expect).abs() < 1e-15);
            assert!((w + 0.01 * g.signum()).abs() < 1e-8);
        }
        assert!(optimizer_step(&mut p, &g[..3], &mut s, 0.01).is_err());
    }
}
