use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        Self::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::adam()),
            other => Err(Error::Parse(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::Adam { .. } => "adam",
        })
    }
}

/// First-order optimizer state. `apply` moves parameters along `direction`,
/// so callers pass the gradient to ascend and its negation to descend.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let n = if matches!(kind, OptimizerKind::Sgd) { 0 } else { n_params };
        Self { kind, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn apply(&mut self, params: &mut [f64], direction: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), direction.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in params.iter_mut().zip(direction) {
                    *w += lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..params.len() {
                    let g = direction[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let step = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                    params[i] += lr * step;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut w = vec![1.0, -2.0];
        Optimizer::new(OptimizerKind::Sgd, 2).apply(&mut w, &[0.5, 1.0], 0.1);
        assert_eq!(w, vec![1.05, -1.9]);
    }

    #[test]
    fn adam_first_step_is_sign_times_lr() {
        let mut w = vec![0.0, 0.0, 0.0];
        Optimizer::new(OptimizerKind::adam(), 3).apply(&mut w, &[3.0, -0.01, 0.0], 0.1);
        assert!((w[0] - 0.1).abs() < 1e-6);
        assert!((w[1] + 0.1).abs() < 1e-4);
        assert_eq!(w[2], 0.0);
    }
}
