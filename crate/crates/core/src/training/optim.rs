use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::network::{Gradients, ModelParams};

const MOMENTUM: f64 = 0.9;
const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Adam at a constant learning rate.
    Adam,
    /// SGD with momentum 0.9 and a cosine-annealed learning rate.
    SgdCosine,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd-cosine" | "sgd" => Ok(OptimizerKind::SgdCosine),
            other => Err(Error::config(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdCosine => "sgd-cosine",
        })
    }
}

/// Cosine annealing from `lr_initial` at epoch 0 to `lr_floor` at epoch `total`.
pub fn cosine_lr(epoch: usize, total: usize, lr_initial: f64, lr_floor: f64) -> f64 {
    if total == 0 {
        return lr_initial;
    }
    let t = epoch.min(total) as f64 / total as f64;
    let c = 0.5 * (1.0 + (PI * t).cos());
    c * lr_initial + (1.0 - c) * lr_floor
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr_initial: f64,
    lr_floor: f64,
    schedule_len: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    /// `epochs` is the run length; the cosine schedule reaches the floor on the last epoch.
    pub fn new(
        kind: OptimizerKind,
        lr_initial: f64,
        lr_floor: f64,
        epochs: usize,
        num_params: usize,
    ) -> Result<Self> {
        if !(lr_initial.is_finite() && lr_initial > 0.0) {
            return Err(Error::config(format!(
                "learning rate {lr_initial} must be positive"
            )));
        }
        if !(lr_floor.is_finite() && lr_floor >= 0.0) {
            return Err(Error::config(format!(
                "learning rate floor {lr_floor} must be non-negative"
            )));
        }
        Ok(Self {
            kind,
            lr_initial,
            lr_floor,
            schedule_len: epochs.saturating_sub(1),
            m: vec![0.0; num_params],
            v: match kind {
                OptimizerKind::Adam => vec![0.0; num_params],
                OptimizerKind::SgdCosine => Vec::new(),
            },
            t: 0,
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        match self.kind {
            OptimizerKind::Adam => self.lr_initial,
            OptimizerKind::SgdCosine => {
                cosine_lr(epoch, self.schedule_len, self.lr_initial, self.lr_floor)
            }
        }
    }

    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &Gradients,
        epoch: usize,
    ) -> Result<()> {
        let g = grads.flat();
        if g.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::invalid(
                "gradient, parameter and optimizer sizes differ",
            ));
        }
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            let what = match params.locate(i) {
                Some((name, j)) => format!("gradient of {name}[{j}]"),
                None => "gradient".to_string(),
            };
            return Err(Error::NonFinite { what, index: i });
        }
        let lr = self.lr(epoch);
        let p = params.flat_mut();
        match self.kind {
            OptimizerKind::SgdCosine => {
                for ((w, m), &gi) in p.iter_mut().zip(&mut self.m).zip(g) {
                    *m = MOMENTUM * *m + gi;
                    *w -= lr * *m;
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - BETA1.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                for (((w, m), v), &gi) in p.iter_mut().zip(&mut self.m).zip(&mut self.v).zip(g) {
                    *m = BETA1 * *m + (1.0 - BETA1) * gi;
                    *v = BETA2 * *v + (1.0 - BETA2) * gi * gi;
                    *w -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ModelParams {
        let mut p = ModelParams::new();
        p.add("w", &[1], vec![v]);
        p
    }

    #[test]
    fn cosine_midpoint_and_endpoints() {
        assert!((cosine_lr(50, 100, 0.1, 0.001) - 0.0505).abs() < 1e-12);
        assert!((cosine_lr(0, 100, 0.1, 0.001) - 0.1).abs() < 1e-12);
        assert!((cosine_lr(100, 100, 0.1, 0.001) - 0.001).abs() < 1e-12);
    }

    #[test]
    fn schedule_hits_floor_on_last_epoch() {
        let o = Optimizer::new(OptimizerKind::SgdCosine, 0.1, 0.001, 10, 1).unwrap();
        assert!((o.lr(0) - 0.1).abs() < 1e-12);
        assert!((o.lr(9) - 0.001).abs() < 1e-12);
    }

    #[test]
    fn sgd_zero_gradient_is_fixed_point() {
        let mut p = scalar(0.7);
        let g = p.zeros_like();
        let mut o = Optimizer::new(OptimizerKind::SgdCosine, 0.1, 0.001, 5, 1).unwrap();
        for e in 0..5 {
            o.step(&mut p, &g, e).unwrap();
        }
        assert_eq!(p.flat(), &[0.7]);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut p = scalar(0.0);
        let mut g = p.zeros_like();
        g.flat_mut()[0] = 1.0;
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.001, 0.0, 1, 1).unwrap();
        o.step(&mut p, &g, 0).unwrap();
        assert!((p.flat()[0] + 0.001).abs() < 1e-10);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = scalar(0.0);
        let mut g = p.zeros_like();
        g.flat_mut()[0] = f64::NAN;
        let mut o = Optimizer::new(OptimizerKind::Adam, 0.001, 0.0, 1, 1).unwrap();
        let err = o.step(&mut p, &g, 0).unwrap_err();
        assert!(err.to_string().contains("w[0]"), "{err}");
    }
}
