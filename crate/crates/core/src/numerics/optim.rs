//! Adam with L2 weight decay and a step learning-rate schedule.

use std::collections::BTreeMap;

use super::{ParamSet, Scalar};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam optimizer; per-parameter first/second moment state keyed by path.
pub struct Adam<F> {
    cfg: AdamConfig,
    step: u64,
    m: BTreeMap<String, Vec<F>>,
    v: BTreeMap<String, Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(cfg: AdamConfig) -> Self {
        Self {
            cfg,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update over every parameter that currently holds a gradient.
    /// `lr` overrides the configured base rate (schedules pass it in).
    pub fn step(&mut self, params: &mut ParamSet<F>, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let b1 = F::from_f64_c(self.cfg.beta1);
        let b2 = F::from_f64_c(self.cfg.beta2);
        let eps = F::from_f64_c(self.cfg.eps);
        let wd = F::from_f64_c(self.cfg.weight_decay);
        let lr_t = F::from_f64_c(lr);
        let bc1 = F::one() - b1.powi(t);
        let bc2 = F::one() - b2.powi(t);

        let paths: Vec<String> = params.paths().cloned().collect();
        for path in paths {
            let (grad, data): (Vec<F>, Vec<F>) = {
                let p = params.get(&path)?;
                match p.grad() {
                    Some(g) => (g.to_vec(), p.data().to_vec()),
                    None => continue,
                }
            };
            let m = self
                .m
                .entry(path.clone())
                .or_insert_with(|| vec![F::zero(); grad.len()]);
            let v = self
                .v
                .entry(path.clone())
                .or_insert_with(|| vec![F::zero(); grad.len()]);
            let mut delta = vec![F::zero(); grad.len()];
            for i in 0..grad.len() {
                let g = grad[i] + wd * data[i];
                m[i] = b1 * m[i] + (F::one() - b1) * g;
                v[i] = b2 * v[i] + (F::one() - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                delta[i] = lr_t * m_hat / (v_hat.sqrt() + eps);
            }
            params.update(&path, |i, w| w - delta[i])?;
        }
        Ok(())
    }
}

/// Multiplicative decay at fixed epoch intervals.
#[derive(Debug, Clone, Copy)]
pub struct StepLr {
    pub base_lr: f64,
    pub step_epochs: usize,
    pub decay: f64,
}

impl StepLr {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.step_epochs == 0 {
            return self.base_lr;
        }
        self.base_lr * self.decay.powi((epoch / self.step_epochs) as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Tape, Tensor};

    #[test]
    fn adam_descends_on_quadratic() {
        // minimize (w - 3)^2 starting from 0
        let mut ps = ParamSet::new(0);
        ps.insert("w", Tensor::vector(vec![0.0]).unwrap());
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let mut tape = Tape::new();
            let w = tape.param(&ps, "w").unwrap();
            let target = tape.constant_scalar(3.0).unwrap();
            let loss = tape.squared_error(w, target).unwrap();
            let lv = tape.item(loss).unwrap();
            tape.backward_params(loss, &mut ps).unwrap();
            adam.step(&mut ps, 0.1).unwrap();
            last = lv;
        }
        assert!(last < 1e-3, "loss {last}");
        let w = ps.get("w").unwrap().data()[0];
        assert!((w - 3.0).abs() < 0.1, "w {w}");
    }

    #[test]
    fn step_lr_schedule() {
        let s = StepLr {
            base_lr: 0.001,
            step_epochs: 60,
            decay: 0.1,
        };
        assert_eq!(s.lr_at(0), 0.001);
        assert_eq!(s.lr_at(59), 0.001);
        assert!((s.lr_at(60) - 0.0001).abs() < 1e-12);
        assert!((s.lr_at(120) - 0.00001).abs() < 1e-12);
    }
}
