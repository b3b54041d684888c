//! Adam with explicit, serializable moment estimates.

use serde::{Deserialize, Serialize};
use tch::nn::VarStore;
use tch::Tensor;

use crate::error::{Result, UdorError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(UdorError::config(format!("learning rate {} must be > 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(UdorError::config("Adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    names: Vec<String>,
    params: Vec<Tensor>,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl Adam {
    /// Tracks every trainable variable of `vs`, ordered by name.
    pub fn new(vs: &VarStore, config: AdamConfig) -> Self {
        let mut vars: Vec<(String, Tensor)> = vs.variables().into_iter().collect();
        vars.sort_by(|a, b| a.0.cmp(&b.0));
        let names = vars.iter().map(|(n, _)| n.clone()).collect();
        let first = vars.iter().map(|(_, t)| t.zeros_like()).collect();
        let second = vars.iter().map(|(_, t)| t.zeros_like()).collect();
        let params = vars.into_iter().map(|(_, t)| t).collect();
        Adam {
            config,
            steps: 0,
            names,
            params,
            first,
            second,
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.zero_grad();
        }
    }

    /// One update from the gradients currently stored on the parameters.
    pub fn step(&mut self) {
        self.steps += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bias1 = 1.0 - beta1.powi(self.steps as i32);
        let bias2 = 1.0 - beta2.powi(self.steps as i32);
        tch::no_grad(|| {
            for ((p, m), v) in self.params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                let g = p.grad();
                if !g.defined() {
                    continue;
                }
                let _ = m.g_mul_scalar_(beta1).g_add_(&(&g * (1.0 - beta1)));
                let _ = v.g_mul_scalar_(beta2).g_add_(&(g.square() * (1.0 - beta2)));
                let update = (&*m / bias1) / ((&*v / bias2).sqrt() + eps) * lr;
                let _ = p.g_sub_(&update);
            }
        });
    }

    pub fn backward_step(&mut self, loss: &Tensor) {
        self.zero_grad();
        loss.backward();
        self.step();
    }

    /// `(name, first moment, second moment)` in parameter-name order.
    pub fn moments(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.names
            .iter()
            .zip(self.first.iter().zip(&self.second))
            .map(|(n, (m, v))| (n.as_str(), m, v))
    }

    pub fn set_moments(&mut self, name: &str, first: &Tensor, second: &Tensor) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| UdorError::Format(format!("unknown optimizer slot {name}")))?;
        if self.first[i].size() != first.size() || self.second[i].size() != second.size() {
            return Err(UdorError::Format(format!("optimizer slot {name} has the wrong shape")));
        }
        tch::no_grad(|| {
            self.first[i].copy_(first);
            self.second[i].copy_(second);
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tch::{nn, Device, Kind};

    #[test]
    fn minimises_a_quadratic() {
        let vs = VarStore::new(Device::Cpu);
        let x = vs.root().var("x", &[3], nn::Init::Const(2.0));
        let mut opt = Adam::new(
            &vs,
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
        );
        for _ in 0..400 {
            let loss = x.square().sum(Kind::Float);
            opt.backward_step(&loss);
        }
        assert!(x.abs().max().double_value(&[]) < 0.05);
        assert_eq!(opt.steps, 400);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let vs = VarStore::new(Device::Cpu);
        let x = vs.root().var("x", &[1], nn::Init::Const(1.0));
        let mut opt = Adam::new(&vs, AdamConfig::default());
        opt.backward_step(&(&x * 3.0).sum(Kind::Float));
        // bias-corrected first step is lr * sign(g)
        assert!((x.double_value(&[0]) - (1.0 - 1e-4)).abs() < 1e-7);
    }
}
