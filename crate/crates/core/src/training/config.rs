use serde::{Deserialize, Serialize};

use crate::error::{Result, UdorError};
use crate::latent::RemovalPolicy;
use crate::losses::{LossWeights, PenaltySamples};
use crate::optim::AdamConfig;

/// Which generator-side objective drives the part classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Unsupervised: fuzzy classification, object removal, adversarial term.
    #[default]
    Udor,
    /// Supervised autoencoder baseline: per-part cross-entropy against slot
    /// labels, no removal, no critic.
    SupervisedAe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Ablation {
    pub disable_rem: bool,
    pub disable_gan: bool,
}

/// The compared model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "UDOR")]
    Udor,
    #[serde(rename = "UDOR[-Rem]")]
    UdorNoRem,
    #[serde(rename = "UDOR[-GAN]")]
    UdorNoGan,
    #[serde(rename = "S-AE")]
    SupervisedAe,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Udor,
        Method::UdorNoRem,
        Method::UdorNoGan,
        Method::SupervisedAe,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Udor => "UDOR",
            Method::UdorNoRem => "UDOR[-Rem]",
            Method::UdorNoGan => "UDOR[-GAN]",
            Method::SupervisedAe => "S-AE",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "udor" => Ok(Method::Udor),
            "udor[-rem]" | "udor-rem" | "no-rem" => Ok(Method::UdorNoRem),
            "udor[-gan]" | "udor-gan" | "no-gan" => Ok(Method::UdorNoGan),
            "s-ae" | "sae" => Ok(Method::SupervisedAe),
            _ => Err(UdorError::config(format!("unknown method {s:?}"))),
        }
    }

    /// Applies this variant's switches to a base configuration.
    pub fn configure(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        c.objective = Objective::Udor;
        c.ablation = Ablation::default();
        match self {
            Method::Udor => {}
            Method::UdorNoRem => c.ablation.disable_rem = true,
            Method::UdorNoGan => c.ablation.disable_gan = true,
            Method::SupervisedAe => {
                c.objective = Objective::SupervisedAe;
                c.ablation = Ablation {
                    disable_rem: true,
                    disable_gan: true,
                };
            }
        }
        c
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub batch_size: usize,
    /// Generator steps.
    pub steps: u64,
    pub critic_steps: usize,
    pub generator_optimizer: AdamConfig,
    pub critic_optimizer: AdamConfig,
    pub seed: u64,
    pub objective: Objective,
    pub ablation: Ablation,
    pub removal: RemovalPolicy,
    pub penalty_samples: PenaltySamples,
    /// Write `ckpt_STEP.bin` every this many steps (0: final checkpoint only).
    pub checkpoint_every: u64,
    /// Torch intra-op threads (0: leave the library default).
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::default(),
            batch_size: 16,
            steps: 15_000,
            critic_steps: 5,
            generator_optimizer: AdamConfig::default(),
            critic_optimizer: AdamConfig::default(),
            seed: 0,
            objective: Objective::Udor,
            ablation: Ablation::default(),
            removal: RemovalPolicy::Single,
            penalty_samples: PenaltySamples::Interpolates,
            checkpoint_every: 0,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn gan_enabled(&self) -> bool {
        self.objective == Objective::Udor && !self.ablation.disable_gan
    }

    pub fn rem_enabled(&self) -> bool {
        self.objective == Objective::Udor && !self.ablation.disable_rem
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.generator_optimizer.validate()?;
        self.critic_optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(UdorError::config("batch_size must be positive"));
        }
        if self.gan_enabled() && self.critic_steps == 0 {
            return Err(UdorError::config("critic_steps must be >= 1 when the adversarial term is on"));
        }
        if let RemovalPolicy::Subset { p } = self.removal {
            if !(p > 0.0 && p <= 1.0) {
                return Err(UdorError::config("subset removal probability must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_switches() {
        let base = TrainConfig::default();
        assert!(Method::Udor.configure(&base).gan_enabled());
        assert!(!Method::UdorNoRem.configure(&base).rem_enabled());
        assert!(Method::UdorNoRem.configure(&base).gan_enabled());
        assert!(!Method::UdorNoGan.configure(&base).gan_enabled());
        let sae = Method::SupervisedAe.configure(&base);
        assert!(!sae.gan_enabled() && !sae.rem_enabled());
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
    }

    #[test]
    fn validation() {
        let mut c = TrainConfig::default();
        c.validate().unwrap();
        c.critic_steps = 0;
        assert!(c.validate().is_err());
        c.ablation.disable_gan = true;
        c.validate().unwrap();
        c.generator_optimizer.lr = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"steps": 10, "seed": 3}"#).unwrap();
        assert_eq!(c.steps, 10);
        assert_eq!(c.batch_size, 16);
        assert_eq!(c.weights, LossWeights::default());
    }
}
