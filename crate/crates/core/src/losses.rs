//! Training objectives.
//!
//! Squared-error terms are summed over the elements of each sample and then
//! averaged over the batch. All functions are generic over tensor precision;
//! the gradient checks run them in 64-bit.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tch::nn::Module;
use tch::{Kind, Tensor};

use crate::error::{Result, UdorError};
use crate::networks::PartClassifier;

/// Lower clamp for every log argument.
pub const LOG_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Representation term inside the reconstruction loss.
    pub rho: f64,
    /// Empty-feature cross-entropy inside the fuzzy classification loss.
    pub tau: f64,
    /// Empty-image term inside the object-removing loss.
    pub omega: f64,
    /// Gradient-penalty weight.
    pub lambda_gp: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            rho: 1.0,
            tau: 1.0,
            omega: 1.0,
            lambda_gp: 10.0,
            alpha: 1.0,
            beta: 0.1,
            gamma: 1.0,
            eta: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("rho", self.rho),
            ("tau", self.tau),
            ("omega", self.omega),
            ("lambda_gp", self.lambda_gp),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("eta", self.eta),
        ];
        for (name, v) in all {
            if !v.is_finite() || v < 0.0 {
                return Err(UdorError::config(format!("weight {name} = {v} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Per-step loss values. `total` is the generator-side objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub cla: f64,
    pub rem: f64,
    pub adv_generator: f64,
    pub adv_critic: f64,
    pub gp: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// First non-finite component, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("rec", self.rec),
            ("cla", self.cla),
            ("rem", self.rem),
            ("adv_g", self.adv_generator),
            ("adv_c", self.adv_critic),
            ("gp", self.gp),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.size() != b.size() {
        return Err(UdorError::shape(format!(
            "{what}: {:?} vs {:?}",
            a.size(),
            b.size()
        )));
    }
    Ok(())
}

/// `mean_b sum_i (a - b)^2` over a batch-major tensor.
pub fn batch_squared_error(a: &Tensor, b: &Tensor) -> Tensor {
    (a - b).square().flatten(1, -1).sum_dim_intlist([1i64].as_slice(), false, a.kind()).mean(a.kind())
}

/// `||I - I'||^2 + rho ||R - R'||^2`.
pub fn reconstruction_loss(
    image: &Tensor,
    image_rec: &Tensor,
    code: &Tensor,
    code_rec: &Tensor,
    rho: f64,
) -> Result<Tensor> {
    same_shape(image, image_rec, "reconstruction images")?;
    same_shape(code, code_rec, "reconstruction codes")?;
    Ok(batch_squared_error(image, image_rec) + batch_squared_error(code, code_rec) * rho)
}

/// Fuzzy classification from classifier outputs.
///
/// `probs` is `[B, n, n + 1]` (part `k` of each code), `empty_probs` is
/// `[n, n + 1]` (part `k` of the empty code). Part `k` is accepted when it is
/// classified either as empty (class 0) or as category `k` (class `k + 1`):
///
/// `-sum_k log(1 - (1 - p_k[0]) (1 - p_k[k+1])) - tau * mean_k log p0_k[0]`
///
/// summed over parts, averaged over the batch.
pub fn fuzzy_classification_from_probs(probs: &Tensor, empty_probs: &Tensor, tau: f64) -> Result<Tensor> {
    let s = probs.size();
    if s.len() != 3 || s[2] != s[1] + 1 {
        return Err(UdorError::shape(format!("fuzzy probs of shape {s:?}, expected [B, n, n+1]")));
    }
    let n = s[1];
    if empty_probs.size() != [n, n + 1] {
        return Err(UdorError::shape(format!(
            "empty probs of shape {:?}, expected [{n}, {}]",
            empty_probs.size(),
            n + 1
        )));
    }
    let nan = |t: &Tensor| t.isnan().any().int64_value(&[]) != 0;
    if nan(probs) || nan(empty_probs) {
        return Err(UdorError::numeric("classifier output"));
    }
    let kind = probs.kind();
    let p_empty = probs.select(2, 0);
    // p[:, k, k + 1] for every k
    let own_index = Tensor::arange_start(1, n + 1, (Kind::Int64, probs.device())).view([1, n, 1]).expand([s[0], n, 1], false);
    let p_own = probs.gather(2, &own_index, false).squeeze_dim(2);
    let miss = (p_empty.ones_like() - &p_empty) * (p_own.ones_like() - &p_own);
    let accept = (miss.ones_like() - miss).clamp(LOG_EPS, 1.0);
    let first = -accept.log().sum_dim_intlist([1i64].as_slice(), false, kind).mean(kind);
    let empty_term = -empty_probs.select(1, 0).clamp(LOG_EPS, 1.0).log().mean(kind);
    Ok(first + empty_term * tau)
}

/// Classifies each part of `parts` (`[B, n, part_length]`) and of the empty
/// parts (`[n, part_length]`), then applies the fuzzy classification loss.
pub fn fuzzy_classification_loss(
    parts: &Tensor,
    classifier: &PartClassifier,
    empty_parts: &Tensor,
    tau: f64,
) -> Result<Tensor> {
    let probs = classifier.classify_part(parts)?;
    let empty_probs = classifier.classify_part(empty_parts)?;
    fuzzy_classification_from_probs(&probs, &empty_probs, tau)
}

/// `||R0 - R''||^2 + omega ||I_e - I_e'||^2`.
pub fn object_removing_loss(
    code_removed: &Tensor,
    code_removed_rec: &Tensor,
    empty_image: &Tensor,
    empty_image_rec: &Tensor,
    omega: f64,
) -> Result<Tensor> {
    same_shape(code_removed, code_removed_rec, "removed codes")?;
    same_shape(empty_image, empty_image_rec, "empty images")?;
    Ok(batch_squared_error(code_removed, code_removed_rec)
        + batch_squared_error(empty_image, empty_image_rec) * omega)
}

/// Where the gradient penalty is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltySamples {
    /// Random interpolates between real and generated images.
    #[default]
    Interpolates,
    /// The generated images themselves.
    Fakes,
}

/// Per-sample `||grad_x critic(x)||_2` at `points`, differentiable w.r.t. the
/// critic parameters and `points`.
pub fn critic_input_gradient_norm<C: Module>(critic: &C, points: &Tensor) -> Tensor {
    let x = if points.requires_grad() {
        points.shallow_clone()
    } else {
        points.detach().set_requires_grad(true)
    };
    let scores = critic.forward(&x);
    let grads = Tensor::run_backward(&[scores.sum(scores.kind())], &[&x], true, true);
    let g = grads[0].flatten(1, -1);
    // the tiny offset keeps the double backward finite at a zero gradient
    (g.square().sum_dim_intlist([1i64].as_slice(), false, g.kind()) + 1e-24).sqrt()
}

/// `x̂ = eps * real + (1 - eps) * fake` with per-sample `eps` of shape `[B]`.
pub fn interpolate(real: &Tensor, fake: &Tensor, eps: &Tensor) -> Tensor {
    let mut shape = vec![real.size()[0]];
    shape.extend(std::iter::repeat_n(1, real.dim() - 1));
    let e = eps.to_kind(real.kind()).to_device(real.device()).view(shape.as_slice());
    &e * real + (e.ones_like() - &e) * fake
}

/// Critic objective with gradient penalty, returning `(loss, penalty)` where
/// `loss = E[f(fake)] - E[f(real)] + lambda * penalty` and
/// `penalty = E[(||grad f(x̂)|| - 1)^2]`.
pub fn critic_loss_wgan_gp_with_eps<C: Module>(
    critic: &C,
    real: &Tensor,
    fake: &Tensor,
    lambda_gp: f64,
    eps: &Tensor,
    samples: PenaltySamples,
) -> Result<(Tensor, Tensor)> {
    same_shape(real, fake, "critic batches")?;
    let kind = real.kind();
    let wasserstein = critic.forward(fake).mean(kind) - critic.forward(real).mean(kind);
    let points = match samples {
        PenaltySamples::Interpolates => interpolate(real, fake, eps),
        PenaltySamples::Fakes => fake.shallow_clone(),
    };
    let norms = critic_input_gradient_norm(critic, &points);
    let gp = (norms - 1.0).square().mean(kind);
    Ok((wasserstein + &gp * lambda_gp, gp))
}

/// As [`critic_loss_wgan_gp_with_eps`], drawing `eps ~ U(0, 1)` per sample from `rng`.
pub fn critic_loss_wgan_gp<C: Module, R: Rng>(
    critic: &C,
    real: &Tensor,
    fake: &Tensor,
    lambda_gp: f64,
    rng: &mut R,
    samples: PenaltySamples,
) -> Result<(Tensor, Tensor)> {
    let b = real.size()[0] as usize;
    let eps: Vec<f64> = (0..b).map(|_| rng.gen::<f64>()).collect();
    critic_loss_wgan_gp_with_eps(critic, real, fake, lambda_gp, &Tensor::from_slice(&eps), samples)
}

/// `-E[f(fake)]`, minimised by the generator side.
pub fn generator_adversarial_term<C: Module>(critic: &C, fake: &Tensor) -> Tensor {
    -critic.forward(fake).mean(fake.kind())
}

/// Supervised per-part cross-entropy used by the S-AE baseline; `labels` is
/// `[B, n]` with 0 for an absent category and `k + 1` for category `k`.
pub fn supervised_part_loss(parts: &Tensor, classifier: &PartClassifier, labels: &Tensor) -> Result<Tensor> {
    let s = parts.size();
    if s.len() != 3 || labels.size() != [s[0], s[1]] {
        return Err(UdorError::shape(format!(
            "parts {:?} vs labels {:?}",
            s,
            labels.size()
        )));
    }
    let logits = classifier.logits(parts);
    let classes = logits.size()[2];
    // log_softmax in the logits' own precision (the tch helper casts to f32)
    let ce = logits
        .view([-1, classes])
        .log_softmax(-1, logits.kind())
        .nll_loss(&labels.view([-1]).to_kind(Kind::Int64));
    // mean over (sample, part) pairs -> sum over parts, mean over samples
    Ok(ce * s[1] as f64)
}

/// Component values feeding the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub rec: f64,
    pub cla: f64,
    pub rem: f64,
    pub adv_generator: f64,
    pub adv_critic: f64,
    pub gp: f64,
}

/// `alpha rec + beta cla + gamma rem + eta adv`.
pub fn total_loss(c: LossComponents, w: &LossWeights) -> Result<LossBreakdown> {
    let b = LossBreakdown {
        rec: c.rec,
        cla: c.cla,
        rem: c.rem,
        adv_generator: c.adv_generator,
        adv_critic: c.adv_critic,
        gp: c.gp,
        total: w.alpha * c.rec + w.beta * c.cla + w.gamma * c.rem + w.eta * c.adv_generator,
    };
    if let Some(name) = b.non_finite() {
        return Err(UdorError::numeric(name));
    }
    Ok(b)
}
