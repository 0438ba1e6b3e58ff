//! Loss terms. Every map-valued loss sums over pixels and averages over the
//! batch; probabilities are clamped to `[eps, 1 - eps]` inside the logs only.
//!
//! Sign conventions:
//! * the adversarial pace loss is *maximised* by the GSM branch;
//! * the predictor step *minimises* `L^l + L^u + beta * (generator terms + L^pw)`,
//!   where the generator terms are the predictor-dependent part of the pace
//!   loss (`log(1 - D(T))`, or `-log D(T)` in the non-saturating variant).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LossConfig {
    pub beta: f64,
    pub eta: f64,
    pub eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 0.01, eta: 0.7, eps: 1e-7 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !(self.eta >= 0.0) {
            return Err(Error::Config(format!("beta ({}) and eta ({}) must be nonnegative", self.beta, self.eta)));
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::Config(format!("clamp eps {} must lie in (0, 0.5)", self.eps)));
        }
        Ok(())
    }
}

/// A loss value with its gradient w.r.t. the first argument.
#[derive(Clone, Debug)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Tensor<T>,
}

fn clamp<T: Real>(p: T, eps: T) -> (T, bool) {
    if p < eps {
        (eps, true)
    } else if p > T::one() - eps {
        (T::one() - eps, true)
    } else {
        (p, false)
    }
}

/// `-mean_n sum_px w * (y log p + (1 - y) log(1 - p))` and its gradient
/// w.r.t. `p`. The weight slot is shared by every cross-entropy term so that
/// unit weights reproduce the unweighted loss bit for bit.
fn weighted_ce<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, weights: Option<&Tensor<T>>, eps: f64) -> Result<LossGrad<T>> {
    pred.ensure_same_shape(target, "cross-entropy target")?;
    if let Some(w) = weights {
        pred.ensure_same_shape(w, "cross-entropy weights")?;
    }
    let eps = T::lit(eps);
    let n = T::from_usize(pred.n.max(1)).unwrap();
    let mut total = T::zero();
    let mut grad = Tensor::zeros(pred.n, pred.c, pred.h, pred.w);
    for i in 0..pred.len() {
        let (p, clamped) = clamp(pred.data[i], eps);
        let y = target.data[i];
        let w = weights.map_or(T::one(), |w| w.data[i]);
        let term = y * p.ln() + (T::one() - y) * (T::one() - p).ln();
        total = total - w * term;
        if !clamped {
            grad.data[i] = -w * (y / p - (T::one() - y) / (T::one() - p)) / n;
        }
    }
    Ok(LossGrad { value: total / n, grad })
}

fn ensure_binary<T: Real>(t: &Tensor<T>, what: &str) -> Result<()> {
    if t.data.iter().all(|&v| v == T::zero() || v == T::one()) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} must be binary")))
    }
}

/// Cross-entropy against annotated masks.
pub fn labeled_loss<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>, eps: f64) -> Result<LossGrad<T>> {
    ensure_binary(gt, "ground-truth mask")?;
    weighted_ce(pred, gt, None, eps)
}

/// Reliability-weighted cross-entropy against pseudo-labels. The weights are
/// constants: no gradient is produced for them.
pub fn unlabeled_loss<T: Real>(pred: &Tensor<T>, pseudo: &Tensor<T>, weights: &Tensor<T>, eps: f64) -> Result<LossGrad<T>> {
    ensure_binary(pseudo, "pseudo-label")?;
    weighted_ce(pred, pseudo, Some(weights), eps)
}

/// Cross-entropy of the PW output against a soft reliability target.
pub fn pixel_weight_loss<T: Real>(pw_out: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<LossGrad<T>> {
    weighted_ce(pw_out, target, None, eps)
}

/// Per-pixel reliability target `1 - |pred - gt|`.
pub fn reliability_target<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Tensor<T>> {
    pred.ensure_same_shape(gt, "reliability target")?;
    let mut out = pred.clone();
    for (o, &g) in out.data.iter_mut().zip(&gt.data) {
        *o = (T::one() - (*o - g).abs()).max(T::zero()).min(T::one());
    }
    Ok(out)
}

/// Per-pixel binary cross-entropy values (no reduction), used by the
/// self-paced baselines to rank pixels.
pub fn pixel_ce<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    pred.ensure_same_shape(target, "pixel cross-entropy")?;
    let eps = T::lit(eps);
    let mut out = pred.clone();
    for (o, &y) in out.data.iter_mut().zip(&target.data) {
        let (p, _) = clamp(*o, eps);
        *o = -(y * p.ln() + (T::one() - y) * (T::one() - p).ln());
    }
    Ok(out)
}

fn log_real<T: Real>(z: &[T], eps: T) -> (T, [T; 2]) {
    let p = crate::nn::sigmoid(z[1] - z[0]);
    let (pc, clamped) = clamp(p, eps);
    // d log(p) / d(z_real) = 1 - p
    let g = if clamped { T::zero() } else { T::one() - p };
    (pc.ln(), [-g, g])
}

fn log_fake<T: Real>(z: &[T], eps: T) -> (T, [T; 2]) {
    let p = crate::nn::sigmoid(z[1] - z[0]);
    let (pc, clamped) = clamp(p, eps);
    // d log(1 - p) / d(z_real) = -p
    let g = if clamped { T::zero() } else { -p };
    (((T::one() - pc).ln()), [-g, g])
}

/// Value of the adversarial pace loss and its gradients w.r.t. the three
/// groups of realness logits (`[n, 2]` each).
#[derive(Clone, Debug)]
pub struct AdversarialTerms<T> {
    pub value: T,
    pub real_term: T,
    pub fake_labeled_term: T,
    pub fake_unlabeled_term: T,
    pub grad_gt: Vec<T>,
    pub grad_pred_labeled: Vec<T>,
    pub grad_pred_unlabeled: Vec<T>,
}

fn group_mean<T: Real>(logits: &[T], scale: T, eps: T, f: fn(&[T], T) -> (T, [T; 2])) -> (T, Vec<T>) {
    let n = logits.len() / 2;
    if n == 0 {
        return (T::zero(), Vec::new());
    }
    let inv = scale / T::from_usize(n).unwrap();
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for z in logits.chunks(2) {
        let (v, g) = f(z, eps);
        value = value + v;
        grad.extend_from_slice(&[g[0] * inv, g[1] * inv]);
    }
    (value * inv, grad)
}

/// `mean log D(Y^l) + mean log(1 - D(T(X^l))) + eta * mean log(1 - D(T(X^u)))`
/// where `D` is the softmax probability of the "annotated" entry.
pub fn pace_adversarial_loss<T: Real>(
    gt_logits: &[T],
    pred_labeled_logits: &[T],
    pred_unlabeled_logits: &[T],
    eta: f64,
    eps: f64,
) -> Result<AdversarialTerms<T>> {
    if gt_logits.is_empty() || pred_labeled_logits.is_empty() {
        return Err(Error::Config("adversarial pace loss needs at least one labeled item".into()));
    }
    if !gt_logits.len().is_multiple_of(2) || !pred_labeled_logits.len().is_multiple_of(2) || !pred_unlabeled_logits.len().is_multiple_of(2) {
        return Err(Error::Shape("realness logits come in pairs".into()));
    }
    let eps = T::lit(eps);
    let (real_term, grad_gt) = group_mean(gt_logits, T::one(), eps, log_real);
    let (fake_labeled_term, grad_pred_labeled) = group_mean(pred_labeled_logits, T::one(), eps, log_fake);
    let (fake_unlabeled_term, grad_pred_unlabeled) = group_mean(pred_unlabeled_logits, T::lit(eta), eps, log_fake);
    Ok(AdversarialTerms {
        value: real_term + fake_labeled_term + fake_unlabeled_term,
        real_term,
        fake_labeled_term,
        fake_unlabeled_term,
        grad_gt,
        grad_pred_labeled,
        grad_pred_unlabeled,
    })
}

/// Predictor-side adversarial terms: `mean log(1 - D(T^l)) + eta * mean log(1 - D(T^u))`,
/// or with `non_saturating` the surrogate `-(mean log D(T^l) + eta * mean log D(T^u))`.
/// Returns the value and gradients w.r.t. both logit groups.
pub fn generator_adversarial_terms<T: Real>(
    pred_labeled_logits: &[T],
    pred_unlabeled_logits: &[T],
    eta: f64,
    eps: f64,
    non_saturating: bool,
) -> (T, Vec<T>, Vec<T>) {
    let eps = T::lit(eps);
    if non_saturating {
        let (a, ga) = group_mean(pred_labeled_logits, -T::one(), eps, log_real);
        let (b, gb) = group_mean(pred_unlabeled_logits, -T::lit(eta), eps, log_real);
        (a + b, ga, gb)
    } else {
        let (a, ga) = group_mean(pred_labeled_logits, T::one(), eps, log_fake);
        let (b, gb) = group_mean(pred_unlabeled_logits, T::lit(eta), eps, log_fake);
        (a + b, ga, gb)
    }
}

/// The scalar pieces of the predictor-step objective.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct ObjectiveParts {
    pub labeled: f64,
    pub unlabeled: f64,
    /// Predictor-dependent adversarial terms (see module docs for the sign).
    pub adversarial: f64,
    pub pixel_weight: f64,
}

/// `L^l + L^u + beta * (adversarial + L^pw)`.
pub fn total_predictor_objective(parts: &ObjectiveParts, beta: f64) -> f64 {
    parts.labeled + parts.unlabeled + beta * (parts.adversarial + parts.pixel_weight)
}
