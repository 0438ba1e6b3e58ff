//! Objectives of the three training stages as pure functions of the
//! parameters, generic over precision so they can be checked against finite
//! differences in f64.

use crate::error::{Error, Result};
use crate::losses::{self, ObjectiveParts};
use crate::pace::{GsmOutput, PaceGenerator};
use crate::predictor::{self, Predictor, PredictorTrace};
use crate::spl::{self, SplScheme};
use crate::tensor::{Real, Tensor};

use super::config::{Adversary, PwTarget, TrainConfig, Weighting};

/// The predictor and both pace branches.
#[derive(Clone, Debug)]
pub struct Networks {
    pub predictor: Predictor,
    pub pace: PaceGenerator,
}

impl Networks {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self { predictor: Predictor::new(cfg.predictor.clone())?, pace: PaceGenerator::new(cfg.pace.clone())? })
    }
}

/// Task-predictor, GSM and PW parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSets<T> {
    pub psi: Vec<T>,
    pub phi_g: Vec<T>,
    pub phi_v: Vec<T>,
}

impl<T: Real> ParamSets<T> {
    pub fn init(nets: &Networks) -> Self {
        let (phi_g, phi_v) = nets.pace.init_params();
        Self { psi: nets.predictor.init_params(), phi_g, phi_v }
    }

    pub fn cast<U: Real>(&self) -> ParamSets<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        ParamSets { psi: c(&self.psi), phi_g: c(&self.phi_g), phi_v: c(&self.phi_v) }
    }
}

/// Pseudo-labels and reliability weights of an unlabeled batch. Both are
/// plain values: the predictor step reads them and never differentiates them.
#[derive(Clone, Debug, PartialEq)]
pub struct Inferred<T> {
    pub pseudo: Tensor<T>,
    pub weights: Tensor<T>,
}

/// Which terms the predictor and pace steps include.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSpec {
    pub unlabeled: bool,
    pub adversary: Adversary,
    pub pw_target: Option<PwTarget>,
    pub beta: f64,
    pub eta: f64,
    pub eps: f64,
    pub non_saturating: bool,
}

impl ObjectiveSpec {
    /// Terms of the alternating phase (`warmup = false`) or of warmup, which
    /// sees only annotated images and leaves the PW branch alone.
    pub fn new(cfg: &TrainConfig, warmup: bool) -> Self {
        Self {
            unlabeled: cfg.mode.uses_unlabeled() && !warmup,
            adversary: cfg.mode.adversary(),
            pw_target: if warmup { None } else { cfg.mode.pw_target() },
            beta: cfg.loss.beta,
            eta: cfg.loss.eta,
            eps: cfg.loss.eps,
            non_saturating: cfg.non_saturating,
        }
    }
}

/// One training batch. `unlabeled` pairs the images with their inferred
/// pseudo-labels and weights.
#[derive(Clone, Copy, Debug)]
pub struct PredictorBatch<'a, T> {
    pub labeled_images: &'a Tensor<T>,
    pub labeled_masks: &'a Tensor<T>,
    pub unlabeled: Option<(&'a Tensor<T>, &'a Inferred<T>)>,
}

/// Detached inputs of the PW term: GSM features and their soft targets.
#[derive(Clone, Debug)]
pub struct PwInputs<T> {
    pub items: Vec<(Vec<Tensor<T>>, Tensor<T>)>,
}

#[derive(Clone, Debug)]
pub struct PredictorGrads<T> {
    pub parts: ObjectiveParts,
    pub total: f64,
    pub psi: Vec<T>,
    /// Present when the PW term is active.
    pub phi_v: Option<Vec<T>>,
}

#[derive(Clone, Debug)]
pub struct PaceGrads<T> {
    /// The pace objective, to be maximised.
    pub value: f64,
    /// Gradient of `value` w.r.t. the GSM branch.
    pub phi_g: Vec<T>,
    /// Gradient of `value` w.r.t. the PW branch (per-pixel adversary only).
    pub phi_v: Option<Vec<T>>,
}

fn add_scaled<T: Real>(dst: &mut Tensor<T>, src: &Tensor<T>, scale: T) {
    for (d, &s) in dst.data.iter_mut().zip(&src.data) {
        *d = *d + scale * s;
    }
}

fn zeros_like<T: Real>(t: &Tensor<T>) -> Tensor<T> {
    Tensor::zeros(t.n, t.c, t.h, t.w)
}

/// Detached PW inputs for the current predictions on annotated images.
pub fn pw_inputs<T: Real>(
    nets: &Networks,
    params: &ParamSets<T>,
    target: PwTarget,
    labeled_images: &Tensor<T>,
    labeled_masks: &Tensor<T>,
) -> Result<PwInputs<T>> {
    let pred = nets.predictor.predict(&params.psi, labeled_images)?;
    pw_inputs_for(nets, params, target, &pred, labeled_masks)
}

/// [`pw_inputs`] from predictions that are already computed.
pub fn pw_inputs_for<T: Real>(
    nets: &Networks,
    params: &ParamSets<T>,
    target: PwTarget,
    pred: &Tensor<T>,
    labeled_masks: &Tensor<T>,
) -> Result<PwInputs<T>> {
    let pred_features = nets.pace.gsm_forward(&params.phi_g, pred)?.features;
    let items = match target {
        PwTarget::Reliability => vec![(pred_features, losses::reliability_target(pred, labeled_masks)?)],
        PwTarget::Binary => {
            let gt_features = nets.pace.gsm_forward(&params.phi_g, labeled_masks)?.features;
            vec![(gt_features, labeled_masks.map(|_| T::one())), (pred_features, pred.map(|_| T::zero()))]
        }
    };
    Ok(PwInputs { items })
}

/// Per-pixel realness of masks under the GSM trunk and PW decoder.
fn pixel_realness<T: Real>(nets: &Networks, params: &ParamSets<T>, masks: &Tensor<T>) -> Result<(GsmOutput<T>, crate::pace::PwOutput<T>)> {
    let g = nets.pace.gsm_forward(&params.phi_g, masks)?;
    let w = nets.pace.pw_forward(&params.phi_v, &g.features)?;
    Ok((g, w))
}

/// Predictor-side adversarial value and its gradient w.r.t. the predicted maps.
fn generator_terms<T: Real>(
    nets: &Networks,
    params: &ParamSets<T>,
    spec: &ObjectiveSpec,
    pred_l: &Tensor<T>,
    pred_u: Option<&Tensor<T>>,
) -> Result<(f64, Tensor<T>, Option<Tensor<T>>)> {
    let beta = T::lit(spec.beta);
    match spec.adversary {
        Adversary::None => Ok((0.0, zeros_like(pred_l), pred_u.map(zeros_like))),
        Adversary::Image => {
            let gl = nets.pace.gsm_forward(&params.phi_g, pred_l)?;
            let gu = pred_u.map(|p| nets.pace.gsm_forward(&params.phi_g, p)).transpose()?;
            let empty = Vec::new();
            let lu = gu.as_ref().map_or(&empty, |g| &g.logits);
            let (value, dl, du) = losses::generator_adversarial_terms(&gl.logits, lu, spec.eta, spec.eps, spec.non_saturating);
            let scale = |g: Vec<T>| g.into_iter().map(|v| v * beta).collect::<Vec<T>>();
            let grad_l = nets.pace.gsm.backward(&params.phi_g, &gl, Some(&scale(dl)), None, None, true).unwrap();
            let grad_u = gu.map(|g| nets.pace.gsm.backward(&params.phi_g, &g, Some(&scale(du)), None, None, true).unwrap());
            Ok((value.as_f64(), grad_l, grad_u))
        }
        Adversary::Pixel => {
            let mut value = 0.0;
            let mut one = |pred: &Tensor<T>, weight: f64| -> Result<Tensor<T>> {
                let (g, w) = pixel_realness(nets, params, pred)?;
                // Saturating: minimise sum log(1 - D) = -CE(D, 0). Non-saturating: minimise CE(D, 1).
                let (v, mut grad) = if spec.non_saturating {
                    let l = losses::pixel_weight_loss(&w.weights, &w.weights.map(|_| T::one()), spec.eps)?;
                    (l.value.as_f64(), l.grad)
                } else {
                    let l = losses::pixel_weight_loss(&w.weights, &w.weights.map(|_| T::zero()), spec.eps)?;
                    (-l.value.as_f64(), l.grad.map(|x| -x))
                };
                value += weight * v;
                grad = grad.map(|x| x * beta * T::lit(weight));
                let fg = nets.pace.pw.backward(&params.phi_v, &w, &grad, None, true).unwrap();
                Ok(nets.pace.gsm.backward(&params.phi_g, &g, None, Some(&fg), None, true).unwrap())
            };
            let grad_l = one(pred_l, 1.0)?;
            let grad_u = pred_u.map(|p| one(p, spec.eta)).transpose()?;
            Ok((value, grad_l, grad_u))
        }
    }
}

/// The predictor-step objective `L^l + L^u + beta * (adversarial + L^pw)`
/// and its gradients w.r.t. the predictor and PW parameters. The GSM branch
/// is read but receives no gradient. `pw` supplies frozen PW inputs; when
/// absent they are computed from the current parameters and then treated as
/// constants.
pub fn predictor_objective<T: Real>(
    nets: &Networks,
    params: &ParamSets<T>,
    spec: &ObjectiveSpec,
    batch: &PredictorBatch<'_, T>,
    pw: Option<&PwInputs<T>>,
) -> Result<PredictorGrads<T>> {
    let trace_l = nets.predictor.forward(&params.psi, batch.labeled_images)?;
    let trace_u = match batch.unlabeled {
        Some((images, _)) if spec.unlabeled => Some(nets.predictor.forward(&params.psi, images)?),
        _ => None,
    };
    predictor_objective_traced(nets, params, spec, batch, pw, &trace_l, trace_u.as_ref())
}

/// [`predictor_objective`] reusing forward passes of the predictor on the
/// batch's labeled and (when used) unlabeled images under `params.psi`.
pub fn predictor_objective_traced<T: Real>(
    nets: &Networks,
    params: &ParamSets<T>,
    spec: &ObjectiveSpec,
    batch: &PredictorBatch<'_, T>,
    pw: Option<&PwInputs<T>>,
    trace_l: &PredictorTrace<T>,
    trace_u: Option<&PredictorTrace<T>>,
) -> Result<PredictorGrads<T>> {
    let ll = losses::labeled_loss(&trace_l.probs, batch.labeled_masks, spec.eps)?;
    let mut parts = ObjectiveParts { labeled: ll.value.as_f64(), ..Default::default() };
    let mut grad_l = ll.grad;

    let unlabeled = if spec.unlabeled { batch.unlabeled } else { None };
    let mut grad_u = None;
    let trace_u = match (unlabeled, trace_u) {
        (Some((images, inferred)), Some(t)) => {
            t.probs.ensure_same_shape(&inferred.pseudo, "unlabeled predictions")?;
            if t.probs.n != images.n {
                return Err(Error::Shape("unlabeled trace does not match the batch".into()));
            }
            let lu = losses::unlabeled_loss(&t.probs, &inferred.pseudo, &inferred.weights, spec.eps)?;
            parts.unlabeled = lu.value.as_f64();
            grad_u = Some(lu.grad);
            Some(t)
        }
        (Some(_), None) => return Err(Error::Config("unlabeled term needs the unlabeled forward pass".into())),
        (None, _) => None,
    };

    let (adv, adv_l, adv_u) = generator_terms(nets, params, spec, &trace_l.probs, trace_u.map(|t| &t.probs))?;
    parts.adversarial = adv;
    add_scaled(&mut grad_l, &adv_l, T::one());
    if let (Some(g), Some(a)) = (grad_u.as_mut(), adv_u.as_ref()) {
        add_scaled(g, a, T::one());
    }

    let mut grad_v = None;
    if let Some(target) = spec.pw_target {
        let owned;
        let inputs = match pw {
            Some(p) => p,
            None => {
                owned = pw_inputs_for(nets, params, target, &trace_l.probs, batch.labeled_masks)?;
                &owned
            }
        };
        let mut gv = vec![T::zero(); params.phi_v.len()];
        let beta = T::lit(spec.beta);
        for (features, target) in &inputs.items {
            let out = nets.pace.pw_forward(&params.phi_v, features)?;
            let l = losses::pixel_weight_loss(&out.weights, target, spec.eps)?;
            parts.pixel_weight += l.value.as_f64();
            nets.pace.pw.backward(&params.phi_v, &out, &l.grad.map(|x| x * beta), Some(&mut gv), false);
        }
        grad_v = Some(gv);
    }

    let mut psi = vec![T::zero(); params.psi.len()];
    nets.predictor.backward(&params.psi, trace_l, &grad_l, &mut psi);
    if let (Some(t), Some(g)) = (trace_u, grad_u.as_ref()) {
        nets.predictor.backward(&params.psi, t, g, &mut psi);
    }
    let total = losses::total_predictor_objective(&parts, spec.beta);
    Ok(PredictorGrads { parts, total, psi, phi_v: grad_v })
}

/// The pace objective (maximised) on annotated masks versus predictions,
/// with the gradient w.r.t. the discriminating parameters. Predictions are
/// constants here.
pub fn pace_objective<T: Real>(
    nets: &Networks,
    params: &ParamSets<T>,
    spec: &ObjectiveSpec,
    gt: &Tensor<T>,
    pred_l: &Tensor<T>,
    pred_u: Option<&Tensor<T>>,
) -> Result<PaceGrads<T>> {
    let pred_u = if spec.unlabeled { pred_u } else { None };
    match spec.adversary {
        Adversary::None => Err(Error::Config("this mode has no pace adversary".into())),
        Adversary::Image => {
            let g_gt = nets.pace.gsm_forward(&params.phi_g, gt)?;
            let g_l = nets.pace.gsm_forward(&params.phi_g, pred_l)?;
            let g_u = pred_u.map(|p| nets.pace.gsm_forward(&params.phi_g, p)).transpose()?;
            let empty = Vec::new();
            let lu = g_u.as_ref().map_or(&empty, |g| &g.logits);
            let terms = losses::pace_adversarial_loss(&g_gt.logits, &g_l.logits, lu, spec.eta, spec.eps)?;
            let mut grad = vec![T::zero(); params.phi_g.len()];
            nets.pace.gsm.backward(&params.phi_g, &g_gt, Some(&terms.grad_gt), None, Some(&mut grad), false);
            nets.pace.gsm.backward(&params.phi_g, &g_l, Some(&terms.grad_pred_labeled), None, Some(&mut grad), false);
            if let Some(g) = &g_u {
                nets.pace.gsm.backward(&params.phi_g, g, Some(&terms.grad_pred_unlabeled), None, Some(&mut grad), false);
            }
            Ok(PaceGrads { value: terms.value.as_f64(), phi_g: grad, phi_v: None })
        }
        Adversary::Pixel => {
            // Maximise sum log D(Y) + sum log(1 - D(T^l)) + eta sum log(1 - D(T^u)), i.e.
            // minimise the matching cross-entropies against 1 / 0 targets.
            let mut value = 0.0;
            let mut gg = vec![T::zero(); params.phi_g.len()];
            let mut gv = vec![T::zero(); params.phi_v.len()];
            let mut groups = vec![(gt, T::one(), 1.0), (pred_l, T::zero(), 1.0)];
            if let Some(p) = pred_u {
                groups.push((p, T::zero(), spec.eta));
            }
            for (masks, target, weight) in groups {
                let (g, w) = pixel_realness(nets, params, masks)?;
                let l = losses::pixel_weight_loss(&w.weights, &w.weights.map(|_| target), spec.eps)?;
                value -= weight * l.value.as_f64();
                let grad = l.grad.map(|x| -x * T::lit(weight));
                let fg = nets.pace.pw.backward(&params.phi_v, &w, &grad, Some(&mut gv), true).unwrap();
                nets.pace.gsm.backward(&params.phi_g, &g, None, Some(&fg), Some(&mut gg), false);
            }
            Ok(PaceGrads { value, phi_g: gg, phi_v: Some(gv) })
        }
    }
}

/// Pseudo-labels and reliability weights for unlabeled images under frozen parameters.
pub fn infer<T: Real>(
    nets: &Networks,
    params: &ParamSets<T>,
    weighting: Weighting,
    images: &Tensor<T>,
    threshold: f64,
    spl_scheme: Option<&SplScheme>,
    eps: f64,
) -> Result<Inferred<T>> {
    let pred = nets.predictor.predict(&params.psi, images)?;
    infer_from(nets, params, weighting, &pred, threshold, spl_scheme, eps)
}

/// [`infer`] from predictions that are already computed.
pub fn infer_from<T: Real>(
    nets: &Networks,
    params: &ParamSets<T>,
    weighting: Weighting,
    pred: &Tensor<T>,
    threshold: f64,
    spl_scheme: Option<&SplScheme>,
    eps: f64,
) -> Result<Inferred<T>> {
    let pseudo = predictor::binarize(pred, threshold)?;
    let weights = match weighting {
        Weighting::Learned => nets.pace.weigh(&params.phi_g, &params.phi_v, pred)?,
        Weighting::Ones => pred.map(|_| T::one()),
        Weighting::SelfPaced(_) => {
            let scheme = spl_scheme.ok_or_else(|| Error::Config("self-paced weighting needs a scheme".into()))?;
            spl::spl_pace_step(&losses::pixel_ce(pred, &pseudo, eps)?, scheme)?
        }
    };
    Ok(Inferred { pseudo, weights })
}
