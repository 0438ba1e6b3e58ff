//! Saliency metrics: max F-measure, MAE and pseudo-label audits.
//!
//! The F-measure sweep uses 256 thresholds spaced uniformly in rank over the
//! pooled prediction values (a pixel is positive when strictly above the
//! threshold). Rank spacing makes `max_f` exactly invariant under strictly
//! monotone rescaling of the predictions; [`ThresholdGrid::Fixed`] gives the
//! conventional `i / 255` grid instead.

use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::predictor::Predictor;
use crate::tensor::{Real, Tensor};

pub const NUM_THRESHOLDS: usize = 256;
pub const DEFAULT_BETA_SQ: f64 = 0.3;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FAggregation {
    /// Average precision and recall over images per threshold, then take F.
    Dataset,
    /// Average per-image F curves.
    PerImage,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdGrid {
    Rank,
    Fixed,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalOptions {
    pub beta_sq: f64,
    pub aggregation: FAggregation,
    pub grid: ThresholdGrid,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { beta_sq: DEFAULT_BETA_SQ, aggregation: FAggregation::Dataset, grid: ThresholdGrid::Rank }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub checkpoint: String,
    pub num_images: usize,
    /// Images that entered the F-measure (non-empty ground truth).
    pub num_scored: usize,
    pub max_f: f64,
    pub mae: f64,
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f_curve: Vec<f64>,
}

fn check_pair(pred: &[f64], gt: &[u8]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("prediction has {} pixels, mask has {}", pred.len(), gt.len())));
    }
    Ok(())
}

/// Mean absolute error between a saliency map and a binary mask.
pub fn mae(pred: &[f64], gt: &[u8]) -> Result<f64> {
    check_pair(pred, gt)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().zip(gt).map(|(&p, &g)| (p - g as f64).abs()).sum::<f64>() / pred.len() as f64)
}

/// Weighted harmonic mean of precision and recall; 0 when both are 0.
pub fn f_score(precision: f64, recall: f64, beta_sq: f64) -> f64 {
    let den = beta_sq * precision + recall;
    if den <= 0.0 {
        0.0
    } else {
        (1.0 + beta_sq) * precision * recall / den
    }
}

/// Precision and recall of `pred > threshold` against `gt`.
pub fn precision_recall_at(pred: &[f64], gt: &[u8], threshold: f64) -> Result<(f64, f64)> {
    check_pair(pred, gt)?;
    let (mut tp, mut pp, mut gp) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let pos = p > threshold;
        pp += usize::from(pos);
        gp += usize::from(g == 1);
        tp += usize::from(pos && g == 1);
    }
    let precision = if pp == 0 { 0.0 } else { tp as f64 / pp as f64 };
    let recall = if gp == 0 { 0.0 } else { tp as f64 / gp as f64 };
    Ok((precision, recall))
}

pub fn f_measure_at(pred: &[f64], gt: &[u8], threshold: f64, beta_sq: f64) -> Result<f64> {
    let (p, r) = precision_recall_at(pred, gt, threshold)?;
    Ok(f_score(p, r, beta_sq))
}

/// 256 thresholds for the given pooled prediction values.
pub fn threshold_grid<'a>(values: impl Iterator<Item = &'a [f64]>, grid: ThresholdGrid) -> Vec<f64> {
    match grid {
        ThresholdGrid::Fixed => (0..NUM_THRESHOLDS).map(|i| i as f64 / 255.0).collect(),
        ThresholdGrid::Rank => {
            let mut pooled: Vec<f64> = values.flat_map(|v| v.iter().copied()).collect();
            if pooled.is_empty() {
                return vec![0.0; NUM_THRESHOLDS];
            }
            pooled.sort_by(f64::total_cmp);
            let last = pooled.len() - 1;
            (0..NUM_THRESHOLDS).map(|k| pooled[k * last / (NUM_THRESHOLDS - 1)]).collect()
        }
    }
}

/// Per-threshold precision and recall of one image.
fn pr_curve(pred: &[f64], gt: &[u8], thresholds: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let positives = gt.iter().filter(|&&g| g == 1).count();
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].total_cmp(&pred[a]));
    // Walk thresholds from high to low, admitting pixels strictly above each.
    let mut idx: Vec<usize> = (0..thresholds.len()).collect();
    idx.sort_by(|&a, &b| thresholds[b].total_cmp(&thresholds[a]));
    let mut precision = vec![0.0; thresholds.len()];
    let mut recall = vec![0.0; thresholds.len()];
    let (mut cursor, mut tp) = (0usize, 0usize);
    for &k in &idx {
        while cursor < order.len() && pred[order[cursor]] > thresholds[k] {
            tp += usize::from(gt[order[cursor]] == 1);
            cursor += 1;
        }
        precision[k] = if cursor == 0 { 0.0 } else { tp as f64 / cursor as f64 };
        recall[k] = if positives == 0 { 0.0 } else { tp as f64 / positives as f64 };
    }
    (precision, recall)
}

/// F values of one map over the 256 rank-spaced thresholds of that map.
/// Errors when the mask has no foreground.
pub fn f_measure_curve(pred: &[f64], gt: &[u8], beta_sq: f64) -> Result<Vec<f64>> {
    check_pair(pred, gt)?;
    if !gt.contains(&1) {
        return Err(Error::Config("F-measure is undefined for an empty ground-truth mask".into()));
    }
    let thresholds = threshold_grid(std::iter::once(pred), ThresholdGrid::Rank);
    let (p, r) = pr_curve(pred, gt, &thresholds);
    Ok(p.iter().zip(&r).map(|(&p, &r)| f_score(p, r, beta_sq)).collect())
}

/// Aggregates a set of `(prediction, mask)` pairs into a report.
pub fn evaluate_maps(maps: &[(Vec<f64>, Vec<u8>)], opts: &EvalOptions, dataset: &str, checkpoint: &str) -> Result<EvalReport> {
    if maps.is_empty() {
        return Err(Error::Config(format!("dataset {dataset} is empty")));
    }
    let mut mae_sum = 0.0;
    for (p, g) in maps {
        mae_sum += mae(p, g)?;
    }
    let scored: Vec<&(Vec<f64>, Vec<u8>)> = maps.iter().filter(|(_, g)| g.contains(&1)).collect();
    if scored.len() < maps.len() {
        warn!("{} image(s) with empty ground truth excluded from the F-measure", maps.len() - scored.len());
    }
    let k = NUM_THRESHOLDS;
    let thresholds = threshold_grid(scored.iter().map(|(p, _)| p.as_slice()), opts.grid);
    let (mut precision, mut recall, mut f_sum) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    for (p, g) in &scored {
        let (pi, ri) = pr_curve(p, g, &thresholds);
        for t in 0..k {
            precision[t] += pi[t];
            recall[t] += ri[t];
            f_sum[t] += f_score(pi[t], ri[t], opts.beta_sq);
        }
    }
    let n = scored.len().max(1) as f64;
    precision.iter_mut().chain(recall.iter_mut()).chain(f_sum.iter_mut()).for_each(|v| *v /= n);
    let f_curve: Vec<f64> = match opts.aggregation {
        FAggregation::Dataset => precision.iter().zip(&recall).map(|(&p, &r)| f_score(p, r, opts.beta_sq)).collect(),
        FAggregation::PerImage => f_sum,
    };
    let max_f = f_curve.iter().copied().fold(0.0, f64::max);
    Ok(EvalReport {
        dataset: dataset.to_owned(),
        checkpoint: checkpoint.to_owned(),
        num_images: maps.len(),
        num_scored: scored.len(),
        max_f,
        mae: mae_sum / maps.len() as f64,
        thresholds,
        precision,
        recall,
        f_curve,
    })
}

/// Runs the predictor over samples in batches; returns one flattened map per sample.
pub fn predict_maps<T: Real>(predictor: &Predictor, params: &[T], samples: &[&Sample], batch: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let x = crate::data::image_batch::<T>(chunk)?;
        let probs: Tensor<T> = predictor.predict(params, &x)?;
        for i in 0..chunk.len() {
            out.push(probs.sample(i).iter().map(|v| v.as_f64()).collect());
        }
    }
    Ok(out)
}

/// Evaluates a predictor on samples carrying (visible or hidden) masks.
pub fn evaluate<T: Real>(
    predictor: &Predictor,
    params: &[T],
    samples: &[Sample],
    opts: &EvalOptions,
    dataset: &str,
    checkpoint: &str,
) -> Result<EvalReport> {
    let with_gt: Vec<&Sample> = samples.iter().filter(|s| s.any_mask().is_some()).collect();
    if with_gt.is_empty() {
        return Err(Error::Config(format!("dataset {dataset} has no annotated images")));
    }
    let preds = predict_maps(predictor, params, &with_gt, 16)?;
    let maps: Vec<(Vec<f64>, Vec<u8>)> = preds.into_iter().zip(&with_gt).map(|(p, s)| (p, s.any_mask().unwrap().to_vec())).collect();
    evaluate_maps(&maps, opts, dataset, checkpoint)
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct PseudoLabelAudit {
    pub accuracy: f64,
    pub iou: f64,
    pub images: usize,
}

/// Mean pixel accuracy and IoU of binarized (`>= 0.5`) predictions against
/// hidden ground truth.
pub fn audit_maps(maps: &[(Vec<f64>, Vec<u8>)]) -> Result<PseudoLabelAudit> {
    let (mut acc, mut iou) = (0.0, 0.0);
    for (p, g) in maps {
        check_pair(p, g)?;
        let (mut correct, mut inter, mut union) = (0usize, 0usize, 0usize);
        for (&pv, &gv) in p.iter().zip(g) {
            let pos = pv >= 0.5;
            let gpos = gv == 1;
            correct += usize::from(pos == gpos);
            inter += usize::from(pos && gpos);
            union += usize::from(pos || gpos);
        }
        acc += correct as f64 / p.len().max(1) as f64;
        iou += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
    }
    let n = maps.len().max(1) as f64;
    Ok(PseudoLabelAudit { accuracy: acc / n, iou: iou / n, images: maps.len() })
}

/// Audits the predictor's pseudo-labels on unlabeled samples with hidden masks.
pub fn audit_pseudo_labels<T: Real>(predictor: &Predictor, params: &[T], unlabeled: &[Sample]) -> Result<PseudoLabelAudit> {
    let with_gt: Vec<&Sample> = unlabeled.iter().filter(|s| s.hidden_mask().is_some()).collect();
    let preds = predict_maps(predictor, params, &with_gt, 16)?;
    let maps: Vec<(Vec<f64>, Vec<u8>)> = preds.into_iter().zip(&with_gt).map(|(p, s)| (p, s.hidden_mask().unwrap().to_vec())).collect();
    audit_maps(&maps)
}

/// Plain-text table with one row per named report.
pub fn format_table(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {:>7}  {:>7}  {:>6}", "Method", "F_max", "MAE", "images");
    for (name, r) in rows {
        let _ = writeln!(s, "{name:<width$}  {:>7.4}  {:>7.4}  {:>6}", r.max_f, r.mae, r.num_images);
    }
    s
}
