//! Warmup followed by alternating pseudo-label inference, pace updates and
//! predictor updates.

pub mod config;
pub mod objective;
pub mod schedule;

use std::cell::Cell;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{image_batch, mask_batch, Sample};
use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions, EvalReport, PseudoLabelAudit};
use crate::losses::{self, ObjectiveParts};
use crate::optim::{Adam, Sgd};
use crate::spl::SplScheme;
use crate::tensor::{Real, Tensor};

pub use config::{Adversary, Mode, PwTarget, Refresh, TrainConfig, Weighting};
pub use objective::{
    infer, infer_from, pace_objective, predictor_objective, predictor_objective_traced, pw_inputs, pw_inputs_for, Inferred,
    Networks, ObjectiveSpec, PaceGrads, ParamSets, PredictorBatch, PredictorGrads, PwInputs,
};
pub use schedule::{lr_at, BatchSampler};

pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Apl,
    Eval,
    Final,
}

/// One line of the metrics log.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub lr_predictor: f64,
    pub lr_pace: f64,
    pub lr_gsm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labeled_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlabeled_loss: Option<f64>,
    /// Predictor-side adversarial terms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial: Option<f64>,
    /// The pace objective maximised by the discriminator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pace_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_weight_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_f: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_iou: Option<f64>,
}

impl MetricsRecord {
    fn new(iteration: usize, phase: Phase, lrs: [f64; 3]) -> Self {
        Self {
            iteration,
            phase,
            lr_predictor: lrs[0],
            lr_pace: lrs[1],
            lr_gsm: lrs[2],
            labeled_loss: None,
            unlabeled_loss: None,
            adversarial: None,
            pace_loss: None,
            pixel_weight_loss: None,
            mean_weight: None,
            max_f: None,
            mae: None,
            pseudo_accuracy: None,
            pseudo_iou: None,
        }
    }

    fn set_parts(&mut self, parts: &ObjectiveParts, spec: &ObjectiveSpec) {
        self.labeled_loss = Some(parts.labeled);
        if spec.unlabeled {
            self.unlabeled_loss = Some(parts.unlabeled);
        }
        if spec.adversary != Adversary::None {
            self.adversarial = Some(parts.adversarial);
        }
        if spec.pw_target.is_some() {
            self.pixel_weight_loss = Some(parts.pixel_weight);
        }
    }

    fn loss_values(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("labeled loss", self.labeled_loss),
            ("unlabeled loss", self.unlabeled_loss),
            ("adversarial term", self.adversarial),
            ("pace loss", self.pace_loss),
            ("pixel weight loss", self.pixel_weight_loss),
            ("mean weight", self.mean_weight),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub iterations: usize,
    pub checkpoints: Vec<PathBuf>,
    pub report: Option<EvalReport>,
    pub audit: Option<PseudoLabelAudit>,
}

/// A labeled batch plus the ids it was drawn from.
pub struct LabeledBatch {
    pub images: Tensor<f32>,
    pub masks: Tensor<f32>,
    pub ids: Vec<String>,
}

/// An unlabeled batch with its sample indices.
pub struct UnlabeledBatch {
    pub images: Tensor<f32>,
    pub indices: Vec<usize>,
    pub ids: Vec<String>,
    pub new_epoch: bool,
}

pub struct Trainer {
    config: TrainConfig,
    nets: Networks,
    params: ParamSets<f32>,
    opt_psi: Sgd<f32>,
    opt_g: Adam<f32>,
    opt_v: Adam<f32>,
    labeled: Vec<Sample>,
    unlabeled: Vec<Sample>,
    unlabeled_reads: Cell<usize>,
    lab_sampler: BatchSampler,
    unl_sampler: Option<BatchSampler>,
    spl_scheme: Option<SplScheme>,
    epoch_cache: Option<Vec<Inferred<f32>>>,
    step: usize,
    records: Vec<MetricsRecord>,
    out_dir: Option<PathBuf>,
    log: Option<BufWriter<File>>,
    eval_set: Vec<Sample>,
    eval_options: EvalOptions,
}

fn check_resolution(samples: &[Sample], res: usize, what: &str) -> Result<()> {
    match samples.iter().find(|s| s.height != res || s.width != res) {
        Some(s) => Err(Error::Config(format!("{what} sample {} is {}x{}, training resolution is {res}", s.id, s.height, s.width))),
        None => Ok(()),
    }
}

impl Trainer {
    pub fn new(config: TrainConfig, labeled: Vec<Sample>, unlabeled: Vec<Sample>) -> Result<Self> {
        config.validate()?;
        if labeled.is_empty() {
            return Err(Error::Config("training needs at least one labeled image".into()));
        }
        if let Some(s) = labeled.iter().find(|s| !s.is_labeled()) {
            return Err(Error::Config(format!("labeled sample {} has no mask", s.id)));
        }
        let res = config.resolution();
        check_resolution(&labeled, res, "labeled")?;
        check_resolution(&unlabeled, res, "unlabeled")?;
        let nets = Networks::new(&config)?;
        let params = ParamSets::init(&nets);
        let lab_sampler = BatchSampler::new(labeled.len(), config.labeled_batch, config.seed);
        let unl_sampler = (config.mode.uses_unlabeled() && !unlabeled.is_empty())
            .then(|| BatchSampler::new(unlabeled.len(), config.unlabeled_batch, config.seed.wrapping_add(0x9e37)));
        Ok(Self {
            opt_psi: Sgd::new(params.psi.len(), config.momentum, config.weight_decay),
            opt_g: Adam::new(params.phi_g.len()),
            opt_v: Adam::new(params.phi_v.len()),
            config,
            nets,
            params,
            labeled,
            unlabeled,
            unlabeled_reads: Cell::new(0),
            lab_sampler,
            unl_sampler,
            spl_scheme: None,
            epoch_cache: None,
            step: 0,
            records: Vec::new(),
            out_dir: None,
            log: None,
            eval_set: Vec::new(),
            eval_options: EvalOptions::default(),
        })
    }

    /// Writes the metrics log, checkpoints and abort dumps under `dir`.
    pub fn with_output_dir(mut self, dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        self.log = Some(BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?));
        self.out_dir = Some(dir.to_path_buf());
        Ok(self)
    }

    /// Held-out annotated samples for periodic and final evaluation.
    pub fn with_eval_set(mut self, samples: Vec<Sample>, options: EvalOptions) -> Result<Self> {
        check_resolution(&samples, self.config.resolution(), "evaluation")?;
        self.eval_set = samples;
        self.eval_options = options;
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn networks(&self) -> &Networks {
        &self.nets
    }

    pub fn params(&self) -> &ParamSets<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSets<f32> {
        &mut self.params
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn spl_scheme(&self) -> Option<&SplScheme> {
        self.spl_scheme.as_ref()
    }

    /// Unlabeled images read by training so far.
    pub fn unlabeled_reads(&self) -> usize {
        self.unlabeled_reads.get()
    }

    /// Learning rates of the predictor, PW branch and GSM branch at `step`.
    pub fn learning_rates(&self, step: usize) -> Result<[f64; 3]> {
        let c = &self.config;
        let t = c.total_iterations;
        Ok([
            lr_at(step, c.predictor_lr, t, c.poly_power)?,
            lr_at(step, c.pace_lr, t, c.poly_power)?,
            lr_at(step, c.gsm_lr, t, c.poly_power)?,
        ])
    }

    pub fn next_labeled(&mut self) -> Result<LabeledBatch> {
        let (idx, _) = self.lab_sampler.next_batch();
        let picked: Vec<&Sample> = idx.iter().map(|&i| &self.labeled[i]).collect();
        Ok(LabeledBatch {
            images: image_batch(&picked)?,
            masks: mask_batch(&picked)?,
            ids: picked.iter().map(|s| s.id.clone()).collect(),
        })
    }

    pub fn next_unlabeled(&mut self) -> Result<Option<UnlabeledBatch>> {
        let Some(sampler) = self.unl_sampler.as_mut() else { return Ok(None) };
        let (indices, new_epoch) = sampler.next_batch();
        let picked: Vec<&Sample> = indices.iter().map(|&i| &self.unlabeled[i]).collect();
        self.unlabeled_reads.set(self.unlabeled_reads.get() + picked.len());
        Ok(Some(UnlabeledBatch {
            images: image_batch(&picked)?,
            ids: picked.iter().map(|s| s.id.clone()).collect(),
            indices,
            new_epoch,
        }))
    }

    /// Pseudo-labels and reliability weights under the current (frozen) parameters.
    pub fn infer_step(&self, images: &Tensor<f32>) -> Result<Inferred<f32>> {
        infer(
            &self.nets,
            &self.params,
            self.config.mode.weighting(),
            images,
            self.config.binarize_threshold,
            self.spl_scheme.as_ref(),
            self.config.loss.eps,
        )
    }

    /// One ascent step of the discriminating parameters with the predictor frozen.
    /// Returns the pace objective before the step.
    pub fn update_pace(&mut self, labeled: &LabeledBatch, unlabeled: Option<&Tensor<f32>>, spec: &ObjectiveSpec, lrs: [f64; 3]) -> Result<f64> {
        let pred_l = self.nets.predictor.predict(&self.params.psi, &labeled.images)?;
        let pred_u = unlabeled.map(|x| self.nets.predictor.predict(&self.params.psi, x)).transpose()?;
        self.pace_step(&labeled.masks, &pred_l, pred_u.as_ref(), spec, lrs)
    }

    fn pace_step(&mut self, masks: &Tensor<f32>, pred_l: &Tensor<f32>, pred_u: Option<&Tensor<f32>>, spec: &ObjectiveSpec, lrs: [f64; 3]) -> Result<f64> {
        let g = pace_objective(&self.nets, &self.params, spec, masks, pred_l, pred_u)?;
        if !g.value.is_finite() {
            return Ok(g.value);
        }
        let neg = |v: Vec<f32>| v.into_iter().map(|x| -x).collect::<Vec<f32>>();
        self.opt_g.step(&mut self.params.phi_g, &neg(g.phi_g), lrs[2]);
        if let Some(gv) = g.phi_v {
            self.opt_v.step(&mut self.params.phi_v, &neg(gv), lrs[1]);
        }
        Ok(g.value)
    }

    /// One joint descent step of the predictor and (when its term is active)
    /// the PW branch. The GSM branch is only read.
    pub fn update_predictor(&mut self, batch: &PredictorBatch<'_, f32>, spec: &ObjectiveSpec, lrs: [f64; 3]) -> Result<ObjectiveParts> {
        let g = predictor_objective(&self.nets, &self.params, spec, batch, None)?;
        Ok(self.apply_predictor_grads(g, lrs))
    }

    fn apply_predictor_grads(&mut self, g: PredictorGrads<f32>, lrs: [f64; 3]) -> ObjectiveParts {
        if !g.total.is_finite() {
            return g.parts;
        }
        self.opt_psi.step(&mut self.params.psi, &g.psi, lrs[0]);
        if let Some(gv) = g.phi_v {
            self.opt_v.step(&mut self.params.phi_v, &gv, lrs[1]);
        }
        g.parts
    }

    fn guard(&self, record: &MetricsRecord, labeled: &[String], unlabeled: &[String]) -> Result<()> {
        let Some((term, value)) = record.loss_values().into_iter().find_map(|(n, v)| v.filter(|x| !x.is_finite()).map(|x| (n, x)))
        else {
            return Ok(());
        };
        let dir = self.out_dir.clone().unwrap_or_else(std::env::temp_dir);
        let dump = dir.join(format!("abort_{}.json", record.iteration));
        let body = serde_json::json!({
            "iteration": record.iteration,
            "term": term,
            "value": value.to_string(),
            "labeled_ids": labeled,
            "unlabeled_ids": unlabeled,
            "record": record,
        });
        fs::write(&dump, serde_json::to_vec_pretty(&body)?).map_err(|e| Error::io(&dump, e))?;
        Err(Error::NonFinite { iteration: record.iteration, term: term.to_owned(), dump })
    }

    /// Warmup on annotated images: a discriminator step, then a predictor step
    /// on the labeled loss plus the adversarial term.
    pub fn warmup_step(&mut self) -> Result<MetricsRecord> {
        let lrs = self.learning_rates(self.step)?;
        let spec = ObjectiveSpec::new(&self.config, true);
        let batch = self.next_labeled()?;
        let mut rec = MetricsRecord::new(self.step, Phase::Warmup, lrs);
        // The pace step leaves the predictor alone, so one forward pass serves both steps.
        let trace_l = self.nets.predictor.forward(&self.params.psi, &batch.images)?;
        if spec.adversary != Adversary::None {
            rec.pace_loss = Some(self.pace_step(&batch.masks, &trace_l.probs, None, &spec, lrs)?);
        }
        let pb = PredictorBatch { labeled_images: &batch.images, labeled_masks: &batch.masks, unlabeled: None };
        let g = predictor_objective_traced(&self.nets, &self.params, &spec, &pb, None, &trace_l, None)?;
        let parts = self.apply_predictor_grads(g, lrs);
        rec.set_parts(&parts, &spec);
        self.guard(&rec, &batch.ids, &[])?;
        Ok(rec)
    }

    fn init_spl(&mut self) -> Result<()> {
        let Weighting::SelfPaced(kind) = self.config.mode.weighting() else { return Ok(()) };
        if self.spl_scheme.is_some() {
            return Ok(());
        }
        let lambda = match self.config.spl_lambda {
            Some(l) => l,
            None => {
                // Median loss maps to weight 0.5 under the linear soft rule.
                let mut all = Vec::new();
                for chunk in self.unlabeled.chunks(32) {
                    let refs: Vec<&Sample> = chunk.iter().collect();
                    self.unlabeled_reads.set(self.unlabeled_reads.get() + refs.len());
                    let pred = self.nets.predictor.predict(&self.params.psi, &image_batch::<f32>(&refs)?)?;
                    let pseudo = crate::predictor::binarize(&pred, self.config.binarize_threshold)?;
                    all.extend(losses::pixel_ce(&pred, &pseudo, self.config.loss.eps)?.data.iter().map(|v| v.as_f64()));
                }
                all.sort_by(f64::total_cmp);
                (2.0 * all.get(all.len() / 2).copied().unwrap_or(0.0)).max(1e-6)
            }
        };
        let mut scheme = SplScheme::new(kind, lambda);
        scheme.lambda_growth = self.config.spl_growth;
        scheme.validate()?;
        info!("self-paced {kind}: initial lambda {lambda:.5}");
        self.spl_scheme = Some(scheme);
        Ok(())
    }

    fn refresh_epoch_cache(&mut self) -> Result<()> {
        let mut cache = Vec::with_capacity(self.unlabeled.len());
        for start in (0..self.unlabeled.len()).step_by(32) {
            let refs: Vec<&Sample> = self.unlabeled[start..(start + 32).min(self.unlabeled.len())].iter().collect();
            self.unlabeled_reads.set(self.unlabeled_reads.get() + refs.len());
            let inf = self.infer_step(&image_batch(&refs)?)?;
            for i in 0..refs.len() {
                let one = |t: &Tensor<f32>| Tensor::from_vec(1, 1, t.h, t.w, t.sample(i).to_vec());
                cache.push(Inferred { pseudo: one(&inf.pseudo)?, weights: one(&inf.weights)? });
            }
        }
        self.epoch_cache = Some(cache);
        Ok(())
    }

    fn cached(&self, indices: &[usize]) -> Result<Inferred<f32>> {
        let cache = self.epoch_cache.as_ref().expect("cache filled at epoch start");
        let mut it = indices.iter().map(|&i| &cache[i]);
        let first = it.next().expect("non-empty batch").clone();
        it.try_fold(first, |acc, x| {
            Ok(Inferred { pseudo: Tensor::stack(&acc.pseudo, &x.pseudo)?, weights: Tensor::stack(&acc.weights, &x.weights)? })
        })
    }

    /// One alternating iteration: infer, update the pace generator, update the predictor.
    pub fn apl_step(&mut self) -> Result<MetricsRecord> {
        self.init_spl()?;
        let lrs = self.learning_rates(self.step)?;
        let spec = ObjectiveSpec::new(&self.config, false);
        let labeled = self.next_labeled()?;
        let unlabeled = if spec.unlabeled { self.next_unlabeled()? } else { None };
        let mut rec = MetricsRecord::new(self.step, Phase::Apl, lrs);

        let trace_l = self.nets.predictor.forward(&self.params.psi, &labeled.images)?;
        let trace_u = unlabeled.as_ref().map(|u| self.nets.predictor.forward(&self.params.psi, &u.images)).transpose()?;
        let inferred = match (&unlabeled, &trace_u) {
            (Some(u), Some(t)) => {
                if u.new_epoch {
                    if self.unl_sampler.as_ref().is_some_and(|s| s.epoch() > 0) {
                        if let Some(s) = self.spl_scheme.as_mut() {
                            s.grow();
                            debug!("self-paced lambda grown to {:.5}", s.lambda);
                        }
                    }
                    if self.config.refresh == Refresh::Epoch {
                        self.refresh_epoch_cache()?;
                    }
                }
                let inf = match self.config.refresh {
                    Refresh::Iteration => infer_from(
                        &self.nets,
                        &self.params,
                        self.config.mode.weighting(),
                        &t.probs,
                        self.config.binarize_threshold,
                        self.spl_scheme.as_ref(),
                        self.config.loss.eps,
                    )?,
                    Refresh::Epoch => self.cached(&u.indices)?,
                };
                rec.mean_weight = Some(inf.weights.mean().as_f64());
                Some(inf)
            }
            _ => None,
        };

        if spec.adversary != Adversary::None {
            let pred_u = trace_u.as_ref().map(|t| &t.probs);
            rec.pace_loss = Some(self.pace_step(&labeled.masks, &trace_l.probs, pred_u, &spec, lrs)?);
        }
        let pb = PredictorBatch {
            labeled_images: &labeled.images,
            labeled_masks: &labeled.masks,
            unlabeled: unlabeled.as_ref().zip(inferred.as_ref()).map(|(u, i)| (&u.images, i)),
        };
        let g = predictor_objective_traced(&self.nets, &self.params, &spec, &pb, None, &trace_l, trace_u.as_ref())?;
        let parts = self.apply_predictor_grads(g, lrs);
        rec.set_parts(&parts, &spec);
        let unl_ids = unlabeled.map(|u| u.ids).unwrap_or_default();
        self.guard(&rec, &labeled.ids, &unl_ids)?;
        Ok(rec)
    }

    fn emit(&mut self, rec: MetricsRecord) -> Result<()> {
        if let Some(log) = self.log.as_mut() {
            let line = serde_json::to_string(&rec)?;
            let path = self.out_dir.as_ref().unwrap().join(METRICS_FILE);
            writeln!(log, "{line}").and_then(|_| log.flush()).map_err(|e| Error::io(&path, e))?;
        }
        self.records.push(rec);
        Ok(())
    }

    /// Evaluation on the held-out set plus a pseudo-label audit on the
    /// unlabeled set when it is used and carries hidden masks.
    pub fn evaluate(&self) -> Result<(Option<EvalReport>, Option<PseudoLabelAudit>)> {
        let report = if self.eval_set.is_empty() {
            None
        } else {
            let ckpt = format!("iter_{}", self.step);
            Some(eval::evaluate(&self.nets.predictor, &self.params.psi, &self.eval_set, &self.eval_options, "eval", &ckpt)?)
        };
        let audit = if self.config.mode.uses_unlabeled() && self.unlabeled.iter().any(|s| s.hidden_mask().is_some()) {
            Some(eval::audit_pseudo_labels(&self.nets.predictor, &self.params.psi, &self.unlabeled)?)
        } else {
            None
        };
        Ok((report, audit))
    }

    fn eval_record(&self, iteration: usize, phase: Phase) -> Result<(MetricsRecord, Option<EvalReport>, Option<PseudoLabelAudit>)> {
        let (report, audit) = self.evaluate()?;
        let mut rec = MetricsRecord::new(iteration, phase, self.learning_rates(iteration)?);
        if let Some(r) = &report {
            rec.max_f = Some(r.max_f);
            rec.mae = Some(r.mae);
        }
        if let Some(a) = &audit {
            rec.pseudo_accuracy = Some(a.accuracy);
            rec.pseudo_iou = Some(a.iou);
        }
        Ok((rec, report, audit))
    }

    /// Runs iterations up to (not including) `stop`, logging, checkpointing and
    /// evaluating on schedule. Returns the checkpoints written.
    pub fn run_until(&mut self, stop: usize) -> Result<Vec<PathBuf>> {
        let total = self.config.total_iterations;
        if stop > total {
            return Err(Error::Config(format!("cannot run to iteration {stop} of {total}")));
        }
        let mut checkpoints = Vec::new();
        while self.step < stop {
            let rec = if self.step < self.config.warmup_iterations { self.warmup_step()? } else { self.apl_step()? };
            if self.step.is_multiple_of(self.config.log_every) {
                debug!("{}", serde_json::to_string(&rec)?);
                self.emit(rec)?;
            }
            self.step += 1;
            let s = self.step;
            if s < total {
                if self.config.eval_every > 0 && s.is_multiple_of(self.config.eval_every) {
                    let (rec, _, _) = self.eval_record(s, Phase::Eval)?;
                    self.emit(rec)?;
                }
                if self.config.checkpoint_every > 0 && s.is_multiple_of(self.config.checkpoint_every) {
                    if let Some(dir) = &self.out_dir {
                        checkpoints.push(checkpoint::save_run_checkpoint(dir, s, &self.config, &self.params)?);
                    }
                }
            }
        }
        Ok(checkpoints)
    }

    /// Runs all remaining iterations, then writes the final evaluation and checkpoint.
    pub fn run(&mut self) -> Result<TrainSummary> {
        let total = self.config.total_iterations;
        info!("training mode {} for {total} iterations ({} warmup)", self.config.mode, self.config.warmup_iterations);
        let mut checkpoints = self.run_until(total)?;
        let (rec, report, audit) = self.eval_record(total, Phase::Final)?;
        self.emit(rec)?;
        if let Some(dir) = &self.out_dir {
            checkpoints.push(checkpoint::save_run_checkpoint(dir, total, &self.config, &self.params)?);
        }
        Ok(TrainSummary { iterations: total, checkpoints, report, audit })
    }
}

/// Outcome of one ablation run.
#[derive(Clone, Debug)]
pub struct AblationResult {
    pub mode: Mode,
    pub report: EvalReport,
    pub audit: Option<PseudoLabelAudit>,
    pub unlabeled_reads: usize,
}

/// Trains `mode` on the given split from scratch and evaluates on `eval_set`.
pub fn run_ablation(
    mode: Mode,
    base: &TrainConfig,
    labeled: &[Sample],
    unlabeled: &[Sample],
    eval_set: &[Sample],
    out_dir: Option<&Path>,
) -> Result<AblationResult> {
    if eval_set.is_empty() {
        return Err(Error::Config("ablation needs a non-empty evaluation set".into()));
    }
    let cfg = TrainConfig { mode, ..base.clone() };
    let mut trainer = Trainer::new(cfg, labeled.to_vec(), unlabeled.to_vec())?.with_eval_set(eval_set.to_vec(), EvalOptions::default())?;
    if let Some(dir) = out_dir {
        trainer = trainer.with_output_dir(dir)?;
    }
    let summary = trainer.run()?;
    let mut report = summary.report.expect("evaluation set is non-empty");
    report.checkpoint = mode.to_string();
    Ok(AblationResult { mode, report, audit: summary.audit, unlabeled_reads: trainer.unlabeled_reads() })
}
