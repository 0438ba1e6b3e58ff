//! Subcommand implementations.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use apl_seg::checkpoint::{self, load_pace_beside, load_predictor};
use apl_seg::data::{self, DatasetLayout, LabeledAmount, Sample, SplitConfig, SyntheticConfig};
use apl_seg::eval::{self, EvalOptions, EvalReport, FAggregation, ThresholdGrid};
use apl_seg::pace::PaceGenerator;
use apl_seg::predictor::Predictor;
use apl_seg::tensor::Tensor;
use apl_seg::trainer::{self, Mode, TrainConfig, Trainer};
use log::{info, warn};
use serde_json::json;

use crate::run_dir;
use crate::{CompareArgs, DataArgs, EvalArgs, Format, InferArgs, SplitArgs, SynthArgs, TrainArgs, TrainOverrides};

pub const DEFAULT_NOISE: f64 = 0.05;
/// Working resolution of synthetic runs without an explicit size or config.
const SYNTHETIC_RESOLUTION: usize = 32;
/// Size of the synthetic held-out set.
const SYNTHETIC_EVAL_COUNT: usize = 200;
const DEVICE_VAR: &str = "APL_SEG_DEVICE";

/// Marks failures that map to the runtime-abort exit status.
#[derive(Debug)]
struct Abort(String);

impl std::fmt::Display for Abort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Abort {}

pub fn is_abort(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        c.is::<Abort>() || c.downcast_ref::<apl_seg::Error>().is_some_and(|e| !e.is_configuration())
    })
}

pub fn check_device() -> Result<()> {
    match std::env::var(DEVICE_VAR) {
        Ok(v) if !v.eq_ignore_ascii_case("cpu") => bail!("{DEVICE_VAR}={v} is not available; only 'cpu' is supported"),
        _ => Ok(()),
    }
}

/// Seed of the synthetic held-out set for a training seed.
pub fn synthetic_eval_seed(seed: u64) -> u64 {
    seed.wrapping_add(1 << 32)
}

fn synthetic(count: usize, size: usize, noise: f64, seed: u64) -> Result<Vec<Sample>> {
    Ok(data::generate_synthetic(&SyntheticConfig { image_size: size, num_images: count, noise_level: noise, seed, ..Default::default() })?)
}

fn base_config(o: &TrainOverrides, data: &DataArgs) -> Result<TrainConfig> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(r) = data.resolution {
        cfg.set_resolution(r);
    } else if data.synthetic && o.config.is_none() {
        cfg.set_resolution(SYNTHETIC_RESOLUTION);
    }
    if let Some(s) = o.seed {
        cfg.set_seed(s);
    }
    if let Some(t) = o.iters {
        cfg.total_iterations = t;
        if o.warmup.is_none() && cfg.warmup_iterations >= t {
            cfg.warmup_iterations = t / 10;
        }
    }
    if let Some(w) = o.warmup {
        cfg.warmup_iterations = w;
    }
    if let Some(b) = o.beta {
        cfg.loss.beta = b;
    }
    if let Some(e) = o.eta {
        cfg.loss.eta = e;
    }
    if let Some(b) = o.batch {
        cfg.labeled_batch = b;
        cfg.unlabeled_batch = b;
    }
    if let Some(n) = o.log_every {
        cfg.log_every = n;
    }
    if let Some(n) = o.checkpoint_every {
        cfg.checkpoint_every = n;
    }
    if let Some(n) = o.eval_every {
        cfg.eval_every = n;
    }
    Ok(cfg)
}

fn split_config(s: &SplitArgs, seed: u64) -> Option<SplitConfig> {
    let labeled = match (s.labeled, s.labeled_ratio) {
        (Some(n), _) => LabeledAmount::Count(n),
        (None, Some(r)) => LabeledAmount::Ratio(r),
        (None, None) => return None,
    };
    Some(SplitConfig { labeled, seed })
}

/// Training split and held-out set, plus a description for the manifest.
struct Prepared {
    labeled: Vec<Sample>,
    unlabeled: Vec<Sample>,
    eval_set: Vec<Sample>,
    description: serde_json::Value,
}

fn prepare_data(data: &DataArgs, split: &SplitArgs, eval_data: Option<&Path>, cfg: &TrainConfig) -> Result<Prepared> {
    let res = cfg.resolution();
    let seed = cfg.seed;
    let (samples, eval_set, mut description) = if data.synthetic {
        let train = synthetic(data.synthetic_count, res, data.noise, seed)?;
        let held = synthetic(SYNTHETIC_EVAL_COUNT, res, data.noise, synthetic_eval_seed(seed))?;
        let d = json!({"source": "synthetic", "count": data.synthetic_count, "noise": data.noise, "eval_count": SYNTHETIC_EVAL_COUNT});
        (train, held, d)
    } else {
        let root = data.data.as_ref().ok_or_else(|| anyhow!("pass --data <root> or --synthetic"))?;
        let samples = data::load_dataset(root, &DatasetLayout::default(), res)?;
        let held = match eval_data {
            Some(p) => data::load_dataset(p, &DatasetLayout::default(), res)?.into_iter().filter(Sample::is_labeled).collect(),
            None => Vec::new(),
        };
        (samples, held, json!({"source": root.display().to_string()}))
    };
    let (labeled, unlabeled) = match split_config(split, seed) {
        Some(sc) => data::make_split(samples, &sc)?,
        None if data.synthetic => bail!("synthetic training needs --labeled or --labeled-ratio"),
        None => samples.into_iter().partition(Sample::is_labeled),
    };
    info!("{} labeled, {} unlabeled, {} held-out images", labeled.len(), unlabeled.len(), eval_set.len());
    description["labeled"] = json!(labeled.len());
    description["unlabeled"] = json!(unlabeled.len());
    Ok(Prepared { labeled, unlabeled, eval_set, description })
}

fn print_report(report: &EvalReport, name: &str, format: Format) -> Result<String> {
    let text = match format {
        Format::Table => eval::format_table(&[(name.to_owned(), report.clone())]),
        Format::Json => serde_json::to_string_pretty(report)? + "\n",
    };
    print!("{text}");
    Ok(text)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&a.overrides, &a.data)?;
    if let Some(p) = &a.pace {
        cfg.mode = Mode::from_pace(p)?;
    }
    if let Some(m) = &a.mode {
        cfg.mode = m.parse()?;
    }
    cfg.validate()?;
    let prepared = prepare_data(&a.data, &a.split, a.overrides.eval_data.as_deref(), &cfg)?;
    let mut trainer = Trainer::new(cfg.clone(), prepared.labeled, prepared.unlabeled)?;
    if !prepared.eval_set.is_empty() {
        trainer = trainer.with_eval_set(prepared.eval_set, EvalOptions::default())?;
    }
    run_dir::prepare(&a.out, a.force)?;
    let hash = run_dir::write_manifest(&a.out, "train", &cfg, prepared.description)?;
    info!("run {} (config {})", a.out.display(), &hash[..12]);
    let summary = trainer.with_output_dir(&a.out)?.run()?;
    if let Some(r) = &summary.report {
        print_report(r, &cfg.mode.to_string(), Format::Table)?;
    }
    info!("wrote {} checkpoint(s)", summary.checkpoints.len());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    if !a.checkpoint.exists() {
        bail!("checkpoint {} does not exist", a.checkpoint.display());
    }
    let ck = load_predictor(&a.checkpoint)?;
    let res = ck.config.resolution;
    if a.data.resolution.is_some_and(|r| r != res) {
        bail!("checkpoint expects resolution {res}");
    }
    if let Some(out) = &a.out {
        run_dir::check_file(out, a.force)?;
    }
    let (samples, name) = if a.data.synthetic {
        (synthetic(SYNTHETIC_EVAL_COUNT, res, a.data.noise, synthetic_eval_seed(a.seed))?, "synthetic".to_owned())
    } else {
        let root = a.data.data.as_ref().ok_or_else(|| anyhow!("pass --data <root> or --synthetic"))?;
        (data::load_dataset(root, &DatasetLayout::default(), res)?, root.display().to_string())
    };
    let opts = EvalOptions {
        aggregation: if a.per_image { FAggregation::PerImage } else { FAggregation::Dataset },
        grid: if a.fixed_thresholds { ThresholdGrid::Fixed } else { ThresholdGrid::Rank },
        ..Default::default()
    };
    let predictor = Predictor::new(ck.config)?;
    let report = eval::evaluate(&predictor, &ck.psi, &samples, &opts, &name, &a.checkpoint.display().to_string())?;
    let text = print_report(&report, &name, a.format)?;
    if let Some(out) = &a.out {
        fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

pub fn infer(a: InferArgs) -> Result<()> {
    if !a.checkpoint.exists() {
        bail!("checkpoint {} does not exist", a.checkpoint.display());
    }
    let ck = load_predictor(&a.checkpoint)?;
    let pace = if a.dump_weights { Some(load_pace_beside(&a.checkpoint)?) } else { None };
    let res = ck.config.resolution;
    let paths = data::list_images(&a.images)?;
    if paths.is_empty() {
        bail!("no images in {}", a.images.display());
    }
    run_dir::prepare(&a.out, a.force)?;
    let predictor = Predictor::new(ck.config)?;
    let pace_net = pace.as_ref().map(|p| PaceGenerator::new(p.config.clone())).transpose()?;
    let mut written = 0usize;
    for path in &paths {
        let sample = match data::load_image(path, res) {
            Ok(s) => s,
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let x: Tensor<f32> = data::image_batch(&[&sample])?;
        let probs = predictor.predict(&ck.psi, &x)?;
        let map: Vec<f64> = probs.data.iter().map(|&v| v as f64).collect();
        checkpoint::save_gray_png(&a.out.join(format!("{}.png", sample.id)), &map, res, res)?;
        if let (Some(net), Some(p)) = (&pace_net, &pace) {
            let w = net.weigh(&p.phi_g, &p.phi_v, &probs)?;
            let wm: Vec<f64> = w.data.iter().map(|&v| v as f64).collect();
            checkpoint::save_gray_png(&a.out.join(format!("{}_weights.png", sample.id)), &wm, res, res)?;
        }
        written += 1;
    }
    if written == 0 {
        return Err(Abort(format!("none of the {} images could be read", paths.len())).into());
    }
    info!("wrote {written} map(s) to {}", a.out.display());
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let samples = synthetic(a.count, a.size, a.noise, a.seed)?;
    run_dir::prepare(&a.out, a.force)?;
    data::export_dataset(&samples, &a.out, &DatasetLayout::default())?;
    info!("wrote {} images to {}", samples.len(), a.out.display());
    Ok(())
}

pub fn compare(a: CompareArgs) -> Result<()> {
    let modes: Vec<Mode> = a.modes.iter().map(|m| m.trim().parse()).collect::<Result<_, _>>()?;
    let cfg = base_config(&a.overrides, &a.data)?;
    cfg.validate()?;
    let prepared = prepare_data(&a.data, &a.split, a.overrides.eval_data.as_deref(), &cfg)?;
    if prepared.eval_set.is_empty() {
        bail!("comparison needs a held-out set: use --synthetic or --eval-data");
    }
    run_dir::prepare(&a.out, a.force)?;
    run_dir::write_manifest(&a.out, "compare", &cfg, json!({"data": prepared.description, "modes": a.modes}))?;
    let mut rows = Vec::new();
    for mode in modes {
        info!("training {mode}");
        let dir = a.out.join(mode.to_string().replace(':', "_"));
        let r = trainer::run_ablation(mode, &cfg, &prepared.labeled, &prepared.unlabeled, &prepared.eval_set, Some(&dir))?;
        rows.push((mode.to_string(), r.report));
    }
    let table = eval::format_table(&rows);
    fs::write(a.out.join("comparison.txt"), &table)?;
    let reports: Vec<serde_json::Value> = rows.iter().map(|(m, r)| json!({"mode": m, "max_f": r.max_f, "mae": r.mae})).collect();
    let body = serde_json::to_string_pretty(&reports)?;
    fs::write(a.out.join("comparison.json"), &body)?;
    match a.format {
        Format::Table => print!("{table}"),
        Format::Json => println!("{body}"),
    }
    Ok(())
}
