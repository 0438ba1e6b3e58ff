//! Training configuration and ablation modes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_RESOLUTION;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::pace::PaceConfig;
use crate::predictor::PredictorConfig;
use crate::spl::SplKind;

/// Which objective the run optimises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Mode {
    /// Learned reliability maps with both pace losses.
    Full,
    /// Annotated images only.
    OnlyLabeled,
    /// Unit reliability, no pace losses.
    NoPaceLoss,
    /// A per-pixel discriminator whose confidence is the reliability map.
    PixelGan,
    /// PW branch trained on binary annotated/predicted targets.
    NoVstar,
    /// Closed-form self-paced weights.
    Spl(SplKind),
}

/// Predictor-side adversary of a mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Adversary {
    None,
    /// Image-level realness from the GSM head.
    Image,
    /// Per-pixel realness from the GSM trunk and PW decoder.
    Pixel,
}

/// Supervision of the PW branch during the predictor step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PwTarget {
    /// `1 - |T - Y|` on predictions for annotated images.
    Reliability,
    /// 1 on annotations, 0 on predictions.
    Binary,
}

/// How the reliability map of an unlabeled batch is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    Learned,
    Ones,
    SelfPaced(SplKind),
}

impl Mode {
    pub const ABLATIONS: [Mode; 5] = [Mode::Full, Mode::OnlyLabeled, Mode::NoPaceLoss, Mode::PixelGan, Mode::NoVstar];

    pub fn uses_unlabeled(self) -> bool {
        self != Mode::OnlyLabeled
    }

    pub fn adversary(self) -> Adversary {
        match self {
            Mode::Full | Mode::NoVstar => Adversary::Image,
            Mode::PixelGan => Adversary::Pixel,
            _ => Adversary::None,
        }
    }

    pub fn pw_target(self) -> Option<PwTarget> {
        match self {
            Mode::Full => Some(PwTarget::Reliability),
            Mode::NoVstar => Some(PwTarget::Binary),
            _ => None,
        }
    }

    pub fn weighting(self) -> Weighting {
        match self {
            Mode::Full | Mode::NoVstar | Mode::PixelGan => Weighting::Learned,
            Mode::Spl(k) => Weighting::SelfPaced(k),
            Mode::OnlyLabeled | Mode::NoPaceLoss => Weighting::Ones,
        }
    }

    /// Maps a `--pace` choice onto a mode.
    pub fn from_pace(s: &str) -> Result<Self> {
        match s {
            "apl" => Ok(Mode::Full),
            "pixelgan" => Ok(Mode::PixelGan),
            "none" => Ok(Mode::NoPaceLoss),
            _ => match s.strip_prefix("spl:") {
                Some(kind) => Ok(Mode::Spl(kind.parse()?)),
                None => Err(Error::Config(format!("unknown pace choice '{s}' (apl, spl:<kind>, pixelgan, none)"))),
            },
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Full => f.write_str("full"),
            Mode::OnlyLabeled => f.write_str("only_labeled"),
            Mode::NoPaceLoss => f.write_str("no_pace_loss"),
            Mode::PixelGan => f.write_str("pixel_gan"),
            Mode::NoVstar => f.write_str("no_vstar"),
            Mode::Spl(k) => write!(f, "spl:{k}"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "only_labeled" => Ok(Mode::OnlyLabeled),
            "no_pace_loss" => Ok(Mode::NoPaceLoss),
            "pixel_gan" => Ok(Mode::PixelGan),
            "no_vstar" => Ok(Mode::NoVstar),
            _ => match s.strip_prefix("spl:") {
                Some(kind) => Ok(Mode::Spl(kind.parse()?)),
                None => Err(Error::Config(format!("unknown mode '{s}'"))),
            },
        }
    }
}

impl TryFrom<String> for Mode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Mode> for String {
    fn from(m: Mode) -> String {
        m.to_string()
    }
}

/// When pseudo-labels and reliability maps are recomputed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refresh {
    /// Fresh for every unlabeled batch.
    Iteration,
    /// Materialised for the whole unlabeled set at each epoch start.
    Epoch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Total iterations including warmup.
    pub total_iterations: usize,
    pub warmup_iterations: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub predictor_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Adam learning rate of the PW branch.
    pub pace_lr: f64,
    /// Adam learning rate of the GSM branch.
    pub gsm_lr: f64,
    pub poly_power: f64,
    #[serde(flatten)]
    pub loss: LossConfig,
    pub binarize_threshold: f64,
    /// Predictor fools the GSM by maximising `log D(T)` instead of minimising `log(1 - D(T))`.
    pub non_saturating: bool,
    pub refresh: Refresh,
    /// Initial self-paced lambda; `None` picks twice the median unlabeled loss after warmup.
    pub spl_lambda: Option<f64>,
    pub spl_growth: f64,
    pub seed: u64,
    pub log_every: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    /// 0 evaluates only at the end.
    pub eval_every: usize,
    pub predictor: PredictorConfig,
    pub pace: PaceConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            total_iterations: 24_500,
            warmup_iterations: 2_000,
            labeled_batch: 8,
            unlabeled_batch: 8,
            predictor_lr: 2.5e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            pace_lr: 1e-4,
            gsm_lr: 1e-4,
            poly_power: 0.9,
            loss: LossConfig::default(),
            binarize_threshold: 0.5,
            non_saturating: true,
            refresh: Refresh::Iteration,
            spl_lambda: None,
            spl_growth: 1.1,
            seed: 1,
            log_every: 50,
            checkpoint_every: 0,
            eval_every: 0,
            predictor: PredictorConfig::desk_small(DEFAULT_RESOLUTION, 1),
            pace: PaceConfig::new(DEFAULT_RESOLUTION, 2),
        }
    }
}

impl TrainConfig {
    /// Desk-scale configuration at the given resolution.
    pub fn desk(resolution: usize, seed: u64) -> Self {
        let mut cfg = Self::default();
        cfg.set_resolution(resolution);
        cfg.set_seed(seed);
        cfg
    }

    pub fn set_resolution(&mut self, resolution: usize) {
        self.predictor.resolution = resolution;
        self.pace.resolution = resolution;
    }

    /// Seeds sampling and both network initialisations.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.predictor.seed = seed;
        self.pace.seed = seed.wrapping_add(1);
    }

    pub fn resolution(&self) -> usize {
        self.predictor.resolution
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.total_iterations == 0 || self.warmup_iterations >= self.total_iterations {
            return Err(Error::Config(format!(
                "warmup ({}) must be shorter than the total iterations ({})",
                self.warmup_iterations, self.total_iterations
            )));
        }
        for (name, lr) in [("predictor", self.predictor_lr), ("pace", self.pace_lr), ("gsm", self.gsm_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} learning rate must be positive, got {lr}")));
            }
        }
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.binarize_threshold) {
            return Err(Error::Config(format!("binarize threshold {} outside [0, 1]", self.binarize_threshold)));
        }
        if self.predictor.resolution != self.pace.resolution {
            return Err(Error::Config(format!(
                "predictor resolution {} differs from pace resolution {}",
                self.predictor.resolution, self.pace.resolution
            )));
        }
        if let Some(l) = self.spl_lambda {
            if !(l > 0.0) {
                return Err(Error::Config(format!("self-paced lambda must be positive, got {l}")));
            }
        }
        if !(self.spl_growth >= 1.0) {
            return Err(Error::Config(format!("self-paced growth must be >= 1, got {}", self.spl_growth)));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        Ok(())
    }
}
