//! The task predictor: image in, per-pixel saliency probability out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, ParamLayout};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    /// Six convolutions (two strided, two dilated) and a bilinear upsample;
    /// about 100k parameters at the default width.
    DeskSmall,
    /// Output-stride-8 dilated encoder with a single-scale dilated classifier.
    DeeplabStyle,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PredictorConfig {
    pub backbone: Backbone,
    /// Square input resolution the network is built for.
    pub resolution: usize,
    /// Base channel count.
    pub width: usize,
    /// Seed for parameter initialisation.
    pub seed: u64,
}

impl PredictorConfig {
    pub fn desk_small(resolution: usize, seed: u64) -> Self {
        Self { backbone: Backbone::DeskSmall, resolution, width: 16, seed }
    }

    pub fn deeplab_style(resolution: usize, seed: u64) -> Self {
        Self { backbone: Backbone::DeeplabStyle, resolution, width: 32, seed }
    }

    fn output_stride(&self) -> usize {
        match self.backbone {
            Backbone::DeskSmall => 4,
            Backbone::DeeplabStyle => 8,
        }
    }
}

/// Activations kept from a forward pass for the backward pass.
pub struct PredictorTrace<T> {
    acts: Vec<Tensor<T>>,
    pub probs: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Predictor {
    pub config: PredictorConfig,
    convs: Vec<Conv2d>,
    layout: ParamLayout,
}

impl Predictor {
    pub fn new(config: PredictorConfig) -> Result<Self> {
        let stride = config.output_stride();
        if config.resolution == 0 || !config.resolution.is_multiple_of(stride) {
            return Err(Error::Config(format!(
                "{:?} needs a resolution divisible by {stride}, got {}",
                config.backbone, config.resolution
            )));
        }
        if config.width == 0 {
            return Err(Error::Config("predictor width must be positive".into()));
        }
        let relu = std::f64::consts::SQRT_2;
        let w = config.width;
        let mut layout = ParamLayout::new();
        let l = &mut layout;
        let convs = match config.backbone {
            Backbone::DeskSmall => vec![
                Conv2d::same3(l, 3, w, 1, relu),
                Conv2d::new(l, w, 2 * w, 3, 2, 1, 1, relu),
                Conv2d::new(l, 2 * w, 4 * w, 3, 2, 1, 1, relu),
                Conv2d::same3(l, 4 * w, 4 * w, 2, relu),
                Conv2d::same3(l, 4 * w, 4 * w, 4, relu),
                Conv2d::new(l, 4 * w, 1, 1, 1, 0, 1, 1.0),
            ],
            Backbone::DeeplabStyle => vec![
                Conv2d::new(l, 3, w, 3, 2, 1, 1, relu),
                Conv2d::new(l, w, 2 * w, 3, 2, 1, 1, relu),
                Conv2d::new(l, 2 * w, 4 * w, 3, 2, 1, 1, relu),
                Conv2d::same3(l, 4 * w, 4 * w, 2, relu),
                Conv2d::same3(l, 4 * w, 8 * w, 4, relu),
                Conv2d::same3(l, 8 * w, 1, 6, 1.0),
            ],
        };
        Ok(Self { config, convs, layout })
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn init_params<T: Real>(&self) -> Vec<T> {
        self.layout.init(self.config.seed)
    }

    fn check_input<T: Real>(&self, images: &Tensor<T>) -> Result<()> {
        let r = self.config.resolution;
        if images.c != 3 || images.h != r || images.w != r {
            return Err(Error::Shape(format!(
                "predictor expects [n, 3, {r}, {r}] images, got {:?}",
                images.shape()
            )));
        }
        Ok(())
    }

    fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "predictor has {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, params: &[T], images: &Tensor<T>) -> Result<PredictorTrace<T>> {
        self.check_input(images)?;
        self.check_params(params)?;
        let mut acts = Vec::with_capacity(self.convs.len() + 1);
        acts.push(images.clone());
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            let mut y = conv.forward(params, &acts[i]);
            if i != last {
                nn::leaky_relu(&mut y, T::zero());
            }
            acts.push(y);
        }
        let logits = nn::resize_bilinear(acts.last().unwrap(), images.h, images.w);
        let probs = logits.map(nn::sigmoid);
        Ok(PredictorTrace { acts, probs })
    }

    /// Saliency maps `[n, 1, H, W]` with values in `(0, 1)`.
    pub fn predict<T: Real>(&self, params: &[T], images: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(params, images)?.probs)
    }

    /// Accumulates into `grads` the parameter gradient of a loss whose
    /// gradient w.r.t. the output probabilities is `grad_probs`.
    pub fn backward<T: Real>(&self, params: &[T], trace: &PredictorTrace<T>, grad_probs: &Tensor<T>, grads: &mut [T]) {
        assert_eq!(grad_probs.shape(), trace.probs.shape(), "predictor output gradient shape");
        let mut g = grad_probs.clone();
        for (gv, &p) in g.data.iter_mut().zip(&trace.probs.data) {
            *gv = *gv * p * (T::one() - p);
        }
        let low = trace.acts.last().unwrap();
        let mut g = nn::resize_bilinear_backward(&g, low.h, low.w);
        let last = self.convs.len() - 1;
        for i in (0..self.convs.len()).rev() {
            if i != last {
                nn::leaky_relu_backward(&trace.acts[i + 1], &mut g, T::zero());
            }
            match self.convs[i].backward(params, &trace.acts[i], &g, Some(&mut *grads), i > 0) {
                Some(dx) => g = dx,
                None => break,
            }
        }
    }
}

/// Thresholds a saliency map: 1 where `map >= tau`, else 0.
pub fn binarize<T: Real>(map: &Tensor<T>, tau: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("binarization threshold {tau} outside [0, 1]")));
    }
    let tau = T::lit(tau);
    Ok(map.map(|v| if v >= tau { T::one() } else { T::zero() }))
}
