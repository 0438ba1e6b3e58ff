//! The pace generator: a global structure mining (GSM) branch that scores
//! whether a mask is an annotation or a model output, and a pixel weighting
//! (PW) branch that decodes the GSM features into a reliability map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Conv2d, Linear, ParamLayout};
use crate::tensor::{Real, Tensor};

pub const GSM_CHANNELS: [usize; 4] = [64, 128, 256, 512];
pub const PW_CHANNELS: [usize; 4] = [64, 32, 16, 8];
const LEAKY_SLOPE: f64 = 0.2;

/// Index of the "predicted" entry of the realness logits.
pub const FAKE: usize = 0;
/// Index of the "annotated" entry of the realness logits.
pub const REAL: usize = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PaceConfig {
    /// Square mask resolution; must be divisible by 16.
    pub resolution: usize,
    #[serde(default = "default_gsm_channels")]
    pub gsm_channels: [usize; 4],
    #[serde(default = "default_pw_channels")]
    pub pw_channels: [usize; 4],
    pub seed: u64,
}

fn default_gsm_channels() -> [usize; 4] {
    GSM_CHANNELS
}

fn default_pw_channels() -> [usize; 4] {
    PW_CHANNELS
}

impl PaceConfig {
    pub fn new(resolution: usize, seed: u64) -> Self {
        Self { resolution, gsm_channels: GSM_CHANNELS, pw_channels: PW_CHANNELS, seed }
    }
}

/// Forward state of the GSM branch.
pub struct GsmOutput<T> {
    input: Tensor<T>,
    /// Post-activation feature maps; map `k` is `input / 2^(k+1)` wide.
    pub features: Vec<Tensor<T>>,
    pooled: Vec<T>,
    /// `[n, 2]` logits, `[fake, real]` per mask.
    pub logits: Vec<T>,
}

impl<T: Real> GsmOutput<T> {
    pub fn batch(&self) -> usize {
        self.input.n
    }

    /// Softmax probability of the "annotated" class, per mask.
    pub fn realness(&self) -> Vec<T> {
        realness_from_logits(&self.logits)
    }
}

pub fn realness_from_logits<T: Real>(logits: &[T]) -> Vec<T> {
    logits.chunks(2).map(|z| nn::sigmoid(z[REAL] - z[FAKE])).collect()
}

/// Forward state of the PW branch.
pub struct PwOutput<T> {
    conv_in: Vec<Tensor<T>>,
    conv_out: Vec<Tensor<T>>,
    /// Reliability map `[n, 1, H, W]` in `[0, 1]`.
    pub weights: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Gsm {
    convs: Vec<Conv2d>,
    head: Linear,
    layout: ParamLayout,
    resolution: usize,
}

impl Gsm {
    fn new(cfg: &PaceConfig) -> Self {
        let mut layout = ParamLayout::new();
        let gain = nn::leaky_gain(LEAKY_SLOPE);
        let mut cin = 1;
        let mut convs = Vec::with_capacity(4);
        for &c in &cfg.gsm_channels {
            convs.push(Conv2d::new(&mut layout, cin, c, 4, 2, 1, 1, gain));
            cin = c;
        }
        // Sum pooling grows with the number of positions; scale the head
        // init so initial logits stay O(1).
        let positions = (cfg.resolution / 16).pow(2).max(1) as f64;
        let head = Linear::new(&mut layout, cin, 2, 1.0 / positions);
        Self { convs, head, layout, resolution: cfg.resolution }
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    fn check_params<T>(&self, params: &[T]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!("GSM branch has {} parameters, got {}", self.num_params(), params.len())));
        }
        Ok(())
    }

    pub fn forward<T: Real>(&self, params: &[T], masks: &Tensor<T>) -> Result<GsmOutput<T>> {
        self.check_params(params)?;
        if masks.c != 1 || !masks.h.is_multiple_of(16) || !masks.w.is_multiple_of(16) || masks.h == 0 || masks.w == 0 {
            return Err(Error::Shape(format!(
                "GSM input must be [n, 1, H, W] with H, W divisible by 16, got {:?}",
                masks.shape()
            )));
        }
        if masks.h != self.resolution || masks.w != self.resolution {
            return Err(Error::Shape(format!(
                "GSM branch built for {0}x{0} masks, got {1}x{2}",
                self.resolution, masks.h, masks.w
            )));
        }
        let slope = T::lit(LEAKY_SLOPE);
        let mut features: Vec<Tensor<T>> = Vec::with_capacity(4);
        for (k, conv) in self.convs.iter().enumerate() {
            let x = if k == 0 { masks } else { &features[k - 1] };
            let mut y = conv.forward(params, x);
            nn::leaky_relu(&mut y, slope);
            debug_assert_eq!(y.h, masks.h >> (k + 1));
            features.push(y);
        }
        let top = &features[3];
        let plane = top.h * top.w;
        let pooled: Vec<T> = top
            .data
            .chunks(plane)
            .map(|c| c.iter().fold(T::zero(), |a, &v| a + v))
            .collect();
        let logits = self.head.forward(params, &pooled, masks.n);
        Ok(GsmOutput { input: masks.clone(), features, pooled, logits })
    }

    /// Back-propagates gradients w.r.t. the logits and, optionally, the
    /// exposed feature maps. Parameter gradients go to `grads` when given;
    /// the gradient w.r.t. the input masks is returned when `need_input`.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        out: &GsmOutput<T>,
        grad_logits: Option<&[T]>,
        grad_features: Option<&[Tensor<T>]>,
        mut grads: Option<&mut [T]>,
        need_input: bool,
    ) -> Option<Tensor<T>> {
        let n = out.batch();
        let slope = T::lit(LEAKY_SLOPE);
        let top = &out.features[3];
        let mut g = Tensor::zeros(n, top.c, top.h, top.w);
        if let Some(gl) = grad_logits {
            let gpool = self.head.backward(params, &out.pooled, gl, n, grads.as_deref_mut());
            let plane = top.h * top.w;
            for (chunk, &gp) in g.data.chunks_mut(plane).zip(&gpool) {
                chunk.iter_mut().for_each(|v| *v = gp);
            }
        }
        for k in (0..4).rev() {
            if let Some(gf) = grad_features {
                for (a, &b) in g.data.iter_mut().zip(&gf[k].data) {
                    *a = *a + b;
                }
            }
            nn::leaky_relu_backward(&out.features[k], &mut g, slope);
            let x = if k == 0 { &out.input } else { &out.features[k - 1] };
            let need_dx = k > 0 || need_input;
            if grads.is_none() && !need_dx {
                return None;
            }
            {
                let dx = self.convs[k].backward(params, x, &g, grads.as_deref_mut(), need_dx)?;
                g = dx
            }
        }
        Some(g)
    }
}

#[derive(Clone, Debug)]
pub struct PixelWeighting {
    blocks: Vec<Conv2d>,
    head: Conv2d,
    layout: ParamLayout,
    gsm_channels: [usize; 4],
}

impl PixelWeighting {
    fn new(cfg: &PaceConfig) -> Self {
        let mut layout = ParamLayout::new();
        let relu = std::f64::consts::SQRT_2;
        let mut cin = cfg.gsm_channels[3];
        let mut blocks = Vec::with_capacity(4);
        for (k, &c) in cfg.pw_channels.iter().enumerate() {
            // Block k upsamples to the resolution of GSM stage 2-k and
            // concatenates it; the last block reaches input resolution,
            // where there is no GSM map to join.
            let skip = if k < 3 { cfg.gsm_channels[2 - k] } else { 0 };
            blocks.push(Conv2d::same3(&mut layout, cin + skip, c, 1, relu));
            cin = c;
        }
        let head = Conv2d::same3(&mut layout, cin, 1, 1, 1.0);
        Self { blocks, head, layout, gsm_channels: cfg.gsm_channels }
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    pub fn forward<T: Real>(&self, params: &[T], features: &[Tensor<T>]) -> Result<PwOutput<T>> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!("PW branch has {} parameters, got {}", self.num_params(), params.len())));
        }
        if features.len() != 4 {
            return Err(Error::Shape(format!("PW branch needs 4 feature maps, got {}", features.len())));
        }
        for (k, f) in features.iter().enumerate() {
            if f.c != self.gsm_channels[k] || f.h != features[0].h >> k || f.n != features[0].n {
                return Err(Error::Shape(format!("feature map {k} has unexpected shape {:?}", f.shape())));
            }
        }
        let mut x = features[3].clone();
        let mut conv_in = Vec::with_capacity(5);
        let mut conv_out = Vec::with_capacity(4);
        for (k, conv) in self.blocks.iter().enumerate() {
            let up = nn::upsample_nearest2(&x);
            let input = if k < 3 { nn::concat_channels(&up, &features[2 - k]) } else { up };
            let mut y = conv.forward(params, &input);
            nn::leaky_relu(&mut y, T::zero());
            conv_in.push(input);
            conv_out.push(y.clone());
            x = y;
        }
        let logits = self.head.forward(params, &x);
        conv_in.push(x);
        let weights = logits.map(nn::sigmoid);
        Ok(PwOutput { conv_in, conv_out, weights })
    }

    /// Back-propagates a gradient w.r.t. the output weights. Returns feature
    /// gradients when `need_features`.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        out: &PwOutput<T>,
        grad_weights: &Tensor<T>,
        mut grads: Option<&mut [T]>,
        need_features: bool,
    ) -> Option<Vec<Tensor<T>>> {
        let mut g = grad_weights.clone();
        for (gv, &p) in g.data.iter_mut().zip(&out.weights.data) {
            *gv = *gv * p * (T::one() - p);
        }
        let mut g = self.head.backward(params, &out.conv_in[4], &g, grads.as_deref_mut(), true).unwrap();
        let mut fgrads: Vec<Option<Tensor<T>>> = vec![None, None, None, None];
        for k in (0..4).rev() {
            nn::leaky_relu_backward(&out.conv_out[k], &mut g, T::zero());
            if !need_features && k == 0 {
                self.blocks[0].backward(params, &out.conv_in[0], &g, grads.as_deref_mut(), false);
                return None;
            }
            let gin = self.blocks[k].backward(params, &out.conv_in[k], &g, grads.as_deref_mut(), true).unwrap();
            let gup = if k < 3 {
                let (gup, gskip) = nn::split_channels(&gin, gin.c - self.gsm_channels[2 - k]);
                fgrads[2 - k] = Some(gskip);
                gup
            } else {
                gin
            };
            g = nn::upsample_nearest2_backward(&gup);
        }
        fgrads[3] = Some(g);
        if need_features {
            Some(fgrads.into_iter().map(|f| f.unwrap()).collect())
        } else {
            None
        }
    }
}

/// Both branches and their separate parameter vectors' layouts.
#[derive(Clone, Debug)]
pub struct PaceGenerator {
    pub config: PaceConfig,
    pub gsm: Gsm,
    pub pw: PixelWeighting,
}

impl PaceGenerator {
    pub fn new(config: PaceConfig) -> Result<Self> {
        if config.resolution == 0 || !config.resolution.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "pace generator needs a resolution divisible by 16, got {}",
                config.resolution
            )));
        }
        let gsm = Gsm::new(&config);
        let pw = PixelWeighting::new(&config);
        Ok(Self { config, gsm, pw })
    }

    /// Initial `(phi_g, phi_v)`.
    pub fn init_params<T: Real>(&self) -> (Vec<T>, Vec<T>) {
        (self.gsm.layout.init(self.config.seed), self.pw.layout.init(self.config.seed.wrapping_add(1)))
    }

    pub fn gsm_forward<T: Real>(&self, phi_g: &[T], masks: &Tensor<T>) -> Result<GsmOutput<T>> {
        self.gsm.forward(phi_g, masks)
    }

    pub fn pw_forward<T: Real>(&self, phi_v: &[T], features: &[Tensor<T>]) -> Result<PwOutput<T>> {
        self.pw.forward(phi_v, features)
    }

    /// Reliability map of a saliency map: the PW branch applied to the GSM
    /// features. Consumers treat the result as a constant.
    pub fn weigh<T: Real>(&self, phi_g: &[T], phi_v: &[T], masks: &Tensor<T>) -> Result<Tensor<T>> {
        let gsm = self.gsm_forward(phi_g, masks)?;
        Ok(self.pw_forward(phi_v, &gsm.features)?.weights)
    }
}
