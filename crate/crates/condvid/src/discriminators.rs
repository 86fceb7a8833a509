//! Conditional critics. The frame critic scores one image at a time with
//! the content label appended as constant one-hot planes; the video critic
//! scores a whole clip with the motion label appended the same way. Every
//! weight is spectrally normalized; there is no batch norm on this side.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::conv2d::Conv2dCfg;
use crate::nn::conv3d::Conv3dCfg;
use crate::nn::linear::LinearCfg;
use crate::nn::spectral::{SnConv2d, SnConv3d, SnLinear};
use crate::nn::{leaky_relu_backward_inplace, leaky_relu_inplace, sigmoid, ParamVisitor, StateVisitor};
use crate::rng::seed_stream;
use ndarray::{Array1, Array2, Array4, Array5, Axis};
use rand_chacha::ChaCha20Rng;

const LEAKY_SLOPE: f32 = 0.2;
const INIT_STD: f32 = 0.02;

/// Appends `n_classes` constant label planes to frames `[n, ch, h, w]`:
/// plane `labels[i]` is all ones for sample `i`, the others all zeros.
pub fn condition_frames(x: &Array4<f32>, labels: &[usize], n_classes: usize) -> Result<Array4<f32>> {
    let (n, c, h, w) = x.dim();
    if labels.len() != n {
        return Err(Error::shape("one label per frame"));
    }
    let mut out = Array4::<f32>::zeros((n, c + n_classes, h, w));
    for i in 0..n {
        if labels[i] >= n_classes {
            return Err(Error::invalid(format!("label {} out of range", labels[i])));
        }
        out.slice_mut(ndarray::s![i, ..c, .., ..])
            .assign(&x.index_axis(Axis(0), i));
        out.slice_mut(ndarray::s![i, c + labels[i], .., ..]).fill(1.0);
    }
    Ok(out)
}

/// Appends `n_classes` constant label planes to videos `[n, ch, t, h, w]`.
pub fn condition_videos(x: &Array5<f32>, labels: &[usize], n_classes: usize) -> Result<Array5<f32>> {
    let (n, c, t, h, w) = x.dim();
    if labels.len() != n {
        return Err(Error::shape("one label per video"));
    }
    let mut out = Array5::<f32>::zeros((n, c + n_classes, t, h, w));
    for i in 0..n {
        if labels[i] >= n_classes {
            return Err(Error::invalid(format!("label {} out of range", labels[i])));
        }
        out.slice_mut(ndarray::s![i, ..c, .., .., ..])
            .assign(&x.index_axis(Axis(0), i));
        out.slice_mut(ndarray::s![i, c + labels[i], .., .., ..]).fill(1.0);
    }
    Ok(out)
}

/// Spatial downsampling plan shared by both critics (and the evaluation
/// classifiers): halve until the side reaches at most 6 (mirrors the
/// generator's upsampling plan).
pub(crate) fn spatial_plan(h: usize, w: usize) -> Result<(usize, usize)> {
    if h != w {
        return Err(Error::invalid("only square frames are supported"));
    }
    let mut s = h;
    let mut count = 0usize;
    while s > 6 && s % 2 == 0 {
        s /= 2;
        count += 1;
    }
    if s > 6 || count == 0 {
        return Err(Error::invalid(format!("resolution {h} is not (4..=6) * 2^k")));
    }
    Ok((s, count))
}

/// Activations of a frame-critic forward pass.
pub struct FrameCriticCache {
    xc: Array4<f32>,
    acts: Vec<Array4<f32>>,
    flat: Array2<f32>,
    pub p: Array1<f32>,
}

/// Scores single frames conditioned on the content class.
#[derive(Debug, Clone)]
pub struct FrameCritic {
    pub channels: usize,
    pub n_content: usize,
    pub convs: Vec<SnConv2d>,
    pub fc: SnLinear,
}

impl FrameCritic {
    pub fn new(
        channels: usize,
        n_content: usize,
        height: usize,
        width: usize,
        base_channels: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        let (s_final, count) = spatial_plan(height, width)?;
        let mut convs = Vec::with_capacity(count);
        let mut cin = channels + n_content;
        let mut cout = base_channels;
        for _ in 0..count {
            convs.push(SnConv2d::new(
                Conv2dCfg { cin, cout, k: 4, stride: 2, pad: 1 },
                rng,
                INIT_STD,
            ));
            cin = cout;
            cout *= 2;
        }
        let fc = SnLinear::new(LinearCfg { d_in: cin * s_final * s_final, d_out: 1 }, rng, INIT_STD);
        Ok(FrameCritic { channels, n_content, convs, fc })
    }

    /// Input channel count after conditioning.
    pub fn input_channels(&self) -> usize {
        self.channels + self.n_content
    }

    /// Refreshes every layer's spectral estimate (training: 1 iteration).
    pub fn normalize(&mut self, iters: usize) {
        for conv in &mut self.convs {
            conv.normalize(iters);
        }
        self.fc.normalize(iters);
    }

    /// Iterates every layer's spectral estimate to convergence.
    pub fn normalize_converged(&mut self) {
        for conv in &mut self.convs {
            conv.normalize_converged();
        }
        self.fc.normalize_converged();
    }

    /// Forward through the cached normalized weights. Pure: identical
    /// inputs give identical probabilities until `normalize` is called.
    pub fn forward(&self, frames: &Array4<f32>, labels: &[usize]) -> Result<FrameCriticCache> {
        let xc = condition_frames(frames, labels, self.n_content)?;
        let mut acts = Vec::with_capacity(self.convs.len());
        let mut cur = xc.clone();
        for conv in &self.convs {
            let mut v = conv.forward(&cur);
            leaky_relu_inplace(v.as_slice_mut().unwrap(), LEAKY_SLOPE);
            acts.push(v.clone());
            cur = v;
        }
        let (n, c, h, w) = cur.dim();
        let flat = Array2::from_shape_vec((n, c * h * w), cur.as_slice().unwrap().to_vec()).unwrap();
        let logits = self.fc.forward(&flat);
        let p = Array1::from_iter(logits.column(0).iter().map(|&l| sigmoid(l)));
        Ok(FrameCriticCache { xc, acts, flat, p })
    }

    /// Probabilities only.
    pub fn score_frames(&self, frames: &Array4<f32>, labels: &[usize]) -> Result<Array1<f32>> {
        Ok(self.forward(frames, labels)?.p)
    }

    /// Backward from a gradient on the probabilities. Returns the gradient
    /// on the raw (unconditioned) frames when requested.
    pub fn backward(&mut self, cache: &FrameCriticCache, dp: &Array1<f32>, need_dx: bool) -> Option<Array4<f32>> {
        let n = cache.p.len();
        let mut dlogit = Array1::<f32>::zeros(n);
        for i in 0..n {
            let p = cache.p[i];
            dlogit[i] = dp[i] * p * (1.0 - p);
        }
        self.backward_logits(cache, &dlogit, need_dx)
    }

    /// Backward from a gradient on the pre-sigmoid logits. The training path
    /// uses this: at saturated probabilities the chain through the sigmoid
    /// underflows, while the logit-space loss gradient stays O(1/n).
    pub fn backward_logits(&mut self, cache: &FrameCriticCache, dz: &Array1<f32>, need_dx: bool) -> Option<Array4<f32>> {
        let n = cache.p.len();
        let mut dlogit = Array2::<f32>::zeros((n, 1));
        for i in 0..n {
            dlogit[[i, 0]] = dz[i];
        }
        let dflat = self.fc.backward(&cache.flat, &dlogit, true).unwrap();
        let last_dim = cache.acts.last().unwrap().dim();
        let mut dcur = Array4::from_shape_vec(last_dim, dflat.as_slice().unwrap().to_vec()).unwrap();
        for i in (0..self.convs.len()).rev() {
            leaky_relu_backward_inplace(
                dcur.as_slice_mut().unwrap(),
                cache.acts[i].as_slice().unwrap(),
                LEAKY_SLOPE,
            );
            let input = if i == 0 { &cache.xc } else { &cache.acts[i - 1] };
            match self.convs[i].backward(input, &dcur, i > 0 || need_dx) {
                Some(d) => dcur = d,
                None => return None,
            }
        }
        need_dx.then(|| dcur.slice(ndarray::s![.., ..self.channels, .., ..]).to_owned())
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&format!("{prefix}.conv{i}"), f);
        }
        self.fc.visit_params(&format!("{prefix}.fc"), f);
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut StateVisitor) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_state(&format!("{prefix}.conv{i}"), f);
        }
        self.fc.visit_state(&format!("{prefix}.fc"), f);
    }
}

/// Activations of a video-critic forward pass.
pub struct VideoCriticCache {
    xc: Array5<f32>,
    acts: Vec<Array5<f32>>,
    flat: Array2<f32>,
    pub p: Array1<f32>,
}

/// Scores whole clips conditioned on the motion class.
#[derive(Debug, Clone)]
pub struct VideoCritic {
    pub channels: usize,
    pub n_motion: usize,
    pub convs: Vec<SnConv3d>,
    pub fc: SnLinear,
}

impl VideoCritic {
    pub fn new(
        channels: usize,
        n_motion: usize,
        frames: usize,
        height: usize,
        width: usize,
        base_channels: usize,
        rng: &mut ChaCha20Rng,
    ) -> Result<Self> {
        let (_, count) = spatial_plan(height, width)?;
        let mut convs = Vec::with_capacity(count);
        let mut cin = channels + n_motion;
        let mut cout = base_channels;
        let mut t = frames;
        for _ in 0..count {
            // temporal geometry adapts to how much time is left
            let (kt, st, pt) = if t >= 4 {
                (4, 2, 1)
            } else if t >= 2 {
                (2, 2, 0)
            } else {
                (1, 1, 0)
            };
            let cfg = Conv3dCfg {
                cin,
                cout,
                k: (kt, 4, 4),
                stride: (st, 2, 2),
                pad: (pt, 1, 1),
            };
            t = (t + 2 * pt - kt) / st + 1;
            convs.push(SnConv3d::new(cfg, rng, INIT_STD));
            cin = cout;
            cout *= 2;
        }
        let (s_final, _) = spatial_plan(height, width)?;
        let fc = SnLinear::new(
            LinearCfg { d_in: cin * t * s_final * s_final, d_out: 1 },
            rng,
            INIT_STD,
        );
        Ok(VideoCritic { channels, n_motion, convs, fc })
    }

    /// Input channel count after conditioning.
    pub fn input_channels(&self) -> usize {
        self.channels + self.n_motion
    }

    pub fn normalize(&mut self, iters: usize) {
        for conv in &mut self.convs {
            conv.normalize(iters);
        }
        self.fc.normalize(iters);
    }

    pub fn normalize_converged(&mut self) {
        for conv in &mut self.convs {
            conv.normalize_converged();
        }
        self.fc.normalize_converged();
    }

    /// Forward through the cached normalized weights; pure.
    pub fn forward(&self, videos: &Array5<f32>, labels: &[usize]) -> Result<VideoCriticCache> {
        let xc = condition_videos(videos, labels, self.n_motion)?;
        let mut acts = Vec::with_capacity(self.convs.len());
        let mut cur = xc.clone();
        for conv in &self.convs {
            let mut v = conv.forward(&cur);
            leaky_relu_inplace(v.as_slice_mut().unwrap(), LEAKY_SLOPE);
            acts.push(v.clone());
            cur = v;
        }
        let (n, c, t, h, w) = cur.dim();
        let flat = Array2::from_shape_vec((n, c * t * h * w), cur.as_slice().unwrap().to_vec()).unwrap();
        let logits = self.fc.forward(&flat);
        let p = Array1::from_iter(logits.column(0).iter().map(|&l| sigmoid(l)));
        Ok(VideoCriticCache { xc, acts, flat, p })
    }

    /// Probabilities only.
    pub fn score_videos(&self, videos: &Array5<f32>, labels: &[usize]) -> Result<Array1<f32>> {
        Ok(self.forward(videos, labels)?.p)
    }

    /// Backward from a gradient on the probabilities. Returns the gradient
    /// on the raw (unconditioned) videos when requested.
    pub fn backward(&mut self, cache: &VideoCriticCache, dp: &Array1<f32>, need_dx: bool) -> Option<Array5<f32>> {
        let n = cache.p.len();
        let mut dlogit = Array1::<f32>::zeros(n);
        for i in 0..n {
            let p = cache.p[i];
            dlogit[i] = dp[i] * p * (1.0 - p);
        }
        self.backward_logits(cache, &dlogit, need_dx)
    }

    /// Backward from a gradient on the pre-sigmoid logits; see
    /// [`FrameCritic::backward_logits`].
    pub fn backward_logits(&mut self, cache: &VideoCriticCache, dz: &Array1<f32>, need_dx: bool) -> Option<Array5<f32>> {
        let n = cache.p.len();
        let mut dlogit = Array2::<f32>::zeros((n, 1));
        for i in 0..n {
            dlogit[[i, 0]] = dz[i];
        }
        let dflat = self.fc.backward(&cache.flat, &dlogit, true).unwrap();
        let last_dim = cache.acts.last().unwrap().dim();
        let mut dcur = Array5::from_shape_vec(last_dim, dflat.as_slice().unwrap().to_vec()).unwrap();
        for i in (0..self.convs.len()).rev() {
            leaky_relu_backward_inplace(
                dcur.as_slice_mut().unwrap(),
                cache.acts[i].as_slice().unwrap(),
                LEAKY_SLOPE,
            );
            let input = if i == 0 { &cache.xc } else { &cache.acts[i - 1] };
            match self.convs[i].backward(input, &dcur, i > 0 || need_dx) {
                Some(d) => dcur = d,
                None => return None,
            }
        }
        need_dx.then(|| dcur.slice(ndarray::s![.., ..self.channels, .., .., ..]).to_owned())
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_params(&format!("{prefix}.conv{i}"), f);
        }
        self.fc.visit_params(&format!("{prefix}.fc"), f);
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut StateVisitor) {
        for (i, conv) in self.convs.iter_mut().enumerate() {
            conv.visit_state(&format!("{prefix}.conv{i}"), f);
        }
        self.fc.visit_state(&format!("{prefix}.fc"), f);
    }
}

/// Builds both critics from the model config with a seeded stream.
pub fn build_critics(mc: &ModelConfig, master_seed: u64) -> Result<(FrameCritic, VideoCritic)> {
    mc.validate()?;
    let mut rng_i = seed_stream(master_seed, "init/frame_critic");
    let d_i = FrameCritic::new(
        mc.channels,
        mc.content_classes,
        mc.height,
        mc.width,
        mc.d_image_channels,
        &mut rng_i,
    )?;
    let mut rng_v = seed_stream(master_seed, "init/video_critic");
    let d_v = VideoCritic::new(
        mc.channels,
        mc.motion_classes,
        mc.frames,
        mc.height,
        mc.width,
        mc.d_video_channels,
        &mut rng_v,
    )?;
    Ok((d_i, d_v))
}
