//! Frame and video generation.
//!
//! The frame generator maps a per-frame latent vector, the concatenation of
//! the content noise, the one-hot content label and the motion code, to one
//! image through an upsampling deconvolution stack. The video generator
//! composes it with the recurrent motion path: the content part is sampled
//! once per clip and held fixed, the motion code varies per frame.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::latent_dynamics::{GruCache, MotionPathGenerator};
use crate::nn::batchnorm::{BatchNorm, BnCache};
use crate::nn::deconv2d::{Deconv2d, Deconv2dCfg};
use crate::nn::linear::{Linear, LinearCfg};
use crate::nn::{relu_inplace, relu_backward_inplace, tanh_inplace, tanh_backward_inplace, ParamVisitor, StateVisitor};
use crate::rng::seed_stream;
use crate::types::{one_hot, LatentSeed, VideoClip};
use ndarray::{Array1, Array2, Array3, Array4, Array5};
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameGenCfg {
    pub d_c: usize,
    pub n_content: usize,
    pub d_m: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub base_channels: usize,
}

impl FrameGenCfg {
    /// Width of the per-frame latent vector.
    pub fn input_width(&self) -> usize {
        self.d_c + self.n_content + self.d_m
    }

    /// Decoder topology: initial spatial size and the number of 2x
    /// upsampling stages needed to reach the target resolution.
    pub fn stages(&self) -> Result<(usize, usize)> {
        if self.height != self.width {
            return Err(Error::invalid("only square frames are supported"));
        }
        let mut s = self.height;
        let mut count = 0usize;
        while s > 6 && s % 2 == 0 {
            s /= 2;
            count += 1;
        }
        if s > 6 || count == 0 {
            return Err(Error::invalid(format!(
                "resolution {} is not (4..=6) * 2^k",
                self.height
            )));
        }
        Ok((s, count))
    }
}

/// Activations captured by the training-mode forward pass.
pub struct FrameGenCache {
    x_in: Array2<f32>,
    bn0: BnCache,
    r0: Array4<f32>,
    /// Per mid block: batch-norm cache and the post-ReLU output that feeds
    /// the next deconvolution.
    mid: Vec<(BnCache, Array4<f32>)>,
    y: Array4<f32>,
}

#[derive(Debug, Clone)]
pub struct FrameGenerator {
    pub cfg: FrameGenCfg,
    pub s0: usize,
    pub fc: Linear,
    pub fc_bn: BatchNorm,
    pub mids: Vec<(Deconv2d, BatchNorm)>,
    pub last: Deconv2d,
}

const INIT_STD: f32 = 0.02;

impl FrameGenerator {
    pub fn new(cfg: FrameGenCfg, rng: &mut ChaCha20Rng) -> Result<Self> {
        let (s0, count) = cfg.stages()?;
        let widths: Vec<usize> = (0..count).map(|i| (cfg.base_channels >> i).max(8)).collect();
        let fc = Linear::new(
            LinearCfg { d_in: cfg.input_width(), d_out: widths[0] * s0 * s0 },
            rng,
            INIT_STD,
        );
        let fc_bn = BatchNorm::new(widths[0]);
        let mut mids = Vec::new();
        for i in 0..count - 1 {
            let dcfg = Deconv2dCfg { cin: widths[i], cout: widths[i + 1], k: 4, stride: 2, pad: 1 };
            mids.push((Deconv2d::new(dcfg, rng, INIT_STD), BatchNorm::new(widths[i + 1])));
        }
        let last = Deconv2d::new(
            Deconv2dCfg { cin: widths[count - 1], cout: cfg.channels, k: 4, stride: 2, pad: 1 },
            rng,
            INIT_STD,
        );
        Ok(FrameGenerator { cfg, s0, fc, fc_bn, mids, last })
    }

    /// Per-frame latent vector: content noise, one-hot content label, motion
    /// code, in that order.
    pub fn assemble_input(&self, eps_c: &[f32], y_c: &[f32], z_m: &[f32]) -> Result<Array1<f32>> {
        if eps_c.len() != self.cfg.d_c || y_c.len() != self.cfg.n_content || z_m.len() != self.cfg.d_m {
            return Err(Error::shape(format!(
                "frame input parts ({}, {}, {}), expected ({}, {}, {})",
                eps_c.len(),
                y_c.len(),
                z_m.len(),
                self.cfg.d_c,
                self.cfg.n_content,
                self.cfg.d_m
            )));
        }
        let mut v = Vec::with_capacity(self.cfg.input_width());
        v.extend_from_slice(eps_c);
        v.extend_from_slice(y_c);
        v.extend_from_slice(z_m);
        Ok(Array1::from_vec(v))
    }

    /// Training-mode forward (batch statistics, running stats updated).
    pub fn forward_train(&mut self, x: &Array2<f32>) -> (Array4<f32>, FrameGenCache) {
        let n = x.nrows();
        let base = self.fc_bn.c;
        let s0 = self.s0;
        let a0 = self.fc.forward(x);
        let (b0, bn0) = self.fc_bn.forward_train(a0.as_slice().unwrap(), n, s0 * s0);
        let mut r0 = Array4::from_shape_vec((n, base, s0, s0), b0).unwrap();
        relu_inplace(r0.as_slice_mut().unwrap());
        let mut mid_caches = Vec::with_capacity(self.mids.len());
        let mut cur = r0.clone();
        for (deconv, bn) in self.mids.iter_mut() {
            let v = deconv.forward(&cur);
            let (nn_, c_, h_, w_) = v.dim();
            let (b, bc) = bn.forward_train(v.as_slice().unwrap(), nn_, h_ * w_);
            let mut r = Array4::from_shape_vec((nn_, c_, h_, w_), b).unwrap();
            relu_inplace(r.as_slice_mut().unwrap());
            mid_caches.push((bc, r.clone()));
            cur = r;
        }
        let mut y = self.last.forward(&cur);
        tanh_inplace(y.as_slice_mut().unwrap());
        let cache = FrameGenCache { x_in: x.clone(), bn0, r0, mid: mid_caches, y: y.clone() };
        (y, cache)
    }

    /// Eval-mode forward (running statistics); pure, per-sample independent.
    pub fn forward_eval(&self, x: &Array2<f32>) -> Array4<f32> {
        let n = x.nrows();
        let base = self.fc_bn.c;
        let s0 = self.s0;
        let a0 = self.fc.forward(x);
        let b0 = self.fc_bn.forward_eval(a0.as_slice().unwrap(), n, s0 * s0);
        let mut cur = Array4::from_shape_vec((n, base, s0, s0), b0).unwrap();
        relu_inplace(cur.as_slice_mut().unwrap());
        for (deconv, bn) in &self.mids {
            let v = deconv.forward(&cur);
            let (nn_, c_, h_, w_) = v.dim();
            let b = bn.forward_eval(v.as_slice().unwrap(), nn_, h_ * w_);
            cur = Array4::from_shape_vec((nn_, c_, h_, w_), b).unwrap();
            relu_inplace(cur.as_slice_mut().unwrap());
        }
        let mut y = self.last.forward(&cur);
        tanh_inplace(y.as_slice_mut().unwrap());
        y
    }

    /// Backward through the training-mode forward. Returns the gradient on
    /// the input latent rows.
    pub fn backward(&mut self, cache: &FrameGenCache, dy: &Array4<f32>) -> Array2<f32> {
        let mut d = dy.clone();
        tanh_backward_inplace(d.as_slice_mut().unwrap(), cache.y.as_slice().unwrap());
        let last_in = cache.mid.last().map(|(_, r)| r).unwrap_or(&cache.r0);
        let mut dr = self.last.backward(last_in, &d, true).unwrap();
        for i in (0..self.mids.len()).rev() {
            let (bc, r) = &cache.mid[i];
            relu_backward_inplace(dr.as_slice_mut().unwrap(), r.as_slice().unwrap());
            let (nn_, c_, h_, w_) = dr.dim();
            let dv = self.mids[i].1.backward(dr.as_slice().unwrap(), bc, nn_, h_ * w_);
            let dv = Array4::from_shape_vec((nn_, c_, h_, w_), dv).unwrap();
            let input = if i == 0 { &cache.r0 } else { &cache.mid[i - 1].1 };
            dr = self.mids[i].0.backward(input, &dv, true).unwrap();
        }
        relu_backward_inplace(dr.as_slice_mut().unwrap(), cache.r0.as_slice().unwrap());
        let (n, _, _, _) = dr.dim();
        let d0 = self.fc_bn.backward(dr.as_slice().unwrap(), &cache.bn0, n, self.s0 * self.s0);
        let d0 = Array2::from_shape_vec((n, self.fc.cfg.d_out), d0).unwrap();
        self.fc.backward(&cache.x_in, &d0, true).unwrap()
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        self.fc.visit_params(&format!("{prefix}.fc"), f);
        self.fc_bn.visit_params(&format!("{prefix}.bn0"), f);
        for (i, (deconv, bn)) in self.mids.iter_mut().enumerate() {
            deconv.visit_params(&format!("{prefix}.up{i}"), f);
            bn.visit_params(&format!("{prefix}.up{i}.bn"), f);
        }
        self.last.visit_params(&format!("{prefix}.out"), f);
    }

    pub fn visit_state(&mut self, prefix: &str, f: &mut StateVisitor) {
        self.fc_bn.visit_state(&format!("{prefix}.bn0"), f);
        for (i, (_, bn)) in self.mids.iter_mut().enumerate() {
            bn.visit_state(&format!("{prefix}.up{i}.bn"), f);
        }
    }
}

/// Rearranges generator output `[n*frames, ch, h, w]` (frame-major within
/// each clip) into video tensors `[n, ch, frames, h, w]`.
pub fn frames_to_videos(frames: &Array4<f32>, n: usize, t: usize) -> Array5<f32> {
    let (nt, c, h, w) = frames.dim();
    assert_eq!(nt, n * t, "frame rows");
    let mut v = Array5::<f32>::zeros((n, c, t, h, w));
    for i in 0..n {
        for tt in 0..t {
            for ch in 0..c {
                v.index_axis_mut(ndarray::Axis(0), i)
                    .index_axis_mut(ndarray::Axis(0), ch)
                    .index_axis_mut(ndarray::Axis(0), tt)
                    .assign(&frames.index_axis(ndarray::Axis(0), i * t + tt).index_axis(ndarray::Axis(0), ch));
            }
        }
    }
    v
}

/// Adjoint of `frames_to_videos`: scatters a video-tensor gradient back to
/// per-frame rows.
pub fn videos_grad_to_frames(dv: &Array5<f32>) -> Array4<f32> {
    let (n, c, t, h, w) = dv.dim();
    let mut d = Array4::<f32>::zeros((n * t, c, h, w));
    for i in 0..n {
        for tt in 0..t {
            for ch in 0..c {
                d.index_axis_mut(ndarray::Axis(0), i * t + tt)
                    .index_axis_mut(ndarray::Axis(0), ch)
                    .assign(
                        &dv.index_axis(ndarray::Axis(0), i)
                            .index_axis(ndarray::Axis(0), ch)
                            .index_axis(ndarray::Axis(0), tt),
                    );
            }
        }
    }
    d
}

/// Activations of a batched video-generator forward pass.
pub struct VideoGenCache {
    pub gru: Vec<Vec<GruCache<f32>>>,
    pub frames: FrameGenCache,
    pub n: usize,
    pub t: usize,
}

/// The full conditional generator: recurrent motion path plus frame decoder.
#[derive(Debug, Clone)]
pub struct VideoGenerator {
    pub motion: MotionPathGenerator,
    pub frame_gen: FrameGenerator,
    pub frames: usize,
}

impl VideoGenerator {
    pub fn new(mc: &ModelConfig, rng: &mut ChaCha20Rng) -> Result<Self> {
        mc.validate()?;
        let motion = MotionPathGenerator::new(mc.d_m, mc.motion_classes, rng);
        let frame_gen = FrameGenerator::new(
            FrameGenCfg {
                d_c: mc.d_c,
                n_content: mc.content_classes,
                d_m: mc.d_m,
                channels: mc.channels,
                height: mc.height,
                width: mc.width,
                base_channels: mc.g_base_channels,
            },
            rng,
        )?;
        Ok(VideoGenerator { motion, frame_gen, frames: mc.frames })
    }

    pub fn n_motion(&self) -> usize {
        self.motion.n_motion
    }

    pub fn n_content(&self) -> usize {
        self.frame_gen.cfg.n_content
    }

    /// Builds the `[frames, input_width]` latent rows for one clip: motion
    /// codes from the GRU, content part repeated across frames.
    fn latent_rows(&self, seed: &LatentSeed) -> Result<(Array2<f32>, Vec<GruCache<f32>>)> {
        seed.labels.validate(self.n_motion(), self.n_content())?;
        if seed.frames() != self.frames {
            return Err(Error::shape(format!(
                "seed has {} frames, model expects {}",
                seed.frames(),
                self.frames
            )));
        }
        let y_m = one_hot(seed.labels.motion, self.n_motion())?;
        let y_c = one_hot(seed.labels.content, self.n_content())?;
        let (z_m, caches) = self.motion.unroll(seed.eps_m.view(), y_m.as_slice().unwrap())?;
        let t = self.frames;
        let mut rows = Array2::<f32>::zeros((t, self.frame_gen.cfg.input_width()));
        for tt in 0..t {
            let row = self.frame_gen.assemble_input(
                seed.eps_c.as_slice().unwrap(),
                y_c.as_slice().unwrap(),
                z_m.row(tt).as_slice().unwrap(),
            )?;
            rows.row_mut(tt).assign(&row);
        }
        Ok((rows, caches))
    }

    /// Generates one clip deterministically from its seed (eval mode).
    pub fn generate_video(&self, seed: &LatentSeed) -> Result<VideoClip> {
        let (rows, _) = self.latent_rows(seed)?;
        let frames = self.frame_gen.forward_eval(&rows);
        Ok(VideoClip::from_bounded(frames))
    }

    /// Generates one frame of a clip (eval mode); `frame` indexes time.
    pub fn generate_frame(&self, seed: &LatentSeed, frame: usize) -> Result<Array3<f32>> {
        if frame >= self.frames {
            return Err(Error::invalid(format!("frame {frame} out of range")));
        }
        let (rows, _) = self.latent_rows(seed)?;
        let one = rows.row(frame).insert_axis(ndarray::Axis(0)).to_owned();
        let y = self.frame_gen.forward_eval(&one);
        Ok(y.index_axis(ndarray::Axis(0), 0).to_owned())
    }

    /// Training-mode batched forward: returns videos `[n, ch, frames, h, w]`
    /// and the cache for `backward`.
    pub fn forward_train(&mut self, seeds: &[LatentSeed]) -> Result<(Array5<f32>, VideoGenCache)> {
        let n = seeds.len();
        let t = self.frames;
        let width = self.frame_gen.cfg.input_width();
        let mut all_rows = Array2::<f32>::zeros((n * t, width));
        let mut gru_caches = Vec::with_capacity(n);
        for (i, seed) in seeds.iter().enumerate() {
            let (rows, caches) = self.latent_rows(seed)?;
            all_rows.slice_mut(ndarray::s![i * t..(i + 1) * t, ..]).assign(&rows);
            gru_caches.push(caches);
        }
        let (frames, frame_cache) = self.frame_gen.forward_train(&all_rows);
        let videos = frames_to_videos(&frames, n, t);
        Ok((videos, VideoGenCache { gru: gru_caches, frames: frame_cache, n, t }))
    }

    /// Backward from a video-tensor gradient through frames and motion path.
    pub fn backward(&mut self, cache: &VideoGenCache, d_videos: &Array5<f32>) {
        let d_frames = videos_grad_to_frames(d_videos);
        self.backward_frames(cache, &d_frames);
    }

    /// Backward from per-frame-row gradients `[n*frames, ch, h, w]`.
    pub fn backward_frames(&mut self, cache: &VideoGenCache, d_frames: &Array4<f32>) {
        let dx = self.frame_gen.backward(&cache.frames, d_frames);
        let (d_c, n_c) = (self.frame_gen.cfg.d_c, self.frame_gen.cfg.n_content);
        let zm_off = d_c + n_c;
        let d_m = self.frame_gen.cfg.d_m;
        for (i, caches) in cache.gru.iter().enumerate() {
            let dz = dx
                .slice(ndarray::s![i * cache.t..(i + 1) * cache.t, zm_off..zm_off + d_m])
                .to_owned();
            self.motion.backward(caches, &dz);
        }
    }

    pub fn zero_grads(&mut self) {
        let mut zero = |_n: &str, _s: &[usize], _v: &mut [f32], g: &mut [f32]| g.fill(0.0);
        self.visit_params(&mut zero);
    }

    pub fn visit_params(&mut self, f: &mut ParamVisitor) {
        self.motion.visit_params("g.motion", f);
        self.frame_gen.visit_params("g.frame", f);
    }

    pub fn visit_state(&mut self, f: &mut StateVisitor) {
        self.frame_gen.visit_state("g.frame", f);
    }
}

/// Builds a generator from the model config with a seeded parameter stream.
pub fn build_generator(mc: &ModelConfig, master_seed: u64) -> Result<VideoGenerator> {
    let mut rng = seed_stream(master_seed, "init/generator");
    VideoGenerator::new(mc, &mut rng)
}
