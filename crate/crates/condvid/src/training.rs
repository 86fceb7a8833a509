//! Adversarial optimization: per-frame and per-video critic updates followed
//! by a generator update, with non-saturating generator loss and Adam on all
//! three networks.
//!
//! The fake labels drawn here come only from the training split; held-out
//! (motion, content) combinations are reachable solely through generation.

use crate::config::ModelConfig;
use crate::datasets::{LabeledCorpus, SplitSpec};
use crate::discriminators::{build_critics, FrameCritic, VideoCritic};
use crate::error::{Error, Result};
use crate::generator::{build_generator, videos_grad_to_frames, VideoGenCache, VideoGenerator};
use crate::nn::{zero_grads, Adam};
use crate::rng::{sample_seed, seed_stream};
use crate::types::{LabelPair, LatentSeed, VideoClip};
use ndarray::{s, Array1, Array4, Array5};
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Scores are clamped this far inside (0, 1) before taking logs.
pub const SCORE_EPS: f64 = 1e-7;

fn clamped_log<F: Float>(p: F) -> F {
    let eps = F::from(SCORE_EPS).unwrap();
    p.max(eps).min(F::one() - eps).ln()
}

/// `-mean(log real) - mean(log(1 - fake))`. An empty slice contributes zero.
pub fn discriminator_loss<F: Float>(real: &[F], fake: &[F]) -> F {
    let mut loss = F::zero();
    if !real.is_empty() {
        let n = F::from(real.len()).unwrap();
        let sum = real.iter().fold(F::zero(), |a, &p| a + clamped_log(p));
        loss = loss - sum / n;
    }
    if !fake.is_empty() {
        let n = F::from(fake.len()).unwrap();
        let sum = fake.iter().fold(F::zero(), |a, &p| a + clamped_log(F::one() - p));
        loss = loss - sum / n;
    }
    loss
}

/// Loss plus its gradient with respect to every score.
pub fn discriminator_loss_grad<F: Float>(real: &[F], fake: &[F]) -> (F, Vec<F>, Vec<F>) {
    let eps = F::from(SCORE_EPS).unwrap();
    let loss = discriminator_loss(real, fake);
    let nr = F::from(real.len().max(1)).unwrap();
    let nf = F::from(fake.len().max(1)).unwrap();
    let d_real = real
        .iter()
        .map(|&p| -(nr * p.max(eps).min(F::one() - eps)).recip())
        .collect();
    let d_fake = fake
        .iter()
        .map(|&p| (nf * (F::one() - p).max(eps).min(F::one() - eps)).recip())
        .collect();
    (loss, d_real, d_fake)
}

/// Same loss, gradients taken with respect to the critics' pre-sigmoid
/// logits: `-(1-p)/n` on real scores, `p/n` on fake ones. Algebraically this
/// is the probability gradient chained through the sigmoid, but computed
/// without the `1/p` factor, so a saturated critic (p near 0 or 1) keeps an
/// O(1/n) corrective gradient instead of underflowing to zero. The training
/// step uses these.
pub fn discriminator_loss_logit_grad<F: Float>(real: &[F], fake: &[F]) -> (F, Vec<F>, Vec<F>) {
    let loss = discriminator_loss(real, fake);
    let nr = F::from(real.len().max(1)).unwrap();
    let nf = F::from(fake.len().max(1)).unwrap();
    let d_real = real.iter().map(|&p| -(F::one() - p) / nr).collect();
    let d_fake = fake.iter().map(|&p| p / nf).collect();
    (loss, d_real, d_fake)
}

/// Non-saturating form: `-mean(log fake_image) - mean(log fake_video)`.
pub fn generator_loss<F: Float>(fake_image: &[F], fake_video: &[F]) -> F {
    let mut loss = F::zero();
    for batch in [fake_image, fake_video] {
        if !batch.is_empty() {
            let n = F::from(batch.len()).unwrap();
            let sum = batch.iter().fold(F::zero(), |a, &p| a + clamped_log(p));
            loss = loss - sum / n;
        }
    }
    loss
}

pub fn generator_loss_grad<F: Float>(fake_image: &[F], fake_video: &[F]) -> (F, Vec<F>, Vec<F>) {
    let eps = F::from(SCORE_EPS).unwrap();
    let loss = generator_loss(fake_image, fake_video);
    let grad = |batch: &[F]| -> Vec<F> {
        let n = F::from(batch.len().max(1)).unwrap();
        batch
            .iter()
            .map(|&p| -(n * p.max(eps).min(F::one() - eps)).recip())
            .collect()
    };
    (loss, grad(fake_image), grad(fake_video))
}

/// Logit-space counterpart of [`generator_loss_grad`]: `-(1-p)/n` per score.
/// See [`discriminator_loss_logit_grad`] for why training prefers this form.
pub fn generator_loss_logit_grad<F: Float>(fake_image: &[F], fake_video: &[F]) -> (F, Vec<F>, Vec<F>) {
    let loss = generator_loss(fake_image, fake_video);
    let grad = |batch: &[F]| -> Vec<F> {
        let n = F::from(batch.len().max(1)).unwrap();
        batch.iter().map(|&p| -(F::one() - p) / n).collect()
    };
    (loss, grad(fake_image), grad(fake_video))
}

/// Per-step losses and mean critic scores. Everything must stay finite;
/// training aborts otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub d_loss_image: f32,
    pub d_loss_video: f32,
    pub g_loss: f32,
    pub real_score_image: f32,
    pub fake_score_image: f32,
    pub real_score_video: f32,
    pub fake_score_video: f32,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,d_loss_image,d_loss_video,g_loss,real_score_image,fake_score_image,real_score_video,fake_score_video";

    pub fn is_finite(&self) -> bool {
        [
            self.d_loss_image,
            self.d_loss_video,
            self.g_loss,
            self.real_score_image,
            self.fake_score_image,
            self.real_score_video,
            self.fake_score_video,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.d_loss_image,
            self.d_loss_video,
            self.g_loss,
            self.real_score_image,
            self.fake_score_image,
            self.real_score_video,
            self.fake_score_video
        )
    }
}

/// Named random streams owned by a training run. Separate streams keep the
/// draws independent of batch composition, which makes checkpoint resume
/// reproduce the exact continuation.
#[derive(Debug, Clone)]
pub struct RngStreams {
    /// Integer seeds for latent bundles.
    pub latent: ChaCha20Rng,
    /// Fake label sampling.
    pub labels: ChaCha20Rng,
    /// Batch index and frame subsampling draws.
    pub data: ChaCha20Rng,
}

impl RngStreams {
    pub fn new(master_seed: u64) -> Self {
        RngStreams {
            latent: seed_stream(master_seed, "train/latent"),
            labels: seed_stream(master_seed, "train/labels"),
            data: seed_stream(master_seed, "train/data"),
        }
    }
}

/// Everything a training run owns: the three networks, their optimizers,
/// random streams, and the step counter.
#[derive(Debug)]
pub struct TrainState {
    pub config: ModelConfig,
    pub split: SplitSpec,
    pub generator: VideoGenerator,
    pub frame_critic: FrameCritic,
    pub video_critic: VideoCritic,
    pub opt_g: Adam,
    pub opt_d_image: Adam,
    pub opt_d_video: Adam,
    pub rng: RngStreams,
    pub step: u64,
    pub master_seed: u64,
}

impl TrainState {
    pub fn new(config: &ModelConfig, split: &SplitSpec, master_seed: u64) -> Result<Self> {
        config.validate()?;
        split.validate()?;
        if split.motion_classes != config.motion_classes
            || split.content_classes != config.content_classes
        {
            return Err(Error::invalid(format!(
                "split is {}x{}, config is {}x{}",
                split.motion_classes,
                split.content_classes,
                config.motion_classes,
                config.content_classes
            )));
        }
        let generator = build_generator(config, master_seed)?;
        let (frame_critic, video_critic) = build_critics(config, master_seed)?;
        Ok(TrainState {
            generator,
            frame_critic,
            video_critic,
            opt_g: Adam::new(config.learning_rate, config.beta1, config.beta2),
            opt_d_image: Adam::new(config.learning_rate, config.beta1, config.beta2),
            opt_d_video: Adam::new(config.learning_rate, config.beta1, config.beta2),
            rng: RngStreams::new(master_seed),
            step: 0,
            master_seed,
            config: config.clone(),
            split: split.clone(),
        })
    }

    /// Uniform draw over the training split's (motion, content) pairs.
    pub fn sample_fake_labels(&mut self, n: usize) -> Vec<LabelPair> {
        let pairs = self.split.training_pairs();
        (0..n)
            .map(|_| pairs[self.rng.labels.random_range(0..pairs.len())])
            .collect()
    }

    fn sample_latents(&mut self, labels: &[LabelPair]) -> Result<Vec<LatentSeed>> {
        labels
            .iter()
            .map(|&l| {
                let s: u64 = self.rng.latent.random();
                sample_seed(&self.config, l, s)
            })
            .collect()
    }

    fn sample_frame_indices(&mut self, n: usize) -> Vec<usize> {
        let t = self.config.frames;
        (0..n).map(|_| self.rng.data.random_range(0..t)).collect()
    }
}

/// Stacks clips (stored `[frames, ch, h, w]`) into the critic video layout
/// `[n, ch, frames, h, w]`.
fn stack_real_videos(batch: &[(&VideoClip, LabelPair)], config: &ModelConfig) -> Result<Array5<f32>> {
    let (t, c, h, w) = (config.frames, config.channels, config.height, config.width);
    let mut v = Array5::<f32>::zeros((batch.len(), c, t, h, w));
    for (i, (clip, _)) in batch.iter().enumerate() {
        if clip.frames.dim() != (t, c, h, w) {
            return Err(Error::shape(format!(
                "batch clip {i} has shape {:?}, config expects {:?}",
                clip.frames.dim(),
                (t, c, h, w)
            )));
        }
        for tt in 0..t {
            for ch in 0..c {
                v.slice_mut(s![i, ch, tt, .., ..])
                    .assign(&clip.frames.slice(s![tt, ch, .., ..]));
            }
        }
    }
    Ok(v)
}

/// One frame per clip, chosen by `idx`.
fn pick_frames(videos: &Array5<f32>, idx: &[usize]) -> Array4<f32> {
    let (n, c, _, h, w) = videos.dim();
    let mut out = Array4::<f32>::zeros((n, c, h, w));
    for (i, &t) in idx.iter().enumerate() {
        out.slice_mut(s![i, .., .., ..])
            .assign(&videos.slice(s![i, .., t, .., ..]));
    }
    out
}

struct CriticPhase {
    d_loss_image: f32,
    d_loss_video: f32,
    real_score_image: f32,
    fake_score_image: f32,
    real_score_video: f32,
    fake_score_video: f32,
}

/// The fake batch scored by the critics, kept so the generator phase can
/// re-score exactly the same clips instead of paying a second forward pass.
struct FakeBatch {
    videos: Array5<f32>,
    frames: Array4<f32>,
    frame_idx: Vec<usize>,
    motion: Vec<usize>,
    content: Vec<usize>,
    cache: VideoGenCache,
}

fn mean(xs: &Array1<f32>) -> f32 {
    xs.mean().unwrap_or(0.0)
}

/// One update of both critics against the current generator.
fn critic_update(
    state: &mut TrainState,
    real_videos: &Array5<f32>,
    real_motion: &[usize],
    real_content: &[usize],
) -> Result<(CriticPhase, FakeBatch)> {
    let b = real_motion.len();
    let fake_labels = state.sample_fake_labels(b);
    let seeds = state.sample_latents(&fake_labels)?;
    let (fake_videos, g_cache) = state.generator.forward_train(&seeds)?;
    let fake_motion: Vec<usize> = fake_labels.iter().map(|l| l.motion).collect();
    let fake_content: Vec<usize> = fake_labels.iter().map(|l| l.content).collect();

    let real_frames = pick_frames(real_videos, &state.sample_frame_indices(b));
    let frame_idx = state.sample_frame_indices(b);
    let fake_frames = pick_frames(&fake_videos, &frame_idx);

    // the single warm-started power iteration for this training step
    state.frame_critic.normalize(1);
    let real_cache = state.frame_critic.forward(&real_frames, real_content)?;
    let fake_cache = state.frame_critic.forward(&fake_frames, &fake_content)?;
    let (d_loss_image, d_real, d_fake) = discriminator_loss_logit_grad(
        real_cache.p.as_slice().unwrap(),
        fake_cache.p.as_slice().unwrap(),
    );
    let TrainState { frame_critic, opt_d_image, .. } = state;
    zero_grads(|f| frame_critic.visit_params("d_i", f));
    frame_critic.backward_logits(&real_cache, &Array1::from(d_real), false);
    frame_critic.backward_logits(&fake_cache, &Array1::from(d_fake), false);
    opt_d_image.step(|f| frame_critic.visit_params("d_i", f));
    // rescale the cached normalized weights from the updated raw weights
    // (no extra power iteration) so the generator phase sees the new critic
    frame_critic.normalize(0);

    state.video_critic.normalize(1);
    let real_vcache = state.video_critic.forward(real_videos, real_motion)?;
    let fake_vcache = state.video_critic.forward(&fake_videos, &fake_motion)?;
    let (d_loss_video, d_real_v, d_fake_v) = discriminator_loss_logit_grad(
        real_vcache.p.as_slice().unwrap(),
        fake_vcache.p.as_slice().unwrap(),
    );
    let TrainState { video_critic, opt_d_video, .. } = state;
    zero_grads(|f| video_critic.visit_params("d_v", f));
    video_critic.backward_logits(&real_vcache, &Array1::from(d_real_v), false);
    video_critic.backward_logits(&fake_vcache, &Array1::from(d_fake_v), false);
    opt_d_video.step(|f| video_critic.visit_params("d_v", f));
    video_critic.normalize(0);

    Ok((
        CriticPhase {
            d_loss_image,
            d_loss_video,
            real_score_image: mean(&real_cache.p),
            fake_score_image: mean(&fake_cache.p),
            real_score_video: mean(&real_vcache.p),
            fake_score_video: mean(&fake_vcache.p),
        },
        FakeBatch {
            videos: fake_videos,
            frames: fake_frames,
            frame_idx,
            motion: fake_motion,
            content: fake_content,
            cache: g_cache,
        },
    ))
}

/// One generator update against the (frozen) freshly updated critics,
/// re-scoring the critic phase's fake batch.
fn generator_update(state: &mut TrainState, fakes: &FakeBatch) -> Result<f32> {
    let image_cache = state.frame_critic.forward(&fakes.frames, &fakes.content)?;
    let video_cache = state.video_critic.forward(&fakes.videos, &fakes.motion)?;
    let (g_loss, dz_image, dz_video) = generator_loss_logit_grad(
        image_cache.p.as_slice().unwrap(),
        video_cache.p.as_slice().unwrap(),
    );

    let dx_frames = state
        .frame_critic
        .backward_logits(&image_cache, &Array1::from(dz_image), true)
        .expect("need_dx");
    let dx_videos = state
        .video_critic
        .backward_logits(&video_cache, &Array1::from(dz_video), true)
        .expect("need_dx");

    let t = state.config.frames;
    let mut d_frames = videos_grad_to_frames(&dx_videos);
    for (i, &ti) in fakes.frame_idx.iter().enumerate() {
        let mut row = d_frames.slice_mut(s![i * t + ti, .., .., ..]);
        row += &dx_frames.slice(s![i, .., .., ..]);
    }

    state.generator.zero_grads();
    state.generator.backward_frames(&fakes.cache, &d_frames);
    let TrainState { generator, opt_g, .. } = state;
    opt_g.step(|f| generator.visit_params(f));
    Ok(g_loss)
}

/// `d_steps_per_g_step` critic updates, then one generator update.
pub fn train_step(state: &mut TrainState, real_batch: &[(&VideoClip, LabelPair)]) -> Result<LossReport> {
    if real_batch.is_empty() {
        return Err(Error::invalid("training batch is empty"));
    }
    let m = state.config.motion_classes;
    let c = state.config.content_classes;
    for (_, labels) in real_batch {
        labels.validate(m, c)?;
        if state.split.is_held_out(*labels) {
            return Err(Error::invalid(format!(
                "batch contains held-out combination (motion {}, content {})",
                labels.motion, labels.content
            )));
        }
    }
    let real_videos = stack_real_videos(real_batch, &state.config)?;
    let real_motion: Vec<usize> = real_batch.iter().map(|(_, l)| l.motion).collect();
    let real_content: Vec<usize> = real_batch.iter().map(|(_, l)| l.content).collect();

    let mut last = None;
    for _ in 0..state.config.d_steps_per_g_step {
        let (p, fakes) = critic_update(state, &real_videos, &real_motion, &real_content)?;
        if !p.d_loss_image.is_finite() || !p.d_loss_video.is_finite() {
            return Err(Error::NonFinite {
                step: state.step,
                details: format!(
                    "critic losses image={} video={}",
                    p.d_loss_image, p.d_loss_video
                ),
            });
        }
        last = Some((p, fakes));
    }
    let (phase, fakes) = last.expect("d_steps_per_g_step >= 1 by config validation");

    let g_loss = generator_update(state, &fakes)?;
    if !g_loss.is_finite() {
        return Err(Error::NonFinite {
            step: state.step,
            details: format!("generator loss {g_loss}"),
        });
    }

    let report = LossReport {
        step: state.step + 1,
        d_loss_image: phase.d_loss_image,
        d_loss_video: phase.d_loss_video,
        g_loss,
        real_score_image: phase.real_score_image,
        fake_score_image: phase.fake_score_image,
        real_score_video: phase.real_score_video,
        fake_score_video: phase.fake_score_video,
    };
    if !report.is_finite() {
        return Err(Error::NonFinite {
            step: state.step,
            details: format!("score means {report:?}"),
        });
    }
    state.step += 1;
    Ok(report)
}

/// Runs training until `state.step` reaches `target_steps`, invoking the
/// callback after every step. Resuming a checkpointed state continues toward
/// the same target. A state already at or past the target returns untouched.
pub fn train_loop(
    state: &mut TrainState,
    corpus: &LabeledCorpus,
    target_steps: u64,
    mut on_step: impl FnMut(&TrainState, &LossReport) -> Result<()>,
) -> Result<()> {
    if state.step >= target_steps {
        return Ok(());
    }
    corpus.validate()?;
    if corpus.is_empty() {
        return Err(Error::data("training corpus is empty"));
    }
    for (i, (_, labels)) in corpus.clips.iter().enumerate() {
        if state.split.is_held_out(*labels) {
            return Err(Error::invalid(format!(
                "corpus clip {i} carries a held-out combination; apply the split first"
            )));
        }
    }
    while state.step < target_steps {
        let b = state.config.batch_size;
        let idx: Vec<usize> = (0..b)
            .map(|_| state.rng.data.random_range(0..corpus.len()))
            .collect();
        let batch: Vec<(&VideoClip, LabelPair)> = idx
            .iter()
            .map(|&i| (&corpus.clips[i].0, corpus.clips[i].1))
            .collect();
        let report = train_step(state, &batch)?;
        on_step(state, &report)?;
    }
    Ok(())
}
