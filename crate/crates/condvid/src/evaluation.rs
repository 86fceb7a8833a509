//! Evaluation stack: feature-space Fréchet distance over whole videos and a
//! supervised classifier suite (motion head, content head, joint head) used
//! both for label accuracy reports and as the video feature extractor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{s, Array1, Array2, Array5};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_bytes, read_blob, read_u32, write_bytes, write_blob, write_u32, Blob};
use crate::datasets::{LabeledCorpus, SplitSpec};
use crate::discriminators::spatial_plan;
use crate::error::{Error, Result};
use crate::nn::batchnorm::{BatchNorm, BnCache};
use crate::nn::conv3d::{Conv3d, Conv3dCfg};
use crate::nn::linear::{Linear, LinearCfg};
use crate::nn::{relu_backward_inplace, relu_inplace, zero_grads, Adam, ParamVisitor, StateVisitor};
use crate::rng::seed_stream;
use crate::types::{LabelPair, VideoClip};

// ---------------------------------------------------------------------------
// Gaussian feature statistics and the Fréchet distance between them.
// ---------------------------------------------------------------------------

/// Sample mean and unbiased covariance of a feature set.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl GaussianStats {
    /// Fits mean and covariance to feature rows. Needs at least two rows for
    /// the n-1 denominator.
    pub fn from_features(features: &Array2<f64>) -> Result<Self> {
        let (n, d) = features.dim();
        if n < 2 {
            return Err(Error::invalid(format!(
                "covariance needs at least 2 feature rows, got {n}"
            )));
        }
        let mean = features.mean_axis(ndarray::Axis(0)).expect("n >= 2");
        let mut centered = features.clone();
        for mut row in centered.rows_mut() {
            row -= &mean;
        }
        let mut cov = centered.t().dot(&centered) / (n as f64 - 1.0);
        // Exact symmetry keeps the eigendecomposition in frechet_distance honest.
        for i in 0..d {
            for j in (i + 1)..d {
                let v = 0.5 * (cov[[i, j]] + cov[[j, i]]);
                cov[[i, j]] = v;
                cov[[j, i]] = v;
            }
        }
        Ok(GaussianStats { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn to_dmatrix(a: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[[i, j]])
}

/// Symmetric PSD square root via eigendecomposition, clamping tiny negative
/// eigenvalues that appear from floating point noise.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(roots));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Squared Fréchet distance between two Gaussians:
/// `|mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2)`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "feature dimensions differ: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(b.mean.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();

    let sa = to_dmatrix(&a.cov);
    let sb = to_dmatrix(&b.cov);
    let root_a = psd_sqrt(&sa);
    let prod = &root_a * &sb * &root_a;

    // The product is symmetric PSD in exact arithmetic; a large defect means
    // the inputs were not valid covariances.
    let scale = 1.0 + prod.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let defect = (&prod - prod.transpose()).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if defect > 1e-6 * scale {
        return Err(Error::invalid(format!(
            "covariance product is not symmetric (defect {defect:.3e}); inputs are not valid covariance matrices"
        )));
    }
    let sym = (&prod + prod.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let trace_sqrt: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();

    let dist = mean_term + sa.trace() + sb.trace() - 2.0 * trace_sqrt;
    Ok(dist.max(0.0))
}

// ---------------------------------------------------------------------------
// Feature extraction and FID over clip sets.
// ---------------------------------------------------------------------------

/// Maps a batch of videos `[n, ch, t, h, w]` to one feature row per video.
pub trait FeatureExtractor {
    fn feature_dim(&self) -> usize;
    fn features(&self, videos: &Array5<f32>) -> Array2<f64>;
}

/// Stacks clips into `[n, ch, t, h, w]`, requiring uniform shapes.
pub fn stack_clips(clips: &[&VideoClip]) -> Result<Array5<f32>> {
    let first = clips
        .first()
        .ok_or_else(|| Error::invalid("cannot stack an empty clip list"))?;
    let (t, c, h, w) = first.frames.dim();
    let mut out = Array5::<f32>::zeros((clips.len(), c, t, h, w));
    for (i, clip) in clips.iter().enumerate() {
        if clip.frames.dim() != (t, c, h, w) {
            return Err(Error::shape(format!(
                "clip {i} has shape {:?}, expected {:?}",
                clip.frames.dim(),
                (t, c, h, w)
            )));
        }
        for tt in 0..t {
            for ch in 0..c {
                out.slice_mut(s![i, ch, tt, .., ..])
                    .assign(&clip.frames.slice(s![tt, ch, .., ..]));
            }
        }
    }
    Ok(out)
}

/// Extracts features for a clip list in fixed-size batches.
pub fn video_features(extractor: &dyn FeatureExtractor, clips: &[&VideoClip]) -> Result<Array2<f64>> {
    let mut rows = Array2::<f64>::zeros((clips.len(), extractor.feature_dim()));
    for (chunk_idx, chunk) in clips.chunks(16).enumerate() {
        let videos = stack_clips(chunk)?;
        let feats = extractor.features(&videos);
        let base = chunk_idx * 16;
        rows.slice_mut(s![base..base + chunk.len(), ..]).assign(&feats);
    }
    Ok(rows)
}

/// Fréchet distance between real and generated clips in the extractor's
/// feature space. Both sides need at least two clips.
pub fn compute_fid(
    extractor: &dyn FeatureExtractor,
    real: &[&VideoClip],
    generated: &[&VideoClip],
) -> Result<f64> {
    if real.len() < 2 || generated.len() < 2 {
        return Err(Error::invalid(format!(
            "fid needs at least 2 clips per side, got {} real and {} generated",
            real.len(),
            generated.len()
        )));
    }
    let stats_real = GaussianStats::from_features(&video_features(extractor, real)?)?;
    let stats_gen = GaussianStats::from_features(&video_features(extractor, generated)?)?;
    frechet_distance(&stats_real, &stats_gen)
}

// ---------------------------------------------------------------------------
// Classifier suite: shared 3-D conv trunk, three linear heads.
// ---------------------------------------------------------------------------

/// Input and label geometry of a classifier suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteShape {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub motion_classes: usize,
    pub content_classes: usize,
    pub base_channels: usize,
}

#[derive(Debug)]
struct TrunkStage {
    conv: Conv3d,
    bn: BatchNorm,
}

/// Motion, content, and joint classifiers over a shared conv trunk. The
/// global-average-pooled trunk output doubles as the video feature space for
/// FID, so the same weights drive both label accuracy and distance metrics.
#[derive(Debug)]
pub struct ClassifierSuite {
    shape: SuiteShape,
    stages: Vec<TrunkStage>,
    head_motion: Linear,
    head_content: Linear,
    head_joint: Linear,
    feat_dim: usize,
}

struct TrunkCache {
    /// Input to each stage's conv.
    inputs: Vec<Array5<f32>>,
    bn: Vec<BnCache>,
    /// Post-activation output of each stage.
    acts: Vec<Array5<f32>>,
}

const HEAD_INIT_STD: f32 = 0.02;
const CONV_INIT_STD: f32 = 0.05;

impl ClassifierSuite {
    /// Builds the trunk with the same downsampling plan as the video critic:
    /// spatial halving until the side is at most 6, temporal kernels shrinking
    /// with the remaining frame count, channel width doubling per stage.
    pub fn new(shape: SuiteShape, rng: &mut ChaCha20Rng) -> Result<Self> {
        if shape.motion_classes == 0 || shape.content_classes == 0 {
            return Err(Error::invalid("class counts must be positive"));
        }
        if shape.frames == 0 || shape.channels == 0 {
            return Err(Error::invalid("clip shape must be non-degenerate"));
        }
        if shape.base_channels == 0 {
            return Err(Error::invalid("base_channels must be positive"));
        }
        let (_side, blocks) = spatial_plan(shape.height, shape.width)?;

        let mut stages = Vec::with_capacity(blocks);
        let mut cin = shape.channels;
        let mut cout = shape.base_channels;
        let mut t = shape.frames;
        for _ in 0..blocks {
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
            stages.push(TrunkStage {
                conv: Conv3d::new(cfg, rng, CONV_INIT_STD),
                bn: BatchNorm::new(cout),
            });
            cin = cout;
            cout *= 2;
        }
        let feat_dim = cin;
        let joint = shape.motion_classes * shape.content_classes;
        let head = |d_out: usize, rng: &mut ChaCha20Rng| {
            Linear::new(LinearCfg { d_in: feat_dim, d_out }, rng, HEAD_INIT_STD)
        };
        Ok(ClassifierSuite {
            head_motion: head(shape.motion_classes, rng),
            head_content: head(shape.content_classes, rng),
            head_joint: head(joint, rng),
            shape,
            stages,
            feat_dim,
        })
    }

    pub fn shape(&self) -> &SuiteShape {
        &self.shape
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    /// Joint-head label index for a pair.
    pub fn joint_index(&self, pair: LabelPair) -> usize {
        pair.motion * self.shape.content_classes + pair.content
    }

    fn check_input(&self, videos: &Array5<f32>) -> Result<()> {
        let (_, c, t, h, w) = videos.dim();
        let exp = (self.shape.channels, self.shape.frames, self.shape.height, self.shape.width);
        if (c, t, h, w) != exp {
            return Err(Error::shape(format!(
                "classifier input [*, {c}, {t}, {h}, {w}] does not match suite shape {exp:?}"
            )));
        }
        Ok(())
    }

    fn gap(act: &Array5<f32>) -> Array2<f32> {
        let (n, c, t, h, w) = act.dim();
        let s = (t * h * w) as f32;
        let mut feat = Array2::<f32>::zeros((n, c));
        for i in 0..n {
            for ch in 0..c {
                feat[[i, ch]] = act.slice(s![i, ch, .., .., ..]).sum() / s;
            }
        }
        feat
    }

    fn trunk_train(&mut self, videos: &Array5<f32>) -> (Array2<f32>, TrunkCache) {
        let n = videos.dim().0;
        let mut cache = TrunkCache { inputs: Vec::new(), bn: Vec::new(), acts: Vec::new() };
        let mut x = videos.clone();
        for stage in &mut self.stages {
            let y = stage.conv.forward(&x);
            let (_, c, t, h, w) = y.dim();
            let (bn_out, bn_cache) =
                stage.bn.forward_train(y.as_slice().expect("standard layout"), n, t * h * w);
            let mut a = Array5::from_shape_vec((n, c, t, h, w), bn_out).expect("length preserved");
            relu_inplace(a.as_slice_mut().expect("standard layout"));
            cache.inputs.push(x);
            cache.bn.push(bn_cache);
            cache.acts.push(a.clone());
            x = a;
        }
        (Self::gap(&x), cache)
    }

    fn trunk_eval(&self, videos: &Array5<f32>) -> Array2<f32> {
        let n = videos.dim().0;
        let mut x = videos.clone();
        for stage in &self.stages {
            let y = stage.conv.forward(&x);
            let (_, c, t, h, w) = y.dim();
            let bn_out = stage.bn.forward_eval(y.as_slice().expect("standard layout"), n, t * h * w);
            let mut a = Array5::from_shape_vec((n, c, t, h, w), bn_out).expect("length preserved");
            relu_inplace(a.as_slice_mut().expect("standard layout"));
            x = a;
        }
        Self::gap(&x)
    }

    /// Backpropagates a feature gradient through GAP and the trunk,
    /// accumulating parameter gradients.
    fn trunk_backward(&mut self, cache: &TrunkCache, dfeat: &Array2<f32>) {
        let last = cache.acts.last().expect("at least one stage");
        let (n, c, t, h, w) = last.dim();
        let s = (t * h * w) as f32;
        let mut dx = Array5::<f32>::zeros((n, c, t, h, w));
        for i in 0..n {
            for ch in 0..c {
                dx.slice_mut(s![i, ch, .., .., ..]).fill(dfeat[[i, ch]] / s);
            }
        }
        for (idx, stage) in self.stages.iter_mut().enumerate().rev() {
            let act = &cache.acts[idx];
            let dims = act.dim();
            let mut da = dx.into_raw_vec_and_offset().0;
            relu_backward_inplace(&mut da, act.as_slice().expect("standard layout"));
            let (nn, _, tt, hh, ww) = dims;
            let dy_vec = stage.bn.backward(&da, &cache.bn[idx], nn, tt * hh * ww);
            let dy = Array5::from_shape_vec(dims, dy_vec).expect("length preserved");
            let need_dx = idx > 0;
            match stage.conv.backward(&cache.inputs[idx], &dy, need_dx) {
                Some(d) => dx = d,
                None => break,
            }
        }
    }

    /// Per-head probabilities for a single clip: (motion, content, joint).
    pub fn predict_proba(&self, clip: &VideoClip) -> Result<(Vec<f32>, Vec<f32>, Vec<f32>)> {
        let videos = stack_clips(&[clip])?;
        self.check_input(&videos)?;
        let feat = self.trunk_eval(&videos);
        let pm = softmax_rows(&self.head_motion.forward(&feat));
        let pc = softmax_rows(&self.head_content.forward(&feat));
        let pd = softmax_rows(&self.head_joint.forward(&feat));
        Ok((pm.row(0).to_vec(), pc.row(0).to_vec(), pd.row(0).to_vec()))
    }

    /// Argmax labels for a batch: (motion, content, joint) per clip.
    pub fn predict_batch(&self, videos: &Array5<f32>) -> Result<Vec<(usize, usize, usize)>> {
        self.check_input(videos)?;
        let feat = self.trunk_eval(videos);
        let lm = self.head_motion.forward(&feat);
        let lc = self.head_content.forward(&feat);
        let ld = self.head_joint.forward(&feat);
        Ok((0..videos.dim().0)
            .map(|i| (argmax(lm.row(i)), argmax(lc.row(i)), argmax(ld.row(i))))
            .collect())
    }

    pub fn visit_params(&mut self, f: &mut ParamVisitor) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage.conv.visit_params(&format!("cls.trunk{i}.conv"), f);
            stage.bn.visit_params(&format!("cls.trunk{i}.bn"), f);
        }
        self.head_motion.visit_params("cls.head_m", f);
        self.head_content.visit_params("cls.head_c", f);
        self.head_joint.visit_params("cls.head_d", f);
    }

    pub fn visit_state(&mut self, f: &mut StateVisitor) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage.bn.visit_state(&format!("cls.trunk{i}.bn"), f);
        }
    }

    pub fn zero_grads(&mut self) {
        zero_grads(|f| self.visit_params(f));
    }
}

impl FeatureExtractor for ClassifierSuite {
    fn feature_dim(&self) -> usize {
        self.feat_dim
    }

    fn features(&self, videos: &Array5<f32>) -> Array2<f64> {
        let feat = self.trunk_eval(videos);
        feat.mapv(|v| v as f64)
    }
}

fn argmax(row: ndarray::ArrayView1<f32>) -> usize {
    let mut best = 0;
    let mut best_v = f32::NEG_INFINITY;
    for (i, &v) in row.iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

fn softmax_rows(logits: &Array2<f32>) -> Array2<f32> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    p
}

/// Mean cross-entropy and its logit gradient `(softmax - onehot) / n`.
fn softmax_ce(logits: &Array2<f32>, targets: &[usize]) -> (f32, Array2<f32>) {
    let (n, _) = logits.dim();
    assert_eq!(n, targets.len(), "one target per row");
    let mut p = softmax_rows(logits);
    let mut loss = 0.0f32;
    let inv = 1.0 / n as f32;
    for (i, &t) in targets.iter().enumerate() {
        loss -= p[[i, t]].max(1e-12).ln();
        p[[i, t]] -= 1.0;
    }
    (loss * inv, p * inv)
}

// ---------------------------------------------------------------------------
// Classifier training.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ClassifierTrainConfig {
    pub base_channels: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub max_epochs: usize,
    /// Minimum over the three heads' validation accuracy that counts as done.
    pub target_accuracy: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            base_channels: 16,
            batch_size: 16,
            learning_rate: 1e-3,
            max_epochs: 60,
            target_accuracy: 0.99,
            val_fraction: 0.2,
            seed: 7,
        }
    }
}

impl ClassifierTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.base_channels == 0 {
            return Err(Error::invalid("batch_size, max_epochs, base_channels must be positive"));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::invalid("val_fraction must lie in (0, 1)"));
        }
        if !(self.target_accuracy > 0.0 && self.target_accuracy <= 1.0) {
            return Err(Error::invalid("target_accuracy must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Validation accuracy of the three heads, worst head first.
fn evaluate_suite(
    suite: &ClassifierSuite,
    corpus: &LabeledCorpus,
    indices: &[usize],
    batch: usize,
) -> Result<f64> {
    let c_classes = suite.shape.content_classes;
    let mut hits = [0usize; 3];
    for chunk in indices.chunks(batch) {
        let clips: Vec<&VideoClip> = chunk.iter().map(|&i| &corpus.clips[i].0).collect();
        let videos = stack_clips(&clips)?;
        let preds = suite.predict_batch(&videos)?;
        for (&i, (pm, pc, pd)) in chunk.iter().zip(preds) {
            let pair = corpus.clips[i].1;
            hits[0] += usize::from(pm == pair.motion);
            hits[1] += usize::from(pc == pair.content);
            hits[2] += usize::from(pd == pair.motion * c_classes + pair.content);
        }
    }
    let n = indices.len() as f64;
    Ok(hits.iter().map(|&h| h as f64 / n).fold(f64::INFINITY, f64::min))
}

/// Trains motion, content, and joint classifiers on a labeled corpus until the
/// worst head reaches `target_accuracy` on a stratified validation split.
/// Returns the suite and the achieved validation accuracy; exhausting the
/// epoch budget first is a convergence error.
pub fn train_classifiers(
    corpus: &LabeledCorpus,
    cfg: &ClassifierTrainConfig,
) -> Result<(ClassifierSuite, f64)> {
    cfg.validate()?;
    corpus.validate()?;
    let m_classes = corpus.profile.motion_classes();
    let c_classes = corpus.profile.content_classes();
    let by_pair = corpus.indices_by_pair();
    for m in 0..m_classes {
        for c in 0..c_classes {
            if !by_pair.contains_key(&(m, c)) {
                return Err(Error::invalid(format!(
                    "classifier training requires every combination; missing motion {m}, content {c}"
                )));
            }
        }
    }

    let mut rng = seed_stream(cfg.seed, "classifier/train");
    let mut train_idx = Vec::new();
    let mut val_idx = Vec::new();
    for indices in by_pair.values() {
        let mut idx = indices.clone();
        idx.shuffle(&mut rng);
        let n_val = if idx.len() >= 2 {
            ((cfg.val_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1)
        } else {
            0
        };
        val_idx.extend_from_slice(&idx[..n_val]);
        train_idx.extend_from_slice(&idx[n_val..]);
    }
    if val_idx.is_empty() {
        return Err(Error::invalid(
            "validation split is empty; provide at least two clips for some combination",
        ));
    }

    let (t, ch, h, w) = corpus.clips[0].0.frames.dim();
    let shape = SuiteShape {
        channels: ch,
        frames: t,
        height: h,
        width: w,
        motion_classes: m_classes,
        content_classes: c_classes,
        base_channels: cfg.base_channels,
    };
    let mut suite = ClassifierSuite::new(shape, &mut rng)?;
    let mut opt = Adam::new(cfg.learning_rate, 0.9, 0.999);

    let mut best = 0.0f64;
    for _epoch in 0..cfg.max_epochs {
        train_idx.shuffle(&mut rng);
        for chunk in train_idx.chunks(cfg.batch_size) {
            let clips: Vec<&VideoClip> = chunk.iter().map(|&i| &corpus.clips[i].0).collect();
            let videos = stack_clips(&clips)?;
            let tm: Vec<usize> = chunk.iter().map(|&i| corpus.clips[i].1.motion).collect();
            let tc: Vec<usize> = chunk.iter().map(|&i| corpus.clips[i].1.content).collect();
            let td: Vec<usize> = chunk
                .iter()
                .map(|&i| suite.joint_index(corpus.clips[i].1))
                .collect();

            suite.zero_grads();
            let (feat, cache) = suite.trunk_train(&videos);
            let lm = suite.head_motion.forward(&feat);
            let lc = suite.head_content.forward(&feat);
            let ld = suite.head_joint.forward(&feat);
            let (_, dlm) = softmax_ce(&lm, &tm);
            let (_, dlc) = softmax_ce(&lc, &tc);
            let (_, dld) = softmax_ce(&ld, &td);
            let mut dfeat = suite.head_motion.backward(&feat, &dlm, true).expect("need_dx");
            dfeat += &suite.head_content.backward(&feat, &dlc, true).expect("need_dx");
            dfeat += &suite.head_joint.backward(&feat, &dld, true).expect("need_dx");
            suite.trunk_backward(&cache, &dfeat);
            opt.step(|f| suite.visit_params(f));
        }
        let acc = evaluate_suite(&suite, corpus, &val_idx, cfg.batch_size)?;
        best = best.max(acc);
        if acc >= cfg.target_accuracy {
            return Ok((suite, acc));
        }
    }
    Err(Error::Convergence(format!(
        "classifier validation accuracy reached {best:.4} after {} epochs, target {:.4}",
        cfg.max_epochs, cfg.target_accuracy
    )))
}

// ---------------------------------------------------------------------------
// Classification report.
// ---------------------------------------------------------------------------

/// Label-accuracy and class-balance summary over a set of clips with intended
/// labels. `held_out_cells` marks combinations excluded from GAN training.
#[derive(Debug, Clone, Serialize)]
pub struct ClassReport {
    pub n_clips: usize,
    pub accuracy_motion: f64,
    pub accuracy_content: f64,
    pub accuracy_joint: f64,
    /// Fraction of clips the joint head assigns to each combination, rows are
    /// motion classes, columns content classes. Sums to 1.
    pub predicted_freq: Vec<Vec<f64>>,
    pub held_out_cells: Vec<Vec<bool>>,
    pub n_held_out: usize,
    pub accuracy_motion_held_out: Option<f64>,
    pub accuracy_content_held_out: Option<f64>,
}

impl ClassReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::invalid(format!("report serialization failed: {e}")))
    }

    /// Predicted-frequency matrix as CSV, one row per motion class.
    pub fn freq_csv(&self) -> String {
        let c = self.predicted_freq.first().map_or(0, Vec::len);
        let mut out = String::from("motion");
        for j in 0..c {
            out.push_str(&format!(",content_{j}"));
        }
        out.push('\n');
        for (m, row) in self.predicted_freq.iter().enumerate() {
            out.push_str(&format!("motion_{m}"));
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Scores labeled clips with a trained suite. The intended label of each clip
/// is the conditioning it was generated with (or its dataset label); the split
/// marks which combinations were held out of GAN training.
pub fn classification_report(
    suite: &ClassifierSuite,
    clips: &[(VideoClip, LabelPair)],
    split: Option<&SplitSpec>,
) -> Result<ClassReport> {
    if clips.is_empty() {
        return Err(Error::invalid("report needs at least one clip"));
    }
    let m_classes = suite.shape.motion_classes;
    let c_classes = suite.shape.content_classes;
    if let Some(sp) = split {
        if sp.motion_classes != m_classes || sp.content_classes != c_classes {
            return Err(Error::invalid(format!(
                "split is {}x{} but suite classifies {}x{}",
                sp.motion_classes, sp.content_classes, m_classes, c_classes
            )));
        }
    }
    for (i, (_, pair)) in clips.iter().enumerate() {
        pair.validate(m_classes, c_classes)
            .map_err(|e| Error::invalid(format!("clip {i}: {e}")))?;
    }

    let mut hits = [0usize; 3];
    let mut held_hits = [0usize; 2];
    let mut n_held = 0usize;
    let mut freq = vec![vec![0.0f64; c_classes]; m_classes];
    for batch in clips.chunks(16) {
        let refs: Vec<&VideoClip> = batch.iter().map(|(clip, _)| clip).collect();
        let videos = stack_clips(&refs)?;
        let preds = suite.predict_batch(&videos)?;
        for ((_, pair), (pm, pc, pd)) in batch.iter().zip(preds) {
            let held = split.is_some_and(|sp| sp.is_held_out(*pair));
            let motion_hit = pm == pair.motion;
            let content_hit = pc == pair.content;
            hits[0] += usize::from(motion_hit);
            hits[1] += usize::from(content_hit);
            hits[2] += usize::from(pd == suite.joint_index(*pair));
            if held {
                n_held += 1;
                held_hits[0] += usize::from(motion_hit);
                held_hits[1] += usize::from(content_hit);
            }
            freq[pd / c_classes][pd % c_classes] += 1.0;
        }
    }
    let n = clips.len() as f64;
    for row in &mut freq {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let held_out_cells = (0..m_classes)
        .map(|m| {
            (0..c_classes)
                .map(|c| {
                    split.is_some_and(|sp| sp.is_held_out(LabelPair { motion: m, content: c }))
                })
                .collect()
        })
        .collect();
    let held_acc = |h: usize| (n_held > 0).then(|| h as f64 / n_held as f64);
    Ok(ClassReport {
        n_clips: clips.len(),
        accuracy_motion: hits[0] as f64 / n,
        accuracy_content: hits[1] as f64 / n,
        accuracy_joint: hits[2] as f64 / n,
        predicted_freq: freq,
        held_out_cells,
        n_held_out: n_held,
        accuracy_motion_held_out: held_acc(held_hits[0]),
        accuracy_content_held_out: held_acc(held_hits[1]),
    })
}

// ---------------------------------------------------------------------------
// Suite persistence.
// ---------------------------------------------------------------------------

const SUITE_MAGIC: &[u8; 8] = b"CVIDSUIT";
const SUITE_VERSION: u32 = 1;

fn collect_suite_blobs(suite: &mut ClassifierSuite) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut blobs = Vec::new();
    suite.visit_params(&mut |name: &str, shape: &[usize], value: &mut [f32], _grad: &mut [f32]| {
        blobs.push((name.to_string(), shape.to_vec(), value.to_vec()));
    });
    suite.visit_state(&mut |name: &str, shape: &[usize], value: &mut [f32]| {
        blobs.push((format!("state/{name}"), shape.to_vec(), value.to_vec()));
    });
    blobs
}

/// Writes a trained suite (weights, batch-norm running stats, shape metadata).
pub fn save_suite(suite: &mut ClassifierSuite, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SUITE_MAGIC)?;
    write_u32(&mut w, SUITE_VERSION)?;
    let meta = serde_json::to_vec(&suite.shape)
        .map_err(|e| Error::invalid(format!("suite metadata serialization failed: {e}")))?;
    write_bytes(&mut w, &meta)?;
    let blobs = collect_suite_blobs(suite);
    write_u32(&mut w, blobs.len() as u32)?;
    for (name, shape, data) in &blobs {
        write_blob(&mut w, name, shape, data)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a suite written by `save_suite`, rejecting wrong magic, version, or
/// any missing, extra, or reshaped tensor.
pub fn load_suite(path: &Path) -> Result<ClassifierSuite> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SUITE_MAGIC {
        return Err(Error::Checkpoint("not a classifier suite file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != SUITE_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported suite version {version}, expected {SUITE_VERSION}"
        )));
    }
    let meta = read_bytes(&mut r, "suite metadata")?;
    let shape: SuiteShape = serde_json::from_slice(&meta)
        .map_err(|e| Error::Checkpoint(format!("bad suite metadata: {e}")))?;
    let n_blobs = read_u32(&mut r)? as usize;
    let mut stored: std::collections::BTreeMap<String, Blob> = std::collections::BTreeMap::new();
    for _ in 0..n_blobs {
        let (name, blob) = read_blob(&mut r)?;
        stored.insert(name, blob);
    }

    let mut rng = seed_stream(0, "suite/load");
    let mut suite = ClassifierSuite::new(shape, &mut rng)?;
    let mut problems = Vec::new();
    {
        let mut apply = |name: String, shape: &[usize], value: &mut [f32]| {
            match stored.remove(&name) {
                Some(blob) if blob.shape == shape => value.copy_from_slice(&blob.data),
                Some(blob) => problems.push(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    blob.shape, shape
                )),
                None => problems.push(format!("missing tensor {name}")),
            }
        };
        suite.visit_params(&mut |name: &str, shape: &[usize], value: &mut [f32], _g: &mut [f32]| {
            apply(name.to_string(), shape, value);
        });
        suite.visit_state(&mut |name: &str, shape: &[usize], value: &mut [f32]| {
            apply(format!("state/{name}"), shape, value);
        });
    }
    for name in stored.keys() {
        problems.push(format!("unknown tensor {name}"));
    }
    if !problems.is_empty() {
        return Err(Error::Checkpoint(problems.join("; ")));
    }
    Ok(suite)
}

// ---------------------------------------------------------------------------
