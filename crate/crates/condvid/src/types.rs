//! Shared domain types: clips, label pairs, latent seeds.

use crate::config::{DatasetProfile, ModelConfig};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2, Array4};

/// A T-frame video as a `[T, channels, height, width]` array with values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub frames: Array4<f32>,
}

impl VideoClip {
    /// Wraps a frame array, checking the value-range invariant.
    pub fn new(frames: Array4<f32>) -> Result<Self> {
        if frames.shape()[0] == 0 {
            return Err(Error::invalid("clip must have at least one frame"));
        }
        if frames.iter().any(|v| !v.is_finite() || *v < -1.0 || *v > 1.0) {
            return Err(Error::invalid("clip values must lie in [-1, 1]"));
        }
        Ok(VideoClip { frames })
    }

    /// Wraps without the per-element range scan. The caller guarantees the range
    /// invariant (e.g. output of a tanh layer or of the affine byte decoder).
    pub fn from_bounded(frames: Array4<f32>) -> Self {
        VideoClip { frames }
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    /// Checks frame count and image shape against the configured profile.
    pub fn matches(&self, config: &ModelConfig, profile: &DatasetProfile) -> bool {
        self.frame_count() == config.frames
            && self.channels() == profile.channels
            && self.height() == profile.height
            && self.width() == profile.width
    }
}

/// A (motion class, content class) pair attached to every clip, real or generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub struct LabelPair {
    pub motion: usize,
    pub content: usize,
}

impl LabelPair {
    pub fn new(motion: usize, content: usize) -> Self {
        LabelPair { motion, content }
    }

    /// Both indices must be strictly below the configured class counts.
    pub fn validate(&self, motion_classes: usize, content_classes: usize) -> Result<()> {
        if self.motion >= motion_classes {
            return Err(Error::invalid(format!(
                "motion class {} out of range (M = {})",
                self.motion, motion_classes
            )));
        }
        if self.content >= content_classes {
            return Err(Error::invalid(format!(
                "content class {} out of range (C = {})",
                self.content, content_classes
            )));
        }
        Ok(())
    }
}

/// The noise bundle that deterministically yields one generated video:
/// a per-video content noise vector, per-frame motion noise rows, the intended
/// labels, and the integer seed everything was derived from.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeed {
    pub eps_c: Array1<f32>,
    pub eps_m: Array2<f32>,
    pub labels: LabelPair,
    pub rng_seed: u64,
}

impl LatentSeed {
    pub fn frames(&self) -> usize {
        self.eps_m.nrows()
    }

    pub fn content_noise_dim(&self) -> usize {
        self.eps_c.len()
    }

    pub fn motion_noise_dim(&self) -> usize {
        self.eps_m.ncols()
    }
}

/// Length-`size` vector with 1.0 at `index` and 0.0 elsewhere.
pub fn one_hot(index: usize, size: usize) -> Result<Array1<f32>> {
    if size == 0 {
        return Err(Error::invalid("one_hot: size must be positive"));
    }
    if index >= size {
        return Err(Error::invalid(format!(
            "one_hot: index {index} out of range for size {size}"
        )));
    }
    let mut v = Array1::zeros(size);
    v[index] = 1.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn one_hot_basic() {
        let v = one_hot(2, 4).unwrap();
        assert_eq!(v.to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn one_hot_single_class() {
        let v = one_hot(0, 1).unwrap();
        assert_eq!(v.to_vec(), vec![1.0]);
    }

    #[test]
    fn one_hot_length_sum_argmax() {
        let v = one_hot(3, 9).unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v.sum(), 1.0);
        let argmax = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 3);
    }

    #[test]
    fn one_hot_rejects_out_of_range() {
        assert!(one_hot(4, 4).is_err());
        assert!(one_hot(0, 0).is_err());
    }

    #[test]
    fn label_pair_validation() {
        assert!(LabelPair::new(3, 0).validate(4, 4).is_ok());
        assert!(LabelPair::new(4, 0).validate(4, 4).is_err());
        assert!(LabelPair::new(0, 9).validate(4, 9).is_err());
    }

    #[test]
    fn clip_rejects_out_of_range_values() {
        let mut frames = Array4::zeros((2, 1, 2, 2));
        frames[[0, 0, 0, 0]] = 1.5;
        assert!(VideoClip::new(frames).is_err());
        let ok = Array4::from_elem((2, 1, 2, 2), -1.0);
        assert!(VideoClip::new(ok).is_ok());
    }
}
