//! Run configuration: the key-value config file, dataset profiles, and the
//! resolved model hyperparameters.
//!
//! The config file is TOML with a flat key set; every key has a default, so an
//! empty file is a valid desk-scale configuration. See the README for the full
//! key reference.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Hyperparameters shared by every network and the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Frames per clip (T).
    pub frames: usize,
    /// Motion class count (M).
    pub motion_classes: usize,
    /// Content class count (C).
    pub content_classes: usize,
    /// Content noise dimension.
    pub d_c: usize,
    /// Motion noise / motion code dimension.
    pub d_m: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub batch_size: usize,
    pub d_steps_per_g_step: usize,
    /// Channel width of the frame decoder at its deepest block.
    pub g_base_channels: usize,
    /// Channel width of the frame critic's first block.
    pub d_image_channels: usize,
    /// Channel width of the video critic's first block.
    pub d_video_channels: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("frames", self.frames),
            ("motion_classes", self.motion_classes),
            ("content_classes", self.content_classes),
            ("d_c", self.d_c),
            ("d_m", self.d_m),
            ("channels", self.channels),
            ("height", self.height),
            ("width", self.width),
            ("batch_size", self.batch_size),
            ("d_steps_per_g_step", self.d_steps_per_g_step),
            ("g_base_channels", self.g_base_channels),
            ("d_image_channels", self.d_image_channels),
            ("d_video_channels", self.d_video_channels),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// The default desk-scale setup (synthetic 32x32 profile), mostly for tests.
    pub fn synthetic_defaults() -> Self {
        let cfg = Config::default();
        let profile = cfg.profile().expect("default profile resolves");
        cfg.model_config(&profile).expect("defaults validate")
    }
}

/// A named dataset: image geometry plus the class-name lists whose lengths
/// define M and C.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProfile {
    pub name: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub motion_class_names: Vec<String>,
    pub content_class_names: Vec<String>,
}

impl DatasetProfile {
    /// Bundled 32x32 moving-sprites dataset: 4 motions x 4 contents, 16 frames.
    pub fn synthetic() -> Self {
        DatasetProfile {
            name: "synthetic".into(),
            channels: 3,
            height: 32,
            width: 32,
            motion_class_names: vec!["up".into(), "down".into(), "left".into(), "right".into()],
            content_class_names: vec![
                "red-square".into(),
                "green-circle".into(),
                "blue-triangle".into(),
                "yellow-cross".into(),
            ],
        }
    }

    /// 64x64 action-video layout. The four in-place action class names are a
    /// documented default and can be overridden in the config file.
    pub fn weizmann() -> Self {
        DatasetProfile {
            name: "weizmann".into(),
            channels: 3,
            height: 64,
            width: 64,
            motion_class_names: vec!["jack".into(), "pjump".into(), "wave1".into(), "wave2".into()],
            content_class_names: (1..=9).map(|i| format!("person-{i}")).collect(),
        }
    }

    /// 96x96 facial-expression layout: four expressions, nine people by default.
    pub fn mug() -> Self {
        DatasetProfile {
            name: "mug".into(),
            channels: 3,
            height: 96,
            width: 96,
            motion_class_names: vec![
                "anger".into(),
                "happiness".into(),
                "sadness".into(),
                "surprise".into(),
            ],
            content_class_names: (1..=9).map(|i| format!("person-{i}")).collect(),
        }
    }

    /// An ad-hoc profile, e.g. for tests or externally prepared corpora.
    pub fn custom(
        name: &str,
        channels: usize,
        height: usize,
        width: usize,
        motion_class_names: Vec<String>,
        content_class_names: Vec<String>,
    ) -> Self {
        DatasetProfile {
            name: name.into(),
            channels,
            height,
            width,
            motion_class_names,
            content_class_names,
        }
    }

    pub fn motion_classes(&self) -> usize {
        self.motion_class_names.len()
    }

    pub fn content_classes(&self) -> usize {
        self.content_class_names.len()
    }

    pub fn motion_index(&self, name: &str) -> Option<usize> {
        self.motion_class_names.iter().position(|n| n == name)
    }

    pub fn content_index(&self, name: &str) -> Option<usize> {
        self.content_class_names.iter().position(|n| n == name)
    }
}

fn d_frames() -> usize {
    16
}
fn d_latent() -> usize {
    30
}
fn d_lr() -> f32 {
    2e-4
}
fn d_beta1() -> f32 {
    0.5
}
fn d_beta2() -> f32 {
    0.999
}
fn d_batch() -> usize {
    32
}
fn d_one() -> usize {
    1
}
fn d_steps() -> u64 {
    3000
}
fn d_gch() -> usize {
    64
}
fn d_dich() -> usize {
    32
}
fn d_dvch() -> usize {
    16
}
fn d_ckpt_every() -> u64 {
    500
}
fn d_sample_every() -> u64 {
    500
}
fn d_log_every() -> u64 {
    25
}
fn d_profile() -> String {
    "synthetic".into()
}
fn d_cls_lr() -> f32 {
    1e-3
}
fn d_cls_epochs() -> usize {
    40
}
fn d_cls_batch() -> usize {
    32
}
fn d_cls_val() -> f64 {
    0.125
}
fn d_cls_target() -> f64 {
    0.99
}
fn d_cls_ch() -> usize {
    16
}
fn d_fid_samples() -> usize {
    100
}

/// The flat config file. Every key has a default; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub profile: String,
    pub frames: usize,
    pub d_c: usize,
    pub d_m: usize,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub batch_size: usize,
    pub d_steps_per_g_step: usize,
    /// Training step budget for `train`.
    pub steps: u64,
    pub g_base_channels: usize,
    pub d_image_channels: usize,
    pub d_video_channels: usize,
    pub checkpoint_every: u64,
    pub sample_every: u64,
    pub log_every: u64,
    /// Overrides the profile's motion class names (not valid for `synthetic`).
    pub motion_class_names: Option<Vec<String>>,
    /// Overrides the profile's content class names (not valid for `synthetic`).
    pub content_class_names: Option<Vec<String>>,
    pub classifier_learning_rate: f32,
    pub classifier_epochs: usize,
    pub classifier_batch_size: usize,
    pub classifier_val_fraction: f64,
    pub classifier_target_accuracy: f64,
    pub classifier_base_channels: usize,
    /// Generated-video count for FID, and the default `eval` sample count.
    pub fid_samples: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            profile: d_profile(),
            frames: d_frames(),
            d_c: d_latent(),
            d_m: d_latent(),
            learning_rate: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            batch_size: d_batch(),
            d_steps_per_g_step: d_one(),
            steps: d_steps(),
            g_base_channels: d_gch(),
            d_image_channels: d_dich(),
            d_video_channels: d_dvch(),
            checkpoint_every: d_ckpt_every(),
            sample_every: d_sample_every(),
            log_every: d_log_every(),
            motion_class_names: None,
            content_class_names: None,
            classifier_learning_rate: d_cls_lr(),
            classifier_epochs: d_cls_epochs(),
            classifier_batch_size: d_cls_batch(),
            classifier_val_fraction: d_cls_val(),
            classifier_target_accuracy: d_cls_target(),
            classifier_base_channels: d_cls_ch(),
            fid_samples: d_fid_samples(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Resolves the named profile, applying class-name overrides.
    pub fn profile(&self) -> Result<DatasetProfile> {
        let mut profile = match self.profile.as_str() {
            "synthetic" => DatasetProfile::synthetic(),
            "weizmann" => DatasetProfile::weizmann(),
            "mug" => DatasetProfile::mug(),
            other => {
                return Err(Error::Config(format!(
                    "unknown profile '{other}' (expected synthetic, weizmann, or mug)"
                )))
            }
        };
        if self.motion_class_names.is_some() || self.content_class_names.is_some() {
            if profile.name == "synthetic" {
                return Err(Error::Config(
                    "the synthetic profile has fixed class names".into(),
                ));
            }
            if let Some(names) = &self.motion_class_names {
                if names.len() < 2 {
                    return Err(Error::Config("need at least 2 motion classes".into()));
                }
                profile.motion_class_names = names.clone();
            }
            if let Some(names) = &self.content_class_names {
                if names.is_empty() {
                    return Err(Error::Config("need at least 1 content class".into()));
                }
                profile.content_class_names = names.clone();
            }
        }
        Ok(profile)
    }

    /// Combines the file's hyperparameters with the profile's geometry.
    pub fn model_config(&self, profile: &DatasetProfile) -> Result<ModelConfig> {
        let mc = ModelConfig {
            frames: self.frames,
            motion_classes: profile.motion_classes(),
            content_classes: profile.content_classes(),
            d_c: self.d_c,
            d_m: self.d_m,
            channels: profile.channels,
            height: profile.height,
            width: profile.width,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            batch_size: self.batch_size,
            d_steps_per_g_step: self.d_steps_per_g_step,
            g_base_channels: self.g_base_channels,
            d_image_channels: self.d_image_channels,
            d_video_channels: self.d_video_channels,
        };
        mc.validate()?;
        Ok(mc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default_config() {
        let cfg = Config::from_toml("").unwrap();
        assert_eq!(cfg, Config::default());
        assert_eq!(cfg.frames, 16);
        assert_eq!(cfg.d_c, 30);
        assert_eq!(cfg.d_m, 30);
        assert_eq!(cfg.learning_rate, 2e-4);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.fid_samples, 100);
    }

    #[test]
    fn roundtrip_through_toml() {
        let mut cfg = Config::default();
        cfg.steps = 123;
        cfg.profile = "weizmann".into();
        cfg.motion_class_names = Some(vec!["a".into(), "b".into()]);
        let text = cfg.to_toml();
        let back = Config::from_toml(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::from_toml("no_such_key = 3").is_err());
    }

    #[test]
    fn profile_shapes() {
        let w = DatasetProfile::weizmann();
        assert_eq!((w.height, w.width), (64, 64));
        assert_eq!(w.motion_classes(), 4);
        assert_eq!(w.content_classes(), 9);
        let m = DatasetProfile::mug();
        assert_eq!((m.height, m.width), (96, 96));
        let s = DatasetProfile::synthetic();
        assert_eq!((s.height, s.width), (32, 32));
        assert_eq!(s.motion_classes(), 4);
        assert_eq!(s.content_classes(), 4);
    }

    #[test]
    fn synthetic_profile_rejects_name_overrides() {
        let mut cfg = Config::default();
        cfg.motion_class_names = Some(vec!["x".into(), "y".into()]);
        assert!(cfg.profile().is_err());
    }

    #[test]
    fn model_config_validates() {
        let cfg = Config::default();
        let profile = cfg.profile().unwrap();
        let mc = cfg.model_config(&profile).unwrap();
        assert_eq!(mc.motion_classes, 4);
        assert_eq!(mc.content_classes, 4);
        assert_eq!((mc.height, mc.width), (32, 32));
        let mut bad = cfg.clone();
        bad.learning_rate = 0.0;
        assert!(bad.model_config(&profile).is_err());
    }
}
