//! Class-conditional video generation with a motion/content decomposition.
//!
//! The crate provides the full pipeline: a synthetic labeled video corpus,
//! the conditional generator (content code + recurrent motion path), a pair
//! of spectrally normalized critics (per-frame and per-video), adversarial
//! training with checkpointing, and an evaluation stack (distribution
//! distance on video features, motion/content/joint classifiers, class
//! balance reports) including a zero-shot protocol that holds out one
//! motion class per content class during training.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod latent_dynamics;
pub mod discriminators;
pub mod error;
pub mod evaluation;
pub mod generator;
pub mod nn;
pub mod rng;
pub mod training;
pub mod types;

pub use config::{Config, DatasetProfile, ModelConfig};
pub use datasets::{build_split, generate_synthetic, LabeledCorpus, SplitSpec};
pub use error::{Error, Result};
pub use evaluation::{
    classification_report, compute_fid, frechet_distance, load_suite, save_suite,
    train_classifiers, ClassReport, ClassifierSuite, ClassifierTrainConfig, FeatureExtractor,
    GaussianStats, SuiteShape,
};
pub use training::{train_loop, LossReport, TrainState};
pub use types::{one_hot, LabelPair, LatentSeed, VideoClip};
