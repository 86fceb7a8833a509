//! Versioned binary checkpoints.
//!
//! A checkpoint restores a training run bit-exactly: parameters, batch-norm
//! running statistics, spectral power-iteration vectors, Adam moments, the
//! step counter, and the positions of every random stream. Writing and
//! re-reading a state, then training one more step, produces the same losses
//! as training without the detour.
//!
//! Layout (all integers little-endian): magic `CVIDCKPT`, format version,
//! step counter, master seed, three optimizer step counts, a TOML snapshot of
//! the model config, the split spec as JSON, three (seed, word position) rng
//! stream states, then named shape-tagged f32 blobs.

use crate::config::ModelConfig;
use crate::datasets::SplitSpec;
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::training::{RngStreams, TrainState};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"CVIDCKPT";
const VERSION: u32 = 1;

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)?;
    Ok(())
}

fn write_f32s<W: Write>(w: &mut W, xs: &[f32]) -> Result<()> {
    write_u64(w, xs.len() as u64)?;
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len<R: Read>(r: &mut R, what: &str) -> Result<usize> {
    let n = read_u64(r)?;
    // a length sanity cap keeps a corrupt header from a giant allocation
    if n > (1 << 33) {
        return Err(Error::Checkpoint(format!("{what} length {n} is implausible")));
    }
    Ok(n as usize)
}

pub(crate) fn read_bytes<R: Read>(r: &mut R, what: &str) -> Result<Vec<u8>> {
    let n = read_len(r, what)?;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_f32s<R: Read>(r: &mut R, what: &str) -> Result<Vec<f32>> {
    let n = read_len(r, what)?;
    let mut b = vec![0u8; n * 4];
    r.read_exact(&mut b)?;
    Ok(b.chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_rng<W: Write>(w: &mut W, rng: &ChaCha20Rng) -> Result<()> {
    w.write_all(&rng.get_seed())?;
    w.write_all(&rng.get_word_pos().to_le_bytes())?;
    Ok(())
}

fn read_rng<R: Read>(r: &mut R) -> Result<ChaCha20Rng> {
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    let mut pos = [0u8; 16];
    r.read_exact(&mut pos)?;
    let mut rng = ChaCha20Rng::from_seed(seed);
    rng.set_word_pos(u128::from_le_bytes(pos));
    Ok(rng)
}

pub(crate) struct Blob {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f32>,
}

pub(crate) fn write_blob<W: Write>(w: &mut W, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    write_bytes(w, name.as_bytes())?;
    write_u64(w, shape.len() as u64)?;
    for &d in shape {
        write_u64(w, d as u64)?;
    }
    write_f32s(w, data)
}

pub(crate) fn read_blob<R: Read>(r: &mut R) -> Result<(String, Blob)> {
    let name = String::from_utf8(read_bytes(r, "blob name")?)
        .map_err(|_| Error::Checkpoint("blob name is not utf-8".into()))?;
    let rank = read_len(r, "blob rank")?;
    if rank > 8 {
        return Err(Error::Checkpoint(format!("blob {name} has rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let data = read_f32s(r, "blob data")?;
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::Checkpoint(format!(
            "blob {name}: shape {shape:?} does not cover {} values",
            data.len()
        )));
    }
    Ok((name, Blob { shape, data }))
}

/// Collects every tensor a state must persist, keyed by a unique name.
fn collect_blobs(state: &mut TrainState) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out: Vec<(String, Vec<usize>, Vec<f32>)> = Vec::new();
    {
        let mut take = |name: &str, shape: &[usize], v: &mut [f32], _g: &mut [f32]| {
            out.push((name.to_string(), shape.to_vec(), v.to_vec()));
        };
        state.generator.visit_params(&mut take);
        state.frame_critic.visit_params("d_i", &mut take);
        state.video_critic.visit_params("d_v", &mut take);
    }
    {
        let mut take = |name: &str, shape: &[usize], v: &mut [f32]| {
            out.push((format!("state/{name}"), shape.to_vec(), v.to_vec()));
        };
        state.generator.visit_state(&mut take);
        state.frame_critic.visit_state("d_i", &mut take);
        state.video_critic.visit_state("d_v", &mut take);
    }
    for (tag, opt) in [
        ("g", &state.opt_g),
        ("d_i", &state.opt_d_image),
        ("d_v", &state.opt_d_video),
    ] {
        let (_, m, v) = opt.snapshot();
        for (i, buf) in m.iter().enumerate() {
            out.push((format!("opt/{tag}/m/{i:04}"), vec![buf.len()], buf.clone()));
        }
        for (i, buf) in v.iter().enumerate() {
            out.push((format!("opt/{tag}/v/{i:04}"), vec![buf.len()], buf.clone()));
        }
    }
    out
}

pub fn write_checkpoint(state: &mut TrainState, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u64(&mut w, state.step)?;
    write_u64(&mut w, state.master_seed)?;
    write_u64(&mut w, state.opt_g.step_count())?;
    write_u64(&mut w, state.opt_d_image.step_count())?;
    write_u64(&mut w, state.opt_d_video.step_count())?;
    let config = toml::to_string(&state.config)
        .map_err(|e| Error::Checkpoint(format!("config snapshot: {e}")))?;
    write_bytes(&mut w, config.as_bytes())?;
    write_bytes(&mut w, state.split.to_json().as_bytes())?;
    write_rng(&mut w, &state.rng.latent)?;
    write_rng(&mut w, &state.rng.labels)?;
    write_rng(&mut w, &state.rng.data)?;
    let blobs = collect_blobs(state);
    write_u64(&mut w, blobs.len() as u64)?;
    for (name, shape, data) in &blobs {
        write_blob(&mut w, name, shape, data)?;
    }
    w.flush()?;
    Ok(())
}

/// Restores Adam moments for one optimizer from its `opt/<tag>/...` blobs.
fn restore_optimizer(
    opt: &mut Adam,
    tag: &str,
    t: u64,
    blobs: &mut BTreeMap<String, Blob>,
) -> Result<()> {
    let mut m = Vec::new();
    let mut v = Vec::new();
    for i in 0.. {
        match blobs.remove(&format!("opt/{tag}/m/{i:04}")) {
            Some(b) => m.push(b.data),
            None => break,
        }
    }
    for i in 0.. {
        match blobs.remove(&format!("opt/{tag}/v/{i:04}")) {
            Some(b) => v.push(b.data),
            None => break,
        }
    }
    if m.len() != v.len() {
        return Err(Error::Checkpoint(format!(
            "optimizer {tag}: {} first moments but {} second moments",
            m.len(),
            v.len()
        )));
    }
    opt.restore(t, m, v);
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<TrainState> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint file",
            path.display()
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (supported: {VERSION})"
        )));
    }
    let step = read_u64(&mut r)?;
    let master_seed = read_u64(&mut r)?;
    let opt_g_t = read_u64(&mut r)?;
    let opt_di_t = read_u64(&mut r)?;
    let opt_dv_t = read_u64(&mut r)?;
    let config_text = String::from_utf8(read_bytes(&mut r, "config")?)
        .map_err(|_| Error::Checkpoint("config snapshot is not utf-8".into()))?;
    let config: ModelConfig = toml::from_str(&config_text)
        .map_err(|e| Error::Checkpoint(format!("config snapshot: {e}")))?;
    let split_text = String::from_utf8(read_bytes(&mut r, "split")?)
        .map_err(|_| Error::Checkpoint("split spec is not utf-8".into()))?;
    let split = SplitSpec::from_json(&split_text)?;
    let latent = read_rng(&mut r)?;
    let labels = read_rng(&mut r)?;
    let data = read_rng(&mut r)?;

    let n_blobs = read_len(&mut r, "blob count")?;
    let mut blobs = BTreeMap::new();
    for _ in 0..n_blobs {
        let (name, blob) = read_blob(&mut r)?;
        if blobs.insert(name.clone(), blob).is_some() {
            return Err(Error::Checkpoint(format!("duplicate blob {name}")));
        }
    }

    let mut state = TrainState::new(&config, &split, master_seed)?;
    state.step = step;
    state.rng = RngStreams { latent, labels, data };

    let mut missing = Vec::new();
    let mut mismatched = Vec::new();
    {
        let mut put = |name: &str, shape: &[usize], v: &mut [f32], _g: &mut [f32]| match blobs
            .remove(name)
        {
            Some(b) if b.shape == shape => v.copy_from_slice(&b.data),
            Some(b) => mismatched.push(format!("{name}: {:?} vs {:?}", b.shape, shape)),
            None => missing.push(name.to_string()),
        };
        state.generator.visit_params(&mut put);
        state.frame_critic.visit_params("d_i", &mut put);
        state.video_critic.visit_params("d_v", &mut put);
    }
    {
        let mut put = |name: &str, shape: &[usize], v: &mut [f32]| {
            match blobs.remove(&format!("state/{name}")) {
                Some(b) if b.shape == shape => v.copy_from_slice(&b.data),
                Some(b) => mismatched.push(format!("state/{name}: {:?} vs {:?}", b.shape, shape)),
                None => missing.push(format!("state/{name}")),
            }
        };
        state.generator.visit_state(&mut put);
        state.frame_critic.visit_state("d_i", &mut put);
        state.video_critic.visit_state("d_v", &mut put);
    }
    if !missing.is_empty() {
        return Err(Error::Checkpoint(format!("missing blobs: {missing:?}")));
    }
    if !mismatched.is_empty() {
        return Err(Error::Checkpoint(format!("shape mismatches: {mismatched:?}")));
    }
    restore_optimizer(&mut state.opt_g, "g", opt_g_t, &mut blobs)?;
    restore_optimizer(&mut state.opt_d_image, "d_i", opt_di_t, &mut blobs)?;
    restore_optimizer(&mut state.opt_d_video, "d_v", opt_dv_t, &mut blobs)?;
    if !blobs.is_empty() {
        let names: Vec<&String> = blobs.keys().collect();
        return Err(Error::Checkpoint(format!("unknown blobs: {names:?}")));
    }

    // the cached normalized weights are derived; rebuild them from the
    // restored raw weights and power-iteration vectors without iterating
    state.frame_critic.normalize(0);
    state.video_critic.normalize(0);
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetProfile;
    use crate::datasets::{build_split, LabeledCorpus};
    use crate::training::{train_loop, train_step, LossReport};
    use crate::types::{LabelPair, VideoClip};
    use ndarray::Array4;
    use rand::Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            frames: 4,
            motion_classes: 2,
            content_classes: 2,
            d_c: 4,
            d_m: 3,
            channels: 3,
            height: 8,
            width: 8,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 2,
            d_steps_per_g_step: 1,
            g_base_channels: 16,
            d_image_channels: 8,
            d_video_channels: 8,
        }
    }

    fn tiny_corpus(config: &ModelConfig, split: &SplitSpec) -> LabeledCorpus {
        let mut rng = crate::rng::seed_stream(77, "test/ckpt-corpus");
        let mut clips = Vec::new();
        for pair in split.training_pairs() {
            for _ in 0..2 {
                let mut frames = Array4::<f32>::zeros((
                    config.frames,
                    config.channels,
                    config.height,
                    config.width,
                ));
                for v in frames.iter_mut() {
                    *v = rng.random_range(-1.0f32..1.0);
                }
                clips.push((VideoClip::from_bounded(frames), pair));
            }
        }
        LabeledCorpus {
            profile: DatasetProfile::custom(
                "tiny",
                3,
                8,
                8,
                vec!["m0".into(), "m1".into()],
                vec!["c0".into(), "c1".into()],
            ),
            frames: config.frames,
            clips,
        }
    }

    fn trained_state(steps: u64) -> (TrainState, LabeledCorpus) {
        let config = tiny_config();
        let split = build_split(2, 2).unwrap();
        let corpus = tiny_corpus(&config, &split);
        let mut state = TrainState::new(&config, &split, 5).unwrap();
        train_loop(&mut state, &corpus, steps, |_, _| Ok(())).unwrap();
        (state, corpus)
    }

    fn all_bits(state: &mut TrainState) -> Vec<(String, Vec<u32>)> {
        collect_blobs(state)
            .into_iter()
            .map(|(n, _, d)| (n, d.iter().map(|x| x.to_bits()).collect()))
            .collect()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (mut state, _) = trained_state(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck").join("step2.ckpt");
        write_checkpoint(&mut state, &path).unwrap();
        let mut back = read_checkpoint(&path).unwrap();
        assert_eq!(back.step, 2);
        assert_eq!(back.master_seed, state.master_seed);
        assert_eq!(back.config, state.config);
        assert_eq!(back.split, state.split);
        assert_eq!(all_bits(&mut state), all_bits(&mut back));
        assert_eq!(state.rng.latent.get_word_pos(), back.rng.latent.get_word_pos());
        assert_eq!(state.rng.labels.get_word_pos(), back.rng.labels.get_word_pos());
        assert_eq!(state.rng.data.get_word_pos(), back.rng.data.get_word_pos());
        assert_eq!(state.opt_g.step_count(), back.opt_g.step_count());
    }

    #[test]
    fn resumed_training_reproduces_the_direct_run() {
        let (mut state, corpus) = trained_state(2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("step2.ckpt");
        write_checkpoint(&mut state, &path).unwrap();

        let mut direct = Vec::new();
        train_loop(&mut state, &corpus, 4, |_, r| {
            direct.push(r.clone());
            Ok(())
        })
        .unwrap();

        let mut resumed_state = read_checkpoint(&path).unwrap();
        let mut resumed = Vec::new();
        train_loop(&mut resumed_state, &corpus, 4, |_, r| {
            resumed.push(r.clone());
            Ok(())
        })
        .unwrap();

        assert_eq!(direct.len(), 2);
        assert_eq!(direct, resumed, "continuation must not depend on the detour");
    }

    #[test]
    fn fresh_state_round_trips_too() {
        let config = tiny_config();
        let split = build_split(2, 2).unwrap();
        let mut state = TrainState::new(&config, &split, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fresh.ckpt");
        write_checkpoint(&mut state, &path).unwrap();
        let mut back = read_checkpoint(&path).unwrap();
        assert_eq!(back.step, 0);
        assert_eq!(all_bits(&mut state), all_bits(&mut back));
    }

    #[test]
    fn eval_outputs_match_after_restore() {
        let (mut state, _) = trained_state(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        write_checkpoint(&mut state, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        let seed = crate::rng::sample_seed(&state.config, LabelPair::new(1, 0), 123).unwrap();
        let a = state.generator.generate_video(&seed).unwrap();
        let b = back.generator.generate_video(&seed).unwrap();
        assert_eq!(a.frames, b.frames, "generation must be identical post-restore");
        let frames = a.frames.slice(ndarray::s![0..1, .., .., ..]).to_owned();
        let frames = frames.permuted_axes([0, 1, 2, 3]);
        let pa = state.frame_critic.score_frames(&frames, &[0]).unwrap();
        let pb = back.frame_critic.score_frames(&frames, &[0]).unwrap();
        assert_eq!(pa, pb, "critic scores must be identical post-restore");
    }

    #[test]
    fn wrong_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxxxxxx").unwrap();
        match read_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("not a checkpoint")),
            other => panic!("expected checkpoint error, got {other:?}"),
        }

        let (mut state, _) = trained_state(1);
        let good = dir.path().join("good.ckpt");
        write_checkpoint(&mut state, &good).unwrap();
        let mut bytes = std::fs::read(&good).unwrap();
        bytes[8] = 99; // version field
        let bumped = dir.path().join("bumped.ckpt");
        std::fs::write(&bumped, &bytes).unwrap();
        match read_checkpoint(&bumped) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_files_are_rejected() {
        let (mut state, _) = trained_state(1);
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.ckpt");
        write_checkpoint(&mut state, &good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(read_checkpoint(&cut).is_err());
    }

    #[test]
    fn loss_report_equality_is_bitwise_for_resume_checks() {
        let r = LossReport {
            step: 1,
            d_loss_image: 0.1,
            d_loss_video: 0.2,
            g_loss: 0.3,
            real_score_image: 0.4,
            fake_score_image: 0.5,
            real_score_video: 0.6,
            fake_score_video: 0.7,
        };
        assert_eq!(r, r.clone());
    }

    #[test]
    fn one_more_step_after_restore_matches_exactly() {
        let (mut state, corpus) = trained_state(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s3.ckpt");
        write_checkpoint(&mut state, &path).unwrap();
        let mut restored = read_checkpoint(&path).unwrap();

        let batch: Vec<(&VideoClip, LabelPair)> =
            corpus.clips.iter().take(2).map(|(c, l)| (c, *l)).collect();
        let a = train_step(&mut state, &batch).unwrap();
        let b = train_step(&mut restored, &batch).unwrap();
        assert_eq!(a, b);
    }
}
