//! Labeled video corpora: the bundled synthetic sprite dataset, directory
//! ingestion for externally prepared clips, and the zero-shot holdout split.
//!
//! On-disk layout, shared by the synthetic writer and the ingester:
//! `<root>/<motion-name>/<content-name>/<clip-id>/frame_%04d.png` (8-bit RGB).

use crate::config::DatasetProfile;
use crate::error::{Error, Result};
use crate::rng::seed_stream;
use crate::types::{LabelPair, VideoClip};
use image::imageops::FilterType;
use image::RgbImage;
use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Byte 0 maps to -1.0, byte 255 to 1.0.
pub fn byte_to_unit(b: u8) -> f32 {
    b as f32 * (2.0 / 255.0) - 1.0
}

/// Inverse of `byte_to_unit`, rounding to the nearest byte.
pub fn unit_to_byte(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// In-memory labeled corpus. All clips share one shape.
#[derive(Debug, Clone)]
pub struct LabeledCorpus {
    pub profile: DatasetProfile,
    pub frames: usize,
    pub clips: Vec<(VideoClip, LabelPair)>,
}

impl LabeledCorpus {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.profile.motion_classes();
        let c = self.profile.content_classes();
        let shape = (
            self.frames,
            self.profile.channels,
            self.profile.height,
            self.profile.width,
        );
        for (i, (clip, labels)) in self.clips.iter().enumerate() {
            if clip.frames.dim() != shape {
                return Err(Error::data(format!(
                    "clip {i} has shape {:?}, corpus shape is {:?}",
                    clip.frames.dim(),
                    shape
                )));
            }
            labels.validate(m, c)?;
        }
        Ok(())
    }

    /// Clip indices grouped by (motion, content).
    pub fn indices_by_pair(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (i, (_, l)) in self.clips.iter().enumerate() {
            map.entry((l.motion, l.content)).or_default().push(i);
        }
        map
    }
}

/// Zero-shot holdout: for every content class, one motion class appears only
/// at generation time, never in training data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(rename = "M")]
    pub motion_classes: usize,
    #[serde(rename = "C")]
    pub content_classes: usize,
    /// `removal_map[c]` is the motion class held out for content class `c`.
    pub removal_map: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.motion_classes < 2 {
            return Err(Error::invalid("holdout needs at least 2 motion classes"));
        }
        if self.removal_map.len() != self.content_classes {
            return Err(Error::invalid("removal map must cover every content class"));
        }
        for (c, &m) in self.removal_map.iter().enumerate() {
            if m >= self.motion_classes {
                return Err(Error::invalid(format!(
                    "content {c} removes motion {m}, out of range"
                )));
            }
        }
        // every motion class must survive somewhere, or it would be
        // globally unseen and the conditional generator could never learn it
        for m in 0..self.motion_classes {
            let retained = (0..self.content_classes).any(|c| self.removal_map[c] != m);
            if !retained {
                return Err(Error::invalid(format!(
                    "motion {m} is removed for every content class"
                )));
            }
        }
        Ok(())
    }

    pub fn is_held_out(&self, labels: LabelPair) -> bool {
        self.removal_map[labels.content] == labels.motion
    }

    /// The `C * (M - 1)` label pairs seen during training.
    pub fn training_pairs(&self) -> Vec<LabelPair> {
        let mut out = Vec::new();
        for motion in 0..self.motion_classes {
            for content in 0..self.content_classes {
                let pair = LabelPair { motion, content };
                if !self.is_held_out(pair) {
                    out.push(pair);
                }
            }
        }
        out
    }

    /// The `C` label pairs reachable only at generation time.
    pub fn held_out_pairs(&self) -> Vec<LabelPair> {
        (0..self.content_classes)
            .map(|content| LabelPair { motion: self.removal_map[content], content })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: SplitSpec =
            serde_json::from_str(s).map_err(|e| Error::data(format!("split spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Round-robin default: content `c` holds out motion `c mod M`.
pub fn build_split(motion_classes: usize, content_classes: usize) -> Result<SplitSpec> {
    let spec = SplitSpec {
        motion_classes,
        content_classes,
        removal_map: (0..content_classes).map(|c| c % motion_classes).collect(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Drops every held-out clip; returns the training corpus and the list of
/// held-out combinations.
pub fn apply_split(corpus: &LabeledCorpus, spec: &SplitSpec) -> Result<(LabeledCorpus, Vec<LabelPair>)> {
    spec.validate()?;
    if spec.motion_classes != corpus.profile.motion_classes()
        || spec.content_classes != corpus.profile.content_classes()
    {
        return Err(Error::invalid("split shape does not match the corpus profile"));
    }
    let clips = corpus
        .clips
        .iter()
        .filter(|(_, l)| !spec.is_held_out(*l))
        .cloned()
        .collect();
    Ok((
        LabeledCorpus { profile: corpus.profile.clone(), frames: corpus.frames, clips },
        spec.held_out_pairs(),
    ))
}

// Sprite rendering tables. Colors are chosen far apart so the oracle's
// nearest-color rule cannot tie; the background is near-black.
const SPRITE: usize = 9;
const SPRITE_COLORS: [[u8; 3]; 4] = [
    [230, 25, 25],  // red square
    [25, 230, 25],  // green circle
    [25, 25, 230],  // blue triangle
    [230, 230, 25], // yellow cross
];
const BACKGROUND: [u8; 3] = [10, 10, 10];
/// (vx, vy) per motion class: up, down, left, right.
const VELOCITIES: [(i32, i32); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

fn sprite_mask(content: usize, r: usize, c: usize) -> bool {
    let (dr, dc) = (r as i32 - 4, c as i32 - 4);
    match content {
        0 => true,                                // square
        1 => dr * dr + dc * dc <= 20,             // circle, radius 4.5
        2 => 2 * dc.abs() <= r as i32,            // triangle, apex at top
        _ => dc.abs() <= 1 || dr.abs() <= 1,      // cross
    }
}

/// Renders the bundled corpus: every (motion, content) combination gets
/// `clips_per_combo` clips of a sprite translating 1-2 px/frame with
/// wrap-around from a jittered start. Deterministic per seed.
pub fn generate_synthetic(
    profile: &DatasetProfile,
    frames: usize,
    clips_per_combo: usize,
    rng_seed: u64,
) -> Result<LabeledCorpus> {
    if profile.name != "synthetic"
        || profile.motion_classes() != 4
        || profile.content_classes() != 4
        || profile.channels != 3
        || profile.height != 32
        || profile.width != 32
    {
        return Err(Error::invalid("synthetic generation requires the synthetic profile"));
    }
    let (h, w) = (profile.height, profile.width);
    let mut rng = seed_stream(rng_seed, "synthetic/corpus");
    let mut clips = Vec::with_capacity(16 * clips_per_combo);
    for motion in 0..4usize {
        for content in 0..4usize {
            for _ in 0..clips_per_combo {
                let x0 = rng.random_range(0..w as i32);
                let y0 = rng.random_range(0..h as i32);
                let speed = rng.random_range(1..=2i32);
                let (vx, vy) = VELOCITIES[motion];
                let mut data = Array4::<f32>::from_elem((frames, 3, h, w), 0.0);
                for t in 0..frames {
                    for ch in 0..3 {
                        let bg = byte_to_unit(BACKGROUND[ch]);
                        data.slice_mut(ndarray::s![t, ch, .., ..]).fill(bg);
                    }
                    let cx = x0 + vx * speed * t as i32;
                    let cy = y0 + vy * speed * t as i32;
                    for r in 0..SPRITE {
                        for c in 0..SPRITE {
                            if !sprite_mask(content, r, c) {
                                continue;
                            }
                            let py = (cy + r as i32 - 4).rem_euclid(h as i32) as usize;
                            let px = (cx + c as i32 - 4).rem_euclid(w as i32) as usize;
                            for ch in 0..3 {
                                data[[t, ch, py, px]] = byte_to_unit(SPRITE_COLORS[content][ch]);
                            }
                        }
                    }
                }
                clips.push((
                    VideoClip::from_bounded(data),
                    LabelPair { motion, content },
                ));
            }
        }
    }
    Ok(LabeledCorpus { profile: profile.clone(), frames, clips })
}

/// Foreground threshold in unit space: sprite pixels have at least one
/// channel near 0.8, the background sits near -0.92.
const FG_THRESHOLD: f32 = -0.5;

/// Recovers both labels of a synthetic clip without a model: the motion
/// class from the sign of the circular-centroid displacement, the content
/// class from the mean foreground color. Exact on generated clips.
pub fn oracle_label(clip: &VideoClip) -> Result<LabelPair> {
    let (t_len, ch, h, w) = clip.frames.dim();
    if ch != 3 {
        return Err(Error::invalid("oracle labeling needs RGB clips"));
    }
    let tau = std::f64::consts::TAU;
    let mut theta_x = Vec::with_capacity(t_len);
    let mut theta_y = Vec::with_capacity(t_len);
    let mut color_sum = [0.0f64; 3];
    let mut fg_count = 0.0f64;
    for t in 0..t_len {
        let (mut sx, mut cx, mut sy, mut cy) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for y in 0..h {
            for x in 0..w {
                let r = clip.frames[[t, 0, y, x]];
                let g = clip.frames[[t, 1, y, x]];
                let b = clip.frames[[t, 2, y, x]];
                if r.max(g).max(b) > FG_THRESHOLD {
                    let ax = tau * x as f64 / w as f64;
                    let ay = tau * y as f64 / h as f64;
                    sx += ax.sin();
                    cx += ax.cos();
                    sy += ay.sin();
                    cy += ay.cos();
                    color_sum[0] += r as f64;
                    color_sum[1] += g as f64;
                    color_sum[2] += b as f64;
                    fg_count += 1.0;
                }
            }
        }
        if sx == 0.0 && cx == 0.0 {
            return Err(Error::data("clip frame has no foreground"));
        }
        theta_x.push(sx.atan2(cx));
        theta_y.push(sy.atan2(cy));
    }
    if fg_count == 0.0 {
        return Err(Error::data("clip has no foreground"));
    }
    // average per-frame angular displacement, wrapped to (-pi, pi]
    let wrap = |d: f64| {
        let mut d = d % tau;
        if d > tau / 2.0 {
            d -= tau;
        } else if d <= -tau / 2.0 {
            d += tau;
        }
        d
    };
    let mut dx = 0.0f64;
    let mut dy = 0.0f64;
    for t in 1..t_len {
        dx += wrap(theta_x[t] - theta_x[t - 1]);
        dy += wrap(theta_y[t] - theta_y[t - 1]);
    }
    let motion = if dy.abs() > dx.abs() {
        if dy < 0.0 {
            0 // up
        } else {
            1 // down
        }
    } else if dx < 0.0 {
        2 // left
    } else {
        3 // right
    };
    let mean = [
        (color_sum[0] / fg_count) as f32,
        (color_sum[1] / fg_count) as f32,
        (color_sum[2] / fg_count) as f32,
    ];
    let mut content = 0usize;
    let mut best = f32::INFINITY;
    for (k, rgb) in SPRITE_COLORS.iter().enumerate() {
        let d: f32 = (0..3)
            .map(|ch| {
                let r = byte_to_unit(rgb[ch]) - mean[ch];
                r * r
            })
            .sum();
        if d < best {
            best = d;
            content = k;
        }
    }
    Ok(LabelPair { motion, content })
}

/// Writes a corpus in the documented directory layout.
pub fn write_corpus(corpus: &LabeledCorpus, root: &Path) -> Result<()> {
    corpus.validate()?;
    if corpus.profile.channels != 3 {
        return Err(Error::invalid("the directory layout stores 8-bit RGB frames"));
    }
    let (h, w) = (corpus.profile.height, corpus.profile.width);
    let mut per_combo: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (clip, labels) in &corpus.clips {
        let idx = per_combo.entry((labels.motion, labels.content)).or_insert(0);
        let dir = root
            .join(&corpus.profile.motion_class_names[labels.motion])
            .join(&corpus.profile.content_class_names[labels.content])
            .join(format!("clip-{idx:05}"));
        *idx += 1;
        std::fs::create_dir_all(&dir)?;
        for t in 0..corpus.frames {
            let mut buf = vec![0u8; h * w * 3];
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..3 {
                        buf[(y * w + x) * 3 + ch] = unit_to_byte(clip.frames[[t, ch, y, x]]);
                    }
                }
            }
            let img = RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized");
            let path = dir.join(format!("frame_{t:04}.png"));
            img.save(&path)
                .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        }
    }
    Ok(())
}

/// Reads a corpus from the documented layout: temporal subsampling to
/// `frames` (uniform stride from frame 0), spatial resize to the profile
/// shape, byte-to-unit normalization. Unreadable frame files are skipped
/// with a warning string; a clip left with too few frames is an error
/// naming its directory.
pub fn ingest_clip_directory(
    root: &Path,
    profile: &DatasetProfile,
    frames: usize,
) -> Result<(LabeledCorpus, Vec<String>)> {
    if !root.is_dir() {
        return Err(Error::data(format!("{}: not a directory", root.display())));
    }
    let mut warnings = Vec::new();
    let mut clips = Vec::new();
    for (m_idx, m_name) in profile.motion_class_names.iter().enumerate() {
        for (c_idx, c_name) in profile.content_class_names.iter().enumerate() {
            let combo_dir = root.join(m_name).join(c_name);
            if !combo_dir.is_dir() {
                continue;
            }
            let mut clip_dirs: Vec<_> = std::fs::read_dir(&combo_dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_dir())
                .collect();
            clip_dirs.sort();
            for dir in clip_dirs {
                let clip = ingest_one_clip(&dir, profile, frames, &mut warnings)?;
                clips.push((clip, LabelPair { motion: m_idx, content: c_idx }));
            }
        }
    }
    let corpus = LabeledCorpus { profile: profile.clone(), frames, clips };
    corpus.validate()?;
    Ok((corpus, warnings))
}

fn ingest_one_clip(
    dir: &Path,
    profile: &DatasetProfile,
    frames: usize,
    warnings: &mut Vec<String>,
) -> Result<VideoClip> {
    let mut files: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect();
    files.sort();
    let mut decoded = Vec::new();
    for path in &files {
        match image::open(path) {
            Ok(img) => decoded.push(img.to_rgb8()),
            Err(e) => warnings.push(format!("skipping unreadable {}: {e}", path.display())),
        }
    }
    if decoded.len() < frames {
        return Err(Error::data(format!(
            "{}: {} decodable frames, need at least {frames}",
            dir.display(),
            decoded.len()
        )));
    }
    let stride = decoded.len() / frames;
    let (h, w) = (profile.height, profile.width);
    let mut data = Array4::<f32>::zeros((frames, profile.channels, h, w));
    for t in 0..frames {
        let mut img = decoded[t * stride].clone();
        if img.width() != w as u32 || img.height() != h as u32 {
            img = image::imageops::resize(&img, w as u32, h as u32, FilterType::Triangle);
        }
        for y in 0..h {
            for x in 0..w {
                let px = img.get_pixel(x as u32, y as u32).0;
                if profile.channels == 1 {
                    // luma from the standard weights
                    let g = 0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32;
                    data[[t, 0, y, x]] = byte_to_unit(g.round().clamp(0.0, 255.0) as u8);
                } else {
                    for ch in 0..3 {
                        data[[t, ch, y, x]] = byte_to_unit(px[ch]);
                    }
                }
            }
        }
    }
    Ok(VideoClip::from_bounded(data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth(cpc: usize, seed: u64) -> LabeledCorpus {
        generate_synthetic(&DatasetProfile::synthetic(), 16, cpc, seed).unwrap()
    }

    #[test]
    fn byte_mapping_hits_the_endpoints() {
        assert_eq!(byte_to_unit(0), -1.0);
        assert_eq!(byte_to_unit(255), 1.0);
        for b in 0..=255u8 {
            assert_eq!(unit_to_byte(byte_to_unit(b)), b, "byte {b}");
        }
    }

    #[test]
    fn round_robin_split_counts() {
        let s = build_split(4, 4).unwrap();
        assert_eq!(s.training_pairs().len(), 12);
        assert_eq!(s.held_out_pairs().len(), 4);
        for m in 0..4 {
            let retained = (0..4).filter(|&c| s.removal_map[c] != m).count();
            assert_eq!(retained, 3, "motion {m}");
        }
        let s = build_split(4, 9).unwrap();
        assert_eq!(s.training_pairs().len(), 27);
        assert_eq!(s.held_out_pairs().len(), 9);
    }

    #[test]
    fn single_motion_class_is_rejected() {
        assert!(build_split(1, 4).is_err());
        // C=1 removes its single held-out motion everywhere
        assert!(build_split(2, 1).is_err());
    }

    #[test]
    fn split_partitions_all_combinations_exhaustively() {
        for m in 2..=16usize {
            for c in 2..=16usize {
                let s = build_split(m, c).unwrap();
                let train = s.training_pairs();
                let held = s.held_out_pairs();
                assert_eq!(train.len(), c * (m - 1));
                assert_eq!(held.len(), c);
                let mut seen = vec![false; m * c];
                for p in train.iter().chain(held.iter()) {
                    let idx = p.motion * c + p.content;
                    assert!(!seen[idx], "duplicate combo in M={m} C={c}");
                    seen[idx] = true;
                }
                assert!(seen.iter().all(|&v| v), "missing combo in M={m} C={c}");
                for p in &train {
                    assert!(!s.is_held_out(*p));
                }
                for p in &held {
                    assert!(s.is_held_out(*p));
                }
            }
        }
    }

    #[test]
    fn split_round_trips_through_json() {
        let s = build_split(4, 9).unwrap();
        let json = s.to_json();
        assert!(json.contains("\"M\""), "{json}");
        assert_eq!(SplitSpec::from_json(&json).unwrap(), s);
        assert!(SplitSpec::from_json("{\"M\":1,\"C\":2,\"removal_map\":[0,0]}").is_err());
    }

    #[test]
    fn apply_split_filters_held_out_clips() {
        let corpus = synth(1, 3);
        let spec = build_split(4, 4).unwrap();
        let (train, held) = apply_split(&corpus, &spec).unwrap();
        assert_eq!(train.len(), 12);
        assert_eq!(held.len(), 4);
        for (_, l) in &train.clips {
            assert!(!spec.is_held_out(*l));
        }
        // idempotent
        let (train2, _) = apply_split(&train, &spec).unwrap();
        assert_eq!(train2.len(), 12);
        // empty corpus: empty train, held-out list still complete
        let empty = LabeledCorpus {
            profile: corpus.profile.clone(),
            frames: 16,
            clips: Vec::new(),
        };
        let (t, h) = apply_split(&empty, &spec).unwrap();
        assert_eq!(t.len(), 0);
        assert_eq!(h.len(), 4);
    }

    #[test]
    fn synthetic_corpus_has_expected_size_and_shape() {
        let corpus = synth(8, 1);
        assert_eq!(corpus.len(), 128);
        corpus.validate().unwrap();
        let by_pair = corpus.indices_by_pair();
        assert_eq!(by_pair.len(), 16);
        assert!(by_pair.values().all(|v| v.len() == 8));
        let (clip, _) = &corpus.clips[0];
        assert_eq!(clip.frames.dim(), (16, 3, 32, 32));
    }

    #[test]
    fn synthetic_corpus_is_bit_identical_per_seed() {
        let a = synth(2, 42);
        let b = synth(2, 42);
        assert_eq!(a.len(), b.len());
        for ((ca, la), (cb, lb)) in a.clips.iter().zip(&b.clips) {
            assert_eq!(la, lb);
            assert_eq!(ca.frames, cb.frames);
        }
        let c = synth(2, 43);
        let same = a
            .clips
            .iter()
            .zip(&c.clips)
            .all(|((ca, _), (cc, _))| ca.frames == cc.frames);
        assert!(!same, "different seeds should move the sprites");
    }

    #[test]
    fn oracle_recovers_every_label() {
        let corpus = synth(4, 7);
        for (i, (clip, labels)) in corpus.clips.iter().enumerate() {
            let got = oracle_label(clip).unwrap();
            assert_eq!(got, *labels, "clip {i}");
        }
    }

    #[test]
    fn corpus_survives_a_disk_round_trip() {
        let corpus = synth(2, 9);
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&corpus, dir.path()).unwrap();
        let (back, warnings) =
            ingest_clip_directory(dir.path(), &DatasetProfile::synthetic(), 16).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(back.len(), corpus.len());
        // written sorted by (motion, content); the generator emits the same order
        for ((ca, la), (cb, lb)) in corpus.clips.iter().zip(&back.clips) {
            assert_eq!(la, lb);
            assert_eq!(ca.frames, cb.frames, "pixel values are byte-exact");
        }
    }

    #[test]
    fn ingestion_subsamples_long_sources_with_uniform_stride() {
        let dir = tempfile::tempdir().unwrap();
        let clip_dir = dir.path().join("up").join("red-square").join("clip-00000");
        std::fs::create_dir_all(&clip_dir).unwrap();
        // 64 single-color frames; frame k is byte value k
        for k in 0..64u32 {
            let img = RgbImage::from_pixel(32, 32, image::Rgb([k as u8, 0, 0]));
            img.save(clip_dir.join(format!("frame_{k:04}.png"))).unwrap();
        }
        let (corpus, warnings) =
            ingest_clip_directory(dir.path(), &DatasetProfile::synthetic(), 16).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(corpus.len(), 1);
        let clip = &corpus.clips[0].0;
        for t in 0..16 {
            let expect = byte_to_unit((t * 4) as u8);
            assert_eq!(clip.frames[[t, 0, 0, 0]], expect, "frame {t} source index");
        }
    }

    #[test]
    fn ingestion_skips_unreadable_files_with_a_warning() {
        let dir = tempfile::tempdir().unwrap();
        let clip_dir = dir.path().join("up").join("red-square").join("clip-00000");
        std::fs::create_dir_all(&clip_dir).unwrap();
        for k in 0..17u32 {
            let img = RgbImage::from_pixel(32, 32, image::Rgb([k as u8, 0, 0]));
            img.save(clip_dir.join(format!("frame_{k:04}.png"))).unwrap();
        }
        std::fs::write(clip_dir.join("frame_0017.png"), b"not a png").unwrap();
        let (corpus, warnings) =
            ingest_clip_directory(dir.path(), &DatasetProfile::synthetic(), 16).unwrap();
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("frame_0017.png"));
        assert_eq!(corpus.len(), 1);
        // too few decodable frames is an error naming the clip
        let clip2 = dir.path().join("up").join("red-square").join("clip-00001");
        std::fs::create_dir_all(&clip2).unwrap();
        for k in 0..5u32 {
            let img = RgbImage::from_pixel(32, 32, image::Rgb([k as u8, 0, 0]));
            img.save(clip2.join(format!("frame_{k:04}.png"))).unwrap();
        }
        let err = ingest_clip_directory(dir.path(), &DatasetProfile::synthetic(), 16).unwrap_err();
        assert!(err.to_string().contains("clip-00001"), "{err}");
    }

    #[test]
    fn ingestion_resizes_to_the_profile_shape() {
        let dir = tempfile::tempdir().unwrap();
        let clip_dir = dir.path().join("up").join("red-square").join("clip-00000");
        std::fs::create_dir_all(&clip_dir).unwrap();
        for k in 0..16u32 {
            let img = RgbImage::from_pixel(64, 48, image::Rgb([200, (k * 10) as u8, 30]));
            img.save(clip_dir.join(format!("frame_{k:04}.png"))).unwrap();
        }
        let (corpus, _) =
            ingest_clip_directory(dir.path(), &DatasetProfile::synthetic(), 16).unwrap();
        assert_eq!(corpus.clips[0].0.frames.dim(), (16, 3, 32, 32));
    }
}
