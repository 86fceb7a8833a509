//! Media export: animated GIFs and per-frame PNG grids.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use condvid::datasets::unit_to_byte;
use condvid::{Error, Result, VideoClip};
use image::codecs::gif::{GifEncoder, Repeat};
use image::{Delay, Frame, Rgb, RgbImage, Rgba, RgbaImage};

fn pixel_bytes(clip: &VideoClip, t: usize, r: usize, c: usize) -> [u8; 3] {
    let ch = clip.frames.dim().1;
    if ch >= 3 {
        [
            unit_to_byte(clip.frames[[t, 0, r, c]]),
            unit_to_byte(clip.frames[[t, 1, r, c]]),
            unit_to_byte(clip.frames[[t, 2, r, c]]),
        ]
    } else {
        let v = unit_to_byte(clip.frames[[t, 0, r, c]]);
        [v, v, v]
    }
}

/// One clip as a looping GIF, one frame per video frame.
pub fn write_gif(clip: &VideoClip, path: &Path, ms_per_frame: u32) -> Result<()> {
    let (t_len, _, h, w) = clip.frames.dim();
    let file = BufWriter::new(File::create(path)?);
    let mut enc = GifEncoder::new(file);
    enc.set_repeat(Repeat::Infinite)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    for t in 0..t_len {
        let mut img = RgbaImage::new(w as u32, h as u32);
        for r in 0..h {
            for c in 0..w {
                let [rr, gg, bb] = pixel_bytes(clip, t, r, c);
                img.put_pixel(c as u32, r as u32, Rgba([rr, gg, bb, 255]));
            }
        }
        let frame = Frame::from_parts(img, 0, 0, Delay::from_numer_denom_ms(ms_per_frame, 1));
        enc.encode_frame(frame)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// A PNG contact sheet: one row per clip, one column per frame, 2px gutters.
pub fn write_grid(clips: &[&VideoClip], path: &Path) -> Result<()> {
    let first = clips
        .first()
        .ok_or_else(|| Error::invalid("grid needs at least one clip"))?;
    let (t_len, _, h, w) = first.frames.dim();
    let pad = 2usize;
    let grid_w = t_len * w + (t_len + 1) * pad;
    let grid_h = clips.len() * h + (clips.len() + 1) * pad;
    let mut img = RgbImage::from_pixel(grid_w as u32, grid_h as u32, Rgb([24, 24, 24]));
    for (row, clip) in clips.iter().enumerate() {
        if clip.frames.dim() != first.frames.dim() {
            return Err(Error::shape("grid clips must share one shape"));
        }
        let y0 = pad + row * (h + pad);
        for t in 0..t_len {
            let x0 = pad + t * (w + pad);
            for r in 0..h {
                for c in 0..w {
                    let [rr, gg, bb] = pixel_bytes(clip, t, r, c);
                    img.put_pixel((x0 + c) as u32, (y0 + r) as u32, Rgb([rr, gg, bb]));
                }
            }
        }
    }
    img.save(path)
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    Ok(())
}
