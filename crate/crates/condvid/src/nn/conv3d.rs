//! 3-D (spatio-temporal) convolution via vol2col + GEMM. Kernel, stride and
//! padding are per-axis `(t, h, w)` triples so the temporal extent can differ
//! from the spatial one.

use super::conv2d::valid_range;
use super::{normal_init, view2, view2_mut, visit_param, Param, ParamVisitor};
use ndarray::linalg::general_mat_mul;
use ndarray::Array5;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dCfg {
    pub cin: usize,
    pub cout: usize,
    pub k: (usize, usize, usize),
    pub stride: (usize, usize, usize),
    pub pad: (usize, usize, usize),
}

impl Conv3dCfg {
    pub fn out_thw(&self, t: usize, h: usize, w: usize) -> (usize, usize, usize) {
        let to = (t + 2 * self.pad.0 - self.k.0) / self.stride.0 + 1;
        let ho = (h + 2 * self.pad.1 - self.k.1) / self.stride.1 + 1;
        let wo = (w + 2 * self.pad.2 - self.k.2) / self.stride.2 + 1;
        (to, ho, wo)
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k.0 * self.k.1 * self.k.2
    }

    fn cols_rows(&self) -> usize {
        self.cin * self.k.0 * self.k.1 * self.k.2
    }
}

/// Unfolds one item `[cin, t, h, w]` into `cols [cin*kt*kh*kw, to*ho*wo]`.
/// Out-of-bounds taps must already be zero; valid entries are overwritten.
#[allow(clippy::too_many_arguments)]
pub fn vol2col(
    x: &[f32],
    cols: &mut [f32],
    cin: usize,
    (t, h, w): (usize, usize, usize),
    cfg: &Conv3dCfg,
    (to, ho, wo): (usize, usize, usize),
) {
    let l = to * ho * wo;
    let (kt, kh, kw) = cfg.k;
    let (st, sh, sw) = cfg.stride;
    let (pt, ph, pw) = cfg.pad;
    for c in 0..cin {
        for dt in 0..kt {
            for dy in 0..kh {
                for dx in 0..kw {
                    let r = ((c * kt + dt) * kh + dy) * kw + dx;
                    let rbase = r * l;
                    let (lo, hi) = valid_range(w, wo, dx, sw, pw);
                    for ot in 0..to {
                        let it = (ot * st + dt) as isize - pt as isize;
                        if it < 0 || it >= t as isize {
                            continue;
                        }
                        for oy in 0..ho {
                            let iy = (oy * sh + dy) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &x[((c * t + it as usize) * h + iy as usize) * w..][..w];
                            let crow = &mut cols[rbase + (ot * ho + oy) * wo..][..wo];
                            for ox in lo..hi {
                                crow[ox] = xrow[ox * sw + dx - pw];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of `vol2col`: scatter-adds `cols` back into `dx [cin, t, h, w]`.
#[allow(clippy::too_many_arguments)]
pub fn col2vol(
    cols: &[f32],
    dx: &mut [f32],
    cin: usize,
    (t, h, w): (usize, usize, usize),
    cfg: &Conv3dCfg,
    (to, ho, wo): (usize, usize, usize),
) {
    let l = to * ho * wo;
    let (kt, kh, kw) = cfg.k;
    let (st, sh, sw) = cfg.stride;
    let (pt, ph, pw) = cfg.pad;
    for c in 0..cin {
        for dt in 0..kt {
            for dy in 0..kh {
                for dx_ in 0..kw {
                    let r = ((c * kt + dt) * kh + dy) * kw + dx_;
                    let rbase = r * l;
                    let (lo, hi) = valid_range(w, wo, dx_, sw, pw);
                    for ot in 0..to {
                        let it = (ot * st + dt) as isize - pt as isize;
                        if it < 0 || it >= t as isize {
                            continue;
                        }
                        for oy in 0..ho {
                            let iy = (oy * sh + dy) as isize - ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &mut dx[((c * t + it as usize) * h + iy as usize) * w..][..w];
                            let crow = &cols[rbase + (ot * ho + oy) * wo..][..wo];
                            for ox in lo..hi {
                                xrow[ox * sw + dx_ - pw] += crow[ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass with an explicit weight slice `[cout, cin*kt*kh*kw]`.
pub fn conv3d_forward(x: &Array5<f32>, w: &[f32], b: Option<&[f32]>, cfg: &Conv3dCfg) -> Array5<f32> {
    let (n, cin, t, h, wid) = x.dim();
    assert_eq!(cin, cfg.cin, "conv3d input channels");
    let (to, ho, wo) = cfg.out_thw(t, h, wid);
    let l = to * ho * wo;
    let r = cfg.cols_rows();
    let item = cin * t * h * wid;
    let mut y = Array5::<f32>::zeros((n, cfg.cout, to, ho, wo));
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice_mut().expect("standard layout");
    let wv = view2(w, cfg.cout, r);
    let mut cols = vec![0.0f32; r * l];
    for i in 0..n {
        vol2col(&xs[i * item..][..item], &mut cols, cin, (t, h, wid), cfg, (to, ho, wo));
        let cv = view2(&cols, r, l);
        let mut yv = view2_mut(&mut ys[i * cfg.cout * l..][..cfg.cout * l], cfg.cout, l);
        general_mat_mul(1.0, &wv, &cv, 0.0, &mut yv);
        if let Some(bias) = b {
            let yb = &mut ys[i * cfg.cout * l..][..cfg.cout * l];
            for co in 0..cfg.cout {
                let bv = bias[co];
                for v in &mut yb[co * l..][..l] {
                    *v += bv;
                }
            }
        }
    }
    y
}

/// Backward pass: accumulates `dw [cout, cin*kt*kh*kw]` and `db [cout]`,
/// returns `dx` when requested.
pub fn conv3d_backward(
    x: &Array5<f32>,
    dy: &Array5<f32>,
    w: &[f32],
    cfg: &Conv3dCfg,
    dw: &mut [f32],
    mut db: Option<&mut [f32]>,
    need_dx: bool,
) -> Option<Array5<f32>> {
    let (n, cin, t, h, wid) = x.dim();
    let (to, ho, wo) = cfg.out_thw(t, h, wid);
    let l = to * ho * wo;
    let r = cfg.cols_rows();
    let item = cin * t * h * wid;
    debug_assert_eq!(dy.dim(), (n, cfg.cout, to, ho, wo));
    let xs = x.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let mut dx = need_dx.then(|| Array5::<f32>::zeros((n, cin, t, h, wid)));
    let mut cols = vec![0.0f32; r * l];
    let mut dcols = vec![0.0f32; r * l];
    let wv = view2(w, cfg.cout, r);
    for i in 0..n {
        let dyv = view2(&dys[i * cfg.cout * l..][..cfg.cout * l], cfg.cout, l);
        vol2col(&xs[i * item..][..item], &mut cols, cin, (t, h, wid), cfg, (to, ho, wo));
        let cv = view2(&cols, r, l);
        let mut dwv = view2_mut(dw, cfg.cout, r);
        general_mat_mul(1.0, &dyv, &cv.t(), 1.0, &mut dwv);
        if let Some(db) = db.as_deref_mut() {
            for co in 0..cfg.cout {
                let mut s = 0.0f32;
                for &v in &dys[i * cfg.cout * l + co * l..][..l] {
                    s += v;
                }
                db[co] += s;
            }
        }
        if let Some(dx) = dx.as_mut() {
            let mut dcv = view2_mut(&mut dcols, r, l);
            general_mat_mul(1.0, &wv.t(), &dyv, 0.0, &mut dcv);
            let dxs = dx.as_slice_mut().expect("standard layout");
            col2vol(&dcols, &mut dxs[i * item..][..item], cin, (t, h, wid), cfg, (to, ho, wo));
        }
    }
    dx
}

/// Plain (non-normalized) 3-D convolution layer.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub cfg: Conv3dCfg,
    pub w: Param,
    pub b: Param,
}

impl Conv3d {
    pub fn new(cfg: Conv3dCfg, rng: &mut ChaCha20Rng, std: f32) -> Self {
        let w = Param::new(normal_init(rng, &[cfg.cout, cfg.cin, cfg.k.0, cfg.k.1, cfg.k.2], std));
        let b = Param::zeros(&[cfg.cout]);
        Conv3d { cfg, w, b }
    }

    pub fn forward(&self, x: &Array5<f32>) -> Array5<f32> {
        conv3d_forward(x, self.w.value_slice(), Some(self.b.value_slice()), &self.cfg)
    }

    pub fn backward(&mut self, x: &Array5<f32>, dy: &Array5<f32>, need_dx: bool) -> Option<Array5<f32>> {
        let cfg = self.cfg;
        let w = self.w.v.as_slice().expect("standard layout").to_vec();
        conv3d_backward(
            x,
            dy,
            &w,
            &cfg,
            self.w.g.as_slice_mut().expect("standard layout"),
            Some(self.b.grad_slice_mut()),
            need_dx,
        )
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        visit_param(&mut self.w, &format!("{prefix}.w"), f);
        visit_param(&mut self.b, &format!("{prefix}.b"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_stream;

    fn naive_conv3d(x: &Array5<f32>, w: &[f32], b: &[f32], cfg: &Conv3dCfg) -> Array5<f32> {
        let (n, cin, t, h, wid) = x.dim();
        let (to, ho, wo) = cfg.out_thw(t, h, wid);
        let (kt, kh, kw) = cfg.k;
        let mut y = Array5::<f32>::zeros((n, cfg.cout, to, ho, wo));
        for i in 0..n {
            for co in 0..cfg.cout {
                for ot in 0..to {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut acc = b[co];
                            for ci in 0..cin {
                                for dt in 0..kt {
                                    for dy in 0..kh {
                                        for dx in 0..kw {
                                            let it = (ot * cfg.stride.0 + dt) as isize - cfg.pad.0 as isize;
                                            let iy = (oy * cfg.stride.1 + dy) as isize - cfg.pad.1 as isize;
                                            let ix = (ox * cfg.stride.2 + dx) as isize - cfg.pad.2 as isize;
                                            if it >= 0
                                                && (it as usize) < t
                                                && iy >= 0
                                                && (iy as usize) < h
                                                && ix >= 0
                                                && (ix as usize) < wid
                                            {
                                                let widx = (((co * cin + ci) * kt + dt) * kh + dy) * kw + dx;
                                                acc += w[widx]
                                                    * x[[i, ci, it as usize, iy as usize, ix as usize]];
                                            }
                                        }
                                    }
                                }
                            }
                            y[[i, co, ot, oy, ox]] = acc;
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn halves_every_axis_with_stride_two() {
        let cfg = Conv3dCfg {
            cin: 3,
            cout: 8,
            k: (4, 4, 4),
            stride: (2, 2, 2),
            pad: (1, 1, 1),
        };
        assert_eq!(cfg.out_thw(16, 32, 32), (8, 16, 16));
    }

    #[test]
    fn forward_matches_naive_reference() {
        let mut rng = seed_stream(31, "conv3d");
        let cfg = Conv3dCfg {
            cin: 2,
            cout: 3,
            k: (3, 4, 4),
            stride: (1, 2, 2),
            pad: (1, 1, 1),
        };
        let layer = Conv3d::new(cfg, &mut rng, 0.5);
        let x = normal_init(&mut rng, &[2, 2, 4, 6, 6], 1.0)
            .into_dimensionality::<ndarray::Ix5>()
            .unwrap();
        let y = layer.forward(&x);
        let y_ref = naive_conv3d(&x, layer.w.value_slice(), layer.b.value_slice(), &cfg);
        assert_eq!(y.dim(), (2, 3, 4, 3, 3));
        for (a, b) in y.iter().zip(y_ref.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seed_stream(32, "conv3d-fd");
        let cfg = Conv3dCfg {
            cin: 2,
            cout: 2,
            k: (2, 3, 3),
            stride: (2, 2, 2),
            pad: (0, 1, 1),
        };
        let mut layer = Conv3d::new(cfg, &mut rng, 0.5);
        let x = normal_init(&mut rng, &[1, 2, 4, 5, 5], 1.0)
            .into_dimensionality::<ndarray::Ix5>()
            .unwrap();
        let rmask = normal_init(&mut rng, &[1, 2, 2, 3, 3], 1.0)
            .into_dimensionality::<ndarray::Ix5>()
            .unwrap();
        let loss = |l: &Conv3d, x: &Array5<f32>| (l.forward(x) * &rmask).sum();
        let dx = layer.backward(&x, &rmask, true).unwrap();

        let h = 1e-2f32;
        for idx in [0usize, 11, 23, cfg.weight_len() - 1] {
            let orig = layer.w.v.as_slice().unwrap()[idx];
            layer.w.v.as_slice_mut().unwrap()[idx] = orig + h;
            let lp = loss(&layer, &x);
            layer.w.v.as_slice_mut().unwrap()[idx] = orig - h;
            let lm = loss(&layer, &x);
            layer.w.v.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = layer.w.g.as_slice().unwrap()[idx];
            assert!(
                (fd - an).abs() < 2e-2 * fd.abs().max(1.0),
                "dw[{idx}]: fd {fd} vs analytic {an}"
            );
        }
        let mut xp = x.clone();
        for idx in [0usize, 37, 99] {
            let orig = xp.as_slice().unwrap()[idx];
            xp.as_slice_mut().unwrap()[idx] = orig + h;
            let lp = loss(&layer, &xp);
            xp.as_slice_mut().unwrap()[idx] = orig - h;
            let lm = loss(&layer, &xp);
            xp.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = dx.as_slice().unwrap()[idx];
            assert!(
                (fd - an).abs() < 2e-2 * fd.abs().max(1.0),
                "dx[{idx}]: fd {fd} vs analytic {an}"
            );
        }
    }
}
