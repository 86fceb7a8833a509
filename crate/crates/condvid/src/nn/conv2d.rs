//! 2-D convolution via im2col + GEMM.

use super::{normal_init, view2, view2_mut, visit_param, Param, ParamVisitor};
use ndarray::linalg::general_mat_mul;
use ndarray::Array4;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dCfg {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dCfg {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h + 2 * self.pad - self.k) / self.stride + 1;
        let wo = (w + 2 * self.pad - self.k) / self.stride + 1;
        (ho, wo)
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }
}

/// Valid output-column range for kernel offset `kx`: `ox` such that
/// `ox*stride + kx - pad` lands inside `[0, size)`.
pub(crate) fn valid_range(size: usize, o_size: usize, koff: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if koff >= pad {
        0
    } else {
        (pad - koff).div_ceil(stride)
    };
    let hi = if size + pad > koff {
        (((size + pad - koff - 1) / stride) + 1).min(o_size)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds one item `[cin, h, w]` into `cols [cin*k*k, ho*wo]` (flat,
/// row-major). Out-of-bounds taps must already be zero in `cols`; valid
/// entries are fully overwritten, so the buffer can be reused across items.
pub fn im2col2d(
    x: &[f32],
    cols: &mut [f32],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let l = ho * wo;
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let rbase = r * l;
                let (lo, hi) = valid_range(w, wo, kx, stride, pad);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &x[(c * h + iy as usize) * w..][..w];
                    let crow = &mut cols[rbase + oy * wo..][..wo];
                    for ox in lo..hi {
                        crow[ox] = xrow[ox * stride + kx - pad];
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col2d`: scatter-adds `cols` back into `dx [cin, h, w]`.
pub fn col2im2d(
    cols: &[f32],
    dx: &mut [f32],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) {
    let l = ho * wo;
    for c in 0..cin {
        for ky in 0..k {
            for kx in 0..k {
                let r = (c * k + ky) * k + kx;
                let rbase = r * l;
                let (lo, hi) = valid_range(w, wo, kx, stride, pad);
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let xrow = &mut dx[(c * h + iy as usize) * w..][..w];
                    let crow = &cols[rbase + oy * wo..][..wo];
                    for ox in lo..hi {
                        xrow[ox * stride + kx - pad] += crow[ox];
                    }
                }
            }
        }
    }
}

/// Forward pass with an explicit weight slice `[cout, cin*k*k]`.
pub fn conv2d_forward(x: &Array4<f32>, w: &[f32], b: Option<&[f32]>, cfg: &Conv2dCfg) -> Array4<f32> {
    let (n, cin, h, wid) = x.dim();
    assert_eq!(cin, cfg.cin, "conv2d input channels");
    let (ho, wo) = cfg.out_hw(h, wid);
    let l = ho * wo;
    let r = cfg.cin * cfg.k * cfg.k;
    let mut y = Array4::<f32>::zeros((n, cfg.cout, ho, wo));
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice_mut().expect("standard layout");
    let wv = view2(w, cfg.cout, r);
    let mut cols = vec![0.0f32; r * l];
    for i in 0..n {
        im2col2d(
            &xs[i * cin * h * wid..][..cin * h * wid],
            &mut cols,
            cin,
            h,
            wid,
            cfg.k,
            cfg.stride,
            cfg.pad,
            ho,
            wo,
        );
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

/// Backward pass: accumulates `dw [cout, cin*k*k]` and `db [cout]`, and
/// returns `dx` when requested.
pub fn conv2d_backward(
    x: &Array4<f32>,
    dy: &Array4<f32>,
    w: &[f32],
    cfg: &Conv2dCfg,
    dw: &mut [f32],
    mut db: Option<&mut [f32]>,
    need_dx: bool,
) -> Option<Array4<f32>> {
    let (n, cin, h, wid) = x.dim();
    let (ho, wo) = cfg.out_hw(h, wid);
    let l = ho * wo;
    let r = cfg.cin * cfg.k * cfg.k;
    debug_assert_eq!(dy.dim(), (n, cfg.cout, ho, wo));
    let xs = x.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let mut dx = need_dx.then(|| Array4::<f32>::zeros((n, cin, h, wid)));
    let mut cols = vec![0.0f32; r * l];
    let mut dcols = vec![0.0f32; r * l];
    let wv = view2(w, cfg.cout, r);
    for i in 0..n {
        let dyv = view2(&dys[i * cfg.cout * l..][..cfg.cout * l], cfg.cout, l);
        im2col2d(
            &xs[i * cin * h * wid..][..cin * h * wid],
            &mut cols,
            cin,
            h,
            wid,
            cfg.k,
            cfg.stride,
            cfg.pad,
            ho,
            wo,
        );
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
            col2im2d(
                &dcols,
                &mut dxs[i * cin * h * wid..][..cin * h * wid],
                cin,
                h,
                wid,
                cfg.k,
                cfg.stride,
                cfg.pad,
                ho,
                wo,
            );
        }
    }
    dx
}

/// Plain (non-normalized) convolution layer.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub cfg: Conv2dCfg,
    pub w: Param,
    pub b: Param,
}

impl Conv2d {
    pub fn new(cfg: Conv2dCfg, rng: &mut ChaCha20Rng, std: f32) -> Self {
        let w = Param::new(normal_init(rng, &[cfg.cout, cfg.cin, cfg.k, cfg.k], std));
        let b = Param::zeros(&[cfg.cout]);
        Conv2d { cfg, w, b }
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        conv2d_forward(x, self.w.value_slice(), Some(self.b.value_slice()), &self.cfg)
    }

    pub fn backward(&mut self, x: &Array4<f32>, dy: &Array4<f32>, need_dx: bool) -> Option<Array4<f32>> {
        let cfg = self.cfg;
        let w = self.w.v.as_slice().expect("standard layout").to_vec();
        conv2d_backward(
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

    /// Direct five-loop convolution, the reference the GEMM path is checked against.
    fn naive_conv2d(x: &Array4<f32>, w: &[f32], b: &[f32], cfg: &Conv2dCfg) -> Array4<f32> {
        let (n, cin, h, wid) = x.dim();
        let (ho, wo) = cfg.out_hw(h, wid);
        let mut y = Array4::<f32>::zeros((n, cfg.cout, ho, wo));
        for i in 0..n {
            for co in 0..cfg.cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b[co];
                        for ci in 0..cin {
                            for ky in 0..cfg.k {
                                for kx in 0..cfg.k {
                                    let iy = (oy * cfg.stride + ky) as isize - cfg.pad as isize;
                                    let ix = (ox * cfg.stride + kx) as isize - cfg.pad as isize;
                                    if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < wid {
                                        let wv = w[((co * cin + ci) * cfg.k + ky) * cfg.k + kx];
                                        acc += wv * x[[i, ci, iy as usize, ix as usize]];
                                    }
                                }
                            }
                        }
                        y[[i, co, oy, ox]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn forward_matches_naive_reference() {
        let mut rng = seed_stream(11, "conv2d");
        let cfg = Conv2dCfg { cin: 3, cout: 4, k: 4, stride: 2, pad: 1 };
        let conv = Conv2d::new(cfg, &mut rng, 0.5);
        let x4 = normal_init(&mut rng, &[2, 3, 8, 8], 1.0)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let y = conv.forward(&x4);
        let y_ref = naive_conv2d(&x4, conv.w.value_slice(), conv.b.value_slice(), &cfg);
        assert_eq!(y.dim(), (2, 4, 4, 4));
        for (a, b) in y.iter().zip(y_ref.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seed_stream(12, "conv2d-fd");
        let cfg = Conv2dCfg { cin: 2, cout: 3, k: 3, stride: 2, pad: 1 };
        let mut conv = Conv2d::new(cfg, &mut rng, 0.5);
        let x = normal_init(&mut rng, &[2, 2, 5, 5], 1.0)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let rmask = normal_init(&mut rng, &[2, 3, 3, 3], 1.0)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let loss = |c: &Conv2d, x: &Array4<f32>| -> f32 {
            (c.forward(x) * &rmask).sum()
        };
        let dy = rmask.clone();
        let dx = conv.backward(&x, &dy, true).unwrap();

        let h = 1e-2f32;
        // weight gradient
        for idx in [0usize, 7, 20, cfg.weight_len() - 1] {
            let orig = conv.w.v.as_slice().unwrap()[idx];
            conv.w.v.as_slice_mut().unwrap()[idx] = orig + h;
            let lp = loss(&conv, &x);
            conv.w.v.as_slice_mut().unwrap()[idx] = orig - h;
            let lm = loss(&conv, &x);
            conv.w.v.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = conv.w.g.as_slice().unwrap()[idx];
            assert!(
                (fd - an).abs() < 2e-2 * fd.abs().max(1.0),
                "dw[{idx}]: fd {fd} vs analytic {an}"
            );
        }
        // input gradient
        let mut xp = x.clone();
        for idx in [0usize, 13, 49] {
            let orig = xp.as_slice().unwrap()[idx];
            xp.as_slice_mut().unwrap()[idx] = orig + h;
            let lp = loss(&conv, &xp);
            xp.as_slice_mut().unwrap()[idx] = orig - h;
            let lm = loss(&conv, &xp);
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
