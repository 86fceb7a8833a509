//! Transposed 2-D convolution (fractionally strided), the adjoint of
//! [`conv2d`](super::conv2d) with the same kernel geometry.

use super::conv2d::{col2im2d, im2col2d};
use super::{normal_init, view2, view2_mut, visit_param, Param, ParamVisitor};
use ndarray::linalg::general_mat_mul;
use ndarray::Array4;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deconv2dCfg {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Deconv2dCfg {
    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h - 1) * self.stride + self.k - 2 * self.pad;
        let wo = (w - 1) * self.stride + self.k - 2 * self.pad;
        (ho, wo)
    }

    pub fn weight_len(&self) -> usize {
        self.cin * self.cout * self.k * self.k
    }
}

/// Forward pass. Weight layout is `[cin, cout, k, k]`; each input pixel
/// scatters a `k x k` stamp into the upsampled output grid.
pub fn deconv2d_forward(x: &Array4<f32>, w: &[f32], b: Option<&[f32]>, cfg: &Deconv2dCfg) -> Array4<f32> {
    let (n, cin, h, wid) = x.dim();
    assert_eq!(cin, cfg.cin, "deconv2d input channels");
    let (ho, wo) = cfg.out_hw(h, wid);
    let l = h * wid;
    let r = cfg.cout * cfg.k * cfg.k;
    let mut y = Array4::<f32>::zeros((n, cfg.cout, ho, wo));
    let xs = x.as_slice().expect("standard layout");
    let ys = y.as_slice_mut().expect("standard layout");
    let wv = view2(w, cfg.cin, r);
    let mut cols = vec![0.0f32; r * l];
    for i in 0..n {
        let xv = view2(&xs[i * cin * l..][..cin * l], cin, l);
        let mut cv = view2_mut(&mut cols, r, l);
        general_mat_mul(1.0, &wv.t(), &xv, 0.0, &mut cv);
        let yi = &mut ys[i * cfg.cout * ho * wo..][..cfg.cout * ho * wo];
        col2im2d(&cols, yi, cfg.cout, ho, wo, cfg.k, cfg.stride, cfg.pad, h, wid);
        if let Some(bias) = b {
            for co in 0..cfg.cout {
                let bv = bias[co];
                for v in &mut yi[co * ho * wo..][..ho * wo] {
                    *v += bv;
                }
            }
        }
    }
    y
}

/// Backward pass: accumulates `dw [cin, cout*k*k]` and `db [cout]`, returns
/// `dx` when requested.
pub fn deconv2d_backward(
    x: &Array4<f32>,
    dy: &Array4<f32>,
    w: &[f32],
    cfg: &Deconv2dCfg,
    dw: &mut [f32],
    mut db: Option<&mut [f32]>,
    need_dx: bool,
) -> Option<Array4<f32>> {
    let (n, cin, h, wid) = x.dim();
    let (ho, wo) = cfg.out_hw(h, wid);
    let l = h * wid;
    let r = cfg.cout * cfg.k * cfg.k;
    debug_assert_eq!(dy.dim(), (n, cfg.cout, ho, wo));
    let xs = x.as_slice().expect("standard layout");
    let dys = dy.as_slice().expect("standard layout");
    let mut dx = need_dx.then(|| Array4::<f32>::zeros((n, cin, h, wid)));
    let mut cols = vec![0.0f32; r * l];
    let wv = view2(w, cfg.cin, r);
    for i in 0..n {
        let dyi = &dys[i * cfg.cout * ho * wo..][..cfg.cout * ho * wo];
        im2col2d(dyi, &mut cols, cfg.cout, ho, wo, cfg.k, cfg.stride, cfg.pad, h, wid);
        let cv = view2(&cols, r, l);
        let xv = view2(&xs[i * cin * l..][..cin * l], cin, l);
        let mut dwv = view2_mut(dw, cfg.cin, r);
        general_mat_mul(1.0, &xv, &cv.t(), 1.0, &mut dwv);
        if let Some(db) = db.as_deref_mut() {
            for co in 0..cfg.cout {
                let mut s = 0.0f32;
                for &v in &dyi[co * ho * wo..][..ho * wo] {
                    s += v;
                }
                db[co] += s;
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxs = dx.as_slice_mut().expect("standard layout");
            let mut dxv = view2_mut(&mut dxs[i * cin * l..][..cin * l], cin, l);
            general_mat_mul(1.0, &wv, &cv, 0.0, &mut dxv);
        }
    }
    dx
}

/// Plain (non-normalized) transposed convolution layer.
#[derive(Debug, Clone)]
pub struct Deconv2d {
    pub cfg: Deconv2dCfg,
    pub w: Param,
    pub b: Param,
}

impl Deconv2d {
    pub fn new(cfg: Deconv2dCfg, rng: &mut ChaCha20Rng, std: f32) -> Self {
        let w = Param::new(normal_init(rng, &[cfg.cin, cfg.cout, cfg.k, cfg.k], std));
        let b = Param::zeros(&[cfg.cout]);
        Deconv2d { cfg, w, b }
    }

    pub fn forward(&self, x: &Array4<f32>) -> Array4<f32> {
        deconv2d_forward(x, self.w.value_slice(), Some(self.b.value_slice()), &self.cfg)
    }

    pub fn backward(&mut self, x: &Array4<f32>, dy: &Array4<f32>, need_dx: bool) -> Option<Array4<f32>> {
        let cfg = self.cfg;
        let w = self.w.v.as_slice().expect("standard layout").to_vec();
        deconv2d_backward(
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

    fn naive_deconv2d(x: &Array4<f32>, w: &[f32], b: &[f32], cfg: &Deconv2dCfg) -> Array4<f32> {
        let (n, cin, h, wid) = x.dim();
        let (ho, wo) = cfg.out_hw(h, wid);
        let mut y = Array4::<f32>::zeros((n, cfg.cout, ho, wo));
        for i in 0..n {
            for co in 0..cfg.cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        y[[i, co, oy, ox]] = b[co];
                    }
                }
            }
            for ci in 0..cin {
                for iy in 0..h {
                    for ix in 0..wid {
                        let xv = x[[i, ci, iy, ix]];
                        for co in 0..cfg.cout {
                            for ky in 0..cfg.k {
                                for kx in 0..cfg.k {
                                    let oy = (iy * cfg.stride + ky) as isize - cfg.pad as isize;
                                    let ox = (ix * cfg.stride + kx) as isize - cfg.pad as isize;
                                    if oy >= 0 && (oy as usize) < ho && ox >= 0 && (ox as usize) < wo {
                                        let wv = w[((ci * cfg.cout + co) * cfg.k + ky) * cfg.k + kx];
                                        y[[i, co, oy as usize, ox as usize]] += wv * xv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn doubles_spatial_size_with_stride_two() {
        let cfg = Deconv2dCfg { cin: 8, cout: 4, k: 4, stride: 2, pad: 1 };
        assert_eq!(cfg.out_hw(4, 4), (8, 8));
        assert_eq!(cfg.out_hw(16, 16), (32, 32));
    }

    #[test]
    fn forward_matches_naive_reference() {
        let mut rng = seed_stream(21, "deconv2d");
        let cfg = Deconv2dCfg { cin: 3, cout: 2, k: 4, stride: 2, pad: 1 };
        let layer = Deconv2d::new(cfg, &mut rng, 0.5);
        let x = normal_init(&mut rng, &[2, 3, 4, 4], 1.0)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let y = layer.forward(&x);
        let y_ref = naive_deconv2d(&x, layer.w.value_slice(), layer.b.value_slice(), &cfg);
        assert_eq!(y.dim(), (2, 2, 8, 8));
        for (a, b) in y.iter().zip(y_ref.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = seed_stream(22, "deconv2d-fd");
        let cfg = Deconv2dCfg { cin: 2, cout: 2, k: 4, stride: 2, pad: 1 };
        let mut layer = Deconv2d::new(cfg, &mut rng, 0.5);
        let x = normal_init(&mut rng, &[1, 2, 3, 3], 1.0)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let rmask = normal_init(&mut rng, &[1, 2, 6, 6], 1.0)
            .into_dimensionality::<ndarray::Ix4>()
            .unwrap();
        let loss = |l: &Deconv2d, x: &Array4<f32>| (l.forward(x) * &rmask).sum();
        let dx = layer.backward(&x, &rmask, true).unwrap();

        let h = 1e-2f32;
        for idx in [0usize, 9, 31, cfg.weight_len() - 1] {
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
        for idx in [0usize, 8, 17] {
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

    #[test]
    fn bias_reaches_every_output_pixel() {
        let cfg = Deconv2dCfg { cin: 1, cout: 1, k: 4, stride: 2, pad: 1 };
        let mut layer = Deconv2d { cfg, w: Param::zeros(&[1, 1, 4, 4]), b: Param::zeros(&[1]) };
        layer.b.v.as_slice_mut().unwrap()[0] = 0.75;
        let x = Array4::<f32>::zeros((1, 1, 4, 4));
        let y = layer.forward(&x);
        assert!(y.iter().all(|&v| (v - 0.75).abs() < 1e-7));
    }
}
