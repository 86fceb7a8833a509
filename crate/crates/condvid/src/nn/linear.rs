//! Fully connected layer: `y = x W^T + b` over batched row vectors.

use super::{normal_init, view2, view2_mut, visit_param, Param, ParamVisitor};
use ndarray::linalg::general_mat_mul;
use ndarray::Array2;
use rand_chacha::ChaCha20Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearCfg {
    pub d_in: usize,
    pub d_out: usize,
}

/// Forward pass with an explicit weight slice `[d_out, d_in]`.
pub fn linear_forward(x: &Array2<f32>, w: &[f32], b: Option<&[f32]>, cfg: &LinearCfg) -> Array2<f32> {
    let (n, d) = x.dim();
    assert_eq!(d, cfg.d_in, "linear input width");
    let mut y = Array2::<f32>::zeros((n, cfg.d_out));
    let wv = view2(w, cfg.d_out, cfg.d_in);
    general_mat_mul(1.0, x, &wv.t(), 0.0, &mut y);
    if let Some(bias) = b {
        for mut row in y.rows_mut() {
            for (v, &bv) in row.iter_mut().zip(bias) {
                *v += bv;
            }
        }
    }
    y
}

/// Backward pass: accumulates `dw [d_out, d_in]` and `db [d_out]`, returns
/// `dx` when requested.
pub fn linear_backward(
    x: &Array2<f32>,
    dy: &Array2<f32>,
    w: &[f32],
    cfg: &LinearCfg,
    dw: &mut [f32],
    db: Option<&mut [f32]>,
    need_dx: bool,
) -> Option<Array2<f32>> {
    let mut dwv = view2_mut(dw, cfg.d_out, cfg.d_in);
    general_mat_mul(1.0, &dy.t(), x, 1.0, &mut dwv);
    if let Some(db) = db {
        for row in dy.rows() {
            for (g, &v) in db.iter_mut().zip(row) {
                *g += v;
            }
        }
    }
    if need_dx {
        let wv = view2(w, cfg.d_out, cfg.d_in);
        let mut dx = Array2::<f32>::zeros(x.dim());
        general_mat_mul(1.0, dy, &wv, 0.0, &mut dx);
        Some(dx)
    } else {
        None
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub cfg: LinearCfg,
    pub w: Param,
    pub b: Param,
}

impl Linear {
    pub fn new(cfg: LinearCfg, rng: &mut ChaCha20Rng, std: f32) -> Self {
        let w = Param::new(normal_init(rng, &[cfg.d_out, cfg.d_in], std));
        let b = Param::zeros(&[cfg.d_out]);
        Linear { cfg, w, b }
    }

    pub fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        linear_forward(x, self.w.value_slice(), Some(self.b.value_slice()), &self.cfg)
    }

    pub fn backward(&mut self, x: &Array2<f32>, dy: &Array2<f32>, need_dx: bool) -> Option<Array2<f32>> {
        let cfg = self.cfg;
        let w = self.w.v.as_slice().expect("standard layout").to_vec();
        linear_backward(
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
