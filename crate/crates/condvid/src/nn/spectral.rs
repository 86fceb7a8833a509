//! Spectral normalization: weights are divided by their largest singular
//! value, estimated by power iteration on the weight viewed as a 2-D matrix
//! (convolution kernels reshape to `[out_channels, rest]`).
//!
//! Training refreshes the estimate with one warm-started iteration per step.
//! Test paths iterate to convergence (never fewer than five iterations), so
//! the normalized weight's true spectral norm lands within a tight tolerance
//! of one.

use super::conv2d::{conv2d_backward, conv2d_forward, Conv2dCfg};
use super::conv3d::{conv3d_backward, conv3d_forward, Conv3dCfg};
use super::linear::{linear_backward, linear_forward, LinearCfg};
use super::{normal_init, visit_param, Param, ParamVisitor, StateVisitor};
use ndarray::{Array2, Array4, Array5};
use rand_chacha::ChaCha20Rng;

/// Floor on iteration counts used by the convergence mode.
pub const MIN_POWER_ITERS: usize = 5;
/// Relative successive-difference tolerance for the convergence mode.
pub const POWER_TOL: f32 = 1e-7;
const MAX_POWER_ITERS: usize = 20_000;
const SIGMA_FLOOR: f32 = 1e-12;

/// Left/right singular-vector estimates carried across steps.
#[derive(Debug, Clone)]
pub struct SpectralState {
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl SpectralState {
    pub fn new(rows: usize, cols: usize, rng: &mut ChaCha20Rng) -> Self {
        let mut u: Vec<f32> = normal_init(rng, &[rows], 1.0).into_raw_vec_and_offset().0;
        normalize_vec(&mut u);
        SpectralState { u, v: vec![0.0; cols] }
    }
}

fn normalize_vec(x: &mut [f32]) {
    let n: f32 = x.iter().map(|v| v * v).sum::<f32>().sqrt();
    if n > SIGMA_FLOOR {
        for v in x {
            *v /= n;
        }
    }
}

/// Runs `iters` power iterations of `v <- norm(W^T u)`, `u <- norm(W v)` on
/// `w` viewed as `[rows, cols]`, then returns the Rayleigh estimate
/// `sigma = u^T W v`.
pub fn power_iterate(w: &[f32], rows: usize, cols: usize, state: &mut SpectralState, iters: usize) -> f32 {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(state.u.len(), rows);
    debug_assert_eq!(state.v.len(), cols);
    for _ in 0..iters {
        // v = norm(W^T u)
        state.v.fill(0.0);
        for r in 0..rows {
            let ur = state.u[r];
            let wrow = &w[r * cols..][..cols];
            for c in 0..cols {
                state.v[c] += wrow[c] * ur;
            }
        }
        normalize_vec(&mut state.v);
        // u = norm(W v)
        for r in 0..rows {
            let wrow = &w[r * cols..][..cols];
            let mut acc = 0.0f32;
            for c in 0..cols {
                acc += wrow[c] * state.v[c];
            }
            state.u[r] = acc;
        }
        normalize_vec(&mut state.u);
    }
    let mut sigma = 0.0f32;
    for r in 0..rows {
        let wrow = &w[r * cols..][..cols];
        let mut acc = 0.0f32;
        for c in 0..cols {
            acc += wrow[c] * state.v[c];
        }
        sigma += state.u[r] * acc;
    }
    sigma
}

/// Fixed-count normalization: `w_hat = w / sigma` after exactly `iters`
/// power iterations (the training path uses one, warm-started).
pub fn spectral_normalize(
    w: &[f32],
    rows: usize,
    cols: usize,
    state: &mut SpectralState,
    iters: usize,
    w_hat: &mut [f32],
) -> f32 {
    let sigma = power_iterate(w, rows, cols, state, iters);
    let denom = sigma.max(SIGMA_FLOOR);
    for (o, &v) in w_hat.iter_mut().zip(w) {
        *o = v / denom;
    }
    sigma
}

/// Convergence-mode normalization: iterates until the Rayleigh estimate
/// stabilizes to a relative successive difference below [`POWER_TOL`], with
/// at least [`MIN_POWER_ITERS`] iterations. Returns `(sigma, iterations)`.
pub fn spectral_normalize_converged(
    w: &[f32],
    rows: usize,
    cols: usize,
    state: &mut SpectralState,
    w_hat: &mut [f32],
) -> (f32, usize) {
    let mut sigma = power_iterate(w, rows, cols, state, MIN_POWER_ITERS);
    let mut iters = MIN_POWER_ITERS;
    while iters < MAX_POWER_ITERS {
        let next = power_iterate(w, rows, cols, state, 1);
        iters += 1;
        let diff = (next - sigma).abs();
        sigma = next;
        if diff <= POWER_TOL * sigma.max(SIGMA_FLOOR) {
            break;
        }
    }
    let denom = sigma.max(SIGMA_FLOOR);
    for (o, &v) in w_hat.iter_mut().zip(w) {
        *o = v / denom;
    }
    (sigma, iters)
}

/// Chains a gradient on the normalized weight back to the raw weight:
/// `dW = (dW_hat - (dW_hat . W_hat) u v^T) / sigma`, with `u`, `v` treated
/// as constants of the estimate.
fn chain_spectral_grad(
    dw_hat: &[f32],
    w_hat: &[f32],
    sigma: f32,
    state: &SpectralState,
    rows: usize,
    cols: usize,
    dw: &mut [f32],
) {
    let denom = sigma.max(SIGMA_FLOOR);
    let mut dot = 0.0f32;
    for (a, b) in dw_hat.iter().zip(w_hat) {
        dot += a * b;
    }
    for r in 0..rows {
        let ur = state.u[r];
        for c in 0..cols {
            dw[r * cols + c] += (dw_hat[r * cols + c] - dot * ur * state.v[c]) / denom;
        }
    }
}

macro_rules! sn_layer {
    ($name:ident, $cfg:ty, $arr:ty, $fwd:path, $bwd:path, $rows:expr, $wshape:expr) => {
        #[derive(Debug, Clone)]
        pub struct $name {
            pub cfg: $cfg,
            pub w: Param,
            pub b: Param,
            pub state: SpectralState,
            pub w_hat: Vec<f32>,
            pub sigma: f32,
        }

        impl $name {
            pub fn new(cfg: $cfg, rng: &mut ChaCha20Rng, std: f32) -> Self {
                let wshape: Vec<usize> = $wshape(&cfg);
                let w = Param::new(normal_init(rng, &wshape, std));
                let rows = $rows(&cfg);
                let cols = w.len() / rows;
                let b_len = rows;
                let state = SpectralState::new(rows, cols, rng);
                let mut layer = $name {
                    cfg,
                    w,
                    b: Param::zeros(&[b_len]),
                    state,
                    w_hat: vec![0.0; rows * cols],
                    sigma: 0.0,
                };
                layer.normalize(1);
                layer
            }

            pub fn rows(&self) -> usize {
                $rows(&self.cfg)
            }

            pub fn cols(&self) -> usize {
                self.w.len() / self.rows()
            }

            /// Refreshes the cached normalized weight with `iters` power
            /// iterations (training uses 1 per step, warm-started).
            pub fn normalize(&mut self, iters: usize) {
                let (rows, cols) = (self.rows(), self.cols());
                self.sigma = spectral_normalize(
                    self.w.v.as_slice().expect("standard layout"),
                    rows,
                    cols,
                    &mut self.state,
                    iters,
                    &mut self.w_hat,
                );
            }

            /// Iterates the estimate to convergence (at least
            /// [`MIN_POWER_ITERS`] iterations) before normalizing.
            pub fn normalize_converged(&mut self) -> (f32, usize) {
                let (rows, cols) = (self.rows(), self.cols());
                let (sigma, iters) = spectral_normalize_converged(
                    self.w.v.as_slice().expect("standard layout"),
                    rows,
                    cols,
                    &mut self.state,
                    &mut self.w_hat,
                );
                self.sigma = sigma;
                (sigma, iters)
            }

            /// Pure forward through the cached normalized weight.
            pub fn forward(&self, x: &$arr) -> $arr {
                $fwd(x, &self.w_hat, Some(self.b.value_slice()), &self.cfg)
            }

            /// Backward through the cached normalized weight, chaining the
            /// normalization into the raw weight gradient.
            pub fn backward(&mut self, x: &$arr, dy: &$arr, need_dx: bool) -> Option<$arr> {
                let (rows, cols) = (self.rows(), self.cols());
                let mut dw_hat = vec![0.0f32; rows * cols];
                let dx = $bwd(
                    x,
                    dy,
                    &self.w_hat,
                    &self.cfg,
                    &mut dw_hat,
                    Some(self.b.grad_slice_mut()),
                    need_dx,
                );
                chain_spectral_grad(
                    &dw_hat,
                    &self.w_hat,
                    self.sigma,
                    &self.state,
                    rows,
                    cols,
                    self.w.g.as_slice_mut().expect("standard layout"),
                );
                dx
            }

            pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
                visit_param(&mut self.w, &format!("{prefix}.w"), f);
                visit_param(&mut self.b, &format!("{prefix}.b"), f);
            }

            /// Power-iteration vectors, for checkpointing.
            pub fn visit_state(&mut self, prefix: &str, f: &mut StateVisitor) {
                let (rows, cols) = (self.rows(), self.cols());
                f(&format!("{prefix}.sn_u"), &[rows], &mut self.state.u);
                f(&format!("{prefix}.sn_v"), &[cols], &mut self.state.v);
            }
        }
    };
}

sn_layer!(
    SnLinear,
    LinearCfg,
    Array2<f32>,
    linear_forward,
    linear_backward,
    |c: &LinearCfg| c.d_out,
    |c: &LinearCfg| vec![c.d_out, c.d_in]
);
sn_layer!(
    SnConv2d,
    Conv2dCfg,
    Array4<f32>,
    conv2d_forward,
    conv2d_backward,
    |c: &Conv2dCfg| c.cout,
    |c: &Conv2dCfg| vec![c.cout, c.cin, c.k, c.k]
);
sn_layer!(
    SnConv3d,
    Conv3dCfg,
    Array5<f32>,
    conv3d_forward,
    conv3d_backward,
    |c: &Conv3dCfg| c.cout,
    |c: &Conv3dCfg| vec![c.cout, c.cin, c.k.0, c.k.1, c.k.2]
);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_stream;
    use nalgebra::DMatrix;

    fn svd_sigma_max(w: &[f32], rows: usize, cols: usize) -> f32 {
        let m = DMatrix::from_row_slice(rows, cols, &w.iter().map(|&v| v as f64).collect::<Vec<_>>());
        m.svd(false, false).singular_values[0] as f32
    }

    #[test]
    fn diagonal_matrix_with_aligned_start_converges_in_one_iteration() {
        // W = diag(3, 1): after one iteration from u aligned with e1 the
        // estimate is exact.
        let w = vec![3.0f32, 0.0, 0.0, 1.0];
        let mut state = SpectralState { u: vec![1.0, 0.0], v: vec![0.0, 0.0] };
        let mut w_hat = vec![0.0f32; 4];
        let sigma = spectral_normalize(&w, 2, 2, &mut state, 1, &mut w_hat);
        assert!((sigma - 3.0).abs() < 1e-6);
        assert!((w_hat[0] - 1.0).abs() < 1e-6);
        assert!((w_hat[3] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_matrix_is_left_unchanged() {
        // Rotation matrices have every singular value equal to one.
        let (c, s) = (0.6f32, 0.8f32);
        let w = vec![c, -s, s, c];
        let mut rng = seed_stream(70, "sn");
        let mut state = SpectralState::new(2, 2, &mut rng);
        let mut w_hat = vec![0.0f32; 4];
        let (sigma, _) = spectral_normalize_converged(&w, 2, 2, &mut state, &mut w_hat);
        assert!((sigma - 1.0).abs() < 1e-5);
        for (a, b) in w_hat.iter().zip(&w) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn converged_estimate_matches_svd_oracle() {
        let mut rng = seed_stream(71, "sn-svd");
        for trial in 0..10 {
            let rows = 8 + (trial % 5) * 13;
            let cols = 6 + (trial % 7) * 11;
            let w = normal_init(&mut rng, &[rows, cols], 1.0).into_raw_vec_and_offset().0;
            let mut state = SpectralState::new(rows, cols, &mut rng);
            let mut w_hat = vec![0.0f32; rows * cols];
            let (sigma, iters) = spectral_normalize_converged(&w, rows, cols, &mut state, &mut w_hat);
            assert!(iters >= MIN_POWER_ITERS);
            let oracle = svd_sigma_max(&w, rows, cols);
            assert!(
                (sigma - oracle).abs() <= 1e-3 * oracle,
                "trial {trial}: power {sigma} vs svd {oracle} ({iters} iters)"
            );
            let norm_after = svd_sigma_max(&w_hat, rows, cols);
            assert!(
                (norm_after - 1.0).abs() <= 1e-3,
                "trial {trial}: normalized spectral norm {norm_after}"
            );
        }
    }

    #[test]
    fn normalized_layer_is_one_lipschitz() {
        // ||W_hat x|| <= (1 + tol) ||x|| for unit test vectors.
        let mut rng = seed_stream(72, "sn-lip");
        let cfg = LinearCfg { d_in: 40, d_out: 24 };
        let mut layer = SnLinear::new(cfg, &mut rng, 1.0);
        layer.normalize_converged();
        for _ in 0..20 {
            let mut x = normal_init(&mut rng, &[40], 1.0).into_raw_vec_and_offset().0;
            let n: f32 = x.iter().map(|v| v * v).sum::<f32>().sqrt();
            for v in &mut x {
                *v /= n;
            }
            let xa = Array2::from_shape_vec((1, 40), x).unwrap();
            let mut y = linear_forward(&xa, &layer.w_hat, None, &cfg);
            let yn: f32 = y.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!(yn <= 1.0 + 1e-3, "output norm {yn}");
            y.fill(0.0);
        }
    }

    #[test]
    fn zero_weight_is_left_as_zero() {
        let w = vec![0.0f32; 12];
        let mut rng = seed_stream(73, "sn-zero");
        let mut state = SpectralState::new(3, 4, &mut rng);
        let mut w_hat = vec![1.0f32; 12];
        let sigma = spectral_normalize(&w, 3, 4, &mut state, 3, &mut w_hat);
        assert_eq!(sigma, 0.0);
        assert!(w_hat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn warm_start_tracks_slow_weight_drift() {
        // One iteration per "step" on a slowly changing matrix keeps the
        // estimate close to the oracle, the training-mode contract.
        let mut rng = seed_stream(74, "sn-warm");
        let (rows, cols) = (16, 16);
        let mut w = normal_init(&mut rng, &[rows, cols], 1.0).into_raw_vec_and_offset().0;
        let mut state = SpectralState::new(rows, cols, &mut rng);
        let mut w_hat = vec![0.0f32; rows * cols];
        // settle once
        spectral_normalize_converged(&w, rows, cols, &mut state, &mut w_hat);
        for step in 0..50 {
            for v in w.iter_mut() {
                *v += 0.001 * ((step as f32) % 7.0 - 3.0);
            }
            let sigma = spectral_normalize(&w, rows, cols, &mut state, 1, &mut w_hat);
            let oracle = svd_sigma_max(&w, rows, cols);
            assert!(
                (sigma - oracle).abs() <= 0.02 * oracle,
                "step {step}: {sigma} vs {oracle}"
            );
        }
    }

    #[test]
    fn spectral_gradient_matches_finite_differences() {
        let mut rng = seed_stream(75, "sn-fd");
        let cfg = LinearCfg { d_in: 5, d_out: 4 };
        let mut layer = SnLinear::new(cfg, &mut rng, 0.8);
        layer.normalize_converged();
        let x = normal_init(&mut rng, &[3, 5], 1.0)
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        let rmask = normal_init(&mut rng, &[3, 4], 1.0)
            .into_dimensionality::<ndarray::Ix2>()
            .unwrap();
        // loss(W) with full re-convergence per evaluation
        let loss = |layer: &SnLinear, x: &Array2<f32>| -> f32 {
            let mut l2 = layer.clone();
            l2.normalize_converged();
            (l2.forward(x) * &rmask).sum()
        };
        let dx = layer.backward(&x, &rmask, true).unwrap();
        let h = 1e-2f32;
        for idx in [0usize, 7, 13, 19] {
            let orig = layer.w.v.as_slice().unwrap()[idx];
            layer.w.v.as_slice_mut().unwrap()[idx] = orig + h;
            let lp = loss(&layer, &x);
            layer.w.v.as_slice_mut().unwrap()[idx] = orig - h;
            let lm = loss(&layer, &x);
            layer.w.v.as_slice_mut().unwrap()[idx] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = layer.w.g.as_slice().unwrap()[idx];
            assert!(
                (fd - an).abs() < 5e-2 * fd.abs().max(0.5),
                "dw[{idx}]: fd {fd} vs analytic {an}"
            );
        }
        // dx flows through w_hat only; compare against FD with fixed w_hat
        for idx in [0usize, 6, 14] {
            let mut xp = x.clone();
            let orig = xp.as_slice().unwrap()[idx];
            xp.as_slice_mut().unwrap()[idx] = orig + h;
            let lp = (layer.forward(&xp) * &rmask).sum();
            xp.as_slice_mut().unwrap()[idx] = orig - h;
            let lm = (layer.forward(&xp) * &rmask).sum();
            let fd = (lp - lm) / (2.0 * h);
            let an = dx.as_slice().unwrap()[idx];
            assert!(
                (fd - an).abs() < 2e-2 * fd.abs().max(0.5),
                "dx[{idx}]: fd {fd} vs analytic {an}"
            );
        }
    }
}
