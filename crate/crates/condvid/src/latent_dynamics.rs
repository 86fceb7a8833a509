//! Recurrent motion path: a GRU maps per-frame noise plus the motion label
//! to the sequence of motion codes consumed by the frame generator.
//!
//! The cell is generic over the float type so gradient checks can run in
//! f64, where central differences resolve to the tolerances the checks pin.

use crate::error::{Error, Result};
use crate::nn::ParamVisitor;
use ndarray::{Array2, ArrayView2};
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Gate layout follows the common `(r, z, n)` row blocks:
///
/// ```text
/// r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
/// z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh   (W_in x + b_in + r * (W_hn h + b_hn))
/// h' = (1 - z) * n + z * h
/// ```
#[derive(Debug, Clone)]
pub struct GruCell<F: Float> {
    pub d_in: usize,
    pub d_h: usize,
    /// `[3*d_h, d_in]` flat, row blocks r/z/n.
    pub w_ih: Vec<F>,
    /// `[3*d_h, d_h]` flat, row blocks r/z/n.
    pub w_hh: Vec<F>,
    pub b_ih: Vec<F>,
    pub b_hh: Vec<F>,
    pub gw_ih: Vec<F>,
    pub gw_hh: Vec<F>,
    pub gb_ih: Vec<F>,
    pub gb_hh: Vec<F>,
}

/// Per-step activations needed by the backward pass. `a` is the hidden-side
/// candidate pre-activation `W_hn h + b_hn`.
#[derive(Debug, Clone)]
pub struct GruCache<F> {
    pub x: Vec<F>,
    pub h_prev: Vec<F>,
    pub r: Vec<F>,
    pub z: Vec<F>,
    pub n: Vec<F>,
    pub a: Vec<F>,
}

fn sigmoid_f<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<F: Float> GruCell<F> {
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        GruCell {
            d_in,
            d_h,
            w_ih: vec![F::zero(); 3 * d_h * d_in],
            w_hh: vec![F::zero(); 3 * d_h * d_h],
            b_ih: vec![F::zero(); 3 * d_h],
            b_hh: vec![F::zero(); 3 * d_h],
            gw_ih: vec![F::zero(); 3 * d_h * d_in],
            gw_hh: vec![F::zero(); 3 * d_h * d_h],
            gb_ih: vec![F::zero(); 3 * d_h],
            gb_hh: vec![F::zero(); 3 * d_h],
        }
    }

    /// One step. Returns the new hidden state and the backward cache.
    pub fn step(&self, x: &[F], h: &[F]) -> (Vec<F>, GruCache<F>) {
        let (dh, din) = (self.d_h, self.d_in);
        debug_assert_eq!(x.len(), din);
        debug_assert_eq!(h.len(), dh);
        let mut gi = self.b_ih.clone();
        let mut gh = self.b_hh.clone();
        for row in 0..3 * dh {
            let mut acc = gi[row];
            let wrow = &self.w_ih[row * din..][..din];
            for j in 0..din {
                acc = acc + wrow[j] * x[j];
            }
            gi[row] = acc;
            let mut acc = gh[row];
            let wrow = &self.w_hh[row * dh..][..dh];
            for j in 0..dh {
                acc = acc + wrow[j] * h[j];
            }
            gh[row] = acc;
        }
        let mut r = vec![F::zero(); dh];
        let mut z = vec![F::zero(); dh];
        let mut n = vec![F::zero(); dh];
        let mut a = vec![F::zero(); dh];
        let mut h_new = vec![F::zero(); dh];
        for j in 0..dh {
            r[j] = sigmoid_f(gi[j] + gh[j]);
            z[j] = sigmoid_f(gi[dh + j] + gh[dh + j]);
            a[j] = gh[2 * dh + j];
            n[j] = (gi[2 * dh + j] + r[j] * a[j]).tanh();
            h_new[j] = (F::one() - z[j]) * n[j] + z[j] * h[j];
        }
        let cache = GruCache { x: x.to_vec(), h_prev: h.to_vec(), r, z, n, a };
        (h_new, cache)
    }

    /// Backward through one step. Accumulates weight gradients, writes the
    /// input gradient to `dx`, and adds the hidden-state gradient to
    /// `dh_prev` (which the caller seeds with the skip contribution, zero at
    /// the sequence start).
    pub fn backward_step(&mut self, cache: &GruCache<F>, dh_next: &[F], dx: &mut [F], dh_prev: &mut [F]) {
        let (dh, din) = (self.d_h, self.d_in);
        let one = F::one();
        for v in dx.iter_mut() {
            *v = F::zero();
        }
        for j in 0..dh {
            let (r, z, n, a) = (cache.r[j], cache.z[j], cache.n[j], cache.a[j]);
            let g = dh_next[j];
            let dz = g * (cache.h_prev[j] - n);
            let dn = g * (one - z);
            dh_prev[j] = dh_prev[j] + g * z;
            let dn_pre = dn * (one - n * n);
            let da = dn_pre * r;
            let dr = dn_pre * a;
            let dr_pre = dr * r * (one - r);
            let dz_pre = dz * z * (one - z);
            // (row, hidden-side pre-activation grad) per gate
            for (row, gpre, hside) in [
                (j, dr_pre, dr_pre),
                (dh + j, dz_pre, dz_pre),
                (2 * dh + j, dn_pre, da),
            ] {
                self.gb_ih[row] = self.gb_ih[row] + gpre;
                self.gb_hh[row] = self.gb_hh[row] + hside;
                let wrow = row * din;
                for k in 0..din {
                    self.gw_ih[wrow + k] = self.gw_ih[wrow + k] + gpre * cache.x[k];
                    dx[k] = dx[k] + self.w_ih[wrow + k] * gpre;
                }
                let wrow = row * dh;
                for k in 0..dh {
                    self.gw_hh[wrow + k] = self.gw_hh[wrow + k] + hside * cache.h_prev[k];
                    dh_prev[k] = dh_prev[k] + self.w_hh[wrow + k] * hside;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for g in [&mut self.gw_ih, &mut self.gw_hh, &mut self.gb_ih, &mut self.gb_hh] {
            for v in g.iter_mut() {
                *v = F::zero();
            }
        }
    }
}

/// Unrolls from a zero initial hidden state.
pub fn gru_unroll<F: Float>(cell: &GruCell<F>, xs: &[Vec<F>]) -> (Vec<Vec<F>>, Vec<GruCache<F>>) {
    let mut h = vec![F::zero(); cell.d_h];
    let mut hs = Vec::with_capacity(xs.len());
    let mut caches = Vec::with_capacity(xs.len());
    for x in xs {
        let (h_new, cache) = cell.step(x, &h);
        h = h_new.clone();
        hs.push(h_new);
        caches.push(cache);
    }
    (hs, caches)
}

/// Backpropagation through time over a full unroll. `dhs[t]` is the loss
/// gradient on hidden state `t`; returns the input gradients.
pub fn gru_bptt<F: Float>(cell: &mut GruCell<F>, caches: &[GruCache<F>], dhs: &[Vec<F>]) -> Vec<Vec<F>> {
    assert_eq!(caches.len(), dhs.len());
    let t_len = caches.len();
    let mut dxs = vec![vec![F::zero(); cell.d_in]; t_len];
    let mut carry = vec![F::zero(); cell.d_h];
    for t in (0..t_len).rev() {
        let mut dh_total = dhs[t].clone();
        for (d, &c) in dh_total.iter_mut().zip(&carry) {
            *d = *d + c;
        }
        let mut dh_prev = vec![F::zero(); cell.d_h];
        cell.backward_step(&caches[t], &dh_total, &mut dxs[t], &mut dh_prev);
        carry = dh_prev;
    }
    dxs
}

/// Motion-path generator: at each frame the GRU consumes per-frame noise
/// concatenated with the one-hot motion label and emits the motion code.
/// The hidden size equals the motion code dimension.
#[derive(Debug, Clone)]
pub struct MotionPathGenerator {
    pub d_m: usize,
    pub n_motion: usize,
    pub cell: GruCell<f32>,
}

impl MotionPathGenerator {
    pub fn new(d_m: usize, n_motion: usize, rng: &mut ChaCha20Rng) -> Self {
        let mut cell = GruCell::<f32>::zeros(d_m + n_motion, d_m);
        let bound = 1.0 / (d_m as f32).sqrt();
        for w in [&mut cell.w_ih, &mut cell.w_hh, &mut cell.b_ih, &mut cell.b_hh] {
            for v in w.iter_mut() {
                *v = rng.random::<f32>() * 2.0 * bound - bound;
            }
        }
        MotionPathGenerator { d_m, n_motion, cell }
    }

    /// GRU input width: noise dimension plus one-hot label width.
    pub fn input_dim(&self) -> usize {
        self.d_m + self.n_motion
    }

    /// Maps noise `[frames, d_m]` and a one-hot motion label to motion codes
    /// `[frames, d_m]`, with the caches needed for the backward pass.
    pub fn unroll(&self, eps_m: ArrayView2<f32>, y_m: &[f32]) -> Result<(Array2<f32>, Vec<GruCache<f32>>)> {
        let (frames, d) = (eps_m.nrows(), eps_m.ncols());
        if d != self.d_m {
            return Err(Error::shape(format!("motion noise dim {d}, expected {}", self.d_m)));
        }
        if y_m.len() != self.n_motion {
            return Err(Error::shape(format!(
                "motion label width {}, expected {}",
                y_m.len(),
                self.n_motion
            )));
        }
        let xs: Vec<Vec<f32>> = (0..frames)
            .map(|t| {
                let mut x = Vec::with_capacity(self.input_dim());
                x.extend(eps_m.row(t).iter().copied());
                x.extend_from_slice(y_m);
                x
            })
            .collect();
        let (hs, caches) = gru_unroll(&self.cell, &xs);
        let mut z = Array2::<f32>::zeros((frames, self.d_m));
        for (t, h) in hs.iter().enumerate() {
            z.row_mut(t).iter_mut().zip(h).for_each(|(o, &v)| *o = v);
        }
        Ok((z, caches))
    }

    /// Backward through the unroll: accumulates cell gradients and returns
    /// the gradient on the noise block of each input.
    pub fn backward(&mut self, caches: &[GruCache<f32>], dz: &Array2<f32>) -> Array2<f32> {
        let frames = caches.len();
        debug_assert_eq!(dz.nrows(), frames);
        let dhs: Vec<Vec<f32>> = (0..frames).map(|t| dz.row(t).to_vec()).collect();
        let dxs = gru_bptt(&mut self.cell, caches, &dhs);
        let mut d_eps = Array2::<f32>::zeros((frames, self.d_m));
        for (t, dx) in dxs.iter().enumerate() {
            d_eps.row_mut(t).iter_mut().zip(&dx[..self.d_m]).for_each(|(o, &v)| *o = v);
        }
        d_eps
    }

    pub fn zero_grads(&mut self) {
        self.cell.zero_grads();
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        let (dh, din) = (self.cell.d_h, self.cell.d_in);
        f(&format!("{prefix}.w_ih"), &[3 * dh, din], &mut self.cell.w_ih, &mut self.cell.gw_ih);
        f(&format!("{prefix}.w_hh"), &[3 * dh, dh], &mut self.cell.w_hh, &mut self.cell.gw_hh);
        f(&format!("{prefix}.b_ih"), &[3 * dh], &mut self.cell.b_ih, &mut self.cell.gb_ih);
        f(&format!("{prefix}.b_hh"), &[3 * dh], &mut self.cell.b_hh, &mut self.cell.gb_hh);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seed_stream, standard_normal_mat};
    use crate::types::one_hot;

    #[test]
    fn input_width_is_noise_plus_label() {
        let mut rng = seed_stream(50, "gru");
        let gen = MotionPathGenerator::new(30, 4, &mut rng);
        assert_eq!(gen.input_dim(), 34);
        assert_eq!(gen.cell.d_in, 34);
        assert_eq!(gen.cell.d_h, 30);
    }

    #[test]
    fn zero_cell_halves_hidden_state() {
        // All-zero parameters: r = z = 1/2, n = 0, so h' = h/2 for any input.
        let cell = GruCell::<f32>::zeros(3, 4);
        let h = vec![0.8f32, -0.4, 1.0, 0.0];
        let x = vec![5.0f32, -2.0, 0.3];
        let (h2, _) = cell.step(&x, &h);
        for (a, b) in h2.iter().zip(&h) {
            assert!((a - 0.5 * b).abs() < 1e-7, "{a} vs {}", 0.5 * b);
        }
    }

    #[test]
    fn unroll_shape_and_determinism() {
        let mut rng = seed_stream(51, "gru-det");
        let gen = MotionPathGenerator::new(30, 4, &mut rng);
        let eps = standard_normal_mat(&mut seed_stream(7, "eps"), 16, 30);
        let y = one_hot(2, 4).unwrap();
        let (z1, _) = gen.unroll(eps.view(), y.as_slice().unwrap()).unwrap();
        let (z2, _) = gen.unroll(eps.view(), y.as_slice().unwrap()).unwrap();
        assert_eq!(z1.dim(), (16, 30));
        assert_eq!(z1, z2);
    }

    #[test]
    fn single_frame_unroll_equals_one_step() {
        let mut rng = seed_stream(52, "gru-t1");
        let gen = MotionPathGenerator::new(6, 3, &mut rng);
        let eps = standard_normal_mat(&mut seed_stream(8, "eps"), 1, 6);
        let y = one_hot(1, 3).unwrap();
        let (z, _) = gen.unroll(eps.view(), y.as_slice().unwrap()).unwrap();
        let mut x = eps.row(0).to_vec();
        x.extend(y.iter().copied());
        let (h, _) = gen.cell.step(&x, &vec![0.0; 6]);
        for (a, b) in z.row(0).iter().zip(&h) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn unroll_composes_single_steps() {
        let mut rng = seed_stream(53, "gru-comp");
        let gen = MotionPathGenerator::new(5, 2, &mut rng);
        let eps = standard_normal_mat(&mut seed_stream(9, "eps"), 7, 5);
        let y = one_hot(0, 2).unwrap();
        let (z, _) = gen.unroll(eps.view(), y.as_slice().unwrap()).unwrap();
        let mut h = vec![0.0f32; 5];
        for t in 0..7 {
            let mut x = eps.row(t).to_vec();
            x.extend(y.iter().copied());
            let (h2, _) = gen.cell.step(&x, &h);
            h = h2;
            for (a, b) in z.row(t).iter().zip(&h) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn motion_label_changes_the_path() {
        let mut rng = seed_stream(54, "gru-label");
        let gen = MotionPathGenerator::new(8, 4, &mut rng);
        let eps = standard_normal_mat(&mut seed_stream(10, "eps"), 4, 8);
        let (za, _) = gen.unroll(eps.view(), one_hot(0, 4).unwrap().as_slice().unwrap()).unwrap();
        let (zb, _) = gen.unroll(eps.view(), one_hot(3, 4).unwrap().as_slice().unwrap()).unwrap();
        let max_diff = za
            .iter()
            .zip(zb.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_diff > 1e-4, "label had no effect ({max_diff})");
    }

    #[test]
    fn hidden_state_stays_in_unit_interval() {
        // h' is a convex combination of h and a tanh output, so |h| <= 1 by
        // induction from h0 = 0 regardless of weight scale (tanh saturates
        // to exactly +-1.0 in f32, so the closed bound is the right one).
        let mut rng = seed_stream(55, "gru-bound");
        for trial in 0..5 {
            let mut gen = MotionPathGenerator::new(10, 3, &mut rng);
            for v in gen.cell.w_ih.iter_mut().chain(gen.cell.w_hh.iter_mut()) {
                *v *= 25.0;
            }
            let eps = standard_normal_mat(&mut seed_stream(100 + trial, "eps"), 16, 10);
            let (z, _) = gen.unroll(eps.view(), one_hot(1, 3).unwrap().as_slice().unwrap()).unwrap();
            assert!(z.iter().all(|v| v.abs() <= 1.0), "trial {trial}");
        }
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut rng = seed_stream(56, "gru-err");
        let gen = MotionPathGenerator::new(6, 3, &mut rng);
        let eps = standard_normal_mat(&mut seed_stream(11, "eps"), 4, 5);
        assert!(gen.unroll(eps.view(), &[1.0, 0.0, 0.0]).is_err());
        let eps = standard_normal_mat(&mut seed_stream(11, "eps"), 4, 6);
        assert!(gen.unroll(eps.view(), &[1.0, 0.0]).is_err());
    }

    /// Full BPTT gradient check in f64 against central differences.
    #[test]
    fn bptt_gradients_match_finite_differences() {
        let mut rng = seed_stream(57, "gru-fd");
        let (din, dh, t_len) = (5, 4, 3);
        let mut cell = GruCell::<f64>::zeros(din, dh);
        for w in [&mut cell.w_ih, &mut cell.w_hh, &mut cell.b_ih, &mut cell.b_hh] {
            for v in w.iter_mut() {
                *v = (rng.random::<f64>() - 0.5) * 1.6;
            }
        }
        let xs: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..din).map(|_| (rng.random::<f64>() - 0.5) * 2.0).collect())
            .collect();
        let rmask: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..dh).map(|_| (rng.random::<f64>() - 0.5) * 2.0).collect())
            .collect();
        let loss = |cell: &GruCell<f64>, xs: &[Vec<f64>]| -> f64 {
            let (hs, _) = gru_unroll(cell, xs);
            hs.iter()
                .zip(&rmask)
                .map(|(h, r)| h.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        };
        let (_, caches) = gru_unroll(&cell, &xs);
        let dxs = gru_bptt(&mut cell, &caches, &rmask);

        let step = 1e-6f64;
        let rel = |fd: f64, an: f64| (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);

        let check_weight = |get: &dyn Fn(&GruCell<f64>) -> &Vec<f64>,
                                getg: &dyn Fn(&GruCell<f64>) -> &Vec<f64>,
                                name: &str| {
            let len = get(&cell).len();
            for idx in (0..len).step_by((len / 7).max(1)) {
                let mut c2 = cell.clone();
                let getm: &dyn Fn(&mut GruCell<f64>) -> *mut f64 = &|c| match name {
                    "w_ih" => c.w_ih.as_mut_ptr(),
                    "w_hh" => c.w_hh.as_mut_ptr(),
                    "b_ih" => c.b_ih.as_mut_ptr(),
                    _ => c.b_hh.as_mut_ptr(),
                };
                unsafe {
                    *getm(&mut c2).add(idx) += step;
                }
                let lp = loss(&c2, &xs);
                unsafe {
                    *getm(&mut c2).add(idx) -= 2.0 * step;
                }
                let lm = loss(&c2, &xs);
                let fd = (lp - lm) / (2.0 * step);
                let an = getg(&cell)[idx];
                assert!(rel(fd, an) < 1e-4, "{name}[{idx}]: fd {fd} vs analytic {an}");
            }
        };
        check_weight(&|c| &c.w_ih, &|c| &c.gw_ih, "w_ih");
        check_weight(&|c| &c.w_hh, &|c| &c.gw_hh, "w_hh");
        check_weight(&|c| &c.b_ih, &|c| &c.gb_ih, "b_ih");
        check_weight(&|c| &c.b_hh, &|c| &c.gb_hh, "b_hh");

        for t in 0..t_len {
            for k in 0..din {
                let mut xp = xs.clone();
                xp[t][k] += step;
                let lp = loss(&cell, &xp);
                xp[t][k] -= 2.0 * step;
                let lm = loss(&cell, &xp);
                let fd = (lp - lm) / (2.0 * step);
                let an = dxs[t][k];
                assert!(rel(fd, an) < 1e-4, "dx[{t}][{k}]: fd {fd} vs analytic {an}");
            }
        }
    }
}
