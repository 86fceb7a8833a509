//! Batch normalization over the channel axis of `[n, c, spatial...]`
//! tensors, operating on flat slices so 2-D, 4-D and 5-D callers share one
//! implementation. Batch statistics normalize in training mode; running
//! estimates (updated with the unbiased variance) normalize in eval mode.

use super::{visit_param, Param, ParamVisitor, StateVisitor};
use ndarray::ArrayD;

#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub c: usize,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub eps: f32,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        BatchNorm {
            c,
            gamma: Param::new(ArrayD::ones(ndarray::IxDyn(&[c]))),
            beta: Param::zeros(&[c]),
            running_mean: vec![0.0; c],
            running_var: vec![1.0; c],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    /// Training-mode forward over `x [n, c, s]` (flat). Returns the output
    /// and the cache needed by `backward`; updates running statistics.
    pub fn forward_train(&mut self, x: &[f32], n: usize, s: usize) -> (Vec<f32>, BnCache) {
        let c = self.c;
        debug_assert_eq!(x.len(), n * c * s);
        let m = n * s;
        let gamma = self.gamma.v.as_slice().expect("standard layout");
        let beta = self.beta.v.as_slice().expect("standard layout");
        let mut y = vec![0.0f32; x.len()];
        let mut xhat = vec![0.0f32; x.len()];
        let mut inv_std = vec![0.0f32; c];
        for ch in 0..c {
            let mut sum = 0.0f64;
            for i in 0..n {
                for &v in &x[(i * c + ch) * s..][..s] {
                    sum += v as f64;
                }
            }
            let mean = sum / m as f64;
            let mut ssq = 0.0f64;
            for i in 0..n {
                for &v in &x[(i * c + ch) * s..][..s] {
                    let d = v as f64 - mean;
                    ssq += d * d;
                }
            }
            let var_b = ssq / m as f64;
            let var_u = if m > 1 { ssq / (m - 1) as f64 } else { 0.0 };
            self.running_mean[ch] =
                (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean as f32;
            self.running_var[ch] =
                (1.0 - self.momentum) * self.running_var[ch] + self.momentum * var_u as f32;
            let istd = 1.0 / (var_b as f32 + self.eps).sqrt();
            inv_std[ch] = istd;
            let (g, b, mf) = (gamma[ch], beta[ch], mean as f32);
            for i in 0..n {
                let base = (i * c + ch) * s;
                for j in 0..s {
                    let xh = (x[base + j] - mf) * istd;
                    xhat[base + j] = xh;
                    y[base + j] = g * xh + b;
                }
            }
        }
        (y, BnCache { xhat, inv_std })
    }

    /// Eval-mode forward using running statistics; pure.
    pub fn forward_eval(&self, x: &[f32], n: usize, s: usize) -> Vec<f32> {
        let c = self.c;
        debug_assert_eq!(x.len(), n * c * s);
        let gamma = self.gamma.v.as_slice().expect("standard layout");
        let beta = self.beta.v.as_slice().expect("standard layout");
        let mut y = vec![0.0f32; x.len()];
        for ch in 0..c {
            let istd = 1.0 / (self.running_var[ch] + self.eps).sqrt();
            let (g, b, mf) = (gamma[ch], beta[ch], self.running_mean[ch]);
            for i in 0..n {
                let base = (i * c + ch) * s;
                for j in 0..s {
                    y[base + j] = g * (x[base + j] - mf) * istd + b;
                }
            }
        }
        y
    }

    /// Backward through the training-mode forward. Accumulates dgamma/dbeta
    /// and returns dx.
    pub fn backward(&mut self, dy: &[f32], cache: &BnCache, n: usize, s: usize) -> Vec<f32> {
        let c = self.c;
        debug_assert_eq!(dy.len(), n * c * s);
        let m = (n * s) as f32;
        let gamma = self.gamma.v.as_slice().expect("standard layout").to_vec();
        let dgamma = self.gamma.g.as_slice_mut().expect("standard layout");
        let mut dx = vec![0.0f32; dy.len()];
        let mut dg_local = vec![0.0f32; c];
        let mut db_local = vec![0.0f32; c];
        for ch in 0..c {
            let mut dg = 0.0f64;
            let mut db = 0.0f64;
            for i in 0..n {
                let base = (i * c + ch) * s;
                for j in 0..s {
                    dg += (dy[base + j] * cache.xhat[base + j]) as f64;
                    db += dy[base + j] as f64;
                }
            }
            dg_local[ch] = dg as f32;
            db_local[ch] = db as f32;
            dgamma[ch] += dg as f32;
            let scale = gamma[ch] * cache.inv_std[ch] / m;
            for i in 0..n {
                let base = (i * c + ch) * s;
                for j in 0..s {
                    dx[base + j] = scale
                        * (m * dy[base + j]
                            - db_local[ch]
                            - cache.xhat[base + j] * dg_local[ch]);
                }
            }
        }
        let dbeta = self.beta.g.as_slice_mut().expect("standard layout");
        for ch in 0..c {
            dbeta[ch] += db_local[ch];
        }
        dx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor) {
        visit_param(&mut self.gamma, &format!("{prefix}.gamma"), f);
        visit_param(&mut self.beta, &format!("{prefix}.beta"), f);
    }

    /// Non-trained state (running statistics), for checkpointing.
    pub fn visit_state(&mut self, prefix: &str, f: &mut StateVisitor) {
        let c = self.c;
        f(&format!("{prefix}.running_mean"), &[c], &mut self.running_mean);
        f(&format!("{prefix}.running_var"), &[c], &mut self.running_var);
    }
}
