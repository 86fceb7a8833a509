//! Minimal neural-network building blocks: parameters, initializers,
//! activations, and the Adam optimizer. Layers live in the submodules.
//!
//! Everything is f32 and sequential. Layers expose free forward/backward
//! functions that take explicit weight slices, so wrappers (e.g. spectral
//! normalization) can substitute a transformed weight while reusing the same
//! kernels. Gradients are accumulated (`+=`) into caller-provided buffers.

pub mod batchnorm;
pub mod conv2d;
pub mod conv3d;
pub mod deconv2d;
pub mod linear;
pub mod spectral;

use ndarray::{ArrayD, ArrayView2, ArrayViewMut2, IxDyn};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

/// A trainable tensor: value and gradient, same shape.
#[derive(Debug, Clone)]
pub struct Param {
    pub v: ArrayD<f32>,
    pub g: ArrayD<f32>,
}

impl Param {
    pub fn new(v: ArrayD<f32>) -> Self {
        let g = ArrayD::zeros(v.raw_dim());
        Param { v, g }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Param::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn value_slice(&self) -> &[f32] {
        self.v.as_slice().expect("params are standard layout")
    }

    pub fn grad_slice_mut(&mut self) -> &mut [f32] {
        self.g.as_slice_mut().expect("params are standard layout")
    }
}

/// Visitor over (name, shape, value, grad) of every trainable tensor, in a
/// stable order that optimizer state is keyed on.
pub type ParamVisitor<'a> = dyn FnMut(&str, &[usize], &mut [f32], &mut [f32]) + 'a;

/// Visitor over (name, shape, data) of non-trained state tensors
/// (batch-norm running statistics, spectral u/v vectors).
pub type StateVisitor<'a> = dyn FnMut(&str, &[usize], &mut [f32]) + 'a;

/// Applies `f` to a `Param` under `name`.
pub fn visit_param(p: &mut Param, name: &str, f: &mut ParamVisitor) {
    let shape = p.v.shape().to_vec();
    let (v, g) = (&mut p.v, &mut p.g);
    f(
        name,
        &shape,
        v.as_slice_mut().expect("standard layout"),
        g.as_slice_mut().expect("standard layout"),
    );
}

pub fn normal_init(rng: &mut ChaCha20Rng, shape: &[usize], std: f32) -> ArrayD<f32> {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = StandardNormal
        .sample_iter(&mut *rng)
        .take(n)
        .map(|v: f32| v * std)
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches")
}

pub fn uniform_init(rng: &mut ChaCha20Rng, shape: &[usize], bound: f32) -> ArrayD<f32> {
    let n: usize = shape.iter().product();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    let data: Vec<f32> = dist.sample_iter(&mut *rng).take(n).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches")
}

/// Views a flat slice as a 2-D matrix.
pub fn view2(data: &[f32], rows: usize, cols: usize) -> ArrayView2<'_, f32> {
    ArrayView2::from_shape((rows, cols), data).expect("length matches rows*cols")
}

pub fn view2_mut(data: &mut [f32], rows: usize, cols: usize) -> ArrayViewMut2<'_, f32> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("length matches rows*cols")
}

pub fn relu_inplace(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// dL/dx from dL/dy in place, using the cached output y.
pub fn relu_backward_inplace(dy: &mut [f32], y: &[f32]) {
    for (d, &o) in dy.iter_mut().zip(y) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

pub fn leaky_relu_inplace(x: &mut [f32], slope: f32) {
    for v in x {
        if *v < 0.0 {
            *v *= slope;
        }
    }
}

pub fn leaky_relu_backward_inplace(dy: &mut [f32], y: &[f32], slope: f32) {
    for (d, &o) in dy.iter_mut().zip(y) {
        if o < 0.0 {
            *d *= slope;
        }
    }
}

pub fn tanh_inplace(x: &mut [f32]) {
    for v in x {
        *v = v.tanh();
    }
}

pub fn tanh_backward_inplace(dy: &mut [f32], y: &[f32]) {
    for (d, &o) in dy.iter_mut().zip(y) {
        *d *= 1.0 - o * o;
    }
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Adam with bias correction. Moment buffers are keyed on visit order, so a
/// given optimizer must always be stepped with the same parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32, beta1: f32, beta2: f32) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over every parameter the closure visits.
    pub fn step(&mut self, visit: impl FnOnce(&mut ParamVisitor)) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (lr, b1, b2, eps) = (self.lr, self.beta1, self.beta2, self.eps);
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut idx = 0usize;
        visit(&mut |_name, _shape, val: &mut [f32], grad: &mut [f32]| {
            if ms.len() == idx {
                ms.push(vec![0.0; val.len()]);
                vs.push(vec![0.0; val.len()]);
            }
            let m = &mut ms[idx];
            let v = &mut vs[idx];
            debug_assert_eq!(m.len(), val.len(), "optimizer keyed on a stable visit order");
            for i in 0..val.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                val[i] -= lr * mh / (vh.sqrt() + eps);
            }
            idx += 1;
        });
    }

    /// Moment buffers and step counter, for checkpointing.
    pub fn snapshot(&self) -> (u64, &[Vec<f32>], &[Vec<f32>]) {
        (self.t, &self.m, &self.v)
    }

    pub fn restore(&mut self, t: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) {
        self.t = t;
        self.m = m;
        self.v = v;
    }
}

/// Zeroes the gradients of everything the closure visits.
pub fn zero_grads(visit: impl FnOnce(&mut ParamVisitor)) {
    visit(&mut |_n, _s, _v, g: &mut [f32]| g.fill(0.0));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seed_stream;

    #[test]
    fn adam_matches_hand_computation() {
        // Single scalar parameter, constant gradient 1.0.
        let mut p = Param::new(ArrayD::from_elem(IxDyn(&[1]), 0.0));
        p.g.fill(1.0);
        let mut opt = Adam::new(0.1, 0.5, 0.9);
        opt.step(|f| visit_param(&mut p, "p", f));
        // t=1: m=0.5, v=0.1 -> mh=1.0, vh=1.0 -> step = 0.1*1/(1+1e-8)
        let expected = -(0.1f32 * 1.0 / (1.0 + 1e-8));
        assert!((p.v[[0]] - expected).abs() < 1e-7, "{}", p.v[[0]]);
    }

    #[test]
    fn adam_is_deterministic_across_runs() {
        let run = || {
            let mut rng = seed_stream(3, "t");
            let mut p = Param::new(normal_init(&mut rng, &[8], 1.0));
            let mut opt = Adam::new(0.01, 0.5, 0.999);
            for _ in 0..5 {
                // gradient = value (decay toward zero)
                let g = p.v.clone();
                p.g.assign(&g);
                opt.step(|f| visit_param(&mut p, "p", f));
            }
            p.v
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn activations_roundtrip() {
        let mut x = vec![-2.0f32, -0.5, 0.0, 0.5, 2.0];
        let orig = x.clone();
        leaky_relu_inplace(&mut x, 0.2);
        assert_eq!(x, vec![-0.4, -0.1, 0.0, 0.5, 2.0]);
        let mut dy = vec![1.0f32; 5];
        leaky_relu_backward_inplace(&mut dy, &x, 0.2);
        assert_eq!(dy, vec![0.2, 0.2, 1.0, 1.0, 1.0]);
        let mut t = orig.clone();
        tanh_inplace(&mut t);
        let mut dt = vec![1.0f32; 5];
        tanh_backward_inplace(&mut dt, &t);
        for i in 0..5 {
            let y = orig[i].tanh();
            assert!((dt[i] - (1.0 - y * y)).abs() < 1e-6);
        }
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-7);
    }
}
