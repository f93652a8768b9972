//! Adam with a triangular cyclic learning rate.

use crate::linalg::Matrix;

/// Learning rate ramping linearly `min -> max -> min` once per cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangularCyclicLr {
    pub lr_min: f64,
    pub lr_max: f64,
    pub cycle_length: usize,
}

impl TriangularCyclicLr {
    pub fn new(lr_min: f64, lr_max: f64, cycle_length: usize) -> Self {
        Self {
            lr_min,
            lr_max,
            cycle_length: cycle_length.max(2),
        }
    }

    /// Learning rate for the zero-based update index `step`.
    pub fn at(&self, step: usize) -> f64 {
        let c = step % self.cycle_length;
        let up = self.cycle_length / 2;
        let down = self.cycle_length - up;
        let frac = if c < up {
            c as f64 / up as f64
        } else {
            1.0 - (c - up) as f64 / down as f64
        };
        self.lr_min + (self.lr_max - self.lr_min) * frac
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(shapes: &[&Matrix], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Matrix> = shapes.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            beta1,
            beta2,
            eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut [Matrix], grads: &[Matrix], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        self.t = self.t.saturating_add(1);
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let it = p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
            for ((pi, &gi), (mi, vi)) in it {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
