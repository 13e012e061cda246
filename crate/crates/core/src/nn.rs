//! Dense-layer building blocks with explicit backward passes, the parameter
//! container trait shared by every model, and the AdamW optimizer.

use ndarray::{Array1, Array2, ArrayD, ArrayView2, ArrayViewD, ArrayViewMutD, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Anything made of named `f64` arrays: model parameters, their gradients
/// and optimizer moments all share one layout.
pub trait Parameterized {
    /// Arrays in a fixed order, each with a stable name.
    fn named_arrays(&self) -> Vec<(String, ArrayViewD<'_, f64>)>;

    /// Mutable views in the same order as [`Parameterized::named_arrays`].
    fn arrays_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>>;

    fn n_params(&self) -> usize {
        self.named_arrays().iter().map(|(_, a)| a.len()).sum()
    }

    fn fill(&mut self, value: f64) {
        for mut a in self.arrays_mut() {
            a.fill(value);
        }
    }

    /// `self += scale * other`
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        let theirs = other.named_arrays();
        for (mut a, (_, b)) in self.arrays_mut().into_iter().zip(theirs) {
            a.zip_mut_with(&b, |x, &y| *x += scale * y);
        }
    }

    fn scale(&mut self, s: f64) {
        for mut a in self.arrays_mut() {
            a.mapv_inplace(|x| x * s);
        }
    }

    /// All values concatenated in layout order.
    fn to_flat(&self) -> Vec<f64> {
        self.named_arrays()
            .into_iter()
            .flat_map(|(_, a)| a.iter().copied().collect::<Vec<_>>())
            .collect()
    }

    fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for mut a in self.arrays_mut() {
            for x in a.iter_mut() {
                *x = *it.next().expect("flat vector too short");
            }
        }
        assert!(it.next().is_none(), "flat vector too long");
    }

    fn all_finite(&self) -> bool {
        self.named_arrays().iter().all(|(_, a)| a.iter().all(|x| x.is_finite()))
    }

    /// Copies named tensors into this container, checking every shape.
    fn load_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        let names: Vec<(String, Vec<usize>)> = self
            .named_arrays()
            .into_iter()
            .map(|(n, a)| (n, a.shape().to_vec()))
            .collect();
        if names.len() != tensors.len() {
            return Err(Error::validation(format!(
                "expected {} tensors, found {}",
                names.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in names.iter().zip(tensors) {
            if &t.name != name {
                return Err(Error::validation(format!("expected tensor {name}, found {}", t.name)));
            }
            if &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: t.shape.clone(),
                });
            }
        }
        for (mut a, t) in self.arrays_mut().into_iter().zip(tensors) {
            for (x, &v) in a.iter_mut().zip(&t.data) {
                *x = v;
            }
        }
        Ok(())
    }

    fn to_tensors(&self) -> Vec<NamedTensor> {
        self.named_arrays()
            .into_iter()
            .map(|(name, a)| NamedTensor {
                name,
                shape: a.shape().to_vec(),
                data: a.iter().copied().collect(),
            })
            .collect()
    }
}

/// Serialized parameter array (row-major data).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Normal(0, std) truncated to two standard deviations.
pub fn truncated_normal<R: Rng>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn(shape, || loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * std {
            break x;
        }
    })
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `x W + b` for row-vector inputs.
pub fn linear(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    y += b;
    y
}

/// Accumulates weight and bias gradients of [`linear`] and returns the input
/// gradient.
pub fn linear_backward(
    x: &ArrayView2<f64>,
    w: &Array2<f64>,
    dy: &Array2<f64>,
    dw: &mut Array2<f64>,
    db: &mut Array1<f64>,
) -> Array2<f64> {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, dw);
    *db += &dy.sum_axis(Axis(0));
    dy.dot(&w.t())
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Row-wise layer normalization with affine gain and bias.
pub fn layer_norm(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, LayerNormCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        let inv = *s;
        row.mapv_inplace(|v| v * inv);
    }
    let y = &xhat * gamma + beta;
    (y, LayerNormCache { xhat, inv_std })
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &Array1<f64>,
    dy: &Array2<f64>,
    dgamma: &mut Array1<f64>,
    dbeta: &mut Array1<f64>,
) -> Array2<f64> {
    *dgamma += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbeta += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let mut dx = dy * gamma;
    for ((mut row, xhat), &inv) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
        let mean_g = row.sum() / d;
        let mean_gx = row.iter().zip(xhat).map(|(g, x)| g * x).sum::<f64>() / d;
        Zip::from(&mut row).and(&xhat).for_each(|g, &x| *g = inv * (*g - mean_g - x * mean_gx));
    }
    dx
}

/// Decoupled-weight-decay Adam.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<ArrayD<f64>>,
    second: Vec<ArrayD<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; moment buffers are created on first use.
    pub fn step<P: Parameterized>(&mut self, params: &mut P, grads: &P) {
        let grads = grads.named_arrays();
        if self.first.is_empty() {
            self.first = grads.iter().map(|(_, g)| ArrayD::zeros(g.raw_dim())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (lr, wd, b1, b2, eps) = (self.lr, self.weight_decay, self.beta1, self.beta2, self.eps);
        for (((mut p, (_, g)), m), v) in params
            .arrays_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            Zip::from(&mut p).and(&g).and(m).and(v).for_each(|p, &g, m, v| {
                *p -= lr * wd * *p;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn layer_norm_backward_matches_differences() {
        let x = array![[0.3, -1.2, 0.8, 2.0], [1.0, 0.5, -0.5, 0.1]];
        let gamma = array![1.1, 0.9, 1.3, 0.7];
        let beta = array![0.1, -0.2, 0.0, 0.3];
        let weights = array![[0.2, -0.4, 1.0, 0.5], [-1.0, 0.3, 0.7, 0.2]];
        let loss = |x: &Array2<f64>| (layer_norm(x, &gamma, &beta).0 * &weights).sum();
        let (_, cache) = layer_norm(&x, &gamma, &beta);
        let mut dg = Array1::zeros(4);
        let mut db = Array1::zeros(4);
        let dx = layer_norm_backward(&cache, &gamma, &weights, &mut dg, &mut db);
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..4 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
                assert!((fd - dx[[i, j]]).abs() < 1e-7, "{fd} vs {}", dx[[i, j]]);
            }
        }
    }
}
