//! Two-layer perceptrons with hand-written backpropagation.
//!
//! Parameters live in one flat buffer so optimizers, gradient clipping and
//! checkpoints can treat a network as a single vector. Layout:
//! `W1 (hidden x in), b1, [ln_gain, ln_bias], W2 (out x hidden), b2`,
//! matrices row-major.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub layer_norm: bool,
}

impl MlpShape {
    pub fn param_count(&self) -> usize {
        let ln = if self.layer_norm { 2 * self.hidden } else { 0 };
        self.hidden * self.in_dim + self.hidden + ln + self.out_dim * self.hidden + self.out_dim
    }

    fn w1(&self) -> std::ops::Range<usize> {
        0..self.hidden * self.in_dim
    }

    fn b1(&self) -> std::ops::Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden
    }

    fn ln_gain(&self) -> std::ops::Range<usize> {
        let s = self.b1().end;
        if self.layer_norm {
            s..s + self.hidden
        } else {
            s..s
        }
    }

    fn ln_bias(&self) -> std::ops::Range<usize> {
        let s = self.ln_gain().end;
        if self.layer_norm {
            s..s + self.hidden
        } else {
            s..s
        }
    }

    fn w2(&self) -> std::ops::Range<usize> {
        let s = self.ln_bias().end;
        s..s + self.out_dim * self.hidden
    }

    fn b2(&self) -> std::ops::Range<usize> {
        let s = self.w2().end;
        s..s + self.out_dim
    }
}

/// `in -> Linear -> [LayerNorm] -> ReLU -> Linear -> out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    input: Vec<f64>,
    /// Normalized pre-activation (equal to the raw one without LayerNorm).
    xhat: Vec<f64>,
    inv_std: f64,
    /// Post-ReLU hidden activations.
    hidden: Vec<f64>,
    /// Pre-ReLU values, after the optional affine LayerNorm.
    pre_relu: Vec<f64>,
}

impl Mlp {
    pub fn zeros(shape: MlpShape) -> Self {
        let mut params = vec![0.0; shape.param_count()];
        if shape.layer_norm {
            params[shape.ln_gain()].fill(1.0);
        }
        Self { shape, params }
    }

    /// Orthogonal weights scaled by `hidden_gain` / `output_gain`, zero biases,
    /// unit LayerNorm gain.
    pub fn orthogonal<R: Rng>(shape: MlpShape, hidden_gain: f64, output_gain: f64, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(shape);
        let w1 = orthogonal_matrix(shape.hidden, shape.in_dim, hidden_gain, rng);
        mlp.params[shape.w1()].copy_from_slice(&w1);
        let w2 = orthogonal_matrix(shape.out_dim, shape.hidden, output_gain, rng);
        mlp.params[shape.w2()].copy_from_slice(&w2);
        mlp
    }

    pub fn from_params(shape: MlpShape, params: Vec<f64>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(Error::ShapeMismatch {
                expected: shape.param_count(),
                got: params.len(),
            });
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn zero_grad(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut cache = MlpCache::default();
        self.forward_cached(x, &mut cache)
    }

    pub fn forward_cached(&self, x: &[f64], cache: &mut MlpCache) -> Result<Vec<f64>> {
        let s = self.shape;
        if x.len() != s.in_dim {
            return Err(Error::ShapeMismatch {
                expected: s.in_dim,
                got: x.len(),
            });
        }
        let w1 = &self.params[s.w1()];
        let b1 = &self.params[s.b1()];
        cache.input.clear();
        cache.input.extend_from_slice(x);

        let mut z: Vec<f64> = w1
            .chunks_exact(s.in_dim)
            .zip(b1)
            .map(|(row, b)| dot(row, x) + b)
            .collect();

        if s.layer_norm {
            let h = s.hidden as f64;
            let mean = z.iter().sum::<f64>() / h;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / h;
            let inv_std = 1.0 / (var + LN_EPS).sqrt();
            for v in z.iter_mut() {
                *v = (*v - mean) * inv_std;
            }
            cache.inv_std = inv_std;
            cache.xhat.clone_from(&z);
            let gain = &self.params[s.ln_gain()];
            let bias = &self.params[s.ln_bias()];
            for ((v, g), b) in z.iter_mut().zip(gain).zip(bias) {
                *v = *v * g + b;
            }
        } else {
            cache.inv_std = 1.0;
            cache.xhat.clone_from(&z);
        }
        cache.pre_relu.clone_from(&z);
        for v in z.iter_mut() {
            *v = v.max(0.0);
        }
        let w2 = &self.params[s.w2()];
        let b2 = &self.params[s.b2()];
        let out = w2
            .chunks_exact(s.hidden)
            .zip(b2)
            .map(|(row, b)| dot(row, &z) + b)
            .collect();
        cache.hidden = z;
        Ok(out)
    }

    /// Accumulates `dL/dparams` into `grad` given `dL/dout` for a cached pass.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) {
        let s = self.shape;
        debug_assert_eq!(d_out.len(), s.out_dim);
        debug_assert_eq!(grad.len(), self.params.len());

        let w2 = &self.params[s.w2()];
        let mut d_hidden = vec![0.0; s.hidden];
        let gw2 = s.w2().start;
        let gb2 = s.b2().start;
        for (o, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[gb2 + o] += g;
            let row = o * s.hidden..(o + 1) * s.hidden;
            axpy(g, &cache.hidden, &mut grad[gw2 + row.start..gw2 + row.end]);
            axpy(g, &w2[row], &mut d_hidden);
        }
        // ReLU.
        for (d, &pre) in d_hidden.iter_mut().zip(&cache.pre_relu) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        let d_z: Vec<f64> = if s.layer_norm {
            let gain = &self.params[s.ln_gain()];
            let mut d_xhat = vec![0.0; s.hidden];
            for k in 0..s.hidden {
                grad[s.ln_gain().start + k] += d_hidden[k] * cache.xhat[k];
                grad[s.ln_bias().start + k] += d_hidden[k];
                d_xhat[k] = d_hidden[k] * gain[k];
            }
            let h = s.hidden as f64;
            let mean_d = d_xhat.iter().sum::<f64>() / h;
            let mean_dx = d_xhat
                .iter()
                .zip(&cache.xhat)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / h;
            d_xhat
                .iter()
                .zip(&cache.xhat)
                .map(|(d, x)| cache.inv_std * (d - mean_d - x * mean_dx))
                .collect()
        } else {
            d_hidden
        };
        let gw1_start = s.w1().start;
        let gb1_start = s.b1().start;
        for (k, &g) in d_z.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[gb1_start + k] += g;
            let row = gw1_start + k * s.in_dim..gw1_start + (k + 1) * s.in_dim;
            axpy(g, &cache.input, &mut grad[row]);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `rows x cols` matrix with orthonormal rows (or columns, whichever is the
/// shorter side), scaled by `gain`.
pub fn orthogonal_matrix<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    // Orthonormalize the short side's vectors with modified Gram-Schmidt.
    let (count, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(count);
    while vecs.len() < count {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let p = dot(&v, u);
            axpy(-p, u, &mut v);
        }
        let norm = dot(&v, &v).sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        vecs.push(v);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain
                * if rows <= cols {
                    vecs[r][c]
                } else {
                    vecs[c][r]
                };
        }
    }
    out
}

/// Global L2 norm of a gradient.
pub fn grad_norm(grad: &[f64]) -> f64 {
    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad_norm(grad);
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}
