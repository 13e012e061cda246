//! Shared training machinery: linear task heads, the encoder-plus-head
//! parameter bundle, schedules, seed substreams and a deterministic
//! data-parallel minibatch step.

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, truncated_normal, AdamW, Parameterized};

/// Probabilities are clipped to `[PROB_EPS, 1 - PROB_EPS]` before any log.
pub const PROB_EPS: f64 = 1e-7;

#[inline]
pub fn clip_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// `sigma(W r + b)` with `W: out x dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct Head {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Head {
    pub fn init<R: Rng>(rng: &mut R, out: usize, dim: usize) -> Self {
        Head {
            weight: truncated_normal(rng, (out, dim), 0.02),
            bias: Array1::zeros(out),
        }
    }

    pub fn zeros(out: usize, dim: usize) -> Self {
        Head {
            weight: Array2::zeros((out, dim)),
            bias: Array1::zeros(out),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn logits(&self, r: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(r) + &self.bias
    }

    pub fn probs(&self, r: &Array1<f64>) -> Array1<f64> {
        self.logits(r).mapv(sigmoid)
    }

    /// Accumulates head gradients for logit gradient `dz` and returns the
    /// gradient with respect to `r`.
    pub fn backward(&self, r: &Array1<f64>, dz: &Array1<f64>, grads: &mut Head) -> Array1<f64> {
        for (mut row, &g) in grads.weight.rows_mut().into_iter().zip(dz) {
            row.scaled_add(g, r);
        }
        grads.bias += dz;
        self.weight.t().dot(dz)
    }
}

impl Parameterized for Head {
    fn named_arrays(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        vec![
            ("weight".into(), self.weight.view().into_dyn()),
            ("bias".into(), self.bias.view().into_dyn()),
        ]
    }

    fn arrays_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        vec![self.weight.view_mut().into_dyn(), self.bias.view_mut().into_dyn()]
    }
}

/// Gradient of a loss with respect to logits given its gradient with respect
/// to clipped sigmoid probabilities. Clipped entries have zero derivative.
pub fn logit_grad(probs_raw: &Array1<f64>, dprobs: &[f64]) -> Array1<f64> {
    Array1::from_iter(probs_raw.iter().zip(dprobs).map(|(&p, &g)| {
        if p < PROB_EPS || p > 1.0 - PROB_EPS {
            0.0
        } else {
            g * p * (1.0 - p)
        }
    }))
}

/// The encoder together with one task head, optimized as a unit.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadedEncoder {
    pub encoder: EncoderParams,
    pub head: Head,
}

impl HeadedEncoder {
    pub fn zeros_like(&self) -> Self {
        HeadedEncoder {
            encoder: self.encoder.zeros_like(),
            head: Head::zeros(self.head.out_dim(), self.head.weight.ncols()),
        }
    }
}

impl Parameterized for HeadedEncoder {
    fn named_arrays(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        let mut out: Vec<_> = self
            .encoder
            .named_arrays()
            .into_iter()
            .map(|(n, a)| (format!("encoder.{n}"), a))
            .collect();
        out.extend(self.head.named_arrays().into_iter().map(|(n, a)| (format!("head.{n}"), a)));
        out
    }

    fn arrays_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = self.encoder.arrays_mut();
        out.extend(self.head.arrays_mut());
        out
    }
}

/// Optimization schedule for one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Set from the run's seed substreams, never from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for Schedule {
    /// Desk-scale schedule. The learning rate is raised from the full-scale
    /// 1e-5 so that small models converge in tens of epochs.
    fn default() -> Self {
        Schedule {
            epochs: 30,
            batch_size: 32,
            lr: 3e-3,
            weight_decay: 0.1,
            seed: 0,
        }
    }
}

impl Schedule {
    /// Full-scale optimizer settings: AdamW, lr 1e-5, weight decay 0.1,
    /// 30 epochs.
    pub fn paper() -> Self {
        Schedule {
            lr: 1e-5,
            ..Schedule::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::validation("batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return Err(Error::validation("learning rate must be positive and weight decay non-negative"));
        }
        Ok(())
    }
}

/// Deterministic 64-bit mix of a seed with a path of indices.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in path {
        x = x.wrapping_add(p.wrapping_mul(0xBF58_476D_1CE4_E5B9)).wrapping_add(0x9E37_79B9_7F4A_7C15);
        x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x ^= x >> 31;
    }
    x
}

pub fn rng_for(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

/// Named substreams of one root seed. Ablations that share a root seed
/// share data split, initialization and sample order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub smp: u64,
    pub init: u64,
    pub sampling: u64,
}

impl Seeds {
    pub fn from_root(seed: u64) -> Self {
        Seeds {
            data: derive_seed(seed, &[1]),
            smp: derive_seed(seed, &[2]),
            init: derive_seed(seed, &[3]),
            sampling: derive_seed(seed, &[4]),
        }
    }
}

/// Examples per gradient-accumulation chunk. Chunks are reduced in order,
/// so results do not depend on the thread count.
const CHUNK: usize = 4;

/// Per-example loss and gradient callback: receives the example id and a
/// seed unique to this (step, position) pair.
pub trait ExampleGrad<P>: Sync {
    fn loss_and_grad(&self, example: usize, seed: u64, grads: &mut P) -> Result<f64>;
}

impl<P, F> ExampleGrad<P> for F
where
    F: Fn(usize, u64, &mut P) -> Result<f64> + Sync,
{
    fn loss_and_grad(&self, example: usize, seed: u64, grads: &mut P) -> Result<f64> {
        self(example, seed, grads)
    }
}

/// Computes the mean loss and gradient over `batch` and applies one AdamW
/// step. Returns the mean loss.
pub fn minibatch_step<P, G, Z>(
    params: &mut P,
    optimizer: &mut AdamW,
    batch: &[usize],
    step_seed: u64,
    zeros: Z,
    grad_fn: &G,
) -> Result<f64>
where
    P: Parameterized + Send,
    G: ExampleGrad<P>,
    Z: Fn() -> P + Sync,
{
    let partials: Vec<Result<(f64, P)>> = batch
        .par_chunks(CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut grads = zeros();
            let mut loss = 0.0;
            for (k, &ex) in chunk.iter().enumerate() {
                let seed = derive_seed(step_seed, &[(c * CHUNK + k) as u64]);
                loss += grad_fn.loss_and_grad(ex, seed, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = zeros();
    let mut loss = 0.0;
    for part in partials {
        let (l, g) = part?;
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    let n = batch.len() as f64;
    loss /= n;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            value: loss,
            context: format!("optimizer step {}", optimizer.steps() + 1),
        });
    }
    total.scale(1.0 / n);
    optimizer.step(params, &total);
    Ok(loss)
}

/// Seeded permutation of `0..n` for one epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[0xE90C, epoch as u64]));
    order
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Held-out loss, when the phase tracks one.
    pub val_loss: Option<f64>,
    /// Held-out quality metric (accuracy or Jaccard depending on phase).
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub phase: String,
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    pub fn new(phase: &str) -> Self {
        TrainingLog {
            phase: phase.into(),
            epochs: Vec::new(),
        }
    }
}
