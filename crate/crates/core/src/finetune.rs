//! Medication head, the fine-tuning losses, the fine-tuning loop and
//! threshold inference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CodeVocabulary, DdiGraph, PatientRecord};
use crate::encoder::{build_from_spans, encode, encoder_backward, encoder_forward, EncoderConfig, EncoderParams, InputSequence};
use crate::error::{Error, Result};
use crate::metrics::{jaccard, Prediction};
use crate::nn::AdamW;
use crate::train::{
    clip_prob, derive_seed, epoch_order, logit_grad, minibatch_step, rng_for, EpochLog, Head, HeadedEncoder, Schedule,
    TrainingLog,
};

/// Summed binary cross-entropy. Probabilities are clipped first.
pub fn bce_loss(probs: &[f64], targets: &[bool]) -> f64 {
    probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = clip_prob(p);
            if t {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum()
}

/// `dL/dp_i = -m_i/p_i + (1 - m_i)/(1 - p_i)` at the clipped probabilities.
pub fn bce_grad(probs: &[f64], targets: &[bool]) -> Vec<f64> {
    probs
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = clip_prob(p);
            if t {
                -1.0 / p
            } else {
                1.0 / (1.0 - p)
            }
        })
        .collect()
}

/// Hinge over every (positive, negative) pair, divided by `|M|`.
pub fn margin_loss(probs: &[f64], targets: &[bool]) -> f64 {
    let p: Vec<f64> = probs.iter().map(|&x| clip_prob(x)).collect();
    let mut total = 0.0;
    for (i, &ti) in targets.iter().enumerate() {
        if !ti {
            continue;
        }
        for (j, &tj) in targets.iter().enumerate() {
            if !tj {
                total += (1.0 - (p[i] - p[j])).max(0.0);
            }
        }
    }
    total / probs.len().max(1) as f64
}

pub fn margin_grad(probs: &[f64], targets: &[bool]) -> Vec<f64> {
    let p: Vec<f64> = probs.iter().map(|&x| clip_prob(x)).collect();
    let scale = 1.0 / probs.len().max(1) as f64;
    let mut g = vec![0.0; p.len()];
    for (i, &ti) in targets.iter().enumerate() {
        if !ti {
            continue;
        }
        for (j, &tj) in targets.iter().enumerate() {
            if !tj && 1.0 - (p[i] - p[j]) > 0.0 {
                g[i] -= scale;
                g[j] += scale;
            }
        }
    }
    g
}

/// `sum_i sum_j A_ij p_i p_j` over ordered pairs.
pub fn ddi_loss(probs: &[f64], graph: &DdiGraph) -> f64 {
    let p: Vec<f64> = probs.iter().map(|&x| clip_prob(x)).collect();
    graph.edges().map(|(u, v)| 2.0 * p[u] * p[v]).sum()
}

pub fn ddi_grad(probs: &[f64], graph: &DdiGraph) -> Vec<f64> {
    let p: Vec<f64> = probs.iter().map(|&x| clip_prob(x)).collect();
    let mut g = vec![0.0; p.len()];
    for (u, v) in graph.edges() {
        g[u] += 2.0 * p[v];
        g[v] += 2.0 * p[u];
    }
    g
}

/// Weights of the combined objective, both in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    /// Desk-scale weights. The summed DDI term is large relative to the
    /// fitting terms on small cohorts, so beta is lowered from 0.7.
    fn default() -> Self {
        LossWeights { alpha: 0.03, beta: 0.1 }
    }
}

impl LossWeights {
    /// Full-scale operating point: alpha 0.03, beta 0.7.
    pub fn paper() -> Self {
        LossWeights { alpha: 0.03, beta: 0.7 }
    }

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = LossWeights { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// `(1 - beta)((1 - alpha) L_bce + alpha L_multi) + beta L_ddi`
pub fn combined_loss(probs: &[f64], targets: &[bool], graph: &DdiGraph, w: LossWeights) -> f64 {
    let mut total = 0.0;
    if w.beta < 1.0 {
        let mut fit = 0.0;
        if w.alpha < 1.0 {
            fit += (1.0 - w.alpha) * bce_loss(probs, targets);
        }
        if w.alpha > 0.0 {
            fit += w.alpha * margin_loss(probs, targets);
        }
        total += (1.0 - w.beta) * fit;
    }
    if w.beta > 0.0 {
        total += w.beta * ddi_loss(probs, graph);
    }
    total
}

pub fn combined_grad(probs: &[f64], targets: &[bool], graph: &DdiGraph, w: LossWeights) -> Vec<f64> {
    let mut g = vec![0.0; probs.len()];
    let mut add = |part: Vec<f64>, s: f64| {
        for (a, b) in g.iter_mut().zip(part) {
            *a += s * b;
        }
    };
    add(bce_grad(probs, targets), (1.0 - w.beta) * (1.0 - w.alpha));
    add(margin_grad(probs, targets), (1.0 - w.beta) * w.alpha);
    add(ddi_grad(probs, graph), w.beta);
    g
}

/// Encoder plus medication head.
#[derive(Clone, Debug, PartialEq)]
pub struct RecommendationModel {
    pub config: EncoderConfig,
    pub params: HeadedEncoder,
}

impl RecommendationModel {
    /// Wraps `encoder` with a freshly initialized medication head.
    pub fn new(config: EncoderConfig, encoder: EncoderParams, n_medications: usize, seed: u64) -> Self {
        let head = Head::init(&mut rng_for(seed, &[0x1417, 0x4D45]), n_medications, encoder.dim());
        RecommendationModel {
            config,
            params: HeadedEncoder { encoder, head },
        }
    }

    pub fn n_medications(&self) -> usize {
        self.params.head.out_dim()
    }

    pub fn predict_sequence(&self, seq: &InputSequence) -> Result<Vec<f64>> {
        let r = encode(seq, &self.params.encoder, &self.config)?;
        Ok(self.params.head.probs(&r).to_vec())
    }

    /// `sigma(W3 r + b3)` in inference mode.
    pub fn predict_probs(&self, record: &PatientRecord, vocab: &CodeVocabulary) -> Result<Vec<f64>> {
        let seq = build_from_spans(&record.diseases, &record.procedures, vocab.n_diseases(), &self.config)?;
        self.predict_sequence(&seq)
    }

    pub fn recommend(&self, record: &PatientRecord, vocab: &CodeVocabulary, threshold: f64) -> Result<Vec<usize>> {
        Ok(recommend(&self.predict_probs(record, vocab)?, threshold))
    }

    pub fn predict_all(
        &self,
        records: &[&PatientRecord],
        vocab: &CodeVocabulary,
        threshold: f64,
    ) -> Result<Vec<Prediction>> {
        records
            .par_iter()
            .map(|r| {
                let probs = self.predict_probs(r, vocab)?;
                Ok(Prediction {
                    patient_id: r.patient_id.clone(),
                    recommended: recommend(&probs, threshold),
                    probs,
                })
            })
            .collect()
    }
}

/// Indices with probability strictly above `threshold`.
pub fn recommend(probs: &[f64], threshold: f64) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| (p > threshold).then_some(i))
        .collect()
}

/// Mean Jaccard of thresholded predictions.
pub fn mean_jaccard(predictions: &[Prediction], records: &[&PatientRecord]) -> Result<f64> {
    let mut total = 0.0;
    for (p, r) in predictions.iter().zip(records) {
        total += jaccard(&r.medications, &p.recommended_mask())?;
    }
    Ok(total / records.len().max(1) as f64)
}

/// How training records are visited each epoch.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum EpochSampling {
    /// A fresh permutation of the training split.
    #[default]
    Shuffle,
    /// Draw with replacement, probability proportional to the given
    /// per-record weights (aligned with the training slice).
    Weighted(Vec<f64>),
}

impl EpochSampling {
    pub fn order(&self, n: usize, seed: u64, epoch: usize) -> Result<Vec<usize>> {
        match self {
            EpochSampling::Shuffle => Ok(epoch_order(n, seed, epoch)),
            EpochSampling::Weighted(w) => {
                if w.len() != n {
                    return Err(Error::validation(format!("{} sampling weights for {n} records", w.len())));
                }
                crate::baselines::draw_weighted(w, n, derive_seed(seed, &[epoch as u64]))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutput {
    /// Model with the best validation Jaccard.
    pub model: RecommendationModel,
    pub log: TrainingLog,
    /// Epoch index of the selected model, `None` when no epoch ran.
    pub best_epoch: Option<usize>,
}

fn example_grad(
    model: &HeadedEncoder,
    config: &EncoderConfig,
    seq: &InputSequence,
    targets: &[bool],
    graph: &DdiGraph,
    weights: LossWeights,
    seed: u64,
    grads: &mut HeadedEncoder,
) -> Result<f64> {
    let mut rng = rng_for(seed, &[]);
    let (r, cache) = encoder_forward(seq, &model.encoder, config, Some(&mut rng))?;
    let probs = model.head.probs(&r);
    let p = probs.as_slice().expect("contiguous");
    let loss = combined_loss(p, targets, graph, weights);
    let dz = logit_grad(&probs, &combined_grad(p, targets, graph, weights));
    let dr = model.head.backward(&r, &dz, &mut grads.head);
    encoder_backward(&model.encoder, config, &cache, &dr, &mut grads.encoder);
    Ok(loss)
}

/// Analytic gradient of the combined loss for one record with dropout off.
pub fn combined_record_grad(
    model: &RecommendationModel,
    record: &PatientRecord,
    vocab: &CodeVocabulary,
    graph: &DdiGraph,
    weights: LossWeights,
) -> Result<HeadedEncoder> {
    let cfg = EncoderConfig {
        dropout: 0.0,
        ..model.config.clone()
    };
    let seq = build_from_spans(&record.diseases, &record.procedures, vocab.n_diseases(), &cfg)?;
    let mut g = model.params.zeros_like();
    example_grad(&model.params, &cfg, &seq, &record.medications, graph, weights, 0, &mut g)?;
    Ok(g)
}

/// Combined loss of one record in inference mode.
pub fn combined_record_loss(
    model: &RecommendationModel,
    record: &PatientRecord,
    vocab: &CodeVocabulary,
    graph: &DdiGraph,
    weights: LossWeights,
) -> Result<f64> {
    let probs = model.predict_probs(record, vocab)?;
    Ok(combined_loss(&probs, &record.medications, graph, weights))
}

/// Trains encoder and a fresh medication head on the combined loss and
/// returns the model with the best validation Jaccard.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    encoder: EncoderParams,
    config: &EncoderConfig,
    vocab: &CodeVocabulary,
    train: &[&PatientRecord],
    val: &[&PatientRecord],
    graph: &DdiGraph,
    schedule: &Schedule,
    weights: LossWeights,
    sampling: &EpochSampling,
) -> Result<FinetuneOutput> {
    config.validate()?;
    schedule.validate()?;
    weights.validate()?;
    encoder.check_shapes(config, vocab.n_diseases(), vocab.n_procedures())?;
    if graph.n_medications() != vocab.n_medications() {
        return Err(Error::validation(format!(
            "DDI graph covers {} medications, vocabulary has {}",
            graph.n_medications(),
            vocab.n_medications()
        )));
    }
    if train.is_empty() {
        return Err(Error::validation("empty training split"));
    }
    let mut model = RecommendationModel::new(config.clone(), encoder, vocab.n_medications(), schedule.seed);
    let mut log = TrainingLog::new("finetune");
    let mut best = (model.clone(), None, f64::NEG_INFINITY);
    if schedule.epochs == 0 {
        return Ok(FinetuneOutput {
            model,
            log,
            best_epoch: None,
        });
    }
    let seqs: Vec<InputSequence> = train
        .iter()
        .map(|r| build_from_spans(&r.diseases, &r.procedures, vocab.n_diseases(), config))
        .collect::<Result<_>>()?;
    let mut opt = AdamW::new(schedule.lr, schedule.weight_decay);
    for epoch in 0..schedule.epochs {
        let order = sampling.order(train.len(), derive_seed(schedule.seed, &[0x5A3]), epoch)?;
        let mut total = 0.0;
        for (step, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let snapshot = model.params.clone();
            let f = |ex: usize, seed: u64, g: &mut HeadedEncoder| {
                example_grad(&snapshot, config, &seqs[ex], &train[ex].medications, graph, weights, seed, g)
            };
            let step_seed = derive_seed(schedule.seed, &[0xF17E, epoch as u64, step as u64]);
            let loss = minibatch_step(&mut model.params, &mut opt, chunk, step_seed, || snapshot.zeros_like(), &f)
                .map_err(|e| match e {
                    Error::NonFinite { value, context } => Error::NonFinite {
                        value,
                        context: format!("finetune epoch {epoch}, {context}"),
                    },
                    other => other,
                })?;
            total += chunk.len() as f64 * loss;
        }
        let (val_loss, val_metric) = if val.is_empty() {
            (None, None)
        } else {
            let preds = model.predict_all(val, vocab, 0.5)?;
            let loss = preds
                .iter()
                .zip(val)
                .map(|(p, r)| combined_loss(&p.probs, &r.medications, graph, weights))
                .sum::<f64>()
                / val.len() as f64;
            (Some(loss), Some(mean_jaccard(&preds, val)?))
        };
        let entry = EpochLog {
            epoch,
            train_loss: total / order.len() as f64,
            val_loss,
            val_metric,
        };
        log::info!(
            "finetune epoch {epoch}: loss {:.5} val jaccard {:?}",
            entry.train_loss,
            entry.val_metric
        );
        // Without a validation split the last epoch is kept.
        let score = val_metric.unwrap_or(epoch as f64);
        if score > best.2 {
            best = (model.clone(), Some(epoch), score);
        }
        log.epochs.push(entry);
    }
    Ok(FinetuneOutput {
        model: best.0,
        log,
        best_epoch: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_values() {
        assert!((bce_loss(&[0.5, 0.5], &[true, false]) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(bce_loss(&[1.0, 0.0], &[true, false]) < 1e-6);
    }

    #[test]
    fn margin_values() {
        assert_eq!(margin_loss(&[0.3, 0.9], &[true, true]), 0.0);
        assert_eq!(margin_loss(&[0.3, 0.9], &[false, false]), 0.0);
        assert!((margin_loss(&[0.5, 0.5], &[true, false]) - 0.5).abs() < 1e-15);
        assert!(margin_loss(&[1.0, 0.0, 0.0], &[true, false, false]) < 1e-6);
    }

    #[test]
    fn ddi_values() {
        let g = DdiGraph::from_edges(2, [(0, 1)]);
        assert_eq!(ddi_loss(&[1.0, 1.0], &g), 2.0 * (1.0 - 1e-7) * (1.0 - 1e-7));
        assert!((ddi_loss(&[0.5, 0.5], &g) - 0.5).abs() < 1e-15);
        assert_eq!(ddi_loss(&[0.9, 0.8], &DdiGraph::empty(2)), 0.0);
    }

    #[test]
    fn combined_identities() {
        let p = [0.2, 0.7, 0.6];
        let m = [false, true, true];
        let g = DdiGraph::from_edges(3, [(1, 2)]);
        assert_eq!(combined_loss(&p, &m, &g, LossWeights::new(0.0, 0.0).unwrap()), bce_loss(&p, &m));
        assert_eq!(combined_loss(&p, &m, &g, LossWeights::new(0.4, 1.0).unwrap()), ddi_loss(&p, &g));
        let w = LossWeights::paper();
        let expect = 0.3 * (0.97 * bce_loss(&p, &m) + 0.03 * margin_loss(&p, &m)) + 0.7 * ddi_loss(&p, &g);
        assert!((combined_loss(&p, &m, &g, w) - expect).abs() < 1e-12);
        assert!(LossWeights::new(1.2, 0.0).is_err());
        assert!(LossWeights::new(0.0, -0.1).is_err());
    }

    #[test]
    fn recommend_threshold_is_strict() {
        assert_eq!(recommend(&[0.6, 0.4, 0.51], 0.5), vec![0, 2]);
        assert!(recommend(&[0.5; 4], 0.5).is_empty());
        assert_eq!(recommend(&[1e-9, 0.3], 0.0), vec![0, 1]);
    }

    #[test]
    fn loss_grads_match_differences() {
        let p = [0.2, 0.7, 0.6, 0.45];
        let m = [false, true, true, false];
        let g = DdiGraph::from_edges(4, [(1, 2), (0, 3), (1, 3)]);
        let w = LossWeights::new(0.3, 0.4).unwrap();
        let an = combined_grad(&p, &m, &g, w);
        let h = 1e-6;
        for i in 0..4 {
            let mut a = p;
            a[i] += h;
            let mut b = p;
            b[i] -= h;
            let fd = (combined_loss(&a, &m, &g, w) - combined_loss(&b, &m, &g, w)) / (2.0 * h);
            assert!((fd - an[i]).abs() < 1e-6, "{i}: {fd} vs {}", an[i]);
        }
    }

    #[test]
    fn weighted_sampling_errors_on_length_mismatch() {
        assert!(EpochSampling::Weighted(vec![1.0]).order(2, 0, 0).is_err());
        assert_eq!(EpochSampling::Weighted(vec![1.0, 0.0]).order(3, 0, 0).ok(), None);
        assert_eq!(EpochSampling::Weighted(vec![0.0, 1.0]).order(2, 0, 0).unwrap(), vec![1, 1]);
    }
}
