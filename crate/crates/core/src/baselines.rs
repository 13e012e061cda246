//! Comparison methods: multi-hot logistic regression and inverse-propensity
//! rebalanced sampling.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;

use crate::data::{CodeFrequencies, CodeVocabulary, PatientRecord};
use crate::error::{Error, Result};
use crate::finetune::{bce_grad, bce_loss, mean_jaccard, recommend, EpochSampling};
use crate::metrics::Prediction;
use crate::nn::{sigmoid, AdamW, Parameterized};
use crate::train::{derive_seed, logit_grad, minibatch_step, rng_for, EpochLog, Schedule, TrainingLog};

/// Disease block then procedure block, 1 at every present code.
pub fn multi_hot_features(record: &PatientRecord, vocab: &CodeVocabulary) -> Vec<bool> {
    crate::pretrain::sr_targets(record, vocab)
}

fn active_features(record: &PatientRecord, n_diseases: usize) -> Vec<usize> {
    record
        .diseases
        .iter()
        .copied()
        .chain(record.procedures.iter().map(|&p| n_diseases + p))
        .collect()
}

/// One logistic regression per medication over multi-hot code features.
#[derive(Clone, Debug, PartialEq)]
pub struct LrModel {
    /// `|M| x (|D| + |P|)`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LrModel {
    pub fn zeros(vocab: &CodeVocabulary) -> Self {
        LrModel {
            weight: Array2::zeros((vocab.n_medications(), vocab.n_clinical_codes())),
            bias: Array1::zeros(vocab.n_medications()),
        }
    }

    pub fn check_shapes(&self, vocab: &CodeVocabulary) -> Result<()> {
        let expected = [vocab.n_medications(), vocab.n_clinical_codes()];
        if self.weight.shape() != expected || self.bias.len() != expected[0] {
            return Err(Error::Shape {
                name: "lr.weight".into(),
                expected: expected.to_vec(),
                found: self.weight.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn logits(&self, features: &[usize]) -> Array1<f64> {
        let mut z = self.bias.clone();
        for &f in features {
            z += &self.weight.column(f);
        }
        z
    }

    pub fn predict_probs(&self, record: &PatientRecord, vocab: &CodeVocabulary) -> Vec<f64> {
        self.logits(&active_features(record, vocab.n_diseases()))
            .iter()
            .map(|&z| sigmoid(z))
            .collect()
    }

    pub fn predict_all(&self, records: &[&PatientRecord], vocab: &CodeVocabulary, threshold: f64) -> Vec<Prediction> {
        records
            .par_iter()
            .map(|r| {
                let probs = self.predict_probs(r, vocab);
                Prediction {
                    patient_id: r.patient_id.clone(),
                    recommended: recommend(&probs, threshold),
                    probs,
                }
            })
            .collect()
    }
}

impl Parameterized for LrModel {
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

#[derive(Clone, Debug)]
pub struct LrOutput {
    pub model: LrModel,
    pub log: TrainingLog,
    pub best_epoch: Option<usize>,
}

/// Summed-BCE logistic regression trained with AdamW from zero weights and
/// selected on validation Jaccard.
pub fn train_lr(
    train: &[&PatientRecord],
    val: &[&PatientRecord],
    vocab: &CodeVocabulary,
    schedule: &Schedule,
) -> Result<LrOutput> {
    schedule.validate()?;
    if train.is_empty() {
        return Err(Error::validation("empty training split"));
    }
    let mut model = LrModel::zeros(vocab);
    let mut log = TrainingLog::new("lr");
    let mut best = (model.clone(), None, f64::NEG_INFINITY);
    let features: Vec<Vec<usize>> = train.iter().map(|r| active_features(r, vocab.n_diseases())).collect();
    let mut opt = AdamW::new(schedule.lr, schedule.weight_decay);
    for epoch in 0..schedule.epochs {
        let order = EpochSampling::Shuffle.order(train.len(), derive_seed(schedule.seed, &[0x5A3]), epoch)?;
        let mut total = 0.0;
        for (step, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let snapshot = model.clone();
            let f = |ex: usize, _seed: u64, g: &mut LrModel| -> Result<f64> {
                let z = snapshot.logits(&features[ex]);
                let probs = z.mapv(sigmoid);
                let p = probs.as_slice().expect("contiguous");
                let targets = &train[ex].medications;
                let dz = logit_grad(&probs, &bce_grad(p, targets));
                for &f in &features[ex] {
                    let mut col = g.weight.column_mut(f);
                    col += &dz;
                }
                g.bias += &dz;
                Ok(bce_loss(p, targets))
            };
            let step_seed = derive_seed(schedule.seed, &[0x1A, epoch as u64, step as u64]);
            total += chunk.len() as f64
                * minibatch_step(&mut model, &mut opt, chunk, step_seed, || LrModel::zeros(vocab), &f)?;
        }
        let val_metric = if val.is_empty() {
            None
        } else {
            Some(mean_jaccard(&model.predict_all(val, vocab, 0.5), val)?)
        };
        log.epochs.push(EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss: None,
            val_metric,
        });
        let score = val_metric.unwrap_or(epoch as f64);
        if score > best.2 {
            best = (model.clone(), Some(epoch), score);
        }
    }
    Ok(LrOutput {
        model: best.0,
        log,
        best_epoch: best.1,
    })
}

/// Positive sampling weight per training patient.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PatientWeights(pub HashMap<String, f64>);

impl PatientWeights {
    pub fn get(&self, patient_id: &str) -> Option<f64> {
        self.0.get(patient_id).copied()
    }

    /// Weights aligned with `records`; errors if a patient is missing.
    pub fn aligned(&self, records: &[&PatientRecord]) -> Result<Vec<f64>> {
        records
            .iter()
            .map(|r| {
                self.get(&r.patient_id)
                    .ok_or_else(|| Error::validation(format!("no sampling weight for patient {}", r.patient_id)))
            })
            .collect()
    }
}

/// `1 / freq(rarest disease)`, with frequency floored at 1.
pub fn ips_weights(train: &[&PatientRecord], freqs: &CodeFrequencies) -> PatientWeights {
    PatientWeights(
        train
            .iter()
            .map(|r| (r.patient_id.clone(), 1.0 / freqs.rarest(r).max(1) as f64))
            .collect(),
    )
}

/// `train.len()` indices drawn with replacement, probability proportional
/// to each patient's weight.
pub fn resample_epoch(train: &[&PatientRecord], weights: &PatientWeights, seed: u64) -> Result<Vec<usize>> {
    draw_weighted(&weights.aligned(train)?, train.len(), seed)
}

/// `n` draws with replacement from the categorical distribution `weights`.
pub fn draw_weighted(weights: &[f64], n: usize, seed: u64) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights).map_err(|e| Error::validation(format!("sampling weights: {e}")))?;
    let mut rng = rng_for(seed, &[0x5A4D]);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}
