//! Self-supervised pretraining: sequence matching prediction (is this
//! disease span paired with this procedure span?) followed by self
//! reconstruction of the multi-hot input codes from the patient
//! representation.

use ndarray::Array1;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CodeVocabulary, PatientRecord};
use crate::encoder::{build_from_spans, encode, encoder_backward, encoder_forward, EncoderConfig, EncoderParams, InputSequence};
use crate::error::{Error, Result};
use crate::finetune::{bce_grad, bce_loss};
use crate::nn::AdamW;
use crate::train::{
    clip_prob, epoch_order, logit_grad, minibatch_step, rng_for, EpochLog, Head, HeadedEncoder, Schedule, TrainingLog,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Span {
    Diseases,
    Procedures,
}

/// A record's true input and a copy with one span taken from a donor.
#[derive(Clone, Debug, PartialEq)]
pub struct SmpPair {
    pub source: usize,
    pub donor: usize,
    pub substituted: Span,
    pub paired: InputSequence,
    pub unpaired: InputSequence,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmpBatch {
    pub pairs: Vec<SmpPair>,
}

/// One paired and one unpaired example per record. The substituted span is
/// chosen uniformly and the donor uniformly among the other records.
pub fn make_smp_batch(
    records: &[&PatientRecord],
    vocab: &CodeVocabulary,
    config: &EncoderConfig,
    seed: u64,
) -> Result<SmpBatch> {
    if records.len() < 2 {
        return Err(Error::validation("sequence matching needs at least two records"));
    }
    let mut rng = rng_for(seed, &[0x53D0]);
    let nd = vocab.n_diseases();
    let mut pairs = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let mut donor = rng.random_range(0..records.len() - 1);
        if donor >= i {
            donor += 1;
        }
        let substituted = if rng.random::<bool>() { Span::Diseases } else { Span::Procedures };
        let d = records[donor];
        let unpaired = match substituted {
            Span::Diseases => build_from_spans(&d.diseases, &r.procedures, nd, config)?,
            Span::Procedures => build_from_spans(&r.diseases, &d.procedures, nd, config)?,
        };
        pairs.push(SmpPair {
            source: i,
            donor,
            substituted,
            paired: build_from_spans(&r.diseases, &r.procedures, nd, config)?,
            unpaired,
        });
    }
    Ok(SmpBatch { pairs })
}

/// Binary cross-entropy over one paired/unpaired pair:
/// `-ln(p_paired) - ln(1 - p_unpaired)` after clipping.
pub fn smp_loss(p_paired: f64, p_unpaired: f64) -> f64 {
    -clip_prob(p_paired).ln() - (1.0 - clip_prob(p_unpaired)).ln()
}

/// Multi-hot target over diseases then procedures.
pub fn sr_targets(record: &PatientRecord, vocab: &CodeVocabulary) -> Vec<bool> {
    let mut c = vec![false; vocab.n_clinical_codes()];
    for &d in &record.diseases {
        c[d] = true;
    }
    for &p in &record.procedures {
        c[vocab.n_diseases() + p] = true;
    }
    c
}

/// Summed reconstruction cross-entropy of `sigma(W r + b)` against `targets`.
pub fn sr_loss(r: &Array1<f64>, targets: &[bool], head: &Head) -> f64 {
    bce_loss(head.probs(r).as_slice().expect("contiguous"), targets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSchedule {
    pub smp_epochs: usize,
    pub sr_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PretrainSchedule {
    fn default() -> Self {
        PretrainSchedule {
            smp_epochs: 30,
            sr_epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.1,
            seed: 0,
        }
    }
}

impl PretrainSchedule {
    pub fn paper() -> Self {
        PretrainSchedule {
            lr: 1e-5,
            ..PretrainSchedule::default()
        }
    }
}

/// Output of both pretraining phases.
#[derive(Clone, Debug)]
pub struct Pretrained {
    /// Encoder state between the two phases.
    pub after_smp: EncoderParams,
    pub encoder: EncoderParams,
    pub smp_head: Head,
    pub sr_head: Head,
    pub smp_log: TrainingLog,
    pub sr_log: TrainingLog,
}

// Seed-path tags for the pretraining substreams.
const TAG_SMP: u64 = 0x5350;
const TAG_SR: u64 = 0x5352;
const TAG_INIT: u64 = 0x1417;

/// Held-out SMP accuracy and mean loss for a fixed negative sample.
pub fn smp_evaluate(
    model: &HeadedEncoder,
    config: &EncoderConfig,
    batch: &SmpBatch,
) -> Result<(f64, f64)> {
    let scored: Vec<Result<(f64, usize)>> = batch
        .pairs
        .par_iter()
        .map(|pair| {
            let pp = model.head.probs(&encode(&pair.paired, &model.encoder, config)?)[0];
            let pu = model.head.probs(&encode(&pair.unpaired, &model.encoder, config)?)[0];
            Ok((smp_loss(pp, pu), usize::from(pp > 0.5) + usize::from(pu <= 0.5)))
        })
        .collect();
    let mut loss = 0.0;
    let mut correct = 0;
    for s in scored {
        let (l, c) = s?;
        loss += l;
        correct += c;
    }
    let n = batch.pairs.len() as f64;
    Ok((correct as f64 / (2.0 * n), loss / n))
}

/// Mean held-out reconstruction loss.
pub fn sr_evaluate(
    model: &HeadedEncoder,
    config: &EncoderConfig,
    records: &[&PatientRecord],
    vocab: &CodeVocabulary,
) -> Result<f64> {
    let losses: Vec<Result<f64>> = records
        .par_iter()
        .map(|r| {
            let seq = build_from_spans(&r.diseases, &r.procedures, vocab.n_diseases(), config)?;
            let rep = encode(&seq, &model.encoder, config)?;
            Ok(sr_loss(&rep, &sr_targets(r, vocab), &model.head))
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / records.len().max(1) as f64)
}

fn smp_example_grad(
    model: &HeadedEncoder,
    config: &EncoderConfig,
    pair: &SmpPair,
    seed: u64,
    grads: &mut HeadedEncoder,
) -> Result<f64> {
    let mut rng = rng_for(seed, &[]);
    let (rp, cp) = encoder_forward(&pair.paired, &model.encoder, config, Some(&mut rng))?;
    let (ru, cu) = encoder_forward(&pair.unpaired, &model.encoder, config, Some(&mut rng))?;
    let pp = model.head.probs(&rp);
    let pu = model.head.probs(&ru);
    let loss = smp_loss(pp[0], pu[0]);
    let dzp = logit_grad(&pp, &[-1.0 / clip_prob(pp[0])]);
    let dzu = logit_grad(&pu, &[1.0 / (1.0 - clip_prob(pu[0]))]);
    let drp = model.head.backward(&rp, &dzp, &mut grads.head);
    let dru = model.head.backward(&ru, &dzu, &mut grads.head);
    encoder_backward(&model.encoder, config, &cp, &drp, &mut grads.encoder);
    encoder_backward(&model.encoder, config, &cu, &dru, &mut grads.encoder);
    Ok(loss)
}

fn sr_example_grad(
    model: &HeadedEncoder,
    config: &EncoderConfig,
    seq: &InputSequence,
    targets: &[bool],
    seed: u64,
    grads: &mut HeadedEncoder,
) -> Result<f64> {
    let mut rng = rng_for(seed, &[]);
    let (r, cache) = encoder_forward(seq, &model.encoder, config, Some(&mut rng))?;
    let probs = model.head.probs(&r);
    let p = probs.as_slice().expect("contiguous");
    let loss = bce_loss(p, targets);
    let dz = logit_grad(&probs, &bce_grad(p, targets));
    let dr = model.head.backward(&r, &dz, &mut grads.head);
    encoder_backward(&model.encoder, config, &cache, &dr, &mut grads.encoder);
    Ok(loss)
}

/// Sequence-matching phase. Negatives are redrawn every epoch; the
/// held-out metric uses one fixed negative sample of `val`.
pub fn pretrain_smp(
    train: &[&PatientRecord],
    val: &[&PatientRecord],
    vocab: &CodeVocabulary,
    encoder: EncoderParams,
    config: &EncoderConfig,
    schedule: &PretrainSchedule,
) -> Result<(HeadedEncoder, TrainingLog)> {
    let head = Head::init(&mut rng_for(schedule.seed, &[TAG_INIT, TAG_SMP]), 1, encoder.dim());
    let mut model = HeadedEncoder { encoder, head };
    let mut log = TrainingLog::new("smp");
    if schedule.smp_epochs == 0 {
        return Ok((model, log));
    }
    let val_batch = (val.len() >= 2)
        .then(|| make_smp_batch(val, vocab, config, crate::train::derive_seed(schedule.seed, &[TAG_SMP, u64::MAX])))
        .transpose()?;
    let mut opt = AdamW::new(schedule.lr, schedule.weight_decay);
    for epoch in 0..schedule.smp_epochs {
        let batch = make_smp_batch(train, vocab, config, crate::train::derive_seed(schedule.seed, &[TAG_SMP, epoch as u64]))?;
        let order = epoch_order(train.len(), schedule.seed ^ TAG_SMP, epoch);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let snapshot = model.clone();
            let f = |ex: usize, seed: u64, g: &mut HeadedEncoder| smp_example_grad(&snapshot, config, &batch.pairs[ex], seed, g);
            let step_seed = crate::train::derive_seed(schedule.seed, &[TAG_SMP, epoch as u64, step as u64]);
            total += chunk.len() as f64
                * minibatch_step(&mut model, &mut opt, chunk, step_seed, || snapshot.zeros_like(), &f)
                    .map_err(|e| with_context(e, "smp", epoch))?;
        }
        let (val_metric, val_loss) = match &val_batch {
            Some(b) => {
                let (acc, loss) = smp_evaluate(&model, config, b)?;
                (Some(acc), Some(loss))
            }
            None => (None, None),
        };
        let entry = EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            val_metric,
        };
        log::info!("smp epoch {epoch}: loss {:.5} val acc {:?}", entry.train_loss, entry.val_metric);
        log.epochs.push(entry);
    }
    Ok((model, log))
}

/// Self-reconstruction phase.
pub fn pretrain_sr(
    train: &[&PatientRecord],
    val: &[&PatientRecord],
    vocab: &CodeVocabulary,
    encoder: EncoderParams,
    config: &EncoderConfig,
    schedule: &PretrainSchedule,
) -> Result<(HeadedEncoder, TrainingLog)> {
    let head = Head::init(
        &mut rng_for(schedule.seed, &[TAG_INIT, TAG_SR]),
        vocab.n_clinical_codes(),
        encoder.dim(),
    );
    let mut model = HeadedEncoder { encoder, head };
    let mut log = TrainingLog::new("sr");
    if schedule.sr_epochs == 0 {
        return Ok((model, log));
    }
    let seqs: Vec<InputSequence> = train
        .iter()
        .map(|r| build_from_spans(&r.diseases, &r.procedures, vocab.n_diseases(), config))
        .collect::<Result<_>>()?;
    let targets: Vec<Vec<bool>> = train.iter().map(|r| sr_targets(r, vocab)).collect();
    let mut opt = AdamW::new(schedule.lr, schedule.weight_decay);
    for epoch in 0..schedule.sr_epochs {
        let order = epoch_order(train.len(), schedule.seed ^ TAG_SR, epoch);
        let mut total = 0.0;
        for (step, chunk) in order.chunks(schedule.batch_size).enumerate() {
            let snapshot = model.clone();
            let f = |ex: usize, seed: u64, g: &mut HeadedEncoder| {
                sr_example_grad(&snapshot, config, &seqs[ex], &targets[ex], seed, g)
            };
            let step_seed = crate::train::derive_seed(schedule.seed, &[TAG_SR, epoch as u64, step as u64]);
            total += chunk.len() as f64
                * minibatch_step(&mut model, &mut opt, chunk, step_seed, || snapshot.zeros_like(), &f)
                    .map_err(|e| with_context(e, "sr", epoch))?;
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(sr_evaluate(&model, config, val, vocab)?)
        };
        let entry = EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_loss,
            val_metric: None,
        };
        log::info!("sr epoch {epoch}: loss {:.5} val loss {:?}", entry.train_loss, entry.val_loss);
        log.epochs.push(entry);
    }
    Ok((model, log))
}

fn with_context(e: Error, phase: &str, epoch: usize) -> Error {
    match e {
        Error::NonFinite { value, context } => Error::NonFinite {
            value,
            context: format!("{phase} epoch {epoch}, {context}"),
        },
        other => other,
    }
}

/// Runs sequence matching, then self reconstruction, on the training records.
pub fn pretrain(
    train: &[&PatientRecord],
    val: &[&PatientRecord],
    vocab: &CodeVocabulary,
    encoder: EncoderParams,
    config: &EncoderConfig,
    schedule: &PretrainSchedule,
) -> Result<Pretrained> {
    config.validate()?;
    Schedule {
        epochs: 0,
        batch_size: schedule.batch_size,
        lr: schedule.lr,
        weight_decay: schedule.weight_decay,
        seed: 0,
    }
    .validate()?;
    let (smp, smp_log) = pretrain_smp(train, val, vocab, encoder, config, schedule)?;
    let after_smp = smp.encoder.clone();
    let (sr, sr_log) = pretrain_sr(train, val, vocab, smp.encoder, config, schedule)?;
    Ok(Pretrained {
        after_smp,
        encoder: sr.encoder,
        smp_head: smp.head,
        sr_head: sr.head,
        smp_log,
        sr_log,
    })
}

/// Total loss of an SMP pair for a given model; used by gradient checks.
pub fn smp_pair_loss(model: &HeadedEncoder, config: &EncoderConfig, pair: &SmpPair) -> Result<f64> {
    let pp = model.head.probs(&encode(&pair.paired, &model.encoder, config)?)[0];
    let pu = model.head.probs(&encode(&pair.unpaired, &model.encoder, config)?)[0];
    Ok(smp_loss(pp, pu))
}

/// Analytic gradient of [`smp_pair_loss`] (no dropout).
pub fn smp_pair_grad(model: &HeadedEncoder, config: &EncoderConfig, pair: &SmpPair) -> Result<HeadedEncoder> {
    let cfg = EncoderConfig {
        dropout: 0.0,
        ..config.clone()
    };
    let mut g = model.zeros_like();
    smp_example_grad(model, &cfg, pair, 0, &mut g)?;
    Ok(g)
}

/// Analytic gradient of the reconstruction loss for one record (no dropout).
pub fn sr_record_grad(
    model: &HeadedEncoder,
    config: &EncoderConfig,
    record: &PatientRecord,
    vocab: &CodeVocabulary,
) -> Result<HeadedEncoder> {
    let cfg = EncoderConfig {
        dropout: 0.0,
        ..config.clone()
    };
    let seq = build_from_spans(&record.diseases, &record.procedures, vocab.n_diseases(), &cfg)?;
    let mut g = model.zeros_like();
    sr_example_grad(model, &cfg, &seq, &sr_targets(record, vocab), 0, &mut g)?;
    Ok(g)
}
