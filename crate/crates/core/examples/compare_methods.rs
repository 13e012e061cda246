//! Overall and group-wise comparison of the pretrained model, its
//! from-scratch ablation, logistic regression and IPS rebalancing.

use raremed::baselines::{ips_weights, train_lr};
use raremed::data::{assign_popularity_groups, code_frequencies, split_dataset, Split};
use raremed::encoder::{EncoderConfig, EncoderParams};
use raremed::finetune::{finetune, EpochSampling, LossWeights};
use raremed::metrics::{evaluate, render_table};
use raremed::pretrain::{pretrain, PretrainSchedule};
use raremed::synth::{generate_cohort, SynthConfig};
use raremed::train::Schedule;

fn main() -> raremed::Result<()> {
    let cohort = generate_cohort(&SynthConfig {
        n_patients: 800,
        n_diseases: 80,
        n_procedures: 20,
        n_medications: 20,
        seed: 3,
        ..SynthConfig::default()
    })?;
    let ds = split_dataset(cohort.dataset, 3)?;
    let vocab = &ds.vocab;
    let (train, val, test) = (ds.split_records(Split::Train), ds.split_records(Split::Val), ds.split_records(Split::Test));
    let freqs = code_frequencies(&ds, Split::Train);
    let groups = assign_popularity_groups(test.iter().copied(), &freqs, 5)?;

    let config = EncoderConfig {
        embed_dim: 32,
        n_layers: 1,
        n_heads: 2,
        ..EncoderConfig::default()
    };
    let init = EncoderParams::seeded(&config, vocab.n_diseases(), vocab.n_procedures(), 1);
    let schedule = Schedule {
        epochs: 12,
        seed: 1,
        ..Schedule::default()
    };
    let pre = pretrain(
        &train,
        &val,
        vocab,
        init.clone(),
        &config,
        &PretrainSchedule {
            smp_epochs: 6,
            sr_epochs: 6,
            seed: 1,
            ..PretrainSchedule::default()
        },
    )?;

    let run = |encoder: EncoderParams, sampling: &EpochSampling| -> raremed::Result<_> {
        let out = finetune(encoder, &config, vocab, &train, &val, &cohort.ddi, &schedule, LossWeights::default(), sampling)?;
        evaluate(&out.model.predict_all(&test, vocab, 0.5)?, &test, &cohort.ddi, &groups)
    };
    let ips = EpochSampling::Weighted(ips_weights(&train, &freqs).aligned(&train)?);
    let lr = train_lr(&train, &val, vocab, &Schedule { epochs: 30, lr: 3e-2, ..schedule.clone() })?;

    let rows = vec![
        ("raremed".to_string(), Some(run(pre.encoder, &EpochSampling::Shuffle)?)),
        ("raremed-no-pretrain".to_string(), Some(run(init.clone(), &EpochSampling::Shuffle)?)),
        ("rebalancing".to_string(), Some(run(init, &ips)?)),
        ("lr".to_string(), Some(evaluate(&lr.model.predict_all(&test, vocab, 0.5), &test, &cohort.ddi, &groups)?)),
    ];
    print!("{}", render_table(&rows));
    Ok(())
}
