//! Sequence-matching then self-reconstruction pretraining on a small cohort.

use raremed::data::{split_dataset, Split};
use raremed::encoder::{EncoderConfig, EncoderParams};
use raremed::pretrain::{pretrain, PretrainSchedule};
use raremed::synth::{generate_cohort, SynthConfig};

fn main() -> raremed::Result<()> {
    let cohort = generate_cohort(&SynthConfig {
        n_patients: 600,
        n_diseases: 60,
        n_procedures: 20,
        n_medications: 20,
        seed: 5,
        ..SynthConfig::default()
    })?;
    let ds = split_dataset(cohort.dataset, 5)?;
    let vocab = &ds.vocab;
    let config = EncoderConfig {
        embed_dim: 32,
        n_layers: 1,
        n_heads: 2,
        ..EncoderConfig::default()
    };
    let init = EncoderParams::seeded(&config, vocab.n_diseases(), vocab.n_procedures(), 1);
    let schedule = PretrainSchedule {
        smp_epochs: 8,
        sr_epochs: 4,
        seed: 2,
        ..PretrainSchedule::default()
    };
    let out = pretrain(
        &ds.split_records(Split::Train),
        &ds.split_records(Split::Val),
        vocab,
        init,
        &config,
        &schedule,
    )?;
    for (name, log) in [("smp", &out.smp_log), ("sr", &out.sr_log)] {
        for e in &log.epochs {
            println!(
                "{name} epoch {:>2}  train {:.4}  val {:.4}  metric {}",
                e.epoch,
                e.train_loss,
                e.val_loss.unwrap_or(f64::NAN),
                e.val_metric.map_or("-".into(), |m| format!("{m:.3}"))
            );
        }
    }
    Ok(())
}
