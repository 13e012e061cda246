//! Trade-off between accuracy and interaction rate as the DDI weight grows.

use raremed::data::{split_dataset, Split};
use raremed::encoder::{EncoderConfig, EncoderParams};
use raremed::finetune::{finetune, EpochSampling, LossWeights};
use raremed::metrics::{ddi_rate, jaccard};
use raremed::synth::{generate_cohort, SynthConfig};
use raremed::train::Schedule;

fn main() -> raremed::Result<()> {
    let cohort = generate_cohort(&SynthConfig {
        n_patients: 600,
        n_diseases: 60,
        n_procedures: 20,
        n_medications: 20,
        ddi_density: 0.15,
        seed: 21,
        ..SynthConfig::default()
    })?;
    let ds = split_dataset(cohort.dataset, 21)?;
    let vocab = &ds.vocab;
    let config = EncoderConfig {
        embed_dim: 32,
        n_layers: 1,
        n_heads: 2,
        ..EncoderConfig::default()
    };
    let test = ds.split_records(Split::Test);
    println!("{:>5} {:>8} {:>8}", "beta", "jaccard", "ddi");
    for beta in [0.0, 0.25, 0.5, 0.75] {
        let out = finetune(
            EncoderParams::seeded(&config, vocab.n_diseases(), vocab.n_procedures(), 8),
            &config,
            vocab,
            &ds.split_records(Split::Train),
            &ds.split_records(Split::Val),
            &cohort.ddi,
            &Schedule {
                epochs: 8,
                seed: 8,
                ..Schedule::default()
            },
            LossWeights::new(0.03, beta)?,
            &EpochSampling::Shuffle,
        )?;
        let preds = out.model.predict_all(&test, vocab, 0.5)?;
        let n = test.len() as f64;
        let mut j = 0.0;
        let mut d = 0.0;
        for (p, r) in preds.iter().zip(&test) {
            j += jaccard(&r.medications, &p.recommended_mask())? / n;
            d += ddi_rate(&p.recommended_mask(), &cohort.ddi) / n;
        }
        println!("{beta:>5} {j:>8.4} {d:>8.4}");
    }
    Ok(())
}
