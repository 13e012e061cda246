//! Fine-tunes a small model and prints recommendations for a few test patients.

use raremed::data::{load_ddi_graph, split_dataset, CodeKind, Split};
use raremed::encoder::{EncoderConfig, EncoderParams};
use raremed::finetune::{finetune, EpochSampling, LossWeights};
use raremed::metrics::jaccard;
use raremed::synth::{generate_cohort, SynthConfig};
use raremed::train::Schedule;

fn main() -> raremed::Result<()> {
    let cohort = generate_cohort(&SynthConfig {
        n_patients: 600,
        n_diseases: 60,
        n_procedures: 20,
        n_medications: 20,
        seed: 9,
        ..SynthConfig::default()
    })?;
    // Round-trip the interaction graph through its on-disk format.
    let dir = std::env::temp_dir().join("raremed-finetune-example");
    cohort.save(&dir)?;
    let ds = split_dataset(cohort.dataset, 9)?;
    let graph = load_ddi_graph(dir.join("ddi.tsv"), &ds.vocab)?.graph;

    let config = EncoderConfig {
        embed_dim: 32,
        n_layers: 1,
        n_heads: 2,
        ..EncoderConfig::default()
    };
    let vocab = &ds.vocab;
    let encoder = EncoderParams::seeded(&config, vocab.n_diseases(), vocab.n_procedures(), 4);
    let schedule = Schedule {
        epochs: 10,
        seed: 4,
        ..Schedule::default()
    };
    let out = finetune(
        encoder,
        &config,
        vocab,
        &ds.split_records(Split::Train),
        &ds.split_records(Split::Val),
        &graph,
        &schedule,
        LossWeights::default(),
        &EpochSampling::Shuffle,
    )?;
    println!("best epoch {:?}", out.best_epoch);

    let names = |kind, ids: &[usize]| -> Vec<String> {
        ids.iter().map(|&i| vocab.code(kind, i).unwrap().to_string()).collect()
    };
    for r in ds.split_records(Split::Test).into_iter().take(4) {
        let rec = out.model.recommend(r, vocab, 0.5)?;
        let mut mask = vec![false; vocab.n_medications()];
        rec.iter().for_each(|&i| mask[i] = true);
        println!("{}: diseases {:?} procedures {:?}", r.patient_id, names(CodeKind::Disease, &r.diseases), names(CodeKind::Procedure, &r.procedures));
        println!("  recommended {:?}", names(CodeKind::Medication, &rec));
        println!("  prescribed  {:?}", names(CodeKind::Medication, &r.medication_ids()));
        println!("  jaccard {:.3}", jaccard(&r.medications, &mask)?);
    }
    Ok(())
}
