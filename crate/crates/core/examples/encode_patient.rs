//! Lays out one visit as `[CLS] d [SEP] p` and encodes it.

use raremed::data::{CodeKind, CodeVocabulary, PatientRecord};
use raremed::encoder::{build_input_sequence, encode, EncoderConfig, EncoderParams};

fn main() -> raremed::Result<()> {
    let vocab = CodeVocabulary::new(
        vec!["I10".into(), "E11.9".into(), "N18.3".into(), "I50.9".into()],
        vec!["3893".into(), "9904".into()],
        vec!["metformin".into(), "lisinopril".into(), "furosemide".into()],
    )?;
    let record = PatientRecord {
        patient_id: "demo".into(),
        diseases: vec![
            vocab.id(CodeKind::Disease, "I50.9").unwrap(),
            vocab.id(CodeKind::Disease, "I10").unwrap(),
        ],
        procedures: vec![vocab.id(CodeKind::Procedure, "3893").unwrap()],
        medications: vec![false, true, true],
    };
    record.validate(&vocab)?;

    let config = EncoderConfig {
        embed_dim: 16,
        n_layers: 2,
        n_heads: 2,
        ..EncoderConfig::default()
    };
    let params = EncoderParams::seeded(&config, vocab.n_diseases(), vocab.n_procedures(), 7);
    let seq = build_input_sequence(&record, &vocab, &config)?;
    println!("tokens    {:?}", seq.token_ids);
    println!("segments  {:?}", seq.segment_ids);
    println!("relevance {:?}", seq.relevance_ids);

    let r = encode(&seq, &params, &config)?;
    println!("representation dim {}: {:.4}", r.len(), r);

    let mut padded = seq.clone();
    padded.pad_to(seq.len() + 3);
    let rp = encode(&padded, &params, &config)?;
    let drift = r.iter().zip(&rp).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max change after padding: {drift:e}");

    let swapped = PatientRecord {
        diseases: record.diseases.iter().rev().copied().collect(),
        ..record.clone()
    };
    let rs = encode(&build_input_sequence(&swapped, &vocab, &config)?, &params, &config)?;
    let moved = r.iter().zip(&rs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max change after swapping disease priority: {moved:.4}");
    Ok(())
}
