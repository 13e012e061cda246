//! Finite-difference check of the fine-tuning loss gradient on a tiny model.

use raremed::data::{CodeVocabulary, DdiGraph, PatientRecord};
use raremed::encoder::{EncoderConfig, EncoderParams};
use raremed::finetune::{combined_record_grad, combined_record_loss, LossWeights, RecommendationModel};
use raremed::gradcheck::check_gradient;
use raremed::nn::Parameterized;

fn main() -> raremed::Result<()> {
    let vocab = CodeVocabulary::new(
        (0..6).map(|i| format!("D{i}")).collect(),
        (0..4).map(|i| format!("P{i}")).collect(),
        (0..5).map(|i| format!("M{i}")).collect(),
    )?;
    let config = EncoderConfig {
        n_layers: 1,
        n_heads: 1,
        embed_dim: 8,
        max_disease_len: 6,
        max_procedure_len: 4,
        dropout: 0.0,
    };
    let mut model = RecommendationModel::new(config.clone(), EncoderParams::seeded(&config, 6, 4, 3), 5, 3);
    // Initial weights are small; scale them so differences are well above
    // round-off, but not so far that probabilities saturate.
    model.params.encoder.scale(5.0);
    model.params.head.scale(5.0);

    let graph = DdiGraph::from_edges(5, [(0, 1), (1, 3), (2, 4)]);
    let record = PatientRecord {
        patient_id: "x".into(),
        diseases: vec![1, 5, 3],
        procedures: vec![2],
        medications: vec![true, true, false, true, false],
    };
    for (alpha, beta) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.03, 0.7)] {
        let w = LossWeights::new(alpha, beta)?;
        let analytic = combined_record_grad(&model, &record, &vocab, &graph, w)?;
        let report = check_gradient(&model.params, &analytic, 1e-4, |p| {
            let m = RecommendationModel {
                config: config.clone(),
                params: p.clone(),
            };
            combined_record_loss(&m, &record, &vocab, &graph, w)
        })?;
        println!(
            "alpha {alpha:<4} beta {beta:<4} params {} failed {} worst {}[{}] rel {:.2e}",
            report.n_params, report.n_failed, report.worst_name, report.worst_index, report.worst_rel_error
        );
    }
    Ok(())
}
