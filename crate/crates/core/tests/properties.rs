mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use raremed::data::{split_dataset, DdiGraph, Split};
use raremed::encoder::{build_input_sequence, embed, encode, encode_all, EncoderParams};
use raremed::finetune::{bce_loss, combined_loss, ddi_loss, margin_loss, recommend, LossWeights};
use raremed::metrics::{ddi_rate, jaccard, population_std, prauc, precision_recall_f1};
use raremed::synth::{generate_cohort, SynthConfig};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn probs_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

proptest! {
    #[test]
    fn metrics_match_set_oracles(seed in any::<u64>()) {
        let x = random_metric_instance(&mut rng(seed));
        prop_assert_eq!(jaccard(&x.truth, &x.pred).unwrap(), oracle_jaccard(&x.truth, &x.pred));
        let prf = precision_recall_f1(&x.truth, &x.pred).unwrap();
        let (p, r, f) = oracle_prf(&x.truth, &x.pred);
        prop_assert!((prf.precision - p).abs() <= 1e-12);
        prop_assert!((prf.recall - r).abs() <= 1e-12);
        prop_assert!((prf.f1 - f).abs() <= 1e-12);
        prop_assert!((prauc(&x.probs, &x.truth).unwrap() - oracle_prauc(&x.probs, &x.truth)).abs() <= 1e-12);
        prop_assert!((ddi_rate(&x.pred, &x.graph()) - oracle_ddi_rate(&x.pred, &x.adjacency)).abs() <= 1e-12);
    }

    #[test]
    fn metric_ranges_and_symmetry(seed in any::<u64>()) {
        let x = random_metric_instance(&mut rng(seed));
        let j = jaccard(&x.truth, &x.pred).unwrap();
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(j, jaccard(&x.pred, &x.truth).unwrap());
        prop_assert_eq!(jaccard(&x.truth, &x.truth).unwrap(), 1.0);
        let a = prauc(&x.probs, &x.truth).unwrap();
        prop_assert!(a > 0.0 && a <= 1.0 + 1e-12);
        let d = ddi_rate(&x.pred, &x.graph());
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(ddi_rate(&x.pred, &DdiGraph::empty(x.pred.len())), 0.0);
    }

    #[test]
    fn perfect_ranking_has_unit_prauc(truth in prop::collection::vec(any::<bool>(), 1..12)) {
        prop_assume!(truth.iter().any(|&t| t));
        let probs: Vec<f64> = truth.iter().map(|&t| if t { 0.9 } else { 0.1 }).collect();
        prop_assert_eq!(prauc(&probs, &truth).unwrap(), 1.0);
    }

    #[test]
    fn grouping_contract(seed in any::<u64>(), g in 1usize..8) {
        let mut r = rng(seed);
        let ds = random_group_dataset(&mut r);
        prop_assume!(g <= ds.len());
        prop_assert_eq!(check_grouping(&ds, g), Ok(()));
    }

    #[test]
    fn population_std_is_shift_invariant(v in prop::collection::vec(-5.0f64..5.0, 1..8), c in -3.0f64..3.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        prop_assert!((population_std(&v) - population_std(&shifted)).abs() < 1e-9);
        prop_assert!(population_std(&v) >= 0.0);
    }

    #[test]
    fn loss_identities(probs in probs_strategy(5), targets in prop::collection::vec(any::<bool>(), 5), alpha in 0.0f64..=1.0) {
        let g = tiny_graph();
        let w = |a, b| LossWeights::new(a, b).unwrap();
        prop_assert_eq!(combined_loss(&probs, &targets, &g, w(0.0, 0.0)), bce_loss(&probs, &targets));
        prop_assert_eq!(combined_loss(&probs, &targets, &g, w(alpha, 1.0)), ddi_loss(&probs, &g));
        prop_assert_eq!(ddi_loss(&probs, &DdiGraph::empty(5)), 0.0);
        prop_assert_eq!(margin_loss(&probs, &[true; 5]), 0.0);
        prop_assert_eq!(margin_loss(&probs, &[false; 5]), 0.0);
        prop_assert!(bce_loss(&probs, &targets) >= 0.0);
        prop_assert!(margin_loss(&probs, &targets) >= 0.0);
        prop_assert!(ddi_loss(&probs, &g) >= 0.0);
    }

    #[test]
    fn recommend_is_monotone_in_threshold(probs in probs_strategy(8), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let strict = recommend(&probs, hi);
        let loose = recommend(&probs, lo);
        prop_assert!(strict.iter().all(|i| loose.contains(i)));
        prop_assert!(strict.iter().all(|&i| probs[i] > hi));
    }

    #[test]
    fn split_is_a_partition(seed in any::<u64>()) {
        let ds = random_group_dataset(&mut rng(seed));
        prop_assume!(ds.len() >= 6);
        let total = ds.len();
        let split = split_dataset(ds, seed).unwrap();
        let (tr, va, te) = split.split_sizes();
        prop_assert_eq!(tr + va + te, total);
        prop_assert_eq!(tr, 4 * total / 6);
        prop_assert_eq!(va, total / 6);
        let mut ids: Vec<&str> = [Split::Train, Split::Val, Split::Test]
            .iter()
            .flat_map(|&s| split.split_records(s))
            .map(|r| r.patient_id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), total);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn encoder_padding_invariance_and_determinism(
        seed in any::<u64>(),
        d in prop::collection::btree_set(0usize..6, 1..4),
        p in prop::collection::btree_set(0usize..4, 0..3),
        pad in 1usize..5,
    ) {
        let cfg = tiny_config();
        let params = EncoderParams::seeded(&cfg, 6, 4, seed);
        let rec = record("x", &d.into_iter().collect::<Vec<_>>(), &p.into_iter().collect::<Vec<_>>(), &[]);
        let seq = build_input_sequence(&rec, &tiny_vocab(), &cfg).unwrap();
        let r = encode(&seq, &params, &cfg).unwrap();
        prop_assert_eq!(r.len(), cfg.embed_dim);
        prop_assert_eq!(&r, &encode(&seq, &params, &cfg).unwrap());
        let mut padded = seq.clone();
        padded.pad_to(seq.len() + pad);
        let rp = encode(&padded, &params, &cfg).unwrap();
        for (a, b) in r.iter().zip(rp.iter()) {
            prop_assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()).max(1e-12));
        }
        let all = encode_all(&padded, &params, &cfg).unwrap();
        prop_assert_eq!(all.nrows(), padded.len());
    }

    #[test]
    fn embedding_is_additive(seed in any::<u64>(), d in prop::collection::btree_set(0usize..6, 1..4)) {
        let cfg = tiny_config();
        let params = EncoderParams::seeded(&cfg, 6, 4, seed);
        let rec = record("x", &d.into_iter().collect::<Vec<_>>(), &[1, 0], &[]);
        let seq = build_input_sequence(&rec, &tiny_vocab(), &cfg).unwrap();
        let x = embed(&seq, &params).unwrap();
        for t in 0..seq.len() {
            let rel = if seq.segment_ids[t] == 0 {
                params.relevance_disease.row(seq.relevance_ids[t])
            } else {
                params.relevance_procedure.row(seq.relevance_ids[t])
            };
            for k in 0..cfg.embed_dim {
                let expected = params.token[[seq.token_ids[t], k]] + params.segment[[seq.segment_ids[t], k]] + rel[k];
                prop_assert_eq!(x[[t, k]], expected);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn synthetic_records_are_valid(seed in any::<u64>(), noise in 0.0f64..0.3, zipf in 0.5f64..2.5) {
        let cfg = SynthConfig {
            n_patients: 60,
            n_diseases: 20,
            n_procedures: 8,
            n_medications: 10,
            zipf_exponent: zipf,
            mean_diseases_per_patient: 3.0,
            mean_procedures_per_patient: 2.0,
            noise_flip_prob: noise,
            seed,
            ..SynthConfig::default()
        };
        let cohort = generate_cohort(&cfg).unwrap();
        prop_assert_eq!(cohort.dataset.len(), 60);
        let mut ids = std::collections::HashSet::new();
        for r in &cohort.dataset.records {
            prop_assert!(r.validate(&cohort.dataset.vocab).is_ok());
            prop_assert!(!r.diseases.is_empty());
            prop_assert!(ids.insert(r.patient_id.clone()));
        }
        prop_assert_eq!(cohort.ddi.n_medications(), 10);
        let again = generate_cohort(&cfg).unwrap();
        prop_assert_eq!(&again.dataset.records, &cohort.dataset.records);
    }

    #[test]
    fn noiseless_records_equal_ground_truth(seed in any::<u64>()) {
        let cfg = SynthConfig {
            n_patients: 40,
            n_diseases: 20,
            n_procedures: 8,
            n_medications: 10,
            mean_diseases_per_patient: 3.0,
            mean_procedures_per_patient: 2.0,
            noise_flip_prob: 0.0,
            seed,
            ..SynthConfig::default()
        };
        let cohort = generate_cohort(&cfg).unwrap();
        for r in &cohort.dataset.records {
            prop_assert_eq!(&cohort.truth.prescribe(r, 10), &r.medications);
        }
    }
}
