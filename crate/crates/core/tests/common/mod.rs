#![allow(dead_code)]

use raremed::data::{CodeVocabulary, DdiGraph, PatientRecord};
use raremed::encoder::{EncoderConfig, EncoderParams};
use raremed::nn::Parameterized;
use raremed::train::{Head, HeadedEncoder};

/// 6 diseases + 4 procedures, 5 medications.
pub fn tiny_vocab() -> CodeVocabulary {
    CodeVocabulary::new(
        (0..6).map(|i| format!("D{i}")).collect(),
        (0..4).map(|i| format!("P{i}")).collect(),
        (0..5).map(|i| format!("M{i}")).collect(),
    )
    .unwrap()
}

pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        n_layers: 1,
        n_heads: 1,
        embed_dim: 8,
        max_disease_len: 6,
        max_procedure_len: 4,
        dropout: 0.0,
    }
}

pub fn record(id: &str, d: &[usize], p: &[usize], m: &[usize]) -> PatientRecord {
    let mut meds = vec![false; 5];
    for &i in m {
        meds[i] = true;
    }
    PatientRecord {
        patient_id: id.into(),
        diseases: d.to_vec(),
        procedures: p.to_vec(),
        medications: meds,
    }
}

pub fn tiny_graph() -> DdiGraph {
    DdiGraph::from_edges(5, [(0, 1), (1, 3), (2, 4)])
}

/// Scales initialized parameters up so finite differences are informative.
pub fn scaled<P: Parameterized>(mut p: P, factor: f64) -> P {
    p.scale(factor);
    p
}

pub fn tiny_encoder(seed: u64) -> EncoderParams {
    scaled(EncoderParams::seeded(&tiny_config(), 6, 4, seed), 20.0)
}

pub fn tiny_headed(out: usize, seed: u64) -> HeadedEncoder {
    let mut rng = raremed::train::rng_for(seed, &[77]);
    HeadedEncoder {
        encoder: tiny_encoder(seed),
        head: scaled(Head::init(&mut rng, out, 8), 5.0),
    }
}

// Brute-force metric oracles, written against sets rather than masks.

pub fn index_set(mask: &[bool]) -> std::collections::BTreeSet<usize> {
    mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
}

pub fn oracle_jaccard(truth: &[bool], pred: &[bool]) -> f64 {
    let (t, p) = (index_set(truth), index_set(pred));
    let union = t.union(&p).count();
    if union == 0 {
        1.0
    } else {
        t.intersection(&p).count() as f64 / union as f64
    }
}

/// (precision, recall, f1)
pub fn oracle_prf(truth: &[bool], pred: &[bool]) -> (f64, f64, f64) {
    let (t, p) = (index_set(truth), index_set(pred));
    let tp = t.intersection(&p).count() as f64;
    let precision = if p.is_empty() { 0.0 } else { tp / p.len() as f64 };
    let recall = if t.is_empty() { 0.0 } else { tp / t.len() as f64 };
    let f1 = if tp == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    (precision, recall, f1)
}

/// Average precision: mean over positives of precision at that positive's
/// rank, ranks by descending score with ties broken by lower index first.
pub fn oracle_prauc(probs: &[f64], truth: &[bool]) -> f64 {
    let n = probs.len();
    let ahead = |i: usize, j: usize| probs[j] > probs[i] || (probs[j] == probs[i] && j < i);
    let positives: Vec<usize> = (0..n).filter(|&i| truth[i]).collect();
    let mut total = 0.0;
    for &i in &positives {
        let rank = 1 + (0..n).filter(|&j| ahead(i, j)).count();
        let hits = 1 + (0..n).filter(|&j| truth[j] && ahead(i, j)).count();
        total += hits as f64 / rank as f64;
    }
    total / positives.len() as f64
}

pub fn oracle_ddi_rate(pred: &[bool], adjacency: &[Vec<bool>]) -> f64 {
    let set: Vec<usize> = index_set(pred).into_iter().collect();
    let mut pairs = 0usize;
    let mut hits = 0usize;
    for a in 0..set.len() {
        for b in 0..set.len() {
            if a < b {
                pairs += 1;
                hits += usize::from(adjacency[set[a]][set[b]]);
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        hits as f64 / pairs as f64
    }
}

pub struct MetricInstance {
    pub truth: Vec<bool>,
    pub pred: Vec<bool>,
    pub probs: Vec<f64>,
    pub adjacency: Vec<Vec<bool>>,
}

impl MetricInstance {
    pub fn graph(&self) -> DdiGraph {
        let n = self.truth.len();
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)));
        DdiGraph::from_edges(n, edges.filter(|&(u, v)| self.adjacency[u][v]))
    }
}

/// Random (m, m̂, ô, A) with 1 ≤ |M| ≤ 12 and at least one true label.
/// Scores come from a coarse grid so ties occur.
pub fn random_metric_instance<R: rand::Rng>(rng: &mut R) -> MetricInstance {
    let n = rng.random_range(1..=12);
    let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    if !truth.iter().any(|&t| t) {
        let i = rng.random_range(0..n);
        truth[i] = true;
    }
    let pred = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let probs = (0..n).map(|_| rng.random_range(0..8) as f64 / 7.0).collect();
    let mut adjacency = vec![vec![false; n]; n];
    for u in 0..n {
        for v in u + 1..n {
            let e = rng.random_bool(0.3);
            adjacency[u][v] = e;
            adjacency[v][u] = e;
        }
    }
    MetricInstance {
        truth,
        pred,
        probs,
        adjacency,
    }
}

/// Random dataset of 1..=60 patients over up to 15 diseases.
pub fn random_group_dataset<R: rand::Rng>(rng: &mut R) -> raremed::data::EhrDataset {
    let nd = rng.random_range(1..=15);
    let vocab = CodeVocabulary::new(
        (0..nd).map(|i| format!("D{i}")).collect(),
        vec!["P0".into()],
        vec!["M0".into()],
    )
    .unwrap();
    let n = rng.random_range(1..=60);
    let records = (0..n)
        .map(|i| {
            let k = rng.random_range(1..=nd.min(4));
            let diseases = rand::seq::index::sample(rng, nd, k).into_vec();
            PatientRecord {
                patient_id: format!("p{i:03}"),
                diseases,
                procedures: vec![],
                medications: vec![rng.random_bool(0.5)],
            }
        })
        .collect();
    raremed::data::EhrDataset::new(vocab, records).unwrap()
}

/// Checks the grouping contract; returns a description of the first
/// violation.
pub fn check_grouping(dataset: &raremed::data::EhrDataset, n_groups: usize) -> Result<(), String> {
    use raremed::data::{assign_popularity_groups, code_frequencies, Split};
    let freqs = code_frequencies(dataset, Split::Train);
    let records: Vec<&PatientRecord> = dataset.records.iter().collect();
    let groups = assign_popularity_groups(records.iter().copied(), &freqs, n_groups).map_err(|e| e.to_string())?;
    let sizes = groups.sizes();
    let (min, max) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    if max - min > 1 {
        return Err(format!("group sizes {sizes:?}"));
    }
    for a in &records {
        for b in &records {
            let (ga, gb) = (groups.group_of(&a.patient_id).unwrap(), groups.group_of(&b.patient_id).unwrap());
            if freqs.rarest(a) > freqs.rarest(b) && ga > gb {
                return Err(format!(
                    "{} (rarest {}) in G{ga} after {} (rarest {}) in G{gb}",
                    a.patient_id,
                    freqs.rarest(a),
                    b.patient_id,
                    freqs.rarest(b)
                ));
            }
        }
    }
    Ok(())
}
