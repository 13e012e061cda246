//! Set-based recommendation metrics and the group-wise fairness report.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{DdiGraph, PatientRecord, PopularityGroups};
use crate::error::{Error, Result};

fn check_len(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::validation(format!("vector lengths differ: {a} vs {b}")))
    }
}

fn overlap(truth: &[bool], predicted: &[bool]) -> (usize, usize, usize) {
    let mut inter = 0;
    let mut n_true = 0;
    let mut n_pred = 0;
    for (&t, &p) in truth.iter().zip(predicted) {
        inter += usize::from(t && p);
        n_true += usize::from(t);
        n_pred += usize::from(p);
    }
    (inter, n_true, n_pred)
}

/// Intersection over union of the two index sets; two empty sets score 1.
pub fn jaccard(truth: &[bool], predicted: &[bool]) -> Result<f64> {
    check_len(truth.len(), predicted.len())?;
    let (inter, n_true, n_pred) = overlap(truth, predicted);
    let union = n_true + n_pred - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecisionRecall {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 with zero conventions for empty denominators.
pub fn precision_recall_f1(truth: &[bool], predicted: &[bool]) -> Result<PrecisionRecall> {
    check_len(truth.len(), predicted.len())?;
    let (inter, n_true, n_pred) = overlap(truth, predicted);
    let precision = if n_pred == 0 { 0.0 } else { inter as f64 / n_pred as f64 };
    let recall = if n_true == 0 { 0.0 } else { inter as f64 / n_true as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PrecisionRecall { precision, recall, f1 })
}

/// Step-wise area under the precision-recall curve over all cut-offs of the
/// ranking by descending probability (ties by ascending index).
pub fn prauc(probs: &[f64], truth: &[bool]) -> Result<f64> {
    check_len(probs.len(), truth.len())?;
    let n_true = truth.iter().filter(|&&t| t).count();
    if n_true == 0 {
        return Err(Error::validation("PRAUC is undefined without positive labels"));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for (k, &i) in order.iter().enumerate() {
        hits += usize::from(truth[i]);
        let precision = hits as f64 / (k + 1) as f64;
        let recall = hits as f64 / n_true as f64;
        area += precision * (recall - prev_recall);
        prev_recall = recall;
    }
    Ok(area)
}

/// Fraction of unordered distinct pairs in the predicted set that interact.
pub fn ddi_rate(predicted: &[bool], graph: &DdiGraph) -> f64 {
    let set: Vec<usize> = predicted
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| p.then_some(i))
        .collect();
    if set.len() < 2 {
        return 0.0;
    }
    let mut hits = 0usize;
    for (a, &u) in set.iter().enumerate() {
        for &v in &set[a + 1..] {
            hits += usize::from(graph.interacts(u, v));
        }
    }
    let pairs = set.len() * (set.len() - 1) / 2;
    hits as f64 / pairs as f64
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// One line of a prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub patient_id: String,
    pub probs: Vec<f64>,
    pub recommended: Vec<usize>,
}

impl Prediction {
    pub fn recommended_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.probs.len()];
        for &i in &self.recommended {
            mask[i] = true;
        }
        mask
    }
}

/// JSON Schema for serialized [`EvalReport`]s.
pub const REPORT_SCHEMA: &str = include_str!("../schemas/eval_report.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub jaccard: f64,
    pub prauc: f64,
    pub f1: f64,
    pub ddi: f64,
    pub med_count: f64,
    /// Mean Jaccard per group, keyed `G1`..`Gn`.
    pub per_group_jaccard: BTreeMap<String, f64>,
    pub sigma: f64,
    pub n_records: usize,
}

impl EvalReport {
    pub fn group_values(&self) -> Vec<f64> {
        let mut keys: Vec<&String> = self.per_group_jaccard.keys().collect();
        keys.sort_by_key(|k| k[1..].parse::<usize>().unwrap_or(usize::MAX));
        keys.into_iter().map(|k| self.per_group_jaccard[k]).collect()
    }

    /// Single-row text table with overall and group-wise columns.
    pub fn to_table(&self, label: &str) -> String {
        render_table(&[(label.to_string(), Some(self.clone()))])
    }
}

/// Averages per-record metrics over `records`, plus mean Jaccard per
/// popularity group and the population std across groups. PRAUC is
/// averaged over records with at least one prescribed medication.
pub fn evaluate(
    predictions: &[Prediction],
    records: &[&PatientRecord],
    graph: &DdiGraph,
    groups: &PopularityGroups,
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::validation("no records to evaluate"));
    }
    let by_id: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.patient_id.as_str(), p)).collect();
    let mut sums = [0.0; 5];
    let mut n_ranked = 0usize;
    let mut group_sums = vec![(0.0, 0usize); groups.n_groups];
    for r in records {
        let pred = by_id
            .get(r.patient_id.as_str())
            .ok_or_else(|| Error::validation(format!("no prediction for patient {}", r.patient_id)))?;
        let mask = pred.recommended_mask();
        let j = jaccard(&r.medications, &mask)?;
        sums[0] += j;
        if r.medications.iter().any(|&m| m) {
            sums[1] += prauc(&pred.probs, &r.medications)?;
            n_ranked += 1;
        }
        sums[2] += precision_recall_f1(&r.medications, &mask)?.f1;
        sums[3] += ddi_rate(&mask, graph);
        sums[4] += pred.recommended.len() as f64;
        let g = groups
            .group_of(&r.patient_id)
            .ok_or_else(|| Error::validation(format!("patient {} has no group", r.patient_id)))?;
        group_sums[g - 1].0 += j;
        group_sums[g - 1].1 += 1;
    }
    let n = records.len() as f64;
    let per_group: Vec<f64> = group_sums
        .iter()
        .map(|&(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    let populated: Vec<f64> = group_sums
        .iter()
        .zip(&per_group)
        .filter(|((_, c), _)| *c > 0)
        .map(|(_, &v)| v)
        .collect();
    Ok(EvalReport {
        jaccard: sums[0] / n,
        prauc: if n_ranked == 0 { 0.0 } else { sums[1] / n_ranked as f64 },
        f1: sums[2] / n,
        ddi: sums[3] / n,
        med_count: sums[4] / n,
        per_group_jaccard: group_sums
            .iter()
            .zip(&per_group)
            .enumerate()
            .filter(|(_, ((_, c), _))| *c > 0)
            .map(|(g, (_, &v))| (format!("G{}", g + 1), v))
            .collect(),
        sigma: population_std(&populated),
        n_records: records.len(),
    })
}

/// Text table: one row per method with overall metrics, G1..Gn and a σ
/// recomputed from the row's own group columns. Missing runs render as
/// absent.
pub fn render_table(rows: &[(String, Option<EvalReport>)]) -> String {
    let n_groups = rows
        .iter()
        .filter_map(|(_, r)| r.as_ref().map(|r| r.per_group_jaccard.len()))
        .max()
        .unwrap_or(0);
    let mut out = String::new();
    let _ = write!(out, "{:<22}{:>9}{:>9}{:>9}{:>9}{:>8}", "Method", "Jaccard", "PRAUC", "F1", "DDI", "#MED");
    for g in 1..=n_groups {
        let _ = write!(out, "{:>9}", format!("G{g}"));
    }
    let _ = writeln!(out, "{:>9}", "sigma");
    for (name, report) in rows {
        let _ = write!(out, "{name:<22}");
        match report {
            Some(r) => {
                let _ = write!(
                    out,
                    "{:>9.4}{:>9.4}{:>9.4}{:>9.4}{:>8.2}",
                    r.jaccard, r.prauc, r.f1, r.ddi, r.med_count
                );
                let values = r.group_values();
                for g in 0..n_groups {
                    match values.get(g) {
                        Some(v) => {
                            let _ = write!(out, "{v:>9.4}");
                        }
                        None => {
                            let _ = write!(out, "{:>9}", "-");
                        }
                    }
                }
                let _ = writeln!(out, "{:>9.4}", population_std(&values));
            }
            None => {
                let _ = writeln!(out, "{:>9}", "(absent)");
            }
        }
    }
    out
}
