//! EHR data model: vocabularies, patient records, the DDI graph, file
//! ingestion, 4:1:1 splitting and popularity-based patient grouping.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Code category within the vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeKind {
    Disease,
    Procedure,
    Medication,
}

impl fmt::Display for CodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodeKind::Disease => "disease",
            CodeKind::Procedure => "procedure",
            CodeKind::Medication => "medication",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
struct VocabFile {
    diseases: Vec<String>,
    procedures: Vec<String>,
    medications: Vec<String>,
}

/// Dense string <-> id maps for diseases, procedures and medications.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct CodeVocabulary {
    codes: VocabFile,
    disease_ids: HashMap<String, usize>,
    procedure_ids: HashMap<String, usize>,
    medication_ids: HashMap<String, usize>,
}

fn index_codes(kind: CodeKind, codes: &[String]) -> Result<HashMap<String, usize>> {
    let mut ids = HashMap::with_capacity(codes.len());
    for (i, code) in codes.iter().enumerate() {
        if ids.insert(code.clone(), i).is_some() {
            return Err(Error::validation(format!("duplicate {kind} code {code:?} in vocabulary")));
        }
    }
    Ok(ids)
}

impl TryFrom<VocabFile> for CodeVocabulary {
    type Error = Error;

    fn try_from(codes: VocabFile) -> Result<Self> {
        Ok(CodeVocabulary {
            disease_ids: index_codes(CodeKind::Disease, &codes.diseases)?,
            procedure_ids: index_codes(CodeKind::Procedure, &codes.procedures)?,
            medication_ids: index_codes(CodeKind::Medication, &codes.medications)?,
            codes,
        })
    }
}

impl From<CodeVocabulary> for VocabFile {
    fn from(v: CodeVocabulary) -> Self {
        v.codes
    }
}

impl CodeVocabulary {
    pub fn new(diseases: Vec<String>, procedures: Vec<String>, medications: Vec<String>) -> Result<Self> {
        VocabFile {
            diseases,
            procedures,
            medications,
        }
        .try_into()
    }

    pub fn n_diseases(&self) -> usize {
        self.codes.diseases.len()
    }

    pub fn n_procedures(&self) -> usize {
        self.codes.procedures.len()
    }

    pub fn n_medications(&self) -> usize {
        self.codes.medications.len()
    }

    /// Size of the joint disease + procedure code space.
    pub fn n_clinical_codes(&self) -> usize {
        self.n_diseases() + self.n_procedures()
    }

    pub fn codes(&self, kind: CodeKind) -> &[String] {
        match kind {
            CodeKind::Disease => &self.codes.diseases,
            CodeKind::Procedure => &self.codes.procedures,
            CodeKind::Medication => &self.codes.medications,
        }
    }

    pub fn id(&self, kind: CodeKind, code: &str) -> Option<usize> {
        let map = match kind {
            CodeKind::Disease => &self.disease_ids,
            CodeKind::Procedure => &self.procedure_ids,
            CodeKind::Medication => &self.medication_ids,
        };
        map.get(code).copied()
    }

    pub fn code(&self, kind: CodeKind, id: usize) -> Option<&str> {
        self.codes(kind).get(id).map(String::as_str)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &self.codes)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// One visit: priority-ordered disease and procedure ids plus the
/// prescribed medication set as a multi-hot vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatientRecord {
    pub patient_id: String,
    pub diseases: Vec<usize>,
    pub procedures: Vec<usize>,
    pub medications: Vec<bool>,
}

impl PatientRecord {
    /// Ids of prescribed medications in ascending order.
    pub fn medication_ids(&self) -> Vec<usize> {
        self.medications
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i))
            .collect()
    }

    pub fn n_medications(&self) -> usize {
        self.medications.iter().filter(|&&m| m).count()
    }

    /// Checks the record against the vocabulary sizes and sequence invariants.
    pub fn validate(&self, vocab: &CodeVocabulary) -> Result<()> {
        if self.diseases.is_empty() {
            return Err(Error::validation(format!(
                "patient {}: disease sequence is empty",
                self.patient_id
            )));
        }
        check_ids(&self.patient_id, CodeKind::Disease, &self.diseases, vocab.n_diseases())?;
        check_ids(&self.patient_id, CodeKind::Procedure, &self.procedures, vocab.n_procedures())?;
        if self.medications.len() != vocab.n_medications() {
            return Err(Error::validation(format!(
                "patient {}: medication vector has length {}, vocabulary has {}",
                self.patient_id,
                self.medications.len(),
                vocab.n_medications()
            )));
        }
        Ok(())
    }
}

fn check_ids(patient: &str, kind: CodeKind, ids: &[usize], size: usize) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for &id in ids {
        if id >= size {
            return Err(Error::validation(format!("patient {patient}: {kind} id {id} out of range {size}")));
        }
        if !seen.insert(id) {
            return Err(Error::validation(format!("patient {patient}: duplicate {kind} id {id}")));
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    patient_id: String,
    diseases: Vec<String>,
    procedures: Vec<String>,
    medications: Vec<String>,
}

/// Symmetric binary drug-drug interaction adjacency with zero diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DdiGraph {
    n: usize,
    adjacency: Vec<bool>,
}

impl DdiGraph {
    pub fn empty(n: usize) -> Self {
        DdiGraph {
            n,
            adjacency: vec![false; n * n],
        }
    }

    /// Builds a graph from unordered pairs; self-pairs are ignored.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut g = DdiGraph::empty(n);
        for (u, v) in edges {
            g.add_edge(u, v);
        }
        g
    }

    pub fn n_medications(&self) -> usize {
        self.n
    }

    /// Adds the interaction in both directions. Returns false (and changes
    /// nothing) for self-pairs.
    pub fn add_edge(&mut self, u: usize, v: usize) -> bool {
        assert!(u < self.n && v < self.n, "edge ({u}, {v}) outside graph of size {}", self.n);
        if u == v {
            return false;
        }
        self.adjacency[u * self.n + v] = true;
        self.adjacency[v * self.n + u] = true;
        true
    }

    #[inline]
    pub fn interacts(&self, u: usize, v: usize) -> bool {
        self.adjacency[u * self.n + v]
    }

    #[inline]
    pub fn weight(&self, u: usize, v: usize) -> f64 {
        if self.interacts(u, v) {
            1.0
        } else {
            0.0
        }
    }

    /// Unordered edges with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |u| ((u + 1)..self.n).filter(move |&v| self.interacts(u, v)).map(move |v| (u, v)))
    }

    pub fn n_edges(&self) -> usize {
        self.edges().count()
    }

    pub fn partners(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&v| self.interacts(u, v))
    }

    /// Writes one `CODE_A<TAB>CODE_B` line per unordered edge.
    pub fn save(&self, path: impl AsRef<Path>, vocab: &CodeVocabulary) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let meds = vocab.codes(CodeKind::Medication);
        for (u, v) in self.edges() {
            writeln!(w, "{}\t{}", meds[u], meds[v]).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Result of reading a DDI edge list.
#[derive(Clone, Debug)]
pub struct DdiLoad {
    pub graph: DdiGraph,
    /// Lines skipped because they named unknown medications, paired a drug
    /// with itself, or did not contain two fields.
    pub skipped: usize,
}

/// Reads a tab-separated medication pair list into a symmetric graph.
pub fn load_ddi_graph(path: impl AsRef<Path>, vocab: &CodeVocabulary) -> Result<DdiLoad> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut graph = DdiGraph::empty(vocab.n_medications());
    let mut skipped = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(a), Some(b)) = (fields.next(), fields.next()) else {
            log::warn!("{}:{}: expected two tab-separated codes", path.display(), i + 1);
            skipped += 1;
            continue;
        };
        let ids = (
            vocab.id(CodeKind::Medication, a.trim()),
            vocab.id(CodeKind::Medication, b.trim()),
        );
        match ids {
            (Some(u), Some(v)) => {
                if !graph.add_edge(u, v) {
                    log::warn!("{}:{}: self-interaction {a} ignored", path.display(), i + 1);
                    skipped += 1;
                }
            }
            _ => {
                log::warn!("{}:{}: unknown medication in pair ({a}, {b})", path.display(), i + 1);
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} DDI lines", path.display());
    }
    Ok(DdiLoad { graph, skipped })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::validation(format!("unknown split {other:?}"))),
        }
    }
}

/// Records plus their vocabulary and split tags. Freshly loaded datasets
/// tag every record as `Train` until [`split_dataset`] is applied.
#[derive(Clone, Debug, PartialEq)]
pub struct EhrDataset {
    pub vocab: CodeVocabulary,
    pub records: Vec<PatientRecord>,
    pub splits: Vec<Split>,
}

impl EhrDataset {
    pub fn new(vocab: CodeVocabulary, records: Vec<PatientRecord>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate(&vocab)?;
            if !ids.insert(r.patient_id.as_str()) {
                return Err(Error::validation(format!("duplicate patient_id {:?}", r.patient_id)));
            }
        }
        let splits = vec![Split::Train; records.len()];
        Ok(EhrDataset { vocab, records, splits })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split_records(&self, split: Split) -> Vec<&PatientRecord> {
        self.records
            .iter()
            .zip(&self.splits)
            .filter(|(_, &s)| s == split)
            .map(|(r, _)| r)
            .collect()
    }

    pub fn split_sizes(&self) -> (usize, usize, usize) {
        let count = |s| self.splits.iter().filter(|&&t| t == s).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    /// Writes the JSON-lines record file.
    pub fn save_records(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let names = |kind, ids: &[usize]| -> Vec<String> {
            ids.iter().map(|&i| self.vocab.codes(kind)[i].clone()).collect()
        };
        for r in &self.records {
            let line = RecordLine {
                patient_id: r.patient_id.clone(),
                diseases: names(CodeKind::Disease, &r.diseases),
                procedures: names(CodeKind::Procedure, &r.procedures),
                medications: names(CodeKind::Medication, &r.medication_ids()),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads a JSON-lines record file against a vocabulary file.
pub fn load_dataset(path: impl AsRef<Path>, vocab_path: impl AsRef<Path>) -> Result<EhrDataset> {
    let vocab = CodeVocabulary::load(vocab_path)?;
    load_records(path, vocab)
}

/// Loads a JSON-lines record file against an already loaded vocabulary.
pub fn load_records(path: impl AsRef<Path>, vocab: CodeVocabulary) -> Result<EhrDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RecordLine = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let lookup = |kind: CodeKind, codes: &[String]| -> Result<Vec<usize>> {
            codes
                .iter()
                .map(|c| {
                    vocab
                        .id(kind, c)
                        .ok_or_else(|| parse_err(lineno, format!("unknown {kind} code {c:?}")))
                })
                .collect()
        };
        let diseases = lookup(CodeKind::Disease, &raw.diseases)?;
        if diseases.is_empty() {
            return Err(parse_err(lineno, format!("patient {}: empty disease sequence", raw.patient_id)));
        }
        let procedures = lookup(CodeKind::Procedure, &raw.procedures)?;
        let mut medications = vec![false; vocab.n_medications()];
        for m in lookup(CodeKind::Medication, &raw.medications)? {
            medications[m] = true;
        }
        let record = PatientRecord {
            patient_id: raw.patient_id,
            diseases,
            procedures,
            medications,
        };
        record.validate(&vocab).map_err(|e| parse_err(lineno, e.to_string()))?;
        records.push(record);
    }
    EhrDataset::new(vocab, records)
}

/// Seeded 4:1:1 train/val/test split. The first `floor(4N/6)` records of a
/// seeded permutation go to train, the next `floor(N/6)` to validation and
/// the remainder to test.
pub fn split_dataset(mut dataset: EhrDataset, seed: u64) -> Result<EhrDataset> {
    let n = dataset.len();
    if n < 6 {
        return Err(Error::validation(format!("need at least 6 records to split, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = 4 * n / 6;
    let n_val = n / 6;
    for (rank, &idx) in order.iter().enumerate() {
        dataset.splits[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    Ok(dataset)
}

/// Per-disease record counts (dense, indexed by disease id).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeFrequencies(pub Vec<usize>);

impl CodeFrequencies {
    pub fn get(&self, id: usize) -> usize {
        self.0[id]
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    /// Frequency of the least common disease in a record.
    pub fn rarest(&self, record: &PatientRecord) -> usize {
        record.diseases.iter().map(|&d| self.0[d]).min().unwrap_or(0)
    }
}

/// Number of records in `split` containing each disease.
pub fn code_frequencies(dataset: &EhrDataset, split: Split) -> CodeFrequencies {
    let mut counts = vec![0; dataset.vocab.n_diseases()];
    for r in dataset.split_records(split) {
        for &d in &r.diseases {
            counts[d] += 1;
        }
    }
    CodeFrequencies(counts)
}

/// Number of records in `split` prescribing each medication.
pub fn medication_frequencies(dataset: &EhrDataset, split: Split) -> Vec<usize> {
    let mut counts = vec![0; dataset.vocab.n_medications()];
    for r in dataset.split_records(split) {
        for m in r.medication_ids() {
            counts[m] += 1;
        }
    }
    counts
}

/// Equal-size popularity groups keyed by patient id; group 1 holds the
/// patients whose rarest disease is most common.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PopularityGroups {
    pub n_groups: usize,
    assignment: HashMap<String, usize>,
}

impl PopularityGroups {
    /// 1-based group index of a patient.
    pub fn group_of(&self, patient_id: &str) -> Option<usize> {
        self.assignment.get(patient_id).copied()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups];
        for &g in self.assignment.values() {
            sizes[g - 1] += 1;
        }
        sizes
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.assignment.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Sorts patients by the frequency of their rarest disease (descending,
/// ties by patient id) and cuts the ranking into `n_groups` groups whose
/// sizes differ by at most one; leading groups take the remainder.
pub fn assign_popularity_groups<'a>(
    records: impl IntoIterator<Item = &'a PatientRecord>,
    freqs: &CodeFrequencies,
    n_groups: usize,
) -> Result<PopularityGroups> {
    let mut keyed: Vec<(usize, &str)> = records
        .into_iter()
        .map(|r| (freqs.rarest(r), r.patient_id.as_str()))
        .collect();
    if n_groups == 0 || n_groups > keyed.len() {
        return Err(Error::validation(format!(
            "cannot form {n_groups} groups from {} patients",
            keyed.len()
        )));
    }
    keyed.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let base = keyed.len() / n_groups;
    let extra = keyed.len() % n_groups;
    let mut assignment = HashMap::with_capacity(keyed.len());
    let mut it = keyed.into_iter();
    for g in 0..n_groups {
        let size = base + usize::from(g < extra);
        for (_, id) in it.by_ref().take(size) {
            assignment.insert(id.to_string(), g + 1);
        }
    }
    Ok(PopularityGroups { n_groups, assignment })
}

/// Statistics for one popularity interval of the profile analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileGroup {
    /// Inclusive lower and exclusive upper bound on rarest-disease frequency
    /// (the last interval also includes its upper bound).
    pub interval: (f64, f64),
    pub n_patients: usize,
    pub mean_diseases: Option<f64>,
    pub mean_procedures: Option<f64>,
    pub mean_medications: Option<f64>,
    pub mean_medication_popularity: Option<f64>,
}

/// Buckets every record by rarest-disease frequency into `n_groups`
/// equal-width intervals over `[0, max_freq]` (ascending popularity) and
/// reports clinical-complexity statistics per bucket. Medication popularity
/// is the training-split prescription count, averaged over each patient's
/// medications and then over the bucket.
pub fn profile_groups(dataset: &EhrDataset, freqs: &CodeFrequencies, n_groups: usize) -> Vec<ProfileGroup> {
    let n_groups = n_groups.max(1);
    let max = freqs.max() as f64;
    let width = max / n_groups as f64;
    let med_freq = medication_frequencies(dataset, Split::Train);

    #[derive(Default, Clone)]
    struct Acc {
        n: usize,
        diseases: f64,
        procedures: f64,
        meds: f64,
        pop: f64,
        pop_n: usize,
    }
    let mut acc = vec![Acc::default(); n_groups];
    for r in &dataset.records {
        let key = freqs.rarest(r) as f64;
        let g = if width > 0.0 {
            ((key / width).floor() as usize).min(n_groups - 1)
        } else {
            0
        };
        let a = &mut acc[g];
        a.n += 1;
        a.diseases += r.diseases.len() as f64;
        a.procedures += r.procedures.len() as f64;
        let meds = r.medication_ids();
        a.meds += meds.len() as f64;
        if !meds.is_empty() {
            a.pop += meds.iter().map(|&m| med_freq[m] as f64).sum::<f64>() / meds.len() as f64;
            a.pop_n += 1;
        }
    }
    acc.into_iter()
        .enumerate()
        .map(|(g, a)| {
            let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
            ProfileGroup {
                interval: (g as f64 * width, (g + 1) as f64 * width),
                n_patients: a.n,
                mean_diseases: mean(a.diseases, a.n),
                mean_procedures: mean(a.procedures, a.n),
                mean_medications: mean(a.meds, a.n),
                mean_medication_popularity: mean(a.pop, a.pop_n),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(nd: usize, np: usize, nm: usize) -> CodeVocabulary {
        CodeVocabulary::new(
            (0..nd).map(|i| format!("D{i}")).collect(),
            (0..np).map(|i| format!("P{i}")).collect(),
            (0..nm).map(|i| format!("M{i}")).collect(),
        )
        .unwrap()
    }

    fn record(id: &str, diseases: &[usize], nm: usize) -> PatientRecord {
        let mut medications = vec![false; nm];
        medications[0] = true;
        PatientRecord {
            patient_id: id.into(),
            diseases: diseases.to_vec(),
            procedures: vec![],
            medications,
        }
    }

    fn dataset(n: usize) -> EhrDataset {
        let v = vocab(3, 2, 2);
        let records = (0..n).map(|i| record(&format!("p{i:04}"), &[i % 3], 2)).collect();
        EhrDataset::new(v, records).unwrap()
    }

    #[test]
    fn vocabulary_rejects_duplicates() {
        let err = CodeVocabulary::new(vec!["A".into(), "A".into()], vec![], vec![]).unwrap_err();
        assert!(err.to_string().contains("duplicate disease code"));
    }

    #[test]
    fn loads_three_lines() {
        let dir = tempfile::tempdir().unwrap();
        let v = vocab(3, 2, 2);
        let vp = dir.path().join("vocab.json");
        v.save(&vp).unwrap();
        let rp = dir.path().join("records.jsonl");
        std::fs::write(
            &rp,
            r#"{"patient_id":"a","diseases":["D0","D2"],"procedures":["P1"],"medications":["M0"]}
{"patient_id":"b","diseases":["D1"],"procedures":[],"medications":["M1"]}
{"patient_id":"c","diseases":["D2"],"procedures":["P0","P1"],"medications":["M0","M1"]}
"#,
        )
        .unwrap();
        let ds = load_dataset(&rp, &vp).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.records[0].diseases, vec![0, 2]);
        assert_eq!(ds.records[2].medications, vec![true, true]);
    }

    #[test]
    fn unknown_code_names_code_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let vp = dir.path().join("vocab.json");
        vocab(3, 2, 2).save(&vp).unwrap();
        let rp = dir.path().join("records.jsonl");
        std::fs::write(
            &rp,
            "{\"patient_id\":\"a\",\"diseases\":[\"D0\"],\"procedures\":[],\"medications\":[\"M0\"]}\n\
             {\"patient_id\":\"b\",\"diseases\":[\"D9\"],\"procedures\":[],\"medications\":[\"M0\"]}\n",
        )
        .unwrap();
        let msg = load_dataset(&rp, &vp).unwrap_err().to_string();
        assert!(msg.contains(":2:"), "{msg}");
        assert!(msg.contains("D9"), "{msg}");
    }

    #[test]
    fn empty_disease_sequence_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let vp = dir.path().join("vocab.json");
        vocab(3, 2, 2).save(&vp).unwrap();
        let rp = dir.path().join("records.jsonl");
        std::fs::write(&rp, "{\"patient_id\":\"a\",\"diseases\":[],\"procedures\":[],\"medications\":[\"M0\"]}\n").unwrap();
        assert!(load_dataset(&rp, &vp).unwrap_err().to_string().contains("empty disease"));
    }

    #[test]
    fn ddi_loading() {
        let dir = tempfile::tempdir().unwrap();
        let v = vocab(1, 1, 3);
        let p = dir.path().join("ddi.tsv");

        std::fs::write(&p, "").unwrap();
        let load = load_ddi_graph(&p, &v).unwrap();
        assert_eq!(load.graph, DdiGraph::empty(3));

        std::fs::write(&p, "M0\tM1\n").unwrap();
        let g = load_ddi_graph(&p, &v).unwrap().graph;
        for u in 0..3 {
            for w in 0..3 {
                assert_eq!(g.interacts(u, w), (u, w) == (0, 1) || (u, w) == (1, 0));
            }
        }

        std::fs::write(&p, "M0\tM0\nM1\tMX\n").unwrap();
        let load = load_ddi_graph(&p, &v).unwrap();
        assert!(!load.graph.interacts(0, 0));
        assert_eq!(load.skipped, 2);

        assert!(load_ddi_graph(dir.path().join("missing.tsv"), &v).is_err());
    }

    #[test]
    fn split_sizes_follow_floor_arithmetic() {
        assert_eq!(split_dataset(dataset(600), 1).unwrap().split_sizes(), (400, 100, 100));
        assert_eq!(split_dataset(dataset(601), 1).unwrap().split_sizes(), (400, 100, 101));
        assert!(split_dataset(dataset(5), 1).is_err());
        let a = split_dataset(dataset(50), 9).unwrap();
        let b = split_dataset(dataset(50), 9).unwrap();
        assert_eq!(a.splits, b.splits);
    }

    #[test]
    fn frequencies_count_records() {
        let v = vocab(3, 1, 1);
        let records: Vec<_> = (0..10).map(|i| record(&format!("p{i}"), &[0, 1 + i % 2], 1)).collect();
        let ds = EhrDataset::new(v, records).unwrap();
        let f = code_frequencies(&ds, Split::Train);
        assert_eq!(f.0, vec![10, 5, 5]);
        assert_eq!(code_frequencies(&ds, Split::Test).0, vec![0, 0, 0]);
    }

    #[test]
    fn group_sizes() {
        let v = vocab(10, 1, 1);
        let records: Vec<_> = (0..10).map(|i| record(&format!("p{i}"), &[i], 1)).collect();
        let ds = EhrDataset::new(v.clone(), records).unwrap();
        let f = CodeFrequencies((0..10).collect());
        let g = assign_popularity_groups(&ds.records, &f, 5).unwrap();
        assert_eq!(g.sizes(), vec![2; 5]);
        // disease 0 has frequency 0
        assert_eq!(g.group_of("p0"), Some(5));
        assert_eq!(g.group_of("p9"), Some(1));

        let g7 = assign_popularity_groups(&ds.records[..7], &f, 5).unwrap();
        assert_eq!(g7.sizes(), vec![2, 2, 1, 1, 1]);
        assert!(assign_popularity_groups(&ds.records[..4], &f, 5).is_err());
    }

    #[test]
    fn single_profile_group_matches_global_means() {
        let v = vocab(3, 2, 2);
        let mut records = vec![record("a", &[0, 1], 2), record("b", &[2], 2)];
        records[0].procedures = vec![1];
        let ds = EhrDataset::new(v, records).unwrap();
        let f = code_frequencies(&ds, Split::Train);
        let p = profile_groups(&ds, &f, 1);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].n_patients, 2);
        assert_eq!(p[0].mean_diseases, Some(1.5));
        assert_eq!(p[0].mean_procedures, Some(0.5));
        assert_eq!(p[0].mean_medications, Some(1.0));
        assert_eq!(p[0].mean_medication_popularity, Some(2.0));
    }

    #[test]
    fn identical_patients_profile() {
        let v = vocab(3, 2, 2);
        let records: Vec<_> = (0..6).map(|i| record(&format!("p{i}"), &[0, 1], 2)).collect();
        let ds = EhrDataset::new(v, records).unwrap();
        let f = code_frequencies(&ds, Split::Train);
        let p = profile_groups(&ds, &f, 13);
        let filled: Vec<_> = p.iter().filter(|g| g.n_patients > 0).collect();
        assert_eq!(filled.len(), 1);
        assert_eq!(filled[0].n_patients, 6);
    }
}
