//! Seeded synthetic EHR cohorts with a long-tailed disease distribution, a
//! hidden code-to-medication ground truth and a random DDI graph.
//!
//! Disease ids coincide with popularity rank (id 0 is the most common). Each
//! disease prescribes `meds_per_disease` medications drawn around the
//! medication index aligned with its rank, so rare diseases tend to map to
//! rarely prescribed drugs. Every disease links to two procedures chosen
//! uniformly, each kept with a fixed probability, and every procedure
//! prescribes medications around its own aligned index.

use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::seq::index::sample_weighted;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::data::{CodeVocabulary, DdiGraph, EhrDataset, PatientRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub n_diseases: usize,
    pub n_procedures: usize,
    pub n_medications: usize,
    pub zipf_exponent: f64,
    pub mean_diseases_per_patient: f64,
    pub mean_procedures_per_patient: f64,
    pub meds_per_disease: usize,
    pub noise_flip_prob: f64,
    pub ddi_density: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 2000,
            n_diseases: 200,
            n_procedures: 60,
            n_medications: 40,
            zipf_exponent: 1.5,
            mean_diseases_per_patient: 6.0,
            mean_procedures_per_patient: 6.0,
            meds_per_disease: 3,
            noise_flip_prob: 0.05,
            ddi_density: 0.08,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::validation(m));
        if self.n_patients == 0 || self.n_diseases == 0 || self.n_procedures == 0 || self.n_medications == 0 {
            return fail("all vocabulary sizes and n_patients must be positive".into());
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return fail(format!("zipf_exponent must be > 0, got {}", self.zipf_exponent));
        }
        if !(self.mean_diseases_per_patient >= 1.0 && self.mean_diseases_per_patient <= self.n_diseases as f64) {
            return fail(format!(
                "mean_diseases_per_patient must lie in [1, {}], got {}",
                self.n_diseases, self.mean_diseases_per_patient
            ));
        }
        if !(self.mean_procedures_per_patient >= 0.0 && self.mean_procedures_per_patient <= self.n_procedures as f64) {
            return fail(format!(
                "mean_procedures_per_patient must lie in [0, {}], got {}",
                self.n_procedures, self.mean_procedures_per_patient
            ));
        }
        if self.meds_per_disease == 0 || self.meds_per_disease > self.n_medications {
            return fail(format!(
                "meds_per_disease must lie in [1, {}], got {}",
                self.n_medications, self.meds_per_disease
            ));
        }
        for (name, p) in [("noise_flip_prob", self.noise_flip_prob), ("ddi_density", self.ddi_density)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

/// Hidden prescribing rules used to generate the medication vectors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthMap {
    pub disease_medications: Vec<Vec<usize>>,
    pub procedure_medications: Vec<Vec<usize>>,
    pub disease_procedures: Vec<Vec<usize>>,
}

impl GroundTruthMap {
    /// Noise-free medication vector for a record: the union of the images of
    /// its diseases and procedures.
    pub fn prescribe(&self, record: &PatientRecord, n_medications: usize) -> Vec<bool> {
        let mut meds = vec![false; n_medications];
        let images = record
            .diseases
            .iter()
            .flat_map(|&d| &self.disease_medications[d])
            .chain(record.procedures.iter().flat_map(|&p| &self.procedure_medications[p]));
        for &m in images {
            meds[m] = true;
        }
        meds
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(self)?).map_err(|e| Error::io(path, e))
    }
}

/// A generated dataset with its interaction graph and ground truth.
#[derive(Clone, Debug)]
pub struct Cohort {
    pub dataset: EhrDataset,
    pub ddi: DdiGraph,
    pub truth: GroundTruthMap,
}

/// File names used when a cohort is written to a directory.
pub const RECORDS_FILE: &str = "records.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const DDI_FILE: &str = "ddi.tsv";
pub const TRUTH_FILE: &str = "ground_truth.json";

impl Cohort {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.dataset.vocab.save(dir.join(VOCAB_FILE))?;
        self.dataset.save_records(dir.join(RECORDS_FILE))?;
        self.ddi.save(dir.join(DDI_FILE), &self.dataset.vocab)?;
        self.truth.save(dir.join(TRUTH_FILE))
    }
}

// Independent substreams of the root seed.
const STREAM_MAP: u64 = 1;
const STREAM_PATIENTS: u64 = 2;
const STREAM_DDI: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws `k` distinct indices in `0..n` with weight decaying in the distance
/// from `center`.
fn sample_near(rng: &mut ChaCha8Rng, n: usize, center: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    let weight = |i: usize| {
        let d = i.abs_diff(center) as f64;
        1.0 / ((1.0 + d) * (1.0 + d))
    };
    let mut picked: Vec<usize> = sample_weighted(rng, n, weight, k)
        .expect("weights are positive and finite")
        .into_iter()
        .collect();
    picked.sort_unstable();
    picked
}

/// Procedures linked to each disease.
pub const PROCEDURES_PER_DISEASE: usize = 1;

fn aligned(rank: usize, from: usize, to: usize) -> usize {
    (rank * to / from).min(to - 1)
}

fn build_truth(config: &SynthConfig, rng: &mut ChaCha8Rng) -> GroundTruthMap {
    let (nd, np, nm) = (config.n_diseases, config.n_procedures, config.n_medications);
    let disease_medications = (0..nd)
        .map(|d| sample_near(rng, nm, aligned(d, nd, nm), config.meds_per_disease))
        .collect();
    // Uniform links keep a donor's procedures distinguishable from a
    // patient's own ones even among popular diseases.
    let disease_procedures = (0..nd)
        .map(|_| {
            let mut linked = rand::seq::index::sample(rng, np, PROCEDURES_PER_DISEASE.min(np)).into_vec();
            linked.sort_unstable();
            linked
        })
        .collect();
    let per_procedure = (config.meds_per_disease / 3).max(1);
    let procedure_medications = (0..np)
        .map(|p| sample_near(rng, nm, aligned(p, np, nm), per_procedure))
        .collect();
    GroundTruthMap {
        disease_medications,
        procedure_medications,
        disease_procedures,
    }
}

/// Generates a cohort; identical configs produce identical cohorts.
pub fn generate_cohort(config: &SynthConfig) -> Result<Cohort> {
    config.validate()?;
    let (nd, np, nm) = (config.n_diseases, config.n_procedures, config.n_medications);

    let width = |n: usize| n.to_string().len();
    let vocab = CodeVocabulary::new(
        (0..nd).map(|i| format!("D{i:0w$}", w = width(nd))).collect(),
        (0..np).map(|i| format!("P{i:0w$}", w = width(np))).collect(),
        (0..nm).map(|i| format!("M{i:0w$}", w = width(nm))).collect(),
    )?;

    let truth = build_truth(config, &mut stream(config.seed, STREAM_MAP));

    let mut rng = stream(config.seed, STREAM_PATIENTS);
    let zipf = |k: usize| 1.0 / ((k + 1) as f64).powf(config.zipf_exponent);
    let extra = config.mean_diseases_per_patient - 1.0;
    let poisson = (extra > 0.0).then(|| Poisson::new(extra).expect("positive rate"));
    // Each disease offers its linked procedures; keep each with this probability.
    let keep_procedure = (config.mean_procedures_per_patient
        / (PROCEDURES_PER_DISEASE as f64 * config.mean_diseases_per_patient))
        .min(1.0);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");

    let pid_width = width(config.n_patients);
    let mut records = Vec::with_capacity(config.n_patients);
    for i in 0..config.n_patients {
        let n_dis = match &poisson {
            Some(p) => 1 + p.sample(&mut rng) as usize,
            None => 1,
        }
        .min(nd);
        let diseases: Vec<usize> = sample_weighted(&mut rng, nd, zipf, n_dis)
            .expect("weights are positive and finite")
            .into_iter()
            .collect();

        let mut procedures = Vec::new();
        for &d in &diseases {
            for &p in &truth.disease_procedures[d] {
                if unit.sample(&mut rng) < keep_procedure && !procedures.contains(&p) {
                    procedures.push(p);
                }
            }
        }

        let mut record = PatientRecord {
            patient_id: format!("S{i:0pid_width$}"),
            diseases,
            procedures,
            medications: vec![],
        };
        let clean = truth.prescribe(&record, nm);
        let mut meds: Vec<bool> = clean
            .iter()
            .map(|&m| m ^ (unit.sample(&mut rng) < config.noise_flip_prob))
            .collect();
        if !meds.contains(&true) {
            meds = clean;
        }
        record.medications = meds;

        let (diseases, procedures) = prioritize(&mut rng, &record, &truth);
        record.diseases = diseases;
        record.procedures = procedures;
        records.push(record);
    }

    let mut ddi_rng = stream(config.seed, STREAM_DDI);
    let mut ddi = DdiGraph::empty(nm);
    for u in 0..nm {
        for v in (u + 1)..nm {
            if unit.sample(&mut ddi_rng) < config.ddi_density {
                ddi.add_edge(u, v);
            }
        }
    }

    let dataset = EhrDataset::new(vocab, records)?;
    Ok(Cohort { dataset, ddi, truth })
}

/// Orders each span by descending relevance: first the number of prescribed
/// medications only this code explains, then the number of its mapped
/// medications actually prescribed. Remaining ties are shuffled.
fn prioritize(rng: &mut ChaCha8Rng, record: &PatientRecord, truth: &GroundTruthMap) -> (Vec<usize>, Vec<usize>) {
    let mut coverage = vec![0usize; record.medications.len()];
    let images = record
        .diseases
        .iter()
        .map(|&d| &truth.disease_medications[d])
        .chain(record.procedures.iter().map(|&p| &truth.procedure_medications[p]));
    for image in images {
        for &m in image {
            coverage[m] += 1;
        }
    }
    let mut order = |codes: &[usize], images: &[Vec<usize>]| {
        let mut codes = codes.to_vec();
        codes.shuffle(rng);
        let mut keyed: Vec<((usize, usize), usize)> = codes
            .into_iter()
            .map(|c| {
                let present = images[c].iter().filter(|&&m| record.medications[m]);
                let unique = present.clone().filter(|&&m| coverage[m] == 1).count();
                ((unique, present.count()), c)
            })
            .collect();
        // stable: shuffled order survives within ties
        keyed.sort_by(|a, b| b.0.cmp(&a.0));
        keyed.into_iter().map(|(_, c)| c).collect::<Vec<_>>()
    };
    let diseases = order(&record.diseases, &truth.disease_medications);
    let procedures = order(&record.procedures, &truth.procedure_medications);
    (diseases, procedures)
}

/// Table-1 style summary of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortStatistics {
    pub n_records: usize,
    pub n_diseases: usize,
    pub n_procedures: usize,
    pub n_medications: usize,
    pub avg_diseases: f64,
    pub max_diseases: usize,
    pub avg_procedures: f64,
    pub max_procedures: usize,
    pub avg_medications: f64,
    pub max_medications: usize,
}

pub fn cohort_statistics(dataset: &EhrDataset) -> Result<CohortStatistics> {
    if dataset.is_empty() {
        return Err(Error::validation("cannot summarize an empty dataset"));
    }
    let n = dataset.len() as f64;
    let stat = |f: &dyn Fn(&PatientRecord) -> usize| {
        let counts: Vec<usize> = dataset.records.iter().map(f).collect();
        (
            counts.iter().sum::<usize>() as f64 / n,
            counts.iter().copied().max().unwrap_or(0),
        )
    };
    let (avg_diseases, max_diseases) = stat(&|r| r.diseases.len());
    let (avg_procedures, max_procedures) = stat(&|r| r.procedures.len());
    let (avg_medications, max_medications) = stat(&|r| r.n_medications());
    Ok(CohortStatistics {
        n_records: dataset.len(),
        n_diseases: dataset.vocab.n_diseases(),
        n_procedures: dataset.vocab.n_procedures(),
        n_medications: dataset.vocab.n_medications(),
        avg_diseases,
        max_diseases,
        avg_procedures,
        max_procedures,
        avg_medications,
        max_medications,
    })
}
