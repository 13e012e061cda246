//! JSON parameter archives for encoders, fine-tuned models and the
//! logistic-regression baseline.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::LrModel;
use crate::data::CodeVocabulary;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::finetune::RecommendationModel;
use crate::nn::{NamedTensor, Parameterized};
use crate::train::{Head, HeadedEncoder};

pub const ENCODER_FORMAT: &str = "raremed-encoder/v1";
pub const MODEL_FORMAT: &str = "raremed-model/v1";
pub const LR_FORMAT: &str = "raremed-lr/v1";

/// SHA-256 of the vocabulary's canonical JSON.
pub fn vocab_fingerprint(vocab: &CodeVocabulary) -> String {
    let json = serde_json::to_vec(vocab).expect("vocabulary serializes");
    hex::encode(Sha256::digest(json))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<EncoderConfig>,
    pub n_diseases: usize,
    pub n_procedures: usize,
    pub n_medications: usize,
    pub vocab_sha256: String,
    pub tensors: Vec<NamedTensor>,
}

impl Archive {
    fn new(format: &str, config: Option<&EncoderConfig>, vocab: &CodeVocabulary, tensors: Vec<NamedTensor>) -> Self {
        Archive {
            format: format.into(),
            config: config.cloned(),
            n_diseases: vocab.n_diseases(),
            n_procedures: vocab.n_procedures(),
            n_medications: vocab.n_medications(),
            vocab_sha256: vocab_fingerprint(vocab),
            tensors,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    fn expect(&self, format: &str, vocab: &CodeVocabulary) -> Result<()> {
        if self.format != format {
            return Err(Error::validation(format!(
                "expected a {format} checkpoint, found {}",
                self.format
            )));
        }
        if self.vocab_sha256 != vocab_fingerprint(vocab) {
            return Err(Error::validation(format!(
                "checkpoint vocabulary ({}/{}/{} codes) does not match the dataset vocabulary ({}/{}/{})",
                self.n_diseases,
                self.n_procedures,
                self.n_medications,
                vocab.n_diseases(),
                vocab.n_procedures(),
                vocab.n_medications()
            )));
        }
        Ok(())
    }

    fn take(&self, prefix: &str) -> Vec<NamedTensor> {
        self.tensors
            .iter()
            .filter_map(|t| {
                t.name.strip_prefix(prefix).map(|rest| NamedTensor {
                    name: rest.to_string(),
                    ..t.clone()
                })
            })
            .collect()
    }
}

fn prefixed(prefix: &str, tensors: Vec<NamedTensor>) -> impl Iterator<Item = NamedTensor> + '_ {
    tensors.into_iter().map(move |t| NamedTensor {
        name: format!("{prefix}{}", t.name),
        ..t
    })
}

/// Saves encoder weights plus any pretraining heads (`smp_head.*`, ...).
pub fn save_encoder(
    path: impl AsRef<Path>,
    config: &EncoderConfig,
    vocab: &CodeVocabulary,
    encoder: &EncoderParams,
    heads: &[(&str, &Head)],
) -> Result<()> {
    let mut tensors: Vec<NamedTensor> = prefixed("encoder.", encoder.to_tensors()).collect();
    for (name, head) in heads {
        tensors.extend(prefixed(&format!("{name}."), head.to_tensors()));
    }
    Archive::new(ENCODER_FORMAT, Some(config), vocab, tensors).save(path)
}

/// Loads encoder weights, checking them against `config` and `vocab`.
pub fn load_encoder(path: impl AsRef<Path>, config: &EncoderConfig, vocab: &CodeVocabulary) -> Result<EncoderParams> {
    let archive = Archive::load(path)?;
    archive.expect(ENCODER_FORMAT, vocab)?;
    let mut params = EncoderParams::seeded(config, vocab.n_diseases(), vocab.n_procedures(), 0);
    params.load_tensors(&archive.take("encoder."))?;
    Ok(params)
}

pub fn save_model(path: impl AsRef<Path>, vocab: &CodeVocabulary, model: &RecommendationModel) -> Result<()> {
    Archive::new(MODEL_FORMAT, Some(&model.config), vocab, model.params.to_tensors()).save(path)
}

/// Loads a fine-tuned model; the encoder configuration comes from the archive.
pub fn load_model(path: impl AsRef<Path>, vocab: &CodeVocabulary) -> Result<RecommendationModel> {
    let archive = Archive::load(path)?;
    archive.expect(MODEL_FORMAT, vocab)?;
    let config = archive
        .config
        .clone()
        .ok_or_else(|| Error::validation("model checkpoint has no encoder config"))?;
    config.validate()?;
    let encoder = EncoderParams::seeded(&config, vocab.n_diseases(), vocab.n_procedures(), 0);
    let mut params = HeadedEncoder {
        head: Head::zeros(vocab.n_medications(), encoder.dim()),
        encoder,
    };
    params.load_tensors(&archive.tensors)?;
    Ok(RecommendationModel { config, params })
}

pub fn save_lr(path: impl AsRef<Path>, vocab: &CodeVocabulary, model: &LrModel) -> Result<()> {
    Archive::new(LR_FORMAT, None, vocab, model.to_tensors()).save(path)
}

pub fn load_lr(path: impl AsRef<Path>, vocab: &CodeVocabulary) -> Result<LrModel> {
    let archive = Archive::load(path)?;
    archive.expect(LR_FORMAT, vocab)?;
    let mut model = LrModel::zeros(vocab);
    model.load_tensors(&archive.tensors)?;
    Ok(model)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(nm: usize) -> CodeVocabulary {
        CodeVocabulary::new(
            vec!["D0".into(), "D1".into(), "D2".into()],
            vec!["P0".into()],
            (0..nm).map(|i| format!("M{i}")).collect(),
        )
        .unwrap()
    }

    fn small() -> EncoderConfig {
        EncoderConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 4,
            max_disease_len: 3,
            max_procedure_len: 2,
            dropout: 0.0,
        }
    }

    #[test]
    fn encoder_round_trip_and_shape_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.json");
        let v = vocab(2);
        let cfg = small();
        let enc = EncoderParams::seeded(&cfg, 3, 1, 4);
        let head = Head::zeros(1, 4);
        save_encoder(&path, &cfg, &v, &enc, &[("smp_head", &head)]).unwrap();
        assert_eq!(load_encoder(&path, &cfg, &v).unwrap(), enc);

        let wider = EncoderConfig { embed_dim: 8, ..cfg.clone() };
        assert!(matches!(load_encoder(&path, &wider, &v), Err(Error::Shape { .. })));
        assert!(load_encoder(&path, &cfg, &vocab(3)).unwrap_err().is_validation());
        assert!(load_model(&path, &v).is_err());
    }

    #[test]
    fn model_and_lr_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = vocab(2);
        let model = RecommendationModel::new(small(), EncoderParams::seeded(&small(), 3, 1, 1), 2, 3);
        save_model(dir.path().join("m.json"), &v, &model).unwrap();
        assert_eq!(load_model(dir.path().join("m.json"), &v).unwrap(), model);

        let mut lr = LrModel::zeros(&v);
        lr.bias[1] = 0.5;
        save_lr(dir.path().join("lr.json"), &v, &lr).unwrap();
        assert_eq!(load_lr(dir.path().join("lr.json"), &v).unwrap(), lr);
    }
}
