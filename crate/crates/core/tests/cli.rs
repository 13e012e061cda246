use std::fs;
use std::path::Path;

use raremed::checkpoint::{self, read_json};
use raremed::cli::{
    cmd_compare, cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_profile, cmd_synth, run, CohortManifest,
    FinetuneLog, FinetuneOptions, Manifest, Method, PretrainLogs, RunConfig,
};
use raremed::data::{assign_popularity_groups, code_frequencies, load_dataset, load_ddi_graph, Split};
use raremed::encoder::{EncoderConfig, EncoderParams};
use raremed::finetune::recommend;
use raremed::metrics::{evaluate, Prediction, REPORT_SCHEMA};
use raremed::pretrain::PretrainSchedule;
use raremed::synth::{GroundTruthMap, SynthConfig, RECORDS_FILE, TRUTH_FILE, VOCAB_FILE};
use raremed::train::{Schedule, Seeds};

fn small_synth(seed: u64) -> SynthConfig {
    SynthConfig {
        n_patients: 120,
        n_diseases: 24,
        n_procedures: 8,
        n_medications: 10,
        mean_diseases_per_patient: 3.0,
        mean_procedures_per_patient: 3.0,
        seed,
        ..SynthConfig::default()
    }
}

fn small_config(data: &Path, run: &Path) -> RunConfig {
    let mut c = RunConfig {
        seed: Some(11),
        encoder: EncoderConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 8,
            max_disease_len: 6,
            max_procedure_len: 6,
            dropout: 0.1,
        },
        pretrain: PretrainSchedule {
            smp_epochs: 1,
            sr_epochs: 2,
            ..PretrainSchedule::default()
        },
        finetune: Schedule {
            epochs: 2,
            ..Schedule::default()
        },
        baseline: Schedule {
            epochs: 2,
            lr: 3e-2,
            ..Schedule::default()
        },
        ..RunConfig::default()
    };
    c.paths.data_dir = Some(data.to_path_buf());
    c.paths.run_dir = Some(run.to_path_buf());
    c
}

fn args(parts: &[&str]) -> Vec<String> {
    std::iter::once("raremed").chain(parts.iter().copied()).map(String::from).collect()
}

#[test]
fn synth_is_reproducible_and_refuses_existing_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ma = cmd_synth(&small_synth(4), &a, false).unwrap();
    let mb = cmd_synth(&small_synth(4), &b, false).unwrap();
    assert_eq!(ma.files, mb.files);
    assert_eq!(read_json::<CohortManifest>(a.join("manifest.json")).unwrap(), ma);

    let err = cmd_synth(&small_synth(5), &a, false).unwrap_err();
    assert!(err.is_validation());
    let mc = cmd_synth(&small_synth(5), &a, true).unwrap();
    assert_ne!(mc.files[RECORDS_FILE], ma.files[RECORDS_FILE]);

    let bad = SynthConfig {
        zipf_exponent: 0.0,
        ..small_synth(1)
    };
    assert!(cmd_synth(&bad, &dir.path().join("c"), false).unwrap_err().is_validation());
    let out = dir.path().join("d");
    assert_eq!(run(args(&["synth", "--out", out.to_str().unwrap(), "--zipf-exponent", "0"])), 1);
    assert!(!out.join(RECORDS_FILE).exists());
}

#[test]
fn full_pipeline_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&small_synth(2), &data, false).unwrap();
    let records_before = fs::read(data.join(RECORDS_FILE)).unwrap();
    let run_dir = dir.path().join("run");
    let config = small_config(&data, &run_dir);

    let missing = cmd_finetune(&config, &FinetuneOptions::default()).unwrap_err();
    assert!(missing.is_validation());
    assert!(missing.to_string().contains("pretrain_sr.json"));

    let logs = cmd_pretrain(&config).unwrap();
    assert_eq!(logs.smp.epochs.len(), 1);
    assert_eq!(logs.sr.epochs.len(), 2);
    let ft = cmd_finetune(&config, &FinetuneOptions::default()).unwrap();
    assert!(!ft.from_scratch);
    assert_eq!(ft.log.epochs.len(), 2);
    let report = cmd_evaluate(&config, None, Split::Test).unwrap();
    assert_eq!(report.per_group_jaccard.len(), config.groups.n_groups);

    for f in [
        "manifest.json",
        "checkpoints/pretrain_smp.json",
        "checkpoints/pretrain_sr.json",
        "checkpoints/model.json",
        "logs/pretrain.json",
        "logs/finetune.json",
        "reports/test_predictions.jsonl",
        "reports/test_report.json",
        "reports/test_table.txt",
    ] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let dump = fs::read_to_string(run_dir.join("reports/test_predictions.jsonl")).unwrap();
    assert_eq!(dump.lines().count(), report.n_records);
    let table = fs::read_to_string(run_dir.join("reports/test_table.txt")).unwrap();
    for col in ["Jaccard", "PRAUC", "F1", "DDI", "#MED", "G1", "G5", "sigma"] {
        assert!(table.contains(col), "{col}");
    }
    let manifest: Manifest = read_json(run_dir.join("manifest.json")).unwrap();
    for cmd in ["pretrain", "finetune", "evaluate-test"] {
        let rec = &manifest.commands[cmd];
        assert_eq!(rec.seed, 11);
        assert!(rec.inputs.contains_key("records"));
        assert!(!rec.outputs.is_empty());
    }
    assert_eq!(fs::read(data.join(RECORDS_FILE)).unwrap(), records_before);

    let value: serde_json::Value = read_json(run_dir.join("reports/test_report.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    assert!(jsonschema::is_valid(&schema, &value));
    let mut broken = value.clone();
    broken.as_object_mut().unwrap().remove("sigma");
    assert!(!jsonschema::is_valid(&schema, &broken));

    let profile = cmd_profile(&config).unwrap();
    assert_eq!(profile.lines().count(), 1 + config.groups.n_profile_groups);
}

#[test]
fn zero_epoch_pretrain_saves_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&small_synth(3), &data, false).unwrap();
    let mut config = small_config(&data, &dir.path().join("run"));
    config.pretrain.smp_epochs = 0;
    config.pretrain.sr_epochs = 0;
    cmd_pretrain(&config).unwrap();
    let vocab = raremed::data::CodeVocabulary::load(data.join(VOCAB_FILE)).unwrap();
    let init = EncoderParams::seeded(
        &config.encoder,
        vocab.n_diseases(),
        vocab.n_procedures(),
        Seeds::from_root(11).init,
    );
    for name in ["pretrain_smp.json", "pretrain_sr.json"] {
        let path = dir.path().join("run/checkpoints").join(name);
        assert_eq!(checkpoint::load_encoder(&path, &config.encoder, &vocab).unwrap(), init);
    }
    let wider = EncoderConfig {
        embed_dim: 16,
        ..config.encoder.clone()
    };
    let path = dir.path().join("run/checkpoints/pretrain_sr.json");
    assert!(checkpoint::load_encoder(&path, &wider, &vocab).is_err());
}

#[test]
fn reruns_reproduce_logs_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&small_synth(6), &data, false).unwrap();
    let mut outputs = Vec::new();
    for r in ["r1", "r2"] {
        let config = small_config(&data, &dir.path().join(r));
        cmd_pretrain(&config).unwrap();
        cmd_finetune(&config, &FinetuneOptions::default()).unwrap();
        let p: PretrainLogs = read_json(dir.path().join(r).join("logs/pretrain.json")).unwrap();
        let f: FinetuneLog = read_json(dir.path().join(r).join("logs/finetune.json")).unwrap();
        outputs.push((p, f));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn baselines_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&small_synth(8), &data, false).unwrap();
    let mut runs = Vec::new();
    for (label, method, scratch) in [
        ("raremed-no-pretrain", Method::Raremed, true),
        ("lr", Method::Lr, false),
        ("rebalancing", Method::Rebalancing, false),
    ] {
        let run_dir = dir.path().join(label);
        let config = small_config(&data, &run_dir);
        let out = cmd_finetune(
            &config,
            &FinetuneOptions {
                method: Some(method),
                from_scratch: scratch,
                encoder: None,
            },
        )
        .unwrap();
        assert_eq!(out.method, method);
        cmd_evaluate(&config, None, Split::Test).unwrap();
        runs.push((label.to_string(), run_dir));
    }
    runs.push(("absent".to_string(), dir.path().join("never-ran")));
    let table = cmd_compare(&runs, Split::Test).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[4].contains("(absent)"));
    for line in &lines[1..4] {
        let cols: Vec<f64> = line.split_whitespace().skip(1).map(|c| c.parse().unwrap()).collect();
        let groups = &cols[5..10];
        let mean = groups.iter().sum::<f64>() / 5.0;
        let sigma = (groups.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!((sigma - cols[10]).abs() < 2e-4, "{line}");
    }

    let other = dir.path().join("other-data");
    let wider = SynthConfig {
        n_medications: 12,
        ..small_synth(9)
    };
    cmd_synth(&wider, &other, false).unwrap();
    let stray = dir.path().join("stray");
    let config = small_config(&other, &stray);
    cmd_finetune(
        &config,
        &FinetuneOptions {
            method: Some(Method::Lr),
            ..FinetuneOptions::default()
        },
    )
    .unwrap();
    cmd_evaluate(&config, None, Split::Test).unwrap();
    runs.push(("stray".to_string(), stray.clone()));
    assert!(cmd_compare(&runs, Split::Test).unwrap_err().is_validation());

    // A model trained on one vocabulary cannot score another dataset.
    let mut crossed = small_config(&data, &stray);
    crossed.paths.run_dir = Some(stray.clone());
    let err = cmd_evaluate(&crossed, Some(&stray.join("checkpoints/model.json")), Split::Test);
    assert!(err.unwrap_err().is_validation());
}

#[test]
fn missing_inputs_exit_nonzero_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("nothing-here");
    let run_dir = dir.path().join("run");
    let config = small_config(&data, &run_dir);
    let err = cmd_finetune(
        &config,
        &FinetuneOptions {
            from_scratch: true,
            ..FinetuneOptions::default()
        },
    )
    .unwrap_err();
    assert!(err.to_string().contains("nothing-here"));
    let code = run(args(&[
        "finetune",
        "--from-scratch",
        "--seed",
        "1",
        "--data-dir",
        data.to_str().unwrap(),
        "--run-dir",
        run_dir.to_str().unwrap(),
    ]));
    assert_eq!(code, 1);
    let no_seed = run(args(&["profile", "--data-dir", data.to_str().unwrap()]));
    assert_eq!(no_seed, 1);
}

#[test]
fn config_files_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    cmd_synth(&small_synth(1), &data, false).unwrap();
    let run_dir = dir.path().join("run");
    let config = small_config(&data, &run_dir);
    let toml_path = dir.path().join("run.toml");
    fs::write(&toml_path, config.to_toml()).unwrap();
    assert_eq!(RunConfig::load(&toml_path).unwrap(), config);
    let json_path = dir.path().join("run.json");
    fs::write(&json_path, serde_json::to_string(&config).unwrap()).unwrap();
    assert_eq!(RunConfig::load(&json_path).unwrap(), config);

    let code = run(args(&[
        "finetune",
        "--config",
        toml_path.to_str().unwrap(),
        "--method",
        "lr",
        "--epochs",
        "1",
    ]));
    assert_eq!(code, 0);
    let log: FinetuneLog = read_json(run_dir.join("logs/finetune.json")).unwrap();
    assert_eq!(log.log.epochs.len(), 1);
    let manifest: Manifest = read_json(run_dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.commands["finetune"].config.baseline.epochs, 1);

    fs::write(&toml_path, "seed = 1\nunknown_key = 3\n").unwrap();
    assert_eq!(run(args(&["profile", "--config", toml_path.to_str().unwrap()])), 1);
}

#[test]
fn oracle_predictor_scores_one_on_noiseless_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let synth = SynthConfig {
        noise_flip_prob: 0.0,
        ..small_synth(12)
    };
    cmd_synth(&synth, &data, false).unwrap();
    let ds = load_dataset(data.join(RECORDS_FILE), data.join(VOCAB_FILE)).unwrap();
    let ds = raremed::data::split_dataset(ds, 1).unwrap();
    let truth = GroundTruthMap::load(data.join(TRUTH_FILE)).unwrap();
    let ddi = load_ddi_graph(data.join("ddi.tsv"), &ds.vocab).unwrap().graph;
    let test = ds.split_records(Split::Test);
    let preds: Vec<Prediction> = test
        .iter()
        .map(|r| {
            let probs: Vec<f64> = truth
                .prescribe(r, ds.vocab.n_medications())
                .iter()
                .map(|&m| if m { 1.0 } else { 0.0 })
                .collect();
            Prediction {
                patient_id: r.patient_id.clone(),
                recommended: recommend(&probs, 0.5),
                probs,
            }
        })
        .collect();
    let freqs = code_frequencies(&ds, Split::Train);
    let groups = assign_popularity_groups(test.iter().copied(), &freqs, 5).unwrap();
    let report = evaluate(&preds, &test, &ddi, &groups).unwrap();
    assert_eq!(report.jaccard, 1.0);
    assert_eq!(report.sigma, 0.0);
}
