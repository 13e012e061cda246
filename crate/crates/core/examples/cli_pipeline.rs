//! The command pipeline driven from code: synth, pretrain, finetune,
//! evaluate and compare inside a temporary run directory.

use raremed::cli::{cmd_compare, cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_synth, FinetuneOptions, Method, RunConfig};
use raremed::data::Split;
use raremed::encoder::EncoderConfig;
use raremed::pretrain::PretrainSchedule;
use raremed::synth::SynthConfig;
use raremed::train::Schedule;

fn main() -> raremed::Result<()> {
    let root = std::env::temp_dir().join("raremed-cli-example");
    let _ = std::fs::remove_dir_all(&root);
    let data = root.join("data");
    cmd_synth(
        &SynthConfig {
            n_patients: 400,
            n_diseases: 50,
            n_procedures: 20,
            n_medications: 16,
            seed: 1,
            ..SynthConfig::default()
        },
        &data,
        false,
    )?;

    let base = |run: &str| {
        let mut c = RunConfig {
            seed: Some(17),
            encoder: EncoderConfig {
                embed_dim: 16,
                n_layers: 1,
                n_heads: 2,
                ..EncoderConfig::default()
            },
            pretrain: PretrainSchedule {
                smp_epochs: 3,
                sr_epochs: 3,
                ..PretrainSchedule::default()
            },
            finetune: Schedule {
                epochs: 5,
                ..Schedule::default()
            },
            ..RunConfig::default()
        };
        c.baseline.epochs = 20;
        c.paths.data_dir = Some(data.clone());
        c.paths.run_dir = Some(root.join(run));
        c
    };
    println!("{}", base("raremed").to_toml());

    let raremed = base("raremed");
    cmd_pretrain(&raremed)?;
    cmd_finetune(&raremed, &FinetuneOptions::default())?;
    cmd_evaluate(&raremed, None, Split::Test)?;

    let lr = base("lr");
    cmd_finetune(
        &lr,
        &FinetuneOptions {
            method: Some(Method::Lr),
            ..FinetuneOptions::default()
        },
    )?;
    cmd_evaluate(&lr, None, Split::Test)?;

    let runs = vec![("raremed".to_string(), root.join("raremed")), ("lr".to_string(), root.join("lr"))];
    print!("{}", cmd_compare(&runs, Split::Test)?);
    println!("artifacts under {}", root.display());
    Ok(())
}
