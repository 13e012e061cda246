//! Generates a long-tailed synthetic cohort and prints its summary.
//!
//!     cargo run --example synth_cohort -- [out_dir]

use raremed::data::{code_frequencies, split_dataset, Split};
use raremed::synth::{cohort_statistics, generate_cohort, SynthConfig};

fn main() -> raremed::Result<()> {
    let config = SynthConfig {
        seed: 42,
        ..SynthConfig::default()
    };
    let cohort = generate_cohort(&config)?;
    let stats = cohort_statistics(&cohort.dataset)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    println!("ddi edges: {}", cohort.ddi.n_edges());

    let ds = split_dataset(cohort.dataset.clone(), 1)?;
    let (train, val, test) = ds.split_sizes();
    println!("split train/val/test: {train}/{val}/{test}");

    let freqs = code_frequencies(&ds, Split::Train);
    let mut sorted = freqs.0.clone();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    println!("top disease counts: {:?}", &sorted[..5]);
    println!("diseases never seen in train: {}", sorted.iter().filter(|&&c| c == 0).count());

    if let Some(out) = std::env::args().nth(1) {
        cohort.save(&out)?;
        println!("saved to {out}");
    }
    Ok(())
}
