//! Clinical complexity of patients bucketed by rarest-disease popularity.

use raremed::data::{code_frequencies, profile_groups, split_dataset, Split};
use raremed::synth::{generate_cohort, SynthConfig};

fn main() -> raremed::Result<()> {
    let cohort = generate_cohort(&SynthConfig {
        seed: 13,
        ..SynthConfig::default()
    })?;
    let ds = split_dataset(cohort.dataset, 13)?;
    let freqs = code_frequencies(&ds, Split::Train);
    println!("{:>18} {:>8} {:>6} {:>6} {:>6} {:>8}", "rarest freq", "patients", "#dis", "#proc", "#med", "med pop");
    let show = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    for g in profile_groups(&ds, &freqs, 13) {
        println!(
            "{:>18} {:>8} {:>6} {:>6} {:>6} {:>8}",
            format!("[{:.0}, {:.0})", g.interval.0, g.interval.1),
            g.n_patients,
            show(g.mean_diseases),
            show(g.mean_procedures),
            show(g.mean_medications),
            show(g.mean_medication_popularity)
        );
    }
    Ok(())
}
