//! Run a small multi-seed experiment for the full agent and the random
//! baseline, then export one tidy table for plotting.
//!
//! `cargo run --release --example learning_curves -- [out_dir]`

use modular_arcade::agent::Variant;
use modular_arcade::bench::{plot_export, read_curve, run_experiment, write_tidy, ExperimentSpec};
use modular_arcade::env::EnvKind;

fn main() -> modular_arcade::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("curves"), Into::into);
    let mut inputs = Vec::new();
    for variant in [Variant::Full, Variant::Random] {
        let mut spec = ExperimentSpec::new(EnvKind::Duel, variant, vec![0, 1, 2], 6_000, &out);
        spec.eval_every = 2_000;
        spec.eval_episodes = 5;
        spec.eval_max_steps = 500;
        let run = run_experiment(&spec, 2)?;
        for p in read_curve(&run.aggregate)?.points {
            println!(
                "{variant:>7} step {:5}: median score {:5.2}, interception {:.3}",
                p.step, p.mean_score, p.interception_rate
            );
        }
        inputs.extend(run.curves);
        inputs.push(run.aggregate);
    }
    let rows = plot_export(&inputs)?;
    let tidy = out.join("duel_tidy.csv");
    write_tidy(&tidy, &rows)?;
    println!("{} rows written to {}", rows.len(), tidy.display());
    Ok(())
}
