//! Runs SGD, NG, HF and NGHF over several seeds on the default toy world
//! and prints per-method medians and the entropy diagnostic.
//!
//! `cargo run --release --example compare_methods [config.toml]`

use std::time::Instant;

use nghf::harness::report::{format_entropy, format_medians};
use nghf::harness::{medians, run_in_memory, ExperimentConfig};

fn main() -> nghf::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::default(),
    };
    let started = Instant::now();
    let result = run_in_memory(&cfg)?;
    for r in &result.runs {
        if let Err(e) = &r.outcome {
            eprintln!("{} seed {} failed: {e}", r.method, r.seed);
        }
    }
    print!("{}", format_medians(&medians(&result.summary)));
    print!("{}", format_entropy(&result.entropy));
    println!("elapsed {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}
