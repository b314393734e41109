//! Trains one seed with NGHF on the default world and saves the final model.
//! Usage: train_nghf [OUT_CHECKPOINT]

use std::fs::File;
use std::io::BufWriter;

use nghf::harness::experiment::{generate, prepare, run_one};
use nghf::harness::ExperimentConfig;
use nghf::optim::Method;
use nghf::param::ParameterVector;

fn main() -> nghf::Result<()> {
    let cfg = ExperimentConfig::default();
    let corpus = generate(&cfg)?;
    let prepared = prepare(&cfg, &corpus, 1)?;
    let b = prepared.baseline;
    println!("ce     valid {:.4} ser {:.4} entropy {:.4}", b.valid_criterion, b.valid_ser, b.entropy);

    let run = run_one(&cfg, &prepared, Method::Nghf)?;
    for (row, rec) in run.log.rows.iter().zip(&run.records) {
        println!(
            "{:>3} valid {:.4} ser {:.4} entropy {:.4} w1 {:>7.3} cg {:>2} {}",
            row.update,
            row.valid_criterion,
            row.valid_ser,
            row.entropy,
            rec.w1.unwrap_or(f64::NAN),
            rec.cg_iterations,
            if rec.accepted { "" } else { "skipped" }
        );
    }

    let path = std::env::args().nth(1).unwrap_or_else(|| "nghf_seed1.ckpt".into());
    run.theta.write_checkpoint(BufWriter::new(File::create(&path)?))?;
    let back = ParameterVector::read_checkpoint(File::open(&path)?)?;
    println!("checkpoint {path}: {} parameters, round trip exact: {}", back.len(), back == run.theta);
    Ok(())
}
