//! SGD learning-rate grid on the default world, selected by validation error.
//! Usage: sgd_grid [CONFIG]

use nghf::harness::{select_learning_rate, sgd_grid, ExperimentConfig};

fn main() -> nghf::Result<()> {
    let cfg = match std::env::args().nth(1) {
        Some(p) => ExperimentConfig::load(p.as_ref())?,
        None => ExperimentConfig::default(),
    };
    let points = sgd_grid(&cfg, &[0.01, 0.03, 0.1, 0.3, 1.0])?;
    println!("{:>8} {:>10} {:>8}", "eta", "valid", "ser");
    for p in &points {
        println!("{:>8} {:>10.4} {:>8.4}", p.learning_rate, p.valid_criterion, p.valid_ser);
    }
    if let Some(best) = select_learning_rate(&points) {
        println!("selected {}", best.learning_rate);
    }
    Ok(())
}
