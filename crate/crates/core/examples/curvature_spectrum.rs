//! Materializes the Gauss-Newton and empirical Fisher matrices of a small
//! network and prints the top of each spectrum.

use nghf::curvature::{eigenspectrum, CurvatureKind, CurvatureOperator};
use nghf::harness::experiment::{build_examples, generate, pretrain};
use nghf::harness::ExperimentConfig;

fn main() -> nghf::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.world.num_utterances = 40;
    cfg.world.input_dim = 6;
    cfg.world.num_phones = 4;
    cfg.network.hidden_dims = vec![10];
    cfg.pretrain.epochs = 3;
    let corpus = generate(&cfg)?;
    let spec = cfg.network_spec()?;
    let theta = pretrain(&cfg, &corpus, 1)?;
    let kappa = cfg.kappa()?;
    let examples = build_examples(&corpus, &spec, &theta, &corpus.train, kappa, 32)?;
    let batch: Vec<usize> = (0..examples.len().min(12)).collect();

    for kind in [CurvatureKind::GaussNewton, CurvatureKind::EmpiricalFisher] {
        let op = CurvatureOperator::build(kind, &spec, &theta, &examples, batch.clone(), kappa, 0.0)?;
        let rep = eigenspectrum(&op)?;
        let top: Vec<String> = rep.eigenvalues.iter().take(6).map(|e| format!("{e:.3e}")).collect();
        let rank = rep.eigenvalues.iter().filter(|&&e| e > 1e-10 * rep.eigenvalues[0]).count();
        println!("{kind:?}: dim {} numerical rank {rank}", rep.eigenvalues.len());
        println!("  top {}", top.join(" "));
        println!("  reconstruction residual {:.1e}", rep.reconstruction_residual);
    }
    Ok(())
}
