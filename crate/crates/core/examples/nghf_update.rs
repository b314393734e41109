//! One NGHF update on a small problem, broken into its natural-gradient and
//! conjugate-direction parts.

use nghf::curvature::{CurvatureKind, CurvatureOperator};
use nghf::harness::experiment::{build_examples, generate, pretrain};
use nghf::harness::ExperimentConfig;
use nghf::optim::mpe_batch;
use nghf::param::dot;
use nghf::solver::{compute_nghf_update, CgConfig, SecondRunRhs};

fn main() -> nghf::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.world.num_utterances = 80;
    cfg.pretrain.epochs = 3;
    let corpus = generate(&cfg)?;
    let spec = cfg.network_spec()?;
    let theta = pretrain(&cfg, &corpus, 1)?;
    let kappa = cfg.kappa()?;
    let examples = build_examples(&corpus, &spec, &theta, &corpus.train, kappa, 32)?;
    let all: Vec<usize> = (0..examples.len()).collect();
    let (criterion, grad) = mpe_batch(&spec, &theta, &examples, &all, kappa)?;

    let fisher = CurvatureOperator::build(CurvatureKind::EmpiricalFisher, &spec, &theta, &examples, (0..8).collect(), kappa, 0.0)?;
    let gn = CurvatureOperator::build(CurvatureKind::GaussNewton, &spec, &theta, &examples, (8..16).collect(), kappa, 0.0)?;
    let ng_cfg = CgConfig { max_iterations: 8, relative_tolerance: 1e-4, damping: 1e-2 };
    let gn_cfg = CgConfig { damping: 3e-3, ..ng_cfg };
    let u = compute_nghf_update(&fisher, &gn, &grad.values, &ng_cfg, &gn_cfg, SecondRunRhs::Gradient)?;

    println!("criterion {criterion:.4}, |grad| {:.3e}", grad.values.norm());
    println!("NG run: {} iterations, |Δθ_NG| {:.3e}", u.ng_trace.num_iterations(), u.ng_direction.norm());
    println!("w1 = {:.4}", u.w1);
    for (i, c) in u.components.iter().enumerate() {
        println!("  p{} step {:+.4e} |p| {:.3e}", i + 1, c.step, c.direction_norm);
    }
    println!("model decrease {:.4e}", u.quadratic_model_decrease);
    let cos = dot(&u.direction, &grad.values)? / (u.direction.norm() * grad.values.norm());
    println!("cos(update, grad) {cos:.4}");
    let rebuilt = u.reconstruct()?;
    println!("reconstruction exact: {}", rebuilt.as_slice() == u.direction.as_slice());
    Ok(())
}
