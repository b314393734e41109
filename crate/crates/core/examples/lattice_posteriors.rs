//! Generates a few utterances, builds a lattice for each from a CE-pretrained
//! model, and prints lattice size, reference occupancy and the MPE criterion.

use nghf::harness::experiment::{build_examples, generate, pretrain};
use nghf::harness::ExperimentConfig;
use nghf::sequence::{forward_backward, mpe_criterion_and_grad};

fn main() -> nghf::Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.world.num_utterances = 60;
    cfg.pretrain.epochs = 3;
    let corpus = generate(&cfg)?;
    let spec = cfg.network_spec()?;
    let theta = pretrain(&cfg, &corpus, 1)?;
    let kappa = cfg.kappa()?;
    let examples = build_examples(&corpus, &spec, &theta, &corpus.valid, kappa, 32)?;

    println!("{:>4} {:>6} {:>6} {:>6} {:>10} {:>8}", "utt", "frames", "arcs", "paths", "ref occ", "mpe");
    for (i, ex) in examples.iter().enumerate() {
        let (outputs, _) = spec.forward(&theta, &ex.utterance.frames)?;
        let post = forward_backward(&ex.lattice, &outputs, kappa)?;
        let ref_occ: f64 = ex.utterance.labels.iter().enumerate().map(|(t, &l)| post.gamma[(t, l)]).sum::<f64>() / ex.utterance.num_frames() as f64;
        let paths = ex.lattice.enumerate_paths(10_000).map_or("many".to_string(), |p| p.len().to_string());
        let mpe = mpe_criterion_and_grad(&spec, &theta, ex, kappa)?;
        println!("{i:>4} {:>6} {:>6} {paths:>6} {ref_occ:>10.4} {:>8.4}", ex.utterance.num_frames(), ex.lattice.arcs().len(), mpe.criterion);
    }
    Ok(())
}
