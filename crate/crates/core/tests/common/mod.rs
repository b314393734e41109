#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nghf::network::{Activation, Matrix, NetworkSpec};
use nghf::param::{init_parameters, InitScheme, ParameterVector};
use nghf::sequence::{build_lattice, Lattice, SequenceExample, Segment, Utterance, World, WorldConfig};

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    rel_err(a.as_slice(), b.as_slice())
}

pub fn tiny_world_config(seed: u64) -> WorldConfig {
    WorldConfig {
        seed,
        num_utterances: 6,
        num_phones: 3,
        states_per_phone: 2,
        input_dim: 3,
        min_frames: 6,
        max_frames: 9,
        min_duration: 2,
        max_duration: 4,
        ..WorldConfig::default()
    }
}

/// A tiny net, random weights, and lattice examples built from its own outputs.
pub struct Tiny {
    pub world: World,
    pub spec: NetworkSpec,
    pub theta: ParameterVector,
    pub examples: Vec<SequenceExample>,
    pub kappa: f64,
}

pub fn tiny(seed: u64, beam: usize, activation: Activation) -> Tiny {
    let cfg = tiny_world_config(seed);
    let world = World::new(cfg.clone()).unwrap();
    let states = cfg.num_phones * cfg.states_per_phone;
    let spec = NetworkSpec::new(cfg.input_dim, vec![4], states, activation).unwrap();
    let mut theta = init_parameters(spec.layout(), seed, InitScheme::UniformFanIn);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5);
    for x in theta.as_mut_slice() {
        *x += rng.random_range(-0.5..0.5);
    }
    let kappa = 0.7;
    let examples = world
        .generate_corpus()
        .into_iter()
        .map(|u| {
            let (out, _) = spec.forward(&theta, &u.frames).unwrap();
            let lattice = build_lattice(&world.model, &u, &(out * kappa), beam).unwrap();
            SequenceExample::new(u, lattice)
        })
        .collect();
    Tiny { world, spec, theta, examples, kappa }
}

pub fn random_vector(like: &ParameterVector, seed: u64) -> ParameterVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    like.with_values((0..like.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
}

pub fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.1
}

/// Path-enumeration posteriors: per-path log score from the arcs' frames
/// and priors, normalized by explicit softmax over all paths.
pub struct BruteForce {
    pub paths: Vec<Vec<usize>>,
    pub probs: Vec<f64>,
    pub gamma: Matrix,
    pub arc_occupancy: Vec<f64>,
    pub log_total: f64,
}

pub fn brute_force(lattice: &Lattice, outputs: &Matrix, kappa: f64) -> BruteForce {
    let paths = lattice.enumerate_paths(200).expect("too many paths for enumeration");
    let arcs = lattice.arcs();
    let scores: Vec<f64> = paths
        .iter()
        .map(|p| {
            p.iter()
                .map(|&a| {
                    let arc = &arcs[a];
                    let ac: f64 = (arc.t0..arc.t1).map(|t| outputs[(t, arc.states[t - arc.t0])]).sum();
                    kappa * ac + arc.prior
                })
                .sum()
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    let probs: Vec<f64> = scores.iter().map(|s| (s - m).exp() / z).collect();
    let mut gamma = Matrix::zeros(outputs.nrows(), outputs.ncols());
    let mut arc_occupancy = vec![0.0; arcs.len()];
    for (p, &pr) in paths.iter().zip(&probs) {
        for &a in p {
            arc_occupancy[a] += pr;
            for t in arcs[a].t0..arcs[a].t1 {
                gamma[(t, arcs[a].states[t - arcs[a].t0])] += pr;
            }
        }
    }
    BruteForce { paths, probs, gamma, arc_occupancy, log_total: m + z.ln() }
}

/// Phone accuracy of a hypothesis segment against the reference.
pub fn segment_accuracy(phone: usize, t0: usize, t1: usize, reference: &[Segment]) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for z in reference {
        let lo = t0.max(z.t0);
        let hi = t1.min(z.t1);
        if hi <= lo {
            continue;
        }
        let e = (hi - lo) as f64 / (z.t1 - z.t0) as f64;
        best = best.max(if z.phone == phone { 2.0 * e - 1.0 } else { e - 1.0 });
    }
    if best.is_finite() {
        best
    } else {
        -1.0
    }
}

/// Expected phone accuracy per reference phone by explicit path sum.
pub fn brute_mpe(lattice: &Lattice, utterance: &Utterance, outputs: &Matrix, kappa: f64) -> f64 {
    let bf = brute_force(lattice, outputs, kappa);
    let arcs = lattice.arcs();
    let expected: f64 = bf
        .paths
        .iter()
        .zip(&bf.probs)
        .map(|(p, pr)| pr * p.iter().map(|&a| segment_accuracy(arcs[a].phone, arcs[a].t0, arcs[a].t1, &utterance.segments)).sum::<f64>())
        .sum();
    expected / utterance.segments.len() as f64
}

/// `∂ outputs[t, s] / ∂θ` for every (t, s), as rows, via unit output gradients.
pub fn jacobian_rows(spec: &NetworkSpec, theta: &ParameterVector, frames: &Matrix) -> Vec<Vec<DVector<f64>>> {
    let (out, trace) = spec.forward(theta, frames).unwrap();
    (0..out.nrows())
        .map(|t| {
            (0..out.ncols())
                .map(|s| {
                    let mut e = Matrix::zeros(out.nrows(), out.ncols());
                    e[(t, s)] = 1.0;
                    DVector::from_vec(trace.backprop(&e).unwrap().values.into_values())
                })
                .collect()
        })
        .collect()
}

/// `(1/frames) Σ_t J_tᵀ κ(diag γ_t − γ_t γ_tᵀ) J_t` with γ from path enumeration.
pub fn explicit_gn(spec: &NetworkSpec, theta: &ParameterVector, batch: &[&SequenceExample], kappa: f64) -> DMatrix<f64> {
    let n = theta.len();
    let mut g = DMatrix::zeros(n, n);
    let mut frames = 0;
    for ex in batch {
        let (out, _) = spec.forward(theta, &ex.utterance.frames).unwrap();
        let gamma = brute_force(&ex.lattice, &out, kappa).gamma;
        let rows = jacobian_rows(spec, theta, &ex.utterance.frames);
        for (t, jt) in rows.iter().enumerate() {
            let s = out.ncols();
            let j = DMatrix::from_fn(s, n, |r, c| jt[r][c]);
            let gt = DVector::from_fn(s, |i, _| gamma[(t, i)]);
            let h = (DMatrix::from_diagonal(&gt) - &gt * gt.transpose()) * kappa;
            g += j.transpose() * h * j;
        }
        frames += out.nrows();
    }
    g / frames as f64
}

/// `(1/N) Σ_u g_u g_uᵀ`, each `g_u` the MMI score of the reference path.
pub fn explicit_fisher(spec: &NetworkSpec, theta: &ParameterVector, batch: &[&SequenceExample], kappa: f64) -> DMatrix<f64> {
    let n = theta.len();
    let mut f = DMatrix::zeros(n, n);
    for ex in batch {
        let (out, trace) = spec.forward(theta, &ex.utterance.frames).unwrap();
        let gamma = brute_force(&ex.lattice, &out, kappa).gamma;
        let mut d = -gamma * kappa;
        for (t, &l) in ex.utterance.labels.iter().enumerate() {
            d[(t, l)] += kappa;
        }
        let g = DVector::from_vec(trace.backprop(&d).unwrap().values.into_values());
        f += &g * g.transpose();
    }
    f / batch.len() as f64
}
