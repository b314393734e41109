mod common;

use common::*;
use proptest::prelude::*;

use nghf::network::{Activation, Matrix};
use nghf::sequence::decode::{nbest_sequences, viterbi_from_outputs};
use nghf::sequence::{
    arc_accuracies, build_lattice, forward_backward, frame_ce_from_outputs, mpe_from_outputs, Segment, Utterance, WorldModel,
};

fn fd_matrix(f: impl Fn(&Matrix) -> f64, x: &Matrix, h: f64) -> Matrix {
    let mut g = Matrix::zeros(x.nrows(), x.ncols());
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut p = x.clone();
            let mut m = x.clone();
            p[(i, j)] += h;
            m[(i, j)] -= h;
            g[(i, j)] = (f(&p) - f(&m)) / (2.0 * h);
        }
    }
    g
}

#[test]
fn posteriors_match_path_enumeration() {
    for seed in 0..4 {
        let t = tiny(seed, 12, Activation::Sigmoid);
        for (k, ex) in t.examples.iter().enumerate() {
            let out = random_matrix(ex.utterance.num_frames(), t.world.model.num_states(), 100 + k as u64);
            let fb = forward_backward(&ex.lattice, &out, t.kappa).unwrap();
            let bf = brute_force(&ex.lattice, &out, t.kappa);
            assert!(bf.paths.len() <= 200);
            assert!(rel_err(fb.gamma.as_slice(), bf.gamma.as_slice()) < 1e-10);
            assert!(rel_err(&fb.arc_occupancy, &bf.arc_occupancy) < 1e-10);
            assert!((fb.log_total - bf.log_total).abs() < 1e-10 * bf.log_total.abs().max(1.0));
        }
    }
}

#[test]
fn mpe_matches_path_sum_and_accuracy_definition() {
    let t = tiny(7, 10, Activation::Sigmoid);
    for (k, ex) in t.examples.iter().enumerate() {
        let out = random_matrix(ex.utterance.num_frames(), t.world.model.num_states(), 200 + k as u64);
        let mpe = mpe_from_outputs(&ex.lattice, &ex.arc_accuracy, ex.reference_length(), &out, t.kappa).unwrap();
        let want = brute_mpe(&ex.lattice, &ex.utterance, &out, t.kappa);
        assert!((mpe.criterion - want).abs() < 1e-10 * want.abs().max(1.0), "{} vs {want}", mpe.criterion);
        for (a, &acc) in ex.lattice.arcs().iter().zip(&ex.arc_accuracy) {
            assert_eq!(acc, segment_accuracy(a.phone, a.t0, a.t1, &ex.utterance.segments));
        }
    }
}

#[test]
fn mpe_activation_gradient_matches_central_differences() {
    let t = tiny(3, 10, Activation::Sigmoid);
    for (k, ex) in t.examples.iter().take(4).enumerate() {
        let out = random_matrix(ex.utterance.num_frames(), t.world.model.num_states(), 300 + k as u64);
        let f = |o: &Matrix| mpe_from_outputs(&ex.lattice, &ex.arc_accuracy, ex.reference_length(), o, t.kappa).unwrap().criterion;
        let g = mpe_from_outputs(&ex.lattice, &ex.arc_accuracy, ex.reference_length(), &out, t.kappa).unwrap().activation_grad;
        let fd = fd_matrix(f, &out, 1e-5);
        assert!(rel_err(g.as_slice(), fd.as_slice()) < 1e-4);
    }
}

#[test]
fn frame_ce_gradient_matches_central_differences() {
    let out = random_matrix(7, 5, 11);
    let labels = vec![0, 4, 2, 2, 1, 3, 0];
    let f = |o: &Matrix| frame_ce_from_outputs(o, &labels).unwrap().mean_log_likelihood * labels.len() as f64;
    let g = frame_ce_from_outputs(&out, &labels).unwrap().activation_grad;
    let fd = fd_matrix(f, &out, 1e-5);
    assert!(rel_err(g.as_slice(), fd.as_slice()) < 1e-5);
}

#[test]
fn mpe_gradient_rows_sum_to_zero() {
    let t = tiny(5, 10, Activation::Sigmoid);
    for ex in &t.examples {
        let out = random_matrix(ex.utterance.num_frames(), t.world.model.num_states(), 17);
        let g = mpe_from_outputs(&ex.lattice, &ex.arc_accuracy, ex.reference_length(), &out, t.kappa).unwrap().activation_grad;
        for row in g.row_iter() {
            assert!(row.sum().abs() < 1e-12);
        }
    }
}

#[test]
fn two_phone_beam_two_gives_reference_and_best_competitor() {
    let world = WorldModel::new(1, 1, 3, vec![vec![0.5, 0.5], vec![0.5, 0.5]], 1.0);
    let segments = vec![Segment { phone: 0, t0: 0, t1: 2 }, Segment { phone: 1, t0: 2, t1: 4 }];
    let u = Utterance { frames: Matrix::zeros(4, 1), labels: vec![0, 0, 1, 1], phones: vec![0, 1], segments: segments.clone() };
    // Frames favour phone 1 throughout, so the best non-reference sequence is "1".
    let scores = Matrix::from_row_slice(4, 2, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    let lat = build_lattice(&world, &u, &scores, 2).unwrap();
    let paths = lat.enumerate_paths(10).unwrap();
    assert_eq!(paths.len(), 2);
    assert!(lat.contains_path(&segments));
    let phones: Vec<Vec<usize>> = paths.iter().map(|p| p.iter().map(|&a| lat.arcs()[a].phone).collect()).collect();
    let best = nbest_sequences(&world, &scores, 2).unwrap();
    let competitor = best.iter().map(|h| h.phones()).find(|p| *p != vec![0, 1]).unwrap();
    assert!(phones.contains(&vec![0, 1]));
    assert!(phones.contains(&competitor));
}

#[test]
fn confident_correct_outputs_are_learnable_targets() {
    let t = tiny(9, 12, Activation::Sigmoid);
    for ex in &t.examples {
        let mut out = Matrix::zeros(ex.utterance.num_frames(), t.world.model.num_states());
        for (r, &l) in ex.utterance.labels.iter().enumerate() {
            out[(r, l)] = 200.0;
        }
        let mpe = mpe_from_outputs(&ex.lattice, &ex.arc_accuracy, ex.reference_length(), &out, t.kappa).unwrap();
        assert!(mpe.criterion > 0.999, "{}", mpe.criterion);
        let hyp = viterbi_from_outputs(&t.world.model, &out, t.kappa).unwrap().unwrap();
        assert_eq!(hyp.phones(), ex.utterance.phones);
        let acc = arc_accuracies(&ex.lattice, &ex.utterance.segments);
        assert!(acc.iter().all(|&a| (-1.0..=1.0).contains(&a)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mpe_is_invariant_to_per_frame_shifts(seed in 0u64..1000, shift in -5.0f64..5.0) {
        let t = tiny(seed % 8, 8, Activation::Sigmoid);
        let ex = &t.examples[(seed as usize) % t.examples.len()];
        let out = random_matrix(ex.utterance.num_frames(), t.world.model.num_states(), seed);
        let mut shifted = out.clone();
        for (r, mut row) in shifted.row_iter_mut().enumerate() {
            row.add_scalar_mut(shift * (r as f64 + 1.0));
        }
        let a = mpe_from_outputs(&ex.lattice, &ex.arc_accuracy, ex.reference_length(), &out, t.kappa).unwrap();
        let b = mpe_from_outputs(&ex.lattice, &ex.arc_accuracy, ex.reference_length(), &shifted, t.kappa).unwrap();
        prop_assert!((a.criterion - b.criterion).abs() < 1e-9);
    }

    #[test]
    fn state_posteriors_are_distributions(seed in 0u64..1000) {
        let t = tiny(seed % 8, 8, Activation::Relu);
        let ex = &t.examples[(seed as usize) % t.examples.len()];
        let out = random_matrix(ex.utterance.num_frames(), t.world.model.num_states(), seed);
        let fb = forward_backward(&ex.lattice, &out, t.kappa).unwrap();
        for row in fb.gamma.row_iter() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&g| g >= 0.0));
        }
    }
}
