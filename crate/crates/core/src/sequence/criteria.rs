//! Lattice forward-backward and the criteria built on it: MPE expected phone
//! accuracy, the MMI log-posterior gradient, and frame cross-entropy.
//!
//! Arc score = `κ · Σ_t outputs[t, state_t] + prior`. All recursions run in
//! the log domain. Activation gradients use the ascent convention: they point
//! toward larger criterion values.

use crate::error::{Error, Result};
use crate::network::{Matrix, NetworkSpec};
use crate::param::ParameterVector;
use crate::sequence::lattice::{arc_accuracies, Lattice};
use crate::sequence::world::Utterance;

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// State and arc occupancies of one lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorField {
    /// `[T × states]` state posteriors; each row sums to 1.
    pub gamma: Matrix,
    pub arc_occupancy: Vec<f64>,
    pub arc_scores: Vec<f64>,
    pub log_alpha: Vec<f64>,
    pub log_beta: Vec<f64>,
    pub log_total: f64,
}

pub fn arc_scores(lattice: &Lattice, outputs: &Matrix, kappa: f64) -> Result<Vec<f64>> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Shape(format!("acoustic scale must be positive, got {kappa}")));
    }
    if outputs.nrows() != lattice.num_frames() {
        return Err(Error::Shape(format!("{} frames of scores for a {}-frame lattice", outputs.nrows(), lattice.num_frames())));
    }
    let mut scores = Vec::with_capacity(lattice.arcs().len());
    for a in lattice.arcs() {
        let mut s = 0.0;
        for (o, &state) in a.states.iter().enumerate() {
            if state >= outputs.ncols() {
                return Err(Error::Shape(format!("arc state {state} outside {} outputs", outputs.ncols())));
            }
            s += outputs[(a.t0 + o, state)];
        }
        let s = kappa * s + a.prior;
        if !s.is_finite() {
            return Err(Error::NonFinite("lattice arc scores"));
        }
        scores.push(s);
    }
    Ok(scores)
}

pub fn forward_backward(lattice: &Lattice, outputs: &Matrix, kappa: f64) -> Result<PosteriorField> {
    let scores = arc_scores(lattice, outputs, kappa)?;
    let n = lattice.num_nodes();
    let arcs = lattice.arcs();
    let mut alpha = vec![f64::NEG_INFINITY; n];
    alpha[lattice.source()] = 0.0;
    for &v in lattice.topo_order() {
        for &a in lattice.incoming(v) {
            alpha[v] = log_add(alpha[v], alpha[arcs[a].start] + scores[a]);
        }
    }
    let mut beta = vec![f64::NEG_INFINITY; n];
    beta[lattice.sink()] = 0.0;
    for &v in lattice.topo_order().iter().rev() {
        for &a in lattice.outgoing(v) {
            beta[v] = log_add(beta[v], scores[a] + beta[arcs[a].end]);
        }
    }
    let total = alpha[lattice.sink()];
    if !total.is_finite() {
        return Err(Error::NonFinite("lattice total score"));
    }
    let occupancy: Vec<f64> =
        arcs.iter().zip(&scores).map(|(a, s)| (alpha[a.start] + s + beta[a.end] - total).exp()).collect();
    let mut gamma = Matrix::zeros(outputs.nrows(), outputs.ncols());
    for (a, &occ) in arcs.iter().zip(&occupancy) {
        for (o, &state) in a.states.iter().enumerate() {
            gamma[(a.t0 + o, state)] += occ;
        }
    }
    Ok(PosteriorField { gamma, arc_occupancy: occupancy, arc_scores: scores, log_alpha: alpha, log_beta: beta, log_total: total })
}

/// Per-arc accuracies plus the posterior-weighted lattice average.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalLoss {
    pub arc_accuracy: Vec<f64>,
    /// Expected accuracy of paths through each arc.
    pub arc_expected_accuracy: Vec<f64>,
    pub average: f64,
}

/// One utterance with its frozen lattice and per-arc accuracies.
#[derive(Debug, Clone)]
pub struct SequenceExample {
    pub utterance: Utterance,
    pub lattice: Lattice,
    pub arc_accuracy: Vec<f64>,
}

impl SequenceExample {
    pub fn new(utterance: Utterance, lattice: Lattice) -> Self {
        let arc_accuracy = arc_accuracies(&lattice, &utterance.segments);
        Self { utterance, lattice, arc_accuracy }
    }

    pub fn reference_length(&self) -> usize {
        self.utterance.segments.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpeOutput {
    /// Expected phone accuracy divided by the reference length.
    pub criterion: f64,
    pub activation_grad: Matrix,
    pub posteriors: PosteriorField,
    pub local_loss: LocalLoss,
}

/// MPE criterion and its gradient w.r.t. the output activations:
/// `κ · Σ_q γ_q (c(q) − c_avg)` accumulated over the frames and states of each
/// arc `q`, divided by the reference length.
pub fn mpe_from_outputs(lattice: &Lattice, arc_accuracy: &[f64], reference_length: usize, outputs: &Matrix, kappa: f64) -> Result<MpeOutput> {
    if arc_accuracy.len() != lattice.arcs().len() {
        return Err(Error::Shape("one accuracy per arc required".into()));
    }
    let post = forward_backward(lattice, outputs, kappa)?;
    let arcs = lattice.arcs();
    let n = lattice.num_nodes();
    // expected accumulated accuracy of partial paths
    let mut acc_fwd = vec![0.0; n];
    for &v in lattice.topo_order() {
        if v == lattice.source() {
            continue;
        }
        let mut s = 0.0;
        for &a in lattice.incoming(v) {
            let w = (post.log_alpha[arcs[a].start] + post.arc_scores[a] - post.log_alpha[v]).exp();
            s += w * (acc_fwd[arcs[a].start] + arc_accuracy[a]);
        }
        acc_fwd[v] = s;
    }
    let mut acc_bwd = vec![0.0; n];
    for &v in lattice.topo_order().iter().rev() {
        if v == lattice.sink() {
            continue;
        }
        let mut s = 0.0;
        for &a in lattice.outgoing(v) {
            let w = (post.arc_scores[a] + post.log_beta[arcs[a].end] - post.log_beta[v]).exp();
            s += w * (arc_accuracy[a] + acc_bwd[arcs[a].end]);
        }
        acc_bwd[v] = s;
    }
    let average = acc_fwd[lattice.sink()];
    let expected: Vec<f64> = arcs.iter().zip(arc_accuracy).map(|(a, &acc)| acc_fwd[a.start] + acc + acc_bwd[a.end]).collect();

    let norm = reference_length.max(1) as f64;
    let mut grad = Matrix::zeros(outputs.nrows(), outputs.ncols());
    for ((a, &occ), &c) in arcs.iter().zip(&post.arc_occupancy).zip(&expected) {
        let g = kappa * occ * (c - average) / norm;
        for (o, &state) in a.states.iter().enumerate() {
            grad[(a.t0 + o, state)] += g;
        }
    }
    Ok(MpeOutput {
        criterion: average / norm,
        activation_grad: grad,
        posteriors: post,
        local_loss: LocalLoss { arc_accuracy: arc_accuracy.to_vec(), arc_expected_accuracy: expected, average },
    })
}

pub fn mpe_criterion_and_grad(spec: &NetworkSpec, theta: &ParameterVector, example: &SequenceExample, kappa: f64) -> Result<MpeOutput> {
    let (outputs, _) = spec.forward(theta, &example.utterance.frames)?;
    mpe_from_outputs(&example.lattice, &example.arc_accuracy, example.reference_length(), &outputs, kappa)
}

/// Gradient of the MMI log posterior of the reference state path w.r.t. the
/// output activations: `κ (onehot(reference) − γ)`.
pub fn mmi_activation_grad(posteriors: &PosteriorField, labels: &[usize], kappa: f64) -> Result<Matrix> {
    let gamma = &posteriors.gamma;
    if labels.len() != gamma.nrows() {
        return Err(Error::Shape(format!("{} labels for {} frames", labels.len(), gamma.nrows())));
    }
    let mut g = -gamma * kappa;
    for (t, &l) in labels.iter().enumerate() {
        if l >= g.ncols() {
            return Err(Error::Shape(format!("label {l} outside {} states", g.ncols())));
        }
        g[(t, l)] += kappa;
    }
    Ok(g)
}

/// Row-wise softmax.
pub fn softmax_rows(outputs: &Matrix) -> Matrix {
    let mut p = outputs.clone();
    for mut row in p.row_iter_mut() {
        let m = row.max();
        row.apply(|x| *x = (*x - m).exp());
        let z = row.sum();
        row /= z;
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameCe {
    pub mean_log_likelihood: f64,
    /// `onehot − softmax` per frame: the gradient of the summed (not mean)
    /// log-likelihood.
    pub activation_grad: Matrix,
}

impl FrameCe {
    pub fn loss(&self) -> f64 {
        -self.mean_log_likelihood
    }
}

pub fn frame_ce_from_outputs(outputs: &Matrix, labels: &[usize]) -> Result<FrameCe> {
    if labels.len() != outputs.nrows() || labels.is_empty() {
        return Err(Error::Shape(format!("{} labels for {} frames", labels.len(), outputs.nrows())));
    }
    let p = softmax_rows(outputs);
    let mut ll = 0.0;
    let mut grad = -&p;
    for (t, &l) in labels.iter().enumerate() {
        if l >= outputs.ncols() {
            return Err(Error::Shape(format!("label {l} outside {} states", outputs.ncols())));
        }
        ll += p[(t, l)].ln();
        grad[(t, l)] += 1.0;
    }
    Ok(FrameCe { mean_log_likelihood: ll / labels.len() as f64, activation_grad: grad })
}

pub fn frame_ce_criterion_and_grad(spec: &NetworkSpec, theta: &ParameterVector, utterance: &Utterance) -> Result<FrameCe> {
    let (outputs, _) = spec.forward(theta, &utterance.frames)?;
    frame_ce_from_outputs(&outputs, &utterance.labels)
}

/// Mean over frames of the softmax entropy of the outputs, in nats.
pub fn mean_posterior_entropy(outputs: &Matrix) -> f64 {
    if outputs.nrows() == 0 {
        return 0.0;
    }
    let p = softmax_rows(outputs);
    let total: f64 = p
        .row_iter()
        .map(|row| -row.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>())
        .sum();
    (total / outputs.nrows() as f64).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::lattice::LatticeArc;

    fn arc(start: usize, end: usize, phone: usize, t0: usize, t1: usize, states: Vec<usize>) -> LatticeArc {
        LatticeArc { start, end, phone, t0, t1, states, prior: 0.0 }
    }

    #[test]
    fn single_path_is_certain() {
        let lat = Lattice::new(vec![0, 2, 3], vec![arc(0, 1, 0, 0, 2, vec![0, 1]), arc(1, 2, 1, 2, 3, vec![2])]).unwrap();
        let outputs = Matrix::from_fn(3, 4, |t, s| (t as f64) - (s as f64) * 0.3);
        let post = forward_backward(&lat, &outputs, 0.1).unwrap();
        assert!(post.arc_occupancy.iter().all(|&o| (o - 1.0).abs() < 1e-12));
        assert!((post.gamma[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((post.gamma[(1, 1)] - 1.0).abs() < 1e-12);
        assert!((post.gamma[(2, 2)] - 1.0).abs() < 1e-12);
        let mpe = mpe_from_outputs(&lat, &[1.0, 0.5], 2, &outputs, 0.1).unwrap();
        assert!(mpe.activation_grad.iter().all(|&g| g.abs() < 1e-15));
        assert!((mpe.criterion - 0.75).abs() < 1e-12);
    }

    #[test]
    fn equal_parallel_arcs_split_evenly() {
        let lat = Lattice::new(vec![0, 2], vec![arc(0, 1, 0, 0, 2, vec![0, 0]), arc(0, 1, 1, 0, 2, vec![1, 1])]).unwrap();
        let outputs = Matrix::zeros(2, 2);
        let post = forward_backward(&lat, &outputs, 0.1).unwrap();
        assert!((post.arc_occupancy[0] - 0.5).abs() < 1e-15);
        assert!((post.arc_occupancy[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn symmetric_two_path_mpe() {
        let lat = Lattice::new(vec![0, 2], vec![arc(0, 1, 0, 0, 2, vec![0, 0]), arc(0, 1, 1, 0, 2, vec![1, 1])]).unwrap();
        let outputs = Matrix::zeros(2, 2);
        let mpe = mpe_from_outputs(&lat, &[1.0, 0.0], 1, &outputs, 0.1).unwrap();
        assert!((mpe.criterion - 0.5).abs() < 1e-15);
        // ascent pushes probability toward the accurate arc's state
        assert!(mpe.activation_grad[(0, 0)] > 0.0);
        assert!(mpe.activation_grad[(0, 1)] < 0.0);
    }

    #[test]
    fn bad_inputs_are_errors() {
        let lat = Lattice::new(vec![0, 2], vec![arc(0, 1, 0, 0, 2, vec![0, 0])]).unwrap();
        assert!(forward_backward(&lat, &Matrix::zeros(2, 2), 0.0).is_err());
        assert!(forward_backward(&lat, &Matrix::zeros(3, 2), 0.1).is_err());
        let mut nan = Matrix::zeros(2, 2);
        nan[(0, 0)] = f64::NAN;
        assert!(matches!(forward_backward(&lat, &nan, 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn ce_closed_forms() {
        let ce = frame_ce_from_outputs(&Matrix::zeros(3, 10), &[0, 4, 9]).unwrap();
        assert!((ce.loss() - std::f64::consts::LN_10).abs() < 1e-12);
        let ce = frame_ce_from_outputs(&Matrix::from_element(2, 4, 3.3), &[1, 2]).unwrap();
        for t in 0..2 {
            for s in 0..4 {
                let onehot = if s == [1, 2][t] { 1.0 } else { 0.0 };
                assert!((ce.activation_grad[(t, s)] - (onehot - 0.25)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn entropy_limits() {
        assert!((mean_posterior_entropy(&Matrix::zeros(4, 6000)) - 6000f64.ln()).abs() < 1e-9);
        assert!((mean_posterior_entropy(&Matrix::zeros(4, 10)) - std::f64::consts::LN_10).abs() < 1e-12);
        let mut sharp = Matrix::zeros(3, 10);
        for t in 0..3 {
            sharp[(t, 2)] = 50.0;
        }
        assert!(mean_posterior_entropy(&sharp) < 0.01);
    }
}
