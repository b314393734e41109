//! Training loops: frame-level CE pretraining, SGD with momentum and
//! annealing, and the NG / HF / NGHF second-order updates with step
//! acceptance on the gradient batch.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{CurvatureKind, CurvatureOperator, LinearOperator};
use crate::error::{Error, Result};
use crate::harness::runlog::{RunLog, RunRow};
use crate::network::NetworkSpec;
use crate::param::{GradientVector, ParameterVector};
use crate::sequence::criteria::{frame_ce_from_outputs, mean_posterior_entropy, mpe_from_outputs};
use crate::sequence::decode::viterbi_from_outputs;
use crate::sequence::{sequence_error_rate, SequenceExample, Utterance, WorldModel};
use crate::solver::{cg_solve, compute_ng_direction, compute_nghf_update, CgConfig, CgTrace, CompositeUpdate, SecondRunRhs};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sgd,
    Ng,
    Hf,
    Nghf,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sgd, Method::Ng, Method::Hf, Method::Nghf];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sgd => "sgd",
            Method::Ng => "ng",
            Method::Hf => "hf",
            Method::Nghf => "nghf",
        }
    }

    pub fn is_second_order(self) -> bool {
        self != Method::Sgd
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected sgd, ng, hf or nghf)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub method: Method,
    /// SGD only.
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning rate multiplier applied at each new epoch.
    pub anneal_factor: f64,
    /// Utterances per SGD update; SGD runs `ceil(n / minibatch)` updates per epoch.
    pub minibatch: usize,
    /// Second-order updates per epoch.
    pub updates_per_epoch: usize,
    pub epochs: usize,
    /// Tikhonov damping of the Gauss-Newton system.
    pub damping: f64,
    /// Tikhonov damping of the empirical Fisher system.
    pub fisher_damping: f64,
    pub kappa: f64,
    pub cg_max_iterations: usize,
    pub cg_tolerance: f64,
    /// Fraction of training utterances in each gradient batch (1 = all).
    pub gradient_fraction: f64,
    /// Fraction of training utterances drawn for each CG run.
    pub curvature_fraction: f64,
    pub second_run_rhs: SecondRunRhs,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            method: Method::Nghf,
            learning_rate: 0.03,
            momentum: 0.9,
            anneal_factor: 0.5,
            minibatch: 8,
            updates_per_epoch: 8,
            epochs: 4,
            damping: 3e-3,
            fisher_damping: 1e-2,
            kappa: 0.1,
            cg_max_iterations: 8,
            cg_tolerance: 1e-4,
            gradient_fraction: 0.125,
            curvature_fraction: 0.02,
            second_run_rhs: SecondRunRhs::Gradient,
            seed: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.method == Method::Sgd && !(self.learning_rate > 0.0) {
            return fail("SGD learning_rate must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.updates_per_epoch == 0 || self.minibatch == 0 {
            return fail("updates_per_epoch and minibatch must be ≥ 1".into());
        }
        if !(self.kappa > 0.0) || !(self.anneal_factor > 0.0) {
            return fail("kappa and anneal_factor must be > 0".into());
        }
        if !(self.gradient_fraction > 0.0 && self.gradient_fraction <= 1.0) || !(self.curvature_fraction > 0.0 && self.curvature_fraction <= 1.0) {
            return fail("batch fractions must be in (0, 1]".into());
        }
        self.cg_config(self.damping).validate()?;
        self.cg_config(self.fisher_damping).validate()
    }

    pub fn cg_config(&self, damping: f64) -> CgConfig {
        CgConfig { max_iterations: self.cg_max_iterations, relative_tolerance: self.cg_tolerance, damping }
    }
}

/// Everything a training run needs: the model shape, the decoding world,
/// and frozen train/validation lattices built from the starting model.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub spec: NetworkSpec,
    pub world: WorldModel,
    pub train: Vec<SequenceExample>,
    pub valid: Vec<SequenceExample>,
    pub initial: ParameterVector,
}

/// Mean MPE criterion over `batch` and its θ-gradient.
pub fn mpe_batch(spec: &NetworkSpec, theta: &ParameterVector, examples: &[SequenceExample], batch: &[usize], kappa: f64) -> Result<(f64, GradientVector)> {
    let parts = batch
        .par_iter()
        .map(|&i| {
            let ex = &examples[i];
            let (outputs, trace) = spec.forward(theta, &ex.utterance.frames)?;
            let mpe = mpe_from_outputs(&ex.lattice, &ex.arc_accuracy, ex.reference_length(), &outputs, kappa)?;
            Ok((mpe.criterion, trace.backprop(&mpe.activation_grad)?.values))
        })
        .collect::<Result<Vec<_>>>()?;
    let criterion = parts.iter().map(|(c, _)| c).sum::<f64>() / parts.len().max(1) as f64;
    let grads: Vec<ParameterVector> = parts.into_iter().map(|(_, g)| g).collect();
    Ok((criterion, GradientVector::mean_of(&grads)?))
}

pub fn mpe_value(spec: &NetworkSpec, theta: &ParameterVector, examples: &[SequenceExample], batch: &[usize], kappa: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let values = batch
        .par_iter()
        .map(|&i| {
            let ex = &examples[i];
            let (outputs, _) = spec.forward(theta, &ex.utterance.frames)?;
            Ok(mpe_from_outputs(&ex.lattice, &ex.arc_accuracy, ex.reference_length(), &outputs, kappa)?.criterion)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub train_criterion: f64,
    pub valid_criterion: f64,
    pub valid_ser: f64,
    pub entropy: f64,
}

/// Validation criterion, phone error rate of Viterbi decoding, and mean
/// posterior entropy over validation frames.
pub fn evaluate_validation(set: &TrainingSet, theta: &ParameterVector, kappa: f64) -> Result<(f64, f64, f64)> {
    let per = set
        .valid
        .par_iter()
        .map(|ex| {
            let (outputs, _) = set.spec.forward(theta, &ex.utterance.frames)?;
            let crit = mpe_from_outputs(&ex.lattice, &ex.arc_accuracy, ex.reference_length(), &outputs, kappa)?.criterion;
            let hyp = viterbi_from_outputs(&set.world, &outputs, kappa)?.map(|h| h.phones()).unwrap_or_default();
            let ent = mean_posterior_entropy(&outputs) * outputs.nrows() as f64;
            Ok((crit, hyp, ent, outputs.nrows()))
        })
        .collect::<Result<Vec<_>>>()?;
    if per.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let crit = per.iter().map(|p| p.0).sum::<f64>() / per.len() as f64;
    let hyps: Vec<Vec<usize>> = per.iter().map(|p| p.1.clone()).collect();
    let refs: Vec<Vec<usize>> = set.valid.iter().map(|ex| ex.utterance.phones.clone()).collect();
    let ser = sequence_error_rate(&hyps, &refs)?;
    let frames: usize = per.iter().map(|p| p.3).sum();
    let entropy = per.iter().map(|p| p.2).sum::<f64>() / frames as f64;
    Ok((crit, ser, entropy))
}

pub fn evaluate(set: &TrainingSet, theta: &ParameterVector, kappa: f64) -> Result<Evaluation> {
    let all: Vec<usize> = (0..set.train.len()).collect();
    let train_criterion = mpe_value(&set.spec, theta, &set.train, &all, kappa)?;
    let (valid_criterion, valid_ser, entropy) = evaluate_validation(set, theta, kappa)?;
    Ok(Evaluation { train_criterion, valid_criterion, valid_ser, entropy })
}

#[derive(Debug, Clone, Default)]
pub struct SgdState {
    pub velocity: Option<ParameterVector>,
}

/// `v ← μ v + g`, `θ ← θ + η v` (ascent).
pub fn sgd_step(theta: &ParameterVector, grad: &GradientVector, state: &mut SgdState, learning_rate: f64, momentum: f64) -> Result<ParameterVector> {
    let g = &grad.values;
    theta.check_same_layout(g)?;
    if !g.is_finite() {
        return Err(Error::NonFinite("SGD gradient"));
    }
    let velocity = match state.velocity.take() {
        Some(mut v) if momentum != 0.0 => {
            for (vi, gi) in v.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *vi = momentum * *vi + gi;
            }
            v
        }
        _ => g.clone(),
    };
    let mut next = theta.clone();
    next.add_scaled(learning_rate, &velocity)?;
    state.velocity = Some(velocity);
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub minibatch: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 5, learning_rate: 0.1, momentum: 0.9, minibatch: 4 }
    }
}

/// Frame-level cross-entropy training with minibatch SGD; the gradient is
/// averaged over the frames of each minibatch.
pub fn pretrain_ce(spec: &NetworkSpec, theta: &ParameterVector, utterances: &[Utterance], cfg: &PretrainConfig, seed: u64) -> Result<ParameterVector> {
    if utterances.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if cfg.minibatch == 0 || !(0.0..1.0).contains(&cfg.momentum) {
        return Err(Error::Config("pretrain minibatch must be ≥ 1 and momentum in [0, 1)".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xCE);
    let mut theta = theta.clone();
    let mut state = SgdState::default();
    let mut order: Vec<usize> = (0..utterances.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.minibatch) {
            let parts = chunk
                .par_iter()
                .map(|&i| {
                    let u = &utterances[i];
                    let (outputs, trace) = spec.forward(&theta, &u.frames)?;
                    let ce = frame_ce_from_outputs(&outputs, &u.labels)?;
                    Ok((trace.backprop(&ce.activation_grad)?.values, u.num_frames()))
                })
                .collect::<Result<Vec<_>>>()?;
            let frames: usize = parts.iter().map(|p| p.1).sum();
            let mut g = theta.zeros_like();
            for (p, _) in &parts {
                g.add_scaled(1.0, p)?;
            }
            let g = GradientVector::new(g.scaled(1.0 / frames as f64), chunk.len());
            theta = sgd_step(&theta, &g, &mut state, cfg.learning_rate, cfg.momentum)?;
        }
    }
    if !theta.is_finite() {
        return Err(Error::NonFinite("CE pretraining parameters"));
    }
    Ok(theta)
}

/// A proposed second-order step before acceptance.
#[derive(Debug, Clone)]
pub enum Proposal {
    Simple { direction: ParameterVector, trace: CgTrace },
    Composite(Box<CompositeUpdate>),
}

impl Proposal {
    pub fn direction(&self) -> &ParameterVector {
        match self {
            Proposal::Simple { direction, .. } => direction,
            Proposal::Composite(u) => &u.direction,
        }
    }

    pub fn cg_iterations(&self) -> usize {
        match self {
            Proposal::Simple { trace, .. } => trace.num_iterations(),
            Proposal::Composite(u) => u.total_cg_iterations(),
        }
    }

    pub fn w1(&self) -> Option<f64> {
        match self {
            Proposal::Simple { .. } => None,
            Proposal::Composite(u) => Some(u.w1),
        }
    }

    pub fn phi_decrease(&self) -> f64 {
        match self {
            Proposal::Simple { trace, .. } => -trace.final_phi(),
            Proposal::Composite(u) => u.quadratic_model_decrease,
        }
    }
}

/// Direction for one NG / HF / NGHF update given already-built operators.
/// `damping_scale` multiplies both dampings (used by the retry).
pub fn propose_update(
    method: Method,
    fisher: Option<&dyn LinearOperator>,
    gn: Option<&dyn LinearOperator>,
    grad: &ParameterVector,
    cfg: &OptimizerConfig,
    damping_scale: f64,
    previous: Option<&ParameterVector>,
) -> Result<Proposal> {
    let missing = |what: &str| Error::Config(format!("{method} needs a {what} operator"));
    let ng_cfg = cfg.cg_config(cfg.fisher_damping * damping_scale);
    let gn_cfg = cfg.cg_config(cfg.damping * damping_scale);
    match method {
        Method::Sgd => Err(Error::Config("SGD has no second-order proposal".into())),
        Method::Ng => {
            let (direction, trace) = compute_ng_direction(fisher.ok_or_else(|| missing("Fisher"))?, grad, &ng_cfg)?;
            Ok(Proposal::Simple { direction, trace })
        }
        Method::Hf => {
            let (direction, trace) = cg_solve(gn.ok_or_else(|| missing("Gauss-Newton"))?, grad, &gn_cfg, previous)?;
            Ok(Proposal::Simple { direction, trace })
        }
        Method::Nghf => {
            let f = fisher.ok_or_else(|| missing("Fisher"))?;
            let g = gn.ok_or_else(|| missing("Gauss-Newton"))?;
            let u = compute_nghf_update(f, g, grad, &ng_cfg, &gn_cfg, cfg.second_run_rhs)?;
            Ok(Proposal::Composite(Box::new(u)))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub update: usize,
    pub method: Method,
    pub step_norm: f64,
    pub criterion_before: f64,
    pub criterion_after: f64,
    pub accepted: bool,
    pub retried: bool,
    pub cg_iterations: usize,
    pub w1: Option<f64>,
    pub phi_decrease: Option<f64>,
    /// Wall-clock time spent in CG runs and in the whole update.
    pub cg_seconds: f64,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct SecondOrderState {
    pub previous_update: Option<ParameterVector>,
    rng: ChaCha8Rng,
}

impl SecondOrderState {
    pub fn new(seed: u64) -> Self {
        Self { previous_update: None, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn sample(&mut self, n: usize, fraction: f64) -> Vec<usize> {
        let k = ((n as f64 * fraction).round() as usize).clamp(1, n);
        let mut idx = rand::seq::index::sample(&mut self.rng, n, k).into_vec();
        idx.sort_unstable();
        idx
    }
}

pub struct StepOutcome {
    pub theta: ParameterVector,
    pub proposal: Option<Proposal>,
    pub record: UpdateRecord,
}

/// One NG / HF / NGHF update. The step is kept only if the gradient-batch
/// criterion does not decrease; otherwise both dampings are doubled and the
/// step recomputed once, and if that also fails the update is skipped.
pub fn second_order_step(
    theta: &ParameterVector,
    update: usize,
    set: &TrainingSet,
    cfg: &OptimizerConfig,
    state: &mut SecondOrderState,
) -> Result<StepOutcome> {
    let method = cfg.method;
    if !method.is_second_order() {
        return Err(Error::Config("second_order_step needs ng, hf or nghf".into()));
    }
    let started = Instant::now();
    let n = set.train.len();
    let grad_batch = if cfg.gradient_fraction >= 1.0 { (0..n).collect() } else { state.sample(n, cfg.gradient_fraction) };
    let (before, grad) = mpe_batch(&set.spec, theta, &set.train, &grad_batch, cfg.kappa)?;
    if !before.is_finite() || !grad.values.is_finite() {
        return Err(Error::NumericalAbort { update, reason: "non-finite criterion or gradient".into() });
    }
    let mut record = UpdateRecord {
        update,
        method,
        step_norm: 0.0,
        criterion_before: before,
        criterion_after: before,
        accepted: true,
        retried: false,
        cg_iterations: 0,
        w1: None,
        phi_decrease: None,
        cg_seconds: 0.0,
        seconds: 0.0,
    };
    if grad.values.norm() == 0.0 {
        record.seconds = started.elapsed().as_secs_f64();
        return Ok(StepOutcome { theta: theta.clone(), proposal: None, record });
    }

    let build = |kind, batch: Vec<usize>| CurvatureOperator::build(kind, &set.spec, theta, &set.train, batch, cfg.kappa, 0.0);
    let fisher = match method {
        Method::Ng | Method::Nghf => Some(build(CurvatureKind::EmpiricalFisher, state.sample(n, cfg.curvature_fraction))?),
        _ => None,
    };
    let gn = match method {
        Method::Hf | Method::Nghf => Some(build(CurvatureKind::GaussNewton, state.sample(n, cfg.curvature_fraction))?),
        _ => None,
    };
    let fisher_ref = fisher.as_ref().map(|f| f as &dyn LinearOperator);
    let gn_ref = gn.as_ref().map(|g| g as &dyn LinearOperator);

    let mut last = None;
    for (attempt, scale) in [1.0, 2.0].into_iter().enumerate() {
        let cg_started = Instant::now();
        let proposal = propose_update(method, fisher_ref, gn_ref, &grad.values, cfg, scale, state.previous_update.as_ref())?;
        record.cg_seconds += cg_started.elapsed().as_secs_f64();
        let mut candidate = theta.clone();
        candidate.add_scaled(1.0, proposal.direction())?;
        let after = mpe_value(&set.spec, &candidate, &set.train, &grad_batch, cfg.kappa)?;
        if !after.is_finite() {
            return Err(Error::NumericalAbort { update, reason: "non-finite criterion after step".into() });
        }
        record.retried = attempt > 0;
        record.cg_iterations += proposal.cg_iterations();
        record.w1 = proposal.w1();
        record.phi_decrease = Some(proposal.phi_decrease());
        if after >= before {
            record.step_norm = proposal.direction().norm();
            record.criterion_after = after;
            record.accepted = true;
            state.previous_update = Some(proposal.direction().clone());
            record.seconds = started.elapsed().as_secs_f64();
            return Ok(StepOutcome { theta: candidate, proposal: Some(proposal), record });
        }
        last = Some(proposal);
    }
    record.accepted = false;
    record.step_norm = 0.0;
    record.criterion_after = before;
    record.seconds = started.elapsed().as_secs_f64();
    Ok(StepOutcome { theta: theta.clone(), proposal: last, record })
}

pub struct TrainOutcome {
    pub theta: ParameterVector,
    pub log: RunLog,
    pub records: Vec<UpdateRecord>,
}

fn check_finite(update: usize, e: &Evaluation) -> Result<()> {
    if [e.train_criterion, e.valid_criterion, e.valid_ser, e.entropy].iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalAbort { update, reason: "non-finite criterion".into() })
    }
}

/// Runs `epochs` of the configured method from `set.initial`, logging
/// train/validation metrics after every update.
pub fn train(set: &TrainingSet, cfg: &OptimizerConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if set.train.is_empty() || set.valid.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut theta = set.initial.clone();
    let mut log = RunLog::default();
    let mut records = Vec::new();
    let row = |update: usize, e: &Evaluation, r: &UpdateRecord| RunRow {
        update,
        method: cfg.method.name().to_string(),
        seed: cfg.seed,
        train_criterion: e.train_criterion,
        valid_criterion: e.valid_criterion,
        valid_ser: e.valid_ser,
        entropy: e.entropy,
        step_norm: r.step_norm,
        cg_iterations: r.cg_iterations,
        w1: r.w1,
        phi_decrease: r.phi_decrease,
    };

    if cfg.method == Method::Sgd {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut state = SgdState::default();
        let mut order: Vec<usize> = (0..set.train.len()).collect();
        let mut update = 0;
        for epoch in 0..cfg.epochs {
            let lr = cfg.learning_rate * cfg.anneal_factor.powi(epoch as i32);
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.minibatch) {
                update += 1;
                let sgd_started = Instant::now();
                let (before, grad) = mpe_batch(&set.spec, &theta, &set.train, chunk, cfg.kappa)?;
                if !before.is_finite() {
                    return Err(Error::NumericalAbort { update, reason: "non-finite criterion".into() });
                }
                let next = sgd_step(&theta, &grad, &mut state, lr, cfg.momentum)
                    .map_err(|e| Error::NumericalAbort { update, reason: e.to_string() })?;
                let mut step = next.clone();
                step.add_scaled(-1.0, &theta)?;
                theta = next;
                let e = evaluate(set, &theta, cfg.kappa)?;
                check_finite(update, &e)?;
                let r = UpdateRecord {
                    cg_seconds: 0.0,
                    seconds: sgd_started.elapsed().as_secs_f64(),
                    update,
                    method: Method::Sgd,
                    step_norm: step.norm(),
                    criterion_before: before,
                    criterion_after: e.train_criterion,
                    accepted: true,
                    retried: false,
                    cg_iterations: 0,
                    w1: None,
                    phi_decrease: None,
                };
                log.push(row(update, &e, &r))?;
                records.push(r);
            }
        }
    } else {
        let mut state = SecondOrderState::new(cfg.seed);
        for update in 1..=cfg.epochs * cfg.updates_per_epoch {
            let out = second_order_step(&theta, update, set, cfg, &mut state)?;
            theta = out.theta;
            let e = evaluate(set, &theta, cfg.kappa)?;
            check_finite(update, &e)?;
            log.push(row(update, &e, &out.record))?;
            records.push(out.record);
        }
    }
    Ok(TrainOutcome { theta, log, records })
}

/// Flattened `[T × D]` helper used by examples and tests.
pub fn stack_frames(utterances: &[Utterance]) -> DMatrix<f64> {
    let rows: usize = utterances.iter().map(|u| u.num_frames()).sum();
    let cols = utterances.first().map_or(0, |u| u.frames.ncols());
    let mut m = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for u in utterances {
        m.rows_mut(r, u.num_frames()).copy_from(&u.frames);
        r += u.num_frames();
    }
    m
}
