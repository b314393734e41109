use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::report::{entropy_diagnostic, median, write_summary, EntropyRow, SummaryRow};
use crate::harness::runlog::RunLog;
use crate::network::NetworkSpec;
use crate::optim::{evaluate, pretrain_ce, train, Evaluation, Method, TrainingSet, UpdateRecord};
use crate::param::{init_parameters, InitScheme, ParameterVector};
use crate::sequence::{arc_accuracies, build_lattice, validation_indices, SequenceExample, Utterance, World};

/// Mean softmax entropy (nats) of the network's outputs over `frames`.
pub fn mean_posterior_entropy(spec: &NetworkSpec, theta: &ParameterVector, frames: &crate::network::Matrix) -> Result<f64> {
    let (outputs, _) = spec.forward(theta, frames)?;
    Ok(crate::sequence::mean_posterior_entropy(&outputs))
}

/// The generated corpus with its train/validation split.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub world: World,
    pub utterances: Vec<Utterance>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Corpus> {
    let world = World::new(cfg.world.clone())?;
    let utterances = world.generate_corpus();
    let valid = validation_indices(utterances.len(), cfg.world.seed, cfg.experiment.validation_fraction);
    let train: Vec<usize> = (0..utterances.len()).filter(|i| valid.binary_search(i).is_err()).collect();
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config("corpus too small for a train/validation split".into()));
    }
    Ok(Corpus { world, utterances, train, valid })
}

/// CE-pretrained model for one seed.
pub fn pretrain(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64) -> Result<ParameterVector> {
    let spec = cfg.network_spec()?;
    let theta0 = init_parameters(spec.layout(), seed, InitScheme::UniformFanIn);
    let train: Vec<Utterance> = corpus.train.iter().map(|&i| corpus.utterances[i].clone()).collect();
    pretrain_ce(&spec, &theta0, &train, &cfg.pretrain, seed)
}

/// Lattices are generated once from the starting model and then frozen.
pub fn build_examples(corpus: &Corpus, spec: &NetworkSpec, theta: &ParameterVector, indices: &[usize], kappa: f64, beam: usize) -> Result<Vec<SequenceExample>> {
    indices
        .par_iter()
        .map(|&i| {
            let u = &corpus.utterances[i];
            let (outputs, _) = spec.forward(theta, &u.frames)?;
            let lattice = build_lattice(&corpus.world.model, u, &(outputs * kappa), beam)?;
            let ex = SequenceExample::new(u.clone(), lattice);
            debug_assert_eq!(ex.arc_accuracy, arc_accuracies(&ex.lattice, &u.segments));
            Ok(ex)
        })
        .collect()
}

/// Everything shared by the methods of one seed.
#[derive(Debug, Clone)]
pub struct PreparedSeed {
    pub seed: u64,
    pub set: TrainingSet,
    pub baseline: Evaluation,
}

pub fn prepare_from(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64, initial: ParameterVector) -> Result<PreparedSeed> {
    let spec = cfg.network_spec()?;
    let kappa = cfg.kappa()?;
    let beam = cfg.experiment.lattice_beam;
    let train = build_examples(corpus, &spec, &initial, &corpus.train, kappa, beam)?;
    let valid = build_examples(corpus, &spec, &initial, &corpus.valid, kappa, beam)?;
    let set = TrainingSet { spec, world: corpus.world.model.clone(), train, valid, initial };
    let baseline = evaluate(&set, &set.initial, kappa)?;
    Ok(PreparedSeed { seed, set, baseline })
}

pub fn prepare(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64) -> Result<PreparedSeed> {
    let initial = pretrain(cfg, corpus, seed)?;
    prepare_from(cfg, corpus, seed, initial)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub outcome: std::result::Result<RunSuccess, String>,
}

#[derive(Debug, Clone)]
pub struct RunSuccess {
    pub log: RunLog,
    pub records: Vec<UpdateRecord>,
    pub theta: ParameterVector,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub baselines: Vec<(u64, Evaluation)>,
    pub runs: Vec<RunResult>,
    pub summary: Vec<SummaryRow>,
    pub entropy: Vec<EntropyRow>,
}

impl ExperimentResult {
    pub fn log(&self, method: Method, seed: u64) -> Option<&RunLog> {
        self.runs
            .iter()
            .find(|r| r.method == method && r.seed == seed)
            .and_then(|r| r.outcome.as_ref().ok())
            .map(|s| &s.log)
    }

    pub fn logs(&self) -> Vec<&RunLog> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().ok()).map(|s| &s.log).collect()
    }
}

pub fn run_one(cfg: &ExperimentConfig, prepared: &PreparedSeed, method: Method) -> Result<RunSuccess> {
    let opt = cfg.optimizer_for(method, prepared.seed)?;
    let out = train(&prepared.set, &opt)?;
    Ok(RunSuccess { log: out.log, records: out.records, theta: out.theta })
}

/// Runs every method × seed in memory. Seeds are prepared (pretraining and
/// lattices) once and shared by all methods.
pub fn run_in_memory(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let corpus = generate(cfg)?;
    let prepared = cfg.experiment.seeds.par_iter().map(|&s| prepare(cfg, &corpus, s)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, Method)> = (0..prepared.len()).flat_map(|i| cfg.experiment.methods.iter().map(move |&m| (i, m))).collect();
    let runs: Vec<RunResult> = jobs
        .par_iter()
        .map(|&(i, method)| {
            let p = &prepared[i];
            RunResult { method, seed: p.seed, outcome: run_one(cfg, p, method).map_err(|e| e.to_string()) }
        })
        .collect();
    let baselines: Vec<(u64, Evaluation)> = prepared.iter().map(|p| (p.seed, p.baseline)).collect();
    let summary = SummaryRow::collect(&baselines, &runs);
    let entropy = entropy_diagnostic(&baselines, &runs);
    Ok(ExperimentResult { baselines, runs, summary, entropy })
}

/// One SGD learning rate and its median final validation scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub valid_criterion: f64,
    pub valid_ser: f64,
}

/// Runs SGD at each learning rate on every configured seed. Seeds are
/// prepared once and shared across rates.
pub fn sgd_grid(cfg: &ExperimentConfig, rates: &[f64]) -> Result<Vec<GridPoint>> {
    cfg.validate()?;
    if rates.is_empty() || rates.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Config("grid learning rates must be non-empty and positive".into()));
    }
    let corpus = generate(cfg)?;
    let prepared = cfg.experiment.seeds.par_iter().map(|&s| prepare(cfg, &corpus, s)).collect::<Result<Vec<_>>>()?;
    rates
        .iter()
        .map(|&lr| {
            let finals = prepared
                .par_iter()
                .map(|p| {
                    let mut opt = cfg.optimizer_for(Method::Sgd, p.seed)?;
                    opt.learning_rate = lr;
                    let out = train(&p.set, &opt)?;
                    Ok(out.log.last().map_or((p.baseline.valid_criterion, p.baseline.valid_ser), |r| (r.valid_criterion, r.valid_ser)))
                })
                .collect::<Result<Vec<_>>>()?;
            let crit: Vec<f64> = finals.iter().map(|f| f.0).collect();
            let ser: Vec<f64> = finals.iter().map(|f| f.1).collect();
            Ok(GridPoint { learning_rate: lr, valid_criterion: median(&crit).unwrap_or(f64::NAN), valid_ser: median(&ser).unwrap_or(f64::NAN) })
        })
        .collect()
}

/// Lowest validation error rate; ties go to the higher criterion.
pub fn select_learning_rate(points: &[GridPoint]) -> Option<GridPoint> {
    points.iter().copied().min_by(|a, b| a.valid_ser.total_cmp(&b.valid_ser).then(b.valid_criterion.total_cmp(&a.valid_criterion)))
}

pub fn runlog_path(dir: &Path, method: Method, seed: u64) -> PathBuf {
    dir.join(format!("runlog_{method}_seed{seed}.csv"))
}

pub fn write_runlog(log: &RunLog, path: &Path) -> Result<()> {
    log.write_csv(BufWriter::new(File::create(path)?))
}

/// Runs the experiment and writes per-run logs, the summary, the entropy
/// diagnostic and the plot tables under `out_dir`. Fails only if every run
/// failed.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentResult> {
    let result = run_in_memory(cfg)?;
    fs::create_dir_all(out_dir)?;
    for r in &result.runs {
        if let Ok(s) = &r.outcome {
            write_runlog(&s.log, &runlog_path(out_dir, r.method, r.seed))?;
        }
    }
    write_summary(&result.summary, &result.entropy, out_dir)?;
    let logs: Vec<RunLog> = result.logs().into_iter().cloned().collect();
    if !logs.is_empty() {
        crate::harness::report::emit_plots_data(&logs, out_dir)?;
    }
    let timing = crate::harness::report::timing_rows(&result.runs);
    crate::harness::report::write_timing(&timing, out_dir)?;
    if result.runs.iter().all(|r| r.outcome.is_err()) {
        let first = result.runs.first().and_then(|r| r.outcome.as_ref().err()).cloned().unwrap_or_default();
        return Err(Error::AllRunsFailed(first));
    }
    Ok(result)
}
