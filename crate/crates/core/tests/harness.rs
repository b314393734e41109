use std::path::Path;

use nghf::harness::report::{read_plot_csv, read_summary, BASELINE_METHOD, PLOT_METRICS};
use nghf::harness::{run_experiment, run_in_memory, select_learning_rate, sgd_grid, ExperimentConfig, GridPoint, RunLog};
use nghf::optim::Method;

fn small() -> ExperimentConfig {
    ExperimentConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/small.toml")).unwrap()
}

#[test]
fn zero_epochs_of_sgd_reports_the_ce_baseline() {
    let mut cfg = small();
    cfg.experiment.methods = vec![Method::Sgd];
    cfg.experiment.seeds = vec![3];
    cfg.optimizer.set("epochs", toml::Value::Integer(0));
    let result = run_in_memory(&cfg).unwrap();
    let ce = result.summary.iter().find(|r| r.method == BASELINE_METHOD).unwrap();
    let sgd = result.summary.iter().find(|r| r.method == "sgd").unwrap();
    assert_eq!(sgd.updates, 0);
    assert_eq!(
        (sgd.train_criterion, sgd.valid_criterion, sgd.valid_ser, sgd.entropy),
        (ce.train_criterion, ce.valid_criterion, ce.valid_ser, ce.entropy)
    );
}

#[test]
fn seeds_give_distinct_trajectories_and_reruns_are_identical() {
    let cfg = small();
    let a = run_in_memory(&cfg).unwrap();
    let b = run_in_memory(&cfg).unwrap();
    for m in [Method::Sgd, Method::Hf, Method::Nghf] {
        let s1 = a.log(m, 1).unwrap();
        let s2 = a.log(m, 2).unwrap();
        assert_ne!(s1.rows, s2.rows, "{m}");
        assert_eq!(s1, b.log(m, 1).unwrap(), "{m}");
    }
    assert_eq!(a.summary.len(), 2 + 2 * 3);
}

#[test]
fn second_order_methods_spend_the_same_update_budget() {
    let cfg = small();
    let r = run_in_memory(&cfg).unwrap();
    for seed in [1, 2] {
        assert_eq!(r.log(Method::Hf, seed).unwrap().len(), 3);
        assert_eq!(r.log(Method::Nghf, seed).unwrap().len(), 3);
    }
}

#[test]
fn experiment_writes_logs_summary_and_plot_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.experiment.seeds = vec![1];
    run_experiment(&cfg, dir.path()).unwrap();
    for m in ["sgd", "hf", "nghf"] {
        let f = std::fs::File::open(dir.path().join(format!("runlog_{m}_seed1.csv"))).unwrap();
        assert!(!RunLog::read_csv(f).unwrap().is_empty());
    }
    let summary = read_summary(dir.path()).unwrap();
    assert_eq!(summary.len(), 4);
    for metric in PLOT_METRICS {
        let rows = read_plot_csv(&dir.path().join(format!("plot_{metric}.csv"))).unwrap();
        assert!(!rows.is_empty(), "{metric}");
    }
    for f in ["medians.csv", "entropy.csv", "timing.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn grid_selects_the_lowest_error_rate() {
    let mut cfg = small();
    cfg.experiment.seeds = vec![1];
    let points = sgd_grid(&cfg, &[0.01, 0.1]).unwrap();
    assert_eq!(points.len(), 2);
    let best = select_learning_rate(&points).unwrap();
    assert!(points.iter().all(|p| best.valid_ser <= p.valid_ser));
    let tie = [
        GridPoint { learning_rate: 1.0, valid_criterion: 0.4, valid_ser: 0.2 },
        GridPoint { learning_rate: 2.0, valid_criterion: 0.5, valid_ser: 0.2 },
    ];
    assert_eq!(select_learning_rate(&tie).unwrap().learning_rate, 2.0);
}

#[test]
fn nghf_default_budget_improves_on_the_ce_model() {
    let cfg = ExperimentConfig::default();
    let corpus = nghf::harness::generate(&cfg).unwrap();
    let prepared = nghf::harness::prepare(&cfg, &corpus, 1).unwrap();
    let run = nghf::harness::experiment::run_one(&cfg, &prepared, Method::Nghf).unwrap();
    assert_eq!(run.log.len(), 32);
    assert!(run.log.last().unwrap().train_criterion > prepared.baseline.train_criterion);
}
