use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nghf::harness::experiment::{generate, prepare, prepare_from, pretrain, run_one, runlog_path, write_runlog};
use nghf::harness::report::{
    emit_plots_data, entropy_diagnostic_from_logs, format_entropy, format_medians, medians, read_runlogs, read_summary, write_summary, SummaryRow,
    BASELINE_METHOD,
};
use nghf::harness::{run_experiment, ExperimentConfig};
use nghf::optim::Method;
use nghf::param::ParameterVector;
use nghf::{Error, Result};

#[derive(Parser)]
#[command(name = "nghf", version, about = "Second-order sequence training experiments on a synthetic lattice task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides experiment.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus and its train/validation split.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// CE-pretrain one seed and write its checkpoint.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sequence-train one method for one seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: String,
    },
    /// Run every configured method × seed and write logs and summaries.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Restrict to one seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to one method.
        #[arg(long)]
        method: Option<String>,
    },
    /// Rebuild summaries and plot tables from run logs in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let out = common.out.clone().unwrap_or_else(|| cfg.experiment.out_dir.clone());
    fs::create_dir_all(&out)?;
    Ok((cfg, out))
}

fn first_seed(cfg: &ExperimentConfig, seed: Option<u64>) -> u64 {
    seed.unwrap_or(cfg.experiment.seeds[0])
}

fn checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("ce_seed{seed}.ckpt"))
}

fn cmd_generate(common: &Common) -> Result<()> {
    let (cfg, out) = load(common)?;
    let corpus = generate(&cfg)?;
    let mut w = BufWriter::new(File::create(out.join("corpus.csv"))?);
    write!(w, "utterance,split,frame,state,phone")?;
    for j in 0..cfg.world.input_dim {
        write!(w, ",x{j}")?;
    }
    writeln!(w)?;
    for (i, u) in corpus.utterances.iter().enumerate() {
        let split = if corpus.valid.binary_search(&i).is_ok() { "valid" } else { "train" };
        for t in 0..u.num_frames() {
            write!(w, "{i},{split},{t},{},{}", u.labels[t], corpus.world.model.phone_of_state(u.labels[t]))?;
            for x in u.frames.row(t).iter() {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    println!("{} utterances ({} train, {} valid) -> {}", corpus.utterances.len(), corpus.train.len(), corpus.valid.len(), out.display());
    Ok(())
}

fn cmd_pretrain(common: &Common, seed: Option<u64>) -> Result<()> {
    let (cfg, out) = load(common)?;
    let seed = first_seed(&cfg, seed);
    let corpus = generate(&cfg)?;
    let theta = pretrain(&cfg, &corpus, seed)?;
    let path = checkpoint_path(&out, seed);
    theta.write_checkpoint(BufWriter::new(File::create(&path)?))?;
    let prepared = prepare_from(&cfg, &corpus, seed, theta)?;
    let b = prepared.baseline;
    println!(
        "seed {seed}: train {:.4} valid {:.4} ser {:.4} entropy {:.4} -> {}",
        b.train_criterion,
        b.valid_criterion,
        b.valid_ser,
        b.entropy,
        path.display()
    );
    Ok(())
}

fn cmd_train(common: &Common, seed: Option<u64>, method: &str) -> Result<()> {
    let (cfg, out) = load(common)?;
    let method: Method = method.parse()?;
    let seed = first_seed(&cfg, seed);
    let corpus = generate(&cfg)?;
    let ckpt = checkpoint_path(&out, seed);
    let prepared = if ckpt.exists() {
        let theta = ParameterVector::read_checkpoint(File::open(&ckpt)?)?;
        prepare_from(&cfg, &corpus, seed, theta)?
    } else {
        prepare(&cfg, &corpus, seed)?
    };
    let run = run_one(&cfg, &prepared, method)?;
    let path = runlog_path(&out, method, seed);
    write_runlog(&run.log, &path)?;
    run.theta.write_checkpoint(BufWriter::new(File::create(out.join(format!("{method}_seed{seed}.ckpt")))?))?;
    let b = prepared.baseline;
    match run.log.last() {
        Some(r) => println!(
            "{method} seed {seed}: valid {:.4} -> {:.4}, ser {:.4} -> {:.4} ({} updates) -> {}",
            b.valid_criterion,
            r.valid_criterion,
            b.valid_ser,
            r.valid_ser,
            run.log.len(),
            path.display()
        ),
        None => println!("{method} seed {seed}: no updates"),
    }
    Ok(())
}

fn cmd_compare(common: &Common, seed: Option<u64>, method: Option<&str>) -> Result<()> {
    let (mut cfg, out) = load(common)?;
    if let Some(s) = seed {
        cfg.experiment.seeds = vec![s];
    }
    if let Some(m) = method {
        cfg.experiment.methods = vec![m.parse()?];
    }
    let result = run_experiment(&cfg, &out)?;
    for r in &result.runs {
        if let Err(e) = &r.outcome {
            eprintln!("{} seed {} failed: {e}", r.method, r.seed);
        }
    }
    print!("{}", format_medians(&medians(&result.summary)));
    print!("{}", format_entropy(&result.entropy));
    println!("results -> {}", out.display());
    Ok(())
}

fn cmd_report(out: &Path, config: Option<&Path>) -> Result<()> {
    if let Some(p) = config {
        ExperimentConfig::load(p)?;
    }
    let logs = read_runlogs(out)?;
    if logs.is_empty() {
        return Err(Error::Config(format!("no run logs in {}", out.display())));
    }
    let previous = read_summary(out).unwrap_or_default();
    let baselines: Vec<(u64, _)> = previous.iter().filter(|r| r.method == BASELINE_METHOD).map(|r| (r.seed, r.evaluation())).collect();
    let mut summary: Vec<SummaryRow> = previous.into_iter().filter(|r| r.method == BASELINE_METHOD).collect();
    summary.extend(logs.iter().filter_map(|l| l.last().map(|r| SummaryRow::from_last(r, l.len()))));
    let refs: Vec<_> = logs.iter().collect();
    let entropy = entropy_diagnostic_from_logs(&baselines, &refs);
    write_summary(&summary, &entropy, out)?;
    emit_plots_data(&logs, out)?;
    print!("{}", format_medians(&medians(&summary)));
    print!("{}", format_entropy(&entropy));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { common } => cmd_generate(common),
        Command::Pretrain { common, seed } => cmd_pretrain(common, *seed),
        Command::Train { common, seed, method } => cmd_train(common, *seed, method),
        Command::Compare { common, seed, method } => cmd_compare(common, *seed, method.as_deref()),
        Command::Report { out, config } => cmd_report(out, config.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::World(_) => 2,
                Error::NumericalAbort { .. } | Error::NonFinite(_) | Error::Indefinite { .. } => 3,
                _ => 1,
            })
        }
    }
}
