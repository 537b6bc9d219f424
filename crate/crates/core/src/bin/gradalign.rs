use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gradalign::baselines::SelectorKind;
use gradalign::error::{Error, Result};
use gradalign::harness::{
    ablate_metric, ablate_sample_size, export_metrics, read_metrics, Checkpoint, ExperimentConfig,
    MetricRow, Runner,
};

#[derive(Parser)]
#[command(
    name = "gradalign",
    version,
    about = "GRPO with gradient-aligned data selection on linear-softmax policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML experiment file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override such as `selection.k_v=64`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    steps: Option<usize>,
}

impl ConfigArgs {
    fn load(&self, extra: Vec<String>) -> Result<ExperimentConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(steps) = self.steps {
            overrides.push(format!("experiment.total_steps={steps}"));
        }
        overrides.extend(extra);
        match &self.config {
            Some(path) => ExperimentConfig::load(path, &overrides),
            None => ExperimentConfig::from_toml_str("", &overrides),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one policy with one selector.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        selector: Option<SelectorKind>,
        /// Metrics file to write.
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
        /// Checkpoint file, written every `--checkpoint-every` steps.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long, conflicts_with = "config")]
        resume: Option<PathBuf>,
    },
    /// Run several selectors over several seeds into one metrics file.
    Compare {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "gradalign,random,accgreedy"
        )]
        selectors: Vec<SelectorKind>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
    },
    /// Score stability as the validation sample size grows.
    AblateKv {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "8,32,128")]
        k_values: Vec<usize>,
        /// Two seeds for the independent scoring passes.
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Optional JSON output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired cosine / inner-product runs.
    AblateMetric {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
        /// Optional JSON with per-class score distributions.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Summarize metrics files.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn summarize(label: &str, rows: &[MetricRow]) {
    let mut keys: Vec<(String, u64)> = rows
        .iter()
        .map(|r| (r.selector.to_string(), r.seed))
        .collect();
    keys.dedup();
    keys.sort();
    keys.dedup();
    println!("{label}");
    println!(
        "  {:<11} {:>6} {:>8} {:>8} {:>10} {:>8}",
        "selector", "seed", "val", "test", "corrupted", "target"
    );
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    for (selector, seed) in keys {
        let mine: Vec<&MetricRow> = rows
            .iter()
            .filter(|r| r.selector.to_string() == selector && r.seed == seed)
            .collect();
        let last = mine.iter().rev().find(|r| r.val_acc.is_some());
        let avg = |f: fn(&MetricRow) -> Option<f64>| {
            let v: Vec<f64> = mine.iter().filter_map(|r| f(r)).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        println!(
            "  {:<11} {:>6} {:>8} {:>8} {:>10} {:>8}",
            selector,
            seed,
            fmt(last.and_then(|r| r.val_acc)),
            fmt(last.and_then(|r| r.test_acc)),
            fmt(avg(|r| r.corrupted_ratio)),
            fmt(avg(|r| r.target_ratio)),
        );
    }
}

fn run_one(runner: &mut Runner, out: &Path, checkpoint: Option<&Path>, every: usize) -> Result<()> {
    let total = runner.config().experiment.total_steps;
    let every = every.max(1);
    while runner.step() < total {
        let next = (runner.step() / every + 1) * every;
        if let Err(e) = runner.advance_to(next) {
            export_metrics(out, &[runner.metrics()])?;
            return Err(e);
        }
        if let Some(path) = checkpoint {
            runner.checkpoint().save(path)?;
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            selector,
            out,
            checkpoint,
            checkpoint_every,
            resume,
        } => {
            let mut runner = match resume {
                Some(path) => {
                    let cp = Checkpoint::load(&path)?;
                    if cp.config.experiment.seed != seed {
                        return Err(Error::Config(format!(
                            "checkpoint was written with seed {}, not {seed}",
                            cp.config.experiment.seed
                        )));
                    }
                    Runner::resume(cp)?
                }
                None => {
                    let mut extra = vec![format!("experiment.seed={seed}")];
                    if let Some(s) = selector {
                        extra.push(format!("experiment.selector=\"{s}\""));
                    }
                    Runner::new(config.load(extra)?)?
                }
            };
            run_one(&mut runner, &out, checkpoint.as_deref(), checkpoint_every)?;
            let metrics = runner.finish()?;
            export_metrics(&out, &[&metrics])?;
            summarize(&out.display().to_string(), &metrics.rows());
        }
        Command::Compare {
            config,
            selectors,
            seeds,
            out,
        } => {
            let cfg = config.load(Vec::new())?;
            let runs = gradalign::harness::compare(&cfg, &selectors, &seeds)?;
            export_metrics(&out, &runs.iter().collect::<Vec<_>>())?;
            let rows: Vec<MetricRow> = runs.iter().flat_map(|m| m.rows()).collect();
            summarize(&out.display().to_string(), &rows);
        }
        Command::AblateKv {
            config,
            k_values,
            seeds,
            seed,
            out,
        } => {
            let extra = seed
                .map(|s| vec![format!("experiment.seed={s}")])
                .unwrap_or_default();
            let cfg = config.load(extra)?;
            let [a, b] = seeds[..] else {
                return Err(Error::Config(format!(
                    "--seeds takes exactly two values, got {}",
                    seeds.len()
                )));
            };
            let points = ablate_sample_size(&cfg, &k_values, (a, b))?;
            println!("{:>6} {:>12}", "k_v", "pearson");
            for p in &points {
                let r = p
                    .correlation
                    .map_or("undefined".to_string(), |r| format!("{r:.4}"));
                println!("{:>6} {:>12}", p.k_v, r);
            }
            if let Some(path) = out {
                write_json(&path, &points)?;
            }
        }
        Command::AblateMetric {
            config,
            seed,
            out,
            scores,
        } => {
            let cfg = config.load(vec![format!("experiment.seed={seed}")])?;
            let arms = ablate_metric(&cfg)?;
            for arm in &arms {
                let sep = arm
                    .separation
                    .map_or("undefined".to_string(), |s| format!("{s:.4}"));
                println!(
                    "{:<14} corrupted ratio {:.4}  separation {sep}",
                    arm.metric.as_str(),
                    arm.metrics.mean_corrupted_ratio().unwrap_or(f64::NAN)
                );
            }
            export_metrics(&out, &arms.iter().map(|a| &a.metrics).collect::<Vec<_>>())?;
            if let Some(path) = scores {
                write_json(
                    &path,
                    &arms
                        .iter()
                        .map(|a| (a.metric, &a.scores))
                        .collect::<Vec<_>>(),
                )?;
            }
        }
        Command::Report { files } => {
            for f in files {
                summarize(&f.display().to_string(), &read_metrics(&f)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
