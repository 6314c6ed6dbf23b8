use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use charrnet::config::RunConfig;
use charrnet::dataset::{Dataset, DatasetRecord};
use charrnet::training::{self, ModelKind};
use charrnet::verify::{self, ActionKind, Fig2Config, LayerKind, SuiteReport};
use charrnet::{checkpoint, io, Error};

const SEED_ENV: &str = "CHARRNET_SEED";

#[derive(Parser)]
#[command(name = "charrnet", version, about = "Channel-robust RF fingerprinting toolkit")]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fingerprint dataset directory.
    GenDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model on the train split of a dataset.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-epoch loss CSV; defaults to `<out>.loss.csv`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Evaluate a checkpoint and write per-tag accuracy.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a property suite.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV for the fig2 suite; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Charrnet,
    Baseline,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Charrnet => ModelKind::Charrnet,
            ModelArg::Baseline => ModelKind::Baseline,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Equivariance,
    Invariance,
    Gradients,
    Fig2,
}

enum Failure {
    Property(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Format(_) => 2,
        Error::Config(_) | Error::Size(_) | Error::Argument(_) => 3,
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Error> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            RunConfig::from_json(&bytes).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

/// `CHARRNET_SEED` wins over `--seed`.
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, Error> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(flag),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let workers = cli.workers;
    match cli.command {
        Command::GenDataset { config, out, seed } => {
            let cfg = load_config(config.as_deref())?;
            let seed = resolve_seed(seed)?.unwrap_or_else(rand::random);
            println!("seed {seed}");
            let data = Dataset::build(&cfg.dataset, seed, workers)?;
            data.write(&out)?;
            for e in &data.meta.index {
                println!("{} {}: {} records", e.split, e.channel_tag, e.count);
            }
            println!("wrote {} records to {}", data.records.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            model,
            seed,
            metrics,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = model {
                cfg.train.model = m.into();
            }
            if let Some(s) = resolve_seed(seed)? {
                cfg.train.seed = s;
            }
            println!("seed {}", cfg.train.seed);
            let dataset = Dataset::read(&data)?;
            let spec = cfg
                .model
                .spec(cfg.train.model, dataset.num_classes(), dataset.meta.burst_len);
            let records = dataset.split(charrnet::dataset::Split::Train);
            let outcome = training::train(&records, &spec, &cfg.train, workers, |s| {
                println!("epoch {} loss {:.6} train_accuracy {:.4}", s.epoch, s.loss, s.train_accuracy)
            })?;
            let metrics = metrics.unwrap_or_else(|| with_suffix(&out, ".loss.csv"));
            io::write_atomic(&metrics, &training::loss_curve_csv(&outcome.curve)?)?;
            checkpoint::save(&out, &outcome.spec, &outcome.model)?;
            println!("wrote {} and {}", out.display(), metrics.display());
        }
        Command::Eval {
            ckpt,
            data,
            out,
            config,
        } => {
            let cfg = load_config(config.as_deref())?;
            let (spec, model) = checkpoint::load(&ckpt)?;
            let dataset = Dataset::read(&data)?;
            if spec.num_classes != dataset.num_classes() {
                return Err(Error::Config(format!(
                    "checkpoint has {} classes, dataset has {} devices",
                    spec.num_classes,
                    dataset.num_classes()
                ))
                .into());
            }
            let records: Vec<&DatasetRecord> = dataset.split(cfg.eval.split);
            let report = training::evaluate(&model, &records, workers)?;
            io::write_atomic(&out, &report.to_csv()?)?;
            for t in &report.per_tag {
                println!("{} count {} top1 {:.4}", t.tag, t.count, t.top1);
            }
            println!("overall count {} top1 {:.4}", report.count, report.top1_accuracy);
        }
        Command::Verify {
            suite,
            config,
            seed,
            out,
        } => {
            let cfg = load_config(config.as_deref())?.verify;
            let seed = resolve_seed(seed)?.unwrap_or(cfg.seed);
            println!("seed {seed}");
            match suite {
                Suite::Equivariance => report_suite(verify::equivariance_suite(cfg.cases, seed)?)?,
                Suite::Invariance => report_suite(verify::invariance_suite(cfg.cases, seed)?)?,
                Suite::Gradients => report_suite(verify::gradient_suite(cfg.gradient_configs, seed)?)?,
                Suite::Fig2 => {
                    let fig2_cfg = Fig2Config {
                        trials: cfg.fig2_trials,
                        kaiser_beta: cfg.fig2_kaiser_beta,
                        channel: cfg.fig2_channel.clone(),
                        ..Fig2Config::default()
                    };
                    let rows = verify::fig2(&fig2_cfg, seed)?;
                    let csv = verify::fig2_csv(&rows)?;
                    match &out {
                        Some(p) => io::write_atomic(p, &csv)?,
                        None => print!("{}", String::from_utf8_lossy(&csv)),
                    }
                    let dev = |a: ActionKind, l: LayerKind| {
                        rows.iter()
                            .find(|r| r.action == a && r.layer == l)
                            .map_or(f64::NAN, |r| r.mean_deviation)
                    };
                    let windowed = dev(ActionKind::PhysicalWindowed, LayerKind::Invariant);
                    let plain = dev(ActionKind::Physical, LayerKind::Invariant);
                    let baseline = dev(ActionKind::Physical, LayerKind::Baseline);
                    let ideal = dev(ActionKind::Ideal, LayerKind::Invariant);
                    if !(windowed < plain && plain < baseline && ideal < verify::EXACT_ACTION_TOL) {
                        return Err(Failure::Property(format!(
                            "fig2 ordering violated (seed {seed}): invariant ideal {ideal:.3e}, windowed {windowed:.4e}, \
                             physical {plain:.4e}, baseline physical {baseline:.4e}"
                        )));
                    }
                    println!("fig2: PASS");
                }
            }
        }
    }
    Ok(())
}

fn report_suite(r: SuiteReport) -> Result<(), Failure> {
    println!(
        "{}: {} cases, max error {:.3e} (tolerance {:.0e})",
        r.suite, r.cases, r.max_error, r.tolerance
    );
    if r.passed() {
        println!("{}: PASS", r.suite);
        Ok(())
    } else {
        Err(Failure::Property(format!("{}: FAIL\n{}", r.suite, r.failures.join("\n"))))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Property(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
