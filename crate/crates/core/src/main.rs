use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use xai_probe::config::PipelineConfig;
use xai_probe::evaluation::Method;
use xai_probe::par::{available_jobs, with_jobs, Parallelism};
use xai_probe::pipeline::{self, Layout};
use xai_probe::Result;

/// Checks whether explanation methods point at the region an adversarial
/// attack actually changed.
#[derive(Parser)]
#[command(name = "xai-probe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; defaults to <out>/config.json when present, else built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. --set lime.num_samples=500 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Worker threads; 1 runs sequentially. Defaults to the number of processors.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Salience,
    Guided,
    Lime,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic training and held-out images.
    GenData(Common),
    /// Train the classifier.
    Train(Common),
    /// Attack the largest regions of every held-out image.
    Attack(Common),
    /// Explain every successful adversarial example.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        method: MethodArg,
    },
    /// Compare explanations with the attacked regions.
    Evaluate(Common),
    /// Write plots, the mean-rank chart and an overlay.
    Report {
        #[command(flatten)]
        common: Common,
        /// Example to plot; overrides report.example.
        #[arg(long)]
        example: Option<usize>,
    },
    /// Run every stage in order.
    All(Common),
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let stored = Layout::new(&c.out).config();
    let base = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None if stored.exists() => PipelineConfig::load(&stored)?,
        None => PipelineConfig::default(),
    };
    base.with_overrides(&c.sets)?.with_env_seed()?.resolve()
}

fn run(cmd: Command) -> Result<()> {
    let (common, method, example) = match &cmd {
        Command::Explain { common, method } => (common, Some(*method), None),
        Command::Report { common, example } => (common, None, *example),
        Command::GenData(c) | Command::Train(c) | Command::Attack(c) | Command::Evaluate(c) | Command::All(c) => {
            (c, None, None)
        }
    };
    let mut cfg = load_config(common)?;
    if example.is_some() {
        cfg.report.example = example;
    }
    let out = Layout::new(&common.out);
    let jobs = common.jobs.unwrap_or_else(available_jobs).max(1);
    let par = Parallelism::from_jobs(jobs);
    info!("config fingerprint {}, {} worker(s)", cfg.fingerprint(), jobs);
    with_jobs(jobs, || match cmd {
        Command::GenData(_) => {
            pipeline::init_output(&cfg, &out)?;
            pipeline::gen_data(&cfg, &out, par)
        }
        Command::Train(_) => {
            let r = pipeline::train_stage(&cfg, &out)?;
            println!("holdout accuracy {:.3}, train accuracy {:.3}", r.holdout_accuracy, r.train_accuracy);
            Ok(())
        }
        Command::Attack(_) => {
            let m = pipeline::attack_stage(&cfg, &out, par)?;
            println!("{} of {} attempts succeeded ({:.3})", m.successes, m.attempts, m.success_fraction);
            Ok(())
        }
        Command::Explain { .. } => {
            let methods: Vec<Method> = match method.expect("explain has a method") {
                MethodArg::Salience => vec![Method::Salience],
                MethodArg::Guided => vec![Method::Guided],
                MethodArg::Lime => vec![Method::Lime],
                MethodArg::All => Method::EXPLAINERS.to_vec(),
            };
            let n = pipeline::explain_stage(&cfg, &out, &methods, par)?;
            println!("explained {n} examples");
            Ok(())
        }
        Command::Evaluate(_) => {
            let (_, s) = pipeline::evaluate_stage(&cfg, &out, par)?;
            print!("{}", pipeline::summary_text(&s));
            Ok(())
        }
        Command::Report { .. } => {
            let f = pipeline::report_stage(&cfg, &out)?;
            println!("{}\n{}\n{}", f.plot.display(), f.ranks.display(), f.overlay.display());
            Ok(())
        }
        Command::All(_) => {
            let s = pipeline::run_all(&cfg, &out, par)?;
            print!("{}", pipeline::summary_text(&s));
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
