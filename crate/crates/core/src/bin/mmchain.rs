use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mmchain::autodiff::GradCheck;
use mmchain::chain::Mode;
use mmchain::cli::{self, EvalArgs, RunConfig, Split, TrainArgs};
use mmchain::metrics::csv_string;
use mmchain::models::ComponentKind;
use mmchain::{Error, Result};

#[derive(Parser)]
#[command(name = "mmchain", version, about = "Multimodal machine chain experiments on a synthetic world")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Toy,
    Full,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run config. Defaults to the toy preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in config used when --config is absent.
    #[arg(long, value_enum, default_value = "toy")]
    preset: Preset,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a partitioned dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Run a training protocol stage by stage.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// mmc1, mmc2, labelprop or supervised-topline.
        #[arg(long)]
        mode: Mode,
        /// Run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Evaluate checkpoints on the dev or test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Stage directory or a single `<component>.ckpt`.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "dev")]
        split: Split,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        allow_test: bool,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Finite-difference check of every component's gradients.
    Gradcheck {
        /// Comma-separated components; all when absent.
        #[arg(long, value_delimiter = ',')]
        components: Vec<ComponentKind>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Scale analytic gradients by this factor; the check must then fail.
        #[arg(long)]
        corrupt: Option<f64>,
        /// Report destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match (&c.config, c.preset) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Preset::Toy) => RunConfig::default(),
        (None, Preset::Full) => RunConfig::full_scale(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_or(cfg: &RunConfig, out: Option<PathBuf>, fallback: &str) -> PathBuf {
    out.or_else(|| cfg.output_dir.as_ref().map(|d| d.join(fallback)))
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn emit(out: Option<&Path>, text: &str, overwrite: bool) -> Result<()> {
    match out {
        Some(p) => {
            if p.exists() && !overwrite {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!("{} exists; pass --overwrite to replace it", p.display()),
                )));
            }
            std::fs::write(p, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::GenData { common, out, overwrite } => {
            let cfg = load_config(&common)?;
            let out = out_or(&cfg, out, "dataset.bin");
            let m = cli::cmd_gen_data(&cfg, &out, overwrite)?;
            for (name, n, scenes) in &m.partitions {
                println!("{name:>16} {n:>6} examples {scenes:>5} scenes");
            }
            println!("config {} sha256 {}", m.config_hash, m.sha256);
        }
        Cmd::Train {
            common,
            dataset,
            mode,
            out,
            overwrite,
        } => {
            let cfg = load_config(&common)?;
            let out = out_or(&cfg, out, &format!("run-{mode}"));
            let reports = cli::cmd_train(&TrainArgs {
                config: &cfg,
                dataset: &dataset,
                mode,
                out: &out,
                overwrite,
            })?;
            print!("{}", csv_string(&reports)?);
        }
        Cmd::Eval {
            common,
            checkpoint,
            dataset,
            split,
            beam,
            allow_test,
            out,
            overwrite,
        } => {
            let cfg = load_config(&common)?;
            let report = cli::cmd_eval(&EvalArgs {
                config: &cfg,
                checkpoint: &checkpoint,
                dataset: &dataset,
                split,
                beam,
                allow_test,
            })?;
            emit(out.as_deref(), &csv_string(&[report])?, overwrite)?;
        }
        Cmd::Gradcheck {
            components,
            seed,
            seeds,
            tol,
            corrupt,
            out,
        } => {
            let components = if components.is_empty() {
                ComponentKind::ALL.to_vec()
            } else {
                components
            };
            let mut checker = GradCheck::new(1e-5, tol);
            if let Some(f) = corrupt {
                checker = checker.corrupt_adjoint(f);
            }
            let (rows, text) = cli::cmd_gradcheck(&components, seed, seeds, &checker)?;
            emit(out.as_deref(), &text, true)?;
            return Ok(rows.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Cli::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(args.cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::from(5)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
