use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lart_cli::commands;
use lart_cli::config::Settings;
use lart_cli::error::Result;

/// Print a line, ignoring a closed stdout.
macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

/// Tracklet action recognition: data generation, training, evaluation and reports.
#[derive(Parser, Debug)]
#[command(name = "lart", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ConfigArgs {
    /// Flat `key = value` TOML file (a run manifest also works).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set base_lr=5e-4`; later flags win.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::load(p)?,
            None => Settings::default(),
        };
        s.override_with(&self.sets)?;
        Ok(s)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset directory.
    Gen {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch on teacher pseudo-labels.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue training a checkpoint on ground-truth labels.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Frame-level mAP of a checkpoint on a dataset.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Tracks per forward pass, person of interest included [default: 5].
        #[arg(long)]
        n: Option<usize>,
        /// Frames averaged around each evaluated frame [default: 12].
        #[arg(long)]
        pooling: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every ablation arm under every seed.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        eval_data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG charts from run outputs (files or run directories).
    Report {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the command recorded in a `manifest.toml`.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    let pool = lart::train::thread_pool()?;
    pool.install(|| match cli.command {
        Command::Gen { cfg, out } => {
            let hash = commands::gen(&cfg.settings()?, &out)?;
            say!("dataset {} hash {hash}", out.display());
            Ok(())
        }
        Command::Pretrain {
            cfg,
            data,
            eval_data,
            out,
        } => {
            let m = commands::pretrain(&cfg.settings()?, &data, eval_data.as_deref(), &out)?;
            say!("pretrain run {} written to {}", m.run_id(), out.display());
            Ok(())
        }
        Command::Finetune {
            cfg,
            data,
            checkpoint,
            eval_data,
            out,
        } => {
            let s = cfg.settings()?;
            let m = commands::finetune(&s, &data, checkpoint.as_deref(), eval_data.as_deref(), &out)?;
            say!("finetune run {} written to {}", m.run_id(), out.display());
            Ok(())
        }
        Command::Eval {
            cfg,
            data,
            checkpoint,
            n,
            pooling,
            out,
        } => {
            let mut s = cfg.settings()?;
            if let Some(n) = n {
                s.set("eval_n_tracks", n as i64);
            }
            if let Some(w) = pooling {
                s.set("pooling_width", w as i64);
            }
            let m = commands::eval(&s, &data, checkpoint.as_deref(), &out)?;
            say!("{}", std::fs::read_to_string(out.join("eval.txt")).unwrap_or_default().trim_end());
            say!("eval run {} written to {}", m.run_id(), out.display());
            Ok(())
        }
        Command::Ablate {
            cfg,
            data,
            eval_data,
            out,
        } => {
            let m = commands::ablate(&cfg.settings()?, &data, &eval_data, &out)?;
            say!("ablation run {} written to {}", m.run_id(), out.display());
            Ok(())
        }
        Command::Report { cfg, inputs, out } => {
            for p in commands::report(&cfg.settings()?, &inputs, &out)? {
                say!("{}", p.display());
            }
            Ok(())
        }
        Command::Replay { manifest, out } => {
            let m = commands::replay(&manifest, &out)?;
            say!("{} run {} written to {}", m.command, m.run_id(), out.display());
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
