use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eqmz_core::harness::{self, ExperimentConfig, HarnessError};

/// Equivariant MuZero experiments on MiniPacman.
#[derive(Parser, Debug)]
#[command(name = "eqmz", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config; defaults apply to anything it omits.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set train.total_steps=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; takes precedence over `out_dir` in the config.
    #[arg(long, env = "EQMZ_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate training maps, their rotations and held-out maps.
    GenMaps(Common),
    /// Train the configured variant on the training maps.
    Train(Common),
    /// Greedy evaluation on the same, rotated and different settings.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoints to evaluate instead of the configured variants.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Check that paired searches on rotated inputs agree exactly.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Audit a trained checkpoint instead of random weights.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Render metrics logs and evaluation reports as SVG.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), HarnessError> {
    let text = match &common.config {
        Some(p) => std::fs::read_to_string(p).map_err(|source| HarnessError::Io {
            path: p.clone(),
            source,
        })?,
        None => String::new(),
    };
    let cfg = ExperimentConfig::parse(&text, &common.overrides)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.out_dir));
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::GenMaps(common) => {
            let (cfg, out) = load(&common)?;
            let s = harness::cmd_gen_maps(&cfg, &out)?;
            println!(
                "wrote {} train, {} rotated, {} eval maps to {}",
                s.train.len(),
                s.rotated.len(),
                s.eval.len(),
                out.join("maps").display()
            );
        }
        Command::Train(common) => {
            let (cfg, out) = load(&common)?;
            let o = harness::cmd_train(&cfg, &out)?;
            if let Some(last) = o.metrics.last() {
                println!("step {} loss {:.4} selfplay return {:.3}", last.step, last.loss.total, last.selfplay_return);
            }
            for r in &o.rejected {
                eprintln!("rejected step {}: non-finite loss {:?}", r.step, r.loss);
            }
            println!("checkpoint {}", harness::Layout::new(&out).checkpoint(cfg.variant).display());
        }
        Command::Eval { common, checkpoint } => {
            let (cfg, out) = load(&common)?;
            let report = harness::cmd_eval(&cfg, &out, &checkpoint)?;
            print!("{}", report.summary_csv());
        }
        Command::Audit { common, checkpoint } => {
            let (cfg, out) = load(&common)?;
            let result = harness::cmd_audit(&cfg, &out, checkpoint.as_deref());
            let path = harness::Layout::new(&out).audit(cfg.variant);
            match &result {
                Ok(r) => println!("{}: passed {}/{} ({})", r.variant, r.passed(), r.cases.len(), path.display()),
                Err(HarnessError::AuditFailed { .. }) => eprintln!("see {}", path.display()),
                Err(_) => {}
            }
            result?;
        }
        Command::Plot { inputs, out } => {
            for p in harness::cmd_plot(&inputs, Path::new(&out))? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
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
