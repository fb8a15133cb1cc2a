use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use mwh::harness::{self, Checkpoint, SweepAxis, TrainConfig};
use mwh::Result;

#[derive(Parser)]
#[command(
    name = "mwh",
    version,
    about = "Train small MLPs under mixup schedules"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.csv, manifest.json and model.txt.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report loss and accuracy of a saved model on a data file.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Train once per value of one config axis and tabulate final accuracy.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// alpha, p, q or strategy.
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `0.2,0.5,1.0` or `baseline,mixup,mwh`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated seeds; defaults to the config's seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Results CSV; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw loss, accuracy and mixed-fraction curves from metrics files.
    Plot {
        #[arg(long = "in", num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if out.is_some() {
                cfg.out_dir = out;
            }
            let last = harness::run_training(&cfg)?;
            println!(
                "epoch {} test_loss {:.6} test_accuracy {:.6}",
                last.epoch, last.test_loss, last.test_accuracy
            );
            if let Some(dir) = &cfg.out_dir {
                println!("wrote {}", dir.display());
            }
        }
        Command::Eval { model, data } => {
            let ckpt = Checkpoint::load(&model)?;
            let e = harness::evaluate_checkpoint(&ckpt, &data)?;
            println!("loss {:.6} accuracy {:.6}", e.loss, e.accuracy);
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let axis: SweepAxis = axis.parse()?;
            let rows = harness::sweep(&cfg, axis, &values, &seeds)?;
            match &out {
                Some(path) => {
                    harness::write_sweep(path, &rows)?;
                    println!("wrote {}", path.display());
                }
                None => {
                    println!("axis,value,seed,strategy,final_test_accuracy,final_test_loss,status");
                    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                    for r in &rows {
                        println!(
                            "{},{},{},{},{},{},{}",
                            r.axis,
                            r.value,
                            r.seed,
                            r.strategy,
                            fmt(r.final_test_accuracy),
                            fmt(r.final_test_loss),
                            r.status
                        );
                    }
                }
            }
            let failed = rows.iter().filter(|r| !r.ok()).count();
            if failed > 0 {
                return Err(mwh::Error::Runtime(format!(
                    "{failed} of {} runs failed",
                    rows.len()
                )));
            }
        }
        Command::Plot { inputs, out } => {
            harness::plot_metrics(&inputs, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
