use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hetdyn::analysis::{AnalysisOptions, Task};
use hetdyn::commands::{analyze_cmd, rollout_cmd, simulate_cmd, train_cmd, TrainArgs};
use hetdyn::config::read_train_config;
use hetdyn::dataset::read_series;
use hetdyn::{HdynError, Result};
use hetdyn_core::gnn::TrainConfig;

#[derive(Parser)]
#[command(name = "hdyn", version, about = "Simulate heterogeneous dynamical systems, train graph networks on them, analyze what they learned")]
struct Cli {
    /// Worker threads (default: HDYN_THREADS, then all logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a system from a JSON config into a dataset.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a graph network on a dataset.
    Train(TrainCli),
    /// Roll a trained model (or `truth`) forward from each series' first frame.
    Rollout {
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recover types, coefficients and scores from a trained model.
    Analyze {
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "cluster,profiles,fit,metrics,decompose")]
        tasks: String,
        #[arg(long)]
        rollout_steps: Option<usize>,
        #[arg(long)]
        decompose_steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct TrainCli {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    ghosts: Option<usize>,
    #[arg(long)]
    bootstrap: Option<Switch>,
    #[arg(long)]
    multi_step: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    rotations: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from the checkpoint in --out.
    #[arg(long)]
    resume: bool,
}

impl TrainCli {
    fn into_args(self) -> Result<TrainArgs> {
        let (mut cfg, mut hidden) = match &self.config {
            Some(path) => {
                let file = read_train_config(path)?;
                (file.train, file.hidden)
            }
            None => {
                let data = read_series(&self.data)?;
                (TrainConfig::for_kind(data[0].kind()), None)
            }
        };
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.noise_sigma {
            cfg.noise_sigma = v;
        }
        if let Some(v) = self.ghosts {
            cfg.ghost_count = v;
        }
        if let Some(v) = self.bootstrap {
            cfg.bootstrap = matches!(v, Switch::On);
        }
        if let Some(v) = self.multi_step {
            cfg.multi_step = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.rotations {
            cfg.n_rotations = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        hidden = self.hidden.or(hidden);
        Ok(TrainArgs {
            data: self.data,
            out: self.out,
            train: Some(cfg),
            hidden,
            resume: self.resume,
        })
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var("HDYN_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| HdynError::Usage(format!("HDYN_THREADS must be a thread count, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli, argv: Vec<String>) -> Result<()> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(HdynError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HdynError::Usage(format!("cannot size the thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let path = simulate_cmd(&config, &out, seed, argv)?;
            println!("wrote {}", path.display());
        }
        Command::Train(t) => {
            let trainer = train_cmd(&t.into_args()?, argv)?;
            match trainer.log.epoch_loss.last() {
                Some(loss) => println!("trained {} epochs, final loss {loss:.4e}", trainer.epoch),
                None => println!("nothing to train: already at epoch {}", trainer.epoch),
            }
        }
        Command::Rollout { model, data, steps, out } => {
            let summary = rollout_cmd(&model, &data, steps, &out, argv)?;
            println!("rolled out {} series, mean rmse {:.4e}", summary.series.len(), summary.mean_rmse);
        }
        Command::Analyze {
            model,
            data,
            tasks,
            rollout_steps,
            decompose_steps,
            seed,
            out,
        } => {
            let opts = AnalysisOptions {
                tasks: Task::parse_list(&tasks)?,
                rollout_steps,
                decompose_steps,
                seed,
                ..AnalysisOptions::default()
            };
            let analysis = analyze_cmd(&model, &data, &opts, &out, argv)?;
            if let Some(c) = &analysis.report.clusters {
                match c.accuracy {
                    Some(a) => println!("{} clusters, accuracy {a:.3}", c.n_clusters),
                    None => println!("{} clusters", c.n_clusters),
                }
            }
            println!("report written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
