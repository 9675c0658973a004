//! `precision-lab` command-line front-end.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use precision_lab::ErrorClass;

use config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "precision-lab", version, about = "Covariance and precision matrix estimation, GMV backtests and model comparison")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = "PRECISION_LAB_THREADS")]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit covariance or precision estimators on a panel and write the matrices.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        methods: MethodArgs,
        #[command(flatten)]
        tuning: TuneArgs,
    },
    /// Rolling-window minimum-variance backtest; writes realized loss series.
    Backtest {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        methods: MethodArgs,
        #[command(flatten)]
        tuning: TuneArgs,
        /// daily, weekly or monthly.
        #[arg(long)]
        horizon: Option<String>,
        /// Estimation window in periods of the horizon.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        step: Option<usize>,
        /// Intra-day returns for realized daily losses.
        #[arg(long)]
        intraday: Option<PathBuf>,
    },
    /// Model confidence sets (both elimination rules) and SPA p-values for a loss file.
    Compare {
        #[arg(long)]
        losses: Option<PathBuf>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        n_boot: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Bootstrap block length (default: chosen from the data).
        #[arg(long)]
        block: Option<usize>,
        /// Only test this SPA benchmark (default: every model in turn).
        #[arg(long)]
        benchmark: Option<String>,
    },
    /// Synthetic experiments: structure-recovery curves or Frobenius errors.
    Synth {
        #[command(flatten)]
        methods: MethodArgs,
        #[command(flatten)]
        tuning: TuneArgs,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Tune precision estimators and report sparsity, conditioning and walk-summability.
    Diagnose {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        methods: MethodArgs,
        #[command(flatten)]
        tuning: TuneArgs,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Panel file (`date,TICKER,...`).
    #[arg(long)]
    data: Option<PathBuf>,
    /// prices or returns.
    #[arg(long)]
    kind: Option<String>,
    /// First date kept (inclusive).
    #[arg(long)]
    from: Option<String>,
    /// Last date kept (inclusive).
    #[arg(long)]
    to: Option<String>,
}

#[derive(Args)]
struct MethodArgs {
    /// Comma-separated method identifiers.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
}

#[derive(Args)]
struct TuneArgs {
    /// cv1 or cv2.
    #[arg(long)]
    criterion: Option<String>,
    /// grid or nm.
    #[arg(long)]
    search: Option<String>,
    /// Grid file replacing the default grids.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Nelder-Mead evaluation budget.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    /// recovery or frobenius.
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Model sizes n for recovery curves.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Clique size.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Tolerated incorrect edges per node.
    #[arg(long)]
    target: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    ladder_start: Option<usize>,
    #[arg(long)]
    max_samples: Option<usize>,
    #[arg(long)]
    refine_steps: Option<usize>,
    /// Assets in the Frobenius experiment.
    #[arg(long)]
    p: Option<usize>,
    /// Samples per Frobenius repetition.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    sector_size: Option<usize>,
}

fn set<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

impl DataArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.data, self.data);
        set(&mut cfg.kind, self.kind);
        set(&mut cfg.from, self.from);
        set(&mut cfg.to, self.to);
    }
}

impl MethodArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.methods, self.methods);
    }
}

impl TuneArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let t = &mut cfg.tuning;
        set(&mut t.criterion, self.criterion);
        set(&mut t.search, self.search);
        set(&mut t.grid, self.grid);
        set(&mut t.budget, self.budget);
        set(&mut t.folds, self.folds);
    }
}

impl SynthArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let s = &mut cfg.synth;
        set(&mut s.experiment, self.experiment);
        set(&mut s.seed, self.seed);
        set(&mut s.sizes, self.sizes);
        set(&mut s.d, self.d);
        set(&mut s.rho, self.rho);
        set(&mut s.target, self.target);
        set(&mut s.trials, self.trials);
        set(&mut s.ladder_start, self.ladder_start);
        set(&mut s.max_samples, self.max_samples);
        set(&mut s.refine_steps, self.refine_steps);
        set(&mut s.p, self.p);
        set(&mut s.m, self.m);
        set(&mut s.reps, self.reps);
        set(&mut s.sector_size, self.sector_size);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.out, cli.out);
    if let Some(n) = cli.threads {
        if n == 0 {
            return config::config_err("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Estimate { data, methods, tuning } => {
            data.apply(&mut cfg);
            methods.apply(&mut cfg);
            tuning.apply(&mut cfg);
            commands::estimate(cfg)
        }
        Command::Backtest { data, methods, tuning, horizon, window, step, intraday } => {
            data.apply(&mut cfg);
            methods.apply(&mut cfg);
            tuning.apply(&mut cfg);
            set(&mut cfg.backtest.horizon, horizon);
            set(&mut cfg.backtest.window, window);
            set(&mut cfg.backtest.step, step);
            set(&mut cfg.intraday, intraday);
            commands::backtest(cfg)
        }
        Command::Compare { losses, alpha, n_boot, seed, block, benchmark } => {
            set(&mut cfg.losses, losses);
            let c = &mut cfg.compare;
            set(&mut c.alpha, alpha);
            set(&mut c.n_boot, n_boot);
            set(&mut c.seed, seed);
            set(&mut c.block, block);
            set(&mut c.benchmark, benchmark);
            commands::compare(cfg)
        }
        Command::Synth { methods, tuning, synth } => {
            methods.apply(&mut cfg);
            tuning.apply(&mut cfg);
            synth.apply(&mut cfg);
            commands::synth(cfg)
        }
        Command::Diagnose { data, methods, tuning } => {
            data.apply(&mut cfg);
            methods.apply(&mut cfg);
            tuning.apply(&mut cfg);
            commands::diagnose(cfg)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if let Some(e) = err.downcast_ref::<precision_lab::Error>() {
        return match e.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        };
    }
    if err.downcast_ref::<std::io::Error>().is_some() || err.downcast_ref::<csv::Error>().is_some() {
        return 3;
    }
    // thread-pool setup and other plumbing failures
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
