use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use skycast::dataset::SplitName;
use skycast::pipeline::{
    evaluate, preprocess, run_grid, seed_dir, sweep_alpha, train_experiment, ExperimentConfig, GridConfig, PreprocessConfig, Variant,
};
use skycast::simulator::{simulate, SimulationConfig};
use skycast::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "skycast", version, about = "Sky-camera / satellite solar irradiance nowcasting")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed(s) of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic dataset.
    Simulate,
    /// Build processed frame stores, split shards and histograms from raw data.
    Preprocess {
        /// Raw dataset directory (simulator layout).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        sky_variant: Option<Variant>,
        #[arg(long)]
        sat_variant: Option<Variant>,
    },
    /// Train one model per seed of an experiment.
    Train,
    /// Score checkpoints on a split and write metric, curve and histogram CSVs.
    Evaluate {
        /// Checkpoint file; repeat to average several trainings.
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        /// Training output directory, used with --config instead of --checkpoint.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Processed dataset; defaults to the one of --config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: SplitName,
    },
    /// Train and validate one experiment per image-loss weight.
    SweepAlpha {
        /// Comma separated weights, e.g. 0,1,5,20.
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
    },
    /// Run an experiment grid and write the combined report table.
    Report,
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref().ok_or_else(|| Error::config(format!("--{flag} is required")))
}

fn experiment(common: &Common) -> Result<ExperimentConfig> {
    let mut exp = ExperimentConfig::load(required(&common.config, "config")?)?;
    if let Some(s) = common.seed {
        exp.seeds = vec![s];
    }
    Ok(exp)
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    match cli.command {
        Command::Simulate => {
            let mut cfg = SimulationConfig::load(required(&c.config, "config")?)?;
            if let Some(s) = c.seed {
                cfg.seed = s;
            }
            let out = required(&c.out, "out")?;
            let manifest = simulate(&cfg, out)?;
            println!("simulated {} days into {}", manifest.days.len(), out.display());
        }
        Command::Preprocess {
            input,
            sky_variant,
            sat_variant,
        } => {
            let mut cfg = match &c.config {
                Some(p) => PreprocessConfig::load(p)?,
                None => PreprocessConfig::default(),
            };
            cfg.sky_variant = sky_variant.unwrap_or(cfg.sky_variant);
            cfg.sat_variant = sat_variant.unwrap_or(cfg.sat_variant);
            let out = required(&c.out, "out")?;
            let m = preprocess(&input, &cfg, out)?;
            println!(
                "{} samples (train {}, val {}, test {}) in {}",
                m.gaps.emitted, m.split_sizes["train"], m.split_sizes["val"], m.split_sizes["test"], out.display()
            );
        }
        Command::Train => {
            let exp = experiment(c)?;
            let out = required(&c.out, "out")?;
            for r in train_experiment(&exp, out)? {
                let fs: Vec<String> = r.best_fs.iter().map(|f| format!("{f:.1}")).collect();
                println!("seed {}: {} (validation skill % per horizon: {})", r.seed, r.checkpoint.display(), fs.join(", "));
            }
        }
        Command::Evaluate {
            checkpoints,
            run,
            data,
            split,
        } => {
            let exp = c.config.as_ref().map(|_| experiment(c)).transpose()?;
            let mut cks = checkpoints;
            if let (Some(run), Some(exp)) = (&run, &exp) {
                cks.extend(exp.seeds.iter().map(|&s| seed_dir(run, s).join("model.skck")));
            }
            let data = data.or_else(|| exp.as_ref().map(|e| e.data.clone())).ok_or_else(|| Error::config("--data or --config is required"))?;
            let out = required(&c.out, "out")?;
            let report = evaluate(&cks, &data, split, out)?;
            println!("{:<12} {:>9} {:>9} {:>9} {:>9}", "forecaster", "horizon_s", "rmse", "fs_%", "crps");
            for r in &report.metrics {
                let fs = r.fs_rmse_pct.map_or("-".into(), |f| format!("{f:.2}"));
                println!("{:<12} {:>9} {:>9.2} {:>9} {:>9.2}", r.forecaster, r.horizon_s, r.rmse, fs, r.crps);
            }
        }
        Command::SweepAlpha { alphas } => {
            let exp = experiment(c)?;
            let out = required(&c.out, "out")?;
            for r in sweep_alpha(&exp, &alphas, out)? {
                println!("alpha {:>6} horizon {:>5}s rmse {:8.2} fs {:?}", r.alpha, r.horizon_s, r.rmse, r.fs_rmse_pct);
            }
        }
        Command::Report => {
            let mut grid = GridConfig::load(required(&c.config, "config")?)?;
            if let Some(s) = c.seed {
                grid.base.seeds = vec![s];
            }
            let out = required(&c.out, "out")?;
            let jobs = c.jobs.unwrap_or(1);
            let rows = run_grid(&grid, out, jobs)?;
            println!("{} rows written to {}", rows.len(), out.join("report.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
