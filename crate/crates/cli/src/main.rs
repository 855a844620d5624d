use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use wavebound_core::data::{self, split_and_standardize, windowize};
use wavebound_core::trainer::{self, SweepGrid, WindowSets};
use wavebound_core::{checkpoint, eval, oracle, Error, EvalNetwork, SeriesDataset, SplitSpec};

mod config;

use config::{Pairs, RunConfig};

#[derive(Parser)]
#[command(
    name = "wavebound",
    version,
    about = "Error-bound regularization lab for time-series forecasters"
)]
struct Cli {
    /// Repeat for more detail (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Extra overrides, e.g. `--set learning_rate=3e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic noisy two-sine series as CSV.
    Synth {
        #[arg(long)]
        length: usize,
        #[arg(long, default_value_t = 0.5)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write metrics, logs and checkpoints.
    Train(RunArgs),
    /// Train once per grid value and rank by validation MSE.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// e.g. `eps=0.01,0.001`, `b=0,0.02,0.04`, `lr=1e-4,1e-3`.
        #[arg(long)]
        grid_spec: Option<String>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Score a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config providing data, split and feature defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        split: Part,
        /// Ratio such as 7:1:2.
        #[arg(long)]
        split_spec: Option<String>,
        #[arg(long)]
        network: Option<EvalNetwork>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter-normalized 1-D loss slice around a checkpoint.
    Slice {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "train")]
        split: Part,
        #[arg(long)]
        network: Option<EvalNetwork>,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 41)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        direction_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo check of the wave estimator's MSE reduction.
    Theorem {
        #[arg(long)]
        instance_config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Directory for report.json / report.txt; stdout only when omitted.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Config(_)) => 2,
        Some(Error::Data(_) | Error::Integrity { .. } | Error::Io { .. }) => 3,
        Some(Error::Numeric(_)) => 4,
        None => 1,
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            length,
            sigma,
            seed,
            out,
        } => synth(length, sigma, seed, &out),
        Command::Train(args) => train(&resolve(&args)?),
        Command::Sweep {
            run,
            grid_spec,
            workers,
        } => {
            let mut cfg = resolve(&run)?;
            if let Some(g) = grid_spec {
                cfg.grid = Some(g);
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            sweep(&cfg)
        }
        Command::Eval {
            checkpoint,
            config,
            data,
            split,
            split_spec,
            network,
            out,
        } => {
            let cfg = eval_config(config.as_deref(), data, split_spec)?;
            evaluate(&cfg, &checkpoint, split, network, out.as_deref())
        }
        Command::Slice {
            checkpoint,
            config,
            data,
            split,
            network,
            radius,
            steps,
            direction_seed,
            out,
        } => {
            let cfg = eval_config(config.as_deref(), data, None)?;
            slice(&cfg, &checkpoint, split, network, radius, steps, direction_seed, &out)
        }
        Command::Theorem {
            instance_config,
            set,
            out_dir,
        } => theorem(instance_config.as_deref(), &set, out_dir.as_deref()),
    }
}

fn synth(length: usize, sigma: f64, seed: u64, out: &Path) -> Result<()> {
    let ds = data::synth_series(length, sigma, seed)?;
    data::write_csv(&ds, out)?;
    println!("T={} K={}", ds.len(), ds.features());
    Ok(())
}

fn resolve(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply(&config::read_pairs(path)?)?;
    }
    let mut flags = Pairs::new();
    if let Some(d) = &args.data {
        flags.insert("data".into(), d.display().to_string());
    }
    if let Some(o) = &args.out_dir {
        flags.insert("out_dir".into(), o.display().to_string());
    }
    if let Some(o) = &args.objective {
        flags.insert("objective".into(), o.clone());
    }
    if let Some(s) = args.seed {
        flags.insert("seed".into(), s.to_string());
    }
    cfg.apply(&config::parse_overrides(&args.set)?)?;
    cfg.apply(&flags)?;
    Ok(cfg)
}

fn eval_config(config: Option<&Path>, data: Option<PathBuf>, split_spec: Option<String>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = config {
        cfg.apply(&config::read_pairs(path)?)?;
    }
    if let Some(d) = data {
        cfg.data = Some(d);
    }
    if let Some(s) = split_spec {
        cfg.split = SplitSpec::parse(&s)?;
    }
    if cfg.data.is_none() {
        return Err(Error::Config("no dataset given (--data or `data` in --config)".into()).into());
    }
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> Result<SeriesDataset> {
    let path = cfg.data.as_ref().expect("validated");
    let ds = data::load_csv(path)?;
    Ok(match &cfg.feature {
        Some(name) => ds.select_feature(name)?,
        None => ds,
    })
}

fn window_sets(cfg: &RunConfig, input_len: usize, output_len: usize) -> Result<WindowSets> {
    let ds = load_dataset(cfg)?;
    let splits = if cfg.standardize {
        split_and_standardize(&ds, cfg.split)?
    } else {
        data::split_raw(&ds, cfg.split)?
    };
    for w in &splits.warnings {
        log::warn!("{w}");
    }
    let sets = WindowSets {
        train: windowize(&splits.train, input_len, output_len),
        val: windowize(&splits.val, input_len, output_len),
        test: windowize(&splits.test, input_len, output_len),
    };
    log::info!(
        "{} rows, {} feature(s): {} / {} / {} windows",
        ds.len(),
        ds.features(),
        sets.train.len(),
        sets.val.len(),
        sets.test.len()
    );
    Ok(sets)
}

fn create_file(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))
}

fn write_with(path: &Path, f: impl FnOnce(&mut fs::File) -> std::io::Result<()>) -> Result<()> {
    let mut file = create_file(path)?;
    f(&mut file).with_context(|| format!("writing {}", path.display()))
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("cannot create {}", cfg.out_dir.display()))?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.render())
        .with_context(|| format!("writing config into {}", cfg.out_dir.display()))
}

fn train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let t = &cfg.train;
    let sets = window_sets(cfg, t.input_len, t.output_len)?;
    prepare_out_dir(cfg)?;
    let started = Instant::now();
    let out = trainer::train(t, &sets)?;
    let dir = &cfg.out_dir;

    out.log.save(&dir.join("log.csv"), &dir.join("log.jsonl"))?;
    checkpoint::save(&out.source, &out.mirror, dir.join("best.ckpt"))?;

    let chosen = out.chosen();
    let rows = vec![
        ("train".to_string(), eval::evaluate(chosen, &sets.train)?),
        ("val".to_string(), eval::evaluate(chosen, &sets.val)?),
        ("test".to_string(), eval::evaluate(chosen, &sets.test)?),
    ];
    write_with(&dir.join("metrics.csv"), |f| eval::write_metrics_csv(&rows, f))?;
    write_with(&dir.join("per_step.csv"), |f| {
        eval::write_per_step_csv(&rows[2].1.per_step_mse, f)
    })?;
    write_with(&dir.join("gap.csv"), |f| eval::write_gap_csv(&out.log, f))?;

    let best = out.best_record();
    println!(
        "{}: best epoch {} of {}, val {:.6}, test mse {:.6} mae {:.6} ({:.1}s) -> {}",
        t.objective,
        out.best_epoch,
        out.log.epochs.len(),
        best.val_mse,
        best.test_mse,
        best.test_mae,
        started.elapsed().as_secs_f64(),
        dir.display()
    );
    Ok(())
}

fn sweep(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let spec = cfg
        .grid
        .as_deref()
        .ok_or_else(|| Error::Config("no grid given (--grid-spec or `grid` key)".into()))?;
    let grid = SweepGrid::parse(spec)?;
    let t = &cfg.train;
    let sets = window_sets(cfg, t.input_len, t.output_len)?;
    prepare_out_dir(cfg)?;
    let rows = trainer::sweep(t, &grid, &sets, cfg.workers)?;
    let path = cfg.out_dir.join("sweep.csv");
    write_with(&path, |f| trainer::write_sweep_csv(&rows, f))?;
    if let Some(top) = rows.first() {
        println!(
            "best {}={} (val {:.6}, test {:.6}) of {} -> {}",
            top.parameter,
            top.value,
            top.val_mse,
            top.test_mse,
            rows.len(),
            path.display()
        );
    }
    Ok(())
}

fn pick(sets: &WindowSets, part: Part) -> (&'static str, &[wavebound_core::WindowPair]) {
    match part {
        Part::Train => ("train", &sets.train),
        Part::Val => ("val", &sets.val),
        Part::Test => ("test", &sets.test),
    }
}

fn evaluate(cfg: &RunConfig, ckpt: &Path, part: Part, network: Option<EvalNetwork>, out: Option<&Path>) -> Result<()> {
    let (source, mirror) = checkpoint::load(ckpt)?;
    let sets = window_sets(cfg, source.input_len(), source.output_len())?;
    let params = match network.unwrap_or(cfg.train.eval_network) {
        EvalNetwork::Source => &source,
        EvalNetwork::Target => mirror.target(),
    };
    let (name, windows) = pick(&sets, part);
    let m = eval::evaluate(params, windows)?;
    let rows = [(name.to_string(), m)];
    match out {
        Some(path) => write_with(path, |f| eval::write_metrics_csv(&rows, f)),
        None => Ok(eval::write_metrics_csv(&rows, std::io::stdout().lock())?),
    }
}

#[allow(clippy::too_many_arguments)]
fn slice(
    cfg: &RunConfig,
    ckpt: &Path,
    part: Part,
    network: Option<EvalNetwork>,
    radius: f64,
    steps: usize,
    direction_seed: u64,
    out: &Path,
) -> Result<()> {
    let (source, mirror) = checkpoint::load(ckpt)?;
    let sets = window_sets(cfg, source.input_len(), source.output_len())?;
    let params = match network.unwrap_or(cfg.train.eval_network) {
        EvalNetwork::Source => &source,
        EvalNetwork::Target => mirror.target(),
    };
    let points = eval::loss_slice(params, direction_seed, radius, steps, pick(&sets, part).1)?;
    write_with(out, |f| eval::write_slice_csv(&points, f))
}

fn theorem(instance_config: Option<&Path>, set: &[String], out_dir: Option<&Path>) -> Result<()> {
    let mut pairs = match instance_config {
        Some(path) => config::read_pairs(path)?,
        None => Pairs::new(),
    };
    pairs.extend(config::parse_overrides(set)?);
    let inst = config::oracle_instance(&pairs)?;
    let report = oracle::run_estimator_experiment(&inst)?;

    let mut table = Vec::new();
    report.write_table(&mut table)?;
    std::io::stdout().write_all(&table)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let instance = serde_json::to_string_pretty(&inst)?;
        fs::write(dir.join("instance.json"), instance + "\n")?;
        fs::write(dir.join("report.json"), report.to_json() + "\n")?;
        fs::write(dir.join("report.txt"), &table)?;
    }
    Ok(())
}
