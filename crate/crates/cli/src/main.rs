use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use invercl::experiment::{
    dataset_for, exit_code, first_layer_slice, full_slice, inversion_config, run_experiment_file,
    ExperimentConfig,
};
use invercl::inversion::{invert, run_pmi, InversionConfig, InversionTarget, InversionWeights};
use invercl::netcore::{load_network, Network, Tensor};
use invercl::{Error, Result};

#[derive(Parser)]
#[command(
    name = "invercl",
    version,
    about = "Data-free continual learning experiments on toy data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    /// Root seed, replacing the config's.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, replacing the config's.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full continual-learning experiment.
    Run {
        config: PathBuf,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Write the toy dataset described by a config as CSV.
    GenData {
        config: PathBuf,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Invert a checkpoint toward a class label or feature vectors.
    Invert {
        checkpoint: PathBuf,
        /// Target class id.
        #[arg(
            long,
            conflicts_with = "feature_file",
            required_unless_present = "feature_file"
        )]
        class: Option<usize>,
        /// CSV of target feature vectors, one per row.
        #[arg(long)]
        feature_file: Option<PathBuf>,
        /// Samples to synthesize for a class target.
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Config to take inversion settings from.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        ov: Overrides,
    },
    /// Emit full-model and first-unit inversion loss slices around a PMI result.
    Landscape {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 0)]
        class: usize,
        /// Batch size of the inverted point (at least 2).
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 21)]
        grid: usize,
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        ov: Overrides,
    },
}

fn load_config(path: Option<&Path>, ov: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(d) = &ov.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

/// Inversion settings from `cfg`, with single-valued level weights
/// stretched to the checkpoint's depth.
fn inversion_for(net: &Network, cfg: &ExperimentConfig) -> Result<InversionConfig> {
    let mut inv = inversion_config(cfg);
    let levels = net.depth() + 1;
    if inv.weights.alpha.len() != levels {
        if cfg.alpha.len() != 1 || cfg.beta.len() != 1 {
            return Err(Error::Config(format!(
                "inversion.alpha/beta list {} levels, the checkpoint has {levels}",
                inv.weights.alpha.len()
            )));
        }
        inv.weights = InversionWeights::uniform(net.depth(), cfg.alpha[0], cfg.beta[0], cfg.gamma);
    }
    if inv.entry_layer >= net.depth() {
        inv.entry_layer = 0;
    }
    Ok(inv)
}

fn read_features(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            // a header row
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(Error::InvalidArgument(format!(
                    "{}:{}: not a number row",
                    path.display(),
                    i + 1
                )));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no feature rows",
            path.display()
        )));
    }
    Tensor::from_rows(&rows)
}

fn write_rows(path: &Path, prefix: &str, x: &Tensor) -> Result<()> {
    let mut out = (0..x.row_len())
        .map(|k| format!("{prefix}{k}"))
        .collect::<Vec<_>>()
        .join(",");
    out.push('\n');
    for row in x.iter_rows() {
        out.push_str(
            &row.iter()
                .map(|v| format!("{v:.9e}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn gen_data(config: &Path, ov: &Overrides) -> Result<()> {
    let cfg = load_config(Some(config), ov)?;
    let data = dataset_for(&cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("dataset.csv");
    data.write_csv(std::io::BufWriter::new(fs::File::create(&path)?))?;
    println!("{}", path.display());
    Ok(())
}

fn invert_cmd(
    checkpoint: &Path,
    class: Option<usize>,
    feature_file: Option<&Path>,
    count: usize,
    config: Option<&Path>,
    ov: &Overrides,
) -> Result<()> {
    let cfg = load_config(config, ov)?;
    let net = load_network(checkpoint)?;
    let target = match (class, feature_file) {
        (Some(c), _) => {
            if c >= net.classes() {
                return Err(Error::InvalidArgument(format!(
                    "class {c} is not in the checkpoint ({} classes)",
                    net.classes()
                )));
            }
            InversionTarget::class(c, count)
        }
        (None, Some(f)) => InversionTarget::Features(read_features(f)?),
        (None, None) => unreachable!("clap requires a target"),
    };
    let inv = invert(&net, &target, &inversion_for(&net, &cfg)?, cfg.seed)?;
    fs::create_dir_all(&cfg.out_dir)?;
    write_rows(
        &cfg.out_dir.join("inverted.csv"),
        "x",
        &inv.input.flatten_rows(),
    )?;
    inv.trace
        .write_csv(cfg.out_dir.join("inversion_trace.csv"))?;
    println!("{}", cfg.out_dir.join("inverted.csv").display());
    Ok(())
}

fn landscape_cmd(
    checkpoint: &Path,
    class: usize,
    count: usize,
    grid: usize,
    radius: f64,
    config: Option<&Path>,
    ov: &Overrides,
) -> Result<()> {
    let cfg = load_config(config, ov)?;
    let net = load_network(checkpoint)?;
    if class >= net.classes() {
        return Err(Error::InvalidArgument(format!(
            "class {class} is not in the checkpoint"
        )));
    }
    let inv = inversion_for(&net, &cfg)?;
    let target = InversionTarget::class(class, count);
    let pmi = run_pmi(
        &net,
        &target,
        &inv.weights,
        inv.steps_per_layer,
        inv.lr_pmi,
        cfg.seed,
        0,
    )?;
    let center = &pmi.levels[0];
    let full = full_slice(&net, center, &target, &inv.weights, grid, radius, cfg.seed)?;
    let layer = first_layer_slice(
        &net,
        center,
        &pmi.levels[1],
        inv.weights.alpha[0],
        inv.weights.beta[1],
        grid,
        radius,
        cfg.seed,
    )?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("landscape_full.csv"), full.to_csv())?;
    fs::write(cfg.out_dir.join("landscape_layer.csv"), layer.to_csv())?;
    println!(
        "full range {:.6e}, first-unit range {:.6e}",
        full.range(),
        layer.range()
    );
    Ok(())
}

fn configure_threads() {
    let Ok(v) = std::env::var("INVERCL_THREADS") else {
        return;
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("could not size the worker pool: {e}");
            }
        }
        _ => log::warn!("ignoring INVERCL_THREADS={v:?}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, ov } => {
            return ExitCode::from(
                run_experiment_file(config, ov.seed, ov.out_dir.as_deref()) as u8
            );
        }
        Command::GenData { config, ov } => gen_data(config, ov),
        Command::Invert {
            checkpoint,
            class,
            feature_file,
            count,
            config,
            ov,
        } => invert_cmd(
            checkpoint,
            *class,
            feature_file.as_deref(),
            *count,
            config.as_deref(),
            ov,
        ),
        Command::Landscape {
            checkpoint,
            class,
            count,
            grid,
            radius,
            config,
            ov,
        } => landscape_cmd(
            checkpoint,
            *class,
            *count,
            *grid,
            *radius,
            config.as_deref(),
            ov,
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
