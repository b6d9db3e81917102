use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use spikeshare_core::experiment::{compare, eval_network, format_compare_table, write_artifacts, CompareRow};
use spikeshare_core::train::EpochSummary;
use spikeshare_core::{checkpoint_load, run_experiment, ExperimentConfig, MetricsReport, TrainerChoice};

#[derive(Parser)]
#[command(
    name = "spikeshare",
    version,
    about = "Train and evaluate weight-shared spiking networks"
)]
struct Cli {
    /// Log level when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "info", env = "SPIKESHARE_LOG")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write checkpoint, config and metrics.
    Train(TrainArgs),
    /// Re-evaluate a finished run directory on its held-out split.
    Eval(EvalArgs),
    /// Train every trainer from the same config and seed and tabulate.
    Compare(CompareArgs),
    /// Print a saved metrics.json as a per-layer table.
    Report(ReportArgs),
    /// Print the default configuration as TOML.
    InitConfig,
}

#[derive(Args, Clone)]
struct Overrides {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long, short, env = "SPIKESHARE_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "SPIKESHARE_EPOCHS")]
    epochs: Option<usize>,
    #[arg(long, env = "SPIKESHARE_SEED")]
    seed: Option<u64>,
    /// Time window T.
    #[arg(long)]
    time_steps: Option<usize>,
    /// Disable adaptive threshold adjustment.
    #[arg(long)]
    no_ata: bool,
    /// Output directory; overrides output.dir.
    #[arg(long, short, env = "SPIKESHARE_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// s2a-resu, s2a-stsu or stbp; defaults to the config's trainer and mapping.
    #[arg(long, env = "SPIKESHARE_TRAINER")]
    trainer: Option<TrainerChoice>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory containing checkpoint.bin and config.toml.
    run: PathBuf,
    /// Write the fresh metrics.json here instead of printing only.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Subset of trainers to run, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "s2a-resu,s2a-stsu,stbp")]
    trainers: Vec<TrainerChoice>,
}

#[derive(Args)]
struct ReportArgs {
    /// metrics.json file, or a run directory containing one.
    path: PathBuf,
}

/// Loads the config and applies command-line overrides. Relative data paths
/// are made absolute so the written config is usable from anywhere.
fn load_config(o: &Overrides) -> Result<ExperimentConfig> {
    let (mut cfg, base) = match &o.config {
        Some(p) => {
            let cfg = ExperimentConfig::from_file(p).with_context(|| format!("reading config {}", p.display()))?;
            let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, dir)
        }
        None => (ExperimentConfig::default(), PathBuf::new()),
    };
    let base = std::path::absolute(if base.as_os_str().is_empty() {
        Path::new(".")
    } else {
        &base
    })?;
    for p in [&mut cfg.data.images, &mut cfg.data.labels, &mut cfg.data.path]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if let Some(e) = o.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = o.seed {
        cfg.train.seed = s;
    }
    if let Some(t) = o.time_steps {
        cfg.network.time_steps = t;
    }
    if o.no_ata {
        cfg.train.ata.enabled = false;
    }
    if let Some(out) = &o.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn epoch_line(e: &EpochSummary) -> String {
    let th: Vec<String> = e.thresholds.iter().map(|v| format!("{v:.4}")).collect();
    format!(
        "epoch {:>3} lr {:.2e} loss {:.5} {:.3}s noisy {} thresholds [{}]",
        e.epoch + 1,
        e.lr,
        e.mean_loss,
        e.seconds,
        e.noisy_spikes,
        th.join(", ")
    )
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.overrides)?;
    if let Some(c) = args.trainer {
        c.apply(&mut cfg);
    }
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut logf = File::create(dir.join("run.log"))?;
    writeln!(logf, "{}", cfg.to_toml_string()?)?;
    let run = run_experiment(&cfg, Path::new("."), |e| {
        let line = epoch_line(e);
        log::info!("{line}");
        let _ = writeln!(logf, "{line}");
    })?;
    write_artifacts(&run, &dir)?;
    let summary = format!(
        "held-out accuracy {:.2}% | spikes/image {:.1} | noisy/image {:.3} | E_A/E_S {:.3}",
        100.0 * run.report.accuracy,
        run.report.total_spikes_per_image,
        run.report.noisy_per_image(),
        run.report.energy_ratio
    );
    writeln!(logf, "{summary}")?;
    println!("{summary}");
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let ck = checkpoint_load(args.run.join("checkpoint.bin"))?;
    let cfg = ExperimentConfig::from_file(args.run.join("config.toml"))?;
    if ck.network.spec() != &cfg.network {
        bail!(
            "checkpoint network does not match {}",
            args.run.join("config.toml").display()
        );
    }
    let report = eval_network(&ck.network, &cfg, &args.run)?;
    println!(
        "held-out accuracy {:.2}% on {} images",
        100.0 * report.accuracy,
        report.images
    );
    if let Some(out) = args.out {
        fs::write(&out, report.to_json()?)?;
    }
    Ok(())
}

fn run_compare(args: CompareArgs) -> Result<()> {
    let cfg = load_config(&args.overrides)?;
    let runs = compare(&cfg, Path::new("."), &args.trainers)?;
    let dir = cfg.output.dir.clone();
    let rows: Vec<CompareRow> = runs.iter().map(|(c, r)| CompareRow::from_run(*c, r)).collect();
    for (c, run) in &runs {
        write_artifacts(run, &dir.join(c.name()))?;
    }
    fs::write(dir.join("compare.json"), serde_json::to_string_pretty(&rows)?)?;
    let table = format_compare_table(&rows);
    fs::write(dir.join("compare.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let path = if args.path.is_dir() {
        args.path.join("metrics.json")
    } else {
        args.path
    };
    let m = MetricsReport::from_json(File::open(&path).with_context(|| format!("opening {}", path.display()))?)?;
    println!("{} images, accuracy {:.2}%", m.images, 100.0 * m.accuracy);
    println!(
        "{:>5} {:<10} {:>8} {:>12} {:>12} {:>12} {:>14}",
        "layer", "kind", "neurons", "spikes/img", "noisy/img", "A_ops", "S_ops"
    );
    for l in &m.layers {
        println!(
            "{:>5} {:<10} {:>8} {:>12.3} {:>12.3} {:>12} {:>14.1}",
            l.layer_index, l.layer_kind, l.neurons, l.spikes_per_image, l.noisy_per_image, l.a_ops, l.s_ops
        );
    }
    println!("thresholds {:?}", m.thresholds);
    println!("E_A/E_S {:.4} (e_mac {}, e_add {})", m.energy_ratio, m.e_mac, m.e_add);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level)).init();
    match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => run_compare(a),
        Command::Report(a) => report(a),
        Command::InitConfig => {
            print!("{}", ExperimentConfig::default().to_toml_string()?);
            Ok(())
        }
    }
}
