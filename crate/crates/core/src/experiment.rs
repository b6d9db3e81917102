//! End-to-end runs: load data, build and train a network, evaluate, persist.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{checkpoint_save, to_bytes};
use crate::config::{ExperimentConfig, INIT_STREAM};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mapping::MappingKind;
use crate::metrics::{evaluate, MetricsReport};
use crate::network::Network;
use crate::train::{TrainHistory, Trainer, TrainerKind};

/// Trainer plus mapping unit, as selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainerChoice {
    S2aResu,
    S2aStsu,
    Stbp,
}

impl TrainerChoice {
    pub const ALL: [TrainerChoice; 3] = [TrainerChoice::S2aResu, TrainerChoice::S2aStsu, TrainerChoice::Stbp];

    pub fn name(self) -> &'static str {
        match self {
            TrainerChoice::S2aResu => "s2a-resu",
            TrainerChoice::S2aStsu => "s2a-stsu",
            TrainerChoice::Stbp => "stbp",
        }
    }

    /// Sets trainer and mapping kind. STBP leaves the mapping untouched; it
    /// only matters for the noisy-spike diagnostics.
    pub fn apply(self, cfg: &mut ExperimentConfig) {
        match self {
            TrainerChoice::S2aResu => {
                cfg.train.trainer = TrainerKind::S2a;
                cfg.network.mapping = MappingKind::Resu;
            }
            TrainerChoice::S2aStsu => {
                cfg.train.trainer = TrainerKind::S2a;
                cfg.network.mapping = MappingKind::Stsu;
            }
            TrainerChoice::Stbp => cfg.train.trainer = TrainerKind::Stbp,
        }
    }
}

impl FromStr for TrainerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown trainer {s:?}; expected s2a-resu, s2a-stsu or stbp")))
    }
}

pub fn build_network(cfg: &ExperimentConfig) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ INIT_STREAM);
    Network::new(cfg.network.clone(), &cfg.train.bn, &mut rng)
}

fn check_compatible(net: &Network, data: &Dataset) -> Result<()> {
    if data.sample_shape() != net.input_shape() {
        return Err(Error::Config(format!(
            "data samples are {:?} but network.input is {:?}",
            data.sample_shape(),
            net.input_shape()
        )));
    }
    let classes = net.spec().classes().unwrap_or(0);
    if data.classes() > classes {
        return Err(Error::Config(format!(
            "data has {} classes, classifier has {classes}",
            data.classes()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub network: Network,
    pub history: TrainHistory,
    /// Held-out evaluation after the final epoch.
    pub report: MetricsReport,
}

/// Trains and evaluates one configuration. Relative data paths resolve
/// against `base`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    base: &Path,
    mut on_epoch: impl FnMut(&crate::train::EpochSummary),
) -> Result<RunResult> {
    cfg.validate()?;
    let (train_set, test_set) = cfg.data.load_split(cfg.train.seed, base)?;
    if test_set.is_empty() {
        return Err(Error::Config(
            "held-out split is empty; lower data.train_fraction".into(),
        ));
    }
    let net = build_network(cfg)?;
    check_compatible(&net, &train_set)?;
    let mut trainer = Trainer::new(net, cfg.train.clone())?;
    trainer.fit(&train_set, &mut on_epoch)?;
    let (network, history) = trainer.into_parts();
    let mut report = evaluate(&network, &test_set, cfg.output.eval_batch_size, &cfg.output.energy)?;
    report.threshold_trajectory = history.threshold_trajectory.clone();
    Ok(RunResult {
        config: cfg.clone(),
        network,
        history,
        report,
    })
}

/// Re-evaluates a trained network on the held-out split of `cfg`.
pub fn eval_network(net: &Network, cfg: &ExperimentConfig, base: &Path) -> Result<MetricsReport> {
    let (_, test_set) = cfg.data.load_split(cfg.train.seed, base)?;
    check_compatible(net, &test_set)?;
    evaluate(net, &test_set, cfg.output.eval_batch_size, &cfg.output.energy)
}

/// Writes `checkpoint.bin`, `config.toml`, `history.json` and, if enabled,
/// `metrics.csv` / `metrics.json` into `dir`.
pub fn write_artifacts(run: &RunResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    checkpoint_save(&run.network, Some(&run.config.train), dir.join("checkpoint.bin"))?;
    fs::write(dir.join("config.toml"), run.config.to_toml_string()?)?;
    let history = serde_json::to_string_pretty(&run.history).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("history.json"), history)?;
    if run.config.output.write_csv {
        run.report.write_csv(fs::File::create(dir.join("metrics.csv"))?)?;
    }
    if run.config.output.write_json {
        fs::write(dir.join("metrics.json"), run.report.to_json()?)?;
    }
    Ok(())
}

/// Checkpoint bytes of a run, for determinism checks.
pub fn checkpoint_bytes(run: &RunResult) -> Result<Vec<u8>> {
    to_bytes(&run.network, Some(&run.config.train))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub trainer: String,
    pub accuracy: f64,
    pub epochs: usize,
    pub time_steps: usize,
    pub spikes_per_image: f64,
    pub noisy_per_image: f64,
    pub seconds_per_epoch: f64,
    pub energy_ratio: f64,
}

impl CompareRow {
    pub fn from_run(choice: TrainerChoice, run: &RunResult) -> Self {
        Self {
            trainer: choice.name().into(),
            accuracy: run.report.accuracy,
            epochs: run.history.epochs.len(),
            time_steps: run.network.time_steps(),
            spikes_per_image: run.report.total_spikes_per_image,
            noisy_per_image: run.report.noisy_per_image(),
            seconds_per_epoch: run.history.mean_seconds_per_epoch(),
            energy_ratio: run.report.energy_ratio,
        }
    }
}

/// Trains every trainer choice from the same config and seed.
pub fn compare(
    cfg: &ExperimentConfig,
    base: &Path,
    choices: &[TrainerChoice],
) -> Result<Vec<(TrainerChoice, RunResult)>> {
    choices
        .iter()
        .map(|&c| {
            let mut run_cfg = cfg.clone();
            c.apply(&mut run_cfg);
            log::info!("compare: training {}", c.name());
            run_experiment(&run_cfg, base, |_| {}).map(|r| (c, r))
        })
        .collect()
}

pub fn format_compare_table(rows: &[CompareRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>8} {:>6} {:>3} {:>12} {:>12} {:>10} {:>8}",
        "trainer", "acc", "epochs", "T", "spikes/img", "noisy/img", "s/epoch", "E_A/E_S"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>7.2}% {:>6} {:>3} {:>12.2} {:>12.2} {:>10.4} {:>8.3}",
            r.trainer,
            100.0 * r.accuracy,
            r.epochs,
            r.time_steps,
            r.spikes_per_image,
            r.noisy_per_image,
            r.seconds_per_epoch,
            r.energy_ratio
        );
    }
    s
}
