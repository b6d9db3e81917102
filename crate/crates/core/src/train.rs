//! Training steps for the weight-shared trainer and the BPTT baseline, and the
//! seeded epoch loop that drives them.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ata::{ata_update, noisy_spike_mass, AtaConfig, NoiseMass};
use crate::bn::{update_ema, BnConfig};
use crate::branch::{s2a_backward, s2a_forward, snn_batch_stats, snn_forward_recorded, stbp_backward};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::{softmax_xent, Adam, AdamConfig, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainerKind {
    /// Spikes mapped onto a weight-shared ANN branch; gradients on the ANN branch only.
    S2a,
    /// Backpropagation through time over the spiking branch.
    Stbp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub trainer: TrainerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Epochs (counted from 0) at which the learning rate is multiplied by `lr_decay`.
    pub lr_milestones: Vec<usize>,
    pub lr_decay: f32,
    /// Width `a` of the rectangle surrogate used by the BPTT baseline.
    pub surrogate_width: f32,
    pub ata: AtaConfig,
    pub bn: BnConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            trainer: TrainerKind::S2a,
            epochs: 20,
            batch_size: 32,
            seed: 0,
            adam: AdamConfig::default(),
            lr_milestones: Vec::new(),
            lr_decay: 0.1,
            surrogate_width: 1.0,
            ata: AtaConfig::default(),
            bn: BnConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.adam.lr >= 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("learning rate must be >= 0 and lr_decay > 0".into()));
        }
        if !(self.surrogate_width > 0.0) {
            return Err(Error::Config("surrogate_width must be positive".into()));
        }
        self.ata.validate()?;
        self.bn.validate()
    }

    /// Learning rate in effect during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f32 {
        let decays = self.lr_milestones.iter().filter(|&&m| epoch >= m).count();
        self.adam.lr * self.lr_decay.powi(decays as i32)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub loss: f32,
    /// Noisy-spike statistics per hidden layer (empty for the BPTT baseline).
    pub noise: Vec<NoiseMass>,
}

/// One weight-shared training iteration: spiking window, ANN branch, ANN-only
/// backward, threshold adjustment, parameter update and EMA update.
pub fn s2a_train_step(
    net: &mut Network,
    optimizer: &mut Adam,
    batch: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    lr: f32,
) -> Result<StepOutcome> {
    net.zero_grad();
    let fwd = s2a_forward(net, batch)?;
    let (loss, grad) = softmax_xent(fwd.logits(), labels)?;
    s2a_backward(net, &fwd.ann, &grad)?;

    let mut noise = Vec::with_capacity(net.layers.len());
    for (layer, (counts, trace)) in net.layers.iter_mut().zip(fwd.snn.counts.iter().zip(&fwd.ann.layers)) {
        let mass = noisy_spike_mass(counts, &trace.relu)?;
        if cfg.ata.enabled {
            layer.threshold = ata_update(layer.threshold, mass.mean, &cfg.ata);
        }
        noise.push(mass);
    }

    optimizer.step(&mut net.params_mut(), lr)?;
    for (layer, trace) in net.layers.iter_mut().zip(&fwd.ann.layers) {
        update_ema(&mut layer.bn, &trace.batch_mu, &trace.batch_sigma)?;
    }
    Ok(StepOutcome { loss, noise })
}

/// Computes BPTT gradients for one batch into the parameters' `grad` fields
/// without updating anything. Returns the loss and the recorded pass.
pub fn stbp_gradients(
    net: &mut Network,
    batch: &Tensor,
    labels: &[usize],
    surrogate_width: f32,
) -> Result<(f32, crate::branch::SnnRecord)> {
    net.zero_grad();
    let record = snn_forward_recorded(net, batch)?;
    let (loss, grad) = softmax_xent(&record.pass.logits, labels)?;
    stbp_backward(net, batch, &record, &grad, surrogate_width)?;
    Ok((loss, record))
}

/// One BPTT baseline iteration with the same optimizer and EMA schedule.
pub fn stbp_train_step(
    net: &mut Network,
    optimizer: &mut Adam,
    batch: &Tensor,
    labels: &[usize],
    cfg: &TrainConfig,
    lr: f32,
) -> Result<StepOutcome> {
    if cfg.trainer != TrainerKind::Stbp {
        return Err(Error::Config("stbp_train_step needs trainer = \"stbp\"".into()));
    }
    let (loss, record) = stbp_gradients(net, batch, labels, cfg.surrogate_width)?;
    let stats = snn_batch_stats(net, batch, &record.pass.counts)?;
    optimizer.step(&mut net.params_mut(), lr)?;
    for (layer, (mu, sigma)) in net.layers.iter_mut().zip(&stats) {
        update_ema(&mut layer.bn, mu, sigma)?;
    }
    Ok(StepOutcome {
        loss,
        noise: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f32,
    pub mean_loss: f32,
    /// Wall-clock seconds spent in training steps (excludes evaluation).
    pub seconds: f64,
    /// Noisy spikes summed over all layers and batches of the epoch.
    pub noisy_spikes: u64,
    pub thresholds: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochSummary>,
    /// Per-iteration thresholds of every hidden layer, starting with the
    /// initial values.
    pub threshold_trajectory: Vec<Vec<f32>>,
}

impl TrainHistory {
    pub fn mean_seconds_per_epoch(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len() as f64
    }
}

/// Drives training for `cfg.epochs` epochs over `train_set`, shuffling with
/// a generator seeded from `cfg.seed`.
pub struct Trainer {
    pub net: Network,
    pub config: TrainConfig,
    optimizer: Adam,
    shuffle_rng: ChaCha8Rng,
    history: TrainHistory,
}

/// Seed offset separating the shuffling stream from parameter initialization.
const SHUFFLE_STREAM: u64 = 0x5eed_5411_ff1e;

impl Trainer {
    pub fn new(net: Network, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let history = TrainHistory {
            epochs: Vec::new(),
            threshold_trajectory: vec![net.thresholds()],
        };
        Ok(Self {
            optimizer: Adam::new(config.adam),
            shuffle_rng: ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM),
            net,
            config,
            history,
        })
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn into_parts(self) -> (Network, TrainHistory) {
        (self.net, self.history)
    }

    pub fn step(&mut self, batch: &Tensor, labels: &[usize], lr: f32) -> Result<StepOutcome> {
        let out = match self.config.trainer {
            TrainerKind::S2a => s2a_train_step(&mut self.net, &mut self.optimizer, batch, labels, &self.config, lr)?,
            TrainerKind::Stbp => stbp_train_step(&mut self.net, &mut self.optimizer, batch, labels, &self.config, lr)?,
        };
        self.history.threshold_trajectory.push(self.net.thresholds());
        Ok(out)
    }

    pub fn run_epoch(&mut self, train_set: &Dataset) -> Result<EpochSummary> {
        let epoch = self.history.epochs.len();
        let lr = self.config.lr_at(epoch);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let start = Instant::now();
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        let mut noisy = 0u64;
        for chunk in order.chunks(self.config.batch_size) {
            let (x, y) = train_set.batch(chunk)?;
            let out = self.step(&x, &y, lr)?;
            loss_sum += out.loss as f64;
            noisy += out.noise.iter().map(|m| m.spikes).sum::<u64>();
            batches += 1;
        }
        let summary = EpochSummary {
            epoch,
            lr,
            mean_loss: (loss_sum / batches.max(1) as f64) as f32,
            seconds: start.elapsed().as_secs_f64(),
            noisy_spikes: noisy,
            thresholds: self.net.thresholds(),
        };
        log::debug!("epoch {epoch}: loss {:.4}, {:.3}s", summary.mean_loss, summary.seconds);
        self.history.epochs.push(summary.clone());
        Ok(summary)
    }

    /// Runs every configured epoch, calling `on_epoch` after each.
    pub fn fit(&mut self, train_set: &Dataset, mut on_epoch: impl FnMut(&EpochSummary)) -> Result<()> {
        if train_set.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        while self.history.epochs.len() < self.config.epochs {
            let s = self.run_epoch(train_set)?;
            on_epoch(&s);
        }
        Ok(())
    }
}
