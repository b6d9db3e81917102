//! Weight-shared training of spiking neural networks.
//!
//! A network of integrate-and-fire layers is run over a time window; its
//! spike counts are mapped onto a weight-shared ANN branch through a
//! rectified (ReSU) or straight-through (STSU) spiking unit, and gradients
//! are taken on that ANN branch only. Batch normalization is folded into
//! per-step weights for the spiking branch, and per-layer thresholds grow
//! when spikes appear where the ANN branch is inactive.
//!
//! A backpropagation-through-time trainer with a rectangle surrogate is
//! included as a baseline.

// NaN-rejecting checks are written as `!(x > 0.0)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ata;
pub mod bn;
pub mod branch;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod mapping;
pub mod metrics;
pub mod network;
pub mod neuron;
pub mod tensor;
pub mod train;

pub use ata::{ata_update, noisy_spike_mass, AtaConfig, NoiseMass};
pub use bn::{fold_weights, BnConfig, BnState};
pub use branch::{ann_forward, s2a_backward, s2a_forward, s2a_infer, snn_forward, stbp_backward, S2aForward, SnnPass};
pub use checkpoint::{checkpoint_load, checkpoint_save, Checkpoint};
pub use config::{DataConfig, DataKind, ExperimentConfig, OutputConfig};
pub use data::{load_csv, load_idx, synth_blobs, synth_two_rings, Dataset};
pub use error::{Error, Result};
pub use experiment::{run_experiment, RunResult, TrainerChoice};
pub use mapping::{MappingKind, MappingUnit};
pub use metrics::{count_ann_ops, energy_ratio, evaluate, spike_rates, MetricsReport, OpsModel};
pub use network::{LayerSpec, Network, NetworkSpec, SharedLayer};
pub use neuron::{if_step, run_window, IfNeurons, ResetMode, SpikeCounts};
pub use tensor::{GradPair, Tensor};
pub use train::{s2a_train_step, stbp_train_step, TrainConfig, TrainHistory, Trainer, TrainerKind};
