//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spikeshare_core::{synth_blobs, BnConfig, Dataset, LayerSpec, MappingKind, Network, NetworkSpec, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).expect("shape and data agree")
}

/// Conv(3x3,16)-MaxPool-Conv(3x3,32)-MaxPool-FC on `side` x `side` inputs.
pub fn conv_spec(side: usize, t: usize, mapping: MappingKind) -> NetworkSpec {
    NetworkSpec {
        input: vec![1, side, side],
        time_steps: t,
        mapping,
        layers: vec![
            LayerSpec::Conv {
                kernel: 3,
                channels: 16,
                stride: 1,
                padding: 1,
            },
            LayerSpec::MaxPool { kernel: 2, stride: 2 },
            LayerSpec::Conv {
                kernel: 3,
                channels: 32,
                stride: 1,
                padding: 1,
            },
            LayerSpec::MaxPool { kernel: 2, stride: 2 },
            LayerSpec::Fc { out: 10 },
        ],
    }
}

pub fn mlp_spec(hidden: usize, t: usize, mapping: MappingKind) -> NetworkSpec {
    NetworkSpec {
        input: vec![2],
        time_steps: t,
        mapping,
        layers: vec![LayerSpec::Fc { out: hidden }, LayerSpec::Fc { out: 3 }],
    }
}

pub fn network(spec: NetworkSpec, seed: u64) -> Network {
    Network::new(spec, &BnConfig::default(), &mut rng(seed)).expect("valid spec")
}

/// A batch of uniform images with cycling labels.
pub fn image_batch(side: usize, n: usize, seed: u64) -> (Tensor, Vec<usize>) {
    (
        uniform(&[n, 1, side, side], 0.0, 1.0, seed),
        (0..n).map(|i| i % 10).collect(),
    )
}

pub fn blobs(n: usize) -> Dataset {
    synth_blobs(n, 3, 1).expect("n >= classes")
}
