mod common;

use common::*;
use proptest::prelude::*;
use spikeshare_core::bn::bn_forward;
use spikeshare_core::branch::{ann_forward, snn_forward};
use spikeshare_core::checkpoint::{from_bytes, to_bytes};
use spikeshare_core::neuron::rate_identity_check;
use spikeshare_core::tensor::{adam_step, fc_forward, AdamConfig, AdamMoments};
use spikeshare_core::{
    ata_update, energy_ratio, fold_weights, noisy_spike_mass, AtaConfig, BnConfig, BnState, ExperimentConfig, GradPair,
    IfNeurons, MappingKind, OpsModel, ResetMode, SpikeCounts, Tensor, TrainerKind,
};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn hard_reset_matches_scalar_oracle(
        inputs in prop::collection::vec(-1.0f32..2.0, 1..10),
        v_th in 0.05f32..2.0,
    ) {
        let mut layer = IfNeurons::new(&[1], v_th, ResetMode::Hard).unwrap();
        let want = scalar_if(&inputs, v_th);
        let mut fired = 0usize;
        for (&x, &w) in inputs.iter().zip(&want) {
            let s = layer.step(&Tensor::new(vec![1], vec![x]).unwrap()).unwrap().data()[0];
            prop_assert_eq!(s == 1.0, w);
            fired += w as usize;
        }
        prop_assert!(fired <= inputs.len());
    }

    #[test]
    fn soft_reset_rate_identity_is_exact(
        seed in any::<u64>(),
        t in 1usize..64,
        v_th in 0.2f32..1.5,
    ) {
        let mut r = rng(seed);
        let w = rand_tensor(&[4, 3], -1.0, 1.0, &mut r);
        let b = rand_tensor(&[4], -0.5, 0.5, &mut r);
        let x = rand_tensor(&[1, 3], 0.0, 1.0, &mut r);
        let out = rate_identity_check(&w, &b, &x, v_th, t, ResetMode::Soft).unwrap();
        for &e in out.residual.data() {
            prop_assert!(e.abs() <= 1e-5, "residual {}", e);
        }
        for &rate in out.rates.data() {
            prop_assert!((0.0..=1.0).contains(&rate));
        }
    }

    #[test]
    fn stsu_logits_equal_spiking_logits(seed in any::<u64>()) {
        let mut r = rng(seed);
        let hidden = 1 + (seed % 3) as usize;
        let t = 1 + (seed / 3 % 6) as usize;
        let net = random_network(random_spec(&mut r, hidden, t, MappingKind::Stsu, seed % 2 == 0), &mut r);
        let x = batch_for(&net, 3, &mut r);
        let snn = snn_forward(&net, &x).unwrap();
        for c in &snn.counts {
            prop_assert!(c.counts().iter().all(|&v| v as usize <= t));
        }
        let ann = ann_forward(&net, &x, &snn.counts).unwrap();
        prop_assert_eq!(ann.logits, snn.logits);
    }

    #[test]
    fn folded_steps_sum_to_normalized_activation(
        seed in any::<u64>(),
        t in prop::sample::select(vec![1usize, 2, 5, 8]),
    ) {
        let mut r = rng(seed);
        let (c, k, n) = (4, 5, 3);
        let w = rand_tensor(&[c, k], -1.0, 1.0, &mut r);
        let b = rand_tensor(&[c], -0.5, 0.5, &mut r);
        let mut bn = BnState::new(c, &BnConfig::default());
        bn.gamma.value = rand_tensor(&[c], 0.5, 1.5, &mut r);
        bn.beta.value = rand_tensor(&[c], -0.5, 0.5, &mut r);
        bn.mu_ema = rand_tensor(&[c], -0.5, 0.5, &mut r).data().to_vec();
        bn.sigma_ema = rand_tensor(&[c], 0.5, 2.0, &mut r).data().to_vec();
        let xs: Vec<Tensor> = (0..t).map(|_| rand_tensor(&[n, k], 0.0, 1.0, &mut r)).collect();
        let (ws, bs) = fold_weights(&w, &b, &bn, t).unwrap();
        let mut lhs = vec![0.0f64; n * c];
        for x in &xs {
            for (a, v) in lhs.iter_mut().zip(fc_forward(x, &ws, &bs).unwrap().data()) {
                *a += *v as f64;
            }
        }
        let mut sum = Tensor::zeros(&[n, k]);
        for x in &xs {
            sum = sum.zip_map(x, "sum", |a, b| a + b).unwrap();
        }
        let rhs = to_f64(&bn_forward(&fc_forward(&sum, &w, &b).unwrap(), &bn).unwrap());
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        prop_assert!(norm(&diff) <= 1e-5 * norm(&rhs).max(1.0), "{} vs {}", norm(&diff), norm(&rhs));
    }

    #[test]
    fn ata_never_lowers_a_threshold(
        v in 0.01f32..10.0,
        mean in 0.0f64..8.0,
        tau in 0.01f32..1.0,
        alpha in 0.0f32..1.0,
        eps in 0.0f32..1.0,
    ) {
        let cfg = AtaConfig { enabled: true, tau, alpha, epsilon: eps };
        let next = ata_update(v, mean, &cfg);
        prop_assert!(next >= v);
        prop_assert!(next == v || next == v * cfg.growth_factor());
        prop_assert_eq!(next > v, mean > eps as f64);
    }

    #[test]
    fn noisy_mass_is_bounded_by_window(
        window in 1usize..8,
        cells in prop::collection::vec((0u32..8, -1.0f32..1.0), 1..40),
    ) {
        let counts: Vec<u32> = cells.iter().map(|&(c, _)| c.min(window as u32)).collect();
        let relu: Vec<f32> = cells.iter().map(|&(_, r)| r.max(0.0)).collect();
        let n = counts.len();
        let m = noisy_spike_mass(
            &SpikeCounts::from_counts(&[n], counts, window).unwrap(),
            &Tensor::new(vec![n], relu).unwrap(),
        ).unwrap();
        prop_assert!(m.spikes <= (window * m.positions) as u64);
        if m.positions > 0 {
            prop_assert!(m.mean >= 1.0 && m.mean <= window as f64);
        } else {
            prop_assert_eq!(m.mean, 0.0);
        }
    }

    #[test]
    fn energy_ratio_scales_and_orders(
        a in prop::collection::vec(1.0f64..1e6, 2..6),
        rates in prop::collection::vec(0.0f64..3.0, 6),
        k in 0.1f64..10.0,
        bump in 0.01f64..1.0,
    ) {
        let l = a.len();
        let mut s: Vec<f64> = (0..l - 1).map(|i| rates[i] * a[i]).collect();
        s.push(a[l - 1]);
        let m = OpsModel::default();
        let base = energy_ratio(&a, &s, &m).unwrap();
        let scaled = energy_ratio(&a, &s, &OpsModel { e_mac: k * m.e_mac, e_add: k * m.e_add }).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9 * base);
        let mut more = s.clone();
        more[0] += bump * a[0];
        prop_assert!(energy_ratio(&a, &more, &m).unwrap() < base);
        let silent: Vec<f64> = (0..l).map(|i| if i + 1 == l { a[i] } else { 0.0 }).collect();
        let closed = a.iter().sum::<f64>() / a[l - 1];
        prop_assert!((energy_ratio(&a, &silent, &m).unwrap() - closed).abs() <= 1e-9 * closed);
    }

    #[test]
    fn first_adam_step_moves_by_at_most_lr(
        vals in prop::collection::vec((-2.0f32..2.0, -5.0f32..5.0), 1..16),
        lr in 1e-4f32..1e-1,
    ) {
        let (v, g): (Vec<f32>, Vec<f32>) = vals.into_iter().unzip();
        let n = v.len();
        let mut p = GradPair::new(Tensor::new(vec![n], v.clone()).unwrap());
        p.grad = Tensor::new(vec![n], g.clone()).unwrap();
        let mut mom = AdamMoments::new(n);
        adam_step(&mut p, &mut mom, &AdamConfig::default(), lr, 1).unwrap();
        for ((&before, &after), &gi) in v.iter().zip(p.value.data()).zip(&g) {
            let d = after - before;
            prop_assert!(d.abs() <= lr * 1.0001 + 1e-6);
            if gi.abs() > 1e-3 {
                prop_assert!(d * gi < 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), conv in any::<bool>()) {
        let mut r = rng(seed);
        let mapping = if seed % 2 == 0 { MappingKind::Resu } else { MappingKind::Stsu };
        let t = 1 + (seed % 6) as usize;
        let net = random_network(random_spec(&mut r, 2, t, mapping, conv), &mut r);
        let bytes = to_bytes(&net, None).unwrap();
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.network, &net);
        prop_assert_eq!(to_bytes(&back.network, None).unwrap(), bytes);
    }

    #[test]
    fn config_toml_round_trip(
        seed in any::<u64>(),
        epochs in 1usize..100,
        batch in 1usize..256,
        t in 1usize..16,
        lr in 1e-5f32..1e-1,
        stbp in any::<bool>(),
        ata in any::<bool>(),
    ) {
        let mut cfg = ExperimentConfig::default();
        cfg.train.seed = seed;
        cfg.train.epochs = epochs;
        cfg.train.batch_size = batch;
        cfg.train.adam.lr = lr;
        cfg.train.ata.enabled = ata;
        cfg.train.trainer = if stbp { TrainerKind::Stbp } else { TrainerKind::S2a };
        cfg.network.time_steps = t;
        let text = cfg.to_toml_string().unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }
}
