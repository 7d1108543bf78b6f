use std::rc::Rc;

use chronosynth_core::autograd::Var;
use chronosynth_core::data::PatchSpec;
use chronosynth_core::generator::{Generator, ModFc, PositionalEncoder, SelfAttention};
use chronosynth_core::nn::{randn, ParamStore};
use chronosynth_core::tensor::Tensor;
use chronosynth_core::{MapperVariant, ModelConfig, Preset};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(variant: MapperVariant) -> ModelConfig {
    ModelConfig {
        image_size: 16,
        c_fea: 16,
        hidden: 16,
        z_dim: 8,
        mapping_layers: 2,
        modfc_layers: 4,
        variant,
        ..ModelConfig::desk()
    }
}

fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Var<f32> {
    Var::constant(randn::<f32, _>(rng, shape).map(|v| v.clamp(-1.0, 1.0)))
}

#[test]
fn ead_shapes_at_desk_scale() {
    let cfg = ModelConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let g = Generator::new(&cfg, &mut store, &mut rng).unwrap();
    let p = store.bind(false);
    let x = random_input(&mut rng, &[1, 6, 64, 64]);
    let (y, trace) = g.mapper.forward_traced(&p, &x).unwrap();
    assert_eq!(trace.bottleneck, vec![1, 32, 16, 16]);
    assert_eq!(y.shape(), &[1, 32, 64, 64]);
    let bad = random_input(&mut rng, &[1, 6, 30, 30]);
    assert!(g.mapper.forward(&p, &bad).is_err());
}

#[test]
fn every_variant_preserves_resolution() {
    for variant in [
        MapperVariant::Ead,
        MapperVariant::Ea,
        MapperVariant::EdOnly,
        MapperVariant::AOnly,
        MapperVariant::EOnly,
        MapperVariant::LinearF,
    ] {
        let cfg = tiny(variant);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        let g = Generator::new(&cfg, &mut store, &mut rng).unwrap();
        let y = g.mapper.forward(&store.bind(false), &random_input(&mut rng, &[2, 6, 16, 16])).unwrap();
        assert_eq!(y.shape(), &[2, 16, 16, 16], "{variant:?}");
    }
}

#[test]
fn ea_with_zero_convs_is_the_projection() {
    let cfg = tiny(MapperVariant::Ea);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let g = Generator::new(&cfg, &mut store, &mut rng).unwrap();
    for conv in g.mapper.ea_convs().unwrap() {
        let shape = store.get(conv.weight).shape().to_vec();
        store.set(conv.weight, Tensor::zeros(&shape));
    }
    // non-zero gamma: the attention branch must still vanish on a zero input
    let attn = g.mapper.attention().unwrap();
    store.set(attn.gamma, Tensor::from_f64(&[1], &[0.7]));
    store.set(attn.value.bias.unwrap(), Tensor::zeros(&[16]));
    let p = store.bind(false);
    let x = Var::constant(randn::<f64, _>(&mut rng, &[1, 6, 16, 16]));
    let y = g.mapper.forward(&p, &x).unwrap();
    let proj = g.mapper.ea_projection().unwrap().forward(&p, &x.reshape(&[1, 6, 256])).reshape(&[1, 16, 16, 16]);
    assert_eq!(y.value().data(), proj.value().data());
}

fn attention_fixture(seed: u64, channels: usize) -> (SelfAttention, ParamStore<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let attn = SelfAttention::new(&mut store, &mut rng, "a", channels).unwrap();
    (attn, store, rng)
}

#[test]
fn attention_with_zero_gamma_is_identity() {
    let (attn, store, mut rng) = attention_fixture(3, 16);
    let x = Var::constant(randn::<f64, _>(&mut rng, &[2, 16, 4, 5]));
    let y = attn.forward(&store.bind(false), &x);
    assert_eq!(y.value().data(), x.value().data());
}

#[test]
fn attention_rejects_bad_channels() {
    let mut store = ParamStore::<f64>::new();
    assert!(SelfAttention::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), "a", 12).is_err());
}

#[test]
fn attention_single_position_closed_form() {
    let (attn, mut store, _) = attention_fixture(4, 8);
    store.set(attn.gamma, Tensor::from_f64(&[1], &[0.35]));
    let x: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.3).collect();
    let xv = Var::constant(Tensor::from_vec(&[1, 8, 1, 1], x.clone()));
    let y = attn.forward(&store.bind(false), &xv);
    // with one position softmax is exactly 1, so y = gamma * V(x) + x
    let w = store.get(attn.value.weight).data().to_vec();
    let b = store.get(attn.value.bias.unwrap()).data().to_vec();
    let scale = 1.0 / (8.0f64).sqrt();
    for o in 0..8 {
        let v: f64 = (0..8).map(|i| w[o * 8 + i] * scale * x[i]).sum::<f64>() + b[o];
        assert!((y.value().data()[o] - (0.35 * v + x[o])).abs() < 1e-12);
    }
}

#[test]
fn attention_weights_are_normalized() {
    let (attn, store, mut rng) = attention_fixture(5, 16);
    let x = Var::constant(randn::<f64, _>(&mut rng, &[2, 16, 3, 4]));
    let a = attn.weights(&store.bind(false), &x);
    assert_eq!(a.shape(), &[2, 12, 12]);
    for row in a.value().data().chunks(12) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

fn encoder_fixture(seed: u64) -> (PositionalEncoder, ParamStore<f64>) {
    let mut store = ParamStore::<f64>::new();
    let enc = PositionalEncoder::new(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), 8, 16, 12, true);
    (enc, store)
}

#[test]
fn encoder_normalization_endpoints() {
    let (enc, _) = encoder_fixture(0);
    assert_eq!(enc.normalized(0, 0, 0.5), [-1.0, -1.0, 0.5]);
    assert_eq!(enc.normalized(15, 11, 2.0), [1.0, 1.0, 2.0]);
    let no_time = PositionalEncoder { use_time: false, ..enc };
    assert_eq!(no_time.normalized(3, 4, 5.0)[2], 0.0);
}

#[test]
fn encoder_dimension_and_zero_frequencies() {
    let (enc, mut store) = encoder_fixture(1);
    let px = Rc::new(vec![0, 5, 191]);
    let e = enc.encode(&store.bind(false), &[px.clone()], &[1.0]).unwrap();
    assert_eq!(e.shape(), &[1, 16, 3]);
    store.set(enc.b_fo, Tensor::zeros(&[3, 8]));
    let e = enc.encode(&store.bind(false), &[px], &[1.0]).unwrap();
    assert!(e.value().data()[..8 * 3].iter().all(|&v| v == 0.0));
    assert!(enc.encode(&store.bind(false), &[Rc::new(vec![192])], &[0.0]).is_err());
}

#[test]
fn patch_lookups_match_full_grid() {
    let (enc, store) = encoder_fixture(2);
    let p = store.bind(false);
    let all: Vec<usize> = (0..16 * 12).collect();
    let full = enc.encode(&p, &[Rc::new(all)], &[0.25]).unwrap();
    let win = PatchSpec { size: 4, top: 8, left: 4 };
    let px = enc.window_pixels(&win).unwrap();
    let patch = enc.encode(&p, &[Rc::new(px.clone())], &[0.25]).unwrap();
    for (k, &abs) in px.iter().enumerate() {
        for c in 0..16 {
            assert_eq!(patch.value().data()[c * 16 + k], full.value().data()[c * 192 + abs]);
        }
    }
}

proptest! {
    #[test]
    fn fourier_half_is_bounded_and_lipschitz_in_time(seed in 0u64..200, t1 in -3.0f64..3.0, t2 in -3.0f64..3.0) {
        let (enc, store) = encoder_fixture(seed);
        let p = store.bind(false);
        let px = Rc::new(vec![0usize, 17, 100, 191]);
        let a = enc.encode(&p, &[px.clone()], &[t1]).unwrap();
        let b = enc.encode(&p, &[px], &[t2]).unwrap();
        let b_fo = store.get(enc.b_fo).data().to_vec();
        // row of B_fo^T for output channel c is (b_fo[c], b_fo[8 + c], b_fo[16 + c])
        let max_row = (0..8).map(|c| (0..3).map(|k| b_fo[k * 8 + c].powi(2)).sum::<f64>().sqrt()).fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for i in 0..8 * 4 {
            prop_assert!(a.value().data()[i].abs() <= 1.0);
            worst = worst.max((a.value().data()[i] - b.value().data()[i]).abs());
        }
        prop_assert!(worst <= max_row * (t1 - t2).abs() + 1e-12);
    }
}

#[test]
fn style_mapping_is_deterministic_and_depth_matches() {
    let cfg = ModelConfig::desk();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::<f32>::new();
    let g = Generator::new(&cfg, &mut store, &mut rng).unwrap();
    assert_eq!(g.synthesizer().unwrap().mapping.layers.len(), 3);
    let p = store.bind(false);
    let z = Var::constant(g.sample_z::<f32, _>(&mut rng, 2));
    let w1 = g.map_style(&p, &z).unwrap().unwrap();
    let w2 = g.map_style(&p, &z).unwrap().unwrap();
    assert_eq!(w1.value().data(), w2.value().data());
    let (a, b) = w1.value().data().split_at(64);
    assert_ne!(a, b);
    assert!(g.map_style(&p, &Var::constant(Tensor::<f32>::zeros(&[1, 7]))).is_err());
}

fn modfc_fixture(demod: bool) -> (ModFc, ParamStore<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    let layer = ModFc::new(&mut store, &mut rng, "m", 6, 5, 4, demod, true);
    (layer, store, rng)
}

#[test]
fn modfc_demodulation_is_scale_invariant() {
    let (layer, store, mut rng) = modfc_fixture(true);
    let p = store.bind(false);
    let s = Var::constant(randn::<f64, _>(&mut rng, &[2, 6]));
    let a = layer.modulated_weight(&p, &s);
    let b = layer.modulated_weight(&p, &s.scale(3.7));
    for (x, y) in a.value().data().iter().zip(b.value().data()) {
        assert!((x - y).abs() < 1e-5);
    }
    // rows have unit norm up to the epsilon
    for row in a.value().data().chunks(6) {
        assert!((row.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn modfc_neutral_modulation_is_plain_linear() {
    let (layer, store, _) = modfc_fixture(false);
    let p = store.bind(false);
    let ones = Var::constant(Tensor::ones(&[1, 6]));
    let w = layer.modulated_weight(&p, &ones);
    assert_eq!(w.value().data(), layer.linear.effective_weight(&p).value().data());
}

#[test]
fn modfc_zero_input_gives_bias() {
    let (layer, mut store, mut rng) = modfc_fixture(true);
    let bias = layer.linear.bias.unwrap();
    store.set(bias, Tensor::from_f64(&[5], &[0.5, 0.1, 0.2, 0.3, 0.4]));
    let p = store.bind(false);
    let w = Var::constant(randn::<f64, _>(&mut rng, &[1, 4]));
    let y = layer.forward(&p, &Var::constant(Tensor::zeros(&[1, 6, 3])), &w);
    // positive biases pass the LeakyReLU unchanged
    assert_eq!(&y.value().data()[..3], &[0.5, 0.5, 0.5]);
    assert_eq!(&y.value().data()[12..], &[0.4, 0.4, 0.4]);
}

fn conditioned(cfg: &ModelConfig, seed: u64) -> (Generator, ParamStore<f32>, Var<f32>, Var<f32>, Vec<PatchSpec>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f32>::new();
    let g = Generator::new(cfg, &mut store, &mut rng).unwrap();
    let s = cfg.train_size();
    let cat = random_input(&mut rng, &[1, cfg.input_channels(), s, s]);
    let z = Var::constant(g.sample_z::<f32, _>(&mut rng, 1));
    (g, store, cat, z, vec![PatchSpec::full(s)], vec![1.5])
}

#[test]
fn singleton_queries_match_the_full_grid() {
    for seed in 0..3 {
        let cfg = tiny(MapperVariant::Ead);
        let (g, store, cat, z, wins, times) = conditioned(&cfg, seed);
        let p = store.bind(false);
        let cond = g.condition(&p, &cat, &wins, &times, &z).unwrap();
        let full = g.synthesize(&p, &cond, None).unwrap();
        for idx in [0usize, 37, 255] {
            let one = g.synthesize(&p, &cond, Some(&[idx])).unwrap();
            for c in 0..3 {
                assert_eq!(one.value().data()[c].to_bits(), full.value().data()[c * 256 + idx].to_bits());
            }
        }
    }
}

#[test]
fn permuted_queries_permute_outputs() {
    let cfg = tiny(MapperVariant::Ea);
    let (g, store, cat, z, wins, times) = conditioned(&cfg, 9);
    let p = store.bind(false);
    let cond = g.condition(&p, &cat, &wins, &times, &z).unwrap();
    let order = [5usize, 200, 17, 99, 3];
    let rev: Vec<usize> = order.iter().rev().copied().collect();
    let a = g.synthesize(&p, &cond, Some(&order)).unwrap();
    let b = g.synthesize(&p, &cond, Some(&rev)).unwrap();
    for c in 0..3 {
        for k in 0..5 {
            assert_eq!(a.value().data()[c * 5 + k], b.value().data()[c * 5 + 4 - k]);
        }
    }
    assert!(g.synthesize(&p, &cond, Some(&[256])).is_err());
}

#[test]
fn head_count_and_determinism() {
    let cfg = ModelConfig { modfc_layers: 14, ..tiny(MapperVariant::Ead) };
    let (g, store, cat, z, wins, times) = conditioned(&cfg, 10);
    let p = store.bind(false);
    let (y1, trace) = g.forward_traced(&p, &cat, &wins, &times, &z).unwrap();
    assert_eq!(trace.heads, 7);
    assert_eq!(trace.encoding_dim, 32);
    let (y2, _) = g.forward_traced(&p, &cat, &wins, &times, &z).unwrap();
    assert_eq!(y1.value().data(), y2.value().data());
    assert_eq!(y1.shape(), &[1, 3, 16, 16]);
}

#[test]
fn presets_build_and_run() {
    for preset in Preset::ALL {
        let cfg = preset.apply(&tiny(MapperVariant::Ead));
        let (g, store, cat, z, wins, times) = conditioned(&cfg, 11);
        let y = g.forward(&store.bind(false), &cat, &wins, &times, &z).unwrap();
        assert_eq!(y.shape(), &[1, 3, 16, 16], "{preset}");
        assert_eq!(g.synthesizer().is_none(), preset == Preset::NoGp);
    }
}
