use chronosynth_core::autograd::Var;
use chronosynth_core::data::{PatchSpec, PreparedSample};
use chronosynth_core::discriminator::Discriminator;
use chronosynth_core::nn::{randn, ParamStore};
use chronosynth_core::tensor::Tensor;
use chronosynth_core::training::{l1_loss, loss_discriminator, loss_generator, r1_penalty, TrainState};
use chronosynth_core::{Error, MapperVariant, ModelConfig, TrainConfig};
use proptest::prelude::{prop_assert, proptest, ProptestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LN2: f64 = std::f64::consts::LN_2;

fn scalar(v: f64) -> Var<f64> {
    Var::constant(Tensor::from_f64(&[1], &[v]))
}

fn filled(shape: &[usize], v: f64) -> Var<f64> {
    Var::constant(Tensor::full(shape, v))
}

#[test]
fn generator_loss_values() {
    let real = filled(&[1, 3, 4, 4], 0.2);
    let same = loss_generator(&scalar(0.0), &real, &real, 100.0).value().item();
    assert!((same - LN2).abs() < 1e-12);
    assert_eq!(l1_loss(&real, &real).value().item(), 0.0);
    let fake = filled(&[1, 3, 4, 4], 0.3);
    let off = loss_generator(&scalar(0.0), &fake, &real, 100.0).value().item();
    assert!((off - (LN2 + 10.0)).abs() < 1e-9, "{off}");
}

#[test]
fn discriminator_loss_values() {
    let zero = loss_discriminator(&scalar(0.0), &scalar(0.0)).value().item();
    assert!((zero - 2.0 * LN2).abs() < 1e-12);
    let v = loss_discriminator(&scalar(1.0), &scalar(-1.0)).value().item();
    // 2 * ln(1 + e^-1)
    assert!((v - 0.626_523_8).abs() < 1e-6, "{v}");
    let sat = loss_discriminator(&scalar(60.0), &scalar(-60.0)).value().item();
    assert!(sat >= 0.0 && sat < 1e-20);
}

#[test]
fn r1_of_constant_discriminator_is_zero() {
    let real = Tensor::<f64>::full(&[2, 3, 4, 4], 0.5);
    let r1 = r1_penalty(&real, 10.0, |x| x.sum_axis(3).sum_axis(2).sum_axis(1).scale(0.0).add_scalar(3.0));
    assert_eq!(r1.value().item(), 0.0);
}

#[test]
fn r1_of_linear_discriminator_is_half_weight_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = randn::<f64, _>(&mut rng, &[1, 3, 4, 4]);
    let norm2: f64 = a.data().iter().map(|v| v * v).sum();
    for b in [1usize, 3] {
        let real = randn::<f64, _>(&mut rng, &[b, 3, 4, 4]);
        let av = Var::constant(a.clone());
        let r1 = r1_penalty(&real, 10.0, |x| x.mul_bcast(&av).sum_axis(3).sum_axis(2).sum_axis(1)).value().item();
        assert!((r1 - 5.0 * norm2).abs() < 1e-9 * norm2, "{r1} vs {}", 5.0 * norm2);
    }
}

fn tiny() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        c_fea: 8,
        hidden: 8,
        z_dim: 8,
        mapping_layers: 1,
        modfc_layers: 2,
        disc_base_channels: 4,
        disc_max_channels: 8,
        ..ModelConfig::desk()
    }
}

#[test]
fn r1_matches_finite_difference_gradient_norm() {
    let cfg = ModelConfig { image_size: 8, ..tiny() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let d = Discriminator::new(&cfg, &mut store, &mut rng).unwrap();
    let real = randn::<f64, _>(&mut rng, &[2, 3, 8, 8]);
    let cond = Var::constant(randn::<f64, _>(&mut rng, &[2, 6, 8, 8]));
    let coords = Var::constant(d.coord_grid::<f64>(&[PatchSpec::full(8); 2], &[0.0, 0.5]));
    let p = store.bind(false);
    let score = |x: &Tensor<f64>| -> Vec<f64> { d.forward(&p, &Var::constant(x.clone()), &cond, &coords).unwrap().value().data().to_vec() };
    let weight = 10.0;
    let r1 = r1_penalty(&real, weight, |x| d.forward(&p, x, &cond, &coords).unwrap()).value().item();

    // Central differences of each sample's score over its own input.
    let h = 1e-6;
    let mut sq = 0.0;
    for i in 0..real.numel() {
        let b = i / (3 * 64);
        let mut plus = real.clone();
        plus.data_mut()[i] += h;
        let mut minus = real.clone();
        minus.data_mut()[i] -= h;
        let g = (score(&plus)[b] - score(&minus)[b]) / (2.0 * h);
        sq += g * g;
    }
    let oracle = weight / 2.0 * sq / 2.0;
    assert!(oracle > 0.0);
    assert!((r1 - oracle).abs() <= 1e-3 * oracle, "{r1} vs {oracle}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn r1_is_never_negative(seed in 0u64..1000, w in 0.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Var::constant(randn::<f64, _>(&mut rng, &[1, 2, 3]));
        let real = randn::<f64, _>(&mut rng, &[2, 2, 3]);
        let r1 = r1_penalty(&real, w, |x| x.mul_bcast(&a).sin().sum_axis(2).sum_axis(1)).value().item();
        prop_assert!(r1 >= 0.0);
    }
}

#[test]
fn zero_lambda_removes_l1_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let real = Var::constant(randn::<f64, _>(&mut rng, &[2, 3, 4, 4]));
    let fake_t = randn::<f64, _>(&mut rng, &[2, 3, 4, 4]);
    let d_fake_t = randn::<f64, _>(&mut rng, &[2]);
    let grads = |lambda: f64, with_l1: bool| {
        let fake = Var::leaf(fake_t.clone());
        let d_fake = fake.sum_axis(3).sum_axis(2).sum_axis(1).reshape(&[2]).scale(0.01).add(&Var::constant(d_fake_t.clone()));
        let loss = if with_l1 { loss_generator(&d_fake, &fake, &real, lambda) } else { d_fake.neg().softplus().mean_all() };
        chronosynth_core::autograd::grad(&loss, &[&fake], false).pop().flatten().unwrap().value().clone()
    };
    let adversarial_only = grads(0.0, false);
    assert_eq!(grads(0.0, true).data(), adversarial_only.data());
    assert_ne!(grads(100.0, true).data(), adversarial_only.data());
}

fn random_data(cfg: &ModelConfig, n: usize, seed: u64) -> Vec<PreparedSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = cfg.image_size;
    (0..n)
        .map(|i| {
            let u = |rng: &mut ChaCha8Rng, c: usize| Tensor::from_vec(&[c, h, h], (0..c * h * h).map(|_| rng.random_range(-1.0f32..1.0)).collect());
            PreparedSample {
                location_id: format!("loc_{i}"),
                input: u(&mut rng, cfg.input_channels()),
                target: Some(u(&mut rng, cfg.channels)),
                t: (i % 3) as f64,
                t_raw: 2.0 * (i % 3) as f64,
                t_ref_raw: 0.0,
            }
        })
        .collect()
}

fn small_train(seed: u64) -> TrainConfig {
    TrainConfig { batch_size: 2, seed, ..TrainConfig::default() }
}

#[test]
fn one_step_changes_both_networks() {
    let cfg = tiny();
    let data = random_data(&cfg, 3, 4);
    let mut state = TrainState::new(&cfg, &small_train(0)).unwrap();
    let g0: Vec<_> = state.g_params.iter().map(|(_, _, v)| v.clone()).collect();
    let d0: Vec<_> = state.d_params.iter().map(|(_, _, v)| v.clone()).collect();
    let s = state.train_step(&data).unwrap();
    assert_eq!(s.step, 0);
    assert!(s.g_loss.is_finite() && s.d_loss.is_finite() && s.l1 > 0.0);
    assert!(state.g_params.iter().zip(&g0).any(|((_, _, a), b)| a.data() != b.data()));
    assert!(state.d_params.iter().zip(&d0).any(|((_, _, a), b)| a.data() != b.data()));
    assert_eq!(state.step, 1);
}

#[test]
fn r1_runs_on_its_schedule() {
    let cfg = ModelConfig { image_size: 8, ..tiny() };
    let data = random_data(&cfg, 2, 5);
    let mut state = TrainState::new(&cfg, &small_train(1)).unwrap();
    for step in 0..33u64 {
        let s = state.train_step(&data).unwrap();
        assert!(s.r1 >= 0.0);
        assert_eq!(s.r1 != 0.0, step % 16 == 0, "step {step}: r1 {}", s.r1);
    }
    let off = TrainConfig { r1_weight: 0.0, ..small_train(1) };
    let mut state = TrainState::new(&cfg, &off).unwrap();
    assert_eq!(state.train_step(&data).unwrap().r1, 0.0);
}

#[test]
fn patch_training_at_full_size_matches_full_training() {
    let full = ModelConfig { variant: MapperVariant::Ea, ..tiny() };
    let patched = ModelConfig { patch_size: Some(16), ..full.clone() };
    let data = random_data(&full, 3, 6);
    let mut a = TrainState::new(&full, &small_train(2)).unwrap();
    let mut b = TrainState::new(&patched, &small_train(2)).unwrap();
    for _ in 0..3 {
        assert_eq!(a.train_step(&data).unwrap(), b.train_step(&data).unwrap());
    }
    for ((_, _, x), (_, _, y)) in a.g_params.iter().zip(b.g_params.iter()) {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn patch_training_runs_on_crops() {
    for variant in [MapperVariant::Ea, MapperVariant::Ead] {
        let cfg = ModelConfig { variant, patch_size: Some(8), ..tiny() };
        let data = random_data(&cfg, 2, 7);
        let mut state = TrainState::new(&cfg, &small_train(3)).unwrap();
        for _ in 0..2 {
            let s = state.train_step(&data).unwrap();
            assert!(s.g_loss.is_finite());
        }
    }
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let cfg = tiny();
    let data = random_data(&cfg, 4, 8);
    let train = TrainConfig { r1_every: 2, ..small_train(9) };
    let mut straight = TrainState::new(&cfg, &train).unwrap();
    let mut first = TrainState::new(&cfg, &train).unwrap();
    let mut expected = Vec::new();
    for _ in 0..6 {
        expected.push(straight.train_step(&data).unwrap());
    }
    let mut got = Vec::new();
    for _ in 0..3 {
        got.push(first.train_step(&data).unwrap());
    }
    let snap = first.snapshot();
    drop(first);
    let mut resumed = TrainState::restore(&snap, None).unwrap();
    for _ in 0..3 {
        got.push(resumed.train_step(&data).unwrap());
    }
    assert_eq!(got, expected);
}

#[test]
fn restore_rejects_other_model() {
    let cfg = tiny();
    let state = TrainState::new(&cfg, &small_train(0)).unwrap();
    let mut snap = state.snapshot();
    snap.model.c_fea = 16;
    assert!(matches!(TrainState::restore(&snap, None), Err(Error::ConfigMismatch(_))));
    let mut snap = state.snapshot();
    snap.tensors.pop();
    assert!(matches!(TrainState::restore(&snap, None), Err(Error::ConfigMismatch(_))));
    let mut snap = state.snapshot();
    snap.tensors.push(("stray".into(), Tensor::zeros(&[1])));
    assert!(matches!(TrainState::restore(&snap, None), Err(Error::ConfigMismatch(_))));
}

#[test]
fn non_finite_input_names_the_term() {
    let cfg = tiny();
    let mut data = random_data(&cfg, 1, 10);
    data[0].target.as_mut().unwrap().data_mut()[0] = f32::NAN;
    let mut state = TrainState::new(&cfg, &small_train(0)).unwrap();
    match state.train_step(&data) {
        Err(Error::NonFinite { term, step: 0 }) => assert!(["d_loss", "r1", "l1", "g_loss"].contains(&term)),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn train_step_rejects_missing_ground_truth() {
    let cfg = tiny();
    let mut data = random_data(&cfg, 1, 11);
    data[0].target = None;
    let mut state = TrainState::new(&cfg, &small_train(0)).unwrap();
    assert!(state.train_step(&data).is_err());
    assert!(state.train_step(&[]).is_err());
}
