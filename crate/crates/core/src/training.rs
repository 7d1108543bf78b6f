//! Losses, R1 regularization and the alternating GAN update.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{grad, Var};
use crate::config::{ModelConfig, TrainConfig};
use crate::data::{crop_chw, stack_chw, PatchSpec, PreparedSample};
use crate::discriminator::Discriminator;
use crate::error::{invalid, Error, Result};
use crate::generator::Generator;
use crate::nn::{Bound, ParamStore};
use crate::optim::{Adam, AdamConfig};
use crate::real::{c, Real};
use crate::tensor::Tensor;

/// `mean softplus(-d_fake) + lambda * mean |real - fake|`.
pub fn loss_generator<T: Real>(d_fake: &Var<T>, fake: &Var<T>, real: &Var<T>, lambda: f64) -> Var<T> {
    let adv = d_fake.neg().softplus().mean_all();
    if lambda == 0.0 {
        return adv;
    }
    adv.add(&l1_loss(fake, real).scale(c(lambda)))
}

pub fn l1_loss<T: Real>(fake: &Var<T>, real: &Var<T>) -> Var<T> {
    assert_eq!(fake.shape(), real.shape(), "L1 operands must share a shape");
    fake.sub(real).abs().mean_all()
}

/// `mean softplus(-d_real) + mean softplus(d_fake)`.
pub fn loss_discriminator<T: Real>(d_real: &Var<T>, d_fake: &Var<T>) -> Var<T> {
    d_real.neg().softplus().mean_all().add(&d_fake.softplus().mean_all())
}

/// `(weight / 2) * mean_b ||grad_b||^2` from per-sample input gradients
/// `[B, ...]`.
pub fn r1_from_grad<T: Real>(input_grad: &Var<T>, weight: f64) -> Var<T> {
    let b = input_grad.shape()[0];
    input_grad.square().sum_all().scale(c(weight / (2.0 * b as f64)))
}

/// R1 penalty of `disc` at `real` (`[B, ...]`), differentiable in the
/// discriminator's parameters.
pub fn r1_penalty<T: Real>(real: &Tensor<T>, weight: f64, disc: impl Fn(&Var<T>) -> Var<T>) -> Var<T> {
    let x = Var::leaf(real.clone());
    let scores = disc(&x);
    match grad(&scores.sum_all(), &[&x], true).pop().flatten() {
        Some(g) => r1_from_grad(&g, weight),
        None => Var::constant(Tensor::zeros(&[1])),
    }
}

/// Scalars reported after every step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepScalars {
    pub step: u64,
    pub g_loss: f64,
    pub d_loss: f64,
    pub l1: f64,
    pub r1: f64,
}

/// Serializable position of the training RNG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to resume training bit-identically.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: u64,
    pub rng: RngState,
    pub g_opt_steps: u64,
    pub d_opt_steps: u64,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

pub struct TrainState {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_params: ParamStore<f32>,
    pub d_params: ParamStore<f32>,
    pub g_opt: Adam<f32>,
    pub d_opt: Adam<f32>,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

fn adam_config(train: &TrainConfig) -> AdamConfig {
    AdamConfig { lr: train.learning_rate, beta0: train.beta0, beta1: train.beta1, eps: train.epsilon }
}

impl TrainState {
    pub fn new(model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        model.validate()?;
        train.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let mut g_params = ParamStore::new();
        let generator = Generator::new(model, &mut g_params, &mut rng)?;
        let mut d_params = ParamStore::new();
        let discriminator = Discriminator::new(model, &mut d_params, &mut rng)?;
        Ok(Self {
            model: model.clone(),
            train: train.clone(),
            g_opt: Adam::new(adam_config(train), &g_params),
            d_opt: Adam::new(adam_config(train), &d_params),
            generator,
            discriminator,
            g_params,
            d_params,
            step: 0,
            rng,
        })
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut tensors = Vec::new();
        for (store, opt) in [(&self.g_params, &self.g_opt), (&self.d_params, &self.d_opt)] {
            for (i, (_, name, value)) in store.iter().enumerate() {
                tensors.push((name.to_string(), value.clone()));
                tensors.push((format!("adam.m.{name}"), opt.m[i].clone()));
                tensors.push((format!("adam.v.{name}"), opt.v[i].clone()));
            }
        }
        Snapshot {
            model: self.model.clone(),
            train: self.train.clone(),
            step: self.step,
            rng: RngState::capture(&self.rng),
            g_opt_steps: self.g_opt.t,
            d_opt_steps: self.d_opt.t,
            tensors,
        }
    }

    /// Rebuilds a state from a snapshot; `train` may override schedule
    /// fields (e.g. `total_steps`) but the model must match.
    pub fn restore(snapshot: &Snapshot, train: Option<&TrainConfig>) -> Result<Self> {
        let train = train.unwrap_or(&snapshot.train);
        let mut state = Self::new(&snapshot.model, train)?;
        let mut by_name: alloc::collections::BTreeMap<&str, &Tensor<f32>> = alloc::collections::BTreeMap::new();
        for (name, t) in &snapshot.tensors {
            if by_name.insert(name.as_str(), t).is_some() {
                return Err(invalid!("checkpoint holds tensor '{name}' twice"));
            }
        }
        let mut take = |name: &str, expect: &[usize]| -> Result<Tensor<f32>> {
            let t = by_name.remove(name).ok_or_else(|| Error::ConfigMismatch(format!("checkpoint lacks tensor '{name}'")))?;
            if t.shape() != expect {
                return Err(Error::ConfigMismatch(format!("tensor '{name}' has shape {:?}, model expects {expect:?}", t.shape())));
            }
            Ok(t.clone())
        };
        for (store, opt) in [(&mut state.g_params, &mut state.g_opt), (&mut state.d_params, &mut state.d_opt)] {
            let ids: Vec<_> = store.iter().map(|(id, n, v)| (id, n.to_string(), v.shape().to_vec())).collect();
            for (i, (id, name, shape)) in ids.into_iter().enumerate() {
                store.set(id, take(&name, &shape)?);
                opt.m[i] = take(&format!("adam.m.{name}"), &shape)?;
                opt.v[i] = take(&format!("adam.v.{name}"), &shape)?;
            }
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::ConfigMismatch(format!("checkpoint tensor '{extra}' is not part of the model")));
        }
        state.g_opt.t = snapshot.g_opt_steps;
        state.d_opt.t = snapshot.d_opt_steps;
        state.step = snapshot.step;
        state.rng = snapshot.rng.restore();
        Ok(state)
    }

    /// Draws a batch (sample indices, then one window per sample).
    fn draw_batch(&mut self, data: &[PreparedSample]) -> Vec<(usize, PatchSpec)> {
        let n = self.model.image_size;
        let s = self.model.train_size();
        let idx: Vec<usize> = (0..self.train.batch_size).map(|_| self.rng.random_range(0..data.len())).collect();
        idx.into_iter()
            .map(|i| {
                let win = if s == n {
                    PatchSpec::full(n)
                } else {
                    PatchSpec { size: s, top: self.rng.random_range(0..=n - s), left: self.rng.random_range(0..=n - s) }
                };
                (i, win)
            })
            .collect()
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, data: &[PreparedSample]) -> Result<StepScalars> {
        if data.is_empty() {
            return Err(invalid!("training set is empty"));
        }
        if let Some(bad) = data.iter().find(|d| d.target.is_none()) {
            return Err(invalid!("training sample {} has no ground truth", bad.location_id));
        }
        let picks = self.draw_batch(data);
        let windows: Vec<PatchSpec> = picks.iter().map(|&(_, w)| w).collect();
        let times: Vec<f64> = picks.iter().map(|&(i, _)| data[i].t).collect();
        let inputs: Vec<Tensor<f32>> = picks.iter().map(|&(i, w)| crop_chw(&data[i].input, &w)).collect();
        let targets: Vec<Tensor<f32>> = picks.iter().map(|&(i, w)| crop_chw(data[i].target.as_ref().unwrap(), &w)).collect();
        let cat = stack_chw(&inputs);
        let real = stack_chw(&targets);
        let b = windows.len();
        let z = self.generator.sample_z::<f32, _>(&mut self.rng, b);
        self.step_on(&cat, &real, &windows, &times, &z)
    }

    /// The update on an explicit batch; `z` is `[B, Z]`.
    pub fn step_on(
        &mut self,
        cat: &Tensor<f32>,
        real: &Tensor<f32>,
        windows: &[PatchSpec],
        times: &[f64],
        z: &Tensor<f32>,
    ) -> Result<StepScalars> {
        let step = self.step;
        let ch = self.model.channels;
        let g_bound = self.g_params.bind(true);
        let cat_v = Var::constant(cat.clone());
        let fake = self.generator.forward(&g_bound, &cat_v, windows, times, &Var::constant(z.clone()))?;
        let d_cond = Var::constant(cat.narrow(1, 0, 2 * ch));
        let coords = Var::constant(self.discriminator.coord_grid::<f32>(windows, times));

        // Discriminator.
        let d_bound = self.d_params.bind(true);
        let disc = |p: &Bound<f32>, x: &Var<f32>| self.discriminator.forward(p, x, &d_cond, &coords);
        let d_fake = disc(&d_bound, &fake.detach())?;
        let with_r1 = self.train.r1_weight > 0.0 && step % self.train.r1_every == 0;
        let real_v = if with_r1 { Var::leaf(real.clone()) } else { Var::constant(real.clone()) };
        let d_real = disc(&d_bound, &real_v)?;
        let d_adv = loss_discriminator(&d_real, &d_fake);
        let mut d_total = d_adv.clone();
        let mut r1_value = 0.0;
        if with_r1 {
            let g = grad(&d_real.sum_all(), &[&real_v], true).pop().flatten();
            if let Some(g) = g {
                let r1 = r1_from_grad(&g, self.train.r1_weight);
                r1_value = r1.value().item() as f64;
                d_total = d_total.add(&r1.scale(c(self.train.r1_every as f64)));
            }
        }
        let d_loss = d_adv.value().item() as f64;
        check_finite("d_loss", d_loss, step)?;
        check_finite("r1", r1_value, step)?;
        let d_grads = param_grads(&d_total, &d_bound);
        drop(d_bound);
        self.d_opt.step(&mut self.d_params, &d_grads);

        // Generator against the updated discriminator.
        let d_const = self.d_params.bind(false);
        let d_fake_g = disc(&d_const, &fake)?;
        let real_c = Var::constant(real.clone());
        let l1 = l1_loss(&fake, &real_c).value().item() as f64;
        let g_loss_v = loss_generator(&d_fake_g, &fake, &real_c, self.train.lambda_l1);
        let g_loss = g_loss_v.value().item() as f64;
        check_finite("l1", l1, step)?;
        check_finite("g_loss", g_loss, step)?;
        let g_grads = param_grads(&g_loss_v, &g_bound);
        self.g_opt.step(&mut self.g_params, &g_grads);

        self.step += 1;
        Ok(StepScalars { step, g_loss, d_loss, l1, r1: r1_value })
    }
}

fn check_finite(term: &'static str, v: f64, step: u64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { term, step })
    }
}

fn param_grads<T: Real>(loss: &Var<T>, bound: &Bound<T>) -> Vec<Option<Tensor<T>>> {
    grad(loss, &bound.refs(), false).into_iter().map(|g| g.map(|g| g.value().clone())).collect()
}
