//! Optimization loops for the pixel-loss and adversarial regimes, with
//! exact resume from checkpoints.
//!
//! Samples are visited in a fresh seeded permutation every epoch; the last
//! batch of an epoch may be smaller. A run is a pure function of its seed,
//! configuration and dataset.

mod adam;
mod checkpoint;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{optim_record, param_records, Checkpoint, OptimRecord, TensorRecord, MAGIC, VERSION};

use crate::data::{psnr_from_mse, Dataset, Image};
use crate::error::{Error, Result};
use crate::mswinsr::SrModel;
use crate::nn::l1_loss;
use crate::rng::{stream, RngState, Stream};
use crate::tensor::Tensor;
use crate::ugswinsr::{discriminator_loss, generator_loss, Discriminator, GanLossConfig, Generator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    L1,
    Gan,
}

/// Learning-rate multiplier over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from `lr` towards 0 at the last step.
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub regime: Regime,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    /// Stops after this many steps instead of after `epochs`.
    pub max_steps: Option<u64>,
    /// Writes a checkpoint every this many steps; 0 only at the end.
    pub checkpoint_every: u64,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    /// Linear ramp of the learning rate over the first steps.
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lambda_pixel: f64,
    pub lambda_adv: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        let gan = GanLossConfig::default();
        Self {
            epochs: 100,
            batch_size: 20,
            seed: 0,
            regime: Regime::L1,
            eval_every: 1,
            max_steps: None,
            checkpoint_every: 0,
            lr: adam.lr,
            lr_schedule: LrSchedule::Constant,
            warmup_steps: 0,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            lambda_pixel: gan.lambda_pixel,
            lambda_adv: gan.lambda_adv,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Learning rate for the update taken at `step` (0-based) of `total`.
    pub fn lr_at(&self, step: u64, total: u64) -> f64 {
        let mut f = match self.lr_schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos()),
        };
        if step < self.warmup_steps {
            f *= (step + 1) as f64 / self.warmup_steps as f64;
        }
        self.lr * f
    }

    pub fn gan(&self) -> GanLossConfig {
        GanLossConfig {
            lambda_pixel: self.lambda_pixel,
            lambda_adv: self.lambda_adv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        self.adam().validate()?;
        if self.regime == Regime::Gan {
            self.gan().validate()?;
        }
        Ok(())
    }
}

/// Per-step losses, per-epoch means and validation scores.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// `(step, loss)`; the generator loss in the adversarial regime.
    pub loss: Vec<(u64, f64)>,
    /// `(step, discriminator loss)`; empty for the pixel-loss regime.
    pub loss_d: Vec<(u64, f64)>,
    /// Mean step loss of every completed epoch.
    pub epoch_loss: Vec<f64>,
    /// `(step, mean PSNR)` on the validation set.
    pub val_psnr: Vec<(u64, f64)>,
}

impl History {
    /// `step,loss[,psnr]` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,psnr\n");
        let mut val = self.val_psnr.iter().peekable();
        for &(step, loss) in &self.loss {
            write!(out, "{step},{loss:?}").unwrap();
            if let Some(&&(s, p)) = val.peek() {
                if s == step {
                    write!(out, ",{p:?}").unwrap();
                    val.next();
                }
            }
            out.push('\n');
        }
        out
    }

    /// `step,loss` lines of the discriminator.
    pub fn disc_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for &(step, loss) in &self.loss_d {
            writeln!(out, "{step},{loss:?}").unwrap();
        }
        out
    }
}

/// Seeded epoch permutations that can be rewound to a step.
struct Sampler {
    n: usize,
    batch: usize,
    rng: ChaCha8Rng,
    epoch_start: RngState,
    order: Vec<usize>,
}

impl Sampler {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let rng = stream(seed, Stream::Shuffle);
        Self {
            n,
            batch,
            epoch_start: RngState::capture(&rng),
            rng,
            order: Vec::new(),
        }
    }

    fn steps_per_epoch(&self) -> u64 {
        self.n.div_ceil(self.batch) as u64
    }

    fn draw(&mut self) {
        self.epoch_start = RngState::capture(&self.rng);
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut self.rng);
    }

    fn indices(&mut self, step: u64) -> Vec<usize> {
        let b = (step % self.steps_per_epoch()) as usize;
        if b == 0 {
            self.draw();
        }
        self.order[b * self.batch..((b + 1) * self.batch).min(self.n)].to_vec()
    }

    /// State to persist so that resuming at `step` replays the same order.
    fn state(&self, step: u64) -> RngState {
        if step % self.steps_per_epoch() == 0 {
            RngState::capture(&self.rng)
        } else {
            self.epoch_start
        }
    }

    fn restore(&mut self, state: RngState, step: u64) {
        self.rng = state.restore();
        self.epoch_start = state;
        if step % self.steps_per_epoch() != 0 {
            self.draw();
        }
    }
}

fn check_loss(v: f64, step: u64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteLoss { step })
    }
}

/// Mean PSNR of `model` over `data`, one image at a time, on outputs
/// clamped to `[0, 1]`.
pub fn evaluate_psnr<M: SrModel<f32>>(model: &M, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let mut total = 0.0;
    for s in &data.samples {
        let out = Image::from_tensor(&model.forward(&s.lr.to_tensor::<f32>())?, 0)?;
        total += psnr_from_mse(crate::data::mse(&out.data, &s.hr.data), 1.0);
    }
    Ok(total / data.len() as f64)
}

struct EpochMeter {
    sum: f64,
    count: usize,
}

impl EpochMeter {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn take(&mut self) -> Option<f64> {
        let mean = (self.count > 0).then(|| self.sum / self.count as f64);
        self.sum = 0.0;
        self.count = 0;
        mean
    }
}

/// Pixel-loss training of any super-resolution model.
pub struct L1Run<'d, M: SrModel<f32>> {
    pub model: M,
    pub opt: Adam<f32>,
    pub cfg: TrainConfig,
    pub step: u64,
    pub history: History,
    train: &'d Dataset,
    val: &'d Dataset,
    sampler: Sampler,
    meter: EpochMeter,
}

impl<'d, M: SrModel<f32>> L1Run<'d, M> {
    pub fn new(model: M, train: &'d Dataset, val: &'d Dataset, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let opt = Adam::new(cfg.adam(), model.params());
        Ok(Self {
            sampler: Sampler::new(train.len(), cfg.batch_size, cfg.seed),
            model,
            opt,
            cfg,
            step: 0,
            history: History::default(),
            train,
            val,
            meter: EpochMeter { sum: 0.0, count: 0 },
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.sampler.steps_per_epoch()
    }

    pub fn total_steps(&self) -> u64 {
        self.cfg
            .max_steps
            .unwrap_or(self.cfg.epochs as u64 * self.steps_per_epoch())
    }

    /// Loss of the current parameters on a batch, without updating.
    pub fn batch_loss(&self, indices: &[usize]) -> Result<f64> {
        let (lr, hr) = self.train.batch::<f32>(indices)?;
        Ok(l1_loss(&self.model.forward(&lr)?, &hr)?.item() as f64)
    }

    pub fn step_once(&mut self) -> Result<f64> {
        let idx = self.sampler.indices(self.step);
        self.opt.cfg.lr = self.cfg.lr_at(self.step, self.total_steps());
        let (lr, hr) = self.train.batch::<f32>(&idx)?;
        let loss = l1_loss(&self.model.forward(&lr)?, &hr)?;
        let value = check_loss(loss.item() as f64, self.step)?;
        loss.backward()?;
        self.opt.step(self.model.params_mut())?;
        self.step += 1;
        self.history.loss.push((self.step, value));
        self.meter.push(value);
        self.end_of_step()?;
        Ok(value)
    }

    fn end_of_step(&mut self) -> Result<()> {
        let spe = self.steps_per_epoch();
        if self.step % spe != 0 {
            return Ok(());
        }
        if let Some(mean) = self.meter.take() {
            self.history.epoch_loss.push(mean);
        }
        let epoch = self.step / spe;
        if self.cfg.eval_every > 0 && epoch % self.cfg.eval_every as u64 == 0 && !self.val.is_empty() {
            let p = evaluate_psnr(&self.model, self.val)?;
            self.history.val_psnr.push((self.step, p));
        }
        Ok(())
    }

    pub fn run_until(&mut self, step: u64) -> Result<()> {
        while self.step < step {
            self.step_once()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<&History> {
        self.run_until(self.total_steps())?;
        Ok(&self.history)
    }

    pub fn checkpoint(&self, meta: &str) -> Checkpoint {
        let ps = self.model.params();
        Checkpoint {
            meta: meta.to_string(),
            step: self.step,
            rng: self.sampler.state(self.step),
            params: param_records("", ps),
            optim: vec![optim_record("model", &self.opt, ps)],
        }
    }

    /// Continues from a checkpoint of the same run. History restarts empty.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.load_params("", self.model.params_mut())?;
        self.opt = ckpt.load_optim("model", self.model.params())?;
        self.step = ckpt.step;
        self.sampler.restore(ckpt.rng, ckpt.step);
        self.history = History::default();
        self.meter.take();
        Ok(())
    }
}

/// Trains `model` with the pixel loss for the configured number of steps.
pub fn train_l1<M: SrModel<f32>>(model: M, train: &Dataset, val: &Dataset, cfg: &TrainConfig) -> Result<(M, History)> {
    let mut run = L1Run::new(model, train, val, cfg.clone())?;
    run.run()?;
    Ok((run.model, run.history))
}

/// Accuracy of thresholding logits at zero: real should be positive.
pub fn disc_accuracy(d_real: &Tensor<f32>, d_fake: &Tensor<f32>) -> f64 {
    let hits = d_real.data().iter().filter(|&&v| v > 0.0).count() + d_fake.data().iter().filter(|&&v| v < 0.0).count();
    hits as f64 / (d_real.numel() + d_fake.numel()) as f64
}

/// Alternating discriminator/generator training.
pub struct GanRun<'d> {
    pub gen: Generator<f32>,
    pub disc: Discriminator<f32>,
    pub opt_g: Adam<f32>,
    pub opt_d: Adam<f32>,
    pub cfg: TrainConfig,
    pub step: u64,
    pub history: History,
    train: &'d Dataset,
    val: &'d Dataset,
    sampler: Sampler,
    meter: EpochMeter,
}

impl<'d> GanRun<'d> {
    pub fn new(
        gen: Generator<f32>,
        disc: Discriminator<f32>,
        train: &'d Dataset,
        val: &'d Dataset,
        cfg: TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        cfg.gan().validate()?;
        if train.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        Ok(Self {
            opt_g: Adam::new(cfg.adam(), &gen.params),
            opt_d: Adam::new(cfg.adam(), &disc.params),
            sampler: Sampler::new(train.len(), cfg.batch_size, cfg.seed),
            gen,
            disc,
            cfg,
            step: 0,
            history: History::default(),
            train,
            val,
            meter: EpochMeter { sum: 0.0, count: 0 },
        })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.sampler.steps_per_epoch()
    }

    pub fn total_steps(&self) -> u64 {
        self.cfg
            .max_steps
            .unwrap_or(self.cfg.epochs as u64 * self.steps_per_epoch())
    }

    /// Discriminator loss and accuracy on a batch, without updating.
    pub fn disc_eval(&self, indices: &[usize]) -> Result<(f64, f64)> {
        let (lr, hr) = self.train.batch::<f32>(indices)?;
        let fake = self.gen.forward(&lr)?.detach();
        let (real, fake) = (self.disc.forward(&hr)?, self.disc.forward(&fake)?);
        let loss = discriminator_loss(&real, &fake)?.item() as f64;
        Ok((loss, disc_accuracy(&real, &fake)))
    }

    /// One discriminator update against the current generator. Returns
    /// the loss before the update.
    pub fn disc_step(&mut self, indices: &[usize]) -> Result<f64> {
        let (lr, hr) = self.train.batch::<f32>(indices)?;
        let fake = self.gen.forward(&lr)?.detach();
        self.update_disc(&hr, &fake)
    }

    fn update_disc(&mut self, hr: &Tensor<f32>, fake: &Tensor<f32>) -> Result<f64> {
        self.disc.params.zero_grad();
        let loss = discriminator_loss(&self.disc.forward(hr)?, &self.disc.forward(fake)?)?;
        let value = check_loss(loss.item() as f64, self.step)?;
        loss.backward()?;
        self.opt_d.step(&mut self.disc.params)?;
        Ok(value)
    }

    /// One discriminator step then one generator step on the next batch.
    pub fn step_once(&mut self) -> Result<(f64, f64)> {
        let idx = self.sampler.indices(self.step);
        let rate = self.cfg.lr_at(self.step, self.total_steps());
        self.opt_g.cfg.lr = rate;
        self.opt_d.cfg.lr = rate;
        let (lr, hr) = self.train.batch::<f32>(&idx)?;
        let fake = self.gen.forward(&lr)?;
        let gan = self.cfg.gan();

        let loss_d = self.update_disc(&hr, &fake.detach())?;

        self.gen.params.zero_grad();
        let d_fake = if gan.lambda_adv == 0.0 {
            // unused by the loss; skip the discriminator pass
            Tensor::zeros(&[idx.len()])
        } else {
            self.disc.forward(&fake)?
        };
        let loss_g = generator_loss(&fake, &hr, &d_fake, &gan)?;
        let value = check_loss(loss_g.item() as f64, self.step)?;
        loss_g.backward()?;
        self.opt_g.step(&mut self.gen.params)?;
        // the generator pass left gradients on the discriminator leaves
        self.disc.params.zero_grad();

        self.step += 1;
        self.history.loss.push((self.step, value));
        self.history.loss_d.push((self.step, loss_d));
        self.meter.push(value);
        let spe = self.steps_per_epoch();
        if self.step % spe == 0 {
            if let Some(mean) = self.meter.take() {
                self.history.epoch_loss.push(mean);
            }
            let epoch = self.step / spe;
            if self.cfg.eval_every > 0 && epoch % self.cfg.eval_every as u64 == 0 && !self.val.is_empty() {
                let p = evaluate_psnr(&self.gen, self.val)?;
                self.history.val_psnr.push((self.step, p));
            }
        }
        Ok((value, loss_d))
    }

    pub fn run_until(&mut self, step: u64) -> Result<()> {
        while self.step < step {
            self.step_once()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<&History> {
        self.run_until(self.total_steps())?;
        Ok(&self.history)
    }

    pub fn checkpoint(&self, meta: &str) -> Checkpoint {
        let mut params = param_records("gen.", &self.gen.params);
        params.extend(param_records("disc.", &self.disc.params));
        Checkpoint {
            meta: meta.to_string(),
            step: self.step,
            rng: self.sampler.state(self.step),
            params,
            optim: vec![
                optim_record("gen", &self.opt_g, &self.gen.params),
                optim_record("disc", &self.opt_d, &self.disc.params),
            ],
        }
    }

    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.load_params("gen.", &mut self.gen.params)?;
        ckpt.load_params("disc.", &mut self.disc.params)?;
        self.opt_g = ckpt.load_optim("gen", &self.gen.params)?;
        self.opt_d = ckpt.load_optim("disc", &self.disc.params)?;
        self.step = ckpt.step;
        self.sampler.restore(ckpt.rng, ckpt.step);
        self.history = History::default();
        self.meter.take();
        Ok(())
    }
}

pub fn train_gan(
    gen: Generator<f32>,
    disc: Discriminator<f32>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Generator<f32>, Discriminator<f32>, History)> {
    let mut run = GanRun::new(gen, disc, train, val, cfg.clone())?;
    run.run()?;
    Ok((run.gen, run.disc, run.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    fn scalar_store(v: f32) -> ParamStore<f32> {
        let mut ps = ParamStore::new();
        ps.insert("p", vec![v], &[1]).unwrap();
        ps
    }

    fn set_grad(ps: &ParamStore<f32>, g: f32) {
        let p = ps.by_name("p").unwrap();
        p.mul(&Tensor::from_vec(vec![g], &[1]).unwrap()).unwrap().sum().backward().unwrap();
    }

    #[test]
    fn zero_grad_keeps_params() {
        let mut ps = scalar_store(0.3);
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        set_grad(&ps, 0.0);
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.by_name("p").unwrap().item(), 0.3);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn first_step_is_lr() {
        let mut ps = scalar_store(0.0);
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        set_grad(&ps, 1.0);
        opt.step(&mut ps).unwrap();
        let d = ps.by_name("p").unwrap().item() as f64;
        assert!((d + 2e-4).abs() < 1e-9, "{d}");
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut ps = scalar_store(0.0);
        let mut opt = Adam::new(AdamConfig::default(), &ps);
        set_grad(&ps, f32::NAN);
        match opt.step(&mut ps) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "p"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(ps.by_name("p").unwrap().item(), 0.0);
    }

    #[test]
    fn sampler_resume_replays_order() {
        let mut a = Sampler::new(7, 3, 11);
        let mut seen = Vec::new();
        for step in 0..10 {
            seen.push(a.indices(step));
        }
        for cut in 0..10u64 {
            let mut b = Sampler::new(7, 3, 11);
            for step in 0..cut {
                b.indices(step);
            }
            let state = b.state(cut);
            let mut c = Sampler::new(7, 3, 999);
            c.restore(state, cut);
            for step in cut..10 {
                assert_eq!(c.indices(step), seen[step as usize], "cut {cut} step {step}");
            }
        }
    }

    #[test]
    fn csv_layout() {
        let h = History {
            loss: vec![(1, 0.5), (2, 0.25)],
            val_psnr: vec![(2, 30.0)],
            ..Default::default()
        };
        assert_eq!(h.to_csv(), "step,loss,psnr\n1,0.5\n2,0.25,30.0\n");
    }
}
