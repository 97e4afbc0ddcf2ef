//! Toy conditioning task and the SGD training loop.

use std::fmt::Write as _;

use rand::Rng;

use super::controlnet::ControlNetBlock;
use super::layers::{Conv2d, NetBlock, Nonlinearity};
use super::{Tensor, ZeroConvError};
use crate::rng::{derive_seed, stream};

pub const TOY_CHANNELS: usize = 4;
pub const TOY_COND_CHANNELS: usize = 2;
pub const TOY_SIZE: usize = 8;
const W_STD: f64 = 2.0;
/// Samples in the fixed evaluation set every log row is measured on.
pub const TOY_EVAL_SAMPLES: usize = 32;

/// One toy example. `target = F_locked(x) + W * c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Tensor,
    pub c: Tensor,
    pub target: Tensor,
    /// The condition-dependent part `W * c` of the target.
    pub cond_component: Tensor,
}

/// Synthetic task: the target adds a hidden 1x1 map of the condition to the
/// locked block's output, so the locked block alone cannot remove that part
/// of the error while a control branch can.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub locked: NetBlock,
    /// Hidden 1x1 map, `(TOY_CHANNELS, TOY_COND_CHANNELS, 1, 1)`, zero bias.
    pub hidden: Conv2d,
    pub eval: Vec<Sample>,
}

/// Build the toy task for `seed`: a near-identity locked block, a hidden map
/// with `N(0, 4)` entries and a fixed evaluation set.
pub fn make_toy_task(seed: u64) -> ToyTask {
    make_toy_task_with(seed, Nonlinearity::Silu)
}

pub fn make_toy_task_with(seed: u64, activation: Nonlinearity) -> ToyTask {
    let mut rng = stream(derive_seed(seed, 0));
    let locked = NetBlock::near_identity(TOY_CHANNELS, activation, &mut rng);
    let w = Tensor::randn(&[TOY_CHANNELS, TOY_COND_CHANNELS, 1, 1], W_STD, &mut rng);
    let hidden = Conv2d::from_tensors(w, Tensor::zeros(&[TOY_CHANNELS]))
        .expect("hidden map shapes are consistent");
    let mut task = ToyTask { locked, hidden, eval: Vec::new() };
    let mut eval_rng = stream(derive_seed(seed, 1));
    task.eval = (0..TOY_EVAL_SAMPLES).map(|_| task.sample(&mut eval_rng)).collect();
    task
}

impl ToyTask {
    /// Draw `x ~ N(0, 1)` of shape 4x8x8 and `c ~ N(0, 1)` of shape 2x8x8.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Sample {
        let x = Tensor::randn(&[TOY_CHANNELS, TOY_SIZE, TOY_SIZE], 1.0, rng);
        let c = Tensor::randn(&[TOY_COND_CHANNELS, TOY_SIZE, TOY_SIZE], 1.0, rng);
        self.sample_from(x, c)
    }

    pub fn sample_from(&self, x: Tensor, c: Tensor) -> Sample {
        let cond_component = self.hidden.forward(&c).expect("toy shapes are consistent");
        let target = self
            .locked
            .forward(&x)
            .and_then(|y| y.add(&cond_component))
            .expect("toy shapes are consistent");
        Sample { x, c, target, cond_component }
    }

    /// Per-element expectation of `(W * c)^2` for standard normal `c`:
    /// `||W||_F^2 / channels`.
    pub fn expected_baseline_loss(&self) -> f64 {
        self.hidden.weight.value.squared_norm() / TOY_CHANNELS as f64
    }

    /// Mean squared error of the locked block alone on the evaluation set.
    pub fn baseline_loss(&self) -> f64 {
        let total: f64 = self
            .eval
            .iter()
            .map(|s| mse(&self.locked.forward(&s.x).expect("toy shapes"), &s.target))
            .sum();
        total / self.eval.len() as f64
    }
}

pub fn mse(pred: &Tensor, target: &Tensor) -> f64 {
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Pearson correlation; 0 when either side has no variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Evaluation-set loss and condition fidelity: the correlation between the
/// control branch's contribution `y_c - F(x; locked)` and the task's true
/// conditional component.
pub fn evaluate(cb: &ControlNetBlock, task: &ToyTask) -> Result<(f64, f64), ZeroConvError> {
    let mut loss = 0.0;
    let mut delta = Vec::new();
    let mut truth = Vec::new();
    for s in &task.eval {
        let (y, cache) = cb.forward_cached(&s.x, &s.c)?;
        loss += mse(&y, &s.target);
        delta.extend(y.sub(&cache.base)?.into_data());
        truth.extend_from_slice(s.cond_component.data());
    }
    Ok((loss / task.eval.len() as f64, pearson(&delta, &truth)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Log a row every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 500, batch_size: 2, learning_rate: 0.05, seed: 7, log_every: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ZeroConvError> {
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return Err(ZeroConvError::InvalidConfig(
                "steps, batch_size and log_every must be positive".into(),
            ));
        }
        // Zero is accepted: it freezes training, which is how the baseline is checked.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ZeroConvError::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Evaluation-set loss before this step's update.
    pub loss: f64,
    pub condition_fidelity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Evaluation-set loss after the last update.
    pub final_loss: f64,
    pub final_fidelity: f64,
}

impl TrainLog {
    /// CSV with header `step,loss,condition_fidelity`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,condition_fidelity\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.step, r.loss, r.condition_fidelity);
        }
        out
    }

    pub fn initial_loss(&self) -> f64 {
        self.rows.first().map_or(self.final_loss, |r| r.loss)
    }
}

/// Train the unlocked parameters of `cb` with SGD on fresh toy batches.
///
/// Batches come from a stream seeded by `config.seed`. Fails if a loss turns
/// non-finite or the locked block's bits change.
pub fn train_toy(
    cb: &mut ControlNetBlock,
    task: &ToyTask,
    config: &TrainConfig,
) -> Result<TrainLog, ZeroConvError> {
    config.validate()?;
    let locked_print = cb.locked_fingerprint();
    let check_locked = |cb: &ControlNetBlock, step: usize| {
        if cb.locked_fingerprint() != locked_print {
            return Err(ZeroConvError::LockedModified { step });
        }
        Ok(())
    };
    let mut rng = stream(derive_seed(config.seed, 0x0074_7261_696e));
    let mut rows = Vec::new();

    for step in 0..config.steps {
        if step % config.log_every == 0 {
            let (loss, condition_fidelity) = evaluate(cb, task)?;
            if !loss.is_finite() {
                return Err(ZeroConvError::Diverged { step, loss });
            }
            check_locked(cb, step)?;
            rows.push(LogRow { step, loss, condition_fidelity });
        }

        cb.zero_grad();
        let mut batch_loss = 0.0;
        for _ in 0..config.batch_size {
            let s = task.sample(&mut rng);
            let (y, cache) = cb.forward_cached(&s.x, &s.c)?;
            batch_loss += mse(&y, &s.target) / config.batch_size as f64;
            let scale = 2.0 / (y.len() * config.batch_size) as f64;
            let upstream = y.sub(&s.target)?.scale(scale);
            cb.backward_cached(&cache, &upstream)?;
        }
        if !batch_loss.is_finite() {
            return Err(ZeroConvError::Diverged { step, loss: batch_loss });
        }
        cb.sgd_step(config.learning_rate);
    }

    let (final_loss, final_fidelity) = evaluate(cb, task)?;
    if !final_loss.is_finite() {
        return Err(ZeroConvError::Diverged { step: config.steps, loss: final_loss });
    }
    check_locked(cb, config.steps)?;
    Ok(TrainLog { rows, final_loss, final_fidelity })
}
