//! Self-checks of the zero-convolution mechanism, runnable from the CLI.

use rand::Rng;

use super::controlnet::{init_controlnet, ControlNetBlock};
use super::layers::Param;
use super::train::{make_toy_task, train_toy, TrainConfig, TOY_CHANNELS, TOY_COND_CHANNELS, TOY_SIZE};
use super::{Tensor, ZeroConvError};
use crate::rng::{derive_seed, stream};

/// Central-difference step.
pub const FD_EPS: f64 = 1e-5;
/// Largest accepted relative error between analytic and numeric parameter
/// gradients.
pub const FD_TOLERANCE: f64 = 1e-6;
/// Same for input gradients. Perturbing `x` also moves the locked branch, so
/// these differences carry more rounding noise.
pub const FD_INPUT_TOLERANCE: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-4;
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

/// Worst relative errors of a finite-difference sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdReport {
    pub param_max_rel: f64,
    pub param_values: usize,
    pub input_max_rel: f64,
    pub input_values: usize,
}

impl FdReport {
    pub fn passed(&self) -> bool {
        self.param_max_rel < FD_TOLERANCE && self.input_max_rel < FD_INPUT_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// `|a - b| / max(|a|, |b|, FD_FLOOR)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Overwrite every trainable parameter with `N(0, std^2)` noise so that all
/// gradient paths are open.
pub fn randomize_trainable<R: Rng + ?Sized>(cb: &mut ControlNetBlock, std: f64, rng: &mut R) {
    for p in cb.params_mut().into_iter().filter(|p| !p.locked) {
        let noise = Tensor::randn(p.value.shape(), std, rng);
        p.value.add_assign(&noise).expect("same shape");
    }
}

fn toy_inputs<R: Rng + ?Sized>(rng: &mut R) -> (Tensor, Tensor) {
    (
        Tensor::randn(&[TOY_CHANNELS, TOY_SIZE, TOY_SIZE], 1.0, rng),
        Tensor::randn(&[TOY_COND_CHANNELS, TOY_SIZE, TOY_SIZE], 1.0, rng),
    )
}

/// Largest `||y_c - F(x; locked)||_inf` over `trials` random inputs to a
/// freshly initialized block.
pub fn init_identity_gap(seed: u64, trials: usize) -> Result<f64, ZeroConvError> {
    let task = make_toy_task(seed);
    let cb = init_controlnet(task.locked.clone(), TOY_COND_CHANNELS);
    let mut rng = stream(derive_seed(seed, 10));
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (x, c) = toy_inputs(&mut rng);
        let y = task.locked.forward(&x)?;
        worst = worst.max(cb.forward(&x, &c)?.max_abs_diff(&y)?);
    }
    Ok(worst)
}

fn grad_norm<'a>(params: impl Iterator<Item = &'a Param>) -> f64 {
    params.map(|p| p.grad.squared_norm()).sum::<f64>().sqrt()
}

/// Gradient norms `(z2, copy, z1)` of a block.
pub fn grad_norms(cb: &ControlNetBlock) -> (f64, f64, f64) {
    (
        grad_norm(cb.z2.params().into_iter().map(|(_, p)| p)),
        grad_norm(cb.copy.params().into_iter().map(|(_, p)| p)),
        grad_norm(cb.z1.params().into_iter().map(|(_, p)| p)),
    )
}

/// Gradient norms at initialization and the copy's gradient norm after one
/// SGD step, for a single random sample and upstream gradient.
pub fn unlocking_order(seed: u64, learning_rate: f64) -> Result<((f64, f64, f64), f64), ZeroConvError> {
    let task = make_toy_task(seed);
    let mut cb = init_controlnet(task.locked.clone(), TOY_COND_CHANNELS);
    let mut rng = stream(derive_seed(seed, 11));
    let (x, c) = toy_inputs(&mut rng);
    let upstream = Tensor::randn(&[TOY_CHANNELS, TOY_SIZE, TOY_SIZE], 1.0, &mut rng);
    cb.zero_grad();
    cb.backward(&x, &c, &upstream)?;
    let at_init = grad_norms(&cb);
    cb.sgd_step(learning_rate);
    cb.zero_grad();
    cb.backward(&x, &c, &upstream)?;
    Ok((at_init, grad_norms(&cb).1))
}

/// Numerical gradient of `sum(upstream * y_c)` with respect to every value
/// of every trainable parameter and both inputs, compared against the
/// analytic gradients.
pub fn finite_difference_error(seed: u64) -> Result<FdReport, ZeroConvError> {
    let task = make_toy_task(seed);
    let mut cb = init_controlnet(task.locked.clone(), TOY_COND_CHANNELS);
    let mut rng = stream(derive_seed(seed, 12));
    randomize_trainable(&mut cb, 0.3, &mut rng);
    let (x, c) = toy_inputs(&mut rng);
    let upstream = Tensor::randn(&[TOY_CHANNELS, TOY_SIZE, TOY_SIZE], 1.0, &mut rng);

    // Differences are taken per output element before the dot product, so
    // the large shared terms cancel exactly instead of swamping the sum.
    let central = |up: &Tensor, down: &Tensor| -> Result<f64, ZeroConvError> {
        let diff = up.sub(down)?;
        Ok(diff.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum::<f64>() / (2.0 * FD_EPS))
    };

    cb.zero_grad();
    let input_grads = cb.backward(&x, &c, &upstream)?;
    let analytic: Vec<Tensor> = cb.params().iter().map(|(_, p)| p.grad.clone()).collect();
    let locked: Vec<bool> = cb.params().iter().map(|(_, p)| p.locked).collect();

    let mut report = FdReport { param_max_rel: 0.0, param_values: 0, input_max_rel: 0.0, input_values: 0 };
    for (pi, grad) in analytic.iter().enumerate() {
        if locked[pi] {
            continue;
        }
        for k in 0..grad.len() {
            let orig = cb.params()[pi].1.value.data()[k];
            cb.params_mut()[pi].value.data_mut()[k] = orig + FD_EPS;
            let up = cb.forward(&x, &c)?;
            cb.params_mut()[pi].value.data_mut()[k] = orig - FD_EPS;
            let down = cb.forward(&x, &c)?;
            cb.params_mut()[pi].value.data_mut()[k] = orig;
            let err = relative_error(grad.data()[k], central(&up, &down)?);
            report.param_max_rel = report.param_max_rel.max(err);
            report.param_values += 1;
        }
    }
    for (input, grad, is_x) in [(&x, &input_grads.x, true), (&c, &input_grads.c, false)] {
        for k in 0..input.len() {
            let mut plus = input.clone();
            plus.data_mut()[k] += FD_EPS;
            let mut minus = input.clone();
            minus.data_mut()[k] -= FD_EPS;
            let (up, down) = if is_x {
                (cb.forward(&plus, &c)?, cb.forward(&minus, &c)?)
            } else {
                (cb.forward(&x, &plus)?, cb.forward(&x, &minus)?)
            };
            let err = relative_error(grad.data()[k], central(&up, &down)?);
            report.input_max_rel = report.input_max_rel.max(err);
            report.input_values += 1;
        }
    }
    Ok(report)
}

/// Train for `steps` and report whether the locked bits survived.
pub fn locked_survives_training(seed: u64, steps: usize) -> Result<bool, ZeroConvError> {
    let task = make_toy_task(seed);
    let mut cb = init_controlnet(task.locked.clone(), TOY_COND_CHANNELS);
    let before = cb.locked.clone();
    let config = TrainConfig { steps, seed, ..Default::default() };
    match train_toy(&mut cb, &task, &config) {
        Ok(_) => {}
        Err(ZeroConvError::LockedModified { .. }) => return Ok(false),
        Err(e) => return Err(e),
    }
    Ok(before
        .params()
        .iter()
        .zip(cb.locked.params())
        .all(|((_, a), (_, b))| a.value.bit_eq(&b.value)))
}

/// Run every check for `seed`.
pub fn run_all(seed: u64) -> Result<Vec<CheckResult>, ZeroConvError> {
    let mut out = Vec::new();

    let gap = init_identity_gap(seed, 100)?;
    out.push(CheckResult {
        name: "init_identity",
        passed: gap < IDENTITY_TOLERANCE,
        detail: format!("max_abs_gap={gap:e}"),
    });

    let ((z2, copy, z1), copy_after) = unlocking_order(seed, 0.05)?;
    out.push(CheckResult {
        name: "gradient_order",
        passed: z2 > 0.0 && copy == 0.0 && z1 == 0.0 && copy_after > 0.0,
        detail: format!("z2={z2:e} copy={copy:e} z1={z1:e} copy_after_step={copy_after:e}"),
    });

    let fd = finite_difference_error(seed)?;
    out.push(CheckResult {
        name: "finite_difference",
        passed: fd.passed(),
        detail: format!(
            "param_max_rel_err={:e} params={} input_max_rel_err={:e} inputs={}",
            fd.param_max_rel, fd.param_values, fd.input_max_rel, fd.input_values
        ),
    });

    let steps = 100;
    let ok = locked_survives_training(seed, steps)?;
    out.push(CheckResult {
        name: "locked_immutable",
        passed: ok,
        detail: format!("steps={steps}"),
    });
    Ok(out)
}
