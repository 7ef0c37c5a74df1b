use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::{backward, run, teacher_forcing, Mode};
use super::{ModelParams, TrainExample};
use crate::error::{Error, Result};

/// Global-norm gradient clipping threshold.
pub const GRAD_CLIP: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Mean cross-entropy per target token before the update, in nats.
    pub loss: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

fn mix(seed: u64, step: u64, index: u64) -> u64 {
    // splitmix64 over the three inputs
    let mut z = seed
        .wrapping_add(step.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn example_gradient(p: &ModelParams, ex: &TrainExample, mode: Mode, weight: f64) -> Result<(f64, ModelParams)> {
    let (input, target) = teacher_forcing(&ex.caption, p.config.max_len);
    if let Some(bad) = target.iter().find(|&&t| t >= p.config.vocab_size) {
        return Err(Error::validation(format!(
            "target token {bad} is outside the vocabulary"
        )));
    }
    let cache = run(p, &ex.image, &input, mode)?;
    let v = p.config.vocab_size;
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; input.len() * v];
    for (t, &y) in target.iter().enumerate() {
        let row = &cache.logp[t * v..(t + 1) * v];
        loss -= row[y];
        for (g, lp) in dlogits[t * v..(t + 1) * v].iter_mut().zip(row) {
            *g = weight * lp.exp();
        }
        dlogits[t * v + y] -= weight;
    }
    let mut grads = ModelParams::zeros(&p.config);
    backward(p, &ex.image, &cache, &dlogits, &mut grads);
    Ok((loss, grads))
}

fn target_count(p: &ModelParams, batch: &[TrainExample]) -> usize {
    batch.iter().map(|ex| ex.caption.len().min(p.config.max_len) + 1).sum()
}

fn gradient(p: &ModelParams, batch: &[TrainExample], step: Option<u64>) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::validation("batch is empty"));
    }
    let tokens = target_count(p, batch) as f64;
    let weight = 1.0 / tokens;
    let parts: Vec<(f64, ModelParams)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mode = match step {
                Some(s) => Mode::Train {
                    mask_seed: mix(p.config.seed, s, i as u64),
                },
                None => Mode::Eval,
            };
            example_gradient(p, ex, mode, weight)
        })
        .collect::<Result<_>>()?;
    // reduce in batch order so results do not depend on scheduling
    let mut total = ModelParams::zeros(&p.config);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_scaled(g, 1.0);
    }
    Ok((loss / tokens, total))
}

/// Mean per-token loss and its exact gradient, dropout disabled.
pub fn analytic_gradient(p: &ModelParams, batch: &[TrainExample]) -> Result<(f64, ModelParams)> {
    gradient(p, batch, None)
}

/// Mean per-token loss with dropout disabled.
pub fn batch_loss(p: &ModelParams, batch: &[TrainExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::validation("batch is empty"));
    }
    let tokens = target_count(p, batch) as f64;
    let sums: Vec<f64> = batch
        .par_iter()
        .map(|ex| super::sequence_loss(p, &ex.image, &ex.caption).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    Ok(sums.iter().sum::<f64>() / tokens)
}

/// One teacher-forced gradient-descent step with global-norm clipping.
/// `step` seeds the dropout masks. On error `params` is left untouched.
pub fn train_step(params: &mut ModelParams, batch: &[TrainExample], lr: f64, step: u64) -> Result<StepReport> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::validation(format!("learning rate {lr} is invalid")));
    }
    let (loss, grads) = gradient(params, batch, Some(step))?;
    if !loss.is_finite() {
        return Err(Error::numeric(format!("loss is {loss} at step {step}")));
    }
    let grad_norm = grads.squared_norm().sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::numeric(format!("gradient norm is {grad_norm} at step {step}")));
    }
    let clipped = grad_norm > GRAD_CLIP;
    let scale = if clipped { GRAD_CLIP / grad_norm } else { 1.0 };
    if lr > 0.0 {
        params.add_scaled(&grads, -lr * scale);
    }
    Ok(StepReport {
        loss,
        grad_norm,
        clipped,
    })
}

/// `(f(x + eps) − f(x − eps)) / 2eps`.
pub fn central_difference<F: Fn(f64) -> f64>(f: F, x: f64, eps: f64) -> f64 {
    (f(x + eps) - f(x - eps)) / (2.0 * eps)
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Max relative error between analytic and central-difference gradients
/// over the given flat parameter coordinates.
pub fn grad_check_coords(p: &ModelParams, batch: &[TrainExample], eps: f64, coords: &[usize]) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::validation("finite-difference step must be positive"));
    }
    let (_, grads) = analytic_gradient(p, batch)?;
    let errors: Vec<f64> = coords
        .par_iter()
        .map(|&i| {
            let mut probe = p.clone();
            let x = p.get_flat(i);
            probe.set_flat(i, x + eps);
            let up = batch_loss(&probe, batch)?;
            probe.set_flat(i, x - eps);
            let down = batch_loss(&probe, batch)?;
            let numeric = (up - down) / (2.0 * eps);
            Ok(relative_error(grads.get_flat(i), numeric))
        })
        .collect::<Result<_>>()?;
    Ok(errors.into_iter().fold(0.0, f64::max))
}

/// Checks at least 50 coordinates drawn with the model seed.
pub fn grad_check(p: &ModelParams, batch: &[TrainExample], eps: f64) -> Result<f64> {
    let total = p.num_params();
    let count = total.min(64);
    let mut rng = ChaCha8Rng::seed_from_u64(p.config.seed ^ 0x5EED);
    let mut coords = sample(&mut rng, total, count).into_vec();
    coords.sort_unstable();
    grad_check_coords(p, batch, eps, &coords)
}
