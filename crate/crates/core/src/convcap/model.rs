use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::{attend_projected, conv_into, log_softmax, matvec, matvec_t, outer_acc, project_cells, AttentionRead};
use super::{column_norm, EmissionLattice, ImageFeatures, ModelParams};
use crate::data::START;
use crate::error::{Error, Result};

/// Dropout is active only in training mode, with a mask seed per sequence.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Mode {
    Eval,
    Train { mask_seed: u64 },
}

pub(crate) struct BlockCache {
    input: Vec<f64>,
    kernel: Vec<f64>,
    pre: Vec<f64>,
    gate: Vec<f64>,
    glu: Vec<f64>,
    keys: Vec<Vec<f64>>,
    reads: Vec<AttentionRead>,
    mask: Option<Vec<f64>>,
}

pub(crate) struct SequenceCache {
    tokens: Vec<usize>,
    blocks: Vec<BlockCache>,
    top: Vec<f64>,
    pub logp: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Effective convolution kernel, `[tap][in][out]`.
fn effective_kernel(p: &ModelParams, l: usize) -> Result<Vec<f64>> {
    let b = &p.blocks[l];
    if !p.config.flags.weight_norm {
        return Ok(b.direction.clone());
    }
    let cols = 2 * p.config.embed_dim;
    let mut k = b.direction.clone();
    for o in 0..cols {
        let norm = column_norm(&b.direction, cols, o);
        if !(norm > 0.0) {
            return Err(Error::numeric(format!("block {l} channel {o} has a zero direction")));
        }
        let s = b.gain[o] / norm;
        k.iter_mut().skip(o).step_by(cols).for_each(|x| *x *= s);
    }
    Ok(k)
}

fn check_image(p: &ModelParams, image: &ImageFeatures) -> Result<()> {
    if image.feature_dim() != p.config.feature_dim {
        return Err(Error::validation(format!(
            "image has {}-dimensional features, model expects {}",
            image.feature_dim(),
            p.config.feature_dim
        )));
    }
    Ok(())
}

fn check_tokens(p: &ModelParams, tokens: &[usize]) -> Result<()> {
    if let Some(bad) = tokens.iter().find(|&&t| t >= p.config.vocab_size) {
        return Err(Error::validation(format!(
            "token id {bad} is outside the vocabulary of {}",
            p.config.vocab_size
        )));
    }
    Ok(())
}

fn dropout_mask(len: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Runs the network over a whole input sequence, keeping what backward needs.
pub(crate) fn run(p: &ModelParams, image: &ImageFeatures, tokens: &[usize], mode: Mode) -> Result<SequenceCache> {
    check_image(p, image)?;
    check_tokens(p, tokens)?;
    let c = &p.config;
    let (d, v, f, a, w) = (c.embed_dim, c.vocab_size, c.feature_dim, c.attn_dim, c.kernel_width);
    let len = tokens.len();

    let offset = matvec(&p.image_proj, d, f, &image.pooled);
    let mut x = vec![0.0; len * d];
    for (t, &tok) in tokens.iter().enumerate() {
        for k in 0..d {
            x[t * d + k] = p.embedding[tok * d + k] + offset[k];
        }
    }

    let mut blocks = Vec::with_capacity(c.layers);
    for l in 0..c.layers {
        let bp = &p.blocks[l];
        let kernel = effective_kernel(p, l)?;
        let mut pre = vec![0.0; len * 2 * d];
        for t in 0..len {
            pre[t * 2 * d..(t + 1) * 2 * d].copy_from_slice(&bp.bias);
        }
        conv_into(&x, len, d, &kernel, w, 2 * d, &mut pre);

        let mut gate = vec![0.0; len * d];
        let mut glu = vec![0.0; len * d];
        for t in 0..len {
            for k in 0..d {
                let s = sigmoid(pre[t * 2 * d + d + k]);
                gate[t * d + k] = s;
                glu[t * d + k] = pre[t * 2 * d + k] * s;
            }
        }

        let mut out = glu.clone();
        let mut keys = Vec::new();
        let mut reads = Vec::new();
        if c.flags.attention {
            keys = project_cells(&image.cells, &bp.key_proj, a);
            for t in 0..len {
                let read = attend_projected(&glu[t * d..(t + 1) * d], &bp.query_proj, &keys, &image.cells);
                let mixed = matvec(&bp.attn_out, d, f, &read.context);
                for (o, m) in out[t * d..(t + 1) * d].iter_mut().zip(mixed) {
                    *o += m;
                }
                reads.push(read);
            }
        }
        if c.flags.residual {
            for (o, xi) in out.iter_mut().zip(&x) {
                *o += xi;
            }
        }
        let mask = match mode {
            Mode::Train { mask_seed } if c.flags.dropout && c.dropout > 0.0 => {
                let m = dropout_mask(len * d, c.dropout, mask_seed.wrapping_add(l as u64));
                for (o, k) in out.iter_mut().zip(&m) {
                    *o *= k;
                }
                Some(m)
            }
            _ => None,
        };
        blocks.push(BlockCache {
            input: std::mem::replace(&mut x, out),
            kernel,
            pre,
            gate,
            glu,
            keys,
            reads,
            mask,
        });
    }

    let mut logp = Vec::with_capacity(len * v);
    for t in 0..len {
        let mut logits = p.out_bias.clone();
        for k in 0..d {
            let xv = x[t * d + k];
            for (lg, wv) in logits.iter_mut().zip(&p.out_proj[k * v..(k + 1) * v]) {
                *lg += xv * wv;
            }
        }
        logp.extend(log_softmax(&logits));
    }
    Ok(SequenceCache {
        tokens: tokens.to_vec(),
        blocks,
        top: x,
        logp,
    })
}

/// Accumulates into `grads` the gradient of `Σ_t dlogits_t · logits_t`,
/// where `dlogits` is already the derivative of the loss w.r.t. the logits.
pub(crate) fn backward(
    p: &ModelParams,
    image: &ImageFeatures,
    cache: &SequenceCache,
    dlogits: &[f64],
    grads: &mut ModelParams,
) {
    let c = &p.config;
    let (d, v, f, a, w) = (c.embed_dim, c.vocab_size, c.feature_dim, c.attn_dim, c.kernel_width);
    let len = cache.tokens.len();

    let mut dx = vec![0.0; len * d];
    for t in 0..len {
        let dl = &dlogits[t * v..(t + 1) * v];
        for (gb, g) in grads.out_bias.iter_mut().zip(dl) {
            *gb += g;
        }
        let top = &cache.top[t * d..(t + 1) * d];
        outer_acc(&mut grads.out_proj, top, dl);
        let back = matvec(&p.out_proj, d, v, dl);
        dx[t * d..(t + 1) * d].copy_from_slice(&back);
    }

    let scale = 1.0 / (a as f64).sqrt();
    for l in (0..c.layers).rev() {
        let bc = &cache.blocks[l];
        let bp = &p.blocks[l];
        let gb = &mut grads.blocks[l];

        let mut dy = dx;
        if let Some(mask) = &bc.mask {
            for (g, m) in dy.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        let mut dinput = if c.flags.residual {
            dy.clone()
        } else {
            vec![0.0; len * d]
        };
        let mut dglu = dy.clone();

        if c.flags.attention {
            let mut dkeys = vec![vec![0.0; a]; image.cells.rows];
            for t in 0..len {
                let dz = &dy[t * d..(t + 1) * d];
                let read = &bc.reads[t];
                outer_acc(&mut gb.attn_out, dz, &read.context);
                let dctx = matvec_t(&bp.attn_out, d, f, dz);
                let dweights: Vec<f64> = (0..image.cells.rows)
                    .map(|g| dctx.iter().zip(image.cells.row(g)).map(|(x, y)| x * y).sum())
                    .collect();
                let mean: f64 = read.weights.iter().zip(&dweights).map(|(x, y)| x * y).sum();
                let mut dquery = vec![0.0; a];
                for g in 0..image.cells.rows {
                    let ds = read.weights[g] * (dweights[g] - mean) * scale;
                    for k in 0..a {
                        dquery[k] += ds * bc.keys[g][k];
                        dkeys[g][k] += ds * read.query[k];
                    }
                }
                outer_acc(&mut gb.query_proj, &dquery, &bc.glu[t * d..(t + 1) * d]);
                let dstate = matvec_t(&bp.query_proj, a, d, &dquery);
                for (g, s) in dglu[t * d..(t + 1) * d].iter_mut().zip(dstate) {
                    *g += s;
                }
            }
            for (g, dk) in dkeys.iter().enumerate() {
                outer_acc(&mut gb.key_proj, dk, image.cells.row(g));
            }
        }

        let mut dpre = vec![0.0; len * 2 * d];
        for t in 0..len {
            for k in 0..d {
                let s = bc.gate[t * d + k];
                let g = dglu[t * d + k];
                dpre[t * 2 * d + k] = g * s;
                dpre[t * 2 * d + d + k] = g * bc.pre[t * 2 * d + k] * s * (1.0 - s);
            }
        }
        let cols = 2 * d;
        let mut dkernel = vec![0.0; w * d * cols];
        for t in 0..len {
            let dp = &dpre[t * cols..(t + 1) * cols];
            for (gbias, g) in gb.bias.iter_mut().zip(dp) {
                *gbias += g;
            }
            for j in 0..w {
                let back = w - 1 - j;
                if back > t {
                    continue;
                }
                let src = t - back;
                for k in 0..d {
                    let row = (j * d + k) * cols;
                    let xv = bc.input[src * d + k];
                    let taps = &bc.kernel[row..row + cols];
                    let mut acc = 0.0;
                    for o in 0..cols {
                        dkernel[row + o] += dp[o] * xv;
                        acc += dp[o] * taps[o];
                    }
                    dinput[src * d + k] += acc;
                }
            }
        }

        if c.flags.weight_norm {
            for o in 0..cols {
                let norm = column_norm(&bp.direction, cols, o);
                let dot: f64 = (0..w * d)
                    .map(|r| dkernel[r * cols + o] * bp.direction[r * cols + o])
                    .sum::<f64>()
                    / norm;
                gb.gain[o] += dot;
                let s = bp.gain[o] / norm;
                for r in 0..w * d {
                    let unit = bp.direction[r * cols + o] / norm;
                    gb.direction[r * cols + o] += s * (dkernel[r * cols + o] - dot * unit);
                }
            }
        } else {
            for (g, k) in gb.direction.iter_mut().zip(&dkernel) {
                *g += k;
            }
        }
        dx = dinput;
    }

    let mut doffset = vec![0.0; d];
    for (t, &tok) in cache.tokens.iter().enumerate() {
        for k in 0..d {
            grads.embedding[tok * d + k] += dx[t * d + k];
            doffset[k] += dx[t * d + k];
        }
    }
    outer_acc(&mut grads.image_proj, &doffset, &image.pooled);
}

/// Next-token log-probabilities after `prefix`, in evaluation mode.
pub fn forward(p: &ModelParams, image: &ImageFeatures, prefix: &[usize]) -> Result<Vec<f64>> {
    if prefix.first() != Some(&START) {
        return Err(Error::validation("prefix must begin with the start token"));
    }
    // start token plus at most max_len words, as seen in training
    if prefix.len() > p.config.max_len + 1 {
        return Err(Error::validation(format!(
            "prefix of {} tokens exceeds max_len {} words",
            prefix.len(),
            p.config.max_len
        )));
    }
    let cache = run(p, image, prefix, Mode::Eval)?;
    let v = p.config.vocab_size;
    Ok(cache.logp[(prefix.len() - 1) * v..].to_vec())
}

/// All next-token rows for a teacher-forced input sequence.
pub fn emission_lattice(p: &ModelParams, image: &ImageFeatures, tokens: &[usize]) -> Result<EmissionLattice> {
    let cache = run(p, image, tokens, Mode::Eval)?;
    EmissionLattice::new(tokens.len(), p.config.vocab_size, cache.logp)
}

/// Teacher-forcing input and target ids for a caption.
pub(crate) fn teacher_forcing(caption: &[usize], max_len: usize) -> (Vec<usize>, Vec<usize>) {
    let words = &caption[..caption.len().min(max_len)];
    let mut input = vec![START];
    input.extend_from_slice(words);
    let mut target = words.to_vec();
    target.push(crate::data::END);
    (input, target)
}

/// Summed cross-entropy (nats) of one caption and its token count.
pub fn sequence_loss(p: &ModelParams, image: &ImageFeatures, caption: &[usize]) -> Result<(f64, usize)> {
    let (input, target) = teacher_forcing(caption, p.config.max_len);
    check_tokens(p, &target)?;
    let cache = run(p, image, &input, Mode::Eval)?;
    let v = p.config.vocab_size;
    let loss = target.iter().enumerate().map(|(t, &y)| -cache.logp[t * v + y]).sum();
    Ok((loss, target.len()))
}
