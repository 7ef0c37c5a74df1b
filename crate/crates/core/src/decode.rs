//! Beam-search caption decoding, optionally biased by ARC node marginals.
//!
//! Hypotheses are ranked by total log-score with no length normalization.
//! Equal scores fall back to lexicographic token order, which makes beam
//! size 1 identical to a greedy argmax loop.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::convcap::{forward, ImageFeatures, ModelParams};
use crate::data::{RegionGraph, Vocab, PAD, START};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub beam_size: usize,
    /// Maximum number of generated tokens, end token included.
    pub max_len: usize,
    pub fusion_lambda: f64,
    pub fusion_epsilon: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 2,
            max_len: 16,
            fusion_lambda: 0.3,
            fusion_epsilon: 1e-6,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::validation("beam_size must be at least 1"));
        }
        if self.max_len == 0 {
            return Err(Error::validation("max_len must be at least 1"));
        }
        if !(self.fusion_lambda >= 0.0) || !self.fusion_lambda.is_finite() {
            return Err(Error::validation(format!(
                "fusion_lambda {} must be >= 0",
                self.fusion_lambda
            )));
        }
        if !(self.fusion_epsilon > 0.0) || !self.fusion_epsilon.is_finite() {
            return Err(Error::validation(format!(
                "fusion_epsilon {} must be > 0",
                self.fusion_epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated tokens, without the start token.
    pub tokens: Vec<usize>,
    pub score: f64,
    pub completed: bool,
}

impl Hypothesis {
    /// Tokens with a trailing end token removed.
    pub fn words(&self, end: usize) -> &[usize] {
        match self.tokens.split_last() {
            Some((&last, rest)) if last == end => rest,
            _ => &self.tokens,
        }
    }
}

/// Adds `λ·ln(ε + m(w))` to every token that has an attribute marginal.
pub fn fuse(emission: &[f64], marginals: &BTreeMap<usize, f64>, cfg: &DecodeConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut out = emission.to_vec();
    for (&w, &m) in marginals {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::validation(format!(
                "marginal {m} for token {w} is outside [0, 1]"
            )));
        }
        if w >= out.len() {
            return Err(Error::validation(format!(
                "token {w} is outside a vocabulary of {}",
                out.len()
            )));
        }
        if cfg.fusion_lambda != 0.0 {
            out[w] += cfg.fusion_lambda * (cfg.fusion_epsilon + m).ln();
        }
    }
    Ok(out)
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Standard beam search. `scorer` receives the prefix starting with
/// `start` and returns one log-score per vocabulary entry; `-inf` entries
/// are never expanded. Returns completed hypotheses, best first.
pub fn beam_search<F>(
    mut scorer: F,
    cfg: &DecodeConfig,
    start: usize,
    end: usize,
    vocab: usize,
) -> Result<Vec<Hypothesis>>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    if vocab == 0 || end >= vocab {
        return Err(Error::validation(format!(
            "end token {end} is outside a vocabulary of {vocab}"
        )));
    }
    let mut live = vec![Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        completed: false,
    }];
    let mut done = Vec::new();
    let mut prefix = Vec::with_capacity(cfg.max_len + 1);
    while !live.is_empty() {
        let mut expanded = Vec::with_capacity(live.len() * vocab);
        for h in &live {
            prefix.clear();
            prefix.push(start);
            prefix.extend_from_slice(&h.tokens);
            let scores = scorer(&prefix)?;
            if scores.len() != vocab {
                return Err(Error::validation(format!(
                    "scorer returned {} scores for a vocabulary of {vocab}",
                    scores.len()
                )));
            }
            for (w, &s) in scores.iter().enumerate() {
                if s == f64::NEG_INFINITY {
                    continue;
                }
                if !s.is_finite() {
                    return Err(Error::numeric(format!("scorer returned {s} for token {w}")));
                }
                let mut tokens = h.tokens.clone();
                tokens.push(w);
                let completed = w == end || tokens.len() == cfg.max_len;
                expanded.push(Hypothesis {
                    tokens,
                    score: h.score + s,
                    completed,
                });
            }
        }
        expanded.sort_by(rank);
        expanded.truncate(cfg.beam_size);
        let (finished, rest): (Vec<_>, Vec<_>) = expanded.into_iter().partition(|h| h.completed);
        done.extend(finished);
        live = rest;
    }
    done.sort_by(rank);
    Ok(done)
}

/// Greedy argmax decoding with the same tie rule as [`beam_search`].
pub fn greedy<F>(mut scorer: F, max_len: usize, start: usize, end: usize) -> Result<Hypothesis>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    let mut prefix = vec![start];
    let mut score = 0.0;
    while prefix.len() <= max_len {
        let scores = scorer(&prefix)?;
        let mut best: Option<(usize, f64)> = None;
        for (w, &s) in scores.iter().enumerate() {
            if s > f64::NEG_INFINITY && best.is_none_or(|(_, b)| s > b) {
                best = Some((w, s));
            }
        }
        let Some((w, s)) = best else {
            return Err(Error::validation("scorer left no finite token"));
        };
        prefix.push(w);
        score += s;
        if w == end {
            break;
        }
    }
    Ok(Hypothesis {
        tokens: prefix[1..].to_vec(),
        score,
        completed: true,
    })
}

/// Vocabulary id → attribute marginal, taking the largest marginal among
/// regions whose tag maps to that id. Tokens that are some region's tag in
/// the corpus but absent from this image get 0.
pub fn attribute_marginals(
    graph: &RegionGraph,
    marginals: &[f64],
    vocab: &Vocab,
    attribute_tokens: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    if marginals.len() != graph.len() {
        return Err(Error::validation(format!(
            "{} marginals for {} regions",
            marginals.len(),
            graph.len()
        )));
    }
    let mut out: BTreeMap<usize, f64> = attribute_tokens.iter().map(|&w| (w, 0.0)).collect();
    for (region, &m) in graph.regions.iter().zip(marginals) {
        let Some(id) = region.tag.as_deref().and_then(|t| vocab.get(t)) else {
            continue;
        };
        let slot = out.entry(id).or_insert(0.0);
        *slot = slot.max(m);
    }
    Ok(out)
}

/// Decodes one image with the captioner. PAD and START are never emitted.
/// An empty marginal map gives plain CNN decoding.
pub fn decode_image(
    params: &ModelParams,
    image: &ImageFeatures,
    marginals: &BTreeMap<usize, f64>,
    cfg: &DecodeConfig,
    end: usize,
) -> Result<Vec<Hypothesis>> {
    if cfg.max_len > params.config.max_len + 1 {
        return Err(Error::validation(format!(
            "decode max_len {} exceeds the model's {} words plus end",
            cfg.max_len, params.config.max_len
        )));
    }
    let scorer = |prefix: &[usize]| {
        let mut lp = forward(params, image, prefix)?;
        lp[PAD] = f64::NEG_INFINITY;
        lp[START] = f64::NEG_INFINITY;
        fuse(&lp, marginals, cfg)
    };
    beam_search(scorer, cfg, START, end, params.config.vocab_size)
}
