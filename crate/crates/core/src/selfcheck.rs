//! Oracle suites that compare the fast solvers against exhaustive
//! references on small random instances.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arcgame::{double_oracle, game_matrix, solve_matrix_game, DEFAULT_MAX_ITER};
use crate::convcap::{grad_check, log_softmax, FeatureFlags, ImageFeatures, ModelConfig, ModelParams, TrainExample};
use crate::decode::{beam_search, greedy, DecodeConfig, Hypothesis};
use crate::error::Result;
use crate::graphcut::{energy_value, minimize_energy, BinaryEnergy, Labeling};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    /// Largest observed discrepancy, in the suite's own unit.
    pub worst: f64,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Random submodular energy: unaries in [-3, 3], each pair joined with
/// probability `edge_prob` at a weight in [0, 2].
pub fn random_energy(rng: &mut impl Rng, n: usize, edge_prob: f64) -> BinaryEnergy {
    let unary = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(edge_prob) {
                pairs.push((i, j, rng.gen_range(0.0..2.0)));
            }
        }
    }
    BinaryEnergy::new(unary, pairs).expect("generated energy is valid")
}

/// Minimum over all 2^n labelings; ties go to the first in index order.
pub fn brute_force_minimum(e: &BinaryEnergy) -> Result<(Labeling, f64)> {
    let n = e.n();
    let mut best = (Labeling::zeros(n), energy_value(e, &Labeling::zeros(n))?);
    for idx in 1..1usize << n {
        let y = Labeling::from_index(idx, n);
        let v = energy_value(e, &y)?;
        if v < best.1 {
            best = (y, v);
        }
    }
    Ok(best)
}

pub fn cut_suite(cases: usize, max_n: usize, seed: u64) -> Result<SuiteReport> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..cases {
        let n = rng.gen_range(1..=max_n);
        let e = random_energy(&mut rng, n, 0.4);
        let (y, v) = minimize_energy(&e)?;
        let (y_ref, v_ref) = brute_force_minimum(&e)?;
        worst = worst.max((v - v_ref).abs());
        if y != y_ref || v != v_ref {
            failures += 1;
        }
    }
    Ok(SuiteReport {
        name: "cut vs brute force",
        cases,
        failures,
        worst,
        seconds: t.elapsed().as_secs_f64(),
    })
}

pub fn game_suite(cases: usize, max_n: usize, seed: u64) -> Result<SuiteReport> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..cases {
        let n = rng.gen_range(1..=max_n);
        let e = random_energy(&mut rng, n, 0.5);
        let all: Vec<Labeling> = (0..1usize << n).map(|k| Labeling::from_index(k, n)).collect();
        let full = solve_matrix_game(&game_matrix(&e, &all, &all)?, 1e-9)?;
        let r = double_oracle(&e, 1e-6, DEFAULT_MAX_ITER)?;
        let gap = (r.value - full.value).abs();
        worst = worst.max(gap).max(r.regret);
        if gap > 1e-6 || r.regret > 1e-6 {
            failures += 1;
        }
    }
    Ok(SuiteReport {
        name: "double oracle vs full matrix game",
        cases,
        failures,
        worst,
        seconds: t.elapsed().as_secs_f64(),
    })
}

/// Central-difference check of a 3-layer toy captioner.
pub fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    let t = Instant::now();
    let cfg = ModelConfig {
        vocab_size: 8,
        embed_dim: 6,
        feature_dim: 3,
        attn_dim: 4,
        layers: 3,
        kernel_width: 3,
        dropout: 0.2,
        max_len: 8,
        init_scale: 0.3,
        seed,
        flags: FeatureFlags::default(),
    };
    let p = ModelParams::init(&cfg)?;
    let a = ImageFeatures::from_cells(vec![vec![1.0, 0.0, 0.5], vec![0.0, 1.0, -0.5]])?;
    let b = ImageFeatures::from_cells(vec![vec![0.2, 0.9, 0.0], vec![-1.0, 0.3, 0.7]])?;
    let batch = vec![
        TrainExample {
            image: a.clone(),
            caption: vec![4, 5, 6],
        },
        TrainExample {
            image: b,
            caption: vec![7, 4],
        },
        TrainExample {
            image: a,
            caption: vec![6, 6, 5, 4],
        },
    ];
    let err = grad_check(&p, &batch, 1e-5)?;
    Ok(SuiteReport {
        name: "gradient vs central differences",
        cases: 1,
        failures: usize::from(!(err < 1e-4)),
        worst: err,
        seconds: t.elapsed().as_secs_f64(),
    })
}

/// Next-token log-probabilities that depend on position and last token.
pub struct TableScorer {
    vocab: usize,
    rows: Vec<Vec<f64>>,
}

impl TableScorer {
    pub fn random(rng: &mut impl Rng, vocab: usize, max_len: usize) -> Self {
        let rows = (0..max_len * vocab)
            .map(|_| log_softmax(&(0..vocab).map(|_| rng.gen_range(-2.0..2.0)).collect::<Vec<_>>()))
            .collect();
        TableScorer { vocab, rows }
    }

    /// Prefixes start with a start token that is not a vocabulary entry.
    pub fn score(&self, prefix: &[usize]) -> Result<Vec<f64>> {
        let pos = prefix.len() - 1;
        let last = if pos == 0 { 0 } else { prefix[pos] };
        Ok(self.rows[pos * self.vocab + last].clone())
    }
}

/// Best terminated sequence by depth-first enumeration; ties go to the
/// lexicographically smallest token sequence.
pub fn exhaustive_best<F>(scorer: &F, max_len: usize, start: usize, end: usize) -> Result<Hypothesis>
where
    F: Fn(&[usize]) -> Result<Vec<f64>>,
{
    fn walk<F: Fn(&[usize]) -> Result<Vec<f64>>>(
        scorer: &F,
        prefix: &mut Vec<usize>,
        score: f64,
        max_len: usize,
        end: usize,
        best: &mut Option<Hypothesis>,
    ) -> Result<()> {
        let scores = scorer(prefix)?;
        for (w, s) in scores.into_iter().enumerate() {
            prefix.push(w);
            let total = score + s;
            if w == end || prefix.len() - 1 == max_len {
                let better = match best {
                    None => true,
                    Some(b) => total > b.score || (total == b.score && prefix[1..] < b.tokens[..]),
                };
                if better {
                    *best = Some(Hypothesis {
                        tokens: prefix[1..].to_vec(),
                        score: total,
                        completed: true,
                    });
                }
            } else {
                walk(scorer, prefix, total, max_len, end, best)?;
            }
            prefix.pop();
        }
        Ok(())
    }
    let mut best = None;
    walk(scorer, &mut vec![start], 0.0, max_len, end, &mut best)?;
    Ok(best.expect("vocabulary is non-empty"))
}

pub fn beam_suite(cases: usize, seed: u64) -> Result<SuiteReport> {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut failures, mut worst) = (0, 0.0f64);
    for _ in 0..cases {
        let vocab = rng.gen_range(2..=5);
        let max_len = rng.gen_range(1..=4);
        let end = rng.gen_range(0..vocab);
        let table = TableScorer::random(&mut rng, vocab, max_len);
        let scorer = |p: &[usize]| table.score(p);
        let wide = DecodeConfig {
            beam_size: vocab.pow(max_len as u32),
            max_len,
            ..Default::default()
        };
        let beam = beam_search(scorer, &wide, usize::MAX, end, vocab)?;
        let exact = exhaustive_best(&scorer, max_len, usize::MAX, end)?;
        let narrow = DecodeConfig { beam_size: 1, ..wide };
        let one = beam_search(scorer, &narrow, usize::MAX, end, vocab)?;
        let g = greedy(scorer, max_len, usize::MAX, end)?;
        worst = worst.max((beam[0].score - exact.score).abs());
        if beam[0].tokens != exact.tokens || one[0].tokens != g.tokens || one[0].score != g.score {
            failures += 1;
        }
    }
    Ok(SuiteReport {
        name: "beam vs exhaustive and greedy",
        cases,
        failures,
        worst,
        seconds: t.elapsed().as_secs_f64(),
    })
}

/// Every suite at the sizes used by the `selfcheck` command.
pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        cut_suite(200, 12, seed)?,
        game_suite(50, 4, seed.wrapping_add(1))?,
        gradient_suite(seed.wrapping_add(2))?,
        beam_suite(50, seed.wrapping_add(3))?,
    ])
}
