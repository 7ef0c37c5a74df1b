use std::collections::BTreeMap;

use arccap_core::decode::{beam_search, fuse, greedy, DecodeConfig, Hypothesis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const START: usize = 0;

/// Bigram log-probabilities: one normalized row per previous token.
/// Token 0 doubles as the start token and is never emitted.
struct Bigram {
    rows: Vec<Vec<f64>>,
}

impl Bigram {
    fn random(rng: &mut ChaCha8Rng, vocab: usize) -> Self {
        let rows = (0..vocab)
            .map(|_| {
                let mut w: Vec<f64> = (0..vocab).map(|_| rng.gen_range(0.05..1.0)).collect();
                w[START] = 0.0;
                let z: f64 = w.iter().sum();
                w.iter()
                    .map(|x| if *x == 0.0 { f64::NEG_INFINITY } else { (x / z).ln() })
                    .collect()
            })
            .collect();
        Bigram { rows }
    }

    fn score(&self, prefix: &[usize]) -> arccap_core::Result<Vec<f64>> {
        Ok(self.rows[*prefix.last().unwrap()].clone())
    }

    fn sequence_score(&self, tokens: &[usize]) -> f64 {
        let mut prev = START;
        let mut total = 0.0;
        for &t in tokens {
            total += self.rows[prev][t];
            prev = t;
        }
        total
    }
}

/// Every sequence that ends at `end` or at `max_len`; the best score wins
/// and ties go to the lexicographically smaller sequence.
fn exhaustive(bigram: &Bigram, vocab: usize, max_len: usize, end: usize) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut stack = vec![Vec::new()];
    while let Some(seq) = stack.pop() {
        for w in 1..vocab {
            let mut next = seq.clone();
            next.push(w);
            if w == end || next.len() == max_len {
                let s = bigram.sequence_score(&next);
                let better = match &best {
                    None => true,
                    Some((b, bs)) => s > *bs || (s == *bs && next < *b),
                };
                if better {
                    best = Some((next, s));
                }
            } else {
                stack.push(next);
            }
        }
    }
    best.unwrap()
}

fn cfg(beam_size: usize, max_len: usize) -> DecodeConfig {
    DecodeConfig {
        beam_size,
        max_len,
        ..Default::default()
    }
}

#[test]
fn unpruned_beam_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for case in 0..50 {
        let vocab = rng.gen_range(3..=5);
        let max_len = rng.gen_range(1..=4);
        let end = rng.gen_range(1..vocab);
        let bigram = Bigram::random(&mut rng, vocab);
        let beam = vocab.pow(max_len as u32);
        let out = beam_search(|p| bigram.score(p), &cfg(beam, max_len), START, end, vocab).unwrap();
        let (tokens, score) = exhaustive(&bigram, vocab, max_len, end);
        assert_eq!(out[0].tokens, tokens, "case {case}");
        assert_eq!(out[0].score, score, "case {case}");
    }
}

#[test]
fn beam_one_is_greedy() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for case in 0..50 {
        let vocab = rng.gen_range(3..=5);
        let max_len = rng.gen_range(1..=4);
        let end = rng.gen_range(1..vocab);
        let bigram = Bigram::random(&mut rng, vocab);
        let beam = beam_search(|p| bigram.score(p), &cfg(1, max_len), START, end, vocab).unwrap();
        let g = greedy(|p| bigram.score(p), max_len, START, end).unwrap();
        assert_eq!(beam.len(), 1);
        assert_eq!(beam[0], g, "case {case}");
    }
}

#[test]
fn deterministic_scorer_any_beam() {
    // probability one on token 1, 2, then end
    let target = [1usize, 2, 3];
    let scorer = |p: &[usize]| -> arccap_core::Result<Vec<f64>> {
        let mut v = vec![f64::NEG_INFINITY; 4];
        v[target[p.len() - 1]] = 0.0;
        Ok(v)
    };
    for beam in 1..=4 {
        let out = beam_search(scorer, &cfg(beam, 8), START, 3, 4).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens, target);
        assert_eq!(out[0].score, 0.0);
    }
}

#[test]
fn fusion_hand_example() {
    let c = DecodeConfig {
        fusion_lambda: 1.0,
        fusion_epsilon: 1e-6,
        ..Default::default()
    };
    let m = BTreeMap::from([(0, 0.9), (1, 0.1)]);
    let s = fuse(&[-1.0, -1.0], &m, &c).unwrap();
    assert!((s[0] - s[1] - 2.197).abs() < 1e-3);
    let certain = fuse(&[-1.0, -1.0], &BTreeMap::from([(0, 1.0)]), &c).unwrap();
    assert!((certain[0] + 1.0).abs() <= 2e-6);
    assert_eq!(certain[1], -1.0);
}

fn completed_invariant(h: &Hypothesis, end: usize, max_len: usize) -> bool {
    h.completed && (h.tokens.last() == Some(&end) || h.tokens.len() == max_len) && h.score.is_finite()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scores_are_sums_of_step_scores(
        seed in 0u64..10_000,
        vocab in 3usize..7,
        max_len in 1usize..6,
        beam in 1usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let end = rng.gen_range(1..vocab);
        let bigram = Bigram::random(&mut rng, vocab);
        let out = beam_search(|p| bigram.score(p), &cfg(beam, max_len), START, end, vocab).unwrap();
        prop_assert!(!out.is_empty());
        for w in out.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        for h in &out {
            prop_assert!((h.score - bigram.sequence_score(&h.tokens)).abs() <= 1e-9);
            prop_assert!(completed_invariant(h, end, max_len));
        }
    }

    #[test]
    fn zero_lambda_fusion_is_identity(
        emission in prop::collection::vec(-20.0f64..0.0, 1..12),
        raw in prop::collection::btree_map(0usize..12, 0.0f64..=1.0, 0..6),
    ) {
        let m: BTreeMap<usize, f64> = raw.into_iter().filter(|(k, _)| *k < emission.len()).collect();
        let c = DecodeConfig { fusion_lambda: 0.0, ..Default::default() };
        let out = fuse(&emission, &m, &c).unwrap();
        prop_assert_eq!(out, emission);
    }

    #[test]
    fn larger_marginal_never_lowers_score(
        e in -10.0f64..0.0,
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
        lambda in 0.0f64..2.0,
    ) {
        let c = DecodeConfig { fusion_lambda: lambda, ..Default::default() };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s_lo = fuse(&[e], &BTreeMap::from([(0, lo)]), &c).unwrap()[0];
        let s_hi = fuse(&[e], &BTreeMap::from([(0, hi)]), &c).unwrap()[0];
        prop_assert!(s_hi >= s_lo);
    }
}
