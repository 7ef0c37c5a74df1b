use std::collections::BTreeMap;

use arccap_core::data::tokenize;
use arccap_core::metrics::{bleu_all, evaluate_all, rouge_l, RefCorpus, MAX_ORDER};
use proptest::prelude::*;

type Tokens = Vec<String>;

const WORDS: [&str; 6] = ["a", "dog", "runs", "on", "the", "grass"];

fn words(ids: &[usize]) -> Tokens {
    ids.iter().map(|&i| WORDS[i].to_string()).collect()
}

/// Occurrences of `gram` in `s` by sliding window.
fn count(s: &[String], gram: &[String]) -> usize {
    s.windows(gram.len()).filter(|w| *w == gram).count()
}

/// Corpus BLEU written from the definition: clipped n-gram precision,
/// geometric mean, brevity penalty on closest reference lengths.
fn bleu_oracle(cands: &BTreeMap<u64, Tokens>, refs: &BTreeMap<u64, Vec<Tokens>>) -> [f64; MAX_ORDER] {
    let mut matched = [0.0; MAX_ORDER];
    let mut total = [0.0; MAX_ORDER];
    let (mut c_len, mut r_len) = (0.0, 0.0);
    for (id, cand) in cands {
        let rs = &refs[id];
        c_len += cand.len() as f64;
        let mut closest = rs[0].len();
        for r in rs {
            let (d, best) = (r.len().abs_diff(cand.len()), closest.abs_diff(cand.len()));
            if d < best || (d == best && r.len() < closest) {
                closest = r.len();
            }
        }
        r_len += closest as f64;
        for n in 1..=MAX_ORDER {
            if cand.len() < n {
                continue;
            }
            let mut distinct: Vec<&[String]> = cand.windows(n).collect();
            distinct.sort();
            distinct.dedup();
            for g in distinct {
                let max_ref = rs.iter().map(|r| count(r, g)).max().unwrap();
                matched[n - 1] += count(cand, g).min(max_ref) as f64;
            }
            total[n - 1] += (cand.len() + 1 - n) as f64;
        }
    }
    let bp = if c_len == 0.0 {
        0.0
    } else if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len / c_len).exp()
    };
    let mut out = [0.0; MAX_ORDER];
    for n in 1..=MAX_ORDER {
        if matched[..n].contains(&0.0) {
            continue;
        }
        let log_p: f64 = (0..n).map(|k| (matched[k] / total[k]).ln()).sum::<f64>() / n as f64;
        out[n - 1] = bp * log_p.exp();
    }
    out
}

fn lcs(a: &[String], b: &[String]) -> usize {
    // full table, no rolling rows
    let mut t = vec![vec![0; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] {
                t[i - 1][j - 1] + 1
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[a.len()][b.len()]
}

fn rouge_oracle(cands: &BTreeMap<u64, Tokens>, refs: &BTreeMap<u64, Vec<Tokens>>) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut sum = 0.0;
    for (id, c) in cands {
        let mut best: f64 = 0.0;
        for r in &refs[id] {
            let l = lcs(c, r) as f64;
            if l == 0.0 {
                continue;
            }
            let (p, rec) = (l / c.len() as f64, l / r.len() as f64);
            best = best.max((1.0 + beta2) * p * rec / (rec + beta2 * p));
        }
        sum += best;
    }
    sum / cands.len() as f64
}

fn corpus_strategy() -> impl Strategy<Value = (BTreeMap<u64, Tokens>, BTreeMap<u64, Vec<Tokens>>)> {
    let caption = prop::collection::vec(0usize..WORDS.len(), 0..9);
    let reference = prop::collection::vec(0usize..WORDS.len(), 1..9);
    prop::collection::vec((caption, prop::collection::vec(reference, 1..4)), 2..6).prop_map(|items| {
        let mut cands = BTreeMap::new();
        let mut refs = BTreeMap::new();
        for (k, (c, rs)) in items.into_iter().enumerate() {
            cands.insert(k as u64 * 7 + 1, words(&c));
            refs.insert(k as u64 * 7 + 1, rs.iter().map(|r| words(r)).collect());
        }
        (cands, refs)
    })
}

#[test]
fn hand_cases() {
    let one = |c: &str, r: &str| {
        let cands = BTreeMap::from([(1, tokenize(c))]);
        let refs = RefCorpus::new(BTreeMap::from([(1, vec![tokenize(r)])])).unwrap();
        (bleu_all(&cands, &refs).unwrap()[0], rouge_l(&cands, &refs).unwrap())
    };
    assert!((one("the cat sat on mat", "the cat sat on the mat").0 - 0.8187).abs() < 1e-4);
    assert!((one("a b c", "a c").1 - 0.8299).abs() < 1e-4);
    // same values from the oracles
    let c = BTreeMap::from([(1, tokenize("a b c"))]);
    let r = BTreeMap::from([(1, vec![tokenize("a c")])]);
    assert!((rouge_oracle(&c, &r) - 0.8299).abs() < 1e-4);
}

#[test]
fn identity_and_disjoint_reports() {
    let refs: BTreeMap<u64, Vec<Tokens>> = BTreeMap::from([
        (3, vec![tokenize("a dog runs on grass")]),
        (9, vec![tokenize("two cats sleep in beds")]),
    ]);
    let corpus = RefCorpus::new(refs.clone()).unwrap();
    let cands: BTreeMap<u64, Tokens> = refs.iter().map(|(k, v)| (*k, v[0].clone())).collect();
    let r = evaluate_all(&cands, &corpus).unwrap();
    for v in [r.b1, r.b2, r.b3, r.b4, r.rouge_l] {
        assert!((v - 1.0).abs() < 1e-9);
    }
    assert!((r.cider - 10.0).abs() < 1e-9);
    assert!(r.meteor.is_none() && r.spice.is_none());

    let far: BTreeMap<u64, Tokens> = refs.keys().map(|&k| (k, tokenize("xx yy zz ww"))).collect();
    let r = evaluate_all(&far, &corpus).unwrap();
    assert_eq!([r.b1, r.b2, r.b3, r.b4, r.rouge_l, r.cider], [0.0; 6]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn bleu_and_rouge_match_oracles((cands, refs) in corpus_strategy()) {
        let corpus = RefCorpus::new(refs.clone()).unwrap();
        let got = bleu_all(&cands, &corpus).unwrap();
        let want = bleu_oracle(&cands, &refs);
        for n in 0..MAX_ORDER {
            prop_assert!((got[n] - want[n]).abs() < 1e-12, "BLEU-{}: {} vs {}", n + 1, got[n], want[n]);
        }
        prop_assert!((rouge_l(&cands, &corpus).unwrap() - rouge_oracle(&cands, &refs)).abs() < 1e-12);
    }

    #[test]
    fn scores_stay_in_range((cands, refs) in corpus_strategy()) {
        let r = evaluate_all(&cands, &RefCorpus::new(refs).unwrap()).unwrap();
        for v in [r.b1, r.b2, r.b3, r.b4, r.rouge_l] {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        prop_assert!((0.0..=10.0 + 1e-9).contains(&r.cider));
        prop_assert!(r.is_valid());
    }

    #[test]
    fn adding_candidate_as_reference_never_lowers_bleu((cands, refs) in corpus_strategy()) {
        for (id, c) in &cands {
            let single = BTreeMap::from([(*id, c.clone())]);
            let before = RefCorpus::new(BTreeMap::from([(*id, refs[id].clone())])).unwrap();
            let after = before.with_reference(*id, c.clone()).unwrap();
            let (b, a) = (bleu_all(&single, &before).unwrap(), bleu_all(&single, &after).unwrap());
            for n in 0..MAX_ORDER {
                prop_assert!(a[n] >= b[n] - 1e-12, "image {} order {}", id, n + 1);
            }
        }
    }

    #[test]
    fn relabeling_images_changes_nothing((cands, refs) in corpus_strategy(), shift in 1u64..1000) {
        // reverse the id order and move the range
        let top = *cands.keys().max().unwrap();
        let relabel = |k: u64| top - k + shift;
        let cands2: BTreeMap<u64, Tokens> = cands.iter().map(|(k, v)| (relabel(*k), v.clone())).collect();
        let refs2: BTreeMap<u64, Vec<Tokens>> = refs.iter().map(|(k, v)| (relabel(*k), v.clone())).collect();
        let a = evaluate_all(&cands, &RefCorpus::new(refs).unwrap()).unwrap();
        let b = evaluate_all(&cands2, &RefCorpus::new(refs2).unwrap()).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false, "field presence differs"),
            }
        }
    }

    #[test]
    fn tokenization_is_idempotent(text in "[ -~]{0,60}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.join(" ")), once);
    }
}
