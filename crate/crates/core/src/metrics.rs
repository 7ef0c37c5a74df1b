//! Corpus caption metrics: BLEU-1..4, ROUGE-L and CIDEr-D.
//!
//! Candidates and references are token lists produced by
//! [`tokenize`](crate::data::tokenize). Per-image statistics are computed in
//! parallel and reduced in image-id order, so results do not depend on
//! scheduling or on the order images were inserted.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{tokenize, ImageId};
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;

pub type Tokens = Vec<String>;
type Counts<'a> = BTreeMap<&'a [String], usize>;

fn ngrams(tokens: &[String], n: usize) -> Counts<'_> {
    let mut out = Counts::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *out.entry(g).or_insert(0) += 1;
        }
    }
    out
}

/// Reference captions per image with n-gram document frequencies.
#[derive(Clone, Debug)]
pub struct RefCorpus {
    refs: BTreeMap<ImageId, Vec<Tokens>>,
    /// `df[n-1]`: number of images whose references contain each n-gram.
    df: Vec<BTreeMap<Tokens, usize>>,
}

impl RefCorpus {
    pub fn new(refs: BTreeMap<ImageId, Vec<Tokens>>) -> Result<Self> {
        if let Some((id, _)) = refs.iter().find(|(_, r)| r.is_empty()) {
            return Err(Error::validation(format!("image {id} has no reference captions")));
        }
        let mut df = vec![BTreeMap::new(); MAX_ORDER];
        for captions in refs.values() {
            for (n, table) in df.iter_mut().enumerate() {
                let mut seen = Counts::new();
                for c in captions {
                    seen.extend(ngrams(c, n + 1));
                }
                for g in seen.into_keys() {
                    *table.entry(g.to_vec()).or_insert(0) += 1;
                }
            }
        }
        Ok(RefCorpus { refs, df })
    }

    /// Tokenizes raw reference strings.
    pub fn from_text(refs: &BTreeMap<ImageId, Vec<String>>) -> Result<Self> {
        Self::new(
            refs.iter()
                .map(|(&id, rs)| (id, rs.iter().map(|r| tokenize(r)).collect()))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    pub fn get(&self, id: ImageId) -> Option<&[Tokens]> {
        self.refs.get(&id).map(Vec::as_slice)
    }

    pub fn document_frequency(&self, gram: &[String]) -> usize {
        match gram.len() {
            1..=MAX_ORDER => self.df[gram.len() - 1].get(gram).copied().unwrap_or(0),
            _ => 0,
        }
    }

    /// Inserts an extra reference for one image, rebuilding frequencies.
    pub fn with_reference(&self, id: ImageId, caption: Tokens) -> Result<Self> {
        let mut refs = self.refs.clone();
        refs.entry(id).or_default().push(caption);
        Self::new(refs)
    }
}

/// Tokenizes raw candidate strings.
pub fn tokenize_candidates(cands: &BTreeMap<ImageId, String>) -> BTreeMap<ImageId, Tokens> {
    cands.iter().map(|(&id, c)| (id, tokenize(c))).collect()
}

fn check<'a>(cands: &'a BTreeMap<ImageId, Tokens>, refs: &'a RefCorpus) -> Result<Vec<(&'a Tokens, &'a [Tokens])>> {
    if cands.is_empty() {
        return Err(Error::validation("no candidate captions"));
    }
    cands
        .iter()
        .map(|(id, c)| {
            refs.get(*id)
                .map(|r| (c, r))
                .ok_or_else(|| Error::Referential(format!("candidate image {id} has no references")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default)]
struct BleuStats {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    cand_len: usize,
    ref_len: usize,
}

fn bleu_stats(cand: &[String], refs: &[Tokens]) -> BleuStats {
    let mut s = BleuStats {
        cand_len: cand.len(),
        ..Default::default()
    };
    // closest reference length, ties to the shorter one
    s.ref_len = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(cand.len()), r))
        .unwrap_or(0);
    for n in 1..=MAX_ORDER {
        let mut max_ref = Counts::new();
        for r in refs {
            for (g, c) in ngrams(r, n) {
                let slot = max_ref.entry(g).or_insert(0);
                *slot = (*slot).max(c);
            }
        }
        let cand_grams = ngrams(cand, n);
        s.matches[n - 1] = cand_grams
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        s.totals[n - 1] = cand.len().saturating_sub(n - 1);
    }
    s
}

/// Corpus BLEU-`n`, no smoothing.
pub fn bleu(cands: &BTreeMap<ImageId, Tokens>, refs: &RefCorpus, n: usize) -> Result<f64> {
    Ok(bleu_all(cands, refs)?[n
        .checked_sub(1)
        .filter(|&k| k < MAX_ORDER)
        .ok_or_else(|| Error::validation(format!("BLEU order {n} is outside 1..={MAX_ORDER}")))?])
}

/// BLEU-1 through BLEU-4 from one pass over the corpus.
pub fn bleu_all(cands: &BTreeMap<ImageId, Tokens>, refs: &RefCorpus) -> Result<[f64; MAX_ORDER]> {
    let pairs = check(cands, refs)?;
    let per_image: Vec<BleuStats> = pairs.par_iter().map(|(c, r)| bleu_stats(c, r)).collect();
    let mut total = BleuStats::default();
    for s in &per_image {
        for k in 0..MAX_ORDER {
            total.matches[k] += s.matches[k];
            total.totals[k] += s.totals[k];
        }
        total.cand_len += s.cand_len;
        total.ref_len += s.ref_len;
    }
    if total.cand_len == 0 {
        return Ok([0.0; MAX_ORDER]);
    }
    let bp = (1.0 - total.ref_len as f64 / total.cand_len as f64).min(0.0).exp();
    let mut out = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let (m, t) = (total.matches[n - 1], total.totals[n - 1]);
        if m == 0 {
            // every higher order is zero too
            break;
        }
        log_sum += (m as f64 / t as f64).ln();
        out[n - 1] = bp * (log_sum / n as f64).exp();
    }
    Ok(out)
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0; b.len() + 1];
    let mut cur = vec![0; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_pair(cand: &[String], reference: &[String]) -> f64 {
    let l = lcs(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * r * p / (r + b2 * p)
}

/// Mean over images of the best LCS F-score against any reference.
pub fn rouge_l(cands: &BTreeMap<ImageId, Tokens>, refs: &RefCorpus) -> Result<f64> {
    let pairs = check(cands, refs)?;
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|(c, rs)| rs.iter().map(|r| rouge_pair(c, r)).fold(0.0, f64::max))
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

struct TfIdf {
    vecs: Vec<BTreeMap<Tokens, f64>>,
    norms: Vec<f64>,
    len: usize,
}

fn tfidf(tokens: &[String], refs: &RefCorpus, log_n: f64) -> TfIdf {
    let mut vecs = Vec::with_capacity(MAX_ORDER);
    let mut norms = Vec::with_capacity(MAX_ORDER);
    for n in 1..=MAX_ORDER {
        let v: BTreeMap<Tokens, f64> = ngrams(tokens, n)
            .into_iter()
            .map(|(g, c)| {
                let df = refs.document_frequency(g).max(1) as f64;
                (g.to_vec(), c as f64 * (log_n - df.ln()))
            })
            .collect();
        norms.push(v.values().map(|x| x * x).sum::<f64>().sqrt());
        vecs.push(v);
    }
    TfIdf {
        vecs,
        norms,
        len: tokens.len(),
    }
}

fn cider_pair(c: &TfIdf, r: &TfIdf) -> [f64; MAX_ORDER] {
    let delta = c.len as f64 - r.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    std::array::from_fn(|k| {
        if c.norms[k] == 0.0 || r.norms[k] == 0.0 {
            return 0.0;
        }
        let dot: f64 = c.vecs[k]
            .iter()
            .filter_map(|(g, &x)| r.vecs[k].get(g).map(|&y| x.min(y) * y))
            .sum();
        dot / (c.norms[k] * r.norms[k]) * penalty
    })
}

/// CIDEr-D with document frequencies taken over the reference corpus.
pub fn cider(cands: &BTreeMap<ImageId, Tokens>, refs: &RefCorpus) -> Result<f64> {
    let pairs = check(cands, refs)?;
    if refs.len() < 2 {
        return Err(Error::validation("CIDEr needs at least two reference images"));
    }
    let log_n = (refs.len() as f64).ln();
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|(c, rs)| {
            let cv = tfidf(c, refs, log_n);
            let mut sum = [0.0; MAX_ORDER];
            for r in rs.iter() {
                let s = cider_pair(&cv, &tfidf(r, refs, log_n));
                for k in 0..MAX_ORDER {
                    sum[k] += s[k];
                }
            }
            let mean_over_orders = sum.iter().sum::<f64>() / MAX_ORDER as f64;
            10.0 * mean_over_orders / rs.len() as f64
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Scores in the usual table column order. METEOR and SPICE are not
/// implemented and always serialize as `null`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "B1")]
    pub b1: f64,
    #[serde(rename = "B2")]
    pub b2: f64,
    #[serde(rename = "B3")]
    pub b3: f64,
    #[serde(rename = "B4")]
    pub b4: f64,
    #[serde(rename = "M")]
    pub meteor: Option<f64>,
    #[serde(rename = "R")]
    pub rouge_l: f64,
    #[serde(rename = "C")]
    pub cider: f64,
    #[serde(rename = "S")]
    pub spice: Option<f64>,
}

pub const REPORT_FIELDS: [&str; 8] = ["B1", "B2", "B3", "B4", "M", "R", "C", "S"];

impl MetricReport {
    pub fn values(&self) -> [Option<f64>; 8] {
        [
            Some(self.b1),
            Some(self.b2),
            Some(self.b3),
            Some(self.b4),
            self.meteor,
            Some(self.rouge_l),
            Some(self.cider),
            self.spice,
        ]
    }

    pub fn is_valid(&self) -> bool {
        let unit = [self.b1, self.b2, self.b3, self.b4, self.rouge_l];
        unit.iter().all(|x| (0.0..=1.0).contains(x))
            && (0.0..=10.0).contains(&self.cider)
            && self.meteor.is_none()
            && self.spice.is_none()
    }
}

pub fn evaluate_all(cands: &BTreeMap<ImageId, Tokens>, refs: &RefCorpus) -> Result<MetricReport> {
    let b = bleu_all(cands, refs)?;
    Ok(MetricReport {
        b1: b[0],
        b2: b[1],
        b3: b[2],
        b4: b[3],
        meteor: None,
        rouge_l: rouge_l(cands, refs)?,
        cider: cider(cands, refs)?,
        spice: None,
    })
}

/// Fixed-width text table, one row per labelled report.
pub fn format_table(rows: &[(&str, &MetricReport)]) -> String {
    let label_width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max("method".len());
    let mut out = format!("{:<label_width$}", "method");
    for f in REPORT_FIELDS {
        let _ = write!(out, " {f:>6}");
    }
    out.push('\n');
    for (label, r) in rows {
        let _ = write!(out, "{label:<label_width$}");
        for v in r.values() {
            match v {
                Some(x) => {
                    let _ = write!(out, " {x:>6.3}");
                }
                None => {
                    let _ = write!(out, " {:>6}", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
