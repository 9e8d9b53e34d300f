//! Sentence-level generation metrics (BLEU-4, METEOR-lite, ROUGE-L), corpus
//! averaging, and paired bootstrap resampling for system comparison.
//!
//! METEOR-lite is a reduced METEOR: unigram alignment by exact match and a
//! small suffix-stripping stemmer only, with no synonym or paraphrase
//! resources. Scores it produces are not comparable to full METEOR and are
//! labeled "meteor-lite" wherever they are reported.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn ngram_counts<'a>(tokens: &[&'a str], n: usize) -> Vec<(Vec<&'a str>, usize)> {
    let mut counts: Vec<(Vec<&'a str>, usize)> = Vec::new();
    if tokens.len() < n {
        return counts;
    }
    for gram in tokens.windows(n) {
        match counts.iter_mut().find(|(g, _)| g == gram) {
            Some((_, c)) => *c += 1,
            None => counts.push((gram.to_vec(), 1)),
        }
    }
    counts
}

/// Sentence BLEU-4: geometric mean of clipped n-gram precisions for n = 1..4
/// times a brevity penalty of exp(1 - |ref|/|hyp|) when the hypothesis is
/// shorter. Orders n >= 2 use add-1 smoothing, (matched+1)/(total+1), so
/// short sentences are not zeroed by an absent higher-order n-gram; the
/// unigram precision is left raw so disjoint sentences still score 0.
pub fn bleu4_sentence<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let hyp: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut log_sum = 0.0f64;
    for n in 1..=4 {
        let hyp_grams = ngram_counts(&hyp, n);
        let ref_grams = ngram_counts(&reference, n);
        let total: usize = hyp_grams.iter().map(|(_, c)| c).sum();
        let matched: usize = hyp_grams
            .iter()
            .map(|(gram, c)| {
                let allowed = ref_grams
                    .iter()
                    .find(|(g, _)| g == gram)
                    .map_or(0, |(_, rc)| *rc);
                (*c).min(allowed)
            })
            .sum();
        let precision = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched + 1) as f64 / (total + 1) as f64
        };
        if precision == 0.0 {
            return 0.0;
        }
        log_sum += precision.ln();
    }
    let brevity = if hyp.len() < reference.len() {
        (1.0 - reference.len() as f64 / hyp.len() as f64).exp()
    } else {
        1.0
    };
    brevity * (log_sum / 4.0).exp()
}

/// Strips one plural or inflection suffix: "ies" -> "y" (length > 4), then
/// "es" (length > 3), then "s" unless the word ends in "ss" (length > 3),
/// then "ing" (length > 5), then "ed" (length > 4). At most one rule fires.
pub fn stem(token: &str) -> Cow<'_, str> {
    let n = token.len();
    if n > 4 && token.ends_with("ies") {
        return Cow::Owned(format!("{}y", &token[..n - 3]));
    }
    if n > 3 && token.ends_with("es") {
        return Cow::Borrowed(&token[..n - 2]);
    }
    if n > 3 && token.ends_with('s') && !token.ends_with("ss") {
        return Cow::Borrowed(&token[..n - 1]);
    }
    if n > 5 && token.ends_with("ing") {
        return Cow::Borrowed(&token[..n - 3]);
    }
    if n > 4 && token.ends_with("ed") {
        return Cow::Borrowed(&token[..n - 2]);
    }
    Cow::Borrowed(token)
}

/// Aligns hypothesis tokens to reference tokens in two stages. Stage one
/// scans the hypothesis left to right and pairs each token with the leftmost
/// unmatched reference token of identical surface form; stage two repeats
/// the scan over the leftovers comparing stems. Returns, per matched
/// hypothesis position in order, the aligned reference position.
fn align(hyp: &[&str], reference: &[&str]) -> Vec<(usize, usize)> {
    let mut ref_taken = vec![false; reference.len()];
    let mut hyp_match: Vec<Option<usize>> = vec![None; hyp.len()];
    for exact in [true, false] {
        for (i, h) in hyp.iter().enumerate() {
            if hyp_match[i].is_some() {
                continue;
            }
            let found = reference.iter().enumerate().position(|(j, r)| {
                !ref_taken[j] && if exact { r == h } else { stem(r) == stem(h) }
            });
            if let Some(j) = found {
                ref_taken[j] = true;
                hyp_match[i] = Some(j);
            }
        }
    }
    hyp_match
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.map(|j| (i, j)))
        .collect()
}

fn chunk_count(pairs: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for &(i, j) in pairs {
        let adjacent = prev == Some((i.wrapping_sub(1), j.wrapping_sub(1)));
        if !adjacent {
            chunks += 1;
        }
        prev = Some((i, j));
    }
    chunks
}

/// METEOR-lite: precision and recall over aligned unigrams combined as
/// F_mean = 10PR / (R + 9P), discounted by the fragmentation penalty
/// 0.5 * (chunks/matches)^3. Identical sentences of length L score
/// 1 - 0.5/L^3, not 1.
pub fn meteor_lite<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let hyp: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let pairs = align(&hyp, &reference);
    let matches = pairs.len() as f64;
    if pairs.is_empty() {
        return 0.0;
    }
    let precision = matches / hyp.len() as f64;
    let recall = matches / reference.len() as f64;
    let f_mean = 10.0 * precision * recall / (recall + 9.0 * precision);
    let chunks = chunk_count(&pairs) as f64;
    let penalty = 0.5 * (chunks / matches).powi(3);
    f_mean * (1.0 - penalty)
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L: F-measure over longest-common-subsequence precision and recall
/// with beta = 1.2, F = (1 + beta^2)PR / (R + beta^2 P); 0 when the LCS is
/// empty.
pub fn rouge_l<S: AsRef<str>>(hypothesis: &[S], reference: &[S]) -> f64 {
    if hypothesis.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let hyp: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let lcs = lcs_len(&hyp, &reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / hyp.len() as f64;
    let recall = lcs / reference.len() as f64;
    let beta_sq = 1.2f64 * 1.2;
    (1.0 + beta_sq) * precision * recall / (recall + beta_sq * precision)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Bleu4,
    MeteorLite,
    RougeL,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Metric::Bleu4 => "bleu-4",
            Metric::MeteorLite => "meteor-lite",
            Metric::RougeL => "rouge-l",
        };
        f.write_str(name)
    }
}

pub const METRICS: [Metric; 3] = [Metric::Bleu4, Metric::MeteorLite, Metric::RougeL];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
    pub bleu4: f64,
    pub meteor_lite: f64,
    pub rouge_l: f64,
}

impl ScoredPair {
    pub fn score(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Bleu4 => self.bleu4,
            Metric::MeteorLite => self.meteor_lite,
            Metric::RougeL => self.rouge_l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: Vec<ScoredPair>,
    pub bleu4_mean: f64,
    pub meteor_lite_mean: f64,
    pub rouge_l_mean: f64,
}

impl EvalReport {
    pub fn mean(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Bleu4 => self.bleu4_mean,
            Metric::MeteorLite => self.meteor_lite_mean,
            Metric::RougeL => self.rouge_l_mean,
        }
    }

    pub fn sentence_scores(&self, metric: Metric) -> Vec<f64> {
        self.pairs.iter().map(|p| p.score(metric)).collect()
    }
}

/// Scores every hypothesis/reference pair with all three metrics and
/// averages each metric over the corpus.
pub fn corpus_eval(pairs: &[(Vec<String>, Vec<String>)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Contract("corpus_eval needs at least one pair".into()));
    }
    let scored: Vec<ScoredPair> = pairs
        .iter()
        .map(|(hyp, reference)| ScoredPair {
            hypothesis: hyp.clone(),
            reference: reference.clone(),
            bleu4: bleu4_sentence(hyp, reference),
            meteor_lite: meteor_lite(hyp, reference),
            rouge_l: rouge_l(hyp, reference),
        })
        .collect();
    let n = scored.len() as f64;
    let mean = |f: fn(&ScoredPair) -> f64| scored.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        bleu4_mean: mean(|p| p.bleu4),
        meteor_lite_mean: mean(|p| p.meteor_lite),
        rouge_l_mean: mean(|p| p.rouge_l),
        pairs: scored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapVerdict {
    pub score_a: f64,
    pub score_b: f64,
    pub win_fraction_a: f64,
    pub significant: bool,
    pub n_resamples: usize,
}

/// Paired bootstrap test: draws `n_resamples` index samples of size n with
/// replacement from one seeded stream (resample-major order), counts the
/// resamples each system's mean strictly wins, and calls the difference
/// significant when either side wins at least 95% of them. Ties count for
/// neither side, so identical score lists are never significant.
pub fn bootstrap_compare(
    scores_a: &[f64],
    scores_b: &[f64],
    n_resamples: usize,
    seed: u64,
) -> Result<BootstrapVerdict> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::Contract(format!(
            "paired score lists differ in length: {} vs {}",
            scores_a.len(),
            scores_b.len()
        )));
    }
    if scores_a.is_empty() {
        return Err(Error::Contract("paired score lists are empty".into()));
    }
    if n_resamples < 100 {
        return Err(Error::Contract("n_resamples must be at least 100".into()));
    }
    let n = scores_a.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut wins_a = 0usize;
    let mut wins_b = 0usize;
    for _ in 0..n_resamples {
        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        for _ in 0..n {
            let idx = rng.random_range(0..n);
            sum_a += scores_a[idx];
            sum_b += scores_b[idx];
        }
        let mean_a = sum_a / n as f64;
        let mean_b = sum_b / n as f64;
        if mean_a > mean_b {
            wins_a += 1;
        } else if mean_b > mean_a {
            wins_b += 1;
        }
    }
    let frac_a = wins_a as f64 / n_resamples as f64;
    let frac_b = wins_b as f64 / n_resamples as f64;
    Ok(BootstrapVerdict {
        score_a: scores_a.iter().sum::<f64>() / n as f64,
        score_b: scores_b.iter().sum::<f64>() / n as f64,
        win_fraction_a: frac_a,
        significant: frac_a >= 0.95 || frac_b >= 0.95,
        n_resamples,
    })
}
