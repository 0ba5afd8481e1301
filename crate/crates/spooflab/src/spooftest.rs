//! Spoofing-discovery tests.
//!
//! A received text's per-position watermark evidence `x` is correlated with
//! a defender-computed score sequence `y` that proxies the spoofer's n-gram
//! knowledge. The statistic S is the Fisher-transformed Spearman correlation
//! over kept positions; the Standard method standardizes it directly under
//! cross-independence, while the Reprompting method cancels an unknown
//! offset by differencing against a fresh continuation regenerated from the
//! same prefix. Statistic computation never branches on the scheme.

use std::collections::HashMap;

use crate::core::{pack_tokens, token_bits, TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::statkit;
use crate::watermark::WatermarkTrace;

/// Fewest kept positions the tests accept; below this the asymptotics have
/// no mass and the caller gets an error, not a p-value.
pub const MIN_KEPT: usize = 20;

/// What a frequency table counts.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum FrequencyKind {
    Unigram,
    /// Unordered (h+1)-grams, canonicalized by sorting the window.
    UnorderedNgram { h: usize },
}

/// Unordered n-gram or unigram counts over a reference corpus.
#[derive(Clone, Debug)]
pub struct FrequencyTable {
    pub kind: FrequencyKind,
    counts: HashMap<u128, u64>,
    total: u64,
    bits: u32,
}

impl FrequencyTable {
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn n_keys(&self) -> usize {
        self.counts.len()
    }

    fn key_of(&self, window: &[TokenId]) -> Result<u128> {
        let mut sorted: Vec<TokenId> = window.to_vec();
        sorted.sort_unstable();
        pack_tokens(&sorted, self.bits)
            .ok_or_else(|| Error::InvalidParam("gram does not fit the packed key".into()))
    }

    /// Count of the unordered gram.
    pub fn gram_count(&self, window: &[TokenId]) -> Result<u64> {
        Ok(self.counts.get(&self.key_of(window)?).copied().unwrap_or(0))
    }

    /// Normalized unigram frequency.
    pub fn unigram_freq(&self, token: TokenId) -> f64 {
        let key = pack_tokens(&[token], self.bits).expect("single token fits");
        self.counts.get(&key).map_or(0.0, |&c| c as f64 / self.total as f64)
    }

    /// Iterate raw (key, count) pairs; used by the table-perturbation
    /// ablation.
    pub fn iter_counts(&self) -> impl Iterator<Item = (u128, u64)> + '_ {
        self.counts.iter().map(|(&k, &c)| (k, c))
    }
}

/// Count unigrams or unordered (h+1)-grams over the documents.
pub fn build_frequency_table(
    documents: &[TokenSeq],
    vocab_size: usize,
    kind: FrequencyKind,
) -> Result<FrequencyTable> {
    if documents.is_empty() || documents.iter().all(|d| d.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let bits = token_bits(vocab_size);
    let mut table = FrequencyTable {
        kind,
        counts: HashMap::new(),
        total: 0,
        bits,
    };
    match kind {
        FrequencyKind::Unigram => {
            for doc in documents {
                for &t in doc.tokens() {
                    let key = pack_tokens(&[t], bits).expect("single token fits");
                    *table.counts.entry(key).or_insert(0) += 1;
                    table.total += 1;
                }
            }
        }
        FrequencyKind::UnorderedNgram { h } => {
            let len = h + 1;
            for doc in documents {
                if doc.len() < len {
                    continue;
                }
                for w in doc.windows(len) {
                    let key = table.key_of(w)?;
                    *table.counts.entry(key).or_insert(0) += 1;
                    table.total += 1;
                }
            }
            if table.total == 0 {
                return Err(Error::EmptyCorpus);
            }
        }
    }
    Ok(table)
}

/// Defender scores aligned to a trace's positions; `y[t]` is meaningful for
/// `t >= h` and zero before.
#[derive(Clone, Debug)]
pub struct ScoreSeq {
    pub y: Vec<f64>,
}

/// n-gram score: `y_t` = reference count of the unordered window
/// `w[t-h..=t]`. Raw counts; any monotone normalization is equivalent under
/// the rank statistic.
pub fn ngram_score(table: &FrequencyTable, text: &[TokenId], h: usize) -> Result<ScoreSeq> {
    match table.kind {
        FrequencyKind::UnorderedNgram { h: th } if th == h => {}
        _ => {
            return Err(Error::InvalidParam(format!(
                "table kind {:?} does not provide unordered {}-grams",
                table.kind,
                h + 1
            )))
        }
    }
    let mut y = vec![0.0; text.len()];
    for t in h..text.len() {
        y[t] = table.gram_count(&text[t - h..=t])? as f64;
    }
    Ok(ScoreSeq { y })
}

/// Score a text against an arbitrary gram-count lookup (perturbed or
/// synthetic tables); the lookup receives the unsorted window.
pub fn ngram_score_with<F: Fn(&[TokenId]) -> f64>(
    lookup: F,
    text: &[TokenId],
    h: usize,
) -> ScoreSeq {
    let mut y = vec![0.0; text.len()];
    for t in h..text.len() {
        y[t] = lookup(&text[t - h..=t]);
    }
    ScoreSeq { y }
}

/// Unigram score: `y_t` = reference frequency of the token at the far edge
/// of the watermark context window, `w[t-h]`.
pub fn unigram_score(table: &FrequencyTable, text: &[TokenId], h: usize) -> Result<ScoreSeq> {
    if table.kind != FrequencyKind::Unigram {
        return Err(Error::InvalidParam(
            "unigram score needs a unigram table".into(),
        ));
    }
    let mut y = vec![0.0; text.len()];
    for t in h..text.len() {
        y[t] = table.unigram_freq(text[t - h]);
    }
    Ok(ScoreSeq { y })
}

/// Fisher-transformed Spearman correlation between kept evidence and kept
/// scores.
pub fn statistic_s(trace: &WatermarkTrace, score: &ScoreSeq) -> Result<f64> {
    if trace.len() != score.y.len() {
        return Err(Error::LengthMismatch(trace.len(), score.y.len()));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for t in 0..trace.len() {
        if trace.keep[t] {
            xs.push(trace.x[t]);
            ys.push(score.y[t]);
        }
    }
    if xs.len() < MIN_KEPT {
        return Err(Error::TooFewKept {
            min: MIN_KEPT,
            got: xs.len(),
        });
    }
    let x0 = xs[0];
    if xs.iter().all(|&x| x == x0) {
        return Err(Error::ConstantColors);
    }
    let y0 = ys[0];
    if ys.iter().all(|&y| y == y0) {
        return Err(Error::ConstantScores);
    }
    let rho = statkit::spearman_rho(&xs, &ys)?;
    Ok(rho.clamp(-(1.0 - 1e-10), 1.0 - 1e-10).atanh())
}

/// Tail convention for the z-tests. Spoofing pushes z positive, so power
/// studies may opt into the right tail; two-sided is the default.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum Sidedness {
    #[default]
    TwoSided,
    RightTail,
}

impl Sidedness {
    pub fn p_value(self, z: f64) -> f64 {
        match self {
            Sidedness::TwoSided => statkit::two_sided_p(z),
            Sidedness::RightTail => statkit::right_tail_p(z),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TestMethod {
    Standard,
    Reprompting,
}

impl std::fmt::Display for TestMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestMethod::Standard => write!(f, "standard"),
            TestMethod::Reprompting => write!(f, "reprompting"),
        }
    }
}

/// Per-test diagnostics carried alongside the decision values.
#[derive(Clone, Debug, Default)]
pub struct TestDiagnostics {
    pub c: Option<usize>,
    pub t_prime: Option<usize>,
    pub per_segment_s: Vec<Option<f64>>,
}

/// Outcome of one spoofing-discovery test.
#[derive(Clone, Debug)]
pub struct TestReport {
    pub method: TestMethod,
    /// Fisher-transformed rank correlation (post-transform).
    pub s: f64,
    pub z: f64,
    pub p_value: f64,
    pub n_kept: usize,
    pub sidedness: Sidedness,
    pub diagnostics: TestDiagnostics,
}

impl TestReport {
    /// CSV header matching [`TestReport::csv_row`].
    pub fn csv_header() -> &'static str {
        "method,scheme,h,t,n_kept,s,z,p,seed,spoofer"
    }

    pub fn csv_row(&self, scheme: &str, h: usize, t: usize, seed: u64, spoofer: &str) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.6},{:.6e},{},{}",
            self.method, scheme, h, t, self.n_kept, self.s, self.z, self.p_value, seed, spoofer
        )
    }
}

/// Standardize S by the rank-adjusted null deviation sqrt(1.06 / (n - 3)).
pub fn standard_z(s: f64, n_kept: usize) -> f64 {
    s / (1.06 / (n_kept as f64 - 3.0)).sqrt()
}

/// Difference-of-statistics z for the Reprompting method, with the same
/// per-segment variance substitution applied to both sides.
pub fn reprompt_z(s_received: f64, n_received: usize, s_regen: f64, n_regen: usize) -> f64 {
    let v = |n: usize| 1.06 / (n as f64 - 3.0);
    (s_received - s_regen) / (v(n_received) + v(n_regen)).sqrt()
}

/// The Standard method: z-test of S under cross-independence. The caller is
/// responsible for using it only where cross-independence holds (unigram
/// score with large h).
pub fn standard_test(
    trace: &WatermarkTrace,
    score: &ScoreSeq,
    sidedness: Sidedness,
) -> Result<TestReport> {
    let s = statistic_s(trace, score)?;
    let n_kept = trace.n_kept();
    let z = standard_z(s, n_kept);
    Ok(TestReport {
        method: TestMethod::Standard,
        s,
        z,
        p_value: sidedness.p_value(z),
        n_kept,
        sidedness,
        diagnostics: TestDiagnostics::default(),
    })
}

/// Concatenate per-text traces and scores in order. Dedup stays per-text:
/// no window is suppressed across text boundaries.
pub fn concatenate(pairs: &[(WatermarkTrace, ScoreSeq)]) -> Result<(WatermarkTrace, ScoreSeq)> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let scheme = pairs[0].0.scheme;
    let mut x = Vec::new();
    let mut keep = Vec::new();
    let mut y = Vec::new();
    for (trace, score) in pairs {
        if trace.scheme != scheme {
            return Err(Error::MixedSchemes(scheme, trace.scheme));
        }
        if trace.len() != score.y.len() {
            return Err(Error::LengthMismatch(trace.len(), score.y.len()));
        }
        x.extend_from_slice(&trace.x);
        keep.extend_from_slice(&trace.keep);
        y.extend_from_slice(&score.y);
    }
    Ok((WatermarkTrace { x, keep, scheme }, ScoreSeq { y }))
}

/// The Reprompting method over one or more segments.
///
/// Each original segment's first `c` tokens served as the regeneration
/// prompt; its suffix and the regenerated continuation are traced and scored
/// as standalone texts, concatenated groupwise, and the two S values are
/// differenced so the unknown common offset cancels.
pub fn reprompt_test<T, S>(
    originals: &[TokenSeq],
    regenerated: &[TokenSeq],
    c: usize,
    trace_fn: T,
    score_fn: S,
    sidedness: Sidedness,
) -> Result<TestReport>
where
    T: Fn(&[TokenId]) -> Result<WatermarkTrace>,
    S: Fn(&[TokenId]) -> Result<ScoreSeq>,
{
    if originals.is_empty() {
        return Err(Error::EmptyInput);
    }
    if originals.len() != regenerated.len() {
        return Err(Error::LengthMismatch(originals.len(), regenerated.len()));
    }
    let mut received = Vec::with_capacity(originals.len());
    let mut regen = Vec::with_capacity(regenerated.len());
    let mut per_segment_s = Vec::with_capacity(originals.len());
    for (i, (orig, re)) in originals.iter().zip(regenerated).enumerate() {
        if orig.len() <= c {
            return Err(Error::SegmentTooShort {
                index: i,
                len: orig.len(),
                c,
            });
        }
        let suffix = &orig[c..];
        let pair_a = (trace_fn(suffix)?, score_fn(suffix)?);
        let pair_b = (trace_fn(re)?, score_fn(re)?);
        per_segment_s.push(statistic_s(&pair_a.0, &pair_a.1).ok());
        received.push(pair_a);
        regen.push(pair_b);
    }
    let (trace_a, score_a) = concatenate(&received)?;
    let (trace_b, score_b) = concatenate(&regen)?;
    let s_a = statistic_s(&trace_a, &score_a)?;
    let s_b = statistic_s(&trace_b, &score_b)?;
    let (n_a, n_b) = (trace_a.n_kept(), trace_b.n_kept());
    let z = reprompt_z(s_a, n_a, s_b, n_b);
    Ok(TestReport {
        method: TestMethod::Reprompting,
        s: s_a,
        z,
        p_value: sidedness.p_value(z),
        n_kept: n_a,
        sidedness,
        diagnostics: TestDiagnostics {
            c: Some(c),
            t_prime: Some(regenerated.iter().map(|r| r.len()).sum()),
            per_segment_s,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{SplitMix64, WatermarkKey};
    use crate::watermark::{color_trace, RedGreenParams, SchemeTag};
    use approx::assert_abs_diff_eq;

    fn seqs(docs: &[&[u32]]) -> Vec<TokenSeq> {
        docs.iter()
            .map(|d| TokenSeq::from_ids(d.iter().copied()))
            .collect()
    }

    fn plain_trace(x: &[f64], skip: usize) -> WatermarkTrace {
        let keep: Vec<bool> = (0..x.len()).map(|t| t >= skip).collect();
        WatermarkTrace {
            x: x.to_vec(),
            keep,
            scheme: SchemeTag::RedGreen,
        }
    }

    #[test]
    fn unordered_grams_canonicalize() {
        let docs = seqs(&[&[0, 1], &[1, 0]]);
        let table =
            build_frequency_table(&docs, 4, FrequencyKind::UnorderedNgram { h: 1 }).unwrap();
        assert_eq!(table.n_keys(), 1);
        assert_eq!(table.gram_count(&[TokenId(0), TokenId(1)]).unwrap(), 2);
        assert_eq!(table.gram_count(&[TokenId(1), TokenId(0)]).unwrap(), 2);
    }

    #[test]
    fn unigram_frequencies_normalize() {
        let docs = seqs(&[&[0, 0, 1]]);
        let table = build_frequency_table(&docs, 4, FrequencyKind::Unigram).unwrap();
        assert_abs_diff_eq!(table.unigram_freq(TokenId(0)), 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(table.unigram_freq(TokenId(1)), 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(table.unigram_freq(TokenId(2)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            build_frequency_table(&[], 4, FrequencyKind::Unigram),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn ngram_score_matches_naive_scan() {
        let mut gen = SplitMix64::new(40);
        for _ in 0..50 {
            let h = 1 + gen.next_below(3) as usize;
            let docs: Vec<TokenSeq> = (0..3)
                .map(|_| {
                    TokenSeq::from_ids((0..30).map(|_| gen.next_below(6) as u32))
                })
                .collect();
            let text: Vec<TokenId> =
                (0..5 + h).map(|_| TokenId(gen.next_below(6) as u32)).collect();
            let table =
                build_frequency_table(&docs, 8, FrequencyKind::UnorderedNgram { h }).unwrap();
            let y = ngram_score(&table, &text, h).unwrap().y;
            // naive scan oracle: count windows that are permutations
            for t in h..text.len() {
                let mut probe: Vec<TokenId> = text[t - h..=t].to_vec();
                probe.sort_unstable();
                let mut count = 0u64;
                for d in &docs {
                    for w in d.windows(h + 1) {
                        let mut w: Vec<TokenId> = w.to_vec();
                        w.sort_unstable();
                        if w == probe {
                            count += 1;
                        }
                    }
                }
                assert_eq!(y[t], count as f64, "t = {t}, h = {h}");
            }
        }
    }

    #[test]
    fn absent_gram_scores_zero() {
        let docs = seqs(&[&[0, 1, 2]]);
        let table =
            build_frequency_table(&docs, 8, FrequencyKind::UnorderedNgram { h: 1 }).unwrap();
        let text = [TokenId(5), TokenId(6)];
        let y = ngram_score(&table, &text, 1).unwrap().y;
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn ngram_score_rejects_mismatched_h() {
        let docs = seqs(&[&[0, 1, 2]]);
        let table =
            build_frequency_table(&docs, 8, FrequencyKind::UnorderedNgram { h: 1 }).unwrap();
        assert!(ngram_score(&table, &[TokenId(0); 5], 2).is_err());
    }

    #[test]
    fn unigram_score_uses_far_edge_of_window() {
        let docs = seqs(&[&[0, 0, 1]]);
        let table = build_frequency_table(&docs, 4, FrequencyKind::Unigram).unwrap();
        let text = [TokenId(0), TokenId(1), TokenId(3)];
        let y1 = unigram_score(&table, &text, 1).unwrap().y;
        assert_abs_diff_eq!(y1[1], 2.0 / 3.0, epsilon = 1e-12); // f(w_0)
        assert_abs_diff_eq!(y1[2], 1.0 / 3.0, epsilon = 1e-12); // f(w_1)
        let y2 = unigram_score(&table, &text, 2).unwrap().y;
        assert_abs_diff_eq!(y2[2], 2.0 / 3.0, epsilon = 1e-12); // f(w_0)
        // unseen token scores zero
        let y = unigram_score(&table, &[TokenId(3), TokenId(0)], 1).unwrap().y;
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn perfect_monotone_saturates_statistic() {
        let x: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| 2.0 * v + 1.0).collect();
        let trace = plain_trace(&x, 0);
        let s = statistic_s(&trace, &ScoreSeq { y }).unwrap();
        assert_abs_diff_eq!(s, (1.0f64 - 1e-10).atanh(), epsilon = 1e-9);
    }

    #[test]
    fn independent_inputs_give_small_statistic() {
        let mut gen = SplitMix64::new(60);
        let n = 10_000;
        let x: Vec<f64> = (0..n).map(|_| (gen.next_below(2)) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| crate::core::unit_open(gen.next_u64())).collect();
        let s = statistic_s(&plain_trace(&x, 0), &ScoreSeq { y }).unwrap();
        assert!(s.abs() < 0.05, "S = {s}");
    }

    #[test]
    fn frozen_rank_correlation_vector() {
        // x = [1,0,1,0], y = [4,1,3,2]; expected values computed by the
        // naive rank oracle below and frozen.
        let x = [1.0, 0.0, 1.0, 0.0];
        let y = [4.0, 1.0, 3.0, 2.0];
        let naive_rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|&a| {
                    let smaller = v.iter().filter(|&&b| b < a).count() as f64;
                    let equal = v.iter().filter(|&&b| b == a).count() as f64;
                    smaller + (equal + 1.0) / 2.0
                })
                .collect()
        };
        let oracle_rho = crate::statkit::pearson(&naive_rank(&x), &naive_rank(&y)).unwrap();
        let rho = crate::statkit::spearman_rho(&x, &y).unwrap();
        assert_abs_diff_eq!(rho, oracle_rho, epsilon = 1e-12);
        assert_abs_diff_eq!(rho, 0.8944271909999159, epsilon = 1e-12);
        assert_abs_diff_eq!(oracle_rho.atanh(), 1.4436354751788103, epsilon = 1e-10);
    }

    #[test]
    fn too_few_kept_and_degenerate_errors() {
        let x = [1.0, 0.0, 1.0, 0.0];
        let y = [4.0, 1.0, 3.0, 2.0];
        assert!(matches!(
            statistic_s(&plain_trace(&x, 0), &ScoreSeq { y: y.to_vec() }),
            Err(Error::TooFewKept { .. })
        ));
        let ones = vec![1.0; 40];
        let ys: Vec<f64> = (0..40).map(|i| i as f64).collect();
        assert!(matches!(
            statistic_s(&plain_trace(&ones, 0), &ScoreSeq { y: ys.clone() }),
            Err(Error::ConstantColors)
        ));
        let xs: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        assert!(matches!(
            statistic_s(&plain_trace(&xs, 0), &ScoreSeq { y: vec![2.0; 40] }),
            Err(Error::ConstantScores)
        ));
    }

    #[test]
    fn standard_test_arithmetic() {
        assert_abs_diff_eq!(standard_z(0.1, 109), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            Sidedness::TwoSided.p_value(1.0),
            0.3173,
            epsilon = 5e-4
        );
        // zero correlation by tie symmetry: x = [1,0,1,0], y = [1,2,2,1]
        let x: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = (0..40).map(|i| [1.0, 2.0, 2.0, 1.0][i % 4]).collect();
        let rep = standard_test(&plain_trace(&x, 0), &ScoreSeq { y }, Sidedness::TwoSided).unwrap();
        assert_abs_diff_eq!(rep.z, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.p_value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn reprompt_arithmetic() {
        assert_abs_diff_eq!(reprompt_z(0.2, 215, 0.0, 215), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            Sidedness::TwoSided.p_value(2.0),
            0.0455,
            epsilon = 5e-4
        );
    }

    #[test]
    fn monotone_transforms_leave_s_unchanged() {
        let mut gen = SplitMix64::new(61);
        let n = 200;
        let x: Vec<f64> = (0..n).map(|_| gen.next_below(2) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| gen.next_below(50) as f64).collect();
        let trace = plain_trace(&x, 0);
        let base = statistic_s(&trace, &ScoreSeq { y: y.clone() }).unwrap();
        let transforms: [&dyn Fn(f64) -> f64; 3] =
            [&|v| (1.0 + v).ln(), &|v| 3.0 * v + 7.0, &|v| v * v * v];
        for g in transforms {
            let gy: Vec<f64> = y.iter().map(|&v| g(v)).collect();
            let s = statistic_s(&trace, &ScoreSeq { y: gy }).unwrap();
            assert_eq!(s, base, "ranks are invariant, so S must match exactly");
        }
    }

    #[test]
    fn statistic_is_symmetric() {
        let mut gen = SplitMix64::new(62);
        let n = 150;
        let x: Vec<f64> = (0..n).map(|_| gen.next_below(3) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| crate::core::unit_open(gen.next_u64())).collect();
        let a = statistic_s(&plain_trace(&x, 0), &ScoreSeq { y: y.clone() }).unwrap();
        let b = statistic_s(&plain_trace(&y, 0), &ScoreSeq { y: x }).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }

    #[test]
    fn concatenate_identity_and_totals() {
        let x = [0.0, 1.0, 0.0, 1.0, 1.0];
        let t1 = plain_trace(&x, 1);
        let s1 = ScoreSeq { y: vec![1.0, 2.0, 3.0, 4.0, 5.0] };
        let (ct, cs) = concatenate(&[(t1.clone(), s1.clone())]).unwrap();
        assert_eq!(ct.x, t1.x);
        assert_eq!(cs.y, s1.y);
        let (ct, _) = concatenate(&[(t1.clone(), s1.clone()), (t1.clone(), s1.clone())]).unwrap();
        assert_eq!(ct.n_kept(), 2 * t1.n_kept());
    }

    #[test]
    fn concatenate_rejects_mixed_schemes() {
        let t1 = plain_trace(&[0.0, 1.0], 0);
        let mut t2 = t1.clone();
        t2.scheme = SchemeTag::Aar;
        let s = ScoreSeq { y: vec![1.0, 2.0] };
        assert!(matches!(
            concatenate(&[(t1, s.clone()), (t2, s)]),
            Err(Error::MixedSchemes(_, _))
        ));
    }

    #[test]
    fn reprompt_identical_sides_give_zero() {
        // Regenerated text equal to the received suffix: S values match and
        // z collapses to zero.
        let params = RedGreenParams::new(1, 0.25, 2.0, WatermarkKey(77), 64);
        let mut gen = SplitMix64::new(63);
        let original = TokenSeq::from_ids((0..120).map(|_| gen.next_below(64) as u32));
        let suffix = original.suffix(25);
        let ref_doc: Vec<u32> = (0..200).map(|_| gen.next_below(64) as u32).collect();
        let docs = seqs(&[&ref_doc]);
        let table =
            build_frequency_table(&docs, 64, FrequencyKind::UnorderedNgram { h: 1 }).unwrap();
        let rep = reprompt_test(
            &[original],
            &[suffix],
            25,
            |t| color_trace(&params, t),
            |t| ngram_score(&table, t, 1),
            Sidedness::TwoSided,
        )
        .unwrap();
        assert_abs_diff_eq!(rep.z, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(rep.p_value, 1.0, epsilon = 1e-12);
        assert_eq!(rep.diagnostics.c, Some(25));
    }

    #[test]
    fn reprompt_rejects_short_segments() {
        let params = RedGreenParams::new(1, 0.25, 2.0, WatermarkKey(77), 64);
        let short = TokenSeq::from_ids(0..10u32);
        let err = reprompt_test(
            std::slice::from_ref(&short),
            std::slice::from_ref(&short),
            25,
            |t| color_trace(&params, t),
            |_| Ok(ScoreSeq { y: vec![] }),
            Sidedness::TwoSided,
        )
        .unwrap_err();
        assert!(matches!(err, Error::SegmentTooShort { .. }));
    }

    #[test]
    fn csv_row_shape() {
        let rep = TestReport {
            method: TestMethod::Standard,
            s: 0.1,
            z: 1.0,
            p_value: 0.3173,
            n_kept: 109,
            sidedness: Sidedness::TwoSided,
            diagnostics: TestDiagnostics::default(),
        };
        let row = rep.csv_row("redgreen", 2, 500, 42, "stealing");
        assert_eq!(row.split(',').count(), TestReport::csv_header().split(',').count());
        assert!(row.starts_with("standard,redgreen,2,500,109,"));
    }
}
