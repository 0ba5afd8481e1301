//! AAR and KTH watermark instantiations.
//!
//! Both schemes emit real-valued per-position traces with the shared
//! convention that larger x means stronger watermark evidence: AAR evidence
//! is `-log(1 - r)`, KTH evidence `-log(1 - xi)`, and both are Exp(1) on
//! unwatermarked text, so the spoofing-discovery tests consume them
//! unchanged.

use crate::core::{
    context_digest_chain, element_uniform, prf_hash, RngStream, TokenId, TokenSeq, WatermarkKey,
};
use crate::error::{Error, Result};
use crate::lm::{softmax, MarkovLM};
use crate::watermark::{keep_mask, DedupMode, SchemeTag, WatermarkTrace};

/// AAR watermark configuration: h context tokens are hashed with the private
/// key into a per-token uniform score vector.
#[derive(Clone, Copy, Debug)]
pub struct AarParams {
    pub h: usize,
    pub key: WatermarkKey,
    pub vocab_size: usize,
}

impl AarParams {
    pub fn new(h: usize, key: WatermarkKey, vocab_size: usize) -> Self {
        Self { h, key, vocab_size }
    }

    fn check_context(&self, context: &[TokenId]) -> Result<()> {
        if context.len() != self.h {
            return Err(Error::ContextLength {
                expected: self.h,
                got: context.len(),
            });
        }
        Ok(())
    }

    // Order-sensitive digest: distinct contexts must yield distinct score
    // vectors, unlike the sum digest the Red-Green variants share.
    fn seed(&self, context: &[TokenId]) -> u64 {
        prf_hash(self.key, context_digest_chain(context))
    }
}

/// Uniform score of one token after this context.
pub fn aar_r_entry(params: &AarParams, context: &[TokenId], token: TokenId) -> Result<f64> {
    params.check_context(context)?;
    Ok(element_uniform(params.seed(context), token.0 as u64))
}

/// The full score vector in (0,1)^|vocab|, deterministic in (key, context).
pub fn aar_r_vector(params: &AarParams, context: &[TokenId]) -> Result<Vec<f64>> {
    params.check_context(context)?;
    let seed = params.seed(context);
    Ok((0..params.vocab_size)
        .map(|i| element_uniform(seed, i as u64))
        .collect())
}

/// The token maximizing `r_i^(1/p_i)` for this context and model
/// distribution; equivalently argmax of `ln(r_i) / p_i`.
pub fn aar_select(params: &AarParams, context: &[TokenId], probs: &[f64]) -> Result<TokenId> {
    params.check_context(context)?;
    let seed = params.seed(context);
    let mut best = f64::NEG_INFINITY;
    let mut best_token = TokenId(0);
    for (i, &p) in probs.iter().enumerate().take(params.vocab_size) {
        let score = element_uniform(seed, i as u64).ln() / p.max(1e-300);
        if score > best {
            best = score;
            best_token = TokenId(i as u32);
        }
    }
    Ok(best_token)
}

/// Deterministic AAR generation: every step picks argmax `r_i^(1/p_i)`.
pub fn aar_generate(
    lm: &MarkovLM,
    params: &AarParams,
    prompt: &[TokenId],
    length: usize,
) -> Result<TokenSeq> {
    if prompt.len() < params.h {
        return Err(Error::ContextLength {
            expected: params.h,
            got: prompt.len(),
        });
    }
    let mut history: Vec<TokenId> = prompt.to_vec();
    let mut out = TokenSeq::new();
    for _ in 0..length {
        let probs = softmax(&lm.logits(&history));
        let ctx = &history[history.len() - params.h..];
        let token = aar_select(params, ctx, &probs)?;
        history.push(token);
        out.push(token);
    }
    Ok(out)
}

/// Per-position AAR evidence with the same h-gram context dedup mask as
/// Red-Green. Evidence is `-log(1 - r_{w_t})`: generation maximizes the
/// selected token's score r, so watermarked positions carry large values
/// while unwatermarked ones are Exp(1).
pub fn aar_trace(params: &AarParams, text: &[TokenId]) -> Result<WatermarkTrace> {
    if text.len() <= params.h {
        return Err(Error::TextTooShort {
            min: params.h,
            got: text.len(),
        });
    }
    let keep = keep_mask(text, params.h, DedupMode::Context, params.vocab_size)?;
    let mut x = vec![0.0; text.len()];
    for t in params.h..text.len() {
        let ctx = &text[t - params.h..t];
        let r = element_uniform(params.seed(ctx), text[t].0 as u64);
        x[t] = -(1.0 - r).ln();
    }
    Ok(WatermarkTrace {
        x,
        keep,
        scheme: SchemeTag::Aar,
    })
}

/// How KTH detection aligns a text against the key sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KthAlignment {
    /// Exhaustive search over the allowed cyclic shifts.
    ShiftOnly,
    /// Edit-distance alignment; `edit_penalty` is charged per inserted or
    /// deleted position (1.0 matches the expected null evidence).
    Levenshtein { edit_penalty: f64 },
}

/// KTH watermark configuration. The scheme has no watermark context, so
/// `pseudo_h` sets the context length used for score alignment and dedup.
#[derive(Clone, Copy, Debug)]
pub struct KthParams {
    pub n_key: usize,
    /// Number of allowed shifts; generation draws one uniformly per query.
    pub s: usize,
    pub key: WatermarkKey,
    pub alignment: KthAlignment,
    pub pseudo_h: usize,
    pub vocab_size: usize,
}

impl KthParams {
    pub fn new(n_key: usize, s: usize, key: WatermarkKey, vocab_size: usize) -> Self {
        Self {
            n_key,
            s,
            key,
            alignment: KthAlignment::ShiftOnly,
            pseudo_h: 5,
            vocab_size,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_key == 0 || self.s == 0 || self.s > self.n_key {
            return Err(Error::InvalidParam(
                "need 1 <= allowed shifts <= key length".into(),
            ));
        }
        Ok(())
    }

    /// Key row value `xi^row[token]`.
    pub fn key_entry(&self, row: usize, token: TokenId) -> f64 {
        element_uniform(prf_hash(self.key, row as u64), token.0 as u64)
    }
}

/// KTH generation: per query one shift is drawn among the allowed set, then
/// step j deterministically picks argmax `xi^((j+shift) mod n_key)^(1/p)`.
pub fn kth_generate(
    lm: &MarkovLM,
    params: &KthParams,
    prompt: &[TokenId],
    length: usize,
    rng: &mut RngStream,
) -> Result<TokenSeq> {
    kth_generate_with_shift(lm, params, prompt, length, rng).map(|(text, _)| text)
}

/// Same as [`kth_generate`], also reporting the drawn shift.
pub fn kth_generate_with_shift(
    lm: &MarkovLM,
    params: &KthParams,
    prompt: &[TokenId],
    length: usize,
    rng: &mut RngStream,
) -> Result<(TokenSeq, usize)> {
    params.validate()?;
    let shift = rng.next_below(params.s as u64) as usize;
    let mut history: Vec<TokenId> = prompt.to_vec();
    let mut out = TokenSeq::new();
    for j in 0..length {
        let probs = softmax(&lm.logits(&history));
        let row = (j + shift) % params.n_key;
        let row_seed = prf_hash(params.key, row as u64);
        let mut best = f64::NEG_INFINITY;
        let mut best_token = TokenId(0);
        for (i, &p) in probs.iter().enumerate().take(params.vocab_size) {
            let score = element_uniform(row_seed, i as u64).ln() / p.max(1e-300);
            if score > best {
                best = score;
                best_token = TokenId(i as u32);
            }
        }
        history.push(best_token);
        out.push(best_token);
    }
    Ok((out, shift))
}

/// Total evidence `sum_t -log(1 - xi^((t+shift) mod n_key)[w_t])` of one
/// shift hypothesis.
fn shift_evidence(params: &KthParams, text: &[TokenId], shift: usize) -> f64 {
    let mut total = 0.0;
    for (t, &w) in text.iter().enumerate() {
        let xi = params.key_entry((t + shift) % params.n_key, w);
        total += -(1.0 - xi).ln();
    }
    total
}

/// Per-position KTH evidence under the best alignment in the allowed shift
/// set, plus the recovered shift.
pub fn kth_trace_with_shift(params: &KthParams, text: &[TokenId]) -> Result<(WatermarkTrace, usize)> {
    params.validate()?;
    if text.is_empty() {
        return Err(Error::EmptyInput);
    }
    let keep_base = if text.len() > params.pseudo_h {
        keep_mask(text, params.pseudo_h, DedupMode::Context, params.vocab_size)?
    } else {
        vec![false; text.len()]
    };
    match params.alignment {
        KthAlignment::ShiftOnly => {
            let best_shift = (0..params.s)
                .max_by(|&a, &b| {
                    shift_evidence(params, text, a)
                        .partial_cmp(&shift_evidence(params, text, b))
                        .expect("finite evidence")
                })
                .expect("at least one shift");
            let x: Vec<f64> = text
                .iter()
                .enumerate()
                .map(|(t, &w)| {
                    let xi = params.key_entry((t + best_shift) % params.n_key, w);
                    -(1.0 - xi).ln()
                })
                .collect();
            Ok((
                WatermarkTrace {
                    x,
                    keep: keep_base,
                    scheme: SchemeTag::Kth,
                },
                best_shift,
            ))
        }
        KthAlignment::Levenshtein { edit_penalty } => {
            let mut best: Option<(f64, Vec<Option<f64>>, usize)> = None;
            for shift in 0..params.s {
                let (score, matched) = align_levenshtein(params, text, shift, edit_penalty);
                if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                    best = Some((score, matched, shift));
                }
            }
            let (_, matched, shift) = best.expect("at least one shift");
            let mut keep = keep_base;
            let mut x = vec![0.0; text.len()];
            for (t, m) in matched.iter().enumerate() {
                match m {
                    Some(v) => x[t] = *v,
                    None => keep[t] = false,
                }
            }
            Ok((
                WatermarkTrace {
                    x,
                    keep,
                    scheme: SchemeTag::Kth,
                },
                shift,
            ))
        }
    }
}

/// Per-position KTH evidence under the best allowed alignment.
pub fn kth_trace(params: &KthParams, text: &[TokenId]) -> Result<WatermarkTrace> {
    kth_trace_with_shift(params, text).map(|(trace, _)| trace)
}

/// Align text positions to key rows `shift..` allowing insertions and
/// deletions. Maximizes total matched evidence minus `pen` per edit; returns
/// the score and per-position matched evidence (None = unmatched).
fn align_levenshtein(
    params: &KthParams,
    text: &[TokenId],
    shift: usize,
    pen: f64,
) -> (f64, Vec<Option<f64>>) {
    let t_len = text.len();
    let k_len = text.len(); // align against an equal-length key window
    let width = k_len + 1;
    let mut dp = vec![f64::NEG_INFINITY; (t_len + 1) * width];
    let at = |i: usize, j: usize| i * width + j;
    for j in 0..=k_len {
        dp[at(0, j)] = -(j as f64) * pen;
    }
    for i in 1..=t_len {
        dp[at(i, 0)] = -(i as f64) * pen;
    }
    let evidence = |i: usize, j: usize| {
        let xi = params.key_entry((j + shift) % params.n_key, text[i]);
        -(1.0 - xi).ln()
    };
    for i in 1..=t_len {
        for j in 1..=k_len {
            let m = dp[at(i - 1, j - 1)] + evidence(i - 1, j - 1);
            let del = dp[at(i - 1, j)] - pen;
            let ins = dp[at(i, j - 1)] - pen;
            dp[at(i, j)] = m.max(del).max(ins);
        }
    }
    // traceback
    let mut matched = vec![None; t_len];
    let (mut i, mut j) = (t_len, k_len);
    while i > 0 && j > 0 {
        let here = dp[at(i, j)];
        let m = dp[at(i - 1, j - 1)] + evidence(i - 1, j - 1);
        if (here - m).abs() < 1e-12 {
            matched[i - 1] = Some(evidence(i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if (here - (dp[at(i - 1, j)] - pen)).abs() < 1e-12 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    (dp[at(t_len, k_len)], matched)
}

/// Standardized mean of kept evidence against the Exp(1) null; the detector
/// analog used to filter AAR/KTH texts before power experiments.
pub fn exp_trace_z(trace: &WatermarkTrace) -> Result<f64> {
    let kept = trace.kept_values();
    if kept.is_empty() {
        return Err(Error::ZeroKeptPositions);
    }
    let n = kept.len() as f64;
    Ok((kept.iter().sum::<f64>() - n) / n.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::SplitMix64;
    use crate::lm::{synthetic_corpus, train_markov, MarkovLM, SyntheticSpec};
    use crate::statkit::{ks_test, ks_test_exp1};

    fn aar(h: usize, vocab: usize) -> AarParams {
        AarParams::new(h, WatermarkKey(0xAA12_34EE), vocab)
    }

    #[test]
    fn r_vector_is_deterministic_and_open() {
        let p = aar(2, 64);
        let ctx = [TokenId(3), TokenId(8)];
        let a = aar_r_vector(&p, &ctx).unwrap();
        let b = aar_r_vector(&p, &ctx).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert!(a.iter().all(|&r| r > 0.0 && r < 1.0));
    }

    #[test]
    fn r_entry_is_marginally_uniform() {
        let p = aar(2, 64);
        let mut gen = SplitMix64::new(12);
        let mut samples = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let ctx = [
                TokenId(gen.next_below(64) as u32),
                TokenId(gen.next_below(64) as u32),
            ];
            samples.push(aar_r_entry(&p, &ctx, TokenId(0)).unwrap());
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        samples.dedup();
        // near-duplicate contexts collapse via the sum digest; dedup first
        let gof = ks_test(&samples, |x| x.clamp(0.0, 1.0), "ks-uniform").unwrap();
        assert!(gof.p_value >= 0.01, "KS p = {}", gof.p_value);
    }

    #[test]
    fn distinct_contexts_give_distinct_vectors() {
        let p = aar(2, 32);
        let mut seen = std::collections::HashSet::new();
        for a in 0..32u32 {
            for b in 0..32u32 {
                let r = aar_r_vector(&p, &[TokenId(a), TokenId(b)]).unwrap();
                let fingerprint = (r[0] * 1e15) as u64 ^ (r[1] * 1e15) as u64;
                assert!(seen.insert(fingerprint), "collision at ({a}, {b})");
            }
        }
    }

    #[test]
    fn one_hot_distribution_forces_token() {
        let p = aar(1, 16);
        let mut probs = vec![1e-12; 16];
        probs[11] = 1.0;
        for v in 0..16u32 {
            assert_eq!(aar_select(&p, &[TokenId(v)], &probs).unwrap(), TokenId(11));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let corpus = synthetic_corpus(&SyntheticSpec {
            vocab_size: 32,
            n_docs: 40,
            doc_len: 100,
            ..SyntheticSpec::default()
        });
        let lm = train_markov(&corpus, 2, 0.1).unwrap();
        let p = aar(2, 32);
        let prompt = [TokenId(1), TokenId(2)];
        let a = aar_generate(&lm, &p, &prompt, 200).unwrap();
        let b = aar_generate(&lm, &p, &prompt, 200).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn selection_matches_gumbel_max_oracle() {
        // argmax r^(1/p) == argmax (log p - log(-log r))
        let p = aar(1, 16);
        let mut gen = SplitMix64::new(5);
        for case in 0..500 {
            let ctx = [TokenId(case % 16)];
            let raw: Vec<f64> = (0..16)
                .map(|_| crate::core::unit_open(gen.next_u64()) + 1e-3)
                .collect();
            let z: f64 = raw.iter().sum();
            let probs: Vec<f64> = raw.iter().map(|w| w / z).collect();
            let selected = aar_select(&p, &ctx, &probs).unwrap();
            let r = aar_r_vector(&p, &ctx).unwrap();
            let oracle = (0..16)
                .max_by(|&a, &b| {
                    let ga = probs[a].ln() - (-r[a].ln()).ln();
                    let gb = probs[b].ln() - (-r[b].ln()).ln();
                    ga.partial_cmp(&gb).unwrap()
                })
                .unwrap();
            assert_eq!(selected.index(), oracle);
        }
    }

    #[test]
    fn selection_is_distribution_faithful_across_contexts() {
        // Across distinct contexts the r draws are independent, so the
        // deterministic argmax samples the model distribution.
        let p = aar(5, 16);
        let mut gen = SplitMix64::new(44);
        let raw: Vec<f64> = (0..16)
            .map(|_| crate::core::unit_open(gen.next_u64()) + 0.05)
            .collect();
        let z: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|w| w / z).collect();
        let n = 100_000u32;
        let mut counts = [0u32; 16];
        for i in 0..n {
            let ctx: Vec<TokenId> = (0..5)
                .map(|d| TokenId((i >> (4 * d)) & 0xF))
                .collect();
            counts[aar_select(&p, &ctx, &probs).unwrap().index()] += 1;
        }
        let tv: f64 = (0..16)
            .map(|v| (counts[v] as f64 / n as f64 - probs[v]).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "total variation {tv}");
    }

    #[test]
    fn trace_evidence_is_positive_and_vanishes_with_r() {
        // -log(1 - r): zero evidence in the r -> 0 limit, unbounded as the
        // selected score approaches 1.
        assert_eq!(-(1.0f64 - 0.0).ln(), 0.0);
        assert!(-(1.0f64 - 0.999999).ln() > 10.0);
    }

    #[test]
    fn unwatermarked_trace_is_exp1() {
        let p = aar(2, 256);
        let mut xs = Vec::new();
        let mut rng = RngStream::new(8, 8);
        while xs.len() < 10_000 {
            let text: Vec<TokenId> = (0..300)
                .map(|_| TokenId(rng.next_below(256) as u32))
                .collect();
            let trace = aar_trace(&p, &text).unwrap();
            xs.extend(trace.kept_values());
        }
        let gof = ks_test_exp1(&xs).unwrap();
        assert!(gof.p_value >= 0.01, "KS p = {}", gof.p_value);
    }

    #[test]
    fn generated_trace_has_elevated_mean() {
        let lm = MarkovLM::uniform(64);
        let p = aar(2, 64);
        let mut total = 0.0;
        let mut n = 0usize;
        for i in 0..20u32 {
            let prompt = [TokenId(i % 64), TokenId((i * 7) % 64)];
            let text = aar_generate(&lm, &p, &prompt, 300).unwrap();
            let trace = aar_trace(&p, &text).unwrap();
            let kept = trace.kept_values();
            total += kept.iter().sum::<f64>();
            n += kept.len();
        }
        let mean = total / n as f64;
        assert!(mean > 1.0, "mean kept evidence {mean}");
    }

    fn kth(n_key: usize, s: usize, vocab: usize) -> KthParams {
        KthParams::new(n_key, s, WatermarkKey(0x5EC5_EC5E), vocab)
    }

    #[test]
    fn single_shift_generation_is_deterministic() {
        let lm = MarkovLM::uniform(32);
        let p = kth(64, 1, 32);
        let prompt = [TokenId(3)];
        let (a, sa) = kth_generate_with_shift(&lm, &p, &prompt, 100, &mut RngStream::new(1, 1))
            .unwrap();
        let (b, sb) = kth_generate_with_shift(&lm, &p, &prompt, 100, &mut RngStream::new(9, 9))
            .unwrap();
        assert_eq!(sa, 0);
        assert_eq!(sb, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn one_hot_distribution_forces_token_any_row() {
        let corpus = synthetic_corpus(&SyntheticSpec {
            vocab_size: 8,
            n_docs: 4,
            doc_len: 50,
            order: 1,
            max_branching: 1,
            zipf: 1.0,
            seed: 3,
        });
        let mut lm = train_markov(&corpus, 1, 1e-12).unwrap();
        lm.set_temperature(0.2);
        let p = kth(16, 16, 8);
        let prompt = [corpus.documents[0][0]];
        let forced = corpus.documents[0][1];
        let (text, _) =
            kth_generate_with_shift(&lm, &p, &prompt, 1, &mut RngStream::new(2, 2)).unwrap();
        assert_eq!(text[0], forced);
    }

    #[test]
    fn shifts_differ_across_queries() {
        let lm = MarkovLM::uniform(16);
        let p = kth(256, 256, 16);
        let mut differ = 0;
        for pair in 0..1000u64 {
            let (_, s1) =
                kth_generate_with_shift(&lm, &p, &[TokenId(0)], 1, &mut RngStream::new(50, 2 * pair))
                    .unwrap();
            let (_, s2) = kth_generate_with_shift(
                &lm,
                &p,
                &[TokenId(0)],
                1,
                &mut RngStream::new(50, 2 * pair + 1),
            )
            .unwrap();
            if s1 != s2 {
                differ += 1;
            }
        }
        assert!(differ >= 970, "only {differ}/1000 pairs differ");
    }

    #[test]
    fn unwatermarked_kth_trace_is_exp1_at_fixed_shift() {
        let p = kth(64, 1, 128);
        let mut xs = Vec::new();
        let mut rng = RngStream::new(13, 0);
        while xs.len() < 10_000 {
            let text: Vec<TokenId> = (0..200)
                .map(|_| TokenId(rng.next_below(128) as u32))
                .collect();
            let trace = kth_trace(&p, &text).unwrap();
            xs.extend(trace.kept_values());
        }
        let gof = ks_test_exp1(&xs).unwrap();
        assert!(gof.p_value >= 0.01, "KS p = {}", gof.p_value);
    }

    #[test]
    fn shift_recovery_on_watermarked_text() {
        let lm = MarkovLM::uniform(64);
        let p = kth(256, 256, 64);
        let mut hits = 0;
        for trial in 0..200u64 {
            let mut rng = RngStream::new(600, trial);
            let (text, true_shift) =
                kth_generate_with_shift(&lm, &p, &[TokenId(1)], 200, &mut rng).unwrap();
            let (_, recovered) = kth_trace_with_shift(&p, &text).unwrap();
            if recovered == true_shift {
                hits += 1;
            }
        }
        assert!(hits >= 190, "recovered {hits}/200");
    }

    #[test]
    fn shift_costs_rotate_with_the_text() {
        // With T = n_key and the full shift set, cyclically rotating the text
        // rotates the per-shift evidence, so the best total is unchanged.
        let p = kth(64, 64, 32);
        let mut gen = SplitMix64::new(7);
        let text: Vec<TokenId> = (0..64).map(|_| TokenId(gen.next_below(32) as u32)).collect();
        let best: f64 = (0..64)
            .map(|s| shift_evidence(&p, &text, s))
            .fold(f64::NEG_INFINITY, f64::max);
        for r in [1usize, 9, 33] {
            let rotated: Vec<TokenId> = (0..64).map(|t| text[(t + r) % 64]).collect();
            let best_rot: f64 = (0..64)
                .map(|s| shift_evidence(&p, &rotated, s))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((best - best_rot).abs() < 1e-9, "{best} vs {best_rot}");
        }
    }

    #[test]
    fn levenshtein_matches_shift_only_on_clean_text() {
        let lm = MarkovLM::uniform(32);
        let mut p = kth(64, 4, 32);
        let (text, _) =
            kth_generate_with_shift(&lm, &p, &[TokenId(0)], 60, &mut RngStream::new(21, 0))
                .unwrap();
        let (shift_trace, s0) = kth_trace_with_shift(&p, &text).unwrap();
        p.alignment = KthAlignment::Levenshtein { edit_penalty: 1.0 };
        let (lev_trace, s1) = kth_trace_with_shift(&p, &text).unwrap();
        assert_eq!(s0, s1);
        // clean text aligns on the diagonal, so matched evidence agrees
        let same = shift_trace
            .x
            .iter()
            .zip(&lev_trace.x)
            .filter(|(a, b)| (**a - **b).abs() < 1e-12)
            .count();
        assert!(same >= text.len() - 2, "{same}/{}", text.len());
    }

    #[test]
    fn levenshtein_survives_an_insertion() {
        let lm = MarkovLM::uniform(32);
        let mut p = kth(64, 1, 32);
        let (text, _) =
            kth_generate_with_shift(&lm, &p, &[TokenId(0)], 60, &mut RngStream::new(22, 0))
                .unwrap();
        let mut edited: Vec<TokenId> = text.to_vec();
        edited.insert(30, TokenId(5));
        p.alignment = KthAlignment::Levenshtein { edit_penalty: 1.0 };
        let (trace, _) = kth_trace_with_shift(&p, &edited).unwrap();
        let kept = trace.kept_values();
        let mean = kept.iter().sum::<f64>() / kept.len() as f64;
        assert!(mean > 2.0, "mean matched evidence {mean}");
    }

    #[test]
    fn exp_trace_z_standardizes() {
        let trace = WatermarkTrace {
            x: vec![2.0; 100],
            keep: vec![true; 100],
            scheme: SchemeTag::Kth,
        };
        let z = exp_trace_z(&trace).unwrap();
        assert!((z - 10.0).abs() < 1e-12);
    }
}
