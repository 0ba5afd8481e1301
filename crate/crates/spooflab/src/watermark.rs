//! Red-Green watermarking: keyed vocabulary partitions, logit biasing at
//! generation time, per-position color traces with repeated-context dedup,
//! and the detector Z-score.

use std::collections::{HashMap, HashSet};

use crate::core::{
    pack_tokens, prf_hash, token_bits, RngStream, SplitMix64, TokenId, TokenSeq, WatermarkKey,
};
use crate::error::{Error, Result};
use crate::lm::{pooled_sample, MarkovLM, NextDist, SampleScratch};

/// Context hashing variant. SumHash digests the h preceding tokens; SelfHash
/// digests the trailing h-1 tokens together with the candidate token itself.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HashVariant {
    SumHash,
    SelfHash,
}

/// Which scheme produced a trace.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SchemeTag {
    RedGreen,
    Aar,
    Kth,
}

/// Key for the repeated-window dedup mask: the h-token context (default) or
/// the full (h+1)-gram including the current token.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum DedupMode {
    #[default]
    Context,
    Ngram,
}

/// Red-Green watermark configuration.
#[derive(Clone, Copy, Debug)]
pub struct RedGreenParams {
    pub h: usize,
    pub gamma: f64,
    pub delta: f64,
    /// Detector threshold: watermarked iff z > rho.
    pub rho: f64,
    pub variant: HashVariant,
    pub key: WatermarkKey,
    pub vocab_size: usize,
}

impl RedGreenParams {
    pub fn new(h: usize, gamma: f64, delta: f64, key: WatermarkKey, vocab_size: usize) -> Self {
        Self {
            h,
            gamma,
            delta,
            rho: 4.0,
            variant: HashVariant::SumHash,
            key,
            vocab_size,
        }
    }

    pub fn with_variant(mut self, variant: HashVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    pub fn greenlist_size(&self) -> usize {
        (self.gamma * self.vocab_size as f64).floor() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.h < 1 {
            return Err(Error::InvalidParam("context size h must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParam("gamma must be in (0, 1)".into()));
        }
        if self.vocab_size < 2 {
            return Err(Error::InvalidParam("vocab size must be >= 2".into()));
        }
        Ok(())
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
}

/// Per-position watermark evidence plus the dedup keep-mask.
///
/// For Red-Green, `x` holds color bits in {0, 1}; other schemes store
/// real-valued scores with the convention that larger means stronger
/// watermark evidence. Positions `t < h` are never kept.
#[derive(Clone, Debug)]
pub struct WatermarkTrace {
    pub x: Vec<f64>,
    pub keep: Vec<bool>,
    pub scheme: SchemeTag,
}

impl WatermarkTrace {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n_kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// The kept x-values, in position order.
    pub fn kept_values(&self) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.keep)
            .filter_map(|(&x, &k)| k.then_some(x))
            .collect()
    }
}

/// Outcome of running the watermark detector over one text.
#[derive(Clone, Copy, Debug)]
pub struct DetectionReport {
    pub n_green: usize,
    pub n_kept: usize,
    pub z: f64,
    pub watermarked: bool,
}

/// Detector statistic: standardized green count over `n` kept positions.
pub fn detector_z_value(n_green: usize, n_kept: usize, gamma: f64) -> f64 {
    let t = n_kept as f64;
    (n_green as f64 - gamma * t) / (t * gamma * (1.0 - gamma)).sqrt()
}

fn raw_window_sum(window: &[TokenId]) -> u64 {
    let mut sum = 0u64;
    for t in window {
        sum = sum.wrapping_add(t.0 as u64);
    }
    sum
}

/// Greenlist bitmask for a digest seed: Fisher-Yates permutation of the
/// vocabulary, first `n_green` entries are green.
fn green_mask_from_seed(seed: u64, vocab_size: usize, n_green: usize) -> Box<[u64]> {
    let mut perm: Vec<u32> = (0..vocab_size as u32).collect();
    let mut gen = SplitMix64::new(seed);
    for i in (1..vocab_size).rev() {
        let j = gen.next_below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    let mut mask = vec![0u64; vocab_size.div_ceil(64)].into_boxed_slice();
    for &v in &perm[..n_green] {
        mask[v as usize / 64] |= 1u64 << (v % 64);
    }
    mask
}

#[inline]
fn mask_bit(mask: &[u64], v: usize) -> bool {
    mask[v / 64] >> (v % 64) & 1 == 1
}

/// Cached green masks for one parameter set. SumHash digests depend only on
/// the window sum, so the cache key space is tiny; each worker owns its own
/// oracle.
pub struct GreenOracle {
    params: RedGreenParams,
    sum_masks: HashMap<u64, Box<[u64]>>,
    self_masks: HashMap<u64, Box<[u64]>>,
}

impl GreenOracle {
    pub fn new(params: RedGreenParams) -> Self {
        Self {
            params,
            sum_masks: HashMap::new(),
            self_masks: HashMap::new(),
        }
    }

    pub fn params(&self) -> &RedGreenParams {
        &self.params
    }

    fn ensure_sum_mask(&mut self, sum: u64) {
        if !self.sum_masks.contains_key(&sum) {
            let seed = prf_hash(self.params.key, crate::core::mix64(sum));
            let mask = green_mask_from_seed(
                seed,
                self.params.vocab_size,
                self.params.greenlist_size(),
            );
            self.sum_masks.insert(sum, mask);
        }
    }

    fn sum_mask_bit(&mut self, sum: u64, v: usize) -> bool {
        self.ensure_sum_mask(sum);
        mask_bit(&self.sum_masks[&sum], v)
    }

    /// Bitmask over the vocabulary marking tokens that would be green after
    /// this context. For SelfHash the bit for token v is v's membership in
    /// the partition seeded by (trailing context, v).
    pub fn context_mask(&mut self, context: &[TokenId]) -> Result<&[u64]> {
        self.params.check_context(context)?;
        match self.params.variant {
            HashVariant::SumHash => {
                let sum = raw_window_sum(context);
                self.ensure_sum_mask(sum);
                Ok(&self.sum_masks[&sum])
            }
            HashVariant::SelfHash => {
                let tail = raw_window_sum(&context[1..]);
                if !self.self_masks.contains_key(&tail) {
                    let vocab = self.params.vocab_size;
                    let mut mask = vec![0u64; vocab.div_ceil(64)].into_boxed_slice();
                    for v in 0..vocab {
                        if self.sum_mask_bit(tail.wrapping_add(v as u64), v) {
                            mask[v / 64] |= 1u64 << (v % 64);
                        }
                    }
                    self.self_masks.insert(tail, mask);
                }
                Ok(&self.self_masks[&tail])
            }
        }
    }

    /// Color of `token` after `context`: true = green.
    pub fn color(&mut self, context: &[TokenId], token: TokenId) -> Result<bool> {
        let mask = self.context_mask(context)?;
        Ok(mask_bit(mask, token.index()))
    }
}

/// Eagerly precomputed green masks for every reachable digest sum. Sum
/// digests live in `0..=h*(vocab-1)`, so the whole table is small; build it
/// once and share it immutably across workers.
#[derive(Clone, Debug)]
pub struct FrozenColorer {
    params: RedGreenParams,
    /// SumHash: indexed by window sum. SelfHash: composed masks indexed by
    /// trailing-context sum.
    ctx_masks: Vec<Box<[u64]>>,
}

impl FrozenColorer {
    pub fn new(params: RedGreenParams) -> Self {
        let v = params.vocab_size;
        let n_green = params.greenlist_size();
        let mask_for_sum = |sum: u64| {
            green_mask_from_seed(
                prf_hash(params.key, crate::core::mix64(sum)),
                v,
                n_green,
            )
        };
        let ctx_masks = match params.variant {
            HashVariant::SumHash => {
                let max_sum = params.h as u64 * (v as u64 - 1);
                (0..=max_sum).map(mask_for_sum).collect()
            }
            HashVariant::SelfHash => {
                let max_tail = (params.h as u64 - 1) * (v as u64 - 1);
                let inner: Vec<Box<[u64]>> =
                    (0..=max_tail + v as u64 - 1).map(mask_for_sum).collect();
                (0..=max_tail)
                    .map(|tail| {
                        let mut mask = vec![0u64; v.div_ceil(64)].into_boxed_slice();
                        for t in 0..v {
                            if mask_bit(&inner[tail as usize + t], t) {
                                mask[t / 64] |= 1u64 << (t % 64);
                            }
                        }
                        mask
                    })
                    .collect()
            }
        };
        Self { params, ctx_masks }
    }

    pub fn params(&self) -> &RedGreenParams {
        &self.params
    }

    #[inline]
    pub fn context_mask(&self, context: &[TokenId]) -> Result<&[u64]> {
        self.params.check_context(context)?;
        let sum = match self.params.variant {
            HashVariant::SumHash => raw_window_sum(context),
            HashVariant::SelfHash => raw_window_sum(&context[1..]),
        };
        Ok(&self.ctx_masks[sum as usize])
    }

    #[inline]
    pub fn color(&self, context: &[TokenId], token: TokenId) -> Result<bool> {
        Ok(mask_bit(self.context_mask(context)?, token.index()))
    }
}

/// The set of green tokens after `context`, ascending by id. Size is exactly
/// `floor(gamma * vocab_size)` for SumHash and SelfHash alike (SelfHash
/// membership is evaluated per candidate, so the per-context green count may
/// deviate; the returned set is still the greens as generation sees them).
pub fn greenlist(params: &RedGreenParams, context: &[TokenId]) -> Result<Vec<TokenId>> {
    params.validate()?;
    let mut oracle = GreenOracle::new(*params);
    let mask = oracle.context_mask(context)?;
    let mut out = Vec::new();
    for v in 0..params.vocab_size {
        if mask_bit(mask, v) {
            out.push(TokenId(v as u32));
        }
    }
    Ok(out)
}

/// Color of `token` in context: 1 = green, 0 = red.
pub fn color_of(params: &RedGreenParams, context: &[TokenId], token: TokenId) -> Result<u8> {
    params.validate()?;
    let mut oracle = GreenOracle::new(*params);
    Ok(oracle.color(context, token)? as u8)
}

/// Sample a watermarked continuation: at each step the logits of green
/// tokens are raised by delta before sampling. Returns only the generated
/// tokens, never the prompt.
pub fn generate_watermarked(
    lm: &MarkovLM,
    params: &RedGreenParams,
    prompt: &[TokenId],
    length: usize,
    rng: &mut RngStream,
) -> Result<TokenSeq> {
    params.validate()?;
    if lm.vocab_size() != params.vocab_size {
        return Err(Error::InvalidParam(format!(
            "lm vocab {} != watermark vocab {}",
            lm.vocab_size(),
            params.vocab_size
        )));
    }
    if prompt.len() < params.h {
        return Err(Error::ContextLength {
            expected: params.h,
            got: prompt.len(),
        });
    }
    if length == 0 {
        return Err(Error::InvalidParam("generation length must be >= 1".into()));
    }
    let mut oracle = GreenOracle::new(*params);
    let mut state = GenState::new(prompt, params.vocab_size);
    for _ in 0..length {
        lm.next_dist(&state.history, &mut state.dist);
        let token = if params.delta == 0.0 {
            state.plain_step(rng)
        } else {
            let ctx = &state.history[state.history.len() - params.h..];
            let mask = oracle.context_mask(ctx)?;
            state.biased_step(mask, params.delta.exp(), rng)
        };
        state.advance(token);
    }
    Ok(state.out)
}

/// As [`generate_watermarked`], against a prebuilt shared colorer; the fast
/// path for experiment workers.
pub fn generate_watermarked_with(
    colorer: &FrozenColorer,
    lm: &MarkovLM,
    prompt: &[TokenId],
    length: usize,
    rng: &mut RngStream,
) -> Result<TokenSeq> {
    let params = colorer.params();
    if lm.vocab_size() != params.vocab_size {
        return Err(Error::InvalidParam("lm vocab != watermark vocab".into()));
    }
    if prompt.len() < params.h {
        return Err(Error::ContextLength {
            expected: params.h,
            got: prompt.len(),
        });
    }
    if length == 0 {
        return Err(Error::InvalidParam("generation length must be >= 1".into()));
    }
    let mut state = GenState::new(prompt, params.vocab_size);
    for _ in 0..length {
        lm.next_dist(&state.history, &mut state.dist);
        let token = if params.delta == 0.0 {
            state.plain_step(rng)
        } else {
            let ctx = &state.history[state.history.len() - params.h..];
            let mask = colorer.context_mask(ctx)?;
            state.biased_step(mask, params.delta.exp(), rng)
        };
        state.advance(token);
    }
    Ok(state.out)
}

/// Rolling generation state shared by the watermarked samplers.
struct GenState {
    history: Vec<TokenId>,
    out: TokenSeq,
    dist: NextDist,
    scratch: SampleScratch,
    biased: Vec<(TokenId, f64)>,
    vocab_size: usize,
}

impl GenState {
    fn new(prompt: &[TokenId], vocab_size: usize) -> Self {
        Self {
            history: prompt.to_vec(),
            out: TokenSeq::new(),
            dist: NextDist::default(),
            scratch: SampleScratch::default(),
            biased: Vec::new(),
            vocab_size,
        }
    }

    // Zero bias keeps the exact sampling path of the unwatermarked model so
    // identical streams yield identical text.
    fn plain_step(&mut self, rng: &mut RngStream) -> TokenId {
        pooled_sample(
            self.vocab_size,
            self.dist.base,
            &self.dist.entries,
            None,
            &mut self.scratch,
            rng,
        )
    }

    fn biased_step(&mut self, mask: &[u64], boost: f64, rng: &mut RngStream) -> TokenId {
        self.biased.clear();
        for &(t, w) in &self.dist.entries {
            let w = if mask_bit(mask, t.index()) { w * boost } else { w };
            self.biased.push((t, w));
        }
        pooled_sample(
            self.vocab_size,
            self.dist.base,
            &self.biased,
            Some((mask, boost)),
            &mut self.scratch,
            rng,
        )
    }

    fn advance(&mut self, token: TokenId) {
        self.history.push(token);
        self.out.push(token);
    }
}

/// Color every position of `text` and mark the dedup keep-mask: positions
/// before the first full context and positions whose dedup window was seen
/// earlier are dropped (first occurrence kept).
pub fn color_trace(params: &RedGreenParams, text: &[TokenId]) -> Result<WatermarkTrace> {
    color_trace_dedup(params, text, DedupMode::Context)
}

pub fn color_trace_dedup(
    params: &RedGreenParams,
    text: &[TokenId],
    dedup: DedupMode,
) -> Result<WatermarkTrace> {
    params.validate()?;
    let keep = keep_mask(text, params.h, dedup, params.vocab_size)?;
    let mut oracle = GreenOracle::new(*params);
    let mut x = vec![0.0; text.len()];
    for t in params.h..text.len() {
        let ctx = &text[t - params.h..t];
        x[t] = oracle.color(ctx, text[t])? as u8 as f64;
    }
    Ok(WatermarkTrace {
        x,
        keep,
        scheme: SchemeTag::RedGreen,
    })
}

/// Repeated-window dedup mask shared by all schemes: positions before the
/// first full window and positions whose window was seen earlier are dropped.
pub fn keep_mask(
    text: &[TokenId],
    h: usize,
    dedup: DedupMode,
    vocab_size: usize,
) -> Result<Vec<bool>> {
    if text.len() <= h {
        return Err(Error::TextTooShort {
            min: h,
            got: text.len(),
        });
    }
    let bits = token_bits(vocab_size);
    let mut keep = vec![false; text.len()];
    let mut seen: HashSet<u128> = HashSet::new();
    for t in h..text.len() {
        let window = match dedup {
            DedupMode::Context => &text[t - h..t],
            DedupMode::Ngram => &text[t - h..=t],
        };
        let packed = pack_tokens(window, bits).ok_or_else(|| {
            Error::InvalidParam("dedup window does not fit the packed key".into())
        })?;
        keep[t] = seen.insert(packed);
    }
    Ok(keep)
}

/// As [`color_trace_dedup`], against a prebuilt shared colorer.
pub fn color_trace_with(
    colorer: &FrozenColorer,
    text: &[TokenId],
    dedup: DedupMode,
) -> Result<WatermarkTrace> {
    let params = colorer.params();
    let keep = keep_mask(text, params.h, dedup, params.vocab_size)?;
    let mut x = vec![0.0; text.len()];
    for t in params.h..text.len() {
        let ctx = &text[t - params.h..t];
        x[t] = colorer.color(ctx, text[t])? as u8 as f64;
    }
    Ok(WatermarkTrace {
        x,
        keep,
        scheme: SchemeTag::RedGreen,
    })
}

/// Detector decision from an existing color trace.
pub fn detect_from_trace(params: &RedGreenParams, trace: &WatermarkTrace) -> Result<DetectionReport> {
    let mut n_kept = 0usize;
    let mut n_green = 0usize;
    for (x, &k) in trace.x.iter().zip(&trace.keep) {
        if k {
            n_kept += 1;
            if *x > 0.5 {
                n_green += 1;
            }
        }
    }
    if n_kept == 0 {
        return Err(Error::ZeroKeptPositions);
    }
    let z = detector_z_value(n_green, n_kept, params.gamma);
    Ok(DetectionReport {
        n_green,
        n_kept,
        z,
        watermarked: z > params.rho,
    })
}

/// Run the watermark detector over a text.
pub fn detect_z(params: &RedGreenParams, text: &[TokenId]) -> Result<DetectionReport> {
    let trace = color_trace(params, text)?;
    detect_from_trace(params, &trace)
}
