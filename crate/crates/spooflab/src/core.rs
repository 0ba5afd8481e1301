//! Shared domain types, the keyed mixing function, and seeded randomness.
//!
//! Everything downstream (vocabulary partitions, AAR score vectors, KTH key
//! rows, experiment trials) derives its randomness from two primitives kept
//! here: a 64-bit finalizer-style mixer and counter-based seeded streams.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A token, an index into some vocabulary.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Default)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A text: an ordered sequence of tokens over one vocabulary.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct TokenSeq {
    tokens: Vec<TokenId>,
}

impl TokenSeq {
    pub fn new() -> Self {
        Self { tokens: Vec::new() }
    }

    pub fn from_tokens(tokens: Vec<TokenId>) -> Self {
        Self { tokens }
    }

    pub fn from_ids<I: IntoIterator<Item = u32>>(ids: I) -> Self {
        Self {
            tokens: ids.into_iter().map(TokenId).collect(),
        }
    }

    #[inline]
    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    #[inline]
    pub fn push(&mut self, t: TokenId) {
        self.tokens.push(t);
    }

    pub fn extend_from_slice(&mut self, ts: &[TokenId]) {
        self.tokens.extend_from_slice(ts);
    }

    /// The suffix starting at `from` as a new sequence.
    pub fn suffix(&self, from: usize) -> TokenSeq {
        Self {
            tokens: self.tokens[from.min(self.tokens.len())..].to_vec(),
        }
    }

    /// The prefix of length `len` as a new sequence.
    pub fn prefix(&self, len: usize) -> TokenSeq {
        Self {
            tokens: self.tokens[..len.min(self.tokens.len())].to_vec(),
        }
    }
}

impl std::ops::Deref for TokenSeq {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.tokens
    }
}

impl FromIterator<TokenId> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        Self {
            tokens: iter.into_iter().collect(),
        }
    }
}

/// The watermark's private key.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct WatermarkKey(pub u64);

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer: a bijective 64-bit mixer with strong diffusion.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed pseudorandom mixing of a context digest.
///
/// Two finalizer rounds over `key XOR digest` (offset by the golden-ratio
/// constant so the all-zero input is not a fixed point). Deterministic,
/// bijective in the combined input, and avalanching; not cryptographic.
#[inline]
pub fn prf_hash(key: WatermarkKey, context_digest: u64) -> u64 {
    mix64(mix64((key.0 ^ context_digest).wrapping_add(GOLDEN)))
}

/// Sum-aggregated context digest: mix of the unweighted sum of token ids.
///
/// The digest is order-insensitive by construction, so windows that are
/// permutations of each other collide on purpose.
#[inline]
pub fn context_digest_sum(context: &[TokenId]) -> u64 {
    let mut sum: u64 = 0;
    for t in context {
        sum = sum.wrapping_add(t.0 as u64);
    }
    mix64(sum)
}

/// Order-sensitive context digest: a mixing fold over the window. Distinct
/// windows, including permutations of each other, digest differently with
/// overwhelming probability.
#[inline]
pub fn context_digest_chain(context: &[TokenId]) -> u64 {
    let mut d = GOLDEN;
    for t in context {
        d = mix64(d ^ (t.0 as u64 + 1));
    }
    d
}

/// Tiny deterministic generator used for vocabulary permutations and
/// per-element uniforms. Standard splitmix64 sequence.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    #[inline]
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    /// Uniform in `[0, n)` via the widening-multiply reduction.
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

/// Map a 64-bit word to the open interval (0, 1).
#[inline]
pub fn unit_open(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// The `index`-th uniform in (0,1) of the family seeded by `seed`.
///
/// Random access without generating a prefix, so sparse lookups into large
/// virtual vectors (AAR score vectors, KTH key rows) stay O(1).
#[inline]
pub fn element_uniform(seed: u64, index: u64) -> f64 {
    unit_open(mix64(seed ^ index.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Counter-based seeded randomness. Identical `(seed, stream)` pairs yield
/// bit-identical draw sequences, so parallel trials stay order-independent.
#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in `[0, n)`.
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest);
    }
}

/// Bits needed to pack one token id of a vocabulary of this size.
pub fn token_bits(vocab_size: usize) -> u32 {
    usize::BITS - vocab_size.max(2).saturating_sub(1).leading_zeros()
}

/// Pack a token window into a single integer key, `bits` per token.
/// Returns `None` when the window does not fit in 128 bits.
pub fn pack_tokens(window: &[TokenId], bits: u32) -> Option<u128> {
    if window.len() as u32 * bits > 128 {
        return None;
    }
    let mut key: u128 = 1; // leading sentinel keeps different lengths distinct
    for t in window {
        key = (key << bits) | t.0 as u128;
    }
    Some(key)
}

/// Inverse of [`pack_tokens`]: recover the window from a packed key.
pub fn unpack_tokens(key: u128, bits: u32) -> Vec<TokenId> {
    let top = 127 - key.leading_zeros();
    let len = (top / bits) as usize;
    let mask = (1u128 << bits) - 1;
    (0..len)
        .map(|i| TokenId(((key >> ((len - 1 - i) as u32 * bits)) & mask) as u32))
        .collect()
}
