//! Corpus ingestion and a toy autoregressive language model.
//!
//! The model is a smoothed Markov chain over token ids with back-off to
//! shorter orders and a temperature knob. It stands in for the provider's
//! LM everywhere a logit vector is needed: watermarked generation,
//! reprompting, and the spoofers' auxiliary models.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::core::{pack_tokens, token_bits, RngStream, TokenId, TokenSeq};
use crate::error::{Error, Result};

/// Reserved id for out-of-vocabulary token strings under a frozen vocabulary.
pub const UNK: TokenId = TokenId(0);

/// Bijective token string <-> id table. Id 0 is always the unknown token.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self {
            symbols: Vec::new(),
            index: HashMap::new(),
        };
        v.intern("<unk>");
        v
    }

    /// A vocabulary of exactly `size` abstract tokens: `<unk>`, `w1`, ...
    pub fn synthetic(size: usize) -> Self {
        assert!(size >= 2, "vocabulary needs at least 2 tokens");
        let mut v = Self::new();
        for i in 1..size {
            v.intern(&format!("w{i}"));
        }
        v
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn intern(&mut self, s: &str) -> TokenId {
        if let Some(&t) = self.index.get(s) {
            return t;
        }
        let t = TokenId(self.symbols.len() as u32);
        self.symbols.push(s.to_string());
        self.index.insert(s.to_string(), t);
        t
    }

    pub fn lookup(&self, s: &str) -> Option<TokenId> {
        self.index.get(s).copied()
    }

    pub fn symbol(&self, t: TokenId) -> Option<&str> {
        self.symbols.get(t.index()).map(|s| s.as_str())
    }
}

/// A list of documents over one vocabulary.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub documents: Vec<TokenSeq>,
    pub vocab: Vocabulary,
}

impl Corpus {
    pub fn total_tokens(&self) -> usize {
        self.documents.iter().map(|d| d.len()).sum()
    }
}

/// Read a corpus file: UTF-8 text, one document per line, whitespace-delimited
/// token strings. With a frozen vocabulary, unseen strings map to `<unk>`;
/// otherwise they extend the table.
pub fn ingest_corpus(path: &Path, vocab: Option<Vocabulary>) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let frozen = vocab.is_some();
    let mut vocab = vocab.unwrap_or_default();
    let mut documents = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let mut doc = TokenSeq::new();
        for word in line.split_whitespace() {
            let t = if frozen {
                vocab.lookup(word).unwrap_or(UNK)
            } else {
                vocab.intern(word)
            };
            doc.push(t);
        }
        if !doc.is_empty() {
            documents.push(doc);
        }
    }
    if documents.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(Corpus { documents, vocab })
}

/// Write documents in the corpus line format using the vocabulary's symbols.
pub fn save_corpus(documents: &[TokenSeq], vocab: &Vocabulary, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for doc in documents {
        let mut first = true;
        for t in doc.tokens() {
            if !first {
                out.write_all(b" ")?;
            }
            first = false;
            out.write_all(vocab.symbol(*t).unwrap_or("<unk>").as_bytes())?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Per-context transition counts, sorted by token id.
#[derive(Clone, Debug, Default)]
struct CountList {
    pairs: Vec<(TokenId, u64)>,
    total: u64,
}

impl CountList {
    fn add(&mut self, t: TokenId, n: u64) {
        match self.pairs.binary_search_by_key(&t, |&(tok, _)| tok) {
            Ok(i) => self.pairs[i].1 += n,
            Err(i) => self.pairs.insert(i, (t, n)),
        }
        self.total += n;
    }
}

/// Smoothed Markov language model of order `k` with back-off.
///
/// `P(v | ctx) = (count(ctx, v) + alpha) / (count(ctx, .) + alpha * |vocab|)`
/// at the deepest order whose context was observed; unseen contexts fall back
/// order by order down to unigram counts.
#[derive(Clone, Debug)]
pub struct MarkovLM {
    order: usize,
    alpha: f64,
    tau: f64,
    vocab_size: usize,
    bits: u32,
    unigram: Vec<u64>,
    unigram_total: u64,
    // ctx[j] holds contexts of length j+1
    ctx: Vec<HashMap<u128, CountList>>,
}

/// Unnormalized next-token weights in sparse form: every token not in
/// `entries` carries `base`. Temperature is already applied.
#[derive(Clone, Debug, Default)]
pub struct NextDist {
    pub vocab_size: usize,
    pub base: f64,
    pub entries: Vec<(TokenId, f64)>,
}

impl MarkovLM {
    /// Model with no observations: every context yields the uniform
    /// distribution.
    pub fn uniform(vocab_size: usize) -> Self {
        Self {
            order: 1,
            alpha: 1.0,
            tau: 1.0,
            vocab_size,
            bits: token_bits(vocab_size),
            unigram: vec![0; vocab_size],
            unigram_total: 0,
            ctx: vec![HashMap::new()],
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn temperature(&self) -> f64 {
        self.tau
    }

    pub fn set_temperature(&mut self, tau: f64) {
        assert!(tau > 0.0, "temperature must be positive");
        self.tau = tau;
    }

    fn observe(&mut self, context: &[TokenId], next: TokenId, n: u64) {
        self.unigram[next.index()] += n;
        self.unigram_total += n;
        for j in 1..=self.order.min(context.len()) {
            let window = &context[context.len() - j..];
            let key = pack_tokens(window, self.bits).expect("context fits in 128 bits");
            self.ctx[j - 1].entry(key).or_default().add(next, n);
        }
    }

    /// Deepest available order for this context and its count list.
    fn resolve(&self, context: &[TokenId]) -> Option<&CountList> {
        let deepest = self.order.min(context.len());
        for j in (1..=deepest).rev() {
            let window = &context[context.len() - j..];
            let key = pack_tokens(window, self.bits).expect("context fits in 128 bits");
            if let Some(list) = self.ctx[j - 1].get(&key) {
                if list.total > 0 {
                    return Some(list);
                }
            }
        }
        None
    }

    /// Log-probabilities over the vocabulary, scaled by `1/tau`.
    pub fn logits(&self, context: &[TokenId]) -> Vec<f64> {
        let mut out = vec![0.0; self.vocab_size];
        let sigma = self.vocab_size as f64;
        match self.resolve(context) {
            Some(list) => {
                let z = list.total as f64 + self.alpha * sigma;
                let base = (self.alpha / z).ln() / self.tau;
                out.fill(base);
                for &(t, c) in &list.pairs {
                    out[t.index()] = ((c as f64 + self.alpha) / z).ln() / self.tau;
                }
            }
            None => {
                let z = self.unigram_total as f64 + self.alpha * sigma;
                let base = (self.alpha / z).ln() / self.tau;
                out.fill(base);
                if self.unigram_total > 0 {
                    for (i, &c) in self.unigram.iter().enumerate() {
                        if c > 0 {
                            out[i] = ((c as f64 + self.alpha) / z).ln() / self.tau;
                        }
                    }
                }
            }
        }
        out
    }

    /// Sparse unnormalized weights for the next token; proportional to
    /// `softmax(logits(context))`. `buf` is reused across calls.
    pub fn next_dist(&self, context: &[TokenId], buf: &mut NextDist) {
        buf.vocab_size = self.vocab_size;
        buf.entries.clear();
        let inv_tau = 1.0 / self.tau;
        match self.resolve(context) {
            Some(list) => {
                buf.base = self.alpha.powf(inv_tau);
                for &(t, c) in &list.pairs {
                    buf.entries.push((t, (c as f64 + self.alpha).powf(inv_tau)));
                }
            }
            None => {
                buf.base = self.alpha.powf(inv_tau);
                if self.unigram_total > 0 {
                    for (i, &c) in self.unigram.iter().enumerate() {
                        if c > 0 {
                            buf.entries
                                .push((TokenId(i as u32), (c as f64 + self.alpha).powf(inv_tau)));
                        }
                    }
                }
            }
        }
    }
}

/// Count transitions of all orders `1..=k` over the corpus documents.
/// Documents are independent: no n-gram spans a document boundary.
pub fn train_markov(corpus: &Corpus, k: usize, alpha: f64) -> Result<MarkovLM> {
    if k < 1 {
        return Err(Error::InvalidParam("markov order must be >= 1".into()));
    }
    if alpha <= 0.0 {
        return Err(Error::InvalidParam("smoothing alpha must be > 0".into()));
    }
    let vocab_size = corpus.vocab.len();
    let bits = token_bits(vocab_size);
    if k as u32 * bits > 128 {
        return Err(Error::InvalidParam(format!(
            "order {k} over {vocab_size} tokens does not fit the packed context key"
        )));
    }
    if !corpus.documents.iter().any(|d| d.len() > k) {
        return Err(Error::TextTooShort {
            min: k,
            got: corpus.documents.iter().map(|d| d.len()).max().unwrap_or(0),
        });
    }
    let mut lm = MarkovLM {
        order: k,
        alpha,
        tau: 1.0,
        vocab_size,
        bits,
        unigram: vec![0; vocab_size],
        unigram_total: 0,
        ctx: vec![HashMap::new(); k],
    };
    for doc in &corpus.documents {
        let toks = doc.tokens();
        for t in 0..toks.len() {
            lm.observe(&toks[..t], toks[t], 1);
        }
    }
    Ok(lm)
}

/// Build a model of order `gram_len - 1` from top-order n-gram counts alone.
/// Lower orders are derived by marginalizing over dropped leading tokens.
pub fn markov_from_ngram_counts<'a, I>(
    grams: I,
    vocab_size: usize,
    alpha: f64,
) -> Result<MarkovLM>
where
    I: Iterator<Item = (&'a [TokenId], u64)> + Clone,
{
    let mut gram_len = None;
    for (g, _) in grams.clone() {
        match gram_len {
            None => gram_len = Some(g.len()),
            Some(l) if l != g.len() => {
                return Err(Error::InvalidParam("mixed n-gram lengths".into()))
            }
            _ => {}
        }
    }
    let gram_len = gram_len.ok_or(Error::EmptyDataset)?;
    if gram_len < 2 {
        return Err(Error::InvalidParam("n-grams must have length >= 2".into()));
    }
    let k = gram_len - 1;
    let bits = token_bits(vocab_size);
    let mut lm = MarkovLM {
        order: k,
        alpha,
        tau: 1.0,
        vocab_size,
        bits,
        unigram: vec![0; vocab_size],
        unigram_total: 0,
        ctx: vec![HashMap::new(); k],
    };
    for (g, n) in grams {
        let (context, next) = (&g[..k], g[k]);
        lm.observe(context, next, n);
    }
    Ok(lm)
}

/// Normalized softmax of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = out.iter().sum();
    for p in &mut out {
        *p /= z;
    }
    out
}

/// Shannon entropy of a probability vector, in nats.
pub fn entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Draw one token from `softmax(logits)`.
pub fn sample(logits: &[f64], rng: &mut RngStream) -> TokenId {
    debug_assert!(!logits.is_empty());
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
    let mut target = rng.next_f64() * total;
    for (i, &l) in logits.iter().enumerate() {
        let w = (l - m).exp();
        if target < w {
            return TokenId(i as u32);
        }
        target -= w;
    }
    TokenId(logits.len() as u32 - 1)
}

/// Bitset scratch shared by pooled sampling; one per worker.
#[derive(Clone, Debug, Default)]
pub struct SampleScratch {
    except: Vec<u64>,
}

/// Draw from the distribution given by sparse `entries` plus a pooled
/// remainder at weight `base`, optionally split into two classes by a bitset
/// (`class_mult` applies to set bits outside `entries`).
///
/// Exactly one uniform draw is consumed per call, so two calls that present
/// the same weights through the same arguments select the same token.
pub fn pooled_sample(
    vocab_size: usize,
    base: f64,
    entries: &[(TokenId, f64)],
    classes: Option<(&[u64], f64)>,
    scratch: &mut SampleScratch,
    rng: &mut RngStream,
) -> TokenId {
    let words = vocab_size.div_ceil(64);
    scratch.except.clear();
    scratch.except.resize(words, 0);
    let mut mass_entries = 0.0;
    for &(t, w) in entries {
        scratch.except[t.index() / 64] |= 1u64 << (t.index() % 64);
        mass_entries += w;
    }

    let valid = |w: usize| -> u64 {
        if (w + 1) * 64 <= vocab_size {
            !0u64
        } else {
            (1u64 << (vocab_size - w * 64)) - 1
        }
    };

    let mut mass_pool = 0.0;
    for w in 0..words {
        let open = valid(w) & !scratch.except[w];
        match classes {
            Some((mask, mult)) => {
                let g = (open & mask[w]).count_ones() as f64;
                let r = (open & !mask[w]).count_ones() as f64;
                mass_pool += base * mult * g + base * r;
            }
            None => mass_pool += base * open.count_ones() as f64,
        }
    }

    let total = mass_entries + mass_pool;
    let mut target = rng.next_f64() * total;

    if target < mass_entries {
        for &(t, w) in entries {
            if target < w {
                return t;
            }
            target -= w;
        }
        return entries.last().expect("entries nonempty").0;
    }
    target -= mass_entries;

    let mut last_open = None;
    for w in 0..words {
        let open = valid(w) & !scratch.except[w];
        if open == 0 {
            continue;
        }
        last_open = Some(w);
        let word_mass = match classes {
            Some((mask, mult)) => {
                let g = (open & mask[w]).count_ones() as f64;
                let r = (open & !mask[w]).count_ones() as f64;
                base * mult * g + base * r
            }
            None => base * open.count_ones() as f64,
        };
        if target < word_mass {
            let mut bits = open;
            while bits != 0 {
                let b = bits.trailing_zeros();
                let weight = match classes {
                    Some((mask, mult)) if mask[w] >> b & 1 == 1 => base * mult,
                    _ => base,
                };
                if target < weight {
                    return TokenId((w * 64 + b as usize) as u32);
                }
                target -= weight;
                bits &= bits - 1;
            }
            // Rounding pushed us past the last bit of this word.
            return TokenId((w * 64 + 63 - open.leading_zeros() as usize) as u32);
        }
        target -= word_mass;
    }
    match last_open {
        Some(w) => {
            let open = valid(w) & !scratch.except[w];
            TokenId((w * 64 + 63 - open.leading_zeros() as usize) as u32)
        }
        None => entries.last().expect("non-degenerate distribution").0,
    }
}

/// Configuration for the deterministic synthetic corpus generator.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub vocab_size: usize,
    pub n_docs: usize,
    pub doc_len: usize,
    /// Context length of the hidden transition structure.
    pub order: usize,
    /// Per-context branching is pseudorandom in `1..=max_branching`, so some
    /// contexts are near-deterministic and others are diverse.
    pub max_branching: usize,
    /// Zipf exponent over a context's candidate continuations.
    pub zipf: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            n_docs: 2000,
            doc_len: 300,
            order: 2,
            max_branching: 24,
            zipf: 1.1,
            seed: 1,
        }
    }
}

/// Generate a corpus from a hidden pseudorandom transition structure.
/// Deterministic in the generator settings; documents are independent.
pub fn synthetic_corpus(spec: &SyntheticSpec) -> Corpus {
    assert!(spec.vocab_size >= 2 && spec.order >= 1 && spec.max_branching >= 1);
    let vocab = Vocabulary::synthetic(spec.vocab_size);
    let sigma = spec.vocab_size as u64;
    let bits = token_bits(spec.vocab_size);
    let structure = crate::core::mix64(spec.seed ^ 0x5EED_0C0E_D00D_1234);
    let mut documents = Vec::with_capacity(spec.n_docs);
    for d in 0..spec.n_docs {
        let mut rng = RngStream::new(spec.seed, 0x1000_0000 + d as u64);
        let mut doc = TokenSeq::new();
        for _ in 0..spec.order.min(spec.doc_len) {
            doc.push(TokenId(rng.next_below(sigma) as u32));
        }
        while doc.len() < spec.doc_len {
            let from = doc.len() - spec.order;
            let key = pack_tokens(&doc[from..], bits).expect("context fits");
            let ctx_hash = crate::core::mix64(structure ^ (key as u64) ^ ((key >> 64) as u64));
            let branching = 1 + (crate::core::mix64(ctx_hash ^ 0xB1) % spec.max_branching as u64);
            let pick = zipf_pick(branching as usize, spec.zipf, rng.next_f64());
            let token = crate::core::mix64(ctx_hash ^ (0x100 + pick as u64)) % sigma;
            doc.push(TokenId(token as u32));
        }
        documents.push(doc);
    }
    Corpus { documents, vocab }
}

/// Index into `n` Zipf-weighted slots: weight of slot i is (i+1)^(-s).
fn zipf_pick(n: usize, s: f64, u: f64) -> usize {
    let mut total = 0.0;
    for i in 0..n {
        total += ((i + 1) as f64).powf(-s);
    }
    let mut target = u * total;
    for i in 0..n {
        let w = ((i + 1) as f64).powf(-s);
        if target < w {
            return i;
        }
        target -= w;
    }
    n - 1
}

/// Plain (unwatermarked) continuation sampled from the model.
pub fn generate_text(
    lm: &MarkovLM,
    prompt: &[TokenId],
    length: usize,
    rng: &mut RngStream,
) -> TokenSeq {
    let mut history: Vec<TokenId> = prompt.to_vec();
    let mut out = TokenSeq::new();
    let mut dist = NextDist::default();
    let mut scratch = SampleScratch::default();
    for _ in 0..length {
        lm.next_dist(&history, &mut dist);
        let t = pooled_sample(
            lm.vocab_size(),
            dist.base,
            &dist.entries,
            None,
            &mut scratch,
            rng,
        );
        history.push(t);
        out.push(t);
    }
    out
}
