//! Simulated learning-based spoofers.
//!
//! The attacker builds a dataset of watermarked completions, learns a
//! knowledge table over the (h+1)-grams it observed, and generates text
//! whose green-token advantage is confined to known grams. Three attacker
//! models are simulated: an idealized oracle that perfectly knows the color
//! of observed grams, a frequency-ratio attacker that scores grams against a
//! base corpus, and a distillation attacker that samples a Markov model
//! trained on the dataset.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::core::{pack_tokens, token_bits, unpack_tokens, RngStream, TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::lm::{markov_from_ngram_counts, pooled_sample, MarkovLM, NextDist, SampleScratch, Vocabulary};
use crate::watermark::{
    detect_z, generate_watermarked_with, FrozenColorer, HashVariant, RedGreenParams,
};

/// Watermarked completions queried from the provider; the spoofer's training
/// data.
#[derive(Clone, Debug)]
pub struct SpoofDataset {
    pub documents: Vec<TokenSeq>,
    pub total_tokens: usize,
}

impl SpoofDataset {
    /// Keep only documents the watermark detector flags; an attacker would
    /// discard failed queries rather than learn from them.
    pub fn filter_watermarked(&self, params: &RedGreenParams) -> Result<SpoofDataset> {
        let mut documents = Vec::with_capacity(self.documents.len());
        let mut total_tokens = 0;
        for doc in &self.documents {
            if detect_z(params, doc)?.watermarked {
                total_tokens += doc.len();
                documents.push(doc.clone());
            }
        }
        if documents.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(SpoofDataset {
            documents,
            total_tokens,
        })
    }
}

/// How gram observations are turned into knowledge scores.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum KnowledgeMode {
    /// Presence bit per gram.
    Indicator,
    /// Raw gram count.
    Frequency,
    /// `c_D / (c_D + lambda * c_base + eps)`, a scale-free confidence that a
    /// gram is dataset-typical rather than base-typical.
    RatioScore,
}

/// Ordered (h+1)-gram scores learned from the dataset, keyed by context so
/// generation can scan candidate continuations.
#[derive(Clone, Debug)]
pub struct KnowledgeTable {
    pub mode: KnowledgeMode,
    gram_len: usize,
    bits: u32,
    vocab_size: usize,
    map: HashMap<u128, Vec<(TokenId, f64)>>,
    n_grams: usize,
}

impl KnowledgeTable {
    pub fn gram_len(&self) -> usize {
        self.gram_len
    }

    pub fn n_grams(&self) -> usize {
        self.n_grams
    }

    fn ctx_key(&self, ctx: &[TokenId]) -> u128 {
        pack_tokens(ctx, self.bits).expect("context fits packed key")
    }

    /// Continuations observed after this ordered context, sorted by token.
    pub fn continuations(&self, ctx: &[TokenId]) -> Option<&[(TokenId, f64)]> {
        debug_assert_eq!(ctx.len(), self.gram_len - 1);
        self.map.get(&self.ctx_key(ctx)).map(|v| v.as_slice())
    }

    /// Score of the ordered gram `(ctx, token)`; zero when unobserved.
    pub fn score(&self, ctx: &[TokenId], token: TokenId) -> f64 {
        self.continuations(ctx)
            .and_then(|list| {
                list.binary_search_by_key(&token, |&(t, _)| t)
                    .ok()
                    .map(|i| list[i].1)
            })
            .unwrap_or(0.0)
    }

    pub fn known(&self, ctx: &[TokenId], token: TokenId) -> bool {
        self.score(ctx, token) > 0.0
    }

    /// All grams with their scores, windows unpacked.
    pub fn iter_grams(&self) -> impl Iterator<Item = (Vec<TokenId>, f64)> + '_ {
        self.map.iter().flat_map(move |(&ctx_key, list)| {
            let ctx = unpack_tokens(ctx_key, self.bits);
            list.iter().map(move |&(t, score)| {
                let mut gram = ctx.clone();
                gram.push(t);
                (gram, score)
            })
        })
    }
}

/// Attacker family.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SpooferKind {
    /// Idealized: knows the true color of every observed gram.
    Oracle,
    /// Frequency-ratio attacker biasing logits by learned scores.
    Stealing,
    /// Samples a Markov model trained on the dataset.
    Distill,
}

impl std::fmt::Display for SpooferKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpooferKind::Oracle => write!(f, "oracle"),
            SpooferKind::Stealing => write!(f, "stealing"),
            SpooferKind::Distill => write!(f, "distill"),
        }
    }
}

/// Attacker configuration. The spoofer is assumed to know h and the hash
/// variant but not the key; the oracle variant additionally carries the true
/// parameters, consulted only to label observed grams.
#[derive(Clone, Debug)]
pub struct SpooferConfig {
    pub kind: SpooferKind,
    /// Logit boost applied to known-green (Oracle) or score-weighted
    /// (Stealing) candidates.
    pub boost: f64,
    pub distill_order: usize,
    pub distill_alpha: f64,
    pub assumed_h: usize,
    pub assumed_variant: HashVariant,
    pub oracle_params: Option<RedGreenParams>,
}

impl SpooferConfig {
    pub fn stealing(assumed_h: usize, boost: f64) -> Self {
        Self {
            kind: SpooferKind::Stealing,
            boost,
            distill_order: assumed_h,
            distill_alpha: 0.05,
            assumed_h,
            assumed_variant: HashVariant::SumHash,
            oracle_params: None,
        }
    }

    pub fn oracle(params: RedGreenParams, boost: f64) -> Self {
        Self {
            kind: SpooferKind::Oracle,
            boost,
            distill_order: params.h,
            distill_alpha: 0.05,
            assumed_h: params.h,
            assumed_variant: params.variant,
            oracle_params: Some(params),
        }
    }

    pub fn distill(assumed_h: usize, order: usize) -> Self {
        Self {
            kind: SpooferKind::Distill,
            boost: 0.0,
            distill_order: order,
            distill_alpha: 0.05,
            assumed_h,
            assumed_variant: HashVariant::SumHash,
            oracle_params: None,
        }
    }

    fn gram_len(&self) -> usize {
        match self.kind {
            SpooferKind::Distill => self.distill_order + 1,
            _ => self.assumed_h + 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.boost < 0.0 {
            return Err(Error::InvalidParam("boost must be >= 0".into()));
        }
        if self.assumed_h < 1 {
            return Err(Error::InvalidParam("assumed h must be >= 1".into()));
        }
        if self.kind == SpooferKind::Distill && self.distill_order < 1 {
            return Err(Error::InvalidParam("distill order must be >= 1".into()));
        }
        if self.kind == SpooferKind::Oracle && self.oracle_params.is_none() {
            return Err(Error::InvalidParam(
                "oracle spoofer needs the true watermark parameters".into(),
            ));
        }
        Ok(())
    }
}

/// Query the watermarked provider: generate `n_docs` completions of
/// `doc_len` tokens, cycling through the prompts.
pub fn build_dataset(
    lm: &MarkovLM,
    params: &RedGreenParams,
    prompts: &[TokenSeq],
    n_docs: usize,
    doc_len: usize,
    rng: &mut RngStream,
) -> Result<SpoofDataset> {
    if n_docs == 0 {
        return Err(Error::EmptyDataset);
    }
    if prompts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let colorer = FrozenColorer::new(*params);
    let mut documents = Vec::with_capacity(n_docs);
    let mut total_tokens = 0;
    for d in 0..n_docs {
        let prompt = &prompts[d % prompts.len()];
        let doc = generate_watermarked_with(&colorer, lm, prompt, doc_len, rng)?;
        total_tokens += doc.len();
        documents.push(doc);
    }
    Ok(SpoofDataset {
        documents,
        total_tokens,
    })
}

/// Ratio-score kernel: `c_d / (c_d + scaled_base + eps)`.
pub fn ratio_score(c_d: f64, scaled_base: f64, eps: f64) -> f64 {
    c_d / (c_d + scaled_base + eps)
}

const RATIO_EPS: f64 = 0.5;

/// Learn a knowledge table from the dataset. `base` supplies the comparison
/// corpus for [`KnowledgeMode::RatioScore`] and is ignored otherwise.
pub fn learn_knowledge(
    dataset: &SpoofDataset,
    cfg: &SpooferConfig,
    base: Option<&[TokenSeq]>,
    vocab_size: usize,
) -> Result<KnowledgeTable> {
    cfg.validate()?;
    if dataset.documents.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mode = match cfg.kind {
        SpooferKind::Oracle => KnowledgeMode::Indicator,
        SpooferKind::Stealing => {
            if base.is_some() {
                KnowledgeMode::RatioScore
            } else {
                KnowledgeMode::Frequency
            }
        }
        SpooferKind::Distill => KnowledgeMode::Frequency,
    };
    learn_knowledge_mode(dataset, mode, cfg.gram_len(), base, vocab_size)
}

/// Learn with an explicit mode; the general entry point behind
/// [`learn_knowledge`].
pub fn learn_knowledge_mode(
    dataset: &SpoofDataset,
    mode: KnowledgeMode,
    gram_len: usize,
    base: Option<&[TokenSeq]>,
    vocab_size: usize,
) -> Result<KnowledgeTable> {
    if dataset.documents.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if mode == KnowledgeMode::RatioScore && base.is_none() {
        return Err(Error::InvalidParam(
            "ratio scores need a base corpus".into(),
        ));
    }
    let bits = token_bits(vocab_size);
    let mut counts: HashMap<u128, u64> = HashMap::new();
    for doc in &dataset.documents {
        if doc.len() < gram_len {
            continue;
        }
        for w in doc.windows(gram_len) {
            let key = pack_tokens(w, bits)
                .ok_or_else(|| Error::InvalidParam("gram does not fit packed key".into()))?;
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    let (base_counts, lambda) = match (mode, base) {
        (KnowledgeMode::RatioScore, Some(base_docs)) => {
            let mut bc: HashMap<u128, u64> = HashMap::new();
            let mut base_tokens = 0usize;
            for doc in base_docs {
                base_tokens += doc.len();
                if doc.len() < gram_len {
                    continue;
                }
                for w in doc.windows(gram_len) {
                    let key = pack_tokens(w, bits)
                        .ok_or_else(|| Error::InvalidParam("gram does not fit packed key".into()))?;
                    *bc.entry(key).or_insert(0) += 1;
                }
            }
            let lambda = dataset.total_tokens as f64 / (base_tokens.max(1)) as f64;
            (bc, lambda)
        }
        _ => (HashMap::new(), 0.0),
    };

    let mut map: HashMap<u128, Vec<(TokenId, f64)>> = HashMap::new();
    let mut n_grams = 0usize;
    for (&key, &c) in &counts {
        let gram = unpack_tokens(key, bits);
        let (ctx, token) = (&gram[..gram_len - 1], gram[gram_len - 1]);
        let score = match mode {
            KnowledgeMode::Indicator => 1.0,
            KnowledgeMode::Frequency => c as f64,
            KnowledgeMode::RatioScore => {
                let cb = base_counts.get(&key).copied().unwrap_or(0) as f64;
                ratio_score(c as f64, lambda * cb, RATIO_EPS)
            }
        };
        let ctx_key = pack_tokens(ctx, bits).expect("context fits");
        map.entry(ctx_key).or_default().push((token, score));
        n_grams += 1;
    }
    for list in map.values_mut() {
        list.sort_unstable_by_key(|&(t, _)| t);
    }
    Ok(KnowledgeTable {
        mode,
        gram_len,
        bits,
        vocab_size,
        map,
        n_grams,
    })
}

/// A ready-to-generate spoofer: learned knowledge plus, for distillation,
/// the model trained on the dataset.
#[derive(Clone)]
pub struct Spoofer {
    pub cfg: SpooferConfig,
    pub knowledge: KnowledgeTable,
    distilled: Option<MarkovLM>,
    colorer: Option<FrozenColorer>,
}

impl Spoofer {
    pub fn learn(
        dataset: &SpoofDataset,
        cfg: SpooferConfig,
        base: Option<&[TokenSeq]>,
        vocab_size: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let knowledge = learn_knowledge(dataset, &cfg, base, vocab_size)?;
        Self::from_knowledge(knowledge, cfg)
    }

    /// Assemble from an existing table; the distilled model is rebuilt from
    /// the table's gram counts.
    pub fn from_knowledge(knowledge: KnowledgeTable, cfg: SpooferConfig) -> Result<Self> {
        cfg.validate()?;
        let distilled = if cfg.kind == SpooferKind::Distill {
            let grams: Vec<(Vec<TokenId>, f64)> = knowledge.iter_grams().collect();
            if grams.is_empty() {
                return Err(Error::EmptyDataset);
            }
            Some(markov_from_ngram_counts(
                grams.iter().map(|(g, c)| (g.as_slice(), (*c).max(1.0) as u64)),
                knowledge.vocab_size,
                cfg.distill_alpha,
            )?)
        } else {
            None
        };
        let colorer = cfg.oracle_params.map(FrozenColorer::new);
        Ok(Self {
            cfg,
            knowledge,
            distilled,
            colorer,
        })
    }

    /// Generate a spoofed continuation. Oracle and Stealing bias the
    /// auxiliary model's logits on known grams only; Distill samples the
    /// distilled model and ignores `aux_lm`.
    pub fn generate(
        &self,
        aux_lm: &MarkovLM,
        prompt: &[TokenId],
        length: usize,
        rng: &mut RngStream,
    ) -> Result<TokenSeq> {
        if length == 0 {
            return Err(Error::InvalidParam("generation length must be >= 1".into()));
        }
        if self.cfg.kind == SpooferKind::Distill {
            let model = self.distilled.as_ref().expect("distilled model present");
            return Ok(crate::lm::generate_text(model, prompt, length, rng));
        }
        if prompt.len() < self.cfg.assumed_h {
            return Err(Error::ContextLength {
                expected: self.cfg.assumed_h,
                got: prompt.len(),
            });
        }
        let vocab = aux_lm.vocab_size();
        let h = self.cfg.assumed_h;
        let beta = self.cfg.boost;
        let boost = beta.exp();
        let mut history: Vec<TokenId> = prompt.to_vec();
        let mut out = TokenSeq::new();
        let mut dist = NextDist::default();
        let mut scratch = SampleScratch::default();
        let mut merged: Vec<(TokenId, f64)> = Vec::new();
        for _ in 0..length {
            aux_lm.next_dist(&history, &mut dist);
            let ctx = &history[history.len() - h..];
            let known = if beta == 0.0 {
                None
            } else {
                self.knowledge.continuations(ctx)
            };
            let token = match known {
                // No knowledge or zero boost: exactly the auxiliary model.
                None | Some(&[]) => pooled_sample(
                    vocab,
                    dist.base,
                    &dist.entries,
                    None,
                    &mut scratch,
                    rng,
                ),
                Some(list) => {
                    merged.clear();
                    let mult = |token: TokenId, score: f64| -> f64 {
                        match self.cfg.kind {
                            SpooferKind::Oracle => {
                                let colorer = self.colorer.as_ref().expect("oracle params");
                                let true_h = colorer.params().h;
                                let true_ctx = &history[history.len() - true_h..];
                                if colorer.color(true_ctx, token).expect("valid context") {
                                    boost
                                } else {
                                    1.0
                                }
                            }
                            SpooferKind::Stealing => (beta * score).exp(),
                            SpooferKind::Distill => unreachable!(),
                        }
                    };
                    // merge the model's sparse entries with the known list
                    let (mut i, mut j) = (0usize, 0usize);
                    while i < dist.entries.len() || j < list.len() {
                        let next_entry = dist.entries.get(i).map(|&(t, _)| t);
                        let next_known = list.get(j).map(|&(t, _)| t);
                        match (next_entry, next_known) {
                            (Some(te), Some(tk)) if te == tk => {
                                merged.push((te, dist.entries[i].1 * mult(te, list[j].1)));
                                i += 1;
                                j += 1;
                            }
                            (Some(te), Some(tk)) if te < tk => {
                                merged.push((te, dist.entries[i].1));
                                i += 1;
                            }
                            (Some(te), None) => {
                                merged.push((te, dist.entries[i].1));
                                i += 1;
                            }
                            (_, Some(tk)) => {
                                merged.push((tk, dist.base * mult(tk, list[j].1)));
                                j += 1;
                            }
                            (None, None) => unreachable!(),
                        }
                    }
                    pooled_sample(vocab, dist.base, &merged, None, &mut scratch, rng)
                }
            };
            history.push(token);
            out.push(token);
        }
        Ok(out)
    }
}

/// One-shot spoofed generation from a knowledge table. Distill mode rebuilds
/// its model per call; long-running experiments should hold a [`Spoofer`].
pub fn spoof_generate(
    aux_lm: &MarkovLM,
    knowledge: &KnowledgeTable,
    cfg: &SpooferConfig,
    prompt: &[TokenId],
    length: usize,
    rng: &mut RngStream,
) -> Result<TokenSeq> {
    let spoofer = Spoofer::from_knowledge(knowledge.clone(), cfg.clone())?;
    spoofer.generate(aux_lm, prompt, length, rng)
}

/// Fraction of texts the watermark detector flags.
pub fn spoof_success_rate(params: &RedGreenParams, texts: &[TokenSeq]) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut hits = 0usize;
    for text in texts {
        if detect_z(params, text)?.watermarked {
            hits += 1;
        }
    }
    Ok(hits as f64 / texts.len() as f64)
}

/// Persist a dataset in the corpus line format plus a `<path>.meta` sidecar
/// of key=value pairs.
pub fn save_dataset(
    dataset: &SpoofDataset,
    vocab: &Vocabulary,
    path: &Path,
    meta: &[(String, String)],
) -> Result<()> {
    crate::lm::save_corpus(&dataset.documents, vocab, path)?;
    let mut sidecar = path.as_os_str().to_os_string();
    sidecar.push(".meta");
    let mut out = std::io::BufWriter::new(std::fs::File::create(sidecar)?);
    writeln!(out, "n_docs={}", dataset.documents.len())?;
    writeln!(out, "total_tokens={}", dataset.total_tokens)?;
    for (k, v) in meta {
        writeln!(out, "{k}={v}")?;
    }
    Ok(())
}

/// Load a dataset saved by [`save_dataset`]; returns the documents and the
/// sidecar pairs.
pub fn load_dataset(
    path: &Path,
    vocab: Vocabulary,
) -> Result<(SpoofDataset, Vec<(String, String)>)> {
    let corpus = crate::lm::ingest_corpus(path, Some(vocab))?;
    let total_tokens = corpus.total_tokens();
    let mut sidecar = path.as_os_str().to_os_string();
    sidecar.push(".meta");
    let mut meta = Vec::new();
    if let Ok(file) = std::fs::File::open(&sidecar) {
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            if let Some((k, v)) = line.split_once('=') {
                meta.push((k.to_string(), v.to_string()));
            }
        }
    }
    Ok((
        SpoofDataset {
            documents: corpus.documents,
            total_tokens,
        },
        meta,
    ))
}
