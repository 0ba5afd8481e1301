//! Flat key=value experiment configuration.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::spoofer::SpooferKind;
use crate::spooftest::{Sidedness, TestMethod};
use crate::watermark::{DedupMode, HashVariant};

/// Which watermarking scheme an experiment runs against.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Scheme {
    RedGreen,
    Aar,
    Kth,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scheme::RedGreen => write!(f, "redgreen"),
            Scheme::Aar => write!(f, "aar"),
            Scheme::Kth => write!(f, "kth"),
        }
    }
}

/// Which defender score sequence the test uses.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ScoreKind {
    Unigram,
    Ngram,
}

impl std::fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScoreKind::Unigram => write!(f, "unigram"),
            ScoreKind::Ngram => write!(f, "ngram"),
        }
    }
}

/// Everything an experiment needs: scheme parameters, the toy LM and corpus
/// spec, the spoofer, the test, and the trial grids.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,

    pub scheme: Scheme,
    pub h: usize,
    pub gamma: f64,
    pub delta: f64,
    pub rho: f64,
    pub variant: HashVariant,
    pub key: u64,
    pub kth_n_key: usize,
    pub kth_shifts: usize,
    /// Pseudo-context length for KTH scoring and dedup.
    pub kth_pseudo_h: usize,

    /// Corpus file to ingest; when absent a synthetic corpus is generated.
    pub corpus_path: Option<PathBuf>,
    pub vocab_size: usize,
    /// Markov order of the provider model; 0 means h + 1.
    pub lm_order: usize,
    pub lm_alpha: f64,
    pub lm_tau: f64,
    pub corpus_docs: usize,
    pub corpus_doc_len: usize,
    pub corpus_order: usize,
    pub corpus_branching: usize,
    pub corpus_zipf: f64,

    pub spoofer: SpooferKind,
    pub boost: f64,
    pub d_docs: usize,
    pub d_doc_len: usize,
    pub distill_order: usize,
    pub distill_alpha: f64,

    pub method: TestMethod,
    pub score: ScoreKind,
    pub sidedness: Sidedness,
    pub dedup: DedupMode,
    pub c: usize,
    pub segment_len: usize,

    pub t_grid: Vec<usize>,
    pub alphas: Vec<f64>,
    pub trials: usize,
    /// Budget mode: when set, trials per T become `token_budget / T`.
    pub token_budget: Option<usize>,

    pub noise_grid: Vec<f64>,
    pub size_factors: Vec<usize>,
    pub human_mix: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            scheme: Scheme::RedGreen,
            h: 2,
            gamma: 0.25,
            delta: 2.0,
            rho: 4.0,
            variant: HashVariant::SumHash,
            key: 0x05EC_2E7B_EEF5_EED5,
            kth_n_key: 256,
            kth_shifts: 256,
            kth_pseudo_h: 5,
            corpus_path: None,
            vocab_size: 256,
            lm_order: 0,
            lm_alpha: 0.05,
            lm_tau: 1.0,
            corpus_docs: 3000,
            corpus_doc_len: 300,
            corpus_order: 2,
            corpus_branching: 24,
            corpus_zipf: 1.1,
            spoofer: SpooferKind::Stealing,
            boost: 4.0,
            d_docs: 2400,
            d_doc_len: 250,
            distill_order: 0,
            distill_alpha: 0.05,
            method: TestMethod::Reprompting,
            score: ScoreKind::Ngram,
            sidedness: Sidedness::TwoSided,
            dedup: DedupMode::Context,
            c: 25,
            segment_len: 250,
            t_grid: vec![500, 1000, 2000, 3000],
            alphas: vec![0.01, 0.05, 0.1],
            trials: 200,
            token_budget: None,
            noise_grid: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            size_factors: vec![1, 3, 9],
            human_mix: vec![0.01, 0.05, 0.1, 0.2],
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value for {key}: {value}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s.trim()))
        .collect()
}

impl ExperimentConfig {
    /// Effective provider-model order.
    pub fn effective_lm_order(&self) -> usize {
        if self.lm_order == 0 {
            self.h + 1
        } else {
            self.lm_order
        }
    }

    pub fn effective_distill_order(&self) -> usize {
        if self.distill_order == 0 {
            self.h
        } else {
            self.distill_order
        }
    }

    /// Trials for one T: fixed trials-mode by default, token-budget mode
    /// when a budget is configured.
    pub fn trials_for(&self, t: usize) -> usize {
        match self.token_budget {
            Some(budget) => (budget / t.max(1)).max(50),
            None => self.trials,
        }
    }

    /// Apply one key=value assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "scheme" => {
                self.scheme = match value {
                    "redgreen" => Scheme::RedGreen,
                    "aar" => Scheme::Aar,
                    "kth" => Scheme::Kth,
                    _ => return Err(Error::InvalidConfig(format!("unknown scheme {value}"))),
                }
            }
            "h" => self.h = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "variant" => {
                self.variant = match value {
                    "sum" | "sumhash" => HashVariant::SumHash,
                    "self" | "selfhash" => HashVariant::SelfHash,
                    _ => return Err(Error::InvalidConfig(format!("unknown variant {value}"))),
                }
            }
            "key" => self.key = parse(key, value)?,
            "kth_n_key" => self.kth_n_key = parse(key, value)?,
            "kth_shifts" => self.kth_shifts = parse(key, value)?,
            "kth_pseudo_h" => self.kth_pseudo_h = parse(key, value)?,
            "corpus_path" => self.corpus_path = Some(PathBuf::from(value)),
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "lm_order" => self.lm_order = parse(key, value)?,
            "lm_alpha" => self.lm_alpha = parse(key, value)?,
            "lm_tau" => self.lm_tau = parse(key, value)?,
            "corpus_docs" => self.corpus_docs = parse(key, value)?,
            "corpus_doc_len" => self.corpus_doc_len = parse(key, value)?,
            "corpus_order" => self.corpus_order = parse(key, value)?,
            "corpus_branching" => self.corpus_branching = parse(key, value)?,
            "corpus_zipf" => self.corpus_zipf = parse(key, value)?,
            "spoofer" => {
                self.spoofer = match value {
                    "oracle" => SpooferKind::Oracle,
                    "stealing" => SpooferKind::Stealing,
                    "distill" => SpooferKind::Distill,
                    _ => return Err(Error::InvalidConfig(format!("unknown spoofer {value}"))),
                }
            }
            "boost" => self.boost = parse(key, value)?,
            "d_docs" => self.d_docs = parse(key, value)?,
            "d_doc_len" => self.d_doc_len = parse(key, value)?,
            "distill_order" => self.distill_order = parse(key, value)?,
            "distill_alpha" => self.distill_alpha = parse(key, value)?,
            "method" => {
                self.method = match value {
                    "standard" => TestMethod::Standard,
                    "reprompt" | "reprompting" => TestMethod::Reprompting,
                    _ => return Err(Error::InvalidConfig(format!("unknown method {value}"))),
                }
            }
            "score" => {
                self.score = match value {
                    "unigram" => ScoreKind::Unigram,
                    "ngram" => ScoreKind::Ngram,
                    _ => return Err(Error::InvalidConfig(format!("unknown score {value}"))),
                }
            }
            "sidedness" => {
                self.sidedness = match value {
                    "two" | "two-sided" => Sidedness::TwoSided,
                    "right" | "right-tail" => Sidedness::RightTail,
                    _ => return Err(Error::InvalidConfig(format!("unknown sidedness {value}"))),
                }
            }
            "dedup" => {
                self.dedup = match value {
                    "context" => DedupMode::Context,
                    "ngram" => DedupMode::Ngram,
                    _ => return Err(Error::InvalidConfig(format!("unknown dedup {value}"))),
                }
            }
            "c" => self.c = parse(key, value)?,
            "segment_len" => self.segment_len = parse(key, value)?,
            "t_grid" => self.t_grid = parse_list(key, value)?,
            "alphas" => self.alphas = parse_list(key, value)?,
            "trials" => self.trials = parse(key, value)?,
            "token_budget" => self.token_budget = Some(parse(key, value)?),
            "noise_grid" => self.noise_grid = parse_list(key, value)?,
            "size_factors" => self.size_factors = parse_list(key, value)?,
            "human_mix" => self.human_mix = parse_list(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Parse a flat key=value file; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let body = std::fs::read_to_string(path)?;
        cfg.apply_str(&body)?;
        Ok(cfg)
    }

    pub fn apply_str(&mut self, body: &str) -> Result<()> {
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_grid.is_empty() || self.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("t_grid must be ascending".into()));
        }
        if self.trials < 1 {
            return Err(Error::InvalidConfig("trials must be >= 1".into()));
        }
        if self.c < self.h {
            return Err(Error::InvalidConfig(
                "prefix length c must be >= h so prefixes can prompt the model".into(),
            ));
        }
        if self.segment_len <= self.c {
            return Err(Error::InvalidConfig(
                "segment_len must exceed the prefix length c".into(),
            ));
        }
        Ok(())
    }

    /// Config echo for the run manifest, one key per line.
    pub fn manifest_string(&self) -> String {
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        push("seed", self.seed.to_string());
        push("out_dir", self.out_dir.display().to_string());
        push("scheme", self.scheme.to_string());
        push("h", self.h.to_string());
        push("gamma", self.gamma.to_string());
        push("delta", self.delta.to_string());
        push("rho", self.rho.to_string());
        push(
            "variant",
            match self.variant {
                HashVariant::SumHash => "sumhash".into(),
                HashVariant::SelfHash => "selfhash".into(),
            },
        );
        push("key", self.key.to_string());
        push("kth_n_key", self.kth_n_key.to_string());
        push("kth_shifts", self.kth_shifts.to_string());
        push("kth_pseudo_h", self.kth_pseudo_h.to_string());
        push(
            "corpus_path",
            self.corpus_path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_else(|| "<synthetic>".into()),
        );
        push("vocab_size", self.vocab_size.to_string());
        push("lm_order", self.effective_lm_order().to_string());
        push("lm_alpha", self.lm_alpha.to_string());
        push("lm_tau", self.lm_tau.to_string());
        push("corpus_docs", self.corpus_docs.to_string());
        push("corpus_doc_len", self.corpus_doc_len.to_string());
        push("corpus_order", self.corpus_order.to_string());
        push("corpus_branching", self.corpus_branching.to_string());
        push("corpus_zipf", self.corpus_zipf.to_string());
        push("spoofer", self.spoofer.to_string());
        push("boost", self.boost.to_string());
        push("d_docs", self.d_docs.to_string());
        push("d_doc_len", self.d_doc_len.to_string());
        push("distill_order", self.effective_distill_order().to_string());
        push("distill_alpha", self.distill_alpha.to_string());
        push("method", self.method.to_string());
        push("score", self.score.to_string());
        push(
            "sidedness",
            match self.sidedness {
                Sidedness::TwoSided => "two-sided".into(),
                Sidedness::RightTail => "right-tail".into(),
            },
        );
        push(
            "dedup",
            match self.dedup {
                DedupMode::Context => "context".into(),
                DedupMode::Ngram => "ngram".into(),
            },
        );
        push("c", self.c.to_string());
        push("segment_len", self.segment_len.to_string());
        push(
            "t_grid",
            self.t_grid
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push(
            "alphas",
            self.alphas
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        push("trials", self.trials.to_string());
        push(
            "token_budget",
            self.token_budget
                .map(|b| b.to_string())
                .unwrap_or_else(|| "none".into()),
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_assignments_and_rejects_unknown_keys() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_str("h = 3\ntrials=50\n# comment\nt_grid = 100, 200\nsegment_len=99\nc=25\n")
            .unwrap();
        assert_eq!(cfg.h, 3);
        assert_eq!(cfg.trials, 50);
        assert_eq!(cfg.t_grid, vec![100, 200]);
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_str("unknown_key=1\n").is_err());
    }

    #[test]
    fn rejects_descending_t_grid() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_str("t_grid=1000,500\n").is_err());
    }

    #[test]
    fn rejects_zero_trials() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_str("trials=0\n").is_err());
    }

    #[test]
    fn budget_mode_scales_trials() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_str("token_budget=1000000\n").unwrap();
        assert_eq!(cfg.trials_for(500), 2000);
        assert_eq!(cfg.trials_for(2000), 500);
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.trials_for(500), cfg.trials);
    }

    #[test]
    fn manifest_echo_is_deterministic() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.manifest_string(), cfg.manifest_string());
        assert!(cfg.manifest_string().contains("gamma=0.25"));
    }
}
