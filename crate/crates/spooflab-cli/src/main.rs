//! Command-line front end: corpus and model utilities, watermark generation
//! and detection, spoofing simulation, the spoofing-discovery test, and the
//! experiment suite.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use spooflab::core::{RngStream, TokenSeq, WatermarkKey};
use spooflab::harness::config::ExperimentConfig;
use spooflab::harness::experiments::{
    run_dataset_size_ablation, run_dtilde_ablation, run_fpr_curve, run_normality, run_power,
    run_shuffle_check, ExperimentWorld,
};
use spooflab::lm::{
    entropy, ingest_corpus, save_corpus, softmax, synthetic_corpus, train_markov, SyntheticSpec,
    Vocabulary,
};
use spooflab::spoofer::{
    build_dataset, load_dataset, save_dataset, Spoofer, SpooferConfig, SpooferKind,
};
use spooflab::spooftest::{
    build_frequency_table, ngram_score, reprompt_test, standard_test, unigram_score, concatenate,
    FrequencyKind, Sidedness, TestMethod, TestReport,
};
use spooflab::watermark::{color_trace, detect_z, generate_watermarked, HashVariant, RedGreenParams};

#[derive(Parser)]
#[command(
    name = "spooflab",
    about = "Watermark forensics lab: generate, spoof, detect, and discover spoofing",
    version
)]
struct Cli {
    /// Master seed for all randomness.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Experiment configuration file (flat key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for experiment artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct WatermarkArgs {
    /// Watermark context size.
    #[arg(long, default_value_t = 2)]
    h: usize,
    /// Greenlist fraction.
    #[arg(long, default_value_t = 0.25)]
    gamma: f64,
    /// Green logit boost.
    #[arg(long, default_value_t = 2.0)]
    delta: f64,
    /// Detector threshold.
    #[arg(long, default_value_t = 4.0)]
    rho: f64,
    /// Private watermark key.
    #[arg(long, default_value_t = 0x05EC_2E7B_EEF5_EED5)]
    key: u64,
    /// Hash variant: sum or self.
    #[arg(long, default_value = "sum")]
    variant: String,
    /// Vocabulary size (token ids are `w0..w{n-1}` plus `<unk>` at 0).
    #[arg(long, default_value_t = 256)]
    vocab_size: usize,
}

impl WatermarkArgs {
    fn params(&self) -> anyhow::Result<RedGreenParams> {
        let variant = match self.variant.as_str() {
            "sum" | "sumhash" => HashVariant::SumHash,
            "self" | "selfhash" => HashVariant::SelfHash,
            other => bail!("unknown hash variant: {other}"),
        };
        Ok(RedGreenParams {
            h: self.h,
            gamma: self.gamma,
            delta: self.delta,
            rho: self.rho,
            variant,
            key: WatermarkKey(self.key),
            vocab_size: self.vocab_size,
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus file (one document per line).
    GenCorpus {
        /// Output corpus path.
        file: PathBuf,
        #[arg(long, default_value_t = 256)]
        vocab_size: usize,
        #[arg(long, default_value_t = 1000)]
        docs: usize,
        #[arg(long, default_value_t = 300)]
        doc_len: usize,
        /// Context length of the hidden transition structure.
        #[arg(long, default_value_t = 2)]
        order: usize,
        /// Maximum per-context branching.
        #[arg(long, default_value_t = 24)]
        branching: usize,
        /// Zipf exponent over continuations.
        #[arg(long, default_value_t = 1.1)]
        zipf: f64,
    },
    /// Train a Markov model on a corpus and print summary statistics.
    TrainLm {
        corpus: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
    /// Generate watermarked completions of corpus prompts.
    WatermarkGen {
        /// Training/prompt corpus.
        corpus: PathBuf,
        /// Output file of watermarked documents.
        file: PathBuf,
        #[command(flatten)]
        wm: WatermarkArgs,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 400)]
        len: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
    },
    /// Query the watermarked model to build a spoofer training dataset.
    SpoofBuild {
        corpus: PathBuf,
        /// Output dataset path (sidecar metadata at <path>.meta).
        file: PathBuf,
        #[command(flatten)]
        wm: WatermarkArgs,
        #[arg(long, default_value_t = 400)]
        n_docs: usize,
        #[arg(long, default_value_t = 250)]
        doc_len: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Learn a spoofer from a dataset and generate spoofed documents.
    SpoofGen {
        /// Spoofer training dataset (from spoof-build).
        dataset: PathBuf,
        /// Corpus for the auxiliary model (and ratio-score base).
        corpus: PathBuf,
        /// Output file of spoofed documents.
        file: PathBuf,
        /// oracle, stealing, or distill.
        #[arg(long, default_value = "stealing")]
        kind: String,
        #[arg(long, default_value_t = 4.0)]
        boost: f64,
        #[command(flatten)]
        wm: WatermarkArgs,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 400)]
        len: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Run the watermark detector on each document of a file.
    Detect {
        file: PathBuf,
        #[command(flatten)]
        wm: WatermarkArgs,
    },
    /// Run the spoofing-discovery test on a file of documents (treated as
    /// one source and concatenated).
    Spooftest {
        file: PathBuf,
        /// Reference corpus standing in for the spoofer's training data.
        ref_corpus: PathBuf,
        /// standard or reprompting.
        #[arg(long, default_value = "reprompting")]
        method: String,
        /// ngram or unigram.
        #[arg(long, default_value = "ngram")]
        score: String,
        #[command(flatten)]
        wm: WatermarkArgs,
        /// Reprompting prefix length.
        #[arg(long, default_value_t = 25)]
        c: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Run a named experiment: normality, dependence, fpr-curve, human-mix,
    /// power, shuffle-check, dtilde-ablation, dataset-size-ablation.
    Experiment { name: String },
    /// Fast self-checks of the statistical machinery.
    Validate,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message (help/version exit cleanly)
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    cfg.seed = cli.seed;
    cfg.out_dir = cli.out.clone();
    Ok(cfg)
}

fn frozen_vocab(size: usize) -> Vocabulary {
    Vocabulary::synthetic(size)
}

/// Frozen ingestion maps unrecognized token strings to `<unk>`; a corpus
/// that mostly collapses that way does not match the synthetic vocabulary.
fn check_unk_fraction(c: &spooflab::lm::Corpus) -> anyhow::Result<()> {
    let unk = c
        .documents
        .iter()
        .flat_map(|d| d.tokens())
        .filter(|t| **t == spooflab::lm::UNK)
        .count();
    let total = c.total_tokens().max(1);
    if unk * 2 > total {
        bail!(
            "{} of {} tokens fell outside the synthetic vocabulary;              regenerate the corpus with gen-corpus or pass a matching --vocab-size",
            unk,
            total
        );
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match &cli.cmd {
        Cmd::GenCorpus {
            file,
            vocab_size,
            docs,
            doc_len,
            order,
            branching,
            zipf,
        } => {
            let corpus = synthetic_corpus(&SyntheticSpec {
                vocab_size: *vocab_size,
                n_docs: *docs,
                doc_len: *doc_len,
                order: *order,
                max_branching: *branching,
                zipf: *zipf,
                seed: cli.seed,
            });
            save_corpus(&corpus.documents, &corpus.vocab, file)?;
            println!(
                "wrote {} documents ({} tokens, vocab {}) to {}",
                corpus.documents.len(),
                corpus.total_tokens(),
                corpus.vocab.len(),
                file.display()
            );
        }
        Cmd::TrainLm {
            corpus,
            k,
            alpha,
            tau,
        } => {
            let c = ingest_corpus(corpus, None)?;
            let mut lm = train_markov(&c, *k, *alpha)?;
            lm.set_temperature(*tau);
            let mut h = 0.0;
            let mut n = 0usize;
            for doc in c.documents.iter().take(20) {
                for t in *k..doc.len().min(50) {
                    h += entropy(&softmax(&lm.logits(&doc[..t])));
                    n += 1;
                }
            }
            println!(
                "trained order-{k} model: vocab {}, {} documents, {} tokens, mean step entropy {:.3} nats (tau {tau})",
                c.vocab.len(),
                c.documents.len(),
                c.total_tokens(),
                h / n.max(1) as f64
            );
        }
        Cmd::WatermarkGen {
            corpus,
            file,
            wm,
            n,
            len,
            k,
            alpha,
            tau,
        } => {
            let vocab = frozen_vocab(wm.vocab_size);
            let c = ingest_corpus(corpus, Some(vocab))?;
            check_unk_fraction(&c)?;
            let mut lm = train_markov(&c, *k, *alpha)?;
            lm.set_temperature(*tau);
            let params = wm.params()?;
            let mut rng = RngStream::new(cli.seed, 0);
            let mut docs = Vec::with_capacity(*n);
            for i in 0..*n {
                let prompt = prompt_from(&c.documents, params.h.max(*k) + 1, i);
                docs.push(generate_watermarked(&lm, &params, &prompt, *len, &mut rng)?);
            }
            save_corpus(&docs, &c.vocab, file)?;
            println!("wrote {n} watermarked documents of {len} tokens to {}", file.display());
        }
        Cmd::SpoofBuild {
            corpus,
            file,
            wm,
            n_docs,
            doc_len,
            k,
            alpha,
        } => {
            let vocab = frozen_vocab(wm.vocab_size);
            let c = ingest_corpus(corpus, Some(vocab))?;
            check_unk_fraction(&c)?;
            let lm = train_markov(&c, *k, *alpha)?;
            let params = wm.params()?;
            let prompts: Vec<TokenSeq> = (0..64)
                .map(|i| prompt_from(&c.documents, params.h.max(*k) + 1, i))
                .collect();
            let mut rng = RngStream::new(cli.seed, 1);
            let ds = build_dataset(&lm, &params, &prompts, *n_docs, *doc_len, &mut rng)?;
            save_dataset(
                &ds,
                &c.vocab,
                file,
                &[
                    ("seed".into(), cli.seed.to_string()),
                    ("h".into(), params.h.to_string()),
                    ("gamma".into(), params.gamma.to_string()),
                    ("delta".into(), params.delta.to_string()),
                ],
            )?;
            println!(
                "built spoofer dataset: {} documents, {} tokens -> {}",
                ds.documents.len(),
                ds.total_tokens,
                file.display()
            );
        }
        Cmd::SpoofGen {
            dataset,
            corpus,
            file,
            kind,
            boost,
            wm,
            n,
            len,
            k,
            alpha,
        } => {
            let vocab = frozen_vocab(wm.vocab_size);
            let c = ingest_corpus(corpus, Some(vocab.clone()))?;
            check_unk_fraction(&c)?;
            let aux = train_markov(&c, *k, *alpha)?;
            let (ds, _meta) = load_dataset(dataset, vocab)?;
            let params = wm.params()?;
            let cfg = match kind.as_str() {
                "oracle" => SpooferConfig::oracle(params, *boost),
                "stealing" => SpooferConfig::stealing(params.h, *boost),
                "distill" => SpooferConfig::distill(params.h, params.h),
                other => bail!("unknown spoofer kind: {other}"),
            };
            let base: Option<&[TokenSeq]> = match cfg.kind {
                SpooferKind::Stealing => Some(&c.documents),
                _ => None,
            };
            let spoofer = Spoofer::learn(&ds, cfg, base, wm.vocab_size)?;
            let mut rng = RngStream::new(cli.seed, 2);
            let mut docs = Vec::with_capacity(*n);
            for i in 0..*n {
                let prompt = prompt_from(&c.documents, params.h.max(*k) + 1, i);
                docs.push(spoofer.generate(&aux, &prompt, *len, &mut rng)?);
            }
            save_corpus(&docs, &c.vocab, file)?;
            println!("wrote {n} spoofed documents of {len} tokens to {}", file.display());
        }
        Cmd::Detect { file, wm } => {
            let vocab = frozen_vocab(wm.vocab_size);
            let c = ingest_corpus(file, Some(vocab))?;
            let params = wm.params()?;
            let mut flagged = 0usize;
            for (i, doc) in c.documents.iter().enumerate() {
                let rep = detect_z(&params, doc)?;
                if rep.watermarked {
                    flagged += 1;
                }
                println!(
                    "doc {i}: z={:.4} n_green={} n_kept={} watermarked={}",
                    rep.z, rep.n_green, rep.n_kept, rep.watermarked
                );
            }
            println!("{flagged}/{} documents watermarked", c.documents.len());
        }
        Cmd::Spooftest {
            file,
            ref_corpus,
            method,
            score,
            wm,
            c,
            k,
            alpha,
        } => {
            let vocab = frozen_vocab(wm.vocab_size);
            let reference = ingest_corpus(ref_corpus, Some(vocab.clone()))?;
            let texts = ingest_corpus(file, Some(vocab))?;
            let params = wm.params()?;
            let lm = train_markov(&reference, *k, *alpha)?;
            let ngram_table = build_frequency_table(
                &reference.documents,
                wm.vocab_size,
                FrequencyKind::UnorderedNgram { h: params.h },
            )?;
            let unigram_table = build_frequency_table(
                &reference.documents,
                wm.vocab_size,
                FrequencyKind::Unigram,
            )?;
            let score_fn = |text: &[spooflab::core::TokenId]| match score.as_str() {
                "ngram" => ngram_score(&ngram_table, text, params.h),
                _ => unigram_score(&unigram_table, text, params.h),
            };
            let report: TestReport = match method.as_str() {
                "standard" => {
                    let pairs: spooflab::Result<Vec<_>> = texts
                        .documents
                        .iter()
                        .map(|d| Ok((color_trace(&params, d)?, score_fn(d)?)))
                        .collect();
                    let (trace, sc) = concatenate(&pairs?)?;
                    standard_test(&trace, &sc, Sidedness::TwoSided)?
                }
                "reprompting" | "reprompt" => {
                    let mut rng = RngStream::new(cli.seed, 3);
                    let regen: spooflab::Result<Vec<_>> = texts
                        .documents
                        .iter()
                        .map(|d| {
                            generate_watermarked(&lm, &params, &d[..*c], d.len() - *c, &mut rng)
                        })
                        .collect();
                    reprompt_test(
                        &texts.documents,
                        &regen?,
                        *c,
                        |t| color_trace(&params, t),
                        score_fn,
                        Sidedness::TwoSided,
                    )?
                }
                other => bail!("unknown method: {other}"),
            };
            let t_total: usize = texts.documents.iter().map(|d| d.len()).sum();
            println!(
                "method={} S={:.4} z={:.4} p={:.6e} n_kept={}",
                report.method, report.s, report.z, report.p_value, report.n_kept
            );
            std::fs::create_dir_all(&cli.out)?;
            let csv_path = cli.out.join("spooftest.csv");
            let header_needed = !csv_path.exists();
            let mut row = String::new();
            if header_needed {
                row.push_str(TestReport::csv_header());
                row.push('\n');
            }
            row.push_str(&report.csv_row("redgreen", params.h, t_total, cli.seed, "unknown"));
            row.push('\n');
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&csv_path)
                .and_then(|mut f| std::io::Write::write_all(&mut f, row.as_bytes()))?;
            println!("appended row to {}", csv_path.display());
        }
        Cmd::Experiment { name } => {
            let mut cfg = load_config(&cli)?;
            match name.as_str() {
                "normality" => {
                    let world = ExperimentWorld::build(cfg)?;
                    let rep = run_normality(&world)?;
                    println!(
                        "normality: ks_p={:.4e} dp_p={:.4e} mean_z={:.4} std_z={:.4}",
                        rep.ks.p_value, rep.dp.p_value, rep.mean_z, rep.std_z
                    );
                }
                "dependence" => {
                    // low-entropy variant exposing the model-induced offset
                    cfg.method = TestMethod::Standard;
                    cfg.score = spooflab::harness::config::ScoreKind::Ngram;
                    if cfg.lm_tau >= 1.0 {
                        cfg.lm_tau = 0.5;
                    }
                    let world = ExperimentWorld::build(cfg)?;
                    let rep = run_normality(&world)?;
                    println!(
                        "dependence: mean_z={:.4} (left-tail p={:.4e}), dp_p={:.4e}",
                        rep.mean_z, rep.left_tail_p, rep.dp.p_value
                    );
                }
                "fpr-curve" => {
                    let world = ExperimentWorld::build(cfg)?;
                    let rep = run_fpr_curve(&world, &[0.0])?;
                    println!(
                        "fpr-curve: {} curves, type-1 controlled = {}",
                        rep.curves.len(),
                        rep.all_controlled
                    );
                }
                "human-mix" => {
                    let mixes = cfg.human_mix.clone();
                    let world = ExperimentWorld::build(cfg)?;
                    let rep = run_fpr_curve(&world, &mixes)?;
                    println!(
                        "human-mix: {} curves, type-1 controlled = {}",
                        rep.curves.len(),
                        rep.all_controlled
                    );
                }
                "power" => {
                    let world = ExperimentWorld::build(cfg)?;
                    let rep = run_power(&world)?;
                    println!(
                        "power: detector pass rate {:.3}, mean-z sqrt(T) fit R2 {:.3}",
                        rep.detector_pass_rate, rep.sqrt_fit_r2
                    );
                    for (t, pts) in &rep.tpr {
                        let shown: Vec<String> = pts
                            .iter()
                            .map(|p| format!("tpr@{:.2}={:.3}", p.x, p.rate))
                            .collect();
                        println!("  t={t}: {}", shown.join(" "));
                    }
                }
                "shuffle-check" => {
                    let world = ExperimentWorld::build(cfg)?;
                    let rep = run_shuffle_check(&world)?;
                    println!(
                        "shuffle-check: watermarked MW p={:.4}, spoofed MW p={:.4}",
                        rep.watermarked.p_value, rep.spoofed.p_value
                    );
                }
                "dtilde-ablation" => {
                    let world = ExperimentWorld::build(cfg)?;
                    for pt in run_dtilde_ablation(&world)? {
                        println!(
                            "noise={} tv={:.4} median_p={:.4e} (n={})",
                            pt.noise, pt.tv_distance, pt.median_p, pt.n
                        );
                    }
                }
                "dataset-size-ablation" => {
                    let world = ExperimentWorld::build(cfg)?;
                    for pt in run_dataset_size_ablation(&world)? {
                        println!(
                            "factor={} tokens={} tpr@0.05={:.3} success={:.3}",
                            pt.factor, pt.d_tokens, pt.tpr.rate, pt.spoof_success
                        );
                    }
                }
                other => bail!(
                    "unknown experiment '{other}' (expected normality, dependence, fpr-curve, \
                     human-mix, power, shuffle-check, dtilde-ablation, dataset-size-ablation)"
                ),
            }
        }
        Cmd::Validate => validate()?,
    }
    Ok(())
}

fn prompt_from(docs: &[TokenSeq], len: usize, i: usize) -> TokenSeq {
    let doc = &docs[i % docs.len()];
    TokenSeq::from_tokens(doc[..len.min(doc.len())].to_vec())
}

/// Fast self-checks: detector arithmetic, rank-correlation oracle, interval
/// arithmetic, and mixer diffusion.
fn validate() -> anyhow::Result<()> {
    use spooflab::statkit;

    let z = spooflab::watermark::detector_z_value(40, 100, 0.25);
    check("detector z(100, 40, 0.25) = 3.4641", (z - 3.4641).abs() < 1e-4)?;

    let mut gen = spooflab::core::SplitMix64::new(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 5 + gen.next_below(30) as usize;
        let a: Vec<f64> = (0..n).map(|_| gen.next_below(10) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| gen.next_below(10) as f64).collect();
        let naive = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|&x| {
                    v.iter().filter(|&&y| y < x).count() as f64
                        + (v.iter().filter(|&&y| y == x).count() as f64 + 1.0) / 2.0
                })
                .collect()
        };
        if let (Ok(fast), Ok(oracle)) = (
            statkit::spearman_rho(&a, &b),
            statkit::pearson(&naive(&a), &naive(&b)),
        ) {
            worst = worst.max((fast - oracle).abs());
        }
    }
    check("spearman matches naive oracle (100 cases, 1e-12)", worst < 1e-12)?;

    let (lo, hi) = statkit::binomial_ci(50, 100, 0.95)?;
    check(
        "wilson interval 50/100 ~ (0.4038, 0.5962)",
        (lo - 0.4038).abs() < 5e-4 && (hi - 0.5962).abs() < 5e-4,
    )?;

    let mut total = 0u64;
    for i in 0..10_000u64 {
        let k = spooflab::core::WatermarkKey(spooflab::core::mix64(i));
        let d = spooflab::core::mix64(i ^ 0xABCD);
        let flipped = d ^ (1 << (i % 64));
        total += (spooflab::core::prf_hash(k, d) ^ spooflab::core::prf_hash(k, flipped))
            .count_ones() as u64;
    }
    let avalanche = total as f64 / 10_000.0;
    check(
        "prf avalanche in [24, 40]",
        (24.0..=40.0).contains(&avalanche),
    )?;

    println!("all self-checks passed");
    Ok(())
}

fn check(what: &str, ok: bool) -> anyhow::Result<()> {
    println!("{}: {}", what, if ok { "ok" } else { "FAIL" });
    if ok {
        Ok(())
    } else {
        bail!("self-check failed: {what}")
    }
}
