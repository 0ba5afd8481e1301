//! The experiment suite: normality validation, Type-1 error curves, power
//! against simulated spoofers, shuffle invariance, and the reference-corpus
//! and dataset-size ablations. Trials run data-parallel, each owning a
//! derived rng stream; aggregation is order-insensitive and reruns with the
//! same config and seed produce byte-identical CSVs.

use std::path::{Path, PathBuf};

use crate::altschemes::{
    aar_generate, aar_trace, exp_trace_z, kth_generate, kth_trace, AarParams, KthParams,
};
use crate::core::{mix64, RngStream, TokenId, TokenSeq, WatermarkKey};
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, Scheme, ScoreKind};
use crate::harness::{svg, trial_seed};
use crate::lm::{
    generate_text, ingest_corpus, synthetic_corpus, train_markov, Corpus, MarkovLM, SyntheticSpec,
};
use crate::parallel;
use crate::spoofer::{Spoofer, SpoofDataset, SpooferConfig, SpooferKind};
use crate::spooftest::{
    build_frequency_table, concatenate, ngram_score, ngram_score_with, reprompt_test,
    standard_test, unigram_score, FrequencyKind, FrequencyTable, ScoreSeq, TestMethod, TestReport,
};
use crate::statkit::{
    binomial_ci, dagostino_pearson, ks_test_std_normal, mann_whitney_u, normal_cdf, GofReport,
};
use crate::watermark::{
    color_trace_with, detect_from_trace, FrozenColorer, RedGreenParams, WatermarkTrace,
};

const EXP_CORPUS: u64 = 0x10;
const EXP_DATASET: u64 = 0x20;
const EXP_NORMALITY: u64 = 0x30;
const EXP_FPR: u64 = 0x40;
const EXP_POWER: u64 = 0x50;
const EXP_SHUFFLE: u64 = 0x60;
const EXP_DTILDE: u64 = 0x70;
const EXP_DSIZE: u64 = 0x80;

/// One point of a rate curve: `x` is the grid coordinate (alpha, T, TV
/// distance, or size factor depending on the experiment).
#[derive(Clone, Copy, Debug)]
pub struct CurvePoint {
    pub x: f64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

fn curve_point(x: f64, hits: usize, n: usize) -> Result<CurvePoint> {
    let (ci_low, ci_high) = binomial_ci(hits, n, 0.95)?;
    Ok(CurvePoint {
        x,
        rate: hits as f64 / n as f64,
        ci_low,
        ci_high,
        n,
    })
}

/// Everything shared by one experiment run: the corpus, the provider model,
/// the watermark parameters, and the defender's reference tables. Built once
/// and shared read-only across trial workers.
pub struct ExperimentWorld {
    pub cfg: ExperimentConfig,
    pub corpus: Corpus,
    pub lm: MarkovLM,
    pub rg: RedGreenParams,
    pub colorer: FrozenColorer,
    /// Context length used for scores and dedup (the scheme's h, or the
    /// configured pseudo-context for KTH).
    pub score_h: usize,
    pub ngram_table: FrequencyTable,
    pub unigram_table: FrequencyTable,
    prompt_len: usize,
}

impl ExperimentWorld {
    pub fn build(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let corpus = match &cfg.corpus_path {
            Some(path) => ingest_corpus(path, None)?,
            None => synthetic_corpus(&SyntheticSpec {
                vocab_size: cfg.vocab_size,
                n_docs: cfg.corpus_docs,
                doc_len: cfg.corpus_doc_len,
                order: cfg.corpus_order,
                max_branching: cfg.corpus_branching,
                zipf: cfg.corpus_zipf,
                seed: trial_seed(cfg.seed, EXP_CORPUS, 0),
            }),
        };
        let vocab_size = corpus.vocab.len();
        let mut lm = train_markov(&corpus, cfg.effective_lm_order(), cfg.lm_alpha)?;
        lm.set_temperature(cfg.lm_tau);
        let rg = RedGreenParams {
            h: cfg.h,
            gamma: cfg.gamma,
            delta: cfg.delta,
            rho: cfg.rho,
            variant: cfg.variant,
            key: WatermarkKey(cfg.key),
            vocab_size,
        };
        let colorer = FrozenColorer::new(rg);
        let score_h = match cfg.scheme {
            Scheme::Kth => cfg.kth_pseudo_h,
            _ => cfg.h,
        };
        let ngram_table = build_frequency_table(
            &corpus.documents,
            vocab_size,
            FrequencyKind::UnorderedNgram { h: score_h },
        )?;
        let unigram_table =
            build_frequency_table(&corpus.documents, vocab_size, FrequencyKind::Unigram)?;
        let prompt_len = cfg.h.max(cfg.effective_lm_order()).max(1) + 1;
        Ok(Self {
            cfg,
            corpus,
            lm,
            rg,
            colorer,
            score_h,
            ngram_table,
            unigram_table,
            prompt_len,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.corpus.vocab.len()
    }

    fn aar_params(&self) -> AarParams {
        AarParams::new(self.cfg.h, WatermarkKey(self.cfg.key), self.vocab_size())
    }

    fn kth_params(&self) -> KthParams {
        let mut p = KthParams::new(
            self.cfg.kth_n_key,
            self.cfg.kth_shifts,
            WatermarkKey(self.cfg.key),
            self.vocab_size(),
        );
        p.pseudo_h = self.cfg.kth_pseudo_h;
        p
    }

    /// A prompt sampled from the base corpus.
    pub fn prompt(&self, rng: &mut RngStream) -> TokenSeq {
        let doc = &self.corpus.documents[rng.next_below(self.corpus.documents.len() as u64) as usize];
        let max_off = doc.len().saturating_sub(self.prompt_len);
        let off = rng.next_below(max_off as u64 + 1) as usize;
        TokenSeq::from_tokens(doc[off..off + self.prompt_len.min(doc.len())].to_vec())
    }

    /// Watermarked provider generation under the configured scheme.
    pub fn provider_generate(
        &self,
        prompt: &[TokenId],
        length: usize,
        rng: &mut RngStream,
    ) -> Result<TokenSeq> {
        match self.cfg.scheme {
            Scheme::RedGreen => {
                crate::watermark::generate_watermarked_with(&self.colorer, &self.lm, prompt, length, rng)
            }
            Scheme::Aar => aar_generate(&self.lm, &self.aar_params(), prompt, length),
            Scheme::Kth => kth_generate(&self.lm, &self.kth_params(), prompt, length, rng),
        }
    }

    /// Per-position watermark evidence for the configured scheme.
    pub fn trace(&self, text: &[TokenId]) -> Result<WatermarkTrace> {
        match self.cfg.scheme {
            Scheme::RedGreen => color_trace_with(&self.colorer, text, self.cfg.dedup),
            Scheme::Aar => aar_trace(&self.aar_params(), text),
            Scheme::Kth => kth_trace(&self.kth_params(), text),
        }
    }

    /// Defender score sequence for the configured score kind.
    pub fn score(&self, text: &[TokenId]) -> Result<ScoreSeq> {
        match self.cfg.score {
            ScoreKind::Ngram => ngram_score(&self.ngram_table, text, self.score_h),
            ScoreKind::Unigram => unigram_score(&self.unigram_table, text, self.score_h),
        }
    }

    /// Does the scheme's own detector flag this (concatenated) text?
    pub fn detector_passes(&self, segments: &[TokenSeq]) -> Result<bool> {
        let pairs: Result<Vec<_>> = segments
            .iter()
            .map(|s| Ok((self.trace(s)?, ScoreSeq { y: vec![0.0; s.len()] })))
            .collect();
        let (trace, _) = concatenate(&pairs?)?;
        match self.cfg.scheme {
            Scheme::RedGreen => Ok(detect_from_trace(&self.rg, &trace)?.watermarked),
            Scheme::Aar | Scheme::Kth => Ok(exp_trace_z(&trace)? > self.cfg.rho),
        }
    }

    /// Segments of watermarked provider text totaling roughly `t` tokens,
    /// optionally with a `mix` fraction of inserted unwatermarked text.
    pub fn watermarked_segments(
        &self,
        t: usize,
        mix: f64,
        rng: &mut RngStream,
    ) -> Result<Vec<TokenSeq>> {
        let seg_len = self.cfg.segment_len;
        let n_seg = (t / seg_len).max(1);
        let mut segments = Vec::with_capacity(n_seg);
        for _ in 0..n_seg {
            let prompt = self.prompt(rng);
            if mix <= 0.0 {
                segments.push(self.provider_generate(&prompt, seg_len, rng)?);
            } else {
                let human_len = ((seg_len as f64) * mix).round() as usize;
                let wm_len = seg_len - human_len;
                let wm = self.provider_generate(&prompt, wm_len, rng)?;
                let human_prompt = self.prompt(rng);
                let human = generate_text(&self.lm, &human_prompt, human_len, rng);
                let pos = 1 + rng.next_below(wm_len.saturating_sub(1) as u64) as usize;
                let mut mixed = TokenSeq::from_tokens(wm[..pos].to_vec());
                mixed.extend_from_slice(&human);
                mixed.extend_from_slice(&wm[pos..]);
                segments.push(mixed);
            }
        }
        Ok(segments)
    }

    /// Spoofed segments from a learned spoofer.
    pub fn spoofed_segments(
        &self,
        spoofer: &Spoofer,
        t: usize,
        rng: &mut RngStream,
    ) -> Result<Vec<TokenSeq>> {
        let seg_len = self.cfg.segment_len;
        let n_seg = (t / seg_len).max(1);
        let mut segments = Vec::with_capacity(n_seg);
        for _ in 0..n_seg {
            let prompt = self.prompt(rng);
            segments.push(spoofer.generate(&self.lm, &prompt, seg_len, rng)?);
        }
        Ok(segments)
    }

    /// Regenerate each segment from its own first `c` tokens with the
    /// provider model and true key; the Reprompting counterpart texts.
    pub fn regenerate(&self, segments: &[TokenSeq], rng: &mut RngStream) -> Result<Vec<TokenSeq>> {
        let c = self.cfg.c;
        segments
            .iter()
            .map(|seg| {
                if seg.len() <= c {
                    return Err(Error::SegmentTooShort {
                        index: 0,
                        len: seg.len(),
                        c,
                    });
                }
                self.provider_generate(&seg[..c], seg.len() - c, rng)
            })
            .collect()
    }

    /// Run the configured test on one trial's segments. `rng` drives the
    /// regeneration in Reprompting mode.
    pub fn run_test(&self, segments: &[TokenSeq], rng: &mut RngStream) -> Result<TestReport> {
        match self.cfg.method {
            TestMethod::Standard => {
                let pairs: Result<Vec<_>> = segments
                    .iter()
                    .map(|s| Ok((self.trace(s)?, self.score(s)?)))
                    .collect();
                let (trace, score) = concatenate(&pairs?)?;
                standard_test(&trace, &score, self.cfg.sidedness)
            }
            TestMethod::Reprompting => {
                let regen = self.regenerate(segments, rng)?;
                reprompt_test(
                    segments,
                    &regen,
                    self.cfg.c,
                    |t| self.trace(t),
                    |t| self.score(t),
                    self.cfg.sidedness,
                )
            }
        }
    }

    /// Build the spoofer's training dataset by querying the provider.
    pub fn build_spoof_dataset(&self, n_docs: usize, doc_len: usize) -> Result<SpoofDataset> {
        if n_docs == 0 {
            return Err(Error::EmptyDataset);
        }
        let docs: Vec<Result<TokenSeq>> = parallel::map_indexed(n_docs, |i| {
            let mut rng = RngStream::new(trial_seed(self.cfg.seed, EXP_DATASET, i as u64), 0);
            let prompt = self.prompt(&mut rng);
            self.provider_generate(&prompt, doc_len, &mut rng)
        });
        let mut documents = Vec::with_capacity(n_docs);
        let mut total_tokens = 0;
        for d in docs {
            let d = d?;
            total_tokens += d.len();
            documents.push(d);
        }
        Ok(SpoofDataset {
            documents,
            total_tokens,
        })
    }

    /// Spoofer configuration matching the experiment config.
    pub fn spoofer_config(&self) -> SpooferConfig {
        match self.cfg.spoofer {
            SpooferKind::Oracle => SpooferConfig::oracle(self.rg, self.cfg.boost),
            SpooferKind::Stealing => SpooferConfig::stealing(self.cfg.h, self.cfg.boost),
            SpooferKind::Distill => {
                let mut c = SpooferConfig::distill(self.cfg.h, self.cfg.effective_distill_order());
                c.assumed_variant = self.cfg.variant;
                c.distill_alpha = self.cfg.distill_alpha;
                c
            }
        }
    }

    /// Query the provider and learn the configured spoofer.
    pub fn learn_spoofer(&self) -> Result<(Spoofer, SpoofDataset)> {
        let dataset = self.build_spoof_dataset(self.cfg.d_docs, self.cfg.d_doc_len)?;
        let spoofer_cfg = self.spoofer_config();
        let base: Option<&[TokenSeq]> = match self.cfg.spoofer {
            SpooferKind::Stealing => Some(&self.corpus.documents),
            _ => None,
        };
        let spoofer = Spoofer::learn(&dataset, spoofer_cfg, base, self.vocab_size())?;
        Ok((spoofer, dataset))
    }

    fn write_out(&self, name: &str, contents: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.cfg.out_dir)?;
        let path = self.cfg.out_dir.join(name);
        std::fs::write(&path, contents)?;
        Ok(path)
    }

    /// Config echo, seed, and version; written once per experiment run.
    pub fn write_manifest(&self, experiment: &str) -> Result<()> {
        let manifest = format!(
            "experiment={}\nversion={}\n{}",
            experiment,
            env!("CARGO_PKG_VERSION"),
            self.cfg.manifest_string()
        );
        self.write_out(&format!("{experiment}_manifest.txt"), &manifest)?;
        Ok(())
    }
}

/// Result of the normality validation run.
#[derive(Clone, Debug)]
pub struct NormalityReport {
    pub zs: Vec<f64>,
    pub ks: GofReport,
    pub dp: GofReport,
    pub mean_z: f64,
    pub std_z: f64,
    /// One-sample left-tail p for the hypothesis mean(z) < 0.
    pub left_tail_p: f64,
}

/// Sample the configured test statistic on watermarked null text and test
/// the z-sample for (standard) normality.
pub fn run_normality(world: &ExperimentWorld) -> Result<NormalityReport> {
    let cfg = &world.cfg;
    let t = *cfg.t_grid.first().expect("validated nonempty");
    let trials = cfg.trials_for(t);
    let results: Vec<Result<f64>> = parallel::map_indexed(trials, |i| {
        let seed = trial_seed(cfg.seed, EXP_NORMALITY ^ mix64(t as u64), i as u64);
        let mut rng = RngStream::new(seed, 0);
        let segments = world.watermarked_segments(t, 0.0, &mut rng)?;
        Ok(world.run_test(&segments, &mut rng)?.z)
    });
    let mut zs = Vec::with_capacity(trials);
    for r in results {
        zs.push(r?);
    }
    let n = zs.len() as f64;
    let mean_z = zs.iter().sum::<f64>() / n;
    let var = zs.iter().map(|z| (z - mean_z) * (z - mean_z)).sum::<f64>() / (n - 1.0);
    let std_z = var.sqrt();
    let t_stat = mean_z / (std_z / n.sqrt());
    let left_tail_p = normal_cdf(t_stat);
    let ks = ks_test_std_normal(&zs)?;
    let dp = dagostino_pearson(&zs)?;

    let mut csv = String::from("trial,z\n");
    for (i, z) in zs.iter().enumerate() {
        csv.push_str(&format!("{i},{z:.6}\n"));
    }
    world.write_out("normality_z_samples.csv", &csv)?;
    let summary = format!(
        "method,score,h,n,ks_d,ks_p,dp_k2,dp_p,mean_z,std_z,left_tail_p\n{},{},{},{},{:.6},{:.6e},{:.6},{:.6e},{:.6},{:.6},{:.6e}\n",
        cfg.method, cfg.score, cfg.h, zs.len(), ks.statistic, ks.p_value, dp.statistic,
        dp.p_value, mean_z, std_z, left_tail_p
    );
    world.write_out("normality.csv", &summary)?;
    world.write_out(
        "normality_hist.svg",
        &svg::histogram(&zs, 40, &format!("z histogram ({} + {})", cfg.method, cfg.score)),
    )?;
    world.write_manifest("normality")?;
    Ok(NormalityReport {
        zs,
        ks,
        dp,
        mean_z,
        std_z,
        left_tail_p,
    })
}

/// Rejection-rate curves for watermarked (null) text.
#[derive(Clone, Debug)]
pub struct FprReport {
    /// (T, human-mix fraction, points over the alpha grid).
    pub curves: Vec<(usize, f64, Vec<CurvePoint>)>,
    /// True when every point satisfies rate <= alpha + 3 sqrt(alpha(1-alpha)/n).
    pub all_controlled: bool,
}

/// Empirical Type-1 error of the configured test on watermarked text, per T
/// and per human-mix fraction (0 = pure watermarked text). Only
/// detector-passing texts are tested.
pub fn run_fpr_curve(world: &ExperimentWorld, mixes: &[f64]) -> Result<FprReport> {
    let cfg = &world.cfg;
    let mut curves = Vec::new();
    let mut all_controlled = true;
    for &t in &cfg.t_grid {
        for &mix in mixes {
            let trials = cfg.trials_for(t);
            let exp_id = EXP_FPR ^ mix64(t as u64) ^ mix64((mix * 1e6) as u64 + 3);
            let results: Vec<Result<Option<f64>>> = parallel::map_indexed(trials, |i| {
                let mut rng = RngStream::new(trial_seed(cfg.seed, exp_id, i as u64), 0);
                let segments = world.watermarked_segments(t, mix, &mut rng)?;
                if !world.detector_passes(&segments)? {
                    return Ok(None);
                }
                Ok(Some(world.run_test(&segments, &mut rng)?.p_value))
            });
            let mut ps = Vec::new();
            for r in results {
                if let Some(p) = r? {
                    ps.push(p);
                }
            }
            if ps.is_empty() {
                return Err(Error::NoSpoofsPassed);
            }
            let n = ps.len();
            let mut points = Vec::with_capacity(cfg.alphas.len());
            let mut csv = String::from("alpha,rate,ci_low,ci_high,n\n");
            for &alpha in &cfg.alphas {
                let hits = ps.iter().filter(|&&p| p <= alpha).count();
                let point = curve_point(alpha, hits, n)?;
                let bound = alpha + 3.0 * (alpha * (1.0 - alpha) / n as f64).sqrt();
                if point.rate > bound {
                    all_controlled = false;
                }
                csv.push_str(&format!(
                    "{:.4},{:.6},{:.6},{:.6},{}\n",
                    alpha, point.rate, point.ci_low, point.ci_high, n
                ));
                points.push(point);
            }
            let name = if mix > 0.0 {
                format!("fpr_t{}_mix{:02}.csv", t, (mix * 100.0).round() as u32)
            } else {
                format!("fpr_t{t}.csv")
            };
            world.write_out(&name, &csv)?;
            curves.push((t, mix, points));
        }
    }
    let series: Vec<(String, Vec<(f64, f64)>)> = curves
        .iter()
        .map(|(t, mix, pts)| {
            (
                format!("t={t} mix={mix}"),
                pts.iter().map(|p| (p.x, p.rate)).collect(),
            )
        })
        .collect();
    let series_refs: Vec<(&str, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(l, p)| (l.as_str(), p.clone()))
        .collect();
    world.write_out(
        "fpr_curve.svg",
        &svg::line_chart(&series_refs, "rejection rate vs alpha (null)"),
    )?;
    world.write_manifest("fpr")?;
    Ok(FprReport {
        curves,
        all_controlled,
    })
}

/// Power of the test against the configured spoofer.
#[derive(Clone, Debug)]
pub struct PowerReport {
    /// (T, points over the alpha grid); rates are TPR among detector-passing
    /// spoofed texts.
    pub tpr: Vec<(usize, Vec<CurvePoint>)>,
    /// (T, mean z, standard error, n).
    pub mean_z: Vec<(usize, f64, f64, usize)>,
    /// R^2 of the linear fit mean_z ~ sqrt(T).
    pub sqrt_fit_r2: f64,
    /// Fraction of spoofed texts that fooled the watermark detector.
    pub detector_pass_rate: f64,
}

/// Learn the configured spoofer, generate spoofed texts, keep those the
/// watermark detector flags, and measure the test's rejection rates per T.
pub fn run_power(world: &ExperimentWorld) -> Result<PowerReport> {
    let (spoofer, _dataset) = world.learn_spoofer()?;
    run_power_with(world, &spoofer)
}

/// Power run against an already-learned spoofer.
pub fn run_power_with(world: &ExperimentWorld, spoofer: &Spoofer) -> Result<PowerReport> {
    let cfg = &world.cfg;
    let mut tpr = Vec::new();
    let mut mean_z = Vec::new();
    let mut pass_count = 0usize;
    let mut total_count = 0usize;
    let mut tpr_csv = String::from("t,alpha,tpr,ci_low,ci_high,n\n");
    let mut z_csv = String::from("t,mean_z,se,n\n");
    for &t in &cfg.t_grid {
        let trials = cfg.trials_for(t);
        let exp_id = EXP_POWER ^ mix64(t as u64);
        let results: Vec<Result<Option<(f64, f64)>>> = parallel::map_indexed(trials, |i| {
            let mut rng = RngStream::new(trial_seed(cfg.seed, exp_id, i as u64), 0);
            let segments = world.spoofed_segments(spoofer, t, &mut rng)?;
            if !world.detector_passes(&segments)? {
                return Ok(None);
            }
            let rep = world.run_test(&segments, &mut rng)?;
            Ok(Some((rep.z, rep.p_value)))
        });
        let mut zs = Vec::new();
        let mut ps = Vec::new();
        for r in results {
            total_count += 1;
            if let Some((z, p)) = r? {
                pass_count += 1;
                zs.push(z);
                ps.push(p);
            }
        }
        if ps.is_empty() {
            return Err(Error::NoSpoofsPassed);
        }
        let n = ps.len();
        let mut points = Vec::new();
        for &alpha in &cfg.alphas {
            let hits = ps.iter().filter(|&&p| p <= alpha).count();
            let point = curve_point(alpha, hits, n)?;
            tpr_csv.push_str(&format!(
                "{},{:.4},{:.6},{:.6},{:.6},{}\n",
                t, alpha, point.rate, point.ci_low, point.ci_high, n
            ));
            points.push(point);
        }
        tpr.push((t, points));
        let m = zs.iter().sum::<f64>() / n as f64;
        let sd = (zs.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        let se = sd / (n as f64).sqrt();
        z_csv.push_str(&format!("{t},{m:.6},{se:.6},{n}\n"));
        mean_z.push((t, m, se, n));
    }
    let fit_pts: Vec<(f64, f64)> = mean_z
        .iter()
        .map(|&(t, m, _, _)| ((t as f64).sqrt(), m))
        .collect();
    let sqrt_fit_r2 = linear_fit_r2(&fit_pts);
    world.write_out("power_tpr.csv", &tpr_csv)?;
    world.write_out("power_meanz.csv", &z_csv)?;
    world.write_out(
        "power_fit.csv",
        &format!(
            "fit,r2,points\nmean_z_vs_sqrt_t,{sqrt_fit_r2:.6},{}\n",
            fit_pts.len()
        ),
    )?;
    let series: Vec<(String, Vec<(f64, f64)>)> = tpr
        .iter()
        .map(|(t, pts)| {
            (
                format!("t={t}"),
                pts.iter().map(|p| (p.x, p.rate)).collect(),
            )
        })
        .collect();
    let refs: Vec<(&str, Vec<(f64, f64)>)> =
        series.iter().map(|(l, p)| (l.as_str(), p.clone())).collect();
    world.write_out("power_tpr.svg", &svg::line_chart(&refs, "TPR vs alpha"))?;
    world.write_out(
        "power_meanz.svg",
        &svg::line_chart(
            &[("mean z", fit_pts.clone())],
            "mean z vs sqrt(T) (spoofed)",
        ),
    )?;
    world.write_manifest("power")?;
    Ok(PowerReport {
        tpr,
        mean_z,
        sqrt_fit_r2,
        detector_pass_rate: pass_count as f64 / total_count.max(1) as f64,
    })
}

/// R^2 of the least-squares line through `(x, y)` points.
pub fn linear_fit_r2(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 1.0;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return 1.0;
    }
    (sxy * sxy) / (sxx * syy)
}

/// Outcome of the shuffle-invariance check.
#[derive(Clone, Debug)]
pub struct ShuffleReport {
    pub watermarked: GofReport,
    pub spoofed: GofReport,
}

/// Apply one shared cell permutation to the (x, y, keep) matrices of a
/// corpus of equal-length rows.
pub fn shuffle_cells(rows: &mut [(WatermarkTrace, ScoreSeq)], perm: &[usize]) {
    let cols = rows[0].0.len();
    let flat: Vec<(f64, f64, bool)> = rows
        .iter()
        .flat_map(|(tr, sc)| {
            (0..cols).map(move |j| (tr.x[j], sc.y[j], tr.keep[j]))
        })
        .collect();
    for (cell, &src) in perm.iter().enumerate() {
        let (i, j) = (cell / cols, cell % cols);
        let (x, y, k) = flat[src];
        rows[i].0.x[j] = x;
        rows[i].1.y[j] = y;
        rows[i].0.keep[j] = k;
    }
}

fn seeded_permutation(n: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.next_below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Z_R per row from already-paired (received, regenerated) rows. Rows whose
/// statistic is degenerate (saturated colors, constant scores) are skipped;
/// at least [`crate::spooftest::MIN_KEPT`] valid rows are required.
fn rowwise_reprompt_z(
    received: &[(WatermarkTrace, ScoreSeq)],
    regen: &[(WatermarkTrace, ScoreSeq)],
) -> Result<Vec<f64>> {
    let mut zs = Vec::with_capacity(received.len());
    for ((ta, sa), (tb, sb)) in received.iter().zip(regen) {
        let s_a = match crate::spooftest::statistic_s(ta, sa) {
            Ok(s) => s,
            Err(
                Error::ConstantColors | Error::ConstantScores | Error::TooFewKept { .. },
            ) => continue,
            Err(e) => return Err(e),
        };
        let s_b = match crate::spooftest::statistic_s(tb, sb) {
            Ok(s) => s,
            Err(
                Error::ConstantColors | Error::ConstantScores | Error::TooFewKept { .. },
            ) => continue,
            Err(e) => return Err(e),
        };
        zs.push(crate::spooftest::reprompt_z(
            s_a,
            ta.n_kept(),
            s_b,
            tb.n_kept(),
        ));
    }
    if zs.len() < crate::spooftest::MIN_KEPT {
        return Err(Error::TooFewSamples {
            min: crate::spooftest::MIN_KEPT,
            got: zs.len(),
        });
    }
    Ok(zs)
}

/// Shuffle invariance: the Reprompting z distribution over a corpus is
/// unchanged when the trace/score cell matrices are position-shuffled.
/// Run for both a watermarked and a spoofed corpus; reports Mann-Whitney p.
pub fn run_shuffle_check(world: &ExperimentWorld) -> Result<ShuffleReport> {
    let cfg = &world.cfg;
    let t = *cfg.t_grid.first().expect("validated nonempty");
    let n_rows = cfg.trials_for(t);
    let (spoofer, _) = world.learn_spoofer()?;

    type Row = (WatermarkTrace, ScoreSeq);
    let build_rows = |spoofed: bool| -> Result<(Vec<Row>, Vec<Row>)> {
        let exp_id = EXP_SHUFFLE ^ if spoofed { 0xF00D } else { 0 };
        let rows: Vec<Result<(Row, Row)>> =
            parallel::map_indexed(n_rows, |i| {
                let mut rng = RngStream::new(trial_seed(cfg.seed, exp_id, i as u64), 0);
                let prompt = world.prompt(&mut rng);
                let text = if spoofed {
                    spoofer.generate(&world.lm, &prompt, t, &mut rng)?
                } else {
                    world.provider_generate(&prompt, t, &mut rng)?
                };
                let suffix = text.suffix(cfg.c);
                let regen = world.provider_generate(&text[..cfg.c], t - cfg.c, &mut rng)?;
                Ok((
                    (world.trace(&suffix)?, world.score(&suffix)?),
                    (world.trace(&regen)?, world.score(&regen)?),
                ))
            });
        let mut received = Vec::with_capacity(n_rows);
        let mut regen = Vec::with_capacity(n_rows);
        for r in rows {
            let (a, b) = r?;
            received.push(a);
            regen.push(b);
        }
        Ok((received, regen))
    };

    let mut reports = Vec::new();
    for spoofed in [false, true] {
        let (received, regen) = build_rows(spoofed)?;
        let z_orig = rowwise_reprompt_z(&received, &regen)?;
        let mut rng = RngStream::new(trial_seed(cfg.seed, EXP_SHUFFLE ^ 0x5A5A, 0), 7);
        let mut shuf_received = received.clone();
        let cells = shuf_received.len() * shuf_received[0].0.len();
        let perm = seeded_permutation(cells, &mut rng);
        shuffle_cells(&mut shuf_received, &perm);
        let mut shuf_regen = regen.clone();
        let cells_r = shuf_regen.len() * shuf_regen[0].0.len();
        let perm_r = seeded_permutation(cells_r, &mut rng);
        shuffle_cells(&mut shuf_regen, &perm_r);
        let z_shuf = rowwise_reprompt_z(&shuf_received, &shuf_regen)?;
        reports.push(mann_whitney_u(&z_orig, &z_shuf)?);
    }

    let csv = format!(
        "corpus,mw_u,mw_p,n\nwatermarked,{:.3},{:.6},{}\nspoofed,{:.3},{:.6},{}\n",
        reports[0].statistic, reports[0].p_value, reports[0].n,
        reports[1].statistic, reports[1].p_value, reports[1].n
    );
    world.write_out("shuffle.csv", &csv)?;
    world.write_manifest("shuffle")?;
    Ok(ShuffleReport {
        watermarked: reports.remove(0),
        spoofed: reports.remove(0),
    })
}

/// One grid point of the reference-corpus quality ablation.
#[derive(Clone, Debug)]
pub struct DtildePoint {
    pub noise: f64,
    pub tv_distance: f64,
    pub median_p: f64,
    pub n: usize,
}

/// Degrade the defender's reference table by adding centered noise to the
/// spoofer-dataset gram counts and track how the spoof test's p-values react
/// to the total-variation distance from the exact counts.
pub fn run_dtilde_ablation(world: &ExperimentWorld) -> Result<Vec<DtildePoint>> {
    let cfg = &world.cfg;
    let (spoofer, dataset) = world.learn_spoofer()?;
    let exact = build_frequency_table(
        &dataset.documents,
        world.vocab_size(),
        FrequencyKind::UnorderedNgram { h: world.score_h },
    )?;
    let mut keys: Vec<(u128, u64)> = exact.iter_counts().collect();
    keys.sort_unstable();

    // Spoofed trials generated once; each noise level only re-scores them.
    let t = *cfg.t_grid.first().expect("validated nonempty");
    let trials = cfg.trials_for(t);
    let trial_data: Vec<Result<(Vec<TokenSeq>, Vec<TokenSeq>)>> =
        parallel::map_indexed(trials, |i| {
            let mut rng = RngStream::new(trial_seed(cfg.seed, EXP_DTILDE, i as u64), 0);
            let segments = world.spoofed_segments(&spoofer, t, &mut rng)?;
            let regen = world.regenerate(&segments, &mut rng)?;
            Ok((segments, regen))
        });
    let mut trials_ok = Vec::new();
    for td in trial_data {
        trials_ok.push(td?);
    }

    let total: f64 = keys.iter().map(|&(_, c)| c as f64).sum();
    let mut points = Vec::new();
    let mut csv = String::from("noise,tv,median_p,n\n");
    for (gi, &noise) in cfg.noise_grid.iter().enumerate() {
        let mut rng = RngStream::new(trial_seed(cfg.seed, EXP_DTILDE ^ 0xA0, gi as u64), 1);
        let normal = rand_distr::Normal::new(0.0, 1.0).expect("valid normal");
        let perturbed: std::collections::HashMap<u128, f64> = keys
            .iter()
            .map(|&(k, c)| {
                let noisy = (c as f64
                    + noise * rand_distr::Distribution::sample(&normal, &mut rng))
                .max(0.0);
                (k, noisy)
            })
            .collect();
        let p_total: f64 = perturbed.values().sum();
        let tv = if p_total <= 0.0 {
            1.0
        } else {
            0.5 * keys
                .iter()
                .map(|&(k, c)| (c as f64 / total - perturbed[&k] / p_total).abs())
                .sum::<f64>()
        };
        let bits = crate::core::token_bits(world.vocab_size());
        let lookup = |window: &[TokenId]| -> f64 {
            let mut sorted = window.to_vec();
            sorted.sort_unstable();
            crate::core::pack_tokens(&sorted, bits)
                .and_then(|k| perturbed.get(&k).copied())
                .unwrap_or(0.0)
        };
        let mut ps = Vec::new();
        for (segments, regen) in &trials_ok {
            let rep = reprompt_test(
                segments,
                regen,
                cfg.c,
                |txt| world.trace(txt),
                |txt| Ok(ngram_score_with(lookup, txt, world.score_h)),
                cfg.sidedness,
            )?;
            ps.push(rep.p_value);
        }
        ps.sort_by(|a, b| a.partial_cmp(b).expect("finite p"));
        let median_p = ps[ps.len() / 2];
        csv.push_str(&format!("{noise},{tv:.6},{median_p:.6e},{}\n", ps.len()));
        points.push(DtildePoint {
            noise,
            tv_distance: tv,
            median_p,
            n: ps.len(),
        });
    }
    world.write_out("dtilde.csv", &csv)?;
    world.write_manifest("dtilde")?;
    Ok(points)
}

/// One grid point of the spoofer-dataset size ablation.
#[derive(Clone, Debug)]
pub struct SizePoint {
    pub factor: usize,
    pub d_tokens: usize,
    pub tpr: CurvePoint,
    pub spoof_success: f64,
}

/// Grow the spoofer's training data by the configured factors (subsets are
/// nested) and measure TPR at alpha = 0.05 and spoof success at fixed T.
pub fn run_dataset_size_ablation(world: &ExperimentWorld) -> Result<Vec<SizePoint>> {
    let cfg = &world.cfg;
    let max_factor = *cfg.size_factors.iter().max().unwrap_or(&1);
    let full = world.build_spoof_dataset(cfg.d_docs * max_factor, cfg.d_doc_len)?;
    let t = *cfg.t_grid.first().expect("validated nonempty");
    let trials = cfg.trials_for(t);
    let alpha = 0.05;
    let mut out = Vec::new();
    let mut csv = String::from("factor,d_tokens,tpr,ci_low,ci_high,n,success_rate\n");
    for (fi, &factor) in cfg.size_factors.iter().enumerate() {
        let subset = SpoofDataset {
            documents: full.documents[..cfg.d_docs * factor].to_vec(),
            total_tokens: full.documents[..cfg.d_docs * factor]
                .iter()
                .map(|d| d.len())
                .sum(),
        };
        let base: Option<&[TokenSeq]> = match cfg.spoofer {
            SpooferKind::Stealing => Some(&world.corpus.documents),
            _ => None,
        };
        let spoofer = Spoofer::learn(&subset, world.spoofer_config(), base, world.vocab_size())?;
        let exp_id = EXP_DSIZE ^ mix64(fi as u64);
        let results: Vec<Result<(bool, Option<f64>)>> = parallel::map_indexed(trials, |i| {
            let mut rng = RngStream::new(trial_seed(cfg.seed, exp_id, i as u64), 0);
            let segments = world.spoofed_segments(&spoofer, t, &mut rng)?;
            if !world.detector_passes(&segments)? {
                return Ok((false, None));
            }
            let rep = world.run_test(&segments, &mut rng)?;
            Ok((true, Some(rep.p_value)))
        });
        let mut passed = 0usize;
        let mut hits = 0usize;
        let mut total = 0usize;
        for r in results {
            let (pass, p) = r?;
            total += 1;
            if pass {
                passed += 1;
                if p.expect("present when passed") <= alpha {
                    hits += 1;
                }
            }
        }
        if passed == 0 {
            return Err(Error::NoSpoofsPassed);
        }
        let tpr = curve_point(factor as f64, hits, passed)?;
        let success = passed as f64 / total as f64;
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{},{:.6}\n",
            factor, subset.total_tokens, tpr.rate, tpr.ci_low, tpr.ci_high, passed, success
        ));
        out.push(SizePoint {
            factor,
            d_tokens: subset.total_tokens,
            tpr,
            spoof_success: success,
        });
    }
    world.write_out("dsize.csv", &csv)?;
    world.write_manifest("dsize")?;
    Ok(out)
}

/// Write a CSV verbatim into the world's output directory; shared by the CLI.
pub fn write_report_csv(world: &ExperimentWorld, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&world.cfg.out_dir)?;
    let path = world.cfg.out_dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

/// Convenience used by tests and the CLI `validate` command.
pub fn quick_world(seed: u64, out_dir: &Path) -> Result<ExperimentWorld> {
    let cfg = ExperimentConfig {
        seed,
        out_dir: out_dir.to_path_buf(),
        corpus_docs: 400,
        corpus_doc_len: 200,
        trials: 50,
        t_grid: vec![500],
        ..ExperimentConfig::default()
    };
    ExperimentWorld::build(cfg)
}
