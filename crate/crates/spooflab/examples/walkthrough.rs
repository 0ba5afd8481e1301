//! Minimal tour of the library: train a toy model, generate watermarked
//! text, spoof the watermark from queried data, and catch the spoof.
//!
//! Run with `cargo run --example walkthrough`.

use spooflab::core::{RngStream, TokenSeq, WatermarkKey};
use spooflab::lm::{synthetic_corpus, train_markov, SyntheticSpec};
use spooflab::spoofer::{Spoofer, SpooferConfig};
use spooflab::spooftest::{
    build_frequency_table, ngram_score, reprompt_test, FrequencyKind, Sidedness,
};
use spooflab::watermark::{
    color_trace, detect_z, generate_watermarked, RedGreenParams,
};

fn main() -> spooflab::Result<()> {
    // A corpus and the provider's language model.
    let corpus = synthetic_corpus(&SyntheticSpec::default());
    let lm = train_markov(&corpus, 3, 0.05)?;
    let vocab = corpus.vocab.len();
    let params = RedGreenParams::new(2, 0.25, 4.0, WatermarkKey(0xC0FFEE), vocab);

    // Watermarked generation and detection.
    let prompt = &corpus.documents[0][..4];
    let mut rng = RngStream::new(7, 0);
    let text = generate_watermarked(&lm, &params, prompt, 400, &mut rng)?;
    let report = detect_z(&params, &text)?;
    println!(
        "provider text: z = {:.2}, watermarked = {}",
        report.z, report.watermarked
    );

    // The attacker queries the provider and learns from the replies.
    let prompts: Vec<TokenSeq> = corpus.documents[..32]
        .iter()
        .map(|d| TokenSeq::from_tokens(d[..4].to_vec()))
        .collect();
    let dataset =
        spooflab::spoofer::build_dataset(&lm, &params, &prompts, 2000, 250, &mut rng)?;
    let spoofer = Spoofer::learn(
        &dataset,
        SpooferConfig::stealing(params.h, 4.0),
        Some(&corpus.documents),
        vocab,
    )?;
    let spoofed = spoofer.generate(&lm, prompt, 400, &mut rng)?;
    let report = detect_z(&params, &spoofed)?;
    println!(
        "spoofed text:  z = {:.2}, watermarked = {}",
        report.z, report.watermarked
    );

    // The discovery test: correlate colors with gram familiarity, canceling
    // the model-induced offset by regenerating from the text's own prefix.
    let table = build_frequency_table(
        &corpus.documents,
        vocab,
        FrequencyKind::UnorderedNgram { h: params.h },
    )?;
    let c = 25;
    let mut test_one = |label: &str, received: TokenSeq| -> spooflab::Result<()> {
        let regen = generate_watermarked(&lm, &params, &received[..c], received.len() - c, &mut rng)?;
        let rep = reprompt_test(
            &[received],
            &[regen],
            c,
            |t| color_trace(&params, t),
            |t| ngram_score(&table, t, params.h),
            Sidedness::TwoSided,
        )?;
        println!("{label}: S = {:+.3}, z = {:+.2}, p = {:.4}", rep.s, rep.z, rep.p_value);
        Ok(())
    };
    test_one("discovery on provider text", text)?;
    test_one("discovery on spoofed text ", spoofed)?;
    Ok(())
}
