//! Watermark forensics laboratory.
//!
//! Implements Red-Green, AAR, and KTH text watermarks over toy Markov
//! language models, simulates learning-based spoofing attacks against them,
//! and provides the statistical tests that distinguish spoofed from genuinely
//! watermarked text, together with a Monte-Carlo harness that validates null
//! calibration and measures test power.
//!
//! Module map:
//! - [`core`]: domain types, keyed mixing, seeded randomness
//! - [`lm`]: corpora and the toy Markov language model
//! - [`watermark`]: Red-Green generation, traces, and the detector
//! - [`altschemes`]: AAR and KTH generation and traces
//! - [`spoofer`]: simulated learning-based spoofers
//! - [`spooftest`]: spoofing-discovery statistics and tests
//! - [`statkit`]: statistical subroutines
//! - [`harness`]: experiment orchestration, persistence, plots
//! - [`parallel`]: data-parallel trial execution (feature `parallel`)

pub mod altschemes;
pub mod core;
pub mod error;
pub mod harness;
pub mod lm;
pub mod parallel;
pub mod spoofer;
pub mod spooftest;
pub mod statkit;
pub mod watermark;

pub use error::{Error, Result};
