//! Self-contained statistical subroutines: rank correlation, normality and
//! rank-sum tests, binomial intervals, and a Monte-Carlo validator for the
//! normal limit of the standardized rank-correlation statistic.
//!
//! All p-values are asymptotic, with minimum-n guards; experiment sample
//! sizes are in the hundreds or more throughout.

use rand_distr::Distribution;

use crate::core::RngStream;
use crate::error::{Error, Result};
use crate::parallel;

/// Result of one goodness-of-fit or rank test.
#[derive(Clone, Debug)]
pub struct GofReport {
    pub test: &'static str,
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal survival function, accurate in the far tail.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p)
}

/// Two-sided p-value of a standard normal z.
pub fn two_sided_p(z: f64) -> f64 {
    (2.0 * normal_sf(z.abs())).min(1.0)
}

/// Right-tail p-value of a standard normal z.
pub fn right_tail_p(z: f64) -> f64 {
    normal_sf(z)
}

/// Average (fractional) ranks, 1-based; ties share the mean of their block.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("no NaN in ranks"));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}

/// Sample Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::TooFewSamples { min: 2, got: a.len() });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::ConstantScores);
    }
    Ok(cov / (va * vb).sqrt())
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman_rho(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::TooFewSamples { min: 2, got: a.len() });
    }
    pearson(&ranks(a), &ranks(b))
}

const RHO_CLAMP: f64 = 1.0 - 1e-10;

/// Fisher-transformed Spearman correlation standardized by the rank-adjusted
/// null variance 1.06/(n-3). This is the shared z pipeline behind both test
/// methods and the Monte-Carlo validator.
pub fn fisher_spearman_z(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len();
    if n < 5 {
        return Err(Error::TooFewSamples { min: 5, got: n });
    }
    let rho = spearman_rho(a, b)?.clamp(-RHO_CLAMP, RHO_CLAMP);
    let s = rho.atanh();
    Ok(s / (1.06 / (n as f64 - 3.0)).sqrt())
}

/// Survival function of the Kolmogorov distribution via the alternating
/// series, truncated once terms fall below 1e-12.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against an arbitrary continuous CDF.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F, name: &'static str) -> Result<GofReport> {
    let n = samples.len();
    if n < 10 {
        return Err(Error::TooFewSamples { min: 10, got: n });
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in KS input"));
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / nf - f).max(f - i as f64 / nf);
    }
    let lambda = (nf.sqrt() + 0.12 + 0.11 / nf.sqrt()) * d;
    Ok(GofReport {
        test: name,
        statistic: d,
        p_value: kolmogorov_sf(lambda),
        n,
    })
}

/// Kolmogorov-Smirnov test for standard normality.
pub fn ks_test_std_normal(samples: &[f64]) -> Result<GofReport> {
    ks_test(samples, normal_cdf, "ks-std-normal")
}

/// Kolmogorov-Smirnov test against the unit-rate exponential.
pub fn ks_test_exp1(samples: &[f64]) -> Result<GofReport> {
    ks_test(
        samples,
        |x| if x <= 0.0 { 0.0 } else { 1.0 - (-x).exp() },
        "ks-exp1",
    )
}

/// Omnibus normality test combining skewness and kurtosis z-transforms into
/// a chi-square(2) statistic. Tests shape only, not location or scale.
pub fn dagostino_pearson(samples: &[f64]) -> Result<GofReport> {
    let n = samples.len();
    if n < 20 {
        return Err(Error::TooFewSamples { min: 20, got: n });
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let mut m2 = 0.0;
    let mut m3 = 0.0;
    let mut m4 = 0.0;
    for &x in samples {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 {
        return Err(Error::ConstantScores);
    }

    // Skewness transform (D'Agostino).
    let g1 = m3 / m2.powf(1.5);
    let y = g1 * (((nf + 1.0) * (nf + 3.0)) / (6.0 * (nf - 2.0))).sqrt();
    let beta2 = 3.0 * (nf * nf + 27.0 * nf - 70.0) * (nf + 1.0) * (nf + 3.0)
        / ((nf - 2.0) * (nf + 5.0) * (nf + 7.0) * (nf + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let z1 = delta * (y / alpha).asinh();

    // Kurtosis transform (Anscombe-Glynn).
    let b2 = m4 / (m2 * m2);
    let e = 3.0 * (nf - 1.0) / (nf + 1.0);
    let var_b2 =
        24.0 * nf * (nf - 2.0) * (nf - 3.0) / ((nf + 1.0) * (nf + 1.0) * (nf + 3.0) * (nf + 5.0));
    let x = (b2 - e) / var_b2.sqrt();
    let sqrt_beta1 = 6.0 * (nf * nf - 5.0 * nf + 2.0) / ((nf + 7.0) * (nf + 9.0))
        * ((6.0 * (nf + 3.0) * (nf + 5.0)) / (nf * (nf - 2.0) * (nf - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let term2 = ((1.0 - 2.0 / a) / denom).cbrt();
    let z2 = (term1 - term2) / (2.0 / (9.0 * a)).sqrt();

    let k2 = z1 * z1 + z2 * z2;
    Ok(GofReport {
        test: "dagostino-pearson",
        statistic: k2,
        p_value: (-k2 / 2.0).exp().clamp(0.0, 1.0),
        n,
    })
}

/// Mann-Whitney U rank test with tie-corrected normal approximation and
/// continuity correction; two-sided.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<GofReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n1 = a.len() as f64;
    let n2 = b.len() as f64;
    let mut all: Vec<f64> = Vec::with_capacity(a.len() + b.len());
    all.extend_from_slice(a);
    all.extend_from_slice(b);
    let r = ranks(&all);
    let r1: f64 = r[..a.len()].iter().sum();
    let u1 = r1 - n1 * (n1 + 1.0) / 2.0;
    let mu = n1 * n2 / 2.0;

    // tie correction over the combined sample
    let mut sorted = all.clone();
    sorted.sort_by(|x, y| x.partial_cmp(y).expect("no NaN"));
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let n = n1 + n2;
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let cc = 0.5 * (u1 - mu).signum();
        two_sided_p((u1 - mu - cc) / var.sqrt())
    };
    Ok(GofReport {
        test: "mann-whitney-u",
        statistic: u1,
        p_value: p,
        n: a.len() + b.len(),
    })
}

/// Wilson score interval for a binomial proportion.
pub fn binomial_ci(successes: usize, trials: usize, level: f64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::InvalidParam("binomial_ci needs trials >= 1".into()));
    }
    if successes > trials {
        return Err(Error::InvalidParam("successes > trials".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParam("level must be in (0, 1)".into()));
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    // the interval touches the boundary exactly at degenerate rates; snap
    // them so rounding cannot push the bound past the observed rate
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials {
        1.0
    } else {
        (center + half).min(1.0)
    };
    Ok((lo, hi))
}

/// Score distribution for the Monte-Carlo validator.
#[derive(Clone, Copy, Debug)]
pub enum ScoreDist {
    Uniform01,
    Normal { mean: f64, sd: f64 },
    Exponential { rate: f64 },
    Constant { value: f64 },
}

impl ScoreDist {
    fn draw(&self, rng: &mut RngStream) -> f64 {
        match *self {
            ScoreDist::Uniform01 => rng.next_f64(),
            ScoreDist::Normal { mean, sd } => {
                rand_distr::Normal::new(mean, sd).expect("valid normal").sample(rng)
            }
            ScoreDist::Exponential { rate } => {
                rand_distr::Exp::new(rate).expect("valid exp").sample(rng)
            }
            ScoreDist::Constant { value } => value,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ScoreDist::Normal { sd, .. } if sd.is_nan() || sd <= 0.0 => {
                Err(Error::InvalidParam("normal sd must be > 0".into()))
            }
            ScoreDist::Exponential { rate } if rate.is_nan() || rate <= 0.0 => {
                Err(Error::InvalidParam("exponential rate must be > 0".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Configuration for the null calibration simulation: independent Bernoulli
/// colors with first/second moment targets `(g1, g2)` and i.i.d. scores.
#[derive(Clone, Debug)]
pub struct NullZSimConfig {
    pub t: usize,
    pub trials: usize,
    pub g1: f64,
    pub g2: f64,
    pub y_dist: ScoreDist,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct NullZReport {
    pub ks: GofReport,
    pub mean_z: f64,
    pub std_z: f64,
}

/// Simulate the standardized statistic under exact cross-independence and
/// test the z-sample against N(0,1).
///
/// The Bernoulli success probabilities alternate between the two-point set
/// realizing the configured first and second moments.
pub fn null_z_monte_carlo(cfg: &NullZSimConfig) -> Result<NullZReport> {
    if cfg.trials < 100 {
        return Err(Error::InvalidParam("need at least 100 trials".into()));
    }
    if cfg.t < 10 {
        return Err(Error::InvalidParam("need t >= 10".into()));
    }
    if !(cfg.g1 >= 0.0 && cfg.g1 <= 1.0 && cfg.g2 <= cfg.g1) {
        return Err(Error::InvalidParam("need 0 <= g2 <= g1 <= 1".into()));
    }
    let spread2 = cfg.g2 - cfg.g1 * cfg.g1;
    if spread2 < -1e-12 {
        return Err(Error::InvalidParam("g2 < g1^2 is not realizable".into()));
    }
    let d = spread2.max(0.0).sqrt();
    let (pa, pb) = (cfg.g1 + d, cfg.g1 - d);
    if !(0.0..=1.0).contains(&pa) || !(0.0..=1.0).contains(&pb) {
        return Err(Error::InvalidParam("moment targets leave [0,1]".into()));
    }
    cfg.y_dist.validate()?;

    let results: Vec<Result<f64>> = parallel::map_indexed(cfg.trials, |trial| {
        let mut rng = RngStream::new(cfg.seed, trial as u64);
        let mut x = Vec::with_capacity(cfg.t);
        let mut y = Vec::with_capacity(cfg.t);
        for i in 0..cfg.t {
            let g = if i % 2 == 0 { pa } else { pb };
            x.push(if rng.next_f64() < g { 1.0 } else { 0.0 });
            y.push(cfg.y_dist.draw(&mut rng));
        }
        fisher_spearman_z(&x, &y)
    });
    let mut zs = Vec::with_capacity(cfg.trials);
    for r in results {
        zs.push(r?);
    }
    let n = zs.len() as f64;
    let mean = zs.iter().sum::<f64>() / n;
    let var = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / (n - 1.0);
    let ks = ks_test_std_normal(&zs)?;
    Ok(NullZReport {
        ks,
        mean_z: mean,
        std_z: var.sqrt(),
    })
}
