//! Deterministic statistics used by every metric: correlation, least squares,
//! the 2×2 χ² test with its upper-tail p-value, Bonferroni correction and
//! aggregation over training restarts.
//!
//! All reductions go through [`CompensatedSum`] so results do not depend on
//! how the input was chunked.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated sum of a slice.
pub fn sum(values: &[f64]) -> f64 {
    values.iter().copied().collect::<CompensatedSum>().total()
}

/// Arithmetic mean; `None` for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(sum(values) / values.len() as f64)
    }
}

/// Centered second moments of two paired samples.
struct Moments {
    sxx: f64,
    syy: f64,
    sxy: f64,
    mean_x: f64,
    mean_y: f64,
}

fn moments(xs: &[f64], ys: &[f64]) -> Result<Moments> {
    if xs.len() != ys.len() {
        return Err(Error::Stats(format!(
            "length mismatch: {} x values, {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Stats(format!(
            "need at least 2 points, got {}",
            xs.len()
        )));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Stats("non-finite input value".into()));
    }
    let mean_x = mean(xs).unwrap_or(0.0);
    let mean_y = mean(ys).unwrap_or(0.0);
    let mut sxx = CompensatedSum::new();
    let mut syy = CompensatedSum::new();
    let mut sxy = CompensatedSum::new();
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx.add(dx * dx);
        syy.add(dy * dy);
        sxy.add(dx * dy);
    }
    Ok(Moments {
        sxx: sxx.total(),
        syy: syy.total(),
        sxy: sxy.total(),
        mean_x,
        mean_y,
    })
}

/// Pearson product-moment correlation.
///
/// Fails on mismatched lengths, fewer than two points, or when either sample
/// has zero variance (the coefficient is undefined there).
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let m = moments(xs, ys)?;
    if m.sxx <= 0.0 || m.syy <= 0.0 {
        return Err(Error::Stats(
            "degenerate variance: constant input to pearson_r".into(),
        ));
    }
    let r = m.sxy / (m.sxx * m.syy).sqrt();
    Ok(r.clamp(-1.0, 1.0))
}

/// Ordinary least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFitResult {
    pub slope: f64,
    pub intercept: f64,
    /// Zero when `y` is constant, where the coefficient is undefined.
    pub pearson_r: f64,
    pub n: usize,
}

impl LinearFitResult {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Least-squares fit of `ys` on `xs`. Requires non-constant `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFitResult> {
    let m = moments(xs, ys)?;
    if m.sxx <= 0.0 {
        return Err(Error::Stats(
            "degenerate variance: constant x in linear_fit".into(),
        ));
    }
    let slope = m.sxy / m.sxx;
    let intercept = m.mean_y - slope * m.mean_x;
    let pearson_r = if m.syy > 0.0 {
        (m.sxy / (m.sxx * m.syy).sqrt()).clamp(-1.0, 1.0)
    } else {
        0.0
    };
    Ok(LinearFitResult {
        slope,
        intercept,
        pearson_r,
        n: xs.len(),
    })
}

/// 2×2 table of counts. Rows are groups, columns are (event seen, not seen):
///
/// ```text
///            seen  not seen
/// group 1     a       b
/// group 2     c       d
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn row_sums(&self) -> [u64; 2] {
        [self.a + self.b, self.c + self.d]
    }

    pub fn col_sums(&self) -> [u64; 2] {
        [self.a + self.c, self.b + self.d]
    }

    /// Table with the two group rows exchanged.
    pub fn swap_rows(&self) -> Self {
        Self::new(self.c, self.d, self.a, self.b)
    }

    /// Smallest expected cell count under independence.
    pub fn min_expected(&self) -> f64 {
        let n = self.total() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let rows = self.row_sums();
        let cols = self.col_sums();
        let r = rows[0].min(rows[1]) as f64;
        let c = cols[0].min(cols[1]) as f64;
        r * c / n
    }
}

/// Outcome of a Pearson χ² test of independence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub p_value: f64,
    /// Smallest expected cell count; values below 5 make the asymptotic
    /// approximation unreliable.
    pub min_expected: f64,
}

impl ChiSquare {
    pub fn low_expected_count(&self) -> bool {
        self.min_expected < 5.0
    }
}

/// Pearson χ² statistic (one degree of freedom, no continuity correction) and
/// its upper-tail p-value.
///
/// A zero row or column marginal makes the test undefined and is reported as
/// [`Error::Untestable`].
pub fn chi_square_2x2(t: &ContingencyTable) -> Result<ChiSquare> {
    let rows = t.row_sums();
    let cols = t.col_sums();
    if t.total() == 0 || rows.contains(&0) || cols.contains(&0) {
        return Err(Error::Untestable(format!(
            "zero marginal in ({}, {}, {}, {})",
            t.a, t.b, t.c, t.d
        )));
    }
    let det = t.a as i128 * t.d as i128 - t.b as i128 * t.c as i128;
    let det = det as f64;
    let n = t.total() as f64;
    let denom = rows[0] as f64 * rows[1] as f64 * cols[0] as f64 * cols[1] as f64;
    let statistic = n * det * det / denom;
    let p_value = chi_square_p(statistic, 1)?;
    Ok(ChiSquare {
        statistic,
        p_value,
        min_expected: t.min_expected(),
    })
}

/// Upper tail `P(X >= statistic)` of the χ² distribution with `dof` degrees
/// of freedom, i.e. the regularized upper incomplete gamma `Q(dof/2, x/2)`.
pub fn chi_square_p(statistic: f64, dof: u32) -> Result<f64> {
    if dof == 0 {
        return Err(Error::Stats("chi-square dof must be positive".into()));
    }
    if statistic.is_nan() || statistic < 0.0 {
        return Err(Error::Stats(format!(
            "chi-square statistic must be non-negative, got {statistic}"
        )));
    }
    if statistic == 0.0 {
        return Ok(1.0);
    }
    if statistic.is_infinite() {
        return Ok(0.0);
    }
    Ok(regularized_gamma_q(f64::from(dof) / 2.0, statistic / 2.0).clamp(0.0, 1.0))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for positive arguments (Lanczos).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, &c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_EPS: f64 = 1e-15;
const GAMMA_MAX_ITER: usize = 10_000;

/// Regularized upper incomplete gamma `Q(s, x)`.
pub fn regularized_gamma_q(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < s + 1.0 {
        1.0 - gamma_p_series(s, x)
    } else {
        gamma_q_continued_fraction(s, x)
    }
}

fn gamma_p_series(s: f64, x: f64) -> f64 {
    let mut term = 1.0 / s;
    let mut total = term;
    let mut denom = s;
    for _ in 0..GAMMA_MAX_ITER {
        denom += 1.0;
        term *= x / denom;
        total += term;
        if term.abs() < total.abs() * GAMMA_EPS {
            break;
        }
    }
    (total.ln() - x + s * x.ln() - ln_gamma(s)).exp()
}

// Modified Lentz evaluation of the continued fraction for Q.
fn gamma_q_continued_fraction(s: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - s;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - s);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    (h.ln() - x + s * x.ln() - ln_gamma(s)).exp()
}

/// Per-test significance level after Bonferroni correction for `m` tests.
pub fn bonferroni_alpha(alpha: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Stats("Bonferroni correction needs m >= 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Stats(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(alpha / m as f64)
}

/// Mean and spread of one metric over independent training restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); zero for one restart.
    pub sample_std: f64,
    pub n_restarts: usize,
    pub raw_values: Vec<f64>,
}

impl RestartSummary {
    /// `mean±std` rounded to `decimals`, e.g. `0.37±0.03`.
    pub fn format(&self, decimals: usize) -> String {
        format!(
            "{}±{}",
            format_fixed(self.mean, decimals),
            format_fixed(self.sample_std, decimals)
        )
    }
}

/// Fixed-point rendering that never prints a negative zero.
pub fn format_fixed(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub fn aggregate_restarts(values: &[f64]) -> Result<RestartSummary> {
    let mean = mean(values).ok_or_else(|| Error::Stats("no restart values".into()))?;
    let n = values.len();
    let sample_std = if n == 1 {
        0.0
    } else {
        let ss: CompensatedSum = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        (ss.total() / (n - 1) as f64).sqrt()
    };
    Ok(RestartSummary {
        mean,
        sample_std,
        n_restarts: n,
        raw_values: values.to_vec(),
    })
}
