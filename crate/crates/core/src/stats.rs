//! Univariate screening: Welch and pooled two-sample t-tests, the
//! D'Agostino-Pearson omnibus normality test, and the Student-t machinery
//! behind them.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::RoiName;
use crate::matrix::FeatureMatrix;
use crate::texture::{entropy_feature, hurst_feature, FEATURE_COUNT, FEATURE_NAMES};

/// Relative tolerance of the incomplete-beta continued fraction.
pub const BETA_CF_TOLERANCE: f64 = 1e-12;
const BETA_CF_MAX_ITER: usize = 10_000;

/// Significance level for normality flags.
pub const NORMALITY_ALPHA: f64 = 0.05;

/// Minimum sample size for the omnibus normality test.
pub const NORMALITY_MIN_N: usize = 8;

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // the continued fraction converges fastest below the mean
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_CF_TOLERANCE {
            break;
        }
    }
    h
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t with `df`
/// degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / (df + t * t), 0.5 * df, 0.5).clamp(0.0, 1.0)
}

/// Student-t cumulative distribution function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_sided_p(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TTestKind {
    /// Unequal variances, Welch-Satterthwaite degrees of freedom.
    #[default]
    Welch,
    /// Equal variances, `n_a + n_b - 2` degrees of freedom.
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TTestResult {
    pub feature_name: String,
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub group_means: (f64, f64),
    pub group_sizes: (usize, usize),
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// Two-sample t-test of `a` against `b`; positive `t` means `mean(a) > mean(b)`.
pub fn t_test(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "t-test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (se2, df) = match kind {
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
            (se2, df)
        }
        TTestKind::Pooled => {
            let df = na + nb - 2.0;
            let sp = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            (sp * (1.0 / na + 1.0 / nb), df)
        }
    };
    let diff = ma - mb;
    let (t, df, p) = if se2 > 0.0 {
        let t = diff / se2.sqrt();
        (t, df, student_t_two_sided_p(t, df))
    } else {
        // both groups constant
        let df = na + nb - 2.0;
        if diff == 0.0 {
            (0.0, df, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, df, 0.0)
        }
    };
    Ok(TTestResult {
        feature_name: String::new(),
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
        group_means: (ma, mb),
        group_sizes: (a.len(), b.len()),
    })
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    t_test(a, b, TTestKind::Welch)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalityTest {
    pub statistic: f64,
    pub p_value: f64,
    pub skew_z: f64,
    pub kurtosis_z: f64,
}

impl NormalityTest {
    pub fn is_normal(&self) -> bool {
        self.p_value >= NORMALITY_ALPHA
    }
}

/// D'Agostino-Pearson omnibus test: squared skewness and kurtosis z-scores
/// summed and referred to chi-square with 2 degrees of freedom.
pub fn normality_check(sample: &[f64]) -> Result<NormalityTest> {
    let n = sample.len();
    if n < NORMALITY_MIN_N {
        return Err(Error::InsufficientData(format!(
            "normality test needs at least {NORMALITY_MIN_N} values, got {n}"
        )));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("normality sample"));
    }
    let nf = n as f64;
    let mean = sample.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in sample {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if !(m2 > 0.0) {
        return Err(Error::InsufficientData("normality test on a constant sample".into()));
    }
    let skew_z = skew_z(m3 / m2.powf(1.5), nf);
    let kurtosis_z = kurtosis_z(m4 / (m2 * m2), nf);
    let statistic = skew_z * skew_z + kurtosis_z * kurtosis_z;
    Ok(NormalityTest {
        statistic,
        p_value: (-0.5 * statistic).exp(),
        skew_z,
        kurtosis_z,
    })
}

// D'Agostino (1970) transform of sample skewness.
fn skew_z(b1: f64, n: f64) -> f64 {
    let y = b1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let y = if y == 0.0 { 1.0 } else { y };
    let r = y / alpha;
    delta * (r + (r * r + 1.0).sqrt()).ln()
}

// Anscombe-Glynn (1983) transform of sample kurtosis.
fn kurtosis_z(b2: f64, n: f64) -> f64 {
    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let var_b2 = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / var_b2.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    (term1 - term2) / (2.0 / (9.0 * a)).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenRow {
    pub test: TTestResult,
    /// Smaller of the two within-class omnibus p-values; `None` when a class
    /// is too small to test.
    pub normality_p: Option<f64>,
}

impl ScreenRow {
    pub fn normal_at_alpha(&self) -> Option<bool> {
        self.normality_p.map(|p| p >= NORMALITY_ALPHA)
    }
}

/// One t-test per feature (cases vs controls) in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenTable {
    pub rows: Vec<ScreenRow>,
    pub kind: TTestKind,
}

pub fn screen_features(matrix: &FeatureMatrix, kind: TTestKind) -> Result<ScreenTable> {
    matrix.require_both_classes()?;
    let rows = (0..FEATURE_COUNT)
        .map(|j| {
            let (cases, controls) = matrix.split_by_class(j);
            let mut test = t_test(&cases, &controls, kind)?;
            test.feature_name = FEATURE_NAMES[j].to_owned();
            let normality_p = match (normality_check(&cases), normality_check(&controls)) {
                (Ok(a), Ok(b)) => Some(a.p_value.min(b.p_value)),
                _ => None,
            };
            Ok(ScreenRow { test, normality_p })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScreenTable { rows, kind })
}

impl ScreenTable {
    pub fn p_value(&self, feature: usize) -> f64 {
        self.rows[feature].test.p_value
    }

    /// Features whose p-value is below `alpha`.
    pub fn significant(&self, alpha: f64) -> Vec<usize> {
        (0..self.rows.len()).filter(|&j| self.p_value(j) < alpha).collect()
    }

    /// CSV `feature,t,df,p,normality_p,normal_at_0.05`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("feature,t,df,p,normality_p,normal_at_0.05\n");
        for row in &self.rows {
            let t = &row.test;
            let (np, flag) = match row.normality_p {
                Some(p) => (format!("{p:e}"), (p >= NORMALITY_ALPHA).to_string()),
                None => ("NA".into(), "NA".into()),
            };
            writeln!(
                s,
                "{},{},{},{:e},{},{}",
                t.feature_name, t.t_statistic, t.degrees_of_freedom, t.p_value, np, flag
            )
            .expect("writing to a String cannot fail");
        }
        s
    }

    /// Two-row p-value grid (H over E, columns F0..T3); values below 0.01
    /// print as `<0.01`.
    pub fn grid(&self) -> String {
        let cell = |p: f64| {
            if p < 0.01 {
                "<0.01".to_owned()
            } else {
                format!("{p:.2}")
            }
        };
        let mut s = format!("{:<4}", "");
        for roi in RoiName::ALL {
            write!(s, " | {:>6}", roi.as_str()).unwrap();
        }
        s.push('\n');
        s.push_str(&"-".repeat(4 + 9 * 6));
        s.push('\n');
        for (label, index) in [("H", hurst_feature as fn(RoiName) -> usize), ("E", entropy_feature)] {
            write!(s, "{label:<4}").unwrap();
            for roi in RoiName::ALL {
                write!(s, " | {:>6}", cell(self.p_value(index(roi)))).unwrap();
            }
            s.push('\n');
        }
        s
    }
}
