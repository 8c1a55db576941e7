//! Per-ROI texture descriptors: Hurst coefficient and Shannon entropy.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::{extract_patch, Label, RoiLayout, RoiName};
use crate::raster::{Image16, Patch, MAX_INTENSITY};

pub const FEATURE_COUNT: usize = 12;

/// Canonical feature order: Hurst over `[F0, F1, T0..T3]`, then entropy.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "H_F0", "H_F1", "H_T0", "H_T1", "H_T2", "H_T3", "E_F0", "E_F1", "E_T0", "E_T1", "E_T2", "E_T3",
];

/// Smallest patch side the Hurst estimator accepts.
pub const MIN_HURST_SIDE: usize = 16;

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|&n| n == name)
}

pub fn hurst_feature(roi: RoiName) -> usize {
    roi.index()
}

pub fn entropy_feature(roi: RoiName) -> usize {
    6 + roi.index()
}

const BINS: usize = MAX_INTENSITY as usize + 1;

/// Shannon entropy in bits of the patch's exact-intensity histogram.
pub fn entropy(patch: &Patch) -> f64 {
    // two interleaved lanes break the dependency between equal neighbours
    let mut lanes = [[0u32; 2]; BINS];
    let mut pairs = patch.pixels().chunks_exact(2);
    for pair in &mut pairs {
        lanes[usize::from(pair[0]) & (BINS - 1)][0] += 1;
        lanes[usize::from(pair[1]) & (BINS - 1)][1] += 1;
    }
    for &v in pairs.remainder() {
        lanes[usize::from(v) & (BINS - 1)][0] += 1;
    }
    let total: Vec<u32> = lanes.iter().map(|l| l[0] + l[1]).collect();
    entropy_of_counts(&total)
}

/// Fixed-point resolution of the `c log2 c` terms.
const TERM_SCALE: f64 = (1u64 << 40) as f64;
const TERM_TABLE_LEN: usize = 4096;

fn count_log_term(c: u32) -> u128 {
    (f64::from(c) * f64::from(c).log2() * TERM_SCALE) as u128
}

/// `c log2 c` in fixed point for small counts, which dominate real histograms.
fn count_log_table() -> &'static [u64] {
    static TABLE: OnceLock<Vec<u64>> = OnceLock::new();
    TABLE.get_or_init(|| (0..TERM_TABLE_LEN as u32).map(|c| count_log_term(c) as u64).collect())
}

/// Entropy in bits of the empirical distribution given by `counts`.
pub fn entropy_of_counts(counts: &[u32]) -> f64 {
    let n: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if n == 0 {
        return 0.0;
    }
    // log2 N - (1/N) sum c log2 c keeps k equiprobable symbols exact. The
    // terms are summed as fixed-point integers so the result does not depend
    // on bin order.
    let table = count_log_table();
    let weighted: u128 = counts
        .iter()
        .map(|&c| match table.get(c as usize) {
            Some(&t) => u128::from(t),
            None => count_log_term(c),
        })
        .sum();
    let h = (n as f64).log2() - weighted as f64 / TERM_SCALE / n as f64;
    h.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HurstEstimate {
    pub value: f64,
    /// The raw regression slope fell outside `[0, 1]` and was clamped.
    pub clamped: bool,
    pub raw: f64,
}

/// A strategy for estimating the Hurst coefficient of a texture.
pub trait HurstEstimator: Send + Sync {
    fn name(&self) -> &'static str;

    fn estimate_field(&self, width: usize, height: usize, values: &[f64]) -> Result<HurstEstimate>;

    fn estimate(&self, patch: &Patch) -> Result<HurstEstimate> {
        let values: Vec<f64> = patch.pixels().iter().map(|&v| f64::from(v)).collect();
        self.estimate_field(patch.width(), patch.height(), &values)
    }
}

/// Log-log regression of the mean squared increment against dyadic lag.
///
/// For each lag `d = 1, 2, 4, ...` with `4d <= min(width, height)`, the mean
/// of `|I(p + d e) - I(p)|^2` is taken separately along rows and columns and
/// the two orientation means are averaged. Half the fitted slope of
/// `log m(d)` on `log d` is the estimate. Lags with zero mean increment are
/// dropped; fewer than three remaining lags make roughness undefined.
#[derive(Debug, Clone, Copy, Default)]
pub struct IncrementVariance;

impl IncrementVariance {
    pub fn lags(width: usize, height: usize) -> Vec<usize> {
        let side = width.min(height);
        std::iter::successors(Some(1usize), |d| Some(d * 2))
            .take_while(|d| 4 * d <= side)
            .collect()
    }

    pub fn mean_squared_increment(width: usize, height: usize, values: &[f64], lag: usize) -> f64 {
        let mut horizontal = 0.0;
        for row in values.chunks_exact(width) {
            for (a, b) in row.iter().zip(&row[lag..]) {
                let d = b - a;
                horizontal += d * d;
            }
        }
        horizontal /= ((width - lag) * height) as f64;
        let mut vertical = 0.0;
        for y in 0..height - lag {
            let top = &values[y * width..(y + 1) * width];
            let bottom = &values[(y + lag) * width..(y + lag + 1) * width];
            for (a, b) in top.iter().zip(bottom) {
                let d = b - a;
                vertical += d * d;
            }
        }
        vertical /= (width * (height - lag)) as f64;
        0.5 * (horizontal + vertical)
    }
}

impl HurstEstimator for IncrementVariance {
    fn name(&self) -> &'static str {
        "increment-variance"
    }

    fn estimate_field(&self, width: usize, height: usize, values: &[f64]) -> Result<HurstEstimate> {
        if width < MIN_HURST_SIDE || height < MIN_HURST_SIDE {
            return Err(Error::PatchTooSmall {
                what: "Hurst estimation",
                width,
                height,
                min: MIN_HURST_SIDE,
            });
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("texture field"));
        }
        if values.iter().all(|&v| v == values[0]) {
            return Err(Error::UndefinedRoughness("constant patch has no increments"));
        }
        let points: Vec<(f64, f64)> = Self::lags(width, height)
            .into_iter()
            .filter_map(|d| {
                let m = Self::mean_squared_increment(width, height, values, d);
                (m > 0.0).then(|| ((d as f64).ln(), m.ln()))
            })
            .collect();
        if points.len() < 3 {
            return Err(Error::UndefinedRoughness(
                "fewer than three lags with non-zero increments",
            ));
        }
        let raw = 0.5 * least_squares_slope(&points);
        let value = raw.clamp(0.0, 1.0);
        Ok(HurstEstimate {
            value,
            clamped: value != raw,
            raw,
        })
    }
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (sxy, sxx) = points.iter().fold((0.0, 0.0), |(sxy, sxx), &(x, y)| {
        (sxy + (x - mx) * (y - my), sxx + (x - mx) * (x - mx))
    });
    sxy / sxx
}

/// Hurst coefficient with the default estimator.
pub fn hurst(patch: &Patch) -> Result<HurstEstimate> {
    IncrementVariance.estimate(patch)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub subject_id: String,
    pub values: [f64; FEATURE_COUNT],
    pub label: Label,
    /// Per-ROI (canonical order) flag for clamped Hurst slopes.
    pub hurst_clamped: [bool; 6],
}

/// Hurst and entropy of one patch.
pub fn describe_patch(patch: &Patch, estimator: &dyn HurstEstimator) -> Result<(HurstEstimate, f64)> {
    let h = estimator.estimate(patch)?;
    Ok((h, entropy(patch)))
}

/// Builds a vector from six per-ROI patches in canonical order.
pub fn feature_vector_from_patches(
    patches: &[Patch; 6],
    subject_id: impl Into<String>,
    label: Label,
    estimator: &dyn HurstEstimator,
) -> Result<FeatureVector> {
    let mut values = [0.0; FEATURE_COUNT];
    let mut hurst_clamped = [false; 6];
    let mut failures = Vec::new();
    for (roi, patch) in RoiName::ALL.into_iter().zip(patches) {
        values[entropy_feature(roi)] = entropy(patch);
        match estimator.estimate(patch) {
            Ok(h) => {
                values[hurst_feature(roi)] = h.value;
                hurst_clamped[roi.index()] = h.clamped;
            }
            Err(e) => failures.push((roi, e)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::RoiFailures(failures));
    }
    Ok(FeatureVector {
        subject_id: subject_id.into(),
        values,
        label,
        hurst_clamped,
    })
}

/// Extracts all six ROIs and computes both descriptors for each.
pub fn feature_vector(
    image: &Image16,
    layout: &RoiLayout,
    subject_id: impl Into<String>,
    label: Label,
) -> Result<FeatureVector> {
    let mut patches = Vec::with_capacity(6);
    let mut failures = Vec::new();
    for roi in layout.rois() {
        match extract_patch(image, roi) {
            Ok(p) => patches.push(p),
            Err(e) => failures.push((roi.name, e)),
        }
    }
    if !failures.is_empty() {
        return Err(Error::RoiFailures(failures));
    }
    let patches: [Patch; 6] = patches.try_into().expect("six ROIs");
    feature_vector_from_patches(&patches, subject_id, label, &IncrementVariance)
}
