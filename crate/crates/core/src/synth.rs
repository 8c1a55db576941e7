//! Synthetic ground truth: fractional Brownian surfaces with a prescribed
//! Hurst exponent, entropy-controlled intensity fields, and planted
//! case/control cohorts built on top of them.

use std::collections::BTreeMap;
use std::path::Path;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::mix64;
use crate::geometry::{AxisInterval, Label, LandmarkSet, Laterality, Point, RoiLayout, RoiName};
use crate::landmarks::LandmarkRecord;
use crate::matrix::FeatureMatrix;
use crate::pipeline::extract_subject;
use crate::raster::{Image16, Patch, MAX_INTENSITY};
use crate::texture::{
    entropy, entropy_feature, feature_vector_from_patches, hurst_feature, FeatureVector, IncrementVariance,
    FEATURE_NAMES,
};

pub const FBM_MIN_SIZE: usize = 16;
pub const FBM_MAX_SIZE: usize = 4096;
/// Open interval of accepted generator Hurst values.
pub const FBM_HURST_RANGE: (f64, f64) = (0.05, 0.95);
/// Largest FFT grid side used for oversampled synthesis.
const MAX_OVERSAMPLED_GRID: usize = 2048;
const OVERSAMPLE: usize = 4;
/// Aliased images summed explicitly on each side of the base spectrum.
const ALIAS_NEAR: i64 = 1;
/// Radius out to which the remaining aliased images are summed once per H.
const ALIAS_FAR: i64 = 60;
/// Allowed gap between a requested and achieved entropy.
pub const ENTROPY_TOLERANCE: f64 = 0.05;
/// Gain search for fBm textures stops once this close to the target.
const TEXTURE_ENTROPY_STOP: f64 = 0.005;

/// Spectral synthesis of isotropic 2-D fBm on a periodic `grid x grid`
/// lattice. The power at frequency `f` is `|f|^-(2H+2)` summed over its
/// aliases, which is the spectrum of a continuous surface sampled at the
/// lattice points; fields are cut from the top-left of a grid several times
/// larger than the request so the missing long wavelengths barely matter.
#[derive(Debug, Clone)]
pub struct SpectralFbm {
    hurst: f64,
    grid: usize,
    amplitude: Arc<Vec<f64>>,
}

fn check_hurst(h: f64) -> Result<()> {
    if !(h > FBM_HURST_RANGE.0 && h < FBM_HURST_RANGE.1) {
        return Err(Error::InvalidParameter(format!(
            "generator Hurst {h} outside ({}, {})",
            FBM_HURST_RANGE.0, FBM_HURST_RANGE.1
        )));
    }
    Ok(())
}

fn check_side(side: usize) -> Result<()> {
    if !(FBM_MIN_SIZE..=FBM_MAX_SIZE).contains(&side) {
        return Err(Error::InvalidParameter(format!(
            "fBm size {side} outside {FBM_MIN_SIZE}..={FBM_MAX_SIZE}"
        )));
    }
    Ok(())
}

impl SpectralFbm {
    pub fn new(hurst: f64, width: usize, height: usize) -> Result<Self> {
        check_hurst(hurst)?;
        check_side(width)?;
        check_side(height)?;
        let base = width.max(height).next_power_of_two();
        let grid = base.max((base * OVERSAMPLE).min(MAX_OVERSAMPLED_GRID));
        Ok(Self {
            hurst,
            grid,
            amplitude: Arc::new(aliased_amplitude(hurst, grid)),
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn grid(&self) -> usize {
        self.grid
    }

    /// Row-major `width x height` field, deterministic per seed.
    pub fn field(&self, width: usize, height: usize, seed: u64) -> Result<Vec<f64>> {
        if width > self.grid || height > self.grid || width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "field {width}x{height} does not fit grid {}",
                self.grid
            )));
        }
        let n = self.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf: Vec<Complex64> = self
            .amplitude
            .iter()
            .map(|&a| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re * a, im * a)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_inverse(n);
        fft.process(&mut buf);
        transpose_square(&mut buf, n);
        // only the first `width` transposed rows (original columns) are kept
        fft.process(&mut buf[..n * width]);
        let mut out = vec![0.0; width * height];
        for x in 0..width {
            for y in 0..height {
                out[y * width + x] = buf[x * n + y].re;
            }
        }
        Ok(out)
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            buf.swap(i * n + j, j * n + i);
        }
    }
}

/// `ln |f + (a, b)|^2` for the nine nearest aliases of every frequency in
/// the non-negative octant `0 <= j <= i <= grid/2`, shared by all Hurst values.
#[derive(Debug)]
struct AliasLogRadii {
    half: usize,
    /// Nine entries per octant cell, `f64::NEG_INFINITY` marking the origin.
    ln_r2: Vec<f64>,
}

const ALIAS_CACHE_MAX_GRID: usize = 512;

impl AliasLogRadii {
    fn new(grid: usize) -> Self {
        let half = grid / 2;
        let mut ln_r2 = vec![0.0; (half + 1) * (half + 1) * 9];
        for i in 0..=half {
            for j in 0..=i {
                let (fx, fy) = (i as f64 / grid as f64, j as f64 / grid as f64);
                let cell = &mut ln_r2[(i * (half + 1) + j) * 9..][..9];
                let mut k = 0;
                for a in -ALIAS_NEAR..=ALIAS_NEAR {
                    for b in -ALIAS_NEAR..=ALIAS_NEAR {
                        let (u, v) = (fx + a as f64, fy + b as f64);
                        cell[k] = (u * u + v * v).ln();
                        k += 1;
                    }
                }
            }
        }
        Self { half, ln_r2 }
    }

    /// Small grids are kept for reuse; cohorts draw many Hurst values on them.
    fn cached(grid: usize) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<AliasLogRadii>>>> = OnceLock::new();
        if grid > ALIAS_CACHE_MAX_GRID {
            return Arc::new(Self::new(grid));
        }
        let cache = CACHE.get_or_init(Default::default);
        if let Some(hit) = cache.lock().expect("alias cache").get(&grid) {
            return Arc::clone(hit);
        }
        let built = Arc::new(Self::new(grid));
        Arc::clone(cache.lock().expect("alias cache").entry(grid).or_insert(built))
    }
}

fn aliased_amplitude(hurst: f64, grid: usize) -> Vec<f64> {
    let half_exp = -(hurst + 1.0);
    // far aliases: nearly constant over the base cell, summed once
    let mut far = 0.0;
    for a in -ALIAS_FAR..=ALIAS_FAR {
        for b in -ALIAS_FAR..=ALIAS_FAR {
            if a.abs().max(b.abs()) > ALIAS_NEAR {
                far += ((a * a + b * b) as f64).powf(half_exp);
            }
        }
    }
    // continuum beyond the summed square
    let p_minus_2 = 2.0 * hurst;
    far += 2.0 * std::f64::consts::PI / p_minus_2 * (ALIAS_FAR as f64 + 0.5).powf(-p_minus_2);

    // the spectrum is symmetric in sign and axis swap; compute one octant
    let radii = AliasLogRadii::cached(grid);
    let half = radii.half;
    let mut octant = vec![0.0; (half + 1) * (half + 1)];
    for i in 0..=half {
        for j in 0..=i {
            let cell = &radii.ln_r2[(i * (half + 1) + j) * 9..][..9];
            let s: f64 = far + cell.iter().map(|&l| (half_exp * l).exp()).sum::<f64>();
            octant[i * (half + 1) + j] = s.sqrt();
            octant[j * (half + 1) + i] = s.sqrt();
        }
    }
    let fold = |k: usize| if k <= half { k } else { grid - k };
    let mut amp = vec![0.0; grid * grid];
    for ky in 0..grid {
        let row = &octant[fold(ky) * (half + 1)..][..half + 1];
        for (kx, a) in amp[ky * grid..][..grid].iter_mut().enumerate() {
            *a = row[fold(kx)];
        }
    }
    amp[0] = 0.0;
    amp
}

/// Linear map of `field` onto `0..=16383`, rounded.
fn rescale_full_range(field: &[f64]) -> Vec<u16> {
    let (lo, hi) = field
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let top = f64::from(MAX_INTENSITY);
    field
        .iter()
        .map(|&v| if span > 0.0 { ((v - lo) / span * top).round() as u16 } else { 0 })
        .collect()
}

/// Square fBm patch with Hurst exponent `hurst`, spread over the 14-bit range.
pub fn fbm_patch(hurst: f64, size: usize, seed: u64) -> Result<Patch> {
    let field = SpectralFbm::new(hurst, size, size)?.field(size, size, seed)?;
    Patch::new(size, size, rescale_full_range(&field))
}

fn standardized(field: &[f64]) -> Vec<f64> {
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let sd = (field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    field.iter().map(|v| (v - mean) / sd).collect()
}

fn quantize_around_mid(z: &[f64], scale: f64) -> Vec<u16> {
    let mid = f64::from(MAX_INTENSITY / 2 + 1);
    z.iter()
        .map(|v| (mid + scale * v).round().clamp(0.0, f64::from(MAX_INTENSITY)) as u16)
        .collect()
}

/// fBm texture whose intensity spread is tuned so the patch entropy hits
/// `target_bits`. Only the gain changes, so the roughness is untouched up to
/// quantization.
pub fn textured_patch(
    generator: &SpectralFbm,
    target_bits: f64,
    width: usize,
    height: usize,
    seed: u64,
) -> Result<Patch> {
    let z = standardized(&generator.field(width, height, seed)?);
    let measure = |scale: f64| -> Result<(f64, Patch)> {
        let p = Patch::new(width, height, quantize_around_mid(&z, scale))?;
        Ok((entropy(&p), p))
    };
    // entropy of a quantized Gaussian of sd s is about log2(s) + 2.05 bits
    let (mut lo, mut hi) = ((-6.0f64).exp2(), 12.0f64.exp2());
    let mut best = measure(hi)?;
    if best.0 < target_bits - ENTROPY_TOLERANCE {
        return Err(Error::UnreachableEntropy {
            target: target_bits,
            reason: format!("{width}x{height} texture peaks at {:.3} bits", best.0),
        });
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        let (e, p) = measure(mid)?;
        if (e - target_bits).abs() < (best.0 - target_bits).abs() {
            best = (e, p);
        }
        if e < target_bits {
            lo = mid;
        } else {
            hi = mid;
        }
        if (best.0 - target_bits).abs() <= TEXTURE_ENTROPY_STOP || hi / lo < 1.0 + 1e-9 {
            break;
        }
    }
    if (best.0 - target_bits).abs() > ENTROPY_TOLERANCE {
        return Err(Error::UnreachableEntropy {
            target: target_bits,
            reason: format!("closest achievable was {:.3} bits", best.0),
        });
    }
    Ok(best.1)
}

/// Largest-remainder split of `total` pixels over a point mass of weight
/// `w` plus `k` equiprobable symbols.
fn mixture_counts(total: usize, k: usize, w: f64) -> Vec<u32> {
    let each = (1.0 - w) / k as f64;
    let probs: Vec<f64> = (0..k).map(|i| if i == 0 { w + each } else { each }).collect();
    let exact: Vec<f64> = probs.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<u32> = exact.iter().map(|e| e.floor() as u32).collect();
    let assigned: usize = counts.iter().map(|&c| c as usize).sum();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Patch whose intensity histogram has entropy within 0.05 bits of
/// `target_bits`: a uniform support of `⌈2^target⌉` random intensities mixed
/// with a point mass, the mixing weight found by bisection. Pixel positions
/// are shuffled.
pub fn entropy_shaped_patch(target_bits: f64, size: usize, seed: u64) -> Result<Patch> {
    if !(target_bits > 0.5 && target_bits <= 14.0) {
        return Err(Error::InvalidParameter(format!(
            "entropy target {target_bits} outside (0.5, 14]"
        )));
    }
    if size == 0 {
        return Err(Error::InvalidParameter("patch size must be positive".into()));
    }
    let total = size * size;
    let k = target_bits.exp2().ceil() as usize;
    if k > usize::from(MAX_INTENSITY) + 1 || (total as f64).log2() < target_bits - ENTROPY_TOLERANCE || total < k {
        return Err(Error::UnreachableEntropy {
            target: target_bits,
            reason: format!("{total} pixels cannot carry {k} equiprobable symbols"),
        });
    }
    let h = |w: f64| crate::texture::entropy_of_counts(&mixture_counts(total, k, w));
    // entropy falls as the point mass grows
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > target_bits {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = if (h(lo) - target_bits).abs() <= (h(hi) - target_bits).abs() { lo } else { hi };
    let counts = mixture_counts(total, k, w);
    let achieved = crate::texture::entropy_of_counts(&counts);
    if (achieved - target_bits).abs() > ENTROPY_TOLERANCE {
        return Err(Error::UnreachableEntropy {
            target: target_bits,
            reason: format!("closest achievable was {achieved:.3} bits"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut symbols: Vec<u16> = (0..=MAX_INTENSITY).collect();
    symbols.shuffle(&mut rng);
    let mut pixels = Vec::with_capacity(total);
    for (sym, &c) in symbols.iter().zip(&counts) {
        pixels.extend(std::iter::repeat(*sym).take(c as usize));
    }
    pixels.shuffle(&mut rng);
    Patch::new(size, size, pixels)
}

/// Class-conditional generator targets for a synthetic cohort. Per-ROI arrays
/// follow the canonical order `[F0, F1, T0, T1, T2, T3]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub n_case: usize,
    pub n_control: usize,
    pub h_case: [f64; 6],
    pub h_control: [f64; 6],
    pub entropy_case: [f64; 6],
    pub entropy_control: [f64; 6],
    /// Tibial ROI width in pixels (also the femoral square side); a
    /// multiple of 35 so the rendered layout falls on whole pixels.
    pub patch_size: usize,
    /// Per-subject spread of the generator Hurst value.
    pub noise_sd: f64,
    /// Per-subject spread of the entropy target, in bits.
    pub entropy_noise_sd: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_case: 67,
            n_control: 86,
            h_case: [0.35; 6],
            h_control: [0.35; 6],
            entropy_case: [10.0; 6],
            entropy_control: [10.0; 6],
            patch_size: 70,
            noise_sd: 0.03,
            entropy_noise_sd: 0.3,
            seed: 0,
        }
    }
}

/// Streams for per-subject randomness.
const STREAM_LABELS: u64 = 1;
const STREAM_SUBJECT: u64 = 2;

impl CohortSpec {
    pub fn null(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// Shifts the case-class Hurst target of `roi` by `delta`.
    pub fn with_hurst_effect(mut self, roi: RoiName, delta: f64) -> Self {
        self.h_case[roi.index()] = self.h_control[roi.index()] + delta;
        self
    }

    pub fn with_entropy_effect(mut self, roi: RoiName, delta: f64) -> Self {
        self.entropy_case[roi.index()] = self.entropy_control[roi.index()] + delta;
        self
    }

    pub fn n_subjects(&self) -> usize {
        self.n_case + self.n_control
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(format!("cohort spec: {m}")));
        if self.n_case == 0 || self.n_control == 0 {
            return bad("both classes need at least one subject".into());
        }
        for h in self.h_case.iter().chain(&self.h_control) {
            if !(*h > FBM_HURST_RANGE.0 && *h < FBM_HURST_RANGE.1) {
                return bad(format!("Hurst target {h} outside {FBM_HURST_RANGE:?}"));
            }
        }
        for e in self.entropy_case.iter().chain(&self.entropy_control) {
            if !(*e > 0.0 && *e < 14.0) {
                return bad(format!("entropy target {e} outside (0, 14)"));
            }
        }
        if self.patch_size == 0 || self.patch_size % 35 != 0 {
            return bad(format!("patch_size {} is not a positive multiple of 35", self.patch_size));
        }
        if tibia_height(self.patch_size) < FBM_MIN_SIZE {
            return bad(format!("patch_size {} too small for Hurst estimation", self.patch_size));
        }
        if !(self.noise_sd >= 0.0 && self.entropy_noise_sd >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        Ok(())
    }

    /// Features whose class targets differ.
    pub fn informative_features(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for roi in RoiName::ALL {
            let i = roi.index();
            if self.h_case[i] != self.h_control[i] {
                out.push(hurst_feature(roi));
            }
        }
        for roi in RoiName::ALL {
            let i = roi.index();
            if self.entropy_case[i] != self.entropy_control[i] {
                out.push(entropy_feature(roi));
            }
        }
        out
    }

    /// Labels in subject order: `n_case` ones and `n_control` zeros,
    /// shuffled by the cohort seed.
    pub fn labels(&self) -> Vec<u8> {
        let mut labels: Vec<u8> = std::iter::repeat(1)
            .take(self.n_case)
            .chain(std::iter::repeat(0).take(self.n_control))
            .collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(mix64(self.seed, STREAM_LABELS)));
        labels
    }

    pub fn subject_id(index: usize) -> String {
        format!("S{index:04}")
    }
}

fn tibia_height(side: usize) -> usize {
    side / 35 * 32
}

/// Per-subject generator draws.
#[derive(Debug, Clone, PartialEq)]
struct SubjectDraw {
    hurst: [f64; 6],
    entropy: [f64; 6],
    laterality: Laterality,
    patch_seeds: [u64; 6],
}

fn draw_subject(spec: &CohortSpec, index: usize, label: u8) -> SubjectDraw {
    let seed = mix64(mix64(spec.seed, STREAM_SUBJECT), index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hn = Normal::new(0.0, spec.noise_sd.max(0.0)).expect("finite sd");
    let en = Normal::new(0.0, spec.entropy_noise_sd.max(0.0)).expect("finite sd");
    let (h_class, e_class) = if label == 1 {
        (&spec.h_case, &spec.entropy_case)
    } else {
        (&spec.h_control, &spec.entropy_control)
    };
    let margin = 1e-3;
    let hurst = std::array::from_fn(|i| {
        (h_class[i] + hn.sample(&mut rng)).clamp(FBM_HURST_RANGE.0 + margin, FBM_HURST_RANGE.1 - margin)
    });
    let entropy = std::array::from_fn(|i| (e_class[i] + en.sample(&mut rng)).clamp(0.6, 13.9));
    // roughly the 64/153 share of right knees
    let laterality = if rng.random_range(0..153) < 64 { Laterality::Right } else { Laterality::Left };
    let patch_seeds = std::array::from_fn(|i| mix64(seed, 100 + i as u64));
    SubjectDraw { hurst, entropy, laterality, patch_seeds }
}

fn roi_dims(spec: &CohortSpec, roi: RoiName) -> (usize, usize) {
    match roi {
        RoiName::F0 | RoiName::F1 => (spec.patch_size, spec.patch_size),
        _ => (spec.patch_size, tibia_height(spec.patch_size)),
    }
}

fn subject_patches(spec: &CohortSpec, draw: &SubjectDraw) -> Result<[Patch; 6]> {
    let patches = RoiName::ALL
        .iter()
        .map(|&roi| {
            let i = roi.index();
            let (w, h) = roi_dims(spec, roi);
            let gen = SpectralFbm::new(draw.hurst[i], w, h)?;
            Ok(textured_patch(&gen, draw.entropy[i], w, h, draw.patch_seeds[i])?.with_roi(roi))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(patches.try_into().expect("six patches"))
}

/// Synthetic radiograph for one subject: the six textures painted into a
/// flat canvas at the positions the layout machinery computes from the
/// returned landmarks. Right knees are delivered mirrored, as they would
/// arrive from a scanner.
pub fn render_subject(spec: &CohortSpec, index: usize) -> Result<(Image16, LandmarkSet)> {
    spec.validate()?;
    let labels = spec.labels();
    let label = labels[index];
    let draw = draw_subject(spec, index, label);
    let patches = subject_patches(spec, &draw)?;
    let (image, landmarks) = render_canvas(spec, index, label, &draw, &patches)?;
    Ok((image, landmarks))
}

const SYNTH_PIXEL_SPACING: f64 = 0.075;
const CANVAS_MARGIN: f64 = 40.0;
const JOINT_GAP: f64 = 20.0;
const BACKGROUND: u16 = 4096;

fn render_canvas(
    spec: &CohortSpec,
    index: usize,
    label: u8,
    draw: &SubjectDraw,
    patches: &[Patch; 6],
) -> Result<(Image16, LandmarkSet)> {
    let m = (spec.patch_size / 35) as f64;
    let plateau = 200.0 * m;
    let condyle = 160.0 * m;
    let side = spec.patch_size as f64;
    let offset = (crate::geometry::FEMORAL_OFFSET_MM / SYNTH_PIXEL_SPACING).round();
    let x0 = CANVAS_MARGIN;
    let tip_y = CANVAS_MARGIN + offset + side;
    let plateau_y = tip_y + JOINT_GAP;
    // odd multiples need a half-pixel shift for the femoral squares to land
    // on whole pixels
    let tip_x = x0 + 20.0 * m + if spec.patch_size % 70 == 0 { 0.0 } else { 0.5 };
    let width = (x0 + plateau + CANVAS_MARGIN) as usize;
    let height = (plateau_y + 0.23 * plateau + CANVAS_MARGIN).ceil() as usize;

    let landmarks = LandmarkSet {
        subject_id: CohortSpec::subject_id(index),
        medial_plateau: Point::new(x0, plateau_y),
        lateral_plateau: Point::new(x0 + plateau, plateau_y),
        medial_condyle_tip: Point::new(tip_x, tip_y),
        lateral_condyle_tip: Point::new(tip_x + condyle, tip_y),
        medial_condyle_extent: AxisInterval::new(0.0, 72.0 * m),
        lateral_condyle_extent: AxisInterval::new(88.0 * m, 160.0 * m),
        pixel_spacing: SYNTH_PIXEL_SPACING,
        laterality: Laterality::Left,
        label: Label::from_binary(label).expect("binary label"),
    };
    let layout = RoiLayout::from_landmarks(&landmarks)?;
    let mut image = Image16::filled(width, height, BACKGROUND);
    for (roi, patch) in layout.rois().iter().zip(patches) {
        let ox = roi.origin.x.round() as usize;
        let oy = roi.origin.y.round() as usize;
        debug_assert!((roi.origin.x - ox as f64).abs() < 1e-6 && (roi.origin.y - oy as f64).abs() < 1e-6);
        debug_assert_eq!(roi.grid_size(), (patch.width(), patch.height()));
        for t in 0..patch.height() {
            for s in 0..patch.width() {
                image.set(ox + s, oy + t, patch.get(s, t));
            }
        }
    }
    if draw.laterality == Laterality::Right {
        let mirrored = LandmarkSet { laterality: Laterality::Right, ..landmarks.mirrored(width) };
        Ok((image.mirrored(), mirrored))
    } else {
        Ok((image, landmarks))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SynthMode {
    /// Describe generated patches directly.
    #[default]
    Fast,
    /// Render radiographs and run them through landmark layout and extraction.
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub informative_features: Vec<String>,
    /// Per informative feature: `(case target, control target)`.
    pub effects: BTreeMap<String, (f64, f64)>,
    pub spec: CohortSpec,
}

impl GroundTruth {
    pub fn from_spec(spec: &CohortSpec) -> Self {
        let informative = spec.informative_features();
        let effects = informative
            .iter()
            .map(|&j| {
                let roi = RoiName::ALL[j % 6];
                let (case, control) = if j < 6 {
                    (spec.h_case[roi.index()], spec.h_control[roi.index()])
                } else {
                    (spec.entropy_case[roi.index()], spec.entropy_control[roi.index()])
                };
                (FEATURE_NAMES[j].to_owned(), (case, control))
            })
            .collect();
        Self {
            informative_features: informative.iter().map(|&j| FEATURE_NAMES[j].to_owned()).collect(),
            effects,
            spec: spec.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub vectors: Vec<FeatureVector>,
    pub matrix: FeatureMatrix,
    pub ground_truth: GroundTruth,
}

/// Generates every subject of `spec` and describes it, either straight from
/// the patches or through rendered images. Both paths draw identical
/// textures.
pub fn planted_cohort(spec: &CohortSpec, mode: SynthMode) -> Result<SyntheticCohort> {
    spec.validate()?;
    let labels = spec.labels();
    let vectors = (0..spec.n_subjects())
        .into_par_iter()
        .map(|i| {
            let draw = draw_subject(spec, i, labels[i]);
            let patches = subject_patches(spec, &draw)?;
            let label = Label::from_binary(labels[i]).expect("binary label");
            match mode {
                SynthMode::Fast => {
                    feature_vector_from_patches(&patches, CohortSpec::subject_id(i), label, &IncrementVariance)
                }
                SynthMode::Image => {
                    let (image, landmarks) = render_canvas(spec, i, labels[i], &draw, &patches)?;
                    Ok(extract_subject(&image, &landmarks, Laterality::Left)?.vector)
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticCohort {
        matrix: FeatureMatrix::from_vectors(&vectors)?,
        vectors,
        ground_truth: GroundTruth::from_spec(spec),
    })
}

/// Writes `<id>.pgm` + `<id>.json` per subject and `ground_truth.json`.
pub fn write_cohort_images(spec: &CohortSpec, dir: &Path) -> Result<()> {
    spec.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..spec.n_subjects()).into_par_iter().try_for_each(|i| {
        let (image, landmarks) = render_subject(spec, i)?;
        let id = landmarks.subject_id.clone();
        let image_name = format!("{id}.pgm");
        image.save_pgm(dir.join(&image_name))?;
        let record = LandmarkRecord { landmarks, image: image_name.into() };
        let path = dir.join(format!("{id}.json"));
        let text = serde_json::to_string_pretty(&record.to_json()).expect("json");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    })?;
    write_ground_truth(spec, dir)
}

pub fn write_ground_truth(spec: &CohortSpec, dir: &Path) -> Result<()> {
    let path = dir.join("ground_truth.json");
    let text = serde_json::to_string_pretty(&GroundTruth::from_spec(spec)).expect("json");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture::hurst;

    #[test]
    fn fbm_is_deterministic_and_in_range() {
        let a = fbm_patch(0.5, 64, 11).unwrap();
        let b = fbm_patch(0.5, 64, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, fbm_patch(0.5, 64, 12).unwrap());
        assert!(a.pixels().iter().all(|&v| v <= MAX_INTENSITY));
        assert_eq!(*a.pixels().iter().max().unwrap(), MAX_INTENSITY);
    }

    #[test]
    fn fbm_rejects_bad_parameters() {
        assert!(fbm_patch(0.97, 64, 0).is_err());
        assert!(fbm_patch(0.05, 64, 0).is_err());
        assert!(fbm_patch(0.5, 15, 0).is_err());
        assert!(fbm_patch(0.5, 4097, 0).is_err());
    }

    #[test]
    fn amplitude_is_symmetric() {
        let amp = aliased_amplitude(0.4, 16);
        let at = |x: usize, y: usize| amp[y * 16 + x];
        assert_eq!(at(0, 0), 0.0);
        assert_eq!(at(3, 5), at(5, 3));
        assert_eq!(at(3, 5), at(16 - 3, 5));
        assert_eq!(at(3, 5), at(3, 16 - 5));
        assert!(at(1, 0) > at(2, 0));
    }

    #[test]
    fn entropy_shaped_hits_targets() {
        let p = entropy_shaped_patch(1.0, 256, 4).unwrap();
        assert!((entropy(&p) - 1.0).abs() <= ENTROPY_TOLERANCE);
        for target in [3.3, 8.0, 10.7, 12.0] {
            let p = entropy_shaped_patch(target, 128, 9).unwrap();
            assert!((entropy(&p) - target).abs() <= ENTROPY_TOLERANCE, "{target}");
        }
        assert_eq!(entropy_shaped_patch(5.0, 64, 1).unwrap(), entropy_shaped_patch(5.0, 64, 1).unwrap());
    }

    #[test]
    fn entropy_shaped_counting_bound() {
        let p = entropy_shaped_patch(14.0, 128, 2).unwrap();
        assert!((entropy(&p) - 14.0).abs() <= ENTROPY_TOLERANCE);
        assert!(matches!(entropy_shaped_patch(14.0, 127, 2), Err(Error::UnreachableEntropy { .. })));
        assert!(matches!(entropy_shaped_patch(13.0, 64, 2), Err(Error::UnreachableEntropy { .. })));
        assert!(entropy_shaped_patch(0.4, 64, 2).is_err());
    }

    #[test]
    fn textured_patch_matches_entropy_and_keeps_roughness() {
        let gen = SpectralFbm::new(0.4, 70, 64).unwrap();
        let p = textured_patch(&gen, 9.5, 70, 64, 5).unwrap();
        assert!((entropy(&p) - 9.5).abs() <= ENTROPY_TOLERANCE);
        let raw = gen.field(70, 64, 5).unwrap();
        let direct = crate::texture::HurstEstimator::estimate_field(&IncrementVariance, 70, 64, &raw).unwrap();
        assert!((hurst(&p).unwrap().value - direct.value).abs() < 0.02);
        assert!(matches!(
            textured_patch(&gen, 13.5, 70, 64, 5),
            Err(Error::UnreachableEntropy { .. })
        ));
    }

    #[test]
    fn spec_validation() {
        assert!(CohortSpec::default().validate().is_ok());
        assert!(CohortSpec { patch_size: 50, ..CohortSpec::default() }.validate().is_err());
        assert!(CohortSpec { n_case: 0, ..CohortSpec::default() }.validate().is_err());
        let mut s = CohortSpec::default();
        s.h_case[0] = 1.2;
        assert!(s.validate().is_err());
    }

    #[test]
    fn labels_match_counts() {
        let spec = CohortSpec { n_case: 7, n_control: 5, ..CohortSpec::default() };
        let labels = spec.labels();
        assert_eq!(labels.len(), 12);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 7);
    }

    #[test]
    fn informative_features_follow_effects() {
        let spec = CohortSpec::null(0)
            .with_hurst_effect(RoiName::F0, -0.1)
            .with_entropy_effect(RoiName::T3, 0.5);
        assert_eq!(spec.informative_features(), vec![0, 11]);
        let gt = GroundTruth::from_spec(&spec);
        assert_eq!(gt.informative_features, vec!["H_F0", "E_T3"]);
        assert_eq!(gt.effects["E_T3"], (10.5, 10.0));
    }

    #[test]
    fn rendered_layout_lands_on_whole_pixels() {
        for size in [35, 70, 105] {
            let spec = CohortSpec {
                n_case: 1,
                n_control: 1,
                patch_size: size,
                entropy_case: [8.0; 6],
                entropy_control: [8.0; 6],
                ..CohortSpec::default()
            };
            let (image, lm) = render_subject(&spec, 0).unwrap();
            let lm = crate::geometry::mirror_for_laterality(&lm, image.width(), Laterality::Left);
            let layout = RoiLayout::from_landmarks(&lm).unwrap();
            for r in layout.rois() {
                assert!((r.origin.x - r.origin.x.round()).abs() < 1e-9, "{size} {r:?}");
                assert!((r.origin.y - r.origin.y.round()).abs() < 1e-9);
                assert!(!r.out_of_bone);
            }
        }
    }
}
