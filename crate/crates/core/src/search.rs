//! Exhaustive wrapper search over every nonempty feature subset.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{cv_auc, CvSpec};
use crate::matrix::FeatureMatrix;
use crate::svm::SvmParams;
use crate::texture::{FEATURE_COUNT, FEATURE_NAMES};

/// Number of nonempty subsets of the 12 features.
pub const MASK_COUNT: u16 = (1 << FEATURE_COUNT) - 1;

/// Bit `j` selects feature `j` in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureMask(u16);

impl FeatureMask {
    pub const FULL: FeatureMask = FeatureMask(MASK_COUNT);

    pub fn new(bits: u16) -> Result<Self> {
        if bits == 0 || bits > MASK_COUNT {
            return Err(Error::InvalidParameter(format!(
                "mask {bits:#x} outside 0x001..=0xFFF"
            )));
        }
        Ok(Self(bits))
    }

    pub fn from_features(features: &[usize]) -> Result<Self> {
        let mut bits = 0u16;
        for &f in features {
            if f >= FEATURE_COUNT {
                return Err(Error::InvalidParameter(format!("feature index {f} out of range")));
            }
            bits |= 1 << f;
        }
        Self::new(bits)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn cardinality(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, feature: usize) -> bool {
        self.0 & (1 << feature) != 0
    }

    /// Selected feature indices, ascending.
    pub fn features(self) -> impl Iterator<Item = usize> {
        (0..FEATURE_COUNT).filter(move |&j| self.0 & (1 << j) != 0)
    }

    pub fn names(self) -> Vec<&'static str> {
        self.features().map(|j| FEATURE_NAMES[j]).collect()
    }

    pub fn is_superset_of(self, other: FeatureMask) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn all() -> impl Iterator<Item = FeatureMask> {
        (1..=MASK_COUNT).map(FeatureMask)
    }

    pub fn with_cardinality(n: usize) -> impl Iterator<Item = FeatureMask> {
        Self::all().filter(move |m| m.cardinality() == n)
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{:03X}", self.0)
    }
}

/// Accepts hex (`0x00F`), decimal, or `+`-joined feature names
/// (`H_F0+E_T3`).
impl FromStr for FeatureMask {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |m: String| Error::parse("feature mask", m);
        if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
            let bits = u16::from_str_radix(hex, 16).map_err(|e| bad(format!("`{s}`: {e}")))?;
            return Self::new(bits);
        }
        if let Ok(bits) = s.parse::<u16>() {
            return Self::new(bits);
        }
        let features = s
            .split('+')
            .map(|name| {
                crate::texture::feature_index(name.trim()).ok_or_else(|| bad(format!("unknown feature `{name}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_features(&features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetResult {
    pub mask: FeatureMask,
    pub mean_auc: f64,
    pub std_auc: f64,
}

impl SubsetResult {
    pub fn cardinality(&self) -> usize {
        self.mask.cardinality()
    }
}

/// Evaluates the given masks; output is sorted by mask regardless of the
/// order in which work completes.
pub fn search_masks(
    matrix: &FeatureMatrix,
    masks: &[FeatureMask],
    spec: &CvSpec,
    params: &SvmParams,
) -> Result<Vec<SubsetResult>> {
    spec.validate()?;
    matrix.require_both_classes()?;
    let mut out = masks
        .par_iter()
        .map(|&mask| {
            let s = cv_auc(matrix, mask, spec, params)?;
            Ok(SubsetResult { mask, mean_auc: s.mean_auc, std_auc: s.std_auc })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|r| r.mask);
    Ok(out)
}

/// All 4095 nonempty subsets.
pub fn search_all(matrix: &FeatureMatrix, spec: &CvSpec, params: &SvmParams) -> Result<Vec<SubsetResult>> {
    let masks: Vec<FeatureMask> = FeatureMask::all().collect();
    search_masks(matrix, &masks, spec, params)
}

/// Evaluates `range` in mask order, `chunk` masks at a time, handing each
/// finished chunk to `sink` before starting the next. Rows are identical to
/// those of [`search_all`] for the same masks.
pub fn search_streaming(
    matrix: &FeatureMatrix,
    range: RangeInclusive<u16>,
    chunk: usize,
    spec: &CvSpec,
    params: &SvmParams,
    mut sink: impl FnMut(&[SubsetResult]) -> Result<()>,
) -> Result<()> {
    let (lo, hi) = range.into_inner();
    FeatureMask::new(lo)?;
    FeatureMask::new(hi)?;
    let masks: Vec<FeatureMask> = (lo..=hi).map(FeatureMask).collect();
    for block in masks.chunks(chunk.max(1)) {
        sink(&search_masks(matrix, block, spec, params)?)?;
    }
    Ok(())
}

/// Row of the best-subset-per-size table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestRow {
    pub n: usize,
    pub best: SubsetResult,
    pub candidates: usize,
}

fn ranks_above(a: &SubsetResult, b: &SubsetResult) -> bool {
    a.mean_auc > b.mean_auc || (a.mean_auc == b.mean_auc && a.mask < b.mask)
}

/// Best mask among those of cardinality `n`. Every such mask must be present.
pub fn best_for_cardinality(results: &[SubsetResult], n: usize) -> Result<BestRow> {
    let expected = FeatureMask::with_cardinality(n).count();
    let candidates: Vec<&SubsetResult> = results.iter().filter(|r| r.cardinality() == n).collect();
    let mut seen: Vec<FeatureMask> = candidates.iter().map(|r| r.mask).collect();
    seen.sort_unstable();
    seen.dedup();
    if expected == 0 || seen.len() != expected || candidates.len() != expected {
        return Err(Error::InsufficientData(format!(
            "expected {expected} distinct masks of size {n}, found {} rows ({} distinct)",
            candidates.len(),
            seen.len()
        )));
    }
    let best = candidates
        .into_iter()
        .copied()
        .reduce(|best, r| if ranks_above(&r, &best) { r } else { best })
        .expect("non-empty candidate set");
    Ok(BestRow { n, best, candidates: expected })
}

/// For each size 1..=12, the subset with the highest mean AUC (ties go to
/// the lower mask). Requires the complete 4095-row table.
pub fn best_per_cardinality(results: &[SubsetResult]) -> Result<Vec<BestRow>> {
    if results.len() != usize::from(MASK_COUNT) {
        return Err(Error::InsufficientData(format!(
            "expected {MASK_COUNT} subset results, got {}",
            results.len()
        )));
    }
    (1..=FEATURE_COUNT).map(|n| best_for_cardinality(results, n)).collect()
}

/// The `k` best rows by mean AUC, ties by lower mask. `k` is clamped to the
/// number of rows.
pub fn rank_top(results: &[SubsetResult], k: usize) -> Vec<SubsetResult> {
    let mut sorted = results.to_vec();
    sorted.sort_by(|a, b| b.mean_auc.total_cmp(&a.mean_auc).then(a.mask.cmp(&b.mask)));
    sorted.truncate(k);
    sorted
}

/// CSV header of the full search table.
pub const SEARCH_CSV_HEADER: &str = "mask_hex,n,features,mean_auc,std_auc";

pub fn search_csv_row(r: &SubsetResult) -> String {
    format!(
        "{},{},{},{},{}",
        r.mask,
        r.cardinality(),
        r.mask.names().join("+"),
        r.mean_auc,
        r.std_auc
    )
}

pub fn best_csv(rows: &[BestRow]) -> String {
    let mut s = String::from("n,mask_hex,features,mean_auc\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.n, r.best.mask, r.best.mask.names().join("+"), r.best.mean_auc));
    }
    s
}

/// Parses a search table (comment lines start with `#`).
pub fn parse_search_csv(text: &str) -> Result<Vec<SubsetResult>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim_start().starts_with('#') && !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == SEARCH_CSV_HEADER => {}
        Some((i, h)) => {
            return Err(Error::parse(format!("search CSV line {}", i + 1), format!("unexpected header `{h}`")))
        }
        None => return Err(Error::parse("search CSV", "empty file")),
    }
    lines
        .map(|(i, line)| {
            let ctx = || format!("search CSV line {}", i + 1);
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::parse(ctx(), format!("expected 5 columns, got {}", cols.len())));
            }
            let mask: FeatureMask = cols[0].parse().map_err(|e: Error| Error::parse(ctx(), e.to_string()))?;
            let num = |c: usize, name: &str| {
                cols[c]
                    .parse::<f64>()
                    .map_err(|_| Error::parse(ctx(), format!("column `{name}` is not a number: `{}`", cols[c])))
            };
            Ok(SubsetResult { mask, mean_auc: num(3, "mean_auc")?, std_auc: num(4, "std_auc")? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_results() -> Vec<SubsetResult> {
        FeatureMask::all()
            .map(|m| SubsetResult {
                mask: m,
                mean_auc: 0.5 + 0.01 * (m.bits() % 17) as f64,
                std_auc: 0.0,
            })
            .collect()
    }

    #[test]
    fn mask_parsing() {
        assert_eq!("0x041".parse::<FeatureMask>().unwrap().bits(), 0x41);
        assert_eq!("H_F0+E_T3".parse::<FeatureMask>().unwrap().bits(), 1 | 1 << 11);
        assert_eq!("7".parse::<FeatureMask>().unwrap().bits(), 7);
        assert!("0x000".parse::<FeatureMask>().is_err());
        assert!("0x1000".parse::<FeatureMask>().is_err());
        assert!("H_X9".parse::<FeatureMask>().is_err());
        assert_eq!(FeatureMask::new(0x841).unwrap().to_string(), "0x841");
    }

    #[test]
    fn cardinality_counts_sum_to_all() {
        let total: usize = (1..=12).map(|n| FeatureMask::with_cardinality(n).count()).sum();
        assert_eq!(total, 4095);
    }

    #[test]
    fn best_table_shape() {
        let rows = best_per_cardinality(&fake_results()).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(rows[11].best.mask, FeatureMask::FULL);
        assert_eq!(rows.iter().map(|r| r.candidates).sum::<usize>(), 4095);
        for r in &rows {
            assert_eq!(r.best.cardinality(), r.n);
        }
    }

    #[test]
    fn best_tolerates_non_monotone_sequences() {
        let mut r = fake_results();
        for x in r.iter_mut() {
            x.mean_auc = match x.cardinality() {
                5 => 0.80,
                6 => 0.70,
                n => 0.60 + 0.01 * n as f64,
            };
        }
        let rows = best_per_cardinality(&r).unwrap();
        assert_eq!(rows[4].best.mean_auc, 0.80);
        assert_eq!(rows[5].best.mean_auc, 0.70);
        assert!(rows[5].best.mean_auc < rows[4].best.mean_auc);
    }

    #[test]
    fn incomplete_table_rejected() {
        let mut r = fake_results();
        r.pop();
        assert!(best_per_cardinality(&r).is_err());
        let only_pairs: Vec<_> = fake_results().into_iter().filter(|r| r.cardinality() == 2).collect();
        assert!(best_for_cardinality(&only_pairs, 2).is_ok());
        assert!(best_for_cardinality(&only_pairs, 3).is_err());
    }

    #[test]
    fn ties_prefer_lower_mask() {
        let mut r: Vec<_> = fake_results();
        r.iter_mut().for_each(|x| x.mean_auc = 0.7);
        let best = best_per_cardinality(&r).unwrap();
        assert_eq!(best[0].best.mask.bits(), 1);
        assert_eq!(rank_top(&r, 1)[0].mask.bits(), 1);
    }

    #[test]
    fn rank_top_clamps_and_sorts() {
        let r = fake_results();
        let top = rank_top(&r, 10_000);
        assert_eq!(top.len(), 4095);
        assert!(top.windows(2).all(|w| w[0].mean_auc >= w[1].mean_auc));
        let argmax = r.iter().copied().reduce(|a, b| if ranks_above(&b, &a) { b } else { a }).unwrap();
        assert_eq!(rank_top(&r, 1)[0], argmax);
    }

    #[test]
    fn search_csv_round_trip() {
        let r = &fake_results()[..20];
        let mut text = format!("# seed=3\n{SEARCH_CSV_HEADER}\n");
        for x in r {
            text.push_str(&search_csv_row(x));
            text.push('\n');
        }
        assert_eq!(parse_search_csv(&text).unwrap(), r);
        let err = parse_search_csv("mask_hex,n,features,mean_auc,std_auc\n0x001,1,H_F0,abc,0\n").unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("mean_auc"));
    }
}
