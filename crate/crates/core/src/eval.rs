//! ROC/AUC, seeded stratified folds, repeated cross-validated AUC, and the
//! SVM-driven 2-D projection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::search::FeatureMask;
use crate::svm::{svm_train, LinearModel, Standardizer, SvmParams};

/// SplitMix64 finalizer (Steele, Lea & Flood). Constants:
/// increment `0x9E3779B97F4A7C15`, multipliers `0xBF58476D1CE4E5B9` and
/// `0x94D049BB133111EB`, shifts 30/27/31.
pub fn splitmix64(z: u64) -> u64 {
    let mut z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream seed: `splitmix64(seed ^ splitmix64(stream))`.
pub fn mix64(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

fn check_scores(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), got: scores.len() });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("AUC needs cases and controls".into()));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUC: the fraction of (case, control) pairs ranked correctly,
/// ties counted half. Computed from mid-ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the case rank sum, so tied mid-ranks stay integral
    let mut rank_sum2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u64;
        let cases = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u64;
        rank_sum2 += mid2 * cases;
        i = j + 1;
    }
    let (p, n) = (pos as u64, neg as u64);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(false positive rate, true positive rate)` from `(0,0)` to `(1,1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Threshold sweep over distinct scores in descending order; tied scores move
/// the curve diagonally. The stored area is the trapezoidal integral.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u64, 0u64);
    // doubled trapezoid area in count units
    let mut area2 = 0u64;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let mut j = i;
        loop {
            if labels[order[j]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            if j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
                j += 1;
            } else {
                break;
            }
        }
        area2 += (fp - fp0) * (tp + tp0);
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        i = j + 1;
    }
    Ok(RocCurve {
        points,
        auc: area2 as f64 / (2 * pos as u64 * neg as u64) as f64,
    })
}

impl RocCurve {
    /// Trapezoidal area recomputed from the stored points.
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5)
            .sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            s.push_str(&format!("{f},{t}\n"));
        }
        s
    }
}

/// Splits indices into `k` disjoint test folds with per-class counts as even
/// as possible. Each class is shuffled with `seed`, then dealt round-robin;
/// the dealing position carries over between classes so fold sizes balance.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for class in [1u8, 0u8] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::InsufficientData(format!(
                "class {class} has {} members, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for idx in members {
            folds[next].push(idx);
            next = (next + 1) % k;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AucPooling {
    /// One AUC per repeat over the concatenated out-of-fold scores.
    #[default]
    Pooled,
    /// Mean of the per-fold AUCs.
    PerFoldMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CvSpec {
    pub folds: usize,
    pub repeats: usize,
    pub base_seed: u64,
    pub pooling: AucPooling,
}

impl Default for CvSpec {
    fn default() -> Self {
        Self {
            folds: 5,
            repeats: 100,
            base_seed: 0,
            pooling: AucPooling::Pooled,
        }
    }
}

impl CvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::InvalidParameter("folds must be at least 2".into()));
        }
        if self.repeats < 1 {
            return Err(Error::InvalidParameter("repeats must be at least 1".into()));
        }
        Ok(())
    }

    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        mix64(self.base_seed, repeat as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvScore {
    pub mean_auc: f64,
    /// Sample standard deviation across repeats (0 for a single repeat).
    pub std_auc: f64,
}

fn selected_rows(matrix: &FeatureMatrix, mask: FeatureMask, idx: &[usize]) -> Vec<Vec<f64>> {
    let features: Vec<usize> = mask.features().collect();
    idx.iter()
        .map(|&i| features.iter().map(|&j| matrix.rows()[i][j]).collect())
        .collect()
}

fn to_signed(labels: &[u8], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| if labels[i] == 1 { 1.0 } else { -1.0 }).collect()
}

/// Out-of-fold decision scores for one cross-validation repeat, indexed by
/// subject. Standardization is fit on each training fold only.
pub fn cv_scores(
    matrix: &FeatureMatrix,
    mask: FeatureMask,
    spec: &CvSpec,
    params: &SvmParams,
    repeat: usize,
) -> Result<(Vec<f64>, Vec<Vec<usize>>)> {
    let labels = matrix.labels();
    let seed = spec.repeat_seed(repeat);
    let folds = stratified_kfold(labels, spec.folds, seed)?;
    let mut scores = vec![0.0; matrix.len()];
    let mut in_test = vec![usize::MAX; matrix.len()];
    for (f, test) in folds.iter().enumerate() {
        for &i in test {
            in_test[i] = f;
        }
    }
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = (0..matrix.len()).filter(|&i| in_test[i] != f).collect();
        let x_train = selected_rows(matrix, mask, &train);
        let standardizer = Standardizer::fit(&x_train)?;
        let z_train = standardizer.apply(&x_train)?;
        let sol = svm_train(
            &z_train,
            &to_signed(labels, &train),
            &params.with_seed(mix64(seed, f as u64)),
        )?;
        for (&i, z) in test.iter().zip(standardizer.apply(&selected_rows(matrix, mask, test))?) {
            scores[i] = sol.weights.iter().zip(&z).map(|(w, v)| w * v).sum::<f64>() + sol.bias;
        }
    }
    Ok((scores, folds))
}

fn repeat_auc(
    matrix: &FeatureMatrix,
    mask: FeatureMask,
    spec: &CvSpec,
    params: &SvmParams,
    repeat: usize,
) -> Result<f64> {
    let (scores, folds) = cv_scores(matrix, mask, spec, params, repeat)?;
    match spec.pooling {
        AucPooling::Pooled => auc(&scores, matrix.labels()),
        AucPooling::PerFoldMean => {
            let mut total = 0.0;
            for test in &folds {
                let s: Vec<f64> = test.iter().map(|&i| scores[i]).collect();
                let l: Vec<u8> = test.iter().map(|&i| matrix.labels()[i]).collect();
                total += auc(&s, &l)?;
            }
            Ok(total / folds.len() as f64)
        }
    }
}

/// Mean and spread of cross-validated AUC over `spec.repeats` repeats.
///
/// Repeat `r` draws its folds from `mix64(base_seed, r)`, so every mask sees
/// the same splits and any repeat can be replayed alone. Repeats run in
/// parallel but are reduced in index order, which keeps the result bitwise
/// stable across thread counts.
pub fn cv_auc(matrix: &FeatureMatrix, mask: FeatureMask, spec: &CvSpec, params: &SvmParams) -> Result<CvScore> {
    spec.validate()?;
    if mask.is_empty() {
        return Err(Error::InvalidParameter("feature mask is empty".into()));
    }
    matrix.require_both_classes()?;
    let aucs = (0..spec.repeats)
        .into_par_iter()
        .map(|r| repeat_auc(matrix, mask, spec, params, r))
        .collect::<Result<Vec<f64>>>()?;
    let n = aucs.len() as f64;
    let mean = aucs.iter().sum::<f64>() / n;
    let std = if aucs.len() > 1 {
        (aucs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(CvScore { mean_auc: mean, std_auc: std })
}

/// Trains one model on every row of the selected features.
pub fn fit_full(matrix: &FeatureMatrix, mask: FeatureMask, params: &SvmParams) -> Result<LinearModel> {
    matrix.require_both_classes()?;
    let idx: Vec<usize> = (0..matrix.len()).collect();
    LinearModel::fit(
        mask.names().into_iter().map(str::to_owned).collect(),
        &selected_rows(matrix, mask, &idx),
        &to_signed(matrix.labels(), &idx),
        params,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Per subject: coordinate along the unit SVM normal, and along the
    /// top principal direction of the orthogonal complement.
    pub points: Vec<(f64, f64)>,
    /// Where the separating hyperplane crosses the first axis: `-b / ‖w‖`.
    pub hyperplane_x: f64,
    pub x_direction: Vec<f64>,
    pub y_direction: Vec<f64>,
}

/// Projects standardized rows onto the SVM normal and onto the
/// highest-variance direction orthogonal to it.
pub fn project_2d(matrix: &FeatureMatrix, mask: FeatureMask, model: &LinearModel) -> Result<Projection> {
    let idx: Vec<usize> = (0..matrix.len()).collect();
    let z = model.standardizer.apply(&selected_rows(matrix, mask, &idx))?;
    let d = model.weights.len();
    let norm = model.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidParameter("projection needs a non-zero weight vector".into()));
    }
    let w_hat: Vec<f64> = model.weights.iter().map(|w| w / norm).collect();
    let xs: Vec<f64> = z.iter().map(|r| r.iter().zip(&w_hat).map(|(a, b)| a * b).sum()).collect();
    let residuals: Vec<Vec<f64>> = z
        .iter()
        .zip(&xs)
        .map(|(r, &x)| r.iter().zip(&w_hat).map(|(v, w)| v - x * w).collect())
        .collect();
    let y_direction = if d < 2 {
        vec![0.0; d]
    } else {
        let cov = covariance(&residuals, d);
        let (_, mut e) = top_eigenvector(&cov);
        // drop any numerical drift back into the normal's direction
        let along: f64 = e.iter().zip(&w_hat).map(|(a, b)| a * b).sum();
        e.iter_mut().zip(&w_hat).for_each(|(v, w)| *v -= along * w);
        let n = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        e.iter_mut().for_each(|v| *v /= n);
        canonical_sign(&mut e);
        e
    };
    let points = z
        .iter()
        .zip(&xs)
        .map(|(r, &x)| (x, r.iter().zip(&y_direction).map(|(a, b)| a * b).sum()))
        .collect();
    Ok(Projection {
        points,
        hyperplane_x: -model.bias / norm,
        x_direction: w_hat,
        y_direction,
    })
}

fn covariance(rows: &[Vec<f64>], d: usize) -> Vec<Vec<f64>> {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut cov = vec![vec![0.0; d]; d];
    for r in rows {
        for a in 0..d {
            for b in a..d {
                cov[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]) / n;
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[a][b] = cov[b][a];
        }
    }
    cov
}

/// Largest eigenpair of a small symmetric matrix by cyclic Jacobi rotations.
pub fn top_eigenvector(matrix: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let d = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        let scale: f64 = (0..d).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let best = (0..d).max_by(|&i, &j| a[i][i].total_cmp(&a[j][j])).unwrap_or(0);
    let mut e: Vec<f64> = v.iter().map(|row| row[best]).collect();
    canonical_sign(&mut e);
    (a[best][best], e)
}

/// Flips `v` so its largest-magnitude entry is positive.
fn canonical_sign(v: &mut [f64]) {
    if let Some(m) = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())) {
        if m < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn auc_small_example() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [0, 0, 1, 1];
        assert_eq!(auc(&s, &l).unwrap(), 0.75);
        assert_eq!(roc_curve(&s, &l).unwrap().auc, 0.75);
    }

    #[test]
    fn auc_extremes() {
        assert_eq!(auc(&[0.0, 0.1, 0.9, 1.0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[3.0; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(matches!(auc(&[1.0, 2.0], &[1, 1]), Err(Error::SingleClass(_))));
    }

    #[test]
    fn roc_of_perfect_scores_hits_corner() {
        let roc = roc_curve(&[0.0, 0.1, 0.9, 1.0], &[0, 0, 1, 1]).unwrap();
        assert!(roc.points.contains(&(0.0, 1.0)));
        assert_eq!(*roc.points.first().unwrap(), (0.0, 0.0));
        assert_eq!(*roc.points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn reversed_scores_complement() {
        let s = [0.1, 0.4, 0.35, 0.8, 0.2];
        let l = [0, 0, 1, 1, 1];
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let a = roc_curve(&s, &l).unwrap().auc;
        let b = roc_curve(&neg, &l).unwrap().auc;
        assert_abs_diff_eq!(a + b, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn kfold_balanced_counts() {
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i < 10)).collect();
        for fold in stratified_kfold(&labels, 5, 1).unwrap() {
            let cases = fold.iter().filter(|&&i| labels[i] == 1).count();
            assert_eq!((cases, fold.len() - cases), (2, 2));
        }
        let labels: Vec<u8> = (0..153).map(|i| u8::from(i < 67)).collect();
        for fold in stratified_kfold(&labels, 5, 9).unwrap() {
            let cases = fold.iter().filter(|&&i| labels[i] == 1).count();
            assert!((13..=14).contains(&cases));
            assert!((17..=18).contains(&(fold.len() - cases)));
        }
    }

    #[test]
    fn kfold_seeding() {
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 3 == 0)).collect();
        let base = stratified_kfold(&labels, 5, 0).unwrap();
        assert_eq!(base, stratified_kfold(&labels, 5, 0).unwrap());
        for seed in 1..=100 {
            assert_ne!(base, stratified_kfold(&labels, 5, seed).unwrap());
        }
    }

    #[test]
    fn kfold_small_class() {
        assert!(matches!(stratified_kfold(&[1, 1, 0, 0, 0, 0, 0], 5, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn mix64_is_fixed() {
        // pinned so repeat seeds stay reproducible across releases
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_ne!(mix64(1, 0), mix64(0, 1));
    }

    #[test]
    fn jacobi_on_diagonal() {
        let (val, vec) = top_eigenvector(&[vec![1.0, 0.0], vec![0.0, 3.0]]);
        assert_abs_diff_eq!(val, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vec[1], 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn roc_area_matches_auc(seed in any::<u64>(), n in 2usize..60, ties in 1u32..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..ties))).collect();
            let roc = roc_curve(&scores, &labels).unwrap();
            let a = auc(&scores, &labels).unwrap();
            prop_assert!((roc.auc - a).abs() < 1e-12);
            prop_assert!((roc.trapezoid_area() - a).abs() < 1e-12);
            for w in roc.points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            let neg: Vec<f64> = scores.iter().map(|v| -v).collect();
            prop_assert!((auc(&neg, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
            let warped: Vec<f64> = scores.iter().map(|v| (v * 0.3).exp() + 5.0).collect();
            prop_assert_eq!(auc(&warped, &labels).unwrap(), a);
        }

        #[test]
        fn kfold_partitions(seed in any::<u64>(), n in 10usize..200, k in 2usize..6) {
            let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
            let folds = stratified_kfold(&labels, k, seed).unwrap();
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let (pos, neg) = (labels.iter().filter(|&&l| l == 1).count(), n - labels.iter().filter(|&&l| l == 1).count());
            for f in &folds {
                let c = f.iter().filter(|&&i| labels[i] == 1).count() as f64;
                prop_assert!((c - pos as f64 / k as f64).abs() < 1.0 + 1e-12);
                let o = (f.len() as f64) - c;
                prop_assert!((o - neg as f64 / k as f64).abs() < 1.0 + 1e-12);
            }
        }
    }
}
