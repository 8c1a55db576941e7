//! Soft-margin linear SVM trained by dual coordinate descent, with the
//! per-fold standardization that precedes it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column-wise z-scoring fitted on training rows (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Columns that were constant on the training rows; they map to 0.
    pub degenerate: Vec<bool>,
}

impl Standardizer {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "standardization needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let d = rows[0].as_ref().len();
        let n = rows.len() as f64;
        let mut means = vec![0.0; d];
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: r.len() });
            }
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in vars.iter_mut().zip(r.as_ref()).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let stds: Vec<f64> = vars.iter().map(|s| (s / n).sqrt()).collect();
        if means.iter().chain(&stds).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("standardizer input"));
        }
        let degenerate = stds.iter().map(|&s| s <= f64::EPSILON * 16.0).collect();
        Ok(Self { means, stds, degenerate })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: row.len() });
        }
        Ok(row
            .iter()
            .enumerate()
            .map(|(j, v)| if self.degenerate[j] { 0.0 } else { (v - self.means[j]) / self.stds[j] })
            .collect())
    }

    pub fn apply<R: AsRef<[f64]>>(&self, rows: &[R]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply_row(r.as_ref())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    /// Stop once `primal - dual <= tolerance * primal`.
    pub tolerance: f64,
    pub max_epochs: usize,
    /// Seeds the per-epoch coordinate shuffle.
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tolerance: 1e-6,
            max_epochs: 10_000,
            seed: 0,
        }
    }
}

impl SvmParams {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Raw dual coordinate descent result on already-standardized rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmSolution {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub alpha: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub epochs: usize,
    pub converged: bool,
    /// Dual objective after each epoch.
    pub dual_trace: Vec<f64>,
}

impl SvmSolution {
    pub fn duality_gap(&self) -> f64 {
        self.primal_objective - self.dual_objective
    }
}

/// Primal objective `½‖w‖² + ½b² + C Σ max(0, 1 - y(w·x + b))`. The bias is
/// the weight of an appended constant feature and is regularized with `w`.
pub fn primal_objective<R: AsRef<[f64]>>(x: &[R], y: &[f64], weights: &[f64], bias: f64, c: f64) -> f64 {
    let reg = 0.5 * (dot(weights, weights) + bias * bias);
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| (1.0 - yi * (dot(weights, xi.as_ref()) + bias)).max(0.0))
        .sum();
    reg + c * loss
}

/// Fisher-Yates with one bounded draw per element.
fn shuffle(v: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..v.len()).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Trains on rows `x` with labels `y ∈ {-1, +1}`.
pub fn svm_train<R: AsRef<[f64]>>(x: &[R], y: &[f64], params: &SvmParams) -> Result<SvmSolution> {
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::InvalidParameter(format!("C must be positive, got {}", params.c)));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidParameter("labels must be -1 or +1".into()));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::SingleClass("SVM training set".into()));
    }
    let d = x[0].as_ref().len();
    for xi in x {
        let xi = xi.as_ref();
        if xi.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: xi.len() });
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SVM features"));
        }
    }

    let n = x.len();
    let c = params.c;
    // rows stored contiguously as y·[x, 1] so the bias is the last weight
    let stride = d + 1;
    let mut z = Vec::with_capacity(n * stride);
    for (xi, &yi) in x.iter().zip(y) {
        z.extend(xi.as_ref().iter().map(|v| v * yi));
        z.push(yi);
    }
    let run = match stride {
        2 => descend::<2>,
        3 => descend::<3>,
        4 => descend::<4>,
        5 => descend::<5>,
        6 => descend::<6>,
        7 => descend::<7>,
        8 => descend::<8>,
        9 => descend::<9>,
        10 => descend::<10>,
        11 => descend::<11>,
        12 => descend::<12>,
        13 => descend::<13>,
        _ => descend::<0>,
    };
    let Descent { alpha, mut w, epochs, converged, primal, dual, dual_trace } = run(&z, stride, c, params);
    let b = w.pop().expect("bias weight");

    Ok(SvmSolution {
        weights: w,
        bias: b,
        alpha,
        primal_objective: primal,
        dual_objective: dual,
        epochs,
        converged,
        dual_trace,
    })
}

struct Descent {
    alpha: Vec<f64>,
    w: Vec<f64>,
    epochs: usize,
    converged: bool,
    primal: f64,
    dual: f64,
    dual_trace: Vec<f64>,
}

/// Coordinate descent over rows of `z` (each `y·[x, 1]`). `S` fixes the row
/// width at compile time so short dot products unroll; `S = 0` reads it from
/// `stride`.
fn descend<const S: usize>(z: &[f64], stride: usize, c: f64, params: &SvmParams) -> Descent {
    let len = if S > 0 { S } else { stride };
    let n = z.len() / len;
    let row = |i: usize| &z[i * len..i * len + len];
    let q_diag: Vec<f64> = (0..n).map(|i| dot(row(i), row(i))).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; len];
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut dual_trace = Vec::new();

    let mut epochs = 0;
    let mut converged = false;
    let (mut primal, mut dual) = (f64::INFINITY, f64::NEG_INFINITY);
    while epochs < params.max_epochs {
        shuffle(&mut order, &mut rng);
        for &i in &order {
            let zi = row(i);
            let g = dot(&w, zi) - 1.0;
            let a_old = alpha[i];
            let a_new = (a_old - g / q_diag[i]).clamp(0.0, c);
            let delta = a_new - a_old;
            if delta != 0.0 {
                alpha[i] = a_new;
                for (wj, zj) in w.iter_mut().zip(zi) {
                    *wj += delta * zj;
                }
            }
        }
        epochs += 1;

        let norm2 = dot(&w, &w);
        let mut hinge = 0.0;
        let mut violation: f64 = 0.0;
        for (i, g) in grad.iter_mut().enumerate() {
            *g = dot(&w, row(i)) - 1.0;
            hinge += (-*g).max(0.0);
            let projected = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= c {
                g.max(0.0)
            } else {
                *g
            };
            violation = violation.max(projected.abs());
        }
        primal = 0.5 * norm2 + c * hinge;
        dual = alpha.iter().sum::<f64>() - 0.5 * norm2;
        dual_trace.push(dual);
        if primal - dual <= params.tolerance * primal.abs() {
            converged = true;
            break;
        }
        // next pass skips coordinates held at a bound by a gradient stronger
        // than the largest violation; the full gradient is refreshed every epoch
        order.clear();
        order.extend((0..n).filter(|&i| {
            !((alpha[i] <= 0.0 && grad[i] > violation) || (alpha[i] >= c && grad[i] < -violation))
        }));
    }
    Descent { alpha, w, epochs, converged, primal, dual, dual_trace }
}

/// A trained classifier over raw (unstandardized) feature rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c: f64,
    pub standardizer: Standardizer,
    pub duality_gap: f64,
}

/// JSON dump layout.
#[derive(Debug, Serialize, Deserialize)]
struct ModelDump {
    features: Vec<String>,
    weights: Vec<f64>,
    bias: f64,
    #[serde(rename = "C")]
    c: f64,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl LinearModel {
    /// Standardizes `raw` on itself, then trains.
    pub fn fit<R: AsRef<[f64]>>(
        feature_names: Vec<String>,
        raw: &[R],
        y: &[f64],
        params: &SvmParams,
    ) -> Result<Self> {
        let standardizer = Standardizer::fit(raw)?;
        let z = standardizer.apply(raw)?;
        let sol = svm_train(&z, y, params)?;
        Ok(Self {
            feature_names,
            duality_gap: sol.duality_gap(),
            weights: sol.weights,
            bias: sol.bias,
            c: params.c,
            standardizer,
        })
    }

    /// `w·z + b` for already-standardized rows.
    pub fn decision_scores<R: AsRef<[f64]>>(&self, standardized: &[R]) -> Result<Vec<f64>> {
        standardized
            .iter()
            .map(|z| {
                let z = z.as_ref();
                if z.len() != self.weights.len() {
                    return Err(Error::DimensionMismatch { expected: self.weights.len(), got: z.len() });
                }
                Ok(dot(&self.weights, z) + self.bias)
            })
            .collect()
    }

    /// Standardizes raw rows with the fitted transform, then scores them.
    pub fn score_raw<R: AsRef<[f64]>>(&self, raw: &[R]) -> Result<Vec<f64>> {
        self.decision_scores(&self.standardizer.apply(raw)?)
    }

    pub fn to_json(&self) -> String {
        let dump = ModelDump {
            features: self.feature_names.clone(),
            weights: self.weights.clone(),
            bias: self.bias,
            c: self.c,
            means: self.standardizer.means.clone(),
            stds: self.standardizer.stds.clone(),
        };
        serde_json::to_string_pretty(&dump).expect("model dump serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn separable_1d() -> (Vec<Vec<f64>>, Vec<f64>) {
        (vec![vec![-2.0], vec![-1.0], vec![1.0], vec![2.0]], vec![-1.0, -1.0, 1.0, 1.0])
    }

    #[test]
    fn standardize_population_std() {
        let s = Standardizer::fit(&[[1.0], [2.0], [3.0]]).unwrap();
        let z = s.apply(&[[1.0], [2.0], [3.0]]).unwrap();
        let k = 1.224_744_871_391_589;
        assert_abs_diff_eq!(z[0][0], -k, epsilon = 1e-12);
        assert_abs_diff_eq!(z[1][0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(z[2][0], k, epsilon = 1e-12);
    }

    #[test]
    fn constant_column_is_flagged() {
        let s = Standardizer::fit(&[[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]]).unwrap();
        assert_eq!(s.degenerate, vec![true, false]);
        let z = s.apply(&[[5.0, 1.0], [5.0, 2.0], [5.0, 4.0]]).unwrap();
        assert!(z.iter().all(|r| r[0] == 0.0));
    }

    #[test]
    fn standardize_is_idempotent() {
        let rows = [[3.0, -1.0], [7.0, 0.5], [1.0, 9.0], [2.0, 2.0]];
        let z = Standardizer::fit(&rows).unwrap().apply(&rows).unwrap();
        let again = Standardizer::fit(&z).unwrap();
        for (m, s) in again.means.iter().zip(&again.stds) {
            assert!(m.abs() < 1e-9);
            assert_abs_diff_eq!(*s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn standardize_needs_rows() {
        let empty: [[f64; 1]; 0] = [];
        assert!(Standardizer::fit(&empty).is_err());
    }

    #[test]
    fn separable_case_is_classified() {
        let (x, y) = separable_1d();
        let params = SvmParams { c: 1e3, ..SvmParams::default() };
        let sol = svm_train(&x, &y, &params).unwrap();
        assert!(sol.converged);
        let boundary = -sol.bias / sol.weights[0];
        assert!(boundary > -1.0 && boundary < 1.0);
        for (xi, yi) in x.iter().zip(&y) {
            assert!((sol.weights[0] * xi[0] + sol.bias) * yi > 0.0);
        }
    }

    #[test]
    fn flipped_labels_flip_weights() {
        let (x, y) = separable_1d();
        let neg: Vec<f64> = y.iter().map(|v| -v).collect();
        let a = svm_train(&x, &y, &SvmParams::default()).unwrap();
        let b = svm_train(&x, &neg, &SvmParams::default()).unwrap();
        assert!((a.weights[0] + b.weights[0]).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        let (x, _) = separable_1d();
        assert!(matches!(svm_train(&x, &[1.0; 4], &SvmParams::default()), Err(Error::SingleClass(_))));
        let bad = vec![vec![f64::NAN], vec![1.0]];
        assert!(matches!(svm_train(&bad, &[1.0, -1.0], &SvmParams::default()), Err(Error::NonFinite(_))));
        let zero_c = SvmParams { c: 0.0, ..SvmParams::default() };
        assert!(svm_train(&x, &[1.0, -1.0, 1.0, -1.0], &zero_c).is_err());
    }

    #[test]
    fn scores_of_zero_weight_model_equal_bias() {
        let model = LinearModel {
            feature_names: vec!["a".into(), "b".into()],
            weights: vec![0.0, 0.0],
            bias: 0.25,
            c: 1.0,
            standardizer: Standardizer { means: vec![0.0; 2], stds: vec![1.0; 2], degenerate: vec![false; 2] },
            duality_gap: 0.0,
        };
        assert_eq!(model.decision_scores(&[[1.0, 2.0], [-3.0, 4.0]]).unwrap(), vec![0.25, 0.25]);
        assert!(matches!(model.decision_scores(&[[1.0]]), Err(Error::DimensionMismatch { .. })));
        let linear = LinearModel { weights: vec![1.5], bias: 0.0, ..model };
        assert_eq!(linear.decision_scores(&[[2.0]]).unwrap()[0], 3.0 * linear.decision_scores(&[[2.0 / 3.0]]).unwrap()[0]);
    }

    #[test]
    fn dump_has_expected_keys() {
        let (x, y) = separable_1d();
        let m = LinearModel::fit(vec!["f".into()], &x, &y, &SvmParams::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json()).unwrap();
        for key in ["features", "weights", "bias", "C", "means", "stds"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    fn random_problem(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            x.push((0..d).map(|_| rng.random_range(-1.0..1.0) + 0.4 * label).collect());
            y.push(label);
        }
        (x, y)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn dual_feasible_and_monotone(seed in any::<u64>(), n in 6usize..40, d in 1usize..6, c in 0.05f64..20.0) {
            let (x, y) = random_problem(seed, n, d);
            let sol = svm_train(&x, &y, &SvmParams { c, ..SvmParams::default() }).unwrap();
            prop_assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
            prop_assert!(sol.duality_gap() <= 1e-6 * sol.primal_objective.abs() || !sol.converged);
            prop_assert!(sol.converged);
            for w in sol.dual_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12 * w[0].abs().max(1.0));
            }
        }

        #[test]
        fn row_permutation_keeps_objective(seed in any::<u64>(), n in 6usize..30) {
            let (x, y) = random_problem(seed, n, 3);
            let mut idx: Vec<usize> = (0..n).collect();
            shuffle(&mut idx, &mut ChaCha8Rng::seed_from_u64(seed ^ 99));
            let xp: Vec<_> = idx.iter().map(|&i| x[i].clone()).collect();
            let yp: Vec<_> = idx.iter().map(|&i| y[i]).collect();
            let a = svm_train(&x, &y, &SvmParams::default()).unwrap();
            let b = svm_train(&xp, &yp, &SvmParams::default().with_seed(seed)).unwrap();
            let scale = a.primal_objective.abs().max(b.primal_objective.abs());
            prop_assert!((a.primal_objective - b.primal_objective).abs() <= 1e-6 * scale);
        }
    }
}
