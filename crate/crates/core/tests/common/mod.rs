//! Reference implementations used as oracles by the integration tests. They
//! share no code with the library beyond plain data.
#![allow(dead_code)]

use serde::Deserialize;

/// Pair-counting AUC: fraction of (case, control) pairs ordered correctly,
/// ties worth one half.
pub fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Optimal value of `1/2 (|w|^2 + b^2) + C sum hinge(y_i (w.x_i + b))`
/// from accelerated projected gradient on the box-constrained dual, with the
/// bias folded in as a constant feature. Iterates until the primal value of
/// the recovered `(w, b)` is within `rel_gap` of the dual value.
pub struct QpSolution {
    pub primal: f64,
    pub dual: f64,
    pub weights: Vec<f64>,
    pub bias: f64,
}

pub fn qp_svm(x: &[Vec<f64>], y: &[f64], c: f64, rel_gap: f64) -> QpSolution {
    let n = x.len();
    let d = x[0].len();
    let aug: Vec<Vec<f64>> = x.iter().map(|r| r.iter().copied().chain([1.0]).collect()).collect();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| y[i] * y[j] * aug[i].iter().zip(&aug[j]).map(|(a, b)| a * b).sum::<f64>())
                .collect()
        })
        .collect();
    // Lipschitz constant by power iteration, padded
    let mut v = vec![1.0; n];
    let mut lip = 1.0;
    for _ in 0..200 {
        let qv: Vec<f64> = q.iter().map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
        let norm = qv.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lip = norm / v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v = qv.iter().map(|a| a / norm).collect();
    }
    let step = 1.0 / (1.05 * lip + 1e-12);
    let project = |a: f64| a.clamp(0.0, c);
    let dual_value = |a: &[f64]| {
        let qa: Vec<f64> = q.iter().map(|row| row.iter().zip(a).map(|(u, v)| u * v).sum()).collect();
        a.iter().sum::<f64>() - 0.5 * a.iter().zip(&qa).map(|(u, v)| u * v).sum::<f64>()
    };
    let primal_of = |a: &[f64]| {
        let mut w = vec![0.0; d + 1];
        for i in 0..n {
            for k in 0..=d {
                w[k] += a[i] * y[i] * aug[i][k];
            }
        }
        let hinge: f64 = (0..n)
            .map(|i| (1.0 - y[i] * w.iter().zip(&aug[i]).map(|(u, v)| u * v).sum::<f64>()).max(0.0))
            .sum();
        (0.5 * w.iter().map(|u| u * u).sum::<f64>() + c * hinge, w)
    };
    let mut alpha = vec![0.0; n];
    let mut z = alpha.clone();
    let mut t = 1.0f64;
    let mut best = (f64::INFINITY, vec![0.0; d + 1]);
    let mut dual = f64::NEG_INFINITY;
    for it in 0..2_000_000usize {
        let grad: Vec<f64> = q
            .iter()
            .map(|row| 1.0 - row.iter().zip(&z).map(|(u, v)| u * v).sum::<f64>())
            .collect();
        let next: Vec<f64> = z.iter().zip(&grad).map(|(a, g)| project(a + step * g)).collect();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        // adaptive restart when the objective would decrease
        let restart = dual_value(&next) < dual_value(&alpha);
        z = if restart {
            t = 1.0;
            next.clone()
        } else {
            t = t_next;
            next.iter().zip(&alpha).map(|(a, b)| a + momentum * (a - b)).collect()
        };
        alpha = next;
        if it % 50 == 0 {
            dual = dual.max(dual_value(&alpha));
            let (p, w) = primal_of(&alpha);
            if p < best.0 {
                best = (p, w);
            }
            if best.0 - dual <= rel_gap * best.0.abs().max(1e-12) {
                break;
            }
        }
    }
    let (primal, w) = best;
    QpSolution { primal, dual, bias: w[d], weights: w[..d].to_vec() }
}

#[derive(Debug, Deserialize)]
pub struct TTestCase {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub welch_t: f64,
    pub welch_df: f64,
    pub welch_p: f64,
    pub pooled_t: f64,
    pub pooled_p: f64,
}

pub fn ttest_reference() -> Vec<TTestCase> {
    serde_json::from_str(include_str!("../data/ttest_reference.json")).expect("t-test fixture")
}

#[derive(Debug, Deserialize)]
pub struct NormalityCase {
    pub x: Vec<f64>,
    pub statistic: f64,
    pub p: f64,
    pub skew_z: f64,
    pub kurtosis_z: f64,
}

pub fn normality_reference() -> Vec<NormalityCase> {
    serde_json::from_str(include_str!("../data/normaltest_reference.json")).expect("normality fixture")
}

/// Seeded Gaussian instance for classifier tests: `n` rows, `d` columns,
/// labels from a noisy linear rule with both classes guaranteed.
pub fn linear_instance(seed: u64, n: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    loop {
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|r| {
                let s: f64 = r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-0.8..0.8);
                if s > 0.0 { 1.0 } else { -1.0 }
            })
            .collect();
        if y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0) {
            return (x, y);
        }
    }
}
