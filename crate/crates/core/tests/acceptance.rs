//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use kneetex::geometry::{femoral_rois, mirror_for_laterality, plateau_frame, tibia_rois};
use kneetex::search::{best_for_cardinality, search_masks, search_streaming};
use kneetex::svm::primal_objective;
use kneetex::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn hurst_recovery() -> Outcome {
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut ok = true;
    for h in [0.3, 0.5, 0.7] {
        let err: f64 = (0..20u64)
            .map(|seed| (hurst(&fbm_patch(h, 256, seed).unwrap()).unwrap().value - h).abs())
            .sum::<f64>()
            / 20.0;
        ok &= err <= 0.05;
        rows.push(format!("H={h}: mean|err|={err:.4}"));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(10);
    check(ok, format!("{}; {:.2}s", rows.join(", "), elapsed.as_secs_f64()))
}

fn entropy_exactness() -> Outcome {
    let mut worst = 0.0f64;
    for k in [1usize, 2, 4, 16384] {
        let pixels: Vec<u16> = (0..16384).map(|i| (i % k) as u16).collect();
        let e = entropy(&Patch::new(128, 128, pixels).unwrap());
        worst = worst.max((e - (k as f64).log2()).abs());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut remap_ok = true;
    for _ in 0..50 {
        let levels = rng.random_range(2..4000u16);
        let px: Vec<u16> = (0..64 * 64).map(|_| rng.random_range(0..levels)).collect();
        let mut perm: Vec<u16> = (0..=MAX_INTENSITY).collect();
        perm.shuffle(&mut rng);
        let base = entropy(&Patch::new(64, 64, px.clone()).unwrap());
        let mapped: Vec<u16> = px.iter().map(|&v| perm[usize::from(v)]).collect();
        let mut moved = mapped.clone();
        moved.shuffle(&mut rng);
        remap_ok &= entropy(&Patch::new(64, 64, mapped).unwrap()) == base;
        remap_ok &= entropy(&Patch::new(64, 64, moved).unwrap()) == base;
    }
    check(worst < 1e-12 && remap_ok, format!("max |E - log2 k| = {worst:.1e}; remap/permutation exact: {remap_ok}"))
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(2..=50usize);
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        labels[0] = 1;
        labels[1] = 0;
        // coarse grid forces ties
        let grid = rng.random_range(2..20u32);
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..grid)) / 7.0).collect();
        let oracle = common::pair_count_auc(&scores, &labels);
        let roc = roc_curve(&scores, &labels).unwrap();
        worst = worst.max((roc.trapezoid_area() - oracle).abs()).max((auc(&scores, &labels).unwrap() - oracle).abs());
    }
    check(worst <= 1e-12, format!("200 sets, max |ROC area - pair count| = {worst:.1e}"))
}

fn svm_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut feasible = true;
    for i in 0..20u64 {
        let n = rng.random_range(6..=30usize);
        let d = rng.random_range(1..=5usize);
        let (x, y) = common::linear_instance(100 + i, n, d);
        let params = SvmParams::default();
        let sol = svm_train(&x, &y, &params).unwrap();
        let ours = primal_objective(&x, &y, &sol.weights, sol.bias, params.c);
        let reference = common::qp_svm(&x, &y, params.c, 1e-9);
        worst = worst.max((ours - reference.primal).abs() / reference.primal.abs());
        feasible &= sol.alpha.iter().all(|&a| (0.0..=params.c).contains(&a));
    }
    check(worst <= 1e-4 && feasible, format!("20 instances, max relative primal gap {worst:.2e}; 0<=alpha<=C: {feasible}"))
}

fn null_cohort() -> FeatureMatrix {
    planted_cohort(&CohortSpec::null(5), SynthMode::Fast).unwrap().matrix
}

fn null_calibration() -> Outcome {
    let matrix = null_cohort();
    let spec = CvSpec { repeats: 100, base_seed: 5, ..CvSpec::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut masks = Vec::new();
    while masks.len() < 20 {
        let m = FeatureMask::new(rng.random_range(1..=MASK_COUNT)).unwrap();
        if !masks.contains(&m) {
            masks.push(m);
        }
    }
    let results = search_masks(&matrix, &masks, &spec, &SvmParams::default()).unwrap();
    let lo = results.iter().map(|r| r.mean_auc).fold(f64::INFINITY, f64::min);
    let hi = results.iter().map(|r| r.mean_auc).fold(f64::NEG_INFINITY, f64::max);
    check(lo >= 0.40 && hi <= 0.60, format!("20 masks, mean AUC range [{lo:.4}, {hi:.4}]"))
}

const PLANTED: [usize; 3] = [0, 6, 11]; // H_F0, E_F0, E_T3

fn planted_spec(seed: u64) -> CohortSpec {
    CohortSpec::null(seed)
        .with_hurst_effect(RoiName::F0, 0.05)
        .with_entropy_effect(RoiName::F0, 0.3)
        .with_entropy_effect(RoiName::T3, 0.3)
}

fn planted_recovery() -> Outcome {
    let triple = FeatureMask::from_features(&PLANTED).unwrap();
    let cv = CvSpec { repeats: 20, ..CvSpec::default() };
    let masks: Vec<FeatureMask> = FeatureMask::with_cardinality(3).collect();
    let (mut screen_hits, mut triple_hits) = (0, 0);
    let mut misses = Vec::new();
    let mut timing_matrix = None;
    for seed in 0..20u64 {
        let cohort = planted_cohort(&planted_spec(seed), SynthMode::Fast).unwrap();
        let table = screen_features(&cohort.matrix, TTestKind::Welch).unwrap();
        let significant = table.significant(0.01);
        if significant == PLANTED {
            screen_hits += 1;
        } else {
            misses.push(format!("seed {seed}: p<0.01 for {significant:?}"));
        }
        let spec = CvSpec { base_seed: seed, ..cv };
        let rows = search_masks(&cohort.matrix, &masks, &spec, &SvmParams::default()).unwrap();
        let best = best_for_cardinality(&rows, 3).unwrap().best.mask;
        if best == triple {
            triple_hits += 1;
        } else {
            misses.push(format!("seed {seed}: best triple {best}"));
        }
        timing_matrix.get_or_insert(cohort.matrix);
    }
    let start = Instant::now();
    let full = search_all(&timing_matrix.unwrap(), &cv, &SvmParams::default()).unwrap();
    let elapsed = start.elapsed();
    let detail = format!(
        "screen exact {screen_hits}/20, triple {triple_hits}/20, full 4095-mask search (repeats=20, {} threads) {:.1}s{}{}",
        rayon::current_num_threads(),
        elapsed.as_secs_f64(),
        if misses.is_empty() { "" } else { "; " },
        misses.join("; ")
    );
    check(
        screen_hits >= 18 && triple_hits >= 16 && full.len() == 4095 && elapsed < Duration::from_secs(600),
        detail,
    )
}

fn near(a: Point, x: f64, y: f64) -> bool {
    (a.x - x).abs() <= 1e-9 && (a.y - y).abs() <= 1e-9
}

fn geometry_golden() -> Outcome {
    let mut failures = Vec::new();
    let frame = plateau_frame(Point::new(100.0, 200.0), Point::new(300.0, 200.0)).unwrap();
    if !near(frame.map(Point::new(0.5, 0.0)), 200.0, 200.0) {
        failures.push("unit (0.5,0)");
    }
    if !near(frame.map(Point::new(0.0, 1.0)), 100.0, 400.0) {
        failures.push("unit (0,1)");
    }
    let tibia = tibia_rois(&frame);
    let expect_t0 = [(130.0, 214.0), (165.0, 214.0), (165.0, 246.0), (130.0, 246.0)];
    let expect_t3 = [(235.0, 214.0), (270.0, 214.0), (270.0, 246.0), (235.0, 246.0)];
    for (roi, expect, name) in [(&tibia[0], expect_t0, "T0"), (&tibia[3], expect_t3, "T3")] {
        if !roi.corners().iter().zip(expect).all(|(c, (x, y))| near(*c, x, y)) {
            failures.push(name);
        }
    }
    if !tibia.iter().all(|r| (r.height / r.width - 0.16 / 0.175).abs() < 1e-12) {
        failures.push("aspect");
    }
    let lm = LandmarkSet {
        subject_id: "golden".into(),
        medial_plateau: Point::new(100.0, 200.0),
        lateral_plateau: Point::new(300.0, 200.0),
        medial_condyle_tip: Point::new(100.0, 150.0),
        lateral_condyle_tip: Point::new(300.0, 150.0),
        medial_condyle_extent: AxisInterval::new(50.0, 150.0),
        lateral_condyle_extent: AxisInterval::new(160.0, 200.0),
        pixel_spacing: 0.075,
        laterality: Laterality::Left,
        label: Label::Unlabeled,
    };
    if lm.femoral_offset_px() != 53.0 {
        failures.push("offset 53 px");
    }
    let femur = femoral_rois(&lm, 35.0).unwrap();
    let f0 = [(182.5, 62.0), (217.5, 62.0), (217.5, 97.0), (182.5, 97.0)];
    let f1 = [(262.5, 62.0), (297.5, 62.0), (297.5, 97.0), (262.5, 97.0)];
    if !femur[0].corners().iter().zip(f0).all(|(c, (x, y))| near(*c, x, y)) {
        failures.push("F0 corners");
    }
    if !femur[1].corners().iter().zip(f1).all(|(c, (x, y))| near(*c, x, y)) {
        failures.push("F1 corners");
    }
    let layout = RoiLayout::from_landmarks(&lm).unwrap();
    if layout.get(RoiName::F0).width != 35.0 || layout.warnings().count() != 0 {
        failures.push("layout femoral side");
    }
    // the offset survives any rotation of the input
    for deg in [0.0f64, 17.0, 90.0, 133.0, 251.0] {
        let (s, c) = deg.to_radians().sin_cos();
        let rot = |p: Point| Point::new(c * p.x - s * p.y + 1000.0, s * p.x + c * p.y + 1000.0);
        let turned = LandmarkSet {
            medial_plateau: rot(lm.medial_plateau),
            lateral_plateau: rot(lm.lateral_plateau),
            medial_condyle_tip: rot(lm.medial_condyle_tip),
            lateral_condyle_tip: rot(lm.lateral_condyle_tip),
            ..lm.clone()
        };
        let f = femoral_rois(&turned, 35.0).unwrap();
        let tip = turned.medial_condyle_tip;
        let axis = turned.lateral_condyle_tip - tip;
        let normal = Point::new(-axis.y, axis.x) * (1.0 / axis.norm());
        let bottom = f[0].corners()[3];
        if ((bottom - tip).dot(normal) + 53.0).abs() > 1e-9 {
            failures.push("rotated offset");
        }
    }
    let right = LandmarkSet { laterality: Laterality::Right, medial_plateau: Point::new(10.0, 5.0), ..lm.clone() };
    if mirror_for_laterality(&right, 3072, Laterality::Left).medial_plateau.x != 3061.0 {
        failures.push("mirror");
    }
    check(failures.is_empty(), if failures.is_empty() { "all fixtures within 1e-9 px".into() } else { failures.join(", ") })
}

fn rows_bits(rows: &[SubsetResult]) -> Vec<(u16, u64, u64)> {
    rows.iter().map(|r| (r.mask.bits(), r.mean_auc.to_bits(), r.std_auc.to_bits())).collect()
}

fn determinism() -> Outcome {
    let matrix = planted_cohort(&planted_spec(8), SynthMode::Fast).unwrap().matrix;
    let spec = CvSpec { repeats: 3, base_seed: 8, ..CvSpec::default() };
    let params = SvmParams::default();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| rows_bits(&search_all(&matrix, &spec, &params).unwrap()))
    };
    let one = run(1);
    let four = run(4);
    let eight = run(8);
    let mut resumed = Vec::new();
    for range in [1..=1000u16, 1001..=2047, 2048..=4095] {
        search_streaming(&matrix, range, 97, &spec, &params, |chunk| {
            resumed.extend(rows_bits(chunk));
            Ok(())
        })
        .unwrap();
    }
    let same = one.len() == 4095 && one == four && one == eight && one == resumed;
    check(same, format!("4095 rows bitwise equal across 1/4/8 threads and 3 resumed ranges: {same}"))
}

fn timed(f: &mut impl FnMut()) -> Duration {
    let t = Instant::now();
    f();
    t.elapsed()
}

fn descriptor_speed() -> Outcome {
    let patch = fbm_patch(0.5, 512, 9).unwrap();
    let mut run_entropy = || {
        std::hint::black_box(entropy(std::hint::black_box(&patch)));
    };
    let mut run_hurst = || {
        let _ = std::hint::black_box(hurst(std::hint::black_box(&patch)));
    };
    run_entropy();
    run_hurst();
    // alternate the two so both see the same machine state
    let (mut te, mut th): (Vec<Duration>, Vec<Duration>) = (0..31)
        .map(|_| (timed(&mut run_entropy), timed(&mut run_hurst)))
        .unzip();
    te.sort();
    th.sort();
    let (te, th) = (te[15], th[15]);
    let ratio = th.as_secs_f64() / te.as_secs_f64();
    check(ratio >= 10.0, format!("512x512 median of 31: entropy {te:?}, hurst {th:?}, ratio {ratio:.1}x"))
}

fn welch_reference() -> Outcome {
    let cases = common::ttest_reference();
    let (mut dt, mut dp) = (0.0f64, 0.0f64);
    for c in &cases {
        let r = welch_t_test(&c.a, &c.b).unwrap();
        dt = dt.max((r.t_statistic - c.welch_t).abs());
        dp = dp.max((r.p_value - c.welch_p).abs());
    }
    check(
        dt <= 1e-9 && dp <= 1e-9 && cases.len() >= 51,
        format!("{} pairs, max |dt| = {dt:.1e}, max |dp| = {dp:.1e}", cases.len()),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "Hurst oracle recovery", hurst_recovery),
        (2, "entropy exactness", entropy_exactness),
        (3, "AUC oracle equivalence", auc_oracle),
        (4, "SVM oracle equivalence", svm_oracle),
        (5, "null calibration", null_calibration),
        (6, "planted-signal recovery", planted_recovery),
        (7, "geometry golden values", geometry_golden),
        (8, "search determinism", determinism),
        (9, "entropy vs Hurst speed", descriptor_speed),
        (10, "Welch t-test reference", welch_reference),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("ACCEPTANCE {id:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("ACCEPTANCE {id:>2} FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {failed} criterion(s) failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
