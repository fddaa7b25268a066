//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stderr so the summary survives output capture.

use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sonokin::experiment::{
    cohort_cells, load_cohort, make_treadmill_folds, prepare_subject, render_tables, run_cohort,
    run_statistics, swing_flexion_from_cells, write_trajectories, CellResult, ExperimentConfig,
    FeatureSet, FitSettings, Paradigm, RmseReport, SubjectData,
};
use sonokin::features::{
    compute_temporal_features, extract_intensity_features, FeatureConfig, FeatureMatrix,
};
use sonokin::frames::{FrameGeometry, FrameSequence, UltrasoundFrame};
use sonokin::gait::StrideKey;
use sonokin::gpr::{Kernel, KernelSpec};
use sonokin::stats::{
    bonferroni_posthoc, rm_two_way_anova, write_posthoc_csv, Effect, RmDesign, DEFAULT_FAMILY_SIZE,
};
use sonokin::synth::{generate_cohort, generate_trial, SynthConfig};
use sonokin::{GprModel, Target, Task, TrialRecord};

fn report_line(criterion: u8, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr().lock(),
        "criterion {criterion}: {verdict} ({detail})"
    );
}

// ---- 1: GPR against dense inversion ----

const GPR_REL_TOL: f64 = 1e-8;
const GPR_RUNTIME: Duration = Duration::from_secs(5);

fn oracle_kernel(k: &Kernel, a: &[f64], b: &[f64]) -> f64 {
    match *k {
        Kernel::RationalQuadratic {
            signal_variance,
            length_scale,
            shape,
        } => {
            let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
            signal_variance * (1.0 + r2 / (2.0 * shape * length_scale.powi(2))).powf(-shape)
        }
        Kernel::PolynomialDegree2 { bias, scale } => {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (bias + d / scale.powi(2)).powi(2)
        }
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1.0)
}

/// Largest relative error of (means, LML) for one seeded problem.
fn gpr_problem(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..=30);
    let dims = rng.random_range(1..=10);
    let spec = if seed.is_multiple_of(2) {
        KernelSpec::rational_quadratic(
            rng.random_range(0.3..3.0),
            rng.random_range(0.5..3.0),
            rng.random_range(0.3..5.0),
            rng.random_range(0.01..0.5),
        )
    } else {
        KernelSpec::polynomial_degree2(
            rng.random_range(0.1..2.0),
            rng.random_range(1.0..4.0),
            rng.random_range(0.05..0.5),
        )
    };
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dims).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..40.0)).collect();
    let queries: Vec<Vec<f64>> = (0..5)
        .map(|_| (0..dims).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();

    let model = GprModel::fit(
        &FeatureMatrix::from_rows(&rows).unwrap(),
        &y,
        &spec,
        Target::KneeAngle,
    )
    .unwrap();
    let got = model
        .predict_mean(&FeatureMatrix::from_rows(&queries).unwrap())
        .unwrap();

    let (mu, sd) = (model.target_mean(), model.target_sd());
    let ys = DVector::from_iterator(n, y.iter().map(|v| (v - mu) / sd));
    let diag = spec.noise_variance + model.jitter_used();
    let a = DMatrix::from_fn(n, n, |i, j| {
        oracle_kernel(&spec.kernel, &rows[i], &rows[j]) + if i == j { diag } else { 0.0 }
    });
    let inv = a.clone().try_inverse().unwrap();
    let alpha = &inv * &ys;
    let mut worst_mean: f64 = 0.0;
    for (q, g) in queries.iter().zip(&got) {
        let k = DVector::from_iterator(n, rows.iter().map(|r| oracle_kernel(&spec.kernel, q, r)));
        worst_mean = worst_mean.max(rel_err(*g, mu + sd * k.dot(&alpha)));
    }
    let lml = -0.5 * ys.dot(&alpha)
        - 0.5 * a.determinant().ln()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    (worst_mean, rel_err(model.log_marginal_likelihood(), lml))
}

#[test]
fn criterion_1_gpr_matches_dense_inversion() {
    let start = Instant::now();
    let (mut mean_err, mut lml_err) = (0.0f64, 0.0f64);
    for seed in 0..50 {
        let (m, l) = gpr_problem(seed);
        mean_err = mean_err.max(m);
        lml_err = lml_err.max(l);
    }
    let elapsed = start.elapsed();
    let pass = mean_err <= GPR_REL_TOL && lml_err <= GPR_REL_TOL && elapsed < GPR_RUNTIME;
    report_line(
        1,
        pass,
        format!(
            "50 problems, max mean err {mean_err:.2e}, max LML err {lml_err:.2e}, {elapsed:.2?}"
        ),
    );
    assert!(pass);
}

// ---- 2: kernel means and temporal derivatives ----

fn single_frame_sequence(g: FrameGeometry, pixels: Vec<u8>) -> FrameSequence {
    FrameSequence::new(g, vec![UltrasoundFrame::new(0, g, pixels).unwrap()]).unwrap()
}

#[test]
fn criterion_2_features_match_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let config = FeatureConfig::default();
    let mut mismatches = 0usize;
    for _ in 0..100 {
        let spacing: f64 = rng.random_range(0.2..1.0);
        let k = ((config.kernel_size_mm / spacing).round() as usize).max(1);
        let g = FrameGeometry::new(
            rng.random_range(k..k * 6),
            rng.random_range(k..k * 6),
            spacing,
        )
        .unwrap();
        let pixels: Vec<u8> = (0..g.pixel_count()).map(|_| rng.random()).collect();
        let seq = single_frame_sequence(g, pixels.clone());
        let (m, grid) = extract_intensity_features(&seq, &config).unwrap();
        assert_eq!(grid.kernel_px, k);
        for r in 0..g.height_px / k {
            for c in 0..g.width_px / k {
                let mut sum = 0u64;
                for y in r * k..(r + 1) * k {
                    for x in c * k..(c + 1) * k {
                        sum += pixels[y * g.width_px + x] as u64;
                    }
                }
                if m.row(0)[grid.flat_index(r, c)] != sum as f64 / (k * k) as f64 {
                    mismatches += 1;
                }
            }
        }
    }

    let g = FrameGeometry::new(12, 12, 0.5).unwrap();
    let frames = |f: &dyn Fn(usize) -> u8| {
        let v = (0..5)
            .map(|i| UltrasoundFrame::new(50 * i as i64, g, vec![f(i); 144]).unwrap())
            .collect();
        FrameSequence::new(g, v).unwrap()
    };
    let temporal = |seq: &FrameSequence| {
        let (m, _) = extract_intensity_features(seq, &config).unwrap();
        compute_temporal_features(&m, &seq.timestamps()).unwrap()
    };
    let constant_ok = temporal(&frames(&|_| 97))
        .values()
        .iter()
        .all(|&v| v == 0.0);
    let ramp_ok = temporal(&frames(&|i| 10 + 2 * i as u8))
        .values()
        .iter()
        .all(|&v| v == 40.0);

    let elapsed = start.elapsed();
    let pass = mismatches == 0 && constant_ok && ramp_ok && elapsed < Duration::from_secs(5);
    report_line(
        2,
        pass,
        format!("{mismatches} kernel mismatches, constant->0 {constant_ok}, ramp->40/s {ramp_ok}, {elapsed:.2?}"),
    );
    assert!(pass);
}

// ---- 3: treadmill folds ----

#[test]
fn criterion_3_fold_invariants() {
    let start = Instant::now();
    let mut violations = Vec::new();
    for n in 5..=200 {
        let all: Vec<StrideKey> = (0..n)
            .map(|i| StrideKey {
                task: Task::Level,
                trial_index: 0,
                stride_index: i,
            })
            .collect();
        for fraction in [0.1, 0.2, 0.33] {
            let folds = make_treadmill_folds(&all, fraction).unwrap();
            let flat: Vec<StrideKey> = folds
                .iter()
                .flat_map(|f| f.held_out.iter().copied())
                .collect();
            let disjoint = folds
                .iter()
                .all(|f| f.held_out.iter().all(|k| !f.train.contains(k)));
            let complete = folds
                .iter()
                .all(|f| f.held_out.len() + f.train.len() == all.len());
            if flat != all || !disjoint || !complete {
                violations.push(format!("{n}@{fraction}"));
            }
            if fraction == 0.2
                && (25..=33).contains(&n)
                && !matches!(folds[0].held_out.len(), 5 | 6)
            {
                violations.push(format!("block {n}"));
            }
            if fraction == 0.2
                && n == 25
                && folds.iter().map(|f| f.held_out.len()).collect::<Vec<_>>() != [5; 5]
            {
                violations.push("25 strides".into());
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = violations.is_empty() && elapsed < Duration::from_secs(1);
    report_line(3, pass, format!("violations {violations:?}, {elapsed:.2?}"));
    assert!(pass);
}

// ---- 4: ANOVA and Bonferroni fixtures ----

#[test]
fn criterion_4_statistics_fixtures() {
    // Oracle values: statsmodels AnovaRM on the same table.
    let raw = [
        [6.1, 5.0, 6.9, 5.4],
        [4.8, 4.1, 5.9, 4.6],
        [7.3, 6.2, 7.7, 6.9],
    ];
    let design = RmDesign::new(
        vec!["s1".into(), "s2".into(), "s3".into()],
        vec!["ts".into(), "ti".into()],
        vec!["int".into(), "tmp".into()],
        raw.iter()
            .map(|r| vec![vec![r[0], r[1]], vec![r[2], r[3]]])
            .collect(),
    )
    .unwrap();
    let table = rm_two_way_anova(&design).unwrap();
    let expected = [
        (Effect::A, 72.428_571_428_6, 0.013_527_193_051_7),
        (Effect::B, 98.255_813_953_5, 0.010_024_731_499_3),
        (Effect::Interaction, 0.731_343_283_582, 0.482_545_110_332),
    ];
    let anova_ok = expected.iter().all(|&(e, f, p)| {
        let row = table.effect(e);
        (row.f - f).abs() <= 1e-6 && (row.p - p).abs() <= 1e-4
    });

    // Differences [2, 1, 3]: t = 2 sqrt(3); with 2 dof the two-sided p is
    // 1 - t / sqrt(t^2 + 2) in closed form.
    let pair = RmDesign::new(
        vec!["1".into(), "2".into(), "3".into()],
        vec!["x".into(), "y".into()],
        vec!["u".into(), "v".into()],
        vec![
            vec![vec![2.0, 0.0], vec![0.0, 0.0]],
            vec![vec![1.0, 0.0], vec![0.0, 0.0]],
            vec![vec![3.0, 0.0], vec![0.0, 0.0]],
        ],
    )
    .unwrap();
    let r = &bonferroni_posthoc(&pair, &[((0, 0), (0, 1))], Some(DEFAULT_FAMILY_SIZE)).unwrap()[0];
    let t_ref = 2.0 * 3f64.sqrt();
    let p_adj_ref = DEFAULT_FAMILY_SIZE as f64 * (1.0 - t_ref / (t_ref * t_ref + 2.0).sqrt());
    let bonf_ok = (r.t - 3.4641).abs() <= 1e-4 && (r.p_adjusted - p_adj_ref).abs() <= 1e-4;
    let pass = anova_ok && bonf_ok;
    report_line(
        4,
        pass,
        format!(
            "F_A {:.6}, F_B {:.6}, F_AB {:.6}; t {:.4}, adjusted p {:.4} vs closed form {:.4} (quoted 0.4453 differs by {:.1e})",
            table.effect(Effect::A).f,
            table.effect(Effect::B).f,
            table.effect(Effect::Interaction).f,
            r.t,
            r.p_adjusted,
            p_adj_ref,
            (r.p_adjusted - 0.4453).abs()
        ),
    );
    assert!(pass);
}

// ---- 5-8: default synthetic cohort ----

const TREADMILL: [Task; 3] = [Task::Level, Task::Incline, Task::Decline];
const ANGLE_LIMIT_DEG: f64 = 3.0;
const VELOCITY_LIMIT_DEG_S: f64 = 30.0;
const ZERO_NOISE_LIMIT_DEG: f64 = 1.0;
const COHORT_RUNTIME: Duration = Duration::from_secs(600);
const PARADIGM_RATIO: f64 = 1.5;
const TEMPORAL_WINS_NEEDED: usize = 6;

fn prepare_cohort(config: &SynthConfig) -> Vec<SubjectData> {
    (0..config.subjects)
        .map(|s| {
            let trials: Vec<TrialRecord> = Task::ALL
                .into_iter()
                .flat_map(|task| (0..config.trials_for(task)).map(move |t| (task, t)))
                .map(|(task, t)| generate_trial(config, s, task, t).unwrap().record)
                .collect();
            prepare_subject(&trials, FeatureConfig::default().kernel_size_mm).unwrap()
        })
        .collect()
}

struct CohortRun {
    cells: Vec<CellResult>,
    report: RmseReport,
    elapsed: Duration,
}

fn cohort_run() -> &'static CohortRun {
    static RUN: OnceLock<CohortRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let subjects = prepare_cohort(&SynthConfig::default());
        let cells = run_cohort(&subjects, &cohort_cells(1, &FitSettings::default())).unwrap();
        let report = RmseReport::from_cells(&cells);
        CohortRun {
            cells,
            report,
            elapsed: start.elapsed(),
        }
    })
}

fn treadmill_mean(report: &RmseReport, target: Target) -> f64 {
    report
        .pooled_mean(
            target,
            Paradigm::TaskSpecific,
            FeatureSet::IntensityPlusTemporal,
            &TREADMILL,
        )
        .unwrap()
}

#[test]
fn criterion_5_task_specific_accuracy() {
    let run = cohort_run();
    let failures: usize = run.cells.iter().map(|c| c.failures().count()).sum();
    let angle = treadmill_mean(&run.report, Target::KneeAngle);
    let velocity = treadmill_mean(&run.report, Target::KneeVelocity);

    let zero_subjects = prepare_cohort(&SynthConfig::zero_noise());
    let mut cfg = ExperimentConfig::new(
        Paradigm::TaskSpecific,
        FeatureSet::IntensityPlusTemporal,
        Target::KneeAngle,
    );
    cfg.seed = 1;
    let zero = RmseReport::from_cells(&run_cohort(&zero_subjects, &[cfg]).unwrap());
    let zero_angle = treadmill_mean(&zero, Target::KneeAngle);

    let pass = failures == 0
        && angle <= ANGLE_LIMIT_DEG
        && velocity <= VELOCITY_LIMIT_DEG_S
        && zero_angle <= ZERO_NOISE_LIMIT_DEG
        && run.elapsed < COHORT_RUNTIME;
    report_line(
        5,
        pass,
        format!(
            "treadmill angle {angle:.3} deg, velocity {velocity:.3} deg/s, zero-noise angle {zero_angle:.4} deg, \
             {failures} failed folds, full 8-cell cohort in {:.1?}",
            run.elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_6_paradigms_are_comparable() {
    let run = cohort_run();
    let mut ratios = Vec::new();
    for target in Target::ALL {
        for fs in FeatureSet::ALL {
            let ts = run
                .report
                .pooled_mean(target, Paradigm::TaskSpecific, fs, &Task::ALL)
                .unwrap();
            let ti = run
                .report
                .pooled_mean(target, Paradigm::TaskInvariant, fs, &Task::ALL)
                .unwrap();
            ratios.push((format!("{target}/{fs}"), ti / ts));
        }
    }
    let stats = run_statistics(&run.report).unwrap();
    let text = render_tables(&run.report, &stats);
    let shows_reference = text.contains("task-specific 6.00, task-invariant 7.06")
        && text.contains("task-specific 51.80, task-invariant 53.10");
    let pass = ratios.iter().all(|(_, r)| *r <= PARADIGM_RATIO) && shows_reference;
    let detail: Vec<String> = ratios.iter().map(|(k, r)| format!("{k} {r:.3}")).collect();
    report_line(
        6,
        pass,
        format!(
            "invariant/specific {}; reference shown {shows_reference}",
            detail.join(", ")
        ),
    );
    let _ = writeln!(std::io::stderr().lock(), "{text}");
    assert!(pass);
}

fn subject_velocity(report: &RmseReport, fs: FeatureSet) -> Vec<f64> {
    let mut totals: Vec<(String, f64)> = Vec::new();
    for task in Task::ALL {
        for (s, v) in
            report.subject_means(task, Target::KneeVelocity, Paradigm::TaskSpecific, fs, None)
        {
            match totals.iter_mut().find(|(id, _)| *id == s) {
                Some((_, acc)) => *acc += v / Task::ALL.len() as f64,
                None => totals.push((s, v / Task::ALL.len() as f64)),
            }
        }
    }
    totals.into_iter().map(|(_, v)| v).collect()
}

#[test]
fn criterion_7_temporal_features_help_velocity() {
    let run = cohort_run();
    let with = subject_velocity(&run.report, FeatureSet::IntensityPlusTemporal);
    let without = subject_velocity(&run.report, FeatureSet::Intensity);
    let wins = with.iter().zip(&without).filter(|(a, b)| a < b).count();
    let pass = with.len() == 7 && wins >= TEMPORAL_WINS_NEEDED;
    let pairs: Vec<String> = with
        .iter()
        .zip(&without)
        .map(|(a, b)| format!("{a:.2}<{b:.2}"))
        .collect();
    report_line(
        7,
        pass,
        format!(
            "{wins}/{} subjects improved: {}",
            with.len(),
            pairs.join(" ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_swing_flexion() {
    let run = cohort_run();
    let cells: Vec<&CellResult> = run
        .cells
        .iter()
        .filter(|c| {
            c.paradigm == Paradigm::TaskSpecific
                && c.feature_set == FeatureSet::IntensityPlusTemporal
        })
        .collect();
    let reports = swing_flexion_from_cells(&cells).unwrap();
    let pass = reports.len() == 2 && reports.iter().all(|r| r.pass);
    let detail: Vec<String> = reports
        .iter()
        .map(|r| {
            format!(
                "{} {:.1} vs {:.1} over {} strides",
                r.task, r.mean_peak_deg, r.threshold_deg, r.strides
            )
        })
        .collect();
    report_line(8, pass, detail.join(", "));
    assert!(pass);
}

// ---- 9: determinism ----

fn reduced_pipeline(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let synth = SynthConfig {
        subjects: 2,
        level_strides: 8,
        incline_strides: 8,
        decline_strides: 8,
        ascent_steady_strides: 2,
        descent_steady_strides: 2,
        stair_trials: 2,
        repetitions_per_stair_trial: 1,
        seed: 11,
        ..SynthConfig::default()
    };
    generate_cohort(&synth, dir).unwrap();
    let subjects = load_cohort(
        &dir.join("manifest.csv"),
        FeatureConfig::default().kernel_size_mm,
    )
    .unwrap();
    let mut fit = FitSettings::default();
    fit.hyperopt.restarts = 2;
    fit.hyperopt.max_iterations = 60;
    let cells = run_cohort(&subjects, &cohort_cells(3, &fit)).unwrap();
    let report = RmseReport::from_cells(&cells);

    let mut out = Vec::new();
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    out.push(("rmse.csv".to_string(), buf));
    let mut buf = Vec::new();
    write_trajectories(&mut buf, &cells).unwrap();
    out.push(("trajectories.csv".to_string(), buf));
    for s in run_statistics(&report).unwrap() {
        let mut buf = Vec::new();
        s.anova.write_csv(&mut buf).unwrap();
        write_posthoc_csv(&mut buf, &s.posthoc).unwrap();
        out.push((format!("stats_{}_{}.csv", s.task, s.target), buf));
    }
    out.push((
        "manifest.csv".to_string(),
        std::fs::read(dir.join("manifest.csv")).unwrap(),
    ));
    out
}

#[test]
fn criterion_9_repeat_runs_are_byte_identical() {
    let start = Instant::now();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = reduced_pipeline(a.path());
    let second = reduced_pipeline(b.path());
    let differing: Vec<&str> = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let pass = first.len() == second.len() && differing.is_empty();
    report_line(
        9,
        pass,
        format!(
            "{} outputs compared, differing {differing:?}, {:.1?}",
            first.len(),
            start.elapsed()
        ),
    );
    assert!(pass);
}
