use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

const SMALL: &[&str] = &[
    "--set",
    "subjects=2",
    "--set",
    "level_strides=6",
    "--set",
    "incline_strides=6",
    "--set",
    "decline_strides=6",
    "--set",
    "ascent_steady_strides=2",
    "--set",
    "descent_steady_strides=2",
    "--set",
    "stair_trials=2",
    "--set",
    "repetitions_per_stair_trial=1",
    "--set",
    "hyperopt_restarts=1",
    "--set",
    "hyperopt_max_iterations=30",
    "--set",
    "hyperopt_max_rows=40",
];

fn sonokin(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sonokin"))
        .args(args)
        .arg("--out")
        .arg(out)
        .args(SMALL)
        .output()
        .unwrap()
}

fn ok(output: &Output) {
    assert!(
        output.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        output.status,
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let digest = Sha256::digest(std::fs::read(&path).unwrap());
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                out.insert(
                    rel,
                    digest
                        .iter()
                        .map(|b| format!("{b:02x}"))
                        .collect::<String>(),
                );
            }
        }
    }
    out
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = sonokin(&["synth", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_subcommand_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sonokin(&["plot"], dir.path()).status.code(), Some(1));
}

#[test]
fn bad_setting_exits_one_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = sonokin(&["synth", "--set", "holdout_fraction=0.9"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0.9"));
    let out = sonokin(&["synth", "--set", "no_such_key=1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no_such_key"));
}

#[test]
fn missing_manifest_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = sonokin(&["evaluate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest.csv"));
}

#[test]
fn corrupt_report_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("rmse.csv"), "not,a,report\n").unwrap();
    assert_eq!(sonokin(&["stats"], dir.path()).status.code(), Some(2));
}

#[test]
fn synth_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    ok(&sonokin(&["synth", "--seed", "7"], a.path()));
    ok(&sonokin(&["synth", "--seed", "7"], b.path()));
    let (da, db) = (tree_digest(a.path()), tree_digest(b.path()));
    assert!(da.contains_key("manifest.csv"));
    assert_eq!(da, db);

    let c = tempfile::tempdir().unwrap();
    ok(&sonokin(&["synth", "--seed", "8"], c.path()));
    assert_ne!(da, tree_digest(c.path()));
}

#[test]
fn full_pipeline_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&sonokin(&["synth"], d));
    let manifest_before = std::fs::read(d.join("manifest.csv")).unwrap();

    ok(&sonokin(&["extract"], d));
    let features = std::fs::read_to_string(d.join("features/S01/level_0.csv")).unwrap();
    assert!(features.starts_with("frame_index,f0,"));

    ok(&sonokin(
        &[
            "train",
            "--set",
            "targets=[\"knee_angle\"]",
            "--set",
            "feature_sets=[\"intensity\"]",
        ],
        d,
    ));
    let models: Vec<_> = std::fs::read_dir(d.join("models/S02")).unwrap().collect();
    // five task-specific models and one pooled model
    assert_eq!(models.len(), 6);
    assert!(d
        .join("models/S01/task_invariant_all_intensity_knee_angle.usgp")
        .is_file());

    ok(&sonokin(&["evaluate"], d));
    let rmse = std::fs::read_to_string(d.join("rmse.csv")).unwrap();
    let mut combos = BTreeSet::new();
    for line in rmse.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f[5] == "all" {
            combos.insert((
                f[1].to_string(),
                f[2].to_string(),
                f[3].to_string(),
                f[4].to_string(),
            ));
        }
    }
    assert_eq!(combos.len(), 5 * 2 * 2 * 2);
    assert!(rmse.contains(",walk_to_stair,"));
    assert!(std::fs::read_to_string(d.join("trajectories.csv"))
        .unwrap()
        .starts_with("series,percent,mean,sd\n"));
    assert!(d.join("swing_flexion.csv").is_file());

    ok(&sonokin(&["stats"], d));
    let anova = std::fs::read_to_string(d.join("anova_level_knee_angle.csv")).unwrap();
    assert!(anova.starts_with("effect,ss,dof,F,p\n"));
    let posthoc =
        std::fs::read_to_string(d.join("posthoc_stair_descent_knee_velocity.csv")).unwrap();
    assert_eq!(posthoc.lines().count(), 7);

    let out = sonokin(&["report"], d);
    ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Table 4."));
    assert_eq!(std::fs::read_to_string(d.join("tables.txt")).unwrap(), text);

    assert_eq!(
        std::fs::read(d.join("manifest.csv")).unwrap(),
        manifest_before
    );
}
