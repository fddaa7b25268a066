//! Subcommand bodies. Work runs in parallel; files are written afterwards in
//! a fixed order.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use sonokin::experiment::{
    fit_final_model, load_cohort, render_tables, run_cohort, run_statistics,
    swing_flexion_from_cells, write_trajectories, CellResult, FeatureSet, Paradigm, RmseReport,
    StatsSummary,
};
use sonokin::features::{
    assemble_feature_matrix, compute_temporal_features, extract_intensity_features, FeatureConfig,
};
use sonokin::frames::{load_trial, read_manifest};
use sonokin::stats::{all_condition_pairs, bonferroni_posthoc, write_posthoc_csv};
use sonokin::synth::generate_cohort;
use sonokin::Target;

use crate::settings::{InvalidSettings, Settings};

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(InvalidSettings(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut w = create_file(path)?;
    w.write_all(bytes)
        .with_context(|| format!("writing {}", path.display()))?;
    w.flush()
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn synth(settings: &Settings, out: &Path) -> Result<()> {
    let entries = generate_cohort(&settings.synth(), out).context("generating cohort")?;
    println!(
        "wrote {} trials and {}",
        entries.len(),
        out.join("manifest.csv").display()
    );
    Ok(())
}

pub fn extract(settings: &Settings, out: &Path) -> Result<()> {
    let manifest = settings.manifest_path(out);
    require_file(&manifest, "manifest")?;
    let entries =
        read_manifest(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let config = FeatureConfig {
        kernel_size_mm: settings.kernel_size_mm,
        include_temporal: settings.include_temporal,
        standardize: false,
    };
    let files: Vec<(PathBuf, Vec<u8>)> = entries
        .par_iter()
        .map(|e| {
            let p = &e.paths;
            let trial = load_trial(&p.frames, &p.events, &p.kinematics, e.meta.clone())
                .with_context(|| format!("loading {}", p.frames.display()))?;
            let (intensity, _) = extract_intensity_features(&trial.frames, &config)?;
            let temporal = if config.include_temporal {
                Some(compute_temporal_features(
                    &intensity,
                    &trial.frames.timestamps(),
                )?)
            } else {
                None
            };
            let matrix = assemble_feature_matrix(&intensity, temporal.as_ref(), &config)?;
            let mut buf = Vec::new();
            matrix.write_csv(&mut buf)?;
            let name = format!("{}_{}.csv", e.meta.task, e.meta.trial_index);
            Ok((
                out.join("features").join(&e.meta.subject_id).join(name),
                buf,
            ))
        })
        .collect::<Result<_>>()?;
    for (path, bytes) in &files {
        write_bytes(path, bytes)?;
    }
    println!(
        "wrote {} feature files under {}",
        files.len(),
        out.join("features").display()
    );
    Ok(())
}

pub fn train(settings: &Settings, out: &Path) -> Result<()> {
    let manifest = settings.manifest_path(out);
    require_file(&manifest, "manifest")?;
    let subjects = load_cohort(&manifest, settings.kernel_size_mm).context("loading cohort")?;
    let configs = settings.experiment_configs()?;
    let mut jobs = Vec::new();
    for s in &subjects {
        for c in &configs {
            match c.paradigm {
                Paradigm::TaskSpecific => jobs.extend(s.present_tasks().map(|t| (s, c, Some(t)))),
                Paradigm::TaskInvariant => jobs.push((s, c, None)),
            }
        }
    }
    let models: Vec<(PathBuf, Vec<u8>)> = jobs
        .par_iter()
        .map(|&(s, c, task)| {
            let bundle = fit_final_model(s, c, task).with_context(|| {
                format!(
                    "training {} {} {} {}",
                    s.subject_id, c.paradigm, c.feature_set, c.target
                )
            })?;
            let scope = task.map_or("all".to_string(), |t| t.to_string());
            let name = format!("{}_{scope}_{}_{}.usgp", c.paradigm, c.feature_set, c.target);
            Ok((
                out.join("models").join(&s.subject_id).join(name),
                bundle.to_bytes(),
            ))
        })
        .collect::<Result<_>>()?;
    for (path, bytes) in &models {
        write_bytes(path, bytes)?;
    }
    println!(
        "wrote {} models under {}",
        models.len(),
        out.join("models").display()
    );
    Ok(())
}

fn write_swing_flexion(path: &Path, cells: &[CellResult]) -> Result<bool> {
    let angle: Vec<&CellResult> = cells
        .iter()
        .filter(|c| {
            c.paradigm == Paradigm::TaskSpecific
                && c.feature_set == FeatureSet::IntensityPlusTemporal
                && c.target == Target::KneeAngle
        })
        .collect();
    if angle.is_empty() {
        return Ok(false);
    }
    let reports = swing_flexion_from_cells(&angle)?;
    let mut w = create_file(path)?;
    writeln!(w, "task,mean_peak_deg,threshold_deg,strides,pass")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.task, r.mean_peak_deg, r.threshold_deg, r.strides, r.pass
        )?;
    }
    w.flush()?;
    Ok(true)
}

pub fn evaluate(settings: &Settings, out: &Path) -> Result<()> {
    let manifest = settings.manifest_path(out);
    require_file(&manifest, "manifest")?;
    let subjects = load_cohort(&manifest, settings.kernel_size_mm).context("loading cohort")?;
    let cells = run_cohort(&subjects, &settings.experiment_configs()?)
        .context("running cross-validation")?;
    for c in &cells {
        for (fold, err) in c.failures() {
            eprintln!(
                "warning: {} {} {} {} {} fold {} failed: {err}",
                c.subject_id, c.paradigm, c.feature_set, c.target, fold.task, fold.fold
            );
        }
    }
    let report = RmseReport::from_cells(&cells);
    let path = out.join("rmse.csv");
    let mut w = create_file(&path)?;
    report.write_csv(&mut w)?;
    w.flush()?;

    let mut w = create_file(&out.join("trajectories.csv"))?;
    write_trajectories(&mut w, &cells)?;
    w.flush()?;

    let swing = write_swing_flexion(&out.join("swing_flexion.csv"), &cells)?;
    println!(
        "wrote {} rows to {}, trajectories.csv{}",
        report.rows.len(),
        path.display(),
        if swing { ", swing_flexion.csv" } else { "" }
    );
    Ok(())
}

fn load_report(settings: &Settings, out: &Path) -> Result<RmseReport> {
    let path = settings.report_path(out);
    require_file(&path, "report")?;
    let f = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    RmseReport::read_csv(f).with_context(|| format!("reading {}", path.display()))
}

fn statistics(settings: &Settings, report: &RmseReport) -> Result<Vec<StatsSummary>> {
    let mut stats = run_statistics(report).context("running statistics")?;
    if settings.family_size != sonokin::stats::DEFAULT_FAMILY_SIZE {
        for s in &mut stats {
            s.posthoc = bonferroni_posthoc(
                &s.design,
                &all_condition_pairs(&s.design),
                Some(settings.family_size),
            )?;
        }
    }
    Ok(stats)
}

pub fn stats(settings: &Settings, out: &Path) -> Result<()> {
    let report = load_report(settings, out)?;
    let stats = statistics(settings, &report)?;
    for s in &stats {
        let stem = format!("{}_{}", s.task, s.target);
        let mut w = create_file(&out.join(format!("anova_{stem}.csv")))?;
        s.anova.write_csv(&mut w)?;
        w.flush()?;
        let mut w = create_file(&out.join(format!("posthoc_{stem}.csv")))?;
        write_posthoc_csv(&mut w, &s.posthoc)?;
        w.flush()?;
        let mut w = create_file(&out.join(format!("design_{stem}.csv")))?;
        s.design.write_csv(&mut w)?;
        w.flush()?;
        for r in s.posthoc.iter().filter(|r| r.p_adjusted < settings.alpha) {
            println!("{stem}: {} adjusted p = {:.4}", r.label, r.p_adjusted);
        }
    }
    println!(
        "wrote statistics for {} task/target pairs to {}",
        stats.len(),
        out.display()
    );
    Ok(())
}

pub fn report(settings: &Settings, out: &Path) -> Result<()> {
    let report = load_report(settings, out)?;
    let stats = statistics(settings, &report)?;
    let text = render_tables(&report, &stats);
    write_bytes(&out.join("tables.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}
