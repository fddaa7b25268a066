//! Long-format RMSE rows, per-subject aggregation, statistics, and text tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};

use super::{CellResult, ExperimentConfig, ExperimentError, FeatureSet, FitSettings, Paradigm};
use crate::frames::Task;
use crate::gait::StrideLabel;
use crate::gpr::Target;
use crate::stats::{
    all_condition_pairs, bonferroni_posthoc, rm_two_way_anova, AnovaTable, Effect, PosthocResult,
    RmDesign, Tier, DEFAULT_FAMILY_SIZE,
};

/// Published human-cohort means pooled over tasks: `(target, task-specific,
/// task-invariant)`. Rendered next to the synthetic results for comparison.
pub const REFERENCE_VALUES: [(Target, f64, f64); 2] = [
    (Target::KneeAngle, 6.00, 7.06),
    (Target::KneeVelocity, 51.8, 53.1),
];

const HEADER: &str = "subject,task,paradigm,feature_set,target,stride_label,fold,rmse";

/// The eight (paradigm, feature set, target) cells of the full design.
pub fn cohort_cells(seed: u64, fit: &FitSettings) -> Vec<ExperimentConfig> {
    let mut out = Vec::with_capacity(8);
    for paradigm in Paradigm::ALL {
        for feature_set in FeatureSet::ALL {
            for target in Target::ALL {
                let mut c = ExperimentConfig::new(paradigm, feature_set, target);
                c.seed = seed;
                c.fit = fit.clone();
                out.push(c);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub subject_id: String,
    pub task: Task,
    pub paradigm: Paradigm,
    pub feature_set: FeatureSet,
    pub target: Target,
    /// `None` pools every stride of the fold.
    pub label: Option<StrideLabel>,
    pub fold: usize,
    /// `None` when the fold has no stride with this label; NaN for a failed fold.
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RmseReport {
    pub rows: Vec<RmseRow>,
}

impl RmseReport {
    /// One pooled row per fold; stair folds also get one row per label.
    pub fn from_cells(cells: &[CellResult]) -> Self {
        let mut rows = Vec::new();
        for cell in cells {
            for fold in &cell.folds {
                let row = |label, rmse| RmseRow {
                    subject_id: cell.subject_id.clone(),
                    task: fold.task,
                    paradigm: cell.paradigm,
                    feature_set: cell.feature_set,
                    target: cell.target,
                    label,
                    fold: fold.fold,
                    rmse,
                };
                rows.push(row(None, Some(fold.rmse())));
                if fold.task.is_stair() {
                    for l in super::evaluate_transients(fold) {
                        rows.push(row(Some(l.label), l.rmse));
                    }
                }
            }
        }
        Self { rows }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{HEADER}")?;
        for r in &self.rows {
            let rmse = r.rmse.map_or_else(|| "NA".to_string(), |v| v.to_string());
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.subject_id,
                r.task,
                r.paradigm,
                r.feature_set,
                r.target,
                r.label.map_or("all", StrideLabel::as_str),
                r.fold,
                rmse
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ExperimentError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let bad = |row: usize, message: String| ExperimentError::MalformedReport { row, message };
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| bad(0, e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.join(",") != HEADER {
            return Err(bad(0, format!("expected header {HEADER}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| bad(row, e.to_string()))?;
            if rec.len() != 8 {
                return Err(bad(row, format!("expected 8 fields, found {}", rec.len())));
            }
            let label = match &rec[5] {
                "all" => None,
                s => Some(s.parse().map_err(|e: String| bad(row, e))?),
            };
            let rmse = match &rec[7] {
                "NA" => None,
                s => Some(s.parse::<f64>().map_err(|e| bad(row, e.to_string()))?),
            };
            rows.push(RmseRow {
                subject_id: rec[0].to_string(),
                task: rec[1].parse().map_err(|e: String| bad(row, e))?,
                paradigm: rec[2].parse().map_err(|e: String| bad(row, e))?,
                feature_set: rec[3].parse().map_err(|e: String| bad(row, e))?,
                target: rec[4].parse().map_err(|e: String| bad(row, e))?,
                label,
                fold: rec[6]
                    .parse()
                    .map_err(|e: std::num::ParseIntError| bad(row, e.to_string()))?,
                rmse,
            });
        }
        Ok(Self { rows })
    }

    /// Mean of the finite per-fold RMSEs for each subject of one cell, in
    /// first-seen subject order. Subjects without a finite fold are skipped.
    pub fn subject_means(
        &self,
        task: Task,
        target: Target,
        paradigm: Paradigm,
        feature_set: FeatureSet,
        label: Option<StrideLabel>,
    ) -> Vec<(String, f64)> {
        let mut order: Vec<String> = Vec::new();
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| {
            r.task == task
                && r.target == target
                && r.paradigm == paradigm
                && r.feature_set == feature_set
                && r.label == label
        }) {
            if !order.contains(&r.subject_id) {
                order.push(r.subject_id.clone());
            }
            if let Some(v) = r.rmse.filter(|v| v.is_finite()) {
                let e = acc.entry(r.subject_id.clone()).or_default();
                e.0 += v;
                e.1 += 1;
            }
        }
        order
            .into_iter()
            .filter_map(|s| acc.get(&s).map(|(sum, n)| (s.clone(), sum / *n as f64)))
            .collect()
    }

    /// Cross-subject summary of one cell.
    pub fn summarize(
        &self,
        task: Task,
        target: Target,
        paradigm: Paradigm,
        feature_set: FeatureSet,
        label: Option<StrideLabel>,
    ) -> Option<CellSummary> {
        let means = self.subject_means(task, target, paradigm, feature_set, label);
        if means.is_empty() {
            return None;
        }
        let n = means.len() as f64;
        let mean = means.iter().map(|(_, v)| v).sum::<f64>() / n;
        let sd = if means.len() > 1 {
            (means
                .iter()
                .map(|(_, v)| (v - mean) * (v - mean))
                .sum::<f64>()
                / (n - 1.0))
                .sqrt()
        } else {
            0.0
        };
        Some(CellSummary {
            mean,
            sd,
            subjects: means.len(),
        })
    }

    /// Paradigm x feature-set design of subject fold-means for one task and
    /// target.
    pub fn design(&self, task: Task, target: Target) -> Result<RmDesign, ExperimentError> {
        let mut records = Vec::new();
        for paradigm in Paradigm::ALL {
            for feature_set in FeatureSet::ALL {
                for (s, v) in self.subject_means(task, target, paradigm, feature_set, None) {
                    records.push((
                        s,
                        paradigm.as_str().to_string(),
                        feature_set.as_str().to_string(),
                        v,
                    ));
                }
            }
        }
        Ok(RmDesign::from_records(records)?)
    }

    fn has(&self, task: Task, target: Target) -> bool {
        self.rows
            .iter()
            .any(|r| r.task == task && r.target == target)
    }

    /// Mean over tasks of each subject's per-task fold-mean RMSE, averaged
    /// across subjects.
    pub fn pooled_mean(
        &self,
        target: Target,
        paradigm: Paradigm,
        feature_set: FeatureSet,
        tasks: &[Task],
    ) -> Option<f64> {
        let vals: Vec<f64> = tasks
            .iter()
            .filter_map(|t| self.summarize(*t, target, paradigm, feature_set, None))
            .map(|s| s.mean)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Mean and sample SD across subjects of per-subject fold means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub mean: f64,
    pub sd: f64,
    pub subjects: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatsSummary {
    pub task: Task,
    pub target: Target,
    pub design: RmDesign,
    pub anova: AnovaTable,
    pub posthoc: Vec<PosthocResult>,
}

impl StatsSummary {
    /// Tier of the task-specific vs task-invariant comparison within one
    /// feature set.
    pub fn paradigm_tier(&self, feature_set: FeatureSet) -> Tier {
        let j = FeatureSet::ALL
            .iter()
            .position(|f| *f == feature_set)
            .unwrap_or(0);
        self.posthoc
            .iter()
            .find(|r| r.first == (0, j) && r.second == (1, j))
            .map_or(Tier::None, |r| r.tier)
    }
}

/// ANOVA and Bonferroni posthoc for every (task, target) in the report.
pub fn run_statistics(report: &RmseReport) -> Result<Vec<StatsSummary>, ExperimentError> {
    let mut out = Vec::new();
    for task in Task::ALL {
        for target in Target::ALL {
            if !report.has(task, target) {
                continue;
            }
            let design = report.design(task, target)?;
            let anova = rm_two_way_anova(&design)?;
            let pairs = all_condition_pairs(&design);
            let posthoc = bonferroni_posthoc(&design, &pairs, Some(DEFAULT_FAMILY_SIZE))?;
            out.push(StatsSummary {
                task,
                target,
                design,
                anova,
                posthoc,
            });
        }
    }
    Ok(out)
}

fn feature_marker(p: f64) -> &'static str {
    match Tier::from_p(p) {
        Tier::None => "",
        Tier::A => "c",
        Tier::B => "d",
    }
}

fn with_marker(text: String, marker: &str) -> String {
    if marker.is_empty() {
        text
    } else {
        format!("{text} [{marker}]")
    }
}

fn cell_text(s: Option<CellSummary>, marker: &str) -> String {
    match s {
        Some(s) => with_marker(format!("{:.2} ({:.2})", s.mean, s.sd), marker),
        None => "-".to_string(),
    }
}

const COLUMNS: [(FeatureSet, Paradigm); 4] = [
    (FeatureSet::Intensity, Paradigm::TaskSpecific),
    (FeatureSet::Intensity, Paradigm::TaskInvariant),
    (FeatureSet::IntensityPlusTemporal, Paradigm::TaskSpecific),
    (FeatureSet::IntensityPlusTemporal, Paradigm::TaskInvariant),
];

fn header_line(out: &mut String, first: &str) {
    let _ = write!(out, "{first:<28}");
    for (fs, p) in COLUMNS {
        let _ = write!(out, "| {:<26}", format!("{} {}", fs.title(), p.title()));
    }
    out.push('\n');
}

fn target_title(target: Target) -> &'static str {
    match target {
        Target::KneeAngle => "knee angle",
        Target::KneeVelocity => "knee angular velocity",
    }
}

/// Renders the per-task tables (one per target) and the stair transition
/// tables. Cells show mean (SD) across subjects.
///
/// Markers: `a`/`b` on a task-invariant cell flag a Bonferroni-adjusted
/// task-specific vs task-invariant difference (p < 0.05 / p < 0.01) within
/// that feature set; `c`/`d` on a task name flag a feature-set main effect.
pub fn render_tables(report: &RmseReport, stats: &[StatsSummary]) -> String {
    let mut out = String::new();
    let mut number = 1;
    for target in Target::ALL {
        let _ = writeln!(
            out,
            "Table {number}. Mean (SD) RMSE ({}) of {} estimation",
            target.unit(),
            target_title(target)
        );
        number += 1;
        header_line(&mut out, "Task");
        let present: Vec<Task> = Task::ALL
            .into_iter()
            .filter(|t| report.has(*t, target))
            .collect();
        for &task in &present {
            let st = stats.iter().find(|s| s.task == task && s.target == target);
            let fmark = st.map_or("", |s| feature_marker(s.anova.effect(Effect::B).p));
            let _ = write!(out, "{:<28}", with_marker(task.title().to_string(), fmark));
            for (fs, p) in COLUMNS {
                let marker = match (p, st) {
                    (Paradigm::TaskInvariant, Some(s)) => s.paradigm_tier(fs).marker(),
                    _ => "",
                };
                let _ = write!(
                    out,
                    "| {:<26}",
                    cell_text(report.summarize(task, target, p, fs, None), marker)
                );
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<28}", "Mean over tasks");
        for (fs, p) in COLUMNS {
            let v = report.pooled_mean(target, p, fs, &present);
            let _ = write!(
                out,
                "| {:<26}",
                v.map_or("-".to_string(), |v| format!("{v:.2}"))
            );
        }
        out.push('\n');
        if let Some((_, ts, ti)) = REFERENCE_VALUES.iter().find(|(t, _, _)| *t == target) {
            let _ = writeln!(
                out,
                "Reference human-cohort mean: task-specific {ts:.2}, task-invariant {ti:.2} {}",
                target.unit()
            );
        }
        out.push('\n');
    }
    for target in Target::ALL {
        let _ = writeln!(
            out,
            "Table {number}. Mean (SD) RMSE ({}) of {} estimation by stair stride type",
            target.unit(),
            target_title(target)
        );
        number += 1;
        header_line(&mut out, "Task / stride");
        for task in Task::ALL
            .into_iter()
            .filter(|t| t.is_stair() && report.has(*t, target))
        {
            for label in StrideLabel::ALL {
                let _ = write!(out, "{:<28}", format!("{} {}", task.title(), label.title()));
                for (fs, p) in COLUMNS {
                    let _ = write!(
                        out,
                        "| {:<26}",
                        cell_text(report.summarize(task, target, p, fs, Some(label)), "")
                    );
                }
                out.push('\n');
            }
        }
        out.push('\n');
    }
    out.push_str(
        "a/b: task-invariant differs from task-specific with the same features (adjusted p < 0.05 / p < 0.01)\n\
         c/d: significant feature-set effect (p < 0.05 / p < 0.01)\n",
    );
    out
}
