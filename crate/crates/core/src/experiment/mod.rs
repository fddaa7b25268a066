//! Task-specific and task-invariant cross-validation over prepared subjects.

mod report;
mod trajectories;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::features::{
    compute_temporal_features, extract_intensity_features, ChannelLayout, FeatureConfig,
    FeatureError, FeatureMatrix, Standardization,
};
use crate::frames::{
    load_trial, read_manifest, synchronize_kinematics, FrameError, Task, TrialRecord,
};
use crate::gait::{
    normalize_stride, segment_strides, GaitError, NormalizedStride, Stride, StrideKey, StrideLabel,
};
use crate::gpr::{
    optimize_hyperparameters, GprError, GprModel, HyperoptConfig, KernelFamily, KernelSpec,
    ModelBundle, Target,
};
use crate::stats::StatsError;
use crate::synth::mix;

pub use report::{
    cohort_cells, render_tables, run_statistics, CellSummary, RmseReport, RmseRow, StatsSummary,
    REFERENCE_VALUES,
};
pub use trajectories::write_trajectories;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("need at least 5 strides for treadmill folds, got {0}")]
    TooFewStrides(usize),
    #[error("need at least 2 stair trials, got {0}")]
    TooFewTrials(usize),
    #[error("holdout fraction must be in (0, 0.5], got {0}")]
    InvalidHoldout(f64),
    #[error("{predicted} predictions for {measured} measurements")]
    LengthMismatch { predicted: usize, measured: usize },
    #[error("no samples to score")]
    Empty,
    #[error("subject {subject} has no {task} data")]
    MissingTask { subject: String, task: Task },
    #[error("trials from different subjects ({0} and {1})")]
    MixedSubjects(String, String),
    #[error("malformed report row {row}: {message}")]
    MalformedReport { row: usize, message: String },
    #[error("{0}")]
    Frames(#[from] FrameError),
    #[error("{0}")]
    Features(#[from] FeatureError),
    #[error("{0}")]
    Gait(#[from] GaitError),
    #[error("{0}")]
    Gpr(#[from] GprError),
    #[error("{0}")]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Paradigm {
    TaskSpecific,
    TaskInvariant,
}

impl Paradigm {
    pub const ALL: [Paradigm; 2] = [Paradigm::TaskSpecific, Paradigm::TaskInvariant];

    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::TaskSpecific => "task_specific",
            Paradigm::TaskInvariant => "task_invariant",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Paradigm::TaskSpecific => "Task-Specific",
            Paradigm::TaskInvariant => "Task-Invariant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureSet {
    Intensity,
    IntensityPlusTemporal,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 2] = [FeatureSet::Intensity, FeatureSet::IntensityPlusTemporal];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureSet::Intensity => "intensity",
            FeatureSet::IntensityPlusTemporal => "intensity_temporal",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            FeatureSet::Intensity => "Intensity",
            FeatureSet::IntensityPlusTemporal => "Temporal",
        }
    }
}

macro_rules! str_enum_traits {
    ($ty:ty) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Self::ALL
                    .into_iter()
                    .find(|v| v.as_str() == s)
                    .ok_or_else(|| format!("unknown {} {s:?}", stringify!($ty)))
            }
        }
    };
}

str_enum_traits!(Paradigm);
str_enum_traits!(FeatureSet);

/// How often hyperparameters are searched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefitMode {
    /// Fresh search on every fold's training rows.
    PerFold,
    /// Search on the first fold, reuse for the rest.
    Once,
}

impl FromStr for RefitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per_fold" => Ok(RefitMode::PerFold),
            "once" => Ok(RefitMode::Once),
            other => Err(format!("unknown refit mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    pub family: KernelFamily,
    /// Training rows above this are thinned within each stride.
    pub max_train: Option<usize>,
    pub hyperopt: HyperoptConfig,
    pub refit: RefitMode,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            family: KernelFamily::RationalQuadratic,
            max_train: Some(2000),
            hyperopt: HyperoptConfig {
                max_rows: Some(100),
                ..HyperoptConfig::default()
            },
            refit: RefitMode::PerFold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub paradigm: Paradigm,
    pub feature_set: FeatureSet,
    pub target: Target,
    pub treadmill_holdout_fraction: f64,
    pub seed: u64,
    pub fit: FitSettings,
}

impl ExperimentConfig {
    pub fn new(paradigm: Paradigm, feature_set: FeatureSet, target: Target) -> Self {
        Self {
            paradigm,
            feature_set,
            target,
            treadmill_holdout_fraction: 0.2,
            seed: 0,
            fit: FitSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let f = self.treadmill_holdout_fraction;
        if !(f > 0.0 && f <= 0.5) {
            return Err(ExperimentError::InvalidHoldout(f));
        }
        Ok(())
    }
}

/// One trial reduced to aligned samples: kinematics at frames that have
/// both intensity and temporal features.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTrial {
    pub trial_index: u32,
    pub times_ms: Vec<i64>,
    pub angle: Vec<f64>,
    pub velocity: Vec<f64>,
    /// Intensity block followed by the temporal block.
    pub features: FeatureMatrix,
    pub strides: Vec<Stride>,
}

impl PreparedTrial {
    fn target(&self, target: Target) -> &[f64] {
        match target {
            Target::KneeAngle => &self.angle,
            Target::KneeVelocity => &self.velocity,
        }
    }

    fn intensity_dims(&self) -> usize {
        self.features.dims() / 2
    }

    fn feature_row(&self, row: usize, set: FeatureSet) -> &[f64] {
        let r = self.features.row(row);
        match set {
            FeatureSet::Intensity => &r[..self.intensity_dims()],
            FeatureSet::IntensityPlusTemporal => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectData {
    pub subject_id: String,
    /// Trials per task in [`Task::ALL`] order, each sorted by trial index.
    pub tasks: Vec<(Task, Vec<PreparedTrial>)>,
}

impl SubjectData {
    pub fn trials(&self, task: Task) -> &[PreparedTrial] {
        self.tasks
            .iter()
            .find(|(t, _)| *t == task)
            .map_or(&[], |(_, v)| v.as_slice())
    }

    pub fn present_tasks(&self) -> impl Iterator<Item = Task> + '_ {
        self.tasks
            .iter()
            .filter(|(_, v)| !v.is_empty())
            .map(|(t, _)| *t)
    }
}

/// Extracts features, synchronizes kinematics, and segments strides for all
/// trials of one subject.
pub fn prepare_subject(
    trials: &[TrialRecord],
    kernel_size_mm: f64,
) -> Result<SubjectData, ExperimentError> {
    let subject_id = trials
        .first()
        .map(|t| t.subject_id.clone())
        .unwrap_or_default();
    let mut tasks: Vec<(Task, Vec<PreparedTrial>)> =
        Task::ALL.iter().map(|t| (*t, Vec::new())).collect();
    let feature_config = FeatureConfig {
        kernel_size_mm,
        ..FeatureConfig::default()
    };
    for trial in trials {
        if trial.subject_id != subject_id {
            return Err(ExperimentError::MixedSubjects(
                subject_id,
                trial.subject_id.clone(),
            ));
        }
        let prepared = prepare_trial(trial, &feature_config)?;
        let slot = tasks
            .iter_mut()
            .find(|(t, _)| *t == trial.task)
            .expect("all tasks listed");
        slot.1.push(prepared);
    }
    for (_, v) in &mut tasks {
        v.sort_by_key(|t| t.trial_index);
    }
    Ok(SubjectData { subject_id, tasks })
}

/// Loads every trial listed in a manifest and prepares one [`SubjectData`]
/// per subject, in first-listed order.
pub fn load_cohort(
    manifest: &Path,
    kernel_size_mm: f64,
) -> Result<Vec<SubjectData>, ExperimentError> {
    let mut groups: Vec<(String, Vec<TrialRecord>)> = Vec::new();
    for entry in read_manifest(manifest)? {
        let p = &entry.paths;
        let trial = load_trial(&p.frames, &p.events, &p.kinematics, entry.meta)?;
        match groups.iter_mut().find(|(s, _)| *s == trial.subject_id) {
            Some((_, v)) => v.push(trial),
            None => groups.push((trial.subject_id.clone(), vec![trial])),
        }
    }
    groups
        .into_iter()
        .map(|(_, trials)| prepare_subject(&trials, kernel_size_mm))
        .collect()
}

fn prepare_trial(
    trial: &TrialRecord,
    config: &FeatureConfig,
) -> Result<PreparedTrial, ExperimentError> {
    let (intensity, _) = extract_intensity_features(&trial.frames, config)?;
    let temporal = compute_temporal_features(&intensity, &trial.frames.timestamps())?;
    let sync = synchronize_kinematics(trial)?;
    let dims = intensity.dims();
    let mut values = Vec::new();
    let (mut times, mut angle, mut velocity, mut frames) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in sync.samples.iter().filter(|s| s.frame_index >= 1) {
        values.extend_from_slice(intensity.row(s.frame_index));
        values.extend_from_slice(temporal.row(s.frame_index - 1));
        times.push(s.timestamp_ms);
        angle.push(s.knee_angle_deg);
        velocity.push(s.knee_velocity_deg_s);
        frames.push(s.frame_index);
    }
    let features = FeatureMatrix::new(
        2 * dims,
        values,
        frames,
        ChannelLayout::IntensityThenTemporal,
    )?;
    let strides = segment_strides(trial, &times)?.strides;
    Ok(PreparedTrial {
        trial_index: trial.trial_index,
        times_ms: times,
        angle,
        velocity,
        features,
        strides,
    })
}

/// Held-out strides of one fold and the rest of the task's strides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CvFold {
    pub held_out: Vec<StrideKey>,
    pub train: Vec<StrideKey>,
}

/// Consecutive blocks of `floor(fraction * count)` strides (at least 1); a
/// trailing block shorter than half that joins the previous fold.
pub fn make_treadmill_folds(
    strides: &[StrideKey],
    holdout_fraction: f64,
) -> Result<Vec<CvFold>, ExperimentError> {
    if !(holdout_fraction > 0.0 && holdout_fraction <= 0.5) {
        return Err(ExperimentError::InvalidHoldout(holdout_fraction));
    }
    let n = strides.len();
    if n < 5 {
        return Err(ExperimentError::TooFewStrides(n));
    }
    let block = ((holdout_fraction * n as f64 + 1e-9).floor() as usize).max(1);
    let mut bounds: Vec<(usize, usize)> = (0..n)
        .step_by(block)
        .map(|s| (s, (s + block).min(n)))
        .collect();
    if bounds.len() > 1 {
        let (s, e) = bounds[bounds.len() - 1];
        if 2 * (e - s) < block {
            bounds.pop();
            bounds.last_mut().expect("at least one block").1 = e;
        }
    }
    Ok(bounds
        .into_iter()
        .map(|(s, e)| CvFold {
            held_out: strides[s..e].to_vec(),
            train: strides[..s].iter().chain(&strides[e..]).copied().collect(),
        })
        .collect())
}

/// One fold per trial; `trials` holds each trial's stride keys.
pub fn make_stair_folds(trials: &[Vec<StrideKey>]) -> Result<Vec<CvFold>, ExperimentError> {
    if trials.len() < 2 {
        return Err(ExperimentError::TooFewTrials(trials.len()));
    }
    Ok((0..trials.len())
        .map(|i| CvFold {
            held_out: trials[i].clone(),
            train: trials
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, k)| k.iter().copied())
                .collect(),
        })
        .collect())
}

/// Folds for every task present in the subject's data.
pub fn task_folds(
    subject: &SubjectData,
    holdout_fraction: f64,
) -> Result<Vec<(Task, Vec<CvFold>)>, ExperimentError> {
    subject
        .present_tasks()
        .map(|task| {
            let trials = subject.trials(task);
            let folds = if task.is_stair() {
                let keys: Vec<Vec<StrideKey>> = trials
                    .iter()
                    .map(|t| t.strides.iter().map(Stride::key).collect())
                    .collect();
                make_stair_folds(&keys)?
            } else {
                let keys: Vec<StrideKey> = trials
                    .iter()
                    .flat_map(|t| t.strides.iter().map(Stride::key))
                    .collect();
                make_treadmill_folds(&keys, holdout_fraction)?
            };
            Ok((task, folds))
        })
        .collect()
}

/// One pooled-model round: train on the union, score each listed task fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvariantRound {
    pub train: Vec<StrideKey>,
    /// `(task, fold index, held-out strides)` evaluated in this round.
    pub evaluate: Vec<(Task, usize, Vec<StrideKey>)>,
}

/// Round `i` uses fold `i mod len` of every task, so every task's held-out
/// block is excluded from training; a task is scored only while `i < len`,
/// so each stride is scored exactly once.
pub fn task_invariant_rounds(folds: &[(Task, Vec<CvFold>)]) -> Vec<InvariantRound> {
    let rounds = folds.iter().map(|(_, f)| f.len()).max().unwrap_or(0);
    (0..rounds)
        .map(|i| {
            let mut train = Vec::new();
            let mut evaluate = Vec::new();
            for (task, task_folds) in folds {
                let k = i % task_folds.len();
                train.extend_from_slice(&task_folds[k].train);
                if i < task_folds.len() {
                    evaluate.push((*task, k, task_folds[k].held_out.clone()));
                }
            }
            InvariantRound { train, evaluate }
        })
        .collect()
}

/// Predictions over one held-out stride.
#[derive(Debug, Clone, PartialEq)]
pub struct StridePrediction {
    pub key: StrideKey,
    pub label: StrideLabel,
    pub start_ms: i64,
    pub end_ms: i64,
    pub times_ms: Vec<i64>,
    pub measured: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl StridePrediction {
    pub fn normalized_predicted(&self) -> Result<NormalizedStride, GaitError> {
        self.normalized(&self.predicted)
    }

    pub fn normalized_measured(&self) -> Result<NormalizedStride, GaitError> {
        self.normalized(&self.measured)
    }

    fn normalized(&self, values: &[f64]) -> Result<NormalizedStride, GaitError> {
        let stride = Stride {
            subject_id: String::new(),
            task: self.key.task,
            trial_index: self.key.trial_index,
            stride_index: self.key.stride_index,
            start_ms: self.start_ms,
            end_ms: self.end_ms,
            label: self.label,
            sample_rows: Vec::new(),
        };
        normalize_stride(&stride, &self.times_ms, values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub task: Task,
    pub fold: usize,
    /// Held-out strides in temporal order, or the error that stopped the fold.
    pub result: Result<Vec<StridePrediction>, String>,
}

impl FoldOutcome {
    /// Pooled RMSE over all held-out samples; NaN for a failed fold.
    pub fn rmse(&self) -> f64 {
        self.label_rmse(None).unwrap_or(f64::NAN)
    }

    /// RMSE over strides with `label` (all strides for `None`). `None` when
    /// no stride carries the label; NaN for a failed fold.
    pub fn label_rmse(&self, label: Option<StrideLabel>) -> Option<f64> {
        let Ok(strides) = &self.result else {
            return Some(f64::NAN);
        };
        let (mut sse, mut n) = (0.0, 0usize);
        for s in strides
            .iter()
            .filter(|s| label.is_none_or(|l| s.label == l))
        {
            sse += squared_error_sum(&s.predicted, &s.measured);
            n += s.predicted.len();
        }
        (n > 0).then(|| (sse / n as f64).sqrt())
    }
}

fn squared_error_sum(p: &[f64], m: &[f64]) -> f64 {
    p.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn compute_rmse(predicted: &[f64], measured: &[f64]) -> Result<f64, ExperimentError> {
    if predicted.len() != measured.len() {
        return Err(ExperimentError::LengthMismatch {
            predicted: predicted.len(),
            measured: measured.len(),
        });
    }
    if predicted.is_empty() {
        return Err(ExperimentError::Empty);
    }
    Ok((squared_error_sum(predicted, measured) / predicted.len() as f64).sqrt())
}

/// Per-label RMSE of one fold; absent labels are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRmse {
    pub label: StrideLabel,
    pub rmse: Option<f64>,
}

pub fn evaluate_transients(fold: &FoldOutcome) -> Vec<LabelRmse> {
    StrideLabel::ALL
        .iter()
        .map(|&label| LabelRmse {
            label,
            rmse: fold.label_rmse(Some(label)),
        })
        .collect()
}

/// Results of one (subject, paradigm, feature set, target) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub subject_id: String,
    pub paradigm: Paradigm,
    pub feature_set: FeatureSet,
    pub target: Target,
    pub folds: Vec<FoldOutcome>,
}

impl CellResult {
    pub fn failures(&self) -> impl Iterator<Item = (&FoldOutcome, &str)> {
        self.folds
            .iter()
            .filter_map(|f| f.result.as_ref().err().map(|e| (f, e.as_str())))
    }

    pub fn predictions(&self, task: Task) -> impl Iterator<Item = &StridePrediction> {
        self.folds
            .iter()
            .filter(move |f| f.task == task)
            .filter_map(|f| f.result.as_ref().ok())
            .flatten()
    }
}

type StrideIndex = HashMap<StrideKey, (usize, usize)>;

fn stride_index(subject: &SubjectData, task: Task) -> StrideIndex {
    let mut idx = HashMap::new();
    for (ti, trial) in subject.trials(task).iter().enumerate() {
        for (si, s) in trial.strides.iter().enumerate() {
            idx.insert(s.key(), (ti, si));
        }
    }
    idx
}

struct Fitter<'a> {
    subject: &'a SubjectData,
    config: &'a ExperimentConfig,
    index: HashMap<Task, StrideIndex>,
    cached_spec: Option<KernelSpec>,
}

impl<'a> Fitter<'a> {
    fn new(subject: &'a SubjectData, config: &'a ExperimentConfig) -> Self {
        let index = subject
            .present_tasks()
            .map(|t| (t, stride_index(subject, t)))
            .collect();
        Self {
            subject,
            config,
            index,
            cached_spec: None,
        }
    }

    fn locate(&self, key: &StrideKey) -> (&'a PreparedTrial, &'a Stride) {
        let (ti, si) = self.index[&key.task][key];
        let trial = &self.subject.trials(key.task)[ti];
        (trial, &trial.strides[si])
    }

    fn seed(&self, parts: &[u64]) -> u64 {
        let name = self
            .subject
            .subject_id
            .bytes()
            .fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
                (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
            });
        parts
            .iter()
            .fold(mix(self.config.seed ^ name), |acc, p| mix(acc ^ p))
    }

    /// Thins, standardizes, searches hyperparameters, and fits on `train`.
    fn fit_model(
        &mut self,
        train: &[StrideKey],
        seed: u64,
    ) -> Result<(GprModel, Standardization), ExperimentError> {
        let set = self.config.feature_set;
        let target = self.config.target;
        let total: usize = train
            .iter()
            .map(|k| self.locate(k).1.sample_rows.len())
            .sum();
        let step = match self.config.fit.max_train {
            Some(cap) if cap > 0 && total > cap => total.div_ceil(cap),
            _ => 1,
        };
        let mut values = Vec::new();
        let mut y = Vec::new();
        let mut rows = 0;
        for key in train {
            let (trial, stride) = self.locate(key);
            for &r in stride.sample_rows.iter().step_by(step) {
                values.extend_from_slice(trial.feature_row(r, set));
                y.push(trial.target(target)[r]);
                rows += 1;
            }
        }
        if rows == 0 {
            return Err(ExperimentError::Empty);
        }
        let dims = values.len() / rows;
        let raw = FeatureMatrix::new(
            dims,
            values,
            (0..rows).collect(),
            ChannelLayout::IntensityOnly,
        )?;
        let scaler = Standardization::fit(&raw)?;
        let x = scaler.apply(&raw)?;

        let spec = match (self.config.fit.refit, self.cached_spec) {
            (RefitMode::Once, Some(spec)) => spec,
            _ => {
                let hcfg = HyperoptConfig {
                    seed,
                    ..self.config.fit.hyperopt.clone()
                };
                let spec = optimize_hyperparameters(&x, &y, self.config.fit.family, &hcfg)?;
                self.cached_spec = Some(spec);
                spec
            }
        };
        Ok((GprModel::fit(&x, &y, &spec, target)?, scaler))
    }

    /// Trains on `train` and predicts every stride of `test`.
    fn fit_predict(
        &mut self,
        train: &[StrideKey],
        test: &[StrideKey],
        seed: u64,
    ) -> Result<Vec<StridePrediction>, ExperimentError> {
        let set = self.config.feature_set;
        let target = self.config.target;
        let (model, scaler) = self.fit_model(train, seed)?;
        let dims = model.dims();
        test.iter()
            .map(|key| {
                let (trial, stride) = self.locate(key);
                let mut q = Vec::with_capacity(stride.sample_rows.len() * dims);
                for &r in &stride.sample_rows {
                    q.extend_from_slice(trial.feature_row(r, set));
                }
                let n = stride.sample_rows.len();
                let qm = scaler.apply(&FeatureMatrix::new(
                    dims,
                    q,
                    (0..n).collect(),
                    ChannelLayout::IntensityOnly,
                )?)?;
                Ok(StridePrediction {
                    key: *key,
                    label: stride.label,
                    start_ms: stride.start_ms,
                    end_ms: stride.end_ms,
                    times_ms: stride
                        .sample_rows
                        .iter()
                        .map(|&r| trial.times_ms[r])
                        .collect(),
                    measured: stride
                        .sample_rows
                        .iter()
                        .map(|&r| trial.target(target)[r])
                        .collect(),
                    predicted: model.predict_mean(&qm)?,
                })
            })
            .collect()
    }
}

/// Runs one cell for one subject. Fold construction errors abort the cell;
/// fitting errors are recorded in the failing fold.
pub fn run_experiment(
    subject: &SubjectData,
    config: &ExperimentConfig,
) -> Result<CellResult, ExperimentError> {
    config.validate()?;
    let folds = task_folds(subject, config.treadmill_holdout_fraction)?;
    if config.paradigm == Paradigm::TaskInvariant {
        if let Some(task) = Task::ALL
            .into_iter()
            .find(|t| subject.trials(*t).is_empty())
        {
            return Err(ExperimentError::MissingTask {
                subject: subject.subject_id.clone(),
                task,
            });
        }
    }
    let mut fitter = Fitter::new(subject, config);
    let mut outcomes = Vec::new();
    match config.paradigm {
        Paradigm::TaskSpecific => {
            for (task, task_folds) in &folds {
                fitter.cached_spec = None;
                for (k, fold) in task_folds.iter().enumerate() {
                    let seed = fitter.seed(&[task_code(*task), k as u64]);
                    let result = fitter
                        .fit_predict(&fold.train, &fold.held_out, seed)
                        .map_err(|e| e.to_string());
                    outcomes.push(FoldOutcome {
                        task: *task,
                        fold: k,
                        result,
                    });
                }
            }
        }
        Paradigm::TaskInvariant => {
            for (i, round) in task_invariant_rounds(&folds).into_iter().enumerate() {
                let test: Vec<StrideKey> = round
                    .evaluate
                    .iter()
                    .flat_map(|(_, _, k)| k.iter().copied())
                    .collect();
                let seed = fitter.seed(&[0xff, i as u64]);
                match fitter.fit_predict(&round.train, &test, seed) {
                    Ok(preds) => {
                        let mut by_task: HashMap<Task, Vec<StridePrediction>> = HashMap::new();
                        for p in preds {
                            by_task.entry(p.key.task).or_default().push(p);
                        }
                        for (task, k, _) in &round.evaluate {
                            outcomes.push(FoldOutcome {
                                task: *task,
                                fold: *k,
                                result: Ok(by_task.remove(task).unwrap_or_default()),
                            });
                        }
                    }
                    Err(e) => {
                        for (task, k, _) in &round.evaluate {
                            outcomes.push(FoldOutcome {
                                task: *task,
                                fold: *k,
                                result: Err(e.to_string()),
                            });
                        }
                    }
                }
            }
            outcomes.sort_by_key(|o| (o.task, o.fold));
        }
    }
    Ok(CellResult {
        subject_id: subject.subject_id.clone(),
        paradigm: config.paradigm,
        feature_set: config.feature_set,
        target: config.target,
        folds: outcomes,
    })
}

/// Fits one model on every stride of `task`, or of all tasks when `None`,
/// for deployment rather than scoring.
pub fn fit_final_model(
    subject: &SubjectData,
    config: &ExperimentConfig,
    task: Option<Task>,
) -> Result<ModelBundle, ExperimentError> {
    let tasks: Vec<Task> = match task {
        Some(t) => vec![t],
        None => subject.present_tasks().collect(),
    };
    let mut train = Vec::new();
    for t in &tasks {
        if subject.trials(*t).is_empty() {
            return Err(ExperimentError::MissingTask {
                subject: subject.subject_id.clone(),
                task: *t,
            });
        }
        train.extend(
            subject
                .trials(*t)
                .iter()
                .flat_map(|tr| tr.strides.iter().map(Stride::key)),
        );
    }
    let mut fitter = Fitter::new(subject, config);
    let seed = fitter.seed(&[0xf1, task.map_or(0xff, task_code)]);
    let (model, scaler) = fitter.fit_model(&train, seed)?;
    Ok(ModelBundle {
        model,
        scaler: Some(scaler),
    })
}

fn task_code(task: Task) -> u64 {
    Task::ALL.iter().position(|t| *t == task).unwrap_or(0) as u64
}

/// Runs every (subject, config) pair in parallel; results keep input order.
pub fn run_cohort(
    subjects: &[SubjectData],
    configs: &[ExperimentConfig],
) -> Result<Vec<CellResult>, ExperimentError> {
    let jobs: Vec<(&SubjectData, &ExperimentConfig)> = subjects
        .iter()
        .flat_map(|s| configs.iter().map(move |c| (s, c)))
        .collect();
    jobs.par_iter().map(|(s, c)| run_experiment(s, c)).collect()
}

/// Mean predicted peak over the swing half of stair strides.
#[derive(Debug, Clone, PartialEq)]
pub struct SwingFlexionReport {
    pub task: Task,
    pub mean_peak_deg: f64,
    pub threshold_deg: f64,
    pub strides: usize,
    pub pass: bool,
}

pub fn swing_flexion_threshold(task: Task) -> Option<f64> {
    match task {
        Task::StairAscent => Some(71.9),
        Task::StairDescent => Some(70.5),
        _ => None,
    }
}

/// First grid index of the swing half.
const SWING_START: usize = 50;

pub fn swing_flexion_check(
    task: Task,
    strides: &[NormalizedStride],
) -> Result<SwingFlexionReport, ExperimentError> {
    let threshold = swing_flexion_threshold(task).ok_or(ExperimentError::MissingTask {
        subject: String::new(),
        task,
    })?;
    if strides.is_empty() {
        return Err(ExperimentError::Empty);
    }
    let mean = strides
        .iter()
        .map(|s| {
            s.values[SWING_START..]
                .iter()
                .copied()
                .fold(f64::MIN, f64::max)
        })
        .sum::<f64>()
        / strides.len() as f64;
    Ok(SwingFlexionReport {
        task,
        mean_peak_deg: mean,
        threshold_deg: threshold,
        strides: strides.len(),
        pass: mean >= threshold,
    })
}

/// Swing-flexion reports over the steady-state stair strides of all given
/// knee-angle cells.
pub fn swing_flexion_from_cells(
    cells: &[&CellResult],
) -> Result<Vec<SwingFlexionReport>, ExperimentError> {
    [Task::StairAscent, Task::StairDescent]
        .into_iter()
        .map(|task| {
            let mut strides = Vec::new();
            for c in cells.iter().filter(|c| c.target == Target::KneeAngle) {
                for p in c
                    .predictions(task)
                    .filter(|p| p.label == StrideLabel::SteadyState)
                {
                    strides.push(p.normalized_predicted()?);
                }
            }
            swing_flexion_check(task, &strides)
        })
        .collect()
}
