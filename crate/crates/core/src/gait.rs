//! Stride segmentation, percent-gait-cycle normalization and trajectory bands.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::frames::{Annotation, Task, TrialRecord};

/// Points on the normalized grid: 0%, 1%, ..., 100%.
pub const GRID_POINTS: usize = 101;

#[derive(Debug, Error, PartialEq)]
pub enum GaitError {
    #[error("need at least 2 heel-strikes, found {0}")]
    InsufficientEvents(usize),
    #[error("stride has {0} samples, need at least 2")]
    TooFewSamples(usize),
    #[error("no strides to average")]
    EmptyInput,
    #[error("{0} timestamps for {1} values")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StrideLabel {
    WalkToStair,
    SteadyState,
    StairToWalk,
}

impl StrideLabel {
    pub const ALL: [StrideLabel; 3] = [
        StrideLabel::WalkToStair,
        StrideLabel::SteadyState,
        StrideLabel::StairToWalk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrideLabel::WalkToStair => "walk_to_stair",
            StrideLabel::SteadyState => "steady_state",
            StrideLabel::StairToWalk => "stair_to_walk",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            StrideLabel::WalkToStair => "Walk-to-Stair",
            StrideLabel::SteadyState => "Steady-State",
            StrideLabel::StairToWalk => "Stair-to-Walk",
        }
    }
}

impl fmt::Display for StrideLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrideLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StrideLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown stride label {s:?}"))
    }
}

/// Identifies a stride within one subject's data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StrideKey {
    pub task: Task,
    pub trial_index: u32,
    pub stride_index: u32,
}

/// Interval between consecutive heel-strikes of the instrumented leg.
#[derive(Debug, Clone, PartialEq)]
pub struct Stride {
    pub subject_id: String,
    pub task: Task,
    pub trial_index: u32,
    pub stride_index: u32,
    pub start_ms: i64,
    pub end_ms: i64,
    pub label: StrideLabel,
    /// Indices into the trial's sample rows with time in `[start_ms, end_ms)`.
    pub sample_rows: Vec<usize>,
}

impl Stride {
    pub fn key(&self) -> StrideKey {
        StrideKey {
            task: self.task,
            trial_index: self.trial_index,
            stride_index: self.stride_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub strides: Vec<Stride>,
    /// Heel-strike intervals without any sample.
    pub dropped_empty: usize,
}

/// Splits a trial at heel-strikes. `sample_times_ms` are the (sorted)
/// timestamps of the trial's synchronized samples.
pub fn segment_strides(
    trial: &TrialRecord,
    sample_times_ms: &[i64],
) -> Result<Segmentation, GaitError> {
    let hs: Vec<i64> = trial.heel_strikes().map(|e| e.timestamp_ms).collect();
    if hs.len() < 2 {
        return Err(GaitError::InsufficientEvents(hs.len()));
    }
    let mut strides = Vec::with_capacity(hs.len() - 1);
    let mut dropped_empty = 0;
    for (i, w) in hs.windows(2).enumerate() {
        let (start, end) = (w[0], w[1]);
        let label = trial
            .events
            .iter()
            .filter(|e| e.timestamp_ms >= start && e.timestamp_ms < end)
            .find_map(|e| match e.annotation {
                Annotation::WalkToStair => Some(StrideLabel::WalkToStair),
                Annotation::StairToWalk => Some(StrideLabel::StairToWalk),
                Annotation::None => None,
            })
            .unwrap_or(StrideLabel::SteadyState);
        let lo = sample_times_ms.partition_point(|&t| t < start);
        let hi = sample_times_ms.partition_point(|&t| t < end);
        if lo == hi {
            dropped_empty += 1;
            continue;
        }
        strides.push(Stride {
            subject_id: trial.subject_id.clone(),
            task: trial.task,
            trial_index: trial.trial_index,
            stride_index: i as u32,
            start_ms: start,
            end_ms: end,
            label,
            sample_rows: (lo..hi).collect(),
        });
    }
    Ok(Segmentation {
        strides,
        dropped_empty,
    })
}

/// A signal resampled onto the 101-point percent grid of one stride.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedStride {
    pub label: StrideLabel,
    pub values: Vec<f64>,
}

/// Resamples `values` (at `times_ms`, sorted) onto 101 equispaced times
/// spanning `[start_ms, end_ms]`. Samples outside the stride are used for
/// bracketing; beyond the data the nearest value is held.
pub fn normalize_stride(
    stride: &Stride,
    times_ms: &[i64],
    values: &[f64],
) -> Result<NormalizedStride, GaitError> {
    if times_ms.len() != values.len() {
        return Err(GaitError::LengthMismatch(times_ms.len(), values.len()));
    }
    let inside = times_ms
        .iter()
        .filter(|&&t| t >= stride.start_ms && t < stride.end_ms)
        .count();
    if inside < 2 {
        return Err(GaitError::TooFewSamples(inside));
    }
    let span = (stride.end_ms - stride.start_ms) as f64;
    let values = (0..GRID_POINTS)
        .map(|p| {
            let t = stride.start_ms as f64 + span * p as f64 / (GRID_POINTS - 1) as f64;
            interpolate(times_ms, values, t)
        })
        .collect();
    Ok(NormalizedStride {
        label: stride.label,
        values,
    })
}

fn interpolate(times: &[i64], values: &[f64], t: f64) -> f64 {
    let idx = times.partition_point(|&x| (x as f64) < t);
    if idx == 0 {
        return values[0];
    }
    if idx == times.len() {
        return values[times.len() - 1];
    }
    let (t0, t1) = (times[idx - 1] as f64, times[idx] as f64);
    if t1 == t {
        return values[idx];
    }
    let w = (t - t0) / (t1 - t0);
    values[idx - 1] + w * (values[idx] - values[idx - 1])
}

/// Pointwise mean and population SD.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBand {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub count: usize,
}

pub fn trajectory_band(strides: &[NormalizedStride]) -> Result<TrajectoryBand, GaitError> {
    let first = strides.first().ok_or(GaitError::EmptyInput)?;
    let len = first.values.len();
    let n = strides.len() as f64;
    let mut mean = vec![0.0; len];
    for s in strides {
        if s.values.len() != len {
            return Err(GaitError::LengthMismatch(s.values.len(), len));
        }
        mean.iter_mut().zip(&s.values).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut sd = vec![0.0; len];
    for s in strides {
        for ((acc, v), m) in sd.iter_mut().zip(&s.values).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    sd.iter_mut().for_each(|v| *v = (*v / n).sqrt());
    Ok(TrajectoryBand {
        mean,
        sd,
        count: strides.len(),
    })
}

/// Indices of `(walk-to-stair, following steady-state, following
/// stair-to-walk)` strides. Missing members are `None`.
pub fn transition_triplets(strides: &[Stride]) -> Vec<[Option<usize>; 3]> {
    let mut out = Vec::new();
    for (i, s) in strides.iter().enumerate() {
        if s.label != StrideLabel::WalkToStair {
            continue;
        }
        let next_w2s = strides[i + 1..]
            .iter()
            .position(|x| x.label == StrideLabel::WalkToStair)
            .map_or(strides.len(), |p| i + 1 + p);
        let steady = strides.get(i + 1).filter(|x| {
            x.label == StrideLabel::SteadyState
                && x.trial_index == s.trial_index
                && x.stride_index == s.stride_index + 1
        });
        let steady = steady.map(|_| i + 1);
        let s2w = (i + 1..next_w2s).find(|&j| {
            strides[j].label == StrideLabel::StairToWalk && strides[j].trial_index == s.trial_index
        });
        out.push([Some(i), steady, s2w]);
    }
    out
}

/// Writes `series,percent,mean,sd` rows; `percent_offset` shifts the 0..100
/// axis (e.g. -100 for the walk-to-stair member of a triplet).
pub fn write_band_rows<W: Write>(
    mut w: W,
    series: &str,
    percent_offset: f64,
    band: &TrajectoryBand,
) -> io::Result<()> {
    let step = 100.0 / (band.mean.len().max(2) - 1) as f64;
    for (i, (m, s)) in band.mean.iter().zip(&band.sd).enumerate() {
        writeln!(w, "{series},{},{m},{s}", percent_offset + step * i as f64)?;
    }
    Ok(())
}
