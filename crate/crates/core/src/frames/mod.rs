//! Trial data model: ultrasound frames, gait events and reference kinematics.

mod container;
mod records;
mod sync;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use container::{read_frames, write_frames, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use records::{
    load_trial, read_events, read_kinematics, read_manifest, write_events, write_kinematics,
    write_manifest, write_trial, ManifestEntry, TrialPaths,
};
pub use sync::{
    synchronize_kinematics, validate_trial, SyncResult, SyncedSample, ValidationReport,
    MAX_BRACKET_GAP_MS,
};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("{path}: bad magic, expected \"USKF\"")]
    MagicMismatch { path: String },
    #[error("{path}: unsupported container version {version}")]
    UnsupportedVersion { path: String, version: u16 },
    #[error("{path}: frame data truncated at frame {frame} of {declared}")]
    TruncatedFrameData {
        path: String,
        frame: usize,
        declared: usize,
    },
    #[error("{source_name}: timestamps not strictly increasing at row {row}")]
    NonMonotonicTimestamps { source_name: String, row: usize },
    #[error("trial has no {what}")]
    EmptyTrial { what: &'static str },
    #[error("invalid frame geometry: {0}")]
    InvalidGeometry(String),
    #[error("{path}, row {row}: {message}")]
    MalformedRow {
        path: String,
        row: usize,
        message: String,
    },
    #[error("frame span does not overlap kinematics span")]
    NoOverlap,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FrameError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FrameError::Io {
            path: path.into().display().to_string(),
            source,
        }
    }
}

/// Ambulation task of a trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Level,
    Incline,
    Decline,
    StairAscent,
    StairDescent,
}

impl Task {
    pub const ALL: [Task; 5] = [
        Task::Level,
        Task::Incline,
        Task::Decline,
        Task::StairAscent,
        Task::StairDescent,
    ];

    pub fn is_stair(self) -> bool {
        matches!(self, Task::StairAscent | Task::StairDescent)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Level => "level",
            Task::Incline => "incline",
            Task::Decline => "decline",
            Task::StairAscent => "stair_ascent",
            Task::StairDescent => "stair_descent",
        }
    }

    /// Column heading used in rendered tables.
    pub fn title(self) -> &'static str {
        match self {
            Task::Level => "Level",
            Task::Incline => "Incline",
            Task::Decline => "Decline",
            Task::StairAscent => "Stair Ascent",
            Task::StairDescent => "Stair Descent",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GaitEventKind {
    HeelStrike,
    ToeOff,
}

impl GaitEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GaitEventKind::HeelStrike => "heel_strike",
            GaitEventKind::ToeOff => "toe_off",
        }
    }
}

impl FromStr for GaitEventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "heel_strike" => Ok(GaitEventKind::HeelStrike),
            "toe_off" => Ok(GaitEventKind::ToeOff),
            other => Err(format!("unknown event kind {other:?}")),
        }
    }
}

/// Transition marker carried by an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Annotation {
    None,
    WalkToStair,
    StairToWalk,
}

impl Annotation {
    pub fn as_str(self) -> &'static str {
        match self {
            Annotation::None => "none",
            Annotation::WalkToStair => "walk_to_stair",
            Annotation::StairToWalk => "stair_to_walk",
        }
    }
}

impl FromStr for Annotation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Annotation::None),
            "walk_to_stair" => Ok(Annotation::WalkToStair),
            "stair_to_walk" => Ok(Annotation::StairToWalk),
            other => Err(format!("unknown annotation {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaitEvent {
    pub timestamp_ms: i64,
    pub kind: GaitEventKind,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicsSample {
    pub timestamp_ms: i64,
    /// Flexion positive.
    pub knee_angle_deg: f64,
    pub knee_velocity_deg_s: f64,
}

/// Raster geometry shared by every frame of a sequence. Spacing is isotropic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGeometry {
    pub width_px: usize,
    pub height_px: usize,
    pub pixel_spacing_mm: f64,
}

impl FrameGeometry {
    pub fn new(
        width_px: usize,
        height_px: usize,
        pixel_spacing_mm: f64,
    ) -> Result<Self, FrameError> {
        if width_px == 0 || height_px == 0 {
            return Err(FrameError::InvalidGeometry(format!(
                "{width_px}x{height_px} raster"
            )));
        }
        if !(pixel_spacing_mm.is_finite() && pixel_spacing_mm > 0.0) {
            return Err(FrameError::InvalidGeometry(format!(
                "pixel spacing {pixel_spacing_mm} mm"
            )));
        }
        Ok(Self {
            width_px,
            height_px,
            pixel_spacing_mm,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width_px * self.height_px
    }
}

/// One 8-bit B-mode image. Row 0 is the most superficial tissue.
#[derive(Debug, Clone, PartialEq)]
pub struct UltrasoundFrame {
    pub timestamp_ms: i64,
    pub geometry: FrameGeometry,
    /// Row-major, `width_px * height_px` values.
    pub intensities: Vec<u8>,
}

impl UltrasoundFrame {
    pub fn new(
        timestamp_ms: i64,
        geometry: FrameGeometry,
        intensities: Vec<u8>,
    ) -> Result<Self, FrameError> {
        if intensities.len() != geometry.pixel_count() {
            return Err(FrameError::InvalidGeometry(format!(
                "{} intensities for a {}x{} raster",
                intensities.len(),
                geometry.width_px,
                geometry.height_px
            )));
        }
        Ok(Self {
            timestamp_ms,
            geometry,
            intensities,
        })
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.intensities[row * self.geometry.width_px + col]
    }
}

/// Frames of one trial, sharing a geometry and sorted by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    geometry: FrameGeometry,
    frames: Vec<UltrasoundFrame>,
}

impl FrameSequence {
    /// Sorts frames by timestamp and rejects duplicates or mixed geometry.
    pub fn new(
        geometry: FrameGeometry,
        mut frames: Vec<UltrasoundFrame>,
    ) -> Result<Self, FrameError> {
        for f in &frames {
            if f.geometry != geometry || f.intensities.len() != geometry.pixel_count() {
                return Err(FrameError::InvalidGeometry(format!(
                    "frame at {} ms does not match sequence geometry",
                    f.timestamp_ms
                )));
            }
        }
        frames.sort_by_key(|f| f.timestamp_ms);
        if let Some(i) = frames
            .windows(2)
            .position(|w| w[0].timestamp_ms == w[1].timestamp_ms)
        {
            return Err(FrameError::NonMonotonicTimestamps {
                source_name: "frames".into(),
                row: i + 1,
            });
        }
        Ok(Self { geometry, frames })
    }

    pub fn geometry(&self) -> FrameGeometry {
        self.geometry
    }

    pub fn frames(&self) -> &[UltrasoundFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.frames.iter().map(|f| f.timestamp_ms).collect()
    }
}

/// Subject/task/trial labels attached to a trial's files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialMeta {
    pub subject_id: String,
    pub task: Task,
    pub trial_index: u32,
}

/// A complete trial. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub subject_id: String,
    pub task: Task,
    pub trial_index: u32,
    pub frames: FrameSequence,
    pub events: Vec<GaitEvent>,
    pub kinematics: Vec<KinematicsSample>,
}

impl TrialRecord {
    /// Checks the structural invariants that loading guarantees.
    pub fn new(
        meta: TrialMeta,
        frames: FrameSequence,
        events: Vec<GaitEvent>,
        kinematics: Vec<KinematicsSample>,
    ) -> Result<Self, FrameError> {
        if frames.is_empty() {
            return Err(FrameError::EmptyTrial { what: "frames" });
        }
        if events.is_empty() {
            return Err(FrameError::EmptyTrial {
                what: "gait events",
            });
        }
        if kinematics.is_empty() {
            return Err(FrameError::EmptyTrial { what: "kinematics" });
        }
        check_increasing(events.iter().map(|e| e.timestamp_ms), "events")?;
        check_increasing(kinematics.iter().map(|k| k.timestamp_ms), "kinematics")?;
        Ok(Self {
            subject_id: meta.subject_id,
            task: meta.task,
            trial_index: meta.trial_index,
            frames,
            events,
            kinematics,
        })
    }

    pub fn meta(&self) -> TrialMeta {
        TrialMeta {
            subject_id: self.subject_id.clone(),
            task: self.task,
            trial_index: self.trial_index,
        }
    }

    pub fn heel_strikes(&self) -> impl Iterator<Item = &GaitEvent> {
        self.events
            .iter()
            .filter(|e| e.kind == GaitEventKind::HeelStrike)
    }
}

pub(crate) fn check_increasing(
    timestamps: impl IntoIterator<Item = i64>,
    source_name: &str,
) -> Result<(), FrameError> {
    let mut prev = None;
    for (row, t) in timestamps.into_iter().enumerate() {
        if let Some(p) = prev {
            if t <= p {
                return Err(FrameError::NonMonotonicTimestamps {
                    source_name: source_name.to_string(),
                    row,
                });
            }
        }
        prev = Some(t);
    }
    Ok(())
}
