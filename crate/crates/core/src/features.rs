//! Spatiotemporal intensity features.
//!
//! Each frame is tiled into non-overlapping square kernels anchored at the
//! top-left corner (partial edge kernels are discarded). A frame's intensity
//! features are the kernel means flattened row-major, so index 0 is the most
//! superficial left kernel. Temporal features are the per-kernel time
//! derivatives between consecutive frames, assigned to the later frame.

use std::collections::HashMap;
use std::io::{self, Write};

use thiserror::Error;

use crate::frames::{FrameGeometry, FrameSequence};

/// Lower bound on a column's standard deviation before division.
pub const SD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("{height}x{width} px frame is smaller than one {kernel_px} px kernel")]
    FrameTooSmall {
        width: usize,
        height: usize,
        kernel_px: usize,
    },
    #[error("kernel size must be positive, got {0} mm")]
    InvalidKernelSize(f64),
    #[error("temporal features need at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("non-positive time step between rows {0} and {1}")]
    ZeroTimeDelta(usize, usize),
    #[error("{0} timestamps for {1} feature rows")]
    TimestampCount(usize, usize),
    #[error("rows cannot be aligned by frame index: {0}")]
    MisalignedRows(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no training rows")]
    EmptyTrainingSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub kernel_size_mm: f64,
    pub include_temporal: bool,
    pub standardize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            kernel_size_mm: 3.0,
            include_temporal: true,
            standardize: true,
        }
    }
}

/// Kernel tiling of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelGrid {
    pub kernel_px: usize,
    pub rows: usize,
    pub cols: usize,
}

impl KernelGrid {
    pub fn for_geometry(
        geometry: FrameGeometry,
        kernel_size_mm: f64,
    ) -> Result<Self, FeatureError> {
        if !(kernel_size_mm.is_finite() && kernel_size_mm > 0.0) {
            return Err(FeatureError::InvalidKernelSize(kernel_size_mm));
        }
        let kernel_px = ((kernel_size_mm / geometry.pixel_spacing_mm).round() as usize).max(1);
        let rows = geometry.height_px / kernel_px;
        let cols = geometry.width_px / kernel_px;
        if rows == 0 || cols == 0 {
            return Err(FeatureError::FrameTooSmall {
                width: geometry.width_px,
                height: geometry.height_px,
                kernel_px,
            });
        }
        Ok(Self {
            kernel_px,
            rows,
            cols,
        })
    }

    /// Features per frame.
    pub fn n(&self) -> usize {
        self.rows * self.cols
    }

    pub fn flat_index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelLayout {
    IntensityOnly,
    TemporalOnly,
    IntensityThenTemporal,
}

/// Row-major samples x dims matrix; each row remembers its source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dims: usize,
    values: Vec<f64>,
    frame_indices: Vec<usize>,
    layout: ChannelLayout,
}

impl FeatureMatrix {
    pub fn new(
        dims: usize,
        values: Vec<f64>,
        frame_indices: Vec<usize>,
        layout: ChannelLayout,
    ) -> Result<Self, FeatureError> {
        if values.len() != dims * frame_indices.len() {
            return Err(FeatureError::DimensionMismatch {
                expected: dims * frame_indices.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            dims,
            values,
            frame_indices,
            layout,
        })
    }

    /// Matrix from plain rows with frame indices `0..rows`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FeatureError> {
        let dims = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(dims * rows.len());
        for r in rows {
            if r.len() != dims {
                return Err(FeatureError::DimensionMismatch {
                    expected: dims,
                    got: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(
            dims,
            values,
            (0..rows.len()).collect(),
            ChannelLayout::IntensityOnly,
        )
    }

    pub fn samples(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn layout(&self) -> ChannelLayout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_indices(&self) -> &[usize] {
        &self.frame_indices
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values
            .chunks_exact(self.dims.max(1))
            .take(self.samples())
    }

    /// Keeps the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.dims);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            dims: self.dims,
            values,
            frame_indices: rows.iter().map(|&r| self.frame_indices[r]).collect(),
            layout: self.layout,
        }
    }

    /// CSV with header `frame_index,f0,..,f{dims-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "frame_index")?;
        for j in 0..self.dims {
            write!(w, ",f{j}")?;
        }
        writeln!(w)?;
        for (i, row) in self.rows().enumerate() {
            write!(w, "{}", self.frame_indices[i])?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Mean intensity of every kernel in every frame.
pub fn extract_intensity_features(
    frames: &FrameSequence,
    config: &FeatureConfig,
) -> Result<(FeatureMatrix, KernelGrid), FeatureError> {
    let g = frames.geometry();
    let grid = KernelGrid::for_geometry(g, config.kernel_size_mm)?;
    let k = grid.kernel_px;
    let area = (k * k) as f64;
    let n = grid.n();
    let mut values = Vec::with_capacity(frames.len() * n);
    let mut sums = vec![0u32; n];
    for frame in frames.frames() {
        sums.iter_mut().for_each(|s| *s = 0);
        for r in 0..grid.rows * k {
            let line = &frame.intensities[r * g.width_px..r * g.width_px + grid.cols * k];
            let base = (r / k) * grid.cols;
            for (c, block) in line.chunks_exact(k).enumerate() {
                sums[base + c] += block.iter().map(|&p| p as u32).sum::<u32>();
            }
        }
        values.extend(sums.iter().map(|&s| s as f64 / area));
    }
    let m = FeatureMatrix::new(
        n,
        values,
        (0..frames.len()).collect(),
        ChannelLayout::IntensityOnly,
    )?;
    Ok((m, grid))
}

/// Per-second derivative between consecutive rows. Row `t-1` of the output
/// belongs to the frame of input row `t`.
pub fn compute_temporal_features(
    intensity: &FeatureMatrix,
    timestamps_ms: &[i64],
) -> Result<FeatureMatrix, FeatureError> {
    let rows = intensity.samples();
    if timestamps_ms.len() != rows {
        return Err(FeatureError::TimestampCount(timestamps_ms.len(), rows));
    }
    if rows < 2 {
        return Err(FeatureError::TooFewFrames(rows));
    }
    let dims = intensity.dims();
    let mut values = Vec::with_capacity((rows - 1) * dims);
    for t in 1..rows {
        let dt_ms = timestamps_ms[t] - timestamps_ms[t - 1];
        if dt_ms <= 0 {
            return Err(FeatureError::ZeroTimeDelta(t - 1, t));
        }
        let dt = dt_ms as f64 / 1000.0;
        let (prev, cur) = (intensity.row(t - 1), intensity.row(t));
        values.extend(cur.iter().zip(prev).map(|(c, p)| (c - p) / dt));
    }
    FeatureMatrix::new(
        dims,
        values,
        intensity.frame_indices()[1..].to_vec(),
        ChannelLayout::TemporalOnly,
    )
}

/// Combines the intensity block with the temporal block when the config asks
/// for it. With temporal features the first frame has no derivative and is
/// dropped.
pub fn assemble_feature_matrix(
    intensity: &FeatureMatrix,
    temporal: Option<&FeatureMatrix>,
    config: &FeatureConfig,
) -> Result<FeatureMatrix, FeatureError> {
    if !config.include_temporal {
        return Ok(intensity.clone());
    }
    let temporal =
        temporal.ok_or_else(|| FeatureError::MisalignedRows("temporal block missing".into()))?;
    if temporal.dims() != intensity.dims() {
        return Err(FeatureError::MisalignedRows(format!(
            "{} intensity dims vs {} temporal dims",
            intensity.dims(),
            temporal.dims()
        )));
    }
    let by_frame: HashMap<usize, usize> = intensity
        .frame_indices()
        .iter()
        .enumerate()
        .map(|(row, &f)| (f, row))
        .collect();
    let dims = intensity.dims() * 2;
    let mut values = Vec::with_capacity(temporal.samples() * dims);
    for (t_row, &frame) in temporal.frame_indices().iter().enumerate() {
        let i_row = *by_frame.get(&frame).ok_or_else(|| {
            FeatureError::MisalignedRows(format!("no intensity row for frame {frame}"))
        })?;
        values.extend_from_slice(intensity.row(i_row));
        values.extend_from_slice(temporal.row(t_row));
    }
    FeatureMatrix::new(
        dims,
        values,
        temporal.frame_indices().to_vec(),
        ChannelLayout::IntensityThenTemporal,
    )
}

/// Per-dimension z-score parameters (population SD).
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardization {
    pub fn fit(train: &FeatureMatrix) -> Result<Self, FeatureError> {
        let n = train.samples();
        if n == 0 {
            return Err(FeatureError::EmptyTrainingSet);
        }
        let d = train.dims();
        let mut mean = vec![0.0; d];
        for row in train.rows() {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for row in train.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var
            .into_iter()
            .map(|s| (s / n as f64).sqrt().max(SD_FLOOR))
            .collect();
        Ok(Self { mean, sd })
    }

    pub fn apply(&self, rows: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        if rows.dims() != self.mean.len() {
            return Err(FeatureError::DimensionMismatch {
                expected: self.mean.len(),
                got: rows.dims(),
            });
        }
        let mut out = rows.clone();
        for row in out.values.chunks_exact_mut(self.mean.len().max(1)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Fits on `train_rows` and transforms `apply_rows`.
pub fn standardize(
    train_rows: &FeatureMatrix,
    apply_rows: &FeatureMatrix,
) -> Result<(Standardization, FeatureMatrix), FeatureError> {
    let s = Standardization::fit(train_rows)?;
    let out = s.apply(apply_rows)?;
    Ok((s, out))
}
