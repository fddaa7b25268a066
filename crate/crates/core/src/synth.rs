//! Synthetic cohorts with known ground truth.
//!
//! Knee angle follows a four-harmonic template per task; velocity is its
//! analytic time derivative. Frame intensities are a depth-structured
//! function of the kinematic state:
//!
//! `I(x, z, t) = clamp8(b(z) + speckle(x, z) + wa(x, z) ga(angle) + wv(z) gv(velocity) + noise)`
//!
//! with `ga = tanh((angle - 45) / 45)` and `gv = tanh(velocity / 300)`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::frames::{
    write_manifest, write_trial, Annotation, FrameError, FrameGeometry, FrameSequence, GaitEvent,
    GaitEventKind, KinematicsSample, ManifestEntry, Task, TrialMeta, TrialPaths, TrialRecord,
    UltrasoundFrame,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Frames(#[from] FrameError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Periodic knee-angle curve over one stride, `phase` in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskTemplate {
    pub task: Task,
    pub stride_period_s: f64,
    /// Mean angle, then `(cos, sin)` amplitudes of harmonics 1 to 4.
    pub coefficients: [f64; 9],
}

impl TaskTemplate {
    pub fn for_task(task: Task) -> Self {
        let (stride_period_s, coefficients) = match task {
            Task::Level => (
                1.30,
                [
                    23.177, -2.734, -19.769, -14.555, 6.379, -0.691, 2.349, 0.305, -0.704,
                ],
            ),
            Task::Incline => (
                1.45,
                [
                    26.026, 1.635, -21.59, -13.414, 5.912, 0.265, 3.053, 0.712, -0.411,
                ],
            ),
            Task::Decline => (
                1.50,
                [
                    29.855, -4.201, -19.338, -16.924, 5.388, -2.807, 1.32, -0.337, -0.426,
                ],
            ),
            Task::StairAscent => (
                1.40,
                [
                    47.252, 26.918, -25.347, -12.662, -3.833, -1.425, 2.224, 0.04, -0.027,
                ],
            ),
            Task::StairDescent => (
                1.30,
                [
                    45.434, -21.99, -29.15, -11.608, 6.035, -1.1, 0.305, -0.435, -0.101,
                ],
            ),
        };
        Self {
            task,
            stride_period_s,
            coefficients,
        }
    }

    pub fn angle(&self, phase: f64) -> f64 {
        let c = &self.coefficients;
        let mut v = c[0];
        for h in 1..=4 {
            let w = 2.0 * PI * h as f64 * phase;
            v += c[2 * h - 1] * w.cos() + c[2 * h] * w.sin();
        }
        v
    }

    /// d angle / d phase.
    pub fn angle_derivative(&self, phase: f64) -> f64 {
        let c = &self.coefficients;
        let mut v = 0.0;
        for h in 1..=4 {
            let k = 2.0 * PI * h as f64;
            let w = k * phase;
            v += k * (-c[2 * h - 1] * w.sin() + c[2 * h] * w.cos());
        }
        v
    }

    /// d^2 angle / d phase^2.
    #[cfg(test)]
    fn angle_second_derivative(&self, phase: f64) -> f64 {
        let c = &self.coefficients;
        let mut v = 0.0;
        for h in 1..=4 {
            let k = 2.0 * PI * h as f64;
            let w = k * phase;
            v -= k * k * (c[2 * h - 1] * w.cos() + c[2 * h] * w.sin());
        }
        v
    }

    /// Template peak on a 0.1% phase grid.
    pub fn peak_swing_flexion_deg(&self) -> f64 {
        (0..=1000)
            .map(|i| self.angle(i as f64 / 1000.0))
            .fold(f64::MIN, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub subjects: usize,
    pub level_strides: usize,
    pub incline_strides: usize,
    pub decline_strides: usize,
    /// Steady-state strides per subject summed over all ascent repetitions.
    pub ascent_steady_strides: usize,
    pub descent_steady_strides: usize,
    pub stair_trials: usize,
    pub repetitions_per_stair_trial: usize,
    pub frame_rate_hz: f64,
    pub kinematics_rate_hz: f64,
    pub width_px: usize,
    pub height_px: usize,
    pub pixel_spacing_mm: f64,
    pub noise_sd_intensity: f64,
    pub kinematics_noise_sd_deg: f64,
    pub velocity_noise_sd_deg_s: f64,
    /// Uniform per-stride period perturbation, as a fraction.
    pub stride_period_jitter: f64,
    /// Uniform per-subject period scale spread, as a fraction.
    pub subject_period_spread: f64,
    pub frame_jitter_ms: i64,
    /// Peak intensity swing of the angle response.
    pub angle_gain: f64,
    /// Peak intensity swing of the velocity response.
    pub velocity_gain: f64,
    pub speckle_sd: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            subjects: 7,
            level_strides: 41,
            incline_strides: 38,
            decline_strides: 42,
            ascent_steady_strides: 13,
            descent_steady_strides: 15,
            stair_trials: 5,
            repetitions_per_stair_trial: 2,
            frame_rate_hz: 20.0,
            kinematics_rate_hz: 100.0,
            width_px: 24,
            height_px: 48,
            pixel_spacing_mm: 0.5,
            noise_sd_intensity: 2.0,
            kinematics_noise_sd_deg: 1.0,
            velocity_noise_sd_deg_s: 5.0,
            stride_period_jitter: 0.03,
            subject_period_spread: 0.07,
            frame_jitter_ms: 2,
            angle_gain: 40.0,
            velocity_gain: 4.0,
            speckle_sd: 8.0,
            seed: 1,
        }
    }
}

impl SynthConfig {
    /// No intensity, kinematics, period, or frame-time randomness.
    pub fn zero_noise() -> Self {
        Self {
            noise_sd_intensity: 0.0,
            kinematics_noise_sd_deg: 0.0,
            velocity_noise_sd_deg_s: 0.0,
            stride_period_jitter: 0.0,
            frame_jitter_ms: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.subjects == 0 {
            return bad("subjects must be positive");
        }
        if [
            self.level_strides,
            self.incline_strides,
            self.decline_strides,
        ]
        .contains(&0)
        {
            return bad("treadmill stride counts must be positive");
        }
        if self.stair_trials == 0 || self.repetitions_per_stair_trial == 0 {
            return bad("stair trial and repetition counts must be positive");
        }
        if !(self.frame_rate_hz > 0.0 && self.kinematics_rate_hz > self.frame_rate_hz) {
            return bad("kinematics rate must exceed a positive frame rate");
        }
        if self.width_px == 0
            || self.height_px == 0
            || self.pixel_spacing_mm.is_nan()
            || self.pixel_spacing_mm <= 0.0
        {
            return bad("image geometry must be positive");
        }
        let sds = [
            self.noise_sd_intensity,
            self.kinematics_noise_sd_deg,
            self.velocity_noise_sd_deg_s,
            self.speckle_sd,
        ];
        if sds.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("noise SDs must be finite and non-negative");
        }
        if !(0.0..0.5).contains(&self.stride_period_jitter)
            || !(0.0..0.5).contains(&self.subject_period_spread)
        {
            return bad("period jitter and spread must be in [0, 0.5)");
        }
        if self.frame_jitter_ms < 0 || 4 * self.frame_jitter_ms >= self.frame_period_ms() {
            return bad("frame jitter must be non-negative and below a quarter frame period");
        }
        Ok(())
    }

    fn frame_period_ms(&self) -> i64 {
        (1000.0 / self.frame_rate_hz).round() as i64
    }

    fn kinematics_period_ms(&self) -> i64 {
        ((1000.0 / self.kinematics_rate_hz).round() as i64).max(1)
    }

    /// Number of trials generated for a task.
    pub fn trials_for(&self, task: Task) -> usize {
        if task.is_stair() {
            self.stair_trials
        } else {
            1
        }
    }

    fn steady_total(&self, task: Task) -> usize {
        match task {
            Task::StairAscent => self.ascent_steady_strides,
            _ => self.descent_steady_strides,
        }
    }

    /// Strides per trial, transitions included.
    pub fn strides_in_trial(&self, task: Task, trial_index: usize) -> usize {
        match task {
            Task::Level => self.level_strides,
            Task::Incline => self.incline_strides,
            Task::Decline => self.decline_strides,
            _ => (0..self.repetitions_per_stair_trial)
                .map(|r| {
                    2 + self.steady_in_repetition(
                        task,
                        trial_index * self.repetitions_per_stair_trial + r,
                    )
                })
                .sum(),
        }
    }

    fn steady_in_repetition(&self, task: Task, k: usize) -> usize {
        let reps = self.stair_trials * self.repetitions_per_stair_trial;
        let total = self.steady_total(task);
        (k + 1) * total / reps - k * total / reps
    }
}

/// SplitMix64 finalizer.
pub(crate) fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn task_code(task: Task) -> u64 {
    Task::ALL.iter().position(|t| *t == task).unwrap_or(0) as u64
}

fn subject_seed(master: u64, subject: usize) -> u64 {
    mix(mix(master) ^ (subject as u64).wrapping_mul(0xa076_1d64_78bd_642f))
}

/// Per-trial stream seed, derived from identifiers rather than generation
/// order.
pub fn trial_seed(master: u64, subject: usize, task: Task, trial_index: usize) -> u64 {
    mix(subject_seed(master, subject) ^ mix((task_code(task) << 32) | trial_index as u64))
}

pub fn subject_id(subject: usize) -> String {
    format!("S{:02}", subject + 1)
}

/// Per-subject image response: fixed baseline, speckle, and state weights.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoModel {
    geometry: FrameGeometry,
    /// Baseline plus speckle, row-major.
    background: Vec<f64>,
    angle_weight: Vec<f64>,
    velocity_weight: Vec<f64>,
}

impl EchoModel {
    pub fn for_subject(config: &SynthConfig, subject: usize) -> Result<Self, SynthError> {
        let geometry =
            FrameGeometry::new(config.width_px, config.height_px, config.pixel_spacing_mm)?;
        let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(config.seed, subject) ^ 0x5eed);
        let phase_a: f64 = rng.random_range(0.0..2.0 * PI);
        let phase_v: f64 = rng.random_range(0.0..2.0 * PI);
        let speckle = normal(config.speckle_sd);
        let (w, h) = (config.width_px, config.height_px);
        let mut background = Vec::with_capacity(w * h);
        let mut angle_weight = Vec::with_capacity(w * h);
        let mut velocity_weight = Vec::with_capacity(w * h);
        for z in 0..h {
            let zf = (z as f64 + 0.5) / h as f64;
            let base = 70.0 + 60.0 * (-2.0 * zf).exp() + 15.0 * (3.0 * PI * zf).sin();
            for x in 0..w {
                let xf = (x as f64 + 0.5) / w as f64;
                background.push(base + speckle.sample(&mut rng));
                angle_weight.push(
                    config.angle_gain
                        * (0.6 + 0.4 * (2.0 * PI * zf + phase_a).cos())
                        * (0.8 + 0.4 * xf),
                );
                velocity_weight.push(config.velocity_gain * (3.0 * PI * zf + phase_v).sin());
            }
        }
        Ok(Self {
            geometry,
            background,
            angle_weight,
            velocity_weight,
        })
    }

    pub fn geometry(&self) -> FrameGeometry {
        self.geometry
    }

    /// Noise-free, unquantized pixel intensities for a kinematic state.
    pub fn expected_intensity(&self, angle_deg: f64, velocity_deg_s: f64) -> Vec<f64> {
        let ga = ((angle_deg - 45.0) / 45.0).tanh();
        let gv = (velocity_deg_s / 300.0).tanh();
        self.background
            .iter()
            .zip(&self.angle_weight)
            .zip(&self.velocity_weight)
            .map(|((b, wa), wv)| b + wa * ga + wv * gv)
            .collect()
    }

    /// Block means of [`Self::expected_intensity`] for square kernels of
    /// `kernel_px`, row-major over the kernel grid.
    pub fn expected_kernel_means(
        &self,
        angle_deg: f64,
        velocity_deg_s: f64,
        kernel_px: usize,
    ) -> Vec<f64> {
        let px = self.expected_intensity(angle_deg, velocity_deg_s);
        let (w, h) = (self.geometry.width_px, self.geometry.height_px);
        let (rows, cols) = (h / kernel_px, w / kernel_px);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let mut s = 0.0;
                for z in r * kernel_px..(r + 1) * kernel_px {
                    for x in c * kernel_px..(c + 1) * kernel_px {
                        s += px[z * w + x];
                    }
                }
                out.push(s / (kernel_px * kernel_px) as f64);
            }
        }
        out
    }
}

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("SDs are validated finite and non-negative")
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Steady(Task),
    /// Level into the stair template.
    Enter(Task),
    /// Stair template back to level.
    Exit(Task),
}

impl Shape {
    fn label(self) -> Annotation {
        match self {
            Shape::Steady(_) => Annotation::None,
            Shape::Enter(_) => Annotation::WalkToStair,
            Shape::Exit(_) => Annotation::StairToWalk,
        }
    }

    /// Angle and d angle / d phase.
    fn eval(self, phase: f64, amplitude: f64) -> (f64, f64) {
        let scaled = |t: &TaskTemplate| {
            let mean = t.coefficients[0];
            (
                mean + amplitude * (t.angle(phase) - mean),
                amplitude * t.angle_derivative(phase),
            )
        };
        match self {
            Shape::Steady(task) => scaled(&TaskTemplate::for_task(task)),
            Shape::Enter(task) | Shape::Exit(task) => {
                let (level, level_d) = scaled(&TaskTemplate::for_task(Task::Level));
                let (stair, stair_d) = scaled(&TaskTemplate::for_task(task));
                let ramp = phase * phase * (3.0 - 2.0 * phase);
                let ramp_d = 6.0 * phase * (1.0 - phase);
                let (s, s_d) = match self {
                    Shape::Enter(_) => (ramp, ramp_d),
                    _ => (1.0 - ramp, -ramp_d),
                };
                (
                    (1.0 - s) * level + s * stair,
                    (1.0 - s) * level_d + s * stair_d + s_d * (stair - level),
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct PlannedStride {
    start_ms: f64,
    duration_ms: f64,
    shape: Shape,
}

/// Kinematic state over a trial timeline.
struct Timeline {
    strides: Vec<PlannedStride>,
    amplitude: f64,
}

impl Timeline {
    fn end_ms(&self) -> f64 {
        let last = self.strides[self.strides.len() - 1];
        last.start_ms + last.duration_ms
    }

    /// True angle (deg) and velocity (deg/s) at `t_ms`. Before the first and
    /// after the last stride the neighbouring gait continues periodically.
    fn state(&self, t_ms: f64) -> (f64, f64) {
        let first = self.strides[0];
        let last = self.strides[self.strides.len() - 1];
        let (stride, shape) = if t_ms < first.start_ms {
            let shape = match first.shape {
                Shape::Enter(_) => Shape::Steady(Task::Level),
                s => s,
            };
            (first, shape)
        } else if t_ms >= self.end_ms() {
            let shape = match last.shape {
                Shape::Exit(_) => Shape::Steady(Task::Level),
                s => s,
            };
            (last, shape)
        } else {
            let i = self.strides.partition_point(|s| s.start_ms <= t_ms) - 1;
            (self.strides[i], self.strides[i].shape)
        };
        let phase = ((t_ms - stride.start_ms) / stride.duration_ms).rem_euclid(1.0);
        let (angle, d_phase) = shape.eval(phase, self.amplitude);
        (angle, d_phase / (stride.duration_ms / 1000.0))
    }
}

const LEAD_IN_MS: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruthSample {
    pub timestamp_ms: i64,
    pub angle_deg: f64,
    pub velocity_deg_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrial {
    pub record: TrialRecord,
    /// Noise-free kinematics at the kinematics sample times.
    pub ground_truth: Vec<GroundTruthSample>,
}

struct SubjectTraits {
    period_scale: f64,
    amplitude: f64,
}

fn subject_traits(config: &SynthConfig, subject: usize) -> SubjectTraits {
    let mut rng = ChaCha8Rng::seed_from_u64(subject_seed(config.seed, subject));
    let u: f64 = rng.random_range(-1.0..=1.0);
    let a: f64 = rng.random_range(-1.0..=1.0);
    SubjectTraits {
        period_scale: 1.0 + config.subject_period_spread * u,
        amplitude: 1.0 + 0.04 * a,
    }
}

fn plan_shapes(config: &SynthConfig, task: Task, trial_index: usize) -> Vec<Shape> {
    if !task.is_stair() {
        return vec![Shape::Steady(task); config.strides_in_trial(task, trial_index)];
    }
    let mut shapes = Vec::new();
    for r in 0..config.repetitions_per_stair_trial {
        let k = trial_index * config.repetitions_per_stair_trial + r;
        shapes.push(Shape::Enter(task));
        shapes.extend(std::iter::repeat_n(
            Shape::Steady(task),
            config.steady_in_repetition(task, k),
        ));
        shapes.push(Shape::Exit(task));
    }
    shapes
}

/// Generates one trial of `subject` deterministically from the master seed.
pub fn generate_trial(
    config: &SynthConfig,
    subject: usize,
    task: Task,
    trial_index: usize,
) -> Result<SyntheticTrial, SynthError> {
    config.validate()?;
    let echo = EchoModel::for_subject(config, subject)?;
    generate_with_echo(config, &echo, subject, task, trial_index)
}

fn generate_with_echo(
    config: &SynthConfig,
    echo: &EchoModel,
    subject: usize,
    task: Task,
    trial_index: usize,
) -> Result<SyntheticTrial, SynthError> {
    let traits = subject_traits(config, subject);
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, subject, task, trial_index));
    let level_period = TaskTemplate::for_task(Task::Level).stride_period_s;

    let mut strides = Vec::new();
    let mut t = LEAD_IN_MS;
    for shape in plan_shapes(config, task, trial_index) {
        let base_s = match shape {
            Shape::Steady(x) => TaskTemplate::for_task(x).stride_period_s,
            Shape::Enter(x) | Shape::Exit(x) => {
                0.5 * (level_period + TaskTemplate::for_task(x).stride_period_s)
            }
        };
        let jitter: f64 = if config.stride_period_jitter > 0.0 {
            rng.random_range(-config.stride_period_jitter..=config.stride_period_jitter)
        } else {
            0.0
        };
        let duration_ms = 1000.0 * base_s * traits.period_scale * (1.0 + jitter);
        strides.push(PlannedStride {
            start_ms: t,
            duration_ms,
            shape,
        });
        t += duration_ms;
    }
    let timeline = Timeline {
        strides,
        amplitude: traits.amplitude,
    };

    let mut events = Vec::with_capacity(2 * timeline.strides.len() + 1);
    for s in &timeline.strides {
        events.push(GaitEvent {
            timestamp_ms: s.start_ms.round() as i64,
            kind: GaitEventKind::HeelStrike,
            annotation: Annotation::None,
        });
        events.push(GaitEvent {
            timestamp_ms: (s.start_ms + 0.6 * s.duration_ms).round() as i64,
            kind: GaitEventKind::ToeOff,
            annotation: s.shape.label(),
        });
    }
    events.push(GaitEvent {
        timestamp_ms: timeline.end_ms().round() as i64,
        kind: GaitEventKind::HeelStrike,
        annotation: Annotation::None,
    });

    let kin_step = config.kinematics_period_ms();
    let end_ms = {
        let raw = (timeline.end_ms() + LEAD_IN_MS).ceil() as i64;
        raw + (kin_step - raw % kin_step) % kin_step
    };
    let angle_noise = normal(config.kinematics_noise_sd_deg);
    let velocity_noise = normal(config.velocity_noise_sd_deg_s);
    let mut kinematics = Vec::new();
    let mut ground_truth = Vec::new();
    for ts in (0..=end_ms).step_by(kin_step as usize) {
        let (angle, velocity) = timeline.state(ts as f64);
        ground_truth.push(GroundTruthSample {
            timestamp_ms: ts,
            angle_deg: angle,
            velocity_deg_s: velocity,
        });
        kinematics.push(KinematicsSample {
            timestamp_ms: ts,
            knee_angle_deg: angle + angle_noise.sample(&mut rng),
            knee_velocity_deg_s: velocity + velocity_noise.sample(&mut rng),
        });
    }

    let frame_step = config.frame_period_ms();
    let margin = frame_step / 2 - config.frame_jitter_ms;
    let pixel_noise = normal(config.noise_sd_intensity);
    let geometry = echo.geometry();
    let mut frames = Vec::new();
    let mut nominal = margin.max(config.frame_jitter_ms);
    while nominal + config.frame_jitter_ms <= end_ms {
        let jitter = if config.frame_jitter_ms > 0 {
            rng.random_range(-config.frame_jitter_ms..=config.frame_jitter_ms)
        } else {
            0
        };
        let ts = nominal + jitter;
        let (angle, velocity) = timeline.state(ts as f64);
        let px = echo
            .expected_intensity(angle, velocity)
            .into_iter()
            .map(|v| (v + pixel_noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
            .collect();
        frames.push(UltrasoundFrame::new(ts, geometry, px)?);
        nominal += frame_step;
    }

    let meta = TrialMeta {
        subject_id: subject_id(subject),
        task,
        trial_index: trial_index as u32,
    };
    let record = TrialRecord::new(
        meta,
        FrameSequence::new(geometry, frames)?,
        events,
        kinematics,
    )?;
    Ok(SyntheticTrial {
        record,
        ground_truth,
    })
}

/// CSV with header `timestamp_ms,true_angle,true_velocity`.
pub fn write_ground_truth(path: &Path, samples: &[GroundTruthSample]) -> Result<(), SynthError> {
    let io = |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut w = std::io::BufWriter::new(fs::File::create(path).map_err(io)?);
    writeln!(w, "timestamp_ms,true_angle,true_velocity").map_err(io)?;
    for s in samples {
        writeln!(w, "{},{},{}", s.timestamp_ms, s.angle_deg, s.velocity_deg_s).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Relative file stem for a trial inside a cohort directory.
pub fn trial_stem(subject: usize, task: Task, trial_index: usize) -> PathBuf {
    PathBuf::from(subject_id(subject)).join(format!("{}_{}", task.as_str(), trial_index))
}

/// Writes every trial of every subject plus `manifest.csv` under `out_dir`.
/// Manifest paths are relative to `out_dir`.
pub fn generate_cohort(
    config: &SynthConfig,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>, SynthError> {
    config.validate()?;
    let mut entries = Vec::new();
    for subject in 0..config.subjects {
        let dir = out_dir.join(subject_id(subject));
        fs::create_dir_all(&dir).map_err(|source| SynthError::Io {
            path: dir.clone(),
            source,
        })?;
        let echo = EchoModel::for_subject(config, subject)?;
        for task in Task::ALL {
            for trial_index in 0..config.trials_for(task) {
                let trial = generate_with_echo(config, &echo, subject, task, trial_index)?;
                let stem = trial_stem(subject, task, trial_index);
                let rel = |ext: &str| PathBuf::from(format!("{}.{ext}", stem.display()));
                let paths = TrialPaths {
                    frames: rel("uskf"),
                    events: rel("events.csv"),
                    kinematics: rel("kinematics.csv"),
                };
                let absolute = TrialPaths {
                    frames: out_dir.join(&paths.frames),
                    events: out_dir.join(&paths.events),
                    kinematics: out_dir.join(&paths.kinematics),
                };
                write_trial(&trial.record, &absolute)?;
                write_ground_truth(&out_dir.join(rel("truth.csv")), &trial.ground_truth)?;
                entries.push(ManifestEntry {
                    meta: trial.record.meta(),
                    paths,
                });
            }
        }
    }
    write_manifest(&out_dir.join("manifest.csv"), &entries)?;
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::{load_trial, read_manifest, synchronize_kinematics, validate_trial};
    use crate::gait::{segment_strides, StrideLabel};

    fn small() -> SynthConfig {
        SynthConfig {
            subjects: 2,
            level_strides: 6,
            incline_strides: 5,
            decline_strides: 5,
            ascent_steady_strides: 4,
            descent_steady_strides: 4,
            stair_trials: 2,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn stair_templates_clear_swing_thresholds() {
        assert!(TaskTemplate::for_task(Task::StairAscent).peak_swing_flexion_deg() >= 82.0);
        assert!(TaskTemplate::for_task(Task::StairDescent).peak_swing_flexion_deg() >= 79.0);
    }

    #[test]
    fn templates_are_periodic_with_matching_derivative() {
        for task in Task::ALL {
            let t = TaskTemplate::for_task(task);
            assert!((t.angle(0.0) - t.angle(1.0)).abs() < 1e-9);
            let h = 1e-6;
            for i in 0..20 {
                let p = i as f64 / 20.0;
                let fd = (t.angle(p + h) - t.angle(p - h)) / (2.0 * h);
                assert!((fd - t.angle_derivative(p)).abs() < 1e-5);
                let fd2 = (t.angle_derivative(p + h) - t.angle_derivative(p - h)) / (2.0 * h);
                assert!((fd2 - t.angle_second_derivative(p)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn same_seed_same_trial() {
        let c = small();
        let a = generate_trial(&c, 1, Task::StairAscent, 1).unwrap();
        let b = generate_trial(&c, 1, Task::StairAscent, 1).unwrap();
        assert_eq!(a, b);
        let other = generate_trial(&c, 0, Task::StairAscent, 1).unwrap();
        assert_ne!(a.record.frames, other.record.frames);
    }

    #[test]
    fn zero_noise_kinematics_match_truth_and_strides_repeat() {
        let c = SynthConfig {
            subject_period_spread: 0.0,
            ..SynthConfig::zero_noise()
        };
        let t = generate_trial(&c, 0, Task::Level, 0).unwrap();
        for (k, g) in t.record.kinematics.iter().zip(&t.ground_truth) {
            assert_eq!(k.knee_angle_deg, g.angle_deg);
            assert_eq!(k.knee_velocity_deg_s, g.velocity_deg_s);
        }
        // 1.3 s strides are exactly 26 frames at 20 Hz.
        let frames = t.record.frames.frames();
        for i in 20..200 {
            assert_eq!(
                frames[i].intensities,
                frames[i + 26].intensities,
                "frame {i}"
            );
        }
    }

    #[test]
    fn level_trial_validates_with_configured_strides() {
        let c = small();
        let t = generate_trial(&c, 0, Task::Level, 0).unwrap().record;
        let report = validate_trial(&t);
        assert!(report.passed(), "{report}");
        let sync = synchronize_kinematics(&t).unwrap();
        assert!(sync.dropped.is_empty());
        let times: Vec<i64> = sync.samples.iter().map(|s| s.timestamp_ms).collect();
        assert_eq!(
            segment_strides(&t, &times).unwrap().strides.len(),
            c.level_strides
        );
    }

    #[test]
    fn stair_trials_have_labelled_transitions() {
        let c = SynthConfig::default();
        let mut steady = 0;
        for trial in 0..c.stair_trials {
            let t = generate_trial(&c, 3, Task::StairDescent, trial)
                .unwrap()
                .record;
            assert!(validate_trial(&t).passed());
            let times = t.frames.timestamps();
            let seg = segment_strides(&t, &times).unwrap();
            let count = |l| seg.strides.iter().filter(|s| s.label == l).count();
            assert_eq!(
                count(StrideLabel::WalkToStair),
                c.repetitions_per_stair_trial
            );
            assert_eq!(
                count(StrideLabel::StairToWalk),
                c.repetitions_per_stair_trial
            );
            steady += count(StrideLabel::SteadyState);
        }
        assert_eq!(steady, c.descent_steady_strides);
    }

    #[test]
    fn central_difference_matches_velocity() {
        let c = SynthConfig::zero_noise();
        for task in [Task::Level, Task::StairAscent] {
            let t = generate_trial(&c, 2, task, 0).unwrap();
            let hs: Vec<i64> = t.record.heel_strikes().map(|e| e.timestamp_ms).collect();
            let g = &t.ground_truth;
            let h = (g[1].timestamp_ms - g[0].timestamp_ms) as f64 / 1000.0;
            for i in 1..g.len() - 1 {
                if hs.iter().any(|&b| (b - g[i].timestamp_ms).abs() <= 20) {
                    continue;
                }
                let fd = (g[i + 1].angle_deg - g[i - 1].angle_deg) / (2.0 * h);
                // h^2/6 |angle'''| with |angle'''| below 4e5 deg/s^3 for these templates.
                assert!(
                    (fd - g[i].velocity_deg_s).abs() < 4e5 * h * h / 6.0 + 1e-6,
                    "{task} t={}",
                    g[i].timestamp_ms
                );
            }
        }
    }

    #[test]
    fn distinct_states_have_distinct_features() {
        let c = SynthConfig::default();
        let echo = EchoModel::for_subject(&c, 0).unwrap();
        let mut states = Vec::new();
        for a in (0..=100).step_by(2) {
            for v in (-450..=450).step_by(30) {
                states.push((a as f64, v as f64));
            }
        }
        let feats: Vec<Vec<f64>> = states
            .iter()
            .map(|&(a, v)| echo.expected_kernel_means(a, v, 6))
            .collect();
        let margin = 0.05;
        for i in 0..states.len() {
            for j in i + 1..states.len() {
                let d: f64 = feats[i]
                    .iter()
                    .zip(&feats[j])
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= margin, "{:?} vs {:?}: {d}", states[i], states[j]);
            }
        }
    }

    #[test]
    fn cohort_round_trips_through_loader() {
        let c = small();
        let dir = tempfile::tempdir().unwrap();
        let entries = generate_cohort(&c, dir.path()).unwrap();
        assert_eq!(entries.len(), c.subjects * (3 + 2 * c.stair_trials));
        let manifest = read_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(manifest.len(), entries.len());
        for e in &manifest {
            let t = load_trial(
                &e.paths.frames,
                &e.paths.events,
                &e.paths.kinematics,
                e.meta.clone(),
            )
            .unwrap();
            assert!(validate_trial(&t).passed());
        }
    }

    #[test]
    fn trial_seeds_depend_on_identity() {
        let a = trial_seed(1, 0, Task::Level, 0);
        assert_ne!(a, trial_seed(1, 1, Task::Level, 0));
        assert_ne!(a, trial_seed(1, 0, Task::Incline, 0));
        assert_ne!(a, trial_seed(1, 0, Task::Level, 1));
        assert_ne!(a, trial_seed(2, 0, Task::Level, 0));
    }

    #[test]
    fn invalid_config_rejected() {
        let c = SynthConfig {
            noise_sd_intensity: -1.0,
            ..SynthConfig::default()
        };
        assert!(matches!(c.validate(), Err(SynthError::InvalidConfig(_))));
    }
}
