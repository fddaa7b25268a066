//! Flat key/value run settings: defaults, then the config file, then `--set`.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sonokin::experiment::{ExperimentConfig, FeatureSet, FitSettings, Paradigm, RefitMode};
use sonokin::gpr::{HyperoptConfig, KernelFamily};
use sonokin::synth::SynthConfig;
use sonokin::Target;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub seed: u64,

    pub subjects: usize,
    pub level_strides: usize,
    pub incline_strides: usize,
    pub decline_strides: usize,
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
    pub stride_period_jitter: f64,
    pub subject_period_spread: f64,
    pub frame_jitter_ms: i64,
    pub angle_gain: f64,
    pub velocity_gain: f64,
    pub speckle_sd: f64,

    pub kernel_size_mm: f64,
    pub include_temporal: bool,

    pub holdout_fraction: f64,
    pub kernel: String,
    /// 0 keeps every training row.
    pub max_train: usize,
    pub hyperopt_restarts: usize,
    pub hyperopt_max_iterations: usize,
    pub hyperopt_tolerance: f64,
    /// 0 searches on every training row.
    pub hyperopt_max_rows: usize,
    pub refit: String,
    pub paradigms: Vec<String>,
    pub feature_sets: Vec<String>,
    pub targets: Vec<String>,

    pub alpha: f64,
    pub family_size: usize,

    /// Input manifest; defaults to `<out>/manifest.csv`.
    pub manifest: Option<PathBuf>,
    /// Input RMSE report; defaults to `<out>/rmse.csv`.
    pub report: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        let s = SynthConfig::default();
        let fit = FitSettings::default();
        Self {
            seed: s.seed,
            subjects: s.subjects,
            level_strides: s.level_strides,
            incline_strides: s.incline_strides,
            decline_strides: s.decline_strides,
            ascent_steady_strides: s.ascent_steady_strides,
            descent_steady_strides: s.descent_steady_strides,
            stair_trials: s.stair_trials,
            repetitions_per_stair_trial: s.repetitions_per_stair_trial,
            frame_rate_hz: s.frame_rate_hz,
            kinematics_rate_hz: s.kinematics_rate_hz,
            width_px: s.width_px,
            height_px: s.height_px,
            pixel_spacing_mm: s.pixel_spacing_mm,
            noise_sd_intensity: s.noise_sd_intensity,
            kinematics_noise_sd_deg: s.kinematics_noise_sd_deg,
            velocity_noise_sd_deg_s: s.velocity_noise_sd_deg_s,
            stride_period_jitter: s.stride_period_jitter,
            subject_period_spread: s.subject_period_spread,
            frame_jitter_ms: s.frame_jitter_ms,
            angle_gain: s.angle_gain,
            velocity_gain: s.velocity_gain,
            speckle_sd: s.speckle_sd,
            kernel_size_mm: 3.0,
            include_temporal: true,
            holdout_fraction: 0.2,
            kernel: fit.family.as_str().to_string(),
            max_train: fit.max_train.unwrap_or(0),
            hyperopt_restarts: fit.hyperopt.restarts,
            hyperopt_max_iterations: fit.hyperopt.max_iterations,
            hyperopt_tolerance: fit.hyperopt.rel_tolerance,
            hyperopt_max_rows: fit.hyperopt.max_rows.unwrap_or(0),
            refit: "per_fold".into(),
            paradigms: Paradigm::ALL
                .iter()
                .map(|p| p.as_str().to_string())
                .collect(),
            feature_sets: FeatureSet::ALL
                .iter()
                .map(|f| f.as_str().to_string())
                .collect(),
            targets: Target::ALL.iter().map(|t| t.as_str().to_string()).collect(),
            alpha: 0.05,
            family_size: sonokin::stats::DEFAULT_FAMILY_SIZE,
            manifest: None,
            report: None,
        }
    }
}

/// A problem with the user's configuration (exit status 1).
#[derive(Debug)]
pub struct InvalidSettings(pub String);

impl std::fmt::Display for InvalidSettings {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidSettings {}

fn invalid(msg: impl Into<String>) -> InvalidSettings {
    InvalidSettings(msg.into())
}

/// Parses `key=value`; the value is read as a TOML literal, falling back to
/// a bare string.
fn parse_override(raw: &str) -> Result<(String, toml::Value), InvalidSettings> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| invalid(format!("override {raw:?} is not key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(invalid(format!("override {raw:?} has an empty key")));
    }
    let value = value.trim();
    let parsed = format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key.to_string(), parsed))
}

impl Settings {
    pub fn load(
        config: Option<&Path>,
        overrides: &[String],
        seed: Option<u64>,
    ) -> Result<Self, InvalidSettings> {
        let mut table = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| invalid(format!("cannot read config {}: {e}", path.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| invalid(format!("config {}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for raw in overrides {
            let (k, v) = parse_override(raw)?;
            table.insert(k, v);
        }
        if let Some(seed) = seed {
            let seed = i64::try_from(seed)
                .map_err(|_| invalid("seed must fit in a signed 64-bit integer"))?;
            table.insert("seed".into(), toml::Value::Integer(seed));
        }
        let settings: Settings = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| invalid(format!("settings: {}", e.message())))?;
        settings.validate()?;
        Ok(settings)
    }

    fn validate(&self) -> Result<(), InvalidSettings> {
        self.synth()
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if !(self.kernel_size_mm.is_finite() && self.kernel_size_mm > 0.0) {
            return Err(invalid(format!(
                "kernel_size_mm must be positive, got {}",
                self.kernel_size_mm
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(invalid(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.family_size == 0 {
            return Err(invalid("family_size must be positive"));
        }
        for c in self.experiment_configs()? {
            c.validate().map_err(|e| invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            subjects: self.subjects,
            level_strides: self.level_strides,
            incline_strides: self.incline_strides,
            decline_strides: self.decline_strides,
            ascent_steady_strides: self.ascent_steady_strides,
            descent_steady_strides: self.descent_steady_strides,
            stair_trials: self.stair_trials,
            repetitions_per_stair_trial: self.repetitions_per_stair_trial,
            frame_rate_hz: self.frame_rate_hz,
            kinematics_rate_hz: self.kinematics_rate_hz,
            width_px: self.width_px,
            height_px: self.height_px,
            pixel_spacing_mm: self.pixel_spacing_mm,
            noise_sd_intensity: self.noise_sd_intensity,
            kinematics_noise_sd_deg: self.kinematics_noise_sd_deg,
            velocity_noise_sd_deg_s: self.velocity_noise_sd_deg_s,
            stride_period_jitter: self.stride_period_jitter,
            subject_period_spread: self.subject_period_spread,
            frame_jitter_ms: self.frame_jitter_ms,
            angle_gain: self.angle_gain,
            velocity_gain: self.velocity_gain,
            speckle_sd: self.speckle_sd,
            seed: self.seed,
        }
    }

    fn fit(&self) -> Result<FitSettings, InvalidSettings> {
        let nonzero = |v: usize| (v > 0).then_some(v);
        Ok(FitSettings {
            family: self
                .kernel
                .parse::<KernelFamily>()
                .map_err(|e| invalid(format!("kernel: {e}")))?,
            max_train: nonzero(self.max_train),
            hyperopt: HyperoptConfig {
                restarts: self.hyperopt_restarts.max(1),
                max_iterations: self.hyperopt_max_iterations,
                rel_tolerance: self.hyperopt_tolerance,
                seed: self.seed,
                initial: None,
                max_rows: nonzero(self.hyperopt_max_rows),
            },
            refit: self.refit.parse::<RefitMode>().map_err(invalid)?,
        })
    }

    /// One config per selected (paradigm, feature set, target).
    pub fn experiment_configs(&self) -> Result<Vec<ExperimentConfig>, InvalidSettings> {
        let fit = self.fit()?;
        let parse_all = |name: &str, items: &[String]| -> Result<(), InvalidSettings> {
            if items.is_empty() {
                return Err(invalid(format!("{name} must not be empty")));
            }
            Ok(())
        };
        parse_all("paradigms", &self.paradigms)?;
        parse_all("feature_sets", &self.feature_sets)?;
        parse_all("targets", &self.targets)?;
        let paradigms: Vec<Paradigm> = self
            .paradigms
            .iter()
            .map(|s| s.parse().map_err(invalid))
            .collect::<Result<_, _>>()?;
        let feature_sets: Vec<FeatureSet> = self
            .feature_sets
            .iter()
            .map(|s| s.parse().map_err(invalid))
            .collect::<Result<_, _>>()?;
        let targets: Vec<Target> = self
            .targets
            .iter()
            .map(|s| s.parse().map_err(|e: String| invalid(e)))
            .collect::<Result<_, _>>()?;
        let mut out = Vec::new();
        for &p in &paradigms {
            for &f in &feature_sets {
                for &t in &targets {
                    let mut c = ExperimentConfig::new(p, f, t);
                    c.treadmill_holdout_fraction = self.holdout_fraction;
                    c.seed = self.seed;
                    c.fit = fit.clone();
                    out.push(c);
                }
            }
        }
        Ok(out)
    }

    pub fn manifest_path(&self, out: &Path) -> PathBuf {
        self.manifest
            .clone()
            .unwrap_or_else(|| out.join("manifest.csv"))
    }

    pub fn report_path(&self, out: &Path) -> PathBuf {
        self.report.clone().unwrap_or_else(|| out.join("rmse.csv"))
    }
}
