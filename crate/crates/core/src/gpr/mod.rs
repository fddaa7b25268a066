//! Exact Gaussian process regression.

mod kernel;
mod linalg;
mod optimize;
mod serialize;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::features::FeatureMatrix;

pub use kernel::{kernel_eval, Kernel, KernelFamily, KernelSpec};
pub use linalg::Cholesky;
pub use optimize::{
    nelder_mead, optimize_hyperparameters, HyperoptConfig, NelderMeadOptions, SimplexMinimum,
};
pub use serialize::{ModelBundle, MODEL_MAGIC, MODEL_VERSION};

/// Jitter multipliers of the mean Gram diagonal tried in order.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-10, 1e-8, 1e-6];

#[derive(Debug, Error)]
pub enum GprError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {needed} training rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("{targets} targets for {rows} rows")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("targets contain NaN or infinite values")]
    DegenerateTargets,
    #[error("Gram matrix not positive definite after maximum jitter")]
    NotPositiveDefinite,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameter(String),
    #[error("all hyperparameter restarts failed")]
    OptimizationFailed,
    #[error("model blob: {0}")]
    Format(String),
    #[error("model blob version {found} is not supported (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },
    #[error("model blob checksum mismatch")]
    ChecksumMismatch,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    KneeAngle,
    KneeVelocity,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::KneeAngle, Target::KneeVelocity];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::KneeAngle => "knee_angle",
            Target::KneeVelocity => "knee_velocity",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Target::KneeAngle => "deg",
            Target::KneeVelocity => "deg/s",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Target::KneeAngle => 0,
            Target::KneeVelocity => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Target::KneeAngle),
            1 => Some(Target::KneeVelocity),
            _ => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "knee_angle" | "angle" => Ok(Target::KneeAngle),
            "knee_velocity" | "velocity" => Ok(Target::KneeVelocity),
            other => Err(format!("unknown target {other:?}")),
        }
    }
}

/// Posterior mean and, when requested, variance in target units.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub variance: Option<Vec<f64>>,
}

/// A fitted model. Immutable once built; prediction takes `&self`.
#[derive(Debug, Clone)]
pub struct GprModel {
    spec: KernelSpec,
    target: Target,
    dims: usize,
    inputs: Vec<f64>,
    target_mean: f64,
    target_sd: f64,
    standardized_targets: Vec<f64>,
    chol: Cholesky,
    dual_weights: Vec<f64>,
    jitter: f64,
}

impl GprModel {
    /// Fits on the rows of `inputs`. Targets are z-scored internally.
    pub fn fit(
        inputs: &FeatureMatrix,
        targets: &[f64],
        spec: &KernelSpec,
        target: Target,
    ) -> Result<Self, GprError> {
        Self::fit_raw(
            inputs.dims(),
            inputs.values().to_vec(),
            targets,
            spec,
            target,
        )
    }

    pub(crate) fn fit_raw(
        dims: usize,
        inputs: Vec<f64>,
        targets: &[f64],
        spec: &KernelSpec,
        target: Target,
    ) -> Result<Self, GprError> {
        spec.validate()?;
        let n = inputs.len().checked_div(dims).unwrap_or(0);
        if n < 2 {
            return Err(GprError::TooFewRows { needed: 2, got: n });
        }
        if targets.len() != n {
            return Err(GprError::LengthMismatch {
                rows: n,
                targets: targets.len(),
            });
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(GprError::DegenerateTargets);
        }
        let (target_mean, target_sd) = mean_sd(targets);
        let y: Vec<f64> = targets
            .iter()
            .map(|t| (t - target_mean) / target_sd)
            .collect();
        let gram = gram_matrix(&spec.kernel, &inputs, dims);
        let (chol, jitter) = factor_with_jitter(gram, n, spec.noise_variance)?;
        let dual_weights = chol.solve(&y);
        Ok(Self {
            spec: *spec,
            target,
            dims,
            inputs,
            target_mean,
            target_sd,
            standardized_targets: y,
            chol,
            dual_weights,
            jitter,
        })
    }

    /// Rebuilds a model from stored dual weights, refactoring the Gram matrix
    /// with the recorded jitter.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        spec: KernelSpec,
        target: Target,
        dims: usize,
        inputs: Vec<f64>,
        target_mean: f64,
        target_sd: f64,
        dual_weights: Vec<f64>,
        jitter: f64,
    ) -> Result<Self, GprError> {
        spec.validate()?;
        let n = dual_weights.len();
        if dims == 0 || inputs.len() != n * dims {
            return Err(GprError::Format(
                "input block does not match weight count".into(),
            ));
        }
        let mut a = gram_matrix(&spec.kernel, &inputs, dims);
        for i in 0..n {
            a[i * n + i] += spec.noise_variance + jitter;
        }
        let chol = Cholesky::factor(&a, n).ok_or(GprError::NotPositiveDefinite)?;
        let standardized_targets = (0..n)
            .map(|i| linalg::dot(&a[i * n..(i + 1) * n], &dual_weights))
            .collect();
        Ok(Self {
            spec,
            target,
            dims,
            inputs,
            target_mean,
            target_sd,
            standardized_targets,
            chol,
            dual_weights,
            jitter,
        })
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn target(&self) -> Target {
        self.target
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn training_rows(&self) -> usize {
        self.dual_weights.len()
    }

    pub fn training_inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn target_mean(&self) -> f64 {
        self.target_mean
    }

    pub fn target_sd(&self) -> f64 {
        self.target_sd
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    pub fn dual_weights(&self) -> &[f64] {
        &self.dual_weights
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter
    }

    pub fn predict_mean(&self, query: &FeatureMatrix) -> Result<Vec<f64>, GprError> {
        Ok(self.predict(query, false)?.mean)
    }

    pub fn predict(
        &self,
        query: &FeatureMatrix,
        with_variance: bool,
    ) -> Result<Prediction, GprError> {
        if query.dims() != self.dims {
            return Err(GprError::DimensionMismatch {
                expected: self.dims,
                got: query.dims(),
            });
        }
        let n = self.training_rows();
        let mut mean = Vec::with_capacity(query.samples());
        let mut variance = with_variance.then(|| Vec::with_capacity(query.samples()));
        let mut k_star = vec![0.0; n];
        for q in query.rows() {
            for (k, x) in k_star.iter_mut().zip(self.inputs.chunks_exact(self.dims)) {
                *k = self.spec.kernel.eval_unchecked(q, x);
            }
            mean.push(self.target_mean + self.target_sd * linalg::dot(&k_star, &self.dual_weights));
            if let Some(var) = variance.as_mut() {
                self.chol.solve_lower_in_place(&mut k_star);
                let latent = self.spec.kernel.diag(q) - linalg::dot(&k_star, &k_star);
                var.push(latent.max(0.0) * self.target_sd * self.target_sd);
            }
        }
        Ok(Prediction { mean, variance })
    }

    /// Log marginal likelihood of the standardized training targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        log_marginal_likelihood(&self.chol, &self.standardized_targets, &self.dual_weights)
    }
}

/// `-0.5 y.w - sum ln L_ii - N/2 ln 2pi`.
pub fn log_marginal_likelihood(chol: &Cholesky, y: &[f64], dual_weights: &[f64]) -> f64 {
    let n = y.len() as f64;
    -0.5 * linalg::dot(y, dual_weights)
        - chol.half_log_det()
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

/// Full symmetric Gram matrix of row-major `inputs`, without noise.
pub fn gram_matrix(kernel: &Kernel, inputs: &[f64], dims: usize) -> Vec<f64> {
    let n = inputs.len() / dims.max(1);
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        let xi = &inputs[i * dims..(i + 1) * dims];
        for j in 0..=i {
            let v = kernel.eval_unchecked(xi, &inputs[j * dims..(j + 1) * dims]);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Adds the noise variance and tries the jitter ladder. Returns the factor
/// and the absolute jitter that succeeded.
pub(crate) fn factor_with_jitter(
    mut a: Vec<f64>,
    n: usize,
    noise_variance: f64,
) -> Result<(Cholesky, f64), GprError> {
    for i in 0..n {
        a[i * n + i] += noise_variance;
    }
    let mean_diag = (0..n).map(|i| a[i * n + i]).sum::<f64>() / n as f64;
    if !mean_diag.is_finite() {
        return Err(GprError::NotPositiveDefinite);
    }
    let mut applied = 0.0;
    for step in JITTER_LADDER {
        let jitter = step * mean_diag;
        for i in 0..n {
            a[i * n + i] += jitter - applied;
        }
        applied = jitter;
        if let Some(c) = Cholesky::factor(&a, n) {
            return Ok((c, jitter));
        }
    }
    Err(GprError::NotPositiveDefinite)
}

/// Mean and population SD; a zero SD is replaced by 1 so constant targets
/// standardize to zeros.
fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    (
        mean,
        if sd > 1e-12 * mean.abs().max(1.0) {
            sd
        } else {
            1.0
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    fn lcg_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        s = s
                            .wrapping_mul(6364136223846793005)
                            .wrapping_add(1442695040888963407);
                        ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn two_point_factor_reconstructs() {
        let x = matrix(&[vec![0.0, 1.0], vec![0.5, -1.0]]);
        let spec = KernelSpec::rational_quadratic(1.3, 0.8, 2.0, 0.05);
        let m = GprModel::fit(&x, &[1.0, 2.0], &spec, Target::KneeAngle).unwrap();
        let l = m.cholesky();
        assert_eq!(l.dim(), 2);
        assert_eq!(l.get(0, 1), 0.0);
        let k = gram_matrix(&spec.kernel, x.values(), 2);
        for i in 0..2 {
            assert!(l.get(i, i) > 0.0);
            for j in 0..2 {
                let want = k[i * 2 + j] + if i == j { 0.05 + m.jitter_used() } else { 0.0 };
                let got: f64 = (0..2).map(|t| l.get(i, t) * l.get(j, t)).sum();
                assert!((got - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constant_targets_predict_constant() {
        let rows = lcg_rows(8, 3, 5);
        let x = matrix(&rows);
        let spec = KernelSpec::rational_quadratic(1.0, 1.0, 1.0, 0.1);
        let m = GprModel::fit(&x, &[7.0; 8], &spec, Target::KneeAngle).unwrap();
        for p in m.predict_mean(&x).unwrap() {
            assert!((p - 7.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_targets_rejected() {
        let x = matrix(&[vec![0.0], vec![1.0]]);
        let spec = KernelSpec::rational_quadratic(1.0, 1.0, 1.0, 0.1);
        assert!(matches!(
            GprModel::fit(&x, &[1.0, f64::NAN], &spec, Target::KneeAngle),
            Err(GprError::DegenerateTargets)
        ));
        assert!(matches!(
            GprModel::fit(&matrix(&[vec![0.0]]), &[1.0], &spec, Target::KneeAngle),
            Err(GprError::TooFewRows { .. })
        ));
    }

    #[test]
    fn near_interpolation_at_tiny_noise() {
        let rows = lcg_rows(6, 2, 9);
        let y: Vec<f64> = rows.iter().map(|r| r[0].sin() * 10.0 + r[1]).collect();
        let spec = KernelSpec::rational_quadratic(1.0, 1.0, 1.0, 1e-12);
        let m = GprModel::fit(&matrix(&rows), &y, &spec, Target::KneeAngle).unwrap();
        let p = m.predict_mean(&matrix(&rows)).unwrap();
        for (a, b) in p.iter().zip(&y) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn far_query_reverts_to_mean() {
        let rows = lcg_rows(10, 2, 21);
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] + 40.0).collect();
        let spec = KernelSpec::rational_quadratic(1.0, 0.5, 1.0, 0.01);
        let m = GprModel::fit(&matrix(&rows), &y, &spec, Target::KneeAngle).unwrap();
        let p = m.predict_mean(&matrix(&[vec![1e4, -1e4]])).unwrap()[0];
        assert!((p - m.target_mean()).abs() < 1e-3);
    }

    #[test]
    fn single_point_lml() {
        let c = Cholesky::factor(&[1.0], 1).unwrap();
        let lml = log_marginal_likelihood(&c, &[0.0], &[0.0]);
        assert!((lml + 0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn gram_is_symmetric_and_positive() {
        let rows = lcg_rows(12, 4, 2);
        let flat: Vec<f64> = rows.concat();
        let kern = Kernel::RationalQuadratic {
            signal_variance: 2.0,
            length_scale: 0.7,
            shape: 1.5,
        };
        let k = gram_matrix(&kern, &flat, 4);
        for i in 0..12 {
            for j in 0..12 {
                assert_eq!(k[i * 12 + j], k[j * 12 + i]);
                assert_eq!(
                    kern.eval_unchecked(&rows[i], &rows[j]),
                    kern.eval_unchecked(&rows[j], &rows[i])
                );
                assert!(k[i * 12 + j] > 0.0);
            }
        }
    }

    #[test]
    fn variance_is_bounded() {
        let rows = lcg_rows(10, 2, 4);
        let y: Vec<f64> = rows.iter().map(|r| r[0] * r[1]).collect();
        let spec = KernelSpec::rational_quadratic(1.5, 1.0, 2.0, 0.2);
        let m = GprModel::fit(&matrix(&rows), &y, &spec, Target::KneeVelocity).unwrap();
        let mut q = rows.clone();
        q.push(vec![30.0, 30.0]);
        let p = m.predict(&matrix(&q), true).unwrap();
        let sd2 = m.target_sd() * m.target_sd();
        for v in &p.variance.unwrap()[..10] {
            assert!(*v >= 0.0 && *v <= (1.5 + 0.2) * sd2);
        }
    }

    #[test]
    fn residual_grows_with_noise() {
        // Training residual is s2 (K + s2 I)^-1 y, so its norm is monotone in s2.
        let rows = lcg_rows(10, 2, 77);
        let y: Vec<f64> = rows
            .iter()
            .map(|r| (2.0 * r[0]).sin() + 0.3 * r[1])
            .collect();
        let x = matrix(&rows);
        let grid = [1e-6, 1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.3, 1.0, 3.0];
        let residuals: Vec<f64> = grid
            .iter()
            .map(|&s2| {
                let spec = KernelSpec::rational_quadratic(1.0, 1.0, 1.0, s2);
                let m = GprModel::fit(&x, &y, &spec, Target::KneeAngle).unwrap();
                let p = m.predict_mean(&x).unwrap();
                p.iter()
                    .zip(&y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        for w in residuals.windows(2) {
            assert!(w[0] <= w[1] + 1e-12, "{residuals:?}");
        }
    }

    #[test]
    fn query_dimension_checked() {
        let m = GprModel::fit(
            &matrix(&[vec![0.0, 0.0], vec![1.0, 1.0]]),
            &[0.0, 1.0],
            &KernelSpec::rational_quadratic(1.0, 1.0, 1.0, 0.1),
            Target::KneeAngle,
        )
        .unwrap();
        assert!(matches!(
            m.predict_mean(&matrix(&[vec![0.0]])),
            Err(GprError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }
}
