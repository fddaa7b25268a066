use std::fmt;
use std::str::FromStr;

use super::GprError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    RationalQuadratic,
    PolynomialDegree2,
}

impl KernelFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelFamily::RationalQuadratic => "rational_quadratic",
            KernelFamily::PolynomialDegree2 => "polynomial_degree2",
        }
    }

    /// Number of log-space parameters including the noise variance.
    pub fn param_count(self) -> usize {
        match self {
            KernelFamily::RationalQuadratic => 4,
            KernelFamily::PolynomialDegree2 => 3,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            KernelFamily::RationalQuadratic => 0,
            KernelFamily::PolynomialDegree2 => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(KernelFamily::RationalQuadratic),
            1 => Some(KernelFamily::PolynomialDegree2),
            _ => None,
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KernelFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rational_quadratic" => Ok(KernelFamily::RationalQuadratic),
            "polynomial_degree2" => Ok(KernelFamily::PolynomialDegree2),
            other => Err(format!("unknown kernel family {other:?}")),
        }
    }
}

/// Covariance function without the noise term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `sf2 * (1 + r^2 / (2 alpha l^2))^(-alpha)`
    RationalQuadratic {
        signal_variance: f64,
        length_scale: f64,
        shape: f64,
    },
    /// `(s0^2 + x.x' / l^2)^2`
    PolynomialDegree2 { bias: f64, scale: f64 },
}

impl Kernel {
    pub fn family(&self) -> KernelFamily {
        match self {
            Kernel::RationalQuadratic { .. } => KernelFamily::RationalQuadratic,
            Kernel::PolynomialDegree2 { .. } => KernelFamily::PolynomialDegree2,
        }
    }

    /// Kernel value from the pair's squared distance and dot product; only
    /// the one the family uses is read.
    #[inline]
    pub(crate) fn eval_pair_stats(&self, sq_dist: f64, dot: f64) -> f64 {
        match *self {
            Kernel::RationalQuadratic {
                signal_variance,
                length_scale,
                shape,
            } => {
                signal_variance
                    * (1.0 + sq_dist / (2.0 * shape * length_scale * length_scale)).powf(-shape)
            }
            Kernel::PolynomialDegree2 { bias, scale } => {
                let b = bias + dot / (scale * scale);
                b * b
            }
        }
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        match self {
            Kernel::RationalQuadratic { .. } => self.eval_pair_stats(sq_dist(x, x2), 0.0),
            Kernel::PolynomialDegree2 { .. } => self.eval_pair_stats(0.0, dot(x, x2)),
        }
    }

    /// Prior variance at a point, `k(x, x)`.
    pub(crate) fn diag(&self, x: &[f64]) -> f64 {
        self.eval_unchecked(x, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kernel: Kernel,
    pub noise_variance: f64,
}

impl KernelSpec {
    pub fn rational_quadratic(
        signal_variance: f64,
        length_scale: f64,
        shape: f64,
        noise_variance: f64,
    ) -> Self {
        Self {
            kernel: Kernel::RationalQuadratic {
                signal_variance,
                length_scale,
                shape,
            },
            noise_variance,
        }
    }

    pub fn polynomial_degree2(bias: f64, scale: f64, noise_variance: f64) -> Self {
        Self {
            kernel: Kernel::PolynomialDegree2 { bias, scale },
            noise_variance,
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.kernel.family()
    }

    pub fn validate(&self) -> Result<(), GprError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        let valid = match self.kernel {
            Kernel::RationalQuadratic {
                signal_variance,
                length_scale,
                shape,
            } => ok(signal_variance) && ok(length_scale) && ok(shape),
            Kernel::PolynomialDegree2 { bias, scale } => nonneg(bias) && ok(scale),
        };
        if valid && nonneg(self.noise_variance) {
            Ok(())
        } else {
            Err(GprError::InvalidHyperparameter(format!("{self:?}")))
        }
    }

    /// Natural logs of the kernel parameters followed by the noise variance.
    pub fn log_params(&self) -> Vec<f64> {
        let ln = |v: f64| v.max(f64::MIN_POSITIVE).ln();
        let mut p = match self.kernel {
            Kernel::RationalQuadratic {
                signal_variance,
                length_scale,
                shape,
            } => vec![ln(signal_variance), ln(length_scale), ln(shape)],
            Kernel::PolynomialDegree2 { bias, scale } => vec![ln(bias), ln(scale)],
        };
        p.push(ln(self.noise_variance));
        p
    }

    pub fn from_log_params(family: KernelFamily, p: &[f64]) -> Result<Self, GprError> {
        if p.len() != family.param_count() {
            return Err(GprError::InvalidHyperparameter(format!(
                "{} log-parameters for {family}",
                p.len()
            )));
        }
        let e: Vec<f64> = p.iter().map(|v| v.exp()).collect();
        let spec = match family {
            KernelFamily::RationalQuadratic => {
                KernelSpec::rational_quadratic(e[0], e[1], e[2], e[3])
            }
            KernelFamily::PolynomialDegree2 => KernelSpec::polynomial_degree2(e[0], e[1], e[2]),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Kernel value for two equal-length vectors. The noise variance is not
/// added.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], x2: &[f64]) -> Result<f64, GprError> {
    if x.len() != x2.len() {
        return Err(GprError::DimensionMismatch {
            expected: x.len(),
            got: x2.len(),
        });
    }
    Ok(spec.kernel.eval_unchecked(x, x2))
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
