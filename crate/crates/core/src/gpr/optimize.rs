use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kernel::{dot, sq_dist};
use super::{
    factor_with_jitter, log_marginal_likelihood, mean_sd, GprError, Kernel, KernelFamily,
    KernelSpec,
};
use crate::features::FeatureMatrix;

/// Box on every log-hyperparameter; points outside score `+inf`.
const LOG_PARAM_RANGE: (f64, f64) = (-14.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iterations: usize,
    /// Stop when `|f_worst - f_best| <= rel_tolerance * (|f_best| + 1e-12)`.
    pub rel_tolerance: f64,
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tolerance: 1e-6,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexMinimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Minimizes `f` with the standard reflect/expand/contract/shrink simplex
/// moves (coefficients 1, 2, 0.5, 0.5). Non-finite values count as `+inf`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> SimplexMinimum {
    let n = x0.len();
    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| {
        evaluations += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += opts.initial_step;
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p)).collect();

    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let (best, worst) = (values[0], values[n]);
        if best.is_finite() && (worst - best).abs() <= opts.rel_tolerance * (best.abs() + 1e-12) {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for p in &simplex[..n] {
            centroid
                .iter_mut()
                .zip(p)
                .for_each(|(c, v)| *c += v / n as f64);
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = along(1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = along(2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = along(0.5);
            let v = eval(&c);
            (c, v)
        } else {
            let c = along(-0.5);
            let v = eval(&c);
            (c, v)
        };
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        let best_point = simplex[0].clone();
        for i in 1..=n {
            simplex[i] = best_point
                .iter()
                .zip(&simplex[i])
                .map(|(b, p)| b + 0.5 * (p - b))
                .collect();
            values[i] = eval(&simplex[i]);
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    SimplexMinimum {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        evaluations,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperoptConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub seed: u64,
    /// First start; a data-driven guess is used when absent.
    pub initial: Option<KernelSpec>,
    /// Search on at most this many evenly spaced rows.
    pub max_rows: Option<usize>,
}

impl Default for HyperoptConfig {
    fn default() -> Self {
        Self {
            restarts: 3,
            max_iterations: 200,
            rel_tolerance: 1e-6,
            seed: 0,
            initial: None,
            max_rows: None,
        }
    }
}

/// Pairwise statistics over the search rows, packed lower-triangular
/// (diagonal included).
struct PairCache {
    n: usize,
    stats: Vec<f64>,
}

impl PairCache {
    fn build(family: KernelFamily, inputs: &[f64], dims: usize) -> Self {
        let n = inputs.len() / dims;
        let mut stats = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            let xi = &inputs[i * dims..(i + 1) * dims];
            for j in 0..=i {
                let xj = &inputs[j * dims..(j + 1) * dims];
                stats.push(match family {
                    KernelFamily::RationalQuadratic => sq_dist(xi, xj),
                    KernelFamily::PolynomialDegree2 => dot(xi, xj),
                });
            }
        }
        Self { n, stats }
    }

    fn gram(&self, kernel: &Kernel) -> Vec<f64> {
        let n = self.n;
        let mut k = vec![0.0; n * n];
        let mut idx = 0;
        for i in 0..n {
            for j in 0..=i {
                let s = self.stats[idx];
                idx += 1;
                let v = kernel.eval_pair_stats(s, s);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }

    fn diagonal_mean(&self) -> f64 {
        (0..self.n)
            .map(|i| self.stats[i * (i + 1) / 2 + i])
            .sum::<f64>()
            / self.n as f64
    }

    fn off_diagonal_median(&self) -> f64 {
        let mut v: Vec<f64> = (0..self.n)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| self.stats[i * (i + 1) / 2 + j])
            .collect();
        if v.is_empty() {
            return 1.0;
        }
        let mid = v.len() / 2;
        *v.select_nth_unstable_by(mid, f64::total_cmp).1
    }
}

/// Maximizes the log marginal likelihood of `targets` over log-hyperparameters
/// of `family` with seeded simplex restarts.
pub fn optimize_hyperparameters(
    inputs: &FeatureMatrix,
    targets: &[f64],
    family: KernelFamily,
    config: &HyperoptConfig,
) -> Result<KernelSpec, GprError> {
    let rows = inputs.samples();
    if rows < 5 {
        return Err(GprError::TooFewRows {
            needed: 5,
            got: rows,
        });
    }
    if targets.len() != rows {
        return Err(GprError::LengthMismatch {
            rows,
            targets: targets.len(),
        });
    }
    if targets.iter().any(|t| !t.is_finite()) {
        return Err(GprError::DegenerateTargets);
    }
    let keep: Vec<usize> = match config.max_rows {
        Some(m) if m >= 5 && rows > m => {
            let step = rows.div_ceil(m);
            (0..rows).step_by(step).collect()
        }
        _ => (0..rows).collect(),
    };
    let dims = inputs.dims();
    let mut sub = Vec::with_capacity(keep.len() * dims);
    for &r in &keep {
        sub.extend_from_slice(inputs.row(r));
    }
    let sub_targets: Vec<f64> = keep.iter().map(|&r| targets[r]).collect();
    let (mu, sd) = mean_sd(&sub_targets);
    let y: Vec<f64> = sub_targets.iter().map(|t| (t - mu) / sd).collect();
    let cache = PairCache::build(family, &sub, dims);

    let objective = |p: &[f64]| -> f64 {
        if p.iter()
            .any(|v| !(LOG_PARAM_RANGE.0..=LOG_PARAM_RANGE.1).contains(v))
        {
            return f64::INFINITY;
        }
        let Ok(spec) = KernelSpec::from_log_params(family, p) else {
            return f64::INFINITY;
        };
        match factor_with_jitter(cache.gram(&spec.kernel), cache.n, spec.noise_variance) {
            Ok((chol, _)) => {
                let w = chol.solve(&y);
                -log_marginal_likelihood(&chol, &y, &w)
            }
            Err(_) => f64::INFINITY,
        }
    };

    let guess = match family {
        KernelFamily::RationalQuadratic => KernelSpec::rational_quadratic(
            1.0,
            cache.off_diagonal_median().sqrt().max(1e-3),
            1.0,
            0.1,
        ),
        KernelFamily::PolynomialDegree2 => {
            KernelSpec::polynomial_degree2(1.0, cache.diagonal_mean().sqrt().max(1e-3), 0.1)
        }
    };
    let guess_log = guess.log_params();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let opts = NelderMeadOptions {
        max_iterations: config.max_iterations,
        rel_tolerance: config.rel_tolerance,
        initial_step: 1.0,
    };

    let mut best: Option<SimplexMinimum> = None;
    for r in 0..config.restarts.max(1) {
        let start = if r == 0 {
            config
                .initial
                .map_or_else(|| guess_log.clone(), |s| s.log_params())
        } else {
            guess_log
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + z
                })
                .collect()
        };
        if start.len() != family.param_count() {
            return Err(GprError::InvalidHyperparameter(
                "initial spec family differs from search family".into(),
            ));
        }
        let found = nelder_mead(objective, &start, &opts);
        if found.value.is_finite() && best.as_ref().is_none_or(|b| found.value < b.value) {
            best = Some(found);
        }
    }
    let best = best.ok_or(GprError::OptimizationFailed)?;
    KernelSpec::from_log_params(family, &best.x)
}
