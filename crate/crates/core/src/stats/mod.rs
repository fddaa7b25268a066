//! Repeated-measures two-way ANOVA and Bonferroni-corrected paired t-tests.

mod special;

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use thiserror::Error;

pub use special::{f_survival, ln_gamma, regularized_incomplete_beta, t_two_sided};

/// Bonferroni family size for all pairwise comparisons of a 2 x 2 design.
pub const DEFAULT_FAMILY_SIZE: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("incomplete design: {0}")]
    IncompleteDesign(String),
    #[error("unknown condition ({0}, {1})")]
    UnknownCondition(String, String),
    #[error("malformed row {row}: {message}")]
    MalformedRow { row: usize, message: String },
}

/// Fully crossed within-subject design with one value per
/// (subject, level of A, level of B) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RmDesign {
    pub subjects: Vec<String>,
    pub a_levels: Vec<String>,
    pub b_levels: Vec<String>,
    /// `values[s][i][j]` for subject `s`, A level `i`, B level `j`.
    pub values: Vec<Vec<Vec<f64>>>,
}

impl RmDesign {
    pub fn new(
        subjects: Vec<String>,
        a_levels: Vec<String>,
        b_levels: Vec<String>,
        values: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self, StatsError> {
        let d = Self {
            subjects,
            a_levels,
            b_levels,
            values,
        };
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<(), StatsError> {
        let (s, a, b) = (
            self.subjects.len(),
            self.a_levels.len(),
            self.b_levels.len(),
        );
        if s < 2 || a < 2 || b < 2 {
            return Err(StatsError::IncompleteDesign(format!(
                "need at least 2 subjects and 2 levels per factor, got {s} x {a} x {b}"
            )));
        }
        let shape_ok = self.values.len() == s
            && self
                .values
                .iter()
                .all(|sv| sv.len() == a && sv.iter().all(|row| row.len() == b));
        if !shape_ok {
            return Err(StatsError::IncompleteDesign(
                "value array does not match level counts".into(),
            ));
        }
        if self
            .values
            .iter()
            .flatten()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(StatsError::IncompleteDesign("non-finite cell value".into()));
        }
        Ok(())
    }

    fn cell(&self, s: usize, i: usize, j: usize) -> f64 {
        self.values[s][i][j]
    }

    /// Builds a design from long-format records; every subject must have
    /// every (a, b) cell exactly once. Levels keep first-seen order.
    pub fn from_records<I, S>(records: I) -> Result<Self, StatsError>
    where
        I: IntoIterator<Item = (S, S, S, f64)>,
        S: Into<String>,
    {
        let mut subjects: Vec<String> = Vec::new();
        let mut a_levels: Vec<String> = Vec::new();
        let mut b_levels: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
        let index = |list: &mut Vec<String>, key: String| match list.iter().position(|x| *x == key)
        {
            Some(p) => p,
            None => {
                list.push(key);
                list.len() - 1
            }
        };
        for (subject, a, b, v) in records {
            let key = (
                index(&mut subjects, subject.into()),
                index(&mut a_levels, a.into()),
                index(&mut b_levels, b.into()),
            );
            if cells.insert(key, v).is_some() {
                return Err(StatsError::IncompleteDesign(format!(
                    "duplicate cell ({}, {}, {})",
                    subjects[key.0], a_levels[key.1], b_levels[key.2]
                )));
            }
        }
        let mut values = vec![vec![vec![f64::NAN; b_levels.len()]; a_levels.len()]; subjects.len()];
        for s in 0..subjects.len() {
            for i in 0..a_levels.len() {
                for j in 0..b_levels.len() {
                    values[s][i][j] = *cells.get(&(s, i, j)).ok_or_else(|| {
                        StatsError::IncompleteDesign(format!(
                            "missing cell ({}, {}, {})",
                            subjects[s], a_levels[i], b_levels[j]
                        ))
                    })?;
                }
            }
        }
        Self::new(subjects, a_levels, b_levels, values)
    }

    /// Reads CSV with header `subject,paradigm,feature_set,value`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, StatsError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| StatsError::MalformedRow {
                row: 0,
                message: e.to_string(),
            })?
            .clone();
        let want = ["subject", "paradigm", "feature_set", "value"];
        if header.iter().collect::<Vec<_>>() != want {
            return Err(StatsError::MalformedRow {
                row: 0,
                message: format!("expected header {}", want.join(",")),
            });
        }
        let mut records = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| StatsError::MalformedRow {
                row,
                message: e.to_string(),
            })?;
            let value: f64 = rec[3].parse().map_err(|_| StatsError::MalformedRow {
                row,
                message: format!("bad value {:?}", &rec[3]),
            })?;
            records.push((
                rec[0].to_string(),
                rec[1].to_string(),
                rec[2].to_string(),
                value,
            ));
        }
        Self::from_records(records)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "subject,paradigm,feature_set,value")?;
        for (s, name) in self.subjects.iter().enumerate() {
            for (i, a) in self.a_levels.iter().enumerate() {
                for (j, b) in self.b_levels.iter().enumerate() {
                    writeln!(w, "{name},{a},{b},{}", self.cell(s, i, j))?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Effect {
    A,
    B,
    Interaction,
}

impl Effect {
    pub fn as_str(self) -> &'static str {
        match self {
            Effect::A => "paradigm",
            Effect::B => "feature_set",
            Effect::Interaction => "paradigm:feature_set",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectRow {
    pub effect: Effect,
    pub ss: f64,
    pub dof: usize,
    pub error_ss: f64,
    pub error_dof: usize,
    pub f: f64,
    pub p: f64,
    /// The error mean square was zero; `p` is reported as 0.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnovaTable {
    pub rows: [EffectRow; 3],
    pub ss_subjects: f64,
    pub dof_subjects: usize,
    pub ss_total: f64,
}

impl AnovaTable {
    pub fn effect(&self, e: Effect) -> &EffectRow {
        &self.rows[e as usize]
    }

    /// CSV with header `effect,ss,dof,F,p`; error strata follow the effects
    /// with empty F and p.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "effect,ss,dof,F,p")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.effect.as_str(),
                r.ss,
                r.dof,
                r.f,
                r.p
            )?;
        }
        for r in &self.rows {
            writeln!(
                w,
                "error({}),{},{},,",
                r.effect.as_str(),
                r.error_ss,
                r.error_dof
            )?;
        }
        writeln!(w, "subject,{},{},,", self.ss_subjects, self.dof_subjects)
    }
}

/// Univariate within-subject partitioning; each effect is tested against its
/// own subject interaction.
#[allow(clippy::needless_range_loop)]
pub fn rm_two_way_anova(design: &RmDesign) -> Result<AnovaTable, StatsError> {
    design.check()?;
    let (ns, na, nb) = (
        design.subjects.len(),
        design.a_levels.len(),
        design.b_levels.len(),
    );
    let (fs, fa, fb) = (ns as f64, na as f64, nb as f64);
    let y = |s, i, j| design.cell(s, i, j);

    let grand = design.values.iter().flatten().flatten().sum::<f64>() / (fs * fa * fb);
    let mean_a: Vec<f64> = (0..na)
        .map(|i| {
            (0..ns)
                .flat_map(|s| (0..nb).map(move |j| (s, j)))
                .map(|(s, j)| y(s, i, j))
                .sum::<f64>()
                / (fs * fb)
        })
        .collect();
    let mean_b: Vec<f64> = (0..nb)
        .map(|j| {
            (0..ns)
                .flat_map(|s| (0..na).map(move |i| (s, i)))
                .map(|(s, i)| y(s, i, j))
                .sum::<f64>()
                / (fs * fa)
        })
        .collect();
    let mean_s: Vec<f64> = (0..ns)
        .map(|s| design.values[s].iter().flatten().sum::<f64>() / (fa * fb))
        .collect();
    let mean_ab = |i: usize, j: usize| (0..ns).map(|s| y(s, i, j)).sum::<f64>() / fs;
    let mean_as = |s: usize, i: usize| (0..nb).map(|j| y(s, i, j)).sum::<f64>() / fb;
    let mean_bs = |s: usize, j: usize| (0..na).map(|i| y(s, i, j)).sum::<f64>() / fa;

    let sq = |v: f64| v * v;
    let ss_a = fs * fb * mean_a.iter().map(|m| sq(m - grand)).sum::<f64>();
    let ss_b = fs * fa * mean_b.iter().map(|m| sq(m - grand)).sum::<f64>();
    let ss_s = fa * fb * mean_s.iter().map(|m| sq(m - grand)).sum::<f64>();
    let mut ss_ab = 0.0;
    for i in 0..na {
        for j in 0..nb {
            ss_ab += sq(mean_ab(i, j) - mean_a[i] - mean_b[j] + grand);
        }
    }
    ss_ab *= fs;
    let mut ss_as = 0.0;
    let mut ss_bs = 0.0;
    let mut ss_abs = 0.0;
    let mut ss_total = 0.0;
    for s in 0..ns {
        for i in 0..na {
            ss_as += sq(mean_as(s, i) - mean_a[i] - mean_s[s] + grand);
        }
        for j in 0..nb {
            ss_bs += sq(mean_bs(s, j) - mean_b[j] - mean_s[s] + grand);
        }
        for i in 0..na {
            for j in 0..nb {
                let r = y(s, i, j) - mean_ab(i, j) - mean_as(s, i) - mean_bs(s, j)
                    + mean_a[i]
                    + mean_b[j]
                    + mean_s[s]
                    - grand;
                ss_abs += sq(r);
                ss_total += sq(y(s, i, j) - grand);
            }
        }
    }
    ss_as *= fb;
    ss_bs *= fa;

    // Error strata below this fraction of the total are treated as zero.
    let zero_floor = 1e-24
        * design
            .values
            .iter()
            .flatten()
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .max(1.0);
    let row = |effect, ss: f64, dof: usize, error_ss: f64, error_dof: usize| {
        let degenerate = error_ss <= zero_floor;
        let (f, p) = if degenerate {
            let f = if ss <= zero_floor {
                f64::NAN
            } else {
                f64::INFINITY
            };
            (f, 0.0)
        } else {
            let f = (ss / dof as f64) / (error_ss / error_dof as f64);
            (f, f_survival(f, dof as f64, error_dof as f64))
        };
        EffectRow {
            effect,
            ss,
            dof,
            error_ss,
            error_dof,
            f,
            p,
            degenerate,
        }
    };
    let (da, db, dsub) = (na - 1, nb - 1, ns - 1);
    Ok(AnovaTable {
        rows: [
            row(Effect::A, ss_a, da, ss_as, da * dsub),
            row(Effect::B, ss_b, db, ss_bs, db * dsub),
            row(Effect::Interaction, ss_ab, da * db, ss_abs, da * db * dsub),
        ],
        ss_subjects: ss_s,
        dof_subjects: dsub,
        ss_total,
    })
}

/// Significance marker on the adjusted p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    None,
    /// p < 0.05
    A,
    /// p < 0.01
    B,
}

impl Tier {
    pub fn from_p(p: f64) -> Self {
        if p < 0.01 {
            Tier::B
        } else if p < 0.05 {
            Tier::A
        } else {
            Tier::None
        }
    }

    pub fn marker(self) -> &'static str {
        match self {
            Tier::None => "",
            Tier::A => "a",
            Tier::B => "b",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::None => "none",
            other => other.marker(),
        })
    }
}

/// A condition is one (A level, B level) cell, by index.
pub type Condition = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct PosthocResult {
    pub first: Condition,
    pub second: Condition,
    pub label: String,
    pub t: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub tier: Tier,
    /// Every subject had the same nonzero difference.
    pub zero_variance: bool,
}

/// All unordered pairs of cells, row-major over (A, B).
pub fn all_condition_pairs(design: &RmDesign) -> Vec<(Condition, Condition)> {
    let cells: Vec<Condition> = (0..design.a_levels.len())
        .flat_map(|i| (0..design.b_levels.len()).map(move |j| (i, j)))
        .collect();
    let mut out = Vec::new();
    for x in 0..cells.len() {
        for y in x + 1..cells.len() {
            out.push((cells[x], cells[y]));
        }
    }
    out
}

/// Paired t-tests across subjects, Bonferroni-adjusted with family size
/// `family_size` (the pair count when `None`).
pub fn bonferroni_posthoc(
    design: &RmDesign,
    pairs: &[(Condition, Condition)],
    family_size: Option<usize>,
) -> Result<Vec<PosthocResult>, StatsError> {
    design.check()?;
    let m = family_size.unwrap_or(pairs.len()).max(1) as f64;
    let n = design.subjects.len();
    let name = |c: Condition| format!("{}/{}", design.a_levels[c.0], design.b_levels[c.1]);
    let mut out = Vec::with_capacity(pairs.len());
    for &(c1, c2) in pairs {
        for c in [c1, c2] {
            if c.0 >= design.a_levels.len() || c.1 >= design.b_levels.len() {
                return Err(StatsError::UnknownCondition(
                    c.0.to_string(),
                    c.1.to_string(),
                ));
            }
        }
        let d: Vec<f64> = (0..n)
            .map(|s| design.cell(s, c1.0, c1.1) - design.cell(s, c2.0, c2.1))
            .collect();
        let mean = d.iter().sum::<f64>() / n as f64;
        let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let scale = d.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let (t, p_raw, zero_variance) = if scale == 0.0 {
            (0.0, 1.0, false)
        } else if var.sqrt() <= 1e-12 * scale {
            (f64::INFINITY.copysign(mean), 0.0, true)
        } else {
            let t = mean / (var.sqrt() / (n as f64).sqrt());
            (t, t_two_sided(t, (n - 1) as f64), false)
        };
        let p_adjusted = (m * p_raw).min(1.0);
        out.push(PosthocResult {
            first: c1,
            second: c2,
            label: format!("{} vs {}", name(c1), name(c2)),
            t,
            p_raw,
            p_adjusted,
            tier: Tier::from_p(p_adjusted),
            zero_variance,
        });
    }
    Ok(out)
}

/// CSV with header `pair,t,p_raw,p_adj,tier`.
pub fn write_posthoc_csv<W: Write>(mut w: W, results: &[PosthocResult]) -> std::io::Result<()> {
    writeln!(w, "pair,t,p_raw,p_adj,tier")?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.label, r.t, r.p_raw, r.p_adjusted, r.tier
        )?;
    }
    Ok(())
}
