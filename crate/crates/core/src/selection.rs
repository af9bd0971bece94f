//! Epsilon-lexicase parent selection over a matrix of per-case errors.
//!
//! A selection starts with the whole population in the pool and visits the
//! cases in a random order without replacement. On each case the pool keeps
//! only the members that satisfy the strategy's criterion; selection stops
//! when one member is left or the cases run out, in which case a pool member
//! is returned uniformly at random.
//!
//! | strategy           | survives case `t` when                                   |
//! |--------------------|----------------------------------------------------------|
//! | `MadStatic`        | `e <= min(population) + mad(population)`                 |
//! | `MadSemiDynamic`   | `e <= min(pool) + mad(population)`                       |
//! | `MadDynamic`       | `e <= min(pool) + mad(pool)`                             |
//! | `MvtStatic`        | `e < tau*(population)`                                   |
//! | `MvtDynamic`       | `e < tau*(pool)`                                         |
//!
//! `tau*` is the minimum variance threshold: the cut between consecutive
//! distinct sorted errors minimising `Var(l)/|l| + Var(r)/|r|` with
//! population variances, `l = {e < tau}` and `r = {e >= tau}`. When all values
//! are equal there is no cut and every pool member survives.
//!
//! The static criteria are computed once per error matrix. When a static
//! criterion would eliminate the whole pool the case does not discriminate
//! and the pool is left unchanged.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::Serialize;
use thiserror::Error;

use crate::par::{self, Execution};
use crate::rng::{self, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("error matrix needs at least one individual and one case")]
    Empty,
    #[error("ragged error matrix: row {row} has {got} cases, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
    #[error("error matrix entry ({row}, {case}) is negative or non-finite: {value}")]
    BadEntry { row: usize, case: usize, value: f64 },
    #[error("unknown selection strategy `{0}`")]
    UnknownStrategy(String),
}

/// Non-negative finite errors, `N` individuals by `T` cases, stored by case.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrix {
    n: usize,
    t: usize,
    by_case: Vec<f64>,
}

impl ErrorMatrix {
    /// One row per individual, one column per case.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, SelectionError> {
        let n = rows.len();
        let t = rows.first().map_or(0, |r| r.as_ref().len());
        if n == 0 || t == 0 {
            return Err(SelectionError::Empty);
        }
        let mut by_case = vec![0.0; n * t];
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != t {
                return Err(SelectionError::Ragged {
                    row: i,
                    got: row.len(),
                    expected: t,
                });
            }
            for (c, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(SelectionError::BadEntry {
                        row: i,
                        case: c,
                        value: v,
                    });
                }
                by_case[c * n + i] = v;
            }
        }
        Ok(Self { n, t, by_case })
    }

    pub fn n_individuals(&self) -> usize {
        self.n
    }

    pub fn n_cases(&self) -> usize {
        self.t
    }

    pub fn get(&self, individual: usize, case: usize) -> f64 {
        self.by_case[case * self.n + individual]
    }

    /// Errors of every individual on `case`.
    pub fn column(&self, case: usize) -> &[f64] {
        &self.by_case[case * self.n..(case + 1) * self.n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SelectionStrategy {
    MadStatic,
    MadSemiDynamic,
    MadDynamic,
    /// S-Split.
    MvtStatic,
    /// D-Split.
    MvtDynamic,
}

impl SelectionStrategy {
    pub const ALL: [SelectionStrategy; 5] = [
        SelectionStrategy::MadStatic,
        SelectionStrategy::MadSemiDynamic,
        SelectionStrategy::MadDynamic,
        SelectionStrategy::MvtStatic,
        SelectionStrategy::MvtDynamic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionStrategy::MadStatic => "mad-static",
            SelectionStrategy::MadSemiDynamic => "mad-semi-dynamic",
            SelectionStrategy::MadDynamic => "mad-dynamic",
            SelectionStrategy::MvtStatic => "mvt-static",
            SelectionStrategy::MvtDynamic => "mvt-dynamic",
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionStrategy {
    type Err = SelectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match key.as_str() {
            "mad-static" | "static" => SelectionStrategy::MadStatic,
            "mad-semi-dynamic" | "semi-dynamic" | "e-lex" | "epsilon-lexicase" => SelectionStrategy::MadSemiDynamic,
            "mad-dynamic" | "dynamic" => SelectionStrategy::MadDynamic,
            "mvt-static" | "s-split" => SelectionStrategy::MvtStatic,
            "mvt-dynamic" | "d-split" => SelectionStrategy::MvtDynamic,
            _ => return Err(SelectionError::UnknownStrategy(s.to_string())),
        })
    }
}

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median; the mean of the two central order statistics for even lengths.
/// Returns 0 for an empty slice.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    median_sorted(&s)
}

/// Median absolute deviation, `median(|v - median(v)|)`. Returns 0 for an
/// empty slice.
pub fn mad(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = median(v);
    let dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
    median(&dev)
}

/// A minimum variance cut of a set of errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvtSplit {
    pub threshold: f64,
    pub objective: f64,
    /// Number of values strictly below the threshold.
    pub left_len: usize,
}

/// Objectives closer than this fraction of the total variance are ties.
const MVT_TIE_REL: f64 = 1e-12;

/// Searches the midpoints between consecutive distinct sorted values for the
/// cut minimising `Var(l)/|l| + Var(r)/|r|`; ties go to the smallest
/// threshold. `None` when fewer than two distinct values exist.
pub fn mvt_split(v: &[f64]) -> Option<MvtSplit> {
    let n = v.len();
    if n < 2 {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    if s[0] == s[n - 1] {
        return None;
    }
    // prefix sums of values centred on the mean
    let mu = s.iter().sum::<f64>() / n as f64;
    let mut pre = Vec::with_capacity(n + 1);
    let mut pre_sq = Vec::with_capacity(n + 1);
    let (mut acc, mut acc_sq) = (0.0, 0.0);
    pre.push(0.0);
    pre_sq.push(0.0);
    for &x in &s {
        let c = x - mu;
        acc += c;
        acc_sq += c * c;
        pre.push(acc);
        pre_sq.push(acc_sq);
    }
    let total_var = acc_sq / n as f64;
    let var_over_len = |sum: f64, sum_sq: f64, len: usize| {
        let k = len as f64;
        let mean = sum / k;
        ((sum_sq / k) - mean * mean).max(0.0) / k
    };
    let mut candidates = Vec::new();
    for k in 1..n {
        if s[k - 1] < s[k] {
            let left = var_over_len(pre[k], pre_sq[k], k);
            let right = var_over_len(acc - pre[k], acc_sq - pre_sq[k], n - k);
            candidates.push((k, left + right));
        }
    }
    let best = candidates.iter().map(|&(_, o)| o).fold(f64::INFINITY, f64::min);
    let tol = MVT_TIE_REL * total_var;
    let &(k, objective) = candidates.iter().find(|&&(_, o)| o <= best + tol)?;
    Some(MvtSplit {
        threshold: 0.5 * (s[k - 1] + s[k]),
        objective,
        left_len: k,
    })
}

/// The minimum variance threshold `tau*`, or `None` when all values are equal.
pub fn mvt_threshold(v: &[f64]) -> Option<f64> {
    mvt_split(v).map(|s| s.threshold)
}

/// Cases consumed by each selection event.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SelectionStats {
    pub cases_used: Vec<usize>,
    /// Pool size after each case step, when tracing was requested.
    pub pool_trajectory: Option<Vec<usize>>,
}

impl SelectionStats {
    pub fn record(&mut self, cases: usize) {
        self.cases_used.push(cases);
    }

    pub fn median_cases_used(&self) -> f64 {
        let v: Vec<f64> = self.cases_used.iter().map(|&c| c as f64).collect();
        median(&v)
    }

    pub fn mean_cases_used(&self) -> f64 {
        if self.cases_used.is_empty() {
            return 0.0;
        }
        self.cases_used.iter().sum::<usize>() as f64 / self.cases_used.len() as f64
    }

    pub fn max_cases_used(&self) -> usize {
        self.cases_used.iter().copied().max().unwrap_or(0)
    }
}

/// Outcome of one selection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub index: usize,
    pub cases_used: usize,
}

/// One case step of a traced selection.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub case: usize,
    pub pool_before: Vec<usize>,
    pub pool_after: Vec<usize>,
}

/// Precomputed per-matrix state for repeated selections.
#[derive(Debug, Clone)]
pub struct LexicaseSelector<'a> {
    errors: &'a ErrorMatrix,
    strategy: SelectionStrategy,
    /// `MadStatic`: pass flags, stored by case.
    pass_mask: Vec<bool>,
    /// `MadSemiDynamic`: population MAD per case.
    population_mad: Vec<f64>,
    /// `MvtStatic`: population threshold per case.
    population_tau: Vec<Option<f64>>,
}

impl<'a> LexicaseSelector<'a> {
    pub fn new(errors: &'a ErrorMatrix, strategy: SelectionStrategy) -> Self {
        Self::with_execution(errors, strategy, Execution::default())
    }

    pub fn with_execution(errors: &'a ErrorMatrix, strategy: SelectionStrategy, exec: Execution) -> Self {
        let t = errors.n_cases();
        let mut sel = Self {
            errors,
            strategy,
            pass_mask: Vec::new(),
            population_mad: Vec::new(),
            population_tau: Vec::new(),
        };
        match strategy {
            SelectionStrategy::MadStatic => {
                let per_case = par::map_range(exec, t, |c| {
                    let col = errors.column(c);
                    let elite = col.iter().copied().fold(f64::INFINITY, f64::min);
                    let limit = elite + mad(col);
                    col.iter().map(|&e| e <= limit).collect::<Vec<bool>>()
                });
                sel.pass_mask = per_case.concat();
            }
            SelectionStrategy::MadSemiDynamic => {
                sel.population_mad = par::map_range(exec, t, |c| mad(errors.column(c)));
            }
            SelectionStrategy::MvtStatic => {
                sel.population_tau = par::map_range(exec, t, |c| mvt_threshold(errors.column(c)));
            }
            SelectionStrategy::MadDynamic | SelectionStrategy::MvtDynamic => {}
        }
        sel
    }

    pub fn strategy(&self) -> SelectionStrategy {
        self.strategy
    }

    /// Pool members surviving `case`. May be empty only for static criteria.
    fn survivors(&self, pool: &[usize], case: usize) -> Vec<usize> {
        let col = self.errors.column(case);
        let n = self.errors.n_individuals();
        let pool_min = || pool.iter().map(|&i| col[i]).fold(f64::INFINITY, f64::min);
        let pool_values = || pool.iter().map(|&i| col[i]).collect::<Vec<f64>>();
        let keep_le = |limit: f64| pool.iter().copied().filter(|&i| col[i] <= limit).collect();
        let keep_lt = |tau: Option<f64>| match tau {
            Some(tau) => pool.iter().copied().filter(|&i| col[i] < tau).collect(),
            None => pool.to_vec(),
        };
        match self.strategy {
            SelectionStrategy::MadStatic => {
                let mask = &self.pass_mask[case * n..(case + 1) * n];
                pool.iter().copied().filter(|&i| mask[i]).collect()
            }
            SelectionStrategy::MadSemiDynamic => keep_le(pool_min() + self.population_mad[case]),
            SelectionStrategy::MadDynamic => keep_le(pool_min() + mad(&pool_values())),
            SelectionStrategy::MvtStatic => keep_lt(self.population_tau[case]),
            SelectionStrategy::MvtDynamic => keep_lt(mvt_threshold(&pool_values())),
        }
    }

    fn run(&self, rng: &mut Rng, mut trace: Option<&mut Vec<TraceStep>>) -> Selection {
        let n = self.errors.n_individuals();
        let t = self.errors.n_cases();
        let mut pool: Vec<usize> = (0..n).collect();
        let mut order: Vec<usize> = (0..t).collect();
        let mut used = 0;
        while pool.len() > 1 && used < t {
            // incremental Fisher-Yates: the visited prefix is a uniform
            // random permutation prefix
            let j = rng.random_range(used..t);
            order.swap(used, j);
            let case = order[used];
            used += 1;
            let survivors = self.survivors(&pool, case);
            let next = if survivors.is_empty() { pool.clone() } else { survivors };
            if let Some(steps) = trace.as_deref_mut() {
                steps.push(TraceStep {
                    case,
                    pool_before: pool.clone(),
                    pool_after: next.clone(),
                });
            }
            pool = next;
        }
        let index = if pool.len() == 1 {
            pool[0]
        } else {
            pool[rng.random_range(0..pool.len())]
        };
        Selection {
            index,
            cases_used: used,
        }
    }

    pub fn select(&self, rng: &mut Rng) -> Selection {
        self.run(rng, None)
    }

    /// Like [`LexicaseSelector::select`], also returning every case step.
    /// Consumes the generator identically.
    pub fn select_traced(&self, rng: &mut Rng) -> (Selection, Vec<TraceStep>) {
        let mut steps = Vec::new();
        let s = self.run(rng, Some(&mut steps));
        (s, steps)
    }
}

/// Selects one parent, recording the cases it consumed in `stats`.
pub fn select_parent(
    errors: &ErrorMatrix,
    strategy: SelectionStrategy,
    rng: &mut Rng,
    stats: &mut SelectionStats,
) -> usize {
    let s = LexicaseSelector::with_execution(errors, strategy, Execution::Sequential).select(rng);
    stats.record(s.cases_used);
    s.index
}

/// Selects `count` parents. Slot `i` draws from its own stream derived from
/// one key taken from `rng`, so the result does not depend on scheduling.
pub fn select_parents(
    errors: &ErrorMatrix,
    count: usize,
    strategy: SelectionStrategy,
    rng: &mut Rng,
) -> (Vec<usize>, SelectionStats) {
    select_parents_with(errors, count, strategy, rng, Execution::default())
}

pub fn select_parents_with(
    errors: &ErrorMatrix,
    count: usize,
    strategy: SelectionStrategy,
    rng: &mut Rng,
    exec: Execution,
) -> (Vec<usize>, SelectionStats) {
    if count == 0 {
        return (Vec::new(), SelectionStats::default());
    }
    let key = rng::stream_key(rng);
    let selector = LexicaseSelector::with_execution(errors, strategy, exec);
    let picks = par::map_range(exec, count, |slot| selector.select(&mut rng::slot_stream(key, slot)));
    let stats = SelectionStats {
        cases_used: picks.iter().map(|s| s.cases_used).collect(),
        pool_trajectory: None,
    };
    (picks.into_iter().map(|s| s.index).collect(), stats)
}
