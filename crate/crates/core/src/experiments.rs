//! Monte Carlo studies of the small-noise behaviour: contraction of
//! `U^eps - U^0`, the Gaussian fluctuation limit, moderate-deviation tails
//! with Girsanov importance sampling, and grid refinement.
//!
//! Path `k` at every ladder point is driven by the realization of
//! `SeedSpec { master_seed, path_index: k }`, so the ladder shares noise
//! (common random numbers) and every field needing noise at that index sees
//! the same increments. Paths run in parallel; per-path results are
//! collected by index and reduced in index order with compensated sums, so
//! output does not depend on the worker count.

mod fluctuation;
mod mdp;
mod refinement;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use fluctuation::{clt_study, contraction_study};
pub use mdp::{mdp_tail_study, MdpOptions};
pub use refinement::{grid_refinement_study, heat_convergence_orders};

use crate::coefficients::{check_assumptions, AssumptionPlan, CoefficientSet};
use crate::error::{Error, Result};
use crate::grid::{l2_norm_unchecked, GridSpec, SpaceField};
use crate::solvers::{DeviationScale, SimParams};
use crate::stats::{LogLogFit, MeanEstimate, Z95};

pub const CSV_HEADER: &str = "study,epsilon,statistic,value,std_error,ci_low,ci_high,n_paths";

#[derive(Debug, Clone)]
pub struct StudyConfig {
    /// Strictly decreasing noise intensities.
    pub epsilon_ladder: Vec<f64>,
    pub paths_per_epsilon: usize,
    pub deviation_scale: DeviationScale,
    /// Tail event radius `delta` for `sup_t ||X||_2 >= delta`.
    pub event_threshold: f64,
    pub master_seed: u64,
    pub grid: GridSpec,
    pub coefficients: CoefficientSet,
    pub initial: SpaceField,
    /// `None` means `10 (1 + ||eta||_2)`.
    pub amplitude_cap: Option<f64>,
    /// Worker count; `None` uses every core.
    pub threads: Option<usize>,
    pub refinement_factors: Vec<usize>,
}

impl StudyConfig {
    /// Defaults: ladder `{1e-2, 1e-3, 1e-4}`, 64 paths, `lambda = eps^(-1/4)`,
    /// `eta = sin(pi x)`, `delta = 0.2`, seed 0, factors `{2, 4}`.
    pub fn new(coefficients: CoefficientSet, grid: GridSpec) -> Self {
        Self {
            epsilon_ladder: vec![1e-2, 1e-3, 1e-4],
            paths_per_epsilon: 64,
            deviation_scale: DeviationScale::default(),
            event_threshold: 0.2,
            master_seed: 0,
            initial: SpaceField::from_fn(&grid, |x| (std::f64::consts::PI * x).sin()),
            grid,
            coefficients,
            amplitude_cap: None,
            threads: None,
            refinement_factors: vec![2, 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.epsilon_ladder;
        if l.is_empty() || l.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::config("epsilon_ladder", "needs positive finite values"));
        }
        if l.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("epsilon_ladder", "must be strictly decreasing"));
        }
        if self.paths_per_epsilon == 0 {
            return Err(Error::config("paths_per_epsilon", "must be at least 1"));
        }
        if !(self.event_threshold.is_finite() && self.event_threshold > 0.0) {
            return Err(Error::config("event_threshold", "must be positive"));
        }
        if let Some(m) = self.amplitude_cap {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::config("amplitude_cap", "must be positive"));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be at least 1"));
        }
        if self.refinement_factors.iter().any(|f| *f < 2 || !f.is_power_of_two()) {
            return Err(Error::config("refinement_factors", "each factor must be a power of two >= 2"));
        }
        self.base_params()?.validate()
    }

    pub fn cap(&self) -> f64 {
        self.amplitude_cap
            .unwrap_or_else(|| 10.0 * (1.0 + l2_norm_unchecked(self.initial.values(), self.grid.dx())))
    }

    pub fn base_params(&self) -> Result<SimParams> {
        Ok(SimParams::new(self.coefficients.clone(), self.initial.clone(), self.grid)?
            .with_scale(self.deviation_scale.clone())
            .with_cap(self.cap()))
    }

    pub fn params(&self, eps: f64) -> Result<SimParams> {
        Ok(self.base_params()?.with_epsilon(eps))
    }

    /// Audits the hypotheses on the amplitude window `[-M, M]`.
    pub fn audit_coefficients(&self) -> Result<()> {
        let rep = check_assumptions(&self.coefficients, &AssumptionPlan::new(self.grid.horizon(), self.cap()));
        if !rep.all_pass() {
            let failed: Vec<String> = rep
                .records
                .iter()
                .filter(|r| !r.pass)
                .map(|r| format!("{} {} = {} > {}", r.hypothesis, r.quantity, r.sampled_max, r.declared))
                .collect();
            return Err(Error::config("coefficients", failed.join("; ")));
        }
        Ok(())
    }
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub study: String,
    pub epsilon: Option<f64>,
    pub statistic: String,
    pub value: f64,
    pub std_error: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub n_paths: Option<usize>,
}

/// Per-ladder-point headline estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSummary {
    pub epsilon: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub exceedance_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub study: String,
    pub per_epsilon: Vec<EpsilonSummary>,
    /// Log-log regression of the headline estimate on `eps`; `None` when degenerate.
    pub fit: Option<LogLogFit>,
    pub rows: Vec<Row>,
    pub notes: Vec<String>,
}

impl StudyResult {
    fn new(study: &str) -> Self {
        Self {
            study: study.into(),
            per_epsilon: Vec::new(),
            fit: None,
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn push(&mut self, epsilon: Option<f64>, statistic: &str, value: f64) -> &mut Row {
        self.rows.push(Row {
            study: self.study.clone(),
            epsilon,
            statistic: statistic.into(),
            value,
            std_error: None,
            ci_low: None,
            ci_high: None,
            n_paths: None,
        });
        self.rows.last_mut().expect("just pushed")
    }

    fn push_mean(&mut self, epsilon: f64, statistic: &str, m: &MeanEstimate) {
        let ci = m.interval(Z95);
        let row = self.push(Some(epsilon), statistic, m.mean);
        row.std_error = Some(m.std_error);
        row.ci_low = Some(ci.low);
        row.ci_high = Some(ci.high);
        row.n_paths = Some(m.n);
    }

    fn push_fit(&mut self, fit: Option<LogLogFit>) {
        self.fit = fit;
        match fit {
            Some(f) => {
                let row = self.push(None, "slope", f.slope);
                row.std_error = Some(f.slope_std_error);
                row.ci_low = Some(f.slope_ci.low);
                row.ci_high = Some(f.slope_ci.high);
                self.push(None, "intercept", f.intercept);
                self.push(None, "r_squared", f.r_squared);
            }
            None => {
                self.push(None, "degenerate", 1.0);
                self.notes
                    .push("log-log slope undefined: an estimate is zero or non-finite".into());
            }
        }
    }

    pub fn row(&self, statistic: &str, epsilon: Option<f64>) -> Option<&Row> {
        self.rows
            .iter()
            .find(|r| r.statistic == statistic && r.epsilon == epsilon)
    }

    pub fn value(&self, statistic: &str, epsilon: Option<f64>) -> Option<f64> {
        self.row(statistic, epsilon).map(|r| r.value)
    }

    /// Rows only (no header), in insertion order.
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.study,
                opt(r.epsilon),
                r.statistic,
                num(r.value),
                opt(r.std_error),
                opt(r.ci_low),
                opt(r.ci_high),
                r.n_paths.map(|n| n.to_string()).unwrap_or_default()
            );
        }
        s
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Maps `f` over path indices on a pool of `threads` workers and returns the
/// results in index order.
pub(crate) fn par_paths<T, F>(threads: Option<usize>, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config("threads", e.to_string()))?;
    pool.install(|| (0..n as u64).into_par_iter().map(&f).collect())
}
