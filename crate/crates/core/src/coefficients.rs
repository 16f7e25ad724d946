//! Coefficient triples `(f, g = g1 + g2, sigma)` with their state derivatives,
//! the Burgers and reaction-diffusion presets, and a sample-based audit of
//! the growth and Lipschitz hypotheses the small-noise theory relies on.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pure function of `(t, x, r)`.
pub type CoefFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
/// Pure function of `(t, r)`; the `x`-free part of `g`.
pub type CoefFnTr = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Declared constants of the hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Linear growth constant `K` of `f`, `g1` and quadratic growth of `g2`.
    pub growth: f64,
    /// Local Lipschitz constant `L` of `f`, `g` and `sigma`.
    pub lipschitz: f64,
    /// Lipschitz constant `K'` of `f'` and `g'`.
    pub derivative_lipschitz: f64,
    /// `sup |sigma|`.
    pub sigma_bound: f64,
}

#[derive(Clone)]
pub struct CoefficientSet {
    name: String,
    f: CoefFn,
    f_prime: CoefFn,
    g1: CoefFn,
    g2: CoefFnTr,
    g_prime: CoefFn,
    sigma: CoefFn,
    constants: Constants,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

/// Default `sigma(r) = c0/(1+r^2) + c1`.
pub const SIGMA_C0: f64 = 0.5;
pub const SIGMA_C1: f64 = 0.5;

/// Reaction-diffusion cubic is kept exactly on `|r| <= R_CAP`.
pub const R_CAP: f64 = 20.0;
/// Decay length of the curvature in the linear-growth extension.
const BLEND_WIDTH: f64 = 1.0;

fn bounded_sigma(c0: f64, c1: f64) -> CoefFn {
    Arc::new(move |_t, _x, r| c0 / (1.0 + r * r) + c1)
}

/// Lipschitz constant of `c0/(1+r^2)`: `c0 * 9/(8 sqrt 3)`, attained at `r = 1/sqrt 3`.
fn bounded_sigma_lipschitz(c0: f64) -> f64 {
    c0.abs() * 9.0 / (8.0 * 3f64.sqrt())
}

/// `r - r^3` for `|r| <= R_CAP`, continued as an odd C^2 function whose
/// curvature decays exponentially, so growth is linear at infinity.
fn capped_cubic(r: f64) -> f64 {
    let a = r.abs();
    if a <= R_CAP {
        return r - r * r * r;
    }
    let s = a - R_CAP;
    let (f0, f1, f2) = cubic_jet();
    let w = BLEND_WIDTH;
    let q = f0 + f1 * s + f2 * w * w * ((-s / w).exp() - 1.0 + s / w);
    r.signum() * q
}

fn capped_cubic_prime(r: f64) -> f64 {
    let a = r.abs();
    if a <= R_CAP {
        return 1.0 - 3.0 * r * r;
    }
    let s = a - R_CAP;
    let (_, f1, f2) = cubic_jet();
    let w = BLEND_WIDTH;
    f1 + f2 * w * (1.0 - (-s / w).exp())
}

// value, slope and curvature of r - r^3 at R_CAP
fn cubic_jet() -> (f64, f64, f64) {
    (R_CAP - R_CAP.powi(3), 1.0 - 3.0 * R_CAP * R_CAP, -6.0 * R_CAP)
}

impl CoefficientSet {
    /// `burgers` or `reaction_diffusion`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "burgers" => Ok(Self::burgers(SIGMA_C0, SIGMA_C1)),
            "reaction_diffusion" | "reaction-diffusion" => Ok(Self::reaction_diffusion()),
            "custom" | "custom-spec" => Err(Error::config(
                "preset",
                "custom coefficients are built from expressions, not by name",
            )),
            other => Err(Error::config("preset", format!("unknown preset `{other}`"))),
        }
    }

    /// `f = 0`, `g = r^2/2`, `sigma = c0/(1+r^2) + c1`.
    pub fn burgers(c0: f64, c1: f64) -> Self {
        Self {
            name: "burgers".into(),
            f: Arc::new(|_, _, _| 0.0),
            f_prime: Arc::new(|_, _, _| 0.0),
            g1: Arc::new(|_, _, _| 0.0),
            g2: Arc::new(|_, r| 0.5 * r * r),
            g_prime: Arc::new(|_, _, r| r),
            sigma: bounded_sigma(c0, c1),
            constants: Constants {
                growth: 0.5,
                lipschitz: 0.5f64.max(bounded_sigma_lipschitz(c0)),
                derivative_lipschitz: 1.0,
                sigma_bound: c0.abs() + c1.abs(),
            },
        }
    }

    /// `f = r - r^3` (capped to linear growth outside `|r| <= 20`), `g = 0`.
    pub fn reaction_diffusion() -> Self {
        let (f0, f1, f2) = cubic_jet();
        let w = BLEND_WIDTH;
        // sup |f'| is reached at infinity on the extension
        let slope_sup = f1.abs() + f2.abs() * w;
        // |f|/(1+|r|): R(R-1) on the window, tends to slope_sup outside
        let growth = (R_CAP * (R_CAP - 1.0)).max(slope_sup).max(f0.abs() / (1.0 + R_CAP));
        // window: difference quotient <= 1 + (|p|+|q|)^2 <= 2R(1+|p|+|q|);
        // outside: slope_sup / (1 + R)
        let lipschitz = (2.0 * R_CAP).max(slope_sup / (1.0 + R_CAP));
        Self {
            name: "reaction_diffusion".into(),
            f: Arc::new(|_, _, r| capped_cubic(r)),
            f_prime: Arc::new(|_, _, r| capped_cubic_prime(r)),
            g1: Arc::new(|_, _, _| 0.0),
            g2: Arc::new(|_, _| 0.0),
            g_prime: Arc::new(|_, _, _| 0.0),
            sigma: bounded_sigma(SIGMA_C0, SIGMA_C1),
            constants: Constants {
                growth,
                lipschitz: lipschitz.max(bounded_sigma_lipschitz(SIGMA_C0)),
                derivative_lipschitz: f2.abs(),
                sigma_bound: SIGMA_C0 + SIGMA_C1,
            },
        }
    }

    /// All drift terms zero, `sigma = 1`: the stochastic heat equation.
    pub fn heat() -> Self {
        Self {
            name: "heat".into(),
            f: Arc::new(|_, _, _| 0.0),
            f_prime: Arc::new(|_, _, _| 0.0),
            g1: Arc::new(|_, _, _| 0.0),
            g2: Arc::new(|_, _| 0.0),
            g_prime: Arc::new(|_, _, _| 0.0),
            sigma: Arc::new(|_, _, _| 1.0),
            constants: Constants {
                growth: 1.0,
                lipschitz: 1.0,
                derivative_lipschitz: 1.0,
                sigma_bound: 1.0,
            },
        }
    }

    /// User-supplied coefficients. Callers declare the constants; they are
    /// checked by [`check_assumptions`], not trusted.
    #[allow(clippy::too_many_arguments)]
    pub fn custom(
        name: impl Into<String>,
        f: CoefFn,
        f_prime: CoefFn,
        g1: CoefFn,
        g2: CoefFnTr,
        g_prime: CoefFn,
        sigma: CoefFn,
        constants: Constants,
    ) -> Self {
        Self {
            name: name.into(),
            f,
            f_prime,
            g1,
            g2,
            g_prime,
            sigma,
            constants,
        }
    }

    /// Replaces the noise coefficient.
    pub fn with_sigma(mut self, sigma: CoefFn, bound: f64, lipschitz: f64) -> Self {
        self.sigma = sigma;
        self.constants.sigma_bound = bound;
        self.constants.lipschitz = self.constants.lipschitz.max(lipschitz);
        self
    }

    pub fn with_constant_sigma(self, c: f64) -> Self {
        self.with_sigma(Arc::new(move |_, _, _| c), c.abs(), 0.0)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn constants(&self) -> Constants {
        self.constants
    }

    #[inline]
    pub fn f(&self, t: f64, x: f64, r: f64) -> f64 {
        (self.f)(t, x, r)
    }

    #[inline]
    pub fn f_prime(&self, t: f64, x: f64, r: f64) -> f64 {
        (self.f_prime)(t, x, r)
    }

    #[inline]
    pub fn g1(&self, t: f64, x: f64, r: f64) -> f64 {
        (self.g1)(t, x, r)
    }

    #[inline]
    pub fn g2(&self, t: f64, r: f64) -> f64 {
        (self.g2)(t, r)
    }

    #[inline]
    pub fn g(&self, t: f64, x: f64, r: f64) -> f64 {
        self.g1(t, x, r) + self.g2(t, r)
    }

    #[inline]
    pub fn g_prime(&self, t: f64, x: f64, r: f64) -> f64 {
        (self.g_prime)(t, x, r)
    }

    #[inline]
    pub fn sigma(&self, t: f64, x: f64, r: f64) -> f64 {
        (self.sigma)(t, x, r)
    }
}

/// Where the hypotheses are sampled. The hypotheses are global in `r`; the
/// audit covers `[-r_window, r_window]` only and says so in its report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionPlan {
    pub times: Vec<f64>,
    pub nodes: Vec<f64>,
    pub r_window: f64,
    pub r_samples: usize,
}

impl AssumptionPlan {
    pub fn new(horizon: f64, r_window: f64) -> Self {
        Self {
            times: vec![0.0, 0.5 * horizon, horizon],
            nodes: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            r_window,
            r_samples: 161,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub hypothesis: String,
    pub quantity: String,
    pub sampled_max: f64,
    pub declared: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub coefficients: String,
    pub r_window: f64,
    pub records: Vec<HypothesisRecord>,
    /// Smallest sampled `|sigma|`.
    pub sigma_min: f64,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn hypothesis_passes(&self, h: &str) -> bool {
        self.records
            .iter()
            .filter(|r| r.hypothesis == h)
            .all(|r| r.pass)
    }
}

const SLACK: f64 = 1e-9;

struct Tracker {
    records: Vec<HypothesisRecord>,
}

impl Tracker {
    fn push(&mut self, hypothesis: &str, quantity: &str, sampled_max: f64, declared: f64) {
        self.records.push(HypothesisRecord {
            hypothesis: hypothesis.into(),
            quantity: quantity.into(),
            sampled_max,
            declared,
            pass: sampled_max.is_finite() && sampled_max <= declared + SLACK,
        });
    }
}

fn quotient(a: f64, b: f64, d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        (a - b).abs() / d
    }
}

/// Samples every hypothesis ratio on the plan and compares with the
/// declared constants. Failures are reported, never raised.
pub fn check_assumptions(c: &CoefficientSet, plan: &AssumptionPlan) -> AssumptionReport {
    let k = c.constants;
    let n = plan.r_samples.max(2);
    let rs: Vec<f64> = (0..n)
        .map(|i| -plan.r_window + 2.0 * plan.r_window * i as f64 / (n - 1) as f64)
        .collect();

    let mut h1 = 0.0f64;
    let (mut h2a, mut h2b) = (0.0f64, 0.0f64);
    let (mut sig_sup, mut sig_min) = (0.0f64, f64::INFINITY);
    let (mut sig_lip, mut f_lip, mut g_lip) = (0.0f64, 0.0f64, 0.0f64);
    let (mut fp_lip, mut gp_lip) = (0.0f64, 0.0f64);
    let nan_guard = |m: f64, v: f64| if v.is_nan() { f64::NAN } else { m.max(v) };

    for &t in &plan.times {
        for &x in &plan.nodes {
            for &r in &rs {
                h1 = nan_guard(h1, c.f(t, x, r).abs() / (1.0 + r.abs()));
                h2a = nan_guard(h2a, c.g1(t, x, r).abs() / (1.0 + r.abs()));
                h2b = nan_guard(h2b, c.g2(t, r).abs() / (1.0 + r * r));
                let s = c.sigma(t, x, r).abs();
                sig_sup = nan_guard(sig_sup, s);
                sig_min = sig_min.min(s);
            }
            for (i, &p) in rs.iter().enumerate() {
                for &q in &rs[i + 1..] {
                    let d = (p - q).abs();
                    let grow = 1.0 + p.abs() + q.abs();
                    sig_lip = nan_guard(sig_lip, quotient(c.sigma(t, x, p), c.sigma(t, x, q), d));
                    f_lip = nan_guard(f_lip, quotient(c.f(t, x, p), c.f(t, x, q), d) / grow);
                    g_lip = nan_guard(g_lip, quotient(c.g(t, x, p), c.g(t, x, q), d) / grow);
                    fp_lip = nan_guard(fp_lip, quotient(c.f_prime(t, x, p), c.f_prime(t, x, q), d));
                    gp_lip = nan_guard(gp_lip, quotient(c.g_prime(t, x, p), c.g_prime(t, x, q), d));
                }
            }
        }
    }

    let mut tr = Tracker { records: Vec::new() };
    tr.push("growth_f", "|f|/(1+|r|)", h1, k.growth);
    tr.push("growth_g", "|g1|/(1+|r|)", h2a, k.growth);
    tr.push("growth_g", "|g2|/(1+r^2)", h2b, k.growth);
    tr.push("lipschitz", "sup|sigma|", sig_sup, k.sigma_bound);
    tr.push("lipschitz", "sigma Lipschitz", sig_lip, k.lipschitz);
    tr.push("lipschitz", "f local Lipschitz", f_lip, k.lipschitz);
    tr.push("lipschitz", "g local Lipschitz", g_lip, k.lipschitz);
    tr.push("derivative_lipschitz", "f' Lipschitz", fp_lip, k.derivative_lipschitz);
    tr.push("derivative_lipschitz", "g' Lipschitz", gp_lip, k.derivative_lipschitz);
    AssumptionReport {
        coefficients: c.name.clone(),
        r_window: plan.r_window,
        records: tr.records,
        sigma_min: sig_min,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn burgers_flux_values() {
        let b = CoefficientSet::preset("burgers").unwrap();
        assert_eq!(b.g2(0.3, 2.0), 2.0);
        assert_eq!(b.g(0.3, 0.7, 2.0), 2.0);
        for r in [-7.0f64, -1.0, 0.0, 0.5, 3.0] {
            assert!((0.5 * r * r).abs() <= 0.5 * (1.0 + r * r));
            assert_eq!(b.g_prime(0.0, 0.0, r), r);
        }
        // linear derivative: Lipschitz with K' = 1 exactly
        let (a, c) = (1.3, -4.2);
        assert_eq!((b.g_prime(0.0, 0.0, a) - b.g_prime(0.0, 0.0, c)).abs(), (a - c).abs());
    }

    #[test]
    fn unknown_preset_names_field() {
        match CoefficientSet::preset("kpz") {
            Err(Error::Config { field, .. }) => assert_eq!(field, "preset"),
            other => panic!("{other:?}"),
        }
        assert!(CoefficientSet::preset("custom-spec").is_err());
    }

    #[test]
    fn burgers_passes_audit_on_window() {
        let b = CoefficientSet::preset("burgers").unwrap();
        let rep = check_assumptions(&b, &AssumptionPlan::new(1.0, 10.0));
        assert!(rep.all_pass(), "{rep:#?}");
        assert!(rep.sigma_min >= SIGMA_C1 - 1e-12);
    }

    #[test]
    fn reaction_diffusion_passes_audit_beyond_cap() {
        let c = CoefficientSet::preset("reaction_diffusion").unwrap();
        let rep = check_assumptions(&c, &AssumptionPlan::new(1.0, 60.0));
        assert!(rep.all_pass(), "{rep:#?}");
        let k = c.constants();
        assert_eq!(k.derivative_lipschitz, 120.0);
        assert_eq!(k.growth, 1319.0);
    }

    #[test]
    fn capped_cubic_is_c2_at_the_cap() {
        let h = 1e-6;
        for side in [1.0, -1.0] {
            let r = side * R_CAP;
            let left = capped_cubic(r - h);
            let right = capped_cubic(r + h);
            assert!((right - left - 2.0 * h * capped_cubic_prime(r)).abs() < 1e-3);
            let d_left = capped_cubic_prime(r - h);
            let d_right = capped_cubic_prime(r + h);
            assert!((d_left - d_right).abs() < 1e-3);
        }
        // linear growth at infinity
        let far = capped_cubic(1e6) / 1e6;
        assert!((far + 1319.0).abs() < 1.0, "{far}");
    }

    #[test]
    fn unbounded_sigma_fails_h3() {
        let c = CoefficientSet::burgers(0.5, 0.5).with_sigma(Arc::new(|_, _, r| r), 1.0, 1.0);
        let rep = check_assumptions(&c, &AssumptionPlan::new(1.0, 10.0));
        assert!(!rep.hypothesis_passes("lipschitz"));
        assert!(rep.hypothesis_passes("growth_f"));
    }

    #[test]
    fn zero_drift_passes_h1_for_any_constant() {
        let mut c = CoefficientSet::heat();
        c.constants.growth = 1e-6;
        let rep = check_assumptions(&c, &AssumptionPlan::new(1.0, 5.0));
        assert!(rep.hypothesis_passes("growth_f"));
    }

    #[test]
    fn derivatives_match_centred_differences() {
        for c in [CoefficientSet::preset("burgers").unwrap(), CoefficientSet::reaction_diffusion()] {
            for &r in &[-25.0, -3.0, -0.4, 0.0, 0.9, 7.0, 19.5, 21.0, 40.0] {
                let mut errs = Vec::new();
                for k in 0..2 {
                    let h = 1e-2 / 2f64.powi(k);
                    let fd_f = (c.f(0.1, 0.3, r + h) - c.f(0.1, 0.3, r - h)) / (2.0 * h);
                    let fd_g = (c.g(0.1, 0.3, r + h) - c.g(0.1, 0.3, r - h)) / (2.0 * h);
                    errs.push(
                        (fd_f - c.f_prime(0.1, 0.3, r)).abs() + (fd_g - c.g_prime(0.1, 0.3, r)).abs(),
                    );
                }
                // O(h^2): the error falls ~4x per halving, or is already at roundoff
                assert!(errs[1] < 1e-8 || errs[0] / errs[1] > 3.5, "{} r={r}: {errs:?}", c.name());
            }
        }
    }

    #[test]
    fn derivative_growth_bound() {
        for c in [CoefficientSet::preset("burgers").unwrap(), CoefficientSet::reaction_diffusion()] {
            let l = c.constants().lipschitz;
            for i in 0..=400 {
                let r = -50.0 + 0.25 * i as f64;
                assert!(c.f_prime(0.0, 0.5, r).abs() <= l * (1.0 + 2.0 * r.abs()) + 1e-9);
                assert!(c.g_prime(0.0, 0.5, r).abs() <= l * (1.0 + 2.0 * r.abs()) + 1e-9);
            }
        }
    }

    #[test]
    fn g2_is_x_invariant() {
        let g1: CoefFn = Arc::new(|_, x, r| x * r.sin());
        let g2: CoefFnTr = Arc::new(|t, r| t + r);
        let c = CoefficientSet::custom(
            "mixed",
            Arc::new(|_, _, _| 0.0),
            Arc::new(|_, _, _| 0.0),
            g1,
            g2,
            Arc::new(|_, x, r| x * r.cos() + 1.0),
            Arc::new(|_, _, _| 1.0),
            CoefficientSet::heat().constants(),
        );
        let (t, r) = (0.2, 0.7);
        let d = c.g(t, 0.9, r) - c.g(t, 0.1, r);
        assert!((d - (c.g1(t, 0.9, r) - c.g1(t, 0.1, r))).abs() < 1e-15);
    }
}
