//! Numeric audit of the classical Dirichlet heat-kernel estimates.
//!
//! Each estimate has the form `LHS <= K * RHS`; the audit evaluates `LHS`
//! numerically and `RHS` without its constant on a sample plan and reports
//! the smallest constant that makes every sample hold. Only finiteness of
//! that constant is checkable; the estimates assert existence, not values.
//!
//! | id | left side                                                  | structural right side          |
//! |----|------------------------------------------------------------|--------------------------------|
//! | 1  | `\|G_tau(x,y)\|`                                             | `tau^{-1/2} e^{-a (x-y)^2/tau}`   |
//! | 2  | `\|dG_tau/dx\|`                                              | `tau^{-3/2} e^{-b (x-y)^2/tau}`   |
//! | 3  | `\|dG_tau/dt\|`                                              | `tau^{-2} e^{-d (x-y)^2/tau}`     |
//! | 4  | `int_0^T int \|G_u(x,z)-G_u(y,z)\|^p`                         | `\|x-y\|^{3-p}`                  |
//! | 5  | `sup_x int_0^s int \|G_{t-u}(x,z)-G_{s-u}(x,z)\|^p`           | `\|t-s\|^{(3-p)/2}`              |
//! | 6  | `sup_x int_s^t int \|G_u(x,z)\|^p`                            | `\|t-s\|^{(3-p)/2}`              |
//! | 7  | `int_0^T int \|G_{t-u}(x,z)-G_{s-u}(y,z)\|^2`                 | `rho((t,x),(s,y))^{2 alpha}`   |

use serde::{Deserialize, Serialize};

use super::quad::{ls_slope, refined_nodes, singular_integral, trapezoid};
use super::{eval, Deriv, KernelConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditPlan {
    pub horizon: f64,
    /// Lags `t - s` for the pointwise estimates 1-3.
    pub pointwise_lags: Vec<f64>,
    /// Spatial lattice for the pointwise estimates.
    pub pointwise_nodes: Vec<f64>,
    /// Gaussian rates `a`, `b`, `d` of estimates 1-3.
    pub gaussian_rates: [f64; 3],
    pub spatial_exponents: Vec<f64>,
    pub spatial_base: f64,
    pub spatial_gaps: Vec<f64>,
    pub temporal_exponents: Vec<f64>,
    pub temporal_starts: Vec<f64>,
    pub temporal_gaps: Vec<f64>,
    pub temporal_nodes: Vec<f64>,
    pub window_exponents: Vec<f64>,
    pub window_starts: Vec<f64>,
    pub window_gaps: Vec<f64>,
    pub window_nodes: Vec<f64>,
    /// `gamma` values for estimate 7; `alpha = (gamma-1)/(2 gamma) - holder_margin`.
    pub holder_gammas: Vec<f64>,
    pub holder_margin: f64,
    /// `((t, x), (s, y))` pairs for estimate 7.
    pub holder_pairs: Vec<((f64, f64), (f64, f64))>,
    /// Midpoint nodes of the time quadrature.
    pub time_nodes: usize,
    /// Nodes per refined window of the space quadrature.
    pub space_nodes: usize,
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

impl Default for AuditPlan {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            pointwise_lags: logspace(1e-4, 1.0, 17),
            pointwise_nodes: (0..=20).map(|k| k as f64 / 20.0).collect(),
            gaussian_rates: [0.125; 3],
            spatial_exponents: vec![1.75, 2.0, 2.5],
            spatial_base: 0.3,
            spatial_gaps: vec![0.0125, 0.025, 0.05, 0.1, 0.2, 0.4],
            temporal_exponents: vec![1.5, 2.0, 2.5],
            temporal_starts: vec![0.25, 0.5],
            temporal_gaps: logspace(1e-3, 1e-1, 5),
            temporal_nodes: vec![0.2, 0.5],
            window_exponents: vec![1.5, 2.0, 2.5],
            window_starts: vec![0.0, 0.2],
            window_gaps: logspace(1e-4, 1e-2, 5),
            window_nodes: vec![0.25, 0.5],
            holder_gammas: vec![2.0, 4.0, 8.0],
            holder_margin: 0.01,
            holder_pairs: vec![
                ((0.501, 0.5), (0.5, 0.5)),
                ((0.51, 0.5), (0.5, 0.5)),
                ((0.5, 0.51), (0.5, 0.5)),
                ((0.5, 0.6), (0.5, 0.5)),
                ((0.51, 0.55), (0.5, 0.5)),
                ((0.6, 0.4), (0.5, 0.5)),
            ],
            time_nodes: 160,
            space_nodes: 161,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub t: f64,
    pub s: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundRecord {
    /// Estimate number, 1 to 7.
    pub estimate: u8,
    /// Exponent parameter (`p` for 4-6, `gamma` for 7), if any.
    pub parameter: Option<f64>,
    pub samples: usize,
    /// Samples skipped because the integration interval or distance is empty.
    pub degenerate: usize,
    pub fitted_constant: f64,
    pub worst: Option<SamplePoint>,
    pub pass: bool,
    /// Log-log slope of the left side against the gap variable.
    pub observed_slope: Option<f64>,
    pub predicted_slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundAuditReport {
    pub gaussian_rates: [f64; 3],
    pub records: Vec<BoundRecord>,
}

impl BoundAuditReport {
    pub fn all_pass(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.pass)
    }

    /// Largest fitted constant over all records of one estimate.
    pub fn fitted(&self, estimate: u8) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| r.estimate == estimate)
            .map(|r| r.fitted_constant)
            .reduce(f64::max)
    }

    pub fn record(&self, estimate: u8, parameter: f64) -> Option<&BoundRecord> {
        self.records
            .iter()
            .find(|r| r.estimate == estimate && r.parameter == Some(parameter))
    }
}

struct Fit {
    best: f64,
    worst: Option<SamplePoint>,
    samples: usize,
    degenerate: usize,
}

impl Fit {
    fn new() -> Self {
        Self {
            best: 0.0,
            worst: None,
            samples: 0,
            degenerate: 0,
        }
    }

    /// Ratio `lhs / exp(log_rhs)` computed in log space so underflow of
    /// either side never produces `0/0`.
    fn push_log(&mut self, lhs: f64, log_rhs: f64, at: SamplePoint) {
        self.samples += 1;
        let lhs = lhs.abs();
        let ratio = if lhs == 0.0 {
            0.0
        } else {
            (lhs.ln() - log_rhs).exp()
        };
        if ratio.is_nan() || ratio > self.best {
            self.best = if ratio.is_nan() { f64::NAN } else { ratio };
            self.worst = Some(at);
        }
    }

    fn into_record(
        self,
        estimate: u8,
        parameter: Option<f64>,
        slopes: (Option<f64>, Option<f64>),
    ) -> BoundRecord {
        BoundRecord {
            estimate,
            parameter,
            samples: self.samples,
            degenerate: self.degenerate,
            fitted_constant: self.best,
            worst: self.worst,
            pass: self.samples > 0 && self.best.is_finite(),
            observed_slope: slopes.0,
            predicted_slope: slopes.1,
        }
    }
}

fn check_range(name: &str, values: &[f64], lo: f64, hi: f64) -> Result<()> {
    for &v in values {
        if !(v > lo && v < hi) {
            return Err(Error::contract(format!(
                "audit plan `{name}` value {v} outside ({lo}, {hi})"
            )));
        }
    }
    Ok(())
}

fn check_unit(name: &str, values: &[f64]) -> Result<()> {
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::contract(format!("audit plan `{name}` node {v} outside [0,1]")));
        }
    }
    Ok(())
}

impl AuditPlan {
    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::contract("audit horizon must be positive"));
        }
        check_range("spatial_exponents", &self.spatial_exponents, 1.5, 3.0)?;
        check_range("temporal_exponents", &self.temporal_exponents, 1.0, 3.0)?;
        check_range("window_exponents", &self.window_exponents, 1.0, 3.0)?;
        check_range("holder_gammas", &self.holder_gammas, 1.0, f64::INFINITY)?;
        check_range("gaussian_rates", &self.gaussian_rates, 0.0, f64::INFINITY)?;
        check_unit("pointwise_nodes", &self.pointwise_nodes)?;
        check_unit("temporal_nodes", &self.temporal_nodes)?;
        check_unit("window_nodes", &self.window_nodes)?;
        check_unit("spatial_base", &[self.spatial_base])?;
        for &lag in &self.pointwise_lags {
            if lag < 0.0 || lag > self.horizon {
                return Err(Error::contract(format!("pointwise lag {lag} outside [0, T]")));
            }
        }
        for &(s, gaps) in &[
            (&self.temporal_starts, &self.temporal_gaps),
            (&self.window_starts, &self.window_gaps),
        ] {
            for &a in s.iter() {
                for &g in gaps.iter() {
                    if a < 0.0 || g < 0.0 || a + g > self.horizon {
                        return Err(Error::contract(format!(
                            "interval [{a}, {}] outside [0, T]",
                            a + g
                        )));
                    }
                }
            }
        }
        for &((t, x), (s, y)) in &self.holder_pairs {
            check_unit("holder_pairs", &[x, y])?;
            if !(0.0 < s && s <= t && t < self.horizon) {
                return Err(Error::contract(format!(
                    "holder pair needs 0 < s <= t < T, got s={s}, t={t}"
                )));
            }
        }
        if !(self.holder_margin > 0.0) {
            return Err(Error::contract("holder_margin must be positive"));
        }
        if self.time_nodes < 8 || self.space_nodes < 8 {
            return Err(Error::contract("quadrature resolution too small"));
        }
        Ok(())
    }
}

fn kernel_or_zero(t: f64, x: f64, z: f64, cfg: &KernelConfig) -> f64 {
    if t > 0.0 {
        eval(t, x, z, cfg, Deriv::Value)
    } else {
        0.0
    }
}

// Window half-width capturing a Gaussian of variance 2t to ~e^{-50}.
fn reach(t: f64) -> f64 {
    10.0 * (2.0 * t.max(0.0)).sqrt()
}

/// `int_0^1 F(z) dz` with nodes refined around the listed kernel centres.
fn space_integral(
    features: &[(f64, f64)],
    plan: &AuditPlan,
    mut integrand: impl FnMut(f64) -> f64,
) -> f64 {
    let nodes = refined_nodes(features, plan.space_nodes, 100);
    let vals: Vec<f64> = nodes.iter().map(|&z| integrand(z)).collect();
    trapezoid(&nodes, &vals)
}

/// Pointwise estimates 1-3.
fn pointwise(plan: &AuditPlan, cfg: &KernelConfig, id: u8) -> BoundRecord {
    let (deriv, power, rate) = match id {
        1 => (Deriv::Value, 0.5, plan.gaussian_rates[0]),
        2 => (Deriv::Dx, 1.5, plan.gaussian_rates[1]),
        _ => (Deriv::Dxx, 2.0, plan.gaussian_rates[2]),
    };
    let mut fit = Fit::new();
    for &tau in &plan.pointwise_lags {
        if tau == 0.0 {
            fit.degenerate += 1;
            continue;
        }
        for &x in &plan.pointwise_nodes {
            for &y in &plan.pointwise_nodes {
                let lhs = eval(tau, x, y, cfg, deriv);
                let log_rhs = -power * tau.ln() - rate * (x - y) * (x - y) / tau;
                fit.push_log(lhs, log_rhs, SamplePoint { t: tau, s: 0.0, x, y });
            }
        }
    }
    fit.into_record(id, None, (None, None))
}

/// Estimate 4: spatial increments of the kernel in `L^p` of space-time.
fn spatial(plan: &AuditPlan, cfg: &KernelConfig, p: f64) -> BoundRecord {
    let mut fit = Fit::new();
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    let x = plan.spatial_base;
    for &gap in &plan.spatial_gaps {
        let y = x + gap;
        if gap == 0.0 || y > 1.0 {
            fit.degenerate += 1;
            continue;
        }
        let lhs = singular_integral(0.0, plan.horizon, (p - 1.0) / 2.0, plan.time_nodes, |u| {
            let w = reach(u);
            space_integral(&[(x, w), (y, w)], plan, |z| {
                (kernel_or_zero(u, x, z, cfg) - kernel_or_zero(u, y, z, cfg))
                    .abs()
                    .powf(p)
            })
        });
        fit.push_log(lhs, (3.0 - p) * gap.ln(), SamplePoint { t: plan.horizon, s: 0.0, x, y });
        lx.push(gap.ln());
        ly.push(lhs.ln());
    }
    fit.into_record(4, Some(p), (ls_slope(&lx, &ly), Some(3.0 - p)))
}

/// Estimate 5: time increments of the kernel.
fn temporal(plan: &AuditPlan, cfg: &KernelConfig, p: f64) -> BoundRecord {
    let mut fit = Fit::new();
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for &gap in &plan.temporal_gaps {
        if gap == 0.0 {
            fit.degenerate += plan.temporal_starts.len() * plan.temporal_nodes.len();
            continue;
        }
        let mut sup = 0.0f64;
        for &s in &plan.temporal_starts {
            for &x in &plan.temporal_nodes {
                // r = s - u runs over (0, s]
                let lhs = singular_integral(0.0, s, (p - 1.0) / 2.0, plan.time_nodes, |r| {
                    let feats = [(x, reach(r)), (x, reach(r + gap))];
                    space_integral(&feats, plan, |z| {
                        (kernel_or_zero(r + gap, x, z, cfg) - kernel_or_zero(r, x, z, cfg))
                            .abs()
                            .powf(p)
                    })
                });
                sup = sup.max(lhs);
                let at = SamplePoint { t: s + gap, s, x, y: x };
                fit.push_log(lhs, 0.5 * (3.0 - p) * gap.ln(), at);
            }
        }
        lx.push(gap.ln());
        ly.push(sup.ln());
    }
    fit.into_record(5, Some(p), (ls_slope(&lx, &ly), Some(0.5 * (3.0 - p))))
}

/// `int_a^{a+len} int_0^1 |G_u(x,z)|^p dz du`.
fn window_integral(a: f64, len: f64, x: f64, p: f64, plan: &AuditPlan, cfg: &KernelConfig) -> f64 {
    let alpha = if a == 0.0 { (p - 1.0) / 2.0 } else { 0.0 };
    singular_integral(a, a + len, alpha, plan.time_nodes, |u| {
        space_integral(&[(x, reach(u))], plan, |z| kernel_or_zero(u, x, z, cfg).abs().powf(p))
    })
}

/// Estimate 6: kernel mass in `L^p` over a time window.
fn window(plan: &AuditPlan, cfg: &KernelConfig, p: f64) -> BoundRecord {
    let mut fit = Fit::new();
    let (mut lx, mut ly) = (Vec::new(), Vec::new());
    for &gap in &plan.window_gaps {
        if gap == 0.0 {
            fit.degenerate += plan.window_starts.len() * plan.window_nodes.len();
            continue;
        }
        let mut sup_from_zero = None::<f64>;
        for &s in &plan.window_starts {
            for &x in &plan.window_nodes {
                let lhs = window_integral(s, gap, x, p, plan, cfg);
                fit.push_log(lhs, 0.5 * (3.0 - p) * gap.ln(), SamplePoint { t: s + gap, s, x, y: x });
                if s == 0.0 {
                    sup_from_zero = Some(sup_from_zero.map_or(lhs, |m| m.max(lhs)));
                }
            }
        }
        // the scaling law is sharp for windows starting at 0
        if let Some(m) = sup_from_zero {
            lx.push(gap.ln());
            ly.push(m.ln());
        }
    }
    fit.into_record(6, Some(p), (ls_slope(&lx, &ly), Some(0.5 * (3.0 - p))))
}

/// Estimate 7: Hölder continuity of the kernel in `L^2` of space-time.
fn holder(plan: &AuditPlan, cfg: &KernelConfig, gamma: f64) -> BoundRecord {
    let alpha = (gamma - 1.0) / (2.0 * gamma) - plan.holder_margin;
    let mut fit = Fit::new();
    for &((t, x), (s, y)) in &plan.holder_pairs {
        let rho = ((t - s).powi(2) + (x - y).powi(2)).sqrt();
        if rho == 0.0 {
            fit.degenerate += 1;
            continue;
        }
        let gap = t - s;
        // u in (0, s): r = s - u
        let shared = singular_integral(0.0, s, 0.5, plan.time_nodes, |r| {
            let feats = [(x, reach(r + gap)), (y, reach(r))];
            space_integral(&feats, plan, |z| {
                let d = kernel_or_zero(r + gap, x, z, cfg) - kernel_or_zero(r, y, z, cfg);
                d * d
            })
        });
        // u in (s, t): only the first kernel is alive
        let tail = if gap > 0.0 {
            window_integral(0.0, gap, x, 2.0, plan, cfg)
        } else {
            0.0
        };
        fit.push_log(shared + tail, 2.0 * alpha * rho.ln(), SamplePoint { t, s, x, y });
    }
    fit.into_record(7, Some(gamma), (None, None))
}

/// Runs all seven audits on `plan`.
pub fn audit_bounds(cfg: &KernelConfig, plan: &AuditPlan) -> Result<BoundAuditReport> {
    plan.validate()?;
    let mut records = vec![pointwise(plan, cfg, 1), pointwise(plan, cfg, 2), pointwise(plan, cfg, 3)];
    records.extend(plan.spatial_exponents.iter().map(|&p| spatial(plan, cfg, p)));
    records.extend(plan.temporal_exponents.iter().map(|&p| temporal(plan, cfg, p)));
    records.extend(plan.window_exponents.iter().map(|&p| window(plan, cfg, p)));
    records.extend(plan.holder_gammas.iter().map(|&g| holder(plan, cfg, g)));
    Ok(BoundAuditReport {
        gaussian_rates: plan.gaussian_rates,
        records,
    })
}
