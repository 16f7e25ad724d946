//! Dirichlet heat kernel on `[0,1]` for the operator `d/dt - d^2/dx^2`.
//!
//! Two representations are evaluated:
//!
//! ```text
//! spectral: G_t(x,y) = sum_{n>=1} 2 sin(n pi x) sin(n pi y) exp(-n^2 pi^2 t)
//! images:   G_t(x,y) = sum_{k in Z} [phi_t(x - y + 2k) - phi_t(x + y + 2k)]
//! ```
//!
//! with `phi_t` the centred Gaussian density of variance `2t`. The image sum
//! converges fast for small `t` and the spectral sum for large `t`, so
//! [`green`] switches at [`KernelConfig::crossover_time`]. Truncation orders
//! are chosen per call from the tail tolerance and capped by
//! [`KernelConfig::series_terms`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, PathField};

mod audit;
mod quad;

pub use audit::{audit_bounds, AuditPlan, BoundAuditReport, BoundRecord, SamplePoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    series_terms: usize,
    crossover_time: f64,
    tail_tolerance: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            series_terms: 64,
            crossover_time: 0.05,
            tail_tolerance: 1e-12,
        }
    }
}

impl KernelConfig {
    /// Validates that `series_terms` suffices for both branches at the
    /// crossover, where each branch is at its slowest.
    pub fn new(series_terms: usize, crossover_time: f64, tail_tolerance: f64) -> Result<Self> {
        if series_terms == 0 {
            return Err(Error::config("series_terms", "must be at least 1"));
        }
        if !(crossover_time.is_finite() && crossover_time > 0.0) {
            return Err(Error::config("crossover_time", "must be positive"));
        }
        if !(tail_tolerance > 0.0 && tail_tolerance < 1.0) {
            return Err(Error::config("tail_tolerance", "must lie in (0, 1)"));
        }
        let need = spectral_terms(crossover_time, tail_tolerance)
            .max(image_terms(crossover_time, tail_tolerance));
        if need > series_terms {
            return Err(Error::config(
                "series_terms",
                format!("{series_terms} terms leave a tail above {tail_tolerance:e} at the crossover; need {need}"),
            ));
        }
        Ok(Self {
            series_terms,
            crossover_time,
            tail_tolerance,
        })
    }

    pub fn series_terms(&self) -> usize {
        self.series_terms
    }

    pub fn crossover_time(&self) -> f64 {
        self.crossover_time
    }

    pub fn tail_tolerance(&self) -> f64 {
        self.tail_tolerance
    }

    fn uses_spectral(&self, t: f64) -> bool {
        t >= self.crossover_time
    }

    fn spectral_order(&self, t: f64) -> usize {
        spectral_terms(t, self.tail_tolerance).min(self.series_terms)
    }

    fn image_order(&self, t: f64) -> usize {
        image_terms(t, self.tail_tolerance).min(self.series_terms)
    }
}

// Exponent budget: the tolerance itself plus room for the polynomial
// prefactors (up to t^{-5/2}) carried by the second derivative.
fn tail_budget(t: f64, tol: f64) -> f64 {
    -tol.ln() + 2.5 * t.ln().abs() + 10.0
}

/// Modes needed so the spectral tail `sum_{n>N} n^2 exp(-n^2 pi^2 t)` stays below `tol`.
pub fn spectral_terms(t: f64, tol: f64) -> usize {
    let l = tail_budget(t, tol);
    ((l / (PI * PI * t)).sqrt().ceil() as usize).max(1)
}

/// Image pairs `|k| <= K` needed so the discarded Gaussians stay below `tol`.
///
/// For `x, y` in `[0,1]` every discarded argument has modulus at least `2K`.
pub fn image_terms(t: f64, tol: f64) -> usize {
    let l = tail_budget(t, tol);
    (t * l).sqrt().ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Deriv {
    Value,
    Dx,
    Dxx,
}

fn gaussian(t: f64, z: f64, d: Deriv) -> f64 {
    let phi = (-z * z / (4.0 * t)).exp() / (4.0 * PI * t).sqrt();
    match d {
        Deriv::Value => phi,
        Deriv::Dx => -z / (2.0 * t) * phi,
        Deriv::Dxx => (z * z / (4.0 * t * t) - 1.0 / (2.0 * t)) * phi,
    }
}

pub(crate) fn images(t: f64, x: f64, y: f64, k_max: usize, d: Deriv) -> f64 {
    let k = k_max as i64;
    let mut s = 0.0;
    for j in -k..=k {
        let shift = 2.0 * j as f64;
        s += gaussian(t, x - y + shift, d) - gaussian(t, x + y + shift, d);
    }
    s
}

pub(crate) fn spectral(t: f64, x: f64, y: f64, modes: usize, d: Deriv) -> f64 {
    let mut s = 0.0;
    for n in 1..=modes {
        let w = n as f64 * PI;
        let decay = (-w * w * t).exp();
        let sy = (w * y).sin();
        s += match d {
            Deriv::Value => 2.0 * (w * x).sin() * sy * decay,
            Deriv::Dx => 2.0 * w * (w * x).cos() * sy * decay,
            Deriv::Dxx => -2.0 * w * w * (w * x).sin() * sy * decay,
        };
    }
    s
}

fn check_args(t: f64, x: f64, y: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("kernel time must be positive, got {t}")));
    }
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(Error::Domain(format!(
            "kernel arguments must lie in [0,1], got x={x}, y={y}"
        )));
    }
    Ok(())
}

pub(crate) fn eval(t: f64, x: f64, y: f64, cfg: &KernelConfig, d: Deriv) -> f64 {
    if cfg.uses_spectral(t) {
        spectral(t, x, y, cfg.spectral_order(t), d)
    } else {
        images(t, x, y, cfg.image_order(t), d)
    }
}

/// `G_t(x, y)`.
pub fn green(t: f64, x: f64, y: f64, cfg: &KernelConfig) -> Result<f64> {
    check_args(t, x, y)?;
    Ok(eval(t, x, y, cfg, Deriv::Value))
}

/// `dG_t(x, y)/dx`.
pub fn green_dx(t: f64, x: f64, y: f64, cfg: &KernelConfig) -> Result<f64> {
    check_args(t, x, y)?;
    Ok(eval(t, x, y, cfg, Deriv::Dx))
}

/// `dG_t(x, y)/dy`, through the symmetry `G_t(x,y) = G_t(y,x)`.
pub fn green_dy(t: f64, x: f64, y: f64, cfg: &KernelConfig) -> Result<f64> {
    green_dx(t, y, x, cfg)
}

/// `dG_t(x, y)/dt`, equal to the second `x` derivative.
pub fn green_dt(t: f64, x: f64, y: f64, cfg: &KernelConfig) -> Result<f64> {
    check_args(t, x, y)?;
    Ok(eval(t, x, y, cfg, Deriv::Dxx))
}

/// Spectral branch with an explicit number of modes.
pub fn green_spectral(t: f64, x: f64, y: f64, modes: usize) -> Result<f64> {
    check_args(t, x, y)?;
    Ok(spectral(t, x, y, modes, Deriv::Value))
}

/// Image branch with an explicit number of image pairs.
pub fn green_images(t: f64, x: f64, y: f64, pairs: usize) -> Result<f64> {
    check_args(t, x, y)?;
    Ok(images(t, x, y, pairs, Deriv::Value))
}

/// Kernel values `G_t(x_i, x_j)` on all grid nodes (boundaries included).
fn node_matrix(t: f64, grid: &GridSpec, cfg: &KernelConfig) -> Vec<f64> {
    let w = grid.width();
    let mut m = vec![0.0; w * w];
    for i in 1..w - 1 {
        for j in i..w - 1 {
            let v = eval(t, grid.x(i), grid.x(j), cfg, Deriv::Value);
            m[i * w + j] = v;
            m[j * w + i] = v;
        }
    }
    m
}

/// `max_{x,y} |int_0^1 G_t(x,z) G_s(z,y) dz - G_{t+s}(x,y)|` over the grid
/// nodes, with the trapezoid rule on the same nodes.
pub fn semigroup_defect(t: f64, s: f64, cfg: &KernelConfig, grid: &GridSpec) -> Result<f64> {
    if !(t > 0.0 && s > 0.0) {
        return Err(Error::Domain(format!(
            "semigroup check needs positive times, got t={t}, s={s}"
        )));
    }
    let w = grid.width();
    let dx = grid.dx();
    let a = node_matrix(t, grid, cfg);
    let b = node_matrix(s, grid, cfg);
    let c = node_matrix(t + s, grid, cfg);
    let mut worst = 0.0f64;
    for i in 1..w - 1 {
        for j in 1..w - 1 {
            // boundary nodes carry zero weight in the trapezoid since G vanishes there
            let conv: f64 = (1..w - 1).map(|k| a[i * w + k] * b[k * w + j]).sum::<f64>() * dx;
            worst = worst.max((conv - c[i * w + j]).abs());
        }
    }
    Ok(worst)
}

/// Trapezoid approximation of `int_0^1 G_t(x, y) dy` at node `x`.
pub fn kernel_mass(t: f64, x: f64, cfg: &KernelConfig, grid: &GridSpec) -> Result<f64> {
    check_args(t, x, 0.0)?;
    let s: f64 = (1..=grid.nx())
        .map(|j| eval(t, x, grid.x(j), cfg, Deriv::Value))
        .sum();
    Ok(s * grid.dx())
}

/// Kernel inside the space-time convolution `J`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    /// `G_{t-r}(x,y)`
    Green,
    /// `G_{t-r}(x,y)^2`
    GreenSquared,
    /// `dG_{t-r}(x,y)/dy`
    GreenDy,
}

/// `J(v)(t_n, x_i) = sum_{m<n} sum_j H(t_n - t_m; x_i, y_j) v(t_m, y_j) dx dt`.
///
/// Left rectangles in time, interior sums in space. Kernel matrices depend
/// only on the lag `n - m` and are built once per lag.
pub fn apply_j(
    v: &PathField,
    kind: KernelKind,
    grid: &GridSpec,
    cfg: &KernelConfig,
) -> Result<PathField> {
    if v.grid() != grid {
        return Err(Error::contract("apply_j: field does not conform to grid"));
    }
    let nx = grid.nx();
    let nt = grid.nt();
    let weight = grid.dt() * grid.dx();
    let mut out = PathField::zeros(grid);
    let mut kmat = vec![0.0; nx * nx];
    for lag in 1..=nt {
        let tau = grid.t(lag);
        for i in 0..nx {
            let x = grid.x(i + 1);
            for j in 0..nx {
                let y = grid.x(j + 1);
                kmat[i * nx + j] = match kind {
                    KernelKind::Green => eval(tau, x, y, cfg, Deriv::Value),
                    KernelKind::GreenSquared => {
                        let g = eval(tau, x, y, cfg, Deriv::Value);
                        g * g
                    }
                    KernelKind::GreenDy => eval(tau, y, x, cfg, Deriv::Dx),
                };
            }
        }
        for n in lag..=nt {
            let src = v.frame(n - lag);
            let mut acc = vec![0.0; nx];
            for (i, a) in acc.iter_mut().enumerate() {
                let row = &kmat[i * nx..(i + 1) * nx];
                *a = row.iter().zip(&src[1..=nx]).map(|(k, s)| k * s).sum::<f64>();
            }
            let dst = out.frame_mut(n);
            for i in 0..nx {
                dst[i + 1] += weight * acc[i];
            }
        }
    }
    Ok(out)
}

/// Free evolution `int_0^1 G_t(x, y) eta(y) dy` at every level; level 0 is `eta`.
pub fn heat_semigroup(eta: &[f64], grid: &GridSpec, cfg: &KernelConfig) -> Result<PathField> {
    if eta.len() != grid.width() {
        return Err(Error::contract("initial condition does not conform to grid"));
    }
    let nx = grid.nx();
    let mut out = PathField::zeros(grid);
    out.frame_mut(0).copy_from_slice(eta);
    for n in 1..=grid.nt() {
        let t = grid.t(n);
        let frame = out.frame_mut(n);
        for i in 1..=nx {
            let x = grid.x(i);
            let s: f64 = (1..=nx)
                .map(|j| eval(t, x, grid.x(j), cfg, Deriv::Value) * eta[j])
                .sum();
            frame[i] = s * grid.dx();
        }
    }
    Ok(out)
}

/// Smallest `C` with `||J(v)(t_n)||_2 <= C * sum_{m<n} (t_n - t_m)^{-3/4} ||v(t_m)||_1 dt`
/// over the levels where the right side is positive.
pub fn j_bound_constant(v: &PathField, jv: &PathField) -> Result<f64> {
    if v.grid() != jv.grid() {
        return Err(Error::contract("paths live on different grids"));
    }
    let grid = *v.grid();
    let dx = grid.dx();
    let dt = grid.dt();
    let l1: Vec<f64> = (0..v.levels())
        .map(|n| v.frame(n).iter().map(|x| x.abs()).sum::<f64>() * dx)
        .collect();
    let mut c = 0.0f64;
    for n in 1..v.levels() {
        let rhs: f64 = (0..n)
            .map(|m| (grid.t(n) - grid.t(m)).powf(-0.75) * l1[m] * dt)
            .sum();
        let lhs = crate::grid::l2_norm_unchecked(jv.frame(n), dx);
        if rhs > 0.0 {
            c = c.max(lhs / rhs);
        }
    }
    Ok(c)
}
