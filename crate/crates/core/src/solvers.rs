//! Semi-implicit finite-difference steppers.
//!
//! Every solver advances
//!
//! ```text
//! (I - dt*Lap_h) u^{n+1} = u^n + dt*[D_h g(u^n) + f(u^n)] + forcing_n
//! ```
//!
//! with `Lap_h` the second difference over `dx^2` and `D_h` the centred first
//! difference of the composed flux. The five specializations differ only in
//! what plays the role of `g`, `f` and the forcing:
//!
//! * [`solve_deterministic`]: the noiseless equation;
//! * [`solve_spde`]: forcing `sqrt(eps)*sigma(u)*sqrt(dt/dx)*xi`;
//! * [`solve_linearized`]: the Gaussian fluctuation field, linear in the noise;
//! * [`solve_skeleton`]: the same linear equation driven by a control;
//! * [`solve_controlled`]: the rescaled deviation with a Girsanov shift.

mod scale;
mod tridiag;

pub use scale::DeviationScale;
pub(crate) use tridiag::HeatMatrix;

use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::{l2_norm_unchecked, Control, GridSpec, PathField, SpaceField};
use crate::noise::NoiseSource;

// Larger magnitudes are treated as blow-up before they overflow.
const BLOW_UP_MAGNITUDE: f64 = 1e150;

#[derive(Debug, Clone)]
pub struct SimParams {
    pub epsilon: f64,
    pub deviation_scale: DeviationScale,
    /// Exceedance threshold `M` for the L2 norm of the state.
    pub amplitude_cap: f64,
    pub coefficients: CoefficientSet,
    pub initial: SpaceField,
    pub grid: GridSpec,
}

impl SimParams {
    /// `eps = 0`, `lambda = eps^(-1/4)`, `M = 10 (1 + ||eta||_2)`.
    pub fn new(coefficients: CoefficientSet, initial: SpaceField, grid: GridSpec) -> Result<Self> {
        if initial.len() != grid.width() {
            return Err(Error::config(
                "initial_condition",
                format!("has {} nodes, grid needs {}", initial.len(), grid.width()),
            ));
        }
        let cap = 10.0 * (1.0 + l2_norm_unchecked(initial.values(), grid.dx()));
        Ok(Self {
            epsilon: 0.0,
            deviation_scale: DeviationScale::default(),
            amplitude_cap: cap,
            coefficients,
            initial,
            grid,
        })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_scale(mut self, scale: DeviationScale) -> Self {
        self.deviation_scale = scale;
        self
    }

    pub fn with_cap(mut self, cap: f64) -> Self {
        self.amplitude_cap = cap;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::config("epsilon", format!("must be >= 0, got {}", self.epsilon)));
        }
        if !(self.amplitude_cap > 0.0) {
            return Err(Error::config(
                "amplitude_cap",
                format!("must be positive, got {}", self.amplitude_cap),
            ));
        }
        if self.initial.len() != self.grid.width() {
            return Err(Error::config("initial_condition", "does not conform to grid"));
        }
        if self.initial.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::config("initial_condition", "entries must be finite"));
        }
        Ok(())
    }

    fn check_noise(&self, noise: &impl NoiseSource) -> Result<()> {
        if noise.grid() != &self.grid {
            return Err(Error::contract("noise grid does not match simulation grid"));
        }
        Ok(())
    }

    fn check_base(&self, base: &PathField) -> Result<()> {
        if base.grid() != &self.grid {
            return Err(Error::contract("base path grid does not match simulation grid"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub path: PathField,
    /// First level with `||state||_2 >= M`.
    pub exceedance_level: Option<usize>,
    /// `max_i |state_i|` at every level.
    pub max_abs: Vec<f64>,
    /// Largest `||M x - b||_inf` over all tridiagonal solves.
    pub tridiagonal_residual: f64,
}

impl SolveOutput {
    pub fn exceeded(&self) -> bool {
        self.exceedance_level.is_some()
    }

    pub fn exceedance_time(&self) -> Option<f64> {
        self.exceedance_level.map(|n| self.path.grid().t(n))
    }

    pub fn sup_l2(&self) -> f64 {
        let dx = self.path.grid().dx();
        (0..self.path.levels())
            .map(|n| l2_norm_unchecked(self.path.frame(n), dx))
            .fold(0.0, f64::max)
    }
}

/// Runs the implicit sweep. `explicit(n, state, rhs)` fills the interior
/// right side from the full-width state at level `n`.
fn march(
    grid: &GridSpec,
    tri: &HeatMatrix,
    initial: &[f64],
    cap: f64,
    mut explicit: impl FnMut(usize, &[f64], &mut [f64]),
) -> Result<SolveOutput> {
    let nx = grid.nx();
    let dx = grid.dx();
    let mut path = PathField::zeros(grid);
    path.frame_mut(0).copy_from_slice(initial);
    let mut rhs = vec![0.0; nx];
    let mut sol = vec![0.0; nx];
    let mut max_abs = Vec::with_capacity(grid.nt() + 1);
    let mut residual = 0.0f64;
    let mut exceed = None;
    let record = |u: &[f64], n: usize, exceed: &mut Option<usize>, max_abs: &mut Vec<f64>| {
        max_abs.push(u.iter().fold(0.0f64, |a, v| a.max(v.abs())));
        if exceed.is_none() && l2_norm_unchecked(u, dx) >= cap {
            *exceed = Some(n);
        }
    };
    record(path.frame(0), 0, &mut exceed, &mut max_abs);
    for n in 0..grid.nt() {
        explicit(n, path.frame(n), &mut rhs);
        sol.copy_from_slice(&rhs);
        tri.solve(&mut sol);
        if sol.iter().any(|v| !(v.abs() < BLOW_UP_MAGNITUDE)) {
            return Err(Error::BlowUp { step: n + 1 });
        }
        residual = residual.max(tri.residual(&sol, &rhs));
        path.frame_mut(n + 1)[1..=nx].copy_from_slice(&sol);
        record(path.frame(n + 1), n + 1, &mut exceed, &mut max_abs);
    }
    Ok(SolveOutput {
        path,
        exceedance_level: exceed,
        max_abs,
        tridiagonal_residual: residual,
    })
}

fn nonlinear(
    p: &SimParams,
    noise: Option<&dyn NoiseSource>,
) -> Result<SolveOutput> {
    p.validate()?;
    let g = &p.grid;
    let c = &p.coefficients;
    let (nx, dt) = (g.nx(), g.dt());
    let inv2dx = 0.5 / g.dx();
    let amp = p.epsilon.sqrt() * (dt / g.dx()).sqrt();
    let xs: Vec<f64> = (0..g.width()).map(|j| g.x(j)).collect();
    let mut flux = vec![0.0; g.width()];
    let tri = HeatMatrix::new(g);
    march(g, &tri, p.initial.values(), p.amplitude_cap, |n, u, rhs| {
        let t = g.t(n);
        for (j, fl) in flux.iter_mut().enumerate() {
            *fl = c.g(t, xs[j], u[j]);
        }
        for i in 1..=nx {
            rhs[i - 1] = u[i] + dt * ((flux[i + 1] - flux[i - 1]) * inv2dx + c.f(t, xs[i], u[i]));
        }
        if let Some(noise) = noise {
            for (i, (r, xi)) in rhs.iter_mut().zip(noise.row(n)).enumerate() {
                *r += amp * c.sigma(t, xs[i + 1], u[i + 1]) * xi;
            }
        }
    })
}

/// The noiseless equation.
pub fn solve_deterministic(p: &SimParams) -> Result<SolveOutput> {
    nonlinear(p, None)
}

/// The stochastic equation at intensity `p.epsilon`. At `eps = 0` the noise
/// term is skipped, so the output equals [`solve_deterministic`] bit for bit.
pub fn solve_spde(p: &SimParams, noise: &impl NoiseSource) -> Result<SolveOutput> {
    p.check_noise(noise)?;
    if p.epsilon == 0.0 {
        return nonlinear(p, None);
    }
    nonlinear(p, Some(noise))
}

/// Coefficients of the equation linearized along a base path, sampled once
/// per level and shared by the forward stepper and its exact transpose.
#[derive(Debug, Clone)]
pub struct Linearization {
    grid: GridSpec,
    tri: HeatMatrix,
    // nt x nx each, interior nodes, levels 0..nt
    g_prime: Vec<f64>,
    f_prime: Vec<f64>,
    sigma: Vec<f64>,
}

impl Linearization {
    pub fn new(p: &SimParams, base: &PathField) -> Result<Self> {
        p.validate()?;
        p.check_base(base)?;
        let g = &p.grid;
        let c = &p.coefficients;
        let nx = g.nx();
        let len = g.nt() * nx;
        let (mut gp, mut fp, mut sg) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        for n in 0..g.nt() {
            let t = g.t(n);
            let u = base.frame(n);
            for i in 1..=nx {
                let x = g.x(i);
                let k = n * nx + i - 1;
                gp[k] = c.g_prime(t, x, u[i]);
                fp[k] = c.f_prime(t, x, u[i]);
                sg[k] = c.sigma(t, x, u[i]);
            }
        }
        Ok(Self {
            grid: *g,
            tri: HeatMatrix::new(g),
            g_prime: gp,
            f_prime: fp,
            sigma: sg,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn row<'a>(&self, v: &'a [f64], n: usize) -> &'a [f64] {
        let nx = self.grid.nx();
        &v[n * nx..(n + 1) * nx]
    }

    /// `sigma(t_n, x_i, base)` for interior `i`.
    pub fn sigma_row(&self, n: usize) -> &[f64] {
        self.row(&self.sigma, n)
    }

    /// Smallest `|sigma|` along the base path.
    pub fn sigma_min(&self) -> f64 {
        self.sigma.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()))
    }

    /// Linear stepper from `V^0 = 0`; `forcing(n, sigma_n, out)` writes the
    /// additive forcing of step `n`.
    pub fn run(
        &self,
        cap: f64,
        mut forcing: impl FnMut(usize, &[f64], &mut [f64]),
    ) -> Result<SolveOutput> {
        let g = self.grid;
        let (nx, dt) = (g.nx(), g.dt());
        let inv2dx = 0.5 / g.dx();
        let mut flux = vec![0.0; g.width()];
        let mut extra = vec![0.0; nx];
        let zero = vec![0.0; g.width()];
        march(&g, &self.tri, &zero, cap, |n, v, rhs| {
            let gp = self.row(&self.g_prime, n);
            let fp = self.row(&self.f_prime, n);
            for i in 1..=nx {
                flux[i] = gp[i - 1] * v[i];
            }
            forcing(n, self.row(&self.sigma, n), &mut extra);
            for i in 1..=nx {
                rhs[i - 1] =
                    v[i] + dt * ((flux[i + 1] - flux[i - 1]) * inv2dx + fp[i - 1] * v[i]) + extra[i - 1];
            }
        })
    }

    /// `h -> X^h`, the skeleton map.
    pub fn forward(&self, h: &Control) -> Result<PathField> {
        if h.grid() != &self.grid {
            return Err(Error::contract("control grid does not match simulation grid"));
        }
        Ok(self.skeleton(h, f64::INFINITY)?.path)
    }

    fn skeleton(&self, h: &Control, cap: f64) -> Result<SolveOutput> {
        let dt = self.grid.dt();
        self.run(cap, |n, sig, out| {
            for ((o, s), hv) in out.iter_mut().zip(sig).zip(h.level(n)) {
                *o = dt * s * hv;
            }
        })
    }

    /// Exact transpose of [`forward`](Self::forward) in the discrete path
    /// and control inner products.
    pub fn adjoint(&self, mu: &PathField) -> Result<Control> {
        let g = self.grid;
        if mu.grid() != &g {
            return Err(Error::contract("adjoint input grid does not match"));
        }
        let (nx, nt, dt, dx) = (g.nx(), g.nt(), g.dt(), g.dx());
        let w = dt * dx;
        let inv2dx = 0.5 / dx;
        let mut out = vec![0.0; nt * nx];
        let mut p: Vec<f64> = mu.frame(nt)[1..=nx].iter().map(|v| w * v).collect();
        let mut q = vec![0.0; nx + 2];
        for m in (0..nt).rev() {
            // q = M^{-T} p, with zero boundary padding for D_h
            q[1..=nx].copy_from_slice(&p);
            self.tri.solve(&mut q[1..=nx]);
            let sig = self.row(&self.sigma, m);
            for i in 0..nx {
                out[m * nx + i] = sig[i] * q[i + 1] / dx;
            }
            if m >= 1 {
                let gp = self.row(&self.g_prime, m);
                let fp = self.row(&self.f_prime, m);
                let mu_m = mu.frame(m);
                for i in 1..=nx {
                    // D_h is antisymmetric on the interior
                    let dq = (q[i + 1] - q[i - 1]) * inv2dx;
                    p[i - 1] = w * mu_m[i] + q[i] + dt * (-gp[i - 1] * dq + fp[i - 1] * q[i]);
                }
            }
        }
        Control::from_values(&g, out)
    }
}

/// Gaussian fluctuation field `V` along the deterministic path `base`,
/// started from `V^0 = 0`.
pub fn solve_linearized(
    p: &SimParams,
    base: &PathField,
    noise: &impl NoiseSource,
) -> Result<SolveOutput> {
    p.check_noise(noise)?;
    let lin = Linearization::new(p, base)?;
    let amp = (p.grid.dt() / p.grid.dx()).sqrt();
    lin.run(p.amplitude_cap, |n, sig, out| {
        for ((o, s), xi) in out.iter_mut().zip(sig).zip(noise.row(n)) {
            *o = amp * s * xi;
        }
    })
}

/// Skeleton `X^h`: the linearized equation with forcing `sigma(base) * hdot`.
pub fn solve_skeleton(p: &SimParams, base: &PathField, h: &Control) -> Result<SolveOutput> {
    if h.grid() != &p.grid {
        return Err(Error::contract("control grid does not match simulation grid"));
    }
    Linearization::new(p, base)?.skeleton(h, p.amplitude_cap)
}

/// Rescaled deviation `X = (U - base) / (sqrt(eps) * lambda)` under the
/// shifted noise `xi + lambda * sqrt(dt*dx) * v`. Drift and flux enter as
/// difference quotients `(f(base + theta X) - f(base)) / theta`, never
/// through derivatives, so the identity with the rescaled output of
/// [`solve_spde`] holds at every `eps`.
pub fn solve_controlled(
    p: &SimParams,
    base: &PathField,
    noise: &impl NoiseSource,
    v: &Control,
) -> Result<SolveOutput> {
    p.validate()?;
    p.check_noise(noise)?;
    p.check_base(base)?;
    if v.grid() != &p.grid {
        return Err(Error::contract("control grid does not match simulation grid"));
    }
    if p.epsilon <= 0.0 {
        return Err(Error::config("epsilon", "controlled solver needs eps > 0"));
    }
    let lambda = p.deviation_scale.lambda(p.epsilon);
    let theta = p.deviation_scale.theta(p.epsilon);
    if !(theta < 1.0 && theta > 0.0 && lambda.is_finite()) {
        return Err(Error::config(
            "deviation_scale",
            format!("sqrt(eps)*lambda = {theta} is outside (0, 1) at eps = {}", p.epsilon),
        ));
    }
    let g = &p.grid;
    let c = &p.coefficients;
    let (nx, dt) = (g.nx(), g.dt());
    let inv2dx = 0.5 / g.dx();
    let amp = (dt / g.dx()).sqrt() / lambda;
    let xs: Vec<f64> = (0..g.width()).map(|j| g.x(j)).collect();
    let mut flux = vec![0.0; g.width()];
    let tri = HeatMatrix::new(g);
    let zero = vec![0.0; g.width()];
    march(g, &tri, &zero, p.amplitude_cap, |n, x, rhs| {
        let t = g.t(n);
        let u0 = base.frame(n);
        for j in 0..g.width() {
            let u = u0[j] + theta * x[j];
            flux[j] = (c.g(t, xs[j], u) - c.g(t, xs[j], u0[j])) / theta;
        }
        let xi = noise.row(n);
        let vn = v.level(n);
        for i in 1..=nx {
            let u = u0[i] + theta * x[i];
            let fq = (c.f(t, xs[i], u) - c.f(t, xs[i], u0[i])) / theta;
            let s = c.sigma(t, xs[i], u);
            rhs[i - 1] = x[i]
                + dt * ((flux[i + 1] - flux[i - 1]) * inv2dx + fq)
                + amp * s * xi[i - 1]
                + dt * s * vn[i - 1];
        }
    })
}

#[cfg(test)]
mod tests;
