//! Uniform space-time lattices on `[0,T] x [0,1]` and the fields living on them.
//!
//! Space is discretized with `nx` interior nodes `x_i = i*dx`, `dx = 1/(nx+1)`;
//! the two boundary nodes are stored explicitly and always hold `0`
//! (homogeneous Dirichlet conditions). Time levels are `t_n = n*dt`,
//! `dt = T/nt`, `n = 0..=nt`.
//!
//! Norms use interior sums in space and left-endpoint rectangles in time,
//! the same quadrature the time stepper uses, so discrete identities between
//! solvers hold exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    nx: usize,
    nt: usize,
    horizon: f64,
}

impl GridSpec {
    pub fn new(nx: usize, nt: usize, horizon: f64) -> Result<Self> {
        if nx == 0 {
            return Err(Error::config("nx", "need at least one interior node"));
        }
        if nt == 0 {
            return Err(Error::config("nt", "need at least one time step"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::config("horizon", format!("must be positive, got {horizon}")));
        }
        Ok(Self { nx, nt, horizon })
    }

    /// Interior spatial nodes.
    pub fn nx(&self) -> usize {
        self.nx
    }

    /// Time steps.
    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dx(&self) -> f64 {
        1.0 / (self.nx + 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    /// Nodes per frame, boundaries included.
    pub fn width(&self) -> usize {
        self.nx + 2
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }
}

/// Values on one time level, boundary nodes included.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceField {
    values: Vec<f64>,
}

impl SpaceField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            values: vec![0.0; grid.width()],
        }
    }

    /// Samples `f` at the interior nodes; boundary entries are set to zero
    /// regardless of `f`.
    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64) -> f64) -> Self {
        let mut values = vec![0.0; grid.width()];
        for (i, v) in values.iter_mut().enumerate().take(grid.nx + 1).skip(1) {
            *v = f(grid.x(i));
        }
        Self { values }
    }

    /// Builds a field from interior values only.
    pub fn from_interior(grid: &GridSpec, interior: &[f64]) -> Result<Self> {
        if interior.len() != grid.nx {
            return Err(Error::contract(format!(
                "expected {} interior values, got {}",
                grid.nx,
                interior.len()
            )));
        }
        let mut values = vec![0.0; grid.width()];
        values[1..=grid.nx].copy_from_slice(interior);
        Ok(Self { values })
    }

    /// Builds a field from a full vector; boundary entries must be exactly zero.
    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.width() {
            return Err(Error::contract(format!(
                "expected {} values, got {}",
                grid.width(),
                values.len()
            )));
        }
        if values[0] != 0.0 || values[grid.nx + 1] != 0.0 {
            return Err(Error::contract("boundary values must be zero"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interior(&self) -> &[f64] {
        &self.values[1..self.values.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
        }
    }
}

/// A trajectory: `nt + 1` frames stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct PathField {
    grid: GridSpec,
    data: Vec<f64>,
}

impl PathField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            data: vec![0.0; (grid.nt + 1) * grid.width()],
        }
    }

    /// Samples `f(t, x)` at every interior node of every level.
    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut p = Self::zeros(grid);
        for n in 0..=grid.nt {
            let t = grid.t(n);
            let frame = p.frame_mut(n);
            for (i, v) in frame.iter_mut().enumerate().take(grid.nx + 1).skip(1) {
                *v = f(t, grid.x(i));
            }
        }
        p
    }

    pub fn from_frames(grid: &GridSpec, frames: &[SpaceField]) -> Result<Self> {
        if frames.len() != grid.nt + 1 {
            return Err(Error::contract(format!(
                "expected {} frames, got {}",
                grid.nt + 1,
                frames.len()
            )));
        }
        let mut data = Vec::with_capacity((grid.nt + 1) * grid.width());
        for f in frames {
            if f.len() != grid.width() {
                return Err(Error::contract("frame width does not match grid"));
            }
            data.extend_from_slice(f.values());
        }
        Ok(Self { grid: *grid, data })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn levels(&self) -> usize {
        self.grid.nt + 1
    }

    pub fn frame(&self, n: usize) -> &[f64] {
        let w = self.grid.width();
        &self.data[n * w..(n + 1) * w]
    }

    pub fn frame_mut(&mut self, n: usize) -> &mut [f64] {
        let w = self.grid.width();
        &mut self.data[n * w..(n + 1) * w]
    }

    pub fn space_field(&self, n: usize) -> SpaceField {
        SpaceField {
            values: self.frame(n).to_vec(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// `a*self + b*other`.
    pub fn combine(&self, a: f64, other: &PathField, b: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::contract("paths live on different grids"));
        }
        Ok(Self {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn sub(&self, other: &PathField) -> Result<Self> {
        self.combine(1.0, other, -1.0)
    }
}

/// Discretized Cameron-Martin density `hdot(t_n, x_i)`, `n < nt`, interior `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Control {
    grid: GridSpec,
    hdot: Vec<f64>,
}

impl Control {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            grid: *grid,
            hdot: vec![0.0; grid.nt * grid.nx],
        }
    }

    pub fn from_fn(grid: &GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut c = Self::zeros(grid);
        for n in 0..grid.nt {
            for i in 0..grid.nx {
                c.hdot[n * grid.nx + i] = f(grid.t(n), grid.x(i + 1));
            }
        }
        c
    }

    pub fn from_values(grid: &GridSpec, hdot: Vec<f64>) -> Result<Self> {
        if hdot.len() != grid.nt * grid.nx {
            return Err(Error::contract(format!(
                "control needs {} x {} values, got {}",
                grid.nt,
                grid.nx,
                hdot.len()
            )));
        }
        if hdot.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("control entries must be finite"));
        }
        Ok(Self { grid: *grid, hdot })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Interior values at time level `n` (length `nx`).
    pub fn level(&self, n: usize) -> &[f64] {
        &self.hdot[n * self.grid.nx..(n + 1) * self.grid.nx]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.hdot
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            grid: self.grid,
            hdot: self.hdot.iter().map(|v| c * v).collect(),
        }
    }

    pub fn combine(&self, a: f64, other: &Control, b: f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::contract("controls live on different grids"));
        }
        Ok(Self {
            grid: self.grid,
            hdot: self
                .hdot
                .iter()
                .zip(&other.hdot)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    /// Membership in the ball `S_N = { ||h||_H <= N }`.
    pub fn in_ball(&self, radius: f64) -> bool {
        h_norm_sq(self, &self.grid).is_ok_and(|n2| n2 <= radius * radius)
    }
}

fn check_width(len: usize, grid: &GridSpec) -> Result<()> {
    if len != grid.width() {
        return Err(Error::contract(format!(
            "field has {len} values, grid expects {}",
            grid.width()
        )));
    }
    Ok(())
}

/// Discrete `L^2([0,1])` norm over interior nodes.
pub fn l2_norm(u: &[f64], grid: &GridSpec) -> Result<f64> {
    check_width(u.len(), grid)?;
    Ok(l2_norm_unchecked(u, grid.dx()))
}

pub(crate) fn l2_norm_unchecked(u: &[f64], dx: f64) -> f64 {
    let n = u.len();
    let s: f64 = u[1..n - 1].iter().map(|v| v * v).sum();
    (dx * s).sqrt()
}

/// `max_n ||p(t_n, .)||_2` over all recorded levels.
pub fn sup_l2_norm(p: &PathField, grid: &GridSpec) -> Result<f64> {
    if p.grid != *grid {
        return Err(Error::contract("path does not conform to grid"));
    }
    if p.data.is_empty() {
        return Err(Error::contract("empty path"));
    }
    let dx = grid.dx();
    Ok((0..p.levels())
        .map(|n| l2_norm_unchecked(p.frame(n), dx))
        .fold(0.0, f64::max))
}

/// `sup_n ||a_n - b_n||_2` without materializing the difference.
pub fn sup_l2_distance(a: &PathField, b: &PathField) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::contract("paths live on different grids"));
    }
    let dx = a.grid.dx();
    let mut best = 0.0f64;
    for n in 0..a.levels() {
        let (fa, fb) = (a.frame(n), b.frame(n));
        let s: f64 = fa
            .iter()
            .zip(fb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        best = best.max((dx * s).sqrt());
    }
    Ok(best)
}

/// `dt*dx*sum hdot^2`, the discrete `int_0^T int_0^1 hdot^2`.
pub fn h_norm_sq(h: &Control, grid: &GridSpec) -> Result<f64> {
    if h.grid != *grid {
        return Err(Error::contract("control does not conform to grid"));
    }
    Ok(h_inner_unchecked(&h.hdot, &h.hdot, grid))
}

/// Control-space inner product `dt*dx*sum a*b`.
pub fn h_inner(a: &Control, b: &Control) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::contract("controls live on different grids"));
    }
    Ok(h_inner_unchecked(&a.hdot, &b.hdot, &a.grid))
}

fn h_inner_unchecked(a: &[f64], b: &[f64], grid: &GridSpec) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    grid.dt() * grid.dx() * s
}

/// Path-space inner product `dt*dx*sum_{n>=1} sum_i a*b`.
///
/// Level 0 is excluded: every skeleton response starts from zero, so the
/// initial frame carries no information about the control.
pub fn path_inner(a: &PathField, b: &PathField) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::contract("paths live on different grids"));
    }
    Ok(path_inner_unchecked(a, b))
}

pub(crate) fn path_inner_unchecked(a: &PathField, b: &PathField) -> f64 {
    let w = a.grid.width();
    let s: f64 = a.data[w..]
        .iter()
        .zip(&b.data[w..])
        .map(|(x, y)| x * y)
        .sum();
    a.grid.dt() * a.grid.dx() * s
}
