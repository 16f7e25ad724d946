//! Constant-coefficient tridiagonal system `I - dt * Laplacian_h` on the
//! interior nodes, factored once per grid.

use crate::grid::GridSpec;

#[derive(Debug, Clone)]
pub(crate) struct HeatMatrix {
    diag: f64,
    off: f64,
    // modified super-diagonal and reciprocal pivots of the Thomas sweep
    upper: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl HeatMatrix {
    pub(crate) fn new(grid: &GridSpec) -> Self {
        let r = grid.dt() / (grid.dx() * grid.dx());
        Self::from_bands(grid.nx(), 1.0 + 2.0 * r, -r)
    }

    fn from_bands(n: usize, diag: f64, off: f64) -> Self {
        let mut upper = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let pivot = diag - off * prev;
            inv_pivot[i] = 1.0 / pivot;
            prev = off * inv_pivot[i];
            upper[i] = prev;
        }
        Self {
            diag,
            off,
            upper,
            inv_pivot,
        }
    }

    /// Overwrites `b` with the solution of `M x = b`. `M` is symmetric, so
    /// this also applies `M^{-T}`.
    pub(crate) fn solve(&self, b: &mut [f64]) {
        let n = b.len();
        debug_assert_eq!(n, self.upper.len());
        let mut prev = 0.0;
        for i in 0..n {
            prev = (b[i] - self.off * prev) * self.inv_pivot[i];
            b[i] = prev;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            b[i] -= self.upper[i] * b[i + 1];
        }
    }

    /// `max_i |(M x - b)_i|`.
    pub(crate) fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let n = x.len();
        (0..n)
            .map(|i| {
                let left = if i > 0 { x[i - 1] } else { 0.0 };
                let right = if i + 1 < n { x[i + 1] } else { 0.0 };
                (self.diag * x[i] + self.off * (left + right) - b[i]).abs()
            })
            .fold(0.0, f64::max)
    }
}
