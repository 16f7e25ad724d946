//! Quadrature helpers for kernel integrals with integrable singularities.

/// `int_a^b f(u) du` where `f` may blow up like `(u-a)^{-alpha}`, `alpha < 1`.
///
/// Substitutes `u = a + (b-a) w^m` with `m(1-alpha) >= 2`, which turns the
/// singularity into a vanishing factor, then applies the midpoint rule in `w`.
pub(crate) fn singular_integral(
    a: f64,
    b: f64,
    alpha: f64,
    nodes: usize,
    mut f: impl FnMut(f64) -> f64,
) -> f64 {
    debug_assert!(alpha < 1.0);
    let m = (2.0 / (1.0 - alpha.max(0.0))).ceil().max(2.0);
    let h = 1.0 / nodes as f64;
    let len = b - a;
    let mut s = 0.0;
    for k in 0..nodes {
        let w = (k as f64 + 0.5) * h;
        let u = a + len * w.powf(m);
        let jac = len * m * w.powf(m - 1.0);
        s += f(u) * jac;
    }
    s * h
}

/// Sorted nodes on `[0,1]`: a uniform base grid plus `per_feature` uniform
/// nodes on each `[centre - half_width, centre + half_width]`, clipped.
pub(crate) fn refined_nodes(features: &[(f64, f64)], per_feature: usize, base: usize) -> Vec<f64> {
    let mut nodes: Vec<f64> = (0..=base).map(|k| k as f64 / base as f64).collect();
    for &(c, hw) in features {
        let lo = (c - hw).max(0.0);
        let hi = (c + hw).min(1.0);
        if hi <= lo {
            continue;
        }
        let n = per_feature.max(2);
        for k in 0..n {
            nodes.push(lo + (hi - lo) * k as f64 / (n - 1) as f64);
        }
    }
    nodes.sort_by(f64::total_cmp);
    nodes.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    nodes
}

pub(crate) fn trapezoid(nodes: &[f64], values: &[f64]) -> f64 {
    nodes
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, v)| 0.5 * (x[1] - x[0]) * (v[0] + v[1]))
        .sum()
}

/// Least-squares slope of `ys` against `xs`.
pub(crate) fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}
