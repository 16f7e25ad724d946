//! Order-stable reductions, confidence intervals and log-log regression.

use serde::{Deserialize, Serialize};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Neumaier-compensated sum, evaluated in iteration order.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.low <= other.high && other.low <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn interval(&self, z: f64) -> Interval {
        Interval {
            low: self.mean - z * self.std_error,
            high: self.mean + z * self.std_error,
        }
    }
}

/// Sample mean and its standard error; `std_error` is 0 for a single value.
pub fn mean_estimate(values: &[f64]) -> MeanEstimate {
    let n = values.len();
    if n == 0 {
        return MeanEstimate {
            mean: f64::NAN,
            std_error: f64::NAN,
            n,
        };
    }
    let mean = neumaier_sum(values.iter().copied()) / n as f64;
    let std_error = if n > 1 {
        let ss = neumaier_sum(values.iter().map(|v| (v - mean) * (v - mean)));
        (ss / (n - 1) as f64 / n as f64).sqrt()
    } else {
        0.0
    };
    MeanEstimate { mean, std_error, n }
}

/// Wilson score interval for `hits` successes in `n` trials.
pub fn wilson_interval(hits: usize, n: usize, z: f64) -> Interval {
    if n == 0 {
        return Interval { low: 0.0, high: 1.0 };
    }
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Interval {
        low: (centre - half).max(0.0),
        high: (centre + half).min(1.0),
    }
}

/// One-sided upper bound on `p` after zero hits in `n` trials at level `1 - alpha`.
pub fn zero_hit_upper_bound(n: usize, alpha: f64) -> f64 {
    if n == 0 {
        1.0
    } else {
        1.0 - alpha.powf(1.0 / n as f64)
    }
}

/// Kish effective sample size `(sum w)^2 / sum w^2`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s = neumaier_sum(weights.iter().copied());
    let s2 = neumaier_sum(weights.iter().map(|w| w * w));
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_std_error: f64,
    pub slope_ci: Interval,
}

/// Weighted least squares of `ln y` on `ln x`. Each `ln y` gets the
/// delta-method variance `(se/y)^2`; if any standard error is zero the fit
/// is unweighted and the slope error comes from the residuals.
/// `None` when fewer than two points or any `x`, `y` is not positive.
pub fn loglog_fit(xs: &[f64], ys: &[f64], ses: &[f64]) -> Option<LogLogFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n || ses.len() != n {
        return None;
    }
    if xs.iter().chain(ys).any(|v| !(v.is_finite() && *v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let weighted = ses.iter().all(|s| s.is_finite() && *s > 0.0);
    let w: Vec<f64> = if weighted {
        ys.iter().zip(ses).map(|(y, s)| (y / s).powi(2)).collect()
    } else {
        vec![1.0; n]
    };
    let sw = neumaier_sum(w.iter().copied());
    let mx = neumaier_sum(w.iter().zip(&lx).map(|(w, x)| w * x)) / sw;
    let my = neumaier_sum(w.iter().zip(&ly).map(|(w, y)| w * y)) / sw;
    let sxx = neumaier_sum(w.iter().zip(&lx).map(|(w, x)| w * (x - mx).powi(2)));
    if sxx == 0.0 {
        return None;
    }
    let sxy = neumaier_sum((0..n).map(|k| w[k] * (lx[k] - mx) * (ly[k] - my)));
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = neumaier_sum((0..n).map(|k| w[k] * (ly[k] - intercept - slope * lx[k]).powi(2)));
    let ss_tot = neumaier_sum((0..n).map(|k| w[k] * (ly[k] - my).powi(2)));
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let slope_std_error = if weighted {
        (1.0 / sxx).sqrt()
    } else if n > 2 {
        (ss_res / (n - 2) as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    Some(LogLogFit {
        slope,
        intercept,
        r_squared,
        slope_std_error,
        slope_ci: Interval {
            low: slope - Z95 * slope_std_error,
            high: slope + Z95 * slope_std_error,
        },
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn compensated_sum_beats_naive() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier_sum(v), 2.0);
        let naive: f64 = v.iter().sum();
        assert_ne!(naive, 2.0);
    }

    #[test]
    fn mean_estimate_matches_hand_values() {
        let m = mean_estimate(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        // sample sd sqrt(5/3), se = sqrt(5/3)/2
        assert!((m.std_error - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(mean_estimate(&[3.0]).std_error, 0.0);
        assert!(mean_estimate(&[]).mean.is_nan());
    }

    #[test]
    fn wilson_covers_at_declared_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &p in &[0.02, 0.1, 0.5] {
            let (reps, n) = (2000, 200);
            let covered = (0..reps)
                .filter(|_| {
                    let hits = (0..n).filter(|_| rng.random::<f64>() < p).count();
                    wilson_interval(hits, n, Z95).contains(p)
                })
                .count() as f64
                / reps as f64;
            // binomial tolerance on the coverage itself
            let tol = 4.0 * (0.95 * 0.05 / reps as f64).sqrt();
            assert!(covered > 0.95 - tol - 0.01, "p={p} coverage {covered}");
        }
    }

    #[test]
    fn normal_interval_covers_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reps = 2000;
        let covered = (0..reps)
            .filter(|_| {
                let v: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
                mean_estimate(&v).interval(Z95).contains(0.5)
            })
            .count() as f64
            / reps as f64;
        assert!((covered - 0.95).abs() < 4.0 * (0.95 * 0.05 / reps as f64).sqrt() + 0.01, "{covered}");
    }

    #[test]
    fn zero_hit_bound() {
        // 1 - 0.05^(1/100)
        assert!((zero_hit_upper_bound(100, 0.05) - 0.029_513_049_607_039_932).abs() < 1e-12);
        assert_eq!(zero_hit_upper_bound(0, 0.05), 1.0);
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let xs = [1e-2, 1e-3, 1e-4];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.5)).collect();
        let ses: Vec<f64> = ys.iter().map(|y| 0.1 * y).collect();
        let fit = loglog_fit(&xs, &ys, &ses).unwrap();
        assert!((fit.slope - 0.5).abs() < 1e-12);
        assert!((fit.intercept - 3f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        // equal relative errors: se(slope) = 0.1 / sqrt(sum (lx - mean)^2)
        let d = 10f64.ln();
        assert!((fit.slope_std_error - 0.1 / (2.0 * d * d).sqrt()).abs() < 1e-12);
        assert!(loglog_fit(&xs, &[1.0, 0.0, 1.0], &ses).is_none());
        assert!(loglog_fit(&xs[..1], &ys[..1], &ses[..1]).is_none());
    }

    #[test]
    fn ess_of_equal_and_degenerate_weights() {
        assert_eq!(effective_sample_size(&[2.0; 10]), 10.0);
        assert_eq!(effective_sample_size(&[0.0, 5.0, 0.0]), 1.0);
        assert_eq!(effective_sample_size(&[0.0; 3]), 0.0);
    }
}
