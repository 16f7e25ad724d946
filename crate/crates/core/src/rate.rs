//! Moderate-deviation rate function `I(target) = inf { |h|_H^2 / 2 : X^h = target }`.
//!
//! The skeleton map `A: hdot -> X^h` is linear, so `I` is a min-norm problem.
//! It is solved by conjugate gradient on the Tikhonov system
//! `(A A* + reg) mu = target` in the discrete path inner product, with
//! `A*` the exact transpose of the implemented stepper; the minimizer is
//! `A* mu`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{h_norm_sq, path_inner_unchecked, sup_l2_distance, Control, PathField};
use crate::solvers::{Linearization, SimParams};

/// Default regularization ladder.
pub const REG_LADDER: [f64; 3] = [1e-2, 1e-4, 1e-6];

/// Sampled `|sigma|` below this is flagged as near-degenerate.
pub const SIGMA_FLOOR: f64 = 1e-3;

const DEFAULT_MAX_ITERATIONS: usize = 20_000;

#[derive(Debug, Clone)]
pub struct RateCertificate {
    /// `h_norm_sq(minimizer) / 2`.
    pub value: f64,
    pub minimizer: Control,
    /// Dual variable solving the regularized normal equations.
    pub multiplier: PathField,
    /// `sup_t ||X^minimizer - target||_2`, level 0 included.
    pub residual: f64,
    pub cg_iterations: usize,
    /// Final CG residual relative to the target, in the path norm.
    pub cg_relative_residual: f64,
    pub regularization: f64,
}

impl RateCertificate {
    pub fn summary(&self) -> RateSummary {
        RateSummary {
            regularization: self.regularization,
            value: self.value,
            residual: self.residual,
            cg_iterations: self.cg_iterations,
            cg_relative_residual: self.cg_relative_residual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub regularization: f64,
    pub value: f64,
    pub residual: f64,
    pub cg_iterations: usize,
    pub cg_relative_residual: f64,
}

/// Certificates along a decreasing regularization ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateLadder {
    pub entries: Vec<RateSummary>,
    /// Dual bound at the last (smallest) regularization.
    pub dual_bound: f64,
    /// Linear-in-reg extrapolation to `reg = 0` from the two smallest rungs.
    pub extrapolated_value: f64,
    /// The residual failed to shrink with the regularization.
    pub unattainable: bool,
    pub sigma_min: f64,
    pub sigma_near_degenerate: bool,
}

/// Skeleton map along one base path, ready for repeated evaluations.
#[derive(Debug, Clone)]
pub struct RateProblem {
    lin: Linearization,
    max_iterations: usize,
}

impl RateProblem {
    pub fn new(p: &SimParams, base: &PathField) -> Result<Self> {
        Ok(Self {
            lin: Linearization::new(p, base)?,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        })
    }

    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n;
        self
    }

    pub fn forward(&self, h: &Control) -> Result<PathField> {
        self.lin.forward(h)
    }

    pub fn adjoint(&self, mu: &PathField) -> Result<Control> {
        self.lin.adjoint(mu)
    }

    pub fn sigma_min(&self) -> f64 {
        self.lin.sigma_min()
    }

    fn check_target(&self, target: &PathField) -> Result<()> {
        if target.grid() != self.lin.grid() {
            return Err(Error::contract("target grid does not match simulation grid"));
        }
        if target.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::config("target", "entries must be finite"));
        }
        Ok(())
    }

    /// `<target, mu> - |A* mu|_H^2 / 2`, a lower bound on `I(target)` for every `mu`.
    pub fn lower_bound(&self, target: &PathField, mu: &PathField) -> Result<f64> {
        self.check_target(target)?;
        let h = self.adjoint(mu)?;
        Ok(path_inner_unchecked(target, mu) - 0.5 * h_norm_sq(&h, self.lin.grid())?)
    }

    pub fn evaluate(&self, target: &PathField, reg: f64, tol: f64) -> Result<RateCertificate> {
        self.check_target(target)?;
        if !(reg > 0.0 && reg.is_finite()) {
            return Err(Error::config("regularization", format!("must be positive, got {reg}")));
        }
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::config("tolerance", format!("must be positive, got {tol}")));
        }
        let grid = *self.lin.grid();
        let apply = |v: &PathField| -> Result<PathField> {
            let mut out = self.forward(&self.adjoint(v)?)?;
            for (o, x) in out.as_mut_slice().iter_mut().zip(v.as_slice()) {
                *o += reg * x;
            }
            out.frame_mut(0).fill(0.0);
            Ok(out)
        };
        // level 0 of the target is unreachable and carries no weight
        let mut b = target.clone();
        b.frame_mut(0).fill(0.0);
        let b_norm = path_inner_unchecked(&b, &b).sqrt();
        let mut mu = PathField::zeros(&grid);
        let mut iterations = 0;
        let mut rel = 0.0;
        if b_norm > 0.0 {
            let mut r = b.clone();
            let mut d = r.clone();
            let mut rs = path_inner_unchecked(&r, &r);
            loop {
                if rs.sqrt() <= tol * b_norm {
                    break;
                }
                if iterations >= self.max_iterations {
                    return Err(Error::NoConvergence {
                        iterations,
                        residual: rs.sqrt() / b_norm,
                    });
                }
                let ad = apply(&d)?;
                let alpha = rs / path_inner_unchecked(&d, &ad);
                for ((m, r), (dv, adv)) in mu
                    .as_mut_slice()
                    .iter_mut()
                    .zip(r.as_mut_slice())
                    .zip(d.as_slice().iter().zip(ad.as_slice()))
                {
                    *m += alpha * dv;
                    *r -= alpha * adv;
                }
                let rs_next = path_inner_unchecked(&r, &r);
                let beta = rs_next / rs;
                for (dv, rv) in d.as_mut_slice().iter_mut().zip(r.as_slice()) {
                    *dv = rv + beta * *dv;
                }
                rs = rs_next;
                iterations += 1;
                if !rs.is_finite() {
                    return Err(Error::config("target", "conjugate gradient produced NaN"));
                }
            }
            rel = rs.sqrt() / b_norm;
        }
        let minimizer = self.adjoint(&mu)?;
        let reached = self.forward(&minimizer)?;
        Ok(RateCertificate {
            value: 0.5 * h_norm_sq(&minimizer, &grid)?,
            residual: sup_l2_distance(&reached, target)?,
            minimizer,
            multiplier: mu,
            cg_iterations: iterations,
            cg_relative_residual: rel,
            regularization: reg,
        })
    }

    /// Runs every rung of `regs` (largest first) and extrapolates.
    pub fn ladder(&self, target: &PathField, regs: &[f64], tol: f64) -> Result<(RateLadder, RateCertificate)> {
        if regs.is_empty() || regs.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::config("reg_ladder", "must be a non-empty strictly decreasing list"));
        }
        let mut entries = Vec::with_capacity(regs.len());
        let mut last = None;
        for &reg in regs {
            let cert = self.evaluate(target, reg, tol)?;
            entries.push(cert.summary());
            last = Some(cert);
        }
        let last = last.expect("ladder is non-empty");
        let n = entries.len();
        let extrapolated_value = if n >= 2 {
            let (a, b) = (entries[n - 2], entries[n - 1]);
            b.value + (b.value - a.value) * b.regularization / (a.regularization - b.regularization)
        } else {
            entries[0].value
        };
        let target_size = (0..target.levels())
            .map(|k| crate::grid::l2_norm_unchecked(target.frame(k), target.grid().dx()))
            .fold(0.0, f64::max);
        let (first, final_) = (entries[0].residual, entries[n - 1].residual);
        let unattainable = final_ > 1e-3 * target_size && final_ > 0.1 * first;
        let sigma_min = self.sigma_min();
        Ok((
            RateLadder {
                dual_bound: self.lower_bound(target, &last.multiplier)?,
                entries,
                extrapolated_value,
                unattainable,
                sigma_min,
                sigma_near_degenerate: sigma_min < SIGMA_FLOOR,
            },
            last,
        ))
    }
}

/// The skeleton map `hdot -> X^h`.
pub fn forward_map(h: &Control, base: &PathField, p: &SimParams) -> Result<PathField> {
    Linearization::new(p, base)?.forward(h)
}

/// Exact discrete transpose of [`forward_map`].
pub fn adjoint_map(mu: &PathField, base: &PathField, p: &SimParams) -> Result<Control> {
    Linearization::new(p, base)?.adjoint(mu)
}

pub fn evaluate_rate(
    target: &PathField,
    base: &PathField,
    p: &SimParams,
    reg: f64,
    tol: f64,
) -> Result<RateCertificate> {
    RateProblem::new(p, base)?.evaluate(target, reg, tol)
}

pub fn rate_lower_bound_functional(
    target: &PathField,
    base: &PathField,
    p: &SimParams,
    mu: &PathField,
) -> Result<f64> {
    RateProblem::new(p, base)?.lower_bound(target, mu)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    use super::*;
    use crate::coefficients::CoefficientSet;
    use crate::grid::{GridSpec, SpaceField};
    use crate::solvers::solve_deterministic;

    fn setup(nx: usize, nt: usize) -> (SimParams, PathField) {
        let g = GridSpec::new(nx, nt, 0.5).unwrap();
        let eta = SpaceField::from_fn(&g, |x| (std::f64::consts::PI * x).sin());
        let p = SimParams::new(CoefficientSet::preset("burgers").unwrap(), eta, g).unwrap();
        let base = solve_deterministic(&p).unwrap().path;
        (p, base)
    }

    fn random_control(g: &GridSpec, seed: u64) -> Control {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..g.nt() * g.nx()).map(|_| rng.sample(StandardNormal)).collect();
        Control::from_values(g, v).unwrap()
    }

    fn smooth_multiplier(g: &GridSpec) -> PathField {
        PathField::from_fn(g, |t, x| t * (std::f64::consts::PI * x).sin() + t * t * x * (1.0 - x))
    }

    #[test]
    fn zero_target_has_zero_rate() {
        let (p, base) = setup(8, 32);
        let c = evaluate_rate(&PathField::zeros(&p.grid), &base, &p, 1e-4, 1e-10).unwrap();
        assert_eq!(c.value, 0.0);
        assert_eq!(c.residual, 0.0);
        assert!(c.minimizer.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(rate_lower_bound_functional(&PathField::zeros(&p.grid), &base, &p, &PathField::zeros(&p.grid)).unwrap(), 0.0);
    }

    #[test]
    fn recovers_min_norm_energy() {
        let (p, base) = setup(16, 64);
        let prob = RateProblem::new(&p, &base).unwrap();
        let h0 = prob.adjoint(&smooth_multiplier(&p.grid)).unwrap();
        let target = prob.forward(&h0).unwrap();
        let exact = 0.5 * h_norm_sq(&h0, &p.grid).unwrap();
        let cert = prob.evaluate(&target, 1e-6, 1e-10).unwrap();
        assert!((cert.value / exact - 1.0).abs() < 0.01, "{} vs {exact}", cert.value);
        let lb = prob.lower_bound(&target, &cert.multiplier).unwrap();
        assert!((lb / cert.value - 1.0).abs() < 0.02);
        // weak duality against the exact value
        assert!(lb <= exact * (1.0 + 1e-9));
    }

    #[test]
    fn feasible_controls_bound_the_rate() {
        let (p, base) = setup(8, 40);
        let prob = RateProblem::new(&p, &base).unwrap();
        for s in 0..5 {
            let h = random_control(&p.grid, s);
            let target = prob.forward(&h).unwrap();
            let cert = prob.evaluate(&target, 1e-6, 1e-10).unwrap();
            let cost = 0.5 * h_norm_sq(&h, &p.grid).unwrap();
            assert!(cert.value <= cost + 1e-6, "{} > {cost}", cert.value);
            let lb = prob.lower_bound(&target, &cert.multiplier).unwrap();
            assert!(lb <= cost + 1e-9);
        }
    }

    #[test]
    fn value_increases_as_regularization_shrinks() {
        let (p, base) = setup(12, 48);
        let prob = RateProblem::new(&p, &base).unwrap();
        let h0 = prob.adjoint(&smooth_multiplier(&p.grid)).unwrap();
        let target = prob.forward(&h0).unwrap();
        let exact = 0.5 * h_norm_sq(&h0, &p.grid).unwrap();
        let (ladder, _) = prob.ladder(&target, &REG_LADDER, 1e-10).unwrap();
        let v: Vec<f64> = ladder.entries.iter().map(|e| e.value).collect();
        assert!(v[0] <= v[1] && v[1] <= v[2], "{v:?}");
        assert!(v[2] <= exact * (1.0 + 1e-9));
        assert!((ladder.extrapolated_value - exact).abs() <= (v[2] - exact).abs() + 1e-12);
        assert!(!ladder.unattainable);
        assert!(!ladder.sigma_near_degenerate);
    }

    #[test]
    fn quadratic_scaling() {
        let (p, base) = setup(10, 40);
        let prob = RateProblem::new(&p, &base).unwrap();
        let h0 = prob.adjoint(&smooth_multiplier(&p.grid)).unwrap();
        let target = prob.forward(&h0).unwrap();
        let a = prob.evaluate(&target, 1e-6, 1e-11).unwrap().value;
        let b = prob.evaluate(&target.scaled(3.0), 1e-6, 1e-11).unwrap().value;
        assert!((b / (9.0 * a) - 1.0).abs() < 1e-6, "{b} vs {}", 9.0 * a);
    }

    #[test]
    fn target_with_initial_offset_is_flagged() {
        let (p, base) = setup(10, 40);
        let prob = RateProblem::new(&p, &base).unwrap();
        // X^h(0) = 0 for every h, so a constant-in-time target is out of reach
        let target = PathField::from_fn(&p.grid, |_, x| (std::f64::consts::PI * x).sin());
        let (ladder, _) = prob.ladder(&target, &REG_LADDER, 1e-10).unwrap();
        assert!(ladder.unattainable, "{ladder:?}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let (p, base) = setup(6, 12);
        let mut t = PathField::zeros(&p.grid);
        t.frame_mut(3)[2] = f64::NAN;
        match evaluate_rate(&t, &base, &p, 1e-4, 1e-8) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "target"),
            other => panic!("{other:?}"),
        }
        assert!(evaluate_rate(&PathField::zeros(&p.grid), &base, &p, 0.0, 1e-8).is_err());
        let prob = RateProblem::new(&p, &base).unwrap();
        assert!(prob.ladder(&PathField::zeros(&p.grid), &[1e-4, 1e-2], 1e-8).is_err());
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let (p, base) = setup(10, 40);
        let prob = RateProblem::new(&p, &base).unwrap().with_max_iterations(2);
        let h = random_control(&p.grid, 9);
        let target = prob.forward(&h).unwrap();
        match prob.evaluate(&target, 1e-8, 1e-14) {
            Err(Error::NoConvergence { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }
}
