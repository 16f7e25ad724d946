use super::{par_paths, EpsilonSummary, StudyConfig, StudyResult};
use crate::error::{Error, Result};
use crate::grid::{h_norm_sq, l2_norm_unchecked, sup_l2_norm, Control, PathField};
use crate::noise::{sample_sheet, NoiseRealization, SeedSpec};
use crate::rate::{RateProblem, REG_LADDER};
use crate::solvers::{solve_controlled, solve_deterministic, SolveOutput};
use crate::stats::{
    effective_sample_size, loglog_fit, mean_estimate, wilson_interval, zero_hit_upper_bound, Z95,
};

/// Importance-sampling shift and rate-reference inputs.
#[derive(Debug, Clone)]
pub struct MdpOptions {
    /// Girsanov shift `v`, used alone. The default is a defensive mixture of
    /// zero and the cheapest controls reaching norm `delta` at `T/4, T/2,
    /// 3T/4, T`, with path `k` drawn from component `k mod 5`.
    pub is_control: Option<Control>,
    /// Reject a supplied control with `|v|_H` above this radius.
    pub control_radius: Option<f64>,
    /// Path inside the event whose rate is reported; defaults to the
    /// cheapest skeleton reaching `delta` at `T`.
    pub candidate_path: Option<PathField>,
    pub reg_ladder: Vec<f64>,
    pub cg_tolerance: f64,
}

impl Default for MdpOptions {
    fn default() -> Self {
        Self {
            is_control: None,
            control_radius: None,
            candidate_path: None,
            reg_ladder: REG_LADDER.to_vec(),
            cg_tolerance: 1e-10,
        }
    }
}

/// Cheapest way to reach norm `delta` at level `level`: the top eigenvector
/// `psi` of `A_m A_m*` (skeleton map to that level) by power iteration, and
/// its min-norm control `A*(psi at level m)` scaled so the skeleton reaches
/// `delta`. Returns (skeleton path, control).
fn cheapest_shift(problem: &RateProblem, cfg: &StudyConfig, level: usize) -> Result<(PathField, Control)> {
    let g = &cfg.grid;
    let pi = std::f64::consts::PI;
    let mut psi: Vec<f64> = (0..g.width()).map(|j| (pi * g.x(j)).sin()).collect();
    let mut control = Control::zeros(g);
    for _ in 0..30 {
        let norm = l2_norm_unchecked(&psi, g.dx());
        if norm == 0.0 {
            return Err(Error::Degenerate("skeleton map is zero".into()));
        }
        let mut mu = PathField::zeros(g);
        for (m, p) in mu.frame_mut(level).iter_mut().zip(&psi) {
            *m = p / norm;
        }
        control = problem.adjoint(&mu)?;
        psi = problem.forward(&control)?.frame(level).to_vec();
    }
    let path = problem.forward(&control)?;
    let reach = sup_l2_norm(&path, g)?;
    if reach == 0.0 {
        return Err(Error::Degenerate("skeleton map is zero".into()));
    }
    let s = cfg.event_threshold / reach;
    Ok((path.scaled(s), control.scaled(s)))
}

/// Mixture components used when no shift is supplied: zero (defensive) and
/// the cheapest shifts hitting `delta` at `T/4, T/2, 3T/4, T`.
const HIT_QUARTERS: [usize; 4] = [1, 2, 3, 4];

/// Likelihood ratio `dP/dQ` for the stratified mixture `Q = sum_c pi_c Q_c`,
/// where `Q_c` shifts the sheet by `lambda * int v_c` and path `k` is drawn
/// from component `k mod C`.
struct Mixture {
    log_pi: Vec<f64>,
    // Gram matrix of the shifts in H
    gram: Vec<Vec<f64>>,
}

impl Mixture {
    fn new(shifts: &[Control], n_paths: usize, grid: &crate::grid::GridSpec) -> Result<Self> {
        let c = shifts.len();
        let log_pi = (0..c)
            .map(|j| {
                let count = (n_paths + c - 1 - j) / c;
                (count as f64 / n_paths as f64).ln()
            })
            .collect();
        let w = grid.dt() * grid.dx();
        let gram = shifts
            .iter()
            .map(|a| {
                shifts
                    .iter()
                    .map(|b| w * a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum::<f64>())
                    .collect()
            })
            .collect();
        Ok(Self { log_pi, gram })
    }

    fn component(&self, k: u64) -> usize {
        (k % self.log_pi.len() as u64) as usize
    }

    /// `pairings[j]` is `<v_j, dW>` for the raw sheet; the drive seen by the
    /// equation is `dW + lambda v_c`.
    fn weight(&self, lambda: f64, c: usize, pairings: &[f64]) -> f64 {
        if self.log_pi.len() == 1 {
            let e = self.gram[0][0];
            return (-lambda * pairings[0] - 0.5 * lambda * lambda * e).exp();
        }
        let logs: Vec<f64> = (0..self.log_pi.len())
            .filter(|&j| self.log_pi[j].is_finite())
            .map(|j| {
                let drive = pairings[j] + lambda * self.gram[j][c];
                self.log_pi[j] + lambda * drive - 0.5 * lambda * lambda * self.gram[j][j]
            })
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = top + logs.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
        (-lse).exp()
    }
}

fn hit(out: &Result<SolveOutput>, delta: f64) -> Result<bool> {
    match out {
        Ok(o) => Ok(o.sup_l2() >= delta),
        Err(Error::BlowUp { .. }) => Ok(true),
        Err(e) => Err(e.clone()),
    }
}

// sum_n sum_i v ΔW, in storage order
fn shift_pairing(v: &Control, noise: &NoiseRealization) -> f64 {
    let g = v.grid();
    let s: f64 = v
        .as_slice()
        .iter()
        .zip(noise.as_slice())
        .map(|(a, b)| a * b)
        .sum();
    (g.dt() * g.dx()).sqrt() * s
}

/// Estimates `P(sup_t ||X^eps||_2 >= delta)` for the rescaled deviation
/// `X^eps = (U^eps - U^0) / (sqrt(eps) lambda)` by indicator averages and by
/// Girsanov importance sampling with shift `v`, and reports
/// `-ln P / lambda^2` beside the rate of a path in the event.
///
/// The small-noise limit is not reachable at desk-scale `eps`; the rate
/// values are a reference, not an asserted limit.
pub fn mdp_tail_study(cfg: &StudyConfig, opts: &MdpOptions) -> Result<StudyResult> {
    cfg.validate()?;
    cfg.deviation_scale.check_moderate(&cfg.epsilon_ladder)?;
    cfg.audit_coefficients()?;
    let p0 = cfg.base_params()?;
    let base = solve_deterministic(&p0)?.path;
    let delta = cfg.event_threshold;
    let problem = RateProblem::new(&p0, &base)?;
    let mut res = StudyResult::new("mdp");

    let nt = cfg.grid.nt();
    let mut default_shifts = Vec::new();
    for q in HIT_QUARTERS {
        default_shifts.push(cheapest_shift(&problem, cfg, (q * nt / 4).max(1))?);
    }
    let (default_path, _) = default_shifts.last().cloned().expect("non-empty");
    let candidate = opts.candidate_path.clone().unwrap_or(default_path);
    let (ladder, _) = problem.ladder(&candidate, &opts.reg_ladder, opts.cg_tolerance)?;
    let last = ladder.entries.last().expect("ladder is non-empty");
    res.push(None, "rate_certificate_value", last.value);
    res.push(None, "rate_extrapolated_value", ladder.extrapolated_value);
    res.push(None, "rate_residual", last.residual);
    res.push(None, "rate_dual_bound", ladder.dual_bound);
    res.push(None, "rate_unattainable", if ladder.unattainable { 1.0 } else { 0.0 });
    res.push(None, "sigma_min", ladder.sigma_min);
    if ladder.sigma_near_degenerate {
        res.notes.push(format!("sigma along U^0 drops to {}", ladder.sigma_min));
    }

    // a supplied shift is used alone; the default is a stratified mixture
    let shifts: Vec<Control> = match &opts.is_control {
        Some(v) => {
            if v.grid() != &cfg.grid {
                return Err(Error::config("is_control", "control grid does not match study grid"));
            }
            if let Some(r) = opts.control_radius {
                if !v.in_ball(r) {
                    return Err(Error::config("is_control", format!("control leaves the ball of radius {r}")));
                }
            }
            vec![v.clone()]
        }
        None => std::iter::once(Control::zeros(&cfg.grid))
            .chain(default_shifts.into_iter().map(|(_, v)| v))
            .collect(),
    };
    let v = shifts.last().expect("non-empty");
    let v_norm_sq = h_norm_sq(v, &cfg.grid)?;
    let reach = sup_l2_norm(&problem.forward(v)?, &cfg.grid)?;
    if reach > 0.0 {
        // v scaled to reach exactly delta is feasible for the event
        res.push(None, "rate_upper_bound", 0.5 * v_norm_sq * (delta / reach).powi(2));
    }
    res.push(None, "control_energy", 0.5 * v_norm_sq);
    let mixture = Mixture::new(&shifts, cfg.paths_per_epsilon, &cfg.grid)?;

    let params: Vec<_> = cfg
        .epsilon_ladder
        .iter()
        .map(|&e| cfg.params(e))
        .collect::<Result<_>>()?;
    let zero = Control::zeros(&cfg.grid);
    // per path, per eps: (naive hit, IS weighted indicator)
    let per_path = par_paths(cfg.threads, cfg.paths_per_epsilon, |k| {
        let noise = sample_sheet(SeedSpec::new(cfg.master_seed, k), &cfg.grid);
        let c = mixture.component(k);
        let pairings: Vec<f64> = shifts.iter().map(|s| shift_pairing(s, &noise)).collect();
        params
            .iter()
            .map(|p| {
                let naive = hit(&solve_controlled(p, &base, &noise, &zero), delta)?;
                let shifted = hit(&solve_controlled(p, &base, &noise, &shifts[c]), delta)?;
                let lambda = p.deviation_scale.lambda(p.epsilon);
                let w = if shifted { mixture.weight(lambda, c, &pairings) } else { 0.0 };
                Ok((naive, w))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let n = per_path.len();
    let mut log_rates = Vec::new();
    for (j, p) in params.iter().enumerate() {
        let eps = p.epsilon;
        let lambda = p.deviation_scale.lambda(eps);
        res.push(Some(eps), "lambda", lambda);
        let hits = per_path.iter().filter(|s| s[j].0).count();
        let p_naive = hits as f64 / n as f64;
        let naive_ci = if hits == 0 {
            res.notes.push(format!(
                "no naive hits at eps={eps}: one-sided 95% bound {}",
                zero_hit_upper_bound(n, 0.05)
            ));
            crate::stats::Interval { low: 0.0, high: zero_hit_upper_bound(n, 0.05) }
        } else {
            wilson_interval(hits, n, Z95)
        };
        {
            let row = res.push(Some(eps), "naive_probability", p_naive);
            row.std_error = Some((p_naive * (1.0 - p_naive) / n as f64).sqrt());
            row.ci_low = Some(naive_ci.low);
            row.ci_high = Some(naive_ci.high);
            row.n_paths = Some(n);
        }
        let weighted: Vec<f64> = per_path.iter().map(|s| s[j].1).collect();
        let m = mean_estimate(&weighted);
        let mut is_ci = m.interval(Z95);
        is_ci.low = is_ci.low.max(0.0);
        {
            let row = res.push(Some(eps), "is_probability", m.mean);
            row.std_error = Some(m.std_error);
            row.ci_low = Some(is_ci.low);
            row.ci_high = Some(is_ci.high);
            row.n_paths = Some(n);
        }
        let ess = effective_sample_size(&weighted);
        res.push(Some(eps), "is_effective_sample_size", ess);
        if ess < 10.0 {
            res.notes.push(format!("importance weights degenerate at eps={eps}: ESS {ess:.2} < 10"));
        }
        if j == 0 {
            let overlap = naive_ci.overlaps(&is_ci);
            res.push(Some(eps), "ci_overlap", if overlap { 1.0 } else { 0.0 });
        }
        if hits > 0 {
            res.push(Some(eps), "naive_log_rate", -p_naive.ln() / (lambda * lambda));
        }
        if m.mean > 0.0 {
            let r = -m.mean.ln() / (lambda * lambda);
            res.push(Some(eps), "is_log_rate", r);
            log_rates.push(r);
        }
        res.per_epsilon.push(EpsilonSummary {
            epsilon: eps,
            estimate: m.mean,
            std_error: m.std_error,
            n_paths: n,
            exceedance_fraction: p_naive,
        });
    }
    if log_rates.len() >= 2 {
        res.push(None, "is_log_rate_change", log_rates[log_rates.len() - 1] - log_rates[0]);
    }
    let xs: Vec<f64> = res.per_epsilon.iter().map(|s| s.epsilon).collect();
    let ys: Vec<f64> = res.per_epsilon.iter().map(|s| s.estimate).collect();
    let ses: Vec<f64> = res.per_epsilon.iter().map(|s| s.std_error).collect();
    res.push_fit(loglog_fit(&xs, &ys, &ses));
    res.notes.push(
        "-ln P / lambda^2 is reported beside the rate of a path in the event; the small-noise limit is not asserted"
            .into(),
    );
    Ok(res)
}
