use super::{par_paths, EpsilonSummary, StudyConfig, StudyResult};
use crate::error::{Error, Result};
use crate::grid::{sup_l2_distance, PathField};
use crate::noise::{sample_sheet, SeedSpec};
use crate::solvers::{solve_deterministic, solve_linearized, solve_spde, SolveOutput};
use crate::stats::{loglog_fit, mean_estimate, wilson_interval, Z95};

/// Outcome of one stochastic solve under the amplitude cap.
enum Capped {
    Inside(SolveOutput),
    Exceeded(SolveOutput),
    BlownUp,
}

fn capped(result: Result<SolveOutput>) -> Result<Capped> {
    match result {
        Ok(out) if out.exceeded() => Ok(Capped::Exceeded(out)),
        Ok(out) => Ok(Capped::Inside(out)),
        Err(Error::BlowUp { .. }) => Ok(Capped::BlownUp),
        Err(e) => Err(e),
    }
}

// (localized statistic, unlocalized statistic) for one path at one eps
struct Sample {
    inside: Option<f64>,
    any: Option<f64>,
    extra: Option<f64>,
}

fn exceedance_row(res: &mut StudyResult, eps: f64, exceeded: usize, n: usize) -> f64 {
    let frac = exceeded as f64 / n as f64;
    let ci = wilson_interval(exceeded, n, Z95);
    let row = res.push(Some(eps), "exceedance_fraction", frac);
    row.ci_low = Some(ci.low);
    row.ci_high = Some(ci.high);
    row.n_paths = Some(n);
    frac
}

fn setup(cfg: &StudyConfig) -> Result<PathField> {
    cfg.validate()?;
    cfg.audit_coefficients()?;
    Ok(solve_deterministic(&cfg.base_params()?)?.path)
}

/// `E[sup_t ||U^eps - U^0||_2^2]` over paths that stay below the cap, and its
/// log-log slope in `eps`.
pub fn contraction_study(cfg: &StudyConfig) -> Result<StudyResult> {
    let base = setup(cfg)?;
    let params: Vec<_> = cfg
        .epsilon_ladder
        .iter()
        .map(|&e| cfg.params(e))
        .collect::<Result<_>>()?;
    let per_path = par_paths(cfg.threads, cfg.paths_per_epsilon, |k| {
        let noise = sample_sheet(SeedSpec::new(cfg.master_seed, k), &cfg.grid);
        params
            .iter()
            .map(|p| {
                Ok(match capped(solve_spde(p, &noise))? {
                    Capped::Inside(out) => {
                        let d = sup_l2_distance(&out.path, &base)?;
                        Sample { inside: Some(d * d), any: Some(d * d), extra: None }
                    }
                    Capped::Exceeded(out) => {
                        let d = sup_l2_distance(&out.path, &base)?;
                        Sample { inside: None, any: Some(d * d), extra: None }
                    }
                    Capped::BlownUp => Sample { inside: None, any: None, extra: None },
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut res = StudyResult::new("contraction");
    reduce_ladder(cfg, &per_path, &mut res, "mean_sup_sq_gap", "mean_sup_sq_gap_unlocalized", None)?;
    Ok(res)
}

/// Coupled `E[sup_t ||(U^eps - U^0)/sqrt(eps) - V||_2]` with `V` driven by
/// the same noise, plus the same statistic with `V` driven by independent
/// noise as a control.
pub fn clt_study(cfg: &StudyConfig) -> Result<StudyResult> {
    let base = setup(cfg)?;
    let p0 = cfg.base_params()?;
    let params: Vec<_> = cfg
        .epsilon_ladder
        .iter()
        .map(|&e| cfg.params(e))
        .collect::<Result<_>>()?;
    let per_path = par_paths(cfg.threads, cfg.paths_per_epsilon, |k| {
        let seed = SeedSpec::new(cfg.master_seed, k);
        let noise = sample_sheet(seed, &cfg.grid);
        let v = solve_linearized(&p0, &base, &noise)?.path;
        let other = sample_sheet(seed.family(1), &cfg.grid);
        let v_other = solve_linearized(&p0, &base, &other)?.path;
        params
            .iter()
            .map(|p| {
                let scale = 1.0 / p.epsilon.sqrt();
                let gaps = |out: &SolveOutput| -> Result<(f64, f64)> {
                    let fluct = out.path.combine(scale, &base, -scale)?;
                    Ok((sup_l2_distance(&fluct, &v)?, sup_l2_distance(&fluct, &v_other)?))
                };
                Ok(match capped(solve_spde(p, &noise))? {
                    Capped::Inside(out) => {
                        let (c, u) = gaps(&out)?;
                        Sample { inside: Some(c), any: Some(c), extra: Some(u) }
                    }
                    Capped::Exceeded(out) => {
                        let (c, _) = gaps(&out)?;
                        Sample { inside: None, any: Some(c), extra: None }
                    }
                    Capped::BlownUp => Sample { inside: None, any: None, extra: None },
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut res = StudyResult::new("clt");
    reduce_ladder(
        cfg,
        &per_path,
        &mut res,
        "coupled_mean_sup_gap",
        "coupled_mean_sup_gap_unlocalized",
        Some("uncoupled_mean_sup_gap"),
    )?;
    let est: Vec<f64> = res.per_epsilon.iter().map(|s| s.estimate).collect();
    let decreasing = est.windows(2).all(|w| w[1] < w[0]);
    res.push(None, "strictly_decreasing", if decreasing { 1.0 } else { 0.0 });
    let last = *cfg.epsilon_ladder.last().expect("validated non-empty");
    if let Some(u) = res.value("uncoupled_mean_sup_gap", Some(last)) {
        let c = est.last().copied().unwrap_or(f64::NAN);
        res.push(Some(last), "uncoupled_to_coupled_ratio", u / c);
    }
    Ok(res)
}

fn reduce_ladder(
    cfg: &StudyConfig,
    per_path: &[Vec<Sample>],
    res: &mut StudyResult,
    headline: &str,
    unlocalized: &str,
    extra: Option<&str>,
) -> Result<()> {
    let n = per_path.len();
    for (j, &eps) in cfg.epsilon_ladder.iter().enumerate() {
        let inside: Vec<f64> = per_path.iter().filter_map(|s| s[j].inside).collect();
        let any: Vec<f64> = per_path.iter().filter_map(|s| s[j].any).collect();
        if inside.is_empty() {
            return Err(Error::Degenerate(format!(
                "every path exceeded the amplitude cap at eps={eps}; raise the cap or lower eps"
            )));
        }
        let m = mean_estimate(&inside);
        res.push_mean(eps, headline, &m);
        res.push_mean(eps, unlocalized, &mean_estimate(&any));
        if let Some(name) = extra {
            let e: Vec<f64> = per_path.iter().filter_map(|s| s[j].extra).collect();
            res.push_mean(eps, name, &mean_estimate(&e));
        }
        let exceeded = n - inside.len();
        let frac = exceedance_row(res, eps, exceeded, n);
        let blown = n - any.len();
        if blown > 0 {
            res.notes.push(format!("{blown} paths blew up at eps={eps}"));
        }
        res.per_epsilon.push(EpsilonSummary {
            epsilon: eps,
            estimate: m.mean,
            std_error: m.std_error,
            n_paths: m.n,
            exceedance_fraction: frac,
        });
    }
    let xs: Vec<f64> = res.per_epsilon.iter().map(|s| s.epsilon).collect();
    let ys: Vec<f64> = res.per_epsilon.iter().map(|s| s.estimate).collect();
    let ses: Vec<f64> = res.per_epsilon.iter().map(|s| s.std_error).collect();
    res.push_fit(loglog_fit(&xs, &ys, &ses));
    Ok(())
}
