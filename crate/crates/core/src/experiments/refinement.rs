use super::{par_paths, StudyConfig, StudyResult};
use crate::coefficients::CoefficientSet;
use crate::error::{Error, Result};
use crate::grid::{sup_l2_distance, GridSpec, PathField, SpaceField};
use crate::noise::{sample_sheet, NoiseRealization, SeedSpec};
use crate::solvers::{solve_deterministic, solve_spde, SimParams};
use crate::stats::mean_estimate;

/// Samples a fine path on the coarse lattice: level `f*n`, node `f*i`.
fn restrict(fine: &PathField, factor: usize, coarse: &GridSpec) -> PathField {
    let mut out = PathField::zeros(coarse);
    for n in 0..=coarse.nt() {
        let src = fine.frame(factor * n);
        let dst = out.frame_mut(n);
        for i in 1..=coarse.nx() {
            dst[i] = src[factor * i];
        }
    }
    out
}

fn refined_grid(g: &GridSpec, f: usize) -> Result<GridSpec> {
    GridSpec::new(f * (g.nx() + 1) - 1, f * g.nt(), g.horizon())
}

fn params_on(cfg: &StudyConfig, grid: GridSpec, eps: f64) -> Result<SimParams> {
    let eta = cfg.initial.values();
    let coarse = cfg.grid;
    // eta is resampled on the finer lattice by linear interpolation
    let initial = SpaceField::from_fn(&grid, |x| {
        let s = x / coarse.dx();
        let i = (s.floor() as usize).min(coarse.nx());
        let w = s - i as f64;
        eta[i] * (1.0 - w) + eta[(i + 1).min(coarse.nx() + 1)] * w
    });
    Ok(SimParams::new(cfg.coefficients.clone(), initial, grid)?
        .with_scale(cfg.deviation_scale.clone())
        .with_cap(cfg.cap())
        .with_epsilon(eps))
}

fn heat_sup_error(nx: usize, nt: usize, horizon: f64) -> Result<f64> {
    let g = GridSpec::new(nx, nt, horizon)?;
    let pi = std::f64::consts::PI;
    let eta = SpaceField::from_fn(&g, |x| (pi * x).sin());
    let out = solve_deterministic(&SimParams::new(CoefficientSet::heat(), eta, g)?)?;
    let exact = PathField::from_fn(&g, |t, x| (-pi * pi * t).exp() * (pi * x).sin());
    sup_l2_distance(&out.path, &exact)
}

/// Observed `(spatial, temporal)` orders of the stepper on the heat
/// eigenmode `exp(-pi^2 t) sin(pi x)` up to `T = 0.1`: space refined at
/// `dt = 0.1/65536`, time refined at `nx = 255`.
pub fn heat_convergence_orders() -> Result<(f64, f64)> {
    let s1 = heat_sup_error(15, 65_536, 0.1)?;
    let s2 = heat_sup_error(31, 65_536, 0.1)?;
    let t1 = heat_sup_error(255, 32, 0.1)?;
    let t2 = heat_sup_error(255, 64, 0.1)?;
    Ok(((s1 / s2).log2(), (t1 / t2).log2()))
}

/// Successive sup-L2 gaps between solutions on the study grid and on grids
/// refined by each factor, with refined noise that aggregates back to the
/// coarse realization.
pub fn grid_refinement_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let mut factors = cfg.refinement_factors.clone();
    factors.sort_unstable();
    factors.dedup();
    if factors.is_empty() {
        return Err(Error::config("refinement_factors", "needs at least one factor"));
    }
    let coarse = cfg.grid;
    let grids: Vec<GridSpec> = factors
        .iter()
        .map(|&f| refined_grid(&coarse, f))
        .collect::<Result<_>>()?;
    let mut res = StudyResult::new("refinement");

    let (spatial, temporal) = heat_convergence_orders()?;
    res.push(None, "heat_spatial_order", spatial);
    res.push(None, "heat_temporal_order", temporal);

    // deterministic chain on the study coefficients
    let mut levels = vec![solve_deterministic(&params_on(cfg, coarse, 0.0)?)?.path];
    for (&f, g) in factors.iter().zip(&grids) {
        levels.push(restrict(&solve_deterministic(&params_on(cfg, *g, 0.0)?)?.path, f, &coarse));
    }
    let det_gaps: Vec<f64> = levels
        .windows(2)
        .map(|w| sup_l2_distance(&w[0], &w[1]))
        .collect::<Result<_>>()?;
    for (&f, gap) in factors.iter().zip(&det_gaps) {
        res.push(None, &format!("deterministic_gap@{f}"), *gap);
    }
    if det_gaps.len() >= 2 {
        let k = det_gaps.len();
        let ratio = (factors[k - 1] / factors[k - 2]) as f64;
        res.push(None, "deterministic_observed_order", (det_gaps[k - 2] / det_gaps[k - 1]).ln() / ratio.ln());
    }

    for &eps in &cfg.epsilon_ladder {
        let coarse_p = params_on(cfg, coarse, eps)?;
        let fine_p: Vec<SimParams> = grids
            .iter()
            .map(|g| params_on(cfg, *g, eps))
            .collect::<Result<_>>()?;
        // per path: successive gaps, and the gap from re-aggregated noise
        let per_path = par_paths(cfg.threads, cfg.paths_per_epsilon, |k| {
            let noise = sample_sheet(SeedSpec::new(cfg.master_seed, k), &coarse);
            let u = solve_spde(&coarse_p, &noise)?.path;
            let mut paths = vec![u.clone()];
            let mut prev_factor = 1;
            let mut prev_noise: NoiseRealization = noise.clone();
            let mut aggregated_gap = 0.0;
            for (j, &f) in factors.iter().enumerate() {
                let fine_noise = prev_noise.refine(f / prev_factor)?;
                if j == 0 {
                    let back = fine_noise.coarsen(f)?;
                    let again = solve_spde(&coarse_p, &back)?.path;
                    aggregated_gap = u
                        .as_slice()
                        .iter()
                        .zip(again.as_slice())
                        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
                }
                paths.push(restrict(&solve_spde(&fine_p[j], &fine_noise)?.path, f, &coarse));
                prev_factor = f;
                prev_noise = fine_noise;
            }
            let gaps = paths
                .windows(2)
                .map(|w| sup_l2_distance(&w[0], &w[1]))
                .collect::<Result<Vec<_>>>()?;
            Ok((gaps, aggregated_gap))
        })?;
        for (j, &f) in factors.iter().enumerate() {
            let g: Vec<f64> = per_path.iter().map(|p| p.0[j]).collect();
            res.push_mean(eps, &format!("stochastic_gap@{f}"), &mean_estimate(&g));
        }
        let agg = per_path.iter().fold(0.0f64, |a, p| a.max(p.1));
        res.push(Some(eps), "aggregated_noise_gap", agg);
    }
    Ok(res)
}
