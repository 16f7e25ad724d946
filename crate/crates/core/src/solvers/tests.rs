use std::cell::RefCell;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::coefficients::{CoefFn, Constants};
use crate::green::{apply_j, heat_semigroup, KernelConfig, KernelKind};
use crate::grid::{path_inner, sup_l2_distance, sup_l2_norm, h_inner};
use crate::noise::{sample_sheet, NoiseRealization, SeedSpec};

fn sine(grid: &GridSpec, a: f64) -> SpaceField {
    SpaceField::from_fn(grid, |x| a * (std::f64::consts::PI * x).sin())
}

fn burgers(grid: GridSpec) -> SimParams {
    SimParams::new(CoefficientSet::preset("burgers").unwrap(), sine(&grid, 1.0), grid).unwrap()
}

fn linear_drift(rate: f64) -> CoefficientSet {
    let z: CoefFn = Arc::new(|_, _, _| 0.0);
    CoefficientSet::custom(
        "linear",
        Arc::new(move |_, _, r| rate * r),
        Arc::new(move |_, _, _| rate),
        z.clone(),
        Arc::new(|_, _| 0.0),
        z,
        Arc::new(|_, _, _| 1.0),
        Constants {
            growth: rate.abs(),
            lipschitz: rate.abs(),
            derivative_lipschitz: 0.0,
            sigma_bound: 1.0,
        },
    )
}

fn heat_error(nx: usize, nt: usize, horizon: f64) -> f64 {
    let g = GridSpec::new(nx, nt, horizon).unwrap();
    let p = SimParams::new(CoefficientSet::heat(), sine(&g, 1.0), g).unwrap();
    let out = solve_deterministic(&p).unwrap();
    let exact = PathField::from_fn(&g, |t, x| {
        (-std::f64::consts::PI.powi(2) * t).exp() * (std::f64::consts::PI * x).sin()
    });
    sup_l2_distance(&out.path, &exact).unwrap()
}

fn random_control(g: &GridSpec, rng: &mut ChaCha8Rng) -> Control {
    let v = (0..g.nt() * g.nx()).map(|_| rng.sample(StandardNormal)).collect();
    Control::from_values(g, v).unwrap()
}

fn random_path(g: &GridSpec, rng: &mut ChaCha8Rng) -> PathField {
    let mut p = PathField::zeros(g);
    for n in 0..=g.nt() {
        for v in &mut p.frame_mut(n)[1..=g.nx()] {
            *v = rng.sample(StandardNormal);
        }
    }
    p
}

#[test]
fn zero_data_stays_zero() {
    let g = GridSpec::new(16, 32, 1.0).unwrap();
    let p = SimParams::new(CoefficientSet::heat(), SpaceField::zeros(&g), g).unwrap();
    let out = solve_deterministic(&p).unwrap();
    assert!(out.path.as_slice().iter().all(|&v| v == 0.0));
    assert_eq!(out.exceedance_level, None);
}

#[test]
fn heat_mode_decays_at_exact_rate() {
    let g = GridSpec::new(128, 4096, 0.1).unwrap();
    let p = SimParams::new(CoefficientSet::heat(), sine(&g, 1.0), g).unwrap();
    let out = solve_deterministic(&p).unwrap();
    let ratio = crate::grid::l2_norm(out.path.frame(4096), &g).unwrap()
        / crate::grid::l2_norm(p.initial.values(), &g).unwrap();
    // exp(-pi^2 * 0.1)
    let expected = 0.372_707_838_853_437_94;
    assert!((ratio / expected - 1.0).abs() < 0.01, "{ratio}");
    assert!(out.tridiagonal_residual < 1e-12);
}

#[test]
fn heat_error_is_first_order_in_dt() {
    // dt / dx^2 held at 0.4
    let errs: Vec<f64> = [(7, 16), (15, 64), (31, 256), (63, 1024)]
        .iter()
        .map(|&(nx, nt)| heat_error(nx, nt, 0.1))
        .collect();
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).ln() / 4f64.ln();
        assert!(order >= 0.9, "{errs:?}");
    }
}

#[test]
fn deterministic_matches_mild_form_picard() {
    let g = GridSpec::new(32, 256, 0.5).unwrap();
    let c = CoefficientSet::preset("burgers").unwrap();
    let p = SimParams::new(c.clone(), sine(&g, 2.0), g).unwrap();
    let stepper = solve_deterministic(&p).unwrap().path;

    let cfg = KernelConfig::default();
    let free = heat_semigroup(p.initial.values(), &g, &cfg).unwrap();
    let mut u = free.clone();
    for _ in 0..30 {
        let mut flux = PathField::zeros(&g);
        for n in 0..=g.nt() {
            let t = g.t(n);
            let src = u.frame(n).to_vec();
            let dst = flux.frame_mut(n);
            for i in 1..=g.nx() {
                dst[i] = c.g(t, g.x(i), src[i]);
            }
        }
        // U = free - J_{dG/dy}(g(U))
        let conv = apply_j(&flux, KernelKind::GreenDy, &g, &cfg).unwrap();
        let next = free.combine(1.0, &conv, -1.0).unwrap();
        let change = sup_l2_distance(&next, &u).unwrap();
        u = next;
        if change < 1e-12 {
            break;
        }
    }
    let rel = sup_l2_distance(&u, &stepper).unwrap() / sup_l2_norm(&stepper, &g).unwrap();
    assert!(rel < 0.01, "relative sup-L2 gap {rel}");
}

#[test]
fn reduction_lattice() {
    let g = GridSpec::new(24, 128, 0.5).unwrap();
    let p = burgers(g);
    let noise = sample_sheet(SeedSpec::new(3, 0), &g);
    let det = solve_deterministic(&p).unwrap();
    let at_zero = solve_spde(&p.clone().with_epsilon(0.0), &noise).unwrap();
    assert_eq!(det.path, at_zero.path);

    let mut quiet = p.clone().with_epsilon(0.3);
    quiet.coefficients = quiet.coefficients.with_constant_sigma(0.0);
    let q = solve_spde(&quiet, &noise).unwrap();
    assert_eq!(q.path, det.path);

    let sk = solve_skeleton(&p, &det.path, &Control::zeros(&g)).unwrap();
    assert!(sk.path.as_slice().iter().all(|&v| v == 0.0));

    let zero = NoiseRealization::zeros(&g);
    let x = solve_controlled(&p.clone().with_epsilon(1e-3), &det.path, &zero, &Control::zeros(&g)).unwrap();
    assert!(x.path.as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn controlled_equals_rescaled_difference() {
    let g = GridSpec::new(32, 256, 0.5).unwrap();
    for (preset, eps) in [("burgers", 1e-2), ("reaction_diffusion", 1e-3)] {
        let base_p = SimParams::new(CoefficientSet::preset(preset).unwrap(), sine(&g, 1.0), g).unwrap();
        let p = base_p.with_epsilon(eps);
        let det = solve_deterministic(&p).unwrap();
        let noise = sample_sheet(SeedSpec::new(8, 1), &g);
        let u = solve_spde(&p, &noise).unwrap();
        let theta = p.deviation_scale.theta(eps);
        let rescaled = u.path.combine(1.0 / theta, &det.path, -1.0 / theta).unwrap();
        let x = solve_controlled(&p, &det.path, &noise, &Control::zeros(&g)).unwrap();
        let gap = sup_l2_distance(&rescaled, &x.path).unwrap();
        let size = sup_l2_norm(&x.path, &g).unwrap();
        assert!(gap <= 1e-10 * size, "{preset}: gap {gap} size {size}");
    }
}

#[test]
fn controlled_approaches_skeleton_as_eps_vanishes() {
    let g = GridSpec::new(32, 256, 0.5).unwrap();
    let p = burgers(g).with_epsilon(1e-8);
    let det = solve_deterministic(&p).unwrap();
    let v = Control::from_fn(&g, |t, x| 3.0 * (std::f64::consts::PI * x).sin() * (1.0 + t));
    let noise = sample_sheet(SeedSpec::new(21, 0), &g);
    let x = solve_controlled(&p, &det.path, &noise, &v).unwrap();
    let sk = solve_skeleton(&p, &det.path, &v).unwrap();
    let rel = sup_l2_distance(&x.path, &sk.path).unwrap() / sup_l2_norm(&sk.path, &g).unwrap();
    assert!(rel < 0.05, "{rel}");
}

#[test]
fn controlled_rejects_large_deviation_scale() {
    let g = GridSpec::new(8, 16, 1.0).unwrap();
    let p = burgers(g).with_epsilon(0.5).with_scale(DeviationScale::Power(0.6));
    let det = solve_deterministic(&p).unwrap();
    let noise = NoiseRealization::zeros(&g);
    match solve_controlled(&p, &det.path, &noise, &Control::zeros(&g)) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "deviation_scale"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn linearized_is_linear_in_noise_and_silent_without_sigma() {
    let g = GridSpec::new(20, 100, 0.5).unwrap();
    let p = burgers(g);
    let det = solve_deterministic(&p).unwrap();
    let a = sample_sheet(SeedSpec::new(1, 0), &g);
    let b = sample_sheet(SeedSpec::new(1, 1), &g);
    let ab = a.combine(1.0, &b, 1.0).unwrap();
    let va = solve_linearized(&p, &det.path, &a).unwrap().path;
    let vb = solve_linearized(&p, &det.path, &b).unwrap().path;
    let vab = solve_linearized(&p, &det.path, &ab).unwrap().path;
    let sum = va.combine(1.0, &vb, 1.0).unwrap();
    assert!(sup_l2_distance(&sum, &vab).unwrap() < 1e-13 * sup_l2_norm(&vab, &g).unwrap());

    let mut quiet = p.clone();
    quiet.coefficients = quiet.coefficients.with_constant_sigma(0.0);
    let v = solve_linearized(&quiet, &det.path, &a).unwrap();
    assert!(v.path.as_slice().iter().all(|&x| x == 0.0));
}

#[test]
fn linearized_field_is_symmetric() {
    let g = GridSpec::new(15, 64, 0.25).unwrap();
    let p = burgers(g);
    let det = solve_deterministic(&p).unwrap();
    let paths = 10_000;
    let samples: Vec<f64> = (0..paths)
        .map(|k| {
            let noise = sample_sheet(SeedSpec::new(77, k), &g);
            solve_linearized(&p, &det.path, &noise).unwrap().path.frame(64)[8]
        })
        .collect();
    let n = paths as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = samples.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let skew = m3 / m2.powf(1.5);
    assert!(skew.abs() < 4.0 * (6.0 / n).sqrt(), "skewness {skew}");
}

#[test]
fn skeleton_is_linear_in_control() {
    let g = GridSpec::new(16, 80, 0.5).unwrap();
    let p = burgers(g);
    let det = solve_deterministic(&p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h1 = random_control(&g, &mut rng);
    let h2 = random_control(&g, &mut rng);
    let (a, b) = (1.7, -0.3);
    let x1 = solve_skeleton(&p, &det.path, &h1).unwrap().path;
    let x2 = solve_skeleton(&p, &det.path, &h2).unwrap().path;
    let x12 = solve_skeleton(&p, &det.path, &h1.combine(a, &h2, b).unwrap()).unwrap().path;
    let lin = x1.combine(a, &x2, b).unwrap();
    assert!(sup_l2_distance(&lin, &x12).unwrap() < 1e-13 * sup_l2_norm(&x12, &g).unwrap());
}

#[test]
fn skeleton_of_heat_matches_green_convolution() {
    let g = GridSpec::new(32, 512, 0.25).unwrap();
    let p = SimParams::new(CoefficientSet::heat(), SpaceField::zeros(&g), g).unwrap();
    let det = solve_deterministic(&p).unwrap();
    let h = Control::from_fn(&g, |t, x| (std::f64::consts::PI * x).sin() * (1.0 + 4.0 * t) + x * (1.0 - x));
    let sk = solve_skeleton(&p, &det.path, &h).unwrap().path;
    let mut src = PathField::zeros(&g);
    for n in 0..g.nt() {
        src.frame_mut(n)[1..=g.nx()].copy_from_slice(h.level(n));
    }
    let conv = apply_j(&src, KernelKind::Green, &g, &KernelConfig::default()).unwrap();
    let rel = sup_l2_distance(&sk, &conv).unwrap() / sup_l2_norm(&conv, &g).unwrap();
    assert!(rel < 0.01, "{rel}");
}

#[test]
fn adjoint_is_exact_transpose() {
    let g = GridSpec::new(12, 40, 0.5).unwrap();
    let p = SimParams::new(CoefficientSet::preset("burgers").unwrap(), sine(&g, 1.5), g).unwrap();
    let det = solve_deterministic(&p).unwrap();
    let lin = Linearization::new(&p, &det.path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let h = random_control(&g, &mut rng);
        let mu = random_path(&g, &mut rng);
        let ah = lin.forward(&h).unwrap();
        let amu = lin.adjoint(&mu).unwrap();
        let lhs = path_inner(&ah, &mu).unwrap();
        let rhs = h_inner(&h, &amu).unwrap();
        let scale = path_inner(&ah, &ah).unwrap().sqrt() * path_inner(&mu, &mu).unwrap().sqrt();
        assert!((lhs - rhs).abs() <= 1e-10 * scale, "{lhs} vs {rhs}");
    }
}

struct Recorder<'a> {
    inner: &'a NoiseRealization,
    rows: RefCell<Vec<usize>>,
}

impl NoiseSource for Recorder<'_> {
    fn grid(&self) -> &GridSpec {
        self.inner.grid()
    }
    fn row(&self, n: usize) -> &[f64] {
        self.rows.borrow_mut().push(n);
        self.inner.row(n)
    }
}

#[test]
fn solvers_consume_noise_rows_in_order_once() {
    let g = GridSpec::new(10, 30, 0.5).unwrap();
    let p = burgers(g).with_epsilon(1e-3);
    let det = solve_deterministic(&p).unwrap();
    let noise = sample_sheet(SeedSpec::new(0, 0), &g);
    let expected: Vec<usize> = (0..30).collect();
    let rec = Recorder { inner: &noise, rows: RefCell::new(Vec::new()) };
    solve_spde(&p, &rec).unwrap();
    assert_eq!(*rec.rows.borrow(), expected);
    rec.rows.borrow_mut().clear();
    solve_linearized(&p, &det.path, &rec).unwrap();
    assert_eq!(*rec.rows.borrow(), expected);
    rec.rows.borrow_mut().clear();
    solve_controlled(&p, &det.path, &rec, &Control::zeros(&g)).unwrap();
    assert_eq!(*rec.rows.borrow(), expected);
}

#[test]
fn noise_at_step_n_only_moves_later_levels() {
    let g = GridSpec::new(10, 30, 0.5).unwrap();
    let p = burgers(g).with_epsilon(1e-2);
    let noise = sample_sheet(SeedSpec::new(0, 0), &g);
    let mut raw = noise.as_slice().to_vec();
    raw[12 * 10 + 4] += 1.0;
    let bumped = NoiseRealization::from_values(&g, raw).unwrap();
    let a = solve_spde(&p, &noise).unwrap().path;
    let b = solve_spde(&p, &bumped).unwrap().path;
    for n in 0..=12 {
        assert_eq!(a.frame(n), b.frame(n));
    }
    assert_ne!(a.frame(13), b.frame(13));
}

#[test]
fn exceedance_is_first_crossing() {
    let g = GridSpec::new(16, 200, 0.5).unwrap();
    let p = SimParams::new(linear_drift(20.0), sine(&g, 1.0), g).unwrap().with_cap(1.5);
    let out = solve_deterministic(&p).unwrap();
    let norms: Vec<f64> = (0..=200)
        .map(|n| crate::grid::l2_norm(out.path.frame(n), &g).unwrap())
        .collect();
    let first = norms.iter().position(|&v| v >= 1.5);
    assert!(first.is_some());
    assert_eq!(out.exceedance_level, first);
    assert_eq!(out.exceeded(), out.sup_l2() >= 1.5);

    let calm = SimParams::new(CoefficientSet::heat(), sine(&g, 1.0), g).unwrap();
    let c = solve_deterministic(&calm).unwrap();
    assert_eq!(c.exceedance_level, None);
    let at_start = solve_deterministic(&calm.clone().with_cap(0.5)).unwrap();
    assert_eq!(at_start.exceedance_level, Some(0));
}

#[test]
fn blow_up_reports_step() {
    let g = GridSpec::new(16, 400, 1.0).unwrap();
    let z: CoefFn = Arc::new(|_, _, _| 0.0);
    let c = CoefficientSet::custom(
        "square",
        Arc::new(|_, _, r| r * r * r),
        Arc::new(|_, _, r| 3.0 * r * r),
        z.clone(),
        Arc::new(|_, _| 0.0),
        z,
        Arc::new(|_, _, _| 1.0),
        CoefficientSet::heat().constants(),
    );
    let p = SimParams::new(c, sine(&g, 50.0), g).unwrap();
    match solve_deterministic(&p) {
        Err(Error::BlowUp { step }) => assert!((1..=400).contains(&step)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn bounded_in_probability_small_noise() {
    let g = GridSpec::new(32, 512, 0.5).unwrap();
    let p = burgers(g).with_epsilon(1e-2);
    let exceeded = (0..256)
        .filter(|&k| {
            let noise = sample_sheet(SeedSpec::new(1234, k), &g);
            match solve_spde(&p, &noise) {
                Ok(out) => out.exceeded(),
                Err(_) => true,
            }
        })
        .count();
    assert!((exceeded as f64) / 256.0 < 0.01, "{exceeded} of 256 exceeded");
}

#[test]
fn invalid_params_name_fields() {
    let g = GridSpec::new(8, 8, 1.0).unwrap();
    let p = burgers(g).with_epsilon(-1.0);
    match solve_deterministic(&p) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "epsilon"),
        other => panic!("{other:?}"),
    }
    let other = GridSpec::new(9, 8, 1.0).unwrap();
    assert!(SimParams::new(CoefficientSet::heat(), SpaceField::zeros(&other), g).is_err());
}
