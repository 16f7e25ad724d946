//! Run configuration: a TOML file (or the JSON embedded in a manifest),
//! overridden by command-line flags, validated into core types before any
//! compute.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use spdelab_core::coefficients::{CoefficientSet, Constants};
use spdelab_core::experiments::StudyConfig;
use spdelab_core::rate::REG_LADDER;
use spdelab_core::solvers::{DeviationScale, SimParams};
use spdelab_core::{GridSpec, PathField, SpaceField};

use crate::error::CliError;
use crate::expr::{Expr, Point, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub nt: usize,
    pub horizon: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nx: 64,
            nt: 4096,
            horizon: 0.5,
        }
    }
}

/// Coefficients given as expressions; derivatives in `r` are exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomConfig {
    /// Reaction term in `t, x, r`.
    #[serde(default = "zero")]
    pub f: String,
    /// Flux part in `t, x, r`.
    #[serde(default = "zero")]
    pub g1: String,
    /// Flux part in `t, r`.
    #[serde(default = "zero")]
    pub g2: String,
    /// Noise coefficient in `t, x, r`.
    #[serde(default = "one")]
    pub sigma: String,
    pub growth: f64,
    pub lipschitz: f64,
    pub derivative_lipschitz: f64,
    pub sigma_bound: f64,
}

fn zero() -> String {
    "0".into()
}

fn one() -> String {
    "1".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateConfig {
    /// Target deviation path in `t, x`; must vanish at `t = 0`.
    pub target: String,
    pub regularization: Vec<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RateConfig {
    fn default() -> Self {
        Self {
            target: "0.2 * t * sin(pi * x)".into(),
            regularization: REG_LADDER.to_vec(),
            tolerance: 1e-10,
            max_iterations: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker count; absent means every core.
    pub threads: Option<usize>,
    pub out: String,
    pub grid: GridConfig,
    /// `burgers`, `reaction_diffusion`, `heat` or `custom`.
    pub preset: String,
    pub custom: Option<CustomConfig>,
    /// Initial condition in `x`.
    pub initial: String,
    /// Noise intensity for `simulate`.
    pub epsilon: f64,
    pub epsilon_ladder: Vec<f64>,
    pub paths: usize,
    /// Deviation scale in `eps`.
    pub lambda: String,
    /// Tail event radius for `mdp-study`.
    pub delta: f64,
    pub amplitude_cap: Option<f64>,
    pub refinement_factors: Vec<usize>,
    /// `simulate` writes every this many time levels, plus the last.
    pub snapshot_every: usize,
    pub rate: RateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            out: "out".into(),
            grid: GridConfig::default(),
            preset: "burgers".into(),
            custom: None,
            initial: "sin(pi * x)".into(),
            epsilon: 1e-2,
            epsilon_ladder: vec![1e-2, 1e-3, 1e-4],
            paths: 64,
            lambda: "eps^(-0.25)".into(),
            delta: 0.2,
            amplitude_cap: None,
            refinement_factors: vec![2, 4],
            snapshot_every: 64,
            rate: RateConfig::default(),
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub threads: Option<usize>,
    pub epsilon_ladder: Option<Vec<f64>>,
    pub preset: Option<String>,
    pub nx: Option<usize>,
    pub nt: Option<usize>,
    pub horizon: Option<f64>,
    pub epsilon: Option<f64>,
    pub paths: Option<usize>,
    pub delta: Option<f64>,
}

impl RunConfig {
    /// Reads TOML, or JSON when the extension is `.json` (a manifest or its
    /// `config` object).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::config("config", e.to_string()))?;
            let inner = value.get("config").cloned().unwrap_or(value);
            serde_json::from_value(inner).map_err(|e| CliError::config("config", e.to_string()))
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::config("config", e.message().to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        let Overrides {
            seed,
            out,
            threads,
            epsilon_ladder,
            preset,
            nx,
            nt,
            horizon,
            epsilon,
            paths,
            delta,
        } = o.clone();
        if let Some(v) = seed {
            self.seed = v;
        }
        if let Some(v) = out {
            self.out = v;
        }
        if threads.is_some() {
            self.threads = threads;
        }
        if let Some(v) = epsilon_ladder {
            self.epsilon_ladder = v;
        }
        if let Some(v) = preset {
            self.preset = v;
        }
        if let Some(v) = nx {
            self.grid.nx = v;
        }
        if let Some(v) = nt {
            self.grid.nt = v;
        }
        if let Some(v) = horizon {
            self.grid.horizon = v;
        }
        if let Some(v) = epsilon {
            self.epsilon = v;
        }
        if let Some(v) = paths {
            self.paths = v;
        }
        if let Some(v) = delta {
            self.delta = v;
        }
    }

    pub fn grid(&self) -> Result<GridSpec, CliError> {
        let g = &self.grid;
        GridSpec::new(g.nx, g.nt, g.horizon).map_err(|e| CliError::config("grid", e.to_string()))
    }

    pub fn coefficients(&self) -> Result<CoefficientSet, CliError> {
        match self.preset.as_str() {
            "heat" => Ok(CoefficientSet::heat()),
            "custom" => {
                let c = self
                    .custom
                    .as_ref()
                    .ok_or_else(|| CliError::config("custom", "preset \"custom\" needs a [custom] table"))?;
                custom_coefficients(c)
            }
            name => Ok(CoefficientSet::preset(name)?),
        }
    }

    pub fn initial(&self, grid: &GridSpec) -> Result<SpaceField, CliError> {
        let e = parse("initial", &self.initial, &[Var::X])?;
        let interior: Vec<f64> = (1..=grid.nx())
            .map(|i| e.eval(Point { x: grid.x(i), ..Point::default() }))
            .collect();
        if interior.iter().any(|v| !v.is_finite()) {
            return Err(CliError::config("initial", "not finite on the grid"));
        }
        Ok(SpaceField::from_interior(grid, &interior)?)
    }

    pub fn scale(&self) -> Result<DeviationScale, CliError> {
        let e = parse("lambda", &self.lambda, &[Var::Eps])?;
        let label = e.source().to_string();
        Ok(DeviationScale::Custom {
            label,
            lambda: Arc::new(move |eps| e.eval(Point { eps, ..Point::default() })),
        })
    }

    pub fn params(&self) -> Result<SimParams, CliError> {
        let grid = self.grid()?;
        let mut p = SimParams::new(self.coefficients()?, self.initial(&grid)?, grid)?
            .with_scale(self.scale()?)
            .with_epsilon(self.epsilon);
        if let Some(m) = self.amplitude_cap {
            p = p.with_cap(m);
        }
        p.validate()?;
        Ok(p)
    }

    pub fn study(&self) -> Result<StudyConfig, CliError> {
        let grid = self.grid()?;
        let mut s = StudyConfig::new(self.coefficients()?, grid);
        s.initial = self.initial(&grid)?;
        s.epsilon_ladder = self.epsilon_ladder.clone();
        s.paths_per_epsilon = self.paths;
        s.deviation_scale = self.scale()?;
        s.event_threshold = self.delta;
        s.master_seed = self.seed;
        s.amplitude_cap = self.amplitude_cap;
        s.threads = self.threads;
        s.refinement_factors = self.refinement_factors.clone();
        s.validate()?;
        Ok(s)
    }

    pub fn rate_target(&self, grid: &GridSpec) -> Result<PathField, CliError> {
        let e = parse("rate.target", &self.rate.target, &[Var::T, Var::X])?;
        let target = PathField::from_fn(grid, |t, x| e.eval(Point { t, x, ..Point::default() }));
        if target.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(CliError::config("rate.target", "not finite on the grid"));
        }
        Ok(target)
    }

    /// Every check that needs no compute.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.out.is_empty() {
            return Err(CliError::config("out", "must not be empty"));
        }
        if self.snapshot_every == 0 {
            return Err(CliError::config("snapshot_every", "must be at least 1"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(CliError::config("epsilon", "must be finite and non-negative"));
        }
        let r = &self.rate;
        if r.regularization.is_empty() || r.regularization.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(CliError::config("rate.regularization", "needs positive finite values"));
        }
        if !(r.tolerance.is_finite() && r.tolerance > 0.0) {
            return Err(CliError::config("rate.tolerance", "must be positive"));
        }
        if r.max_iterations == 0 {
            return Err(CliError::config("rate.max_iterations", "must be at least 1"));
        }
        self.params()?;
        self.study()?;
        self.rate_target(&self.grid()?)?;
        Ok(())
    }
}

fn parse(field: &str, src: &str, vars: &[Var]) -> Result<Expr, CliError> {
    Expr::parse(src, vars).map_err(|e| CliError::config(field, e.to_string()))
}

fn custom_coefficients(c: &CustomConfig) -> Result<CoefficientSet, CliError> {
    const TXR: &[Var] = &[Var::T, Var::X, Var::R];
    let f = Arc::new(parse("custom.f", &c.f, TXR)?);
    let g1 = Arc::new(parse("custom.g1", &c.g1, TXR)?);
    let g2 = Arc::new(parse("custom.g2", &c.g2, &[Var::T, Var::R])?);
    let sigma = Arc::new(parse("custom.sigma", &c.sigma, TXR)?);
    for (field, v) in [
        ("custom.growth", c.growth),
        ("custom.lipschitz", c.lipschitz),
        ("custom.derivative_lipschitz", c.derivative_lipschitz),
        ("custom.sigma_bound", c.sigma_bound),
    ] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(CliError::config(field, "must be finite and non-negative"));
        }
    }
    let at = |t, x, r| Point { t, x, r, eps: 0.0 };
    let (fv, fd) = (f.clone(), f);
    let (g1v, g2v, g1d, g2d) = (g1.clone(), g2.clone(), g1, g2);
    Ok(CoefficientSet::custom(
        "custom",
        Arc::new(move |t, x, r| fv.eval(at(t, x, r))),
        Arc::new(move |t, x, r| fd.eval_dual(at(t, x, r)).deriv),
        Arc::new(move |t, x, r| g1v.eval(at(t, x, r))),
        Arc::new(move |t, r| g2v.eval(at(t, 0.0, r))),
        Arc::new(move |t, x, r| g1d.eval_dual(at(t, x, r)).deriv + g2d.eval_dual(at(t, 0.0, r)).deriv),
        Arc::new(move |t, x, r| sigma.eval(at(t, x, r))),
        Constants {
            growth: c.growth,
            lipschitz: c.lipschitz,
            derivative_lipschitz: c.derivative_lipschitz,
            sigma_bound: c.sigma_bound,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(e: CliError) -> String {
        match e {
            CliError::Config { field, .. } => field,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let c = RunConfig::from_toml("seed = 7\n[grid]\nnx = 31\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.grid.nx, 31);
        assert_eq!(c.grid.nt, 4096);
        let text = toml::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert_eq!(field(RunConfig::from_toml("sed = 7").unwrap_err()), "config");
    }

    #[test]
    fn fields_are_named() {
        let bad = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            field(c.validate().unwrap_err())
        };
        assert_eq!(bad(&|c| c.preset = "nope".into()), "preset");
        assert_eq!(bad(&|c| c.preset = "custom".into()), "custom");
        assert_eq!(bad(&|c| c.initial = "sin(".into()), "initial");
        assert_eq!(bad(&|c| c.lambda = "x".into()), "lambda");
        assert_eq!(bad(&|c| c.epsilon_ladder = vec![1e-3, 1e-2]), "epsilon_ladder");
        assert_eq!(bad(&|c| c.grid.nx = 0), "grid");
        assert_eq!(bad(&|c| c.rate.target = "r".into()), "rate.target");
        assert_eq!(bad(&|c| c.rate.regularization = vec![]), "rate.regularization");
        assert_eq!(bad(&|c| c.snapshot_every = 0), "snapshot_every");
    }

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            seed: Some(3),
            nx: Some(15),
            epsilon_ladder: Some(vec![1e-1, 1e-2]),
            ..Overrides::default()
        });
        assert_eq!((c.seed, c.grid.nx), (3, 15));
        assert_eq!(c.epsilon_ladder, vec![1e-1, 1e-2]);
    }

    #[test]
    fn custom_burgers_matches_preset() {
        let c = CustomConfig {
            f: "0".into(),
            g1: "0.5 * min(max(r, -20), 20)^2".into(),
            g2: "0".into(),
            sigma: "1".into(),
            growth: 400.0,
            lipschitz: 40.0,
            derivative_lipschitz: 1.0,
            sigma_bound: 1.0,
        };
        let set = custom_coefficients(&c).unwrap();
        assert_eq!(set.g(0.1, 0.3, 2.0), 2.0);
        assert_eq!(set.g_prime(0.1, 0.3, 2.0), 2.0);
        assert_eq!(set.g_prime(0.1, 0.3, 25.0), 0.0);
        let mut bad = c;
        bad.g2 = "x".into();
        assert_eq!(field(custom_coefficients(&bad).unwrap_err()), "custom.g2");
    }
}
