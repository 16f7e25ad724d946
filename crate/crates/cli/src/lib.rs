//! Command-line driver: loads and validates a run configuration, runs one
//! solve or study, and writes CSV files plus a `manifest.json` to the output
//! directory.

pub mod config;
pub mod error;
pub mod expr;
pub mod manifest;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use spdelab_core::experiments::{
    clt_study, contraction_study, grid_refinement_study, mdp_tail_study, num, MdpOptions, StudyResult, CSV_HEADER,
};
use spdelab_core::green::{audit_bounds, AuditPlan, KernelConfig};
use spdelab_core::noise::{sample_sheet, SeedSpec};
use spdelab_core::rate::RateProblem;
use spdelab_core::solvers::{solve_deterministic, solve_spde};

pub use config::{Overrides, RunConfig};
pub use error::CliError;
pub use manifest::{OutputSet, RunManifest, MANIFEST_NAME};

#[derive(Debug, Parser)]
#[command(name = "spdelab", version, about = "Small-noise studies for semilinear stochastic heat equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// One path at `--epsilon` (0 gives the deterministic solution).
    Simulate,
    /// Coupled fluctuation gap against the linearized field.
    CltStudy,
    /// Mean squared sup-gap `E sup ||U^eps - U^0||^2` over the ladder.
    ContractionStudy,
    /// Tail probabilities, naive and importance sampled, beside the rate.
    MdpStudy,
    /// Rate of the configured target path along a regularization ladder.
    Rate,
    /// Fitted constants of the heat-kernel estimates.
    KernelAudit,
    /// Heat convergence orders and gaps under grid refinement.
    RefineStudy,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::CltStudy => "clt-study",
            Command::ContractionStudy => "contraction-study",
            Command::MdpStudy => "mdp-study",
            Command::Rate => "rate",
            Command::KernelAudit => "kernel-audit",
            Command::RefineStudy => "refine-study",
        }
    }
}

#[derive(Debug, Args)]
struct Flags {
    /// TOML config, or a manifest / config JSON from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Comma-separated, strictly decreasing.
    #[arg(long, global = true, value_delimiter = ',')]
    epsilon_ladder: Option<Vec<f64>>,
    /// burgers, reaction_diffusion, heat or custom.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    nx: Option<usize>,
    #[arg(long, global = true)]
    nt: Option<usize>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// Noise intensity for `simulate`.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Paths per ladder point.
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Tail event radius for `mdp-study`.
    #[arg(long, global = true)]
    delta: Option<f64>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            threads: self.threads,
            epsilon_ladder: self.epsilon_ladder.clone(),
            preset: self.preset.clone(),
            nx: self.nx,
            nt: self.nt,
            horizon: self.horizon,
            epsilon: self.epsilon,
            paths: self.paths,
            delta: self.delta,
        }
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
/// Errors go to stderr as one JSON line.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command, &cli.flags) {
        Ok(m) => {
            let files: Vec<&str> = m.files.iter().map(|f| f.name.as_str()).collect();
            println!("{}: wrote {} and {MANIFEST_NAME} to {}", m.subcommand, files.join(", "), m.config.out);
            0
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.report()).expect("report serializes"));
            e.exit_code()
        }
    }
}

fn execute(command: Command, flags: &Flags) -> Result<RunManifest, CliError> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&flags.overrides());
    cfg.validate()?;
    let started = manifest::now();
    let mut out = OutputSet::new(&cfg.out);
    match command {
        Command::Simulate => simulate(&cfg, &mut out)?,
        Command::CltStudy => study(clt_study(&cfg.study()?)?, &mut out),
        Command::ContractionStudy => study(contraction_study(&cfg.study()?)?, &mut out),
        Command::MdpStudy => study(mdp_tail_study(&cfg.study()?, &MdpOptions::default())?, &mut out),
        Command::RefineStudy => study(grid_refinement_study(&cfg.study()?)?, &mut out),
        Command::Rate => rate(&cfg, &mut out)?,
        Command::KernelAudit => kernel_audit(&mut out)?,
    }
    out.finish(command.name(), &cfg, started)
}

fn study(res: StudyResult, out: &mut OutputSet) {
    out.add(&format!("{}.csv", res.study), res.to_csv());
    out.notes.extend(res.notes);
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn simulate(cfg: &RunConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let p = cfg.params()?;
    let g = p.grid;
    let res = if p.epsilon == 0.0 {
        solve_deterministic(&p)?
    } else {
        solve_spde(&p, &sample_sheet(SeedSpec::new(cfg.seed, 0), &g))?
    };
    let mut path = String::from("level,t,x,value\n");
    for n in (0..=g.nt()).filter(|n| n % cfg.snapshot_every == 0 || *n == g.nt()) {
        let t = g.t(n);
        for (i, v) in res.path.frame(n).iter().enumerate() {
            let _ = writeln!(path, "{n},{},{},{}", num(t), num(g.x(i)), num(*v));
        }
    }
    out.add("simulate.csv", path);

    let eps = num(p.epsilon);
    let mut summary = format!("{CSV_HEADER}\n");
    for (stat, v) in [
        ("sup_l2", Some(res.sup_l2())),
        ("max_abs", Some(res.max_abs.iter().copied().fold(0.0, f64::max))),
        ("amplitude_cap", Some(p.amplitude_cap)),
        ("exceedance_time", res.exceedance_time()),
        ("tridiagonal_residual", Some(res.tridiagonal_residual)),
    ] {
        let _ = writeln!(summary, "simulate,{eps},{stat},{},,,,1", opt(v));
    }
    out.add("simulate_summary.csv", summary);
    Ok(())
}

fn rate(cfg: &RunConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let p = cfg.params()?;
    let base = solve_deterministic(&p)?.path;
    let target = cfg.rate_target(&p.grid)?;
    let problem = RateProblem::new(&p, &base)?.with_max_iterations(cfg.rate.max_iterations);
    let (ladder, _) = problem.ladder(&target, &cfg.rate.regularization, cfg.rate.tolerance)?;
    let mut csv = String::from("regularization,value,residual,cg_iterations,cg_relative_residual\n");
    for e in &ladder.entries {
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            num(e.regularization),
            num(e.value),
            num(e.residual),
            e.cg_iterations,
            num(e.cg_relative_residual)
        );
    }
    out.add("rate.csv", csv);
    let mut summary = format!("{CSV_HEADER}\n");
    for (stat, v) in [
        ("extrapolated_value", ladder.extrapolated_value),
        ("dual_bound", ladder.dual_bound),
        ("unattainable", if ladder.unattainable { 1.0 } else { 0.0 }),
        ("sigma_min", ladder.sigma_min),
    ] {
        let _ = writeln!(summary, "rate,,{stat},{},,,,", num(v));
    }
    out.add("rate_summary.csv", summary);
    if ladder.unattainable {
        out.notes.push("target looks unattainable: residual does not shrink with the regularization".into());
    }
    if ladder.sigma_near_degenerate {
        out.notes.push(format!("sigma along U^0 drops to {}", ladder.sigma_min));
    }
    Ok(())
}

fn kernel_audit(out: &mut OutputSet) -> Result<(), CliError> {
    let report = audit_bounds(&KernelConfig::default(), &AuditPlan::default())?;
    let mut csv =
        String::from("estimate,parameter,samples,degenerate,fitted_constant,pass,observed_slope,predicted_slope\n");
    for r in &report.records {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.estimate,
            opt(r.parameter),
            r.samples,
            r.degenerate,
            num(r.fitted_constant),
            r.pass,
            opt(r.observed_slope),
            opt(r.predicted_slope)
        );
    }
    out.add("kernel_audit.csv", csv);
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    out.add("kernel_audit.json", json);
    if !report.all_pass() {
        return Err(CliError::Core(spdelab_core::Error::Degenerate(
            "a kernel estimate has no finite constant on the sample plan".into(),
        )));
    }
    Ok(())
}
