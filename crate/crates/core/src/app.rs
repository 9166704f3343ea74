//! The `ftl-lab` command line: config handling, subcommands and artifacts.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::bvp::{self, BvpOptions, BvpProblem, BvpSolution, ProblemKind};
use crate::config::{self, ConfigError, RunConfig};
use crate::csv::{self, Cell, CsvTable};
use crate::curve::{ProfileCurve, RightTail};
use crate::dde::{self, SolveOptions};
use crate::diagnostics::{self, Pattern, Perturbation, StabilityOptions};
use crate::error::Error;
use crate::macro_ref;
use crate::model::ModelParams;
use crate::moving_frame::{self, FrameSpec, TravelOptions};
use crate::rates;
use crate::sim::{self, SimOptions};
use crate::svg::{self, Plot, Series};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(
    name = "ftl-lab",
    version,
    about = "Traveling-wave profiles of the follow-the-leader traffic model",
    after_help = config::help_text()
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Config file: [section] headers followed by key = value lines.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. --set solver.h=0.001 (repeatable).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (overrides run.out).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Asymptotic rates lambda_+, lambda_- and their bounds.
    Rates,
    /// One backward solve of the profile equation from an exponential tail.
    ProfileSolve,
    /// Anchor sequence converging to the two-point profile (or a batch over problem.pairs).
    Bvp,
    /// Simulate a platoon generated from the profile.
    Simulate,
    /// Per-car takeover times against t_p = ell / f_bar.
    Periodicity,
    /// Envelope shifts of a perturbed profile platoon.
    Stability,
    /// Viscous and continuum references and the car-length sweep.
    CompareMacro,
    /// Profile in a frame moving at V sigma, checked in the lab frame.
    MovingFrame,
    /// Render SVG plots from the CSVs of earlier runs.
    Figures,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Rates => "rates",
            Command::ProfileSolve => "profile-solve",
            Command::Bvp => "bvp",
            Command::Simulate => "simulate",
            Command::Periodicity => "periodicity",
            Command::Stability => "stability",
            Command::CompareMacro => "compare-macro",
            Command::MovingFrame => "moving-frame",
            Command::Figures => "figures",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numerical(_) | Failure::Io(_) => 1,
        }
    }

    /// `kind: reason` on one line.
    pub fn line(&self) -> String {
        let (k, m) = match self {
            Failure::Config(m) => ("config", m),
            Failure::Numerical(m) => ("numerical", m),
            Failure::Io(m) => ("io", m),
        };
        format!(
            "{k}: {}",
            m.split_whitespace().collect::<Vec<_>>().join(" ")
        )
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type AResult<T> = std::result::Result<T, Failure>;

/// Errors from validating user input count as config errors.
fn setup<T>(r: crate::Result<T>) -> AResult<T> {
    r.map_err(|e| Failure::Config(e.to_string()))
}

/// Summary values; floats use the shortest round-trip form.
trait Show {
    fn show(&self) -> String;
}

impl Show for f64 {
    fn show(&self) -> String {
        format!("{self:?}")
    }
}

macro_rules! show_display {
    ($($t:ty),*) => {$(impl Show for $t {
        fn show(&self) -> String {
            self.to_string()
        }
    })*};
}
show_display!(usize, bool, String, &str, &String);

struct Ctx {
    cfg: RunConfig,
    dir: PathBuf,
    files: Vec<(String, String)>,
    summary: Vec<(String, String)>,
}

impl Ctx {
    fn write(&mut self, name: &str, content: &str) -> AResult<()> {
        fs::write(self.dir.join(name), content)?;
        let digest = Sha256::digest(content.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_string(), hex));
        Ok(())
    }

    fn note(&mut self, key: &str, value: impl Show) {
        self.summary.push((key.to_string(), value.show()));
    }

    fn plot(&mut self, csv_name: &str, csv_text: &str) -> AResult<()> {
        if let Some((name, text)) = figure_for(csv_name, csv_text) {
            self.write(&name, &text)?;
        }
        Ok(())
    }

    fn finish(mut self, command: Command) -> AResult<()> {
        let mut s = String::new();
        for (k, v) in &self.summary {
            s.push_str(&format!("{k} = {v}\n"));
        }
        self.write("summary.txt", &s)?;
        let mut m = format!(
            "ftl-lab {VERSION}\ncommand = {}\n\n[config]\n",
            command.name()
        );
        if self.cfg.source.is_empty() {
            m.push_str("# none\n");
        } else {
            m.push_str(&self.cfg.source);
            if !self.cfg.source.ends_with('\n') {
                m.push('\n');
            }
        }
        m.push_str("\n[overrides]\n");
        for o in &self.cfg.overrides {
            m.push_str(&format!("{o}\n"));
        }
        m.push_str("\n[effective]\n");
        m.push_str(&self.cfg.effective());
        m.push_str("\n[defaults]\n");
        for (k, v) in defaults() {
            m.push_str(&format!("{k} = {v}\n"));
        }
        m.push_str("\n[outputs]\n");
        for (n, h) in &self.files {
            m.push_str(&format!("{h}  {n}\n"));
        }
        fs::write(self.dir.join("manifest.txt"), m)?;
        Ok(())
    }
}

fn defaults() -> Vec<(&'static str, String)> {
    vec![
        ("bvp_tol", bvp::DEFAULT_BVP_TOL.show()),
        ("delta0", bvp::DEFAULT_DELTA0.show()),
        ("n_anchors", bvp::DEFAULT_ANCHORS.show()),
        ("bvp_plateau_tol", bvp::DEFAULT_PLATEAU_TOL.show()),
        ("fit_floor", bvp::DEFAULT_FIT_FLOOR.show()),
        ("solve_plateau_tol", dde::DEFAULT_PLATEAU_TOL.show()),
        ("steps_per_car", dde::DEFAULT_STEPS_PER_CAR.show()),
        ("dt_safety", sim::DEFAULT_DT_SAFETY.show()),
        ("envelope_margin", diagnostics::DEFAULT_MARGIN.show()),
        ("perturbation_eps", diagnostics::DEFAULT_EPS.show()),
        ("l1_tol", macro_ref::L1_TOL.show()),
    ]
}

/// Parses arguments, runs the subcommand and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", Failure::Config(first.to_string()).line());
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("{}", f.line());
            f.code()
        }
    }
}

pub fn execute(cli: &Cli) -> AResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for s in &cli.set {
        cfg.set(s)?;
    }
    let dir = match &cli.out {
        Some(d) => d.clone(),
        None => PathBuf::from(cfg.str_opt("run", "out")?.unwrap_or_else(|| "out".into())),
    };
    fs::create_dir_all(&dir)?;
    let mut ctx = Ctx {
        cfg,
        dir,
        files: vec![],
        summary: vec![],
    };
    match cli.command {
        Command::Rates => cmd_rates(&mut ctx)?,
        Command::ProfileSolve => cmd_profile_solve(&mut ctx)?,
        Command::Bvp => cmd_bvp(&mut ctx)?,
        Command::Simulate => cmd_simulate(&mut ctx)?,
        Command::Periodicity => cmd_periodicity(&mut ctx)?,
        Command::Stability => cmd_stability(&mut ctx)?,
        Command::CompareMacro => cmd_compare_macro(&mut ctx)?,
        Command::MovingFrame => cmd_moving_frame(&mut ctx)?,
        Command::Figures => cmd_figures(&mut ctx)?,
    }
    ctx.finish(cli.command)
}

fn check_states(rm: f64, rp: f64) -> AResult<()> {
    for (n, v) in [("rho_minus", rm), ("rho_plus", rp)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Failure::Config(format!("{n} = {v} outside [0, 1]")));
        }
    }
    Ok(())
}

fn problem(cfg: &RunConfig) -> AResult<BvpProblem> {
    let p = cfg.model()?;
    let (rm, rp) = cfg.states(&p)?;
    check_states(rm, rp)?;
    setup(BvpProblem::new(p, rm, rp))
}

fn bvp_options(cfg: &RunConfig) -> AResult<BvpOptions> {
    let mut o = BvpOptions::default();
    if let Some(a) = cfg.f64_list("solver", "anchors")? {
        o.anchors = Some(a);
    }
    if let Some(n) = cfg.usize_opt("solver", "n_anchors")? {
        if n == 0 {
            return Err(Failure::Config("solver.n_anchors must be positive".into()));
        }
        o.n_anchors = n;
    }
    if let Some(v) = cfg.pos_opt("solver", "delta0")? {
        o.delta0 = v;
    }
    if let Some(v) = cfg.pos_opt("solver", "bvp_tol")? {
        o.bvp_tol = v;
    }
    o.h = cfg.pos_opt("solver", "h")?;
    if let Some(v) = cfg.pos_opt("solver", "plateau_tol")? {
        o.plateau_tol = v;
    }
    o.span = cfg.pos_opt("solver", "span")?;
    Ok(o)
}

fn dt_of(cfg: &RunConfig, p: &ModelParams) -> AResult<f64> {
    let limit = sim::DEFAULT_DT_SAFETY * p.ell / p.v;
    match cfg.pos_opt("solver", "dt")? {
        Some(dt) if dt > limit * (1.0 + 1e-12) => Err(Failure::Config(format!(
            "solver.dt = {dt} exceeds 0.1 ell / V = {limit}"
        ))),
        Some(dt) => Ok(dt),
        None => Ok(limit),
    }
}

fn horizon(cfg: &RunConfig, tp: f64, default_periods: f64) -> AResult<f64> {
    if let Some(t) = cfg.pos_opt("solver", "t_end")? {
        return Ok(t);
    }
    Ok(cfg.pos_opt("solver", "periods")?.unwrap_or(default_periods) * tp)
}

fn perturbation(cfg: &RunConfig, default_eps: f64) -> AResult<Perturbation> {
    let eps = cfg.f64_or("run", "eps", default_eps)?;
    if !(0.0..1.0).contains(&eps) {
        return Err(Failure::Config(format!(
            "run.eps = {eps} must lie in [0, 1)"
        )));
    }
    let pattern = match cfg
        .str_opt("run", "pattern")?
        .as_deref()
        .unwrap_or("dipole")
    {
        "dipole" => Pattern::Dipole,
        "bump" => Pattern::Bump,
        "seeded" => Pattern::Seeded(cfg.u64_or("run", "seed", 1)?),
        "none" => Pattern::None,
        other => return Err(Failure::Config(format!("unknown run.pattern \"{other}\""))),
    };
    Ok(Perturbation { eps, pattern })
}

fn curve_csv(curve: &ProfileCurve, extra_tail: usize, dx: f64) -> String {
    let mut t = CsvTable::new(&["x", "W"]);
    for (x, w) in curve.rows(extra_tail, dx) {
        t.nums(&[x, w]);
    }
    t.into_string()
}

fn tail_dx(curve: &ProfileCurve, ell: f64) -> f64 {
    let l = curve.right_tail().lambda;
    if l > 0.0 {
        0.25 / l
    } else {
        ell / 8.0
    }
}

fn fit_note(ctx: &mut Ctx, prefix: &str, fit: Option<&crate::stats::LinearFit>) {
    match fit {
        Some(f) => {
            ctx.note(&format!("{prefix}_slope"), f.slope);
            ctx.note(&format!("{prefix}_intercept"), f.intercept);
            ctx.note(&format!("{prefix}_r2"), f.r2);
        }
        None => ctx.note(&format!("{prefix}_slope"), "none"),
    }
}

fn cmd_rates(ctx: &mut Ctx) -> AResult<()> {
    let p = ctx.cfg.model()?;
    let (rm, rp) = ctx.cfg.states(&p)?;
    check_states(rm, rp)?;
    let r = rates::rate_report(&p, rm, rp)?;
    let v = rates::verify_bounds(&p, &r);
    let c = r.constants;
    let mut t = CsvTable::new(&[
        "a",
        "b",
        "a_hat",
        "b_hat",
        "lambda_plus",
        "lambda_minus",
        "bounds_ok",
    ]);
    t.row(&[
        Cell::Num(c.a),
        Cell::Num(c.b),
        Cell::Num(c.a_hat),
        Cell::Num(c.b_hat),
        Cell::Num(r.lambda_plus),
        Cell::Num(r.lambda_minus),
        Cell::Bool(v.ok()),
    ]);
    print!("{}", t.as_str());
    ctx.write("rates.csv", t.as_str())?;
    ctx.note(
        "bracket_plus",
        format!("[{:?}, {:?}]", r.bracket_plus.0, r.bracket_plus.1),
    );
    ctx.note(
        "bracket_minus",
        format!("[{:?}, {:?}]", r.bracket_minus.0, r.bracket_minus.1),
    );
    for b in &v.checks {
        ctx.note(
            &format!("check_{}", b.name),
            format!(
                "{} (value {:?}, bounds [{:?}, {:?}], gating {})",
                b.holds, b.value, b.lower, b.upper, b.gating
            ),
        );
    }
    Ok(())
}

fn cmd_profile_solve(ctx: &mut Ctx) -> AResult<()> {
    let cfg = &ctx.cfg;
    let p = cfg.model()?;
    let rp = cfg.f64_req("problem", "rho_plus")?;
    check_states(0.0, rp)?;
    let lp = setup(rates::lambda_plus(&p, rp))?;
    let x_hat = cfg.f64_or("solver", "x_hat", 0.0)?;
    let delta = cfg
        .pos_opt("solver", "delta")?
        .unwrap_or(bvp::DEFAULT_DELTA0);
    if delta >= rp {
        return Err(Failure::Config(format!(
            "solver.delta = {delta} must be below rho_plus = {rp}"
        )));
    }
    let h = cfg
        .pos_opt("solver", "h")?
        .unwrap_or((p.ell / dde::DEFAULT_STEPS_PER_CAR).min(0.1 / lp));
    let span = match (
        cfg.pos_opt("solver", "span")?,
        cfg.f64_opt("problem", "rho_minus")?,
    ) {
        (Some(s), _) => s,
        (None, Some(rm)) if rm > 0.0 => {
            let lm = setup(rates::lambda_minus(&p, rm))?;
            (60.0 / lm).max(50.0 * p.ell)
        }
        _ => 50.0 * p.ell,
    };
    let plateau_tol = cfg.f64_or("solver", "plateau_tol", dde::DEFAULT_PLATEAU_TOL)?;
    // tail amplitude at the anchor is delta, so the stored coefficient carries exp(lp x_hat)
    let tail = RightTail::new(rp, delta * (lp * x_hat).exp(), lp, x_hat);
    let (curve, rep) = dde::solve_backward(
        &p,
        tail,
        SolveOptions {
            h,
            x_min: x_hat - span,
            plateau_tol,
        },
    )?;
    let text = curve_csv(&curve, 64, tail_dx(&curve, p.ell));
    ctx.write("profile.csv", &text)?;
    ctx.plot("profile.csv", &text)?;
    ctx.note("lambda_plus", lp);
    ctx.note("h", h);
    ctx.note("steps", rep.steps);
    ctx.note("x_min_reached", rep.x_min_reached);
    ctx.note("plateau", rep.plateau);
    ctx.note("left_limit", opt(rep.left_limit));
    ctx.note("tp_estimate", opt(rep.tp_estimate));
    ctx.note("breaking_point", opt(rep.breaking_point));
    ctx.note("monotonicity_violations", rep.monotonicity_violations);
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.show())
}

fn members_csv(sol: &BvpSolution) -> String {
    let mut t = CsvTable::new(&["n", "x", "W"]);
    for (n, m) in sol.members.iter().enumerate() {
        let stride = m.grid().len().div_ceil(1000).max(1);
        let mut rows: Vec<(f64, f64)> = m
            .grid()
            .iter()
            .copied()
            .zip(m.values().iter().copied())
            .step_by(stride)
            .collect();
        let dx = tail_dx(m, 1.0);
        for k in 0..=32 {
            let x = m.x_hat() + k as f64 * dx;
            rows.push((x, m.evaluate(x)));
        }
        for (x, w) in rows {
            t.row(&[Cell::Int(n as i64), Cell::Num(x), Cell::Num(w)]);
        }
    }
    t.into_string()
}

fn cmd_bvp(ctx: &mut Ctx) -> AResult<()> {
    if let Some(pairs) = ctx.cfg.pairs()? {
        return bvp_batch(ctx, &pairs);
    }
    let pr = problem(&ctx.cfg)?;
    let opts = bvp_options(&ctx.cfg)?;
    let sol = bvp::solve_bvp(&pr, &opts)?;
    let seq = sol.record.to_csv();
    ctx.write("bvp_sequence.csv", &seq)?;
    ctx.plot("bvp_sequence.csv", &seq)?;
    let prof = curve_csv(&sol.curve, 64, tail_dx(&sol.curve, pr.params.ell));
    ctx.write("profile.csv", &prof)?;
    ctx.plot("profile.csv", &prof)?;
    if !sol.members.is_empty() {
        let mem = members_csv(&sol);
        ctx.write("bvp_members.csv", &mem)?;
        ctx.plot("bvp_members.csv", &mem)?;
    }
    let r = &sol.record;
    ctx.note("kind", format!("{:?}", sol.kind));
    ctx.note("rho_minus", pr.rho_minus);
    ctx.note("rho_plus", pr.rho_plus);
    ctx.note("f_bar", pr.f_bar);
    ctx.note("tp", pr.period());
    ctx.note("lambda_plus", r.lambda_plus);
    ctx.note(
        "converged_at",
        r.converged_at.map_or("none".into(), |n| n.to_string()),
    );
    ctx.note("monotone", r.monotone);
    fit_note(ctx, "rate_fit", r.rate_fit.as_ref());
    fit_note(ctx, "tp_fit", r.tp_fit.as_ref());
    fit_note(ctx, "tp_power_fit", r.tp_power_fit.as_ref());
    for (k, d) in r.diagnostics.iter().enumerate() {
        ctx.note(&format!("diagnostic_{k}"), d);
    }
    if sol.kind == ProblemKind::Regular {
        if let Ok(s) = bvp::slope_equation_root(&pr) {
            ctx.note("slope_root", s);
        }
        let rr = rates::rate_report(&pr.params, pr.rho_minus, pr.rho_plus)?;
        let shape = diagnostics::shape_checks(&sol.curve, &rr, pr.params.ell);
        ctx.note("slope_at_origin", shape.slope_at_origin);
        ctx.note("lambda_minus", rr.lambda_minus);
        ctx.note("fitted_lambda_plus", opt(shape.fitted_plus));
        ctx.note("fitted_lambda_minus", opt(shape.fitted_minus));
    }
    Ok(())
}

struct BatchRow {
    pair: (f64, f64),
    f_bar: f64,
    lambda_plus: f64,
    lambda_minus: f64,
    sigma_plus: f64,
    slope: f64,
    converged: bool,
    curve: ProfileCurve,
}

fn bvp_batch(ctx: &mut Ctx, pairs: &[(f64, f64)]) -> AResult<()> {
    let p = ctx.cfg.model()?;
    let opts = bvp_options(&ctx.cfg)?;
    let mut problems = Vec::with_capacity(pairs.len());
    for &(rm, rp) in pairs {
        check_states(rm, rp)?;
        problems.push(setup(BvpProblem::new(p.clone(), rm, rp))?);
    }
    let results: Vec<crate::Result<BatchRow>> = thread::scope(|s| {
        let handles: Vec<_> = problems
            .iter()
            .map(|pr| {
                let opts = &opts;
                s.spawn(move || -> crate::Result<BatchRow> {
                    let sol = bvp::solve_bvp(pr, opts)?;
                    let lam = |r: crate::Result<f64>| r.unwrap_or(f64::NAN);
                    let h = 1e-3 * pr.params.ell;
                    Ok(BatchRow {
                        pair: (pr.rho_minus, pr.rho_plus),
                        f_bar: pr.f_bar,
                        lambda_plus: lam(rates::lambda_plus(&pr.params, pr.rho_plus)),
                        lambda_minus: lam(rates::lambda_minus(&pr.params, pr.rho_minus)),
                        sigma_plus: lam(bvp::slope_equation_root(pr)),
                        slope: (sol.curve.evaluate(h) - sol.curve.evaluate(-h)) / (2.0 * h),
                        converged: sol.kind != ProblemKind::Regular || sol.record.converged(),
                        curve: sol.curve,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("batch worker panicked"))
            .collect()
    });
    let rows: Vec<BatchRow> = results.into_iter().collect::<crate::Result<_>>()?;
    let mut t = CsvTable::new(&[
        "rho_minus",
        "rho_plus",
        "f_bar",
        "lambda_plus",
        "lambda_minus",
        "sigma_plus",
        "slope_at_origin",
        "converged",
    ]);
    let mut prof = CsvTable::new(&["pair", "x", "W"]);
    let grid = macro_ref::uniform_grid(-20.0 * p.ell, 20.0 * p.ell, 801);
    for (k, r) in rows.iter().enumerate() {
        t.row(&[
            Cell::Num(r.pair.0),
            Cell::Num(r.pair.1),
            Cell::Num(r.f_bar),
            Cell::Num(r.lambda_plus),
            Cell::Num(r.lambda_minus),
            Cell::Num(r.sigma_plus),
            Cell::Num(r.slope),
            Cell::Bool(r.converged),
        ]);
        for &x in &grid {
            prof.row(&[
                Cell::Int(k as i64),
                Cell::Num(x),
                Cell::Num(r.curve.evaluate(x)),
            ]);
        }
    }
    ctx.write("bvp_batch.csv", t.as_str())?;
    let prof = prof.into_string();
    ctx.write("profiles_batch.csv", &prof)?;
    ctx.plot("profiles_batch.csv", &prof)?;
    ctx.note("pairs", rows.len());
    ctx.note("all_converged", rows.iter().all(|r| r.converged));
    Ok(())
}

fn solved_profile(ctx: &mut Ctx) -> AResult<(BvpProblem, ProfileCurve)> {
    let pr = problem(&ctx.cfg)?;
    let opts = bvp_options(&ctx.cfg)?;
    let sol = bvp::solve_bvp(&pr, &opts)?;
    ctx.note("profile_kind", format!("{:?}", sol.kind));
    ctx.note("tp", pr.period());
    Ok((pr, sol.curve))
}

fn cmd_simulate(ctx: &mut Ctx) -> AResult<()> {
    let (pr, curve) = solved_profile(ctx)?;
    let p = pr.params.clone();
    let pert = perturbation(&ctx.cfg, 0.0)?;
    let mut so = StabilityOptions::for_problem(&pr);
    so.n_back = ctx.cfg.usize_opt("solver", "n_back")?.unwrap_or(60);
    so.n_fwd = ctx.cfg.usize_opt("solver", "n_fwd")?.unwrap_or(60);
    let platoon = if pert.eps > 0.0 {
        diagnostics::perturbed_platoon(&pr, &curve, &pert, &so)?
    } else {
        sim::generate_distribution(&p, &curve, 0.0, so.n_back, so.n_fwd)?
    };
    let dt = dt_of(&ctx.cfg, &p)?;
    let t_end = horizon(&ctx.cfg, pr.period(), 3.0)?;
    let stride = ctx.cfg.usize_opt("solver", "stride")?.unwrap_or(1);
    let traj = sim::simulate(
        &platoon,
        SimOptions {
            dt,
            t_end,
            stride,
            safety: sim::DEFAULT_DT_SAFETY,
        },
    )?;
    let mut t = CsvTable::new(&["t", "car", "z", "rho"]);
    for (k, (time, z)) in traj.times.iter().zip(&traj.positions).enumerate() {
        let rho = traj.densities(k);
        for (i, &zi) in z.iter().enumerate() {
            let r = if i + 1 < z.len() {
                rho[i]
            } else {
                platoon.leader().density(zi)
            };
            t.row(&[
                Cell::Num(*time),
                Cell::Int(i as i64),
                Cell::Num(zi),
                Cell::Num(r),
            ]);
        }
    }
    let text = t.into_string();
    ctx.write("cars.csv", &text)?;
    ctx.plot("cars.csv", &text)?;
    ctx.note("cars", platoon.len());
    ctx.note("dt", dt);
    ctx.note("t_end", t_end);
    ctx.note("perturbation_eps", pert.eps);
    ctx.note("trace_error", sim::trace_error(&traj, &curve));
    Ok(())
}

fn cmd_periodicity(ctx: &mut Ctx) -> AResult<()> {
    let (pr, curve) = solved_profile(ctx)?;
    let p = pr.params.clone();
    let n_back = ctx.cfg.usize_opt("solver", "n_back")?.unwrap_or(40);
    let n_fwd = ctx.cfg.usize_opt("solver", "n_fwd")?.unwrap_or(40);
    let platoon = sim::generate_distribution(&p, &curve, 0.0, n_back, n_fwd)?;
    let tp = pr.period();
    let dt = dt_of(&ctx.cfg, &p)?;
    let t_end = horizon(&ctx.cfg, tp, 2.5)?;
    let traj = sim::simulate(&platoon, SimOptions::new(dt, t_end))?;
    let lo = n_back.saturating_sub(10);
    let hi = (n_back + 10).min(platoon.len() - 1);
    let s = sim::measure_period(&p, &traj, &curve, lo..hi)?;
    let mut t = CsvTable::new(&["car", "event", "quadrature", "rel_err"]);
    let mut worst: f64 = 0.0;
    for k in &s.takeovers {
        let rel = (k.event - tp).abs() / tp;
        worst = worst.max(rel);
        t.row(&[
            Cell::Int(k.car as i64),
            Cell::Num(k.event),
            Cell::Num(k.quadrature),
            Cell::Num(rel),
        ]);
    }
    let text = t.into_string();
    ctx.write("periods.csv", &text)?;
    ctx.plot("periods.csv", &text)?;
    ctx.note("mean", s.mean);
    ctx.note("std", s.std);
    ctx.note("std_over_mean", s.std / s.mean);
    ctx.note("worst_rel_err", worst);
    Ok(())
}

fn cmd_stability(ctx: &mut Ctx) -> AResult<()> {
    let (pr, curve) = solved_profile(ctx)?;
    let pert = perturbation(&ctx.cfg, diagnostics::DEFAULT_EPS)?;
    let mut so = StabilityOptions::for_problem(&pr);
    let tp = pr.period();
    if let Some(periods) = ctx.cfg.pos_opt("solver", "periods")? {
        so.t_end = periods * tp;
    }
    if let Some(t) = ctx.cfg.pos_opt("solver", "t_end")? {
        so.t_end = t;
    }
    if ctx.cfg.has("solver", "dt") {
        so.dt = dt_of(&ctx.cfg, &pr.params)?;
        so.stride = ctx.cfg.usize_opt("solver", "stride")?.unwrap_or(1);
    } else if let Some(s) = ctx.cfg.usize_opt("solver", "stride")? {
        so.stride = s;
    }
    so.n_back = ctx.cfg.usize_opt("solver", "n_back")?.unwrap_or(so.n_back);
    so.n_fwd = ctx.cfg.usize_opt("solver", "n_fwd")?.unwrap_or(so.n_fwd);
    so.margin = ctx.cfg.pos_opt("solver", "margin")?.unwrap_or(so.margin);
    let out = diagnostics::stability_run(&pr, &curve, &pert, &so)?;
    let text = out.trace.to_csv();
    ctx.write("envelope.csv", &text)?;
    ctx.plot("envelope.csv", &text)?;
    let g = out.trace.gap();
    ctx.note("dt", so.dt);
    ctx.note("stride", so.stride);
    ctx.note("t_end", so.t_end);
    ctx.note("initial_gap", g[0]);
    ctx.note("final_gap", g[g.len() - 1]);
    ctx.note("reduction", out.trace.reduction());
    ctx.note("max_increase", out.trace.max_increase());
    ctx.note(
        "non_increasing",
        out.trace.max_increase() <= diagnostics::GAP_SLACK,
    );
    Ok(())
}

fn cmd_compare_macro(ctx: &mut Ctx) -> AResult<()> {
    let (pr, curve) = solved_profile(ctx)?;
    let p = pr.params.clone();
    let eps = ctx
        .cfg
        .pos_opt("solver", "epsilon")?
        .unwrap_or(p.v * p.ell / 2.0);
    let window = match ctx.cfg.f64_list("solver", "window")? {
        Some(w) if w.len() == 2 && w[1] > w[0] => (w[0], w[1]),
        Some(w) => {
            return Err(Failure::Config(format!(
                "solver.window must be [x_lo, x_hi], got {w:?}"
            )))
        }
        None => macro_ref::DEFAULT_WINDOW,
    };
    let samples = ctx
        .cfg
        .usize_opt("solver", "samples")?
        .unwrap_or(2001)
        .max(2);
    let grid = macro_ref::uniform_grid(window.0, window.1, samples);
    let table = setup(macro_ref::compare_table(&pr, &curve, eps, &grid))?.into_string();
    ctx.write("compare.csv", &table)?;
    ctx.plot("compare.csv", &table)?;
    let ells = ctx
        .cfg
        .f64_list("solver", "ells")?
        .unwrap_or_else(|| vec![0.4, 0.2, 0.1, 0.05]);
    if ells.iter().any(|&l| !(l > 0.0)) {
        return Err(Failure::Config("solver.ells must be positive".into()));
    }
    let opts = bvp_options(&ctx.cfg)?;
    let sweep = macro_ref::micro_macro_sweep(&p, pr.rho_minus, pr.rho_plus, &ells, window, &opts)?;
    let text = sweep.to_csv();
    ctx.write("micro_macro.csv", &text)?;
    ctx.plot("micro_macro.csv", &text)?;
    let step = ProfileCurve::step(pr.rho_minus, pr.rho_plus, 0.0);
    ctx.note("epsilon", eps);
    ctx.note("l1_step", macro_ref::l1_distance(&curve, &step, window));
    ctx.note("l1_step_decreasing", sweep.l1_step_decreasing(1e-6));
    ctx.note("sup_continuum2_decreasing", sweep.sup_decreasing(1e-6));
    ctx.note("sup_continuum2_spread", sweep.sup_spread());
    Ok(())
}

fn cmd_moving_frame(ctx: &mut Ctx) -> AResult<()> {
    let cfg = &ctx.cfg;
    let p = cfg.model()?;
    let sigma = cfg.f64_req("run", "sigma")?;
    let frame = setup(FrameSpec::new(sigma))?;
    let rm = cfg.f64_req("problem", "rho_minus")?;
    let rp = if cfg.bool_or("problem", "conjugate", false)? {
        setup(frame.conjugate(&p, rm))?
    } else {
        cfg.f64_req("problem", "rho_plus")?
    };
    check_states(rm, rp)?;
    let pr = setup(moving_frame::shift_problem(&p, sigma, rm, rp))?;
    let opts = bvp_options(cfg)?;
    let dt = dt_of(cfg, &p)?;
    let t_end = horizon(cfg, pr.period(), 3.0)?;
    let mut to = TravelOptions::new(&p, t_end);
    to.dt = dt;
    to.n_back = cfg.usize_opt("solver", "n_back")?.unwrap_or(to.n_back);
    to.n_fwd = cfg.usize_opt("solver", "n_fwd")?.unwrap_or(to.n_fwd);
    let sol = bvp::solve_bvp(&pr, &opts)?;
    let seq = sol.record.to_csv();
    ctx.write("bvp_sequence.csv", &seq)?;
    let prof = curve_csv(&sol.curve, 64, tail_dx(&sol.curve, p.ell));
    ctx.write("profile.csv", &prof)?;
    ctx.plot("profile.csv", &prof)?;
    let rep = moving_frame::verify_traveling(&sol.curve, &p, sigma, &to)?;
    let mut t = CsvTable::new(&["t", "error"]);
    for (a, b) in rep.times.iter().zip(&rep.errors) {
        t.nums(&[*a, *b]);
    }
    let text = t.into_string();
    ctx.write("travel.csv", &text)?;
    ctx.plot("travel.csv", &text)?;
    ctx.note("sigma", sigma);
    ctx.note("rho_minus", rm);
    ctx.note("rho_plus", rp);
    ctx.note("wave_speed", frame.wave_speed(&p));
    ctx.note(
        "lab_jump_speed",
        moving_frame::lab_jump_speed(&p, rm, rp).map_or(f64::NAN, |v| v),
    );
    ctx.note("tp_moving_frame", pr.period());
    ctx.note("max_trace_error", rep.max_error());
    Ok(())
}

const FIGURE_INPUTS: &[&str] = &[
    "profile.csv",
    "bvp_sequence.csv",
    "bvp_members.csv",
    "profiles_batch.csv",
    "cars.csv",
    "periods.csv",
    "envelope.csv",
    "compare.csv",
    "micro_macro.csv",
    "travel.csv",
];

fn cmd_figures(ctx: &mut Ctx) -> AResult<()> {
    let input = match ctx.cfg.str_opt("run", "input")? {
        Some(d) => PathBuf::from(d),
        None => ctx.dir.clone(),
    };
    let mut rendered = 0;
    for name in FIGURE_INPUTS {
        let path: &Path = &input.join(name);
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(path)?;
        match figure_for(name, &text) {
            Some((svg_name, svg_text)) => {
                ctx.write(&svg_name, &svg_text)?;
                rendered += 1;
            }
            None => return Err(Failure::Numerical(format!("{name} could not be read"))),
        }
    }
    if rendered == 0 {
        return Err(Failure::Config(format!(
            "no CSV files to plot in {}",
            input.display()
        )));
    }
    ctx.note("figures", rendered);
    Ok(())
}

fn column(header: &[String], name: &str) -> Option<usize> {
    header.iter().position(|h| h == name)
}

fn xy(rows: &[Vec<f64>], x: usize, y: usize) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r[x], r[y])).collect()
}

fn grouped(
    rows: &[Vec<f64>],
    key: usize,
    x: usize,
    y: usize,
    label: &str,
    every: usize,
) -> Vec<Series> {
    let mut out: Vec<(i64, Vec<(f64, f64)>)> = vec![];
    for r in rows {
        let k = r[key] as i64;
        if every > 1 && k % every as i64 != 0 {
            continue;
        }
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push((r[x], r[y])),
            None => out.push((k, vec![(r[x], r[y])])),
        }
    }
    out.into_iter()
        .map(|(k, v)| Series::new(format!("{label} {k}"), v))
        .collect()
}

/// SVG rendering of a known CSV, named after it.
pub fn figure_for(csv_name: &str, text: &str) -> Option<(String, String)> {
    let (h, rows) = csv::parse(text)?;
    let c = |n: &str| column(&h, n);
    let plot = match csv_name {
        "profile.csv" => Plot {
            title: "Profile".into(),
            x_label: "x".into(),
            y_label: "W".into(),
            series: vec![Series::new("W", xy(&rows, c("x")?, c("W")?))],
            x_range: None,
        },
        "bvp_sequence.csv" => Plot {
            title: "Sequence left limits".into(),
            x_label: "x_hat".into(),
            y_label: "rho_minus_n".into(),
            series: vec![Series::new(
                "rho_minus_n",
                xy(&rows, c("x_hat")?, c("rho_minus_n")?),
            )],
            x_range: None,
        },
        "bvp_members.csv" => Plot {
            title: "Sequence members W_n".into(),
            x_label: "x".into(),
            y_label: "W".into(),
            series: grouped(&rows, c("n")?, c("x")?, c("W")?, "n =", 1),
            x_range: None,
        },
        "profiles_batch.csv" => Plot {
            title: "Profiles for several boundary pairs".into(),
            x_label: "x".into(),
            y_label: "W".into(),
            series: grouped(&rows, c("pair")?, c("x")?, c("W")?, "pair", 1),
            x_range: None,
        },
        "cars.csv" => {
            let (ci, ti, zi) = (c("car")?, c("t")?, c("z")?);
            let n = rows.iter().map(|r| r[ci] as usize).max().unwrap_or(0) + 1;
            Plot {
                title: "Car trajectories".into(),
                x_label: "t".into(),
                y_label: "z".into(),
                series: grouped(&rows, ci, ti, zi, "car", (n / 8).max(1)),
                x_range: None,
            }
        }
        "periods.csv" => Plot {
            title: "Takeover times".into(),
            x_label: "car".into(),
            y_label: "time".into(),
            series: vec![
                Series::new("simulated", xy(&rows, c("car")?, c("event")?)),
                Series::new("quadrature", xy(&rows, c("car")?, c("quadrature")?)),
            ],
            x_range: None,
        },
        "envelope.csv" => Plot {
            title: "Envelope shifts".into(),
            x_label: "t".into(),
            y_label: "shift".into(),
            series: vec![
                Series::new("h_plus", xy(&rows, c("t")?, c("h_plus")?)),
                Series::new("h_minus", xy(&rows, c("t")?, c("h_minus")?)),
            ],
            x_range: None,
        },
        "compare.csv" => {
            let x = c("x")?;
            Plot {
                title: "Micro and macro profiles".into(),
                x_label: "x".into(),
                y_label: "density".into(),
                series: ["W_dde", "W_viscous", "W_continuum2", "W_step"]
                    .iter()
                    .map(|n| Some(Series::new(*n, xy(&rows, x, c(n)?))))
                    .collect::<Option<Vec<_>>>()?,
                x_range: None,
            }
        }
        "micro_macro.csv" => Plot {
            title: "Distances over the car-length sweep".into(),
            x_label: "ell".into(),
            y_label: "distance".into(),
            series: vec![
                Series::new("L1 to step", xy(&rows, c("ell")?, c("l1_step")?)),
                Series::new(
                    "sup to continuum",
                    xy(&rows, c("ell")?, c("sup_continuum2")?),
                ),
                Series::new("L1 to continuum", xy(&rows, c("ell")?, c("l1_continuum2")?)),
            ],
            x_range: None,
        },
        "travel.csv" => Plot {
            title: "Lab-frame trace error".into(),
            x_label: "t".into(),
            y_label: "error".into(),
            series: vec![Series::new("error", xy(&rows, c("t")?, c("error")?))],
            x_range: None,
        },
        _ => return None,
    };
    Some((csv_name.replace(".csv", ".svg"), svg::render(&plot)))
}
