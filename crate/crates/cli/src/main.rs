//! `kdvtau`: command-line driver.
//!
//! Exit codes: 0 ok, 1 check failed, 2 config error, 3 route disagreement,
//! 4 evolution residual above the gate.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use kdvtau::battery::{self, Options, ODE_HALF_WIDTH, ODE_STEP};
use kdvtau::flow::{flow_grid, linspace_step, Convention, FlowGrid};
use kdvtau::grassmann::{duality_check, trace_bound_check, DualityReport, TraceBoundReport};
use kdvtau::herglotz::{check_mr_seeded, check_reflectionless, ValidationReport};
use kdvtau::schroedinger::{reflectionless_check, spectral_floor, spectral_floor_richardson, ReflectionlessReport};
use kdvtau::tau::TauAny;
use kdvtau::{assemble_m, potential, tau_any, FourierTruncation, PotentialGrid, RunConfig, C64};

const EXIT_CHECK: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ROUTES: u8 = 3;
const EXIT_RESIDUAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "kdvtau", version, about = "Tau-functions and the KdV flow for reflectionless potentials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides KDVTAU_OUT and the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Recompute tau by a second route and compare.
    #[arg(long, global = true)]
    cross_validate: bool,
    /// Richardson-extrapolate finite differences.
    #[arg(long, global = true)]
    richardson: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Validate the configured m-function.
    MfunCheck,
    /// Evaluate tau for the configured m and group element.
    Tau,
    /// Sweep q(x, t) and write it as CSV.
    Flow,
    /// Independent checks: Weyl round trip, duality, trace bound.
    Oracle,
    /// Run the full acceptance battery.
    Xval,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] kdvtau::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(kdvtau::Error::Config(_)) => EXIT_CONFIG,
            _ => EXIT_CHECK,
        }
    }
}

impl From<kdvtau::FlowError> for CliError {
    fn from(e: kdvtau::FlowError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<kdvtau::TauError> for CliError {
    fn from(e: kdvtau::TauError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<kdvtau::SchroedingerError> for CliError {
    fn from(e: kdvtau::SchroedingerError) -> Self {
        CliError::Core(e.into())
    }
}

impl From<kdvtau::GrassmannError> for CliError {
    fn from(e: kdvtau::GrassmannError) -> Self {
        CliError::Core(e.into())
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    cross_validate: bool,
}

fn config_err(e: kdvtau::Error) -> CliError {
    match e {
        kdvtau::Error::Config(s) => CliError::Config(s),
        other => CliError::Config(other.to_string()),
    }
}

fn load(cli: &Cli) -> Result<Ctx, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            RunConfig::from_toml(&text).map_err(|e| match config_err(e) {
                CliError::Config(s) => CliError::Config(format!("{}: {s}", p.display())),
                other => other,
            })?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.richardson {
        cfg.numerics.richardson = true;
    }
    // surface bad numerics before any work
    cfg.tau_config().map_err(config_err)?;
    cfg.flow.x.nodes().map_err(config_err)?;
    cfg.flow.t.nodes().map_err(config_err)?;
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os("KDVTAU_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    Ok(Ctx { cfg, out, cross_validate: cli.cross_validate })
}

fn write(dir: &Path, name: &str, body: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)?;
    let mut text = body.replace("\r\n", "\n");
    if !text.ends_with('\n') {
        text.push('\n');
    }
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn print_report(rep: &ValidationReport) {
    for c in &rep.clauses {
        println!("[{}] {:<20} {:.3e}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.metric, c.detail);
    }
}

fn mfun_check(ctx: &Ctx) -> Result<u8, CliError> {
    let spec = &ctx.cfg.m;
    let budget = ctx.cfg.numerics.sample_budget;
    let mut rep = ValidationReport::default();
    let m = match spec.build() {
        Ok(m) => {
            rep.push("construction", true, 0.0, "accepted".into());
            m
        }
        Err(e) => {
            rep.push("construction", false, f64::NAN, e.to_string());
            spec.build_unchecked()
        }
    };
    rep.clauses.extend(check_mr_seeded(&m, budget, ctx.cfg.seed).clauses);
    let scale = m.branch_radius.max(1.0);
    let refl = check_reflectionless(&m, 1.5 * scale, 3.0 * scale, 1e-6);
    rep.clauses.extend(refl.clauses.into_iter().map(|mut c| {
        c.name = format!("reflectionless-{}", c.name);
        c
    }));
    print_report(&rep);
    write(&ctx.out, "mfun_check.json", &json(&rep))?;
    Ok(if rep.passed() { 0 } else { EXIT_CHECK })
}

fn tau(ctx: &Ctx) -> Result<u8, CliError> {
    let m = ctx.cfg.m.build()?;
    let g = ctx.cfg.gamma.build();
    let cfg = ctx.cfg.tau_config()?;
    let res: TauAny = tau_any(&m, &g, &cfg, ctx.cross_validate)?;
    println!("{}", serde_json::to_string(&res.result).expect("tau serializes"));
    write(&ctx.out, "tau.json", &json(&res))?;
    if let Some(c) = &res.cross {
        let ok = c.discrepancy <= ctx.cfg.numerics.route_tol;
        println!(
            "cross-check ({}): {} discrepancy {:.3e} (tol {:.1e})",
            c.method,
            if ok { "agree" } else { "DISAGREE" },
            c.discrepancy,
            ctx.cfg.numerics.route_tol
        );
        if !ok {
            return Ok(EXIT_ROUTES);
        }
    }
    Ok(0)
}

#[derive(Serialize)]
struct FlowSummary {
    residual: Option<f64>,
    residual_gate: f64,
    /// sup |q(x, t) − q(x + t, 0)| for the translation convention.
    translation_shift_error: Option<f64>,
    poles: usize,
}

fn flow(ctx: &Ctx) -> Result<u8, CliError> {
    let m = ctx.cfg.m.build()?;
    let g = ctx.cfg.gamma.build();
    let cfg = ctx.cfg.tau_config()?;
    let spec = &ctx.cfg.flow;
    let xs = spec.x.nodes()?;
    let ts = spec.t.nodes()?;
    let grid = flow_grid(&m, &g, &xs, &ts, spec.convention, &cfg)?;
    let residual = (xs.len() >= 7 && ts.len() >= 3).then(|| kdvtau::kdv_residual(&grid)).transpose()?;
    let shift = if spec.convention == Convention::Translation && g.atoms.is_empty() && !g.has_exp() {
        Some(translation_shift(&grid, &m, &cfg)?)
    } else {
        None
    };
    let gate = ctx.cfg.numerics.residual_gate;
    let summary = FlowSummary {
        residual,
        residual_gate: gate,
        translation_shift_error: shift,
        poles: grid.pole_flags.iter().flatten().filter(|&&p| p).count(),
    };
    write(&ctx.out, "flow.csv", &grid.to_csv())?;
    write(&ctx.out, "flow_meta.json", &grid.metadata_json())?;
    write(&ctx.out, "flow_summary.json", &json(&summary))?;
    println!("{} x-nodes × {} t-nodes, {} pole cells", xs.len(), ts.len(), summary.poles);
    match residual {
        Some(r) => println!("residual ({}) {r:.3e}, gate {gate:.1e}", spec.convention.equation()),
        None => println!("residual not computed (needs ≥ 7 x-nodes and ≥ 3 t-nodes)"),
    }
    if let Some(s) = shift {
        println!("translation shift error {s:.3e}");
    }
    Ok(match residual {
        Some(r) if !(r <= gate) => EXIT_RESIDUAL,
        _ => 0,
    })
}

fn translation_shift(grid: &FlowGrid, m: &kdvtau::MFunction, cfg: &kdvtau::TauConfig) -> Result<f64, CliError> {
    let mut worst: f64 = 0.0;
    for (j, &t) in grid.t_nodes.iter().enumerate() {
        let shifted: Vec<f64> = grid.x_nodes.iter().map(|x| x + t).collect();
        let reference = potential(m, &shifted, cfg)?;
        for i in 0..grid.x_nodes.len() {
            if !grid.pole_flags[i][j] && !reference.pole_flags[i][0] {
                worst = worst.max((grid.q_values[i][j] - reference.q_values[i][0]).abs());
            }
        }
    }
    Ok(worst)
}

#[derive(Serialize)]
struct RoundTrip {
    z: (f64, f64),
    expected: (f64, f64),
    assembled: (f64, f64),
    rel_error: f64,
}

#[derive(Serialize)]
struct OracleReport {
    round_trip: Vec<RoundTrip>,
    round_trip_passed: bool,
    spectral_floor: f64,
    floor_margin: f64,
    floor_passed: bool,
    reflectionless: ReflectionlessReport,
    duality: DualityReport,
    duality_passed: bool,
    trace_bound: Vec<TraceBoundReport>,
    trace_bound_passed: bool,
    passed: bool,
}

fn oracle(ctx: &Ctx) -> Result<u8, CliError> {
    let m = ctx.cfg.m.build()?;
    let cfg = ctx.cfg.tau_config()?;
    let r = ctx.cfg.m.radius();
    let scale = r.max(1.0);
    let xs = linspace_step(-ODE_HALF_WIDTH, ODE_HALF_WIDTH, ODE_STEP);
    let pot = potential(&m, &xs, &cfg)?;
    if pot.has_poles() {
        return Err(kdvtau::FlowError::TauZero { x: f64::NAN }.into());
    }
    let q = PotentialGrid::from_flow_grid(&pot, 0)?;

    let panel = [C64::new(2.5, 0.0), C64::new(4.0, 0.0), C64::new(3.0, 2.0)].map(|z| z * scale);
    let mut round_trip = Vec::new();
    for z in panel {
        let want = m.eval(z).map_err(kdvtau::Error::from)?;
        let got = assemble_m(&q, z)?;
        round_trip.push(RoundTrip {
            z: (z.re, z.im),
            expected: (want.re, want.im),
            assembled: (got.re, got.im),
            rel_error: (got - want).norm() / want.norm(),
        });
    }
    let round_trip_passed = round_trip.iter().all(|p| p.rel_error <= 1e-3);

    let floor = if ctx.cfg.numerics.richardson { spectral_floor_richardson(&q) } else { spectral_floor(&q) };
    let floor_margin = floor + r * r;
    let floor_passed = floor_margin >= -1e-2;

    let reflectionless = reflectionless_check(&q, (1.5 * scale * scale, 3.0 * scale * scale), 1e-6)?;

    let tr = FourierTruncation::for_radius(r, ctx.cfg.numerics.truncation);
    let duality = duality_check(&m, &tr)?;
    let duality_passed = duality.residual <= 1e-5;

    let tb_tr = FourierTruncation::for_radius(1.0, 64);
    let trace_bound = battery::seeded_exp_pairs(ctx.cfg.seed, 10)
        .iter()
        .map(|(g1, g2)| trace_bound_check(g1, g2, &tb_tr))
        .collect::<Result<Vec<_>, _>>()?;
    let trace_bound_passed = trace_bound.iter().all(|t| t.holds);

    let passed = round_trip_passed && floor_passed && reflectionless.passed && duality_passed && trace_bound_passed;
    let rep = OracleReport {
        round_trip,
        round_trip_passed,
        spectral_floor: floor,
        floor_margin,
        floor_passed,
        reflectionless,
        duality,
        duality_passed,
        trace_bound,
        trace_bound_passed,
        passed,
    };
    let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let worst_rt = rep.round_trip.iter().map(|p| p.rel_error).fold(0.0, f64::max);
    println!("[{}] weyl round trip      max rel error {worst_rt:.3e}", mark(rep.round_trip_passed));
    println!("[{}] spectral floor       {floor:.6} (margin {floor_margin:.3e})", mark(floor_passed));
    println!(
        "[{}] reflectionless       deviation {:.3e} at ε = {:.0e}",
        mark(rep.reflectionless.passed),
        rep.reflectionless.max_deviation,
        rep.reflectionless.eps
    );
    println!("[{}] duality              residual {:.3e} (N = {})", mark(duality_passed), rep.duality.residual, rep.duality.n);
    let worst_tb = rep.trace_bound.iter().map(|t| t.lhs / t.rhs).fold(0.0, f64::max);
    println!("[{}] trace bound          max lhs/rhs {worst_tb:.3e}", mark(trace_bound_passed));
    write(&ctx.out, "oracle.json", &json(&rep))?;
    Ok(if passed { 0 } else { EXIT_CHECK })
}

fn xval(ctx: &Ctx) -> Result<u8, CliError> {
    let opts = Options { seed: ctx.cfg.seed, richardson: ctx.cfg.numerics.richardson };
    let outcomes = battery::run_all(opts, |o| println!("{}", o.line()));
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    write(&ctx.out, "xval.json", &json(&outcomes))?;
    Ok(if failed == 0 { 0 } else { EXIT_CHECK })
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    let ctx = load(cli)?;
    match cli.command {
        Command::MfunCheck => mfun_check(&ctx),
        Command::Tau => tau(&ctx),
        Command::Flow => flow(&ctx),
        Command::Oracle => oracle(&ctx),
        Command::Xval => xval(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("kdvtau: {e}");
            ExitCode::from(e.code())
        }
    }
}
