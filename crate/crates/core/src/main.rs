use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use hbvp::barrier::{build_barrier, BarrierSearch, BarrierSpec};
use hbvp::capacity::{estimate, CapacityOptions, CapacityProblem, TargetSet};
use hbvp::cloud::{make_cloud, Field, SampleCloud};
use hbvp::config::RunConfig;
use hbvp::geometry::check_distance_expansions;
use hbvp::measure::BoundaryMeasure;
use hbvp::rayleigh::{rayleigh_lambda_estimate, LatticeSpec, RayleighEstimate};
use hbvp::report::{to_json, CheckReport};
use hbvp::scenarios::{exponent_table, phase_scan, ExponentTable, PhaseScanConfig};
use hbvp::solvers::{sigma_threshold, solve_absorption, IterationReport, SolverOptions, SourceProblem, Status};
use hbvp::structure::{check_doubling, check_quasimetric, check_volume_regimes, RegimeFit};
use hbvp::{Error, Kernel, KernelSpec, KernelVariant};

const EXIT_CONFIG: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

/// Hardy-potential boundary value problems: kernels, structure checks,
/// capacities, barriers and fixed-point solvers.
#[derive(Parser, Debug)]
#[command(name = "hbvp", version)]
struct Cli {
    /// Plain `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice (overrides `cloud.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for JSON, CSV and field files.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a config key, e.g. `--param domain.mu=1.5`.
    #[arg(long = "param", global = true, value_name = "KEY=VALUE")]
    params: Vec<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Evaluate a kernel at a pair of points.
    Kernel {
        #[arg(long)]
        variant: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        x: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        y: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<String>,
        #[arg(long)]
        eps: Option<String>,
    },
    /// Structure checks: quasimetric, volume, doubling, expansions.
    Check {
        #[arg(long)]
        check: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<String>,
        #[arg(long)]
        triples: Option<String>,
        #[arg(long)]
        samples: Option<String>,
        #[arg(long)]
        p: Option<String>,
    },
    /// Two-sided capacity estimate of a boundary set.
    Capacity {
        /// Pieces joined by `;`, e.g. `cap:0,1,0:0.2;point:1,0,0`.
        #[arg(long)]
        set: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        alpha: Option<String>,
        #[arg(long)]
        b: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        theta: Option<String>,
        #[arg(long)]
        s: Option<String>,
        #[arg(long)]
        samples: Option<String>,
    },
    /// Source or absorption solve for boundary measure data.
    Solve {
        /// `source` or `absorption`.
        #[arg(long)]
        problem: Option<String>,
        #[arg(long)]
        p: Option<String>,
        #[arg(long)]
        sigma: Option<String>,
        /// `dirac:x1,..,xN[:mass]`, `sigma:mass[:nodes]`, joined by `+`.
        #[arg(long)]
        measure: Option<String>,
        /// Bisect for the largest converging `σ`.
        #[arg(long)]
        threshold: bool,
    },
    /// Build and certify the local barrier.
    Barrier {
        #[arg(long)]
        p: Option<String>,
        #[arg(long)]
        n_probe: Option<String>,
    },
    /// Phase scan over `(p, σ)` or `(p, μ)`.
    Scan {
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        axis: Option<String>,
        #[arg(long)]
        location: Option<String>,
        #[arg(long)]
        p_grid: Option<String>,
        #[arg(long)]
        sigma_grid: Option<String>,
        #[arg(long)]
        mu_grid: Option<String>,
    },
    /// Characteristic and critical exponents.
    Exponents {
        /// Also estimate the first eigenvalue on a lattice.
        #[arg(long)]
        lambda: bool,
        #[arg(long)]
        lattice: Option<String>,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Kernel { .. } => "kernel",
            Cmd::Check { .. } => "check",
            Cmd::Capacity { .. } => "capacity",
            Cmd::Solve { .. } => "solve",
            Cmd::Barrier { .. } => "barrier",
            Cmd::Scan { .. } => "scan",
            Cmd::Exponents { .. } => "exponents",
        }
    }

    /// Subcommand flags as `scenario.` keys.
    fn scenario_pairs(&self) -> Vec<(&'static str, Option<String>)> {
        let flag = |b: bool| b.then(|| "true".to_string());
        match self {
            Cmd::Kernel { variant, x, y, alpha, eps } => {
                vec![
                    ("variant", variant.clone()),
                    ("x", x.clone()),
                    ("y", y.clone()),
                    ("alpha", alpha.clone()),
                    ("eps", eps.clone()),
                ]
            }
            Cmd::Check { check, alpha, triples, samples, p } => vec![
                ("check", check.clone()),
                ("alpha", alpha.clone()),
                ("triples", triples.clone()),
                ("samples", samples.clone()),
                ("p", p.clone()),
            ],
            Cmd::Capacity { set, alpha, b, theta, s, samples } => vec![
                ("set", set.clone()),
                ("alpha", alpha.clone()),
                ("b", b.clone()),
                ("theta", theta.clone()),
                ("s", s.clone()),
                ("samples", samples.clone()),
            ],
            Cmd::Solve { problem, p, sigma, measure, threshold } => vec![
                ("problem", problem.clone()),
                ("p", p.clone()),
                ("sigma", sigma.clone()),
                ("measure", measure.clone()),
                ("threshold", flag(*threshold)),
            ],
            Cmd::Barrier { p, n_probe } => vec![("p", p.clone()), ("n_probe", n_probe.clone())],
            Cmd::Scan { mode, axis, location, p_grid, sigma_grid, mu_grid } => vec![
                ("mode", mode.clone()),
                ("axis", axis.clone()),
                ("location", location.clone()),
                ("p_grid", p_grid.clone()),
                ("sigma_grid", sigma_grid.clone()),
                ("mu_grid", mu_grid.clone()),
            ],
            Cmd::Exponents { lambda, lattice } => vec![("lambda", flag(*lambda)), ("lattice", lattice.clone())],
        }
    }
}

/// What a subcommand produced.
struct Outcome {
    json: String,
    csv: Option<String>,
    field: Option<Field>,
    code: u8,
}

impl Outcome {
    fn json<T: Serialize>(kind: &str, payload: &T, code: u8) -> hbvp::Result<Self> {
        Ok(Self { json: to_json(kind, payload)?, csv: None, field: None, code })
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Divergence(_) => EXIT_DIVERGED,
        Error::NoConvergence { .. } | Error::Inconclusive(_) | Error::Invariant(_) => EXIT_INCONCLUSIVE,
        _ => EXIT_CONFIG,
    }
}

fn build_config(cli: &Cli) -> hbvp::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    for kv in &cli.params {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--param expects KEY=VALUE, got {kv}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (k, v) in cli.cmd.scenario_pairs() {
        if let Some(v) = v {
            cfg.set(&format!("scenario.{k}"), &v)?;
        }
    }
    if let Some(s) = cli.seed {
        cfg.cloud.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = Some(o.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cloud(cfg: &RunConfig) -> hbvp::Result<Arc<SampleCloud>> {
    Ok(Arc::new(make_cloud(&cfg.domain_model()?, cfg.cloud.resolution, cfg.cloud.grading, cfg.cloud.seed)?))
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Domain(m) => Error::Config(m),
        other => other,
    }
}

#[derive(Serialize)]
struct KernelOut {
    variant: &'static str,
    branch: &'static str,
    x: Vec<f64>,
    y: Vec<f64>,
    value: f64,
}

fn run_kernel(cfg: &RunConfig) -> hbvp::Result<Outcome> {
    let domain = cfg.domain_model()?;
    let params = cfg.params()?;
    let variant = KernelVariant::parse(cfg.str_or("variant", "green"))?;
    let spec = match variant {
        KernelVariant::Green => KernelSpec::green(domain, params),
        KernelVariant::Martin => KernelSpec::martin(domain, params),
        KernelVariant::NAlpha | KernelVariant::QuasiDist => KernelSpec {
            alpha: Some(cfg.f64_or("alpha", 2.0 * params.alpha_minus)?),
            ..KernelSpec::n_alpha(domain, params, 0.0)
        },
        v => KernelSpec::eps(domain, params, v, cfg.f64_or("eps", 0.1)?),
    };
    let spec = KernelSpec { variant, ..spec };
    let kernel = Kernel::new(spec).map_err(config_err)?;
    let n = domain.dim;
    let mut x = vec![0.0; n];
    x[0] = 0.5;
    let x = cfg.point("x")?.unwrap_or(x);
    let y = match cfg.point("y")? {
        Some(y) => y,
        None if variant.is_boundary_kernel() => domain.sigma_anchor(),
        None => {
            let mut y = vec![0.0; n];
            y[n - 1] = 0.5;
            y
        }
    };
    let value = kernel.eval(&x, &y)?;
    Outcome::json("kernel", &KernelOut { variant: variant.name(), branch: kernel.branch().label(), x, y, value }, 0)
}

#[derive(Serialize)]
struct VolumeOut {
    report: CheckReport,
    fits: Vec<RegimeFit>,
}

fn run_check(cfg: &RunConfig) -> hbvp::Result<Outcome> {
    let domain = cfg.domain_model()?;
    let params = cfg.params()?;
    let am = params.alpha_minus;
    let alpha = cfg.f64_or("alpha", 2.0 * am)?;
    let seed = cfg.cloud.seed;
    let p = cfg.f64_or("p", 2.0)?;
    let (b, theta) = (cfg.f64_or("b", p + 1.0)?, cfg.f64_or("theta", -am * (p + 1.0))?);
    let verdict = |pass: bool| if pass { 0 } else { EXIT_INCONCLUSIVE };
    match cfg.str_or("check", "quasimetric") {
        "quasimetric" => {
            let r = check_quasimetric(&domain, &params, alpha, cfg.usize_or("triples", 20_000)?, seed)?;
            Outcome::json("check", &r, verdict(r.pass))
        }
        "volume" => {
            let n = domain.dim;
            let (a, r) = (0.1f64, 1.0 - 1e-4);
            let mut x_inner = vec![0.0; n];
            x_inner[0] = r * a.cos();
            x_inner[n - 1] = r * a.sin();
            let mut x_sigma = vec![0.0; n];
            x_sigma[0] = r;
            let (report, fits) = check_volume_regimes(&domain, &params, alpha, b, theta, &x_inner, &x_sigma)?;
            let code = verdict(report.pass);
            Outcome::json("check", &VolumeOut { report, fits }, code)
        }
        "doubling" => {
            let r = check_doubling(&domain, &params, alpha, b, theta, cfg.usize_or("samples", 1000)?, seed)?;
            Outcome::json("check", &r, verdict(r.pass))
        }
        "expansions" => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = check_distance_expansions(&domain, domain.beta0, cfg.usize_or("samples", 2000)?, &mut rng);
            Outcome::json("check", &r, 0)
        }
        other => Err(Error::Config(format!("unknown check {other}"))),
    }
}

fn run_capacity(cfg: &RunConfig) -> hbvp::Result<Outcome> {
    let domain = cfg.domain_model()?;
    let params = cfg.params()?;
    let am = params.alpha_minus;
    let default_set = {
        let mut c = vec![0.0; domain.dim];
        c[1] = 1.0;
        format!("cap:{}:0.2", c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
    };
    let set = TargetSet::parse(cfg.str_or("set", &default_set)).map_err(config_err)?;
    let opts = CapacityOptions {
        samples: cfg.usize_or("samples", CapacityOptions::default().samples)?,
        ..CapacityOptions::default()
    };
    let prob = CapacityProblem::new(
        &domain,
        set,
        cfg.f64_or("alpha", 2.0 * am)?,
        cfg.f64_or("b", 3.0)?,
        cfg.f64_or("theta", -3.0 * am)?,
        cfg.f64_or("s", 2.0)?,
        cloud(cfg)?,
        opts,
    )
    .map_err(config_err)?;
    let est = estimate(&prob)?;
    let code = if est.feasible { 0 } else { EXIT_INCONCLUSIVE };
    Outcome::json("capacity", &est, code)
}

#[derive(Serialize)]
struct SolveOut<'a> {
    problem: &'a str,
    p: f64,
    report: IterationReport,
}

fn status_code(s: Status) -> u8 {
    match s {
        Status::Converged => 0,
        Status::Diverged => EXIT_DIVERGED,
        Status::MaxIter => EXIT_INCONCLUSIVE,
    }
}

fn run_solve(cfg: &RunConfig) -> hbvp::Result<Outcome> {
    let domain = cfg.domain_model()?;
    let params = cfg.params()?;
    let p = cfg.f64_or("p", 2.0)?;
    let default_nu =
        format!("dirac:{}", domain.sigma_anchor().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","));
    let nu = BoundaryMeasure::parse(cfg.str_or("measure", &default_nu), &domain)?;
    let opts = SolverOptions { seed: cfg.cloud.seed, ..SolverOptions::default() };
    let c = cloud(cfg)?;
    match cfg.str_or("problem", "source") {
        "source" => {
            let prob = SourceProblem::new(&domain, &params, p, &nu, c, opts).map_err(config_err)?;
            if cfg.str_or("threshold", "false") == "true" {
                let r = sigma_threshold(&prob)?;
                let code = if r.sigma == 0.0 { EXIT_DIVERGED } else { 0 };
                return Outcome::json("threshold", &r, code);
            }
            let (v, report) = prob.solve_v(cfg.f64_or("sigma", 1e-3)?, None)?;
            let code = status_code(report.status);
            let field = if report.converged() { Some(prob.to_u(&v)?) } else { None };
            let mut out = Outcome::json("solve", &SolveOut { problem: "source", p, report }, code)?;
            out.field = field;
            Ok(out)
        }
        "absorption" => {
            let (u, report) = solve_absorption(&domain, &params, p, &nu, c, opts).map_err(config_err)?;
            let code = status_code(report.status);
            let mut out = Outcome::json("solve", &SolveOut { problem: "absorption", p, report }, code)?;
            out.field = Some(u);
            Ok(out)
        }
        other => Err(Error::Config(format!("scenario.problem must be source or absorption, got {other}"))),
    }
}

#[derive(Serialize)]
struct BarrierOut {
    barrier: hbvp::barrier::Barrier,
    report: CheckReport,
}

fn run_barrier(cfg: &RunConfig) -> hbvp::Result<Outcome> {
    let domain = cfg.domain_model()?;
    let params = cfg.params()?;
    let p = cfg.f64_or("p", 2.0)?;
    let spec = BarrierSpec::standard(&domain, &params, p);
    let search =
        BarrierSearch { n_probe: cfg.usize_or("n_probe", 20_000)?, seed: cfg.cloud.seed, ..BarrierSearch::default() };
    let (barrier, report) = build_barrier(&domain, &params, p, spec, search).map_err(config_err)?;
    Outcome::json("barrier", &BarrierOut { barrier, report }, 0)
}

fn run_scan(cfg: &RunConfig) -> hbvp::Result<Outcome> {
    let sc = PhaseScanConfig::from_run(cfg)?;
    let d = phase_scan(&sc)?;
    let mut out = Outcome::json("scan", &d, 0)?;
    out.csv = Some(d.csv());
    Ok(out)
}

#[derive(Serialize)]
struct ExponentsOut {
    table: ExponentTable,
    lambda: Option<RayleighEstimate>,
}

fn run_exponents(cfg: &RunConfig) -> hbvp::Result<Outcome> {
    let domain = cfg.domain_model()?;
    let table = exponent_table(&domain, cfg.domain.mu)?;
    let lambda = if cfg.str_or("lambda", "false") == "true" {
        let spec = LatticeSpec { n: cfg.usize_or("lattice", 24)?, ..LatticeSpec::default() };
        Some(rayleigh_lambda_estimate(&domain, cfg.domain.mu, spec)?)
    } else {
        None
    };
    Outcome::json("exponents", &ExponentsOut { table, lambda }, 0)
}

fn run(cli: &Cli) -> hbvp::Result<(Outcome, RunConfig)> {
    let cfg = build_config(cli)?;
    let out = match cli.cmd {
        Cmd::Kernel { .. } => run_kernel(&cfg)?,
        Cmd::Check { .. } => run_check(&cfg)?,
        Cmd::Capacity { .. } => run_capacity(&cfg)?,
        Cmd::Solve { .. } => run_solve(&cfg)?,
        Cmd::Barrier { .. } => run_barrier(&cfg)?,
        Cmd::Scan { .. } => run_scan(&cfg)?,
        Cmd::Exponents { .. } => run_exponents(&cfg)?,
    };
    Ok((out, cfg))
}

fn write_outputs(name: &str, out: &Outcome, dir: &PathBuf) -> hbvp::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{name}.json")), format!("{}\n", out.json))?;
    if let Some(csv) = &out.csv {
        std::fs::write(dir.join(format!("{name}.csv")), csv)?;
    }
    if let Some(f) = &out.field {
        f.save(&dir.join(format!("{name}.field")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG),
            };
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 || rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            eprintln!("error: cannot start {t} worker threads");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    match run(&cli) {
        Ok((out, cfg)) => {
            println!("{}", out.json);
            if let Some(dir) = &cfg.out {
                if let Err(e) = write_outputs(cli.cmd.name(), &out, dir) {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
            ExitCode::from(out.code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
