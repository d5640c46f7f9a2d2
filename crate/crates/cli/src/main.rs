//! `stefanlab`: simulate Stefan scenarios, analyze stored runs and certify barriers.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use stefanlab::barrier::{
    self, BarrierCertificate, CubicSpline, Region, Sampling, TravelingWaveCandidate,
};
use stefanlab::config::ScenarioConfig;
use stefanlab::elliptic::EllipticOperatorSpec;
use stefanlab::io;
use stefanlab::pipeline::{self, Lemma31Report, TheoremReport};
use stefanlab::stefan;
use stefanlab::svg;

const SCHEMA_HELP: &str = "\
config files are TOML (or JSON when the name ends in .json); unknown keys are rejected.

top level      seed, resolution, out
[scenario]     n, lambda, K, lower, upper, h, t_start, t_end, store_dt,
               operator = { kind = trace | pucci_plus | pucci_minus | bellman_min | bellman_max, K, matrices },
               source   = { kind = constant, value } | { kind = sinusoid, amplitude, wavenumber },
               initial  = { kind = traveling_wave, c, scale } | { kind = plane, slope, height, tilt }
                        | { kind = wavy, slope, height, amplitude, wavenumber } | { kind = zero, height },
               top      = { kind = hold_initial } | { kind = traveling_wave } | { kind = value, value }
[analysis]     eta_sweep, alpha0, p0, eps_threshold, flat_center, flat_radius, direction_samples,
               nondeg_radii, nondeg_times, nondeg_sphere, certify, certify_samples, seed
[lemma31]      n, K, h, operator, source, lambdas, certify_samples, seed";

#[derive(Parser, Debug)]
#[command(
    name = "stefanlab",
    version,
    about = "Stefan problem experiments and barrier certificates"
)]
struct Cli {
    /// Output directory (default: `out` from the config, else runs/<config name>)
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Grid spacing overriding the config
    #[arg(long, global = true, value_name = "H")]
    resolution: Option<f64>,
    /// Seed overriding the config
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Print nothing on success
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and store the field and front
    Simulate { config: PathBuf },
    /// Analyze a stored run directory
    Analyze { run_dir: PathBuf },
    /// Certify a closed-form barrier
    Certify {
        #[command(subcommand)]
        barrier: Barrier,
    },
    /// Simulate and analyze in one go
    Theorem { config: PathBuf },
    /// Front penetration sweep over lambda with the radial barrier bound
    Lemma31 { config: PathBuf },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum OperatorArg {
    Trace,
    PucciPlus,
    PucciMinus,
}

#[derive(Args, Debug)]
struct OperatorArgs {
    /// Operator to certify against
    #[arg(long, value_enum, default_value = "trace")]
    operator: OperatorArg,
    /// Ellipticity constant of a Pucci operator
    #[arg(long, default_value_t = 2.0)]
    ellipticity: f64,
}

impl OperatorArgs {
    fn spec(&self) -> EllipticOperatorSpec {
        match self.operator {
            OperatorArg::Trace => EllipticOperatorSpec::trace(),
            OperatorArg::PucciPlus => EllipticOperatorSpec::pucci_plus(self.ellipticity),
            OperatorArg::PucciMinus => EllipticOperatorSpec::pucci_minus(self.ellipticity),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Barrier {
    /// Hopf barrier on B_1 x (0, T] against M^-_K
    Hopf {
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long = "K", default_value_t = 2.0)]
        k: f64,
        #[arg(long, default_value_t = 0.5)]
        delta: f64,
        /// Horizon; defaults to the largest admissible one
        #[arg(long = "T")]
        t: Option<f64>,
        /// Grid points per axis of the space-time sample
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
    /// Radial supersolution w on B_2 x (0, 1]; searches C0 and sigma unless --c0 is given
    Lemma31 {
        #[arg(long, default_value_t = 2)]
        n: usize,
        /// Bound on the data
        #[arg(long = "K", default_value_t = 2.0)]
        k: f64,
        #[arg(long, default_value_t = 0.05)]
        lambda: f64,
        #[arg(long)]
        c0: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        sigma: f64,
        /// Upper bound on the source
        #[arg(long, default_value_t = 0.0)]
        source: f64,
        #[command(flatten)]
        op: OperatorArgs,
        /// Halton sample count
        #[arg(long, default_value_t = 4000)]
        samples: usize,
    },
    /// Perturbed plane subsolution with constant slope coefficient
    Section3 {
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 1e-4)]
        eta: f64,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        gamma: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Slope coefficient
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        /// Bound on the negative part of the source
        #[arg(long, default_value_t = 0.0)]
        source: f64,
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, default_value_t = 4000)]
        samples: usize,
    },
    /// Exact traveling wave; both defects vanish, so the strict test fails
    TravelingWave {
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        c: f64,
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        #[command(flatten)]
        op: OperatorArgs,
        #[arg(long, default_value_t = 4000)]
        samples: usize,
    },
}

enum Failure {
    /// Bad invocation or config: exit 2.
    Usage(String),
    /// Runtime error after a valid invocation: exit 1.
    Run(String),
}

type Outcome = Result<bool, Failure>;

fn run_err(e: impl ToString) -> Failure {
    Failure::Run(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { config } => simulate_cmd(&cli, config),
        Command::Analyze { run_dir } => analyze_cmd(&cli, run_dir),
        Command::Certify { barrier } => certify_cmd(&cli, barrier),
        Command::Theorem { config } => theorem_cmd(&cli, config),
        Command::Lemma31 { config } => lemma31_cmd(&cli, config),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{SCHEMA_HELP}");
            ExitCode::from(2)
        }
    }
}

fn say(cli: &Cli, text: impl AsRef<str>) {
    if !cli.quiet {
        println!("{}", text.as_ref());
    }
}

fn load_config(cli: &Cli, path: &Path) -> Result<ScenarioConfig, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!(
            "config file {} not found",
            path.display()
        )));
    }
    let mut c = ScenarioConfig::load(path).map_err(|e| Failure::Usage(e.to_string()))?;
    if cli.resolution.is_some() {
        c.resolution = cli.resolution;
    }
    if cli.seed.is_some() {
        c.seed = cli.seed;
    }
    c.resolved()
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn out_dir(cli: &Cli, config: &ScenarioConfig, config_path: &Path) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| {
            let stem = config_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into());
            PathBuf::from("runs").join(stem)
        })
}

/// Resolved config with the storage interval the analysis needs, and its echo.
fn prepared(cli: &Cli, path: &Path) -> Result<(ScenarioConfig, String), Failure> {
    let mut config = load_config(cli, path)?;
    let scenario = config
        .scenario()
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    config.scenario = Some(pipeline::prepare_scenario(scenario, &config.analysis));
    let echo = config.to_toml().map_err(run_err)?;
    Ok((config, echo))
}

fn simulate_cmd(cli: &Cli, path: &Path) -> Outcome {
    let (config, echo) = prepared(cli, path)?;
    let dir = out_dir(cli, &config, path);
    let sol = stefan::simulate(config.scenario().map_err(run_err)?).map_err(run_err)?;
    io::save_run(&dir, &echo, &sol).map_err(run_err)?;
    let summary = json!({ "stats": sol.stats, "levels": sol.field.time.levels, "intercepts": sol.front.intercepts().ok() });
    write_artifact(&dir, io::REPORT, &summary)?;
    say(
        cli,
        format!(
            "simulated {} levels, {} steps; run stored in {}",
            sol.field.time.levels,
            sol.stats.steps,
            dir.display()
        ),
    );
    Ok(true)
}

fn analyze_cmd(cli: &Cli, run_dir: &Path) -> Outcome {
    if !run_dir.join(io::METADATA).is_file() {
        return Err(Failure::Usage(format!(
            "{} is not a run directory (no {})",
            run_dir.display(),
            io::METADATA
        )));
    }
    let (_, echo, sol) = io::load_run(run_dir).map_err(run_err)?;
    let mut config = ScenarioConfig::from_toml(&echo).map_err(run_err)?;
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    let config = config.resolved().map_err(run_err)?;
    let report = pipeline::analyze_solution(&sol, &config.analysis);
    let dir = cli.out.clone().unwrap_or_else(|| run_dir.to_path_buf());
    if dir != run_dir {
        io::save_run(&dir, &echo, &sol).map_err(run_err)?;
    }
    write_theorem_outputs(&dir, &report)?;
    print_theorem(cli, &report, &dir);
    Ok(report.passed())
}

fn theorem_cmd(cli: &Cli, path: &Path) -> Outcome {
    let (config, echo) = prepared(cli, path)?;
    let dir = out_dir(cli, &config, path);
    let (sol, report) =
        pipeline::run_theorem_experiment(config.scenario().map_err(run_err)?, &config.analysis);
    match &sol {
        Some(sol) => io::save_run(&dir, &echo, sol).map(|_| ()),
        None => io::save_echo(&dir, &echo).map(|_| ()),
    }
    .map_err(run_err)?;
    write_theorem_outputs(&dir, &report)?;
    print_theorem(cli, &report, &dir);
    Ok(report.passed())
}

fn write_artifact<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    io::write_json(value, &dir.join(name)).map_err(run_err)?;
    io::register_artifact(dir, name).map_err(run_err)
}

fn write_certificates(dir: &Path, certs: &[BarrierCertificate]) -> Result<(), Failure> {
    for name in io::write_certificates(dir, certs).map_err(run_err)? {
        io::register_artifact(dir, &name).map_err(run_err)?;
    }
    Ok(())
}

fn write_theorem_outputs(dir: &Path, report: &TheoremReport) -> Result<(), Failure> {
    write_artifact(dir, io::REPORT, report)?;
    let path = dir.join(io::DASHBOARD);
    std::fs::write(&path, svg::dashboard(report))
        .map_err(|e| Failure::Run(format!("{}: {e}", path.display())))?;
    io::register_artifact(dir, io::DASHBOARD).map_err(run_err)?;
    write_certificates(dir, &report.certificates)
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

fn print_theorem(cli: &Cli, r: &TheoremReport, dir: &Path) {
    if cli.quiet {
        return;
    }
    match r.epsilon0 {
        Some(e) => println!("flatness epsilon0 = {e:.3e}"),
        None => println!("flatness not measured"),
    }
    println!(
        "bounds 0 <= u <= K: {} (max u = {:.4})",
        mark(r.bounds_pass),
        r.u_max
    );
    println!("nondegeneracy: {}", mark(r.nondeg_pass));
    for row in &r.eta_rows {
        println!(
            "eta = {:<6} residual = {:.4}  ode defect = {:.1e}  a in [{:.4}, {:.4}]  {}",
            row.eta,
            row.residual,
            row.ode_defect,
            row.a_min,
            row.a_max,
            mark(row.passes)
        );
    }
    println!("{} certificates", r.certificates.len());
    if let Some(f) = &r.failure {
        println!("stage {} failed: {}", f.stage, f.message);
    }
    println!(
        "hypotheses {}, conclusion {}; report in {}",
        mark(r.hypothesis_pass),
        mark(r.conclusion_pass),
        dir.display()
    );
}

fn lemma31_cmd(cli: &Cli, path: &Path) -> Outcome {
    let config = load_config(cli, path)?;
    let echo = config.to_toml().map_err(run_err)?;
    let dir = out_dir(cli, &config, path);
    let report = pipeline::lemma31_experiment(&config.lemma31);
    io::save_echo(&dir, &echo).map_err(run_err)?;
    write_artifact(&dir, io::REPORT, &report)?;
    let certs: Vec<BarrierCertificate> = [&report.search, &report.search_uniform]
        .into_iter()
        .flatten()
        .filter_map(|s| s.certified.clone())
        .collect();
    write_certificates(&dir, &certs)?;
    print_lemma31(cli, &report, &dir);
    Ok(report.passed())
}

fn print_lemma31(cli: &Cli, r: &Lemma31Report, dir: &Path) {
    if cli.quiet {
        return;
    }
    for row in &r.rows {
        match (&row.error, row.bound) {
            (Some(e), _) => println!("lambda = {:<6} error: {e}", row.lambda),
            (None, Some(b)) => println!(
                "lambda = {:<6} depth = {:.4}  bound = {:.4}  {}",
                row.lambda,
                row.depth,
                b,
                mark(row.depth <= b)
            ),
            (None, None) => println!(
                "lambda = {:<6} depth = {:.4}  no certified bound",
                row.lambda, row.depth
            ),
        }
    }
    if let Some(c) = r.fitted_c {
        println!("fitted depth / lambda = {c:.4}");
    }
    for (name, search) in [
        ("scenario operator", &r.search),
        ("uniform operator", &r.search_uniform),
    ] {
        if let Some(s) = search {
            match &s.certified {
                Some(c) => println!("{name}: certified with {}", c.constants),
                None => println!(
                    "{name}: no certified barrier in {} attempts",
                    s.attempts.len()
                ),
            }
        }
    }
    if let Some(f) = &r.failure {
        println!("stage {} failed: {}", f.stage, f.message);
    }
    println!("{}; report in {}", mark(r.passed()), dir.display());
}

fn certify_cmd(cli: &Cli, b: &Barrier) -> Outcome {
    let seed = cli.seed.unwrap_or(0);
    let usage = |e: stefanlab::Error| Failure::Usage(e.to_string());
    let (summary, certs, ok): (serde_json::Value, Vec<BarrierCertificate>, bool) = match b {
        Barrier::Hopf {
            n,
            k,
            delta,
            t,
            samples,
        } => {
            let t = match t {
                Some(t) => *t,
                None => barrier::hopf_t_tilde(*n, *k, *delta).map_err(usage)?,
            };
            let rep = barrier::certify_hopf(
                *n,
                *k,
                *delta,
                t,
                Sampling::Grid { per_axis: *samples },
                seed,
            )
            .map_err(usage)?;
            let ok = rep.certificate.verdict && rep.lateral_min_dt > 0.0;
            say(
                cli,
                format!(
                    "T~ = {:.6e}; T = {} in {} piece(s) of {:.6e}",
                    rep.t_tilde, rep.requested_t, rep.pieces, rep.params.t
                ),
            );
            say(
                cli,
                format!(
                    "kappa = {} (log10 kappa = {:.4})",
                    sci_from_log10(rep.kappa_log10),
                    rep.kappa_log10
                ),
            );
            say(
                cli,
                format!(
                    "mu = {:.6e}; min d_t h on |x| = 1: {:.3e}",
                    rep.mu, rep.lateral_min_dt
                ),
            );
            let cert = rep.certificate.clone();
            (serde_json::to_value(&rep).map_err(run_err)?, vec![cert], ok)
        }
        Barrier::Lemma31 {
            n,
            k,
            lambda,
            c0,
            sigma,
            source,
            op,
            samples,
        } => {
            let sampling = Sampling::Halton { count: *samples };
            match c0 {
                Some(c0) => {
                    let w = barrier::lemma31_w(*c0, *lambda, *n, *sigma).map_err(usage)?;
                    let region = Region::ball(vec![0.0; *n], 2.0, 0.0, 1.0);
                    let cert =
                        barrier::certify(&w, &op.spec(), *source, *lambda, &region, sampling, seed)
                            .map_err(usage)?;
                    print_cert(cli, &cert);
                    let ok = cert.verdict;
                    (json!({ "barrier": w, "certificate": cert }), vec![cert], ok)
                }
                None => {
                    let s = barrier::lemma31_search(
                        *n,
                        *k,
                        &[*lambda],
                        *source,
                        &op.spec(),
                        sampling,
                        seed,
                    )
                    .map_err(usage)?;
                    match &s.certified {
                        Some(c) => print_cert(cli, c),
                        None => say(
                            cli,
                            format!("no certified barrier in {} attempts", s.attempts.len()),
                        ),
                    }
                    let certs: Vec<_> = s.certified.iter().cloned().collect();
                    let ok = !certs.is_empty();
                    (serde_json::to_value(&s).map_err(run_err)?, certs, ok)
                }
            }
        }
        Barrier::Section3 {
            n,
            eta,
            gamma,
            lambda,
            a,
            source,
            op,
            samples,
        } => {
            let spline = CubicSpline::new(-1.0, 0.01, vec![*a; 101]).map_err(usage)?;
            let s = barrier::section3_search(
                *n,
                *eta,
                *gamma,
                *lambda,
                Arc::new(spline),
                &op.spec(),
                *source,
                Sampling::Halton { count: *samples },
                seed,
            )
            .map_err(usage)?;
            match (&s.chosen, &s.certificate) {
                (Some((c1, c2, c3)), Some(c)) => {
                    say(cli, format!("C1 = {c1:.4}, C2 = {c2:.4}, C3 = {c3:.4}"));
                    print_cert(cli, c);
                }
                _ => say(
                    cli,
                    format!(
                        "no admissible constants among {} values of C3",
                        s.c3_box.len()
                    ),
                ),
            }
            let certs: Vec<_> = s.certificate.iter().cloned().collect();
            let ok = s.chosen.is_some();
            (serde_json::to_value(&s).map_err(run_err)?, certs, ok)
        }
        Barrier::TravelingWave {
            n,
            c,
            lambda,
            op,
            samples,
        } => {
            let wave = stefan::traveling_wave(*c, *lambda).map_err(usage)?;
            let cand = TravelingWaveCandidate { wave, n: *n };
            let region = Region::comoving(0.5, *n, -1.0, 0.0);
            let cert = barrier::certify(
                &cand,
                &op.spec(),
                0.0,
                *lambda,
                &region,
                Sampling::Halton { count: *samples },
                seed,
            )
            .map_err(usage)?;
            print_cert(cli, &cert);
            let ok = cert.verdict;
            (
                serde_json::to_value(&cert).map_err(run_err)?,
                vec![cert],
                ok,
            )
        }
    };
    if let Some(dir) = &cli.out {
        let echo =
            serde_json::to_string_pretty(&json!({ "command": format!("{b:?}"), "seed": seed }))
                .map_err(run_err)?
                + "\n";
        io::save_echo(dir, &echo).map_err(run_err)?;
        write_artifact(dir, io::REPORT, &summary)?;
        write_certificates(dir, &certs)?;
    }
    say(cli, mark(ok));
    Ok(ok)
}

/// `10^l` in scientific notation, valid far outside the `f64` range.
fn sci_from_log10(l: f64) -> String {
    if !l.is_finite() {
        return format!("10^{l}");
    }
    let e = l.floor();
    format!("{:.6}e{}", 10f64.powf(l - e), e)
}

fn print_cert(cli: &Cli, c: &BarrierCertificate) {
    say(
        cli,
        format!(
            "{} ({:?}) against {:?}: constants {}",
            c.candidate, c.kind, c.operator.kind, c.constants
        ),
    );
    let front = c
        .front_margin
        .map(|m| format!("{m:.4e}"))
        .unwrap_or_else(|| "n/a".into());
    say(
        cli,
        format!(
            "interior margin = {:.4e}, front margin = {front}, {} + {} samples",
            c.interior_margin, c.interior_samples, c.front_samples
        ),
    );
}
