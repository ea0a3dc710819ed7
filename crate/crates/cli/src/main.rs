use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use log::info;

use gridlqr::data::{read_case_text, read_machine_text};
use gridlqr::dispatch::Method;
use gridlqr::scenario::{
    format_report_table, run_scenario, sweep_alpha, write_report_csv, write_sweep_csv,
    write_timings_csv, ScenarioConfig,
};
use gridlqr::simulator::ControllerKind;

#[derive(Parser, Debug)]
#[command(
    name = "gridlqr",
    version,
    about = "Stability-aware OPF with LQR load-following costs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dispatch, simulate and report one step-load scenario.
    Run(RunArgs),
    /// Control costs of both methods over a range of coupling coefficients.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Default, Clone)]
struct CommonArgs {
    /// Case file path or bundled case name (case9, case14, case39, case57).
    #[arg(long)]
    case: Option<String>,
    /// Machine parameter file, or `typical`.
    #[arg(long)]
    machines: Option<String>,
    /// Coupling coefficient in [0, 1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Time-scale factor of the LQR cost.
    #[arg(long)]
    tlqr: Option<f64>,
    /// ALQR-OPF iterations.
    #[arg(long)]
    kmax: Option<usize>,
    /// Load step as a fraction of the base demand.
    #[arg(long = "step-frac")]
    step_frac: Option<f64>,
    /// Power factor of the load step.
    #[arg(long)]
    pf: Option<f64>,
    /// Simulation horizon (s).
    #[arg(long)]
    tf: Option<f64>,
    /// Integration step (s).
    #[arg(long)]
    dt: Option<f64>,
    /// Store every n-th integration step in trajectory files.
    #[arg(long)]
    decimation: Option<usize>,
    /// Area partition file with `bus_id area_id` lines.
    #[arg(long)]
    areas: Option<PathBuf>,
    /// AGC integrator gain (1/s).
    #[arg(long = "agc-gain")]
    agc_gain: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scenario file of `key = value` lines using the flag names.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Controllers to simulate (comma separated).
    #[arg(long, value_enum, value_delimiter = ',')]
    controller: Vec<ControllerArg>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Write the linearization matrices to OUT/matrices.
    #[arg(long = "dump-matrices")]
    dump_matrices: bool,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Coupling coefficients (comma separated).
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ControllerArg {
    Lqr,
    Agc,
    Open,
}

impl From<ControllerArg> for ControllerKind {
    fn from(c: ControllerArg) -> Self {
        match c {
            ControllerArg::Lqr => ControllerKind::Lqr,
            ControllerArg::Agc => ControllerKind::Agc,
            ControllerArg::Open => ControllerKind::Open,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MethodArg {
    Alqr,
    Baseline,
    Both,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Alqr => vec![Method::Alqr],
            MethodArg::Baseline => vec![Method::Baseline],
            MethodArg::Both => vec![Method::Alqr, Method::Baseline],
        }
    }
}

const DEFAULT_ALPHAS: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];

/// Errors in the inputs; reported with usage text and exit code 1.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(UsageError(e))
}

fn parse_config_file(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{}:{}: expected 'key = value'", path.display(), idx + 1))?;
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

fn parse_value<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
) -> anyhow::Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    map.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|e| anyhow!("config key '{key}': {e}"))
        })
        .transpose()
}

/// Applies flags over the config file over the defaults.
fn build_config(
    common: &CommonArgs,
) -> anyhow::Result<(ScenarioConfig, PathBuf, BTreeMap<String, String>)> {
    let file = match &common.config {
        Some(p) => parse_config_file(p)?,
        None => BTreeMap::new(),
    };
    const KNOWN: &[&str] = &[
        "case",
        "machines",
        "alpha",
        "tlqr",
        "kmax",
        "step-frac",
        "pf",
        "tf",
        "dt",
        "decimation",
        "areas",
        "agc-gain",
        "out",
        "controller",
        "method",
        "dump-matrices",
        "alphas",
    ];
    if let Some(k) = file.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        bail!("unknown config key '{k}'");
    }

    let mut cfg = ScenarioConfig::default();
    macro_rules! layer {
        ($flag:expr, $key:literal, $target:expr) => {
            if let Some(v) = $flag.clone().or(parse_value(&file, $key)?) {
                $target = v;
            }
        };
    }
    layer!(common.case, "case", cfg.case);
    let machines: Option<String> = common.machines.clone().or(parse_value(&file, "machines")?);
    cfg.machines = machines.filter(|m| m != "typical");
    layer!(common.alpha, "alpha", cfg.dispatch.weights.alpha);
    layer!(common.tlqr, "tlqr", cfg.dispatch.weights.t_lqr);
    layer!(common.kmax, "kmax", cfg.dispatch.k_max);
    layer!(common.step_frac, "step-frac", cfg.step_frac);
    layer!(common.pf, "pf", cfg.power_factor);
    layer!(common.tf, "tf", cfg.sim.t_f);
    layer!(common.dt, "dt", cfg.sim.dt);
    layer!(common.decimation, "decimation", cfg.sim.decimation);
    layer!(common.agc_gain, "agc-gain", cfg.agc_gain);
    let areas: Option<PathBuf> = common.areas.clone().or(parse_value(&file, "areas")?);
    if let Some(p) = areas {
        cfg.areas = Some(
            fs::read_to_string(&p).with_context(|| format!("reading area file {}", p.display()))?,
        );
    }
    let out: PathBuf = common
        .out
        .clone()
        .or(parse_value(&file, "out")?)
        .unwrap_or_else(|| PathBuf::from("gridlqr-out"));

    read_case_text(&cfg.case).context("case file")?;
    read_machine_text(cfg.machines.as_deref()).context("machine file")?;
    cfg.validate()?;
    Ok((cfg, out, file))
}

fn parse_list<T, F>(text: &str, f: F) -> anyhow::Result<Vec<T>>
where
    F: Fn(&str) -> anyhow::Result<T>,
{
    text.split(',').map(|s| f(s.trim())).collect()
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let (mut cfg, out, file) = build_config(&args.common).map_err(usage)?;
    if !args.controller.is_empty() {
        cfg.controllers = args.controller.iter().map(|&c| c.into()).collect();
    } else if let Some(v) = file.get("controller") {
        cfg.controllers = parse_list(v, |s| {
            ControllerArg::from_str(s, true)
                .map(Into::into)
                .map_err(|e| anyhow!("config key 'controller': {e}"))
        })
        .map_err(usage)?;
    }
    cfg.controllers.dedup();
    let method = match args.method {
        Some(m) => Some(m),
        None => file
            .get("method")
            .map(|v| MethodArg::from_str(v, true).map_err(|e| anyhow!("config key 'method': {e}")))
            .transpose()
            .map_err(usage)?,
    };
    if let Some(m) = method {
        cfg.methods = m.methods();
    }
    let dump = args.dump_matrices || file.get("dump-matrices").is_some_and(|v| v == "true");

    let output = run_scenario(&cfg)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_report_csv(
        &output.reports,
        BufWriter::new(File::create(out.join("report.csv"))?),
    )?;
    write_timings_csv(
        &output.reports,
        BufWriter::new(File::create(out.join("timings.csv"))?),
    )?;
    let table = format_report_table(&output.reports);
    fs::write(out.join("report.txt"), &table)?;

    let mut log_text = String::new();
    for sol in &output.dispatch {
        for rec in &sol.log {
            log_text.push_str(&format!("{} {rec}\n", sol.method.label()));
        }
    }
    fs::write(out.join("dispatch_log.txt"), log_text)?;

    for (report, traj) in output.reports.iter().zip(&output.trajectories) {
        let name = format!(
            "trajectory_{}_{}.csv",
            slug(report.method.label()),
            slug(report.controller.label())
        );
        let path = out.join(name);
        traj.write_csv(
            &output.sys,
            &output.area_ids,
            BufWriter::new(File::create(&path)?),
        )?;
        info!("wrote {}", path.display());
    }
    if dump {
        output.lin.dump(&out.join("matrices"))?;
    }
    print!("{table}");
    Ok(())
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let (cfg, out, file) = build_config(&args.common).map_err(usage)?;
    let alphas = if !args.alphas.is_empty() {
        args.alphas.clone()
    } else if let Some(v) = file.get("alphas") {
        parse_list(v, |s| {
            s.parse::<f64>()
                .map_err(|e| anyhow!("config key 'alphas': {e}"))
        })
        .map_err(usage)?
    } else {
        DEFAULT_ALPHAS.to_vec()
    };
    if let Some(a) = alphas.iter().find(|a| !(0.0..1.0).contains(*a)) {
        return Err(usage(anyhow!("alpha must lie in [0, 1), got {a}")));
    }
    let rows = sweep_alpha(&cfg, &alphas)?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_sweep_csv(
        &rows,
        BufWriter::new(File::create(out.join("coupling.csv"))?),
    )?;
    write_sweep_csv(&rows, std::io::stdout())?;
    Ok(())
}

fn slug(label: &str) -> String {
    label.to_ascii_lowercase().replace(['-', ' '], "_")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}\n");
            let _ = Cli::command().print_help();
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
