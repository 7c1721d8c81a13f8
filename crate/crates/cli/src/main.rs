//! `eigencc`: calibrate, run and study the eigenvector perturbation
//! control chart from the command line.

mod commands;
mod error;
mod io;
mod manifest;

use std::io::Write;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use commands::{execute, load_replay_manifest, read_limit};
use error::{CliError, CliResult, EXIT_FAILURE, EXIT_OK};
use eigencc::chart::BootstrapSubstitution;
use io::{InputFormat, Sinks};
use manifest::{parse_assignment, resolve_seed, ChartSettings, RunManifest, SimulateSpec, StreamFormat, Study, Verb};

const AFTER_HELP: &str = "\
Exit codes: 0 success, 1 I/O or schema error, 2 degenerate data, 3 alarm.
Errors are reported on stderr as one line of JSON: {\"error\", \"message\", \"exit_code\"[, \"row\"]}.
Seed precedence: --seed, then EIGENCC_SEED, then the manifest's \"seed\".
Profiles are CSV (one row per time step, n numeric columns, optional header)
or NDJSON ({\"t\": int, \"y\": [n numbers]} per line). See FORMATS.md.";

#[derive(Parser)]
#[command(name = "eigencc", version, about = "Eigenvector perturbation control chart for profile monitoring", after_help = AFTER_HELP)]
struct Cli {
    /// Worker threads for simulations (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bootstrap a control limit from historical in-control profiles.
    Calibrate(CalibrateArgs),
    /// Stream profiles through the chart; NDJSON out, exit 3 on alarm.
    Monitor(MonitorArgs),
    /// Run a simulation study; writes a per-trial CSV and a per-cell JSON.
    Simulate(SimulateArgs),
    /// Emit synthetic historical and monitoring streams from profile functions.
    ProfileGen(ProfileGenArgs),
    /// Aggregate per-trial CSVs into one row per cell.
    Report(ReportArgs),
    /// Re-execute a run from its manifest echo.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Common {
    /// Run manifest (JSON); flags override its fields.
    #[arg(long)]
    manifest: Option<String>,
    /// Master seed.
    #[arg(long, env = "EIGENCC_SEED")]
    seed: Option<u64>,
}

impl Common {
    fn load(&self, verb: Verb) -> CliResult<RunManifest> {
        let mut m = match &self.manifest {
            Some(p) => RunManifest::load(p)?,
            None => RunManifest::default(),
        };
        if let Some(v) = m.verb.filter(|v| *v != verb) {
            return Err(CliError::Usage(format!("manifest is for {v:?}, not {verb:?}")));
        }
        m.verb = Some(verb);
        Ok(m)
    }
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    /// Historical profiles (CSV or NDJSON).
    #[arg(long)]
    historical: Option<String>,
    /// Control limit output; `-` is stdout.
    #[arg(long)]
    out: Option<String>,
    #[arg(long, value_enum)]
    input_format: Option<InputFormat>,
    /// Window size w.
    #[arg(long)]
    w: Option<usize>,
    /// Number of k₁ values L used to build K.
    #[arg(long)]
    l: Option<usize>,
    /// Explicit K, comma separated.
    #[arg(long = "k", value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    #[arg(long)]
    zeta: Option<f64>,
    /// Tail probability of the control limit.
    #[arg(long)]
    c: Option<f64>,
    /// Bootstrap statistics N.
    #[arg(long)]
    n_stat: Option<usize>,
    /// Bootstrap profile pool N₀.
    #[arg(long)]
    n_pool: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_enum)]
    substitution: Option<Substitution>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Substitution {
    Pool,
    Bank,
}

#[derive(Args)]
struct MonitorArgs {
    #[command(flatten)]
    common: Common,
    /// Output of `calibrate`, or a bare control limit.
    #[arg(long)]
    limit: Option<String>,
    /// Historical profiles; defaults to those recorded in the limit file.
    #[arg(long)]
    historical: Option<String>,
    /// Monitoring stream; `-` is stdin.
    #[arg(long)]
    stream: Option<String>,
    /// NDJSON output; `-` is stdout.
    #[arg(long)]
    out: Option<String>,
    #[arg(long, value_enum)]
    input_format: Option<InputFormat>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    study: Option<Study>,
    /// Simulation option override, e.g. `trials=5` (repeatable).
    #[arg(long = "set")]
    set: Vec<String>,
    /// Grid override, e.g. `snrs=[3]` (repeatable).
    #[arg(long = "grid")]
    grid: Vec<String>,
    /// JSON list of cells for a custom study.
    #[arg(long)]
    cells: Option<String>,
    /// Keep cells whose id contains this string.
    #[arg(long)]
    filter: Option<String>,
    /// Directory for trials.csv and cells.json.
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    trials_out: Option<String>,
    #[arg(long)]
    cells_out: Option<String>,
}

#[derive(Args)]
struct ProfileGenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    steps: Option<u64>,
    /// Historical profiles to write.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    shift_at: Option<i64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<StreamFormat>,
    /// Monitoring stream output; `-` is stdout.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    historical_out: Option<String>,
    #[arg(long)]
    design_out: Option<String>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Per-trial CSVs written by `simulate`.
    inputs: Vec<String>,
    /// Summary CSV; `-` is stdout.
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Manifest echo, `calibrate` output or `simulate` cells.json.
    manifest: String,
    /// Compare against the recorded outputs instead of rewriting them.
    #[arg(long)]
    check: bool,
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn resolve_calibrate(a: CalibrateArgs) -> CliResult<RunManifest> {
    let mut m = a.common.load(Verb::Calibrate)?;
    m.seed = Some(resolve_seed(a.common.seed, m.seed));
    set(&mut m.historical, a.historical);
    set(&mut m.outputs.limit, a.out);
    set(&mut m.input_format, a.input_format);
    m.input_format.get_or_insert_with(InputFormat::default);
    m.outputs.limit.get_or_insert_with(|| "-".into());
    let c = &mut m.chart;
    set(&mut c.w, a.w);
    if a.l.is_some() || a.w.is_some() {
        // A new w or L rebuilds K unless K is given explicitly.
        c.k_values = None;
    }
    set(&mut c.l, a.l);
    set(&mut c.k_values, a.k_values);
    if a.w.is_some() {
        c.max_iter = None;
    }
    set(&mut c.zeta, a.zeta);
    set(&mut c.c, a.c);
    set(&mut c.n_stat, a.n_stat);
    set(&mut c.n_pool, a.n_pool);
    set(&mut c.max_iter, a.max_iter);
    set(
        &mut c.substitution,
        a.substitution.map(|s| match s {
            Substitution::Pool => BootstrapSubstitution::Pool,
            Substitution::Bank => BootstrapSubstitution::Bank,
        }),
    );
    let config = m.chart.resolve(m.seed());
    config.validate()?;
    m.chart = ChartSettings::from_config(&config, m.chart.l);
    Ok(m)
}

fn resolve_monitor(a: MonitorArgs) -> CliResult<RunManifest> {
    let mut m = a.common.load(Verb::Monitor)?;
    set(&mut m.limit, a.limit);
    set(&mut m.historical, a.historical);
    set(&mut m.stream, a.stream);
    set(&mut m.outputs.monitor, a.out);
    set(&mut m.input_format, a.input_format);
    let limit_path = m.require(&m.limit, "--limit")?.clone();
    let (limit, file) = read_limit(&limit_path)?;
    if m.historical.is_none() {
        m.historical = file.as_ref().and_then(|f| f.manifest.historical.clone());
    }
    m.require(&m.historical, "--historical")?;
    m.seed = Some(a.common.seed.or(m.seed).unwrap_or(limit.config.seed));
    m.input_format.get_or_insert_with(InputFormat::default);
    m.stream.get_or_insert_with(|| "-".into());
    m.outputs.monitor.get_or_insert_with(|| "-".into());
    Ok(m)
}

fn assignments(items: &[String]) -> CliResult<serde_json::Map<String, Value>> {
    items.iter().map(|s| parse_assignment(s)).collect()
}

fn resolve_simulate(a: SimulateArgs) -> CliResult<RunManifest> {
    let mut m = a.common.load(Verb::Simulate)?;
    m.seed = Some(resolve_seed(a.common.seed, m.seed));
    let mut spec = match (m.simulate.take(), a.study) {
        (Some(mut s), study) => {
            if let Some(study) = study {
                s.study = study;
            }
            s
        }
        (None, Some(study)) => SimulateSpec { study, options: Default::default(), grid: Default::default(), cells: None, filter: None },
        (None, None) => return Err(CliError::Usage("missing --study".into())),
    };
    spec.options.extend(assignments(&a.set)?);
    spec.grid.extend(assignments(&a.grid)?);
    if let Some(path) = a.cells {
        spec.cells = Some(io::parse_json(&path)?);
    }
    set(&mut spec.filter, a.filter);
    m.simulate = Some(spec);
    // Resolve defaults so the echo is complete.
    let (opts, _) = commands::simulation_plan(&m)?;
    let spec = m.simulate.as_mut().expect("set above");
    let mut full = serde_json::to_value(&opts).expect("options serialize");
    full.as_object_mut().expect("object").remove("master_seed");
    spec.options = full.as_object().expect("object").clone();
    spec.grid = match spec.study {
        Study::Study1 => grid_map(&manifest::merge_overrides(&eigencc::sim::Study1Grid::default(), &spec.grid, "grid")?),
        Study::Study2 => grid_map(&manifest::merge_overrides(&eigencc::sim::Study2Grid::default(), &spec.grid, "grid")?),
        Study::Custom => Default::default(),
    };
    let dir = a.out_dir.unwrap_or_else(|| ".".into());
    let join = |f: &str| std::path::Path::new(&dir).join(f).to_string_lossy().into_owned();
    set(&mut m.outputs.trials, a.trials_out);
    set(&mut m.outputs.cells, a.cells_out);
    m.outputs.trials.get_or_insert_with(|| join("trials.csv"));
    m.outputs.cells.get_or_insert_with(|| join("cells.json"));
    Ok(m)
}

fn grid_map<T: serde::Serialize>(grid: &T) -> serde_json::Map<String, Value> {
    serde_json::to_value(grid).expect("grid serializes").as_object().expect("object").clone()
}

fn resolve_profile_gen(a: ProfileGenArgs) -> CliResult<RunManifest> {
    let mut m = a.common.load(Verb::ProfileGen)?;
    m.seed = Some(resolve_seed(a.common.seed, m.seed));
    let p = m
        .profile
        .as_mut()
        .ok_or_else(|| CliError::Usage("profile-gen needs a manifest with a profile section".into()))?;
    if let Some(s) = a.steps {
        p.steps = s;
    }
    if let Some(v) = a.m {
        p.m = v;
    }
    set(&mut p.shift_at, a.shift_at);
    if let Some(s) = a.sigma {
        p.sigma = s;
    }
    set(&mut p.n, a.n);
    set(&mut p.d, a.d);
    if let Some(f) = a.format {
        p.format = f;
    }
    set(&mut m.outputs.stream, a.out);
    set(&mut m.outputs.historical, a.historical_out);
    set(&mut m.outputs.design, a.design_out);
    m.outputs.stream.get_or_insert_with(|| "-".into());
    Ok(m)
}

fn resolve_report(a: ReportArgs) -> CliResult<RunManifest> {
    let mut m = a.common.load(Verb::Report)?;
    m.seed = Some(resolve_seed(a.common.seed, m.seed));
    if !a.inputs.is_empty() {
        m.reports = a.inputs;
    }
    set(&mut m.outputs.report, a.out);
    m.outputs.report.get_or_insert_with(|| "-".into());
    Ok(m)
}

fn run(cli: Cli) -> CliResult<i32> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("--jobs: {e}")))?;
    }
    let mut sinks = Sinks::default();
    let m = match cli.command {
        Command::Calibrate(a) => resolve_calibrate(a)?,
        Command::Monitor(a) => resolve_monitor(a)?,
        Command::Simulate(a) => resolve_simulate(a)?,
        Command::ProfileGen(a) => resolve_profile_gen(a)?,
        Command::Report(a) => resolve_report(a)?,
        Command::Replay(a) => {
            let m = load_replay_manifest(&a.manifest)?;
            if !a.check {
                return execute(&m, &mut sinks);
            }
            let mut capture = Sinks::capturing();
            execute(&m, &mut capture)?;
            let checked = capture.verify()?;
            let report = serde_json::json!({"replay": "identical", "files": checked});
            println!("{report}");
            return Ok(EXIT_OK);
        }
    };
    execute(&m, &mut sinks)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            std::process::exit(EXIT_OK);
        }
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            std::process::exit(EXIT_FAILURE);
        }
    };
    let code = match run(cli) {
        Ok(code) => code,
        // A closed downstream pipe (e.g. `| head`) is not a failure.
        Err(CliError::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    };
    let _ = std::io::stdout().flush();
    std::process::exit(code);
}
