//! Verb execution from a resolved manifest. Nothing here reads flags or
//! the environment, so running the same manifest twice writes the same
//! bytes.

use std::collections::HashMap;
use std::io::Write;

use eigencc::chart::{bootstrap_control_limit, Chart, ChartConfig, ControlLimit, K1Outcome};
use eigencc::corr::build_bank;
use eigencc::profile_model::{add_noise, FixedDesign, ResponseVector};
use eigencc::rng::stream;
use eigencc::sim::{
    arl1_estimate, far_estimate, run_cell, trial_rows, Cell, ForcingCache, SimOptions, Study1Grid, Study2Grid,
    TrialRecord,
};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult, EXIT_ALARM, EXIT_OK};
use crate::io::{echo_path, io_err, parse_json, profiles_digest, read_historical, InputFormat, ProfileReader, Sinks};
use crate::manifest::{merge_overrides, DesignSource, RunManifest, StreamFormat, Study, Verb};

const TAG_DESIGN: u64 = 1;
const TAG_HISTORY: u64 = 2;
const TAG_STREAM: u64 = 4;

/// Manifest echo written next to file outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Echo {
    pub manifest_digest: String,
    pub seed: u64,
    pub manifest: RunManifest,
}

/// Output of `calibrate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimitFile {
    pub manifest_digest: String,
    pub seed: u64,
    /// Digest of the historical profiles the limit was bootstrapped from.
    pub historical_digest: String,
    pub m: usize,
    pub n: usize,
    pub limit: ControlLimit,
    pub manifest: RunManifest,
}

/// Reads a `calibrate` output, or a bare control limit.
pub fn read_limit(path: &str) -> CliResult<(ControlLimit, Option<LimitFile>)> {
    let value: Value = parse_json(path)?;
    if value.get("limit").is_some() {
        let file: LimitFile = serde_json::from_value(value).map_err(|e| CliError::schema(path, e))?;
        Ok((file.limit.clone(), Some(file)))
    } else {
        let limit = serde_json::from_value(value).map_err(|e| CliError::schema(path, e))?;
        Ok((limit, None))
    }
}

fn pretty(value: &impl Serialize) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("output serializes");
    bytes.push(b'\n');
    bytes
}

fn write_echo(m: &RunManifest, output: &str, sinks: &mut Sinks) -> CliResult<()> {
    if output == "-" {
        return Ok(());
    }
    let echo = Echo { manifest_digest: m.digest(), seed: m.seed(), manifest: m.clone() };
    sinks.write_all(&echo_path(output), &pretty(&echo))
}

pub fn execute(m: &RunManifest, sinks: &mut Sinks) -> CliResult<i32> {
    match m.verb {
        Some(Verb::Calibrate) => calibrate(m, sinks),
        Some(Verb::Monitor) => monitor(m, sinks),
        Some(Verb::Simulate) => simulate(m, sinks),
        Some(Verb::ProfileGen) => profile_gen(m, sinks),
        Some(Verb::Report) => report(m, sinks),
        None => Err(CliError::Usage("manifest names no verb".into())),
    }
}

fn input_format(m: &RunManifest) -> InputFormat {
    m.input_format.unwrap_or_default()
}

fn calibrate(m: &RunManifest, sinks: &mut Sinks) -> CliResult<i32> {
    let hist = m.require(&m.historical, "historical data path")?;
    let out = m.outputs.limit.as_deref().unwrap_or("-");
    let rows = read_historical(hist, input_format(m))?;
    let historical_digest = profiles_digest(&rows);
    let bank = build_bank(rows)?;
    let config = m.chart.resolve(m.seed());
    let limit = bootstrap_control_limit(&bank, &config)?;
    info!("U = {} (mu_S = {}, sd_S = {})", limit.u, limit.mu_s, limit.sd_s);
    let file = LimitFile {
        manifest_digest: m.digest(),
        seed: m.seed(),
        historical_digest,
        m: bank.m(),
        n: bank.n(),
        limit,
        manifest: m.clone(),
    };
    sinks.write_all(out, &pretty(&file))?;
    write_echo(m, out, sinks)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct StepRecord<'a> {
    t: i64,
    statistic: f64,
    argmax_k1: usize,
    alarm: bool,
    per_k1: &'a [K1Outcome],
    manifest_digest: &'a str,
    seed: u64,
}

fn monitor(m: &RunManifest, sinks: &mut Sinks) -> CliResult<i32> {
    let limit_path = m.require(&m.limit, "control limit path")?;
    let hist = m.require(&m.historical, "historical data path")?;
    let src = m.stream.as_deref().unwrap_or("-");
    let out = m.outputs.monitor.as_deref().unwrap_or("-");
    let (limit, file) = read_limit(limit_path)?;
    // `input_format` names the stream's format; the historical file is sniffed.
    let rows = read_historical(hist, InputFormat::Auto)?;
    if let Some(f) = &file {
        if f.historical_digest != profiles_digest(&rows) {
            return Err(CliError::schema(
                hist.as_str(),
                format!("historical data differ from those {limit_path} was calibrated on"),
            ));
        }
    }
    let bank = build_bank(rows)?;
    let n = bank.n();
    let config = ChartConfig { seed: m.seed(), ..limit.config.clone() };
    let mut chart = Chart::new(bank, config, limit.u)?;
    write_echo(m, out, sinks)?;

    let digest = m.digest();
    let seed = m.seed();
    let mut w = sinks.open(out)?;
    for y in ProfileReader::new(src, input_format(m), 1, Some(n))? {
        let y = y?;
        let o = chart.monitor_step(&y)?;
        let rec = StepRecord {
            t: o.t,
            statistic: o.statistic,
            argmax_k1: o.argmax_k1,
            alarm: o.alarm,
            per_k1: &o.per_k1,
            manifest_digest: &digest,
            seed,
        };
        let mut line = serde_json::to_vec(&rec).expect("record serializes");
        line.push(b'\n');
        w.write_all(&line).and_then(|_| w.flush()).map_err(io_err(out))?;
        if o.alarm {
            info!("alarm at t = {}", o.t);
            return Ok(EXIT_ALARM);
        }
    }
    Ok(EXIT_OK)
}

/// Resolved study grid and options.
pub fn simulation_plan(m: &RunManifest) -> CliResult<(SimOptions, Vec<Cell>)> {
    let spec = m.require(&m.simulate, "simulate section")?;
    let mut opts: SimOptions = merge_overrides(&SimOptions::default(), &spec.options, "option")?;
    opts.master_seed = m.seed();
    let mut cells = match spec.study {
        Study::Study1 => merge_overrides::<Study1Grid>(&Study1Grid::default(), &spec.grid, "grid")?.cells(),
        Study::Study2 => merge_overrides::<Study2Grid>(&Study2Grid::default(), &spec.grid, "grid")?.cells(),
        Study::Custom => {
            if !spec.grid.is_empty() {
                return Err(CliError::Usage("a custom study takes cells, not grid overrides".into()));
            }
            spec.cells.clone().ok_or_else(|| CliError::Usage("a custom study needs cells".into()))?
        }
    };
    if let Some(f) = &spec.filter {
        cells.retain(|c| c.id.contains(f.as_str()));
    }
    Ok((opts, cells))
}

/// One row of the per-trial CSV.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrialCsvRow {
    pub cell_id: String,
    pub study: String,
    pub tau: u64,
    pub n: usize,
    pub m: usize,
    pub w: usize,
    pub d: usize,
    pub snr: f64,
    pub pair: Option<String>,
    pub var_f: Option<f64>,
    pub rho: Option<f64>,
    pub convexity: Option<String>,
    pub trial: usize,
    pub seed: u64,
    pub n_false_alarms: usize,
    pub false_alarm_times: String,
    pub true_alarm_time: Option<i64>,
    pub delay: Option<i64>,
    #[serde(rename = "U")]
    pub u: f64,
    pub control_limit_digest: String,
    pub manifest_digest: String,
    pub master_seed: u64,
}

fn convexity_name(c: Option<eigencc::calibration::Convexity>) -> Option<String> {
    c.map(|c| serde_json::to_value(c).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default())
}

fn simulate(m: &RunManifest, sinks: &mut Sinks) -> CliResult<i32> {
    let (opts, cells) = simulation_plan(m)?;
    let trials_out = m.require(&m.outputs.trials, "trials output path")?;
    let cells_out = m.require(&m.outputs.cells, "cells output path")?;
    let digest = m.digest();
    let mut cache = ForcingCache::default();
    let mut csv = csv::Writer::from_writer(sinks.open(trials_out)?);
    let mut summaries = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        info!("cell {}/{}: {}", i + 1, cells.len(), cell.id);
        let result = run_cell(cell, &opts, &mut cache)?;
        for r in trial_rows(&result) {
            csv.serialize(TrialCsvRow {
                cell_id: r.cell_id,
                study: r.study,
                tau: r.tau,
                n: r.n,
                m: r.m,
                w: r.w,
                d: r.d,
                snr: r.snr,
                pair: r.pair,
                var_f: r.var_f,
                rho: r.rho,
                convexity: convexity_name(r.convexity),
                trial: r.trial,
                seed: r.seed,
                n_false_alarms: r.n_false_alarms,
                false_alarm_times: r.false_alarm_times,
                true_alarm_time: r.true_alarm_time,
                delay: r.delay,
                u: r.u,
                control_limit_digest: r.control_limit_digest,
                manifest_digest: digest.clone(),
                master_seed: m.seed(),
            })
            .map_err(|e| CliError::schema(trials_out.as_str(), e))?;
        }
        let mut summary = serde_json::to_value(&result).expect("cell result serializes");
        summary.as_object_mut().expect("object").remove("trials");
        summaries.push(summary);
    }
    csv.flush().map_err(io_err(trials_out))?;
    let doc = serde_json::json!({
        "manifest_digest": digest,
        "seed": m.seed(),
        "manifest": m,
        "cells": summaries,
    });
    sinks.write_all(cells_out, &pretty(&doc))?;
    Ok(EXIT_OK)
}

fn read_design(src: &DesignSource) -> CliResult<FixedDesign> {
    let rows = match src {
        DesignSource::Inline { rows } => rows.clone(),
        DesignSource::File { path } => ProfileReader::new(path, InputFormat::Csv, 1, None)?
            .map(|r| r.map(|r| r.y))
            .collect::<CliResult<_>>()?,
    };
    Ok(FixedDesign::new(&rows)?)
}

#[derive(Serialize)]
struct ProfileRecord<'a> {
    t: i64,
    y: &'a [f64],
    manifest_digest: &'a str,
    seed: u64,
}

fn write_profiles(
    sinks: &mut Sinks,
    path: &str,
    format: StreamFormat,
    rows: impl Iterator<Item = ResponseVector>,
    n: usize,
    digest: &str,
    seed: u64,
) -> CliResult<()> {
    let mut w = sinks.open(path)?;
    match format {
        StreamFormat::Ndjson => {
            for r in rows {
                let rec = ProfileRecord { t: r.t, y: &r.y, manifest_digest: digest, seed };
                let mut line = serde_json::to_vec(&rec).expect("record serializes");
                line.push(b'\n');
                w.write_all(&line).map_err(io_err(path))?;
            }
        }
        StreamFormat::Csv => {
            let mut csv = csv::Writer::from_writer(&mut w);
            csv.write_record((1..=n).map(|i| format!("y{i}"))).map_err(|e| CliError::schema(path, e))?;
            for r in rows {
                csv.write_record(r.y.iter().map(|v| v.to_string())).map_err(|e| CliError::schema(path, e))?;
            }
            csv.flush().map_err(io_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn profile_gen(m: &RunManifest, sinks: &mut Sinks) -> CliResult<i32> {
    let spec = m.require(&m.profile, "profile section")?;
    let seed = m.seed();
    let digest = m.digest();
    let design = match &m.design {
        Some(src) => read_design(src)?,
        None => {
            let n = spec.n.ok_or_else(|| CliError::Usage("profile needs n or a design".into()))?;
            let d = spec.d.or(spec.in_control.dim()).unwrap_or_else(|| spec.in_control.min_dim());
            FixedDesign::sample_uniform(n, d, &mut stream(seed, &[TAG_DESIGN]))?
        }
    };
    if !(spec.sigma > 0.0 && spec.sigma.is_finite()) {
        return Err(CliError::Usage(format!("sigma = {} must be positive", spec.sigma)));
    }
    let f_mean = spec.in_control.evaluate(&design)?;
    let h_mean = match &spec.out_of_control {
        Some(h) => h.evaluate(&design)?,
        None => f_mean.clone(),
    };
    let n = design.n();

    if let Some(path) = &m.outputs.design {
        let mut csv = csv::Writer::from_writer(sinks.open(path)?);
        csv.write_record((1..=design.d()).map(|i| format!("x{i}"))).map_err(|e| CliError::schema(path.as_str(), e))?;
        for row in design.rows() {
            csv.write_record(row.iter().map(|v| v.to_string())).map_err(|e| CliError::schema(path.as_str(), e))?;
        }
        csv.flush().map_err(io_err(path))?;
    }
    if let Some(path) = &m.outputs.historical {
        let mut rng = stream(seed, &[TAG_HISTORY]);
        let mm = spec.m as i64;
        let rows = (0..mm).map(|k| add_noise(&f_mean, spec.sigma, k + 1 - mm, &mut rng));
        write_profiles(sinks, path, spec.format, rows, n, &digest, seed)?;
    }
    let out = m.outputs.stream.as_deref().unwrap_or("-");
    let mut rng = stream(seed, &[TAG_STREAM]);
    let rows = (1..=spec.steps as i64).map(|t| {
        let shifted = spec.shift_at.is_some_and(|s| t >= s);
        add_noise(if shifted { &h_mean } else { &f_mean }, spec.sigma, t, &mut rng)
    });
    write_profiles(sinks, out, spec.format, rows, n, &digest, seed)?;
    write_echo(m, out, sinks)?;
    Ok(EXIT_OK)
}

#[derive(Debug, Deserialize)]
struct ReportInput {
    cell_id: String,
    study: String,
    tau: u64,
    n: usize,
    m: usize,
    w: usize,
    d: usize,
    snr: f64,
    pair: Option<String>,
    var_f: Option<f64>,
    rho: Option<f64>,
    convexity: Option<String>,
    seed: u64,
    false_alarm_times: String,
    true_alarm_time: Option<i64>,
    #[serde(rename = "U")]
    u: f64,
    control_limit_digest: String,
}

/// One row of the aggregated report.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub cell_id: String,
    pub study: String,
    pub tau: u64,
    pub n: usize,
    pub m: usize,
    pub w: usize,
    pub d: usize,
    pub snr: f64,
    pub pair: Option<String>,
    pub var_f: Option<f64>,
    pub rho: Option<f64>,
    pub convexity: Option<String>,
    pub trials: usize,
    pub n_false_alarms: usize,
    pub far: f64,
    pub arl1: Option<f64>,
    pub censored: usize,
    pub max_delay: Option<i64>,
    pub manifest_digest: String,
    pub master_seed: u64,
}

fn report(m: &RunManifest, sinks: &mut Sinks) -> CliResult<i32> {
    if m.reports.is_empty() {
        return Err(CliError::Usage("report needs at least one per-trial CSV".into()));
    }
    let out = m.outputs.report.as_deref().unwrap_or("-");
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (ReportInput, Vec<TrialRecord>)> = HashMap::new();
    for path in &m.reports {
        let mut rdr = csv::Reader::from_reader(crate::io::open_source(path)?);
        for (i, row) in rdr.deserialize::<ReportInput>().enumerate() {
            let row = row.map_err(|e| CliError::Row { row: i + 2, message: format!("{path}: {e}") })?;
            let false_alarm_times = row
                .false_alarm_times
                .split(';')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<Result<Vec<i64>, _>>()
                .map_err(|e| CliError::Row { row: i + 2, message: format!("{path}: false_alarm_times: {e}") })?;
            let record = TrialRecord {
                tau: row.tau,
                false_alarm_times,
                true_alarm_time: row.true_alarm_time,
                seed: row.seed,
                u: row.u,
                control_limit_digest: row.control_limit_digest.clone(),
            };
            match groups.get_mut(&row.cell_id) {
                Some((_, records)) => records.push(record),
                None => {
                    order.push(row.cell_id.clone());
                    groups.insert(row.cell_id.clone(), (row, vec![record]));
                }
            }
        }
    }
    let digest = m.digest();
    let mut csv = csv::Writer::from_writer(sinks.open(out)?);
    for id in order {
        let (first, records) = groups.remove(&id).expect("grouped");
        let n_false_alarms = records.iter().map(|r| r.false_alarm_times.len()).sum();
        csv.serialize(ReportRow {
            cell_id: first.cell_id,
            study: first.study,
            tau: first.tau,
            n: first.n,
            m: first.m,
            w: first.w,
            d: first.d,
            snr: first.snr,
            pair: first.pair,
            var_f: first.var_f,
            rho: first.rho,
            convexity: first.convexity,
            trials: records.len(),
            n_false_alarms,
            far: far_estimate(n_false_alarms, records.len())?,
            arl1: arl1_estimate(&records).ok().map(|a| a.value),
            censored: records.iter().filter(|r| r.true_alarm_time.is_none()).count(),
            max_delay: records.iter().filter_map(|r| r.true_alarm_time.map(|t| t - r.tau as i64)).max(),
            manifest_digest: digest.clone(),
            master_seed: m.seed(),
        })
        .map_err(|e| CliError::schema(out, e))?;
    }
    csv.flush().map_err(io_err(out))?;
    Ok(EXIT_OK)
}

/// Loads a manifest from an echo, a `calibrate` output, a `simulate` cell
/// summary, or a bare manifest.
pub fn load_replay_manifest(path: &str) -> CliResult<RunManifest> {
    let value: Value = parse_json(path)?;
    let inner = match value.get("manifest") {
        Some(inner) => inner.clone(),
        None => value,
    };
    let manifest: RunManifest = serde_json::from_value(inner).map_err(|e| CliError::schema(path, e))?;
    if manifest.verb.is_none() {
        return Err(CliError::schema(path, "not a resolved manifest: no verb"));
    }
    Ok(manifest)
}
