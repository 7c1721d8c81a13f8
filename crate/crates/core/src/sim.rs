//! Simulation harness: trials, run-length metrics and the two studies.
//!
//! A trial freezes a design, draws `m` historical profiles, bootstraps a
//! limit and then streams in-control profiles up to `τ` followed by
//! out-of-control ones. A false alarm resets the window to its initial
//! historical state; time and `τ` carry on unchanged.
//!
//! Every trial owns a stream derived from `(master seed, cell id, trial)`,
//! so cells can be rerun in any order or in parallel with identical output.

use std::collections::HashMap;
use std::time::Instant;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{
    covariance, random_orthogonal_pair, solve_calibration, var_function, CalibrationTarget,
    Convexity, McVariance,
};
use crate::chart::{bootstrap_control_limit, make_k, Chart, ChartConfig, DEFAULT_L};
use crate::corr::build_bank;
use crate::eigen::default_max_iter;
use crate::error::{Error, Result};
use crate::profile_model::{add_noise, table2_catalog, FixedDesign, ProfileFunction, ResponseVector};
use crate::rng::{derive_seed, stream};

const TAG_DESIGN: u64 = 1;
const TAG_HISTORY: u64 = 2;
const TAG_CHART: u64 = 3;
const TAG_STREAM: u64 = 4;
const TAG_FUNCTIONS: u64 = 5;
const TAG_FORCING: u64 = 6;

/// Everything needed to run one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub in_control: ProfileFunction,
    pub out_of_control: ProfileFunction,
    pub d: usize,
    pub n: usize,
    pub m: usize,
    /// Last in-control time.
    pub tau: u64,
    pub sigma: f64,
    /// Chart settings; the seed is replaced per trial.
    pub chart: ChartConfig,
    /// Out-of-control steps observed before the trial is censored.
    pub max_after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub tau: u64,
    pub false_alarm_times: Vec<i64>,
    /// `None` when no alarm was raised within the censoring horizon.
    pub true_alarm_time: Option<i64>,
    pub seed: u64,
    #[serde(rename = "U")]
    pub u: f64,
    pub control_limit_digest: String,
}

/// A trial's chart after calibration, with the design-point means.
#[derive(Debug, Clone)]
pub struct PreparedTrial {
    pub chart: Chart,
    pub f_mean: Vec<f64>,
    pub h_mean: Vec<f64>,
    pub limit_digest: String,
}

/// Draws the design and historical profiles and bootstraps the limit.
pub fn prepare_trial(spec: &TrialSpec, seed: u64) -> Result<PreparedTrial> {
    let mut rng = stream(seed, &[TAG_DESIGN]);
    let design = FixedDesign::sample_uniform(spec.n, spec.d, &mut rng)?;
    let f_mean = spec.in_control.evaluate(&design)?;
    let h_mean = spec.out_of_control.evaluate(&design)?;
    let mut rng = stream(seed, &[TAG_HISTORY]);
    let m = spec.m as i64;
    let hist = (0..m).map(|k| add_noise(&f_mean, spec.sigma, k + 1 - m, &mut rng)).collect();
    let bank = build_bank(hist)?;
    let config = ChartConfig {
        seed: derive_seed(seed, &[TAG_CHART]),
        ..spec.chart.clone()
    };
    let limit = bootstrap_control_limit(&bank, &config)?;
    Ok(PreparedTrial {
        chart: Chart::from_limit(bank, &limit)?,
        f_mean,
        h_mean,
        limit_digest: limit.digest(),
    })
}

/// Runs one trial under the reset protocol.
pub fn run_trial(spec: &TrialSpec, seed: u64) -> Result<TrialRecord> {
    if !(spec.sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma = {} must be positive", spec.sigma)));
    }
    let PreparedTrial { mut chart, f_mean, h_mean, limit_digest } = prepare_trial(spec, seed)?;
    let mut rng = stream(seed, &[TAG_STREAM]);
    let tau = spec.tau as i64;
    let horizon = tau + spec.max_after as i64;
    let mut false_alarm_times = Vec::new();
    let mut true_alarm_time = None;
    for t in 1..=horizon {
        let mean = if t <= tau { &f_mean } else { &h_mean };
        let y = add_noise(mean, spec.sigma, t, &mut rng);
        if chart.monitor_step(&y)?.alarm {
            if t <= tau {
                false_alarm_times.push(t);
                chart.reset();
            } else {
                true_alarm_time = Some(t);
                break;
            }
        }
    }
    Ok(TrialRecord {
        tau: spec.tau,
        false_alarm_times,
        true_alarm_time,
        seed,
        u: chart.limit(),
        control_limit_digest: limit_digest,
    })
}

/// `n_alarm / (n_trials + n_alarm)`.
pub fn far_estimate(n_alarm: usize, n_trials: usize) -> Result<f64> {
    if n_trials == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    Ok(n_alarm as f64 / (n_trials + n_alarm) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arl1Estimate {
    pub value: f64,
    pub used: usize,
    pub censored: usize,
}

/// Mean detection delay `t_alarm − τ`; censored trials are excluded.
pub fn arl1_estimate(records: &[TrialRecord]) -> Result<Arl1Estimate> {
    let delays: Vec<f64> = records
        .iter()
        .filter_map(|r| r.true_alarm_time.map(|t| (t - r.tau as i64) as f64))
        .collect();
    let censored = records.len() - delays.len();
    if censored > 0 {
        warn!("{censored} trial(s) without a true alarm excluded from ARL1");
    }
    if delays.is_empty() {
        return Err(Error::Undefined("no trial raised a true alarm".into()));
    }
    Ok(Arl1Estimate {
        value: delays.iter().sum::<f64>() / delays.len() as f64,
        used: delays.len(),
        censored,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arl0Summary {
    /// Mean alarm time over runs that alarmed; `None` if none did.
    pub arl0_star: Option<f64>,
    pub finished: usize,
    /// Mean with censored runs imputed at `horizon + 1`.
    pub lower_bound: f64,
}

/// Right-censored ARL₀ from first-alarm times (`None` = censored).
pub fn arl0_censored(first_alarms: &[Option<u64>], horizon: u64) -> Result<Arl0Summary> {
    if horizon == 0 || first_alarms.is_empty() {
        return Err(Error::InvalidParameter("need horizon >= 1 and at least one run".into()));
    }
    let done: Vec<f64> = first_alarms.iter().flatten().map(|&t| t as f64).collect();
    let censored = first_alarms.len() - done.len();
    let total = done.iter().sum::<f64>() + censored as f64 * (horizon + 1) as f64;
    Ok(Arl0Summary {
        arl0_star: (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64),
        finished: done.len(),
        lower_bound: total / first_alarms.len() as f64,
    })
}

/// Streams `horizon` in-control profiles, resetting after every alarm.
/// Returns the alarm times.
pub fn in_control_run<R: Rng + ?Sized>(
    chart: &mut Chart,
    mean: &[f64],
    sigma: f64,
    horizon: u64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let mut alarms = Vec::new();
    for t in 1..=horizon {
        let y = add_noise(mean, sigma, t as i64, rng);
        if chart.monitor_step(&y)?.alarm {
            alarms.push(t);
            chart.reset();
        }
    }
    Ok(alarms)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationCorrelations {
    /// `ρ(f + ε₁, f + ε₂)`
    pub rho_ff: f64,
    /// `ρ(h + ε₁, h + ε₂)`
    pub rho_hh: f64,
    /// `ρ(f + ε₁, h + ε₂)`
    pub rho_fh_noisy: f64,
}

/// Population correlations between noisy profiles, from closed-form
/// moments of polynomial `f` and `h`.
pub fn population_correlations(
    f: &ProfileFunction,
    h: &ProfileFunction,
    sigma_sq: f64,
) -> Result<PopulationCorrelations> {
    let vf = var_function(f)?;
    let vh = var_function(h)?;
    let cfh = covariance(f, h)?;
    let rho_ff = vf / (vf + sigma_sq);
    let rho_hh = vh / (vh + sigma_sq);
    let rho_fh = cfh / (vf * vh).sqrt();
    Ok(PopulationCorrelations {
        rho_ff,
        rho_hh,
        rho_fh_noisy: rho_fh * rho_ff.sqrt() * rho_hh.sqrt(),
    })
}

/// Monte Carlo variance of `fun(x)` for `x ~ Unif([0,1]^d)`, with the
/// standard error of the estimate.
pub fn mc_variance<F, R>(fun: F, d: usize, samples: usize, rng: &mut R) -> Result<McVariance>
where
    F: Fn(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    if samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let mut x = vec![0.0; d];
    let values: Vec<f64> = (0..samples)
        .map(|_| {
            x.iter_mut().for_each(|v| *v = rng.random());
            fun(&x)
        })
        .collect();
    let n = samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in &values {
        let sq = (v - mean) * (v - mean);
        m2 += sq;
        m4 += sq * sq;
    }
    let mean_sq = m2 / n;
    Ok(McVariance {
        value: m2 / (n - 1.0),
        std_error: ((m4 / n - mean_sq * mean_sq).max(0.0) / n).sqrt(),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcingNu {
    pub nu: f64,
    pub var_fg: McVariance,
    /// `ν < 0`: the target exceeds `Var(f − g)`, so `h` extrapolates past `g`.
    pub extrapolated: bool,
}

/// `ν = 1 − sqrt(SNR·σ² / Var(f − g))` from a Monte Carlo `Var(f − g)`.
pub fn nu_for_snr(var_fg: McVariance, target_snr: f64, sigma_sq: f64) -> Result<ForcingNu> {
    if !(target_snr > 0.0) || !(sigma_sq > 0.0) {
        return Err(Error::InvalidParameter("SNR and sigma^2 must be positive".into()));
    }
    if !(var_fg.value > 0.0) {
        return Err(Error::Infeasible("Var(f - g) is zero".into()));
    }
    let nu = 1.0 - (target_snr * sigma_sq / var_fg.value).sqrt();
    if nu < 0.0 {
        warn!("target SNR {target_snr} exceeds Var(f - g) = {}; nu = {nu}", var_fg.value);
    }
    Ok(ForcingNu { nu, var_fg, extrapolated: nu < 0.0 })
}

/// Solves for the mixture weight giving `Var(f − h) = SNR·σ²` with
/// `h = ν f + (1 − ν) g`.
pub fn snr_solve_forcing<R: Rng + ?Sized>(
    f: &ProfileFunction,
    g: &ProfileFunction,
    d: usize,
    target_snr: f64,
    sigma_sq: f64,
    samples: usize,
    rng: &mut R,
) -> Result<ForcingNu> {
    f.check_dim(d)?;
    g.check_dim(d)?;
    let var_fg = mc_variance(|x| f.eval_point(x) - g.eval_point(x), d, samples, rng)?;
    nu_for_snr(var_fg, target_snr, sigma_sq)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSummary {
    /// Seconds per 100 `monitor_step` calls.
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub batches: usize,
}

/// Times `batches` runs of 100 `monitor_step` calls, cycling through
/// `profiles`. Alarms are ignored.
pub fn runtime_probe(chart: &mut Chart, profiles: &[ResponseVector], batches: usize) -> Result<RuntimeSummary> {
    if profiles.is_empty() || batches == 0 {
        return Err(Error::InvalidParameter("need profiles and at least one batch".into()));
    }
    let mut times = Vec::with_capacity(batches);
    let mut next = profiles.iter().cycle();
    for _ in 0..batches {
        let start = Instant::now();
        for _ in 0..100 {
            chart.monitor_step(next.next().expect("cycle"))?;
        }
        times.push(start.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(RuntimeSummary {
        min: times[0],
        median: times[times.len() / 2],
        max: times[times.len() - 1],
        batches,
    })
}

/// One factor combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: String,
    pub study: String,
    pub tau: u64,
    pub n: usize,
    pub m: usize,
    pub w: usize,
    pub d: usize,
    pub snr: f64,
    #[serde(default)]
    pub pair: Option<String>,
    #[serde(default)]
    pub var_f: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub convexity: Option<Convexity>,
}

/// Settings shared by every cell of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub trials: usize,
    pub master_seed: u64,
    pub zeta: f64,
    pub c: f64,
    pub n_stat: usize,
    pub n_pool: usize,
    /// Spacing count for `K`.
    pub l: usize,
    pub max_after: u64,
    /// Monte Carlo samples for forcing-function variances.
    pub mc_samples: usize,
    pub sigma_sq: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            trials: 100,
            master_seed: 20_240_101,
            zeta: 1e-3,
            c: 1e-14,
            n_stat: 1000,
            n_pool: 5000,
            l: DEFAULT_L,
            max_after: 1000,
            mc_samples: 10_000_000,
            sigma_sq: 1.0,
        }
    }
}

impl SimOptions {
    pub fn chart_config(&self, w: usize) -> ChartConfig {
        ChartConfig {
            w,
            k_values: make_k(w, self.l),
            zeta: self.zeta,
            c: self.c,
            n_stat: self.n_stat,
            n_pool: self.n_pool,
            max_iter: default_max_iter(w),
            ..ChartConfig::new(w, 0)
        }
    }
}

/// Study-1 grid: catalog pairs × SNR levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study1Grid {
    pub n: usize,
    pub m: usize,
    pub w: usize,
    pub tau: u64,
    pub snrs: Vec<f64>,
}

impl Default for Study1Grid {
    fn default() -> Self {
        Study1Grid { n: 256, m: 20, w: 10, tau: 30, snrs: vec![3.0, 5.0] }
    }
}

impl Study1Grid {
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for pair in table2_catalog() {
            for &snr in &self.snrs {
                cells.push(Cell {
                    id: format!("study1/{}/snr{snr}/n{}/m{}/w{}/tau{}", pair.name, self.n, self.m, self.w, self.tau),
                    study: "study1".into(),
                    tau: self.tau,
                    n: self.n,
                    m: self.m,
                    w: self.w,
                    d: 3,
                    snr,
                    pair: Some(pair.name.clone()),
                    var_f: None,
                    rho: None,
                    convexity: None,
                });
            }
        }
        cells
    }
}

/// Study-2 factorial grid of calibrated quadratic profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study2Grid {
    pub taus: Vec<u64>,
    pub ns: Vec<usize>,
    pub ms: Vec<usize>,
    pub m_over_w: Vec<usize>,
    pub snrs: Vec<f64>,
    pub var_fs: Vec<f64>,
    pub rhos: Vec<f64>,
    pub convexities: Vec<Convexity>,
    pub d: usize,
}

impl Default for Study2Grid {
    /// The long change point is scaled to 10³; pass 10⁴ for the full grid.
    fn default() -> Self {
        Study2Grid {
            taus: vec![0, 30, 1000],
            ns: vec![128, 256, 512],
            ms: vec![20, 40],
            m_over_w: vec![1, 2],
            snrs: vec![3.0, 5.0],
            var_fs: vec![2.0, 4.0, 6.0],
            rhos: vec![0.75, 0.9],
            convexities: vec![Convexity::Convex, Convexity::Nonconvex],
            d: 25,
        }
    }
}

impl Study2Grid {
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &tau in &self.taus {
            for &n in &self.ns {
                for &m in &self.ms {
                    for &ratio in &self.m_over_w {
                        let w = m / ratio.max(1);
                        for &snr in &self.snrs {
                            for &var_f in &self.var_fs {
                                for &rho in &self.rhos {
                                    for &cx in &self.convexities {
                                        cells.push(Cell {
                                            id: format!(
                                                "study2/tau{tau}/n{n}/m{m}/w{w}/snr{snr}/varf{var_f}/rho{rho}/{cx:?}"
                                            )
                                            .to_lowercase(),
                                            study: "study2".into(),
                                            tau,
                                            n,
                                            m,
                                            w,
                                            d: self.d,
                                            snr,
                                            pair: None,
                                            var_f: Some(var_f),
                                            rho: Some(rho),
                                            convexity: Some(cx),
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub feasible: bool,
    #[serde(default)]
    pub infeasible_reason: Option<String>,
    /// Mixture weight (study 1: shared by all trials; study 2: first trial).
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default)]
    pub nu_extrapolated: bool,
    #[serde(default)]
    pub population: Option<PopulationCorrelations>,
    pub n_false_alarms: usize,
    pub far: Option<f64>,
    pub arl1: Option<f64>,
    pub censored: usize,
    pub seeds: Vec<u64>,
    pub trials: Vec<TrialRecord>,
}

/// FNV-1a, used to key seeds by cell id rather than grid position.
fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

pub fn trial_seed(master: u64, cell_id: &str, trial: usize) -> u64 {
    derive_seed(master, &[id_hash(cell_id), trial as u64])
}

/// Monte Carlo `Var(f − g)` per catalog pair, computed once per run.
#[derive(Debug, Default)]
pub struct ForcingCache {
    values: HashMap<String, McVariance>,
}

impl ForcingCache {
    pub fn var_fg(&mut self, pair: &str, opts: &SimOptions) -> Result<McVariance> {
        if let Some(v) = self.values.get(pair) {
            return Ok(*v);
        }
        let p = table2_catalog()
            .into_iter()
            .find(|p| p.name == pair)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown profile pair {pair}")))?;
        let mut rng = stream(opts.master_seed, &[TAG_FORCING, id_hash(pair), opts.mc_samples as u64]);
        let (f, g) = (&p.in_control, &p.forcing);
        let v = mc_variance(|x| f.eval_point(x) - g.eval_point(x), 3, opts.mc_samples, &mut rng)?;
        self.values.insert(pair.to_string(), v);
        Ok(v)
    }
}

enum CellFunctions {
    Fixed(TrialSpec),
    PerTrial(CalibrationTarget),
}

fn base_spec(cell: &Cell, opts: &SimOptions, f: ProfileFunction, h: ProfileFunction) -> TrialSpec {
    TrialSpec {
        in_control: f,
        out_of_control: h,
        d: cell.d,
        n: cell.n,
        m: cell.m,
        tau: cell.tau,
        sigma: opts.sigma_sq.sqrt(),
        chart: opts.chart_config(cell.w),
        max_after: opts.max_after,
    }
}

fn study2_functions(target: &CalibrationTarget, d: usize, seed: u64) -> Result<(ProfileFunction, ProfileFunction)> {
    let mut rng = stream(seed, &[TAG_FUNCTIONS]);
    let (f0, h0) = random_orthogonal_pair(d, 2, &mut rng)?;
    let pair = solve_calibration(target, &f0, &h0)?;
    Ok((pair.f, pair.h))
}

/// Runs every trial of `cell`. Infeasible calibrations are reported,
/// not raised.
pub fn run_cell(cell: &Cell, opts: &SimOptions, cache: &mut ForcingCache) -> Result<CellResult> {
    let seeds: Vec<u64> = (0..opts.trials).map(|i| trial_seed(opts.master_seed, &cell.id, i)).collect();
    let mut result = CellResult {
        cell: cell.clone(),
        feasible: true,
        infeasible_reason: None,
        nu: None,
        nu_extrapolated: false,
        population: None,
        n_false_alarms: 0,
        far: None,
        arl1: None,
        censored: 0,
        seeds: seeds.clone(),
        trials: Vec::new(),
    };

    let functions = match (&cell.pair, cell.var_f, cell.rho, cell.convexity) {
        (Some(pair), _, _, _) => {
            let p = table2_catalog()
                .into_iter()
                .find(|p| &p.name == pair)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown profile pair {pair}")))?;
            let solved = nu_for_snr(cache.var_fg(pair, opts)?, cell.snr, opts.sigma_sq)?;
            result.nu = Some(solved.nu);
            result.nu_extrapolated = solved.extrapolated;
            let h = ProfileFunction::mixture(solved.nu, p.in_control.clone(), p.forcing.clone())?;
            CellFunctions::Fixed(base_spec(cell, opts, p.in_control, h))
        }
        (None, Some(var_f), Some(rho), Some(cx)) => {
            let target = CalibrationTarget {
                sigma_sq: opts.sigma_sq,
                ..CalibrationTarget::new(var_f, cell.snr, rho, cx)
            };
            let probe = seeds.first().copied().unwrap_or(opts.master_seed);
            match study2_functions(&target, cell.d, probe) {
                Ok((f, h)) => {
                    result.population = Some(population_correlations(&f, &h, opts.sigma_sq)?);
                    let vf = var_function(&f)?;
                    let c = covariance(&f, &h)?;
                    // h = νf + (1 − ν)g with Cov(f, g) = 0.
                    result.nu = Some(c / vf);
                }
                Err(Error::Infeasible(reason)) => {
                    result.feasible = false;
                    result.infeasible_reason = Some(reason);
                    return Ok(result);
                }
                Err(e) => return Err(e),
            }
            CellFunctions::PerTrial(target)
        }
        _ => return Err(Error::InvalidParameter(format!("cell {} lacks its factors", cell.id))),
    };

    let records = seeds
        .par_iter()
        .map(|&seed| match &functions {
            CellFunctions::Fixed(spec) => run_trial(spec, seed),
            CellFunctions::PerTrial(target) => {
                let (f, h) = study2_functions(target, cell.d, seed)?;
                run_trial(&base_spec(cell, opts, f, h), seed)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    result.n_false_alarms = records.iter().map(|r| r.false_alarm_times.len()).sum();
    if !records.is_empty() {
        result.far = Some(far_estimate(result.n_false_alarms, records.len())?);
        if let Ok(a) = arl1_estimate(&records) {
            result.arl1 = Some(a.value);
        }
        result.censored = records.iter().filter(|r| r.true_alarm_time.is_none()).count();
    }
    result.trials = records;
    Ok(result)
}

/// One row of the tidy per-trial table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
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
    pub convexity: Option<Convexity>,
    pub trial: usize,
    pub seed: u64,
    pub n_false_alarms: usize,
    /// `;`-separated.
    pub false_alarm_times: String,
    pub true_alarm_time: Option<i64>,
    pub delay: Option<i64>,
    #[serde(rename = "U")]
    pub u: f64,
    pub control_limit_digest: String,
}

pub fn trial_rows(result: &CellResult) -> Vec<TrialRow> {
    let c = &result.cell;
    result
        .trials
        .iter()
        .enumerate()
        .map(|(i, r)| TrialRow {
            cell_id: c.id.clone(),
            study: c.study.clone(),
            tau: c.tau,
            n: c.n,
            m: c.m,
            w: c.w,
            d: c.d,
            snr: c.snr,
            pair: c.pair.clone(),
            var_f: c.var_f,
            rho: c.rho,
            convexity: c.convexity,
            trial: i,
            seed: r.seed,
            n_false_alarms: r.false_alarm_times.len(),
            false_alarm_times: r.false_alarm_times.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(";"),
            true_alarm_time: r.true_alarm_time,
            delay: r.true_alarm_time.map(|t| t - r.tau as i64),
            u: r.u,
            control_limit_digest: r.control_limit_digest.clone(),
        })
        .collect()
}
