//! The online chart and its bootstrap control limit.
//!
//! At every step the newest profile enters the window, and for each `k₁` in
//! `K` the `k₁` oldest slots are replaced by randomly chosen historical
//! profiles. The statistic is the largest distance between the leading
//! eigenvector of a substituted matrix and `1/√w · 1`.
//!
//! Randomness is split by purpose: bootstrap pool, bootstrap replicate `l`,
//! and monitoring step `s` / `k₁` each get their own stream, so replays and
//! partial reruns are bit-identical.

use log::warn;
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corr::{
    correlation_from_units, init_window, sample_replacement_indices, substitute, unit_centered,
    CorrelationWindow, HistoricalBank,
};
use crate::eigen::{default_max_iter, perturbation_statistic, power_iteration_detector, ExitReason};
use crate::error::{Error, Result};
use crate::normal::upper_quantile;
use crate::profile_model::ResponseVector;
use crate::rng::stream;

const TAG_POOL: u64 = 0x504f_4f4c;
const TAG_REPLICATE: u64 = 0x5245_504c;
const TAG_MONITOR: u64 = 0x4d4f_4e49;

pub const DEFAULT_L: usize = 5;

/// Evenly spaced `k₁` values: `{1, ⌊w/L⌋, …, (L−2)⌊w/L⌋, w−1}` restricted to
/// `[1, w−1]`.
pub fn make_k(w: usize, l: usize) -> Vec<usize> {
    if w < 2 {
        return Vec::new();
    }
    let step = w / l.max(1);
    let mut k: Vec<usize> = [1, w - 1]
        .into_iter()
        .chain((1..l.saturating_sub(1)).map(|j| j * step))
        .filter(|&k| (1..w).contains(&k))
        .collect();
    k.sort_unstable();
    k.dedup();
    k
}

/// Where the bootstrap takes the `k₁` substituted profiles from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapSubstitution {
    /// Extra bootstrap profiles, disjoint from the replicate's window.
    #[default]
    Pool,
    /// Historical profiles from the bank.
    Bank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartConfig {
    pub w: usize,
    #[serde(rename = "K")]
    pub k_values: Vec<usize>,
    pub zeta: f64,
    pub c: f64,
    /// Bootstrap statistics `N`.
    pub n_stat: usize,
    /// Bootstrap profile pool size `N₀`.
    pub n_pool: usize,
    pub max_iter: usize,
    pub seed: u64,
    #[serde(default)]
    pub substitution: BootstrapSubstitution,
    /// Added to `μ̂_S` when every bootstrap statistic is identical.
    #[serde(default = "default_eps_floor")]
    pub eps_floor: f64,
}

fn default_eps_floor() -> f64 {
    1e-9
}

impl ChartConfig {
    pub fn new(w: usize, seed: u64) -> Self {
        ChartConfig {
            w,
            k_values: make_k(w, DEFAULT_L),
            zeta: 1e-3,
            c: 1e-14,
            n_stat: 1000,
            n_pool: 5000,
            max_iter: default_max_iter(w),
            seed,
            substitution: BootstrapSubstitution::Pool,
            eps_floor: default_eps_floor(),
        }
    }

    pub fn with_l(mut self, l: usize) -> Self {
        self.k_values = make_k(self.w, l);
        self
    }

    pub fn k_max(&self) -> usize {
        self.k_values.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.w < 2 {
            return bad(format!("window size {} < 2", self.w));
        }
        if self.k_values.is_empty() {
            return bad("K is empty".into());
        }
        if self.k_values.windows(2).any(|p| p[0] >= p[1]) {
            return bad("K must be strictly increasing".into());
        }
        if self.k_values.iter().any(|&k| k == 0 || k >= self.w) {
            return bad(format!("K must lie in [1, {}]", self.w - 1));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return bad(format!("zeta = {} outside (0, 1)", self.zeta));
        }
        if !(self.c > 0.0 && self.c < 1.0) {
            return bad(format!("c = {} outside (0, 1)", self.c));
        }
        if self.n_stat < 2 {
            return bad(format!("N = {} < 2", self.n_stat));
        }
        if self.n_pool < self.w + self.k_max() {
            return bad(format!(
                "N0 = {} smaller than w + max K = {}",
                self.n_pool,
                self.w + self.k_max()
            ));
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        if !(self.eps_floor > 0.0) {
            return bad("eps_floor must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// `μ + σ·z(1−c)`.
pub fn normal_limit(mu: f64, sd: f64, c: f64) -> Result<f64> {
    let z = upper_quantile(c).ok_or_else(|| Error::InvalidParameter(format!("c = {c} outside (0, 1)")))?;
    Ok(mu + sd * z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLimit {
    #[serde(rename = "U")]
    pub u: f64,
    pub mu_s: f64,
    pub sd_s: f64,
    pub c: f64,
    pub seed: u64,
    pub config_digest: String,
    /// True when all bootstrap statistics coincided and `U = μ̂_S + ε`.
    #[serde(default)]
    pub floored: bool,
    pub config: ChartConfig,
}

impl ControlLimit {
    /// SHA-256 of the JSON encoding, hex encoded.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("limit serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

fn bootstrap_checks(bank: &HistoricalBank, config: &ChartConfig) -> Result<f64> {
    config.validate()?;
    if config.w > bank.m() {
        return Err(Error::InvalidParameter(format!(
            "window size {} exceeds the {} historical profiles",
            config.w,
            bank.m()
        )));
    }
    let s2 = bank.sigma_hat_sq();
    // Rounding in f̂ leaves ~1e-30 behind for identical profiles.
    let scale = bank.f_hat().iter().map(|f| f * f).sum::<f64>() / bank.n() as f64;
    if !(s2 > 1e-24 * scale) || !s2.is_finite() {
        return Err(Error::DegenerateNoise);
    }
    Ok(s2.sqrt())
}

/// The `N` bootstrap null statistics.
pub fn bootstrap_statistics(bank: &HistoricalBank, config: &ChartConfig) -> Result<Vec<f64>> {
    let sigma = bootstrap_checks(bank, config)?;
    let w = config.w;
    let mut rng = stream(config.seed, &[TAG_POOL]);
    let pool = (0..config.n_pool)
        .map(|_| {
            let y: Vec<f64> = bank
                .f_hat()
                .iter()
                .map(|f| f + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
                .collect();
            unit_centered(&y)
        })
        .collect::<Result<Vec<_>>>()?;
    let v_ref = vec![1.0 / (w as f64).sqrt(); w];
    let extra = match config.substitution {
        BootstrapSubstitution::Pool => config.k_max(),
        BootstrapSubstitution::Bank => 0,
    };

    let mut stats = Vec::with_capacity(config.n_stat);
    for l in 0..config.n_stat {
        let mut rng = stream(config.seed, &[TAG_REPLICATE, l as u64]);
        let picked = index::sample(&mut rng, config.n_pool, w + extra).into_vec();
        let mut best = 0.0_f64;
        for &k1 in &config.k_values {
            let mut units: Vec<&[f64]> = Vec::with_capacity(w);
            match config.substitution {
                BootstrapSubstitution::Pool => {
                    units.extend(picked[w..w + k1].iter().map(|&j| pool[j].as_slice()));
                }
                BootstrapSubstitution::Bank => {
                    let idx = index::sample(&mut rng, bank.m(), k1).into_vec();
                    units.extend(idx.iter().map(|&j| bank.unit(j)));
                }
            }
            units.extend(picked[k1..w].iter().map(|&j| pool[j].as_slice()));
            let r = correlation_from_units(&units);
            let e = power_iteration_detector(&r, &v_ref, config.zeta, config.max_iter, &mut rng)?;
            best = best.max(perturbation_statistic(&e.q));
        }
        stats.push(best);
    }
    Ok(stats)
}

/// Fits a normal to the bootstrap null statistics and places `U` at its
/// `1 − c` quantile.
pub fn bootstrap_control_limit(bank: &HistoricalBank, config: &ChartConfig) -> Result<ControlLimit> {
    let stats = bootstrap_statistics(bank, config)?;
    limit_from_statistics(&stats, config)
}

pub fn limit_from_statistics(stats: &[f64], config: &ChartConfig) -> Result<ControlLimit> {
    if stats.len() < 2 {
        return Err(Error::InsufficientProfiles { needed: 2, found: stats.len() });
    }
    let n = stats.len() as f64;
    let mu = stats.iter().sum::<f64>() / n;
    let sd = (stats.iter().map(|s| (s - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let (u, floored) = if sd > 0.0 {
        (normal_limit(mu, sd, config.c)?, false)
    } else {
        warn!("all bootstrap statistics equal {mu}; control limit floored");
        (mu + config.eps_floor, true)
    };
    Ok(ControlLimit {
        u,
        mu_s: mu,
        sd_s: sd,
        c: config.c,
        seed: config.seed,
        config_digest: config.digest(),
        floored,
        config: config.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct K1Outcome {
    pub k1: usize,
    pub statistic: f64,
    pub exit_reason: ExitReason,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringOutcome {
    pub t: i64,
    pub statistic: f64,
    pub argmax_k1: usize,
    pub alarm: bool,
    pub per_k1: Vec<K1Outcome>,
}

/// Monitoring state: bank, window, configuration and limit.
#[derive(Debug, Clone)]
pub struct Chart {
    bank: HistoricalBank,
    config: ChartConfig,
    u: f64,
    initial: CorrelationWindow,
    window: CorrelationWindow,
    v_ref: Vec<f64>,
    steps: u64,
}

impl Chart {
    pub fn new(bank: HistoricalBank, config: ChartConfig, u: f64) -> Result<Self> {
        config.validate()?;
        if !u.is_finite() {
            return Err(Error::InvalidParameter(format!("control limit {u} is not finite")));
        }
        let initial = init_window(&bank, config.w)?;
        let w = config.w;
        Ok(Chart {
            bank,
            window: initial.clone(),
            initial,
            v_ref: vec![1.0 / (w as f64).sqrt(); w],
            config,
            u,
            steps: 0,
        })
    }

    pub fn from_limit(bank: HistoricalBank, limit: &ControlLimit) -> Result<Self> {
        Chart::new(bank, limit.config.clone(), limit.u)
    }

    pub fn config(&self) -> &ChartConfig {
        &self.config
    }

    pub fn bank(&self) -> &HistoricalBank {
        &self.bank
    }

    pub fn limit(&self) -> f64 {
        self.u
    }

    pub fn window(&self) -> &CorrelationWindow {
        &self.window
    }

    pub fn initial_window(&self) -> &CorrelationWindow {
        &self.initial
    }

    /// Steps taken since construction; resets do not rewind it.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Restores the window to its freshly initialized state.
    pub fn reset(&mut self) {
        self.window = self.initial.clone();
    }

    /// Statistic of the current window without pushing anything.
    fn evaluate(&self, t: i64) -> Result<MonitoringOutcome> {
        let w = self.config.w;
        let mut per_k1 = Vec::with_capacity(self.config.k_values.len());
        for &k1 in &self.config.k_values {
            let mut rng = stream(self.config.seed, &[TAG_MONITOR, self.steps, k1 as u64]);
            let idx = sample_replacement_indices(self.window.time(), w, k1, self.bank.m(), &mut rng)?;
            let sub = substitute(&self.window, &self.bank, k1, &idx)?;
            let e = power_iteration_detector(&sub.matrix, &self.v_ref, self.config.zeta, self.config.max_iter, &mut rng)?;
            per_k1.push(K1Outcome {
                k1,
                statistic: perturbation_statistic(&e.q),
                exit_reason: e.exit_reason,
                iterations: e.iterations,
            });
        }
        let best = per_k1
            .iter()
            .fold(&per_k1[0], |b, o| if o.statistic > b.statistic { o } else { b });
        Ok(MonitoringOutcome {
            t,
            statistic: best.statistic,
            argmax_k1: best.k1,
            alarm: best.statistic > self.u,
            per_k1,
        })
    }

    /// Observes `y`, updates the window and evaluates the statistic.
    pub fn monitor_step(&mut self, y: &ResponseVector) -> Result<MonitoringOutcome> {
        self.window.push(y)?;
        self.steps += 1;
        self.evaluate(y.t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartRun {
    pub alarm_time: Option<i64>,
    pub log: Vec<MonitoringOutcome>,
}

/// Consumes `profiles` until the first alarm or the end of the stream.
pub fn run_chart<I>(chart: &mut Chart, profiles: I) -> Result<ChartRun>
where
    I: IntoIterator<Item = ResponseVector>,
{
    let mut log = Vec::new();
    for y in profiles {
        let out = chart.monitor_step(&y)?;
        let alarm = out.alarm;
        log.push(out);
        if alarm {
            return Ok(ChartRun { alarm_time: Some(y.t), log });
        }
    }
    Ok(ChartRun { alarm_time: None, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corr::build_bank;
    use crate::profile_model::{add_noise, generate_profile, table2_catalog, FixedDesign};
    use crate::rng::stream;

    fn small_config(w: usize, seed: u64) -> ChartConfig {
        ChartConfig { n_stat: 200, n_pool: 600, ..ChartConfig::new(w, seed) }
    }

    fn quadratic_setup(m: usize, n: usize, seed: u64) -> (HistoricalBank, Vec<f64>) {
        let pair = &table2_catalog()[1];
        let mut rng = stream(seed, &[0]);
        let design = FixedDesign::sample_uniform(n, 3, &mut rng).unwrap();
        let mean = pair.in_control.evaluate(&design).unwrap();
        let hist = (0..m)
            .map(|k| {
                let t = k as i64 + 1 - m as i64;
                generate_profile(&pair.in_control, &design, 1.0, t, &mut rng).unwrap()
            })
            .collect();
        (build_bank(hist).unwrap(), mean)
    }

    #[test]
    fn k_sets() {
        assert_eq!(make_k(10, 5), vec![1, 2, 4, 6, 9]);
        assert_eq!(make_k(2, 5), vec![1]);
        assert_eq!(make_k(2, 1), vec![1]);
        assert_eq!(make_k(10, 1), vec![1, 9]);
        assert_eq!(make_k(10, 2), vec![1, 9]);
        assert_eq!(make_k(20, 5), vec![1, 4, 8, 12, 19]);
        assert_eq!(make_k(3, 50), vec![1, 2]);
    }

    #[test]
    fn config_validation() {
        let c = ChartConfig::new(10, 1);
        c.validate().unwrap();
        assert_eq!(c.max_iter, 200);
        assert!(ChartConfig { k_values: vec![], ..c.clone() }.validate().is_err());
        assert!(ChartConfig { k_values: vec![10], ..c.clone() }.validate().is_err());
        assert!(ChartConfig { k_values: vec![2, 1], ..c.clone() }.validate().is_err());
        assert!(ChartConfig { n_pool: 18, ..c.clone() }.validate().is_err());
        assert!(ChartConfig { zeta: 0.0, ..c.clone() }.validate().is_err());
        assert_ne!(c.digest(), ChartConfig::new(10, 2).digest());
        assert_eq!(c.digest().len(), 64);
        let back: ChartConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn limit_formula() {
        assert_eq!(normal_limit(0.3, 0.1, 0.5).unwrap(), 0.3);
        let z = 7.650_628_092_935_268_8;
        assert!((normal_limit(0.3, 0.1, 1e-14).unwrap() - (0.3 + 0.1 * z)).abs() < 1e-12);
        let cs = [0.4, 0.1, 1e-3, 1e-8, 1e-14];
        let us: Vec<f64> = cs.iter().map(|&c| normal_limit(0.3, 0.1, c).unwrap()).collect();
        assert!(us.windows(2).all(|p| p[0] < p[1]));
        let cfg = ChartConfig { c: 0.5, ..ChartConfig::new(4, 0) };
        let lim = limit_from_statistics(&[0.1, 0.2, 0.3], &cfg).unwrap();
        assert_eq!(lim.u, lim.mu_s);
        let flat = limit_from_statistics(&[0.2, 0.2], &cfg).unwrap();
        assert!(flat.floored && flat.u > flat.mu_s);
    }

    #[test]
    fn bootstrap_is_deterministic_and_above_mean() {
        let (bank, _) = quadratic_setup(20, 64, 3);
        let cfg = small_config(10, 5);
        let a = bootstrap_control_limit(&bank, &cfg).unwrap();
        let b = bootstrap_control_limit(&bank, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.u > a.mu_s && a.sd_s > 0.0);
        let bank_mode = ChartConfig { substitution: BootstrapSubstitution::Bank, ..cfg.clone() };
        let c = bootstrap_control_limit(&bank, &bank_mode).unwrap();
        assert!(c.u > c.mu_s);
        let other = bootstrap_control_limit(&bank, &small_config(10, 6)).unwrap();
        assert_ne!(a.u, other.u);
    }

    #[test]
    fn bootstrap_rejects_noiseless_bank() {
        let (bank, mean) = quadratic_setup(20, 64, 4);
        let twins = (0..20).map(|k| ResponseVector::new(k - 19, mean.clone())).collect();
        let flat = build_bank(twins).unwrap();
        assert_eq!(bootstrap_control_limit(&flat, &small_config(10, 1)), Err(Error::DegenerateNoise));
        assert!(bootstrap_control_limit(&bank, &small_config(21, 1)).is_err());
    }

    #[test]
    fn noiseless_window_has_zero_statistic() {
        let (_, mean) = quadratic_setup(12, 64, 8);
        let mut rng = stream(9, &[]);
        // Vanishing noise keeps the profiles non-constant yet R ≈ J.
        let hist = (0..12).map(|k| add_noise(&mean, 1e-9, k - 11, &mut rng)).collect();
        let bank = build_bank(hist).unwrap();
        let mut chart = Chart::new(bank, ChartConfig::new(6, 1), 0.05).unwrap();
        for t in 1..=8 {
            let out = chart.monitor_step(&add_noise(&mean, 1e-9, t, &mut rng)).unwrap();
            assert!(out.statistic < 1e-6, "{}", out.statistic);
            assert!(!out.alarm);
        }
    }

    #[test]
    fn outcome_invariants_and_replay() {
        let (bank, mean) = quadratic_setup(20, 64, 10);
        let cfg = small_config(10, 11);
        let lim = bootstrap_control_limit(&bank, &cfg).unwrap();
        let mut rng = stream(12, &[]);
        let stream_: Vec<ResponseVector> = (1..=40).map(|t| add_noise(&mean, 1.0, t, &mut rng)).collect();
        let mut a = Chart::from_limit(bank.clone(), &lim).unwrap();
        let run_a = run_chart(&mut a, stream_.clone()).unwrap();
        let mut b = Chart::from_limit(bank, &lim).unwrap();
        let run_b = run_chart(&mut b, stream_).unwrap();
        assert_eq!(run_a, run_b);
        for o in &run_a.log {
            let max = o.per_k1.iter().map(|p| p.statistic).fold(0.0, f64::max);
            assert_eq!(o.statistic, max);
            assert_eq!(o.alarm, o.statistic > lim.u);
            assert!((0.0..=2.0).contains(&o.statistic));
            assert_eq!(o.per_k1.len(), cfg.k_values.len());
        }
    }

    #[test]
    fn empty_stream_and_strong_shift() {
        let pair = &table2_catalog()[1];
        let mut rng = stream(13, &[]);
        let design = FixedDesign::sample_uniform(128, 3, &mut rng).unwrap();
        let hist = (0..20)
            .map(|k| generate_profile(&pair.in_control, &design, 1.0, k - 19, &mut rng).unwrap())
            .collect();
        let bank = build_bank(hist).unwrap();
        let lim = bootstrap_control_limit(&bank, &small_config(10, 14)).unwrap();
        let mut chart = Chart::from_limit(bank, &lim).unwrap();
        let run = run_chart(&mut chart, Vec::new()).unwrap();
        assert_eq!(run.alarm_time, None);
        assert!(run.log.is_empty());

        // A profile unrelated to f: a pure forcing function.
        let tau = 5;
        let mut profiles = Vec::new();
        for t in 1..=tau {
            profiles.push(generate_profile(&pair.in_control, &design, 1.0, t, &mut rng).unwrap());
        }
        for t in tau + 1..tau + 10 {
            profiles.push(generate_profile(&pair.forcing, &design, 1.0, t, &mut rng).unwrap());
        }
        let run = run_chart(&mut chart, profiles).unwrap();
        assert_eq!(run.alarm_time, Some(tau + 1));
    }

    #[test]
    fn reset_restores_initial_window() {
        let (bank, mean) = quadratic_setup(20, 32, 15);
        let mut chart = Chart::new(bank, ChartConfig::new(10, 1), 1.0).unwrap();
        let mut rng = stream(16, &[]);
        for t in 1..=4 {
            chart.monitor_step(&add_noise(&mean, 1.0, t, &mut rng)).unwrap();
        }
        assert_ne!(chart.window(), chart.initial_window());
        chart.reset();
        assert_eq!(chart.window(), chart.initial_window());
        assert_eq!(chart.steps(), 4);
    }
}
