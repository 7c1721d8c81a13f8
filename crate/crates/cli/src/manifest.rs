//! Run manifests: what a run reads, how it is configured and where it
//! writes. Every run echoes its fully resolved manifest so that `replay`
//! can re-execute it from the artifact alone.

use eigencc::chart::{make_k, BootstrapSubstitution, ChartConfig, DEFAULT_L};
use eigencc::eigen::default_max_iter;
use eigencc::profile_model::ProfileFunction;
use eigencc::sim::Cell;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};
use crate::io::InputFormat;

pub const DEFAULT_SEED: u64 = 20_240_101;
pub const DEFAULT_W: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verb {
    Calibrate,
    Monitor,
    Simulate,
    ProfileGen,
    Report,
}

/// Chart settings; anything left out takes its default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    /// Spacing count used to build `K` when `K` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(default, rename = "K", skip_serializing_if = "Option::is_none")]
    pub k_values: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_stat: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pool: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub substitution: Option<BootstrapSubstitution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_floor: Option<f64>,
}

impl ChartSettings {
    pub fn resolve(&self, seed: u64) -> ChartConfig {
        let w = self.w.unwrap_or(DEFAULT_W);
        let base = ChartConfig::new(w, seed);
        ChartConfig {
            k_values: self.k_values.clone().unwrap_or_else(|| make_k(w, self.l.unwrap_or(DEFAULT_L))),
            zeta: self.zeta.unwrap_or(base.zeta),
            c: self.c.unwrap_or(base.c),
            n_stat: self.n_stat.unwrap_or(base.n_stat),
            n_pool: self.n_pool.unwrap_or(base.n_pool),
            max_iter: self.max_iter.unwrap_or(default_max_iter(w)),
            substitution: self.substitution.unwrap_or(base.substitution),
            eps_floor: self.eps_floor.unwrap_or(base.eps_floor),
            ..base
        }
    }

    /// Settings that reproduce `config` exactly.
    pub fn from_config(config: &ChartConfig, l: Option<usize>) -> Self {
        ChartSettings {
            w: Some(config.w),
            l,
            k_values: Some(config.k_values.clone()),
            zeta: Some(config.zeta),
            c: Some(config.c),
            n_stat: Some(config.n_stat),
            n_pool: Some(config.n_pool),
            max_iter: Some(config.max_iter),
            substitution: Some(config.substitution),
            eps_floor: Some(config.eps_floor),
        }
    }

    fn is_empty(&self) -> bool {
        *self == ChartSettings::default()
    }
}

/// Design points, inline or from a CSV file with one row per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum DesignSource {
    Inline { rows: Vec<Vec<f64>> },
    File { path: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    #[default]
    Ndjson,
    Csv,
}

/// Synthetic stream generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileGenSpec {
    pub in_control: ProfileFunction,
    /// Mean from `shift_at` onwards; defaults to the in-control function.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_of_control: Option<ProfileFunction>,
    /// First time step drawn from `out_of_control`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_at: Option<i64>,
    /// Design size when no design is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Predictor dimension when no design is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(default = "one")]
    pub sigma: f64,
    /// Monitoring profiles, numbered `1..=steps`.
    pub steps: u64,
    /// Historical profiles, numbered `1 − m..=0`; zero writes none.
    #[serde(default)]
    pub m: usize,
    #[serde(default)]
    pub format: StreamFormat,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Study1,
    Study2,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub study: Study,
    /// Overrides for the shared simulation options.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub options: Map<String, Value>,
    /// Overrides for the study grid.
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub grid: Map<String, Value>,
    /// Cells of a custom study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<Cell>>,
    /// Keeps only cells whose id contains this string.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub historical: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb: Option<Verb>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "ChartSettings::is_empty")]
    pub chart: ChartSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub historical: Option<String>,
    /// Control limit file read by `monitor`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<String>,
    /// Monitoring stream; `-` is standard input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_format: Option<InputFormat>,
    /// Per-trial CSV files aggregated by `report`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reports: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileGenSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSpec>,
    #[serde(default)]
    pub outputs: Outputs,
}

impl RunManifest {
    pub fn load(path: &str) -> CliResult<Self> {
        crate::io::parse_json(path)
    }

    /// SHA-256 of the compact JSON encoding, hex encoded. Where the stream is
    /// read from and where outputs go do not change results, so they are
    /// left out.
    pub fn digest(&self) -> String {
        let mut m = self.clone();
        m.stream = None;
        m.outputs = Outputs::default();
        let bytes = serde_json::to_vec(&m).expect("manifest serializes");
        hex::encode(Sha256::digest(bytes))
    }

    /// The resolved seed; only meaningful on a resolved manifest.
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, what: &str) -> CliResult<&'a T> {
        value.as_ref().ok_or_else(|| CliError::Usage(format!("missing {what}")))
    }
}

/// Seed precedence: flag, then `EIGENCC_SEED`, then manifest, then the
/// default. The flag and the environment are merged by the argument parser.
pub fn resolve_seed(flag_or_env: Option<u64>, manifest: Option<u64>) -> u64 {
    flag_or_env.or(manifest).unwrap_or(DEFAULT_SEED)
}

/// Applies `overrides` to the JSON form of `base`, rejecting unknown keys.
pub fn merge_overrides<T>(base: &T, overrides: &Map<String, Value>, what: &str) -> CliResult<T>
where
    T: Serialize + serde::de::DeserializeOwned,
{
    let mut value = serde_json::to_value(base).expect("defaults serialize");
    let obj = value.as_object_mut().expect("defaults are an object");
    for (k, v) in overrides {
        if !obj.contains_key(k) {
            let known: Vec<&str> = obj.keys().map(String::as_str).collect();
            return Err(CliError::Usage(format!("unknown {what} key {k:?}; known keys: {}", known.join(", "))));
        }
        obj.insert(k.clone(), v.clone());
    }
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("invalid {what} override: {e}")))
}

/// Parses `key=value`; the value is JSON when it parses as JSON and a
/// string otherwise.
pub fn parse_assignment(s: &str) -> CliResult<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("expected key=value, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use eigencc::sim::SimOptions;

    #[test]
    fn chart_settings_roundtrip_through_config() {
        let s = ChartSettings { w: Some(8), l: Some(4), zeta: Some(1e-4), ..ChartSettings::default() };
        let config = s.resolve(5);
        assert_eq!(config.k_values, make_k(8, 4));
        let again = ChartSettings::from_config(&config, s.l).resolve(5);
        assert_eq!(config, again);
    }

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some(2)), 1);
        assert_eq!(resolve_seed(None, Some(2)), 2);
        assert_eq!(resolve_seed(None, None), DEFAULT_SEED);
    }

    #[test]
    fn overrides_reject_unknown_keys() {
        let mut o = Map::new();
        o.insert("trials".into(), Value::from(5));
        let opts: SimOptions = merge_overrides(&SimOptions::default(), &o, "option").unwrap();
        assert_eq!(opts.trials, 5);
        o.insert("trails".into(), Value::from(5));
        assert!(merge_overrides(&SimOptions::default(), &o, "option").is_err());
    }

    #[test]
    fn assignments_parse_json_or_text() {
        assert_eq!(parse_assignment("trials=5").unwrap(), ("trials".into(), Value::from(5)));
        assert_eq!(parse_assignment("snrs=[3,5]").unwrap().1, serde_json::json!([3, 5]));
        assert_eq!(parse_assignment("pair=linear-sin").unwrap().1, Value::from("linear-sin"));
        assert!(parse_assignment("trials").is_err());
    }

    #[test]
    fn manifest_json_roundtrip_and_digest() {
        let m = RunManifest {
            verb: Some(Verb::Calibrate),
            seed: Some(3),
            historical: Some("h.csv".into()),
            ..RunManifest::default()
        };
        let text = serde_json::to_string(&m).unwrap();
        let back: RunManifest = serde_json::from_str(&text).unwrap();
        assert_eq!(m, back);
        assert_eq!(m.digest(), back.digest());
        assert!(serde_json::from_str::<RunManifest>(r#"{"sede": 1}"#).is_err());

        let mut moved = m.clone();
        moved.stream = Some("-".into());
        moved.outputs.limit = Some("elsewhere.json".into());
        assert_eq!(m.digest(), moved.digest());
        let mut reseeded = m.clone();
        reseeded.seed = Some(4);
        assert_ne!(m.digest(), reseeded.digest());
    }
}
