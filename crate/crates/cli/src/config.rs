//! Run configuration: model parameters plus per-command settings, read from
//! one flat namespace (JSON object or `key = value` lines).

use std::collections::BTreeMap;
use std::path::Path;

use fpreduce::model::{ModelParams, PARAM_KEYS};
use fpreduce::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial1D {
    /// One node just above `y = 0`.
    Delta,
    Gaussian,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeStart {
    /// The spontaneous state.
    Spontaneous,
    /// The decision state with `ν₁ < ν₂`.
    Decision,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    // reduction
    pub y_max: f64,
    pub n_y: usize,
    pub delta_lambdas: Vec<f64>,
    pub gap_delta_lambdas: Vec<f64>,
    pub marginal_bins: usize,

    // bifurcate
    pub w_plus_lo: f64,
    pub w_plus_hi: f64,
    pub w_plus_step: f64,

    // evolve1d
    pub dt_1d: f64,
    pub t_end_1d: f64,
    pub snapshot_every_1d: f64,
    pub init_1d: Initial1D,
    pub init_center: f64,
    pub init_width: f64,

    // evolve2d
    pub n_2d: usize,
    pub dt_2d: f64,
    pub t_end_2d: f64,
    pub snapshot_every_2d: f64,
    pub blob_y: f64,
    pub blob_width: f64,
    pub y_bins: usize,
    pub binary_snapshot: bool,

    // sde
    pub n_paths: usize,
    pub dt_sde: f64,
    pub t_end_sde: f64,
    pub sde_start: SdeStart,
    pub sde_width: f64,

    // escape
    pub betas: Vec<f64>,
    pub escape_paths: usize,
    pub escape_dt: f64,
    pub escape_t_end: f64,
    pub radius: f64,
    pub escape_2d_n: usize,
    pub escape_2d_dt: f64,
    /// Zero skips the 2D half-mass estimate.
    pub escape_2d_t_end: f64,
    pub escape_2d_sample_every: f64,

    // perf
    pub perf_delta_lambdas: Vec<f64>,
    pub perf_n_2d: usize,
    pub perf_dt_2d: f64,
    pub perf_t_end: f64,
    pub perf_sample_every: f64,
    pub perf_fit_from: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            y_max: 6.0,
            n_y: 401,
            delta_lambdas: vec![0.0, 0.01, 0.05, 0.1],
            gap_delta_lambdas: (0..=10).map(|k| k as f64 * 0.005).collect(),
            marginal_bins: 50,

            w_plus_lo: 1.8,
            w_plus_hi: 2.6,
            w_plus_step: 0.01,

            dt_1d: 0.01,
            t_end_1d: 1000.0,
            snapshot_every_1d: 20.0,
            init_1d: Initial1D::Delta,
            init_center: 0.0,
            init_width: 0.5,

            n_2d: 200,
            dt_2d: 0.01,
            t_end_2d: 20.0,
            snapshot_every_2d: 5.0,
            blob_y: 1.0,
            blob_width: 0.5,
            y_bins: 60,
            binary_snapshot: false,

            n_paths: 10_000,
            dt_sde: 1e-3,
            t_end_sde: 300.0,
            sde_start: SdeStart::Spontaneous,
            sde_width: 0.3,

            betas: vec![0.3, 0.25, 0.2],
            escape_paths: 200,
            escape_dt: 1e-2,
            escape_t_end: 6e4,
            radius: 0.5,
            escape_2d_n: 60,
            escape_2d_dt: 0.5,
            escape_2d_t_end: 0.0,
            escape_2d_sample_every: 5.0,

            perf_delta_lambdas: (0..=5).map(|k| k as f64 * 0.01).collect(),
            perf_n_2d: 100,
            perf_dt_2d: 0.05,
            perf_t_end: 200.0,
            perf_sample_every: 10.0,
            perf_fit_from: 60.0,
        }
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub params: ModelParams,
    pub settings: Settings,
}

fn settings_keys() -> Vec<String> {
    match serde_json::to_value(Settings::default()) {
        Ok(Value::Object(m)) => m.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

/// Interprets a `key = value` right-hand side: JSON literal, a
/// comma-separated number list, or a bare string.
fn kv_value(raw: &str) -> Value {
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return v;
    }
    if raw.contains(',') {
        let parts: std::result::Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse::<f64>()).collect();
        if let Ok(list) = parts {
            return Value::from(list);
        }
    }
    Value::String(raw.to_string())
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let map = if text.trim_start().starts_with('{') {
            serde_json::from_str::<Map<String, Value>>(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            fpreduce::model::parse_key_values(text)?
                .into_iter()
                .map(|(k, v)| (k, kv_value(&v)))
                .collect()
        };
        let mut cfg = Self::default();
        cfg.apply(map)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_str(&text)
    }

    /// Applies `key=value` overrides on top of the current values.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        let mut map = Map::new();
        for p in pairs {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{p}` is not key=value")))?;
            map.insert(k.trim().to_string(), kv_value(v.trim()));
        }
        self.apply(map)
    }

    fn apply(&mut self, map: Map<String, Value>) -> Result<()> {
        let setting_keys = settings_keys();
        let mut model = match serde_json::to_value(self.params) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("model parameters serialize to an object"),
        };
        let mut settings = match serde_json::to_value(&self.settings) {
            Ok(Value::Object(m)) => m,
            _ => unreachable!("settings serialize to an object"),
        };
        let mut unknown: Vec<String> = Vec::new();
        for (k, v) in map {
            if PARAM_KEYS.contains(&k.as_str()) {
                model.insert(k, v);
            } else if setting_keys.contains(&k) {
                let v = match (&settings[&k], v) {
                    (Value::Array(_), v @ Value::Number(_)) => Value::Array(vec![v]),
                    (_, v) => v,
                };
                settings.insert(k, v);
            } else {
                unknown.push(k);
            }
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownKey(unknown.join(", ")));
        }
        let params: ModelParams =
            serde_json::from_value(Value::Object(model)).map_err(|e| Error::Config(format!("model: {e}")))?;
        params.validate()?;
        let settings: Settings =
            serde_json::from_value(Value::Object(settings)).map_err(|e| Error::Config(format!("settings: {e}")))?;
        self.params = params;
        self.settings = settings;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.settings;
        let positive = [
            ("y_max", s.y_max),
            ("dt_1d", s.dt_1d),
            ("dt_2d", s.dt_2d),
            ("dt_sde", s.dt_sde),
            ("escape_dt", s.escape_dt),
            ("radius", s.radius),
            ("init_width", s.init_width),
            ("blob_width", s.blob_width),
            ("sde_width", s.sde_width),
            ("perf_dt_2d", s.perf_dt_2d),
            ("perf_sample_every", s.perf_sample_every),
            ("escape_2d_dt", s.escape_2d_dt),
        ];
        if let Some((k, v)) = positive.iter().find(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("{k} must be positive, got {v}")));
        }
        if s.n_y < 3 || s.n_2d < 2 || s.perf_n_2d < 2 || s.escape_2d_n < 2 {
            return Err(Error::Config(
                "grids need at least 3 nodes (1D) and 2 cells per axis (2D)".into(),
            ));
        }
        if s.marginal_bins == 0 || s.y_bins == 0 {
            return Err(Error::Config("bin counts must be positive".into()));
        }
        for (k, v) in [
            ("t_end_1d", s.t_end_1d),
            ("t_end_2d", s.t_end_2d),
            ("t_end_sde", s.t_end_sde),
            ("escape_t_end", s.escape_t_end),
            ("escape_2d_t_end", s.escape_2d_t_end),
            ("perf_t_end", s.perf_t_end),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{k} must be finite and ≥ 0, got {v}")));
            }
        }
        if s.betas.iter().any(|b| !(*b > 0.0)) {
            return Err(Error::Config("betas must be positive".into()));
        }
        Ok(())
    }

    /// Flat JSON echo, accepted back by [`RunConfig::from_str`].
    pub fn to_json(&self) -> Value {
        let mut out = BTreeMap::new();
        if let Ok(Value::Object(m)) = serde_json::to_value(self.params) {
            out.extend(m);
        }
        if let Ok(Value::Object(m)) = serde_json::to_value(&self.settings) {
            out.extend(m);
        }
        Value::Object(out.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_and_json_agree() {
        let kv = RunConfig::from_str("beta = 0.3\ndelta_lambdas = 0, 0.02\ninit_1d = gaussian\n").unwrap();
        let js = RunConfig::from_str(r#"{"beta": 0.3, "delta_lambdas": [0, 0.02], "init_1d": "gaussian"}"#).unwrap();
        assert_eq!(kv, js);
        assert_eq!(kv.params.beta, 0.3);
        assert_eq!(kv.settings.delta_lambdas, vec![0.0, 0.02]);
        assert_eq!(kv.settings.init_1d, Initial1D::Gaussian);
    }

    #[test]
    fn unknown_keys_are_listed() {
        match RunConfig::from_str("beta = 0.3\nbogus = 1\nalso_bogus = 2\n") {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "also_bogus, bogus"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_overrides(&["n_2d=64".into(), "delta_lambda=0.02".into()])
            .unwrap();
        let text = serde_json::to_string(&cfg.to_json()).unwrap();
        assert_eq!(RunConfig::from_str(&text).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_str("dt_1d = 0").is_err());
        assert!(RunConfig::from_str("n_y = 2").is_err());
        assert!(RunConfig::from_str("beta = -1").is_err());
        assert!(RunConfig::from_str("init_1d = sideways").is_err());
    }
}
