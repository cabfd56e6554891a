//! Run configuration: defaults, then a config file, then `--set` overrides.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::path::{Path, PathBuf};
use trackvo::ba::BaConfig;
use trackvo::dynfilter::FilterConfig;
use trackvo::pipeline::PipelineConfig;
use trackvo::tracker::{CorrelationConfig, OracleConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackerKind {
    Oracle,
    Correlation,
}

/// Every tunable of a run, flat so that each key can be overridden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Unset picks the oracle for scenes and correlation for images.
    pub tracker: Option<TrackerKind>,
    pub n_queries: usize,
    pub grid: usize,
    pub s: usize,
    pub s_lp: usize,
    pub s_ba: usize,
    pub k: usize,
    pub k_ba: usize,
    pub gamma_v: f64,
    pub gamma_d: f64,
    pub gamma_u: f64,
    pub gamma_track: usize,
    pub tau_d: f64,
    pub sigma_d: f64,
    pub confidence_weighting: bool,
    pub huber_delta: f64,
    pub damping: f64,
    pub initial_depth: f64,
    pub seed: u64,
    /// Oracle tracker noise.
    pub sigma_px: f64,
    pub sigma_bad: f64,
    pub p_bad: f64,
    /// Correlation tracker search radius and soft-argmax sharpness.
    pub radius: usize,
    pub beta: f64,
    pub pool: usize,
    /// Frame rate used to timestamp image directories.
    pub fps: f64,
    pub scene: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub intrinsics: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        let c = CorrelationConfig::default();
        let o = OracleConfig::default();
        Self {
            tracker: None,
            n_queries: p.n_queries,
            grid: p.grid,
            s: c.window,
            s_lp: p.s_lp,
            s_ba: p.s_ba,
            k: c.iterations,
            k_ba: p.ba.iterations,
            gamma_v: p.filter.gamma_v,
            gamma_d: p.filter.gamma_d,
            gamma_u: p.filter.gamma_u,
            gamma_track: p.filter.gamma_track,
            tau_d: p.filter.tau_d,
            sigma_d: p.filter.sigma_d,
            confidence_weighting: p.filter.confidence_weighting,
            huber_delta: p.ba.huber_delta,
            damping: p.ba.damping,
            initial_depth: p.initial_depth,
            seed: 0,
            sigma_px: o.sigma_px,
            sigma_bad: o.sigma_bad,
            p_bad: o.p_bad,
            radius: c.radius,
            beta: c.beta,
            pool: c.pool,
            fps: 30.0,
            scene: None,
            images: None,
            intrinsics: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            n_queries: self.n_queries,
            grid: self.grid,
            s_lp: self.s_lp,
            s_ba: self.s_ba,
            filter: FilterConfig {
                gamma_v: self.gamma_v,
                gamma_d: self.gamma_d,
                gamma_u: self.gamma_u,
                gamma_track: self.gamma_track,
                tau_d: self.tau_d,
                sigma_d: self.sigma_d,
                confidence_weighting: self.confidence_weighting,
            },
            ba: BaConfig {
                iterations: self.k_ba,
                huber_delta: self.huber_delta,
                damping: self.damping,
                ..BaConfig::default()
            },
            initial_depth: self.initial_depth,
        }
    }

    pub fn oracle(&self) -> OracleConfig {
        OracleConfig {
            sigma_px: self.sigma_px,
            sigma_bad: self.sigma_bad,
            p_bad: self.p_bad,
            seed: self.seed,
            window: self.s,
            ..OracleConfig::default()
        }
    }

    pub fn correlation(&self) -> CorrelationConfig {
        CorrelationConfig {
            window: self.s,
            iterations: self.k,
            radius: self.radius,
            beta: self.beta,
            pool: self.pool,
            seed: self.seed,
            ..CorrelationConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.s < 2 {
            return Err("s must be at least 2".into());
        }
        if self.k == 0 {
            return Err("k must be at least 1".into());
        }
        if !(self.sigma_px >= 0.0 && self.sigma_bad >= 0.0 && (0.0..=1.0).contains(&self.p_bad)) {
            return Err("oracle noise must be non-negative and p_bad in [0, 1]".into());
        }
        if !(self.fps > 0.0) {
            return Err("fps must be positive".into());
        }
        self.pipeline().validate().map_err(|e| e.to_string())
    }
}

/// `key = value` lines (`#` comments) or a JSON object.
pub fn parse_config_text(text: &str) -> Result<Map<String, Value>, String> {
    if text.trim_start().starts_with('{') {
        return match serde_json::from_str(text) {
            Ok(Value::Object(m)) => Ok(m),
            Ok(_) => Err("config JSON must be an object".into()),
            Err(e) => Err(format!("config JSON: {e}")),
        };
    }
    let mut map = Map::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = parse_assignment(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        map.insert(k, v);
    }
    Ok(map)
}

/// `key=value`; the value is read as JSON when it parses, else as a string.
pub fn parse_assignment(text: &str) -> Result<(String, Value), String> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got '{text}'"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in '{text}'"));
    }
    let v = v.trim();
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

/// Defaults overlaid by the file, then by the overrides, in order.
pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<RunConfig, String> {
    let mut map = match serde_json::to_value(RunConfig::default()) {
        Ok(Value::Object(m)) => m,
        _ => unreachable!("config serializes to an object"),
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        map.extend(parse_config_text(&text).map_err(|e| format!("{}: {e}", path.display()))?);
    }
    for o in overrides {
        let (k, v) = parse_assignment(o)?;
        map.insert(k, v);
    }
    // numbers given for string-valued keys, e.g. `out=1`, stay usable
    for key in ["scene", "images", "intrinsics", "out", "tracker"] {
        if let Some(v @ (Value::Number(_) | Value::Bool(_))) = map.get(key) {
            let s = v.to_string();
            map.insert(key.into(), Value::String(s));
        }
    }
    let config: RunConfig = serde_json::from_value(Value::Object(map)).map_err(|e| e.to_string())?;
    config.validate()?;
    Ok(config)
}
