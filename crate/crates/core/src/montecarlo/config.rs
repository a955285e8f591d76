//! Experiment configuration: per-experiment defaults, JSON files layered on
//! top, then `key=value` overrides.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::flows::FlowKind;
use crate::kernels::{KernelFamily, KernelSpec};
use crate::transport::UnitIntervalMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    Lemma1,
    Theorem2,
    Lemma3,
    Theorem3Bridge,
    Theorem1Chain,
    WaldHitting,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::Lemma1,
        ExperimentId::Theorem2,
        ExperimentId::Lemma3,
        ExperimentId::Theorem3Bridge,
        ExperimentId::Theorem1Chain,
        ExperimentId::WaldHitting,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentId::Lemma1 => "lemma1",
            ExperimentId::Theorem2 => "theorem2",
            ExperimentId::Lemma3 => "lemma3",
            ExperimentId::Theorem3Bridge => "theorem3-bridge",
            ExperimentId::Theorem1Chain => "theorem1-chain",
            ExperimentId::WaldHitting => "wald-hitting",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

/// Full description of one experiment run. Fields not used by the chosen
/// experiment are carried along (and hashed) unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    /// Covariance used for Harris flows.
    pub kernel: KernelSpec,
    /// Flow kinds to run, where the experiment allows a choice.
    pub flows: Vec<FlowKind>,
    /// Particle count (lemma3, theorem3-bridge).
    pub n: usize,
    /// Discretization levels (theorem2).
    pub n_grid: Vec<usize>,
    /// Initial two-particle distances (lemma1).
    pub gap_grid: Vec<f64>,
    /// Gluing distances (lemma3).
    pub epsilon_grid: Vec<f64>,
    /// Support diameters (theorem1-chain).
    pub d_gamma_grid: Vec<f64>,
    /// Hitting levels (wald-hitting).
    pub c_grid: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    pub replicas: usize,
    /// Ensemble size `m` for the empirical outer distance.
    pub ensemble_size: usize,
    /// Independent ensemble pairs; their spread gives the standard error.
    pub ensemble_blocks: usize,
    /// Quantile points standing in for the continuous initial measure.
    pub fine_points: usize,
    pub ks_alpha: f64,
    pub bridge_correction: bool,
    pub master_seed: u64,
    pub mu: UnitIntervalMeasure<f64>,
}

impl ExperimentConfig {
    pub fn defaults(id: ExperimentId) -> Self {
        let mut c = Self {
            experiment: id,
            kernel: KernelSpec { family: KernelFamily::Triangle, d_gamma: 0.02 },
            flows: vec![FlowKind::Arratia],
            n: 2,
            n_grid: vec![2, 4, 8, 16],
            gap_grid: vec![0.01, 0.1, 0.5, 1.0],
            epsilon_grid: vec![1e-2, 1e-4],
            d_gamma_grid: vec![9e-3, 1e-3, 1e-4],
            c_grid: vec![-0.01, -0.05, -0.2],
            dt: 1e-4,
            horizon: 1.0,
            replicas: 200,
            ensemble_size: 1000,
            ensemble_blocks: 10,
            fine_points: 256,
            ks_alpha: 0.01,
            bridge_correction: true,
            master_seed: 20240501,
            mu: UnitIntervalMeasure::Uniform,
        };
        match id {
            ExperimentId::Lemma1 => {
                c.flows = vec![FlowKind::Arratia, FlowKind::Harris];
                c.replicas = 2000;
            }
            ExperimentId::Theorem2 => {}
            ExperimentId::Lemma3 => {
                c.flows = vec![FlowKind::Harris, FlowKind::Arratia];
                c.n = 4;
                c.replicas = 500;
            }
            ExperimentId::Theorem3Bridge => {
                c.kernel.d_gamma = 1e-4;
                c.replicas = 10_000;
            }
            ExperimentId::Theorem1Chain => {
                c.ensemble_size = 256;
                c.ensemble_blocks = 10;
                c.replicas = 200;
            }
            ExperimentId::WaldHitting => {
                c.horizon = 4.0;
                c.replicas = 10_000;
            }
        }
        c
    }

    /// Defaults for `id`, overlaid with `file` (a JSON object) and then with
    /// `overrides` (`key=value`, dotted keys for nested fields).
    pub fn resolve(id: ExperimentId, file: Option<&Value>, overrides: &[String]) -> Result<Self, ExperimentError> {
        if let Some(v) = file.and_then(|f| f.get("experiment")) {
            if v.as_str() != Some(id.as_str()) {
                return Err(ExperimentError::Config(format!(
                    "config file is for experiment {v}, but {} was requested",
                    id.as_str()
                )));
            }
        }
        let cfg: Self =
            layer_json(&Self::defaults(id), file, overrides, &["experiment"], &["kernel"]).map_err(ExperimentError::Config)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Range checks that do not depend on the model hypotheses.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return bad(format!("need 0 < dt <= horizon, got dt = {}, horizon = {}", self.dt, self.horizon));
        }
        if self.replicas == 0 {
            return bad("replicas must be positive".into());
        }
        if self.ensemble_size == 0 || self.ensemble_blocks == 0 {
            return bad("ensemble_size and ensemble_blocks must be positive".into());
        }
        if !(self.kernel.d_gamma >= 0.0 && self.kernel.d_gamma.is_finite()) {
            return bad(format!("kernel.d_gamma must be finite and >= 0, got {}", self.kernel.d_gamma));
        }
        if !(self.ks_alpha > 0.0 && self.ks_alpha < 1.0) {
            return bad(format!("ks_alpha must lie in (0, 1), got {}", self.ks_alpha));
        }
        if self.flows.is_empty() {
            return bad("flows must list at least one flow kind".into());
        }
        self.mu.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    /// Canonical JSON (fields in declaration order).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of [`canonical_json`](Self::canonical_json).
    pub fn hash(&self) -> String {
        json_hash(self)
    }
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn json_hash<C: Serialize>(value: &C) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Layers a JSON object `file` and then `key=value` `overrides` on top of
/// `defaults`. Keys in `fixed` may appear in the file but are not changed;
/// fields listed in `nested` are also addressable as `field.key`. The key
/// `d_gamma` is an alias of `kernel.d_gamma`. Unknown keys are rejected with
/// the list of valid ones.
pub fn layer_json<C: Serialize + DeserializeOwned>(
    defaults: &C,
    file: Option<&Value>,
    overrides: &[String],
    fixed: &[&str],
    nested: &[&str],
) -> Result<C, String> {
    let mut value = serde_json::to_value(defaults).map_err(|e| e.to_string())?;
    let valid = valid_keys(&value, fixed, nested);
    if let Some(file) = file {
        let Value::Object(map) = file else {
            return Err("config file must hold a JSON object".into());
        };
        for (k, v) in map {
            if fixed.contains(&k.as_str()) {
                continue;
            }
            set_path(&mut value, k, v.clone(), &valid)?;
        }
    }
    for o in overrides {
        let (k, raw) = o.split_once('=').ok_or_else(|| format!("override {o:?} is not of the form key=value"))?;
        let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, k.trim(), parsed, &valid)?;
    }
    serde_json::from_value(value).map_err(|e| e.to_string())
}

fn valid_keys(value: &Value, fixed: &[&str], nested: &[&str]) -> Vec<String> {
    let mut out = Vec::new();
    if let Value::Object(map) = value {
        for (k, v) in map {
            if fixed.contains(&k.as_str()) {
                continue;
            }
            out.push(k.clone());
            if let (Value::Object(inner), true) = (v, nested.contains(&k.as_str())) {
                out.extend(inner.keys().map(|ik| format!("{k}.{ik}")));
            }
        }
    }
    if out.iter().any(|k| k == "kernel.d_gamma") {
        out.push("d_gamma".into());
    }
    out.sort();
    out
}

fn set_path(root: &mut Value, key: &str, v: Value, valid: &[String]) -> Result<(), String> {
    let key = if key == "d_gamma" { "kernel.d_gamma" } else { key };
    if !valid.iter().any(|k| k == key) {
        return Err(format!("unknown key {key:?}; valid keys: {}", valid.join(", ")));
    }
    let mut cur = root;
    let mut parts = key.split('.').peekable();
    while let Some(p) = parts.next() {
        let obj = cur.as_object_mut().expect("keys address objects");
        if parts.peek().is_none() {
            obj.insert(p.to_string(), v);
            return Ok(());
        }
        cur = obj.get_mut(p).expect("valid key path exists");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(ExperimentId::parse(id.as_str()), Some(id));
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{}\"", id.as_str()));
        }
    }

    #[test]
    fn overrides_win_over_file() {
        let file = serde_json::json!({"replicas": 50, "kernel": {"family": "box", "d_gamma": 0.004}});
        let cfg = ExperimentConfig::resolve(
            ExperimentId::Theorem2,
            Some(&file),
            &["replicas=7".into(), "d_gamma=0.001".into(), "n_grid=[2,4]".into()],
        )
        .unwrap();
        assert_eq!(cfg.replicas, 7);
        assert_eq!(cfg.kernel.family, KernelFamily::Box);
        assert_eq!(cfg.kernel.d_gamma, 0.001);
        assert_eq!(cfg.n_grid, vec![2, 4]);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = ExperimentConfig::resolve(ExperimentId::Lemma1, None, &["replica=3".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown key \"replica\""), "{msg}");
        assert!(msg.contains("replicas") && msg.contains("kernel.d_gamma"), "{msg}");
        let file = serde_json::json!({"bogus": 1});
        assert!(ExperimentConfig::resolve(ExperimentId::Lemma1, Some(&file), &[]).is_err());
    }

    #[test]
    fn hash_depends_on_content() {
        let a = ExperimentConfig::defaults(ExperimentId::Theorem2);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.master_seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn mu_spec_parses() {
        let cfg = ExperimentConfig::resolve(ExperimentId::Theorem2, None, &[r#"mu={"kind":"dirac","at":0.3}"#.into()]).unwrap();
        assert_eq!(cfg.mu, UnitIntervalMeasure::Dirac { at: 0.3 });
        assert!(ExperimentConfig::resolve(ExperimentId::Theorem2, None, &[r#"mu={"kind":"dirac","at":3}"#.into()]).is_err());
    }
}
