use std::path::{Path, PathBuf};

use rokhlin_core::dynamics::MinimalMap;
use rokhlin_core::ktheory::{IntMatrix, MIN_SAMPLES};
use rokhlin_core::limitalg::{default_epsilons, TestFunction, DEFAULT_STAGES};
use rokhlin_core::TorusPoint;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A configuration problem; the runner exits with status 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub map: MinimalMap,
    pub matching: MatchingConfig,
    pub tower: TowerConfig,
    pub stages: StageConfig,
    pub tests: Vec<TestFunction>,
    pub trace: TraceConfig,
    pub ktheory: KTheoryConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            map: MinimalMap::golden_rotation(),
            matching: MatchingConfig::default(),
            tower: TowerConfig::default(),
            stages: StageConfig::default(),
            tests: TestFunction::standard_set(),
            trace: TraceConfig::default(),
            ktheory: KTheoryConfig::default(),
            seed: 0,
            out: PathBuf::from("rokhlin-out"),
        }
    }
}

/// Point source and threshold for the `match` pipeline. Exactly one of
/// `points`, `sample_eps` is used when present; otherwise the `grid`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchingConfig {
    pub grid: usize,
    pub points: Option<Vec<TorusPoint>>,
    /// Draw an ε-dense sample of this density instead of a grid.
    pub sample_eps: Option<f64>,
    /// Candidate sample sizes for `sample_eps` (empty: the smallest admissible).
    pub sizes: Vec<usize>,
    /// Grid steps of the closed arcs used in the measure comparison.
    pub arc_steps: usize,
    pub eps: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self { grid: 89, points: None, sample_eps: None, sizes: Vec::new(), arc_steps: 100, eps: 1.0 / 89.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TowerConfig {
    pub height: usize,
    pub delta: f64,
    pub eta: f64,
    /// Points per axis of the sampled disjointness cross-check.
    pub grid_resolution: usize,
    /// The stage-level Rokhlin check; `null` skips it.
    pub rokhlin: Option<RokhlinConfig>,
}

impl Default for TowerConfig {
    fn default() -> Self {
        Self { height: 5, delta: 0.1, eta: 0.02, grid_resolution: 1000, rokhlin: Some(RokhlinConfig::default()) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RokhlinConfig {
    pub eps: f64,
    pub sample_eps: f64,
    pub min_points: usize,
    pub a1: usize,
    pub cyclic: bool,
}

impl Default for RokhlinConfig {
    fn default() -> Self {
        Self { eps: 0.1, sample_eps: 0.1, min_points: 233, a1: 1, cyclic: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub k1: usize,
    pub a: Vec<usize>,
    pub eps: Vec<f64>,
    pub basepoints: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { k1: 1, a: vec![1; DEFAULT_STAGES], eps: default_epsilons(DEFAULT_STAGES), basepoints: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub function: TestFunction,
    /// `∫ f dμ` as `[re, im]`.
    pub integral: [f64; 2],
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self { function: TestFunction::Coordinate { index: 0, power: 1 }, integral: [0.0, 0.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FurstenbergCheck {
    pub d: Vec<i64>,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitCheck {
    pub rank00: usize,
    pub rank1: usize,
    pub a: Vec<i64>,
    pub b: Vec<i64>,
    pub gamma0: IntMatrix,
    pub gamma1: IntMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KTheoryConfig {
    /// Connecting matrices `κ_n`.
    pub kappa: Vec<IntMatrix>,
    pub h: Vec<IntMatrix>,
    pub hbar: Vec<IntMatrix>,
    pub winding_samples: usize,
    pub furstenberg: Option<FurstenbergCheck>,
    pub limit: Option<LimitCheck>,
}

impl Default for KTheoryConfig {
    fn default() -> Self {
        let id = IntMatrix::identity(2);
        Self {
            kappa: vec![id.clone(); 3],
            h: vec![id.clone(); 3],
            hbar: vec![id; 3],
            winding_samples: 1024,
            furstenberg: Some(FurstenbergCheck { d: vec![1], theta: (5f64.sqrt() - 1.0) / 2.0 }),
            limit: Some(LimitCheck {
                rank00: 1,
                rank1: 1,
                a: vec![1, 1, 1],
                b: vec![2, 3, 4],
                gamma0: IntMatrix::identity(2),
                gamma1: IntMatrix::identity(1),
            }),
        }
    }
}

/// Sets `path` (dot separated) in `root` to `raw`, read as JSON when it
/// parses and as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| bad(format!("--set expects KEY=VALUE, got `{assignment}`")))?;
    if path.is_empty() {
        return Err(bad("--set with an empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                let entry = map.entry(part.to_string()).or_insert(Value::Null);
                if entry.is_null() {
                    *entry = Value::Object(Default::default());
                }
                entry
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| bad(format!("`{part}` in `{path}` is not an array index")))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| bad(format!("index {idx} out of range (length {len}) in `{path}`")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad(format!("`{path}` descends into a scalar"))),
        };
    }
    Ok(())
}

impl ExperimentConfig {
    /// Defaults, then the config file, then each `--set`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut root = serde_json::to_value(Self::default()).map_err(|e| bad(e.to_string()))?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| bad(format!("cannot read {}: {e}", p.display())))?;
            let file: Value = serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", p.display())))?;
            merge(&mut root, file);
        }
        for o in overrides {
            apply_override(&mut root, o)?;
        }
        let cfg: Self = serde_json::from_value(root).map_err(|e| bad(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(bad(format!("{name} must be positive, got {v}"))) };
        let m = &self.matching;
        positive("matching.eps", m.eps)?;
        if let Some(e) = m.sample_eps {
            positive("matching.sample_eps", e)?;
        }
        if m.points.is_none() && m.sample_eps.is_none() && m.grid == 0 {
            return Err(bad("matching.grid must be at least 1"));
        }
        if let Some(pts) = &m.points {
            if pts.is_empty() || pts.iter().any(|p| p.dim() != self.map.dim()) {
                return Err(bad(format!("matching.points must be non-empty points of dimension {}", self.map.dim())));
            }
        }
        if m.arc_steps == 0 {
            return Err(bad("matching.arc_steps must be at least 1"));
        }
        let t = &self.tower;
        if t.height == 0 {
            return Err(bad("tower.height must be at least 1"));
        }
        if !(t.delta > 0.0 && t.delta < 1.0) {
            return Err(bad("tower.delta must lie in (0, 1)"));
        }
        positive("tower.eta", t.eta)?;
        if let Some(r) = &t.rokhlin {
            positive("tower.rokhlin.eps", r.eps)?;
            positive("tower.rokhlin.sample_eps", r.sample_eps)?;
            if r.a1 == 0 {
                return Err(bad("tower.rokhlin.a1 must be at least 1"));
            }
        }
        let s = &self.stages;
        if s.k1 == 0 {
            return Err(bad("stages.k1 must be at least 1"));
        }
        if s.a.len() != s.eps.len() {
            return Err(bad(format!("stages.a has {} entries but stages.eps has {}", s.a.len(), s.eps.len())));
        }
        if s.a.iter().any(|a| *a == 0) {
            return Err(bad("every stages.a entry must be at least 1"));
        }
        for e in &s.eps {
            positive("stages.eps", *e)?;
        }
        if self.tests.is_empty() {
            return Err(bad("tests must not be empty"));
        }
        for f in self.tests.iter().chain(std::iter::once(&self.trace.function)) {
            f.scalar(self.map.dim()).map_err(|e| bad(format!("test function {f:?}: {e}")))?;
        }
        let k = &self.ktheory;
        if k.h.len() != k.kappa.len() || k.hbar.len() != k.kappa.len() {
            return Err(bad("ktheory.h, ktheory.hbar and ktheory.kappa need equal lengths"));
        }
        if k.winding_samples < MIN_SAMPLES {
            return Err(bad(format!("ktheory.winding_samples must be at least {MIN_SAMPLES}")));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let mut root = serde_json::to_value(ExperimentConfig::default()).unwrap();
        apply_override(&mut root, "tower.height=7").unwrap();
        apply_override(&mut root, "stages.eps.1=0.3").unwrap();
        apply_override(&mut root, "out=somewhere").unwrap();
        let cfg: ExperimentConfig = serde_json::from_value(root).unwrap();
        assert_eq!(cfg.tower.height, 7);
        assert_eq!(cfg.stages.eps[1], 0.3);
        assert_eq!(cfg.out, PathBuf::from("somewhere"));
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let mut root = serde_json::to_value(ExperimentConfig::default()).unwrap();
        assert!(apply_override(&mut root, "no-equals").is_err());
        assert!(apply_override(&mut root, "stages.eps.9=1").is_err());
        assert!(apply_override(&mut root, "seed.x=1").is_err());
        assert!(ExperimentConfig::load(None, &["tower.delta=2".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["stages.a=[1]".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["map.kind=\"spiral\"".into()]).is_err());
        assert!(ExperimentConfig::load(None, &["bogus=1".into()]).is_err());
    }

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }
}
