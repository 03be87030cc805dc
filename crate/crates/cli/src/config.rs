//! Run configuration: built-in defaults, then a TOML or JSON file, then
//! command-line overrides, merged key by key.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use epivsr::resample::{DegradeSpec, PatchSpec};
use epivsr::synthetic::SceneSpec;
use epivsr::trainer::TrainSchedule;
use epivsr::{EvrnConfig, NvsConfig, Protocol, SrTask};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Evrn,
    Nvs,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub evrn_weights: Option<PathBuf>,
    pub nvs_weights: Option<PathBuf>,
    /// Spatially up-sampled light field for external preliminary up-sampling.
    pub external: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub grid_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainData {
    pub model: ModelKind,
    /// Synthetic scenes generated in memory.
    pub scenes: Vec<SceneSpec>,
    /// Light-field directories; their luma is used.
    pub lf_dirs: Vec<PathBuf>,
    /// Cut patches from every light field; whole light fields otherwise.
    pub patch: Option<PatchSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOpts {
    pub protocol: Protocol,
    pub method: String,
    pub scene: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds weight initialization.
    pub seed: u64,
    pub bit_depth: u8,
    pub paths: Paths,
    pub synthetic: SceneSpec,
    pub degrade: DegradeSpec,
    pub task: SrTask,
    pub evrn: EvrnConfig,
    pub nvs: NvsConfig,
    pub schedule: TrainSchedule,
    pub train: TrainData,
    pub eval: EvalOpts,
}

impl RunConfig {
    pub fn defaults(model: ModelKind) -> Self {
        Self {
            seed: 0,
            bit_depth: 16,
            paths: Paths::default(),
            synthetic: SceneSpec::new(0, 1.0, 64, 64, 9),
            degrade: DegradeSpec {
                spatial_factor: 2,
                angular_decimate: false,
                antialias: true,
            },
            task: SrTask::ssr(2),
            evrn: EvrnConfig::desk(),
            nvs: NvsConfig::desk(),
            schedule: match model {
                ModelKind::Evrn => TrainSchedule::evrn(),
                ModelKind::Nvs => TrainSchedule::nvs(),
            },
            train: TrainData {
                model,
                scenes: Vec::new(),
                lf_dirs: Vec::new(),
                patch: None,
            },
            eval: EvalOpts {
                protocol: Protocol::Ssr,
                method: "epivsr".into(),
                scene: "scene".into(),
            },
        }
    }
}

/// A loaded configuration together with the user-supplied layers, so
/// commands can tell explicit settings from defaults.
pub struct Loaded {
    pub config: RunConfig,
    pub user: Value,
}

impl Loaded {
    pub fn user_set(&self, path: &str) -> bool {
        lookup(&self.user, path).is_some()
    }

    pub fn echo(&self) -> Value {
        serde_json::to_value(&self.config).expect("config serializes")
    }
}

fn read_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {path:?}"))?;
    let v: Value = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {path:?}"))?,
        _ => toml::from_str(&text).with_context(|| format!("parsing {path:?}"))?,
    };
    if !v.is_object() {
        bail!("config {path:?} is not a table");
    }
    Ok(v)
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Map<String, Value>>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut m| m.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn lookup<'a>(v: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(v, |v, k| v.get(k))
}

pub fn set_path(v: &mut Value, path: &str, value: Value) {
    let mut cur = v;
    let keys: Vec<&str> = path.split('.').collect();
    for k in &keys[..keys.len() - 1] {
        if !cur.get(*k).is_some_and(Value::is_object) {
            cur[*k] = Value::Object(Map::new());
        }
        cur = &mut cur[*k];
    }
    cur[keys[keys.len() - 1]] = value;
}

/// Recursively overlays `top` on `base`; tables merge, everything else
/// replaces.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

/// Builds the run configuration from `file`, `--set key=value` pairs and
/// typed flag overrides (applied last).
pub fn load(file: Option<&Path>, sets: &[String], flags: Vec<(&str, Value)>) -> Result<Loaded> {
    let mut user = match file {
        Some(p) => read_file(p)?,
        None => Value::Object(Map::new()),
    };
    for s in sets {
        let Some((k, v)) = s.split_once('=') else {
            bail!("--set expects key=value, got {s:?}");
        };
        set_path(&mut user, k.trim(), parse_value(v.trim()));
    }
    for (k, v) in flags {
        set_path(&mut user, k, v);
    }
    let model = match lookup(&user, "train.model") {
        Some(m) => serde_json::from_value(m.clone()).context("train.model")?,
        None => ModelKind::Evrn,
    };
    let mut merged = serde_json::to_value(RunConfig::defaults(model))?;
    merge(&mut merged, user.clone());
    let config: RunConfig = serde_json::from_value(merged).context("invalid configuration")?;
    Ok(Loaded { config, user })
}

/// Collects `Some` flag values under their config keys.
#[derive(Default)]
pub struct Overrides(Vec<(&'static str, Value)>);

impl Overrides {
    pub fn add<T: Serialize>(&mut self, key: &'static str, v: Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.push((key, serde_json::to_value(v).expect("flag serializes")));
        }
        self
    }

    pub fn flag(&mut self, key: &'static str, on: bool) -> &mut Self {
        if on {
            self.0.push((key, Value::Bool(true)));
        }
        self
    }

    pub fn into_vec(self) -> Vec<(&'static str, Value)> {
        self.0
    }
}
