//! Suite definitions and the YAML suite file.
//!
//! A suite file has four top-level keys: `suite` (name), `defaults`,
//! `targets` (optional coverage targets) and `benchmarks` (ordered list).
//! Unknown keys anywhere in the document are rejected.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::template;

pub const DEFAULT_OBS_MIN: u32 = 30;
pub const DEFAULT_OBS_MAX: u32 = 60;
pub const DEFAULT_TIMEOUT_S: f64 = 300.0;
pub const DEFAULT_UNIT_OF_WORK: &str = "items";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid suite document at line {line}, column {column}: {message}")]
    Document {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid suite document: {0}")]
    Unlocated(String),
    #[error("benchmark `{bench}`: unknown scale mode `{value}` (expected single-device, node-devices or multi-node)")]
    UnknownScale { bench: String, value: String },
    #[error("duplicate benchmark name `{0}`")]
    DuplicateName(String),
    #[error("benchmark `{0}`: missing run_cmd")]
    MissingRunCmd(String),
    #[error("suite must contain at least one benchmark")]
    NoBenchmarks,
    #[error("invalid selector `{0}`")]
    BadSelector(String),
    #[error("selector `{0}` matches no enabled benchmark")]
    NoMatch(String),
}

impl From<serde_yaml::Error> for ConfigError {
    fn from(err: serde_yaml::Error) -> Self {
        match err.location() {
            Some(loc) => ConfigError::Document {
                line: loc.line(),
                column: loc.column(),
                message: err.to_string(),
            },
            None => ConfigError::Unlocated(err.to_string()),
        }
    }
}

/// How a benchmark is spread over the device pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// One independent process per device.
    SingleDevice,
    /// One gang over all devices of a node.
    NodeDevices,
    /// One gang spanning every node.
    MultiNode,
}

impl Scale {
    pub fn as_str(self) -> &'static str {
        match self {
            Scale::SingleDevice => "single-device",
            Scale::NodeDevices => "node-devices",
            Scale::MultiNode => "multi-node",
        }
    }

    pub fn is_gang(self) -> bool {
        !matches!(self, Scale::SingleDevice)
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single-device" => Ok(Scale::SingleDevice),
            "node-devices" => Ok(Scale::NodeDevices),
            "multi-node" => Ok(Scale::MultiNode),
            other => Err(other.to_string()),
        }
    }
}

/// The five design dimensions a benchmark is classified along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Domains,
    Architectures,
    ModelSizes,
    Parallelism,
    Libraries,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Domains,
        Dimension::Architectures,
        Dimension::ModelSizes,
        Dimension::Parallelism,
        Dimension::Libraries,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Domains => "domains",
            Dimension::Architectures => "architectures",
            Dimension::ModelSizes => "model_sizes",
            Dimension::Parallelism => "parallelism",
            Dimension::Libraries => "libraries",
        }
    }

    /// Model sizes are the only mutually exclusive dimension.
    pub fn is_exclusive(self) -> bool {
        matches!(self, Dimension::ModelSizes)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyTags {
    #[serde(default)]
    pub domains: BTreeSet<String>,
    #[serde(default)]
    pub architectures: BTreeSet<String>,
    pub model_size: String,
    #[serde(default)]
    pub parallelism: BTreeSet<String>,
    #[serde(default)]
    pub libraries: BTreeSet<String>,
}

impl TaxonomyTags {
    /// Labels carried in one dimension.
    pub fn labels(&self, dim: Dimension) -> Vec<&str> {
        match dim {
            Dimension::Domains => self.domains.iter().map(String::as_str).collect(),
            Dimension::Architectures => self.architectures.iter().map(String::as_str).collect(),
            Dimension::ModelSizes => vec![self.model_size.as_str()],
            Dimension::Parallelism => self.parallelism.iter().map(String::as_str).collect(),
            Dimension::Libraries => self.libraries.iter().map(String::as_str).collect(),
        }
    }
}

/// Target weighted proportion per column, per dimension.
pub type CoverageTargets = BTreeMap<Dimension, BTreeMap<String, f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkDefaults {
    #[serde(default = "default_obs_min")]
    pub obs_min: u32,
    #[serde(default = "default_obs_max")]
    pub obs_max: u32,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_unit")]
    pub unit_of_work: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, String>,
}

fn default_obs_min() -> u32 {
    DEFAULT_OBS_MIN
}
fn default_obs_max() -> u32 {
    DEFAULT_OBS_MAX
}
fn default_timeout() -> f64 {
    DEFAULT_TIMEOUT_S
}
fn default_unit() -> String {
    DEFAULT_UNIT_OF_WORK.to_string()
}

impl Default for BenchmarkDefaults {
    fn default() -> Self {
        Self {
            obs_min: DEFAULT_OBS_MIN,
            obs_max: DEFAULT_OBS_MAX,
            timeout_s: DEFAULT_TIMEOUT_S,
            unit_of_work: default_unit(),
            env: BTreeMap::new(),
        }
    }
}

/// One fully resolved suite entry.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub name: String,
    pub weight: f64,
    pub enabled: bool,
    pub scale: Scale,
    pub install_cmd: Option<String>,
    pub prepare_cmd: Option<String>,
    pub run_cmd: String,
    pub env: BTreeMap<String, String>,
    pub unit_of_work: String,
    pub obs_min: u32,
    pub obs_max: u32,
    pub timeout_s: f64,
    pub tags: Option<TaxonomyTags>,
}

impl BenchmarkSpec {
    /// A minimal enabled single-device spec; handy for tests and programmatic suites.
    pub fn new(name: impl Into<String>, run_cmd: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            weight: 1.0,
            enabled: true,
            scale: Scale::SingleDevice,
            install_cmd: None,
            prepare_cmd: None,
            run_cmd: run_cmd.into(),
            env: BTreeMap::new(),
            unit_of_work: default_unit(),
            obs_min: DEFAULT_OBS_MIN,
            obs_max: DEFAULT_OBS_MAX,
            timeout_s: DEFAULT_TIMEOUT_S,
            tags: None,
        }
    }

    /// Whether the benchmark enters the global score.
    pub fn is_scored(&self) -> bool {
        self.enabled && self.weight > 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub suite_name: String,
    pub defaults: BenchmarkDefaults,
    pub targets: Option<CoverageTargets>,
    pub benchmarks: Vec<BenchmarkSpec>,
}

impl SuiteConfig {
    pub fn get(&self, name: &str) -> Option<&BenchmarkSpec> {
        self.benchmarks.iter().find(|b| b.name == name)
    }

    pub fn enabled(&self) -> impl Iterator<Item = &BenchmarkSpec> {
        self.benchmarks.iter().filter(|b| b.enabled)
    }

    /// SHA-256 of the rendered document; identifies a suite across run directories.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(render_suite(self).as_bytes()))
    }
}

// On-disk shape. Everything optional so defaults can be applied afterwards.

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteDoc {
    suite: String,
    #[serde(default)]
    defaults: BenchmarkDefaults,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    targets: Option<CoverageTargets>,
    #[serde(default)]
    benchmarks: Vec<BenchDoc>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchDoc {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    enabled: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    install_cmd: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prepare_cmd: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run_cmd: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    env: Option<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    unit_of_work: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obs_min: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    obs_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    timeout_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tags: Option<TaxonomyTags>,
}

/// Parse a suite document and apply defaults to absent per-benchmark fields.
pub fn parse_suite(text: &str) -> Result<SuiteConfig, ConfigError> {
    let doc: SuiteDoc = serde_yaml::from_str(text)?;
    if doc.benchmarks.is_empty() {
        return Err(ConfigError::NoBenchmarks);
    }

    let defaults = doc.defaults;
    let mut seen = BTreeSet::new();
    let mut benchmarks = Vec::with_capacity(doc.benchmarks.len());
    for raw in doc.benchmarks {
        if !seen.insert(raw.name.clone()) {
            return Err(ConfigError::DuplicateName(raw.name));
        }
        let scale = match raw.scale.as_deref() {
            None => Scale::SingleDevice,
            Some(s) => s.parse().map_err(|value| ConfigError::UnknownScale {
                bench: raw.name.clone(),
                value,
            })?,
        };
        let run_cmd = match raw.run_cmd {
            Some(cmd) if !cmd.trim().is_empty() => cmd,
            _ => return Err(ConfigError::MissingRunCmd(raw.name)),
        };
        // per-benchmark keys override suite-wide ones
        let mut env = defaults.env.clone();
        env.extend(raw.env.unwrap_or_default());

        benchmarks.push(BenchmarkSpec {
            weight: raw.weight.unwrap_or(1.0),
            enabled: raw.enabled.unwrap_or(true),
            scale,
            install_cmd: raw.install_cmd,
            prepare_cmd: raw.prepare_cmd,
            run_cmd,
            env,
            unit_of_work: raw
                .unit_of_work
                .unwrap_or_else(|| defaults.unit_of_work.clone()),
            obs_min: raw.obs_min.unwrap_or(defaults.obs_min),
            obs_max: raw.obs_max.unwrap_or(defaults.obs_max),
            timeout_s: raw.timeout_s.unwrap_or(defaults.timeout_s),
            tags: raw.tags,
            name: raw.name,
        });
    }

    Ok(SuiteConfig {
        suite_name: doc.suite,
        defaults,
        targets: doc.targets,
        benchmarks,
    })
}

/// Render a suite back to YAML. Every per-benchmark field is written explicitly,
/// so reparsing yields an equal [`SuiteConfig`].
pub fn render_suite(cfg: &SuiteConfig) -> String {
    let doc = SuiteDoc {
        suite: cfg.suite_name.clone(),
        defaults: cfg.defaults.clone(),
        targets: cfg.targets.clone(),
        benchmarks: cfg
            .benchmarks
            .iter()
            .map(|b| BenchDoc {
                name: b.name.clone(),
                weight: Some(b.weight),
                enabled: Some(b.enabled),
                scale: Some(b.scale.as_str().to_string()),
                install_cmd: b.install_cmd.clone(),
                prepare_cmd: b.prepare_cmd.clone(),
                run_cmd: Some(b.run_cmd.clone()),
                env: Some(b.env.clone()),
                unit_of_work: Some(b.unit_of_work.clone()),
                obs_min: Some(b.obs_min),
                obs_max: Some(b.obs_max),
                timeout_s: Some(b.timeout_s),
                tags: b.tags.clone(),
            })
            .collect(),
    };
    serde_yaml::to_string(&doc).expect("suite documents always serialize")
}

/// One broken invariant. `bench` is `None` for suite-level problems.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub bench: Option<String>,
    pub field: String,
    pub message: String,
}

impl Violation {
    fn bench(name: &str, field: &str, message: impl Into<String>) -> Self {
        Self {
            bench: Some(name.to_string()),
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn suite(field: &str, message: impl Into<String>) -> Self {
        Self {
            bench: None,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.bench {
            Some(b) => write!(f, "benchmark `{}`: {}: {}", b, self.field, self.message),
            None => write!(f, "suite: {}: {}", self.field, self.message),
        }
    }
}

/// Check every suite invariant. Violations are data; an empty list means valid.
pub fn validate_suite(cfg: &SuiteConfig) -> Vec<Violation> {
    let mut out = Vec::new();

    if cfg.benchmarks.is_empty() {
        out.push(Violation::suite("benchmarks", "at least one benchmark"));
    }
    let mut seen = BTreeSet::new();
    for b in &cfg.benchmarks {
        if !seen.insert(b.name.as_str()) {
            out.push(Violation::bench(&b.name, "name", "duplicate benchmark name"));
        }
        if !b.weight.is_finite() || b.weight < 0.0 {
            out.push(Violation::bench(
                &b.name,
                "weight",
                format!("weight must be >= 0, got {}", b.weight),
            ));
        }
        if b.obs_min == 0 {
            out.push(Violation::bench(&b.name, "obs_min", "obs_min must be positive"));
        }
        if b.obs_min > b.obs_max {
            out.push(Violation::bench(
                &b.name,
                "obs_min",
                format!("obs_min <= obs_max required ({} > {})", b.obs_min, b.obs_max),
            ));
        }
        if !(b.timeout_s.is_finite() && b.timeout_s > 0.0) {
            out.push(Violation::bench(&b.name, "timeout_s", "timeout must be positive"));
        }
        if b.run_cmd.trim().is_empty() {
            out.push(Violation::bench(&b.name, "run_cmd", "run_cmd must be non-empty"));
        }
        let commands = [
            ("install_cmd", b.install_cmd.as_deref()),
            ("prepare_cmd", b.prepare_cmd.as_deref()),
            ("run_cmd", Some(b.run_cmd.as_str())),
        ];
        for (field, cmd) in commands {
            for name in cmd.map(template::unknown_placeholders).unwrap_or_default() {
                out.push(Violation::bench(
                    &b.name,
                    field,
                    format!("unknown placeholder `{{{name}}}`"),
                ));
            }
        }
        if let Some(tags) = &b.tags {
            if tags.model_size.trim().is_empty() {
                out.push(Violation::bench(&b.name, "tags.model_size", "exactly one model size label"));
            }
        }
    }

    let total: f64 = cfg
        .enabled()
        .filter(|b| b.weight.is_finite() && b.weight > 0.0)
        .map(|b| b.weight)
        .sum();
    if !cfg.benchmarks.is_empty() && total <= 0.0 {
        out.push(Violation::suite(
            "weight",
            "total weight of enabled benchmarks must be > 0",
        ));
    }

    if let Some(targets) = &cfg.targets {
        for (dim, columns) in targets {
            for (col, &p) in columns {
                if !(0.0..=1.0).contains(&p) {
                    out.push(Violation::suite(
                        &format!("targets.{dim}.{col}"),
                        format!("proportion must lie in [0, 1], got {p}"),
                    ));
                }
            }
            if dim.is_exclusive() {
                let sum: f64 = columns.values().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    out.push(Violation::suite(
                        &format!("targets.{dim}"),
                        format!("exclusive dimension must sum to 1, got {sum}"),
                    ));
                }
            }
        }
    }

    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"
suite: demo
benchmarks:
  - name: reformer
    weight: 1
    scale: single-device
    run_cmd: "echo run"
"#;

    #[test]
    fn defaults_fill_absent_fields() {
        let cfg = parse_suite(ONE).unwrap();
        assert_eq!(cfg.benchmarks.len(), 1);
        let b = &cfg.benchmarks[0];
        assert!(b.enabled);
        assert_eq!((b.obs_min, b.obs_max), (30, 60));
        assert_eq!(b.timeout_s, 300.0);
        assert_eq!(b.scale, Scale::SingleDevice);
        assert!(validate_suite(&cfg).is_empty());
    }

    #[test]
    fn empty_benchmark_list_is_rejected() {
        let err = parse_suite("suite: x\nbenchmarks: []\n").unwrap_err();
        assert!(matches!(err, ConfigError::NoBenchmarks));
        assert!(err.to_string().contains("at least one benchmark"));
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let doc = "suite: x\nbenchmarks:\n  - {name: bert, run_cmd: a}\n  - {name: bert, run_cmd: b}\n";
        assert!(matches!(parse_suite(doc), Err(ConfigError::DuplicateName(n)) if n == "bert"));
    }

    #[test]
    fn unknown_scale_and_missing_run_cmd() {
        let doc = "suite: x\nbenchmarks:\n  - {name: a, run_cmd: a, scale: galaxy}\n";
        assert!(matches!(parse_suite(doc), Err(ConfigError::UnknownScale { value, .. }) if value == "galaxy"));
        let doc = "suite: x\nbenchmarks:\n  - {name: a}\n";
        assert!(matches!(parse_suite(doc), Err(ConfigError::MissingRunCmd(n)) if n == "a"));
    }

    #[test]
    fn syntax_errors_report_position() {
        let err = parse_suite("suite: x\nbenchmarks:\n  - name: [unclosed\n").unwrap_err();
        match err {
            ConfigError::Document { line, .. } => assert!(line >= 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let doc = "suite: x\nbenchmarks:\n  - {name: a, run_cmd: a, wieght: 2}\n";
        let err = parse_suite(doc).unwrap_err();
        assert!(err.to_string().contains("wieght"), "{err}");
        assert!(parse_suite("suite: x\nextra: 1\nbenchmarks: []\n").is_err());
    }

    #[test]
    fn per_benchmark_overrides_win() {
        let doc = r#"
suite: x
defaults: {obs_min: 5, obs_max: 10, env: {A: "1", B: "2"}}
benchmarks:
  - {name: a, run_cmd: a, obs_max: 20, env: {B: "3"}}
  - {name: b, run_cmd: b}
"#;
        let cfg = parse_suite(doc).unwrap();
        assert_eq!(cfg.benchmarks[0].obs_min, 5);
        assert_eq!(cfg.benchmarks[0].obs_max, 20);
        assert_eq!(cfg.benchmarks[0].env["B"], "3");
        assert_eq!(cfg.benchmarks[0].env["A"], "1");
        assert_eq!(cfg.benchmarks[1].obs_max, 10);
    }

    #[test]
    fn negative_weight_is_one_violation() {
        let mut cfg = parse_suite(ONE).unwrap();
        cfg.benchmarks.push(BenchmarkSpec {
            weight: -1.0,
            ..BenchmarkSpec::new("neg", "true")
        });
        let v = validate_suite(&cfg);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].bench.as_deref(), Some("neg"));
        assert_eq!(v[0].field, "weight");
    }

    #[test]
    fn obs_ordering_violation() {
        let mut cfg = parse_suite(ONE).unwrap();
        cfg.benchmarks[0].obs_min = 80;
        let v = validate_suite(&cfg);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("obs_min <= obs_max"));
    }

    #[test]
    fn zero_total_weight_and_bad_placeholder() {
        let mut cfg = parse_suite(ONE).unwrap();
        cfg.benchmarks[0].weight = 0.0;
        cfg.benchmarks[0].run_cmd = "run --gpu {gpu} --dev {device_id} ${HOME}".into();
        let v = validate_suite(&cfg);
        assert_eq!(v.len(), 2, "{v:?}");
        assert!(v.iter().any(|x| x.message.contains("{gpu}")));
        assert!(v.iter().any(|x| x.bench.is_none()));
    }

    #[test]
    fn exclusive_targets_must_sum_to_one() {
        let mut cfg = parse_suite(ONE).unwrap();
        let mut sizes = BTreeMap::new();
        sizes.insert("small".to_string(), 0.5);
        sizes.insert("large".to_string(), 0.4);
        let mut targets = CoverageTargets::new();
        targets.insert(Dimension::ModelSizes, sizes);
        cfg.targets = Some(targets);
        assert_eq!(validate_suite(&cfg).len(), 1);
    }

    #[test]
    fn render_then_parse_is_identity() {
        let doc = r#"
suite: demo
defaults: {obs_min: 10, timeout_s: 12.5}
targets:
  domains: {NLP: 0.4, CV: 0.6}
  model_sizes: {small: 1.0}
benchmarks:
  - name: a
    weight: 2
    scale: node-devices
    install_cmd: "true"
    run_cmd: "run {device_id}"
    tags: {domains: [NLP, CV], model_size: small, libraries: [torch]}
  - {name: b, enabled: false, run_cmd: b}
"#;
        let cfg = parse_suite(doc).unwrap();
        let again = parse_suite(&render_suite(&cfg)).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
    }
}
