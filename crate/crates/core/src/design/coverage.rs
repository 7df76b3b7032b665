use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::config::{Dimension, SuiteConfig};

#[derive(Debug, Error, PartialEq)]
pub enum CoverageError {
    #[error("benchmark `{0}` has a weight but no taxonomy tags")]
    MissingTags(String),
    #[error("no enabled benchmark carries weight")]
    NoWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionCoverage {
    /// Weighted share of the suite carrying each label.
    pub proportions: BTreeMap<String, f64>,
    /// L1 distance to the targets; absent when the suite declares none.
    pub deviation: Option<f64>,
    /// Target for every label that has one.
    pub targets: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub dimensions: BTreeMap<Dimension, DimensionCoverage>,
    pub total_weight: f64,
}

/// Weighted proportion of enabled benchmarks tagged with each label, per
/// dimension, compared to the suite's targets.
pub fn coverage_proportions(cfg: &SuiteConfig) -> Result<CoverageReport, CoverageError> {
    let benches: Vec<_> = cfg.enabled().filter(|b| b.weight > 0.0).collect();
    if let Some(b) = benches.iter().find(|b| b.tags.is_none()) {
        return Err(CoverageError::MissingTags(b.name.clone()));
    }
    let total_weight: f64 = benches.iter().map(|b| b.weight).sum();
    if total_weight <= 0.0 {
        return Err(CoverageError::NoWeight);
    }

    let mut dimensions = BTreeMap::new();
    for dim in Dimension::ALL {
        let mut weights: BTreeMap<String, f64> = BTreeMap::new();
        for b in &benches {
            let tags = b.tags.as_ref().expect("checked above");
            for label in tags.labels(dim) {
                *weights.entry(label.to_string()).or_default() += b.weight;
            }
        }
        let proportions: BTreeMap<String, f64> = weights
            .into_iter()
            .map(|(k, w)| (k, w / total_weight))
            .collect();
        let targets = cfg
            .targets
            .as_ref()
            .and_then(|t| t.get(&dim))
            .cloned()
            .unwrap_or_default();
        let deviation = (!targets.is_empty()).then(|| l1_distance(&proportions, &targets));
        dimensions.insert(
            dim,
            DimensionCoverage {
                proportions,
                deviation,
                targets,
            },
        );
    }
    Ok(CoverageReport {
        dimensions,
        total_weight,
    })
}

/// Σ |a_c − b_c| over the union of labels, missing entries counting as 0.
fn l1_distance(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let mut sum = 0.0;
    for (k, v) in a {
        sum += (v - b.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, v) in b {
        if !a.contains_key(k) {
            sum += v.abs();
        }
    }
    sum
}

impl CoverageReport {
    pub fn to_text(&self) -> String {
        let mut out = format!("total weight: {}\n", self.total_weight);
        for (dim, cov) in &self.dimensions {
            out.push_str(&format!("\n[{dim}]"));
            if let Some(d) = cov.deviation {
                out.push_str(&format!("  deviation {d:.3}"));
            }
            out.push('\n');
            let mut labels: Vec<&String> = cov.proportions.keys().collect();
            labels.extend(cov.targets.keys().filter(|k| !cov.proportions.contains_key(*k)));
            for label in labels {
                let p = cov.proportions.get(label).copied().unwrap_or(0.0);
                match cov.targets.get(label) {
                    Some(t) => out.push_str(&format!("  {label:<24} {p:>6.3}  target {t:.3}\n")),
                    None => out.push_str(&format!("  {label:<24} {p:>6.3}\n")),
                }
            }
        }
        out
    }
}
