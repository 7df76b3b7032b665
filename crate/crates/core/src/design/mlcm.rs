//! Multi-label confusion matrix with a "no predicted label" (NPL) column and a
//! "no true label" (NTL) row.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

pub const NPL: &str = "NPL";
pub const NTL: &str = "NTL";

#[derive(Debug, Error, PartialEq)]
pub enum MlcmError {
    #[error("label `{0}` is not among the classes")]
    UnknownLabel(String),
    #[error("duplicate class `{0}`")]
    DuplicateClass(String),
    #[error("count grid must be {expected}x{expected}, got {rows}x{cols}")]
    Shape { expected: usize, rows: usize, cols: usize },
    #[error("sample csv line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// One annotated sample: the true label set and the predicted one.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sample {
    pub id: String,
    pub truth: BTreeSet<String>,
    pub predicted: BTreeSet<String>,
}

impl Sample {
    pub fn new<'a>(truth: impl IntoIterator<Item = &'a str>, predicted: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            id: String::new(),
            truth: truth.into_iter().map(String::from).collect(),
            predicted: predicted.into_iter().map(String::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MlcmMatrix {
    pub classes: Vec<String>,
    /// `(C+1)×(C+1)`: rows are true classes then NTL, columns are predicted
    /// classes then NPL.
    pub counts: Vec<Vec<u64>>,
}

impl MlcmMatrix {
    pub fn zeros(classes: Vec<String>) -> Result<Self, MlcmError> {
        let mut seen = BTreeSet::new();
        for c in &classes {
            if !seen.insert(c) {
                return Err(MlcmError::DuplicateClass(c.clone()));
            }
        }
        let n = classes.len() + 1;
        Ok(Self {
            classes,
            counts: vec![vec![0; n]; n],
        })
    }

    /// Wrap an existing count grid, e.g. a published table.
    pub fn from_counts(classes: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, MlcmError> {
        let expected = classes.len() + 1;
        let cols = counts.iter().map(Vec::len).find(|&l| l != expected).unwrap_or(expected);
        if counts.len() != expected || cols != expected {
            return Err(MlcmError::Shape {
                expected,
                rows: counts.len(),
                cols,
            });
        }
        let mut m = Self::zeros(classes)?;
        m.counts = counts;
        Ok(m)
    }

    /// Index of NTL (row) and NPL (column).
    pub fn margin(&self) -> usize {
        self.classes.len()
    }

    fn index(&self, label: &str) -> Result<usize, MlcmError> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| MlcmError::UnknownLabel(label.to_string()))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Add one sample's allocations.
    ///
    /// Matched labels land on the diagonal. Each unmatched true label goes to
    /// every unmatched predicted label, or to NPL when there is none. Unmatched
    /// predictions with no unmatched true label go to the NTL row.
    pub fn add(&mut self, sample: &Sample) -> Result<(), MlcmError> {
        let truth: Vec<usize> = sample.truth.iter().map(|l| self.index(l)).collect::<Result<_, _>>()?;
        let pred: Vec<usize> = sample.predicted.iter().map(|l| self.index(l)).collect::<Result<_, _>>()?;
        let missed: Vec<usize> = truth.iter().copied().filter(|t| !pred.contains(t)).collect();
        let spurious: Vec<usize> = pred.iter().copied().filter(|p| !truth.contains(p)).collect();
        let m = self.margin();

        for &t in truth.iter().filter(|t| pred.contains(t)) {
            self.counts[t][t] += 1;
        }
        for &t in &missed {
            if spurious.is_empty() {
                self.counts[t][m] += 1;
            } else {
                for &p in &spurious {
                    self.counts[t][p] += 1;
                }
            }
        }
        if missed.is_empty() {
            for &p in &spurious {
                self.counts[m][p] += 1;
            }
        }
        Ok(())
    }
}

pub fn mlcm_build(samples: &[Sample], classes: &[String]) -> Result<MlcmMatrix, MlcmError> {
    let mut m = MlcmMatrix::zeros(classes.to_vec())?;
    for s in samples {
        m.add(s)?;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub classes: Vec<String>,
    /// Percent; `None` when the column sum is zero.
    pub precision: Vec<Option<f64>>,
    /// Percent; `None` when the row sum is zero.
    pub recall: Vec<Option<f64>>,
}

impl ClassMetrics {
    pub fn precision_rounded(&self) -> Vec<Option<u32>> {
        self.precision.iter().map(|p| p.map(|v| v.round() as u32)).collect()
    }

    pub fn recall_rounded(&self) -> Vec<Option<u32>> {
        self.recall.iter().map(|p| p.map(|v| v.round() as u32)).collect()
    }
}

/// Precision is column based (NTL row included), recall row based (NPL column included).
pub fn mlcm_metrics(m: &MlcmMatrix) -> ClassMetrics {
    let c = m.classes.len();
    let pct = |num: u64, den: u64| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    let precision = (0..c)
        .map(|j| pct(m.counts[j][j], (0..=c).map(|i| m.counts[i][j]).sum()))
        .collect();
    let recall = (0..c)
        .map(|i| pct(m.counts[i][i], m.counts[i].iter().sum()))
        .collect();
    ClassMetrics {
        classes: m.classes.clone(),
        precision,
        recall,
    }
}

/// Parse `sample_id,true_labels,predicted_labels` rows, labels `;`-separated.
/// A header row starting with `sample_id` is skipped.
pub fn parse_samples_csv(text: &str) -> Result<Vec<Sample>, MlcmError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| MlcmError::Csv { line, message: e.to_string() })?;
        if i == 0 && rec.get(0).map(str::trim) == Some("sample_id") {
            continue;
        }
        if rec.len() != 3 {
            return Err(MlcmError::Csv {
                line,
                message: format!("expected 3 fields, got {}", rec.len()),
            });
        }
        let labels = |s: &str| -> BTreeSet<String> {
            s.split(';').map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
        };
        out.push(Sample {
            id: rec[0].trim().to_string(),
            truth: labels(&rec[1]),
            predicted: labels(&rec[2]),
        });
    }
    Ok(out)
}

/// Classes in order of first appearance, true labels before predicted ones.
pub fn classes_in_order(samples: &[Sample]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in samples {
        for l in s.truth.iter().chain(&s.predicted) {
            if !out.contains(l) {
                out.push(l.clone());
            }
        }
    }
    out
}

impl MlcmMatrix {
    pub fn to_text(&self, metrics: &ClassMetrics) -> String {
        let width = self.classes.iter().map(String::len).max().unwrap_or(3).max(14);
        let mut out = format!("{:<width$}", "true \\ pred");
        for c in self.classes.iter().map(String::as_str).chain([NPL]) {
            out.push_str(&format!(" {c:>6}"));
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            let name = self.classes.get(i).map_or(NTL, String::as_str);
            out.push_str(&format!("{name:<width$}"));
            for v in row {
                out.push_str(&format!(" {v:>6}"));
            }
            out.push('\n');
        }
        for (name, values) in [("Precision (%)", metrics.precision_rounded()), ("Recall (%)", metrics.recall_rounded())] {
            out.push_str(&format!("{name:<width$}"));
            for v in values {
                match v {
                    Some(v) => out.push_str(&format!(" {v:>6}")),
                    None => out.push_str(&format!(" {:>6}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> Vec<String> {
        vec!["A".into(), "B".into()]
    }

    #[test]
    fn construction_rules() {
        let m = mlcm_build(&[Sample::new(["A"], ["A"])], &classes()).unwrap();
        assert_eq!(m.counts[0][0], 1);
        let m = mlcm_build(&[Sample::new(["A"], [])], &classes()).unwrap();
        assert_eq!(m.counts[0][2], 1);
        let m = mlcm_build(&[Sample::new([], ["B"])], &classes()).unwrap();
        assert_eq!(m.counts[2][1], 1);
        let m = mlcm_build(&[Sample::new(["A"], ["B"])], &classes()).unwrap();
        assert_eq!(m.counts[0][1], 1);
        assert_eq!(m.total(), 1);
    }

    #[test]
    fn unknown_label() {
        assert_eq!(
            mlcm_build(&[Sample::new(["Z"], [])], &classes()),
            Err(MlcmError::UnknownLabel("Z".into()))
        );
    }

    #[test]
    fn perfect_predictor() {
        let samples = [Sample::new(["A"], ["A"]), Sample::new(["B"], ["B"]), Sample::new(["A", "B"], ["A", "B"])];
        let met = mlcm_metrics(&mlcm_build(&samples, &classes()).unwrap());
        assert_eq!(met.precision_rounded(), vec![Some(100), Some(100)]);
        assert_eq!(met.recall_rounded(), vec![Some(100), Some(100)]);
    }

    #[test]
    fn empty_sums_give_absent_metrics() {
        let met = mlcm_metrics(&MlcmMatrix::zeros(classes()).unwrap());
        assert_eq!(met.precision, vec![None, None]);
    }

    #[test]
    fn shape_checked() {
        assert!(MlcmMatrix::from_counts(classes(), vec![vec![0; 3]; 2]).is_err());
        assert!(MlcmMatrix::from_counts(classes(), vec![vec![0; 3]; 3]).is_ok());
    }

    #[test]
    fn csv_samples() {
        let text = "sample_id,true_labels,predicted_labels\np1,A;B,A\np2,,B\n";
        let s = parse_samples_csv(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].truth.len(), 2);
        assert!(s[1].truth.is_empty());
        assert_eq!(classes_in_order(&s), vec!["A", "B"]);
        assert!(parse_samples_csv("p1,A\n").is_err());
    }
}
