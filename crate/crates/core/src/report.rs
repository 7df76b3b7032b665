//! Result tables: per-benchmark performance, ratios against a baseline system
//! and the global score, as markdown text, CSV or JSON.


use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{ratio_to_baseline, suite_score, BenchResult};

pub const GLOBAL_ROW: &str = "Global Score";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no systems to report")]
    Empty,
    #[error("baseline `{0}` is not among the reported systems")]
    UnknownBaseline(String),
    #[error("systems come from different suites (`{0}` vs `{1}`)")]
    MixedSuites(String, String),
    #[error("duplicate system name `{0}`")]
    DuplicateSystem(String),
    #[error("malformed report csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for ReportError {
    fn from(e: csv::Error) -> Self {
        ReportError::Csv(e.to_string())
    }
}

/// Folded results of one system (one run directory).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemResults {
    pub name: String,
    pub suite_hash: String,
    pub results: Vec<BenchResult>,
    pub devices: Vec<String>,
    pub source: Option<String>,
}

impl SystemResults {
    pub fn new(name: impl Into<String>, suite_hash: impl Into<String>, results: Vec<BenchResult>) -> Self {
        Self {
            name: name.into(),
            suite_hash: suite_hash.into(),
            results,
            devices: Vec::new(),
            source: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub system: String,
    /// `None` when the benchmark failed or did not run on this system.
    pub perf: Option<f64>,
    pub success_rate: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub bench: String,
    pub weight: f64,
    pub results: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalCell {
    pub system: String,
    pub score: Option<f64>,
    pub total_weight: f64,
    pub ratio: Option<f64>,
}

/// Everything that appears in the tables. CSV and JSON carry the same table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub baseline: Option<String>,
    pub systems: Vec<String>,
    pub rows: Vec<Row>,
    pub global: Vec<GlobalCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceMeta {
    pub system: String,
    pub devices: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub suite_hash: String,
    pub generated: String,
    pub sources: Vec<SourceMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub meta: ReportMeta,
    pub table: ReportTable,
}

/// Build the report. The baseline system, when given, becomes the first column.
pub fn render_report(systems: &[SystemResults], baseline: Option<&str>) -> Result<ReportDocument, ReportError> {
    let first = systems.first().ok_or(ReportError::Empty)?;
    for s in systems {
        if s.suite_hash != first.suite_hash {
            return Err(ReportError::MixedSuites(first.suite_hash.clone(), s.suite_hash.clone()));
        }
        if systems.iter().filter(|o| o.name == s.name).count() > 1 {
            return Err(ReportError::DuplicateSystem(s.name.clone()));
        }
    }
    let mut ordered: Vec<&SystemResults> = systems.iter().collect();
    if let Some(name) = baseline {
        let pos = ordered
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| ReportError::UnknownBaseline(name.to_string()))?;
        let b = ordered.remove(pos);
        ordered.insert(0, b);
    }
    let base = baseline.map(|_| ordered[0]);

    // suite order, taken from the first system that has each bench
    let mut benches: Vec<(String, f64)> = Vec::new();
    for s in &ordered {
        for r in &s.results {
            if !benches.iter().any(|(n, _)| n == &r.bench) {
                benches.push((r.bench.clone(), r.weight));
            }
        }
    }

    let rows = benches
        .iter()
        .map(|(bench, weight)| {
            let base_result = base.and_then(|b| b.results.iter().find(|r| &r.bench == bench));
            let results = ordered
                .iter()
                .map(|s| {
                    let r = s.results.iter().find(|r| &r.bench == bench);
                    let ratio = match (r, base_result) {
                        (Some(c), Some(b)) if base.is_some_and(|b| b.name != s.name) => {
                            ratio_to_baseline(c, b).ok().and_then(|row| row.ratio)
                        }
                        _ => None,
                    };
                    Cell {
                        system: s.name.clone(),
                        perf: r.filter(|r| !r.failed()).map(|r| r.perf),
                        success_rate: r.map_or(0.0, |r| r.success_rate),
                        ratio,
                    }
                })
                .collect();
            Row {
                bench: bench.clone(),
                weight: *weight,
                results,
            }
        })
        .collect();

    let scores: Vec<(Option<f64>, f64)> = ordered
        .iter()
        .map(|s| match suite_score(&s.results) {
            Ok(sc) => (Some(sc.score), sc.total_weight),
            Err(_) => (None, 0.0),
        })
        .collect();
    let base_score = base.and_then(|_| scores[0].0);
    let global = ordered
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(i, (s, &(score, total_weight)))| GlobalCell {
            system: s.name.clone(),
            score,
            total_weight,
            ratio: match (score, base_score) {
                (Some(c), Some(b)) if i > 0 && b > 0.0 => Some(c / b),
                _ => None,
            },
        })
        .collect();

    Ok(ReportDocument {
        meta: ReportMeta {
            suite_hash: first.suite_hash.clone(),
            generated: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            sources: ordered
                .iter()
                .map(|s| SourceMeta {
                    system: s.name.clone(),
                    devices: s.devices.clone(),
                    run_dir: s.source.clone(),
                })
                .collect(),
        },
        table: ReportTable {
            baseline: baseline.map(str::to_string),
            systems: ordered.iter().map(|s| s.name.clone()).collect(),
            rows,
            global,
        },
    })
}

/// Compact magnitude formatting: `264.7`, `16.8K`, `32.2M`.
pub fn humanize(v: f64) -> String {
    let a = v.abs();
    if a >= 999.95e3 {
        format!("{:.1}M", v / 1e6)
    } else if a >= 999.95 {
        format!("{:.1}K", v / 1e3)
    } else {
        format!("{v:.1}")
    }
}

/// Inverse of [`humanize`] (up to its rounding).
pub fn parse_humanized(s: &str) -> Option<f64> {
    let s = s.trim();
    let (num, scale) = match s.as_bytes().last()? {
        b'K' => (&s[..s.len() - 1], 1e3),
        b'M' => (&s[..s.len() - 1], 1e6),
        _ => (s, 1.0),
    };
    num.parse::<f64>().ok().map(|v| v * scale)
}

impl ReportDocument {
    /// Markdown table: ratio columns (candidates vs baseline) then one
    /// performance column per system, closed by the global score row.
    pub fn to_text(&self) -> String {
        let t = &self.table;
        let candidates: Vec<&str> = match &t.baseline {
            Some(_) => t.systems[1..].iter().map(String::as_str).collect(),
            None => Vec::new(),
        };
        let mut header = vec!["bench".to_string()];
        if let Some(b) = &t.baseline {
            header.extend(candidates.iter().map(|c| format!("{c}/{b}")));
        }
        header.extend(t.systems.iter().cloned());

        let mut out = String::new();
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        out.push_str(&line(&header));
        let mut sep = vec!["---".to_string()];
        sep.extend(std::iter::repeat_n("---:".to_string(), header.len() - 1));
        out.push_str(&line(&sep));

        let ratio = |r: Option<f64>| r.map(|v| format!("{v:.2}")).unwrap_or_default();
        let skip = usize::from(t.baseline.is_some());
        for row in &t.rows {
            let mut cells = vec![row.bench.clone()];
            if t.baseline.is_some() {
                cells.extend(row.results[skip..].iter().map(|c| ratio(c.ratio)));
            }
            cells.extend(row.results.iter().map(|c| c.perf.map(humanize).unwrap_or_default()));
            out.push_str(&line(&cells));
        }
        let mut cells = vec![GLOBAL_ROW.to_string()];
        if t.baseline.is_some() {
            cells.extend(t.global[skip..].iter().map(|g| ratio(g.ratio)));
        }
        cells.extend(
            t.global
                .iter()
                .map(|g| g.score.map(|s| format!("{s:.1}")).unwrap_or_default()),
        );
        out.push_str(&line(&cells));
        out
    }

    /// Full-precision CSV. A leading `system` column appears when more than
    /// one system is reported.
    pub fn to_csv(&self) -> String {
        let t = &self.table;
        let multi = t.systems.len() > 1;
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = Vec::new();
        if multi {
            header.push("system".into());
        }
        header.extend(["bench", "weight", "perf", "success_rate"].map(String::from));
        if let Some(b) = &t.baseline {
            header.push(format!("ratio_vs_{b}"));
        }
        w.write_record(&header).expect("in-memory csv");

        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, system) in t.systems.iter().enumerate() {
            for row in &t.rows {
                let c = &row.results[i];
                let mut rec = Vec::new();
                if multi {
                    rec.push(system.clone());
                }
                rec.extend([row.bench.clone(), row.weight.to_string(), num(c.perf), c.success_rate.to_string()]);
                if t.baseline.is_some() {
                    rec.push(num(c.ratio));
                }
                w.write_record(&rec).expect("in-memory csv");
            }
            let g = &t.global[i];
            let mut rec = Vec::new();
            if multi {
                rec.push(system.clone());
            }
            rec.extend([GLOBAL_ROW.to_string(), g.total_weight.to_string(), num(g.score), String::new()]);
            if t.baseline.is_some() {
                rec.push(num(g.ratio));
            }
            w.write_record(&rec).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl ReportTable {
    /// Rebuild the table from [`ReportDocument::to_csv`] output. Single-system
    /// CSV carries no system column, so its name is supplied by the caller.
    pub fn from_csv(text: &str, single_system: &str) -> Result<Self, ReportError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
        let multi = header.first().map(String::as_str) == Some("system");
        let off = usize::from(multi);
        let baseline = header
            .get(off + 4)
            .map(|h| {
                h.strip_prefix("ratio_vs_")
                    .map(str::to_string)
                    .ok_or_else(|| ReportError::Csv(format!("unexpected column `{h}`")))
            })
            .transpose()?;

        let bad = |m: &str| ReportError::Csv(m.to_string());
        let num = |s: &str| -> Result<Option<f64>, ReportError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(&format!("not a number: `{s}`")))
            }
        };

        let mut table = ReportTable {
            baseline,
            systems: Vec::new(),
            rows: Vec::new(),
            global: Vec::new(),
        };
        let mut current = String::new();
        let mut row_idx = 0;
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i + off).unwrap_or("");
            let system = if multi { rec.get(0).unwrap_or("") } else { single_system }.to_string();
            if table.systems.is_empty() || (multi && system != current) {
                if !table.systems.is_empty() && !multi {
                    return Err(bad("single-system csv with repeated sections"));
                }
                current = system.clone();
                table.systems.push(system);
                row_idx = 0;
            }
            let ratio = if table.baseline.is_some() { num(field(4))? } else { None };
            if field(0) == GLOBAL_ROW {
                table.global.push(GlobalCell {
                    system: current.clone(),
                    score: num(field(2))?,
                    total_weight: num(field(1))?.ok_or_else(|| bad("missing total weight"))?,
                    ratio,
                });
                continue;
            }
            let cell = Cell {
                system: current.clone(),
                perf: num(field(2))?,
                success_rate: num(field(3))?.ok_or_else(|| bad("missing success rate"))?,
                ratio,
            };
            if table.systems.len() == 1 {
                table.rows.push(Row {
                    bench: field(0).to_string(),
                    weight: num(field(1))?.ok_or_else(|| bad("missing weight"))?,
                    results: vec![cell],
                });
            } else {
                let row = table
                    .rows
                    .get_mut(row_idx)
                    .filter(|r| r.bench == field(0))
                    .ok_or_else(|| bad("systems list different benchmarks"))?;
                row.results.push(cell);
            }
            row_idx += 1;
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(name: &str, perfs: &[(&str, f64)]) -> SystemResults {
        SystemResults::new(
            name,
            "h",
            perfs
                .iter()
                .map(|&(b, p)| BenchResult::known(b, 1.0, p, if p > 0.0 { 1.0 } else { 0.0 }))
                .collect(),
        )
    }

    #[test]
    fn humanize_matches_table_style() {
        assert_eq!(humanize(264.7), "264.7");
        assert_eq!(humanize(680.0), "680.0");
        assert_eq!(humanize(16_800.0), "16.8K");
        assert_eq!(humanize(32_200_000.0), "32.2M");
        assert_eq!(humanize(727_500.0), "727.5K");
        assert_eq!(humanize(999.96), "1.0K");
        assert_eq!(humanize(999_960.0), "1.0M");
        assert_eq!(parse_humanized("16.8K"), Some(16_800.0));
    }

    #[test]
    fn baseline_row_layout() {
        let doc = render_report(
            &[sys("A100", &[("reformer", 62.3)]), sys("H100", &[("reformer", 103.7)])],
            Some("A100"),
        )
        .unwrap();
        let text = doc.to_text();
        assert!(text.contains("| reformer | 1.66 | 62.3 | 103.7 |"), "{text}");
        assert!(text.lines().last().unwrap().starts_with("| Global Score | "));
    }

    #[test]
    fn failed_cells_are_blank() {
        let doc = render_report(
            &[sys("A", &[("a", 10.0), ("b", 20.0)]), sys("B", &[("a", 0.0), ("b", 40.0)])],
            Some("A"),
        )
        .unwrap();
        let text = doc.to_text();
        assert!(text.contains("| a |  | 10.0 |  |"), "{text}");
        assert!(doc.table.global[1].score.is_some());
    }

    #[test]
    fn single_system_has_no_ratio_columns() {
        let doc = render_report(&[sys("local", &[("a", 1500.0)])], None).unwrap();
        let text = doc.to_text();
        assert!(text.starts_with("| bench | local |"));
        assert!(text.contains("| a | 1.5K |"));
        assert_eq!(doc.to_csv().lines().next().unwrap(), "bench,weight,perf,success_rate");
    }

    #[test]
    fn errors() {
        assert!(matches!(render_report(&[], None), Err(ReportError::Empty)));
        assert!(matches!(
            render_report(&[sys("A", &[("a", 1.0)])], Some("Z")),
            Err(ReportError::UnknownBaseline(_))
        ));
        let mut other = sys("B", &[("a", 1.0)]);
        other.suite_hash = "other".into();
        assert!(matches!(
            render_report(&[sys("A", &[("a", 1.0)]), other], None),
            Err(ReportError::MixedSuites(..))
        ));
    }

    #[test]
    fn csv_header_and_roundtrip() {
        let doc = render_report(
            &[sys("H100", &[("a", 103.7), ("b", 0.0)]), sys("A100", &[("a", 62.3), ("b", 5.0)])],
            Some("A100"),
        )
        .unwrap();
        let csv = doc.to_csv();
        assert_eq!(csv.lines().next().unwrap(), "system,bench,weight,perf,success_rate,ratio_vs_A100");
        assert_eq!(ReportTable::from_csv(&csv, "").unwrap(), doc.table);
    }
}
