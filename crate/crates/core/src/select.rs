//! Benchmark selection by name glob or taxonomy tag.
//!
//! A selector is a comma-separated list of terms; a benchmark is kept when
//! any term matches it. Terms:
//!
//! * `*`: everything
//! * `name=GLOB` or bare `GLOB`: benchmark name, `*` and `?` wildcards
//! * `domain=`, `arch=`, `size=`, `parallelism=`, `lib=`: taxonomy tags
//!   (case-insensitive, globs allowed; plural forms accepted)
//! * `scale=MODE`: scale mode

use crate::config::{ConfigError, Dimension, Scale, SuiteConfig, BenchmarkSpec};

#[derive(Debug, Clone, PartialEq)]
enum Term {
    All,
    Name(String),
    Tag(Dimension, String),
    Scale(Scale),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selector {
    source: String,
    terms: Vec<Term>,
}

impl Selector {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::BadSelector(text.to_string());
        let mut terms = Vec::new();
        for raw in text.split(',').map(str::trim) {
            if raw.is_empty() {
                return Err(bad());
            }
            let term = match raw.split_once('=') {
                None if raw == "*" => Term::All,
                None => Term::Name(raw.to_string()),
                Some((key, value)) => {
                    let value = value.trim();
                    if value.is_empty() {
                        return Err(bad());
                    }
                    match key.trim().to_ascii_lowercase().as_str() {
                        "name" => Term::Name(value.to_string()),
                        "domain" | "domains" => Term::Tag(Dimension::Domains, value.to_string()),
                        "arch" | "architecture" | "architectures" => {
                            Term::Tag(Dimension::Architectures, value.to_string())
                        }
                        "size" | "model_size" | "model_sizes" => {
                            Term::Tag(Dimension::ModelSizes, value.to_string())
                        }
                        "parallelism" => Term::Tag(Dimension::Parallelism, value.to_string()),
                        "lib" | "library" | "libraries" => {
                            Term::Tag(Dimension::Libraries, value.to_string())
                        }
                        "scale" => Term::Scale(value.parse().map_err(|_| bad())?),
                        _ => return Err(bad()),
                    }
                }
            };
            terms.push(term);
        }
        Ok(Self {
            source: text.to_string(),
            terms,
        })
    }

    pub fn matches(&self, bench: &BenchmarkSpec) -> bool {
        self.terms.iter().any(|t| match t {
            Term::All => true,
            Term::Name(pat) => glob_match(pat, &bench.name),
            Term::Scale(s) => bench.scale == *s,
            Term::Tag(dim, pat) => bench.tags.as_ref().is_some_and(|tags| {
                tags.labels(*dim).iter().any(|label| {
                    glob_match(&pat.to_lowercase(), &label.to_lowercase())
                })
            }),
        })
    }
}

/// Keep the enabled benchmarks matching `selector`, in suite order.
pub fn select_benchmarks(cfg: &SuiteConfig, selector: &Selector) -> Result<SuiteConfig, ConfigError> {
    let benchmarks: Vec<_> = cfg
        .benchmarks
        .iter()
        .filter(|b| b.enabled && selector.matches(b))
        .cloned()
        .collect();
    if benchmarks.is_empty() {
        return Err(ConfigError::NoMatch(selector.source.clone()));
    }
    Ok(SuiteConfig {
        benchmarks,
        ..cfg.clone()
    })
}

/// `*` matches any run, `?` any single character.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && (p[pi] == '?' || p[pi] == t[ti]) {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}
