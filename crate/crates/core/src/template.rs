//! `{placeholder}` substitution in command templates.

use std::path::Path;

pub const PLACEHOLDERS: [&str; 6] = [
    "device_id",
    "device_count",
    "rank",
    "world_size",
    "base_dir",
    "bench_dir",
];

/// Values substituted into a command template. Unset fields leave their
/// placeholder in place.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    pub device_id: Option<String>,
    pub device_count: Option<usize>,
    pub rank: Option<usize>,
    pub world_size: Option<usize>,
    pub base_dir: Option<String>,
    pub bench_dir: Option<String>,
}

impl Bindings {
    pub fn with_dirs(base_dir: &Path, bench_dir: &Path) -> Self {
        Self {
            base_dir: Some(base_dir.display().to_string()),
            bench_dir: Some(bench_dir.display().to_string()),
            ..Self::default()
        }
    }

    fn lookup(&self, name: &str) -> Option<String> {
        match name {
            "device_id" => self.device_id.clone(),
            "device_count" => self.device_count.map(|v| v.to_string()),
            "rank" => self.rank.map(|v| v.to_string()),
            "world_size" => self.world_size.map(|v| v.to_string()),
            "base_dir" => self.base_dir.clone(),
            "bench_dir" => self.bench_dir.clone(),
            _ => None,
        }
    }
}

/// Iterate `(byte_range, name)` for every `{identifier}` not preceded by `$`,
/// so shell expansions like `${HOME}` pass through untouched.
fn placeholders(template: &str) -> Vec<(std::ops::Range<usize>, &str)> {
    let bytes = template.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' && (i == 0 || bytes[i - 1] != b'$') {
            if let Some(len) = template[i + 1..].find('}') {
                let name = &template[i + 1..i + 1 + len];
                if !name.is_empty()
                    && name
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_')
                {
                    out.push((i..i + len + 2, name));
                    i += len + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    out
}

/// Placeholder names in `template` that are not among [`PLACEHOLDERS`].
pub fn unknown_placeholders(template: &str) -> Vec<String> {
    placeholders(template)
        .into_iter()
        .filter(|(_, name)| !PLACEHOLDERS.contains(name))
        .map(|(_, name)| name.to_string())
        .collect()
}

/// Substitute bound placeholders. Values are shell-quoted when they contain
/// anything outside a conservative safe set.
pub fn render(template: &str, bindings: &Bindings) -> String {
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for (range, name) in placeholders(template) {
        if let Some(value) = bindings.lookup(name) {
            out.push_str(&template[last..range.start]);
            out.push_str(&shell_quote(&value));
            last = range.end;
        }
    }
    out.push_str(&template[last..]);
    out
}

pub fn shell_quote(value: &str) -> String {
    let safe = !value.is_empty()
        && value
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_./:=,+@%".contains(c));
    if safe {
        value.to_string()
    } else {
        format!("'{}'", value.replace('\'', r"'\''"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn substitutes_known_names() {
        let b = Bindings {
            device_id: Some("cuda:3".into()),
            rank: Some(3),
            world_size: Some(8),
            ..Default::default()
        };
        assert_eq!(
            render("w --dev {device_id} --rank {rank}/{world_size} {bench_dir}", &b),
            "w --dev cuda:3 --rank 3/8 {bench_dir}"
        );
    }

    #[test]
    fn shell_expansions_are_left_alone() {
        assert!(unknown_placeholders("echo ${HOME} {rank}").is_empty());
        assert_eq!(unknown_placeholders("a {nope} {rank} { x }"), vec!["nope"]);
    }

    #[test]
    fn quoting() {
        assert_eq!(shell_quote("/tmp/a b"), "'/tmp/a b'");
        assert_eq!(shell_quote("it's"), r"'it'\''s'");
        assert_eq!(shell_quote("gpu0"), "gpu0");
    }
}
