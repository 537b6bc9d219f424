//! Line-oriented problem-pool files.
//!
//! One record per line, space-separated `key=value` fields:
//!
//! ```text
//! id=7 features=0.25,-1.5,0 answer_count=4 reference_answer=2 domain_tag=target corruption=bernoulli p=0.5
//! ```
//!
//! `corruption` is `clean` or `bernoulli` (the latter followed by `p`). It is
//! omitted for redacted problems. Blank lines and lines starting with `#` are
//! ignored. The ground-truth sidecar uses the same syntax with only `id`,
//! `corruption` and `p`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::policy::{Corruption, Problem};

pub fn format_problem(problem: &Problem) -> String {
    let mut line = format!("id={} features=", problem.id);
    for (i, x) in problem.features.iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        let _ = write!(line, "{x}");
    }
    let _ = write!(
        line,
        " answer_count={} reference_answer={} domain_tag={}",
        problem.answer_count,
        problem.reference_answer,
        problem.domain_tag.as_str()
    );
    if let Some(c) = problem.corruption {
        line.push(' ');
        line.push_str(&format_corruption(c));
    }
    line
}

fn format_corruption(c: Corruption) -> String {
    match c {
        Corruption::Clean => "corruption=clean".to_string(),
        Corruption::Bernoulli { p } => format!("corruption=bernoulli p={p}"),
    }
}

fn fields(line: &str) -> Result<BTreeMap<&str, &str>> {
    let mut map = BTreeMap::new();
    for token in line.split_whitespace() {
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("malformed field {token:?}")))?;
        if map.insert(k, v).is_some() {
            return Err(Error::Input(format!("duplicate field {k:?}")));
        }
    }
    Ok(map)
}

fn required<'a>(map: &BTreeMap<&str, &'a str>, key: &str) -> Result<&'a str> {
    map.get(key)
        .copied()
        .ok_or_else(|| Error::Input(format!("missing field {key:?}")))
}

fn number<T: std::str::FromStr>(map: &BTreeMap<&str, &str>, key: &str) -> Result<T> {
    let raw = required(map, key)?;
    raw.parse()
        .map_err(|_| Error::Input(format!("field {key:?}: cannot parse {raw:?}")))
}

fn corruption_of(map: &BTreeMap<&str, &str>) -> Result<Option<Corruption>> {
    match map.get("corruption").copied() {
        None => Ok(None),
        Some("clean") => Ok(Some(Corruption::Clean)),
        Some("bernoulli") => Ok(Some(Corruption::Bernoulli {
            p: number(map, "p")?,
        })),
        Some(other) => Err(Error::Input(format!("unknown corruption mode {other:?}"))),
    }
}

pub fn parse_problem(line: &str) -> Result<Problem> {
    let map = fields(line)?;
    let features = required(&map, "features")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Input(format!("bad feature value {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let problem = Problem {
        id: number(&map, "id")?,
        features,
        answer_count: number(&map, "answer_count")?,
        reference_answer: number(&map, "reference_answer")?,
        domain_tag: required(&map, "domain_tag")?.parse()?,
        corruption: corruption_of(&map)?,
    };
    problem.validate()?;
    Ok(problem)
}

fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn write_pool(path: &Path, problems: &[Problem]) -> Result<()> {
    let mut text = String::new();
    for p in problems {
        text.push_str(&format_problem(p));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_pool(path: &Path) -> Result<Vec<Problem>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let problems = records(&text)
        .map(|(n, line)| {
            parse_problem(line).map_err(|e| Error::parse(path, format!("line {n}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(first) = problems.first() {
        let d = first.features.len();
        if let Some(p) = problems.iter().find(|p| p.features.len() != d) {
            return Err(Error::parse(
                path,
                format!("problem {} has inconsistent feature length", p.id),
            ));
        }
    }
    Ok(problems)
}

/// Writes the private sidecar carrying every problem's reward mode.
pub fn write_ground_truth(path: &Path, problems: &[Problem]) -> Result<()> {
    let mut text = String::new();
    for p in problems {
        let c = p.corruption.ok_or_else(|| {
            Error::Input(format!("problem {} has no reward mode to record", p.id))
        })?;
        let _ = writeln!(text, "id={} {}", p.id, format_corruption(c));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_ground_truth(path: &Path) -> Result<BTreeMap<u64, Corruption>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in records(&text) {
        let parsed = fields(line).and_then(|map| {
            let id: u64 = number(&map, "id")?;
            let c =
                corruption_of(&map)?.ok_or_else(|| Error::Input("missing corruption".into()))?;
            Ok((id, c))
        });
        let (id, c) = parsed.map_err(|e| Error::parse(path, format!("line {n}: {e}")))?;
        out.insert(id, c);
    }
    Ok(out)
}
