//! Line-oriented action scripts.
//!
//! ```text
//! # comments and blank lines are ignored
//! - cap_label: @max_label 66000
//! - cap_label: C000123 1500
//! - drop_feature: "#Threats"
//! - restore_feature: LastVisit
//! - undo
//! ```
//!
//! `@max_label` names the customer whose current training label is largest.
//! Each step is applied and followed by one iteration.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum CustomerRef {
    MaxLabel,
    Id(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    CapLabel { customer: CustomerRef, kwh: f64 },
    DropFeature(String),
    RestoreFeature(String),
    Undo,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::CapLabel { customer: CustomerRef::MaxLabel, kwh } => write!(f, "cap_label @max_label {kwh}"),
            Step::CapLabel { customer: CustomerRef::Id(id), kwh } => write!(f, "cap_label {id} {kwh}"),
            Step::DropFeature(name) => write!(f, "drop_feature {name:?}"),
            Step::RestoreFeature(name) => write!(f, "restore_feature {name:?}"),
            Step::Undo => f.write_str("undo"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScriptLine {
    /// 1-based.
    pub line: usize,
    pub step: Step,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("script line {line}: {reason}")]
pub struct ScriptError {
    pub line: usize,
    pub reason: String,
}

pub fn parse(text: &str) -> Result<Vec<ScriptLine>, ScriptError> {
    let mut steps = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |reason: String| ScriptError { line, reason };
        let body = trimmed
            .strip_prefix('-')
            .ok_or_else(|| err("expected a list item starting with `- `".into()))?
            .trim();
        let (name, args) = match body.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (body, ""),
        };
        let step = match name {
            "cap_label" => {
                let (customer, kwh) = split_cap(args).map_err(err)?;
                Step::CapLabel { customer, kwh }
            }
            "drop_feature" => Step::DropFeature(feature_arg(args).map_err(err)?),
            "restore_feature" => Step::RestoreFeature(feature_arg(args).map_err(err)?),
            "undo" if args.is_empty() => Step::Undo,
            "undo" => return Err(err("`undo` takes no arguments".into())),
            other => {
                return Err(err(format!(
                    "unknown action `{other}` (expected cap_label, drop_feature, restore_feature or undo)"
                )))
            }
        };
        steps.push(ScriptLine { line, step });
    }
    Ok(steps)
}

/// A single token, optionally double-quoted.
fn unquote(s: &str) -> Result<String, String> {
    match s.strip_prefix('"') {
        Some(rest) => rest
            .strip_suffix('"')
            .filter(|inner| !inner.contains('"'))
            .map(str::to_string)
            .ok_or_else(|| format!("unterminated quote in {s}")),
        None => Ok(s.to_string()),
    }
}

fn feature_arg(args: &str) -> Result<String, String> {
    if args.is_empty() {
        return Err("missing feature name".into());
    }
    let name = unquote(args)?;
    if name.is_empty() {
        return Err("empty feature name".into());
    }
    Ok(name)
}

fn split_cap(args: &str) -> Result<(CustomerRef, f64), String> {
    let (who, kwh) = args.rsplit_once(char::is_whitespace).ok_or("expected `<customer> <kWh>`")?;
    let kwh: f64 = kwh.replace('_', "").parse().map_err(|_| format!("invalid kWh value `{kwh}`"))?;
    let who = who.trim();
    let customer = match who {
        "@max_label" => CustomerRef::MaxLabel,
        w if w.starts_with('@') => return Err(format!("unknown reference `{w}` (only @max_label is supported)")),
        w => CustomerRef::Id(unquote(w)?),
    };
    Ok((customer, kwh))
}
