//! Study export as CSV and parsing of the flattened parameter column.
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use anyhow::Context;
use trialforge::{Atom, FrozenTrial};

use crate::{CliResult, StudyArgs};

pub const HEADER: [&str; 4] = ["number", "state", "value", "params"];

/// `name=value;...` in name order with canonical atom text.
pub fn format_params(trial: &FrozenTrial) -> String {
    trial
        .param_values()
        .iter()
        .map(|(name, value)| format!("{name}={value}"))
        .collect::<Vec<_>>()
        .join(";")
}

/// Inverse of [`format_params`]; separators inside quoted strings are kept.
pub fn parse_params(text: &str) -> trialforge::Result<BTreeMap<String, Atom>> {
    let mut out = BTreeMap::new();
    if text.is_empty() {
        return Ok(out);
    }
    let mut fields = Vec::new();
    let (mut start, mut quoted, mut escaped) = (0, false, false);
    for (i, c) in text.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if quoted => escaped = true,
            '"' => quoted = !quoted,
            ';' if !quoted => {
                fields.push(&text[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    fields.push(&text[start..]);
    for field in fields {
        let (name, value) = field.split_once('=').ok_or_else(|| {
            trialforge::Error::Parse {
                what: "params",
                message: format!("expected name=value, got {field:?}"),
            }
        })?;
        out.insert(name.to_owned(), Atom::parse_text(value)?);
    }
    Ok(out)
}

pub fn write_trials<W: Write>(out: W, trials: &[FrozenTrial]) -> anyhow::Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(HEADER)?;
    for t in trials {
        w.write_record([
            t.number.to_string(),
            t.state.to_string(),
            t.value.map(|v| v.to_string()).unwrap_or_default(),
            format_params(t),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export(target: &StudyArgs, out: Option<&Path>) -> CliResult {
    let storage = target.storage.open()?;
    let study = storage
        .get_study_by_name(&target.study)?
        .ok_or_else(|| trialforge::Error::UnknownStudy(target.study.clone()))?;
    let trials = storage.get_all_trials(study.study_id)?;
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_trials(std::io::BufWriter::new(file), &trials)?;
        }
        None => write_trials(std::io::stdout().lock(), &trials)?,
    }
    Ok(())
}
