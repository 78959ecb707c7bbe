//! Parameter distributions, their real-valued internal encoding and search-space algebra.
//!
//! Every distribution maps its external values (what the objective sees) onto a
//! real number that samplers work with:
//!
//! | kind          | internal value         | internal range          |
//! |---------------|------------------------|-------------------------|
//! | `Uniform`     | the value itself       | `[low, high)`           |
//! | `LogUniform`  | `ln(value)`            | `[ln low, ln high)`     |
//! | `IntRange`    | the integer as a real  | `[low, high]` on a grid |
//! | `Categorical` | index into `choices`   | `{0, .., len - 1}`      |
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A single external parameter value.
#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

impl Atom {
    /// Numeric view of the atom; integers and booleans are widened.
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Atom::Float(v) => Some(v),
            Atom::Int(v) => Some(v as f64),
            Atom::Bool(_) | Atom::Str(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Atom::Int(v) => Some(v),
            Atom::Float(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Some(v as i64),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Atom::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Atom::Bool(b) => Some(b),
            _ => None,
        }
    }

    /// Parses the canonical text form produced by `Display`.
    pub fn parse_text(text: &str) -> Result<Atom> {
        if let Some(inner) = text.strip_prefix('"') {
            let inner = inner
                .strip_suffix('"')
                .ok_or_else(|| Error::parse("atom", format!("unterminated string {text:?}")))?;
            return unescape_quoted(inner).map(Atom::Str);
        }
        Ok(parse_bare_atom(text))
    }

    fn is_bare_safe(s: &str) -> bool {
        !s.is_empty()
            && s.chars().all(|c| {
                !c.is_whitespace() && !matches!(c, '|' | ',' | '(' | ')' | '"' | '\\' | '=' | ';' | '%')
            })
            && matches!(parse_bare_atom(s), Atom::Str(_))
    }
}

fn parse_bare_atom(text: &str) -> Atom {
    match text {
        "true" => return Atom::Bool(true),
        "false" => return Atom::Bool(false),
        _ => {}
    }
    if let Ok(v) = text.parse::<i64>() {
        return Atom::Int(v);
    }
    if let Ok(v) = text.parse::<f64>() {
        return Atom::Float(v);
    }
    Atom::Str(text.to_owned())
}

fn unescape_quoted(inner: &str) -> Result<String> {
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some(e @ ('"' | '\\')) => out.push(e),
                Some('n') => out.push('\n'),
                other => {
                    return Err(Error::parse("atom", format!("bad escape \\{other:?}")));
                }
            }
        } else if c == '"' {
            return Err(Error::parse("atom", "unescaped quote inside string"));
        } else {
            out.push(c);
        }
    }
    Ok(out)
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Bool(b) => write!(f, "{b}"),
            Atom::Int(v) => write!(f, "{v}"),
            Atom::Float(v) => write!(f, "{v:?}"),
            Atom::Str(s) if Atom::is_bare_safe(s) => f.write_str(s),
            Atom::Str(s) => {
                f.write_str("\"")?;
                for c in s.chars() {
                    match c {
                        '"' => f.write_str("\\\"")?,
                        '\\' => f.write_str("\\\\")?,
                        '\n' => f.write_str("\\n")?,
                        c => write!(f, "{c}")?,
                    }
                }
                f.write_str("\"")
            }
        }
    }
}

impl From<f64> for Atom {
    fn from(v: f64) -> Self {
        Atom::Float(v)
    }
}

impl From<i64> for Atom {
    fn from(v: i64) -> Self {
        Atom::Int(v)
    }
}

impl From<bool> for Atom {
    fn from(v: bool) -> Self {
        Atom::Bool(v)
    }
}

impl From<&str> for Atom {
    fn from(v: &str) -> Self {
        Atom::Str(v.to_owned())
    }
}

impl From<String> for Atom {
    fn from(v: String) -> Self {
        Atom::Str(v)
    }
}

/// The domain of one parameter.
///
/// Equality is structural. Continuous ranges are half-open, integer ranges inclusive.
#[derive(Debug, Clone, PartialEq)]
pub enum Distribution {
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    IntRange { low: i64, high: i64, step: i64 },
    Categorical { choices: Vec<Atom> },
}

impl Distribution {
    pub fn uniform(low: f64, high: f64) -> Result<Self> {
        Distribution::Uniform { low, high }.validated()
    }

    pub fn log_uniform(low: f64, high: f64) -> Result<Self> {
        Distribution::LogUniform { low, high }.validated()
    }

    pub fn int(low: i64, high: i64, step: i64) -> Result<Self> {
        Distribution::IntRange { low, high, step }.validated()
    }

    pub fn categorical<I, A>(choices: I) -> Result<Self>
    where
        I: IntoIterator<Item = A>,
        A: Into<Atom>,
    {
        Distribution::Categorical {
            choices: choices.into_iter().map(Into::into).collect(),
        }
        .validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Checks the construction invariants of the distribution.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self {
            Distribution::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return bad(format!("uniform requires finite low < high, got {self}"));
                }
            }
            Distribution::LogUniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && *low > 0.0 && low < high) {
                    return bad(format!("loguniform requires 0 < low < high, got {self}"));
                }
            }
            Distribution::IntRange { low, high, step } => {
                if *step < 1 || low > high {
                    return bad(format!("int requires low <= high and step >= 1, got {self}"));
                }
            }
            Distribution::Categorical { choices } => {
                if choices.is_empty() {
                    return bad("categorical requires at least one choice".into());
                }
                for (i, c) in choices.iter().enumerate() {
                    if matches!(c, Atom::Float(v) if v.is_nan()) {
                        return bad("categorical choices must not be NaN".into());
                    }
                    if choices[..i].contains(c) {
                        return bad(format!("duplicate categorical choice {c}"));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Distribution::Categorical { .. })
    }

    /// Closed bounds of the internal representation.
    pub fn internal_bounds(&self) -> (f64, f64) {
        match self {
            Distribution::Uniform { low, high } => (*low, *high),
            Distribution::LogUniform { low, high } => (low.ln(), high.ln()),
            Distribution::IntRange { low, .. } => (*low as f64, self.int_max() as f64),
            Distribution::Categorical { choices } => (0.0, (choices.len() - 1) as f64),
        }
    }

    /// Largest grid point of an `IntRange`.
    fn int_max(&self) -> i64 {
        match *self {
            Distribution::IntRange { low, high, step } => low + (high - low) / step * step,
            _ => unreachable!("int_max on non-integer distribution"),
        }
    }

    /// Encodes an external value into the sampler-facing real.
    pub fn to_internal(&self, value: &Atom) -> Result<f64> {
        let domain_err = || Error::Domain {
            distribution: self.to_string(),
            value: value.to_string(),
        };
        match self {
            Distribution::Uniform { low, high } => {
                let v = value.as_f64().ok_or_else(domain_err)?;
                if *low <= v && v < *high {
                    Ok(v)
                } else {
                    Err(domain_err())
                }
            }
            Distribution::LogUniform { low, high } => {
                let v = value.as_f64().ok_or_else(domain_err)?;
                if *low <= v && v < *high {
                    Ok(v.ln())
                } else {
                    Err(domain_err())
                }
            }
            Distribution::IntRange { low, high, step } => {
                let v = value.as_i64().ok_or_else(domain_err)?;
                if v < *low || v > *high || (v - low) % step != 0 {
                    return Err(domain_err());
                }
                Ok(v as f64)
            }
            Distribution::Categorical { choices } => choices
                .iter()
                .position(|c| c == value)
                .map(|i| i as f64)
                .ok_or_else(domain_err),
        }
    }

    /// Decodes an internal real, clipping it into range and snapping discrete kinds
    /// to the nearest grid point or index. Total for any input.
    pub fn to_external(&self, x: f64) -> Atom {
        let x = if x.is_nan() { self.internal_bounds().0 } else { x };
        match self {
            Distribution::Uniform { low, high } => Atom::Float(x.clamp(*low, high.next_down())),
            Distribution::LogUniform { low, high } => {
                let v = x.clamp(low.ln(), high.ln()).exp();
                Atom::Float(v.clamp(*low, high.next_down()))
            }
            Distribution::IntRange { low, step, .. } => {
                let n_steps = (self.int_max() - low) / step;
                let k = ((x - *low as f64) / *step as f64).round();
                let k = k.clamp(0.0, n_steps as f64) as i64;
                Atom::Int(low + k * step)
            }
            Distribution::Categorical { choices } => {
                let i = x.round().clamp(0.0, (choices.len() - 1) as f64) as usize;
                choices[i].clone()
            }
        }
    }

    /// Projects an arbitrary real onto a representable internal value.
    pub fn snap_internal(&self, x: f64) -> f64 {
        self.to_internal(&self.to_external(x))
            .expect("to_external always yields an in-domain value")
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Uniform { low, high } => write!(f, "uniform({low:?},{high:?})"),
            Distribution::LogUniform { low, high } => write!(f, "loguniform({low:?},{high:?})"),
            Distribution::IntRange { low, high, step } => write!(f, "int({low},{high},{step})"),
            Distribution::Categorical { choices } => {
                f.write_str("categorical(")?;
                for (i, c) in choices.iter().enumerate() {
                    if i > 0 {
                        f.write_str("|")?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let err = |m: &str| Error::parse("distribution", format!("{m}: {s:?}"));
        let open = s.find('(').ok_or_else(|| err("missing '('"))?;
        let body = s[open + 1..]
            .strip_suffix(')')
            .ok_or_else(|| err("missing ')'"))?;
        let kind = &s[..open];
        let reals = |n: usize| -> Result<Vec<f64>> {
            let parts: Vec<&str> = body.split(',').collect();
            if parts.len() != n {
                return Err(err("wrong number of bounds"));
            }
            parts
                .iter()
                .map(|p| p.parse::<f64>().map_err(|_| err("bad real")))
                .collect()
        };
        let dist = match kind {
            "uniform" => {
                let v = reals(2)?;
                Distribution::Uniform { low: v[0], high: v[1] }
            }
            "loguniform" => {
                let v = reals(2)?;
                Distribution::LogUniform { low: v[0], high: v[1] }
            }
            "int" => {
                let parts: Vec<i64> = body
                    .split(',')
                    .map(|p| p.parse::<i64>().map_err(|_| err("bad integer")))
                    .collect::<Result<_>>()?;
                if parts.len() != 3 {
                    return Err(err("int takes low,high,step"));
                }
                Distribution::IntRange {
                    low: parts[0],
                    high: parts[1],
                    step: parts[2],
                }
            }
            "categorical" => {
                let choices = split_choices(body)
                    .ok_or_else(|| err("unbalanced quotes"))?
                    .into_iter()
                    .map(Atom::parse_text)
                    .collect::<Result<Vec<_>>>()?;
                Distribution::Categorical { choices }
            }
            _ => return Err(err("unknown kind")),
        };
        dist.validated()
    }
}

/// Splits a categorical body on `|` outside of quoted strings.
fn split_choices(body: &str) -> Option<Vec<&str>> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut in_quotes = false;
    let mut escaped = false;
    for (i, c) in body.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' if in_quotes => escaped = true,
            '"' => in_quotes = !in_quotes,
            '|' if !in_quotes => {
                parts.push(&body[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if in_quotes {
        return None;
    }
    parts.push(&body[start..]);
    Some(parts)
}

/// Ordered mapping from parameter name to its distribution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchSpace {
    entries: BTreeMap<String, Distribution>,
}

impl SearchSpace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, distribution: Distribution) {
        self.entries.insert(name.into(), distribution);
    }

    pub fn get(&self, name: &str) -> Option<&Distribution> {
        self.entries.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Distribution> {
        self.entries.remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Distribution)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Whether every entry of `self` appears in `other` with an equal distribution.
    pub fn is_subset_of(&self, other: &SearchSpace) -> bool {
        self.iter().all(|(n, d)| other.get(n) == Some(d))
    }

    /// Pairs present with structurally equal distributions in every input space.
    pub fn intersect<'a, I>(spaces: I) -> SearchSpace
    where
        I: IntoIterator<Item = &'a SearchSpace>,
    {
        let mut iter = spaces.into_iter();
        let Some(first) = iter.next() else {
            return SearchSpace::new();
        };
        let mut acc = first.clone();
        for space in iter {
            acc.entries.retain(|name, d| space.get(name) == Some(d));
            if acc.is_empty() {
                break;
            }
        }
        acc
    }
}

impl FromIterator<(String, Distribution)> for SearchSpace {
    fn from_iter<T: IntoIterator<Item = (String, Distribution)>>(iter: T) -> Self {
        SearchSpace {
            entries: iter.into_iter().collect(),
        }
    }
}
