use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Tunables of the tree-structured Parzen estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpeParams {
    /// Fraction of scored observations placed in the "good" set.
    pub gamma: f64,
    pub n_candidates: usize,
    pub n_startup_trials: usize,
}

impl Default for TpeParams {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_candidates: 24,
            n_startup_trials: 10,
        }
    }
}

/// Which sampling strategy a study uses.
///
/// Text forms: `random`, `tpe(gamma=0.25,candidates=24,startup=10)`,
/// `cmaes(sigma0=0.3,fallback=tpe)`, `mixture(tpe,cmaes,switch=40)`.
/// Parenthesised arguments are optional and default as shown.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum SamplerSpec {
    #[default]
    Random,
    Tpe(TpeParams),
    CmaEs {
        sigma0: f64,
        fallback: Box<SamplerSpec>,
    },
    Mixture {
        first: Box<SamplerSpec>,
        second: Box<SamplerSpec>,
        switch_at: usize,
    },
}

impl SamplerSpec {
    pub fn tpe() -> Self {
        SamplerSpec::Tpe(TpeParams::default())
    }

    pub fn cmaes() -> Self {
        SamplerSpec::CmaEs {
            sigma0: 0.3,
            fallback: Box::new(SamplerSpec::tpe()),
        }
    }

    pub fn mixture(first: SamplerSpec, second: SamplerSpec, switch_at: usize) -> Self {
        SamplerSpec::Mixture {
            first: Box::new(first),
            second: Box::new(second),
            switch_at,
        }
    }

    pub fn is_independent(&self) -> bool {
        matches!(self, SamplerSpec::Random | SamplerSpec::Tpe(_))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        match self {
            SamplerSpec::Random => Ok(()),
            SamplerSpec::Tpe(p) => {
                if !(p.gamma > 0.0 && p.gamma < 1.0) {
                    return bad(format!("tpe gamma must lie in (0, 1), got {}", p.gamma));
                }
                if p.n_candidates == 0 {
                    return bad("tpe needs at least one candidate".into());
                }
                Ok(())
            }
            SamplerSpec::CmaEs { sigma0, fallback } => {
                if !(*sigma0 > 0.0 && sigma0.is_finite()) {
                    return bad(format!("cmaes sigma0 must be positive, got {sigma0}"));
                }
                if !fallback.is_independent() {
                    return bad(format!("cmaes fallback must be independent, got {fallback}"));
                }
                fallback.validate()
            }
            SamplerSpec::Mixture { first, second, .. } => {
                first.validate()?;
                second.validate()
            }
        }
    }
}

impl fmt::Display for SamplerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplerSpec::Random => f.write_str("random"),
            SamplerSpec::Tpe(p) => write!(
                f,
                "tpe(gamma={:?},candidates={},startup={})",
                p.gamma, p.n_candidates, p.n_startup_trials
            ),
            SamplerSpec::CmaEs { sigma0, fallback } => {
                write!(f, "cmaes(sigma0={sigma0:?},fallback={fallback})")
            }
            SamplerSpec::Mixture {
                first,
                second,
                switch_at,
            } => write!(f, "mixture({first},{second},switch={switch_at})"),
        }
    }
}

/// Splits `kind(arg,arg,...)` into the kind and its top-level arguments.
pub(crate) fn split_call(text: &str) -> Result<(&str, Vec<&str>)> {
    let text = text.trim();
    let Some(open) = text.find('(') else {
        return Ok((text, Vec::new()));
    };
    let body = text[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| Error::parse("spec", format!("missing ')' in {text:?}")))?;
    let mut args = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in body.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                args.push(body[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
        if depth < 0 {
            return Err(Error::parse("spec", format!("unbalanced parentheses in {text:?}")));
        }
    }
    if depth != 0 {
        return Err(Error::parse("spec", format!("unbalanced parentheses in {text:?}")));
    }
    if !body.trim().is_empty() {
        args.push(body[start..].trim());
    }
    Ok((&text[..open], args))
}

pub(crate) fn key_value(arg: &str) -> Result<(&str, &str)> {
    arg.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Error::parse("spec", format!("expected key=value, got {arg:?}")))
}

pub(crate) fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parse("spec", format!("bad value {value:?} for {key}")))
}

impl FromStr for SamplerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = split_call(s)?;
        let spec = match kind {
            "random" if args.is_empty() => SamplerSpec::Random,
            "tpe" => {
                let mut p = TpeParams::default();
                for arg in args {
                    match key_value(arg)? {
                        ("gamma", v) => p.gamma = parse_num("gamma", v)?,
                        ("candidates", v) => p.n_candidates = parse_num("candidates", v)?,
                        ("startup", v) => p.n_startup_trials = parse_num("startup", v)?,
                        (k, _) => return Err(Error::parse("sampler", format!("unknown tpe option {k:?}"))),
                    }
                }
                SamplerSpec::Tpe(p)
            }
            "cmaes" => {
                let mut sigma0 = 0.3;
                let mut fallback = SamplerSpec::tpe();
                for arg in args {
                    match key_value(arg)? {
                        ("sigma0", v) => sigma0 = parse_num("sigma0", v)?,
                        ("fallback", v) => fallback = v.parse()?,
                        (k, _) => return Err(Error::parse("sampler", format!("unknown cmaes option {k:?}"))),
                    }
                }
                SamplerSpec::CmaEs {
                    sigma0,
                    fallback: Box::new(fallback),
                }
            }
            "mixture" => {
                let (positional, options): (Vec<&str>, Vec<&str>) =
                    args.into_iter().partition(|a| !a.starts_with("switch"));
                if positional.len() != 2 || options.len() > 1 {
                    return Err(Error::parse(
                        "sampler",
                        format!("mixture takes two samplers and switch=N, got {s:?}"),
                    ));
                }
                let switch_at = match options.first() {
                    Some(opt) => parse_num("switch", key_value(opt)?.1)?,
                    None => 40,
                };
                SamplerSpec::mixture(positional[0].parse()?, positional[1].parse()?, switch_at)
            }
            _ => return Err(Error::parse("sampler", format!("unknown sampler {s:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}
