//! Early termination of unpromising trials.
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sampler::{key_value, parse_num, split_call};
use crate::trial::{FrozenTrial, StudyDirection, TrialState};

/// Which pruning rule a study uses.
///
/// Text forms: `nop`, `asha(r=1,eta=4,s=0)`, `median(startup=5,warmup=0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrunerSpec {
    #[default]
    Nop,
    Asha {
        min_resource: u64,
        reduction_factor: u64,
        min_early_stopping_rate: u64,
    },
    Median {
        n_startup_trials: usize,
        n_warmup_steps: u64,
    },
}

impl PrunerSpec {
    pub fn asha(min_resource: u64, reduction_factor: u64, min_early_stopping_rate: u64) -> Self {
        PrunerSpec::Asha {
            min_resource,
            reduction_factor,
            min_early_stopping_rate,
        }
    }

    pub fn median() -> Self {
        PrunerSpec::Median {
            n_startup_trials: 5,
            n_warmup_steps: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PrunerSpec::Asha {
                min_resource,
                reduction_factor,
                ..
            } if min_resource < 1 || reduction_factor < 2 => Err(Error::InvalidArgument(format!(
                "asha requires r >= 1 and eta >= 2, got {self}"
            ))),
            _ => Ok(()),
        }
    }

    /// `false` when no history can make [`PrunerSpec::should_prune`] fire at `step`.
    pub fn may_prune_at(&self, step: u64) -> bool {
        match *self {
            PrunerSpec::Nop => false,
            PrunerSpec::Asha {
                min_resource: r,
                reduction_factor: eta,
                min_early_stopping_rate: s,
            } => checkpoint(r, eta, s, rung(step, r, eta, s)) == Some(step),
            PrunerSpec::Median { n_warmup_steps, .. } => step >= n_warmup_steps,
        }
    }

    /// Decides whether `trial` should stop after reporting `step`, given every
    /// trial of its study (the candidate included).
    pub fn should_prune(
        &self,
        trial: &FrozenTrial,
        step: u64,
        all_trials: &[FrozenTrial],
        direction: StudyDirection,
    ) -> Result<bool> {
        match *self {
            PrunerSpec::Nop => Ok(false),
            PrunerSpec::Asha {
                min_resource,
                reduction_factor,
                min_early_stopping_rate,
            } => asha_should_prune(
                trial,
                step,
                all_trials,
                direction,
                min_resource,
                reduction_factor,
                min_early_stopping_rate,
            ),
            PrunerSpec::Median {
                n_startup_trials,
                n_warmup_steps,
            } => median_should_prune(
                trial,
                step,
                all_trials,
                direction,
                n_startup_trials,
                n_warmup_steps,
            ),
        }
    }
}

impl fmt::Display for PrunerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrunerSpec::Nop => f.write_str("nop"),
            PrunerSpec::Asha {
                min_resource,
                reduction_factor,
                min_early_stopping_rate,
            } => write!(
                f,
                "asha(r={min_resource},eta={reduction_factor},s={min_early_stopping_rate})"
            ),
            PrunerSpec::Median {
                n_startup_trials,
                n_warmup_steps,
            } => write!(f, "median(startup={n_startup_trials},warmup={n_warmup_steps})"),
        }
    }
}

impl FromStr for PrunerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = split_call(s)?;
        let mut spec = match kind {
            "nop" if args.is_empty() => return Ok(PrunerSpec::Nop),
            "asha" => PrunerSpec::asha(1, 4, 0),
            "median" => PrunerSpec::median(),
            _ => return Err(Error::parse("pruner", format!("unknown pruner {s:?}"))),
        };
        for arg in args {
            let (key, value) = key_value(arg)?;
            match (&mut spec, key) {
                (PrunerSpec::Asha { min_resource, .. }, "r") => *min_resource = parse_num(key, value)?,
                (PrunerSpec::Asha { reduction_factor, .. }, "eta") => {
                    *reduction_factor = parse_num(key, value)?
                }
                (PrunerSpec::Asha { min_early_stopping_rate, .. }, "s") => {
                    *min_early_stopping_rate = parse_num(key, value)?
                }
                (PrunerSpec::Median { n_startup_trials, .. }, "startup") => {
                    *n_startup_trials = parse_num(key, value)?
                }
                (PrunerSpec::Median { n_warmup_steps, .. }, "warmup") => {
                    *n_warmup_steps = parse_num(key, value)?
                }
                _ => return Err(Error::parse("pruner", format!("unknown option {key:?} in {s:?}"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Largest `k` with `base^k <= value`; `None` when `value == 0`.
fn floor_log(value: u64, base: u64) -> Option<u64> {
    if value == 0 {
        return None;
    }
    let mut k = 0;
    let mut power = 1u64;
    while let Some(next) = power.checked_mul(base) {
        if next > value {
            break;
        }
        power = next;
        k += 1;
    }
    Some(k)
}

/// Number of promotions a trial reporting `step` has survived.
pub fn rung(step: u64, r: u64, eta: u64, s: u64) -> u64 {
    floor_log(step / r, eta).map_or(0, |k| k.saturating_sub(s))
}

/// The step at which a trial in `rung` is next judged: `r * eta^(s + rung)`.
pub fn checkpoint(r: u64, eta: u64, s: u64, rung: u64) -> Option<u64> {
    u32::try_from(s + rung)
        .ok()
        .and_then(|e| eta.checked_pow(e))
        .and_then(|p| p.checked_mul(r))
}

fn intermediate_of(trial: &FrozenTrial, step: u64) -> Result<f64> {
    trial
        .intermediate_at(step)
        .ok_or(Error::MissingIntermediate {
            trial_id: trial.trial_id,
            step,
        })
}

/// Asynchronous successive halving without repechage.
///
/// At checkpoint steps the trial survives only if it ranks within the best
/// `max(1, floor(m / eta))` of the `m` values reported at that step by any trial
/// of the study. Ties at the boundary survive; NaN ranks last.
pub fn asha_should_prune(
    trial: &FrozenTrial,
    step: u64,
    all_trials: &[FrozenTrial],
    direction: StudyDirection,
    r: u64,
    eta: u64,
    s: u64,
) -> Result<bool> {
    let value = intermediate_of(trial, step)?;
    let rung = rung(step, r, eta, s);
    if checkpoint(r, eta, s, rung) != Some(step) {
        return Ok(false);
    }
    let mut values: Vec<f64> = all_trials
        .iter()
        .filter(|t| t.trial_id != trial.trial_id)
        .filter_map(|t| t.intermediate_at(step))
        .collect();
    values.push(value);
    let k = ((values.len() as u64 / eta) as usize).max(1);
    let strictly_better = values
        .iter()
        .filter(|&&v| direction.compare(v, value).is_lt())
        .count();
    Ok(strictly_better >= k)
}

/// Prunes a trial whose value at `step` is strictly worse than the median of the
/// other finished trials' values at that step.
pub fn median_should_prune(
    trial: &FrozenTrial,
    step: u64,
    all_trials: &[FrozenTrial],
    direction: StudyDirection,
    n_startup_trials: usize,
    n_warmup_steps: u64,
) -> Result<bool> {
    let value = intermediate_of(trial, step)?;
    let completed = all_trials
        .iter()
        .filter(|t| t.state == TrialState::Complete)
        .count();
    if completed < n_startup_trials || step < n_warmup_steps {
        return Ok(false);
    }
    let mut others: Vec<f64> = all_trials
        .iter()
        .filter(|t| t.trial_id != trial.trial_id)
        .filter(|t| matches!(t.state, TrialState::Complete | TrialState::Pruned))
        .filter_map(|t| t.intermediate_at(step))
        .filter(|v| !v.is_nan())
        .collect();
    if others.is_empty() {
        return Ok(false);
    }
    others.sort_by(|a, b| a.total_cmp(b));
    let m = others.len();
    let median = if m % 2 == 1 {
        others[m / 2]
    } else {
        0.5 * (others[m / 2 - 1] + others[m / 2])
    };
    Ok(direction.compare(value, median).is_gt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reporting(id: u64, state: TrialState, values: &[(u64, f64)]) -> FrozenTrial {
        FrozenTrial {
            trial_id: id,
            study_id: 1,
            number: id,
            state,
            params: Default::default(),
            intermediate_values: values.to_vec(),
            value: (state == TrialState::Complete).then_some(0.0),
            created_at: 0,
            completed_at: None,
        }
    }

    #[test]
    fn rung_and_checkpoints() {
        assert_eq!(rung(3, 1, 2, 0), 1);
        assert_eq!(checkpoint(1, 2, 0, 1), Some(2));
        assert_eq!(rung(0, 1, 2, 0), 0);
        assert_eq!(rung(16, 1, 4, 0), 2);
        assert_eq!(rung(16, 1, 4, 1), 1);
        assert_eq!(rung(5, 2, 2, 0), 1);
        assert_eq!(checkpoint(2, 3, 1, 2), Some(54));
        assert_eq!(checkpoint(2, 3, 1, 200), None);
        let asha = PrunerSpec::asha(1, 4, 0);
        let fire: Vec<u64> = (0..100).filter(|&t| asha.may_prune_at(t)).collect();
        assert_eq!(fire, vec![1, 4, 16, 64]);
        assert!(!PrunerSpec::Nop.may_prune_at(1));
    }

    #[test]
    fn median_examples() {
        let d = StudyDirection::Minimize;
        let me = reporting(9, TrialState::Running, &[(0, 0.5)]);
        assert!(!median_should_prune(&me, 0, std::slice::from_ref(&me), d, 5, 0).unwrap());

        let others: Vec<_> = [0.2, 0.4, 0.6]
            .iter()
            .enumerate()
            .map(|(i, &v)| reporting(i as u64, TrialState::Complete, &[(0, v)]))
            .collect();
        let mut all = others.clone();
        all.push(me.clone());
        assert!(median_should_prune(&me, 0, &all, d, 0, 0).unwrap());

        let tie = reporting(9, TrialState::Running, &[(0, 0.4)]);
        let mut all = others.clone();
        all.push(tie.clone());
        assert!(!median_should_prune(&tie, 0, &all, d, 0, 0).unwrap());

        assert!(!median_should_prune(&me, 0, &all, d, 0, 1).unwrap());
        assert!(matches!(
            median_should_prune(&me, 3, &all, d, 0, 0),
            Err(Error::MissingIntermediate { step: 3, .. })
        ));
    }

    #[test]
    fn spec_text_forms() {
        for (text, spec) in [
            ("nop", PrunerSpec::Nop),
            ("asha(r=1,eta=4,s=0)", PrunerSpec::asha(1, 4, 0)),
            ("median(startup=5,warmup=0)", PrunerSpec::median()),
        ] {
            assert_eq!(text.parse::<PrunerSpec>().unwrap(), spec);
            assert_eq!(spec.to_string(), text);
        }
        assert_eq!("asha(eta=3)".parse::<PrunerSpec>().unwrap(), PrunerSpec::asha(1, 3, 0));
        for bad in ["asha(eta=1)", "asha(r=0)", "hyperband", "median(foo=1)", "nop(1)"] {
            assert!(bad.parse::<PrunerSpec>().is_err(), "{bad}");
        }
    }
}
