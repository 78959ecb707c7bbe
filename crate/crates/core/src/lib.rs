//! Define-by-run hyperparameter optimisation.
//!
//! Objectives build their search space while they run by calling `suggest_*` on
//! the trial they receive. Studies persist trials in a [`storage::Storage`]
//! shared by every worker, samplers learn from that shared history, and pruners
//! stop unpromising trials early.
//!
//! ```
//! use std::sync::Arc;
//! use trialforge::{Study, StudyOptions, SamplerSpec, TrialApi};
//! use trialforge::storage::InMemoryStorage;
//!
//! let options = StudyOptions { sampler: SamplerSpec::tpe(), seed: 1, ..Default::default() };
//! let study = Study::create(Arc::new(InMemoryStorage::new()), "quadratic", options, false).unwrap();
//! study
//!     .optimize(
//!         |trial| {
//!             let x = trial.suggest_uniform("x", -10.0, 10.0)?;
//!             Ok((x - 2.0).powi(2))
//!         },
//!         50,
//!         1,
//!         None,
//!     )
//!     .unwrap();
//! assert!(study.best_value().unwrap() < 1.0);
//! ```
pub mod bench;
pub mod distribution;
mod error;
pub mod pruner;
pub mod rng;
pub mod sampler;
pub mod storage;
pub mod study;
pub mod trial;

pub use distribution::{Atom, Distribution, SearchSpace};
pub use error::{Error, Result};
pub use pruner::PrunerSpec;
pub use sampler::{SamplerSpec, TpeParams};
pub use study::{run_fixed, FixedTrial, ObjectiveError, ObjectiveResult, Study, StudyOptions, Trial, TrialApi};
pub use trial::{FrozenTrial, StudyDirection, StudyRecord, TrialState};
