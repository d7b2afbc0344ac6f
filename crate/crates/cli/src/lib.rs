//! Experiment harness for the `starsec` toolkit: scheme evaluation,
//! parameter sweeps with cached training, and CSV/JSON result files.

pub mod experiment;
pub mod run;
pub mod scheme;

pub use experiment::{ExperimentKind, ExperimentSpec, ModelOptions, Profile};
pub use run::{run_experiment, ExperimentOutput, ResultRecord, RunOptions};
pub use scheme::{evaluate_scheme, paired_std_err, scheme_rates, Decider, EvalSet, Scheme};
