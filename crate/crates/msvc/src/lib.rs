//! IO, experiment runner and command-line front end for [`msvc_core`].
//!
//! * [`io`]: CSV tables in, CSV surfaces out;
//! * [`experiment`]: timed fits and the Monte Carlo comparison with GWR;
//! * [`cli`]: the `msvc` binary.

pub mod cli;
pub mod experiment;
pub mod io;
pub mod summary;

pub use experiment::{run_experiment, timed_fit, ExperimentSpec, Method, Report, ReportRow, StageTimes};
