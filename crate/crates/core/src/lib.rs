//! Streaming analytics and reservation-policy simulation for cluster
//! scheduler traces in the Google clusterdata layout.
//!
//! The pipeline runs ingest → lifecycle → aggregate / utilization → sim:
//!
//! * [`ingest`] reads task events and usage samples (plain or gzip CSV),
//!   sorts them, and generates seeded synthetic traces.
//! * [`lifecycle`] rebuilds per-task state machines, flags illegal
//!   transitions, and extracts submit/schedule/terminal spans.
//! * [`aggregate`] computes event CDFs, queue and running series, moving
//!   averages and a per-observation summary report.
//! * [`utilization`] builds usage and allocation series and the
//!   distribution of period-to-period usage changes.
//! * [`sim`] replays usage under reservation policies and reports how much
//!   capacity each reclaims and how often it under-reserves.
//! * [`cli`] wires everything into the `clustertrace` command.

pub mod aggregate;
pub mod cli;
pub mod error;
pub mod ingest;
pub mod lifecycle;
pub mod model;
pub mod sim;
pub mod utilization;

pub use error::{Error, Result};
pub use ingest::{generate_synthetic, SynthConfig, SyntheticTrace, TraceBundle, UsageSample};
pub use lifecycle::{Lifecycle, ScheduleSpan, Tracker};
pub use model::{EventKind, Micros, PriorityTier, Resource, TaskEvent, TaskKey, TaskState, TerminalClassification};
