//! Discrete-event simulation of data-center hosts with per-host energy and
//! carbon-footprint accounting.
//!
//! A run takes a [`platform::PlatformSpec`], a [`workload::Workload`] of
//! FLOP-sized jobs and an optional list of scripted
//! [`workload::ExternalEvent`]s, and produces a [`engine::SimulationResult`]
//! with an event trace and per-host totals. [`eval`] grades simulated runs
//! against measured CodeCarbon runs.

pub mod carbon;
pub mod cli;
pub mod energy;
pub mod engine;
pub mod eval;
pub mod platform;
pub mod trace;
pub mod workload;

pub use carbon::{carbon_step, CarbonIntensitySeries};
pub use energy::{instantaneous_power, PowerMode};
pub use engine::{job_duration, run_simulation, Engine, HostRuntime, SimError, SimOptions, SimulationResult};
pub use platform::{parse_platform, HostSpec, PlatformSpec, PowerProfile};
pub use trace::TraceRecord;
pub use workload::{parse_events, parse_workload, ExternalEvent, Job, Workload};
