//! Deterministic discrete-event core.
//!
//! Hosts start On and idle at t = 0. Events at equal timestamps are handled
//! in this order: external events (and carbon-intensity breakpoints), job
//! completions, job submissions, and finally FCFS job starts. Within a class,
//! events are ordered by id. Every host-affecting event first settles the
//! host up to the current time, then notifies listeners, then applies the
//! state change.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use log::warn;
use thiserror::Error;

use crate::carbon::{carbon_step, CarbonAccount, CarbonError, CarbonIntensitySeries};
use crate::energy::{accumulate_energy, instantaneous_power, EnergyError, PowerMode, PowerSample};
use crate::platform::{validate_platform, CiSource, HostSpec, PlatformSpec, Violation};
use crate::trace::{record_event, EventType, HostSummary, TraceRecord};
use crate::workload::{EventAction, ExternalEvent, Job, Workload};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid platform: {}", format_violations(.0))]
    InvalidPlatform(Vec<Violation>),
    #[error("event at t={time} targets unknown host {host:?}")]
    UnknownHost { time: f64, host: String },
    #[error("no carbon intensity trace loaded for reference {0:?}")]
    MissingCiTrace(String),
    #[error("t={time}: cannot power off host {host:?} with {busy} busy cores (preemption is unsupported)")]
    PreemptionUnsupported { time: f64, host: String, busy: u32 },
    #[error("carbon plugin is already registered")]
    DoubleRegistration,
    #[error("end time {0} must be finite and non-negative")]
    InvalidEndTime(f64),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Carbon(#[from] CarbonError),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("host {:?} field {}: {}", v.host_id, v.field, v.message))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Seconds needed to run `flop_total` FLOP spread evenly over `cores` cores.
pub fn job_duration(flop_total: f64, cores: u32, speed_per_core: f64) -> f64 {
    debug_assert!(cores >= 1 && speed_per_core > 0.0);
    flop_total / (cores as f64 * speed_per_core)
}

/// Per-core speed (FLOP/s) of a machine that ran `flop_total` FLOP on `cores` cores in `seconds`.
pub fn per_core_speed(flop_total: f64, seconds: f64, cores: u32) -> f64 {
    flop_total / seconds / cores as f64
}

/// Live state of one host.
#[derive(Debug, Clone, PartialEq)]
pub struct HostRuntime {
    pub spec: HostSpec,
    pub mode: PowerMode,
    pub busy_cores: u32,
    /// Time of the last settlement.
    pub last_update: f64,
    pub energy_j: f64,
    pub carbon: CarbonAccount,
    /// Current carbon-intensity source.
    pub ci: CarbonIntensitySeries,
}

/// Energy and carbon accrued by one settlement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settlement {
    pub e_step: f64,
    pub c_step: f64,
}

impl HostRuntime {
    pub fn new(spec: HostSpec, ci: CarbonIntensitySeries) -> Self {
        Self {
            spec,
            mode: PowerMode::On,
            busy_cores: 0,
            last_update: 0.0,
            energy_j: 0.0,
            carbon: CarbonAccount::default(),
            ci,
        }
    }

    pub fn power(&self) -> Result<f64, EnergyError> {
        instantaneous_power(&self.spec.profile, self.mode, self.busy_cores, self.spec.core_count)
    }

    pub fn power_sample(&self) -> Result<PowerSample, EnergyError> {
        Ok(PowerSample {
            host_id: self.spec.id.clone(),
            time: self.last_update,
            power_w: self.power()?,
        })
    }

    /// Intensity in force at the last settlement.
    pub fn current_ci(&self) -> f64 {
        self.ci.ci_at(self.last_update)
    }

    pub fn free_cores(&self) -> u32 {
        match self.mode {
            PowerMode::On => self.spec.core_count - self.busy_cores,
            PowerMode::Off => 0,
        }
    }

    /// Closes `[last_update, t1]` using power and intensity sampled at `last_update`.
    pub fn settle(&mut self, t1: f64, price_carbon: bool) -> Result<Settlement, EnergyError> {
        let e_step = accumulate_energy(self.power()?, self.last_update, t1)?;
        let c_step = if price_carbon {
            let c = carbon_step(e_step, self.ci.ci_at(self.last_update));
            self.carbon.add(c);
            c
        } else {
            0.0
        };
        self.energy_j += e_step;
        self.last_update = t1;
        Ok(Settlement { e_step, c_step })
    }

    pub fn summary(&self) -> HostSummary {
        HostSummary {
            host_id: self.spec.id.clone(),
            energy_j: self.energy_j,
            carbon_g: self.carbon.carbon_g,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum HostEventKind {
    Creation,
    Destruction,
    PowerOn,
    PowerOff,
    JobStart { job_id: String },
    JobEnd { job_id: String },
    CiChange,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostEvent {
    pub time: f64,
    pub host_id: String,
    pub kind: HostEventKind,
}

/// Observer of host events. Called after the host has been settled at the
/// event time and before the event's state change is applied.
pub trait HostListener {
    fn on_host_event(&mut self, event: &HostEvent, host: &HostRuntime);
}

/// Handle returned when a plugin or listener is attached to an [`Engine`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subscription {
    Carbon,
    Listener(usize),
}

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub carbon_enabled: bool,
    /// Keep simulating (and settling) at least until this time.
    pub end_time: Option<f64>,
    /// Step traces keyed by the reference used in the platform file.
    pub ci_traces: BTreeMap<String, CarbonIntensitySeries>,
}

/// Placement of one job by the scheduler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub job_index: usize,
    pub host_index: usize,
    pub start_time: f64,
}

/// Strict FCFS placement at time `now`: jobs are taken in order and each goes
/// to the first On host with enough free cores. The first job that does not
/// fit blocks everything queued behind it.
pub fn schedule_fcfs(pending: &[Job], hosts: &[HostRuntime], now: f64) -> Vec<Assignment> {
    let mut free: Vec<u32> = hosts.iter().map(HostRuntime::free_cores).collect();
    let mut out = Vec::new();
    for (job_index, job) in pending.iter().enumerate() {
        let Some(host_index) = free.iter().position(|&f| f >= job.cores_requested) else {
            break;
        };
        free[host_index] -= job.cores_requested;
        out.push(Assignment {
            job_index,
            host_index,
            start_time: now,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobRun {
    pub job_id: String,
    pub host_id: String,
    pub start: f64,
    pub end: f64,
    pub cores: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub trace: Vec<TraceRecord>,
    pub per_host_summary: Vec<HostSummary>,
    /// Completion time of the last job, 0 without jobs.
    pub makespan: f64,
    /// Time at which every host received its final settlement.
    pub end_time: f64,
    pub jobs: Vec<JobRun>,
    /// Jobs requesting more cores than any host has.
    pub rejected_jobs: Vec<String>,
    /// Accepted jobs that never started (e.g. every fitting host stayed Off).
    pub unstarted_jobs: Vec<String>,
}

impl SimulationResult {
    pub fn total_energy_j(&self) -> f64 {
        self.per_host_summary.iter().map(|h| h.energy_j).sum()
    }

    pub fn total_carbon_g(&self) -> f64 {
        self.per_host_summary.iter().map(|h| h.carbon_g).sum()
    }
}

#[derive(Debug)]
enum Queued {
    External(ExternalEvent),
    CiBreakpoint { host: usize },
    JobEnd { run: usize, host: usize },
    Submit(Job),
}

impl Queued {
    fn class(&self) -> u8 {
        match self {
            Queued::External(_) | Queued::CiBreakpoint { .. } => 0,
            Queued::JobEnd { .. } => 1,
            Queued::Submit(_) => 2,
        }
    }

    /// Breakpoints only settle; they do not keep the simulation alive.
    fn is_passive(&self) -> bool {
        matches!(self, Queued::CiBreakpoint { .. })
    }
}

#[derive(Debug)]
struct Entry {
    time: f64,
    class: u8,
    key: String,
    seq: u64,
    event: Queued,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.class.cmp(&other.class))
            .then_with(|| self.key.cmp(&other.key))
            .then(self.seq.cmp(&other.seq))
    }
}

/// Single-threaded event loop over one platform.
pub struct Engine<'l> {
    hosts: Vec<HostRuntime>,
    carbon: Option<Subscription>,
    listeners: Vec<Box<dyn HostListener + 'l>>,
    end_time: Option<f64>,
    queue: BinaryHeap<Reverse<Entry>>,
    active: usize,
    seq: u64,
    now: f64,
    pending: VecDeque<Job>,
    runs: Vec<JobRun>,
    rejected: Vec<String>,
    trace: Vec<TraceRecord>,
    makespan: f64,
}

impl<'l> Engine<'l> {
    pub fn new(platform: &PlatformSpec, options: &SimOptions) -> Result<Self, SimError> {
        let violations = validate_platform(platform);
        if !violations.is_empty() {
            return Err(SimError::InvalidPlatform(violations));
        }
        if let Some(t) = options.end_time {
            if !(t.is_finite() && t >= 0.0) {
                return Err(SimError::InvalidEndTime(t));
            }
        }
        let hosts = platform
            .hosts
            .iter()
            .map(|spec| {
                let ci = match &spec.ci_source {
                    CiSource::Constant(v) => CarbonIntensitySeries::Constant(*v),
                    CiSource::Trace(r) => options
                        .ci_traces
                        .get(r)
                        .cloned()
                        .ok_or_else(|| SimError::MissingCiTrace(r.clone()))?,
                };
                Ok(HostRuntime::new(spec.clone(), ci))
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        let mut engine = Self {
            hosts,
            carbon: None,
            listeners: Vec::new(),
            end_time: options.end_time,
            queue: BinaryHeap::new(),
            active: 0,
            seq: 0,
            now: 0.0,
            pending: VecDeque::new(),
            runs: Vec::new(),
            rejected: Vec::new(),
            trace: Vec::new(),
            makespan: 0.0,
        };
        if options.carbon_enabled {
            crate::carbon::register_callbacks(&mut engine)?;
        }
        Ok(engine)
    }

    pub(crate) fn register_carbon(&mut self) -> Result<Subscription, SimError> {
        if self.carbon.is_some() {
            return Err(SimError::DoubleRegistration);
        }
        self.carbon = Some(Subscription::Carbon);
        Ok(Subscription::Carbon)
    }

    pub fn carbon_enabled(&self) -> bool {
        self.carbon.is_some()
    }

    pub fn subscribe(&mut self, listener: impl HostListener + 'l) -> Subscription {
        self.listeners.push(Box::new(listener));
        Subscription::Listener(self.listeners.len() - 1)
    }

    pub fn hosts(&self) -> &[HostRuntime] {
        &self.hosts
    }

    fn push(&mut self, time: f64, key: String, event: Queued) {
        if !event.is_passive() {
            self.active += 1;
        }
        self.seq += 1;
        self.queue.push(Reverse(Entry {
            time,
            class: event.class(),
            key,
            seq: self.seq,
            event,
        }));
    }

    fn host_index(&self, id: &str) -> Option<usize> {
        self.hosts.iter().position(|h| h.spec.id == id)
    }

    /// Settles host `idx` at the current time and informs listeners.
    fn notify(&mut self, idx: usize, kind: HostEventKind) -> Result<(), SimError> {
        let price = self.carbon.is_some();
        let host = &mut self.hosts[idx];
        host.settle(self.now, price)?;
        let event = HostEvent {
            time: self.now,
            host_id: host.spec.id.clone(),
            kind,
        };
        for l in &mut self.listeners {
            l.on_host_event(&event, &self.hosts[idx]);
        }
        Ok(())
    }

    fn record(&mut self, event_type: EventType) -> Result<(), SimError> {
        let price = self.carbon.is_some();
        for h in &mut self.hosts {
            h.settle(self.now, price)?;
        }
        let rec = record_event(&self.hosts, self.now, event_type, self.trace.last());
        self.trace.push(rec);
        Ok(())
    }

    /// Runs `workload` and `events` to completion.
    pub fn run(mut self, workload: &Workload, events: &[ExternalEvent]) -> Result<SimulationResult, SimError> {
        for e in events {
            if self.host_index(&e.host_id).is_none() {
                return Err(SimError::UnknownHost {
                    time: e.time,
                    host: e.host_id.clone(),
                });
            }
        }

        for idx in 0..self.hosts.len() {
            self.notify(idx, HostEventKind::Creation)?;
        }
        for e in events {
            self.push(e.time, e.host_id.clone(), Queued::External(e.clone()));
        }
        for job in workload.jobs() {
            self.push(job.submit_time, job.id.clone(), Queued::Submit(job.clone()));
        }
        for idx in 0..self.hosts.len() {
            let times: Vec<f64> = self.hosts[idx].ci.breakpoints_after(0.0).collect();
            for t in times {
                let key = self.hosts[idx].spec.id.clone();
                self.push(t, key, Queued::CiBreakpoint { host: idx });
            }
        }

        while let Some(Reverse(head)) = self.queue.peek() {
            if self.active == 0 && !self.end_time.is_some_and(|end| head.time <= end) {
                break;
            }
            let Reverse(entry) = self.queue.pop().expect("peeked");
            if !entry.event.is_passive() {
                self.active -= 1;
            }
            self.now = entry.time;
            self.dispatch(entry.event)?;

            let batch_done = self.queue.peek().is_none_or(|Reverse(n)| n.time > self.now);
            if batch_done {
                self.start_jobs()?;
            }
        }

        let end = self.end_time.map_or(self.now, |e| e.max(self.now));
        self.now = end;
        for idx in 0..self.hosts.len() {
            self.notify(idx, HostEventKind::Destruction)?;
        }

        Ok(SimulationResult {
            trace: self.trace,
            per_host_summary: self.hosts.iter().map(HostRuntime::summary).collect(),
            makespan: self.makespan,
            end_time: end,
            jobs: self.runs,
            rejected_jobs: self.rejected,
            unstarted_jobs: self.pending.into_iter().map(|j| j.id).collect(),
        })
    }

    fn dispatch(&mut self, event: Queued) -> Result<(), SimError> {
        match event {
            Queued::External(e) => self.apply_external(e),
            Queued::CiBreakpoint { host } => self.notify(host, HostEventKind::CiChange),
            Queued::JobEnd { run, host } => {
                let job_id = self.runs[run].job_id.clone();
                self.notify(host, HostEventKind::JobEnd { job_id })?;
                self.hosts[host].busy_cores -= self.runs[run].cores;
                self.makespan = self.makespan.max(self.now);
                self.record(EventType::JobEnd)
            }
            Queued::Submit(job) => {
                let max_cores = self.hosts.iter().map(|h| h.spec.core_count).max().unwrap_or(0);
                if job.cores_requested > max_cores {
                    warn!(
                        "rejecting job {}: requests {} cores, largest host has {}",
                        job.id, job.cores_requested, max_cores
                    );
                    self.rejected.push(job.id);
                } else {
                    self.pending.push_back(job);
                }
                Ok(())
            }
        }
    }

    fn apply_external(&mut self, e: ExternalEvent) -> Result<(), SimError> {
        let idx = self.host_index(&e.host_id).expect("hosts checked before run");
        match e.action {
            EventAction::PowerOn => {
                if self.hosts[idx].mode == PowerMode::On {
                    warn!("t={}: host {} is already on", e.time, e.host_id);
                    return Ok(());
                }
                self.notify(idx, HostEventKind::PowerOn)?;
                self.hosts[idx].mode = PowerMode::On;
                self.record(EventType::PowerChange)
            }
            EventAction::PowerOff => {
                let host = &self.hosts[idx];
                if host.mode == PowerMode::Off {
                    warn!("t={}: host {} is already off", e.time, e.host_id);
                    return Ok(());
                }
                if host.busy_cores > 0 {
                    return Err(SimError::PreemptionUnsupported {
                        time: e.time,
                        host: e.host_id,
                        busy: host.busy_cores,
                    });
                }
                self.notify(idx, HostEventKind::PowerOff)?;
                self.hosts[idx].mode = PowerMode::Off;
                self.record(EventType::PowerChange)
            }
            EventAction::SetCi(value) => {
                let series = CarbonIntensitySeries::constant(value)?;
                self.notify(idx, HostEventKind::CiChange)?;
                self.hosts[idx].ci = series;
                Ok(())
            }
        }
    }

    fn start_jobs(&mut self) -> Result<(), SimError> {
        let pending = self.pending.make_contiguous();
        let assignments = schedule_fcfs(pending, &self.hosts, self.now);
        if assignments.is_empty() {
            return Ok(());
        }
        let started: Vec<Job> = self.pending.drain(..assignments.len()).collect();
        for (job, a) in started.into_iter().zip(assignments) {
            let host = a.host_index;
            self.notify(host, HostEventKind::JobStart { job_id: job.id.clone() })?;
            self.hosts[host].busy_cores += job.cores_requested;
            let duration = job_duration(job.flop_total, job.cores_requested, self.hosts[host].spec.speed_per_core);
            let end = self.now + duration;
            self.runs.push(JobRun {
                job_id: job.id.clone(),
                host_id: self.hosts[host].spec.id.clone(),
                start: self.now,
                end,
                cores: job.cores_requested,
            });
            let run = self.runs.len() - 1;
            self.push(end, job.id, Queued::JobEnd { run, host });
            self.record(EventType::JobStart)?;
        }
        Ok(())
    }
}

/// Runs one simulation of `workload` and scripted `events` on `platform`.
pub fn run_simulation(
    platform: &PlatformSpec,
    workload: &Workload,
    events: &[ExternalEvent],
    options: &SimOptions,
) -> Result<SimulationResult, SimError> {
    Engine::new(platform, options)?.run(workload, events)
}
