//! Jobs, workloads and scripted external events.

use std::collections::HashSet;
use std::fmt;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("job #{index}: missing field {field:?}")]
    MissingField { index: usize, field: &'static str },
    #[error("job #{index}: field {field:?} must be {expected}")]
    InvalidField {
        index: usize,
        field: &'static str,
        expected: &'static str,
    },
    #[error("duplicate job id {0:?}")]
    DuplicateJobId(String),
    #[error("events line {line}: unknown action {action:?}")]
    UnknownAction { line: usize, action: String },
    #[error("events line {line}: set_ci requires a value")]
    MissingCiValue { line: usize },
    #[error("events line {line}: {message}")]
    MalformedEvent { line: usize, message: String },
    #[error("events line {line}: negative time {time}")]
    NegativeTime { line: usize, time: f64 },
    #[error("reading events: {0}")]
    Csv(#[from] csv::Error),
}

/// A unit of FLOP-denominated work that occupies whole cores on a single host.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub id: String,
    pub submit_time: f64,
    pub flop_total: f64,
    pub cores_requested: u32,
}

/// Jobs sorted by submit time, ties broken by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workload {
    jobs: Vec<Job>,
}

impl Workload {
    pub fn new(mut jobs: Vec<Job>) -> Result<Self, WorkloadError> {
        let mut ids = HashSet::new();
        for (index, job) in jobs.iter().enumerate() {
            if !ids.insert(job.id.as_str()) {
                return Err(WorkloadError::DuplicateJobId(job.id.clone()));
            }
            check_job(index, job)?;
        }
        jobs.sort_by(|a, b| a.submit_time.total_cmp(&b.submit_time).then_with(|| a.id.cmp(&b.id)));
        Ok(Self { jobs })
    }

    pub fn jobs(&self) -> &[Job] {
        &self.jobs
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }
}

fn check_job(index: usize, job: &Job) -> Result<(), WorkloadError> {
    let invalid = |field, expected| WorkloadError::InvalidField { index, field, expected };
    if !(job.submit_time.is_finite() && job.submit_time >= 0.0) {
        return Err(invalid("subtime", "a non-negative number"));
    }
    if !(job.flop_total.is_finite() && job.flop_total >= 0.0) {
        return Err(invalid("flops", "a non-negative number"));
    }
    if job.cores_requested == 0 {
        return Err(invalid("cores", "a positive integer"));
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawJob {
    id: Option<serde_json::Value>,
    subtime: Option<f64>,
    cores: Option<serde_json::Value>,
    flops: Option<f64>,
}

/// Parses a JSON array of `{id, subtime, cores, flops}` objects.
pub fn parse_workload(document: &str) -> Result<Workload, WorkloadError> {
    let raw: Vec<RawJob> = serde_json::from_str(document)?;
    let mut jobs = Vec::with_capacity(raw.len());
    for (index, r) in raw.into_iter().enumerate() {
        let missing = |field| WorkloadError::MissingField { index, field };
        let id = match r.id.ok_or_else(|| missing("id"))? {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            _ => {
                return Err(WorkloadError::InvalidField {
                    index,
                    field: "id",
                    expected: "a string or number",
                })
            }
        };
        let cores = r
            .cores
            .ok_or_else(|| missing("cores"))?
            .as_u64()
            .and_then(|c| u32::try_from(c).ok())
            .ok_or(WorkloadError::InvalidField {
                index,
                field: "cores",
                expected: "a positive integer",
            })?;
        jobs.push(Job {
            id,
            submit_time: r.subtime.ok_or_else(|| missing("subtime"))?,
            flop_total: r.flops.ok_or_else(|| missing("flops"))?,
            cores_requested: cores,
        });
    }
    Workload::new(jobs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventAction {
    PowerOn,
    PowerOff,
    /// Replace the host's carbon intensity with this constant (g/kWh).
    SetCi(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalEvent {
    pub time: f64,
    pub host_id: String,
    pub action: EventAction,
}

impl fmt::Display for ExternalEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.action {
            EventAction::PowerOn => write!(f, "{},{},power_on", self.time, self.host_id),
            EventAction::PowerOff => write!(f, "{},{},power_off", self.time, self.host_id),
            EventAction::SetCi(v) => write!(f, "{},{},set_ci,{}", self.time, self.host_id, v),
        }
    }
}

/// Parses `time,host_id,action[,value]` lines. A leading header row is skipped.
/// The result is stably sorted by time.
pub fn parse_events(document: &str) -> Result<Vec<ExternalEvent>, WorkloadError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(document.as_bytes());
    let mut events = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if record.len() < 3 {
            if i == 0 && record.get(0) == Some("time") {
                continue;
            }
            return Err(WorkloadError::MalformedEvent {
                line,
                message: format!("expected at least 3 fields, found {}", record.len()),
            });
        }
        let time = match record[0].parse::<f64>() {
            Ok(t) => t,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(WorkloadError::MalformedEvent {
                    line,
                    message: format!("non-numeric time {:?}", &record[0]),
                })
            }
        };
        if !time.is_finite() || time < 0.0 {
            return Err(WorkloadError::NegativeTime { line, time });
        }
        let action = match &record[2] {
            "power_on" => EventAction::PowerOn,
            "power_off" => EventAction::PowerOff,
            "set_ci" => {
                let raw = record.get(3).filter(|v| !v.is_empty());
                let value = raw
                    .ok_or(WorkloadError::MissingCiValue { line })?
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| WorkloadError::MalformedEvent {
                        line,
                        message: format!("invalid carbon intensity {:?}", raw.unwrap_or_default()),
                    })?;
                EventAction::SetCi(value)
            }
            other => {
                return Err(WorkloadError::UnknownAction {
                    line,
                    action: other.to_string(),
                })
            }
        };
        events.push(ExternalEvent {
            time,
            host_id: record[1].to_string(),
            action,
        });
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(events)
}

pub fn serialize_events(events: &[ExternalEvent]) -> String {
    let mut out = String::from("time,host_id,action,value\n");
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}
