//! Event trace and per-host summary output.

use std::fmt;
use std::io::Write;
use std::path::Path;

use crate::engine::HostRuntime;
use crate::energy::platform_energy;

pub const TRACE_HEADER: &str = "time,energy,carbon_emission,event_type,ecarbon";
pub const SUMMARY_HEADER: &str = "host_id,total_energy_j,total_carbon_g";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventType {
    JobStart,
    JobEnd,
    PowerChange,
}

impl EventType {
    pub fn code(self) -> char {
        match self {
            EventType::JobStart => 's',
            EventType::JobEnd => 'e',
            EventType::PowerChange => 'p',
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        match code {
            "s" => Some(EventType::JobStart),
            "e" => Some(EventType::JobEnd),
            "p" => Some(EventType::PowerChange),
            _ => None,
        }
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// One row of the event trace. Energy and carbon are platform-wide cumulatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub energy_j: f64,
    pub carbon_g: f64,
    pub event_type: EventType,
    /// Average platform emission rate (g/s) since the previous record.
    pub ecarbon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HostSummary {
    pub host_id: String,
    pub energy_j: f64,
    pub carbon_g: f64,
}

/// Builds a record from hosts already settled at `time`.
pub fn record_event(
    hosts: &[HostRuntime],
    time: f64,
    event_type: EventType,
    prev: Option<&TraceRecord>,
) -> TraceRecord {
    let energy_j = platform_energy(hosts);
    let carbon_g: f64 = hosts.iter().map(|h| h.carbon.carbon_g).sum();
    let ecarbon = match prev {
        Some(p) if time > p.time => (carbon_g - p.carbon_g) / (time - p.time),
        _ => 0.0,
    };
    TraceRecord {
        time,
        energy_j,
        carbon_g,
        event_type,
        ecarbon,
    }
}

/// Renders a float with at most six digits after the decimal point, trailing zeros trimmed.
pub fn format_float(value: f64) -> String {
    let mut s = format!("{value:.6}");
    if s.contains('.') {
        let trimmed = s.trim_end_matches('0').trim_end_matches('.').len();
        s.truncate(trimmed);
    }
    if s == "-0" {
        s = "0".into();
    }
    s
}

pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(32 * (records.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            format_float(r.time),
            format_float(r.energy_j),
            format_float(r.carbon_g),
            r.event_type,
            format_float(r.ecarbon)
        ));
    }
    out
}

pub fn render_summary(hosts: &[HostSummary]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for h in hosts {
        out.push_str(&format!(
            "{},{},{}\n",
            h.host_id,
            format_float(h.energy_j),
            format_float(h.carbon_g)
        ));
    }
    out
}

/// Writes `contents` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_trace(records: &[TraceRecord], path: &Path) -> std::io::Result<()> {
    write_atomic(path, &render_trace(records))
}

pub fn write_summary(hosts: &[HostSummary], path: &Path) -> std::io::Result<()> {
    write_atomic(path, &render_summary(hosts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(time: f64, carbon_g: f64) -> TraceRecord {
        TraceRecord {
            time,
            energy_j: 0.0,
            carbon_g,
            event_type: EventType::JobEnd,
            ecarbon: 0.0,
        }
    }

    fn host_with_carbon(carbon_g: f64) -> HostRuntime {
        use crate::carbon::CarbonIntensitySeries;
        use crate::platform::{CiSource, HostSpec, PowerProfile};
        let spec = HostSpec {
            id: "h".into(),
            core_count: 1,
            speed_per_core: 1.0,
            profile: PowerProfile::new(0.0, 0.0, 0.0, 0.0).unwrap(),
            ci_source: CiSource::Constant(0.0),
        };
        let mut h = HostRuntime::new(spec, CarbonIntensitySeries::Constant(0.0));
        h.carbon.carbon_g = carbon_g;
        h
    }

    #[test]
    fn ecarbon_rules() {
        let first = record_event(&[host_with_carbon(0.0)], 0.0, EventType::JobStart, None);
        assert_eq!(first.ecarbon, 0.0);

        let later = record_event(&[host_with_carbon(1.0)], 3600.0, EventType::JobEnd, Some(&first));
        assert_eq!(later.ecarbon, 1.0 / 3600.0);

        let same_time = record_event(&[host_with_carbon(2.0)], 3600.0, EventType::JobEnd, Some(&later));
        assert_eq!(same_time.ecarbon, 0.0);
    }

    #[test]
    fn float_format() {
        assert_eq!(format_float(144_000.0), "144000");
        assert_eq!(format_float(2.5277777777), "2.527778");
        assert_eq!(format_float(0.5), "0.5");
        assert_eq!(format_float(0.0), "0");
        assert_eq!(format_float(-0.0), "0");
        assert_eq!(format_float(1.0 / 3600.0), "0.000278");
    }

    #[test]
    fn rendering() {
        assert_eq!(render_trace(&[]), format!("{TRACE_HEADER}\n"));
        let one = render_trace(&[TraceRecord {
            time: 2.5,
            energy_j: 101.1,
            carbon_g: 0.002762,
            event_type: EventType::JobEnd,
            ecarbon: 0.001,
        }]);
        assert_eq!(one, "time,energy,carbon_emission,event_type,ecarbon\n2.5,101.1,0.002762,e,0.001\n");
        assert_eq!(one.lines().count(), 2);

        let hosts = [
            HostSummary {
                host_id: "a".into(),
                energy_j: 144_000.0,
                carbon_g: 3.93392,
            },
            HostSummary {
                host_id: "b".into(),
                energy_j: 1.0,
                carbon_g: 0.0,
            },
        ];
        assert_eq!(
            render_summary(&hosts),
            "host_id,total_energy_j,total_carbon_g\na,144000,3.93392\nb,1,0\n"
        );
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_trace(&[], &path).unwrap();
        write_trace(&[rec(1.0, 0.0)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
