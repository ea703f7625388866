//! Carbon-footprint accounting.
//!
//! Every settlement of a host over `[t0, t1]` prices the energy drawn in that
//! interval with the carbon intensity in force at `t0`:
//!
//! ```text
//! E_step     = P(t0) * (t1 - t0)            [J]
//! E_step_kWh = E_step / 3.6e6               [kWh]
//! C_step     = E_step_kWh * CI(t0)          [g]
//! C_total   += C_step
//! ```
//!
//! Step-trace breakpoints are injected as engine events, so an interval never
//! straddles a change of intensity and the scheme is exact for step traces.

use std::path::Path;

use thiserror::Error;

use crate::energy::EnergyError;
use crate::engine::{Engine, HostRuntime, Settlement, SimError, Subscription};

/// Joules in one kilowatt-hour.
pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Error)]
pub enum CarbonError {
    #[error("negative or non-finite carbon intensity {0}")]
    NegativeIntensity(f64),
    #[error("carbon intensity trace is empty")]
    EmptyTrace,
    #[error("carbon intensity trace times must strictly increase (row {row}: {time} after {previous})")]
    UnorderedTrace { row: usize, time: f64, previous: f64 },
    #[error("carbon intensity trace row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("reading carbon intensity trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("reading carbon intensity trace {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Energy(#[from] EnergyError),
}

/// Carbon intensity in g/kWh as a function of simulated time.
#[derive(Debug, Clone, PartialEq)]
pub enum CarbonIntensitySeries {
    Constant(f64),
    /// Piecewise-constant trace of `(time_s, g_per_kwh)` points, strictly increasing in time.
    Step(Vec<(f64, f64)>),
}

impl CarbonIntensitySeries {
    pub fn constant(value: f64) -> Result<Self, CarbonError> {
        check_intensity(value)?;
        Ok(Self::Constant(value))
    }

    pub fn step(points: Vec<(f64, f64)>) -> Result<Self, CarbonError> {
        if points.is_empty() {
            return Err(CarbonError::EmptyTrace);
        }
        for (row, pair) in points.windows(2).enumerate() {
            // Negated so that NaN times are rejected too.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(pair[1].0 > pair[0].0) {
                return Err(CarbonError::UnorderedTrace {
                    row: row + 1,
                    time: pair[1].0,
                    previous: pair[0].0,
                });
            }
        }
        for &(t, v) in &points {
            if !t.is_finite() {
                return Err(CarbonError::MalformedRow {
                    row: 0,
                    message: format!("non-finite time {t}"),
                });
            }
            check_intensity(v)?;
        }
        Ok(Self::Step(points))
    }

    /// Intensity in force at `t`. Step traces hold their first value backward
    /// and their last value forward.
    pub fn ci_at(&self, t: f64) -> f64 {
        match self {
            Self::Constant(v) => *v,
            Self::Step(points) => {
                let idx = points.partition_point(|&(pt, _)| pt <= t);
                points[idx.saturating_sub(1)].1
            }
        }
    }

    /// Times strictly after `after` at which the intensity may change.
    pub fn breakpoints_after(&self, after: f64) -> impl Iterator<Item = f64> + '_ {
        let points: &[(f64, f64)] = match self {
            Self::Constant(_) => &[],
            Self::Step(points) => points,
        };
        points.iter().map(|&(t, _)| t).filter(move |&t| t > after)
    }
}

fn check_intensity(value: f64) -> Result<(), CarbonError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(CarbonError::NegativeIntensity(value))
    }
}

/// Parses a `time_s,ci_g_per_kwh` CSV; the header row is optional.
pub fn parse_ci_trace(text: &str) -> Result<CarbonIntensitySeries, CarbonError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(CarbonError::MalformedRow {
                row: row + 1,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let time = record[0].parse::<f64>();
        if row == 0 && time.is_err() {
            continue;
        }
        let time = time.map_err(|_| CarbonError::MalformedRow {
            row: row + 1,
            message: format!("non-numeric time {:?}", &record[0]),
        })?;
        let value = record[1].parse::<f64>().map_err(|_| CarbonError::MalformedRow {
            row: row + 1,
            message: format!("non-numeric intensity {:?}", &record[1]),
        })?;
        points.push((time, value));
    }
    CarbonIntensitySeries::step(points)
}

pub fn load_ci_trace(path: &Path) -> Result<CarbonIntensitySeries, CarbonError> {
    let text = std::fs::read_to_string(path).map_err(|source| CarbonError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ci_trace(&text)
}

/// Grams of CO2 for `energy_j` joules at `ci` g/kWh.
pub fn carbon_step(energy_j: f64, ci: f64) -> f64 {
    energy_j / JOULES_PER_KWH * ci
}

/// Cumulative footprint of one host.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CarbonAccount {
    pub carbon_g: f64,
    /// Grams added by the most recent settlement.
    pub last_step_g: f64,
}

impl CarbonAccount {
    pub(crate) fn add(&mut self, step_g: f64) {
        self.carbon_g += step_g;
        self.last_step_g = step_g;
    }
}

/// Attaches carbon pricing to `engine`: from then on every host notification
/// settles carbon as well as energy before the state change is applied.
pub fn register_callbacks(engine: &mut Engine<'_>) -> Result<Subscription, SimError> {
    engine.register_carbon()
}

/// Settles `host` up to `t1`, accruing both energy and carbon for `[last_update, t1]`.
pub fn update_host_footprint(host: &mut HostRuntime, t1: f64) -> Result<Settlement, CarbonError> {
    Ok(host.settle(t1, true)?)
}

/// Settles `host` at `t` under its old intensity, then prices everything after `t` at `value`.
pub fn set_carbon_intensity(host: &mut HostRuntime, value: f64, t: f64) -> Result<Settlement, CarbonError> {
    check_intensity(value)?;
    let settlement = update_host_footprint(host, t)?;
    host.ci = CarbonIntensitySeries::Constant(value);
    Ok(settlement)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::PowerMode;
    use crate::platform::{CiSource, HostSpec, PowerProfile};

    fn idle_host(ci: CarbonIntensitySeries) -> HostRuntime {
        let spec = HostSpec {
            id: "h0".into(),
            core_count: 6,
            speed_per_core: 12e9,
            profile: PowerProfile::new(10.0, 25.0, 40.0, 1.0).unwrap(),
            ci_source: CiSource::Constant(0.0),
        };
        HostRuntime::new(spec, ci)
    }

    fn two_step() -> CarbonIntensitySeries {
        CarbonIntensitySeries::step(vec![(0.0, 100.0), (3600.0, 200.0)]).unwrap()
    }

    #[test]
    fn ci_lookup() {
        assert_eq!(CarbonIntensitySeries::Constant(98.348).ci_at(5.0), 98.348);
        assert_eq!(two_step().ci_at(3599.9), 100.0);
        assert_eq!(two_step().ci_at(3600.0), 200.0);
        assert_eq!(two_step().ci_at(1e9), 200.0);
        let late = CarbonIntensitySeries::step(vec![(10.0, 50.0)]).unwrap();
        assert_eq!(late.ci_at(0.0), 50.0);
    }

    #[test]
    fn series_validation() {
        assert!(matches!(CarbonIntensitySeries::step(vec![]), Err(CarbonError::EmptyTrace)));
        assert!(matches!(
            CarbonIntensitySeries::step(vec![(0.0, 1.0), (0.0, 2.0)]),
            Err(CarbonError::UnorderedTrace { .. })
        ));
        assert!(matches!(
            CarbonIntensitySeries::step(vec![(0.0, -1.0)]),
            Err(CarbonError::NegativeIntensity(_))
        ));
        assert!(CarbonIntensitySeries::constant(-0.5).is_err());
    }

    #[test]
    fn trace_csv() {
        let with_header = parse_ci_trace("time_s,ci_g_per_kwh\n0,100\n3600,200\n").unwrap();
        assert_eq!(with_header, two_step());
        let bare = parse_ci_trace("0, 100\n3600, 200\n").unwrap();
        assert_eq!(bare, two_step());
        assert!(matches!(parse_ci_trace("time_s,ci\n"), Err(CarbonError::EmptyTrace)));
        assert!(matches!(parse_ci_trace("0,100\nx,3\n"), Err(CarbonError::MalformedRow { row: 2, .. })));
        assert!(matches!(parse_ci_trace("0,100,4\n"), Err(CarbonError::MalformedRow { .. })));
    }

    #[test]
    fn step_conversion() {
        assert_eq!(carbon_step(3.6e6, 100.0), 100.0);
        assert_eq!(carbon_step(0.0, 512.0), 0.0);
        // 46.296 s at 40 W, priced at 98.348 g/kWh
        let expected = 1851.85 / 3.6e6 * 98.348;
        assert!((carbon_step(1851.85, 98.348) - expected).abs() < 1e-15);
        // 1851.85 J = 5.14403e-4 kWh
        assert!((carbon_step(1851.85, 98.348) - 0.0505905).abs() < 1e-7);
    }

    #[test]
    fn footprint_update() {
        let mut host = idle_host(CarbonIntensitySeries::Constant(100.0));
        let s = update_host_footprint(&mut host, 36_000.0).unwrap();
        assert_eq!(host.energy_j, 360_000.0);
        assert!((host.carbon.carbon_g - 10.0).abs() < 1e-12);
        assert_eq!(s.c_step, host.carbon.last_step_g);
        assert_eq!(host.last_update, 36_000.0);

        let before = host.clone();
        update_host_footprint(&mut host, 36_000.0).unwrap();
        assert_eq!(host.energy_j, before.energy_j);
        assert_eq!(host.carbon.carbon_g, before.carbon.carbon_g);

        assert!(matches!(
            update_host_footprint(&mut host, 10.0),
            Err(CarbonError::Energy(EnergyError::ClockRegression { .. }))
        ));
    }

    #[test]
    fn footprint_over_two_steps() {
        let mut host = idle_host(two_step());
        update_host_footprint(&mut host, 3600.0).unwrap();
        update_host_footprint(&mut host, 7200.0).unwrap();
        // 0.01 kWh * 100 + 0.01 kWh * 200
        assert!((host.carbon.carbon_g - 3.0).abs() < 1e-12);
    }

    #[test]
    fn intensity_changes() {
        let mut host = idle_host(CarbonIntensitySeries::Constant(100.0));
        set_carbon_intensity(&mut host, 0.0, 3600.0).unwrap();
        update_host_footprint(&mut host, 7200.0).unwrap();
        assert!((host.carbon.carbon_g - 1.0).abs() < 1e-12);

        let mut a = idle_host(CarbonIntensitySeries::Constant(100.0));
        let mut b = a.clone();
        set_carbon_intensity(&mut a, 100.0, 1800.0).unwrap();
        update_host_footprint(&mut a, 3600.0).unwrap();
        update_host_footprint(&mut b, 3600.0).unwrap();
        assert!((a.carbon.carbon_g - b.carbon.carbon_g).abs() < 1e-12);

        let mut host = idle_host(CarbonIntensitySeries::Constant(100.0));
        host.mode = PowerMode::On;
        set_carbon_intensity(&mut host, 200.0, 3600.0).unwrap();
        let first_half = host.carbon.carbon_g;
        update_host_footprint(&mut host, 7200.0).unwrap();
        let second_half = host.carbon.carbon_g - first_half;
        assert!((second_half - 2.0 * first_half).abs() < 1e-12);

        assert!(matches!(
            set_carbon_intensity(&mut host, -1.0, 8000.0),
            Err(CarbonError::NegativeIntensity(_))
        ));
    }
}
