//! Host power model and joule accounting.

use thiserror::Error;

use crate::engine::HostRuntime;
use crate::platform::PowerProfile;

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("busy cores {busy} outside [0, {cores}]")]
    BusyCoresOutOfRange { busy: u32, cores: u32 },
    #[error("clock regression: interval end {t1} precedes start {t0}")]
    ClockRegression { t0: f64, t1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PowerMode {
    Off,
    On,
}

/// Power drawn by a host at a given instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSample {
    pub host_id: String,
    pub time: f64,
    pub power_w: f64,
}

/// Instantaneous power of a host with `busy_cores` of `core_count` cores in use.
///
/// One busy core draws `epsilon_w`, all cores draw `allcores_w`, and the
/// levels in between are linear in the number of busy cores.
pub fn instantaneous_power(
    profile: &PowerProfile,
    mode: PowerMode,
    busy_cores: u32,
    core_count: u32,
) -> Result<f64, EnergyError> {
    if busy_cores > core_count {
        return Err(EnergyError::BusyCoresOutOfRange {
            busy: busy_cores,
            cores: core_count,
        });
    }
    Ok(match (mode, busy_cores) {
        (PowerMode::Off, 0) => profile.off_w,
        (PowerMode::Off, busy) => {
            return Err(EnergyError::BusyCoresOutOfRange { busy, cores: 0 });
        }
        (PowerMode::On, 0) => profile.idle_w,
        (PowerMode::On, _) if core_count == 1 => profile.allcores_w,
        (PowerMode::On, busy) => {
            let frac = (busy - 1) as f64 / (core_count - 1) as f64;
            profile.epsilon_w + (profile.allcores_w - profile.epsilon_w) * frac
        }
    })
}

/// Energy in joules drawn at constant `power_w` over `[t0, t1]`.
pub fn accumulate_energy(power_w: f64, t0: f64, t1: f64) -> Result<f64, EnergyError> {
    if t1 < t0 {
        return Err(EnergyError::ClockRegression { t0, t1 });
    }
    Ok(power_w * (t1 - t0))
}

/// Total joules across hosts. Callers settle every host to a common time first.
pub fn platform_energy<'a>(hosts: impl IntoIterator<Item = &'a HostRuntime>) -> f64 {
    hosts.into_iter().map(|h| h.energy_j).sum()
}
