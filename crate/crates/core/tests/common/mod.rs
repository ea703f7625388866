#![allow(dead_code)]

use carbon_sim::platform::{CiSource, HostSpec, PlatformSpec, PowerProfile};
use carbon_sim::workload::{EventAction, ExternalEvent, Job, Workload};
use proptest::prelude::*;

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    let scale = a.abs().max(b.abs());
    scale == 0.0 || (a - b).abs() <= tol * scale
}

pub fn listing_host(speed: f64, ci: f64) -> HostSpec {
    HostSpec {
        id: "Intel_i5_11400H".into(),
        core_count: 6,
        speed_per_core: speed,
        profile: PowerProfile::new(10.0, 25.0, 40.0, 1.0).unwrap(),
        ci_source: CiSource::Constant(ci),
    }
}

/// Reference power model written out independently of the engine.
pub fn oracle_power(p: &PowerProfile, on: bool, busy: u32, cores: u32) -> f64 {
    if !on {
        p.off_w
    } else if busy == 0 {
        p.idle_w
    } else if busy == cores {
        p.allcores_w
    } else {
        let span = p.allcores_w - p.epsilon_w;
        p.epsilon_w + span * f64::from(busy - 1) / f64::from(cores - 1)
    }
}

/// Reference step lookup: last point at or before `t`, first value before the first point.
pub fn oracle_ci(points: &[(f64, f64)], t: f64) -> f64 {
    let mut v = points[0].1;
    for &(pt, pv) in points {
        if pt <= t {
            v = pv;
        }
    }
    v
}

/// Integrates `power(t) * ci(t)` on a uniform grid of width `dt`, sampling at
/// the middle of each cell. Returns (joules, grams).
pub fn brute_force(
    horizon: f64,
    dt: f64,
    power: impl Fn(f64) -> f64,
    ci: impl Fn(f64) -> f64,
) -> (f64, f64) {
    let steps = (horizon / dt).round() as u64;
    let mut energy = 0.0;
    let mut carbon = 0.0;
    for k in 0..steps {
        let mid = (k as f64 + 0.5) * dt;
        let e = power(mid) * dt;
        energy += e;
        carbon += e / 3.6e6 * ci(mid);
    }
    (energy, carbon)
}

prop_compose! {
    pub fn arb_profile()(idle in 0.0..50.0f64, de in 0.0..50.0f64, da in 0.0..100.0f64, off in 0.0..5.0f64) -> PowerProfile {
        PowerProfile::new(idle, idle + de, idle + de + da, off).unwrap()
    }
}

prop_compose! {
    pub fn arb_host(i: usize)(cores in 1u32..=8, speed in 1u32..=16, profile in arb_profile(), ci in 0.0..800.0f64) -> HostSpec {
        HostSpec {
            id: format!("h{i}"),
            core_count: cores,
            speed_per_core: f64::from(speed) * 0.5e9,
            profile,
            ci_source: CiSource::Constant(ci),
        }
    }
}

pub fn arb_platform() -> impl Strategy<Value = PlatformSpec> {
    (1usize..=4)
        .prop_flat_map(|n| (0..n).map(arb_host).collect::<Vec<_>>())
        .prop_map(|hosts| PlatformSpec { hosts })
}

prop_compose! {
    pub fn arb_job(i: usize)(submit in 0u32..100, cores in 1u32..=8, gflop in 0u32..2000) -> Job {
        Job {
            id: format!("j{i:02}"),
            submit_time: f64::from(submit),
            flop_total: f64::from(gflop) * 1e9,
            cores_requested: cores,
        }
    }
}

pub fn arb_workload() -> impl Strategy<Value = Workload> {
    (0usize..=20)
        .prop_flat_map(|n| (0..n).map(arb_job).collect::<Vec<_>>())
        .prop_map(|jobs| Workload::new(jobs).unwrap())
}

/// Power cycles that never hit a busy host: hosts go off at t = 0 (before any
/// job can start) and come back on later.
pub fn arb_power_cycles(hosts: usize) -> impl Strategy<Value = Vec<ExternalEvent>> {
    proptest::collection::vec(proptest::option::of(1u32..200), hosts).prop_map(|cycles| {
        let mut events = Vec::new();
        for (i, on_at) in cycles.into_iter().enumerate() {
            if let Some(t) = on_at {
                events.push(ExternalEvent {
                    time: 0.0,
                    host_id: format!("h{i}"),
                    action: EventAction::PowerOff,
                });
                events.push(ExternalEvent {
                    time: f64::from(t),
                    host_id: format!("h{i}"),
                    action: EventAction::PowerOn,
                });
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        events
    })
}

pub fn arb_scenario() -> impl Strategy<Value = (PlatformSpec, Workload, Vec<ExternalEvent>)> {
    arb_platform().prop_flat_map(|p| {
        let n = p.hosts.len();
        (Just(p), arb_workload(), arb_power_cycles(n))
    })
}
