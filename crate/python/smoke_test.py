"""Quick end-to-end check of the carbon_sim_py extension module.

    pip install --no-build-isolation -e crates/py   # or: maturin develop -m crates/py/Cargo.toml
    python python/smoke_test.py
"""

from pathlib import Path

import carbon_sim_py as cs

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"


def close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(abs(a), abs(b), 1e-300)


def main():
    profile = cs.PowerProfile.parse("10:25:40", "1")
    assert [profile.power(b, 6) for b in (0, 1, 6)] == [10.0, 25.0, 40.0]
    assert profile.power(0, 6, on=False) == 1.0

    assert close(cs.carbon_step(3.6e6, 1000.0), 1000.0)
    assert close(cs.job_duration(182e9, 6, 12e9), 182 / 72)

    y = [1.0, 2.0, 3.0]
    assert (cs.r2(y, y), cs.mape(y, y), cs.rmse(y, y)) == (1.0, 0.0, 0.0)
    assert close(cs.r2(y, [3.0, 2.0, 1.0]), -3.0)

    xml = (SCENARIOS / "platforms" / "i5_resnet18.xml").read_text()
    platform = cs.parse_platform(xml)
    assert platform.host_ids == ["Intel_i5_11400H"]
    assert platform.validate() == []
    assert cs.parse_platform(platform.to_xml()).host_ids == platform.host_ids

    workload = (SCENARIOS / "workloads" / "resnet18.json").read_text()
    result = cs.simulate(xml, workload)
    assert [r[3] for r in result.trace] == ["s", "e"]
    assert close(result.makespan, 182 / 72)
    assert result.trace_csv().startswith("time,energy,carbon_emission,event_type,ecarbon\n")

    idle = cs.simulate(xml, "[]", until=3600.0)
    assert close(idle.total_energy_j, 36000.0)

    mixes = SCENARIOS / "platforms" / "i5_three_mixes.xml"
    mix_platform = cs.parse_platform(mixes.read_text())
    traces = {}
    for host in mix_platform.host_ids:
        ref = mix_platform.host(host).carbon_intensity_trace
        traces[ref] = (mixes.parent / ref).read_text()
    daily = cs.simulate(
        mixes.read_text(),
        (SCENARIOS / "workloads" / "daily_batch.json").read_text(),
        events_csv=(SCENARIOS / "events" / "power_cycle.csv").read_text(),
        ci_traces=traces,
    )
    assert len(daily.jobs) == 24 and not daily.unstarted_jobs
    assert close(sum(c for _, c in daily.hosts.values()), daily.total_carbon_g)

    try:
        cs.parse_platform("<platform><host id='x'/></platform>")
    except ValueError:
        pass
    else:
        raise AssertionError("invalid platform accepted")

    print(f"smoke test ok: daily batch {daily.total_energy_j:.1f} J, {daily.total_carbon_g:.3f} g")


if __name__ == "__main__":
    main()
