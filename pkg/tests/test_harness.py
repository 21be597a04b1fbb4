"""Experiment harness tests: scenario generator, presets, regressions, splits."""

import json
from datetime import datetime, timedelta, timezone

import pytest

from confine.eventlog import Event, EventLog, PartitionError, parse_csv, partition_by_org
from confine.harness import (
    ALL_ACTIVITIES,
    LOOP_UNIT,
    MEMORY_PRESETS,
    REFERENCE_SCALABILITY_STATS,
    RegressionStats,
    SCALABILITY_TESTS,
    SCENARIO_ORG_MAP,
    SEPSIS_SCHEME_MAP,
    SPLIT_SCHEMES,
    ScenarioParams,
    VARIANT_SPECIALIZED,
    VARIANT_STANDARD,
    activity_org_map,
    generate_scenario_log,
    run_convergence,
    run_memory_experiment,
    run_protocol,
    run_scalability_suite,
    split_real_log,
    standalone_net,
    write_scenario_files,
)
from confine.hminer import serialize_net
from confine.miner import STAGES
from confine.wire import KIB


# ---------------------------------------------------------------------------
# scenario generator


def test_activity_inventory():
    assert len(ALL_ACTIVITIES) == 19
    assert len(VARIANT_SPECIALIZED) == 18
    assert len(VARIANT_STANDARD) == 12
    assert set(VARIANT_SPECIALIZED) | set(VARIANT_STANDARD) == set(ALL_ACTIVITIES)
    assert LOOP_UNIT == VARIANT_SPECIALIZED[:16]


def test_generate_counts_and_lengths():
    log, org_map = generate_scenario_log(ScenarioParams(cases=200, seed=7))
    assert len(log.cases) == 200
    assert log.case_refs()[0] == "case00000"
    assert log.case_refs()[-1] == "case00199"
    assert {len(view.events) for view in log.cases.values()} == {12, 18}
    assert org_map == SCENARIO_ORG_MAP
    assert all(ev.org == org_map[ev.activity] for ev in log.events())


def test_generate_mean_length_near_mixture():
    log, _ = generate_scenario_log(ScenarioParams(cases=3000, seed=5))
    mean = log.event_count() / len(log.cases)
    assert abs(mean - 14.0) < 0.3  # 2/3 * 12 + 1/3 * 18


@pytest.mark.parametrize("x", [2, 5, 16])
def test_loop_iterations_stretch_specialized_variant(x):
    log, _ = generate_scenario_log(ScenarioParams(cases=60, loop_iterations=x, seed=11))
    lengths = {len(view.events) for view in log.cases.values()}
    assert lengths == {12, 16 * x + 2}


def test_generator_is_deterministic_per_seed():
    a1, _ = generate_scenario_log(ScenarioParams(cases=60, seed=1))
    a2, _ = generate_scenario_log(ScenarioParams(cases=60, seed=1))
    b, _ = generate_scenario_log(ScenarioParams(cases=60, seed=2))
    from confine.eventlog import serialize_log

    assert serialize_log(a1) == serialize_log(a2)
    assert serialize_log(a1) != serialize_log(b)


def test_generator_timing_grid():
    log, _ = generate_scenario_log(ScenarioParams(cases=3, seed=9))
    base = datetime(2022, 7, 14, 8, 0, tzinfo=timezone.utc)
    view = log.cases["case00002"]
    assert view.events[0].timestamp == base + timedelta(seconds=120)
    steps = [
        (b.timestamp - a.timestamp).total_seconds()
        for a, b in zip(view.events, view.events[1:])
    ]
    assert steps == [60.0] * (len(view.events) - 1)


def test_seq_hints_follow_global_time_order():
    log, _ = generate_scenario_log(ScenarioParams(cases=20, seed=3))
    events = sorted(log.events(), key=lambda ev: ev.seq_hint)
    assert [ev.seq_hint for ev in events] == list(range(log.event_count()))
    assert all(
        a.timestamp <= b.timestamp for a, b in zip(events, events[1:])
    )


def test_org_map_three_way_pools():
    m = activity_org_map(3)
    assert m == SCENARIO_ORG_MAP
    pools = {}
    for act, org in m.items():
        pools.setdefault(org, set()).add(act)
    assert len(pools["H"]) == 11
    assert len(pools["P"]) == 3
    assert len(pools["C"]) == 5


def test_org_map_round_robin():
    m = activity_org_map(5)
    assert set(m) == set(ALL_ACTIVITIES)
    counts = {}
    for org in m.values():
        counts[org] = counts.get(org, 0) + 1
    assert counts == {"O1": 4, "O2": 4, "O3": 4, "O4": 4, "O5": 3}


@pytest.mark.parametrize(
    "kw",
    [
        {"cases": -1},
        {"specialized_care_prob": 1.5},
        {"loop_iterations": 0},
        {"org_count": 0},
    ],
)
def test_params_validation(kw):
    with pytest.raises(ValueError):
        ScenarioParams(**kw)


# ---------------------------------------------------------------------------
# protocol drivers


def test_run_convergence_loopback():
    res = run_convergence(ScenarioParams(cases=40, seed=3), seg_size=100 * KIB)
    assert res.equal
    assert res.case_count == 40
    assert res.event_count in range(40 * 12, 40 * 18 + 1)
    assert res.peak_bytes > 0
    assert res.elapsed_s >= 0.0
    assert serialize_net(res.confine_net) == serialize_net(res.standalone)


def test_run_convergence_networked():
    res = run_convergence(ScenarioParams(cases=20, seed=4), networked=True)
    assert res.equal


def test_run_protocol_incremental_equivalence():
    log, org_map = generate_scenario_log(ScenarioParams(cases=50, seed=8))
    parts = partition_by_org(log, org_map)
    one = run_protocol(parts, seg_size=4 * KIB)
    inc = run_protocol(parts, seg_size=4 * KIB, mode="incremental", batch_cases=10)
    assert serialize_net(one.net) == serialize_net(inc.net)
    assert one.budget.in_use == 0 and inc.budget.in_use == 0


# ---------------------------------------------------------------------------
# memory presets


def test_memory_stage_profile(tmp_path):
    summary = run_memory_experiment(
        "stage_profile", out_dir=tmp_path, params=ScenarioParams(cases=30, seed=2)
    )
    assert summary["preset"] == "stage_profile"
    assert summary["final_in_use"] == 0
    assert summary["peak_bytes"] > 0
    assert summary["stages"] == sorted(STAGES)
    assert (tmp_path / "stage_profile_metrics.csv").exists()
    assert (tmp_path / "stage_profile_summary.json").exists()


def test_memory_with_without_compute(tmp_path):
    summary = run_memory_experiment(
        "with_without_compute", out_dir=tmp_path, params=ScenarioParams(cases=30, seed=2)
    )
    runs = summary["runs"]
    assert runs["with_compute"]["final_in_use"] == 0
    assert runs["without_compute"]["final_in_use"] == 0
    # mining charges the statistics while case buffers are still held
    assert runs["with_compute"]["peak_bytes"] >= runs["without_compute"]["peak_bytes"]
    assert (tmp_path / "with_compute_metrics.csv").exists()
    assert (tmp_path / "without_compute_metrics.csv").exists()


def test_memory_segsize_sweep(tmp_path):
    summary = run_memory_experiment(
        "segsize_sweep",
        out_dir=tmp_path,
        params=ScenarioParams(cases=40, seed=2),
        sweep_sizes=(4 * KIB, 64 * KIB),
    )
    rows = {r["seg_size"]: r for r in summary["sweep"]}
    assert rows[4 * KIB]["status"] == "ok"
    assert rows[64 * KIB]["status"] == "ok"
    assert not rows[4 * KIB]["single_segment"]
    assert rows[64 * KIB]["single_segment"]
    assert rows[4 * KIB]["peak_bytes"] <= rows[64 * KIB]["peak_bytes"]
    assert (tmp_path / "segsize_sweep_summary.csv").exists()


def test_memory_sweep_reports_capacity_exhaustion(tmp_path):
    summary = run_memory_experiment(
        "segsize_sweep",
        out_dir=tmp_path,
        params=ScenarioParams(cases=40, seed=2),
        sweep_sizes=(64 * KIB,),
        capacity=2000,
    )
    (row,) = summary["sweep"]
    assert row["status"] == "memory_exceeded"
    assert "capacity" in row["error"]


def test_memory_unknown_preset():
    with pytest.raises(ValueError, match="unknown preset"):
        run_memory_experiment("nope")
    assert "stage_profile" in MEMORY_PRESETS


# ---------------------------------------------------------------------------
# regression statistics


def test_regression_recovers_perfect_linear_trend():
    xs = list(range(1, 9))
    ys = [3.0 * x + 7.0 for x in xs]
    stats = RegressionStats.fit(xs, ys)
    assert abs(stats.r2_lin - 1.0) < 1e-9
    assert abs(stats.slope_hat - 3.0) < 1e-9
    assert 0.0 < stats.r2_log < 0.999


def test_regression_recovers_perfect_log_trend():
    import math

    xs = list(range(1, 9))
    ys = [2.0 * math.log(x) + 5.0 for x in xs]
    stats = RegressionStats.fit(xs, ys)
    assert abs(stats.r2_log - 1.0) < 1e-9
    assert stats.r2_lin < 0.999


@pytest.mark.parametrize("xs,ys", [([], []), ([1.0], [2.0])])
def test_regression_too_few_points(xs, ys):
    assert RegressionStats.fit(xs, ys) == RegressionStats(0.0, 0.0, 0.0)


def test_regression_zero_variance_reports_zero():
    flat = RegressionStats.fit([1, 2, 3, 4], [5.0, 5.0, 5.0, 5.0])
    assert flat.r2_lin == 0.0 and flat.r2_log == 0.0
    same_x = RegressionStats.fit([2, 2, 2], [1.0, 2.0, 3.0])
    assert same_x == RegressionStats(0.0, 0.0, 0.0)


def test_regression_length_mismatch():
    with pytest.raises(ValueError):
        RegressionStats.fit([1, 2], [1.0])


def test_reference_stats_shape():
    assert set(REFERENCE_SCALABILITY_STATS) == set(SCALABILITY_TESTS)
    for per_seg in REFERENCE_SCALABILITY_STATS.values():
        for stats in per_seg.values():
            assert set(stats) == {"r2_lin", "slope_hat", "r2_log"}
            assert all(isinstance(v, float) for v in stats.values())


# ---------------------------------------------------------------------------
# scalability suite


def test_scalability_suite_small_grid(tmp_path):
    summary = run_scalability_suite(
        "cases", out_dir=tmp_path, xs=(8, 16), seg_sizes=(100 * KIB,)
    )
    assert summary["all_converged"]
    assert len(summary["cells"]) == 2
    assert all(c["converged"] for c in summary["cells"])
    reg = summary["regressions"][str(100 * KIB)]
    assert set(reg) == {"r2_lin", "r2_log", "slope_hat"}
    assert summary["reference_stats"] == REFERENCE_SCALABILITY_STATS["cases"]
    assert (tmp_path / "scale_cases_summary.json").exists()
    assert (tmp_path / "scale_cases_cells.csv").exists()


def test_scalability_unknown_test():
    with pytest.raises(ValueError, match="unknown test"):
        run_scalability_suite("latency")


# ---------------------------------------------------------------------------
# real-log splitting


def _toy_log(rows):
    base = datetime(2022, 1, 1, tzinfo=timezone.utc)
    events = [
        Event(ref, act, base + timedelta(minutes=i), org, seq_hint=i)
        for i, (ref, act, org) in enumerate(rows)
    ]
    return EventLog.from_events(events)


def test_split_sepsis_care_paths():
    log = _toy_log([
        ("s1", "ER Registration", ""),
        ("s1", "ER Triage", ""),
        ("s1", "Admission IC", ""),
        ("s2", "ER Registration", ""),
        ("s2", "Admission NC", ""),
        ("s2", "Release A", ""),
    ])
    parts = split_real_log(log, "sepsis_care_paths")
    assert set(parts) == {"intensive_care", "normal_care"}
    assert parts["intensive_care"].event_count() == 1
    assert parts["normal_care"].event_count() == 5
    assert set(SEPSIS_SCHEME_MAP.values()) == {"intensive_care", "normal_care"}


def test_split_sepsis_rejects_unknown_activity():
    log = _toy_log([("s1", "ER Registration", ""), ("s1", "Surgery", "")])
    with pytest.raises(PartitionError, match="Surgery"):
        split_real_log(log, "sepsis_care_paths")


def test_split_departments_by_org_field():
    log = _toy_log([
        ("c1", "A", "D1"), ("c1", "B", "D2"), ("c1", "C", "D3"),
        ("c2", "A", "D1"), ("c2", "C", "D3"),
    ])
    parts = split_real_log(log, "bpic_departments")
    assert set(parts) == {"D1", "D2", "D3"}
    assert parts["D1"].event_count() == 2
    assert parts["D2"].event_count() == 1
    assert parts["D3"].event_count() == 2


def test_split_departments_needs_exactly_three():
    log = _toy_log([("c1", "A", "D1"), ("c1", "B", "D2")])
    with pytest.raises(ValueError, match="exactly 3"):
        split_real_log(log, "bpic_departments")


def test_split_departments_needs_org_values():
    log = _toy_log([("c1", "A", "D1"), ("c1", "B", "D2"), ("c1", "C", "")])
    with pytest.raises(ValueError, match="org value"):
        split_real_log(log, "bpic_departments")


def test_split_custom_map_partitions():
    log = _toy_log([("c1", "A", ""), ("c1", "B", ""), ("c2", "A", "")])
    parts = split_real_log(log, {"A": "X", "B": "Y"})
    assert set(parts) == {"X", "Y"}
    assert parts["X"].event_count() == 2
    # identical to calling the partitioner directly
    direct = partition_by_org(log, {"A": "X", "B": "Y"})
    assert {o: p.event_count() for o, p in parts.items()} == {
        o: p.event_count() for o, p in direct.items()
    }


def test_split_unknown_scheme():
    log = _toy_log([("c1", "A", "")])
    with pytest.raises(ValueError, match="unknown scheme"):
        split_real_log(log, "by_vibes")
    assert "sepsis_care_paths" in SPLIT_SCHEMES


# ---------------------------------------------------------------------------
# scenario file output


def test_write_scenario_files(tmp_path):
    params = ScenarioParams(cases=12, seed=6)
    log_path, map_path = write_scenario_files(tmp_path, params)
    assert log_path.name == "scenario_log.csv"
    assert map_path.name == "activity_org_map.json"
    round_trip = parse_csv(log_path.read_text(encoding="utf-8"))
    expected, org_map = generate_scenario_log(params)
    assert round_trip.case_refs() == expected.case_refs()
    assert round_trip.event_count() == expected.event_count()
    assert json.loads(map_path.read_text(encoding="utf-8")) == org_map


def test_protocol_standalone_agreement_is_meaningful():
    # same data, different org carve-up: the protocol result must not move
    log, _ = generate_scenario_log(ScenarioParams(cases=25, seed=13))
    ref = serialize_net(standalone_net(log))
    for k in (2, 5):
        parts = partition_by_org(log, activity_org_map(k))
        session = run_protocol(parts, seg_size=8 * KIB)
        assert serialize_net(session.net) == ref
