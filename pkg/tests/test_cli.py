"""Scenario config and CLI pipeline tests.

Covers config defaults and field-path validation errors, empty/degenerate
scenarios, the Inf serialization token, linkbudget->keymatrix composition
(bit-exact), strategy comparison properties on constructed fixtures,
divergence-sweep ordering and byte-identical reruns.
"""
from __future__ import annotations

import json
import math
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import pytest

from satqkd.cli import (
    main,
    run_access,
    run_keymatrix,
    run_linkbudget,
    run_schedule,
    run_sweep,
)
from satqkd.orbit import GroundStation
from satqkd.qkd import KeyMatrix
from satqkd.scenario import (
    ConfigError,
    MICIUS_TLE_LINES,
    ScenarioConfig,
    load_scenario,
    micius_week_config,
    scenario_from_dict,
)
from satqkd.sched import GaConfig, StrategyConfig

UTC = timezone.utc
DAY0 = datetime(2016, 9, 19, tzinfo=UTC)


def short_config(**overrides) -> ScenarioConfig:
    """Default profile cut to the first night for fast tests."""
    base = dict(span=(DAY0 + timedelta(hours=14), DAY0 + timedelta(hours=20)))
    base.update(overrides)
    return micius_week_config(**base)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_empty_config_is_default_profile():
    cfg = scenario_from_dict({})
    assert len(cfg.stations) == 11
    assert cfg.optics.divergence_rad == pytest.approx(10e-6)
    assert cfg.qkd.rep_rate_hz == pytest.approx(2e8)
    assert cfg.step_seconds == 10.0
    assert cfg.elevation_mask_deg == 10.0
    assert cfg.night_threshold_deg == -6.0
    assert cfg.tle.inclination_deg == pytest.approx(97.37)


def test_config_json_round_trip(tmp_path):
    payload = {
        "tle": list(MICIUS_TLE_LINES),
        "stations": [
            {"name": "A", "lat_deg": 30.0, "lon_deg": 100.0, "alt_m": 10.0,
             "weight": 2.0},
            {"name": "B", "lat_deg": 40.0, "lon_deg": 110.0},
        ],
        "span": ["2016-09-19T00:00:00Z", "2016-09-20T00:00:00Z"],
        "step_seconds": 5,
        "optics": {"divergence_urad": 5, "beam_convention": "half"},
        "qkd": {"q_factor": 1.0},
        "strategy": {"kind": "S-PD", "weights": [3, 1],
                     "ga": {"population": 20, "generations": 10, "seed": 7}},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    cfg = load_scenario(path)
    assert [st.name for st in cfg.stations] == ["A", "B"]
    assert cfg.stations[1].weight == 1.0
    assert cfg.step_seconds == 5.0
    assert cfg.optics.beam_convention == "half"
    assert cfg.qkd.q_factor == 1.0
    assert cfg.strategy.kind == "S-PD"
    assert cfg.strategy.ga.seed == 7


@pytest.mark.parametrize("payload,needle", [
    ({"stations": [{"name": "A", "lat_deg": 95.0, "lon_deg": 0.0}]}, "stations[0]"),
    ({"stations": [{"name": "A", "lon_deg": 0.0}]}, "stations[0].lat_deg"),
    ({"span": ["2016-09-20T00:00:00Z", "2016-09-19T00:00:00Z"]}, "span"),
    ({"step_seconds": 7}, "step_seconds"),
    ({"qkd": {"nu": 0.9}}, "qkd"),
    ({"strategy": {"kind": "S-XX"}}, "strategy"),
    ({"tle": ["bogus"]}, "tle"),
    ({"optics": {"beam_convention": "quarter"}}, "optics"),
])
def test_config_errors_carry_field_paths(payload, needle):
    with pytest.raises(ConfigError, match=needle.replace("[", r"\[")):
        scenario_from_dict(payload)


def test_station_weights_fall_back_to_station_field():
    cfg = micius_week_config()
    weights = cfg.station_weights()
    assert len(weights) == 11
    assert weights[[st.name for st in cfg.stations].index("Shanghai")] == 24.2


# ---------------------------------------------------------------------------
# access
# ---------------------------------------------------------------------------

def test_access_no_stations_empty_report(tmp_path):
    cfg = short_config(stations=())
    info = run_access(cfg, tmp_path)
    assert info["n_intervals"] == 0
    body = (tmp_path / "access_intervals.csv").read_text()
    assert body == ("station,start_utc,end_utc,duration_s,"
                    "max_elevation_deg,min_range_km\n")
    assert (tmp_path / "manifest.json").exists()


def test_access_polar_station_empty(tmp_path):
    cfg = short_config(stations=(GroundStation("pole", -89.9, 0.0),))
    info = run_access(cfg, tmp_path)
    assert info["n_intervals"] == 0


def test_access_default_night_has_passes(tmp_path):
    info = run_access(short_config(), tmp_path)
    assert info["n_intervals"] > 0
    daily = (tmp_path / "access_daily.csv").read_text().strip().splitlines()
    assert daily[0] == "date,station_sum_s,union_s"
    assert len(daily) >= 2


# ---------------------------------------------------------------------------
# linkbudget
# ---------------------------------------------------------------------------

def test_linkbudget_cloudless_zero_cloud_column(tmp_path):
    run_linkbudget(short_config(), tmp_path)
    lines = (tmp_path / "linkbudget.csv").read_text().strip().splitlines()
    assert len(lines) > 1
    for line in lines[1:]:
        assert line.split(",")[6] == "0.0000"


def test_linkbudget_overcast_writes_inf_token(tmp_path):
    from satqkd.cloud import CloudGrid
    cfg = short_config()
    frames = np.full((37, 5, 9), 150, dtype=np.int16)
    grid = CloudGrid(lat_min=20.0, lat_max=48.0, lon_min=80.0, lon_max=128.0,
                     lat_step=7.0, lon_step=6.0,
                     time_start=cfg.span[0], frames=frames)
    cfg = micius_week_config(span=cfg.span, cloud=grid)
    info = run_linkbudget(cfg, tmp_path)
    assert info["n_blocked"] == info["n_samples"] > 0
    lines = (tmp_path / "linkbudget.csv").read_text().strip().splitlines()
    row = lines[1].split(",")
    assert row[6] == "Inf" and row[8] == "Inf"
    assert float(row[9]) == 0.0


# ---------------------------------------------------------------------------
# keymatrix
# ---------------------------------------------------------------------------

def test_keymatrix_composition_bit_exact(tmp_path):
    cfg = short_config()
    direct = run_keymatrix(cfg, tmp_path / "direct")
    run_linkbudget(cfg, tmp_path / "lb")
    rebuilt = run_keymatrix(cfg, tmp_path / "composed",
                            from_linkbudget=tmp_path / "lb" / "linkbudget.csv")
    assert np.array_equal(direct.values, rebuilt.values)
    assert (tmp_path / "direct" / "keymatrix.csv").read_bytes() == \
        (tmp_path / "composed" / "keymatrix.csv").read_bytes()


def test_keymatrix_zero_cloud_equals_disabled(tmp_path):
    from satqkd.cloud import CloudGrid
    cfg = short_config()
    frames = np.zeros((37, 5, 9), dtype=np.int16)
    grid = CloudGrid(lat_min=20.0, lat_max=48.0, lon_min=80.0, lon_max=128.0,
                     lat_step=7.0, lon_step=6.0,
                     time_start=cfg.span[0], frames=frames)
    with_zero = run_keymatrix(micius_week_config(span=cfg.span, cloud=grid),
                              tmp_path / "zero")
    without = run_keymatrix(cfg, tmp_path / "none")
    assert np.array_equal(with_zero.values, without.values)


def test_keymatrix_all_blocked_grid_is_all_zero(tmp_path):
    from satqkd.cloud import CloudGrid
    cfg = short_config()
    frames = np.full((37, 5, 9), 150, dtype=np.int16)
    grid = CloudGrid(lat_min=20.0, lat_max=48.0, lon_min=80.0, lon_max=128.0,
                     lat_step=7.0, lon_step=6.0,
                     time_start=cfg.span[0], frames=frames)
    matrix = run_keymatrix(micius_week_config(span=cfg.span, cloud=grid),
                           tmp_path)
    assert not matrix.values.any()


def test_ephemeris_file_through_config(tmp_path):
    from datetime import timedelta as td
    from satqkd.orbit import propagate
    cfg = short_config()
    rows = ["time_utc,x_km,y_km,z_km"]
    t = cfg.span[0]
    while t <= cfg.span[1]:
        st = propagate(cfg.tle, t)
        rows.append("{},{!r},{!r},{!r}".format(t.isoformat(), *st.position_km))
        t += td(seconds=60)
    eph_path = tmp_path / "eph.csv"
    eph_path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    payload = {
        "ephemeris": {"file": "eph.csv"},
        "span": [cfg.span[0].isoformat(), cfg.span[1].isoformat()],
        "step_seconds": 60,
        "grid_interval_seconds": 60,
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(payload), encoding="utf-8")
    loaded = load_scenario(cfg_path)
    assert loaded.ephemeris is not None
    info = run_access(loaded, tmp_path / "out")
    assert info["n_intervals"] > 0


def test_access_propagation_failure_carries_span():
    from satqkd.orbit import TleElements
    decaying = TleElements(epoch=DAY0, inclination_deg=97.37, raan_deg=0.0,
                           eccentricity=0.9, arg_perigee_deg=0.0,
                           mean_anomaly_deg=0.0, mean_motion_rev_day=15.0)
    cfg = short_config(tle=decaying)
    with pytest.raises(ValueError, match="propagation failed over .*sub-surface"):
        run_access(cfg, Path("/tmp/unused-out"))


def test_keymatrix_daily_totals_cover_nonzero_days(tmp_path):
    matrix = run_keymatrix(short_config(), tmp_path)
    daily = (tmp_path / "keys_daily.csv").read_text().strip().splitlines()
    assert daily[0] == "date,station,key_bits"
    total = sum(float(line.split(",")[2]) for line in daily[1:])
    assert total == pytest.approx(matrix.values.sum(), rel=1e-6)


def test_keymatrix_fine_sampling_converges(tmp_path):
    # 1 s refinement against the default 10 s sampling of the rate integral
    coarse = run_keymatrix(short_config(), tmp_path / "coarse")
    fine = run_keymatrix(short_config(step_seconds=1.0), tmp_path / "fine")
    assert fine.values.shape == coarse.values.shape
    assert fine.values.sum() == pytest.approx(coarse.values.sum(), rel=0.05)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def tiny_strategy(seed=0):
    return StrategyConfig(ga=GaConfig(population=40, generations=60, seed=seed))


def synthetic_matrix(values, names, start=DAY0):
    return KeyMatrix(start=start, interval_seconds=10.0, node_names=names,
                     values=np.asarray(values, dtype=float))


def test_schedule_single_node_strategies_coincide(tmp_path):
    cfg = short_config(stations=(GroundStation("Solo", 34.0, 109.0, 0.0, 1.0),),
                       strategy=tiny_strategy())
    matrix = synthetic_matrix([[5.0], [7.0], [0.0], [3.0]], ("Solo",))
    scheds = run_schedule(cfg, tmp_path, seed=1, matrix=matrix)
    totals = {k: s.total for k, s in scheds.items()}
    assert totals["S-GD"] == totals["S-PD"] == totals["S-TD"] == 15.0


def test_schedule_skewed_weights_std_lowers_kl(tmp_path):
    stations = (GroundStation("A", 30.0, 100.0, 0.0, 0.5),
                GroundStation("B", 40.0, 110.0, 0.0, 0.5))
    cfg = short_config(stations=stations, strategy=tiny_strategy())
    matrix = synthetic_matrix([[10.0, 9.9], [0.0, 0.0], [10.0, 9.9]], ("A", "B"))
    scheds = run_schedule(cfg, tmp_path, seed=3, matrix=matrix)
    comparison = (tmp_path / "strategy_comparison.csv").read_text().splitlines()
    kl = {}
    for line in comparison[1:]:
        kind, _total, kl_txt, _name, _bits = line.split(",")
        kl[kind] = math.inf if kl_txt == "Inf" else float(kl_txt)
    assert kl["S-TD"] <= kl["S-GD"]
    assert scheds["S-GD"].total >= scheds["S-PD"].total >= 0.0
    assert scheds["S-GD"].total >= scheds["S-TD"].total


def test_schedule_outputs_full_interval_listing(tmp_path):
    cfg = short_config(stations=(GroundStation("Solo", 34.0, 109.0),),
                       strategy=tiny_strategy())
    matrix = synthetic_matrix([[5.0], [0.0], [3.0]], ("Solo",))
    run_schedule(cfg, tmp_path, seed=0, matrix=matrix)
    lines = (tmp_path / "schedule_s_gd.csv").read_text().strip().splitlines()
    assert lines[0] == "interval_index,start_utc,activity"
    assert len(lines) == 4
    activities = {line.split(",")[2] for line in lines[1:]}
    assert activities <= {"IDLE", "SWITCH", "Solo"}


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def test_divergence_sweep_monotone_min_loss(tmp_path):
    cfg = short_config()
    rows = run_sweep(cfg, "divergence", tmp_path)
    assert [row["value"] for row in rows] == [1.0, 3.0, 5.0, 10.0]
    for st in cfg.stations:
        mins = [row["lo"].get(st.name, math.inf) for row in rows]
        finite = [v for v in mins if not math.isinf(v)]
        assert all(b >= a for a, b in zip(finite, finite[1:]))
    body = (tmp_path / "sweep_divergence.csv").read_text()
    assert body.startswith("divergence_urad,total_visible_duration_s,"
                           "station_sum_duration_s,station,")


def test_single_point_sweep_single_row(tmp_path):
    cfg = short_config(sweep_divergences_urad=(10.0,),
                       stations=(GroundStation("Solo", 34.0, 109.0),))
    rows = run_sweep(cfg, "divergence", tmp_path)
    assert len(rows) == 1
    lines = (tmp_path / "sweep_divergence.csv").read_text().strip().splitlines()
    assert len(lines) == 2


def test_sweep_rejects_unknown_variable(tmp_path):
    with pytest.raises(ConfigError, match="variable"):
        run_sweep(short_config(), "wavelength", tmp_path)


# ---------------------------------------------------------------------------
# determinism and entry point
# ---------------------------------------------------------------------------

def test_rerun_is_byte_identical(tmp_path):
    cfg = short_config(strategy=tiny_strategy())
    for name, runner in [("access", run_access), ("linkbudget", run_linkbudget)]:
        runner(cfg, tmp_path / f"{name}1")
        runner(cfg, tmp_path / f"{name}2")
        for child in sorted((tmp_path / f"{name}1").iterdir()):
            twin = tmp_path / f"{name}2" / child.name
            assert child.read_bytes() == twin.read_bytes(), child.name


def test_main_runs_access_with_config(tmp_path):
    payload = {
        "span": ["2016-09-19T14:00:00Z", "2016-09-19T20:00:00Z"],
        "stations": [{"name": "Xian", "lat_deg": 34.27, "lon_deg": 108.93,
                      "alt_m": 400.0}],
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(payload), encoding="utf-8")
    rc = main(["access", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert rc == 0
    assert (tmp_path / "out" / "access_intervals.csv").exists()


def test_main_invalid_config_exits_nonzero(tmp_path, capsys):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text('{"span": ["2016-09-20T00:00:00Z", "2016-09-19T00:00:00Z"]}',
                        encoding="utf-8")
    rc = main(["access", "--config", str(cfg_path), "--out", str(tmp_path / "out")])
    assert rc == 2
    err = capsys.readouterr().err
    assert "span" in json.loads(err)["error"]
