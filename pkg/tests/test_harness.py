import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thor_sim.config import SimConfig, loads
from thor_sim.errors import CalibrationError, ConfigurationError
from thor_sim.harness import (ATTACK_HEADER, SWEEP_HEADER, SweepRow, SweepSpec, calibrate_noise,
                              leakage_comparison, leakage_rate, parse_sweep, percent_faster, probe_success,
                              read_table, run_trials, statistically_non_decreasing, success_sweep,
                              trial_seeds, wilson_interval, write_table)

FAST = loads("n_trials = 400\ncalibration_trials = 8\ntrials_per_point = 4\ndurations = 2, 6\n")


def test_leakage_arithmetic():
    assert leakage_rate(1.0, 50) == pytest.approx(76.8)
    assert leakage_rate(0.6, 5) == pytest.approx(460.8)
    with pytest.raises(ValueError):
        leakage_rate(1.0, 0)


def test_comparison_table():
    rows = {r.attack: r for r in leakage_comparison()}
    assert rows["Thor"].leakage_bph == pytest.approx(76.8)
    assert round(rows["Hertzbleed"].thor_faster_pct) == 631
    assert round(rows["Collide+Power (MDS)"].thor_faster_pct) == 1493
    assert [r.leakage_bph for r in leakage_comparison()] == [0.136, 4.82, 10.5, 76.8, 144.7]
    assert percent_faster(20.0, 10.0) == pytest.approx(100.0)


def test_trial_seeds_distinct_and_stable():
    a = trial_seeds(5)
    assert a == trial_seeds(5) and len(set(a)) == 3 and a != trial_seeds(6)


def test_sweep_rows_and_report():
    report = success_sweep(SweepSpec((2.0, 6.0), 4, base_seed=10), FAST)
    assert [r.duration_min for r in report.rows] == [2.0, 6.0]
    for r in report.rows:
        assert 0 <= r.success_rate <= 1
        assert r.leakage_bph == pytest.approx(leakage_rate(r.success_rate, r.duration_min))
    assert report.seed == 10 and len(report.config_hash) == 64
    assert [t.seed for t in report.trials[0]] == [10, 11, 12, 13]


def test_sweep_is_pure_function_of_config_and_seed():
    spec = SweepSpec((2.0, 6.0), 3, base_seed=7)
    assert success_sweep(spec, FAST).rows == success_sweep(spec, FAST).rows


def test_fixed_mask_distribution():
    spec = SweepSpec((50.0,), 2, 0, "0x00000000ffffffff")
    noiseless = loads("noise_sigma = 0")
    report = success_sweep(spec, noiseless)
    assert all(t.bits_correct == 64 for t in report.trials[0])


def test_parallel_equals_sequential():
    seeds = range(3, 7)
    budgets = [60e9, 240e9]
    seq = run_trials(FAST, seeds, budgets, workers=1)
    par = run_trials(FAST, seeds, budgets, workers=2)
    assert len(seq) == len(par)
    assert all(_same(a, b) for a, b in zip(seq, par))


def _same(a, b):
    return all(x.as_row()[:5] == y.as_row()[:5] and np.array_equal(x.ratios, y.ratios, equal_nan=True)
               for x, y in zip(a, b))


@pytest.mark.parametrize("spec", [
    SweepSpec(()), SweepSpec((5.0, 5.0)), SweepSpec((5.0,), 0), SweepSpec((5.0,), 1, -1),
    SweepSpec((5.0,), 1, 0, "nonsense"),
])
def test_sweep_spec_validation(spec):
    with pytest.raises(ConfigurationError):
        spec.validate()


def test_noiseless_probe_is_exact_at_long_duration():
    assert probe_success(SimConfig(), 0.0, 50.0, 5, 0) >= 0.8


def test_huge_noise_probe_fails():
    assert probe_success(FAST, 1e7, 6.0, 4, 0) == 0.0


def test_calibration_raises_when_unbracketed():
    with pytest.raises(CalibrationError):
        calibrate_noise(FAST, target=(2.0, 0.6), bounds=(0.0, 1e6), trials=4)


def test_calibration_bisects_a_bracketed_target(monkeypatch):
    # monotone stand-in for the simulated success curve
    import thor_sim.harness as h
    monkeypatch.setattr(h, "probe_success", lambda cfg, s, m, n, seed, workers=1: max(0.0, 1.0 - s / 100.0))
    result = calibrate_noise(FAST, target=(5.0, 0.6), bounds=(0.0, 1000.0), tolerance=0.01)
    assert result.noise_sigma == pytest.approx(40.0, abs=1.0)
    assert abs(result.success_rate - 0.6) <= 0.01
    sigmas = [p.noise_sigma for p in result.probes]
    assert sigmas[:2] == [0.0, 1000.0]


def test_wilson_and_monotone_check():
    lo, hi = wilson_interval(10, 20)
    assert lo < 0.5 < hi
    rows = [SweepRow(5, 0.9, 0, 0, 18, 20), SweepRow(10, 0.1, 0, 0, 2, 20)]
    assert not statistically_non_decreasing(rows)
    rows = [SweepRow(5, 0.5, 0, 0, 10, 20), SweepRow(10, 0.45, 0, 0, 9, 20)]
    assert statistically_non_decreasing(rows)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 1e3), st.floats(0, 1), st.floats(0, 64), st.floats(0, 1e4)),
                min_size=1, max_size=8), st.sampled_from(["csv", "tsv"]))
def test_csv_roundtrip(rows, fmt):
    text = write_table(SWEEP_HEADER, rows, fmt)
    parsed = parse_sweep(text, fmt)
    assert [r.as_row() for r in parsed] == [tuple(r) for r in rows]
    assert write_table(SWEEP_HEADER, [r.as_row() for r in parsed], fmt) == text


def test_attack_header_layout():
    assert ATTACK_HEADER[:5] == ("seed", "duration_ns", "accepted", "success", "bits_correct")
    assert ATTACK_HEADER[-1] == "ratio_63" and len(ATTACK_HEADER) == 69
    header, rows = read_table(write_table(ATTACK_HEADER, [(1,) * 69]))
    assert tuple(header) == ATTACK_HEADER and len(rows) == 1


def test_bad_format():
    with pytest.raises(ConfigurationError):
        write_table(SWEEP_HEADER, [], "json")
