import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from thor_sim.amx import TimingModel
from thor_sim.attack import (AttackParams, CandidatePair, CandidateStream, ScoreTable, calibrate_threshold,
                             infer_weights, measure, run_attack, run_attack_reference, trial, trimmed_means,
                             update_scores)
from thor_sim.errors import CalibrationError, ConfigurationError
from thor_sim.patterns import FULL, WIDTH, TilePattern, aligned_count

from conftest import random_mask

bits64 = st.integers(min_value=0, max_value=FULL)
_MODEL = TimingModel()


class ScriptedVictim:
    """Returns canned samples; enough of the endpoint interface for measure()."""

    def __init__(self, samples):
        self.samples = np.asarray(samples, dtype=float)

    def sample(self, inputs, repeats, cooldown):
        assert repeats == len(self.samples)
        return self.samples


def test_measure_drops_k_largest():
    samples = list(range(1, 21))
    got = measure(ScriptedVictim(samples[::-1]), TilePattern.ones(), AttackParams())
    assert got == pytest.approx(np.mean(range(1, 18)))


def test_trimmed_means_rowwise():
    rows = np.array([[5.0, 1.0, 9.0, 3.0], [2.0, 2.0, 8.0, 0.0]])
    assert trimmed_means(rows, 1).tolist() == [3.0, 4.0 / 3.0]


def test_measure_noiseless_equals_single_query(make_victim):
    v = make_victim(random_mask(4))
    single = make_victim(random_mask(4))
    single.wait(25e6)
    x = TilePattern(0xF0F0)
    assert measure(v, x, AttackParams()) == pytest.approx(single.query(x).cycles)
    assert v.clock >= 20 * 25e6


def test_threshold_with_half_divisor(make_victim):
    v = make_victim(TilePattern.ones())
    t_nz = make_victim(TilePattern.ones()).sample(TilePattern.ones(), 1, 25e6)[0]
    t_z = make_victim(TilePattern.ones()).sample(TilePattern.zeros(), 1, 25e6)[0]
    thr = calibrate_threshold(v, AttackParams(thr_divisor=2.0))
    assert thr == pytest.approx(0.45 * (t_nz - t_z))


def test_threshold_default_divisor(make_victim):
    v = make_victim(TilePattern.ones())
    thr2 = calibrate_threshold(make_victim(TilePattern.ones()), AttackParams(thr_divisor=2.0))
    assert calibrate_threshold(v, AttackParams()) == pytest.approx(thr2 * 2 / 64)


def test_all_zero_mask_fails_calibration(make_victim):
    with pytest.raises(CalibrationError):
        calibrate_threshold(make_victim(TilePattern.zeros()), AttackParams())


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=FULL))
def test_noiseless_threshold_positive(bits):
    from thor_sim.victim import Victim, VictimConfig
    v = Victim(TilePattern(bits), VictimConfig(noise_sigma=0.0), _MODEL)
    assert calibrate_threshold(v, AttackParams(l_repeats=2, k_trim=0)) > 0


def test_perfect_alignment_accepts_w_s(make_victim):
    mask = random_mask(11)
    v = make_victim(mask)
    pair = CandidatePair.of(mask)
    assert trial(v, pair, 1.0, AttackParams(l_repeats=2, k_trim=0)) == mask


def test_zero_mask_always_rejected(make_victim):
    v = make_victim(TilePattern.zeros())
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert trial(v, CandidatePair.random(rng), 1.0, AttackParams(l_repeats=2, k_trim=0)) is None


def test_trial_needs_positive_threshold(make_victim):
    with pytest.raises(ValueError):
        trial(make_victim(TilePattern.ones()), CandidatePair.of(0), 0.0, AttackParams())


@settings(max_examples=50, deadline=None)
@given(bits64, bits64)
def test_complement_symmetry(mask, ws):
    from thor_sim.victim import Victim, VictimConfig
    params = AttackParams(l_repeats=2, k_trim=0)
    pair = CandidatePair.of(ws)
    a = trial(Victim(TilePattern(mask), VictimConfig(noise_sigma=0.0), _MODEL), pair, 1.0, params)
    b = trial(Victim(TilePattern(mask), VictimConfig(noise_sigma=0.0), _MODEL), pair.swapped(), 1.0, params)
    assert a == b


def test_pair_requires_complement():
    with pytest.raises(ValueError):
        CandidatePair(TilePattern(1), TilePattern(1))
    p = CandidatePair.of(0b1010)
    assert p.w_r.bits == FULL ^ 0b1010


def test_acceptance_grows_with_alignment_gap(model):
    from thor_sim.victim import Victim, VictimConfig
    mask = random_mask(21)
    v = Victim(mask, VictimConfig(noise_sigma=100.0, rng_seed=1), model)
    params = AttackParams(l_repeats=20, k_trim=3)
    thr = 60.0
    rng = np.random.default_rng(5)
    gaps, accepted = [], []
    for _ in range(1000):
        pair = CandidatePair.random(rng)
        gaps.append(abs(aligned_count(mask, pair.w_s) - aligned_count(mask, pair.w_r)))
        accepted.append(trial(v, pair, thr, params) is not None)
    gaps, accepted = np.array(gaps), np.array(accepted)
    assert accepted[gaps >= 9].mean() > accepted[gaps <= 3].mean() + 0.2
    assert np.corrcoef(gaps, accepted)[0, 1] > 0.2


def test_update_scores_examples():
    t = ScoreTable()
    update_scores(t, TilePattern.ones())
    assert t.score_n.tolist() == [1] * WIDTH and t.score_z.tolist() == [0] * WIDTH
    t = ScoreTable()
    for i in range(10):
        t.update(TilePattern.ones() if i % 2 == 0 else TilePattern.zeros())
    assert set(t.score_n.tolist()) == {5} and set(t.score_z.tolist()) == {5}


@given(st.lists(bits64, max_size=40))
def test_score_conservation(patterns):
    t = ScoreTable()
    for p in patterns:
        t.update(p)
    assert np.all(t.score_z + t.score_n == len(patterns))
    assert np.all(t.score_z >= 0) and np.all(t.score_n >= 0)


def table_from(n, z):
    return ScoreTable(np.array(z, dtype=np.int64), np.array(n, dtype=np.int64))


def test_ratio_at_gamma_is_zero():
    t = table_from([113] * WIDTH, [100] * WIDTH)
    assert infer_weights(t, 1.13).predicted == TilePattern.zeros()


def test_balanced_scores_predict_zero():
    assert infer_weights(table_from([7] * WIDTH, [7] * WIDTH)).predicted == TilePattern.zeros()


def test_synthetic_subset():
    subset = TilePattern(0x8000_0000_0F0F_0001)
    n = [20 if b else 10 for b in subset]
    assert infer_weights(table_from(n, [10] * WIDTH)).predicted == subset


def test_undecidable_and_unbounded():
    n = [0, 3] + [1] * 62
    z = [0, 0] + [1] * 62
    inf = infer_weights(table_from(n, z))
    assert inf.undecidable == (0,)
    assert math.isnan(inf.ratios[0]) and inf.ratios[1] == math.inf
    assert inf.predicted[1] and not inf.predicted[0]


@given(st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=WIDTH, max_size=WIDTH),
       st.floats(1.0001, 3.0), st.floats(1.0001, 3.0))
def test_raising_gamma_never_adds_nonzeros(counts, g1, g2):
    t = table_from([c[0] for c in counts], [c[1] for c in counts])
    lo, hi = sorted((g1, g2))
    assert infer_weights(t, hi).predicted.bits & ~infer_weights(t, lo).predicted.bits == 0


@pytest.mark.parametrize("kwargs", [
    {"k_trim": 20}, {"gamma": 1.0}, {"alpha": 0.0}, {"alpha": 1.5}, {"n_trials": 0},
    {"cooldown": -1.0}, {"time_budget": 0.0}, {"calibration_attempts": 0},
])
def test_params_validation(kwargs):
    with pytest.raises(ConfigurationError):
        AttackParams(**kwargs).validate()


def test_candidate_stream_independent_of_chunking():
    a = CandidateStream(3)
    b = CandidateStream(3)
    got = np.concatenate([a.take(k) for k in (1, 700, 5, 2000)])
    assert np.array_equal(got, b.take(len(got)))
    c = CandidateStream(3)
    head = c.take(10)
    c.push_back(head[4:])
    assert np.array_equal(np.concatenate([head[:4], c.take(6)]), head)


@pytest.mark.parametrize("sigma,budget,chunk", [(0.0, None, 64), (60.0, None, 7), (60.0, 151e9, 512),
                                                (0.0, 20e9, 1)])
def test_batched_equals_per_trial(make_victim, sigma, budget, chunk):
    mask = random_mask(30)
    params = AttackParams(n_trials=200, rng_seed=8, time_budget=budget)
    a = make_victim(mask, sigma, seed=2)
    b = make_victim(mask, sigma, seed=2)
    inf_a, st_a = run_attack(a, params, chunk=chunk)
    inf_b, st_b = run_attack_reference(b, params)
    assert inf_a == inf_b
    assert (st_a.trials, st_a.accepted, st_a.threshold) == (st_b.trials, st_b.accepted, st_b.threshold)
    assert st_a.duration_ns == pytest.approx(st_b.duration_ns, rel=1e-12)


def test_checkpoints_equal_independent_runs(make_victim):
    mask = random_mask(31)
    budgets = [300e9, 60e9, 150e9]
    snaps = run_attack(make_victim(mask, 50.0, seed=4), AttackParams(rng_seed=1), checkpoints=budgets)
    for b, snap in zip(budgets, snaps):
        inf, stats = run_attack(make_victim(mask, 50.0, seed=4), AttackParams(rng_seed=1, time_budget=b))
        assert snap.inference == inf
        assert snap.stats.trials == stats.trials and snap.stats.accepted == stats.accepted


def test_budget_accounting(make_victim):
    v = make_victim(random_mask(2), 50.0)
    _, stats = run_attack(v, AttackParams(time_budget=120e9))
    assert stats.duration_ns == pytest.approx(stats.cooldown_ns + stats.query_ns)
    assert stats.cooldown_share > 0.99
    # a trial in progress at the deadline is allowed to finish
    assert 120e9 <= stats.duration_ns < 120e9 + 2 * 20 * 25.1e6


def test_noiseless_recovery(make_victim):
    for seed in range(3):
        mask = random_mask(100 + seed)
        inf, stats = run_attack(make_victim(mask), AttackParams(rng_seed=seed))
        assert inf.predicted == mask and not inf.undecidable
        assert stats.trials == 10_000


def test_calibration_failure_propagates(make_victim):
    with pytest.raises(CalibrationError):
        run_attack(make_victim(TilePattern.zeros()), AttackParams())


def test_calibration_retries_consume_attempts(make_victim):
    # all-zero weights: every attempt fails, each costing two measures
    v = make_victim(TilePattern.zeros())
    with pytest.raises(CalibrationError):
        run_attack(v, AttackParams(calibration_attempts=3))
    assert v.clock == pytest.approx(3 * 2 * 20 * 25e6, rel=2e-3)
