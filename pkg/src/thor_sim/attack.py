"""Timing-only recovery of a victim's weight sparsity mask.

Outline of one attack:

1. time an all-ones and an all-zeros input to fix an acceptance threshold;
2. repeatedly draw a random input and its complement, time both, and keep the
   slower one when the two differ by more than the threshold;
3. tally, per index, how often kept inputs were non-zero versus zero;
4. call an index non-zero when that ratio exceeds ``gamma``.

Every timing is the trimmed mean of ``l_repeats`` cooled-down queries, with
the ``k_trim`` largest samples discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, ConfigurationError
from .patterns import FULL, WIDTH, TilePattern, as_pattern


@dataclass
class AttackParams:
    n_trials: int = 10_000
    l_repeats: int = 20
    k_trim: int = 3
    alpha: float = 0.9
    gamma: float = 1.13
    cooldown: float = 25e6          # ns
    rng_seed: int = 0
    time_budget: float | None = None  # ns of simulated clock, calibration included
    # Thr = alpha * (T_nz - T_z) / thr_divisor; 64 makes Thr a fraction of the
    # per-element timing step
    thr_divisor: float = 64.0
    calibration_attempts: int = 1

    def validate(self) -> None:
        if self.n_trials < 1 or self.l_repeats < 1:
            raise ConfigurationError("n_trials and l_repeats must be positive")
        if not 0 <= self.k_trim < self.l_repeats:
            raise ConfigurationError("k_trim must satisfy 0 <= k_trim < l_repeats")
        if not self.gamma > 1:
            raise ConfigurationError("gamma must exceed 1")
        if not 0 < self.alpha <= 1:
            raise ConfigurationError("alpha must lie in (0, 1]")
        if self.cooldown < 0:
            raise ConfigurationError("cooldown must be non-negative")
        if self.time_budget is not None and self.time_budget <= 0:
            raise ConfigurationError("time_budget must be positive")
        if self.thr_divisor <= 0:
            raise ConfigurationError("thr_divisor must be positive")
        if self.calibration_attempts < 1:
            raise ConfigurationError("calibration_attempts must be at least 1")


@dataclass(frozen=True)
class CandidatePair:
    w_s: TilePattern
    w_r: TilePattern

    def __post_init__(self):
        if self.w_r.bits != (~self.w_s.bits & FULL):
            raise ValueError("w_r must be the exact complement of w_s")

    @classmethod
    def of(cls, w_s) -> "CandidatePair":
        w_s = as_pattern(w_s)
        return cls(w_s, w_s.complement())

    @classmethod
    def random(cls, rng: np.random.Generator) -> "CandidatePair":
        return cls.of(TilePattern.random(rng))

    def swapped(self) -> "CandidatePair":
        return CandidatePair(self.w_r, self.w_s)


class CandidateStream:
    """Uniform random W_s masks, drawn in fixed-size blocks.

    Block drawing keeps the sequence independent of how many candidates a
    caller consumes at a time.
    """

    BLOCK = 1024

    def __init__(self, seed: int):
        self._rng = np.random.default_rng(int(seed))
        self._buf = np.empty(0, dtype=np.uint64)

    def take(self, k: int) -> np.ndarray:
        while len(self._buf) < k:
            block = self._rng.integers(0, FULL, size=self.BLOCK, dtype=np.uint64, endpoint=True)
            self._buf = np.concatenate((self._buf, block))
        out, self._buf = self._buf[:k], self._buf[k:]
        return out

    def push_back(self, bits: np.ndarray) -> None:
        self._buf = np.concatenate((bits, self._buf))

    def next_pair(self) -> CandidatePair:
        return CandidatePair.of(int(self.take(1)[0]))


_BIT_INDEX = np.arange(WIDTH, dtype=np.uint64)


def _bits_to_array(bits: int) -> np.ndarray:
    return (np.uint64(bits) >> _BIT_INDEX) & np.uint64(1)


@dataclass
class ScoreTable:
    score_z: np.ndarray = field(default_factory=lambda: np.zeros(WIDTH, dtype=np.int64))
    score_n: np.ndarray = field(default_factory=lambda: np.zeros(WIDTH, dtype=np.int64))

    @property
    def total(self) -> int:
        return int(self.score_z[0] + self.score_n[0])

    def update(self, w_x) -> None:
        ones = _bits_to_array(as_pattern(w_x).bits).astype(np.int64)
        self.score_n += ones
        self.score_z += 1 - ones

    def copy(self) -> "ScoreTable":
        return ScoreTable(self.score_z.copy(), self.score_n.copy())


def update_scores(table: ScoreTable, w_x) -> ScoreTable:
    table.update(w_x)
    return table


@dataclass(frozen=True)
class Inference:
    predicted: TilePattern
    undecidable: tuple        # indices with no evidence either way
    ratios: tuple             # score_n / score_z; inf when score_z == 0 < score_n, nan when both 0

    @property
    def decided(self) -> bool:
        return not self.undecidable


def infer_weights(table: ScoreTable, gamma: float = 1.13) -> Inference:
    """Indices whose ScoreN/ScoreZ ratio strictly exceeds ``gamma`` are non-zero.

    A zero ScoreZ with positive ScoreN is an unbounded ratio (non-zero); an
    index with no accepted evidence at all is reported as undecidable and left
    zero in ``predicted``.
    """
    ratios = []
    undecidable = []
    bits = 0
    for i in range(WIDTH):
        z, n = int(table.score_z[i]), int(table.score_n[i])
        if z == 0:
            ratio = math.inf if n > 0 else math.nan
        else:
            ratio = n / z
        if math.isnan(ratio):
            undecidable.append(i)
        elif ratio > gamma:
            bits |= 1 << i
        ratios.append(ratio)
    return Inference(TilePattern(bits), tuple(undecidable), tuple(ratios))


def trimmed_means(samples: np.ndarray, k_trim: int) -> np.ndarray:
    """Row means after dropping each row's ``k_trim`` largest values."""
    samples = np.sort(np.atleast_2d(samples), axis=1)
    return samples[:, : samples.shape[1] - k_trim].mean(axis=1)


def measure(victim, inputs, params: AttackParams) -> float:
    """Trimmed mean of ``l_repeats`` cooled-down timings of ``inputs``."""
    samples = victim.sample(inputs, params.l_repeats, params.cooldown)
    return float(trimmed_means(samples, params.k_trim)[0])


def calibrate_threshold(victim, params: AttackParams) -> float:
    t_nz = measure(victim, TilePattern.ones(), params)
    t_z = measure(victim, TilePattern.zeros(), params)
    if t_nz <= t_z:
        raise CalibrationError(
            f"no timing gap between all-non-zero ({t_nz:.1f}) and all-zero ({t_z:.1f}) inputs")
    return params.alpha * (t_nz - t_z) / params.thr_divisor


def trial(victim, pair: CandidatePair, thr: float, params: AttackParams) -> TilePattern | None:
    """The slower of the pair if the two timings differ by more than ``thr``."""
    if thr <= 0:
        raise ValueError("threshold must be positive")
    t_s = measure(victim, pair.w_s, params)
    t_r = measure(victim, pair.w_r, params)
    if abs(t_s - t_r) <= thr:
        return None
    return pair.w_s if t_s > t_r else pair.w_r


@dataclass
class AttackStats:
    threshold: float
    trials: int
    accepted: int
    duration_ns: float
    cooldown_ns: float
    query_ns: float
    calibration_attempts: int
    ratios: tuple

    @property
    def cooldown_share(self) -> float:
        return self.cooldown_ns / self.duration_ns if self.duration_ns else 0.0


@dataclass(frozen=True)
class AttackResult:
    inference: Inference
    stats: AttackStats

    @property
    def predicted(self) -> TilePattern:
        return self.inference.predicted


def _calibrate(victim, params: AttackParams) -> tuple[float, int]:
    for attempt in range(1, params.calibration_attempts + 1):
        try:
            return calibrate_threshold(victim, params), attempt
        except CalibrationError:
            if attempt == params.calibration_attempts:
                raise
    raise AssertionError("unreachable")


def _accumulate(table: ScoreTable, accepted_bits: np.ndarray) -> None:
    if len(accepted_bits) == 0:
        return
    ones = ((accepted_bits[:, None] >> _BIT_INDEX[None, :]) & np.uint64(1)).astype(np.int64)
    n = ones.sum(axis=0)
    table.score_n += n
    table.score_z += len(accepted_bits) - n


def run_attack(victim, params: AttackParams | None = None, checkpoints=None, *, chunk: int = 512):
    """Run the full attack; returns ``(Inference, AttackStats)``.

    ``checkpoints`` is a list of simulated-ns budgets that replaces
    ``params.time_budget``: the attack runs to the largest one and returns one
    :class:`AttackResult` per checkpoint, each equal to what an independent run
    with that budget and the same seeds would produce (candidates never depend
    on earlier timings, so a shorter run is a prefix of a longer one).

    Trials are issued to the victim ``chunk`` pairs at a time; the outcome is
    the same as calling :func:`trial` once per candidate.
    """
    params = params or AttackParams()
    params.validate()
    stream = CandidateStream(params.rng_seed)
    if checkpoints:
        budgets = sorted(float(b) for b in checkpoints)
    elif params.time_budget is not None:
        budgets = [float(params.time_budget)]
    else:
        budgets = [math.inf]

    start = victim.clock
    idle0, busy0 = victim.idle_ns, victim.busy_ns
    thr, attempts = _calibrate(victim, params)
    table = ScoreTable()
    trials = accepted = 0

    def snapshot() -> AttackResult:
        inference = infer_weights(table, params.gamma)
        stats = AttackStats(
            threshold=thr, trials=trials, accepted=accepted,
            duration_ns=victim.clock - start,
            cooldown_ns=victim.idle_ns - idle0, query_ns=victim.busy_ns - busy0,
            calibration_attempts=attempts, ratios=inference.ratios)
        return AttackResult(inference, stats)

    snapshots = []
    for budget in budgets:
        deadline = start + budget
        while trials < params.n_trials and victim.clock < deadline:
            w_s = stream.take(min(chunk, params.n_trials - trials))
            inputs = np.empty(2 * len(w_s), dtype=np.uint64)
            inputs[0::2] = w_s
            inputs[1::2] = ~w_s
            samples = victim.sample_many(inputs, params.l_repeats, params.cooldown,
                                         deadline=deadline, group=2)
            done = len(samples) // 2
            stream.push_back(w_s[done:])
            times = trimmed_means(samples, params.k_trim)
            t_s, t_r = times[0::2], times[1::2]
            keep = np.abs(t_s - t_r) > thr
            w_x = np.where(t_s > t_r, w_s[:done], ~w_s[:done])[keep]
            _accumulate(table, w_x)
            trials += done
            accepted += int(keep.sum())
        snapshots.append(snapshot())

    if checkpoints:
        order = sorted(range(len(checkpoints)), key=lambda i: float(checkpoints[i]))
        out = [None] * len(checkpoints)
        for rank, i in enumerate(order):
            out[i] = snapshots[rank]
        return out
    final = snapshots[-1]
    return final.inference, final.stats


def run_attack_reference(victim, params: AttackParams | None = None):
    """One :func:`trial` at a time; slow, kept as the oracle for :func:`run_attack`."""
    params = params or AttackParams()
    params.validate()
    stream = CandidateStream(params.rng_seed)
    budget = math.inf if params.time_budget is None else params.time_budget
    start = victim.clock
    idle0, busy0 = victim.idle_ns, victim.busy_ns
    thr, attempts = _calibrate(victim, params)
    table = ScoreTable()
    trials = accepted = 0
    while trials < params.n_trials and victim.clock - start < budget:
        w_x = trial(victim, stream.next_pair(), thr, params)
        trials += 1
        if w_x is not None:
            table.update(w_x)
            accepted += 1
    inference = infer_weights(table, params.gamma)
    stats = AttackStats(thr, trials, accepted, victim.clock - start, victim.idle_ns - idle0,
                        victim.busy_ns - busy0, attempts, inference.ratios)
    return inference, stats
