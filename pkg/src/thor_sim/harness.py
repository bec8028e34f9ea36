"""Experiment orchestration: trials, sweeps, noise calibration and comparisons.

Every trial is a pure function of ``(SimConfig, trial seed)``. Trial seeds are
``base_seed + index``; the mask, victim and attacker streams are spawned from
that seed, so trials can run in any order or in parallel.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .amx import TimingModel
from .attack import run_attack
from .config import SimConfig, config_hash, mask_bits
from .countermeasure import overhead_for_idle_fraction, wrap_victim
from .errors import CalibrationError, ConfigurationError
from .patterns import WIDTH, TilePattern, hamming_distance
from .victim import Victim

NS_PER_MIN = 60e9

SWEEP_HEADER = ("duration_min", "success_rate", "bits_correct", "leakage_bph")
ATTACK_HEADER = ("seed", "duration_ns", "accepted", "success", "bits_correct") + tuple(
    f"ratio_{i}" for i in range(WIDTH))

# bits/hour of prior attacks, as plotted in the leakage comparison
PRIOR_LEAKAGE = (
    ("Collide+Power (Meltdown)", 0.136),
    ("Collide+Power (MDS)", 4.82),
    ("Hertzbleed", 10.5),
    ("Platypus", 144.7),
)


def leakage_rate(success_rate: float, duration_min: float, bits: int = WIDTH) -> float:
    """Bits per hour recovered by an attack of ``duration_min`` minutes."""
    if duration_min <= 0:
        raise ValueError("duration must be positive")
    return bits * success_rate / (duration_min / 60.0)


def percent_faster(rate: float, other: float) -> float:
    return (rate / other - 1.0) * 100.0


# -- single trials -------------------------------------------------------------

@dataclass(frozen=True)
class TrialRow:
    seed: int
    duration_ns: float
    accepted: int
    success: bool
    bits_correct: int
    ratios: tuple

    def as_row(self) -> tuple:
        return (self.seed, self.duration_ns, self.accepted, int(self.success), self.bits_correct) + self.ratios


@dataclass(frozen=True)
class _TrialJob:
    config: SimConfig
    seed: int
    budgets_ns: tuple
    protected: bool


def trial_seeds(seed: int) -> tuple[int, int, int]:
    """(mask, victim, attacker) seeds derived from one trial seed."""
    children = np.random.SeedSequence(int(seed)).spawn(3)
    return tuple(int(c.generate_state(1, dtype=np.uint64)[0]) for c in children)


def trial_mask(config: SimConfig, mask_seed: int) -> TilePattern:
    if config.harness.mask != "uniform":
        return TilePattern(mask_bits(config.harness.mask))
    return TilePattern.random(np.random.default_rng(mask_seed))


_MODELS: dict = {}


def _model(config: SimConfig) -> TimingModel:
    # one fitted model per timing config per process
    key = config_hash(SimConfig(timing=config.timing))
    if key not in _MODELS:
        _MODELS[key] = TimingModel(config.timing)
    return _MODELS[key]


def run_trial(config: SimConfig, seed: int, budgets_ns, protected: bool = False) -> list[TrialRow]:
    """One attack on a fresh victim; one row per budget (in the given order).

    A calibration failure is an unsuccessful trial with no accepted vectors.
    """
    mask_seed, victim_seed, attack_seed = trial_seeds(seed)
    mask = trial_mask(config, mask_seed)
    victim = Victim(mask, dataclasses.replace(config.victim, rng_seed=victim_seed), _model(config))
    endpoint = wrap_victim(victim, config.keeper) if protected else victim
    params = dataclasses.replace(config.attack, rng_seed=attack_seed, time_budget=None)
    try:
        results = run_attack(endpoint, params, checkpoints=list(budgets_ns))
    except CalibrationError:
        return [TrialRow(seed, float(endpoint.clock), 0, False, WIDTH - mask.nonzeros,
                         (math.nan,) * WIDTH) for _ in budgets_ns]
    rows = []
    for res in results:
        predicted = res.predicted
        success = predicted == mask and not res.inference.undecidable
        rows.append(TrialRow(seed, res.stats.duration_ns, res.stats.accepted, success,
                             WIDTH - hamming_distance(predicted, mask), tuple(res.stats.ratios)))
    return rows


def _run_job(job: _TrialJob) -> list[TrialRow]:
    return run_trial(job.config, job.seed, job.budgets_ns, job.protected)


def resolve_workers(workers: int | None) -> int:
    if workers is None or workers <= 0:
        return max(1, min(os.cpu_count() or 1, 8))
    return workers


def run_trials(config: SimConfig, seeds, budgets_ns, *, protected: bool = False,
               workers: int | None = 1) -> list[list[TrialRow]]:
    """:func:`run_trial` for each seed, results in seed order regardless of ``workers``."""
    jobs = [_TrialJob(config, int(s), tuple(budgets_ns), protected) for s in seeds]
    workers = resolve_workers(workers)
    if workers == 1 or len(jobs) < 2:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


# -- sweeps --------------------------------------------------------------------

@dataclass
class SweepSpec:
    durations: tuple                 # simulated minutes
    trials_per_point: int = 20
    base_seed: int = 0
    mask_distribution: str = "uniform"   # or a 64-bit mask as hex/decimal text

    def validate(self) -> None:
        d = list(self.durations)
        if not d or d[0] <= 0 or any(b <= a for a, b in zip(d, d[1:])):
            raise ConfigurationError("durations must be non-empty, positive and strictly increasing")
        if self.trials_per_point < 1:
            raise ConfigurationError("trials_per_point must be at least 1")
        if not 0 <= self.base_seed < 2**64:
            raise ConfigurationError("base_seed must be a 64-bit unsigned integer")
        if self.mask_distribution != "uniform":
            mask_bits(self.mask_distribution)


@dataclass(frozen=True)
class SweepRow:
    duration_min: float
    success_rate: float
    bits_correct: float
    leakage_bph: float
    successes: int = 0
    trials: int = 0

    def as_row(self) -> tuple:
        return (self.duration_min, self.success_rate, self.bits_correct, self.leakage_bph)


@dataclass
class ExperimentReport:
    rows: list
    config_hash: str
    seed: int
    trials: list = field(default_factory=list)   # per-trial rows, one list per duration


def spec_from_config(config: SimConfig, seed: int) -> SweepSpec:
    h = config.harness
    return SweepSpec(tuple(h.durations), h.trials_per_point, seed, h.mask)


def success_sweep(spec: SweepSpec, config: SimConfig | None = None, *, workers: int | None = 1) -> ExperimentReport:
    """Success rate, mean bits correct and leakage for each duration.

    Each trial runs once to the longest duration; shorter durations are
    checkpoints of the same run, which equals an independent shorter run.
    """
    config = config or SimConfig()
    spec.validate()
    config = dataclasses.replace(config, harness=dataclasses.replace(config.harness, mask=spec.mask_distribution))
    seeds = [spec.base_seed + i for i in range(spec.trials_per_point)]
    if seeds[-1] >= 2**64:
        raise ConfigurationError("base_seed + trials_per_point overflows 64 bits")
    budgets = [d * NS_PER_MIN for d in spec.durations]
    per_trial = run_trials(config, seeds, budgets, workers=workers)
    rows, by_duration = [], []
    for j, minutes in enumerate(spec.durations):
        col = [t[j] for t in per_trial]
        wins = sum(r.success for r in col)
        rate = wins / len(col)
        rows.append(SweepRow(float(minutes), rate, float(np.mean([r.bits_correct for r in col])),
                             leakage_rate(rate, minutes), wins, len(col)))
        by_duration.append(col)
    return ExperimentReport(rows, config_hash(config), spec.base_seed, by_duration)


def wilson_interval(successes: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    if n == 0:
        return 0.0, 1.0
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def statistically_non_decreasing(rows) -> bool:
    """No later point's 95% interval lies entirely below an earlier point's."""
    intervals = [wilson_interval(r.successes, r.trials) for r in rows]
    for i, (lo_i, hi_i) in enumerate(intervals):
        for lo_j, hi_j in intervals[i + 1:]:
            if hi_j < lo_i:
                return False
    return True


# -- noise calibration ---------------------------------------------------------

@dataclass(frozen=True)
class CalibrationProbe:
    noise_sigma: float
    success_rate: float


@dataclass
class CalibrationResult:
    noise_sigma: float
    success_rate: float
    probes: list


def probe_success(config: SimConfig, sigma: float, minutes: float, trials: int, base_seed: int,
                  workers: int | None = 1) -> float:
    cfg = dataclasses.replace(config, victim=dataclasses.replace(config.victim, noise_sigma=float(sigma)))
    spec = SweepSpec((minutes,), trials, base_seed, config.harness.mask)
    return success_sweep(spec, cfg, workers=workers).rows[0].success_rate


def calibrate_noise(config: SimConfig | None = None, target: tuple | None = None, bounds: tuple | None = None,
                    *, trials: int | None = None, tolerance: float | None = None, max_probes: int | None = None,
                    base_seed: int = 0, workers: int | None = 1) -> CalibrationResult:
    """Bisect ``noise_sigma`` until success at the target duration is within tolerance.

    Success is assumed to fall as sigma grows. Raises :class:`CalibrationError`
    when the bounds do not bracket the target or no probe lands in tolerance.
    """
    config = config or SimConfig()
    h = config.harness
    minutes, goal = target or (h.calibration_duration, h.calibration_target)
    lo, hi = bounds or (h.noise_search_low, h.noise_search_high)
    trials = trials or h.calibration_trials
    tol = h.calibration_tolerance if tolerance is None else tolerance
    max_probes = max_probes or h.calibration_max_probes
    if not 0 <= lo < hi:
        raise ConfigurationError("search bounds must satisfy 0 <= low < high")
    probes = []

    def probe(sigma: float) -> float:
        rate = probe_success(config, sigma, minutes, trials, base_seed, workers)
        probes.append(CalibrationProbe(sigma, rate))
        return rate

    r_lo, r_hi = probe(lo), probe(hi)
    for sigma, rate in ((lo, r_lo), (hi, r_hi)):
        if abs(rate - goal) <= tol:
            return CalibrationResult(sigma, rate, probes)
    if not r_lo > goal > r_hi:
        raise CalibrationError(
            f"bounds do not bracket the target: success {r_lo:.3f} at sigma={lo:g} and "
            f"{r_hi:.3f} at sigma={hi:g}, target {goal:.3f} at {minutes:g} min")
    for _ in range(max_probes):
        mid = 0.5 * (lo + hi)
        rate = probe(mid)
        if abs(rate - goal) <= tol:
            return CalibrationResult(mid, rate, probes)
        if rate > goal:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"no sigma within {tol:.0%} of the target after {max_probes} bisection probes")


# -- leakage comparison ------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    attack: str
    leakage_bph: float
    thor_faster_pct: float | None


def leakage_comparison(thor_bph: float | None = None) -> list[ComparisonRow]:
    """Prior attacks and Thor in ascending leakage order, with Thor's relative speed.

    Without a measured rate Thor is credited with full recovery in 50 minutes.
    """
    thor = leakage_rate(1.0, 50.0) if thor_bph is None else float(thor_bph)
    rows = [ComparisonRow(name, rate, percent_faster(thor, rate)) for name, rate in PRIOR_LEAKAGE]
    rows.append(ComparisonRow("Thor", thor, None))
    return sorted(rows, key=lambda r: r.leakage_bph)


# -- countermeasure ------------------------------------------------------------

@dataclass
class DefenseReport:
    trials: int
    exact_successes: int
    bit_accuracy: float
    overhead: list            # (idle fraction, percent)
    config_hash: str
    seed: int
    rows: list = field(default_factory=list)


def countermeasure_eval(config: SimConfig | None = None, base_seed: int = 0, *, trials: int | None = None,
                        minutes: float | None = None, workers: int | None = 1) -> DefenseReport:
    """Attack keeper-protected victims and price the keeper across idle fractions."""
    config = config or SimConfig()
    h = config.harness
    trials = trials or h.defend_trials
    minutes = minutes or h.defend_duration
    keeper = dataclasses.replace(config.keeper, enabled=True)
    cfg = dataclasses.replace(config, keeper=keeper)
    seeds = [base_seed + i for i in range(trials)]
    rows = [r[0] for r in run_trials(cfg, seeds, [minutes * NS_PER_MIN], protected=True, workers=workers)]
    wins = sum(r.success for r in rows)
    accuracy = sum(r.bits_correct for r in rows) / (WIDTH * len(rows))
    timing = _model(config)
    overhead = [(f, overhead_for_idle_fraction(f, timing, keeper, config.power,
                                               h.workload_period, h.workload_duration))
                for f in h.idle_fractions]
    return DefenseReport(trials, wins, accuracy, overhead, config_hash(config), base_seed, rows)


# -- CSV ---------------------------------------------------------------------

def format_value(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_table(header, rows, fmt: str = "csv") -> str:
    if fmt not in ("csv", "tsv"):
        raise ConfigurationError(f"unknown format {fmt!r}")
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="," if fmt == "csv" else "\t", lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return buf.getvalue()


def read_table(text: str, fmt: str = "csv") -> tuple[list[str], list[list[str]]]:
    reader = csv.reader(io.StringIO(text), delimiter="," if fmt == "csv" else "\t")
    rows = list(reader)
    return rows[0], rows[1:]


def parse_sweep(text: str, fmt: str = "csv") -> list[SweepRow]:
    header, rows = read_table(text, fmt)
    if tuple(header) != SWEEP_HEADER:
        raise ConfigurationError(f"unexpected sweep header {header}")
    return [SweepRow(*(float(v) for v in r)) for r in rows]
