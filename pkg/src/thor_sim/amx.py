"""Value-dependent timing model of the AMX tile multiply unit.

An instruction issued after an idle gap longer than a decay threshold pays a
fixed cold-state cost (independent of CPU frequency) and restarts the
frequency ramp. In the warm state the unit runs at the current ladder level, so
a fixed AMX-cycle cost stretches by ``reference / level`` in 2 GHz reference
cycles.

Sparse operands push the ladder up faster and, while it is still ramping,
shorten each instruction by a factor fitted to the measured 1000-multiply
anchors.

All times are in reference cycles; the simulated clock is in nanoseconds
(``ns = cycles / reference_frequency_ghz``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

ANCHOR_OPS = 1000
ANCHOR_CPU_FREQUENCY = 2.0
SUPPORTED_FREQUENCIES = tuple(round(0.1 * k, 1) for k in range(8, 21))

_CACHE_LIMIT = 200_000


class PerformanceState(enum.IntEnum):
    """Ordered from cheapest to most expensive per-instruction cost."""

    WARM = 0
    COLD1 = 1
    COLD2 = 2
    COLD3 = 3
    COLD4 = 4

    @property
    def label(self) -> str:
        return "Warm" if self is PerformanceState.WARM else f"Cold{int(self)}"

    @classmethod
    def parse(cls, text) -> "PerformanceState":
        if isinstance(text, PerformanceState):
            return text
        key = str(text).strip().lower()
        for state in cls:
            if state.label.lower() == key or state.name.lower() == key:
                return state
        raise ConfigurationError(f"unknown performance state {text!r}")

    @property
    def is_cold(self) -> bool:
        return self is not PerformanceState.WARM


COLD_STATES = (PerformanceState.COLD1, PerformanceState.COLD2,
               PerformanceState.COLD3, PerformanceState.COLD4)


def _default_cold_costs() -> dict:
    return {
        PerformanceState.COLD1: 1e2,
        PerformanceState.COLD2: 1e3,
        PerformanceState.COLD3: 1e4,
        PerformanceState.COLD4: 5e4,
    }


def _default_decay_intervals() -> dict:
    # idle gap (ns) beyond which the next instruction runs in the given state;
    # the Cold4 threshold is ``cold_reset_interval``
    return {
        PerformanceState.COLD1: 1e3,
        PerformanceState.COLD2: 1e5,
        PerformanceState.COLD3: 1e6,
    }


@dataclass
class TimingModelConfig:
    """Parameters of the TMUL timing model.

    Units: ``*_amx_cycles_*`` in AMX clock cycles, ``cold_state_costs`` and
    anchor times in reference cycles, intervals in nanoseconds, frequencies
    in GHz.
    """

    warm_cost_amx_cycles_latency: float = 52.0
    warm_cost_amx_cycles_throughput: float = 16.0
    cold_state_costs: dict = field(default_factory=_default_cold_costs)
    state_decay_intervals: dict = field(default_factory=_default_decay_intervals)
    cold_reset_interval: float = 20e6
    ramp_units_per_level: float = 5000.0
    sparsity_ramp_factor: float = 1.0
    sparsity_anchor_times: tuple = ((0.0, 54005.0), (0.5, 45953.0), (1.0, 38747.0))
    steady_state_sparsity_weight: float = 0.0
    ladder_waypoints: tuple = (1.0, 1.3)
    cpu_frequency: float = 2.0
    reference_frequency: float = 2.0

    def __post_init__(self):
        self.cold_state_costs = {PerformanceState.parse(k): float(v)
                                 for k, v in self.cold_state_costs.items()}
        self.state_decay_intervals = {PerformanceState.parse(k): float(v)
                                      for k, v in self.state_decay_intervals.items()}
        self.sparsity_anchor_times = tuple(sorted((float(s), float(t)) for s, t in self.sparsity_anchor_times))
        self.ladder_waypoints = tuple(float(f) for f in self.ladder_waypoints)

    def decay_thresholds(self) -> list[tuple[PerformanceState, float]]:
        """(state, idle threshold in ns) pairs, Cold1 through Cold4."""
        out = [(s, self.state_decay_intervals[s]) for s in COLD_STATES[:3]]
        out.append((PerformanceState.COLD4, float(self.cold_reset_interval)))
        return out

    def validate(self) -> None:
        if set(self.cold_state_costs) != set(COLD_STATES):
            raise ConfigurationError("cold_state_costs needs exactly Cold1..Cold4")
        costs = [self.cold_state_costs[s] for s in COLD_STATES]
        if any(b <= a for a, b in zip(costs, costs[1:])) or costs[0] <= 0:
            raise ConfigurationError("cold_state_costs must be positive and strictly increasing Cold1..Cold4")
        if set(self.state_decay_intervals) != set(COLD_STATES[:3]):
            raise ConfigurationError("state_decay_intervals needs exactly Cold1..Cold3 "
                                     "(Cold4 is cold_reset_interval)")
        thresholds = [t for _, t in self.decay_thresholds()]
        if thresholds[0] <= 0 or any(b <= a for a, b in zip(thresholds, thresholds[1:])):
            raise ConfigurationError("decay intervals must be positive and strictly increasing")
        if self.warm_cost_amx_cycles_latency <= 0 or self.warm_cost_amx_cycles_throughput <= 0:
            raise ConfigurationError("warm AMX-cycle costs must be positive")
        if self.ramp_units_per_level <= 0:
            raise ConfigurationError("ramp_units_per_level must be positive")
        if self.sparsity_ramp_factor < 0:
            raise ConfigurationError("sparsity_ramp_factor must be non-negative")
        if not 0.0 <= self.steady_state_sparsity_weight <= 1.0:
            raise ConfigurationError("steady_state_sparsity_weight must lie in [0, 1]")
        sparsities = [s for s, _ in self.sparsity_anchor_times]
        if not {0.0, 0.5, 1.0} <= set(sparsities) or len(set(sparsities)) != len(sparsities):
            raise ConfigurationError("sparsity_anchor_times must cover sparsity 0.0, 0.5 and 1.0 once each")
        if any(not 0.0 <= s <= 1.0 for s in sparsities):
            raise ConfigurationError("anchor sparsities must lie in [0, 1]")
        times = [t for _, t in self.sparsity_anchor_times]
        if any(b >= a for a, b in zip(times, times[1:])) or times[-1] <= 0:
            raise ConfigurationError("anchor times must be positive and strictly decreasing in sparsity")
        if self.reference_frequency <= 0:
            raise ConfigurationError("reference_frequency must be positive")
        check_frequency(self.cpu_frequency)
        FrequencyLadder.for_cpu(self.cpu_frequency, self.ladder_waypoints)


def check_frequency(cpu_frequency: float) -> float:
    for f in SUPPORTED_FREQUENCIES:
        if math.isclose(cpu_frequency, f, abs_tol=1e-9):
            return f
    raise ConfigurationError(
        f"unsupported CPU frequency {cpu_frequency} GHz (supported: 0.8 to 2.0 in 0.1 steps)")


@dataclass
class FrequencyLadder:
    """AMX clock levels traversed after a cold entry, ending at the CPU clock."""

    levels: tuple
    current_index: int = 0
    cpu_frequency: float = 2.0

    def __post_init__(self):
        self.levels = tuple(float(f) for f in self.levels)
        if not self.levels or any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ConfigurationError("ladder levels must be non-empty and strictly increasing")
        if not math.isclose(self.levels[-1], self.cpu_frequency):
            raise ConfigurationError("top ladder level must equal the CPU frequency")
        if not 0 <= self.current_index < len(self.levels):
            raise ConfigurationError("ladder index out of range")

    @classmethod
    def for_cpu(cls, cpu_frequency: float, waypoints=(1.0, 1.3)) -> "FrequencyLadder":
        """Waypoints below the CPU frequency, then the CPU frequency itself.

        2.0 GHz gives (1.0, 1.3, 2.0); 1.2 GHz gives (1.0, 1.2).
        """
        cpu = check_frequency(cpu_frequency)
        levels = tuple(w for w in sorted(waypoints) if w < cpu - 1e-9) + (cpu,)
        return cls(levels=levels, current_index=0, cpu_frequency=cpu)

    @property
    def top(self) -> int:
        return len(self.levels) - 1

    @property
    def current(self) -> float:
        return self.levels[self.current_index]

    @property
    def at_top(self) -> bool:
        return self.current_index == self.top


@dataclass
class AmxState:
    perf: PerformanceState
    ladder: FrequencyLadder
    last_active: float | None = None
    ramp_progress: float = 0.0
    clock: float = 0.0

    def copy(self) -> "AmxState":
        # hot path: skip dataclass re-validation
        ladder = object.__new__(FrequencyLadder)
        ladder.__dict__.update(self.ladder.__dict__)
        new = object.__new__(AmxState)
        new.__dict__.update(self.__dict__)
        new.ladder = ladder
        return new


class TimingModel:
    """Deterministic per-instruction cost model.

    The sparsity law is fitted once at construction: the dense anchor fixes a
    uniform issue scale, and the 50% / 100% anchors fix the per-instruction
    speed-up applied while the ladder is below the CPU frequency. Both fits run
    the same ramp the simulator uses, so ramp acceleration is accounted for.
    """

    def __init__(self, config: TimingModelConfig | None = None):
        self.config = config or TimingModelConfig()
        self.config.validate()
        cfg = self.config
        self.cpu_frequency = check_frequency(cfg.cpu_frequency)
        self._thresholds = cfg.decay_thresholds()
        self._cache: dict = {}
        self.issue_scale = 1.0
        self._anchor_s = np.array([s for s, _ in cfg.sparsity_anchor_times])
        self._anchor_h = np.ones_like(self._anchor_s)
        self._fit_anchors()
        self._cache.clear()

    # -- static pieces ---------------------------------------------------

    def new_ladder(self) -> FrequencyLadder:
        return FrequencyLadder.for_cpu(self.cpu_frequency, self.config.ladder_waypoints)

    def fresh_state(self, now: float = 0.0) -> AmxState:
        """Never-used unit: the first instruction runs in Cold4."""
        return AmxState(perf=PerformanceState.COLD4, ladder=self.new_ladder(),
                        last_active=None, ramp_progress=0.0, clock=now)

    def sparsity_factor(self, sparsity: float) -> float:
        """Per-instruction multiplier applied while the ladder is ramping."""
        return float(np.interp(sparsity, self._anchor_s, self._anchor_h))

    def ramp_work(self, sparsity: float) -> float:
        """Ramp units accrued per instruction: 1/(1+r) dense, 1 fully sparse."""
        dense = 1.0 / (1.0 + self.config.sparsity_ramp_factor)
        return dense + sparsity * (1.0 - dense)

    def classify_gap(self, gap: float | None) -> PerformanceState:
        """State the next instruction runs in after ``gap`` ns of idleness."""
        if gap is None:
            return PerformanceState.COLD4
        state = PerformanceState.WARM
        for cold, threshold in self._thresholds:
            if gap > threshold:
                state = cold
        return state

    def warm_cost(self, level_ghz: float, sparsity: float, *, at_top: bool,
                  back_to_back: bool = True) -> float:
        cfg = self.config
        amx_cycles = cfg.warm_cost_amx_cycles_throughput if back_to_back else cfg.warm_cost_amx_cycles_latency
        if at_top:
            w = cfg.steady_state_sparsity_weight
            h = 1.0 + w * (self.sparsity_factor(sparsity) - 1.0) if w else 1.0
        else:
            h = self.sparsity_factor(sparsity)
        return amx_cycles * (cfg.reference_frequency / level_ghz) * self.issue_scale * h

    def steady_state_cost(self, sparsity: float = 0.0) -> float:
        """Back-to-back cost once the ladder has reached the CPU frequency."""
        return self.warm_cost(self.cpu_frequency, sparsity, at_top=True)

    def cycles_to_ns(self, cycles: float) -> float:
        return cycles / self.config.reference_frequency

    # -- operations --------------------------------------------------------

    def tmul_step(self, state: AmxState, sparsity: float, now: float) -> tuple[float, AmxState]:
        """Issue one instruction at ``now``; returns (reference cycles, new state)."""
        _check_sparsity(sparsity)
        if state.last_active is not None and now < state.last_active:
            raise ValueError("now precedes the last activity of this unit")
        new = state.copy()
        cost = self._step(new, sparsity, now)
        return cost, new

    def run_sequence(self, state: AmxState, n: int, sparsity: float,
                     now: float | None = None) -> tuple[float, AmxState]:
        """Issue ``n`` back-to-back instructions starting at ``now`` (default: state clock)."""
        if int(n) != n or n < 1:
            raise ValueError("n must be a positive integer")
        _check_sparsity(sparsity)
        now = state.clock if now is None else now
        if state.last_active is not None and now < state.last_active:
            raise ValueError("now precedes the last activity of this unit")
        gap = None if state.last_active is None else now - state.last_active
        entry = self.classify_gap(gap)
        if entry.is_cold:
            key = (int(entry), int(n), sparsity)
        else:
            key = (0, gap == 0, state.ladder.current_index, state.ramp_progress, int(n), sparsity)
        hit = self._cache.get(key)
        if hit is None:
            scratch = state.copy()
            total = 0.0
            t = now
            for _ in range(int(n)):
                total += self._step(scratch, sparsity, t)
                t = scratch.last_active
            hit = (total, scratch.ladder.current_index, scratch.ramp_progress)
            if len(self._cache) >= _CACHE_LIMIT:
                self._cache.clear()
            self._cache[key] = hit
        total, index, progress = hit
        new = state.copy()
        new.perf = PerformanceState.WARM if n > 1 else entry
        new.ladder.current_index = index
        new.ramp_progress = progress
        new.last_active = now + self.cycles_to_ns(total)
        new.clock = new.last_active
        return total, new

    def advance_idle(self, state: AmxState, duration: float) -> AmxState:
        """Let ``duration`` ns pass without AMX activity."""
        if duration < 0:
            raise ValueError("duration must be non-negative")
        new = state.copy()
        new.clock = state.clock + duration
        if state.last_active is None:
            return new
        decayed = self.classify_gap(new.clock - state.last_active)
        if decayed.is_cold:
            new.perf = decayed
            new.ladder.current_index = 0
            new.ramp_progress = 0.0
        return new

    def frequency_trajectory(self, sparsity: float = 0.0, n: int = 40_000) -> list[float]:
        """Per-instruction costs of ``n`` back-to-back instructions from a cold start."""
        state = self.fresh_state()
        out = []
        t = 0.0
        for _ in range(n):
            out.append(self._step(state, sparsity, t))
            t = state.last_active
        return out

    # -- internals ---------------------------------------------------------

    def _step(self, state: AmxState, sparsity: float, now: float) -> float:
        gap = None if state.last_active is None else now - state.last_active
        entry = self.classify_gap(gap)
        ladder = state.ladder
        if entry.is_cold:
            cost = self.config.cold_state_costs[entry]
            ladder.current_index = 0
            state.ramp_progress = 0.0
        else:
            cost = self.warm_cost(ladder.current, sparsity, at_top=ladder.at_top,
                                  back_to_back=(gap == 0))
            if not ladder.at_top:
                state.ramp_progress += self.ramp_work(sparsity)
                if state.ramp_progress >= self.config.ramp_units_per_level:
                    ladder.current_index += 1
                    state.ramp_progress = 0.0
        state.perf = entry
        state.last_active = now + self.cycles_to_ns(cost)
        state.clock = state.last_active
        return cost

    def _anchor_split(self, sparsity: float) -> tuple[float, float]:
        """Unit-scale warm cost of the anchor run split into (ramping, top) parts.

        The anchor protocol primes the unit with one cold-entry instruction and
        then times ``ANCHOR_OPS`` back-to-back instructions at 2 GHz.
        """
        cfg = self.config
        ladder = FrequencyLadder.for_cpu(ANCHOR_CPU_FREQUENCY, cfg.ladder_waypoints)
        work = self.ramp_work(sparsity)
        progress = 0.0
        ramping = top = 0.0
        for _ in range(ANCHOR_OPS):
            base = cfg.warm_cost_amx_cycles_throughput * cfg.reference_frequency / ladder.current
            if ladder.at_top:
                top += base
            else:
                ramping += base
                progress += work
                if progress >= cfg.ramp_units_per_level:
                    ladder.current_index += 1
                    progress = 0.0
        return ramping, top

    def _fit_anchors(self) -> None:
        cfg = self.config
        w = cfg.steady_state_sparsity_weight
        anchors = dict(cfg.sparsity_anchor_times)
        ramp0, top0 = self._anchor_split(0.0)
        self.issue_scale = anchors[0.0] / (ramp0 + top0)
        hs = []
        for s, total in cfg.sparsity_anchor_times:
            ramping, top = self._anchor_split(s)
            denom = ramping + w * top
            if denom <= 0:
                raise ConfigurationError("anchor at sparsity %g cannot be fitted: no sparsity-sensitive "
                                         "instructions in the anchor run" % s)
            hs.append((total / self.issue_scale - (1.0 - w) * top) / denom)
        h = np.array(hs)
        if np.any(h <= 0):
            raise ConfigurationError("anchors imply a non-positive per-instruction cost")
        self._anchor_h = h


def _check_sparsity(sparsity: float) -> None:
    if not 0.0 <= sparsity <= 1.0:
        raise ValueError(f"sparsity must lie in [0, 1], got {sparsity}")


def find_plateaus(series, min_length: int = 2, rel_tol: float = 1e-9) -> list[tuple[int, int, float]]:
    """Maximal runs of equal values, as (start, stop, value) with ``stop`` exclusive."""
    runs = []
    start = 0
    values = list(series)
    for i in range(1, len(values) + 1):
        if i == len(values) or not math.isclose(values[i], values[start], rel_tol=rel_tol):
            if i - start >= min_length:
                runs.append((start, i, values[start]))
            start = i
    return runs


def anchor_protocol(model: TimingModel, sparsity: float, n: int = ANCHOR_OPS) -> float:
    """Cycles for ``n`` back-to-back instructions after a single cold-entry instruction."""
    state = model.fresh_state()
    _, state = model.tmul_step(state, sparsity, 0.0)
    total, _ = model.run_sequence(state, n, sparsity, state.last_active)
    return total
