"""Warm-state keeper defense and the power model used to price it.

The keeper issues a small dense tile multiply whenever the AMX unit has been
idle for ``keep_interval``. The unit therefore never decays past Warm, its
frequency ladder stays at the CPU clock, and every query runs at the same
input-independent steady-state cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .amx import PerformanceState, TimingModel
from .errors import ConfigurationError, UndefinedOverheadError
from .victim import Victim, _input_bits, sample_blocks

KEEPER_SPARSITY = 0.0


@dataclass
class KeeperConfig:
    keep_interval: float = 500.0   # ns of idleness before a keep-warm op is issued
    enabled: bool = True

    def validate(self, model: TimingModel | None = None) -> None:
        if not self.keep_interval > 0:
            raise ConfigurationError("keep_interval must be positive")
        if model is None:
            return
        first = model.config.decay_thresholds()[0][1]
        if self.keep_interval >= first:
            raise ConfigurationError(
                f"keep_interval {self.keep_interval} ns must be below the first decay interval ({first} ns)")
        # the gap left at the end of a wait can reach keep_interval plus one op
        if self.keep_interval + max_keeper_op_ns(model) > first:
            raise ConfigurationError("keep_interval plus one keep-warm op exceeds the first decay interval")


def keeper_op_ns(model: TimingModel, level: float, at_top: bool) -> float:
    return model.cycles_to_ns(model.warm_cost(level, KEEPER_SPARSITY, at_top=at_top, back_to_back=False))


def max_keeper_op_ns(model: TimingModel) -> float:
    ladder = model.new_ladder()
    return max(keeper_op_ns(model, f, i == ladder.top) for i, f in enumerate(ladder.levels))


class ProtectedVictim:
    """A :class:`Victim` sharing its AMX unit with a keep-warm thread.

    Only :meth:`wait` changes: idle time is filled with keeper ops. With the
    keeper disabled every call is forwarded untouched.
    """

    def __init__(self, victim: Victim, keeper: KeeperConfig | None = None):
        self.keeper = keeper or KeeperConfig()
        self.keeper.validate(victim.model)
        self.victim = victim
        self.model = victim.model
        self.config = victim.config
        self.keeper_ops = 0
        self.keeper_busy_ns = 0.0
        ladder = self.model.new_ladder()
        self._op_ns = [keeper_op_ns(self.model, f, i == ladder.top) for i, f in enumerate(ladder.levels)]

    @property
    def clock(self) -> float:
        return self.victim.clock

    @property
    def busy_ns(self) -> float:
        return self.victim.busy_ns

    @property
    def idle_ns(self) -> float:
        return self.victim.idle_ns

    def peek_state(self):
        return self.victim.peek_state()

    def query(self, inputs):
        return self.victim.query(inputs)

    def sample(self, inputs, repeats: int, cooldown: float) -> np.ndarray:
        return self.sample_many([inputs], repeats, cooldown)[0]

    def sample_many(self, inputs, repeats: int, cooldown: float, *,
                    deadline: float | None = None, group: int = 1) -> np.ndarray:
        if not self.keeper.enabled:
            return self.victim.sample_many(inputs, repeats, cooldown, deadline=deadline, group=group)
        if repeats < 1:
            raise ValueError("repeats must be positive")
        return sample_blocks(self, _input_bits(inputs), repeats, cooldown, deadline, group)

    def wait(self, duration: float) -> None:
        if not self.keeper.enabled:
            self.victim.wait(duration)
            return
        if duration < 0:
            raise ValueError("duration must be non-negative")
        v = self.victim
        end = v.clock + duration
        self._keep_warm(v.clock, end)
        v._clock.now = end
        v.idle_ns += duration

    # passthroughs used by sample_blocks
    def _execute(self, inputs) -> float:
        return self.victim._execute(inputs)

    def _observe_many(self, elapsed: np.ndarray) -> np.ndarray:
        return self.victim._observe_many(elapsed)

    def _keep_warm(self, start: float, end: float) -> None:
        """Issue every keeper op that completes by ``end``, a ladder level at a time."""
        model, v = self.model, self.victim
        ki = self.keeper.keep_interval
        cfg = model.config
        while True:
            state = v._state
            la = state.last_active
            issue = start if la is None else max(start, la + ki)
            gap = None if la is None else issue - la
            if model.classify_gap(gap).is_cold:
                # unit already cold when the keeper took over: one full-price op
                cost, new = model.tmul_step(state, KEEPER_SPARSITY, issue)
                if new.last_active > end:
                    return
                self._record(issue, new.last_active)
                v._state = new
                self.keeper_busy_ns += model.cycles_to_ns(cost)
                self.keeper_ops += 1
                continue
            ladder = state.ladder
            c = self._op_ns[ladder.current_index]
            if issue + c > end:
                return
            period = ki + c
            k = int((end - issue - c) // period) + 1
            if not ladder.at_top:
                work = model.ramp_work(KEEPER_SPARSITY)
                k = min(k, max(1, math.ceil((cfg.ramp_units_per_level - state.ramp_progress) / work)))
            new = state.copy()
            if not ladder.at_top:
                new.ramp_progress += k * work
                if new.ramp_progress >= cfg.ramp_units_per_level:
                    new.ladder.current_index += 1
                    new.ramp_progress = 0.0
            new.perf = PerformanceState.WARM
            new.last_active = new.clock = issue + (k - 1) * period + c
            if v.activity is not None:
                for j in range(k):
                    self._record(issue + j * period, issue + j * period + c)
            v._state = new
            self.keeper_busy_ns += k * c
            self.keeper_ops += k

    def _record(self, a: float, b: float) -> None:
        if self.victim.activity is not None:
            self.victim.activity.append((a, b))


def wrap_victim(victim: Victim, keeper: KeeperConfig | None = None) -> ProtectedVictim:
    return ProtectedVictim(victim, keeper)


# -- power -------------------------------------------------------------------

ACTIVE = "Active"


def _default_state_power() -> dict:
    # relative units; calibration targets, not measurements
    return {
        PerformanceState.WARM: 0.40,
        PerformanceState.COLD1: 0.32,
        PerformanceState.COLD2: 0.26,
        PerformanceState.COLD3: 0.245,
        PerformanceState.COLD4: 0.24,
    }


@dataclass
class PowerModel:
    state_power: dict = field(default_factory=_default_state_power)
    active_power: float = 0.48
    static_power: float = 1.0

    def __post_init__(self):
        self.state_power = {PerformanceState.parse(k): float(v) for k, v in self.state_power.items()}

    def validate(self) -> None:
        if set(self.state_power) != set(PerformanceState):
            raise ConfigurationError("state_power needs Warm and Cold1..Cold4")
        if any(p < 0 for p in self.state_power.values()) or self.active_power < 0 or self.static_power < 0:
            raise ConfigurationError("power values must be non-negative")
        if not self.state_power[PerformanceState.WARM] > self.state_power[PerformanceState.COLD4]:
            raise ConfigurationError("Warm idle power must exceed Cold4 idle power")

    def power(self, key) -> float:
        base = self.active_power if key == ACTIVE else self.state_power[PerformanceState.parse(key)]
        return base + self.static_power


@dataclass
class PowerTrace:
    """Time (ns) spent in each residency: ``Active`` or an idle PerformanceState."""

    duration: float
    residency: dict

    def energy(self, model: PowerModel) -> float:
        return sum(model.power(k) * t for k, t in self.residency.items())


def periodic_workload(idle_fraction: float, period: float = 100e6, duration: float = 1e9) -> list[tuple[float, float]]:
    """Busy intervals: each period starts with ``(1 - idle_fraction) * period`` of work."""
    if not 0 <= idle_fraction <= 1:
        raise ConfigurationError("idle_fraction must lie in [0, 1]")
    if period <= 0 or duration <= 0:
        raise ConfigurationError("period and duration must be positive")
    busy = (1.0 - idle_fraction) * period
    out = []
    t = 0.0
    while t < duration and busy > 0:
        out.append((t, min(t + busy, duration)))
        t += period
    return out


def _idle_gaps(busy: list[tuple[float, float]], duration: float) -> list[tuple[float, bool]]:
    """(gap length, follows activity) for every idle stretch in [0, duration]."""
    gaps = []
    t = 0.0
    seen = False
    for a, b in sorted(busy):
        if a > t:
            gaps.append((a - t, seen))
        t = max(t, b)
        seen = True
    if duration > t:
        gaps.append((duration - t, seen))
    return gaps


def _baseline_residency(gap: float, model: TimingModel, out: dict) -> None:
    edges = [(PerformanceState.WARM, 0.0)] + model.config.decay_thresholds()
    for (state, lo), (_, hi) in zip(edges, edges[1:] + [(None, math.inf)]):
        if gap > lo:
            out[state] = out.get(state, 0.0) + min(gap, hi) - lo


def build_trace(busy: list[tuple[float, float]], duration: float, model: TimingModel,
                keeper: KeeperConfig | None = None) -> PowerTrace:
    """State residency of a workload, with or without the keeper.

    Without the keeper an idle gap walks Warm, Cold1 .. Cold4 at the decay
    thresholds; before the first activity the unit sits in Cold4. With the
    keeper every gap stays Warm apart from the keeper's own ops, which run at
    the steady-state cost every ``keep_interval``.
    """
    residency = {ACTIVE: 0.0}
    for a, b in busy:
        residency[ACTIVE] += max(0.0, min(b, duration) - max(a, 0.0))
    protect = keeper is not None and keeper.enabled
    if protect:
        keeper.validate(model)
        c = keeper_op_ns(model, model.cpu_frequency, True)
        period = keeper.keep_interval + c
    for gap, after_activity in _idle_gaps(busy, duration):
        if protect:
            # the keeper runs from time zero, so even a never-used unit is kept warm
            ops = math.floor(gap / period)
            residency[ACTIVE] += ops * c
            residency[PerformanceState.WARM] = residency.get(PerformanceState.WARM, 0.0) + gap - ops * c
        elif after_activity:
            _baseline_residency(gap, model, residency)
        else:
            # never used yet: the unit sits in its deepest state
            residency[PerformanceState.COLD4] = residency.get(PerformanceState.COLD4, 0.0) + gap
    return PowerTrace(duration, residency)


def power_overhead(protected: PowerTrace, baseline: PowerTrace, model: PowerModel | None = None) -> float:
    """Percent extra energy of ``protected`` over ``baseline``."""
    model = model or PowerModel()
    model.validate()
    if not math.isclose(protected.duration, baseline.duration):
        raise ConfigurationError("traces must cover the same interval")
    e_base = baseline.energy(model)
    if e_base == 0:
        raise UndefinedOverheadError("baseline trace has zero energy")
    return 100.0 * (protected.energy(model) - e_base) / e_base


def overhead_for_idle_fraction(idle_fraction: float, timing: TimingModel | None = None,
                               keeper: KeeperConfig | None = None, power: PowerModel | None = None,
                               period: float = 100e6, duration: float = 1e9) -> float:
    timing = timing or TimingModel()
    keeper = keeper or KeeperConfig()
    busy = periodic_workload(idle_fraction, period, duration)
    base = build_trace(busy, duration, timing)
    prot = build_trace(busy, duration, timing, keeper)
    return power_overhead(prot, base, power)


DEFAULT_IDLE_FRACTIONS = (0.25, 0.4, 0.55, 0.7, 0.9)


def overhead_sweep(idle_fractions=DEFAULT_IDLE_FRACTIONS, **kwargs) -> list[tuple[float, float]]:
    """(idle fraction, overhead %) for each fraction, in the given order."""
    return [(f, overhead_for_idle_fraction(f, **kwargs)) for f in idle_fractions]
