"""Single-layer, 64-weight inference endpoint running on the simulated AMX.

The only thing a caller learns from a :class:`Victim` is how long each query
took. Every query performs ``m_multiplications`` back-to-back tile multiplies
whose operand sparsity is the effective sparsity of (weights AND input).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .amx import AmxState, PerformanceState, TimingModel, TimingModelConfig
from .errors import ConfigurationError
from .patterns import WIDTH, TilePattern, as_pattern, aligned_count

# Reference cycles. Small enough that the default attack at 50 simulated
# minutes still recovers nearly every mask; see README "Noise calibration".
DEFAULT_NOISE_SIGMA = 50.0


@dataclass
class VictimConfig:
    m_multiplications: int = 40
    noise_sigma: float = DEFAULT_NOISE_SIGMA  # reference cycles
    rng_seed: int = 0

    def validate(self) -> None:
        if int(self.m_multiplications) != self.m_multiplications or self.m_multiplications < 1:
            raise ConfigurationError("m_multiplications must be a positive integer")
        if not self.noise_sigma >= 0:
            raise ConfigurationError("noise_sigma must be non-negative")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ConfigurationError("rng_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class WeightVector:
    mask: TilePattern
    values: tuple

    def __post_init__(self):
        if len(self.values) != WIDTH:
            raise ConfigurationError("weight vector needs 64 values")
        if any((v != 0) != m for v, m in zip(self.values, self.mask)):
            raise ConfigurationError("weight values disagree with the mask")

    @classmethod
    def draw(cls, mask: TilePattern, rng: np.random.Generator) -> "WeightVector":
        """Non-zero int8 values behind the mask; zeros elsewhere."""
        magnitudes = rng.integers(1, 128, size=WIDTH)
        signs = np.where(rng.integers(0, 2, size=WIDTH) == 1, 1, -1)
        raw = np.clip(magnitudes * signs, -128, 127)
        values = tuple(int(v) if m else 0 for v, m in zip(raw, mask))
        return cls(mask, values)


@dataclass
class SimClock:
    now: float = 0.0

    def advance(self, duration: float) -> None:
        if duration < 0:
            raise ValueError("clock cannot move backwards")
        self.now += duration


@dataclass(frozen=True)
class TimingSample:
    cycles: float          # observed, noisy, reference cycles
    clock_cost_ns: float   # simulated time consumed (waits + execution)


class Victim:
    def __init__(self, mask, config: VictimConfig | None = None,
                 timing: TimingModelConfig | TimingModel | None = None, *, record_activity: bool = False):
        self.config = config or VictimConfig()
        self.config.validate()
        self.model = timing if isinstance(timing, TimingModel) else TimingModel(timing)
        value_seq, noise_seq = np.random.SeedSequence(int(self.config.rng_seed)).spawn(2)
        self._weights = WeightVector.draw(as_pattern(mask), np.random.default_rng(value_seq))
        self._rng = np.random.default_rng(noise_seq)
        self._clock = SimClock()
        self._state: AmxState = self.model.fresh_state()
        self.busy_ns = 0.0
        self.idle_ns = 0.0
        self.activity: list[tuple[float, float]] | None = [] if record_activity else None
        self._cold_table: np.ndarray | None = None

    @property
    def clock(self) -> float:
        """Simulated time in ns."""
        return self._clock.now

    def peek_state(self) -> AmxState:
        """Instrumentation only: a copy of the AMX state as of the current clock."""
        return self.model.advance_idle(self._state, self._clock.now - self._state.clock)

    def wait(self, duration: float) -> None:
        if duration < 0:
            raise ValueError("duration must be non-negative")
        self._idle(duration)

    def query(self, inputs) -> TimingSample:
        elapsed = self._execute(inputs)
        return TimingSample(cycles=self._observe(elapsed), clock_cost_ns=self.model.cycles_to_ns(elapsed))

    def sample(self, inputs, repeats: int, cooldown: float) -> np.ndarray:
        """``repeats`` rounds of ``wait(cooldown)`` then ``query(inputs)``; observed cycles."""
        return self.sample_many([inputs], repeats, cooldown)[0]

    def sample_many(self, inputs, repeats: int, cooldown: float, *,
                    deadline: float | None = None, group: int = 1) -> np.ndarray:
        """:meth:`sample` for each input in turn, as one call.

        Inputs are taken in groups of ``group``; a group is started only while
        the clock is before ``deadline``. Returns an array of shape
        (inputs processed, repeats).
        """
        if repeats < 1:
            raise ValueError("repeats must be positive")
        bits = _input_bits(inputs)
        if self.model.classify_gap(cooldown) is PerformanceState.COLD4:
            return self._sample_cold(bits, repeats, cooldown, deadline, group)
        return sample_blocks(self, bits, repeats, cooldown, deadline, group)

    # -- internals ---------------------------------------------------------

    def _idle(self, duration: float) -> None:
        self._clock.advance(duration)
        self.idle_ns += duration

    def _sample_cold(self, bits, repeats, cooldown, deadline, group) -> np.ndarray:
        # every query is entered after a full reset, so its cost depends only
        # on the aligned count
        table = self._cold_costs()
        aligned = np.bitwise_count(bits & np.uint64(self._weights.mask.bits)).astype(np.intp)
        costs = table[aligned]
        block_ns = repeats * (cooldown + costs / self.model.config.reference_frequency)
        n = len(bits)
        if deadline is not None and n:
            starts = self._clock.now + np.concatenate(([0.0], np.cumsum(block_ns)[:-1]))
            group_starts = starts[::group]
            n = min(n, int(np.count_nonzero(group_starts < deadline)) * group)
        if n == 0:
            return np.empty((0, repeats))
        cost_ns = costs[:n] / self.model.config.reference_frequency
        if self.activity is not None:
            t = self._clock.now
            for c in cost_ns:
                for _ in range(repeats):
                    t += cooldown
                    self.activity.append((t, t + c))
                    t += c
        idle = n * repeats * cooldown
        busy = repeats * float(cost_ns.sum())
        self.idle_ns += idle
        self.busy_ns += busy
        end = self._clock.now + idle + busy
        last_start = end - float(cost_ns[-1])
        _, self._state = self.model.run_sequence(self.model.fresh_state(), self.config.m_multiplications,
                                                 1.0 - aligned[n - 1] / WIDTH, last_start)
        self._clock.now = end
        self._state.last_active = self._state.clock = end
        return self._observe_many(np.repeat(costs[:n, None], repeats, axis=1))

    def _cold_costs(self) -> np.ndarray:
        if self._cold_table is None:
            cold = self.model.fresh_state()
            self._cold_table = np.array([
                self.model.run_sequence(cold, self.config.m_multiplications, 1.0 - a / WIDTH, 0.0)[0]
                for a in range(WIDTH + 1)])
        return self._cold_table

    def _execute(self, inputs) -> float:
        """Run one inference at the current clock; returns noiseless cycles."""
        return self._execute_sparsity(1.0 - aligned_count(self._weights.mask, as_pattern(inputs)) / WIDTH)

    def _execute_sparsity(self, sparsity: float) -> float:
        start = self._clock.now
        total, self._state = self.model.run_sequence(self._state, self.config.m_multiplications,
                                                     sparsity, start)
        busy = self.model.cycles_to_ns(total)
        self._clock.now = self._state.last_active
        self.busy_ns += busy
        if self.activity is not None:
            self.activity.append((start, self._clock.now))
        return total

    def _observe(self, elapsed: float) -> float:
        sigma = self.config.noise_sigma
        if sigma == 0:
            return float(elapsed)
        return max(0.0, float(elapsed + self._rng.normal(0.0, sigma)))

    def _observe_many(self, elapsed: np.ndarray) -> np.ndarray:
        sigma = self.config.noise_sigma
        if sigma == 0:
            return elapsed.astype(float)
        return np.maximum(0.0, elapsed + self._rng.normal(0.0, sigma, size=elapsed.shape))


def _input_bits(inputs) -> np.ndarray:
    if isinstance(inputs, np.ndarray) and inputs.dtype == np.uint64:
        return inputs
    return np.array([as_pattern(x).bits for x in inputs], dtype=np.uint64)


def sample_blocks(endpoint, bits: np.ndarray, repeats: int, cooldown: float,
                  deadline: float | None, group: int) -> np.ndarray:
    """Reference implementation of ``sample_many`` on top of wait/_execute."""
    elapsed = []
    for j, b in enumerate(bits):
        if deadline is not None and j % group == 0 and endpoint.clock >= deadline:
            break
        pattern = TilePattern(int(b))
        row = []
        for _ in range(repeats):
            endpoint.wait(cooldown)
            row.append(endpoint._execute(pattern))
        elapsed.append(row)
    if not elapsed:
        return np.empty((0, repeats))
    return endpoint._observe_many(np.array(elapsed, dtype=float))


def new_victim(mask, config: VictimConfig | None = None, timing=None, **kwargs) -> Victim:
    return Victim(mask, config, timing, **kwargs)


def entry_state(victim) -> PerformanceState:
    """State the next query's first instruction would run in."""
    state = victim.peek_state()
    gap = None if state.last_active is None else victim.clock - state.last_active
    return victim.model.classify_gap(gap)
