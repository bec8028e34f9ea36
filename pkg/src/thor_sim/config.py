"""Flat ``key = value`` configuration covering every tunable in the simulator.

Keys are the dataclass field names. Map-valued fields use dotted keys
(``cold_state_costs.Cold1 = 100``); pair lists are written ``0.0:54005, 0.5:45953``;
plain lists are comma separated. Lines starting with ``#`` or ``;`` are
comments. Units follow the owning dataclass (ns, GHz, reference cycles).
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .amx import PerformanceState, TimingModelConfig
from .attack import AttackParams
from .countermeasure import DEFAULT_IDLE_FRACTIONS, KeeperConfig, PowerModel
from .errors import ConfigurationError
from .victim import VictimConfig

_SECTION = "thor"


@dataclass
class HarnessConfig:
    durations: tuple = (5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0)  # simulated minutes
    trials_per_point: int = 20
    mask: str = "uniform"                 # or a 64-bit hex mask, e.g. 0x00ff00ff00ff00ff
    calibration_duration: float = 5.0     # minutes
    calibration_target: float = 0.60
    calibration_tolerance: float = 0.05
    calibration_trials: int = 200
    noise_search_low: float = 0.0
    noise_search_high: float = 2000.0
    calibration_max_probes: int = 12
    defend_trials: int = 20
    defend_duration: float = 50.0         # minutes
    idle_fractions: tuple = DEFAULT_IDLE_FRACTIONS
    workload_period: float = 100e6        # ns
    workload_duration: float = 1e9        # ns

    def validate(self) -> None:
        d = list(self.durations)
        if not d or any(b <= a for a, b in zip(d, d[1:])) or d[0] <= 0:
            raise ConfigurationError("durations must be non-empty, positive and strictly increasing")
        if self.trials_per_point < 1 or self.calibration_trials < 1 or self.defend_trials < 1:
            raise ConfigurationError("trial counts must be at least 1")
        if self.mask != "uniform":
            mask_bits(self.mask)
        if not 0 <= self.calibration_target <= 1 or not 0 < self.calibration_tolerance < 1:
            raise ConfigurationError("calibration target/tolerance out of range")
        if not 0 <= self.noise_search_low < self.noise_search_high:
            raise ConfigurationError("noise search bounds must satisfy 0 <= low < high")
        if any(not 0 <= f <= 1 for f in self.idle_fractions):
            raise ConfigurationError("idle fractions must lie in [0, 1]")


def mask_bits(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise ConfigurationError(f"mask must be 'uniform' or an integer, got {text!r}") from None
    if not 0 <= value < 2**64:
        raise ConfigurationError("mask must fit in 64 bits")
    return value


# rng seeds come from --seed, not the file
_EXCLUDED = {"rng_seed", "time_budget"}
# flat keys that would otherwise be ambiguous
_RENAMED = {("keeper", "enabled"): "keeper_enabled"}


@dataclass
class SimConfig:
    timing: TimingModelConfig = field(default_factory=TimingModelConfig)
    victim: VictimConfig = field(default_factory=VictimConfig)
    attack: AttackParams = field(default_factory=lambda: AttackParams(calibration_attempts=10))
    keeper: KeeperConfig = field(default_factory=KeeperConfig)
    power: PowerModel = field(default_factory=PowerModel)
    harness: HarnessConfig = field(default_factory=HarnessConfig)

    def validate(self) -> None:
        self.timing.validate()
        self.victim.validate()
        self.attack.validate()
        self.keeper.validate()
        self.power.validate()
        self.harness.validate()

    def digest(self) -> str:
        return config_hash(self)


def _sections(cfg: SimConfig):
    for f in dataclasses.fields(SimConfig):
        yield f.name, getattr(cfg, f.name)


def _keys(section: str, obj):
    for f in dataclasses.fields(obj):
        if f.name in _EXCLUDED:
            continue
        yield _RENAMED.get((section, f.name), f.name), f.name


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{_fmt(float(a))}:{_fmt(float(b))}" for a, b in value)
        return ", ".join(_fmt(float(v)) for v in value)
    return str(value)


def dump(cfg: SimConfig) -> str:
    """Canonical text form; ``load(dump(c))`` reproduces ``c``."""
    lines = []
    for section, obj in _sections(cfg):
        lines.append(f"# {section}")
        for key, name in _keys(section, obj):
            value = getattr(obj, name)
            if isinstance(value, dict):
                for state in sorted(value, key=int):
                    lines.append(f"{key}.{PerformanceState(state).label} = {_fmt(float(value[state]))}")
            else:
                lines.append(f"{key} = {_fmt(value)}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: SimConfig) -> str:
    return hashlib.sha256(dump(cfg).encode()).hexdigest()


def _parse(text: str, default, key: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text, 0)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [t.strip() for t in text.split(",") if t.strip()]
            if default and isinstance(default[0], tuple):
                return tuple(tuple(float(p) for p in t.split(":")) for t in items)
            return tuple(float(t) for t in items)
        return text
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {text!r}") from None


def loads(text: str, base: SimConfig | None = None) -> SimConfig:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(f"[{_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from None
    if parser.sections() != [_SECTION]:
        raise ConfigurationError("config must be flat key = value lines without sections")
    raw = dict(parser[_SECTION])
    cfg = base or SimConfig()
    updates: dict[str, dict] = {}
    maps: dict[tuple[str, str], dict] = {}
    index = {}
    for section, obj in _sections(cfg):
        for key, name in _keys(section, obj):
            index[key] = (section, name, getattr(obj, name))
    for key, text in raw.items():
        base_key, _, sub = key.partition(".")
        if base_key not in index:
            raise ConfigurationError(f"unknown config key {key!r}")
        section, name, default = index[base_key]
        if isinstance(default, dict):
            if not sub:
                raise ConfigurationError(f"{key} needs a state suffix, e.g. {key}.Cold1")
            state = PerformanceState.parse(sub)
            maps.setdefault((section, name), dict(default))[state] = _parse(text, 0.0, key)
        else:
            if sub:
                raise ConfigurationError(f"{base_key} does not take a suffix")
            updates.setdefault(section, {})[name] = _parse(text, default, key)
    for (section, name), value in maps.items():
        updates.setdefault(section, {})[name] = value
    new = SimConfig(**{section: dataclasses.replace(obj, **updates.get(section, {}))
                       for section, obj in _sections(cfg)})
    try:
        new.validate()
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    return new


def load(path: str | Path | None) -> SimConfig:
    if path is None:
        cfg = SimConfig()
        cfg.validate()
        return cfg
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return loads(text)


def set_key(path: str | Path, key: str, value) -> None:
    """Rewrite (or append) one ``key = value`` line, keeping the rest of the file."""
    p = Path(path)
    lines = p.read_text().splitlines() if p.exists() else []
    new_line = f"{key} = {_fmt(value)}"
    for i, line in enumerate(lines):
        if line.split("=", 1)[0].strip() == key:
            lines[i] = new_line
            break
    else:
        lines.append(new_line)
    p.write_text("\n".join(lines) + "\n")
