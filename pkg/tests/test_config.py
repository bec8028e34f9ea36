import pytest

from thor_sim.amx import PerformanceState
from thor_sim.config import SimConfig, config_hash, dump, load, loads, set_key
from thor_sim.errors import ConfigurationError


def test_roundtrip_defaults():
    cfg = SimConfig()
    assert loads(dump(cfg)) == cfg
    assert dump(loads(dump(cfg))) == dump(cfg)


def test_overrides_and_comments():
    text = """
    # a comment
    noise_sigma = 12.5
    cold_state_costs.Cold4 = 60000
    sparsity_anchor_times = 0.0:50000, 0.5:45000, 1.0:40000
    durations = 5, 50
    keeper_enabled = false
    ; another
    n_trials = 500
    """
    cfg = loads(text)
    assert cfg.victim.noise_sigma == 12.5
    assert cfg.timing.cold_state_costs[PerformanceState.COLD4] == 60000.0
    assert cfg.timing.cold_state_costs[PerformanceState.COLD1] == 100.0
    assert cfg.timing.sparsity_anchor_times[1] == (0.5, 45000.0)
    assert cfg.harness.durations == (5.0, 50.0)
    assert cfg.keeper.enabled is False
    assert cfg.attack.n_trials == 500


@pytest.mark.parametrize("text", [
    "bogus = 1", "noise_sigma = abc", "noise_sigma = -1", "cold_state_costs = 5",
    "cold_state_costs.Cold9 = 5", "[section]\nnoise_sigma = 1", "rng_seed = 4", "durations = 10, 5",
    "k_trim = 25", "mask = 0x1ffffffffffffffff", "cpu_frequency = 3.0",
])
def test_bad_configs(text):
    with pytest.raises(ConfigurationError):
        loads(text)


def test_hash_changes_with_content():
    assert config_hash(SimConfig()) == config_hash(loads(""))
    assert config_hash(SimConfig()) != config_hash(loads("noise_sigma = 51"))


def test_load_file_and_set_key(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# keep me\nnoise_sigma = 3\n")
    set_key(p, "noise_sigma", 7.25)
    set_key(p, "n_trials", 99)
    cfg = load(p)
    assert cfg.victim.noise_sigma == 7.25 and cfg.attack.n_trials == 99
    assert p.read_text().startswith("# keep me\n")
    with pytest.raises(ConfigurationError):
        load(tmp_path / "missing.cfg")
