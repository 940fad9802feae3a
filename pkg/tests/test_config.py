import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rdbpf.config import ConfigError, RunConfig
from rdbpf.filter import ProposalKind


def test_defaults_match_benchmark():
    cfg = RunConfig()
    assert (cfg.lattice.side, cfg.lattice.spacing) == (100, 0.02)
    assert (cfg.dynamics.dt, cfg.dynamics.sigma_x) == (0.01, 1e-2)
    assert cfg.observation.n_wavelengths == 10 and cfg.observation.noise_var == 1e-5
    assert (cfg.filter.n_particles, cfg.filter.block_side) == (128, 5)
    m = cfg.build_model()
    assert m.observation.n_wavelengths * cfg.lattice.side**2 == 100_000
    assert m.n_species * cfg.lattice.side**2 == 20_000
    assert cfg.n_steps == 4000


@given(side=st.integers(2, 300), dt=st.floats(1e-4, 1.0), particles=st.integers(1, 1000),
       proposal=st.sampled_from(["optimal", "bootstrap"]), seed=st.integers(0, 2**31),
       noise=st.floats(1e-9, 10.0), stride=st.integers(1, 9))
def test_json_round_trip(side, dt, particles, proposal, seed, noise, stride):
    cfg = RunConfig()
    for key, value in [("filter.block_side", 1), ("lattice.side", side), ("dynamics.dt", dt), ("filter.n_particles", particles),
                       ("filter.proposal", proposal), ("seeds.simulation", seed),
                       ("observation.noise_var", noise), ("observation.stride", stride)]:
        cfg = cfg.override(key, value)
    back = RunConfig.loads(cfg.dumps())
    assert back == cfg
    assert back.dumps() == cfg.dumps()


def test_override_parses_json_strings():
    cfg = RunConfig().override("lattice.side", "12").override("filter.proposal", "bootstrap")
    cfg = cfg.override("output.snapshot_times", "[0.5, 1]")
    assert cfg.lattice.side == 12 and cfg.output.snapshot_times == [0.5, 1]
    assert cfg.filter_config(threads=1).proposal is ProposalKind.BOOTSTRAP


@pytest.mark.parametrize("key,value,field", [
    ("lattice.side", 1, "lattice.side"),
    ("lattice.spacing", -1.0, "lattice.spacing"),
    ("dynamics.integrator", "rk45", "dynamics.integrator"),
    ("observation.noise_var", 0.0, "observation.noise_var"),
    ("filter.block_side", 101, "filter.block_side"),
    ("filter.proposal", "ensemble", "filter.proposal"),
    ("filter.n_particles", 0, "filter.n_particles"),
    ("observation.centers", [1.0], "observation.centers"),
])
def test_validation_names_field(key, value, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        RunConfig().override(key, value)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="lattice.sides"):
        RunConfig.from_dict({"lattice": {"sides": 3}})
    with pytest.raises(ConfigError, match="unknown config key"):
        RunConfig().override("filter.nope", 1)
    with pytest.raises(ConfigError, match="not valid JSON"):
        RunConfig.loads("{")


def test_partial_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"lattice": {"side": 8}, "dynamics": {"horizon": 1}}))
    cfg = RunConfig.load(p)
    assert cfg.lattice.side == 8 and cfg.dynamics.horizon == 1.0 and cfg.n_steps == 100
    assert isinstance(cfg.dynamics.horizon, float)


def test_bump_initial_state():
    cfg = RunConfig().override("lattice.side", 20).override("dynamics.initial.kind", "bump")
    x = cfg.initial_state()
    assert x.shape == (2, 20, 20)
    assert x[0].max() > x[0].min() and x[1].max() == x[1].min()
