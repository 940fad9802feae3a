"""Run configuration: nested dataclasses, JSON serialisation, dotted-key overrides.

Defaults reproduce the 100 x 100 Oregonator benchmark (spacing 0.02,
dt 0.01, sigma_x 1e-2, ten wavelengths, sigma_y^2 1e-5, 128 particles,
5 x 5 blocks).
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .dynamics import NoiseModel, ReactionDiffusionModel, bump_state, default_observation, homogeneous_state
from .filter import FilterConfig, ProposalKind, Resampling, default_threads
from .lattice import Lattice
from .reaction import OregonatorParams, steady_state


class ConfigError(ValueError):
    pass


@dataclass
class LatticeSection:
    side: int = 100
    spacing: float = 0.02


@dataclass
class OregonatorSection:
    epsilon: float = 0.08
    sigma: float = 0.95
    q: float = 0.0075
    d1: float = 5e-4
    d2: float = 5e-6


@dataclass
class InitialSection:
    kind: str = "steady"              # "steady" or "bump"
    bump_center: list = field(default_factory=lambda: [0.5, 0.5])   # fraction of the side
    bump_radius: float = 0.1          # fraction of the side
    bump_amplitude: float = 0.5


@dataclass
class DynamicsSection:
    dt: float = 0.01
    horizon: float = 40.0
    sigma_x: float = 1e-2
    integrator: str = "euler"
    substeps: int = 1
    floor: float = 1e-12
    oregonator: OregonatorSection = field(default_factory=OregonatorSection)
    initial: InitialSection = field(default_factory=InitialSection)


@dataclass
class ObservationSection:
    n_wavelengths: int = 10
    lam_max: float = 50.0
    centers: list = field(default_factory=lambda: [10.0, 40.0])
    width: float = 30.0
    noise_var: float = 1e-5
    stride: int = 1


@dataclass
class FilterSection:
    n_particles: int = 128
    block_side: int = 5
    proposal: str = "optimal"
    resampling: str = "multinomial"


@dataclass
class SeedSection:
    simulation: int = 0
    filter: int = 1


@dataclass
class OutputSection:
    directory: str = "out"
    snapshot_times: list = field(default_factory=lambda: [10.0, 20.0, 30.0, 40.0])


@dataclass
class RunConfig:
    lattice: LatticeSection = field(default_factory=LatticeSection)
    dynamics: DynamicsSection = field(default_factory=DynamicsSection)
    observation: ObservationSection = field(default_factory=ObservationSection)
    filter: FilterSection = field(default_factory=FilterSection)
    seeds: SeedSection = field(default_factory=SeedSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = _build(cls, data or {}, "")
        cfg.validate()
        return cfg

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text())

    def override(self, key: str, value) -> "RunConfig":
        """Return a copy with dotted ``key`` set; string values are parsed as JSON when possible."""
        if isinstance(value, str):
            try:
                value = json.loads(value)
            except json.JSONDecodeError:
                pass
        data = self.to_dict()
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node = node[p]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node[parts[-1]] = value
        return RunConfig.from_dict(data)

    # -- validation ----------------------------------------------------------------
    def validate(self) -> None:
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(f"{name} {msg}")

        lat, dyn, obs, flt = self.lattice, self.dynamics, self.observation, self.filter
        need(_is_int(lat.side) and lat.side >= 2, "lattice.side", "must be an integer >= 2")
        need(_pos(lat.spacing), "lattice.spacing", "must be positive")
        need(_pos(dyn.dt), "dynamics.dt", "must be positive")
        need(_pos(dyn.horizon), "dynamics.horizon", "must be positive")
        need(_num(dyn.sigma_x) and dyn.sigma_x >= 0, "dynamics.sigma_x", "must be nonnegative")
        need(dyn.integrator in ("euler", "rk4"), "dynamics.integrator", "must be 'euler' or 'rk4'")
        need(_is_int(dyn.substeps) and dyn.substeps >= 1, "dynamics.substeps", "must be an integer >= 1")
        need(_pos(dyn.floor), "dynamics.floor", "must be positive")
        o = dyn.oregonator
        need(_pos(o.epsilon), "dynamics.oregonator.epsilon", "must be positive")
        need(_pos(o.q), "dynamics.oregonator.q", "must be positive")
        need(_num(o.sigma), "dynamics.oregonator.sigma", "must be a number")
        need(_num(o.d1) and o.d1 >= 0, "dynamics.oregonator.d1", "must be nonnegative")
        need(_num(o.d2) and o.d2 >= 0, "dynamics.oregonator.d2", "must be nonnegative")
        need(dyn.initial.kind in ("steady", "bump"), "dynamics.initial.kind", "must be 'steady' or 'bump'")
        need(_is_int(obs.n_wavelengths) and obs.n_wavelengths >= 1, "observation.n_wavelengths",
             "must be an integer >= 1")
        need(_pos(obs.lam_max), "observation.lam_max", "must be positive")
        need(isinstance(obs.centers, list) and len(obs.centers) == 2 and all(map(_num, obs.centers)),
             "observation.centers", "must list two numbers (one per species)")
        need(_pos(obs.width), "observation.width", "must be positive")
        need(_pos(obs.noise_var), "observation.noise_var", "must be positive")
        need(_is_int(obs.stride) and obs.stride >= 1, "observation.stride", "must be an integer >= 1")
        need(_is_int(flt.n_particles) and flt.n_particles >= 1, "filter.n_particles", "must be an integer >= 1")
        need(_is_int(flt.block_side) and 1 <= flt.block_side <= lat.side, "filter.block_side",
             f"must be an integer in 1..{lat.side}")
        try:
            ProposalKind.parse(flt.proposal)
        except ValueError:
            raise ConfigError("filter.proposal must be 'optimal' or 'bootstrap'") from None
        need(flt.resampling in {r.value for r in Resampling}, "filter.resampling",
             "must be 'multinomial' or 'systematic'")
        need(_is_int(self.seeds.simulation) and self.seeds.simulation >= 0, "seeds.simulation",
             "must be a nonnegative integer")
        need(_is_int(self.seeds.filter) and self.seeds.filter >= 0, "seeds.filter", "must be a nonnegative integer")
        need(isinstance(self.output.snapshot_times, list) and all(map(_num, self.output.snapshot_times)),
             "output.snapshot_times", "must be a list of numbers")

    # -- builders ------------------------------------------------------------------
    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.dynamics.horizon / self.dynamics.dt)))

    def build_lattice(self) -> Lattice:
        return Lattice(self.lattice.side, self.lattice.spacing)

    def build_model(self) -> ReactionDiffusionModel:
        dyn, obs = self.dynamics, self.observation
        return ReactionDiffusionModel(
            self.build_lattice(),
            OregonatorParams(**dataclasses.asdict(dyn.oregonator)),
            NoiseModel(dyn.sigma_x, dyn.dt, dyn.floor),
            default_observation(obs.n_wavelengths, obs.lam_max, tuple(obs.centers), obs.width, obs.noise_var),
            integrator=dyn.integrator,
            substeps=dyn.substeps,
        )

    def initial_state(self):
        lat = self.build_lattice()
        zs = steady_state(OregonatorParams(**dataclasses.asdict(self.dynamics.oregonator)))
        ini = self.dynamics.initial
        if ini.kind == "steady":
            return homogeneous_state(lat, zs)
        center = [1 + c * (lat.side - 1) for c in ini.bump_center]
        return bump_state(lat, zs, center, ini.bump_radius * lat.side, ini.bump_amplitude)

    def filter_config(self, threads=None) -> FilterConfig:
        f = self.filter
        return FilterConfig(f.n_particles, f.block_side, f.proposal, f.resampling, self.seeds.filter,
                            default_threads() if threads is None else threads)


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _pos(v):
    return _num(v) and v > 0


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix.rstrip('.') or 'config'} must be an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(prefix + k for k in sorted(unknown))}")
    kwargs = {}
    for name, f in known.items():
        if name not in data:
            continue
        v = data[name]
        sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            v = _build(sub, v, f"{prefix}{name}.")
        elif f.type in ("float",) and _is_int(v):
            v = float(v)
        kwargs[name] = v
    return cls(**kwargs)
