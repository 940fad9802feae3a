"""Stochastic reaction-diffusion dynamics on a lattice and spectral observations.

State arrays have shape ``(..., n_species, side, side)`` and observation
arrays ``(..., n_wavelengths, side, side)``; leading axes (e.g. particles)
broadcast through every function here.

One transition is the zero-order-hold Euler-Maruyama map

    X_k = F(X_{k-1}) + sigma_x * X_{k-1} * sqrt(dt) * xi,   xi ~ N(0, I)

where ``F`` is one explicit Euler step of the deterministic dynamics (or,
optionally, a fixed-substep RK4 pass), followed by a positivity floor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import _kernels
from . import rng as rngmod
from .lattice import Lattice, laplacian
from .reaction import OregonatorParams, oregonator_drift, steady_state

DEFAULT_FLOOR = 1e-12


class NumericalInstabilityError(ArithmeticError):
    """Raised when a state or weight becomes non-finite."""


@dataclass(frozen=True)
class NoiseModel:
    sigma_x: float = 1e-2
    dt: float = 0.01
    floor: float | None = DEFAULT_FLOOR

    def __post_init__(self):
        if self.sigma_x < 0:
            raise ValueError("sigma_x must be nonnegative")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class ObservationModel:
    """Linear spectral read-out ``y_site = response @ z_site + e``, ``e ~ N(0, noise_var I)``."""

    wavelengths: np.ndarray
    response: np.ndarray
    noise_var: float = 1e-5

    def __post_init__(self):
        wl = np.atleast_1d(np.asarray(self.wavelengths, dtype=float))
        resp = np.atleast_2d(np.asarray(self.response, dtype=float))
        if resp.shape[0] != wl.size or wl.size < 1:
            raise ValueError(f"response must have one row per wavelength, got {resp.shape} for {wl.size}")
        if not np.all(np.isfinite(resp)):
            raise ValueError("response entries must be finite")
        if not self.noise_var > 0:
            raise ValueError("measurement noise variance must be positive")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "response", resp)

    @property
    def n_wavelengths(self) -> int:
        return self.response.shape[0]

    @property
    def n_species(self) -> int:
        return self.response.shape[1]

    def mean(self, x: np.ndarray) -> np.ndarray:
        """Noise-free output for state array ``x``."""
        return np.einsum("ls,...sij->...lij", self.response, x)


def gaussian_response(wavelengths, centers=(10.0, 40.0), width=30.0) -> np.ndarray:
    wl = np.asarray(wavelengths, dtype=float)
    return np.stack([np.exp(-((wl - c) ** 2) / width) for c in centers], axis=1)


def default_observation(n_wavelengths=10, lam_max=50.0, centers=(10.0, 40.0), width=30.0,
                        noise_var=1e-5) -> ObservationModel:
    """Equally spaced left-closed grid ``lam_j = j * lam_max / n`` and Gaussian spectra."""
    wl = np.arange(n_wavelengths) * (lam_max / n_wavelengths)
    return ObservationModel(wl, gaussian_response(wl, centers, width), noise_var)


def observation_vector(y: np.ndarray) -> np.ndarray:
    """Flatten ``(n_wavelengths, side, side)`` into the site-major output vector
    produced by ``H = [I kron Phi_1 ... I kron Phi_S]``."""
    return np.moveaxis(np.asarray(y), -3, -1).reshape(*np.shape(y)[:-3], -1)


def output_matrix(n_sites: int, response: np.ndarray) -> np.ndarray:
    """Dense ``H`` (only sensible for small lattices)."""
    return np.hstack([np.kron(np.eye(n_sites), response[:, [s]]) for s in range(response.shape[1])])


@dataclass
class StateField:
    values: np.ndarray
    lattice: Lattice
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[1:] != self.lattice.shape:
            raise ValueError(f"state must be (n_species, {self.lattice.side}, {self.lattice.side}), "
                             f"got {self.values.shape}")

    @property
    def n_species(self) -> int:
        return self.values.shape[0]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


@dataclass
class ObservationField:
    values: np.ndarray
    time: float = 0.0

    def flat(self) -> np.ndarray:
        return observation_vector(self.values)


def homogeneous_state(lattice: Lattice, values) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return np.broadcast_to(v[:, None, None], (v.size, *lattice.shape)).copy()


def bump_state(lattice: Lattice, base, center, radius, amplitude, species=0) -> np.ndarray:
    """Homogeneous state plus a disc of raised concentration in one species."""
    x = homogeneous_state(lattice, base)
    i, j = np.indices(lattice.shape) + 1
    mask = (i - center[0]) ** 2 + (j - center[1]) ** 2 <= radius**2
    x[species][mask] += amplitude
    return x


def check_finite(x: np.ndarray, what="state") -> None:
    bad = ~np.isfinite(x)
    if bad.any():
        idx = np.unravel_index(np.flatnonzero(bad)[0], x.shape)
        *lead, s, i, j = idx
        where = f"species {s + 1}, site ({i + 1}, {j + 1})"
        if lead:
            where = f"particle {lead[-1]}, " + where
        raise NumericalInstabilityError(f"non-finite {what} at {where}")


def _rk4(fun, x, h, n):
    for _ in range(n):
        k1 = fun(x)
        k2 = fun(x + 0.5 * h * k1)
        k3 = fun(x + 0.5 * h * k2)
        k4 = fun(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


@dataclass
class ReactionDiffusionModel:
    """Oregonator on a square lattice with multiplicative driving noise.

    This is the object the filter works against: it exposes the deterministic
    flow ``flow(x)``, the per-component transition standard deviation
    ``transition_std(x)`` and the observation model.
    """

    lattice: Lattice
    params: OregonatorParams = field(default_factory=OregonatorParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    observation: ObservationModel = field(default_factory=default_observation)
    integrator: str = "euler"
    substeps: int = 1
    # compiled Euler flow; the numpy path is kept as the reference
    fast: bool = True

    def __post_init__(self):
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.observation.n_species != 2:
            raise ValueError("the Oregonator model needs a 2-species response")
        if int(self.substeps) < 1:
            raise ValueError("substeps must be >= 1")

    n_species = 2

    @property
    def dt(self) -> float:
        return self.noise.dt

    @property
    def floor(self):
        return self.noise.floor

    def drift(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lap = laplacian(self.lattice, x)
        f1, f2 = oregonator_drift(self.params, x[..., 0, :, :], x[..., 1, :, :],
                                  lap[..., 0, :, :], lap[..., 1, :, :])
        return np.stack([f1, f2], axis=-3)

    def flow(self, x: np.ndarray) -> np.ndarray:
        if self.integrator == "euler":
            if self.fast:
                x = np.asarray(x, dtype=float)
                p = self.params
                x4 = np.ascontiguousarray(x.reshape(-1, 2, *self.lattice.shape))
                out = _kernels.oregonator_euler(x4, self.dt, 1.0 / self.lattice.spacing**2,
                                                p.epsilon, p.sigma, p.q, p.d1, p.d2)
                return out.reshape(x.shape)
            return x + self.dt * self.drift(x)
        return _rk4(self.drift, x, self.dt / self.substeps, int(self.substeps))

    def transition_std(self, x: np.ndarray) -> np.ndarray:
        return self.noise.sigma_x * np.sqrt(self.dt) * np.abs(x)

    def steady_state(self) -> np.ndarray:
        return homogeneous_state(self.lattice, steady_state(self.params))


@dataclass
class LinearSiteModel:
    """Linear-Gaussian surrogate: ``X_k = a X_{k-1} + b + q_std * xi`` at every site.

    Components are independent, the noise is additive, and there is no
    positivity floor, so the exact evidence is available from a Kalman filter.
    """

    lattice: Lattice
    a: float = 0.9
    b: float = 0.0
    q_std: float = 0.1
    observation: ObservationModel = field(
        default_factory=lambda: ObservationModel([0.0], [[1.0]], 0.1))
    dt: float = 1.0
    floor = None

    @property
    def n_species(self) -> int:
        return self.observation.n_species

    def flow(self, x):
        return self.a * np.asarray(x, dtype=float) + self.b

    def transition_std(self, x):
        return np.full(np.shape(x), self.q_std)


def propagate(model, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``F(x) + std(x) * xi`` with the noise gain frozen at ``x``, then floored."""
    out = model.flow(x) + model.transition_std(x) * xi
    if model.floor is not None:
        np.maximum(out, model.floor, out=out)
    check_finite(out)
    return out


def drift(state: StateField, params: OregonatorParams) -> np.ndarray:
    model = ReactionDiffusionModel(state.lattice, params)
    return model.drift(state.values)


def step(state: StateField, noise: NoiseModel, params: OregonatorParams, seed: int, k: int,
         integrator="euler", substeps=1) -> StateField:
    """Advance one ``dt`` using the noise stream of step ``k``."""
    model = ReactionDiffusionModel(state.lattice, params, noise, integrator=integrator, substeps=substeps)
    xi = rngmod.normals(rngmod.stream_key(seed, "dynamics", k), (1, *state.values.shape))[0]
    return StateField(propagate(model, state.values, xi), state.lattice, state.time + noise.dt)


def observe(state: StateField, obs: ObservationModel, seed: int, k: int) -> ObservationField:
    mean = obs.mean(state.values)
    e = rngmod.normals(rngmod.stream_key(seed, "observe", k), (1, *mean.shape))[0]
    return ObservationField(mean + np.sqrt(obs.noise_var) * e, state.time)


def iter_simulate(model, x0: np.ndarray, n_steps: int, seed: int, stride: int = 1
                  ) -> Iterator[tuple[int, np.ndarray, np.ndarray | None]]:
    """Yield ``(k, X_k, Y_k or None)`` for ``k = 1..n_steps``.

    ``Y_k`` is produced when ``k % stride == 0``.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    x = np.asarray(x0, dtype=float)
    obs = model.observation
    for k in range(1, n_steps + 1):
        xi = rngmod.normals(rngmod.stream_key(seed, "dynamics", k), (1, *x.shape))[0]
        x = propagate(model, x, xi)
        y = None
        if k % stride == 0:
            mean = obs.mean(x)
            e = rngmod.normals(rngmod.stream_key(seed, "observe", k), (1, *mean.shape))[0]
            y = mean + np.sqrt(obs.noise_var) * e
        yield k, x, y


@dataclass
class Trajectory:
    steps: np.ndarray          # step index of every stored state
    states: np.ndarray         # (n_steps, n_species, side, side)
    obs_steps: np.ndarray
    observations: np.ndarray   # (n_obs, n_wavelengths, side, side)
    dt: float

    @property
    def times(self):
        return self.steps * self.dt

    @property
    def obs_times(self):
        return self.obs_steps * self.dt


def simulate(model, x0: np.ndarray, n_steps: int, seed: int, stride: int = 1) -> Trajectory:
    """In-memory ground truth and observations; use :func:`iter_simulate` for large runs."""
    steps, states, osteps, obs = [], [], [], []
    for k, x, y in iter_simulate(model, x0, n_steps, seed, stride):
        steps.append(k)
        states.append(x)
        if y is not None:
            osteps.append(k)
            obs.append(y)
    return Trajectory(np.array(steps), np.array(states), np.array(osteps, dtype=int),
                      np.array(obs), model.dt)
