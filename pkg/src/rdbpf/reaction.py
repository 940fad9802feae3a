"""Chemical reaction networks under mass-action kinetics and the scaled Oregonator."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class ReactionNetwork:
    """Reactions ``sum_s R[r, s] S_s -> sum_s P[r, s] S_s`` with rate constants ``rates[r]``.

    Reactant coefficients are nonnegative integers (they are mass-action
    exponents). Product coefficients may be fractional, as in the
    ``0.5 sigma S3`` product of the full Oregonator scheme.
    """

    species: list
    reactant_stoich: np.ndarray
    product_stoich: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        self.species = [str(s) for s in self.species]
        self.reactant_stoich = np.atleast_2d(np.asarray(self.reactant_stoich, dtype=float))
        self.product_stoich = np.atleast_2d(np.asarray(self.product_stoich, dtype=float))
        self.rates = np.atleast_1d(np.asarray(self.rates, dtype=float))
        shape = (self.n_reactions, self.n_species)
        if self.reactant_stoich.shape != shape or self.product_stoich.shape != shape:
            raise ValueError(
                f"stoichiometry matrices must be {shape}, got "
                f"{self.reactant_stoich.shape} and {self.product_stoich.shape}"
            )
        if len(set(self.species)) != len(self.species):
            raise ValueError("species names must be unique")
        if np.any(self.rates < 0) or not np.all(np.isfinite(self.rates)):
            raise ValueError("rate constants must be finite and nonnegative")
        if np.any(self.reactant_stoich < 0) or np.any(self.product_stoich < 0):
            raise ValueError("stoichiometric coefficients must be nonnegative")
        if np.any(self.reactant_stoich != np.round(self.reactant_stoich)):
            raise ValueError("reactant coefficients must be integers")

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def n_reactions(self) -> int:
        return len(self.rates)

    @property
    def net_stoich(self) -> np.ndarray:
        return self.product_stoich - self.reactant_stoich

    def to_dict(self) -> dict:
        reactions = []
        for r in range(self.n_reactions):
            reactions.append({
                "reactants": _side_to_dict(self.species, self.reactant_stoich[r]),
                "products": _side_to_dict(self.species, self.product_stoich[r]),
                "rate": float(self.rates[r]),
            })
        return {"species": list(self.species), "reactions": reactions}

    @classmethod
    def from_dict(cls, data: dict) -> "ReactionNetwork":
        species = list(data["species"])
        index = {s: i for i, s in enumerate(species)}
        reactions = data["reactions"]
        R = np.zeros((len(reactions), len(species)))
        P = np.zeros((len(reactions), len(species)))
        rates = np.zeros(len(reactions))
        for r, rx in enumerate(reactions):
            for mat, key in ((R, "reactants"), (P, "products")):
                for name, coeff in rx.get(key, {}).items():
                    if name not in index:
                        raise ValueError(f"reaction {r}: unknown species {name!r}")
                    mat[r, index[name]] = coeff
            rates[r] = rx["rate"]
        return cls(species, R, P, rates)


def _side_to_dict(species, row):
    out = {}
    for name, c in zip(species, row):
        if c:
            out[name] = int(c) if float(c).is_integer() else float(c)
    return out


def save_network(net: ReactionNetwork, path) -> None:
    Path(path).write_text(json.dumps(net.to_dict(), indent=2) + "\n")


def load_network(path) -> ReactionNetwork:
    return ReactionNetwork.from_dict(json.loads(Path(path).read_text()))


def mass_action_rates(net: ReactionNetwork, z) -> np.ndarray:
    """Reaction rates ``kappa_r * prod_s z_s ** R[r, s]`` (with ``0**0 == 1``)."""
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != net.n_species:
        raise ValueError(f"expected {net.n_species} concentrations, got {z.shape[-1]}")
    if np.any(z < 0):
        raise ValueError("concentrations must be nonnegative")
    # numpy already gives 0.0 ** 0 == 1.0
    powers = z[..., None, :] ** net.reactant_stoich
    return net.rates * np.prod(powers, axis=-1)


def stoichiometric_drift(net: ReactionNetwork, z) -> np.ndarray:
    """Reaction contribution ``(P - R)^T nu(z)`` to dz/dt."""
    return mass_action_rates(net, z) @ net.net_stoich


def oregonator_network(kappa=(1.0, 1.0, 1.0, 1.0, 1.0), sigma: float = 0.95) -> ReactionNetwork:
    """Six-species Oregonator scheme (S1..S6); only used for kinetics tests.

    No rate constants are known for this scheme, so ``kappa`` is synthetic.
    """
    species = [f"S{i}" for i in range(1, 7)]
    k1, k2, k3, k4, k5 = kappa
    reactions = [
        ({"S1": 2}, {"S4": 1, "S5": 1}, k1),
        ({"S1": 1, "S3": 1}, {"S5": 2}, k2),
        ({"S1": 1, "S4": 1}, {"S1": 2, "S2": 2}, k3),
        ({"S3": 1, "S4": 1}, {"S1": 1, "S5": 1}, k4),
        ({"S2": 1, "S6": 1}, {"S3": 0.5 * sigma}, k5),
    ]
    return ReactionNetwork.from_dict({
        "species": species,
        "reactions": [{"reactants": a, "products": b, "rate": k} for a, b, k in reactions],
    })


@dataclass(frozen=True)
class OregonatorParams:
    """Scaled two-species Oregonator: activator ``z1``, inhibitor ``z2``."""

    epsilon: float = 0.08
    sigma: float = 0.95
    q: float = 0.0075
    d1: float = 5e-4
    d2: float = 5e-6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.q > 0:
            raise ValueError("q must be positive")
        if self.d1 < 0 or self.d2 < 0:
            raise ValueError("diffusion coefficients must be nonnegative")


class SingularityError(ArithmeticError):
    pass


def oregonator_drift(params: OregonatorParams, z1, z2, lap1=0.0, lap2=0.0):
    """Pointwise scaled Oregonator rates ``(dz1/dt, dz2/dt)``."""
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    denom = z1 + params.q
    if np.any(denom == 0):
        raise SingularityError("z1 + q vanishes at some site")
    f1 = (z1 * (1.0 - z1) - params.sigma * z2 * (z1 - params.q) / denom) / params.epsilon
    f2 = z1 - z2
    return f1 + params.d1 * lap1, f2 + params.d2 * lap2


def steady_state(params: OregonatorParams) -> tuple[float, float]:
    """Positive homogeneous fixed point ``z1 = z2 = z*``.

    With ``z2 = z1`` the activator equation reduces to
    ``z**2 - (1 - sigma - q) z - q (1 + sigma) = 0``.
    """
    b = 1.0 - params.sigma - params.q
    c = -params.q * (1.0 + params.sigma)
    disc = b * b - 4.0 * c
    if disc < 0:
        raise ValueError("no real steady state for these parameters")
    root = math.sqrt(disc)
    # cancellation-free form of the larger root
    z = (b + root) / 2.0 if b >= 0 else (-2.0 * c) / (root - b)
    if not z > 0:
        raise ValueError("no positive steady state for these parameters")
    return z, z
