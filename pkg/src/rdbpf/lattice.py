"""Square-lattice geometry, the 5-point Laplacian and disjoint block partitions.

Sites are addressed by 1-based pairs ``(v1, v2)`` with ``1 <= vi <= side``.
Fields are stored as arrays whose trailing two axes are ``(side, side)`` and
indexed ``field[..., v1 - 1, v2 - 1]`` (row-major). A multi-species state is
flattened species-major, so ``x.reshape(-1)`` on an ``(n_species, side, side)``
array already has the layout used by the Kronecker-structured output matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Lattice:
    """Evenly spaced ``side x side`` grid with spacing ``spacing``."""

    side: int
    spacing: float = 1.0

    def __post_init__(self):
        if int(self.side) != self.side or self.side < 2:
            raise ValueError(f"lattice side must be an integer >= 2, got {self.side!r}")
        if not self.spacing > 0:
            raise ValueError(f"lattice spacing must be positive, got {self.spacing!r}")

    @property
    def n_sites(self) -> int:
        return self.side * self.side

    @property
    def shape(self) -> tuple[int, int]:
        return (self.side, self.side)

    def check_site(self, site) -> tuple[int, int]:
        try:
            v1, v2 = (int(v) for v in site)
        except (TypeError, ValueError):
            raise ValueError(f"site must be a pair of integers, got {site!r}") from None
        if not (1 <= v1 <= self.side and 1 <= v2 <= self.side):
            raise ValueError(f"site {site!r} outside lattice of side {self.side}")
        return v1, v2

    def sites(self):
        """All sites in row-major order."""
        return [(i, j) for i in range(1, self.side + 1) for j in range(1, self.side + 1)]


def neighbors(lattice: Lattice, site) -> list[tuple[int, int]]:
    """Manhattan 1-step neighbours of ``site`` that lie inside the lattice."""
    v1, v2 = lattice.check_site(site)
    out = []
    for d1, d2 in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        w1, w2 = v1 + d1, v2 + d2
        if 1 <= w1 <= lattice.side and 1 <= w2 <= lattice.side:
            out.append((w1, w2))
    return out


def laplacian(lattice: Lattice, field: np.ndarray) -> np.ndarray:
    """Five-point Laplacian with zero-flux boundaries.

    Missing neighbours contribute nothing to the sum, which is the same as a
    mirrored ghost node. Works on any array whose last two axes are the grid.
    """
    f = np.asarray(field, dtype=float)
    if f.shape[-2:] != lattice.shape:
        raise ValueError(f"field grid shape {f.shape[-2:]} does not match lattice {lattice.shape}")
    out = np.zeros_like(f)
    d = f[..., 1:, :] - f[..., :-1, :]
    out[..., :-1, :] += d
    out[..., 1:, :] -= d
    d = f[..., :, 1:] - f[..., :, :-1]
    out[..., :, :-1] += d
    out[..., :, 1:] -= d
    out /= lattice.spacing**2
    return out


def site_to_flat(lattice: Lattice, site, species: int = 1, n_species: int = 1) -> int:
    """0-based position of ``(site, species)`` in the species-major state vector."""
    v1, v2 = lattice.check_site(site)
    if not (1 <= species <= n_species):
        raise ValueError(f"species {species} outside 1..{n_species}")
    return (species - 1) * lattice.n_sites + (v1 - 1) * lattice.side + (v2 - 1)


def flat_to_site(lattice: Lattice, index: int, n_species: int = 1) -> tuple[tuple[int, int], int]:
    """Inverse of :func:`site_to_flat`; returns ``(site, species)``."""
    if not (0 <= index < n_species * lattice.n_sites):
        raise ValueError(f"flat index {index} outside 0..{n_species * lattice.n_sites - 1}")
    species, rem = divmod(int(index), lattice.n_sites)
    v1, v2 = divmod(rem, lattice.side)
    return (v1 + 1, v2 + 1), species + 1


@dataclass(frozen=True)
class BlockPartition:
    """Axis-aligned tiling of a lattice into ``block_side`` squares.

    ``blocks[b]`` holds the 0-based row-major flat indices of the sites in
    block ``b``; blocks are numbered row-major over the block grid.
    ``block_of_site`` maps every grid point to its block id.
    """

    lattice: Lattice
    block_side: int
    blocks: tuple = field(repr=False)
    block_of_site: np.ndarray = field(repr=False)
    # sites regrouped block by block, with reduceat offsets into that order
    order: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(np.append(self.offsets, self.lattice.n_sites))

    def block_sites(self, b: int) -> list[tuple[int, int]]:
        return [(int(i) // self.lattice.side + 1, int(i) % self.lattice.side + 1) for i in self.blocks[b]]

    def block_sum(self, per_site: np.ndarray) -> np.ndarray:
        """Sum a ``(..., side, side)`` array over each block -> ``(..., n_blocks)``."""
        flat = np.asarray(per_site).reshape(*np.shape(per_site)[:-2], -1)
        return np.add.reduceat(flat[..., self.order], self.offsets, axis=-1)


def make_partition(lattice: Lattice, block_side: int) -> BlockPartition:
    if int(block_side) != block_side or not (1 <= block_side <= lattice.side):
        raise ValueError(f"block_side must be an integer in 1..{lattice.side}, got {block_side!r}")
    block_side = int(block_side)
    side = lattice.side
    nb = math.ceil(side / block_side)
    rows = np.arange(side) // block_side
    block_of_site = rows[:, None] * nb + rows[None, :]
    flat_ids = block_of_site.reshape(-1)
    order = np.argsort(flat_ids, kind="stable")
    counts = np.bincount(flat_ids, minlength=nb * nb)
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    blocks = tuple(order[o:o + c] for o, c in zip(offsets, counts))
    block_of_site.setflags(write=False)
    return BlockPartition(lattice, block_side, blocks, block_of_site, order, offsets)
