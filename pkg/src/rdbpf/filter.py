"""Block particle filter with bootstrap or locally optimal Gaussian proposals.

One filter step follows the loop body of the block particle filter:

1. resample ancestors independently in every block (uniform weights after),
2. move every particle with the proposal kernel,
3. weight particles block by block with the product of per-site likelihoods,
4. record the block-wise weighted mean and the block evidence increment.

All weight arithmetic is done in log space. Ensembles are arrays of shape
``(n_particles, n_species, side, side)``; block weights ``(n_blocks, n_particles)``.

The model argument is any object with ``lattice``, ``n_species``, ``dt``,
``floor``, ``observation`` (an :class:`~rdbpf.dynamics.ObservationModel`),
``flow(x)`` and ``transition_std(x)``, e.g.
:class:`~rdbpf.dynamics.ReactionDiffusionModel`.
"""

from __future__ import annotations

import enum
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from . import rng as rngmod
from .dynamics import NumericalInstabilityError, check_finite, propagate
from .lattice import BlockPartition, make_partition

log = logging.getLogger(__name__)

THREADS_ENV = "RDBPF_THREADS"
LOG_2PI = np.log(2.0 * np.pi)


class ProposalKind(str, enum.Enum):
    BOOTSTRAP = "bootstrap"
    OPTIMAL = "optimal"

    @classmethod
    def parse(cls, value) -> "ProposalKind":
        if isinstance(value, cls):
            return value
        aliases = {"standard": "bootstrap"}
        return cls(aliases.get(str(value).lower(), str(value).lower()))


class Resampling(str, enum.Enum):
    MULTINOMIAL = "multinomial"
    SYSTEMATIC = "systematic"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass
class FilterConfig:
    n_particles: int = 128
    block_side: int = 5
    proposal: ProposalKind = ProposalKind.OPTIMAL
    resampling: Resampling = Resampling.MULTINOMIAL
    seed: int = 0
    threads: int = field(default_factory=default_threads)

    def __post_init__(self):
        self.proposal = ProposalKind.parse(self.proposal)
        self.resampling = Resampling(self.resampling)
        if int(self.n_particles) < 1:
            raise ValueError("n_particles must be >= 1")


@dataclass
class ParticleEnsemble:
    particles: np.ndarray
    weights: np.ndarray
    partition: BlockPartition

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    def estimate(self) -> np.ndarray:
        """Block-wise weighted mean, i.e. sum_n w[block(v), n] x_n[v] at every site."""
        w_site = self.weights.T[:, self.partition.block_of_site]     # (N, side, side)
        return np.sum(w_site[:, None] * self.particles, axis=0)


def init_ensemble(n_particles: int, initial, partition: BlockPartition, seed: int = 0) -> ParticleEnsemble:
    """``initial`` is either one state (Dirac start) or ``callable(key, n) -> (n, ...)``."""
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    if callable(initial):
        particles = np.asarray(initial(rngmod.stream_key(seed, "init", 0), n_particles), dtype=float)
    else:
        x0 = np.asarray(initial, dtype=float)
        particles = np.broadcast_to(x0, (n_particles, *x0.shape)).copy()
    weights = np.full((partition.n_blocks, n_particles), 1.0 / n_particles)
    return ParticleEnsemble(particles, weights, partition)


def _chunks(n, threads):
    threads = max(1, min(int(threads), n))
    edges = np.linspace(0, n, threads + 1).astype(int)
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _map_particles(fn, n, threads):
    """Run ``fn(lo, hi)`` over particle ranges and concatenate along axis 0."""
    chunks = _chunks(n, threads)
    if len(chunks) == 1:
        return fn(0, n)
    with ThreadPoolExecutor(len(chunks)) as ex:
        parts = list(ex.map(lambda c: fn(*c), chunks))
    if isinstance(parts[0], tuple):
        return tuple(np.concatenate(p, axis=0) for p in zip(*parts))
    return np.concatenate(parts, axis=0)


def _proposal_normals(particles, seed, k, lo, hi):
    key = rngmod.stream_key(seed, "propose", k)
    return rngmod.normals(key, (hi - lo, *particles.shape[1:]), first_row=lo)


def propose_bootstrap(particles: np.ndarray, model, seed: int, k: int, threads: int = 1) -> np.ndarray:
    """Move every particle through the transition kernel of step ``k``."""
    def run(lo, hi):
        xi = _proposal_normals(particles, seed, k, lo, hi)
        return propagate(model, particles[lo:hi], xi)
    return _map_particles(run, particles.shape[0], threads)


def _site_projection(y, phi):
    """Least-squares coefficients ``beta = pinv(Phi) y`` and the orthogonal
    residual ``|y - Phi beta|^2`` at every site."""
    beta = np.tensordot(np.linalg.pinv(phi), y, axes=1)
    perp = y - np.tensordot(phi, beta, axes=1)
    return beta, np.sum(perp * perp, axis=0)


def _residual_sq(x, y, obs, proj=None):
    """sum_l (y_l - (Phi x)_l)^2 at every site.

    Split as ``|y - Phi beta|^2 + |Phi (beta - x)|^2`` with ``beta`` the
    per-site least-squares fit, so the L wavelengths are touched once per
    step rather than once per particle, and no large terms cancel.
    """
    phi = obs.response
    G = phi.T @ phi
    S = phi.shape[1]
    beta, perp = _site_projection(y, phi) if proj is None else proj
    dl = [beta[a] - x[..., a, :, :] for a in range(S)]
    out = perp
    for a in range(S):
        out = out + dl[a] * sum(G[a, b] * dl[b] for b in range(S))
    return out


def gaussian_site_loglik(x: np.ndarray, y: np.ndarray, obs) -> np.ndarray:
    """log N(y_v; Phi x_v, s2 I) at every site -> ``(..., side, side)``."""
    rr = _residual_sq(x, np.asarray(y, dtype=float), obs)
    n_l = obs.n_wavelengths
    return -0.5 * (n_l * (LOG_2PI + np.log(obs.noise_var)) + rr / obs.noise_var)


def _inv_det(m):
    """Inverse and determinant of a small matrix given as nested lists of arrays."""
    n = len(m)
    if n == 1:
        return [[1.0 / m[0][0]]], m[0][0]
    if n == 2:
        (a, b), (c, d) = m
        det = a * d - b * c
        return [[d / det, -b / det], [-c / det, a / det]], det
    arr = np.stack([np.stack(row, axis=-1) for row in m], axis=-2)
    inv = np.linalg.inv(arr)
    return [[inv[..., i, j] for j in range(n)] for i in range(n)], np.linalg.det(arr)


def _chol(c):
    """Lower Cholesky factor of a PSD small matrix (nested lists of arrays)."""
    n = len(c)
    if n == 1:
        return [[np.sqrt(np.maximum(c[0][0], 0.0))]]
    if n == 2:
        l11 = np.sqrt(np.maximum(c[0][0], 0.0))
        l21 = np.divide(c[1][0], l11, out=np.zeros_like(l11), where=l11 > 0)
        l22 = np.sqrt(np.maximum(c[1][1] - l21 * l21, 0.0))
        return [[l11, np.zeros_like(l11)], [l21, l22]]
    arr = np.stack([np.stack(row, axis=-1) for row in c], axis=-2)
    low = np.linalg.cholesky(arr)
    return [[low[..., i, j] for j in range(n)] for i in range(n)]


def optimal_moments(fx: np.ndarray, var: np.ndarray, y: np.ndarray, obs):
    """Per-site moments of ``X_k | Y_k, X_{k-1}`` and the predictive log-density.

    ``fx`` is the deterministic flow ``F(x_{k-1})`` and ``var`` the diagonal of
    the transition covariance, both ``(..., S, side, side)``; ``y`` is
    ``(L, side, side)``. With ``D = diag(var)``, ``G = Phi^T Phi`` and
    ``M = I + D G / s2``:

        cov  = M^{-1} D = (D^{-1} + G / s2)^{-1}
        mean = M^{-1} (F + D Phi^T y / s2) = F + cov Phi^T (y - Phi F) / s2
        log p(y | x_{k-1}) = log N(y; Phi F, Phi D Phi^T + s2 I)

    using ``det(Phi D Phi^T + s2 I) = s2^L det M`` and the Woodbury identity,
    so ``D`` is never inverted and only S x S systems are solved.

    Returns ``mean (..., S, side, side)``, ``cov (..., S, S, side, side)`` and
    ``loglik (..., side, side)``.
    """
    phi = obs.response
    s2 = obs.noise_var
    n_l, S = phi.shape
    G = phi.T @ phi
    y = np.asarray(y, dtype=float)
    F = [fx[..., a, :, :] for a in range(S)]
    d = [var[..., a, :, :] for a in range(S)]
    M = [[float(a == b) + d[a] * (G[a, b] / s2) for b in range(S)] for a in range(S)]
    Minv, detM = _inv_det(M)
    cov = [[Minv[a][b] * d[b] for b in range(S)] for a in range(S)]
    for a in range(S):
        for b in range(a):
            cov[a][b] = cov[b][a] = 0.5 * (cov[a][b] + cov[b][a])

    beta, perp = _site_projection(y, phi)
    dl = [beta[b] - F[b] for b in range(S)]
    cr = [sum(G[a, b] * dl[b] for b in range(S)) for a in range(S)]          # Phi^T (y - Phi F)
    mean = [F[a] + sum(cov[a][b] * cr[b] for b in range(S)) / s2 for a in range(S)]
    # r^T (Phi D Phi^T + s2 I)^{-1} r = (|y_perp|^2 + dl^T G M^{-1} dl) / s2, no cancellation
    gm = [[sum(G[a, c] * Minv[c][b] for c in range(S)) for b in range(S)] for a in range(S)]
    quad = (perp + sum(dl[a] * gm[a][b] * dl[b] for a in range(S) for b in range(S))) / s2
    loglik = -0.5 * (n_l * (LOG_2PI + np.log(s2)) + np.log(detM) + quad)
    return (np.stack(mean, axis=-3),
            np.stack([np.stack(row, axis=-3) for row in cov], axis=-4),
            loglik)


def propose_optimal(particles: np.ndarray, y: np.ndarray, model, seed: int, k: int, threads: int = 1):
    """Draw from the conditioned Gaussian at every site.

    Returns ``(proposed, site_loglik)`` where ``site_loglik`` holds the
    per-site predictive log-densities ``log p(y_v | x_{k-1})`` that serve as
    incremental log-weights.
    """
    y = np.asarray(y, dtype=float)
    obs = model.observation
    fast = getattr(model, "fast", False) and obs.n_species == 2
    if fast:
        beta, perp = _site_projection(y, obs.response)
        gram = obs.response.T @ obs.response

    def run(lo, hi):
        x = particles[lo:hi]
        fx = model.flow(x)
        var = model.transition_std(x) ** 2
        if fast:
            xi = _proposal_normals(particles, seed, k, lo, hi)
            floor = model.floor
            out, ll = _kernels.optimal_draw_2(np.ascontiguousarray(fx), np.ascontiguousarray(var), beta, perp,
                                              gram, obs.noise_var, obs.n_wavelengths, xi,
                                              0.0 if floor is None else floor, floor is not None)
            _check_proposal(out, ll, lo)
            return out, ll
        mean, cov, ll = optimal_moments(fx, var, y, model.observation)
        S = mean.shape[-3]
        low = _chol([[cov[..., a, b, :, :] for b in range(S)] for a in range(S)])
        xi = _proposal_normals(particles, seed, k, lo, hi)
        out = mean.copy()
        for a in range(S):
            for b in range(a + 1):
                out[..., a, :, :] += low[a][b] * xi[..., b, :, :]
        if model.floor is not None:
            np.maximum(out, model.floor, out=out)
        _check_proposal(out, ll, lo)
        return out, ll

    return _map_particles(run, particles.shape[0], threads)


def _check_proposal(out, ll, lo):
    check_finite(out)
    if not np.all(np.isfinite(ll)):
        bad = np.argwhere(~np.isfinite(ll))[0]
        raise NumericalInstabilityError(
            f"non-finite proposal weight at particle {lo + bad[0]}, site ({bad[1] + 1}, {bad[2] + 1})")


def block_weights(partition: BlockPartition, site_loglik: np.ndarray):
    """Normalise per-block products of local likelihoods.

    ``site_loglik`` is ``(n_particles, side, side)``. Returns
    ``(weights, log_increment, log_weights)``: normalised weights
    ``(n_blocks, n_particles)``, the block evidence increments
    ``log(mean_n exp(logw))`` and the unnormalised block log-weights.
    """
    logw = partition.block_sum(site_loglik).T                 # (n_blocks, N)
    lse = logsumexp(logw, axis=1)
    if not np.all(np.isfinite(lse)):
        b = int(np.flatnonzero(~np.isfinite(lse))[0])
        raise NumericalInstabilityError(f"degenerate block {b}: no particle has positive weight")
    weights = np.exp(logw - lse[:, None])
    weights /= weights.sum(axis=1, keepdims=True)
    return weights, lse - np.log(logw.shape[1]), logw


def _multinomial_ancestors(weights, u):
    n = weights.shape[1]
    cw = np.cumsum(weights, axis=1)
    cw[:, -1] = 1.0
    # per-block inverse CDF: ancestor = #{i : cw[i] <= u}
    idx = np.count_nonzero(cw[:, None, :] <= u[:, :, None], axis=-1)
    return np.minimum(idx, n - 1)


def _systematic_ancestors(weights, u0):
    n = weights.shape[1]
    u = (u0[:, None] + np.arange(n)) / n
    return _multinomial_ancestors(weights, u)


def resample_ancestors(weights: np.ndarray, seed: int, k: int, scheme=Resampling.MULTINOMIAL) -> np.ndarray:
    """Ancestor indices ``(n_blocks, n_particles)``; block ``b`` uses row ``b`` of the step-``k`` stream."""
    n_blocks, n = weights.shape
    key = rngmod.stream_key(seed, "resample", k)
    if Resampling(scheme) is Resampling.SYSTEMATIC:
        u0 = rngmod.uniforms(key, (n_blocks, 1))[:, 0]
        return _systematic_ancestors(weights, u0)
    return _multinomial_ancestors(weights, rngmod.uniforms(key, (n_blocks, n)))


def gather_blocks(particles: np.ndarray, ancestors: np.ndarray, partition: BlockPartition) -> np.ndarray:
    """Assemble new particles: in block ``b``, particle ``n`` copies ``ancestors[b, n]``."""
    site_anc = np.moveaxis(ancestors[partition.block_of_site], -1, 0)   # (N, side, side)
    idx = np.broadcast_to(site_anc[:, None], particles.shape)
    return np.take_along_axis(particles, idx, axis=0)


def resample(ensemble: ParticleEnsemble, seed: int, k: int, scheme=Resampling.MULTINOMIAL):
    anc = resample_ancestors(ensemble.weights, seed, k, scheme)
    n = ensemble.n_particles
    particles = gather_blocks(ensemble.particles, anc, ensemble.partition)
    weights = np.full_like(ensemble.weights, 1.0 / n)
    return ParticleEnsemble(particles, weights, ensemble.partition), anc


def effective_sample_size_rows(weights: np.ndarray) -> np.ndarray:
    return 1.0 / np.sum(weights * weights, axis=-1)


@dataclass
class StepRecord:
    k: int
    log_increment: np.ndarray       # (n_blocks,)
    ess: np.ndarray                 # (n_blocks,)
    rmse: np.ndarray                # (n_blocks,)
    estimate: np.ndarray            # (S, side, side)
    ancestors: np.ndarray
    site_loglik: np.ndarray         # (N, side, side)
    degenerate_blocks: list


def block_rmse(estimate: np.ndarray, y: np.ndarray, obs, partition: BlockPartition) -> np.ndarray:
    """||H x_hat - y||_2 per block (linearity of H lets the weighted mean go first)."""
    r = obs.mean(estimate) - y
    return np.sqrt(partition.block_sum(np.sum(r * r, axis=-3)))


def filter_step(ensemble: ParticleEnsemble, y: np.ndarray, k: int, model, config: FilterConfig,
                n_moves: int = 1):
    """One observation update at step ``k``.

    ``n_moves > 1`` handles observation strides: the first ``n_moves - 1``
    transitions are blind moves through the dynamics, the last one uses the
    configured proposal.
    """
    ens, anc = resample(ensemble, config.seed, k, config.resampling)
    x = ens.particles
    for j in range(n_moves - 1, 0, -1):
        x = propose_bootstrap(x, model, config.seed, k - j, config.threads)
    if config.proposal is ProposalKind.OPTIMAL:
        x, site_ll = propose_optimal(x, y, model, config.seed, k, config.threads)
    else:
        x = propose_bootstrap(x, model, config.seed, k, config.threads)
        site_ll = gaussian_site_loglik(x, y, model.observation)
    weights, inc, _ = block_weights(ens.partition, site_ll)
    new = ParticleEnsemble(x, weights, ens.partition)
    ess = effective_sample_size_rows(weights)
    degenerate = []
    if new.n_particles > 1:
        degenerate = [int(b) for b in np.flatnonzero(ess < 1.0 + 1e-9)]
        for b in degenerate:
            log.debug("step %d: block %d collapsed onto a single particle", k, b)
    est = new.estimate()
    rec = StepRecord(k, inc, ess, block_rmse(est, y, model.observation, ens.partition), est, anc,
                     site_ll, degenerate)
    return new, rec


@dataclass
class FilterOutput:
    steps: np.ndarray
    dt: float
    log_increment: np.ndarray       # (K, n_blocks)
    ess: np.ndarray                 # (K, n_blocks)
    rmse: np.ndarray                # (K, n_blocks)
    estimates: np.ndarray | None    # (K, S, side, side)
    weights: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    @property
    def times(self):
        return self.steps * self.dt

    @property
    def rmse_total(self):
        return self.rmse.sum(axis=1)

    @property
    def log_evidence(self):
        return np.cumsum(self.log_increment.sum(axis=1))


def run_filter(observations, model, config: FilterConfig, initial=None, obs_steps=None,
               keep_estimates=True, keep_weights=False, callback=None, checkpoint=None) -> FilterOutput:
    """Filter a sequence of observation fields ``(K, L, side, side)``.

    ``obs_steps`` gives the simulation step of each observation (default
    ``1..K``). ``callback(record, ensemble)`` is invoked after every step.
    On a numerical failure the current ensemble is written to ``checkpoint``
    (an ``.npz`` path) before the error propagates.
    """
    K = len(observations)
    steps = np.arange(1, K + 1) if obs_steps is None else np.asarray(obs_steps, dtype=int)
    partition = make_partition(model.lattice, config.block_side)
    nb = partition.n_blocks
    if initial is None:
        initial = model.steady_state()
    ens = init_ensemble(config.n_particles, initial, partition, config.seed)
    inc = np.zeros((K, nb))
    ess = np.zeros((K, nb))
    rmse = np.zeros((K, nb))
    ests = np.zeros((K, model.n_species, *model.lattice.shape)) if keep_estimates else None
    wts = np.zeros((K, nb, config.n_particles)) if keep_weights else None
    warnings = []
    prev = 0
    for i in range(K):
        k = int(steps[i])
        if k <= prev:
            raise ValueError("observation steps must be strictly increasing")
        try:
            y = np.asarray(observations[i], dtype=float)
            ens, rec = filter_step(ens, y, k, model, config, n_moves=k - prev)
        except NumericalInstabilityError:
            if checkpoint is not None:
                np.savez(checkpoint, step=prev, particles=ens.particles, weights=ens.weights)
            raise
        prev = k
        inc[i], ess[i], rmse[i] = rec.log_increment, rec.ess, rec.rmse
        if ests is not None:
            ests[i] = rec.estimate
        if wts is not None:
            wts[i] = ens.weights
        warnings.extend((k, b) for b in rec.degenerate_blocks)
        if callback is not None:
            callback(rec, ens)
    if warnings:
        log.warning("%d block updates collapsed onto a single particle (first at step %d, block %d)",
                    len(warnings), *warnings[0])
    return FilterOutput(steps, model.dt, inc, ess, rmse, ests, wts, warnings)
