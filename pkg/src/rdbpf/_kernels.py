"""Fused numba loops for the two hot spots of a filter step.

Both mirror numpy code elsewhere in the package (``ReactionDiffusionModel.drift``
and ``filter.optimal_moments``); the tests hold them to that reference.
"""

import math

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True)
def oregonator_euler(x, dt, inv_du2, eps, sigma, q, d1, d2):
    """One explicit Euler step of the scaled Oregonator for ``x`` of shape (N, 2, V, V)."""
    n_p, _, V, _ = x.shape
    out = np.empty_like(x)
    for n in range(n_p):
        for i in range(V):
            for j in range(V):
                z1 = x[n, 0, i, j]
                z2 = x[n, 1, i, j]
                l1 = 0.0
                l2 = 0.0
                if i > 0:
                    l1 += x[n, 0, i - 1, j] - z1
                    l2 += x[n, 1, i - 1, j] - z2
                if i < V - 1:
                    l1 += x[n, 0, i + 1, j] - z1
                    l2 += x[n, 1, i + 1, j] - z2
                if j > 0:
                    l1 += x[n, 0, i, j - 1] - z1
                    l2 += x[n, 1, i, j - 1] - z2
                if j < V - 1:
                    l1 += x[n, 0, i, j + 1] - z1
                    l2 += x[n, 1, i, j + 1] - z2
                f1 = (z1 * (1.0 - z1) - sigma * z2 * (z1 - q) / (z1 + q)) / eps + d1 * (l1 * inv_du2)
                f2 = (z1 - z2) + d2 * (l2 * inv_du2)
                out[n, 0, i, j] = z1 + dt * f1
                out[n, 1, i, j] = z2 + dt * f2
    return out


@nb.njit(cache=True, nogil=True)
def optimal_draw_2(fx, var, beta, perp, G, s2, n_l, xi, floor, use_floor):
    """Conditioned Gaussian draw and predictive log-density, two species per site.

    ``beta`` and ``perp`` are the per-site least-squares fit of ``y`` and its
    orthogonal residual. Same algebra as ``filter.optimal_moments``.
    """
    n_p, _, V, _ = fx.shape
    g00 = G[0, 0]
    g01 = G[0, 1]
    g11 = G[1, 1]
    const = n_l * (math.log(2.0 * math.pi) + math.log(s2))
    out = np.empty_like(fx)
    ll = np.empty((n_p, V, V))
    for i in range(V):
        for j in range(V):
            b0 = beta[0, i, j]
            b1 = beta[1, i, j]
            pp = perp[i, j]
            for n in range(n_p):
                F0 = fx[n, 0, i, j]
                F1 = fx[n, 1, i, j]
                d0 = var[n, 0, i, j]
                d1 = var[n, 1, i, j]
                m00 = 1.0 + d0 * g00 / s2
                m01 = d0 * g01 / s2
                m10 = d1 * g01 / s2
                m11 = 1.0 + d1 * g11 / s2
                det = m00 * m11 - m01 * m10
                i00 = m11 / det
                i01 = -m01 / det
                i10 = -m10 / det
                i11 = m00 / det
                s00 = i00 * d0
                s11 = i11 * d1
                s01 = 0.5 * (i01 * d1 + i10 * d0)
                e0 = b0 - F0
                e1 = b1 - F1
                c0 = g00 * e0 + g01 * e1
                c1 = g01 * e0 + g11 * e1
                mu0 = F0 + (s00 * c0 + s01 * c1) / s2
                mu1 = F1 + (s01 * c0 + s11 * c1) / s2
                # e^T G M^{-1} e
                h00 = g00 * i00 + g01 * i10
                h01 = g00 * i01 + g01 * i11
                h10 = g01 * i00 + g11 * i10
                h11 = g01 * i01 + g11 * i11
                quad = (pp + e0 * (h00 * e0 + h01 * e1) + e1 * (h10 * e0 + h11 * e1)) / s2
                ll[n, i, j] = -0.5 * (const + math.log(det) + quad)
                a = math.sqrt(max(s00, 0.0))
                b = s01 / a if a > 0.0 else 0.0
                c = math.sqrt(max(s11 - b * b, 0.0))
                v0 = mu0 + a * xi[n, 0, i, j]
                v1 = mu1 + b * xi[n, 0, i, j] + c * xi[n, 1, i, j]
                if use_floor:
                    v0 = max(v0, floor)
                    v1 = max(v1, floor)
                out[n, 0, i, j] = v0
                out[n, 1, i, j] = v1
    return out, ll
