"""Zonotope fitting from point clouds and certificate-driven contraction.

``pca_fit`` wraps a finite point cloud in a zonotope whose generators are the
principal directions scaled by the extreme projections, so every input point
is a member by construction.  ``directional_contract`` shrinks each generator
of a conservative set along its own direction up to the first radius at which
an exterior certificate fires; the contraction factors lie in [0, 1], so the
tightened set is always contained in the original one.  Tightened sets are
training labels only -- nothing at deployment time depends on the certificate
being sound.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .setalg import Zonotope

__all__ = [
    "Certificate",
    "ContractionReport",
    "pca_fit",
    "directional_contract",
    "strip_cert_from_history",
]


@dataclass(frozen=True)
class Certificate:
    """Exterior non-reachability test: 1 means certified outside.

    Either per-dimension strips ``|y_d - center_d| > radius_d`` (step
    invariant) or an arbitrary callback ``fn(step, points) -> bool array``.
    Soundness of a user-provided callback is the caller's responsibility.
    """

    centers: Optional[np.ndarray] = None
    radii: Optional[np.ndarray] = None
    callback: Optional[Callable[[int, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.callback is None:
            if self.centers is None or self.radii is None:
                raise ValueError("strip certificate needs centers and radii")
            c = np.asarray(self.centers, dtype=float).reshape(-1)
            r = np.asarray(self.radii, dtype=float).reshape(-1)
            if c.shape != r.shape or np.any(r < 0):
                raise ValueError("strip centers/radii must match and radii be nonnegative")
            object.__setattr__(self, "centers", c)
            object.__setattr__(self, "radii", r)

    def outside(self, step: int, points: np.ndarray) -> np.ndarray:
        """Vectorized query over an (m, n_y) batch of points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.callback is not None:
            out = np.asarray(self.callback(step, points), dtype=bool).reshape(points.shape[0])
            return out
        return np.any(np.abs(points - self.centers) > self.radii, axis=1)


@dataclass(frozen=True)
class ContractionReport:
    """Per-generator certified radii and contraction factors, plus the result."""

    step: int
    rho_dd: np.ndarray
    rho_cert: np.ndarray
    lambdas: np.ndarray
    tightened: Zonotope


def pca_fit(points: np.ndarray) -> Zonotope:
    """Containing zonotope oriented along the principal directions of the cloud.

    Center is the sample mean; generator i is ``rho_i u_i`` where u_i is the
    i-th right singular vector of the centered data and rho_i the largest
    absolute projection onto it.  Directions with zero spread contribute zero
    generators, which are retained so the generator count always equals the
    ambient dimension.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] < 1:
        raise ValueError("need at least one point")
    n = points.shape[1]
    center = points.mean(axis=0)
    P = points - center
    _, s, Vh = np.linalg.svd(P, full_matrices=True)
    sigma = np.zeros(n)
    sigma[: s.shape[0]] = s
    U = Vh  # rows are right singular directions
    # deterministic orientation: largest-magnitude entry made positive
    for i in range(n):
        row = U[i]
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            U = U.copy()
            U[i] = -row
    # descending singular value, ties by lexicographically largest direction
    order = sorted(range(n), key=lambda i: (-sigma[i], tuple(-U[i])))
    rho = np.abs(P @ U.T).max(axis=0) if points.shape[0] else np.zeros(n)
    gens = np.stack([rho[i] * U[i] for i in order], axis=1)
    return Zonotope(center, gens)


def directional_contract(
    Ydd: Zonotope,
    cert: Certificate,
    step: int,
    n_ray: int = 201,
) -> ContractionReport:
    """Shrink each generator to the first certificate firing along its ray.

    For nonzero generator j with unit direction q_j, the set's half-width
    along q_j is ``rho_j = sum_l |q_j . g_l|``; the certificate is queried at
    n_ray evenly spaced radii in [0, rho_j] on both rays +/- q_j.  The
    certified radius is the smaller first-hit radius (rho_j when no hit), and
    the generator is scaled by lambda_j = rho_cert / rho_j.  The grid
    approximates the exact infimum from below, which only costs tightness.
    """
    if n_ray < 2:
        raise ValueError("need at least two ray samples")
    G = Ydd.generators
    gamma = G.shape[1]
    norms = np.linalg.norm(G, axis=0)
    rho_dd = np.zeros(gamma)
    rho_cert = np.zeros(gamma)
    lambdas = np.ones(gamma)
    nz = np.nonzero(norms > 0)[0]
    if nz.size:
        Q = G[:, nz] / norms[nz]
        rho = np.abs(Q.T @ G).sum(axis=1)
        rho_dd[nz] = rho
        radii = np.linspace(0.0, 1.0, n_ray)
        # one batched query per step: (j, sign, ray sample) -> point
        pts = Ydd.center[None, None, None, :] + (
            np.array([1.0, -1.0])[None, :, None, None]
            * (rho[:, None, None, None] * radii[None, None, :, None])
            * Q.T[:, None, None, :]
        )
        fired = cert.outside(step, pts.reshape(-1, Ydd.dim)).reshape(nz.size, 2, n_ray)
        for a, j in enumerate(nz):
            hits = []
            for sgn in (0, 1):
                f = fired[a, sgn]
                hits.append(radii[np.argmax(f)] * rho[a] if f.any() else rho[a])
            rho_cert[j] = min(hits)
            lambdas[j] = rho_cert[j] / rho[a] if rho[a] > 0 else 1.0
    tightened = Zonotope(Ydd.center, G * lambdas[None, :])
    return ContractionReport(step=step, rho_dd=rho_dd, rho_cert=rho_cert, lambdas=lambdas, tightened=tightened)


def strip_cert_from_history(
    trajs: Sequence,
    inflation: float = 0.0,
) -> Certificate:
    """Per-dimension strips from the historical output range.

    center = midrange, radius = half-range * (1 + inflation); every
    historical point therefore satisfies the certificate's inside condition.
    """
    pts = np.vstack([t.outputs for t in trajs])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return Certificate(centers=(lo + hi) / 2.0, radii=(hi - lo) / 2.0 * (1.0 + inflation))
