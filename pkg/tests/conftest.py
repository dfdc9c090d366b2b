"""Shared test helpers: exact low-dimensional membership scores and random systems."""

from __future__ import annotations

import numpy as np
import pytest

from reachzono.setalg import Zonotope
from reachzono.sysim import LtiSystem, ObservabilityError


def exact_score_batch(Z: Zonotope, points: np.ndarray) -> np.ndarray:
    """Exact min-inflation scores for dim <= 2 via the zonogon H-representation.

    The facet normals of Z (+) t*B_inf are perpendiculars of the generators
    plus the coordinate axes, independent of t, so the minimal inflation is
    the largest violation (n . r - h_Z(n)) / ||n||_1 over that finite normal
    set.  Used to cross-check and batch the LP score in 1-D/2-D tests.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    R = points - Z.center
    G = Z.generators
    if Z.dim == 1:
        return np.maximum(0.0, np.abs(R[:, 0]) - np.abs(G).sum())
    if Z.dim != 2:
        raise ValueError("exact scorer supports dimensions 1 and 2 only")
    normals = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
    for j in range(G.shape[1]):
        g = G[:, j]
        if g[0] != 0.0 or g[1] != 0.0:
            normals.append(np.array([-g[1], g[0]]))
    N = np.stack(normals)
    h = np.abs(N @ G).sum(axis=1)
    denom = np.abs(N).sum(axis=1)
    t = (np.abs(R @ N.T) - h) / denom
    return np.maximum(0.0, t.max(axis=1))


def random_zonotope(rng: np.random.Generator, dim: int, n_gens: int, scale: float = 1.0) -> Zonotope:
    return Zonotope(rng.normal(0, scale, dim), rng.normal(0, scale, (dim, n_gens)))


def random_observable_system(rng: np.random.Generator, n_x: int, n_y: int, n_u: int,
                             spectral_radius: float = 0.8) -> LtiSystem:
    """Random stable observable plant; resamples C until the rank condition holds."""
    A = rng.normal(0, 1.0, (n_x, n_x))
    eig = np.abs(np.linalg.eigvals(A)).max()
    if eig > 0:
        A = A * (spectral_radius / eig)
    B = rng.normal(0, 1.0, (n_x, n_u))
    for _ in range(50):
        C = rng.normal(0, 1.0, (n_y, n_x))
        try:
            return LtiSystem(A=A, B=B, C=C, dt=1.0)
        except ObservabilityError:
            continue
    raise RuntimeError("failed to sample an observable pair")


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
