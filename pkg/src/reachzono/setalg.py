"""Zonotope and matrix-zonotope algebra.

A zonotope is the set ``{c + G @ a : ||a||_inf <= 1}`` given a center ``c``
(shape ``(n,)``) and a generator matrix ``G`` (shape ``(n, gamma)``).  A matrix
zonotope is the analogous set of matrices with a center matrix and a list of
generator matrices.  Every operation here is a pure function over immutable
values; the exact operations (linear map, Minkowski sum, Cartesian product,
projection) preserve membership exactly, while ``matzono_mul`` and ``reduce``
are sound over-approximations (they never exclude a true member).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Zonotope",
    "MatrixZonotope",
    "IntervalBox",
    "DimensionError",
    "linear_map",
    "minkowski_sum",
    "cartesian_product",
    "matzono_mul",
    "reduce",
    "interval_hull",
    "project",
    "support",
    "sample_member",
    "sample_matrix_member",
    "drop_zero_generators",
]


class DimensionError(ValueError):
    """Shapes of the operands are incompatible."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Zonotope:
    """Set ``{center + generators @ a : a in [-1, 1]^gamma}``.

    ``generators`` has one column per generator; a point is a zonotope with
    zero generators.  Instances are immutable (arrays are write-locked).
    """

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        g = np.asarray(self.generators, dtype=float)
        if g.size == 0:
            g = g.reshape(c.shape[0], 0)
        if g.ndim != 2 or g.shape[0] != c.shape[0]:
            raise DimensionError(
                f"generator matrix {g.shape} does not match center of dimension {c.shape[0]}"
            )
        object.__setattr__(self, "center", _freeze(c))
        object.__setattr__(self, "generators", _freeze(g))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def n_generators(self) -> int:
        return self.generators.shape[1]

    @classmethod
    def from_generator_list(cls, center, generators) -> "Zonotope":
        """Build from a list of generator vectors (the JSON layout)."""
        center = np.asarray(center, dtype=float).reshape(-1)
        if len(generators) == 0:
            return cls(center, np.zeros((center.shape[0], 0)))
        return cls(center, np.asarray(generators, dtype=float).T)

    @classmethod
    def point(cls, center) -> "Zonotope":
        center = np.asarray(center, dtype=float).reshape(-1)
        return cls(center, np.zeros((center.shape[0], 0)))

    @classmethod
    def box(cls, center, radii) -> "Zonotope":
        """Axis-aligned box: one diagonal generator per coordinate."""
        center = np.asarray(center, dtype=float).reshape(-1)
        radii = np.broadcast_to(np.asarray(radii, dtype=float), center.shape)
        return cls(center, np.diag(radii))

    def to_json_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "generators": self.generators.T.tolist(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Zonotope":
        return cls.from_generator_list(obj["center"], obj["generators"])


@dataclass(frozen=True)
class MatrixZonotope:
    """Set of matrices ``{center + sum_i a_i * generators[i] : a in [-1, 1]^gamma}``.

    ``generators`` is stacked with shape ``(gamma, n, p)`` where the center is
    ``(n, p)``.
    """

    center: np.ndarray
    generators: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        g = np.asarray(self.generators, dtype=float)
        if c.ndim != 2:
            raise DimensionError(f"center must be a matrix, got shape {c.shape}")
        if g.size == 0:
            g = g.reshape((0,) + c.shape)
        if g.ndim != 3 or g.shape[1:] != c.shape:
            raise DimensionError(
                f"generator stack {g.shape} does not match center shape {c.shape}"
            )
        object.__setattr__(self, "center", _freeze(c))
        object.__setattr__(self, "generators", _freeze(g))

    @property
    def shape(self) -> tuple:
        return self.center.shape

    @property
    def n_generators(self) -> int:
        return self.generators.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "center": self.center.tolist(),
            "generators": [g.tolist() for g in self.generators],
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "MatrixZonotope":
        center = np.asarray(obj["center"], dtype=float)
        gens = obj["generators"]
        if len(gens) == 0:
            return cls(center, np.zeros((0,) + center.shape))
        return cls(center, np.asarray(gens, dtype=float))


@dataclass(frozen=True)
class IntervalBox:
    """Componentwise interval ``[lower, upper]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise DimensionError(f"bounds {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", _freeze(lo))
        object.__setattr__(self, "upper", _freeze(hi))

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((points >= self.lower - tol) & (points <= self.upper + tol), axis=1)


def linear_map(L: np.ndarray, Z: Zonotope) -> Zonotope:
    """Image ``L Z = <L c, L G>``; exact."""
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[1] != Z.dim:
        raise DimensionError(f"map of shape {L.shape} applied to zonotope of dimension {Z.dim}")
    return Zonotope(L @ Z.center, L @ Z.generators)


def minkowski_sum(Z1: Zonotope, Z2: Zonotope) -> Zonotope:
    """Minkowski sum ``<c1 + c2, [G1 | G2]>``; exact."""
    if Z1.dim != Z2.dim:
        raise DimensionError(f"dimensions {Z1.dim} and {Z2.dim} differ")
    return Zonotope(Z1.center + Z2.center, np.hstack([Z1.generators, Z2.generators]))


def cartesian_product(Z1: Zonotope, Z2: Zonotope) -> Zonotope:
    """Stacked center with block-diagonal generators; gamma1 + gamma2 generators."""
    c = np.concatenate([Z1.center, Z2.center])
    g = np.zeros((Z1.dim + Z2.dim, Z1.n_generators + Z2.n_generators))
    g[: Z1.dim, : Z1.n_generators] = Z1.generators
    g[Z1.dim :, Z1.n_generators :] = Z2.generators
    return Zonotope(c, g)


def matzono_mul(M: MatrixZonotope, Z: Zonotope) -> Zonotope:
    """Over-approximation of ``{X z : X in M, z in Z}``.

    Center ``C c``; generators ``C g_j``, ``G_i c`` and ``G_i g_j`` for all
    ``i, j`` (in that order), bounding each bilinear interaction by an
    independent coefficient.  Every product of members has an exact witness in
    the result, so no true member is excluded.
    """
    n, p = M.shape
    if p != Z.dim:
        raise DimensionError(f"matrix zonotope of shape {M.shape} times zonotope of dimension {Z.dim}")
    c = M.center @ Z.center
    parts = [M.center @ Z.generators]
    if M.n_generators:
        parts.append(np.einsum("inp,p->ni", M.generators, Z.center).reshape(n, -1))
        if Z.n_generators:
            # (gamma_M, n, gamma_Z) -> columns ordered i-major, j-minor
            cross = np.einsum("inp,pj->inj", M.generators, Z.generators)
            parts.append(cross.transpose(1, 0, 2).reshape(n, -1))
    return Zonotope(c, np.hstack(parts))


def reduce(Z: Zonotope, order: int) -> Zonotope:
    """Sound order reduction: at most ``order * dim`` generators, superset of Z.

    Keeps the ``order*n - n`` generators of largest l1 norm (stable order) and
    collapses the remainder into an axis-aligned box of their absolute row
    sums.  ``order = 1`` yields the interval hull as a box zonotope.
    """
    if order < 1:
        raise ValueError(f"reduction order must be >= 1, got {order}")
    n = Z.dim
    cap = order * n
    if Z.n_generators <= cap:
        return Z
    norms = np.abs(Z.generators).sum(axis=0)
    idx = np.argsort(-norms, kind="stable")
    keep, drop = idx[: cap - n], idx[cap - n :]
    keep = np.sort(keep)  # preserve original generator order among the kept
    box = np.diag(np.abs(Z.generators[:, drop]).sum(axis=1))
    return Zonotope(Z.center, np.hstack([Z.generators[:, keep], box]))


def interval_hull(Z: Zonotope) -> IntervalBox:
    """Tightest axis-aligned box: ``c -/+ r`` with ``r_i = sum_j |G_ij|``."""
    r = np.abs(Z.generators).sum(axis=1)
    return IntervalBox(Z.center - r, Z.center + r)


def project(Z: Zonotope, dims) -> Zonotope:
    """Row selection of center and generators; exact projection."""
    dims = np.asarray(list(dims) if not isinstance(dims, np.ndarray) else dims, dtype=int)
    if dims.size == 0:
        raise DimensionError("projection onto an empty index set")
    if np.any(dims < 0) or np.any(dims >= Z.dim):
        raise DimensionError(f"projection indices {dims.tolist()} out of range for dimension {Z.dim}")
    return Zonotope(Z.center[dims], Z.generators[dims, :])


def support(Z: Zonotope, direction: np.ndarray) -> float:
    """Exact support value ``d^T c + sum_j |d^T g_j|``."""
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.shape[0] != Z.dim:
        raise DimensionError(f"direction of dimension {d.shape[0]} vs zonotope of dimension {Z.dim}")
    if not np.any(d):
        raise ValueError("support direction must be nonzero")
    return float(d @ Z.center + np.abs(d @ Z.generators).sum())


def sample_member(Z: Zonotope, rng: np.random.Generator) -> np.ndarray:
    """Draw ``c + G a`` with ``a ~ Uniform[-1, 1]^gamma``; deterministic under a seeded rng."""
    a = rng.uniform(-1.0, 1.0, Z.n_generators)
    return Z.center + Z.generators @ a


def sample_matrix_member(M: MatrixZonotope, rng: np.random.Generator) -> np.ndarray:
    """Draw a member matrix with coefficients uniform in [-1, 1]."""
    a = rng.uniform(-1.0, 1.0, M.n_generators)
    if M.n_generators == 0:
        return M.center.copy()
    return M.center + np.tensordot(a, M.generators, axes=(0, 0))


def drop_zero_generators(Z: Zonotope, tol: float = 0.0) -> Zonotope:
    """Remove generator columns whose entries are all <= tol in magnitude.

    Zero generators are otherwise retained throughout this module so that
    contracts requiring a fixed generator count (tokenization) hold.
    """
    mask = np.abs(Z.generators).max(axis=0, initial=0.0) > tol
    return Zonotope(Z.center, Z.generators[:, mask])
