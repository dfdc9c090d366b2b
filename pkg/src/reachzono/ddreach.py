"""Formal data-driven output reachability from input-output data.

The latent state is replaced by the lifted window
``z_k = (y_{k-1}..y_{k-n_o}, u_{k-1}..u_{k-n_o})`` of dimension
``p = n_o (n_y + n_u)``.  From trajectory data we assemble the shifted data
matrices ``Z_plus`` / ``Phi_minus``, enclose all transition matrices
consistent with the residual bound in the matrix zonotope
``(Z_plus - M_eps) pinv(Phi_minus)``, and propagate

    Z_{k+1} = M_Sigma (Z_k x U_k) (+) eps,   Y_k = proj_{1..n_y}(Z_{k+1}),

reducing the lifted set to a configured order after every step.  Containment
of every data-consistent trajectory is deterministic as long as the residual
bound is valid and the regressor matrix has full row rank.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import setalg
from .linsolve import DEFAULT_RANK_TOL, pinv, svd
from .setalg import MatrixZonotope, Zonotope, cartesian_product, matzono_mul, minkowski_sum, project
from .sysim import Trajectory

__all__ = [
    "LiftedRecord",
    "ModelSet",
    "ReachResult",
    "RankDeficientError",
    "PropagationError",
    "build_lifted",
    "build_noise_matzono",
    "build_model_set",
    "propagate_step",
    "run_reachability",
    "initial_lifted_set",
    "embed_output_block",
]


class RankDeficientError(ValueError):
    """The regressor data matrix is not full row rank; add richer data."""


class PropagationError(RuntimeError):
    """The propagated set left the finite range."""


@dataclass(frozen=True)
class LiftedRecord:
    """Shifted lifted data matrices with their dimensions.

    Column t of Phi_minus is [z_k; u_k] and column t of Z_plus is z_{k+1},
    stacked newest-first per the lifted window layout.
    """

    Z_plus: np.ndarray  # (p, T)
    Phi_minus: np.ndarray  # (p + n_u, T)
    n_o: int
    n_y: int
    n_u: int

    def __post_init__(self):
        p = self.n_o * (self.n_y + self.n_u)
        if self.Z_plus.shape[0] != p or self.Phi_minus.shape[0] != p + self.n_u:
            raise ValueError(
                f"row counts {self.Z_plus.shape[0]}/{self.Phi_minus.shape[0]} vs p={p}, n_u={self.n_u}"
            )
        if self.Z_plus.shape[1] != self.Phi_minus.shape[1]:
            raise ValueError("Z_plus and Phi_minus must have equal column counts")

    @property
    def p(self) -> int:
        return self.n_o * (self.n_y + self.n_u)

    @property
    def T(self) -> int:
        return self.Z_plus.shape[1]


@dataclass(frozen=True)
class ModelSet:
    """Matrix zonotope of lifted transitions plus build diagnostics."""

    msigma: MatrixZonotope
    metadata: dict

    @property
    def p(self) -> int:
        return self.msigma.shape[0]

    @property
    def n_u(self) -> int:
        return self.msigma.shape[1] - self.msigma.shape[0]

    def to_json_dict(self) -> dict:
        return {"matrix_zonotope": self.msigma.to_json_dict(), "metadata": self.metadata}

    @classmethod
    def from_json_dict(cls, obj: dict) -> "ModelSet":
        return cls(
            msigma=MatrixZonotope.from_json_dict(obj["matrix_zonotope"]),
            metadata=dict(obj["metadata"]),
        )


@dataclass(frozen=True)
class ReachResult:
    """Per-step lifted and output sets, keyed by time index."""

    lifted_sets: Mapping[int, Zonotope]  # steps n_o .. N+1
    output_sets: Mapping[int, Zonotope]  # steps n_o .. N
    n_o: int
    n_y: int

    def to_json_list(self) -> list:
        return [{"step": k, "set": z.to_json_dict()} for k, z in sorted(self.output_sets.items())]


def lift(traj: Trajectory, k: int, n_o: int) -> np.ndarray:
    """z_k: outputs then inputs, newest first."""
    y = traj.outputs[k - n_o : k][::-1].reshape(-1)
    u = traj.inputs[k - n_o : k][::-1].reshape(-1)
    return np.concatenate([y, u])


def build_lifted(trajs: Sequence[Trajectory], n_o: int) -> LiftedRecord:
    """Assemble (Z_plus, Phi_minus) starting at index n_o of each trajectory.

    Trajectories shorter than n_o + 2 are skipped with a warning; having no
    usable column at all is an error.
    """
    if n_o < 1:
        raise ValueError("system order must be >= 1")
    zp, pm = [], []
    n_y = n_u = None
    for idx, t in enumerate(trajs):
        if n_y is None:
            n_y, n_u = t.outputs.shape[1], t.inputs.shape[1]
        if len(t) < n_o + 2:
            warnings.warn(f"trajectory {idx} of length {len(t)} is too short for order {n_o}; skipped")
            continue
        for k in range(n_o, len(t) - 1):
            pm.append(np.concatenate([lift(t, k, n_o), t.inputs[k]]))
            zp.append(lift(t, k + 1, n_o))
    if not zp:
        raise ValueError(f"no trajectory provides a usable column for order {n_o}")
    return LiftedRecord(
        Z_plus=np.array(zp).T, Phi_minus=np.array(pm).T, n_o=n_o, n_y=n_y, n_u=n_u
    )


def build_noise_matzono(
    eps_bound: Zonotope,
    T: int,
    p: int,
    restrict_to_output_block: bool = True,
) -> MatrixZonotope:
    """Residual matrix zonotope: eps_bound concatenated across T columns.

    One generator per (residual generator i, column j), carrying generator i
    in column j only; ordering is i-major, j-minor.  By default the residual
    occupies the first n_y rows (the autoregressive block) and the shift rows
    are exactly zero; ``restrict_to_output_block=False`` replicates the bound
    independently across every output block of the window for ablation.
    """
    if T < 1:
        raise ValueError("need at least one data column")
    n_y = eps_bound.dim
    if restrict_to_output_block:
        row_starts = [0]
    else:
        row_starts = list(range(0, p - n_y + 1, n_y))
    center = np.zeros((p, T))
    gens = []
    for r0 in row_starts:
        center[r0 : r0 + n_y, :] = eps_bound.center[:, None]
        for i in range(eps_bound.n_generators):
            col = eps_bound.generators[:, i]
            for j in range(T):
                g = np.zeros((p, T))
                g[r0 : r0 + n_y, j] = col
                gens.append(g)
    return MatrixZonotope(center, np.stack(gens) if gens else np.zeros((0, p, T)))


def build_model_set(
    lr: LiftedRecord,
    meps: MatrixZonotope,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> ModelSet:
    """(Z_plus - M_eps) pinv(Phi_minus); every data-consistent transition is a member.

    Fails hard when Phi_minus is rank deficient, since the membership argument
    needs a right inverse.
    """
    if meps.shape != lr.Z_plus.shape:
        raise ValueError(f"noise matrix zonotope {meps.shape} vs data {lr.Z_plus.shape}")
    s = svd(lr.Phi_minus)[1]
    needed = lr.p + lr.n_u
    rank = int(np.count_nonzero(s > rank_tol * s[0])) if s.size else 0
    if rank < needed:
        raise RankDeficientError(
            f"Phi_minus has numerical rank {rank} < {needed}; collect more exciting data"
        )
    P = pinv(lr.Phi_minus, rank_tol)
    center = (lr.Z_plus - meps.center) @ P
    if meps.n_generators:
        gens = -meps.generators @ P
    else:
        gens = np.zeros((0,) + center.shape)
    meta = {
        "T": lr.T,
        "n_o": lr.n_o,
        "n_y": lr.n_y,
        "n_u": lr.n_u,
        "rank": rank,
        "sigma_max": float(s[0]),
        "sigma_min": float(s[needed - 1]),
    }
    return ModelSet(msigma=MatrixZonotope(center, gens), metadata=meta)


def matrix_membership_score(M: MatrixZonotope, X: np.ndarray) -> float:
    """Min-inflation LP score of a matrix against a matrix zonotope (vectorized).

    Zero means X is a member up to numerical error; this is how the true
    transition matrix is checked against the model set.
    """
    from .linsolve import solve_min_inflation

    X = np.asarray(X, dtype=float)
    if X.shape != M.shape:
        raise ValueError(f"matrix {X.shape} vs matrix zonotope {M.shape}")
    r = (X - M.center).reshape(-1)
    G = M.generators.reshape(M.n_generators, -1).T if M.n_generators else np.zeros((r.size, 0))
    return solve_min_inflation(r, G)[0]


def embed_output_block(eps_bound: Zonotope, p: int) -> Zonotope:
    """Lift the residual set into the first n_y coordinates of the p-dim window."""
    n_y = eps_bound.dim
    c = np.zeros(p)
    c[:n_y] = eps_bound.center
    g = np.zeros((p, eps_bound.n_generators))
    g[:n_y, :] = eps_bound.generators
    return Zonotope(c, g)


def propagate_step(ms: ModelSet, Zk: Zonotope, Uk: Zonotope, eps_bound: Zonotope) -> Zonotope:
    """One lifted transition: M_Sigma (Z_k x U_k) (+) embedded eps_bound."""
    if Zk.dim != ms.p:
        raise ValueError(f"lifted set of dimension {Zk.dim} vs model row dimension {ms.p}")
    if Uk.dim != ms.n_u:
        raise ValueError(f"input set of dimension {Uk.dim} vs model input dimension {ms.n_u}")
    prod = matzono_mul(ms.msigma, cartesian_product(Zk, Uk))
    return minkowski_sum(prod, embed_output_block(eps_bound, ms.p))


def run_reachability(
    ms: ModelSet,
    Z_init: Zonotope,
    U_sets: Zonotope | Sequence[Zonotope],
    eps_bound: Zonotope,
    n_o: int,
    N: int,
    rho_max: int,
) -> ReachResult:
    """Iterate propagate / reduce / project for steps n_o .. N.

    ``U_sets`` is either one input set reused at every step or a sequence
    indexed by k - n_o.  The lifted set is reduced to order rho_max after
    every step; the projected output set keeps the lifted set's generators.
    """
    if Z_init.dim != ms.p:
        raise ValueError(f"initial lifted set of dimension {Z_init.dim} vs p={ms.p}")
    if N < n_o:
        raise ValueError(f"horizon {N} precedes the first prediction step {n_o}")
    n_y = ms.metadata["n_y"]
    lifted = {n_o: Z_init}
    outputs = {}
    Z = Z_init
    for k in range(n_o, N + 1):
        U = U_sets if isinstance(U_sets, Zonotope) else U_sets[k - n_o]
        Z = setalg.reduce(propagate_step(ms, Z, U, eps_bound), rho_max)
        if not (np.all(np.isfinite(Z.center)) and np.all(np.isfinite(Z.generators))):
            raise PropagationError(f"propagated set diverged to non-finite values at step {k}")
        lifted[k + 1] = Z
        outputs[k] = project(Z, range(n_y))
    return ReachResult(lifted_sets=lifted, output_sets=outputs, n_o=n_o, n_y=n_y)


def initial_lifted_set(
    output_sets: Sequence[Zonotope],
    input_sets: Zonotope | Sequence[Zonotope],
) -> Zonotope:
    """Initial window Z_{n_o} = Y_{n_o-1} x .. x Y_0 x U_{n_o-1} x .. x U_0.

    Any realized trajectory whose first n_o outputs lie in the given output
    sets (with inputs in the input sets) has its lifted vector in the result,
    which is what trajectory-level containment of the propagation needs.
    """
    n_o = len(output_sets)
    if n_o < 1:
        raise ValueError("need at least one initial output set")
    if isinstance(input_sets, Zonotope):
        input_sets = [input_sets] * n_o
    acc = output_sets[n_o - 1]
    for j in range(n_o - 2, -1, -1):
        acc = cartesian_product(acc, output_sets[j])
    for j in range(n_o - 1, -1, -1):
        acc = cartesian_product(acc, input_sets[j])
    return acc
