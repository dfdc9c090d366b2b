"""Ground-truth LTI simulator, dataset generation, and test-side oracles.

The simulated plant is ``x+ = A x + B u + w``, ``y = C x + v`` with bounded
process/measurement noise drawn uniformly from box zonotopes.  The
autoregressive oracle eliminates the state through the characteristic
polynomial of A: for k >= n_o,

    y_k = -sum_i a_i y_{k-i} + sum_i b_i u_{k-i} + eps_k,

with ``b_i = sum_{j<i} a_j C A^{i-1-j} B`` and an aggregated residual eps_k
combining both noise channels.  Everything that touches the true matrices
(oracle coefficients, model-based reach sets) exists for tests and baseline
references only; the data-driven pipeline never reads them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .setalg import IntervalBox, Zonotope, linear_map, minkowski_sum, sample_member

__all__ = [
    "LtiSystem",
    "NoiseSpec",
    "Trajectory",
    "OracleModel",
    "ObservabilityError",
    "default_system",
    "default_noise",
    "simulate",
    "gen_dataset",
    "oracle_from_system",
    "residual_check",
    "worst_case_residual_bound",
    "mc_hull",
    "model_based_reach",
    "C_VARIANTS",
]


class ObservabilityError(ValueError):
    """The pair (C, A) fails the observability rank condition."""


@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time plant matrices; (C, A) must be observable."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    dt: float = 1.0

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        C = np.asarray(self.C, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
            raise ValueError(f"inconsistent shapes A{A.shape} B{B.shape} C{C.shape}")
        obs = np.vstack([C @ np.linalg.matrix_power(A, k) for k in range(n)])
        rank = np.linalg.matrix_rank(obs)
        if rank < n:
            raise ObservabilityError(f"(C, A) observability rank {rank} < state dimension {n}")
        for name, m in (("A", A), ("B", B), ("C", C)):
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]


@dataclass(frozen=True)
class NoiseSpec:
    """Noise boxes for simulation plus the aggregated residual bound.

    ``eps_bound`` must contain the origin; it is the only bound the
    data-driven pipeline ever sees.
    """

    w_box: Zonotope
    v_box: Zonotope
    eps_bound: Zonotope

    def __post_init__(self):
        from .conformal import score  # local import: conformal builds on linsolve only

        if score(self.eps_bound, np.zeros(self.eps_bound.dim)) > 1e-12:
            raise ValueError("eps_bound must contain the origin")


@dataclass(frozen=True)
class Trajectory:
    """One simulated run: per-step inputs and outputs, optional states."""

    seed: int
    inputs: np.ndarray  # (T, n_u)
    outputs: np.ndarray  # (T, n_y)
    states: Optional[np.ndarray] = None  # (T, n_x), oracle mode only

    def __post_init__(self):
        u = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.outputs, dtype=float)
        if u.ndim != 2 or y.ndim != 2 or u.shape[0] != y.shape[0]:
            raise ValueError(f"inputs {u.shape} and outputs {y.shape} must be equal-length 2-D arrays")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(y))):
            raise ValueError("trajectory contains non-finite entries")
        object.__setattr__(self, "inputs", u)
        object.__setattr__(self, "outputs", y)

    def __len__(self) -> int:
        return self.outputs.shape[0]

    def to_json_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "inputs": self.inputs.tolist(),
            "outputs": self.outputs.tolist(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Trajectory":
        return cls(seed=int(obj["seed"]), inputs=np.asarray(obj["inputs"]), outputs=np.asarray(obj["outputs"]))


@dataclass(frozen=True)
class OracleModel:
    """True autoregressive parameters; test-only.

    ``a`` are the characteristic-polynomial coefficients (a_0 = 1 excluded),
    ``b[i]`` the (n_y, n_u) input coefficient of lag i+1, and ``theta_t`` the
    lifted transition matrix of shape (p, p + n_u) with p = n_o (n_y + n_u).
    """

    a: np.ndarray
    b: np.ndarray
    theta_t: np.ndarray
    n_y: int
    n_u: int

    @property
    def n_o(self) -> int:
        return self.a.shape[0]


def _rotation(radius: float, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return radius * np.array([[c, -s], [s, c]])


C_VARIANTS = {
    "a": np.array([[0.6, 0.0, 0.8, 0.0, 0.0], [0.0, 0.8, 0.0, 0.0, 0.6]]),
    "b": np.array([[0.4, 0.3, 0.2, 0.1, 0.0], [0.0, 0.1, 0.2, 0.3, 0.4]]),
    "c": np.array([[0.5, 0.5, 0.0, 0.0, 0.0], [0.0, 0.0, 0.3, 0.0, 0.7]]),
}


def default_system(c_variant: str = "a") -> LtiSystem:
    """Documented default 5-state plant: two damped rotations and one stable pole.

    A = blkdiag(rot(0.95, 0.1), rot(0.9, 0.2), 0.9), B = ones(5, 1),
    dt = 0.05 s, and C one of the three sensor variants 'a' | 'b' | 'c'.
    """
    if c_variant not in C_VARIANTS:
        raise ValueError(f"unknown C variant {c_variant!r}; expected one of a, b, c")
    A = np.zeros((5, 5))
    A[0:2, 0:2] = _rotation(0.95, 0.1)
    A[2:4, 2:4] = _rotation(0.9, 0.2)
    A[4, 4] = 0.9
    return LtiSystem(A=A, B=np.ones((5, 1)), C=C_VARIANTS[c_variant], dt=0.05)


def default_noise(n_y: int = 2) -> NoiseSpec:
    """Shipped noise boxes, provably inside the default residual bound.

    Radii 1e-4 for both channels keep the worst-case aggregated residual of
    the default system below 0.0046 per coordinate against the 0.006 bound
    (see worst_case_residual_bound), so residual containment holds for every
    realization, not just on average.
    """
    return NoiseSpec(
        w_box=Zonotope.box(np.zeros(5), 1e-4),
        v_box=Zonotope.box(np.zeros(n_y), 1e-4),
        eps_bound=Zonotope.box(np.zeros(n_y), 0.006),
    )


def simulate(
    sys: LtiSystem,
    x0: np.ndarray,
    inputs: np.ndarray,
    noise: Optional[NoiseSpec],
    seed: int,
    keep_states: bool = False,
) -> Trajectory:
    """Run the plant forward; bit-exact under a fixed seed.

    Per step the draw order is measurement noise, then process noise.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if x0.shape[0] != sys.n_x:
        raise ValueError(f"x0 of dimension {x0.shape[0]} vs state dimension {sys.n_x}")
    if inputs.shape[1] != sys.n_u:
        raise ValueError(f"inputs of width {inputs.shape[1]} vs input dimension {sys.n_u}")
    rng = np.random.default_rng(seed)
    T = inputs.shape[0]
    x = x0
    ys = np.empty((T, sys.n_y))
    xs = np.empty((T, sys.n_x)) if keep_states else None
    for k in range(T):
        v = sample_member(noise.v_box, rng) if noise is not None else 0.0
        ys[k] = sys.C @ x + v
        if keep_states:
            xs[k] = x
        w = sample_member(noise.w_box, rng) if noise is not None else 0.0
        x = sys.A @ x + sys.B @ inputs[k] + w
    return Trajectory(seed=seed, inputs=inputs, outputs=ys, states=xs)


def _derived_seed(master_seed: int, stream: int, index: int) -> int:
    ss = np.random.SeedSequence(master_seed, spawn_key=(stream, index))
    return int(ss.generate_state(1, np.uint64)[0])


def gen_dataset(
    sys: LtiSystem,
    x0_set: Zonotope,
    input_set: Zonotope,
    noise: Optional[NoiseSpec],
    count: int,
    length: int,
    master_seed: int,
    stream: int = 0,
    keep_states: bool = False,
) -> list[Trajectory]:
    """Sample ``count`` trajectories of ``length`` steps.

    Each trajectory gets an independent seed derived from
    (master_seed, stream, index); x0 and the per-step inputs are drawn
    uniformly from their sets on a separate substream so that reruns are
    order-stable and bit-exact.
    """
    out = []
    for i in range(count):
        s = _derived_seed(master_seed, stream, i)
        exc = np.random.default_rng(np.random.SeedSequence(s, spawn_key=(1,)))
        x0 = sample_member(x0_set, exc)
        u = np.stack([sample_member(input_set, exc) for _ in range(length)])
        out.append(simulate(sys, x0, u, noise, seed=s, keep_states=keep_states))
    return out


def oracle_from_system(sys: LtiSystem) -> OracleModel:
    """Characteristic polynomial (Faddeev-LeVerrier) and lifted transition matrix."""
    A, B, C = sys.A, sys.B, sys.C
    n = sys.n_x
    M = np.eye(n)
    a = np.empty(n + 1)
    a[0] = 1.0
    for k in range(1, n + 1):
        a[k] = -np.trace(A @ M) / k
        M = A @ M + a[k] * np.eye(n)
    powers = [np.linalg.matrix_power(A, k) for k in range(n)]
    b = np.stack([
        sum(a[j] * C @ powers[i - 1 - j] for j in range(i)) @ B
        for i in range(1, n + 1)
    ])
    theta_t = _lifted_theta(a[1:], b, sys.n_y, sys.n_u)
    return OracleModel(a=a[1:], b=b, theta_t=theta_t, n_y=sys.n_y, n_u=sys.n_u)


def _lifted_theta(a: np.ndarray, b: np.ndarray, n_y: int, n_u: int) -> np.ndarray:
    """Transition of the lifted vector z = (y_{k-1}..y_{k-n_o}, u_{k-1}..u_{k-n_o}).

    First n_y rows carry the autoregression; the rest shift the window and
    insert the current input.
    """
    n_o = a.shape[0]
    p = n_o * (n_y + n_u)
    py = n_o * n_y
    th = np.zeros((p, p + n_u))
    for i in range(n_o):
        th[:n_y, i * n_y : (i + 1) * n_y] = -a[i] * np.eye(n_y)
        th[:n_y, py + i * n_u : py + (i + 1) * n_u] = b[i]
    for j in range(1, n_o):  # y_{k-j} in z_{k+1} is y-block j-1 of z_k
        th[j * n_y : (j + 1) * n_y, (j - 1) * n_y : j * n_y] = np.eye(n_y)
    th[py : py + n_u, p : p + n_u] = np.eye(n_u)  # u_k enters the window head
    for j in range(1, n_o):
        th[py + j * n_u : py + (j + 1) * n_u, py + (j - 1) * n_u : py + j * n_u] = np.eye(n_u)
    return th


def residuals(traj: Trajectory, oracle: OracleModel) -> np.ndarray:
    """Realized eps_k = y_k + sum a_i y_{k-i} - sum b_i u_{k-i} for k >= n_o."""
    n_o = oracle.n_o
    y, u = traj.outputs, traj.inputs
    T = len(traj)
    if T <= n_o:
        return np.zeros((0, oracle.n_y))
    eps = y[n_o:].copy()
    for i in range(1, n_o + 1):
        eps += oracle.a[i - 1] * y[n_o - i : T - i]
        eps -= u[n_o - i : T - i] @ oracle.b[i - 1].T
    return eps


@dataclass(frozen=True)
class ResidualReport:
    total: int
    inside: int
    per_coord_min: np.ndarray
    per_coord_max: np.ndarray

    @property
    def inside_fraction(self) -> float:
        return self.inside / self.total if self.total else 1.0


def residual_check(
    trajs: Sequence[Trajectory],
    oracle: OracleModel,
    eps_bound: Zonotope,
    tol: float = 1e-9,
) -> ResidualReport:
    """Fraction of realized residuals inside eps_bound plus their empirical range."""
    from .conformal import score

    all_eps = [residuals(t, oracle) for t in trajs if len(t) > oracle.n_o]
    if not all_eps:
        raise ValueError("no trajectory longer than the system order")
    eps = np.vstack(all_eps)
    axis_aligned = np.all(np.count_nonzero(eps_bound.generators, axis=0) <= 1)
    if axis_aligned:
        # the bound equals its interval hull: vectorized test instead of one LP per row
        from .setalg import interval_hull

        inside = int(interval_hull(eps_bound).contains(eps, tol=tol).sum())
    else:
        inside = sum(1 for e in eps if score(eps_bound, e) <= tol)
    return ResidualReport(
        total=eps.shape[0],
        inside=inside,
        per_coord_min=eps.min(axis=0),
        per_coord_max=eps.max(axis=0),
    )


def worst_case_residual_bound(sys: LtiSystem, w_box: Zonotope, v_box: Zonotope) -> np.ndarray:
    """Per-coordinate bound on |eps_k| valid for every noise realization.

    eps_k = sum_m (sum_{j<=m} a_j C A^{m-j}) w_{k-1-m} + v_k + sum_i a_i v_{k-i};
    the bound combines absolute row sums with the box radii.
    """
    oracle = oracle_from_system(sys)
    a = np.concatenate([[1.0], oracle.a])
    n = sys.n_x
    w_rad = np.abs(w_box.generators).sum(axis=1)
    v_rad = np.abs(v_box.generators).sum(axis=1)
    powers = [np.linalg.matrix_power(sys.A, k) for k in range(n)]
    bound = np.zeros(sys.n_y)
    for m in range(n):
        Fm = sum(a[j] * sys.C @ powers[m - j] for j in range(m + 1))
        bound += np.abs(Fm) @ w_rad
    bound += (1.0 + np.abs(oracle.a).sum()) * v_rad
    return bound


def mc_hull(trajs: Sequence[Trajectory], step: int) -> IntervalBox:
    """Componentwise min/max of trajectory outputs at one step."""
    pts = np.array([t.outputs[step] for t in trajs if len(t) > step])
    if pts.size == 0:
        raise ValueError(f"no trajectory reaches step {step}")
    return IntervalBox(pts.min(axis=0), pts.max(axis=0))


def model_based_reach(
    sys: LtiSystem,
    x0_set: Zonotope,
    input_set: Zonotope,
    w_box: Optional[Zonotope],
    v_box: Optional[Zonotope],
    horizon: int,
) -> list[Zonotope]:
    """Classical known-model propagation; baseline/test oracle only.

    X_{k+1} = A X_k + B U + w_box,  Y_k = C X_k + v_box; returns Y_0..Y_horizon.
    """
    X = x0_set
    BU = linear_map(sys.B, input_set)
    ys = []
    for _ in range(horizon + 1):
        Y = linear_map(sys.C, X)
        if v_box is not None:
            Y = minkowski_sum(Y, v_box)
        ys.append(Y)
        X = linear_map(sys.A, X)
        X = minkowski_sum(X, BU)
        if w_box is not None:
            X = minkowski_sum(X, w_box)
    return ys
