"""Coordinate frames and the basis matrices of the degenerate ring state.

* rotating frame:  r_k = e^{it} (X_k + i Y_k)
* (a,b,u,w) frame: r_k = e^{it} e^{i theta0_k} ((a_k + 1) + i b_k), u = adot, w = bdot
* degenerate frame (n = 2N even, theta0 = (0,..,0, pi,..,pi)):
  (a,b,u,w) = P (Z, beta, beta_d, beta_s, gamma1, gamma2, delta1, delta2)
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import SwarmState

__all__ = [
    "AbuwVector",
    "DegenerateVector",
    "BasisPack",
    "to_rotating_frame",
    "from_rotating_frame",
    "to_abuw",
    "from_abuw",
    "coupling_matrices",
    "normalization_angle",
    "normalize_ring_angles",
    "degenerate_angles",
    "build_basis",
    "to_degenerate",
    "from_degenerate",
    "compensated_matmul",
]


def _as_vector(state) -> np.ndarray:
    if isinstance(state, SwarmState):
        return state.to_vector()
    return np.asarray(state, dtype=float).ravel()


def _cplx(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = y.size // 4
    return y[:n] + 1j * y[n:2 * n], y[2 * n:3 * n] + 1j * y[3 * n:]


def _flat(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return np.concatenate([p.real, p.imag, q.real, q.imag])


# ---------------------------------------------------------------------------
# rotating frame


def to_rotating_frame(state, t: float) -> np.ndarray:
    """Swarm vector (or SwarmState) -> [X, Y, dX, dY] at time t."""
    r, rd = _cplx(_as_vector(state))
    rot = np.exp(-1j * t)
    W = rot * r
    return _flat(W, rot * rd - 1j * W)


def from_rotating_frame(y, t: float) -> np.ndarray:
    W, Wd = _cplx(np.asarray(y, dtype=float))
    rot = np.exp(1j * t)
    return _flat(rot * W, rot * (Wd + 1j * W))


# ---------------------------------------------------------------------------
# (a,b,u,w) frame


@dataclass(frozen=True)
class AbuwVector:
    a: np.ndarray
    b: np.ndarray
    u: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        arrs = [np.asarray(getattr(self, k), dtype=float).ravel() for k in "abuw"]
        if len({x.size for x in arrs}) != 1:
            raise ValueError("a, b, u, w must have equal length")
        for k, x in zip("abuw", arrs):
            if not np.all(np.isfinite(x)):
                raise ValueError(f"{k} has non-finite entries")
            x.setflags(write=False)
            object.__setattr__(self, k, x)

    @property
    def n(self) -> int:
        return self.a.size

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.b, self.u, self.w])

    @classmethod
    def from_vector(cls, y) -> "AbuwVector":
        y = np.asarray(y, dtype=float).ravel()
        n = y.size // 4
        if 4 * n != y.size:
            raise ValueError("abuw vector length must be a multiple of 4")
        return cls(y[:n], y[n:2 * n], y[2 * n:3 * n], y[3 * n:])


def to_abuw(state, theta0, t: float) -> AbuwVector:
    """q = e^{-i(t+theta0)} r = (a+1) + i b;  p = e^{-i(t+theta0)} rdot = (u-b) + i(a+1+w)."""
    r, rd = _cplx(_as_vector(state))
    th = np.asarray(theta0, dtype=float)
    if th.size != r.size:
        raise ValueError("theta0 length differs from particle count")
    rot = np.exp(-1j * (t + th))
    q, p = rot * r, rot * rd
    a, b = q.real - 1.0, q.imag
    return AbuwVector(a, b, p.real + b, p.imag - q.real)


def from_abuw(v, theta0, t: float) -> np.ndarray:
    if not isinstance(v, AbuwVector):
        v = AbuwVector.from_vector(v)
    th = np.asarray(theta0, dtype=float)
    rot = np.exp(1j * (t + th))
    q = (v.a + 1.0) + 1j * v.b
    p = (v.u - v.b) + 1j * (v.a + 1.0 + v.w)
    return _flat(rot * q, rot * p)


def coupling_matrices(theta0) -> tuple[np.ndarray, np.ndarray]:
    """S, C with entries (1/n) sin / cos(theta0_m - theta0_k) at [k, m]."""
    th = np.asarray(theta0, dtype=float)
    diff = th[None, :] - th[:, None]
    n = th.size
    return np.sin(diff) / n, np.cos(diff) / n


def normalization_angle(theta0) -> float:
    """Smallest |theta*| with sum_k sin(2(theta0_k + theta*)) = 0."""
    th = np.asarray(theta0, dtype=float)
    A = math.fsum(np.sin(2 * th))
    B = math.fsum(np.cos(2 * th))
    if math.hypot(A, B) < 1e-300:
        return 0.0
    # sin(2(th + x)) summed = A cos 2x + B sin 2x = 0  ->  2x = atan2(-A, B) + m pi
    base = 0.5 * math.atan2(-A, B)
    cands = [base + m * math.pi / 2 for m in (-2, -1, 0, 1, 2)]
    return min(cands, key=lambda x: (abs(x), x))


def normalize_ring_angles(theta0) -> np.ndarray:
    th = np.asarray(theta0, dtype=float)
    return th + normalization_angle(th)


def degenerate_angles(n: int) -> np.ndarray:
    if n % 2 or n < 2:
        raise ValueError("degenerate ring states need an even number of particles")
    N = n // 2
    return np.concatenate([np.zeros(N), np.full(N, np.pi)])


# ---------------------------------------------------------------------------
# degenerate basis


def compensated_matmul(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Matrix product with exactly rounded inner sums (math.fsum)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float)
    vec = B.ndim == 1
    B2 = B[:, None] if vec else B
    out = np.empty((A.shape[0], B2.shape[1]))
    Bt = B2.T
    for i in range(A.shape[0]):
        row = A[i]
        nz = np.flatnonzero(row)
        for j in range(Bt.shape[0]):
            out[i, j] = math.fsum(row[nz] * Bt[j, nz])
    return out[:, 0] if vec else out


KAHAN_THRESHOLD = 64


def _mm(A, B, n):
    return compensated_matmul(A, B) if n > KAHAN_THRESHOLD else A @ B


def _helmholtz_basis(N: int) -> np.ndarray:
    """Gram-Schmidt orthonormalization of e_k - e_{k+1}, k = 1..N-1."""
    V = np.zeros((N, N - 1))
    for k in range(N - 1):
        v = np.zeros(N)
        v[k], v[k + 1] = 1.0, -1.0
        for _ in range(2):  # re-orthogonalize once for stability
            for j in range(k):
                v -= (V[:, j] @ v) * V[:, j]
        V[:, k] = v / np.linalg.norm(v)
    return V


@dataclass(frozen=True)
class BasisPack:
    n: int
    V: np.ndarray
    Vbb: np.ndarray
    X: np.ndarray
    T: np.ndarray
    Tbb: np.ndarray
    P: np.ndarray
    Pinv: np.ndarray

    @property
    def N(self) -> int:
        return self.n // 2

    @property
    def C(self) -> np.ndarray:
        """Degenerate coupling matrix (1/n)[X,..,X,-X,..,-X]."""
        return np.outer(self.X, self.X) / self.n

    def invariant_errors(self) -> dict[str, float]:
        n = self.n
        I = np.eye(n - 1)
        return {
            "1tV": float(np.abs(np.ones(self.N) @ self.V).max(initial=0.0)),
            "TV": float(np.abs(_mm(self.Tbb, self.Vbb, n) - I).max()),
            "TX": float(np.abs(_mm(self.Tbb, self.X, n)).max()),
            "CV": float(np.abs(_mm(self.C, self.Vbb, n)).max()),
            "PPinv": float(np.abs(_mm(self.P, self.Pinv, n) - np.eye(4 * n)).max()),
        }

    def to_json(self) -> str:
        d = {"n": self.n}
        for k in ("V", "Vbb", "X", "T", "Tbb", "P", "Pinv"):
            d[k] = getattr(self, k).tolist()
        return json.dumps(d)


@lru_cache(maxsize=32)
def build_basis(n: int) -> BasisPack:
    if not isinstance(n, (int, np.integer)) or n % 2 or n < 4:
        raise ValueError(f"the degenerate basis needs an even n >= 4, got {n!r}")
    n = int(n)
    N = n // 2
    V = _helmholtz_basis(N)
    one = np.ones((N, 1))
    Z = np.zeros((N, N - 1))
    Vbb = np.block([[V, Z, one], [Z, V, one]])
    X = np.concatenate([np.ones(N), -np.ones(N)])
    # V has orthonormal columns orthogonal to 1_N, so the top rows of [V, 1]^{-1} are V^T
    T = V.T.copy()
    ZT = np.zeros((N - 1, N))
    Tbb = np.vstack([np.hstack([T, ZT]), np.hstack([ZT, T]), np.full((1, n), 1.0 / n)])

    O = np.zeros((n, n - 1))
    o = np.zeros((n, 1))
    x = X[:, None]
    P = np.block([
        [O, Vbb, O, O, -x, -x, o, -x],
        [Vbb, O, 0.5 * Vbb, O, o, -x, x, o],
        [O, O, Vbb, O, x, o, x, o],
        [O, O, O, Vbb, o, x, o, x],
    ])
    OT = np.zeros((n - 1, n))
    xt = X[None, :] / n
    zt = np.zeros((1, n))
    Pinv = np.block([
        [OT, Tbb, -0.5 * Tbb, OT],
        [Tbb, OT, OT, OT],
        [OT, OT, Tbb, OT],
        [OT, OT, OT, Tbb],
        [-xt, zt, zt, -xt],
        [xt, -xt, xt, xt],
        [xt, zt, xt, xt],
        [-xt, xt, -xt, zt],
    ])
    arrs = [V, Vbb, X, T, Tbb, P, Pinv]
    for a in arrs:
        a.setflags(write=False)
    return BasisPack(n, *arrs)


@dataclass(frozen=True)
class DegenerateVector:
    Z: np.ndarray
    beta: np.ndarray
    beta_d: np.ndarray
    beta_s: np.ndarray
    gamma1: float = 0.0
    gamma2: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0

    def __post_init__(self):
        m = None
        for k in ("Z", "beta", "beta_d", "beta_s"):
            x = np.asarray(getattr(self, k), dtype=float).ravel()
            if m is None:
                m = x.size
            if x.size != m:
                raise ValueError("Z and beta blocks must have equal length")
            if not np.all(np.isfinite(x)):
                raise ValueError(f"{k} has non-finite entries")
            x.setflags(write=False)
            object.__setattr__(self, k, x)
        if (m + 1) % 2:
            raise ValueError("block length must be n - 1 with n even")
        for k in ("gamma1", "gamma2", "delta1", "delta2"):
            v = float(getattr(self, k))
            if not math.isfinite(v):
                raise ValueError(f"{k} is not finite")
            object.__setattr__(self, k, v)

    @property
    def n(self) -> int:
        return self.Z.size + 1

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.Z, self.beta, self.beta_d, self.beta_s,
                               [self.gamma1, self.gamma2, self.delta1, self.delta2]])

    @property
    def reduced(self) -> np.ndarray:
        """The 4n-2 components without (delta1, delta2)."""
        return self.vector[:-2]

    @classmethod
    def from_vector(cls, y) -> "DegenerateVector":
        y = np.asarray(y, dtype=float).ravel()
        if y.size % 4 == 2:
            y = np.concatenate([y, [0.0, 0.0]])
        if y.size % 4:
            raise ValueError("degenerate vector length must be 4n or 4n-2")
        m = y.size // 4 - 1
        return cls(y[:m], y[m:2 * m], y[2 * m:3 * m], y[3 * m:4 * m], *y[4 * m:])

    @classmethod
    def zeros(cls, n: int) -> "DegenerateVector":
        return cls.from_vector(np.zeros(4 * n))


def to_degenerate(abuw, basis: BasisPack | None = None) -> DegenerateVector:
    y = abuw.vector if isinstance(abuw, AbuwVector) else np.asarray(abuw, dtype=float).ravel()
    n = y.size // 4
    if 4 * n != y.size:
        raise ValueError("abuw vector length must be a multiple of 4")
    basis = basis or build_basis(n)
    if basis.n != n:
        raise ValueError(f"basis is for n={basis.n}, state has n={n}")
    return DegenerateVector.from_vector(_mm(basis.Pinv, y, n))


def from_degenerate(v, basis: BasisPack | None = None) -> AbuwVector:
    if not isinstance(v, DegenerateVector):
        v = DegenerateVector.from_vector(v)
    basis = basis or build_basis(v.n)
    if basis.n != v.n:
        raise ValueError(f"basis is for n={basis.n}, vector has n={v.n}")
    return AbuwVector.from_vector(_mm(basis.P, v.vector, v.n))
