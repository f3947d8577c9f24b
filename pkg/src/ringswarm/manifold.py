"""Scalar functionals near degenerate ring states, the anchor Q_Z and the
constant-input form of the contraction operator, Lyapunov monitors, and the
anchored (nullcline) center-manifold approximation for general systems.

Notation: n = 2N particles, the first N sit at angle 0 and the last N at pi in
the reference degenerate ring.  Z has n-1 entries; Z_U, Z_L are its first and
second blocks of N-1 entries and z_{n-1} the last one.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

from .core import MONITOR_NAMES, SwarmState, nearest_ring_state
from .frames import (AbuwVector, BasisPack, DegenerateVector, build_basis, from_abuw, to_abuw,
                     to_degenerate)
from .integrate import StepOptions, Trajectory, integrate, nonlinear_UW
from .spectral import jacobian_degenerate

__all__ = [
    "DomainError",
    "ZVector",
    "ThetaVector",
    "energy",
    "energy_closed",
    "energy_gradient",
    "project_zero_energy",
    "mean_cos",
    "dispersions",
    "dispersions_from_sines",
    "f1f2",
    "f1f2_residual",
    "anchor_QZ",
    "degenerate_rhs",
    "reduced_rhs",
    "GammaRecord",
    "gamma_on_constant",
    "gamma_quadrature",
    "eta_norm_affine",
    "anchor_defect",
    "ReducedFlow",
    "reduced_flow_approx",
    "lyapunov_decoupled",
    "degenerate_phase",
    "monitor_channels",
    "AnchoredSystem",
    "PsiNewtonError",
    "taylor_system",
    "anchored_psi",
    "PsiCertificate",
    "psi_error_certificate",
]

log = logging.getLogger(__name__)

DOMAIN_BOUND = 0.9


class DomainError(ValueError):
    """Z is outside the region where Theta is defined (max |(VZ)_i| too large)."""

    def __init__(self, message: str, max_sin: float):
        super().__init__(message)
        self.max_sin = max_sin


# ---------------------------------------------------------------------------
# Z and Theta


@dataclass(frozen=True)
class ZVector:
    Z: np.ndarray
    bound: float = DOMAIN_BOUND

    def __post_init__(self):
        z = np.asarray(self.Z, dtype=float).ravel().copy()
        if (z.size + 1) % 2 or z.size < 3:
            raise ValueError(f"Z must have n-1 entries with n even and >= 4, got {z.size}")
        if not np.all(np.isfinite(z)):
            raise ValueError("Z has non-finite entries")
        z.setflags(write=False)
        object.__setattr__(self, "Z", z)
        m = float(np.max(np.abs(self.sines)))
        if m > self.bound:
            raise DomainError(f"max |sin theta_i| = {m:.4g} exceeds the domain bound {self.bound}", m)

    @property
    def n(self) -> int:
        return self.Z.size + 1

    @property
    def N(self) -> int:
        return self.n // 2

    @property
    def basis(self) -> BasisPack:
        return build_basis(self.n)

    @property
    def Z_U(self) -> np.ndarray:
        return self.Z[:self.N - 1]

    @property
    def Z_L(self) -> np.ndarray:
        return self.Z[self.N - 1:2 * self.N - 2]

    @property
    def zlast(self) -> float:
        return float(self.Z[-1])

    @property
    def norm(self) -> float:
        """|Z|, the l1 norm."""
        return float(np.abs(self.Z).sum())

    @property
    def norm_r(self) -> float:
        """|Z|_r = |Z_U| + |Z_L| (l1, last entry excluded)."""
        return float(np.abs(self.Z[:-1]).sum())

    @property
    def sines(self) -> np.ndarray:
        return self.basis.Vbb @ self.Z

    @property
    def theta(self) -> "ThetaVector":
        return ThetaVector.from_Z(self)


@dataclass(frozen=True)
class ThetaVector:
    theta: np.ndarray

    @classmethod
    def from_Z(cls, Z: ZVector) -> "ThetaVector":
        return cls(np.arcsin(Z.sines))

    @property
    def sin(self) -> np.ndarray:
        return np.sin(self.theta)

    @property
    def cos(self) -> np.ndarray:
        return np.cos(self.theta)

    @property
    def sin2(self) -> np.ndarray:
        return np.sin(2 * self.theta)

    @property
    def sin_sq(self) -> np.ndarray:
        return np.sin(self.theta) ** 2

    @property
    def U(self) -> np.ndarray:
        return self.theta[:self.theta.size // 2]

    @property
    def L(self) -> np.ndarray:
        return self.theta[self.theta.size // 2:]


def _zv(Z) -> ZVector:
    return Z if isinstance(Z, ZVector) else ZVector(Z)


# ---------------------------------------------------------------------------
# scalar functionals


def energy(Z) -> tuple[float, np.ndarray]:
    """(E, alpha) from cos(Theta) - 1 = V alpha + E X, solved in the {V, X} basis."""
    Z = _zv(Z)
    b = Z.basis
    M = np.column_stack([b.Vbb, b.X])
    sol = np.linalg.solve(M, Z.theta.cos - 1.0)
    return float(sol[-1]), sol[:-1]


def energy_closed(Z) -> float:
    """E = (1/n) X^T cos(Theta)."""
    Z = _zv(Z)
    return math.fsum(Z.basis.X * Z.theta.cos) / Z.n


def mean_cos(Z) -> float:
    """A(Z) = (1/n) sum cos(theta_k)."""
    Z = _zv(Z)
    return math.fsum(Z.theta.cos) / Z.n


def energy_gradient(Z) -> np.ndarray:
    """Gradient of E with respect to Z: -(1/n) V^T (X * tan Theta)."""
    Z = _zv(Z)
    th = Z.theta
    return -(Z.basis.Vbb.T @ (Z.basis.X * th.sin / th.cos)) / Z.n


def project_zero_energy(Z, tol: float = 1e-15, max_iter: int = 50) -> ZVector:
    """Move Z along grad E until E(Z) = 0 (Newton in one dimension)."""
    Z = _zv(Z)
    z = Z.Z.copy()
    for _ in range(max_iter):
        cur = ZVector(z, Z.bound)
        e = energy_closed(cur)
        if abs(e) <= tol:
            return cur
        g = energy_gradient(cur)
        gg = float(g @ g)
        if gg == 0.0:
            break
        z = z - e / gg * g
    cur = ZVector(z, Z.bound)
    if abs(energy_closed(cur)) > 1e3 * tol:
        raise RuntimeError(f"zero-energy projection stalled at E = {energy_closed(cur):.3e}")
    return cur


def dispersions(Z) -> tuple[float, float]:
    """(D_U, D_L) = (1/N)|V Z_U|^2, (1/N)|V Z_L|^2."""
    Z = _zv(Z)
    V = Z.basis.V
    a, b = V @ Z.Z_U, V @ Z.Z_L
    return math.fsum(a * a) / Z.N, math.fsum(b * b) / Z.N


def dispersions_from_sines(sines: np.ndarray) -> tuple[float, float, float]:
    """(D_U, D_L, z_{n-1}) as the within-group variances of sin(theta)."""
    s = np.asarray(sines, dtype=float)
    N = s.size // 2
    zl = math.fsum(s) / s.size
    du = math.fsum((s[:N] - zl) ** 2) / N
    dl = math.fsum((s[N:] - zl) ** 2) / N
    return du, dl, zl


def _f1f2_coeffs(Z: ZVector):
    th = Z.theta
    n = Z.n
    s2 = math.fsum(th.sin2) / n
    q = 2 * math.fsum(th.sin_sq) / n
    c2 = math.fsum(th.cos ** 2) / n
    return s2, q, c2


def f1f2(Z) -> tuple[float, float]:
    """The scalars f1, f2 solving the defining 2x2 linear system."""
    Z = _zv(Z)
    s2, q, c2 = _f1f2_coeffs(Z)
    # -(1+f1) s2 - (2+f2) q = f1 ;  2(1+f1) c2 + (2+f2) s2 = 2 + f2
    M = np.array([[1 + s2, q], [2 * c2, s2 - 1]])
    rhs = np.array([-s2 - 2 * q, 2 - 2 * c2 - 2 * s2])
    if abs(np.linalg.det(M)) < 1e-8:
        raise np.linalg.LinAlgError("the f1, f2 system is singular; Z is too large")
    f1, f2 = np.linalg.solve(M, rhs)
    return float(f1), float(f2)


def f1f2_residual(Z, f1: float, f2: float) -> float:
    Z = _zv(Z)
    s2, q, c2 = _f1f2_coeffs(Z)
    r1 = -(1 + f1) * s2 - (2 + f2) * q - f1
    r2 = 2 * (1 + f1) * c2 + (2 + f2) * s2 - (2 + f2)
    return max(abs(r1), abs(r2))


def anchor_QZ(Z) -> DegenerateVector:
    """Q_Z = [Z, alpha, 0, 0, E f1, E (2 - f1 + f2)] with delta = 0."""
    Z = _zv(Z)
    E, alpha = energy(Z)
    f1, f2 = f1f2(Z)
    o = np.zeros(Z.n - 1)
    return DegenerateVector(Z.Z, alpha, o, o, E * f1, E * (2 - f1 + f2), 0.0, 0.0)


# ---------------------------------------------------------------------------
# the system in degenerate coordinates


def _UW(v: DegenerateVector, basis: BasisPack) -> tuple[np.ndarray, np.ndarray]:
    return nonlinear_UW(basis.P @ v.vector)


def degenerate_rhs(y) -> np.ndarray:
    """Full 4n right-hand side in (Z, beta, beta_d, beta_s, gamma, delta) coordinates."""
    v = y if isinstance(y, DegenerateVector) else DegenerateVector.from_vector(y)
    if np.asarray(y if not isinstance(y, DegenerateVector) else v.vector).size % 4:
        raise ValueError("degenerate_rhs needs the full 4n vector; use reduced_rhs for 4n-2")
    n = v.n
    b = build_basis(n)
    U, W = _UW(v, b)
    TU, TW = b.Tbb @ U, b.Tbb @ W
    xu, xw = b.X @ U / n, b.X @ W / n
    _, J_top = jacobian_degenerate(n)
    top = J_top @ np.concatenate([v.beta, v.beta_d, v.beta_s])
    m = n - 1
    top[m:2 * m] += TU
    top[2 * m:] += TW
    g1, g2, d1, d2 = v.gamma1, v.gamma2, v.delta1, v.delta2
    return np.concatenate([-0.5 * TU, top,
                           [-g1 + g2 - xw, -g2 + xu + xw, d2 + xu + xw, -d1 - xu]])


def reduced_rhs(y) -> np.ndarray:
    """The 4n-2 reduced right-hand side; independent of (delta1, delta2)."""
    y = y.reduced if isinstance(y, DegenerateVector) else np.asarray(y, dtype=float).ravel()
    if y.size % 4 != 2:
        raise ValueError("reduced_rhs needs the 4n-2 vector")
    return degenerate_rhs(np.concatenate([y, [0.0, 0.0]]))[:-2]


@dataclass(frozen=True)
class GammaRecord:
    """Affine-in-t output of Gamma_Z on a constant: constant + t * linear (4n-2 entries)."""

    constant: np.ndarray
    linear: np.ndarray

    def at(self, t: float) -> np.ndarray:
        return self.constant + t * self.linear


def gamma_on_constant(Z, y) -> GammaRecord:
    """Closed form of Gamma_Z applied to the constant function y."""
    Z = _zv(Z)
    v = y if isinstance(y, DegenerateVector) else DegenerateVector.from_vector(y)
    n = Z.n
    if v.n != n:
        raise ValueError("Z and y dimensions differ")
    b = build_basis(n)
    U, W = _UW(v, b)
    TU, TW = b.Tbb @ U, b.Tbb @ W
    o = np.zeros(n - 1)
    const = np.concatenate([Z.Z, 0.5 * (TU + TW), o, -0.5 * TU, [b.X @ U / n, b.X @ (U + W) / n]])
    lin = np.concatenate([-0.5 * TU, o, o, o, [0.0, 0.0]])
    return GammaRecord(const, lin)


def gamma_quadrature(Z, y, t: float, epsabs: float = 1e-13) -> np.ndarray:
    """Gamma_Z(y)(t) for constant y by adaptive quadrature of the integral form."""
    Z = _zv(Z)
    v = y if isinstance(y, DegenerateVector) else DegenerateVector.from_vector(y)
    n = Z.n
    b = build_basis(n)
    U, W = _UW(v, b)
    TU, TW = b.Tbb @ U, b.Tbb @ W
    _, J_top = jacobian_degenerate(n)
    G = np.array([[-1.0, 1.0], [0.0, -1.0]])
    src_top = np.concatenate([np.zeros(n - 1), TU, TW])
    src_g = np.array([-(b.X @ W) / n, b.X @ (U + W) / n])
    # int_{-inf}^t e^{A(t-tau)} c dtau = int_0^inf e^{A s} c ds
    top, _ = quad_vec(lambda s: expm(J_top * s) @ src_top, 0, np.inf, epsabs=epsabs, epsrel=1e-12)
    gam, _ = quad_vec(lambda s: expm(G * s) @ src_g, 0, np.inf, epsabs=epsabs, epsrel=1e-12)
    zpart, _ = quad_vec(lambda s: -0.5 * TU, 0, t, epsabs=epsabs) if t != 0 else (np.zeros(n - 1), 0)
    return np.concatenate([Z.Z + zpart, top, gam])


def eta_norm_affine(c: np.ndarray, l: np.ndarray, eta: float) -> float:
    """sup_t |c + t l| exp(-eta |t|) with the Euclidean norm."""
    c = np.asarray(c, dtype=float)
    l = np.asarray(l, dtype=float)
    best = float(np.linalg.norm(c))
    if not np.any(l):
        return best
    span = 4.0 / eta + 2 * float(np.linalg.norm(c)) / max(float(np.linalg.norm(l)), 1e-300)
    for lo, hi in ((0.0, span), (-span, 0.0)):
        r = minimize_scalar(lambda t: -np.linalg.norm(c + t * l) * math.exp(-eta * abs(t)),
                            bounds=(lo, hi), method="bounded", options={"xatol": 1e-10 * span})
        best = max(best, -float(r.fun))
    return best


def anchor_defect(Z, eta: float | None = None) -> float:
    """||Gamma_Z(Q_Z) - Q_Z||_eta with eta half the degenerate spectral gap."""
    Z = _zv(Z)
    if eta is None:
        from .spectral import degenerate_report

        eta = 0.5 * degenerate_report(Z.n).spectral_gap
    Q = anchor_QZ(Z)
    g = gamma_on_constant(Z, Q)
    return eta_norm_affine(g.constant - Q.reduced, g.linear, eta)


@dataclass(frozen=True)
class ReducedFlow:
    dZ: np.ndarray
    dgamma: np.ndarray
    error_scale: float
    gamma_scale: float


def reduced_flow_approx(Z) -> ReducedFlow:
    """Leading terms of the flow on the center manifold, with the sizes of the
    neglected remainders (E |Z|_r |Z| for dZ, E |Z|_r for dgamma)."""
    Z = _zv(Z)
    E = energy_closed(Z)
    A = mean_cos(Z)
    dZ = E * A * np.concatenate([Z.Z_U, -Z.Z_L, [0.0]])
    return ReducedFlow(dZ, np.zeros(2), abs(E) * Z.norm_r * Z.norm, abs(E) * Z.norm_r)


# ---------------------------------------------------------------------------
# Lyapunov function of the decoupled system


def lyapunov_decoupled(state4) -> tuple[float, float, str]:
    """(L, Ldot, region) with L = |r|^2 + |rdot|^2 - log((vx - uy)^2)."""
    x, y, u, v = (float(t) for t in np.asarray(state4, dtype=float).ravel()[:4])
    cross = v * x - u * y
    Ldot = -2.0 * (1.0 - u * u - v * v) ** 2
    if cross == 0.0:
        return math.inf, Ldot, "boundary"
    L = x * x + y * y + u * u + v * v - math.log(cross * cross)
    return L, Ldot, "Omega+" if cross > 0 else "Omega-"


# ---------------------------------------------------------------------------
# monitors


def degenerate_phase(theta0, tol: float = 1e-9) -> float | None:
    """phi if theta0 = (phi,..,phi, phi+pi,..,phi+pi) up to 2 pi, else None."""
    th = np.asarray(theta0, dtype=float)
    n = th.size
    if n % 2 or n < 4:
        return None
    N = n // 2
    phi = float(th[0])
    ref = np.concatenate([np.full(N, phi), np.full(N, phi + math.pi)])
    d = np.angle(np.exp(1j * (th - ref)))
    return phi if np.max(np.abs(d)) < tol else None


_DEG_CHANNELS = ("E", "DL", "DU", "zlast", "sqrtDL_plus", "sqrtDL_minus", "A")
_SYSTEM_CHANNELS = {
    "swarm": _DEG_CHANNELS + ("ring_dist",),
    "abuw": _DEG_CHANNELS + ("ring_dist",),
    "decoupled": ("L",),
}


def _degenerate_values(dv: DegenerateVector, bound: float) -> dict[str, float]:
    Z = ZVector(dv.Z, bound)
    du, dl = dispersions(Z)
    sq = math.sqrt(dl)
    return {"E": energy_closed(Z), "DL": dl, "DU": du, "zlast": Z.zlast,
            "sqrtDL_plus": sq + Z.zlast, "sqrtDL_minus": sq - Z.zlast, "A": mean_cos(Z)}


def monitor_channels(traj: Trajectory, theta0=None, system: str = "swarm",
                     channels: Sequence[str] | None = None, bound: float = DOMAIN_BOUND) -> Trajectory:
    """Attach monitor channels to a trajectory of the swarm, abuw or decoupled system.

    Degenerate channels (E, DL, DU, zlast, sqrtDL_plus, sqrtDL_minus, A) need
    theta0 to be a degenerate ring (phi,..,phi, phi+pi,..,phi+pi).  Samples outside
    the Theta domain give NaN with a warning.
    """
    if system not in _SYSTEM_CHANNELS:
        raise ValueError(f"monitors are defined for systems {sorted(_SYSTEM_CHANNELS)}, not {system!r}")
    allowed = _SYSTEM_CHANNELS[system]
    channels = tuple(allowed if channels is None else channels)
    for ch in channels:
        if ch not in MONITOR_NAMES:
            raise ValueError(f"unknown monitor channel {ch!r}; expected one of {MONITOR_NAMES}")
        if ch not in allowed:
            raise ValueError(f"channel {ch!r} is not available for a {system} trajectory "
                             f"(available: {', '.join(allowed)})")
    deg = [c for c in channels if c in _DEG_CHANNELS]
    if deg:
        if theta0 is None or degenerate_phase(theta0) is None:
            raise ValueError(f"channels {deg} need degenerate reference angles "
                             "(phi,..,phi, phi+pi,..,phi+pi) with an even particle count")
        theta0 = np.asarray(theta0, dtype=float)
    out = {c: np.full(len(traj), np.nan) for c in channels}
    bad = 0
    for i, (t, y) in enumerate(zip(traj.times, traj.states)):
        if system == "decoupled":
            out["L"][i] = lyapunov_decoupled(y)[0]
            continue
        if deg:
            ab = to_abuw(y, theta0, t) if system == "swarm" else AbuwVector.from_vector(y)
            try:
                vals = _degenerate_values(to_degenerate(ab), bound)
            except DomainError:
                bad += 1
                vals = {}
            for c in deg:
                out[c][i] = vals.get(c, np.nan)
        if "ring_dist" in channels:
            sw = y if system == "swarm" else from_abuw(y, theta0, t)
            out["ring_dist"][i] = nearest_ring_state(SwarmState.from_vector(sw))[1]
    if bad:
        warnings.warn(f"{bad} samples left the Theta domain (max |sin theta| > {bound}); "
                      "their degenerate channels are NaN", RuntimeWarning, stacklevel=2)
    return traj.with_channels(out)


# ---------------------------------------------------------------------------
# anchored approximation for general systems


@dataclass
class AnchoredSystem:
    """x' = A_s x + f(x, y),  y' = B y + g(x, y) with A_s stable and nonsingular."""

    A_s: np.ndarray
    B: np.ndarray
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    g: Callable[[np.ndarray, np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray] | None = None
    dist_to_E: Callable[[np.ndarray], float] | None = None
    equilibria: Callable[[float], np.ndarray] | None = None
    name: str = "anchored"

    def __post_init__(self):
        self.A_s = np.atleast_2d(np.asarray(self.A_s, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if np.any(np.linalg.eigvals(self.A_s).real >= 0):
            raise ValueError("A_s must have eigenvalues with negative real part")
        s, c = self.s, self.c
        if np.linalg.norm(self.f(np.zeros(s), np.zeros(c))) or np.linalg.norm(self.g(np.zeros(s), np.zeros(c))):
            raise ValueError("f and g must vanish at the origin")

    @property
    def s(self) -> int:
        return self.A_s.shape[0]

    @property
    def c(self) -> int:
        return self.B.shape[0]

    def rhs(self, t: float, w: np.ndarray) -> np.ndarray:
        x, y = w[:self.s], w[self.s:]
        return np.concatenate([self.A_s @ x + self.f(x, y), self.B @ y + self.g(x, y)])


def taylor_system() -> AnchoredSystem:
    """Stable variable z, center variables (x, y); equilibria (s, s sin s, s sin s)."""

    def f(zs, yc):
        x, y = yc
        return np.array([x * (y - x * math.sin(x)) * (math.sin(x) + x * math.cos(x)) + x * math.sin(x)])

    def g(zs, yc):
        x, y = yc
        return np.array([x * (y - x * math.sin(x)), -y * y * (y - zs[0])])

    def h(yc):
        return np.array([yc[0] * math.sin(yc[0])])

    def dist(yc):
        x, y = (float(v) for v in yc)
        d2 = lambda s: (s - x) ** 2 + (s * math.sin(s) - y) ** 2
        r = max(abs(x), abs(y), 1e-3) + 1.0
        grid = np.linspace(x - r, x + r, 401)
        s0 = grid[np.argmin([d2(s) for s in grid])]
        step = 2 * r / 400
        res = minimize_scalar(d2, bounds=(s0 - step, s0 + step), method="bounded",
                              options={"xatol": 1e-14})
        return math.sqrt(min(res.fun, d2(s0)))

    def equilibria(s):
        return np.array([s, s * math.sin(s)])

    return AnchoredSystem(np.array([[-1.0]]), np.zeros((2, 2)), f, g, h, dist, equilibria, "taylor")


class PsiNewtonError(RuntimeError):
    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = residuals


def anchored_psi(sys: AnchoredSystem, y, tol: float = 1e-12, max_iter: int = 50) -> np.ndarray:
    """Solve A_s Psi + f(Psi, y) = 0 by Newton from Psi0 = -A_s^{-1} f(0, y)."""
    y = np.asarray(y, dtype=float).ravel()
    A = sys.A_s
    F = lambda x: A @ x + sys.f(x, y)
    x = -np.linalg.solve(A, sys.f(np.zeros(sys.s), y))
    hist = []
    for _ in range(max_iter):
        r = F(x)
        hist.append(float(np.linalg.norm(r, np.inf)))
        if hist[-1] <= tol:
            return x
        J = np.empty((sys.s, sys.s))
        for j in range(sys.s):
            h = 1e-7 * max(1.0, abs(x[j]))
            e = np.zeros(sys.s)
            e[j] = h
            J[:, j] = (F(x + e) - F(x - e)) / (2 * h)
        x = x - np.linalg.solve(J, r)
        if not np.all(np.isfinite(x)) or (len(hist) > 3 and hist[-1] > 1e3 * hist[0] > 0):
            break
    raise PsiNewtonError(f"Newton for Psi did not converge (residual {hist[-1]:.3e})", hist)


@dataclass
class PsiCertificate:
    max_ratio: float
    ratios: np.ndarray
    samples: np.ndarray
    errors: np.ndarray
    excluded: int
    estimated: bool
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"max_ratio": self.max_ratio, "n_samples": int(len(self.samples)),
                "excluded": self.excluded, "h_estimated": self.estimated,
                "max_error": float(np.max(self.errors)) if len(self.errors) else 0.0,
                "notes": self.notes}


def _h_estimate(sys: AnchoredSystem, y: np.ndarray, T: float) -> tuple[np.ndarray, np.ndarray]:
    w0 = np.concatenate([anchored_psi(sys, y), y])
    tr = integrate(sys.rhs, w0, T, StepOptions(abs_tol=1e-12, rel_tol=1e-12))
    w = tr.final
    return w[:sys.s], w[sys.s:]


def psi_error_certificate(sys: AnchoredSystem, samples, T: float = 50.0,
                          dist_floor: float = 1e-12) -> PsiCertificate:
    """max over samples of |h(y) - Psi(y)| / (||y|| dist(y, E)).

    Without an analytic h, each sample is flowed for time T from (Psi(y), y);
    the stable component x(T) then stands in for h(y(T)) at the sample y(T).
    """
    if sys.dist_to_E is None:
        raise ValueError("the certificate needs dist_to_E")
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    notes = []
    estimated = sys.h is None
    if estimated:
        notes.append(f"h estimated by integrating for T={T}; not ground truth")
    ratios, errs, used = [], [], []
    excluded = 0
    for y in samples:
        if estimated:
            hv, y = _h_estimate(sys, y, T)
        else:
            hv = sys.h(y)
        d = sys.dist_to_E(y)
        ny = float(np.linalg.norm(y))
        err = float(np.linalg.norm(hv - anchored_psi(sys, y)))
        if d <= dist_floor or ny == 0.0:
            excluded += 1
            continue
        ratios.append(err / (ny * d))
        errs.append(err)
        used.append(y)
    if excluded:
        notes.append(f"{excluded} samples on (or within {dist_floor:g} of) E excluded")
    r = np.array(ratios)
    return PsiCertificate(float(r.max()) if r.size else 0.0, r, np.array(used), np.array(errs),
                          excluded, estimated, notes)
