"""Domain types, scenario configuration and ring-state construction.

A ring state of the swarm is r_k(t) = c + e^{i eps t} e^{i theta_k} with the
zero-sum constraint sum_k e^{i theta_k} = 0.  Positions and velocities are
stored as (n, 2) float arrays; the flat state vector layout used by the
integrator is [x_1..x_n, y_1..y_n, vx_1..vx_n, vy_1..vy_n].
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from typing import Any, Sequence

import numpy as np

__all__ = [
    "TOL_RING",
    "SYSTEMS",
    "MONITOR_NAMES",
    "SwarmState",
    "RingSpec",
    "Scenario",
    "ScenarioError",
    "RingConstraintError",
    "ProjectionError",
    "RingFitError",
    "ring_residual",
    "make_ring_state",
    "project_ring_angles",
    "nearest_ring_state",
    "ring_deviation",
    "fig4_scenario",
]

TOL_RING = 1e-12

SYSTEMS = ("swarm", "decoupled", "rose_eps", "rose_singular", "taylor_example")
MONITOR_NAMES = ("E", "DL", "DU", "zlast", "sqrtDL_plus", "sqrtDL_minus", "A", "ring_dist", "L")


class RingConstraintError(ValueError):
    """Angles violate sum_k exp(i theta_k) = 0 beyond tolerance."""


class ProjectionError(RuntimeError):
    def __init__(self, message: str, best: np.ndarray, residual: float):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.best = best
        self.residual = residual


class RingFitError(RuntimeError):
    def __init__(self, message: str, best: "RingSpec | None", residual: float):
        super().__init__(f"{message} (best residual {residual:.3e})")
        self.best = best
        self.residual = residual


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SwarmState:
    """Positions and velocities of n planar particles."""

    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        v = np.asarray(self.velocities, dtype=float)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 1:
            raise ValueError(f"positions must have shape (n, 2), got {p.shape}")
        if v.shape != p.shape:
            raise ValueError(f"velocities shape {v.shape} does not match positions {p.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(v))):
            raise ValueError("state contains non-finite entries")
        object.__setattr__(self, "positions", _frozen(p))
        object.__setattr__(self, "velocities", _frozen(v))

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def center_of_mass(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    @property
    def r(self) -> np.ndarray:
        """Positions as complex numbers."""
        return self.positions[:, 0] + 1j * self.positions[:, 1]

    @property
    def rdot(self) -> np.ndarray:
        return self.velocities[:, 0] + 1j * self.velocities[:, 1]

    def to_vector(self) -> np.ndarray:
        p, v = self.positions, self.velocities
        return np.concatenate([p[:, 0], p[:, 1], v[:, 0], v[:, 1]])

    @classmethod
    def from_vector(cls, y: Sequence[float]) -> "SwarmState":
        y = np.asarray(y, dtype=float)
        if y.ndim != 1 or y.size % 4:
            raise ValueError("swarm vector length must be a multiple of 4")
        n = y.size // 4
        return cls(np.column_stack([y[:n], y[n:2 * n]]), np.column_stack([y[2 * n:3 * n], y[3 * n:]]))

    @classmethod
    def from_complex(cls, r: np.ndarray, rdot: np.ndarray) -> "SwarmState":
        r = np.asarray(r, dtype=complex)
        rdot = np.asarray(rdot, dtype=complex)
        return cls(np.column_stack([r.real, r.imag]), np.column_stack([rdot.real, rdot.imag]))


def ring_residual(angles: Sequence[float]) -> float:
    """|sum_k exp(i theta_k)|."""
    th = np.asarray(angles, dtype=float)
    return float(math.hypot(math.fsum(np.cos(th)), math.fsum(np.sin(th))))


@dataclass(frozen=True)
class RingSpec:
    """Ring-state parameters: angles theta_k, center c and spin eps = +-1.

    The zero-sum constraint is checked where a RingSpec is used (see
    make_ring_state); ``residual`` reports it.
    """

    angles: np.ndarray
    center: np.ndarray = field(default_factory=lambda: np.zeros(2))
    spin: int = 1

    def __post_init__(self):
        a = np.asarray(self.angles, dtype=float).ravel()
        c = np.asarray(self.center, dtype=float).ravel()
        if a.size < 1 or not np.all(np.isfinite(a)):
            raise ValueError("angles must be a non-empty finite vector")
        if c.shape != (2,) or not np.all(np.isfinite(c)):
            raise ValueError("center must be a finite pair")
        if self.spin not in (1, -1):
            raise ValueError(f"spin must be +1 or -1, got {self.spin!r}")
        object.__setattr__(self, "angles", _frozen(a))
        object.__setattr__(self, "center", _frozen(c))
        object.__setattr__(self, "spin", int(self.spin))

    @property
    def n(self) -> int:
        return self.angles.size

    @property
    def residual(self) -> float:
        return ring_residual(self.angles)

    @classmethod
    def from_raw(cls, raw_angles, center=(0.0, 0.0), spin: int = 1) -> "RingSpec":
        return cls(project_ring_angles(raw_angles), np.asarray(center, float), spin)


def make_ring_state(spec: RingSpec, t: float = 0.0, tol: float = TOL_RING) -> SwarmState:
    """r_k = c + e^{i eps t} e^{i theta_k},  rdot_k = i eps e^{i eps t} e^{i theta_k}."""
    res = spec.residual
    if res > tol:
        raise RingConstraintError(f"|sum exp(i theta)| = {res:.3e} exceeds tolerance {tol:.1e}")
    ph = np.exp(1j * (spec.spin * t + spec.angles))
    c = spec.center[0] + 1j * spec.center[1]
    return SwarmState.from_complex(c + ph, 1j * spec.spin * ph)


def project_ring_angles(raw_angles, tol: float = TOL_RING, max_iter: int = 100) -> np.ndarray:
    """Move angles onto sum_k exp(i theta_k) = 0 by minimal-norm Newton steps."""
    th = np.array(raw_angles, dtype=float).ravel()
    if th.size < 2:
        raise ValueError("need at least two angles")
    if not np.all(np.isfinite(th)):
        raise ValueError("angles must be finite")

    def g(x):
        return np.array([np.cos(x).sum(), np.sin(x).sum()])

    r = g(th)
    res = float(np.hypot(*r))
    if ring_residual(th) <= tol:
        return th
    best, best_res = th.copy(), res
    for _ in range(max_iter):
        G = np.vstack([-np.sin(th), np.cos(th)])
        step = np.linalg.lstsq(G, -r, rcond=None)[0]
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) == 0.0:
            break
        lam = 1.0
        while lam > 1e-6:
            trial = th + lam * step
            r_trial = g(trial)
            res_trial = float(np.hypot(*r_trial))
            if res_trial < res:
                break
            lam *= 0.5
        else:
            break
        th, r, res = trial, r_trial, res_trial
        if res < best_res:
            best, best_res = th.copy(), res
        if ring_residual(th) <= tol:
            return th
    raise ProjectionError("ring-angle projection did not converge", best, best_res)


def ring_deviation(state: SwarmState, spec: RingSpec) -> float:
    """Max over particles of the planar distance of position and of velocity
    from the ring state of ``spec`` at phase zero."""
    ref = make_ring_state(spec, 0.0, tol=np.inf)
    dp = np.hypot(*(state.positions - ref.positions).T)
    dv = np.hypot(*(state.velocities - ref.velocities).T)
    return float(max(dp.max(), dv.max()))


def _fit_ring(state: SwarmState, theta0: np.ndarray, c0: np.ndarray, spin: int,
              max_iter: int = 200) -> tuple[np.ndarray, np.ndarray, float, bool]:
    """Constrained Levenberg-Marquardt for angles and center."""
    n = state.n
    r, rd = state.r, state.rdot

    def residual(th, c):
        e = np.exp(1j * th)
        rp = r - (c[0] + 1j * c[1]) - e
        rv = rd - 1j * spin * e
        return np.concatenate([rp.real, rp.imag, rv.real, rv.imag])

    idx = np.arange(n)

    def jac(th):
        # d/dtheta of -e^{i th} is -i e^{i th}; of -i s e^{i th} is s e^{i th}
        e = np.exp(1j * th)
        J = np.zeros((4 * n, n + 2))
        J[idx, idx] = np.sin(th)
        J[n + idx, idx] = -np.cos(th)
        J[2 * n + idx, idx] = spin * e.real
        J[3 * n + idx, idx] = spin * e.imag
        J[idx, n] = -1.0
        J[n + idx, n + 1] = -1.0
        return J

    th = project_ring_angles(theta0)
    c = np.array(c0, dtype=float)
    res = residual(th, c)
    cost = 0.5 * res @ res
    mu = 1e-3
    converged = False
    for _ in range(max_iter):
        J = jac(th)
        G = np.zeros((2, n + 2))
        G[0, :n] = -np.sin(th)
        G[1, :n] = np.cos(th)
        gval = np.array([np.cos(th).sum(), np.sin(th).sum()])
        JtJ = J.T @ J
        rhs_top = -J.T @ res
        improved = False
        while mu < 1e12:
            K = np.zeros((n + 4, n + 4))
            K[:n + 2, :n + 2] = JtJ + mu * np.eye(n + 2)
            K[:n + 2, n + 2:] = G.T
            K[n + 2:, :n + 2] = G
            sol = np.linalg.lstsq(K, np.concatenate([rhs_top, -gval]), rcond=None)[0]
            step = sol[:n + 2]
            try:
                th_new = project_ring_angles(th + step[:n])
            except ProjectionError:
                mu *= 10.0
                continue
            c_new = c + step[n:]
            res_new = residual(th_new, c_new)
            cost_new = 0.5 * res_new @ res_new
            if cost_new <= cost:
                small = cost - cost_new <= 1e-15 * max(cost, 1e-300) or np.linalg.norm(step) < 1e-13
                th, c, res = th_new, c_new, res_new
                cost = cost_new
                mu = max(mu / 3.0, 1e-12)
                improved = True
                if small:
                    converged = True
                break
            mu *= 10.0
        if not improved:
            # no descent direction left: a (local) least-squares optimum
            converged = True
        if converged or cost < 1e-30:
            converged = True
            break
    return th, c, cost, converged


def nearest_ring_state(state: SwarmState, max_iter: int = 200) -> tuple[RingSpec, float]:
    """Closest ring state (angles, center, spin; phase absorbed in the angles).

    Fits the least-squares optimum of the position and velocity residuals and
    reports the max-norm deviation at that optimum.
    """
    n = state.n
    if n < 2:
        raise ValueError("a ring state needs at least two particles")
    c0 = state.center_of_mass
    rel = state.r - (c0[0] + 1j * c0[1])
    seeds = []
    if np.all(np.abs(rel) > 1e-8):
        seeds.append(np.angle(rel))
    seeds.append(2 * np.pi * np.arange(n) / n)
    best: tuple[float, RingSpec | None, float] = (np.inf, None, np.inf)
    any_converged = False
    for spin in (1, -1):
        for seed in seeds:
            try:
                th, c, cost, ok = _fit_ring(state, seed, c0, spin, max_iter)
            except ProjectionError:
                continue
            any_converged |= ok
            spec = RingSpec(np.mod(th, 2 * np.pi), c, spin)
            d = ring_deviation(state, spec)
            if d < best[0]:
                best = (d, spec, cost)
    if best[1] is None or not any_converged:
        raise RingFitError("nearest ring-state fit did not converge", best[1], best[2])
    return best[1], best[0]


# ---------------------------------------------------------------------------
# Scenario


class ScenarioError(ValueError):
    """Malformed scenario document; carries the offending field and line."""

    def __init__(self, message: str, field_name: str | None = None, line: int | None = None):
        loc = []
        if field_name:
            loc.append(f"field '{field_name}'")
        if line:
            loc.append(f"line {line}")
        super().__init__(f"{', '.join(loc)}: {message}" if loc else message)
        self.field_name = field_name
        self.line = line


@dataclass(frozen=True)
class Scenario:
    """A runnable experiment.

    ``system`` selects the vector field.  For the swarm either ``positions`` and
    ``velocities`` are given, or ``angles`` (with ``center``/``spin``) define a
    ring state which is perturbed by ``perturbation`` (uniform, seeded).
    Low-dimensional systems take their start point from ``initial``.
    """

    system: str
    t_end: float
    n: int | None = None
    positions: tuple | None = None
    velocities: tuple | None = None
    angles: tuple | None = None
    center: tuple = (0.0, 0.0)
    spin: int = 1
    dt_init: float | None = None
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    monitors: tuple = ()
    seed: int = 0
    initial: tuple | None = None
    perturbation: float = 0.0
    epsilon: float | None = None
    sample_dt: float | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.system not in SYSTEMS:
            raise ScenarioError(f"unknown system {self.system!r}; expected one of {SYSTEMS}", "system")
        for name in ("t_end", "abs_tol", "rel_tol"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v <= 0:
                raise ScenarioError(f"must be a positive number, got {v!r}", name)
        if self.dt_init is not None and not (self.dt_init > 0):
            raise ScenarioError("must be positive", "dt_init")
        if self.sample_dt is not None and not (self.sample_dt > 0):
            raise ScenarioError("must be positive", "sample_dt")
        if self.spin not in (1, -1):
            raise ScenarioError("must be +1 or -1", "spin")
        for m in self.monitors:
            if m not in MONITOR_NAMES:
                raise ScenarioError(f"unknown monitor {m!r}; expected names from {MONITOR_NAMES}", "monitors")
        if self.system == "swarm":
            if self.positions is not None or self.velocities is not None:
                if self.positions is None or self.velocities is None:
                    raise ScenarioError("positions and velocities must be given together", "positions")
                n = len(self.positions)
                if len(self.velocities) != n or any(len(p) != 2 for p in self.positions) \
                        or any(len(v) != 2 for v in self.velocities):
                    raise ScenarioError("expected n pairs of reals", "velocities")
            elif self.angles is None:
                raise ScenarioError("swarm needs positions/velocities or angles", "angles")
            else:
                n = len(self.angles)
            if self.n is not None and self.n != n:
                raise ScenarioError(f"n={self.n} but state has {n} particles", "n")
            if len(self.center) != 2:
                raise ScenarioError("expected a pair", "center")
        else:
            dims = {"decoupled": 4, "rose_eps": 2, "rose_singular": 2, "taylor_example": 3}
            if self.initial is None or len(self.initial) != dims[self.system]:
                raise ScenarioError(f"{self.system} needs an initial point of length {dims[self.system]}",
                                    "initial")
            if self.system == "rose_eps" and not (self.epsilon is not None and self.epsilon > 0):
                raise ScenarioError("rose_eps needs epsilon > 0", "epsilon")
        if self.perturbation < 0:
            raise ScenarioError("must be non-negative", "perturbation")

    # -- construction -----------------------------------------------------
    def initial_vector(self) -> np.ndarray:
        if self.system != "swarm":
            return np.asarray(self.initial, dtype=float)
        return self.initial_state().to_vector()

    def initial_state(self) -> SwarmState:
        if self.system != "swarm":
            raise ValueError("initial_state is only defined for the swarm")
        if self.positions is not None:
            state = SwarmState(np.asarray(self.positions, float), np.asarray(self.velocities, float))
        else:
            spec = RingSpec(project_ring_angles(self.angles), np.asarray(self.center, float), self.spin)
            state = make_ring_state(spec, 0.0)
        if self.perturbation > 0:
            rng = np.random.default_rng(self.seed)
            dp = rng.uniform(-1.0, 1.0, size=(2, state.n, 2)) * self.perturbation
            state = SwarmState(state.positions + dp[0], state.velocities + dp[1])
        return state

    @property
    def ring_spec(self) -> RingSpec | None:
        if self.system == "swarm" and self.angles is not None:
            return RingSpec(project_ring_angles(self.angles), np.asarray(self.center, float), self.spin)
        return None

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = json.loads(json.dumps(v))
            out[f.name] = v
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, data: dict[str, Any], source: str | None = None) -> "Scenario":
        if not isinstance(data, dict):
            raise ScenarioError("scenario must be a JSON object", line=1)
        if data.get("preset") == "fig4":
            base = fig4_scenario().to_dict()
            base.update({k: v for k, v in data.items() if k != "preset"})
            data = base
        known = {f.name for f in fields(cls)}
        for k in data:
            if k not in known:
                raise ScenarioError("unknown field", k, _line_of(source, k))
        if "system" not in data:
            raise ScenarioError("missing required field", "system", 1)
        if "t_end" not in data:
            raise ScenarioError("missing required field", "t_end", 1)
        kw = {}
        for k, v in data.items():
            kw[k] = _tuplify(v) if isinstance(v, list) else v
        try:
            return cls(**kw)
        except ScenarioError as e:
            raise ScenarioError(str(e).split(": ", 1)[-1], e.field_name, _line_of(source, e.field_name)) from None
        except TypeError as e:
            raise ScenarioError(str(e), line=1) from None

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"invalid JSON: {e.msg} (column {e.colno})", line=e.lineno) from None
        return cls.from_dict(data, source=text)


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _line_of(source: str | None, key: str | None) -> int | None:
    if source is None or key is None:
        return None
    needle = f'"{key}"'
    for i, line in enumerate(source.splitlines(), start=1):
        if needle in line:
            return i
    return None


def fig4_scenario() -> Scenario:
    """Three particles whose center of mass keeps moving (printed initial data)."""
    return Scenario(
        system="swarm",
        n=3,
        positions=((2.04, -1.36), (2.49, 0.05), (1.0, -0.02)),
        velocities=((0.34, 1.16), (0.77, -0.51), (-0.76, -0.34)),
        t_end=50.0,
        monitors=("ring_dist",),
        sample_dt=0.1,
    )
