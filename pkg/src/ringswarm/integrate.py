"""Vector fields of the swarm model and its companion systems, plus an
adaptive Dormand-Prince 5(4) integrator with dense output.

State layouts (flat float vectors):

* swarm:     [x_1..x_n, y_1..y_n, vx_1..vx_n, vy_1..vy_n]
* decoupled: [x, y, u, v]
* rose:      [x, y]
* taylor3d:  [x, y, z]
* rotating:  [X_1..X_n, Y_1..Y_n, dX_1..dX_n, dY_1..dY_n]
* abuw:      [a_1..a_n, b_1..b_n, u_1..u_n, w_1..w_n]

Every right-hand side accepts ``form="factored"`` (default) or
``form="expanded"``; the two evaluate the same polynomial with different
algebra and exist for dual-evaluation tests.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .core import SwarmState

__all__ = [
    "RHS_TAGS",
    "RhsId",
    "Trajectory",
    "StepOptions",
    "IntegrationError",
    "swarm_rhs",
    "decoupled_rhs",
    "rose_rhs",
    "taylor3d_rhs",
    "rotating_frame_rhs",
    "abuw_rhs",
    "abuw_field",
    "nonlinear_UW",
    "integrate",
    "state_labels",
    "read_csv",
]

log = logging.getLogger(__name__)

RHS_TAGS = ("swarm", "decoupled4d", "rose_eps", "rose_singular", "taylor3d", "rotating_frame", "abuw")


def _split4(y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n = y.size // 4
    return y[:n], y[n:2 * n], y[2 * n:3 * n], y[3 * n:]


# ---------------------------------------------------------------------------
# Right-hand sides


def swarm_rhs(state, form: str = "factored"):
    """rddot_k = (1 - |rdot_k|^2) rdot_k - (r_k - R).

    Accepts a flat vector (returns a flat derivative) or a SwarmState (returns a
    SwarmState holding (rdot, rddot)).
    """
    if isinstance(state, SwarmState):
        d = swarm_rhs(state.to_vector(), form)
        return SwarmState.from_vector(d)
    y = np.asarray(state, dtype=float)
    x, yy, vx, vy = _split4(y)
    if form == "factored":
        speed = 1.0 - (vx * vx + vy * vy)
        ax = speed * vx - (x - x.mean())
        ay = speed * vy - (yy - yy.mean())
    elif form == "expanded":
        ax = vx - vx ** 3 - vx * vy ** 2 - x + np.sum(x) / x.size
        ay = vy - vy * vx ** 2 - vy ** 3 - yy + np.sum(yy) / yy.size
    else:
        raise ValueError(f"unknown form {form!r}")
    return np.concatenate([vx, vy, ax, ay])


def decoupled_rhs(y, form: str = "factored") -> np.ndarray:
    """(x, y, u, v) -> (u, v, (1-u^2-v^2)u - x, (1-u^2-v^2)v - y)."""
    x, yy, u, v = np.asarray(y, dtype=float)
    if form == "factored":
        s = 1.0 - u * u - v * v
        return np.array([u, v, s * u - x, s * v - yy])
    if form == "expanded":
        return np.array([u, v, u - u ** 3 - u * v ** 2 - x, v - v * u ** 2 - v ** 3 - yy])
    raise ValueError(f"unknown form {form!r}")


def rose_rhs(point, epsilon: float | None = None, form: str = "factored") -> np.ndarray:
    """Rose field with g = 4x^2 - x^4 - y^2 (+ eps^2 when ``epsilon`` is given)."""
    x, y = np.asarray(point, dtype=float)
    if epsilon is not None and not epsilon > 0:
        raise ValueError("epsilon must be positive")
    e2 = 0.0 if epsilon is None else epsilon * epsilon
    g = 4 * x * x - x ** 4 - y * y + e2
    if form == "factored":
        # x^4 - 6x^2y^2 + y^4 = Re (x+iy)^4,  4x^3y - 4xy^3 = Im (x+iy)^4
        z4 = complex(x, y) ** 4
        return np.array([-g * z4.real, -g * z4.imag])
    if form == "expanded":
        p = x ** 4 - 6 * x ** 2 * y ** 2 + y ** 4
        q = 4 * x ** 3 * y - 4 * x * y ** 3
        return np.array([-(4 * x * x * p - x ** 4 * p - y * y * p + e2 * p),
                         -(4 * x * x * q - x ** 4 * q - y * y * q + e2 * q)])
    raise ValueError(f"unknown form {form!r}")


def taylor3d_rhs(point, form: str = "factored") -> np.ndarray:
    """(x(y - x sin x), -y^2(y - z), -z + x(y - x sin x)(sin x + x cos x) + x sin x)."""
    x, y, z = np.asarray(point, dtype=float)
    s, c = math.sin(x), math.cos(x)
    if form == "factored":
        m = x * (y - x * s)
        return np.array([m, -y * y * (y - z), -z + m * (s + x * c) + x * s])
    if form == "expanded":
        return np.array([x * y - x * x * s,
                         -y ** 3 + y * y * z,
                         -z + x * y * s + x * x * y * c - x * x * s * s - x ** 3 * s * c + x * s])
    raise ValueError(f"unknown form {form!r}")


def rotating_frame_rhs(y, form: str = "factored") -> np.ndarray:
    """Swarm in the frame r_k = e^{it}(X_k + i Y_k)."""
    X, Y, dX, dY = _split4(np.asarray(y, dtype=float))
    p, q = dX - Y, X + dY
    if form == "factored":
        s = 1.0 - p * p - q * q
        ddX = 2 * dY + s * p + X.mean()
        ddY = -2 * dX + s * q + Y.mean()
    elif form == "expanded":
        ddX = 2 * dY + p - p ** 3 - p * q * q + np.sum(X) / X.size
        ddY = -2 * dX + q - q * p * p - q ** 3 + np.sum(Y) / Y.size
    else:
        raise ValueError(f"unknown form {form!r}")
    return np.concatenate([dX, dY, ddX, ddY])


def nonlinear_UW(y, form: str = "factored") -> tuple[np.ndarray, np.ndarray]:
    """Nonlinear parts (U, W) of the (a,b,u,w) system, with s = u - b, c = a + w."""
    a, b, u, w = _split4(np.asarray(y, dtype=float))
    s, c = u - b, a + w
    if form == "factored":
        rho = (c + 1.0) ** 2 + s * s - 1.0
        return -s * rho, -(c + 1.0) * rho + 2.0 * c
    if form == "expanded":
        k = s * s + 2 * c + c * c
        return -k * s, -(s * s + c * c) - k * c
    raise ValueError(f"unknown form {form!r}")


def abuw_rhs(y, theta0: Sequence[float], form: str = "factored") -> np.ndarray:
    """Swarm in the coordinates r_k = e^{it} e^{i theta0_k} ((a_k + 1) + i b_k),
    u = adot, w = bdot, for ring angles theta0 with zero sum."""
    return abuw_field(theta0, form)(0.0, y)


def abuw_field(theta0: Sequence[float], form: str = "factored") -> Callable[[float, np.ndarray], np.ndarray]:
    """f(t, y) for the (a,b,u,w) system with the coupling matrices built once."""
    th = np.asarray(theta0, dtype=float)
    n = th.size
    diff = th[None, :] - th[:, None]  # [k, m] = theta_m - theta_k
    C = np.cos(diff) / n
    S = np.sin(diff) / n
    if form not in ("factored", "expanded"):
        raise ValueError(f"unknown form {form!r}")

    I = np.eye(n)
    O = np.zeros((n, n))
    J = np.block([[O, O, I, O], [O, O, O, I], [C, -S, O, 2 * I], [S - 2 * I, C, -2 * I, -2 * I]])

    def f(t, y):
        y = np.asarray(y, dtype=float)
        if y.size != 4 * n:
            raise ValueError(f"state has {y.size // 4} particles but theta0 has {n}")
        if form == "factored":
            # linear part plus U = -s rho, W = -(c + 1) rho + 2c
            out = J @ y
            s = y[2 * n:3 * n] - y[n:2 * n]
            c = y[:n] + y[3 * n:]
            rho = s * s + c * (2.0 + c)
            out[2 * n:3 * n] -= s * rho
            out[3 * n:] += 2.0 * c - (c + 1.0) * rho
            return out
        a, b, u, w = y[:n], y[n:2 * n], y[2 * n:3 * n], y[3 * n:]
        U, W = nonlinear_UW(y, "expanded")
        du = 2 * w + U + C @ a - S @ b
        dw = -2 * u - 2 * a - 2 * w + W + S @ a + C @ b
        return np.concatenate([u, w, du, dw])

    return f


@dataclass(frozen=True)
class RhsId:
    """Names a vector field together with its parameters."""

    tag: str
    epsilon: float | None = None
    theta0: tuple | None = None

    def __post_init__(self):
        if self.tag not in RHS_TAGS:
            raise ValueError(f"unknown rhs tag {self.tag!r}; expected one of {RHS_TAGS}")
        if self.tag == "rose_eps" and not (self.epsilon is not None and self.epsilon > 0):
            raise ValueError("rose_eps requires epsilon > 0")
        if self.tag == "abuw":
            if self.theta0 is None:
                raise ValueError("abuw requires theta0")
            th = np.asarray(self.theta0, dtype=float)
            if abs(np.exp(1j * th).sum()) > 1e-9:
                raise ValueError("abuw theta0 must satisfy sum exp(i theta0) = 0")
            object.__setattr__(self, "theta0", tuple(float(t) for t in th))

    def function(self, form: str = "factored") -> Callable[[float, np.ndarray], np.ndarray]:
        tag = self.tag
        if tag == "swarm":
            return lambda t, y: swarm_rhs(y, form)
        if tag == "decoupled4d":
            return lambda t, y: decoupled_rhs(y, form)
        if tag == "rose_eps":
            eps = self.epsilon
            return lambda t, y: rose_rhs(y, eps, form)
        if tag == "rose_singular":
            return lambda t, y: rose_rhs(y, None, form)
        if tag == "taylor3d":
            return lambda t, y: taylor3d_rhs(y, form)
        if tag == "rotating_frame":
            return lambda t, y: rotating_frame_rhs(y, form)
        return abuw_field(self.theta0, form)


def state_labels(tag: str, dim: int) -> list[str]:
    """Column names for a state vector of the given system."""
    if tag in ("swarm", "rotating_frame", "abuw"):
        n = dim // 4
        heads = {"swarm": ("x", "y", "vx", "vy"), "rotating_frame": ("X", "Y", "dX", "dY"),
                 "abuw": ("a", "b", "u", "w")}[tag]
        return [f"{h}{k}" for h in heads for k in range(n)]
    fixed = {"decoupled4d": ["x", "y", "u", "v"], "rose_eps": ["x", "y"], "rose_singular": ["x", "y"],
             "taylor3d": ["x", "y", "z"]}
    if tag in fixed:
        return fixed[tag]
    return [f"s{k}" for k in range(dim)]


# ---------------------------------------------------------------------------
# Trajectory


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    monitors: dict = field(default_factory=dict)
    labels: tuple = ()

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).ravel()
        s = np.asarray(self.states, dtype=float)
        if s.ndim == 1:
            s = s.reshape(len(t), -1) if len(t) else s.reshape(0, 0)
        if s.shape[0] != t.size:
            raise ValueError("states and times differ in length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(s)):
            raise ValueError("trajectory contains non-finite states")
        mons = {}
        for k, v in self.monitors.items():
            v = np.asarray(v, dtype=float).ravel()
            if v.size != t.size:
                raise ValueError(f"channel {k!r} has {v.size} samples, expected {t.size}")
            mons[k] = v
        labels = tuple(self.labels) if self.labels else tuple(f"s{k}" for k in range(s.shape[1] if s.ndim == 2 else 0))
        if s.ndim == 2 and len(labels) != s.shape[1]:
            raise ValueError("label count does not match state dimension")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "monitors", mons)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.times.size

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def with_channels(self, channels: dict) -> "Trajectory":
        mons = dict(self.monitors)
        mons.update(channels)
        return Trajectory(self.times, self.states, mons, self.labels)

    def columns(self) -> list[str]:
        return ["t", *self.labels, *self.monitors.keys()]

    def rows(self) -> Iterable[list[float]]:
        chans = list(self.monitors.values())
        for i, t in enumerate(self.times):
            yield [t, *self.states[i], *(c[i] for c in chans)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([_fmt(x) for x in row])

    def to_jsonl(self, path) -> None:
        cols = self.columns()
        with open(path, "w") as fh:
            for row in self.rows():
                rec = {c: _json_num(x) for c, x in zip(cols, row)}
                fh.write(json.dumps(rec) + "\n")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _json_num(x: float):
    x = float(x)
    return x if math.isfinite(x) else None


def read_csv(path, state_columns: int | None = None) -> Trajectory:
    """Read a trajectory CSV.  Columns after the state block whose names are
    monitor channels are returned as monitors."""
    from .core import MONITOR_NAMES

    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(v) for v in row] for row in r], dtype=float)
    if header[0] != "t":
        raise ValueError("first CSV column must be 't'")
    names = header[1:]
    if state_columns is None:
        state_columns = len(names)
        for i, nm in enumerate(names):
            if nm in MONITOR_NAMES:
                state_columns = i
                break
    if data.size == 0:
        data = data.reshape(0, len(header))
    mons = {nm: data[:, 1 + state_columns + i] for i, nm in enumerate(names[state_columns:])}
    return Trajectory(data[:, 0], data[:, 1:1 + state_columns], mons, tuple(names[:state_columns]))


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_A_ROWS = [np.asarray(r, dtype=float) for r in _A]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# fifth-order minus embedded fourth-order weights (7 stages incl. FSAL)
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# continuous extension of Dormand & Prince (Shampine's coefficients), columns are
# the theta, theta^2, theta^3, theta^4 weights of each stage
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])


class IntegrationError(RuntimeError):
    """Step-size underflow or non-finite state; carries the partial trajectory."""

    def __init__(self, message: str, trajectory: Trajectory):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass(frozen=True)
class StepOptions:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    dt_init: float | None = None
    dt_max: float = np.inf
    max_steps: int = 10_000_000
    safety: float = 0.9

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.dt_init is not None and not self.dt_init > 0:
            raise ValueError("dt_init must be positive")


def _initial_step(f, t0, y0, f0, opts: StepOptions, span: float) -> float:
    # Hairer, Norsett & Wanner, Solving ODEs I, II.4
    scale = opts.abs_tol + opts.rel_tol * np.abs(y0)
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def integrate(rhs, initial, t_end: float, opts: StepOptions | None = None, *,
              t0: float = 0.0, t_eval: Sequence[float] | None = None,
              labels: Sequence[str] | None = None) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) integration from t0 to t_end.

    ``rhs`` is an RhsId or a callable f(t, y).  With ``t_eval`` the trajectory
    is sampled at those times through the 4th-order continuous extension,
    otherwise every accepted step is recorded.  Each accepted step satisfies
    max_i |err_i| / (abs_tol + rel_tol * max(|y_i|, |y_new_i|)) <= 1.
    """
    opts = opts or StepOptions()
    if isinstance(rhs, RhsId):
        if labels is None:
            labels = state_labels(rhs.tag, np.size(initial))
        f = rhs.function()
    else:
        f = rhs
    y = np.array(initial, dtype=float).ravel()
    if labels is None:
        labels = [f"s{k}" for k in range(y.size)]
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(t_eval) <= 0) or t_eval[0] < t0 or t_eval[-1] > t_end:
            raise ValueError("t_eval must be increasing and inside [t0, t_end]")
    times: list[float] = []
    states: list[np.ndarray] = []
    ev_i = 0
    if t_eval is None or (t_eval.size and t_eval[0] == t0):
        times.append(t0)
        states.append(y.copy())
        ev_i = 1 if t_eval is not None else 0

    def partial() -> Trajectory:
        return Trajectory(np.array(times), np.array(states).reshape(len(times), y.size), {}, tuple(labels))

    t = t0
    K = np.empty((7, y.size))
    K[0] = f(t, y)
    h = opts.dt_init or _initial_step(f, t, y, K[0], opts, t_end - t0)
    err_prev = 1.0
    alpha, beta = 0.7 / 5, 0.4 / 5
    steps = 0
    while t < t_end:
        h = min(h, opts.dt_max, t_end - t)
        if h < 16 * np.spacing(max(abs(t), 1.0)):
            raise IntegrationError(f"step size underflow at t={t:.17g}", partial())
        for s in range(1, 6):
            K[s] = f(t + _C[s] * h, y + h * (_A_ROWS[s] @ K[:s]))
        y_new = y + h * (_B @ K[:6])
        K[6] = f(t + h, y_new)
        err_vec = h * (_E @ K)
        scale = opts.abs_tol + opts.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale)) if y.size else 0.0
        if not np.isfinite(err):
            h *= 0.2
            continue
        if err <= 1.0:
            t_new = t + h if t + h < t_end else t_end
            if t_eval is not None:
                Q = K.T @ _P
                while ev_i < t_eval.size and t_eval[ev_i] <= t_new:
                    th = (t_eval[ev_i] - t) / h
                    times.append(float(t_eval[ev_i]))
                    states.append(y + h * (Q @ np.array([th, th ** 2, th ** 3, th ** 4])))
                    ev_i += 1
            else:
                times.append(t_new)
                states.append(y_new.copy())
            t, y = t_new, y_new
            K[0] = K[6]
            fac = opts.safety * max(err, 1e-10) ** -alpha * err_prev ** beta
            h *= min(5.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
            steps += 1
            if steps >= opts.max_steps:
                raise IntegrationError(f"maximum step count {opts.max_steps} reached at t={t:.6g}", partial())
        else:
            h *= max(0.2, opts.safety * err ** -alpha)
    return partial()
