"""Jacobians at ring states, their invariant-subspace restrictions,
characteristic polynomials, Routh-Hurwitz minors and spectral gaps.

Polynomials are coefficient lists in ascending degree.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.linalg import null_space

from .frames import build_basis, coupling_matrices, degenerate_angles, normalization_angle

__all__ = [
    "CUBIC",
    "DegenerateAnglesError",
    "SpectralReport",
    "poly_mul",
    "poly_pow",
    "poly_trim",
    "charpoly",
    "companion_roots",
    "cubic_roots",
    "jacobian_abuw",
    "is_degenerate",
    "omega_of",
    "restrict_blocks",
    "j1_char_poly",
    "j2_closed_form",
    "f_omega",
    "j2_char_poly",
    "hurwitz_matrix",
    "hurwitz_minors",
    "hurwitz_minors_exact",
    "jacobian_degenerate",
    "jdeg_char_poly",
    "spectral_gap",
    "ring_report",
    "degenerate_report",
    "omega_gap_sweep",
    "match_eigenvalues",
]

# lambda^3 + 2 lambda^2 + 4 lambda + 4, ascending
CUBIC = (4, 4, 2, 1)


class DegenerateAnglesError(ValueError):
    """c-bar and s-bar are collinear; use the degenerate (J_deg) machinery."""


# ---------------------------------------------------------------------------
# polynomial helpers (exact for int / Fraction coefficients)


def poly_trim(p: Sequence) -> list:
    p = list(p)
    while len(p) > 1 and p[-1] == 0:
        p.pop()
    return p


def poly_mul(p: Sequence, q: Sequence) -> list:
    out = [0] * (len(p) + len(q) - 1)
    for i, a in enumerate(p):
        if a == 0:
            continue
        for j, b in enumerate(q):
            out[i + j] += a * b
    return out


def poly_pow(p: Sequence, k: int) -> list:
    out = [1]
    for _ in range(k):
        out = poly_mul(out, p)
    return out


def charpoly(A, exact: bool = False) -> list:
    """det(lambda I - A) by Faddeev-LeVerrier, ascending coefficients.

    With ``exact=True`` the entries are converted to Fractions (floats exactly),
    and the result is exact.
    """
    if exact:
        M0 = [[Fraction(x) if not isinstance(x, Fraction) else x for x in row] for row in np.asarray(A, dtype=object)]
        m = len(M0)
        A_ = M0
        coeffs = [Fraction(0)] * (m + 1)
        coeffs[m] = Fraction(1)
        M = [[Fraction(0)] * m for _ in range(m)]
        c = Fraction(1)
        for k in range(1, m + 1):
            # M_k = A M_{k-1} + c_{m-k+1} I
            AM = [[sum((A_[i][l] * M[l][j] for l in range(m) if M[l][j] != 0), Fraction(0))
                   for j in range(m)] for i in range(m)]
            M = [[AM[i][j] + (c if i == j else 0) for j in range(m)] for i in range(m)]
            AM = [[sum((A_[i][l] * M[l][j] for l in range(m) if M[l][j] != 0), Fraction(0))
                   for j in range(m)] for i in range(m)]
            c = -sum(AM[i][i] for i in range(m)) / k
            coeffs[m - k] = c
        return coeffs
    A = np.asarray(A, dtype=float)
    m = A.shape[0]
    coeffs = np.zeros(m + 1)
    coeffs[m] = 1.0
    M = np.zeros_like(A)
    c = 1.0
    for k in range(1, m + 1):
        M = A @ M + c * np.eye(m)
        c = -np.trace(A @ M) / k
        coeffs[m - k] = c
    return list(coeffs)


def companion_roots(p: Sequence) -> np.ndarray:
    """Roots of an ascending-coefficient polynomial via its companion matrix."""
    p = [complex(x) for x in poly_trim(p)]
    deg = len(p) - 1
    if deg < 1:
        return np.array([], dtype=complex)
    lead = p[-1]
    C = np.zeros((deg, deg), dtype=complex)
    C[1:, :-1] = np.eye(deg - 1)
    C[:, -1] = [-x / lead for x in p[:-1]]
    roots = np.linalg.eigvals(C)
    return roots if np.iscomplexobj(p) and any(z.imag for z in p) else roots


def cubic_roots() -> np.ndarray:
    """Roots of lambda^3 + 2 lambda^2 + 4 lambda + 4, sorted by real part."""
    r = companion_roots(CUBIC)
    return r[np.lexsort((r.imag, r.real))]


def match_eigenvalues(a: Sequence[complex], b: Sequence[complex]) -> float:
    """Largest distance under the optimal one-to-one matching of two multisets."""
    from scipy.optimize import linear_sum_assignment

    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.size != b.size:
        return np.inf
    if a.size == 0:
        return 0.0
    D = np.abs(a[:, None] - b[None, :])
    i, j = linear_sum_assignment(D)
    return float(D[i, j].max())


# ---------------------------------------------------------------------------
# Jacobians


def jacobian_abuw(theta0) -> np.ndarray:
    """Jacobian of the (a,b,u,w) system at the origin."""
    S, C = coupling_matrices(theta0)
    n = S.shape[0]
    I = np.eye(n)
    O = np.zeros((n, n))
    return np.block([[O, O, I, O], [O, O, O, I], [C, -S, O, 2 * I], [S - 2 * I, C, -2 * I, -2 * I]])


def is_degenerate(theta0, tol: float = 1e-8) -> bool:
    th = np.asarray(theta0, dtype=float)
    M = np.column_stack([np.cos(th), np.sin(th)]) / math.sqrt(th.size)
    return bool(np.linalg.svd(M, compute_uv=False)[-1] < tol)


def omega_of(theta0) -> float:
    """omega = (1/n) sum cos^2(theta) - 1/2 for normalized angles."""
    th = np.asarray(theta0, dtype=float)
    return math.fsum(np.cos(th) ** 2) / th.size - 0.5


def _check_normalized(th: np.ndarray, tol: float = 1e-9) -> None:
    s = abs(math.fsum(np.sin(2 * th)))
    if s > tol * th.size:
        raise ValueError(f"angles are not normalized (|sum sin 2theta| = {s:.2e}); "
                         "apply normalize_ring_angles first")


@dataclass(frozen=True)
class BlockRestriction:
    J1: np.ndarray
    J2: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    omega: float


def restrict_blocks(theta0) -> BlockRestriction:
    """Matrices of J on L1 = span B1 (kernel of S and C) and L2 = span B2."""
    th = np.asarray(theta0, dtype=float)
    if is_degenerate(th):
        raise DegenerateAnglesError("degenerate ring angles (c-bar, s-bar collinear); "
                                    "use jacobian_degenerate for even n")
    _check_normalized(th)
    n = th.size
    J = jacobian_abuw(th)
    cb, sb = np.cos(th), np.sin(th)
    K = null_space(np.vstack([cb, sb]))
    m = K.shape[1]
    B1 = np.zeros((4 * n, 4 * m))
    B2 = np.zeros((4 * n, 8))
    for i in range(4):
        B1[i * n:(i + 1) * n, i * m:(i + 1) * m] = K
        B2[i * n:(i + 1) * n, 2 * i] = cb
        B2[i * n:(i + 1) * n, 2 * i + 1] = sb
    J1 = B1.T @ J @ B1
    B2pinv = B2.T / np.sum(B2 * B2, axis=0)[:, None]
    J2 = B2pinv @ J @ B2
    return BlockRestriction(J1, J2, B1, B2, omega_of(th))


def j1_char_poly(n: int) -> list[int]:
    """lambda^{n-2} (lambda^3 + 2 lambda^2 + 4 lambda + 4)^{n-2} by block structure.

    J1 = M (x) I_{n-2} for the 4x4 integer matrix M, so char(J1) = char(M)^{n-2}.
    """
    M = [[0, 0, 1, 0], [0, 0, 0, 1], [0, 0, 0, 2], [-2, 0, -2, -2]]
    cm = [int(c) for c in charpoly(M, exact=True)]
    return poly_pow(cm, n - 2)


def j2_closed_form(omega: float) -> np.ndarray:
    f, d = 0.5 + omega, 0.5 - omega
    LL = np.array([[f, 0, 0, -d], [0, d, f, 0], [-2, d, f, 0], [-f, -2, 0, d]], dtype=float)
    LR = np.array([[0, 0, 2, 0], [0, 0, 0, 2], [-2, 0, -2, 0], [0, -2, 0, -2]], dtype=float)
    return np.block([[np.zeros((4, 4)), np.eye(4)], [LL, LR]])


def f_omega(omega) -> list:
    """1 - 4 omega^2 + 4 l + 12 l^2 + 14 l^3 + 9 l^4 + 4 l^5 + l^6 (ascending)."""
    return [1 - 4 * omega * omega, 4, 12, 14, 9, 4, 1]


def j2_char_poly(omega) -> list:
    return poly_mul([1, 0, 1], f_omega(omega))


def hurwitz_matrix(coeffs_desc: Sequence) -> list[list]:
    """Hurwitz matrix of a0 l^m + a1 l^{m-1} + ... + am (descending input)."""
    a = list(coeffs_desc)
    m = len(a) - 1
    H = [[0] * m for _ in range(m)]
    for i in range(m):
        for j in range(m):
            k = 2 * (j + 1) - (i + 1)
            if 0 <= k <= m:
                H[i][j] = a[k]
    return H


def _det_fraction(M: list[list]) -> Fraction:
    M = [[Fraction(x) for x in row] for row in M]
    m = len(M)
    det = Fraction(1)
    for c in range(m):
        piv = next((r for r in range(c, m) if M[r][c] != 0), None)
        if piv is None:
            return Fraction(0)
        if piv != c:
            M[c], M[piv] = M[piv], M[c]
            det = -det
        det *= M[c][c]
        for r in range(c + 1, m):
            if M[r][c] != 0:
                fac = M[r][c] / M[c][c]
                M[r] = [M[r][j] - fac * M[c][j] for j in range(m)]
    return det


def hurwitz_minors(omega: float) -> list[float]:
    """Leading principal minors of the Hurwitz matrix of f_omega (closed forms)."""
    w2 = omega * omega
    q = -333 - 636 * w2 + 128 * w2 * w2
    return [4.0, 22.0, 132.0, -352.0 * (w2 - 3), -8.0 * q,
            8.0 * (-1 + 2 * omega) * (1 + 2 * omega) * q]


def hurwitz_minors_exact(omega) -> list[Fraction]:
    """The same minors from exact rational determinants of the Hurwitz matrix."""
    w = Fraction(omega)
    desc = list(reversed(f_omega(w)))
    H = hurwitz_matrix(desc)
    return [_det_fraction([row[:k] for row in H[:k]]) for k in range(1, 7)]


def jacobian_degenerate(n: int) -> tuple[np.ndarray, np.ndarray]:
    """J_deg = blockdiag(O_{n-1}, J_top, [[-1,1],[0,-1]], [[0,1],[-1,0]]) and J_top."""
    if n % 2 or n < 4:
        raise ValueError(f"degenerate machinery needs even n >= 4, got {n}")
    m = n - 1
    I = np.eye(m)
    O = np.zeros((m, m))
    J_top = np.block([[O, I, O], [O, O, 2 * I], [-2 * I, -2 * I, -2 * I]])
    J = np.zeros((4 * n, 4 * n))
    J[m:4 * m, m:4 * m] = J_top
    J[4 * m:4 * m + 2, 4 * m:4 * m + 2] = [[-1, 1], [0, -1]]
    J[4 * m + 2:, 4 * m + 2:] = [[0, 1], [-1, 0]]
    return J, J_top


def jdeg_char_poly(n: int) -> list[int]:
    """(cubic)^{n-1} lambda^{n-1} (lambda+1)^2 (lambda^2+1)."""
    p = poly_pow(list(CUBIC), n - 1)
    p = poly_mul(p, [0] * (n - 1) + [1])
    p = poly_mul(p, [1, 2, 1])
    return poly_mul(p, [1, 0, 1])


def spectral_gap(eigenvalues, zero_tol: float = 1e-9, axis_tol: float = 1e-6) -> tuple[float, bool]:
    """eta = min |Re lambda| over Re lambda < -zero_tol; flag when eta < axis_tol."""
    ev = np.asarray(eigenvalues, dtype=complex)
    stable = ev.real[ev.real < -zero_tol]
    if stable.size == 0:
        return 0.0, True
    eta = float(np.min(-stable))
    return eta, eta < axis_tol


# ---------------------------------------------------------------------------
# reports


@dataclass
class SpectralReport:
    J: np.ndarray
    eigenvalues: np.ndarray
    char_poly: list
    spectral_gap: float
    gap_near_axis: bool
    kind: str
    n: int
    omega: float | None = None
    blocks: dict = field(default_factory=dict)
    block_polys: dict = field(default_factory=dict)
    hurwitz_minors: list | None = None
    eig_char_mismatch: float = 0.0

    def multiplicities(self, tol: float = 1e-6) -> list[tuple[complex, int]]:
        out: list[list] = []
        for z in sorted(self.eigenvalues, key=lambda z: (round(z.real, 6), round(z.imag, 6))):
            for rec in out:
                if abs(rec[0] - z) < tol:
                    rec[1] += 1
                    break
            else:
                out.append([z, 1])
        return [(complex(z), k) for z, k in out]

    def to_dict(self) -> dict:
        def ev(z):
            return [[float(x.real), float(x.imag)] for x in z]

        return {
            "kind": self.kind,
            "n": self.n,
            "omega": self.omega,
            "eigenvalues": ev(self.eigenvalues),
            "char_poly": [float(c) for c in self.char_poly],
            "spectral_gap": self.spectral_gap,
            "gap_near_axis": self.gap_near_axis,
            "block_polys": {k: [float(c) for c in v] for k, v in self.block_polys.items()},
            "block_eigenvalues": {k: ev(np.linalg.eigvals(v)) for k, v in self.blocks.items()},
            "hurwitz_minors": None if self.hurwitz_minors is None else [float(x) for x in self.hurwitz_minors],
            "multiplicities": [[z.real, z.imag, k] for z, k in self.multiplicities()],
            "eig_char_mismatch": self.eig_char_mismatch,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def ring_report(theta0, normalize: bool = True) -> SpectralReport:
    """Spectral report for a non-degenerate ring state."""
    th = np.asarray(theta0, dtype=float)
    if normalize:
        th = th + normalization_angle(th)
    if is_degenerate(th):
        raise DegenerateAnglesError("degenerate ring angles; use degenerate_report(n)")
    n = th.size
    J = jacobian_abuw(th)
    eig = np.linalg.eigvals(J)
    blk = restrict_blocks(th)
    p1 = j1_char_poly(n)
    p2 = j2_char_poly(blk.omega)
    full = poly_mul(p1, p2)
    roots = np.concatenate([np.zeros(n - 2), np.tile(cubic_roots(), n - 2), companion_roots(p2)])
    eta, near = spectral_gap(eig)
    return SpectralReport(
        J=J, eigenvalues=eig, char_poly=full, spectral_gap=eta, gap_near_axis=near, kind="ring", n=n,
        omega=blk.omega, blocks={"J1": blk.J1, "J2": blk.J2}, block_polys={"J1": p1, "J2": p2},
        hurwitz_minors=hurwitz_minors(blk.omega), eig_char_mismatch=match_eigenvalues(eig, roots),
    )


def degenerate_report(n: int) -> SpectralReport:
    """Spectral report for the degenerate ring state (0,..,0, pi,..,pi)."""
    J_deg, J_top = jacobian_degenerate(n)
    basis = build_basis(n)
    J = jacobian_abuw(degenerate_angles(n))
    eig = np.linalg.eigvals(J_deg)  # block triangular: defective -1 block is exact
    p = jdeg_char_poly(n)
    roots = np.concatenate([np.tile(cubic_roots(), n - 1), np.zeros(n - 1), [-1, -1, 1j, -1j]])
    eta, near = spectral_gap(eig)
    return SpectralReport(
        J=J, eigenvalues=eig, char_poly=p, spectral_gap=eta, gap_near_axis=near, kind="degenerate", n=n,
        blocks={"J_deg": J_deg, "J_top": J_top, "PinvJP": basis.Pinv @ J @ basis.P},
        block_polys={"J_top": poly_pow(list(CUBIC), n - 1)},
        eig_char_mismatch=match_eigenvalues(eig, roots),
    )


def omega_gap_sweep(omegas: Sequence[float]) -> list[tuple[float, float]]:
    """Smallest |Re lambda| among the roots of f_omega for each omega."""
    out = []
    for w in omegas:
        r = companion_roots(f_omega(float(w)))
        out.append((float(w), float(np.min(np.abs(r.real)))))
    return out
