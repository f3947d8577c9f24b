import math
import warnings

import numpy as np
import pytest

from ringswarm.core import RingSpec, make_ring_state, project_ring_angles
from ringswarm.frames import DegenerateVector, build_basis, degenerate_angles, from_abuw
from ringswarm.integrate import RhsId, StepOptions, Trajectory, abuw_rhs, integrate
from ringswarm.manifold import (AnchoredSystem, DomainError, PsiNewtonError, ZVector, anchor_QZ,
                                anchor_defect, anchored_psi, degenerate_phase, degenerate_rhs,
                                dispersions, dispersions_from_sines, energy, energy_closed,
                                energy_gradient, eta_norm_affine, f1f2, f1f2_residual,
                                gamma_on_constant, gamma_quadrature, lyapunov_decoupled, mean_cos,
                                monitor_channels, project_zero_energy, psi_error_certificate,
                                reduced_flow_approx, reduced_rhs, taylor_system)

DYADIC = [2.0 ** -k for k in range(3, 10)]


def _rz(n, rng, scale=0.05):
    return ZVector(rng.normal(size=n - 1) * scale)


def test_zvector_validation():
    with pytest.raises(ValueError):
        ZVector(np.zeros(4))
    with pytest.raises(DomainError) as e:
        ZVector(np.full(5, 0.9))
    assert e.value.max_sin > 0.9


@pytest.mark.parametrize("n", [4, 6, 8])
def test_energy_forms_agree(n):
    rng = np.random.default_rng(n)
    for _ in range(10):
        Z = _rz(n, rng)
        E, alpha = energy(Z)
        assert E == pytest.approx(energy_closed(Z), abs=1e-16)
        b = Z.basis
        assert np.allclose(b.Vbb @ alpha + E * b.X, Z.theta.cos - 1, atol=1e-15)
        h = 1e-6
        fd = [(energy_closed(ZVector(Z.Z + h * e)) - energy_closed(ZVector(Z.Z - h * e))) / (2 * h)
              for e in np.eye(n - 1)]
        assert np.allclose(fd, energy_gradient(Z), atol=1e-9)


def test_dispersions_match_group_variances():
    rng = np.random.default_rng(1)
    Z = _rz(6, rng)
    du, dl = dispersions(Z)
    du2, dl2, zl = dispersions_from_sines(Z.sines)
    assert du == pytest.approx(du2, abs=1e-16) and dl == pytest.approx(dl2, abs=1e-16)
    assert zl == pytest.approx(Z.zlast, abs=1e-16)


@pytest.mark.parametrize("n", [4, 6])
def test_zero_energy_anchor_is_equilibrium(n):
    rng = np.random.default_rng(10 + n)
    worst = 0.0
    for _ in range(50):
        Z = project_zero_energy(_rz(n, rng))
        assert abs(energy_closed(Z)) <= 1e-15
        worst = max(worst, float(np.max(np.abs(reduced_rhs(anchor_QZ(Z))))))
    assert worst <= 1e-10


def test_zero_energy_anchor_is_a_ring_state():
    rng = np.random.default_rng(3)
    Z = project_zero_energy(_rz(4, rng))
    b = build_basis(4)
    th0 = degenerate_angles(4)
    sw = from_abuw(b.P @ anchor_QZ(Z).vector, th0, 0.0)
    from ringswarm.core import SwarmState, nearest_ring_state
    assert nearest_ring_state(SwarmState.from_vector(sw))[1] < 1e-9


def test_degenerate_rhs_matches_full_system():
    rng = np.random.default_rng(4)
    for n in (4, 6):
        b = build_basis(n)
        y = rng.normal(size=4 * n) * 0.05
        full = b.Pinv @ abuw_rhs(b.P @ y, degenerate_angles(n))
        assert np.allclose(degenerate_rhs(y), full, atol=1e-15)
    with pytest.raises(ValueError):
        reduced_rhs(np.zeros(16))


def test_f1f2_solves_its_system():
    rng = np.random.default_rng(5)
    for n in (4, 6):
        Z = _rz(n, rng)
        assert f1f2_residual(Z, *f1f2(Z)) < 1e-14


def _ratio_sequence(fn, n=6, seed=7):
    d = np.random.default_rng(seed).normal(size=n - 1)
    d /= np.abs(d).sum()
    return np.array([fn(ZVector(d * s)) for s in DYADIC])


def _bounded_nonincreasing(r):
    return np.all(np.isfinite(r)) and r.max() < 10 * r[0] + 1e-12 and r[-1] <= r[0] * 1.05 + 1e-12


def test_scaling_energy():
    r = _ratio_sequence(lambda Z: abs(energy_closed(Z)) / (Z.norm_r * Z.norm))
    assert _bounded_nonincreasing(r)


def test_scaling_sines():
    r = _ratio_sequence(lambda Z: np.linalg.norm(Z.sines - Z.zlast) / Z.norm_r)
    assert _bounded_nonincreasing(r)


def test_scaling_cosines():
    r = _ratio_sequence(lambda Z: np.linalg.norm(Z.theta.cos - mean_cos(Z)) / (Z.norm_r * Z.norm))
    assert _bounded_nonincreasing(r)


def test_region_bounds_for_positive_energy():
    rng = np.random.default_rng(8)
    ratios = []
    for _ in range(300):
        Z = _rz(6, rng, 0.05)
        if energy_closed(Z) <= 0:
            continue
        du, dl = dispersions(Z)
        assert dl >= 0.5 * du - 1e-15
        ratios.append(math.sqrt(dl) / Z.norm_r)
    ratios = np.array(ratios)
    assert ratios.size > 50 and ratios.min() > 0.05 and ratios.max() < 2


def test_reduced_flow_remainder_scaling():
    d = np.random.default_rng(9).normal(size=5)
    d /= np.abs(d).sum()
    rel = []
    for s in DYADIC[:5]:
        Z = ZVector(d * s)
        if energy_closed(Z) < 0:
            Z = ZVector(np.concatenate([Z.Z_L, Z.Z_U, [Z.zlast]]))
        actual = reduced_rhs(anchor_QZ(Z))[:5]
        approx = reduced_flow_approx(Z)
        rel.append(np.linalg.norm(actual - approx.dZ, 1) / approx.error_scale)
    assert max(rel) < 20


def test_gamma_closed_vs_quadrature():
    rng = np.random.default_rng(11)
    Z = _rz(4, rng)
    y = DegenerateVector.from_vector(rng.normal(size=14) * 0.05)
    rec = gamma_on_constant(Z, y)
    for t in (-1.0, 0.5):
        assert np.allclose(rec.at(t), gamma_quadrature(Z, y, t), atol=1e-12)


def test_eta_norm_affine():
    c, l = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    eta = 0.5
    ts = np.linspace(-40, 40, 400001)
    brute = np.max(np.hypot(1.0, ts) * np.exp(-eta * np.abs(ts)))
    assert eta_norm_affine(c, l, eta) == pytest.approx(brute, rel=1e-8)
    assert eta_norm_affine(c, 0 * l, eta) == 1.0


def test_anchor_defect_is_small():
    rng = np.random.default_rng(12)
    for s in (0.04, 0.02, 0.01):
        Z = ZVector(rng.normal(size=5) * s)
        assert anchor_defect(Z) < 50 * Z.norm ** 2


def test_lyapunov_values():
    assert lyapunov_decoupled([1, 0, 0, 1])[0] == pytest.approx(2.0)
    L, Ld, reg = lyapunov_decoupled([2, 0, 0, 1])
    assert L == pytest.approx(5 - math.log(4)) and reg == "Omega+" and Ld == 0
    assert lyapunov_decoupled([1, 0, 0, -1])[2] == "Omega-"
    assert lyapunov_decoupled([1, 0, 1, 0]) == (math.inf, 0.0, "boundary")


def test_decoupled_lyapunov_along_trajectory():
    tr = integrate(RhsId("decoupled4d"), [0.3, -0.5, 1.2, 0.4], 30.0,
                   StepOptions(abs_tol=1e-10, rel_tol=1e-10), t_eval=np.linspace(0, 30, 301))
    L = monitor_channels(tr, system="decoupled").monitors["L"]
    assert np.all(np.diff(L) <= 1e-12) and L.min() >= 2 - 1e-12


def test_degenerate_phase():
    assert degenerate_phase([0.3, 0.3, 0.3 + math.pi, 0.3 - math.pi]) == pytest.approx(0.3)
    assert degenerate_phase([0, 1, 2, 3]) is None
    assert degenerate_phase([0, math.pi, 0]) is None


def test_monitor_channels_swarm():
    th = degenerate_angles(4)
    rng = np.random.default_rng(13)
    b = build_basis(4)
    Z = ZVector(np.array([0.01, -0.02, 0.005]))
    y = b.P @ anchor_QZ(Z).vector
    sw = from_abuw(y, th, 0.0)
    tr = Trajectory(np.array([0.0]), sw[None, :], {}, tuple(f"s{k}" for k in range(16)))
    out = monitor_channels(tr, th, "swarm", ["E", "DL", "zlast", "ring_dist"])
    assert out.monitors["E"][0] == pytest.approx(energy_closed(Z), abs=1e-15)
    assert out.monitors["zlast"][0] == pytest.approx(0.005, abs=1e-15)
    assert out.columns()[-4:] == ["E", "DL", "zlast", "ring_dist"]
    with pytest.raises(ValueError, match="degenerate reference"):
        monitor_channels(tr, project_ring_angles(rng.uniform(0, 6, 4)), "swarm", ["E"])
    with pytest.raises(ValueError, match="not available"):
        monitor_channels(tr, th, "swarm", ["L"])


def test_monitor_outside_domain_gives_nan():
    th = degenerate_angles(4)
    far = make_ring_state(RingSpec(2 * np.pi * np.arange(4) / 4)).to_vector()
    tr = Trajectory(np.array([0.0]), far[None, :], {}, tuple(f"s{k}" for k in range(16)))
    with pytest.warns(RuntimeWarning, match="Theta domain"):
        out = monitor_channels(tr, th, "swarm", ["DL"])
    assert math.isnan(out.monitors["DL"][0])


def _taylor_closed(x, y):
    return x * (y - x * math.sin(x)) * (math.sin(x) + x * math.cos(x)) + x * math.sin(x)


def test_taylor_psi_and_certificate():
    sys_ = taylor_system()
    rng = np.random.default_rng(14)
    pts = rng.uniform(-1, 1, size=(50, 2))
    for x, y in pts:
        assert anchored_psi(sys_, [x, y])[0] == pytest.approx(_taylor_closed(x, y), abs=1e-12)
    cert = psi_error_certificate(sys_, pts)
    assert not cert.estimated and 0 < cert.max_ratio < 10
    # the ratio shrinks proportionally as y is halved along a ray
    rs = [psi_error_certificate(sys_, [[0.8 * s, -0.5 * s]]).max_ratio for s in (1, 0.5, 0.25, 0.125)]
    assert all(b < a for a, b in zip(rs, rs[1:]))
    assert rs[-1] / rs[-2] == pytest.approx(0.5, rel=0.1)


def test_certificate_excludes_points_on_E():
    sys_ = taylor_system()
    cert = psi_error_certificate(sys_, [[0.5, 0.5 * math.sin(0.5)], [0.3, -0.2]])
    assert cert.excluded == 1 and cert.samples.shape == (1, 2)


def test_certificate_with_estimated_h():
    sys_ = taylor_system()
    est = AnchoredSystem(sys_.A_s, sys_.B, sys_.f, sys_.g, None, sys_.dist_to_E, sys_.equilibria, "est")
    cert = psi_error_certificate(est, [[0.3, 0.1]], T=5.0)
    assert cert.estimated and any("estimate" in n for n in cert.notes)


def test_psi_newton_failure_reports_residuals():
    # -z + f(z, y) = y^2 (1 + z^2) has no real root for y != 0
    sys_ = AnchoredSystem(np.array([[-1.0]]), np.zeros((1, 1)),
                          lambda z, y: np.array([z[0] + y[0] ** 2 * (1 + z[0] ** 2)]),
                          lambda z, y: np.zeros(1))
    with pytest.raises(PsiNewtonError) as e:
        anchored_psi(sys_, [1.0], max_iter=8)
    assert len(e.value.residuals) >= 1
