"""Command-line entry point: simulate, spectrum, manifold, sweep.

Exit codes: 0 success, 1 malformed input, 2 integration failure (partial
output kept), 3 degenerate angles on the non-degenerate spectral path.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .core import (MONITOR_NAMES, RingFitError, Scenario, ScenarioError, ring_residual)
from .frames import degenerate_angles, normalization_angle
from .integrate import IntegrationError, RhsId, StepOptions, Trajectory, integrate, read_csv
from .manifold import (DomainError, ZVector, anchor_QZ, anchor_defect, anchored_psi, degenerate_phase,
                       dispersions, energy_closed, f1f2, monitor_channels, project_zero_energy,
                       psi_error_certificate, reduced_rhs, taylor_system)
from .spectral import (DegenerateAnglesError, degenerate_report, is_degenerate, omega_gap_sweep,
                       ring_report)

log = logging.getLogger("ringswarm")

EXIT_OK, EXIT_INPUT, EXIT_INTEGRATION, EXIT_DEGENERATE = 0, 1, 2, 3

RHS_OF_SYSTEM = {"swarm": "swarm", "decoupled": "decoupled4d", "rose_eps": "rose_eps",
                 "rose_singular": "rose_singular", "taylor_example": "taylor3d"}

SWEEP_COLUMNS = ("status", "error", "terminal_ring_dist", "E_decay_rate", "DL_inv_slope",
                 "DL_inv_intercept")


class InputError(Exception):
    """Bad command-line input; maps to exit code 1."""


# ---------------------------------------------------------------------------
# output helpers


def write_table(out_dir: Path, stem: str, columns: Sequence[str], rows: Sequence[Sequence], fmt: str) -> Path:
    """Write rows as csv (17 significant digits), jsonl or a json array."""
    path = out_dir / f"{stem}.{fmt}"

    def cell(v):
        if isinstance(v, (float, np.floating)):
            return format(float(v), ".17g")
        return "" if v is None else str(v)

    def jval(v):
        if isinstance(v, (float, np.floating)):
            return float(v) if math.isfinite(v) else None
        if isinstance(v, np.integer):
            return int(v)
        return v

    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([cell(v) for v in r])
    else:
        recs = [{c: jval(v) for c, v in zip(columns, r)} for r in rows]
        with open(path, "w") as fh:
            if fmt == "jsonl":
                for rec in recs:
                    fh.write(json.dumps(rec) + "\n")
            else:
                json.dump(recs, fh, indent=1)
    return path


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, files: Sequence[Path], seed: int | None,
                   started: float, scenario_hash: str | None = None, status: str = "ok",
                   extra: dict | None = None) -> Path:
    man = {
        "command": command,
        "status": status,
        "tool_version": __version__,
        "scenario_sha256": scenario_hash,
        "seed": seed,
        "wall_time_s": round(time.perf_counter() - started, 6),
        "files": [{"name": Path(f).name, "sha256": sha256_file(f)} for f in files],
    }
    if extra:
        man.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(man, indent=1) + "\n")
    return path


# ---------------------------------------------------------------------------
# simulate


def run_scenario(sc: Scenario) -> tuple[Trajectory, str | None]:
    """Integrate a scenario and attach its monitors; (trajectory, failure message)."""
    rid = RhsId(RHS_OF_SYSTEM[sc.system], epsilon=sc.epsilon)
    y0 = sc.initial_vector()
    t_eval = None
    if sc.sample_dt:
        k = int(math.floor(sc.t_end / sc.sample_dt + 1e-9))
        t_eval = np.arange(k + 1) * sc.sample_dt
        if t_eval[-1] < sc.t_end * (1 - 1e-12):
            t_eval = np.append(t_eval, sc.t_end)
        t_eval[-1] = min(t_eval[-1], sc.t_end)
    opts = StepOptions(abs_tol=sc.abs_tol, rel_tol=sc.rel_tol, dt_init=sc.dt_init)
    failure = None
    try:
        traj = integrate(rid, y0, sc.t_end, opts, t_eval=t_eval)
    except IntegrationError as e:
        traj, failure = e.trajectory, str(e)
    if sc.monitors and len(traj):
        traj = attach_monitors(traj, sc, sc.monitors)
    return traj, failure


def attach_monitors(traj: Trajectory, sc: Scenario, channels: Sequence[str]) -> Trajectory:
    system = "decoupled" if sc.system == "decoupled" else sc.system
    theta0 = None
    if sc.system == "swarm" and sc.angles is not None:
        spec = sc.ring_spec
        theta0 = spec.angles
        deg = [c for c in channels if c not in ("ring_dist", "L")]
        if deg and spec.spin != 1:
            raise InputError("degenerate monitor channels need a counter-clockwise ring (spin = +1)")
        if deg and (np.any(spec.center != 0)):
            log.info("ring center is not the origin; its offset is carried by the delta coordinates")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            out = monitor_channels(traj, theta0, system, channels)
        except ValueError as e:
            raise InputError(str(e)) from None
        except RingFitError as e:
            raise InputError(f"ring_dist: {e}") from None
    for w in caught:
        log.warning("%s", w.message)
    return out


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    text = Path(args.scenario).read_text()
    try:
        sc = Scenario.from_json(text)
        if args.seed is not None:
            sc = Scenario.from_dict({**sc.to_dict(), "seed": args.seed})
    except ScenarioError as e:
        print(f"error: {args.scenario}: {e}", file=sys.stderr)
        return EXIT_INPUT
    out = _out_dir(args)
    traj, failure = run_scenario(sc)
    csv_path, jsonl_path = out / "trajectory.csv", out / "trajectory.jsonl"
    traj.to_csv(csv_path)
    traj.to_jsonl(jsonl_path)
    status = "ok" if failure is None else "integration_failed"
    write_manifest(out, "simulate", [csv_path, jsonl_path], sc.seed, started, sc.sha256(), status,
                   {"scenario": sc.to_dict(), "samples": len(traj)})
    if failure:
        print(f"error: integration failed: {failure} (partial output kept, {len(traj)} samples)",
              file=sys.stderr)
        return EXIT_INTEGRATION
    print(f"wrote {len(traj)} samples to {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# spectrum


def read_angles(path: str) -> np.ndarray:
    """Angles from a JSON list, a JSON object with key "angles", or plain text numbers."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
        if isinstance(data, dict):
            data = data.get("angles")
        arr = np.asarray(data, dtype=float).ravel()
    except (json.JSONDecodeError, TypeError, ValueError):
        try:
            arr = np.array([float(t) for t in text.replace(",", " ").split()])
        except ValueError as e:
            raise InputError(f"{path}: cannot parse angles ({e})") from None
    if arr.size < 2 or not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: need at least two finite angles")
    return arr


def _eig_table(report) -> str:
    lines = ["      Re(lambda)        Im(lambda)  mult"]
    for z, k in report.multiplicities():
        z = complex(0.0 if abs(z.real) < 5e-11 else z.real, 0.0 if abs(z.imag) < 5e-11 else z.imag)
        lines.append(f"{z.real:16.10f}  {z.imag:16.10f}  {k:4d}")
    return "\n".join(lines)


def cmd_spectrum(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args)
    files = []
    if args.omega:
        try:
            a, b, step = (float(x) for x in args.omega.split(":"))
        except ValueError:
            raise InputError("--omega expects start:stop:step") from None
        if step <= 0 or b < a:
            raise InputError("--omega needs step > 0 and stop >= start")
        omegas = a + step * np.arange(int(math.floor((b - a) / step + 1e-9)) + 1)
        rows = omega_gap_sweep(omegas)
        files.append(write_table(out, "omega_sweep", ("omega", "gap"), rows, args.format))
        print(f"wrote {len(rows)} rows to {files[-1]}")
    else:
        if args.degenerate is not None:
            try:
                rep = degenerate_report(args.degenerate)
            except ValueError as e:
                raise InputError(str(e)) from None
        else:
            if args.angles:
                th = read_angles(args.angles)
                if ring_residual(th) > 1e-9:
                    raise InputError(f"angles do not form a ring state: |sum exp(i theta)| = {ring_residual(th):.3e}")
            else:
                if args.symmetric < 2:
                    raise InputError("--symmetric needs n >= 2")
                th = 2 * np.pi * np.arange(args.symmetric) / args.symmetric
            if is_degenerate(th):
                print("error: degenerate ring angles (particles on one line); "
                      "use --degenerate N for the degenerate spectrum", file=sys.stderr)
                return EXIT_DEGENERATE
            rep = ring_report(th)
        path = out / "spectrum.json"
        path.write_text(rep.to_json(indent=1) + "\n")
        files.append(path)
        print(f"{rep.kind} n={rep.n}" + (f" omega={rep.omega:.12g}" if rep.omega is not None else ""))
        print(f"spectral gap eta = {rep.spectral_gap:.12g}" + ("  (near axis)" if rep.gap_near_axis else ""))
        if rep.hurwitz_minors is not None:
            print("Hurwitz minors: " + ", ".join(f"{x:.10g}" for x in rep.hurwitz_minors))
        print(_eig_table(rep))
    write_manifest(out, "spectrum", files, args.seed, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# manifold


def _parse_floats(s: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in s.replace(",", " ").split()])
    except ValueError:
        raise InputError(f"cannot parse numbers from {s!r}") from None


def cmd_manifold_anchor(args, out: Path) -> list[Path]:
    rng = np.random.default_rng(args.seed or 0)
    if args.z:
        Zs = [_parse_floats(args.z)]
    else:
        if args.n is None or args.n % 2 or args.n < 4:
            raise InputError("anchor needs --z or an even --n >= 4")
        Zs = [rng.normal(size=args.n - 1) * args.scale for _ in range(args.samples)]
    rows = []
    for i, z in enumerate(Zs):
        try:
            Z = ZVector(z)
            if args.zero_energy:
                Z = project_zero_energy(Z)
        except DomainError as e:
            raise InputError(f"sample {i}: Z outside the Theta domain: max |sin theta_i| = {e.max_sin:.6g}") from None
        except ValueError as e:
            raise InputError(str(e)) from None
        Q = anchor_QZ(Z)
        f1, f2 = f1f2(Z)
        res = float(np.linalg.norm(reduced_rhs(Q), np.inf))
        rows.append([i, energy_closed(Z), Z.norm, Z.norm_r, f1, f2, res, anchor_defect(Z), *Q.reduced])
    m = len(Zs[0]) + 1 if Zs else 0
    cols = ["sample", "E", "normZ", "normZr", "f1", "f2", "rhs_norm", "anchor_defect",
            *[f"q{k}" for k in range(4 * m - 2)]]
    path = write_table(out, "anchor", cols, rows, args.format)
    if rows:
        print(f"max rhs residual at Q_Z: {max(r[6] for r in rows):.3e} over {len(rows)} samples")
    return [path]


def cmd_manifold_psi(args, out: Path) -> list[Path]:
    if args.system != "taylor":
        raise InputError(f"unknown anchored system {args.system!r}; available: taylor")
    sys_ = taylor_system()
    if args.points:
        pts = np.atleast_2d(np.loadtxt(args.points, delimiter=",", ndmin=2))
        if pts.shape[1] != 2:
            raise InputError("--points file needs two comma-separated columns x,y")
    else:
        g = np.linspace(-1, 1, args.grid + 2)[1:-1]
        pts = np.array([(x, y) for x in g for y in g])
    rows = []
    for x, y in pts:
        psi = float(anchored_psi(sys_, [x, y])[0])
        closed = x * (y - x * math.sin(x)) * (math.sin(x) + x * math.cos(x)) + x * math.sin(x)
        h = x * math.sin(x)
        d = sys_.dist_to_E([x, y])
        ny = math.hypot(x, y)
        ratio = abs(h - psi) / (ny * d) if d > 1e-12 and ny > 0 else float("nan")
        rows.append([x, y, psi, closed, abs(psi - closed), h, d, ratio])
    cols = ["x", "y", "psi", "psi_closed", "psi_err", "h", "dist_E", "ratio"]
    path = write_table(out, "psi", cols, rows, args.format)
    cert = psi_error_certificate(sys_, pts)
    cpath = out / "psi_certificate.json"
    cpath.write_text(json.dumps(cert.to_dict(), indent=1) + "\n")
    print(f"max |psi - closed form| = {max(r[4] for r in rows):.3e}; "
          f"max |h - psi| / (|y| dist(y,E)) = {cert.max_ratio:.6g}")
    return [path, cpath]


def _infer_system(labels: Sequence[str]) -> str:
    if tuple(labels) == ("x", "y", "u", "v"):
        return "decoupled"
    if labels and labels[0] == "a0":
        return "abuw"
    if labels and labels[0] == "x0":
        return "swarm"
    raise InputError(f"cannot tell which system produced columns {list(labels)[:4]}...")


def cmd_manifold_monitors(args, out: Path) -> list[Path]:
    try:
        traj = read_csv(args.inp)
    except (OSError, ValueError, StopIteration) as e:
        raise InputError(f"{args.inp}: {e}") from None
    system = args.system or _infer_system(traj.labels)
    channels = [c.strip() for c in args.channels.split(",") if c.strip()]
    if args.angles:
        theta0 = read_angles(args.angles)
    elif args.degenerate is not None:
        theta0 = degenerate_angles(args.degenerate)
    else:
        theta0 = None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            res = monitor_channels(traj, theta0, system, channels)
        except ValueError as e:
            raise InputError(str(e)) from None
    for w in caught:
        log.warning("%s", w.message)
    stem = Path(args.inp).stem + "_monitors"
    path = write_table(out, stem, res.columns(), list(res.rows()), args.format)
    print(f"appended {', '.join(channels)} to {len(res)} samples: {path}")
    return [path]


def cmd_manifold(args) -> int:
    started = time.perf_counter()
    out = _out_dir(args)
    files = {"anchor": cmd_manifold_anchor, "psi": cmd_manifold_psi,
             "monitors": cmd_manifold_monitors}[args.manifold_cmd](args, out)
    write_manifest(out, f"manifold {args.manifold_cmd}", files, args.seed, started)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def _fit_line(t: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    ok = np.isfinite(y)
    if ok.sum() < 2:
        return float("nan"), float("nan")
    slope, icpt = np.polyfit(t[ok], y[ok], 1)
    return float(slope), float(icpt)


def sweep_cell(payload: tuple[int, dict]) -> dict[str, Any]:
    """Run one sweep cell; never raises, failures are recorded in the row."""
    idx, data = payload
    row: dict[str, Any] = {c: float("nan") for c in SWEEP_COLUMNS}
    row.update(status="ok", error="")
    try:
        sc = Scenario.from_dict(data)
        traj, failure = run_scenario(Scenario.from_dict({**sc.to_dict(), "monitors": []}))
        if failure:
            row.update(status="integration_failed", error=failure)
        if sc.system == "swarm" and len(traj):
            last = Trajectory(traj.times[-1:], traj.states[-1:], {}, traj.labels)
            row["terminal_ring_dist"] = float(attach_monitors(last, sc, ["ring_dist"]).monitors["ring_dist"][0])
            if sc.angles is not None and degenerate_phase(sc.ring_spec.angles) is not None \
                    and sc.ring_spec.spin == 1:
                m = attach_monitors(traj, sc, ["E", "DL"]).monitors
                t = traj.times
                E, DL = m["E"], m["DL"]
                pos = E > 0
                if pos.sum() >= 2:
                    row["E_decay_rate"] = -_fit_line(t[pos], np.log(E[pos]))[0]
                good = DL > 0
                if good.sum() >= 2:
                    s, c = _fit_line(t[good], 1.0 / DL[good])
                    row["DL_inv_slope"], row["DL_inv_intercept"] = s, c
    except (ScenarioError, InputError, ValueError, RingFitError) as e:
        row.update(status="error", error=str(e))
    row["cell"] = idx
    return row


def expand_grid(cfg: dict, base_seed: int) -> tuple[list[str], list[dict]]:
    if not isinstance(cfg, dict) or "template" not in cfg:
        raise InputError("sweep config needs a 'template' scenario object and a 'grid' object")
    tmpl = cfg["template"]
    grid = cfg.get("grid", {})
    if not isinstance(tmpl, dict) or not isinstance(grid, dict):
        raise InputError("'template' and 'grid' must be JSON objects")
    names = sorted(grid)
    for k in names:
        if not isinstance(grid[k], list):
            raise InputError(f"grid axis {k!r} must be a list")
    if not names or any(len(grid[k]) == 0 for k in names):
        return names, []
    cells = []
    for i, combo in enumerate(itertools.product(*(grid[k] for k in names))):
        d = {**tmpl, **dict(zip(names, combo))}
        if "seed" not in grid:
            d["seed"] = base_seed + i
        cells.append(d)
    return names, cells


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    try:
        cfg = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as e:
        raise InputError(f"{args.config}: invalid JSON at line {e.lineno}: {e.msg}") from None
    names, cells = expand_grid(cfg, args.seed or 0)
    out = _out_dir(args)
    payload = list(enumerate(cells))
    if args.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(sweep_cell, payload))
    else:
        results = [sweep_cell(p) for p in payload]
    results.sort(key=lambda r: r["cell"])
    cols = ["cell", *names, *SWEEP_COLUMNS]
    rows = [[r["cell"], *(cells[r["cell"]][k] for k in names), *(r[c] for c in SWEEP_COLUMNS)]
            for r in results]
    path = write_table(out, "sweep", cols, rows, args.format)
    write_manifest(out, "sweep", [path], args.seed, started,
                   extra={"cells": len(cells), "failed": sum(r["status"] != "ok" for r in results)})
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _out_dir(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _globals(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--out", default=d("out"), help="output directory (default: out)")
    parser.add_argument("--seed", type=int, default=d(None), help="random seed")
    parser.add_argument("--jobs", type=int, default=d(1), help="parallel sweep workers")
    parser.add_argument("--format", choices=("csv", "jsonl", "json"), default=d("csv"),
                        help="format of tabular outputs (default: csv)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ringswarm", description="Ring-state swarm dynamics toolkit")
    p.add_argument("--version", action="version", version=f"ringswarm {__version__}")
    _globals(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="integrate a scenario file")
    _globals(s, suppress=True)
    s.add_argument("scenario", help="scenario JSON file")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("spectrum", help="Jacobian spectrum at a ring state")
    _globals(s, suppress=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--angles", help="file with ring angles")
    g.add_argument("--degenerate", type=int, metavar="N", help="degenerate ring with even N")
    g.add_argument("--symmetric", type=int, metavar="N", help="regular N-gon ring")
    g.add_argument("--omega", metavar="A:B:STEP", help="gap of f_omega over a grid of omega")
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("manifold", help="center-manifold tools")
    _globals(s, suppress=True)
    ms = s.add_subparsers(dest="manifold_cmd", required=True)
    a = ms.add_parser("anchor", help="anchor points Q_Z and residuals")
    _globals(a, suppress=True)
    a.add_argument("--n", type=int, help="particle count (even)")
    a.add_argument("--samples", type=int, default=10)
    a.add_argument("--scale", type=float, default=0.05, help="std of random Z entries")
    a.add_argument("--z", help="explicit Z, comma separated")
    a.add_argument("--zero-energy", action="store_true", help="project Z onto E(Z) = 0 first")
    a = ms.add_parser("psi", help="anchored approximation Psi and its error certificate")
    _globals(a, suppress=True)
    a.add_argument("--system", default="taylor")
    a.add_argument("--grid", type=int, default=50, help="grid points per axis on (-1, 1)")
    a.add_argument("--points", help="CSV file of x,y points instead of the grid")
    a = ms.add_parser("monitors", help="attach monitor channels to a trajectory CSV")
    _globals(a, suppress=True)
    a.add_argument("--in", dest="inp", required=True, help="trajectory CSV")
    a.add_argument("--channels", required=True, help=f"comma separated subset of {','.join(MONITOR_NAMES)}")
    a.add_argument("--system", choices=("swarm", "abuw", "decoupled"))
    a.add_argument("--angles", help="file with the reference ring angles")
    a.add_argument("--degenerate", type=int, metavar="N", help="reference is the degenerate ring of N")
    s.set_defaults(func=cmd_manifold)

    s = sub.add_parser("sweep", help="run a parameter grid of scenarios")
    _globals(s, suppress=True)
    s.add_argument("config", help="sweep config JSON")
    s.set_defaults(func=cmd_sweep)
    return p


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
             "info": logging.INFO, "debug": logging.DEBUG}.get(os.environ.get("RINGSWARM_LOG", "warn").lower(),
                                                              logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except DegenerateAnglesError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DEGENERATE


if __name__ == "__main__":
    sys.exit(main())
