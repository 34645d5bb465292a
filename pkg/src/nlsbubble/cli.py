"""Config-driven experiment runner.

Every run writes into its output directory the fully resolved config
(``config.json``), a ``summary.json`` with fitted rates and pass/fail flags,
CSV time series, binary snapshots and a ``manifest.json`` with library
versions and SHA-256 checksums of all other files.  Outputs depend only on the
config, so identical configs give byte-identical directories.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .decompose import build_records, modulation_residuals, project_out_modes, track_decompositions, write_records
from .diagnostics import (
    CutoffFamily,
    centered_derivative,
    double_average,
    energy_quantization_check,
    fit_envelope,
    fit_rate,
    localized_virial,
    modified_localized_virial,
    soliton_virial,
    trend_inequality,
)
from .errors import ConfigInvalid, GridMismatch, NLSBubbleError
from .evolve import SolverConfig, Trajectory, estimate_blowup_time, gradient_scale, run
from .field import Field, Grid, check_boundary, grad_norm, h1_norm, l2_norm, load_field, sigma_norm
from .groundstate import GroundState, q_closed_form_1d, radial_residual_q, rho_residual, solve_ground_state, solve_rho
from .profiles import ModParams, ProfileSpec, make_U, pseudo_conformal_params, soliton_params, sum_S, sum_W

MODES = ("groundstate", "evolve", "decompose", "verify", "rates", "soliton")

DEFAULTS: dict = {
    "mode": "verify",
    "seed": 0,
    "output": "nlsbubble_out",
    "profile": {"omega": [1.0], "centers": [[0.0]], "vartheta": [0.0], "T": 1.0, "frame": "blowup"},
    "grid": {"d": 1, "n": 2048, "box": 60.0},
    "solver": SolverConfig().to_dict(),
    "run": {
        "t0": 0.0,
        "n_save": 11,
        "spacing": "auto",
        "scale": "analytic",
        "write_snapshots": True,
        "perturbation": {"eps": 0.0, "width": 2.0, "kick": 0.3, "project": True},
    },
    "groundstate": {"d": 1, "r_max": 40.0, "n": 8001, "tol": 1e-8},
    "diagnostics": {
        "A": 10.0,
        "stride": 1,
        "times": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
        "A_values": [2.0, 5.0, 10.0, 20.0, 40.0],
        "envelope_power": 1.0,
        "ortho_tol": 1e-10,
        "reconstruction_tol": 1e-10,
        "mod_tol": 1e-4,
        "mass_tol": 1e-8,
        "quantization_tol": 1e-6,
    },
}


# ---------------------------------------------------------------------------
# config handling


def _merge(base: dict, new: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in new.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigInvalid(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigInvalid(f"{where!r} must be a mapping")
            out[key] = _merge(base[key], val, where + ".")
        else:
            if isinstance(val, dict):
                raise ConfigInvalid(f"{where!r} must not be a mapping")
            out[key] = val
    return out


def _parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigInvalid(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.strip().split("."), val


def resolve_config(cfg: dict | None = None, overrides=(), mode: str | None = None) -> dict:
    """Merge ``cfg`` and dotted ``key=value`` overrides into the defaults, rejecting unknown keys."""
    out = _merge(DEFAULTS, cfg or {})
    for text in overrides:
        keys, val = _parse_override(text)
        patch: dict = {}
        node = patch
        for k in keys[:-1]:
            node[k] = {}
            node = node[k]
        node[keys[-1]] = val
        out = _merge(out, patch)
    if mode is not None:
        out["mode"] = mode
    if out["mode"] not in MODES:
        raise ConfigInvalid(f"mode must be one of {MODES}")
    # validate the typed sections up front
    _spec(out)
    _grid(out)
    _solver(out)
    if out["run"]["spacing"] not in ("auto", "uniform", "log"):
        raise ConfigInvalid("run.spacing must be auto, uniform or log")
    if out["run"]["scale"] not in ("analytic", "gradient"):
        raise ConfigInvalid("run.scale must be analytic or gradient")
    if int(out["run"]["n_save"]) < 2:
        raise ConfigInvalid("run.n_save must be at least 2")
    return out


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalid("config must be a JSON object")
    return data


def _spec(cfg: dict) -> ProfileSpec:
    try:
        return ProfileSpec.from_dict(cfg["profile"])
    except NLSBubbleError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigInvalid(f"invalid profile: {exc}") from exc


def _grid(cfg: dict) -> Grid:
    g = cfg["grid"]
    try:
        return Grid.centered(int(g["d"]), int(g["n"]), float(g["box"]))
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"invalid grid: {exc}") from exc


def _solver(cfg: dict) -> SolverConfig:
    try:
        return SolverConfig(**cfg["solver"])
    except TypeError as exc:
        raise ConfigInvalid(f"invalid solver section: {exc}") from exc


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def _write_csv(path: Path, columns: list[str], rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
    return path


def _manifest(out: Path) -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    sums = {str(p.relative_to(out)): hashlib.sha256(p.read_bytes()).hexdigest() for p in files}
    versions = {
        "nlsbubble": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }
    return _write_json(out / "manifest.json", {"versions": versions, "sha256": sums})


# ---------------------------------------------------------------------------
# shared pieces


def _initial_data(cfg: dict, spec: ProfileSpec, grid: Grid, t0: float) -> Field:
    u = sum_W(spec, t0, grid) if spec.frame == "soliton" else sum_S(spec, t0, grid)
    pert = cfg["run"]["perturbation"]
    eps = float(pert["eps"])
    if eps == 0:
        return u
    x = np.stack(grid.coords)
    r2 = np.sum(x**2, axis=0)
    bump = np.exp(-r2 / (2 * float(pert["width"]) ** 2)) * np.exp(1j * float(pert["kick"]) * np.sum(x, axis=0))
    if pert["project"]:
        params = soliton_params(spec, t0) if spec.frame == "soliton" else pseudo_conformal_params(spec, t0)
        bump = project_out_modes(bump, params, grid)
    bump = bump / math.sqrt(float(np.sum(np.abs(bump) ** 2) * grid.dV))
    return u.with_values(u.values + eps * bump)


def _save_times(cfg: dict, spec: ProfileSpec, solver: SolverConfig, t0: float) -> np.ndarray:
    n = int(cfg["run"]["n_save"])
    spacing = cfg["run"]["spacing"]
    t1 = solver.t_end
    if spacing == "auto":
        spacing = "log" if (spec.frame == "blowup" and solver.blowup) else "uniform"
    if spacing == "log":
        if spec.T is None or t1 >= spec.T:
            raise ConfigInvalid("log spacing needs t_end < T")
        L = np.logspace(math.log10(spec.T - t0), math.log10(spec.T - t1), n)
        return spec.T - L
    return np.linspace(t0, t1, n)


def _evolve(cfg: dict, spec: ProfileSpec, grid: Grid) -> Trajectory:
    solver = _solver(cfg)
    t0 = float(cfg["run"]["t0"])
    u0 = _initial_data(cfg, spec, grid, t0)
    times = _save_times(cfg, spec, solver, t0)
    scale_fn = None
    if solver.blowup and cfg["run"]["scale"] == "analytic":
        if spec.T is None:
            raise ConfigInvalid("analytic scale needs the blow-up time T")
        wmin = float(np.min(spec.omega))
        scale_fn = lambda u: wmin * (spec.T - u.time)  # noqa: E731
    return run(u0, solver, save_times=times[1:-1], scale_fn=scale_fn)


def _exact(spec: ProfileSpec, t: float, grid: Grid) -> Field:
    return sum_W(spec, t, grid, check=False) if spec.frame == "soliton" else sum_S(spec, t, grid, check=False)


def _write_traj(traj: Trajectory, out: Path, cfg: dict):
    traj.write_ledger(out / "ledger.csv")
    if cfg["run"]["write_snapshots"]:
        traj.write_snapshots(out / "snapshots")


def _drift(traj: Trajectory) -> dict:
    led = traj.ledger_array()
    return {
        "mass": float(np.max(np.abs(led[:, 1] - led[0, 1]))),
        "energy": float(np.max(np.abs(led[:, 2] - led[0, 2]))),
    }


# ---------------------------------------------------------------------------
# pipelines


def _run_groundstate(cfg: dict, out: Path) -> tuple[dict, bool]:
    g = cfg["groundstate"]
    d, tol = int(g["d"]), float(g["tol"])
    Q = solve_ground_state(d, float(g["r_max"]), int(g["n"]), tol)
    rho = solve_rho(Q)
    Q.save(out / "Q.csv", extra={"rho": rho})
    c = GroundState.from_profiles(Q, rho).constants
    summary = {
        "massQ": c.massQ,
        "energyQ": c.energyQ,
        "gradQ2": c.gradQ2,
        "xQ2": c.xQ2,
        "rho_xq": c.rho_xq,
        "residual_Q": radial_residual_q(Q),
        "residual_rho": rho_residual(rho, Q),
    }
    ok = summary["residual_Q"] <= tol and abs(c.energyQ) <= tol
    if d == 1:
        r = np.linspace(0, Q.r_max, Q.values.size)
        summary["closed_form_error"] = float(np.max(np.abs(Q(r) - q_closed_form_1d(r))))
        summary["massQ_closed_form"] = math.sqrt(3) * math.pi / 2
        ok = ok and abs(c.massQ - summary["massQ_closed_form"]) <= 1e-6
    return summary, ok


def _run_evolve(cfg: dict, out: Path) -> tuple[dict, bool]:
    spec, grid = _spec(cfg), _grid(cfg)
    traj = _evolve(cfg, spec, grid)
    _write_traj(traj, out, cfg)
    rows = []
    for u in traj.snapshots:
        try:
            ex = _exact(spec, u.time, grid)
            rows.append((u.time, l2_norm(u - ex), h1_norm(u - ex), grad_norm(u)))
        except (ValueError, NLSBubbleError):
            rows.append((u.time, float("nan"), float("nan"), grad_norm(u)))
    _write_csv(out / "errors.csv", ["t", "l2_error", "h1_error", "grad_norm"], rows)
    summary = {
        "stop_reason": traj.stop_reason,
        "steps": traj.steps,
        "final_time": traj.times[-1],
        "drift": _drift(traj),
        "max_h1_error": float(np.nanmax([r[2] for r in rows])),
    }
    return summary, True


def _decompose_pipeline(cfg: dict, spec: ProfileSpec, snapshots: list[Field], out: Path, ledger0=None):
    diag = cfg["diagnostics"]
    decs = track_decompositions(snapshots, spec, ortho_tol=float(diag["ortho_tol"]))
    records = build_records(decs, spec, ledger0)
    write_records(records, out / "diagnostics.csv")
    cut = CutoffFamily(float(diag["A"]))
    fun_rows = []
    for dc in decs:
        fun_rows.append((dc.t, localized_virial(dc, cut), modified_localized_virial(dc, cut)))
    _write_csv(out / "functionals.csv", ["t", "L", "L_mod"], fun_rows)
    recon = []
    for u, dc in zip(snapshots, decs):
        recon.append(l2_norm(u - (make_U(dc.params, None, u.grid) + dc.remainder)))
    return decs, records, {
        "max_ortho_residual": max(dc.residual for dc in decs),
        "max_reconstruction": max(recon),
        "max_newton_iters": max(dc.newton_iters for dc in decs),
        "A": cut.A,
    }


def _run_decompose(cfg: dict, out: Path) -> tuple[dict, bool]:
    spec, grid = _spec(cfg), _grid(cfg)
    traj = _evolve(cfg, spec, grid)
    _write_traj(traj, out, cfg)
    led = traj.ledger[0]
    _, records, summ = _decompose_pipeline(cfg, spec, traj.snapshots, out, (led[1], led[2]))
    diag = cfg["diagnostics"]
    summ["drift"] = _drift(traj)
    ok = summ["max_ortho_residual"] <= float(diag["ortho_tol"]) and summ["max_reconstruction"] <= float(diag["reconstruction_tol"])
    return summ, ok


def _run_verify(cfg: dict, out: Path) -> tuple[dict, bool]:
    spec, grid = _spec(cfg), _grid(cfg)
    diag = cfg["diagnostics"]
    times = [float(t) for t in diag["times"]]
    snaps = [_exact(spec, t, grid) for t in times]
    for u in snaps:
        check_boundary(u)
    _, records, summ = _decompose_pipeline(cfg, spec, snaps, out)
    checks = {
        "orthogonality": summ["max_ortho_residual"] <= float(diag["ortho_tol"]),
        "reconstruction": summ["max_reconstruction"] <= float(diag["reconstruction_tol"]),
    }
    if len(records) >= 3:
        # Mod vanishes up to the O(dt^2) error of the time differences: either it is
        # below mod_tol or halving the spacing shrinks it at second order.  The order
        # is read on interior slices, where the differences are centred.
        summ["max_mod"] = max(r.mod for r in records)
        fine_t = np.sort(np.concatenate([times, 0.5 * (np.array(times[1:]) + np.array(times[:-1]))]))
        fine = [_exact(spec, t, grid) for t in fine_t]
        fine_params = [dc.params for dc in track_decompositions(fine, spec, ortho_tol=float(diag["ortho_tol"]))]
        mod_fine = modulation_residuals(fine_params).mod[::2][1:-1]
        coarse = np.array([r.mod for r in records])[1:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            order = float(np.log2(np.max(coarse) / np.max(mod_fine)))
        summ["mod_refined"] = float(np.max(mod_fine))
        summ["mod_observed_order"] = order
        checks["mod"] = summ["max_mod"] <= float(diag["mod_tol"]) or order >= 1.8
    if spec.frame == "blowup":
        summ["max_localized_mass"] = max(float(np.max(np.abs(r.M))) for r in records)
        checks["localized_mass"] = summ["max_localized_mass"] <= float(diag["mass_tol"])
        summ["quantization"] = [energy_quantization_check(u, spec) for u in snaps]
        checks["quantization"] = max(abs(q) for q in summ["quantization"]) <= float(diag["quantization_tol"])
    summ["checks"] = checks
    return summ, all(checks.values())


def _run_rates(cfg: dict, out: Path) -> tuple[dict, bool]:
    spec, grid = _spec(cfg), _grid(cfg)
    if spec.T is None:
        raise ConfigInvalid("rates mode needs a blow-up frame with T")
    traj = _evolve(cfg, spec, grid)
    _write_traj(traj, out, cfg)
    times = traj.times
    gn = np.array([grad_norm(u) for u in traj.snapshots])
    dev = np.array([h1_norm(u - _exact(spec, u.time, grid)) ** 2 for u in traj.snapshots])
    _write_csv(out / "rates.csv", ["t", "grad_norm", "h1_deviation_sq"], zip(times, gn, dev))
    fit = fit_rate(times, gn, "power", T=spec.T)
    summary = {"grad_fit": fit.to_dict(), "drift": _drift(traj), "stop_reason": traj.stop_reason}
    summary["T_estimate"] = estimate_blowup_time(traj)
    summary["T_relative_error"] = abs(summary["T_estimate"] - spec.T) / spec.T
    if np.any(dev > 0):
        try:
            da = double_average(times, dev, spec.T)
            summary["double_average_final"] = float(da["value"][0])
            summary["double_average_tail_flag"] = da["tail_flag"]
        except NLSBubbleError as exc:
            summary["double_average_error"] = str(exc)
    summary["exponent_within_0.02"] = abs(fit.exponent + 1) <= 0.02
    return summary, True


def _run_soliton(cfg: dict, out: Path) -> tuple[dict, bool]:
    spec, grid = _spec(cfg), _grid(cfg)
    if spec.frame != "soliton":
        raise ConfigInvalid("soliton mode needs profile.frame = 'soliton'")
    traj = _evolve(cfg, spec, grid)
    _write_traj(traj, out, cfg)
    diag = cfg["diagnostics"]
    stride = int(diag["stride"])
    snaps = traj.snapshots[::stride]
    A_values = [float(a) for a in diag["A_values"]]
    I, G, MA = [], [], []
    for u in snaps:
        z = u - sum_W(spec, u.time, grid, check=False)
        r = soliton_virial(z, A_values)
        I.append(r["I"])
        G.append(grad_norm(z) ** 2)
        MA.append([r["M_A"][a] for a in A_values] + [r["x2"]])
    ts = np.array([u.time for u in snaps])
    sm, dI = centered_derivative(ts, I)
    lhs = dI - np.array(G)[1:-1]
    p = float(diag["envelope_power"])
    train = slice(0, None, 2)
    env_train = fit_envelope(sm[train], lhs[train], lambda s: s**-p)
    C = float(env_train[0] * sm[0] ** p) if env_train.size else 0.0
    env = C * sm**-p
    held = trend_inequality(lhs[1::2], env[1::2])
    full = trend_inequality(lhs, env)
    _write_csv(out / "soliton_virial.csv", ["s", "dI_ds", "grad_z_sq", "lhs", "envelope"], zip(sm, dI, np.array(G)[1:-1], lhs, env))
    _write_csv(out / "M_A.csv", ["s", *[f"M_A_{a:g}" for a in A_values], "xz_sq"], [(t, *row) for t, row in zip(ts, MA)])
    summary = {
        "stride": stride,
        "envelope": {"C": C, "power": p, "fit_slices": "even"},
        "fraction_all": full["fraction"],
        "fraction_held_out": held["fraction"],
        "M_A_monotone": bool(np.all(np.diff(np.array(MA)[:, :-1], axis=1) >= -1e-14)),
        "drift": _drift(traj),
    }
    return summary, True


_PIPELINES = {
    "groundstate": _run_groundstate,
    "evolve": _run_evolve,
    "decompose": _run_decompose,
    "verify": _run_verify,
    "rates": _run_rates,
    "soliton": _run_soliton,
}


def run_experiment(cfg: dict, out=None) -> int:
    """Run a resolved config; returns the process exit status (0 iff every hard invariant holds)."""
    cfg = resolve_config(cfg)
    out = Path(out if out is not None else cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg)
    status = 0
    try:
        summary, ok = _PIPELINES[cfg["mode"]](cfg, out)
    except ConfigInvalid:
        raise
    except NLSBubbleError as exc:
        summary, ok = {"error": type(exc).__name__, "message": str(exc)}, False
    summary = {"mode": cfg["mode"], "pass": bool(ok), **summary}
    _write_json(out / "summary.json", summary)
    _manifest(out)
    if not ok:
        status = 1
    return status


# ---------------------------------------------------------------------------
# trajectory comparison


def _load_dir(path) -> list[Field]:
    files = sorted(Path(path).glob("*.nlsf"))
    if not files:
        raise FileNotFoundError(f"no snapshots in {path}")
    return [load_field(f) for f in files]


def compare_trajectories(a, b, norm: str = "H1", out=None) -> list[tuple]:
    """Pair each snapshot of ``a`` with the nearest-time snapshot of ``b`` and measure distances.

    Returns rows ``(t_a, t_b, skew, distance)`` and writes them as CSV when ``out`` is given.
    """
    fa = _load_dir(a) if not isinstance(a, list) else a
    fb = _load_dir(b) if not isinstance(b, list) else b
    if norm not in ("L2", "H1", "Sigma"):
        raise ValueError("norm must be L2, H1 or Sigma")
    tb = np.array([u.time for u in fb])
    rows = []
    for u in fa:
        j = int(np.argmin(np.abs(tb - u.time)))
        v = fb[j]
        if not u.grid.same_as(v.grid):
            raise GridMismatch("snapshot grids differ")
        diff = Field(u.grid, u.values - v.values, u.time)
        if norm == "L2":
            dist = l2_norm(diff)
        elif norm == "H1":
            dist = h1_norm(diff)
        else:
            dist = sigma_norm(diff, guard_tol=math.inf)[0]
        rows.append((u.time, v.time, v.time - u.time, dist))
    if out is not None:
        _write_csv(Path(out), ["t_a", "t_b", "skew", "distance"], rows)
    return rows


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlsbubble", description="Multi-bubble NLS experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for mode in MODES:
        sp = sub.add_parser(mode, help=f"run the {mode} pipeline")
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="seed recorded with the run")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="dotted config override (repeatable)")
    cp = sub.add_parser("compare", help="distances between two snapshot directories")
    cp.add_argument("a")
    cp.add_argument("b")
    cp.add_argument("--norm", default="H1", choices=["L2", "H1", "Sigma"])
    cp.add_argument("--out", required=True, help="CSV path")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "compare":
            compare_trajectories(args.a, args.b, args.norm, args.out)
            return 0
        raw = load_config(args.config) if args.config else {}
        overrides = list(args.override)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = resolve_config(raw, overrides, mode=args.command)
        return run_experiment(cfg, args.out)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (GridMismatch, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
