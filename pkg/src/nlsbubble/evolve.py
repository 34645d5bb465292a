"""Split-step Fourier integrator for ``i u_t + Lap u + |u|^(4/d) u = 0``."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .cutoffs import VirialWeight
from .errors import ConfigInvalid, DriftExceeded, NonFinite, NotBlowingUp, ResolutionExceeded
from .field import Field, energy, grad_norm, gradient, l2_norm, mass, momentum, save_field
from .groundstate import ground_state


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping options.

    In blow-up mode the step is ``min(dt0, cfl_blowup * lambda_min^2)`` with
    ``lambda_min`` from ``scale_fn`` (or a gradient-based estimate).  Runs stop
    at ``t_end``; ``on_resolution`` chooses between raising and stopping when
    ``lambda_min`` drops below ``min_points`` grid spacings.
    """

    dt0: float = 1e-3
    t_end: float = 1.0
    cfl_blowup: float = 0.01
    blowup: bool = False
    dealias: bool = True
    drift_tol: float = 1e-8
    nonlinear: bool = True
    min_points: float = 8.0
    on_resolution: str = "raise"
    ledger_stride: int = 1
    order: int = 2

    def __post_init__(self):
        if not self.dt0 > 0:
            raise ConfigInvalid("dt0 must be positive")
        if not 0 < self.cfl_blowup <= 1:
            raise ConfigInvalid("cfl_blowup must lie in (0, 1]")
        if self.on_resolution not in ("raise", "stop"):
            raise ConfigInvalid("on_resolution must be 'raise' or 'stop'")
        if self.order not in (2, 4):
            raise ConfigInvalid("order must be 2 (Strang) or 4 (triple-jump composition)")
        if self.drift_tol <= 0 or self.ledger_stride < 1:
            raise ConfigInvalid("drift_tol must be positive and ledger_stride >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trajectory:
    """Saved snapshots plus the conservation ledger."""

    snapshots: list[Field] = field(default_factory=list)
    ledger: list[tuple] = field(default_factory=list)
    stop_reason: str = "t_end"
    steps: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([u.time for u in self.snapshots])

    @property
    def grid(self):
        return self.snapshots[0].grid

    def append(self, u: Field):
        if self.snapshots and not u.time > self.snapshots[-1].time:
            raise ValueError("snapshot times must increase strictly")
        self.snapshots.append(u)

    def ledger_array(self) -> np.ndarray:
        return np.array(self.ledger, dtype=float)

    def ledger_columns(self) -> list[str]:
        d = self.grid.d
        mom = ["momentum_x", "momentum_y"][:d]
        return ["t", "mass", "energy", *mom, "dt"]

    def write_ledger(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.ledger_columns())
            for row in self.ledger:
                w.writerow([repr(float(x)) for x in row])
        return path

    def write_snapshots(self, directory, stride: int = 1) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        out = []
        for i, u in enumerate(self.snapshots[::stride]):
            out.append(save_field(u, directory / f"snap_{i:05d}.nlsf"))
        return out


def _dealias_mask(grid) -> np.ndarray:
    mask = np.ones(grid.shape, dtype=bool)
    for ax, k in enumerate(grid.wavenumbers):
        kmax = np.abs(k).max()
        sel = np.abs(k) <= (2.0 / 3.0) * kmax
        shape = [1] * grid.d
        shape[ax] = -1
        mask &= sel.reshape(shape)
    return mask


_W1 = 1 / (2 - 2 ** (1 / 3))
_TRIPLE_JUMP = (_W1, 1 - 2 * _W1, _W1)


class _Stepper:
    """Caches the dealias mask for one grid."""

    def __init__(self, grid, cfg: SolverConfig):
        self.grid = grid
        self.cfg = cfg
        self.k2 = grid.k2
        self.mask = _dealias_mask(grid) if cfg.dealias else None
        self.p = 2.0 / grid.d  # |u|^(4/d) = (|u|^2)^(2/d)

    def _nl(self, v, tau):
        if not self.cfg.nonlinear:
            return v
        a2 = v.real**2 + v.imag**2
        return v * np.exp(1j * tau * a2**self.p)

    def __call__(self, v: np.ndarray, dt: float) -> np.ndarray:
        if self.cfg.order == 4:
            for w in _TRIPLE_JUMP:
                v = self.strang(v, w * dt)
            return v
        return self.strang(v, dt)

    def strang(self, v: np.ndarray, dt: float) -> np.ndarray:
        v = self._nl(v, 0.5 * dt)
        vh = np.fft.fftn(v) * np.exp(-1j * self.k2 * dt)
        if self.mask is not None:
            vh *= self.mask
        v = np.fft.ifftn(vh)
        return self._nl(v, 0.5 * dt)


def step(u: Field, dt: float, cfg: SolverConfig | None = None) -> Field:
    """One Strang step: nonlinear half step, exact linear step, nonlinear half step.

    Negative ``dt`` integrates backwards (the scheme is time-reversible).
    """
    cfg = cfg or SolverConfig()
    if dt == 0 or not np.isfinite(dt):
        raise ValueError("dt must be finite and nonzero")
    v = _Stepper(u.grid, cfg)(u.values, dt)
    if not np.all(np.isfinite(v)):
        raise NonFinite(f"non-finite samples after step at t={u.time}")
    return Field(u.grid, v, u.time + dt)


def gradient_scale(u: Field, d: int | None = None) -> float:
    """Scale estimate ``||grad Q|| ||u|| / (||Q|| ||grad u||)`` (exact for a rescaled real Q)."""
    d = d or u.grid.d
    c = ground_state(d).constants
    g = grad_norm(u)
    if g == 0:
        return math.inf
    return math.sqrt(c.gradQ2 / c.massQ) * l2_norm(u) / g


def _ledger_row(u: Field) -> tuple:
    return (u.time, mass(u), energy(u), *momentum(u))


def run(
    u0: Field,
    cfg: SolverConfig,
    save_times=None,
    scale_fn: Callable[[Field], float] | None = None,
) -> Trajectory:
    """Integrate from ``u0.time`` to ``cfg.t_end``.

    Snapshots are recorded at ``u0.time``, at every entry of ``save_times``
    (hit exactly) and at the final time.
    """
    if not np.all(np.isfinite(u0.values)):
        raise NonFinite("initial data not finite")
    t0 = u0.time
    if cfg.t_end <= t0:
        raise ConfigInvalid("t_end must exceed the initial time")
    stepper = _Stepper(u0.grid, cfg)
    hmin = max(u0.grid.h)
    scale_fn = scale_fn or gradient_scale
    targets = sorted(float(s) for s in (save_times if save_times is not None else []) if t0 < s < cfg.t_end)
    targets.append(cfg.t_end)

    traj = Trajectory()
    traj.append(u0)
    row0 = _ledger_row(u0)
    traj.ledger.append((*row0, 0.0))
    e_scale = max(abs(row0[2]), grad_norm(u0) ** 2, 1e-300)
    p_scale = max(np.abs(row0[3:]).max(), l2_norm(u0) * grad_norm(u0), 1e-300)

    v = np.array(u0.values)
    t = t0
    n_steps = 0
    ti = 0
    while ti < len(targets):
        target = targets[ti]
        dt = cfg.dt0
        if cfg.blowup:
            lam = scale_fn(Field(u0.grid, v, t))
            if lam < cfg.min_points * hmin:
                msg = f"bubble scale {lam:.3g} below {cfg.min_points:g} grid spacings at t={t:.6g}"
                if cfg.on_resolution == "raise":
                    raise ResolutionExceeded(msg)
                traj.stop_reason = "resolution"
                break
            dt = min(dt, cfg.cfl_blowup * lam**2)
        hit = t + dt >= target - 1e-12 * max(1.0, abs(target))
        if hit:
            dt = target - t
        v = stepper(v, dt)
        n_steps += 1
        t = target if hit else t + dt
        if not np.all(np.isfinite(v)):
            raise NonFinite(f"non-finite samples at t={t}")
        cur = None
        if n_steps % cfg.ledger_stride == 0 or hit:
            cur = Field(u0.grid, v, t)
            row = _ledger_row(cur)
            traj.ledger.append((*row, dt))
            if abs(row[2] - row0[2]) / e_scale > cfg.drift_tol:
                raise DriftExceeded(f"relative energy drift {abs(row[2] - row0[2]) / e_scale:.2e} at t={t:.6g}")
            if np.abs(np.asarray(row[3:]) - np.asarray(row0[3:])).max() / p_scale > cfg.drift_tol:
                raise DriftExceeded(f"relative momentum drift exceeds {cfg.drift_tol:g} at t={t:.6g}")
        if hit:
            traj.append(cur if cur is not None else Field(u0.grid, v, t))
            ti += 1
    if traj.stop_reason == "resolution" and traj.snapshots[-1].time < t:
        traj.append(Field(u0.grid, v, t))
    traj.steps = n_steps
    return traj


def run_backward(
    u1: Field,
    t0: float,
    cfg: SolverConfig,
    save_times=None,
    scale_fn: Callable[[Field], float] | None = None,
) -> Trajectory:
    """Integrate from ``u1.time`` back to ``t0 < u1.time``.

    Uses time reversal: if ``w`` solves the equation then so does
    ``conj(w(t1 - tau))``. ``cfg.t_end`` is ignored. Snapshots are returned in
    increasing time order.
    """
    t1 = u1.time
    if not t0 < t1:
        raise ConfigInvalid("t0 must precede the final time")
    w0 = Field(u1.grid, np.conj(u1.values), 0.0)
    taus = [t1 - s for s in (save_times if save_times is not None else []) if t0 < s < t1]
    rev_scale = None
    if scale_fn is not None:
        def rev_scale(w):
            return scale_fn(Field(w.grid, np.conj(w.values), t1 - w.time))
    fwd = run(w0, replace(cfg, t_end=t1 - t0), save_times=taus, scale_fn=rev_scale)
    traj = Trajectory(stop_reason=fwd.stop_reason, steps=fwd.steps)
    for w in reversed(fwd.snapshots):
        traj.append(Field(w.grid, np.conj(w.values), t1 - w.time))
    for row in reversed(fwd.ledger):
        mom = [-m for m in row[3:-1]]
        traj.ledger.append((t1 - row[0], row[1], row[2], *mom, row[-1]))
    return traj


# ---------------------------------------------------------------------------
# post-processing


def blowup_indicator(u: Field) -> float:
    """``sqrt(||grad u||^2 - 2E(u))``, the part of the gradient norm that scales like ``1/(T-t)``.

    For a pseudo-conformal blow-up solution this quantity is exactly
    proportional to ``1/(T-t)`` while ``||grad u||`` itself carries an
    additive energy constant under the square root.
    """
    g2 = grad_norm(u) ** 2
    return math.sqrt(max(g2 - 2 * energy(u), 0.0))


def estimate_blowup_time(traj: Trajectory, quantity: str = "indicator", fraction: float = 1 / 3) -> float:
    """Root of an affine least-squares fit of ``1/N(t)`` over the final ``fraction`` of the run.

    ``N`` is :func:`blowup_indicator` (default) or ``||grad u||`` when
    ``quantity == "grad"``.
    """
    times = traj.times
    if times.size < 3:
        raise NotBlowingUp("need at least three snapshots")
    t_cut = times[-1] - fraction * (times[-1] - times[0])
    sel = [i for i, s in enumerate(times) if s >= t_cut - 1e-14]
    if len(sel) < 3:
        raise NotBlowingUp("fewer than three snapshots in the fitting window")
    fn = blowup_indicator if quantity == "indicator" else grad_norm
    if quantity not in ("indicator", "grad"):
        raise ValueError("quantity must be 'indicator' or 'grad'")
    vals = np.array([fn(traj.snapshots[i]) for i in sel])
    ts = times[sel]
    if np.any(np.diff(vals) <= 0) or vals[-1] < vals[0] * (1 + 1e-6):
        raise NotBlowingUp("gradient norm is not growing over the fitting window")
    slope, icpt = np.polyfit(ts, 1 / vals, 1)
    if slope >= 0:
        raise NotBlowingUp("inverse gradient norm is not decreasing")
    return float(-icpt / slope)


def virial_terms(u: Field, w: VirialWeight) -> dict[str, float]:
    """Pieces of the local virial identities for the weight ``w`` at one snapshot.

    ``V = int Phi |u|^2``, ``J = Im int conj(u) grad u . grad Phi`` and
    ``dJ = 2 Re int Hess Phi (grad u, grad conj u) - 2/(2+d) int Lap Phi |u|^(2+4/d)
    - 1/2 int Lap^2 Phi |u|^2``, where the bilaplacian term is integrated by
    parts once so that piecewise-C^3 weights are admissible.
    """
    grid = u.grid
    d = grid.d
    dV = grid.dV
    v = u.values
    g = gradient(u)
    a2 = np.abs(v) ** 2
    V = float(np.sum(w.phi * a2) * dV)
    J = float(np.sum(np.conj(v) * np.einsum("i...,i...->...", g, w.grad)).imag * dV)
    hess_term = float(np.einsum("ij...,i...,j...->...", w.hess, g, np.conj(g)).real.sum() * dV)
    pot_term = float(np.sum(w.lap * a2 ** (1 + 2 / d)) * dV)
    grad_a2 = 2 * np.real(np.conj(v)[None] * g)
    bilap_term = -float(np.sum(np.einsum("i...,i...->...", w.grad_lap, grad_a2)) * dV)
    dJ = 2 * hess_term - 2 / (2 + d) * pot_term - 0.5 * bilap_term
    return {"V": V, "J": J, "dJ": dJ}


def virial_second_derivative_check(traj: Trajectory, weight: VirialWeight) -> dict:
    """Compare finite-difference derivatives of ``V`` and ``J`` with the virial identities.

    Requires uniformly spaced snapshots.  Reports, on interior slices, the
    mismatch of ``V'`` against ``2J``, of ``J'`` against ``dJ`` and of
    ``V''`` against ``2 dJ``.
    """
    times = traj.times
    if times.size < 3:
        raise ValueError("need at least three snapshots")
    h = np.diff(times)
    if np.ptp(h) > 1e-9 * h.mean():
        raise ValueError("snapshots must be uniformly spaced")
    dt = h.mean()
    terms = [virial_terms(u, weight) for u in traj.snapshots]
    V = np.array([x["V"] for x in terms])
    J = np.array([x["J"] for x in terms])
    dJ = np.array([x["dJ"] for x in terms])
    dV_fd = (V[2:] - V[:-2]) / (2 * dt)
    dJ_fd = (J[2:] - J[:-2]) / (2 * dt)
    d2V_fd = (V[2:] - 2 * V[1:-1] + V[:-2]) / dt**2
    first = np.abs(dV_fd - 2 * J[1:-1])
    second = np.abs(dJ_fd - dJ[1:-1])
    second_v = np.abs(d2V_fd - 2 * dJ[1:-1])
    scale = max(np.abs(dJ).max(), np.abs(J).max(), 1e-300)
    return {
        "dt": float(dt),
        "times": times[1:-1],
        "V": V,
        "J": J,
        "dJ": dJ,
        "first_mismatch": float(first.max()),
        "second_mismatch": float(second.max()),
        "second_mismatch_V": float(second_v.max()),
        "scale": float(scale),
    }
