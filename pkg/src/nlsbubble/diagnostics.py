"""Virial-type functionals of the remainder, trend tests and asymptotic rate fits."""
from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from .cutoffs import smoothstep
from .decompose import Decomposition
from .errors import InsufficientSpan
from .field import Field, Grid, check_boundary, energy, gradient, nonlinearity
from .groundstate import GroundState, ground_state
from .profiles import ProfileSpec


# ---------------------------------------------------------------------------
# cutoffs


@functools.lru_cache(maxsize=1)
def _psi_bridge() -> tuple[float, float, float]:
    """``(n, a, b)`` for ``k(t) = t^n (a + b t)`` with ``psi'(r)/r = 1 - int_0^t k``, ``t = r - 1``.

    ``k >= 0`` keeps ``psi'/r`` nonincreasing. ``a`` and ``b`` match the slope
    and curvature of ``psi'/r`` on the exponential branch at ``r = 2``; ``n``
    matches its value.
    """
    e2 = math.exp(-2.0)
    g2 = (2 - e2) / 2
    k2 = (2 - 3 * e2) / 4  # -(psi'/r)' at r = 2
    kp2 = e2 - (2 - e2) / 4  # -(psi'/r)'' at r = 2

    def coeffs(n):
        b = kp2 - k2 * n
        return k2 - b, b

    def gap(n):
        a, b = coeffs(n)
        return a / (n + 1) + b / (n + 2) - (1 - g2)

    n = optimize.brentq(gap, 1.5, 50.0, xtol=1e-15)
    return (n, *coeffs(n))


def psi_prime(r, nu: int = 0) -> np.ndarray:
    """``psi'(r)`` (``nu = 0``), ``psi''`` (1) or ``psi'''`` (2).

    ``psi'(r) = r`` for ``r <= 1`` and ``2 - e^(-r)`` for ``r >= 2``. In between
    ``psi'/r`` decreases monotonically, so ``psi'/r - psi'' >= 0`` everywhere;
    ``psi'``, ``psi''`` and ``psi'''`` are continuous across both joins.
    """
    r = np.asarray(r, dtype=float)
    n, a, b = _psi_bridge()
    t = np.clip(r - 1, 0.0, 1.0)
    g = 1 - a * t ** (n + 1) / (n + 1) - b * t ** (n + 2) / (n + 2)
    k = t**n * (a + b * t)
    if nu == 0:
        mid = r * g
    elif nu == 1:
        mid = g - r * k
    else:
        mid = -2 * k - r * (n * t ** (n - 1) * (a + b * t) + b * t**n)
    inner = [r, np.ones_like(r), np.zeros_like(r)][nu]
    e = np.exp(-r)
    outer = [2 - e, e, -e][nu]
    return np.where(r <= 1, inner, np.where(r >= 2, outer, mid))


def check_psi_constraints(n: int = 10_000, r_max: float = 10.0) -> dict[str, float]:
    """Sample ``|psi'''/psi''|`` and ``psi'/r - psi''`` on ``n`` points in ``(0, r_max]``."""
    r = np.linspace(r_max / n, r_max, n)
    p1, p2, p3 = psi_prime(r), psi_prime(r, 1), psi_prime(r, 2)
    return {
        "max_ratio": float(np.max(np.abs(p3 / p2))),
        "min_p2": float(p2.min()),
        "min_convexity_gap": float(np.min(p1 / r - p2)),
    }


def phi_coercivity(r) -> np.ndarray:
    """Plateau-exponential weight: 1 for ``r <= 1``, ``e^(-r)`` for ``r >= 2``."""
    r = np.asarray(r, dtype=float)
    return np.exp(-r * smoothstep(r - 1))


def varphi(r) -> np.ndarray:
    """Compact quadratic weight: ``r^2`` for ``r <= 1``, 0 for ``r >= 2``."""
    r = np.asarray(r, dtype=float)
    return r**2 * (1 - smoothstep(r - 1))


def varphi_grad(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return 2 * r * (1 - smoothstep(r - 1)) - r**2 * smoothstep(r - 1, 1)


@dataclass(frozen=True)
class CutoffFamily:
    """Scaled cutoffs ``chi_A = A^2 chi(x/A)``, ``phi_A = phi(x/A)`` and ``varphi_A = A^2 varphi(x/A)``."""

    A: float = 10.0

    def grad_chi(self, y: np.ndarray) -> np.ndarray:
        """``grad chi_A(y) = A psi'(|y|/A) y/|y|`` for points ``y`` of shape ``(d, ...)``."""
        r = np.sqrt(np.sum(y**2, axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(r > 0, self.A * psi_prime(r / self.A) / np.where(r > 0, r, 1.0), 1.0)
        return fac * y

    def phi(self, y: np.ndarray) -> np.ndarray:
        return phi_coercivity(np.sqrt(np.sum(y**2, axis=0)) / self.A)

    def varphi(self, y: np.ndarray) -> np.ndarray:
        return self.A**2 * varphi(np.sqrt(np.sum(y**2, axis=0)) / self.A)


def interior_psi_prime(r, radius: float) -> np.ndarray:
    """Radial profile of ``grad chi`` for the interior virial: ``r`` up to ``radius``,
    constant ``1.25 radius`` beyond ``1.5 radius`` and a monotone C^2 bridge in between."""
    r = np.asarray(r, dtype=float)
    s = radius / 2
    t = np.clip((r - radius) / s, 0.0, 1.0)
    bridge = radius + s * (t - (t**6 - 3 * t**5 + 2.5 * t**4))
    return np.where(r <= radius, r, bridge)


# ---------------------------------------------------------------------------
# remainder functionals


def _morawetz_parts(dec: Decomposition, grad_chi_fn) -> np.ndarray:
    """``Im int G_k . grad R conj(R) Phi_k`` per bubble for vector fields ``G_k``."""
    grid = dec.grid
    R = dec.remainder.values
    gR = gradient(dec.remainder)
    x = np.stack(grid.coords)
    out = []
    for k, w in enumerate(dec.loc.weights):
        G = grad_chi_fn(k, x)
        out.append(float(np.sum(np.einsum("i...,i...->...", G, gR) * np.conj(R) * w.phi).imag * grid.dV))
    return np.array(out)


def _chi_field(dec: Decomposition, cutoffs: CutoffFamily):
    p = dec.params

    def fn(k, x):
        y = (x - p.alpha[k].reshape((-1,) + (1,) * (x.ndim - 1))) / p.lam[k]
        return cutoffs.grad_chi(y)

    return fn


def morawetz_terms(dec: Decomposition, cutoffs: CutoffFamily) -> np.ndarray:
    return _morawetz_parts(dec, _chi_field(dec, cutoffs))


def localized_virial(dec: Decomposition, cutoffs: CutoffFamily, gs: GroundState | None = None) -> float:
    """``sum_k 1/2 Im int grad chi_A((x-alpha_k)/lambda_k) . grad R conj(R) Phi_k - sum_k gamma_k ||xQ||^2 / (4 lambda_k)``."""
    gs = gs or ground_state(dec.grid.d)
    p = dec.params
    m = morawetz_terms(dec, cutoffs)
    return float(0.5 * m.sum() - np.sum(p.gamma / (4 * p.lam)) * gs.constants.xQ2)


def modified_localized_virial(dec: Decomposition, cutoffs: CutoffFamily, gs: GroundState | None = None) -> float:
    """``sum_k gamma_k/(2 lambda_k) Im int (...) - sum_k gamma_k^2 ||xQ||^2 / (8 lambda_k^2)``."""
    gs = gs or ground_state(dec.grid.d)
    p = dec.params
    m = morawetz_terms(dec, cutoffs)
    ratio = p.gamma / p.lam
    return float(np.sum(0.5 * ratio * m) - np.sum(ratio**2 / 8) * gs.constants.xQ2)


def generalized_energy(dec: Decomposition, cutoffs: CutoffFamily, gs: GroundState | None = None) -> float:
    """Quadratic energy of the remainder plus the modified Morawetz correction.

    ``1/2 int |grad R|^2 + 1/2 sum_k lambda_k^-2 int |R|^2 Phi_k
    - Re int [F(U+R) - F(U) - f(U) conj(R)] + sum_k gamma_k/(2 lambda_k) Im int (...)``
    with ``F(z) = d/(2d+4) |z|^(2+4/d)``.
    """
    grid = dec.grid
    d = grid.d
    gs = gs or ground_state(d)
    p = dec.params
    R = dec.remainder.values
    U = sum(dec.bubble(k, gs) for k in range(p.K))
    dV = grid.dV
    gR = gradient(dec.remainder)
    kin = 0.5 * float(np.sum(np.abs(gR) ** 2) * dV)
    loc_mass = 0.5 * sum(float(np.sum(np.abs(R) ** 2 * w.phi) * dV) / p.lam[k] ** 2 for k, w in enumerate(dec.loc.weights))
    c = d / (2 * d + 4)
    q = 2 + 4 / d
    pot = float(np.sum(c * np.abs(U + R) ** q - c * np.abs(U) ** q - (nonlinearity(U, d) * np.conj(R)).real) * dV)
    m = morawetz_terms(dec, cutoffs)
    return float(kin + loc_mass - pot + np.sum(p.gamma / (2 * p.lam) * m))


def interior_virial(dec: Decomposition, centers, radius: float | None = None) -> float:
    """``sum_k Im int grad chi_k . grad R conj(R) Phi_k`` with ``grad chi_k(x) = x - x_k`` for ``|x - x_k| <= radius``.

    ``radius`` defaults to ``2 sigma`` of the localization.
    """
    c = np.asarray(centers, dtype=float).reshape(dec.params.K, -1)
    if radius is None:
        radius = 2 * dec.loc.sigma
    if not np.isfinite(radius) or radius <= 0:
        raise ValueError("an interior radius is required (single bubble: pass radius explicitly)")

    def fn(k, x):
        z = x - c[k].reshape((-1,) + (1,) * (x.ndim - 1))
        r = np.sqrt(np.sum(z**2, axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.where(r > 0, interior_psi_prime(r, radius) / np.where(r > 0, r, 1.0), 1.0)
        return fac * z

    return float(_morawetz_parts(dec, fn).sum())


def soliton_virial(z: Field, A_values=(), guard: bool = True) -> dict:
    """``I = Im int x . grad z conj(z)`` and ``M_A = int varphi_A |z|^2`` for each ``A``."""
    if guard:
        check_boundary(z)
    grid = z.grid
    x = np.stack(grid.coords)
    g = gradient(z)
    I = float(np.sum(np.einsum("i...,i...->...", x, g) * np.conj(z.values)).imag * grid.dV)
    a2 = np.abs(z.values) ** 2
    MA = {float(A): float(np.sum(CutoffFamily(A).varphi(x) * a2) * grid.dV) for A in A_values}
    return {"I": I, "M_A": MA, "x2": float(np.sum(np.sum(x**2, axis=0) * a2) * grid.dV)}


def energy_quantization_check(v: Field, spec: ProfileSpec, gs: GroundState | None = None) -> float:
    """``E(v) - sum_k omega_k^2 ||yQ||^2 / 8``."""
    gs = gs or ground_state(v.grid.d)
    return float(energy(v) - np.sum(spec.omega**2) * gs.constants.xQ2 / 8)


# ---------------------------------------------------------------------------
# rates and trends


@dataclass(frozen=True)
class RateFit:
    model: str
    exponent: float
    intercept: float
    residual: float
    window: tuple[float, float]
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


def fit_rate(t, values, model: str = "power", T: float | None = None, min_span: float = 10.0) -> RateFit:
    """Least-squares rate fit in linearizing coordinates.

    ``power``: ``log|v|`` against ``log(T - t)``, returns the exponent.
    ``exponential``: ``log|v|`` against ``1/(T - t)``, returns ``delta`` in ``e^(-delta/(T-t))``.
    ``power_t``: ``log|v|`` against ``log t``.
    The residual is the RMS misfit in the linearized coordinates. The
    positive variable (``T - t`` or ``t``) must vary by a factor ``min_span``.
    """
    t = np.asarray(t, dtype=float)
    v = np.abs(np.asarray(values, dtype=float))
    if t.size < 8:
        raise InsufficientSpan("at least 8 points are required")
    if model in ("power", "exponential"):
        if T is None:
            raise ValueError("T is required for (T - t) models")
        s = T - t
    elif model == "power_t":
        s = t
    else:
        raise ValueError(f"unknown model {model!r}")
    if np.any(s <= 0) or np.any(v <= 0):
        raise InsufficientSpan("independent variable and values must be positive")
    if s.max() / s.min() < min_span * (1 - 1e-9):
        raise InsufficientSpan(f"series spans a factor {s.max() / s.min():.3g} < {min_span:g}")
    X = 1 / s if model == "exponential" else np.log(s)
    Y = np.log(v)
    slope, icpt = np.polyfit(X, Y, 1)
    resid = float(np.sqrt(np.mean((Y - (slope * X + icpt)) ** 2)))
    expo = -slope if model == "exponential" else slope
    return RateFit(model, float(expo), float(icpt), resid, (float(t.min()), float(t.max())), int(t.size))


def double_average(t, values, T: float, tail_fraction_flag: float = 0.1) -> dict:
    """``(T-t)^-1 int_t^T (T-s)^-1 int_s^T f(r) dr ds`` at every sample time.

    The samples cover ``[t_0, t_N]`` with ``t_N < T``; the unresolved tail
    ``[t_N, T]`` is closed with a power law ``a (T - r)^p`` fitted to the last
    third of the series (``p > -1`` required), integrated in closed form.
    """
    t = np.asarray(t, dtype=float)
    f = np.asarray(values, dtype=float)
    if t.size < 8:
        raise InsufficientSpan("at least 8 points are required")
    if np.any(np.diff(t) <= 0) or t[-1] >= T:
        raise InsufficientSpan("times must increase and stay below T")
    L_end = T - t[-1]
    tail_sel = slice(2 * t.size // 3, None)
    if np.all(f == 0):
        a, p = 0.0, 0.0
    elif np.all(f[tail_sel] > 0):
        p, loga = np.polyfit(np.log(T - t[tail_sel]), np.log(f[tail_sel]), 1)
        a = math.exp(loga)
        if p <= -1:
            raise InsufficientSpan("tail model is not integrable")
    else:
        a, p = 0.0, 0.0
    tail_inner = a * L_end ** (p + 1) / (p + 1)
    # F(s) = int_s^T f
    seg = 0.5 * (f[1:] + f[:-1]) * np.diff(t)
    F = np.concatenate([np.cumsum(seg[::-1])[::-1], [0.0]]) + tail_inner
    G = F / (T - t)
    tail_outer = a * L_end ** (p + 1) / (p + 1) ** 2
    segG = 0.5 * (G[1:] + G[:-1]) * np.diff(t)
    H = np.concatenate([np.cumsum(segG[::-1])[::-1], [0.0]]) + tail_outer
    out = H / (T - t)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(H != 0, tail_outer / H, 0.0)
    return {
        "t": t,
        "value": out,
        "tail_model": {"a": a, "p": p},
        "tail_fraction": frac,
        "tail_flag": bool(np.any(frac[: max(1, t.size // 3)] > tail_fraction_flag)),
    }


def trend_inequality(lhs, envelope) -> dict:
    """Fraction of slices with ``lhs >= -envelope``; both sides are returned."""
    lhs = np.asarray(lhs, dtype=float)
    env = np.asarray(envelope, dtype=float)
    ok = lhs >= -env
    return {"fraction": float(ok.mean()), "lhs": lhs, "envelope": env, "pass_mask": ok}


def fit_envelope(s, deficit, basis) -> np.ndarray:
    """Nonnegative multiple ``C * basis(s)`` fitted by least squares to the negative part of ``deficit``."""
    s = np.asarray(s, dtype=float)
    b = np.asarray(basis(s), dtype=float)
    neg = np.maximum(-np.asarray(deficit, dtype=float), 0.0)
    C = max(float(np.dot(b, neg) / np.dot(b, b)), 0.0) if np.dot(b, b) > 0 else 0.0
    return C * b


def centered_derivative(t, values) -> tuple[np.ndarray, np.ndarray]:
    """Second-order centred differences at interior samples (uniform or not)."""
    t = np.asarray(t, dtype=float)
    v = np.asarray(values, dtype=float)
    return t[1:-1], np.gradient(v, t)[1:-1]
