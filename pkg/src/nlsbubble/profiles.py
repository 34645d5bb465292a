"""Solitary waves, pseudo-conformal blow-up profiles, modulated bubbles and
the symmetry / pseudo-conformal transforms.

All profiles are sampled analytically from the ground state; transforms of
arbitrary snapshots resample by exact trigonometric interpolation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalid, ResolutionExceeded, ShapeMismatch
from .field import Field, Grid, check_boundary
from .groundstate import GroundState, ground_state

POINTS_PER_SCALE = 8


def _as_2d(a, K, d, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1 and d == 1 and a.size == K:
        a = a.reshape(K, 1)
    if a.shape != (K, d):
        raise ShapeMismatch(f"{name} must have shape ({K}, {d}), got {a.shape}")
    return a


@dataclass(frozen=True, eq=False)
class ProfileSpec:
    """Physical parameters of a K-bubble configuration.

    ``centers`` holds ``x_k`` in the blow-up frame and the speeds ``v_k`` in
    the soliton frame; ``T`` is only required in the blow-up frame.
    """

    omega: np.ndarray
    centers: np.ndarray
    vartheta: np.ndarray
    T: float | None = None
    frame: str = "blowup"

    def __post_init__(self):
        omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        K = omega.size
        centers = np.asarray(self.centers, dtype=float)
        if centers.ndim == 1:
            centers = centers.reshape(K, -1)
        d = centers.shape[1]
        centers = _as_2d(centers, K, d, "centers")
        vt = np.atleast_1d(np.asarray(self.vartheta, dtype=float))
        if vt.shape != (K,):
            raise ShapeMismatch("vartheta must have one entry per bubble")
        if np.any(omega <= 0) or not np.all(np.isfinite(omega)):
            raise ConfigInvalid("omega_k must be positive and finite")
        if d not in (1, 2):
            raise ConfigInvalid("only d = 1, 2 are supported")
        if self.frame not in ("blowup", "soliton"):
            raise ConfigInvalid("frame must be 'blowup' or 'soliton'")
        if self.frame == "soliton" and K > 1 and self.min_separation_of(centers) == 0:
            raise ConfigInvalid("soliton speeds must be pairwise distinct")
        for name, val in (("omega", omega), ("centers", centers), ("vartheta", vt)):
            val.flags.writeable = False
            object.__setattr__(self, name, val)

    @staticmethod
    def min_separation_of(centers) -> float:
        c = np.asarray(centers)
        if len(c) < 2:
            return float("inf")
        diff = c[:, None, :] - c[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        return float(dist[~np.eye(len(c), dtype=bool)].min())

    @property
    def K(self) -> int:
        return self.omega.size

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    @property
    def min_separation(self) -> float:
        return self.min_separation_of(self.centers)

    def to_dict(self) -> dict:
        return {
            "frame": self.frame,
            "T": self.T,
            "omega": self.omega.tolist(),
            "centers": self.centers.tolist(),
            "vartheta": self.vartheta.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProfileSpec":
        allowed = {"frame", "T", "omega", "centers", "vartheta"}
        extra = set(data) - allowed
        if extra:
            raise ConfigInvalid(f"unknown profile keys: {sorted(extra)}")
        K = len(np.atleast_1d(data["omega"]))
        return cls(
            omega=data["omega"],
            centers=data["centers"],
            vartheta=data.get("vartheta", [0.0] * K),
            T=data.get("T"),
            frame=data.get("frame", "blowup"),
        )

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "ProfileSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class ModParams:
    """Modulation parameters ``(lambda, alpha, beta, gamma, theta)`` per bubble at time ``t``."""

    lam: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float))
        K = lam.size
        alpha = np.asarray(self.alpha, dtype=float)
        d = alpha.size // K if alpha.size else 1
        fields = {
            "lam": lam,
            "alpha": _as_2d(alpha.reshape(K, d), K, d, "alpha"),
            "beta": _as_2d(np.asarray(self.beta, dtype=float).reshape(K, -1), K, d, "beta"),
            "gamma": np.atleast_1d(np.asarray(self.gamma, dtype=float)),
            "theta": np.atleast_1d(np.asarray(self.theta, dtype=float)),
        }
        if fields["gamma"].shape != (K,) or fields["theta"].shape != (K,):
            raise ShapeMismatch("gamma and theta need one entry per bubble")
        for name, val in fields.items():
            if not np.all(np.isfinite(val)):
                raise ValueError(f"{name} must be finite")
            val.flags.writeable = False
            object.__setattr__(self, name, val)
        if np.any(lam <= 0):
            raise ValueError("lambda_k must be positive")

    @property
    def K(self) -> int:
        return self.lam.size

    @property
    def d(self) -> int:
        return self.alpha.shape[1]

    @property
    def size_per_bubble(self) -> int:
        return 2 * self.d + 3

    def bubble(self, k: int):
        return self.lam[k], self.alpha[k], self.beta[k], self.gamma[k], self.theta[k]

    def to_vector(self) -> np.ndarray:
        """Flatten as ``[lam, alpha..., beta..., gamma, theta]`` per bubble."""
        rows = [np.concatenate([[self.lam[k]], self.alpha[k], self.beta[k], [self.gamma[k], self.theta[k]]]) for k in range(self.K)]
        return np.concatenate(rows)

    @classmethod
    def from_vector(cls, vec, K: int, d: int, t: float = 0.0) -> "ModParams":
        m = np.asarray(vec, dtype=float).reshape(K, 2 * d + 3)
        return cls(m[:, 0], m[:, 1 : 1 + d], m[:, 1 + d : 1 + 2 * d], m[:, 1 + 2 * d], m[:, 2 + 2 * d], t)

    def replace(self, **kw) -> "ModParams":
        data = dict(lam=self.lam, alpha=self.alpha, beta=self.beta, gamma=self.gamma, theta=self.theta, t=self.t)
        data.update(kw)
        return ModParams(**data)

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "lambda": self.lam.tolist(),
            "alpha": self.alpha.tolist(),
            "beta": self.beta.tolist(),
            "gamma": self.gamma.tolist(),
            "theta": self.theta.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModParams":
        extra = set(data) - {"t", "lambda", "alpha", "beta", "gamma", "theta"}
        if extra:
            raise ConfigInvalid(f"unknown parameter keys: {sorted(extra)}")
        return cls(data["lambda"], data["alpha"], data["beta"], data["gamma"], data["theta"], data.get("t", 0.0))

    def to_text(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "ModParams":
        return cls.from_dict(json.loads(text))


def pseudo_conformal_params(spec: ProfileSpec, t: float) -> ModParams:
    """Parameters of ``sum_k S_k`` at time ``t``:
    ``(omega L, x_k, 0, omega^2 L, 1/(omega^2 L) + vartheta)`` with ``L = T - t``."""
    L = _remaining(spec, t)
    w = spec.omega
    return ModParams(w * L, spec.centers, np.zeros_like(spec.centers), w**2 * L, 1 / (w**2 * L) + spec.vartheta, t)


def soliton_params(spec: ProfileSpec, t: float) -> ModParams:
    """Parameters of ``sum_k W_k`` at time ``t``:
    ``(omega, v t, omega v/2, 0, |v|^2 t/4 + t/omega^2 + vartheta)``."""
    w, v = spec.omega, spec.centers
    theta = np.sum(v**2, axis=1) * t / 4 + t / w**2 + spec.vartheta
    return ModParams(w, v * t, w[:, None] * v / 2, np.zeros_like(w), theta, t)


def _remaining(spec: ProfileSpec, t: float) -> float:
    if spec.T is None:
        raise ConfigInvalid("blow-up time T is required in the blow-up frame")
    L = spec.T - t
    if L <= 0:
        raise ValueError("t must be strictly smaller than T")
    return L


def _gs(gs: GroundState | None, d: int) -> GroundState:
    return gs if gs is not None else ground_state(d)


def _check_scale(scale: float, grid: Grid, what: str):
    if scale < POINTS_PER_SCALE * max(grid.h):
        raise ResolutionExceeded(f"{what} scale {scale:.3g} below {POINTS_PER_SCALE} grid spacings ({max(grid.h):.3g})")


def _rel_coords(grid: Grid, center) -> np.ndarray:
    return np.stack([x - c for x, c in zip(grid.coords, np.asarray(center, dtype=float))])


# ---------------------------------------------------------------------------
# exact solutions


def make_W(spec: ProfileSpec, k: int, t: float, grid: Grid, gs: GroundState | None = None, check: bool = True) -> Field:
    """Solitary wave ``W_k(t)`` travelling with speed ``v_k = spec.centers[k]``."""
    gs = _gs(gs, grid.d)
    w, v, vt = spec.omega[k], spec.centers[k], spec.vartheta[k]
    _check_scale(w, grid, "soliton")
    y = _rel_coords(grid, v * t) / w
    x = np.stack(grid.coords)
    phase = 0.5 * np.tensordot(v, x, axes=1) - 0.25 * (v @ v) * t + t / w**2 + vt
    u = Field(grid, w ** (-grid.d / 2) * gs.Q_at(y) * np.exp(1j * phase), t)
    if check:
        check_boundary(u)
    return u


def make_S(spec: ProfileSpec, k: int, t: float, grid: Grid, gs: GroundState | None = None, check: bool = True) -> Field:
    """Pseudo-conformal blow-up solution ``S_k(t)`` concentrating at ``x_k`` as ``t -> T``."""
    gs = _gs(gs, grid.d)
    L = _remaining(spec, t)
    w, xk, vt = spec.omega[k], spec.centers[k], spec.vartheta[k]
    lam = w * L
    _check_scale(lam, grid, "bubble")
    z = _rel_coords(grid, xk)
    r2 = np.sum(z**2, axis=0)
    phase = -r2 / (4 * L) + 1 / (w**2 * L) + vt
    u = Field(grid, lam ** (-grid.d / 2) * gs.Q_at(z / lam) * np.exp(1j * phase), t)
    if check:
        check_boundary(u)
    return u


def sum_W(spec: ProfileSpec, t: float, grid: Grid, gs: GroundState | None = None, check: bool = True) -> Field:
    out = np.zeros(grid.shape, dtype=complex)
    for k in range(spec.K):
        out += make_W(spec, k, t, grid, gs, check=False).values
    u = Field(grid, out, t)
    if check:
        check_boundary(u)
    return u


def sum_S(spec: ProfileSpec, t: float, grid: Grid, gs: GroundState | None = None, check: bool = True) -> Field:
    out = np.zeros(grid.shape, dtype=complex)
    for k in range(spec.K):
        out += make_S(spec, k, t, grid, gs, check=False).values
    u = Field(grid, out, t)
    if check:
        check_boundary(u)
    return u


# ---------------------------------------------------------------------------
# modulated bubbles


def bubble_frame(params: ModParams, k: int, grid: Grid, gs: GroundState | None = None) -> dict[str, np.ndarray]:
    """Bubble ``U_k`` and the directions entering the orthogonality conditions.

    Returns arrays for ``U``, ``xU = (x-alpha) U``, ``x2U = |x-alpha|^2 U``,
    ``gradU`` (shape ``(d, ...)``), ``LambdaU = (d/2 + (x-alpha).grad) U`` and
    ``rho = lambda^(-d/2) rho(y) e^{i(beta.y - gamma|y|^2/4 + theta)}``; all
    derivatives are analytic.
    """
    gs = _gs(gs, grid.d)
    d = grid.d
    lam, alpha, beta, gamma, theta = params.bubble(k)
    _check_scale(lam, grid, "bubble")
    z = _rel_coords(grid, alpha)
    y = z / lam
    r2 = np.sum(y**2, axis=0)
    by = np.tensordot(beta, y, axes=1)
    e = lam ** (-d / 2) * np.exp(1j * (by - 0.25 * gamma * r2 + theta))
    q = gs.Q_at(y)
    U = q * e
    # grad_y of the chirp exponent is i(beta - gamma y/2)
    kvec = beta.reshape((d,) + (1,) * d) - 0.5 * gamma * y
    gradU = (gs.gradQ_at(y) + 1j * kvec * q) * e / lam
    LambdaU = (gs.lambdaQ_at(y) + 1j * (by - 0.5 * gamma * r2) * q) * e
    return {
        "U": U,
        "xU": z * U,
        "x2U": np.sum(z**2, axis=0) * U,
        "gradU": gradU,
        "LambdaU": LambdaU,
        "rho": gs.rho_at(y) * e,
    }


def make_U(params: ModParams, spec: ProfileSpec | None, grid: Grid, gs: GroundState | None = None) -> Field:
    """Sum of modulated bubbles ``sum_k lambda_k^(-d/2) Q_k((x - alpha_k)/lambda_k) e^{i theta_k}``."""
    if grid.d != params.d:
        raise ShapeMismatch("parameter dimension differs from grid dimension")
    if spec is not None and spec.K != params.K:
        raise ShapeMismatch("spec and parameters disagree on the bubble count")
    gs = _gs(gs, grid.d)
    out = np.zeros(grid.shape, dtype=complex)
    for k in range(params.K):
        lam, alpha, beta, gamma, theta = params.bubble(k)
        _check_scale(lam, grid, "bubble")
        y = _rel_coords(grid, alpha) / lam
        phase = np.tensordot(beta, y, axes=1) - 0.25 * gamma * np.sum(y**2, axis=0) + theta
        out += lam ** (-grid.d / 2) * gs.Q_at(y) * np.exp(1j * phase)
    return Field(grid, out, params.t)


# ---------------------------------------------------------------------------
# resampling


def _interp_matrix(points: np.ndarray, n: int, length: float, origin: float) -> np.ndarray:
    """Rows evaluate the trigonometric interpolant of ``n`` samples at ``points``."""
    k = 2 * np.pi * np.fft.fftfreq(n, d=length / n)
    arg = np.outer(points - origin, k)
    E = np.exp(1j * arg)
    if n % 2 == 0:
        # split the Nyquist mode symmetrically so real data stay real
        E[:, n // 2] = np.cos(arg[:, n // 2])
    outside = (points < origin - 1e-12) | (points > origin + length * (n - 1) / n + 1e-12)
    E[outside] = 0.0
    return E / n


def bandwidth(u: Field, rel: float = 1e-13) -> float:
    """Largest wavenumber modulus carrying spectral weight above ``rel * max``."""
    uh = np.abs(np.fft.fftn(u.values))
    if uh.max() == 0:
        return 0.0
    k = np.sqrt(u.grid.k2)
    return float(k[uh > rel * uh.max()].max())


def resample_affine(u: Field, scale: float, shift, target: Grid) -> np.ndarray:
    """Evaluate ``u((x - shift) / scale)`` on ``target`` (zero outside the source box)."""
    src = u.grid
    if src.d != target.d:
        raise ShapeMismatch("source and target grid dimensions differ")
    shift = np.broadcast_to(np.asarray(shift, dtype=float), (src.d,))
    uh = np.fft.fftn(u.values)
    mats = [
        _interp_matrix((ax - s) / scale, n, Ls, o)
        for ax, s, n, Ls, o in zip(target.axes, shift, src.n, src.box_length, src.origin)
    ]
    if src.d == 1:
        return mats[0] @ uh
    return mats[0] @ uh @ mats[1].T


def _check_bandwidth(u: Field, scale: float, extra: float, target: Grid, what: str):
    kmax = bandwidth(u) / scale + extra
    knyq = np.pi / max(target.h)
    if kmax > knyq:
        raise ResolutionExceeded(f"{what}: transformed bandwidth {kmax:.3g} exceeds Nyquist {knyq:.3g}")


# ---------------------------------------------------------------------------
# transforms


def symmetry_transform(u: Field, s: float, params, t: float, target: Grid | None = None, strict: bool = True) -> Field:
    """Apply the combined translation / scaling / phase / Galilean symmetry once.

    ``params = (lambda0, beta0, theta0, x0, t0)`` and the snapshot ``u`` is the
    solution at source time ``s = (t - t0) / lambda0^2``; the result is the
    transformed solution at time ``t``:
    ``lambda0^(-d/2) u(s, (x - x0)/lambda0 - beta0 (t - t0)/lambda0)
    * exp(i beta0.(x - x0)/2 - i|beta0|^2 (t - t0)/4 + i theta0)``.
    """
    lam0, beta0, theta0, x0, t0 = params
    grid = u.grid
    target = target or grid
    d = grid.d
    beta0 = np.broadcast_to(np.asarray(beta0, dtype=float), (d,))
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (d,))
    if lam0 <= 0:
        raise ValueError("lambda0 must be positive")
    if strict and abs(s - (t - t0) / lam0**2) > 1e-12 * max(1.0, abs(s)):
        raise ValueError("source time s must equal (t - t0)/lambda0^2")
    _check_bandwidth(u, lam0, 0.5 * np.linalg.norm(beta0), target, "symmetry transform")
    tau = t - t0
    vals = resample_affine(u, lam0, x0 + beta0 * tau, target)
    x = np.stack(target.coords)
    phase = 0.5 * np.tensordot(beta0, x - x0.reshape((d,) + (1,) * d), axes=1) - 0.25 * (beta0 @ beta0) * tau + theta0
    return Field(target, lam0 ** (-d / 2) * vals * np.exp(1j * phase), t)


def pseudo_conformal(u: Field, T: float, t: float, target: Grid | None = None) -> Field:
    """``(T-t)^(-d/2) u(1/(T-t), x/(T-t)) exp(-i|x|^2 / (4(T-t)))``; ``u.time`` must be ``1/(T-t)``."""
    L = T - t
    if L <= 0:
        raise ValueError("t must be strictly smaller than T")
    if abs(u.time - 1 / L) > 1e-10 * max(1.0, 1 / L):
        raise ValueError(f"snapshot time {u.time} does not match 1/(T-t) = {1 / L}")
    grid = u.grid
    target = target or grid
    d = grid.d
    _check_bandwidth(u, L, 0.0, target, "pseudo-conformal transform")
    vals = resample_affine(u, L, np.zeros(d), target)
    r2 = sum(x**2 for x in target.coords)
    return Field(target, L ** (-d / 2) * vals * np.exp(-1j * r2 / (4 * L)), t)


def inverse_pseudo_conformal(v: Field, T: float, target: Grid | None = None) -> Field:
    """Undo :func:`pseudo_conformal`: returns ``u`` at time ``s = 1/(T - v.time)``."""
    L = T - v.time
    if L <= 0:
        raise ValueError("snapshot time must be strictly smaller than T")
    s = 1 / L
    grid = v.grid
    target = target or grid
    d = grid.d
    # undo the chirp first so that the resampled function is smooth
    r2_src = sum(x**2 for x in grid.coords)
    w = v.with_values(v.values * np.exp(1j * r2_src / (4 * L)))
    _check_bandwidth(w, s, 0.0, target, "inverse pseudo-conformal transform")
    vals = resample_affine(w, s, np.zeros(d), target)
    return Field(target, s ** (-d / 2) * vals, s)


def norm_transfer(u: Field, T: float, t: float, target: Grid | None = None) -> dict[str, float]:
    """Both sides of the norm relations between ``u(1/(T-t))`` and ``v = P_T u (t)``.

    ``l2``: ``||v|| = ||u||``; ``x``: ``||x v|| = (T-t) ||y u||``;
    ``grad``: ``(T-t) ||grad v|| = ||(grad - i (T-t) y/2) u||`` (the exact identity
    behind the bound ``||grad v|| <= (T-t)^-1 ||grad u|| + ||y u||/2``).
    """
    from .field import gradient, grad_norm, l2_norm, weighted_l2_norm

    L = T - t
    v = pseudo_conformal(u, T, t, target)
    y = np.stack(u.grid.coords)
    cov = gradient(u) - 0.5j * L * y * u.values
    cov_norm = float(np.sqrt(np.sum(np.abs(cov) ** 2) * u.grid.dV))
    return {
        "l2_v": l2_norm(v),
        "l2_u": l2_norm(u),
        "x_v": weighted_l2_norm(v),
        "x_u_scaled": L * weighted_l2_norm(u),
        "grad_v_scaled": L * grad_norm(v),
        "grad_u_cov": cov_norm,
        "grad_v": grad_norm(v),
        "grad_bound": grad_norm(u) / L + weighted_l2_norm(u),
    }
