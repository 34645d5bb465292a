"""Geometrical decomposition ``v = sum_k U_k + R`` and remainder diagnostics.

Modulation parameters are found by Newton's method on the orthogonality
conditions.  Each bubble contributes ``2d + 3`` real scalar conditions,
normalized so that all of them are ``O(||R||)`` in the bubble frame::

    f1 = lambda^-2 Re int |x - alpha|^2 U_k conj(R)
    f2 = lambda^-1 Re int (x - alpha) U_k conj(R)
    f3 = lambda    Im int grad U_k conj(R)
    f4 =           Im int Lambda_k U_k conj(R)
    f5 =           Im int varrho_k conj(R)

Newton works in rescaled variables ``lambda = lambda_ref * l``,
``alpha = alpha_ref + lambda_ref * a`` (``beta, gamma, theta`` shifted only).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cutoffs import SMOOTHSTEP_MAX_SLOPE, VirialWeight, constant_weight, ramp_weight
from .errors import DegenerateCenters, InsufficientSlices, NoConvergence, ShapeMismatch, SingularJacobian
from .field import Field, Grid, energy, grad_norm, gradient, l2_norm, laplacian, mass, nonlinearity
from .groundstate import GroundState, ground_state
from .profiles import ModParams, ProfileSpec, bubble_frame, make_U, pseudo_conformal_params, resample_affine, soliton_params

DEFAULT_ORTHO_TOL = 1e-10
BASIN_FRACTION = 0.3
JACOBIAN_COND_MAX = 1e12


# ---------------------------------------------------------------------------
# localization


@dataclass(frozen=True, eq=False)
class Localization:
    """Partition of unity ``Phi_1..Phi_K`` adapted to the bubble centers.

    ``order`` lists bubble indices sorted by their projection on ``v1``;
    ``weights[k]`` belongs to bubble ``k`` in the caller's numbering.
    """

    sigma: float
    v1: np.ndarray
    weights: tuple[VirialWeight, ...]
    order: tuple[int, ...]
    grad_phi_bound: float

    @property
    def phis(self) -> list[np.ndarray]:
        return [w.phi for w in self.weights]

    @property
    def K(self) -> int:
        return len(self.weights)


def _direction_candidates(d: int) -> list[np.ndarray]:
    if d == 1:
        return [np.array([1.0])]
    angles = np.pi * np.arange(180) / 180
    return [np.array([math.cos(a), math.sin(a)]) for a in angles]


def build_localization(centers, grid: Grid) -> Localization:
    """Smooth cutoffs ``Phi_k`` separating the bubbles along a direction ``v1``.

    ``sigma`` is a twelfth of the smallest gap between consecutive projections
    on ``v1``; ``v1`` is chosen among candidate directions to maximize that gap.
    Between consecutive centers the cutoff falls from 1 to 0 over
    ``[4 sigma, 8 sigma]`` past the left center.
    """
    c = np.asarray(centers, dtype=float).reshape(-1, grid.d)
    K = len(c)
    if K == 1:
        return Localization(float("nan"), np.eye(grid.d)[0], (constant_weight(grid),), (0,), 0.0)
    best = None
    for e in _direction_candidates(grid.d):
        p = c @ e
        gap = np.diff(np.sort(p)).min()
        if best is None or gap > best[0] + 1e-12:
            best = (gap, e)
    gap, v1 = best
    if gap <= 1e-12:
        raise DegenerateCenters("no direction separates the bubble centers")
    sigma = gap / 12
    p = c @ v1
    order = tuple(int(i) for i in np.argsort(p, kind="stable"))
    cuts = [ramp_weight(grid, v1, p[order[j]] + 4 * sigma, p[order[j]] + 8 * sigma) for j in range(K - 1)]
    ws: list[VirialWeight | None] = [None] * K
    ws[order[0]] = cuts[0]
    for j in range(1, K - 1):
        ws[order[j]] = cuts[j] - cuts[j - 1]
    ws[order[-1]] = cuts[-1].one_minus()
    bound = SMOOTHSTEP_MAX_SLOPE / (4 * sigma)
    return Localization(float(sigma), v1, tuple(ws), order, bound)


# ---------------------------------------------------------------------------
# orthogonality map


def _frames(params: ModParams, grid: Grid, gs: GroundState) -> list[dict]:
    return [bubble_frame(params, k, grid, gs) for k in range(params.K)]


def _conditions(frame: dict, lam: float, R: np.ndarray, dV: float) -> np.ndarray:
    Rc = np.conj(R)
    ip = lambda a: np.sum(a * Rc) * dV  # noqa: E731
    f1 = ip(frame["x2U"]).real / lam**2
    f2 = [ip(c).real / lam for c in frame["xU"]]
    f3 = [lam * ip(c).imag for c in frame["gradU"]]
    f4 = ip(frame["LambdaU"]).imag
    f5 = ip(frame["rho"]).imag
    return np.array([f1, *f2, *f3, f4, f5])


def orthogonality_residuals(v: Field, params: ModParams, gs: GroundState | None = None) -> np.ndarray:
    """All ``(2d+3) K`` scaled orthogonality functionals of ``R = v - make_U(params)``."""
    gs = gs or ground_state(v.grid.d)
    frames = _frames(params, v.grid, gs)
    R = v.values - sum(f["U"] for f in frames)
    return np.concatenate([_conditions(f, params.lam[k], R, v.grid.dV) for k, f in enumerate(frames)])


def analytic_jacobian_diagonal(gs: GroundState, d: int, l_tilde: float = 1.0) -> dict[str, float]:
    """Leading-order Jacobian entries of the scaled functionals at ``R = 0``, ``beta = gamma = 0``."""
    c = gs.constants
    return {
        "f1_l": -c.xQ2 / l_tilde,
        "f2_a": -c.massQ / (2 * l_tilde),
        "f3_b": -c.massQ / 2,
        "f4_g": c.xQ2 / 4,
        "f5_g": -c.rho_xq / 4,
        "f5_th": -c.xQ2 / 2,
    }


def _diag_vector(gs: GroundState, d: int, K: int) -> np.ndarray:
    a = analytic_jacobian_diagonal(gs, d)
    per = [a["f1_l"], *[a["f2_a"]] * d, *[a["f3_b"]] * d, a["f4_g"], a["f5_th"]]
    return np.tile(per, K)


@dataclass(eq=False)
class Decomposition:
    params: ModParams
    remainder: Field
    localized: list[np.ndarray]
    residual: float
    newton_iters: int
    loc: Localization
    residual_history: list[float] = field(default_factory=list)
    jacobian_cond: float = float("nan")
    fd_diagonal: np.ndarray | None = None
    analytic_diagonal: np.ndarray | None = None
    reference: ModParams | None = None
    basin_ok: bool = True

    @property
    def grid(self) -> Grid:
        return self.remainder.grid

    @property
    def t(self) -> float:
        return self.params.t

    def bubble(self, k: int, gs: GroundState | None = None) -> np.ndarray:
        gs = gs or ground_state(self.grid.d)
        return bubble_frame(self.params, k, self.grid, gs)["U"]

    def save(self, directory, stem: str = "decomposition") -> list[Path]:
        from .field import save_field

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        p1 = save_field(self.remainder, directory / f"{stem}_R.nlsf")
        p2 = directory / f"{stem}_params.json"
        p2.write_text(self.params.to_text())
        return [p1, p2]


class _Reference:
    """Affine map between Newton unknowns and raw parameters."""

    def __init__(self, ref: ModParams):
        self.ref = ref
        self.K, self.d = ref.K, ref.d
        n = 2 * self.d + 3
        scale = np.ones((self.K, n))
        scale[:, : 1 + self.d] = ref.lam[:, None]
        self.scale = scale.ravel()
        self.base = ref.to_vector()
        self.base[0 :: n] = 0.0  # lambda is purely multiplicative

    def to_raw(self, z: np.ndarray, t: float) -> ModParams:
        return ModParams.from_vector(self.base + self.scale * z, self.K, self.d, t)

    def to_tilde(self, p: ModParams) -> np.ndarray:
        return (p.to_vector() - self.base) / self.scale


def decompose(
    v: Field,
    guess: ModParams,
    spec: ProfileSpec | None = None,
    loc: Localization | None = None,
    ortho_tol: float = DEFAULT_ORTHO_TOL,
    max_iter: int = 20,
    fd_step: float = 1e-7,
    gs: GroundState | None = None,
    reference: ModParams | None = None,
) -> Decomposition:
    """Solve the orthogonality conditions for the modulation parameters of ``v``.

    The Newton unknowns are rescaled relative to ``reference`` (by default the
    pseudo-conformal parameters of ``spec`` at time ``v.time`` when a blow-up
    time is known, otherwise ``guess``).  The Jacobian is built by central
    differences with step ``fd_step`` and equilibrated by the analytic
    leading-order diagonal.
    """
    grid = v.grid
    d = grid.d
    if guess.d != d:
        raise ShapeMismatch("guess dimension differs from field dimension")
    gs = gs or ground_state(d)
    K = guess.K
    if reference is None:
        if spec is not None and spec.frame == "blowup" and spec.T is not None and v.time < spec.T:
            reference = pseudo_conformal_params(spec, v.time)
        else:
            reference = guess
    mapping = _Reference(reference)
    loc = loc or build_localization(guess.alpha, grid)
    dV = grid.dV
    n = 2 * d + 3
    diag = _diag_vector(gs, d, K)

    basin_ok = l2_norm(v - make_U(guess, None, grid, gs)) < BASIN_FRACTION * math.sqrt(gs.constants.massQ)

    z = mapping.to_tilde(guess.replace(t=v.time))
    history = []
    cond = float("nan")
    fd_diag = None

    def assemble(zz):
        p = mapping.to_raw(zz, v.time)
        frames = _frames(p, grid, gs)
        U = sum(f["U"] for f in frames)
        R = v.values - U
        F = np.concatenate([_conditions(f, p.lam[k], R, dV) for k, f in enumerate(frames)])
        return p, frames, R, F

    p, frames, R, F = assemble(z)
    it = 0
    while True:
        res = float(np.abs(F).max())
        history.append(res)
        if res < ortho_tol:
            break
        if it >= max_iter:
            raise NoConvergence(f"decomposition did not converge in {max_iter} iterations (residual {res:.2e})")
        J = np.zeros((n * K, n * K))
        for j in range(K):
            for m in range(n):
                col = j * n + m
                cols = []
                for sgn in (1.0, -1.0):
                    zz = z.copy()
                    zz[col] += sgn * fd_step
                    pp = mapping.to_raw(zz, v.time)
                    fr = bubble_frame(pp, j, grid, gs)
                    Rp = R + frames[j]["U"] - fr["U"]
                    Fp = np.concatenate(
                        [_conditions(fr if k == j else frames[k], pp.lam[k], Rp, dV) for k in range(K)]
                    )
                    cols.append(Fp)
                J[:, col] = (cols[0] - cols[1]) / (2 * fd_step)
        fd_diag = np.diag(J).copy()
        Jp = J / diag[None, :]
        cond = float(np.linalg.cond(Jp))
        if not np.isfinite(cond) or cond > JACOBIAN_COND_MAX:
            raise SingularJacobian(f"Jacobian condition number {cond:.2e}; bubbles merging or guess outside the basin")
        z = z - np.linalg.solve(Jp, F) / diag
        p, frames, R, F = assemble(z)
        it += 1
    localized = [R * w.phi for w in loc.weights]
    return Decomposition(
        params=p,
        remainder=Field(grid, R, v.time),
        localized=localized,
        residual=float(np.abs(F).max()),
        newton_iters=it,
        loc=loc,
        residual_history=history,
        jacobian_cond=cond,
        fd_diagonal=fd_diag,
        analytic_diagonal=diag,
        reference=reference,
        basin_ok=bool(basin_ok),
    )


# ---------------------------------------------------------------------------
# synthetic remainders


def modulated_directions(params: ModParams, k: int, grid: Grid, gs: GroundState) -> list[np.ndarray]:
    """The ``2d + 4`` real directions spanning the unstable and modulation modes of bubble ``k``.

    ``U, (x-alpha) U, |x-alpha|^2 U`` (real parts) and ``i grad U, i Lambda U,
    i varrho`` (imaginary parts); orthogonality to all of them in
    ``Re int a conj(b)`` is equivalent to a vanishing bubble-frame ``Scal``.
    """
    f = bubble_frame(params, k, grid, gs)
    return [f["U"], *f["xU"], f["x2U"], *(1j * g for g in f["gradU"]), 1j * f["LambdaU"], 1j * f["rho"]]


def project_out_modes(g: np.ndarray, params: ModParams, grid: Grid, gs: GroundState | None = None) -> np.ndarray:
    """Remove from ``g`` its real-L2 projection on the modulated directions of every bubble."""
    gs = gs or ground_state(grid.d)
    dirs = []
    for k in range(params.K):
        dirs += modulated_directions(params, k, grid, gs)
    dV = grid.dV
    rip = lambda a, b: float(np.sum(a * np.conj(b)).real * dV)  # noqa: E731
    basis: list[np.ndarray] = []
    for a in dirs:
        w = a.copy()
        for _ in range(2):  # re-orthogonalize for stability
            for b in basis:
                w = w - rip(w, b) * b
        nrm = math.sqrt(rip(w, w))
        if nrm > 1e-12:
            basis.append(w / nrm)
    out = g.copy()
    for _ in range(2):
        for b in basis:
            out = out - rip(out, b) * b
    return out


def scal_bubble(g: np.ndarray | Field, params: ModParams, k: int, grid: Grid, gs: GroundState | None = None) -> float:
    """``Scal`` of the renormalized, de-chirped remainder of bubble ``k``.

    Evaluated directly on the physical grid: with
    ``A = lambda^(-d/2) a((x - alpha)/lambda) e^{i(beta.y - gamma|y|^2/4 + theta)}``
    one has ``<Re eps, a> = Re<g, A>`` and ``<Im eps, a> = Im<g, A>``.
    """
    gs = gs or ground_state(grid.d)
    gv = g.values if isinstance(g, Field) else g
    f = bubble_frame(params, k, grid, gs)
    lam, alpha, beta, gamma, theta = params.bubble(k)
    y = np.stack([x - a for x, a in zip(grid.coords, alpha)]) / lam
    chirp = f["U"] / np.where(gs.Q_at(y) != 0, gs.Q_at(y), 1.0)  # lam^(-d/2) e^{i phase}
    dV = grid.dV
    ip = lambda a: np.sum(gv * np.conj(a * chirp)) * dV  # noqa: E731
    r2 = np.sum(y**2, axis=0)
    q = gs.Q_at(y)
    total = ip(q).real ** 2 + ip(r2 * q).real ** 2 + ip(gs.lambdaQ_at(y)).imag ** 2 + ip(gs.rho_at(y)).imag ** 2
    total += sum(ip(yi * q).real ** 2 for yi in y)
    total += sum(ip(gq).imag ** 2 for gq in gs.gradQ_at(y))
    return float(total)


# ---------------------------------------------------------------------------
# scalar diagnostics


def localized_mass(dec: Decomposition, gs: GroundState | None = None) -> np.ndarray:
    """``M_k = 2 Re <R_k, U_k> + int |R|^2 Phi_k`` for every bubble."""
    gs = gs or ground_state(dec.grid.d)
    dV = dec.grid.dV
    R = dec.remainder.values
    out = []
    for k, w in enumerate(dec.loc.weights):
        Uk = dec.bubble(k, gs)
        out.append(2 * float(np.sum(dec.localized[k] * np.conj(Uk)).real * dV) + float(np.sum(np.abs(R) ** 2 * w.phi) * dV))
    return np.array(out)


@dataclass
class RemainderScalars:
    D: float
    P: float
    eps: list[Field]


def renormalized_remainder(dec: Decomposition, k: int, target: Grid | None = None) -> Field:
    """``eps_k(y) = lambda^(d/2) R_k(lambda y + alpha) e^{-i theta}`` on a bubble-frame grid.

    The default target grid is the image of the physical grid under
    ``y = (x - alpha)/lambda``, so samples transfer without interpolation.
    """
    grid = dec.grid
    lam, alpha, _, _, theta = dec.params.bubble(k)
    if target is None:
        target = Grid(grid.n, tuple(b / lam for b in grid.box_length), tuple((o - a) / lam for o, a in zip(grid.origin, alpha)))
        vals = dec.localized[k]
    else:
        vals = resample_affine(Field(grid, dec.localized[k], dec.t), 1 / lam, -np.asarray(alpha) / lam, target)
    return Field(target, lam ** (grid.d / 2) * vals * np.exp(-1j * theta), dec.t)


def remainder_scalars(dec: Decomposition, spec: ProfileSpec, T: float | None = None) -> RemainderScalars:
    """``D = ||R|| + (T-t)||grad R||``, ``P = sum(|lambda| + |alpha - x_k| + |beta| + |gamma|)`` and ``eps_k``."""
    T = spec.T if T is None else T
    L = T - dec.t
    R = dec.remainder
    D = l2_norm(R) + L * grad_norm(R)
    p = dec.params
    P = float(
        np.sum(np.abs(p.lam))
        + np.sum(np.linalg.norm(p.alpha - spec.centers, axis=1))
        + np.sum(np.linalg.norm(p.beta, axis=1))
        + np.sum(np.abs(p.gamma))
    )
    eps = [renormalized_remainder(dec, k) for k in range(p.K)]
    return RemainderScalars(float(D), P, eps)


# ---------------------------------------------------------------------------
# modulation equations


@dataclass
class ModTrack:
    times: np.ndarray
    lam: np.ndarray  # (N, K)
    alpha: np.ndarray  # (N, K, d)
    beta: np.ndarray
    gamma: np.ndarray
    theta: np.ndarray
    dlam: np.ndarray
    dalpha: np.ndarray
    dbeta: np.ndarray
    dgamma: np.ndarray
    dtheta: np.ndarray
    terms: np.ndarray  # (N, K, 5) absolute values of the five combinations
    mod_k: np.ndarray  # (N, K)

    @property
    def mod(self) -> np.ndarray:
        return self.mod_k.sum(axis=1)

    def slice_params(self, i: int) -> ModParams:
        return ModParams(self.lam[i], self.alpha[i], self.beta[i], self.gamma[i], self.theta[i], self.times[i])

    def slice_derivatives(self, i: int) -> dict[str, np.ndarray]:
        return {"lam": self.dlam[i], "alpha": self.dalpha[i], "beta": self.dbeta[i], "gamma": self.dgamma[i], "theta": self.dtheta[i]}


def modulation_combinations(lam, alpha, beta, gamma, theta, dlam, dalpha, dbeta, dgamma, dtheta) -> np.ndarray:
    """Signed modulation combinations, last axis ordered
    ``(lam lam' + gamma, lam^2 gamma' + gamma^2, lam alpha' - 2 beta, lam^2 beta' + gamma beta, lam^2 theta' - 1 - |beta|^2)``;
    the vector entries are returned as arrays along a trailing axis of length d."""
    lam = np.asarray(lam)
    c1 = lam * dlam + gamma
    c2 = lam**2 * dgamma + gamma**2
    c3 = lam[..., None] * dalpha - 2 * beta
    c4 = lam[..., None] ** 2 * dbeta + gamma[..., None] * beta
    c5 = lam**2 * dtheta - 1 - np.sum(beta**2, axis=-1)
    return c1, c2, c3, c4, c5


def modulation_residuals(track: list[ModParams]) -> ModTrack:
    """Evaluate ``Mod_k(t)`` along a parameter track.

    Time derivatives use second-order differences (centred inside, one-sided
    at the ends; non-uniform spacing allowed).
    """
    if len(track) < 3:
        raise InsufficientSlices("at least three parameter slices are required")
    times = np.array([p.t for p in track], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise InsufficientSlices("slice times must increase strictly")
    lam = np.array([p.lam for p in track])
    alpha = np.array([p.alpha for p in track])
    beta = np.array([p.beta for p in track])
    gamma = np.array([p.gamma for p in track])
    theta = np.array([p.theta for p in track])
    grad = lambda a: np.gradient(a, times, axis=0, edge_order=2)  # noqa: E731
    dl, da, db, dg, dth = grad(lam), grad(alpha), grad(beta), grad(gamma), grad(theta)
    c1, c2, c3, c4, c5 = modulation_combinations(lam, alpha, beta, gamma, theta, dl, da, db, dg, dth)
    terms = np.stack([np.abs(c1), np.abs(c2), np.linalg.norm(c3, axis=-1), np.linalg.norm(c4, axis=-1), np.abs(c5)], axis=-1)
    return ModTrack(times, lam, alpha, beta, gamma, theta, dl, da, db, dg, dth, terms, terms.sum(axis=-1))


def profile_residual(params: ModParams, derivs: dict, grid: Grid, gs: GroundState | None = None):
    """Closed-form ``eta = i U_t + Lap U + |U|^(4/d) U`` of the modulated profile, bubble by bubble.

    Each bubble contributes
    ``e^{i theta} lambda^(-2-d/2) [ -(lam^2 theta' - 1 - |beta|^2) Q_k - (lam^2 beta' + gamma beta).y Q_k
    + (lam^2 gamma' + gamma^2)|y|^2 Q_k / 4 - i(lam alpha' - 2 beta).grad Q_k - i(lam lam' + gamma) Lambda Q_k ]``
    with ``grad`` and ``Lambda`` acting on the chirped ``Q_k``.  Interaction
    terms between bubbles are not included.  Returns ``(eta, ||eta||, ||grad eta||)``.
    """
    gs = gs or ground_state(grid.d)
    out = np.zeros(grid.shape, dtype=complex)
    for k in range(params.K):
        lam, alpha, beta, gamma, theta = params.bubble(k)
        c1, c2, c3, c4, c5 = modulation_combinations(
            lam, alpha, beta, gamma, theta,
            derivs["lam"][k], derivs["alpha"][k], derivs["beta"][k], derivs["gamma"][k], derivs["theta"][k],
        )
        f = bubble_frame(params, k, grid, gs)
        # bubble_frame directions carry lam^(-d/2) e^{i theta}; convert x-weights to y-weights
        yU = f["xU"] / lam
        y2U = f["x2U"] / lam**2
        gradyU = f["gradU"] * lam
        term = (
            -c5 * f["U"]
            - np.tensordot(c4, yU, axes=1)
            + 0.25 * c2 * y2U
            - 1j * np.tensordot(c3, gradyU, axes=1)
            - 1j * c1 * f["LambdaU"]
        )
        out += term / lam**2
    eta = Field(grid, out, params.t)
    return eta, l2_norm(eta), grad_norm(eta)


def direct_profile_residual(track_U: list[Field], i: int) -> Field:
    """``i dU/dt + Lap U + |U|^(4/d) U`` at slice ``i`` using centred time differences."""
    if not 0 < i < len(track_U) - 1:
        raise InsufficientSlices("centred difference needs neighbours on both sides")
    a, b, c = track_U[i - 1], track_U[i], track_U[i + 1]
    ta, tc = a.time, c.time
    dU = (c.values - a.values) / (tc - ta)
    d = b.grid.d
    return b.with_values(1j * dU + laplacian(b) + nonlinearity(b.values, d))


# ---------------------------------------------------------------------------
# records


@dataclass
class DiagnosticsRecord:
    t: float
    D: float
    P: float
    E: float
    mod: float
    mod_k: np.ndarray
    M: np.ndarray
    params: ModParams
    ortho_residual: float
    newton_iters: int
    mass_drift: float = 0.0
    energy_drift: float = 0.0

    def row(self) -> dict:
        p = self.params
        out = {"t": self.t, "D": self.D, "P": self.P, "E": self.E, "Mod": self.mod}
        for k in range(p.K):
            out[f"Mod_{k + 1}"] = self.mod_k[k]
        for k in range(p.K):
            out[f"M_{k + 1}"] = self.M[k]
        for k in range(p.K):
            out[f"lambda_{k + 1}"] = p.lam[k]
        for name, arr in (("alpha", p.alpha), ("beta", p.beta)):
            for k in range(p.K):
                for j in range(p.d):
                    out[f"{name}_{k + 1}" + ("" if p.d == 1 else f"_{j + 1}")] = arr[k, j]
        for k in range(p.K):
            out[f"gamma_{k + 1}"] = p.gamma[k]
        for k in range(p.K):
            out[f"theta_{k + 1}"] = p.theta[k]
        out["ortho_residual"] = self.ortho_residual
        out["newton_iters"] = self.newton_iters
        out["mass_drift"] = self.mass_drift
        out["energy_drift"] = self.energy_drift
        return out


def write_records(records: list[DiagnosticsRecord], path) -> Path:
    path = Path(path)
    rows = [r.row() for r in records]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(float(v)) for k, v in r.items()})
    return path


def track_decompositions(snapshots: list[Field], spec: ProfileSpec, guess: ModParams | None = None, gs=None, **kw) -> list[Decomposition]:
    """Decompose a sequence of snapshots, warm-starting each from the previous result.

    The first guess defaults to the pseudo-conformal parameters of ``spec``;
    subsequent guesses extrapolate the previous parameters along the
    pseudo-conformal law (``lambda, gamma`` proportional to ``T - t``).
    """
    gs = gs or ground_state(snapshots[0].grid.d)
    out = []
    soliton = spec.frame == "soliton"
    if soliton:
        prev = guess or soliton_params(spec, snapshots[0].time)
        loc = build_localization(prev.alpha, snapshots[0].grid)
    else:
        prev = guess or pseudo_conformal_params(spec, snapshots[0].time)
        loc = build_localization(spec.centers, snapshots[0].grid)
    for u in snapshots:
        if soliton:
            if out:
                last = out[-1].params
                ref = soliton_params(spec, u.time)
                prev = last.replace(alpha=last.alpha + ref.alpha - soliton_params(spec, last.t).alpha,
                                    theta=last.theta + ref.theta - soliton_params(spec, last.t).theta, t=u.time)
            loc = build_localization(prev.alpha, u.grid)
        elif out and spec.T is not None:
            last = out[-1].params
            ratio = (spec.T - u.time) / (spec.T - last.t)
            ref = pseudo_conformal_params(spec, u.time)
            prev = last.replace(
                lam=last.lam * ratio,
                gamma=last.gamma * ratio,
                theta=last.theta + (ref.theta - pseudo_conformal_params(spec, last.t).theta),
                t=u.time,
            )
        dec = decompose(u, prev.replace(t=u.time), spec, loc=loc, gs=gs, **kw)
        out.append(dec)
    return out


def build_records(decs: list[Decomposition], spec: ProfileSpec, ledger0: tuple | None = None, gs=None) -> list[DiagnosticsRecord]:
    """Diagnostics rows for a decomposed track; drifts are measured against ``ledger0 = (mass, energy)``."""
    gs = gs or ground_state(decs[0].grid.d)
    track = modulation_residuals([dc.params for dc in decs]) if len(decs) >= 3 else None
    out = []
    for i, dc in enumerate(decs):
        u = dc.remainder + make_U(dc.params, None, dc.grid, gs)
        if spec.T is not None and spec.T > dc.t:
            sc = remainder_scalars(dc, spec)
            D, P = sc.D, sc.P
        else:
            D, P = l2_norm(dc.remainder) + grad_norm(dc.remainder), float("nan")
        m, e = mass(u), energy(u)
        out.append(DiagnosticsRecord(
            t=dc.t, D=D, P=P, E=e,
            mod=float(track.mod[i]) if track is not None else float("nan"),
            mod_k=track.mod_k[i] if track is not None else np.full(dc.params.K, np.nan),
            M=localized_mass(dc, gs), params=dc.params, ortho_residual=dc.residual, newton_iters=dc.newton_iters,
            mass_drift=(m - ledger0[0]) if ledger0 else 0.0,
            energy_drift=(e - ledger0[1]) if ledger0 else 0.0,
        ))
    return out
