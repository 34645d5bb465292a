"""Smooth transition profiles and weights with analytic derivatives."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import Grid


def smoothstep(t, nu: int = 0):
    """Quintic smoothstep ``6t^5 - 15t^4 + 10t^3`` clamped to [0, 1], or its derivatives.

    ``nu`` up to 3 is supported; the third derivative jumps at the ends.
    """
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    tc = np.clip(t, 0.0, 1.0)
    if nu == 0:
        return tc**3 * (10 - 15 * tc + 6 * tc**2)
    if nu == 1:
        out = 30 * tc**2 * (1 - tc) ** 2
    elif nu == 2:
        out = 60 * tc * (1 - tc) * (1 - 2 * tc)
    elif nu == 3:
        out = 60 * (1 - 6 * tc + 6 * tc**2)
    else:
        raise ValueError("nu must be 0..3")
    return np.where(inside, out, 0.0)


SMOOTHSTEP_MAX_SLOPE = 15.0 / 8.0  # value of s'(1/2)


@dataclass(frozen=True, eq=False)
class VirialWeight:
    """A weight ``Phi`` sampled on a grid with the derivatives the virial identities need.

    ``grad`` has shape ``(d, ...)``, ``hess`` ``(d, d, ...)`` and ``grad_lap``
    (the gradient of ``Lap Phi``) ``(d, ...)``.
    """

    grid: Grid
    phi: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    grad_lap: np.ndarray

    @property
    def lap(self) -> np.ndarray:
        return np.trace(self.hess, axis1=0, axis2=1)

    def __sub__(self, other: "VirialWeight") -> "VirialWeight":
        return VirialWeight(self.grid, self.phi - other.phi, self.grad - other.grad, self.hess - other.hess, self.grad_lap - other.grad_lap)

    def one_minus(self) -> "VirialWeight":
        return VirialWeight(self.grid, 1 - self.phi, -self.grad, -self.hess, -self.grad_lap)


def quadratic_weight(grid: Grid, center=None) -> VirialWeight:
    """``Phi = |x - c|^2`` (classical variance weight)."""
    d = grid.d
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    z = np.stack([x - ci for x, ci in zip(grid.coords, c)])
    hess = np.zeros((d, d) + grid.shape)
    for i in range(d):
        hess[i, i] = 2.0
    return VirialWeight(grid, np.sum(z**2, axis=0), 2 * z, hess, np.zeros((d,) + grid.shape))


def ramp_weight(grid: Grid, direction, start: float, stop: float, reverse: bool = True) -> VirialWeight:
    """Planar ramp along ``direction``: equal to 1 for ``x.e <= start`` and 0 for ``x.e >= stop``
    (or the reverse if ``reverse`` is False), with a quintic smoothstep in between."""
    d = grid.d
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    s = np.tensordot(e, np.stack(grid.coords), axes=1)
    w = stop - start
    t = (s - start) / w
    sign = -1.0 if reverse else 1.0
    phi = smoothstep(t)
    phi = 1 - phi if reverse else phi
    g1 = sign * smoothstep(t, 1) / w
    g2 = sign * smoothstep(t, 2) / w**2
    g3 = sign * smoothstep(t, 3) / w**3
    grad = np.stack([ei * g1 for ei in e])
    hess = np.stack([np.stack([e[i] * e[j] * g2 for j in range(d)]) for i in range(d)])
    grad_lap = np.stack([ei * g3 for ei in e])
    return VirialWeight(grid, phi, grad, hess, grad_lap)


def constant_weight(grid: Grid, value: float = 1.0) -> VirialWeight:
    d = grid.d
    z = np.zeros((d,) + grid.shape)
    return VirialWeight(grid, np.full(grid.shape, float(value)), z, np.zeros((d, d) + grid.shape), z.copy())
