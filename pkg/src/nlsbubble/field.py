"""Uniform periodic grids, sampled complex fields and the conserved functionals.

All integrals use the rectangle rule on the periodic grid, which is
spectrally accurate for smooth, exponentially decaying integrands.
Derivatives are spectral.
"""
from __future__ import annotations

import functools
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BoundaryMass, ShapeMismatch, ZeroField

MAGIC = b"NLSF"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid in one or two dimensions.

    Sample ``i`` along axis ``a`` sits at ``origin[a] + i * h[a]`` with
    ``h[a] = box_length[a] / n[a]``.
    """

    n: tuple[int, ...]
    box_length: tuple[float, ...]
    origin: tuple[float, ...]

    def __post_init__(self):
        n = tuple(int(v) for v in self.n)
        box = tuple(float(v) for v in self.box_length)
        origin = tuple(float(v) for v in self.origin)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "box_length", box)
        object.__setattr__(self, "origin", origin)
        if len(n) not in (1, 2) or len(box) != len(n) or len(origin) != len(n):
            raise ValueError("grid must be 1D or 2D with matching n/box_length/origin")
        for m in n:
            if m < 64 or m & (m - 1):
                raise ValueError(f"sample count {m} must be a power of two >= 64")
        if min(box) <= 0:
            raise ValueError("box_length must be positive")

    @classmethod
    def centered(cls, d: int, n: int, box_length: float) -> "Grid":
        """Grid with the origin in the middle of the box."""
        return cls((n,) * d, (box_length,) * d, (-box_length / 2,) * d)

    @property
    def d(self) -> int:
        return len(self.n)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(b / m for b, m in zip(self.box_length, self.n))

    @property
    def dV(self) -> float:
        return float(np.prod(self.h))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.n

    @property
    def axes(self) -> list[np.ndarray]:
        return _axes(self)

    @property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Unwrapped coordinates, one array of the grid shape per axis."""
        return _coords(self)

    @property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        return _wavenumbers(self)

    @property
    def k2(self) -> np.ndarray:
        return _k2(self)

    def radius(self, center=None) -> np.ndarray:
        c = np.zeros(self.d) if center is None else np.atleast_1d(center)
        return np.sqrt(sum((x - ci) ** 2 for x, ci in zip(self.coords, c)))

    def same_as(self, other: "Grid") -> bool:
        return (
            self.n == other.n
            and np.allclose(self.box_length, other.box_length, rtol=0, atol=1e-12)
            and np.allclose(self.origin, other.origin, rtol=0, atol=1e-12)
        )


@functools.lru_cache(maxsize=32)
def _axes(grid: Grid) -> list[np.ndarray]:
    return [o + h * np.arange(m) for o, h, m in zip(grid.origin, grid.h, grid.n)]


@functools.lru_cache(maxsize=32)
def _coords(grid: Grid) -> tuple[np.ndarray, ...]:
    out = np.meshgrid(*_axes(grid), indexing="ij")
    for a in out:
        a.flags.writeable = False
    return tuple(out)


@functools.lru_cache(maxsize=32)
def _wavenumbers(grid: Grid) -> tuple[np.ndarray, ...]:
    ks = [2 * np.pi * np.fft.fftfreq(m, d=h) for m, h in zip(grid.n, grid.h)]
    out = np.meshgrid(*ks, indexing="ij")
    for a in out:
        a.flags.writeable = False
    return tuple(out)


@functools.lru_cache(maxsize=32)
def _k2(grid: Grid) -> np.ndarray:
    out = sum(k**2 for k in _wavenumbers(grid))
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Field:
    """Complex samples of a function on a :class:`Grid`.

    ``time`` is carried along so snapshots are self-describing.
    """

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        if v.shape != self.grid.shape:
            raise ShapeMismatch(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if v.flags.writeable:
            v = v.copy()
            v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def with_values(self, values, time=None) -> "Field":
        return Field(self.grid, values, self.time if time is None else time)

    def __add__(self, other):
        if isinstance(other, Field):
            _check_same(self, other)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __sub__(self, other):
        if isinstance(other, Field):
            _check_same(self, other)
            return self.with_values(self.values - other.values)
        return self.with_values(self.values - other)

    def __mul__(self, c):
        if isinstance(c, Field):
            _check_same(self, c)
            return self.with_values(self.values * c.values)
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def conj(self) -> "Field":
        return self.with_values(np.conj(self.values))

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    @property
    def imag(self) -> np.ndarray:
        return self.values.imag


def _check_same(a: Field, b: Field):
    if not a.grid.same_as(b.grid):
        raise ShapeMismatch("fields live on different grids")


def zeros(grid: Grid, time: float = 0.0) -> Field:
    return Field(grid, np.zeros(grid.shape, dtype=complex), time)


# ---------------------------------------------------------------------------
# quadrature and derivatives


def integrate(grid: Grid, f: np.ndarray):
    """Rectangle rule over the periodic box."""
    return np.sum(f) * grid.dV


def inner(a: Field | np.ndarray, b: Field | np.ndarray, grid: Grid | None = None) -> complex:
    """Complex inner product ``int a * conj(b) dx``."""
    g = grid or (a.grid if isinstance(a, Field) else b.grid)
    av = a.values if isinstance(a, Field) else a
    bv = b.values if isinstance(b, Field) else b
    return complex(np.vdot(bv, av) * g.dV)


def real_inner(a, b, grid: Grid | None = None) -> float:
    """``Re int a * conj(b) dx`` -- the real L2 product of complex fields."""
    return inner(a, b, grid).real


def fourier(u: Field) -> np.ndarray:
    return np.fft.fftn(u.values)


def gradient(u: Field | np.ndarray, grid: Grid | None = None) -> np.ndarray:
    """Spectral gradient, shape ``(d, *grid.shape)``."""
    g = grid or u.grid
    v = u.values if isinstance(u, Field) else u
    uh = np.fft.fftn(v)
    return np.stack([np.fft.ifftn(1j * k * uh) for k in g.wavenumbers])


def laplacian(u: Field | np.ndarray, grid: Grid | None = None) -> np.ndarray:
    g = grid or u.grid
    v = u.values if isinstance(u, Field) else u
    return np.fft.ifftn(-g.k2 * np.fft.fftn(v))


def dilation(u: Field | np.ndarray, grid: Grid | None = None, center=None) -> np.ndarray:
    """``(d/2 + (x - center) . grad) u`` with unwrapped coordinates."""
    g = grid or u.grid
    v = u.values if isinstance(u, Field) else u
    c = np.zeros(g.d) if center is None else np.atleast_1d(center)
    grad = gradient(v, g)
    return 0.5 * g.d * v + sum((x - ci) * gi for x, ci, gi in zip(g.coords, c, grad))


def _grad_sq_integral(u: Field) -> float:
    uh = fourier(u)
    g = u.grid
    return float(np.sum(g.k2 * np.abs(uh) ** 2) * g.dV / np.prod(g.n))


# ---------------------------------------------------------------------------
# conserved functionals


def mass(u: Field) -> float:
    return float(np.sum(np.abs(u.values) ** 2) * u.grid.dV)


def l2_norm(u: Field) -> float:
    return float(np.sqrt(mass(u)))


def grad_norm(u: Field) -> float:
    return float(np.sqrt(_grad_sq_integral(u)))


def h1_norm(u: Field) -> float:
    return float(np.sqrt(mass(u) + _grad_sq_integral(u)))


def potential_integral(u: Field) -> float:
    """``int |u|^(2+4/d) dx``."""
    d = u.grid.d
    return float(np.sum(np.abs(u.values) ** (2 + 4 / d)) * u.grid.dV)


def energy(u: Field) -> float:
    d = u.grid.d
    return 0.5 * _grad_sq_integral(u) - d / (2 * d + 4) * potential_integral(u)


def momentum(u: Field) -> np.ndarray:
    """``Im int grad(u) conj(u) dx``, one entry per axis."""
    grad = gradient(u)
    return np.array([float(np.sum(gi * np.conj(u.values)).imag * u.grid.dV) for gi in grad])


def edge_mass(u: Field, fraction: float = 0.125) -> float:
    """Mass in the outer ``fraction`` of the box along any axis."""
    g = u.grid
    mask = np.zeros(g.shape, dtype=bool)
    for x, o, b in zip(g.coords, g.origin, g.box_length):
        mask |= (x - o < fraction * b) | (o + b - x <= fraction * b)
    return float(np.sum(np.abs(u.values[mask]) ** 2) * g.dV)


def check_boundary(u: Field, tol: float = 1e-6, fraction: float = 0.125):
    m = edge_mass(u, fraction)
    if m > tol:
        raise BoundaryMass(f"mass {m:.3e} within the outer {fraction:g} of the box exceeds {tol:g}")


def weighted_l2_norm(u: Field, center=None) -> float:
    """``|| (x - center) u ||_{L2}`` using unwrapped coordinates."""
    r = u.grid.radius(center)
    return float(np.sqrt(np.sum((r * np.abs(u.values)) ** 2) * u.grid.dV))


def sigma_norm(u: Field, center=None, guard_tol: float = 1e-6) -> tuple[float, float, float]:
    """Pseudo-conformal norm ``||u||_{H1} + ||x u||_{L2}``.

    Returns ``(total, h1, xnorm)``; raises :class:`BoundaryMass` when the
    weighted norm would be polluted by periodic wraparound.
    """
    check_boundary(u, guard_tol)
    h1 = h1_norm(u)
    xn = weighted_l2_norm(u, center)
    return h1 + xn, h1, xn


# ---------------------------------------------------------------------------
# nonlinearity


def nonlinearity(z: np.ndarray, d: int) -> np.ndarray:
    """``f(z) = |z|^(4/d) z``."""
    return np.abs(z) ** (4 / d) * z


def nonlinearity_layers(U, R, d: int | None = None):
    """Return ``(f(U), f'(U).R, f''(U,R).R^2)``.

    The second-order layer is the exact remainder
    ``f(U+R) - f(U) - f'(U).R`` so the three layers sum to ``f(U+R)``.
    At ``U = 0`` the factor ``|U|^(4/d-2) U^2`` is taken to be zero.
    """
    out_field = isinstance(U, Field)
    if out_field:
        grid = U.grid
        d = grid.d
        Uv, Rv = U.values, (R.values if isinstance(R, Field) else R)
    else:
        Uv, Rv = np.asarray(U, dtype=complex), np.asarray(R, dtype=complex)
        if d is None:
            raise ValueError("dimension d required for array input")
    p = 4 / d
    a = np.abs(Uv)
    fU = a**p * Uv
    with np.errstate(divide="ignore", invalid="ignore"):
        mixed = np.where(a > 0, a ** (p - 2) * Uv**2, 0.0)
    f1 = (1 + 2 / d) * a**p * Rv + (2 / d) * mixed * np.conj(Rv)
    f2 = nonlinearity(Uv + Rv, d) - fU - f1
    if out_field:
        return U.with_values(fU), U.with_values(f1), U.with_values(f2)
    return fU, f1, f2


def gagliardo_nirenberg_check(u: Field, p: float) -> float:
    """``||u||_Lp / (||u||_2^(1-s) ||grad u||_2^s)`` with ``s = d(1/2 - 1/p)``."""
    if not 2 <= p < np.inf:
        raise ValueError("exponent must satisfy 2 <= p < inf")
    d = u.grid.d
    l2 = l2_norm(u)
    if l2 == 0:
        raise ZeroField("Gagliardo-Nirenberg ratio undefined for the zero field")
    s = d * (0.5 - 1 / p)
    lp = float((np.sum(np.abs(u.values) ** p) * u.grid.dV) ** (1 / p))
    if s == 0:
        return lp / l2
    gn = grad_norm(u)
    if gn == 0:
        raise ZeroField("gradient vanishes")
    return lp / (l2 ** (1 - s) * gn**s)


# ---------------------------------------------------------------------------
# serialization

_HEADER = struct.Struct("<4sII")


def field_to_bytes(u: Field) -> bytes:
    """Flat little-endian layout: header then interleaved re/im doubles."""
    g = u.grid
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, FORMAT_VERSION, g.d))
    buf.write(struct.pack(f"<{g.d}q", *g.n))
    buf.write(struct.pack(f"<{g.d}d", *g.box_length))
    buf.write(struct.pack(f"<{g.d}d", *g.origin))
    buf.write(struct.pack("<d", u.time))
    inter = np.empty(u.values.size * 2, dtype="<f8")
    flat = u.values.ravel(order="C")
    inter[0::2] = flat.real
    inter[1::2] = flat.imag
    buf.write(inter.tobytes())
    return buf.getvalue()


def field_from_bytes(data: bytes) -> Field:
    magic, version, d = _HEADER.unpack_from(data, 0)
    if magic != MAGIC or version != FORMAT_VERSION:
        raise ValueError("not a field snapshot")
    off = _HEADER.size
    n = struct.unpack_from(f"<{d}q", data, off)
    off += 8 * d
    box = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    origin = struct.unpack_from(f"<{d}d", data, off)
    off += 8 * d
    (time,) = struct.unpack_from("<d", data, off)
    off += 8
    inter = np.frombuffer(data, dtype="<f8", offset=off)
    vals = (inter[0::2] + 1j * inter[1::2]).reshape(n)
    return Field(Grid(n, box, origin), vals, time)


def save_field(u: Field, path) -> Path:
    path = Path(path)
    path.write_bytes(field_to_bytes(u))
    return path


def load_field(path) -> Field:
    return field_from_bytes(Path(path).read_bytes())


def save_field_csv(u: Field, path) -> Path:
    """Lossy text dump for inspection: coordinates, real and imaginary parts."""
    g = u.grid
    cols = [c.ravel() for c in g.coords] + [u.values.real.ravel(), u.values.imag.ravel()]
    names = ["x", "y"][: g.d] + ["re", "im"]
    path = Path(path)
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names), comments="", fmt="%.10g")
    return path
