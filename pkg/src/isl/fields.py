"""Periodic grids, complex fields, wave packets and norm evaluation.

Everything downstream works on uniform periodic grids with power-of-two
sampling, so spectral derivatives and free propagation are exact up to
roundoff for band-limited data.  Packets are Gaussians; preconditions keep
their momentum content inside the Nyquist ball and their tails off the
domain boundary, which is what makes the periodic wrap-around harmless.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "UniformGrid",
    "ComplexField",
    "StateClass",
    "make_grid",
    "gaussian_packet",
    "boost",
    "translate",
    "fourier",
    "inverse_fourier",
    "inner",
    "l2_norm",
    "boundary_mass",
    "momentum_tail_mass",
    "norm_suite",
]


def _as_tuple(value, dim: int, name: str) -> tuple:
    if np.isscalar(value):
        return (value,) * dim
    out = tuple(value)
    if len(out) != dim:
        raise ValueError(f"{name} needs {dim} entries, got {len(out)}")
    return out


@dataclass(frozen=True)
class UniformGrid:
    """Uniform periodic grid on a symmetric box [-L_i/2, L_i/2)^dim.

    Node i along an axis sits at -L/2 + i*dx, so the box midpoint is a
    grid node and the DFT momentum spacing is 2*pi/L per axis.
    """

    extents: tuple[float, ...]
    points: tuple[int, ...]

    def __post_init__(self):
        if len(self.extents) != len(self.points):
            raise ValueError("extents and points must have matching length")
        if len(self.extents) not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {len(self.extents)}")
        for L in self.extents:
            if not (L > 0):
                raise ValueError(f"extent must be positive, got {L}")
        for n in self.points:
            if n < 16 or (n & (n - 1)) != 0:
                raise ValueError(f"points must be a power of two >= 16, got {n}")

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.points

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.extents, self.points))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def momentum_spacing(self) -> tuple[float, ...]:
        return tuple(2.0 * np.pi / L for L in self.extents)

    @property
    def momentum_max(self) -> tuple[float, ...]:
        return tuple(np.pi / dx for dx in self.spacing)

    def axis(self, i: int) -> np.ndarray:
        """Node coordinates along axis i."""
        L, n = self.extents[i], self.points[i]
        return -L / 2.0 + (L / n) * np.arange(n)

    def meshgrid(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*(self.axis(i) for i in range(self.dim)), indexing="ij")

    def momentum_axis(self, i: int) -> np.ndarray:
        """DFT momentum nodes along axis i, in fft layout."""
        return 2.0 * np.pi * np.fft.fftfreq(self.points[i], d=self.spacing[i])

    def momentum_meshgrid(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(
            *(self.momentum_axis(i) for i in range(self.dim)), indexing="ij"
        )

    def radius(self) -> np.ndarray:
        """Euclidean distance of each node from the origin."""
        mesh = self.meshgrid()
        return np.sqrt(sum(x * x for x in mesh))


def make_grid(extent, points, dim: int = 1) -> UniformGrid:
    """Build a symmetric periodic grid.

    Parameters
    ----------
    extent : float or sequence of float
        Box side length per axis.
    points : int or sequence of int
        Samples per axis; each must be a power of two >= 16.
    dim : int
        1 or 2.
    """
    ext = tuple(float(e) for e in _as_tuple(extent, dim, "extent"))
    pts = tuple(int(n) for n in _as_tuple(points, dim, "points"))
    return UniformGrid(ext, pts)


@dataclass
class ComplexField:
    """Complex samples on a UniformGrid."""

    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    def copy(self) -> "ComplexField":
        return ComplexField(self.grid, self.values.copy())


def l2_norm(field: ComplexField) -> float:
    v = field.values
    return float(np.sqrt(np.sum(np.abs(v) ** 2).real * field.grid.cell_volume))


def inner(f: ComplexField, g: ComplexField) -> complex:
    """L2 pairing, linear in the first argument: sum f * conj(g) * dV."""
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    return complex(np.sum(f.values * np.conj(g.values)) * f.grid.cell_volume)


def fourier(field: ComplexField) -> np.ndarray:
    """Unitary Fourier transform sampled on the DFT momentum nodes.

    Uses the convention fhat(p) = (2 pi)^(-n/2) * integral e^(-i p x) f(x) dx,
    so Parseval holds with the momentum cell volume prod(dp_i).
    """
    grid = field.grid
    vals = np.fft.fftn(field.values)
    # account for the -L/2 node offset and the quadrature measure
    for i in range(grid.dim):
        p = grid.momentum_axis(i)
        x0 = grid.axis(i)[0]
        shape = [1] * grid.dim
        shape[i] = grid.points[i]
        vals = vals * np.exp(-1j * p * x0).reshape(shape)
    vals *= grid.cell_volume / (2.0 * np.pi) ** (grid.dim / 2.0)
    return vals


def inverse_fourier(grid: UniformGrid, vals: np.ndarray) -> ComplexField:
    work = vals.copy()
    for i in range(grid.dim):
        p = grid.momentum_axis(i)
        x0 = grid.axis(i)[0]
        shape = [1] * grid.dim
        shape[i] = grid.points[i]
        work = work * np.exp(1j * p * x0).reshape(shape)
    work = np.fft.ifftn(work)
    work *= (2.0 * np.pi) ** (grid.dim / 2.0) / grid.cell_volume
    return ComplexField(grid, work)


def gaussian_packet(grid: UniformGrid, center, width, momentum) -> ComplexField:
    """Normalized Gaussian wave packet exp(-|x-c|^2/(4 sigma^2) + i k.x).

    width may be a scalar or per-axis sequence; the per-axis Nyquist margin
    |k_i| + 3/width_i <= 0.9 * p_max,i must hold, and the packet must not
    touch the domain boundary (relative tail mass above 1e-8 is rejected).
    """
    dim = grid.dim
    c = np.asarray(_as_tuple(center, dim, "center"), dtype=float)
    sig = np.asarray(_as_tuple(width, dim, "width"), dtype=float)
    k = np.asarray(_as_tuple(momentum, dim, "momentum"), dtype=float)
    for i in range(dim):
        dx = grid.spacing[i]
        if sig[i] < 4.0 * dx:
            raise ValueError(
                f"width {sig[i]:g} under-resolved on axis {i}: need >= 4*dx = {4*dx:g}"
            )
        pmax = grid.momentum_max[i]
        if abs(k[i]) + 3.0 / sig[i] > 0.9 * pmax:
            raise ValueError(
                f"momentum content {abs(k[i]) + 3.0/sig[i]:g} exceeds 0.9*p_max = "
                f"{0.9*pmax:g} on axis {i}"
            )
    mesh = grid.meshgrid()
    expo = np.zeros(grid.shape, dtype=complex)
    for i in range(dim):
        expo += -((mesh[i] - c[i]) ** 2) / (4.0 * sig[i] ** 2) + 1j * k[i] * mesh[i]
    vals = np.exp(expo)
    vals *= np.prod((2.0 * np.pi * sig**2) ** (-0.25))
    field = ComplexField(grid, vals)
    nrm = l2_norm(field)
    field.values /= nrm
    tail = boundary_mass(field)
    if tail > 1e-8:
        raise ValueError(f"packet mass {tail:.3e} on the boundary shell exceeds 1e-8")
    return field


def boundary_mass(field: ComplexField, cells: int = 2) -> float:
    """Relative L2 mass in the outermost `cells`-wide boundary shell."""
    v = np.abs(field.values) ** 2
    total = float(np.sum(v))
    if total == 0.0:
        return 0.0
    mask = np.zeros(field.grid.shape, dtype=bool)
    for i in range(field.grid.dim):
        sl = [slice(None)] * field.grid.dim
        sl[i] = slice(0, cells)
        mask[tuple(sl)] = True
        sl[i] = slice(-cells, None)
        mask[tuple(sl)] = True
    return float(np.sum(v[mask]) / total)


def translate(field: ComplexField, shift) -> ComplexField:
    """Translate by a lattice vector (each component a multiple of dx)."""
    grid = field.grid
    sh = _as_tuple(shift, grid.dim, "shift")
    cells = []
    for i, s in enumerate(sh):
        dx = grid.spacing[i]
        n = s / dx
        if abs(n - round(n)) > 1e-9:
            raise ValueError(f"shift {s} is not a multiple of dx={dx} on axis {i}")
        cells.append(round(n))
    return ComplexField(grid, np.roll(field.values, cells, axis=tuple(range(grid.dim))))


def boost(
    field: ComplexField, velocity, mass: float = 1.0, check_nyquist: bool = True
) -> ComplexField:
    """Multiply by exp(i m v.x), translating momentum support by m*v."""
    grid = field.grid
    v = np.asarray(_as_tuple(velocity, grid.dim, "velocity"), dtype=float)
    mesh = grid.meshgrid()
    phase = np.zeros(grid.shape)
    for i in range(grid.dim):
        phase = phase + mass * v[i] * mesh[i]
    out = ComplexField(grid, field.values * np.exp(1j * phase))
    if check_nyquist:
        tail = momentum_tail_mass(out, 0.9)
        if tail > 1e-8:
            raise ValueError(
                f"boosted momentum tail mass {tail:.3e} beyond 0.9*p_max exceeds 1e-8"
            )
    return out


def momentum_tail_mass(field: ComplexField, fraction: float = 0.9) -> float:
    """Relative momentum-space mass outside the per-axis |p_i| <= fraction*p_max box."""
    grid = field.grid
    vals = np.fft.fftn(field.values)
    dens = np.abs(vals) ** 2
    total = float(np.sum(dens))
    if total == 0.0:
        return 0.0
    inside = np.ones(grid.shape, dtype=bool)
    for i in range(grid.dim):
        p = np.abs(grid.momentum_axis(i))
        shape = [1] * grid.dim
        shape[i] = grid.points[i]
        inside &= (p <= fraction * grid.momentum_max[i]).reshape(shape)
    return float(np.sum(dens[~inside]) / total)


@dataclass(frozen=True)
class StateClass:
    """Momentum-localization class: support inside the ball B_{m*eta}(m*v)."""

    eta: float
    speed: float
    mass: float = 1.0
    tail_tol: float = 1e-8

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.speed < 0:
            raise ValueError("speed must be nonnegative")

    def tail_mass(self, field: ComplexField, direction=None) -> float:
        """Relative momentum mass outside B_{m*eta}(m*speed*direction)."""
        grid = field.grid
        if direction is None:
            d = np.zeros(grid.dim)
            d[0] = 1.0
        else:
            d = np.asarray(direction, dtype=float)
            d = d / np.linalg.norm(d)
        center = self.mass * self.speed * d
        mesh = grid.momentum_meshgrid()
        r2 = np.zeros(grid.shape)
        for i in range(grid.dim):
            r2 = r2 + (mesh[i] - center[i]) ** 2
        dens = np.abs(np.fft.fftn(field.values)) ** 2
        total = float(np.sum(dens))
        outside = r2 > (self.mass * self.eta) ** 2
        return float(np.sum(dens[outside]) / total)

    def admits(self, field: ComplexField, direction=None) -> bool:
        return self.tail_mass(field, direction) <= self.tail_tol


def _spectral_gradient(field: ComplexField) -> list[np.ndarray]:
    grid = field.grid
    vhat = np.fft.fftn(field.values)
    grads = []
    for i in range(grid.dim):
        p = grid.momentum_axis(i)
        shape = [1] * grid.dim
        shape[i] = grid.points[i]
        grads.append(np.fft.ifftn(vhat * (1j * p).reshape(shape)))
    return grads


def _coerce_field(f, grid: UniformGrid | None) -> ComplexField:
    if isinstance(f, ComplexField):
        return f
    if hasattr(f, "sample") and grid is not None:
        return ComplexField(grid, np.asarray(f.sample(grid), dtype=complex))
    if grid is not None:
        return ComplexField(grid, np.asarray(f, dtype=complex))
    raise ValueError("need a ComplexField, or an array/sampler plus a grid")


def norm_suite(
    f,
    names: Iterable[str],
    *,
    grid: UniformGrid | None = None,
    p: float | None = None,
    gamma: float | None = None,
) -> dict[str, float]:
    """Evaluate a set of norms on a field.

    Supported names: "L2", "W12" (Sobolev with spectral gradient),
    "W1q" (integrability index q = p+1, needs p), "L1gamma" (weight
    (1+|x|)^gamma, needs gamma >= 0), "N" (sup over unit windows of the
    windowed integral of |f|^2, one dimension only).
    """
    field = _coerce_field(f, grid)
    g = field.grid
    dV = g.cell_volume
    out: dict[str, float] = {}
    for name in names:
        if name == "L2":
            out[name] = l2_norm(field)
        elif name == "W12":
            acc = np.sum(np.abs(field.values) ** 2)
            for gr in _spectral_gradient(field):
                acc += np.sum(np.abs(gr) ** 2)
            out[name] = float(np.sqrt(acc.real * dV))
        elif name == "W1q":
            if p is None:
                raise ValueError("W1q norm needs the power p (q = p + 1)")
            q = p + 1.0
            acc = np.sum(np.abs(field.values) ** q)
            for gr in _spectral_gradient(field):
                acc += np.sum(np.abs(gr) ** q)
            out[name] = float((acc.real * dV) ** (1.0 / q))
        elif name == "L1gamma":
            if gamma is None or gamma < 0:
                raise ValueError("L1gamma norm needs gamma >= 0")
            w = (1.0 + g.radius()) ** gamma
            out[name] = float(np.sum(np.abs(field.values) * w) * dV)
        elif name == "N":
            if g.dim != 1:
                raise ValueError("unit-window norm N is defined in one dimension")
            dx = g.spacing[0]
            w = max(1, int(round(1.0 / dx)))
            dens = np.abs(field.values) ** 2 * dx
            csum = np.concatenate([[0.0], np.cumsum(dens)])
            n = g.points[0]
            if w >= n:
                out[name] = float(csum[-1])
            else:
                windows = csum[w:] - csum[:-w]
                out[name] = float(np.max(windows))
        else:
            raise ValueError(f"unknown norm {name!r}")
    return out
