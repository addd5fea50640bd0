"""Closed-form scalar fields used as potentials, sources and phantoms.

Each entry evaluates on coordinate arrays, knows its own support radius and
can integrate itself exactly or by quadrature along straight lines.  Having
closed forms available keeps quadrature targets independent of any grid
sampling used by the propagators.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .fields import UniformGrid

__all__ = [
    "ScalarField",
    "GaussianField",
    "DiskField",
    "RingField",
    "SmoothBumpField",
    "RotatedField",
    "ShiftedField",
    "SumField",
    "PotentialSpec",
    "from_catalog",
]

# value below which a field is treated as absent when bounding its support
_SUPPORT_CUT = 1e-12


class ScalarField:
    """Base for closed-form fields; subclasses fill in __call__ and radii."""

    def __call__(self, *coords: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def support_radius(self) -> float:
        """Distance from the origin beyond which the field is negligible."""
        raise NotImplementedError

    def sample(self, grid: UniformGrid) -> np.ndarray:
        return np.asarray(self(*grid.meshgrid()), dtype=float)

    def line_integral(self, point, direction) -> float:
        """Integral along tau -> point + tau*direction over the full line."""
        p = np.atleast_1d(np.asarray(point, dtype=float))
        d = np.atleast_1d(np.asarray(direction, dtype=float))
        d = d / np.linalg.norm(d)
        # the segment of the line inside the support ball
        proj = -float(p @ d)
        half = self.support_radius + np.linalg.norm(p + proj * d) + 1.0
        val, _ = quad(
            lambda t: float(self(*(p + t * d))),
            proj - half,
            proj + half,
            limit=400,
        )
        return val


@dataclass(frozen=True)
class GaussianField(ScalarField):
    """amplitude * exp(-|x - center|^2 / width^2)."""

    amplitude: float
    center: tuple[float, ...]
    width: float

    def __call__(self, *coords):
        r2 = sum((c - c0) ** 2 for c, c0 in zip(coords, self.center))
        return self.amplitude * np.exp(-r2 / self.width**2)

    @property
    def support_radius(self) -> float:
        reach = self.width * np.sqrt(np.log(max(abs(self.amplitude), 1.0) / _SUPPORT_CUT))
        return float(np.linalg.norm(self.center) + reach)

    def line_integral(self, point, direction) -> float:
        p = np.atleast_1d(np.asarray(point, dtype=float)) - np.asarray(self.center)
        d = np.atleast_1d(np.asarray(direction, dtype=float))
        d = d / np.linalg.norm(d)
        perp2 = float(p @ p - (p @ d) ** 2)
        return float(
            self.amplitude * self.width * np.sqrt(np.pi) * np.exp(-perp2 / self.width**2)
        )


@dataclass(frozen=True)
class DiskField(ScalarField):
    """amplitude on the closed ball |x - center| <= radius, zero outside."""

    amplitude: float
    center: tuple[float, ...]
    radius: float

    def __call__(self, *coords):
        r2 = sum((c - c0) ** 2 for c, c0 in zip(coords, self.center))
        return np.where(r2 <= self.radius**2, self.amplitude, 0.0)

    @property
    def support_radius(self) -> float:
        return float(np.linalg.norm(self.center) + self.radius)

    def line_integral(self, point, direction) -> float:
        p = np.atleast_1d(np.asarray(point, dtype=float)) - np.asarray(self.center)
        d = np.atleast_1d(np.asarray(direction, dtype=float))
        d = d / np.linalg.norm(d)
        perp2 = float(p @ p - (p @ d) ** 2)
        if perp2 >= self.radius**2:
            return 0.0
        return float(self.amplitude * 2.0 * np.sqrt(self.radius**2 - perp2))


@dataclass(frozen=True)
class RingField(ScalarField):
    """Radial Gaussian shell amplitude * exp(-((|x-center|-radius)/width)^2)."""

    amplitude: float
    center: tuple[float, ...]
    radius: float
    width: float

    def __call__(self, *coords):
        r = np.sqrt(sum((c - c0) ** 2 for c, c0 in zip(coords, self.center)))
        return self.amplitude * np.exp(-((r - self.radius) / self.width) ** 2)

    @property
    def support_radius(self) -> float:
        reach = self.width * np.sqrt(np.log(max(abs(self.amplitude), 1.0) / _SUPPORT_CUT))
        return float(np.linalg.norm(self.center) + self.radius + reach)


@dataclass(frozen=True)
class SmoothBumpField(ScalarField):
    """Compactly supported bump amplitude * exp(1 - 1/(1 - (r/radius)^2))."""

    amplitude: float
    center: tuple[float, ...]
    radius: float

    def __call__(self, *coords):
        r2 = sum((c - c0) ** 2 for c, c0 in zip(coords, self.center))
        t = r2 / self.radius**2
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            out = np.where(
                t < 1.0, self.amplitude * np.exp(1.0 - 1.0 / np.maximum(1.0 - t, 1e-300)), 0.0
            )
        return out

    @property
    def support_radius(self) -> float:
        return float(np.linalg.norm(self.center) + self.radius)


@dataclass(frozen=True)
class RotatedField(ScalarField):
    """Planar field evaluated in coordinates rotated by -angle.

    Sampling RotatedField(f, a) probes f along a frame rotated by +a, so a
    fixed-direction probe against the rotated field equals a rotated-direction
    probe against f.
    """

    base: ScalarField
    angle: float

    def __call__(self, *coords):
        x, y = coords
        ca, sa = np.cos(self.angle), np.sin(self.angle)
        return self.base(ca * x + sa * y, -sa * x + ca * y)

    @property
    def support_radius(self) -> float:
        return self.base.support_radius

    def line_integral(self, point, direction) -> float:
        ca, sa = np.cos(self.angle), np.sin(self.angle)
        rot = np.array([[ca, sa], [-sa, ca]])
        return self.base.line_integral(rot @ np.asarray(point), rot @ np.asarray(direction))


@dataclass(frozen=True)
class ShiftedField(ScalarField):
    """Field evaluated at x + offset (probes the base along shifted lines)."""

    base: ScalarField
    offset: tuple[float, ...]

    def __call__(self, *coords):
        return self.base(*(c + o for c, o in zip(coords, self.offset)))

    @property
    def support_radius(self) -> float:
        return float(self.base.support_radius + np.linalg.norm(self.offset))


@dataclass(frozen=True)
class SumField(ScalarField):
    parts: tuple[ScalarField, ...]

    def __call__(self, *coords):
        return sum(p(*coords) for p in self.parts)

    @property
    def support_radius(self) -> float:
        return max(p.support_radius for p in self.parts)

    def line_integral(self, point, direction) -> float:
        return sum(p.line_integral(point, direction) for p in self.parts)


@dataclass
class PotentialSpec:
    """A scalar potential with the class metadata the experiments rely on."""

    field: ScalarField
    name: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def support_radius(self) -> float:
        return self.field.support_radius

    def sample(self, grid: UniformGrid) -> np.ndarray:
        return self.field.sample(grid)

    def sup_norm(self, grid: UniformGrid) -> float:
        return float(np.max(np.abs(self.sample(grid))))

    def line_integral(self, point, direction) -> float:
        return self.field.line_integral(point, direction)


_CATALOG: dict[str, Callable[..., ScalarField]] = {
    "gaussian": GaussianField,
    "disk": DiskField,
    "ring": RingField,
    "bump": SmoothBumpField,
}


def from_catalog(kind: str, **params) -> ScalarField:
    """Build a catalog field; `center` may be a scalar (1d) or sequence."""
    if kind not in _CATALOG:
        raise ValueError(f"unknown field kind {kind!r}; have {sorted(_CATALOG)}")
    if "center" in params and np.isscalar(params["center"]):
        params["center"] = (params["center"],)
    elif "center" in params:
        params["center"] = tuple(params["center"])
    return _CATALOG[kind](**params)
