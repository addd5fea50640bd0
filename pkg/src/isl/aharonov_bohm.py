"""Gauge fields with a shielded solenoid, phase probes, and flux recovery.

The vector potential splits into a singular circulation part alpha
(-x2, x1)/|x|^2 and a regular part generated by radial field bumps, both
in the Coulomb gauge.  Probes fly packets past the obstacle and read the
diagonal pairing <S phi, phi>; the accumulated argument follows the line
integral of A over the finite flight, so flux extraction fits the
windowed model -2c atan(s/|b|) sign(b) instead of reading the asymptote.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import least_squares
from scipy.special import erf

from .catalog import GaussianField, SumField
from .fields import UniformGrid, gaussian_packet
from .propagators import (
    MagneticSystem,
    fd_cayley_free_multiplier,
    magnetic_evolve_array,
)
from .tomography import Sinogram

__all__ = [
    "ObstacleDisk",
    "GaugeField",
    "PhaseProfile",
    "FluxEstimate",
    "build_gauge",
    "omega_vhat_mask",
    "phase_probe",
    "extract_flux_mod2",
    "window_gauge_factor",
    "b_field_radon_from_phase",
]

_FMT = "%.17g"
_SUPPORT_CUT = 1e-12


@dataclass(frozen=True)
class ObstacleDisk:
    """Convex excised region around the solenoid at the origin."""

    radius: float = 1.0

    def __post_init__(self) -> None:
        if self.radius < 0.0 or not np.isfinite(self.radius):
            raise ValueError("obstacle radius must be finite and nonnegative")

    def node_mask(self, grid: UniformGrid) -> np.ndarray:
        if self.radius == 0.0:
            return np.zeros(grid.shape, dtype=bool)
        return grid.radius() <= self.radius

    def shell_mask(self, grid: UniformGrid, width: float) -> np.ndarray:
        r = grid.radius()
        return (r > self.radius) & (r <= self.radius + width)


def _bump_list(b_field) -> list[GaussianField]:
    if b_field is None:
        return []
    if isinstance(b_field, GaussianField):
        return [b_field]
    if isinstance(b_field, SumField):
        parts = []
        for part in b_field.parts:
            if not isinstance(part, GaussianField):
                raise TypeError("regular field must be a sum of radial bumps")
            parts.append(part)
        return parts
    raise TypeError("regular field must be a sum of radial bumps")


@dataclass
class GaugeField:
    """Composed Coulomb-gauge potential with its lattice realization.

    `alpha` is the normalized circulation of the singular part; `bumps`
    carry the regular field as radial profiles (amplitude, center, width)
    whose potential has the closed form perp(x-c)/|x-c|^2 * Phi(r)/(2 pi)
    with Phi the enclosed flux.
    """

    alpha: float
    bumps: tuple[tuple[float, tuple[float, float], float], ...]
    obstacle: ObstacleDisk
    grid: UniformGrid
    mass: float = 1.0
    _systems: dict = dc_field(default_factory=dict, repr=False)

    def _centers(self, angle: float) -> list[tuple[float, float, float]]:
        """Bump (flux, cx, cy, width) in a frame rotated by -angle."""
        c, s = np.cos(angle), np.sin(angle)
        out = []
        for amp, (cx, cy), width in self.bumps:
            flux = np.pi * amp * width**2
            out.append((flux, c * cx + s * cy, -s * cx + c * cy, width))
        return out

    def potential_at(self, x, y, angle: float = 0.0):
        """Closed-form (a1, a2) in the probe frame rotated by `angle`."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        r2 = x**2 + y**2
        safe = np.where(r2 < 1e-24, 1.0, r2)
        coef = np.where(r2 < 1e-24, 0.0, self.alpha / safe)
        a1 = -y * coef
        a2 = x * coef
        for flux, cx, cy, width in self._centers(angle):
            dx = x - cx
            dy = y - cy
            rr = dx**2 + dy**2
            rs = np.where(rr < 1e-24, 1.0, rr)
            enclosed = flux * (1.0 - np.exp(-rr / width**2)) / (2.0 * np.pi)
            g = np.where(rr < 1e-24, 0.0, enclosed / rs)
            a1 = a1 - dy * g
            a2 = a2 + dx * g
        return a1, a2

    def b_at(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        for amp, (cx, cy), width in self.bumps:
            out = out + amp * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / width**2)
        return out

    def b_samples(self) -> np.ndarray:
        xs, ys = self.grid.meshgrid()
        return self.b_at(xs, ys)

    def a_samples(self) -> tuple[np.ndarray, np.ndarray]:
        xs, ys = self.grid.meshgrid()
        return self.potential_at(xs, ys)

    def line_phase(self, perp, angle: float = 0.0) -> np.ndarray:
        """Full-line integral of A along the probe direction.

        Depends on the perpendicular coordinate only: the circulation part
        contributes -pi alpha sign(p), each bump -(Phi/2) erf(p/w) around
        its own perpendicular offset.
        """
        perp = np.asarray(perp, dtype=float)
        lam = -np.pi * self.alpha * np.sign(perp)
        for flux, _, cy, width in self._centers(angle):
            lam = lam - 0.5 * flux * erf((perp - cy) / width)
        return lam

    def circulation(self, radius: float, samples: int = 4096) -> float:
        """Loop integral of A / (2 pi) by midpoint quadrature."""
        t = (np.arange(samples) + 0.5) * (2.0 * np.pi / samples)
        cx = radius * np.cos(t)
        cy = radius * np.sin(t)
        a1, a2 = self.potential_at(cx, cy)
        integrand = -a1 * cy + a2 * cx
        return float(np.sum(integrand) * (2.0 * np.pi / samples) / (2.0 * np.pi))

    def system_for_direction(self, angle: float) -> MagneticSystem:
        """Lattice links for probing along +x through the rotated field."""
        key = round(float(angle), 12)
        if key not in self._systems:
            self._systems[key] = MagneticSystem.from_vector_potential(
                self.grid,
                lambda x, y: self.potential_at(x, y, angle)[0],
                lambda x, y: self.potential_at(x, y, angle)[1],
                mask=self.obstacle.node_mask(self.grid),
                mass=self.mass,
            )
        return self._systems[key]

    def drop_cached_systems(self) -> None:
        self._systems.clear()

    def to_csv(self, path) -> None:
        xs, ys = self.grid.meshgrid()
        a1, a2 = self.a_samples()
        b = self.b_samples()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "a1", "a2", "b"])
            for row in zip(*(v.ravel() for v in (xs, ys, a1, a2, b))):
                w.writerow([_FMT % v for v in row])


def build_gauge(
    alpha: float,
    b_field,
    obstacle: ObstacleDisk,
    grid: UniformGrid,
    mass: float = 1.0,
) -> GaugeField:
    """Compose the singular and regular potentials over an excised disk."""
    if not np.isfinite(alpha):
        raise ValueError("alpha must be finite")
    bumps = []
    for bump in _bump_list(b_field):
        amp = bump.amplitude
        cx, cy = bump.center
        width = bump.width
        if amp != 0.0:
            reach = width * np.sqrt(np.log(max(abs(amp), 1.0) / _SUPPORT_CUT))
            if np.hypot(cx, cy) - reach < obstacle.radius:
                raise ValueError(
                    "regular field support intersects the obstacle interior"
                )
        bumps.append((amp, (float(cx), float(cy)), width))
    gauge = GaugeField(float(alpha), tuple(bumps), obstacle, grid, mass)
    if obstacle.radius > 0.0:
        drift = abs(gauge.circulation(obstacle.radius) - alpha)
        if drift > 1e-6:
            raise ValueError(f"circulation around K drifted from alpha by {drift:.2e}")
    return gauge


def omega_vhat_mask(
    obstacle: ObstacleDisk,
    vhat,
    envelope_radius: float,
    grid: UniformGrid | None = None,
):
    """Envelope centers whose full line along vhat stays 3 radii from K.

    With a grid, returns the boolean node mask of admissible centers;
    without one, returns the minimum admissible |offset|.
    """
    vhat = np.asarray(vhat, dtype=float)
    if abs(np.linalg.norm(vhat) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    least = obstacle.radius + 3.0 * envelope_radius
    if grid is None:
        return least
    xs, ys = grid.meshgrid()
    perp = -vhat[1] * xs + vhat[0] * ys
    admissible = np.abs(perp) >= least
    if not np.any(admissible):
        raise ValueError("no admissible envelope centers on this grid")
    return admissible


@dataclass
class PhaseProfile:
    """Diagonal pairings along one probe direction, offsets both sides."""

    angle: float
    speed: float
    offsets: np.ndarray
    measured: np.ndarray
    predicted: np.ndarray
    mask: np.ndarray
    half_window: float
    mass: float
    unimodular_tol: float = 2e-2

    def __post_init__(self) -> None:
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.measured = np.asarray(self.measured, dtype=complex)
        self.predicted = np.asarray(self.predicted, dtype=complex)
        self.mask = np.asarray(self.mask, dtype=bool)
        mags = np.abs(self.measured[self.mask])
        if mags.size and (
            np.any(mags > 1.0 + 1e-9) or np.any(mags < 1.0 - self.unimodular_tol)
        ):
            raise ValueError("measured pairings must stay unimodular within tolerance")

    def unwrapped(self) -> np.ndarray:
        """Continuous argument per side, branch anchored at the largest |b|."""
        lam = np.full(self.offsets.size, np.nan)
        for side in (self.offsets > 0, self.offsets < 0):
            sel = side & self.mask
            if not np.any(sel):
                continue
            idx = np.flatnonzero(sel)
            idx = idx[np.argsort(-np.abs(self.offsets[idx]))]
            lam[idx] = np.unwrap(np.angle(self.measured[idx]))
        return lam

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(
                ["angle", "offset", "re", "im", "predicted_re", "predicted_im", "mask"]
            )
            for j, b in enumerate(self.offsets):
                if self.mask[j]:
                    w.writerow(
                        [
                            _FMT % self.angle,
                            _FMT % b,
                            _FMT % self.measured[j].real,
                            _FMT % self.measured[j].imag,
                            _FMT % self.predicted[j].real,
                            _FMT % self.predicted[j].imag,
                            "1",
                        ]
                    )
                else:
                    w.writerow([_FMT % self.angle, _FMT % b, "", "", "", "", "0"])

    @classmethod
    def from_csv(cls, path, speed: float = 0.0, half_window: float = 0.0, mass: float = 1.0):
        expected = ["angle", "offset", "re", "im", "predicted_re", "predicted_im", "mask"]
        offsets, meas, pred, mask = [], [], [], []
        angle = 0.0
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != expected:
                raise ValueError(f"expected columns {expected}, got {reader.fieldnames}")
            for rec in reader:
                angle = float(rec["angle"])
                offsets.append(float(rec["offset"]))
                if rec["mask"] == "1":
                    mask.append(True)
                    meas.append(float(rec["re"]) + 1j * float(rec["im"]))
                    pred.append(
                        float(rec["predicted_re"]) + 1j * float(rec["predicted_im"])
                    )
                else:
                    mask.append(False)
                    meas.append(1.0 + 0.0j)
                    pred.append(1.0 + 0.0j)
        return cls(
            angle,
            speed,
            np.array(offsets),
            np.array(meas),
            np.array(pred),
            np.array(mask),
            half_window,
            mass,
        )


def phase_probe(
    gauge: GaugeField,
    angle: float,
    speed: float,
    offsets,
    *,
    widths: tuple[float, float] = (1.6, 1.6),
    half_window: float | None = None,
    dt: float | None = None,
    graze_tol: float = 1e-8,
    shell_width: float | None = None,
    method: str = "adi",
    unimodular_tol: float = 2e-2,
) -> PhaseProfile:
    """Fly boosted packets along lines past K and record diagonal pairings.

    Offsets too close to the obstacle (within 3 transverse widths) are
    masked out rather than probed.  During the middle evolution the mass
    on a thin shell around K is monitored every step; exceeding graze_tol
    aborts, since a grazing packet invalidates the free-flight pairing.
    """
    grid = gauge.grid
    offsets = np.asarray(offsets, dtype=float)
    sig_par, sig_perp = widths
    mass = gauge.mass
    if half_window is None:
        half_window = 14.0 / speed
    if dt is None:
        dt = half_window / 48.0
    steps = round(half_window / dt)
    if abs(steps * dt - half_window) > 1e-9 * max(1.0, half_window):
        raise ValueError("dt must divide the half window")
    least = omega_vhat_mask(gauge.obstacle, (1.0, 0.0), sig_perp)
    mask = np.abs(offsets) >= least
    if not np.any(mask):
        raise ValueError("every offset sits inside the obstacle clearance")
    system = gauge.system_for_direction(angle)
    if shell_width is None:
        shell_width = 4.0 * max(grid.spacing)
    shell = gauge.obstacle.shell_mask(grid, shell_width)

    live = offsets[mask]
    extreme = float(live[np.argmax(np.abs(live))])
    gaussian_packet(grid, (0.0, extreme), (sig_par, sig_perp), (mass * speed, 0.0))
    xs, ys = grid.meshgrid()
    envelope = np.exp(
        -(xs[None] ** 2) / (4.0 * sig_par**2)
        - ((ys[None] - live[:, None, None]) ** 2) / (4.0 * sig_perp**2)
    ).astype(complex)
    envelope /= np.sqrt(
        (np.abs(envelope) ** 2).sum(axis=(1, 2)) * grid.cell_volume
    )[:, None, None]
    phi_v = envelope * np.exp(1j * mass * speed * xs)[None]

    leg = np.conj(fd_cayley_free_multiplier(grid, dt, steps, mass, method))
    ft = np.fft.fft2(phi_v, axes=(-2, -1))
    vals = np.fft.ifft2(ft * leg[None], axes=(-2, -1))
    shell_cells = float(grid.cell_volume)
    for _ in range(2 * steps):
        vals = magnetic_evolve_array(vals, system, dt, 1, method)
        graze = (np.abs(vals[:, shell]) ** 2).sum(axis=1) * shell_cells
        worst = int(np.argmax(graze))
        if graze[worst] > graze_tol:
            raise RuntimeError(
                f"packet at offset {live[worst]:g} grazes the obstacle: "
                f"shell mass {graze[worst]:.3e} exceeds {graze_tol:g}"
            )
    ft = np.fft.fft2(vals, axes=(-2, -1))
    vals = np.fft.ifft2(ft * leg[None], axes=(-2, -1))

    pair = (vals * np.conj(phi_v)).sum(axis=(1, 2)) * grid.cell_volume
    lam_nodes = gauge.line_phase(ys, angle)
    weight = np.abs(envelope) ** 2
    pred = (np.exp(1j * lam_nodes)[None] * weight).sum(axis=(1, 2)) * grid.cell_volume

    measured = np.ones(offsets.size, dtype=complex)
    predicted = np.ones(offsets.size, dtype=complex)
    measured[mask] = pair
    predicted[mask] = pred
    return PhaseProfile(
        float(angle), float(speed), offsets, measured, predicted, mask,
        float(half_window), float(mass), unimodular_tol,
    )


@dataclass(frozen=True)
class FluxEstimate:
    value: float
    cross_residual: float
    window_scale: float

    def __float__(self) -> float:
        return self.value


def _window_model(b, c, s):
    return -2.0 * c * np.arctan(s / np.abs(b)) * np.sign(b)


def window_gauge_factor(offsets, winding: int, speed: float, half_window: float) -> np.ndarray:
    """Phase picked up under the large gauge transform chi = winding * theta.

    Fluxes differing by an even integer share a Hamiltonian up to this
    transform, but a finite flight window samples chi at the entry and
    exit points instead of the asymptotes, so measured profiles differ
    by exp(i*winding*(theta_out - theta_in)) per offset.  Multiplying
    the larger-flux profile by the conjugate aligns the two.
    """
    if winding % 2:
        raise ValueError("winding must be even: odd shifts change the physics")
    b = np.asarray(offsets, dtype=float)
    h = speed * half_window
    return np.exp(1j * winding * (np.arctan2(b, h) - np.arctan2(b, -h)))


def extract_flux_mod2(
    profile: PhaseProfile,
    b_r_sinogram: Sinogram | None = None,
    residual_tol: float = 0.05,
) -> FluxEstimate:
    """Fit the windowed circulation model and reduce the flux mod 2.

    The regular field's share of the circulation is its total flux over
    2 pi, read off any measured sinogram row; it is subtracted before the
    mod-2 reduction.  Each side's unwrapped branch is only fixed up to
    2 pi n, so small integer shifts are searched jointly with (c, s).
    """
    lam = profile.unwrapped()
    sel = profile.mask & np.isfinite(lam)
    above = sel & (profile.offsets > 0)
    below = sel & (profile.offsets < 0)
    if not (np.any(above) and np.any(below)):
        raise ValueError("need measured lines on both sides of the obstacle")
    b_all = profile.offsets
    s0 = max(profile.speed * profile.half_window, np.max(np.abs(b_all[sel])))

    def fit(shift_above: int, shift_below: int):
        data = lam.copy()
        data[above] += 2.0 * np.pi * shift_above
        data[below] += 2.0 * np.pi * shift_below
        bs = b_all[sel]
        ys = data[sel]
        c0 = -np.mean(ys[bs > 0]) / np.pi if np.any(bs > 0) else 0.0

        def resid(p):
            return _window_model(bs, p[0], p[1]) - ys

        out = least_squares(resid, x0=[c0, s0], bounds=([-np.inf, 1e-6], [np.inf, np.inf]))
        rms = float(np.sqrt(np.mean(out.fun**2)))
        return out.x, rms

    best = None
    for na in range(-2, 3):
        for nb in range(-2, 3):
            params, rms = fit(na, nb)
            if best is None or rms < best[1]:
                best = (params, rms)
    (c_hat, s_hat), rms = best
    if rms > residual_tol:
        raise ValueError(
            f"sides are inconsistent: fit residual {rms:.3g} above {residual_tol:g}"
        )
    correction = 0.0
    if b_r_sinogram is not None:
        row = np.flatnonzero(np.all(b_r_sinogram.mask, axis=1))
        if row.size == 0:
            raise ValueError("regular-field sinogram has no fully measured row")
        db = b_r_sinogram.offsets[1] - b_r_sinogram.offsets[0]
        flux = float(np.trapezoid(b_r_sinogram.values[row[0]], dx=db))
        correction = flux / (2.0 * np.pi)
    return FluxEstimate(
        float(np.mod(c_hat - correction, 2.0)), rms, float(s_hat)
    )


def b_field_radon_from_phase(profiles) -> Sinogram:
    """Differentiate unwrapped phases across offsets into line-integral data.

    d(lambda)/db = -X(B) along the line; the window end terms contribute
    2 c s / (s^2 + b^2), negligible for long flights.  Lines through or
    near K stay masked.
    """
    profiles = list(profiles)
    if len(profiles) < 16:
        raise ValueError(f"need at least 16 directions, got {len(profiles)}")
    angles = np.array([p.angle for p in profiles])
    if np.any(angles < 0.0) or np.any(angles >= np.pi):
        raise ValueError("profile angles must lie in [0, pi)")
    offsets = profiles[0].offsets
    for p in profiles[1:]:
        if p.offsets.shape != offsets.shape or not np.allclose(p.offsets, offsets):
            raise ValueError("profiles must share one offset grid")
    order = np.argsort(angles)
    values = np.full((len(profiles), offsets.size), np.nan)
    mask = np.zeros_like(values, dtype=bool)
    err = np.zeros_like(values)
    for i, k in enumerate(order):
        prof = profiles[k]
        lam = prof.unwrapped()
        for side in (prof.offsets > 0, prof.offsets < 0):
            sel = side & prof.mask
            idx = np.flatnonzero(sel)
            if idx.size < 2:
                continue
            idx = idx[np.argsort(prof.offsets[idx])]
            # an increment at the +-pi boundary has no preferred branch
            inc = np.abs(np.diff(lam[idx]))
            if np.any(inc >= np.pi - 1e-6):
                raise ValueError(
                    "unwrap ambiguity: adjacent offsets jump by pi or more"
                )
            grad = np.gradient(lam[idx], prof.offsets[idx])
            values[i, idx] = -grad
            mask[i, idx] = True
            err[i, idx] = 2.0 * prof.unimodular_tol / np.min(
                np.diff(prof.offsets[idx])
            )
    return Sinogram(angles[order], offsets, values, mask, err)
