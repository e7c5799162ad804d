"""Waveguide geometry: cylinder, conical narrows, solenoid field and voxel grids.

Coordinates are ``(x, y, z)`` with the waveguide axis along ``x``.  The
cross-section ``D`` lives in the ``(y, z)`` plane and the narrows are circular
double cones about the ``x`` axis whose vertices (tips) sit on that axis.
Lengths are in units of the cylinder radius and the kinetic prefactor
``hbar^2 / 2m`` is set to one, so the energy equals ``k^2``.

The neck of each narrow is described in unit-scale coordinates ``xi`` (axial)
and ``rho`` (distance to the axis) by a boundary radius ``rho_b(|xi|)``.  The
physical narrow of size ``eps`` is the ``eps``-dilation of that shape placed at
the tip.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator


# ---------------------------------------------------------------------------
# smooth cutoffs
# ---------------------------------------------------------------------------

def smoothstep(s, order: int = 0):
    """Quintic C2 bridge from 0 (s <= 0) to 1 (s >= 1) and its derivatives.

    Parameters
    ----------
    s : array_like
        Bridge coordinate.
    order : {0, 1, 2}
        Derivative order with respect to ``s``.
    """
    s = np.asarray(s, dtype=float)
    t = np.clip(s, 0.0, 1.0)
    inside = (s > 0.0) & (s < 1.0)
    if order == 0:
        return t ** 3 * (10.0 - 15.0 * t + 6.0 * t ** 2)
    if order == 1:
        return np.where(inside, 30.0 * t ** 2 * (1.0 - t) ** 2, 0.0)
    if order == 2:
        return np.where(inside, 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t), 0.0)
    raise ValueError("order must be 0, 1 or 2")


def bridge(t, t0: float, t1: float, order: int = 0):
    """Smooth function of ``t`` equal to 0 below ``t0`` and 1 above ``t1``."""
    width = t1 - t0
    return smoothstep((np.asarray(t, dtype=float) - t0) / width, order) / width ** order


# ---------------------------------------------------------------------------
# cross-section
# ---------------------------------------------------------------------------

def _polygon_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    return (orient(p1, p2, q1) * orient(p1, p2, q2) < 0) and (orient(q1, q2, p1) * orient(q1, q2, p2) < 0)


@dataclass(frozen=True)
class CrossSectionSpec:
    """Cross-section ``D`` of the cylinder in the ``(y, z)`` plane, centered at the axis.

    ``shape`` is one of ``"disk"`` (uses ``radius``), ``"rectangle"`` (side
    lengths ``a`` along ``y`` and ``b`` along ``z``) or ``"polygon"``
    (``vertices``, a simple closed polygon given without repeating the first
    vertex).
    """

    shape: str = "disk"
    radius: float = 1.0
    a: float = 2.0
    b: float = 2.0
    vertices: tuple = ()

    def __post_init__(self):
        if self.shape == "disk":
            if not self.radius > 0:
                raise ValueError("disk radius must be positive")
        elif self.shape == "rectangle":
            if not (self.a > 0 and self.b > 0):
                raise ValueError("rectangle sides must be positive")
        elif self.shape == "polygon":
            v = np.asarray(self.vertices, dtype=float)
            if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
                raise ValueError("polygon needs at least three 2D vertices")
            if abs(_polygon_area(v)) <= 1e-14:
                raise ValueError("polygon has zero area")
            n = len(v)
            for i in range(n):
                for j in range(i + 2, n):
                    if i == 0 and j == n - 1:
                        continue
                    if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                        raise ValueError("polygon is not simple")
            object.__setattr__(self, "vertices", tuple(map(tuple, v.tolist())))
        else:
            raise ValueError(f"unknown cross-section shape {self.shape!r}")

    def contains(self, y, z) -> np.ndarray:
        """Open-set membership of points ``(y, z)``."""
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        if self.shape == "disk":
            return y * y + z * z < self.radius ** 2
        if self.shape == "rectangle":
            return (np.abs(y) < 0.5 * self.a) & (np.abs(z) < 0.5 * self.b)
        v = np.asarray(self.vertices)
        inside = np.zeros(np.broadcast(y, z).shape, dtype=bool)
        yb, zb = np.broadcast_arrays(y, z)
        for (y1, z1), (y2, z2) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (z1 > zb) != (z2 > zb)
            with np.errstate(divide="ignore", invalid="ignore"):
                y_cut = y1 + (zb - z1) * (y2 - y1) / (z2 - z1)
            inside ^= crosses & (yb < y_cut)
        return inside

    def bbox(self) -> tuple[float, float, float, float]:
        """Bounding box ``(ymin, ymax, zmin, zmax)``."""
        if self.shape == "disk":
            r = self.radius
            return (-r, r, -r, r)
        if self.shape == "rectangle":
            return (-0.5 * self.a, 0.5 * self.a, -0.5 * self.b, 0.5 * self.b)
        v = np.asarray(self.vertices)
        return (v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max())

    @property
    def outer_radius(self) -> float:
        """Largest distance from the axis to a point of ``D``."""
        if self.shape == "disk":
            return self.radius
        if self.shape == "rectangle":
            return 0.5 * float(np.hypot(self.a, self.b))
        return float(np.max(np.hypot(*np.asarray(self.vertices).T)))

    @property
    def inner_radius(self) -> float:
        """Radius of the largest axis-centered disk inside ``D``."""
        if self.shape == "disk":
            return self.radius
        if self.shape == "rectangle":
            return 0.5 * min(self.a, self.b)
        v = np.asarray(self.vertices)
        w = np.roll(v, -1, axis=0)
        seg = w - v
        t = np.clip(np.einsum("ij,ij->i", -v, seg) / np.einsum("ij,ij->i", seg, seg), 0.0, 1.0)
        closest = v + t[:, None] * seg
        return float(np.min(np.hypot(*closest.T)))

    @property
    def area(self) -> float:
        if self.shape == "disk":
            return float(np.pi * self.radius ** 2)
        if self.shape == "rectangle":
            return self.a * self.b
        return abs(_polygon_area(np.asarray(self.vertices)))


# ---------------------------------------------------------------------------
# narrows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NeckProfile:
    """Boundary radius of the unit-scale neck domain as a function of ``|xi|``.

    ``kind="hyperboloid"``: a one-sheet hyperboloid of waist diameter
    ``waist`` whose asymptotic cone is the narrow cone, blended to the cone
    itself over the axial window ``blend`` (in units of ``waist``) with a
    quintic bridge.  ``kind="custom"``: monotone cubic interpolation of
    ``samples`` ``[(t, rho), ...]`` starting at ``t = 0``; the last sample must
    lie on the cone and the profile follows the cone beyond it.
    """

    kind: str = "hyperboloid"
    waist: float = 1.0
    blend: tuple = (0.5, 1.5)
    samples: tuple = ()

    def __post_init__(self):
        if self.kind == "hyperboloid":
            if self.waist < 0:
                raise ValueError("waist must be non-negative")
            if not (0 <= self.blend[0] < self.blend[1]):
                raise ValueError("blend window must satisfy 0 <= start < end")
        elif self.kind == "custom":
            s = np.asarray(self.samples, dtype=float)
            if s.ndim != 2 or s.shape[1] != 2 or len(s) < 2:
                raise ValueError("custom neck profile needs at least two (t, rho) samples")
            if s[0, 0] != 0.0 or np.any(np.diff(s[:, 0]) <= 0):
                raise ValueError("custom samples must start at t=0 with increasing t")
            object.__setattr__(self, "samples", tuple(map(tuple, s.tolist())))
        else:
            raise ValueError(f"unknown neck profile kind {self.kind!r}")

    def radius(self, t, theta: float) -> np.ndarray:
        """Boundary radius ``rho_b(|t|)`` for a cone of half-angle ``theta``."""
        t = np.abs(np.asarray(t, dtype=float))
        tan = np.tan(theta)
        if self.kind == "hyperboloid":
            if self.waist == 0.0:
                return tan * t
            w = self.waist / (2.0 * tan)
            hyper = tan * np.sqrt(t * t + w * w)
            weight = 1.0 - bridge(t, self.blend[0] * self.waist, self.blend[1] * self.waist)
            return tan * t + (hyper - tan * t) * weight
        s = np.asarray(self.samples)
        interp = PchipInterpolator(s[:, 0], s[:, 1], extrapolate=False)
        inner = interp(np.minimum(t, s[-1, 0]))
        return np.where(t <= s[-1, 0], inner, tan * t)

    def match_axial(self) -> float:
        """Axial distance beyond which the profile equals the cone."""
        if self.kind == "hyperboloid":
            return self.blend[1] * self.waist
        return float(self.samples[-1][0])

    def match_radius(self, theta: float) -> float:
        """Spherical radius ``rho_match`` beyond which the neck equals the cone."""
        return self.match_axial() / np.cos(theta)

    def scaled(self, s: float) -> "NeckProfile":
        """Profile of the dilated domain ``s * Omega``."""
        if self.kind == "hyperboloid":
            return NeckProfile("hyperboloid", self.waist * s, self.blend)
        return NeckProfile("custom", samples=tuple((s * t, s * r) for t, r in self.samples))

    def check(self, theta: float) -> None:
        """Validate that the neck contains the cone and matches it at the end."""
        if self.kind == "custom":
            s = np.asarray(self.samples)
            tan = np.tan(theta)
            if np.any(s[:, 1] < tan * s[:, 0] - 1e-12):
                raise ValueError("custom neck profile cuts into the cone")
            if abs(s[-1, 1] - tan * s[-1, 0]) > 1e-9 * max(1.0, s[-1, 1]):
                raise ValueError("custom neck profile must end on the cone")
            if s[0, 1] <= 0:
                raise ValueError("custom neck profile must be open at t=0")


@dataclass(frozen=True)
class NarrowSpec:
    """One narrow: tip position on the axis, cone half-angle and neck shape."""

    tip_x: float
    half_angle: float = np.pi / 3
    profile: NeckProfile = field(default_factory=NeckProfile)

    def __post_init__(self):
        if not (0.0 < self.half_angle < 0.5 * np.pi):
            raise ValueError("cone half-angle must lie in (0, pi/2)")
        self.profile.check(self.half_angle)

    @property
    def tan(self) -> float:
        return float(np.tan(self.half_angle))

    def contains_unit(self, xi, rho) -> np.ndarray:
        """Membership in the unit-scale neck domain (``xi`` relative to the tip)."""
        return np.asarray(rho) < self.profile.radius(xi, self.half_angle)

    def contains(self, x, rho, eps: float) -> np.ndarray:
        """Membership in the ``eps``-scaled neck placed at the tip."""
        x = np.asarray(x, dtype=float)
        return self.contains_unit((x - self.tip_x) / eps, np.asarray(rho) / eps)

    def boundary_radius(self, x, eps: float) -> np.ndarray:
        """Physical boundary radius of the ``eps``-scaled neck at axial position ``x``."""
        return eps * self.profile.radius((np.asarray(x, dtype=float) - self.tip_x) / eps, self.half_angle)

    def in_cone(self, x, rho) -> np.ndarray:
        """Membership in the double cone ``K`` with vertex at the tip."""
        return np.asarray(rho) < self.tan * np.abs(np.asarray(x, dtype=float) - self.tip_x)


# ---------------------------------------------------------------------------
# solenoid
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolenoidSpec:
    """Infinite solenoid along ``z`` piercing the resonator.

    Parameters
    ----------
    center : (x0, y0)
        Position of the solenoid axis.
    radius : float
        Radius ``R`` of the field support.
    field_samples : tuple of float
        Field strength ``H`` sampled uniformly on ``[0, R]`` (piecewise linear).
        A single value means a uniform field.
    spin : {"plus", "minus"}
        Spin channel; selects the sign of the Zeeman term.
    gauge_band : (float, float)
        Offsets ``(b0, b1)`` so that the gauge cutoff ``tau(t)`` rises from 0 at
        ``t = R + b0`` to 1 at ``t = R + b1``.
    """

    center: tuple = (0.0, 0.0)
    radius: float = 0.3
    field_samples: tuple = (0.0,)
    spin: str = "plus"
    gauge_band: tuple = (1.0, 2.0)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("solenoid radius must be positive")
        if self.spin not in ("plus", "minus"):
            raise ValueError("spin must be 'plus' or 'minus'")
        if not (0 < self.gauge_band[0] < self.gauge_band[1]):
            raise ValueError("gauge band must satisfy 0 < b0 < b1")
        vals = tuple(float(v) for v in np.atleast_1d(self.field_samples))
        if len(vals) == 1:
            vals = (vals[0], vals[0])
        object.__setattr__(self, "field_samples", vals)

    @property
    def spin_sign(self) -> int:
        return 1 if self.spin == "plus" else -1

    @property
    def is_zero(self) -> bool:
        return all(v == 0.0 for v in self.field_samples)

    def with_spin(self, spin: str) -> "SolenoidSpec":
        return SolenoidSpec(self.center, self.radius, self.field_samples, spin, self.gauge_band)

    def scaled_field(self, factor: float) -> "SolenoidSpec":
        return SolenoidSpec(self.center, self.radius, tuple(factor * v for v in self.field_samples),
                            self.spin, self.gauge_band)

    def _nodes(self):
        h = np.asarray(self.field_samples)
        return np.linspace(0.0, self.radius, len(h)), h

    def field(self, rho) -> np.ndarray:
        """Field strength ``H(rho)`` (zero outside the solenoid)."""
        t, h = self._nodes()
        rho = np.asarray(rho, dtype=float)
        return np.where(rho <= self.radius, np.interp(rho, t, h), 0.0)

    def flux_integral(self, rho) -> np.ndarray:
        """``int_0^min(rho, R) t H(t) dt``, exact for the piecewise-linear profile."""
        t, h = self._nodes()
        slope = np.diff(h) / np.diff(t)
        base = h[:-1] - slope * t[:-1]

        def piece(i, lo, hi):
            return base[i] * (hi ** 2 - lo ** 2) / 2.0 + slope[i] * (hi ** 3 - lo ** 3) / 3.0

        cum = np.concatenate([[0.0], np.cumsum(piece(np.arange(len(slope)), t[:-1], t[1:]))])
        r = np.clip(np.asarray(rho, dtype=float), 0.0, self.radius)
        i = np.clip(np.searchsorted(t, r, side="right") - 1, 0, len(slope) - 1)
        return cum[i] + piece(i, t[i], r)

    @property
    def flux_constant(self) -> float:
        """``c = int_0^R t H(t) dt``; the total flux is ``2 pi c``."""
        return float(self.flux_integral(self.radius))


def _solenoid_offsets(sol: SolenoidSpec, p):
    p = np.asarray(p, dtype=float)
    dx = p[..., 0] - sol.center[0]
    dy = p[..., 1] - sol.center[1]
    return p, dx, dy


def vector_potential(sol: SolenoidSpec, p) -> np.ndarray:
    """Azimuthal vector potential ``A(rho) e_psi`` of the solenoid at points ``p``.

    ``A(rho) = rho^-1 int_0^rho t H dt`` inside and ``rho^-1 int_0^R t H dt``
    outside; the axis itself returns the zero vector.
    """
    p, dx, dy = _solenoid_offsets(sol, p)
    r2 = dx * dx + dy * dy
    rho = np.sqrt(r2)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(r2 > 0, sol.flux_integral(rho) / r2, 0.0)
    out = np.zeros(p.shape, dtype=float)
    out[..., 0] = -coef * dy
    out[..., 1] = coef * dx
    return out


def gauge_angle(sol: SolenoidSpec, p) -> np.ndarray:
    """Polar angle ``psi`` about the solenoid axis with branch cut at ``psi = -pi/2``."""
    p, dx, dy = _solenoid_offsets(sol, p)
    psi = np.arctan2(dy, dx)
    return np.where(psi <= -0.5 * np.pi, psi + 2.0 * np.pi, psi)


def gauge_cutoff(sol: SolenoidSpec, t, order: int = 0) -> np.ndarray:
    """Cutoff ``tau(t)``: 0 for ``t < R + b0`` and 1 for ``t > R + b1``."""
    r = sol.radius
    return bridge(t, r + sol.gauge_band[0], r + sol.gauge_band[1], order)


def gauge_function(sol: SolenoidSpec, p) -> np.ndarray:
    """Gauge phase ``g = tau(|x - x0|) c psi`` at points ``p``.

    Raises
    ------
    ValueError
        If a point on the branch cut is evaluated where ``tau`` is nonzero.
    """
    p, dx, dy = _solenoid_offsets(sol, p)
    tau = gauge_cutoff(sol, np.abs(dx))
    on_cut = (dx == 0.0) & (dy < 0.0) & (tau > 0.0)
    if np.any(on_cut):
        raise ValueError("gauge evaluated on the branch cut inside the gauge band")
    return tau * sol.flux_constant * gauge_angle(sol, p)


def gauge_modified_potential(sol: SolenoidSpec, p) -> np.ndarray:
    """Potential ``A' = A - grad(tau(|x - x0|) c psi)``.

    ``A'`` equals ``A`` where ``tau = 0`` and vanishes identically where
    ``tau = 1``, in particular for ``|x - x0| > R + b1``.
    """
    p, dx, dy = _solenoid_offsets(sol, p)
    a = vector_potential(sol, p)
    c = sol.flux_constant
    adx = np.abs(dx)
    tau = gauge_cutoff(sol, adx)
    dtau = gauge_cutoff(sol, adx, order=1) * np.sign(dx)
    r2 = dx * dx + dy * dy
    psi = gauge_angle(sol, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        grad_psi_x = np.where(r2 > 0, -dy / r2, 0.0)
        grad_psi_y = np.where(r2 > 0, dx / r2, 0.0)
    out = a.copy()
    out[..., 0] -= c * (dtau * psi + tau * grad_psi_x)
    out[..., 1] -= c * tau * grad_psi_y
    full = tau >= 1.0
    out[full] = 0.0
    return out


# ---------------------------------------------------------------------------
# waveguide
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WaveguideSpec:
    """Cylinder with two narrows of size ``epsilon`` and an optional solenoid.

    ``channel_length`` is the distance from each tip to the truncation plane
    of the corresponding outer channel used by the finite solvers.
    """

    cross_section: CrossSectionSpec
    narrows: tuple
    epsilon: float
    solenoid: SolenoidSpec | None = None
    channel_length: float = 8.0

    def __post_init__(self):
        if len(self.narrows) != 2:
            raise ValueError("exactly two narrows are required")
        n1, n2 = self.narrows
        if not n1.tip_x < n2.tip_x:
            raise ValueError("narrows must be ordered along x")
        if n1.half_angle != n2.half_angle or n1.profile != n2.profile:
            raise ValueError("both narrows must share the cone angle and neck profile")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        r_out = self.cross_section.outer_radius
        if 2.0 * r_out / n1.tan >= self.d:
            raise ValueError("resonator too short: the two cones meet inside the cylinder")
        if self.channel_length * n1.tan <= r_out:
            raise ValueError("channel truncation lies inside the cone")
        if self.solenoid is not None:
            self._check_solenoid()

    def _check_solenoid(self):
        sol = self.solenoid
        x0, y0 = sol.center
        x1, x2 = self.tip_positions
        if not (x1 < x0 - sol.radius and x0 + sol.radius < x2):
            raise ValueError("solenoid must lie strictly between the narrows")
        reach = sol.radius + sol.gauge_band[1]
        rho_match = self.epsilon * self.narrows[0].profile.match_radius(self.narrows[0].half_angle)
        if x0 - reach <= x1 + rho_match or x0 + reach >= x2 - rho_match:
            raise ValueError("gauge band overlaps a narrow neighborhood")

    @property
    def tip_positions(self) -> tuple[float, float]:
        return (self.narrows[0].tip_x, self.narrows[1].tip_x)

    @property
    def d(self) -> float:
        return self.narrows[1].tip_x - self.narrows[0].tip_x

    @property
    def half_angle(self) -> float:
        return self.narrows[0].half_angle

    @property
    def profile(self) -> NeckProfile:
        return self.narrows[0].profile

    @property
    def field_on(self) -> bool:
        return self.solenoid is not None and not self.solenoid.is_zero

    def replace(self, **kw) -> "WaveguideSpec":
        from dataclasses import replace
        return replace(self, **kw)

    def with_profile(self, profile: NeckProfile) -> "WaveguideSpec":
        narrows = tuple(NarrowSpec(n.tip_x, n.half_angle, profile) for n in self.narrows)
        return self.replace(narrows=narrows)

    def x_range(self) -> tuple[float, float]:
        x1, x2 = self.tip_positions
        return (x1 - self.channel_length, x2 + self.channel_length)


def _axial_split(p):
    p = np.asarray(p, dtype=float)
    return p[..., 0], p[..., 1], p[..., 2], np.hypot(p[..., 1], p[..., 2])


def point_in_waveguide(spec: WaveguideSpec, p) -> np.ndarray:
    """Membership of points ``p`` (shape ``(..., 3)``) in ``G(eps)``."""
    x, y, z, rho = _axial_split(p)
    inside = spec.cross_section.contains(y, z)
    for n in spec.narrows:
        inside &= n.contains(x, rho, spec.epsilon)
    return inside


def in_limit_domain(spec: WaveguideSpec, which: str, p) -> np.ndarray:
    """Membership in the limit domains ``G1`` (left channel), ``G2`` (resonator), ``G3``."""
    x, y, z, rho = _axial_split(p)
    cyl = spec.cross_section.contains(y, z)
    n1, n2 = spec.narrows
    x1, x2 = spec.tip_positions
    if which == "G1":
        return cyl & (x < x1) & n1.in_cone(x, rho)
    if which == "G2":
        return cyl & (x > x1) & (x < x2) & n1.in_cone(x, rho) & n2.in_cone(x, rho)
    if which == "G3":
        return cyl & (x > x2) & n2.in_cone(x, rho)
    raise ValueError(f"unknown limit domain {which!r}")


def in_neck_domain(narrow: NarrowSpec, p, r_max: float) -> np.ndarray:
    """Membership in the unit-scale neck domain truncated at spherical radius ``r_max``.

    Points are given relative to the tip.
    """
    x, y, z, rho = _axial_split(p)
    return narrow.contains_unit(x, rho) & (x * x + rho * rho < r_max ** 2)


# ---------------------------------------------------------------------------
# voxel grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VoxelGrid:
    """Uniform node grid with an interior mask.

    Nodes sit at ``origin + h * (i, j, l)``; the Dirichlet boundary is every
    node outside ``interior``.
    """

    origin: tuple
    h: float
    interior: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.interior.shape

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return tuple(self.origin[a] + self.h * np.arange(n) for a, n in enumerate(self.shape))

    def points(self) -> np.ndarray:
        """Coordinates of all nodes, shape ``shape + (3,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def interior_points(self) -> np.ndarray:
        return self.points()[self.interior]

    @property
    def boundary(self) -> np.ndarray:
        """Interior nodes with at least one exterior neighbor."""
        m = self.interior
        pad = np.pad(m, 1, constant_values=False)
        all_in = np.ones_like(m)
        for ax in range(3):
            for s in (-1, 1):
                all_in &= np.roll(pad, s, axis=ax)[1:-1, 1:-1, 1:-1]
        return m & ~all_in

    @property
    def count(self) -> int:
        return int(self.interior.sum())

    @property
    def volume(self) -> float:
        return self.count * self.h ** 3


_HEADER = struct.Struct("<4sHH3I4d12x")
_DTYPES = {0: np.uint8, 1: np.float64, 2: np.complex128}


def write_grid_field(path, grid: VoxelGrid, values=None) -> None:
    """Write a mask or a nodal field as a flat little-endian binary file.

    The 64-byte header holds a magic tag, a format version, a dtype code
    (0 mask, 1 real, 2 complex), the three dimensions, the spacing and the
    origin.  The payload follows in C order.
    """
    if values is None:
        code, payload = 0, grid.interior.astype(np.uint8)
    else:
        values = np.asarray(values)
        if values.shape != grid.shape:
            full = np.zeros(grid.shape, dtype=values.dtype)
            full[grid.interior] = values
            values = full
        code = 2 if np.iscomplexobj(values) else 1
        payload = values.astype(_DTYPES[code])
    header = _HEADER.pack(b"TGVX", 1, code, *grid.shape, grid.h, *grid.origin)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.astype(payload.dtype.newbyteorder("<")).tobytes(order="C"))


def read_grid_field(path) -> tuple[dict, np.ndarray]:
    """Read a file written by :func:`write_grid_field`; returns ``(header, array)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, code, nx, ny, nz, h, ox, oy, oz = _HEADER.unpack(raw[:_HEADER.size])
    if magic != b"TGVX":
        raise ValueError("not a grid field file")
    dtype = np.dtype(_DTYPES[code]).newbyteorder("<")
    data = np.frombuffer(raw[_HEADER.size:], dtype=dtype).reshape(nx, ny, nz)
    header = dict(version=version, dtype_code=code, shape=(nx, ny, nz), h=h, origin=(ox, oy, oz))
    return header, data


def _aligned_axis(lo: float, hi: float, h: float, anchor: float = 0.0) -> np.ndarray:
    i0 = int(np.floor((lo - anchor) / h + 1e-9))
    i1 = int(np.ceil((hi - anchor) / h - 1e-9))
    return anchor + h * np.arange(i0, i1 + 1)


def voxelize(spec: WaveguideSpec | NarrowSpec, h: float, domain: str = "G", *,
             r_max: float | None = None, x_range: Sequence[float] | None = None,
             min_waist_voxels: float = 3.0) -> VoxelGrid:
    """Stair-step node grid of a waveguide domain.

    Parameters
    ----------
    spec : WaveguideSpec or NarrowSpec
        Geometry.  A :class:`NarrowSpec` is needed for ``domain="omega"``.
    h : float
        Grid spacing.
    domain : {"G", "G1", "G2", "G3", "omega"}
        ``"G"`` is the full waveguide ``G(eps)``; ``"omega"`` the unit-scale
        neck truncated at spherical radius ``r_max`` with the tip at the origin.
    x_range : (float, float), optional
        Axial extent; defaults to the natural extent of the domain.
    min_waist_voxels : float
        Minimum number of grid steps across the neck waist.
    """
    if h <= 0:
        raise ValueError("grid spacing must be positive")
    if domain == "omega":
        if r_max is None:
            raise ValueError("omega needs r_max")
        narrow = spec if isinstance(spec, NarrowSpec) else spec.narrows[0]
        xs = _aligned_axis(-r_max, r_max, h)
        ax = _aligned_axis(-r_max, r_max, h)
        grid = VoxelGrid((xs[0], ax[0], ax[0]), h, np.zeros((len(xs), len(ax), len(ax)), dtype=bool))
        mask = in_neck_domain(narrow, grid.points(), r_max)
        return VoxelGrid(grid.origin, h, mask)

    ymin, ymax, zmin, zmax = spec.cross_section.bbox()
    x1, x2 = spec.tip_positions
    if x_range is None:
        lo, hi = spec.x_range()
        x_range = {"G": (lo, hi), "G1": (lo, x1), "G2": (x1, x2), "G3": (x2, hi)}[domain]
    if domain == "G":
        waist = spec.epsilon * 2.0 * float(spec.profile.radius(0.0, spec.half_angle))
        if waist / h < min_waist_voxels:
            raise ValueError(f"grid too coarse to resolve the neck: {waist / h:.2f} steps across the waist")
    xs = _aligned_axis(*x_range, h, anchor=x1)
    ys = _aligned_axis(ymin, ymax, h)
    zs = _aligned_axis(zmin, zmax, h)
    pts = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1)
    if domain == "G":
        mask = point_in_waveguide(spec, pts)
    else:
        mask = in_limit_domain(spec, domain, pts)
    return VoxelGrid((xs[0], ys[0], zs[0]), h, mask)
