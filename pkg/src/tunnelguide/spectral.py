"""Transverse and angular eigenproblems plus the radial functions of a cone tip.

* :func:`cross_section_modes` solves the Dirichlet Laplacian on the
  cross-section with a Shortley-Weller finite-difference stencil and
  Richardson extrapolation in the grid spacing.
* :func:`cap_spectrum` solves the Dirichlet Laplace-Beltrami problem on the
  spherical cap cut out by a circular cone by shooting.
* :func:`singular_radial_pair` returns the rescaled Bessel pair that behaves
  like ``r**mu`` and ``r**(-mu-1)`` at the tip.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq
from scipy.special import gamma, jv, jvp, lpmv, yv, yvp

from .geometry import CrossSectionSpec, bridge


# ---------------------------------------------------------------------------
# cross-section
# ---------------------------------------------------------------------------

@dataclass
class ModeBasis:
    """Thresholds and the ground transverse mode of a cross-section.

    ``psi1`` holds the ground mode sampled at ``psi1_points`` with unit
    ``L2`` norm on the grid; the flux normalization ``nu1 * int |Psi1|^2 = 1``
    is applied where the mode is used.
    """

    thresholds: np.ndarray
    raw: dict
    psi1: np.ndarray
    psi1_points: np.ndarray
    h: float

    @property
    def lam1_sq(self) -> float:
        return float(self.thresholds[0])

    @property
    def lam2_sq(self) -> float:
        return float(self.thresholds[1])

    def nu1(self, k) -> np.ndarray:
        """Propagation wavenumber ``sqrt(k^2 - lambda_1^2)`` (real in the window)."""
        return np.sqrt(np.asarray(k, dtype=float) ** 2 - self.lam1_sq)

    def in_window(self, k) -> np.ndarray:
        k2 = np.asarray(k, dtype=float) ** 2
        return (k2 > self.lam1_sq) & (k2 < self.lam2_sq)


def _boundary_fraction(cs: CrossSectionSpec, p, q, iters: int = 40):
    """Fraction ``s`` in ``(0, 1]`` along ``p -> q`` where the boundary is crossed."""
    lo = np.zeros(len(p))
    hi = np.ones(len(p))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pt = p + mid[:, None] * (q - p)
        inside = cs.contains(pt[:, 0], pt[:, 1])
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return 0.5 * (lo + hi)


def shortley_weller_laplacian(cs: CrossSectionSpec, h: float):
    """Negative Dirichlet Laplacian on grid nodes inside ``cs``.

    Returns the sparse matrix and the node coordinates.  Nodes adjacent to the
    curved boundary use the Shortley-Weller unequal-arm difference with the
    exact boundary crossing.
    """
    ymin, ymax, zmin, zmax = cs.bbox()
    ys = h * np.arange(int(np.floor(ymin / h)) - 1, int(np.ceil(ymax / h)) + 2)
    zs = h * np.arange(int(np.floor(zmin / h)) - 1, int(np.ceil(zmax / h)) + 2)
    Y, Z = np.meshgrid(ys, zs, indexing="ij")
    inside = cs.contains(Y, Z)
    index = -np.ones(inside.shape, dtype=np.int64)
    index[inside] = np.arange(inside.sum())
    ii, jj = np.nonzero(inside)
    pts = np.column_stack([ys[ii], zs[jj]])
    n = len(pts)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    me = index[ii, jj]
    for di, dj in ((1, 0), (0, 1)):
        arms = []
        for sgn in (1, -1):
            ni, nj = ii + sgn * di, jj + sgn * dj
            nb = index[ni, nj]
            frac = np.ones(n)
            out = nb < 0
            if np.any(out):
                q = np.column_stack([ys[ni[out]], zs[nj[out]]])
                frac[out] = _boundary_fraction(cs, pts[out], q)
            arms.append((nb, frac * h))
        (nb_p, hp), (nb_m, hm) = arms
        cp = 2.0 / (hp * (hp + hm))
        cm = 2.0 / (hm * (hp + hm))
        diag += cp + cm
        for nb, c in ((nb_p, cp), (nb_m, cm)):
            ok = nb >= 0
            rows.append(me[ok])
            cols.append(nb[ok])
            vals.append(-c[ok])
    rows.append(me)
    cols.append(me)
    vals.append(diag)
    mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return mat, pts


def _lowest_eigs(mat, count: int):
    vals, vecs = spla.eigs(mat, k=count, sigma=0.0, which="LM")
    order = np.argsort(vals.real)
    return vals.real[order], vecs[:, order].real


def cross_section_modes(cs: CrossSectionSpec, h: float = 0.02, count: int = 4,
                        degeneracy_tol: float = 1e-3) -> ModeBasis:
    """Lowest Dirichlet eigenvalues of the cross-section, Richardson-extrapolated.

    The eigenvalues are computed at spacings ``h`` and ``h/2`` and combined as
    ``(4 lam(h/2) - lam(h)) / 3``.  The ground mode is returned from the finer
    grid with unit discrete ``L2`` norm and positive sign.

    Raises
    ------
    ValueError
        If the ground eigenvalue is degenerate within ``degeneracy_tol``.
    """
    if count < 2:
        raise ValueError("count must be at least 2")
    coarse, _ = shortley_weller_laplacian(cs, h)
    fine, pts = shortley_weller_laplacian(cs, h / 2)
    lam_c, _ = _lowest_eigs(coarse, count)
    lam_f, vec = _lowest_eigs(fine, count)
    extrap = (4.0 * lam_f - lam_c) / 3.0
    if (extrap[1] - extrap[0]) <= degeneracy_tol * extrap[0]:
        raise ValueError("degenerate ground transverse mode")
    psi = vec[:, 0]
    psi = psi / (np.linalg.norm(psi) * (h / 2))
    if psi[np.argmax(np.abs(psi))] < 0:
        psi = -psi
    return ModeBasis(extrap, {"h": lam_c, "h/2": lam_f}, psi, pts, h)


# ---------------------------------------------------------------------------
# spherical cap
# ---------------------------------------------------------------------------

@dataclass
class CapSpectrum:
    """Dirichlet spectrum of the cap ``{polar angle < theta}`` on the unit sphere.

    ``phi`` and ``profile`` sample the normalized axisymmetric ground mode
    ``Phi1`` with ``(2 mu1 + 1) int |Phi1|^2 dS = 1``.  ``branches`` lists the
    exponents found on each azimuthal branch ``m``.
    """

    theta: float
    mu1: float
    mu2: float
    phi: np.ndarray
    profile: np.ndarray
    legendre_scale: float
    branches: dict = field(default_factory=dict)

    @property
    def p(self) -> float:
        """Exponent ``2 mu1 + 1`` governing the junction strength."""
        return 2.0 * self.mu1 + 1.0

    def phi1(self, angle) -> np.ndarray:
        """Normalized ground mode evaluated at polar angles (zero outside the cap)."""
        angle = np.asarray(angle, dtype=float)
        val = self.legendre_scale * lpmv(0, self.mu1, np.cos(np.clip(angle, 0.0, self.theta)))
        return np.where((angle >= 0) & (angle < self.theta), val, 0.0)

    def dphi1(self, angle) -> np.ndarray:
        """Polar derivative of the ground mode."""
        angle = np.asarray(angle, dtype=float)
        return self.legendre_scale * lpmv(1, self.mu1, np.cos(np.clip(angle, 0.0, self.theta)))

    def norm_integral(self) -> float:
        """``(2 mu1 + 1) int_cap |Phi1|^2 dS`` evaluated from the shooting samples."""
        from scipy.integrate import simpson
        return float(self.p * 2.0 * np.pi * simpson(self.profile ** 2 * np.sin(self.phi), x=self.phi))


def _shoot(lams: np.ndarray, m: int, t_end: float, t_start: float = -14.0, steps: int = 4000):
    """RK4 for ``u'' = (m^2 - lam sech^2 t) u`` from the pole series start.

    ``t = ln tan(phi/2)`` maps the polar ODE to a regular equation; near the
    pole ``u ~ e^{mt}(1 - lam e^{2t} / (m + 1))``.
    """
    lams = np.asarray(lams, dtype=float)
    e = np.exp(t_start)
    c = -lams / (m + 1.0)
    u = e ** m * (1.0 + c * e * e) * np.ones_like(lams)
    du = e ** m * (m + c * (m + 2.0) * e * e) * np.ones_like(lams)
    dt = (t_end - t_start) / steps

    ts = t_start + dt * np.arange(steps + 1)
    half = t_start + dt * (np.arange(steps) + 0.5)
    pot_node = m * m - np.outer(1.0 / np.cosh(ts) ** 2, lams)
    pot_half = m * m - np.outer(1.0 / np.cosh(half) ** 2, lams)
    us = np.empty((steps + 1,) + lams.shape)
    us[0] = u
    for i in range(steps):
        q0, qh, q1 = pot_node[i], pot_half[i], pot_node[i + 1]
        k1u, k1v = du, q0 * u
        k2u = du + 0.5 * dt * k1v
        k2v = qh * (u + 0.5 * dt * k1u)
        k3u = du + 0.5 * dt * k2v
        k3v = qh * (u + 0.5 * dt * k2u)
        k4u = du + dt * k3v
        k4v = q1 * (u + dt * k3u)
        u = u + dt / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u)
        du = du + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        us[i + 1] = u
    return ts, us


def _mu_from_lambda(lam):
    return 0.5 * (-1.0 + np.sqrt(1.0 + 4.0 * np.asarray(lam)))


def _cap_roots(theta: float, m: int, n_roots: int, mu_max: float, steps: int, rtol: float):
    """Lowest ``n_roots`` eigenvalues of the ``m`` branch by bracketing and Illinois iteration."""
    t_end = np.log(np.tan(0.5 * theta))
    t_start = min(-14.0, t_end - 12.0)
    mus = np.arange(0.05, mu_max, 0.1)
    grid = mus * (mus + 1.0)
    end = _shoot(grid, m, t_end, t_start, steps=max(steps // 3, 500))[1][-1]
    idx = np.nonzero(np.sign(end[:-1]) != np.sign(end[1:]))[0][:n_roots]
    if len(idx) == 0:
        return []
    a, b = grid[idx], grid[idx + 1]
    fa = _shoot(a, m, t_end, t_start, steps)[1][-1]
    fb = _shoot(b, m, t_end, t_start, steps)[1][-1]
    side = np.zeros(len(a))
    for _ in range(200):
        c = (a * fb - b * fa) / (fb - fa)
        fc = _shoot(c, m, t_end, t_start, steps)[1][-1]
        left = np.sign(fc) == np.sign(fa)
        # Illinois modification keeps the bracket shrinking from both ends
        fb = np.where(left & (side == 1), 0.5 * fb, fb)
        fa = np.where(~left & (side == -1), 0.5 * fa, fa)
        a, fa = np.where(left, c, a), np.where(left, fc, fa)
        b, fb = np.where(left, b, c), np.where(left, fb, fc)
        side = np.where(left, 1, -1)
        if np.all(np.abs(b - a) <= rtol * np.abs(c)) or np.all(fc == 0):
            break
    return list(np.where(np.abs(fa) < np.abs(fb), a, b))


def cap_spectrum(theta: float, m_max: int = 2, mu_max: float | None = None, steps: int = 4000,
                 rtol: float = 1e-14) -> CapSpectrum:
    """Exponents ``mu1 < mu2`` and ground mode of the cap of half-angle ``theta``.

    ``mu1`` comes from the axisymmetric branch; ``mu2`` is the smaller of the
    second axisymmetric root and the first roots of the branches
    ``m = 1..m_max``.

    Raises
    ------
    ValueError
        If ``theta`` is outside ``(0, pi/2]`` or no root is bracketed below
        ``mu_max`` (default ``max(20, 6/theta)``).
    """
    if mu_max is None:
        mu_max = max(20.0, 6.0 / theta)
    if not (0.0 < theta <= 0.5 * np.pi):
        raise ValueError("cap half-angle must lie in (0, pi/2]")
    branches = {}
    for m in range(m_max + 1):
        lams = _cap_roots(theta, m, 2 if m == 0 else 1, mu_max, steps, rtol)
        branches[m] = [float(x) for x in _mu_from_lambda(np.array(lams))]
    if len(branches[0]) < 1:
        raise ValueError("no cap eigenvalue bracketed below mu_max")
    mu1 = branches[0][0]
    candidates = branches[0][1:] + [b[0] for m, b in branches.items() if m > 0 and b]
    if not candidates:
        raise ValueError("second cap eigenvalue not bracketed below mu_max")
    mu2 = min(candidates)

    t_end = np.log(np.tan(0.5 * theta))
    ts, us = _shoot(np.array([mu1 * (mu1 + 1.0)]), 0, t_end, min(-14.0, t_end - 12.0), steps=steps)
    u = us[:, 0]
    phi = 2.0 * np.arctan(np.exp(ts))
    # sin(phi) dphi = sech(t)^2 dt
    from scipy.integrate import simpson
    norm = (2.0 * mu1 + 1.0) * 2.0 * np.pi * simpson(u ** 2 / np.cosh(ts) ** 2, x=ts)
    u = u / np.sqrt(norm)
    if u[0] < 0:
        u = -u
    phi = np.concatenate([[0.0], phi])
    u = np.concatenate([[u[0]], u])
    u[-1] = 0.0
    ref = lpmv(0, mu1, np.cos(phi[len(phi) // 3]))
    return CapSpectrum(theta, mu1, mu2, phi, u, float(u[len(phi) // 3] / ref), branches)


# ---------------------------------------------------------------------------
# radial functions at a cone tip
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialPair:
    """Rescaled Bessel pair and derivatives (with respect to ``r``)."""

    J: np.ndarray
    N: np.ndarray
    dJ: np.ndarray
    dN: np.ndarray


def _scales(mu: float, k: float):
    nu = mu + 0.5
    cj = 2.0 ** nu * gamma(nu + 1.0) * k ** (-nu)
    cn = -np.pi / gamma(nu) * (0.5 * k) ** nu
    if not (np.isfinite(cj) and np.isfinite(cn)):
        raise OverflowError("radial scaling constants overflow")
    return nu, cj, cn


def singular_radial_pair(mu: float, k: float, r, kr_max: float = 1e4) -> RadialPair:
    """``Jt_nu(kr)`` and ``Nt_nu(kr)`` with ``nu = mu + 1/2``.

    ``Jt = 2^nu Gamma(nu+1) k^-nu J_nu(kr) ~ r^nu`` and
    ``Nt = -(pi / Gamma(nu)) (k/2)^nu Y_nu(kr) ~ r^-nu`` as ``kr -> 0``.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or k <= 0:
        raise ValueError("singular_radial_pair needs r > 0 and k > 0")
    if np.any(k * r > kr_max):
        raise OverflowError("kr beyond the supported range")
    nu, cj, cn = _scales(mu, k)
    z = k * r
    return RadialPair(cj * jv(nu, z), cn * yv(nu, z), cj * k * jvp(nu, z), cn * k * yvp(nu, z))


def tip_radial(mu: float, k: float, r, kind: str):
    """Radial factor of the tip solutions and its first two derivatives.

    ``kind="J"`` gives ``r^{-1/2} Jt(kr) ~ r^mu`` and ``kind="N"`` gives
    ``r^{-1/2} Nt(kr) ~ r^{-mu-1}``.  With ``k = 0`` the pure powers are
    returned (the harmonic limit).
    """
    r = np.asarray(r, dtype=float)
    if k == 0.0:
        e = mu if kind == "J" else -mu - 1.0
        return r ** e, e * r ** (e - 1), e * (e - 1) * r ** (e - 2)
    pair = singular_radial_pair(mu, k, r)
    f, df = (pair.J, pair.dJ) if kind == "J" else (pair.N, pair.dN)
    g = r ** -0.5 * f
    dg = r ** -0.5 * df - 0.5 * r ** -1.5 * f
    # the radial equation g'' + 2 g'/r + (k^2 - mu(mu+1)/r^2) g = 0 gives g''
    ddg = -2.0 * dg / r - (k * k - mu * (mu + 1.0) / r ** 2) * g
    return g, dg, ddg


# ---------------------------------------------------------------------------
# cutoffs near a tip
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TipCutoff:
    """Radial cutoff equal to 1 for ``r < r0`` and 0 for ``r > r1``."""

    r0: float
    r1: float

    def __call__(self, r, order: int = 0):
        val = bridge(r, self.r0, self.r1, order)
        return 1.0 - val if order == 0 else -val

    @classmethod
    def from_delta(cls, delta: float) -> "TipCutoff":
        return cls(0.5 * delta, delta)


def commutator_radial(cut: TipCutoff, mu: float, k: float, r, kind: str, sign: float = 1.0):
    """Radial factor of ``[Delta, chi] F`` for ``F = g(r) Phi1``.

    ``chi`` is ``cut`` (``sign = +1``) or ``1 - cut`` (``sign = -1``):
    ``[Delta, chi] F = (chi'' + 2 chi'/r) g Phi1 + 2 chi' g' Phi1``.
    """
    g, dg, _ = tip_radial(mu, k, r, kind)
    c1 = sign * cut(r, 1)
    c2 = sign * cut(r, 2)
    return (c2 + 2.0 * c1 / r) * g + 2.0 * c1 * dg


def self_pairing(cut: TipCutoff, mu: float, k: float, left: str = "N", right: str = "N",
                 outer: bool = False, n: int = 4001) -> float:
    """``int chi F_left [Delta, chi] F_right dV`` over a cone, with ``F = g(r) Phi1``.

    ``chi`` is ``cut`` or, with ``outer=True``, ``1 - cut``.  The angular
    factor ``int |Phi1|^2 dS`` equals ``1/(2 mu + 1)`` with the cap
    normalization and is included.
    """
    from scipy.integrate import simpson
    r = np.linspace(cut.r0, cut.r1, n)
    g, _, _ = tip_radial(mu, k, r, left)
    sign = -1.0 if outer else 1.0
    chi = 1.0 - cut(r) if outer else cut(r)
    com = commutator_radial(cut, mu, k, r, right, sign)
    return float(simpson(r * r * chi * g * com, x=r)) / (2.0 * mu + 1.0)
