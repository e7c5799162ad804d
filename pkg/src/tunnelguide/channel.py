"""Outgoing special solution of the half-infinite channel and its constants.

The channel ``G1`` is the cylinder to the left of the first narrow closed by
the tangent cone at the tip.  Its special solution is

``v1 = Theta(r) Nt(r) Phi1 + v~``,

where ``Theta`` is a tip cutoff, ``Nt Phi1`` the singular cone solution and
``v~`` a bounded outgoing solution of ``(Delta + k^2) v~ = -[Delta, Theta] Nt Phi1``.
Near the tip ``v1 = (Nt + a Jt) Phi1 + ...``; far to the left
``v1 = A exp(-i nu1 x) Psi1 + ...``.  The two constants obey ``|A|^2 = Im a``.

Numerics
--------
The singular part is carried analytically, the bounded part is solved with
axisymmetric P1 elements (disk cross-sections).  The truncation plane carries
a mode-space radiation closure built from the section eigenmodes.  ``a`` is
read off with the Green functional ``int v1 [Delta, Theta](Nt Phi1) dV``,
which isolates the ``Jt`` coefficient exactly; a probe fit near the tip is
kept as a diagnostic.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import j0

from .meridian import MeridianMesh, channel_mesh, tip_load, tip_projection
from .spectral import CapSpectrum, ModeBasis, TipCutoff, self_pairing, tip_radial


# ---------------------------------------------------------------------------
# radiation closure
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeClosure:
    """Mode-space radiation condition ``d_n u_n = T_n u_n`` on a truncation plane.

    ``d_n`` is the derivative along the outward normal.  The propagating mode
    gets ``T = i kappa`` (outgoing), the first ``n_exact - 1`` evanescent modes
    their decay rate ``-sqrt(lambda_n^2 - k^2)`` and the remaining modes the
    static rate ``-lambda_n``.
    """

    k: float
    thresholds: np.ndarray
    impedance: np.ndarray
    n_exact: int

    def residual(self, trace, flux) -> np.ndarray:
        """Closure defect ``flux - T trace`` for mode coefficients of a boundary pair."""
        n = len(trace)
        return np.asarray(flux) - self.impedance[:n] * np.asarray(trace)

    def matrix(self, psi: np.ndarray, mass: np.ndarray) -> np.ndarray:
        """Dense boundary operator ``Mb Psi diag(T) Psi^T Mb`` for ``Mb``-orthonormal ``psi``."""
        mv = mass @ psi
        return (mv * self.impedance[: psi.shape[1]]) @ mv.T


def dtN_closure(thresholds, k: float, n_evanescent: int | None = 8) -> ModeClosure:
    """Radiation closure for transverse eigenvalues ``thresholds`` (ascending ``lambda_n^2``).

    Raises
    ------
    ValueError
        Unless exactly one of the given modes propagates at ``k``.
    """
    lam2 = np.asarray(thresholds, dtype=float)
    k2 = float(k) ** 2
    prop = lam2 < k2
    if prop.sum() != 1 or not prop[0]:
        raise ValueError("outside single-channel window")
    n_exact = len(lam2) if n_evanescent is None else min(len(lam2), 1 + int(n_evanescent))
    T = np.empty(len(lam2), dtype=complex)
    T[0] = 1j * np.sqrt(k2 - lam2[0])
    T[1:] = -np.sqrt(lam2[1:] - k2)
    T[n_exact:] = -np.sqrt(lam2[n_exact:])
    return ModeClosure(float(k), lam2, T, n_exact)


def section_modes(mesh: MeridianMesh, name: str):
    """Discrete transverse modes on a truncation section (free nodes only).

    Returns node indices, the section mass matrix, the ascending eigenvalues and
    ``Mb``-orthonormal eigenvectors with the ground mode positive.
    """
    idx, Mb, Kb = mesh.section_matrices(name)
    keep = ~mesh.dirichlet[idx]
    idx, Mb, Kb = idx[keep], Mb[np.ix_(keep, keep)], Kb[np.ix_(keep, keep)]
    lam2, psi = sla.eigh(Kb, Mb)
    if psi[:, 0].sum() < 0:
        psi[:, 0] *= -1.0
    return idx, Mb, lam2, psi


def add_dense_block(A: sp.spmatrix, idx: np.ndarray, block: np.ndarray) -> sp.csc_matrix:
    """``A + P block P^T`` where ``P`` injects the positions ``idx``."""
    rows = np.repeat(idx, len(idx))
    cols = np.tile(idx, len(idx))
    extra = sp.csc_matrix((block.ravel(), (rows, cols)), shape=A.shape)
    return (A + extra).tocsc()


# ---------------------------------------------------------------------------
# channel constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelGrid:
    """Resolution of the channel solve.

    ``length`` is the distance from the tip to the truncation plane,
    ``cutoff`` the shell ``(delta/2, delta)`` of the tip cutoff and
    ``n_evanescent`` the number of evanescent modes closed exactly.
    """

    n_radial: int = 16
    length: float = 8.0
    cutoff: tuple = (0.5, 1.0)
    n_evanescent: int | None = 8
    h_min_ratio: float = 0.01

    def refined(self, factor: int = 2) -> "ChannelGrid":
        return replace(self, n_radial=self.n_radial * factor)


@dataclass
class ChannelConstants:
    """Constants ``a`` and ``A`` of the outgoing special solution at wavenumber ``k``.

    ``A`` uses the continuum transverse mode and wavenumber of ``modes``;
    ``A_discrete`` the discrete section mode, for which the flux identity
    holds to round-off (``flux_residual``).
    """

    k: float
    a: complex
    A: complex
    identity_residual: float
    A_discrete: complex = 0j
    flux_residual: float = 0.0
    a_probe: complex = 0j
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(k=self.k, a_re=self.a.real, a_im=self.a.imag, A_re=self.A.real, A_im=self.A.imag,
                    identity_residual=self.identity_residual, flux_residual=self.flux_residual)


@dataclass
class ChannelSolution:
    """Bounded part of the special solution on the channel mesh."""

    mesh: MeridianMesh
    k: float
    v: np.ndarray
    tip_x: float
    direction: int
    cut: TipCutoff
    cap: CapSpectrum

    def total(self, x, rho) -> np.ndarray:
        """``v1 = Theta Nt Phi1 + v~`` at points (singular part evaluated analytically)."""
        from .meridian import tip_coordinates
        r, ph = tip_coordinates(x, rho, self.tip_x, self.direction)
        r = np.maximum(r, 1e-300)
        sing = self.cut(r) * tip_radial(self.cap.mu1, self.k, r, "N")[0] * self.cap.phi1(ph)
        return sing + self.mesh.interpolator(self.v)(x, rho)


def _continuum_mode(modes: ModeBasis, rho, radius: float):
    """Flux-normalized ground mode of a disk: ``Psi1 = J0(lambda1 rho) / norm`` with ``int Psi1^2 = 1``."""
    from scipy.integrate import quad
    lam1 = np.sqrt(modes.lam1_sq)
    norm2 = quad(lambda s: 2.0 * np.pi * s * j0(lam1 * s) ** 2, 0.0, radius, epsabs=1e-14, epsrel=1e-13)[0]
    return j0(lam1 * np.asarray(rho)) / np.sqrt(norm2)


def solve_channel(cap: CapSpectrum, k: float, grid: ChannelGrid = ChannelGrid(), side: str = "left",
                  tip_x: float = 0.0, cyl_radius: float = 1.0):
    """Solve for the bounded part ``v~`` in ``G1`` (``side="left"``) or its mirror ``G3``.

    Returns the solution, the section data and the closure.
    """
    h_max = cyl_radius / grid.n_radial
    mesh = channel_mesh(cap.theta, grid.length, grid.n_radial, cyl_radius, h_min=grid.h_min_ratio * h_max)
    direction = -1
    if side == "right":
        mesh.nodes[:, 0] = -mesh.nodes[:, 0]
        mesh.triangles = mesh.triangles[:, ::-1].copy()
        mesh._cache.clear()
        direction = 1
    elif side != "left":
        raise ValueError("side must be 'left' or 'right'")
    mesh.nodes[:, 0] += tip_x
    cut = TipCutoff(*grid.cutoff)
    if cut.r1 * np.sin(cap.theta) >= cyl_radius:
        raise ValueError("tip cutoff leaves the conical part of the channel")
    K, M = mesh.matrices()
    free = mesh.free
    pos = -np.ones(mesh.n, dtype=np.int64)
    pos[free] = np.arange(len(free))
    idx, Mb, lam2, psi = section_modes(mesh, "left")
    closure = dtN_closure(lam2, k, grid.n_evanescent)
    S = (K - k * k * M)[free][:, free].astype(complex)
    S = add_dense_block(S, pos[idx], -closure.matrix(psi, Mb))
    F = tip_load(mesh, tip_x, direction, cap, cut, k, "N")
    v = np.zeros(mesh.n, dtype=complex)
    v[free] = spla.splu(S).solve(F[free].astype(complex))
    sol = ChannelSolution(mesh, k, v, tip_x, direction, cut, cap)
    return sol, F, (idx, Mb, lam2, psi), closure


def channel_constants(cap: CapSpectrum, modes: ModeBasis, k: float, grid: ChannelGrid = ChannelGrid(),
                      side: str = "left", tip_x: float = 0.0, cyl_radius: float = 1.0,
                      extrapolate: bool = True, **kw) -> ChannelConstants:
    """Constants ``a(k)`` and ``A(k)`` of the outgoing special solution.

    With ``extrapolate`` the solve is repeated on the refined grid and the
    constants are Richardson-combined (second order); the difference to the
    fine-grid values is kept in ``diagnostics["a_error"]``.  ``side="right"``
    solves the mirrored channel ``G3`` with its tip at ``tip_x``; there ``A``
    is the amplitude of ``exp(+i nu1 x) Psi1``.

    Raises
    ------
    ValueError
        If ``k`` is outside the single-channel window of ``modes``.
    RuntimeError
        If the truncated problem is numerically singular (trapped mode).
    """
    if not modes.in_window(k):
        raise ValueError("outside single-channel window")
    coarse = _channel_single(cap, modes, k, grid, side, tip_x, cyl_radius, **kw)
    if not extrapolate:
        return coarse
    fine = _channel_single(cap, modes, k, grid.refined(), side, tip_x, cyl_radius, **kw)

    def rich(f, c):
        return (4.0 * f - c) / 3.0

    a = complex(rich(fine.a, coarse.a))
    A = complex(rich(fine.A, coarse.A))
    A_disc = complex(rich(fine.A_discrete, coarse.A_discrete))
    diag = dict(fine.diagnostics, a_error=abs(a - fine.a), A_error=abs(A - fine.A),
                identity_residual_fine=fine.identity_residual, identity_residual_coarse=coarse.identity_residual)
    return ChannelConstants(float(k), a, A, abs(abs(A) ** 2 - a.imag), A_disc,
                            max(coarse.flux_residual, fine.flux_residual),
                            complex(rich(fine.a_probe, coarse.a_probe)), diag)


def _channel_single(cap, modes, k, grid, side, tip_x, cyl_radius, probe_radii=None,
                    cond_floor: float = 1e-10) -> ChannelConstants:
    sol, F, (idx, Mb, lam2, psi), closure = solve_channel(cap, k, grid, side, tip_x, cyl_radius)
    s_self = self_pairing(sol.cut, cap.mu1, k, "N", "N")
    a = complex(s_self + F @ sol.v)
    kappa = float(closure.impedance[0].imag)
    section_x = float(sol.mesh.nodes[idx[0], 0])
    sgn = 1.0 if side == "left" else -1.0
    # outgoing wave exp(-i sgn nu x) Psi1 evaluated at the truncation plane
    c_disc = psi[:, 0] @ (Mb @ sol.v[idx])
    A_disc = c_disc * np.sqrt(kappa) * np.exp(1j * sgn * kappa * section_x)
    nu = float(modes.nu1(k))
    rho = sol.mesh.nodes[idx, 1]
    cont = _continuum_mode(modes, rho, cyl_radius)
    c_cont = cont @ (Mb @ sol.v[idx])
    A = complex(c_cont * np.sqrt(nu) * np.exp(1j * sgn * nu * section_x))
    flux_res = abs(abs(A_disc) ** 2 - a.imag)
    if not np.isfinite(a) or abs(F @ sol.v) > 1.0 / cond_floor:
        raise RuntimeError(f"channel solve ill-conditioned at k={k}")
    a_probe = _probe_fit(sol, probe_radii)
    return ChannelConstants(float(k), a, A, abs(abs(A) ** 2 - a.imag), complex(A_disc), flux_res, a_probe,
                            dict(nodes=sol.mesh.n, self_pairing=s_self, kappa_discrete=kappa, nu=nu,
                                 section_x=section_x))


def _probe_fit(sol: ChannelSolution, radii=None) -> complex:
    """Two-term tip fit ``proj(r) / Jt(r) = a + c r^(mu2 - mu1)`` of the bounded part."""
    cap = sol.cap
    if radii is None:
        radii = np.linspace(0.3, 0.9, 5) * sol.cut.r0
    radii = np.asarray(radii, dtype=float)
    proj = tip_projection(sol.mesh, sol.v, sol.tip_x, sol.direction, cap, radii)
    J = tip_radial(cap.mu1, sol.k, radii, "J")[0]
    design = np.column_stack([np.ones_like(radii), radii ** (cap.mu2 - cap.mu1)])
    coef, *_ = np.linalg.lstsq(design, proj / J, rcond=None)
    return complex(coef[0])


def mirror_constants(const: ChannelConstants, d: float, nu1: float) -> tuple:
    """Constants of the mirrored channel ``v3(x) = v1(d - x)``: ``(a, A exp(-i nu1 d))``.

    The outgoing factor uses the propagation wavenumber ``nu1``.
    """
    return const.a, const.A * np.exp(-1j * nu1 * d)


def channel_scan(cap: CapSpectrum, modes: ModeBasis, ks, grid: ChannelGrid = ChannelGrid(), **kw) -> list:
    """Channel constants over a list of wavenumbers."""
    return [channel_constants(cap, modes, float(k), grid, **kw) for k in ks]


@dataclass
class ChannelTable:
    """Channel constants tabulated in ``k^2`` with cubic interpolation."""

    k2: np.ndarray
    a: np.ndarray
    A: np.ndarray

    @classmethod
    def from_constants(cls, consts) -> "ChannelTable":
        consts = sorted(consts, key=lambda c: c.k)
        return cls(np.array([c.k ** 2 for c in consts]), np.array([c.a for c in consts]),
                   np.array([c.A for c in consts]))

    def __call__(self, k2: float):
        """``(a, A)`` at real ``k^2`` (polynomial interpolation through the table)."""
        k2 = float(np.real(k2))
        if len(self.k2) == 1:
            return complex(self.a[0]), complex(self.A[0])
        deg = min(3, len(self.k2) - 1)
        order = np.argsort(np.abs(self.k2 - k2))[: deg + 1]
        xs = self.k2[order]
        a = np.polyval(np.polyfit(xs - k2, self.a[order], deg), 0.0)
        A = np.polyval(np.polyfit(xs - k2, self.A[order], deg), 0.0)
        return complex(a), complex(A)

    def as_rows(self) -> list:
        return [dict(k2=float(k2), a_re=a.real, a_im=a.imag, A_re=A.real, A_im=A.imag)
                for k2, a, A in zip(self.k2, self.a, self.A)]
