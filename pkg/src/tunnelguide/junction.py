"""Harmonic model solutions in the unit-scale neck and the coupling coefficients.

The neck domain ``Omega`` coincides with the double cone ``K`` far from the
tip.  The model solution ``w^r`` is harmonic in ``Omega``, vanishes on the
wall and behaves like

* ``rho^mu1 Phi1 + alpha rho^(-mu1-1) Phi1`` in the right cone half,
* ``beta rho^(-mu1-1) Phi1`` in the left cone half,

up to faster-decaying angular modes; ``w^l`` is its mirror image.

Numerics
--------
The growing branch is carried analytically as ``f_+`` restricted to the
cone half ``K+``.  Inside the neck the cone surface is not part of the wall,
so that function fails to be harmonic only through the jump of its normal
derivative across the cone surface; the finite element unknown is the
small, decaying remainder driven by this surface source.  On the truncation arcs every
discrete cap mode receives its exact decay condition
``d_rho u = -(mu_n + 1) u / rho``.  Coefficients are read off with Green
functionals supported in the cutoff annulus, which separate the ``rho^mu`` and
``rho^(-mu-1)`` parts of the ``Phi1`` component exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import NeckProfile
from .meridian import MeridianMesh, junction_mesh
from .spectral import CapSpectrum, TipCutoff, commutator_radial


@dataclass(frozen=True)
class JunctionGrid:
    """Resolution of the neck mesh.

    ``h0`` is the spacing inside the matching ball, ``growth`` the relative
    radial spacing beyond it, ``n_cone``/``n_neck`` the angular divisions of
    the cone sector and of the neck block.  ``r_max_factor`` sets the
    truncation radius in units of the matching radius and ``cutoff`` the
    annulus of the extraction cutoff in the same units.
    """

    h0: float = 0.04
    growth: float = 0.06
    n_cone: int = 24
    r_max_factor: float = 3.0
    cutoff: tuple = (1.15, 1.9)

    def refined(self, factor: int = 2) -> "JunctionGrid":
        return replace(self, h0=self.h0 / factor, growth=self.growth / factor,
                       n_cone=self.n_cone * factor)


@dataclass
class ModelSolution:
    """A harmonic model solution on the full truncated neck mesh."""

    side: str
    mesh: MeridianMesh
    w: np.ndarray
    same_side: float
    opposite_side: float
    normalization: float
    cap: CapSpectrum

    def projection(self, radius: float, side: str | None = None, n: int = 96) -> float:
        """``Phi1`` coefficient ``(2 mu1 + 1) int w Phi1 dS`` on the unit sphere at given radius.

        Gauss nodes keep the samples strictly inside the mesh.
        """
        side = side or self.side
        t, wts = np.polynomial.legendre.leggauss(n)
        phi = 0.5 * self.cap.theta * (t + 1.0)
        wts = 0.5 * self.cap.theta * wts
        sgn = 1.0 if side == "right" else -1.0
        x, r = sgn * radius * np.cos(phi), radius * np.sin(phi)
        vals = self.mesh.interpolator(self.w)(x, r)
        return float(self.cap.p * 2.0 * np.pi * np.sum(wts * vals * self.cap.phi1(phi) * np.sin(phi)))


@dataclass
class JunctionCoefficients:
    """Coupling coefficients of a neck with their extrapolation ladder."""

    alpha: float
    beta: float
    r_max: float
    alpha_error: float
    beta_error: float
    ladder: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return dict(alpha=self.alpha, beta=self.beta, r_max=self.r_max, alpha_error=self.alpha_error,
                    beta_error=self.beta_error, ladder=self.ladder, diagnostics=self.diagnostics)


def _sph(mesh: MeridianMesh, x, r, side: str):
    sgn = 1.0 if side == "right" else -1.0
    xs = sgn * x
    return np.hypot(xs, r), np.arctan2(r, xs)


def _cone_commutator(mesh, cap: CapSpectrum, cut: TipCutoff, side: str, kind: str, outer: bool):
    """Load vector of ``[Delta, chi] (g Phi1)`` in one cone half (``chi = 1 - cut`` if ``outer``)."""
    sign = -1.0 if outer else 1.0

    def func(x, r):
        rr, ph = _sph(mesh, x, r, side)
        rr = np.maximum(rr, 1e-300)
        val = commutator_radial(cut, cap.mu1, 0.0, rr, kind, sign) * cap.phi1(ph)
        same = (x >= 0) if side == "right" else (x <= 0)
        return np.where(same, val, 0.0)

    mask = mesh.triangles_near((0.0, 0.0), cut.r0, cut.r1)
    return mesh.load_vector(func, mask)


def _arc_closure(mesh: MeridianMesh, name: str):
    """Decay closure on a truncation arc: dense matrix on its free nodes and the exponents."""
    idx, Mb, Kb = mesh.section_matrices(name)
    keep = ~mesh.dirichlet[idx]
    idx, Mb, Kb = idx[keep], Mb[np.ix_(keep, keep)], Kb[np.ix_(keep, keep)]
    radius = float(np.hypot(*mesh.nodes[idx[0]]))
    ev, vec = sla.eigh(Kb, Mb)
    lam = ev * radius ** 2
    mu = 0.5 * (-1.0 + np.sqrt(1.0 + 4.0 * lam))
    mv = Mb @ vec
    B = -(mv * ((mu + 1.0) / radius)) @ mv.T
    return idx, B, mu


def _interface_source(mesh: MeridianMesh, cap: CapSpectrum, side: str) -> np.ndarray:
    """``-int dn f_+ phi_i dA`` over the cone surface inside the neck (normal out of the cone)."""
    idx = mesh.tags[f"interface_{side}"]
    dphi = float(cap.dphi1(cap.theta))

    def func(x, r):
        rr = np.hypot(x, r)
        return -(rr ** (cap.mu1 - 1.0)) * dphi

    return mesh.line_load(idx, func)


def _solve(mesh: MeridianMesh, cap: CapSpectrum, growth_side: str, extra_dirichlet=None):
    """Remainder field ``w - f_+ 1_K`` for growth on ``growth_side``."""
    K, _ = mesh.matrices()
    dirichlet = mesh.dirichlet.copy()
    if extra_dirichlet is not None:
        dirichlet[extra_dirichlet] = True
    free = np.nonzero(~dirichlet)[0]
    pos = -np.ones(mesh.n, dtype=np.int64)
    pos[free] = np.arange(len(free))
    A = K[free][:, free].tocoo()
    rows, cols, vals = [A.row], [A.col], [A.data]
    for name in mesh.sections:
        idx, B, _ = _arc_closure(mesh, name)
        p = pos[idx]
        ok = p >= 0
        p, B = p[ok], B[np.ix_(ok, ok)]
        rows.append(np.repeat(p, len(p)))
        cols.append(np.tile(p, len(p)))
        vals.append(-B.ravel())
    A = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(free),) * 2)
    src = _interface_source(mesh, cap, growth_side)
    u = np.zeros(mesh.n)
    u[free] = spla.splu(A).solve(src[free])
    return u


def _coefficients(mesh, cap, cut, u, growth_side: str):
    """Decay amplitudes on both sides and the growth normalization for a solved remainder.

    The cone part ``f_+ 1_K`` contributes nothing to the decay functionals and
    exactly ``-1`` to the normalization functional.
    """
    other = "left" if growth_side == "right" else "right"
    g_same = _cone_commutator(mesh, cap, cut, growth_side, "J", outer=True)
    g_other = _cone_commutator(mesh, cap, cut, other, "J", outer=True)
    n_same = _cone_commutator(mesh, cap, cut, growth_side, "N", outer=True)
    return g_same @ u, g_other @ u, -1.0 + n_same @ u


def _full_from_half(half: MeridianMesh, full: MeridianMesh, u_half: np.ndarray, parity: int) -> np.ndarray:
    """Extend a half-mesh field to the mirrored mesh (even or odd parity)."""
    sym = np.zeros(half.n, dtype=bool)
    sym[half.tags["symmetry"]] = True
    others = np.nonzero(~sym)[0]
    out = np.zeros(full.n)
    out[:half.n] = u_half
    out[half.n:] = parity * u_half[others]
    return out


def _cutoff(mesh: MeridianMesh, grid: JunctionGrid) -> TipCutoff:
    rc = mesh.tags["r_match"]
    return TipCutoff(grid.cutoff[0] * rc, grid.cutoff[1] * rc)


def solve_model_solution(profile: NeckProfile, cap: CapSpectrum, side: str = "right",
                         grid: JunctionGrid = JunctionGrid()) -> ModelSolution:
    """Model solution with growth on ``side`` solved on the full (unsymmetrized) neck mesh."""
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    r_max = grid.r_max_factor * profile.match_radius(cap.theta)
    mesh = junction_mesh(profile, cap.theta, r_max, grid.h0, grid.growth, grid.n_cone, full=True)
    cut = _cutoff(mesh, grid)
    u = _solve(mesh, cap, side)
    same, opposite, norm = _coefficients(mesh, cap, cut, u, side)
    w = u + _growth_field(mesh, cap, side)
    return ModelSolution(side, mesh, w, same, opposite, norm, cap)


def _growth_field(mesh, cap, side):
    x, r = mesh.nodes[:, 0], mesh.nodes[:, 1]
    rr, ph = _sph(mesh, x, r, side)
    return np.where(ph < cap.theta, rr ** cap.mu1 * cap.phi1(ph), 0.0)


def _symmetric_pair(profile: NeckProfile, cap: CapSpectrum, grid: JunctionGrid, r_max: float):
    mesh = junction_mesh(profile, cap.theta, r_max, grid.h0, grid.growth, grid.n_cone)
    cut = _cutoff(mesh, grid)
    even = _solve(mesh, cap, "right")
    odd = _solve(mesh, cap, "right", extra_dirichlet=mesh.tags["symmetry"])
    s_even, _, n_even = _coefficients(mesh, cap, cut, even, "right")
    s_odd, _, n_odd = _coefficients(mesh, cap, cut, odd, "right")
    alpha = 0.5 * (s_even + s_odd)
    beta = 0.5 * (s_even - s_odd)
    return alpha, beta, dict(norm_even=n_even, norm_odd=n_odd, nodes=mesh.n)


def junction_coefficients(profile: NeckProfile, cap: CapSpectrum, grid: JunctionGrid = JunctionGrid(),
                          method: str = "symmetric", beta_min: float = 1e-12) -> JunctionCoefficients:
    """``alpha`` and ``beta`` of the neck, extrapolated over resolution and truncation.

    The ladder evaluates the grid ``grid`` and its refinement at truncation
    radii ``r_max`` and ``2 r_max``; the reported value is the Richardson
    combination at ``r_max`` and the error bar the largest deviation of any
    ladder entry from it.

    Parameters
    ----------
    method : {"symmetric", "direct"}
        ``"symmetric"`` solves the even and odd half-domain problems;
        ``"direct"`` solves the growth problem on the full domain.
    """
    r_max = grid.r_max_factor * profile.match_radius(cap.theta)
    fine = grid.refined()
    ladder = []
    for g, label in ((grid, "h"), (fine, "h/2")):
        for rm, rlabel in ((r_max, "R"), (2.0 * r_max, "2R")):
            g_r = replace(g, r_max_factor=rm / profile.match_radius(cap.theta))
            if method == "symmetric":
                a, b, diag = _symmetric_pair(profile, cap, g_r, rm)
            elif method == "direct":
                sol = solve_model_solution(profile, cap, "right", g_r)
                a, b = sol.same_side, sol.opposite_side
                diag = dict(normalization=sol.normalization, nodes=sol.mesh.n)
            else:
                raise ValueError(f"unknown method {method!r}")
            ladder.append(dict(grid=label, r_max=rm, alpha=float(a), beta=float(b), **{k: float(v) for k, v in diag.items()}))
    by = {(e["grid"], e["r_max"]): e for e in ladder}
    alpha = (4.0 * by[("h/2", r_max)]["alpha"] - by[("h", r_max)]["alpha"]) / 3.0
    beta = (4.0 * by[("h/2", r_max)]["beta"] - by[("h", r_max)]["beta"]) / 3.0
    alpha_err = max(abs(e["alpha"] - alpha) for e in ladder)
    beta_err = max(abs(e["beta"] - beta) for e in ladder)
    if abs(beta) < beta_min:
        raise ValueError("neck numerically closed")
    return JunctionCoefficients(float(alpha), float(beta), r_max, alpha_err, beta_err, ladder,
                                dict(method=method))
