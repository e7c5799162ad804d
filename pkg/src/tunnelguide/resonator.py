"""Resonator eigenpairs, tip coefficients and the regularized tip expansions.

Two discretizations are provided.

* The field-free resonator with a disk cross-section is axisymmetric and is
  solved with meridian P1 elements (:func:`axisymmetric_eigenpair`).  Tip
  coefficients and the regularized expansions ``c_j(k)``, ``d_j(k)`` come
  from this solve.
* The magnetic problem ``(-i grad + A')^2 u +- H u = k^2 u`` is solved on a
  voxel grid with link phases (:class:`MagneticOperator`,
  :func:`resonator_eigenpair`).

Tip coefficients are extracted with the Green functional
``b_j = int v0 [Delta, Theta_j](Nt Phi1) dV``, which returns the ``Jt``
coefficient of ``v0`` at tip ``j`` exactly for an exact eigenfunction; a
two-term probe fit ``proj(r)/Jt(r) = b + c r^(mu2 - mu1)`` is kept as a
cross-check.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import SolenoidSpec, VoxelGrid, gauge_modified_potential, vector_potential
from .meridian import MeridianMesh, resonator_mesh, tip_load, tip_projection
from .spectral import CapSpectrum, TipCutoff, self_pairing, tip_radial


# ---------------------------------------------------------------------------
# field-free axisymmetric resonator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResonatorGrid:
    """Meridian resolution of the resonator and the tip cutoff shell."""

    n_radial: int = 16
    cutoff: tuple = (0.5, 1.0)
    h_min_ratio: float = 0.01

    def refined(self, factor: int = 2) -> "ResonatorGrid":
        return replace(self, n_radial=self.n_radial * factor)


@dataclass
class ResonatorSpectrum:
    """A simple resonator eigenpair with its tip coefficients.

    ``k0_sq`` and ``b1``, ``b2`` are Richardson-extrapolated when the spectrum
    comes from :func:`axisymmetric_eigenpair`; ``levels`` keeps the per-grid
    data needed by :func:`regularized_expansion`.
    """

    spin: str
    k0_sq: float
    b1: complex
    b2: complex
    gap: float
    residual: float
    b_probe: tuple = (0j, 0j)
    diagnostics: dict = field(default_factory=dict)
    levels: list = field(default_factory=list, repr=False)

    def as_dict(self) -> dict:
        return dict(spin=self.spin, k0_sq=self.k0_sq, b1_re=complex(self.b1).real, b1_im=complex(self.b1).imag,
                    b2_re=complex(self.b2).real, b2_im=complex(self.b2).imag, gap=self.gap, residual=self.residual,
                    **{k: v for k, v in self.diagnostics.items() if np.isscalar(v)})


@dataclass
class _Level:
    """Per-grid data of the axisymmetric eigenpair."""

    mesh: MeridianMesh
    cap: CapSpectrum
    d: float
    cut: TipCutoff
    k0_sq: float
    v0: np.ndarray
    b: tuple

    def tips(self):
        return ((0.0, 1), (self.d, -1))


def _window_eigs(K, M, free, window, count: int = 6):
    A = K[free][:, free].tocsc()
    B = M[free][:, free].tocsc()
    sigma = 0.5 * (window[0] + window[1])
    vals, vecs = spla.eigsh(A, k=count, M=B, sigma=sigma, which="LM")
    order = np.argsort(vals)
    return vals[order], vecs[:, order]


def _select(vals, window):
    inside = np.nonzero((vals > window[0]) & (vals < window[1]))[0]
    if len(inside) != 1:
        raise ValueError(f"no simple resonator mode in window {tuple(window)}: found {len(inside)}")
    return int(inside[0])


def _axisymmetric_level(cap: CapSpectrum, d: float, grid: ResonatorGrid, window) -> tuple:
    h_max = 1.0 / grid.n_radial
    mesh = resonator_mesh(cap.theta, d, grid.n_radial, h_min=grid.h_min_ratio * h_max)
    K, M = mesh.matrices()
    free = mesh.free
    vals, vecs = _window_eigs(K, M, free, window)
    i = _select(vals, window)
    k0_sq = float(vals[i])
    others = np.delete(vals, i)
    gap = float(np.min(np.abs(others - k0_sq)))
    v0 = np.zeros(mesh.n)
    v0[free] = vecs[:, i]
    v0 /= np.sqrt(v0 @ (M @ v0))
    cut = TipCutoff(*grid.cutoff)
    k0 = np.sqrt(k0_sq)
    b = tuple(float(tip_load(mesh, x, s, cap, cut, k0, "N") @ v0) for x, s in ((0.0, 1), (d, -1)))
    if b[0] < 0:
        v0 = -v0
        b = (-b[0], -b[1])
    res = float(np.linalg.norm((K - k0_sq * M)[free] @ v0) / np.linalg.norm((M @ v0)[free]))
    return _Level(mesh, cap, d, cut, k0_sq, v0, b), gap, res


def axisymmetric_eigenpair(cap: CapSpectrum, d: float, window, grid: ResonatorGrid = ResonatorGrid(),
                           b_min: float = 1e-8) -> ResonatorSpectrum:
    """Field-free resonator eigenpair in the window, extrapolated over ``grid`` and its refinement.

    Raises
    ------
    ValueError
        If the window holds zero or several eigenvalues, or a tip coefficient
        is below ``b_min``.
    """
    coarse, gap_c, res_c = _axisymmetric_level(cap, d, grid, window)
    fine, gap_f, res_f = _axisymmetric_level(cap, d, grid.refined(), window)
    k0_sq = (4.0 * fine.k0_sq - coarse.k0_sq) / 3.0
    b = [(4.0 * bf - bc) / 3.0 for bf, bc in zip(fine.b, coarse.b)]
    if min(abs(b[0]), abs(b[1])) < b_min:
        raise ValueError("Aharonov-Bohm degenerate tip coefficient")
    probe = tuple((4.0 * _probe_fit(fine, j) - _probe_fit(coarse, j)) / 3.0 for j in (0, 1))
    diag = dict(k0_sq_coarse=coarse.k0_sq, k0_sq_fine=fine.k0_sq, b1_fine=fine.b[0], b2_fine=fine.b[1],
                b_error=float(max(abs(fine.b[0] - coarse.b[0]), abs(fine.b[1] - coarse.b[1]), 1e-12)),
                k0_sq_error=abs(k0_sq - fine.k0_sq), nodes=fine.mesh.n)
    return ResonatorSpectrum("plus", float(k0_sq), complex(b[0]), complex(b[1]), gap_f, res_f, probe, diag,
                             [coarse, fine])


def _probe_fit(level: _Level, j: int, radii=None) -> complex:
    cap = level.cap
    if radii is None:
        radii = np.linspace(0.3, 0.9, 5) * level.cut.r0
    radii = np.asarray(radii, dtype=float)
    x, s = level.tips()[j]
    proj = tip_projection(level.mesh, level.v0, x, s, cap, radii)
    J = tip_radial(cap.mu1, np.sqrt(level.k0_sq), radii, "J")[0]
    design = np.column_stack([np.ones_like(radii), radii ** (cap.mu2 - cap.mu1)])
    coef, *_ = np.linalg.lstsq(design, proj / J, rcond=None)
    return complex(coef[0])


def tip_coefficient(spectrum: ResonatorSpectrum, j: int, radii, level: int = -1) -> tuple:
    """Probe-fit estimate of ``b_j`` (``j = 1, 2``) from the radii ``radii``.

    Returns ``(b_j, fit_residual)``; the fit is
    ``(2 mu1 + 1) <v0(r, .), Phi1> / (r^-1/2 Jt(k0 r)) = b + c r^(mu2 - mu1)``.

    Raises
    ------
    ValueError
        If fewer than three radii are given or the relative fit residual
        exceeds ``1e-3`` ("tip expansion not resolved").
    """
    radii = np.asarray(radii, dtype=float)
    if len(radii) < 3:
        raise ValueError("tip fit needs at least three probe radii")
    lev = spectrum.levels[level]
    cap = lev.cap
    x, s = lev.tips()[j - 1]
    proj = tip_projection(lev.mesh, lev.v0, x, s, cap, radii)
    J = tip_radial(cap.mu1, np.sqrt(lev.k0_sq), radii, "J")[0]
    design = np.column_stack([np.ones_like(radii), radii ** (cap.mu2 - cap.mu1)])
    coef, *_ = np.linalg.lstsq(design, proj / J, rcond=None)
    resid = float(np.linalg.norm(design @ coef - proj / J) / max(abs(coef[0]), 1e-300) / np.sqrt(len(radii)))
    if resid > 1e-3:
        raise ValueError("tip expansion not resolved")
    return complex(coef[0]), resid


# ---------------------------------------------------------------------------
# regularized expansions c_j(k), d_j(k)
# ---------------------------------------------------------------------------

@dataclass
class RegularizedExpansion:
    """Coefficients of the regularized resonator solutions at wavenumber ``k``.

    ``v21 ~ (k^2 - k0^2) Nt + c1 Jt`` at tip 1 and ``c2 Jt`` at tip 2;
    ``v22 ~ conj(b2) Nt + d1 Jt`` at tip 1 and ``-conj(b1) Nt + d2 Jt`` at tip 2.
    ``n_components`` holds the extracted ``Nt`` coefficients
    ``(v21 at tip 1, v22 at tip 1, v22 at tip 2)`` as a consistency check.
    """

    k: float
    c1: complex
    c2: complex
    d1: complex
    d2: complex
    n_components: tuple = ()

    def as_dict(self) -> dict:
        out = dict(k=self.k)
        for name in ("c1", "c2", "d1", "d2"):
            v = complex(getattr(self, name))
            out[f"{name}_re"], out[f"{name}_im"] = v.real, v.imag
        return out


def _expansion_level(lev: _Level, k: float, floor: float):
    mesh, cap, cut = lev.mesh, lev.cap, lev.cut
    k2 = k * k
    dk = k2 - lev.k0_sq
    if abs(dk) < floor:
        raise ValueError("k too close to the resonator eigenvalue for the deflated solve")
    K, M = mesh.matrices()
    free = mesh.free
    v0 = lev.v0[free]
    Mv = (M @ lev.v0)[free]
    A = (K - k2 * M)[free][:, free]
    n = len(free)
    bordered = sp.bmat([[A, sp.csc_matrix(Mv[:, None])], [sp.csr_matrix(Mv[None, :]), None]], format="csc")
    lu = spla.splu(bordered)
    F, G, w, bk = [], [], [], []
    for x, s in lev.tips():
        f = tip_load(mesh, x, s, cap, cut, k, "N")[free]
        g = tip_load(mesh, x, s, cap, cut, k, "J")[free]
        proj = float(v0 @ f)
        rhs = np.concatenate([f - proj * Mv, [0.0]])
        w.append(lu.solve(rhs)[:n])
        F.append(f)
        G.append(g)
        bk.append(proj)
    s_nn = self_pairing(cut, cap.mu1, k, "N", "N")
    s_nj = self_pairing(cut, cap.mu1, k, "N", "J")
    b1, b2 = lev.b
    F1, F2 = F
    rho_p = (b2 * bk[0] - b1 * bk[1]) / (lev.k0_sq - k2)
    c1 = dk * (s_nn + F1 @ w[0]) - bk[0] * (F1 @ v0)
    c2 = dk * (F2 @ w[0]) - bk[0] * (F2 @ v0)
    d1 = b2 * (s_nn + F1 @ w[0]) - b1 * (F1 @ w[1]) + rho_p * (F1 @ v0)
    d2 = b2 * (F2 @ w[0]) - b1 * (s_nn + F2 @ w[1]) + rho_p * (F2 @ v0)
    # Nt components through -int u [Delta, Theta](Jt Phi1)
    G1, G2 = G
    pole1, pole2 = -bk[0] / dk, -bk[1] / dk
    v01 = w[0] + pole1 * v0
    v02 = w[1] + pole2 * v0
    n21_1 = -dk * (s_nj + G1 @ v01)
    n22_1 = -(b2 * (s_nj + G1 @ v01) - b1 * (G1 @ v02))
    n22_2 = -(b2 * (G2 @ v01) - b1 * (s_nj + G2 @ v02))
    return np.array([c1, c2, d1, d2]), (n21_1, n22_1, n22_2)


def regularized_expansion(spectrum: ResonatorSpectrum, k: float, floor: float = 1e-8,
                          extrapolate: bool = True) -> RegularizedExpansion:
    """Regularized expansion coefficients at real ``k`` (not at the eigenvalue).

    The resonant part of the tip solutions is removed by deflation: the
    bounded part is written as ``-conj(b_j(k)) v0 / (k^2 - k0^2) + w_j`` with
    ``w_j`` orthogonal to ``v0`` from a bordered system, so the formulas stay
    well conditioned as ``k -> k0``.  Each grid level is evaluated at the
    same detuning ``k^2 - k0^2`` from its own discrete eigenvalue before the
    levels are Richardson-combined; the coefficients are singular-free
    functions of the detuning, and this keeps the exact Green identity
    ``(k^2 - k0^2) d1 = conj(b2) c1 - conj(b1) c2`` of every level intact up
    to the extrapolation order.
    """
    if not spectrum.levels:
        raise ValueError("spectrum carries no discretization levels")
    z = float(k) ** 2 - spectrum.k0_sq
    results = [_expansion_level(lev, float(np.sqrt(lev.k0_sq + z)), floor) for lev in spectrum.levels]
    coef = results[-1][0]
    if extrapolate and len(results) >= 2:
        coef = (4.0 * results[-1][0] - results[-2][0]) / 3.0
    c1, c2, d1, d2 = (complex(v) for v in coef)
    return RegularizedExpansion(float(k), c1, c2, d1, d2, tuple(complex(v) for v in results[-1][1]))


@dataclass
class ExpansionTable:
    """``c_j``, ``d_j`` sampled in ``k^2`` around ``k0^2`` with a polynomial fit."""

    k2: np.ndarray
    values: np.ndarray  # (n, 4): c1, c2, d1, d2
    k0_sq: float
    degree: int = 3

    def __call__(self, k2) -> tuple:
        x = np.real(k2) - self.k0_sq
        out = []
        for col in range(4):
            p = np.polyfit(self.k2 - self.k0_sq, self.values[:, col], min(self.degree, len(self.k2) - 1))
            out.append(complex(np.polyval(p, x)))
        return tuple(out)

    def as_rows(self) -> list:
        rows = []
        for k2, v in zip(self.k2, self.values):
            row = dict(k2=float(k2))
            for name, val in zip(("c1", "c2", "d1", "d2"), v):
                row[f"{name}_re"], row[f"{name}_im"] = val.real, val.imag
            rows.append(row)
        return rows


def expansion_table(spectrum: ResonatorSpectrum, offsets=(-0.04, -0.02, 0.02, 0.04)) -> ExpansionTable:
    """Sample the regularized expansion at ``k0^2 + offsets`` for interpolation near ``k0``."""
    k2 = spectrum.k0_sq + np.asarray(offsets, dtype=float)
    vals = []
    for x in k2:
        e = regularized_expansion(spectrum, float(np.sqrt(x)))
        vals.append([e.c1, e.c2, e.d1, e.d2])
    return ExpansionTable(k2, np.array(vals), spectrum.k0_sq)


# ---------------------------------------------------------------------------
# magnetic voxel operator
# ---------------------------------------------------------------------------

def _link_phases(grid: VoxelGrid, sol: SolenoidSpec | None, gauge: str):
    """Midpoint-rule link phases ``h A(midpoint) . e_a`` for the three axes (node-array shaped)."""
    pts = grid.points()
    h = grid.h
    phases = []
    for a in range(3):
        if sol is None or sol.is_zero:
            phases.append(None)
            continue
        mid = pts.copy()
        mid[..., a] += 0.5 * h
        if gauge == "modified":
            A = gauge_modified_potential(sol, mid)
        elif gauge == "plain":
            A = vector_potential(sol, mid)
        else:
            raise ValueError("gauge must be 'modified' or 'plain'")
        phases.append(h * A[..., a])
    return phases


def magnetic_laplacian(grid: VoxelGrid, sol: SolenoidSpec | None = None, gauge: str = "modified",
                       spin_sign: int = 0, extra_phase=None):
    """Discrete ``(-i grad + A)^2 + spin_sign H`` on the interior nodes of ``grid``.

    Nodes outside the mask are Dirichlet.  Links carry the phase factor
    ``exp(i theta)`` with ``theta = int A . dl`` by the midpoint rule, which
    makes the matrix Hermitian.  ``extra_phase`` optionally adds node values
    ``g`` through ``theta -> theta - (g_q - g_p)`` (a discrete gauge change).

    Returns the sparse matrix and the flat indices of the interior nodes.
    """
    mask = grid.interior
    shape = mask.shape
    h2 = grid.h ** 2
    index = -np.ones(shape, dtype=np.int64)
    index[mask] = np.arange(mask.sum())
    n = int(mask.sum())
    phases = _link_phases(grid, sol, gauge)
    rows, cols, vals = [], [], []
    diag = np.full(n, 6.0 / h2)
    if spin_sign and sol is not None and not sol.is_zero:
        pts = grid.interior_points()
        rho = np.hypot(pts[:, 0] - sol.center[0], pts[:, 1] - sol.center[1])
        diag = diag + spin_sign * sol.field(rho)
    for a in range(3):
        sl_p = [slice(None)] * 3
        sl_q = [slice(None)] * 3
        sl_p[a] = slice(0, shape[a] - 1)
        sl_q[a] = slice(1, shape[a])
        p_idx = index[tuple(sl_p)]
        q_idx = index[tuple(sl_q)]
        both = (p_idx >= 0) & (q_idx >= 0)
        theta = np.zeros(p_idx.shape) if phases[a] is None else phases[a][tuple(sl_p)]
        if extra_phase is not None:
            theta = theta - (extra_phase[tuple(sl_q)] - extra_phase[tuple(sl_p)])
        p, q, t = p_idx[both], q_idx[both], theta[both]
        u = np.exp(1j * t) / h2
        rows += [p, q]
        cols += [q, p]
        vals += [-u, -np.conj(u)]
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag.astype(complex))
    L = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return L, index


@dataclass
class MagneticOperator:
    """Voxel Pauli operator of one spin channel on a resonator grid."""

    grid: VoxelGrid
    solenoid: SolenoidSpec | None
    spin_sign: int = 1
    gauge: str = "modified"

    def matrix(self):
        return magnetic_laplacian(self.grid, self.solenoid, self.gauge, self.spin_sign)

    def field_values(self) -> np.ndarray:
        """Field ``H`` at the interior nodes."""
        if self.solenoid is None:
            return np.zeros(self.grid.count)
        pts = self.grid.interior_points()
        rho = np.hypot(pts[:, 0] - self.solenoid.center[0], pts[:, 1] - self.solenoid.center[1])
        return self.solenoid.field(rho)


@dataclass
class VoxelEigenpair:
    """Eigenpair of a voxel operator (``v0`` on interior nodes with ``h^3 sum |v0|^2 = 1``)."""

    k0_sq: float
    v0: np.ndarray
    gap: float
    residual: float
    spin_sign: int


def _amg_preconditioner(L, h: float):
    """AMG V-cycle of the real part of ``h^2 L`` applied to real and imaginary parts."""
    import pyamg

    A0 = sp.csr_matrix(L.real * (h * h))
    A0.eliminate_zeros()
    cycle = pyamg.smoothed_aggregation_solver(A0).aspreconditioner()
    scale = h * h

    def apply(x):
        x = np.asarray(x)
        if x.ndim == 2:
            return np.column_stack([apply(c) for c in x.T])
        if np.iscomplexobj(x):
            return scale * (cycle(np.ascontiguousarray(x.real)) + 1j * cycle(np.ascontiguousarray(x.imag)))
        return scale * cycle(x)

    return spla.LinearOperator(L.shape, matvec=apply, matmat=apply, dtype=complex)


def lowest_eigenpairs(L, h: float, count: int = 4, tol: float = 1e-9, seed: int = 0):
    """Lowest ``count`` eigenpairs of a Hermitian positive definite voxel matrix.

    Uses LOBPCG with an algebraic multigrid preconditioner; a dense or LU
    shift-invert solve of the 3D matrix does not fit desk memory at the
    needed resolutions.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((L.shape[0], count)) + 0j
    vals, vecs = spla.lobpcg(L, X, M=_amg_preconditioner(L, h), tol=tol, maxiter=500, largest=False)
    order = np.argsort(vals.real)
    return vals.real[order], vecs[:, order]


def resonator_eigenpair(op: MagneticOperator, window=None, count: int = 4) -> VoxelEigenpair:
    """Voxel resonator eigenpair: the unique eigenvalue in ``window``, or the lowest one.

    Raises
    ------
    ValueError
        If ``window`` is given and holds zero or several of the ``count``
        lowest eigenvalues.
    """
    L, _ = op.matrix()
    vals, vecs = lowest_eigenpairs(L, op.grid.h, count)
    i = 0 if window is None else _select(vals, window)
    v = vecs[:, i]
    h3 = op.grid.h ** 3
    v = v / np.sqrt(h3 * np.vdot(v, v).real)
    j = np.argmax(np.abs(v))
    v = v * np.exp(-1j * np.angle(v[j]))
    res = float(np.linalg.norm(L @ v - vals[i] * v) / np.linalg.norm(vals[i] * v))
    gap = float(np.min(np.abs(np.delete(vals, i) - vals[i])))
    return VoxelEigenpair(float(vals[i]), v, gap, res, op.spin_sign)


def zeeman_first_order(op: MagneticOperator, pair: VoxelEigenpair) -> float:
    """First-order spin splitting ``2 int H |v0|^2 dV`` from a field-free eigenfunction."""
    return float(2.0 * op.grid.h ** 3 * np.sum(op.field_values() * np.abs(pair.v0) ** 2))


@dataclass
class SpinLevels:
    """Voxel ground levels of both spin channels and the first-order splitting oracle.

    ``shift_plus`` and ``shift_minus`` are measured from the field-free voxel
    level, so the staircase error of the voxel geometry cancels when they are
    added to an accurate field-free eigenvalue.
    """

    h: float
    k0_sq_free: float
    k0_sq_plus: float
    k0_sq_minus: float
    oracle: float
    residual: float

    @property
    def shift_plus(self) -> float:
        return self.k0_sq_plus - self.k0_sq_free

    @property
    def shift_minus(self) -> float:
        return self.k0_sq_minus - self.k0_sq_free

    @property
    def splitting(self) -> float:
        return self.k0_sq_plus - self.k0_sq_minus

    def as_dict(self) -> dict:
        return dict(h=self.h, k0_sq_free=self.k0_sq_free, k0_sq_plus=self.k0_sq_plus, k0_sq_minus=self.k0_sq_minus,
                    splitting=self.splitting, oracle=self.oracle, residual=self.residual)


def spin_levels(grid: VoxelGrid, sol: SolenoidSpec | None, gauge: str = "modified") -> SpinLevels:
    """Ground levels of the resonator grid for ``H = 0`` and both spin channels."""
    free = resonator_eigenpair(MagneticOperator(grid, None, 0, gauge))
    if sol is None or sol.is_zero:
        return SpinLevels(grid.h, free.k0_sq, free.k0_sq, free.k0_sq, 0.0, free.residual)
    plus = resonator_eigenpair(MagneticOperator(grid, sol, 1, gauge))
    minus = resonator_eigenpair(MagneticOperator(grid, sol, -1, gauge))
    oracle = zeeman_first_order(MagneticOperator(grid, sol, 1, gauge), free)
    return SpinLevels(grid.h, free.k0_sq, plus.k0_sq, minus.k0_sq, oracle,
                      max(free.residual, plus.residual, minus.residual))


def box_grid(a: float, b: float, length: float, h: float) -> VoxelGrid:
    """Rectangular box ``(0, length) x (-a/2, a/2) x (-b/2, b/2)`` (validation geometry).

    Node lines sit on the walls, so the interior nodes form an exact
    ``(length/h - 1) x (a/h - 1) x (b/h - 1)`` lattice when the sides are
    multiples of ``h``.
    """
    nx, ny, nz = (int(round(s / h)) for s in (length, a, b))
    mask = np.zeros((nx + 1, ny + 1, nz + 1), dtype=bool)
    mask[1:-1, 1:-1, 1:-1] = True
    return VoxelGrid((0.0, -0.5 * a, -0.5 * b), h, mask)
