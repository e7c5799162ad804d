"""Direct scattering solves on the full waveguide ``G(eps)`` at finite ``eps``.

Two discretizations share one interface (:class:`ScatteringSystem`):

* ``MeridianSystem``: field-free problems on a disk cross-section, solved with
  axisymmetric P1 elements on a body-fitted meridian mesh.  Both truncation
  planes carry the mode-space radiation closure of :mod:`.channel`.
* ``VoxelSystem``: the magnetic Pauli problem of one spin channel on a voxel
  grid with link phases (the operator of :mod:`.resonator`).  The truncation
  planes carry the exact discrete transparent condition of a uniform
  semi-infinite grid channel.

The incident wave ``exp(i nu1 x) Psi1`` comes from the left.  Amplitudes are
referred to ``x = 0`` at the first tip, so ``s11`` is the reflected and
``s12`` the transmitted amplitude of flux-normalized waves.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import j0

from .channel import add_dense_block, section_modes
from .geometry import WaveguideSpec, gauge_function, voxelize
from .meridian import _shift_spec, waveguide_mesh, waveguide_radius
from .resonator import magnetic_laplacian
from .spectral import ModeBasis


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

@dataclass
class ScatteringResult:
    """Scattering amplitudes of one solve.

    ``s11``, ``s12`` come from the continuum-mode measurement when available
    (meridian solver) and from the discrete section modes otherwise;
    ``flux_residual`` is ``|s11|^2 + |s12|^2 - 1`` of the discrete amplitudes,
    which vanishes to round-off for a conservative discretization.
    ``defect_bound`` is filled by :func:`scattering_convergence`.
    """

    k: float
    eps: float
    spin_sign: int
    s11: complex
    s12: complex
    s11_discrete: complex
    s12_discrete: complex
    flux_residual: float
    grid: dict = field(default_factory=dict)
    defect_bound: float = np.nan

    @property
    def T(self) -> float:
        return abs(self.s12) ** 2

    @property
    def R(self) -> float:
        return abs(self.s11) ** 2

    @property
    def defect(self) -> float:
        """Unitarity defect ``|R + T - 1|``."""
        return abs(self.R + self.T - 1.0)

    def as_dict(self) -> dict:
        return dict(k=self.k, k2=self.k ** 2, eps=self.eps, spin_sign=self.spin_sign, T=self.T, R=self.R,
                    defect=self.defect, defect_bound=self.defect_bound, flux_residual=self.flux_residual,
                    T_discrete=abs(self.s12_discrete) ** 2, **{k: v for k, v in self.grid.items() if np.isscalar(v)})


# ---------------------------------------------------------------------------
# common interface
# ---------------------------------------------------------------------------

class ScatteringSystem:
    """Discrete scattering problem ``S(k^2) u = f``.

    Subclasses provide ``matrix(k2)`` (complex ``k2`` allowed, used by the pole
    search), ``mass``, ``rhs(k)`` and ``amplitudes(u, k)``.
    """

    spec: WaveguideSpec
    spin_sign: int = 0

    def matrix(self, k2):
        raise NotImplementedError

    def rhs(self, k: float) -> np.ndarray:
        raise NotImplementedError

    def amplitudes(self, u: np.ndarray, k: float) -> dict:
        raise NotImplementedError

    def meta(self) -> dict:
        return {}

    def solve(self, k: float) -> ScatteringResult:
        """Solve at real ``k`` and extract the amplitudes."""
        S = self.matrix(k * k)
        u = spla.splu(S.tocsc()).solve(self.rhs(k))
        if not np.all(np.isfinite(u)):
            raise RuntimeError(f"direct solve failed at k^2 = {k * k}")
        amp = self.amplitudes(u, k)
        flux = abs(amp["s11_discrete"]) ** 2 + abs(amp["s12_discrete"]) ** 2 - 1.0
        return ScatteringResult(float(k), float(self.spec.epsilon), self.spin_sign, amp["s11"], amp["s12"],
                                amp["s11_discrete"], amp["s12_discrete"], float(flux), self.meta())

    def closure_part(self, k2):
        """Non-Hermitian part ``S(k^2) - (H - k^2 M)`` carried by the truncation planes."""
        raise NotImplementedError

    def pole(self, k2_start: complex, tol: float = 1e-14, maxiter: int = 40) -> complex:
        """Complex resonance ``k_p^2`` near ``k2_start`` by nonlinear Rayleigh-quotient iteration.

        Each step solves ``S(sigma) x = M u`` and updates ``sigma`` with the
        (unconjugated) Rayleigh quotient of the complex-symmetric pencil.  The
        imaginary part, often many orders below the real part, is evaluated
        from the closure alone, ``Im(u^* C u) / (u^* M u)``, since the
        Hermitian part contributes nothing to it.
        """
        sigma = complex(k2_start)
        M = self.mass
        u = None
        for _ in range(maxiter):
            S = self.matrix(sigma).tocsc()
            lu = spla.splu(S)
            if u is None:
                u = lu.solve(np.ones(S.shape[0], dtype=complex))
                u /= np.linalg.norm(u)
            for _ in range(2):
                u = lu.solve(M @ u)
                u /= np.linalg.norm(u)
            step = (u @ (S @ u)) / (u @ (M @ u))
            sigma_new = sigma + step
            done = abs(step.real) <= tol * abs(sigma_new.real)
            sigma = complex(sigma_new.real, self._imag_part(sigma_new, u))
            if done:
                return sigma
        raise RuntimeError("resonance pole iteration did not converge")

    def _imag_part(self, k2, u):
        C = self.closure_part(k2)
        uc = np.conj(u)
        return float((uc @ (C @ u)).imag / (uc @ (self.mass @ u)).real)


def _continuum_disk_mode(lam1: float, radius: float):
    from scipy.integrate import quad
    norm2 = quad(lambda s: 2.0 * np.pi * s * j0(lam1 * s) ** 2, 0.0, radius, epsabs=1e-14, epsrel=1e-13)[0]
    return lambda rho: j0(lam1 * np.asarray(rho)) / np.sqrt(norm2)


def _two_wave_fit(x, c, nu):
    """Least-squares ``c(x) = p exp(i nu x) + q exp(-i nu x)``."""
    X = np.column_stack([np.exp(1j * nu * x), np.exp(-1j * nu * x)])
    (p, q), *_ = np.linalg.lstsq(X, c, rcond=None)
    return complex(p), complex(q)


# ---------------------------------------------------------------------------
# meridian (axisymmetric, field free)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DirectGrid:
    """Resolution of the direct solvers.

    ``n_radial`` sets the meridian mesh (radial elements per unit radius),
    ``h`` the voxel spacing.  ``probe_span`` is the axial extent next to each
    truncation plane used for the continuum amplitude fit.
    """

    n_radial: int = 16
    h_min_ratio: float = 0.01
    n_evanescent: int | None = 8
    probe_span: float = 2.0
    h: float = 0.1
    min_waist_voxels: float = 3.0

    def refined(self, factor: int = 2) -> "DirectGrid":
        return replace(self, n_radial=self.n_radial * factor, h=self.h / factor)


class MeridianSystem(ScatteringSystem):
    """Field-free axisymmetric scattering problem on a disk cross-section."""

    def __init__(self, spec: WaveguideSpec, grid: DirectGrid = DirectGrid(), modes: ModeBasis | None = None,
                 validation: str | None = None):
        if spec.cross_section.shape != "disk":
            raise ValueError("meridian solver needs a disk cross-section")
        if spec.field_on:
            raise ValueError("meridian solver is field free; use the voxel solver for H != 0")
        self.spec = _shift_spec(spec)
        self.grid = grid
        r_cyl = spec.cross_section.radius
        self.mesh = waveguide_mesh(self.spec, grid.n_radial, h_min=grid.h_min_ratio * r_cyl / grid.n_radial)
        self.validation = validation
        if validation is not None:
            self.mesh = _validation_mesh(self.mesh, self.spec, grid.n_radial, validation)
        K, M = self.mesh.matrices()
        self.free = self.mesh.free
        self.pos = -np.ones(self.mesh.n, dtype=np.int64)
        self.pos[self.free] = np.arange(len(self.free))
        self.K = K[self.free][:, self.free].tocsc()
        self.mass = M[self.free][:, self.free].tocsc()
        self.ends = {name: section_modes(self.mesh, name) for name in ("left", "right")}
        self.lam1 = np.sqrt(modes.lam1_sq) if modes is not None else 2.404825557695773 / r_cyl
        self._mode = _continuum_disk_mode(self.lam1, r_cyl)
        self._columns = self._probe_columns()

    def _probe_columns(self):
        xs = self.mesh.tags["x_nodes"]
        x_lo, x_hi = xs[0], xs[-1]
        span = self.grid.probe_span
        nodes = self.mesh.nodes
        cols = {"left": [], "right": []}
        for x in xs:
            side = "left" if x <= x_lo + span else "right" if x >= x_hi - span else None
            if side is None:
                continue
            idx = np.nonzero(np.abs(nodes[:, 0] - x) < 1e-12)[0]
            idx = idx[np.argsort(nodes[idx, 1])]
            self.mesh.sections["_probe"] = idx
            _, Mb, _ = self.mesh.section_matrices("_probe")
            w = Mb @ self._mode(nodes[idx, 1])
            cols[side].append((x, idx, w))
        self.mesh.sections.pop("_probe", None)
        return cols

    def _closure(self, name, k2):
        idx, Mb, lam2, psi = self.ends[name]
        T = np.empty(len(lam2), dtype=complex)
        T[0] = 1j * np.sqrt(complex(k2 - lam2[0]))
        T[1:] = -np.sqrt((lam2[1:] - k2).astype(complex))
        n_e = self.grid.n_evanescent
        if n_e is not None:
            T[1 + n_e:] = -np.sqrt(lam2[1 + n_e:])
        mv = Mb @ psi
        return idx, (mv * T) @ mv.T

    def closure_part(self, k2):
        C = sp.csc_matrix(self.K.shape, dtype=complex)
        for name in ("left", "right"):
            idx, block = self._closure(name, k2)
            C = add_dense_block(C, self.pos[idx], -block)
        return C

    def matrix(self, k2):
        return (self.K - k2 * self.mass + self.closure_part(k2)).tocsc()

    def _kappa(self, name, k):
        return np.sqrt(k * k - self.ends[name][2][0])

    def rhs(self, k):
        idx, Mb, lam2, psi = self.ends["left"]
        kappa = self._kappa("left", k)
        x_left = self.mesh.nodes[idx[0], 0]
        g = np.exp(1j * kappa * x_left)
        f = np.zeros(len(self.free), dtype=complex)
        f[self.pos[idx]] = -2j * kappa * g * (Mb @ psi[:, 0])
        return f

    def full_field(self, u):
        out = np.zeros(self.mesh.n, dtype=complex)
        out[self.free] = u
        return out

    def amplitudes(self, u, k):
        v = self.full_field(u)
        out = {}
        # discrete section-mode amplitudes
        idx, Mb, lam2, psi = self.ends["left"]
        kap = self._kappa("left", k)
        xl = self.mesh.nodes[idx[0], 0]
        cl = psi[:, 0] @ (Mb @ v[idx])
        out["s11_discrete"] = complex((cl - np.exp(1j * kap * xl)) * np.exp(1j * kap * xl))
        idx, Mb, lam2, psi = self.ends["right"]
        kap_r = self._kappa("right", k)
        xr = self.mesh.nodes[idx[0], 0]
        cr = psi[:, 0] @ (Mb @ v[idx])
        out["s12_discrete"] = complex(cr * np.exp(-1j * kap_r * xr) * np.sqrt(kap_r / kap))
        # continuum-mode amplitudes on probe columns
        nu = np.sqrt(k * k - self.lam1 ** 2)
        fits = {}
        for side, cols in self._columns.items():
            x = np.array([c[0] for c in cols])
            c = np.array([w @ v[i] for _, i, w in cols])
            fits[side] = _two_wave_fit(x, c, nu)
        p_l, q_l = fits["left"]
        p_r, q_r = fits["right"]
        out["s11"] = q_l / p_l
        out["s12"] = p_r / p_l
        out["backflow_right"] = abs(q_r / p_l)
        return out

    def meta(self):
        return dict(solver="meridian", n_radial=self.grid.n_radial, nodes=self.mesh.n,
                    validation=self.validation or "none")


def _validation_mesh(mesh, spec, n_radial, mode):
    """Same axial nodes with the narrows removed (``"cylinder"``) or closed (``"blocked"``)."""
    from .meridian import profile_mesh
    r_cyl = spec.cross_section.radius
    tips = np.array(spec.tip_positions)
    if mode == "cylinder":
        def radius(x):
            return np.full_like(x, r_cyl)
    elif mode == "blocked":
        base = waveguide_radius(spec)

        def radius(x):
            r = np.asarray(base(x), dtype=float).copy()
            r[np.min(np.abs(x[:, None] - tips[None, :]), axis=1) < 1e-12] = 0.0
            return r
    else:
        raise ValueError("validation mode must be 'cylinder' or 'blocked'")
    return profile_mesh(mesh.tags["x_nodes"], radius, n_radial, mirror_x=0.5 * spec.d)


# ---------------------------------------------------------------------------
# voxel (magnetic)
# ---------------------------------------------------------------------------

def _section_laplacian(mask2d: np.ndarray, h: float):
    """Dense 5-point Dirichlet Laplacian on a 2D mask (row-major order of ``mask2d``)."""
    idx = -np.ones(mask2d.shape, dtype=np.int64)
    idx[mask2d] = np.arange(mask2d.sum())
    n = int(mask2d.sum())
    A = np.diag(np.full(n, 4.0 / h ** 2))
    for ax in range(2):
        sl_p = [slice(None)] * 2
        sl_q = [slice(None)] * 2
        sl_p[ax] = slice(0, mask2d.shape[ax] - 1)
        sl_q[ax] = slice(1, mask2d.shape[ax])
        p, q = idx[tuple(sl_p)], idx[tuple(sl_q)]
        both = (p >= 0) & (q >= 0)
        A[p[both], q[both]] = -1.0 / h ** 2
        A[q[both], p[both]] = -1.0 / h ** 2
    return A


class VoxelSystem(ScatteringSystem):
    """Magnetic scattering problem of one spin channel on a voxel grid.

    ``gauge="modified"`` uses ``A'`` (zero near the truncation planes);
    ``gauge="plain"`` uses the solenoid potential ``A`` itself, with the
    radiation closure and the injected wave carried over by the gauge phase
    ``g = tau c psi`` on the end planes.
    """

    def __init__(self, spec: WaveguideSpec, grid: DirectGrid = DirectGrid(), spin_sign: int | None = None,
                 gauge: str = "modified", validation: str | None = None):
        self.spec = _shift_spec(spec)
        self.grid = grid
        h = grid.h
        sol = self.spec.solenoid
        if spin_sign is None:
            spin_sign = sol.spin_sign if sol is not None else 0
        self.spin_sign = spin_sign
        self.gauge = gauge
        lo, hi = self.spec.x_range()
        self.vox = voxelize(self.spec, h, "G", x_range=(lo, hi), min_waist_voxels=grid.min_waist_voxels)
        self.validation = validation
        if validation is not None:
            self.vox = _validation_grid(self.vox, self.spec, validation)
        L, index = magnetic_laplacian(self.vox, sol, gauge, spin_sign if self.spec.field_on else 0)
        self.L = L.tocsc()
        self.index = index
        n = L.shape[0]
        self.mass = sp.identity(n, format="csc", dtype=complex)
        pts = self.vox.points()
        xs = self.vox.axes()[0]
        self.ends = {}
        for name, i_plane, ghost_dx in (("left", 0, -h), ("right", len(xs) - 1, h)):
            mask2d = self.vox.interior[i_plane]
            if not mask2d.any():
                raise ValueError("truncation plane outside the waveguide")
            nodes = index[i_plane][mask2d]
            A2 = _section_laplacian(mask2d, h)
            mu, psi = sla.eigh(A2)
            if psi[:, 0].sum() < 0:
                psi[:, 0] *= -1.0
            plane_pts = pts[i_plane][mask2d]
            # gauge factors: phase of the ghost link and gauge function on plane and ghost plane
            link = np.ones(len(nodes), dtype=complex)
            g_plane = np.zeros(len(nodes))
            g_ghost = np.zeros(len(nodes))
            if gauge == "plain" and sol is not None and not sol.is_zero:
                from .geometry import vector_potential
                mid = plane_pts.copy()
                mid[:, 0] += 0.5 * ghost_dx
                ax = vector_potential(sol, mid)[:, 0]
                link = np.exp(1j * ax * ghost_dx)
                ghost = plane_pts.copy()
                ghost[:, 0] += ghost_dx
                g_plane = gauge_function(sol, plane_pts)
                g_ghost = gauge_function(sol, ghost)
            self.ends[name] = dict(nodes=nodes, mu=mu, psi=psi, x=float(xs[i_plane]), link=link,
                                   g_plane=g_plane, g_ghost=g_ghost)

    def _zeta(self, mu, k2):
        h = self.grid.h
        t = 1.0 + 0.5 * h * h * (mu - k2)
        t = t.astype(complex)
        z = t - np.sqrt(t - 1.0) * np.sqrt(t + 1.0)
        prop = np.real(t) < 1.0
        z[prop] = t[prop] + 1j * np.sqrt(1.0 - t[prop] ** 2)
        return z

    def _check_window(self, k2):
        for e in self.ends.values():
            t = 1.0 + 0.5 * self.grid.h ** 2 * (e["mu"] - np.real(k2))
            if (t < 1.0).sum() != 1:
                raise ValueError("outside single-channel window")

    def matrix(self, k2):
        return (self.L - k2 * self.mass + self.closure_part(k2)).tocsc()

    def closure_part(self, k2):
        h2 = self.grid.h ** 2
        S = sp.csc_matrix(self.L.shape, dtype=complex)
        for e in self.ends.values():
            z = self._zeta(e["mu"], k2)
            B = (e["psi"] * z) @ e["psi"].T
            left = e["link"] * np.exp(-1j * e["g_ghost"])
            right = np.exp(1j * e["g_plane"])
            block = -(left[:, None] * B * right[None, :]) / h2
            S = add_dense_block(S, e["nodes"], block)
        return S

    def _kappa_h(self, e, k):
        """Discrete propagation number ``kappa`` with ``cos(kappa h) = 1 + h^2 (mu1 - k^2) / 2``."""
        h = self.grid.h
        return float(np.arccos(1.0 + 0.5 * h * h * (e["mu"][0] - k * k)) / h)

    def rhs(self, k):
        self._check_window(k * k)
        e = self.ends["left"]
        h = self.grid.h
        kap = self._kappa_h(e, k)
        a0 = np.exp(1j * kap * e["x"])
        f = np.zeros(self.L.shape[0], dtype=complex)
        vals = (e["link"] * np.exp(-1j * e["g_ghost"])) * a0 * (np.exp(-1j * kap * h) - np.exp(1j * kap * h)) \
            * e["psi"][:, 0] / (h * h)
        f[e["nodes"]] = vals
        return f

    def amplitudes(self, u, k):
        e = self.ends["left"]
        kap = self._kappa_h(e, k)
        # discrete flux of exp(i kappa j h) is proportional to sin(kappa h); equal at both ends
        cl = e["psi"][:, 0] @ (np.exp(1j * e["g_plane"]) * u[e["nodes"]])
        s11 = (cl - np.exp(1j * kap * e["x"])) * np.exp(1j * kap * e["x"])
        e = self.ends["right"]
        cr = e["psi"][:, 0] @ (np.exp(1j * e["g_plane"]) * u[e["nodes"]])
        s12 = cr * np.exp(-1j * kap * e["x"])
        return dict(s11=complex(s11), s12=complex(s12), s11_discrete=complex(s11), s12_discrete=complex(s12))

    def to_modified_frame(self, u):
        """Field in the ``A'`` frame: ``exp(i g) u`` for the plain gauge, unchanged otherwise."""
        if self.gauge != "plain" or not self.spec.field_on:
            return u
        g = gauge_function(self.spec.solenoid, self.vox.interior_points())
        return np.exp(1j * g) * u

    def meta(self):
        return dict(solver="voxel", h=self.grid.h, nodes=int(self.L.shape[0]), gauge=self.gauge,
                    validation=self.validation or "none")


def _validation_grid(vox, spec, mode):
    pts = vox.points()
    if mode == "cylinder":
        mask = spec.cross_section.contains(pts[..., 1], pts[..., 2])
    elif mode == "blocked":
        mask = vox.interior.copy()
        xs = vox.axes()[0]
        for tip in spec.tip_positions:
            mask[np.argmin(np.abs(xs - tip))] = False
    else:
        raise ValueError("validation mode must be 'cylinder' or 'blocked'")
    return type(vox)(vox.origin, vox.h, mask)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def make_system(spec: WaveguideSpec, grid: DirectGrid = DirectGrid(), spin: str | int | None = None,
                solver: str = "auto", gauge: str = "modified", modes: ModeBasis | None = None,
                validation: str | None = None) -> ScatteringSystem:
    """Meridian system for field-free disk geometries, voxel system otherwise (``solver="auto"``)."""
    sign = {"plus": 1, "minus": -1, None: None}.get(spin, spin)
    if solver == "auto":
        solver = "meridian" if (spec.cross_section.shape == "disk" and not spec.field_on) else "voxel"
    if solver == "meridian":
        return MeridianSystem(spec, grid, modes, validation)
    if solver == "voxel":
        return VoxelSystem(spec, grid, sign, gauge, validation)
    raise ValueError("solver must be 'auto', 'meridian' or 'voxel'")


def scattering_solve(spec: WaveguideSpec, grid: DirectGrid, k: float, spin: str | int | None = None,
                     solver: str = "auto", modes: ModeBasis | None = None, gap: float = 1e-3,
                     validation: str | None = None) -> ScatteringResult:
    """Scattering amplitudes of ``G(eps)`` at real ``k``.

    Raises
    ------
    ValueError
        If ``k^2`` lies within ``gap`` of a threshold or outside the
        single-channel window.
    """
    if modes is not None:
        k2 = k * k
        if not (modes.lam1_sq + gap < k2 < modes.lam2_sq - gap):
            raise ValueError("k^2 too close to a threshold or outside the single-channel window")
    return make_system(spec, grid, spin, solver, modes=modes, validation=validation).solve(k)


def scattering_convergence(spec: WaveguideSpec, grid: DirectGrid, k: float, levels: int = 3,
                           solver: str = "auto", spin=None, modes: ModeBasis | None = None,
                           validation: str | None = None) -> list:
    """Solves on ``levels`` successively halved grids.

    Each result's ``defect_bound`` is the second-order Richardson estimate of
    its discretization error, ``(4/3) (|R_h - R_{h/2}| + |T_h - T_{h/2}|)``,
    from its next finer level (the last level reuses the previous bound / 4).
    The plain level difference measures the distance to the next level rather
    than to the limit and underestimates the error of level ``h``.
    """
    results = []
    g = grid
    for _ in range(levels):
        results.append(scattering_solve(spec, g, k, spin, solver, modes, validation=validation))
        g = g.refined()
    for i in range(len(results) - 1):
        a, b = results[i], results[i + 1]
        results[i].defect_bound = 4.0 / 3.0 * (abs(a.R - b.R) + abs(a.T - b.T))
    if len(results) > 1:
        results[-1].defect_bound = results[-2].defect_bound / 4.0
    return results


def observed_order(values) -> float:
    """Observed convergence order ``log2(e_h / e_{h/2})`` from the last two of a sequence of errors."""
    v = np.abs(np.asarray(values, dtype=float))
    return float(np.log2(v[-2] / v[-1]))


def gauge_check(spec: WaveguideSpec, grid: DirectGrid, k: float, spin=None, validation: str | None = None) -> dict:
    """Transmission with the solenoid potential ``A`` and with the modified ``A'``.

    Returns ``|T_A - T_A'|``, the relative field deviation
    ``||u_A' - exp(i g) u_A|| / ||u_A'||`` and both results.
    """
    sys_m = VoxelSystem(spec, grid, spin_sign=_sign(spin, spec), gauge="modified", validation=validation)
    sys_p = VoxelSystem(spec, grid, spin_sign=_sign(spin, spec), gauge="plain", validation=validation)
    k2 = k * k
    u_m = spla.splu(sys_m.matrix(k2).tocsc()).solve(sys_m.rhs(k))
    u_p = spla.splu(sys_p.matrix(k2).tocsc()).solve(sys_p.rhs(k))
    res_m = _result(sys_m, u_m, k)
    res_p = _result(sys_p, u_p, k)
    w = sys_p.to_modified_frame(u_p)
    field_dev = float(np.linalg.norm(u_m - w) / np.linalg.norm(u_m))
    return dict(dT=abs(res_m.T - res_p.T), field_deviation=field_dev, modified=res_m, plain=res_p,
                h=grid.h, nodes=sys_m.L.shape[0])


def _sign(spin, spec):
    if spin is None:
        return spec.solenoid.spin_sign if spec.solenoid is not None else 0
    return {"plus": 1, "minus": -1}.get(spin, spin)


def _result(system, u, k):
    amp = system.amplitudes(u, k)
    flux = abs(amp["s11_discrete"]) ** 2 + abs(amp["s12_discrete"]) ** 2 - 1.0
    return ScatteringResult(float(k), float(system.spec.epsilon), system.spin_sign, amp["s11"], amp["s12"],
                            amp["s11_discrete"], amp["s12_discrete"], float(flux), system.meta())


# ---------------------------------------------------------------------------
# resonance scans
# ---------------------------------------------------------------------------

@dataclass
class LorentzFit:
    """``T = height / (1 + ((k^2 - center) / (width / 2))^2)``; ``residual`` is the normalized RMS."""

    center: float
    width: float
    height: float
    residual: float


@dataclass
class ResonanceScan:
    """Sampled transmission around a resonance and its Lorentzian fit."""

    k2: np.ndarray
    offset: np.ndarray
    T: np.ndarray
    fit: LorentzFit
    pole: complex
    eps: float
    spin_sign: int = 0
    deltas: dict = field(default_factory=dict)
    defects: np.ndarray | None = None

    def as_rows(self) -> list:
        return [dict(k2=float(k), offset=float(o), T=float(t)) for k, o, t in zip(self.k2, self.offset, self.T)]


def fit_lorentzian(offset, T, guess_width: float) -> tuple:
    """Least-squares Lorentzian in the offset variable; returns ``(center, width, height, residual)``."""
    offset = np.asarray(offset, dtype=float)
    T = np.asarray(T, dtype=float)
    s = guess_width

    def model(p, x):
        c, w, hgt = p
        return hgt / (1.0 + ((x - c) / (0.5 * w)) ** 2)

    i = int(np.argmax(T))
    p0 = np.array([offset[i] / s, 1.0, T[i]])
    fit = sopt.least_squares(lambda p: model(p, offset / s) - T, p0, method="lm", xtol=1e-14, ftol=1e-14)
    c, w, hgt = fit.x
    resid = float(np.sqrt(np.mean(fit.fun ** 2)) / abs(hgt))
    return c * s, abs(w) * s, hgt, resid


def resonance_scan(spec: WaveguideSpec, grid: DirectGrid, window: tuple, n_points: int = 41,
                   half_widths: float = 1.0, spin=None, solver: str = "auto", modes: ModeBasis | None = None,
                   asymptotic=None, system: ScatteringSystem | None = None) -> ResonanceScan:
    """Locate the resonance in ``window`` and fit its transmission peak.

    The complex pole ``k_p^2 = k_r^2 - i k_i^2`` of the discrete problem is
    found first, starting from the window midpoint (widths can be far below
    any practical scan step, and the discrete peak can sit many widths away
    from the asymptotic prediction).  The transmission is then sampled on
    ``k_r^2 +- half_widths * 2 k_i^2``, the Lorentzian is fitted, and the scan
    is repeated once around the fitted center (adaptive refinement).

    ``asymptotic`` (an object with ``k_r_sq``, ``width`` and ``T_max``, such
    as :class:`~tunnelguide.asymptotics.PeakCharacteristics`) fills the
    comparison deltas.

    Raises
    ------
    RuntimeError
        If the pole leaves ``window`` or no peak is found inside the scanned
        interval; the message carries the scan trace.
    """
    system = make_system(spec, grid, spin, solver, modes=modes) if system is None else system
    lo, hi = window
    kp = system.pole(complex(0.5 * (lo + hi), 0.0))
    if not lo <= kp.real <= hi:
        raise RuntimeError(f"no resonance in window {window}: pole iteration ended at {kp}")
    k_r2, width0 = kp.real, -2.0 * kp.imag
    if not width0 > 0:
        raise RuntimeError(f"pole not in the lower half-plane: {kp}")
    center = 0.0
    for _ in range(2):
        offset = center + width0 * half_widths * np.linspace(-1.0, 1.0, n_points)
        T, defects = [], []
        for o in offset:
            res = system.solve(float(np.sqrt(k_r2 + o)))
            T.append(res.T)
            defects.append(res.defect)
        T = np.array(T)
        c, w, hgt, resid = fit_lorentzian(offset, T, width0)
        if not (offset[0] < c < offset[-1]):
            raise RuntimeError(f"no peak inside the scanned interval; trace T = {T.tolist()}")
        center = c
    fit = LorentzFit(float(k_r2 + c), float(w), float(hgt), float(resid))
    deltas = {}
    if asymptotic is not None:
        deltas = dict(center=abs(fit.center - asymptotic.k_r_sq), width=abs(fit.width - asymptotic.width),
                      height=abs(fit.height - asymptotic.T_max))
    return ResonanceScan(k_r2 + offset, offset - c, T, fit, complex(kp), float(spec.epsilon), system.spin_sign,
                         deltas, np.array(defects))


@dataclass
class DirectPole:
    """Resonance pole on successively refined grids and its Richardson value (second order)."""

    eps: float
    levels: list
    k_r_sq: float
    width: float
    k_r_sq_error: float
    width_error: float

    def as_dict(self) -> dict:
        return dict(eps=self.eps, k_r_sq=self.k_r_sq, width=self.width, k_r_sq_error=self.k_r_sq_error,
                    width_error=self.width_error, levels=[[p.real, -2.0 * p.imag] for p in self.levels])


def direct_pole(spec: WaveguideSpec, grid: DirectGrid, k2_guess: float, levels: int = 3, spin=None,
                solver: str = "auto") -> DirectPole:
    """Resonance pole on ``levels`` halved grids, extrapolated with ``(4 p_{h/2} - p_h) / 3``.

    The error estimates are the change between the last two extrapolants
    (or between the last two levels when only two are available).
    """
    g = grid
    poles = []
    guess = k2_guess
    for _ in range(levels):
        p = make_system(spec, g, spin, solver).pole(complex(guess))
        poles.append(p)
        guess = p.real
        g = g.refined()
    rich = [(4.0 * b - a) / 3.0 for a, b in zip(poles[:-1], poles[1:])]
    best = rich[-1] if rich else poles[-1]
    ref = rich[-2] if len(rich) > 1 else poles[-1]
    return DirectPole(float(spec.epsilon), poles, float(best.real), float(-2.0 * best.imag),
                      float(abs(best.real - ref.real)), float(2.0 * abs(best.imag - ref.imag)))
