"""Axisymmetric P1 finite elements on body-fitted meridian meshes.

For a disk cross-section with coaxial cones, every field-free problem of the
package is axisymmetric.  Its axisymmetric sector reduces to the meridian
half-plane ``(x, rho)``, ``rho >= 0``, with volume element ``2 pi rho dx drho``.
The meshes here are mapped structured grids whose nodes follow the conical
walls, the necks and the truncation sections exactly, with geometric grading
toward tips and waists.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import triangle
from scipy.optimize import brentq

TWO_PI = 2.0 * np.pi

# degree-5 seven-point rule on the reference triangle (barycentric, weights sum to 1)
_A1, _B1, _W1 = 0.059715871789770, 0.470142064105115, 0.132394152788506
_A2, _B2, _W2 = 0.797426985353087, 0.101286507323456, 0.125939180544827
QUAD_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
QUAD_W = np.array([0.225, _W1, _W1, _W1, _W2, _W2, _W2])


@dataclass
class MeridianMesh:
    """Triangulated meridian domain.

    Attributes
    ----------
    nodes : (n, 2) array
        Node coordinates ``(x, rho)``.
    triangles : (m, 3) int array
    dirichlet : (n,) bool array
        Nodes on Dirichlet walls.
    sections : dict
        Named boundary polylines (ordered node index arrays), e.g. truncation
        planes or spheres where closures act.
    tags : dict
        Additional named node sets.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    dirichlet: np.ndarray
    sections: dict = field(default_factory=dict)
    tags: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def free(self) -> np.ndarray:
        return np.nonzero(~self.dirichlet)[0]

    def geometry(self):
        """Areas, barycentric gradients and vertex coordinates per triangle."""
        if "geom" not in self._cache:
            p = self.nodes[self.triangles]
            x, y = p[..., 0], p[..., 1]
            det = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
            b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / det[:, None]
            c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / det[:, None]
            self._cache["geom"] = (0.5 * np.abs(det), b, c, p)
        return self._cache["geom"]

    def matrices(self):
        """Stiffness ``int grad u . grad v dV`` and mass ``int u v dV`` (``dV = 2 pi rho``)."""
        if "KM" not in self._cache:
            area, b, c, p = self.geometry()
            rho = p[..., 1]
            rbar = rho.mean(axis=1)
            kloc = TWO_PI * (rbar * area)[:, None, None] * (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :])
            # exact mass with linear rho: int l_i l_j l_k = 2A a! b! c! / (a+b+c+2)!
            s = rho.sum(axis=1)
            mloc = (s[:, None, None] + rho[:, :, None] + rho[:, None, :]) / 60.0
            eye = np.eye(3, dtype=bool)
            mloc = mloc + np.where(eye, (s[:, None, None] + 2.0 * rho[:, :, None]) / 60.0, 0.0)
            mloc *= TWO_PI * area[:, None, None]
            rows = np.repeat(self.triangles, 3, axis=1).ravel()
            cols = np.tile(self.triangles, (1, 3)).ravel()
            K = sp.csr_matrix((kloc.ravel(), (rows, cols)), shape=(self.n, self.n))
            M = sp.csr_matrix((mloc.ravel(), (rows, cols)), shape=(self.n, self.n))
            self._cache["KM"] = (K, M)
        return self._cache["KM"]

    def section_matrices(self, name: str):
        """Surface mass and surface stiffness on a section polyline.

        Both carry the weight ``2 pi rho ds`` where ``s`` is meridian arc
        length; the stiffness uses the tangential derivative.
        """
        idx = self.sections[name]
        p = self.nodes[idx]
        seg = np.diff(p, axis=0)
        L = np.hypot(seg[:, 0], seg[:, 1])
        ra, rb = p[:-1, 1], p[1:, 1]
        m = len(idx)
        Mb = np.zeros((m, m))
        Kb = np.zeros((m, m))
        i = np.arange(m - 1)
        Mb[i, i] += TWO_PI * L * (3 * ra + rb) / 12.0
        Mb[i + 1, i + 1] += TWO_PI * L * (ra + 3 * rb) / 12.0
        off = TWO_PI * L * (ra + rb) / 12.0
        Mb[i, i + 1] += off
        Mb[i + 1, i] += off
        kk = TWO_PI * 0.5 * (ra + rb) / L
        Kb[i, i] += kk
        Kb[i + 1, i + 1] += kk
        Kb[i, i + 1] -= kk
        Kb[i + 1, i] -= kk
        return idx, Mb, Kb

    def quadrature(self, tri_mask=None):
        """Physical quadrature points, weights (including ``2 pi rho``) and shape values."""
        area, _, _, p = self.geometry()
        tris = np.arange(len(self.triangles)) if tri_mask is None else np.nonzero(tri_mask)[0]
        pts = np.einsum("qk,tkd->tqd", QUAD_BARY, p[tris])
        w = area[tris, None] * QUAD_W[None, :] * TWO_PI * pts[..., 1]
        return tris, pts, w

    def load_vector(self, func, tri_mask=None) -> np.ndarray:
        """``F_i = int func * phi_i dV`` by the degree-5 rule."""
        tris, pts, w = self.quadrature(tri_mask)
        vals = func(pts[..., 0], pts[..., 1])
        contrib = np.einsum("tq,tq,qk->tk", w, vals, QUAD_BARY)
        out = np.zeros(self.n, dtype=np.result_type(vals, float))
        np.add.at(out, self.triangles[tris].ravel(), contrib.ravel())
        return out

    def integrate(self, func, tri_mask=None) -> float:
        _, pts, w = self.quadrature(tri_mask)
        return np.sum(w * func(pts[..., 0], pts[..., 1]))

    def line_load(self, idx, func, order: int = 4) -> np.ndarray:
        """``F_i = int func * phi_i dA`` along the polyline through nodes ``idx`` (``dA = 2 pi rho ds``)."""
        s, w = np.polynomial.legendre.leggauss(order)
        s, w = 0.5 * (s + 1.0), 0.5 * w
        p = self.nodes[idx]
        a, b = p[:-1], p[1:]
        L = np.hypot(*(b - a).T)
        pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
        vals = func(pts[..., 0], pts[..., 1]) * TWO_PI * pts[..., 1] * (L[:, None] * w[None, :])
        out = np.zeros(self.n, dtype=np.result_type(vals, float))
        np.add.at(out, idx[:-1], np.sum(vals * (1.0 - s), axis=1))
        np.add.at(out, idx[1:], np.sum(vals * s, axis=1))
        return out

    def triangles_near(self, center, r_lo: float, r_hi: float) -> np.ndarray:
        """Mask of triangles meeting the spherical shell ``r_lo <= |p - center| <= r_hi``."""
        p = self.nodes[self.triangles]
        r = np.hypot(p[..., 0] - center[0], p[..., 1] - center[1])
        return (r.max(axis=1) >= r_lo) & (r.min(axis=1) <= r_hi)

    def interpolator(self, values):
        """Piecewise-linear interpolant of nodal values (real or complex)."""
        import matplotlib.tri as mtri
        tri = self._cache.get("mtri")
        if tri is None:
            tri = mtri.Triangulation(self.nodes[:, 0], self.nodes[:, 1], self.triangles)
            self._cache["mtri"] = tri
        values = np.asarray(values)
        re = mtri.LinearTriInterpolator(tri, values.real)
        if np.iscomplexobj(values):
            im = mtri.LinearTriInterpolator(tri, values.imag)
            return lambda x, y: np.ma.filled(re(x, y), np.nan) + 1j * np.ma.filled(im(x, y), np.nan)
        return lambda x, y: np.ma.filled(re(x, y), np.nan)

    def volume(self) -> float:
        return float(self.integrate(lambda x, r: np.ones_like(x)))

    def h_max(self) -> float:
        p = self.nodes[self.triangles]
        e = np.concatenate([np.hypot(*(p[:, i] - p[:, j]).T) for i, j in ((0, 1), (1, 2), (2, 0))])
        return float(e.max())


# ---------------------------------------------------------------------------
# node placement
# ---------------------------------------------------------------------------

def graded_points(a: float, b: float, size, n_sample: int = 4001) -> np.ndarray:
    """Points from ``a`` to ``b`` whose local spacing follows ``size(x)``.

    The cumulative density ``int dx / size`` is equidistributed, which gives a
    smooth graded sequence that hits both ends exactly.
    """
    if b <= a:
        raise ValueError("graded_points needs a < b")
    xs = np.linspace(a, b, n_sample)
    dens = 1.0 / np.asarray(size(xs), dtype=float)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(xs))])
    n = max(1, int(np.ceil(cum[-1] - 1e-9)))
    out = np.interp(np.linspace(0.0, cum[-1], n + 1), cum, xs)
    out[0], out[-1] = a, b
    return out


def axis_nodes(breaks, size) -> np.ndarray:
    """Graded points over consecutive breakpoints (all breakpoints are nodes)."""
    breaks = np.unique(np.asarray(breaks, dtype=float))
    parts = [graded_points(a, b, size) for a, b in zip(breaks[:-1], breaks[1:])]
    return np.concatenate([parts[0]] + [p[1:] for p in parts[1:]])


# ---------------------------------------------------------------------------
# profile domains {x in [a, b], 0 <= rho < R(x)}
# ---------------------------------------------------------------------------

def profile_mesh(x_nodes: np.ndarray, radius, n_radial: int, mirror_x: float | None = None,
                 tol: float = 1e-12) -> MeridianMesh:
    """Mapped mesh of ``{0 <= rho <= R(x)}`` over the given axial nodes.

    Columns with ``R(x) = 0`` (closed conical tips) collapse to one node.
    Quads are split along a diagonal that is mirrored about ``mirror_x`` so a
    mirror-symmetric node set gives a mirror-symmetric triangulation.  The
    first and last columns are recorded as the sections ``"left"`` and
    ``"right"``.
    """
    x_nodes = np.asarray(x_nodes, dtype=float)
    R = np.asarray(radius(x_nodes), dtype=float)
    frac = np.linspace(0.0, 1.0, n_radial + 1)
    nx = len(x_nodes)
    idx = np.zeros((nx, n_radial + 1), dtype=np.int64)
    coords = []
    wall = []
    count = 0
    for i in range(nx):
        if R[i] <= tol:
            idx[i, :] = count
            coords.append([[x_nodes[i], 0.0]])
            wall.append([True])
            count += 1
        else:
            idx[i, :] = count + np.arange(n_radial + 1)
            coords.append(np.column_stack([np.full(n_radial + 1, x_nodes[i]), frac * R[i]]))
            w = np.zeros(n_radial + 1, dtype=bool)
            w[-1] = True
            wall.append(w)
            count += n_radial + 1
    nodes = np.concatenate([np.asarray(c, dtype=float) for c in coords])
    dirichlet = np.concatenate([np.asarray(w) for w in wall])
    i, j = np.meshgrid(np.arange(nx - 1), np.arange(n_radial), indexing="ij")
    i, j = i.ravel(), j.ravel()
    a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
    xc = 0.5 * (x_nodes[i] + x_nodes[i + 1])
    flip = (xc > mirror_x) if mirror_x is not None else np.zeros_like(xc, dtype=bool)
    t1 = np.where(flip[:, None], np.column_stack([a, b, d]), np.column_stack([a, b, c]))
    t2 = np.where(flip[:, None], np.column_stack([b, c, d]), np.column_stack([a, c, d]))
    tris = np.concatenate([t1, t2])
    good = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    tris = tris[good]
    mesh = MeridianMesh(nodes, tris, dirichlet)
    area = mesh.geometry()[0]
    if np.any(area <= 0):
        raise ValueError("degenerate triangle in profile mesh")
    if R[0] > tol:
        mesh.sections["left"] = idx[0].copy()
    if R[-1] > tol:
        mesh.sections["right"] = idx[-1].copy()
    mesh.tags["x_nodes"] = x_nodes
    return mesh


def _size_function(local_radius, n_radial: int, h_min: float, h_max: float, aspect: float = 1.0):
    def size(x):
        return np.clip(aspect * local_radius(x) / n_radial, h_min, h_max)
    return size


def resonator_mesh(theta: float, d: float, n_radial: int = 16, cyl_radius: float = 1.0,
                   h_min: float | None = None) -> MeridianMesh:
    """Closed-tip limit resonator ``{0 < x < d, rho < min(1, tan(theta) x, tan(theta)(d - x))}``."""
    tan = np.tan(theta)
    xk = cyl_radius / tan
    h_max = cyl_radius / n_radial
    h_min = h_max / 100.0 if h_min is None else h_min

    def radius(x):
        return np.minimum(cyl_radius, tan * np.minimum(x, d - x)).clip(min=0.0)

    size = _size_function(radius, n_radial, h_min, h_max)
    half = axis_nodes([0.0, xk, 0.5 * d], size)
    xs = np.concatenate([half, (d - half[::-1])[1:]])
    return profile_mesh(xs, radius, n_radial, mirror_x=0.5 * d)


def channel_mesh(theta: float, length: float, n_radial: int = 16, cyl_radius: float = 1.0,
                 h_min: float | None = None) -> MeridianMesh:
    """Closed-tip half-infinite channel ``G1`` truncated at ``x = -length`` (tip at 0)."""
    tan = np.tan(theta)
    xk = cyl_radius / tan
    if length <= xk:
        raise ValueError("channel truncation must lie in the cylindrical part")
    h_max = cyl_radius / n_radial
    h_min = h_max / 100.0 if h_min is None else h_min

    def radius(x):
        return np.minimum(cyl_radius, tan * np.abs(np.minimum(x, 0.0)))

    size = _size_function(radius, n_radial, h_min, h_max)
    xs = axis_nodes([-length, -xk, 0.0], size)
    return profile_mesh(xs, radius, n_radial)


def waveguide_radius(spec):
    """Meridian boundary radius ``R(x)`` of ``G(eps)`` for a disk cross-section."""
    if spec.cross_section.shape != "disk":
        raise ValueError("meridian discretization needs a disk cross-section")
    r_cyl = spec.cross_section.radius
    n1, n2 = spec.narrows
    eps = spec.epsilon

    def radius(x):
        return np.minimum(r_cyl, np.minimum(n1.boundary_radius(x, eps), n2.boundary_radius(x, eps)))

    return radius


def waveguide_mesh(spec, n_radial: int = 16, h_min: float | None = None) -> MeridianMesh:
    """Full waveguide ``G(eps)`` between the two truncation planes (local x, tip 1 at 0)."""
    spec = _shift_spec(spec)
    radius = waveguide_radius(spec)
    r_cyl = spec.cross_section.radius
    eps, d, L = spec.epsilon, spec.d, spec.channel_length
    h_max = r_cyl / n_radial
    h_min = h_max / 100.0 if h_min is None else h_min
    size = _size_function(radius, n_radial, h_min, h_max)
    n1 = spec.narrows[0]
    # where the neck boundary meets the cylinder wall
    xk = brentq(lambda x: n1.boundary_radius(x, eps) - r_cyl, 0.0, 10.0 * r_cyl / n1.tan + 10 * eps)
    match = eps * n1.profile.match_axial()
    breaks = [-L, -xk, 0.0, xk, 0.5 * d]
    if match < xk:
        breaks += [-match, match]
    half = axis_nodes([b for b in breaks if b <= 0.5 * d], size)
    xs = np.concatenate([half, (d - half[::-1])[1:]])
    return profile_mesh(xs, radius, n_radial, mirror_x=0.5 * d)


def _shift_spec(spec):
    """Copy of ``spec`` translated so that tip 1 sits at ``x = 0``."""
    from .geometry import NarrowSpec, SolenoidSpec
    x1 = spec.narrows[0].tip_x
    if x1 == 0.0:
        return spec
    narrows = tuple(NarrowSpec(n.tip_x - x1, n.half_angle, n.profile) for n in spec.narrows)
    sol = spec.solenoid
    if sol is not None:
        sol = SolenoidSpec((sol.center[0] - x1, sol.center[1]), sol.radius, sol.field_samples, sol.spin, sol.gauge_band)
    return spec.replace(narrows=narrows, solenoid=sol)


# ---------------------------------------------------------------------------
# neck (junction) domains in polar coordinates about the tip
# ---------------------------------------------------------------------------

def junction_mesh(profile, theta: float, r_max: float, h0: float = 0.05, growth: float = 0.08,
                  n_cone: int = 16, full: bool = False) -> MeridianMesh:
    """Two-block mesh of the unit-scale neck domain truncated at ``r_max``.

    The half mesh covers ``xi >= 0``: a structured polar cone sector
    ``phi in [0, theta]`` with radial levels up to ``r_max``, and an
    unstructured quality mesh of size ``h0`` between the cone ray, the neck
    wall and the symmetry plane.  ``full=True`` mirrors it through the
    plane ``xi = 0``.  Sections ``"arc_right"`` (and ``"arc_left"``) are the
    truncation arcs ordered from the axis to the wall.
    """
    r_c = profile.match_radius(theta)
    if r_max < 2.0 * r_c:
        raise ValueError("truncation radius must be at least twice the matching radius")
    n_c = max(2, int(np.ceil(r_c / h0)))
    inner = np.linspace(0.0, r_c, n_c + 1)
    outer = graded_points(r_c, r_max, lambda r: np.maximum(h0, growth * r))
    levels = np.concatenate([inner, outer[1:]])
    n_lev = len(levels) - 1
    phi_a = np.linspace(0.0, theta, n_cone + 1)
    coords = [[0.0, 0.0]]
    A = np.zeros((n_lev + 1, n_cone + 1), dtype=np.int64)
    for i in range(1, n_lev + 1):
        for j in range(n_cone + 1):
            A[i, j] = len(coords)
            coords.append([levels[i] * np.cos(phi_a[j]), levels[i] * np.sin(phi_a[j])])
    nodes_a = np.array(coords)
    interface = A[:n_c + 1, n_cone]

    # the neck block is an unstructured quality mesh bounded by the interface
    # ray, the neck wall and the symmetry plane; it reuses the interface nodes
    t_m = profile.match_axial()
    ts = np.linspace(t_m, 0.0, 4001)
    wall_r = profile.radius(ts, theta)
    arc_len = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(ts), np.diff(wall_r)))])
    n_wall = max(2, int(np.ceil(arc_len[-1] / h0)))
    t_w = np.interp(np.linspace(0.0, arc_len[-1], n_wall + 1), arc_len, ts)
    t_w[-1] = 0.0
    wall = np.column_stack([t_w, profile.radius(t_w, theta)])[1:]
    waist = wall[-1, 1]
    n_sym = max(2, int(np.ceil(waist / h0)))
    sym_pts = np.column_stack([np.zeros(n_sym - 1), np.linspace(waist, 0.0, n_sym + 1)[1:-1]])
    ring = np.concatenate([nodes_a[interface], wall, sym_pts])
    # ring order: origin -> interface -> match point -> wall -> waist -> symmetry -> origin
    n_ring = len(ring)
    segs = np.column_stack([np.arange(n_ring), (np.arange(n_ring) + 1) % n_ring])
    area = 0.5 * np.sqrt(3.0) / 2.0 * h0 ** 2
    out = triangle.triangulate({"vertices": ring, "segments": segs}, f"pq28Ya{area:.12g}")
    verts = out["vertices"]
    if not np.allclose(verts[:n_ring], ring):
        raise RuntimeError("neck mesher reordered boundary vertices")
    n_a = len(nodes_a)
    b_index = np.empty(len(verts), dtype=np.int64)
    n_if = len(interface)
    b_index[:n_if] = interface
    b_index[n_if:] = n_a + np.arange(len(verts) - n_if)
    nodes = np.concatenate([nodes_a, verts[n_if:]])
    tri_b = b_index[out["triangles"]]
    wall_nodes = b_index[n_if - 1:n_if + len(wall)]
    sym_nodes = np.concatenate([[0], b_index[n_if + len(wall) - 1:n_ring]])

    def quads(idx):
        i, j = np.meshgrid(np.arange(idx.shape[0] - 1), np.arange(idx.shape[1] - 1), indexing="ij")
        i, j = i.ravel(), j.ravel()
        a, b, c, d = idx[i, j], idx[i + 1, j], idx[i + 1, j + 1], idx[i, j + 1]
        t = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
        return t[(t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])]

    tris = np.concatenate([quads(A), tri_b])
    # consistent counter-clockwise orientation
    x, y = nodes[tris, 0], nodes[tris, 1]
    signed = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    tris[signed < 0] = tris[signed < 0][:, ::-1]
    nodes[sym_nodes, 0] = 0.0
    dirichlet = np.zeros(len(nodes), dtype=bool)
    dirichlet[A[n_c:, n_cone]] = True
    dirichlet[wall_nodes] = True
    symmetry = np.unique(sym_nodes)
    arc = A[n_lev, :]
    if not full:
        mesh = MeridianMesh(nodes, tris, dirichlet, sections={"arc_right": arc},
                            tags={"symmetry": symmetry, "interface_right": interface})
    else:
        n = len(nodes)
        sym = np.zeros(n, dtype=bool)
        sym[symmetry] = True
        mirror_index = np.where(sym, np.arange(n), 0)
        others = np.nonzero(~sym)[0]
        mirror_index[others] = n + np.arange(len(others))
        mnodes = nodes[others] * np.array([-1.0, 1.0])
        nodes_full = np.concatenate([nodes, mnodes])
        tris_full = np.concatenate([tris, mirror_index[tris][:, ::-1]])
        dir_full = np.concatenate([dirichlet, dirichlet[others]])
        mesh = MeridianMesh(nodes_full, tris_full, dir_full,
                            sections={"arc_right": arc, "arc_left": mirror_index[arc]},
                            tags={"symmetry": symmetry, "interface_right": interface,
                                  "interface_left": mirror_index[interface]})
    mesh.tags.update(levels=levels, r_match=r_c, r_max=r_max)
    if np.any(mesh.geometry()[0] <= 0):
        raise ValueError("degenerate triangle in junction mesh")
    return mesh


# ---------------------------------------------------------------------------
# fields attached to a conical tip on the axis
# ---------------------------------------------------------------------------

def tip_coordinates(x, rho, tip_x: float, direction: int):
    """Distance to the tip and polar angle from the cone axis.

    ``direction = +1`` for a cone opening toward ``+x``, ``-1`` toward ``-x``.
    """
    dx = direction * (np.asarray(x) - tip_x)
    return np.hypot(dx, rho), np.arctan2(rho, dx)


def tip_load(mesh: MeridianMesh, tip_x: float, direction: int, cap, cut, k: float, kind: str,
             outer: bool = False) -> np.ndarray:
    """Load vector of ``[Delta, chi](g Phi1)`` for the tip solution ``g Phi1`` of ``kind``.

    ``chi`` is the tip cutoff or, with ``outer=True``, one minus it; the
    support is the shell ``cut.r0 < r < cut.r1`` inside the cone.
    """
    from .spectral import commutator_radial
    sign = -1.0 if outer else 1.0

    def func(x, rho):
        r, ph = tip_coordinates(x, rho, tip_x, direction)
        r = np.clip(r, cut.r0, cut.r1)
        val = commutator_radial(cut, cap.mu1, k, r, kind, sign) * cap.phi1(np.minimum(ph, cap.theta))
        return np.where(ph <= cap.theta, val, 0.0)

    mask = mesh.triangles_near((tip_x, 0.0), cut.r0, cut.r1)
    return mesh.load_vector(func, mask)


def tip_projection(mesh: MeridianMesh, values, tip_x: float, direction: int, cap, radii,
                   n: int = 64) -> np.ndarray:
    """``(2 mu1 + 1) int u(r, .) Phi1 dS`` over the unit cap for each radius."""
    t, w = np.polynomial.legendre.leggauss(n)
    phi = 0.5 * cap.theta * (t + 1.0)
    w = 0.5 * cap.theta * w
    interp = mesh.interpolator(values)
    out = []
    for r in np.atleast_1d(radii):
        x = tip_x + direction * r * np.cos(phi)
        vals = interp(x, r * np.sin(phi))
        out.append(cap.p * TWO_PI * np.sum(w * vals * cap.phi1(phi) * np.sin(phi)))
    return np.array(out)
