"""Discrete spaces on the simplicial subdivision.

Three spaces enter the mixed formulation:

* ``PressureSpace``: scalar Lagrange P^k per triangle, single valued across
  interior primal edges (the k+1 edge nodes are shared), discontinuous across
  dual and fracture edges.  Dirichlet boundary edges mark their edge nodes as
  constrained; values are interpolated by the assembly stage.
* ``FluxSpace``: vector [P^k]^2 per triangle with continuous normal trace
  across dual edges.  Realized with normal point-value dofs at k+1 Gauss
  points per edge (shared on dual edges, one set per side elsewhere) plus,
  for k=2, three interior moments.  The local dual basis comes from inverting
  the dof-functional matrix, batched over triangles.
* ``FracturePressureSpace``: continuous 1D Lagrange P^k along each fracture
  polyline; tip values can be constrained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from .errors import ConfigError, OrientationUnset
from .geometry import DUAL, INTERIOR, BOUNDARY, PolygonalMesh, Subdivision
from .quadrature import triangle_rule, map_to_triangles


@dataclass(frozen=True)
class SpaceConfig:
    """Polynomial order shared by all three spaces."""

    k: int = 1

    def __post_init__(self):
        if self.k not in (1, 2):
            raise ConfigError(f"order k={self.k} not supported; use 1 or 2")


def _monomial_exponents(k: int) -> np.ndarray:
    exps = [(a, b) for d in range(k + 1) for a in range(d, -1, -1) for b in (d - a,)]
    return np.array(exps, dtype=int)


def _monomial_values(exps: np.ndarray, pts: np.ndarray) -> np.ndarray:
    x = pts[..., 0, None]
    y = pts[..., 1, None]
    return x ** exps[:, 0] * y ** exps[:, 1]


def _monomial_gradients(exps: np.ndarray, pts: np.ndarray) -> np.ndarray:
    x = pts[..., 0, None]
    y = pts[..., 1, None]
    a = exps[:, 0]
    b = exps[:, 1]
    gx = np.where(a > 0, a * x ** np.maximum(a - 1, 0) * y**b, 0.0)
    gy = np.where(b > 0, b * x**a * y ** np.maximum(b - 1, 0), 0.0)
    return np.stack([gx, gy], axis=-1)


def _lattice_nodes(k: int) -> np.ndarray:
    """Reference Lagrange nodes: vertices, then edge interiors (k=2)."""
    if k == 1:
        return np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    return np.array(
        [
            [0.0, 0.0],
            [1.0, 0.0],
            [0.0, 1.0],
            [0.5, 0.0],  # on edge (v0, v1)
            [0.5, 0.5],  # on edge (v1, v2)
            [0.0, 0.5],  # on edge (v2, v0)
        ]
    )


def _primal_edge_nodes(k: int) -> list:
    """Local node ids on edge (v0, v1), ordered from v0 to v1."""
    return [0, 1] if k == 1 else [0, 3, 1]


def lagrange_1d(nodes: np.ndarray, ts: np.ndarray) -> np.ndarray:
    """Values of the 1D Lagrange basis through ``nodes`` at parameters ``ts``."""
    nodes = np.asarray(nodes, dtype=float)
    ts = np.asarray(ts, dtype=float)
    m = nodes.shape[0]
    out = np.ones(ts.shape + (m,))
    for j in range(m):
        for i in range(m):
            if i != j:
                out[..., j] *= (ts - nodes[i]) / (nodes[j] - nodes[i])
    return out


def lagrange_1d_deriv(nodes: np.ndarray, ts: np.ndarray) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    ts = np.asarray(ts, dtype=float)
    m = nodes.shape[0]
    out = np.zeros(ts.shape + (m,))
    for j in range(m):
        for l in range(m):
            if l == j:
                continue
            term = np.ones_like(ts) / (nodes[j] - nodes[l])
            for i in range(m):
                if i != j and i != l:
                    term *= (ts - nodes[i]) / (nodes[j] - nodes[i])
            out[..., j] += term
    return out


def jump_and_average(q1, q2=None):
    """Return ([q], {q}) from one-sided traces; one-sided edges give q1 twice.

    Side 1 is the side the edge normal points away from; for fracture edges
    that is the side the fracture normal leaves.
    """
    q1 = np.asarray(q1, dtype=float)
    if q2 is None:
        return q1.copy(), q1.copy()
    q2 = np.asarray(q2, dtype=float)
    return q1 - q2, 0.5 * (q1 + q2)


def edge_sides(sub: Subdivision, edge_id: int) -> tuple:
    """Adjacent (side-1, side-2) triangles of an edge; -1 marks one-sided.

    Raises OrientationUnset when the stored adjacency cannot orient the
    jump (no side-1 triangle).
    """
    t1, t2 = sub.edge_tris[edge_id]
    if t1 < 0:
        raise OrientationUnset(f"edge {edge_id} has no side-1 triangle")
    return int(t1), int(t2)


def _edge_lookup(sub: Subdivision) -> dict:
    ev = sub.edge_vertices
    return {(min(a, b), max(a, b)): e for e, (a, b) in enumerate(ev)}


# ---------------------------------------------------------------------------
# pressure space S_h


@dataclass(frozen=True)
class PressureSpace:
    """Per-triangle Lagrange pressures, continuous across interior edges."""

    sub: Subdivision
    k: int
    ndof: int
    tri_dofs: np.ndarray  # (nt, nloc)
    dirichlet_mask: np.ndarray  # (ndof,) bool
    dof_edge: np.ndarray  # (ndof,) boundary edge owning a Dirichlet node, else -1
    node_coords: np.ndarray  # (ndof, 2)
    ref_nodes: np.ndarray = field(repr=False, default=None)
    _coeff: np.ndarray = field(repr=False, default=None)  # monomial coeffs (nloc, nloc)
    _exps: np.ndarray = field(repr=False, default=None)

    @property
    def nloc(self) -> int:
        return self.tri_dofs.shape[1]

    @property
    def n_free(self) -> int:
        return int(self.ndof - self.dirichlet_mask.sum())

    def eval_ref(self, ref_pts: np.ndarray) -> np.ndarray:
        """Basis values at reference points, shape (..., nloc)."""
        return _monomial_values(self._exps, ref_pts) @ self._coeff

    def grad_ref(self, ref_pts: np.ndarray) -> np.ndarray:
        """Reference gradients, shape (..., nloc, 2)."""
        g = _monomial_gradients(self._exps, ref_pts)
        return np.einsum("...mc,ml->...lc", g, self._coeff)

    def interpolate(self, fn) -> np.ndarray:
        """Nodal interpolation; fn(points (n,2), triangles (n,)) -> values."""
        nt, nloc = self.tri_dofs.shape
        tris = np.repeat(np.arange(nt), nloc)
        pts = self.node_coords[self.tri_dofs.ravel()]
        vals = np.asarray(fn(pts, tris), dtype=float)
        out = np.zeros(self.ndof)
        out[self.tri_dofs.ravel()] = vals
        return out


def build_S_h(mesh, config: SpaceConfig, dirichlet_edges=()) -> PressureSpace:
    sub = mesh.subdivision if isinstance(mesh, PolygonalMesh) else mesh
    k = config.k
    ref_nodes = _lattice_nodes(k)
    nloc = ref_nodes.shape[0]
    edge_locals = _primal_edge_nodes(k)
    nt = sub.n_triangles

    dirichlet_edges = np.asarray(sorted(set(int(e) for e in dirichlet_edges)), dtype=int)
    for e in dirichlet_edges:
        if sub.edge_kind[e] != BOUNDARY:
            raise ConfigError(f"Dirichlet edge {e} is not a boundary edge")
    dir_set = set(dirichlet_edges.tolist())

    tri_dofs = np.full((nt, nloc), -1, dtype=int)
    coords = []
    dof_edge = []
    dir_flags = []
    # shared slots on interior primal edges, ordered from the lower vertex id
    interior_slots = {}

    def new_dof(xy, edge=-1, is_dir=False):
        coords.append(xy)
        dof_edge.append(edge)
        dir_flags.append(is_dir)
        return len(coords) - 1

    tc = sub.tri_coords
    for t in range(nt):
        e = int(sub.tri_primal_edge[t])
        kind = sub.edge_kind[e]
        v0, v1 = int(sub.tri_vertices[t, 0]), int(sub.tri_vertices[t, 1])
        p0 = tc[t, 0]
        nodes_xy = p0 + ref_nodes @ np.stack([tc[t, 1] - p0, tc[t, 2] - p0])
        if kind == INTERIOR:
            if e not in interior_slots:
                lo = min(v0, v1)
                a = sub.vertices[lo]
                b = sub.vertices[v0 + v1 - lo]
                fr = np.linspace(0.0, 1.0, k + 1)
                ids = [new_dof(a + f * (b - a)) for f in fr]
                interior_slots[e] = ids
            slots = interior_slots[e]
            order = slots if v0 < v1 else slots[::-1]
            for j, loc in enumerate(edge_locals):
                tri_dofs[t, loc] = order[j]
        else:
            is_dir = e in dir_set
            for loc in edge_locals:
                tri_dofs[t, loc] = new_dof(nodes_xy[loc], edge=e if is_dir else -1, is_dir=is_dir)
        for loc in range(nloc):
            if tri_dofs[t, loc] < 0:
                tri_dofs[t, loc] = new_dof(nodes_xy[loc])

    exps = _monomial_exponents(k)
    vand = _monomial_values(exps, ref_nodes)
    coeff = np.linalg.inv(vand)

    return PressureSpace(
        sub=sub,
        k=k,
        ndof=len(coords),
        tri_dofs=tri_dofs,
        dirichlet_mask=np.array(dir_flags, dtype=bool),
        dof_edge=np.array(dof_edge, dtype=int),
        node_coords=np.array(coords, dtype=float),
        ref_nodes=ref_nodes,
        _coeff=coeff,
        _exps=exps,
    )


# ---------------------------------------------------------------------------
# flux space V_h


@dataclass(frozen=True)
class FluxSpace:
    """Elementwise [P^k]^2 with continuous normal trace across dual edges.

    Dofs are v.n_e point values at the k+1 Gauss points of each triangle
    edge (ordered from the lower-indexed edge vertex), shared when the edge
    is dual, plus for k=2 three interior moments per triangle.  The normal
    trace of a member along an edge is the 1D Lagrange interpolant of its
    edge dof values through the Gauss points.
    """

    sub: Subdivision
    k: int
    ndof: int
    tri_dofs: np.ndarray  # (nt, nloc)
    edge_side_dofs: np.ndarray  # (ne, 2, k+1); -1 where side absent
    gauss_ts: np.ndarray  # (k+1,) edge dof parameters in (0,1)
    _coeff: np.ndarray = field(repr=False, default=None)  # (nt, nloc, nloc)
    _exps: np.ndarray = field(repr=False, default=None)
    _centers: np.ndarray = field(repr=False, default=None)
    _scales: np.ndarray = field(repr=False, default=None)

    @property
    def nloc(self) -> int:
        return self.tri_dofs.shape[1]

    def _scaled(self, tris, pts):
        c = self._centers[tris]
        h = self._scales[tris]
        return (pts - c[..., None, :]) / h[..., None, None]

    def _vector_monomials(self, scaled):
        m = _monomial_values(self._exps, scaled)  # (..., s)
        n = m.shape[-1]
        out = np.zeros(m.shape[:-1] + (2 * n, 2))
        out[..., 0::2, 0] = m
        out[..., 1::2, 1] = m
        return out

    def basis_values(self, tris, pts) -> np.ndarray:
        """Basis fields at physical points; (nt, nq, 2) -> (nt, nq, nloc, 2)."""
        vm = self._vector_monomials(self._scaled(tris, pts))
        return np.einsum("tml,tqmc->tqlc", self._coeff[tris], vm)

    def basis_divergence(self, tris, pts) -> np.ndarray:
        scaled = self._scaled(tris, pts)
        g = _monomial_gradients(self._exps, scaled)  # (..., s, 2)
        n = g.shape[-2]
        div = np.zeros(scaled.shape[:-1] + (2 * n,))
        div[..., 0::2] = g[..., 0]
        div[..., 1::2] = g[..., 1]
        div = div / self._scales[tris][..., None, None]
        return np.einsum("tml,tqm->tql", self._coeff[tris], div)

    def edge_trace_matrix(self, ts: np.ndarray) -> np.ndarray:
        """Normal-trace values at edge parameters ts: (nq, k+1) Lagrange."""
        return lagrange_1d(self.gauss_ts, np.asarray(ts, dtype=float))

    def interpolate(self, fn) -> np.ndarray:
        """Dof-functional interpolation of a vector field fn(pts (...,2)) -> (...,2)."""
        sub = self.sub
        out = np.zeros(self.ndof)
        pts, _ = _edge_dof_geometry(sub, self.gauss_ts)
        k1 = self.gauss_ts.shape[0]
        nt = sub.n_triangles
        lookup = _edge_lookup(sub)
        for t in range(nt):
            for l in range(3):
                a = int(sub.tri_vertices[t, l])
                b = int(sub.tri_vertices[t, (l + 1) % 3])
                e = lookup[(min(a, b), max(a, b))]
                vals = np.asarray(fn(pts[e])) @ sub.edge_normal[e]
                out[self.tri_dofs[t, l * k1 : (l + 1) * k1]] = vals
        if self.k == 2:
            rule = triangle_rule(2 * self.k + 2)
            qp, qw = map_to_triangles(rule, sub.tri_coords)
            fv = np.asarray(fn(qp.reshape(-1, 2))).reshape(nt, -1, 2)
            area = sub.tri_area
            mean = np.einsum("tq,tqc->tc", qw, fv) / area[:, None]
            curl = _bubble_curl(sub, qp)
            mom = np.einsum("tq,tqc,tqc->t", qw, fv, curl) * (
                sub.tri_diameter / area
            )
            base = 3 * k1
            out[self.tri_dofs[:, base]] = mean[:, 0]
            out[self.tri_dofs[:, base + 1]] = mean[:, 1]
            out[self.tri_dofs[:, base + 2]] = mom
        return out


def _edge_dof_geometry(sub: Subdivision, ts: np.ndarray):
    """Physical dof points per edge (ne, k+1, 2), ordered from lower vertex id."""
    ev = sub.edge_vertices
    lo = sub.vertices[ev.min(axis=1)]
    hi = sub.vertices[ev.max(axis=1)]
    pts = lo[:, None, :] + ts[None, :, None] * (hi - lo)[:, None, :]
    return pts, sub.edge_normal


def _bubble_curl(sub: Subdivision, phys_pts: np.ndarray) -> np.ndarray:
    """curl(l0*l1*l2) at physical points (nt, nq, 2) -> (nt, nq, 2)."""
    nt, nq = phys_pts.shape[:2]
    ref = sub.reference_coords(np.arange(nt), phys_pts)
    x, y = ref[..., 0], ref[..., 1]
    l0 = 1.0 - x - y
    db_dx = y * (l0 - x)
    db_dy = x * (l0 - y)
    gref = np.stack([db_dx, db_dy], axis=-1)
    gphys = np.einsum("tji,tqj->tqi", sub.tri_jacobian_inv, gref)
    curl = np.stack([gphys[..., 1], -gphys[..., 0]], axis=-1)
    return curl


def build_V_h(mesh, config: SpaceConfig) -> FluxSpace:
    sub = mesh.subdivision if isinstance(mesh, PolygonalMesh) else mesh
    k = config.k
    k1 = k + 1
    xs, _ = roots_legendre(k1)
    ts = 0.5 * (xs + 1.0)
    n_int = 3 if k == 2 else 0
    nloc = 3 * k1 + n_int
    nt = sub.n_triangles
    ne = sub.n_edges
    lookup = _edge_lookup(sub)

    dual_ids = sub.edges_of_kind(DUAL)
    dual_base = {int(e): i * k1 for i, e in enumerate(dual_ids)}
    counter = len(dual_ids) * k1

    tri_dofs = np.full((nt, nloc), -1, dtype=int)
    edge_side_dofs = np.full((ne, 2, k1), -1, dtype=int)

    for t in range(nt):
        for l in range(3):
            a = int(sub.tri_vertices[t, l])
            b = int(sub.tri_vertices[t, (l + 1) % 3])
            e = lookup[(min(a, b), max(a, b))]
            if sub.edge_kind[e] == DUAL:
                ids = np.arange(dual_base[e], dual_base[e] + k1)
            else:
                ids = np.arange(counter, counter + k1)
                counter += k1
            tri_dofs[t, l * k1 : (l + 1) * k1] = ids
            side = 0 if sub.edge_tris[e, 0] == t else 1
            edge_side_dofs[e, side] = ids
        if n_int:
            tri_dofs[t, 3 * k1 :] = np.arange(counter, counter + n_int)
            counter += n_int

    ndof = counter
    exps = _monomial_exponents(k)
    s = exps.shape[0]
    centers = sub.tri_centroid
    scales = sub.tri_diameter

    # dof-functional matrix G per triangle: rows functionals, cols monomials
    G = np.zeros((nt, nloc, 2 * s))
    pts, _ = _edge_dof_geometry(sub, ts)
    for l in range(3):
        va = sub.tri_vertices[:, l]
        vb = sub.tri_vertices[:, (l + 1) % 3]
        eids = np.array(
            [lookup[(min(int(a), int(b)), max(int(a), int(b)))] for a, b in zip(va, vb)]
        )
        p = pts[eids]  # (nt, k1, 2)
        nrm = sub.edge_normal[eids]  # (nt, 2)
        scaled = (p - centers[:, None, :]) / scales[:, None, None]
        m = _monomial_values(exps, scaled)  # (nt, k1, s)
        rows = np.zeros((nt, k1, 2 * s))
        rows[..., 0::2] = m * nrm[:, None, 0, None]
        rows[..., 1::2] = m * nrm[:, None, 1, None]
        G[:, l * k1 : (l + 1) * k1, :] = rows
    if n_int:
        rule = triangle_rule(2 * k + 2)
        qp, qw = map_to_triangles(rule, sub.tri_coords)
        scaled = (qp - centers[:, None, :]) / scales[:, None, None]
        m = _monomial_values(exps, scaled)  # (nt, nq, s)
        area = sub.tri_area
        mx = np.einsum("tq,tqm->tm", qw, m) / area[:, None]
        G[:, 3 * k1, 0::2] = mx
        G[:, 3 * k1 + 1, 1::2] = mx
        curl = _bubble_curl(sub, qp)
        w = sub.tri_diameter / area
        G[:, 3 * k1 + 2, 0::2] = np.einsum("tq,tqm,tq->tm", qw, m, curl[..., 0]) * w[:, None]
        G[:, 3 * k1 + 2, 1::2] = np.einsum("tq,tqm,tq->tm", qw, m, curl[..., 1]) * w[:, None]

    coeff = np.linalg.inv(G)  # (nt, 2s, nloc) since G square: 2s == nloc

    return FluxSpace(
        sub=sub,
        k=k,
        ndof=ndof,
        tri_dofs=tri_dofs,
        edge_side_dofs=edge_side_dofs,
        gauss_ts=ts,
        _coeff=coeff,
        _exps=exps,
        _centers=centers,
        _scales=scales,
    )


# ---------------------------------------------------------------------------
# fracture pressure space W_h


@dataclass(frozen=True)
class FracturePressureSpace:
    """Continuous piecewise P^k on each fracture polyline."""

    k: int
    ndof: int
    edge_dofs: tuple  # per fracture: (ne, k+1) global ids in arclength order
    dirichlet_mask: np.ndarray  # (ndof,)
    node_coords: np.ndarray  # (ndof, 2)
    node_param: np.ndarray  # (ndof,) arclength along the fracture
    node_fracture: np.ndarray  # (ndof,)
    ref_nodes: np.ndarray = field(repr=False, default=None)  # (k+1,) on [0,1]

    @property
    def n_free(self) -> int:
        return int(self.ndof - self.dirichlet_mask.sum())

    def eval_ref(self, ts: np.ndarray) -> np.ndarray:
        return lagrange_1d(self.ref_nodes, ts)

    def deriv_ref(self, ts: np.ndarray) -> np.ndarray:
        return lagrange_1d_deriv(self.ref_nodes, ts)

    def interpolate(self, fn) -> np.ndarray:
        """fn(points (n,2), params (n,), fracture (n,)) -> nodal values."""
        return np.asarray(
            fn(self.node_coords, self.node_param, self.node_fracture), dtype=float
        )


def build_W_h(mesh, config: SpaceConfig, dirichlet_tips=()) -> FracturePressureSpace:
    """dirichlet_tips: iterable of (fracture_index, end) with end 0=start, 1=end."""
    sub = mesh.subdivision if isinstance(mesh, PolygonalMesh) else mesh
    k = config.k
    ref = np.linspace(0.0, 1.0, k + 1)
    tips = set((int(f), int(s)) for f, s in dirichlet_tips)
    for f, s in tips:
        if f < 0 or f >= len(sub.fracture_meshes):
            raise ConfigError(f"fracture index {f} out of range")
        if s not in (0, 1):
            raise ConfigError(f"tip selector {s} must be 0 (start) or 1 (end)")

    edge_dofs = []
    coords = []
    params = []
    fracs = []
    mask = []
    offset = 0
    for fi, fm in enumerate(sub.fracture_meshes):
        ne = fm.n_edges
        nv = ne + 1
        vcoords = sub.vertices[fm.vertex_ids]
        seglen = fm.edge_length
        vparam = np.concatenate([[0.0], np.cumsum(seglen)])
        ed = np.zeros((ne, k + 1), dtype=int)
        ed[:, 0] = offset + np.arange(ne)
        ed[:, k] = offset + np.arange(1, ne + 1)
        coords.extend(vcoords.tolist())
        params.extend(vparam.tolist())
        fracs.extend([fi] * nv)
        vmask = [False] * nv
        if (fi, 0) in tips:
            vmask[0] = True
        if (fi, 1) in tips:
            vmask[-1] = True
        mask.extend(vmask)
        nxt = offset + nv
        for j in range(1, k):
            ed[:, j] = nxt + np.arange(ne)
            f = ref[j]
            mid = vcoords[:-1] + f * (vcoords[1:] - vcoords[:-1])
            coords.extend(mid.tolist())
            params.extend((vparam[:-1] + f * seglen).tolist())
            fracs.extend([fi] * ne)
            mask.extend([False] * ne)
            nxt += ne
        edge_dofs.append(ed)
        offset = nxt

    return FracturePressureSpace(
        k=k,
        ndof=offset,
        edge_dofs=tuple(edge_dofs),
        dirichlet_mask=np.array(mask, dtype=bool),
        node_coords=np.array(coords, dtype=float).reshape(offset, 2),
        node_param=np.array(params, dtype=float),
        node_fracture=np.array(fracs, dtype=int),
        ref_nodes=ref,
    )
