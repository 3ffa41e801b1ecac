"""Residual error estimator, data oscillation, and true-error report.

The estimator collects eight residual families: the constitutive residual
and the bulk source residual over triangles, pressure jumps over dual edges,
normal-flux jumps over interior primal edges, and four fracture families
(fracture equation residual, tangential-derivative vertex jumps, and the two
interface-condition residuals).  Each family value is the square root of its
summed squares and the reported global value is the SUM of the eight family
values; localization distributes the squared per-entity contributions onto
primal elements, so the localized squares add up to the sum of squared
family values rather than the square of the global value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoExactSolution
from .geometry import DUAL, INTERIOR, PolygonalMesh
from .problem import ProblemSpec
from .quadrature import edge_rule, map_to_triangles, triangle_rule
from .spaces import _monomial_exponents


def _inv_spd_2x2(K):
    det = K[..., 0, 0] * K[..., 1, 1] - K[..., 0, 1] * K[..., 1, 0]
    out = np.empty_like(K)
    out[..., 0, 0] = K[..., 1, 1]
    out[..., 1, 1] = K[..., 0, 0]
    out[..., 0, 1] = -K[..., 0, 1]
    out[..., 1, 0] = -K[..., 1, 0]
    return out / det[..., None, None]


def _edge_points(sub, edges, ts):
    ev = sub.edge_vertices[edges]
    lo = sub.vertices[ev.min(axis=1)]
    hi = sub.vertices[ev.max(axis=1)]
    return lo[:, None, :] + ts[None, :, None] * (hi - lo)[:, None, :]


def _fracture_points(sub, fm, ts):
    """Quadrature points and arclength parameters in polyline direction."""
    a = sub.vertices[fm.vertex_ids[:-1]]
    b = sub.vertices[fm.vertex_ids[1:]]
    pts = a[:, None, :] + ts[None, :, None] * (b - a)[:, None, :]
    vparam = np.concatenate([[0.0], np.cumsum(fm.edge_length)])
    par = vparam[:-1, None] + ts[None, :] * fm.edge_length[:, None]
    return pts, par


def _deriv2_ref(nodes, ts):
    """Second derivative of the 1D Lagrange basis through ``nodes`` at ts."""
    n = nodes.size
    V = np.vander(nodes, n, increasing=True)
    C = np.linalg.inv(V)  # column j: monomial coefficients of basis j
    out = np.zeros((ts.size, n))
    for m in range(2, n):
        out += m * (m - 1) * ts[:, None] ** (m - 2) * C[m][None, :]
    return out


@dataclass(frozen=True)
class EstimatorBreakdown:
    """Squared per-entity residual contributions and their aggregates."""

    terms: np.ndarray  # (8,) family values, each sqrt of its summed squares
    eta: float  # sum of the eight family values
    osc: float
    element_sq: np.ndarray  # (n_elements,) localized squared indicators
    tri_sq: np.ndarray  # (nt, 2) squared terms 1-2 per triangle
    dual_sq: np.ndarray  # squared term 3 per dual edge
    interior_sq: np.ndarray  # squared term 4 per interior primal edge
    fracture_sq: tuple  # per fracture: (ne, 3) squared terms 5, 7, 8
    vertex_sq: tuple  # per fracture: (ne-1,) squared term 6

    @property
    def fracture_edge_sq(self) -> tuple:
        """Per-fracture-edge squared totals of the three edgewise families."""
        return tuple(a.sum(axis=1) for a in self.fracture_sq)

    @property
    def total_sq(self) -> float:
        return float((self.terms**2).sum())


def compute_estimator(mesh: PolygonalMesh, spec: ProblemSpec, sol) -> EstimatorBreakdown:
    sub = mesh.subdivision
    k = sol.S.k
    K_elem = spec.permeability(mesh.element_centroids)
    Kinv_elem = _inv_spd_2x2(K_elem)

    rule = triangle_rule(2 * k + 2)
    qp, qw = map_to_triangles(rule, sub.tri_coords)
    tris = np.arange(sub.n_triangles)
    nt, nq = qp.shape[:2]
    region = mesh.element_regions[sub.tri_polygon]

    # term 1: constitutive residual r = u_h + K grad p_h measured in K^{-1}
    u = sol.u_at(tris, qp)
    gp = sol.grad_p_at(tris, qp)
    K = K_elem[sub.tri_polygon]
    Kinv = Kinv_elem[sub.tri_polygon]
    r = u + np.einsum("tcd,tqd->tqc", K, gp)
    t1 = np.einsum("tq,tqc,tcd,tqd->t", qw, r, Kinv, r)

    # term 2: bulk source residual
    f = spec.bulk_source(qp.reshape(-1, 2), np.repeat(region, nq)).reshape(nt, nq)
    div = sol.div_u_at(tris, qp)
    t2 = sub.tri_diameter**2 * np.einsum("tq,tq->t", qw, (f - div) ** 2)

    erule = edge_rule(2 * k + 2)
    ts, ws = erule.points, erule.weights

    # term 3: pressure jumps across dual edges, weight 1/h_e; the edge
    # length from the norm cancels against the weight
    duals = sub.edges_of_kind(DUAL)
    dual_sq = np.zeros(duals.size)
    if duals.size:
        pts = _edge_points(sub, duals, ts)
        jump = sol.p_at(sub.edge_tris[duals, 0], pts) - sol.p_at(
            sub.edge_tris[duals, 1], pts
        )
        dual_sq = np.einsum("q,eq->e", ws, jump**2)

    # term 4: normal flux jumps across interior primal edges, weight h_e
    inner = sub.edges_of_kind(INTERIOR)
    interior_sq = np.zeros(inner.size)
    if inner.size:
        pts = _edge_points(sub, inner, ts)
        n = sub.edge_normal[inner]
        u1 = np.einsum("eqc,ec->eq", sol.u_at(sub.edge_tris[inner, 0], pts), n)
        u2 = np.einsum("eqc,ec->eq", sol.u_at(sub.edge_tris[inner, 1], pts), n)
        interior_sq = np.einsum("q,eq->e", ws, (u1 - u2) ** 2) * (
            sub.edge_length[inner] ** 2
        )

    # fracture families
    fracture_sq = []
    vertex_sq = []
    for fi, fr in enumerate(mesh.fractures):
        fm = sub.fracture_meshes[fi]
        ne = fm.n_edges
        out = np.zeros((ne, 3))
        if ne == 0:
            fracture_sq.append(out)
            vertex_sq.append(np.zeros(0))
            continue
        eta_e = fr.normal_resistance[fm.edge_segment]
        alpha_e = spec.exchange_resistance(fi)[fm.edge_segment]
        Kg = fr.tangential_conductivity[fm.edge_segment]
        le = fm.edge_length
        pts, par = _fracture_points(sub, fm, ts)
        edges = fm.edge_ids
        n = sub.edge_normal[edges]
        t1s = sub.edge_tris[edges, 0]
        t2s = sub.edge_tris[edges, 1]
        un1 = np.einsum("eqc,ec->eq", sol.u_at(t1s, pts), n)
        un2 = np.einsum("eqc,ec->eq", sol.u_at(t2s, pts), n)
        p1 = sol.p_at(t1s, pts)
        p2 = sol.p_at(t2s, pts)
        pg = sol.p_gamma_at(fi, ts)
        fg = spec.fracture_source(
            pts.reshape(-1, 2), par.reshape(-1), np.full(ne * ts.size, fi)
        ).reshape(ne, ts.size)

        # term 5: fracture equation residual; K_gamma is constant per edge
        d2 = _deriv2_ref(sol.W.ref_nodes, ts)  # (nq, k+1)
        pg2 = (
            np.einsum("qj,ej->eq", d2, sol.p_gamma[sol.W.edge_dofs[fi]])
            / le[:, None] ** 2
        )
        res5 = fr.thickness * fg + Kg[:, None] * pg2 + (un1 - un2)
        out[:, 0] = le**3 * np.einsum("q,eq->e", ws, res5**2)

        # term 7: first interface condition, weight h_e
        res7 = ((p1 + p2) / 2.0 - pg) / alpha_e[:, None] - (un1 - un2)
        out[:, 1] = le**2 * np.einsum("q,eq->e", ws, res7**2)

        # term 8: second interface condition, weight h_e
        res8 = (un1 + un2) / 2.0 - (p1 - p2) / eta_e[:, None]
        out[:, 2] = le**2 * np.einsum("q,eq->e", ws, res8**2)
        fracture_sq.append(out)

        # term 6: vertex jumps of K^(1/2) dp/dt along the polyline
        if ne > 1:
            dref = sol.W.deriv_ref(np.array([0.0, 1.0]))  # (2, k+1)
            coef = sol.p_gamma[sol.W.edge_dofs[fi]]
            d_ends = np.einsum("qj,ej->eq", dref, coef) / le[:, None]
            w = np.sqrt(Kg)
            jumps = w[:-1] * d_ends[:-1, 1] - w[1:] * d_ends[1:, 0]
            vertex_sq.append(fm.h_vertex * jumps**2)
        else:
            vertex_sq.append(np.zeros(0))

    tri_sq = np.stack([t1, t2], axis=1)
    sums = np.array(
        [
            t1.sum(),
            t2.sum(),
            dual_sq.sum(),
            interior_sq.sum(),
            sum(a[:, 0].sum() for a in fracture_sq),
            sum(a.sum() for a in vertex_sq),
            sum(a[:, 1].sum() for a in fracture_sq),
            sum(a[:, 2].sum() for a in fracture_sq),
        ]
    )
    terms = np.sqrt(np.maximum(sums, 0.0))
    element_sq = _localize_raw(
        mesh, tri_sq, dual_sq, interior_sq, fracture_sq, vertex_sq
    )
    return EstimatorBreakdown(
        terms=terms,
        eta=float(terms.sum()),
        osc=data_oscillation(mesh, spec, k),
        element_sq=element_sq,
        tri_sq=tri_sq,
        dual_sq=dual_sq,
        interior_sq=interior_sq,
        fracture_sq=tuple(fracture_sq),
        vertex_sq=tuple(vertex_sq),
    )


def localize(bd: EstimatorBreakdown, mesh: PolygonalMesh) -> np.ndarray:
    """Distribute squared residual contributions onto primal elements.

    Volume and dual-edge terms go to the owning element, interior-edge and
    fracture-edge terms split half-half between the two adjacent elements,
    and each vertex term splits equally among the distinct elements adjacent
    to its two fracture edges.  The result sums to the sum of squared family
    values.
    """
    return _localize_raw(
        mesh, bd.tri_sq, bd.dual_sq, bd.interior_sq, bd.fracture_sq, bd.vertex_sq
    )


def _localize_raw(mesh, tri_sq, dual_sq, interior_sq, fracture_sq, vertex_sq):
    sub = mesh.subdivision
    out = np.zeros(mesh.n_elements)
    np.add.at(out, sub.tri_polygon, tri_sq.sum(axis=1))

    duals = sub.edges_of_kind(DUAL)
    if duals.size:
        own = sub.tri_polygon[sub.edge_tris[duals, 0]]
        np.add.at(out, own, dual_sq)

    inner = sub.edges_of_kind(INTERIOR)
    if inner.size:
        for side in (0, 1):
            own = sub.tri_polygon[sub.edge_tris[inner, side]]
            np.add.at(out, own, 0.5 * interior_sq)

    for fi, fm in enumerate(sub.fracture_meshes):
        if fm.n_edges == 0:
            continue
        edge_sq = fracture_sq[fi].sum(axis=1)
        sides = sub.tri_polygon[sub.edge_tris[fm.edge_ids]]  # (ne, 2)
        for side in (0, 1):
            np.add.at(out, sides[:, side], 0.5 * edge_sq)
        for j, v_sq in enumerate(vertex_sq[fi]):
            elems = np.unique(sides[j : j + 2].ravel())
            out[elems] += v_sq / elems.size
    return out


def _monomials_1d(ts, k):
    return np.stack([(ts - 0.5) ** m for m in range(k + 1)], axis=-1)


def data_oscillation(mesh: PolygonalMesh, spec: ProblemSpec, k: int) -> float:
    """Weighted distance of the source data to piecewise polynomials.

    Bulk source against its elementwise L2 projection onto degree-k
    polynomials per triangle (weighted by the triangle diameter), fracture
    source against per-edge 1D projections (weighted by edge length and the
    fracture thickness).  Returns the square root of the total.
    """
    sub = mesh.subdivision
    total = 0.0

    rule = triangle_rule(2 * k + 12)
    qp, qw = map_to_triangles(rule, sub.tri_coords)
    nt, nq = qp.shape[:2]
    region = mesh.element_regions[sub.tri_polygon]
    f = spec.bulk_source(qp.reshape(-1, 2), np.repeat(region, nq)).reshape(nt, nq)
    if np.any(f):
        exps = _monomial_exponents(k)
        loc = (qp - sub.tri_centroid[:, None, :]) / sub.tri_diameter[:, None, None]
        mono = np.stack(
            [loc[..., 0] ** ex * loc[..., 1] ** ey for ex, ey in exps], axis=-1
        )
        G = np.einsum("tq,tqi,tqj->tij", qw, mono, mono)
        b = np.einsum("tq,tq,tqi->ti", qw, f, mono)
        c = np.linalg.solve(G, b[..., None])[..., 0]
        pf = np.einsum("ti,tqi->tq", c, mono)
        res = np.einsum("tq,tq->t", qw, (f - pf) ** 2)
        total += float((sub.tri_diameter**2 * res).sum())

    erule = edge_rule(2 * k + 12)
    ts, ws = erule.points, erule.weights
    for fi, fr in enumerate(mesh.fractures):
        fm = sub.fracture_meshes[fi]
        if fm.n_edges == 0:
            continue
        pts, par = _fracture_points(sub, fm, ts)
        ne = fm.n_edges
        fg = spec.fracture_source(
            pts.reshape(-1, 2), par.reshape(-1), np.full(ne * ts.size, fi)
        ).reshape(ne, ts.size)
        if not np.any(fg):
            continue
        mono = _monomials_1d(ts, k)  # (nq, k+1)
        G = np.einsum("q,qi,qj->ij", ws, mono, mono)
        b = np.einsum("q,eq,qi->ei", ws, fg, mono)
        c = np.linalg.solve(G, b.T).T
        pf = np.einsum("ei,qi->eq", c, mono)
        res = np.einsum("q,eq->e", ws, (fg - pf) ** 2) * fm.edge_length
        total += float(
            (fm.edge_length**2 * fr.thickness**2 * res).sum()
        )
    return float(np.sqrt(total))


@dataclass(frozen=True)
class ErrorReport:
    """True error components in the method's norms."""

    err_Q: float  # K^(-1/2)-weighted flux error
    v_exchange: float  # alpha^(-1/2) ({p err} - p_gamma err) over fracture edges
    v_jump: float  # eta^(-1/2) [p err] over fracture edges
    v_grad: float  # K^(1/2)-weighted broken pressure gradient error
    v_fracture: float  # K_gamma^(1/2) tangential fracture pressure gradient error
    flux_jump: float  # [(u - u_h) . n_gamma] over fracture edges
    flux_avg: float  # {(u - u_h) . n_gamma} over fracture edges
    err_V: float
    err_sdg: float
    EI: float  # eta / err_sdg; NaN when either input is unavailable

    @property
    def parts_sq(self) -> float:
        return (
            self.err_Q**2
            + self.v_exchange**2
            + self.v_jump**2
            + self.v_grad**2
            + self.v_fracture**2
            + self.flux_jump**2
            + self.flux_avg**2
        )


def true_error(mesh: PolygonalMesh, spec: ProblemSpec, sol, exact, eta=None) -> ErrorReport:
    if exact is None:
        raise NoExactSolution("benchmark provides no exact solution")
    sub = mesh.subdivision
    k = sol.S.k
    K_elem = spec.permeability(mesh.element_centroids)
    Kinv_elem = _inv_spd_2x2(K_elem)

    rule = triangle_rule(2 * k + 4)
    qp, qw = map_to_triangles(rule, sub.tri_coords)
    tris = np.arange(sub.n_triangles)
    nt, nq = qp.shape[:2]
    region = np.repeat(mesh.element_regions[sub.tri_polygon], nq)
    flat = qp.reshape(-1, 2)

    du = np.asarray(exact.u(flat, region)).reshape(nt, nq, 2) - sol.u_at(tris, qp)
    Kinv = Kinv_elem[sub.tri_polygon]
    err_Q2 = np.einsum("tq,tqc,tcd,tqd->", qw, du, Kinv, du)

    dg = np.asarray(exact.grad_p(flat, region)).reshape(nt, nq, 2) - sol.grad_p_at(
        tris, qp
    )
    K = K_elem[sub.tri_polygon]
    v_grad2 = np.einsum("tq,tqc,tcd,tqd->", qw, dg, K, dg)

    erule = edge_rule(2 * k + 4)
    ts, ws = erule.points, erule.weights
    v_exch2 = v_jump2 = v_frac2 = fj2 = fa2 = 0.0
    for fi, fr in enumerate(mesh.fractures):
        fm = sub.fracture_meshes[fi]
        ne = fm.n_edges
        if ne == 0:
            continue
        eta_e = fr.normal_resistance[fm.edge_segment]
        alpha_e = spec.exchange_resistance(fi)[fm.edge_segment]
        Kg = fr.tangential_conductivity[fm.edge_segment]
        le = fm.edge_length
        pts, par = _fracture_points(sub, fm, ts)
        flatp = pts.reshape(-1, 2)
        edges = fm.edge_ids
        n = sub.edge_normal[edges]
        t1s, t2s = sub.edge_tris[edges, 0], sub.edge_tris[edges, 1]
        reg1 = np.full(ne * ts.size, 1)
        reg2 = np.full(ne * ts.size, 2)
        fidx = np.full(ne * ts.size, fi)

        dp1 = np.asarray(exact.p(flatp, reg1)).reshape(ne, -1) - sol.p_at(t1s, pts)
        dp2 = np.asarray(exact.p(flatp, reg2)).reshape(ne, -1) - sol.p_at(t2s, pts)
        dpg = np.asarray(exact.p_gamma(flatp, par.reshape(-1), fidx)).reshape(
            ne, -1
        ) - sol.p_gamma_at(fi, ts)
        dun1 = np.einsum(
            "eqc,ec->eq",
            np.asarray(exact.u(flatp, reg1)).reshape(ne, -1, 2), n,
        ) - np.einsum("eqc,ec->eq", sol.u_at(t1s, pts), n)
        dun2 = np.einsum(
            "eqc,ec->eq",
            np.asarray(exact.u(flatp, reg2)).reshape(ne, -1, 2), n,
        ) - np.einsum("eqc,ec->eq", sol.u_at(t2s, pts), n)

        wl = ws[None, :] * le[:, None]
        v_exch2 += (((dp1 + dp2) / 2.0 - dpg) ** 2 * wl).sum(axis=1) @ (1.0 / alpha_e)
        v_jump2 += ((dp1 - dp2) ** 2 * wl).sum(axis=1) @ (1.0 / eta_e)
        ddg = np.asarray(
            exact.dp_gamma_dt(flatp, par.reshape(-1), fidx)
        ).reshape(ne, -1) - sol.dp_gamma_dt_at(fi, ts)
        v_frac2 += (ddg**2 * wl).sum(axis=1) @ Kg
        fj2 += float(((dun1 - dun2) ** 2 * wl).sum())
        fa2 += float((((dun1 + dun2) / 2.0) ** 2 * wl).sum())

    err_V2 = v_exch2 + v_jump2 + v_grad2 + v_frac2
    total2 = err_Q2 + err_V2 + fj2 + fa2
    total = float(np.sqrt(total2))
    # an error at roundoff scale means the solution is representable and the
    # ratio would be noise over noise
    if eta is None or total <= 1e-9:
        ei = float("nan")
    else:
        ei = float(eta / total)
    return ErrorReport(
        err_Q=float(np.sqrt(err_Q2)),
        v_exchange=float(np.sqrt(v_exch2)),
        v_jump=float(np.sqrt(v_jump2)),
        v_grad=float(np.sqrt(v_grad2)),
        v_fracture=float(np.sqrt(v_frac2)),
        flux_jump=float(np.sqrt(fj2)),
        flux_avg=float(np.sqrt(fa2)),
        err_V=float(np.sqrt(err_V2)),
        err_sdg=total,
        EI=ei,
    )
