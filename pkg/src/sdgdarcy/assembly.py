"""Assembly of the coupled saddle-point system.

Unknown blocks are ordered (u, p, p_gamma).  All matrices are assembled over
the full dof sets; ``assemble_system`` reduces to free dofs in one step and
moves Dirichlet data to the right-hand side.  The flux equation pairs the
flux mass matrix with the transposed pressure-gradient form applied to the
full pressure vector, so interpolated Dirichlet values enter it naturally;
the pressure equation enforces prescribed Neumann fluxes weakly through a
boundary load.  ``assemble_bh_star`` provides the facewise adjoint form on
its own; it agrees with B^T on pressures with zero boundary trace, which the
tests use as a cross-check of the two assembly paths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import DUAL, FRACTURE, INTERIOR, PolygonalMesh, Subdivision
from .problem import ProblemSpec
from .quadrature import edge_rule, map_to_triangles, triangle_rule
from .spaces import (
    FluxSpace,
    FracturePressureSpace,
    PressureSpace,
    SpaceConfig,
    build_S_h,
    build_V_h,
    build_W_h,
)


def _coo(rows, cols, vals, shape):
    if not rows:
        return sp.csr_matrix(shape)
    r = np.concatenate([np.asarray(a).ravel() for a in rows])
    c = np.concatenate([np.asarray(a).ravel() for a in cols])
    v = np.concatenate([np.asarray(a).ravel() for a in vals])
    return sp.coo_matrix((v, (r, c)), shape=shape).tocsr()


def _block(dofs_i, dofs_j, local):
    """Triplets for per-element dense blocks (n, ni, nj)."""
    rows = np.broadcast_to(dofs_i[:, :, None], local.shape)
    cols = np.broadcast_to(dofs_j[:, None, :], local.shape)
    return rows, cols, local


def _edge_points(sub: Subdivision, edges: np.ndarray, ts: np.ndarray):
    """Quadrature points along edges in canonical (low to high id) direction."""
    ev = sub.edge_vertices[edges]
    lo = sub.vertices[ev.min(axis=1)]
    hi = sub.vertices[ev.max(axis=1)]
    return lo[:, None, :] + ts[None, :, None] * (hi - lo)[:, None, :]


def _s_traces(space: PressureSpace, tris: np.ndarray, pts: np.ndarray):
    """Pressure basis values of given triangles at physical points."""
    ref = space.sub.reference_coords(tris, pts)
    return space.eval_ref(ref)


def assemble_mass(sub: Subdivision, V: FluxSpace, K_elem: np.ndarray) -> sp.csr_matrix:
    """Flux mass matrix weighted by the inverse permeability."""
    k = V.k
    rule = triangle_rule(2 * k + 2)
    qp, qw = map_to_triangles(rule, sub.tri_coords)
    tris = np.arange(sub.n_triangles)
    basis = V.basis_values(tris, qp)  # (nt, nq, nloc, 2)
    K = K_elem[sub.tri_polygon]
    det = K[:, 0, 0] * K[:, 1, 1] - K[:, 0, 1] * K[:, 1, 0]
    Kinv = np.empty_like(K)
    Kinv[:, 0, 0] = K[:, 1, 1]
    Kinv[:, 1, 1] = K[:, 0, 0]
    Kinv[:, 0, 1] = -K[:, 0, 1]
    Kinv[:, 1, 0] = -K[:, 1, 0]
    Kinv /= det[:, None, None]
    kb = np.einsum("tcd,tqld->tqlc", Kinv, basis)
    local = np.einsum("tq,tqlc,tqmc->tlm", qw, basis, kb)
    r, c, v = _block(V.tri_dofs, V.tri_dofs, local)
    return _coo([r], [c], [v], (V.ndof, V.ndof))


def assemble_bh(sub: Subdivision, V: FluxSpace, S: PressureSpace) -> sp.csr_matrix:
    """b_h(u, q) = -sum_{dual e} <u.n, [q]>_e + sum_tau (u, grad q)_tau.

    Rows are pressure dofs, columns flux dofs: b_h(u, q) = q^T B u.
    """
    k = V.k
    rows, cols, vals = [], [], []

    rule = triangle_rule(2 * k + 2)
    qp, qw = map_to_triangles(rule, sub.tri_coords)
    tris = np.arange(sub.n_triangles)
    vb = V.basis_values(tris, qp)  # (nt, nq, nv, 2)
    gref = S.grad_ref(rule.points)  # (nq, ns, 2)
    gphys = np.einsum("qsr,trc->tqsc", gref, sub.tri_jacobian_inv)
    local = np.einsum("tq,tqsc,tqvc->tsv", qw, gphys, vb)
    r, c, v = _block(S.tri_dofs, V.tri_dofs, local)
    rows.append(r), cols.append(c), vals.append(v)

    erule = edge_rule(2 * k + 2)
    ts, ws = erule.points, erule.weights
    duals = sub.edges_of_kind(DUAL)
    if duals.size:
        pts = _edge_points(sub, duals, ts)
        L = V.edge_trace_matrix(ts)  # (nq, k+1)
        wl = sub.edge_length[duals]
        vdofs = V.edge_side_dofs[duals, 0]  # shared on dual edges
        for side, sign in ((0, 1.0), (1, -1.0)):
            t = sub.edge_tris[duals, side]
            sb = _s_traces(S, t, pts)  # (ne, nq, ns)
            local = -sign * np.einsum("q,e,qj,eqs->esj", ws, wl, L, sb)
            r, c, v = _block(S.tri_dofs[t], vdofs, local)
            rows.append(r), cols.append(c), vals.append(v)

    return _coo(rows, cols, vals, (S.ndof, V.ndof))


def assemble_bh_star(sub: Subdivision, V: FluxSpace, S: PressureSpace) -> sp.csr_matrix:
    """Adjoint pressure-gradient form; rows flux dofs, columns pressure dofs.

    b_h*(p, v) = sum_{interior e} <p, [v.n]>_e - sum_tau (p, div v)_tau
               + sum_{fracture e} (<[p], {v.n}>_e + <{p}, [v.n]>_e).
    """
    k = V.k
    rows, cols, vals = [], [], []

    rule = triangle_rule(2 * k + 2)
    qp, qw = map_to_triangles(rule, sub.tri_coords)
    tris = np.arange(sub.n_triangles)
    div = V.basis_divergence(tris, qp)  # (nt, nq, nv)
    sv = S.eval_ref(rule.points)  # (nq, ns)
    local = -np.einsum("tq,tqv,qs->tvs", qw, div, sv)
    r, c, v = _block(V.tri_dofs, S.tri_dofs, local)
    rows.append(r), cols.append(c), vals.append(v)

    erule = edge_rule(2 * k + 2)
    ts, ws = erule.points, erule.weights
    L = V.edge_trace_matrix(ts)
    # interior primal edges carry <p, [v.n]>; p is single valued across them
    # but each side's triangle expands it in its own local dofs, so both the
    # trial traces and the test dofs are taken per side.  Fracture edges use
    # the same per-side pairing: the combination of jump and average terms
    # collapses to <p1, v1.n> - <p2, v2.n>.
    for kind in (INTERIOR, FRACTURE):
        edges = sub.edges_of_kind(kind)
        if edges.size == 0:
            continue
        pts = _edge_points(sub, edges, ts)
        wl = sub.edge_length[edges]
        for side, sign in ((0, 1.0), (1, -1.0)):
            t = sub.edge_tris[edges, side]
            sb = _s_traces(S, t, pts)
            local = sign * np.einsum("q,e,qj,eqs->ejs", ws, wl, L, sb)
            r, c, v = _block(V.edge_side_dofs[edges, side], S.tri_dofs[t], local)
            rows.append(r), cols.append(c), vals.append(v)

    return _coo(rows, cols, vals, (V.ndof, S.ndof))


def _fracture_edge_frame(sub: Subdivision, fi: int):
    """Per fracture edge: global id, endpoints in polyline direction, length."""
    fm = sub.fracture_meshes[fi]
    a = sub.vertices[fm.vertex_ids[:-1]]
    b = sub.vertices[fm.vertex_ids[1:]]
    return fm, a, b


def assemble_interface(sub: Subdivision, S: PressureSpace, W: FracturePressureSpace, spec: ProblemSpec):
    """Interface coupling blocks (C_pp, C_pw, C_ww_coupling).

    C_pp collects <(1/alpha){p},{q}> + <(1/eta)[p],[q]> over fracture edges,
    C_pw the -<(1/alpha) p_gamma, {q}> pairing (its transpose enters the
    fracture equation), C_ww the +<(1/alpha) p_gamma, q_gamma> mass.
    """
    k = S.k
    erule = edge_rule(2 * k + 2)
    ts, ws = erule.points, erule.weights
    rows_pp, cols_pp, vals_pp = [], [], []
    rows_pw, cols_pw, vals_pw = [], [], []
    rows_ww, cols_ww, vals_ww = [], [], []

    for fi, fr in enumerate(sub.mesh.fractures):
        fm, a, b = _fracture_edge_frame(sub, fi)
        if fm.n_edges == 0:
            continue
        eta = fr.normal_resistance[fm.edge_segment]
        alpha = spec.exchange_resistance(fi)[fm.edge_segment]
        pts = a[:, None, :] + ts[None, :, None] * (b - a)[:, None, :]
        wl = fm.edge_length
        t1 = sub.edge_tris[fm.edge_ids, 0]
        t2 = sub.edge_tris[fm.edge_ids, 1]
        s1 = _s_traces(S, t1, pts)  # (ne, nq, ns)
        s2 = _s_traces(S, t2, pts)
        wb = W.eval_ref(ts)  # (nq, k+1)
        d1 = S.tri_dofs[t1]
        d2 = S.tri_dofs[t2]
        wd = W.edge_dofs[fi]

        avg = [(d1, 0.5 * s1), (d2, 0.5 * s2)]
        jmp = [(d1, s1), (d2, -s2)]
        for da, sa in avg:
            for db, sb_ in avg:
                local = np.einsum("q,e,eqs,eqr->esr", ws, wl / alpha, sa, sb_)
                r, c, v = _block(da, db, local)
                rows_pp.append(r), cols_pp.append(c), vals_pp.append(v)
        for da, sa in jmp:
            for db, sb_ in jmp:
                local = np.einsum("q,e,eqs,eqr->esr", ws, wl / eta, sa, sb_)
                r, c, v = _block(da, db, local)
                rows_pp.append(r), cols_pp.append(c), vals_pp.append(v)
        for da, sa in avg:
            local = -np.einsum("q,e,eqs,qj->esj", ws, wl / alpha, sa, wb)
            r, c, v = _block(da, wd, local)
            rows_pw.append(r), cols_pw.append(c), vals_pw.append(v)
        local = np.einsum("q,e,qi,qj->eij", ws, wl / alpha, wb, wb)
        r, c, v = _block(wd, wd, local)
        rows_ww.append(r), cols_ww.append(c), vals_ww.append(v)

    C_pp = _coo(rows_pp, cols_pp, vals_pp, (S.ndof, S.ndof))
    C_pw = _coo(rows_pw, cols_pw, vals_pw, (S.ndof, W.ndof))
    C_ww = _coo(rows_ww, cols_ww, vals_ww, (W.ndof, W.ndof))
    return C_pp, C_pw, C_ww


def assemble_fracture_stiffness(sub: Subdivision, W: FracturePressureSpace, spec: ProblemSpec) -> sp.csr_matrix:
    """Tangential stiffness <K_gamma dp/dt, dq/dt> along each fracture."""
    k = W.k
    erule = edge_rule(max(2 * k - 2, 0))
    ts, ws = erule.points, erule.weights
    rows, cols, vals = [], [], []
    for fi, fr in enumerate(sub.mesh.fractures):
        fm, _, _ = _fracture_edge_frame(sub, fi)
        if fm.n_edges == 0:
            continue
        Kg = fr.tangential_conductivity[fm.edge_segment]
        dref = W.deriv_ref(ts)  # (nq, k+1)
        local = np.einsum("q,e,qi,qj->eij", ws, Kg / fm.edge_length, dref, dref)
        r, c, v = _block(W.edge_dofs[fi], W.edge_dofs[fi], local)
        rows.append(r), cols.append(c), vals.append(v)
    return _coo(rows, cols, vals, (W.ndof, W.ndof))


def assemble_rhs(sub: Subdivision, spec: ProblemSpec, V: FluxSpace, S: PressureSpace, W: FracturePressureSpace) -> np.ndarray:
    """Source and Neumann-data vector over the full (u, p, p_gamma) dofs.

    The pressure block carries (f, q) - <g_N, q> on Neumann edges; the
    fracture block carries <l_gamma f_gamma, q_gamma>.  Dirichlet lifting is
    applied by ``assemble_system`` during reduction.
    """
    k = S.k
    rhs = np.zeros(V.ndof + S.ndof + W.ndof)
    sview = rhs[V.ndof : V.ndof + S.ndof]
    wview = rhs[V.ndof + S.ndof :]

    rule = triangle_rule(2 * k + 2)
    qp, qw = map_to_triangles(rule, sub.tri_coords)
    region = sub.mesh.element_regions[sub.tri_polygon]
    nt, nq = qp.shape[:2]
    fvals = spec.bulk_source(
        qp.reshape(-1, 2), np.repeat(region, nq)
    ).reshape(nt, nq)
    sv = S.eval_ref(rule.points)
    local = np.einsum("tq,tq,qs->ts", qw, fvals, sv)
    np.add.at(sview, S.tri_dofs, local)

    table = spec.boundary_table(sub)
    erule = edge_rule(2 * k + 2)
    ts, ws = erule.points, erule.weights
    neu = table.neumann_edges
    if neu.size:
        rule_of = dict(zip(table.edges.tolist(), table.rule_index.tolist()))
        pts = _edge_points(sub, neu, ts)
        t1 = sub.edge_tris[neu, 0]
        sb = _s_traces(S, t1, pts)
        wl = sub.edge_length[neu]
        mids = sub.edge_midpoint[neu]
        g = np.empty((neu.size, ts.size))
        for i, e in enumerate(neu):
            rule_fn = spec.boundary[rule_of[int(e)]].value
            g[i] = np.asarray(
                rule_fn(pts[i], np.tile(mids[i], (ts.size, 1))), dtype=float
            )
        local = -np.einsum("q,e,eq,eqs->es", ws, wl, g, sb)
        np.add.at(sview, S.tri_dofs[t1], local)

    for fi, fr in enumerate(sub.mesh.fractures):
        fm, a, b = _fracture_edge_frame(sub, fi)
        if fm.n_edges == 0:
            continue
        pts = a[:, None, :] + ts[None, :, None] * (b - a)[:, None, :]
        vparam = np.concatenate([[0.0], np.cumsum(fm.edge_length)])
        par = vparam[:-1, None] + ts[None, :] * fm.edge_length[:, None]
        ne = fm.n_edges
        fg = spec.fracture_source(
            pts.reshape(-1, 2), par.reshape(-1), np.full(ne * ts.size, fi)
        ).reshape(ne, ts.size)
        wb = W.eval_ref(ts)
        local = fr.thickness * np.einsum(
            "q,e,eq,qj->ej", ws, fm.edge_length, fg, wb
        )
        np.add.at(wview, W.edge_dofs[fi], local)

    return rhs


def dirichlet_values(sub: Subdivision, spec: ProblemSpec, S: PressureSpace, W: FracturePressureSpace):
    """Full-length (p, p_gamma) vectors holding boundary data on constrained dofs."""
    p_dir = np.zeros(S.ndof)
    table = spec.boundary_table(sub)
    rule_of = dict(zip(table.edges.tolist(), table.rule_index.tolist()))
    dofs = np.flatnonzero(S.dirichlet_mask)
    if dofs.size:
        edges = S.dof_edge[dofs]
        for e in np.unique(edges):
            sel = dofs[edges == e]
            fn = spec.boundary[rule_of[int(e)]].value
            mids = np.tile(sub.edge_midpoint[e], (sel.size, 1))
            p_dir[sel] = np.asarray(fn(S.node_coords[sel], mids), dtype=float)

    w_dir = np.zeros(W.ndof)
    for fi, end in spec.dirichlet_tips():
        dof = W.edge_dofs[fi][0, 0] if end == 0 else W.edge_dofs[fi][-1, -1]
        w_dir[dof] = spec.tip_value(fi, end)
    return p_dir, w_dir


@dataclass(frozen=True)
class LinearSystem:
    """Reduced sparse system over free dofs, ordered (u, p, p_gamma)."""

    A: sp.csr_matrix
    rhs: np.ndarray
    offsets: tuple  # (0, nV, nV + nS_free, n_total)
    V: FluxSpace
    S: PressureSpace
    W: FracturePressureSpace
    s_free: np.ndarray
    w_free: np.ndarray
    p_dir: np.ndarray
    w_dir: np.ndarray
    mesh: PolygonalMesh
    spec: ProblemSpec

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def expand(self, x: np.ndarray) -> "DiscreteSolution":
        nV = self.offsets[1]
        u = x[:nV].copy()
        p = self.p_dir.copy()
        p[self.s_free] = x[nV : self.offsets[2]]
        pg = self.w_dir.copy()
        pg[self.w_free] = x[self.offsets[2] :]
        return DiscreteSolution(
            mesh=self.mesh, V=self.V, S=self.S, W=self.W, u=u, p=p, p_gamma=pg
        )


@dataclass(frozen=True)
class DiscreteSolution:
    """Full coefficient vectors of one discrete solution."""

    mesh: PolygonalMesh
    V: FluxSpace
    S: PressureSpace
    W: FracturePressureSpace
    u: np.ndarray
    p: np.ndarray
    p_gamma: np.ndarray

    @property
    def sub(self) -> Subdivision:
        return self.mesh.subdivision

    @property
    def n_dofs(self) -> int:
        """Total dofs of the discrete spaces (constraints included)."""
        return self.V.ndof + self.S.ndof + self.W.ndof

    def p_at(self, tris: np.ndarray, pts: np.ndarray) -> np.ndarray:
        vals = _s_traces(self.S, tris, pts)
        return np.einsum("eqs,es->eq", vals, self.p[self.S.tri_dofs[tris]])

    def grad_p_at(self, tris: np.ndarray, pts: np.ndarray) -> np.ndarray:
        sub = self.sub
        ref = sub.reference_coords(tris, pts)
        gref = self.S.grad_ref(ref)  # (e, q, s, 2)
        g = np.einsum("eqsr,erc->eqsc", gref, sub.tri_jacobian_inv[tris])
        return np.einsum("eqsc,es->eqc", g, self.p[self.S.tri_dofs[tris]])

    def u_at(self, tris: np.ndarray, pts: np.ndarray) -> np.ndarray:
        basis = self.V.basis_values(tris, pts)
        return np.einsum("eqlc,el->eqc", basis, self.u[self.V.tri_dofs[tris]])

    def div_u_at(self, tris: np.ndarray, pts: np.ndarray) -> np.ndarray:
        div = self.V.basis_divergence(tris, pts)
        return np.einsum("eql,el->eq", div, self.u[self.V.tri_dofs[tris]])

    def u_normal_trace(self, edges: np.ndarray, side: int, ts: np.ndarray) -> np.ndarray:
        """u.n_e along edges at canonical parameters ts; (ne, nq)."""
        L = self.V.edge_trace_matrix(ts)
        dofs = self.V.edge_side_dofs[edges, side]
        return np.einsum("qj,ej->eq", L, self.u[dofs])

    def p_gamma_at(self, fi: int, ts: np.ndarray) -> np.ndarray:
        """Fracture pressure on every edge of fracture fi at parameters ts."""
        wb = self.W.eval_ref(ts)
        return np.einsum("qj,ej->eq", wb, self.p_gamma[self.W.edge_dofs[fi]])

    def dp_gamma_dt_at(self, fi: int, ts: np.ndarray) -> np.ndarray:
        fm = self.sub.fracture_meshes[fi]
        db = self.W.deriv_ref(ts)
        return (
            np.einsum("qj,ej->eq", db, self.p_gamma[self.W.edge_dofs[fi]])
            / fm.edge_length[:, None]
        )


def assemble_system(mesh: PolygonalMesh, spec: ProblemSpec, config: SpaceConfig) -> LinearSystem:
    sub = mesh.subdivision
    table = spec.boundary_table(sub)
    S = build_S_h(mesh, config, dirichlet_edges=table.dirichlet_edges)
    V = build_V_h(mesh, config)
    W = build_W_h(mesh, config, dirichlet_tips=spec.dirichlet_tips())

    K_elem = spec.permeability(mesh.element_centroids)
    M = assemble_mass(sub, V, K_elem)
    B = assemble_bh(sub, V, S)
    C_pp, C_pw, C_ww_cpl = assemble_interface(sub, S, W, spec)
    C_ww = C_ww_cpl + assemble_fracture_stiffness(sub, W, spec)

    # The flux row pairs with the full pressure vector through B^T, which
    # equals the facewise adjoint form plus the boundary trace pairing
    # <p, v.n>_bnd.  On zero-boundary-trace pressures the two coincide; the
    # extra columns put interpolated Dirichlet values into the flux equation
    # (moved to the rhs below) and keep the Neumann-edge pressure trace
    # coupled, which is what makes interpolated boundary data exactly
    # consistent.
    nV, nS, nW = V.ndof, S.ndof, W.ndof
    A_full = sp.bmat(
        [
            [M, B.T, None],
            [-B, C_pp, C_pw],
            [None, C_pw.T, C_ww],
        ],
        format="csr",
    )
    rhs_full = assemble_rhs(sub, spec, V, S, W)

    p_dir, w_dir = dirichlet_values(sub, spec, S, W)
    x_dir = np.concatenate([np.zeros(nV), p_dir, w_dir])
    s_free = np.flatnonzero(~S.dirichlet_mask)
    w_free = np.flatnonzero(~W.dirichlet_mask)
    free = np.concatenate([np.arange(nV), nV + s_free, nV + nS + w_free])

    rhs_lifted = rhs_full - A_full @ x_dir
    A = A_full[free][:, free].tocsr()
    rhs = rhs_lifted[free]
    offsets = (0, nV, nV + s_free.size, nV + s_free.size + w_free.size)
    return LinearSystem(
        A=A,
        rhs=rhs,
        offsets=offsets,
        V=V,
        S=S,
        W=W,
        s_free=s_free,
        w_free=w_free,
        p_dir=p_dir,
        w_dir=w_dir,
        mesh=mesh,
        spec=spec,
    )
