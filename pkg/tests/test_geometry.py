import math

import numpy as np
import pytest

from sdgdarcy.errors import EmptyDomain, FractureNotAligned, NotStarShaped
from sdgdarcy.geometry import (
    BOUNDARY,
    DUAL,
    FRACTURE,
    INTERIOR,
    DomainSpec,
    PolygonalMesh,
    build_initial_mesh,
    check_regularity,
    refine,
    subdivide,
)

from conftest import make_fracture


def test_two_square_fracture_counts(two_square_fractured):
    mesh = two_square_fractured
    assert mesh.n_elements == 2
    sub = mesh.subdivision
    assert sub.n_triangles == 8
    assert sub.edges_of_kind(INTERIOR).size == 0
    assert sub.edges_of_kind(FRACTURE).size == 1
    assert sub.edges_of_kind(BOUNDARY).size == 6
    assert sub.edges_of_kind(DUAL).size == 8


def test_two_square_plain_counts(two_square_plain):
    sub = two_square_plain.subdivision
    assert sub.edges_of_kind(INTERIOR).size == 1
    assert sub.edges_of_kind(FRACTURE).size == 0
    assert sub.edges_of_kind(BOUNDARY).size == 6


def test_every_triangle_has_one_primal_and_two_dual_edges(two_square_fractured):
    sub = two_square_fractured.subdivision
    # count edge-to-triangle incidences by kind
    per_tri_dual = np.zeros(sub.n_triangles, dtype=int)
    per_tri_primal = np.zeros(sub.n_triangles, dtype=int)
    for eid in range(sub.n_edges):
        for t in sub.edge_tris[eid]:
            if t < 0:
                continue
            if sub.edge_kind[eid] == DUAL:
                per_tri_dual[t] += 1
            else:
                per_tri_primal[t] += 1
    assert np.all(per_tri_primal == 1)
    assert np.all(per_tri_dual == 2)


def test_lshape_cell_count():
    dom = DomainSpec(rectangles=[(0.0, 0.0, 2.0, 1.0), (1.0, -1.0, 2.0, 0.0)])
    mesh = build_initial_mesh(dom, 0.5)
    assert mesh.n_elements == 12


def test_fracture_side_orientation(two_square_fractured):
    sub = two_square_fractured.subdivision
    (eid,) = sub.edges_of_kind(FRACTURE)
    assert np.allclose(sub.edge_normal[eid], [1.0, 0.0])
    t1, t2 = sub.edge_tris[eid]
    assert sub.tri_centroid[t1, 0] < 1.0 < sub.tri_centroid[t2, 0]
    assert two_square_fractured.element_regions.tolist() == [1, 2]


def test_refine_creates_pentagon_and_splits_fracture(two_square_fractured):
    mesh = two_square_fractured
    m2 = refine(mesh, [0])
    # left square -> 4 quads, right square survives as a pentagon
    assert m2.n_elements == 5
    sizes = sorted(len(c) for c in m2.polygons)
    assert sizes == [4, 4, 4, 4, 5]
    penta = [i for i, c in enumerate(m2.polygons) if len(c) == 5][0]
    assert len(m2.hanging[penta]) == 1
    (h,) = m2.hanging[penta]
    assert np.allclose(m2.vertices[h], [1.0, 0.5])
    sub = m2.subdivision
    assert sub.edges_of_kind(FRACTURE).size == 2
    fm = sub.fracture_meshes[0]
    assert fm.n_edges == 2
    assert np.allclose(sub.vertices[fm.vertex_ids[0]], [1.0, 0.0])
    assert np.allclose(sub.vertices[fm.vertex_ids[-1]], [1.0, 1.0])
    assert abs(fm.edge_length.sum() - 1.0) < 1e-12
    # each fracture edge still has one triangle per side
    for eid in sub.edges_of_kind(FRACTURE):
        t1, t2 = sub.edge_tris[eid]
        assert t1 >= 0 and t2 >= 0
        assert sub.tri_centroid[t1, 0] < 1.0 < sub.tri_centroid[t2, 0]


def test_uniform_refinement_counts(two_square_fractured):
    mesh = two_square_fractured
    counts = [mesh.n_elements]
    for _ in range(2):
        mesh = refine(mesh, range(mesh.n_elements))
        counts.append(mesh.n_elements)
    assert counts == [2, 8, 32]


def test_closure_blocks_stacked_hanging_nodes():
    dom = DomainSpec(rectangles=[(0.0, 0.0, 3.0, 1.0)])
    mesh = build_initial_mesh(dom, 1.0)  # cells A, B, C left to right
    m1 = refine(mesh, [0])
    assert m1.n_elements == 6  # 4 children + pentagon B + square C
    # find the child of A with an edge on x = 1 touching the hanging node
    target = None
    for i, cyc in enumerate(m1.polygons):
        pts = m1.vertices[list(cyc)]
        if len(cyc) == 4 and np.all(pts[:, 0] <= 1.0) and np.isclose(pts[:, 0].max(), 1.0):
            if np.isclose(pts[pts[:, 0] == 1.0][:, 1].max(), 0.5):
                target = i
                break
    assert target is not None
    m2 = refine(m1, [target])
    # closure must also refine the pentagon, which splits at its absorbed
    # vertex into 4 children: 6 - 2 marked + 4 + 4
    assert m2.n_elements == 12


def test_refine_empty_marked_is_identity(two_square_fractured):
    assert refine(two_square_fractured, []) is two_square_fractured


def test_regularity_unit_squares(two_square_fractured):
    rep = check_regularity(two_square_fractured)
    assert abs(rep.rho_E - 1.0 / math.sqrt(2.0)) < 1e-12
    assert abs(rep.rho_S - 0.5 / math.sqrt(2.0)) < 1e-12
    assert abs(rep.h_max - math.sqrt(2.0)) < 1e-12
    assert rep.ok(0.2, 0.2)


def test_regularity_pentagon_with_flat_vertex(two_square_fractured):
    m2 = refine(two_square_fractured, [0])
    rep = check_regularity(m2)
    # pentagon edges 1/2; its diameter stays sqrt(2)
    assert abs(rep.rho_E - 0.5 / math.sqrt(2.0)) < 1e-12
    # inscribed ball of the flat-vertex pentagon is still the square's
    assert rep.rho_S > 0.3


def test_sliver_flagged():
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.02], [0.0, 0.02]])
    mesh = PolygonalMesh(
        vertices=verts,
        polygons=[(0, 1, 2, 3)],
        hanging=[frozenset()],
        fractures=(),
        tolerance=1e-10,
    )
    rep = check_regularity(mesh)
    assert rep.rho_S < 0.2
    assert not rep.ok(rho_S_floor=0.2)


def test_fracture_misaligned_rejected():
    dom = DomainSpec(
        rectangles=[(0.0, 0.0, 2.0, 1.0)],
        fractures=[make_fracture([[0.3, 0.0], [0.3, 1.0]])],
    )
    with pytest.raises(FractureNotAligned):
        build_initial_mesh(dom, 0.25)


def test_fracture_on_boundary_rejected():
    dom = DomainSpec(
        rectangles=[(0.0, 0.0, 2.0, 1.0)],
        fractures=[make_fracture([[0.0, 0.0], [0.0, 1.0]])],
    )
    with pytest.raises(FractureNotAligned):
        build_initial_mesh(dom, 0.5)


def test_fracture_snapping():
    dom = DomainSpec(
        rectangles=[(0.0, 0.0, 2.0, 1.0)],
        fractures=[make_fracture([[1.0 + 1e-12, 0.0], [1.0 - 1e-12, 1.0]])],
    )
    mesh = build_initial_mesh(dom, 0.5)
    assert np.allclose(mesh.fractures[0].points, [[1.0, 0.0], [1.0, 1.0]])


def test_empty_domain_rejected():
    with pytest.raises(EmptyDomain):
        DomainSpec(rectangles=[])


def test_not_star_shaped_rejected():
    verts = np.array([[0.0, 0.0], [2.0, 0.0], [0.5, 0.5], [0.0, 2.0]])
    mesh = PolygonalMesh(
        vertices=verts,
        polygons=[(0, 1, 2, 3)],
        hanging=[frozenset()],
        fractures=(),
        tolerance=1e-10,
    )
    with pytest.raises(NotStarShaped):
        subdivide(mesh)


def test_random_refinement_invariants():
    rng = np.random.default_rng(20240817)
    dom = DomainSpec(
        rectangles=[(0.0, 0.0, 2.0, 1.0)],
        fractures=[make_fracture([[1.0, 0.0], [1.0, 1.0]])],
    )
    base = build_initial_mesh(dom, 0.5)
    for _ in range(100):
        mesh = base
        for _ in range(3):
            n = mesh.n_elements
            k = int(rng.integers(1, max(2, n // 3)))
            marked = rng.choice(n, size=k, replace=False)
            mesh = refine(mesh, marked)
        sub = mesh.subdivision
        # triangle incidence: one primal-family edge, two dual edges each
        dual_count = np.zeros(sub.n_triangles, dtype=int)
        primal_count = np.zeros(sub.n_triangles, dtype=int)
        for eid in range(sub.n_edges):
            kind = sub.edge_kind[eid]
            for t in sub.edge_tris[eid]:
                if t < 0:
                    continue
                if kind == DUAL:
                    dual_count[t] += 1
                else:
                    primal_count[t] += 1
        assert np.all(primal_count == 1)
        assert np.all(dual_count == 2)
        # fracture conformity: edges chain tip to tip with full length
        fm = sub.fracture_meshes[0]
        assert abs(fm.edge_length.sum() - 1.0) < 1e-12
        assert np.allclose(sub.vertices[fm.vertex_ids[0]], [1.0, 0.0], atol=1e-12)
        assert np.allclose(sub.vertices[fm.vertex_ids[-1]], [1.0, 1.0], atol=1e-12)
        # sanity bound only: arbitrary random marking is harsher than
        # error-driven marking (a cell can keep hanging nodes on several
        # edges while staying unrefined); the 0.2 floor for adaptive runs
        # is audited in test_adaptivity.py
        assert mesh.rho_E > 0.15
