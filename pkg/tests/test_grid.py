import json

import numpy as np
import pytest

from locrb.errors import ConfigurationError
from locrb.grid import BOUNDARY, COUPLING, INNER, build_mesh


def test_two_by_two_single_subdomain():
    mesh = build_mesh((0, 1, 0, 1), (2, 2), (1, 1))
    assert mesh.n_triangles == 8
    assert mesh.n_subdomains == 1
    assert len(mesh.boundary_faces) == 8
    assert (mesh.face_kind == INNER).sum() == 8
    assert len(mesh.coupling_faces) == 0


def test_two_by_two_split_subdomains():
    ref = build_mesh((0, 1, 0, 1), (2, 2), (1, 1))
    mesh = build_mesh((0, 1, 0, 1), (2, 2), (2, 1))
    assert mesh.n_triangles == ref.n_triangles
    assert mesh.n_subdomains == 2
    cf = mesh.coupling_faces
    assert len(cf) == 2
    ends = mesh.vertices[mesh.face_vertices[cf]]
    assert np.all(ends[:, :, 0] == 0.5)


def test_minimal_mesh():
    mesh = build_mesh((0, 1, 0, 1), (1, 1), (1, 1))
    assert mesh.n_triangles == 2
    assert (mesh.face_kind == INNER).sum() == 1
    assert len(mesh.boundary_faces) == 4


@pytest.mark.parametrize("fine,coarse", [((3, 2), (2, 1)), ((4, 3), (1, 2))])
def test_non_divisible_counts_rejected(fine, coarse):
    with pytest.raises(ConfigurationError) as err:
        build_mesh((0, 1, 0, 1), fine, coarse)
    message = str(err.value)
    assert "divisible" in message
    assert str(fine[0]) in message or str(fine[1]) in message


def test_bad_counts_and_degenerate_domain_rejected():
    with pytest.raises(ConfigurationError):
        build_mesh((0, 1, 0, 1), (0, 2), (1, 1))
    with pytest.raises(ConfigurationError):
        build_mesh((0, 0, 0, 1), (2, 2), (1, 1))


def test_face_measures():
    mesh = build_mesh((0, 1, 0, 1), (2, 2), (1, 1))
    p0 = mesh.vertices[mesh.face_vertices[:, 0]]
    p1 = mesh.vertices[mesh.face_vertices[:, 1]]
    horiz = np.nonzero((p0[:, 1] == 0.0) & (p1[:, 1] == 0.0))[0][0]
    assert mesh.face_measure(horiz) == pytest.approx(0.5, abs=1e-15)

    unit = build_mesh((0, 1, 0, 1), (1, 1), (1, 1))
    diag = int(unit.interior_faces[0])
    assert unit.face_measure(diag) == pytest.approx(np.sqrt(2.0), rel=1e-15)
    assert np.allclose([unit.face_measure(f) for f in range(unit.n_faces)], unit.face_h)


def test_area_partition_per_subdomain():
    mesh = build_mesh((0, 2, 0, 1), (8, 4), (4, 2))
    for s, (ax, bx, ay, by) in enumerate(mesh.subdomain_rects):
        tri = mesh.subdomain_triangles(s)
        assert mesh.tri_area[tri].sum() == pytest.approx((bx - ax) * (by - ay), rel=1e-12)
    ax, bx, ay, by = mesh.domain
    assert mesh.tri_area.sum() == pytest.approx((bx - ax) * (by - ay), rel=1e-12)


def test_normals_point_from_tminus_to_tplus():
    mesh = build_mesh((0, 2, 0, 1), (4, 2), (2, 1))
    for f in mesh.interior_faces:
        n = mesh.face_normal[f]
        cm = mesh.tri_centroid[mesh.face_tminus[f]]
        cp = mesh.tri_centroid[mesh.face_tplus[f]]
        assert n @ (cp - cm) > 0.0
    for f in mesh.boundary_faces:
        mid = mesh.vertices[mesh.face_vertices[f]].mean(axis=0)
        outside = mid + 1e-6 * mesh.face_normal[f]
        ax, bx, ay, by = mesh.domain
        assert not (ax <= outside[0] <= bx and ay <= outside[1] <= by)


def test_coupling_faces_join_distinct_subdomains():
    mesh = build_mesh((0, 2, 0, 2), (4, 4), (2, 2))
    sub = mesh.tri_subdomain
    for f in range(mesh.n_faces):
        if mesh.face_kind[f] == COUPLING:
            assert sub[mesh.face_tminus[f]] != sub[mesh.face_tplus[f]]
        elif mesh.face_kind[f] == INNER:
            assert sub[mesh.face_tminus[f]] == sub[mesh.face_tplus[f]]
        else:
            assert mesh.face_tplus[f] == -1


def test_refinement_quadruples_triangles_and_keeps_coarse_geometry():
    mesh = build_mesh((0, 2, 0, 1), (4, 2), (2, 1))
    fine = mesh.refined(2)
    assert fine.n_triangles == 4 * mesh.n_triangles
    assert fine.subdomain_rects == mesh.subdomain_rects
    assert np.array_equal(fine.coarse_face_subs, mesh.coarse_face_subs)
    # refined triangles nest inside their parents
    for t in range(fine.n_triangles):
        cx, cy = fine.tri_centroid[t]
        parent = mesh.locate_triangle(cx, cy)
        assert mesh.tri_subdomain[parent] == fine.tri_subdomain[t]


def test_locate_triangle_roundtrip():
    mesh = build_mesh((0, 5, 0, 1), (8, 4), (4, 2))
    for t in range(mesh.n_triangles):
        cx, cy = mesh.tri_centroid[t]
        assert mesh.locate_triangle(cx, cy) == t


def test_json_dump(tmp_path):
    mesh = build_mesh((0, 1, 0, 1), (2, 2), (2, 1))
    path = tmp_path / "mesh.json"
    mesh.dump_json(path)
    data = json.loads(path.read_text())
    assert len(data["triangles"]) == mesh.n_triangles
    assert len(data["faces"]) == mesh.n_faces
    kinds = {f["kind"] for f in data["faces"]}
    assert kinds == {INNER, COUPLING, BOUNDARY}
