import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bridgecause.geometry import TriangleMesh
from bridgecause.harness import random_camera_scene
from bridgecause.neighborhood import (
    InterestMissedError,
    ShootingPoint,
    UnknownInterestError,
    select_surrounding,
    shooting_document,
    shooting_points,
)
from bridgecause.scene import CameraPose, Scene, parse_poses

UNIT = TriangleMesh.from_arrays([(0, 0, 0), (1, 0, 0), (0, 1, 0)], [(0, 1, 2)])


def _sp(image_id, xyz):
    return ShootingPoint(image_id, np.asarray(xyz, dtype=float), 1.0, 0)


def test_camera_hits_unit_triangle():
    scene = Scene(UNIT, [CameraPose("a", (0, 0, -1), (0, 0, 1))])
    (sp,) = shooting_points(scene).values()
    assert sp.t == 1.0
    np.testing.assert_array_equal(sp.point, [0, 0, 0])


def test_camera_looking_away_is_missed():
    scene = Scene(UNIT, [CameraPose("a", (0.2, 0.2, -1), (0, 0, 1)), CameraPose("b", (0.2, 0.2, -1), (0, 0, -1))])
    pts = shooting_points(scene)
    assert pts["b"] is None
    sel = select_surrounding(pts, "a")
    assert sel.missed == ["b"]
    assert shooting_document(pts)["missed"] == ["b"]


def two_planes():
    # floor z=0 over [0,10]^2 and wall x=10 over y in [0,10], z in [0,5]
    verts = [(0, 0, 0), (10, 0, 0), (10, 10, 0), (0, 10, 0), (10, 0, 0), (10, 10, 0), (10, 10, 5), (10, 0, 5)]
    faces = [(0, 1, 2), (0, 2, 3), (4, 5, 6), (4, 6, 7)]
    return TriangleMesh.from_arrays(verts, faces)


def plane_hit(o, d, p0, n):
    t = float(np.dot(np.subtract(p0, o), n) / np.dot(d, n))
    return t, np.asarray(o) + t * np.asarray(d)


def test_two_plane_scene_matches_closed_form():
    rng = np.random.default_rng(4)
    cams, expected = [], {}
    for k in range(200):
        if k % 2:
            target = np.array([rng.uniform(0.5, 8.5), rng.uniform(0.5, 9.5), 0.0])
            o = target + np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1, 4)])
            plane = ((0, 0, 0), (0, 0, 1))
        else:
            target = np.array([10.0, rng.uniform(0.5, 9.5), rng.uniform(0.5, 4.5)])
            o = target + np.array([-rng.uniform(1, 4), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)])
            plane = ((10, 0, 0), (1, 0, 0))
        d = (target - o) / np.linalg.norm(target - o)
        cams.append(CameraPose(f"c{k:03d}", o, d))
        expected[f"c{k:03d}"] = plane_hit(o, d, *plane)
    pts = shooting_points(Scene(two_planes(), cams))
    for image_id, (t, point) in expected.items():
        sp = pts[image_id]
        assert sp.t == pytest.approx(t, rel=1e-12)
        assert np.linalg.norm(sp.point - point) <= 1e-9


def test_point_is_position_plus_t_dir(field_fixture):
    from bridgecause.scene import parse_mesh_obj

    poses = parse_poses(field_fixture.poses_json)
    pts = shooting_points(Scene(parse_mesh_obj(field_fixture.mesh_obj), poses))
    for pose in poses:
        sp = pts[pose.image_id]
        if sp is None:
            assert field_fixture.targets[pose.image_id] is None
            continue
        np.testing.assert_allclose(sp.point, pose.position + sp.t * pose.view_dir, atol=1e-9, rtol=0)
        np.testing.assert_allclose(sp.point, field_fixture.targets[pose.image_id], atol=1e-9, rtol=0)


def test_all_share_one_point():
    pts = {k: _sp(k, (1, 2, 3)) for k in "abcd"}
    sel = select_surrounding(pts, "b")
    assert [s.image_id for s in sel.surrounding] == ["a", "c", "d"]
    assert sel.excluded == [] and sel.missed == []


def test_boundary_is_inclusive():
    pts = {
        "i": _sp("i", (0, 0, 0)),
        "x": _sp("x", (1, 0, 0)),
        "y": _sp("y", (0, -1, 0)),
        "z": _sp("z", (0, 0, 1)),
        "far": _sp("far", (0, 0, np.nextafter(1.0, 2.0))),
    }
    sel = select_surrounding(pts, "i", 1.0)
    assert [s.image_id for s in sel.surrounding] == ["x", "y", "z"]
    assert sel.excluded == ["far"]


def test_radius_zero_keeps_only_coincident():
    pts = {"i": _sp("i", (0, 0, 0)), "same": _sp("same", (0, 0, 0)), "o": _sp("o", (0.1, 0, 0))}
    sel = select_surrounding(pts, "i", 0.0)
    assert [s.image_id for s in sel.surrounding] == ["same"]


def test_surrounding_sorted_by_distance_then_id():
    pts = {"i": _sp("i", (0, 0, 0)), "b": _sp("b", (0.5, 0, 0)), "a": _sp("a", (0, 0.5, 0)), "c": _sp("c", (0.1, 0, 0))}
    assert [s.image_id for s in select_surrounding(pts, "i").surrounding] == ["c", "a", "b"]


def test_interest_errors():
    pts = {"i": _sp("i", (0, 0, 0)), "m": None}
    with pytest.raises(UnknownInterestError):
        select_surrounding(pts, "nope")
    with pytest.raises(InterestMissedError):
        select_surrounding(pts, "m")
    with pytest.raises(ValueError):
        select_surrounding(pts, "i", -1.0)


def test_field_fixture_has_63_surrounding(field_fixture):
    from bridgecause.scene import parse_mesh_obj

    scene = Scene(parse_mesh_obj(field_fixture.mesh_obj), parse_poses(field_fixture.poses_json))
    sel = select_surrounding(shooting_points(scene), field_fixture.interest_id, 1.0)
    assert len(sel.surrounding) == 63
    assert len(sel.analysed_ids) == 64
    assert len(sel.excluded) == 12 and len(sel.missed) == 1


def test_workers_do_not_change_results(field_fixture):
    from bridgecause.scene import parse_mesh_obj

    scene = Scene(parse_mesh_obj(field_fixture.mesh_obj), parse_poses(field_fixture.poses_json))
    docs = [shooting_document(shooting_points(scene, workers=w)) for w in (1, 3, 8)]
    assert docs[0] == docs[1] == docs[2]


def _selection_ids(scene, interest, radius):
    sel = select_surrounding(shooting_points(scene), interest, radius)
    return sel, {s.image_id for s in sel.surrounding}


@given(st.integers(0, 2**31), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_selection_properties(seed, r1, r2):
    mesh, poses = random_camera_scene(seed)
    scene = Scene(mesh, poses)
    pts = shooting_points(scene)
    hit_ids = [k for k, v in pts.items() if v is not None]
    if not hit_ids:
        return
    interest = hit_ids[seed % len(hit_ids)]
    lo, hi = sorted((r1, r2))
    sel_lo, ids_lo = _selection_ids(scene, interest, lo)
    sel_hi, ids_hi = _selection_ids(scene, interest, hi)
    # partition
    assert len(sel_hi.surrounding) + len(sel_hi.excluded) + 1 + len(sel_hi.missed) == len(poses)
    assert ids_lo <= ids_hi
    for s in sel_hi.surrounding:
        assert np.linalg.norm(s.point - sel_hi.interest.point) <= hi
    # translation invariance
    _, moved = _selection_ids(scene.translated((3.5, -7.25, 12.0)), interest, hi)
    assert moved == ids_hi
