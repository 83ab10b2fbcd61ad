import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blowup.errors import GeometryError
from blowup.geometry import (
    Annulus,
    Ball,
    BoundaryMesh,
    Perforated,
    ball_volume,
    domain_from_dict,
    green_constant,
    sphere_area,
    sphere_mesh,
    sphere_points,
)


def test_sphere_and_ball_measures():
    assert sphere_area(3) == pytest.approx(4 * np.pi)
    assert ball_volume(3) == pytest.approx(4 * np.pi / 3)
    assert sphere_area(4, 2.0) == pytest.approx(2 * np.pi**2 * 8)
    # c_3 = 1/(4 pi)
    assert green_constant(3) == pytest.approx(1 / (4 * np.pi), rel=1e-15)


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_sphere_points_are_unit(n):
    u = sphere_points(n, 200, seed=1)
    assert u.shape == (200, n)
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0)
    # roughly balanced
    assert np.linalg.norm(u.mean(axis=0)) < 0.1


def test_ball_distance_and_contains(ball3):
    x = np.array([[0, 0, 0], [0.5, 0, 0], [2, 0, 0]], float)
    assert np.allclose(ball3.boundary_distance(x), [1, 0.5, -1])
    assert list(ball3.contains(x)) == [True, True, False]
    assert ball3.diameter == 2.0
    assert ball3.inradius == 1.0


def test_annulus_and_perforated_distances(annulus3, holed3):
    x = np.array([[0.65, 0, 0], [0.2, 0, 0], [0.05, 0, 0]])
    assert np.allclose(annulus3.boundary_distance(x)[:2], [0.35, -0.1])
    assert holed3.boundary_distance(x)[2] < 0
    assert holed3.volume == pytest.approx(ball_volume(3) - ball_volume(3, 0.1))
    assert annulus3.volume == pytest.approx(ball_volume(3) - ball_volume(3, 0.3))


def test_perforated_rejects_hole_touching_boundary():
    with pytest.raises(GeometryError):
        Perforated(Ball(np.zeros(3), 1.0), [0.95, 0, 0], 0.1)


@pytest.mark.parametrize(
    "bad",
    [
        {"kind": "ball", "center": [0, 0, 0], "radius": -1},
        {"kind": "annulus", "center": [0, 0, 0], "r_inner": 1, "r_outer": 0.5},
        {"kind": "ball", "center": [0, 0], "radius": 1},
        {"kind": "cube"},
        {"radius": 1},
    ],
)
def test_invalid_domains(bad):
    with pytest.raises(GeometryError):
        domain_from_dict(bad)


def test_dict_round_trip(ball3, annulus3, holed3):
    for d in (ball3, annulus3, holed3):
        back = domain_from_dict(d.to_dict())
        assert back.to_dict() == d.to_dict()


def test_sphere_mesh_volume_and_winding():
    mesh = sphere_mesh(np.zeros(3), 1.0, 2000)
    assert mesh.volume == pytest.approx(ball_volume(3), rel=2e-2)
    w = mesh.winding(np.array([[0, 0, 0], [0.3, 0.2, 0.1], [2, 0, 0]]))
    assert w[0] == pytest.approx(1.0, abs=1e-2)
    assert w[2] == pytest.approx(0.0, abs=1e-2)
    assert mesh.boundary_distance(np.zeros(3)) == pytest.approx(1.0, abs=1e-2)
    back = domain_from_dict(mesh.to_dict())
    assert isinstance(back, BoundaryMesh) and back.volume == pytest.approx(mesh.volume)


def test_inward_mesh_rejected():
    mesh = sphere_mesh(np.zeros(3), 1.0, 200)
    with pytest.raises(GeometryError):
        BoundaryMesh(mesh.points, -mesh.normals, mesh.areas)


def test_sample_interior_respects_margin(annulus3):
    rng = np.random.default_rng(0)
    pts = annulus3.sample_interior(rng, 100, min_distance=0.1)
    assert np.all(annulus3.boundary_distance(pts) >= 0.1)


@settings(max_examples=30, deadline=None)
@given(
    st.lists(st.floats(-2, 2), min_size=3, max_size=3),
    st.floats(0.1, 3.0),
    st.lists(st.floats(-1, 1), min_size=3, max_size=3),
)
def test_ball_distance_is_one_lipschitz(center, radius, shift):
    b = Ball(np.array(center), radius)
    x = np.array(center) + np.array(shift)
    y = x + 0.1 * np.array([1.0, -0.5, 0.25])
    assert abs(b.boundary_distance(x) - b.boundary_distance(y)) <= np.linalg.norm(x - y) + 1e-12


def test_annulus_axis_center(annulus3):
    assert np.allclose(annulus3.axis_center(), 0.0)
    off = Perforated(Ball(np.zeros(3), 1.0), [0.3, 0, 0], 0.1)
    assert off.axis_center() is None
