import json

import numpy as np
import pytest

from blowup import _ring_py, kernels
from blowup.errors import CoincidentPoints, GeometryError
from blowup.geometry import Ball, Perforated, green_constant, sphere_mesh
from blowup.green import (
    ImageEngine,
    KelvinEngine,
    PointEngine,
    RingEngine,
    build_engine,
    engine_from_dict,
    harmonic_from_dict,
)

from conftest import image_G

C3 = 1 / (4 * np.pi)


def interior(domain, count, margin, seed=0):
    return domain.sample_interior(np.random.default_rng(seed), count, margin)


def test_ball_uses_image_formula(image3):
    assert isinstance(image3, ImageEngine)
    assert image3.method == "AnalyticBall"


def test_green_at_center(image3):
    y = np.array([0.5, 0.0, 0.0])
    assert image3.green(np.zeros(3), y) == pytest.approx(C3 * (1 / 0.5 - 1), rel=1e-12)
    assert image3.green(np.zeros(3), y) == pytest.approx(0.0795775, rel=1e-6)


@pytest.mark.parametrize("x, expected", [(0.0, 0.0795775), (0.5, 0.106103)])
def test_robin_values(image3, x, expected):
    p = np.array([x, 0, 0])
    assert image3.robin(p) == pytest.approx(C3 / (1 - x * x), rel=1e-12)
    assert image3.robin(p) == pytest.approx(expected, abs=5e-7)


def test_robin_increases_toward_boundary(image3):
    r = [image3.robin(np.array([t, 0, 0])) for t in (0.0, 0.5, 0.9)]
    assert r[0] < r[1] < r[2]


def test_forced_collocation_matches_image(ring3):
    assert isinstance(ring3, RingEngine)
    assert ring3.collocation_residual <= 1e-8
    X = interior(ring3.domain, 40, 0.05, seed=1)
    Y = interior(ring3.domain, 40, 0.05, seed=2)
    G = ring3.green(X, Y)
    ref = np.array([image_G(x, y) for x, y in zip(X, Y)])
    assert np.max(np.abs(G - ref) / np.abs(ref)) < 1e-7


def test_coincident_points_raise(image3):
    with pytest.raises(CoincidentPoints):
        image3.green(np.zeros(3), np.zeros(3))


def test_exterior_point_rejected(image3):
    with pytest.raises(GeometryError):
        image3.regular_part(np.array([2.0, 0, 0]), np.zeros(3))


@pytest.fixture(scope="module")
def engines(ring3, holed3):
    off = Perforated(Ball(np.zeros(3), 1.0), [0.3, 0.1, 0.0], 0.15)
    return {
        "image": build_engine(ring3.domain),
        "ring": ring3,
        "holed": build_engine(holed3),
        "kelvin": build_engine(off),
    }


@pytest.mark.parametrize("name", ["image", "ring", "holed", "kelvin"])
def test_symmetry(engines, name):
    eng = engines[name]
    X = interior(eng.domain, 30, 0.05, seed=3)
    Y = interior(eng.domain, 30, 0.05, seed=4)
    assert np.allclose(eng.green(X, Y), eng.green(Y, X), rtol=1e-8, atol=0)
    assert np.allclose(eng.regular_part(X, Y), eng.regular_part(Y, X), rtol=1e-8, atol=0)


@pytest.mark.parametrize("name", ["image", "ring", "holed", "kelvin"])
def test_gradient_matches_finite_differences(engines, name):
    eng = engines[name]
    X = interior(eng.domain, 5, 0.1, seed=5)
    Y = interior(eng.domain, 5, 0.1, seed=6)
    gx, gy = eng.grad_regular_part(X, Y)
    h = 1e-5
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fx = (eng.regular_part(X + e, Y) - eng.regular_part(X - e, Y)) / (2 * h)
        fy = (eng.regular_part(X, Y + e) - eng.regular_part(X, Y - e)) / (2 * h)
        scale = np.max(np.abs(gx))
        assert np.max(np.abs(fx - gx[:, k])) < 1e-5 * scale
        assert np.max(np.abs(fy - gy[:, k])) < 1e-5 * scale


@pytest.mark.parametrize("name", ["image", "ring", "kelvin"])
def test_gradient_argument_swap(engines, name):
    eng = engines[name]
    X = interior(eng.domain, 10, 0.1, seed=7)
    Y = interior(eng.domain, 10, 0.1, seed=8)
    gx = eng.grad_regular_part(X, Y)[0]
    gy_swapped = eng.grad_regular_part(Y, X)[1]
    assert np.allclose(gx, gy_swapped, rtol=1e-7, atol=1e-9)


def test_grad_robin_vanishes_at_center(engines):
    for name in ("image", "ring"):
        assert np.allclose(engines[name].grad_robin(np.zeros((1, 3))), 0.0, atol=1e-10)


@pytest.mark.parametrize("name", ["holed", "kelvin"])
def test_green_vanishes_on_every_boundary_component(engines, name):
    eng = engines[name]
    dom = eng.domain
    # points just inside the outer sphere and just outside the hole
    u = np.array([[1, 0, 0], [0, 1, 0], [0, 0, -1], [0.6, 0.8, 0]], float)
    outer = (1 - 1e-9) * u
    inner = dom.hole_center + (dom.hole_radius + 1e-9) * u
    y = np.array([[0.0, -0.5, 0.2]])
    for pts in (outer, inner):
        G = eng.green(pts, np.repeat(y, len(pts), axis=0))
        assert np.max(np.abs(G)) < 1e-6 * C3 / 0.5


def test_kelvin_engine_selected_for_offset_hole(engines):
    assert isinstance(engines["kelvin"], KelvinEngine)
    assert engines["kelvin"].collocation_residual <= 1e-7


def test_point_engine_on_sphere_mesh():
    mesh = sphere_mesh(np.zeros(3), 1.0, 1500)
    eng = build_engine(mesh)
    assert isinstance(eng, PointEngine)
    assert eng.collocation_residual <= 2e-3
    X = np.array([[0.1, 0.2, 0.0], [-0.3, 0.0, 0.2]])
    Y = np.array([[0.0, -0.2, 0.1], [0.2, 0.1, -0.1]])
    ref = np.array([image_G(x, y) for x, y in zip(X, Y)])
    assert np.allclose(eng.green(X, Y), ref, rtol=2e-2)


@pytest.mark.parametrize("name", ["ring", "kelvin"])
def test_engine_round_trip(engines, name):
    eng = engines[name]
    back = engine_from_dict(json.loads(json.dumps(eng.to_dict())))
    X = interior(eng.domain, 5, 0.1, seed=9)
    assert np.allclose(back.robin(X), eng.robin(X), rtol=1e-12)


def test_engine_round_trip_detects_tampering(engines):
    d = engines["ring"].to_dict()
    d["charges"][0][0] += 1e-3
    with pytest.raises(GeometryError):
        engine_from_dict(d)


@pytest.mark.parametrize("name", ["ring", "kelvin"])
def test_harmonic_extension_replays_from_json(engines, name):
    eng = engines[name]
    src = np.array([0.0, 0.0, 2.5])

    def data(X):
        return 1.0 / np.linalg.norm(X - src, axis=-1)

    field = eng.extend(data, axis_point=np.array([0.0, 0.0, 0.5]))
    back = harmonic_from_dict(json.loads(json.dumps(field.to_dict())))
    X = interior(eng.domain, 8, 0.1, seed=10)
    assert np.allclose(back(X), field(X), rtol=1e-13)
    assert np.allclose(back.grad(X), field.grad(X), rtol=1e-12)


def test_extension_reproduces_harmonic_data(ring3):
    # a harmonic function is its own extension
    src = np.array([0.0, 0.0, 3.0])

    def data(X):
        return 1.0 / np.linalg.norm(X - src, axis=-1)

    field = ring3.extend(data, axis_point=np.array([0.0, 0.0, 0.2]))
    X = interior(ring3.domain, 20, 0.05, seed=11)
    assert np.allclose(field(X), data(X), rtol=1e-8)


def test_build_engine_argument_checks(ball3):
    with pytest.raises(GeometryError):
        build_engine(ball3, method="spectral")
    with pytest.raises(GeometryError):
        build_engine(ball3, n_boundary=5, method="collocation")
    with pytest.raises(GeometryError):
        build_engine(Perforated(ball3, [0.3, 0, 0], 0.1), method="analytic")


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_ring_kernel_backends_agree(n):
    rng = np.random.default_rng(n)
    a, rho = rng.uniform(-1, 1, 50), rng.uniform(0, 1, 50)
    th = rng.uniform(0, np.pi, 30)
    b, r = 2 * np.cos(th), 2 * np.sin(th)
    q = rng.standard_normal(30)
    ref = _ring_py.ring_apply(a, rho, b, r, q, n)
    got = kernels.ring_apply(a, rho, b, r, q, n)
    for x, y in zip(ref, got):
        assert np.allclose(x, y, rtol=1e-11, atol=1e-13 * np.max(np.abs(x)))


@pytest.mark.parametrize("n", [3, 4, 5, 6])
def test_ring_kernel_is_sphere_average(n):
    # average of |x - y|^(2-n) over the (n-2)-sphere of radius r about the axis
    from scipy.integrate import quad

    a, rho, b, r = 0.3, 0.4, -0.2, 0.7

    def f(phi):
        d2 = (a - b) ** 2 + rho**2 + r**2 - 2 * rho * r * np.cos(phi)
        return d2 ** (-(n - 2) / 2) * np.sin(phi) ** (n - 3)

    ref = quad(f, 0, np.pi, epsabs=0, epsrel=1e-13)[0] / quad(lambda t: np.sin(t) ** (n - 3), 0, np.pi)[0]
    for mod in (_ring_py, kernels):
        v = mod.ring_eval(np.array([a]), np.array([rho]), np.array([b]), np.array([r]), n)[0]
        assert float(v[0]) == pytest.approx(ref, rel=1e-12)


def test_green_constant_in_engine(image3):
    assert image3.c_n == green_constant(3)
