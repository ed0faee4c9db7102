import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import ellipe

from fracpoh.errors import ParameterError
from fracpoh.geometry import (Annulus, Ball, Ellipse, Interval, boundary_nodes, build_grid, distance,
                              grid_from_spec, make_domain, regularize_distance, star_shape_margin)


def test_distance_examples():
    assert distance(Interval(-1, 1, distance_cap=0.5), 0.9) == pytest.approx(0.1, abs=1e-15)
    assert distance(Ball(radius=1.0, distance_cap=0.25), [0.0, 0.0]) == 0.25
    assert distance(Interval(-1, 1), 1.5) == 0.0
    assert distance(Ball(), [1.2, 0.3]) == 0.0
    assert distance(Ellipse(), [0.0, 1.0]) == 0.0


def test_regularized_distance_is_monotone_and_capped():
    t = np.linspace(0, 2, 2001)
    d = regularize_distance(t, 0.5)
    assert np.all(np.diff(d) >= 0)
    assert d.max() == 0.5
    assert np.array_equal(d[t <= 0.25], t[t <= 0.25])


def test_star_margin_examples():
    assert star_shape_margin(Ball(), [0.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
    assert star_shape_margin(Ball(center=(0.5, 0.0)), [0.0, 0.0]) == pytest.approx(0.5, abs=1e-15)
    for o in ([0.75, 0.0], [0.0, -0.6], [0.5, 0.5]):
        assert star_shape_margin(Annulus(0.5, 1.0), o) < 0
    assert star_shape_margin(Interval(-1, 1), 0.25) == pytest.approx(0.75)


def test_star_margin_origin_outside():
    with pytest.raises(ParameterError):
        star_shape_margin(Ball(), [2.0, 0.0])
    with pytest.raises(ParameterError):
        star_shape_margin(Annulus(0.5, 1.0), [0.0, 0.0])
    with pytest.raises(ParameterError):
        star_shape_margin(Interval(-1, 1), 1.0)


def test_ellipse_margin_against_boundary_sampling():
    dom = Ellipse(semi_axes=(2.0, 1.0), angle=0.4)
    o = np.array([0.3, -0.2])
    t = np.linspace(0, 2 * np.pi, 10**6, endpoint=False)
    c, s = np.cos(0.4), np.sin(0.4)
    R = np.array([[c, -s], [s, c]])
    z = np.stack([2 * np.cos(t), np.sin(t)], axis=1) @ R.T
    nu = np.stack([np.cos(t), 2 * np.sin(t)], axis=1) @ R.T
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    brute = np.min(np.sum((z - o) * nu, axis=1))
    assert abs(star_shape_margin(dom, o) - brute) <= 1e-6


def test_star_margin_rotation_invariance():
    o = np.array([0.4, 0.25])
    base = star_shape_margin(Ellipse(semi_axes=(2.0, 1.0), angle=0.0), o)
    for a in (0.3, 1.2, 2.9):
        c, s = np.cos(a), np.sin(a)
        R = np.array([[c, -s], [s, c]])
        rot = star_shape_margin(Ellipse(semi_axes=(2.0, 1.0), angle=a), R @ o)
        assert abs(rot - base) <= 1e-12
        ball = star_shape_margin(Ball(center=R @ [0.2, 0.1]), R @ o)
        assert abs(ball - star_shape_margin(Ball(center=(0.2, 0.1)), o)) <= 1e-12


def test_boundary_nodes_interval():
    bq = boundary_nodes(Interval(-1, 1))
    assert bq.nodes.ravel().tolist() == [-1.0, 1.0]
    assert bq.normals.ravel().tolist() == [-1.0, 1.0]
    assert bq.weights.tolist() == [1.0, 1.0]


def test_boundary_nodes_circle():
    bq = boundary_nodes(Ball(), 256)
    assert abs(bq.weights.sum() - 2 * np.pi) <= 1e-10
    assert np.allclose(np.linalg.norm(bq.normals, axis=1), 1.0, atol=1e-14)


def test_boundary_nodes_ellipse_arclength():
    dom = Ellipse(semi_axes=(2.0, 1.0))
    bq = boundary_nodes(dom, 512)
    speed = lambda t: np.hypot(2.0 * np.sin(t), np.cos(t))
    oracle = quad(speed, 0, 2 * np.pi, limit=200, epsabs=1e-13, epsrel=1e-13)[0]
    assert abs(bq.weights.sum() - oracle) <= 1e-6
    assert abs(oracle - 8 * ellipe(0.75)) <= 1e-10
    # nodes are uniform in arclength
    gaps = np.linalg.norm(np.diff(np.vstack([bq.nodes, bq.nodes[:1]]), axis=0), axis=1)
    assert np.ptp(gaps) / gaps.mean() <= 1e-4
    assert np.allclose(np.linalg.norm(bq.normals, axis=1), 1.0, atol=1e-14)


def test_boundary_nodes_errors():
    with pytest.raises(ParameterError):
        boundary_nodes(Ball(), 1)
    with pytest.raises(ParameterError):
        boundary_nodes(object(), 8)
    with pytest.raises(ParameterError):
        make_domain("square")


def test_annulus_boundary_weights():
    bq = boundary_nodes(Annulus(0.5, 1.0), 300)
    assert abs(bq.weights.sum() - 3 * np.pi) <= 1e-10


def test_grid_uniform_interval():
    g = build_grid(Interval(-1, 1), 16, 1.0)
    assert g.weights.sum() == 2.0
    assert np.allclose(np.diff(g.x), 0.125, atol=1e-15)


def test_grid_graded_interval():
    g = build_grid(Interval(-1, 1), 256, 2.0)
    gaps = np.diff(g.P)
    assert gaps.min() < (2 / 256) / 4
    assert np.all((g.x > -1) & (g.x < 1))
    assert abs(g.weights.sum() - 2) <= 1e-4


def test_grid_disk_area():
    g = build_grid(Ball(), 64)
    assert abs(g.weights.sum() - np.pi) <= 0.005 * np.pi
    assert np.all(g.node_distance() > 0)


@pytest.mark.parametrize("dom", [Ellipse(semi_axes=(1.5, 1.0), angle=0.3), Annulus(0.4, 1.0)])
def test_grid_planar_area(dom):
    g = build_grid(dom, 64)
    assert abs(g.weights.sum() - dom.volume) <= 0.005 * dom.volume
    assert np.all(g.node_distance() > 0)


def test_grid_spacing_near_boundary_follows_grading():
    # spacing ~ d^(1 - 1/beta) / N near the boundary
    beta = 2.0
    g = build_grid(Interval(0, 1), 1024, beta)
    d = g.node_distance()[:60]
    gap = np.diff(g.P)[1:61]
    ratio = gap / (d ** (1 - 1 / beta) / 1024)
    assert np.ptp(ratio[10:]) / ratio[10:].mean() <= 0.05


def test_grid_errors_and_determinism():
    with pytest.raises(ParameterError):
        build_grid(Interval(-1, 1), 4)
    with pytest.raises(ParameterError):
        build_grid(Interval(-1, 1), 16, 0.5)
    a = build_grid(Ball(), 24)
    b = build_grid(Ball(), 24)
    assert np.array_equal(a.nodes, b.nodes) and np.array_equal(a.weights, b.weights)


@pytest.mark.parametrize("dom", [Interval(-1, 1), Ball(), Ellipse(semi_axes=(1.5, 1.0), angle=0.3),
                                 Annulus(0.5, 1.0)])
def test_grid_spec_round_trip(dom):
    g = build_grid(dom, 32)
    h = grid_from_spec(g.spec())
    assert np.array_equal(g.nodes, h.nodes) and np.array_equal(g.weights, h.weights)


def _fd_grad(dom, X, step=1e-7):
    G = np.zeros_like(X)
    for k in range(X.shape[1]):
        e = np.zeros(X.shape[1])
        e[k] = step
        G[:, k] = (dom.distance(X + e) - dom.distance(X - e)) / (2 * step)
    return G


@pytest.mark.parametrize("dom", [Interval(-1, 1), Ball(), Ellipse(semi_axes=(2.0, 1.0), angle=0.7),
                                 Annulus(0.5, 1.0)])
def test_eikonal_near_boundary(dom):
    g = build_grid(dom, 48)
    X = g.nodes
    d = dom.exact_distance(X)
    sel = (d < dom.distance_cap / 2) & (d > 1e-5)
    grad = _fd_grad(dom, X[sel])
    assert np.max(np.abs(np.linalg.norm(grad, axis=1) - 1)) <= 1e-6


@pytest.mark.parametrize("dom", [Ball(center=(0.2, -0.1)), Ellipse(semi_axes=(2.0, 1.0), angle=0.7),
                                 Annulus(0.5, 1.0)])
def test_normal_matches_distance_gradient(dom):
    bq = boundary_nodes(dom, 64)
    eps = 1e-4
    inside = bq.nodes - eps * bq.normals
    grad = _fd_grad(dom, inside)
    assert np.max(np.abs(grad + bq.normals)) <= 1e-4
