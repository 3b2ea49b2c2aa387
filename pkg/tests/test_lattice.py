import numpy as np
import pytest

from slfpk.lattice import Boundary, Lattice


def make_1d(rho=1.0, lo=-3.0, hi=3.0, boundary=Boundary.TRUNCATE):
    return Lattice(rho, [lo], [hi], boundary)


def test_lattice_validation():
    with pytest.raises(ValueError):
        Lattice(0.3, [0.0], [1.0])  # (hi-lo)/rho not integral
    with pytest.raises(ValueError):
        Lattice(1.0, [0.0], [1.0])  # only one cell
    with pytest.raises(ValueError):
        Lattice(1.0, [2.0], [0.0])  # hi < lo
    with pytest.raises(ValueError):
        Lattice(-0.1, [0.0], [1.0])
    with pytest.raises(ValueError):
        Lattice(1.0, [0.5], [4.5])  # corners not multiples of rho


def test_basis_nodal_values():
    lat = make_1d()
    assert lat.basis_eval((3,), lat.node_coord((3,))) == 1.0
    assert lat.basis_eval((3,), lat.node_coord((4,))) == 0.0
    # half-cell landing carries half the weight
    assert lat.basis_eval((3,), lat.node_coord((3,)) + 0.5) == 0.5


def test_basis_partition_of_unity():
    lat = Lattice(0.25, (-1, -1), (1, 1))
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(10_000, 2))
    base = np.floor(lat.fractional(pts)).astype(int)
    # sum over the four corner nodes of each point's cell
    total = np.zeros(len(pts))
    for corner in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        idx = np.minimum(base + corner, np.asarray(lat.shape) - 1)
        for k in range(len(pts)):
            total[k] += lat.basis_eval(tuple(idx[k]), pts[k])
    assert np.max(np.abs(total - 1.0)) <= 1e-12


def test_interpolate_affine_exact():
    lat = Lattice(0.25, (-1, -1), (1, 1))
    c = np.array([0.7, -1.3])
    nodes = lat.nodes()
    values = nodes @ c + 0.4
    rng = np.random.default_rng(1)
    pts = rng.uniform(-1, 1, size=(500, 2))
    got = lat.interpolate(values, pts)
    np.testing.assert_allclose(got, pts @ c + 0.4, rtol=0, atol=1e-12)


def test_interpolate_indicator_midpoint():
    lat = make_1d(rho=1.0, lo=0.0, hi=4.0)
    values = np.array([0.0, 1.0, 0.0, 0.0, 0.0])
    assert lat.interpolate(values, np.array([0.5])) == pytest.approx(0.5)


def test_interpolate_quadratic_second_order():
    # |x|^2 error is O(rho^2): halving rho divides the max error by ~4
    errs = []
    for rho in (0.1, 0.05):
        lat = make_1d(rho=rho, lo=-1.0, hi=1.0)
        values = lat.nodes()[:, 0] ** 2
        pts = np.linspace(-0.95, 0.95, 401)[:, None]
        errs.append(np.max(np.abs(lat.interpolate(values, pts) - pts[:, 0] ** 2)))
    assert errs[0] <= 0.3 * 0.1**2  # within c1 * rho^2 for a modest c1
    ratio = errs[0] / errs[1]
    assert 3.0 <= ratio <= 5.0


def test_interpolate_clamps_and_flags():
    lat = make_1d(rho=1.0, lo=0.0, hi=4.0)
    values = lat.nodes()[:, 0]
    vals, clamped = lat.interpolate(values, np.array([[5.0], [2.0]]), return_clamped=True)
    assert vals[0] == pytest.approx(4.0)  # clamped to the boundary node
    assert clamped.tolist() == [True, False]


def test_reflect_examples():
    lat = make_1d(rho=0.5, lo=-1.0, hi=1.0, boundary=Boundary.REFLECT)
    x = np.array([0.3])
    assert lat.reflect(x)[0] == 0.3  # interior: bitwise identity
    assert lat.reflect(np.array([1.3]))[0] == pytest.approx(0.7)
    # fold oracle: 3.5 -> -1.5 -> -0.5
    assert lat.reflect(np.array([3.5]))[0] == pytest.approx(-0.5)


def test_reflect_is_idempotent():
    lat = Lattice(0.5, (-1, -2), (1, 2), Boundary.REFLECT)
    rng = np.random.default_rng(2)
    pts = rng.uniform(-6, 6, size=(200, 2))
    once = lat.reflect(pts)
    np.testing.assert_array_equal(lat.reflect(once), once)
    assert np.all(lat.contains(once))


def test_reflect_requires_policy_and_finiteness():
    with pytest.raises(ValueError):
        make_1d().reflect(np.array([0.0]))
    lat = make_1d(boundary=Boundary.REFLECT)
    with pytest.raises(ValueError):
        lat.reflect(np.array([np.nan]))


def test_cell_of():
    lat = make_1d(rho=1.0, lo=0.0, hi=4.0)
    assert lat.cell_of(np.array([2.0])) == (2,)
    assert lat.cell_of(np.array([2.5])) == (2,)  # tie goes to the smaller index
    assert lat.cell_of(np.array([2.49])) == (2,)
    assert lat.cell_of(np.array([9.0])) is None  # dropped under TRUNCATE
    ref = make_1d(rho=1.0, lo=0.0, hi=4.0, boundary=Boundary.REFLECT)
    assert ref.cell_of(np.array([4.5])) == (3,)  # reflected to 3.5, tie -> 3
