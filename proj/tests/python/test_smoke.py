"""Smoke tests for the python bindings."""

import numpy as np
import pytest

import gust


def random_cell(n=16, seed=0):
    rng = np.random.default_rng(seed)
    cell = (rng.random((n, n)) < 0.5).astype(np.uint8)
    cell[0, 0] = 1
    cell[1, 1] = 0
    return cell


def test_sdf_roundtrip():
    cell = random_cell()
    sdf = gust.to_sdf(cell)
    assert sdf.shape == cell.shape
    assert np.array_equal(gust.to_binary(sdf), cell)
    # sign convention: positive on material
    assert np.all((sdf > 0) == (cell == 1))


def test_morphology():
    cell = np.zeros((9, 9), dtype=np.uint8)
    cell[4, 4] = 1
    out = gust.dilate(cell, 3)
    assert out.sum() == 9
    assert np.all(out[3:6, 3:6] == 1)
    assert np.array_equal(gust.dilate(cell, 1), cell)
    assert np.array_equal(gust.erode(out, 3), cell)


def test_volume_fraction():
    assert gust.volume_fraction(np.ones((8, 8), dtype=np.uint8)) == 1.0
    assert gust.volume_fraction(np.zeros((8, 8), dtype=np.uint8)) == 0.0


def test_ffd_identity():
    cell = random_cell()
    assert np.array_equal(gust.ffd_deform(cell, m=4, sigma=0.0, seed=1), cell)


def test_homogenize_uniform_plate():
    c = gust.homogenize(np.ones((8, 8), dtype=np.uint8), E=1.0, nu=0.3)
    assert c[0, 0] == pytest.approx(1.0 / 0.91, rel=1e-6)
    assert c[1, 1] == pytest.approx(1.0 / 0.91, rel=1e-6)
    assert c[0, 1] == pytest.approx(0.3 / 0.91, rel=1e-6)
    assert c[2, 2] == pytest.approx(1.0 / 2.6, rel=1e-6)


def test_density_coverage_hand_case():
    real = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    gen = np.array([[0.5, 0, 0], [2.0, 0, 0]])
    assert gust.density(real, gen, k=1) == pytest.approx(1.5)
    assert gust.coverage(real, gen, k=1) == pytest.approx(1.0)


def test_wasserstein():
    assert gust.wasserstein1([0.0, 2.0], [1.0, 3.0]) == pytest.approx(1.0)
    assert gust.wasserstein1([1.0, 2.0], [1.0, 2.0]) == 0.0


def test_schedule_and_forward():
    s = gust.make_schedule(1000, 1e-4, 0.02)
    abars = np.asarray(s["alpha_bars"])
    assert abars[-1] == pytest.approx(4.0e-5, rel=0.05)
    assert np.all(np.diff(abars) < 0)

    x0 = [1.0, -1.0]
    xt = gust.forward_sample(x0, 400, [0.0, 0.0], 1000, 1e-4, 0.02)
    assert xt[0] == pytest.approx(np.sqrt(abars[399]), rel=1e-12)


def test_gen_nominals_symmetry():
    cells = gust.gen_nominals(3, 16, "crosses", seed=4)
    for cell in cells:
        assert np.array_equal(cell, cell[::-1, :])
        assert np.array_equal(cell, cell[:, ::-1])
        assert 0.25 <= cell.mean() <= 0.75


def test_dataset_roundtrip(tmp_path):
    path = str(tmp_path / "ds.gust")
    cells = [random_cell(8, s) for s in range(3)]
    gust.save_dataset(path, [0, 0, 0], [0, 1, 1], cells)
    ids, roles, back = gust.load_dataset(path)
    assert list(ids) == [0, 0, 0]
    assert list(roles) == [0, 1, 1]
    for a, b in zip(cells, back):
        assert np.array_equal(a, b)


def test_welch():
    rng = np.random.default_rng(1)
    a = rng.normal(0, 1, 40)
    b = rng.normal(3, 1, 40)
    assert gust.welch_p_value(list(a), list(b)) < 1e-9
    assert gust.welch_p_value(list(a), list(a)) == pytest.approx(1.0)
