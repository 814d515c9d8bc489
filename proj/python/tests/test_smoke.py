import numpy as np
import pytest

import denet


def test_density_map_preserves_count():
    pts = [(1.0, 1.0), (5.0, 4.0), (9.5, 7.5)]
    for adaptive in (False, True):
        g = denet.density_map(10, 8, pts, sigma=2.0, adaptive=adaptive)
        assert g.shape == (8, 10)
        assert abs(g.sum() - 3.0) < 1e-6
        assert (g >= 0).all()


def test_out_of_bounds_point_is_rejected():
    with pytest.raises(denet.ValidationError, match="point 0"):
        denet.density_map(4, 4, [(9.0, 1.0)])


def test_counting_loss_three_sevenths():
    pred = np.full((1, 3), 1.0)
    assert denet.counting_loss(pred, 10, 4) == pytest.approx((3 / 7) ** 2, abs=1e-12)


def test_combined_loss_weighting():
    pred = np.array([[1.0, 1.0, 1.0]])
    gt = np.array([[1.0, 2.0, 0.0]])
    want = 2 / 3 + 0.1 * (3 / 7) ** 2
    assert denet.combined_loss(pred, gt, 10, 4) == pytest.approx(want, abs=1e-12)
    assert denet.euclidean_loss(pred, gt) == pytest.approx(2 / 3, abs=1e-12)


def test_model_preserves_extents_and_fuses():
    m = denet.Model(seed=3)
    assert m.parameter_count == 1655137
    img, pts = denet.synthesize(seed=1, width=20, height=13, min_dots=3, max_dots=5)
    assert img.shape == (3, 13, 20)
    d = m.density(img)
    assert d.shape == (13, 20)
    assert np.allclose(m.density(np.transpose(img, (1, 2, 0))), d)
    boxes = denet.mock_detect(20, 13, pts, recall=1.0, box_size=4, seed=0)
    assert len(boxes) == len(pts)
    n_d, n_e, c = m.count(img, boxes)
    assert c == n_d + n_e


def test_grid_round_trip(tmp_path):
    g = np.random.default_rng(0).random((5, 7))
    denet.save_grid(str(tmp_path / "g.grid"), g)
    back = denet.load_grid(str(tmp_path / "g.grid"))
    assert back.tobytes() == g.tobytes()


def test_checkpoint_round_trip(tmp_path):
    a = denet.Model(seed=1)
    a.save(str(tmp_path / "m.ckpt"))
    b = denet.Model(seed=2)
    b.load(str(tmp_path / "m.ckpt"))
    img, _ = denet.synthesize(seed=2, width=16, height=16, min_dots=1, max_dots=3)
    assert a.density(img).tobytes() == b.density(img).tobytes()


def test_mae_mse():
    mae, mse = denet.mae_mse([3.0, 5.0], [4, 5])
    assert mae == pytest.approx(0.5)
    assert mse == pytest.approx(0.5)


def test_gradcheck_small():
    ops, e2e = denet.gradcheck(seed=1, entries=5)
    assert ops < 1e-4
    assert e2e < 1e-3
