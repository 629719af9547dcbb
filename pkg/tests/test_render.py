import numpy as np

from voxflow.render import BACKGROUND, flow_colors, read_ppm, render_bev, write_ppm


def test_zero_flow_is_desaturated():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 10, (200, 3))
    img = render_bev(pts, np.zeros_like(pts))
    colors = {tuple(c) for c in img.reshape(-1, 3)} - {BACKGROUND}
    assert colors and all(c[0] == c[1] == c[2] for c in colors)


def test_single_mover_one_hue():
    rgb = flow_colors(np.tile([0.5, 0, 0], (10, 1)))
    assert np.all(rgb == rgb[0])
    np.testing.assert_allclose(flow_colors([[1.0, 0, 0]]), [[1.0, 0.0, 0.0]])


def test_empty_cloud_blank():
    img = render_bev(np.zeros((0, 3)), np.zeros((0, 3)))
    assert img.shape == (101, 101, 3) and np.all(img == BACKGROUND)


def test_north_up():
    img = render_bev(np.array([[0, 10, 0], [0, 0, 0.0]]), np.array([[1, 0, 0], [0, 1, 0.0]]), pad=0)
    assert tuple(img[0, 0]) != BACKGROUND and tuple(img[-1, 0]) != BACKGROUND
    assert not np.array_equal(img[0, 0], img[-1, 0])


def test_ppm_roundtrip_deterministic(tmp_path):
    rng = np.random.default_rng(1)
    pts = rng.uniform(0, 5, (50, 3))
    img = render_bev(pts, rng.normal(size=(50, 3)))
    write_ppm(img, tmp_path / "a.ppm")
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)
    write_ppm(img, tmp_path / "b.ppm")
    assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()
