"""Birds-eye-view raster of a flow field as binary PPM."""

from __future__ import annotations

import numpy as np

from .errors import IoError

BACKGROUND = (24, 24, 24)
ALPHA = 0.75


def hsv_to_rgb(h: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    h = np.mod(h, 1.0) * 6.0
    i = np.floor(h).astype(int) % 6
    f = h - np.floor(h)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    table = np.stack([
        np.stack([v, t, p], -1), np.stack([q, v, p], -1), np.stack([p, v, t], -1),
        np.stack([p, q, v], -1), np.stack([t, p, v], -1), np.stack([v, p, q], -1),
    ])
    return table[i, np.arange(len(i))]


def flow_colors(flow: np.ndarray, max_magnitude: float = 1.0) -> np.ndarray:
    """Direction in the XY plane to hue, 3D magnitude to saturation, full value."""
    flow = np.asarray(flow, dtype=np.float64).reshape(-1, 3)
    hue = np.arctan2(flow[:, 1], flow[:, 0]) / (2 * np.pi)
    sat = np.clip(np.linalg.norm(flow, axis=1) / max_magnitude, 0.0, 1.0)
    return hsv_to_rgb(hue, sat, np.ones(len(flow)))


def render_bev(points: np.ndarray, flow: np.ndarray, resolution: float = 0.2,
               max_magnitude: float = 1.0, pad: float = 1.0,
               empty_extent: float = 20.0) -> np.ndarray:
    """(H, W, 3) uint8 image, north (+y) up; points composited in input order."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts):
        lo = pts[:, :2].min(axis=0) - pad
        hi = pts[:, :2].max(axis=0) + pad
    else:
        lo = np.array([-empty_extent / 2] * 2)
        hi = -lo
    w, h = (np.ceil((hi - lo) / resolution).astype(int) + 1).tolist()
    img = np.empty((h, w, 3))
    img[:] = np.asarray(BACKGROUND, float) / 255.0
    if len(pts):
        cols = np.floor((pts[:, 0] - lo[0]) / resolution).astype(int)
        rows = np.floor((hi[1] - pts[:, 1]) / resolution).astype(int)
        rgb = flow_colors(flow, max_magnitude)
        for r, c, color in zip(rows, cols, rgb):
            img[r, c] = (1.0 - ALPHA) * img[r, c] + ALPHA * color
    return np.rint(img * 255.0).astype(np.uint8)


def write_ppm(img: np.ndarray, path) -> None:
    h, w, _ = img.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode())
            fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    magic, w, h, maxval = fields
    if magic != b"P6" or int(maxval) != 255:
        raise IoError(f"{path}: not an 8-bit binary PPM")
    body = data[pos + 1:]
    return np.frombuffer(body, dtype=np.uint8).reshape(int(h), int(w), 3)
