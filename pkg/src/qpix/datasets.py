"""Offline image sources: procedural handwritten-style digits and sample photos.

The digit renderer draws each numeral as a set of strokes (segments and
elliptic arcs) in a unit box, applies a random affine jitter and rasterizes
with an anti-aliased distance field into a 28x28 frame with a 20x20
content box, mirroring the layout of common handwritten-digit sets.
"""

from __future__ import annotations

import numpy as np

from . import imgenc

# Strokes in a unit box, y pointing down. ("l", x0, y0, x1, y1) is a segment,
# ("a", cx, cy, rx, ry, t0, t1) an elliptic arc with angles in turns.
_STROKES = {
    0: [("a", 0.5, 0.5, 0.32, 0.46, 0.0, 1.0)],
    1: [("l", 0.52, 0.04, 0.52, 0.96), ("l", 0.52, 0.04, 0.34, 0.22)],
    2: [("a", 0.5, 0.3, 0.3, 0.26, 0.5, 1.08), ("l", 0.74, 0.44, 0.18, 0.96),
        ("l", 0.18, 0.96, 0.84, 0.96)],
    3: [("a", 0.48, 0.27, 0.28, 0.23, 0.55, 1.25), ("a", 0.48, 0.72, 0.32, 0.25, 0.75, 1.45)],
    4: [("l", 0.64, 0.04, 0.14, 0.68), ("l", 0.14, 0.68, 0.88, 0.68),
        ("l", 0.64, 0.04, 0.64, 0.96)],
    5: [("l", 0.8, 0.04, 0.26, 0.04), ("l", 0.26, 0.04, 0.22, 0.44),
        ("a", 0.48, 0.66, 0.32, 0.3, 0.62, 1.35)],
    6: [("a", 0.5, 0.7, 0.3, 0.26, 0.0, 1.0), ("a", 0.78, 0.7, 0.58, 0.66, 0.5, 0.8)],
    7: [("l", 0.14, 0.04, 0.86, 0.04), ("l", 0.86, 0.04, 0.4, 0.96)],
    8: [("a", 0.5, 0.26, 0.24, 0.22, 0.0, 1.0), ("a", 0.5, 0.72, 0.3, 0.24, 0.0, 1.0)],
    9: [("a", 0.5, 0.3, 0.3, 0.26, 0.0, 1.0), ("l", 0.8, 0.3, 0.66, 0.96)],
}

FRAME = 28
BOX = 20


def _polyline(stroke, n_arc=40) -> np.ndarray:
    if stroke[0] == "l":
        _, x0, y0, x1, y1 = stroke
        return np.array([[x0, y0], [x1, y1]])
    _, cx, cy, rx, ry, t0, t1 = stroke
    t = 2 * np.pi * np.linspace(t0, t1, n_arc)
    # angle zero points right, increasing angles run clockwise on screen
    return np.column_stack([cx + rx * np.cos(t), cy + ry * np.sin(t)])


def _segment_distance(px, a, b) -> np.ndarray:
    ab = b - a
    denom = float(ab @ ab)
    t = np.zeros(len(px)) if denom == 0 else np.clip((px - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(px - (a + t[:, None] * ab), axis=1)


def render_digit(digit: int, rng=None, frame: int = FRAME) -> np.ndarray:
    """Render one digit in [0, 1] with random stroke width and affine jitter.

    Passing ``rng=None`` gives the undistorted template.
    """
    if digit not in _STROKES:
        raise ValueError("digit must be in 0..9")
    if rng is None:
        rot, shear, sx, sy, dx, dy, width = 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.09
    else:
        rot = rng.uniform(-0.2, 0.2)
        shear = rng.uniform(-0.25, 0.25)
        sx, sy = rng.uniform(0.8, 1.1), rng.uniform(0.85, 1.08)
        dx, dy = rng.uniform(-0.08, 0.08, size=2)
        width = rng.uniform(0.07, 0.12)
    c, s = np.cos(rot), np.sin(rot)
    aff = np.array([[c, -s], [s, c]]) @ np.array([[1.0, shear], [0.0, 1.0]]) @ np.diag([sx, sy])
    pad = (frame - BOX * frame / FRAME) / 2 / frame
    lines = []
    for stroke in _STROKES[digit]:
        pts = _polyline(stroke) - 0.5
        pts = pts @ aff.T + 0.5 + np.array([dx, dy])
        lines.append(pad + pts * (1 - 2 * pad))
    grid = (np.arange(frame) + 0.5) / frame
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    px = np.column_stack([xx.ravel(), yy.ravel()])
    dist = np.full(len(px), np.inf)
    for pts in lines:
        for a, b in zip(pts[:-1], pts[1:]):
            dist = np.minimum(dist, _segment_distance(px, a, b))
    half = width * (1 - 2 * pad) / 2
    soft = 0.7 / frame
    img = np.clip((half + soft - dist) / (2 * soft), 0.0, 1.0)
    return img.reshape(frame, frame)


def synthetic_digits(n: int, seed: int = 0, digits=range(10), side: int | None = 32):
    """Balanced labelled sample of rendered digits.

    Labels cycle through ``digits`` and every image gets its own jitter.
    Images are resized to ``side`` (``None`` keeps the 28x28 frame).

    Returns
    -------
    images : ndarray, shape (n, side, side)
    labels : ndarray of int
    """
    digits = list(digits)
    rng = np.random.default_rng(seed)
    labels = np.array([digits[k % len(digits)] for k in range(n)], dtype=int)
    imgs = []
    for lab in labels:
        img = render_digit(int(lab), rng)
        imgs.append(img if side is None else imgenc.prepare_image(img, side))
    shape = (0, side or FRAME, side or FRAME)
    return (np.array(imgs) if imgs else np.zeros(shape)), labels


NATURAL_IMAGES = ("astronaut", "chelsea", "coffee", "rocket", "hubble_deep_field",
                  "immunohistochemistry", "retina", "stereo_motorcycle", "colorwheel", "logo")


def natural_image(name: str) -> np.ndarray:
    """RGB sample photo from scikit-image as floats in [0, 1]."""
    if name not in NATURAL_IMAGES:
        raise ValueError(f"unknown sample image {name!r}")
    try:
        from skimage import data
    except ImportError as exc:  # pragma: no cover - optional extra
        raise ImportError("natural images need scikit-image (pip install qpix[images])") from exc
    img = getattr(data, name)()
    if isinstance(img, tuple):
        img = img[0]
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    img = img[..., :3]
    scale = 255.0 if img.dtype == np.uint8 else float(max(img.max(), 1))
    return img.astype(float) / scale


def natural_images(names=NATURAL_IMAGES, side: int | None = None) -> list:
    out = [natural_image(nm) for nm in names]
    return out if side is None else [imgenc.prepare_image(x, side) for x in out]
