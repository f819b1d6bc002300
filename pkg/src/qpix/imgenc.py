"""Image ingestion and FRQI-family quantum encodings.

Images are plain float64 numpy arrays with values in [0, 1], shaped
``(H, W)`` for grayscale or ``(H, W, 3)`` for RGB. Encoded states put the
color qubits first (most significant) followed by the address qubits, most
significant address bit first::

    |psi> = 2^{-n/2} sum_j |c(x_j)> (x) |j>
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

SCHEMES = ("frqi", "mcrqi", "tmulti", "dmulti")
ORDERINGS = ("row", "hierarchical", "snake")
DENSE_QUBIT_CAP = 20

_COLOR_QUBITS = {"frqi": 1, "mcrqi": 3, "tmulti": 3, "dmulti": 3}
_IDX_IMAGES = 0x00000803
_IDX_LABELS = 0x00000801


class FormatError(ValueError):
    """Raised when an input file does not match its declared format."""


class UnsupportedFormat(FormatError):
    """Raised for well-formed inputs using features that are not handled."""


@dataclass(frozen=True)
class EncodingSpec:
    """How an image is turned into a quantum state.

    Attributes
    ----------
    scheme : str
        One of ``frqi``, ``mcrqi``, ``tmulti`` (tensor-product multi-FRQI) or
        ``dmulti`` (direct-sum multi-FRQI).
    ordering : str
        Pixel ordering: ``row``, ``hierarchical`` (Z-order) or ``snake``.
    patches : int
        Number of separately encoded square patches, a power of two.
    copies : int
        Number of identical copies in the final product state.
    """

    scheme: str = "frqi"
    ordering: str = "hierarchical"
    patches: int = 1
    copies: int = 1

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown encoding scheme {self.scheme!r}")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"unknown pixel ordering {self.ordering!r}")
        if self.patches < 1 or self.patches & (self.patches - 1):
            raise ValueError("patch count must be a power of two")
        if self.copies < 1:
            raise ValueError("copies must be at least 1")

    @property
    def color_qubits(self) -> int:
        return _COLOR_QUBITS[self.scheme]

    def qubits_per_patch(self, pixel_count: int) -> int:
        """Address plus color qubits of a single patch."""
        if pixel_count % self.patches:
            raise ValueError("patch count must divide the pixel count")
        per_patch = pixel_count // self.patches
        n_addr = per_patch.bit_length() - 1
        if 1 << n_addr != per_patch:
            raise ValueError("patch pixel count must be a power of two")
        return n_addr + self.color_qubits

    def total_qubits(self, pixel_count: int) -> int:
        return self.copies * self.patches * self.qubits_per_patch(pixel_count)


# ---------------------------------------------------------------------------
# file formats


def load_idx(data: bytes):
    """Parse an IDX container holding images (0x803) or labels (0x801).

    Returns
    -------
    images : ndarray or None
        ``(N, H, W)`` float64 array scaled to [0, 1] for image files.
    labels : ndarray or None
        ``(N,)`` int64 array for label files.
    """
    if len(data) < 4:
        raise FormatError("IDX file shorter than its magic word")
    (magic,) = struct.unpack(">I", data[:4])
    if magic == _IDX_IMAGES:
        ndim = 3
    elif magic == _IDX_LABELS:
        ndim = 1
    else:
        raise FormatError(f"unknown IDX magic 0x{magic:08x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise FormatError("truncated IDX header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    size = int(np.prod(dims))
    if len(data) != header + size:
        raise FormatError(
            f"IDX payload has {len(data) - header} bytes, expected {size}")
    payload = np.frombuffer(data, dtype=np.uint8, offset=header)
    if ndim == 1:
        labels = payload.astype(np.int64)
        if labels.size and labels.max() > 9:
            raise FormatError("IDX labels must lie in 0..9")
        return None, labels
    return payload.reshape(dims).astype(np.float64) / 255.0, None


def dump_idx_images(images) -> bytes:
    """Serialize ``(N, H, W)`` images in [0, 1] as an IDX image file."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError("expected an (N, H, W) stack")
    raw = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    return struct.pack(">4I", _IDX_IMAGES, *arr.shape) + raw.tobytes()


def dump_idx_labels(labels) -> bytes:
    lab = np.asarray(labels, dtype=np.int64)
    if lab.ndim != 1 or (lab.size and (lab.min() < 0 or lab.max() > 9)):
        raise ValueError("labels must be a 1-d sequence of digits")
    return struct.pack(">2I", _IDX_LABELS, lab.size) + lab.astype(np.uint8).tobytes()


def load_pnm(data: bytes) -> np.ndarray:
    """Parse a binary PGM (P5) or PPM (P6) file with maxval 255."""
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError("truncated PNM header")
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise UnsupportedFormat(f"unsupported PNM variant {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError("non-integer PNM header field") from exc
    if maxval != 255:
        raise UnsupportedFormat(f"only maxval 255 is supported, got {maxval}")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    channels = 1 if magic == b"P5" else 3
    size = width * height * channels
    if len(data) - pos != size:
        raise FormatError(
            f"PNM raster has {len(data) - pos} bytes, expected {size}")
    raster = np.frombuffer(data, dtype=np.uint8, offset=pos).astype(np.float64)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return raster.reshape(shape) / 255.0


def dump_pnm(img) -> bytes:
    """Serialize a grayscale or RGB image as binary P5/P6."""
    arr = np.asarray(img, dtype=np.float64)
    magic = b"P5" if arr.ndim == 2 else b"P6"
    raw = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + raw.tobytes()


# ---------------------------------------------------------------------------
# geometry


def _interp_weights(n_in: int, n_out: int):
    # align_corners=False: output pixel centers map back onto input centers
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(img, side: int) -> np.ndarray:
    """Bilinear resize to ``side x side`` with half-pixel-center sampling."""
    if side < 1:
        raise ValueError("side must be positive")
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    if (h, w) == (side, side):
        return arr.copy()
    r0, r1, fr = _interp_weights(h, side)
    c0, c1, fc = _interp_weights(w, side)
    extra = (None,) * (arr.ndim - 2)
    fr = fr[(slice(None), None) + extra]
    fc = fc[(None, slice(None)) + extra]
    rows = arr[r0] * (1 - fr) + arr[r1] * fr
    out = rows[:, c0] * (1 - fc) + rows[:, c1] * fc
    return np.clip(out, 0.0, 1.0)


def center_crop_square(img) -> np.ndarray:
    """Largest centered square section of an image."""
    arr = np.asarray(img)
    h, w = arr.shape[:2]
    s = min(h, w)
    top, left = (h - s) // 2, (w - s) // 2
    return arr[top:top + s, left:left + s]


def prepare_image(img, side: int) -> np.ndarray:
    """Center-crop to a square and resize to ``side``."""
    return resize_bilinear(center_crop_square(img), side)


def pixel_order_map(ordering: str, n: int) -> np.ndarray:
    """Map each linear index ``j`` to its flat pixel position ``row * W + col``.

    The image has ``2^(n//2)`` rows and ``2^(n - n//2)`` columns. In the
    hierarchical ordering successive bit pairs of ``j`` (row bit first)
    select nested quadrants.
    """
    if ordering not in ORDERINGS:
        raise ValueError(f"unknown pixel ordering {ordering!r}")
    if n < 0:
        raise ValueError("n must be non-negative")
    j = np.arange(1 << n)
    n_row = n // 2
    width = 1 << (n - n_row)
    if ordering == "hierarchical":
        if n % 2:
            raise ValueError("hierarchical ordering needs an even qubit count")
        row = np.zeros_like(j)
        col = np.zeros_like(j)
        for k in range(n_row):
            row = (row << 1) | ((j >> (n - 1 - 2 * k)) & 1)
            col = (col << 1) | ((j >> (n - 2 - 2 * k)) & 1)
    else:
        row, col = j // width, j % width
        if ordering == "snake":
            col = np.where(row % 2 == 1, width - 1 - col, col)
    return row * width + col


def split_patches(img, n_patches: int) -> list:
    """Tile an image into ``n_patches`` equal patches enumerated in Z-order.

    For an odd power of two the patch grid has twice as many rows as columns,
    so each patch is twice as wide as it is tall.
    """
    arr = np.asarray(img)
    if n_patches < 1 or n_patches & (n_patches - 1):
        raise ValueError("patch count must be a power of two")
    k = n_patches.bit_length() - 1
    h, w = arr.shape[:2]
    grid_r, grid_c = 1 << (k - k // 2), 1 << (k // 2)
    if h % grid_r or w % grid_c:
        raise ValueError(f"{n_patches} patches do not tile a {h}x{w} image")
    ph, pw = h // grid_r, w // grid_c
    if k % 2 == 0:
        cells = pixel_order_map("hierarchical", k)
    else:
        cells = _odd_zorder(k)
    out = []
    for cell in cells:
        r, c = divmod(int(cell), grid_c)
        out.append(arr[r * ph:(r + 1) * ph, c * pw:(c + 1) * pw])
    return out


def _odd_zorder(k: int) -> np.ndarray:
    # leading bit picks the top/bottom half, the rest is a square Z-order
    inner = pixel_order_map("hierarchical", k - 1)
    side = 1 << ((k - 1) // 2)
    return np.concatenate([inner, inner + side * side])


# ---------------------------------------------------------------------------
# encodings


def color_block(pixels, scheme: str) -> np.ndarray:
    """Color-register amplitudes for each pixel, shape ``(2^n_c, P)``.

    ``pixels`` is ``(P,)`` for FRQI and ``(P, 3)`` for the RGB schemes.
    """
    x = np.asarray(pixels, dtype=np.float64)
    if scheme == "frqi":
        if x.ndim != 1:
            raise ValueError("FRQI encodes grayscale images")
        t = 0.5 * np.pi * x
        return np.stack([np.cos(t), np.sin(t)])
    if scheme not in SCHEMES:
        raise ValueError(f"unknown encoding scheme {scheme!r}")
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"{scheme} encodes RGB images")
    t = 0.5 * np.pi * x.T
    c, s = np.cos(t), np.sin(t)
    out = np.zeros((8, x.shape[0]))
    if scheme == "tmulti":
        for idx in range(8):
            bits = [(idx >> 2) & 1, (idx >> 1) & 1, idx & 1]
            amp = np.ones(x.shape[0])
            for ch, b in enumerate(bits):
                amp = amp * (s[ch] if b else c[ch])
            out[idx] = amp
        return out
    # R -> |0 00>/|1 00>, G -> |0 01>/|1 01>, B -> |0 10>/|1 10>
    out[0:3] = c
    out[4:7] = s
    if scheme == "dmulti":
        return out / np.sqrt(3.0)
    out[3] = 1.0  # alpha channel fixed at 0: cos(0)=1, sin(0)=0
    return 0.5 * out


def _pixels_in_order(img, ordering: str):
    arr = np.asarray(img, dtype=np.float64)
    h, w = arr.shape[:2]
    count = h * w
    n = count.bit_length() - 1
    if 1 << n != count or h > w or w > 2 * h:
        raise ValueError(f"a {h}x{w} image has no qubit address layout")
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError("pixel values must lie in [0, 1]")
    order = pixel_order_map(ordering, n)
    flat = arr.reshape(count, -1) if arr.ndim == 3 else arr.reshape(count)
    return flat[order], n


def encode_patch(img, scheme: str = "frqi", ordering: str = "hierarchical") -> np.ndarray:
    """Dense amplitude vector of a single (unpatched) image."""
    pixels, n = _pixels_in_order(img, ordering)
    block = color_block(pixels, scheme)
    if n + block.shape[0].bit_length() - 1 > DENSE_QUBIT_CAP:
        raise ValueError(f"dense encoding is capped at {DENSE_QUBIT_CAP} qubits")
    return (block / np.sqrt(1 << n)).reshape(-1)


def encode_dense(img, spec: EncodingSpec, patch_index: int = 0) -> np.ndarray:
    """Dense amplitude vector of one patch of ``img`` under ``spec``."""
    patches = split_patches(img, spec.patches)
    if not 0 <= patch_index < len(patches):
        raise IndexError("patch index out of range")
    return encode_patch(patches[patch_index], spec.scheme, spec.ordering)
