"""Image ingestion, preprocessing and rotation augmentation.

Images are held as numpy arrays indexed ``[row, column]`` (row-major).  A
``GrayImage`` stores 8-bit intensities with 0 = black ink and 255 = white
paper; a ``BinaryImage`` stores booleans with True = ink.
"""
import io
import math
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import MalformedHeader, TruncatedPayload, ValidationError
from .rng import Xoshiro256


@dataclass(eq=False)
class GrayImage:
    pixels: np.ndarray  # uint8 (height, width)

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 1:
            raise ValidationError(f"GrayImage needs a non-empty 2-D array, got shape {self.pixels.shape}")

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(eq=False)
class BinaryImage:
    ink: np.ndarray  # bool (height, width)

    def __post_init__(self):
        self.ink = np.ascontiguousarray(self.ink, dtype=bool)
        if self.ink.ndim != 2:
            raise ValidationError("BinaryImage needs a 2-D array")

    @property
    def width(self):
        return self.ink.shape[1]

    @property
    def height(self):
        return self.ink.shape[0]

    def to_gray(self):
        """Render as 0 (ink) / 255 (paper)."""
        return GrayImage(np.where(self.ink, 0, 255).astype(np.uint8))

    def __eq__(self, other):
        return isinstance(other, BinaryImage) and np.array_equal(self.ink, other.ink)


@dataclass(frozen=True)
class AugmentationSpec:
    max_rotation: float = 20.0  # degrees
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.max_rotation <= 180:
            raise ValidationError(f"max_rotation must lie in [0, 180], got {self.max_rotation}")


# --------------------------------------------------------------------------
# decoding / encoding


def _pgm_tokens(data, count, pos):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedHeader("PGM header ended early")
        tokens.append(data[start:pos])
    return tokens, pos


def _scale_samples(values, maxval):
    values = np.asarray(values, dtype=np.int64)
    if maxval > 255:
        return (values >> 8).astype(np.uint8)
    if maxval == 255:
        return values.astype(np.uint8)
    return ((values * 255 + maxval // 2) // maxval).astype(np.uint8)


def _decode_pgm(data):
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise MalformedHeader(f"bad PGM magic {magic!r}")
    try:
        (w, h, maxval), pos = _pgm_tokens(data, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise MalformedHeader(f"non-numeric PGM header field: {exc}") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise MalformedHeader(f"bad PGM dimensions {w}x{h} maxval {maxval}")
    npix = w * h
    if magic == b"P5":
        pos += 1  # single whitespace after maxval
        if maxval > 255:
            payload = data[pos : pos + 2 * npix]
            if len(payload) < 2 * npix:
                raise TruncatedPayload(f"expected {npix} 16-bit samples, got {len(payload) // 2}")
            values = np.frombuffer(payload, dtype=">u2")
        else:
            payload = data[pos : pos + npix]
            if len(payload) < npix:
                raise TruncatedPayload(f"expected {npix} samples, got {len(payload)}")
            values = np.frombuffer(payload, dtype=np.uint8)
    else:
        body = data[pos:].split()
        if len(body) < npix:
            raise TruncatedPayload(f"expected {npix} samples, got {len(body)}")
        try:
            values = [int(t) for t in body[:npix]]
        except ValueError:
            raise MalformedHeader("non-numeric sample in P2 payload") from None
    return GrayImage(_scale_samples(values, maxval).reshape(h, w))


def _decode_png(data):
    from PIL import Image

    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except Exception as exc:  # PIL raises a zoo of types
        raise MalformedHeader(f"cannot decode PNG: {exc}") from None
    if im.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(im, dtype=np.int64)
        return GrayImage((np.clip(arr, 0, 65535) >> 8).astype(np.uint8))
    if im.mode == "L":
        return GrayImage(np.asarray(im, dtype=np.uint8))
    if im.mode in ("1", "P", "LA", "PA", "RGBA", "RGB", "CMYK", "YCbCr"):
        if "A" in im.mode or (im.mode == "P" and "transparency" in im.info):
            rgba = im.convert("RGBA")
            white = Image.new("RGBA", rgba.size, (255, 255, 255, 255))
            im = Image.alpha_composite(white, rgba)
        rgb = np.asarray(im.convert("RGB"), dtype=np.int64)
        return GrayImage(luminance(rgb))
    raise MalformedHeader(f"unsupported PNG mode {im.mode}")


def luminance(rgb):
    """Integer luma: (299 r + 587 g + 114 b) // 1000."""
    rgb = np.asarray(rgb, dtype=np.int64)
    return ((rgb[..., 0] * 299 + rgb[..., 1] * 587 + rgb[..., 2] * 114) // 1000).astype(np.uint8)


def load_image(data, format_hint=None):
    """Decode PGM (P2/P5) or PNG bytes into a GrayImage."""
    if not data:
        raise MalformedHeader("empty input")
    if format_hint is None:
        format_hint = "png" if data[:8] == b"\x89PNG\r\n\x1a\n" else "pgm"
    if format_hint == "pgm":
        return _decode_pgm(bytes(data))
    if format_hint == "png":
        return _decode_png(bytes(data))
    raise ValidationError(f"unknown format hint {format_hint!r}")


def read_image(path):
    with open(path, "rb") as fh:
        data = fh.read()
    ext = os.path.splitext(str(path))[1].lower()
    hint = {".png": "png", ".pgm": "pgm"}.get(ext)
    return load_image(data, hint)


def save_pgm(img):
    """Encode as binary P5 PGM bytes; BinaryImages are rendered 0/255."""
    if isinstance(img, BinaryImage):
        img = img.to_gray()
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + img.pixels.tobytes()


def write_pgm(path, img):
    with open(path, "wb") as fh:
        fh.write(save_pgm(img))


# --------------------------------------------------------------------------
# preprocessing


def _round_half_up(values):
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def letterbox(img, fill=255):
    """Center the image on a square canvas of side max(width, height)."""
    side = max(img.width, img.height)
    if img.width == img.height:
        return img
    canvas = np.full((side, side), fill, dtype=np.uint8)
    y0 = (side - img.height) // 2
    x0 = (side - img.width) // 2
    canvas[y0 : y0 + img.height, x0 : x0 + img.width] = img.pixels
    return GrayImage(canvas)


def _axis_weights(src_size, dst_size):
    # half-pixel centers (align_corners=False), clamped at the borders
    scale = src_size / dst_size
    pos = (np.arange(dst_size) + 0.5) * scale - 0.5
    pos = np.clip(pos, 0.0, src_size - 1)
    lo = np.floor(pos).astype(np.int64)
    hi = np.minimum(lo + 1, src_size - 1)
    return lo, hi, pos - lo


def resize_bilinear(img, target):
    """Letterbox onto a white square, then bilinear-resample to target x target."""
    if target < 1:
        raise ValidationError(f"target size must be >= 1, got {target}")
    sq = letterbox(img)
    side = sq.width
    if side == target:
        return GrayImage(sq.pixels.copy())
    src = sq.pixels.astype(np.float64)
    y_lo, y_hi, fy = _axis_weights(side, target)
    x_lo, x_hi, fx = _axis_weights(side, target)
    top = src[y_lo][:, x_lo] * (1 - fx) + src[y_lo][:, x_hi] * fx
    bot = src[y_hi][:, x_lo] * (1 - fx) + src[y_hi][:, x_hi] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return GrayImage(_round_half_up(out))


def otsu_threshold(img):
    """Threshold t maximizing between-class variance of classes [0, t) and [t, 256).

    Returns None when no threshold separates two non-empty classes (constant
    image).  Comparisons are exact rational arithmetic; ties go to the smallest t.
    """
    hist = np.bincount(img.pixels.ravel(), minlength=256).astype(np.int64)
    total = int(hist.sum())
    total_sum = int((hist * np.arange(256)).sum())
    n0 = s0 = 0
    best_t, best = None, Fraction(0)
    for t in range(1, 256):
        n0 += int(hist[t - 1])
        s0 += (t - 1) * int(hist[t - 1])
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = total_sum - s0
        # n0*n1*(mu0 - mu1)^2 scaled by total^2
        score = Fraction((n1 * s0 - n0 * s1) ** 2, n0 * n1)
        if score > best:
            best, best_t = score, t
    return best_t


def binarize_otsu(img):
    t = otsu_threshold(img)
    if t is None:
        return BinaryImage(np.zeros(img.pixels.shape, dtype=bool))
    return BinaryImage(img.pixels < t)


def preprocess(img, size=256):
    """Resize then binarize; the order used throughout the pipeline."""
    return binarize_otsu(resize_bilinear(img, size))


def _snap(v):
    r = np.round(v)
    return np.where(np.abs(v - r) < 1e-9, r, v)


def rotate(img, angle, fill=255):
    """Rotate about the image center by ``angle`` degrees.

    Coordinates are (x right, y down), so a positive angle turns clockwise on
    screen.  Bilinear sampling; samples outside the source read ``fill``.
    """
    if angle == 0:
        return GrayImage(img.pixels.copy())
    h, w = img.pixels.shape
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    th = math.radians(angle)
    c, s = math.cos(th), math.sin(th)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    # inverse map: rotate destination offsets by -angle
    sx = _snap(c * dx + s * dy + cx)
    sy = _snap(-s * dx + c * dy + cy)
    padded = np.full((h + 2, w + 2), float(fill))
    padded[1:-1, 1:-1] = img.pixels
    # shift by one so the fill border covers one pixel beyond the edge
    sx = np.clip(sx + 1, 0, w + 1)
    sy = np.clip(sy + 1, 0, h + 1)
    x0 = np.minimum(np.floor(sx).astype(np.int64), w)
    y0 = np.minimum(np.floor(sy).astype(np.int64), h)
    fx, fy = sx - x0, sy - y0
    x1, y1 = x0 + 1, y0 + 1
    out = (
        padded[y0, x0] * (1 - fx) * (1 - fy)
        + padded[y0, x1] * fx * (1 - fy)
        + padded[y1, x0] * (1 - fx) * fy
        + padded[y1, x1] * fx * fy
    )
    return GrayImage(_round_half_up(out))


def rotation_angles(spec, count):
    """The angle stream ``augment`` uses: uniform in [-max, +max] from xoshiro256**."""
    gen = Xoshiro256(spec.seed)
    return [gen.uniform(-spec.max_rotation, spec.max_rotation) for _ in range(count)]


def augment(images, spec):
    angles = rotation_angles(spec, len(images))
    return [rotate(img, a, 255) if spec.max_rotation > 0 else GrayImage(img.pixels.copy()) for img, a in zip(images, angles)]


# --------------------------------------------------------------------------
# dataset layout

LABELS = ("forged", "genuine")  # index == class id; genuine is the positive class


def list_dataset(root):
    """Return sorted ``[(path, label)]`` from ``dataset.tsv`` or genuine/ + forged/."""
    manifest = os.path.join(root, "dataset.tsv")
    entries = []
    if os.path.exists(manifest):
        with open(manifest, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or parts[1] not in LABELS:
                    raise ValidationError(f"{manifest}:{lineno}: expected 'path<TAB>genuine|forged'")
                path = parts[0] if os.path.isabs(parts[0]) else os.path.join(root, parts[0])
                entries.append((path, parts[1]))
        return entries
    for label in ("genuine", "forged"):
        d = os.path.join(root, label)
        if not os.path.isdir(d):
            continue
        for name in sorted(os.listdir(d)):
            if name.lower().endswith((".png", ".pgm")):
                entries.append((os.path.join(d, name), label))
    if not entries:
        raise ValidationError(f"no images found under {root}")
    return entries


def load_dataset(root):
    """Read every image of a dataset directory: ``[(path, label, GrayImage)]``."""
    return [(path, label, read_image(path)) for path, label in list_dataset(root)]
