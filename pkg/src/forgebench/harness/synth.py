"""Synthetic signature corpus (desk-scale stand-in for a scanned dataset).

Each writer owns a template: a few smooth strokes drawn as Catmull-Rom
splines through random control points that advance left to right.  A genuine
sample re-draws the writer's own template with small control-point drift, a
little tremor and pressure-varying pen width.  A forged sample re-draws
another writer's template with larger tremor (``jitter``) and a steadier,
slower pen (narrower width range).
"""
import math
import os
from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..raster import GrayImage, write_pgm
from ..rng import numpy_rng


@dataclass(frozen=True)
class SyntheticSignatureSpec:
    strokes: tuple = (2, 3)  # inclusive range
    control_points: tuple = (4, 7)  # per stroke, inclusive range
    canvas: int = 128  # square side in px
    jitter: float = 1.6  # forgery tremor std-dev, px
    genuine_jitter: float = 0.25  # genuine tremor std-dev, px
    drift: float = 2.0  # control-point variation between samples, px
    seed: int = 0

    def __post_init__(self):
        for name in ("strokes", "control_points"):
            lo, hi = getattr(self, name)
            if lo < 1 or hi < lo:
                raise ValidationError(f"{name} range must be non-empty and positive")
        if self.canvas < 32:
            raise ValidationError("canvas must be >= 32 px")
        if self.jitter < 0 or self.genuine_jitter < 0 or self.drift < 0:
            raise ValidationError("jitter and drift must be non-negative")


def catmull_rom(ctrl, spacing=0.5):
    """Dense points on the centripetal-free (uniform) Catmull-Rom spline through ``ctrl``."""
    ctrl = np.asarray(ctrl, dtype=np.float64)
    if len(ctrl) < 2:
        return ctrl.copy()
    pts = np.vstack([ctrl[0], ctrl, ctrl[-1]])
    out = []
    for i in range(1, len(pts) - 2):
        p0, p1, p2, p3 = pts[i - 1], pts[i], pts[i + 1], pts[i + 2]
        n = max(2, int(math.ceil(np.hypot(*(p2 - p1)) / spacing)))
        t = np.arange(n)[:, None] / n
        t2, t3 = t * t, t * t * t
        seg = 0.5 * ((2 * p1) + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t2 + (-p0 + 3 * p1 - 3 * p2 + p3) * t3)
        out.append(seg)
    out.append(ctrl[-1:])
    return np.vstack(out)


def make_template(rng, spec):
    """List of control-point arrays, one per stroke."""
    c = spec.canvas
    n_strokes = int(rng.integers(spec.strokes[0], spec.strokes[1] + 1))
    strokes = []
    for s in range(n_strokes):
        k = int(rng.integers(spec.control_points[0], spec.control_points[1] + 1))
        x0 = rng.uniform(0.12, 0.45) * c
        x1 = rng.uniform(0.55, 0.88) * c
        xs = np.sort(rng.uniform(x0, x1, size=k))
        xs[0], xs[-1] = x0, x1
        base = rng.uniform(0.35, 0.65) * c
        ys = base + rng.uniform(-0.22, 0.22, size=k) * c
        strokes.append(np.column_stack([xs, np.clip(ys, 0.1 * c, 0.9 * c)]))
    return strokes


def _smooth_noise(rng, n, std, corr=4):
    """Gaussian noise low-passed over ``corr`` samples, rescaled to ``std``."""
    if std == 0 or n == 0:
        return np.zeros((n, 2))
    raw = rng.standard_normal((n + 2 * corr, 2))
    kernel = np.ones(corr) / corr
    sm = np.column_stack([np.convolve(raw[:, i], kernel, mode="same") for i in range(2)])[corr : corr + n]
    return sm / max(sm.std(), 1e-12) * std


def render(polylines, widths, canvas):
    """Stamp discs of per-point radius along dense polylines; returns a GrayImage."""
    ink = np.zeros((canvas, canvas), dtype=bool)
    rmax = max((float(w.max()) for w in widths if len(w)), default=1.0)
    k = int(math.ceil(rmax)) + 1
    oy, ox = np.mgrid[-k : k + 1, -k : k + 1]
    ox, oy = ox.ravel(), oy.ravel()
    for pts, rad in zip(polylines, widths):
        cx = np.floor(pts[:, 0]).astype(np.int64)
        cy = np.floor(pts[:, 1]).astype(np.int64)
        px = cx[:, None] + ox[None, :]
        py = cy[:, None] + oy[None, :]
        d2 = (px + 0.5 - pts[:, 0:1]) ** 2 + (py + 0.5 - pts[:, 1:2]) ** 2
        keep = (d2 <= rad[:, None] ** 2) & (px >= 0) & (px < canvas) & (py >= 0) & (py < canvas)
        ink[py[keep], px[keep]] = True
    return GrayImage(np.where(ink, 0, 255).astype(np.uint8))


def draw_sample(template, rng, spec, forged):
    tremor = spec.jitter if forged else spec.genuine_jitter
    lines, widths = [], []
    for ctrl in template:
        moved = ctrl + rng.normal(0, spec.drift, size=ctrl.shape)
        dense = catmull_rom(moved)
        dense = dense + _smooth_noise(rng, len(dense), tremor)
        dense = np.clip(dense, 1, spec.canvas - 2)
        n = len(dense)
        phase = rng.uniform(0, 2 * np.pi)
        t = np.linspace(0, 1, n)
        if forged:
            rad = np.full(n, rng.uniform(2.3, 2.8))
        else:
            # pressure: swells mid-stroke, tapers at both ends
            rad = 1.8 + 1.2 * np.sin(np.pi * t) ** 0.7 + 0.3 * np.sin(6 * np.pi * t + phase)
        lines.append(dense)
        widths.append(rad)
    return render(lines, widths, spec.canvas)


def synth_images(spec, n_writers, per_writer):
    """Generate ``[(name, label, GrayImage)]`` in a fixed order.

    ``per_writer`` is (genuine count, forged count) or a single int for both.
    """
    if n_writers < 1:
        raise ValidationError("n_writers must be >= 1")
    n_gen, n_forg = (per_writer, per_writer) if isinstance(per_writer, int) else per_writer
    templates = [make_template(numpy_rng(spec.seed, 0x7E, w), spec) for w in range(n_writers)]
    out = []
    for w in range(n_writers):
        rng = numpy_rng(spec.seed, 0x6E, w)
        for k in range(n_gen):
            out.append((f"w{w:03d}_g{k:02d}", "genuine", draw_sample(templates[w], rng, spec, False)))
        victim = (w + 1) % n_writers if n_writers > 1 else w
        rng = numpy_rng(spec.seed, 0xF0, w)
        for k in range(n_forg):
            out.append((f"w{victim:03d}_f{w:03d}_{k:02d}", "forged", draw_sample(templates[victim], rng, spec, True)))
    return out


def synth_corpus(spec, n_writers, per_writer, root):
    """Write the corpus in the dataset layout (genuine/, forged/, dataset.tsv); returns the paths."""
    items = synth_images(spec, n_writers, per_writer)
    for label in ("genuine", "forged"):
        os.makedirs(os.path.join(root, label), exist_ok=True)
    paths = []
    rows = []
    for name, label, img in items:
        rel = os.path.join(label, name + ".pgm")
        write_pgm(os.path.join(root, rel), img)
        paths.append(os.path.join(root, rel))
        rows.append(f"{rel}\t{label}")
    with open(os.path.join(root, "dataset.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")
    return paths
