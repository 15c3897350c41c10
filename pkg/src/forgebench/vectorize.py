"""Centerline extraction: thinning, stroke tracing and polyline simplification."""
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ValidationError
from .raster import BinaryImage

# ring order P2..P9 (clockwise from north) as (dy, dx)
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


@dataclass(eq=False)
class SkeletonImage(BinaryImage):
    pass


@dataclass
class Polyline:
    points: list  # [(x, y)] floats

    def __len__(self):
        return len(self.points)


@dataclass
class VectorDrawing:
    strokes: list = field(default_factory=list)
    source_width: int = 1
    source_height: int = 1


# --------------------------------------------------------------------------
# thinning


def _guard_squares(img, cand):
    """Drop one candidate from every 2x2 all-ink block whose four pixels are all candidates.

    Plain parallel Zhang-Suen deletes such blocks outright; the bottom-right
    pixel is kept instead.
    """
    full = cand[:-1, :-1] & cand[:-1, 1:] & cand[1:, :-1] & cand[1:, 1:]
    if full.any():
        ys, xs = np.nonzero(full)
        cand[ys + 1, xs + 1] = 0


def _neighbours(img, y, x):
    h, w = img.shape
    return [int(img[y + dy, x + dx]) if 0 <= y + dy < h and 0 <= x + dx < w else 0 for dy, dx in _RING]


def is_simple(img, y, x):
    """True when deleting (y, x) keeps both the 8-connected foreground and the
    4-connected background topology (one ink run around the pixel, which is
    not interior)."""
    p = _neighbours(img, y, x)
    # foreground: 8-components among neighbours
    seen = [False] * 8
    comps = 0
    for i in range(8):
        if p[i] and not seen[i]:
            comps += 1
            stack = [i]
            seen[i] = True
            while stack:
                k = stack.pop()
                for j in ((k + 1) % 8, (k - 1) % 8) + (((k + 2) % 8, (k - 2) % 8) if k % 2 == 0 else ()):
                    if p[j] and not seen[j]:
                        seen[j] = True
                        stack.append(j)
    if comps != 1:
        return False
    # background: 4-adjacent zero neighbours must be reachable from each other
    # through zero neighbours using 4-steps within the ring
    zeros4 = [k for k in (0, 2, 4, 6) if not p[k]]
    if not zeros4:
        return False
    seen = {zeros4[0]}
    stack = [zeros4[0]]
    while stack:
        k = stack.pop()
        for j in ((k + 1) % 8, (k - 1) % 8):
            # corner cells (odd) link the two edge cells beside them
            if not p[j] and j not in seen:
                seen.add(j)
                stack.append(j)
    return all(k in seen for k in zeros4)


def _cleanup_blocks(img):
    """Remove simple pixels from remaining 2x2 all-ink blocks. Returns True if anything changed."""
    changed = False
    while True:
        full = img[:-1, :-1] & img[:-1, 1:] & img[1:, :-1] & img[1:, 1:]
        if not full.any():
            return changed
        progress = False
        for y, x in zip(*np.nonzero(full)):
            block = [(y, x), (y, x + 1), (y + 1, x), (y + 1, x + 1)]
            if not all(img[p] for p in block):
                continue  # already broken by an earlier removal
            # prefer the pixel with most ink neighbours: it is the redundant corner
            order = sorted(block, key=lambda p: (-sum(_neighbours(img, *p)), p))
            for py, px in order:
                if is_simple(img, py, px):
                    img[py, px] = 0
                    progress = changed = True
                    break
        if not progress:
            return changed


def _zhang_suen(work):
    """Run both subiterations until nothing is deleted (in place)."""
    while True:
        deleted = False
        for step in (0, 1):
            cand = _kernels.zs_candidates(work, step)
            _guard_squares(work, cand)
            if cand.any():
                work[cand.astype(bool)] = 0
                deleted = True
        if not deleted:
            return


def thin(img):
    """Zhang-Suen thinning plus a topology-preserving 2x2 cleanup, iterated to a fixed point."""
    work = np.asarray(img.ink, dtype=np.uint8).copy()
    while True:
        _zhang_suen(work)
        if not _cleanup_blocks(work):
            break
    return SkeletonImage(work.astype(bool))


def count_components(ink):
    """Number of 8-connected ink components."""
    ink = np.asarray(ink, dtype=bool)
    h, w = ink.shape
    labels = np.zeros((h, w), dtype=np.int32)
    n = 0
    for y, x in zip(*np.nonzero(ink)):
        if labels[y, x]:
            continue
        n += 1
        labels[y, x] = n
        stack = [(y, x)]
        while stack:
            cy, cx = stack.pop()
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    ny, nx = cy + dy, cx + dx
                    if 0 <= ny < h and 0 <= nx < w and ink[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = n
                        stack.append((ny, nx))
    return n


def has_full_block(ink):
    ink = np.asarray(ink, dtype=bool)
    return bool((ink[:-1, :-1] & ink[:-1, 1:] & ink[1:, :-1] & ink[1:, 1:]).any())


# --------------------------------------------------------------------------
# tracing


def m_neighbours(ink, y, x):
    """Mixed (m-) adjacency: 4-neighbours always; a diagonal neighbour only when
    no shared 4-neighbour is ink.  Same components as 8-connectivity, without
    the redundant diagonal links that make every pixel near a crossing look like
    a junction."""
    h, w = ink.shape
    out = []
    for dy, dx in ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)):
        ny, nx = y + dy, x + dx
        if not (0 <= ny < h and 0 <= nx < w) or not ink[ny, nx]:
            continue
        if dy and dx and (ink[y, nx] or ink[ny, x]):
            continue
        out.append((ny, nx))
    return out


def _center(p):
    y, x = p
    return (float(x) + 0.5, float(y) + 0.5)


def _orient(points):
    # leftmost endpoint first; ties: the lower one (larger y) first
    a, b = points[0], points[-1]
    if (b[0], -b[1]) < (a[0], -a[1]):
        return points[::-1]
    return points


def extract_polylines(sk):
    """Trace a skeleton into strokes that run between end and junction pixels."""
    ink = np.asarray(sk.ink, dtype=bool)
    h, w = ink.shape
    pixels = [(int(y), int(x)) for y, x in zip(*np.nonzero(ink))]
    adj = {p: m_neighbours(ink, *p) for p in pixels}
    nodes = [p for p in pixels if len(adj[p]) != 2]
    used = set()
    paths = []

    def walk(start, nxt):
        path = [start, nxt]
        used.add(frozenset((start, nxt)))
        prev, cur = start, nxt
        while len(adj[cur]) == 2 and cur != start:
            a, b = adj[cur]
            step = b if a == prev else a
            edge = frozenset((cur, step))
            if edge in used:
                break
            used.add(edge)
            path.append(step)
            prev, cur = cur, step
        return path

    visited = set()
    for node in nodes:
        if not adj[node]:
            x, y = _center(node)
            paths.append([(x - 0.25, y), (x + 0.25, y)])
            visited.add(node)
            continue
        for nb in adj[node]:
            if frozenset((node, nb)) in used:
                continue
            path = walk(node, nb)
            visited.update(path)
            paths.append([_center(p) for p in path])
    # closed loops made only of degree-2 pixels
    for p in pixels:
        if p in visited:
            continue
        path = walk(p, adj[p][0])
        visited.update(path)
        paths.append([_center(q) for q in path])

    strokes = [Polyline(_orient(pts)) for pts in paths]
    strokes.sort(key=lambda s: (s.points[0][1], s.points[0][0], tuple(s.points)))
    return VectorDrawing(strokes, w, h)


def centerline(img):
    """Binary image to traced drawing (thin + extract)."""
    return extract_polylines(thin(img))


# --------------------------------------------------------------------------
# simplification


def point_segment_distance(p, a, b):
    px, py = p
    ax, ay = a
    bx, by = b
    dx, dy = bx - ax, by - ay
    den = dx * dx + dy * dy
    if den == 0:
        return math.hypot(px - ax, py - ay)
    t = max(0.0, min(1.0, ((px - ax) * dx + (py - ay) * dy) / den))
    return math.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _dedupe(points):
    out = [points[0]]
    for p in points[1:]:
        if p != out[-1]:
            out.append(p)
    return out


def simplify(p, epsilon):
    """Ramer-Douglas-Peucker: keep a point when it lies more than ``epsilon`` from the chord."""
    if epsilon < 0:
        raise ValidationError("epsilon must be >= 0")
    pts = _dedupe([tuple(q) for q in p.points])
    if len(pts) == 1:
        return Polyline([pts[0], pts[0]])  # a dot still needs two endpoints
    if epsilon == 0 or len(pts) <= 2:
        return Polyline(pts)
    keep = [False] * len(pts)
    keep[0] = keep[-1] = True
    stack = [(0, len(pts) - 1)]
    while stack:
        first, last = stack.pop()
        best, index = epsilon, None
        for i in range(first + 1, last):
            d = point_segment_distance(pts[i], pts[first], pts[last])
            if d > best:
                best, index = d, i
        if index is not None:
            keep[index] = True
            stack.append((index, last))
            stack.append((first, index))
    out = [q for q, k in zip(pts, keep) if k]
    if len(out) < 2:
        out = [pts[0], pts[-1]]
    return Polyline(out)


def simplify_drawing(d, epsilon=0.75):
    return VectorDrawing([simplify(s, epsilon) for s in d.strokes], d.source_width, d.source_height)


# --------------------------------------------------------------------------
# text format


def dumps_drawing(d):
    lines = [f"# forgebench drawing width={d.source_width} height={d.source_height}"]
    for s in d.strokes:
        lines.append(" ".join(f"{x:.3f},{y:.3f}" for x, y in s.points))
    return "\n".join(lines) + "\n"


def loads_drawing(text):
    width = height = None
    strokes = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                if tok.startswith("width="):
                    width = int(tok[6:])
                elif tok.startswith("height="):
                    height = int(tok[7:])
            continue
        try:
            pts = [tuple(float(v) for v in tok.split(",")) for tok in line.split()]
        except ValueError:
            raise ValidationError(f"line {lineno}: malformed point") from None
        if any(len(q) != 2 for q in pts) or len(pts) < 2:
            raise ValidationError(f"line {lineno}: a stroke needs at least two x,y points")
        strokes.append(Polyline(pts))
    if width is None or height is None:
        xs = [x for s in strokes for x, _ in s.points] or [1.0]
        ys = [y for s in strokes for _, y in s.points] or [1.0]
        width = width or max(1, math.ceil(max(xs)))
        height = height or max(1, math.ceil(max(ys)))
    return VectorDrawing(strokes, width, height)
