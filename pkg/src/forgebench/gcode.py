"""Plotter G-code: compile drawings, render/parse the text dialect, simulate the pen.

The dialect is deliberately small: ``G0``/``G1`` absolute XY moves in mm plus a
pen-control pair that each device profile renders either as a Z lift
(``G0 Z5`` / ``G0 Z0``) or as a spindle toggle (``M5`` / ``M3``).
"""
import math
import os
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import _kernels
from .errors import (
    ConfigError,
    MissingCoordinate,
    NonNumeric,
    OutOfWorkArea,
    ProfileMismatch,
    UnknownWord,
    ValidationError,
)
from .raster import BinaryImage

MM_PER_INCH = 25.4
HEADER_PREFIX = "forgebench profile="


@dataclass(frozen=True)
class PenAction:
    kind: str  # "z_lift" | "spindle_toggle"
    height: float = 0.0

    @classmethod
    def parse(cls, text):
        text = text.strip()
        if text == "spindle_toggle":
            return cls("spindle_toggle")
        m = re.fullmatch(r"z_lift\(\s*([-+0-9.eE]+)\s*\)", text)
        if not m:
            raise ConfigError(f"bad pen command {text!r}; expected z_lift(<mm>) or spindle_toggle")
        return cls("z_lift", float(m.group(1)))

    def __str__(self):
        return "spindle_toggle" if self.kind == "spindle_toggle" else f"z_lift({_fmt_short(self.height)})"


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    work_min: tuple
    work_max: tuple
    pen_up: PenAction
    pen_down: PenAction
    travel_feed: float
    draw_feed: float
    pen_width: float
    y_axis_inverted: bool = False

    def __post_init__(self):
        if not (self.work_min[0] < self.work_max[0] and self.work_min[1] < self.work_max[1]):
            raise ConfigError(f"{self.name}: work_min must be < work_max componentwise")
        if self.travel_feed <= 0 or self.draw_feed <= 0 or self.pen_width <= 0:
            raise ConfigError(f"{self.name}: feeds and pen_width must be positive")
        if self.pen_up.kind != self.pen_down.kind:
            raise ConfigError(f"{self.name}: pen_up and pen_down must use the same mechanism")

    @property
    def work_size(self):
        return (self.work_max[0] - self.work_min[0], self.work_max[1] - self.work_min[1])

    def dumps(self):
        return "\n".join(
            [
                f"name={self.name}",
                f"work_min_x={_fmt_short(self.work_min[0])}",
                f"work_min_y={_fmt_short(self.work_min[1])}",
                f"work_max_x={_fmt_short(self.work_max[0])}",
                f"work_max_y={_fmt_short(self.work_max[1])}",
                f"pen_up={self.pen_up}",
                f"pen_down={self.pen_down}",
                f"travel_feed={_fmt_short(self.travel_feed)}",
                f"draw_feed={_fmt_short(self.draw_feed)}",
                f"pen_width={_fmt_short(self.pen_width)}",
                f"y_axis_inverted={'true' if self.y_axis_inverted else 'false'}",
            ]
        ) + "\n"


def parse_kv(text, source="<text>"):
    """Flat ``key=value`` text with ``#`` comments."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def loads_profile(text, source="<text>"):
    kv = parse_kv(text, source)
    try:
        return DeviceProfile(
            name=kv["name"],
            work_min=(float(kv["work_min_x"]), float(kv["work_min_y"])),
            work_max=(float(kv["work_max_x"]), float(kv["work_max_y"])),
            pen_up=PenAction.parse(kv["pen_up"]),
            pen_down=PenAction.parse(kv["pen_down"]),
            travel_feed=float(kv["travel_feed"]),
            draw_feed=float(kv["draw_feed"]),
            pen_width=float(kv["pen_width"]),
            y_axis_inverted=kv.get("y_axis_inverted", "false").lower() in ("1", "true", "yes"),
        )
    except KeyError as exc:
        raise ConfigError(f"{source}: missing profile key {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_profile(name_or_path):
    """Load a profile file, or one of the shipped profiles by name (``idraw2``, ``lineus``)."""
    path = str(name_or_path)
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            return loads_profile(fh.read(), path)
    stem = os.path.basename(path)
    if not stem.endswith(".profile"):
        stem += ".profile"
    res = resources.files("forgebench") / "profiles" / stem
    if not res.is_file():
        raise ConfigError(f"no such profile: {name_or_path}")
    return loads_profile(res.read_text(encoding="utf-8"), stem)


# --------------------------------------------------------------------------
# program model


@dataclass(frozen=True)
class Rapid:
    x: float
    y: float


@dataclass(frozen=True)
class Linear:
    x: float
    y: float
    feed: float


@dataclass(frozen=True)
class PenUp:
    pass


@dataclass(frozen=True)
class PenDown:
    pass


@dataclass(frozen=True)
class Comment:
    text: str


@dataclass
class GCodeProgram:
    commands: list
    profile_name: str

    def validate(self):
        """Check the pen-state invariants; raises ValidationError."""
        moves = [c for c in self.commands if not isinstance(c, Comment)]
        if moves and not isinstance(moves[0], PenUp):
            raise ValidationError("program must begin pen-up")
        if moves and not isinstance(moves[-1], PenUp):
            raise ValidationError("program must end pen-up")
        known = False
        for c in moves:
            if isinstance(c, (PenUp, PenDown)):
                known = True
            elif isinstance(c, Linear):
                if not known:
                    raise ValidationError("Linear move issued while pen state is unknown")
                if not c.feed > 0:
                    raise ValidationError("Linear feed must be positive")
            if isinstance(c, (Rapid, Linear)) and not (math.isfinite(c.x) and math.isfinite(c.y)):
                raise ValidationError("non-finite coordinate")


def _round3(v):
    return round(float(v), 3) + 0.0


@dataclass(frozen=True)
class Placement:
    """Affine map from drawing pixels to machine mm."""

    scale: float
    offset_x: float
    offset_y: float
    profile: DeviceProfile

    def to_mm(self, x, y):
        p = self.profile
        mx = self.offset_x + x * self.scale
        my = self.offset_y + y * self.scale
        if p.y_axis_inverted:
            my = p.work_min[1] + p.work_max[1] - my
        mx = min(max(_round3(mx), p.work_min[0]), p.work_max[0])
        my = min(max(_round3(my), p.work_min[1]), p.work_max[1])
        return mx, my

    def footprint(self, width, height):
        """Machine-mm box (xmin, ymin, xmax, ymax) covered by a width x height drawing."""
        xs, ys = zip(self.to_mm(0, 0), self.to_mm(width, height))
        return min(xs), min(ys), max(xs), max(ys)


def placement(d, p):
    """Uniform scale and centering of the drawing's source canvas into the work area."""
    if d.source_width < 1 or d.source_height < 1:
        raise ValidationError("drawing has degenerate source dimensions")
    ww, wh = p.work_size
    scale = min(ww / d.source_width, wh / d.source_height)
    ox = p.work_min[0] + (ww - d.source_width * scale) / 2
    oy = p.work_min[1] + (wh - d.source_height * scale) / 2
    return Placement(scale, ox, oy, p)


def compile(d, p):
    """Compile a VectorDrawing into a GCodeProgram for profile ``p``."""
    place = placement(d, p)
    cmds = [PenUp()]
    feed = _round3(p.draw_feed)
    for stroke in d.strokes:
        pts = [place.to_mm(x, y) for x, y in stroke.points]
        cmds.append(Rapid(*pts[0]))
        cmds.append(PenDown())
        for x, y in pts[1:]:
            cmds.append(Linear(x, y, feed))
        cmds.append(PenUp())
    return GCodeProgram(cmds, p.name)


# --------------------------------------------------------------------------
# text rendering


def _fmt3(v):
    return f"{float(v) + 0.0:.3f}"


def _fmt_short(v):
    s = f"{float(v) + 0.0:.3f}".rstrip("0").rstrip(".")
    return s if s not in ("", "-0") else "0"


def _pen_line(action, down):
    if action.kind == "spindle_toggle":
        return "M3" if down else "M5"
    return f"G0 Z{_fmt_short(action.height)}"


def emit(g, p):
    if g.profile_name != p.name:
        raise ProfileMismatch(f"program is for {g.profile_name!r}, profile is {p.name!r}")
    lines = [f"; {HEADER_PREFIX}{p.name}", "G21", "G90"]
    for c in g.commands:
        if isinstance(c, Rapid):
            lines.append(f"G0 X{_fmt3(c.x)} Y{_fmt3(c.y)}")
        elif isinstance(c, Linear):
            lines.append(f"G1 X{_fmt3(c.x)} Y{_fmt3(c.y)} F{_fmt_short(c.feed)}")
        elif isinstance(c, PenUp):
            lines.append(_pen_line(p.pen_up, False))
        elif isinstance(c, PenDown):
            lines.append(_pen_line(p.pen_down, True))
        elif isinstance(c, Comment):
            lines.append(f"; {c.text}")
        else:
            raise ValidationError(f"unknown command {c!r}")
    return "\n".join(lines) + "\n"


_WORD = re.compile(r"([A-Za-z])([^A-Za-z\s]*)")


def _words(code, lineno):
    words = []
    rest = code
    for m in _WORD.finditer(code):
        letter, value = m.group(1).upper(), m.group(2)
        try:
            num = float(value)
        except ValueError:
            raise NonNumeric(f"line {lineno}: {letter}{value!r} is not numeric") from None
        if not math.isfinite(num):
            raise NonNumeric(f"line {lineno}: {letter}{value} is not finite")
        words.append((letter, num))
        rest = rest.replace(m.group(0), "", 1)
    if rest.strip():
        raise NonNumeric(f"line {lineno}: cannot read {rest.strip()!r}")
    return words


def parse(text, profile=None):
    """Parse dialect text back into a GCodeProgram.

    Feed is modal. A ``Z`` move is pen-down when it matches the profile's
    pen-down height (or, without a profile, when Z <= 0).
    """
    commands = []
    name = profile.name if profile is not None else ""
    feed = None
    motion = None
    pos = [None, None]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith(";"):
            body = line[1:].strip()
            if body.startswith(HEADER_PREFIX):
                name = body[len(HEADER_PREFIX) :].strip()
            else:
                commands.append(Comment(body))
            continue
        code = line.split(";", 1)[0]
        code = re.sub(r"\([^)]*\)", " ", code)
        words = _words(code, lineno)
        if not words:
            continue
        params = {}
        gcodes, mcodes = [], []
        for letter, num in words:
            if letter == "G":
                gcodes.append(num)
            elif letter == "M":
                mcodes.append(num)
            elif letter in "XYZFS":
                params[letter] = num
            else:
                raise UnknownWord(f"line {lineno}: unsupported word {letter}")
        for gnum in gcodes:
            if gnum in (0, 1):
                motion = int(gnum)
            elif gnum in (21, 90):
                pass
            else:
                raise UnknownWord(f"line {lineno}: unsupported G{_fmt_short(gnum)}")
        for mnum in mcodes:
            if mnum == 3:
                commands.append(PenDown())
            elif mnum == 5:
                commands.append(PenUp())
            else:
                raise UnknownWord(f"line {lineno}: unsupported M{_fmt_short(mnum)}")
        if "F" in params:
            if params["F"] <= 0:
                raise NonNumeric(f"line {lineno}: feed must be positive")
            feed = params["F"]
        if "Z" in params:
            z = params["Z"]
            if profile is not None and profile.pen_down.kind == "z_lift":
                down = abs(z - profile.pen_down.height) <= abs(z - profile.pen_up.height)
            else:
                down = z <= 0
            commands.append(PenDown() if down else PenUp())
        if "X" in params or "Y" in params:
            if motion is None:
                raise UnknownWord(f"line {lineno}: coordinates without a motion mode")
            x = params.get("X", pos[0])
            y = params.get("Y", pos[1])
            if x is None or y is None:
                raise MissingCoordinate(f"line {lineno}: {'X' if x is None else 'Y'} not given and not yet known")
            pos = [x, y]
            if motion == 0:
                commands.append(Rapid(x, y))
            else:
                f = feed if feed is not None else (profile.draw_feed if profile is not None else None)
                if f is None:
                    raise MissingCoordinate(f"line {lineno}: G1 without a feed rate")
                commands.append(Linear(x, y, f))
        elif any(gnum in (0, 1) for gnum in gcodes) and "Z" not in params and "F" not in params:
            raise MissingCoordinate(f"line {lineno}: G{motion} without coordinates")
    return GCodeProgram(commands, name)


# --------------------------------------------------------------------------
# simulation


def disc_offsets(radius_px):
    """Integer (dx, dy) offsets inside a disc of the given pixel radius (centre always included)."""
    r = max(radius_px, 0.0)
    k = int(math.floor(r))
    offs = [(dx, dy) for dy in range(-k, k + 1) for dx in range(-k, k + 1) if dx * dx + dy * dy <= r * r + 1e-9]
    return np.array(offs or [(0, 0)], dtype=np.int64)


def canvas_shape(p, dpi):
    k = dpi / MM_PER_INCH
    ww, wh = p.work_size
    return max(1, int(round(wh * k))), max(1, int(round(ww * k)))


def mm_to_px(x, y, p, dpi, shape):
    k = dpi / MM_PER_INCH
    h, w = shape
    col = int(math.floor((x - p.work_min[0]) * k + 1e-9))
    if p.y_axis_inverted:
        row = int(math.floor((p.work_max[1] - y) * k + 1e-9))
    else:
        row = int(math.floor((y - p.work_min[1]) * k + 1e-9))
    return min(max(col, 0), w - 1), min(max(row, 0), h - 1)


def _check_bounds(c, p, lineno):
    eps = 1e-9
    if not (p.work_min[0] - eps <= c.x <= p.work_max[0] + eps and p.work_min[1] - eps <= c.y <= p.work_max[1] + eps):
        raise OutOfWorkArea(f"command {lineno}: ({c.x}, {c.y}) outside work area {p.work_min}-{p.work_max}")


def simulate(g, p, dpi=96.0):
    """Execute the program on a white canvas spanning the work area; returns the ink."""
    if not dpi > 0:
        raise ValidationError("dpi must be positive")
    shape = canvas_shape(p, dpi)
    canvas = np.zeros(shape, dtype=np.uint8)
    offs = disc_offsets(p.pen_width / 2 * dpi / MM_PER_INCH)
    down = False
    cur = None
    for i, c in enumerate(g.commands):
        if isinstance(c, PenDown):
            down = True
        elif isinstance(c, PenUp):
            down = False
        elif isinstance(c, (Rapid, Linear)):
            _check_bounds(c, p, i)
            target = mm_to_px(c.x, c.y, p, dpi, shape)
            if isinstance(c, Linear) and down:
                start = cur if cur is not None else target
                _kernels.stamp_segment(canvas, start[0], start[1], target[0], target[1], offs)
            cur = target
    return BinaryImage(canvas.astype(bool))


def crop_mm(img, box, p, dpi):
    """Crop a simulated canvas to a machine-mm box (xmin, ymin, xmax, ymax)."""
    shape = img.ink.shape
    c0, r0 = mm_to_px(box[0], box[3] if p.y_axis_inverted else box[1], p, dpi, shape)
    c1, r1 = mm_to_px(box[2], box[1] if p.y_axis_inverted else box[3], p, dpi, shape)
    return BinaryImage(img.ink[r0 : r1 + 1, c0 : c1 + 1])


def estimate_duration(g, p):
    """Seconds of motion, using travel_feed for G0 and each move's feed for G1."""
    total = 0.0
    cur = None
    for c in g.commands:
        if isinstance(c, (Rapid, Linear)):
            if cur is not None:
                dist = math.hypot(c.x - cur[0], c.y - cur[1])
                feed = p.travel_feed if isinstance(c, Rapid) else c.feed
                total += dist / feed * 60.0
            cur = (c.x, c.y)
    return total
