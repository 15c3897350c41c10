"""Attack and defense experiments against a trained verifier."""
import hashlib
from dataclasses import dataclass

import numpy as np

from .. import gcode, raster, vectorize, verify
from ..gcode import MM_PER_INCH
from ..errors import OverlapError, ValidationError
from ..rng import numpy_rng

METHODS = ("idraw2", "lineus", "cgan")


def percent_tenths(n_success, n_total):
    """100 * n_success / n_total in tenths of a percent, rounded half-up (exact integers)."""
    return (2000 * n_success + n_total) // (2 * n_total)


@dataclass(frozen=True)
class AttackReport:
    method: str
    n_success: int
    n_total: int

    def __post_init__(self):
        if self.n_total < 1:
            raise ValidationError("an attack needs at least one forgery")
        if not 0 <= self.n_success <= self.n_total:
            raise ValidationError("n_success must lie in [0, n_total]")

    @property
    def tenths(self):
        return percent_tenths(self.n_success, self.n_total)

    @property
    def percent(self):
        return self.tenths / 10

    @property
    def percent_text(self):
        t = self.tenths
        return f"{t // 10}.{t % 10}"


@dataclass(frozen=True)
class DefenseReport:
    before: AttackReport
    after: AttackReport

    @property
    def delta_tenths(self):
        return self.before.tenths - self.after.tenths

    @property
    def delta_points(self):
        return self.delta_tenths / 10

    @property
    def delta_text(self):
        t = self.delta_tenths
        sign = "+" if t > 0 else "-" if t < 0 else ""
        return f"{sign}{abs(t) // 10}.{abs(t) % 10}"


def _as_batch(model, forgeries):
    if isinstance(forgeries, verify.Dataset):
        return forgeries.x
    if isinstance(forgeries, np.ndarray):
        return forgeries
    return np.stack([verify.image_to_array(im) for im in forgeries])[:, None]


def run_attack(model, forgeries, method, threshold=0.5):
    """Count forgeries the model accepts as genuine (score >= threshold)."""
    x = _as_batch(model, forgeries)
    if len(x) == 0:
        raise ValidationError("forgery set is empty")
    scores = verify.predict_scores(model, verify.Dataset(x, np.zeros(len(x), dtype=np.int64)))
    return AttackReport(method, int((scores >= threshold).sum()), len(x))


def image_digest(arr):
    a = np.ascontiguousarray(arr)
    return hashlib.sha256(str(a.shape).encode() + a.tobytes()).hexdigest()


def run_defense(model, tune_set, attack_set, method, base=None, optimizer=verify.FINE_TUNE_OPTIMIZER, seed=None):
    """Attack, fine-tune one epoch on ``tune_set`` (labelled forged) plus ``base``, attack again."""
    tune_x = _as_batch(model, tune_set)
    attack_x = _as_batch(model, attack_set)
    shared = {image_digest(a) for a in tune_x} & {image_digest(a) for a in attack_x}
    if shared:
        raise OverlapError(f"{len(shared)} image(s) appear in both the tuning and the attack set")
    before = run_attack(model, attack_x, method)
    extra = verify.Dataset(tune_x, np.zeros(len(tune_x), dtype=np.int64))
    if base is None:
        base = verify.Dataset(tune_x[:0], np.zeros(0, dtype=np.int64))
    tuned = verify.fine_tune(model, extra, base, 1, optimizer, seed)
    after = run_attack(tuned, attack_x, method)
    return DefenseReport(before, after), tuned


def scan_dpi(box, size):
    """Resolution that maps the larger side of a mm box onto ``size`` pixels."""
    return size * MM_PER_INCH / max(box[2] - box[0], box[3] - box[1])


def robot_forge(image, profile, size, dpi=None, epsilon=0.75):
    """Plotter replica of a signature image: trace, compile, simulate, crop, preprocess.

    With ``dpi=None`` the page is simulated at the resolution that lands the
    drawing's footprint on ``size`` pixels, so the final resize is (nearly) 1:1.
    """
    drawing = vectorize.simplify_drawing(vectorize.centerline(raster.binarize_otsu(image)), epsilon)
    if not drawing.strokes:
        raise ValidationError("signature image has no ink to trace")
    program = gcode.compile(drawing, profile)
    box = gcode.placement(drawing, profile).footprint(drawing.source_width, drawing.source_height)
    dpi = scan_dpi(box, size) if dpi is None else dpi
    page = gcode.simulate(program, profile, dpi)
    crop = gcode.crop_mm(page, box, profile, dpi)
    return raster.preprocess(crop.to_gray(), size)


def select_sets(n_available, n_tune, n_attack, seed, tag=0):
    """Disjoint index sets drawn by seeded sampling without replacement."""
    if n_tune + n_attack > n_available:
        raise ValidationError(f"need {n_tune + n_attack} sources, only {n_available} available")
    order = numpy_rng(seed, 0x5E1, tag).permutation(n_available)
    return sorted(order[:n_tune].tolist()), sorted(order[n_tune : n_tune + n_attack].tolist())
