"""Synthetic compositional scenes: one labeled attribute-object pair per image.

Shapes are drawn as hard masks on a noisy light background. Attributes come
in three families (color, texture, size); the family a label names is the only
one rendered non-neutrally, so labels stay decidable: a "striped" target is
striped gray, never also "red". Distractors are full shape renders with their
own pairs, constrained to never repeat the target pair, and when clutter >= 2
the first distractor is forced to share the target's attribute (confounder).
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

MAX_OVERLAP_IOU = 0.3  # distractors may overlap anything by at most this much
_PLACEMENT_TRIES = 500


@dataclass(frozen=True)
class Vocabulary:
    objects: tuple
    attributes: tuple

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.objects or not self.attributes:
            raise ValidationError("vocabulary needs at least one object and one attribute")
        if len(set(self.objects)) != len(self.objects):
            raise ValidationError("duplicate object names in vocabulary")
        if len(set(self.attributes)) != len(self.attributes):
            raise ValidationError("duplicate attribute names in vocabulary")

    @property
    def num_pairs(self):
        return len(self.objects) * len(self.attributes)

    def check_pair(self, pair):
        a, o = pair
        if not (0 <= a < len(self.attributes)) or not (0 <= o < len(self.objects)):
            raise ValidationError(
                f"pair {pair} out of range for vocabulary "
                f"({len(self.attributes)} attributes x {len(self.objects)} objects)")
        return int(a), int(o)


@dataclass
class SceneSample:
    image: np.ndarray  # H x W x 3 float32 in [0, 1]
    label: tuple  # (attribute_index, object_index)
    object_box: tuple  # (x0, y0, x1, y1) pixels, diagnostics only
    clutter_meta: list = field(default_factory=list)


_OBJECT_NAMES = ("circle", "square", "triangle", "star", "diamond", "cross", "ring", "pentagon")
_ATTRIBUTE_DEFS = {
    # name -> (family, param)
    "red": ("color", (0.85, 0.15, 0.15)),
    "green": ("color", (0.15, 0.72, 0.20)),
    "blue": ("color", (0.18, 0.30, 0.85)),
    "yellow": ("color", (0.90, 0.83, 0.12)),
    "purple": ("color", (0.58, 0.18, 0.75)),
    "orange": ("color", (0.92, 0.52, 0.10)),
    "striped": ("texture", "stripes"),
    "dotted": ("texture", "dots"),
    "small": ("size", 0.55),
    "large": ("size", 1.55),
}
_NEUTRAL = (0.55, 0.55, 0.55)


def default_vocabulary(num_attributes=8, num_objects=8):
    attr_order = ("red", "green", "blue", "yellow", "striped", "dotted", "small", "large",
                  "purple", "orange")
    if num_objects > len(_OBJECT_NAMES) or num_attributes > len(attr_order):
        raise ValidationError(
            f"default vocabulary supports at most {len(_OBJECT_NAMES)} objects "
            f"and {len(attr_order)} attributes")
    return Vocabulary(objects=_OBJECT_NAMES[:num_objects],
                      attributes=attr_order[:num_attributes])


def attribute_family(name):
    if name in _ATTRIBUTE_DEFS:
        return _ATTRIBUTE_DEFS[name][0]
    return "color"  # unknown names fall back to a hashed hue


def _hashed_color(name):
    h = hashlib.sha256(name.encode("utf-8")).digest()
    base = np.array([h[0], h[1], h[2]], dtype=np.float64) / 255.0
    # push away from the neutral gray so the attribute stays visible
    return tuple(np.clip(0.15 + 0.7 * base, 0.0, 1.0))


def _attr_render(name):
    """-> (fill RGB, texture or None, size multiplier)."""
    family = attribute_family(name)
    if name not in _ATTRIBUTE_DEFS:
        return _hashed_color(name), None, 1.0
    _, param = _ATTRIBUTE_DEFS[name]
    if family == "color":
        return param, None, 1.0
    if family == "texture":
        return _NEUTRAL, param, 1.0
    return _NEUTRAL, None, param


def _shape_mask(name, dx, dy, r):
    dist = np.hypot(dx, dy)
    if name == "circle":
        return dist <= r
    if name == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= r * 0.82
    if name == "diamond":
        return (np.abs(dx) + np.abs(dy)) <= r * 1.18
    if name == "triangle":
        # upright triangle inscribed in radius r
        top = dy >= -r
        left = dy <= 2.0 * dx + r
        right = dy <= -2.0 * dx + r
        return top & left & right & (dist <= 1.5 * r)
    if name == "star":
        theta = np.arctan2(dy, dx)
        edge = r * (0.44 + 0.56 * np.abs(np.cos(2.5 * theta)))
        return dist <= edge
    if name == "cross":
        arm = r * 0.34
        return ((np.abs(dx) <= arm) & (np.abs(dy) <= r)) | \
               ((np.abs(dy) <= arm) & (np.abs(dx) <= r))
    if name == "ring":
        return (dist <= r) & (dist >= r * 0.55)
    if name == "pentagon":
        theta = np.arctan2(dy, dx) + np.pi / 2
        sector = np.mod(theta, 2 * np.pi / 5) - np.pi / 5
        edge = r * np.cos(np.pi / 5) / np.maximum(np.cos(sector), 1e-6)
        return dist <= np.minimum(edge, r * 1.01)
    # unknown object names: regular k-gon with hashed side count
    k = 3 + hashlib.sha256(name.encode("utf-8")).digest()[0] % 7
    theta = np.arctan2(dy, dx)
    sector = np.mod(theta, 2 * np.pi / k) - np.pi / k
    edge = r * np.cos(np.pi / k) / np.maximum(np.cos(sector), 1e-6)
    return dist <= np.minimum(edge, r * 1.01)


def _paint(image, obj_name, attr_name, cx, cy, r):
    """Draw one shape; returns its tight pixel box (x0, y0, x1, y1)."""
    h, w = image.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    mask = _shape_mask(obj_name, dx, dy, r)
    if not mask.any():
        raise ValidationError(f"shape {obj_name!r} rendered empty at radius {r:.1f}")
    fill, texture, _ = _attr_render(attr_name)
    color = np.empty_like(image)
    color[:] = np.asarray(fill, dtype=np.float32)
    if texture == "stripes":
        band = max(2, int(round(r / 2.5)))
        stripe = ((xx + yy).astype(np.int64) // band) % 2 == 0
        color[stripe] = (0.30, 0.30, 0.30)
        color[~stripe] = (0.78, 0.78, 0.78)
    elif texture == "dots":
        period = max(3, int(round(r / 1.8)))
        ddx = np.mod(xx, period) - period / 2.0
        ddy = np.mod(yy, period) - period / 2.0
        dots = np.hypot(ddx, ddy) <= period * 0.28
        color[dots] = (0.20, 0.20, 0.20)
    image[mask] = color[mask]
    ys, xs = np.nonzero(mask)
    return (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def box_iou(a, b):
    ix0, iy0 = max(a[0], b[0]), max(a[1], b[1])
    ix1, iy1 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = max(0.0, ix1 - ix0), max(0.0, iy1 - iy0)
    inter = iw * ih
    if inter <= 0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def _place(rng, size, radius, taken):
    """Rejection-sample a center whose bounding square overlaps nothing too much."""
    for _ in range(_PLACEMENT_TRIES):
        cx = rng.uniform(radius + 2, size - radius - 2)
        cy = rng.uniform(radius + 2, size - radius - 2)
        box = (cx - radius, cy - radius, cx + radius, cy + radius)
        if all(box_iou(box, t) <= MAX_OVERLAP_IOU for t in taken):
            return cx, cy, box
    raise ValidationError(
        f"could not place a radius-{radius:.1f} shape on a {size}px canvas "
        f"with {len(taken)} shapes already present")


def _radius_for(attr_name, size):
    base = 0.105 * size
    return base * _attr_render(attr_name)[2]


def generate_scene(vocab, pair, clutter_level, rng_seed, image_size=256, max_clutter=8):
    """Render one scene. Deterministic for fixed arguments."""
    a, o = vocab.check_pair(pair)
    if clutter_level < 0 or clutter_level > max_clutter:
        raise ValidationError(f"clutter_level {clutter_level} outside [0, {max_clutter}]")
    rng = np.random.default_rng(rng_seed)

    image = np.full((image_size, image_size, 3), 0.92, dtype=np.float32)
    image += rng.normal(0.0, 0.02, size=image.shape).astype(np.float32)

    # choose distractor pairs up front; the target pair itself never appears twice
    num_attrs, num_objs = len(vocab.attributes), len(vocab.objects)
    distractors = []
    for k in range(clutter_level):
        if k == 0 and clutter_level >= 2 and num_objs > 1:
            da, do = a, int(rng.choice([j for j in range(num_objs) if j != o]))
        else:
            while True:
                da = int(rng.integers(num_attrs))
                do = int(rng.integers(num_objs))
                if (da, do) != (a, o):
                    break
                if num_attrs * num_objs == 1:
                    raise ValidationError("cannot draw distractors from a 1-pair vocabulary")
        distractors.append((da, do))

    taken, meta = [], []
    # placement first (largest shapes early would pack better, but order must not
    # depend on labels or determinism tests get brittle; sizes here are close anyway)
    placements = []
    for da, do in distractors:
        radius = _radius_for(vocab.attributes[da], image_size)
        cx, cy, box = _place(rng, image_size, radius, taken)
        taken.append(box)
        placements.append((da, do, cx, cy, radius))
    t_radius = _radius_for(vocab.attributes[a], image_size)
    t_cx, t_cy, t_box = _place(rng, image_size, t_radius, taken)

    for da, do, cx, cy, radius in placements:
        tight = _paint(image, vocab.objects[do], vocab.attributes[da], cx, cy, radius)
        meta.append({"shape": vocab.objects[do], "attribute": vocab.attributes[da],
                     "box": tight})
    # target drawn last so clutter can touch it but never bury it
    target_tight = _paint(image, vocab.objects[o], vocab.attributes[a], t_cx, t_cy, t_radius)

    np.clip(image, 0.0, 1.0, out=image)
    return SceneSample(image=image, label=(a, o), object_box=target_tight, clutter_meta=meta)
