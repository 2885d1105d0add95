"""Annotation schema, dataset files, and the synthetic relation benchmark.

The synthetic generator plants per-part signatures into a noisy feature map
and labels attributes with three rule families:

* ``local``: the part's own signature channel exceeds a threshold;
* ``geometry``: a predicate on the (part, person) boxes holds;
* ``relational``: some *other* part of the rule's source class carries a
  relational signature above a threshold.

Each attribute is also restricted to a seeded subset of part classes, which
is what the co-occurrence knowledge later recovers.

Channel layout of generated maps (``N`` classes, ``k`` attributes per
family): ``[0, N)`` class markers, ``[N, N+k)`` local signatures,
``[N+k, N+2k)`` relational signatures, then a person mask and a part mask;
any remaining channels carry noise only.
"""
from dataclasses import asdict, dataclass, field
import json
import os

import numpy as np

from .ek_de import PartDetection
from .errors import ConfigError, ParseError, ValidationError
from .numerics.container import load_tensors, save_tensors
from .roi import Box

FORMAT = "kercnn-dataset"
VERSION = 1
FAMILIES = ("local", "geometry", "relational")
GEOMETRY_PREDICATES = ("upper", "left", "tall", "wide")


@dataclass
class PartAnnotation:
    part_class: int
    box: Box
    attributes: frozenset = frozenset()


@dataclass
class Sample:
    feature_map: np.ndarray
    person_box: Box
    parts: list


@dataclass
class Dataset:
    samples: list
    part_names: list
    attribute_names: list
    split: str = "train"
    rules: dict = None

    @property
    def n_parts(self):
        return len(self.part_names)

    @property
    def n_attributes(self):
        return len(self.attribute_names)

    def validate(self):
        n, c = self.n_parts, self.n_attributes
        if n < 1 or c < 1:
            raise ValidationError("dataset vocabularies must be non-empty")
        for names, what in ((self.part_names, "part"), (self.attribute_names, "attribute")):
            if len(set(names)) != len(names):
                raise ValidationError(f"duplicate {what} names")
        for i, s in enumerate(self.samples):
            _check_box(s.person_box, f"sample {i}: person_box")
            if not s.parts:
                raise ValidationError(f"sample {i}: parts: at least one part required")
            fm = np.asarray(s.feature_map)
            if fm.ndim != 3 or min(fm.shape) < 1:
                raise ValidationError(f"sample {i}: feature_map: expected D x H x W, got {fm.shape}")
            for j, p in enumerate(s.parts):
                where = f"sample {i}: parts[{j}]"
                if not 0 <= p.part_class < n:
                    raise ValidationError(f"{where}.class: {p.part_class} out of range [0, {n})")
                _check_box(p.box, f"{where}.box")
                bad = [a for a in p.attributes if not 0 <= a < c]
                if bad:
                    raise ValidationError(f"{where}.attributes: {bad} out of range [0, {c})")
        return self

    def part_records(self):
        """Flat ``(sample_index, part_index)`` list in canonical order."""
        return [(i, j) for i, s in enumerate(self.samples) for j in range(len(s.parts))]

    def family_of(self):
        """Attribute index -> rule family, when the dataset carries a rule table."""
        if not self.rules:
            return {}
        return {r["attribute"]: r["family"] for r in self.rules["attributes"]}


def _check_box(box, where):
    vals = box.as_tuple()
    if not all(np.isfinite(vals)) or box.w <= 0 or box.h <= 0:
        raise ValidationError(f"{where}: invalid box {vals}")


# -- synthetic generator --------------------------------------------------------

@dataclass
class SynthConfig:
    n_parts: int = 6
    n_attributes: int = 12
    n_train: int = 2000
    n_val: int = 500
    map_size: int = 32
    channels: int = 16
    noise: float = 0.1
    min_parts: int = 2
    max_parts: int = 4
    person_w: tuple = (14, 26)
    person_h: tuple = (20, 30)
    part_w_frac: tuple = (0.25, 0.6)
    part_h_frac: tuple = (0.15, 0.4)
    min_part_size: int = 2
    gap: int = 2
    local_threshold: float = 0.5
    relational_threshold: float = 0.4
    relational_low: tuple = (0.0, 0.2)
    relational_high: tuple = (0.6, 1.0)
    relational_on_prob: float = 0.5
    upper_frac: float = 1 / 3
    left_frac: float = 1 / 3
    tall_ratio: float = 0.3
    wide_ratio: float = 0.45
    allowed_frac: tuple = (0.4, 0.8)
    positive_band: tuple = (0.03, 0.6)

    @property
    def per_family(self):
        return self.n_attributes // 3

    def validate(self):
        k = self.per_family
        if self.n_parts < 2 or self.n_attributes < 3 or self.n_attributes % 3:
            raise ConfigError("need n_parts >= 2 and n_attributes a positive multiple of 3")
        if k > len(GEOMETRY_PREDICATES):
            raise ConfigError(f"at most {len(GEOMETRY_PREDICATES)} attributes per family")
        if self.n_parts < k:
            raise ConfigError("each relational attribute needs its own source part class")
        if self.channels < self.n_parts + 2 * k + 2:
            raise ConfigError(f"{self.channels} channels cannot hold the "
                              f"{self.n_parts + 2 * k + 2}-channel signature layout")
        if not 1 <= self.min_parts <= self.max_parts:
            raise ConfigError("part count range is empty")
        if self.person_w[1] + 1 > self.map_size or self.person_h[1] + 1 > self.map_size:
            raise ConfigError("person boxes cannot fit inside the map")
        if self.person_w[0] < 1 or self.person_h[0] < 1:
            raise ConfigError("person size must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")
        return self

    @classmethod
    def from_dict(cls, doc):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys {sorted(unknown)}")
        doc = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        return cls(**doc)


def channel_layout(cfg):
    n, k = cfg.n_parts, cfg.per_family
    return {"class": list(range(n)), "local": list(range(n, n + k)),
            "relational": list(range(n + k, n + 2 * k)), "person": n + 2 * k,
            "part": n + 2 * k + 1}


def make_rules(cfg, seed):
    """Seeded rule table: families, rule parameters and the class-attribute mask."""
    cfg.validate()
    rng = np.random.default_rng([seed, 0xA11])
    n, k = cfg.n_parts, cfg.per_family
    layout = channel_layout(cfg)
    sources = [int(s) for s in rng.permutation(n)[:k]]
    attributes, allowed = [], np.zeros((n, cfg.n_attributes), dtype=bool)
    lo, hi = cfg.allowed_frac
    for j in range(cfg.n_attributes):
        family, slot = FAMILIES[j // k], j % k
        entry = {"attribute": j, "family": family}
        pool = list(range(n))
        if family == "local":
            entry.update(channel=layout["local"][slot], threshold=cfg.local_threshold)
        elif family == "geometry":
            pred = GEOMETRY_PREDICATES[slot]
            param = {"upper": cfg.upper_frac, "left": cfg.left_frac,
                     "tall": cfg.tall_ratio, "wide": cfg.wide_ratio}[pred]
            entry.update(predicate=pred, parameter=param)
        else:
            entry.update(channel=layout["relational"][slot], source_class=sources[slot],
                         threshold=cfg.relational_threshold)
            pool.remove(sources[slot])
        count = int(np.clip(round(rng.uniform(lo, hi) * n), 1, len(pool)))
        chosen = rng.choice(pool, size=count, replace=False)
        allowed[chosen, j] = True
        entry["allowed_classes"] = sorted(int(c) for c in chosen)
        attributes.append(entry)
    for c in range(n):  # every class keeps at least one attribute
        if not allowed[c].any():
            j = int(rng.integers(k))  # a local attribute: always admissible
            allowed[c, j] = True
            attributes[j]["allowed_classes"] = sorted(attributes[j]["allowed_classes"] + [c])
    return {"layout": layout, "attributes": attributes, "sources": sources,
            "allowed": allowed.astype(int).tolist()}


def geometry_predicate(name, parameter, part, person):
    cx, cy = part.center
    if name == "upper":
        return cy < person.y + parameter * person.h
    if name == "left":
        return cx < person.x + parameter * person.w
    if name == "tall":
        return part.h / person.h > parameter
    if name == "wide":
        return part.w / person.w > parameter
    raise ConfigError(f"unknown geometry predicate {name!r}")


def _separated(a, b, gap):
    # closed pixel extents [x, x + w] must leave ``gap`` clear pixels between them
    return (a.x + a.w + gap < b.x or b.x + b.w + gap < a.x
            or a.y + a.h + gap < b.y or b.y + b.h + gap < a.y)


def _place_parts(rng, cfg, person, count):
    for _ in range(50):
        boxes = []
        for _ in range(count):
            for _ in range(200):
                w = max(cfg.min_part_size, int(round(rng.uniform(*cfg.part_w_frac) * person.w)))
                h = max(cfg.min_part_size, int(round(rng.uniform(*cfg.part_h_frac) * person.h)))
                if w > person.w or h > person.h:
                    continue
                x = int(person.x + rng.integers(0, int(person.w - w) + 1))
                y = int(person.y + rng.integers(0, int(person.h - h) + 1))
                box = Box(float(x), float(y), float(w), float(h))
                if all(_separated(box, other, cfg.gap) for other in boxes):
                    boxes.append(box)
                    break
            else:
                break
        if len(boxes) == count:
            return boxes
    raise ConfigError(f"cannot place {count} separated parts inside a "
                      f"{person.w:g}x{person.h:g} person box; relax the size ranges")


def _region(box):
    x, y = int(box.x), int(box.y)
    return slice(y, y + int(box.h) + 1), slice(x, x + int(box.w) + 1)


def _gen_sample(cfg, rules, seed, split_code, index):
    rng = np.random.default_rng([seed, split_code, index])
    layout, m = rules["layout"], cfg.map_size
    pw = int(rng.integers(cfg.person_w[0], cfg.person_w[1] + 1))
    ph = int(rng.integers(cfg.person_h[0], cfg.person_h[1] + 1))
    person = Box(float(rng.integers(0, m - pw)), float(rng.integers(0, m - ph)), float(pw), float(ph))
    count = int(rng.integers(cfg.min_parts, cfg.max_parts + 1))
    boxes = _place_parts(rng, cfg, person, count)
    classes = [int(c) for c in rng.integers(0, cfg.n_parts, size=count)]
    local = rng.uniform(0, 1, size=(count, cfg.per_family))
    on = rng.uniform(size=count) < cfg.relational_on_prob
    rel = np.where(on, rng.uniform(*cfg.relational_high, size=count),
                   rng.uniform(*cfg.relational_low, size=count))

    fmap = (cfg.noise * rng.standard_normal((cfg.channels, m, m))).astype(np.float32)
    fmap[(layout["person"],) + _region(person)] += 1
    src_slot = {s: i for i, s in enumerate(rules["sources"])}
    for b, c, lv, rv in zip(boxes, classes, local, rel):
        ys, xs = _region(b)
        fmap[c, ys, xs] += 1
        fmap[layout["part"], ys, xs] += 1
        for slot, ch in enumerate(layout["local"]):
            fmap[ch, ys, xs] += lv[slot]
        if c in src_slot:
            fmap[layout["relational"][src_slot[c]], ys, xs] += rv

    allowed = rules["allowed"]
    parts = []
    for u in range(count):
        attrs = set()
        for entry in rules["attributes"]:
            j = entry["attribute"]
            if not allowed[classes[u]][j]:
                continue
            slot = entry.get("channel")
            if entry["family"] == "local":
                fires = local[u, layout["local"].index(slot)] > entry["threshold"]
            elif entry["family"] == "geometry":
                fires = geometry_predicate(entry["predicate"], entry["parameter"], boxes[u], person)
            else:
                fires = any(classes[w] == entry["source_class"] and rel[w] > entry["threshold"]
                            for w in range(count) if w != u)
            if fires:
                attrs.add(j)
        parts.append(PartAnnotation(classes[u], boxes[u], frozenset(attrs)))
    return Sample(fmap, person, parts)


_SPLIT_CODES = {"train": 1, "val": 2, "test": 3}


def gen_synthetic(config=None, seed=0, split="train", n_samples=None):
    """Deterministic synthetic dataset for ``(config, seed, split)``."""
    cfg = (config or SynthConfig()).validate()
    rules = make_rules(cfg, seed)
    if n_samples is None:
        n_samples = cfg.n_val if split == "val" else cfg.n_train
    code = _SPLIT_CODES.get(split, 9)
    samples = [_gen_sample(cfg, rules, seed, code, i) for i in range(n_samples)]
    rules = dict(rules, config=_jsonable(asdict(cfg)), seed=seed)
    return Dataset(samples, [f"part{n}" for n in range(cfg.n_parts)],
                   [f"{e['family']}{e['attribute'] % cfg.per_family}" for e in rules["attributes"]],
                   split, rules)


def gen_splits(config=None, seed=0):
    cfg = config or SynthConfig()
    return gen_synthetic(cfg, seed, "train"), gen_synthetic(cfg, seed, "val")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


# -- files ----------------------------------------------------------------------

def _tensor_path(path):
    root, _ = os.path.splitext(str(path))
    return root + ".tensors"


def save_dataset(ds, path):
    """Write ``path`` (JSON manifest) plus ``<stem>.tensors`` (feature maps)."""
    ds.validate()
    tpath = _tensor_path(path)
    samples = []
    for i, s in enumerate(ds.samples):
        samples.append({
            "id": i,
            "person_box": list(s.person_box.as_tuple()),
            "parts": [{"class": p.part_class, "box": list(p.box.as_tuple()),
                       "attributes": sorted(p.attributes)} for p in s.parts],
        })
    doc = {"format": FORMAT, "version": VERSION, "split": ds.split,
           "vocab": {"part_names": list(ds.part_names), "attribute_names": list(ds.attribute_names)},
           "rules": ds.rules, "tensors": os.path.basename(tpath), "samples": samples}
    save_tensors(tpath, {f"map/{i}": s.feature_map for i, s in enumerate(ds.samples)})
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, offset=exc.colno) from None
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ParseError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ParseError(f"{path}: unsupported version {doc.get('version')!r}")
    vocab = doc.get("vocab")
    if not isinstance(vocab, dict) or "part_names" not in vocab or "attribute_names" not in vocab:
        raise ParseError(f"{path}: missing vocab section")
    tname = doc.get("tensors")
    if not isinstance(tname, str):
        raise ParseError(f"{path}: missing tensors reference")
    tensors, _ = load_tensors(os.path.join(os.path.dirname(os.path.abspath(path)), tname))
    samples = []
    for i, entry in enumerate(doc.get("samples", [])):
        try:
            parts = [PartAnnotation(int(p["class"]), Box.of(p["box"]),
                                    frozenset(int(a) for a in p["attributes"]))
                     for p in entry["parts"]]
            fmap = tensors[f"map/{i}"]
            person = Box.of(entry["person_box"])
        except KeyError as exc:
            raise ValidationError(f"sample {i}: missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"sample {i}: malformed field: {exc}") from None
        samples.append(Sample(fmap, person, parts))
    ds = Dataset(samples, list(vocab["part_names"]), list(vocab["attribute_names"]),
                 doc.get("split", "train"), doc.get("rules"))
    return ds.validate()


# -- detections -----------------------------------------------------------------

def detections_from_gt(ds, jitter=0.0, seed=0):
    """Per-sample detections derived from ground truth.

    ``jitter == 0`` reproduces the GT boxes with one-hot classes and score 1.
    Otherwise offsets and scale changes are drawn uniformly from
    ``[-jitter, jitter]`` (relative to the box size) and the class
    distribution is mixed with the uniform one by ``min(jitter, 1)``.
    """
    if jitter < 0:
        raise ConfigError("jitter must be non-negative")
    n = ds.n_parts
    mix = min(jitter, 1.0)
    out = []
    for i, s in enumerate(ds.samples):
        rng = np.random.default_rng([seed, 0xDE7, i])
        dets = []
        for j, p in enumerate(s.parts):
            c_u = np.zeros(n)
            c_u[p.part_class] = 1.0
            box, score = p.box, 1.0
            if jitter > 0:
                dx, dy, sw, sh = rng.uniform(-jitter, jitter, size=4)
                b = p.box
                box = Box(b.x + dx * b.w, b.y + dy * b.h,
                          b.w * max(1 + sw, 0.1), b.h * max(1 + sh, 0.1))
                c_u = (1 - mix) * c_u + mix / n
                score = float(1 - mix * rng.uniform())
            dets.append(PartDetection(box, c_u, score, person=0, gt_index=j))
        out.append(dets)
    return out
