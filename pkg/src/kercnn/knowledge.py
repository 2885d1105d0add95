"""Part-attribute co-occurrence knowledge: build, validate, persist."""
from dataclasses import dataclass
import json

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

FORMAT = "kercnn-knowledge"
VERSION = 1
ROW_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class KnowledgeGraph:
    """Row-normalised ``N x C`` co-occurrence matrix with its vocabularies."""

    g: np.ndarray
    part_names: tuple
    attribute_names: tuple

    def __post_init__(self):
        g = np.array(self.g, dtype=np.float64)
        g.setflags(write=False)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "part_names", tuple(self.part_names))
        object.__setattr__(self, "attribute_names", tuple(self.attribute_names))
        self.validate()

    @property
    def n_parts(self):
        return self.g.shape[0]

    @property
    def n_attributes(self):
        return self.g.shape[1]

    def validate(self):
        g = self.g
        if g.ndim != 2 or min(g.shape) < 1:
            raise ValidationError(f"knowledge matrix must be N x C with N, C >= 1, got {g.shape}")
        if len(self.part_names) != g.shape[0] or len(self.attribute_names) != g.shape[1]:
            raise ValidationError(
                f"name lists ({len(self.part_names)}, {len(self.attribute_names)}) "
                f"do not match matrix shape {g.shape}")
        for what, names in (("part", self.part_names), ("attribute", self.attribute_names)):
            seen = set()
            for name in names:
                if name in seen:
                    raise ValidationError(f"duplicate {what} name {name!r}")
                seen.add(name)
        if not np.all(np.isfinite(g)) or g.min() < 0 or g.max() > 1:
            raise ValidationError("knowledge entries must lie in [0, 1]")
        sums = g.sum(axis=1)
        for n, s in enumerate(sums):
            if np.any(g[n] != 0) and abs(s - 1) > ROW_TOL:
                raise ValidationError(
                    f"row {n} ({self.part_names[n]!r}) sums to {s!r}; expected 1 or an all-zero row")

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (self.part_names == other.part_names
                and self.attribute_names == other.attribute_names
                and self.g.shape == other.g.shape
                and bool(np.all(self.g == other.g)))

    def attributes_of(self, part):
        """Indices of attributes with positive co-occurrence for part class ``part``."""
        return [int(c) for c in np.flatnonzero(self.g[part] > 0)]


def count_matrix(pairs, n_parts, n_attributes):
    """Count ``(part_class, attribute_set)`` instances into an ``N x C`` matrix."""
    counts = np.zeros((n_parts, n_attributes), dtype=np.float64)
    for part, attrs in pairs:
        for c in set(attrs):
            counts[part, c] += 1
    return counts


def normalize_rows(counts):
    counts = np.asarray(counts, dtype=np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def build_from_pairs(pairs, part_names, attribute_names):
    part_names, attribute_names = list(part_names), list(attribute_names)
    if not part_names or not attribute_names:
        raise ConfigError("knowledge needs non-empty part and attribute vocabularies")
    n, c = len(part_names), len(attribute_names)
    pairs = list(pairs)
    for part, attrs in pairs:
        if not 0 <= part < n or any(not 0 <= a < c for a in attrs):
            raise ValidationError(f"annotation ({part}, {sorted(attrs)}) out of range for N={n}, C={c}")
    return KnowledgeGraph(normalize_rows(count_matrix(pairs, n, c)), part_names, attribute_names)


def build_graph(dataset):
    """Knowledge from every part annotation of ``dataset``."""
    pairs = ((p.part_class, p.attributes) for s in dataset.samples for p in s.parts)
    return build_from_pairs(pairs, dataset.part_names, dataset.attribute_names)


def uniform_graph(part_names, attribute_names):
    """Averaging knowledge: every attribute equally plausible for every part."""
    n, c = len(part_names), len(attribute_names)
    return KnowledgeGraph(np.full((n, c), 1.0 / c), part_names, attribute_names)


def graph_to_dict(kg):
    return {
        "format": FORMAT,
        "version": VERSION,
        "part_names": list(kg.part_names),
        "attribute_names": list(kg.attribute_names),
        "shape": list(kg.g.shape),
        "g": [float(v) for v in kg.g.reshape(-1)],
    }


def graph_from_dict(doc, source="<knowledge>"):
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ParseError(f"{source}: not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise ParseError(f"{source}: unsupported version {doc.get('version')!r}")
    try:
        shape = tuple(int(v) for v in doc["shape"])
        g = np.array(doc["g"], dtype=np.float64)
        parts, attrs = doc["part_names"], doc["attribute_names"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{source}: missing or malformed field: {exc}") from None
    if len(shape) != 2 or g.size != shape[0] * shape[1]:
        raise ValidationError(f"{source}: {g.size} values do not fill shape {shape}")
    return KnowledgeGraph(g.reshape(shape), parts, attrs)


def save_graph(kg, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(graph_to_dict(kg), fh, indent=1)
        fh.write("\n")


def load_graph(path):
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno, offset=exc.colno) from None
    return graph_from_dict(doc, source=str(path))
