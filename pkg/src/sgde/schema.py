"""Tabular schemas, CSV ingestion and the [0, 1] feature encoding.

Numeric features are min-max scaled, categoricals are one-hot encoded. The
same schema drives the inverse mapping applied to generator outputs.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, SchemaError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str  # "numeric" | "categorical"
    min: Optional[float] = None
    max: Optional[float] = None
    categories: tuple[str, ...] = ()

    @property
    def width(self) -> int:
        return 1 if self.kind == "numeric" else len(self.categories)

    def to_dict(self) -> dict:
        if self.kind == "numeric":
            return {"name": self.name, "kind": "numeric", "min": self.min, "max": self.max}
        return {"name": self.name, "kind": "categorical", "categories": list(self.categories)}

    @classmethod
    def from_dict(cls, d: dict) -> "Feature":
        if d["kind"] == "numeric":
            lo, hi = d.get("min"), d.get("max")
            return cls(d["name"], "numeric",
                       None if lo is None else float(lo), None if hi is None else float(hi))
        if d["kind"] == "categorical":
            return cls(d["name"], "categorical", categories=tuple(str(c) for c in d["categories"]))
        raise SchemaError(f"feature {d.get('name')!r}: unknown kind {d['kind']!r}")


@dataclass(frozen=True)
class LabelSpec:
    name: str
    classes: tuple[str, ...]
    positive_class: Optional[str] = None
    # optional numeric binarisation: value >= threshold -> positive_class
    threshold: Optional[float] = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "classes": list(self.classes),
             "positive_class": self.positive_class}
        if self.threshold is not None:
            d["threshold"] = self.threshold
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSpec":
        return cls(d["name"], tuple(str(c) for c in d["classes"]),
                   d.get("positive_class"), d.get("threshold"))


@dataclass(frozen=True)
class TabularSchema:
    features: tuple[Feature, ...]
    label: LabelSpec
    fitted_on: Optional[str] = None  # provenance of numeric ranges, e.g. "train"
    delimiter: str = ","

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        self.validate()

    def validate(self) -> None:
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate feature names")
        for f in self.features:
            if f.kind == "numeric":
                if f.min is not None and f.max is not None and not f.min <= f.max:
                    raise SchemaError(f"feature {f.name!r}: min > max")
            elif len(f.categories) < 2:
                raise SchemaError(f"feature {f.name!r}: categorical needs >= 2 categories")
        if len(self.label.classes) < 2:
            raise SchemaError("label needs >= 2 classes")
        if self.label.positive_class is not None and self.label.positive_class not in self.label.classes:
            raise SchemaError("positive_class is not one of the label classes")

    @property
    def encoded_width(self) -> int:
        return sum(f.width for f in self.features)

    @property
    def n_classes(self) -> int:
        return len(self.label.classes)

    @property
    def positive_index(self) -> Optional[int]:
        if self.n_classes != 2:
            return None
        if self.label.positive_class is None:
            return 1
        return self.label.classes.index(self.label.positive_class)

    @property
    def is_fitted(self) -> bool:
        return all(f.kind != "numeric" or (f.min is not None and f.max is not None)
                   for f in self.features)

    def column_slices(self) -> list[slice]:
        out, pos = [], 0
        for f in self.features:
            out.append(slice(pos, pos + f.width))
            pos += f.width
        return out

    def to_dict(self) -> dict:
        d = {"features": [f.to_dict() for f in self.features], "label": self.label.to_dict()}
        if self.fitted_on is not None:
            d["fitted_on"] = self.fitted_on
        if self.delimiter != ",":
            d["delimiter"] = self.delimiter
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TabularSchema":
        return cls(tuple(Feature.from_dict(f) for f in d["features"]),
                   LabelSpec.from_dict(d["label"]), d.get("fitted_on"), d.get("delimiter", ","))

    @classmethod
    def load(cls, path) -> "TabularSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class RawDataset:
    """Rows in domain units: numeric values as floats, categoricals as category indices."""

    values: np.ndarray  # (n, n_features) float64
    labels: np.ndarray  # (n,) int
    schema: TabularSchema
    dropped: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> "RawDataset":
        return RawDataset(self.values[idx], self.labels[idx], self.schema)


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    positive_index: Optional[int] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DataError("feature rows and labels differ in count")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("label index out of range")
        if self.positive_index is None and len(self.class_names) == 2:
            self.positive_index = 1

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.features[idx], self.labels[idx], self.class_names,
                              self.positive_index)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def of_class(self, c: int) -> np.ndarray:
        return self.features[self.labels == c]

    @staticmethod
    def concat(parts: Sequence["LabeledDataset"]) -> "LabeledDataset":
        first = parts[0]
        return LabeledDataset(np.vstack([p.features for p in parts]),
                              np.concatenate([p.labels for p in parts]),
                              first.class_names, first.positive_index)


def _parse_label(raw: str, label: LabelSpec) -> int:
    if label.threshold is not None:
        positive = float(raw) >= label.threshold
        pos = label.classes.index(label.positive_class or label.classes[1])
        return pos if positive else 1 - pos
    if raw not in label.classes:
        raise ValueError(f"unknown class {raw!r}")
    return label.classes.index(raw)


def load_csv(path, schema: TabularSchema) -> RawDataset:
    """Parse a CSV whose header names the schema's features and label.

    Rows with missing values or unknown categories are dropped; the counts of
    dropped rows (and their line numbers) are kept in ``RawDataset.dropped``.
    """
    names = [f.name for f in schema.features]
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: missing header")
        header = [h.strip() for h in header]
        missing = [c for c in names + [schema.label.name] if c not in header]
        if missing:
            raise SchemaError(f"{path}: header lacks columns {missing}")
        cols = [header.index(c) for c in names]
        label_col = header.index(schema.label.name)
        values, labels = [], []
        dropped = {"missing": [], "invalid": []}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            cells = [row[i].strip() if i < len(row) else "" for i in cols + [label_col]]
            if any(c in ("", "?", "NA", "nan") for c in cells):
                dropped["missing"].append(lineno)
                continue
            try:
                parsed = []
                for f, c in zip(schema.features, cells):
                    if f.kind == "numeric":
                        parsed.append(float(c))
                    elif c in f.categories:
                        parsed.append(float(f.categories.index(c)))
                    else:
                        raise ValueError(f"feature {f.name!r}: unknown category {c!r}")
                y = _parse_label(cells[-1], schema.label)
            except ValueError as exc:
                log.warning("%s line %d dropped: %s", path, lineno, exc)
                dropped["invalid"].append(lineno)
                continue
            values.append(parsed)
            labels.append(y)
    if dropped["missing"]:
        log.info("%s: dropped %d rows with missing values", path, len(dropped["missing"]))
    arr = np.array(values, dtype=np.float64).reshape(len(values), len(names))
    return RawDataset(arr, np.array(labels, dtype=np.int64), schema, dropped)


def fit_schema(train: RawDataset) -> TabularSchema:
    """Fill numeric ranges from a training split; marks the schema as fitted on it."""
    feats = []
    for j, f in enumerate(train.schema.features):
        if f.kind == "numeric":
            col = train.values[:, j]
            lo, hi = (float(col.min()), float(col.max())) if col.size else (0.0, 1.0)
            f = replace(f, min=lo, max=hi)
        feats.append(f)
    return replace(train.schema, features=tuple(feats), fitted_on="train")


def encode(values: np.ndarray, schema: TabularSchema) -> np.ndarray:
    if not schema.is_fitted:
        raise SchemaError("schema has unfitted numeric ranges")
    n = values.shape[0]
    out = np.zeros((n, schema.encoded_width))
    clamped = 0
    for j, (f, sl) in enumerate(zip(schema.features, schema.column_slices())):
        col = values[:, j]
        if f.kind == "numeric":
            if f.max == f.min:
                out[:, sl.start] = 0.5
                continue
            scaled = (col - f.min) / (f.max - f.min)
            clamped += int(np.sum((scaled < 0) | (scaled > 1)))
            out[:, sl.start] = np.clip(scaled, 0.0, 1.0)
        else:
            out[np.arange(n), sl.start + col.astype(np.int64)] = 1.0
    if clamped:
        log.warning("clamped %d out-of-range numeric values to [0, 1]", clamped)
    return out


def preprocess(dataset: RawDataset, schema: TabularSchema) -> LabeledDataset:
    """Encode ``dataset`` with a schema whose ranges were fitted on training data."""
    if schema.fitted_on != "train":
        raise SchemaError("preprocess requires a schema fitted on the training split")
    for f in schema.features:
        if f.kind == "numeric" and f.min == f.max:
            log.warning("feature %r has a degenerate range; encoded as 0.5", f.name)
    return LabeledDataset(encode(dataset.values, schema), dataset.labels,
                          schema.label.classes, schema.positive_index)


def decode_to_domain(raw, schema: TabularSchema, mode: str = "argmax",
                     seed: int = 0) -> np.ndarray:
    """Map encoded rows back to domain values (categoricals as category indices)."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != schema.encoded_width:
        raise SchemaError(f"raw width {raw.shape} does not match encoded width {schema.encoded_width}")
    if mode not in ("argmax", "sample"):
        raise SchemaError(f"unknown decode mode {mode!r}")
    rng = np.random.default_rng(seed)
    out = np.zeros((raw.shape[0], len(schema.features)))
    for j, (f, sl) in enumerate(zip(schema.features, schema.column_slices())):
        block = raw[:, sl]
        if f.kind == "numeric":
            out[:, j] = f.min + np.clip(block[:, 0], 0.0, 1.0) * (f.max - f.min)
        elif mode == "argmax":
            out[:, j] = np.argmax(block, axis=1)
        else:
            p = np.clip(block, 0.0, None) + 1e-12
            p /= p.sum(axis=1, keepdims=True)
            u = rng.random(raw.shape[0])[:, None]
            out[:, j] = np.minimum((np.cumsum(p, axis=1) < u).sum(axis=1), f.width - 1)
    return out
