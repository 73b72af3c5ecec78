"""Multimodal feature records: loading, saving, synthesis and preprocessing."""

import json
import os
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.preprocessing import StandardScaler
from sklearn.utils.validation import check_is_fitted

from .exceptions import DatasetError, RuleParseError
from .rules import AttributeSchema


@dataclass(frozen=True)
class FeatureRecord:
    id: str
    visual: np.ndarray
    semantic_raw: np.ndarray
    attributes: np.ndarray


@dataclass
class Dataset:
    """Column-stacked feature records.

    ``attributes`` holds numeric codes in schema order (see
    :class:`dartvae.rules.AttributeSchema`).
    """

    schema: AttributeSchema
    ids: list
    visual: np.ndarray
    semantic: np.ndarray
    attributes: np.ndarray

    def __post_init__(self):
        n = len(self.ids)
        if n < 1:
            raise DatasetError("dataset needs at least one record")
        if len(set(self.ids)) != n:
            dup = next(i for i in self.ids if self.ids.count(i) > 1)
            raise DatasetError("duplicate id", dup)
        for name, arr in (("visual", self.visual), ("semantic", self.semantic), ("attributes", self.attributes)):
            if arr.ndim != 2 or arr.shape[0] != n:
                raise DatasetError(f"{name} block has shape {arr.shape}, expected {n} rows")
            bad = ~np.all(np.isfinite(arr), axis=1)
            if bad.any():
                raise DatasetError(f"non-finite {name} value", self.ids[int(np.flatnonzero(bad)[0])])
        if self.attributes.shape[1] != len(self.schema):
            raise DatasetError(f"attribute block has {self.attributes.shape[1]} columns, schema has {len(self.schema)}")

    def __len__(self):
        return len(self.ids)

    @property
    def dims(self):
        return self.visual.shape[1], self.semantic.shape[1]

    @property
    def records(self):
        return [
            FeatureRecord(rid, self.visual[i], self.semantic[i], self.attributes[i])
            for i, rid in enumerate(self.ids)
        ]

    def replace(self, **changes):
        fields = dict(schema=self.schema, ids=list(self.ids), visual=self.visual,
                      semantic=self.semantic, attributes=self.attributes)
        fields.update(changes)
        return Dataset(**fields)

    def equals(self, other):
        return (
            self.schema == other.schema
            and self.ids == other.ids
            and np.array_equal(self.visual, other.visual)
            and np.array_equal(self.semantic, other.semantic)
            and np.array_equal(self.attributes, other.attributes)
        )


# -- I/O -------------------------------------------------------------------------


def save_dataset(dataset, manifest_path, records_file="records.jsonl"):
    """Write a manifest and its JSON Lines records file next to it."""
    manifest_path = os.fspath(manifest_path)
    folder = os.path.dirname(os.path.abspath(manifest_path))
    os.makedirs(folder, exist_ok=True)
    dv, ds = dataset.dims
    manifest = {
        "schema": dataset.schema.to_json(),
        "dims": {"visual": dv, "semantic": ds},
        "records_file": records_file,
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(os.path.join(folder, records_file), "w", encoding="utf-8") as fh:
        for i, rid in enumerate(dataset.ids):
            rec = {
                "id": rid,
                "visual": dataset.visual[i].tolist(),
                "semantic": dataset.semantic[i].tolist(),
                "attributes": dataset.schema.decode_record(dataset.attributes[i]),
            }
            fh.write(json.dumps(rec) + "\n")


def _load_json(path, what):
    if not os.path.exists(path):
        raise DatasetError(f"{what} not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{what} {path} is not valid JSON: {exc}") from None


def load_dataset(manifest_path):
    """Read and validate a dataset manifest plus its records file."""
    manifest_path = os.fspath(manifest_path)
    manifest = _load_json(manifest_path, "manifest")
    try:
        schema = AttributeSchema.from_json(manifest["schema"])
        dv = int(manifest["dims"]["visual"])
        ds = int(manifest["dims"]["semantic"])
        records_file = manifest["records_file"]
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"manifest missing field {exc}") from None
    except RuleParseError as exc:
        raise DatasetError(f"manifest schema invalid: {exc}") from None
    path = os.path.join(os.path.dirname(os.path.abspath(manifest_path)), records_file)
    if not os.path.exists(path):
        raise DatasetError(f"records file not found: {path}")

    ids, visual, semantic, attrs = [], [], [], []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rid = str(rec["id"])
            except (json.JSONDecodeError, KeyError, TypeError):
                raise DatasetError(f"{records_file} line {lineno}: malformed record") from None
            if rid in seen:
                raise DatasetError("duplicate id", rid)
            seen.add(rid)
            try:
                v = np.asarray(rec["visual"], dtype=np.float64)
                s = np.asarray(rec["semantic"], dtype=np.float64)
            except (KeyError, TypeError, ValueError):
                raise DatasetError("missing or non-numeric feature vector", rid) from None
            if v.shape != (dv,):
                raise DatasetError(f"visual length {v.size} != {dv}", rid)
            if s.shape != (ds,):
                raise DatasetError(f"semantic length {s.size} != {ds}", rid)
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(s))):
                raise DatasetError("non-finite feature value", rid)
            try:
                a = schema.encode_record(rec.get("attributes", {}))
            except ValueError as exc:
                raise DatasetError(f"schema mismatch: {exc}", rid) from None
            ids.append(rid)
            visual.append(v)
            semantic.append(s)
            attrs.append(a)
    if not ids:
        raise DatasetError(f"records file {path} is empty")
    return Dataset(schema, ids, np.vstack(visual), np.vstack(semantic), np.vstack(attrs))


# -- synthesis -------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Recipe for a seeded synthetic dataset.

    Each group has a Gaussian mean (scale ``mean_scale``) in both feature
    blocks; records add isotropic noise of scale ``noise_scale``.
    ``templates[g]`` maps attribute names to values for group ``g``; a
    numeric entry may be ``[low, high]`` to draw uniformly. Unlisted
    attributes default to 0 / the first level.
    """

    schema: AttributeSchema
    templates: list
    seed: int
    group_count: int = 2
    samples_per_group: int = 10
    visual_dim: int = 128
    semantic_dim: int = 64
    noise_scale: float = 1.0
    attribute_flip_probability: float = 0.0
    mean_scale: float = 1.0

    def __post_init__(self):
        if self.group_count < 1 or self.samples_per_group < 1:
            raise ValueError("group_count and samples_per_group must be >= 1")
        if self.visual_dim < 1 or self.semantic_dim < 1:
            raise ValueError("feature dimensions must be >= 1")
        if self.noise_scale < 0 or self.mean_scale < 0:
            raise ValueError("noise_scale and mean_scale must be >= 0")
        if not 0 <= self.attribute_flip_probability < 1:
            raise ValueError("attribute_flip_probability must lie in [0, 1)")
        if len(self.templates) != self.group_count:
            raise ValueError(f"need {self.group_count} templates, got {len(self.templates)}")
        for t in self.templates:
            unknown = set(t) - set(self.schema.names)
            if unknown:
                raise ValueError(f"template names unknown attributes {sorted(unknown)}")

    @classmethod
    def from_json(cls, doc, schema=None):
        doc = dict(doc)
        if "seed" not in doc:
            raise ValueError("synthetic spec needs a 'seed'")
        if schema is None:
            if "schema" not in doc:
                raise ValueError("synthetic spec needs a 'schema'")
            schema = AttributeSchema.from_json(doc.pop("schema"))
        else:
            doc.pop("schema", None)
        known = {f for f in cls.__dataclass_fields__ if f != "schema"}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown synthetic spec fields {sorted(unknown)}")
        return cls(schema=schema, **doc)


def generate_synthetic(spec):
    """Draw a :class:`Dataset` from ``spec``; a pure function of the spec."""
    rng = np.random.default_rng(spec.seed)
    schema = spec.schema
    g, n = spec.group_count, spec.samples_per_group
    vis_means = rng.normal(0.0, spec.mean_scale, size=(g, spec.visual_dim))
    sem_means = rng.normal(0.0, spec.mean_scale, size=(g, spec.semantic_dim))

    ids, visual, semantic, attrs = [], [], [], []
    for gi, template in enumerate(spec.templates):
        for i in range(n):
            ids.append(f"g{gi}_{i:04d}")
            visual.append(vis_means[gi] + spec.noise_scale * rng.standard_normal(spec.visual_dim))
            semantic.append(sem_means[gi] + spec.noise_scale * rng.standard_normal(spec.semantic_dim))
            row = np.empty(len(schema))
            for j, attr in enumerate(schema):
                value = template.get(attr.name)
                if attr.kind == "numeric":
                    if isinstance(value, (list, tuple)):
                        row[j] = rng.uniform(value[0], value[1])
                    else:
                        row[j] = float(value or 0.0)
                    continue
                row[j] = 0.0 if value is None else schema.encode_value(attr, value)
                if spec.attribute_flip_probability > 0 and rng.random() < spec.attribute_flip_probability:
                    if attr.kind == "boolean":
                        row[j] = 1.0 - row[j]
                    elif attr.n_levels > 1:
                        others = [lv for lv in range(attr.n_levels) if lv != int(row[j])]
                        row[j] = float(others[rng.integers(len(others))])
            attrs.append(row)
    return Dataset(schema, ids, np.vstack(visual), np.vstack(semantic), np.vstack(attrs))


# -- preprocessing -----------------------------------------------------------------


@dataclass
class StandardizationStats:
    visual_mean: np.ndarray
    visual_std: np.ndarray
    semantic_mean: np.ndarray
    semantic_std: np.ndarray

    def apply(self, dataset):
        """Standardize another dataset with these statistics."""
        return dataset.replace(
            visual=(dataset.visual - self.visual_mean) / _safe_scale(self.visual_std),
            semantic=(dataset.semantic - self.semantic_mean) / _safe_scale(self.semantic_std),
        )

    def invert(self, dataset):
        """Undo :func:`standardize` on a dataset of standardized features."""
        return dataset.replace(
            visual=dataset.visual * _safe_scale(self.visual_std) + self.visual_mean,
            semantic=dataset.semantic * _safe_scale(self.semantic_std) + self.semantic_mean,
        )


def _safe_scale(std):
    return np.where(std > 0, std, 1.0)


def standardize(dataset):
    """Zero-mean, unit-variance visual and semantic columns.

    Constant columns become zero. Returns ``(dataset, stats)``.
    """
    if len(dataset) < 2:
        raise ValueError("standardize needs at least two records")
    blocks = {}
    for name in ("visual", "semantic"):
        scaler = StandardScaler().fit(getattr(dataset, name))
        blocks[name] = (scaler.transform(getattr(dataset, name)), scaler.mean_, np.sqrt(scaler.var_))
    stats = StandardizationStats(blocks["visual"][1], blocks["visual"][2],
                                 blocks["semantic"][1], blocks["semantic"][2])
    return dataset.replace(visual=blocks["visual"][0], semantic=blocks["semantic"][0]), stats


class AttributeEncoder(BaseEstimator, TransformerMixin):
    """Numeric encoding of schema-ordered attribute codes for the rule encoder.

    Booleans pass through as 0/1, categoricals become one-hot blocks and
    numerics are z-scored with statistics learned in :meth:`fit`.

    Parameters
    ----------
    schema : AttributeSchema
    """

    def __init__(self, schema=None):
        self.schema = schema

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        self._check(X)
        num = [j for j, a in enumerate(self.schema) if a.kind == "numeric"]
        self.numeric_mean_ = X[:, num].mean(axis=0) if num else np.zeros(0)
        std = X[:, num].std(axis=0) if num else np.zeros(0)
        self.numeric_std_ = np.where(std > 0, std, 1.0)
        self.n_features_out_ = sum(
            a.n_levels if a.kind == "categorical" else 1 for a in self.schema
        )
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_out_")
        X = np.asarray(X, dtype=np.float64)
        self._check(X)
        cols = []
        k = 0
        for j, attr in enumerate(self.schema):
            if attr.kind == "categorical":
                onehot = np.zeros((X.shape[0], attr.n_levels))
                onehot[np.arange(X.shape[0]), X[:, j].astype(int)] = 1.0
                cols.append(onehot)
            elif attr.kind == "numeric":
                cols.append(((X[:, j] - self.numeric_mean_[k]) / self.numeric_std_[k])[:, None])
                k += 1
            else:
                cols.append(X[:, j : j + 1])
        return np.hstack(cols) if cols else np.zeros((X.shape[0], 0))

    def _check(self, X):
        if X.ndim != 2 or X.shape[1] != len(self.schema):
            raise ValueError(f"expected {len(self.schema)} attribute columns, got shape {X.shape}")
