"""Rule DSL: attribute schema, rule definitions, and violation evaluation.

Attribute values for a dataset are held as an ``(N, n_attributes)`` float
matrix in schema order: booleans as 0/1, categoricals as level index,
numerics as raw reals. Rules come in four kinds:

``implication``
    Sample-level. Antecedent (conjunction of literals) implies a consequent
    AND/OR tree. Assignment independent.
``homogeneity``
    One attribute (or a tuple of attributes) must be uniform per cluster.
``exclusion``
    Two literals must not co-occur within a cluster.
``numeric_spread``
    A numeric attribute's within-cluster range must not exceed a bound.

Within a violating cluster the minority side is flagged; see
:func:`cluster_violation_flags`.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import RuleParseError, ShapeError
from .validation import check_labels

KINDS = ("boolean", "categorical", "numeric")


@dataclass(frozen=True)
class Attribute:
    name: str
    kind: str
    levels: tuple = ()
    unit: str = ""

    @property
    def n_levels(self):
        if self.kind == "boolean":
            return 2
        if self.kind == "categorical":
            return len(self.levels)
        return 0


@dataclass(frozen=True)
class AttributeSchema:
    attributes: tuple

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            dup = next(n for n in names if names.count(n) > 1)
            raise ValueError(f"duplicate attribute name {dup!r}")

    def __len__(self):
        return len(self.attributes)

    def __iter__(self):
        return iter(self.attributes)

    @property
    def names(self):
        return [a.name for a in self.attributes]

    def index(self, name):
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise KeyError(name)

    def get(self, name):
        return self.attributes[self.index(name)]

    def encode_value(self, attr, value):
        """Map one raw attribute value to its numeric code."""
        if attr.kind == "boolean":
            if isinstance(value, bool) or value in (0, 1):
                return float(bool(value))
            raise ValueError(f"attribute {attr.name!r}: expected boolean, got {value!r}")
        if attr.kind == "categorical":
            if isinstance(value, str):
                if value not in attr.levels:
                    raise ValueError(f"attribute {attr.name!r}: unknown level {value!r}")
                return float(attr.levels.index(value))
            if isinstance(value, (int, np.integer)) and 0 <= value < len(attr.levels):
                return float(value)
            raise ValueError(f"attribute {attr.name!r}: invalid level {value!r}")
        try:
            out = float(value)
        except (TypeError, ValueError):
            raise ValueError(f"attribute {attr.name!r}: expected number, got {value!r}") from None
        if not np.isfinite(out):
            raise ValueError(f"attribute {attr.name!r}: non-finite value")
        return out

    def encode_record(self, values):
        """Turn a ``{name: value}`` mapping into a row in schema order."""
        extra = set(values) - set(self.names)
        if extra:
            raise ValueError(f"unknown attributes {sorted(extra)}")
        row = np.empty(len(self.attributes))
        for i, attr in enumerate(self.attributes):
            if attr.name not in values:
                raise ValueError(f"missing attribute {attr.name!r}")
            row[i] = self.encode_value(attr, values[attr.name])
        return row

    def decode_record(self, row):
        out = {}
        for attr, v in zip(self.attributes, row):
            if attr.kind == "boolean":
                out[attr.name] = bool(v)
            elif attr.kind == "categorical":
                out[attr.name] = attr.levels[int(v)]
            else:
                out[attr.name] = float(v)
        return out

    def to_json(self):
        out = []
        for a in self.attributes:
            entry = {"name": a.name, "kind": a.kind}
            if a.kind == "categorical":
                entry["levels"] = list(a.levels)
            if a.unit:
                entry["unit"] = a.unit
            out.append(entry)
        return out

    @classmethod
    def from_json(cls, entries, location="schema"):
        if not isinstance(entries, list):
            raise RuleParseError(location, "expected a list of attributes")
        attrs = []
        seen = set()
        for i, entry in enumerate(entries):
            loc = f"{location}[{i}]"
            if not isinstance(entry, dict) or "name" not in entry or "kind" not in entry:
                raise RuleParseError(loc, "attribute needs 'name' and 'kind'")
            name, kind = entry["name"], entry["kind"]
            if kind not in KINDS:
                raise RuleParseError(loc, f"unknown kind {kind!r}")
            if name in seen:
                raise RuleParseError(loc, f"duplicate attribute {name!r}")
            seen.add(name)
            levels = ()
            if kind == "categorical":
                levels = entry.get("levels")
                if not isinstance(levels, list) or len(levels) < 1 or len(set(levels)) != len(levels):
                    raise RuleParseError(loc, "categorical attribute needs unique 'levels'")
                levels = tuple(str(lv) for lv in levels)
            attrs.append(Attribute(name, kind, levels, str(entry.get("unit", ""))))
        return cls(tuple(attrs))


# -- expressions -------------------------------------------------------------


@dataclass(frozen=True)
class Literal:
    """``attribute == value`` (optionally negated) on a boolean/categorical attribute."""

    attr: str
    value: float = 1.0
    negate: bool = False

    def evaluate(self, A, schema):
        hit = A[:, schema.index(self.attr)] == self.value
        return ~hit if self.negate else hit

    def attributes(self):
        return {self.attr}

    def to_json(self, schema):
        attr = schema.get(self.attr)
        out = {"attr": self.attr}
        if attr.kind == "categorical":
            out["value"] = attr.levels[int(self.value)]
        elif self.value != 1.0:
            out["value"] = False
        if self.negate:
            out["negate"] = True
        return out


@dataclass(frozen=True)
class All:
    terms: tuple

    def evaluate(self, A, schema):
        out = np.ones(A.shape[0], dtype=bool)
        for t in self.terms:
            out &= t.evaluate(A, schema)
        return out

    def attributes(self):
        return set().union(*(t.attributes() for t in self.terms))

    def to_json(self, schema):
        return {"all": [t.to_json(schema) for t in self.terms]}


@dataclass(frozen=True)
class Any:
    terms: tuple

    def evaluate(self, A, schema):
        out = np.zeros(A.shape[0], dtype=bool)
        for t in self.terms:
            out |= t.evaluate(A, schema)
        return out

    def attributes(self):
        return set().union(*(t.attributes() for t in self.terms))

    def to_json(self, schema):
        return {"any": [t.to_json(schema) for t in self.terms]}


# -- rules -------------------------------------------------------------------


@dataclass(frozen=True)
class SampleImplication:
    id: str
    antecedent: tuple
    consequent: object
    kind = "implication"
    cluster_level = False

    def evaluate(self, A, schema):
        """Boolean violation mask: antecedent holds and consequent fails."""
        ante = All(self.antecedent).evaluate(A, schema)
        return ante & ~self.consequent.evaluate(A, schema)


@dataclass(frozen=True)
class ClusterHomogeneity:
    id: str
    attrs: tuple
    kind = "homogeneity"
    cluster_level = True


@dataclass(frozen=True)
class ClusterExclusion:
    id: str
    first: Literal
    second: Literal
    kind = "exclusion"
    cluster_level = True


@dataclass(frozen=True)
class NumericSpread:
    id: str
    attr: str
    max_range: float
    kind = "numeric_spread"
    cluster_level = True


@dataclass(frozen=True)
class RuleSet:
    schema: AttributeSchema
    rules: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.rules)

    @property
    def ids(self):
        return [r.id for r in self.rules]

    def subset(self, ids):
        """RuleSet restricted to ``ids`` (kept in file order)."""
        missing = set(ids) - set(self.ids)
        if missing:
            raise KeyError(f"unknown rule ids {sorted(missing)}")
        return RuleSet(self.schema, tuple(r for r in self.rules if r.id in set(ids)))

    def to_json(self):
        rules = []
        for r in self.rules:
            if r.kind == "implication":
                rules.append({
                    "id": r.id, "kind": r.kind,
                    "if": [lit.to_json(self.schema) for lit in r.antecedent],
                    "then": r.consequent.to_json(self.schema),
                })
            elif r.kind == "homogeneity":
                entry = {"id": r.id, "kind": r.kind}
                if len(r.attrs) == 1:
                    entry["attr"] = r.attrs[0]
                else:
                    entry["attrs"] = list(r.attrs)
                rules.append(entry)
            elif r.kind == "exclusion":
                rules.append({
                    "id": r.id, "kind": r.kind,
                    "literals": [r.first.to_json(self.schema), r.second.to_json(self.schema)],
                })
            else:
                rules.append({"id": r.id, "kind": r.kind, "attr": r.attr, "max_range": r.max_range})
        return {"schema": self.schema.to_json(), "rules": rules}


# -- parsing -----------------------------------------------------------------


def _parse_literal(obj, schema, loc):
    if not isinstance(obj, dict) or "attr" not in obj:
        raise RuleParseError(loc, "literal needs an 'attr' field")
    name = obj["attr"]
    try:
        attr = schema.get(name)
    except KeyError:
        raise RuleParseError(loc, f"unknown attribute {name!r}") from None
    if attr.kind == "numeric":
        raise RuleParseError(loc, f"attribute {name!r} is numeric; literals need boolean or categorical")
    if attr.kind == "boolean":
        value = obj.get("value", True)
        if not (isinstance(value, bool) or value in (0, 1)):
            raise RuleParseError(loc, f"boolean literal value must be true/false, got {value!r}")
        value = float(bool(value))
    else:
        if "value" not in obj:
            raise RuleParseError(loc, f"categorical literal on {name!r} needs a 'value'")
        try:
            value = schema.encode_value(attr, obj["value"])
        except ValueError as exc:
            raise RuleParseError(loc, str(exc)) from None
    return Literal(name, value, bool(obj.get("negate", False)))


def _parse_expr(obj, schema, loc):
    if isinstance(obj, dict) and ("all" in obj or "any" in obj):
        key = "all" if "all" in obj else "any"
        terms = obj[key]
        if not isinstance(terms, list) or not terms:
            raise RuleParseError(f"{loc}.{key}", "expected a non-empty list")
        parsed = tuple(_parse_expr(t, schema, f"{loc}.{key}[{i}]") for i, t in enumerate(terms))
        return All(parsed) if key == "all" else Any(parsed)
    return _parse_literal(obj, schema, loc)


def _parse_rule(obj, schema, loc):
    if not isinstance(obj, dict):
        raise RuleParseError(loc, "rule must be an object")
    rid, kind = obj.get("id"), obj.get("kind")
    if not isinstance(rid, str) or not rid:
        raise RuleParseError(loc, "rule needs a string 'id'")
    if kind == "implication":
        ante = obj.get("if")
        if isinstance(ante, dict):
            ante = [ante]
        if not isinstance(ante, list) or not ante:
            raise RuleParseError(f"{loc}.if", "antecedent must be a non-empty list of literals")
        antecedent = tuple(_parse_literal(a, schema, f"{loc}.if[{i}]") for i, a in enumerate(ante))
        if "then" not in obj:
            raise RuleParseError(loc, "implication needs a 'then' expression")
        return SampleImplication(rid, antecedent, _parse_expr(obj["then"], schema, f"{loc}.then"))
    if kind == "homogeneity":
        names = obj.get("attrs", [obj["attr"]] if "attr" in obj else None)
        if not isinstance(names, list) or not names:
            raise RuleParseError(loc, "homogeneity needs 'attr' or 'attrs'")
        for i, name in enumerate(names):
            try:
                attr = schema.get(name)
            except KeyError:
                raise RuleParseError(f"{loc}.attrs[{i}]", f"unknown attribute {name!r}") from None
            if attr.kind == "numeric":
                raise RuleParseError(f"{loc}.attrs[{i}]", f"homogeneity needs boolean/categorical, {name!r} is numeric")
        return ClusterHomogeneity(rid, tuple(names))
    if kind == "exclusion":
        lits = obj.get("literals")
        if not isinstance(lits, list) or len(lits) != 2:
            raise RuleParseError(f"{loc}.literals", "exclusion needs exactly two literals")
        first, second = (_parse_literal(x, schema, f"{loc}.literals[{i}]") for i, x in enumerate(lits))
        return ClusterExclusion(rid, first, second)
    if kind == "numeric_spread":
        name = obj.get("attr")
        try:
            attr = schema.get(name)
        except KeyError:
            raise RuleParseError(f"{loc}.attr", f"unknown attribute {name!r}") from None
        if attr.kind != "numeric":
            raise RuleParseError(f"{loc}.attr", f"numeric_spread needs a numeric attribute, {name!r} is {attr.kind}")
        bound = obj.get("max_range")
        if isinstance(bound, bool) or not isinstance(bound, (int, float)) or not bound > 0:
            raise RuleParseError(f"{loc}.max_range", "max_range must be a positive number")
        return NumericSpread(rid, name, float(bound))
    raise RuleParseError(f"{loc}.kind", f"unknown rule kind {kind!r}")


def parse_ruleset(text):
    """Parse a JSON rule document into a validated :class:`RuleSet`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RuleParseError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    if not isinstance(doc, dict) or "schema" not in doc:
        raise RuleParseError("document", "expected an object with 'schema' and 'rules'")
    schema = AttributeSchema.from_json(doc["schema"])
    raw_rules = doc.get("rules", [])
    if not isinstance(raw_rules, list):
        raise RuleParseError("rules", "expected a list")
    rules = []
    seen = set()
    for i, obj in enumerate(raw_rules):
        rule = _parse_rule(obj, schema, f"rules[{i}]")
        if rule.id in seen:
            raise RuleParseError(f"rules[{i}].id", f"duplicate rule id {rule.id!r}")
        seen.add(rule.id)
        rules.append(rule)
    return RuleSet(schema, tuple(rules))


def load_ruleset(path):
    with open(path, encoding="utf-8") as fh:
        return parse_ruleset(fh.read())


# -- evaluation ----------------------------------------------------------------


def sample_violates(rule, attrs, schema):
    """True iff ``attrs`` (one row in schema order) breaks an implication rule."""
    if rule.kind != "implication":
        raise ValueError(f"sample_violates needs an implication rule, got {rule.kind!r}")
    row = np.asarray(attrs, dtype=np.float64).reshape(1, -1)
    if row.shape[1] != len(schema):
        raise ShapeError(f"attribute vector has {row.shape[1]} entries, schema has {len(schema)}")
    return bool(rule.evaluate(row, schema)[0])


def _homogeneity_flags(keys):
    levels, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    # np.unique sorts rows lexicographically, so argmax picks the lowest level on ties
    return inverse.reshape(-1) != int(np.argmax(counts))


def _exclusion_flags(in_first, in_second):
    n1, n2 = int(in_first.sum()), int(in_second.sum())
    if n1 == 0 or n2 == 0:
        return np.zeros(in_first.shape[0], dtype=bool)
    if n1 < n2:
        return in_first.copy()
    if n2 < n1:
        return in_second.copy()
    return in_first | in_second


def _spread_flags(values, bound):
    if values.max() - values.min() <= bound:
        return np.zeros(values.shape[0], dtype=bool)
    med = np.median(values)
    return (values < med - bound / 2) | (values > med + bound / 2)


def group_flags(rule, A, schema):
    """Flags for a cluster-level rule, treating every row of ``A`` as one cluster."""
    if A.shape[0] <= 1:
        return np.zeros(A.shape[0], dtype=bool)
    if rule.kind == "homogeneity":
        cols = [schema.index(n) for n in rule.attrs]
        return _homogeneity_flags(A[:, cols])
    if rule.kind == "exclusion":
        return _exclusion_flags(rule.first.evaluate(A, schema), rule.second.evaluate(A, schema))
    if rule.kind == "numeric_spread":
        return _spread_flags(A[:, schema.index(rule.attr)], rule.max_range)
    raise ValueError(f"{rule.kind!r} is not a cluster-level rule")


def cluster_violation_flags(rule, labels, A, schema, n_clusters=None):
    """Per-sample violation flags of ``rule`` under a hard assignment.

    Implication rules ignore ``labels``. For cluster-level rules only the
    minority side of a violating cluster is flagged:

    * homogeneity: samples outside the majority level (ties go to the
      lowest level index, lexicographic over attribute tuples);
    * exclusion: samples matching the rarer literal, both sides on a tie;
    * numeric spread: when the range exceeds the bound, samples outside
      ``median +/- bound / 2``.
    """
    A = np.asarray(A, dtype=np.float64)
    labels = check_labels(labels, A.shape[0], n_clusters)
    if not rule.cluster_level:
        return rule.evaluate(A, schema)
    flags = np.zeros(A.shape[0], dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        flags[idx] = group_flags(rule, A[idx], schema)
    return flags


def violation_targets(ruleset, A, provisional_labels=None):
    """Binary ``(N, M)`` target matrix, one column per rule in file order.

    Cluster-level columns stay zero when no provisional labels are given.
    """
    A = np.asarray(A, dtype=np.float64)
    out = np.zeros((A.shape[0], len(ruleset.rules)))
    for j, rule in enumerate(ruleset.rules):
        if rule.cluster_level and provisional_labels is None:
            continue
        labels = provisional_labels if rule.cluster_level else np.zeros(A.shape[0], dtype=np.int64)
        out[:, j] = cluster_violation_flags(rule, labels, A, ruleset.schema)
    return out


@dataclass
class ViolationReport:
    rule_ids: list
    flags: np.ndarray
    n_clusters: int

    @property
    def counts(self):
        return {rid: int(self.flags[:, j].sum()) for j, rid in enumerate(self.rule_ids)}

    @property
    def rates(self):
        n = max(self.flags.shape[0], 1)
        return {rid: c / n for rid, c in self.counts.items()}

    @property
    def per_cluster_mean(self):
        k = max(self.n_clusters, 1)
        return {rid: c / k for rid, c in self.counts.items()}

    @property
    def total(self):
        return int(self.flags.sum())

    def to_dict(self):
        return {
            "rule_ids": list(self.rule_ids),
            "counts": self.counts,
            "rates": self.rates,
            "per_cluster_mean": self.per_cluster_mean,
            "n_clusters": self.n_clusters,
            "total": self.total,
        }


def violation_report(ruleset, labels, A, n_clusters=None):
    """Aggregate per-rule flags into counts, per-sample rates and per-cluster means.

    ``n_clusters`` defaults to the number of distinct labels.
    """
    A = np.asarray(A, dtype=np.float64)
    labels = check_labels(labels, A.shape[0], n_clusters)
    if n_clusters is None:
        n_clusters = len(np.unique(labels))
    flags = np.zeros((A.shape[0], len(ruleset.rules)), dtype=bool)
    for j, rule in enumerate(ruleset.rules):
        flags[:, j] = cluster_violation_flags(rule, labels, A, ruleset.schema)
    return ViolationReport(ruleset.ids, flags, int(n_clusters))
