"""Command-line front end: ``dartvae {generate,train,cluster,compare}``.

Exit codes: 0 success, 2 config or validation error, 3 training failure,
4 checkpoint/data mismatch, 5 report merge failure.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields

from .clustering import fuzzy_cmeans, harden, kmeans, refine
from .exceptions import DatasetError, RuleParseError, TrainingError
from .features import AttributeEncoder, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .metrics import EvaluationReport, evaluate
from .model import ModelConfig, embed
from .rules import AttributeSchema, load_ruleset
from .training import TrainConfig, history_csv, load_checkpoint, prepare_batch, save_checkpoint, train

EXIT_OK, EXIT_CONFIG, EXIT_TRAINING, EXIT_MISMATCH, EXIT_MERGE = 0, 2, 3, 4, 5

CHECKPOINT = "checkpoint.dvae"
HISTORY = "history.csv"
ASSIGNMENT = "assignment.json"
LATENT = "latent.csv"
REPORT = "report.json"
COMPARISON = "comparison.csv"
MANIFEST = "manifest.json"

MODEL_FIELDS = ("semantic_dim", "semantic_hidden", "rule_dim", "rule_hidden",
                "hidden1", "hidden2", "latent_dim", "predictor_hidden")


class CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


@dataclass
class ClusteringConfig:
    method: str = "kmeans"
    k: int = 4
    m: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("kmeans", "fcm"):
            raise ValueError(f"clustering method must be 'kmeans' or 'fcm', got {self.method!r}")
        if self.k < 1:
            raise ValueError("clustering k must be >= 1")
        if self.method == "fcm" and self.m <= 1:
            raise ValueError("fuzzifier m must be > 1")


@dataclass
class RunConfig:
    dataset: str
    rules: str
    out: str = "."
    config_id: str = "run"
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    clustering: ClusteringConfig = field(default_factory=ClusteringConfig)
    refine: bool = False
    standardize: bool = True

    @classmethod
    def from_dict(cls, doc, base_dir="."):
        """Build from parsed JSON; relative paths are resolved against ``base_dir``."""
        doc = dict(doc)
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown run config fields {sorted(unknown)}")
        for key in ("dataset", "rules"):
            if key not in doc:
                raise ValueError(f"run config needs {key!r}")
        model = dict(doc.get("model", {}))
        bad = set(model) - set(MODEL_FIELDS)
        if bad:
            raise ValueError(f"unknown model fields {sorted(bad)}")
        train_doc = dict(doc.get("train", {}))
        bad = set(train_doc) - {f.name for f in fields(TrainConfig)}
        if bad:
            raise ValueError(f"unknown train fields {sorted(bad)}")
        clustering = ClusteringConfig(**doc.get("clustering", {}))

        def resolve(path):
            return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))

        return cls(
            dataset=resolve(doc["dataset"]),
            rules=resolve(doc["rules"]),
            out=resolve(doc.get("out", ".")),
            config_id=str(doc.get("config_id", "run")),
            model=model,
            train=TrainConfig(**train_doc),
            clustering=clustering,
            refine=bool(doc.get("refine", False)),
            standardize=bool(doc.get("standardize", True)),
        )

    def with_seed(self, seed):
        train = TrainConfig(**{**asdict(self.train), "seed": seed})
        clustering = ClusteringConfig(**{**asdict(self.clustering), "seed": seed})
        return RunConfig(**{**self.__dict__, "train": train, "clustering": clustering})


def read_run_config(path, seed=None, out=None):
    if path is None:
        raise CliError(EXIT_CONFIG, "--config is required for this command")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        config = RunConfig.from_dict(doc, os.path.dirname(os.path.abspath(path)))
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad run config {path}: {exc}") from None
    if seed is not None:
        config = config.with_seed(seed)
    if out is not None:
        config.out = out
    return config


def _inputs(config):
    """Load dataset and rules, checking that they share a schema."""
    try:
        dataset = load_dataset(config.dataset)
        ruleset = load_ruleset(config.rules)
    except (OSError, DatasetError, RuleParseError) as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    if dataset.schema != ruleset.schema:
        raise CliError(EXIT_CONFIG, "dataset schema and rule file schema differ")
    return dataset, ruleset


def _write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# -- commands ----------------------------------------------------------------------


def cmd_generate(spec_file, out_manifest, seed=None):
    """Write a synthetic dataset described by a JSON spec file.

    The spec holds SyntheticSpec fields plus either an inline ``schema`` or
    a ``rules`` path whose schema is used.
    """
    try:
        with open(spec_file, encoding="utf-8") as fh:
            doc = json.load(fh)
        if not isinstance(doc, dict):
            raise ValueError("spec must be a JSON object")
        if seed is not None:
            doc["seed"] = seed
        schema = None
        if "rules" in doc:
            rules_path = doc.pop("rules")
            if not os.path.isabs(rules_path):
                rules_path = os.path.join(os.path.dirname(os.path.abspath(spec_file)), rules_path)
            schema = load_ruleset(rules_path).schema
        elif "schema" in doc:
            schema = AttributeSchema.from_json(doc.pop("schema"))
        spec = SyntheticSpec.from_json(doc, schema)
        dataset = generate_synthetic(spec)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad synthetic spec {spec_file}: {exc}") from None
    save_dataset(dataset, out_manifest)
    return EXIT_OK


def _model_config(config, dataset, ruleset, attr_dim):
    dv, ds = dataset.dims
    try:
        return ModelConfig(visual_dim=dv, semantic_raw_dim=ds, attr_dim=attr_dim,
                           n_rules=len(ruleset), **config.model)
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_CONFIG, f"bad model config: {exc}") from None


def cmd_train(config):
    dataset, ruleset = _inputs(config)
    encoder = AttributeEncoder(dataset.schema).fit(dataset.attributes)
    batch, _ = prepare_batch(dataset, encoder, scale=config.standardize)
    model_config = _model_config(config, dataset, ruleset, encoder.n_features_out_)
    try:
        result = train(batch, ruleset, dataset.attributes, model_config, config.train)
    except TrainingError as exc:
        raise CliError(EXIT_TRAINING, str(exc)) from None
    os.makedirs(config.out, exist_ok=True)
    save_checkpoint(os.path.join(config.out, CHECKPOINT), result.params)
    _write_text(os.path.join(config.out, HISTORY), history_csv(result.history))
    return EXIT_OK


def _latent_csv(ids, Z):
    lines = ["id," + ",".join(f"z{j}" for j in range(Z.shape[1]))]
    for rid, row in zip(ids, Z):
        lines.append(rid + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def cmd_cluster(config, checkpoint=None):
    dataset, ruleset = _inputs(config)
    checkpoint = checkpoint or os.path.join(config.out, CHECKPOINT)
    try:
        params = load_checkpoint(checkpoint)
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(EXIT_MISMATCH, f"cannot read checkpoint {checkpoint}: {exc}") from None
    encoder = AttributeEncoder(dataset.schema).fit(dataset.attributes)
    mc = params.config
    expected = (dataset.dims[0], dataset.dims[1], encoder.n_features_out_, len(ruleset))
    found = (mc.visual_dim, mc.semantic_raw_dim, mc.attr_dim, mc.n_rules)
    if expected != found:
        raise CliError(EXIT_MISMATCH, f"checkpoint dims (visual, semantic, attrs, rules) = {found}, "
                                      f"data needs {expected}")
    batch, _ = prepare_batch(dataset, encoder, scale=config.standardize)
    Z = embed(params, batch)

    cc = config.clustering
    if cc.k > len(dataset):
        raise CliError(EXIT_CONFIG, f"k={cc.k} exceeds the {len(dataset)} samples")
    try:
        if cc.method == "kmeans":
            assignment = kmeans(Z, cc.k, seed=cc.seed)
            hard = assignment
        else:
            assignment = fuzzy_cmeans(Z, cc.k, m=cc.m, seed=cc.seed)
            hard = harden(assignment, Z)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None

    doc = {"k": int(hard.k), "labels": hard.labels.tolist(), "centroids": hard.centroids.tolist()}
    if cc.method == "fcm":
        doc["memberships"] = assignment.memberships.tolist()
    refined = None
    if config.refine:
        refined, log = refine(hard, ruleset, dataset.attributes, Z, ids=dataset.ids)
        doc["labels"] = refined.labels.tolist()
        doc["centroids"] = refined.centroids.tolist()
        doc["initial_labels"] = hard.labels.tolist()
        doc["refinement_log"] = log.to_dict()

    metadata = {"config_id": config.config_id, "method": cc.method, "k": cc.k,
                "seed": cc.seed, "refined": config.refine}
    try:
        report = evaluate(Z, assignment, ruleset, dataset.attributes, metadata, refined=refined)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"evaluation failed: {exc}") from None
    os.makedirs(config.out, exist_ok=True)
    _write_text(os.path.join(config.out, ASSIGNMENT), json.dumps(doc, indent=2) + "\n")
    _write_text(os.path.join(config.out, LATENT), _latent_csv(dataset.ids, Z))
    _write_text(os.path.join(config.out, REPORT), report.to_json() + "\n")
    return EXIT_OK


def merge_reports(reports):
    """One row per report; rule columns are the union across reports."""
    seen = set()
    rows = []
    columns = []
    for report in reports:
        cid = report.metadata.get("config_id")
        if cid in seen:
            raise CliError(EXIT_MERGE, f"duplicate configuration id {cid!r}")
        seen.add(cid)
        row = report.summary_row()
        rows.append(row)
        for key in row:
            if key not in columns:
                columns.append(key)
    # keep the total column last
    columns.remove("violations.total")
    columns.append("violations.total")
    buf = [columns]
    for row in rows:
        buf.append(["" if row.get(c) is None else row.get(c) for c in columns])
    return buf


def cmd_compare(report_paths, out=None):
    reports = []
    for path in report_paths:
        try:
            with open(path, encoding="utf-8") as fh:
                report = EvaluationReport.from_json(fh.read())
            report.summary_row()
        except (OSError, json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
            raise CliError(EXIT_MERGE, f"{path} is not an evaluation report: {exc}") from None
        reports.append(report)
    table = merge_reports(reports)
    target = open(os.path.join(out, COMPARISON), "w", encoding="utf-8", newline="") if out else sys.stdout
    try:
        writer = csv.writer(target, lineterminator="\n")
        for row in table:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    finally:
        if out:
            target.close()
    return EXIT_OK


# -- entry point -------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="dartvae", description="Rule-guided VAE clustering.")
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override training and clustering seeds")
    parser.add_argument("--out", help="output directory (overrides the config)")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic dataset")
    gen.add_argument("spec", help="synthetic spec JSON")
    sub.add_parser("train", help="train and write checkpoint + loss history")
    clu = sub.add_parser("cluster", help="embed, cluster, refine and evaluate")
    clu.add_argument("--checkpoint", help="defaults to <out>/checkpoint.dvae")
    cmp_ = sub.add_parser("compare", help="merge evaluation reports into one CSV")
    cmp_.add_argument("reports", nargs="+")
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "generate":
        out = args.out or "."
        os.makedirs(out, exist_ok=True)
        return cmd_generate(args.spec, os.path.join(out, MANIFEST), seed=args.seed)
    if args.command == "compare":
        if args.out:
            os.makedirs(args.out, exist_ok=True)
        return cmd_compare(args.reports, args.out)
    config = read_run_config(args.config, args.seed, args.out)
    if args.command == "train":
        return cmd_train(config)
    return cmd_cluster(config, args.checkpoint)


def main(argv=None):
    try:
        return run(argv)
    except CliError as exc:
        print(f"dartvae: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
