"""Training loop, rule-weight schedule, checkpoints and the ``DartVAE`` estimator."""

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, fields

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .clustering import kmeans
from .diffnet import OptimizerState, optimizer_step
from .exceptions import NumericError, ShapeError, TrainingError
from .features import AttributeEncoder, standardize
from .model import Batch, LossBreakdown, ModelConfig, ModelParams, embed, loss_and_gradients
from .rules import violation_targets

MAGIC = b"DVAE"
FORMAT_VERSION = 1
HISTORY_COLUMNS = ("epoch", "alpha", "recon", "kl", "consistency", "violation", "total")


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    beta: float = 1.0
    rule_weight: float = 0.15
    warmup_fraction: float = 0.5
    provisional_period: int = 5
    provisional_k: int = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.warmup_fraction <= 1:
            raise ValueError("warmup_fraction must lie in [0, 1]")
        if self.rule_weight < 0 or self.beta < 0:
            raise ValueError("rule_weight and beta must be >= 0")
        if self.provisional_period < 1:
            raise ValueError("provisional_period must be >= 1")
        if self.provisional_k is not None and self.provisional_k < 1:
            raise ValueError("provisional_k must be >= 1")


def rule_weight_schedule(epoch, config):
    """Linear ramp from 0 at epoch 1 to ``rule_weight`` at ``ceil(warmup_fraction * epochs)``."""
    if not 1 <= epoch <= config.epochs:
        raise ValueError(f"epoch {epoch} outside 1..{config.epochs}")
    end = math.ceil(config.warmup_fraction * config.epochs)
    if end <= 1 or epoch >= end:
        return config.rule_weight
    return config.rule_weight * (epoch - 1) / (end - 1)


def _batches(n, size, order):
    """Index chunks; a trailing chunk of one sample is folded into the previous one."""
    chunks = [order[i : i + size] for i in range(0, n, size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


@dataclass
class TrainResult:
    params: ModelParams
    history: list
    initial: LossBreakdown


def evaluate_loss(params, batch, targets, alpha, beta, seed=0):
    """Objective on the whole batch with fixed seeded noise (for before/after comparisons)."""
    eps = np.random.default_rng(seed).standard_normal((len(batch), params.config.latent_dim))
    return loss_and_gradients(params, batch, targets, eps, alpha, beta, need_grad=False)[0]


def train(batch, ruleset, attrs, model_config, config):
    """Fit the network on preprocessed arrays.

    Parameters
    ----------
    batch : Batch
        Visual, semantic and encoded attribute matrices for every sample.
    ruleset : RuleSet
    attrs : ndarray
        Raw attribute codes (schema order) used to build violation targets.
    model_config : ModelConfig
    config : TrainConfig

    Cluster-level violation targets come from k-means on the current latent
    means, refreshed every ``provisional_period`` epochs; they stay zero when
    ``provisional_k`` is None.
    """
    n = len(batch)
    if n < 2:
        raise ValueError("training needs at least two samples")
    if model_config.n_rules != len(ruleset):
        raise ShapeError(f"model predicts {model_config.n_rules} rules, rule set has {len(ruleset)}")
    rng = np.random.default_rng(config.seed)
    params = ModelParams.init(model_config, rng)
    state = OptimizerState(lr=config.learning_rate, weight_decay=config.weight_decay)

    needs_labels = any(r.cluster_level for r in ruleset.rules) and config.provisional_k is not None
    targets = violation_targets(ruleset, attrs)
    initial = evaluate_loss(params, batch, targets, 0.0, config.beta, config.seed)

    history = []
    for epoch in range(1, config.epochs + 1):
        alpha = rule_weight_schedule(epoch, config)
        if needs_labels and (epoch - 1) % config.provisional_period == 0:
            latent = embed(params, batch)
            k = min(config.provisional_k, n)
            provisional = kmeans(latent, k, seed=config.seed + epoch).labels
            targets = violation_targets(ruleset, attrs, provisional)
        sums = np.zeros(4)
        for b, idx in enumerate(_batches(n, config.batch_size, rng.permutation(n))):
            eps = rng.standard_normal((idx.size, model_config.latent_dim))
            try:
                part, grads = loss_and_gradients(params, batch.take(idx), targets[idx], eps, alpha, config.beta)
            except NumericError as exc:
                raise TrainingError(epoch, b, str(exc)) from exc
            if not math.isfinite(part.total):
                raise TrainingError(epoch, b, f"non-finite loss {part.total}")
            sums += idx.size * np.array([part.recon, part.kl, part.consistency, part.violation])
            optimizer_step(params.arrays, grads, state)
        recon, kl, cons, viol = sums / n
        history.append(LossBreakdown(float(recon), float(kl), float(cons), float(viol), alpha, config.beta))
    return TrainResult(params, history, initial)


# -- serialization -----------------------------------------------------------------


def save_checkpoint(path, params):
    """Binary checkpoint: magic, u16 version, length-prefixed config JSON, float64 arrays."""
    config = json.dumps(params.config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(config)))
        fh.write(config)
        for name in ModelParams.layout(params.config):
            fh.write(np.ascontiguousarray(params.arrays[name], dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (length,) = struct.unpack_from("<I", blob, 6)
    offset = 10 + length
    config = ModelConfig(**json.loads(blob[10:offset].decode("utf-8")))
    arrays = {}
    for name, shape in ModelParams.layout(config).items():
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(blob):
            raise ValueError(f"{path}: truncated at parameter {name!r}")
        arrays[name] = np.frombuffer(blob[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    return ModelParams(config, arrays)


def history_csv(history):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(HISTORY_COLUMNS)
    for epoch, h in enumerate(history, 1):
        writer.writerow([epoch] + [repr(float(v)) for v in (h.alpha, h.recon, h.kl,
                         h.consistency, h.violation, h.total)])
    return buf.getvalue()


def read_history_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in rows]


# -- estimator -------------------------------------------------------------------


def prepare_batch(dataset, encoder, stats=None, scale=True):
    """Numeric model inputs for a dataset.

    With ``scale`` the visual/semantic blocks are standardized, using
    ``stats`` when given or the dataset's own statistics otherwise.
    """
    if scale:
        if stats is None:
            dataset, stats = standardize(dataset)
        else:
            dataset = stats.apply(dataset)
    return Batch(dataset.visual, dataset.semantic, encoder.transform(dataset.attributes)), stats


class DartVAE(TransformerMixin, BaseEstimator):
    """Rule-guided VAE that maps a :class:`~dartvae.features.Dataset` to latent means.

    ``fit`` takes a Dataset (not an array) because each sample carries
    three modalities. ``transform`` returns the ``(N, latent_dim)`` matrix of
    posterior means, which is what downstream clustering consumes.
    """

    def __init__(self, ruleset=None, semantic_dim=256, rule_dim=16, hidden1=512, hidden2=256,
                 latent_dim=64, epochs=40, batch_size=64, learning_rate=1e-3, weight_decay=1e-4,
                 beta=1.0, rule_weight=0.15, warmup_fraction=0.5, provisional_period=5,
                 provisional_k=None, standardize=True, random_state=0):
        self.ruleset = ruleset
        self.semantic_dim = semantic_dim
        self.rule_dim = rule_dim
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.latent_dim = latent_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta = beta
        self.rule_weight = rule_weight
        self.warmup_fraction = warmup_fraction
        self.provisional_period = provisional_period
        self.provisional_k = provisional_k
        self.standardize = standardize
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, learning_rate=self.learning_rate,
            weight_decay=self.weight_decay, beta=self.beta, rule_weight=self.rule_weight,
            warmup_fraction=self.warmup_fraction, provisional_period=self.provisional_period,
            provisional_k=self.provisional_k, seed=self.random_state,
        )

    def fit(self, X, y=None):
        if self.ruleset is None:
            raise ValueError("DartVAE needs a ruleset")
        if X.schema != self.ruleset.schema:
            raise ValueError("dataset schema differs from the rule set schema")
        self.attribute_encoder_ = AttributeEncoder(X.schema).fit(X.attributes)
        batch, self.stats_ = prepare_batch(X, self.attribute_encoder_, scale=self.standardize)
        dv, ds = X.dims
        self.model_config_ = ModelConfig(
            visual_dim=dv, semantic_raw_dim=ds, attr_dim=self.attribute_encoder_.n_features_out_,
            n_rules=len(self.ruleset), semantic_dim=self.semantic_dim, rule_dim=self.rule_dim,
            hidden1=self.hidden1, hidden2=self.hidden2, latent_dim=self.latent_dim,
        )
        result = train(batch, self.ruleset, X.attributes, self.model_config_, self._train_config())
        self.params_ = result.params
        self.history_ = result.history
        self.initial_loss_ = result.initial
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        batch, _ = prepare_batch(X, self.attribute_encoder_, self.stats_, scale=self.standardize)
        return embed(self.params_, batch)

    def train_config_dict(self):
        return asdict(self._train_config())


def train_config_from_dict(doc):
    names = {f.name for f in fields(TrainConfig)}
    unknown = set(doc) - names
    if unknown:
        raise ValueError(f"unknown train config fields {sorted(unknown)}")
    return TrainConfig(**doc)
