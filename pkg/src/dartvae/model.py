"""Rule-aware VAE network: sub-encoders, joint encoder, decoder and loss terms.

Layout of a forward pass on one batch::

    semantic_raw --semantic MLP--> F_t ┐
    attributes   --rule MLP------> F_r ┼─ concat with visual ─> joint
    joint --encoder--> h2 --> (mu, logvar) --reparameterize--> z
    z --decoder--> joint reconstruction
    z --predictor--> violation logits (one per rule)

Gradients are derived by hand per layer; :func:`loss_and_gradients`
returns them keyed like :attr:`ModelParams.arrays`.
"""

from dataclasses import asdict, dataclass, fields

import numpy as np

from .diffnet import MlpLayer, check_finite, mlp_backward, mlp_forward, mse, mse_grad, sigmoid
from .exceptions import ShapeError

BLOCKS = ("semantic", "rule", "encoder", "mu", "logvar", "decoder", "predictor")


@dataclass
class ModelConfig:
    """Layer widths.

    ``attr_dim`` is the width of the encoded attribute matrix (after one-hot
    expansion), ``n_rules`` the number of violation outputs.
    """

    visual_dim: int
    semantic_raw_dim: int
    attr_dim: int
    n_rules: int
    semantic_dim: int = 256
    semantic_hidden: int = 256
    rule_dim: int = 16
    rule_hidden: int = 32
    hidden1: int = 512
    hidden2: int = 256
    latent_dim: int = 64
    predictor_hidden: int = 32

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            minimum = 0 if f.name == "n_rules" else 1
            if not isinstance(value, (int, np.integer)) or value < minimum:
                raise ValueError(f"ModelConfig.{f.name} must be an integer >= {minimum}, got {value!r}")

    @property
    def joint_dim(self):
        return self.visual_dim + self.semantic_dim + self.rule_dim

    def architecture(self):
        """``{block: [(n_in, n_out, activation), ...]}`` in parameter order."""
        return {
            "semantic": [(self.semantic_raw_dim, self.semantic_hidden, "relu"),
                         (self.semantic_hidden, self.semantic_dim, "identity")],
            "rule": [(self.attr_dim, self.rule_hidden, "relu"),
                     (self.rule_hidden, self.rule_dim, "identity")],
            "encoder": [(self.joint_dim, self.hidden1, "relu"),
                        (self.hidden1, self.hidden2, "relu")],
            "mu": [(self.hidden2, self.latent_dim, "identity")],
            "logvar": [(self.hidden2, self.latent_dim, "identity")],
            "decoder": [(self.latent_dim, self.hidden2, "relu"),
                        (self.hidden2, self.hidden1, "relu"),
                        (self.hidden1, self.joint_dim, "identity")],
            "predictor": [(self.latent_dim, self.predictor_hidden, "relu"),
                          (self.predictor_hidden, self.n_rules, "identity")],
        }

    def to_dict(self):
        return asdict(self)


class ModelParams:
    """All trainable arrays, keyed ``"<block>.<layer>.weight|bias"``."""

    def __init__(self, config, arrays):
        self.config = config
        self.arrays = arrays
        for name, shape in self.shapes().items():
            if name not in arrays or arrays[name].shape != shape:
                got = arrays[name].shape if name in arrays else None
                raise ShapeError(f"parameter {name!r}: expected shape {shape}, got {got}")

    @staticmethod
    def layout(config):
        """Parameter names with shapes, in the fixed serialization order."""
        out = {}
        for block, layers in config.architecture().items():
            for i, (n_in, n_out, _) in enumerate(layers):
                out[f"{block}.{i}.weight"] = (n_out, n_in)
                out[f"{block}.{i}.bias"] = (n_out,)
        return out

    def shapes(self):
        return self.layout(self.config)

    @classmethod
    def init(cls, config, rng):
        """Glorot-uniform weights, zero biases."""
        arrays = {}
        for block, layers in config.architecture().items():
            for i, (n_in, n_out, act) in enumerate(layers):
                layer = MlpLayer.glorot(n_in, n_out, act, rng)
                arrays[f"{block}.{i}.weight"] = layer.weights
                arrays[f"{block}.{i}.bias"] = layer.biases
        return cls(config, arrays)

    @classmethod
    def zeros(cls, config):
        return cls(config, {k: np.zeros(s) for k, s in cls.layout(config).items()})

    def layers(self, block):
        return [
            MlpLayer(self.arrays[f"{block}.{i}.weight"], self.arrays[f"{block}.{i}.bias"], act)
            for i, (_, _, act) in enumerate(self.config.architecture()[block])
        ]

    def copy(self):
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    @property
    def n_parameters(self):
        return sum(v.size for v in self.arrays.values())


@dataclass
class Batch:
    visual: np.ndarray
    semantic: np.ndarray
    attrs: np.ndarray

    def __len__(self):
        return self.visual.shape[0]

    def take(self, idx):
        return Batch(self.visual[idx], self.semantic[idx], self.attrs[idx])


@dataclass
class LossBreakdown:
    recon: float
    kl: float
    consistency: float
    violation: float
    alpha: float
    beta: float

    @property
    def total(self):
        return self.recon + self.beta * self.kl + self.alpha * (self.consistency + self.violation)


# -- forward pieces ------------------------------------------------------------


def _check_batch(batch, config):
    for name, arr, width in (("visual", batch.visual, config.visual_dim),
                             ("semantic", batch.semantic, config.semantic_raw_dim),
                             ("attrs", batch.attrs, config.attr_dim)):
        if arr.ndim != 2 or arr.shape[1] != width:
            raise ShapeError(f"{name} batch has shape {arr.shape}, expected width {width}")
        check_finite(arr, name)
    n = batch.visual.shape[0]
    if batch.semantic.shape[0] != n or batch.attrs.shape[0] != n:
        raise ShapeError("visual, semantic and attribute batches differ in length")


def rule_encode(params, attrs):
    """Rule feature matrix ``F_r`` from encoded attributes."""
    return mlp_forward(np.asarray(attrs, dtype=np.float64), params.layers("rule"))[0]


def semantic_encode(params, semantic):
    """Compressed semantic features ``F_t``."""
    return mlp_forward(np.asarray(semantic, dtype=np.float64), params.layers("semantic"))[0]


def build_joint(visual, semantic_features, rule_features):
    """Row-wise concatenation ``[visual | F_t | F_r]``."""
    n = visual.shape[0]
    if semantic_features.shape[0] != n or rule_features.shape[0] != n:
        raise ShapeError(
            f"batch sizes differ: {n}, {semantic_features.shape[0]}, {rule_features.shape[0]}"
        )
    return np.concatenate([visual, semantic_features, rule_features], axis=1)


def encode(params, joint):
    """Posterior parameters ``(mu, logvar)`` for a joint feature matrix."""
    joint = np.asarray(joint, dtype=np.float64)
    if joint.ndim != 2 or joint.shape[1] != params.config.joint_dim:
        raise ShapeError(f"joint has shape {joint.shape}, expected width {params.config.joint_dim}")
    h2, _ = mlp_forward(joint, params.layers("encoder"))
    mu, _ = mlp_forward(h2, params.layers("mu"))
    logvar, _ = mlp_forward(h2, params.layers("logvar"))
    return mu, logvar


def reparameterize(mu, logvar, rng=None, eps=None):
    """``z = mu + exp(logvar / 2) * eps`` with ``eps`` standard normal."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    if eps is None:
        eps = rng.standard_normal(mu.shape)
    return mu + np.exp(0.5 * logvar) * eps


def decode(params, z):
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != params.config.latent_dim:
        raise ShapeError(f"z has shape {z.shape}, expected width {params.config.latent_dim}")
    return mlp_forward(z, params.layers("decoder"))[0]


def embed(params, batch):
    """Latent means for every row of ``batch``; no sampling."""
    _check_batch(batch, params.config)
    joint = build_joint(batch.visual, semantic_encode(params, batch.semantic), rule_encode(params, batch.attrs))
    return encode(params, joint)[0]


# -- losses ----------------------------------------------------------------------


def loss_kl(mu, logvar):
    """KL divergence to N(0, I): summed over latent dims, averaged over the batch."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu {mu.shape} and logvar {logvar.shape} differ")
    if mu.shape[0] == 0:
        return 0.0
    per_sample = -0.5 * np.sum(1.0 + logvar - mu**2 - np.exp(logvar), axis=1)
    return float(per_sample.mean())


def _kl_grad(mu, logvar):
    n = mu.shape[0]
    return mu / n, -0.5 * (1.0 - np.exp(logvar)) / n


def _unit_rows(X):
    norms = np.linalg.norm(X, axis=1)
    nonzero = norms > 0
    unit = np.zeros_like(X)
    unit[nonzero] = X[nonzero] / norms[nonzero, None]
    return unit, norms, nonzero


def _unit_rows_backward(unit, norms, nonzero, grad_unit):
    out = np.zeros_like(unit)
    g = grad_unit[nonzero]
    u = unit[nonzero]
    out[nonzero] = (g - u * np.sum(u * g, axis=1, keepdims=True)) / norms[nonzero, None]
    return out


def _consistency(z, rule_features, need_grad):
    if z.shape[0] != rule_features.shape[0]:
        raise ShapeError(f"z has {z.shape[0]} rows, rule features {rule_features.shape[0]}")
    n = z.shape[0]
    if n < 2:
        raise ValueError("consistency loss needs a batch of at least 2 samples")
    uz, nz, okz = _unit_rows(z)
    ur, nr, okr = _unit_rows(rule_features)
    diff = uz @ uz.T - ur @ ur.T
    np.fill_diagonal(diff, 0.0)
    pairs = n * (n - 1)
    loss = float(np.sum(diff**2) / pairs)
    if not need_grad:
        return loss, None, None
    g = 2.0 * diff / pairs
    g = g + g.T
    dz = _unit_rows_backward(uz, nz, okz, g @ uz)
    dr = _unit_rows_backward(ur, nr, okr, -(g @ ur))
    return loss, dz, dr


def loss_consistency(z, rule_features):
    """Mean over ordered pairs i != j of (cos(z_i, z_j) - cos(r_i, r_j))^2.

    A zero-norm row has cosine 0 with everything.
    """
    return _consistency(np.asarray(z, dtype=np.float64), np.asarray(rule_features, dtype=np.float64), False)[0]


def _check_targets(target):
    if target.size and not np.all((target == 0) | (target == 1)):
        raise ValueError("violation targets must be binary")


def loss_violation(logits, target):
    """MSE between ``sigmoid(logits)`` and binary targets."""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if logits.shape != target.shape:
        raise ShapeError(f"logits {logits.shape} and targets {target.shape} differ")
    _check_targets(target)
    return mse(sigmoid(logits), target)


# -- full objective ------------------------------------------------------------


def _forward(params, batch, eps):
    _check_batch(batch, params.config)
    sem_layers, rule_layers = params.layers("semantic"), params.layers("rule")
    enc_layers, dec_layers = params.layers("encoder"), params.layers("decoder")
    mu_layers, lv_layers = params.layers("mu"), params.layers("logvar")
    pred_layers = params.layers("predictor")

    ft, c_sem = mlp_forward(batch.semantic, sem_layers)
    check_finite(ft, "semantic_features")
    fr, c_rule = mlp_forward(batch.attrs, rule_layers)
    check_finite(fr, "rule_features")
    joint = build_joint(batch.visual, ft, fr)
    h2, c_enc = mlp_forward(joint, enc_layers)
    check_finite(h2, "encoder_hidden")
    mu, c_mu = mlp_forward(h2, mu_layers)
    check_finite(mu, "mu")
    logvar, c_lv = mlp_forward(h2, lv_layers)
    check_finite(logvar, "logvar")
    if eps.shape != mu.shape:
        raise ShapeError(f"noise has shape {eps.shape}, expected {mu.shape}")
    sigma = np.exp(0.5 * logvar)
    check_finite(sigma, "sigma")
    z = mu + sigma * eps
    recon, c_dec = mlp_forward(z, dec_layers)
    check_finite(recon, "reconstruction")
    logits, c_pred = mlp_forward(z, pred_layers)
    check_finite(logits, "violation_logits")
    return dict(
        ft=ft, fr=fr, joint=joint, mu=mu, logvar=logvar, sigma=sigma, z=z, recon=recon, logits=logits,
        caches=dict(semantic=c_sem, rule=c_rule, encoder=c_enc, mu=c_mu, logvar=c_lv,
                    decoder=c_dec, predictor=c_pred),
        layers=dict(semantic=sem_layers, rule=rule_layers, encoder=enc_layers, mu=mu_layers,
                    logvar=lv_layers, decoder=dec_layers, predictor=pred_layers),
    )


def loss_and_gradients(params, batch, targets, eps, alpha, beta, need_grad=True):
    """Evaluate the weighted objective and (optionally) its exact gradient.

    ``eps`` is the reparameterization noise, passed in so the objective is a
    deterministic function of ``params``. The joint feature vector is both
    encoder input and reconstruction target, and gradients flow through
    both uses. The rule terms are always evaluated; with ``alpha == 0`` they
    contribute nothing to the total or its gradient.

    Returns ``(LossBreakdown, grads)`` where ``grads`` is None when
    ``need_grad`` is false.
    """
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    targets = np.asarray(targets, dtype=np.float64)
    _check_targets(targets)
    fw = _forward(params, batch, eps)
    if targets.shape != fw["logits"].shape:
        raise ShapeError(f"targets {targets.shape} do not match predictions {fw['logits'].shape}")

    recon = mse(fw["recon"], fw["joint"])
    kl = loss_kl(fw["mu"], fw["logvar"])
    cons, d_z_cons, d_fr_cons = _consistency(fw["z"], fw["fr"], need_grad and alpha > 0)
    probs = sigmoid(fw["logits"])
    viol = mse(probs, targets)
    breakdown = LossBreakdown(recon, kl, cons, viol, float(alpha), float(beta))
    if not need_grad:
        return breakdown, None

    layers, caches = fw["layers"], fw["caches"]
    grads = {}

    def store(block, layer_grads):
        for i, (gw, gb) in enumerate(layer_grads):
            grads[f"{block}.{i}.weight"] = gw
            grads[f"{block}.{i}.bias"] = gb

    d_recon = mse_grad(fw["recon"], fw["joint"])
    d_joint = -d_recon
    d_z, g = mlp_backward(layers["decoder"], caches["decoder"], d_recon)
    store("decoder", g)

    d_fr = np.zeros_like(fw["fr"])
    if alpha > 0:
        d_z = d_z + alpha * d_z_cons
        d_fr += alpha * d_fr_cons
        d_logits = alpha * mse_grad(probs, targets) * probs * (1.0 - probs)
        d_zp, g = mlp_backward(layers["predictor"], caches["predictor"], d_logits)
        d_z = d_z + d_zp
        store("predictor", g)
    else:
        for name in params.arrays:
            if name.startswith("predictor."):
                grads[name] = np.zeros_like(params.arrays[name])

    d_mu, d_lv = _kl_grad(fw["mu"], fw["logvar"])
    d_mu = beta * d_mu + d_z
    d_lv = beta * d_lv + d_z * eps * 0.5 * fw["sigma"]
    d_h2_mu, g = mlp_backward(layers["mu"], caches["mu"], d_mu)
    store("mu", g)
    d_h2_lv, g = mlp_backward(layers["logvar"], caches["logvar"], d_lv)
    store("logvar", g)
    d_in, g = mlp_backward(layers["encoder"], caches["encoder"], d_h2_mu + d_h2_lv)
    store("encoder", g)
    d_joint = d_joint + d_in

    cfg = params.config
    d_ft = d_joint[:, cfg.visual_dim : cfg.visual_dim + cfg.semantic_dim]
    d_fr = d_fr + d_joint[:, cfg.visual_dim + cfg.semantic_dim :]
    _, g = mlp_backward(layers["semantic"], caches["semantic"], d_ft)
    store("semantic", g)
    _, g = mlp_backward(layers["rule"], caches["rule"], d_fr)
    store("rule", g)

    for name, arr in grads.items():
        check_finite(arr, f"grad[{name}]")
    return breakdown, {name: grads[name] for name in params.arrays}


def total_loss(params, batch, targets, eps, alpha, beta):
    """Loss breakdown without gradients."""
    return loss_and_gradients(params, batch, targets, eps, alpha, beta, need_grad=False)[0]
