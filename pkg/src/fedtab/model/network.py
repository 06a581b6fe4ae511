"""TabNet-style classification encoder with an explicit reverse-mode backward pass.

Forward structure for a batch ``X`` (B x D)::

    f        = normalize(X) * scale + offset
    a_0      = FT_0(f)[:, n_d:]
    prior_1  = 1
    for i in 1..n_steps:
        M_i      = sparsemax(prior_i * (a_{i-1} W_i + b_i))
        prior_i+1 = prior_i * (gamma - M_i)
        d_i, a_i = split(FT_i(M_i * f))
    logits   = (sum_i relu(d_i)) W_head + b_head

Every feature transformer ``FT_s`` runs two shared GLU blocks followed by
two step-specific ones, with sqrt(0.5)-scaled residual connections after
the first block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .params import ModelParams, TabNetConfig
from .sparsemax import sparsemax, sparsemax_backward

NORM_EPS = 1e-5
RESIDUAL_SCALE = math.sqrt(0.5)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class _GLUCache:
    x: np.ndarray
    linear: np.ndarray
    gate: np.ndarray


@dataclass
class ForwardTrace:
    """Cached activations of one forward pass, needed by the backward pass."""

    x_hat: np.ndarray
    features: np.ndarray
    masks: list[np.ndarray] = field(default_factory=list)
    priors: list[np.ndarray] = field(default_factory=list)
    att_logits: list[np.ndarray] = field(default_factory=list)
    att_inputs: list[np.ndarray] = field(default_factory=list)
    decisions: list[np.ndarray] = field(default_factory=list)
    transformer_caches: list[list[_GLUCache]] = field(default_factory=list)
    aggregate: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None


def _glu_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, _GLUCache]:
    z = x @ weight + bias
    half = z.shape[1] // 2
    linear, gate = z[:, :half], _sigmoid(z[:, half:])
    return linear * gate, _GLUCache(x, linear, gate)


def _glu_backward(
    grad: np.ndarray, cache: _GLUCache, weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d_linear = grad * cache.gate
    d_gate = grad * cache.linear * cache.gate * (1.0 - cache.gate)
    dz = np.concatenate([d_linear, d_gate], axis=1)
    return dz @ weight.T, cache.x.T @ dz, dz.sum(axis=0)


def _block_names(step: int) -> list[str]:
    return ["shared.0", "shared.1", f"step{step}.glu0", f"step{step}.glu1"]


def _transformer_forward(params: ModelParams, x: np.ndarray, step: int) -> tuple[np.ndarray, list[_GLUCache]]:
    caches = []
    h = x
    for k, block in enumerate(_block_names(step)):
        out, cache = _glu_forward(h, params[f"{block}.weight"], params[f"{block}.bias"])
        caches.append(cache)
        h = out if k == 0 else (h + out) * RESIDUAL_SCALE
    return h, caches


def _transformer_backward(
    params: ModelParams, grad: np.ndarray, caches: list[_GLUCache], step: int, grads: dict[str, np.ndarray]
) -> np.ndarray:
    blocks = _block_names(step)
    for k in range(len(blocks) - 1, -1, -1):
        block = blocks[k]
        weight = params[f"{block}.weight"]
        if k == 0:
            grad, dw, db = _glu_backward(grad, caches[k], weight)
        else:
            scaled = grad * RESIDUAL_SCALE
            d_in, dw, db = _glu_backward(scaled, caches[k], weight)
            grad = scaled + d_in
        grads[f"{block}.weight"] += dw
        grads[f"{block}.bias"] += db
    return grad


def _check_input(params: ModelParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.config.input_dim:
        raise ValueError(f"expected batch of shape (B, {params.config.input_dim}), got {X.shape}")
    if X.shape[0] < 1:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or Inf")
    return X


def attentive_transformer(
    a: np.ndarray, prior: np.ndarray, weight: np.ndarray, bias: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Feature mask ``sparsemax(prior * (a W + b))``; also returns the pre-prior logits."""
    if a.shape[1] != weight.shape[0] or prior.shape != (a.shape[0], weight.shape[1]):
        raise ValueError("attentive transformer shape mismatch")
    if np.any(prior < 0):
        raise ValueError("prior must be non-negative")
    logits = a @ weight + bias
    return sparsemax(prior * logits), logits


def forward(
    params: ModelParams, X: np.ndarray, training: bool = False
) -> tuple[np.ndarray, float, ForwardTrace]:
    """Return ``(logits, sparsity_loss, trace)``.

    In training mode with B >= 2 the input is normalized with batch moments
    and ``trace.running_mean/var`` carry the momentum-updated statistics.
    Otherwise the stored running statistics are used unchanged.
    """
    cfg: TabNetConfig = params.config
    X = _check_input(params, X)
    B = X.shape[0]

    run_mean, run_var = params["norm.running_mean"], params["norm.running_var"]
    if training and B >= 2:
        mean, var = X.mean(axis=0), X.var(axis=0)
        m = cfg.bn_momentum
        new_mean = (1.0 - m) * run_mean + m * mean
        new_var = (1.0 - m) * run_var + m * var
    else:
        mean, var = run_mean, run_var
        new_mean, new_var = run_mean, run_var
    x_hat = (X - mean) / np.sqrt(var + NORM_EPS)
    f = x_hat * params["norm.scale"] + params["norm.offset"]

    trace = ForwardTrace(x_hat=x_hat, features=f, running_mean=new_mean, running_var=new_var)
    h, caches = _transformer_forward(params, f, 0)
    trace.transformer_caches.append(caches)
    a = h[:, cfg.n_d :]
    prior = np.ones_like(f)
    aggregate = np.zeros((B, cfg.n_d))
    entropy = 0.0
    for step in range(1, cfg.n_steps + 1):
        mask, att_logits = attentive_transformer(
            a, prior, params[f"step{step}.attention.weight"], params[f"step{step}.attention.bias"]
        )
        trace.att_inputs.append(a)
        trace.priors.append(prior)
        trace.att_logits.append(att_logits)
        trace.masks.append(mask)
        entropy += float(np.sum(-mask * np.log(mask + cfg.epsilon)))
        prior = prior * (cfg.gamma - mask)

        h, caches = _transformer_forward(params, mask * f, step)
        trace.transformer_caches.append(caches)
        d, a = h[:, : cfg.n_d], h[:, cfg.n_d :]
        trace.decisions.append(d)
        aggregate = aggregate + np.maximum(d, 0.0)

    trace.aggregate = aggregate
    logits = aggregate @ params["head.weight"] + params["head.bias"]
    sparsity_loss = entropy / (cfg.n_steps * B)
    return logits, sparsity_loss, trace


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"label out of range 0..{n_classes - 1}")
    return labels


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    labels = _check_labels(labels, logits.shape[1])
    # + 0.0 turns a saturated -0.0 into 0.0
    return float(-np.mean(log_softmax(logits)[np.arange(len(labels)), labels])) + 0.0


def loss(logits: np.ndarray, labels: np.ndarray, sparsity_loss: float, lambda_sparse: float) -> float:
    """Mean softmax cross-entropy plus the weighted mask-entropy penalty."""
    return cross_entropy(logits, labels) + lambda_sparse * sparsity_loss


def backward(
    params: ModelParams, trace: ForwardTrace, logits: np.ndarray, labels: np.ndarray
) -> dict[str, np.ndarray]:
    """Gradients of :func:`loss` with respect to every trainable tensor."""
    cfg = params.config
    labels = _check_labels(labels, cfg.n_classes)
    B = logits.shape[0]
    grads = {t.name: np.zeros_like(t.values) for t in params if t.trainable}

    d_logits = np.exp(log_softmax(logits))
    d_logits[np.arange(B), labels] -= 1.0
    d_logits /= B
    grads["head.weight"] += trace.aggregate.T @ d_logits
    grads["head.bias"] += d_logits.sum(axis=0)
    d_aggregate = d_logits @ params["head.weight"].T

    f = trace.features
    d_f = np.zeros_like(f)
    d_a = np.zeros((B, cfg.n_a))
    d_prior_next = np.zeros_like(f)
    entropy_scale = cfg.lambda_sparse / (cfg.n_steps * B)
    for step in range(cfg.n_steps, 0, -1):
        i = step - 1
        mask, prior = trace.masks[i], trace.priors[i]
        d_h = np.concatenate([d_aggregate * (trace.decisions[i] > 0), d_a], axis=1)
        d_x = _transformer_backward(params, d_h, trace.transformer_caches[step], step, grads)

        d_mask = d_x * f
        d_f += d_x * mask
        d_mask -= entropy_scale * (np.log(mask + cfg.epsilon) + mask / (mask + cfg.epsilon))
        d_mask -= d_prior_next * prior
        d_prior = d_prior_next * (cfg.gamma - mask)

        d_u = sparsemax_backward(mask, d_mask)
        d_prior += d_u * trace.att_logits[i]
        d_z = d_u * prior
        grads[f"step{step}.attention.weight"] += trace.att_inputs[i].T @ d_z
        grads[f"step{step}.attention.bias"] += d_z.sum(axis=0)
        d_a = d_z @ params[f"step{step}.attention.weight"].T
        d_prior_next = d_prior

    d_h0 = np.concatenate([np.zeros((B, cfg.n_d)), d_a], axis=1)
    d_f += _transformer_backward(params, d_h0, trace.transformer_caches[0], 0, grads)

    grads["norm.scale"] += (d_f * trace.x_hat).sum(axis=0)
    grads["norm.offset"] += d_f.sum(axis=0)
    return grads


def gradients(
    params: ModelParams, X: np.ndarray, labels: np.ndarray, training: bool = True
) -> tuple[float, dict[str, np.ndarray], ForwardTrace]:
    """Forward and backward in one call; returns ``(loss, grads, trace)``."""
    logits, sparsity, trace = forward(params, X, training=training)
    value = loss(logits, labels, sparsity, params.config.lambda_sparse)
    return value, backward(params, trace, logits, labels), trace


def predict(params: ModelParams, X: np.ndarray) -> np.ndarray:
    logits, _, _ = forward(params, X)
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(logits, axis=1)


def feature_importance(trace: ForwardTrace) -> np.ndarray:
    """Masks weighted by each step's decision contribution, normalized to sum 1."""
    total = np.zeros(trace.features.shape[1])
    for mask, d in zip(trace.masks, trace.decisions):
        total += (mask * np.maximum(d, 0.0).sum(axis=1, keepdims=True)).mean(axis=0)
    total /= len(trace.masks)
    s = total.sum()
    if s <= 0.0:
        # no step contributed; fall back to the plain mask average
        total = np.mean([m.mean(axis=0) for m in trace.masks], axis=0)
        s = total.sum()
    return total / s
