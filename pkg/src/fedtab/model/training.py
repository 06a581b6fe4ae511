"""Adam and seeded mini-batch training."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import gradients
from .params import ModelParams

DEFAULT_LR = 0.02
BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class AdamState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, params: ModelParams) -> AdamState:
        trainable = [t for t in params if t.trainable]
        return cls(0, {t.name: np.zeros_like(t.values) for t in trainable},
                   {t.name: np.zeros_like(t.values) for t in trainable})


def adam_step(
    state: AdamState, params: ModelParams, grads: dict[str, np.ndarray], lr: float = DEFAULT_LR
) -> tuple[ModelParams, AdamState]:
    if set(grads) != set(state.m):
        raise ValueError("gradient names do not match optimizer state")
    t = state.step + 1
    m, v, updates = {}, {}, {}
    for name, g in grads.items():
        if g.shape != state.m[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != {state.m[name].shape}")
        m[name] = BETA1 * state.m[name] + (1.0 - BETA1) * g
        v[name] = BETA2 * state.v[name] + (1.0 - BETA2) * g * g
        m_hat = m[name] / (1.0 - BETA1**t)
        v_hat = v[name] / (1.0 - BETA2**t)
        updates[name] = params[name] - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return params.replace(**updates), AdamState(t, m, v)


def train_epochs(
    params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    epochs: int,
    batch_size: int,
    seed: int,
    lr: float = DEFAULT_LR,
    epoch_losses: list[float] | None = None,
) -> ModelParams:
    """Run ``epochs`` passes of shuffled mini-batch Adam from a fresh optimizer state.

    The shuffling order depends only on ``seed``. Running normalization
    statistics are updated once per batch of two or more rows. If
    ``epoch_losses`` is given, the mean training loss of each epoch is
    appended to it.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if epochs < 0:
        raise ValueError(f"epochs must be >= 0, got {epochs}")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(X) != len(y):
        raise ValueError("X and y lengths differ")

    rng = np.random.default_rng(seed)
    state = AdamState.zeros(params)
    for _ in range(epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), batch_size):
            idx = order[start : start + batch_size]
            value, grads, trace = gradients(params, X[idx], y[idx], training=True)
            total += value * len(idx)
            params, state = adam_step(state, params, grads, lr)
            if len(idx) >= 2:
                params = params.replace(**{
                    "norm.running_mean": trace.running_mean,
                    "norm.running_var": trace.running_var,
                })
        if epoch_losses is not None:
            epoch_losses.append(total / len(X))
    return params
