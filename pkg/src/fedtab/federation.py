"""In-process federated training: virtual clients with growing training sets and a FedAvg server.

One communication round:

1. the server samples ``clients_per_round`` clients and broadcasts its parameters;
2. each selected client trains on its local training set;
3. moves up to ``instances_per_round`` random pool instances into its training set;
4. evaluates the trained parameters on its validation set;
5. uploads parameters plus the number of training instances used;
6. the server averages the uploads weighted by that count and evaluates on the test set.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import PartitionPlan, TabularDataset
from .metrics import ConfusionMatrix, accuracy, confusion, summarize
from .model import ModelParams, TabNetConfig, cross_entropy, forward, init_params, save_checkpoint, train_epochs
from .model.training import DEFAULT_LR

log = logging.getLogger(__name__)

# stream tags for derive_seed, so each random stream is independent
_INIT, _CLIENT, _SELECT, _TRAIN, _GROW = range(5)


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


def client_seed(master_seed: int, client_id: int) -> int:
    return derive_seed(master_seed, _CLIENT, client_id)


@dataclass(frozen=True)
class RoundConfig:
    n_clients: int = 2
    clients_per_round: int | None = None  # None means every client
    instances_per_round: int = 10
    local_epochs: int = 5
    batch_size: int = 32
    total_rounds: int = 100
    lr: float = DEFAULT_LR
    parallel: bool = False

    def __post_init__(self) -> None:
        if self.n_clients < 1:
            raise ValueError("n_clients must be >= 1")
        if self.clients_per_round is None:
            object.__setattr__(self, "clients_per_round", self.n_clients)
        if not 1 <= self.clients_per_round <= self.n_clients:
            raise ValueError(
                f"clients_per_round must be in 1..{self.n_clients}, got {self.clients_per_round}"
            )
        if self.instances_per_round < 0:
            raise ValueError("instances_per_round must be >= 0")
        if self.local_epochs < 0 or self.total_rounds < 0:
            raise ValueError("local_epochs and total_rounds must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True)
class ClientState:
    id: int
    train_idx: tuple[int, ...]
    pool_idx: tuple[int, ...]
    val_idx: tuple[int, ...]
    rng_seed: int
    rounds_trained: int = 0


@dataclass(frozen=True)
class ClientUpdate:
    client_id: int
    params: ModelParams
    n_train: int
    val_accuracy: float | None
    val_loss: float | None


@dataclass(frozen=True)
class RoundReport:
    round: int
    selected: tuple[int, ...]
    test_accuracy: float
    test_loss: float
    confusion: ConfusionMatrix
    clients: tuple[dict, ...]

    def to_record(self) -> dict:
        return {
            "round": self.round,
            "selected": list(self.selected),
            "test_acc": self.test_accuracy,
            "test_loss": self.test_loss,
            "clients": list(self.clients),
            "confusion": self.confusion.counts.tolist(),
            "class_names": list(self.confusion.class_names),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record())


@dataclass
class ServerState:
    params: ModelParams
    round: int
    test_idx: tuple[int, ...]
    master_seed: int
    history: list[RoundReport] = field(default_factory=list)


def evaluate(params: ModelParams, X: np.ndarray, y: np.ndarray, class_names: Sequence[str]):
    """``(accuracy, cross-entropy, confusion)`` in inference mode."""
    logits, _, _ = forward(params, X)
    preds = np.argmax(logits, axis=1)
    cm = confusion(preds, y, params.config.n_classes, class_names)
    return accuracy(preds, y), cross_entropy(logits, y), cm


def init_federation(
    tab: TabularDataset,
    plan: PartitionPlan,
    model_cfg: TabNetConfig,
    round_cfg: RoundConfig,
    seed: int,
) -> tuple[ServerState, list[ClientState]]:
    if plan.n_clients != round_cfg.n_clients:
        raise ValueError(f"plan has {plan.n_clients} clients, round config expects {round_cfg.n_clients}")
    if sorted(plan.all_indices()) != list(range(len(tab))):
        raise ValueError("partition plan does not cover the dataset exactly")
    if model_cfg.input_dim != tab.rows.shape[1] or model_cfg.n_classes != tab.n_classes:
        raise ValueError(
            f"model expects {model_cfg.input_dim} features / {model_cfg.n_classes} classes, "
            f"data has {tab.rows.shape[1]} / {tab.n_classes}"
        )
    if not plan.test_idx:
        raise ValueError("empty server test set")
    server = ServerState(init_params(model_cfg, derive_seed(seed, _INIT)), 0, plan.test_idx, seed)
    clients = []
    for k, part in enumerate(plan.per_client):
        if not part.train_idx:
            raise ValueError(f"client {k} has an empty training set")
        clients.append(ClientState(k, part.train_idx, part.pool_idx, part.val_idx, client_seed(seed, k)))
    return server, clients


def grow_training_set(client: ClientState, count: int, seed: int) -> ClientState:
    """Move ``min(count, |pool|)`` uniformly drawn pool indices into the training set."""
    take = min(count, len(client.pool_idx))
    if take == 0:
        return client
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(client.pool_idx), size=take, replace=False)
    chosen = set(picked.tolist())
    moved = tuple(client.pool_idx[i] for i in picked)
    pool = tuple(v for i, v in enumerate(client.pool_idx) if i not in chosen)
    return replace(client, train_idx=client.train_idx + moved, pool_idx=pool)


def local_round(
    client: ClientState, global_params: ModelParams, tab: TabularDataset, round_cfg: RoundConfig
) -> tuple[ClientState, ClientUpdate]:
    """Train, then grow the training set from the pool, then validate."""
    if not client.train_idx:
        raise ValueError(f"client {client.id} has an empty training set")
    X, y = tab.subset(client.train_idx)
    n_train = len(y)
    params = train_epochs(
        global_params,
        X,
        y,
        round_cfg.local_epochs,
        round_cfg.batch_size,
        derive_seed(client.rng_seed, _TRAIN, client.rounds_trained),
        lr=round_cfg.lr,
    )
    grown = grow_training_set(
        client, round_cfg.instances_per_round, derive_seed(client.rng_seed, _GROW, client.rounds_trained)
    )
    grown = replace(grown, rounds_trained=client.rounds_trained + 1)
    val_acc = val_loss = None
    if client.val_idx:
        Xv, yv = tab.subset(client.val_idx)
        val_acc, val_loss, _ = evaluate(params, Xv, yv, tab.class_names)
    return grown, ClientUpdate(client.id, params, n_train, val_acc, val_loss)


def sample_clients(ids: Sequence[int], m: int, rng: np.random.Generator) -> list[int]:
    """``m`` distinct ids drawn uniformly, returned in ascending order."""
    ids = sorted(ids)
    if not 0 <= m <= len(ids):
        raise ValueError(f"cannot select {m} of {len(ids)} clients")
    if m == len(ids):
        return ids
    return sorted(int(ids[i]) for i in rng.choice(len(ids), size=m, replace=False))


def fedavg(updates: Sequence[ClientUpdate]) -> ModelParams:
    """Sample-count-weighted mean of every tensor, accumulated in ascending client order."""
    if not updates:
        raise ValueError("fedavg needs at least one update")
    updates = sorted(updates, key=lambda u: u.client_id)
    first = updates[0].params
    for u in updates[1:]:
        if u.params.config != first.config or u.params.names != first.names:
            raise ValueError(f"update from client {u.client_id} has a different parameter layout")
    if any(u.n_train < 1 for u in updates):
        raise ValueError("every update needs n_train >= 1")
    total = sum(u.n_train for u in updates)
    weights = [u.n_train / total for u in updates]
    merged = {}
    for name in first.names:
        # accumulating offsets from the first update keeps identical updates
        # (and a single update) bit-exact; the clip only absorbs rounding
        base = first[name]
        acc = base.copy()
        lo, hi = base.copy(), base.copy()
        for w, u in zip(weights[1:], updates[1:]):
            values = u.params[name]
            acc = acc + w * (values - base)
            lo, hi = np.minimum(lo, values), np.maximum(hi, values)
        merged[name] = np.clip(acc, lo, hi)
    return ModelParams(first.config, merged)


def run_round(
    server: ServerState,
    clients: list[ClientState],
    tab: TabularDataset,
    round_cfg: RoundConfig,
    executor: ThreadPoolExecutor | None = None,
) -> tuple[ServerState, list[ClientState], RoundReport]:
    round_index = server.round + 1
    rng = np.random.default_rng(derive_seed(server.master_seed, _SELECT, round_index))
    selected = sample_clients([c.id for c in clients], round_cfg.clients_per_round, rng)
    by_id = {c.id: c for c in clients}
    snapshot = server.params

    def work(cid: int):
        return local_round(by_id[cid], snapshot, tab, round_cfg)

    if executor is not None:
        results = list(executor.map(work, selected))
    else:
        results = [work(cid) for cid in selected]

    new_clients = dict(by_id)
    updates = []
    for state, update in results:
        new_clients[state.id] = state
        updates.append(update)
    params = fedavg(updates)

    Xt, yt = tab.subset(server.test_idx)
    acc, ce, cm = evaluate(params, Xt, yt, tab.class_names)
    report = RoundReport(
        round_index,
        tuple(selected),
        acc,
        ce,
        cm,
        tuple(
            {"id": u.client_id, "n_train": u.n_train, "val_acc": u.val_accuracy, "val_loss": u.val_loss}
            for u in sorted(updates, key=lambda u: u.client_id)
        ),
    )
    new_server = ServerState(params, round_index, server.test_idx, server.master_seed, server.history + [report])
    return new_server, [new_clients[c.id] for c in clients], report


class MetricsHistory:
    """Round reports of one experiment plus the derived summary."""

    def __init__(self, reports: Sequence[RoundReport] = ()):
        self.reports = list(reports)

    def records(self) -> list[dict]:
        return [r.to_record() for r in self.reports]

    def summary(self) -> dict:
        return summarize(self.records())

    @property
    def max_accuracy(self) -> float:
        return self.summary()["max_acc"]

    @property
    def max_round(self) -> int:
        return self.summary()["max_round"]

    def __len__(self) -> int:
        return len(self.reports)


def run_experiment(
    tab: TabularDataset,
    plan: PartitionPlan,
    model_cfg: TabNetConfig,
    round_cfg: RoundConfig,
    seed: int,
    history_path: str | Path | None = None,
    checkpoint_every: int = 0,
    checkpoint_dir: str | Path | None = None,
) -> tuple[MetricsHistory, ServerState, list[ClientState]]:
    """Run ``total_rounds`` rounds, appending each report to ``history_path`` as it completes."""
    server, clients = init_federation(tab, plan, model_cfg, round_cfg, seed)
    history = MetricsHistory()
    out = None
    if history_path is not None:
        Path(history_path).parent.mkdir(parents=True, exist_ok=True)
        out = open(history_path, "w", encoding="utf-8")
    if checkpoint_every and checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    executor = ThreadPoolExecutor(max_workers=round_cfg.clients_per_round) if round_cfg.parallel else None
    try:
        for _ in range(round_cfg.total_rounds):
            server, clients, report = run_round(server, clients, tab, round_cfg, executor)
            history.reports.append(report)
            log.info("round %d: test_acc=%.4f test_loss=%.4f", report.round, report.test_accuracy, report.test_loss)
            if out is not None:
                out.write(report.to_json() + "\n")
                out.flush()
            if checkpoint_every and checkpoint_dir is not None and report.round % checkpoint_every == 0:
                save_checkpoint(server.params, Path(checkpoint_dir) / f"round_{report.round:04d}.ckpt")
    finally:
        if out is not None:
            out.close()
        if executor is not None:
            executor.shutdown()
    return history, server, clients


def centralized_indices(plan: PartitionPlan) -> list[int]:
    """Union of every client's train and pool sets, in client order."""
    out: list[int] = []
    for part in plan.per_client:
        out += list(part.train_idx) + list(part.pool_idx)
    return out


def run_centralized(
    tab: TabularDataset,
    plan: PartitionPlan,
    model_cfg: TabNetConfig,
    round_cfg: RoundConfig,
    seed: int,
) -> tuple[ModelParams, dict]:
    """Train one model on all client train+pool data for ``total_rounds * local_epochs`` epochs.

    Training is chunked into ``total_rounds`` segments of ``local_epochs``
    with the same initial parameters and per-segment seeds as client 0 in
    the federated run, so a one-client federation with an empty pool is
    reproduced exactly.
    """
    params = init_params(model_cfg, derive_seed(seed, _INIT))
    X, y = tab.subset(centralized_indices(plan))
    c0 = client_seed(seed, 0)
    for segment in range(round_cfg.total_rounds):
        params = train_epochs(
            params, X, y, round_cfg.local_epochs, round_cfg.batch_size,
            derive_seed(c0, _TRAIN, segment), lr=round_cfg.lr,
        )
    Xt, yt = tab.subset(plan.test_idx)
    acc, ce, cm = evaluate(params, Xt, yt, tab.class_names)
    result = {
        "epochs": round_cfg.total_rounds * round_cfg.local_epochs,
        "n_train": len(y),
        "test_acc": acc,
        "test_loss": ce,
        "confusion": cm.counts.tolist(),
        "class_names": list(cm.class_names),
    }
    return params, result
