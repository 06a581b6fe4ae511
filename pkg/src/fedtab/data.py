"""Dataset types, file loaders, synthetic generators and the client partitioner."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import networkx as nx
import numpy as np


class DataFormatError(ValueError):
    """A data file could not be parsed."""


@dataclass(frozen=True)
class RawSeries:
    label: int
    values: np.ndarray  # shape (T,) for univariate, (channels, T) for multivariate

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim not in (1, 2):
            raise ValueError("series values must be 1-D or (channels, length)")
        if values.shape[-1] < 2:
            raise ValueError(f"series must have at least 2 samples, got {values.shape[-1]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("series contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def length(self) -> int:
        return self.values.shape[-1]

    @property
    def n_channels(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[0]


@dataclass(frozen=True)
class SeriesDataset:
    name: str
    class_names: list[str]
    examples: list[RawSeries]

    def __post_init__(self) -> None:
        if len(self.class_names) < 1:
            raise ValueError("dataset needs at least one class")
        _check_labels([s.label for s in self.examples], len(self.class_names))

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.examples], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.examples)


@dataclass(frozen=True)
class TabularDataset:
    feature_names: list[str]
    rows: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    meta: dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if rows.ndim != 2 or rows.shape[1] != len(self.feature_names):
            raise ValueError(f"rows shape {rows.shape} does not match {len(self.feature_names)} features")
        if len(labels) != len(rows):
            raise ValueError("rows and labels lengths differ")
        if not np.all(np.isfinite(rows)):
            raise ValueError("tabular data contains NaN or Inf")
        _check_labels(labels, len(self.class_names))
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, idx: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(idx, dtype=np.int64)
        return self.rows[idx], self.labels[idx]


def _check_labels(labels, n_classes: int) -> None:
    for label in labels:
        if not 0 <= label < n_classes:
            raise ValueError(f"label {label} outside 0..{n_classes - 1}")


# --------------------------------------------------------------------------
# loaders


def parse_series(text: str, name: str = "series") -> SeriesDataset:
    """Parse the line format ``label,v1,v2,...``.

    Optional directive lines before the data: ``#classes:a,b,c`` names the
    classes, ``#channels:K`` declares K interleaved channels
    (``x1,y1,z1,x2,y2,z2,...``). Blank lines are skipped.
    """
    class_names: list[str] | None = None
    channels = 1
    labels: list[int] = []
    series: list[np.ndarray] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            key = key.strip()
            if series:
                raise DataFormatError(f"line {lineno}: directive after data lines")
            if key == "classes":
                class_names = [c.strip() for c in value.split(",")]
            elif key == "channels":
                try:
                    channels = int(value)
                except ValueError:
                    raise DataFormatError(f"line {lineno}: bad channel count {value!r}") from None
                if channels < 1:
                    raise DataFormatError(f"line {lineno}: channel count must be positive")
            else:
                raise DataFormatError(f"line {lineno}: unknown directive {key!r}")
            continue
        fields = line.split(",")
        try:
            label = int(fields[0])
        except ValueError:
            raise DataFormatError(f"line {lineno}: label {fields[0]!r} is not an integer") from None
        try:
            values = np.array([float(v) for v in fields[1:]], dtype=np.float64)
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from None
        if not np.all(np.isfinite(values)):
            raise DataFormatError(f"line {lineno}: non-finite value")
        if len(values) % channels:
            raise DataFormatError(f"line {lineno}: {len(values)} values not divisible by {channels} channels")
        if len(values) // channels < 2:
            raise DataFormatError(f"line {lineno}: series needs at least 2 samples")
        labels.append(label)
        series.append(values if channels == 1 else values.reshape(-1, channels).T)
    if not series:
        raise DataFormatError("no examples")

    n_classes = max(labels) + 1
    if min(labels) < 0:
        raise DataFormatError("labels must be non-negative")
    if class_names is None:
        class_names = [f"class_{k}" for k in range(n_classes)]
    elif n_classes > len(class_names):
        raise DataFormatError(f"label {n_classes - 1} outside the {len(class_names)} declared classes")
    missing = sorted(set(range(len(class_names))) - set(labels))
    if missing:
        raise DataFormatError(f"labels are not contiguous: no examples of class {missing}")
    return SeriesDataset(name, class_names, [RawSeries(l, v) for l, v in zip(labels, series)])


def load_series_file(path: str | Path) -> SeriesDataset:
    path = Path(path)
    return parse_series(path.read_text(encoding="utf-8"), name=path.stem)


def write_series_file(ds: SeriesDataset, path: str | Path) -> None:
    lines = ["#classes:" + ",".join(ds.class_names)]
    channels = {s.n_channels for s in ds.examples}
    if len(channels) > 1:
        raise ValueError("all series must have the same channel count")
    k = channels.pop()
    if k > 1:
        lines.append(f"#channels:{k}")
    for s in ds.examples:
        flat = s.values if k == 1 else s.values.T.ravel()
        lines.append(",".join([str(s.label)] + [repr(float(v)) for v in flat]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_tabular_csv(path: str | Path) -> TabularDataset:
    """Read a ``label,f1,...,fD`` CSV.

    Leading ``#key:value`` comment lines are kept in ``meta``; a
    ``#classes:`` line supplies class names.
    """
    text = Path(path).read_text(encoding="utf-8")
    meta: dict[str, str] = {}
    lines = text.splitlines()
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        key, _, value = lines[start][1:].partition(":")
        meta[key.strip()] = value.strip()
        start += 1
    reader = csv.reader(io.StringIO("\n".join(lines[start:])))
    header = next(reader, None)
    if not header or header[0].strip() != "label":
        raise DataFormatError("missing header row starting with 'label'")
    feature_names = [h.strip() for h in header[1:]]
    labels, rows = [], []
    for rowno, row in enumerate(reader, start=start + 2):
        if not row:
            continue
        if len(row) != len(header):
            raise DataFormatError(f"row {rowno}: expected {len(header)} cells, got {len(row)}")
        try:
            labels.append(int(row[0]))
        except ValueError:
            raise DataFormatError(f"row {rowno}, column 'label': {row[0]!r} is not an integer") from None
        values = []
        for col, cell in zip(feature_names, row[1:]):
            try:
                values.append(float(cell))
            except ValueError:
                raise DataFormatError(f"row {rowno}, column {col!r}: {cell!r} is not numeric") from None
        rows.append(values)
    if not rows:
        raise DataFormatError("no examples")
    n_classes = max(labels) + 1
    if "classes" in meta:
        class_names = [c.strip() for c in meta["classes"].split(",")]
    else:
        class_names = [f"class_{k}" for k in range(n_classes)]
    try:
        return TabularDataset(feature_names, np.array(rows), np.array(labels), class_names, meta)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from None


def write_tabular_csv(ds: TabularDataset, path: str | Path, comments: dict[str, str] | None = None) -> None:
    meta = dict(ds.meta)
    meta.update(comments or {})
    meta["classes"] = ",".join(ds.class_names)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for key, value in meta.items():
            fh.write(f"#{key}:{value}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", *ds.feature_names])
        for label, row in zip(ds.labels, ds.rows):
            writer.writerow([int(label), *(repr(float(v)) for v in row)])


# --------------------------------------------------------------------------
# synthetic data


def synth_blobs(n_classes: int, dim: int, n_per_class: int, spread: float, seed: int) -> TabularDataset:
    """Isotropic Gaussian clusters with standard deviation ``spread``.

    Class ``c`` is centred on ``(1 + c // dim) * e_(c mod dim)``, so class
    means are at least unit distance apart.
    """
    if n_classes < 2 or dim < 1 or n_per_class < 1:
        raise ValueError("n_classes >= 2, dim >= 1 and n_per_class >= 1 required")
    if not spread > 0:
        raise ValueError("spread must be positive")
    rng = np.random.default_rng(seed)
    means = np.zeros((n_classes, dim))
    for c in range(n_classes):
        means[c, c % dim] = 1.0 + c // dim
    labels = np.repeat(np.arange(n_classes), n_per_class)
    rows = means[labels] + spread * rng.standard_normal((len(labels), dim))
    return TabularDataset(
        [f"x{j}" for j in range(dim)], rows, labels, [f"blob_{c}" for c in range(n_classes)]
    )


def synth_series(
    class_counts: Sequence[int],
    seed: int,
    length_range: tuple[int, int] = (64, 512),
    class_names: Sequence[str] | None = None,
) -> SeriesDataset:
    """Variable-length vibration-like series with overlapping class profiles.

    Every series is white noise plus a sinusoid plus sparse bumps. The class
    index shifts the typical noise scale, oscillation period and bump rate,
    but each is drawn per series with enough jitter that classes overlap.
    """
    rng = np.random.default_rng(seed)
    lo, hi = length_range
    examples = []
    for c, count in enumerate(class_counts):
        for _ in range(count):
            n = int(rng.integers(lo, hi + 1))
            t = np.arange(n)
            period = 40.0 / (1 + 0.5 * c) * rng.lognormal(0.0, 0.35)
            amplitude = (0.5 + 0.15 * c) * rng.lognormal(0.0, 0.3)
            x = amplitude * np.sin(2 * np.pi * t / period + rng.uniform(0, 2 * np.pi))
            x += rng.normal(scale=(1.0 + 0.2 * c) * rng.lognormal(0.0, 0.25), size=n)
            for pos in rng.integers(0, n, size=int(rng.poisson(1 + 0.5 * c))):
                x[pos] += rng.normal(scale=3.0)
            examples.append(RawSeries(c, x))
    order = rng.permutation(len(examples))
    names = list(class_names) if class_names else [f"class_{c}" for c in range(len(class_counts))]
    return SeriesDataset("synthetic", names, [examples[i] for i in order])


# --------------------------------------------------------------------------
# partitioning


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.10
    pool_frac: float = 0.60
    val_frac: float = 0.10
    test_frac: float = 0.20

    def __post_init__(self) -> None:
        for name in ("train_frac", "val_frac", "test_frac"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {getattr(self, name)}")
        # an empty pool is allowed so the protocol reduces to plain local training
        if not 0.0 <= self.pool_frac < 1.0:
            raise ValueError(f"pool_frac must be in [0, 1), got {self.pool_frac}")
        total = self.train_frac + self.pool_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {total}, not 1")


@dataclass(frozen=True)
class ClientPartition:
    train_idx: tuple[int, ...]
    pool_idx: tuple[int, ...]
    val_idx: tuple[int, ...]


@dataclass(frozen=True)
class PartitionPlan:
    n_clients: int
    per_client: tuple[ClientPartition, ...]
    test_idx: tuple[int, ...]
    seed: int

    def all_indices(self) -> list[int]:
        out = list(self.test_idx)
        for part in self.per_client:
            out += part.train_idx + part.pool_idx + part.val_idx
        return out


def _largest_remainder(total: int, weights: Sequence[float]) -> list[int]:
    """Integer sizes proportional to ``weights`` summing exactly to ``total``."""
    wsum = sum(weights)
    if wsum == 0:
        return [0] * len(weights)
    quotas = [total * w / wsum for w in weights]
    sizes = [math.floor(q) for q in quotas]
    # ties broken by position for determinism
    order = sorted(range(len(weights)), key=lambda i: (-(quotas[i] - sizes[i]), i))
    for i in order[: total - sum(sizes)]:
        sizes[i] += 1
    return sizes


def _even_shares(total: int, n: int) -> list[int]:
    return [total // n + (1 if k < total % n else 0) for k in range(n)]


def _controlled_rounding(row_sums: Sequence[int], col_sums: Sequence[int]) -> np.ndarray:
    """Integer table with the given margins whose cells are floor or ceil of the proportional share.

    Such a table always exists; it is found as a bipartite max-flow that
    distributes the leftover units after flooring.
    """
    rows, cols = np.asarray(row_sums), np.asarray(col_sums)
    n = rows.sum()
    exact = np.outer(rows, cols) / n
    table = np.floor(exact).astype(np.int64)
    row_need = rows - table.sum(axis=1)
    col_need = cols - table.sum(axis=0)
    if row_need.sum() == 0:
        return table
    g = nx.DiGraph()
    for i, need in enumerate(row_need):
        if need:
            g.add_edge("s", ("r", i), capacity=int(need))
    for j, need in enumerate(col_need):
        if need:
            g.add_edge(("c", j), "t", capacity=int(need))
    for i in range(len(rows)):
        for j in range(len(cols)):
            if exact[i, j] - table[i, j] > 1e-12 and row_need[i] and col_need[j]:
                g.add_edge(("r", i), ("c", j), capacity=1)
    value, flow = nx.maximum_flow(g, "s", "t")
    if value != row_need.sum():
        raise RuntimeError("controlled rounding failed to balance margins")
    for i in range(len(rows)):
        for (_, j), units in flow.get(("r", i), {}).items():
            table[i, j] += units
    return table


def split_dataset(
    ds: TabularDataset | SeriesDataset,
    spec: SplitSpec = SplitSpec(),
    n_clients: int = 2,
    seed: int = 0,
    stratified: bool = True,
) -> PartitionPlan:
    """Partition example indices into a server test set and per-client train/pool/val sets.

    The test set takes ``round(test_frac * N)`` examples; the residual is
    divided among train/pool/val by largest remainder and each of those is
    shared equally between clients (sizes differ by at most one). With
    ``stratified`` every partition's class counts are the floor or ceiling
    of its proportional share.
    """
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    labels = ds.labels
    N = len(labels)
    n_test = math.floor(spec.test_frac * N + 0.5)
    n_train, n_pool, n_val = _largest_remainder(N - n_test, [spec.train_frac, spec.pool_frac, spec.val_frac])
    if n_train < n_clients:
        raise ValueError(f"dataset too small: {N} examples give {n_train} training instances for {n_clients} clients")

    train_sh, pool_sh, val_sh = (_even_shares(n, n_clients) for n in (n_train, n_pool, n_val))
    bucket_sizes = [n_test]
    for k in range(n_clients):
        bucket_sizes += [train_sh[k], pool_sh[k], val_sh[k]]

    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in bucket_sizes]
    if stratified:
        classes = np.unique(labels)
        per_class = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
        table = _controlled_rounding(bucket_sizes, [len(p) for p in per_class])
        for j, members in enumerate(per_class):
            start = 0
            for b, count in enumerate(table[:, j]):
                buckets[b].extend(members[start : start + count].tolist())
                start += count
    else:
        order = rng.permutation(N)
        start = 0
        for b, size in enumerate(bucket_sizes):
            buckets[b] = order[start : start + size].tolist()
            start += size

    buckets = [tuple(sorted(b)) for b in buckets]
    clients = tuple(
        ClientPartition(buckets[1 + 3 * k], buckets[2 + 3 * k], buckets[3 + 3 * k]) for k in range(n_clients)
    )
    return PartitionPlan(n_clients, clients, buckets[0], seed)


def class_distribution(ds: TabularDataset | SeriesDataset) -> list[tuple[str, int, float]]:
    """``(class name, count, percentage)`` for every class."""
    counts = np.bincount(ds.labels, minlength=len(ds.class_names))
    total = counts.sum()
    return [(name, int(c), 100.0 * c / total) for name, c in zip(ds.class_names, counts)]


# Class names, example counts and (min, max) series lengths of the three
# road-surface datasets; used to build synthetic stand-ins of the same shape.
ROAD_DATASETS: dict[str, tuple[tuple[str, ...], tuple[int, ...], tuple[tuple[int, int], ...]]] = {
    "regularity": (
        ("Regular", "Deteriorated"),
        (762, 740),
        ((66, 2371), (190, 4201)),
    ),
    "pavement": (
        ("Flexible", "Cobblestone", "Dirt Road"),
        (816, 527, 768),
        ((66, 2371), (284, 1543), (274, 1045)),
    ),
    "obstacles": (
        ("Speed Bump", "Vertical Patch", "Raised Markers", "Raised Crosswalk"),
        (212, 222, 187, 160),
        ((178, 730), (114, 279), (111, 462), (258, 736)),
    ),
}


def synth_road_like(name: str, seed: int) -> SeriesDataset:
    """Synthetic series with the class names and counts of a road-surface dataset.

    Lengths are drawn per class inside that class's observed range, capped
    at 600 samples to keep featurization fast.
    """
    names, counts, ranges = ROAD_DATASETS[name]
    parts = []
    for c, (count, (lo, hi)) in enumerate(zip(counts, ranges)):
        one_hot = [0] * len(counts)
        one_hot[c] = count
        part = synth_series(one_hot, derive_child_seed(seed, c), (lo, min(hi, max(lo, 600))), names)
        parts.extend(part.examples)
    order = np.random.default_rng(seed).permutation(len(parts))
    return SeriesDataset(f"{name}-synthetic", list(names), [parts[i] for i in order])


def derive_child_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, k]).generate_state(1, np.uint64)[0])
