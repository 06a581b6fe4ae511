"""Fixed-width statistical feature vectors from variable-length series."""

from __future__ import annotations

import numpy as np

from .data import RawSeries, SeriesDataset, TabularDataset

CATALOG_VERSION = "v1"
MAX_LAG = 5

FEATURE_NAMES: tuple[str, ...] = (
    "mean",
    "std",
    "min",
    "max",
    "median",
    "q25",
    "q75",
    "iqr",
    "skewness",
    "kurtosis",
    "abs_energy",
    "rms",
    "mean_abs_change",
    "mean_change",
    "mean_crossing_rate",
    "peak_rate",
    *(f"autocorr_lag{lag}" for lag in range(1, MAX_LAG + 1)),
    "spectral_centroid",
    "spectral_entropy",
    "log_length",
)
N_FEATURES = len(FEATURE_NAMES)


def _is_flat(x: np.ndarray, std: float) -> bool:
    # relative guard so constants like [0.1]*n whose mean rounds are still flat
    return std <= 1e-12 * max(1.0, float(np.max(np.abs(x))))


def autocorrelation(values: np.ndarray, lag: int) -> float:
    """Lag-``lag`` autocorrelation with population mean and variance.

    ``sum_t (x_t - mu)(x_{t+lag} - mu) / ((n - lag) * var)``, defined as 0
    for a flat series or ``lag >= n``.
    """
    if lag < 1:
        raise ValueError(f"lag must be >= 1, got {lag}")
    x = np.asarray(values, dtype=np.float64)
    n = len(x)
    if lag >= n:
        return 0.0
    var = x.var()
    if _is_flat(x, np.sqrt(var)):
        return 0.0
    dev = x - x.mean()
    return float(np.dot(dev[:-lag], dev[lag:]) / ((n - lag) * var))


def spectral_features(values: np.ndarray) -> tuple[float, float]:
    """Spectral centroid (in bins) and entropy of the mean-removed magnitude spectrum.

    Uses bins ``k = 1 .. n // 2``. The entropy uses the normalized power
    ``p_k = m_k^2 / sum m^2``.
    """
    x = np.asarray(values, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("need at least 2 samples")
    if _is_flat(x, float(x.std())):
        return 0.0, 0.0
    mags = np.abs(np.fft.rfft(x - x.mean()))[1 : len(x) // 2 + 1]
    total = mags.sum()
    if total <= 0.0:
        return 0.0, 0.0
    bins = np.arange(1, len(mags) + 1)
    centroid = float(np.dot(bins, mags) / total)
    power = mags**2
    p = power[power > 0] / power.sum()
    entropy = float(-np.sum(p * np.log(p)))
    return centroid, max(entropy, 0.0)


def extract_features(series: RawSeries | np.ndarray) -> np.ndarray:
    """Feature vector of a univariate series, ordered as :data:`FEATURE_NAMES`."""
    x = np.asarray(series.values if isinstance(series, RawSeries) else series, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("extract_features expects one channel; use featurize_dataset for multivariate series")
    n = len(x)
    if n < 2:
        raise ValueError(f"series must have at least 2 samples, got {n}")

    mean = x.mean()
    std = x.std()
    flat = _is_flat(x, std)
    q25, median, q75 = np.percentile(x, [25, 50, 75])
    dev = x - mean
    if flat:
        skew = kurt = 0.0
    else:
        skew = float(np.mean(dev**3) / std**3)
        kurt = float(np.mean(dev**4) / std**4 - 3.0)
    diffs = np.diff(x)
    crossings = 0 if flat else int(np.count_nonzero(dev[:-1] * dev[1:] < 0))
    peaks = int(np.count_nonzero((x[1:-1] > x[:-2]) & (x[1:-1] > x[2:]))) if n >= 3 else 0
    energy = float(np.dot(x, x))
    centroid, entropy = spectral_features(x)

    out = np.array(
        [
            mean,
            std,
            x.min(),
            x.max(),
            median,
            q25,
            q75,
            q75 - q25,
            skew,
            kurt,
            energy,
            np.sqrt(energy / n),
            np.mean(np.abs(diffs)),
            np.mean(diffs),
            crossings / (n - 1),
            peaks / n,
            *(autocorrelation(x, lag) for lag in range(1, MAX_LAG + 1)),
            centroid,
            entropy,
            np.log(n),
        ],
        dtype=np.float64,
    )
    return out


def feature_names(n_channels: int = 1) -> list[str]:
    if n_channels == 1:
        return list(FEATURE_NAMES)
    return [f"ch{c}_{name}" for c in range(n_channels) for name in FEATURE_NAMES]


def featurize_dataset(ds: SeriesDataset) -> TabularDataset:
    """One feature row per series; multivariate series give per-channel blocks in channel order."""
    if len(ds) == 0:
        raise ValueError("cannot featurize an empty dataset")
    channels = {s.n_channels for s in ds.examples}
    if len(channels) != 1:
        raise ValueError(f"mixed channel counts in dataset: {sorted(channels)}")
    n_channels = channels.pop()
    rows = np.empty((len(ds), N_FEATURES * n_channels))
    for i, s in enumerate(ds.examples):
        try:
            blocks = [s.values] if n_channels == 1 else list(s.values)
            rows[i] = np.concatenate([extract_features(b) for b in blocks])
        except ValueError as exc:
            raise ValueError(f"series {i}: {exc}") from exc
    return TabularDataset(
        feature_names(n_channels), rows, ds.labels, list(ds.class_names), {"catalog": CATALOG_VERSION}
    )
