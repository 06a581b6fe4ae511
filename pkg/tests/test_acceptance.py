"""Acceptance suite: one group of tests per criterion; conftest prints the verdicts."""

import json
import os
import time
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from fedtab.cli import main, prepare
from fedtab.config import parse_config
from fedtab.data import (
    ROAD_DATASETS,
    SplitSpec,
    class_distribution,
    load_series_file,
    split_dataset,
    synth_blobs,
    synth_road_like,
    write_series_file,
)
from fedtab.federation import ClientUpdate, RoundConfig, fedavg, run_centralized, run_experiment
from fedtab.metrics import accuracy, confusion
from fedtab.model import TabNetConfig, gradients, init_params, read_checkpoint, sparsemax
from oracles import reference_loss, simplex_projection_bruteforce, weighted_mean_loop

PRESETS = sorted(p.name[:-4] for p in resources.files("fedtab.presets").iterdir() if p.name.endswith(".cfg"))
DATA_FILES = {
    "regularity": "AsphaltRegularity.series",
    "pavement": "AsphaltPavementType.series",
    "obstacles": "AsphaltObstacles.series",
}


def _data_dir() -> Path:
    return Path(os.environ.get("FEDTAB_DATA_DIR", "data"))


def _road_name(preset: str) -> str | None:
    return next((name for name in ROAD_DATASETS if name in preset), None)


def materialize(preset: str, workdir: Path, data_path: Path | None = None, **overrides) -> Path:
    """Copy a shipped preset into ``workdir`` with outputs (and optionally data) redirected there."""
    text = resources.files("fedtab.presets").joinpath(preset + ".cfg").read_text()
    out = workdir / preset
    keep = []
    for line in text.splitlines():
        key = line.partition("=")[0].strip()
        if key.startswith("output.") or key in overrides or (data_path and key == "data.path"):
            continue
        keep.append(line)
    keep += [f"output.history_path = {out / 'history.jsonl'}", f"output.checkpoint_dir = {out / 'checkpoints'}"]
    if data_path is not None:
        keep.append(f"data.path = {data_path}")
    keep += [f"{k} = {v}" for k, v in overrides.items()]
    path = workdir / f"{preset}.cfg"
    workdir.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(keep) + "\n")
    return path


@pytest.fixture(scope="module")
def stand_in_files(tmp_path_factory):
    """Synthetic series files with the class names and counts of each road dataset."""
    root = tmp_path_factory.mktemp("standins")
    files = {}
    for name in ROAD_DATASETS:
        files[name] = root / DATA_FILES[name]
        write_series_file(synth_road_like(name, seed=0), files[name])
    return files


@pytest.fixture(scope="module")
def preset_runs(tmp_path_factory, stand_in_files):
    """Every shipped preset run once at full length (road presets on stand-in data)."""
    root = tmp_path_factory.mktemp("presets")
    runs = {}
    for preset in PRESETS:
        road = _road_name(preset)
        cfg = parse_config(materialize(preset, root, stand_in_files[road] if road else None))
        tab, plan, model_cfg, round_cfg = prepare(cfg)
        start = time.perf_counter()
        history, server, clients = run_experiment(
            tab, plan, model_cfg, round_cfg, cfg.seed, history_path=cfg.output.history_path
        )
        runs[preset] = {
            "cfg": cfg,
            "plan": plan,
            "history": history,
            "server": server,
            "clients": clients,
            "seconds": time.perf_counter() - start,
            "history_bytes": Path(cfg.output.history_path).read_bytes(),
        }
    return runs


# --------------------------------------------------------------------------
C1 = pytest.mark.criterion(1, "sparsemax matches brute-force simplex projection")


@C1
def test_c1_sparsemax_oracle_and_properties():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        z = rng.uniform(-5, 5, size=int(rng.integers(1, 9)))
        p = sparsemax(z)
        worst = max(worst, float(np.max(np.abs(p - simplex_projection_bruteforce(z)))))
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) <= 1e-9
        c = rng.uniform(-10, 10)
        assert np.max(np.abs(sparsemax(z + c) - p)) <= 1e-9
        perm = rng.permutation(len(z))
        assert np.max(np.abs(sparsemax(z[perm]) - p[perm])) <= 1e-9
    elapsed = time.perf_counter() - start
    print(f"max |sparsemax - oracle| = {worst:.2e}, {elapsed:.2f} s")
    assert worst <= 1e-6
    assert elapsed < 10


# --------------------------------------------------------------------------
C2 = pytest.mark.criterion(2, "analytic gradients match central differences")


@C2
def test_c2_gradients_vs_central_differences():
    # Differences are taken on an independent extended-precision forward pass;
    # a float64 loss cannot resolve |g| ~ 1e-8 at h = 1e-5.
    start = time.perf_counter()
    h = np.longdouble("1e-5")
    checked = 0
    worst = 0.0
    for seed in range(24):
        rng = np.random.default_rng(500 + seed)
        cfg = TabNetConfig(
            int(rng.integers(2, 9)), int(rng.integers(2, 4)),
            n_d=int(rng.integers(1, 4)), n_a=int(rng.integers(1, 4)),
            n_steps=int(rng.integers(1, 4)), lambda_sparse=0.05,
        )
        params = init_params(cfg, seed)
        B = int(rng.integers(1, 5))
        X, y = rng.normal(size=(B, cfg.input_dim)), rng.integers(0, cfg.n_classes, B)
        value, grads, _ = gradients(params, X, y, training=True)
        base = {k: np.asarray(v, dtype=np.longdouble) for k, v in params.as_dict().items()}
        assert abs(float(reference_loss(base, cfg, X, y)) - value) <= 1e-12
        for name, g in grads.items():
            for idx in np.ndindex(g.shape):
                if abs(g[idx]) <= 1e-8:
                    continue
                plus, minus = dict(base), dict(base)
                plus[name] = base[name].copy()
                minus[name] = base[name].copy()
                plus[name][idx] += h
                minus[name][idx] -= h
                numeric = float((reference_loss(plus, cfg, X, y) - reference_loss(minus, cfg, X, y)) / (2 * h))
                rel = abs(g[idx] - numeric) / abs(g[idx])
                worst = max(worst, rel)
                assert rel <= 1e-4, (seed, name, idx, g[idx], numeric)
                checked += 1
    elapsed = time.perf_counter() - start
    print(f"{checked} coordinates, worst relative error {worst:.2e}, {elapsed:.1f} s")
    assert elapsed < 60


# --------------------------------------------------------------------------
C3 = pytest.mark.criterion(3, "FedAvg equals the weighted mean")


@C3
def test_c3_fedavg_oracle():
    rng = np.random.default_rng(3)
    cfg = TabNetConfig(4, 3, n_d=2, n_a=2, n_steps=2)
    template = init_params(cfg, 0)
    for _ in range(100):
        k = int(rng.integers(1, 7))
        counts = [int(c) for c in rng.integers(1, 1000, k)]
        params = [
            template.replace(**{t.name: rng.normal(size=t.values.shape) * rng.uniform(0.1, 10) for t in template})
            for _ in range(k)
        ]
        ids = rng.permutation(k)
        merged = fedavg([ClientUpdate(int(i), params[i], counts[i], None, None) for i in ids])
        for name in merged.names:
            stack = np.stack([p[name] for p in params])
            expected = weighted_mean_loop([p[name] for p in params], counts)
            assert np.max(np.abs(merged[name] - expected)) <= 1e-12
            assert np.all(merged[name] >= stack.min(axis=0))
            assert np.all(merged[name] <= stack.max(axis=0))
        same = fedavg([ClientUpdate(i, params[0], counts[i], None, None) for i in range(k)])
        assert same.flat().tobytes() == params[0].flat().tobytes()


# --------------------------------------------------------------------------
C4 = pytest.mark.criterion(4, "one client with an empty pool reduces to centralized training")


@C4
def test_c4_single_client_equals_centralized():
    tab = synth_blobs(3, 5, 40, 0.5, seed=1)
    plan = split_dataset(tab, SplitSpec(0.7, 0.0, 0.1, 0.2), n_clients=1, seed=1)
    model_cfg = TabNetConfig(5, 3)
    round_cfg = RoundConfig(n_clients=1, clients_per_round=1, local_epochs=3, batch_size=16, total_rounds=5)
    _, server, _ = run_experiment(tab, plan, model_cfg, round_cfg, seed=11)
    central, result = run_centralized(tab, plan, model_cfg, round_cfg, seed=11)
    assert result["epochs"] == 15
    assert server.params.flat().tobytes() == central.flat().tobytes()


@C4
def test_c4_single_client_equals_centralized_via_cli(tmp_path, capsys):
    cfg = tmp_path / "one.cfg"
    cfg.write_text(
        "seed = 5\ndata.synth = blobs\nsplit.train = 0.7\nsplit.pool = 0\n"
        "federation.n_clients = 1\nfederation.clients_per_round = 1\nfederation.rounds = 5\n"
        "federation.local_epochs = 3\noutput.checkpoint_every = 5\n"
        f"output.history_path = {tmp_path / 'h.jsonl'}\noutput.checkpoint_dir = {tmp_path / 'ck'}\n"
    )
    assert main(["run", "--config", str(cfg)]) == 0
    assert main(["centralized", "--config", str(cfg)]) == 0
    capsys.readouterr()
    fed = read_checkpoint(tmp_path / "ck" / "round_0005.ckpt")
    central = read_checkpoint(tmp_path / "ck" / "centralized.ckpt")
    assert fed.to_bytes() == central.to_bytes()


# --------------------------------------------------------------------------
C5 = pytest.mark.criterion(5, "training sets grow by min(init + 10t, init + pool) past pool exhaustion")


@C5
@pytest.mark.parametrize("preset", PRESETS)
def test_c5_pool_growth_law(preset_runs, preset):
    run = preset_runs[preset]
    records = run["history"].records()
    assert len(records) == run["cfg"].federation.rounds
    per_round = run["cfg"].federation.instances_per_round
    exhausted_rounds = 0
    for client, part in zip(run["clients"], run["plan"].per_client):
        init, pool = len(part.train_idx), len(part.pool_idx)
        t = 0
        for rec in records:
            entry = next((c for c in rec["clients"] if c["id"] == client.id), None)
            if entry is None:
                continue
            assert entry["n_train"] == min(init + per_round * t, init + pool)
            if init + per_round * t >= init + pool:
                exhausted_rounds += 1
            t += 1
        assert client.rounds_trained == t
        assert len(client.train_idx) == min(init + per_round * t, init + pool)
        assert len(client.train_idx) + len(client.pool_idx) == init + pool
    # every client kept training after its pool ran dry
    assert exhausted_rounds >= len(run["clients"])
    print(f"{preset}: {exhausted_rounds} client-rounds trained after pool exhaustion, {run['seconds']:.1f} s")


# --------------------------------------------------------------------------
C6 = pytest.mark.criterion(6, "blobs preset reaches test accuracy >= 0.95 within 5 minutes")


@C6
def test_c6_blobs_end_to_end(tmp_path, capsys):
    cfg = materialize("blobs_smoke", tmp_path)
    start = time.perf_counter()
    assert main(["run", "--config", str(cfg)]) == 0
    elapsed = time.perf_counter() - start
    summary = json.loads(capsys.readouterr().out)
    print(f"max accuracy {summary['max_acc']:.4f} at round {summary['max_round']}, {elapsed:.1f} s")
    parsed = parse_config(cfg)
    tab, plan, _, round_cfg = prepare(parsed)
    assert tab.rows.shape == (600, 10) and tab.n_classes == 3
    assert (round_cfg.n_clients, round_cfg.clients_per_round, round_cfg.total_rounds) == (3, 2, 40)
    assert summary["max_acc"] >= 0.95
    assert elapsed < 300


# --------------------------------------------------------------------------
C7 = pytest.mark.criterion(7, "archive datasets load with the published class counts")


@C7
@pytest.mark.parametrize("name", sorted(ROAD_DATASETS))
def test_c7_loader_fidelity(name):
    path = _data_dir() / DATA_FILES[name]
    if not path.is_file():
        pytest.skip(f"archive data not found at {path.parent}/ (set FEDTAB_DATA_DIR)")
    names, counts, _ = ROAD_DATASETS[name]
    dist = class_distribution(load_series_file(path))
    assert [(n, c) for n, c, _ in dist] == list(zip(names, counts))


# --------------------------------------------------------------------------
C8 = pytest.mark.criterion(8, "archive-scale runs reach the broad accuracy bands")

BANDS = {"regularity": 0.85, "pavement": 0.78, "obstacles": 0.55}


@C8
@pytest.mark.parametrize("name", sorted(BANDS))
def test_c8_road_scale(name, tmp_path):
    path = _data_dir() / DATA_FILES[name]
    if not path.is_file():
        pytest.skip(f"archive data not found at {path.parent}/ (set FEDTAB_DATA_DIR)")
    cfg = parse_config(materialize(f"road_{name}", tmp_path, path.resolve()))
    tab, plan, model_cfg, round_cfg = prepare(cfg)
    start = time.perf_counter()
    history, _, _ = run_experiment(tab, plan, model_cfg, round_cfg, cfg.seed, history_path=cfg.output.history_path)
    elapsed = time.perf_counter() - start
    print(f"{name}: max accuracy {history.max_accuracy:.4f} at round {history.max_round}, {elapsed:.0f} s")
    assert history.max_accuracy >= BANDS[name]
    assert elapsed < 1800


# --------------------------------------------------------------------------
C9 = pytest.mark.criterion(9, "accuracy and confusion identities")


@C9
def test_c9_metric_identities():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        C = int(rng.integers(1, 7))
        N = int(rng.integers(1, 200))
        labels, preds = rng.integers(0, C, N), rng.integers(0, C, N)
        cm = confusion(preds, labels, C)
        assert accuracy(preds, labels) == np.trace(cm.counts) / N
        assert cm.counts.sum(axis=1).tolist() == np.bincount(labels, minlength=C).tolist()
        assert cm.counts.sum(axis=0).tolist() == np.bincount(preds, minlength=C).tolist()


# --------------------------------------------------------------------------
C10 = pytest.mark.criterion(10, "seeded reruns are byte-identical, parallel equals sequential")


@C10
@pytest.mark.parametrize("preset", ["blobs_smoke", "road_obstacles_3clients"])
def test_c10_rerun_is_byte_identical(preset_runs, stand_in_files, tmp_path, preset):
    road = _road_name(preset)
    cfg = parse_config(materialize(preset, tmp_path, stand_in_files[road] if road else None))
    tab, plan, model_cfg, round_cfg = prepare(cfg)
    _, server, _ = run_experiment(tab, plan, model_cfg, round_cfg, cfg.seed, history_path=cfg.output.history_path)
    assert Path(cfg.output.history_path).read_bytes() == preset_runs[preset]["history_bytes"]
    assert server.params.to_bytes() == preset_runs[preset]["server"].params.to_bytes()


@C10
def test_c10_parallel_matches_sequential(preset_runs, tmp_path):
    cfg = parse_config(materialize("blobs_smoke", tmp_path, **{"federation.parallel": "true"}))
    tab, plan, model_cfg, round_cfg = prepare(cfg)
    assert round_cfg.parallel
    _, server, _ = run_experiment(tab, plan, model_cfg, round_cfg, cfg.seed)
    assert server.params.to_bytes() == preset_runs["blobs_smoke"]["server"].params.to_bytes()
