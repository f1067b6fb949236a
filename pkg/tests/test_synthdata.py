import json

import numpy as np
import pytest

from diffimpute.core import DataError, Window
from diffimpute.synthdata import (
    GenConfig,
    apply_norm,
    fit_norm,
    generate,
    generate_disks,
    inject_missing,
    invert_norm,
    read_ndjson,
    write_ndjson,
)

from conftest import make_window


def test_noise_free_rows_are_constant():
    for phi in (-0.5, 0.0, 0.9):
        for w in generate(GenConfig(n_disks=5, K=3, L=10, noise_scale=0.0, drift_rate=0.0, ar_coefficient=phi, seed=2)):
            assert np.all(w.values == w.values[:, :1])


def test_failure_rate_extremes():
    assert all(w.label == 0 for w in generate(GenConfig(n_disks=30, L=8, failure_rate=0.0)))
    disks = generate_disks(GenConfig(n_disks=30, L=8, failure_rate=1.0))
    assert all(d.window.label == 1 and d.onset is not None for d in disks)


def test_generation_deterministic():
    a = generate(GenConfig(n_disks=4, K=2, L=6, seed=11))
    b = generate(GenConfig(n_disks=4, K=2, L=6, seed=11))
    assert a == b
    assert a != generate(GenConfig(n_disks=4, K=2, L=6, seed=12))


def test_label_balance():
    p, n = 0.15, 2000
    labels = [w.label for w in generate(GenConfig(n_disks=n, K=2, L=4, failure_rate=p, seed=5))]
    assert abs(np.mean(labels) - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_degrading_features_drift_up():
    cfg = GenConfig(n_disks=150, K=6, L=24, failure_rate=1.0, seed=9)
    deg = cfg.degrading_features()
    windows = generate(cfg)
    late = np.mean([w.values[deg, -6:].mean() for w in windows])
    early = np.mean([w.values[deg, :6].mean() for w in windows])
    assert late > early


def test_inject_missing_zero_ratio_is_noop(rng):
    data = generate(GenConfig(n_disks=3, K=2, L=6))
    assert inject_missing(data, 0.0, "mcar", rng) == data


def test_mcar_fraction(rng):
    data = generate(GenConfig(n_disks=100, K=10, L=100, seed=1))  # 10^5 entries
    out = inject_missing(data, 0.5, "mcar", rng)
    frac = 1 - np.mean([w.obs_mask.mean() for w in out])
    assert abs(frac - 0.5) <= 3 * np.sqrt(0.25 / 1e5)
    # ground truth untouched, missing entries carry the sentinel
    assert all(w.n_observed == w.values.size for w in data)
    assert all(np.all(np.isnan(w.values[w.obs_mask == 0])) for w in out)


def test_burst_rows_reach_ratio(rng):
    data = generate(GenConfig(n_disks=20, K=4, L=40, seed=3))
    out = inject_missing(data, 0.3, "burst", rng)
    for w in out:
        assert np.all((w.obs_mask == 0).mean(axis=1) >= 0.3)
    with pytest.raises(ValueError):
        inject_missing(data, 1.0, "mcar", rng)


def test_norm_two_point_example():
    w = make_window([[1.0, 3.0]])
    stats = fit_norm([w])
    assert stats.mean[0] == 2.0 and stats.std[0] == 1.0
    assert np.array_equal(apply_norm(w, stats).values, [[-1.0, 1.0]])


def test_norm_roundtrip_and_constant_feature():
    data = inject_missing(generate(GenConfig(n_disks=20, K=3, L=12)), 0.2, "mcar", np.random.default_rng(0))
    const = make_window([[5.0, 5.0, np.nan, 5.0]])
    stats = fit_norm(data)
    for w in data:
        z = apply_norm(w, stats)
        obs = w.obs_mask == 1
        assert np.allclose(invert_norm(z.values, stats)[obs], w.values[obs], rtol=0, atol=1e-12)
    cs = fit_norm([const])
    assert cs.std[0] == 1e-6
    assert np.array_equal(apply_norm(const, cs).values[const.obs_mask == 1], [0.0, 0.0, 0.0])


def test_normalized_training_moments():
    data = inject_missing(generate(GenConfig(n_disks=40, K=4, L=16)), 0.3, "mcar", np.random.default_rng(1))
    stats = fit_norm(data)
    z = [apply_norm(w, stats) for w in data]
    for k in range(4):
        obs = np.concatenate([w.values[k][w.obs_mask[k] == 1] for w in z])
        assert abs(obs.mean()) <= 1e-9
        assert abs(obs.std() - 1) <= 1e-9
    with pytest.raises(DataError):
        fit_norm([])


def test_ndjson_roundtrip(tmp_path, rng):
    data = inject_missing(generate(GenConfig(n_disks=7, K=3, L=5, seed=4)), 0.4, "mcar", rng)
    path = tmp_path / "d.ndjson"
    write_ndjson(data, path)
    assert read_ndjson(path) == data
    line = path.read_text().splitlines()[0]
    assert "null" in line or all(w.n_observed == 15 for w in data[:1])
    empty = tmp_path / "e.ndjson"
    write_ndjson([], empty)
    assert empty.read_text() == "" and read_ndjson(empty) == []


def test_ndjson_errors_name_the_line(tmp_path):
    good = {"disk_id": "a", "label": 0, "start_time": 0, "K": 1, "L": 2, "values": [1.0, None]}
    bad = dict(good, values=[1.0, 2.0, 3.0])
    path = tmp_path / "bad.ndjson"
    path.write_text(json.dumps(good) + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(DataError, match=r":2: .*K\*L"):
        read_ndjson(path)
    path.write_text("{not json\n")
    with pytest.raises(DataError, match=":1:"):
        read_ndjson(path)
