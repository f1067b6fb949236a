import csv
import json

import numpy as np
import pytest

from diffimpute import cli, synthdata, trainer

TINY = ["--set", "epochs=2", "--set", "hidden_width=6", "--set", "step_embed_dim=4", "--set", "T=6",
        "--set", "fast_steps=3", "--set", "residual_blocks=1"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    data = d / "data.ndjson"
    assert cli.main(["gen-data", "--out", str(data), "--disks", "40", "--features", "3", "--length", "8",
                     "--failure-rate", "0.3", "--seed", "3"]) == 0
    ckpt = d / "model.ckpt"
    assert cli.main(["train", "--data", str(data), "--out-checkpoint", str(ckpt), *TINY]) == 0
    return d, data, ckpt


def test_gen_data_writes_truth_sidecar(workdir):
    d, data, _ = workdir
    observed = synthdata.read_ndjson(data)
    truth = synthdata.read_ndjson(d / "data.truth.ndjson")
    assert len(observed) == len(truth) == 40
    for o, t in zip(observed, truth):
        assert o.disk_id == t.disk_id and t.obs_mask.all()
        keep = o.obs_mask == 1
        assert np.array_equal(o.values[keep], t.values[keep])
    assert sum(int((o.obs_mask == 0).sum()) for o in observed) > 0


def test_train_writes_checkpoint_and_report(workdir):
    d, data, ckpt = workdir
    params, cfg = trainer.load_checkpoint(ckpt)
    assert cfg.epochs == 2 and cfg.hidden_width == 6 and (params.K, params.L) == (3, 8)
    manifest, _ = trainer.read_checkpoint_manifest(ckpt)
    assert len(manifest["extra"]["norm"]["mean"]) == 3
    report = json.loads((d / "model.ckpt.report.json").read_text())
    assert len(report["epoch_mean_loss"]) == 2 and "wall_clock_s" in report
    assert report["config"]["T"] == 6 and report["seeds"]["train"] == 0


def test_eval_impute_report_is_reproducible(workdir, capsys):
    d, data, ckpt = workdir
    outs = []
    for name in ("a.json", "b.json"):
        args = ["eval-impute", "--data", str(data), "--checkpoint", str(ckpt), "--replicates", "4",
                "--fast-steps", "3", "--out", str(d / name)]
        assert cli.main(args) == 0
        outs.append((d / name).read_bytes())
    assert outs[0] == outs[1]
    report = json.loads(outs[0])
    rows = {r["method"]: r for r in report["rows"]}
    assert set(rows) == set(cli.ALL_METHODS)
    assert rows["zero"]["crps"] is None and rows["diffusion"]["crps"] is not None
    assert report["config"]["n_replicates"] == 4 and "eval_mask" in report["seeds"]
    text = capsys.readouterr().out
    assert "diffusion-plus" in text and "mae" in text


def test_zero_method_scores_mean_absolute_truth(workdir):
    d, data, ckpt = workdir
    out = d / "zero.json"
    assert cli.main(["eval-impute", "--data", str(data), "--checkpoint", str(ckpt), "--methods", "zero",
                     "--mask-ratio", "0.5", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    _, _, stats, _ = cli._load_model(ckpt)
    windows = cli._eval_windows(synthdata.read_ndjson(data), stats, "test", 0)
    rng = np.random.default_rng([1, cli.EVAL_MASK_SALT])
    vals = np.concatenate([w.values[trainer.partition_mask(w, 0.5, rng).target_mask == 1] for w in windows])
    assert report["rows"][0]["mae"] == pytest.approx(np.abs(vals).mean(), abs=1e-12)


def test_eval_downstream_and_bench(workdir):
    d, data, ckpt = workdir
    out = d / "down.json"
    assert cli.main(["eval-downstream", "--data", str(data), "--checkpoint", str(ckpt), "--methods",
                     "zero,diffusion-plus", "--replicates", "3", "--fast-steps", "3", "--out", str(out)]) == 0
    rows = json.loads(out.read_text())["rows"]
    assert [r["method"] for r in rows] == ["zero", "diffusion-plus"]
    assert all(0 <= r["f1"] <= 1 for r in rows)
    bench = d / "bench.csv"
    assert cli.main(["bench", "--data", str(data), "--checkpoint", str(ckpt), "--steps-list", "6,12",
                     "--fast-steps", "3", "--windows", "2", "--replicates", "2", "--out", str(bench)]) == 0
    with open(bench) as fh:
        table = list(csv.DictReader(fh))
    assert list(table[0]) == ["mode", "steps", "ms_per_sample", "denoiser_evals"]
    evals = {(r["mode"], int(r["steps"])): int(r["denoiser_evals"]) for r in table}
    assert evals == {("ancestral", 6): 6, ("ancestral", 12): 12, ("fast", 3): 3}


def test_exit_codes(workdir, tmp_path):
    d, data, ckpt = workdir
    assert cli.main(["train"]) == 2
    assert cli.main(["eval-impute", "--data", str(data), "--checkpoint", str(ckpt), "--mask-ratio", "0.3"]) == 2
    assert cli.main(["eval-impute", "--data", str(data), "--checkpoint", str(ckpt), "--methods", "brits"]) == 2
    assert cli.main(["train", "--data", str(data), "--out-checkpoint", str(tmp_path / "x"),
                     "--set", "beta_max=2"]) == 2
    assert cli.main(["train", "--data", str(tmp_path / "missing.ndjson"), "--out-checkpoint", str(tmp_path / "x")]) == 3
    bad = tmp_path / "bad.ndjson"
    bad.write_text("{not json}\n")
    assert cli.main(["train", "--data", str(bad), "--out-checkpoint", str(tmp_path / "x")]) == 3
    assert cli.main(["eval-impute", "--data", str(data), "--checkpoint", str(data)]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_training_exits_with_numeric_code(workdir, tmp_path):
    d, data, _ = workdir
    # a huge learning rate drives the loss to overflow
    code = cli.main(["train", "--data", str(data), "--out-checkpoint", str(tmp_path / "x"), *TINY,
                     "--set", "learning_rate=1e200", "--set", "epochs=20"])
    assert code == 4
