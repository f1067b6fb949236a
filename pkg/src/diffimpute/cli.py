"""Command-line entry points: gen-data, train, eval-impute, eval-downstream, bench.

Exit codes: 0 success, 2 bad arguments or configuration, 3 data error,
4 numeric failure.

Every JSON report starts with a header holding the resolved configuration,
the seeds, and the SHA-256 of the input files, so a report can be
reproduced from its own contents. Evaluation reports contain no timings and
are byte-identical across runs with the same inputs.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, baselines, downstream, metrics, sampler, synthdata, trainer
from .core import ConfigError, DataError, DiffusionConfig, NumericError, load_config
from .schedule import make_schedule

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

# salts that keep evaluation randomness apart from training randomness
EVAL_MASK_SALT = 0xE7A1
SPLIT_SEED = 0
TEST_FRACTION = 0.3

DIFFUSION_METHODS = {"diffusion": "ancestral", "diffusion-plus": "fast"}
ALL_METHODS = tuple(baselines.BASELINES) + tuple(DIFFUSION_METHODS)


class UsageError(Exception):
    pass


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, obj) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _table(rows: list[dict], columns: list[str]) -> str:
    """Aligned plain-text table; floats get 4 decimals, missing cells a dash."""

    def cell(v):
        if v is None:
            return "-"
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    body = [[cell(r.get(c)) for c in columns] for r in rows]
    widths = [max(len(c), *(len(b[i]) for b in body)) if body else len(c) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def _parse_methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in ALL_METHODS]
    if bad or not methods:
        raise UsageError(f"unknown methods {bad}; choose from {','.join(ALL_METHODS)}")
    return methods


def _parse_int_list(text: str) -> list[int]:
    try:
        out = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None
    if not out or min(out) < 2:
        raise UsageError("step counts must be integers >= 2")
    return out


def _parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _read_data(path) -> list:
    try:
        data = synthdata.read_ndjson(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not data:
        raise DataError(f"{path}: dataset is empty")
    return data


def _load_model(path):
    try:
        params, cfg = trainer.load_checkpoint(path)
        manifest, _ = trainer.read_checkpoint_manifest(path)
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from None
    extra = manifest.get("extra", {})
    if "norm" not in extra:
        raise DataError(f"{path}: checkpoint lacks normalization statistics")
    return params, cfg, synthdata.NormStats.from_dict(extra["norm"]), extra


def _select(data, split: str):
    if split == "all":
        return list(data)
    train_ids, test_ids = downstream.split_by_disk(data, TEST_FRACTION, SPLIT_SEED)
    keep = set(train_ids if split == "train" else test_ids)
    return [w for w in data if w.disk_id in keep]


# -- commands ---------------------------------------------------------------


def cmd_gen_data(args) -> dict:
    try:
        gen = synthdata.GenConfig(
            n_disks=args.disks,
            K=args.features,
            L=args.length,
            failure_rate=args.failure_rate,
            n_degrading=min(2, max(args.features, 0)),
            seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if not 0 <= args.missing_ratio < 1:
        raise ConfigError("--missing-ratio must lie in [0, 1)")
    truth = synthdata.generate(gen)
    rng = np.random.default_rng([args.seed, 0x0B5])
    observed = synthdata.inject_missing(truth, args.missing_ratio, args.pattern, rng)
    out = Path(args.out)
    truth_path = out.with_name(out.stem + ".truth" + out.suffix)
    synthdata.write_ndjson(observed, out)
    synthdata.write_ndjson(truth, truth_path)
    n_missing = sum(int(w.obs_mask.size - w.obs_mask.sum()) for w in observed)
    n_entries = sum(w.obs_mask.size for w in observed)
    n_fail = sum(w.label for w in observed)
    print(
        f"wrote {len(observed)} windows ({gen.K}x{gen.L}, {n_fail} failing) to {out}; "
        f"missing {n_missing}/{n_entries} = {n_missing / max(n_entries, 1):.4f}; truth in {truth_path}"
    )
    return {"data": str(out), "truth": str(truth_path)}


def _train_config(args) -> DiffusionConfig:
    cfg = load_config(args.config) if args.config else DiffusionConfig()
    overrides = _parse_set(args.set)
    if args.mask_ratio is not None:
        overrides["mask_ratio"] = args.mask_ratio
    if args.seed is not None:
        overrides["seed"] = args.seed
    merged = cfg.to_dict()
    merged.update(overrides)
    return DiffusionConfig.from_mapping(merged)


def cmd_train(args) -> dict:
    cfg = _train_config(args)
    data = _read_data(args.data)
    windows = _select(data, args.split)
    stats = synthdata.fit_norm(windows)
    normed = [synthdata.apply_norm(w, stats) for w in windows]
    started = time.perf_counter()
    params, report = trainer.train(normed, cfg)
    elapsed = time.perf_counter() - started
    extra = {"norm": stats.to_dict(), "split": args.split, "split_seed": SPLIT_SEED, "data_sha256": _sha256(args.data)}
    trainer.save_checkpoint(params, cfg, args.out_checkpoint, extra=extra)
    out = {
        "command": "train",
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": {"train": cfg.seed, "split": SPLIT_SEED},
        "data_sha256": extra["data_sha256"],
        "split": args.split,
        "checkpoint_sha256": _sha256(args.out_checkpoint),
        **report.to_dict(),
    }
    out["wall_clock_s"] = elapsed
    report_path = args.report or str(args.out_checkpoint) + ".report.json"
    _write_json(report_path, out)
    losses = report.losses
    first = f"{losses[0]:.4f}" if losses else "-"
    last = f"{losses[-1]:.4f}" if losses else "-"
    print(
        f"trained on {report.n_windows} windows ({len(report.skipped)} skipped), {cfg.epochs} epochs, "
        f"loss {first} -> {last}, {elapsed:.1f}s; checkpoint {args.out_checkpoint}"
    )
    return out


def _eval_windows(data, stats, split, limit):
    windows = [synthdata.apply_norm(w, stats) for w in _select(data, split)]
    windows = [w for w in windows if w.n_observed >= 2]
    if limit:
        windows = windows[:limit]
    if not windows:
        raise DataError("no evaluable windows (need at least 2 observed entries)")
    return windows


def cmd_eval_impute(args) -> dict:
    methods = _parse_methods(args.methods)
    if args.mask_ratio not in (0.1, 0.5, 0.9):
        raise UsageError("--mask-ratio must be one of 0.1, 0.5, 0.9")
    data = _read_data(args.data)
    params, cfg, stats, _ = _load_model(args.checkpoint)
    cfg = cfg.with_overrides(n_replicates=args.replicates, fast_steps=args.fast_steps)
    windows = _eval_windows(data, stats, args.split, args.limit)
    if (params.K, params.L) != windows[0].shape:
        raise DataError(f"checkpoint expects {params.K}x{params.L} windows, data has {windows[0].shape}")
    rng = np.random.default_rng([args.eval_seed, EVAL_MASK_SALT])
    masks = [trainer.partition_mask(w, args.mask_ratio, rng) for w in windows]

    errors = {m: [] for m in methods}
    crps_parts = {m: [] for m in methods}
    for w, mp in zip(windows, masks):
        sel = mp.target_mask == 1
        truth = w.values[sel]
        hidden = w.replace(obs_mask=mp.cond_mask, values=np.where(mp.cond_mask == 1, w.values, np.nan))
        for m in methods:
            if m in DIFFUSION_METHODS:
                res = sampler.impute(params, w, cfg, DIFFUSION_METHODS[m], args.sample_seed, masks=mp, keep_samples=True)
                errors[m].append(np.abs(res.median[sel] - truth))
                samples = res.samples[:, sel]
                crps_parts[m].append(metrics.kernels.pinball_crps(samples, truth, metrics.CRPS_LEVELS))
            else:
                errors[m].append(np.abs(baselines.BASELINES[m](hidden)[sel] - truth))

    rows = []
    for m in methods:
        row = {"method": m, "mae": float(np.concatenate(errors[m]).mean()), "crps": None}
        if crps_parts[m]:
            row["crps"] = float(np.concatenate(crps_parts[m]).mean())
        rows.append(row)
    report = {
        "command": "eval-impute",
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": {"eval_mask": args.eval_seed, "sample": cfg.seed if args.sample_seed is None else args.sample_seed},
        "data_sha256": _sha256(args.data),
        "checkpoint_sha256": _sha256(args.checkpoint),
        "split": args.split,
        "mask_ratio": args.mask_ratio,
        "n_windows": len(windows),
        "n_targets": int(sum(int(mp.target_mask.sum()) for mp in masks)),
        "rows": rows,
    }
    _emit(report, rows, ["method", "mae", "crps"], args.out)
    return report


def cmd_eval_downstream(args) -> dict:
    methods = _parse_methods(args.methods)
    data = _read_data(args.data)
    params, cfg, stats, _ = _load_model(args.checkpoint)
    cfg = cfg.with_overrides(n_replicates=args.replicates, fast_steps=args.fast_steps)
    split = downstream.split_by_disk(data, TEST_FRACTION, args.split_seed)
    normed = [synthdata.apply_norm(w, stats) for w in data]
    rows = []
    for m in methods:
        if m in DIFFUSION_METHODS:
            mode = DIFFUSION_METHODS[m]
            table = {w.disk_id: sampler.impute(params, w, cfg, mode, args.sample_seed).median for w in normed}
        else:
            table = {w.disk_id: baselines.BASELINES[m](w) for w in normed}
        res = downstream.evaluate_pipeline(normed, table, split, seed=args.split_seed)
        s = res.scores
        rows.append({"method": m, "precision": s.precision, "recall": s.recall, "f1": s.f1,
                     "precision_undefined": s.precision_undefined, "recall_undefined": s.recall_undefined})
    report = {
        "command": "eval-downstream",
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": {"split": args.split_seed, "sample": cfg.seed if args.sample_seed is None else args.sample_seed},
        "data_sha256": _sha256(args.data),
        "checkpoint_sha256": _sha256(args.checkpoint),
        "n_train": len(split[0]),
        "n_test": len(split[1]),
        "rows": rows,
    }
    _emit(report, rows, ["method", "precision", "recall", "f1"], args.out)
    return report


def cmd_bench(args) -> list[dict]:
    steps_list = _parse_int_list(args.steps_list)
    data = _read_data(args.data)
    params, cfg, stats, _ = _load_model(args.checkpoint)
    windows = _eval_windows(data, stats, "all", args.windows)
    n = args.replicates
    rows = []

    def timed(run_cfg, mode, sched):
        # one untimed warm-up so first-call overheads do not land in the first row
        sampler.impute(params, windows[0], run_cfg, mode, sched=sched)
        evals, start = 0, time.perf_counter()
        for w in windows:
            evals += sampler.impute(params, w, run_cfg, mode, sched=sched).denoiser_evals
        elapsed = time.perf_counter() - start
        return 1000.0 * elapsed / (len(windows) * n), evals // len(windows)

    for T in steps_list:
        run_cfg = cfg.with_overrides(T=T, fast_steps=min(cfg.fast_steps, T), n_replicates=n)
        sched = make_schedule(T, cfg.beta_min, cfg.beta_max, cfg.schedule_kind)
        ms, evals = timed(run_cfg, "ancestral", sched)
        rows.append({"mode": "ancestral", "steps": T, "ms_per_sample": ms, "denoiser_evals": evals})
    run_cfg = cfg.with_overrides(fast_steps=args.fast_steps, n_replicates=n)
    ms, evals = timed(run_cfg, "fast", None)
    rows.append({"mode": "fast", "steps": args.fast_steps, "ms_per_sample": ms, "denoiser_evals": evals})

    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["mode", "steps", "ms_per_sample", "denoiser_evals"])
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "ms_per_sample": f"{r['ms_per_sample']:.4f}"})
    print(_table(rows, ["mode", "steps", "ms_per_sample", "denoiser_evals"]))
    return rows


def _emit(report, rows, columns, out):
    if out:
        if str(out).endswith(".csv"):
            with open(out, "w", newline="") as fh:
                writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
                writer.writeheader()
                writer.writerows(rows)
        else:
            _write_json(out, report)
    print(_table(rows, columns))


# -- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffimpute", description="Diffusion imputation for multivariate time-series windows.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic SMART-like dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--disks", type=int, default=500)
    g.add_argument("--features", type=int, default=8)
    g.add_argument("--length", type=int, default=72)
    g.add_argument("--failure-rate", type=float, default=0.15)
    g.add_argument("--missing-ratio", type=float, default=0.1)
    g.add_argument("--pattern", choices=["mcar", "burst"], default="mcar")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="fit the noise predictor and write a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help="flat JSON object of configuration fields")
    t.add_argument("--out-checkpoint", required=True)
    t.add_argument("--mask-ratio", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any configuration field")
    t.add_argument("--split", choices=["train", "all"], default="train", help="disks to train on")
    t.add_argument("--report", help="train report path (default: <checkpoint>.report.json)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval-impute", help="mask observed entries and score each imputer")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mask-ratio", type=float, default=0.1)
    e.add_argument("--methods", default=",".join(ALL_METHODS))
    e.add_argument("--replicates", type=int, default=100)
    e.add_argument("--fast-steps", type=int, help="Diffusion+ steps M (default: checkpoint config)")
    e.add_argument("--out")
    e.add_argument("--split", choices=["test", "all"], default="test")
    e.add_argument("--limit", type=int, default=0, help="evaluate at most this many windows (0 = all)")
    e.add_argument("--eval-seed", type=int, default=1)
    e.add_argument("--sample-seed", type=int, help="base seed for replicate noise (default: config seed)")
    e.set_defaults(func=cmd_eval_impute)

    d = sub.add_parser("eval-downstream", help="impute missing entries and score a failure classifier")
    d.add_argument("--data", required=True)
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--methods", default=",".join(ALL_METHODS))
    d.add_argument("--out")
    d.add_argument("--replicates", type=int, default=100)
    d.add_argument("--fast-steps", type=int, help="Diffusion+ steps M (default: checkpoint config)")
    d.add_argument("--split-seed", type=int, default=0)
    d.add_argument("--sample-seed", type=int)
    d.set_defaults(func=cmd_eval_downstream)

    b = sub.add_parser("bench", help="time ancestral and fast sampling per imputed sample")
    b.add_argument("--data", required=True)
    b.add_argument("--checkpoint", required=True)
    b.add_argument("--steps-list", default="10,20,50,100,200")
    b.add_argument("--fast-steps", type=int, default=10)
    b.add_argument("--out", default="bench.csv")
    b.add_argument("--windows", type=int, default=5)
    b.add_argument("--replicates", type=int, default=20)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
