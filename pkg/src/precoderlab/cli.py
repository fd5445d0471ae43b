"""Command-line entry point: ``precoderlab <subcommand> [flags]``.

Exit codes: 0 success, 2 validation failure, 3 I/O error, 4 configuration
error.  Every subcommand is deterministic under fixed flags and seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import torch

from . import baselines, channels, checkpoint, plotting, training
from .channels import SizeDistribution, SVConfig
from .gnn_digital import GnnArch
from .gnn_hybrid import HybridArch
from .metrics import SystemParams
from .tensor import check_gradient

log = logging.getLogger("precoderlab")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_CONFIG = 0, 2, 3, 4
GRAD_TOL = 1e-5
EVAL_HEADER = ["K", "N", "N_s", "snr_db", "network_objective", "baseline_objective", "ratio"]
SWEEP_HEADER = EVAL_HEADER + ["samples", "skipped"]
BASELINE_HEADER = ["sample", "K", "N", "wmmse", "zf", "pgd_digital", "pgd_hybrid", "wmmse_monotone"]
TEST_STREAM = 1


class ConfigError(Exception):
    pass


class IOFailure(Exception):
    pass


class ValidationFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else f"{x:.17g}"


def write_csv(path: Path, header, rows) -> Path:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([fmt(v) for v in row])
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc
    return path


def load_data(path) -> channels.ChannelBatch:
    try:
        return channels.read_dataset(path)
    except (OSError, ValueError, KeyError) as exc:
        raise IOFailure(f"cannot read dataset {path}: {exc}") from exc


def load_ckpt(path) -> checkpoint.Checkpoint:
    try:
        return checkpoint.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise IOFailure(f"cannot read checkpoint {path}: {exc}") from exc


def parse_values(text: str) -> list[int]:
    """``"1,2,5"`` or ``"2-6"`` (inclusive) or a mix of both."""
    out = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = (int(v) for v in part.split("-"))
                out.extend(range(lo, hi + 1))
            elif part:
                out.append(int(part))
    except ValueError as exc:
        raise ConfigError(f"bad value list {text!r}") from exc
    if not out or min(out) < 1:
        raise ConfigError(f"sweep values must be >= 1, got {text!r}")
    return out


def size_dist(fixed, dist, name) -> SizeDistribution:
    if dist:
        try:
            return SizeDistribution.parse(dist)
        except ValueError as exc:
            raise ConfigError(f"--{name}-dist: {exc}") from exc
    if fixed is None:
        raise ConfigError(f"give --{name} or --{name}-dist")
    if fixed < 1:
        raise ConfigError(f"--{name} must be >= 1")
    return SizeDistribution.fixed(fixed)


def sv_config(args) -> SVConfig:
    try:
        return SVConfig(args.n_clusters, args.n_rays)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def fixed_size(v: int) -> SizeDistribution:
    try:
        return SizeDistribution.fixed(v)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def generate(*args, **kwargs) -> channels.ChannelBatch:
    try:
        return channels.generate(*args, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def check_dims(model: training.Model, batch: channels.ChannelBatch, baseline: str | None = None) -> None:
    for i, (k, n) in enumerate(batch.sizes):
        if model.kind == "hybrid" and n < model.arch.ns:
            raise ConfigError(f"sample {i}: N={n} is smaller than N_s={model.arch.ns}")
        if baseline == "zf" and k > n:
            raise ConfigError(f"sample {i}: zero-forcing needs K <= N, got K={k}, N={n}")


def ns_of(model: training.Model, n: int) -> int:
    return model.arch.ns if model.kind == "hybrid" else n


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    out = args.out
    k_dist = size_dist(args.k, args.k_dist, "k")
    n_dist = size_dist(args.n, args.n_dist, "n")
    sv = sv_config(args)
    if args.count < 1 or args.test_count < 0:
        raise ConfigError("--count must be >= 1 and --test-count >= 0")
    files = {}
    for name, count, stream in (("train", args.count, 0), ("test", args.test_count, TEST_STREAM)):
        if count == 0:
            continue
        batch = generate(args.model, k_dist, n_dist, count, args.seed, stream=stream, sv=sv)
        path = out / f"{args.prefix}{name}.bin"
        try:
            channels.write_dataset(batch, path)
        except OSError as exc:
            raise IOFailure(f"cannot write {path}: {exc}") from exc
        files[name] = {"path": path.name, "count": count, "stream": stream}
    manifest = {
        "model": args.model,
        "seed": args.seed,
        "k_dist": k_dist.describe(),
        "n_dist": n_dist.describe(),
        "sv": {"n_clusters": sv.n_clusters, "n_rays": sv.n_rays},
        "files": files,
    }
    try:
        (out / f"{args.prefix}manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise IOFailure(str(exc)) from exc
    print(f"wrote {', '.join(f['path'] for f in files.values())} to {out}")
    return EXIT_OK


def build_model(args) -> training.Model:
    if args.task == "hybrid-se":
        arch = HybridArch(args.blocks, args.layers or 2, args.width or 16, args.ns)
        return training.Model(args.task, "hybrid", arch)
    return training.Model(args.task, args.kind, GnnArch(args.layers or 4, args.width or 32))


def cmd_train(args) -> int:
    data = load_data(args.data or args.out / "train.bin")
    if args.resume:
        ck = load_ckpt(args.resume)
        model, params, adam, start = ck.model, ck.params, ck.adam, ck.epoch
        snr_db, seed = ck.snr_db, ck.seed
    else:
        try:
            model = build_model(args)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        params, adam, start, snr_db, seed = None, None, 0, args.snr_db, args.seed
    check_dims(model, data)
    try:
        config = training.TrainConfig(
            batch_size=args.batch_size,
            lr=args.lr,
            epochs=args.epochs,
            seed=seed,
            val_fraction=args.val_fraction,
            val_every=args.val_every,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sys_params = SystemParams.from_snr_db(snr_db)
    res = training.train(model, data, sys_params, config, params=params, adam=adam, start_epoch=start)

    ck = checkpoint.Checkpoint(
        model,
        res.params,
        res.adam,
        epoch=res.epoch,
        seed=seed,
        snr_db=snr_db,
        best_epoch=res.best_epoch,
        best_val_ratio=res.best_val_ratio,
        config={
            "batch_size": config.batch_size,
            "lr": config.lr,
            "val_fraction": config.val_fraction,
            "val_every": config.val_every,
            "data": {"model": data.model, "seed": data.seed, "stream": data.stream, "count": len(data)},
        },
    )
    ck_path = args.out / args.ckpt_name
    try:
        checkpoint.save(ck, ck_path)
    except OSError as exc:
        raise IOFailure(f"cannot write {ck_path}: {exc}") from exc
    h = res.history
    write_csv(args.out / "history.csv", ["epoch", "loss", "val_ratio"], h.rows())
    if not args.no_figures:
        plotting.history_figure(h.epochs, h.loss, h.val_ratio, args.out / "history.png")
    print(f"epoch {res.epoch}: best validation ratio {res.best_val_ratio:.4f} at epoch {res.best_epoch}; wrote {ck_path}")
    return EXIT_OK


def _eval_rows(model, params, batch, sys_params, snr_db, baseline):
    check_dims(model, batch, baseline)
    r = training.evaluate_ratio(model, params, batch, sys_params, baseline=baseline)
    return r, [
        (k, n, ns_of(model, n), snr_db, net, base, ratio)
        for (k, n), net, base, ratio in zip(batch.sizes, r.network, r.baseline, r.ratios)
    ]


def cmd_eval(args) -> int:
    ck = load_ckpt(args.ckpt or args.out / "model.ckpt")
    batch = load_data(args.data or args.out / "test.bin")
    snr_db = ck.snr_db if args.snr_db is None else args.snr_db
    baseline = args.baseline or training.DEFAULT_BASELINE[ck.model.task]
    r, rows = _eval_rows(ck.model, ck.params, batch, SystemParams.from_snr_db(snr_db), snr_db, baseline)
    stem = args.name
    write_csv(args.out / f"{stem}.csv", EVAL_HEADER, rows)
    if not args.no_figures:
        plotting.ratio_histogram(r.ratios[r.valid], args.out / f"{stem}.png", baseline)
    print(f"mean ratio vs {baseline}: {r.mean_ratio:.6f} over {int(r.valid.sum())} samples ({r.skipped} skipped)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    ck = load_ckpt(args.ckpt or args.out / "model.ckpt")
    model = ck.model
    values = parse_values(args.values)
    snr_db = ck.snr_db if args.snr_db is None else args.snr_db
    sys_params = SystemParams.from_snr_db(snr_db)
    baseline = args.baseline or training.DEFAULT_BASELINE[model.task]
    fixed = args.n if args.axis == "users" else args.k
    if fixed is None:
        raise ConfigError(f"--{'n' if args.axis == 'users' else 'k'} is required for a {args.axis} sweep")
    kind = args.channel or ("sv" if model.kind == "hybrid" else "rayleigh")
    sv = sv_config(args)
    rows, means = [], []
    for v in values:
        k, n = (v, fixed) if args.axis == "users" else (fixed, v)
        batch = generate(kind, fixed_size(k), fixed_size(n), args.count, args.seed, stream=TEST_STREAM, sv=sv)
        r, _ = _eval_rows(model, ck.params, batch, sys_params, snr_db, baseline)
        ok = r.valid
        rows.append(
            (k, n, ns_of(model, n), snr_db, r.network[ok].mean(), r.baseline[ok].mean(), r.mean_ratio, int(ok.sum()), r.skipped)
        )
        means.append(r.mean_ratio)
        log.info("%s=%d ratio %.4f", args.axis, v, r.mean_ratio)
    stem = f"sweep_{args.axis}"
    write_csv(args.out / f"{stem}.csv", SWEEP_HEADER, rows)
    if not args.no_figures:
        plotting.sweep_figure(values, means, args.axis, args.out / f"{stem}.png", args.trained_at)
    for v, m in zip(values, means):
        print(f"{args.axis}={v}: ratio {m:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.k > 3 or args.n > 4 or args.width > 4 or args.k < 1 or args.n < 1 or args.width < 1:
        raise ConfigError("gradcheck needs K <= 3, N <= 4 and widths <= 4")
    if args.task == "hybrid-se" and not 1 <= args.ns <= args.n:
        raise ConfigError("gradcheck needs 1 <= N_s <= N")
    if args.task == "hybrid-se":
        model = training.Model(args.task, "hybrid", HybridArch(args.blocks, args.layers, args.width, args.ns))
    else:
        model = training.Model(args.task, args.kind, GnnArch(args.layers, args.width))
    kind = args.channel or ("sv" if model.kind == "hybrid" else "rayleigh")
    batch = generate(kind, fixed_size(args.k), fixed_size(args.n), args.samples, args.seed)
    H = torch.as_tensor(batch.stacked())
    sys_params = SystemParams.from_snr_db(args.snr_db)
    report = check_gradient(lambda p: training.loss_eval(model, p, H, sys_params), model.init_params(args.seed), args.h)
    if args.corrupt:
        # Negative control: perturb one analytic component and expect a failure.
        report.analytic[0] = report.analytic[0] * 1.01 + 1e-6
    worst = report.max_rel_error
    passed = worst <= GRAD_TOL
    out = {
        "task": args.task,
        "K": args.k,
        "N": args.n,
        "N_s": args.ns if model.kind == "hybrid" else args.n,
        "seed": args.seed,
        "h": args.h,
        "threshold": GRAD_TOL,
        "corrupted": bool(args.corrupt),
        "passed": passed,
        **report.to_dict(),
    }
    path = args.out / "gradcheck.json"
    try:
        path.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IOFailure(str(exc)) from exc
    print(f"{args.task}: max relative error {worst:.3e} over {len(report.names)} coordinates ({'pass' if passed else 'FAIL'})")
    if not passed:
        raise ValidationFailure(f"gradient check failed: {worst:.3e} > {GRAD_TOL:g}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    batch = load_data(args.data or args.out / "test.bin")
    sys_params = SystemParams.from_snr_db(args.snr_db)
    rows = []
    wm_all, zf_all = [], []
    for i, H in enumerate(batch.samples):
        n, k = H.shape

        def run(fn):
            try:
                return fn()
            except (baselines.SolverError, np.linalg.LinAlgError, ValueError) as exc:
                log.warning("sample %d: %s", i, exc)
                return float("nan")

        wm = baselines.wmmse(H, sys_params)
        se = lambda V: float(baselines.per_user_se(H, V, sys_params.noise_power).sum())  # noqa: E731
        zf = run(lambda: se(baselines.zero_forcing(H, sys_params.power_budget)))
        pgd = run(lambda: baselines.pgd_digital(H, sys_params).objective)
        hyb = float("nan")
        if args.ns is not None and args.ns <= n:
            hyb = run(lambda: baselines.pgd_hybrid(H, args.ns, sys_params).objective)
        rows.append((i, k, n, wm.objective, zf, pgd, hyb, wm.monotone))
        wm_all.append(wm.objective)
        zf_all.append(zf)
    write_csv(args.out / "baseline.csv", BASELINE_HEADER, rows)
    if not args.no_figures:
        plotting.ratio_histogram(np.asarray(zf_all) / np.asarray(wm_all), args.out / "baseline.png", "wmmse (zf / wmmse)")
    print(f"wrote {len(rows)} rows; wmmse mean {np.mean(wm_all):.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # Subcommand copies must not overwrite values given before the subcommand.
        def d(v):
            return argparse.SUPPRESS if suppress else v

        g = argparse.ArgumentParser(add_help=False)
        g.add_argument("--seed", type=int, default=d(0), help="master seed (default 0)")
        g.add_argument("--out", type=Path, default=d(Path(".")), help="output directory (default .)")
        g.add_argument("--threads", type=int, default=d(1), help="torch CPU threads (default 1)")
        g.add_argument("--no-figures", action="store_true", default=d(False), help="skip PNG figures")
        g.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return g

    common = global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="precoderlab", description=__doc__.splitlines()[0], parents=[global_flags(False)])
    sub = p.add_subparsers(dest="command", required=True)

    def channel_flags(sp):
        sp.add_argument("--n-clusters", type=int, default=4)
        sp.add_argument("--n-rays", type=int, default=5)

    g = sub.add_parser("gen-data", parents=[common], help="generate train/test channel files")
    g.add_argument("--model", choices=["rayleigh", "sv"], default="rayleigh")
    g.add_argument("--k", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--k-dist", help="e.g. exp:mean=2,max=8")
    g.add_argument("--n-dist")
    g.add_argument("--count", type=int, default=1000, help="training samples")
    g.add_argument("--test-count", type=int, default=200, help="test samples (0 for none)")
    g.add_argument("--prefix", default="", help="file name prefix")
    channel_flags(g)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train a network, write checkpoint and history")
    t.add_argument("--task", choices=training.TASKS, default="digital-se")
    t.add_argument("--kind", choices=["gradient", "vanilla"], default="gradient")
    t.add_argument("--data", type=Path, help="training file (default OUT/train.bin)")
    t.add_argument("--snr-db", type=float, default=10.0)
    t.add_argument("--layers", type=int, help="layers per network or sub-network (4 digital, 2 hybrid)")
    t.add_argument("--width", type=int, help="hidden channels (32 digital, 16 hybrid)")
    t.add_argument("--blocks", type=int, default=2, help="hybrid blocks")
    t.add_argument("--ns", type=int, default=2, help="RF chains for hybrid-se")
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--batch-size", type=int, default=training.TrainConfig.batch_size)
    t.add_argument("--lr", type=float, default=training.TrainConfig.lr)
    t.add_argument("--val-fraction", type=float, default=0.1)
    t.add_argument("--val-every", type=int, default=5)
    t.add_argument("--resume", type=Path, help="continue from this checkpoint")
    t.add_argument("--ckpt-name", default="model.ckpt")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="per-sample ratios against a baseline")
    e.add_argument("--ckpt", type=Path)
    e.add_argument("--data", type=Path)
    e.add_argument("--baseline", choices=training.BASELINES)
    e.add_argument("--snr-db", type=float)
    e.add_argument("--name", default="eval", help="output stem (default eval)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", parents=[common], help="evaluate over a range of K or N without retraining")
    s.add_argument("--ckpt", type=Path)
    s.add_argument("--axis", choices=["users", "antennas"], required=True)
    s.add_argument("--values", required=True, help="e.g. 1-6 or 6,8,10,12")
    s.add_argument("--k", type=int, help="fixed K for an antennas sweep")
    s.add_argument("--n", type=int, help="fixed N for a users sweep")
    s.add_argument("--count", type=int, default=200)
    s.add_argument("--channel", choices=["rayleigh", "sv"])
    s.add_argument("--baseline", choices=training.BASELINES)
    s.add_argument("--snr-db", type=float)
    s.add_argument("--trained-at", type=int, help="mark the training size on the figure")
    channel_flags(s)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradient report")
    c.add_argument("--task", choices=training.TASKS, default="digital-se")
    c.add_argument("--kind", choices=["gradient", "vanilla"], default="gradient")
    c.add_argument("--k", type=int, default=2)
    c.add_argument("--n", type=int, default=3)
    c.add_argument("--ns", type=int, default=2)
    c.add_argument("--layers", type=int, default=2)
    c.add_argument("--width", type=int, default=2)
    c.add_argument("--blocks", type=int, default=1)
    c.add_argument("--samples", type=int, default=1)
    c.add_argument("--channel", choices=["rayleigh", "sv"])
    c.add_argument("--snr-db", type=float, default=10.0)
    c.add_argument("--h", type=float, default=1e-5)
    c.add_argument("--corrupt", action="store_true", help="negative control: perturb the analytic gradient")
    c.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("baseline", parents=[common], help="per-sample numerical baseline objectives")
    b.add_argument("--data", type=Path)
    b.add_argument("--snr-db", type=float, default=10.0)
    b.add_argument("--ns", type=int, help="RF chains for the pgd_hybrid column")
    b.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    torch.set_num_threads(args.threads)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create {args.out}: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except training.TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
