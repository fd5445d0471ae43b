"""Acceptance checks, one per criterion, each printing a PASS/FAIL line.

Run under pytest, or directly with ``python tests/test_acceptance.py`` for
just the summary (exit status 2 when any criterion fails).
"""

from __future__ import annotations

import sys
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from precoderlab import baselines, channels, gnn_digital, gnn_hybrid, training
from precoderlab.cli import main as cli_main
from precoderlab.gnn_digital import GnnArch
from precoderlab.gnn_hybrid import HybridArch
from precoderlab.metrics import PermutationSpec, SystemParams, apply_permutation, objective, sinr_digital
from precoderlab.tensor import check_gradient, hermitian_inner

SYS = SystemParams.from_snr_db(10.0)
fixed = channels.SizeDistribution.fixed
RESULTS: dict[int, bool] = {}

# Pinned thresholds.
EQUIV_TOL = 1e-9
GRAD_TOL = 1e-5
RHO_TOL = 1e-6
IDENTITY_TOL = 1e-12
MRT_TOL = 1e-6
DIGITAL_RATIO = 0.90
LOGSE_RATIO = 0.90
FAIRNESS_FRACTION = 0.70
HYBRID_RATIO = 0.85
MODULUS_TOL = 1e-12
POWER_TOL = 1e-9
GEN_USERS_RATIO = 0.85
GEN_ANTENNAS_RATIO = 0.80


_capture = {}


@pytest.fixture(autouse=True)
def _uncaptured(capsys):
    _capture["capsys"] = capsys
    yield
    _capture.clear()


def report(n: int, title: str, ok: bool, detail: str) -> None:
    RESULTS[n] = ok
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {title}: {detail}"
    with _capture["capsys"].disabled():
        print("\n" + line, flush=True)
    assert ok, f"criterion {n} ({title}) failed: {detail}"


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def fd_complex(f, X, h=1e-6):
    g = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        for unit in (1.0, 1j):
            E = np.zeros_like(X)
            E[idx] = unit * h
            g[idx] += unit * (f(X + E) - f(X - E)) / (2 * h)
    return g


# ---------------------------------------------------------------------------
# shared desk-scale setup


class Desk:
    """Data sets and trained models reused by several criteria."""

    def __init__(self):
        self.train = channels.generate("rayleigh", fixed(4), fixed(8), 500, 1)
        self.test = channels.generate("rayleigh", fixed(4), fixed(8), 200, 2)
        self._cache = {}

    def fit(self, task):
        if task not in self._cache:
            t = time.perf_counter()
            if task == "hybrid-se":
                model = training.Model(task, "hybrid", HybridArch(2, 2, 16, 3))
                data = channels.generate("sv", fixed(3), fixed(8), 1000, 1)
            else:
                model = training.Model(task, "gradient", GnnArch(4, 32))
                data = self.train
            res = training.train(model, data, SYS, training.TrainConfig())
            self._cache[task] = (model, res.params, time.perf_counter() - t)
        return self._cache[task]


@pytest.fixture(scope="module")
def desk():
    return Desk()


# ---------------------------------------------------------------------------
# criteria


def test_equivariance():
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    arch = GnnArch(3, 8)
    worst_d = 0.0
    for trial in range(100):
        k, n = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        params = gnn_digital.init_params(arch, trial).to_torch()
        H = crandn(rng, n, k)
        spec = PermutationSpec.random(rng, k, n)
        V = gnn_digital.forward_digital(params, torch.as_tensor(H), arch, SYS)[0].numpy()
        Vp = gnn_digital.forward_digital(params, torch.as_tensor(apply_permutation(H, spec, "channel")), arch, SYS)[0].numpy()
        worst_d = max(worst_d, np.abs(Vp - apply_permutation(V, spec, "digital-precoder")).max())

    harch = HybridArch(2, 2, 4, 1)
    worst_h = 0.0
    for trial in range(100):
        k, n = int(rng.integers(1, 5)), int(rng.integers(3, 9))
        ns = int(rng.integers(1, 4))
        arch_t = HybridArch(harch.blocks, harch.layers, harch.width, ns)
        params = gnn_hybrid.init_params(arch_t, trial).to_torch()
        H = crandn(rng, n, k)
        WA0 = np.exp(2j * np.pi * rng.random((n, ns)))
        WD0 = crandn(rng, ns, k)
        spec = PermutationSpec.random(rng, k, n, ns)

        def run(H, WA, WD):
            out = gnn_hybrid.forward_hybrid_from(
                params, *(torch.as_tensor(x)[None] for x in (H, WA, WD)), arch_t, SYS
            )
            return [o[0].numpy() for o in out]

        WA, WD = run(H, WA0, WD0)
        WAp, WDp = run(
            apply_permutation(H, spec, "channel"),
            apply_permutation(WA0, spec, "analog-precoder"),
            apply_permutation(WD0, spec, "digital-part-of-hybrid"),
        )
        worst_h = max(
            worst_h,
            np.abs(WAp - apply_permutation(WA, spec, "analog-precoder")).max(),
            np.abs(WDp - apply_permutation(WD, spec, "digital-part-of-hybrid")).max(),
        )
    dt = time.perf_counter() - t
    ok = worst_d <= EQUIV_TOL and worst_h <= EQUIV_TOL and dt < 60
    report(1, "equivariance", ok, f"digital max-abs {worst_d:.2e}, hybrid max-abs {worst_h:.2e} (tol {EQUIV_TOL:g}), {dt:.1f}s")


def test_gradient_oracle():
    t = time.perf_counter()
    cases = [
        ("digital-se", "gradient", GnnArch(2, 4), "rayleigh"),
        ("digital-logse", "gradient", GnnArch(2, 4), "rayleigh"),
        ("hybrid-se", "hybrid", HybridArch(1, 2, 2, 2), "sv"),
    ]
    parts, ok = [], True
    for task, kind, arch, chan in cases:
        model = training.Model(task, kind, arch)
        worst, fails = 0.0, 0
        for seed in range(20):
            H = torch.as_tensor(channels.generate(chan, fixed(2), fixed(3), 1, seed).stacked())
            rep = check_gradient(lambda p: training.loss_eval(model, p, H, SYS), model.init_params(seed), 1e-5)
            worst = max(worst, rep.max_rel_error)
            fails += rep.max_rel_error > GRAD_TOL
        ok &= fails == 0
        parts.append(f"{task} worst {worst:.1e} ({fails}/20 over)")
    dt = time.perf_counter() - t
    ok &= dt < 300
    report(2, "gradient oracle", ok, "; ".join(parts) + f", {dt:.1f}s")


def test_precoder_gradient_formulas():
    rng = np.random.default_rng(3)

    def rel(a, n):
        return float((np.abs(a - n) / np.maximum(1e-12, np.maximum(np.abs(a), np.abs(n)))).max())

    worst = {"digital": 0.0, "hybrid-digital": 0.0, "hybrid-analog": 0.0}
    for _ in range(50):
        k = int(rng.integers(1, 4))
        n = int(rng.integers(k, 5))
        ns = int(rng.integers(1, n + 1))
        kind = "log-se" if rng.random() < 0.5 else "sum-se"
        H, V = crandn(rng, n, k), crandn(rng, n, k)
        f = lambda X: float(objective(kind, sinr_digital(H, X, 1.0)))  # noqa: E731
        worst["digital"] = max(worst["digital"], rel(baselines.analytic_grad_digital(H, V, 1.0, kind), fd_complex(f, V)))
        WA, WD = crandn(rng, n, ns), crandn(rng, ns, k)
        fd = lambda X: float(objective("sum-se", sinr_digital(H, WA @ X, 1.0)))  # noqa: E731
        fa = lambda X: float(objective("sum-se", sinr_digital(H, X @ WD, 1.0)))  # noqa: E731
        worst["hybrid-digital"] = max(
            worst["hybrid-digital"], rel(baselines.analytic_grad_hybrid_digital(H, WA, WD, 1.0), fd_complex(fd, WD))
        )
        worst["hybrid-analog"] = max(
            worst["hybrid-analog"], rel(baselines.analytic_grad_hybrid_analog(H, WA, WD, 1.0), fd_complex(fa, WA))
        )
    ok = max(worst.values()) <= RHO_TOL
    report(3, "precoder gradient formulas", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" (tol {RHO_TOL:g})")


def test_effective_channel_identity():
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        k, n = int(rng.integers(1, 5)), int(rng.integers(1, 9))
        ns = int(rng.integers(1, n + 1))
        H, WA, WD = crandn(rng, n, k), np.exp(2j * np.pi * rng.random((n, ns))), crandn(rng, ns, k)
        Hbar = gnn_hybrid.effective_analog_channel(H, WD)
        x = gnn_hybrid.vec(WA)
        direct = H.conj().T @ WA @ WD
        for kk in range(k):
            for i in range(k):
                lhs = hermitian_inner(Hbar[:, kk * k + i], x)
                worst = max(worst, abs(lhs - direct[kk, i]))
    report(4, "effective-channel identity", worst <= IDENTITY_TOL, f"max error {worst:.1e} over 1000 instances")


def test_wmmse_validity(desk):
    monotone = all(baselines.wmmse(H, SYS).monotone for H in desk.test.samples)

    mrt_err = 0.0
    for H in channels.generate("rayleigh", fixed(1), fixed(8), 20, 5).samples:
        V, M = baselines.wmmse(H, SYS).V, baselines.mrt(H, SYS.power_budget)
        phase = np.vdot(V, M) / abs(np.vdot(V, M))
        mrt_err = max(mrt_err, np.abs(V * phase - M).max())

    rng = np.random.default_rng(6)
    wins, margin = 0, np.inf
    for H in channels.generate("rayleigh", fixed(2), fixed(2), 20, 7).samples:
        R = crandn(rng, 100_000, 2, 2)
        R *= np.sqrt(SYS.power_budget / np.sum(np.abs(R) ** 2, axis=(1, 2), keepdims=True))
        best = float(np.max(objective("sum-se", sinr_digital(np.broadcast_to(H, R.shape).copy(), R, 1.0))))
        w = baselines.wmmse(H, SYS).objective
        wins += w >= best
        margin = min(margin, w - best)
    ok = monotone and mrt_err <= MRT_TOL and wins == 20
    report(
        5,
        "WMMSE validity",
        ok,
        f"monotone on {len(desk.test)} channels: {monotone}; K=1 vs MRT {mrt_err:.1e}; "
        f"beats best of 1e5 random on {wins}/20 (min margin {margin:.3f})",
    )


def test_digital_sample_efficiency(desk):
    model, params, dt = desk.fit("digital-se")
    r = training.evaluate_ratio(model, params, desk.test, SYS, baseline="wmmse")
    ok = r.mean_ratio >= DIGITAL_RATIO and dt <= 1800
    report(6, "digital vs WMMSE", ok, f"ratio {r.mean_ratio:.4f} (need {DIGITAL_RATIO}), trained in {dt:.0f}s")


def test_logse_fairness(desk):
    ml, pl, dt = desk.fit("digital-logse")
    ms, ps, _ = desk.fit("digital-se")
    r = training.evaluate_ratio(ml, pl, desk.test, SYS, baseline="pgd-logse")
    ul = training.network_user_se(ml, pl, desk.test, SYS)
    us = training.network_user_se(ms, ps, desk.test, SYS)
    frac = float(np.mean([a.min() > b.min() for a, b in zip(ul, us)]))
    ok = r.mean_ratio >= LOGSE_RATIO and frac >= FAIRNESS_FRACTION
    report(
        7,
        "log-SE variant",
        ok,
        f"ratio vs pgd-logse {r.mean_ratio:.4f} (need {LOGSE_RATIO}); min-user SE above sum-SE model on "
        f"{frac:.2f} of samples (need {FAIRNESS_FRACTION}), trained in {dt:.0f}s",
    )


def test_hybrid_training(desk):
    model, params, dt = desk.fit("hybrid-se")
    test = channels.generate("sv", fixed(3), fixed(8), 200, 2)
    r = training.evaluate_ratio(model, params, test, SYS, baseline="pgd-hybrid")
    with torch.no_grad():
        WA, WD = model.precoders(params.to_torch(), torch.as_tensor(test.stacked()), SYS)
    mod_err = float((WA.abs() - 1).abs().max())
    pow_err = float(((WA @ WD).abs().pow(2).sum((1, 2)) - SYS.power_budget).abs().max() / SYS.power_budget)
    ok = r.mean_ratio >= HYBRID_RATIO and mod_err <= MODULUS_TOL and pow_err <= POWER_TOL and dt <= 3600
    report(
        8,
        "hybrid vs pgd-hybrid",
        ok,
        f"ratio {r.mean_ratio:.4f} (need {HYBRID_RATIO}); unit-modulus error {mod_err:.1e}, "
        f"power error {pow_err:.1e}, trained in {dt:.0f}s",
    )


def test_generalization(desk):
    model, params, _ = desk.fit("digital-se")
    ratios = {}
    for k, n in [(2, 8), (3, 8), (4, 6), (4, 10), (4, 12)]:
        test = channels.generate("rayleigh", fixed(k), fixed(n), 200, 2)
        ratios[(k, n)] = training.evaluate_ratio(model, params, test, SYS, baseline="wmmse").mean_ratio
    users_ok = all(ratios[(k, 8)] >= GEN_USERS_RATIO for k in (2, 3))
    ants_ok = all(ratios[(4, n)] >= GEN_ANTENNAS_RATIO for n in (6, 10, 12))
    detail = ", ".join(f"K={k} N={n}: {v:.3f}" for (k, n), v in ratios.items())
    report(9, "size generalization", users_ok and ants_ok, detail)


def _pipeline(out: Path) -> list[Path]:
    def run(*args):
        assert cli_main(["--out", str(out), "--seed", "3", *args]) == 0

    run("gen-data", "--k", "2", "--n", "4", "--count", "60", "--test-count", "20")
    run("train", "--layers", "2", "--width", "8", "--epochs", "5", "--batch-size", "10")
    run("eval")
    run("sweep", "--axis", "users", "--values", "1-3", "--n", "4", "--count", "20")
    run("baseline", "--ns", "2")
    run("gradcheck", "--task", "hybrid-se")
    run("gen-data", "--model", "sv", "--k", "2", "--n", "4", "--count", "30", "--test-count", "10", "--prefix", "sv_")
    run("train", "--task", "hybrid-se", "--data", str(out / "sv_train.bin"), "--blocks", "1", "--width", "4",
        "--epochs", "3", "--batch-size", "10", "--ckpt-name", "hybrid.ckpt")
    run("eval", "--ckpt", str(out / "hybrid.ckpt"), "--data", str(out / "sv_test.bin"), "--name", "hybrid_eval")
    return sorted(p for p in out.iterdir() if p.suffix in (".csv", ".ckpt", ".bin", ".json", ".png"))


def test_determinism(tmp_path):
    a, b = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    names = [p.name for p in a]
    same = names == [p.name for p in b] and all(x.read_bytes() == y.read_bytes() for x, y in zip(a, b))
    n_csv = sum(p.suffix == ".csv" for p in a)
    n_ckpt = sum(p.suffix == ".ckpt" for p in a)
    report(10, "determinism", same, f"{len(a)} files ({n_csv} CSV, {n_ckpt} checkpoints) bitwise identical across reruns: {same}")


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.__stdout__.write(f"{sum(RESULTS.values())}/{len(RESULTS)} criteria passed\n")
    sys.exit(0 if code == 0 else 2)
