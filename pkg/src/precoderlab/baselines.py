"""Numerical reference precoders: WMMSE, projected gradient ascent, zero-forcing.

Gradients here are with respect to the real and imaginary parts of the
precoder, packed as ``dRe + 1j * dIm``.  That is twice the conjugate
(Wirtinger) derivative, so each column is ``2 * sum_i rho[k, i] * h_i``
with the rho weights written out in :func:`rho_digital`.

Everything in this module works on single N x K numpy matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .gnn_hybrid import analog_init, digital_init, effective_analog_channel, effective_digital_channel, unvec, vec
from .metrics import (
    LN2,
    SystemParams,
    normalize_hybrid,
    normalize_power,
    objective,
    se_per_user,
    sinr_digital,
    sinr_hybrid,
)


class SolverError(RuntimeError):
    pass


@dataclass
class SolverResult:
    """Solver output with its per-iteration objective trace."""

    V: np.ndarray | None = None
    WA: np.ndarray | None = None
    WD: np.ndarray | None = None
    objective: float = float("nan")
    trace: list[float] = field(default_factory=list)
    converged: bool = False

    @property
    def monotone(self) -> bool:
        t = np.asarray(self.trace)
        return bool(np.all(np.diff(t) >= -1e-8)) if t.size > 1 else True

    @property
    def precoder(self) -> np.ndarray:
        return self.V if self.V is not None else self.WA @ self.WD


def lambda_weights(kind: str, gamma: np.ndarray) -> np.ndarray:
    """d(objective)/d(gamma_i) for sum-SE (log2) or log-SE."""
    gamma = np.asarray(gamma, dtype=np.float64)
    base = 1.0 / ((1.0 + gamma) * LN2)
    if kind in ("sum-se", "hybrid-se"):
        return base
    if kind == "log-se":
        return base / np.log2(1.0 + gamma)
    raise ValueError(f"unknown objective {kind!r}")


def _rho(G: np.ndarray, noise_power: float, lam: np.ndarray) -> np.ndarray:
    """rho[k, i] from the gram matrix G[i, j] = h_i^H v_j."""
    P2 = np.abs(G) ** 2
    own = np.diag(P2)
    denom = P2.sum(1) - own + noise_power  # interference plus noise per user i
    # i != k: -lam_i |h_i^H v_i|^2 (h_i^H v_k) / denom_i^2, stored at [k, i]
    rho = (-lam * own / denom**2)[None, :] * G.T
    diag = lam * np.diag(G) / denom
    rho[np.diag_indices_from(rho)] = diag
    return rho


def rho_digital(H, V, noise_power: float, kind: str = "sum-se") -> np.ndarray:
    """Per (k, i) weights of the conjugate gradient d u / d v_k^* = sum_i rho[k,i] h_i."""
    G = H.conj().T @ V
    lam = lambda_weights(kind, sinr_digital(H, V, noise_power))
    return _rho(G, noise_power, lam)


def analytic_grad_digital(H, V, noise_power: float, kind: str = "sum-se") -> np.ndarray:
    """Gradient of the objective over (Re V, Im V), as an N x K complex matrix."""
    H = np.asarray(H, dtype=np.complex128)
    V = np.asarray(V, dtype=np.complex128)
    if H.shape != V.shape:
        raise ValueError(f"H {H.shape} and V {V.shape} disagree")
    return 2.0 * H @ rho_digital(H, V, noise_power, kind).T


def analytic_grad_hybrid_digital(H, WA, WD, noise_power: float, kind: str = "sum-se") -> np.ndarray:
    """Gradient over (Re W_D, Im W_D) via the analog-precoded channel."""
    Hh = np.asarray(effective_digital_channel(H, WA))
    return analytic_grad_digital(Hh, WD, noise_power, kind)


def rho_analog(H, WA, WD, noise_power: float, kind: str = "sum-se") -> np.ndarray:
    """rho^A[k, i] for the vectorized analog precoder."""
    Hbar = np.asarray(effective_analog_channel(H, WD))
    k = H.shape[1]
    c = (Hbar.conj().T @ vec(WA)).reshape(k, k)  # [k, i] = hbar_{k,i}^H vec(W_A)
    P2 = np.abs(c) ** 2
    own = np.diag(P2)
    denom = P2.sum(1) - own + noise_power
    lam = lambda_weights(kind, own / denom)
    rho = (-lam * own / denom**2)[:, None] * c
    rho[np.diag_indices_from(rho)] = lam * np.diag(c) / denom
    return rho


def analytic_grad_hybrid_analog(H, WA, WD, noise_power: float, kind: str = "sum-se") -> np.ndarray:
    """Gradient over (Re W_A, Im W_A) as an N x N_s matrix, built from hbar_{k,i}."""
    H = np.asarray(H, dtype=np.complex128)
    Hbar = np.asarray(effective_analog_channel(H, WD))
    rho = rho_analog(H, WA, WD, noise_power, kind)
    g = 2.0 * Hbar @ rho.ravel()
    return unvec(g, H.shape[0], WD.shape[0])


# ---------------------------------------------------------------------------
# simple precoders


def mrt(H, power_budget: float) -> np.ndarray:
    return normalize_power(np.asarray(H, dtype=np.complex128), power_budget)


def zero_forcing(H, power_budget: float) -> np.ndarray:
    """V proportional to H (H^H H)^-1, scaled to the power budget."""
    H = np.asarray(H, dtype=np.complex128)
    n, k = H.shape
    if k > n:
        raise SolverError(f"zero-forcing needs K <= N (K={k}, N={n})")
    gram = H.conj().T @ H
    if np.linalg.matrix_rank(H) < k:
        raise SolverError("channel matrix is rank deficient")
    return normalize_power(H @ np.linalg.inv(gram), power_budget)


# ---------------------------------------------------------------------------
# WMMSE


@dataclass(frozen=True)
class WmmseConfig:
    max_iters: int = 500
    tol: float = 1e-8
    power_tol: float = 1e-10
    init: str = "mrt"
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1 or not self.tol > 0 or not self.power_tol > 0:
            raise ValueError("invalid WMMSE config")
        if self.init not in ("mrt", "random"):
            raise ValueError(f"unknown WMMSE init {self.init!r}")


def _precoder_for_mu(evals, UhB, U, mu):
    return U @ (UhB / (evals + mu)[:, None])


def _wmmse_precoder(H, u, w, power_budget, power_tol):
    n = H.shape[0]
    A = (H * (w * np.abs(u) ** 2)) @ H.conj().T
    B = H * (u * w)
    evals, U = np.linalg.eigh(A)
    evals = np.maximum(evals, 0.0)
    UhB = U.conj().T @ B
    # directions outside the column span of H carry no signal; keep them at zero
    null = evals <= 1e-12 * max(evals.max(), 1e-300)
    UhB[null] = 0.0
    num = np.sum(np.abs(UhB) ** 2, axis=1)

    def power(mu):
        d = evals + mu
        safe = np.where(null, 1.0, d)
        return float(np.sum(np.where(null, 0.0, num / safe**2)))

    if power(0.0) <= power_budget:
        evals_eff = np.where(null, 1.0, evals)
        return U @ (UhB / evals_eff[:, None])
    lo, hi = 0.0, 1.0
    while power(hi) > power_budget:
        hi *= 2.0
    while True:
        mid = 0.5 * (lo + hi)
        p = power(mid)
        if abs(p - power_budget) <= power_tol * power_budget or hi - lo <= 1e-15 * hi:
            break
        if p > power_budget:
            lo = mid
        else:
            hi = mid
    mu = max(mid, 1e-12)
    return _precoder_for_mu(evals, UhB, U, mu)


def wmmse(H, sys: SystemParams, cfg: WmmseConfig | None = None, V0=None) -> SolverResult:
    """Weighted MMSE alternating optimization for sum-SE.

    Receiver u_k = h_k^H v_k / (sum_j |h_k^H v_j|^2 + sigma^2), MSE weight
    w_k = 1 / (1 - conj(u_k) h_k^H v_k), and precoder
    v_k = (sum_j w_j |u_j|^2 h_j h_j^H + mu I)^-1 h_k u_k w_k with mu >= 0 set
    by bisection so the power budget holds.
    """
    cfg = cfg or WmmseConfig()
    H = np.asarray(H, dtype=np.complex128)
    sigma2 = sys.noise_power
    if V0 is not None:
        V = normalize_power(np.asarray(V0, dtype=np.complex128), sys.power_budget)
    elif cfg.init == "random":
        rng = np.random.default_rng(cfg.seed)
        V = normalize_power(rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape), sys.power_budget)
    else:
        V = mrt(H, sys.power_budget)

    def se(V):
        return float(objective("sum-se", sinr_digital(H, V, sigma2)))

    best_V, best = V, se(V)
    trace = [best]
    converged = False
    for _ in range(cfg.max_iters):
        G = H.conj().T @ V
        tot = np.sum(np.abs(G) ** 2, axis=1) + sigma2
        g_kk = np.diag(G)
        u = g_kk / tot
        w = 1.0 / np.real(1.0 - np.conj(u) * g_kk)
        V = _wmmse_precoder(H, u, w, sys.power_budget, cfg.power_tol)
        norm2 = float(np.sum(np.abs(V) ** 2))
        if norm2 > sys.power_budget:
            V = V * math.sqrt(sys.power_budget / norm2)
        val = se(V)
        trace.append(val)
        if val > best:
            best_V, best = V, val
        if abs(trace[-1] - trace[-2]) < cfg.tol:
            converged = True
            break
    return SolverResult(V=best_V, objective=best, trace=trace, converged=converged)


# ---------------------------------------------------------------------------
# projected gradient ascent


@dataclass(frozen=True)
class PgdConfig:
    step: float = 1.0
    max_iters: int = 500
    backtrack: float = 0.5
    grow: float = 2.0
    min_step: float = 1e-12
    tol: float = 1e-10
    objective: str = "sum-se"
    init: str = "mrt"

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("step must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack factor must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.objective not in ("sum-se", "log-se", "hybrid-se"):
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.init not in ("mrt", "zf"):
            raise ValueError(f"unknown init {self.init!r}")


class _Ascent:
    """Backtracking projected ascent on one block of variables."""

    def __init__(self, cfg: PgdConfig):
        self.cfg = cfg
        self.step = cfg.step

    def __call__(self, x, value, grad, project, evaluate):
        """Return (x', value', moved).  Never accepts a decrease."""
        step = self.step
        while step >= self.cfg.min_step:
            cand = project(x + step * grad)
            val = evaluate(cand)
            if np.isfinite(val) and val >= value:
                self.step = step * self.cfg.grow
                return cand, val, True
            step *= self.cfg.backtrack
        self.step = max(self.cfg.min_step, step)
        return x, value, False


def _initial_digital(H, sys, init):
    if init == "zf" and H.shape[1] <= H.shape[0]:
        try:
            return zero_forcing(H, sys.power_budget)
        except SolverError:
            pass
    return mrt(H, sys.power_budget)


def pgd_digital(H, sys: SystemParams, cfg: PgdConfig | None = None, V0=None) -> SolverResult:
    """Projected gradient ascent on sum-SE or log-SE with a power-sphere projection."""
    cfg = cfg or PgdConfig()
    kind = "sum-se" if cfg.objective == "hybrid-se" else cfg.objective
    H = np.asarray(H, dtype=np.complex128)
    V = _initial_digital(H, sys, cfg.init) if V0 is None else normalize_power(np.asarray(V0), sys.power_budget)

    def evaluate(V):
        return float(objective(kind, sinr_digital(H, V, sys.noise_power)))

    def project(V):
        return normalize_power(V, sys.power_budget)

    value = evaluate(V)
    if not np.isfinite(value):
        raise SolverError("initial objective is not finite")
    trace = [value]
    ascent = _Ascent(cfg)
    converged = False
    for _ in range(cfg.max_iters):
        g = analytic_grad_digital(H, V, sys.noise_power, kind)
        V, new, moved = ascent(V, value, g, project, evaluate)
        trace.append(new)
        done = not moved or new - value <= cfg.tol * max(1.0, abs(value))
        value = new
        if done:
            converged = True
            break
    return SolverResult(V=V, objective=value, trace=trace, converged=converged)


def hybrid_start(H, ns: int, sys: SystemParams):
    """Analog warm start plus regularized zero-forcing on the effective channel."""
    WA = analog_init(H, ns)
    return normalize_hybrid(WA, digital_init(H, WA, sys), sys.power_budget)


def pgd_hybrid(
    H,
    ns: int,
    sys: SystemParams,
    cfg: PgdConfig | None = None,
    WA0=None,
    WD0=None,
    freeze_analog: bool = False,
) -> SolverResult:
    """Alternating projected gradient ascent on (W_D, vec W_A) for hybrid sum-SE.

    With ``freeze_analog`` the analog precoder is left as given (no phase
    projection), which reduces the iteration to :func:`pgd_digital` on the
    effective channel when W_A = I.
    """
    cfg = cfg or PgdConfig(objective="hybrid-se")
    kind = "log-se" if cfg.objective == "log-se" else "sum-se"
    H = np.asarray(H, dtype=np.complex128)
    n = H.shape[0]
    if ns > n:
        raise ValueError(f"N_s={ns} exceeds N={n}")
    if WA0 is None:
        WA, WD = hybrid_start(H, ns, sys)
    else:
        WA = np.asarray(WA0, dtype=np.complex128)
        WD = np.asarray(WD0, dtype=np.complex128)
        if not freeze_analog:
            WA, WD = normalize_hybrid(WA, WD, sys.power_budget)
        else:
            WD = _scale_digital(WA, WD, sys.power_budget)

    def evaluate(WA, WD):
        return float(objective(kind, sinr_hybrid(H, WA, WD, sys.noise_power)))

    value = evaluate(WA, WD)
    trace = [value]
    dig, ana = _Ascent(cfg), _Ascent(cfg)
    converged = False
    for _ in range(cfg.max_iters):
        start = value
        g = analytic_grad_hybrid_digital(H, WA, WD, sys.noise_power, kind)
        if freeze_analog:
            proj_d = lambda X: _scale_digital(WA, X, sys.power_budget)  # noqa: E731
        else:
            proj_d = lambda X: normalize_hybrid(WA, X, sys.power_budget)[1]  # noqa: E731
        WD, value, moved_d = dig(WD, value, g, proj_d, lambda X: evaluate(WA, X))
        moved_a = False
        if not freeze_analog:
            ga = analytic_grad_hybrid_analog(H, WA, WD, sys.noise_power, kind)
            cur_wd = WD

            def proj_a(X):
                return normalize_hybrid(X, cur_wd, sys.power_budget)[0]

            def eval_a(X):
                return evaluate(X, normalize_hybrid(X, cur_wd, sys.power_budget)[1])

            WA_new, value, moved_a = ana(WA, value, ga, proj_a, eval_a)
            if moved_a:
                WA, WD = normalize_hybrid(WA_new, cur_wd, sys.power_budget)
        trace.append(value)
        if (not moved_d and not moved_a) or value - start <= cfg.tol * max(1.0, abs(start)):
            converged = True
            break
    return SolverResult(WA=WA, WD=WD, objective=value, trace=trace, converged=converged)


def _scale_digital(WA, WD, power_budget):
    norm2 = float(np.sum(np.abs(WA @ WD) ** 2))
    if norm2 == 0:
        raise SolverError("effective hybrid precoder is zero")
    return WD * math.sqrt(power_budget / norm2)


def per_user_se(H, V, noise_power: float) -> np.ndarray:
    return se_per_user(sinr_digital(H, V, noise_power))
