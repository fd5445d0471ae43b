"""Unsupervised training of the precoding networks.

The loss is the batch mean of the negative objective (sum-SE or log-SE),
computed straight from the network's precoder through the SINR, so no
labels are needed.  Optimization is plain Adam on the flattened parameter
vector.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import baselines, gnn_digital, gnn_hybrid
from .channels import ChannelBatch
from .metrics import DegenerateObjectiveError, SystemParams, se_per_user, sinr_digital, sinr_hybrid
from .tensor import CDTYPE, NonFiniteError, ParamVector, loss_and_grad

log = logging.getLogger(__name__)

TASKS = ("digital-se", "digital-logse", "hybrid-se")
BASELINES = ("wmmse", "pgd-logse", "pgd-hybrid", "zf", "self")
DEFAULT_BASELINE = {"digital-se": "wmmse", "digital-logse": "pgd-logse", "hybrid-se": "pgd-hybrid"}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Model:
    """A task plus the network that solves it.

    ``kind`` is ``gradient`` (gradient-driven digital GNN), ``vanilla``
    (plain edge GNN) or ``hybrid`` (cascaded hybrid GNN).
    """

    task: str
    kind: str
    arch: gnn_digital.GnnArch | gnn_hybrid.HybridArch

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if (self.task == "hybrid-se") != (self.kind == "hybrid"):
            raise ValueError(f"model kind {self.kind!r} does not fit task {self.task!r}")
        if self.kind not in ("gradient", "vanilla", "hybrid"):
            raise ValueError(f"unknown model kind {self.kind!r}")

    @property
    def objective(self) -> str:
        return "log-se" if self.task == "digital-logse" else "sum-se"

    def init_params(self, seed: int) -> ParamVector:
        if self.kind == "gradient":
            return gnn_digital.init_params(self.arch, seed)
        if self.kind == "vanilla":
            return gnn_digital.init_vanilla_params(self.arch, seed)
        return gnn_hybrid.init_params(self.arch, seed)

    def precoders(self, params, H, sys: SystemParams):
        """Digital V (B, N, K), or the pair (W_A, W_D) for hybrid models."""
        if self.kind == "gradient":
            return gnn_digital.forward_digital(params, H, self.arch, sys)
        if self.kind == "vanilla":
            return gnn_digital.forward_vanilla(params, H, self.arch, sys)
        return gnn_hybrid.hybrid_forward(params, H, self.arch, sys)

    def sinr(self, params, H, sys: SystemParams):
        out = self.precoders(params, H, sys)
        if self.kind == "hybrid":
            return sinr_hybrid(H, out[0], out[1], sys.noise_power)
        return sinr_digital(H, out, sys.noise_power)

    def effective_precoder(self, params, H, sys: SystemParams):
        out = self.precoders(params, H, sys)
        return out[0] @ out[1] if self.kind == "hybrid" else out


def objective_values(kind: str, gamma: torch.Tensor) -> torch.Tensor:
    """Per-sample objective on a (B, K) SINR tensor."""
    if kind == "sum-se":
        return torch.log2(1.0 + gamma).sum(-1)
    bad = (gamma <= 0).any(-1)
    if bool(bad.any()):
        idx = int(torch.nonzero(bad)[0, 0])
        raise DegenerateObjectiveError(f"log-SE undefined: sample {idx} has a zero-rate user")
    return torch.log(torch.log2(1.0 + gamma)).sum(-1)


def loss_eval(model: Model, params, H, sys: SystemParams, objective: str | None = None):
    """Mean negative objective over the batch (a scalar tensor)."""
    H = torch.as_tensor(H, dtype=CDTYPE)
    gamma = model.sinr(params, H, sys)
    return -objective_values(objective or model.objective, gamma).mean()


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size))


def adam_step(params: ParamVector, grads, state: AdamState, lr: float):
    """One bias-corrected Adam update; returns new params and state."""
    x = params.flatten()
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != x.shape or state.m.shape != x.shape:
        raise ValueError(f"shape mismatch: params {x.shape}, grads {g.shape}, state {state.m.shape}")
    t = state.step + 1
    m = state.beta1 * state.m + (1 - state.beta1) * g
    v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    x = x - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params.with_flat(x), AdamState(m, v, t, state.beta1, state.beta2, state.eps)


# ---------------------------------------------------------------------------
# baselines and ratios


def baseline_objective(baseline: str, model: Model, H: np.ndarray, sys: SystemParams) -> float:
    """Objective of the named numerical baseline on one N x K channel."""
    obj = model.objective
    if baseline == "wmmse":
        V = baselines.wmmse(H, sys).V
    elif baseline == "zf":
        V = baselines.zero_forcing(H, sys.power_budget)
    elif baseline == "pgd-logse":
        V = baselines.pgd_digital(H, sys, baselines.PgdConfig(objective="log-se")).V
    elif baseline == "pgd-hybrid":
        ns = model.arch.ns
        res = baselines.pgd_hybrid(H, ns, sys, baselines.PgdConfig(objective="hybrid-se"))
        V = res.WA @ res.WD
    else:
        raise ValueError(f"unknown baseline {baseline!r}")
    gamma = torch.as_tensor(sinr_digital(H, V, sys.noise_power)).unsqueeze(0)
    return float(objective_values(obj, gamma)[0])


def baseline_objectives(baseline: str, model: Model, batch: ChannelBatch, sys: SystemParams):
    """Per-sample baseline objectives; failed samples come back as NaN."""
    out = np.full(len(batch), np.nan)
    for i, H in enumerate(batch.samples):
        try:
            out[i] = baseline_objective(baseline, model, H, sys)
        except (baselines.SolverError, DegenerateObjectiveError, np.linalg.LinAlgError) as exc:
            log.warning("baseline %s failed on sample %d: %s", baseline, i, exc)
    return out


def network_objectives(model: Model, params: ParamVector, batch: ChannelBatch, sys: SystemParams):
    """Per-sample objective of the network's precoder, evaluated group by group."""
    tparams = params.to_torch()
    out = np.empty(len(batch))
    with torch.no_grad():
        for idx in batch.groups().values():
            H = torch.as_tensor(batch.stacked(idx), dtype=CDTYPE)
            out[idx] = objective_values(model.objective, model.sinr(tparams, H, sys)).numpy()
    return out


def network_user_se(model: Model, params: ParamVector, batch: ChannelBatch, sys: SystemParams):
    """Per-sample arrays of per-user SE under the network precoder."""
    tparams = params.to_torch()
    out: list[np.ndarray] = [None] * len(batch)
    with torch.no_grad():
        for idx in batch.groups().values():
            H = torch.as_tensor(batch.stacked(idx), dtype=CDTYPE)
            se = se_per_user(model.sinr(tparams, H, sys)).numpy()
            for j, i in enumerate(idx):
                out[i] = se[j]
    return out


@dataclass
class RatioResult:
    network: np.ndarray
    baseline: np.ndarray

    @property
    def ratios(self) -> np.ndarray:
        return self.network / self.baseline

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.baseline)

    @property
    def skipped(self) -> int:
        return int((~self.valid).sum())

    @property
    def mean_ratio(self) -> float:
        r = self.ratios[self.valid]
        return float(r.mean()) if r.size else float("nan")


def evaluate_ratio(
    model: Model,
    params: ParamVector,
    testset: ChannelBatch,
    sys: SystemParams,
    baseline: str | None = None,
    baseline_values: np.ndarray | None = None,
) -> RatioResult:
    """Mean over samples of network objective / baseline objective."""
    net = network_objectives(model, params, testset, sys)
    baseline = baseline or DEFAULT_BASELINE[model.task]
    if baseline_values is not None:
        base = np.asarray(baseline_values, dtype=np.float64)
    elif baseline == "self":
        base = net.copy()
    else:
        base = baseline_objectives(baseline, model, testset, sys)
    return RatioResult(net, base)


# ---------------------------------------------------------------------------
# training loop


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 50
    lr: float = 3e-3
    epochs: int = 200
    seed: int = 0
    val_fraction: float = 0.1
    val_every: int = 5
    logse_warmup_epochs: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ValueError("validation fraction must lie in [0, 1)")
        if self.val_every < 1:
            raise ValueError("val_every must be >= 1")


@dataclass
class History:
    epochs: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    val_ratio: list[float] = field(default_factory=list)
    loss_kind: list[str] = field(default_factory=list)

    def rows(self):
        for e, l, v in zip(self.epochs, self.loss, self.val_ratio):
            yield e, l, v


@dataclass
class TrainResult:
    params: ParamVector
    history: History
    adam: AdamState
    epoch: int
    best_epoch: int
    best_val_ratio: float


def split_validation(batch: ChannelBatch, fraction: float):
    """Last ``fraction`` of the samples become the validation set."""
    n_val = int(math.floor(len(batch) * fraction))
    if n_val == 0 or n_val == len(batch):
        return batch, None
    n_train = len(batch) - n_val
    return batch.subset(range(n_train)), batch.subset(range(n_train, len(batch)))


def epoch_batches(batch: ChannelBatch, batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    """Shuffled minibatches; each holds samples of a single (K, N) size."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x5452, epoch])))
    out = []
    for idx in batch.groups().values():
        idx = np.asarray(idx)[rng.permutation(len(idx))]
        out.extend(idx[i : i + batch_size].tolist() for i in range(0, len(idx), batch_size))
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def train(
    model: Model,
    data: ChannelBatch,
    sys: SystemParams,
    config: TrainConfig,
    params: ParamVector | None = None,
    adam: AdamState | None = None,
    start_epoch: int = 0,
    val_baseline: str | np.ndarray | None = None,
) -> TrainResult:
    """Train ``model`` on ``data``; returns the best-validation parameters.

    Training resumes from ``params``/``adam``/``start_epoch`` when given.
    ``val_baseline`` names the validation baseline or holds precomputed
    baseline objectives for the validation split.
    """
    params = params.copy() if params is not None else model.init_params(config.seed)
    adam = adam or AdamState.zeros(params.size)
    train_set, val_set = split_validation(data, config.val_fraction)
    history = History()
    if val_set is not None and (val_baseline is None or isinstance(val_baseline, str)):
        name = val_baseline or DEFAULT_BASELINE[model.task]
        val_baseline = evaluate_ratio(model, params, val_set, sys, baseline=name).baseline

    best = (params.copy(), start_epoch, -math.inf)
    epoch = start_epoch
    for epoch in range(start_epoch, start_epoch + config.epochs):
        objective = model.objective
        if model.objective == "log-se" and epoch < config.logse_warmup_epochs:
            objective = "sum-se"
        total, count = 0.0, 0
        for b, idx in enumerate(epoch_batches(train_set, config.batch_size, config.seed, epoch)):
            H = torch.as_tensor(train_set.stacked(idx), dtype=CDTYPE)

            def evaluate(p, H=H):
                return loss_eval(model, p, H, sys, objective)

            try:
                loss, grad = loss_and_grad(evaluate, params)
            except (NonFiniteError, DegenerateObjectiveError) as exc:
                raise TrainingError(f"epoch {epoch} batch {b}: {exc}") from exc
            params, adam = adam_step(params, grad, adam, config.lr)
            total += loss * len(idx)
            count += len(idx)
        ratio = float("nan")
        last = epoch == start_epoch + config.epochs - 1
        if val_set is not None and ((epoch - start_epoch + 1) % config.val_every == 0 or last):
            ratio = evaluate_ratio(model, params, val_set, sys, baseline_values=val_baseline).mean_ratio
            if ratio > best[2]:
                best = (params.copy(), epoch + 1, ratio)
        history.epochs.append(epoch + 1)
        history.loss.append(total / max(count, 1))
        history.val_ratio.append(ratio)
        history.loss_kind.append(objective)
        log.info("epoch %d loss %.6f val_ratio %s", epoch + 1, history.loss[-1], ratio)

    end_epoch = start_epoch + config.epochs
    if val_set is None or not math.isfinite(best[2]):
        return TrainResult(params, history, adam, end_epoch, end_epoch, float("nan"))
    return TrainResult(best[0], history, adam, end_epoch, best[1], best[2])
