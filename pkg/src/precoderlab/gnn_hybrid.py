"""Cascaded gradient-driven GNN for hybrid (analog + digital) precoding.

Each block runs an analog sub-network over the vectorized analog precoder,
fed by the Kronecker effective channel of the current digital precoder,
then a digital sub-network over the K x N_s user/RF-chain edges of the
channel seen through the freshly updated analog precoder.

``vec`` is column-major throughout: entry ``m * N + n`` of ``vec(W_A)`` is
``W_A[n, m]``.  Columns of the effective analog channel are ordered
``k * K + i``.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass

import numpy as np
import torch

from . import gnn_digital
from .metrics import SystemParams, _torchify, normalize_hybrid, project_unit_modulus
from .tensor import CDTYPE, RDTYPE, ParamVector, ctanh


@_torchify
def effective_digital_channel(H, WA):
    """Analog-precoded channel W_A^H H, shape (..., N_s, K)."""
    if H.shape[-2] != WA.shape[-2]:
        raise ValueError(f"H {tuple(H.shape)} and W_A {tuple(WA.shape)} disagree")
    return WA.conj().transpose(-1, -2) @ H


@_torchify
def effective_analog_channel(H, WD):
    """Columns conj(w_Di) kron h_k, shape (..., N_s*N, K*K)."""
    if H.shape[-1] != WD.shape[-1]:
        raise ValueError(f"H {tuple(H.shape)} and W_D {tuple(WD.shape)} disagree")
    n, k = H.shape[-2], H.shape[-1]
    ns = WD.shape[-2]
    hb = torch.einsum("...mi,...nk->...mnki", WD.conj(), H)
    return hb.reshape(*hb.shape[:-4], ns * n, k * k)


def vec(WA):
    """Column-major vectorization over the last two axes."""
    return WA.transpose(-1, -2).reshape(*WA.shape[:-2], -1)


def unvec(x, n: int, ns: int):
    return x.reshape(*x.shape[:-1], ns, n).transpose(-1, -2)


def _phase_fix(u: np.ndarray) -> np.ndarray:
    """Rotate each column so its entry sum is real positive."""
    s = u.sum(axis=-2, keepdims=True)
    mag = np.abs(s)
    rot = np.where(mag > 0, np.conj(s) / np.where(mag > 0, mag, 1.0), 1.0)
    return u * rot


def analog_init(H: np.ndarray, ns: int) -> np.ndarray:
    """Unit-modulus warm start from the dominant left singular vectors of H.

    Column m takes the phases of singular vector ``m mod r`` (r = min(N, K)),
    raised to harmonic ``1 + m // r`` so extra RF chains stay distinct when
    N_s exceeds r.  Singular vectors are phase-fixed by their entry
    sum, which keeps the map equivariant to antenna reordering and
    invariant to user reordering.
    """
    H = np.asarray(H, dtype=np.complex128)
    U, _, _ = np.linalg.svd(H, full_matrices=False)
    r = min(H.shape[-2], H.shape[-1])
    U = _phase_fix(U[..., :r])
    cols = []
    for m in range(ns):
        u = U[..., m % r]
        ph = np.angle(u) * (1 + m // r)
        cols.append(np.exp(1j * ph))
    return np.stack(cols, axis=-1)


def digital_init(H: np.ndarray, WA: np.ndarray, sys: SystemParams) -> np.ndarray:
    """Regularized zero-forcing on the analog-precoded channel, scaled to the budget.

    W_D is proportional to Ĥ (Ĥ^H Ĥ + N K sigma^2 / P I)^-1; the factor N
    accounts for the gain of N unit-modulus phase shifters per RF chain.
    """
    Hh = np.asarray(effective_digital_channel(H, WA))
    n, k = H.shape[-2], H.shape[-1]
    reg = n * k * sys.noise_power / sys.power_budget
    gram = np.conj(np.swapaxes(Hh, -1, -2)) @ Hh + reg * np.eye(k)
    WD = np.swapaxes(np.linalg.solve(gram, np.conj(np.swapaxes(Hh, -1, -2))), -1, -2).conj()
    _, WD = normalize_hybrid(WA, WD, sys.power_budget)
    return WD


# ---------------------------------------------------------------------------
# architecture and parameters


@dataclass(frozen=True)
class HybridArch:
    blocks: int = 2
    layers: int = 2
    width: int = 16
    ns: int = 2

    def __post_init__(self):
        if self.blocks < 1 or self.layers < 1 or self.width < 1 or self.ns < 1:
            raise ValueError("hybrid arch sizes must be >= 1")

    @property
    def widths(self) -> list[int]:
        return [1] + [self.width] * (self.layers - 1) + [1]

    def digital_arch(self) -> gnn_digital.GnnArch:
        return gnn_digital.GnnArch(self.layers, self.width)

    def to_dict(self) -> dict:
        return asdict(self)


def init_params(arch: HybridArch, seed: int) -> ParamVector:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x4859])))
    p = ParamVector()
    w = arch.widths
    for b in range(arch.blocks):
        for sub in ("dig", "ana"):
            for l in range(1, arch.layers + 1):
                pre = f"block{b}.{sub}.layer{l}"
                t_in, t_out = w[l - 1], w[l]
                p.add(f"{pre}.S", gnn_digital.glorot(rng, t_out, t_in))
                p.add(f"{pre}.P", gnn_digital.glorot(rng, t_out, t_in))
                p.add(f"{pre}.att.W", gnn_digital.glorot(rng, 2 * t_in, 4 * t_in))
                p.add(f"{pre}.att.b", np.zeros(2 * t_in))
    return p


def _layer(params: Mapping[str, torch.Tensor], pre: str):
    return params[f"{pre}.S"], params[f"{pre}.P"], params[f"{pre}.att.W"], params[f"{pre}.att.b"]


def unit_columns(X):
    """Scale each sample so its columns have unit norm on average.

    Returns the scaled copy and the factor that undoes it.
    """
    norm = torch.linalg.matrix_norm(X, keepdim=True).clamp_min(torch.finfo(RDTYPE).tiny)
    scale = X.shape[-1] ** 0.5 / norm
    return X * scale, 1.0 / scale


def digital_subnet_forward(params, block: int, Hhat, WD_in, layers: int, activation=ctanh):
    """One digital sub-network: (B, N_s, K) effective channel -> (B, N_s, K) W_D.

    Channel and seed are normalized per sample; the output returns at the
    seed's scale, so an identity network hands W_D_in through unchanged.
    """
    stack = [_layer(params, f"block{block}.dig.layer{l}") for l in range(1, layers + 1)]
    Hs, _ = unit_columns(Hhat)
    Ws, back = unit_columns(WD_in)
    D = gnn_digital.gradient_layers(stack, Hs, Ws.transpose(-1, -2).unsqueeze(-1), activation)
    return D[..., 0].transpose(-1, -2) * back


def analog_attention(W, b, Hbar, D, k: int):
    """Attention weights alpha[k, i, t] for the analog sub-network.

    Hbar: (B, L, K*K) with L = N_s*N, D: (B, L, T).  Returns (B, K, K, T).
    """
    G = torch.einsum("blc,blt->bct", Hbar.conj(), D)
    G = G.reshape(G.shape[0], k, k, G.shape[-1])  # [k, i] = hbar_{k,i}^H D
    P2 = G.real**2 + G.imag**2
    own = torch.diagonal(P2, dim1=1, dim2=2).transpose(1, 2)  # (B, K, T): |hbar_kk^H D|^2
    interf = (P2.sum(2) - own) / max(k - 1, 1)  # mean over j != k
    xi = (1.0 - torch.eye(k, dtype=RDTYPE)).unsqueeze(0).unsqueeze(-1)
    feats = torch.cat(
        [
            G.real,
            G.imag,
            interf.unsqueeze(2).expand_as(P2),
            own.unsqueeze(2) * xi,
        ],
        dim=-1,
    )
    return gnn_digital.complex_affine(feats, W, b)


def analog_subnet_forward(params, block: int, Hbar, WA_in, layers: int, activation=ctanh):
    """One analog sub-network over vec(W_A): returns (B, N, N_s) raw W_A."""
    n, ns = WA_in.shape[-2], WA_in.shape[-1]
    k = int(round(Hbar.shape[-1] ** 0.5))
    Hbar, _ = unit_columns(Hbar)
    D, back = unit_columns(vec(WA_in).unsqueeze(-1))  # (B, L, 1)
    for l in range(1, layers + 1):
        S, P, W, b = _layer(params, f"block{block}.ana.layer{l}")
        alpha = analog_attention(W, b, Hbar, D, k)  # (B, K, K, T)
        agg = torch.einsum("bct,blc->blt", alpha.reshape(alpha.shape[0], k * k, -1), Hbar)
        D = D @ S.T.to(CDTYPE) + agg @ P.T.to(CDTYPE)
        if l < layers:
            D = activation(D)
    return unvec(D[..., 0] * back[..., 0], n, ns)


def forward_hybrid_from(params, H, WA0, WD0, arch: HybridArch, sys: SystemParams):
    """Run the block cascade from an explicit starting pair, then normalize.

    Each block updates W_A first and projects it to unit modulus, then
    updates W_D on the resulting effective channel, so the digital precoder
    leaving the cascade always matches the analog precoder it ships with.
    """
    WA, WD = WA0, WD0
    for b in range(arch.blocks):
        Hbar = effective_analog_channel(H, WD)
        WA = project_unit_modulus(analog_subnet_forward(params, b, Hbar, WA, arch.layers))
        Hhat = effective_digital_channel(H, WA)
        WD = digital_subnet_forward(params, b, Hhat, WD, arch.layers)
    return normalize_hybrid(WA, WD, sys.power_budget)


def initial_pair(H, ns: int, sys: SystemParams):
    """Warm-start (W_A, W_D) tensors for a (B, N, K) channel batch."""
    Hn = H.detach().numpy() if isinstance(H, torch.Tensor) else np.asarray(H)
    WA = analog_init(Hn, ns)
    WD = digital_init(Hn, WA, sys)
    return torch.as_tensor(WA, dtype=CDTYPE), torch.as_tensor(WD, dtype=CDTYPE)


def hybrid_forward(params, H, arch: HybridArch, sys: SystemParams):
    """Channel batch (B, N, K) -> feasible (W_A, W_D)."""
    if arch.ns > H.shape[-2]:
        raise ValueError(f"N_s={arch.ns} exceeds N={H.shape[-2]}")
    WA0, WD0 = initial_pair(H, arch.ns, sys)
    return forward_hybrid_from(params, H, WA0, WD0, arch, sys)
