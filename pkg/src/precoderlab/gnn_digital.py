"""Gradient-driven edge GNN for fully digital precoding, and the vanilla edge GNN.

Edge representations are complex tensors ``D`` of shape ``(B, K, N, T)``:
batch, user, antenna, hidden channel.  Real weight matrices act identically
on real and imaginary parts.  The first layer reads the channel as a single
complex channel; the last layer emits one complex channel read as V.

Both networks have parameter shapes independent of K and N, so a model
trained at one system size can be run at another.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .metrics import SystemParams, normalize_power
from .tensor import CDTYPE, RDTYPE, ParamVector, ctanh


@dataclass(frozen=True)
class GnnArch:
    layers: int = 4
    width: int = 32

    def __post_init__(self):
        if self.layers < 1 or self.width < 1:
            raise ValueError("layers and width must be >= 1")

    @property
    def widths(self) -> list[int]:
        """T_0..T_L; input and output carry one complex channel."""
        return [1] + [self.width] * (self.layers - 1) + [1]

    def to_dict(self) -> dict:
        return asdict(self)


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(arch: GnnArch, seed: int) -> ParamVector:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x474E])))
    p = ParamVector()
    w = arch.widths
    for l in range(1, arch.layers + 1):
        t_in, t_out = w[l - 1], w[l]
        p.add(f"layer{l}.S", glorot(rng, t_out, t_in))
        p.add(f"layer{l}.P", glorot(rng, t_out, t_in))
        p.add(f"layer{l}.att.W", glorot(rng, 2 * t_in, 4 * t_in))
        p.add(f"layer{l}.att.b", np.zeros(2 * t_in))
    return p


def init_vanilla_params(arch: GnnArch, seed: int) -> ParamVector:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x564E])))
    p = ParamVector()
    w = arch.widths
    for l in range(1, arch.layers + 1):
        t_in, t_out = w[l - 1], w[l]
        for name in ("S", "Q", "P"):
            p.add(f"layer{l}.{name}", glorot(rng, t_out, t_in))
    return p


def complex_affine(feats, W, b):
    """Affine map with 2T real outputs read as T complex values (real block first)."""
    out = feats @ W.T + b
    t = out.shape[-1] // 2
    return torch.complex(out[..., :t], out[..., t:])


def attention_digital(W, b, H, D):
    """Per user pair attention weights.

    For target user k and source user i the input is, per hidden channel t,
    ``Re/Im(h_i^H d_kt)``, the interference ``|h_i^H d_jt|^2`` seen by user i
    averaged over the K-1 users j != i (a mean, so its scale does not drift
    with K), and user i's own gain ``|h_i^H d_it|^2`` gated off when i == k.  ``W`` is (2T, 4T), ``b`` is (2T,).

    H: (B, N, K), D: (B, K, N, T).  Returns complex alpha of shape (B, K, K, T)
    indexed [b, k, i, t].  A complex weight lets ``sum_i alpha_ki h_i`` reach
    any point in the complex span of the channels, as the gradient does.
    """
    if H.shape[-2] != D.shape[-2] or H.shape[-1] != D.shape[-3]:
        raise ValueError(f"H {tuple(H.shape)} and D {tuple(D.shape)} disagree")
    k = H.shape[-1]
    G = torch.einsum("bni,bknt->bkit", H.conj(), D)  # [k, i] = h_i^H d_k
    P2 = G.real**2 + G.imag**2
    own = torch.diagonal(P2, dim1=1, dim2=2).transpose(1, 2)  # (B, K_i, T)
    interf = (P2.sum(1) - own) / max(k - 1, 1)  # mean over j != i of |h_i^H d_j|^2
    xi = (1.0 - torch.eye(k, dtype=RDTYPE)).unsqueeze(0).unsqueeze(-1)
    feats = torch.cat(
        [
            G.real,
            G.imag,
            interf.unsqueeze(1).expand_as(P2),
            own.unsqueeze(1) * xi,
        ],
        dim=-1,
    )
    return complex_affine(feats, W, b)


def gradient_layers(stack, H, D, activation=ctanh):
    """Apply gradient-driven layers ``[(S, P, W, b), ...]`` to ``D``.

    The last layer has identity activation.
    """
    for l, (S, P, W, b) in enumerate(stack, start=1):
        alpha = attention_digital(W, b, H, D)
        agg = torch.einsum("bkit,bni->bknt", alpha, H)
        D = D @ S.T.to(CDTYPE) + agg @ P.T.to(CDTYPE)
        if l < len(stack):
            D = activation(D)
    return D


def _as_batch(H):
    H = torch.as_tensor(H, dtype=CDTYPE)
    return H.unsqueeze(0) if H.ndim == 2 else H


def scale_input(H):
    """Channel copy scaled by 1/sqrt(N) so attention features stay O(1) in N."""
    return H / H.shape[-2] ** 0.5


def forward_raw(params: Mapping[str, torch.Tensor], H, layers: int, activation=ctanh):
    """Unnormalized network output (B, N, K)."""
    H = scale_input(_as_batch(H))
    stack = [
        (params[f"layer{l}.S"], params[f"layer{l}.P"], params[f"layer{l}.att.W"], params[f"layer{l}.att.b"])
        for l in range(1, layers + 1)
    ]
    D0 = H.transpose(-1, -2).unsqueeze(-1)  # d_{k,n} = h_{k,n}
    D = gradient_layers(stack, H, D0, activation)
    return D[..., 0].transpose(-1, -2)


def forward_digital(params, H, arch: GnnArch, sys: SystemParams, activation=ctanh):
    """Channel batch (B, N, K) -> power-normalized precoders (B, N, K)."""
    return normalize_power(forward_raw(params, H, arch.layers, activation), sys.power_budget)


def vanilla_raw(params: Mapping[str, torch.Tensor], H, layers: int, activation=ctanh):
    H = scale_input(_as_batch(H))
    D = H.transpose(-1, -2).unsqueeze(-1)
    for l in range(1, layers + 1):
        S, Q, P = (params[f"layer{l}.{n}"].to(CDTYPE) for n in ("S", "Q", "P"))
        same_user = D.sum(2, keepdim=True) - D  # other antennas of user k
        same_ant = D.sum(1, keepdim=True) - D  # other users on antenna n
        D = D @ S.T + same_user @ Q.T + same_ant @ P.T
        if l < layers:
            D = activation(D)
    return D[..., 0].transpose(-1, -2)


def forward_vanilla(params, H, arch: GnnArch, sys: SystemParams, activation=ctanh):
    return normalize_power(vanilla_raw(params, H, arch.layers, activation), sys.power_budget)
