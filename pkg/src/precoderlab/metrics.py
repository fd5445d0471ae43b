"""SINR, sum-SE and log-SE objectives, power/modulus projections, permutations.

All functions accept numpy arrays or torch tensors with arbitrary leading
batch dimensions: channels and precoders are ``(..., N, K)``, analog
precoders ``(..., N, N_s)`` and digital parts of hybrid precoders
``(..., N_s, K)``.  Numpy in gives numpy out; tensors stay on the autograd
graph.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import torch

from .tensor import CDTYPE, RDTYPE

LN2 = math.log(2.0)


class DegenerateObjectiveError(ValueError):
    """Log-SE is undefined because some user has zero rate."""


@dataclass(frozen=True)
class SystemParams:
    noise_power: float = 1.0
    power_budget: float = 10.0

    def __post_init__(self):
        if not self.noise_power > 0 or not self.power_budget > 0:
            raise ValueError("noise power and power budget must be positive")

    @classmethod
    def from_snr_db(cls, snr_db: float, noise_power: float = 1.0) -> "SystemParams":
        return cls(noise_power, noise_power * 10.0 ** (snr_db / 10.0))

    @property
    def snr_db(self) -> float:
        return 10.0 * math.log10(self.power_budget / self.noise_power)


def _torchify(fn):
    """Run ``fn`` on tensors; convert numpy arguments in and results back out."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        was_numpy = not any(isinstance(a, torch.Tensor) for a in args)
        targs = []
        for a in args:
            if isinstance(a, np.ndarray) or isinstance(a, (list, tuple)):
                arr = np.asarray(a)
                dtype = CDTYPE if np.iscomplexobj(arr) else RDTYPE
                targs.append(torch.as_tensor(arr, dtype=dtype))
            else:
                targs.append(a)
        out = fn(*targs, **kwargs)
        if not was_numpy:
            return out
        if isinstance(out, tuple):
            return tuple(o.detach().numpy() if isinstance(o, torch.Tensor) else o for o in out)
        if isinstance(out, torch.Tensor):
            out = out.detach().numpy()
            return out.item() if out.ndim == 0 else out
        return out

    return wrapper


def _gram_power(H, V):
    """|h_k^H v_j|^2 arranged as (..., K, K) with row k, column j."""
    if H.shape[-1] != V.shape[-1] or H.shape[-2] != V.shape[-2]:
        raise ValueError(f"channel {tuple(H.shape)} and precoder {tuple(V.shape)} disagree")
    G = H.conj().transpose(-1, -2) @ V
    return G.real**2 + G.imag**2


def _sinr_from_power(P, noise_power):
    sig = torch.diagonal(P, dim1=-2, dim2=-1)
    interf = P.sum(-1) - sig
    return sig / (interf + noise_power)


@_torchify
def sinr_digital(H, V, noise_power: float):
    return _sinr_from_power(_gram_power(H, V), noise_power)


@_torchify
def sinr_hybrid(H, WA, WD, noise_power: float):
    if H.shape[-2] != WA.shape[-2] or WA.shape[-1] != WD.shape[-2] or H.shape[-1] != WD.shape[-1]:
        raise ValueError(
            f"dims disagree: H {tuple(H.shape)}, W_A {tuple(WA.shape)}, W_D {tuple(WD.shape)}"
        )
    return _sinr_from_power(_gram_power(H, WA @ WD), noise_power)


@_torchify
def se_per_user(gamma):
    return torch.log2(1.0 + gamma)


@_torchify
def se_sum(gamma):
    if bool((gamma < 0).any()):
        raise ValueError("negative SINR")
    return torch.log2(1.0 + gamma).sum(-1)


@_torchify
def se_log(gamma):
    if bool((gamma < 0).any()):
        raise ValueError("negative SINR")
    if bool((gamma == 0).any()):
        raise DegenerateObjectiveError("log-SE undefined: a user has zero SINR")
    return torch.log(torch.log2(1.0 + gamma)).sum(-1)


def objective(kind: str, gamma):
    """Evaluate ``sum-se``/``hybrid-se`` or ``log-se`` on SINRs."""
    if kind in ("sum-se", "hybrid-se"):
        return se_sum(gamma)
    if kind == "log-se":
        return se_log(gamma)
    raise ValueError(f"unknown objective {kind!r}")


def _fro2(M):
    return (M.real**2 + M.imag**2).sum((-2, -1), keepdim=True)


@_torchify
def normalize_power(V, power_budget: float):
    """Scale V onto the sphere ||V||_F^2 = P^max."""
    norm2 = _fro2(V)
    if bool((norm2 == 0).any()):
        raise ValueError("cannot normalize a zero precoder")
    return V * torch.sqrt(power_budget / norm2)


@_torchify
def project_unit_modulus(WA):
    mag = WA.abs()
    if bool((mag == 0).any()):
        raise ValueError("analog precoder has a zero entry; phase undefined")
    return WA / mag


@_torchify
def normalize_hybrid(WA, WD, power_budget: float):
    """Project W_A onto unit modulus and scale W_D so ||W_A W_D||_F^2 = P^max."""
    mag = WA.abs()
    if bool((mag == 0).any()):
        raise ValueError("analog precoder has a zero entry; phase undefined")
    WA = WA / mag
    norm2 = _fro2(WA @ WD)
    if bool((norm2 == 0).any()):
        raise ValueError("effective hybrid precoder is zero")
    return WA, WD * torch.sqrt(power_budget / norm2)


# ---------------------------------------------------------------------------
# permutations


def _check_perm(p, n: int, label: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.int64)
    if p.shape != (n,) or sorted(p.tolist()) != list(range(n)):
        raise ValueError(f"{label} permutation must be a bijection on {n} indices")
    return p


@dataclass(frozen=True)
class PermutationSpec:
    """Index permutations for users, antennas and (hybrid) RF chains.

    ``perm[i]`` names the original index that moves to position ``i``, i.e.
    the permutation matrix has ones at ``(perm[i], i)`` and ``Pi^T x``
    equals ``x[perm]``.
    """

    user_perm: tuple[int, ...]
    antenna_perm: tuple[int, ...]
    rf_perm: tuple[int, ...] = ()

    @classmethod
    def random(cls, rng: np.random.Generator, k: int, n: int, ns: int = 0) -> "PermutationSpec":
        return cls(
            tuple(rng.permutation(k).tolist()),
            tuple(rng.permutation(n).tolist()),
            tuple(rng.permutation(ns).tolist()) if ns else (),
        )

    @staticmethod
    def matrix(perm) -> np.ndarray:
        perm = np.asarray(perm)
        m = np.zeros((perm.size, perm.size))
        m[perm, np.arange(perm.size)] = 1.0
        return m


ROLES = ("channel", "digital-precoder", "analog-precoder", "digital-part-of-hybrid")


def apply_permutation(X, spec: PermutationSpec, role: str):
    """Permute rows and columns of ``X`` according to its role.

    channel / digital-precoder:   Pi_A^T X Pi_U
    analog-precoder:              Pi_A^T X Pi_R
    digital-part-of-hybrid:       Pi_R^T X Pi_U
    """
    if role in ("channel", "digital-precoder"):
        rows, cols = spec.antenna_perm, spec.user_perm
    elif role == "analog-precoder":
        rows, cols = spec.antenna_perm, spec.rf_perm
    elif role == "digital-part-of-hybrid":
        rows, cols = spec.rf_perm, spec.user_perm
    else:
        raise ValueError(f"unknown role {role!r}")
    rows = _check_perm(rows, X.shape[-2], "row")
    cols = _check_perm(cols, X.shape[-1], "column")
    if isinstance(X, torch.Tensor):
        return X[..., torch.as_tensor(rows), :][..., torch.as_tensor(cols)]
    return np.asarray(X)[..., rows, :][..., cols]
