"""Complex linear-algebra primitives and the gradient contract.

Complex matrices are plain ``complex128`` arrays (numpy) or tensors (torch);
no wrapper class is used.  Learnable parameters live in :class:`ParamVector`,
an ordered collection of named real segments that can be flattened into a
single vector for the optimizer and for finite-difference checks.

Analytic gradients come from torch's reverse-mode autograd, run entirely in
64-bit precision.  :func:`fd_gradient` is the independent check.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np
import torch

CDTYPE = torch.complex128
RDTYPE = torch.float64


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or Inf."""


def as_cmatrix(x, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Validate and return ``x`` as a finite 2-D complex128 array."""
    m = np.asarray(x, dtype=np.complex128)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    if rows is not None and m.shape[0] != rows:
        raise ValueError(f"expected {rows} rows, got {m.shape[0]}")
    if cols is not None and m.shape[1] != cols:
        raise ValueError(f"expected {cols} columns, got {m.shape[1]}")
    if not np.all(np.isfinite(m.view(np.float64))):
        raise NonFiniteError("matrix has non-finite entries")
    return m


def hermitian_inner(a, b) -> complex:
    """Return ``sum(conj(a_i) * b_i)``."""
    a = np.ravel(np.asarray(a, dtype=np.complex128))
    b = np.ravel(np.asarray(b, dtype=np.complex128))
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("empty vectors")
    return complex(np.vdot(a, b))


def fro_norm(m) -> float:
    m = np.asarray(m, dtype=np.complex128)
    return float(np.sqrt(np.sum(m.real**2 + m.imag**2)))


def kron(a, b) -> np.ndarray:
    return np.kron(as_cmatrix(a), as_cmatrix(b))


def ctanh(m):
    """tanh applied separately to the real and imaginary parts.

    Works for numpy arrays and torch tensors; real inputs pass through as
    plain tanh.
    """
    if isinstance(m, torch.Tensor):
        if m.is_complex():
            return torch.complex(torch.tanh(m.real), torch.tanh(m.imag))
        return torch.tanh(m)
    m = np.asarray(m)
    if np.iscomplexobj(m):
        return np.tanh(m.real) + 1j * np.tanh(m.imag)
    return np.tanh(m)


@dataclass
class ParamVector:
    """Ordered named real parameter segments.

    Segments keep their array shape; :meth:`flatten` concatenates them in
    insertion order.
    """

    segments: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.segments = {
            name: np.array(v, dtype=np.float64) for name, v in self.segments.items()
        }

    @property
    def names(self) -> list[str]:
        return list(self.segments)

    @property
    def size(self) -> int:
        return sum(v.size for v in self.segments.values())

    def __getitem__(self, name: str) -> np.ndarray:
        return self.segments[name]

    def __contains__(self, name: str) -> bool:
        return name in self.segments

    def add(self, name: str, values) -> None:
        if name in self.segments:
            raise KeyError(f"duplicate segment name {name!r}")
        self.segments[name] = np.array(values, dtype=np.float64)

    def flatten(self) -> np.ndarray:
        if not self.segments:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self.segments.values()])

    def with_flat(self, flat) -> "ParamVector":
        """Return a copy whose values are taken from the flat vector ``flat``."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.size:
            raise ValueError(f"flat vector has {flat.size} entries, expected {self.size}")
        out, pos = {}, 0
        for name, v in self.segments.items():
            out[name] = flat[pos : pos + v.size].reshape(v.shape).copy()
            pos += v.size
        return ParamVector(out)

    def segment_slices(self) -> dict[str, slice]:
        slices, pos = {}, 0
        for name, v in self.segments.items():
            slices[name] = slice(pos, pos + v.size)
            pos += v.size
        return slices

    def copy(self) -> "ParamVector":
        return ParamVector({k: v.copy() for k, v in self.segments.items()})

    def to_torch(self, requires_grad: bool = False) -> dict[str, torch.Tensor]:
        return {
            name: torch.tensor(v, dtype=RDTYPE, requires_grad=requires_grad)
            for name, v in self.segments.items()
        }

    def allclose(self, other: "ParamVector", atol: float = 0.0) -> bool:
        if self.names != other.names:
            return False
        return all(
            np.allclose(self[n], other[n], rtol=0.0, atol=atol) for n in self.names
        )


def fd_gradient(f: Callable[[ParamVector], float], x: ParamVector, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of ``x``."""
    if not h > 0:
        raise ValueError("step h must be positive")
    base = x.flatten()
    grad = np.empty_like(base)
    for i in range(base.size):
        up = base.copy()
        dn = base.copy()
        up[i] += h
        dn[i] -= h
        fu = float(f(x.with_flat(up)))
        fd = float(f(x.with_flat(dn)))
        if not (np.isfinite(fu) and np.isfinite(fd)):
            raise NonFiniteError(f"non-finite function value at coordinate {i}")
        grad[i] = (fu - fd) / (2.0 * h)
    return grad


def loss_and_grad(
    evaluate: Callable[[Mapping[str, torch.Tensor]], torch.Tensor], x: ParamVector
) -> tuple[float, np.ndarray]:
    """Evaluate ``evaluate`` on torch views of ``x`` and backpropagate.

    ``evaluate`` receives a mapping from segment name to a real tensor and
    returns a real scalar tensor.  Segments it never touches get a zero
    gradient.
    """
    tensors = x.to_torch(requires_grad=True)
    loss = evaluate(tensors)
    if not torch.isfinite(loss):
        raise NonFiniteError("loss is not finite")
    loss.backward()
    parts = []
    for name in x.names:
        g = tensors[name].grad
        parts.append(np.zeros(x[name].size) if g is None else g.detach().numpy().ravel())
    grad = np.concatenate(parts) if parts else np.zeros(0)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("gradient has non-finite entries")
    return float(loss.detach()), grad


def torch_scalar_fn(evaluate: Callable[[Mapping[str, torch.Tensor]], torch.Tensor]):
    """Adapt a torch evaluation to the plain ``ParamVector -> float`` form."""

    def f(x: ParamVector) -> float:
        with torch.no_grad():
            return float(evaluate(x.to_torch()))

    return f


def relative_error(a, n) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return np.abs(a - n) / np.maximum(1e-12, np.maximum(np.abs(a), np.abs(n)))


@dataclass
class GradReport:
    """Analytic vs central-difference gradient, one entry per coordinate."""

    names: list[str]
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def rel_error(self) -> np.ndarray:
        return relative_error(self.analytic, self.numeric)

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max()) if self.analytic.size else 0.0

    def rows(self) -> Iterable[tuple[str, float, float, float]]:
        for name, a, n, e in zip(self.names, self.analytic, self.numeric, self.rel_error):
            yield name, float(a), float(n), float(e)

    def to_dict(self) -> dict:
        return {
            "max_rel_error": self.max_rel_error,
            "entries": [
                {"param": name, "analytic": a, "numeric": n, "rel_error": e}
                for name, a, n, e in self.rows()
            ],
        }


def coordinate_names(x: ParamVector) -> list[str]:
    names = []
    for name, v in x.segments.items():
        names.extend(f"{name}[{i}]" for i in range(v.size))
    return names


def check_gradient(
    evaluate: Callable[[Mapping[str, torch.Tensor]], torch.Tensor],
    x: ParamVector,
    h: float = 1e-5,
) -> GradReport:
    _, analytic = loss_and_grad(evaluate, x)
    numeric = fd_gradient(torch_scalar_fn(evaluate), x, h)
    return GradReport(coordinate_names(x), analytic, numeric)
