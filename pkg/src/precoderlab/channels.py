"""Seeded Rayleigh and Saleh-Valenzuela channel generation plus dataset files.

Every sample draws from its own Philox stream keyed by ``(seed, stream,
index)``, so a dataset is reproducible regardless of generation order.

Dataset file layout (all integers and floats little-endian)::

    b"PRECODERLAB1"              12-byte magic
    uint32                       header length in bytes
    header                       UTF-8 JSON: model, count, seed, stream,
                                 sv config, size distributions, sizes [[K, N], ...]
    per sample, in order         N*K complex entries, row-major, as
                                 interleaved (real, imag) float64 pairs
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"PRECODERLAB1"
MODELS = ("rayleigh", "sv")


def sample_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent Philox generator for one sample."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream, index])))


@dataclass(frozen=True)
class SVConfig:
    n_clusters: int = 4
    n_rays: int = 5

    def __post_init__(self):
        if self.n_clusters < 1 or self.n_rays < 1:
            raise ValueError("SV cluster and ray counts must be >= 1")


@dataclass(frozen=True)
class SizeDistribution:
    """Either a fixed size or a rounded, clamped exponential draw."""

    kind: str = "fixed"
    value: int = 1
    mean: float = 2.0
    max: int = 8

    def __post_init__(self):
        if self.kind == "fixed":
            if self.value < 1:
                raise ValueError("fixed size must be >= 1")
        elif self.kind == "exp":
            if not self.mean > 0:
                raise ValueError("exponential mean must be positive")
            if self.max < 1:
                raise ValueError("exponential max must be >= 1")
        else:
            raise ValueError(f"unknown size distribution kind {self.kind!r}")

    @classmethod
    def fixed(cls, value: int) -> "SizeDistribution":
        return cls("fixed", value=int(value))

    @classmethod
    def exp(cls, mean: float, max: int) -> "SizeDistribution":
        return cls("exp", mean=float(mean), max=int(max))

    @classmethod
    def parse(cls, text: str) -> "SizeDistribution":
        """Parse ``"6"`` or ``"exp:mean=2,max=8"``."""
        text = text.strip()
        if not text.startswith("exp"):
            return cls.fixed(int(text))
        _, _, rest = text.partition(":")
        opts = dict(item.split("=", 1) for item in rest.split(",") if item)
        unknown = set(opts) - {"mean", "max"}
        if unknown or "mean" not in opts or "max" not in opts:
            raise ValueError(f"bad exponential size string {text!r}")
        return cls.exp(float(opts["mean"]), int(opts["max"]))

    def describe(self) -> str:
        if self.kind == "fixed":
            return str(self.value)
        return f"exp:mean={self.mean:g},max={self.max}"


def sample_size(dist: SizeDistribution, rng: np.random.Generator) -> int:
    if dist.kind == "fixed":
        return dist.value
    x = rng.exponential(dist.mean)
    return int(min(max(math.floor(x + 0.5), 1), dist.max))


def complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly symmetric complex Gaussian samples."""
    z = rng.standard_normal(tuple(shape) + (2,)) * math.sqrt(0.5)
    return z[..., 0] + 1j * z[..., 1]


def rayleigh_sample(k: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """N x K i.i.d. CN(0, 1) channel matrix."""
    if k < 1 or n < 1:
        raise ValueError("K and N must be >= 1")
    return complex_gaussian(rng, (n, k))


def array_response(theta, n: int) -> np.ndarray:
    """Half-wavelength ULA response exp(j*pi*n*sin(theta)), unnormalized."""
    if n < 1:
        raise ValueError("N must be >= 1")
    theta = np.asarray(theta, dtype=np.float64)
    idx = np.arange(n)
    return np.exp(1j * np.pi * np.multiply.outer(np.sin(theta), idx))


def sv_sample(k: int, n: int, cfg: SVConfig, rng: np.random.Generator) -> np.ndarray:
    """N x K Saleh-Valenzuela channel, one column per user.

    Each user's channel sums ``n_clusters * n_rays`` paths with CN(0, 1) gains
    and angles uniform on [0, 2*pi).  Steering vectors carry a 1/sqrt(N)
    factor so that E||h||^2 = N, matching the Rayleigh model's power.
    """
    if k < 1 or n < 1:
        raise ValueError("K and N must be >= 1")
    n_paths = cfg.n_clusters * cfg.n_rays
    gains = complex_gaussian(rng, (k, n_paths))
    angles = rng.uniform(0.0, 2.0 * np.pi, size=(k, n_paths))
    steer = array_response(angles, n) / math.sqrt(n)  # (k, paths, n)
    h = math.sqrt(n / n_paths) * np.einsum("kp,kpn->nk", gains, steer)
    return h


@dataclass
class ChannelBatch:
    """A list of N x K channel samples with the recorded generation settings."""

    samples: list[np.ndarray]
    model: str = "rayleigh"
    seed: int = 0
    stream: int = 0
    sv: SVConfig = field(default_factory=SVConfig)
    k_dist: str = ""
    n_dist: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def sizes(self) -> list[tuple[int, int]]:
        """Per-sample (K, N)."""
        return [(h.shape[1], h.shape[0]) for h in self.samples]

    @property
    def variable_size(self) -> bool:
        return len(set(self.sizes)) > 1

    def subset(self, indices) -> "ChannelBatch":
        return ChannelBatch(
            [self.samples[i] for i in indices],
            self.model, self.seed, self.stream, self.sv, self.k_dist, self.n_dist,
        )

    def groups(self) -> dict[tuple[int, int], list[int]]:
        """Sample indices grouped by (K, N), in first-appearance order."""
        out: dict[tuple[int, int], list[int]] = {}
        for i, size in enumerate(self.sizes):
            out.setdefault(size, []).append(i)
        return out

    def stacked(self, indices=None) -> np.ndarray:
        """Stack equally sized samples into a (B, N, K) array."""
        idx = range(len(self)) if indices is None else indices
        arrs = [self.samples[i] for i in idx]
        if len({a.shape for a in arrs}) > 1:
            raise ValueError("cannot stack samples of different sizes")
        return np.stack(arrs)


def generate(
    model: str,
    k_dist: SizeDistribution,
    n_dist: SizeDistribution,
    count: int,
    seed: int,
    sv: SVConfig | None = None,
    stream: int = 0,
) -> ChannelBatch:
    if model not in MODELS:
        raise ValueError(f"unknown channel model {model!r}")
    if count < 1:
        raise ValueError("count must be >= 1")
    sv = sv or SVConfig()
    samples = []
    for i in range(count):
        rng = sample_rng(seed, i, stream)
        k = sample_size(k_dist, rng)
        n = sample_size(n_dist, rng)
        if model == "rayleigh":
            samples.append(rayleigh_sample(k, n, rng))
        else:
            samples.append(sv_sample(k, n, sv, rng))
    return ChannelBatch(samples, model, seed, stream, sv, k_dist.describe(), n_dist.describe())


def write_dataset(batch: ChannelBatch, path) -> None:
    header = {
        "model": batch.model,
        "count": len(batch),
        "seed": batch.seed,
        "stream": batch.stream,
        "sv": asdict(batch.sv),
        "k_dist": batch.k_dist,
        "n_dist": batch.n_dist,
        "sizes": [list(s) for s in batch.sizes],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for h in batch.samples:
            fh.write(np.ascontiguousarray(h, dtype="<c16").tobytes())


def read_dataset(path) -> ChannelBatch:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a dataset file")
    pos = len(MAGIC)
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    samples = []
    for k, n in header["sizes"]:
        nbytes = 16 * k * n
        chunk = data[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"{path}: truncated sample data")
        samples.append(np.frombuffer(chunk, dtype="<c16").reshape(n, k).astype(np.complex128))
        pos += nbytes
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes after sample data")
    return ChannelBatch(
        samples,
        header["model"],
        header["seed"],
        header.get("stream", 0),
        SVConfig(**header["sv"]),
        header.get("k_dist", ""),
        header.get("n_dist", ""),
    )


def gen_dataset(
    model: str,
    k_dist: SizeDistribution,
    n_dist: SizeDistribution,
    count: int,
    seed: int,
    path,
    sv: SVConfig | None = None,
    stream: int = 0,
) -> ChannelBatch:
    batch = generate(model, k_dist, n_dist, count, seed, sv, stream)
    write_dataset(batch, path)
    return batch
