import json
import struct

import numpy as np
import pytest

from precoderlab import checkpoint as ck
from precoderlab.gnn_digital import GnnArch
from precoderlab.gnn_hybrid import HybridArch
from precoderlab.training import AdamState, Model


def make(kind="gradient"):
    if kind == "hybrid":
        model = Model("hybrid-se", "hybrid", HybridArch(1, 2, 3, 2))
    else:
        model = Model("digital-se", kind, GnnArch(2, 3))
    p = model.init_params(7)
    rng = np.random.default_rng(0)
    adam = AdamState(rng.standard_normal(p.size), rng.random(p.size), 12)
    return ck.Checkpoint(model, p, adam, epoch=4, seed=7, snr_db=5.0, best_epoch=2, best_val_ratio=0.8, config={"lr": 0.01})


@pytest.mark.parametrize("kind", ["gradient", "vanilla", "hybrid"])
def test_roundtrip(tmp_path, kind):
    c = make(kind)
    ck.save(c, tmp_path / "m.ckpt")
    d = ck.load(tmp_path / "m.ckpt")
    assert d.model == c.model
    np.testing.assert_array_equal(d.params.flatten(), c.params.flatten())
    assert d.params.names == c.params.names
    np.testing.assert_array_equal(d.adam.m, c.adam.m)
    np.testing.assert_array_equal(d.adam.v, c.adam.v)
    assert (d.adam.step, d.epoch, d.seed, d.snr_db, d.best_epoch, d.best_val_ratio) == (12, 4, 7, 5.0, 2, 0.8)
    assert d.config == {"lr": 0.01}


def test_layout(tmp_path):
    c = make()
    ck.save(c, tmp_path / "m.ckpt")
    raw = (tmp_path / "m.ckpt").read_bytes()
    assert raw.startswith(b"PRECODERLAB-CKPT1")
    (hlen,) = struct.unpack_from("<I", raw, 17)
    header = json.loads(raw[21 : 21 + hlen])
    assert header["task"] == "digital-se" and header["arch"] == {"layers": 2, "width": 3}
    first = header["segments"][0]
    vals = np.frombuffer(raw[21 + hlen : 21 + hlen + 8 * np.prod(first["shape"])], "<f8")
    np.testing.assert_array_equal(vals, c.params[first["name"]].ravel())


def test_bytes_deterministic(tmp_path):
    ck.save(make(), tmp_path / "a")
    ck.save(make(), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_nan_best_ratio(tmp_path):
    c = make()
    c.best_val_ratio = float("nan")
    ck.save(c, tmp_path / "m")
    assert np.isnan(ck.load(tmp_path / "m").best_val_ratio)


@pytest.mark.parametrize(
    "mangle",
    [
        lambda b: b"NOTACKPT" + b[8:],
        lambda b: b[:-8],
        lambda b: b + b"\0",
        lambda b: b[:19],
    ],
)
def test_rejects_corrupt(tmp_path, mangle):
    ck.save(make(), tmp_path / "m")
    (tmp_path / "m").write_bytes(mangle((tmp_path / "m").read_bytes()))
    with pytest.raises(ck.CheckpointError):
        ck.load(tmp_path / "m")


def test_rejects_arch_mismatch(tmp_path):
    c = make()
    c.model = Model("digital-se", "gradient", GnnArch(3, 3))
    ck.save(c, tmp_path / "m")
    with pytest.raises(ck.CheckpointError):
        ck.load(tmp_path / "m")
