import struct

import numpy as np
import pytest

from edaseg.arch import preset
from edaseg.checkpoint import (CheckpointError, checkpoint_bytes, checkpoint_from_bytes,
                               load_checkpoint, save_checkpoint)
from edaseg.network import build, network_forward


@pytest.fixture(scope="module")
def net():
    n = build(preset("tiny-eda-ddb"), 6, seed=2)
    n.buffers = {k: v + 0.25 for k, v in n.buffers.items()}
    return n


def test_header_layout(net):
    data = checkpoint_bytes(net)
    assert data[:4] == b"EDAS"
    assert struct.unpack("<I", data[4:8])[0] == 1
    n = struct.unpack("<I", data[8:12])[0]
    assert data[12:12 + n].decode("utf-8").startswith('{\n  "name": "tiny-eda-ddb"')


def test_save_load_save_bytes(net, tmp_path):
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(net, p1)
    loaded = load_checkpoint(p1)
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.spec == net.spec and loaded.num_classes == 6
    for store in ("params", "buffers"):
        a, b = getattr(net, store), getattr(loaded, store)
        assert list(a) == list(b)
        assert all(np.array_equal(a[k], b[k]) for k in a)


def test_loaded_network_predicts_identically(net):
    loaded = checkpoint_from_bytes(checkpoint_bytes(net))
    x = np.random.default_rng(0).random((1, 3, 32, 32), dtype=np.float32)
    assert np.array_equal(network_forward(net, x)[0], network_forward(loaded, x)[0])


def test_bad_magic(net):
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint_from_bytes(b"XXXX" + checkpoint_bytes(net)[4:])


def test_bad_version(net):
    data = checkpoint_bytes(net)
    with pytest.raises(CheckpointError, match="version 2"):
        checkpoint_from_bytes(data[:4] + struct.pack("<I", 2) + data[8:])


@pytest.mark.parametrize("cut", [2, 10, 100, -1])
def test_truncated(net, cut):
    with pytest.raises(CheckpointError, match="truncated"):
        checkpoint_from_bytes(checkpoint_bytes(net)[:cut])


def test_trailing_bytes(net):
    with pytest.raises(CheckpointError, match="trailing"):
        checkpoint_from_bytes(checkpoint_bytes(net) + b"\0")


def test_spec_mismatch_names_both(net):
    with pytest.raises(CheckpointError, match="tiny-eda-ddb.*tiny-edanet"):
        checkpoint_from_bytes(checkpoint_bytes(net), expect=preset("tiny-edanet"))
    assert checkpoint_from_bytes(checkpoint_bytes(net), expect=preset("tiny-eda-ddb"))
