import struct

import numpy as np
import pytest

from gateseed.nn import PENCILNET, CheckpointError, forward, init_params, load_checkpoint, save_checkpoint
from gateseed.nn.checkpoint import MAGIC
from helpers import REDUCED


@pytest.fixture
def saved(tmp_path):
    p = init_params(seed=8)
    p.running["bn2.var"][:] = 2.5
    path = tmp_path / "m.pcln"
    save_checkpoint(path, p)
    return p, path


def test_roundtrip_bit_exact(saved):
    p, path = saved
    q = load_checkpoint(path, expect=PENCILNET)
    assert q.arch == p.arch
    for d1, d2 in ((p.weights, q.weights), (p.running, q.running)):
        assert set(d1) == set(d2)
        for k in d1:
            assert d2[k].dtype == np.float32
            np.testing.assert_array_equal(d1[k], d2[k])
    x = np.random.default_rng(0).random((2, 120, 160))
    np.testing.assert_array_equal(forward(p, x)[0], forward(q, x)[0])


def test_header_layout(saved):
    _, path = saved
    raw = path.read_bytes()
    assert raw[:4] == MAGIC == b"PCLN"
    assert struct.unpack("<I", raw[4:8])[0] == 1
    assert raw[8:40] == PENCILNET.digest()


def test_bad_magic(saved, tmp_path):
    _, path = saved
    bad = tmp_path / "bad.pcln"
    bad.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(bad)


def test_bad_version(saved, tmp_path):
    _, path = saved
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    (tmp_path / "v.pcln").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="version 9"):
        load_checkpoint(tmp_path / "v.pcln")


def test_digest_mismatch(saved, tmp_path):
    _, path = saved
    raw = bytearray(path.read_bytes())
    raw[8] ^= 0xFF
    (tmp_path / "d.pcln").write_bytes(bytes(raw))
    with pytest.raises(CheckpointError, match="digest"):
        load_checkpoint(tmp_path / "d.pcln")


def test_truncated_and_trailing(saved, tmp_path):
    _, path = saved
    raw = path.read_bytes()
    (tmp_path / "t.pcln").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "t.pcln")
    (tmp_path / "x.pcln").write_bytes(raw + b"\0")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "x.pcln")


def test_expected_architecture(tmp_path):
    path = tmp_path / "r.pcln"
    save_checkpoint(path, init_params(REDUCED))
    assert load_checkpoint(path).arch == REDUCED
    with pytest.raises(CheckpointError, match="differs"):
        load_checkpoint(path, expect=PENCILNET)


def test_missing_tensor(tmp_path):
    p = init_params(seed=1)
    del p.weights["dense.b"]
    save_checkpoint(tmp_path / "m.pcln", p)
    with pytest.raises(CheckpointError, match="dense.b"):
        load_checkpoint(tmp_path / "m.pcln")
