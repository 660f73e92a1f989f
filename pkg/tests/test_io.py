import struct

import numpy as np
import pytest

from fskws import io


def test_fmap_roundtrip_and_layout(tmp_path):
    x = np.random.default_rng(0).normal(size=(49, 10)).astype(np.float32)
    p = tmp_path / "a.fmap"
    io.write_fmap(p, x)
    raw = p.read_bytes()
    assert raw[:4] == b"FMAP" and struct.unpack_from("<II", raw, 4) == (49, 10)
    assert len(raw) == 12 + 4 * 490
    np.testing.assert_array_equal(io.read_fmap(p), x)


def test_fmap_vector_is_one_row(tmp_path):
    io.write_fmap(tmp_path / "v.fmap", np.arange(5.0))
    assert io.read_fmap(tmp_path / "v.fmap").shape == (1, 5)


def test_fmap_rejects_bad_files(tmp_path):
    p = tmp_path / "b.fmap"
    p.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(ValueError, match="not an FMAP"):
        io.read_fmap(p)
    io.write_fmap(p, np.ones((2, 2)))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(ValueError, match="does not match"):
        io.read_fmap(p)
    with pytest.raises(ValueError, match="matrix"):
        io.write_fmap(p, np.ones((2, 2, 2)))


def test_weights_roundtrip_keeps_order_and_shapes(tmp_path):
    rng = np.random.default_rng(1)
    w = {"z.conv": rng.normal(size=(4, 1, 3, 3)), "a.bias": rng.normal(size=4), "scalar": np.float32(2.5)}
    p = tmp_path / "w.wgt"
    io.write_weights(p, w)
    back = io.read_weights(p)
    assert list(back) == list(w)
    for k in w:
        np.testing.assert_array_equal(back[k], np.asarray(w[k], dtype=np.float32))
        assert back[k].dtype == np.float32


def test_weights_reject_trailing_bytes_and_magic(tmp_path):
    p = tmp_path / "w.wgt"
    io.write_weights(p, {"a": np.ones(3)})
    p.write_bytes(p.read_bytes() + b"\0")
    with pytest.raises(ValueError, match="trailing"):
        io.read_weights(p)
    p.write_bytes(b"WGT0" + bytes(4))
    with pytest.raises(ValueError, match="WGT1"):
        io.read_weights(p)


def test_kv_roundtrip(tmp_path):
    p = tmp_path / "m.kv"
    io.write_kv(p, {"lr": 0.1, "names": ["a", "b"], "n": 3})
    assert io.read_kv(p) == {"lr": "0.1", "names": "a,b", "n": "3"}
    p.write_text("# note\nbroken\n")
    with pytest.raises(ValueError, match=":2:"):
        io.read_kv(p)
