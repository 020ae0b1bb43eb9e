import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from emollama import mmef


def reference_bytes(x):
    x = np.asarray(x, dtype=np.float32)
    head = b"MMEF" + struct.pack(f"<II{x.ndim}I", 1, x.ndim, *x.shape)
    return head + x.astype("<f4").tobytes()


def test_layout_matches_hand_packed_bytes():
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    assert mmef.dumps_tensor(x) == reference_bytes(x)
    assert mmef.dumps_tensor(x)[:4] == bytes([0x4D, 0x4D, 0x45, 0x46])


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5),
                  elements=st.floats(-1e6, 1e6, width=32)))
def test_tensor_roundtrip(x):
    y = mmef.loads_tensor(mmef.dumps_tensor(x))
    assert y.shape == x.shape
    assert np.array_equal(y, x)


def test_bad_magic_and_version():
    data = mmef.dumps_tensor(np.zeros(2, np.float32))
    with pytest.raises(mmef.FormatError):
        mmef.loads_tensor(b"XXXX" + data[4:])
    with pytest.raises(mmef.FormatError):
        mmef.loads_tensor(data[:4] + struct.pack("<I", 2) + data[8:])
    with pytest.raises(mmef.FormatError):
        mmef.loads_tensor(data[:-1])


def test_non_finite_rejected():
    with pytest.raises((ValueError, mmef.FormatError)):
        mmef.dumps_tensor(np.array([1.0, np.nan]))


def test_container_roundtrip_and_manifest(tmp_path):
    tensors = {"a.weight": np.ones((2, 3), np.float32), "b": np.arange(4, dtype=np.float32)}
    path = tmp_path / "c.mmef"
    mmef.save_container(path, tensors)
    back = mmef.load_container(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert np.array_equal(back[k], tensors[k])
    manifest = mmef.container_manifest(path)
    assert [(n, d) for n, d, _ in manifest] == [("a.weight", (2, 3)), ("b", (4,))]
    raw = path.read_bytes()
    assert struct.unpack("<I", raw[:4])[0] == 2
    for name, _, offset in manifest:
        # each offset points at the tensor block following the name
        assert raw[offset:offset + 4] == b"MMEF"
        assert raw[offset - len(name):offset] == name.encode()


def test_manifest_roundtrip(tmp_path):
    recs = [
        mmef.SampleRecord("s1", "audio/s1.mmef", "video/s1.mmef", "global/s1.mmef", "hello there", "happy",
                          "recognition", "train", "<think> x </think> <answer> happy </answer>"),
        mmef.SampleRecord("s2", "a.mmef", "v.mmef", "g.mmef", "bye", "sad,worried", "recognition", "test"),
    ]
    path = tmp_path / "manifest.tsv"
    mmef.write_manifest(path, recs)
    lines = path.read_text().splitlines()
    assert all(len(line.split("\t")) == 9 for line in lines)
    back = mmef.read_manifest(path)
    assert [r.id for r in back] == ["s1", "s2"]
    assert back[1].labels == ["sad", "worried"]
    assert back[0].reasoning_target == recs[0].reasoning_target
    assert back[0].resolve(back[0].audio_path) == tmp_path / "audio/s1.mmef"


def test_manifest_rejects_tabs():
    rec = mmef.SampleRecord("s", "a", "v", "g", "tab\there", "happy")
    with pytest.raises(ValueError):
        mmef.format_record(rec)
