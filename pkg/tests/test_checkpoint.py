import json
import struct

import numpy as np
import pytest

from mtam import checkpoint as ck
from mtam import model as M
from mtam.errors import CompatibilityError, FormatError


@pytest.fixture
def params():
    cfg = M.ModelConfig(n_items=7, n_categories=3, d=4, max_len=5, memory_slots=5, hops=2)
    return M.ModelParams.init(cfg, np.random.default_rng(11))


def test_round_trip_is_bitwise(params, tmp_path):
    path = tmp_path / "m.ckpt"
    digest = ck.save(params, path, extra={"note": "x"})
    back = ck.load(path)
    assert back.config == params.config
    for (ka, a), (kb, b) in zip(params.named_parameters().items(), back.named_parameters().items()):
        assert ka == kb and a.values.tobytes() == b.values.tobytes()
    assert ck.digest(path) == digest
    assert ck.manifest(path)["extra"] == {"note": "x"}


def test_same_params_same_bytes(params):
    assert ck.to_bytes(params) == ck.to_bytes(params.copy())


def test_layout(params):
    blob = ck.to_bytes(params)
    assert blob[:8] == ck.MAGIC
    (n,) = struct.unpack("<I", blob[8:12])
    man = json.loads(blob[12:12 + n])
    assert man["format"] == "mtam-checkpoint" and man["version"] == ck.VERSION
    assert len(blob) == 12 + n + man["payload_bytes"]


def test_flipped_payload_byte_is_detected(params):
    blob = bytearray(ck.to_bytes(params))
    blob[-3] ^= 0x01
    with pytest.raises(FormatError, match="digest"):
        ck.from_bytes(bytes(blob))


def test_truncated_and_foreign_files(params):
    blob = ck.to_bytes(params)
    with pytest.raises(FormatError):
        ck.from_bytes(blob[:-8])
    with pytest.raises(FormatError):
        ck.from_bytes(b"NOTACKPT" + blob[8:])


def _rewrite(blob, edit):
    (n,) = struct.unpack("<I", blob[8:12])
    man = json.loads(blob[12:12 + n])
    edit(man)
    raw = json.dumps(man, sort_keys=True).encode()
    return blob[:8] + struct.pack("<I", len(raw)) + raw + blob[12 + n:]


def test_version_mismatch(params):
    blob = _rewrite(ck.to_bytes(params), lambda m: m.update(version=99))
    with pytest.raises(CompatibilityError):
        ck.from_bytes(blob)


def test_shape_mismatch(params):
    def edit(m):
        m["config"]["d"] = 5
    with pytest.raises(CompatibilityError):
        ck.from_bytes(_rewrite(ck.to_bytes(params), edit))
