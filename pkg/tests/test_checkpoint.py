import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from durr import policy as P
from durr import restorer as R
from durr import tensorcore as tc
from durr.cli.checkpoint import (
    MAGIC, ArchMismatchError, BadMagicError, Checkpoint, IntegrityError, TruncatedError, VersionError,
    checkpoint_load, checkpoint_save, config_hash, from_bytes, load_into, to_bytes,
)


def _restorer_ckpt(seed=0, width=0.25):
    params = R.build_restoration_unit(R.RestorerArch(width), seed)
    opt = tc.OptState("adam")
    grads = {k: np.full_like(t.data, 0.01) for k, t in params.items()}
    tc.optimizer_step(params, grads, opt, 1e-3)
    return Checkpoint(params, opt, {"seed": seed, "iteration": 1, "schedule": {"kind": "naive", "pairs": [[25, 8]]},
                                    "config_hash": config_hash({"seed": seed})})


def _same(a: Checkpoint, b: Checkpoint):
    assert a.params.names() == b.params.names()
    for k in a.params.names():
        assert a.params[k].data.dtype == b.params[k].data.dtype == np.float32
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()
    assert a.params.arch == b.params.arch
    assert a.meta == b.meta
    if a.opt_state is None:
        assert b.opt_state is None
    else:
        assert (a.opt_state.method, a.opt_state.step) == (b.opt_state.method, b.opt_state.step)
        sa, sb = a.opt_state.arrays(), b.opt_state.arrays()
        assert sorted(sa) == sorted(sb)
        assert all(sa[k].astype(np.float32).tobytes() == sb[k].tobytes() for k in sa)


def test_round_trip_is_bit_exact(tmp_path):
    ck = _restorer_ckpt()
    path = tmp_path / "r.ckpt"
    checkpoint_save(ck.params, ck.opt_state, ck.meta, path)
    back = checkpoint_load(path)
    _same(ck, back)
    assert to_bytes(back) == path.read_bytes()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["restorer", "policy"]), st.sampled_from([0.1, 0.25, 0.5]),
       st.booleans())
def test_round_trip_random_params(seed, unit, width, with_opt):
    if unit == "restorer":
        params = R.build_restoration_unit(R.RestorerArch(width), seed)
    else:
        params = P.build_policy_unit(P.PolicyArch(width, with_observation=bool(seed % 2)), seed)
    rng = np.random.default_rng(seed)
    for _, t in params.items():
        t.data[...] = rng.standard_normal(t.shape).astype(np.float32)
    opt = None
    if with_opt:
        opt = tc.OptState("rmsprop")
        tc.optimizer_step(params, {k: rng.standard_normal(t.shape) for k, t in params.items()}, opt, 1e-4)
    ck = Checkpoint(params, opt, {"seed": seed, "unit_note": unit})
    blob = to_bytes(ck)
    back = from_bytes(blob)
    _same(ck, back)
    assert to_bytes(back) == blob


def test_float64_params_stored_as_float32():
    params = R.build_restoration_unit(R.RestorerArch(0.25), 0, dtype=np.float64)
    back = from_bytes(to_bytes(Checkpoint(params)))
    for k in params.names():
        assert np.array_equal(back.params[k].data, params[k].data.astype(np.float32))


def test_corrupt_payload_byte_is_detected():
    blob = bytearray(to_bytes(_restorer_ckpt()))
    blob[len(blob) // 2] ^= 0xFF
    with pytest.raises(IntegrityError):
        from_bytes(bytes(blob))


def test_bad_magic():
    blob = to_bytes(_restorer_ckpt())
    with pytest.raises(BadMagicError):
        from_bytes(b"NOTACKPT" + blob[8:])


def test_version_skew():
    blob = to_bytes(_restorer_ckpt())
    with pytest.raises(VersionError):
        from_bytes(MAGIC + struct.pack("<I", 99) + blob[12:])


@pytest.mark.parametrize("cut", [4, 11, 40, 500, -10, -1])
def test_truncated(cut):
    blob = to_bytes(_restorer_ckpt())
    with pytest.raises(TruncatedError):
        from_bytes(blob[:cut])


def test_trailing_bytes():
    with pytest.raises(IntegrityError):
        from_bytes(to_bytes(_restorer_ckpt()) + b"\x00")


def test_wrong_unit_is_arch_mismatch(tmp_path):
    ck = _restorer_ckpt()
    path = tmp_path / "r.ckpt"
    checkpoint_save(ck.params, ck.opt_state, ck.meta, path)
    with pytest.raises(ArchMismatchError):
        checkpoint_load(path, expect_unit="policy")
    pol = P.build_policy_unit(P.PolicyArch(0.25), 0)
    before = {k: t.data.copy() for k, t in pol.items()}
    with pytest.raises(ArchMismatchError):
        load_into(pol, path)
    assert all(np.array_equal(before[k], pol[k].data) for k in before)


def test_load_into_rejects_other_width_untouched(tmp_path):
    ck = _restorer_ckpt(width=0.25)
    path = tmp_path / "r.ckpt"
    checkpoint_save(ck.params, ck.opt_state, ck.meta, path)
    other = R.build_restoration_unit(R.RestorerArch(0.5), 1)
    before = {k: t.data.copy() for k, t in other.items()}
    with pytest.raises(ArchMismatchError):
        load_into(other, path)
    assert all(np.array_equal(before[k], other[k].data) for k in before)
    same = R.build_restoration_unit(R.RestorerArch(0.25), 7)
    load_into(same, path)
    assert all(np.array_equal(same[k].data, ck.params[k].data) for k in same.names())


def test_config_hash_is_canonical():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
    assert len(config_hash({})) == 16
