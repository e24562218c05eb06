import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from epde.tensor import (DataTensor, FormatError, ScrambleRecord, load, save, scramble,
                         unscramble)


def distinct(shape, seed=0):
    n = int(np.prod(shape))
    return DataTensor(np.random.default_rng(seed).permutation(n).reshape(shape).astype(float))


def test_invalid_shapes_rejected():
    with pytest.raises(ValueError):
        DataTensor(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        DataTensor(np.zeros((2, 2, 2)), mask=np.ones((2, 2), bool))
    with pytest.raises(ValueError):
        DataTensor(np.array([[[np.nan]]]))
    with pytest.raises(ValueError):
        DataTensor(np.zeros((1, 3, 2)), axis_meta={"t": {"time": np.arange(4)}})


def test_unobserved_entries_may_be_nan():
    v = np.zeros((1, 2, 2))
    v[0, 0, 0] = np.nan
    m = np.ones_like(v, bool)
    m[0, 0, 0] = False
    assert DataTensor(v, m).observed().sum() == 3


def test_identity_permutation_is_a_no_op():
    t = distinct((3, 4, 5))
    out, rec = scramble(t, axes="", seed=3)
    assert out.equals(t)
    assert all((rec.perm[a] == np.arange(n)).all() for a, n in zip("pts", t.dims))


def test_time_slabs_follow_the_record():
    t = distinct((3, 3, 3))
    out, rec = scramble(t, axes="t", seed=7)
    for j in range(3):
        np.testing.assert_array_equal(out.values[:, j, :], t.values[:, rec.perm["t"][j], :])
    # explicit permutation (2, 0, 1) through the record machinery
    rec = ScrambleRecord({"p": np.arange(3), "t": np.array([2, 0, 1]), "s": np.arange(3)},
                         {a: np.zeros(0, int) for a in "pts"}, 0, {a: 3 for a in "pts"})
    back = unscramble(DataTensor(t.values[:, [2, 0, 1], :]), rec)
    assert back.equals(t)


def test_drop_third_of_61_times_leaves_41():
    t = DataTensor(np.zeros((2, 61, 5)))
    out, rec = scramble(t, axes="t", drop={"t": 1 / 3}, seed=1)
    assert out.dims == (2, 41, 5)
    assert len(rec.dropped["t"]) == 20


def test_drop_must_leave_four_channels():
    with pytest.raises(ValueError):
        scramble(DataTensor(np.zeros((1, 5, 3))), drop={"t": 0.5})
    with pytest.raises(ValueError):
        scramble(DataTensor(np.zeros((1, 5, 3))), drop={"t": 1.0})
    with pytest.raises(ValueError):
        scramble(DataTensor(np.zeros((1, 5, 3))), axes="q")


def test_dropped_channels_come_back_masked():
    t = distinct((3, 10, 4))
    out, rec = scramble(t, drop={"t": 0.2}, seed=5)
    assert len(rec.dropped["t"]) == 2
    back = unscramble(out, rec)
    assert (~back.mask).sum() == 2 * 3 * 4
    np.testing.assert_array_equal(back.values[back.mask], t.values[back.mask])


def test_unscramble_rejects_mismatched_dims():
    t = distinct((2, 4, 4))
    _, rec = scramble(t, seed=0)
    with pytest.raises(ValueError):
        unscramble(distinct((2, 5, 4)), rec)


def test_metadata_travels_with_channels():
    t = DataTensor(np.zeros((1, 6, 2)), axis_meta={"t": {"time": np.arange(6.0) * 0.5}})
    out, rec = scramble(t, axes="t", seed=2)
    np.testing.assert_array_equal(out.axis_meta["t"]["time"], 0.5 * rec.perm["t"])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(4, 7), st.integers(6, 9), st.text("pts", max_size=3),
       st.integers(0, 2 ** 32), st.floats(0, 0.3))
def test_round_trip_and_slab_integrity(n_p, n_t, n_s, axes, seed, frac):
    t = distinct((n_p, n_t, n_s), seed % 97)
    out, rec = scramble(t, axes=axes, drop={"s": frac}, seed=seed)
    again, rec2 = scramble(t, axes=axes, drop={"s": frac}, seed=seed)
    assert again.equals(out) and rec2.to_json() == rec.to_json()
    back = unscramble(out, rec)
    obs = back.observed()
    np.testing.assert_array_equal(back.values[obs], t.values[obs])
    assert sorted(out.values.ravel()) == sorted(t.values[obs])
    for j in range(out.dims[1]):
        slab = set(out.values[:, j, :].ravel())
        assert sum(slab <= set(t.values[:, i, :].ravel()) for i in range(n_t)) == 1


def test_save_load_bit_exact(tmp_path):
    v = np.random.default_rng(0).normal(size=(2, 3, 4))
    m = np.random.default_rng(1).random((2, 3, 4)) > 0.3
    t = DataTensor(v, m, {"p": {"D_e": np.array([0.1, 0.2])}, "s": {"cell": np.arange(4)}})
    _, rec = scramble(t, seed=4)
    save(t, tmp_path / "a.epde", record=rec, extra={"note": 1})
    u, rec2, extra = load(tmp_path / "a.epde", with_sidecar=True)
    assert u.equals(t)
    assert rec2.to_json() == rec.to_json() and extra == {"note": 1}


def test_payload_size(tmp_path):
    save(DataTensor(np.ones((2, 2, 2))), tmp_path / "b.epde")
    header = 4 + 2 + 1 + 3 * 8
    assert (tmp_path / "b.epde").stat().st_size == header + 64


def test_corrupt_files_rejected(tmp_path):
    p = tmp_path / "c.epde"
    save(DataTensor(np.ones((1, 2, 2))), p)
    raw = bytearray(p.read_bytes())
    p.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(FormatError):
        load(p)
    p.write_bytes(bytes(raw[:-3]))
    with pytest.raises(FormatError):
        load(p)
    bad = bytearray(raw)
    bad[4] = 9
    p.write_bytes(bytes(bad))
    with pytest.raises(FormatError, match="version"):
        load(p)
