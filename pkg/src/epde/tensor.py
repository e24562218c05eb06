"""Data tensor container, axis scrambling and the ``EPDE`` binary format.

Binary layout (all little-endian)::

    b"EPDE"                 magic
    u16                     format version (1)
    u8                      ndim
    u64 * ndim              dims
    f64 * prod(dims)        row-major payload
    [u8 * ceil(n / 8)]      optional observation mask, packed bits, LSB first

The mask block is present iff the bytes after the payload are exactly its
size.  Per-axis metadata, scramble records and any extra annotations live in
a JSON sidecar at ``<path>.meta.json``.

Random draws use numpy's Philox 4x64-10 counter-based generator
(``rng_for(seed)``), so seeds reproduce across platforms.
"""
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"EPDE"
VERSION = 1
AXES = ("p", "t", "s")
RNG_NAME = "philox4x64-10/numpy-v1"


class FormatError(ValueError):
    """Raised for malformed or truncated tensor files."""


def rng_for(seed):
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class DataTensor:
    """Dense (parameter, time, space) tensor with optional observation mask.

    ``axis_meta`` maps an axis name (``"p"``, ``"t"``, ``"s"``) to a dict of
    per-channel ground-truth arrays, e.g. ``{"t": {"time": ...}}``.
    """

    values: np.ndarray
    mask: np.ndarray = None
    axis_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"DataTensor needs 3 axes, got shape {v.shape}")
        object.__setattr__(self, "values", v)
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != v.shape:
                raise ValueError("mask shape differs from values shape")
            object.__setattr__(self, "mask", m)
            observed = v[m]
        else:
            observed = v
        if not np.isfinite(observed).all():
            raise ValueError("observed values must be finite")
        meta = {}
        for ax, cols in (self.axis_meta or {}).items():
            if ax not in AXES:
                raise ValueError(f"unknown axis {ax!r}")
            n = v.shape[AXES.index(ax)]
            meta[ax] = {}
            for name, col in cols.items():
                col = np.asarray(col)
                if col.shape[0] != n:
                    raise ValueError(f"axis_meta[{ax}][{name}] has {col.shape[0]} rows, axis has {n}")
                meta[ax][name] = col
        object.__setattr__(self, "axis_meta", meta)

    @property
    def dims(self):
        return self.values.shape

    @classmethod
    def from_matrix(cls, m, axis_meta=None):
        """Wrap a (time x space) matrix as a tensor with one parameter channel."""
        return cls(np.asarray(m, dtype=np.float64)[None], axis_meta=axis_meta or {})

    def matrix(self):
        if self.dims[0] != 1:
            raise ValueError("tensor has more than one parameter channel")
        return self.values[0]

    def observed(self):
        return np.ones(self.dims, bool) if self.mask is None else self.mask

    def equals(self, other):
        """Bit-exact equality of values, mask and metadata."""
        if self.dims != other.dims:
            return False
        if self.values.tobytes() != other.values.tobytes():
            return False
        if (self.mask is None) != (other.mask is None):
            return False
        if self.mask is not None and not np.array_equal(self.mask, other.mask):
            return False
        if set(self.axis_meta) != set(other.axis_meta):
            return False
        for ax, cols in self.axis_meta.items():
            if set(cols) != set(other.axis_meta[ax]):
                return False
            for k, v in cols.items():
                if not np.array_equal(v, other.axis_meta[ax][k]):
                    return False
        return True


@dataclass(frozen=True)
class ScrambleRecord:
    """Answer key of a scramble.

    ``perm[a][j]`` is the original index of output channel ``j`` on axis
    ``a``; ``dropped[a]`` are the removed original indices (sorted).
    """

    perm: dict
    dropped: dict
    seed: int
    n_original: dict

    def to_json(self):
        return {
            "perm": {a: [int(i) for i in self.perm[a]] for a in AXES},
            "dropped": {a: [int(i) for i in self.dropped[a]] for a in AXES},
            "n_original": {a: int(self.n_original[a]) for a in AXES},
            "seed": int(self.seed),
            "rng": RNG_NAME,
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            perm={a: np.asarray(d["perm"][a], dtype=np.int64) for a in AXES},
            dropped={a: np.asarray(d["dropped"][a], dtype=np.int64) for a in AXES},
            seed=int(d["seed"]),
            n_original={a: int(d["n_original"][a]) for a in AXES},
        )


def _take(t, perm):
    v = t.values[np.ix_(perm["p"], perm["t"], perm["s"])]
    m = None if t.mask is None else t.mask[np.ix_(perm["p"], perm["t"], perm["s"])]
    meta = {ax: {k: col[perm[ax]] for k, col in cols.items()} for ax, cols in t.axis_meta.items()}
    return DataTensor(v, m, meta)


def scramble(t, axes="pts", drop=None, seed=0):
    """Permute (and optionally thin) the channels of ``t`` along ``axes``.

    ``drop`` maps axis name to the fraction of channels removed entirely;
    ``floor(fraction * N)`` channels are dropped.  Draws per axis, in p/t/s
    order: dropped indices, then the permutation of the retained ones.
    Axis metadata travels with its channels.
    """
    drop = dict(drop or {})
    for ax in list(axes) + list(drop):
        if ax not in AXES:
            raise ValueError(f"unknown axis {ax!r}")
    rng = rng_for(seed)
    perm, dropped, n_orig = {}, {}, {}
    for i, ax in enumerate(AXES):
        n = t.dims[i]
        n_orig[ax] = n
        frac = float(drop.get(ax, 0.0))
        if not 0.0 <= frac < 1.0:
            raise ValueError(f"drop fraction for {ax} must be in [0, 1)")
        n_drop = math.floor(frac * n)
        if n - n_drop < 1:
            raise ValueError(f"axis {ax} would be empty")
        if n_drop and n - n_drop < 4:
            raise ValueError(f"dropping leaves {n - n_drop} < 4 channels on axis {ax}")
        gone = np.sort(rng.choice(n, size=n_drop, replace=False)) if n_drop else np.zeros(0, np.int64)
        keep = np.setdiff1d(np.arange(n), gone)
        perm[ax] = rng.permutation(keep) if ax in axes else keep
        dropped[ax] = gone.astype(np.int64)
    rec = ScrambleRecord(perm=perm, dropped=dropped, seed=int(seed), n_original=n_orig)
    return _take(t, perm), rec


def unscramble(t, rec):
    """Undo a scramble; dropped channels come back as masked NaN entries."""
    for i, ax in enumerate(AXES):
        if t.dims[i] != len(rec.perm[ax]):
            raise ValueError(f"axis {ax}: tensor has {t.dims[i]} channels, record {len(rec.perm[ax])}")
    shape = tuple(rec.n_original[ax] for ax in AXES)
    values = np.full(shape, np.nan)
    mask = np.zeros(shape, bool)
    idx = np.ix_(rec.perm["p"], rec.perm["t"], rec.perm["s"])
    values[idx] = t.values
    mask[idx] = t.observed()
    meta = {}
    for ax, cols in t.axis_meta.items():
        n = rec.n_original[ax]
        meta[ax] = {}
        for k, col in cols.items():
            full = np.full((n,) + col.shape[1:], np.nan) if col.dtype.kind == "f" else np.zeros((n,) + col.shape[1:], col.dtype)
            full[rec.perm[ax]] = col
            meta[ax][k] = full
    if mask.all():
        mask = None
    return DataTensor(values, mask, meta)


# ---------------------------------------------------------------------------
# binary IO

_HEAD = struct.Struct("<4sHB")


def write_array(path, values, mask=None):
    values = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, values.ndim))
        fh.write(struct.pack(f"<{values.ndim}Q", *values.shape))
        fh.write(values.tobytes(order="C"))
        if mask is not None:
            fh.write(np.packbits(np.asarray(mask, bool).ravel(), bitorder="little").tobytes())


def read_array(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEAD.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, ndim = _HEAD.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    off = _HEAD.size
    if len(raw) < off + 8 * ndim:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    n = int(np.prod(dims)) if ndim else 1
    if len(raw) < off + 8 * n:
        raise FormatError(f"{path}: truncated payload")
    values = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(dims).astype(np.float64)
    off += 8 * n
    rest = len(raw) - off
    mask = None
    if rest:
        nbytes = (n + 7) // 8
        if rest != nbytes:
            raise FormatError(f"{path}: {rest} trailing bytes, expected 0 or {nbytes}")
        bits = np.unpackbits(np.frombuffer(raw, np.uint8, offset=off), bitorder="little")[:n]
        mask = bits.reshape(dims).astype(bool)
    return values, mask


def _jsonable(col):
    return col.tolist()


def meta_path(path):
    return Path(str(path) + ".meta.json")


def save(t, path, record=None, extra=None):
    """Write ``t`` to ``path`` plus the JSON sidecar."""
    write_array(path, t.values, t.mask)
    side = {
        "axis_meta": {ax: {k: _jsonable(v) for k, v in cols.items()} for ax, cols in t.axis_meta.items()},
        "scramble": None if record is None else record.to_json(),
        "extra": extra or {},
    }
    meta_path(path).write_text(json.dumps(side, indent=1, sort_keys=True))


def load(path, with_sidecar=False):
    """Read a tensor; ``with_sidecar=True`` also returns (record, extra)."""
    values, mask = read_array(path)
    if values.ndim != 3:
        raise FormatError(f"{path}: expected 3 axes, found {values.ndim}")
    mp = meta_path(path)
    side = json.loads(mp.read_text()) if mp.exists() else {"axis_meta": {}, "scramble": None, "extra": {}}
    meta = {ax: {k: np.asarray(v) for k, v in cols.items()} for ax, cols in side.get("axis_meta", {}).items()}
    t = DataTensor(values, mask, meta)
    if not with_sidecar:
        return t
    rec = side.get("scramble")
    return t, (None if rec is None else ScrambleRecord.from_json(rec)), side.get("extra", {})
