"""Event streams, dataset containers, splits and binning.

An EventStream holds the sorted (time, unit) spikes of one sample. A
DatasetContainer groups many samples with labels, speaker ids and label names
and is stored in the ESF v1 binary format (layout below) or exported to HDF5.
"""

import dataclasses
import json
import math
import struct
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CorruptFile, SchemaError, SplitError, VersionMismatch


@dataclass(frozen=True, eq=False)
class EventStream:
    times: np.ndarray
    units: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.times, dtype=np.float64)
        u = np.ascontiguousarray(self.units, dtype=np.uint32)
        if t.ndim != 1 or t.shape != u.shape:
            raise ValueError("times and units must be 1-d arrays of equal length")
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise ValueError("event times must be sorted")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "units", u)

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.units, other.units)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0), np.zeros(0, dtype=np.uint32))

    @classmethod
    def from_unsorted(cls, times, units):
        """Sort by time, breaking ties by unit id."""
        times = np.asarray(times, dtype=np.float64)
        units = np.asarray(units, dtype=np.uint32)
        order = np.lexsort((units, times))
        return cls(times[order], units[order])

    @classmethod
    def merge(cls, streams, unit_offsets=None):
        streams = list(streams)
        if not streams:
            return cls.empty()
        times = np.concatenate([s.times for s in streams])
        if unit_offsets is None:
            units = np.concatenate([s.units for s in streams])
        else:
            units = np.concatenate([s.units.astype(np.int64) + off for s, off in zip(streams, unit_offsets)])
        return cls.from_unsorted(times, units)

    @property
    def duration(self):
        return float(self.times[-1]) if self.times.size else 0.0


# --- containers --------------------------------------------------------------

META_FIELDS = ("gender", "age", "body_height")


@dataclass(eq=False)
class DatasetContainer:
    """Parallel per-sample arrays plus label names and optional speaker metadata.

    ``meta`` maps each name in META_FIELDS to a list indexed by speaker id.
    """

    samples: list
    labels: np.ndarray
    speaker: np.ndarray
    keys: list
    meta: Optional[dict] = None

    def __post_init__(self):
        self.samples = list(self.samples)
        self.labels = np.asarray(self.labels, dtype=np.uint32).reshape(-1)
        self.speaker = np.asarray(self.speaker, dtype=np.int64).reshape(-1)
        self.keys = [str(k) for k in self.keys]

    def __len__(self):
        return len(self.samples)

    def validate(self):
        n = len(self.samples)
        if self.labels.size != n or self.speaker.size != n:
            raise SchemaError("samples, labels and speaker must have equal length")
        if n and int(self.labels.max()) >= len(self.keys):
            raise SchemaError("label id without a key name")
        for s in self.samples:
            if not isinstance(s, EventStream):
                raise SchemaError("samples must be EventStream instances")
        if self.meta is not None:
            unknown = set(self.meta) - set(META_FIELDS)
            if unknown:
                raise SchemaError(f"unknown meta fields {sorted(unknown)}")
        return self

    def __eq__(self, other):
        if not isinstance(other, DatasetContainer):
            return NotImplemented
        return (len(self) == len(other)
                and all(a == b for a, b in zip(self.samples, other.samples))
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.speaker, other.speaker)
                and self.keys == other.keys
                and _meta_norm(self.meta) == _meta_norm(other.meta))

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return DatasetContainer([self.samples[i] for i in idx], self.labels[idx],
                                self.speaker[idx], list(self.keys), self.meta)

    @classmethod
    def empty(cls, keys=()):
        return cls([], np.zeros(0), np.zeros(0), list(keys))


def _meta_norm(meta):
    if meta is None:
        return None
    return {k: [None if v is None else v for v in meta[k]] for k in sorted(meta)}


# --- ESF v1 ------------------------------------------------------------------
#
# little endian
#   "ESF1" u16 version u16 flags u64 n_samples u32 n_keys
#   keys         n_keys x (varint length, utf-8 bytes)
#   labels       n_samples x u32
#   speaker      n_samples x i64
#   offsets      (n_samples + 1) x u64, relative to the start of the sample block
#   samples      per sample: varint n, n x f64 times, n x u32 units
#   meta         if flags & 1: varint length, utf-8 JSON
#   u32 CRC-32 of all preceding bytes

ESF_MAGIC = b"ESF1"
ESF_VERSION = 1
_HEADER = struct.Struct("<4sHHQI")


def _varint(n):
    out = bytearray()
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return bytes(out)


def _read_varint(buf, pos):
    shift = 0
    value = 0
    while True:
        if pos >= len(buf):
            raise CorruptFile("varint runs past end of data")
        b = buf[pos]
        pos += 1
        value |= (b & 0x7F) << shift
        if not b & 0x80:
            return value, pos
        shift += 7
        if shift > 63:
            raise CorruptFile("varint too long")


def encode_container(container):
    container.validate()
    n = len(container)
    flags = 1 if container.meta is not None else 0
    parts = [_HEADER.pack(ESF_MAGIC, ESF_VERSION, flags, n, len(container.keys))]
    for k in container.keys:
        raw = k.encode("utf-8")
        parts.append(_varint(len(raw)) + raw)
    parts.append(container.labels.astype("<u4").tobytes())
    parts.append(container.speaker.astype("<i8").tobytes())
    blobs = []
    for s in container.samples:
        blobs.append(_varint(len(s)) + s.times.astype("<f8").tobytes() + s.units.astype("<u4").tobytes())
    offsets = np.zeros(n + 1, dtype="<u8")
    if n:
        offsets[1:] = np.cumsum([len(b) for b in blobs])
    parts.append(offsets.tobytes())
    parts.extend(blobs)
    if flags & 1:
        raw = json.dumps(_meta_norm(container.meta), sort_keys=True, separators=(",", ":")).encode()
        parts.append(_varint(len(raw)) + raw)
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode_container(data):
    data = memoryview(data).tobytes()
    if len(data) < 4:
        raise CorruptFile("file too short for a header")
    if data[:4] != ESF_MAGIC:
        raise VersionMismatch(f"bad magic {data[:4]!r}, expected {ESF_MAGIC!r}")
    if len(data) < _HEADER.size + 4:
        raise CorruptFile("truncated header")
    _, version, flags, n, n_keys = _HEADER.unpack_from(data, 0)
    if version != ESF_VERSION:
        raise VersionMismatch(f"ESF version {version} not supported")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CorruptFile("checksum mismatch (truncated or damaged file)")
    try:
        pos = _HEADER.size
        keys = []
        for _ in range(n_keys):
            ln, pos = _read_varint(body, pos)
            keys.append(body[pos:pos + ln].decode("utf-8"))
            pos += ln
        labels = np.frombuffer(body, "<u4", n, pos).astype(np.uint32)
        pos += 4 * n
        speaker = np.frombuffer(body, "<i8", n, pos).astype(np.int64)
        pos += 8 * n
        offsets = np.frombuffer(body, "<u8", n + 1, pos).astype(np.int64)
        pos += 8 * (n + 1)
        base = pos
        samples = []
        for i in range(n):
            p = base + int(offsets[i])
            k, p = _read_varint(body, p)
            times = np.frombuffer(body, "<f8", k, p).copy()
            units = np.frombuffer(body, "<u4", k, p + 8 * k).astype(np.uint32)
            samples.append(EventStream(times, units))
        pos = base + int(offsets[-1])
        meta = None
        if flags & 1:
            ln, pos = _read_varint(body, pos)
            meta = json.loads(body[pos:pos + ln].decode("utf-8"))
            pos += ln
        if pos != len(body):
            raise CorruptFile("trailing bytes after container body")
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptFile(str(exc)) from exc
    return DatasetContainer(samples, labels, speaker, keys, meta).validate()


def write_container(path, container):
    data = encode_container(container)
    with open(path, "wb") as fh:
        fh.write(data)


def read_container(path):
    with open(path, "rb") as fh:
        return decode_container(fh.read())


# --- HDF5 -------------------------------------------------------------------

def export_hdf5(path, container):
    """Write the spikes/labels/extra tree used by the published spike datasets."""
    import h5py

    container.validate()
    n = len(container)
    with h5py.File(path, "w") as f:
        sp = f.create_group("spikes")
        t_ds = sp.create_dataset("times", (n,), dtype=h5py.vlen_dtype(np.float64))
        u_ds = sp.create_dataset("units", (n,), dtype=h5py.vlen_dtype(np.uint32))
        for i, s in enumerate(container.samples):
            t_ds[i] = s.times
            u_ds[i] = s.units
        f.create_dataset("labels", data=container.labels.astype(np.uint32))
        extra = f.create_group("extra")
        extra.create_dataset("speaker", data=container.speaker.astype(np.int64))
        extra.create_dataset("keys", data=np.array(container.keys, dtype=object),
                             dtype=h5py.string_dtype())
        if container.meta is not None:
            mi = extra.create_group("meta_info")
            for name in META_FIELDS:
                vals = container.meta.get(name)
                if vals is None:
                    continue
                if name == "gender":
                    mi.create_dataset(name, data=np.array(["" if v is None else str(v) for v in vals],
                                                          dtype=object), dtype=h5py.string_dtype())
                else:
                    mi.create_dataset(name, data=np.array([np.nan if v is None else v for v in vals],
                                                          dtype=np.float64))


def import_hdf5(path):
    import h5py

    with h5py.File(path, "r") as f:
        times = f["spikes/times"][...]
        units = f["spikes/units"][...]
        samples = [EventStream(np.asarray(t, dtype=np.float64), np.asarray(u, dtype=np.uint32))
                   for t, u in zip(times, units)]
        labels = f["labels"][...]
        speaker = f["extra/speaker"][...] if "extra/speaker" in f else np.full(len(samples), -1)
        keys = [k.decode() if isinstance(k, bytes) else str(k) for k in f["extra/keys"][...]]
        meta = None
        if "extra/meta_info" in f:
            mi = f["extra/meta_info"]
            meta = {}
            for name in META_FIELDS:
                if name not in mi:
                    continue
                vals = mi[name][...]
                if name == "gender":
                    meta[name] = [None if v in (b"", "") else (v.decode() if isinstance(v, bytes) else str(v))
                                  for v in vals]
                else:
                    meta[name] = [None if np.isnan(v) else float(v) for v in vals]
    return DatasetContainer(samples, labels, speaker, keys, meta).validate()


# --- splits -------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    mode: str = "speaker_holdout"
    holdout_speakers: tuple = (4, 5)
    extra_test_frac: float = 0.05
    val_frac_of_train: float = 0.10
    hash_percent: tuple = (80, 10, 10)
    # draw the extra test share per (label, speaker) instead of per label
    stratify_speaker: bool = False

    def __post_init__(self):
        if self.mode not in ("speaker_holdout", "percent_hash"):
            raise ValueError(f"unknown split mode {self.mode!r}")
        for f in (self.extra_test_frac, self.val_frac_of_train):
            if not 0.0 <= f <= 1.0:
                raise ValueError("fractions must lie in [0, 1]")
        if len(self.hash_percent) != 3 or sum(self.hash_percent) != 100 or min(self.hash_percent) < 0:
            raise ValueError("hash percentages must be three nonnegative numbers summing to 100")


def fnv1a64(text):
    h = 0xCBF29CE484222325
    for b in text.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def hash_bucket(speaker_id):
    return fnv1a64(str(speaker_id)) % 100


def _draw_strata(indices, strata, frac, rng):
    """ceil(frac * size) indices from each stratum, in sorted stratum order."""
    picked = []
    keys = np.unique(strata, axis=0) if strata.ndim > 1 else np.unique(strata)
    for key in keys:
        mask = np.all(strata == key, axis=1) if strata.ndim > 1 else strata == key
        members = indices[mask]
        k = int(math.ceil(round(frac * members.size, 9)))
        if k:
            picked.append(rng.permutation(members)[:k])
    return np.sort(np.concatenate(picked)) if picked else np.zeros(0, dtype=np.int64)


def split(container, spec=SplitSpec(), seed=0):
    """Return sorted (train, val, test) index arrays."""
    n = len(container)
    all_idx = np.arange(n, dtype=np.int64)
    if spec.mode == "percent_hash":
        buckets = np.array([hash_bucket(s) for s in container.speaker], dtype=np.int64)
        p_train, p_val, _ = spec.hash_percent
        train = all_idx[buckets < p_train]
        val = all_idx[(buckets >= p_train) & (buckets < p_train + p_val)]
        test = all_idx[buckets >= p_train + p_val]
        return train, val, test

    speakers = container.speaker
    if n and np.any(speakers < 0):
        raise SplitError("speaker-holdout split needs a speaker id for every sample")
    missing = [s for s in spec.holdout_speakers if not np.any(speakers == s)]
    if n and missing:
        raise SplitError(f"holdout speakers {missing} not present in the container")
    rng = np.random.default_rng(seed)
    held = np.isin(speakers, np.asarray(spec.holdout_speakers, dtype=np.int64))
    rest = all_idx[~held]
    if spec.stratify_speaker:
        strata = np.stack([container.labels[rest].astype(np.int64), speakers[rest]], axis=1)
    else:
        strata = container.labels[rest].astype(np.int64)
    extra = _draw_strata(rest, strata, spec.extra_test_frac, rng)
    test = np.sort(np.concatenate([all_idx[held], extra]))
    pool = np.setdiff1d(rest, extra)
    val = _draw_strata(pool, container.labels[pool].astype(np.int64), spec.val_frac_of_train, rng)
    train = np.setdiff1d(pool, val)
    return train, val, test


def save_split(path, train, val, test, spec=None, seed=None):
    doc = {"train": [int(i) for i in train], "val": [int(i) for i in val],
           "test": [int(i) for i in test]}
    if spec is not None:
        doc["spec"] = dataclasses.asdict(spec)
    if seed is not None:
        doc["seed"] = int(seed)
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_split(path):
    with open(path) as fh:
        doc = json.load(fh)
    return tuple(np.asarray(doc[k], dtype=np.int64) for k in ("train", "val", "test"))


# --- learner views ----------------------------------------------------------

def bin_raster(stream, dt, T, n_units, mode="binary", dtype=np.float32):
    """Dense (round(T/dt), n_units) raster; events at or after T are dropped."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if mode not in ("binary", "count"):
        raise ValueError(f"unknown bin mode {mode!r}")
    n_bins = int(round(T / dt))
    out = np.zeros((n_bins, n_units), dtype=dtype)
    if len(stream):
        bins = np.floor(stream.times / dt).astype(np.int64)
        keep = (stream.times < T) & (bins < n_bins) & (stream.units < n_units)
        np.add.at(out, (bins[keep], stream.units[keep].astype(np.int64)), 1)
        if mode == "binary":
            np.minimum(out, 1, out=out)
    return out


def spike_count_vector(stream, n_units):
    units = stream.units[stream.units < n_units]
    return np.bincount(units, minlength=n_units).astype(np.float64)


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=np.float64)
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        # constant features pass through centred but unscaled
        return cls(mean, np.where(std > 0, std, 1.0))

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.scale


def standardize(X, train_stats=None):
    """z-score ``X`` with statistics fitted on ``train_stats`` (default: X itself)."""
    st = train_stats if isinstance(train_stats, Standardizer) else Standardizer.fit(
        X if train_stats is None else train_stats)
    return st.transform(X), st
