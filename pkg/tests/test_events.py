import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from c2s import events as ev
from c2s.errors import CorruptFile, SchemaError, SplitError, VersionMismatch
from c2s.events import DatasetContainer, EventStream, SplitSpec


def random_container(n, rng, n_units=700, keys=("a", "b", "c"), meta=None):
    samples = []
    for _ in range(n):
        k = int(rng.integers(0, 60))
        samples.append(EventStream.from_unsorted(rng.uniform(0, 1, k), rng.integers(0, n_units, k)))
    return DatasetContainer(samples, rng.integers(0, len(keys), n), rng.integers(0, 12, n), list(keys), meta)


def toy_corpus(n_speakers=3, n_labels=2, per=20):
    spk, lab = np.meshgrid(np.arange(n_speakers), np.arange(n_labels), indexing="ij")
    spk = np.repeat(spk.ravel(), per)
    lab = np.repeat(lab.ravel(), per)
    return DatasetContainer([EventStream.empty()] * spk.size, lab, spk, [str(i) for i in range(n_labels)])


def shd_shaped(total=10420, n_speakers=12, n_labels=20, seed=0):
    rng = np.random.default_rng(seed)
    spk = np.arange(total) % n_speakers
    lab = rng.permutation(np.arange(total) % n_labels)
    return DatasetContainer([EventStream.empty()] * total, lab, spk, [str(i) for i in range(n_labels)])


# --- streams ------------------------------------------------------------------

def test_stream_sorting_and_ties():
    s = EventStream.from_unsorted([0.2, 0.1, 0.1], [1, 5, 2])
    assert s.times.tolist() == [0.1, 0.1, 0.2]
    assert s.units.tolist() == [2, 5, 1]
    with pytest.raises(ValueError):
        EventStream(np.array([0.2, 0.1]), np.array([0, 0]))
    with pytest.raises(ValueError):
        EventStream(np.zeros(2), np.zeros(3))


def test_merge_with_offsets():
    a = EventStream(np.array([0.0, 0.3]), np.array([0, 1]))
    b = EventStream(np.array([0.1]), np.array([0]))
    m = EventStream.merge([a, b], unit_offsets=[0, 2])
    assert m.times.tolist() == [0.0, 0.1, 0.3] and m.units.tolist() == [0, 2, 1]
    assert len(EventStream.merge([])) == 0


# --- ESF ------------------------------------------------------------------------

def test_roundtrip_1000_samples(tmp_path):
    rng = np.random.default_rng(1)
    c = random_container(1000, rng, meta={"gender": ["f", "m", None], "age": [30, 41.5, None],
                                          "body_height": [170.0, None, 181.0]})
    p = tmp_path / "c.esf"
    ev.write_container(p, c)
    back = ev.read_container(p)
    assert back == c
    assert all(np.array_equal(a.times.view(np.uint64), b.times.view(np.uint64))
               for a, b in zip(c.samples, back.samples))
    assert ev.encode_container(back) == p.read_bytes()


def test_empty_container(tmp_path):
    p = tmp_path / "e.esf"
    ev.write_container(p, DatasetContainer.empty(["x"]))
    assert p.stat().st_size == struct.calcsize("<4sHHQI") + 2 + 8 + 4
    back = ev.read_container(p)
    assert len(back) == 0 and back.keys == ["x"]


def test_shd_scale_length(tmp_path):
    c = shd_shaped()
    p = tmp_path / "big.esf"
    ev.write_container(p, c)
    assert len(ev.read_container(p).labels) == 10420


def test_wrong_magic_and_version():
    blob = bytearray(ev.encode_container(toy_corpus()))
    with pytest.raises(VersionMismatch):
        ev.decode_container(b"HDF5" + bytes(blob[4:]))
    blob[4:6] = struct.pack("<H", 2)
    with pytest.raises(VersionMismatch):
        ev.decode_container(bytes(blob))


def test_truncated_and_damaged():
    blob = ev.encode_container(random_container(20, np.random.default_rng(2)))
    for cut in (3, 10, len(blob) // 2, len(blob) - 1):
        with pytest.raises(CorruptFile):
            ev.decode_container(blob[:cut])
    bad = bytearray(blob)
    bad[len(bad) // 2] ^= 0xFF
    with pytest.raises(CorruptFile):
        ev.decode_container(bytes(bad))


def test_consistent_crc_but_bad_layout():
    blob = ev.encode_container(random_container(3, np.random.default_rng(3)))
    body = blob[:-4] + b"\x00"
    with pytest.raises(CorruptFile):
        ev.decode_container(body + struct.pack("<I", zlib.crc32(body)))


def test_schema_violations():
    with pytest.raises(SchemaError):
        ev.encode_container(DatasetContainer([EventStream.empty()], [3], [0], ["a"]))
    with pytest.raises(SchemaError):
        ev.encode_container(DatasetContainer([EventStream.empty()], [0, 0], [0], ["a"]))
    with pytest.raises(SchemaError):
        DatasetContainer([], [], [], [], meta={"shoe_size": []}).validate()


streams = st.lists(st.tuples(st.floats(0, 2, allow_nan=False), st.integers(0, 2**32 - 1)), max_size=30).map(
    lambda ev_: EventStream.from_unsorted([t for t, _ in ev_], [u for _, u in ev_]))


@given(st.lists(streams, max_size=8), st.data())
@settings(max_examples=80, deadline=None)
def test_roundtrip_property(samples, data):
    n = len(samples)
    keys = data.draw(st.lists(st.text(max_size=6), min_size=1, max_size=4))
    labels = data.draw(st.lists(st.integers(0, len(keys) - 1), min_size=n, max_size=n))
    spk = data.draw(st.lists(st.integers(-2**40, 2**40), min_size=n, max_size=n))
    c = DatasetContainer(samples, labels, spk, keys)
    assert ev.decode_container(ev.encode_container(c)) == c


def test_hdf5_roundtrip(tmp_path):
    h5py = pytest.importorskip("h5py")
    rng = np.random.default_rng(5)
    c = random_container(50, rng, meta={"gender": ["female", "male"], "age": [21.0, 33.0],
                                        "body_height": [1.6, 1.8]})
    p = tmp_path / "c.h5"
    ev.export_hdf5(p, c)
    assert ev.import_hdf5(p) == c
    with h5py.File(p) as f:
        for name in ("spikes/times", "spikes/units", "labels", "extra/speaker", "extra/keys",
                     "extra/meta_info/gender", "extra/meta_info/age", "extra/meta_info/body_height"):
            assert name in f
        assert len(f["spikes/times"]) == 50


def test_hdf5_without_meta(tmp_path):
    c = random_container(5, np.random.default_rng(6))
    ev.export_hdf5(tmp_path / "m.h5", c)
    back = ev.import_hdf5(tmp_path / "m.h5")
    assert back == c and back.meta is None


# --- splits -----------------------------------------------------------------------

@pytest.mark.parametrize("per_speaker", [False, True])
def test_toy_holdout_membership(per_speaker):
    c = toy_corpus()
    spec = SplitSpec(holdout_speakers=(2,), stratify_speaker=per_speaker)
    tr, va, te = ev.split(c, spec, seed=0)
    held = np.flatnonzero(c.speaker == 2)
    assert len(te) == 44
    assert set(held) <= set(te)
    extra = np.setdiff1d(te, held)
    if per_speaker:
        # one per (label, speaker) stratum of speakers 0 and 1
        pairs = sorted(zip(c.labels[extra].tolist(), c.speaker[extra].tolist()))
        assert pairs == [(0, 0), (0, 1), (1, 0), (1, 1)]
    else:
        assert np.bincount(c.labels[extra]).tolist() == [2, 2]
    # validation: ceil(0.1 * 38) = 4 per label from what is left
    assert np.bincount(c.labels[va]).tolist() == [4, 4]
    assert len(tr) == 120 - 44 - 8
    assert not set(tr) & set(va) and not set(tr) & set(te) and not set(va) & set(te)
    assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(120))


def test_split_seeded():
    c = toy_corpus()
    spec = SplitSpec(holdout_speakers=(2,))
    a = ev.split(c, spec, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a, ev.split(c, spec, 7)))
    assert not all(np.array_equal(x, y) for x, y in zip(a, ev.split(c, spec, 8)))


def test_shd_shaped_test_fraction():
    c = shd_shaped()
    _, _, te = ev.split(c, SplitSpec(), 0)
    assert abs(len(te) / len(c) - 0.20) <= 0.02


def test_split_errors():
    with pytest.raises(SplitError):
        ev.split(toy_corpus(), SplitSpec(holdout_speakers=(9,)))
    c = toy_corpus()
    c.speaker[0] = -1
    with pytest.raises(SplitError):
        ev.split(c, SplitSpec(holdout_speakers=(2,)))


def test_split_spec_validation():
    with pytest.raises(ValueError):
        SplitSpec(extra_test_frac=1.5)
    with pytest.raises(ValueError):
        SplitSpec(hash_percent=(80, 10, 5))
    with pytest.raises(ValueError):
        SplitSpec(mode="random")


def test_fnv_reference_vectors():
    # published FNV-1a 64 test vectors
    assert ev.fnv1a64("") == 0xCBF29CE484222325
    assert ev.fnv1a64("a") == 0xAF63DC4C8601EC8C
    assert ev.fnv1a64("foobar") == 0x85944171F73967E8


@given(st.integers(-10**6, 10**6))
def test_hash_bucket_stable(s):
    assert ev.hash_bucket(s) == ev.fnv1a64(str(s)) % 100
    assert 0 <= ev.hash_bucket(s) < 100


def test_percent_hash_split():
    c = DatasetContainer([EventStream.empty()] * 2000, np.zeros(2000), np.arange(2000), ["x"])
    tr, va, te = ev.split(c, SplitSpec(mode="percent_hash"))
    assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(2000))
    assert 0.75 < len(tr) / 2000 < 0.85
    b = {int(ev.hash_bucket(s)) for s in c.speaker[te]}
    assert min(b) >= 90


def test_split_json_roundtrip(tmp_path):
    c = toy_corpus()
    parts = ev.split(c, SplitSpec(holdout_speakers=(2,)), 1)
    ev.save_split(tmp_path / "s.json", *parts, spec=SplitSpec(holdout_speakers=(2,)), seed=1)
    back = ev.load_split(tmp_path / "s.json")
    assert all(np.array_equal(a, b) for a, b in zip(parts, back))


# --- learner views -----------------------------------------------------------------

def test_binning_examples():
    s = EventStream(np.array([0.0, 0.0002, 0.0003, 0.9999, 1.0, 1.2]), np.array([0, 1, 1, 2, 2, 2]))
    b = ev.bin_raster(s, 5e-4, 1.0, 3)
    assert b.shape == (2000, 3)
    assert b[0].tolist() == [1, 1, 0]
    assert ev.bin_raster(s, 5e-4, 1.0, 3, mode="count")[0].tolist() == [1, 2, 0]
    assert b[1999, 2] == 1 and b.sum() == 3
    with pytest.raises(ValueError):
        ev.bin_raster(s, 0, 1.0, 3)


@given(st.lists(st.tuples(st.floats(0, 1.5), st.integers(0, 9)), max_size=200),
       st.sampled_from([1e-3, 5e-4, 7e-3]))
@settings(max_examples=100, deadline=None)
def test_count_binning_conserves_events(evts, dt):
    s = EventStream.from_unsorted([t for t, _ in evts], [u for _, u in evts])
    r = ev.bin_raster(s, dt, 1.0, 10, mode="count", dtype=np.int64)
    n_bins = round(1.0 / dt)
    expected = int(np.sum((s.times < 1.0) & (np.floor(s.times / dt) < n_bins)))
    assert r.sum() == expected


@given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 9)), max_size=100), st.randoms())
def test_count_vector_ignores_times(evts, rnd):
    s = EventStream.from_unsorted([t for t, _ in evts], [u for _, u in evts])
    times = [t for t, _ in evts]
    rnd.shuffle(times)
    s2 = EventStream.from_unsorted(times, [u for _, u in evts])
    np.testing.assert_array_equal(ev.spike_count_vector(s, 10), ev.spike_count_vector(s2, 10))


def test_count_vector_empty():
    assert not ev.spike_count_vector(EventStream.empty(), 7).any()


def test_standardize():
    rng = np.random.default_rng(0)
    X = rng.poisson(5, (200, 6)).astype(float)
    X[:, 2] = 3.0
    Z, stats = ev.standardize(X)
    np.testing.assert_allclose(Z.mean(0), 0, atol=1e-9)
    np.testing.assert_allclose(Z.var(0)[[0, 1, 3, 4, 5]], 1, atol=1e-9)
    assert np.all(Z[:, 2] == 0)
    Y = rng.poisson(8, (50, 6)).astype(float)
    Zy, _ = ev.standardize(Y, stats)
    assert np.all(np.abs(Zy.mean(0)[[0, 1, 3]]) > 0.1)  # no leakage of test statistics
    Zy2, _ = ev.standardize(Y, X)
    np.testing.assert_array_equal(Zy, Zy2)
