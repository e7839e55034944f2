import json
import subprocess
import sys

import numpy as np
import pytest

from c2s import audio, cli
from c2s.events import DatasetContainer, EventStream, import_hdf5, load_split, read_container, write_container


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Twelve short clips from four speakers, converted once with 24 channels."""
    d = tmp_path_factory.mktemp("cli")
    rng = np.random.default_rng(3)
    rows = []
    for i in range(12):
        p = d / f"c{i}.wav"
        t = np.arange(3200) / 16000
        label = i % 2
        x = np.sin(2 * np.pi * (400 if label else 1500) * t) + 0.05 * rng.standard_normal(t.size)
        audio.encode_wav(p, 0.3 * x, 16000)
        rows.append(f"{p},{label},{i % 4},english")
    (d / "m.csv").write_text("path,label,speaker,language\n" + "\n".join(rows) + "\n")
    code = cli.main(["convert", "--manifest", str(d / "m.csv"), "--out", str(d / "c.esf"),
                     "--channels", "24", "--hc-per-channel", "4", "--seed", "5",
                     "--transfer-cache", str(d / "cache"), "--keys", "low,high",
                     "--report", str(d / "rep.json")])
    assert code == 0
    return d


def test_convert_outputs(corpus):
    c = read_container(corpus / "c.esf")
    assert len(c) == 12 and c.keys == ["low", "high"]
    assert all(len(s) and s.units.max() < 24 for s in c.samples)
    rep = json.loads((corpus / "rep.json").read_text())
    assert rep["failures"] == []


def test_stats(corpus, capsys):
    code, out, _ = run(["stats", "--in", corpus / "c.esf"], capsys)
    s = json.loads(out)
    assert code == 0 and s["samples"] == 12 and s["class_counts"] == {"low": 6, "high": 6}
    assert s["speakers"] == [0, 1, 2, 3] and sum(s["duration_hist"]["counts"]) == 12


def test_chain(corpus, capsys, tmp_path):
    esf = corpus / "c.esf"
    code, out, _ = run(["split", "--in", esf, "--holdout", "3", "--seed", "1", "--out", tmp_path / "s.json"],
                       capsys)
    assert code == 0
    tr, va, te = load_split(tmp_path / "s.json")
    assert sorted(np.concatenate([tr, va, te]).tolist()) == list(range(12))
    assert json.loads(out) == {"train": len(tr), "val": len(va), "test": len(te)}

    flags = ["--in", esf, "--split", tmp_path / "s.json", "--epochs", 2, "--batch", 4,
             "--duration-s", 0.2, "--hidden", 8, "--arch", "ff1"]
    code, out, _ = run(["train", *flags, "--out", tmp_path / "m.npz", "--metrics", tmp_path / "m.csv"], capsys)
    assert code == 0
    assert len(out.strip().splitlines()) == 2
    assert len((tmp_path / "m.csv").read_text().splitlines()) == 3

    code, out, _ = run(["eval", "--ckpt", tmp_path / "m.npz", "--in", esf, "--split", tmp_path / "s.json",
                        "--per-speaker", "--cross", esf, "--report", tmp_path / "r.json"], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert 0 <= rep["overall"] <= 1 and rep["per_speaker"]["3"]["held_out"]
    assert rep["cross"]["chance"] == 0.5

    code, _, _ = run(["export", "--in", esf, "--format", "hdf5", "--out", tmp_path / "c.h5"], capsys)
    assert code == 0 and import_hdf5(tmp_path / "c.h5") == read_container(esf)
    code, _, _ = run(["export", "--in", esf, "--format", "csv-counts", "--split", tmp_path / "s.json",
                      "--n-units", 24, "--out", tmp_path / "f.csv"], capsys)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert code == 0 and len(lines) == 1 + len(te) and len(lines[0].split(",")) == 25

    code, _, _ = run(["sweep", *flags[:-4], "--hidden", 8, "--beta", "5,40", "--lr", "1e-3",
                      "--out", tmp_path / "g.csv"], capsys)
    assert code == 0 and len((tmp_path / "g.csv").read_text().splitlines()) == 3


def test_calibrate(tmp_path, capsys):
    code, out, _ = run(["calibrate", "--sample-rate", 16000, "--channels", 16, "--out-gain", tmp_path / "g.json"],
                       capsys)
    g = json.loads((tmp_path / "g.json").read_text())
    assert code == 0 and g["gain"] > 0 and float(out) == g["gain"]


@pytest.mark.parametrize("argv", [
    ["split", "--in", "x.esf", "--out", "s.json", "--holdout", ""],
    ["split", "--in", "x.esf", "--out", "s.json", "--test-frac", "1.5"],
    ["train", "--in", "x", "--split", "s", "--out", "m", "--batch", "0"],
    ["train", "--in", "x", "--split", "s", "--out", "m", "--loss", "hinge"],
    ["convert", "--manifest", "m", "--out", "o", "--workers", "0"],
    ["export", "--in", "x", "--format", "hdf5", "--out", "o", "--split", "s.json"],
    ["split", "--in", "x", "--out", "y", "--seed", "-1"],
    ["frobnicate"],
])
def test_bad_flags_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    assert info.value.code == 2


def test_runtime_failure_json(tmp_path, capsys):
    (tmp_path / "bad.esf").write_bytes(b"nope")
    code, _, err = run(["stats", "--in", tmp_path / "bad.esf"], capsys)
    assert code == 1
    e = json.loads(err)
    assert e["error"] in ("CorruptFile", "VersionMismatch") and e["message"]
    code, _, err = run(["stats", "--in", tmp_path / "missing.esf"], capsys)
    assert code == 1 and json.loads(err)["error"] == "FileNotFoundError"


def test_seed_env_fallback(tmp_path, capsys, monkeypatch):
    rng = np.random.default_rng(0)
    samples = [EventStream.empty() for _ in range(200)]
    c = DatasetContainer(samples, rng.integers(0, 4, 200), rng.integers(0, 8, 200), list("abcd"))
    write_container(tmp_path / "c.esf", c)

    def split_with(*extra):
        out = tmp_path / "s.json"
        assert run(["split", "--in", tmp_path / "c.esf", "--out", out, *extra], capsys)[0] == 0
        return [a.tolist() for a in load_split(out)]

    monkeypatch.setenv("C2S_SEED", "9")
    from_env = split_with()
    assert from_env == split_with("--seed", "9")
    assert from_env != split_with("--seed", "10")
    monkeypatch.delenv("C2S_SEED")
    assert split_with() == split_with("--seed", "0")


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "c2s.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "convert" in r.stdout
