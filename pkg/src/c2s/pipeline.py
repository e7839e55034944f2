"""Audio -> basilar membrane -> hair cells -> bushy cells -> events."""

import csv
import dataclasses
import json
import logging
import time
import wave
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import audio, cochlea, haircell, lif
from .errors import C2SError, CalibrationError
from .events import DatasetContainer, EventStream, write_container

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CalibSpec:
    freq: float = 500.0
    level_db: float = 30.0
    target_rms: float = 1.0
    duration: float = 1.0


@dataclass(frozen=True)
class PipelineConfig:
    bm: cochlea.BmParams = field(default_factory=cochlea.BmParams)
    hc: haircell.HcParams = field(default_factory=haircell.HcParams)
    bc_gain: float = lif.BC_INPUT_GAIN
    level_db: float = 65.0
    ramp: float = 0.030
    calib: CalibSpec = field(default_factory=CalibSpec)
    seed: int = 0
    n_workers: int = 1
    channel_block: int = 64

    def bc(self, dt):
        return lif.bc_config(self.hc.n_hc, dt, self.bc_gain)


def calibrate(transfer, config=PipelineConfig()):
    """Scale ``transfer`` so the calibration tone peaks at the target RMS.

    The tone goes through the same ramps and level normalization as data
    clips. Returns the correction factor, which has already been multiplied
    into ``transfer.calib_gain``; a second call therefore returns 1.
    """
    cal = config.calib
    clip = audio.tone(cal.freq, cal.duration, transfer.sample_rate)
    clip = audio.preprocess(clip, cal.level_db, config.ramp)
    v = cochlea.bm_velocity(transfer, clip)
    r = np.sqrt(np.mean(v * v, axis=1))
    best = int(np.argmax(r))
    if not np.isfinite(r[best]) or r[best] <= 0:
        raise CalibrationError("calibration tone produced no membrane response")
    factor = cal.target_rms / float(r[best])
    transfer.calib_gain *= factor
    return factor


def _channel_block_events(v, dt, t_end, config, channels, sample_idx):
    """HC + BC stages for a block of channels; returns (times, channel)."""
    hc = config.hc
    c, _ = haircell.transmitter_pools(v, dt, hc)
    keys = np.stack([haircell.cell_keys(config.seed, sample_idx, ch, hc.n_hc) for ch in channels])
    counts = haircell.release_counts(c, dt, hc, keys)
    ch_idx, steps = np.nonzero(counts)
    indptr = np.zeros(len(channels) + 1, dtype=np.int64)
    np.cumsum(np.bincount(ch_idx, minlength=len(channels)), out=indptr[1:])
    weights = counts[ch_idx, steps] * (lif.BC_WEIGHT_TOTAL / hc.n_hc)
    bc = config.bc(dt)
    st, local = lif.bushy_events(steps * dt, weights, indptr, t_end, bc)
    return st, np.asarray(channels)[local]


def convert_clip(clip, transfer, config=PipelineConfig(), sample_idx=0):
    """Bushy-cell events of one clip; unit id = channel index.

    An all-zero clip has no level to normalize and yields spontaneous
    activity only.
    """
    if audio.rms(clip.samples) == 0.0:
        clip = audio.apply_hann_ramps(clip, config.ramp)
    else:
        clip = audio.preprocess(clip, config.level_db, config.ramp)
    dt = 1.0 / clip.sample_rate
    t_end = len(clip.samples) * dt
    times, units = [], []
    n_ch = transfer.n_ch
    for start in range(0, n_ch, config.channel_block):
        chans = np.arange(start, min(start + config.channel_block, n_ch))
        v = cochlea.bm_velocity(transfer, clip, chans)
        t, u = _channel_block_events(v, dt, t_end, config, chans, sample_idx)
        times.append(t)
        units.append(u)
    return EventStream.from_unsorted(np.concatenate(times), np.concatenate(units))


# --- corpora -------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: int
    speaker: int = -1
    language: str = "n/a"


def read_manifest(path):
    """CSV rows ``path,label,speaker,language``; a header row is optional."""
    entries = []
    with open(path, newline="") as fh:
        for i, row in enumerate(csv.reader(fh)):
            if not row or row[0].startswith("#"):
                continue
            if i == 0 and row[0].strip().lower() == "path":
                continue
            row = [c.strip() for c in row] + [""] * 3
            entries.append(ManifestEntry(row[0], int(row[1]),
                                         int(row[2]) if row[2] else -1, row[3] or "n/a"))
    return entries


@dataclass
class ConversionReport:
    n_clips: int = 0
    event_counts: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    wall_time: float = 0.0
    calib_gains: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


_WORKER = {}


def _init_worker(transfers, config):
    _WORKER["transfers"] = transfers
    _WORKER["config"] = config


def _convert_one(job):
    idx, entry = job
    try:
        clip = audio.decode_wav(entry.path, entry.label, entry.speaker, entry.language)
        tr = _WORKER["transfers"][clip.sample_rate]
        return idx, convert_clip(clip, tr, _WORKER["config"], idx), None
    except (C2SError, OSError, KeyError) as exc:
        return idx, None, f"{type(exc).__name__}: {exc}"


def _sample_rates(entries):
    rates = set()
    for e in entries:
        try:
            with wave.open(e.path, "rb") as wf:
                rates.add(float(wf.getframerate()))
        except (OSError, EOFError, wave.Error):
            pass  # reported when the clip itself is converted
    return sorted(rates)


def prepare_transfers(rates, config, cache_dir=None):
    """Build (or load) and calibrate one transfer per sample rate."""
    out = {}
    for rate in rates:
        cache = None
        if cache_dir is not None:
            cache = f"{cache_dir}/transfer_{config.bm.digest()[:12]}_{int(rate)}.npz"
        tr = cochlea.cached_transfer(config.bm, rate, cache)
        tr.calib_gain = 1.0
        calibrate(tr, config)
        out[rate] = tr
    return out


def convert_corpus(manifest, config=PipelineConfig(), out_path=None, keys=None,
                   transfer_cache=None, meta=None, transfers=None):
    """Convert every manifest entry; failed clips are reported and skipped.

    Sample ``i`` of the manifest always uses RNG stream ``i``, so the result
    does not depend on the number of workers.
    """
    t0 = time.perf_counter()
    entries = read_manifest(manifest) if isinstance(manifest, str) else list(manifest)
    if transfers is None:
        transfers = prepare_transfers(_sample_rates(entries), config, transfer_cache)
    jobs = list(enumerate(entries))
    if config.n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.n_workers, initializer=_init_worker,
                                 initargs=(transfers, config)) as ex:
            results = list(ex.map(_convert_one, jobs))
    else:
        _init_worker(transfers, config)
        results = [_convert_one(j) for j in jobs]

    report = ConversionReport(n_clips=len(entries),
                              calib_gains={str(r): t.calib_gain for r, t in transfers.items()})
    samples, labels, speakers = [], [], []
    for idx, stream, err in results:
        if err is not None:
            log.warning("clip %d (%s) failed: %s", idx, entries[idx].path, err)
            report.failures.append({"index": idx, "path": entries[idx].path, "error": err})
            continue
        samples.append(stream)
        labels.append(entries[idx].label)
        speakers.append(entries[idx].speaker)
        report.event_counts.append(len(stream))
    if keys is None:
        n_cls = max((e.label for e in entries), default=-1) + 1
        keys = [str(i) for i in range(n_cls)]
    container = DatasetContainer(samples, labels, speakers, keys, meta).validate()
    if out_path is not None:
        write_container(out_path, container)
    report.wall_time = time.perf_counter() - t0
    return container, report
