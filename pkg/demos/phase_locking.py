"""Auditory-nerve fibres and bushy cells lock to a 500 Hz tone.

Drives the transmitter-pool model with the calibrated membrane velocity at
the tone's best channel and compares spike timing before and after the
bushy-cell stage.

    python demos/phase_locking.py
"""

import numpy as np

from c2s import audio, cochlea, haircell as hc, lif, pipeline

FS = 16000.0
cfg = pipeline.PipelineConfig(bm=cochlea.BmParams(n_ch=128))
tr = cochlea.build_transfer(cfg.bm, FS)
pipeline.calibrate(tr, cfg)


def vs(times, f=500.0):
    return abs(np.mean(np.exp(2j * np.pi * f * np.asarray(times)))) if len(times) else 0.0


for db in (20, 40, 65):
    x = audio.preprocess(audio.tone(500, 0.5, FS), db)
    v = cochlea.bm_velocity(tr, x)
    ch = int(np.argmax(np.sqrt(np.mean(v * v, axis=1))))
    c, _ = hc.transmitter_pools(v[ch], 1 / FS)
    keys = hc.cell_keys(cfg.seed, 0, ch, cfg.hc.n_hc)[None]
    counts = hc.release_counts(c[None], 1 / FS, cfg.hc, keys)[0]
    an = np.repeat(np.nonzero(counts)[0] / FS, counts[counts > 0])
    stream = pipeline.convert_clip(audio.tone(500, 0.5, FS), tr, pipeline.PipelineConfig(bm=cfg.bm, level_db=db))
    bc = stream.times[stream.units == ch]
    print(f"{db:3d} dB  channel {ch:3d}: AN {len(an) / 0.5 / cfg.hc.n_hc:6.1f} spk/s/fibre VS {vs(an):.2f}"
          f" | bushy {len(bc) / 0.5:6.1f} spk/s VS {vs(bc):.2f}")
