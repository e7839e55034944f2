"""Train the recurrent classifier on the synthetic latency-coded task with both losses.

Each class fixes a burst onset per input line; samples jitter the onsets and
add background spikes. The readout can only separate the classes if it
integrates the timing, which is what the max-over-time loss rewards.

    python demos/latency_task.py [--epochs 30]
"""

import argparse
import time

from c2s import train as tr

ap = argparse.ArgumentParser()
ap.add_argument("--epochs", type=int, default=30)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()

samples, labels = tr.latency_task(1280, T=0.4, seed=args.seed)
data = tr.RasterDataset(samples, labels, 100, 5e-4, 0.4)
train_d, val_d = data.subset(range(1024)), data.subset(range(1024, 1280))
spec = tr.NetSpec(n_in=100, n_class=2, arch="rsnn", T=0.4)

for kind in ("max_over_time", "last_time_step"):
    t0 = time.perf_counter()
    run = tr.train(spec, train_d, val_d, epochs=args.epochs, seed=args.seed, kind=kind, stop_at=1.0,
                   log=lambda r: print(f"  epoch {r['epoch']:3d} loss {r['train_loss']:.3f} val {r['val_acc']:.3f}"))
    print(f"{kind}: best val {run.best_val_acc:.3f} at epoch {run.best_epoch} ({time.perf_counter() - t0:.0f} s)")
