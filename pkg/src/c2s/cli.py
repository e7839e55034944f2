"""Command-line front end: c2s {convert,calibrate,split,train,eval,sweep,export,stats}."""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np


def _seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get("C2S_SEED")
    return int(env) if env else 0


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _int_list(text):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _fraction(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("fraction must lie in [0, 1]")
    return v


def _add_seed(p):
    p.add_argument("--seed", type=_u64, default=None, help="RNG seed (u64); falls back to $C2S_SEED, then 0")


def _add_train_flags(p, sweep=False):
    p.add_argument("--in", dest="inp", metavar="PATH", required=True, help="ESF container")
    p.add_argument("--split", required=True, help="split JSON written by `c2s split`")
    p.add_argument("--arch", choices=["ff1", "ff2", "ff3", "rsnn"], default="rsnn")
    p.add_argument("--loss", choices=["max-over-time", "last-step"], default="max-over-time")
    if not sweep:
        p.add_argument("--beta", type=float, default=40.0, help="surrogate steepness")
        p.add_argument("--lr", type=float, default=1e-3, help="Adamax learning rate")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--dt-ms", type=float, default=0.5)
    p.add_argument("--duration-s", type=float, default=1.0)
    p.add_argument("--hidden", type=int, default=128, help="neurons per hidden layer")
    p.add_argument("--n-units", type=int, default=None, help="input width (default: max unit id + 1)")
    _add_seed(p)


def build_parser():
    ap = argparse.ArgumentParser(prog="c2s", description="Cochlea-to-spikes conversion and SNN training")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("convert", help="convert a manifest of WAV clips into an ESF container")
    p.add_argument("--manifest", required=True, help="CSV rows: path,label,speaker,language")
    p.add_argument("--out", required=True, help="output ESF container")
    p.add_argument("--channels", type=int, default=700)
    p.add_argument("--hc-per-channel", type=int, default=40)
    p.add_argument("--level-db", type=float, default=65.0)
    _add_seed(p)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--transfer-cache", default=None, help="directory for cached transfer matrices")
    p.add_argument("--keys", default=None, help="comma-separated label names (default: 0..N-1)")
    p.add_argument("--report", default=None, help="write the conversion report as JSON")

    p = sub.add_parser("calibrate", help="calibration gain of the membrane model at a sample rate")
    p.add_argument("--sample-rate", type=float, required=True)
    p.add_argument("--out-gain", required=True, help="JSON file receiving the gain")
    p.add_argument("--channels", type=int, default=700)
    p.add_argument("--transfer-cache", default=None)

    p = sub.add_parser("split", help="train/validation/test partition of a container")
    p.add_argument("--in", dest="inp", metavar="PATH", required=True)
    p.add_argument("--mode", choices=["speaker-holdout", "percent-hash"], default="speaker-holdout")
    p.add_argument("--holdout", type=_int_list, default=(4, 5), help="held-out speaker ids, e.g. 4,5")
    p.add_argument("--test-frac", type=_fraction, default=0.05)
    p.add_argument("--val-frac", type=_fraction, default=0.10)
    _add_seed(p)
    p.add_argument("--out", required=True, help="split JSON")

    p = sub.add_parser("train", help="train a spiking classifier")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", default=None, help="per-epoch metrics CSV")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="inp", metavar="PATH", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--per-speaker", action="store_true")
    p.add_argument("--cross", default=None, help="second ESF container for cross-dataset accuracy")
    p.add_argument("--report", required=True, help="JSON report path")

    p = sub.add_parser("sweep", help="grid over surrogate steepness and learning rate")
    p.add_argument("--beta", type=_float_list, default=(1, 5, 10, 40, 100, 1000))
    p.add_argument("--lr", type=_float_list, default=(1e-2, 1e-3, 1e-4))
    _add_train_flags(p, sweep=True)
    p.add_argument("--out", required=True, help="CSV of beta,lr,best_val_acc,n_epochs_to_0.75")

    p = sub.add_parser("export", help="export a container")
    p.add_argument("--in", dest="inp", metavar="PATH", required=True)
    p.add_argument("--format", choices=["esf", "hdf5", "csv-counts"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default=None, help="csv-counts: standardize with train stats, export test rows")
    p.add_argument("--n-units", type=int, default=None)

    p = sub.add_parser("stats", help="event counts, durations and class balance")
    p.add_argument("--in", dest="inp", metavar="PATH", required=True)
    return ap


# --- handlers ----------------------------------------------------------------

def _pipeline_config(args, workers=1, seed=0):
    from .cochlea import BmParams
    from .haircell import HcParams
    from .pipeline import PipelineConfig

    return PipelineConfig(bm=BmParams(n_ch=args.channels),
                          hc=HcParams(n_hc=getattr(args, "hc_per_channel", 40)),
                          level_db=getattr(args, "level_db", 65.0), seed=seed, n_workers=workers)


def cmd_convert(args):
    from .pipeline import convert_corpus

    cfg = _pipeline_config(args, args.workers, _seed(args))
    if args.transfer_cache:
        Path(args.transfer_cache).mkdir(parents=True, exist_ok=True)
    keys = args.keys.split(",") if args.keys else None
    container, rep = convert_corpus(args.manifest, cfg, args.out, keys=keys,
                                    transfer_cache=args.transfer_cache)
    if args.report:
        Path(args.report).write_text(rep.to_json())
    print(json.dumps({"samples": len(container), "failures": len(rep.failures),
                      "events": int(sum(rep.event_counts))}))
    return 0


def cmd_calibrate(args):
    from .pipeline import prepare_transfers

    cfg = _pipeline_config(args)
    if args.transfer_cache:
        Path(args.transfer_cache).mkdir(parents=True, exist_ok=True)
    tr = prepare_transfers([args.sample_rate], cfg, args.transfer_cache)[args.sample_rate]
    Path(args.out_gain).write_text(json.dumps({"sample_rate": args.sample_rate, "gain": tr.calib_gain}))
    print(tr.calib_gain)
    return 0


def cmd_split(args):
    from .events import SplitSpec, read_container, save_split, split

    mode = args.mode.replace("-", "_")
    spec = SplitSpec(mode=mode, holdout_speakers=tuple(args.holdout), extra_test_frac=args.test_frac,
                     val_frac_of_train=args.val_frac)
    c = read_container(args.inp)
    tr, va, te = split(c, spec, _seed(args))
    save_split(args.out, tr, va, te, spec, _seed(args))
    print(json.dumps({"train": len(tr), "val": len(va), "test": len(te)}))
    return 0


def _net_and_data(args, container, n_class=None):
    from .train import NetSpec, RasterDataset

    n_units = args.n_units
    if n_units is None:
        n_units = max((int(s.units.max()) + 1 for s in container.samples if len(s)), default=1)
    spec = NetSpec(n_in=n_units, n_class=n_class or max(len(container.keys), 1), arch=args.arch,
                   n_hidden=args.hidden, dt=args.dt_ms * 1e-3, T=args.duration_s)
    return spec, RasterDataset.from_container(container, spec)


def _loss_kind(flag):
    return {"max-over-time": "max_over_time", "last-step": "last_time_step"}[flag]


def cmd_train(args):
    from .events import load_split, read_container
    from .train import save_checkpoint, train, write_metrics

    c = read_container(args.inp)
    tr_idx, va_idx, _ = load_split(args.split)
    spec, data = _net_and_data(args, c)
    kind = _loss_kind(args.loss)
    run = train(spec, data.subset(tr_idx), data.subset(va_idx), beta=args.beta, lr=args.lr,
                epochs=args.epochs, batch=args.batch, seed=_seed(args), kind=kind,
                log=lambda r: print(json.dumps(r), flush=True))
    save_checkpoint(args.out, spec, run.best_params,
                    {"kind": kind, "beta": args.beta, "best_epoch": run.best_epoch, "keys": c.keys})
    if args.metrics:
        write_metrics(args.metrics, run.history)
    return 0


def cmd_eval(args):
    from .evaluate import cross_dataset_eval, network_scores, report, write_report
    from .events import SplitSpec, load_split, read_container
    from .train import load_checkpoint

    spec, params, extra = load_checkpoint(args.ckpt)
    kind = extra.get("kind", "max_over_time")
    beta = extra.get("beta", 40.0)
    c = read_container(args.inp)
    _, _, te = load_split(args.split)
    test = c.subset(te)
    score = network_scores(spec, params, kind, beta)
    preds = np.argmax(score(test), axis=1) if len(test) else np.zeros(0, dtype=np.int64)
    split_doc = json.loads(Path(args.split).read_text())
    holdout = split_doc.get("spec", {}).get("holdout_speakers", SplitSpec().holdout_speakers)
    rep = report(preds, test.labels, test.speaker, spec.n_class, holdout)
    if not args.per_speaker:
        rep["per_speaker"] = {}
    if args.cross:
        rep["cross"] = cross_dataset_eval(score, extra.get("keys", c.keys), read_container(args.cross))
    write_report(args.report, rep)
    print(json.dumps({"overall": rep["overall"]}))
    return 0


def cmd_sweep(args):
    from .events import load_split, read_container
    from .train import grid_search

    c = read_container(args.inp)
    tr_idx, va_idx, _ = load_split(args.split)
    spec, data = _net_and_data(args, c)
    rows = grid_search(args.beta, args.lr, spec, data.subset(tr_idx), data.subset(va_idx), args.out,
                       epochs=args.epochs, batch=args.batch, seed=_seed(args), kind=_loss_kind(args.loss))
    print(json.dumps({"rows": len(rows)}))
    return 0


def cmd_export(args):
    from .evaluate import export_count_features
    from .events import export_hdf5, load_split, read_container, write_container

    c = read_container(args.inp)
    if args.format == "hdf5":
        export_hdf5(args.out, c)
    elif args.format == "esf":
        write_container(args.out, c)
    else:
        n_units = args.n_units or max((int(s.units.max()) + 1 for s in c.samples if len(s)), default=1)
        if args.split:
            parts = load_split(args.split)
        else:
            everything = np.arange(len(c))
            parts = (everything, everything[:0], everything)
        export_count_features(c, parts, args.out, n_units, part="test")
    return 0


def cmd_stats(args):
    from .events import read_container

    c = read_container(args.inp)
    counts = [len(s) for s in c.samples]
    durations = [s.duration for s in c.samples]
    hist, edges = np.histogram(durations, bins=10, range=(0.0, max(durations, default=0.0) or 1.0))
    out = {
        "samples": len(c),
        "events": int(sum(counts)),
        "events_per_sample": {
            "mean": float(np.mean(counts)) if counts else 0.0,
            "min": int(min(counts, default=0)),
            "max": int(max(counts, default=0)),
        },
        "duration_hist": {"counts": hist.tolist(), "edges": edges.tolist()},
        "class_counts": {k: int(np.sum(c.labels == i)) for i, k in enumerate(c.keys)},
        "speakers": sorted({int(s) for s in c.speaker}),
    }
    print(json.dumps(out, indent=2))
    return 0


HANDLERS = {"convert": cmd_convert, "calibrate": cmd_calibrate, "split": cmd_split,
            "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "export": cmd_export,
            "stats": cmd_stats}


def _validate(ap, args):
    if args.cmd in ("train", "sweep") and (args.epochs < 0 or args.batch < 1):
        ap.error("--epochs must be >= 0 and --batch >= 1")
    if args.cmd in ("train", "sweep") and (args.dt_ms <= 0 or args.duration_s <= 0):
        ap.error("--dt-ms and --duration-s must be positive")
    if args.cmd == "convert" and (args.workers < 1 or args.channels < 1 or args.hc_per_channel < 1):
        ap.error("--workers, --channels and --hc-per-channel must be >= 1")
    if args.cmd == "split" and args.mode == "speaker-holdout" and not args.holdout:
        ap.error("--mode speaker-holdout needs at least one --holdout speaker")
    if args.cmd == "export" and args.split and args.format != "csv-counts":
        ap.error("--split only applies to --format csv-counts")


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    _validate(ap, args)
    try:
        return HANDLERS[args.cmd](args)
    except Exception as exc:  # reported as JSON for scripts
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
