"""Surrogate-gradient BPTT for LIF networks.

Arrays are time-major, (T, B, N). Every hidden layer follows the discrete LIF
recurrence with u_leak = u_reset = 0 and threshold 1,

    I[n] = kappa I[n-1] + X[n] W^T + S[n-1] V^T
    u[n] = lambda u[n-1] (1 - S[n-1]) + (1 - lambda) I[n-1]
    S[n] = Theta(u[n] - 1)

and the readout is the same pair of equations without spikes or reset. In the
backward pass dTheta/du is replaced by the fast-sigmoid derivative
1 / (1 + beta |u - 1|)^2 and, by default, the reset factor (1 - S) is treated as
a constant.
"""

import csv
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DivergenceError, GradError, ShapeError
from .events import bin_raster
from .lif import kaiming_init

ARCHS = ("ff1", "ff2", "ff3", "rsnn")
LOSSES = ("max_over_time", "last_time_step")
CKPT_VERSION = 1
THRESHOLD = 1.0


@dataclass(frozen=True)
class NetSpec:
    n_in: int
    n_class: int
    arch: str = "rsnn"
    n_hidden: int = 128
    dt: float = 5e-4
    T: float = 1.0
    tau_mem: float = 20e-3
    tau_syn: float = 10e-3
    tau_ref: float = 0.0

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}")
        if self.tau_ref != 0.0:
            raise ValueError("classifier layers have no refractory period")

    @property
    def n_layers(self):
        return 1 if self.arch == "rsnn" else int(self.arch[2])

    @property
    def recurrent(self):
        return self.arch == "rsnn"

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    @property
    def kappa(self):
        return math.exp(-self.dt / self.tau_syn)

    @property
    def lam(self):
        return math.exp(-self.dt / self.tau_mem)

    def digest(self):
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass(frozen=True)
class RegSpec:
    s_l: float = 1.0
    theta_l: float = 0.01
    s_u: float = 0.06
    theta_u: float = 100.0


def init_params(spec, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    params = {}
    fan_in = spec.n_in
    for l in range(spec.n_layers):
        params[f"W{l}"] = kaiming_init(spec.n_hidden, fan_in, rng, dtype)
        if spec.recurrent:
            params[f"V{l}"] = kaiming_init(spec.n_hidden, spec.n_hidden, rng, dtype)
        fan_in = spec.n_hidden
    params["Wr"] = kaiming_init(spec.n_class, spec.n_hidden, rng, dtype)
    return params


def surrogate_derivative(v, beta=40.0):
    return 1.0 / (1.0 + beta * np.abs(v)) ** 2


def fast_sigmoid(v, beta=40.0):
    return v / (1.0 + beta * np.abs(v))


@dataclass
class Trace:
    inputs: list      # per hidden layer, its (T, B, n_in) input
    u: list
    I: list
    S: list
    u_r: np.ndarray
    smooth: bool = False


def _hidden_forward(X, W, V, kappa, lam, smooth, beta):
    T, B, _ = X.shape
    N = W.shape[0]
    drive = X @ W.T
    u_all = np.empty((T, B, N), dtype=X.dtype)
    I_all = np.empty_like(u_all)
    S_all = np.empty_like(u_all)
    u = np.zeros((B, N), dtype=X.dtype)
    I = np.zeros_like(u)
    S = np.zeros_like(u)
    for n in range(T):
        I_next = kappa * I + drive[n]
        if V is not None:
            I_next += S @ V.T
        u = lam * u * (1 - S) + (1 - lam) * I
        I = I_next
        if smooth:
            S = fast_sigmoid(u - THRESHOLD, beta).astype(X.dtype)
        else:
            S = (u >= THRESHOLD).astype(X.dtype)
        u_all[n], I_all[n], S_all[n] = u, I, S
    return u_all, I_all, S_all


def _readout_forward(X, Wr, kappa, lam):
    T, B, _ = X.shape
    drive = X @ Wr.T
    out = np.empty((T, B, Wr.shape[0]), dtype=X.dtype)
    u = np.zeros((B, Wr.shape[0]), dtype=X.dtype)
    I = np.zeros_like(u)
    for n in range(T):
        u = lam * u + (1 - lam) * I
        I = kappa * I + drive[n]
        out[n] = u
    return out


def forward(spec, params, X, beta=40.0, smooth=False):
    """Run the network on a (T, B, n_in) batch.

    ``smooth`` replaces Theta by the fast sigmoid in the forward pass (for
    gradient checks only).
    """
    X = np.asarray(X)
    if X.ndim != 3 or X.shape[2] != spec.n_in:
        raise ShapeError(f"batch must be (T, B, {spec.n_in}), got {X.shape}")
    X = X.astype(params["Wr"].dtype, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input batch")
    tr = Trace([], [], [], [], None, smooth)
    h = X
    for l in range(spec.n_layers):
        u, I, S = _hidden_forward(h, params[f"W{l}"], params.get(f"V{l}"), spec.kappa, spec.lam,
                                  smooth, beta)
        tr.inputs.append(h)
        tr.u.append(u)
        tr.I.append(I)
        tr.S.append(S)
        h = S
    tr.u_r = _readout_forward(h, params["Wr"], spec.kappa, spec.lam)
    return tr


def select_logits(u_r, kind="max_over_time"):
    """Per-unit readout value and its time index, each (B, C)."""
    if kind == "max_over_time":
        idx = np.argmax(u_r, axis=0)  # first maximum wins ties
    elif kind == "last_time_step":
        idx = np.full(u_r.shape[1:], u_r.shape[0] - 1)
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    vals = np.take_along_axis(u_r, idx[None], axis=0)[0]
    return vals, idx


def loss(u_r, labels, kind="max_over_time"):
    """Mean softmax cross entropy; returns (loss, dL/du_r)."""
    labels = np.asarray(labels, dtype=np.int64)
    logits, idx = select_logits(u_r, kind)
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    B = labels.size
    value = -float(np.mean(logp[np.arange(B), labels]))
    g = np.exp(logp)
    g[np.arange(B), labels] -= 1.0
    g /= B
    grad = np.zeros(u_r.shape, dtype=np.float64)
    b_idx, c_idx = np.meshgrid(np.arange(B), np.arange(u_r.shape[2]), indexing="ij")
    grad[idx, b_idx, c_idx] = g
    return value, grad.astype(u_r.dtype)


def regularizers(S_layers, spec=RegSpec()):
    """Spike-count penalties summed over hidden layers; returns (value, [dL/dS])."""
    total = 0.0
    grads = []
    for S in S_layers:
        T, B, N = S.shape
        S64 = S.astype(np.float64)
        rate = S64.mean(axis=0)                       # (B, N)
        ex_l = np.maximum(0.0, rate - spec.theta_l)
        pop = S64.sum(axis=(0, 2)) / N                # (B,)
        ex_u = np.maximum(0.0, pop - spec.theta_u)
        total += spec.s_l / (B + N) * float(np.sum(ex_l**2)) + spec.s_u / B * float(np.sum(ex_u**2))
        g = (2 * spec.s_l / (B + N) / T) * ex_l[None] + (2 * spec.s_u / B / N) * ex_u[None, :, None]
        grads.append(np.broadcast_to(g, S.shape).astype(S.dtype))
    return total, grads


def _check_finite(arr, what):
    bad = ~np.isfinite(arr.reshape(arr.shape[0], -1)).all(axis=1)
    if np.any(bad):
        step = int(np.flatnonzero(bad)[0])
        raise GradError(f"non-finite gradient in {what} at step {step}", step)


def _outer_sum(A, X):
    # sum over time and batch of A[t, b]^T X[t, b], through one BLAS call
    return A.reshape(-1, A.shape[-1]).T @ X.reshape(-1, X.shape[-1])


def _readout_backward(g_trace, X, Wr, kappa, lam):
    T = g_trace.shape[0]
    A = np.empty_like(g_trace)
    cu = np.zeros_like(g_trace[0])
    cI = np.zeros_like(cu)
    for n in range(T - 1, -1, -1):
        au = g_trace[n] + cu
        A[n] = cI
        cu = lam * au
        cI = kappa * cI + (1 - lam) * au
    dWr = _outer_sum(A, X)
    return dWr, A @ Wr


def _hidden_backward(gS_ext, X, u, S, W, V, kappa, lam, beta, detach_reset):
    T = gS_ext.shape[0]
    A = np.empty_like(gS_ext)
    cu = np.zeros_like(gS_ext[0])
    cI = np.zeros_like(cu)
    cS = np.zeros_like(cu)
    for n in range(T - 1, -1, -1):
        gS = gS_ext[n] + cS
        au = cu + gS * surrogate_derivative(u[n] - THRESHOLD, beta)
        aI = cI
        A[n] = aI
        if n > 0:
            s_prev, u_prev = S[n - 1], u[n - 1]
            cu = lam * (1 - s_prev) * au
            cS = aI @ V if V is not None else np.zeros_like(aI)
            if not detach_reset:
                cS = cS - lam * u_prev * au
        else:
            cu = lam * au
            cS = np.zeros_like(aI)
        cI = kappa * aI + (1 - lam) * au
    _check_finite(A, "hidden current")
    dW = _outer_sum(A, X)
    dV = None
    if V is not None:
        dV = _outer_sum(A[1:], S[:-1])
    return dW, dV, A @ W


def backward(spec, params, trace, g_trace, gS_extra=None, beta=40.0, detach_reset=True):
    """Gradients of the loss for every parameter, given dL/du_r.

    ``gS_extra`` optionally adds a direct gradient on each hidden layer's
    spikes (regularizers).
    """
    _check_finite(g_trace, "readout trace")
    grads = {}
    X_top = trace.S[-1]
    grads["Wr"], gS = _readout_backward(g_trace, X_top, params["Wr"], spec.kappa, spec.lam)
    for l in range(spec.n_layers - 1, -1, -1):
        if gS_extra is not None:
            gS = gS + gS_extra[l]
        dW, dV, gS = _hidden_backward(gS, trace.inputs[l], trace.u[l], trace.S[l], params[f"W{l}"],
                                      params.get(f"V{l}"), spec.kappa, spec.lam, beta, detach_reset)
        grads[f"W{l}"] = dW
        if dV is not None:
            grads[f"V{l}"] = dV
    return grads


def loss_and_grads(spec, params, X, labels, kind="max_over_time", beta=40.0, reg=None,
                   smooth=False, detach_reset=True):
    tr = forward(spec, params, X, beta, smooth)
    value, g = loss(tr.u_r, labels, kind)
    gS_extra = None
    if reg is not None:
        r, gS_extra = regularizers(tr.S, reg)
        value += r
    grads = backward(spec, params, tr, g, gS_extra, beta, detach_reset)
    return value, grads, tr


# --- optimizer ---------------------------------------------------------------

@dataclass
class AdamaxState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    u: dict = field(default_factory=dict)
    t: int = 0


def adamax_step(params, grads, state):
    """In-place Adamax update of ``params``; returns ``params``."""
    state.t += 1
    corr = state.lr / (1.0 - state.beta1**state.t)
    for k, g in grads.items():
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.u[k] = np.zeros_like(params[k])
        m = state.m[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        np.maximum(state.beta2 * state.u[k], np.abs(g), out=state.u[k])
        params[k] -= (corr * m / (state.u[k] + state.eps)).astype(params[k].dtype)
    return params


# --- data ------------------------------------------------------------------------

class RasterDataset:
    """Event streams binned on demand into (T, B, n_units) batches."""

    def __init__(self, samples, labels, n_units, dt, T, mode="binary", dtype=np.float32):
        self.samples = list(samples)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.n_units, self.dt, self.T, self.mode, self.dtype = n_units, dt, T, mode, dtype

    def __len__(self):
        return len(self.samples)

    def batch(self, idx):
        rasters = [bin_raster(self.samples[i], self.dt, self.T, self.n_units, self.mode, self.dtype)
                   for i in idx]
        return np.stack(rasters, axis=1), self.labels[np.asarray(idx, dtype=np.int64)]

    def subset(self, idx):
        return RasterDataset([self.samples[i] for i in idx], self.labels[np.asarray(idx, dtype=np.int64)],
                             self.n_units, self.dt, self.T, self.mode, self.dtype)

    @classmethod
    def from_container(cls, container, spec, mode="binary", n_units=None):
        return cls(container.samples, container.labels, n_units or spec.n_in, spec.dt, spec.T, mode)


def predict(u_r, kind="max_over_time"):
    return np.argmax(select_logits(u_r, kind)[0], axis=1)


def evaluate(spec, params, data, kind="max_over_time", beta=40.0, batch=256):
    """(loss, accuracy, predictions) over a dataset."""
    total = 0.0
    preds = []
    for start in range(0, len(data), batch):
        idx = np.arange(start, min(start + batch, len(data)))
        X, y = data.batch(idx)
        tr = forward(spec, params, X, beta)
        value, _ = loss(tr.u_r, y, kind)
        total += value * idx.size
        preds.append(predict(tr.u_r, kind))
    preds = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    n = max(len(data), 1)
    acc = float(np.mean(preds == data.labels)) if len(data) else 0.0
    return total / n, acc, preds


@dataclass
class TrainRun:
    spec: NetSpec
    hyper: dict
    params: dict
    best_params: dict
    history: list = field(default_factory=list)
    best_epoch: int = -1
    opt: Optional[AdamaxState] = None

    @property
    def best_val_acc(self):
        return max((h["val_acc"] for h in self.history), default=0.0)

    def epochs_to(self, level):
        for h in self.history:
            if h["val_acc"] >= level:
                return h["epoch"]
        return None


def train(spec, train_data, val_data, beta=40.0, lr=1e-3, epochs=150, batch=256, seed=0,
          kind="max_over_time", reg=RegSpec(), params=None, log=None, stop_at=None):
    """Mini-batch training with seeded shuffling; keeps the best-validation weights.

    Training ends early once validation accuracy reaches ``stop_at``.
    """
    if kind not in LOSSES:
        raise ValueError(f"unknown loss kind {kind!r}")
    params = init_params(spec, seed) if params is None else {k: v.copy() for k, v in params.items()}
    opt = AdamaxState(lr=lr)
    rng = np.random.default_rng([seed, 1])
    hyper = dict(beta=beta, lr=lr, epochs=epochs, batch=batch, seed=seed, kind=kind,
                 reg=dataclasses.asdict(reg) if reg is not None else None)
    run = TrainRun(spec, hyper, params, {k: v.copy() for k, v in params.items()}, opt=opt)
    best = -1.0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_data))
        tot_loss = 0.0
        correct = 0
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            X, y = train_data.batch(idx)
            value, grads, tr = loss_and_grads(spec, params, X, y, kind, beta, reg)
            if not math.isfinite(value):
                raise DivergenceError(f"loss became {value} in epoch {epoch}, batch {start // batch}")
            tot_loss += value * idx.size
            correct += int(np.sum(predict(tr.u_r, kind) == y))
            adamax_step(params, grads, opt)
        val_loss, val_acc, _ = evaluate(spec, params, val_data, kind, beta, batch)
        rec = dict(epoch=epoch, train_loss=tot_loss / max(len(train_data), 1),
                   train_acc=correct / max(len(train_data), 1), val_loss=val_loss, val_acc=val_acc)
        run.history.append(rec)
        if log is not None:
            log(rec)
        if val_acc > best:
            best = val_acc
            run.best_epoch = epoch
            run.best_params = {k: v.copy() for k, v in params.items()}
        if stop_at is not None and val_acc >= stop_at:
            break
    return run


def write_metrics(path, history):
    cols = ["epoch", "train_loss", "train_acc", "val_loss", "val_acc"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for h in history:
            w.writerow([h[c] for c in cols])


def grid_search(beta_grid, lr_grid, spec, train_data, val_data, out_csv=None, level=0.75, **kw):
    """Train once per (beta, lr); rows of (beta, lr, best_val_acc, epochs_to_level)."""
    rows = []
    for beta in beta_grid:
        for lr in lr_grid:
            run = train(spec, train_data, val_data, beta=beta, lr=lr, **kw)
            rows.append((beta, lr, run.best_val_acc, run.epochs_to(level)))
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["beta", "lr", "best_val_acc", f"n_epochs_to_{level}"])
            for r in rows:
                w.writerow(["" if v is None else v for v in r])
    return rows


# --- checkpoints -------------------------------------------------------------

def save_checkpoint(path, spec, params, extra=None):
    meta = {"version": CKPT_VERSION, "spec": dataclasses.asdict(spec), "spec_hash": spec.digest(),
            "extra": extra or {}}
    arrays = {f"p_{k}": v for k, v in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path):
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        if meta.get("version") != CKPT_VERSION:
            raise ValueError(f"checkpoint version {meta.get('version')} not supported")
        spec = NetSpec(**meta["spec"])
        if spec.digest() != meta["spec_hash"]:
            raise ValueError("checkpoint spec hash mismatch")
        params = {k[2:]: data[k] for k in data.files if k.startswith("p_")}
    return spec, params, meta.get("extra", {})


# --- synthetic task ------------------------------------------------------------

def latency_task(n_samples=1024, n_in=100, n_class=2, T=0.2, burst=4, jitter=4e-3,
                 noise_rate=2.0, seed=0, task_seed=1234, onset_max=0.1):
    """Latency-coded classes: each class fixes a burst onset per input channel.

    Templates depend only on ``task_seed``; samples add Gaussian onset jitter
    and Poisson background spikes. Returns (samples, labels).

    burst=4 is the shortest burst for which a Kaiming-initialized 128-unit
    recurrent layer spikes at all (20 of 20 init seeds; 5 of 20 at burst=3).
    A silent network never trains: its readout is zero everywhere and the
    max-over-time argmax falls on step 0, which no weight can reach.
    """
    from .events import EventStream

    trng = np.random.default_rng(task_seed)
    onsets = trng.uniform(0.01, onset_max, size=(n_class, n_in))
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n_class, size=n_samples)
    samples = []
    for y in labels:
        t0 = onsets[y] + rng.normal(0.0, jitter, size=n_in)
        times = (t0[:, None] + 1e-3 * np.arange(burst)[None, :]).ravel()
        units = np.repeat(np.arange(n_in), burst)
        n_noise = rng.poisson(noise_rate * T * n_in)
        times = np.concatenate([times, rng.uniform(0, T, n_noise)])
        units = np.concatenate([units, rng.integers(0, n_in, n_noise)])
        keep = (times >= 0) & (times < T)
        samples.append(EventStream.from_unsorted(times[keep], units[keep]))
    return samples, labels
