"""Adam training loop, image metrics, generalisation sweeps and filter reports."""

import math
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import checkpoint, pnm
from .data import Dataset
from .inverse import smoothing_level

PSNR_CAP = 300.0
CSV_HEADER = "step,epoch,train_loss,test_psnr,test_rel_l2,wall_time_s"


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 18
    batch_size: int = 16
    lr_initial: float = 2e-3
    lr_final: float = 4e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    # fixed optimizer-step budget; overrides epochs when set
    max_steps: int = 0
    eval_batch: int = 50
    # "wall" records elapsed seconds; "off" writes 0 so reruns give identical CSVs
    timing: str = "wall"
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_final > self.lr_initial:
            raise ValueError("lr_final must not exceed lr_initial")
        if self.lr_final < 0:
            raise ValueError("learning rates must be nonnegative")
        if self.epochs < 1 and self.max_steps < 1:
            raise ValueError("need epochs >= 1 or max_steps >= 1")
        if self.timing not in ("wall", "off"):
            raise ValueError(f"timing must be 'wall' or 'off', got {self.timing!r}")

    def steps_per_epoch(self, n):
        return math.ceil(n / self.batch_size)

    def total_steps(self, n):
        return self.max_steps if self.max_steps else self.epochs * self.steps_per_epoch(n)

    def eval_every(self, n):
        """Every 1/20 of the run, and at least once per epoch."""
        return max(1, min(self.total_steps(n) // 20, self.steps_per_epoch(n)))


def lr_at(cfg, step, total):
    """Exponential decay from lr_initial at step 0 to lr_final at the last step."""
    if total <= 1 or cfg.lr_initial == 0:
        return cfg.lr_initial
    if cfg.lr_final == 0:
        return cfg.lr_initial if step == 0 else 0.0
    return cfg.lr_initial * (cfg.lr_final / cfg.lr_initial) ** (step / (total - 1))


# optimiser ------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place bias-corrected Adam update of the arrays in ``params``."""
    if len(params) != len(state.m):
        raise ValueError("optimizer state does not match parameter list")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise ValueError(f"state shape {m.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return state


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = AdamState.zeros_like([p.value for p in self.params])

    def step(self, lr):
        adam_step([p.value for p in self.params], [p.grad for p in self.params], self.state,
                  lr, self.beta1, self.beta2, self.eps)


# metrics --------------------------------------------------------------------

def psnr(a, b, peak=1.0):
    """``10 log10(peak^2 / mse)``; identical images give the capped value 300 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if not peak > 0:
        raise ValueError("peak must be positive")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse)))


def rel_l2(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = np.linalg.norm(a - b)
    den = np.linalg.norm(b)
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return float(num / den)


@dataclass(frozen=True)
class EvalResult:
    psnr: float
    rel_l2: float
    mse: float
    input_psnr: float


def predict(net, inputs, batch=50):
    """Network output for a stack of images (N, H, W), in float64."""
    out = []
    for i in range(0, len(inputs), batch):
        out.append(net(inputs[i:i + batch]).value[..., 0].astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0,) + inputs.shape[1:])


def evaluate(net, pairs, batch=50):
    """Mean per-image PSNR / relative l2 / MSE of the network on ``pairs``."""
    x, y = Dataset.stack(pairs)
    pred = predict(net, x.astype(net.dtype), batch)
    return EvalResult(
        psnr=float(np.mean([psnr(p, t) for p, t in zip(pred, y)])),
        rel_l2=float(np.mean([rel_l2(p, t) for p, t in zip(pred, y)])),
        mse=float(np.mean((pred - y) ** 2)),
        input_psnr=float(np.mean([psnr(a, t) for a, t in zip(x, y)])),
    )


# training -------------------------------------------------------------------

@dataclass
class MetricsRecord:
    step: int
    epoch: int
    train_loss: float
    test_psnr: float
    test_rel_l2: float
    wall_time_s: float
    test_loss: float = float("nan")

    def csv_row(self):
        return (f"{self.step},{self.epoch},{self.train_loss:.9e},{self.test_psnr:.9e},"
                f"{self.test_rel_l2:.9e},{self.wall_time_s:.3f}")


@dataclass
class TrainResult:
    net: object
    history: list
    best_step: int
    best_psnr: float
    best_state: dict = field(repr=False, default=None)

    @property
    def final(self):
        return self.history[-1]


def write_metrics_csv(path, history):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in history:
            fh.write(rec.csv_row() + "\n")
    os.replace(tmp, path)


def _mse_step(net, x, y):
    with ad.Tape() as tape:
        loss = ad.mse_loss(net(x), y[..., None])
        tape.backward(loss)
    return float(loss.value)


def train(net, dataset, cfg=TrainConfig(), out_dir=None, log=None):
    """Minimise the l2 loss of ``net(degraded)`` against ``clean`` with Adam.

    Writes ``metrics.csv``, ``best.ckpt`` and ``final.ckpt`` into ``out_dir``
    when given. Returns the network at its final parameters together with
    the retained best-test state.
    """
    dtype = np.dtype(cfg.dtype)
    x_all, y_all = Dataset.stack(dataset.train, dtype)
    n = len(x_all)
    spe = cfg.steps_per_epoch(n)
    total = cfg.total_steps(n)
    every = cfg.eval_every(n)
    opt = Adam(net.parameters(), cfg.beta1, cfg.beta2, cfg.eps)
    history = []
    best = (-math.inf, -1, None)
    start = time.perf_counter()
    running = []

    def clock():
        return time.perf_counter() - start if cfg.timing == "wall" else 0.0

    def record(step, epoch, train_loss):
        nonlocal best
        ev = evaluate(net, dataset.test, cfg.eval_batch) if dataset.test else None
        rec = MetricsRecord(step, epoch, train_loss, ev.psnr if ev else math.nan,
                            ev.rel_l2 if ev else math.nan, clock(), ev.mse if ev else math.nan)
        history.append(rec)
        if ev and ev.psnr > best[0]:
            best = (ev.psnr, step, net.state_dict())
            if out_dir:
                checkpoint.save(os.path.join(out_dir, "best.ckpt"), best[2])
        if out_dir:
            write_metrics_csv(os.path.join(out_dir, "metrics.csv"), history)
        if log:
            log(f"step {step}/{total} epoch {epoch} train_loss {train_loss:.4e} "
                f"test_psnr {rec.test_psnr:.2f} dB")

    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    first = np.random.default_rng([cfg.seed, 0]).permutation(n)[:cfg.batch_size]
    x0 = x_all[first]
    record(0, 0, float(np.mean((net(x0).value[..., 0] - y_all[first]) ** 2)))

    step = 0
    epoch = 0
    while step < total:
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        for b in range(spe):
            if step >= total:
                break
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            net.zero_grad()
            loss = _mse_step(net, x_all[idx], y_all[idx])
            if not math.isfinite(loss):
                msg = (f"non-finite loss at step {step} (epoch {epoch}, batch {b}); "
                       f"shuffle seed [{cfg.seed}, {epoch}], sample indices {idx.tolist()}")
                if out_dir:
                    with open(os.path.join(out_dir, "nan_dump.txt"), "w", encoding="utf-8") as fh:
                        fh.write(msg + "\n")
                raise TrainingDiverged(msg)
            opt.step(lr_at(cfg, step, total))
            running.append(loss)
            step += 1
            if step % every == 0 or step == total:
                record(step, epoch + (b + 1) // spe, float(np.mean(running)))
                running = []
        epoch += 1

    if out_dir:
        checkpoint.save(os.path.join(out_dir, "final.ckpt"), net.state_dict())
    return TrainResult(net, history, best[1], best[0], best[2])


# sweeps and reports ---------------------------------------------------------

def write_curve_csv(path, rows, column="psnr"):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"size_or_noise,{column}\n")
        for key, value in rows:
            fh.write(f"{key!r},{value:.9e}\n")
    os.replace(tmp, path)


def sweep_training_size(make_net, dataset, sizes, cfg, out_dir=None, log=None):
    """Train one fresh model per training-set size and record its final test PSNR.

    Every size gets the same number of optimizer steps (``cfg.max_steps`` or,
    if unset, the step count of the largest size), so small sets are revisited
    more often rather than trained for less time.
    """
    sizes = list(sizes)
    if sizes != sorted(sizes):
        raise ValueError("sizes must be ascending")
    if sizes[-1] > len(dataset.train):
        raise ValueError(f"largest size {sizes[-1]} exceeds the {len(dataset.train)} training samples")
    budget = cfg.max_steps or cfg.total_steps(sizes[-1])
    run_cfg = replace(cfg, max_steps=budget)
    rows = []
    for size in sizes:
        sub = os.path.join(out_dir, f"size_{size}") if out_dir else None
        result = train(make_net(), dataset.subset(size), run_cfg, sub, log)
        rows.append((size, result.final.test_psnr))
        if out_dir:
            write_curve_csv(os.path.join(out_dir, "size_sweep.csv"), rows)
    return rows


def layer_filters(net, inputs):
    """Per-layer filter planes (B, H, W, 5) for a stack of input images."""
    _, filters = net(np.asarray(inputs, dtype=net.dtype), return_filters=True)
    return [f.value.astype(np.float64) for f in filters]


def smoothing_alpha(net, inputs):
    """Mean |S| over samples and layers, S = sum of directional planes + center."""
    filters = layer_filters(net, inputs)
    return float(np.mean([smoothing_level(f, axis=-1) for f in filters]))


def smoothing_vs_noise(models, n_samples=32, out_csv=None):
    """``models`` maps noise_pct -> (net, test pairs). Returns [(noise_pct, alpha)]."""
    rows = []
    for noise in sorted(models):
        net, pairs = models[noise]
        if net is None:
            raise FileNotFoundError(f"no trained model for noise level {noise}")
        x, _ = Dataset.stack(pairs[:n_samples])
        rows.append((noise, smoothing_alpha(net, x)))
    if out_csv:
        write_curve_csv(out_csv, rows, "alpha")
    return rows


def _normalise(a):
    lo, hi = float(a.min()), float(a.max())
    if hi > lo:
        return (a - lo) / (hi - lo), lo, hi
    return np.full_like(a, 0.5), lo, hi


def export_filters(net, image, out_dir):
    """Write per-layer PGMs of the smoothing sum and of zeta5 = -center, each on its own scale.

    Returns the list of written file names; ranges go to ``filters.txt``.
    """
    os.makedirs(out_dir, exist_ok=True)
    filters = layer_filters(net, np.asarray(image)[None])
    names, lines = [], ["file,min,max"]
    for k, f in enumerate(filters):
        planes = f[0]
        quantities = {"sum": planes[..., :4].sum(axis=-1) + planes[..., 4], "zeta5": 0.0 - planes[..., 4]}
        for label, q in quantities.items():
            img, lo, hi = _normalise(q)
            name = f"layer{k}_{label}.pgm"
            pnm.save_image(os.path.join(out_dir, name), img)
            names.append(name)
            lines.append(f"{name},{lo!r},{hi!r}")
    with open(os.path.join(out_dir, "filters.txt"), "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return names
