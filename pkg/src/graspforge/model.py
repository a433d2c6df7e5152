"""Grasp-quality network: a small from-scratch CNN over depth patches.

Fixed architecture for an S x S input: three 3x3 conv + ReLU + 2x2 max-pool
stages (8 channels), one depthwise-separable block (16 channels), global
average pooling, and a single logit through a sigmoid. Everything - forward,
backward, Adam - is plain numpy: computation runs in float64 for stable
finite-difference checks, parameters are stored float32.

Training minimizes class-weighted binary cross-entropy with per-class
weights from the label distribution, on a stratified split, with optional
4-way flip augmentation. The best validation-accuracy checkpoint wins.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .depthproc import Patch
from .errors import DegenerateInput, ShapeMismatch, SingleClass
from .simlab import ClassWeights, GraspSample, class_weights

_MAGIC = b"GFQN"
_VERSION = 1
_EPS_CLAMP = 1e-7
_MIN_SIZE = 8    # three halvings need the input side divisible by 8

# parameter tensor shapes, fixed given the input size
_PARAM_SHAPES = (
    ("conv1_w", (8, 1, 3, 3)), ("conv1_b", (8,)),
    ("conv2_w", (8, 8, 3, 3)), ("conv2_b", (8,)),
    ("conv3_w", (8, 8, 3, 3)), ("conv3_b", (8,)),
    ("dw_w", (8, 3, 3)), ("dw_b", (8,)),
    ("pw_w", (16, 8)), ("pw_b", (16,)),
    ("fc_w", (16,)), ("fc_b", (1,)),
)


@dataclass(frozen=True)
class QualityScore:
    q: float

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise DegenerateInput("quality must lie in [0, 1]")


@dataclass
class QualityNet:
    """Parameter container; `params` follows _PARAM_SHAPES order."""

    size: int
    params: list

    def __post_init__(self):
        if self.size < _MIN_SIZE or self.size % 8 != 0:
            raise DegenerateInput("input size must be a positive multiple of 8")
        if len(self.params) != len(_PARAM_SHAPES):
            raise ShapeMismatch("wrong parameter count")
        for arr, (name, shape) in zip(self.params, _PARAM_SHAPES):
            if arr.shape != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {arr.shape}")
            if not np.isfinite(arr).all():
                raise DegenerateInput(f"{name} contains non-finite values")

    @staticmethod
    def zeros(size: int) -> "QualityNet":
        return QualityNet(size, [np.zeros(s, dtype=np.float32) for _, s in _PARAM_SHAPES])


def init_net(size: int, rng: np.random.Generator) -> QualityNet:
    """He-uniform weights, zero biases; deterministic per generator state."""
    params = []
    for name, shape in _PARAM_SHAPES:
        if name.endswith("_b"):
            params.append(np.zeros(shape, dtype=np.float32))
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
        limit = math.sqrt(6.0 / fan_in)
        params.append(rng.uniform(-limit, limit, size=shape).astype(np.float32))
    return QualityNet(size, params)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _conv_cols(x: np.ndarray) -> np.ndarray:
    """im2col for 3x3 stride-1 same-padding: (N,C,H,W) -> (N, C*9, H*W)."""
    n, c, h, w = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(padded, (3, 3), axis=(2, 3))   # (N,C,H,W,3,3)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * 9, h * w)
    return np.ascontiguousarray(cols)


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    n, _, h, wd = x.shape
    co = w.shape[0]
    cols = _conv_cols(x)
    out = np.matmul(w.reshape(co, -1), cols)
    out = out.reshape(n, co, h, wd) + b[None, :, None, None]
    return out, cols


def _conv_backward(dy: np.ndarray, cols: np.ndarray, w: np.ndarray):
    n, co, h, wd = dy.shape
    ci = w.shape[1]
    dyf = dy.reshape(n, co, h * wd)
    dw = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
    db = dy.sum(axis=(0, 2, 3))
    # dX of a same-padded correlation is a same-padded correlation with the
    # spatially flipped, channel-transposed kernel
    w_flip = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx, _ = _conv_forward(dy, np.ascontiguousarray(w_flip), np.zeros(ci))
    return dx, dw, db


def _depthwise_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(padded, (3, 3), axis=(2, 3))
    out = np.einsum("nchwij,cij->nchw", win, w, optimize=True) + b[None, :, None, None]
    return out, win


def _depthwise_backward(dy: np.ndarray, win: np.ndarray, x_shape, w: np.ndarray):
    dw = np.einsum("nchwij,nchw->cij", win, dy, optimize=True)
    db = dy.sum(axis=(0, 2, 3))
    dx, _ = _depthwise_forward(dy, w[:, ::-1, ::-1], np.zeros(w.shape[0]))
    return dx, dw, db


_QUADRANTS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _pool_forward(x: np.ndarray):
    """2x2 stride-2 max pool; the memo records the winning quadrant.

    Ties break toward the lowest quadrant index so exactly one input cell
    receives the gradient.
    """
    quads = [x[:, :, dy::2, dx::2] for dy, dx in _QUADRANTS]
    out = quads[0].copy()
    arg = np.zeros(out.shape, dtype=np.int8)
    for k in (1, 2, 3):
        better = quads[k] > out
        np.copyto(out, quads[k], where=better)
        arg[better] = k
    return out, (arg, x.shape)


def _pool_backward(dy: np.ndarray, memo):
    arg, shape = memo
    dx = np.zeros(shape)
    for k, (qy, qx) in enumerate(_QUADRANTS):
        dx[:, :, qy::2, qx::2] = np.where(arg == k, dy, 0.0)
    return dx


def _forward_batch(net: QualityNet, x: np.ndarray):
    """Logits plus the cache needed for one backward pass; x is (N, S, S)."""
    p = [a.astype(np.float64) for a in net.params]
    cache = {"acts": [], "p": p}
    h = x.astype(np.float64)[:, None, :, :]
    for i in range(3):
        w, b = p[2 * i], p[2 * i + 1]
        z, cols = _conv_forward(h, w, b)
        mask = z > 0
        h, pool_memo = _pool_forward(z * mask)
        cache["acts"].append((cols, mask, pool_memo))
    z, win = _depthwise_forward(h, p[6], p[7])
    dw_mask = z > 0
    hd = z * dw_mask
    zp = np.einsum("nchw,kc->nkhw", hd, p[8], optimize=True) + p[9][None, :, None, None]
    pw_mask = zp > 0
    hp = zp * pw_mask
    pooled = hp.mean(axis=(2, 3))
    logits = pooled @ p[10] + p[11][0]
    cache.update(h_in=h, win=win, dw_mask=dw_mask, hd=hd, pw_mask=pw_mask,
                 hp_shape=hp.shape, pooled=pooled)
    return logits, cache


def _backward_batch(dlogits: np.ndarray, cache):
    p = cache["p"]
    grads = [None] * len(p)
    pooled = cache["pooled"]
    grads[10] = pooled.T @ dlogits
    grads[11] = np.array([dlogits.sum()])
    dpooled = dlogits[:, None] * p[10][None, :]
    n, c, hh, ww = cache["hp_shape"]
    dhp = np.broadcast_to(dpooled[:, :, None, None], (n, c, hh, ww)) / (hh * ww)
    dzp = dhp * cache["pw_mask"]
    grads[8] = np.einsum("nkhw,nchw->kc", dzp, cache["hd"], optimize=True)
    grads[9] = dzp.sum(axis=(0, 2, 3))
    dhd = np.einsum("nkhw,kc->nchw", dzp, p[8], optimize=True)
    dz = dhd * cache["dw_mask"]
    dh, grads[6], grads[7] = _depthwise_backward(dz, cache["win"],
                                                 cache["h_in"].shape, p[6])
    for i in reversed(range(3)):
        cols, mask, pool_memo = cache["acts"][i]
        dz = _pool_backward(dh, pool_memo) * mask
        dh, grads[2 * i], grads[2 * i + 1] = _conv_backward(dz, cols, p[2 * i])
    return grads


def forward(net: QualityNet, patch: Patch) -> QualityScore:
    """Quality of one patch; deterministic, q in (0, 1) by the sigmoid."""
    if patch.size != net.size:
        raise ShapeMismatch(f"patch size {patch.size} != net input {net.size}")
    logits, _ = _forward_batch(net, patch.data[None, :, :])
    return QualityScore(q=float(_sigmoid(logits)[0]))


def forward_many(net: QualityNet, patches) -> np.ndarray:
    """Vectorized qualities for a sequence of same-sized patches."""
    if not patches:
        return np.zeros(0)
    for patch in patches:
        if patch.size != net.size:
            raise ShapeMismatch(f"patch size {patch.size} != net input {net.size}")
    x = np.stack([p.data for p in patches])
    logits, _ = _forward_batch(net, x)
    return _sigmoid(logits)


def loss(y_hat, y, phi: ClassWeights) -> float:
    """Class-weighted binary cross-entropy, averaged over the batch.

    Predictions are clamped to [1e-7, 1 - 1e-7] so a confidently wrong
    output stays finite.
    """
    if isinstance(y_hat, QualityScore):
        y_hat = y_hat.q
    q = np.clip(np.atleast_1d(np.asarray(y_hat, dtype=np.float64)),
                _EPS_CLAMP, 1.0 - _EPS_CLAMP)
    yv = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if q.shape != yv.shape:
        raise ShapeMismatch("prediction and label batches differ in length")
    w = np.where(yv == 1, phi[1], phi[0])
    per = -w * (yv * np.log(q) + (1.0 - yv) * np.log(1.0 - q))
    return float(per.mean())


def gradients(net: QualityNet, batch, phi: ClassWeights) -> list:
    """Exact reverse-mode gradients of the mean batch loss.

    `batch` is (patches, labels) with patches an (N, S, S) array or a list
    of Patch objects.
    """
    x, y = batch
    if not isinstance(x, np.ndarray):
        x = np.stack([p.data for p in x])
    y = np.asarray(y, dtype=np.float64)
    if len(x) == 0:
        raise DegenerateInput("batch must be nonempty")
    logits, cache = _forward_batch(net, x)
    q = _sigmoid(logits)
    w = np.where(y == 1, phi[1], phi[0])
    # the clamp zeroes the gradient once a prediction saturates past it
    live = (q > _EPS_CLAMP) & (q < 1.0 - _EPS_CLAMP)
    dlogits = w * (q - y) * live / len(y)
    return _backward_batch(dlogits, cache)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.2
    augment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0.0:
            raise DegenerateInput("learning rate must be non-negative")
        if not 0.0 < self.val_fraction < 1.0:
            raise DegenerateInput("val_fraction must be in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise DegenerateInput("epochs and batch_size must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise DegenerateInput("betas must lie in [0, 1)")


@dataclass
class AdamState:
    params: list
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p, dtype=np.float32) for p in self.params]
            self.v = [np.zeros_like(p, dtype=np.float32) for p in self.params]


def adam_step(state: AdamState, grads: list, cfg: TrainConfig) -> AdamState:
    """One bias-corrected Adam update; mutates and returns the state."""
    if len(grads) != len(state.params):
        raise ShapeMismatch("gradient count does not match parameters")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, g in enumerate(grads):
        if g.shape != state.params[i].shape:
            raise ShapeMismatch(f"gradient {i} shape {g.shape}")
        g64 = g.astype(np.float64)
        m = b1 * state.m[i].astype(np.float64) + (1.0 - b1) * g64
        v = b2 * state.v[i].astype(np.float64) + (1.0 - b2) * g64 * g64
        step = cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        state.params[i] = (state.params[i].astype(np.float64) - step).astype(np.float32)
        state.m[i] = m.astype(np.float32)
        state.v[i] = v.astype(np.float32)
    return state


def _flip_patch(patch: Patch, horizontal: bool, vertical: bool) -> Patch:
    data = patch.data
    if horizontal:
        data = data[:, ::-1]
    if vertical:
        data = data[::-1, :]
    return Patch(data=np.ascontiguousarray(data), pitch=patch.pitch)


def augment(sample: GraspSample, rng=None) -> list:
    """Original plus horizontal, vertical, and double flip; a parallel-jaw
    grasp is symmetric under all four, so labels carry over unchanged."""
    return [sample] + [
        GraspSample(patch=_flip_patch(sample.patch, h, v), label=sample.label,
                    meta=sample.meta)
        for h, v in ((True, False), (False, True), (True, True))
    ]


@dataclass
class TrainResult:
    net: QualityNet
    history: list          # dict rows: epoch, train_loss, val_acc, val_prec, val_rec
    best_epoch: int
    best_val_acc: float


def write_metrics(history: list, path: str | Path) -> None:
    """Metric log as CSV: epoch, train_loss, val_acc, val_prec, val_rec."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["epoch", "train_loss", "val_acc", "val_prec", "val_rec"])
        for row in history:
            out.writerow([row["epoch"], f"{row['train_loss']:.6f}",
                          f"{row['val_acc']:.4f}", f"{row['val_prec']:.4f}",
                          f"{row['val_rec']:.4f}"])


def _val_metrics(net: QualityNet, x: np.ndarray, y: np.ndarray):
    preds = np.zeros(len(y))
    for start in range(0, len(y), 256):
        logits, _ = _forward_batch(net, x[start:start + 256])
        preds[start:start + 256] = _sigmoid(logits)
    hard = preds >= 0.5
    acc = float((hard == (y == 1)).mean())
    tp = float(np.sum(hard & (y == 1)))
    fp = float(np.sum(hard & (y == 0)))
    fn = float(np.sum(~hard & (y == 1)))
    prec = tp / (tp + fp) if tp + fp > 0 else 0.0
    rec = tp / (tp + fn) if tp + fn > 0 else 0.0
    return acc, prec, rec


def train(dataset, cfg: TrainConfig) -> TrainResult:
    """Stratified split, shuffled minibatch Adam on the weighted loss,
    per-epoch metrics, best-validation-accuracy checkpoint. Deterministic
    per seed."""
    samples = list(dataset)
    if not samples:
        raise DegenerateInput("dataset is empty")
    size = samples[0].patch.size
    rng = np.random.default_rng(cfg.seed)

    labels = np.array([s.label for s in samples])
    pos = np.flatnonzero(labels == 1)
    neg = np.flatnonzero(labels == 0)
    if len(pos) == 0 or len(neg) == 0:
        raise SingleClass("training needs both label classes")
    rng.shuffle(pos)
    rng.shuffle(neg)
    n_val_pos = max(1, int(round(cfg.val_fraction * len(pos))))
    n_val_neg = max(1, int(round(cfg.val_fraction * len(neg))))
    if n_val_pos >= len(pos) or n_val_neg >= len(neg):
        raise DegenerateInput("too few samples in a class to split")
    val_idx = np.concatenate([pos[:n_val_pos], neg[:n_val_neg]])
    train_idx = np.concatenate([pos[n_val_pos:], neg[n_val_neg:]])

    train_samples = [samples[i] for i in train_idx]
    if cfg.augment:
        train_samples = [v for s in train_samples for v in augment(s)]
    phi = class_weights(train_samples)

    x_train = np.stack([s.patch.data for s in train_samples])
    y_train = np.array([s.label for s in train_samples], dtype=np.float64)
    x_val = np.stack([samples[i].patch.data for i in val_idx])
    y_val = np.array([samples[i].label for i in val_idx], dtype=np.float64)

    net = init_net(size, rng)
    state = AdamState(params=net.params)
    best = ([p.copy() for p in net.params], 0, -1.0)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_samples))
        total, seen = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            xb, yb = x_train[sel], y_train[sel]
            logits, cache = _forward_batch(net, xb)
            q = _sigmoid(logits)
            total += loss(q, yb, phi) * len(sel)
            seen += len(sel)
            w = np.where(yb == 1, phi[1], phi[0])
            live = (q > _EPS_CLAMP) & (q < 1.0 - _EPS_CLAMP)
            dlogits = w * (q - yb) * live / len(sel)
            state = adam_step(state, _backward_batch(dlogits, cache), cfg)
            net.params = state.params
        acc, prec, rec = _val_metrics(net, x_val, y_val)
        history.append({"epoch": epoch, "train_loss": total / seen,
                        "val_acc": acc, "val_prec": prec, "val_rec": rec})
        if acc > best[2]:
            best = ([p.copy() for p in net.params], epoch, acc)
    return TrainResult(net=QualityNet(size, best[0]), history=history,
                       best_epoch=best[1], best_val_acc=best[2])


def save_net(net: QualityNet, path: str | Path) -> None:
    """Little-endian checkpoint: magic, version, input size, then each
    tensor as rank, dims, f32 data."""
    blob = bytearray(_MAGIC)
    blob += struct.pack("<II", _VERSION, net.size)
    for arr in net.params:
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_net(path: str | Path) -> QualityNet:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise DegenerateInput(f"{path}: bad checkpoint magic")
    version, size = struct.unpack("<II", raw[4:12])
    if version != _VERSION:
        raise DegenerateInput(f"unsupported checkpoint version {version}")
    offset = 12
    params = []
    for _ in _PARAM_SHAPES:
        (rank,) = struct.unpack("<I", raw[offset:offset + 4])
        offset += 4
        dims = struct.unpack(f"<{rank}I", raw[offset:offset + 4 * rank])
        offset += 4 * rank
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(raw[offset:offset + 4 * count], dtype="<f4")
        offset += 4 * count
        params.append(arr.reshape(dims).copy())
    return QualityNet(size, params)
