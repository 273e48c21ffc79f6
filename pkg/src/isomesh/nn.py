"""Fully connected 3->...->3 networks with hand-written backprop and Adam."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import TriangleMesh, vertex_normals

import logging

log = logging.getLogger(__name__)

LAYER_SIZES = (3, 128, 256, 512, 512, 3)


class TrainingDiverged(RuntimeError):
    """Loss or parameters became non-finite; the caller should re-initialize."""


class RestartRequested(RuntimeError):
    """Raised by a training callback to abort the run and re-initialize."""


@dataclass
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    alpha: float = 0.5
    sinkhorn_epsilon: float = 0.01
    sinkhorn_iterations: int = 500
    # cap per refresh when the matching is recomputed every epoch (warm-started)
    sinkhorn_refresh_iterations: int = 50
    sinkhorn_tolerance: float = 1e-6
    refresh_correspondence: bool = False
    squared_loss: bool = False
    beta_1: float = 0.9
    beta_2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")


class Mlp:
    """ReLU hidden layers, linear output. Weights are stored as (fan_in, fan_out)."""

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        self.weights = [np.array(w) for w in weights]
        self.biases = [np.array(b) for b in biases]
        if self.weights[0].shape[0] != 3 or self.weights[-1].shape[1] != 3:
            raise ValueError("input and output width must both be 3")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "Mlp":
        return Mlp([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=self.dtype)
        single = h.ndim == 1
        h = h.reshape(-1, 3)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                np.maximum(h, 0, out=h)
        return h[0] if single else h

    def forward_cached(self, x):
        acts = [np.asarray(x, dtype=self.dtype).reshape(-1, 3)]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = acts[-1] @ w + b
            if i < last:
                np.maximum(h, 0, out=h)
            acts.append(h)
        return acts

    def backward(self, acts, grad_out) -> list[np.ndarray]:
        """Parameter gradients (same order as :meth:`params`) given dLoss/dOutput."""
        grads = [None] * (2 * len(self.weights))
        g = np.asarray(grad_out, dtype=self.dtype)
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = acts[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
                g *= acts[i] > 0
        return grads


def mlp_init(seed: int = 0, layer_sizes: Sequence[int] = LAYER_SIZES, dtype=np.float32) -> Mlp:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        bs.append(rng.uniform(-bound, bound, size=fan_out).astype(dtype))
    return Mlp(ws, bs)


def mlp_forward(mlp: Mlp, p) -> np.ndarray:
    return mlp.forward(p)


# ---------------------------------------------------------------------------
# loss


@dataclass
class PairSet:
    """Inputs with their corresponded targets; contributes ``weight * mean_i ||f(x_i) - y_i||``."""

    inputs: np.ndarray
    targets: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs).reshape(-1, 3)
        self.targets = np.asarray(self.targets).reshape(-1, 3)
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets must have equal length")


def pair_loss(out, targets, squared: bool = False):
    """Mean (optionally squared) Euclidean distance and its gradient w.r.t. ``out``."""
    diff = out - targets
    n = max(len(out), 1)
    if squared:
        sq = np.einsum("ij,ij->i", diff, diff)
        return float(sq.sum()) / n, (2.0 / n) * diff
    norm = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    safe = np.maximum(norm, np.finfo(diff.dtype).tiny)
    return float(norm.sum()) / n, diff / (safe[:, None] * n)


def loss_and_grads(mlp: Mlp, pairsets: Sequence[PairSet], squared: bool = False, outputs0=None):
    """Total loss and parameter gradients over several weighted pair sets.

    Sets with zero weight are skipped entirely, so they cannot influence the
    result even at the bit level.
    """
    total = 0.0
    grads = None
    for k, ps in enumerate(pairsets):
        if ps.weight == 0 or len(ps.inputs) == 0:
            continue
        acts = mlp.forward_cached(ps.inputs) if not (k == 0 and outputs0 is not None) else outputs0
        loss, g = pair_loss(acts[-1], ps.targets.astype(mlp.dtype), squared)
        total += ps.weight * loss
        gk = mlp.backward(acts, g * mlp.dtype.type(ps.weight))
        grads = gk if grads is None else [a + b for a, b in zip(grads, gk)]
    if grads is None:
        grads = [np.zeros_like(p) for p in mlp.params()]
    return total, grads


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainReport:
    losses: list = field(default_factory=list)
    epochs_run: int = 0
    converged: bool = True

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")

    @property
    def initial_loss(self) -> float:
        return self.losses[0] if self.losses else float("nan")


class Adam:
    def __init__(self, params, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * (g * g)
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


class Sgd:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def mlp_train(
    mlp: Mlp,
    inputs,
    targets,
    cfg: TrainConfig,
    second: Optional[tuple] = None,
    refresh: Optional[Callable[[np.ndarray, int], np.ndarray]] = None,
    callback: Optional[Callable[[int, Mlp, float], None]] = None,
) -> TrainReport:
    """Full-batch training of ``mlp`` in place.

    The loss is ``mean ||f(x) - y||`` over (inputs, targets), plus
    ``cfg.alpha * mean ||f(x2) - y2||`` when ``second = (x2, y2)`` is given.
    ``refresh(outputs, epoch)`` may return new targets for the first set
    each epoch (computed from the current outputs). ``callback`` runs after
    every update and may raise :class:`RestartRequested`.

    Raises :class:`TrainingDiverged` on a non-finite loss.
    """
    first = PairSet(inputs, targets, 1.0)
    sets = [first]
    if second is not None:
        sets.append(PairSet(second[0], second[1], cfg.alpha))
    sets = [PairSet(s.inputs.astype(mlp.dtype), s.targets, s.weight) for s in sets]

    params = mlp.params()
    if cfg.optimizer == "adam":
        opt = Adam(params, cfg.learning_rate, cfg.beta_1, cfg.beta_2, cfg.adam_eps)
    else:
        opt = Sgd(params, cfg.learning_rate)

    report = TrainReport()
    for epoch in range(cfg.epochs):
        acts = None
        if refresh is not None:
            acts = mlp.forward_cached(sets[0].inputs)
            sets[0].targets = np.asarray(refresh(acts[-1], epoch)).reshape(-1, 3)
        loss, grads = loss_and_grads(mlp, sets, cfg.squared_loss, outputs0=acts)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        report.losses.append(loss)
        opt.step(params, grads)
        report.epochs_run = epoch + 1
        if callback is not None:
            callback(epoch, mlp, loss)
    if not mlp.is_finite():
        raise TrainingDiverged("non-finite parameters after training")
    tail = report.losses[-20:]
    if len(tail) == 20:
        report.converged = float(np.mean(tail[10:])) <= float(np.mean(tail[:10]))
        if not report.converged:
            log.info("training did not settle: trailing loss window increased")
    return report


# ---------------------------------------------------------------------------
# normal penalty


def normal_penalty(before: TriangleMesh, after: TriangleMesh) -> float:
    """Mean dot product of vertex normals before and after a deformation.

    Values <= 0 indicate flipped or twisted regions. Vertices with an
    undefined normal in either mesh are skipped (and logged).
    """
    if not np.array_equal(before.patches, after.patches):
        raise ValueError("meshes must share connectivity")
    n0 = vertex_normals(before)
    n1 = vertex_normals(after)
    dots = np.einsum("ij,ij->i", n0, n1)
    ok = np.isfinite(dots)
    if (~ok).any():
        log.warning("normal penalty: %d vertices excluded (degenerate normals)", int((~ok).sum()))
    if not ok.any():
        return float("nan")
    return float(dots[ok].mean())


# ---------------------------------------------------------------------------
# checkpoints: int64 layer count, int64 sizes, then float64 W (row-major) and b per layer, little-endian


def save_checkpoint(mlp: Mlp, path) -> None:
    sizes = mlp.layer_sizes
    with open(path, "wb") as fh:
        fh.write(struct.pack("<q", len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}q", *sizes))
        for p in mlp.params():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path, dtype=np.float32) -> Mlp:
    with open(path, "rb") as fh:
        data = fh.read()
    (n,) = struct.unpack_from("<q", data, 0)
    sizes = struct.unpack_from(f"<{n}q", data, 8)
    off = 8 + 8 * n
    ws, bs = [], []
    for fi, fo in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fi * fo, offset=off).reshape(fi, fo)
        off += 8 * fi * fo
        b = np.frombuffer(data, dtype="<f8", count=fo, offset=off)
        off += 8 * fo
        ws.append(w.astype(dtype))
        bs.append(b.astype(dtype))
    if off != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return Mlp(ws, bs)
