"""A small from-scratch CNN over ROI grids: conv(3x3) + ReLU + 2x2 maxpool
stages, fully-connected stages, and a K-way linear output.

Everything runs in float64 with explicit forward/backward passes through
the kernels in :mod:`speccal.kernels`, so training is deterministic per
seed and the analytic gradients can be checked against central finite
differences. Optimization is mini-batch gradient descent with momentum;
the checkpoint kept per seed is the one with the best validation accuracy
(earliest epoch wins ties).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ENV1_TRAIN, ENV1_VALID, LabeledDataset, LogitRecord
from .kernels import conv2d_bwd, conv2d_fwd, maxpool2_bwd, maxpool2_fwd

INPUT_OFFSET_DB = 20.0
INPUT_SCALE_DB = 20.0


def normalize_rois(dataset_or_records) -> np.ndarray:
    """Stack ROI magnitudes into (N, 1, H, W) float64, affinely rescaled
    with fixed constants (data independent, so batching cannot matter)."""
    records = list(dataset_or_records)
    x = np.stack([np.asarray(r.magnitude, dtype=np.float64) for r in records])
    return ((x + INPUT_OFFSET_DB) / INPUT_SCALE_DB)[:, None, :, :]


@dataclass(frozen=True)
class ModelSpec:
    """Architecture descriptor; the default is the desk-scale network,
    while larger filter/neuron counts remain supported configurations."""

    k: int = 7
    input_hw: tuple[int, int] = (32, 32)
    conv_filters: tuple[int, ...] = (8, 16)
    fc_sizes: tuple[int, ...] = (64,)

    def __post_init__(self):
        h, w = self.input_hw
        for _ in self.conv_filters:
            if h % 2 or w % 2:
                raise ValueError(f"input {self.input_hw} not divisible by 2 per pooling stage")
            h //= 2
            w //= 2
        if h < 1 or w < 1 or self.k < 2:
            raise ValueError("inconsistent architecture")

    def layer_shapes(self) -> list[tuple[np.ndarray, ...]]:
        shapes = []
        c = 1
        h, w = self.input_hw
        for f in self.conv_filters:
            shapes.append(((f, c, 3, 3), (f,)))
            c = f
            h //= 2
            w //= 2
        fan = c * h * w
        for n in self.fc_sizes:
            shapes.append(((fan, n), (n,)))
            fan = n
        shapes.append(((fan, self.k), (self.k,)))
        return shapes

    def num_params(self) -> int:
        return sum(int(np.prod(ws)) + int(np.prod(bs)) for ws, bs in self.layer_shapes())


def init_params(spec: ModelSpec, seed: int) -> list[np.ndarray]:
    """Uniform fan-in-scaled init, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    rng = np.random.default_rng(np.random.SeedSequence([2203, seed]))
    params = []
    for w_shape, b_shape in spec.layer_shapes():
        fan_in = int(np.prod(w_shape[1:])) if len(w_shape) == 4 else w_shape[0]
        lim = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-lim, lim, w_shape))
        params.append(np.zeros(b_shape))
    return params


def forward(spec: ModelSpec, params: list[np.ndarray], x: np.ndarray, want_cache: bool = False):
    """Logits for a batch x (N, 1, H, W); optionally the backward cache."""
    n = x.shape[0]
    cache = []
    h = x
    idx = 0
    for _ in spec.conv_filters:
        z = conv2d_fwd(h, params[idx], params[idx + 1])
        a = np.maximum(z, 0.0)
        p, arg = maxpool2_fwd(a)
        if want_cache:
            cache.append(("conv", h, z, arg, a.shape))
        h = p
        idx += 2
    flat = h.reshape(n, -1)
    a = flat
    for _ in spec.fc_sizes:
        z = a @ params[idx] + params[idx + 1]
        if want_cache:
            cache.append(("fc", a, z))
        a = np.maximum(z, 0.0)
        idx += 2
    logits = a @ params[idx] + params[idx + 1]
    if want_cache:
        cache.append(("out", a, h.shape))
        return logits, cache
    return logits


def backward(spec: ModelSpec, params: list[np.ndarray], cache, grad_logits: np.ndarray) -> list[np.ndarray]:
    grads = [None] * len(params)
    idx = len(params) - 2
    kind, a_last, pooled_shape = cache[-1]
    grads[idx] = a_last.T @ grad_logits
    grads[idx + 1] = grad_logits.sum(axis=0)
    g = grad_logits @ params[idx].T
    idx -= 2
    for layer in reversed(cache[:-1]):
        if layer[0] == "fc":
            _, a_in, z = layer
            g = g * (z > 0.0)
            grads[idx] = a_in.T @ g
            grads[idx + 1] = g.sum(axis=0)
            g = g @ params[idx].T
            idx -= 2
        else:
            _, h_in, z, arg, a_shape = layer
            if g.ndim == 2:
                g = g.reshape(pooled_shape)
            g = maxpool2_bwd(g, arg, a_shape[2], a_shape[3])
            g = g * (z > 0.0)
            gx, gw, gb = conv2d_bwd(h_in, params[idx], g)
            grads[idx] = gw
            grads[idx + 1] = gb
            g = gx
            idx -= 2
            pooled_shape = h_in.shape  # next (outer) conv's pooled output shape
    return grads


def _xent_and_grad(logits: np.ndarray, labels: np.ndarray):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    rows = np.arange(n)
    loss = float(-np.mean(np.log(np.maximum(p[rows, labels], 1e-300))))
    grad = p.copy()
    grad[rows, labels] -= 1.0
    return loss, grad / n


@dataclass(frozen=True)
class TrainedModel:
    spec: ModelSpec
    seed: int
    params: tuple
    best_epoch: int
    history: tuple  # rows of (epoch, train_loss, valid_acc)

    def predict(self, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
        out = []
        for i in range(0, x.shape[0], batch_size):
            out.append(forward(self.spec, list(self.params), x[i : i + batch_size]))
        return np.concatenate(out, axis=0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seeds: tuple[int, ...] = tuple(range(10))

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("seed list must be non-empty")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")


def _accuracy(spec, params, x, y, batch_size=512) -> float:
    correct = 0
    for i in range(0, x.shape[0], batch_size):
        logits = forward(spec, params, x[i : i + batch_size])
        correct += int(np.sum(np.argmax(logits, axis=1) == y[i : i + batch_size]))
    return correct / x.shape[0]


def train_single(
    spec: ModelSpec,
    cfg: TrainConfig,
    train_ds: LabeledDataset,
    valid_ds: LabeledDataset,
    seed: int,
) -> TrainedModel:
    """Train one network; keeps the parameters of the epoch with the best
    validation accuracy. Epoch 0 (the initialization) is a candidate too,
    so zero-epoch configs return the init."""
    if train_ds.split_tag != ENV1_TRAIN or valid_ds.split_tag != ENV1_VALID:
        raise ValueError(
            f"training reads {ENV1_TRAIN}/{ENV1_VALID} only, got "
            f"{train_ds.split_tag!r}/{valid_ds.split_tag!r}"
        )
    x_train = normalize_rois(train_ds)
    y_train = train_ds.labels()
    x_valid = normalize_rois(valid_ds)
    y_valid = valid_ds.labels()
    params = init_params(spec, seed)
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(np.random.SeedSequence([5150, seed]))

    best_acc = _accuracy(spec, params, x_valid, y_valid)
    best_params = [p.copy() for p in params]
    best_epoch = 0
    history = [(0, float("nan"), best_acc)]
    n = x_train.shape[0]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        losses = []
        for i in range(0, n, cfg.batch_size):
            bidx = order[i : i + cfg.batch_size]
            logits, cache = forward(spec, params, x_train[bidx], want_cache=True)
            loss, grad_logits = _xent_and_grad(logits, y_train[bidx])
            if not np.isfinite(loss):
                raise RuntimeError(f"seed {seed}: non-finite loss at epoch {epoch}, batch {i // cfg.batch_size}")
            losses.append(loss)
            grads = backward(spec, params, cache, grad_logits)
            for j, g in enumerate(grads):
                velocity[j] = cfg.momentum * velocity[j] - cfg.learning_rate * g
                params[j] = params[j] + velocity[j]
        acc = _accuracy(spec, params, x_valid, y_valid)
        history.append((epoch, float(np.mean(losses)), acc))
        if acc > best_acc:
            best_acc = acc
            best_params = [p.copy() for p in params]
            best_epoch = epoch
    return TrainedModel(spec=spec, seed=seed, params=tuple(best_params), best_epoch=best_epoch,
                        history=tuple(history))


def train(spec: ModelSpec, cfg: TrainConfig, train_ds: LabeledDataset,
          valid_ds: LabeledDataset) -> dict[int, TrainedModel]:
    return {seed: train_single(spec, cfg, train_ds, valid_ds, seed) for seed in cfg.seeds}


def predict_logits(model: TrainedModel, dataset: LabeledDataset) -> LabeledDataset:
    """One LogitRecord per ROI, order preserved, tagged with the model seed."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    hw = dataset.records[0].magnitude.shape
    if tuple(hw) != tuple(model.spec.input_hw):
        raise ValueError(f"model expects {model.spec.input_hw} grids, dataset has {hw}")
    x = normalize_rois(dataset)
    logits = model.predict(x)
    records = tuple(
        LogitRecord(sample_id=r.sample_id, label=r.label, logits=logits[i], seed_id=model.seed)
        for i, r in enumerate(dataset.records)
    )
    return LabeledDataset(records, dataset.split_tag)


def gradient_check(spec: ModelSpec | None = None, num_samples: int = 4, step: float = 1e-4,
                   seed: int = 0, _corrupt_param: int | None = None) -> float:
    """Max relative error between analytic gradients and central finite
    differences on a tiny model; `_corrupt_param` flips one layer's
    analytic gradient sign (negative-control hook for tests)."""
    spec = spec or ModelSpec(k=3, input_hw=(8, 8), conv_filters=(2,), fc_sizes=(4,))
    if spec.num_params() > 500:
        raise ValueError(f"gradient check wants a tiny model, got {spec.num_params()} parameters")
    rng = np.random.default_rng(np.random.SeedSequence([404, seed]))
    x = rng.normal(0.0, 1.0, (num_samples, 1, *spec.input_hw))
    y = rng.integers(0, spec.k, num_samples)
    params = init_params(spec, seed)

    logits, cache = forward(spec, params, x, want_cache=True)
    _, grad_logits = _xent_and_grad(logits, y)
    grads = backward(spec, params, cache, grad_logits)
    if _corrupt_param is not None:
        grads[_corrupt_param] = -grads[_corrupt_param]

    worst = 0.0
    for j, p in enumerate(params):
        flat = p.ravel()
        gflat = grads[j].ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            lp, _ = _xent_and_grad(forward(spec, params, x), y)
            flat[idx] = orig - step
            lm, _ = _xent_and_grad(forward(spec, params, x), y)
            flat[idx] = orig
            numeric = (lp - lm) / (2.0 * step)
            err = abs(gflat[idx] - numeric) / max(abs(gflat[idx]), abs(numeric), 1e-4)
            worst = max(worst, err)
    return worst


def nearest_centroid_accuracy(train_ds: LabeledDataset, test_ds: LabeledDataset) -> float:
    """Accuracy of classifying by nearest class-mean ROI (sanity baseline)."""
    x_train = normalize_rois(train_ds).reshape(len(train_ds), -1)
    y_train = train_ds.labels()
    x_test = normalize_rois(test_ds).reshape(len(test_ds), -1)
    y_test = test_ds.labels()
    classes = np.unique(y_train)
    centroids = np.stack([x_train[y_train == c].mean(axis=0) for c in classes])
    d2 = ((x_test[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    pred = classes[np.argmin(d2, axis=1)]
    return float(np.mean(pred == y_test))


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: TrainedModel, path: Path) -> None:
    """JSON header line, then the parameters as little-endian float64."""
    header = {
        "k": model.spec.k,
        "input_hw": list(model.spec.input_hw),
        "conv_filters": list(model.spec.conv_filters),
        "fc_sizes": list(model.spec.fc_sizes),
        "seed": model.seed,
        "best_epoch": model.best_epoch,
        "shapes": [list(p.shape) for p in model.params],
        "history": [[int(e), None if not np.isfinite(l) else float(l), float(a)] for e, l, a in model.history],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for p in model.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path: Path) -> TrainedModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    spec = ModelSpec(
        k=header["k"],
        input_hw=tuple(header["input_hw"]),
        conv_filters=tuple(header["conv_filters"]),
        fc_sizes=tuple(header["fc_sizes"]),
    )
    params = []
    offset = nl + 1
    for shape in header["shapes"]:
        size = int(np.prod(shape)) * 8
        params.append(np.frombuffer(raw[offset : offset + size], dtype="<f8").reshape(shape).copy())
        offset += size
    if offset != len(raw):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    history = tuple(
        (e, float("nan") if l is None else l, a) for e, l, a in header.get("history", [])
    )
    return TrainedModel(spec=spec, seed=header["seed"], params=tuple(params),
                        best_epoch=header["best_epoch"], history=history)
