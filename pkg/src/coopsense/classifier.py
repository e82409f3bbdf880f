"""Target identification from soft-map crops.

A square window around each predicted target position is cropped from the
fused map and classified pedestrian/vehicle by a small CNN: one valid 2-D
convolution layer with ReLU, 2x max pooling, and a softmax output layer.
Training examples are cropped at ground-truth positions perturbed by Gaussian
displacement noise, which makes the classifier robust to prediction errors.

All computations run in float64 so analytic gradients can be validated
against central finite differences.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CLASS_NAMES = ("pedestrian", "vehicle")

_MODEL_MAGIC = b"CSNN"
_MODEL_VERSION = 1


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch):
        super().__init__(f"non-finite training loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class ClassifierConfig:
    window_m: float = 6.0
    perturb_sigma_m: float = 0.5
    num_filters: int = 20
    filter_size: int = 5
    pool_factor: int = 2
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    plateau_patience: int = 25
    plateau_tol: float = 1e-4
    normalize_patches: bool = True

    def __post_init__(self):
        for name in ("window_m", "perturb_sigma_m", "num_filters", "filter_size",
                     "pool_factor", "learning_rate", "epochs", "batch_size"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass
class Patch:
    pixels: np.ndarray
    center_m: tuple
    scan_index: int


def patch_side(window_m, dx_m):
    return int(round(window_m / dx_m))


def crop_window(soft_map, center_m, window_m):
    """Square crop centered at the cell nearest center_m, zero-padded at the
    map border."""
    grid = soft_map.grid
    side = patch_side(window_m, grid.dx_m)
    cx, cy = grid.cell_of(center_m)
    x0 = cx - side // 2
    y0 = cy - side // 2
    out = np.zeros((side, side))
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + side, grid.nx), min(y0 + side, grid.ny)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0:sy1 - y0, sx0 - x0:sx1 - x0] = soft_map.values[sy0:sy1, sx0:sx1]
    return Patch(pixels=out, center_m=tuple(center_m), scan_index=soft_map.scan_index)


def make_training_set(labelled_maps, window_m, perturb_sigma_m, rng, repeats=1):
    """Labelled patches from maps with known target positions and classes.

    ``labelled_maps`` is an iterable of (soft_map, [(position_m, class)])
    pairs. Crops are taken at the true position plus an isotropic Gaussian
    displacement (``repeats`` independent draws per target and map); classes
    are balanced by subsampling the majority class. Returns
    (patches (N, side, side), labels (N,)) with labels indexing CLASS_NAMES.
    """
    pixels, labels = [], []
    for soft_map, targets in labelled_maps:
        for position, cls in targets:
            for _ in range(repeats):
                center = np.asarray(position, dtype=float)
                if perturb_sigma_m > 0:
                    center = center + rng.normal(0.0, perturb_sigma_m, size=2)
                patch = crop_window(soft_map, center, window_m)
                pixels.append(patch.pixels)
                labels.append(CLASS_NAMES.index(cls))
    labels = np.array(labels, dtype=int)
    if len(np.unique(labels)) < 2:
        raise ValueError("training set must contain both classes")
    pixels = np.array(pixels)
    keep = []
    counts = np.bincount(labels, minlength=2)
    n_keep = counts.min()
    for cls in (0, 1):
        idx = np.nonzero(labels == cls)[0]
        if len(idx) > n_keep:
            idx = np.sort(rng.choice(idx, size=n_keep, replace=False))
        keep.extend(idx.tolist())
    keep = np.sort(np.array(keep, dtype=int))
    return pixels[keep], labels[keep]


def stratified_split(labels, test_fraction, rng):
    """Per-class random split; returns (train_idx, test_idx) in sorted order."""
    labels = np.asarray(labels, dtype=int)
    train, test = [], []
    for cls in np.unique(labels):
        idx = np.nonzero(labels == cls)[0]
        idx = rng.permutation(idx)
        n_test = int(round(test_fraction * len(idx)))
        test.extend(idx[:n_test].tolist())
        train.extend(idx[n_test:].tolist())
    return np.sort(np.array(train, dtype=int)), np.sort(np.array(test, dtype=int))


class CnnModel:
    """Conv(F x f x f, valid) -> ReLU -> max pool -> fully connected -> softmax."""

    def __init__(self, conv_w, conv_b, fc_w, fc_b, input_side, pool_factor=2,
                 normalize=True):
        self.conv_w = np.asarray(conv_w, dtype=float)
        self.conv_b = np.asarray(conv_b, dtype=float)
        self.fc_w = np.asarray(fc_w, dtype=float)
        self.fc_b = np.asarray(fc_b, dtype=float)
        self.input_side = int(input_side)
        self.pool_factor = int(pool_factor)
        self.normalize = bool(normalize)

    @classmethod
    def initialize(cls, config, input_side, rng):
        f, k = config.num_filters, config.filter_size
        if input_side < k:
            raise ValueError("patch side smaller than the filter size")
        conv_w = rng.normal(0.0, math.sqrt(2.0 / (k * k)), size=(f, k, k))
        conv_b = np.zeros(f)
        n_flat = cls.flat_features(input_side, k, config.pool_factor, f)
        fc_w = rng.normal(0.0, math.sqrt(2.0 / n_flat), size=(n_flat, len(CLASS_NAMES)))
        fc_b = np.zeros(len(CLASS_NAMES))
        return cls(conv_w, conv_b, fc_w, fc_b, input_side, config.pool_factor,
                   config.normalize_patches)

    @staticmethod
    def flat_features(side, filter_size, pool_factor, num_filters):
        conv_side = side - filter_size + 1
        pooled = conv_side // pool_factor
        return pooled * pooled * num_filters

    @property
    def filter_size(self):
        return self.conv_w.shape[1]

    def _prepare(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[None, :, :]
        if x.shape[1] != self.input_side or x.shape[2] != self.input_side:
            raise ValueError(f"expected {self.input_side}x{self.input_side} patches, "
                             f"got {x.shape[1]}x{x.shape[2]}")
        if self.normalize:
            peak = x.max(axis=(1, 2), keepdims=True)
            x = np.where(peak > 0, x / np.where(peak > 0, peak, 1.0), x)
        return x

    def _forward(self, x):
        """Full forward pass; returns (probs, cache) for backprop."""
        b = x.shape[0]
        k = self.filter_size
        f = self.conv_w.shape[0]
        oh = self.input_side - k + 1
        cols = sliding_window_view(x, (k, k), axis=(1, 2)).reshape(b, oh * oh, k * k)
        conv = cols @ self.conv_w.reshape(f, k * k).T + self.conv_b
        relu = np.maximum(conv, 0.0).reshape(b, oh, oh, f)
        p = self.pool_factor
        ph = oh // p
        windows = relu[:, :ph * p, :ph * p, :].reshape(b, ph, p, ph, p, f)
        windows = windows.transpose(0, 1, 3, 5, 2, 4).reshape(b, ph, ph, f, p * p)
        pool_idx = np.argmax(windows, axis=-1)
        pooled = np.take_along_axis(windows, pool_idx[..., None], axis=-1)[..., 0]
        flat = pooled.reshape(b, -1)
        logits = flat @ self.fc_w + self.fc_b
        shifted = logits - logits.max(axis=1, keepdims=True)
        expv = np.exp(shifted)
        probs = expv / expv.sum(axis=1, keepdims=True)
        cache = (cols, conv, pool_idx, flat, probs, oh, ph)
        return probs, cache

    def predict_proba(self, x):
        probs, _ = self._forward(self._prepare(x))
        return probs

    def loss_and_gradients(self, x, labels):
        """Mean cross-entropy and analytic gradients of all parameters."""
        x = self._prepare(x)
        labels = np.asarray(labels, dtype=int)
        b = x.shape[0]
        k = self.filter_size
        f = self.conv_w.shape[0]
        probs, (cols, conv, pool_idx, flat, _, oh, ph) = self._forward(x)
        loss = float(-np.mean(np.log(np.maximum(probs[np.arange(b), labels], 1e-300))))

        dlogits = probs.copy()
        dlogits[np.arange(b), labels] -= 1.0
        dlogits /= b
        g_fc_w = flat.T @ dlogits
        g_fc_b = dlogits.sum(axis=0)
        dflat = dlogits @ self.fc_w.T

        p = self.pool_factor
        dpooled = dflat.reshape(b, ph, ph, f)
        dwin = np.zeros((b, ph, ph, f, p * p))
        np.put_along_axis(dwin, pool_idx[..., None], dpooled[..., None], axis=-1)
        drelu = np.zeros((b, oh, oh, f))
        drelu[:, :ph * p, :ph * p, :] = (
            dwin.reshape(b, ph, ph, f, p, p).transpose(0, 1, 4, 2, 5, 3)
            .reshape(b, ph * p, ph * p, f))
        dconv = drelu.reshape(b, oh * oh, f) * (conv > 0)
        g_conv_w = np.einsum("bpf,bpc->fc", dconv, cols).reshape(self.conv_w.shape)
        g_conv_b = dconv.sum(axis=(0, 1))
        grads = {"conv_w": g_conv_w, "conv_b": g_conv_b, "fc_w": g_fc_w, "fc_b": g_fc_b}
        return loss, grads

    def parameters(self):
        return {"conv_w": self.conv_w, "conv_b": self.conv_b,
                "fc_w": self.fc_w, "fc_b": self.fc_b}

    def save(self, path):
        n_flat, n_classes = self.fc_w.shape
        header = struct.pack("<4sIIIIIIII", _MODEL_MAGIC, _MODEL_VERSION,
                             self.conv_w.shape[0], self.filter_size,
                             self.input_side, self.pool_factor, n_flat, n_classes,
                             1 if self.normalize else 0)
        with open(path, "wb") as fh:
            fh.write(header)
            for arr in (self.conv_w, self.conv_b, self.fc_w, self.fc_b):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            header = fh.read(struct.calcsize("<4sIIIIIIII"))
            magic, version, nf, k, side, pool, n_flat, n_classes, norm = struct.unpack(
                "<4sIIIIIIII", header)
            if magic != _MODEL_MAGIC:
                raise ValueError(f"{path}: not a classifier model file")
            if version != _MODEL_VERSION:
                raise ValueError(f"{path}: unsupported model version {version}")
            def block(shape):
                n = int(np.prod(shape))
                return np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()
            conv_w = block((nf, k, k))
            conv_b = block((nf,))
            fc_w = block((n_flat, n_classes))
            fc_b = block((n_classes,))
        return cls(conv_w, conv_b, fc_w, fc_b, side, pool, bool(norm))


def train(patches, labels, config):
    """Mini-batch gradient descent with momentum on the cross-entropy loss.

    Deterministic for a fixed (seed, dataset order). Stops early once the
    epoch loss stops improving for ``plateau_patience`` epochs. Returns the
    model and the per-epoch loss history.
    """
    patches = np.asarray(patches, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if len(patches) == 0:
        raise ValueError("empty training set")
    if len(np.unique(labels)) < 2:
        raise ValueError("training set must contain both classes")
    rng = np.random.default_rng(config.seed)
    model = CnnModel.initialize(config, patches.shape[1], rng)
    velocity = {k: np.zeros_like(v) for k, v in model.parameters().items()}
    history = []
    best = math.inf
    stale = 0
    n = len(patches)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = model.loss_and_gradients(patches[idx], labels[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch)
            epoch_loss += loss * len(idx)
            params = model.parameters()
            for key, grad in grads.items():
                velocity[key] = config.momentum * velocity[key] - config.learning_rate * grad
                params[key] += velocity[key]
        epoch_loss /= n
        history.append(epoch_loss)
        if epoch_loss < best * (1.0 - config.plateau_tol):
            best = epoch_loss
            stale = 0
        else:
            stale += 1
            if stale >= config.plateau_patience:
                break
    return model, history


def classify(model, patch):
    """Class name and softmax scores for one patch; score ties resolve to
    vehicle, the safer choice for gate selection."""
    pixels = patch.pixels if isinstance(patch, Patch) else patch
    scores = model.predict_proba(pixels)[0]
    label = CLASS_NAMES[1] if scores[1] >= scores[0] else CLASS_NAMES[0]
    return label, scores
