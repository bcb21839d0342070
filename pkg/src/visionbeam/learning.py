"""Small convolutional classifier with hand-written backpropagation.

Layout is NHWC float64.  The network is

    conv3x3(3->8) relu maxpool2  conv3x3(8->16) relu maxpool2
    conv3x3(16->32) relu  global-average-pool  linear(32->classes)

with "same" zero padding on every convolution.  Class indices used by this
module are 0-based; beam labels (1-based) are shifted by the callers.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

CONV_CHANNELS = ((3, 8), (8, 16), (16, 32))
FEATURE_DIM = CONV_CHANNELS[-1][1]
# per-channel pixel statistics of the synthetic street scenes (after /255);
# without centring, the dark frames give near-zero features and slow learning
INPUT_MEAN = np.array([0.138, 0.185, 0.189])
INPUT_STD = np.array([0.154, 0.233, 0.213])
PARAM_ORDER = (
    "conv1.weight", "conv1.bias",
    "conv2.weight", "conv2.bias",
    "conv3.weight", "conv3.bias",
    "fc.weight", "fc.bias",
)
# rows of a training minibatch pushed through the network at once (memory bound)
CHUNK = 50


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *stream])))


@dataclass
class ClassifierModel:
    params: Dict[str, np.ndarray]

    @property
    def num_classes(self) -> int:
        return self.params["fc.bias"].shape[0]

    def copy(self) -> "ClassifierModel":
        return ClassifierModel({k: v.copy() for k, v in self.params.items()})

    def named_parameters(self) -> List[Tuple[str, np.ndarray]]:
        return [(k, self.params[k]) for k in PARAM_ORDER]

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def build_classifier(num_classes: int, seed: int = 0) -> ClassifierModel:
    """Fresh network: He-normal convolutions, then a new N(0, 1) head."""
    rng = _rng(seed, 0)
    params = {}
    for i, (cin, cout) in enumerate(CONV_CHANNELS, start=1):
        fan_in = cin * 9
        params[f"conv{i}.weight"] = rng.standard_normal((cout, cin, 3, 3)) * math.sqrt(2.0 / fan_in)
        params[f"conv{i}.bias"] = np.zeros(cout)
    params["fc.weight"] = np.zeros((FEATURE_DIM, num_classes))
    params["fc.bias"] = np.zeros(num_classes)
    return replace_head(ClassifierModel(params), num_classes, seed)


def replace_head(model: ClassifierModel, new_num_classes: int, seed: int) -> ClassifierModel:
    """Swap the final linear layer for a freshly drawn N(0, 1) one."""
    if new_num_classes < 1:
        raise ValueError("head needs at least one class")
    rng = _rng(seed, 1)
    params = {k: v.copy() for k, v in model.params.items()}
    params["fc.weight"] = rng.standard_normal((FEATURE_DIM, new_num_classes))
    params["fc.bias"] = rng.standard_normal(new_num_classes)
    return ClassifierModel(params)


# ---------------------------------------------------------------- layers


def _conv_forward(x, w, b):
    n, h, wd, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = sliding_window_view(xp, (3, 3), axis=(1, 2)).reshape(n * h * wd, c * 9)
    wf = w.reshape(w.shape[0], -1)
    out = (cols @ wf.T).reshape(n, h, wd, w.shape[0]) + b
    return out, cols


def _conv_backward(dout, cols, w, x_shape):
    n, h, wd, c = x_shape
    o = w.shape[0]
    dflat = dout.reshape(-1, o)
    dw = (dflat.T @ cols).reshape(w.shape)
    db = dflat.sum(axis=0)
    dcols = (dflat @ w.reshape(o, -1)).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, h + 2, wd + 2, c))
    for i in range(3):
        for j in range(3):
            dxp[:, i:i + h, j:j + wd, :] += dcols[..., i, j]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def _pool_forward(x):
    n, h, w, c = x.shape
    blocks = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    blocks = blocks.reshape(n, h // 2, w // 2, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dout, idx, x_shape):
    n, h, w, c = x_shape
    blocks = np.zeros(idx.shape + (4,))
    np.put_along_axis(blocks, idx[..., None], dout[..., None], axis=-1)
    blocks = blocks.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return blocks.reshape(n, h, w, c)


def images_to_input(images) -> np.ndarray:
    """uint8 ``(N, H, W, 3)`` (or a single image) to standardised float64.

    Pixels are scaled to [0, 1], then shifted and scaled per channel with the
    fixed ``INPUT_MEAN`` / ``INPUT_STD``.
    """
    x = np.asarray(images)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4 or x.shape[-1] != CONV_CHANNELS[0][0]:
        raise ValueError(f"expected (N, H, W, 3) images, got shape {x.shape}")
    if x.shape[1] % 4 or x.shape[2] % 4:
        raise ValueError("image height and width must be multiples of 4")
    return (x.astype(np.float64) / 255.0 - INPUT_MEAN) / INPUT_STD


def _forward(params, x):
    cache = []
    a = x
    for i in (1, 2, 3):
        z, cols = _conv_forward(a, params[f"conv{i}.weight"], params[f"conv{i}.bias"])
        r = np.maximum(z, 0.0)
        entry = {"in_shape": a.shape, "cols": cols, "z": z}
        if i < 3:
            a, idx = _pool_forward(r)
            entry.update(pool_idx=idx, pool_shape=r.shape)
        else:
            a = r
        cache.append(entry)
    feat = a.mean(axis=(1, 2))
    logits = feat @ params["fc.weight"] + params["fc.bias"]
    return logits, (cache, feat, a.shape)


def _backward(params, dlogits, state):
    cache, feat, last_shape = state
    grads = {
        "fc.weight": feat.T @ dlogits,
        "fc.bias": dlogits.sum(axis=0),
    }
    dfeat = dlogits @ params["fc.weight"].T
    n, h, w, c = last_shape
    da = np.broadcast_to(dfeat[:, None, None, :] / (h * w), last_shape)
    for i in (3, 2, 1):
        entry = cache[i - 1]
        if i < 3:
            da = _pool_backward(da, entry["pool_idx"], entry["pool_shape"])
        dz = da * (entry["z"] > 0)
        da, dw, db = _conv_backward(dz, entry["cols"], params[f"conv{i}.weight"], entry["in_shape"])
        grads[f"conv{i}.weight"] = dw
        grads[f"conv{i}.bias"] = db
    return grads


# ---------------------------------------------------------------- prediction


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray = field(init=False)

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.probabilities = np.exp(log_softmax(self.logits))


def forward_logits(model: ClassifierModel, images) -> np.ndarray:
    """Logits for a batch of uint8 images, shape ``(N, classes)``."""
    x = images_to_input(images)
    out = [_forward(model.params, x[i:i + CHUNK])[0] for i in range(0, len(x), CHUNK)]
    return np.concatenate(out, axis=0)


def forward(model: ClassifierModel, image) -> Prediction:
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError("forward takes a single H x W x 3 image")
    return Prediction(forward_logits(model, image)[0])


def predict_class(prediction: Prediction) -> int:
    """0-based index of the most probable class; lowest index on ties."""
    return int(np.argmax(prediction.probabilities))


def cross_entropy(prediction: Prediction, target_class: int) -> float:
    """``-log p_target`` evaluated through log-sum-exp."""
    if not 0 <= target_class < prediction.logits.shape[-1]:
        raise ValueError(f"target class {target_class} out of range")
    return float(-log_softmax(prediction.logits)[target_class])


def loss_and_gradients(model: ClassifierModel, images, targets) -> Tuple[float, Dict[str, np.ndarray], np.ndarray]:
    """Summed cross-entropy over a batch and its exact gradients.

    Returns ``(loss_sum, grads, logits)``; gradients are sums of per-sample
    gradients.
    """
    x = images_to_input(images)
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if len(targets) != len(x):
        raise ValueError("one target per image required")
    if targets.min() < 0 or targets.max() >= model.num_classes:
        raise ValueError("target outside the model's class range")
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    all_logits = []
    for i in range(0, len(x), CHUNK):
        xb, tb = x[i:i + CHUNK], targets[i:i + CHUNK]
        logits, state = _forward(model.params, xb)
        logp = log_softmax(logits)
        rows = np.arange(len(tb))
        total += float(-logp[rows, tb].sum())
        dlogits = np.exp(logp)
        dlogits[rows, tb] -= 1.0
        for k, g in _backward(model.params, dlogits, state).items():
            grads[k] += g
        all_logits.append(logits)
    return total, grads, np.concatenate(all_logits, axis=0)


def backward(model: ClassifierModel, image, target_class: int) -> Dict[str, np.ndarray]:
    """Gradient of ``cross_entropy(forward(model, image), target)`` for every parameter."""
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError("backward takes a single H x W x 3 image")
    return loss_and_gradients(model, image[None], [target_class])[1]


# ---------------------------------------------------------------- optimisation


@dataclass
class TrainConfig:
    batch_size: int = 150
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    lr_drop_epochs: Tuple[int, ...] = (4, 8)
    lr_drop_factor: float = 0.1
    num_epochs: int = 10
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.9

    def __post_init__(self):
        self.lr_drop_epochs = tuple(sorted(int(e) for e in self.lr_drop_epochs))
        if self.batch_size < 1 or self.num_epochs < 1:
            raise ValueError("batch_size and num_epochs must be positive")
        if not (self.learning_rate > 0 and self.weight_decay >= 0 and self.lr_drop_factor > 0):
            raise ValueError("learning rate and drop factor must be positive, weight decay >= 0")
        if any(not 1 <= e <= self.num_epochs for e in self.lr_drop_epochs):
            raise ValueError("lr drop epochs must lie within the training horizon")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def lr_at(self, epoch: int) -> float:
        """Step size in (1-based) ``epoch``; each drop applies after its epoch ends."""
        drops = sum(1 for e in self.lr_drop_epochs if e < epoch)
        return self.learning_rate * self.lr_drop_factor ** drops


def sgd_step(model: ClassifierModel, gradients: Dict[str, np.ndarray], config: TrainConfig, epoch: int) -> ClassifierModel:
    """``theta <- theta - lr_e * (g + weight_decay * theta)``."""
    lr = config.lr_at(epoch)
    params = {}
    for k, theta in model.params.items():
        g = gradients[k]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {k} {theta.shape}")
        params[k] = theta - lr * (g + config.weight_decay * theta)
    return ClassifierModel(params)


class Momentum:
    """Heavy-ball SGD: the decayed gradient feeds a velocity buffer."""

    def __init__(self, model: ClassifierModel, momentum: float):
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in model.params.items()}

    def step(self, model, gradients, config: TrainConfig, epoch: int) -> ClassifierModel:
        lr = config.lr_at(epoch)
        params = {}
        for k, theta in model.params.items():
            v = self.momentum * self.velocity[k] + gradients[k] + config.weight_decay * theta
            self.velocity[k] = v
            params[k] = theta - lr * v
        return ClassifierModel(params)


class Adam:
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, model: ClassifierModel, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.t = 0

    def step(self, model, gradients, config: TrainConfig, epoch: int) -> ClassifierModel:
        lr = config.lr_at(epoch)
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        params = {}
        for k, theta in model.params.items():
            g = gradients[k] + config.weight_decay * theta
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] = theta - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
        return ClassifierModel(params)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float


def train(model: ClassifierModel, images, labels, config: TrainConfig) -> Tuple[ClassifierModel, List[EpochLog]]:
    """Minibatch training with a seeded per-epoch shuffle.

    ``labels`` are 0-based class indices.  Loss in the log is the mean
    per-sample cross-entropy seen during the epoch.
    """
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    if len(images) != n:
        raise ValueError("images and labels differ in length")
    if labels.min() < 0 or labels.max() >= model.num_classes:
        raise ValueError(
            f"labels span [{labels.min()}, {labels.max()}] but the head has {model.num_classes} classes"
        )
    model = model.copy()
    if config.optimizer == "adam":
        stepper = Adam(model)
    elif config.momentum > 0:
        stepper = Momentum(model, config.momentum)
    else:
        stepper = None
    history = []
    for epoch in range(1, config.num_epochs + 1):
        order = _rng(config.seed, 2, epoch).permutation(n)
        loss_sum, correct = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads, logits = loss_and_gradients(model, images[idx], labels[idx])
            loss_sum += loss
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
            if stepper is None:
                model = sgd_step(model, grads, config, epoch)
            else:
                model = stepper.step(model, grads, config, epoch)
        entry = EpochLog(epoch, config.lr_at(epoch), loss_sum / n, correct / n)
        log.info("epoch %d lr %.1e loss %.4f acc %.4f", entry.epoch, entry.lr, entry.train_loss, entry.train_acc)
        history.append(entry)
    return model, history


def num_batches(n: int, batch_size: int) -> int:
    return -(-n // batch_size)


def top_k_from_logits(logits: np.ndarray, labels, k: int) -> float:
    """Fraction of rows whose label ranks among the ``k`` largest logits.

    Ranking is stable: equal logits are ordered by class index.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        return 0.0
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    return float(np.mean(np.any(order == labels[:, None], axis=1)))


def top_k_accuracy(model: ClassifierModel, images, labels, k: int) -> float:
    return top_k_from_logits(forward_logits(model, images), labels, k)
