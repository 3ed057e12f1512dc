"""Loss, optimizers, the minibatch training loop, evaluation, and the
finite-difference oracle that validates every hand-derived backward pass.

Determinism: all randomness (shuffling, dropout, augmentation) derives
from ``TrainConfig.seed``, so two runs with identical configuration
produce identical parameters and statistics; only the recorded wall
times differ. Augmentation seeds are derived per sample as
``epoch_seed XOR sample_index``, which keeps them independent of batch
order and shuffling.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import constellation as cl
from .data import AugmentConfig, LabeledCloudSet, augment, write_constellation_snapshot
from .errors import ConfigError, NumericalAbort
from .head import (Gradients, ModelParams, cast_model, gradient_arrays, head_backward,
                   head_forward, parameter_arrays)
from .linalg import Rng

PROB_FLOOR = 1e-12
_SEED_MASK = (1 << 64) - 1


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    measure: str = cl.GAUSSIAN
    stars: int = 256
    sigma: float = 0.1
    lam: float = 10.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 250
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dropout_rate: float = 0.3
    snapshot_epochs: tuple[int, ...] = (0, 10, 100, 200, 300, 500)
    precision: str = "f32"
    hidden: tuple[int, int] = (512, 256)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def validate(self) -> None:
        if self.measure not in cl.MEASURES:
            raise ConfigError(f"unknown measure {self.measure!r}, expected one of {cl.MEASURES}")
        if self.stars < 1:
            raise ConfigError(f"stars must be >= 1, got {self.stars}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning rate must be >= 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ConfigError("adam betas must lie in (0, 1)")
        if not self.adam_eps > 0:
            raise ConfigError("adam epsilon must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")
        if any(e < 0 for e in self.snapshot_epochs):
            raise ConfigError("snapshot epochs must be >= 0")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be 'f32' or 'f64', got {self.precision!r}")
        if len(self.hidden) != 2 or any(h < 1 for h in self.hidden):
            raise ConfigError(f"hidden widths must be two positive ints, got {self.hidden}")
        try:
            self.augment.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def dtype(self):
        return np.float64 if self.precision == "f64" else np.float32


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


# key -> (parse, serialize) working on attribute paths of TrainConfig
_CONFIG_KEYS = {
    "measure": (str, str),
    "stars": (int, str),
    "sigma": (float, repr),
    "lambda": (float, repr),
    "lr": (float, repr),
    "batch": (int, str),
    "epochs": (int, str),
    "optimizer": (str, str),
    "adam_beta1": (float, repr),
    "adam_beta2": (float, repr),
    "adam_eps": (float, repr),
    "seed": (int, str),
    "dropout": (float, repr),
    "snapshot_epochs": (_parse_int_tuple, lambda v: ",".join(str(e) for e in v)),
    "precision": (str, str),
    "hidden": (_parse_int_tuple, lambda v: ",".join(str(e) for e in v)),
    "augment.enabled": (_parse_bool, lambda v: "true" if v else "false"),
    "augment.scale_lo": (float, repr),
    "augment.scale_hi": (float, repr),
    "augment.rotation_std": (float, repr),
    "augment.rotation_clip": (float, repr),
    "augment.shift_lo": (float, repr),
    "augment.shift_hi": (float, repr),
    "augment.jitter_std": (float, repr),
    "augment.jitter_clip": (float, repr),
}

_KEY_TO_ATTR = {
    "lambda": "lam", "lr": "learning_rate", "batch": "batch_size", "dropout": "dropout_rate",
}


def _config_get(config: TrainConfig, key: str):
    if key == "augment.scale_lo":
        return config.augment.scale_range[0]
    if key == "augment.scale_hi":
        return config.augment.scale_range[1]
    if key == "augment.shift_lo":
        return config.augment.shift_range[0]
    if key == "augment.shift_hi":
        return config.augment.shift_range[1]
    if key.startswith("augment."):
        return getattr(config.augment, key.split(".", 1)[1])
    return getattr(config, _KEY_TO_ATTR.get(key, key))


def _config_set(config: TrainConfig, key: str, value) -> TrainConfig:
    if key.startswith("augment."):
        aug = config.augment
        if key == "augment.scale_lo":
            aug = replace(aug, scale_range=(value, aug.scale_range[1]))
        elif key == "augment.scale_hi":
            aug = replace(aug, scale_range=(aug.scale_range[0], value))
        elif key == "augment.shift_lo":
            aug = replace(aug, shift_range=(value, aug.shift_range[1]))
        elif key == "augment.shift_hi":
            aug = replace(aug, shift_range=(aug.shift_range[0], value))
        else:
            aug = replace(aug, **{key.split(".", 1)[1]: value})
        return replace(config, augment=aug)
    return replace(config, **{_KEY_TO_ATTR.get(key, key): value})


def config_to_text(config: TrainConfig) -> str:
    """Flat ``key=value`` rendering of the full configuration."""
    lines = []
    for key, (_parse, serialize) in _CONFIG_KEYS.items():
        lines.append(f"{key}={serialize(_config_get(config, key))}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key=value`` lines onto ``base`` (or the defaults).

    Blank lines and ``#`` comments are ignored; unknown keys are
    rejected.
    """
    config = base if base is not None else TrainConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
        parse, _serialize = _CONFIG_KEYS[key]
        try:
            value = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
        config = _config_set(config, key, value)
    return config


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("epoch", "train_loss", "train_acc", "test_acc", "seconds")


@dataclass
class TrainReport:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, train_acc: float,
               test_acc: float, seconds: float) -> None:
        self.epoch.append(int(epoch))
        self.train_loss.append(float(train_loss))
        self.train_acc.append(float(train_acc))
        self.test_acc.append(float(test_acc))
        self.seconds.append(float(seconds))

    @property
    def final_test_accuracy(self) -> float | None:
        return self.test_acc[-1] if self.test_acc else None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(REPORT_COLUMNS)
            for row in zip(self.epoch, self.train_loss, self.train_acc,
                           self.test_acc, self.seconds):
                writer.writerow([row[0]] + [repr(v) for v in row[1:]])

    @classmethod
    def from_csv(cls, path) -> "TrainReport":
        report = cls()
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if tuple(header) != REPORT_COLUMNS:
                raise ConfigError(f"{path}: unexpected report columns {header}")
            for row in reader:
                report.append(int(row[0]), *(float(v) for v in row[1:]))
        return report


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def cross_entropy_loss(probs: np.ndarray, label: int) -> float:
    """Negative log probability of the true class, floored at 1e-12."""
    p = np.asarray(probs)
    if p.ndim != 1:
        raise ValueError(f"probs must be a 1-D distribution, got shape {p.shape}")
    if not 0 <= label < p.shape[0]:
        raise ValueError(f"label {label} out of range for {p.shape[0]} classes")
    return float(-np.log(max(float(p[label]), PROB_FLOOR)))


def _batch_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.log(np.maximum(picked.astype(np.float64), PROB_FLOOR)).mean())


def _loss_grad_probs(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mean cross-entropy)/d(probs); through the softmax this becomes the
    familiar (probs - onehot) / batch."""
    grad = np.zeros_like(probs)
    rows = np.arange(probs.shape[0])
    picked = np.maximum(probs[rows, labels], np.asarray(PROB_FLOOR, dtype=probs.dtype))
    grad[rows, labels] = -1.0 / (picked * probs.shape[0])
    return grad


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

class Sgd:
    """Plain gradient descent; a zero gradient leaves parameters untouched."""

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= np.asarray(self.learning_rate * g, dtype=p.dtype)


class Adam:
    """Adam with bias correction; moments are allocated on first use."""

    def __init__(self, learning_rate: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(params) != len(self.m):
            raise ValueError("optimizer state does not match the parameter list")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            mhat = m / (1 - b1 ** self.t)
            vhat = v / (1 - b2 ** self.t)
            p -= np.asarray(self.learning_rate * mhat / (np.sqrt(vhat) + self.eps),
                            dtype=p.dtype)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return Sgd(config.learning_rate)
    return Adam(config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)


# ---------------------------------------------------------------------------
# full-model forward / backward
# ---------------------------------------------------------------------------

@dataclass
class ModelCache:
    layer: dict
    head: object


def model_forward(model: ModelParams, clouds: np.ndarray, mode: str,
                  rng: Rng | None = None, return_cache: bool = False):
    """Class probabilities for one cloud (n, d) or a batch (batch, n, d)."""
    features, layer_cache = cl.forward_with_cache(clouds, model.constellation)
    if not return_cache:
        return head_forward(model, features, mode, rng)
    probs, head_cache = head_forward(model, features, mode, rng, return_cache=True)
    return probs, ModelCache(layer=layer_cache, head=head_cache)


def model_backward(model: ModelParams, cache: ModelCache, grad_probs: np.ndarray) -> Gradients:
    """All parameter gradients; the head's feature gradient feeds the
    constellation backward."""
    grads, grad_features = head_backward(model, cache.head, grad_probs)
    grads.stars = cl.backward_from_cache(model.constellation, cache.layer, grad_features)
    return grads


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _parameter_norms(model: ModelParams) -> str:
    parts = [f"{name}={float(np.linalg.norm(arr)):.3e}" for name, arr in parameter_arrays(model)]
    return ", ".join(parts)


def train_epoch(model: ModelParams, dataset: LabeledCloudSet, config: TrainConfig,
                rng: Rng, optimizer=None, epoch_index: int = 0):
    """One full shuffled pass over ``dataset``, updating ``model`` in place.

    Returns ``(mean_loss, train_accuracy)``. Raises ``NumericalAbort``
    naming the offending batch and the parameter norms if the loss goes
    non-finite.
    """
    if optimizer is None:
        optimizer = make_optimizer(config)
    shuffle_rng, dropout_rng, augment_rng = rng.split(3)
    epoch_seed = int(augment_rng.generator.integers(0, 1 << 63))
    order = shuffle_rng.generator.permutation(dataset.count)
    dtype = config.dtype

    total_loss = 0.0
    correct = 0
    for start in range(0, dataset.count, config.batch_size):
        batch_idx = order[start:start + config.batch_size]
        clouds = dataset.clouds[batch_idx].astype(dtype)
        labels = dataset.labels[batch_idx]
        if config.augment.enabled:
            for row, sample_idx in enumerate(batch_idx):
                sample_rng = Rng((epoch_seed ^ int(sample_idx)) & _SEED_MASK)
                clouds[row] = augment(clouds[row], config.augment, sample_rng)
        probs, cache = model_forward(model, clouds, "train", dropout_rng, return_cache=True)
        loss = _batch_cross_entropy(probs, labels)
        if not np.isfinite(loss):
            raise NumericalAbort(
                f"non-finite loss in epoch {epoch_index} at batch {start // config.batch_size} "
                f"(samples {start}..{start + len(batch_idx) - 1}); parameter norms: "
                f"{_parameter_norms(model)}")
        total_loss += loss * len(batch_idx)
        correct += int((probs.argmax(axis=1) == labels).sum())
        grads = model_backward(model, cache, _loss_grad_probs(probs, labels))
        optimizer.step([arr for _, arr in parameter_arrays(model)],
                       [arr for _, arr in gradient_arrays(grads)])
    return total_loss / dataset.count, correct / dataset.count


def _check_dataset(model: ModelParams, dataset: LabeledCloudSet, what: str) -> None:
    if dataset.dim != model.constellation.dim:
        raise ConfigError(f"{what} uses {dataset.dim}-D points but the model expects "
                          f"{model.constellation.dim}-D")
    if dataset.class_count != model.class_count:
        raise ConfigError(f"{what} declares {dataset.class_count} classes but the model "
                          f"has {model.class_count}")


def train(model: ModelParams, train_set: LabeledCloudSet, test_set: LabeledCloudSet | None,
          config: TrainConfig, snapshot_dir=None, progress=None, stop_when=None):
    """Train ``model`` for ``config.epochs`` epochs.

    Returns ``(model, TrainReport)``; the model is cast to the configured
    precision first, so use the returned instance. Constellation
    snapshots are written to ``snapshot_dir`` at every epoch listed in
    ``config.snapshot_epochs`` (epoch 0 is the initialization). If
    ``stop_when`` is given it is called with the report after each epoch
    and training stops early once it returns true.
    """
    config.validate()
    _check_dataset(model, train_set, "training set")
    if test_set is not None:
        _check_dataset(model, test_set, "test set")
    model = cast_model(model, config.dtype)

    snapshots = {e for e in config.snapshot_epochs if e <= config.epochs}

    def snapshot(epoch: int) -> None:
        if snapshot_dir is not None and epoch in snapshots:
            path = f"{snapshot_dir}/constellation_epoch_{epoch:04d}.csv"
            write_constellation_snapshot(path, epoch, model.constellation.stars)

    optimizer = make_optimizer(config)
    report = TrainReport()
    epoch_rngs = Rng(config.seed).split(config.epochs) if config.epochs else []
    snapshot(0)
    for epoch in range(config.epochs):
        started = time.perf_counter()
        loss, train_acc = train_epoch(model, train_set, config, epoch_rngs[epoch],
                                      optimizer, epoch_index=epoch)
        test_acc = evaluate(model, test_set) if test_set is not None else float("nan")
        report.append(epoch + 1, loss, train_acc, test_acc, time.perf_counter() - started)
        snapshot(epoch + 1)
        if progress is not None:
            progress(report)
        if stop_when is not None and stop_when(report):
            break
    return model, report


def evaluate(model: ModelParams, dataset: LabeledCloudSet, batch_size: int = 256) -> float:
    """Fraction of argmax-correct predictions in eval mode."""
    if dataset is None or dataset.count == 0:
        raise ValueError("evaluate needs a non-empty dataset")
    _check_dataset(model, dataset, "dataset")
    correct = 0
    for start in range(0, dataset.count, batch_size):
        clouds = dataset.clouds[start:start + batch_size]
        probs = model_forward(model, clouds, "eval")
        correct += int((probs.argmax(axis=1) == dataset.labels[start:start + batch_size]).sum())
    return correct / dataset.count


# ---------------------------------------------------------------------------
# finite-difference gradient oracle
# ---------------------------------------------------------------------------

def make_gradcheck_model(rng: Rng, measure: str, star_count: int = 4, dim: int = 3,
                         class_count: int = 4, hidden: tuple[int, int] = (6, 5),
                         sigma: float = 0.5, lam: float = 2.0) -> ModelParams:
    """Small float64 model posed as a generic instance for finite-difference
    checks.

    Biases and batch-norm state are jittered away from their training
    initialization: with everything at zero an entire ReLU layer can land
    exactly on its kink, where the loss is not differentiable and a
    central difference measures the secant across the corner instead of
    either one-sided slope. Dropout is disabled so the loss is
    deterministic.
    """
    from .head import init_model

    model = init_model(rng, star_count, dim, class_count, measure, sigma=sigma,
                       lam=lam, hidden=hidden, dropout_rate=0.0, dtype=np.float64)
    g = rng.generator
    for layer in model.dense:
        layer.bias += g.uniform(-0.2, 0.2, layer.bias.shape)
    for bn in model.bn:
        bn.gamma += g.uniform(-0.3, 0.3, bn.width)
        bn.beta += g.uniform(-0.2, 0.2, bn.width)
        bn.running_mean += g.uniform(-0.3, 0.3, bn.width)
        bn.running_var += g.uniform(-0.3, 0.5, bn.width)
    return model


@dataclass
class BlockCheck:
    name: str
    max_rel_err: float
    excluded: int
    passed: bool


@dataclass
class GradCheckReport:
    blocks: list[BlockCheck]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    @property
    def excluded_total(self) -> int:
        return sum(b.excluded for b in self.blocks)

    def format(self) -> str:
        lines = []
        for b in self.blocks:
            status = "PASS" if b.passed else "FAIL"
            lines.append(f"{b.name:<24} max_rel_err={b.max_rel_err:.3e} "
                         f"excluded={b.excluded} {status}")
        return "\n".join(lines)


def _excluded_star_coords(model: ModelParams, cloud: np.ndarray, step: float) -> np.ndarray:
    """Boolean mask over star coordinates where a finite difference is not
    trustworthy: argmin near-ties for the minimum measure, and point/star
    near-coincidence for both the minimum and exponential measures (the
    distance kink sits within reach of the probe step)."""
    c = model.constellation
    mask = np.zeros(c.stars.shape, dtype=bool)
    if c.measure == cl.GAUSSIAN:
        return mask
    diff = cloud[:, None, :] - c.stars[None, :, :]
    r = np.sqrt((diff * diff).sum(axis=2))          # (n, m)
    nearest = np.sort(r, axis=0)
    coincident = nearest[0] < 3 * step
    if c.measure == cl.MINIMUM and r.shape[0] > 1:
        tie = (nearest[1] - nearest[0]) < 1e-6
        mask[tie | coincident] = True
    else:
        mask[coincident] = True
    return mask


def gradient_check(model: ModelParams, cloud: np.ndarray, label: int,
                   tolerance: float = 1e-4, step: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    The model is evaluated in eval configuration (running batch-norm
    statistics, no dropout) so the loss is a deterministic differentiable
    function of the parameters; the comparison runs in float64. Star
    coordinates whose finite difference would cross a distance kink are
    excluded from the comparison and counted per block. Relative error is
    ``|a - n| / max(|a|, |n|, 1e-6)``.
    """
    model = cast_model(model, np.float64)
    cloud = np.asarray(cloud, dtype=np.float64)
    labels = np.array([label])

    probs, cache = model_forward(model, cloud[None], "eval", return_cache=True)
    grads = model_backward(model, cache, _loss_grad_probs(probs, labels))
    analytic = dict(gradient_arrays(grads))

    def loss_now() -> float:
        return _batch_cross_entropy(model_forward(model, cloud[None], "eval"), labels)

    star_mask = _excluded_star_coords(model, cloud, step)
    blocks = []
    for name, arr in parameter_arrays(model):
        ana = analytic[name]
        exclude = star_mask.reshape(-1) if name == "constellation.stars" else None
        max_err = 0.0
        excluded = 0
        flat = arr.reshape(-1)
        ana_flat = np.asarray(ana).reshape(-1)
        for i in range(flat.shape[0]):
            if exclude is not None and exclude[i]:
                excluded += 1
                continue
            original = flat[i]
            flat[i] = original + step
            plus = loss_now()
            flat[i] = original - step
            minus = loss_now()
            flat[i] = original
            numeric = (plus - minus) / (2 * step)
            denom = max(abs(ana_flat[i]), abs(numeric), 1e-6)
            max_err = max(max_err, abs(ana_flat[i] - numeric) / denom)
        blocks.append(BlockCheck(name=name, max_rel_err=max_err, excluded=excluded,
                                 passed=max_err <= tolerance))
    return GradCheckReport(blocks=blocks, tolerance=tolerance)
