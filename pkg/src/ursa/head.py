"""Dense classification head applied to the constellation descriptor.

Three fully connected layers. The first two blocks run dense -> ReLU ->
batch normalization (normalization deliberately follows the activation),
then inverted dropout, then the final dense layer with a softmax. Eval
mode is a pure function of the running batch-norm statistics; train mode
normalizes with batch statistics and updates the running ones in place.

Also home to the model container (constellation + head), parameter
bookkeeping, and the binary checkpoint format (documented at
``save_checkpoint``).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .constellation import Constellation, MEASURES, init_constellation
from .errors import DataError
from .linalg import Rng, sample_uniform


@dataclass
class DenseLayer:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray     # (out,)

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        self.bias = np.asarray(self.bias)
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValueError("dense layer expects 2-D weights and 1-D bias")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValueError(f"weights {self.weights.shape} do not match bias {self.bias.shape}")
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("dense layer contains non-finite entries")

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]


@dataclass
class BatchNormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    def __post_init__(self):
        vecs = [np.asarray(v) for v in
                (self.gamma, self.beta, self.running_mean, self.running_var)]
        self.gamma, self.beta, self.running_mean, self.running_var = vecs
        width = self.gamma.shape[0]
        if any(v.ndim != 1 or v.shape[0] != width for v in vecs):
            raise ValueError("batch-norm vectors must be 1-D and equally sized")
        if np.any(self.running_var < 0):
            raise ValueError("running variance must be non-negative")
        if not 0 < self.momentum < 1:
            raise ValueError(f"momentum must lie in (0, 1), got {self.momentum}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")

    @property
    def width(self) -> int:
        return self.gamma.shape[0]


@dataclass
class ModelParams:
    """Full network state: constellation, three dense layers, two batch norms."""

    constellation: Constellation
    dense: list[DenseLayer]
    bn: list[BatchNormState]
    class_count: int
    dropout_rate: float = 0.3

    def __post_init__(self):
        if len(self.dense) != 3 or len(self.bn) != 2:
            raise ValueError("model expects exactly 3 dense layers and 2 batch norms")
        if self.dense[0].in_dim != self.constellation.star_count:
            raise ValueError(f"first dense layer takes {self.dense[0].in_dim} inputs but the "
                             f"constellation produces {self.constellation.star_count} features")
        if self.dense[1].in_dim != self.dense[0].out_dim or self.dense[2].in_dim != self.dense[1].out_dim:
            raise ValueError("dense layer widths do not chain")
        if self.bn[0].width != self.dense[0].out_dim or self.bn[1].width != self.dense[1].out_dim:
            raise ValueError("batch-norm widths do not match their dense layers")
        if self.dense[2].out_dim != self.class_count:
            raise ValueError(f"final layer emits {self.dense[2].out_dim} logits for "
                             f"{self.class_count} classes")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def dtype(self):
        return self.constellation.stars.dtype


@dataclass
class Gradients:
    """Parameter gradients mirroring ``ModelParams`` (``stars`` is ``None``
    when only the head was differentiated)."""

    stars: np.ndarray | None
    dense: list[tuple[np.ndarray, np.ndarray]]
    bn: list[tuple[np.ndarray, np.ndarray]]


def glorot_uniform(rng: Rng, out_dim: int, in_dim: int, dtype=np.float32) -> np.ndarray:
    limit = float(np.sqrt(6.0 / (in_dim + out_dim)))
    return sample_uniform(rng, -limit, limit, (out_dim, in_dim), dtype=dtype)


def _fresh_bn(width: int, dtype) -> BatchNormState:
    return BatchNormState(
        gamma=np.ones(width, dtype=dtype),
        beta=np.zeros(width, dtype=dtype),
        running_mean=np.zeros(width, dtype=dtype),
        running_var=np.ones(width, dtype=dtype),
    )


def init_model(rng: Rng, star_count: int, dim: int, class_count: int, measure: str,
               sigma: float = 0.1, lam: float = 10.0, hidden: tuple[int, int] = (512, 256),
               dropout_rate: float = 0.3, dtype=np.float32) -> ModelParams:
    """Fresh model: stars uniform in [-1, 1), glorot-uniform dense weights,
    zero biases, identity batch norms."""
    if class_count < 2:
        raise ValueError(f"need at least 2 classes, got {class_count}")
    h1, h2 = hidden
    if h1 < 1 or h2 < 1:
        raise ValueError(f"hidden widths must be positive, got {hidden}")
    constellation = init_constellation(rng, star_count, dim, measure, sigma, lam, dtype)
    dims = [(h1, star_count), (h2, h1), (class_count, h2)]
    dense = [DenseLayer(glorot_uniform(rng, o, i, dtype), np.zeros(o, dtype=dtype))
             for o, i in dims]
    bn = [_fresh_bn(h1, dtype), _fresh_bn(h2, dtype)]
    return ModelParams(constellation=constellation, dense=dense, bn=bn,
                       class_count=class_count, dropout_rate=dropout_rate)


# ---------------------------------------------------------------------------
# forward / backward pieces
# ---------------------------------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    inner = (grad_probs * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_probs - inner)


def batchnorm_forward(bn: BatchNormState, x: np.ndarray, mode: str):
    """Returns (output, cache). Train mode normalizes with batch statistics
    and folds them into the running ones; eval mode only reads the running
    statistics."""
    if mode == "train":
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + bn.epsilon)
        xhat = (x - mean) * inv_std
        m = bn.momentum
        bn.running_mean[...] = m * bn.running_mean + (1.0 - m) * mean
        bn.running_var[...] = m * bn.running_var + (1.0 - m) * var
    elif mode == "eval":
        inv_std = 1.0 / np.sqrt(bn.running_var + bn.epsilon)
        xhat = (x - bn.running_mean) * inv_std
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    out = bn.gamma * xhat + bn.beta
    return out, (xhat, inv_std, mode)


def batchnorm_backward(bn: BatchNormState, cache, grad_out: np.ndarray):
    """Returns (grad_x, grad_gamma, grad_beta) for the cached forward pass."""
    xhat, inv_std, mode = cache
    grad_gamma = (grad_out * xhat).sum(axis=0)
    grad_beta = grad_out.sum(axis=0)
    dxhat = grad_out * bn.gamma
    if mode == "eval":
        grad_x = dxhat * inv_std
    else:
        grad_x = inv_std * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).mean(axis=0))
    return grad_x, grad_gamma, grad_beta


def _dropout_mask(x: np.ndarray, rate: float, mode: str, rng: Rng | None):
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or rate == 0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.generator.random(size=x.shape) >= rate
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    return x * keep * scale, (keep, scale)


def dropout(x: np.ndarray, rate: float, mode: str, rng: Rng | None = None) -> np.ndarray:
    """Inverted dropout: train mode zeroes entries with probability ``rate``
    and rescales survivors by 1/(1-rate); eval mode is the identity."""
    out, _ = _dropout_mask(np.asarray(x), rate, mode, rng)
    return out


@dataclass
class HeadCache:
    features: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    y1: np.ndarray
    bn_caches: list
    drop_mask: tuple | None
    dropped: np.ndarray
    probs: np.ndarray
    mode: str


def head_forward(params: ModelParams, features: np.ndarray, mode: str,
                 rng: Rng | None = None, return_cache: bool = False):
    """Class probabilities for one feature vector (m,) or a batch (batch, m).

    Dropout fires just before the final dense layer and only in train
    mode; the output rows always sum to one.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    v = np.asarray(features)
    single = v.ndim == 1
    x = v[None] if single else v
    if x.ndim != 2 or x.shape[1] != params.dense[0].in_dim:
        raise ValueError(f"feature shape {v.shape} does not match head input "
                         f"width {params.dense[0].in_dim}")

    d1, d2, d3 = params.dense
    z1 = x @ d1.weights.T + d1.bias
    y1, bc1 = batchnorm_forward(params.bn[0], relu(z1), mode)
    z2 = y1 @ d2.weights.T + d2.bias
    y2, bc2 = batchnorm_forward(params.bn[1], relu(z2), mode)
    dropped, mask = _dropout_mask(y2, params.dropout_rate, mode, rng)
    logits = dropped @ d3.weights.T + d3.bias
    probs = softmax(logits)

    out = probs[0] if single else probs
    if not return_cache:
        return out
    cache = HeadCache(features=x, z1=z1, z2=z2, y1=y1, bn_caches=[bc1, bc2],
                      drop_mask=mask, dropped=dropped, probs=probs, mode=mode)
    return out, cache


def head_backward(params: ModelParams, cache: HeadCache, grad_probs: np.ndarray):
    """Backpropagate d(loss)/d(probabilities) through the head.

    Returns ``(Gradients, grad_features)``; the feature gradient is what
    the constellation backward consumes. Gradient shapes mirror the
    parameter shapes.
    """
    gp = np.asarray(grad_probs)
    if gp.ndim == 1:
        gp = gp[None]
    if gp.shape != cache.probs.shape:
        raise ValueError(f"grad_probs shape {np.asarray(grad_probs).shape} does not match "
                         f"cached probabilities {cache.probs.shape}")

    d1, d2, d3 = params.dense
    dz3 = softmax_backward(cache.probs, gp)
    gw3 = dz3.T @ cache.dropped
    gb3 = dz3.sum(axis=0)
    ddrop = dz3 @ d3.weights
    if cache.drop_mask is not None:
        keep, scale = cache.drop_mask
        dy2 = ddrop * keep * scale
    else:
        dy2 = ddrop
    da2, ggamma2, gbeta2 = batchnorm_backward(params.bn[1], cache.bn_caches[1], dy2)
    dz2 = da2 * (cache.z2 > 0)
    gw2 = dz2.T @ cache.y1
    gb2 = dz2.sum(axis=0)
    dy1 = dz2 @ d2.weights
    da1, ggamma1, gbeta1 = batchnorm_backward(params.bn[0], cache.bn_caches[0], dy1)
    dz1 = da1 * (cache.z1 > 0)
    gw1 = dz1.T @ cache.features
    gb1 = dz1.sum(axis=0)
    grad_features = dz1 @ d1.weights

    grads = Gradients(stars=None,
                      dense=[(gw1, gb1), (gw2, gb2), (gw3, gb3)],
                      bn=[(ggamma1, gbeta1), (ggamma2, gbeta2)])
    return grads, grad_features


# ---------------------------------------------------------------------------
# parameter bookkeeping
# ---------------------------------------------------------------------------

def parameter_arrays(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Trainable arrays in their canonical order (checkpoints and optimizer
    state both rely on this order)."""
    out = [("constellation.stars", params.constellation.stars)]
    for i, layer in enumerate(params.dense, start=1):
        out.append((f"dense{i}.weights", layer.weights))
        out.append((f"dense{i}.bias", layer.bias))
        if i <= 2:
            bn = params.bn[i - 1]
            out.append((f"bn{i}.gamma", bn.gamma))
            out.append((f"bn{i}.beta", bn.beta))
    return out


def gradient_arrays(grads: Gradients) -> list[tuple[str, np.ndarray]]:
    """Gradient arrays in the same order as ``parameter_arrays``."""
    out = []
    if grads.stars is not None:
        out.append(("constellation.stars", grads.stars))
    for i, (gw, gb) in enumerate(grads.dense, start=1):
        out.append((f"dense{i}.weights", gw))
        out.append((f"dense{i}.bias", gb))
        if i <= 2:
            ggamma, gbeta = grads.bn[i - 1]
            out.append((f"bn{i}.gamma", ggamma))
            out.append((f"bn{i}.beta", gbeta))
    return out


def parameter_count(params: ModelParams) -> int:
    return sum(arr.size for _, arr in parameter_arrays(params))


def summary(params: ModelParams) -> str:
    lines = []
    for name, arr in parameter_arrays(params):
        shape = "x".join(str(s) for s in arr.shape)
        lines.append(f"{name:<24} {shape:>10} {arr.size:>10}")
    lines.append(f"total trainable parameters: {parameter_count(params)}")
    return "\n".join(lines)


def cast_model(params: ModelParams, dtype) -> ModelParams:
    """Deep copy with every array converted to ``dtype``."""
    dtype = np.dtype(dtype)
    c = params.constellation
    constellation = Constellation(stars=c.stars.astype(dtype), measure=c.measure,
                                  sigma=c.sigma, lam=c.lam)
    dense = [DenseLayer(l.weights.astype(dtype), l.bias.astype(dtype)) for l in params.dense]
    bn = [BatchNormState(b.gamma.astype(dtype), b.beta.astype(dtype),
                         b.running_mean.astype(dtype), b.running_var.astype(dtype),
                         momentum=b.momentum, epsilon=b.epsilon) for b in params.bn]
    return ModelParams(constellation=constellation, dense=dense, bn=bn,
                       class_count=params.class_count, dropout_rate=params.dropout_rate)


# ---------------------------------------------------------------------------
# checkpoint format
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"URSM"
CHECKPOINT_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPE_FROM_CODE = {0: np.dtype(np.float32), 1: np.dtype(np.float64)}
_MEASURE_CODES = {m: i for i, m in enumerate(MEASURES)}

_HEADER = struct.Struct("<4sBBBB5I3d4d")  # magic, version, dtype, measure, pad,
#                                           m, d, classes, h1, h2,
#                                           sigma, lam, dropout,
#                                           bn1 momentum/eps, bn2 momentum/eps


def save_checkpoint(path, params: ModelParams, config_text: str = "") -> None:
    """Write the model (and an optional configuration blob) to ``path``.

    Layout, little-endian throughout: the header above, then the raw
    array data in ``parameter_arrays`` order with each batch norm's
    running mean and variance appended directly after its beta, then a
    u32 byte length plus the UTF-8 configuration text.
    """
    dtype = np.dtype(params.dtype)
    if dtype not in _DTYPE_CODES:
        raise ValueError(f"cannot checkpoint dtype {dtype}")
    c = params.constellation
    h1, h2 = params.dense[0].out_dim, params.dense[1].out_dim
    header = _HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, _DTYPE_CODES[dtype],
        _MEASURE_CODES[c.measure], 0,
        c.star_count, c.dim, params.class_count, h1, h2,
        c.sigma, c.lam, params.dropout_rate,
        params.bn[0].momentum, params.bn[0].epsilon,
        params.bn[1].momentum, params.bn[1].epsilon,
    )
    blob = config_text.encode("utf-8")
    with open(path, "wb") as f:
        f.write(header)
        for arr in _checkpoint_arrays(params):
            f.write(np.ascontiguousarray(arr, dtype=dtype.newbyteorder("<")).tobytes())
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)


def _checkpoint_arrays(params: ModelParams):
    for i, layer in enumerate(params.dense):
        if i == 0:
            yield params.constellation.stars
        yield layer.weights
        yield layer.bias
        if i <= 1:
            bn = params.bn[i]
            yield bn.gamma
            yield bn.beta
            yield bn.running_mean
            yield bn.running_var


def load_checkpoint(path):
    """Read a checkpoint written by ``save_checkpoint``.

    Returns ``(ModelParams, config_text)``. Raises ``DataError`` on a bad
    magic number, unknown version, or truncation.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise DataError(f"checkpoint {path} truncated at byte {len(raw)} (incomplete header)")
    (magic, version, dtype_code, measure_code, _pad, m, d, classes, h1, h2,
     sigma, lam, drop, mom1, eps1, mom2, eps2) = _HEADER.unpack_from(raw, 0)
    if magic != CHECKPOINT_MAGIC:
        raise DataError(f"checkpoint {path} has bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise DataError(f"checkpoint {path} has unsupported version {version}")
    if dtype_code not in _DTYPE_FROM_CODE:
        raise DataError(f"checkpoint {path} has unknown dtype code {dtype_code}")
    if measure_code not in range(len(MEASURES)):
        raise DataError(f"checkpoint {path} has unknown measure code {measure_code}")
    dtype = _DTYPE_FROM_CODE[dtype_code]
    measure = MEASURES[measure_code]

    shapes = [(m, d),
              (h1, m), (h1,), (h1,), (h1,), (h1,), (h1,),
              (h2, h1), (h2,), (h2,), (h2,), (h2,), (h2,),
              (classes, h2), (classes,)]
    offset = _HEADER.size
    arrays = []
    for shape in shapes:
        count = int(np.prod(shape))
        nbytes = count * dtype.itemsize
        if offset + nbytes > len(raw):
            raise DataError(f"checkpoint {path} truncated at byte {len(raw)} "
                            f"(expected array data at offset {offset})")
        arr = np.frombuffer(raw, dtype=dtype.newbyteorder("<"), count=count, offset=offset)
        arrays.append(arr.astype(dtype).reshape(shape))
        offset += nbytes
    if offset + 4 > len(raw):
        raise DataError(f"checkpoint {path} truncated at byte {len(raw)} (missing config length)")
    (blob_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if offset + blob_len > len(raw):
        raise DataError(f"checkpoint {path} truncated at byte {len(raw)} (incomplete config)")
    config_text = raw[offset:offset + blob_len].decode("utf-8")

    (stars, w1, b1, g1, be1, rm1, rv1, w2, b2, g2, be2, rm2, rv2, w3, b3) = arrays
    params = ModelParams(
        constellation=Constellation(stars=stars, measure=measure, sigma=sigma, lam=lam),
        dense=[DenseLayer(w1, b1), DenseLayer(w2, b2), DenseLayer(w3, b3)],
        bn=[BatchNormState(g1, be1, rm1, rv1, momentum=mom1, epsilon=eps1),
            BatchNormState(g2, be2, rm2, rv2, momentum=mom2, epsilon=eps2)],
        class_count=classes, dropout_rate=drop)
    return params, config_text
