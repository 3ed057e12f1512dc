"""Dense-array helpers and the seeded RNG every other module builds on.

numpy supplies storage and arithmetic; this module pins down the exact
contracts the rest of the library relies on:

* matrices are 2-D row-major ``ndarray``s whose entries stay finite,
* random streams are PCG64 and replay bit-for-bit for a given seed on
  every platform,
* uniform draws live in the half-open range ``[lo, hi)``,
* "clipped" normal draws saturate at the clip bound (they are clamped,
  not redrawn, so the number of consumed draws is deterministic).

float64 is mandatory wherever gradients are compared against finite
differences; float32 is the default training precision.
"""
from __future__ import annotations

import numpy as np

_SEED_MASK = (1 << 64) - 1


class Rng:
    """A seeded PCG64 stream with deterministic child-stream derivation.

    ``split`` derives independent child streams via the seed-sequence
    spawning mechanism, without consuming draws from this stream. Child
    identity depends only on the seed and the order of ``split`` calls.
    """

    __slots__ = ("seed", "generator", "_seq")

    def __init__(self, seed: int):
        self.seed = int(seed) & _SEED_MASK
        self._seq = np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seq))

    @classmethod
    def _from_seq(cls, seq: np.random.SeedSequence) -> "Rng":
        rng = cls.__new__(cls)
        rng.seed = seq.entropy if isinstance(seq.entropy, int) else 0
        rng._seq = seq
        rng.generator = np.random.Generator(np.random.PCG64(seq))
        return rng

    def split(self, n: int) -> list["Rng"]:
        return [Rng._from_seq(seq) for seq in self._seq.spawn(n)]

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-D arrays.

    Raises ``ValueError`` on a dimension mismatch or if the product
    contains non-finite entries.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    if not np.all(np.isfinite(out)):
        raise ValueError("matmul produced non-finite entries")
    return out


def _check_shape(shape) -> tuple:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


def sample_uniform(rng: Rng, lo: float, hi: float, shape, dtype=np.float64) -> np.ndarray:
    """Draws uniform in [lo, hi) with the requested shape and float dtype."""
    if not lo < hi:
        raise ValueError(f"sample_uniform requires lo < hi, got lo={lo}, hi={hi}")
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    u = rng.generator.random(size=_check_shape(shape), dtype=dtype)
    out = np.asarray(lo + (hi - lo) * u, dtype=dtype)
    # rounding of lo + (hi - lo) * u must never reach hi itself
    np.minimum(out, np.nextafter(dtype.type(hi), dtype.type(lo)), out=out)
    return out


def sample_clipped_normal(rng: Rng, std: float, clip: float, shape, dtype=np.float64) -> np.ndarray:
    """Zero-mean normal draws with standard deviation ``std``, clamped to
    ``[-clip, +clip]``."""
    if std <= 0:
        raise ValueError(f"sample_clipped_normal requires std > 0, got {std}")
    if clip <= 0:
        raise ValueError(f"sample_clipped_normal requires clip > 0, got {clip}")
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    z = rng.generator.standard_normal(size=_check_shape(shape), dtype=dtype)
    out = np.clip(std * z, -clip, clip)
    return np.asarray(out, dtype=dtype)
