"""Shared test utilities: independent oracles and tiny model builders."""
import numpy as np

from ursa import LabeledCloudSet, Rng, init_model


def matmul_triple_loop(a, b):
    """Naive triple-loop matrix product, the reference for the fast path."""
    a = np.asarray(a)
    b = np.asarray(b)
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.result_type(a, b))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            acc = 0.0
            for k in range(a.shape[1]):
                acc += a[i, k] * b[k, j]
            out[i, j] = acc
    return out


def pairwise_distance_table(points, stars):
    """Exhaustive (n, m) distance table built point by point."""
    n, m = points.shape[0], stars.shape[0]
    table = np.zeros((n, m))
    for j in range(n):
        for i in range(m):
            table[j, i] = np.sqrt(((points[j] - stars[i]) ** 2).sum())
    return table


def central_difference(fn, arr, step=1e-5):
    """Central finite-difference gradient of a scalar function of ``arr``.

    Mutates and restores ``arr`` in place; ``fn`` takes no arguments and
    must read the current contents of ``arr``.
    """
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.shape[0]):
        original = flat[i]
        flat[i] = original + step
        plus = fn()
        flat[i] = original - step
        minus = fn()
        flat[i] = original
        gflat[i] = (plus - minus) / (2 * step)
    return grad


def relative_error(analytic, numeric, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return np.abs(a - n) / denom


def tiny_model(seed, measure, star_count=4, dim=3, class_count=4, hidden=(6, 5),
               dropout_rate=0.0, dtype=np.float64, sigma=0.5, lam=2.0):
    """Small double-precision model for gradient tests.

    The gentler default widths (sigma, lam) keep gradients away from the
    underflow regime so finite differences stay informative.
    """
    return init_model(Rng(seed), star_count, dim, class_count, measure,
                      sigma=sigma, lam=lam, hidden=hidden,
                      dropout_rate=dropout_rate, dtype=dtype)


def blob_dataset(seed, samples_per_class=20, points=32, spread=0.15, split="train"):
    """Two well-separated point-cloud classes: blobs around (-0.5, -0.5)
    and (+0.5, +0.5)."""
    rng = Rng(seed)
    centers = np.array([[-0.5, -0.5], [0.5, 0.5]])
    count = 2 * samples_per_class
    clouds = np.empty((count, points, 2), dtype=np.float32)
    labels = np.empty(count, dtype=np.int64)
    for i in range(count):
        cls = i % 2
        clouds[i] = centers[cls] + spread * rng.generator.standard_normal((points, 2))
        labels[i] = cls
    # one global scale into the unit sphere keeps the class geometry intact
    clouds /= np.linalg.norm(clouds, axis=2).max() * 1.0001
    return LabeledCloudSet(clouds=clouds, labels=labels, class_count=2, split=split)
