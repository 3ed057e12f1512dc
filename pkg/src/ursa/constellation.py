"""The constellation layer: trainable star positions that summarize a point set.

A point cloud is an unordered set of n points in R^d. The layer holds m
trainable d-dimensional "stars" and emits one non-negative value per
star, so any cloud maps to a fixed-length descriptor regardless of how
its rows happen to be ordered. Three radial profiles are supported:

* ``gaussian``     v_i = sum_j exp(-||p_j - q_i||^2 / (2 * sigma^2))
* ``exponential``  v_i = sum_j exp(-lam * ||p_j - q_i||)
* ``minimum``      v_i = min_j ||p_j - q_i||

Sums over points accumulate in float64 in fixed row order, so permuting
the input rows only moves the result by final-rounding noise; the
minimum profile is exactly order-free. Gradients with respect to the
stars are analytic (see ``backward``); input points never receive a
gradient, since this layer sits directly on the data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import Rng, sample_uniform

GAUSSIAN = "gaussian"
EXPONENTIAL = "exponential"
MINIMUM = "minimum"
MEASURES = (GAUSSIAN, EXPONENTIAL, MINIMUM)

# Distances below this are treated as an exact point/star coincidence:
# the exponential gradient contribution is zeroed there (the true
# derivative is undefined), and the minimum gradient returns zero.
COINCIDENCE_EPS = 1e-8


@dataclass
class Constellation:
    """The layer's learnable state: star positions plus the distance profile.

    ``sigma`` is only consulted by the gaussian profile and ``lam`` only
    by the exponential one. Trainable parameter count is exactly m * d.
    """

    stars: np.ndarray
    measure: str
    sigma: float = 0.1
    lam: float = 10.0

    def __post_init__(self):
        self.stars = np.asarray(self.stars)
        if self.stars.ndim != 2 or self.stars.shape[0] < 1 or self.stars.shape[1] < 1:
            raise ValueError(f"stars must be a non-empty (m, d) array, got shape {self.stars.shape}")
        if not np.all(np.isfinite(self.stars)):
            raise ValueError("stars contain non-finite coordinates")
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}, expected one of {MEASURES}")
        if self.measure == GAUSSIAN and not self.sigma > 0:
            raise ValueError(f"gaussian measure requires sigma > 0, got {self.sigma}")
        if self.measure == EXPONENTIAL and not self.lam > 0:
            raise ValueError(f"exponential measure requires lam > 0, got {self.lam}")

    @property
    def star_count(self) -> int:
        return self.stars.shape[0]

    @property
    def dim(self) -> int:
        return self.stars.shape[1]

    @property
    def parameter_count(self) -> int:
        return self.stars.size


def init_constellation(rng: Rng, star_count: int, dim: int, measure: str,
                       sigma: float = 0.1, lam: float = 10.0,
                       dtype=np.float32) -> Constellation:
    """Constellation with every star coordinate drawn uniform in [-1, 1)."""
    if star_count < 1 or dim < 1:
        raise ValueError(f"need star_count >= 1 and dim >= 1, got {star_count}, {dim}")
    stars = sample_uniform(rng, -1.0, 1.0, (star_count, dim), dtype=dtype)
    return Constellation(stars=stars, measure=measure, sigma=sigma, lam=lam)


def _as_batch(points: np.ndarray) -> tuple[np.ndarray, bool]:
    pts = np.asarray(points)
    if pts.ndim == 2:
        pts = pts[None]
        single = True
    elif pts.ndim == 3:
        single = False
    else:
        raise ValueError(f"points must be (n, d) or (batch, n, d), got shape {pts.shape}")
    if pts.shape[1] < 1 or pts.shape[2] < 1:
        raise ValueError(f"point cloud needs n >= 1 and d >= 1, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("point cloud contains non-finite coordinates")
    return pts, single


def _check_dims(pts3: np.ndarray, constellation: Constellation, measure: str | None = None):
    if pts3.shape[2] != constellation.dim:
        raise ValueError(
            f"point dimension {pts3.shape[2]} does not match star dimension {constellation.dim}")
    if measure is not None and constellation.measure != measure:
        raise ValueError(f"constellation uses measure {constellation.measure!r}, not {measure!r}")


def _sq_dists(pts3: np.ndarray, stars: np.ndarray) -> np.ndarray:
    """Squared distances (batch, n, m), accumulated one coordinate at a time.

    Elementwise evaluation keeps each pair's value independent of its row
    position, which is what makes the permutation-invariance bound tight.
    """
    b, n, _ = pts3.shape
    m = stars.shape[0]
    dtype = np.result_type(pts3.dtype, stars.dtype)
    acc = np.zeros((b, n, m), dtype=dtype)
    diff = np.empty((b, n, m), dtype=dtype)
    for k in range(stars.shape[1]):
        np.subtract(pts3[:, :, k, None], stars[:, k], out=diff)
        np.multiply(diff, diff, out=diff)
        acc += diff
    return acc


def _sum_over_points(terms: np.ndarray, out_dtype) -> np.ndarray:
    # accumulate in float64 so the result is insensitive to row order
    return terms.sum(axis=1, dtype=np.float64).astype(out_dtype)


def forward_gaussian(points: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Per star i: sum_j exp(-||p_j - q_i||^2 / (2 sigma^2)). Output in (0, n]."""
    pts3, single = _as_batch(points)
    _check_dims(pts3, constellation, GAUSSIAN)
    sq = _sq_dists(pts3, constellation.stars)
    w = np.exp(sq / (-2.0 * constellation.sigma * constellation.sigma))
    v = _sum_over_points(w, sq.dtype)
    return v[0] if single else v


def forward_exponential(points: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Per star i: sum_j exp(-lam * ||p_j - q_i||). Output in (0, n]."""
    pts3, single = _as_batch(points)
    _check_dims(pts3, constellation, EXPONENTIAL)
    r = np.sqrt(_sq_dists(pts3, constellation.stars))
    e = np.exp(-constellation.lam * r)
    v = _sum_over_points(e, r.dtype)
    return v[0] if single else v


def forward_minimum(points: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Per star i: distance to the nearest cloud point. Zero iff a point
    coincides with the star."""
    pts3, single = _as_batch(points)
    _check_dims(pts3, constellation, MINIMUM)
    r = np.sqrt(_sq_dists(pts3, constellation.stars))
    v = r.min(axis=1)
    return v[0] if single else v


_FORWARD = {GAUSSIAN: forward_gaussian, EXPONENTIAL: forward_exponential, MINIMUM: forward_minimum}


def forward(points: np.ndarray, constellation: Constellation) -> np.ndarray:
    """Feature vector for (n, d) points, or a (batch, m) stack for (batch, n, d)."""
    return _FORWARD[constellation.measure](points, constellation)


def forward_with_cache(points: np.ndarray, constellation: Constellation):
    """Forward pass that also returns the intermediates ``backward_from_cache``
    needs, so training does not recompute the distance table."""
    pts3, single = _as_batch(points)
    _check_dims(pts3, constellation)
    cache = {"points": pts3, "single": single}
    sq = _sq_dists(pts3, constellation.stars)
    if constellation.measure == GAUSSIAN:
        w = np.exp(sq / (-2.0 * constellation.sigma * constellation.sigma))
        cache["weights"] = w
        v = _sum_over_points(w, sq.dtype)
    elif constellation.measure == EXPONENTIAL:
        r = np.sqrt(sq)
        e = np.exp(-constellation.lam * r)
        cache["radii"] = r
        cache["decays"] = e
        v = _sum_over_points(e, r.dtype)
    else:
        r = np.sqrt(sq)
        nearest = r.argmin(axis=1)
        cache["nearest"] = nearest
        cache["nearest_dist"] = np.take_along_axis(r, nearest[:, None, :], axis=1)[:, 0, :]
        v = cache["nearest_dist"].copy()
    return (v[0] if single else v), cache


def _weighted_point_sum(u: np.ndarray, pts3: np.ndarray) -> np.ndarray:
    # sum over batch and points of u[b, j, i] * p[b, j, :] -> (m, d)
    b, n, m = u.shape
    d = pts3.shape[2]
    return u.reshape(b * n, m).T @ pts3.reshape(b * n, d)


def _upstream_2d(upstream: np.ndarray, batch: int, m: int, single: bool) -> np.ndarray:
    up = np.asarray(upstream)
    if single and up.ndim == 1:
        up = up[None]
    if up.shape != (batch, m):
        raise ValueError(f"upstream gradient shape {np.asarray(upstream).shape} does not "
                         f"match feature shape ({batch}, {m})")
    return up


def backward_from_cache(constellation: Constellation, cache: dict, upstream: np.ndarray) -> np.ndarray:
    """Gradient of the upstream-weighted output with respect to the stars.

    Per-star derivatives (star k only influences component k):

    * gaussian:     dv_i/dq_i = (1 / sigma^2) sum_j exp(.) (p_j - q_i)
    * exponential:  dv_i/dq_i = lam sum_j exp(.) (p_j - q_i) / ||p_j - q_i||,
      with a coincident pair contributing zero,
    * minimum:      dv_i/dq_i = (q_i - p_j*) / ||q_i - p_j*|| for the nearest
      point j* (lowest index on a tie), zero when the star sits on a point.

    Returns the (m, d) gradient summed over the batch.
    """
    pts3 = cache["points"]
    stars = constellation.stars
    b = pts3.shape[0]
    m = stars.shape[0]
    up = _upstream_2d(upstream, b, m, cache["single"])

    if constellation.measure == GAUSSIAN:
        u = cache["weights"] * up[:, None, :]
        total = u.sum(axis=(0, 1))
        pw = _weighted_point_sum(u, pts3)
        return (pw - stars * total[:, None]) / (constellation.sigma * constellation.sigma)

    if constellation.measure == EXPONENTIAL:
        r = cache["radii"]
        safe = np.maximum(r, COINCIDENCE_EPS)
        u = np.where(r < COINCIDENCE_EPS, 0.0, cache["decays"] / safe) * up[:, None, :]
        total = u.sum(axis=(0, 1))
        pw = _weighted_point_sum(u, pts3)
        return constellation.lam * (pw - stars * total[:, None])

    nearest = cache["nearest"]                      # (batch, m)
    rmin = cache["nearest_dist"]                    # (batch, m)
    pstar = pts3[np.arange(b)[:, None], nearest]    # (batch, m, d)
    diff = stars[None, :, :] - pstar
    denom = np.maximum(rmin, COINCIDENCE_EPS)[..., None]
    unit = np.where(rmin[..., None] < COINCIDENCE_EPS, 0.0, diff / denom)
    return (up[..., None] * unit).sum(axis=0)


def backward(points: np.ndarray, constellation: Constellation, upstream: np.ndarray) -> np.ndarray:
    """Standalone star gradient; recomputes the forward intermediates."""
    _, cache = forward_with_cache(points, constellation)
    return backward_from_cache(constellation, cache, upstream)
