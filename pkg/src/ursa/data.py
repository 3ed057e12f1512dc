"""Dataset ingestion, image-to-cloud conversion, augmentation, and the
binary cloud-archive format.

IDX files
    The classic big-endian layout: u32 magic (0x00000803 for images,
    0x00000801 for labels), u32 counts/dimensions, then raw unsigned
    bytes. Images must be 28x28 and labels must be digits 0-9.

Cloud archive
    Little-endian container for a fixed-size labeled cloud set:
    magic ``URSA``, then u32 version, set count, points per cloud (n),
    dimension (d), class count; then per sample d*n float32 coordinate
    values stored dimension-major (all first coordinates, then all
    second, ...) followed by a u16 label.

Snapshot CSV
    ``epoch,star_index,<coordinates>`` with exactly one row per star.

Image conversion maps pixel (row r, col c) to (c/13.5 - 1, 1 - r/13.5),
centering the 28x28 grid in [-1, 1]^2 with y pointing up, and pads every
cloud to 312 points by repeating randomly chosen existing points.
"""
from __future__ import annotations

import csv
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .linalg import Rng, sample_clipped_normal, sample_uniform

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
IMAGE_SIDE = 28
BRIGHTNESS_THRESHOLD = 128      # strictly greater-than
CLOUD_POINTS = 312              # padded size of every converted image

ARCHIVE_MAGIC = b"URSA"
ARCHIVE_VERSION = 1
_ARCHIVE_HEADER = struct.Struct("<4s5I")


@dataclass
class LabeledCloudSet:
    """Uniformly shaped labeled point clouds: ``clouds`` is (count, n, d)."""

    clouds: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "train"

    def __post_init__(self):
        self.clouds = np.asarray(self.clouds)
        self.labels = np.asarray(self.labels)
        if self.clouds.ndim != 3:
            raise ValueError(f"clouds must be (count, n, d), got shape {self.clouds.shape}")
        count, n, d = self.clouds.shape
        if count < 1 or n < 1 or d < 1:
            raise ValueError(f"cloud set must be non-empty, got shape {self.clouds.shape}")
        if self.labels.shape != (count,):
            raise ValueError(f"{count} clouds but {self.labels.shape} labels")
        if self.class_count < 1:
            raise ValueError(f"class_count must be positive, got {self.class_count}")
        if np.any(self.labels < 0) or np.any(self.labels >= self.class_count):
            raise ValueError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(self.clouds)):
            raise ValueError("clouds contain non-finite coordinates")

    @property
    def count(self) -> int:
        return self.clouds.shape[0]

    @property
    def points_per_cloud(self) -> int:
        return self.clouds.shape[1]

    @property
    def dim(self) -> int:
        return self.clouds.shape[2]


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

def _read_exact(f, nbytes: int, path, what: str) -> bytes:
    offset = f.tell()
    chunk = f.read(nbytes)
    if len(chunk) != nbytes:
        raise DataError(f"{path}: truncated while reading {what} at byte {offset} "
                        f"(wanted {nbytes} bytes, got {len(chunk)})")
    return chunk


def load_idx_images(path) -> np.ndarray:
    """28x28 unsigned-byte images from an IDX image file."""
    with open(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">4I", _read_exact(f, 16, path, "header"))
        if magic != IDX_IMAGE_MAGIC:
            raise DataError(f"{path}: bad image magic 0x{magic:08x} at byte 0 "
                            f"(expected 0x{IDX_IMAGE_MAGIC:08x})")
        if (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE):
            raise DataError(f"{path}: expected {IMAGE_SIDE}x{IMAGE_SIDE} images, got {rows}x{cols}")
        data = _read_exact(f, count * rows * cols, path, "pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    """Digit labels (0-9) from an IDX label file."""
    with open(path, "rb") as f:
        magic, count = struct.unpack(">2I", _read_exact(f, 8, path, "header"))
        if magic != IDX_LABEL_MAGIC:
            raise DataError(f"{path}: bad label magic 0x{magic:08x} at byte 0 "
                            f"(expected 0x{IDX_LABEL_MAGIC:08x})")
        data = _read_exact(f, count, path, "label data")
    labels = np.frombuffer(data, dtype=np.uint8)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise DataError(f"{path}: label value {labels[bad[0]]} at index {bad[0]} is not a digit")
    return labels


def load_idx(images_path, labels_path):
    """Paired image/label arrays; raises ``DataError`` if the counts disagree."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images_path} holds {images.shape[0]} images but "
                        f"{labels_path} holds {labels.shape[0]} labels")
    return images, labels


# ---------------------------------------------------------------------------
# image -> point cloud
# ---------------------------------------------------------------------------

def image_to_cloud(image: np.ndarray, rng: Rng) -> np.ndarray:
    """Point cloud of the bright pixels of one 28x28 image.

    Pixels strictly brighter than 128 become points; the cloud is padded
    to exactly 312 points by repeating randomly chosen existing points,
    so the set of distinct points always equals the bright-pixel set.
    """
    img = np.asarray(image)
    if img.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise ValueError(f"expected a {IMAGE_SIDE}x{IMAGE_SIDE} image, got shape {img.shape}")
    rows, cols = np.nonzero(img > BRIGHTNESS_THRESHOLD)
    if rows.size == 0:
        raise DataError("image has no pixels brighter than 128; nothing to convert")
    if rows.size > CLOUD_POINTS:
        raise DataError(f"image has {rows.size} bright pixels, more than the "
                        f"cloud size {CLOUD_POINTS}")
    half = (IMAGE_SIDE - 1) / 2.0
    pts = np.stack([cols / half - 1.0, 1.0 - rows / half], axis=1)
    if rows.size < CLOUD_POINTS:
        extra = rng.generator.integers(0, rows.size, size=CLOUD_POINTS - rows.size)
        pts = np.concatenate([pts, pts[extra]], axis=0)
    return pts.astype(np.float32)


def convert_images(images: np.ndarray, labels: np.ndarray, rng: Rng,
                   split: str = "train") -> LabeledCloudSet:
    """Convert a stack of images into a 312-point, 2-D, 10-class cloud set."""
    if images.shape[0] != labels.shape[0]:
        raise ValueError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    clouds = np.empty((images.shape[0], CLOUD_POINTS, 2), dtype=np.float32)
    for i in range(images.shape[0]):
        clouds[i] = image_to_cloud(images[i], rng)
    return LabeledCloudSet(clouds=clouds, labels=labels.astype(np.int64),
                           class_count=10, split=split)


# ---------------------------------------------------------------------------
# cloud archive
# ---------------------------------------------------------------------------

def save_cloud_archive(path, dataset: LabeledCloudSet) -> None:
    """Write ``dataset`` in the archive layout described in the module docstring."""
    if dataset.class_count > 0xFFFF:
        raise ValueError(f"archive labels are u16; class_count {dataset.class_count} too large")
    count, n, d = dataset.clouds.shape
    record = np.dtype([("points", "<f4", (d, n)), ("label", "<u2")])
    records = np.empty(count, dtype=record)
    records["points"] = dataset.clouds.transpose(0, 2, 1)
    records["label"] = dataset.labels
    with open(path, "wb") as f:
        f.write(_ARCHIVE_HEADER.pack(ARCHIVE_MAGIC, ARCHIVE_VERSION, count, n, d,
                                     dataset.class_count))
        f.write(records.tobytes())


def load_cloud_archive(path, split: str = "train") -> LabeledCloudSet:
    """Read an archive written by ``save_cloud_archive``.

    Raises ``DataError`` on a bad magic number, version, truncated or
    oversized payload, zero sample count, or a label outside the declared
    class range. Warns (without failing) if any point lies outside the
    unit sphere by more than 1e-3.
    """
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _ARCHIVE_HEADER.size:
        raise DataError(f"{path}: truncated at byte {len(raw)} (incomplete header)")
    magic, version, count, n, d, class_count = _ARCHIVE_HEADER.unpack_from(raw, 0)
    if magic != ARCHIVE_MAGIC:
        raise DataError(f"{path}: bad magic {magic!r} at byte 0")
    if version != ARCHIVE_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if count == 0:
        raise DataError(f"{path}: archive declares zero samples")
    if n < 1 or d < 1 or class_count < 1:
        raise DataError(f"{path}: invalid header (count={count}, n={n}, d={d}, "
                        f"classes={class_count})")
    record = np.dtype([("points", "<f4", (d, n)), ("label", "<u2")])
    expected = _ARCHIVE_HEADER.size + count * record.itemsize
    if len(raw) < expected:
        raise DataError(f"{path}: truncated at byte {len(raw)} (expected {expected} bytes "
                        f"for {count} samples of {n}x{d} points)")
    if len(raw) > expected:
        raise DataError(f"{path}: {len(raw) - expected} trailing bytes after {count} samples")
    records = np.frombuffer(raw, dtype=record, count=count, offset=_ARCHIVE_HEADER.size)
    clouds = records["points"].transpose(0, 2, 1).astype(np.float32)
    labels = records["label"].astype(np.int64)
    if np.any(labels >= class_count):
        raise DataError(f"{path}: label {labels.max()} exceeds declared class count "
                        f"{class_count}")
    max_norm = float(np.sqrt((clouds ** 2).sum(axis=2).max()))
    if max_norm > 1.0 + 1e-3:
        warnings.warn(f"{path}: point norm {max_norm:.4f} exceeds the unit sphere",
                      stacklevel=2)
    return LabeledCloudSet(clouds=clouds, labels=labels, class_count=class_count, split=split)


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass
class AugmentConfig:
    """Per-sample training augmentation: uniform scale, small clipped-normal
    rotation per angular axis, uniform shift per dimension, clipped-normal
    jitter per coordinate, applied in that order."""

    scale_range: tuple[float, float] = (0.8, 1.25)
    rotation_std: float = 0.06
    rotation_clip: float = 0.18
    shift_range: tuple[float, float] = (-0.1, 0.1)
    jitter_std: float = 0.01
    jitter_clip: float = 0.05
    enabled: bool = True

    def validate(self) -> None:
        # degenerate widths (lo == hi, std == 0) are allowed and make that
        # component an exact no-op, which is useful for isolating the others
        lo, hi = self.scale_range
        if not (0 < lo <= hi):
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got {self.scale_range}")
        if self.rotation_std < 0 or not self.rotation_clip > 0:
            raise ValueError("rotation std must be >= 0 and clip positive")
        slo, shi = self.shift_range
        if not slo <= shi:
            raise ValueError(f"shift_range must satisfy lo <= hi, got {self.shift_range}")
        if self.jitter_std < 0 or not self.jitter_clip > 0:
            raise ValueError("jitter std must be >= 0 and clip positive")


def _rotation_matrix_2d(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _rotation_matrix_3d(ax: float, ay: float, az: float) -> np.ndarray:
    # rotate about x, then y, then z
    cx, sx = np.cos(ax), np.sin(ax)
    cy, sy = np.cos(ay), np.sin(ay)
    cz, sz = np.cos(az), np.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def augment(cloud: np.ndarray, cfg: AugmentConfig, rng: Rng) -> np.ndarray:
    """Randomly scaled, rotated, shifted, and jittered copy of ``cloud``.

    Point count, dimension, and dtype are preserved. Draw order is fixed
    (scale, rotation angles, shift, jitter) so a given rng seed always
    produces the same transform; components with a degenerate width
    consume no draws and apply exactly nothing. Rotation applies to 2-D
    and 3-D clouds; 1-D clouds skip it.
    """
    pts = np.asarray(cloud)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError(f"cloud must be (n, d), got shape {pts.shape}")
    n, d = pts.shape
    if d not in (1, 2, 3):
        raise ValueError(f"augmentation supports d in {{1, 2, 3}}, got d={d}")
    if not cfg.enabled:
        return pts.copy()
    cfg.validate()

    out = pts.astype(np.float64)
    lo, hi = cfg.scale_range
    scale = lo if lo == hi else float(sample_uniform(rng, lo, hi, ()))
    if scale != 1.0:
        out *= scale
    if cfg.rotation_std > 0:
        if d == 2:
            theta = float(sample_clipped_normal(rng, cfg.rotation_std, cfg.rotation_clip, ()))
            out = out @ _rotation_matrix_2d(theta).T
        elif d == 3:
            ax, ay, az = sample_clipped_normal(rng, cfg.rotation_std, cfg.rotation_clip, (3,))
            out = out @ _rotation_matrix_3d(ax, ay, az).T
    slo, shi = cfg.shift_range
    shift = np.full(d, slo) if slo == shi else sample_uniform(rng, slo, shi, (d,))
    if shift.any():
        out += shift
    if cfg.jitter_std > 0:
        out += sample_clipped_normal(rng, cfg.jitter_std, cfg.jitter_clip, (n, d))
    return out.astype(pts.dtype)


# ---------------------------------------------------------------------------
# constellation snapshot CSV
# ---------------------------------------------------------------------------

def _coordinate_names(dim: int) -> list[str]:
    if dim <= 3:
        return list("xyz"[:dim])
    return [f"x{i}" for i in range(dim)]


def write_constellation_snapshot(path, epoch: int, stars: np.ndarray) -> None:
    """CSV with one row per star: epoch, star_index, then the coordinates."""
    stars = np.asarray(stars)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "star_index"] + _coordinate_names(stars.shape[1]))
        for i, star in enumerate(stars):
            writer.writerow([epoch, i] + [repr(float(c)) for c in star])


def read_constellation_snapshot(path):
    """Inverse of ``write_constellation_snapshot``: returns (epoch, stars)."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: snapshot has no star rows")
    dim = len(header) - 2
    epochs = {int(r[0]) for r in rows}
    if len(epochs) != 1:
        raise DataError(f"{path}: snapshot mixes epochs {sorted(epochs)}")
    stars = np.array([[float(c) for c in r[2:]] for r in rows])
    if stars.shape[1] != dim:
        raise DataError(f"{path}: row width does not match header")
    return epochs.pop(), stars


# ---------------------------------------------------------------------------
# synthetic benchmark data
# ---------------------------------------------------------------------------

def make_synthetic_dataset(rng: Rng, class_count: int = 40, train_per_class: int = 8,
                           test_per_class: int = 2, points: int = 2048, dim: int = 3,
                           anchors_per_class: int = 8, noise: float = 0.1):
    """Deterministic synthetic shape dataset scaled into the unit sphere.

    Each class is defined by a fixed set of anchor points; every sample
    scatters ``points`` points around randomly chosen anchors of its
    class. Returns ``(train_set, test_set)`` drawn from the same class
    definitions.
    """
    if class_count < 2 or train_per_class < 1 or test_per_class < 1:
        raise ValueError("need at least 2 classes and 1 sample per class per split")
    anchors = sample_uniform(rng, -0.7, 0.7, (class_count, anchors_per_class, dim))

    def sample_cloud(cls: int) -> np.ndarray:
        idx = rng.generator.integers(0, anchors_per_class, size=points)
        cloud = anchors[cls][idx] + noise * rng.generator.standard_normal((points, dim))
        cloud /= np.linalg.norm(cloud, axis=1).max()
        return cloud.astype(np.float32)

    def build(split: str, per_class: int) -> LabeledCloudSet:
        clouds = np.empty((class_count * per_class, points, dim), dtype=np.float32)
        labels = np.empty(class_count * per_class, dtype=np.int64)
        row = 0
        for cls in range(class_count):
            for _ in range(per_class):
                clouds[row] = sample_cloud(cls)
                labels[row] = cls
                row += 1
        return LabeledCloudSet(clouds=clouds, labels=labels, class_count=class_count,
                               split=split)

    return build("train", train_per_class), build("test", test_per_class)
