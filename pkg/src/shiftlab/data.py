"""Dataset synthesis and ingestion.

Synthetic generators produce matched source/target pairs that differ by a
rigid transform of the inputs only (a pure covariate shift: label rule
unchanged, input marginal moved). The IDX loader reads the classic
big-endian image/label file pair used by MNIST-format corpora.
"""
from __future__ import annotations

import gzip
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyBatchError,
    IdxCountError,
    IdxMagicError,
    IdxTruncatedError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

GENERATORS = ("two_moons", "gaussian_mixture")


@dataclass
class DomainDataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int
    domain: str  # "source" | "target"
    provenance: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.features.ndim != 2:
            raise DimensionMismatchError("features must be 2-D")
        if self.labels.shape[0] != self.features.shape[0]:
            raise DimensionMismatchError("label count does not match feature rows")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features contain non-finite entries")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.n else 0


@dataclass
class ShiftSpec:
    """Recipe for a synthetic source/target pair under rigid-transform shift."""

    generator: str = "two_moons"
    n_source: int = 2000
    n_target: int = 2000
    rotation_deg: float = 30.0
    translation: tuple[float, float] = (0.5, 0.0)
    noise: float = 0.15
    num_classes: int = 2  # gaussian_mixture only
    seed: int = 0

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")
        if self.noise <= 0:
            raise ValueError("noise scale must be positive")
        if self.n_source <= 0 or self.n_target <= 0:
            raise ValueError("sample counts must be positive")


def _sample_two_moons(n: int, noise: float, rng: np.random.Generator):
    """Two interleaved half-circles: class 0 on the upper unit arc,
    class 1 on the shifted lower arc."""
    labels = rng.integers(0, 2, size=n)
    t = rng.uniform(0.0, np.pi, size=n)
    x = np.where(labels == 0, np.cos(t), 1.0 - np.cos(t))
    y = np.where(labels == 0, np.sin(t), 0.5 - np.sin(t))
    pts = np.stack([x, y], axis=1) + rng.normal(0.0, noise, size=(n, 2))
    return pts, labels


def _sample_gaussian_mixture(n: int, noise: float, k: int, rng: np.random.Generator):
    """k isotropic blobs with means spaced on a radius-2 circle."""
    labels = rng.integers(0, k, size=n)
    angles = 2.0 * np.pi * labels / k
    means = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    pts = means + rng.normal(0.0, noise, size=(n, 2))
    return pts, labels


def rigid_transform(points: np.ndarray, rotation_deg: float, translation) -> np.ndarray:
    theta = np.deg2rad(rotation_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    return points @ rot.T + np.asarray(translation, dtype=np.float64)


def gen_shifted_pair(spec: ShiftSpec) -> tuple[DomainDataset, DomainDataset]:
    """Draw source and target sets from the same labeled process, then move
    the target inputs by the spec's rotation and translation.

    Labels ride along with their points, so p(y|x) is preserved up to the
    transform: the shift is purely in the input marginal.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 11]))
    if spec.generator == "two_moons":
        src_pts, src_labels = _sample_two_moons(spec.n_source, spec.noise, rng)
        tgt_pts, tgt_labels = _sample_two_moons(spec.n_target, spec.noise, rng)
    else:
        src_pts, src_labels = _sample_gaussian_mixture(
            spec.n_source, spec.noise, spec.num_classes, rng
        )
        tgt_pts, tgt_labels = _sample_gaussian_mixture(
            spec.n_target, spec.noise, spec.num_classes, rng
        )
    tgt_pts = rigid_transform(tgt_pts, spec.rotation_deg, spec.translation)
    desc = (
        f"{spec.generator}(noise={spec.noise},seed={spec.seed})"
    )
    source = DomainDataset(src_pts, src_labels, "source", provenance=desc)
    target = DomainDataset(
        tgt_pts,
        tgt_labels,
        "target",
        provenance=f"{desc} rotated {spec.rotation_deg} deg, shifted {spec.translation}",
    )
    return source, target


# ---------------------------------------------------------------------------
# IDX ingestion


def _open_maybe_gzip(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(fh, count: int, path: Path, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise IdxTruncatedError(
            f"{path}: expected {count} more bytes for {what}, got {len(data)}"
        )
    return data


def load_idx(
    images_path: str | Path, labels_path: str | Path, domain: str = "source"
) -> DomainDataset:
    """Load an image/label IDX pair into a flat, [0,1]-scaled feature matrix."""
    images_path = Path(images_path)
    labels_path = Path(labels_path)
    with _open_maybe_gzip(images_path) as fh:
        magic, n_images, rows, cols = struct.unpack(
            ">IIII", _read_exact(fh, 16, images_path, "image header")
        )
        if magic != IDX_IMAGE_MAGIC:
            raise IdxMagicError(
                f"{images_path}: magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        payload = _read_exact(fh, n_images * rows * cols, images_path, "pixels")
    with _open_maybe_gzip(labels_path) as fh:
        magic, n_labels = struct.unpack(
            ">II", _read_exact(fh, 8, labels_path, "label header")
        )
        if magic != IDX_LABEL_MAGIC:
            raise IdxMagicError(
                f"{labels_path}: magic 0x{magic:08x}, expected 0x{IDX_LABEL_MAGIC:08x}"
            )
        label_bytes = _read_exact(fh, n_labels, labels_path, "labels")
    if n_images != n_labels:
        raise IdxCountError(
            f"{images_path} holds {n_images} images but {labels_path} holds "
            f"{n_labels} labels"
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n_images, rows * cols)
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(int)
    return DomainDataset(
        pixels.astype(np.float64) / 255.0,
        labels,
        domain,
        provenance=f"idx {rows}x{cols} images={images_path} labels={labels_path}",
    )


def idx_image_shape(dataset: DomainDataset) -> tuple[int, int]:
    m = re.match(r"idx (\d+)x(\d+) ", dataset.provenance)
    if not m:
        raise ValueError("dataset was not loaded from IDX files")
    return int(m.group(1)), int(m.group(2))


def write_idx(
    dataset: DomainDataset,
    images_path: str | Path,
    labels_path: str | Path,
    image_shape: tuple[int, int] | None = None,
) -> None:
    """Inverse of load_idx; write(load(f)) reproduces f byte for byte."""
    rows, cols = image_shape if image_shape is not None else idx_image_shape(dataset)
    if rows * cols != dataset.dim:
        raise DimensionMismatchError(
            f"image shape {rows}x{cols} does not match feature dim {dataset.dim}"
        )
    pixels = np.round(dataset.features * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, dataset.n, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, dataset.n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Normalization and splitting


@dataclass
class NormStats:
    mean: np.ndarray
    sd: np.ndarray  # floored, so dividing is always safe

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.sd

    def to_doc(self) -> dict:
        return {"mean": self.mean.tolist(), "sd": self.sd.tolist()}

    @classmethod
    def from_doc(cls, doc: dict) -> "NormStats":
        return cls(np.array(doc["mean"]), np.array(doc["sd"]))


SD_FLOOR = 1e-8


def standardize(
    reference: DomainDataset, *others: DomainDataset
) -> tuple[list[DomainDataset], NormStats]:
    """Center/scale every dataset by the reference set's per-feature stats.

    Constant columns get an SD floor, which maps them to all-zeros.
    """
    if reference.n == 0:
        raise EmptyBatchError("cannot standardize against an empty reference set")
    mean = reference.features.mean(axis=0)
    sd = reference.features.std(axis=0)
    sd = np.maximum(sd, SD_FLOOR)
    stats = NormStats(mean, sd)
    out = [
        DomainDataset(stats.apply(ds.features), ds.labels, ds.domain, ds.provenance)
        for ds in (reference, *others)
    ]
    return out, stats


def split_pool_test(
    n: int, seed: int, test_fraction: float = 1.0 / 3.0
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded permutation split: first (1 - test_fraction) as the working
    pool, the rest held out for evaluation."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 13]))
    order = rng.permutation(n)
    n_pool = n - int(round(n * test_fraction))
    return np.sort(order[:n_pool]), np.sort(order[n_pool:])
