"""Dataset construction: synthetic 2D families, digit images, CSV ingestion.

Synthetic generation draws exclusively from the pinned PRNG (see rng.py) in a
documented order, so a fixed spec reproduces bit-identical matrices anywhere.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numlin
from .errors import FormatError, InputDomainError
from .rng import Rng

FAMILIES = ("gaussian", "double_gaussian", "banana", "diagonal")

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    """A finite m-by-n sample matrix with optional labels.

    Attributes:
        x: Sample matrix, one row per sample.
        labels: Optional integer labels, length m.
        role: "train" or "test".
        feature_names: Optional column names, length n.
    """

    x: np.ndarray
    labels: np.ndarray | None = None
    role: str = "train"
    feature_names: list[str] | None = None

    def __post_init__(self) -> None:
        self.x = numlin.as_matrix(self.x, "dataset")
        if self.role not in ("train", "test"):
            raise InputDomainError(f"role must be 'train' or 'test', got {self.role!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.x.shape[0],):
                raise InputDomainError(
                    f"labels length {self.labels.shape} does not match {self.x.shape[0]} samples"
                )
        if self.feature_names is not None and len(self.feature_names) != self.x.shape[1]:
            raise InputDomainError(
                f"{len(self.feature_names)} feature names for {self.x.shape[1]} columns"
            )

    @property
    def num_samples(self) -> int:
        return self.x.shape[0]

    @property
    def num_features(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic dataset.

    Families:
        gaussian: one 2D Gaussian (means[0], covariances[0]).
        double_gaussian: two 2D Gaussians, samples_per_component each.
        banana: x1 ~ Uniform(x_range), x2 = x1^2 + Normal(0, noise_scale^2).
        diagonal: rows alpha_i * (1, 1), alpha_i ~ Uniform(alpha_range).
    """

    family: str
    samples_per_component: int = 100
    seed: int = 0
    means: tuple[tuple[float, ...], ...] | None = None
    covariances: tuple[tuple[tuple[float, ...], ...], ...] | None = None
    noise_scale: float = 0.1
    x_range: tuple[float, float] = (-2.0, 2.0)
    alpha_range: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise InputDomainError(
                f"unknown family {self.family!r}, expected one of {FAMILIES}"
            )
        if self.samples_per_component < 1:
            raise InputDomainError("samples_per_component must be >= 1")

    def resolved_means(self) -> list[np.ndarray]:
        if self.means is not None:
            return [np.asarray(m, dtype=np.float64) for m in self.means]
        if self.family == "gaussian":
            return [np.zeros(2)]
        if self.family == "double_gaussian":
            return [np.array([-3.0, -3.0]), np.array([3.0, 3.0])]
        return []

    def resolved_covariances(self) -> list[np.ndarray]:
        means = self.resolved_means()
        if self.covariances is not None:
            covs = [np.asarray(c, dtype=np.float64) for c in self.covariances]
        else:
            covs = [np.eye(len(m)) for m in means]
        if len(covs) != len(means):
            raise InputDomainError(
                f"{len(covs)} covariances for {len(means)} component means"
            )
        return covs

    def to_json_dict(self) -> dict:
        d = {
            "family": self.family,
            "samples_per_component": self.samples_per_component,
            "seed": self.seed,
        }
        if self.family in ("gaussian", "double_gaussian"):
            d["means"] = [list(m) for m in self.resolved_means()]
            d["covariances"] = [c.tolist() for c in self.resolved_covariances()]
        elif self.family == "banana":
            d["x_range"] = list(self.x_range)
            d["noise_scale"] = self.noise_scale
        elif self.family == "diagonal":
            d["alpha_range"] = list(self.alpha_range)
        return d


def _covariance_factor(cov: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root, so factor @ factor.T == cov."""
    cov = numlin.as_matrix(cov, "covariance")
    if cov.shape[0] != cov.shape[1]:
        raise InputDomainError(f"covariance must be square, got {cov.shape}")
    if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
        raise InputDomainError("covariance must be symmetric")
    res = numlin.svd(cov)
    # for symmetric PSD input, u spans the eigenvectors and sigma the eigenvalues
    if np.max(np.abs(res.u @ np.diag(res.sigma) @ res.u.T - cov)) > 1e-8 * (
        1.0 + np.max(np.abs(cov))
    ):
        raise InputDomainError("covariance is not positive semi-definite")
    return res.u * np.sqrt(res.sigma)


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw a dataset per the spec; bit-identical for identical specs.

    Draw order: components in declaration order, samples within a component
    in order, coordinates within a sample in order.
    """
    rng = Rng(spec.seed)
    n = spec.samples_per_component

    if spec.family in ("gaussian", "double_gaussian"):
        means = spec.resolved_means()
        factors = [_covariance_factor(c) for c in spec.resolved_covariances()]
        rows = []
        labels = []
        for comp, (mean, factor) in enumerate(zip(means, factors)):
            for _ in range(n):
                z = rng.normals((mean.shape[0],))
                rows.append(mean + factor @ z)
                labels.append(comp)
        x = np.vstack(rows)
        lab = np.array(labels) if len(means) > 1 else None
        return Dataset(x=x, labels=lab, role="train")

    if spec.family == "banana":
        lo, hi = spec.x_range
        if not lo < hi:
            raise InputDomainError(f"x_range must be increasing, got {spec.x_range}")
        if spec.noise_scale < 0:
            raise InputDomainError("noise_scale must be >= 0")
        rows = np.empty((n, 2))
        for i in range(n):
            x1 = rng.uniform(lo, hi)
            rows[i, 0] = x1
            rows[i, 1] = x1 * x1 + spec.noise_scale * rng.normal()
        return Dataset(x=rows, role="train")

    # diagonal: every sample occupies the line spanned by (1, 1)
    lo, hi = spec.alpha_range
    if not lo < hi:
        raise InputDomainError(f"alpha_range must be increasing, got {spec.alpha_range}")
    rows = np.empty((n, 2))
    for i in range(n):
        alpha = rng.uniform(lo, hi)
        rows[i, 0] = alpha
        rows[i, 1] = alpha
    return Dataset(x=rows, role="train")


def _read_be32(data: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(data):
        raise FormatError(f"{path}: truncated at byte offset {offset}, expected 32-bit word")
    return struct.unpack_from(">I", data, offset)[0]


def load_mnist(
    images_path,
    labels_path,
    keep_digits: set[int] | None = None,
    max_per_digit: int | None = None,
    role: str = "train",
) -> Dataset:
    """Load an IDX image/label file pair as flat rows scaled to [0, 1].

    Rows keep file order. keep_digits filters labels; max_per_digit caps each
    retained digit, counting in file order.
    """
    img_bytes = Path(images_path).read_bytes()
    lab_bytes = Path(labels_path).read_bytes()

    magic = _read_be32(img_bytes, 0, str(images_path))
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(
            f"{images_path}: bad magic 0x{magic:08x} at offset 0, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    count = _read_be32(img_bytes, 4, str(images_path))
    rows = _read_be32(img_bytes, 8, str(images_path))
    cols = _read_be32(img_bytes, 12, str(images_path))
    if len(img_bytes) != 16 + count * rows * cols:
        raise FormatError(
            f"{images_path}: expected {16 + count * rows * cols} bytes for "
            f"{count} images of {rows}x{cols}, found {len(img_bytes)} (pixel data at offset 16)"
        )

    lab_magic = _read_be32(lab_bytes, 0, str(labels_path))
    if lab_magic != IDX_LABELS_MAGIC:
        raise FormatError(
            f"{labels_path}: bad magic 0x{lab_magic:08x} at offset 0, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    lab_count = _read_be32(lab_bytes, 4, str(labels_path))
    if len(lab_bytes) != 8 + lab_count:
        raise FormatError(
            f"{labels_path}: expected {8 + lab_count} bytes for {lab_count} labels, "
            f"found {len(lab_bytes)} (label data at offset 8)"
        )
    if lab_count != count:
        raise FormatError(
            f"label count {lab_count} does not match image count {count} "
            f"({labels_path} vs {images_path})"
        )

    pixels = np.frombuffer(img_bytes, dtype=np.uint8, offset=16).reshape(count, rows * cols)
    labels = np.frombuffer(lab_bytes, dtype=np.uint8, offset=8)

    taken = []
    per_digit: dict[int, int] = {}
    for i in range(count):
        digit = int(labels[i])
        if keep_digits is not None and digit not in keep_digits:
            continue
        if max_per_digit is not None:
            if per_digit.get(digit, 0) >= max_per_digit:
                continue
            per_digit[digit] = per_digit.get(digit, 0) + 1
        taken.append(i)
    if not taken:
        raise InputDomainError("no samples left after digit filtering")

    x = pixels[taken].astype(np.float64) / 255.0
    return Dataset(x=x, labels=labels[taken].astype(np.int64), role=role)


def save_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    """Write images (m, h, w) uint8 and labels (m,) uint8 as IDX file pairs."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    if images.ndim != 3 or labels.shape != (images.shape[0],):
        raise InputDomainError("expected images (m, h, w) and labels (m,)")
    m, h, w = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, m, h, w))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, m))
        f.write(labels.tobytes())


def load_csv(path, has_header: bool = False, role: str = "train") -> Dataset:
    """Read a rectangular numeric CSV ('.' decimal point, UTF-8)."""
    names: list[str] | None = None
    rows: list[list[float]] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        for lineno, record in enumerate(reader, start=1):
            if not record:
                continue
            if has_header and names is None and not rows:
                names = [c.strip() for c in record]
                continue
            try:
                values = [float(c) for c in record]
            except ValueError as exc:
                raise FormatError(f"{path}: non-numeric cell in row {lineno}: {exc}") from None
            if not all(np.isfinite(v) for v in values):
                raise FormatError(f"{path}: non-finite value in row {lineno}")
            if rows and len(values) != len(rows[0]):
                raise FormatError(
                    f"{path}: row {lineno} has {len(values)} cells, expected {len(rows[0])}"
                )
            rows.append(values)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    if names is not None and len(names) != len(rows[0]):
        raise FormatError(
            f"{path}: header has {len(names)} names for {len(rows[0])} columns"
        )
    return Dataset(x=np.array(rows, dtype=np.float64), role=role, feature_names=names)


def save_csv(dataset: Dataset, path) -> None:
    """Write a dataset as CSV with full-precision decimal floats."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        if dataset.feature_names is not None:
            f.write(",".join(dataset.feature_names) + "\n")
        for row in dataset.x:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def standardization_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and population std; zero-variance columns get std 1."""
    xm = numlin.as_matrix(x, "data")
    mean = xm.mean(axis=0)
    std = xm.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return mean, std
