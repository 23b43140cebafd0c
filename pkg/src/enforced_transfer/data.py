"""Synthetic domain pairs, small digit domains, mixed test sets and file loaders."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_FRACTIONS = (0.7, 0.15, 0.15)
SPLITS = ("train", "val", "test")


@dataclass(eq=False)
class LabeledDataset:
    samples: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 2:
            raise ValueError("samples must be a 2-D array")
        if self.labels.shape != (self.samples.shape[0],):
            raise ValueError("samples and labels differ in length")
        if self.class_count <= 0:
            raise ValueError("class_count must be positive")
        bad = np.flatnonzero((self.labels < 0) | (self.labels >= self.class_count))
        if bad.size:
            raise ValueError(
                f"label {self.labels[bad[0]]} at index {bad[0]} outside [0, {self.class_count})"
            )

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.samples[idx], self.labels[idx], self.class_count)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and np.array_equal(self.samples, other.samples)
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(eq=False)
class DomainPair:
    source: LabeledDataset
    target: LabeledDataset
    shift_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.source.class_count != self.target.class_count:
            raise ValueError("source and target class counts differ")
        if self.source.dim != self.target.dim:
            raise ValueError("source and target sample dims differ")


@dataclass(eq=False)
class MixedTestSet:
    data: LabeledDataset
    origin: np.ndarray  # 0 = source, 1 = target
    contamination: float

    @property
    def samples(self):
        return self.data.samples

    @property
    def labels(self):
        return self.data.labels

    def __len__(self):
        return len(self.data)


SOURCE, TARGET = 0, 1


def class_centroids(class_count: int, dim: int, separation: float) -> np.ndarray:
    """Centroids on a circle in the first two dims, adjacent spacing ``separation``."""
    centroids = np.zeros((class_count, dim))
    if class_count == 1:
        return centroids
    if dim == 1:
        centroids[:, 0] = separation * (np.arange(class_count) - (class_count - 1) / 2)
        return centroids
    radius = separation / (2.0 * np.sin(np.pi / class_count))
    angles = 2.0 * np.pi * np.arange(class_count) / class_count
    centroids[:, 0] = radius * np.cos(angles)
    centroids[:, 1] = radius * np.sin(angles)
    return centroids


def gen_blobs(class_count, per_class, dim, separation, seed) -> LabeledDataset:
    if class_count <= 0 or per_class <= 0 or dim <= 0:
        raise ValueError("class_count, per_class and dim must be positive")
    rng = np.random.default_rng(seed)
    centroids = class_centroids(class_count, dim, separation)
    labels = np.repeat(np.arange(class_count), per_class)
    samples = centroids[labels] + rng.standard_normal((labels.size, dim))
    order = rng.permutation(labels.size)
    return LabeledDataset(samples[order], labels[order], class_count)


def rotation_matrix(dim: int, degrees: float) -> np.ndarray:
    rot = np.eye(dim)
    if dim >= 2:
        t = np.deg2rad(degrees)
        c, s = np.cos(t), np.sin(t)
        rot[:2, :2] = [[c, -s], [s, c]]
    return rot


def shift_domain(d: LabeledDataset, rotation_deg=0.0, translation=None,
                 noise_sigma=0.0, seed=0) -> LabeledDataset:
    """Rotate the first two dims, translate, then add Gaussian noise."""
    x = d.samples
    if rotation_deg:
        if d.dim < 2:
            raise ValueError("rotation needs at least two dims")
        x = x @ rotation_matrix(d.dim, rotation_deg).T
    if translation is not None:
        t = np.asarray(translation, dtype=np.float64)
        if t.shape != (d.dim,):
            raise ValueError(f"translation has dim {t.shape}, samples have {d.dim}")
        x = x + t
    if noise_sigma:
        x = x + noise_sigma * np.random.default_rng(seed).standard_normal(x.shape)
    return LabeledDataset(x, d.labels.copy(), d.class_count)


def make_blob_pair(class_count=4, per_class=1500, dim=8, separation=4.0,
                   rotation_deg=0.0, translation=6.0, noise_sigma=0.0,
                   seed=0) -> DomainPair:
    """Independent source and target draws; target is shifted along the first axis.

    ``translation`` may be a scalar (applied to dim 0) or a full vector.
    """
    ss = np.random.SeedSequence(seed)
    s_seed, t_seed, n_seed = (int(c.generate_state(1)[0]) for c in ss.spawn(3))
    source = gen_blobs(class_count, per_class, dim, separation, s_seed)
    raw_target = gen_blobs(class_count, per_class, dim, separation, t_seed)
    if np.ndim(translation) == 0:
        vec = np.zeros(dim)
        vec[0] = float(translation)
    else:
        vec = np.asarray(translation, dtype=np.float64)
    target = shift_domain(raw_target, rotation_deg, vec, noise_sigma, n_seed)
    spec = {
        "kind": "blobs",
        "rotation_deg": float(rotation_deg),
        "translation": vec.tolist(),
        "noise_sigma": float(noise_sigma),
    }
    return DomainPair(source, target, spec)


def rotate_images(images: np.ndarray, side: int, degrees: float) -> np.ndarray:
    from scipy.ndimage import rotate

    out = np.empty_like(images)
    for i, flat in enumerate(images):
        img = rotate(flat.reshape(side, side), degrees, reshape=False, order=1, mode="constant")
        out[i] = img.ravel()
    return out


def make_digit_pair(rotation_deg=30.0, noise_sigma=0.1, seed=0) -> DomainPair:
    """8x8 digits split in two disjoint halves: clean source, rotated + noisy target."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    x = digits.data.astype(np.float64) / 16.0
    y = digits.target.astype(np.int64)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    half = len(y) // 2
    src_idx, tgt_idx = order[:half], order[half:]
    source = LabeledDataset(x[src_idx], y[src_idx], 10)
    rotated = rotate_images(x[tgt_idx], 8, rotation_deg)
    rotated = rotated + noise_sigma * rng.standard_normal(rotated.shape)
    target = LabeledDataset(rotated, y[tgt_idx], 10)
    spec = {"kind": "digits", "rotation_deg": float(rotation_deg), "noise_sigma": float(noise_sigma)}
    return DomainPair(source, target, spec)


def split_indices(n: int, fractions=DEFAULT_FRACTIONS, seed=0) -> dict:
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (3,) or np.any(fractions < 0) or not np.isclose(fractions.sum(), 1.0):
        raise ValueError(f"fractions must be three non-negative numbers summing to 1: {fractions}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {
        "train": order[:n_train],
        "val": order[n_train:n_train + n_val],
        "test": order[n_train + n_val:],
    }


def split_dataset(d: LabeledDataset, fractions=DEFAULT_FRACTIONS, seed=0) -> dict:
    return {k: d.subset(v) for k, v in split_indices(len(d), fractions, seed).items()}


def split_pair(pair: DomainPair, fractions=DEFAULT_FRACTIONS, seed=0) -> dict:
    """Per-domain train/val/test splits, returned as one DomainPair per split."""
    ss = np.random.SeedSequence(seed).spawn(2)
    src = split_dataset(pair.source, fractions, ss[0])
    tgt = split_dataset(pair.target, fractions, ss[1])
    return {k: DomainPair(src[k], tgt[k], pair.shift_spec) for k in SPLITS}


def mix(source_pool: LabeledDataset, target_pool: LabeledDataset, n: int,
        contamination: float, seed=0) -> MixedTestSet:
    if not 0.0 <= contamination <= 1.0:
        raise ValueError(f"contamination must lie in [0, 1], got {contamination}")
    if n <= 0:
        raise ValueError("mixed set size must be positive")
    n_src = int(round(contamination * n))
    n_tgt = n - n_src
    if n_src > len(source_pool) or n_tgt > len(target_pool):
        raise ValueError(
            f"insufficient held-out samples: need {n_src} source / {n_tgt} target, "
            f"have {len(source_pool)} / {len(target_pool)}"
        )
    rng = np.random.default_rng(seed)
    si = rng.choice(len(source_pool), n_src, replace=False)
    ti = rng.choice(len(target_pool), n_tgt, replace=False)
    samples = np.concatenate([source_pool.samples[si], target_pool.samples[ti]])
    labels = np.concatenate([source_pool.labels[si], target_pool.labels[ti]])
    origin = np.concatenate([np.full(n_src, SOURCE), np.full(n_tgt, TARGET)])
    order = rng.permutation(n)
    data = LabeledDataset(samples[order], labels[order], source_pool.class_count)
    return MixedTestSet(data, origin[order], float(contamination))


def make_mixed_test(pair: DomainPair, contamination: float, n: int, seed=0,
                    fractions=DEFAULT_FRACTIONS, split="test") -> MixedTestSet:
    """Mix ``n`` held-out samples, a ``contamination`` share of them from the source."""
    if split not in ("val", "test"):
        raise ValueError(f"split must be 'val' or 'test', got {split!r}")
    if not 0.0 <= contamination <= 1.0:
        raise ValueError(f"contamination must lie in [0, 1], got {contamination}")
    held = split_pair(pair, fractions, seed)[split]
    return mix(held.source, held.target, n, contamination, seed)


# file formats --------------------------------------------------------------

_IDX_TYPES = {
    0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8",
}


class FormatError(ValueError):
    pass


def read_idx(path) -> np.ndarray:
    """Raw IDX array (big-endian header: 0, 0, type code, ndim, then dims)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code not in _IDX_TYPES:
        raise FormatError(f"{path}: bad magic number {raw[:4].hex()} at byte 0")
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise FormatError(f"{path}: truncated dimension header at byte {len(raw)}")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    dtype = np.dtype(_IDX_TYPES[dtype_code])
    expected = int(np.prod(dims)) * dtype.itemsize
    payload = raw[header_len:]
    if len(payload) < expected:
        raise FormatError(
            f"{path}: truncated payload, expected {expected} bytes from byte {header_len}, "
            f"file ends at byte {len(raw)}"
        )
    if len(payload) > expected:
        raise FormatError(f"{path}: {len(payload) - expected} trailing bytes after byte {header_len + expected}")
    return np.frombuffer(payload, dtype=dtype).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    codes = {np.dtype(v).newbyteorder("="): k for k, v in _IDX_TYPES.items()}
    arr = np.asarray(array)
    code = codes.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    header = struct.pack(">HBB", 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(header + arr.astype(_IDX_TYPES[code]).tobytes())


def load_idx(images_path, labels_path, class_count=None) -> LabeledDataset:
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if images.dtype != np.uint8:
        raise FormatError(f"{images_path}: expected unsigned byte pixels, got {images.dtype}")
    if labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{labels_path}: {labels.shape[0] if labels.ndim else 0} labels for {images.shape[0]} images"
        )
    samples = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    return LabeledDataset(samples, labels, class_count)


def load_csv(path, header=False, class_count=None) -> LabeledDataset:
    """Numeric CSV with the integer class label in the last column."""
    rows, labels = [], []
    width = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise FormatError(f"{path}: row {lineno} needs features and a label")
            elif len(row) != width:
                raise FormatError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
            try:
                values = [float(c) for c in row[:-1]]
            except ValueError:
                col = next(i for i, c in enumerate(row[:-1]) if not _is_float(c))
                raise FormatError(
                    f"{path}: non-numeric cell {row[col]!r} at row {lineno}, column {col + 1}"
                ) from None
            try:
                label = int(row[-1])
            except ValueError:
                raise FormatError(
                    f"{path}: non-integer label {row[-1]!r} at row {lineno}"
                ) from None
            if label < 0 or (class_count is not None and label >= class_count):
                raise FormatError(
                    f"{path}: label {label} at row {lineno} outside [0, {class_count})"
                )
            rows.append(values)
            labels.append(label)
    if not rows:
        raise FormatError(f"{path}: no rows")
    if class_count is None:
        class_count = max(labels) + 1
    return LabeledDataset(np.array(rows), np.array(labels), class_count)


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def save_csv(d: LabeledDataset, path, header=False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{i}" for i in range(d.dim)] + ["label"])
        for x, y in zip(d.samples, d.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
