"""Datasets: binary image batches, augmentation, resizing policies,
shape-bucketed batching, and deterministic synthetic sets.

Image samples are (H, W, C) float32; sequence samples are (L, F). The
binary image-batch format is 3073-byte records: one label byte then 3072
pixel bytes as three 1024-byte channel planes, row-major.
"""

from __future__ import annotations

import csv
import glob
import json
import math
import os
from dataclasses import dataclass

import cv2
import numpy as np

from . import tensor
from .errors import ConfigurationError, DomainError, FormatError

__all__ = [
    "Sample",
    "ShapeBucket",
    "RECORD_BYTES",
    "decode_record",
    "encode_record",
    "write_image_batch",
    "load_cifar10",
    "hflip",
    "shift_crop",
    "augment",
    "resize_wrap",
    "resize_maxside",
    "synth_varsize",
    "synth_image_batches",
    "synth_feature_frames",
    "write_feature_frames_csv",
    "load_feature_frames",
    "bucket_batches",
    "save_dataset",
    "load_dataset",
]

IMAGE_EDGE = 32
RECORD_BYTES = 1 + 3 * IMAGE_EDGE * IMAGE_EDGE  # 3073


@dataclass
class Sample:
    features: np.ndarray
    label: int


@dataclass
class ShapeBucket:
    """Indices of same-shape samples forming one micro-batch."""

    shape: tuple[int, ...]
    indices: list[int]


def validate_samples(samples: list[Sample], num_classes: int) -> None:
    for i, s in enumerate(samples):
        if not (0 <= s.label < num_classes):
            raise DomainError(f"sample {i}: label {s.label} outside 0..{num_classes - 1}")
        if not np.isfinite(s.features).all():
            raise DomainError(f"sample {i}: non-finite feature values")


# Binary image batches


def decode_record(buf: bytes) -> tuple[int, np.ndarray]:
    """One 3073-byte record -> (label, uint8 image (32, 32, 3))."""
    if len(buf) != RECORD_BYTES:
        raise FormatError(f"record is {len(buf)} bytes, expected {RECORD_BYTES}")
    label = buf[0]
    planes = np.frombuffer(buf, dtype=np.uint8, offset=1).reshape(3, IMAGE_EDGE, IMAGE_EDGE)
    return int(label), planes.transpose(1, 2, 0).copy()


def encode_record(label: int, image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.shape != (IMAGE_EDGE, IMAGE_EDGE, 3) or image.dtype != np.uint8:
        raise FormatError(f"expected uint8 (32, 32, 3) image, got {image.dtype} {image.shape}")
    if not 0 <= int(label) <= 255:
        raise FormatError(f"label {label} does not fit one byte")
    return bytes([int(label)]) + image.transpose(2, 0, 1).tobytes()


def write_image_batch(path: str, images: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        for img, lab in zip(images, labels):
            f.write(encode_record(int(lab), img))


def _read_batch_file(path: str) -> tuple[list[int], list[np.ndarray]]:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) == 0 or len(blob) % RECORD_BYTES != 0:
        offset = len(blob) - (len(blob) % RECORD_BYTES)
        raise FormatError(
            f"{path}: length {len(blob)} is not a whole number of "
            f"{RECORD_BYTES}-byte records (truncated at byte offset {offset})"
        )
    labels, images = [], []
    for start in range(0, len(blob), RECORD_BYTES):
        label, img = decode_record(blob[start : start + RECORD_BYTES])
        labels.append(label)
        images.append(img)
    return labels, images


def load_cifar10(
    path: str, max_train: int | None = None, max_test: int | None = None
) -> tuple[list[Sample], list[Sample]]:
    """Read binary batches under `path`, scale to [0,1], then standardize
    each channel with statistics of the (possibly subset) training split.
    Subsets take the first N records in file order."""
    train_files = sorted(glob.glob(os.path.join(path, "data_batch_*.bin")))
    test_file = os.path.join(path, "test_batch.bin")
    if not train_files or not os.path.exists(test_file):
        raise ConfigurationError(
            f"dataset path {path!r} lacks data_batch_*.bin / test_batch.bin files"
        )
    train_raw: list[tuple[int, np.ndarray]] = []
    for fpath in train_files:
        if max_train is not None and len(train_raw) >= max_train:
            break
        labels, images = _read_batch_file(fpath)
        train_raw.extend(zip(labels, images))
    if max_train is not None:
        train_raw = train_raw[:max_train]
    labels, images = _read_batch_file(test_file)
    test_raw = list(zip(labels, images))[: max_test if max_test is not None else None]

    train_px = np.stack([img for _, img in train_raw]).astype(np.float32) / 255.0
    mean = train_px.mean(axis=(0, 1, 2))
    std = np.maximum(train_px.std(axis=(0, 1, 2)), 1e-6)
    train = [
        Sample(((img.astype(np.float32) / 255.0) - mean) / std, lab) for lab, img in train_raw
    ]
    test = [
        Sample(((img.astype(np.float32) / 255.0) - mean) / std, lab) for lab, img in test_raw
    ]
    validate_samples(train, 10)
    validate_samples(test, 10)
    return train, test


# Augmentation: mirror plus shift. Pad grows with the image so the CIFAR
# edge gives the usual 4 pixels per side.


def hflip(features: np.ndarray) -> np.ndarray:
    return features[:, ::-1].copy()


def shift_crop(features: np.ndarray, oy: int, ox: int, pad_y: int, pad_x: int) -> np.ndarray:
    h, w = features.shape[:2]
    padded = np.pad(features, ((pad_y, pad_y), (pad_x, pad_x), (0, 0)))
    return padded[oy : oy + h, ox : ox + w].copy()


def augment(sample: Sample, rng: np.random.Generator) -> Sample:
    f = sample.features
    if rng.random() < 0.5:
        f = hflip(f)
    pad_y = math.ceil(f.shape[0] / 8)
    pad_x = math.ceil(f.shape[1] / 8)
    oy = int(rng.integers(0, 2 * pad_y + 1))
    ox = int(rng.integers(0, 2 * pad_x + 1))
    return Sample(shift_crop(f, oy, ox, pad_y, pad_x), sample.label)


def augment_batch(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Mirror+shift for a same-shape stack (B, H, W, C): one pad and one
    gather instead of per-sample padding, same policy as ``augment``."""
    B, H, W = x.shape[:3]
    flip = rng.random(B) < 0.5
    x = np.where(flip[:, None, None, None], x[:, :, ::-1], x)
    pad_y = math.ceil(H / 8)
    pad_x = math.ceil(W / 8)
    oy = rng.integers(0, 2 * pad_y + 1, size=B)
    ox = rng.integers(0, 2 * pad_x + 1, size=B)
    padded = np.pad(x, ((0, 0), (pad_y, pad_y), (pad_x, pad_x), (0, 0)))
    rows = oy[:, None, None] + np.arange(H)[None, :, None]
    cols = ox[:, None, None] + np.arange(W)[None, None, :]
    return padded[np.arange(B)[:, None, None], rows, cols]


# Resizing policies


def _check_extent(features: np.ndarray) -> None:
    if features.ndim != 3 or features.shape[0] < 1 or features.shape[1] < 1:
        raise DomainError(f"cannot resize degenerate image of shape {features.shape}")


def resize_wrap(sample: Sample, target: int) -> Sample:
    """Bilinear resample to target x target, aspect ratio discarded."""
    _check_extent(sample.features)
    out = cv2.resize(sample.features, (target, target), interpolation=cv2.INTER_LINEAR)
    if out.ndim == 2:
        out = out[:, :, None]
    return Sample(out.astype(sample.features.dtype, copy=False), sample.label)


def resize_maxside(sample: Sample, target: int) -> Sample:
    """Bilinear resample so the larger side equals target, aspect kept."""
    _check_extent(sample.features)
    h, w = sample.features.shape[:2]
    if h >= w:
        nh, nw = target, int(round(w * target / h))
    else:
        nh, nw = int(round(h * target / w)), target
    out = cv2.resize(sample.features, (max(nw, 1), max(nh, 1)), interpolation=cv2.INTER_LINEAR)
    if out.ndim == 2:
        out = out[:, :, None]
    return Sample(out.astype(sample.features.dtype, copy=False), sample.label)


# Synthetic image sets. Classes are oriented gratings (plus a coarse/fine
# frequency split when more orientations would crowd), so the pattern is
# decidable at any spatial scale.


def _grating(h: int, w: int, klass: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    if num_classes > 5:
        orientations = (num_classes + 1) // 2
        theta = np.pi * (klass % orientations) / orientations
        freq = 2.5 if klass < orientations else 5.0
    else:
        theta = np.pi * klass / num_classes
        freq = 3.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u = (xx / w) * np.cos(theta) + (yy / h) * np.sin(theta)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    img = 0.5 + 0.4 * np.sin(2.0 * np.pi * freq * u + phase)
    img = np.repeat(img[:, :, None], 3, axis=2)
    img += rng.normal(0.0, 0.08, size=img.shape)
    return np.clip(img, 0.0, 1.0)


_SPREAD = [(24, 24), (64, 64), (32, 48), (48, 32), (40, 40), (56, 28), (28, 56), (64, 24)]


def synth_varsize(seed: int, n: int, num_classes: int = 4) -> list[Sample]:
    """n mixed-extent grating images, extents in 24..64 per axis, labels
    round-robin. The first few shapes come from a fixed spread so small sets
    still contain distinct shapes."""
    rng = np.random.default_rng([seed, 11])
    out = []
    for i in range(n):
        if i < len(_SPREAD):
            h, w = _SPREAD[i]
        else:
            h, w = (int(v) for v in rng.integers(24, 65, size=2))
        label = i % num_classes
        img = _grating(h, w, label, num_classes, rng) - 0.5
        out.append(Sample(img.astype(np.float32), label))
    return out


def synth_image_batches(
    directory: str, seed: int, n_train: int, n_test: int, num_classes: int = 10
) -> None:
    """Write grating images as binary batch files (data_batch_1.bin,
    test_batch.bin) so the batch loader path can run without a downloaded
    image corpus."""
    rng = np.random.default_rng([seed, 23])
    os.makedirs(directory, exist_ok=True)

    def make(n):
        imgs = np.empty((n, IMAGE_EDGE, IMAGE_EDGE, 3), dtype=np.uint8)
        labs = np.empty(n, dtype=np.uint8)
        for i in range(n):
            labs[i] = i % num_classes
            img = _grating(IMAGE_EDGE, IMAGE_EDGE, int(labs[i]), num_classes, rng)
            imgs[i] = np.round(img * 255.0).astype(np.uint8)
        return imgs, labs

    imgs, labs = make(n_train)
    write_image_batch(os.path.join(directory, "data_batch_1.bin"), imgs, labs)
    imgs, labs = make(n_test)
    write_image_batch(os.path.join(directory, "test_batch.bin"), imgs, labs)


# Synthetic feature frames: each class is a spectral bump at a class-specific
# bin, drifting at a class-specific rate, over a variable number of frames.

NUM_FEATURES = 40


def synth_feature_frames(
    seed: int, per_class: int, num_classes: int = 30, min_len: int = 80, max_len: int = 110
) -> list[Sample]:
    rng = np.random.default_rng([seed, 37])
    out = []
    for label in range(num_classes):
        center = 2.0 + (label % 10) * 3.8
        rate = 0.5 + (label // 10) * 1.0
        for _ in range(per_class):
            L = int(rng.integers(min_len, max_len + 1))
            t = np.arange(L, dtype=np.float64)[:, None] / 100.0
            bins = np.arange(NUM_FEATURES, dtype=np.float64)[None, :]
            drift = center + 4.0 * np.sin(2.0 * np.pi * rate * t)
            env = np.exp(-0.5 * ((bins - drift) / 2.5) ** 2)
            mat = env + rng.normal(0.0, 0.05, size=env.shape)
            out.append(Sample(mat.astype(np.float32), label))
    return out


def write_feature_frames_csv(samples: list[Sample], directory: str) -> None:
    """Lay samples out as class-named subdirectories of CSV files, one row
    per frame, 40 columns."""
    os.makedirs(directory, exist_ok=True)
    counters: dict[int, int] = {}
    for s in samples:
        sub = os.path.join(directory, f"class{s.label:02d}")
        os.makedirs(sub, exist_ok=True)
        k = counters.get(s.label, 0)
        counters[s.label] = k + 1
        with open(os.path.join(sub, f"utt{k:04d}.csv"), "w", newline="") as f:
            writer = csv.writer(f)
            for row in s.features:
                writer.writerow([f"{v:.6f}" for v in row])


def load_feature_frames(path: str) -> tuple[list[Sample], list[str]]:
    """Read class-per-subdirectory CSV matrices; every file must have
    exactly 40 columns. Returns (samples, class names)."""
    if not os.path.isdir(path):
        raise ConfigurationError(f"feature-frame path {path!r} is not a directory")
    class_names = sorted(
        d for d in os.listdir(path) if os.path.isdir(os.path.join(path, d))
    )
    if not class_names:
        raise ConfigurationError(f"feature-frame path {path!r} has no class subdirectories")
    samples = []
    for label, cname in enumerate(class_names):
        for fname in sorted(glob.glob(os.path.join(path, cname, "*.csv"))):
            mat = np.loadtxt(fname, delimiter=",", dtype=np.float64, ndmin=2)
            if mat.shape[1] != NUM_FEATURES:
                raise FormatError(
                    f"{fname}: expected {NUM_FEATURES} columns, got {mat.shape[1]}"
                )
            samples.append(Sample(mat.astype(np.float32), label))
    return samples, class_names


# Shape-bucketed batching


def bucket_batches(
    samples: list[Sample], batch_size: int, rng: np.random.Generator | None = None
) -> list[ShapeBucket]:
    """Partition the epoch into same-shape micro-batches of at most
    batch_size samples. With an rng, sample order and bucket order are
    shuffled; every sample lands in exactly one micro-batch either way."""
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(samples))
    if rng is not None:
        rng.shuffle(order)
    groups: dict[tuple[int, ...], list[int]] = {}
    for i in order:
        groups.setdefault(samples[i].features.shape, []).append(int(i))
    batches = [
        ShapeBucket(shape, idxs[j : j + batch_size])
        for shape, idxs in groups.items()
        for j in range(0, len(idxs), batch_size)
    ]
    if rng is not None and len(batches) > 1:
        perm = rng.permutation(len(batches))
        batches = [batches[int(k)] for k in perm]
    return batches


# Dataset persistence: one tensor file per sample plus a JSON index.


def save_dataset(samples: list[Sample], directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    index = []
    for i, s in enumerate(samples):
        fname = f"s{i:06d}.aint"
        tensor.save_tensor(os.path.join(directory, fname), s.features)
        index.append({"file": fname, "label": int(s.label)})
    with open(os.path.join(directory, "index.json"), "w") as f:
        json.dump({"samples": index}, f)


def load_dataset(directory: str) -> list[Sample]:
    path = os.path.join(directory, "index.json")
    if not os.path.exists(path):
        raise ConfigurationError(f"no dataset index at {path}")
    with open(path) as f:
        index = json.load(f)
    return [
        Sample(tensor.load_tensor(os.path.join(directory, e["file"])), int(e["label"]))
        for e in index["samples"]
    ]
