"""Manifest-driven image loading, curation and batching.

A manifest is a UTF-8 CSV with header ``path,label,dataset,split``.  Paths
are relative to the manifest's directory, labels are ``real``/``cgi``,
splits are ``train``/``val``/``test`` (or empty when a split has not been
assigned yet).  Lines starting with ``#`` are comments.

Images that fail to decode are quarantined: recorded with a reason and
skipped, never silently dropped and never fatal on their own.
"""

from __future__ import annotations

import csv
import io
import logging
import os
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

from .errors import DataError, InsufficientSamplesError, ManifestError, QuarantineError

logger = logging.getLogger(__name__)

LABELS = {"real": 0, "cgi": 1}
LABEL_NAMES = {v: k for k, v in LABELS.items()}
SPLITS = ("train", "val", "test")
HEADER = ["path", "label", "dataset", "split"]

MEAN = np.array([0.485, 0.456, 0.406])
STD = np.array([0.229, 0.224, 0.225])


@dataclass(frozen=True)
class Sample:
    path: str
    label: int
    dataset: str
    split: str | None = None

    def __post_init__(self):
        if not self.path:
            raise ManifestError("sample path must be non-empty")
        if self.label not in LABEL_NAMES:
            raise ManifestError(f"label must be 0 (real) or 1 (cgi), got {self.label!r}")
        if self.split is not None and self.split not in SPLITS:
            raise ManifestError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass
class DatasetManifest:
    samples: list[Sample]
    root: Path = field(default_factory=Path)
    quarantine: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self):
        seen = set()
        for s in self.samples:
            if s.path in seen:
                raise ManifestError(f"duplicate path {s.path!r}")
            seen.add(s.path)

    def __len__(self) -> int:
        return len(self.samples)

    def class_counts(self, split: str | None = None) -> dict[str, int]:
        c = Counter(LABEL_NAMES[s.label] for s in self.samples if split is None or s.split == split)
        return {name: c.get(name, 0) for name in LABELS}

    def dataset_counts(self) -> dict[str, int]:
        return dict(sorted(Counter(s.dataset for s in self.samples).items()))

    @property
    def datasets(self) -> list[str]:
        return sorted({s.dataset for s in self.samples})

    def subset(self, split: str | None = None, dataset: str | None = None) -> "DatasetManifest":
        keep = [
            s
            for s in self.samples
            if (split is None or s.split == split) and (dataset is None or s.dataset == dataset)
        ]
        return DatasetManifest(keep, self.root, list(self.quarantine))

    def resolve(self, sample: Sample) -> Path:
        return self.root / sample.path

    def quarantined_paths(self) -> set[str]:
        return {p for p, _ in self.quarantine}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for s in self.samples:
            w.writerow([s.path, LABEL_NAMES[s.label], s.dataset, s.split or ""])
        return buf.getvalue()

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv(), encoding="utf-8")
        return path


def _rebase(samples: Sequence[Sample], src_root: Path, dst_root: Path) -> list[Sample]:
    if src_root.resolve() == dst_root.resolve():
        return list(samples)
    out = []
    for s in samples:
        rel = os.path.relpath((src_root / s.path).resolve(), dst_root.resolve())
        out.append(replace(s, path=Path(rel).as_posix()))
    return out


def merge_manifests(manifests: Sequence[DatasetManifest], root) -> DatasetManifest:
    """Union of manifests with paths rewritten relative to ``root``."""
    root = Path(root)
    samples: list[Sample] = []
    quarantine: list[tuple[str, str]] = []
    for m in manifests:
        samples.extend(_rebase(m.samples, m.root, root))
        for p, reason in m.quarantine:
            quarantine.append((_rebase([Sample(p, 0, "q")], m.root, root)[0].path, reason))
    return DatasetManifest(samples, root, quarantine)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    text = path.read_text(encoding="utf-8")
    rows = [(i, line) for i, line in enumerate(text.splitlines(), start=1) if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise ManifestError(f"{path}: empty manifest (missing header)")
    header = next(csv.reader([rows[0][1]]))
    if [h.strip() for h in header] != HEADER:
        raise ManifestError(f"{path}: header must be {','.join(HEADER)}, got {rows[0][1]!r}")
    samples = []
    seen: dict[str, int] = {}
    for lineno, line in rows[1:]:
        fields = [f.strip() for f in next(csv.reader([line]))]
        if len(fields) != 4:
            raise ManifestError(f"{path}: row {lineno}: expected 4 fields, got {len(fields)}")
        rel, label, dataset, split = fields
        if label not in LABELS:
            raise ManifestError(f"{path}: row {lineno}: unknown label {label!r} (expected real or cgi)")
        if split and split not in SPLITS:
            raise ManifestError(f"{path}: row {lineno}: unknown split {split!r} (expected train, val or test)")
        if not rel:
            raise ManifestError(f"{path}: row {lineno}: empty path")
        if not dataset:
            raise ManifestError(f"{path}: row {lineno}: empty dataset id")
        if rel in seen:
            raise ManifestError(f"{path}: row {lineno}: duplicate path {rel!r} (first seen on row {seen[rel]})")
        seen[rel] = lineno
        samples.append(Sample(rel, LABELS[label], dataset, split or None))
    return DatasetManifest(samples, path.parent)


# ---------------------------------------------------------------- pixels


def decode_image(path) -> np.ndarray:
    """Decode to float64 (3, H, W) in [0, 1]; raises QuarantineError on failure."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGBA", "LA", "P", "PA"):
                im = im.convert("RGBA").convert("RGB")
            elif im.mode != "RGB":
                im = im.convert("L").convert("RGB") if im.mode in ("L", "1", "I", "I;16", "F") else im.convert("RGB")
            arr = np.asarray(im, dtype=np.uint8)
    except FileNotFoundError:
        raise QuarantineError(path, "missing file") from None
    except Exception as exc:  # PIL raises a zoo of types for damaged files
        raise QuarantineError(path, f"undecodable: {type(exc).__name__}: {exc}") from None
    if arr.ndim != 3 or arr.shape[2] != 3 or 0 in arr.shape:
        raise QuarantineError(path, f"unexpected decoded shape {arr.shape}")
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def _axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, out: int) -> np.ndarray:
    """Bilinear resize of (C, H, W) to (C, out, out) with half-pixel centres."""
    img = np.asarray(img, dtype=np.float64)
    _, h, w = img.shape
    if h < 1 or w < 1 or out < 1:
        raise ValueError(f"cannot resize {img.shape} to {out}")
    if h == out and w == out:
        return img.copy()
    lo, hi, fr = _axis_weights(h, out)
    rows = img[:, lo, :] * (1.0 - fr)[None, :, None] + img[:, hi, :] * fr[None, :, None]
    lo, hi, fr = _axis_weights(w, out)
    return rows[:, :, lo] * (1.0 - fr)[None, None, :] + rows[:, :, hi] * fr[None, None, :]


def normalize(img: np.ndarray) -> np.ndarray:
    return (np.asarray(img, dtype=np.float64) - MEAN[:, None, None]) / STD[:, None, None]


def denormalize(img: np.ndarray) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) * STD[:, None, None] + MEAN[:, None, None]


def preprocess(path, size: int) -> np.ndarray:
    return normalize(resize_bilinear(decode_image(path), size))


# ---------------------------------------------------------------- curation


def balance_classes(manifest: DatasetManifest, per_class: int, seed: int) -> DatasetManifest:
    """Uniformly subsample exactly ``per_class`` usable samples of each class.

    Quarantined samples are excluded first.  Selected samples keep their
    manifest order.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    bad = manifest.quarantined_paths()
    usable = [i for i, s in enumerate(manifest.samples) if s.path not in bad]
    by_class = {lab: [i for i in usable if manifest.samples[i].label == lab] for lab in LABEL_NAMES}
    available = {LABEL_NAMES[lab]: len(ix) for lab, ix in by_class.items()}
    short = {k: v for k, v in available.items() if v < per_class}
    if short:
        raise InsufficientSamplesError(
            f"cannot balance to {per_class} per class; available: "
            + ", ".join(f"{k}={v}" for k, v in available.items()),
            available,
        )
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for lab in sorted(by_class):
        idx = np.array(by_class[lab])
        chosen.extend(rng.choice(idx, size=per_class, replace=False).tolist())
    chosen.sort()
    return DatasetManifest([manifest.samples[i] for i in chosen], manifest.root, list(manifest.quarantine))


def build_splits(
    manifest: DatasetManifest,
    ratios: Sequence[float] = (0.7, 0.15, 0.15),
    seed: int = 0,
    stratify: Sequence[str] = ("dataset", "label"),
) -> DatasetManifest:
    """Assign train/val/test per stratum.

    Within a stratum of ``n`` samples, val and test receive
    ``floor(n * r + 0.5)`` samples each and train gets the rest.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    keys = sorted({tuple(getattr(s, k) for k in stratify) for s in manifest.samples})
    assigned = list(manifest.samples)
    for k_index, key in enumerate(keys):
        idx = [i for i, s in enumerate(manifest.samples) if tuple(getattr(s, k) for k in stratify) == key]
        n = len(idx)
        if n < 3:
            names = ", ".join(f"{k}={v}" for k, v in zip(stratify, key))
            raise InsufficientSamplesError(f"stratum ({names}) has {n} sample(s); need at least 3 to split", {str(key): n})
        n_val = int(np.floor(n * ratios[1] + 0.5))
        n_test = int(np.floor(n * ratios[2] + 0.5))
        n_train = n - n_val - n_test
        if n_train < 0:
            raise ValueError(f"ratios {ratios} leave no room for train in a stratum of {n}")
        order = np.random.default_rng([seed, k_index]).permutation(n)
        for rank, pos in enumerate(order):
            split = "train" if rank < n_train else ("val" if rank < n_train + n_val else "test")
            i = idx[pos]
            assigned[i] = replace(assigned[i], split=split)
    return DatasetManifest(assigned, manifest.root, list(manifest.quarantine))


# ---------------------------------------------------------------- synthetic fixture


def _real_image(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    base = rng.uniform(0.3, 0.7, size=3)
    theta = rng.uniform(0, 2 * np.pi)
    ramp = np.cos(theta) * (xx - 0.5) + np.sin(theta) * (yy - 0.5)
    slope = rng.uniform(0.1, 0.3, size=3) * rng.choice([-1, 1], size=3)
    freq = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0, 2 * np.pi)
    wave = 0.08 * np.sin(2 * np.pi * freq * (xx + yy) + phase)
    img = base[:, None, None] + slope[:, None, None] * ramp[None] + wave[None]
    img = img + rng.normal(0.0, 0.04, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def _cgi_image(rng: np.random.Generator, size: int) -> np.ndarray:
    palette = rng.choice([0.0, 1.0], size=(4, 3)) + rng.uniform(-0.05, 0.05, size=(4, 3))
    cell = int(rng.integers(2, max(3, size // 4) + 1))
    yy, xx = np.mgrid[0:size, 0:size]
    ox, oy = rng.integers(0, cell, size=2)
    checker = (((xx + ox) // cell + (yy + oy) // cell) % 2).astype(np.int64)
    img = palette[checker].transpose(2, 0, 1)
    for _ in range(int(rng.integers(1, 4))):
        x0, y0 = rng.integers(0, size, size=2)
        w, h = rng.integers(size // 6 + 1, size // 2 + 2, size=2)
        img[:, y0 : y0 + h, x0 : x0 + w] = palette[int(rng.integers(2, 4))][:, None, None]
    return img


def _to_png(img: np.ndarray, path: Path) -> None:
    arr = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG", optimize=False)


def make_synthetic_fixture(
    out_dir,
    n_per_class: int,
    image_size: int = 32,
    seed: int = 0,
    dataset: str = "FIX",
    ratios: Sequence[float] = (0.7, 0.15, 0.15),
) -> DatasetManifest:
    """Write a two-class PNG fixture plus ``manifest.csv`` into ``out_dir``.

    "real" images are smooth colour ramps with a low-frequency wave and
    sensor-like Gaussian noise; "cgi" images are flat-shaded checkerboards
    with hard-edged rectangles and no noise.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if image_size < 4:
        raise ValueError("image_size must be >= 4")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    samples = []
    for label, name in sorted(LABEL_NAMES.items()):
        render = _real_image if name == "real" else _cgi_image
        for i in range(n_per_class):
            rng = np.random.default_rng([seed, label, i])
            rel = f"images/{name}_{i:05d}.png"
            _to_png(render(rng, image_size), out / rel)
            samples.append(Sample(rel, label, dataset))
    manifest = DatasetManifest(samples, out)
    if n_per_class >= 3:
        manifest = build_splits(manifest, ratios, seed)
    manifest.save(out / "manifest.csv")
    return manifest


# ---------------------------------------------------------------- batching


@dataclass
class ImageBatch:
    images: np.ndarray  # (B, 3, H, W) normalised
    labels: np.ndarray
    indices: np.ndarray  # positions in the split's sample list


@dataclass
class LoadedSplit:
    images: np.ndarray
    labels: np.ndarray
    samples: list[Sample]
    quarantine: list[tuple[str, str]]


def load_split(manifest: DatasetManifest, split: str | None, size: int, dtype="float32") -> LoadedSplit:
    """Decode, resize and normalise every usable sample of ``split``.

    ``split=None`` loads every sample.  Failures land in ``quarantine``;
    raises DataError only if nothing could be loaded.
    """
    chosen = [s for s in manifest.samples if split is None or s.split == split]
    if not chosen:
        raise DataError(f"split {split!r} is empty")
    known_bad = dict(manifest.quarantine)
    images, labels, kept, quarantine = [], [], [], []
    for s in chosen:
        if s.path in known_bad:
            quarantine.append((s.path, known_bad[s.path]))
            continue
        try:
            images.append(preprocess(manifest.resolve(s), size))
        except QuarantineError as exc:
            logger.warning("quarantined %s: %s", s.path, exc.reason)
            quarantine.append((s.path, exc.reason))
            continue
        labels.append(s.label)
        kept.append(s)
    if not kept:
        raise DataError(f"all {len(chosen)} file(s) in split {split!r} were quarantined")
    return LoadedSplit(np.stack(images).astype(dtype), np.array(labels, dtype=np.int64), kept, quarantine)


def batch_iterator(
    manifest: DatasetManifest,
    split: str | None,
    batch_size: int,
    model_input_size: int,
    shuffle_seed: int | None = None,
    quarantine: list | None = None,
    dtype="float32",
) -> Iterator[ImageBatch]:
    """Stream preprocessed batches; the final partial batch is kept.

    Skipped files are appended to ``quarantine`` when a list is given.
    """
    loaded = load_split(manifest, split, model_input_size, dtype)
    if quarantine is not None:
        quarantine.extend(loaded.quarantine)
    n = len(loaded.labels)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield ImageBatch(loaded.images[idx], loaded.labels[idx], idx)


def quarantine_csv(entries: Sequence[tuple[str, str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["path", "reason"])
    for path, reason in entries:
        w.writerow([path, reason])
    return buf.getvalue()
