"""Dataset ingestion, preprocessing, and train/test splitting.

Two source layouts are supported: a class-per-directory image corpus
(``root/<class_name>/<file>.png|bmp|pgm``) and the big-endian IDX container
(magic 2051 for images, 2049 for labels). Pixels are scaled to [0, 1];
images keep their source size and are resized per network at batch time.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError
from .tensor import DTYPE

IMAGE_SUFFIXES = (".png", ".bmp", ".pgm")
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Sample:
    image: np.ndarray  # [1, H, W] float32 in [0, 1]
    label: int
    source_id: str


@dataclass
class DatasetManifest:
    n_class: int
    class_names: list[str]
    train_ids: list[str]
    test_ids: list[str]
    split_seed: int

    def to_text(self, samples: list["Sample"]) -> str:
        labels = {s.source_id: s.label for s in samples}
        lines = [f"n_class={self.n_class} seed={self.split_seed}"]
        for sid in self.train_ids:
            lines.append(f"train {labels[sid]} {sid}")
        for sid in self.test_ids:
            lines.append(f"test {labels[sid]} {sid}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "DatasetManifest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise DataError("manifest is empty")
        header = lines[0].split()
        try:
            n_class = int(header[0].removeprefix("n_class="))
            seed = int(header[1].removeprefix("seed="))
        except (IndexError, ValueError) as exc:
            raise DataError(f"bad manifest header: {lines[0]!r}") from exc
        train_ids, test_ids = [], []
        for ln in lines[1:]:
            parts = ln.split(" ", 2)
            if len(parts) != 3 or parts[0] not in ("train", "test"):
                raise DataError(f"bad manifest line: {ln!r}")
            (train_ids if parts[0] == "train" else test_ids).append(parts[2])
        return DatasetManifest(n_class=n_class, class_names=[], train_ids=train_ids, test_ids=test_ids, split_seed=seed)


def load_directory_corpus(root_path) -> tuple[list[Sample], list[str]]:
    """Load ``root/<class>/<image>`` files; class index = lexicographic rank."""
    root = Path(root_path)
    if not root.is_dir():
        raise DataError(f"corpus root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"corpus root {root} has no class directories")
    samples: list[Sample] = []
    class_names = [p.name for p in class_dirs]
    for label, class_dir in enumerate(class_dirs):
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise DataError(f"class directory {class_dir.name!r} contains no images")
        for path in files:
            samples.append(
                Sample(image=_decode_image(path), label=label, source_id=f"{class_dir.name}/{path.name}")
            )
    return samples, class_names


def _decode_image(path: Path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(path) as img:
            gray = img.convert("L")
            arr = np.asarray(gray, dtype=DTYPE) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image file {path}") from exc
    return arr[None, :, :]


def load_idx(images_path, labels_path) -> list[Sample]:
    """Load an IDX image/label file pair into samples with ids ``idx/<n>``."""
    images = _read_idx_images(Path(images_path))
    labels = _read_idx_labels(Path(labels_path))
    if len(images) != len(labels):
        raise DataError(f"image count {len(images)} != label count {len(labels)}")
    return [
        Sample(image=img[None, :, :], label=int(lab), source_id=f"idx/{i}")
        for i, (img, lab) in enumerate(zip(images, labels))
    ]


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DataError(f"truncated IDX file while reading {what}")
    return buf


def _read_idx_images(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "image header"))
        if magic != IDX_IMAGES_MAGIC:
            raise DataError(f"bad IDX image magic 0x{magic:08x} in {path}")
        raw = _read_exact(f, count * rows * cols, "pixel data")
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)
    return pixels.astype(DTYPE) / 255.0


def _read_idx_labels(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count = struct.unpack(">II", _read_exact(f, 8, "label header"))
        if magic != IDX_LABELS_MAGIC:
            raise DataError(f"bad IDX label magic 0x{magic:08x} in {path}")
        raw = _read_exact(f, count, "label data")
    return np.frombuffer(raw, dtype=np.uint8)


def write_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """Write a [N, H, W] uint8 stack and its labels as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def split(samples: list[Sample], seed: int, n_class: int | None = None, class_names=None) -> DatasetManifest:
    """Stratified 2:1 split: per class, shuffle with the seed, ceil(2n/3) to train."""
    if n_class is None:
        n_class = max(s.label for s in samples) + 1
    by_class: dict[int, list[str]] = {c: [] for c in range(n_class)}
    for s in samples:
        by_class[s.label].append(s.source_id)
    rng = np.random.default_rng(seed)
    train_ids: list[str] = []
    test_ids: list[str] = []
    for c in range(n_class):
        ids = by_class[c]
        if len(ids) < 3:
            raise DataError(f"class {c} has {len(ids)} samples; the 2:1 split needs at least 3")
        order = rng.permutation(len(ids))
        cut = math.ceil(2 * len(ids) / 3)
        train_ids.extend(ids[i] for i in order[:cut])
        test_ids.extend(ids[i] for i in order[cut:])
    return DatasetManifest(
        n_class=n_class,
        class_names=list(class_names) if class_names else [],
        train_ids=train_ids,
        test_ids=test_ids,
        split_seed=seed,
    )


def apply_manifest(samples: list[Sample], manifest: DatasetManifest) -> tuple[list[Sample], list[Sample]]:
    by_id = {s.source_id: s for s in samples}
    try:
        train = [by_id[i] for i in manifest.train_ids]
        test = [by_id[i] for i in manifest.test_ids]
    except KeyError as exc:
        raise DataError(f"manifest references unknown sample id {exc.args[0]!r}") from None
    return train, test


def resize(image: np.ndarray, target_side: int) -> np.ndarray:
    """Bilinear resample to a square of ``target_side`` pixels.

    Sample positions anchor the image corners, so same-size resizing is the
    identity. Values stay in [0, 1] (interpolation cannot overshoot).
    """
    squeeze = image.ndim == 3
    img = image[0] if squeeze else image
    h, w = img.shape
    if (h, w) == (target_side, target_side):
        out = img.astype(DTYPE, copy=True)
        return out[None] if squeeze else out

    def coords(n_in: int, n_out: int) -> np.ndarray:
        if n_out == 1:
            return np.zeros(1)
        return np.arange(n_out) * ((n_in - 1) / (n_out - 1))

    ys, xs = coords(h, target_side), coords(w, target_side)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - fx) + img[np.ix_(y0, x1)] * fx
    bottom = img[np.ix_(y1, x0)] * (1 - fx) + img[np.ix_(y1, x1)] * fx
    out = (top * (1 - fy) + bottom * fy).astype(DTYPE)
    return out[None] if squeeze else out


def batch_images(samples: list[Sample], side: int) -> np.ndarray:
    """Stack samples into a [B, 1, side, side] float32 batch, resizing as needed."""
    return np.stack([resize(s.image, side) for s in samples])


def batch_labels(samples: list[Sample]) -> np.ndarray:
    return np.asarray([s.label for s in samples], dtype=np.int64)
