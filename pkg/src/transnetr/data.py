"""Dataset manifests, loading, hold-out splits, and center grouping.

Two on-disk layouts are understood:

``flat``
    ``root/images/<name>.<ext>`` paired with ``root/masks/<name>.<ext>``.
``centered``
    ``root/<center>/images/...`` and ``root/<center>/masks/...``; the center
    tag is the directory name and sample ids are ``<center>/<name>``.

Images and masks are paired by file stem, so ``a.jpg`` pairs with ``a.png``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff")
MASK_THRESHOLD = 128
UNTAGGED = "untagged"


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    """An image/mask pair: image is 3×H×W float32 in [0, 1], mask is H×W uint8 in {0, 1}."""

    id: str
    image: np.ndarray
    mask: np.ndarray
    center: Optional[str] = None
    split: str = "train"

    def __post_init__(self):
        if self.image.shape[1:] != self.mask.shape:
            raise DatasetError(f"sample {self.id!r}: image {self.image.shape} and mask {self.mask.shape} differ spatially")


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: Optional[str] = None
    mask_path: Optional[str] = None
    center: Optional[str] = None
    split: str = "train"
    # in-memory samples (synthetic data) carry their arrays directly
    sample: Optional[Sample] = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class DatasetManifest:
    root: Optional[str]
    records: Tuple[SampleRecord, ...]
    layout: str = "flat"
    resolution: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            seen = set()
            dup = next(i for i in ids if i in seen or seen.add(i))
            raise DatasetError(f"duplicate sample id {dup!r}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self.records)

    @property
    def ids(self) -> List[str]:
        return [r.id for r in self.records]

    @property
    def center_index(self) -> Dict[str, List[str]]:
        index: Dict[str, List[str]] = {}
        for r in self.records:
            index.setdefault(r.center or UNTAGGED, []).append(r.id)
        return index

    def view(self, ids: Sequence[str], split: Optional[str] = None) -> "DatasetManifest":
        by_id = {r.id: r for r in self.records}
        missing = [i for i in ids if i not in by_id]
        if missing:
            raise DatasetError(f"unknown sample id {missing[0]!r}")
        recs = tuple(by_id[i] if split is None else replace(by_id[i], split=split) for i in ids)
        return replace(self, records=recs)

    def load(self, resolution: Optional[Tuple[int, int]] = None) -> List[Sample]:
        res = resolution or self.resolution
        return [load_sample(r, res) for r in self.records]


def _list_rasters(directory: str) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for name in sorted(os.listdir(directory)):
        stem, ext = os.path.splitext(name)
        if ext.lower() in IMAGE_EXTENSIONS and not name.startswith("."):
            if stem in out:
                raise DatasetError(f"ambiguous files for {stem!r} in {directory}")
            out[stem] = os.path.join(directory, name)
    return out


def _check_readable(path: str) -> None:
    try:
        with Image.open(path) as im:
            im.verify()
    except (OSError, UnidentifiedImageError) as exc:
        raise DatasetError(f"unreadable raster {path}: {exc}") from exc


def _pair_directory(img_dir: str, mask_dir: str, center: Optional[str]) -> List[SampleRecord]:
    for d in (img_dir, mask_dir):
        if not os.path.isdir(d):
            raise DatasetError(f"missing directory {d}")
    images = _list_rasters(img_dir)
    masks = _list_rasters(mask_dir)
    for stem in sorted(set(images) - set(masks)):
        raise DatasetError(f"image without mask: {images[stem]}")
    for stem in sorted(set(masks) - set(images)):
        raise DatasetError(f"mask without image: {masks[stem]}")
    recs = []
    for stem in sorted(images):
        _check_readable(images[stem])
        _check_readable(masks[stem])
        sid = f"{center}/{stem}" if center else stem
        recs.append(SampleRecord(sid, images[stem], masks[stem], center))
    return recs


def load_dataset(root: str, layout: str = "auto") -> DatasetManifest:
    """Index ``root`` into a manifest with lexicographic sample order."""
    if not os.path.isdir(root):
        raise DatasetError(f"dataset root does not exist: {root}")
    if layout == "auto":
        layout = "flat" if os.path.isdir(os.path.join(root, "images")) else "centered"
    if layout == "flat":
        recs = _pair_directory(os.path.join(root, "images"), os.path.join(root, "masks"), None)
    elif layout == "centered":
        recs = []
        centers = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)) and not d.startswith("."))
        if not centers:
            raise DatasetError(f"no center directories under {root}")
        for center in centers:
            recs.extend(_pair_directory(os.path.join(root, center, "images"), os.path.join(root, center, "masks"), center))
    else:
        raise DatasetError(f"unknown layout {layout!r} (expected 'flat' or 'centered')")
    return DatasetManifest(root, tuple(recs), layout)


def _read_rgb(path: str) -> Image.Image:
    try:
        im = Image.open(path)
        im.load()
    except (OSError, UnidentifiedImageError) as exc:
        raise DatasetError(f"corrupt raster {path}: {exc}") from exc
    return im


def load_sample(record: SampleRecord, target_resolution: Optional[Tuple[int, int]] = None) -> Sample:
    """Read and optionally resize one sample (bilinear image, nearest-neighbour mask)."""
    if target_resolution is not None:
        th, tw = target_resolution
        if th % 32 or tw % 32 or th < 32 or tw < 32:
            raise DatasetError(f"target resolution {target_resolution} must be positive multiples of 32")
    if record.sample is not None:
        s = record.sample
        if target_resolution is None or s.mask.shape == tuple(target_resolution):
            return s
        return resize_sample(s, target_resolution)
    img = _read_rgb(record.image_path).convert("RGB")
    msk = _read_rgb(record.mask_path).convert("L")
    if img.size != msk.size:
        raise DatasetError(f"sample {record.id!r}: image size {img.size} differs from mask size {msk.size}")
    if target_resolution is not None and img.size != (target_resolution[1], target_resolution[0]):
        size = (target_resolution[1], target_resolution[0])
        img = img.resize(size, Image.BILINEAR)
        msk = msk.resize(size, Image.NEAREST)
    image = np.asarray(img, dtype=np.float32).transpose(2, 0, 1) / 255.0
    mask = (np.asarray(msk) >= MASK_THRESHOLD).astype(np.uint8)
    return Sample(record.id, np.ascontiguousarray(image), mask, record.center, record.split)


def resize_sample(s: Sample, resolution: Tuple[int, int]) -> Sample:
    from .functional import resize_bilinear_array

    h, w = resolution
    image = np.clip(resize_bilinear_array(s.image, h, w), 0.0, 1.0).astype(np.float32)
    return Sample(s.id, image, nearest_resize(s.mask, h, w), s.center, s.split)


def nearest_resize(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    ih, iw = mask.shape
    rows = np.minimum(((np.arange(h) + 0.5) * ih / h).astype(np.int64), ih - 1)
    cols = np.minimum(((np.arange(w) + 0.5) * iw / w).astype(np.int64), iw - 1)
    return mask[rows[:, None], cols[None, :]]


def split_holdout(
    manifest: DatasetManifest, train_n: int, seed: int = 0, split_file: Optional[str] = None
) -> Tuple[DatasetManifest, DatasetManifest]:
    """Seeded shuffle, first ``train_n`` ids to train and the rest to test."""
    n = len(manifest)
    if not 0 < train_n < n:
        raise DatasetError(f"train_n must be in (0, {n}), got {train_n}")
    order = np.random.default_rng(seed).permutation(n)
    ids = manifest.ids
    train_ids = [ids[i] for i in order[:train_n]]
    test_ids = [ids[i] for i in order[train_n:]]
    if split_file:
        write_split_file(split_file, train_ids, test_ids, seed)
    return manifest.view(train_ids, "train"), manifest.view(test_ids, "test")


def write_split_file(path: str, train_ids: Sequence[str], test_ids: Sequence[str], seed: int) -> None:
    lines = [f"# split seed={seed} train={len(train_ids)} test={len(test_ids)}", "[train]", *train_ids, "[test]", *test_ids]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_split_file(path: str, manifest: DatasetManifest) -> Tuple[DatasetManifest, DatasetManifest]:
    """Apply a split file (possibly an externally published one) to ``manifest``."""
    sections: Dict[str, List[str]] = {"train": [], "test": []}
    current = None
    with open(path, encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line in ("[train]", "[test]"):
                current = line[1:-1]
                continue
            if current is None:
                raise DatasetError(f"{path}: sample id {line!r} outside a [train]/[test] section")
            sections[current].append(line)
    return manifest.view(sections["train"], "train"), manifest.view(sections["test"], "test")


def group_by_center(manifest: DatasetManifest) -> List[Tuple[str, DatasetManifest]]:
    """Disjoint per-center views in first-appearance order."""
    return [(center, manifest.view(ids)) for center, ids in manifest.center_index.items()]


def write_dataset(manifest: DatasetManifest, root: str, layout: Optional[str] = None) -> DatasetManifest:
    """Write samples as 8-bit PNGs in the flat or centered layout; returns the on-disk manifest."""
    layout = layout or ("centered" if any(r.center for r in manifest) else "flat")
    for rec in manifest:
        s = load_sample(rec)
        stem = rec.id.split("/")[-1]
        base = os.path.join(root, s.center or UNTAGGED) if layout == "centered" else root
        os.makedirs(os.path.join(base, "images"), exist_ok=True)
        os.makedirs(os.path.join(base, "masks"), exist_ok=True)
        img = (np.clip(s.image, 0, 1).transpose(1, 2, 0) * 255.0 + 0.5).astype(np.uint8)
        Image.fromarray(img).save(os.path.join(base, "images", f"{stem}.png"))
        Image.fromarray((s.mask * 255).astype(np.uint8)).save(os.path.join(base, "masks", f"{stem}.png"))
    return load_dataset(root, layout)


def stack_batch(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples]).astype(np.float32)
    masks = np.stack([s.mask for s in samples])[:, None].astype(np.float32)
    return images, masks
