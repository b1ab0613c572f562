"""AVA-style records: manifest I/O, image files, a procedural synthetic
dataset and the training batch stream."""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arch import N_STYLES, STYLE_NAMES
from .augment import augment_batch
from .rating import N_BINS

RAW_MAGIC = b"RGB8"
STYLE_COLUMNS = tuple(n.lower().replace(" ", "_") for n in STYLE_NAMES)
RATING_COLUMNS = tuple(f"r{i}" for i in range(1, N_BINS + 1))
HEADER = ("image_id", "image_path") + RATING_COLUMNS + STYLE_COLUMNS


class ManifestError(ValueError):
    pass


# -- image files --------------------------------------------------------------

def write_image(path, img):
    """PNG (``.png``) or raw fixture format (anything else): b"RGB8", uint32 h, w, bytes."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) image, got {arr.shape}")
    u8 = np.clip(np.floor(np.asarray(arr, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image
        Image.fromarray(u8).save(path)
    else:
        with open(path, "wb") as f:
            f.write(RAW_MAGIC + struct.pack("<II", *u8.shape[:2]) + u8.tobytes())


def read_image(path) -> np.ndarray:
    """Return an (h, w, 3) uint8 array."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    raw = path.read_bytes()
    if raw[:4] != RAW_MAGIC:
        raise ValueError(f"{path}: not a PNG or raw RGB8 image")
    h, w = struct.unpack("<II", raw[4:12])
    if len(raw) != 12 + h * w * 3:
        raise ValueError(f"{path}: expected {h * w * 3} pixel bytes, found {len(raw) - 12}")
    return np.frombuffer(raw, dtype=np.uint8, offset=12).reshape(h, w, 3).copy()


# -- manifest -------------------------------------------------------------------

@dataclass(frozen=True)
class Record:
    image_id: str
    image_path: str
    rating_counts: tuple[int, ...]
    style_flags: tuple[bool, ...]

    def __post_init__(self):
        if len(self.rating_counts) != N_BINS:
            raise ManifestError(f"{self.image_id}: need {N_BINS} rating counts, got {len(self.rating_counts)}")
        if any(c < 0 for c in self.rating_counts):
            raise ManifestError(f"{self.image_id}: negative rating count")
        if len(self.style_flags) != N_STYLES:
            raise ManifestError(f"{self.image_id}: need {N_STYLES} style flags, got {len(self.style_flags)}")


@dataclass
class DatasetManifest:
    records: list[Record]
    root: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.records)

    def path_of(self, rec: Record) -> Path:
        p = Path(rec.image_path)
        return p if p.is_absolute() else self.root / p

    @property
    def histograms(self) -> np.ndarray:
        return np.array([r.rating_counts for r in self.records], dtype=np.float64).reshape(-1, N_BINS)

    @property
    def flags(self) -> np.ndarray:
        return np.array([r.style_flags for r in self.records], dtype=int).reshape(-1, N_STYLES)

    @property
    def ids(self) -> list[str]:
        return [r.image_id for r in self.records]

    def subset(self, idx) -> "DatasetManifest":
        return DatasetManifest([self.records[i] for i in idx], self.root)


def write_manifest(manifest: DatasetManifest, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HEADER)
        for r in manifest.records:
            w.writerow([r.image_id, r.image_path, *r.rating_counts, *(int(b) for b in r.style_flags)])


def _int_field(value, lineno, name):
    try:
        return int(value)
    except ValueError:
        raise ManifestError(f"line {lineno}: field {name}={value!r} is not an integer") from None


def load_manifest(path, check_files=True) -> DatasetManifest:
    """Parse a manifest; problems are reported with their line numbers."""
    path = Path(path)
    records = []
    with open(path, newline="") as f:
        rows = csv.reader(f)
        header = next(rows, None)
        if header is None or tuple(h.strip() for h in header) != HEADER:
            raise ManifestError(f"{path}: line 1: header must be {','.join(HEADER)}")
        for lineno, row in enumerate(rows, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(HEADER):
                raise ManifestError(f"{path}: line {lineno}: expected {len(HEADER)} fields "
                                    f"({N_BINS} ratings, {N_STYLES} styles), got {len(row)}")
            counts = tuple(_int_field(v, lineno, n) for v, n in zip(row[2:2 + N_BINS], RATING_COLUMNS))
            if any(c < 0 for c in counts):
                raise ManifestError(f"{path}: line {lineno}: negative rating count")
            flags = []
            for v, n in zip(row[2 + N_BINS:], STYLE_COLUMNS):
                v = _int_field(v, lineno, n)
                if v not in (0, 1):
                    raise ManifestError(f"{path}: line {lineno}: style flag {n}={v} must be 0 or 1")
                flags.append(bool(v))
            records.append(Record(row[0].strip(), row[1].strip(), counts, tuple(flags)))
    manifest = DatasetManifest(records, path.parent)
    if check_files:
        for lineno, r in enumerate(records, 2):
            if not manifest.path_of(r).is_file():
                raise ManifestError(f"{path}: line {lineno}: image file {r.image_path} not found")
    return manifest


@dataclass
class Dataset:
    """A manifest with its images held in memory as uint8 (h, w, 3) arrays."""

    manifest: DatasetManifest
    images: list[np.ndarray]

    def __len__(self):
        return len(self.images)

    @classmethod
    def load(cls, manifest: DatasetManifest) -> "Dataset":
        return cls(manifest, [read_image(manifest.path_of(r)) for r in manifest.records])

    def subset(self, idx) -> "Dataset":
        idx = list(idx)
        return Dataset(self.manifest.subset(idx), [self.images[i] for i in idx])

    def save(self, directory, ext=".png") -> Path:
        """Write images plus ``manifest.csv`` into ``directory``; returns the manifest path."""
        directory = Path(directory)
        (directory / "images").mkdir(parents=True, exist_ok=True)
        recs = []
        for r, img in zip(self.manifest.records, self.images):
            rel = f"images/{r.image_id}{ext}"
            write_image(directory / rel, img)
            recs.append(Record(r.image_id, rel, r.rating_counts, r.style_flags))
        self.manifest = DatasetManifest(recs, directory)
        write_manifest(self.manifest, directory / "manifest.csv")
        return directory / "manifest.csv"


# -- synthetic generator ---------------------------------------------------------

MOTIF = 16
CELL = 16


def _motif_bank() -> np.ndarray:
    """Fourteen zero-mean (16, 16, 3) texture offsets, one per style."""
    y, x = np.mgrid[0:MOTIF, 0:MOTIF]
    c = (MOTIF - 1) / 2.0
    r = np.hypot(y - c, x - c)
    A = 60.0

    def sq(v, period):
        return np.where((v // (period // 2)) % 2 == 0, 1.0, -1.0)

    def tex(field, colour=(1.0, 1.0, 1.0)):
        return field[..., None] * np.asarray(colour, dtype=float) * A

    ring = np.maximum(np.abs(y - c), np.abs(x - c)).astype(int)
    bank = [
        tex(sq(y, 6) * sq(x, 6), (1.0, 0.1, -1.0)),   # orange/blue checker
        tex(sq(y, 4), (1.0, -1.0, 1.0)),              # magenta/green stripes
        tex(np.where(ring % 4 < 2, 1.0, -1.0), (0.2, 1.0, -1.0)),  # green/violet square rings
        tex(sq(y + x, 4), (-1.0, 1.0, 0.0)),         # green/red diagonal grain
        tex(sq(y, 6) * sq(x, 6)),                     # gray checker
        tex(sq(y, 6)),                                # wide h-stripes
        tex(sq(x, 6)),                                # wide v-stripes
        tex(sq(y, 4)),                                # h-stripes
        tex(sq(x, 4)),                                # v-stripes
        tex(sq(y, 4) * sq(x, 4)),                     # fine checker
        tex(sq(y, 12) * sq(x, 12)),                   # coarse checker
        tex(sq(y, 4), (1.0, -1.0, -1.0)),             # red/cyan h-stripes
        tex(sq(x, 4), (1.0, -1.0, -1.0)),             # red/cyan v-stripes
        tex(np.where(np.cos(2 * np.pi * r / 6) > 0, 1.0, -1.0)),  # round rings
    ]
    bank = np.stack(bank)
    return bank - bank.mean(axis=(1, 2), keepdims=True)


MOTIFS = _motif_bank()


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Generator configuration; none of these constants are properties of real photographs."""

    size: int = 64
    positive_rate: float = 0.45
    rating_weights: tuple[float, ...] = (1.0,) * N_STYLES
    raters: int = 200
    mu_base: float = 2.0
    mu_span: float = 7.0
    sigma_base: float = 0.5
    sigma_slope: float = 0.25
    pixel_noise: float = 3.0

    def __post_init__(self):
        if self.size < CELL or self.size % CELL:
            raise ValueError(f"image size must be a positive multiple of {CELL}")
        if (self.size // CELL) ** 2 < N_STYLES:
            raise ValueError("image too small to hold every style motif")
        if len(self.rating_weights) != N_STYLES or sum(self.rating_weights) <= 0:
            raise ValueError(f"need {N_STYLES} non-negative rating weights with a positive sum")
        if not 0.1 <= self.positive_rate <= 0.9:
            raise ValueError("positive_rate must lie in [0.1, 0.9]")

    @property
    def weights(self) -> np.ndarray:
        w = np.asarray(self.rating_weights, dtype=float)
        return w / w.sum()

    def mean_of(self, flags) -> np.ndarray:
        return self.mu_base + self.mu_span * (np.asarray(flags, dtype=float) @ self.weights)

    def sigma_of(self, mu) -> np.ndarray:
        return self.sigma_base + self.sigma_slope * np.abs(np.asarray(mu) - 5.5)


def toy_spec(styles=(0, 1, 2, 3), weights=(0.4, 0.3, 0.2, 0.1), **kw) -> SyntheticTaskSpec:
    """Spec whose rating depends only on ``styles`` (used by the desk-scale experiments)."""
    w = [0.0] * N_STYLES
    for s, v in zip(styles, weights):
        w[s] = v
    return SyntheticTaskSpec(rating_weights=tuple(w), **kw)


def rating_histogram(mu, sigma, raters, rng) -> np.ndarray:
    votes = np.clip(np.rint(rng.normal(mu, sigma, raters)), 1, N_BINS).astype(int)
    return np.bincount(votes - 1, minlength=N_BINS)


def render(flags, spec: SyntheticTaskSpec, rng) -> np.ndarray:
    s = spec.size
    base = rng.uniform(70, 180, 3)
    grad = rng.uniform(-15, 15, (2, 3))
    yy, xx = np.mgrid[0:s, 0:s] / (s - 1) - 0.5
    img = base + yy[..., None] * grad[0] + xx[..., None] * grad[1]
    img = img + rng.normal(0.0, spec.pixel_noise, img.shape)
    n_cells = (s // CELL) ** 2
    styles = np.flatnonzero(flags)
    cells = rng.permutation(n_cells)
    if len(styles):
        # every present style tiles an equal share of the grid cells
        share = n_cells // len(styles)
        for k, style in enumerate(styles):
            for cell in cells[k * share : (k + 1) * share]:
                cy, cx = divmod(int(cell), s // CELL)
                img[cy * CELL : (cy + 1) * CELL, cx * CELL : (cx + 1) * CELL] += MOTIFS[style]
    return np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8)


def generate_synthetic(spec: SyntheticTaskSpec, n_images: int, seed=None, prefix="img") -> Dataset:
    """Deterministic per seed. Ratings come from N(mu(flags), sigma(mu)) rounded to 1..10."""
    rng = np.random.default_rng(seed)
    records, images = [], []
    for i in range(n_images):
        flags = rng.random(N_STYLES) < spec.positive_rate
        mu = float(spec.mean_of(flags))
        counts = rating_histogram(mu, float(spec.sigma_of(mu)), spec.raters, rng)
        images.append(render(flags, spec, rng))
        image_id = f"{prefix}{i:05d}"
        records.append(Record(image_id, f"images/{image_id}.png", tuple(int(c) for c in counts),
                              tuple(bool(f) for f in flags)))
    return Dataset(DatasetManifest(records), images)


def oracle_styles(img, threshold=0.75) -> np.ndarray:
    """Rule-based style detector: normalized cross-correlation against every motif.

    Knows the generator's layout, so it is a test oracle, not a model.
    """
    img = np.asarray(img, dtype=np.float64)
    s = img.shape[0]
    found = np.zeros(N_STYLES, dtype=bool)
    templates = MOTIFS - MOTIFS.mean(axis=(1, 2), keepdims=True)
    tnorm = np.sqrt((templates**2).sum(axis=(1, 2, 3)))
    for cy in range(s // CELL):
        for cx in range(s // CELL):
            cell = img[cy * CELL : (cy + 1) * CELL, cx * CELL : (cx + 1) * CELL]
            best = np.full(N_STYLES, -1.0)
            for oy in range(CELL - MOTIF + 1):
                for ox in range(CELL - MOTIF + 1):
                    patch = cell[oy : oy + MOTIF, ox : ox + MOTIF]
                    patch = patch - patch.mean(axis=(0, 1))  # per-channel local background
                    pn = np.sqrt((patch**2).sum())
                    if pn == 0:
                        continue
                    ncc = (templates * patch).sum(axis=(1, 2, 3)) / (tnorm * pn)
                    best = np.maximum(best, ncc)
            k = int(np.argmax(best))
            if best[k] > threshold:
                found[k] = True
    return found


# -- batches ---------------------------------------------------------------------

@dataclass
class Batch:
    images: np.ndarray      # (n, 3, h, w) float64 RGB in [0, 255]
    histograms: np.ndarray  # (n, 10)
    flags: np.ndarray       # (n, 14) int
    ids: list[str]
    index: np.ndarray


def _stack(images) -> np.ndarray:
    return np.stack([np.asarray(im, dtype=np.float64).transpose(2, 0, 1) for im in images])


def batch_iterator(data, batch_size=128, augment=(), seed=None, mode="train", indices=None):
    """Yield :class:`Batch` objects covering every item once.

    Images are bucketed by size so each batch is rectangular. In ``train``
    mode the order is shuffled by ``seed`` and ``augment`` ops are applied;
    ``eval`` mode streams stored pixels unmodified in manifest order. The
    last batch of each bucket may be short.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if isinstance(data, DatasetManifest):
        data = Dataset.load(data)
    idx = np.arange(len(data)) if indices is None else np.asarray(indices)
    rng = np.random.default_rng(seed)
    if mode == "train":
        idx = rng.permutation(idx)
    buckets: dict[tuple, list[int]] = {}
    for i in idx:
        buckets.setdefault(data.images[i].shape, []).append(int(i))
    chunks = [b[k : k + batch_size] for b in buckets.values() for k in range(0, len(b), batch_size)]
    if mode == "train":
        chunks = [chunks[k] for k in rng.permutation(len(chunks))]
    hists, flags, ids = data.manifest.histograms, data.manifest.flags, data.manifest.ids
    for chunk in chunks:
        imgs = [data.images[i] for i in chunk]
        if mode == "train" and augment:
            imgs = augment_batch(imgs, augment, int(rng.integers(2**63)))
        yield Batch(_stack(imgs), hists[chunk], flags[chunk], [ids[i] for i in chunk], np.array(chunk))
