"""On-disk RGB-D dataset: netpbm images, CSV manifest, normalization, batching.

Layout of a dataset directory::

    manifest.csv            id,rgb,depth,omega,split
    norm.csv                channel,mean,std   (training split only)
    images/<id>_rgb.ppm     binary P6, maxval 255
    images/<id>_depth.pgm   binary P5, maxval 65535, big-endian, millimeters

Externally collected data can be used by writing the same layout.
"""
from __future__ import annotations

import csv
import io
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import synth

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
CHANNELS = ("rgb_r", "rgb_g", "rgb_b", "depth")
MANIFEST_HEADER = ["id", "rgb", "depth", "omega", "split"]


class DatasetError(Exception):
    pass


# -- netpbm ---------------------------------------------------------------

def write_ppm(path, rgb: np.ndarray) -> None:
    """``rgb``: uint8 [3, H, W]."""
    c, h, w = rgb.shape
    if c != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"expected uint8 [3,H,W], got {rgb.dtype} {rgb.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb.transpose(1, 2, 0)).tobytes())


def write_pgm16(path, depth: np.ndarray) -> None:
    """``depth``: uint16 [1, H, W] (or [H, W])."""
    img = depth.reshape(depth.shape[-2:])
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(img.astype(">u2").tobytes())


def _read_netpbm(path) -> tuple[str, int, int, int, bytes]:
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise DatasetError(f"corrupt image {path}: truncated header")
        if data[pos:pos + 1] == b"#":
            pos = data.find(b"\n", pos)
            if pos < 0:
                raise DatasetError(f"corrupt image {path}: truncated header")
            continue
        end = pos
        while end < len(data) and not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    pos += 1  # single whitespace before the raster
    try:
        magic = tokens[0].decode("ascii")
        w, h, maxval = (int(t) for t in tokens[1:])
    except (UnicodeDecodeError, ValueError):
        raise DatasetError(f"corrupt image {path}: bad header") from None
    return magic, w, h, maxval, data[pos:]


def read_ppm(path) -> np.ndarray:
    magic, w, h, maxval, raster = _read_netpbm(path)
    if magic != "P6" or maxval != 255:
        raise DatasetError(f"corrupt image {path}: expected P6 with maxval 255")
    if len(raster) != 3 * w * h:
        raise DatasetError(f"corrupt image {path}: expected {3 * w * h} bytes, found {len(raster)}")
    return np.frombuffer(raster, np.uint8).reshape(h, w, 3).transpose(2, 0, 1).copy()


def read_pgm16(path) -> np.ndarray:
    magic, w, h, maxval, raster = _read_netpbm(path)
    if magic != "P5" or maxval != 65535:
        raise DatasetError(f"corrupt image {path}: expected P5 with maxval 65535")
    if len(raster) != 2 * w * h:
        raise DatasetError(f"corrupt image {path}: expected {2 * w * h} bytes, found {len(raster)}")
    return np.frombuffer(raster, ">u2").reshape(1, h, w).astype(np.uint16)


# -- manifest ---------------------------------------------------------------

@dataclass(frozen=True)
class SampleRecord:
    id: str
    rgb: str
    depth: str
    omega: float
    split: str


@dataclass
class DatasetManifest:
    root: Path
    records: list[SampleRecord]

    def split(self, name: str) -> list[SampleRecord]:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}")
        return [r for r in self.records if r.split == name]

    def path(self, rel: str) -> Path:
        return self.root / rel


def split_sizes(n: int) -> tuple[int, int, int]:
    """60/20/20: train is 60% rounded half up, the remainder halved with any odd sample going to val."""
    n_train = (n * 60 + 50) // 100
    rest = n - n_train
    n_test = rest // 2
    return n_train, rest - n_test, n_test


def write_manifest(root, records: list[SampleRecord]) -> Path:
    path = Path(root) / "manifest.csv"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MANIFEST_HEADER)
    for r in records:
        w.writerow([r.id, r.rgb, r.depth, f"{r.omega:.1f}", r.split])
    path.write_text(buf.getvalue())
    return path


def read_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / "manifest.csv"
    if not path.is_file():
        raise DatasetError(f"missing manifest {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_HEADER:
            raise DatasetError(f"{path}: header must be {','.join(MANIFEST_HEADER)}, got {header}")
        records = []
        for line, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise DatasetError(f"{path}:{line}: expected 5 fields")
            try:
                omega = float(row[3])
            except ValueError:
                raise DatasetError(f"{path}:{line}: bad omega {row[3]!r}") from None
            if row[4] not in SPLITS:
                raise DatasetError(f"{path}:{line}: bad split {row[4]!r}")
            records.append(SampleRecord(row[0], row[1], row[2], omega, row[4]))
    return DatasetManifest(root, records)


# -- generation -------------------------------------------------------------

def generate_dataset(rng: np.random.Generator, n_samples: int, out_dir, difficulty: int = 1,
                     image_size: int = 240, max_steps: int = synth.MAX_STEPS,
                     perturb: float = synth.PERTURB) -> DatasetManifest:
    """Drive the expert through random worlds and write ``n_samples`` frames.

    Each episode gets its own seed drawn from ``rng``; the split assignment
    is a seeded shuffle of the sample ids.
    """
    if n_samples < 10:
        raise ValueError("need at least 10 samples")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create {out}: {exc}") from exc

    records: list[tuple[str, float]] = []
    while len(records) < n_samples:
        ep_rng = np.random.default_rng(int(rng.integers(0, 2 ** 63)))
        world = synth.generate_world(ep_rng, difficulty)
        for w, state, label in synth.run_episode(world, ep_rng, max_steps=max_steps, perturb=perturb):
            sid = f"{len(records):06d}"
            rgb, depth = synth.render(w, state, image_size)
            write_ppm(out / "images" / f"{sid}_rgb.ppm", rgb)
            write_pgm16(out / "images" / f"{sid}_depth.pgm", depth)
            records.append((sid, label))
            if len(records) == n_samples:
                break

    order = rng.permutation(n_samples)
    n_train, n_val, _ = split_sizes(n_samples)
    split_of = np.empty(n_samples, dtype=object)
    split_of[order[:n_train]] = "train"
    split_of[order[n_train:n_train + n_val]] = "val"
    split_of[order[n_train + n_val:]] = "test"
    manifest = DatasetManifest(out, [
        SampleRecord(sid, f"images/{sid}_rgb.ppm", f"images/{sid}_depth.pgm", omega, str(split_of[i]))
        for i, (sid, omega) in enumerate(records)])
    write_manifest(out, manifest.records)
    write_norm_stats(out / "norm.csv", compute_norm_stats(manifest))
    log.info("wrote %d samples to %s", n_samples, out)
    return manifest


# -- normalization ------------------------------------------------------------

@dataclass
class NormStats:
    mean: np.ndarray  # [4]: r, g, b in 0-1 units, depth in meters
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def to_physical(rgb: np.ndarray, depth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """8-bit color to [0, 1] and millimeters to meters, float64."""
    return rgb.astype(np.float64) / 255.0, depth.astype(np.float64) / 1000.0


def load_sample(manifest: DatasetManifest, rec: SampleRecord) -> tuple[np.ndarray, np.ndarray]:
    for rel in (rec.rgb, rec.depth):
        if not manifest.path(rel).is_file():
            raise DatasetError(f"missing image {manifest.path(rel)}")
    rgb = read_ppm(manifest.path(rec.rgb))
    depth = read_pgm16(manifest.path(rec.depth))
    if rgb.shape[1:] != depth.shape[1:]:
        raise DatasetError(f"sample {rec.id}: rgb {rgb.shape} and depth {depth.shape} differ in size")
    return rgb, depth


def compute_norm_stats(manifest: DatasetManifest) -> NormStats:
    """Per-channel mean and population std over the training split."""
    train = manifest.split("train")
    if not train:
        raise DatasetError("training split is empty")
    total = np.zeros(4)
    total_sq = np.zeros(4)
    count = 0
    for rec in train:
        rgb, depth = to_physical(*load_sample(manifest, rec))
        x = np.concatenate([rgb, depth]).reshape(4, -1)
        total += x.sum(axis=1)
        total_sq += (x * x).sum(axis=1)
        count += x.shape[1]
    mean = total / count
    # second pass for a numerically clean variance
    ss = np.zeros(4)
    for rec in train:
        rgb, depth = to_physical(*load_sample(manifest, rec))
        x = np.concatenate([rgb, depth]).reshape(4, -1)
        ss += ((x - mean[:, None]) ** 2).sum(axis=1)
    std = np.sqrt(ss / count)
    for name, s in zip(CHANNELS, std):
        if not s > 0:
            raise DatasetError(f"channel {name} has zero standard deviation on the training split")
    return NormStats(mean, std)


def write_norm_stats(path, stats: NormStats) -> None:
    lines = ["channel,mean,std"]
    lines += [f"{c},{m!r},{s!r}" for c, m, s in zip(CHANNELS, stats.mean.tolist(), stats.std.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_norm_stats(path) -> NormStats:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if [r["channel"] for r in rows] != list(CHANNELS):
        raise DatasetError(f"{path}: expected channels {CHANNELS}")
    return NormStats(np.array([float(r["mean"]) for r in rows]), np.array([float(r["std"]) for r in rows]))


def downsample(x: np.ndarray, size: int) -> np.ndarray:
    """Area-average ``[..., H, W]`` down to ``size x size``; H must be a multiple of size."""
    h, w = x.shape[-2:]
    if (h, w) == (size, size):
        return x
    if h != w or h % size:
        raise DatasetError(f"cannot resample {h}x{w} images to {size}x{size}")
    f = h // size
    return x.reshape(*x.shape[:-2], size, f, size, f).mean(axis=(-3, -1))


def normalize(rgb: np.ndarray, depth: np.ndarray, stats: NormStats, image_size: int | None = None,
              dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``uint8``/``uint16`` arrays (any leading dims) -> standardized network input."""
    r, d = to_physical(rgb, depth)
    if image_size is not None:
        r, d = downsample(r, image_size), downsample(d, image_size)
    shp = (1,) * (r.ndim - 3)
    r = (r - stats.mean[:3].reshape(*shp, 3, 1, 1)) / stats.std[:3].reshape(*shp, 3, 1, 1)
    d = (d - stats.mean[3]) / stats.std[3]
    return r.astype(dtype), d.astype(dtype)


# -- batching -------------------------------------------------------------------

@dataclass
class SplitArrays:
    """A whole split, decoded and normalized, in manifest order."""
    ids: list[str]
    rgb: np.ndarray    # [N, 3, S, S] float32
    depth: np.ndarray  # [N, 1, S, S] float32
    omega: np.ndarray  # [N, 1] float32

    def __len__(self):
        return len(self.ids)

    def subset(self, idx) -> "SplitArrays":
        idx = np.asarray(idx)
        return SplitArrays([self.ids[i] for i in idx], self.rgb[idx], self.depth[idx], self.omega[idx])


def load_split(manifest: DatasetManifest, split: str, stats: NormStats,
               image_size: int | None = None) -> SplitArrays:
    recs = manifest.split(split)
    if not recs:
        raise DatasetError(f"split {split!r} is empty")
    rgbs, depths = [], []
    for rec in recs:
        rgb, depth = load_sample(manifest, rec)
        r, d = normalize(rgb, depth, stats, image_size)
        rgbs.append(r)
        depths.append(d)
    omega = np.array([[r.omega] for r in recs], dtype=np.float32)
    return SplitArrays([r.id for r in recs], np.stack(rgbs), np.stack(depths), omega)


def iter_batches(data: SplitArrays, batch_size: int,
                 rng: np.random.Generator | None = None) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Batches in order, or in a fresh ``rng`` permutation; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.permutation(len(data)) if rng is not None else np.arange(len(data))
    for start in range(0, len(data), batch_size):
        idx = order[start:start + batch_size]
        yield data.rgb[idx], data.depth[idx], data.omega[idx]


def load_batches(manifest: DatasetManifest, split: str, batch_size: int, rng: np.random.Generator | None,
                 stats: NormStats, image_size: int | None = None):
    """One pass over ``split``; shuffled with ``rng`` for training, manifest order otherwise."""
    return iter_batches(load_split(manifest, split, stats, image_size), batch_size,
                        rng if split == "train" else None)
