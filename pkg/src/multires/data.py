"""Synthetic Haar-spectral image datasets, PGM I/O and normalisation."""

import json
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .wavelet import HaarPyramid, SizeError, coarse_dim, haar_synthesize

SPLITS = ("train", "val", "test")


class DataError(ValueError):
    pass


class FormatError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


@dataclass
class Dataset:
    """Images ``(n, S, S)`` with fixed index splits.

    ``mean`` (per pixel) and ``std`` (global) are train-split statistics;
    ``normalized`` records whether they have been applied to ``images``.
    """

    images: np.ndarray
    splits: dict
    mean: np.ndarray = None
    std: float = None
    normalized: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.splits = {k: np.asarray(self.splits[k], dtype=np.int64) for k in SPLITS}
        idx = np.sort(np.concatenate([self.splits[k] for k in SPLITS]))
        if not np.array_equal(idx, np.arange(len(self.images))):
            raise DataError("splits must be disjoint and cover every image")
        if self.mean is None:
            self.mean, self.std = train_stats(self.images[self.splits["train"]])

    @property
    def size(self):
        return self.images.shape[-1]

    def split(self, name):
        return self.images[self.splits[name]]


def train_stats(train):
    if len(train) == 0:
        raise DegenerateDataError("train split is empty")
    mean = train.mean(axis=0)
    std = float(np.sqrt(np.mean((train - mean) ** 2)))
    return mean, std


def split_indices(n, fractions=(0.8, 0.1, 0.1), seed=0):
    """Seed-stable shuffle cut into train/val/test."""
    perm = np.random.default_rng([seed, 0x5b1175]).permutation(n)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train : n_train + n_val]),
        "test": np.sort(perm[n_train + n_val :]),
    }


def synthesis_matrix(J, ndim=2):
    """Columns are the pixel images of the flat-layout Haar basis vectors."""
    d = coarse_dim(J, ndim)
    cols = np.empty((d, d))
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        cols[:, k] = haar_synthesize(HaarPyramid.from_vector(e, ndim)).ravel()
    return cols


def level_slices(J, ndim=2):
    """Flat-layout slices per level: scaling is level 0, detail band ``i`` is level ``i+1``."""
    out = [slice(0, 1)]
    for i in range(J):
        out.append(slice(coarse_dim(i, ndim), coarse_dim(i + 1, ndim)))
    return out


def gen_haar_sparse(n, size=16, alpha=1.0, eta=0.0, seed=0, fractions=(0.8, 0.1, 0.1)):
    """Random images whose expected Haar energy at level ``l`` is ``2**(-alpha*l)``.

    The scaling coefficient is level 0 and detail band ``i`` is level
    ``i + 1``; each level's energy is spread evenly over its coefficients.
    Independent N(0, eta^2) pixel noise is added on top.
    """
    if size < 1 or size & (size - 1):
        raise SizeError(f"image size {size} is not a power of two")
    if alpha < 0 or eta < 0:
        raise DataError("alpha and eta must be non-negative")
    if n < 1:
        raise DataError("need at least one image")
    J = size.bit_length() - 1
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal((n, size * size))
    for lv, sl in enumerate(level_slices(J)):
        width = sl.stop - sl.start
        coeffs[:, sl] *= np.sqrt(2.0 ** (-alpha * lv) / width)
    images = coeffs @ synthesis_matrix(J).T
    if eta > 0:
        images += eta * rng.standard_normal(images.shape)
    meta = {"generator": "haar_sparse", "n": n, "size": size, "alpha": alpha, "eta": eta, "seed": seed}
    return Dataset(images.reshape(n, size, size), split_indices(n, fractions, seed), meta=meta)


def normalize(ds):
    """Apply train-split mean/std to every split."""
    mean, std = train_stats(ds.split("train"))
    if not std > 0:
        raise DegenerateDataError("training images have zero variance")
    return replace(ds, images=(ds.images - mean) / std, mean=mean, std=std, normalized=True)


# -- PGM -------------------------------------------------------------------

_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def save_pgm(path, image):
    """Binary P5, maxval 255.  Floats in [0, 1] are scaled and rounded."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError("PGM images are 2D")
    if img.dtype != np.uint8:
        img = np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(img.tobytes())


def read_pgm_bytes(path):
    raw = Path(path).read_bytes()
    pos, fields = 0, []
    for _ in range(4):
        m = _TOKEN.match(raw, pos)
        if not m:
            raise FormatError("truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise FormatError(f"unsupported PGM magic {fields[0]!r} (binary P5 only)")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise FormatError("malformed PGM header") from exc
    if maxval != 255:
        raise FormatError("only 8-bit PGM (maxval 255) is supported")
    data = raw[pos + 1 : pos + 1 + w * h]
    if len(data) != w * h:
        raise FormatError("PGM pixel data is truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def load_pgm(path, dyadic=True):
    """Pixels mapped to [0, 1]."""
    img = read_pgm_bytes(path)
    h, w = img.shape
    if dyadic and (h != w or h & (h - 1)):
        raise SizeError(f"PGM of size {w}x{h} is not square and dyadic")
    return img.astype(np.float64) / 255.0


def load_pgm_dir(directory, seed=0, fractions=(0.8, 0.1, 0.1)):
    files = sorted(Path(directory).glob("*.pgm"))
    if not files:
        raise DataError(f"no .pgm files in {directory}")
    images = np.stack([load_pgm(f) for f in files])
    return Dataset(images, split_indices(len(files), fractions, seed), meta={"files": [f.name for f in files]})


# -- manifest --------------------------------------------------------------


def save_dataset(directory, ds, write_pgm=True):
    """Write ``images.npy`` (lossless), optional 8-bit PGM previews and ``manifest.json``.

    PGM previews map ``[lo, hi]`` (the data range) onto 0..255; the map is
    recorded in the manifest.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.save(directory / "images.npy", ds.images)
    files = []
    lo, hi = float(ds.images.min()), float(ds.images.max())
    if write_pgm:
        (directory / "pgm").mkdir(exist_ok=True)
        span = hi - lo if hi > lo else 1.0
        for i, img in enumerate(ds.images):
            name = f"pgm/{i:06d}.pgm"
            save_pgm(directory / name, (img - lo) / span)
            files.append(name)
    manifest = {
        "images": "images.npy",
        "files": files,
        "pgm_range": [lo, hi],
        "splits": {k: ds.splits[k].tolist() for k in SPLITS},
        "stats": {"mean": ds.mean.tolist(), "std": ds.std},
        "normalized": ds.normalized,
        "meta": ds.meta,
    }
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=1))
    os.replace(tmp, directory / "manifest.json")
    return directory / "manifest.json"


def load_dataset(path):
    """Read a dataset from a manifest file or the directory containing one."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    m = json.loads(path.read_text())
    root = path.parent
    if m.get("images"):
        images = np.load(root / m["images"])
    else:
        images = np.stack([load_pgm(root / f) for f in m["files"]])
    return Dataset(
        images,
        m["splits"],
        mean=np.asarray(m["stats"]["mean"]),
        std=float(m["stats"]["std"]),
        normalized=bool(m.get("normalized", False)),
        meta=m.get("meta", {}),
    )
