"""Orthonormal Haar analysis of dyadic 1D signals and 2D images.

A pixel array of length ``2**J`` (or a ``2**J x 2**J`` grid) is read as a
piecewise-constant function on the unit interval (square).  Norms are the
L2 norms of that function, so ``||f||^2`` is the *mean* of the squared
pixel values.  With that measure the Haar coefficients computed here are
inner products against unit-norm basis functions and Parseval is exact.

Coefficient layout
------------------
1D: ``scaling`` plus ``details[i]`` of shape ``(2**i,)`` for ``i < J``.
2D: ``scaling`` plus ``details[i]`` of shape ``(3, 2**i, 2**i)`` holding the
horizontal, vertical and diagonal sub-bands (tensor-product construction).
The flat vector layout concatenates ``[scaling, details[0], details[1], ...]``
so the first ``2**j`` (1D) or ``4**j`` (2D) entries span the coarse space of
level ``j``.
"""

import json
import math
from dataclasses import dataclass

import numpy as np


class WaveletError(ValueError):
    """Base class for malformed inputs to the Haar routines."""


class SizeError(WaveletError):
    pass


class DomainError(WaveletError):
    pass


class ShapeError(WaveletError):
    pass


class CoarsestError(WaveletError):
    pass


class LevelRangeError(WaveletError):
    pass


def _log2_exact(n):
    if n < 1 or n & (n - 1):
        raise SizeError(f"size {n} is not a power of two")
    return n.bit_length() - 1


def signal_level(x):
    """Return ``(level, ndim)`` of a dyadic signal, validating it."""
    x = np.asarray(x)
    if x.ndim == 1:
        level = _log2_exact(x.shape[0])
    elif x.ndim == 2:
        if x.shape[0] != x.shape[1]:
            raise SizeError(f"2D signal must be square, got {x.shape}")
        level = _log2_exact(x.shape[0])
    else:
        raise SizeError(f"expected a 1D or 2D signal, got ndim={x.ndim}")
    if not np.all(np.isfinite(x)):
        raise DomainError("signal contains non-finite values")
    return level, x.ndim


def coarse_dim(level, ndim=1):
    """Number of coordinates spanning the level-``level`` approximation space."""
    return (2 if ndim == 1 else 4) ** level


@dataclass(frozen=True, eq=False)
class HaarPyramid:
    scaling: float
    details: tuple
    ndim: int = 1

    def __post_init__(self):
        if self.ndim not in (1, 2):
            raise ShapeError(f"ndim must be 1 or 2, got {self.ndim}")
        bands = []
        for i, band in enumerate(self.details):
            band = np.array(band, dtype=np.float64)
            expected = (2**i,) if self.ndim == 1 else (3, 2**i, 2**i)
            if band.shape != expected:
                raise ShapeError(
                    f"band {i} has shape {band.shape}, expected {expected}"
                )
            band.setflags(write=False)
            bands.append(band)
        object.__setattr__(self, "details", tuple(bands))
        object.__setattr__(self, "scaling", float(self.scaling))

    @property
    def level(self):
        return len(self.details)

    def band_energies(self):
        return np.array([float(np.sum(b * b)) for b in self.details])

    def energy(self):
        return self.scaling**2 + float(self.band_energies().sum())

    def to_vector(self):
        return np.concatenate([[self.scaling]] + [b.ravel() for b in self.details])

    @classmethod
    def from_vector(cls, vec, ndim=1):
        vec = np.asarray(vec, dtype=np.float64)
        level = _log2_exact(vec.size) // (1 if ndim == 1 else 2)
        if coarse_dim(level, ndim) != vec.size:
            raise ShapeError(f"length {vec.size} is not a {ndim}D pyramid layout")
        details, pos = [], 1
        for i in range(level):
            shape = (2**i,) if ndim == 1 else (3, 2**i, 2**i)
            size = int(np.prod(shape))
            details.append(vec[pos : pos + size].reshape(shape))
            pos += size
        return cls(vec[0], tuple(details), ndim)

    def to_dict(self):
        return {
            "level": self.level,
            "ndim": self.ndim,
            "scaling": self.scaling,
            "details": [b.tolist() for b in self.details],
        }

    @classmethod
    def from_dict(cls, d):
        ndim = int(d.get("ndim", 1))
        pyr = cls(d["scaling"], tuple(np.asarray(b, dtype=np.float64) for b in d["details"]), ndim)
        if "level" in d and int(d["level"]) != pyr.level:
            raise ShapeError(f"declared level {d['level']} but found {pyr.level} bands")
        return pyr

    def __eq__(self, other):
        if not isinstance(other, HaarPyramid):
            return NotImplemented
        return (
            self.ndim == other.ndim
            and self.level == other.level
            and np.array_equal(self.to_vector(), other.to_vector())
        )


@dataclass(frozen=True)
class HierarchySpec:
    """Transition times ``0 = t_0 < t_1 < ... < t_J < 1``."""

    times: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in self.times)
        if not t or t[0] != 0.0:
            raise ValueError("hierarchy times must start at 0")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("hierarchy times must be strictly increasing")
        if t[-1] >= 1.0:
            raise ValueError("last hierarchy time must be < 1")
        object.__setattr__(self, "times", t)

    @property
    def levels(self):
        return len(self.times) - 1


# -- pooling and embedding -------------------------------------------------


def _pool_once(x):
    if x.ndim == 1:
        return 0.5 * (x[0::2] + x[1::2])
    return 0.25 * (x[0::2, 0::2] + x[0::2, 1::2] + x[1::2, 0::2] + x[1::2, 1::2])


def average_pool(x):
    """Pairwise (1D) or 2x2 (2D) arithmetic mean, one level down."""
    x = np.asarray(x, dtype=np.float64)
    level, _ = signal_level(x)
    if level == 0:
        raise CoarsestError("cannot pool a level-0 signal")
    return _pool_once(x)


def embed(x, target):
    """Piecewise-constant upsampling of ``x`` to ``target`` level."""
    x = np.asarray(x, dtype=np.float64)
    level, ndim = signal_level(x)
    if target < level:
        raise LevelRangeError(f"cannot embed level {level} into level {target}")
    k = 2 ** (target - level)
    if ndim == 1:
        return np.repeat(x, k)
    return np.repeat(np.repeat(x, k, axis=0), k, axis=1)


# -- analysis / synthesis --------------------------------------------------


def haar_analyze(x):
    """Haar coefficients of a dyadic signal (see module docstring for layout)."""
    x = np.asarray(x, dtype=np.float64)
    level, ndim = signal_level(x)
    s = x
    details = [None] * level
    for i in range(level - 1, -1, -1):
        scale = 2.0 ** (-i / 2) if ndim == 1 else 2.0**-i
        if ndim == 1:
            details[i] = scale * 0.5 * (s[0::2] - s[1::2])
        else:
            a, b = s[0::2, 0::2], s[0::2, 1::2]
            c, d = s[1::2, 0::2], s[1::2, 1::2]
            details[i] = (scale * 0.25) * np.stack(
                [a - b + c - d, a + b - c - d, a - b - c + d]
            )
        s = _pool_once(s)
    scaling = s[0] if ndim == 1 else s[0, 0]
    return HaarPyramid(scaling, tuple(details), ndim)


def haar_synthesize(pyramid):
    """Inverse of :func:`haar_analyze`."""
    if not isinstance(pyramid, HaarPyramid):
        raise ShapeError("expected a HaarPyramid")
    ndim = pyramid.ndim
    s = np.full((1,) * ndim, pyramid.scaling)
    for i, band in enumerate(pyramid.details):
        if ndim == 1:
            d = (2.0 ** (i / 2)) * band
            out = np.empty(2 * s.size)
            out[0::2] = s + d
            out[1::2] = s - d
        else:
            h, v, dd = (2.0**i) * band
            n = s.shape[0]
            out = np.empty((2 * n, 2 * n))
            out[0::2, 0::2] = s + h + v + dd
            out[0::2, 1::2] = s - h + v - dd
            out[1::2, 0::2] = s + h - v - dd
            out[1::2, 1::2] = s - h - v + dd
        s = out
    return s


def project_coarse(pyramid, target):
    """Drop every detail band at or above ``target`` (coordinate projection)."""
    if not 0 <= target <= pyramid.level:
        raise LevelRangeError(
            f"target level {target} outside [0, {pyramid.level}]"
        )
    return HaarPyramid(pyramid.scaling, pyramid.details[:target], pyramid.ndim)


def function_norm(x):
    """L2 norm of the piecewise-constant function with pixel values ``x``."""
    x = np.asarray(x, dtype=np.float64)
    return math.sqrt(float(np.mean(x * x)))


def verify_conjugacy(x):
    """``||analyze(pool(x)) - project(analyze(x), J - 1)||`` in coefficient space."""
    x = np.asarray(x, dtype=np.float64)
    level, _ = signal_level(x)
    if level == 0:
        raise CoarsestError("conjugacy needs a signal of level >= 1")
    lhs = haar_analyze(average_pool(x)).to_vector()
    rhs = project_coarse(haar_analyze(x), level - 1).to_vector()
    return float(np.linalg.norm(lhs - rhs))


def subspace_energy(pyramid):
    """Energy fractions ``[scaling, band_0, ..., band_{J-1}]`` summing to one."""
    parts = np.concatenate([[pyramid.scaling**2], pyramid.band_energies()])
    total = parts.sum()
    if total == 0.0:
        raise DomainError("energy fractions are undefined for the zero function")
    return parts / total


# -- serialisation ---------------------------------------------------------


def save_pyramid(path, pyramid):
    with open(path, "w") as fh:
        json.dump(pyramid.to_dict(), fh)


def load_pyramid(path):
    with open(path) as fh:
        return HaarPyramid.from_dict(json.load(fh))


def read_csv_signal(path):
    """One signal per file: a single row (1D) or a square block of rows (2D)."""
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(v) for v in line.split(",")])
    arr = np.array(rows[0] if len(rows) == 1 else rows, dtype=np.float64)
    signal_level(arr)
    return arr


def write_csv_signal(path, x):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with open(path, "w") as fh:
        for row in x:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
