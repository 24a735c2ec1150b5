"""Multi-resolution diffusion bridges.

States live in the flat Haar pyramid layout of :mod:`multires.wavelet`.
During interval ``[t_j, t_{j+1})`` only the first ``coarse_dim(level_j)``
coordinates evolve; the rest stay exactly zero.  At ``t_{j+1}`` the state is
embedded into the next level by zero-filling the new detail coordinates,
which is piecewise-constant upsampling in pixel space.

Coefficients are evaluated on the active coordinates only.  Each interval
holds four function specs:

``drift1``, ``drift2``
    the two drift parts of ``dZ = (mu1 + mu2) dt + sigma dW``;
``diffusion``
    ``sigma``, applied to the Brownian increment;
``growth``
    an extra drift added in the first half-step of the VDVAE cell only.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import rng as crng
from .wavelet import coarse_dim

CELLS = ("em", "vdvae", "nvae")


class BridgeError(ValueError):
    pass


class PartitionError(BridgeError):
    pass


class DivergenceError(ArithmeticError):
    pass


# -- coefficient specs -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class FunctionSpec:
    """A drift or diffusion coefficient on ``d`` active coordinates.

    kinds:
        ``zero``
        ``constant``  value: scalar, ``(d,)`` vector, or (diffusion only) ``(d, d)`` matrix
        ``linear``    matrix: scalar, ``(d,)`` diagonal or ``(d, d)``; offset: scalar or ``(d,)``
        ``tabulated`` values: one row per step (scalar or ``(d,)``), last row repeats
    """

    kind: str = "zero"
    value: object = None
    matrix: object = None
    offset: object = None
    values: object = None

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "linear", "tabulated"):
            raise BridgeError(f"unknown coefficient kind {self.kind!r}")
        for name in ("value", "matrix", "offset", "values"):
            v = getattr(self, name)
            if v is not None:
                a = np.array(v, dtype=np.float64)
                a.setflags(write=False)
                object.__setattr__(self, name, a)
        if self.kind == "constant" and self.value is None:
            raise BridgeError("constant spec needs a value")
        if self.kind == "linear" and self.matrix is None:
            raise BridgeError("linear spec needs a matrix")
        if self.kind == "tabulated" and (self.values is None or self.values.ndim == 0):
            raise BridgeError("tabulated spec needs a list of values")

    def check_dim(self, d):
        for name in ("value", "matrix", "offset"):
            a = getattr(self, name)
            if a is None or a.ndim == 0:
                continue
            if a.shape[0] != d or (a.ndim == 2 and a.shape != (d, d)) or a.ndim > 2:
                raise BridgeError(f"{name} of shape {a.shape} does not match dimension {d}")
        if self.values is not None and self.values.ndim == 2 and self.values.shape[1] != d:
            raise BridgeError(f"tabulated rows of width {self.values.shape[1]} do not match {d}")

    @staticmethod
    def _mul(a, z):
        if a.ndim == 2:
            return z @ a.T
        return z * a

    def drift(self, z, step=0):
        if self.kind == "zero":
            return np.zeros_like(z)
        if self.kind == "constant":
            return np.broadcast_to(self.value, z.shape).copy()
        if self.kind == "linear":
            out = self._mul(self.matrix, z)
            return out + self.offset if self.offset is not None else out
        row = self.values[min(step, len(self.values) - 1)]
        return np.broadcast_to(row, z.shape).copy()

    def noise(self, z, dw, step=0):
        """``sigma(z) dW`` for a batch of states and increments."""
        if self.kind == "zero":
            return np.zeros_like(z)
        if self.kind == "constant":
            return self._mul(self.value, dw)
        if self.kind == "linear":
            if self.matrix.ndim == 2:
                raise BridgeError("linear diffusion must be diagonal (scalar or vector)")
            scale = self.matrix * z
            if self.offset is not None:
                scale = scale + self.offset
            return scale * dw
        return self.values[min(step, len(self.values) - 1)] * dw

    def to_dict(self):
        d = {"kind": self.kind}
        for name in ("value", "matrix", "offset", "values"):
            a = getattr(self, name)
            if a is not None:
                d[name] = a.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return ZERO
        return cls(**{k: d[k] for k in ("kind", "value", "matrix", "offset", "values") if k in d})


ZERO = FunctionSpec("zero")


@dataclass(frozen=True)
class CellCoefficients:
    drift1: FunctionSpec = ZERO
    drift2: FunctionSpec = ZERO
    diffusion: FunctionSpec = ZERO
    growth: FunctionSpec = ZERO

    def check_dim(self, d):
        for spec in (self.drift1, self.drift2, self.diffusion, self.growth):
            spec.check_dim(d)

    def to_dict(self):
        return {k: getattr(self, k).to_dict() for k in ("drift1", "drift2", "diffusion", "growth")}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: FunctionSpec.from_dict(d.get(k)) for k in ("drift1", "drift2", "diffusion", "growth")})


# -- schedule and gluing ---------------------------------------------------


@dataclass(frozen=True)
class BridgeSchedule:
    """Times ``0 = t_0 < ... < t_J = T < 1`` and one level per interval."""

    times: tuple
    levels: tuple
    ndim: int = 1

    def __post_init__(self):
        t = tuple(float(v) for v in self.times)
        lv = tuple(int(v) for v in self.levels)
        if len(t) < 2 or t[0] != 0.0:
            raise PartitionError("schedule needs t_0 = 0 and at least one interval")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise PartitionError("schedule times must be strictly increasing")
        if t[-1] >= 1.0:
            raise PartitionError("schedule must end before 1")
        if len(lv) != len(t) - 1:
            raise PartitionError(f"{len(t) - 1} intervals but {len(lv)} levels")
        if any(v < 0 for v in lv) or any(b < a for a, b in zip(lv, lv[1:])):
            raise PartitionError("levels must be non-negative and non-decreasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "levels", lv)

    @classmethod
    def uniform(cls, n_levels, horizon=0.9, ndim=1):
        times = np.linspace(0.0, horizon, n_levels + 1)
        return cls(tuple(times), tuple(range(n_levels)), ndim)

    @property
    def horizon(self):
        return self.times[-1]

    @property
    def dim(self):
        return coarse_dim(self.levels[-1], self.ndim)

    def active_dim(self, j):
        return coarse_dim(self.levels[j], self.ndim)

    def intervals(self):
        return list(zip(self.times[:-1], self.times[1:]))

    def to_dict(self):
        return {"times": list(self.times), "levels": list(self.levels), "ndim": self.ndim}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["times"]), tuple(d["levels"]), int(d.get("ndim", 1)))


@dataclass(frozen=True)
class PiecewiseCoefficients:
    bounds: tuple
    cells: tuple
    homogeneous: bool = False
    levels: tuple = ()

    def index(self, t):
        """Interval containing ``t``; boundaries belong to the interval on their right."""
        if t < self.bounds[0] or t > self.bounds[-1]:
            raise BridgeError(f"time {t} outside [{self.bounds[0]}, {self.bounds[-1]}]")
        j = int(np.searchsorted(self.bounds, t, side="right")) - 1
        return min(j, len(self.cells) - 1)

    def at(self, t):
        return self.cells[self.index(t)]


def glue_coefficients(pieces, homogeneous=False, levels=None, ndim=1):
    """Glue ``[((start, end), CellCoefficients), ...]`` into one piecewise table.

    The intervals must tile ``[0, T]`` without gaps or overlaps.  With
    ``homogeneous=True`` every interval sharing a level must reference the
    same coefficient object (time-homogeneous weight sharing).
    """
    if not pieces:
        raise PartitionError("need at least one interval")
    bounds = [float(pieces[0][0][0])]
    if bounds[0] != 0.0:
        raise PartitionError("first interval must start at 0")
    cells = []
    for (start, end), cell in pieces:
        start, end = float(start), float(end)
        if start != bounds[-1]:
            kind = "gap" if start > bounds[-1] else "overlap"
            raise PartitionError(f"{kind} at t={bounds[-1]} (next interval starts at {start})")
        if end <= start:
            raise PartitionError(f"empty interval [{start}, {end})")
        bounds.append(end)
        cells.append(cell if isinstance(cell, CellCoefficients) else CellCoefficients.from_dict(cell))
    levels = tuple(levels) if levels is not None else ()
    if levels:
        if len(levels) != len(cells):
            raise PartitionError("one level per interval required")
        for lv, cell in zip(levels, cells):
            cell.check_dim(coarse_dim(lv, ndim))
    if homogeneous and levels:
        first = {}
        for lv, cell in zip(levels, cells):
            if first.setdefault(lv, cell) is not cell:
                raise PartitionError(f"homogeneous model has two coefficient sets at level {lv}")
    return PiecewiseCoefficients(tuple(bounds), tuple(cells), homogeneous, levels)


def coefficients_for(schedule, cells, homogeneous=False):
    """Glue per-interval cells (or a per-level dict when homogeneous) onto a schedule."""
    if isinstance(cells, dict):
        cells = [cells[lv] for lv in schedule.levels]
    if len(cells) != len(schedule.levels):
        raise PartitionError(f"{len(schedule.levels)} intervals but {len(cells)} coefficient sets")
    return glue_coefficients(
        list(zip(schedule.intervals(), cells)), homogeneous, schedule.levels, schedule.ndim
    )


# -- single steps ----------------------------------------------------------


def _finite_or_raise(z):
    if not np.all(np.isfinite(z)):
        raise DivergenceError("state became non-finite")
    return z


def em_step(z, coeffs, dt, dw, step=0):
    """Euler-Maruyama: ``z + (mu1 + mu2) dt + sigma dW``."""
    if dt <= 0:
        raise BridgeError("dt must be positive")
    z = np.asarray(z, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        out = z + (coeffs.drift1.drift(z, step) + coeffs.drift2.drift(z, step)) * dt
        out = out + coeffs.diffusion.noise(z, np.asarray(dw, dtype=np.float64), step)
    return _finite_or_raise(out)


def vdvae_cell_step(z, coeffs, dw, dt=1.0, step=0, growth=True):
    """Two-step split: stochastic half with ``mu1``, then deterministic ``mu2``.

    ``z1 = z + [g(z)] dt + mu1(z) dt + sigma(z) dW``, ``z' = z1 + mu2(z1) dt``
    where the growth drift ``g`` is used only when ``growth`` is true.
    """
    if dt <= 0:
        raise BridgeError("dt must be positive")
    z = np.asarray(z, dtype=np.float64)
    with np.errstate(over="ignore", invalid="ignore"):
        inc = coeffs.drift1.drift(z, step)
        if growth:
            inc = inc + coeffs.growth.drift(z, step)
        z1 = z + inc * dt + coeffs.diffusion.noise(z, np.asarray(dw, dtype=np.float64), step)
        out = z1 + coeffs.drift2.drift(z1, step) * dt
    return _finite_or_raise(out)


def nvae_cell_step(z, coeffs, dw, dt=1.0, step=0):
    """The VDVAE split without the growth term."""
    return vdvae_cell_step(z, coeffs, dw, dt=dt, step=step, growth=False)


STEPPERS = {
    "em": lambda z, c, dt, dw, k: em_step(z, c, dt, dw, k),
    "vdvae": lambda z, c, dt, dw, k: vdvae_cell_step(z, c, dw, dt, k),
    "nvae": lambda z, c, dt, dw, k: nvae_cell_step(z, c, dw, dt, k),
}


# -- trajectories ----------------------------------------------------------


@dataclass
class Trajectory:
    """Recorded states of one path, full pyramid layout.

    A resolution transition at ``t_j`` produces two records with the same
    time and state: the end of the coarse interval, then the embedded state
    tagged with the finer level.
    """

    times: np.ndarray
    states: np.ndarray
    levels: np.ndarray
    path: int
    seed: int
    ndim: int = 1
    diverged: bool = False
    diverged_at: float = None

    @property
    def norms(self):
        return np.linalg.norm(self.states, axis=1)

    def active_state(self, i):
        return self.states[i, : coarse_dim(int(self.levels[i]), self.ndim)]


def norm_trace(traj):
    """Per-record ``||Z_t||`` and the fraction of consecutive steps that increase.

    Duplicate records at a resolution transition are compared once.
    """
    norms = traj.norms
    keep = np.ones(len(norms), dtype=bool)
    keep[1:] = np.diff(traj.times) > 0
    series = norms[keep]
    if len(series) < 2:
        return norms, 0.0
    return norms, float(np.mean(np.diff(series) > 0))


def _noise(seed, paths, global_step, dim, dt):
    return np.sqrt(dt) * crng.normals(seed, paths, global_step, dim)


def _simulate_chunk(schedule, coeffs, steps, paths, cell, seed, z0=None):
    n, D = len(paths), schedule.dim
    step_fn = STEPPERS[cell]
    z = np.zeros((n, D)) if z0 is None else np.array(np.broadcast_to(z0, (n, D)), dtype=np.float64)
    alive = np.ones(n, dtype=bool)
    died = np.full(n, np.nan)
    n_rec = 1 + len(schedule.levels) * steps + (len(schedule.levels) - 1)
    times = np.empty(n_rec)
    levels = np.empty(n_rec, dtype=np.int64)
    states = np.empty((n_rec, n, D))
    r = 0

    def record(t, lv):
        nonlocal r
        times[r], levels[r] = t, lv
        states[r] = z
        r += 1

    record(0.0, schedule.levels[0])
    global_step = 0
    for j, (t0, t1) in enumerate(schedule.intervals()):
        lv = schedule.levels[j]
        d = schedule.active_dim(j)
        if j > 0:
            # new detail coordinates enter at zero
            record(t0, lv)
        cells = coeffs.cells[j]
        dt = (t1 - t0) / steps
        for k in range(steps):
            dw = _noise(seed, paths, global_step, D, dt)[:, :d]
            active = z[:, :d]
            with np.errstate(all="ignore"):
                try:
                    new = step_fn(active, cells, dt, dw, k)
                except DivergenceError:
                    new = _unchecked(cell, active, cells, dt, dw, k)
            bad = alive & ~np.all(np.isfinite(new), axis=1)
            died[bad] = t0 + (k + 1) * dt
            alive &= ~bad
            z[alive, :d] = new[alive]
            global_step += 1
            record(t0 + (k + 1) * dt if k + 1 < steps else t1, lv)
    return times, levels, states, died


def _unchecked(cell, z, coeffs, dt, dw, k):
    inc = coeffs.drift1.drift(z, k)
    if cell == "em":
        return z + (inc + coeffs.drift2.drift(z, k)) * dt + coeffs.diffusion.noise(z, dw, k)
    if cell == "vdvae":
        inc = inc + coeffs.growth.drift(z, k)
    z1 = z + inc * dt + coeffs.diffusion.noise(z, dw, k)
    return z1 + coeffs.drift2.drift(z1, k) * dt


def integrate(z0, coeffs, t_end, steps, n_paths, cell="em", seed=0):
    """Single-resolution integration of ``n_paths`` copies of ``z0`` over ``[0, t_end]``.

    Returns the terminal states, shape ``(n_paths, d)``.  Noise follows the
    same ``(seed, path, step)`` keying as :func:`simulate_bridge`.
    """
    if cell not in CELLS:
        raise BridgeError(f"cell must be one of {CELLS}")
    z0 = np.atleast_1d(np.asarray(z0, dtype=np.float64))
    coeffs.check_dim(z0.size)
    z = np.tile(z0, (n_paths, 1))
    paths = np.arange(n_paths)
    dt = t_end / steps
    step_fn = STEPPERS[cell]
    for k in range(steps):
        z = step_fn(z, coeffs, dt, _noise(seed, paths, k, z0.size, dt), k)
    return z


def _workers():
    try:
        return max(1, int(os.environ.get("MULTIRES_THREADS", "1")))
    except ValueError:
        return 1


def simulate_bridge(schedule, coeffs, steps_per_interval, n_paths, cell="em", seed=0, z0=None):
    """Simulate ``n_paths`` independent paths; returns a list of Trajectory.

    Paths start at zero (``z0`` overrides this for single-resolution tests).
    Noise for path ``p`` at global step ``s`` depends only on
    ``(seed, p, s)``, so results do not depend on chunking or worker count.
    """
    if steps_per_interval < 1 or n_paths < 1:
        raise BridgeError("steps_per_interval and n_paths must be >= 1")
    if cell not in CELLS:
        raise BridgeError(f"cell must be one of {CELLS}")
    if tuple(coeffs.bounds) != tuple(schedule.times):
        raise PartitionError("coefficient intervals do not match the schedule")
    for j in range(len(schedule.levels)):
        coeffs.cells[j].check_dim(schedule.active_dim(j))

    workers = min(_workers(), n_paths)
    chunks = np.array_split(np.arange(n_paths), workers)
    run = lambda ids: _simulate_chunk(schedule, coeffs, steps_per_interval, ids, cell, seed, z0)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(chunks[0])]

    out = []
    for ids, (times, levels, states, died) in zip(chunks, results):
        for i, p in enumerate(ids):
            keep = slice(None)
            diverged = bool(np.isfinite(died[i]))
            if diverged:
                keep = times <= died[i]
                keep = np.flatnonzero(keep)[:-1]
            out.append(
                Trajectory(
                    times=times[keep].copy(),
                    states=states[keep, i, :].copy(),
                    levels=levels[keep].copy(),
                    path=int(p),
                    seed=int(seed),
                    ndim=schedule.ndim,
                    diverged=diverged,
                    diverged_at=float(died[i]) if diverged else None,
                )
            )
    return out


def ensemble_summary(trajectories):
    ok = [tr for tr in trajectories if not tr.diverged]
    summary = {
        "n_paths": len(trajectories),
        "n_diverged": len(trajectories) - len(ok),
        "diverged_paths": [tr.path for tr in trajectories if tr.diverged],
    }
    if ok:
        norms = np.stack([tr.norms for tr in ok])
        fracs = [norm_trace(tr)[1] for tr in ok]
        summary.update(
            {
                "times": ok[0].times.tolist(),
                "levels": ok[0].levels.tolist(),
                "norm_mean": norms.mean(axis=0).tolist(),
                "norm_std": norms.std(axis=0).tolist(),
                "monotone_fraction_mean": float(np.mean(fracs)),
                "monotone_fractions": fracs,
            }
        )
    return summary


def write_trajectories_csv(path, trajectories):
    with open(path, "w") as fh:
        fh.write("time,path,norm,level\n")
        for tr in trajectories:
            for t, nrm, lv in zip(tr.times, tr.norms, tr.levels):
                fh.write(f"{t!r},{tr.path},{nrm!r},{lv}\n")


def load_schedule(path):
    with open(path) as fh:
        return BridgeSchedule.from_dict(json.load(fh))


def load_coefficients(path, schedule):
    """``{"homogeneous": bool, "intervals": [...]}`` or ``{"homogeneous": true, "levels": {lv: cell}}``."""
    with open(path) as fh:
        d = json.load(fh)
    homogeneous = bool(d.get("homogeneous", False))
    if "levels" in d:
        per_level = {int(k): CellCoefficients.from_dict(v) for k, v in d["levels"].items()}
        return coefficients_for(schedule, per_level, homogeneous=homogeneous)
    cells = [CellCoefficients.from_dict(c) for c in d["intervals"]]
    return coefficients_for(schedule, cells, homogeneous=homogeneous)
