"""Driving noise: Brownian increments and a marked Poisson random measure.

Jump times are sampled exactly (exponential inter-arrivals per mark) and are
not snapped to the grid; every ``dt`` integral uses left-endpoint quadrature
on the grid nodes.  Per-path random streams come from a Philox counter-based
generator whose counter's top word is the path index, so path ``i`` is a pure
function of ``(seed, i)`` no matter how many paths are drawn or in what order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

SCHEME = "philox4x64-path-counter-v1"

__all__ = [
    "SCHEME",
    "TimeGrid",
    "MarkSpace",
    "NoisePath",
    "PathEnsemble",
    "sample_ensemble",
    "sample_path",
    "compensated_integral",
    "compensated_integral_ensemble",
    "estimate_norms",
    "write_ensemble_csv",
    "read_ensemble_csv",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_N = T``."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValueError(f"horizon must be positive and finite, got {self.horizon}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n_steps + 1, dtype=float) * self.dt
        t[-1] = self.horizon
        return _frozen(t)

    def step_of(self, times) -> np.ndarray:
        """Index ``k`` of the step ``(t_k, t_{k+1}]`` containing each time."""
        k = np.searchsorted(self.nodes, np.asarray(times, dtype=float), side="left") - 1
        return np.clip(k, 0, self.n_steps - 1)


@dataclass(frozen=True)
class MarkSpace:
    """Finite discretisation of the mark space with intensities ``lambda_i``."""

    marks: tuple[float, ...] = ()
    intensities: tuple[float, ...] = ()

    def __post_init__(self):
        marks = tuple(float(e) for e in self.marks)
        lam = tuple(float(x) for x in self.intensities)
        if len(marks) != len(lam):
            raise ValueError("marks and intensities must have equal length")
        for e, l in zip(marks, lam):
            if e == 0 or not np.isfinite(e):
                raise ValueError(f"marks must be finite and nonzero, got {e}")
            if not (l > 0) or not np.isfinite(l):
                raise ValueError(f"intensities must be positive and finite, got {l}")
        if not np.isfinite(sum(l * min(1.0, e * e) for e, l in zip(marks, lam))):
            raise ValueError("integral of (1 ^ |e|^2) against lambda is not finite")
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "intensities", lam)

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> MarkSpace:
        pairs = list(pairs)
        return cls(tuple(p[0] for p in pairs), tuple(p[1] for p in pairs))

    @property
    def size(self) -> int:
        return len(self.marks)

    @property
    def total_intensity(self) -> float:
        return float(sum(self.intensities))

    @property
    def e(self) -> np.ndarray:
        return np.asarray(self.marks, dtype=float)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.intensities, dtype=float)


@dataclass(frozen=True)
class NoisePath:
    """One realisation: ``(N, d)`` Brownian increments and sorted jump events."""

    brownian_increments: np.ndarray
    jump_times: np.ndarray
    jump_marks: np.ndarray

    def __post_init__(self):
        dw = np.asarray(self.brownian_increments, dtype=float)
        if dw.ndim == 1:
            dw = dw[:, None]
        times = np.asarray(self.jump_times, dtype=float).reshape(-1)
        idx = np.asarray(self.jump_marks, dtype=np.int64).reshape(-1)
        if times.shape != idx.shape:
            raise ValueError("jump_times and jump_marks must have equal length")
        if times.size and np.any(np.diff(times) < 0):
            raise ValueError("jump times must be sorted")
        if times.size and times[0] <= 0:
            raise ValueError("jump times must lie in (0, T]")
        object.__setattr__(self, "brownian_increments", _frozen(dw))
        object.__setattr__(self, "jump_times", _frozen(times))
        object.__setattr__(self, "jump_marks", _frozen(idx))

    @property
    def jump_events(self) -> list[tuple[float, int]]:
        return list(zip(self.jump_times.tolist(), self.jump_marks.tolist()))

    def check_against(self, grid: TimeGrid, marks: MarkSpace) -> None:
        if self.brownian_increments.shape[0] != grid.n_steps:
            raise ValueError("path length does not match grid")
        if self.jump_times.size and self.jump_times[-1] > grid.horizon:
            raise ValueError("jump time beyond horizon")
        if self.jump_marks.size and (self.jump_marks.min() < 0 or self.jump_marks.max() >= marks.size):
            raise ValueError("mark index out of range")


def _path_generator(seed: int, index: int) -> np.random.Generator:
    # Philox counter layout: words 0..2 are the running block counter, word 3 the path index.
    bitgen = np.random.Philox(key=seed, counter=[0, 0, 0, index])
    return np.random.Generator(bitgen)


def sample_path(grid: TimeGrid, marks: MarkSpace, d: int, seed: int, index: int) -> NoisePath:
    """Draw path ``index`` of the ensemble keyed by ``seed``."""
    rng = _path_generator(seed, index)
    dw = rng.standard_normal((grid.n_steps, d)) * np.sqrt(grid.dt)
    times: list[float] = []
    which: list[int] = []
    for i, lam in enumerate(marks.intensities):
        s = rng.exponential(1.0 / lam)
        while s <= grid.horizon:
            times.append(s)
            which.append(i)
            s += rng.exponential(1.0 / lam)
    order = np.argsort(times, kind="stable")
    return NoisePath(dw, np.asarray(times, dtype=float)[order], np.asarray(which, dtype=np.int64)[order])


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """A seeded ensemble of ``M`` noise paths stored as stacked arrays.

    ``dW`` has shape ``(M, N, d)``; jumps are flat arrays ``jump_path``,
    ``jump_time``, ``jump_mark`` sorted by path then time.
    """

    grid: TimeGrid
    mark_space: MarkSpace
    brownian_dim: int
    dW: np.ndarray
    jump_path: np.ndarray
    jump_time: np.ndarray
    jump_mark: np.ndarray
    seed: int | None = None
    scheme: str = SCHEME
    _views: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.dW.ndim != 3 or self.dW.shape[1:] != (self.grid.n_steps, self.brownian_dim):
            raise ValueError(f"dW has shape {self.dW.shape}, expected (M, {self.grid.n_steps}, {self.brownian_dim})")
        for name in ("dW", "jump_path", "jump_time", "jump_mark"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @classmethod
    def from_paths(cls, grid, marks, paths: Sequence[NoisePath], seed=None, scheme="explicit") -> PathEnsemble:
        for p in paths:
            p.check_against(grid, marks)
        d = paths[0].brownian_increments.shape[1]
        counts = [p.jump_times.size for p in paths]
        return cls(
            grid=grid,
            mark_space=marks,
            brownian_dim=d,
            dW=np.stack([p.brownian_increments for p in paths]),
            jump_path=np.repeat(np.arange(len(paths)), counts),
            jump_time=np.concatenate([p.jump_times for p in paths]) if paths else np.zeros(0),
            jump_mark=np.concatenate([p.jump_marks for p in paths]).astype(np.int64),
            seed=seed,
            scheme=scheme,
        )

    @property
    def n_paths(self) -> int:
        return self.dW.shape[0]

    @property
    def key(self) -> tuple:
        """Identity used to check two solutions live on the same ensemble."""
        return (self.seed, self.scheme, self.n_paths, self.grid, self.mark_space, self.brownian_dim, id(self) if self.seed is None else 0)

    def path(self, i: int) -> NoisePath:
        sel = self.jump_path == i
        return NoisePath(self.dW[i], self.jump_time[sel], self.jump_mark[sel])

    @property
    def paths(self) -> list[NoisePath]:
        return [self.path(i) for i in range(self.n_paths)]

    def _cached(self, name, fn):
        if name not in self._views:
            self._views[name] = _frozen(fn())
        return self._views[name]

    @property
    def W(self) -> np.ndarray:
        """Brownian motion at the nodes, shape ``(M, N+1, d)``."""
        def build():
            w = np.zeros((self.n_paths, self.grid.n_steps + 1, self.brownian_dim))
            np.cumsum(self.dW, axis=1, out=w[:, 1:])
            return w
        return self._cached("W", build)

    @property
    def jump_counts(self) -> np.ndarray:
        """Jumps of each mark inside ``(t_k, t_{k+1}]``, shape ``(M, N, m)``."""
        def build():
            out = np.zeros((self.n_paths, self.grid.n_steps, self.mark_space.size))
            if self.jump_time.size:
                k = self.grid.step_of(self.jump_time)
                np.add.at(out, (self.jump_path, k, self.jump_mark), 1.0)
            return out
        return self._cached("dN", build)

    @property
    def counts_at_nodes(self) -> np.ndarray:
        """Cumulative jump counts per mark at each node, shape ``(M, N+1, m)``."""
        def build():
            c = np.zeros((self.n_paths, self.grid.n_steps + 1, self.mark_space.size))
            np.cumsum(self.jump_counts, axis=1, out=c[:, 1:])
            return c
        return self._cached("N", build)

    @property
    def compensated_increments(self) -> np.ndarray:
        """``dN - lambda * dt`` per step and mark, shape ``(M, N, m)``."""
        return self._cached("dmu", lambda: self.jump_counts - self.mark_space.lam * self.grid.dt)


def sample_ensemble(grid: TimeGrid, marks: MarkSpace, d: int, n_paths: int, seed: int) -> PathEnsemble:
    """Draw ``n_paths`` independent noise paths; bit-identical for equal inputs."""
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if d < 1:
        raise ValueError("brownian dimension must be >= 1")
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    paths = [sample_path(grid, marks, d, int(seed), i) for i in range(n_paths)]
    return PathEnsemble.from_paths(grid, marks, paths, seed=int(seed), scheme=SCHEME)


def _compensator(grid: TimeGrid, marks: MarkSpace, integrand, up_to: float) -> float:
    total = 0.0
    for k in range(grid.n_steps):
        t0 = grid.nodes[k]
        if t0 >= up_to:
            break
        width = min(grid.nodes[k + 1], up_to) - t0
        for e, lam in zip(marks.marks, marks.intensities):
            total += integrand(t0, e) * lam * width
    return total


def compensated_integral(path: NoisePath, grid: TimeGrid, marks: MarkSpace,
                         integrand: Callable[[float, float], float], up_to: float | None = None) -> float:
    """Integral of ``integrand`` against the compensated measure on ``(0, up_to]``."""
    up_to = grid.horizon if up_to is None else float(up_to)
    if not 0 < up_to <= grid.horizon:
        raise ValueError("up_to must lie in (0, T]")
    jumps = sum(integrand(s, marks.marks[i]) for s, i in path.jump_events if s <= up_to)
    return float(jumps - _compensator(grid, marks, integrand, up_to))


def compensated_integral_ensemble(ens: PathEnsemble, integrand, up_to: float | None = None) -> np.ndarray:
    """Vector of :func:`compensated_integral` over every path of ``ens``.

    The integrand is deterministic, so the compensator is computed once.
    """
    grid, marks = ens.grid, ens.mark_space
    up_to = grid.horizon if up_to is None else float(up_to)
    if not 0 < up_to <= grid.horizon:
        raise ValueError("up_to must lie in (0, T]")
    out = np.zeros(ens.n_paths)
    sel = ens.jump_time <= up_to
    vals = np.array([integrand(s, marks.marks[i]) for s, i in zip(ens.jump_time[sel], ens.jump_mark[sel])], dtype=float)
    np.add.at(out, ens.jump_path[sel], vals)
    return out - _compensator(grid, marks, integrand, up_to)


def estimate_norms(values, kind: str, grid: TimeGrid, marks: MarkSpace | None = None) -> float:
    """Ensemble estimate of a squared S2, H2 or L2(mu~) norm.

    ``values`` is ``(M, K)`` or ``(M, K, q)`` with ``K`` equal to ``N`` or
    ``N+1``; a trailing axis is summed in the squared Euclidean sense, except
    for ``L2_jump`` where it indexes marks and is weighted by the intensities.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[None, :]
    if v.shape[1] not in (grid.n_steps, grid.n_steps + 1):
        raise ValueError("values are not defined on the grid")
    if kind == "S2":
        sq = v**2 if v.ndim == 2 else (v**2).sum(axis=-1)
        return float(sq.max(axis=1).mean())
    v = v[:, : grid.n_steps]
    if kind == "H2":
        sq = v**2 if v.ndim == 2 else (v**2).sum(axis=-1)
    elif kind == "L2_jump":
        if marks is None or v.ndim != 3 or v.shape[2] != marks.size:
            raise ValueError("L2_jump needs values indexed by mark and a matching MarkSpace")
        sq = (v**2 * marks.lam).sum(axis=-1)
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    return float((sq.sum(axis=1) * grid.dt).mean())


# Ensemble dump: two CSV files.
#   increments.csv: path,step,dW_1,...,dW_d
#   jumps.csv:      path,time,mark
def write_ensemble_csv(ens: PathEnsemble, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    inc = directory / "increments.csv"
    with open(inc, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "step"] + [f"dW_{j + 1}" for j in range(ens.brownian_dim)])
        for p in range(ens.n_paths):
            for k in range(ens.grid.n_steps):
                w.writerow([p, k] + [repr(float(x)) for x in ens.dW[p, k]])
    jumps = directory / "jumps.csv"
    with open(jumps, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "time", "mark"])
        for p, s, i in zip(ens.jump_path.tolist(), ens.jump_time.tolist(), ens.jump_mark.tolist()):
            w.writerow([p, repr(s), i])
    return [inc, jumps]


def read_ensemble_csv(directory, grid: TimeGrid, marks: MarkSpace) -> PathEnsemble:
    directory = Path(directory)
    with open(directory / "increments.csv", newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    d = len(rows[0]) - 2
    M = max(int(r[0]) for r in rows) + 1
    dw = np.zeros((M, grid.n_steps, d))
    for r in rows:
        dw[int(r[0]), int(r[1])] = [float(x) for x in r[2:]]
    with open(directory / "jumps.csv", newline="") as fh:
        jrows = list(csv.reader(fh))[1:]
    return PathEnsemble(
        grid=grid,
        mark_space=marks,
        brownian_dim=d,
        dW=dw,
        jump_path=np.array([int(r[0]) for r in jrows], dtype=np.int64),
        jump_time=np.array([float(r[1]) for r in jrows], dtype=float),
        jump_mark=np.array([int(r[2]) for r in jrows], dtype=np.int64),
        seed=None,
        scheme="csv",
    )
