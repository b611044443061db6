"""Lipschitz lower approximations of a driver by inf-convolution.

``f_n(x) = inf_{x'} f(x') + n (|y - y'| + |z - z'| + |u - u'|_lambda)`` is
computed as a minimum over a deterministic candidate set: a coarse lattice
on a box around ``x`` followed by halving-radius lattices around the
incumbent.  The query point itself is always a candidate, so the computed
value never exceeds ``f(x)``.  Only the arguments the driver reads are
searched; along the others the infimum is attained at zero distance.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .spec import GeneratorSpec
from .validate import Box

__all__ = ["LipschitzApprox", "inf_convolution", "PropertyReport", "check_fn_properties"]

_CHUNK = 400_000


@dataclass(frozen=True)
class LipschitzApprox:
    """The ``n``-th inf-convolution of ``base``.

    The search box radius is ``(2 F(x) + 1) / (n - L)`` when the base driver
    declares a growth process (``F`` the growth bound, ``L`` the largest of
    gamma, rho, sigma at ``t``) and ``n > L``; otherwise
    ``search_box_radius``.  Batch evaluation rounds arguments to multiples of
    ``rounding`` and evaluates each distinct rounded point once.
    """

    base: GeneratorSpec
    n: float
    search_box_radius: float = 10.0
    coarse_points_per_axis: int = 11
    refinement_rounds: int = 24
    rounding: float = 1e-9

    def __post_init__(self):
        if not self.n >= 1:
            raise ValueError("n must be >= 1")
        if not self.search_box_radius > 0:
            raise ValueError("search box radius must be positive")
        if self.coarse_points_per_axis < 3:
            raise ValueError("need at least 3 coarse points per axis")
        if self.refinement_rounds < 0:
            raise ValueError("refinement_rounds must be >= 0")
        if not self.rounding >= 0:
            raise ValueError("rounding must be >= 0")

    def with_n(self, n: float) -> LipschitzApprox:
        return replace(self, n=n)

    # shape conventions follow GeneratorSpec.__call__
    def __call__(self, t, y, z, u):
        env = self.base.env(t, y, z, u)
        shape = env.y.shape
        q = int(np.prod(shape)) if shape else 1
        d, m = self.base.brownian_dim, self.base.m
        tt = np.broadcast_to(np.asarray(t, dtype=float), shape).reshape(q)
        pts = np.concatenate([tt[:, None], env.y.reshape(q, 1), env.z.reshape(q, d), env.u.reshape(q, m)], axis=1)
        if self.rounding > 0:
            pts = np.round(pts / self.rounding) * self.rounding
            pts[:, 0] = tt
        uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
        vals = _search(self, uniq[:, 0], uniq[:, 1], uniq[:, 2:2 + d], uniq[:, 2 + d:])[0]
        return vals[inverse.reshape(-1)].reshape(shape)


def _active_axes(spec: GeneratorSpec) -> list[int]:
    """Column indices into the packed point ``(y, z_1..z_d, u_1..u_m)``."""
    v = spec.expr.variables()
    d, m = spec.brownian_dim, spec.m
    axes = [0] if "y" in v else []
    axes += [1 + j for j in range(d) if f"z{j}" in v]
    axes += [1 + d + i for i in range(m) if "u*" in v or f"u{i}" in v]
    return axes


def _lattice(points: int, k: int) -> np.ndarray:
    ticks = np.linspace(-1.0, 1.0, points)
    return np.array(list(itertools.product(ticks, repeat=k)), dtype=float).reshape(-1, k)


def _distance(spec: GeneratorSpec, x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Packed-point distance ``|dy| + |dz|_2 + |du|_lambda`` with broadcasting."""
    d = spec.brownian_dim
    diff = c - x
    out = np.abs(diff[..., 0])
    if d:
        out = out + np.sqrt((diff[..., 1:1 + d] ** 2).sum(axis=-1))
    if spec.m:
        out = out + np.sqrt((diff[..., 1 + d:] ** 2 * spec.marks.lam).sum(axis=-1))
    return out


def _radius(approx: LipschitzApprox, t, x) -> np.ndarray:
    spec = approx.base
    r = np.full(x.shape[0], approx.search_box_radius)
    if spec.growth is None:
        return r
    d = spec.brownian_dim
    L = np.maximum.reduce([spec.coeffs.gamma(t), spec.coeffs.rho(t), spec.coeffs.sigma(t)])
    F = spec.growth_bound(t, x[:, 0], x[:, 1:1 + d], x[:, 1 + d:])
    ok = approx.n > L
    r[ok] = (2.0 * F[ok] + 1.0) / (approx.n - L[ok])
    return r


def _search(approx: LipschitzApprox, t, y, z, u, keep: bool = False):
    """Minimise over candidates for ``Q`` query points.

    Returns ``(values, cands, fvals)`` where, if ``keep``, ``cands`` is
    ``(Q, C, 1+d+m)`` and ``fvals`` is ``(Q, C)`` covering every candidate.
    """
    spec, n = approx.base, float(approx.n)
    d, m = spec.brownian_dim, spec.m
    q = np.asarray(y).size
    x = np.concatenate([np.asarray(y, float).reshape(q, 1), np.asarray(z, float).reshape(q, d),
                        np.asarray(u, float).reshape(q, m)], axis=1)
    t = np.broadcast_to(np.asarray(t, dtype=float), (q,))
    axes = _active_axes(spec)
    f_x = spec(t, x[:, 0], x[:, 1:1 + d], x[:, 1 + d:])
    if not axes:
        return (f_x, x[:, None, :], f_x[:, None]) if keep else (f_x, None, None)
    axis_scale = np.ones(1 + d + m)
    if m:
        axis_scale[1 + d:] = 1.0 / np.sqrt(spec.marks.lam)
    axis_scale = axis_scale[axes]
    pts = approx.coarse_points_per_axis | 1
    lattice = _lattice(pts, len(axes))
    radius = _radius(approx, t, x)
    best = f_x.copy()
    center = x[:, axes].copy()
    kept_c, kept_f = ([x[:, None, :]], [f_x[:, None]]) if keep else (None, None)
    step = max(1, _CHUNK // len(lattice))
    for r in range(approx.refinement_rounds + 1):
        rad = radius / 2.0**r
        for lo in range(0, q, step):
            sl = slice(lo, min(q, lo + step))
            cand = np.repeat(x[sl, None, :], len(lattice), axis=1)
            cand[:, :, axes] = center[sl, None, :] + rad[sl, None, None] * axis_scale * lattice
            fv = spec(t[sl, None], cand[..., 0], cand[..., 1:1 + d], cand[..., 1 + d:])
            val = fv + n * _distance(spec, x[sl, None, :], cand)
            j = np.argmin(val, axis=1)
            rows = np.arange(j.size)
            better = val[rows, j] < best[sl]
            best[sl] = np.where(better, val[rows, j], best[sl])
            center[sl] = np.where(better[:, None], cand[rows, j][:, axes], center[sl])
            if keep:
                kept_c.append(cand)
                kept_f.append(fv)
    if keep:
        # chunks were appended per round in query order; regroup by query
        cands = _regroup(kept_c, q)
        fvals = _regroup(kept_f, q)
        return best, cands, fvals
    return best, None, None


def _regroup(parts: list, q: int) -> np.ndarray:
    rows = 0
    by_round: list = []
    cur: list = []
    for p in parts[1:]:
        cur.append(p)
        rows += p.shape[0]
        if rows == q:
            by_round.append(np.concatenate(cur, axis=0))
            cur, rows = [], 0
    out = [parts[0]] + by_round
    return np.concatenate(out, axis=1)


def inf_convolution(approx: LipschitzApprox, t: float, y: float, z, u) -> float:
    """Scalar ``f_n(t, y, z, u)``."""
    spec = approx.base
    zz = np.asarray(z, dtype=float)
    zz = np.full(spec.brownian_dim, float(zz)) if zz.ndim == 0 else zz
    uu = np.asarray(u, dtype=float) if spec.m else np.zeros(0)
    uu = np.full(spec.m, float(uu)) if uu.ndim == 0 else uu
    return float(_search(approx, np.array([float(t)]), np.array([float(y)]), zz[None, :], uu[None, :])[0][0])


@dataclass
class PropertyReport:
    """``points`` rows are ``(t, y, z_1..z_d, u_1..u_m)``; ``values[n]`` holds ``f_n`` there."""

    n_list: list
    items: dict = field(default_factory=dict)
    gaps: dict = field(default_factory=dict)
    points: np.ndarray | None = field(default=None, repr=False)
    f_values: np.ndarray | None = field(default=None, repr=False)
    values: dict = field(default_factory=dict, repr=False)

    @property
    def passed(self) -> bool:
        return all(v["verdict"] in ("PASS", "SKIPPED") for v in self.items.values())

    def to_json(self) -> dict:
        return {"n_list": list(self.n_list), "items": self.items, "gaps": {str(k): v for k, v in self.gaps.items()}}


def _min_over(fvals, dists, n):
    return (fvals + n * dists).min(axis=1)


def check_fn_properties(spec: GeneratorSpec, n_list, sample_budget: int = 1000, box: Box = Box(),
                        seed: int = 0, grid_tol: float = 1e-3, slope_tol: float = 1e-2,
                        lipschitz_const: float | None = None, fd_step: float = 1e-3,
                        search_box_radius: float = 10.0, coarse_points_per_axis: int = 11,
                        refinement_rounds: int = 24, block: int = 100) -> PropertyReport:
    """Sampled check of growth, monotonicity in n, convergence and the n-Lipschitz property.

    Every ``f_n`` at a point is a minimum over one shared candidate set (the
    union of the searches for all ``n``), which makes ``f_n <= f`` and the
    monotonicity in ``n`` hold exactly.  The Lipschitz item pairs ``x`` with a
    nearby ``x'`` and evaluates both over the union of their candidates.
    """
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be increasing")
    rng = np.random.default_rng(seed)
    d, m = spec.brownian_dim, spec.m
    q = sample_budget
    t = rng.uniform(*box.t, size=q)
    x = np.concatenate([rng.uniform(*box.y, size=(q, 1)), rng.uniform(*box.z, size=(q, d)),
                        rng.uniform(*box.u, size=(q, m))], axis=1)
    axes = _active_axes(spec)
    direction = np.zeros_like(x)
    if axes:
        raw = rng.standard_normal((q, len(axes)))
        direction[:, axes] = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    width = max(box.y[1] - box.y[0], box.z[1] - box.z[0])
    x2 = x + fd_step * width * direction
    approx0 = LipschitzApprox(spec, n_list[0], search_box_radius, coarse_points_per_axis, refinement_rounds)

    values = {n: np.empty(q) for n in n_list}
    pair = {n: np.empty((q, 2)) for n in n_list}
    for lo in range(0, q, block):
        sl = slice(lo, min(q, lo + block))
        c1, f1, c2, f2 = [], [], [], []
        for n in n_list:
            a = approx0.with_n(n)
            _, c, f = _search(a, t[sl], x[sl, 0], x[sl, 1:1 + d], x[sl, 1 + d:], keep=True)
            c1.append(c)
            f1.append(f)
            _, c, f = _search(a, t[sl], x2[sl, 0], x2[sl, 1:1 + d], x2[sl, 1 + d:], keep=True)
            c2.append(c)
            f2.append(f)
        C1, F1 = np.concatenate(c1, axis=1), np.concatenate(f1, axis=1)
        D1 = _distance(spec, x[sl, None, :], C1)
        for n in n_list:
            values[n][sl] = _min_over(F1, D1, n)
        Cu = np.concatenate([C1] + c2, axis=1)
        Fu = np.concatenate([F1] + f2, axis=1)
        Da = _distance(spec, x[sl, None, :], Cu)
        Db = _distance(spec, x2[sl, None, :], Cu)
        for n in n_list:
            pair[n][sl, 0] = _min_over(Fu, Da, n)
            pair[n][sl, 1] = _min_over(Fu, Db, n)
    f_x = spec(t, x[:, 0], x[:, 1:1 + d], x[:, 1 + d:])

    report = PropertyReport(n_list)
    # (i) linear growth
    if spec.growth is not None:
        bound = spec.growth_bound(t, x[:, 0], x[:, 1:1 + d], x[:, 1 + d:])
        worst = max(float(np.max(np.abs(values[n]) - bound)) for n in n_list)
        report.items["growth"] = {"verdict": "PASS" if worst <= 1e-9 else "FAIL", "worst_excess": worst}
    else:
        report.items["growth"] = {"verdict": "SKIPPED", "reason": "no growth process declared"}
    above = max(float(np.max(values[n] - f_x)) for n in n_list)
    report.items["below_f"] = {"verdict": "PASS" if above <= 0.0 else "FAIL", "worst_excess": above}
    # (ii) monotone in n
    drops = [float(np.max(values[a] - values[b])) for a, b in zip(n_list, n_list[1:])]
    worst_drop = max(drops, default=0.0)
    report.items["monotone_in_n"] = {"verdict": "PASS" if worst_drop <= 0.0 else "FAIL", "worst_drop": worst_drop}
    # (iii) convergence
    report.gaps = {n: float(np.max(f_x - values[n])) for n in n_list}
    gaps = [report.gaps[n] for n in n_list]
    nonincreasing = all(b <= a for a, b in zip(gaps, gaps[1:]))
    item = {"gaps": gaps, "nonincreasing": nonincreasing, "grid_tol": grid_tol}
    if lipschitz_const is not None and n_list[-1] >= lipschitz_const:
        ok = nonincreasing and gaps[-1] <= grid_tol
    else:
        ok = nonincreasing
    item["verdict"] = "PASS" if ok else "FAIL"
    report.items["convergence"] = item
    # (iv) n-Lipschitz in the metric |dy| + |dz| + |du|_lambda
    dist_pair = _distance(spec, x, x2)
    slopes, ok = {}, True
    for n in n_list:
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(dist_pair > 0, np.abs(pair[n][:, 0] - pair[n][:, 1]) / dist_pair, 0.0)
        slopes[n] = float(np.max(s))
        ok &= slopes[n] <= n * (1 + slope_tol)
    report.items["lipschitz"] = {"verdict": "PASS" if ok else "FAIL",
                                 "max_slope": {str(k): v for k, v in slopes.items()}, "slope_tol": slope_tol}
    report.points = np.concatenate([t[:, None], x], axis=1)
    report.f_values = f_x
    report.values = values
    return report
