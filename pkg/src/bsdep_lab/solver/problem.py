"""Terminal conditions and problem definitions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..generator import AssumptionError, GeneratorSpec
from ..noise import MarkSpace, PathEnsemble, TimeGrid

__all__ = ["Terminal", "BSDEPProblem", "G_FUNCTIONS"]

# whitelisted g for g(W_T) and g(jump count); "k" is an optional strike/shift
G_FUNCTIONS = {
    "identity": lambda x, k: x,
    "square": lambda x, k: x * x,
    "abs": lambda x, k: np.abs(x),
    "positive_part": lambda x, k: np.maximum(x - k, 0.0),
    "sin": lambda x, k: np.sin(x),
    "cos": lambda x, k: np.cos(x),
    "indicator_above": lambda x, k: (x > k).astype(float),
}


@dataclass(frozen=True)
class Terminal:
    """Closed-form terminal functional of a noise path.

    kinds: ``constant`` (value), ``brownian`` (g of W_T component),
    ``jump_count`` (g of the count of one mark, or of all marks when
    ``mark`` is None) and ``sum`` (weighted sum of ``terms``).
    """

    kind: str
    value: float = 0.0
    g: str = "identity"
    k: float = 0.0
    component: int = 0
    mark: int | None = None
    terms: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "brownian", "jump_count", "sum"):
            raise ValueError(f"unknown terminal kind {self.kind!r}")
        if self.kind in ("brownian", "jump_count") and self.g not in G_FUNCTIONS:
            raise ValueError(f"g must be one of {sorted(G_FUNCTIONS)}")

    @classmethod
    def constant(cls, c: float) -> Terminal:
        return cls("constant", value=float(c))

    @classmethod
    def brownian(cls, g: str = "identity", component: int = 0, k: float = 0.0) -> Terminal:
        return cls("brownian", g=g, component=component, k=k)

    @classmethod
    def jump_count(cls, g: str = "identity", mark: int | None = None, k: float = 0.0) -> Terminal:
        return cls("jump_count", g=g, mark=mark, k=k)

    @classmethod
    def combination(cls, *weighted: tuple[float, Terminal]) -> Terminal:
        return cls("sum", terms=tuple((float(w), t) for w, t in weighted))

    def __call__(self, ens: PathEnsemble, node: int | None = None) -> np.ndarray:
        """Values per path, reading the path up to ``node`` (default: the last)."""
        node = ens.grid.n_steps if node is None else node
        if self.kind == "constant":
            return np.full(ens.n_paths, self.value)
        if self.kind == "brownian":
            return G_FUNCTIONS[self.g](ens.W[:, node, self.component], self.k)
        if self.kind == "jump_count":
            counts = ens.counts_at_nodes[:, node, :]
            x = counts.sum(axis=1) if self.mark is None else counts[:, self.mark]
            return G_FUNCTIONS[self.g](x, self.k)
        return sum((w * t(ens, node) for w, t in self.terms), np.zeros(ens.n_paths))

    def check_arity(self, d: int, m: int) -> None:
        if self.kind == "brownian" and self.component >= d:
            raise ValueError(f"terminal reads W component {self.component} but d = {d}")
        if self.kind == "jump_count" and self.mark is not None and self.mark >= m:
            raise ValueError(f"terminal reads mark {self.mark} but there are {m} marks")
        for _, t in self.terms:
            t.check_arity(d, m)

    def second_moment_bound(self, horizon: float, marks: MarkSpace) -> float:
        """An upper bound on ``E[xi^2]`` (analytic where available)."""
        if self.kind == "constant":
            return self.value**2
        if self.kind == "brownian":
            T = horizon
            return {"identity": T, "square": 3 * T * T, "abs": T, "sin": 1.0, "cos": 1.0,
                    "indicator_above": 1.0, "positive_part": T + self.k**2}[self.g]
        if self.kind == "jump_count":
            lam = marks.total_intensity if self.mark is None else marks.intensities[self.mark]
            mu = lam * horizon
            m2 = mu + mu * mu
            m4 = mu + 7 * mu**2 + 6 * mu**3 + mu**4
            return {"identity": m2, "abs": m2, "square": m4, "sin": 1.0, "cos": 1.0,
                    "indicator_above": 1.0, "positive_part": m2 + self.k**2}[self.g]
        return sum(abs(w) * math.sqrt(t.second_moment_bound(horizon, marks)) for w, t in self.terms) ** 2

    def to_json(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "value": self.value}
        if self.kind == "brownian":
            return {"kind": "brownian", "g": self.g, "component": self.component, "k": self.k}
        if self.kind == "jump_count":
            return {"kind": "jump_count", "g": self.g, "mark": self.mark, "k": self.k}
        return {"kind": "sum", "terms": [{"weight": w, "terminal": t.to_json()} for w, t in self.terms]}


@dataclass(frozen=True)
class BSDEPProblem:
    """Terminal ``xi``, driver, grid and marks; optionally a truncated infinite horizon.

    For ``horizon_kind == "truncated_infinite"`` the grid is the template for
    the first truncation and ``truncations`` lists the horizons ``T*_j``;
    ``terminal`` is then the tail terminal evaluated at each ``T*_j``.
    """

    terminal: Terminal
    generator: object
    grid: TimeGrid
    marks: MarkSpace = field(default_factory=MarkSpace)
    horizon_kind: str = "finite"
    truncations: tuple[float, ...] = ()

    def __post_init__(self):
        if self.horizon_kind not in ("finite", "truncated_infinite"):
            raise ValueError("horizon_kind must be 'finite' or 'truncated_infinite'")
        spec = self.base_spec
        if spec is not None:
            if spec.marks != self.marks:
                raise ValueError("generator mark space differs from the problem's")
            self.terminal.check_arity(spec.brownian_dim, self.marks.size)
            if self.horizon_kind == "truncated_infinite":
                spec.coeffs.check_integrable(math.inf)
            else:
                spec.coeffs.check_integrable(self.grid.horizon)
        if self.horizon_kind == "truncated_infinite":
            tr = tuple(float(x) for x in self.truncations)
            if not tr or any(b <= a for a, b in zip(tr, tr[1:])) or tr[0] <= 0:
                raise ValueError("truncations must be positive and increasing")
            object.__setattr__(self, "truncations", tr)

    @property
    def base_spec(self) -> GeneratorSpec | None:
        g = self.generator
        if isinstance(g, GeneratorSpec):
            return g
        return getattr(g, "base", None)

    def tail_integral(self, horizon: float) -> float:
        """``int_{T*}^inf (gamma + rho^2 + sigma^2)`` in closed form."""
        spec = self.base_spec
        if spec is None:
            raise AssumptionError("tail integral needs declared coefficients")
        return spec.coeffs.integrability(horizon, math.inf)

    def with_generator(self, generator) -> BSDEPProblem:
        return replace(self, generator=generator)

    def on_grid(self, grid: TimeGrid) -> BSDEPProblem:
        return replace(self, grid=grid, horizon_kind="finite", truncations=())
