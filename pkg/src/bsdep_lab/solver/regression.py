"""Least-squares conditional expectations on a monomial basis."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ..noise import PathEnsemble

__all__ = ["RegressionBasis", "RegressionPlan", "SingularRegressionError"]

# columns with a standard deviation below this are treated as constant
_FLAT = 1e-12
_COND_LIMIT = 1e12


class SingularRegressionError(ArithmeticError):
    def __init__(self, step: int, detail: str):
        super().__init__(f"singular regression at step {step}: {detail}")
        self.step = step


@dataclass(frozen=True)
class RegressionBasis:
    """Monomials of total degree ``<= degree`` in ``W_t`` and the per-mark jump counts.

    The intercept is always present.  Features are centred and scaled
    before the ridge penalty is applied, so ``ridge`` is dimensionless.
    """

    degree: int = 2
    ridge: float = 1e-8
    brownian: bool = True
    jumps: bool = True

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("basis degree must be >= 0")
        if not self.ridge >= 0:
            raise ValueError("ridge must be nonnegative")

    def monomials(self, n_vars: int) -> list[tuple[int, ...]]:
        """Index tuples of the non-constant monomials, lowest degree first."""
        out: list[tuple[int, ...]] = []
        for deg in range(1, self.degree + 1):
            out.extend(itertools.combinations_with_replacement(range(n_vars), deg))
        return out

    def state(self, ens: PathEnsemble, k: int) -> np.ndarray:
        cols = []
        if self.brownian:
            cols.append(ens.W[:, k, :])
        if self.jumps and ens.mark_space.size:
            cols.append(ens.counts_at_nodes[:, k, :])
        if not cols:
            return np.zeros((ens.n_paths, 0))
        return np.concatenate(cols, axis=1)

    def features(self, ens: PathEnsemble, k: int) -> np.ndarray:
        """Raw (unscaled) non-constant features at node ``k``, shape ``(M, P)``."""
        x = self.state(ens, k)
        mons = self.monomials(x.shape[1])
        if not mons:
            return np.zeros((ens.n_paths, 0))
        return np.stack([np.prod(x[:, list(mon)], axis=1) for mon in mons], axis=1)

    def to_json(self) -> dict:
        return {"degree": self.degree, "ridge": self.ridge, "brownian": self.brownian, "jumps": self.jumps}


@dataclass
class _NodeFit:
    X: np.ndarray            # standardised features (M, P)
    chol: np.ndarray | None  # Cholesky factor of X'X/M + ridge I
    cond: float


@dataclass
class RegressionPlan:
    """Per-node design matrices and factorisations, built lazily and reused."""

    ens: PathEnsemble
    basis: RegressionBasis
    _nodes: dict = field(default_factory=dict, repr=False)

    def _node(self, k: int) -> _NodeFit:
        if k in self._nodes:
            return self._nodes[k]
        raw = self.basis.features(self.ens, k)
        if not np.all(np.isfinite(raw)):
            raise SingularRegressionError(k, "non-finite design matrix")
        sd = raw.std(axis=0)
        keep = sd > _FLAT * np.maximum(1.0, np.abs(raw).max(axis=0, initial=0.0))
        X = (raw[:, keep] - raw[:, keep].mean(axis=0)) / sd[keep] if keep.any() else np.zeros((raw.shape[0], 0))
        if X.shape[1] == 0:
            fit = _NodeFit(X, None, 1.0)
        else:
            G = X.T @ X / X.shape[0]
            ev = np.linalg.eigvalsh(G)
            cond = float(ev[-1] / ev[0]) if ev[0] > 0 else np.inf
            if self.basis.ridge == 0 and (ev[0] <= 0 or cond > _COND_LIMIT):
                raise SingularRegressionError(k, f"rank-deficient design (condition number {cond:.3g}); set ridge > 0")
            G = G + self.basis.ridge * np.eye(G.shape[0])
            fit = _NodeFit(X, np.linalg.cholesky(G), cond)
        self._nodes[k] = fit
        return fit

    def condition(self, k: int) -> float:
        return self._node(k).cond

    def fit(self, k: int, targets: np.ndarray) -> np.ndarray:
        """Fitted conditional expectations of ``targets`` (``(M,)`` or ``(M, c)``) given ``F_{t_k}``."""
        node = self._node(k)
        tg = np.asarray(targets, dtype=float)
        flat = tg.ndim == 1
        tg = tg[:, None] if flat else tg
        mean = tg.mean(axis=0)
        out = np.broadcast_to(mean, tg.shape).copy()
        if node.chol is not None:
            rhs = node.X.T @ (tg - mean) / tg.shape[0]
            beta = _cho_solve(node.chol, rhs)
            out += node.X @ beta
        return out[:, 0] if flat else out

    def leverage(self, k: int) -> np.ndarray:
        """Diagonal of the hat matrix of :meth:`fit` at node ``k``, intercept included."""
        node = self._node(k)
        M = node.X.shape[0]
        if node.chol is None:
            return np.full(M, 1.0 / M)
        v = np.linalg.solve(node.chol, node.X.T)
        return (1.0 + (v * v).sum(axis=0)) / M

    def fit_weighted(self, k: int, targets: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Weighted least squares, i.e. conditional expectations under the tilted measure."""
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or not w.sum() > 0:
            raise ValueError("weights must be nonnegative with a positive sum")
        w = w / w.sum()
        tg = np.asarray(targets, dtype=float)
        flat = tg.ndim == 1
        tg = tg[:, None] if flat else tg
        raw = self.basis.features(self.ens, k)
        mu = w @ raw
        sd = np.sqrt(w @ (raw - mu) ** 2)
        keep = sd > _FLAT * np.maximum(1.0, np.abs(raw).max(axis=0, initial=0.0))
        tmean = w @ tg
        out = np.broadcast_to(tmean, tg.shape).copy()
        if keep.any():
            X = (raw[:, keep] - mu[keep]) / sd[keep]
            G = (X * w[:, None]).T @ X + self.basis.ridge * np.eye(X.shape[1])
            beta = np.linalg.solve(G, (X * w[:, None]).T @ (tg - tmean))
            out += X @ beta
        return out[:, 0] if flat else out


def _cho_solve(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    # numpy has no triangular solver; the systems are tiny
    return np.linalg.solve(L.T, np.linalg.solve(L, b))
