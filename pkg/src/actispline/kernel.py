"""Reproducing kernels and null-space bases for each SSANOVA term.

The cubic smoothing-spline kernel on ``[0, 1]`` is built from scaled
Bernoulli polynomials, so every kernel section integrates to zero over the
domain. Nominal factors use the sum-to-zero kernel ``1[g == h] - 1/K``.
Interaction kernels are products of marginal kernels.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import MINUTES_PER_DAY, FactorDef, ObservationTable, TermSpec


def k1(u):
    return np.asarray(u, dtype=float) - 0.5


def k2(u):
    a = k1(u)
    return (a * a - 1.0 / 12.0) / 2.0


def k4(u):
    a = k1(u)
    a2 = a * a
    return (a2 * a2 - a2 / 2.0 + 7.0 / 240.0) / 24.0


def _check_unit(*arrays):
    for a in arrays:
        a = np.asarray(a, dtype=float)
        if np.any(~np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
            raise ValueError("time argument outside [0, 1]")


def cubic_kernel(x, y):
    """Cubic spline kernel ``k2(x) k2(y) - k4(|x - y|)``, broadcasting."""
    _check_unit(x, y)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = k2(x) * k2(y) - k4(np.abs(x - y))
    return out if out.ndim else float(out)


def cubic_null_basis(x):
    """Unpenalized basis ``[1, x - 0.5]``; rows per point for array input."""
    _check_unit(x)
    x = np.asarray(x, dtype=float)
    out = np.stack([np.ones_like(x), k1(x)], axis=-1)
    return out


def nominal_kernel(g, h, K: int):
    if K < 2:
        raise ValueError("K must be at least 2")
    g = np.asarray(g)
    h = np.asarray(h)
    if np.any(g < 0) or np.any(g >= K) or np.any(h < 0) or np.any(h >= K):
        raise IndexError("level index out of range")
    out = (g == h).astype(float) - 1.0 / K
    return out if out.ndim else float(out)


def sum_to_zero_contrasts(codes, K: int) -> np.ndarray:
    """K-1 columns: level j < K-1 maps to e_j, the last level to -1."""
    codes = np.asarray(codes)
    X = np.zeros((codes.shape[0], K - 1))
    for j in range(K - 1):
        X[codes == j, j] = 1.0
    X[codes == K - 1, :] = -1.0
    return X


@dataclass(frozen=True, eq=False)
class CovariatePoints:
    """Covariates read by the kernels.

    ``u`` is time rescaled to [0, 1]; ``codes`` holds one level code column
    per factor (ordered as ``factor_defs``); ``subject`` is an integer index.
    """

    u: np.ndarray
    codes: np.ndarray
    subject: np.ndarray
    factor_defs: tuple[FactorDef, ...] = ()

    def __len__(self):
        return int(self.u.shape[0])

    @classmethod
    def from_table(cls, table: ObservationTable, subjects: Sequence[str] | None = None):
        if subjects is None:
            subjects = np.unique(table.subject)
        lookup = {s: i for i, s in enumerate(subjects)}
        sidx = np.array([lookup.get(s, -1) for s in table.subject], dtype=np.int64)
        return cls(table.time / MINUTES_PER_DAY, table.codes, sidx, table.factor_defs)

    @classmethod
    def make(cls, minutes, levels: dict | None = None, factor_defs=(), subject=None):
        """Points at ``minutes`` with every factor fixed to the labels in ``levels``."""
        minutes = np.atleast_1d(np.asarray(minutes, dtype=float))
        n = minutes.shape[0]
        levels = levels or {}
        codes = np.zeros((n, len(factor_defs)), dtype=np.int64)
        for j, f in enumerate(factor_defs):
            if f.name in levels:
                lv = levels[f.name]
                codes[:, j] = [f.code(x) for x in lv] if isinstance(lv, (list, tuple, np.ndarray)) else f.code(lv)
        sidx = np.full(n, -1, dtype=np.int64) if subject is None else np.broadcast_to(subject, (n,)).astype(np.int64)
        return cls(minutes / MINUTES_PER_DAY, codes, sidx, tuple(factor_defs))

    def take(self, rows) -> "CovariatePoints":
        return CovariatePoints(self.u[rows], self.codes[rows], self.subject[rows], self.factor_defs)

    def factor_column(self, name: str) -> int:
        for j, f in enumerate(self.factor_defs):
            if f.name == name:
                return j
        raise KeyError(f"unknown factor {name!r}")


@dataclass(frozen=True, eq=False)
class TermKernel:
    term: TermSpec
    gram: Callable[[CovariatePoints, CovariatePoints], np.ndarray]
    null_basis: Callable[[CovariatePoints], np.ndarray]
    null_names: tuple[str, ...]

    def eval(self, x: CovariatePoints, y: CovariatePoints) -> float:
        """Kernel value between two single points."""
        return float(self.gram(x, y)[0, 0])


def _no_null(p: CovariatePoints) -> np.ndarray:
    return np.zeros((len(p), 0))


def term_kernel(term: TermSpec, factor_defs: Sequence[FactorDef]) -> TermKernel:
    factor_defs = tuple(factor_defs)
    kind = term.kind
    if term.factor is not None:
        names = [f.name for f in factor_defs]
        if term.factor not in names:
            raise ValueError(f"unknown factor {term.factor!r}")
        j = names.index(term.factor)
        K = factor_defs[j].K

        def nom(a: CovariatePoints, b: CovariatePoints):
            return nominal_kernel(a.codes[:, j][:, None], b.codes[:, j][None, :], K)

    if kind == "constant":
        return TermKernel(term, lambda a, b: np.zeros((len(a), len(b))),
                          lambda p: np.ones((len(p), 1)), ("constant",))
    if kind == "time_linear":
        return TermKernel(term, lambda a, b: np.zeros((len(a), len(b))),
                          lambda p: k1(p.u)[:, None], ("time_linear",))
    if kind == "time_smooth":
        return TermKernel(term, lambda a, b: cubic_kernel(a.u[:, None], b.u[None, :]), _no_null, ())
    if kind == "nominal_main":
        if term.penalized:
            return TermKernel(term, nom, _no_null, ())
        labels = tuple(f"{term.name}[{lv}]" for lv in factor_defs[j].levels[:-1])
        return TermKernel(term, lambda a, b: np.zeros((len(a), len(b))),
                          lambda p: sum_to_zero_contrasts(p.codes[:, j], K), labels)
    if kind == "time_by_nominal_linear":
        return TermKernel(term, lambda a, b: np.outer(k1(a.u), k1(b.u)) * nom(a, b), _no_null, ())
    if kind == "time_by_nominal_smooth":
        return TermKernel(term, lambda a, b: cubic_kernel(a.u[:, None], b.u[None, :]) * nom(a, b), _no_null, ())
    if kind == "random_intercept":
        return TermKernel(term, lambda a, b: (a.subject[:, None] == b.subject[None, :]).astype(float),
                          _no_null, ())
    raise ValueError(f"unsupported term kind {kind!r}")


def assemble_gram(kernel: TermKernel, rows: CovariatePoints, cols: CovariatePoints) -> np.ndarray:
    return np.asarray(kernel.gram(rows, cols), dtype=float).reshape(len(rows), len(cols))
