"""Component curves, predictions, group differences and Bayesian confidence bands.

Posterior variances follow the Gaussian-process reading of the penalized fit:
``Var(eta_hat(x)) = sigma_eps^2 h(x)' M^{-1} h(x)`` where ``M`` is the
penalized normal-equations matrix kept on the fitted model and ``h(x)`` the
design row of the evaluated terms.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .core import MINUTES_PER_DAY, TermSpec
from .kernel import CovariatePoints, assemble_gram, term_kernel
from .solver import FittedModel, exact_dot


def default_grid(step: float = 1.0) -> np.ndarray:
    """Minutes ``0, step, ..., 1440`` (1441 points at the default step)."""
    k = int(round(MINUTES_PER_DAY / step))
    return np.linspace(0.0, MINUTES_PER_DAY, k + 1)


@dataclass(frozen=True, eq=False)
class CurveEstimate:
    grid: np.ndarray
    value: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    target: str
    labels: tuple[str, ...] | None = None

    def __len__(self):
        return int(self.grid.shape[0])

    def rows(self):
        keys = self.labels if self.labels is not None else self.grid
        return zip(keys, self.value, self.se, self.lower, self.upper)


@dataclass(frozen=True)
class RegionSet:
    intervals: tuple[tuple[float, float], ...]
    level: float

    def to_json(self) -> list[dict]:
        return [{"start_minute": float(a), "end_minute": float(b)} for a, b in self.intervals]

    def total_length(self) -> float:
        return float(sum(b - a for a, b in self.intervals))


def _z(level: float) -> float:
    if not 0.0 < level < 1.0:
        raise ValueError("confidence level must lie in (0, 1)")
    return float(stats.norm.ppf(0.5 + level / 2.0))


def _resolve_terms(model: FittedModel, mask) -> list[TermSpec]:
    out = []
    names = {t.name: t for t in model.spec.terms}
    for t in mask:
        name = t.name if isinstance(t, TermSpec) else str(t)
        if name not in names:
            raise KeyError(f"term {name} is not in the model")
        out.append(names[name])
    return out


def design_rows(model: FittedModel, points: CovariatePoints, mask: Iterable) -> np.ndarray:
    """Rows ``h(x)`` over the coefficient vector ``[d, c, b]`` for the masked terms."""
    terms = _resolve_terms(model, mask)
    p = model.m + model.q + len(model.b_hat)
    H = np.zeros((len(points), p))
    slices = model.null_slices()
    theta = dict(zip([t.name for t in model.plan.kernel_terms], model.params.theta))
    for t in terms:
        if t.kind == "random_intercept":
            continue
        tk = term_kernel(t, model.factor_defs)
        if not t.penalized:
            H[:, slices[t.name]] = tk.null_basis(points)
        else:
            H[:, model.m:model.m + model.q] += theta[t.name] * assemble_gram(tk, points, model.knots)
    return H


def term_values(model: FittedModel, points: CovariatePoints, mask: Iterable) -> np.ndarray:
    """Point estimate of the masked terms, summed term by term in mask order."""
    slices = model.null_slices()
    theta = dict(zip([t.name for t in model.plan.kernel_terms], model.params.theta))
    out = np.zeros(len(points))
    for t in _resolve_terms(model, mask):
        if t.kind == "random_intercept":
            continue
        tk = term_kernel(t, model.factor_defs)
        if not t.penalized:
            out = out + tk.null_basis(points) @ model.d[slices[t.name]]
        else:
            out = out + theta[t.name] * exact_dot(assemble_gram(tk, points, model.knots), model.c)
    return out


def _variances(model: FittedModel, H: np.ndarray) -> np.ndarray:
    W = model.chol.solve(H.T)
    return np.maximum(model.sigma2_eps * np.einsum("ij,ji->i", H, W), 0.0)


def posterior_covariance(model: FittedModel, targets: CovariatePoints, component_mask: Sequence) -> np.ndarray:
    """Posterior variances of the masked component at each target point."""
    if not component_mask:
        raise ValueError("component mask is empty")
    if model.M is None:
        raise ValueError("model carries no factorization")
    return _variances(model, design_rows(model, targets, component_mask))


def _curve(model, H, value, grid, level, target, labels=None) -> CurveEstimate:
    se = np.sqrt(_variances(model, H))
    z = _z(level)
    return CurveEstimate(np.asarray(grid, dtype=float), value, se, value - z * se, value + z * se,
                         level, target, labels)


def _points(model, grid, at=None) -> CovariatePoints:
    at = dict(at or {})
    for f in model.factor_defs:
        at.setdefault(f.name, f.levels[0])
    return CovariatePoints.make(grid, at, model.factor_defs)


def eval_component(model: FittedModel, term, grid=None, level: float = 0.95, at: dict | None = None) -> CurveEstimate:
    """Estimate of one ANOVA term.

    For ``nominal_main`` the curve runs over the factor's levels and ``grid``
    is ignored. Interaction terms need the level of their factor in ``at``.
    """
    (term,) = _resolve_terms(model, [term])
    if term.kind == "random_intercept":
        raise ValueError("random intercepts are not a function component")
    if term.kind == "nominal_main":
        f = next(f for f in model.factor_defs if f.name == term.factor)
        pts = CovariatePoints.make(np.zeros(f.K), {term.factor: list(f.levels)}, model.factor_defs)
        H = design_rows(model, pts, [term])
        return _curve(model, H, term_values(model, pts, [term]), np.arange(f.K), level, term.name, f.levels)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if term.factor is not None and (at is None or term.factor not in at):
        raise ValueError(f"{term.name} needs a level for factor {term.factor!r}")
    pts = _points(model, grid, at)
    H = design_rows(model, pts, [term])
    target = term.name if term.factor is None else f"{term.name}[{at[term.factor]}]"
    return _curve(model, H, term_values(model, pts, [term]), grid, level, target)


def function_terms(model: FittedModel) -> list[TermSpec]:
    return [t for t in model.spec.terms if t.is_function]


def predict(model: FittedModel, points: CovariatePoints, level: float = 0.95, target: str = "prediction") -> CurveEstimate:
    """Fixed-effect prediction (all function terms, random intercepts excluded)."""
    terms = function_terms(model)
    H = design_rows(model, points, terms)
    return _curve(model, H, term_values(model, points, terms), points.u * MINUTES_PER_DAY, level, target)


def predict_curve(model: FittedModel, grid=None, at: dict | None = None, level: float = 0.95) -> CurveEstimate:
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    label = ",".join(f"{k}={v}" for k, v in (at or {}).items())
    return predict(model, _points(model, grid, at), level, target=f"prediction[{label}]" if label else "prediction")


def group_factor(model: FittedModel) -> str:
    for t in model.spec.terms:
        if t.kind in ("time_by_nominal_smooth", "time_by_nominal_linear"):
            return t.factor
    for t in model.spec.terms:
        if t.factor:
            return t.factor
    raise ValueError("model has no nominal factor")


def difference_curve(model: FittedModel, g: str, g_star: str, grid=None, level: float = 0.95,
                     factor: str | None = None, at: dict | None = None) -> CurveEstimate:
    """``eta(t, g) - eta(t, g_star)`` with its pointwise Bayesian band."""
    factor = factor or group_factor(model)
    fdef = next((f for f in model.factor_defs if f.name == factor), None)
    if fdef is None:
        raise ValueError(f"unknown factor {factor!r}")
    for lv in (g, g_star):
        fdef.code(lv)
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    terms = [t for t in model.spec.terms if t.factor == factor]
    at = dict(at or {})
    pa = _points(model, grid, {**at, factor: g})
    pb = _points(model, grid, {**at, factor: g_star})
    H = design_rows(model, pa, terms) - design_rows(model, pb, terms)
    value = term_values(model, pa, terms) - term_values(model, pb, terms)
    return _curve(model, H, value, grid, level, f"difference[{factor}: {g} - {g_star}]")


def significant_regions(curve: CurveEstimate) -> RegionSet:
    """Maximal runs of grid points whose band excludes zero, as minute intervals."""
    sign = np.where(curve.lower > 0, 1, np.where(curve.upper < 0, -1, 0))
    grid = np.asarray(curve.grid, dtype=float)
    out = []
    i, n = 0, len(sign)
    while i < n:
        if sign[i] == 0:
            i += 1
            continue
        j = i
        while j + 1 < n and sign[j + 1] == sign[i]:
            j += 1
        out.append((float(grid[i]), float(grid[j])))
        i = j + 1
    return RegionSet(tuple(out), curve.level)


@dataclass(frozen=True)
class FitReport:
    r_squared: float
    sigma_eps: float
    sigma_b: float | None
    trace_A: float
    criterion: str
    criterion_value: float
    log10_lambda: float
    log10_lambda_b: float | None
    theta: dict = field(default_factory=dict)
    n: int = 0
    knots: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitReport":
        return cls(**d)


def summarize_fit(model: FittedModel) -> FitReport:
    return FitReport(
        r_squared=model.r_squared,
        sigma_eps=float(np.sqrt(model.sigma2_eps)),
        sigma_b=None if model.sigma2_b is None else float(np.sqrt(model.sigma2_b)),
        trace_A=model.trace_A,
        criterion=model.spec.criterion,
        criterion_value=model.criterion_value,
        log10_lambda=model.params.log_lambda,
        log10_lambda_b=model.params.log_lambda_b,
        theta=model.theta,
        n=model.n,
        knots=model.q,
    )
