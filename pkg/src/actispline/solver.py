"""Penalized least-squares fitting of mixed-effects SSANOVA models.

The estimate minimizes

    (1/n) ||y - S d - R_theta c - Z b||^2 + lambda (c' Q_theta c + lambda_b ||b||^2)

with ``R_theta = sum_j theta_j R_j`` (data x knot kernel designs) and
``Q_theta = sum_j theta_j Q_j`` (knot x knot Grams). Smoothing parameters are
kept on the log10 scale. Random intercepts enter through the exact subject
indicator design ``Z`` with a ridge penalty, so the subject variance follows
from the ridge/BLUP correspondence ``sigma_b^2 = sigma_eps^2 / (n lambda lambda_b)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .core import (
    CriterionError,
    ModelPlan,
    ModelSpec,
    ObservationTable,
    OptimizationError,
    SingularFitError,
    TermSpec,
    validate_spec,
)
from .kernel import CovariatePoints, assemble_gram, term_kernel

log = logging.getLogger(__name__)

LOG_LAMBDA_BRACKET = (-8.0, 2.0)
GSS_TOL = 1e-3
THETA_HALF_WIDTH = 2.0
JITTER_START = 1e-10
JITTER_MAX = 1e-6
# n * dim**2 below which solve_at uses the augmented QR least-squares solve
QR_BUDGET = 5e6

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI2 = (3.0 - math.sqrt(5.0)) / 2.0


# ---------------------------------------------------------------------------
# knots
# ---------------------------------------------------------------------------

def auto_knot_count(n: int) -> int:
    return min(n, max(30, math.ceil(10.0 * n ** (2.0 / 9.0))))


def select_knots(points: CovariatePoints, q: int | str = "auto", seed: int = 0,
                 factor_columns: Sequence[int] | None = None) -> np.ndarray:
    """Row indices of ``q`` distinct covariate points, sampled without replacement.

    Points are distinct in time and in the factor columns the kernels read
    (``factor_columns``; all factors when None). The result is sorted and
    deterministic given ``seed``.
    """
    n = len(points)
    if factor_columns is None:
        factor_columns = range(points.codes.shape[1])
    key = np.column_stack([points.u] + [points.codes[:, j].astype(float) for j in factor_columns])
    _, first = np.unique(key, axis=0, return_index=True)
    first = np.sort(first)
    if q == "auto":
        q = min(auto_knot_count(n), first.shape[0])
    else:
        q = int(q)
        if q > n:
            raise ValueError(f"knot count {q} exceeds number of observations {n}")
        if q > first.shape[0]:
            raise ValueError(f"knot count {q} exceeds number of distinct covariate points {first.shape[0]}")
    rng = np.random.default_rng(seed)
    pick = rng.choice(first.shape[0], size=q, replace=False)
    return np.sort(first[pick])


# ---------------------------------------------------------------------------
# penalized system
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SmoothingParams:
    log_lambda: float
    log_theta: tuple[float, ...]
    log_lambda_b: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "log_theta", tuple(float(v) for v in self.log_theta))
        vals = [self.log_lambda, *self.log_theta] + ([] if self.log_lambda_b is None else [self.log_lambda_b])
        if not all(np.isfinite(vals)):
            raise ValueError("smoothing parameters must be finite")

    @property
    def lam(self) -> float:
        return 10.0 ** self.log_lambda

    @property
    def theta(self) -> np.ndarray:
        return 10.0 ** np.asarray(self.log_theta, dtype=float)

    @property
    def lambda_b(self) -> float | None:
        return None if self.log_lambda_b is None else 10.0 ** self.log_lambda_b

    def to_dict(self) -> dict:
        return {"log_lambda": self.log_lambda, "log_theta": list(self.log_theta), "log_lambda_b": self.log_lambda_b}

    @classmethod
    def from_dict(cls, d) -> "SmoothingParams":
        return cls(d["log_lambda"], tuple(d["log_theta"]), d.get("log_lambda_b"))


_SPLIT = 134217729.0  # 2**27 + 1


def _two_prod(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Dekker's error-free product: ``a * b == p + e`` exactly."""
    p = a * b
    t = _SPLIT * a
    ah = t - (t - a)
    al = a - ah
    t = _SPLIT * b
    bh = t - (t - b)
    bl = b - bh
    e = al * bl - (((p - ah * bh) - al * bh) - ah * bl)
    return p, e


def exact_dot(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``A @ x`` with each entry correctly rounded.

    Kernel sections weighted by large theta cancel heavily; plain dot
    products would lose most significant digits there.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    x = np.asarray(x, dtype=float)
    if A.shape[1] == 0:
        return np.zeros(A.shape[0])
    p, e = _two_prod(A, x[None, :])
    both = np.hstack([p, e])
    return np.array([math.fsum(row) for row in both])


@dataclass(frozen=True, eq=False)
class PenalizedSystem:
    S: np.ndarray
    R_list: tuple[np.ndarray, ...]
    Q_list: tuple[np.ndarray, ...]
    y: np.ndarray
    Z: np.ndarray | None = None
    knots: CovariatePoints | None = None
    subjects: tuple[str, ...] = ()
    null_names: tuple[str, ...] = ()
    term_names: tuple[str, ...] = ()

    def __post_init__(self):
        n = self.y.shape[0]
        S = np.asarray(self.S, dtype=float).reshape(n, -1)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "R_list", tuple(np.asarray(R, dtype=float) for R in self.R_list))
        object.__setattr__(self, "Q_list", tuple(np.asarray(Q, dtype=float) for Q in self.Q_list))
        if not self.null_names:
            object.__setattr__(self, "null_names", tuple(f"null[{j}]" for j in range(S.shape[1])))
        if len(self.R_list) != len(self.Q_list):
            raise ValueError("R_list and Q_list differ in length")

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def m(self) -> int:
        return int(self.S.shape[1])

    @property
    def q(self) -> int:
        return int(self.R_list[0].shape[1]) if self.R_list else 0

    @property
    def n_subjects(self) -> int:
        return 0 if self.Z is None else int(self.Z.shape[1])

    @property
    def dim(self) -> int:
        return self.m + self.q + self.n_subjects

    @cached_property
    def _cross(self) -> dict:
        S, Z, y = self.S, self.Z, self.y
        R = self.R_list
        out = {
            "SS": S.T @ S,
            "Sy": S.T @ y,
            "yy": float(y @ y),
            "SR": [S.T @ Rj for Rj in R],
            "Ry": [Rj.T @ y for Rj in R],
            "RR": {(i, j): R[i].T @ R[j] for i in range(len(R)) for j in range(i, len(R))},
        }
        if Z is not None:
            out.update(SZ=S.T @ Z, ZZ=Z.T @ Z, Zy=Z.T @ y, RZ=[Rj.T @ Z for Rj in R],
                       zidx=np.argmax(Z, axis=1))
        return out

    @cached_property
    def null_rank_check(self) -> None:
        check_null_design(self.S, self.null_names)

    def R_theta(self, theta) -> np.ndarray:
        out = np.zeros((self.n, self.q))
        for t, Rj in zip(theta, self.R_list):
            out += t * Rj
        return out

    def design(self, theta) -> np.ndarray:
        """Dense ``[S, R_theta, Z]``; used by oracles and the inference layer."""
        parts = [self.S, self.R_theta(theta)]
        if self.Z is not None:
            parts.append(self.Z)
        return np.hstack(parts)

    def penalty(self, params: SmoothingParams) -> np.ndarray:
        """Block-diagonal penalty ``P`` (without the ``n lambda`` factor)."""
        P = np.zeros((self.dim, self.dim))
        m, q = self.m, self.q
        theta = params.theta
        for t, Qj in zip(theta, self.Q_list):
            P[m:m + q, m:m + q] += t * Qj
        if self.Z is not None:
            k = m + q
            P[k:, k:] += params.lambda_b * np.eye(self.n_subjects)
        return P

    def normal_equations(self, params: SmoothingParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(G, rhs, P)`` with ``G = X'X`` and ``rhs = X'y``."""
        cr = self._cross
        theta = params.theta
        m, q, ns = self.m, self.q, self.n_subjects
        p = self.dim
        G = np.zeros((p, p))
        rhs = np.zeros(p)
        c0, c1 = m, m + q
        G[:m, :m] = cr["SS"]
        rhs[:m] = cr["Sy"]
        k = len(self.R_list)
        for i in range(k):
            G[:m, c0:c1] += theta[i] * cr["SR"][i]
            rhs[c0:c1] += theta[i] * cr["Ry"][i]
            for j in range(i, k):
                blk = theta[i] * theta[j] * cr["RR"][(i, j)]
                G[c0:c1, c0:c1] += blk
                if j != i:
                    G[c0:c1, c0:c1] += blk.T
        if ns:
            G[:m, c1:] = cr["SZ"]
            for i in range(k):
                G[c0:c1, c1:] += theta[i] * cr["RZ"][i]
            G[c1:, c1:] = cr["ZZ"]
            rhs[c1:] = cr["Zy"]
        G = np.triu(G) + np.triu(G, 1).T
        return G, rhs, self.penalty(params)

    def fitted_values(self, theta, d, c, b=None, exact: bool = False) -> np.ndarray:
        out = self.S @ d
        for t, Rj in zip(theta, self.R_list):
            out = out + t * (exact_dot(Rj, c) if exact else Rj @ c)
        if self.Z is not None and b is not None:
            out = out + b[self._cross["zidx"]]
        return out


def check_null_design(S: np.ndarray, names: Sequence[str]) -> None:
    """Raise :class:`SingularFitError` if ``S`` lacks full column rank."""
    if S.shape[1] == 0:
        return
    _, Rq, piv = linalg.qr(S, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rq))
    tol = max(S.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0) * 1e3
    rank = int(np.sum(diag > tol))
    if rank < S.shape[1] or S.shape[0] < S.shape[1]:
        bad = [names[j] for j in piv[rank:]] or list(names)
        raise SingularFitError(f"null-space design is rank deficient; offending columns: {', '.join(bad)}", bad)


@dataclass(frozen=True, eq=False)
class Solution:
    d: np.ndarray
    c: np.ndarray
    b: np.ndarray
    fitted: np.ndarray | None
    rss: float
    y_resid: float
    trace_A: float
    M: np.ndarray
    chol: Factor
    jitter: float
    params: SmoothingParams


@dataclass(frozen=True, eq=False)
class Factor:
    """Cholesky factor of ``D M D`` with ``D = diag(M)^(-1/2)``.

    Equilibrating first keeps the factorization and the jitter scale
    independent of how strongly the theta weights scale the kernel columns.
    """

    cf: tuple
    scale: np.ndarray

    def solve(self, B: np.ndarray) -> np.ndarray:
        s = self.scale if B.ndim == 1 else self.scale[:, None]
        return s * linalg.cho_solve(self.cf, s * B)

    def logdet(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.cf[0]))) - 2.0 * np.sum(np.log(self.scale)))


def factorize(M: np.ndarray, names: Sequence[str] = ()) -> tuple[Factor, np.ndarray, float]:
    """Cholesky with escalating diagonal jitter on the equilibrated matrix.

    The jitter starts at ``JITTER_START`` relative to each diagonal entry and
    grows tenfold up to ``JITTER_MAX``. Returns ``(factor, M_used, jitter)``.
    """
    diag = np.diag(M).copy()
    scale = np.where(diag > 0.0, 1.0 / np.sqrt(np.where(diag > 0.0, diag, 1.0)), 1.0)
    Me = M * scale[:, None] * scale[None, :]
    try:
        return Factor(linalg.cho_factor(Me, lower=True), scale), M, 0.0
    except linalg.LinAlgError:
        pass
    eps = JITTER_START
    eye = np.eye(M.shape[0])
    while eps <= JITTER_MAX * (1 + 1e-9):
        try:
            cf = linalg.cho_factor(Me + eps * eye, lower=True)
        except linalg.LinAlgError:
            eps *= 10.0
            continue
        return Factor(cf, scale), M + np.diag(eps / scale ** 2), eps
    raise SingularFitError("penalized normal equations are singular after jitter escalation", list(names))


def _augmented_lstsq(system: PenalizedSystem, params: SmoothingParams, P: np.ndarray):
    """Solve ``min ||y - X beta||^2 + n lambda beta' P beta`` by QR of ``[X; sqrt(n lambda P)]``.

    Returns ``(coef, trace_A)`` or None if the stacked matrix is rank deficient.
    """
    n = system.n
    X = system.design(params.theta)
    w, V = linalg.eigh(n * params.lam * P)
    keep = w > 0.0
    L = V[:, keep] * np.sqrt(w[keep])
    Qf, Rf = linalg.qr(np.vstack([X, L.T]), mode="economic")
    diag = np.abs(np.diag(Rf))
    if diag.size and diag.min() <= diag.max() * 1e3 * np.finfo(float).eps * max(Qf.shape):
        return None
    coef = linalg.solve_triangular(Rf, Qf[:n].T @ system.y)
    return coef, float(np.sum(Qf[:n] ** 2))


def solve_at(system: PenalizedSystem, params: SmoothingParams, with_fitted: bool = True,
             method: str = "auto") -> Solution:
    """Minimize the penalized objective at fixed smoothing parameters.

    ``y_resid`` is ``y'(I - A)y``. Small problems (``method="auto"``) are
    solved by QR of the stacked design and penalty root, which stays accurate
    when the normal matrix is badly conditioned; large ones use the Cholesky
    factor of the normal equations. With ``with_fitted=False`` the residual
    sum of squares comes from the cross-products unless that loses precision.
    """
    system.null_rank_check
    n = system.n
    G, rhs, P = system.normal_equations(params)
    M = G + n * params.lam * P
    chol, M, jitter = factorize(M, system.null_names)
    m, q = system.m, system.q
    use_qr = method == "qr" or (method == "auto" and n * system.dim ** 2 <= QR_BUDGET)
    qr = _augmented_lstsq(system, params, P) if use_qr else None
    if qr is not None:
        coef, trace_A = qr
        with_fitted = True
    else:
        coef = chol.solve(rhs)
        trace_A = float(np.trace(chol.solve(G)))
    d, c, b = coef[:m], coef[m:m + q], coef[m + q:]
    yy = system._cross["yy"]
    fitted = None
    y_resid = yy - float(coef @ rhs)
    rss = y_resid - float(coef @ rhs) + float(coef @ (G @ coef))
    if with_fitted or rss < 1e-6 * yy or y_resid < 1e-6 * yy:
        fitted = system.fitted_values(params.theta, d, c, b if system.Z is not None else None)
        r = system.y - fitted
        rss = float(r @ r)
        y_resid = float(system.y @ r)
    return Solution(d, c, b, fitted, max(rss, 0.0), y_resid, trace_A, M, chol, jitter, params)


def gcv(system: PenalizedSystem, params: SmoothingParams, sol: Solution | None = None) -> float:
    """``n ||(I - A) y||^2 / tr(I - A)^2``; +inf as the saturated-fit sentinel."""
    sol = sol or solve_at(system, params, with_fitted=False)
    n = system.n
    denom = n - sol.trace_A
    if denom < -1e-6 * n:
        raise CriterionError(f"smoother trace {sol.trace_A:.6g} exceeds n = {n}")
    if denom <= 1e-8 * n:
        return math.inf
    return n * sol.rss / denom ** 2


def _nonnull_eigs(system: PenalizedSystem, sol: Solution) -> np.ndarray:
    # Nonzero spectrum of I - A: generalized eigenvalues of (M - G, M).
    G, _, P = system.normal_equations(sol.params)
    D = sol.M - G
    D = (D + D.T) / 2.0
    nu = linalg.eigh(D, sol.M, eigvals_only=True)
    return np.sort(nu)[system.m:]


def _logdet_plus(system: PenalizedSystem, sol: Solution) -> float:
    """``log det+(I - A)``.

    ``M^{-1} D`` has zero leading m columns, so its nonzero eigenvalues are
    those of ``(M^{-1})_22 D_22`` with determinant
    ``det(D_22) det(M_11) / det(M)``. Falls back to the generalized
    eigenproblem when a factor is not positive definite.
    """
    m = system.m
    if sol.jitter == 0.0:
        D22 = system.n * sol.params.lam * system.penalty(sol.params)[m:, m:]
        try:
            ld_d = 2.0 * np.sum(np.log(np.diag(linalg.cholesky(D22, lower=True))))
            ld_m11 = 2.0 * np.sum(np.log(np.diag(linalg.cholesky(sol.M[:m, :m], lower=True)))) if m else 0.0
            ld_m = sol.chol.logdet()
            return float(ld_d + ld_m11 - ld_m)
        except linalg.LinAlgError:
            pass
    nu = _nonnull_eigs(system, sol)
    if np.any(nu <= 0.0):
        return -math.inf
    return float(np.sum(np.log(nu)))


def gml(system: PenalizedSystem, params: SmoothingParams, sol: Solution | None = None) -> float:
    """``y'(I - A)y / det+(I - A)^(1/(n - m))``."""
    sol = sol or solve_at(system, params, with_fitted=False)
    n, m = system.n, system.m
    if n - sol.trace_A < -1e-6 * n:
        raise CriterionError(f"smoother trace {sol.trace_A:.6g} exceeds n = {n}")
    logdet = _logdet_plus(system, sol)
    num = sol.y_resid
    if num <= 0.0 or not np.isfinite(logdet):
        return math.inf
    return num / math.exp(logdet / (n - m))


CRITERIA: dict[str, Callable] = {"GCV": gcv, "GML": gml}


# ---------------------------------------------------------------------------
# smoothing-parameter selection
# ---------------------------------------------------------------------------

def golden_section(f: Callable[[float], float], a: float, b: float, tol: float = GSS_TOL) -> tuple[float, float]:
    """Golden-section search on ``[a, b]``; returns the best evaluated ``(x, f(x))``."""
    a, b = min(a, b), max(a, b)
    h = b - a
    c, d = a + INV_PHI2 * h, a + INV_PHI * h
    fc, fd = f(c), f(d)
    best = min((fc, c), (fd, d))
    while h > tol:
        h *= INV_PHI
        if fc <= fd:
            b, d, fd = d, c, fc
            c = a + INV_PHI2 * h
            fc = f(c)
            best = min(best, (fc, c))
        else:
            a, c, fc = c, d, fd
            d = a + INV_PHI * h
            fd = f(d)
            best = min(best, (fd, d))
    return best[1], best[0]


@dataclass(frozen=True)
class OptimizeOptions:
    stage2: bool = True
    max_cycles: int = 25
    tol: float = GSS_TOL
    bracket: tuple[float, float] = LOG_LAMBDA_BRACKET
    rel_improvement: float = 1e-6


def initial_params(system: PenalizedSystem) -> SmoothingParams:
    log_theta = []
    for Q in system.Q_list:
        tr = float(np.trace(Q))
        log_theta.append(-math.log10(tr) if tr > 0 else 0.0)
    return SmoothingParams(0.0, tuple(log_theta), 0.0 if system.Z is not None else None)


def optimize_params(system: PenalizedSystem, criterion: str = "GCV",
                    options: OptimizeOptions | None = None) -> tuple[SmoothingParams, float]:
    """Pick smoothing parameters by golden-section search, then cyclic coordinate descent.

    Returns the parameters and the criterion value there.
    """
    options = options or OptimizeOptions()
    crit = CRITERIA[criterion]

    def score(p: SmoothingParams) -> float:
        try:
            v = crit(system, p)
        except (CriterionError, SingularFitError):
            return math.inf
        return v if np.isfinite(v) else math.inf

    params = initial_params(system)
    lo, hi = options.bracket

    def fit_lambda(p):
        x, v = golden_section(lambda s: score(replace(p, log_lambda=s)), lo, hi, options.tol)
        return replace(p, log_lambda=x), v

    params, value = fit_lambda(params)
    if not np.isfinite(value):
        raise OptimizationError(f"{criterion} is not finite anywhere on log10(lambda) in [{lo}, {hi}]")
    n_blocks = len(system.Q_list) + (system.Z is not None)
    if not options.stage2 or n_blocks < 2:
        return params, value

    w = THETA_HALF_WIDTH
    for cycle in range(options.max_cycles):
        start = value
        for j in range(len(params.log_theta)):
            cur = params.log_theta[j]

            def with_theta(s, j=j, p=params):
                lt = list(p.log_theta)
                lt[j] = s
                return replace(p, log_theta=tuple(lt))

            x, v = golden_section(lambda s: score(with_theta(s)), cur - w, cur + w, options.tol)
            if v < value:
                params, value = with_theta(x), v
        if params.log_lambda_b is not None:
            cur = params.log_lambda_b
            x, v = golden_section(lambda s: score(replace(params, log_lambda_b=s)), cur - w, cur + w, options.tol)
            if v < value:
                params, value = replace(params, log_lambda_b=x), v
        p2, v = fit_lambda(params)
        if v < value:
            params, value = p2, v
        log.debug("cycle %d: %s = %.10g", cycle, criterion, value)
        if start - value < options.rel_improvement * abs(start):
            break
    return params, value


# ---------------------------------------------------------------------------
# end-to-end fit
# ---------------------------------------------------------------------------

def transform_response(y, transform: str) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if transform == "identity":
        return y
    if transform == "log1p":
        if np.any(y <= -1.0):
            raise ValueError("log1p transform needs response > -1")
        return np.log1p(y)
    raise ValueError(f"unknown transform {transform!r}")


def build_system(plan: ModelPlan, points: CovariatePoints, y: np.ndarray, knot_rows: np.ndarray | None,
                 subjects: Sequence[str] = ()) -> PenalizedSystem:
    factor_defs = points.factor_defs
    S_cols, null_names = [], []
    for t in plan.unpenalized:
        tk = term_kernel(t, factor_defs)
        S_cols.append(tk.null_basis(points))
        null_names += list(tk.null_names)
    S = np.hstack(S_cols) if S_cols else np.zeros((len(points), 0))
    knots = points.take(knot_rows) if knot_rows is not None else None
    R_list, Q_list, names = [], [], []
    for t in plan.kernel_terms:
        tk = term_kernel(t, factor_defs)
        R_list.append(assemble_gram(tk, points, knots))
        Q_list.append(assemble_gram(tk, knots, knots))
        names.append(t.name)
    Z = None
    if plan.has_random_intercept:
        Z = np.zeros((len(points), len(subjects)))
        Z[np.arange(len(points)), points.subject] = 1.0
    return PenalizedSystem(S, tuple(R_list), tuple(Q_list), np.asarray(y, dtype=float), Z, knots,
                           tuple(subjects), tuple(null_names), tuple(names))


@dataclass(frozen=True, eq=False)
class FittedModel:
    spec: ModelSpec
    factor_defs: tuple
    knots: CovariatePoints | None
    d: np.ndarray
    c: np.ndarray
    b_hat: np.ndarray
    params: SmoothingParams
    sigma2_eps: float
    sigma2_b: float | None
    M: np.ndarray
    trace_A: float
    criterion_value: float
    r_squared: float
    n: int
    subjects: tuple[str, ...]
    null_names: tuple[str, ...]
    y_scale: float = 1.0
    jitter: float = 0.0
    fitted: np.ndarray | None = field(default=None, repr=False)

    @cached_property
    def plan(self) -> ModelPlan:
        used = []
        for t in self.spec.terms:
            if t.factor and t.factor not in dict(used):
                used.append((t.factor, next(f.K for f in self.factor_defs if f.name == t.factor)))
        return ModelPlan(self.spec, self.spec.terms, tuple(used))

    @cached_property
    def chol(self):
        if self.M is None:
            raise ValueError("model carries no factorization")
        return factorize(self.M)[0]

    @property
    def m(self) -> int:
        return int(self.d.shape[0])

    @property
    def q(self) -> int:
        return int(self.c.shape[0])

    @property
    def coef(self) -> np.ndarray:
        return np.concatenate([self.d, self.c, self.b_hat])

    @property
    def theta(self) -> dict[str, float]:
        return {t.name: float(v) for t, v in zip(self.plan.kernel_terms, self.params.theta)}

    def null_slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for t in self.plan.unpenalized:
            width = term_kernel(t, self.factor_defs).null_basis(
                CovariatePoints.make([0.0], {}, self.factor_defs)).shape[1]
            out[t.name] = slice(start, start + width)
            start += width
        return out


def fit(table: ObservationTable, spec: ModelSpec) -> FittedModel:
    """Fit ``spec`` to ``table``: transform, rescale time, select knots, optimize, solve."""
    plan = validate_spec(spec, table)
    subjects = tuple(np.unique(table.subject)) if plan.has_random_intercept else ()
    points = CovariatePoints.from_table(table, subjects if subjects else None)
    y = transform_response(table.response, spec.response_transform)
    scale = float(np.std(y))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    ys = y / scale

    knot_rows = None
    if plan.kernel_terms:
        fcols = sorted({points.factor_column(t.factor) for t in plan.kernel_terms if t.factor})
        knot_rows = select_knots(points, spec.knot_count, spec.seed, fcols)
    system = build_system(plan, points, ys, knot_rows, subjects)
    if system.n < system.m + 1:
        raise SingularFitError(f"need more than {system.m} observations, got {system.n}", system.null_names)

    params, value = optimize_params(
        system, spec.criterion, OptimizeOptions(stage2=spec.stage2, max_cycles=spec.max_cycles))
    sol = solve_at(system, params)
    n = system.n
    s2 = scale * scale
    sigma2_eps = sol.rss / (n - sol.trace_A) * s2
    sigma2_b = None
    if system.Z is not None:
        sigma2_b = sigma2_eps / (n * params.lam * params.lambda_b)
    tss = float(np.sum((ys - ys.mean()) ** 2))
    r2 = 1.0 - sol.rss / tss if tss > 0 else 1.0
    return FittedModel(
        spec=spec,
        factor_defs=table.factor_defs,
        knots=system.knots,
        d=sol.d * scale,
        c=sol.c * scale,
        b_hat=sol.b * scale,
        params=params,
        sigma2_eps=float(sigma2_eps),
        sigma2_b=None if sigma2_b is None else float(sigma2_b),
        M=sol.M,
        trace_A=sol.trace_A,
        criterion_value=float(value * s2),
        r_squared=float(min(max(r2, 0.0), 1.0)),
        n=n,
        subjects=subjects,
        null_names=system.null_names,
        y_scale=scale,
        jitter=sol.jitter,
        fitted=system.fitted_values(params.theta, sol.d * scale, sol.c * scale,
                                    sol.b * scale if system.Z is not None else None, exact=True),
    )
