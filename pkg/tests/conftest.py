import numpy as np
import pytest

from actispline.core import FactorDef, ObservationTable


def make_table(time, response, groups=None, subjects=None, levels=("a", "b", "c", "d")):
    time = np.asarray(time, dtype=float)
    n = time.shape[0]
    if groups is None:
        groups = np.zeros(n, dtype=int)
    if subjects is None:
        subjects = [f"s{i % 5}" for i in range(n)]
    return ObservationTable(subjects, time, np.asarray(groups)[:, None], response, (FactorDef("group", levels),))


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)


def build(table, terms, knot_rows=None, y=None):
    """Assemble the penalized system for ``terms`` with knots at ``knot_rows`` (all rows by default)."""
    from actispline.core import ModelSpec, validate_spec
    from actispline.kernel import CovariatePoints
    from actispline.solver import build_system

    plan = validate_spec(ModelSpec(tuple(terms)), table)
    subjects = tuple(np.unique(table.subject)) if plan.has_random_intercept else ()
    pts = CovariatePoints.from_table(table, subjects or None)
    rows = np.arange(table.n) if knot_rows is None else knot_rows
    return build_system(plan, pts, table.response if y is None else y, rows, subjects)


def dense_solve(system, params):
    """Brute-force minimizer of the penalized objective via the full normal system."""
    X = system.design(params.theta)
    P = system.penalty(params)
    n = system.n
    M = X.T @ X + n * params.lam * P
    coef = np.linalg.solve(M, X.T @ system.y)
    return X, M, coef


def mp_fitted(system, params, dps=40):
    """Fitted values of the penalized least-squares problem solved in ``dps``-digit arithmetic."""
    import mpmath as mp

    with mp.workdps(dps):
        X = mp.matrix(system.design(params.theta).tolist())
        P = mp.matrix(system.penalty(params).tolist())
        M = X.T * X + mp.mpf(system.n) * mp.mpf(params.lam) * P
        coef = mp.lu_solve(M, X.T * mp.matrix(system.y.tolist()))
        return np.array([float(v) for v in X * coef])


def random_instance(seed, n_max=50):
    """Grouped instance with subjects; knots at every observation."""
    from actispline.solver import SmoothingParams

    r = np.random.default_rng(seed)
    n = int(r.integers(12, n_max + 1))
    table = make_table(np.sort(r.uniform(0, 1440, n)), r.normal(size=n), groups=r.integers(0, 4, n),
                       subjects=[f"s{k}" for k in r.integers(0, 5, n)])
    from actispline.core import TermSpec
    terms = (TermSpec("constant"), TermSpec("time_linear"), TermSpec("time_smooth"),
             TermSpec("nominal_main", "group"), TermSpec("time_by_nominal_smooth", "group"),
             TermSpec("random_intercept"))
    sys_ = build(table, terms)
    k = len(sys_.R_list)
    params = SmoothingParams(float(r.uniform(-4, -1)), tuple(r.uniform(-1, 2, k)), float(r.uniform(-1, 1)))
    return sys_, params


ACCEPTANCE: dict = {}


def record(number: int, ok: bool, detail: str) -> None:
    """Store one acceptance line; printed at the end of the session."""
    ACCEPTANCE[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
