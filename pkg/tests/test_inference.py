import dataclasses
import json

import numpy as np
import pytest

from actispline.core import ModelSpec, TermSpec, ssanova_terms
from actispline.data import daily_scenario, synthesize, window_scenario
from actispline.inference import (
    CurveEstimate, FitReport, default_grid, difference_curve, eval_component, posterior_covariance, predict,
    predict_curve, significant_regions, summarize_fit,
)
from actispline.kernel import CovariatePoints
from actispline.solver import fit

from conftest import make_table

GRID = default_grid()


@pytest.fixture(scope="module")
def cohort():
    scen = daily_scenario(subjects_per_group=8, minutes_per_subject=96, seed=7)
    table, truth = synthesize(scen)
    model = fit(table, ModelSpec(ssanova_terms(), response_transform="identity"))
    return model, table, truth


def simpson_mean(values):
    from scipy.integrate import simpson

    return simpson(values, x=GRID) / 1440.0


def test_default_grid():
    assert GRID.shape == (1441,) and GRID[0] == 0.0 and GRID[-1] == 1440.0


def test_side_conditions(cohort):
    model, _, _ = cohort
    eta1 = eval_component(model, "time_smooth", GRID)
    assert abs(simpson_mean(eta1.value)) <= 1e-6
    main = eval_component(model, "nominal_main(group)")
    assert main.labels == model.factor_defs[0].levels
    assert abs(main.value.sum()) <= 1e-10
    # interaction sums vanish up to rounding of the weighted kernel entries
    for term in ("time_by_nominal_linear(group)", "time_by_nominal_smooth(group)"):
        total = sum(eval_component(model, term, GRID, at={"group": g}).value for g in main.labels)
        bound = 1e-14 * model.theta[term] * np.abs(model.c).sum()
        assert np.max(np.abs(total)) <= bound


def test_constant_component(cohort):
    model, _, _ = cohort
    c = eval_component(model, "constant", GRID)
    assert np.all(c.value == model.d[0])
    assert np.ptp(c.se) <= 1e-12 * c.se[0]


def test_interaction_needs_level(cohort):
    model, _, _ = cohort
    with pytest.raises(ValueError, match="needs a level"):
        eval_component(model, "time_by_nominal_smooth(group)", GRID)
    with pytest.raises(KeyError):
        eval_component(model, "time_smooth(group)", GRID)


def test_predict_is_sum_of_components(cohort):
    model, _, _ = cohort
    g = "congruent"
    total = np.zeros_like(GRID)
    for t in model.spec.terms:
        if t.kind == "nominal_main":
            total += eval_component(model, t).value[model.factor_defs[0].code(g)]
        elif t.kind != "random_intercept":
            total += eval_component(model, t, GRID, at={"group": g}).value
    assert np.max(np.abs(predict_curve(model, GRID, {"group": g}).value - total)) <= 1e-10


def test_prediction_at_data_is_fitted_minus_intercept(cohort):
    model, table, _ = cohort
    rows = np.arange(0, table.n, 97)
    pts = CovariatePoints.from_table(table.take(rows), model.subjects)
    b = model.b_hat[pts.subject]
    assert np.max(np.abs(predict(model, pts).value - (model.fitted[rows] - b))) <= 1e-10


def test_difference_curves(cohort):
    model, _, _ = cohort
    same = difference_curve(model, "rational", "rational", GRID)
    assert np.all(same.value == 0.0) and np.all(same.se == 0.0)
    assert significant_regions(same).intervals == ()
    ab = difference_curve(model, "rational", "congruent", GRID)
    ba = difference_curve(model, "congruent", "rational", GRID)
    assert np.array_equal(ab.value, -ba.value)
    assert np.allclose(ab.se, ba.se, rtol=1e-14, atol=0)
    pa = predict_curve(model, GRID, {"group": "rational"}).value
    pb = predict_curve(model, GRID, {"group": "congruent"}).value
    assert np.max(np.abs(ab.value - (pa - pb))) <= 1e-10
    with pytest.raises(ValueError, match="unknown level"):
        difference_curve(model, "rational", "nope", GRID)


def test_difference_recovers_sine():
    rng = np.random.default_rng(42)
    t = np.tile(np.linspace(0, 1440, 2000, endpoint=False), 2)
    g = np.repeat([0, 1], 2000)
    delta = np.sin(2 * np.pi * t / 1440)
    y = 1.0 + 0.5 * delta * np.where(g == 0, 1, -1) + 0.5 * rng.normal(size=t.size)
    table = make_table(t, y, groups=g, levels=("a", "b"))
    model = fit(table, ModelSpec(ssanova_terms(random_intercept=False), response_transform="identity"))
    d = difference_curve(model, "a", "b", GRID)
    assert np.max(np.abs(d.value - np.sin(2 * np.pi * GRID / 1440))) <= 0.2


def scan_oracle(lower, upper, grid):
    out, cur = [], None
    for x, lo, up in zip(grid, lower, upper):
        s = 1 if lo > 0 else (-1 if up < 0 else 0)
        if cur and cur[0] == s:
            cur[2] = x
        else:
            if cur and cur[0]:
                out.append((cur[1], cur[2]))
            cur = [s, x, x]
    if cur and cur[0]:
        out.append((cur[1], cur[2]))
    return tuple(out)


def band(lower, upper, grid=GRID):
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    mid = (lower + upper) / 2
    return CurveEstimate(grid, mid, (upper - lower) / 4, lower, upper, 0.95, "fixture")


def test_regions_fixtures():
    assert significant_regions(band(np.full(1441, -1.0), np.full(1441, 1.0))).intervals == ()
    lo = np.full(1441, -1.0)
    lo[360:601] = 0.5
    rs = significant_regions(band(lo, lo + 2))
    assert rs.intervals == ((360.0, 600.0),)
    assert rs.to_json() == [{"start_minute": 360.0, "end_minute": 600.0}]
    # positive run, one crossing point, then a negative run
    lo = np.full(1441, -1.0)
    up = np.full(1441, 1.0)
    lo[100:200] = 0.2
    up[201:260] = -0.3
    assert significant_regions(band(lo, up)).intervals == ((100.0, 199.0), (201.0, 259.0))
    lo = np.full(1441, -1.0)
    lo[[5, 1440]] = 1.0
    assert significant_regions(band(lo, lo + 2)).intervals == ((5.0, 5.0), (1440.0, 1440.0))


def test_regions_match_scan_oracle():
    rng = np.random.default_rng(3)
    for _ in range(50):
        walk = np.cumsum(rng.normal(0, 0.2, 1441))
        half = rng.uniform(0.1, 2.0)
        c = band(walk - half, walk + half)
        assert significant_regions(c).intervals == scan_oracle(c.lower, c.upper, GRID)


def test_posterior_variance_shrinks(rng):
    t = np.sort(rng.uniform(0, 1440, 30))
    table = make_table(t, np.sin(2 * np.pi * t / 1440) + 0.5 * rng.normal(size=30))
    spec = ModelSpec((TermSpec("constant"), TermSpec("time_linear"), TermSpec("time_smooth")),
                     response_transform="identity")
    model = fit(table, spec)
    pts = CovariatePoints.from_table(table)
    mask = list(model.spec.terms)
    var = posterior_covariance(model, pts, mask)
    assert np.all(var >= 0) and np.all(var <= model.sigma2_eps)
    # dense inverse oracle
    from actispline.inference import design_rows
    H = design_rows(model, pts, mask)
    ref = model.sigma2_eps * np.einsum("ij,jk,ik->i", H, np.linalg.inv(model.M), H)
    assert np.allclose(var, ref, rtol=1e-6, atol=1e-12)
    doubled = dataclasses.replace(model, sigma2_eps=2 * model.sigma2_eps)
    assert np.allclose(posterior_covariance(doubled, pts, mask), 2 * var, rtol=1e-12)
    with pytest.raises(ValueError):
        posterior_covariance(model, pts, [])


def test_extrapolation_variance(rng):
    t = np.concatenate([rng.uniform(0, 500, 20), rng.uniform(940, 1439, 20)])
    table = make_table(t, np.cos(2 * np.pi * t / 1440) + 0.3 * rng.normal(size=40))
    spec = ModelSpec((TermSpec("constant"), TermSpec("time_linear"), TermSpec("time_smooth")),
                     response_transform="identity")
    model = fit(table, spec)
    mask = list(spec.terms)
    observed = posterior_covariance(model, CovariatePoints.from_table(table), mask)
    gap = posterior_covariance(model, CovariatePoints.make([720.0], {}, table.factor_defs), mask)
    assert gap[0] >= observed.max()


def test_zero_noise_and_pure_noise_r2(rng):
    t = np.linspace(0, 1439, 300)
    smooth = make_table(t, 3 + np.sin(2 * np.pi * t / 1440))
    spec = ModelSpec((TermSpec("constant"), TermSpec("time_linear"), TermSpec("time_smooth")),
                     response_transform="identity")
    assert summarize_fit(fit(smooth, spec)).r_squared >= 0.999
    n = 1000
    noise = make_table(rng.uniform(0, 1440, n), rng.normal(size=n), groups=rng.integers(0, 4, n),
                       subjects=[f"s{k}" for k in rng.integers(0, 40, n)])
    report = summarize_fit(fit(noise, ModelSpec(ssanova_terms(), response_transform="identity")))
    assert report.r_squared <= 0.2


def test_report_round_trip(cohort):
    model, _, _ = cohort
    rep = summarize_fit(model)
    again = FitReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert again == rep
    assert set(rep.theta) == {t.name for t in model.plan.kernel_terms}


def test_se_grows_when_data_removed():
    scen = window_scenario(1.0, subjects_per_group=10, minutes_per_subject=96, seed=5)
    table, _ = synthesize(scen)
    spec = ModelSpec(ssanova_terms(), response_transform="identity")
    full = fit(table, spec)
    half = fit(table.take(np.arange(0, table.n, 2)), spec)
    a = difference_curve(full, "a", "b", GRID).se
    b = difference_curve(half, "a", "b", GRID).se
    assert np.median(b) >= np.median(a)
