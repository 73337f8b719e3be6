import numpy as np
import pytest
from scipy import integrate

from actispline.core import DataFormatError, FactorDef, ObservationTable, SchemaError
from actispline.data import (
    CsvSchema, Stats, aggregate_daily, daily_scenario, read_csv, smooth_window, summarize, synthesize,
    window_mean, window_scenario, write_csv,
)

# Real-data reference (congruent group VM summary) that summarize() would
# reproduce on the original cohort, which is not available here.
CONGRUENT_VM_REFERENCE = {"mean": 952.0, "std": 1789.4, "max": 32439.0}


def write(tmp_path, text, name="a.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_read_well_formed(tmp_path):
    p = write(tmp_path, "subject,day,minute,vm,group\ns1,1,0,10,a\ns1,1,1,12,a\ns2,1,0,3,b\n")
    table, rep = read_csv(p)
    assert table.n == 3 and rep.dropped == 0
    assert table.factor_defs[0].levels == ("a", "b")
    assert table.response.tolist() == [10.0, 12.0, 3.0]


def test_blank_vm_dropped(tmp_path):
    p = write(tmp_path, "subject,minute,vm,group\ns1,0,10,a\ns1,1,,a\ns2,0,3,b\n")
    table, rep = read_csv(p)
    assert table.n == 2 and rep.dropped == 1 and rep.dropped_rows == (3,)


def test_missing_subject_column(tmp_path):
    p = write(tmp_path, "minute,vm,group\n0,1,a\n")
    with pytest.raises(SchemaError, match="subject"):
        read_csv(p)


@pytest.mark.parametrize("body", ["s1,0,abc,a\n", "s1,1500,3,a\n", "s1,0,3\n", "s1,0,3,a,extra\n"])
def test_malformed_rows(tmp_path, body):
    p = write(tmp_path, "subject,minute,vm,group\n" + body)
    with pytest.raises(DataFormatError, match="row 2"):
        read_csv(p)


def test_hhmm_times(tmp_path):
    p = write(tmp_path, "subject,minute,vm,group\ns1,0930,1,a\ns1,2359,2,b\n")
    table, _ = read_csv(p, CsvSchema(time_format="hhmm"))
    assert table.time.tolist() == [570.0, 1439.0]
    with pytest.raises(DataFormatError):
        read_csv(write(tmp_path, "subject,minute,vm,group\ns1,0975,1,a\n", "b.csv"), CsvSchema(time_format="hhmm"))


def test_round_trip(tmp_path, rng):
    table, _ = synthesize(daily_scenario(subjects_per_group=2, minutes_per_subject=10, seed=1))
    p = tmp_path / "t.csv"
    write_csv(table, p)
    back, _ = read_csv(p)
    assert np.array_equal(back.subject, table.subject)
    assert np.array_equal(back.time, table.time)
    assert np.array_equal(back.response, table.response)
    assert np.array_equal(back.codes, table.codes)
    assert back.factor_defs == table.factor_defs


def _days_table(vms):
    n = len(vms)
    return ObservationTable(["s"] * n, [100.0] * n, np.zeros((n, 1)), vms,
                            (FactorDef("group", ("a", "b")),), list(range(n)))


def test_aggregate_daily():
    t = ObservationTable(["s"] * 4, [0.0, 1.0, 0.0, 1.0], np.zeros((4, 1)), [4.0] * 4,
                         (FactorDef("group", ("a", "b")),), [0, 0, 1, 1])
    m = aggregate_daily(t, "mean_over_days")
    assert m.n == 2 and m.response.tolist() == [4.0, 4.0]
    assert aggregate_daily(_days_table([2.0, 6.0]), "mean_over_days").response.tolist() == [4.0]
    assert aggregate_daily(t, "stack_days") is t
    with pytest.raises(ValueError):
        aggregate_daily(t, "median")


def test_summarize_fixture():
    vm = [1.0, 2.0, 6.0, 10.0, 0.0, 5.0]
    defs = (FactorDef("group", ("a", "b")), FactorDef("falls", ("0", "1")))
    codes = [[0, 0], [0, 1], [0, 1], [1, 0], [1, 0], [1, 0]]
    t = ObservationTable(["x", "x", "y", "z", "z", "w"], [0, 10, 20, 30, 40, 50], codes, vm, defs)
    st = summarize(t, "group")
    a, b = st.groups
    # hand computed: a = {1, 2, 6}, b = {10, 0, 5}
    assert a.vm == Stats(3.0, np.sqrt(7.0), 1.0, 2.0, 6.0)
    assert b.vm == Stats(5.0, 5.0, 0.0, 5.0, 10.0)
    assert a.subjects == 2 and b.subjects == 2
    assert a.percentages["falls"] == pytest.approx({"0": 100 / 3, "1": 200 / 3})
    assert len(st.to_rows()) == 4


def test_summarize_single_row():
    t = ObservationTable(["s"], [10.0], [[1]], [7.5], (FactorDef("group", ("a", "b")),))
    (g,) = summarize(t, "group").groups
    assert g.vm.std == 0.0 and g.vm.min == g.vm.median == g.vm.max == 7.5


def test_congruent_reference_is_consistent():
    ref = CONGRUENT_VM_REFERENCE
    assert 0.0 <= ref["mean"] <= ref["max"] and ref["std"] > 0


def test_synthesize_noise_free():
    scen = daily_scenario(sigma_b=0.0, sigma_eps=0.0, subjects_per_group=2, minutes_per_subject=24)
    table, truth = synthesize(scen)
    for i in range(table.n):
        g = table.factor_defs[0].levels[table.codes[i, 0]]
        assert table.response[i] == pytest.approx(float(truth.eta(table.time[i], g)), abs=1e-14)


def test_scenario_side_conditions():
    scen = daily_scenario()
    day = (0.0, 1440.0)
    opts = dict(points=[360, 480, 720, 1200, 1320], limit=200)
    assert abs(integrate.quad(scen.eta1, *day, **opts)[0]) <= 1e-8
    assert abs(sum(scen.eta2.values())) <= 1e-12
    for g in scen.groups:
        assert abs(integrate.quad(lambda t: scen.eta12(t, g), *day, **opts)[0]) <= 1e-8
    t = np.linspace(0, 1439, 97)
    assert np.allclose(sum(scen.eta12(t, g) for g in scen.groups), 0.0, atol=1e-14)
    assert integrate.quad(lambda t: smooth_window(t, 360, 1320, 120), *day, **opts)[0] / 1440 == pytest.approx(
        window_mean(360, 1320, 120), rel=1e-10)


def test_window_scenario_support():
    scen = window_scenario(0.75)
    t = np.arange(1440.0)
    d = scen.delta(t, "a", "b")
    inside = (t > 360) & (t < 600)
    assert np.max(np.abs(d[~inside])) <= 1e-14 and np.all(d[inside] > 1e-6)
    assert d.max() == pytest.approx(0.75)


def test_random_intercept_variance():
    scen = daily_scenario(sigma_b=0.5, sigma_eps=1.0, subjects_per_group=50, minutes_per_subject=144, seed=9)
    table, truth = synthesize(scen)
    subj = table.subject
    grid_eta = np.array([truth.eta(table.time[i], table.factor_defs[0].levels[table.codes[i, 0]])
                         for i in range(table.n)])
    r = table.response - grid_eta
    means = np.array([r[subj == s].mean() for s in np.unique(subj)])
    # method of moments: Var(mean) = sigma_b^2 + sigma_eps^2 / T
    est = means.var(ddof=1) - 1.0 / 144
    assert 0.75 * 0.25 <= est <= 1.25 * 0.25
    assert len(truth.b) == 200


def test_synthesize_is_seeded():
    a, _ = synthesize(daily_scenario(subjects_per_group=2, seed=4))
    b, _ = synthesize(daily_scenario(subjects_per_group=2, seed=4))
    assert np.array_equal(a.response, b.response)
    with pytest.raises(ValueError):
        synthesize(daily_scenario(sigma_eps=-1.0))
