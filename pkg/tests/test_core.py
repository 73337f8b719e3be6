import numpy as np
import pytest

from actispline.core import (
    FactorDef, ModelSpec, Observation, ObservationTable, SpecError, TermSpec, ssanova_terms, validate_spec,
)

from conftest import make_table


def history_table():
    defs = (FactorDef("group", ("rational", "irrational", "congruent", "incongruent")),
            FactorDef("falls", ("0", "1")), FactorDef("injury", ("0", "1")))
    obs = [Observation(f"s{i}", 10.0 * i, (defs[0].levels[i % 4], str(i % 2), str(i // 4 % 2)), 1.0) for i in range(16)]
    return ObservationTable.from_observations(obs, defs)


def test_minimal_spline_plan():
    spec = ModelSpec((TermSpec("constant"), TermSpec("time_linear"), TermSpec("time_smooth")))
    plan = validate_spec(spec, make_table([0, 10, 20], [1, 2, 3]))
    assert len(plan.unpenalized) == 2 and len(plan.penalized) == 1


def test_unknown_factor():
    spec = ModelSpec((TermSpec("constant"), TermSpec("nominal_main", "sex")))
    with pytest.raises(SpecError, match="unknown factor"):
        validate_spec(spec, make_table([0, 10], [1, 2]))


def test_full_model_with_history_factors():
    # enumerated: constant, time_linear unpenalized; the other seven penalized
    terms = (TermSpec("constant"), TermSpec("time_linear"), TermSpec("time_smooth"),
             TermSpec("nominal_main", "group"), TermSpec("time_by_nominal_linear", "group"),
             TermSpec("time_by_nominal_smooth", "group"), TermSpec("nominal_main", "falls"),
             TermSpec("nominal_main", "injury"), TermSpec("random_intercept"))
    plan = validate_spec(ModelSpec(terms), history_table())
    assert len(plan.unpenalized) == 2
    assert len(plan.penalized) == 7
    assert plan.cardinality("group") == 4


def test_errors_are_exhaustive():
    spec = ModelSpec((TermSpec("constant"), TermSpec("constant"), TermSpec("nominal_main", "nope"),
                      TermSpec("time_by_nominal_smooth", "group"), TermSpec("time_smooth")))
    empty = make_table([], [])
    with pytest.raises(SpecError) as exc:
        validate_spec(spec, empty)
    msgs = " | ".join(exc.value.errors)
    for needle in ("duplicate term", "unknown factor", "without its factor", "empty table"):
        assert needle in msgs


def test_validate_is_idempotent_and_ordered():
    spec = ModelSpec(ssanova_terms())
    table = history_table()
    plan = validate_spec(spec, table)
    assert validate_spec(plan, table) == plan
    assert [t.name for t in plan.terms] == [t.name for t in spec.terms]


def test_term_defaults():
    assert TermSpec("constant").penalized is False
    assert TermSpec("time_smooth").penalized is True
    assert TermSpec("nominal_main", "g").penalized is True
    assert TermSpec.parse("nominal_main:falls!") == TermSpec("nominal_main", "falls", False)
    with pytest.raises(SpecError, match="cannot be unpenalized"):
        validate_spec(ModelSpec((TermSpec("time_smooth", penalized=False), TermSpec("nominal_main", "group"))),
                      make_table([0, 1], [1, 2]))


def test_builder_moves_main_effects_to_null_space_with_subjects():
    terms = ssanova_terms("group", ["falls"])
    mains = [t for t in terms if t.kind == "nominal_main"]
    assert all(not t.penalized for t in mains)
    assert all(t.penalized for t in ssanova_terms(random_intercept=False) if t.kind == "nominal_main")


def test_random_intercept_needs_two_subjects():
    table = make_table([0, 10, 20], [1, 2, 3], subjects=["x", "x", "x"])
    with pytest.raises(SpecError, match="2 subjects"):
        validate_spec(ModelSpec((TermSpec("constant"), TermSpec("random_intercept"))), table)


def test_table_invariants():
    with pytest.raises(ValueError):
        make_table([1500.0], [1.0])
    with pytest.raises(ValueError):
        make_table([10.0], [np.nan])
    with pytest.raises(ValueError):
        FactorDef("g", ("a",))
    with pytest.raises(ValueError):
        FactorDef("g", ("a", "a"))
    t = make_table([0.0, 5.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        t.time[0] = 3.0
