"""Domain types and model specification for mixed-effects SSANOVA fits.

Times are minutes of the day in ``[0, 1440)``; the response is the raw
activity count (vector magnitude). Factor levels are stored as integer codes
into the ordered level list of their :class:`FactorDef`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

MINUTES_PER_DAY = 1440.0

TERM_KINDS = (
    "constant",
    "time_linear",
    "time_smooth",
    "nominal_main",
    "time_by_nominal_linear",
    "time_by_nominal_smooth",
    "random_intercept",
)
FACTOR_KINDS = ("nominal_main", "time_by_nominal_linear", "time_by_nominal_smooth")
TRANSFORMS = ("identity", "log1p")
CRITERIA = ("GCV", "GML")


class ActisplineError(Exception):
    """Base class for domain/validation failures (CLI exit code 1)."""


class SpecError(ActisplineError, ValueError):
    """Model specification does not fit the data. Carries every problem found."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class SingularFitError(ActisplineError):
    def __init__(self, message: str, columns: Sequence[str] = ()):
        self.columns = list(columns)
        super().__init__(message)


class CriterionError(ActisplineError):
    pass


class OptimizationError(ActisplineError):
    pass


class DataFormatError(OSError):
    """Unreadable or malformed input file (CLI exit code 2)."""


class SchemaError(DataFormatError):
    pass


@dataclass(frozen=True)
class FactorDef:
    name: str
    levels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if len(self.levels) < 2:
            raise ValueError(f"factor {self.name!r} needs at least 2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise ValueError(f"factor {self.name!r} has duplicate levels")

    @property
    def K(self) -> int:
        return len(self.levels)

    def code(self, label) -> int:
        try:
            return self.levels.index(str(label))
        except ValueError:
            raise ValueError(f"unknown level {label!r} for factor {self.name!r}") from None


class Observation(NamedTuple):
    subject_id: str
    time: float
    levels: tuple[str, ...]
    response: float
    day: int = 0


@dataclass(frozen=True, eq=False)
class ObservationTable:
    """Long-format records stored column-wise.

    ``codes`` has one column per factor in ``factor_defs`` holding integer
    level codes.
    """

    subject: np.ndarray
    time: np.ndarray
    codes: np.ndarray
    response: np.ndarray
    factor_defs: tuple[FactorDef, ...]
    day: np.ndarray | None = None

    def __post_init__(self):
        subject = np.asarray(self.subject).astype(str)
        time = np.asarray(self.time, dtype=float)
        response = np.asarray(self.response, dtype=float)
        n = time.shape[0]
        codes = np.asarray(self.codes, dtype=np.int64).reshape(n, len(self.factor_defs))
        day = np.zeros(n, dtype=np.int64) if self.day is None else np.asarray(self.day, dtype=np.int64)
        if not (subject.shape[0] == response.shape[0] == day.shape[0] == n):
            raise ValueError("column lengths differ")
        if n and (np.any(time < 0) or np.any(time >= MINUTES_PER_DAY) or not np.all(np.isfinite(time))):
            raise ValueError("time must lie in [0, 1440)")
        if not np.all(np.isfinite(response)):
            raise ValueError("response must be finite")
        for j, f in enumerate(self.factor_defs):
            if n and (codes[:, j].min() < 0 or codes[:, j].max() >= f.K):
                raise ValueError(f"level code out of range for factor {f.name!r}")
        for arr in (subject, time, codes, response, day):
            arr.setflags(write=False)
        object.__setattr__(self, "subject", subject)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "codes", codes)
        object.__setattr__(self, "response", response)
        object.__setattr__(self, "day", day)
        object.__setattr__(self, "factor_defs", tuple(self.factor_defs))

    @classmethod
    def from_observations(cls, observations: Sequence[Observation], factor_defs: Sequence[FactorDef]):
        factor_defs = tuple(factor_defs)
        codes = [[f.code(lv) for f, lv in zip(factor_defs, o.levels)] for o in observations]
        for o in observations:
            if len(o.levels) != len(factor_defs):
                raise ValueError("every observation needs one level per factor")
        return cls(
            subject=[o.subject_id for o in observations],
            time=[o.time for o in observations],
            codes=np.array(codes, dtype=np.int64).reshape(len(observations), len(factor_defs)),
            response=[o.response for o in observations],
            factor_defs=factor_defs,
            day=[o.day for o in observations],
        )

    @property
    def n(self) -> int:
        return int(self.time.shape[0])

    @property
    def observations(self) -> Iterator[Observation]:
        for i in range(self.n):
            yield Observation(
                self.subject[i],
                float(self.time[i]),
                tuple(f.levels[c] for f, c in zip(self.factor_defs, self.codes[i])),
                float(self.response[i]),
                int(self.day[i]),
            )

    def factor_index(self, name: str) -> int:
        for j, f in enumerate(self.factor_defs):
            if f.name == name:
                return j
        raise KeyError(name)

    def factor(self, name: str) -> FactorDef:
        return self.factor_defs[self.factor_index(name)]

    def take(self, rows) -> "ObservationTable":
        rows = np.asarray(rows)
        return ObservationTable(
            self.subject[rows], self.time[rows], self.codes[rows], self.response[rows],
            self.factor_defs, self.day[rows],
        )


@dataclass(frozen=True)
class TermSpec:
    kind: str
    factor: str | None = None
    penalized: bool | None = None

    def __post_init__(self):
        if self.penalized is None:
            object.__setattr__(self, "penalized", self.kind not in ("constant", "time_linear"))

    @property
    def name(self) -> str:
        return f"{self.kind}({self.factor})" if self.factor else self.kind

    @property
    def uses_time(self) -> bool:
        return self.kind in ("time_linear", "time_smooth", "time_by_nominal_linear", "time_by_nominal_smooth")

    @property
    def is_function(self) -> bool:
        return self.kind != "random_intercept"

    def to_dict(self) -> dict:
        return {"kind": self.kind, "factor": self.factor, "penalized": self.penalized}

    @classmethod
    def parse(cls, token: str) -> "TermSpec":
        """Read a ``kind`` or ``kind:factor`` token, ``!`` suffix marks unpenalized."""
        token = token.strip()
        penalized = None
        if token.endswith("!"):
            token, penalized = token[:-1], False
        kind, _, factor = token.partition(":")
        return cls(kind.strip(), factor.strip() or None, penalized)


@dataclass(frozen=True)
class ModelSpec:
    terms: tuple[TermSpec, ...]
    response_transform: str = "log1p"
    criterion: str = "GCV"
    knot_count: int | str = "auto"
    seed: int = 0
    stage2: bool = True
    max_cycles: int = 25

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))

    def to_dict(self) -> dict:
        return {
            "terms": [t.to_dict() for t in self.terms],
            "response_transform": self.response_transform,
            "criterion": self.criterion,
            "knot_count": self.knot_count,
            "seed": self.seed,
            "stage2": self.stage2,
            "max_cycles": self.max_cycles,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["terms"] = tuple(TermSpec(**t) for t in d["terms"])
        return cls(**d)


def ssanova_terms(factor: str | None = "group", extra_factors: Sequence[str] = (), random_intercept: bool = True,
                  penalize_main: bool | None = None) -> tuple[TermSpec, ...]:
    """Term list for the time x factor decomposition, with additive extra factors.

    Nominal main effects go to the null space when subject intercepts are
    present (``penalize_main=None``); a penalized group main effect is
    confounded with the subject intercepts and gets shrunk away.
    """
    if penalize_main is None:
        penalize_main = not random_intercept
    terms = [TermSpec("constant"), TermSpec("time_linear"), TermSpec("time_smooth")]
    if factor:
        terms += [
            TermSpec("nominal_main", factor, penalize_main),
            TermSpec("time_by_nominal_linear", factor),
            TermSpec("time_by_nominal_smooth", factor),
        ]
    terms += [TermSpec("nominal_main", f, penalize_main) for f in extra_factors]
    if random_intercept:
        terms.append(TermSpec("random_intercept"))
    return tuple(terms)


@dataclass(frozen=True)
class ModelPlan:
    """Validated spec with factor cardinalities bound."""

    spec: ModelSpec
    terms: tuple[TermSpec, ...]
    factor_levels: tuple[tuple[str, int], ...] = field(default=())

    @property
    def unpenalized(self) -> tuple[TermSpec, ...]:
        return tuple(t for t in self.terms if not t.penalized)

    @property
    def penalized(self) -> tuple[TermSpec, ...]:
        return tuple(t for t in self.terms if t.penalized)

    @property
    def kernel_terms(self) -> tuple[TermSpec, ...]:
        """Penalized function terms represented through knots."""
        return tuple(t for t in self.terms if t.penalized and t.is_function)

    @property
    def has_random_intercept(self) -> bool:
        return any(t.kind == "random_intercept" for t in self.terms)

    def cardinality(self, factor: str) -> int:
        return dict(self.factor_levels)[factor]


def validate_spec(spec: ModelSpec | ModelPlan, table: ObservationTable) -> ModelPlan:
    """Check ``spec`` against ``table`` and report every problem at once."""
    if isinstance(spec, ModelPlan):
        spec = spec.spec
    errors = []
    names = {f.name: f for f in table.factor_defs}
    seen = set()
    if table.n < 1:
        errors.append("empty table")
    for t in spec.terms:
        if t.kind not in TERM_KINDS:
            errors.append(f"unsupported term kind {t.kind!r}")
            continue
        if t.name in seen:
            errors.append(f"duplicate term {t.name}")
        seen.add(t.name)
        if t.kind in FACTOR_KINDS:
            if t.factor is None:
                errors.append(f"term {t.kind} needs a factor")
            elif t.factor not in names:
                errors.append(f"unknown factor {t.factor!r} in {t.name}")
        elif t.factor is not None:
            errors.append(f"term {t.kind} takes no factor")
        if t.kind in ("constant", "time_linear") and t.penalized:
            errors.append(f"{t.kind} is always unpenalized")
        if not t.penalized and t.kind not in ("constant", "time_linear", "nominal_main"):
            errors.append(f"{t.name} cannot be unpenalized")
    for t in spec.terms:
        if t.kind in ("time_by_nominal_linear", "time_by_nominal_smooth") and t.factor in names:
            if f"nominal_main({t.factor})" not in seen:
                errors.append(f"interaction {t.name} without its factor main effect nominal_main({t.factor})")
    if spec.response_transform not in TRANSFORMS:
        errors.append(f"unknown response transform {spec.response_transform!r}")
    if spec.criterion not in CRITERIA:
        errors.append(f"unknown criterion {spec.criterion!r}")
    kc = spec.knot_count
    if not (kc == "auto" or (isinstance(kc, (int, np.integer)) and not isinstance(kc, bool) and kc > 0)):
        errors.append(f"knot_count must be a positive integer or 'auto', got {kc!r}")
    if "random_intercept" in seen and table.n and len(np.unique(table.subject)) < 2:
        errors.append("random_intercept needs at least 2 subjects")
    if not any(t.penalized for t in spec.terms if t.kind in TERM_KINDS):
        errors.append("model has no penalized term")
    if errors:
        raise SpecError(errors)
    used = []
    for t in spec.terms:
        if t.factor and t.factor not in dict(used):
            used.append((t.factor, names[t.factor].K))
    return ModelPlan(spec=spec, terms=spec.terms, factor_levels=tuple(used))
