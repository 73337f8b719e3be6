"""CSV ingestion, day aggregation, group summaries and synthetic cohorts."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .core import (
    MINUTES_PER_DAY,
    DataFormatError,
    FactorDef,
    ObservationTable,
    SchemaError,
)

MISSING = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class CsvSchema:
    """Column-name mapping. ``factors`` maps factor name to column name."""

    subject: str = "subject"
    day: str = "day"
    minute: str = "minute"
    vm: str = "vm"
    factors: tuple[tuple[str, str], ...] = (("group", "group"),)
    time_format: str = "minute"
    levels: tuple[tuple[str, tuple[str, ...]], ...] = ()

    @classmethod
    def with_factors(cls, names: Sequence[str], **kw) -> "CsvSchema":
        return cls(factors=tuple((n, n) for n in names), **kw)


@dataclass(frozen=True)
class ReadReport:
    rows_read: int
    dropped: int
    dropped_rows: tuple[int, ...] = ()


def parse_time(text: str, fmt: str) -> float:
    value = float(text)
    if fmt == "minute":
        return value
    if fmt == "hhmm":
        hh, mm = divmod(int(value), 100)
        if value != int(value) or mm >= 60 or hh >= 24:
            raise ValueError(f"not an HHMM clock time: {text!r}")
        return float(hh * 60 + mm)
    raise ValueError(f"unknown time format {fmt!r}")


def read_csv(path, schema: CsvSchema | None = None) -> tuple[ObservationTable, ReadReport]:
    """Read a long-format activity file.

    Rows with a blank ``vm`` are dropped and counted in the report. The
    ``day`` column is optional (day 0 when absent). Levels keep their order of
    first appearance unless ``schema.levels`` fixes them.
    """
    schema = schema or CsvSchema()
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = [schema.subject, schema.minute, schema.vm] + [c for _, c in schema.factors]
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"missing column(s): {', '.join(missing)}")
        has_day = schema.day in header
        subj, day, minute, vm, labels = [], [], [], [], []
        dropped = []
        rows_read = 0
        for rowno, row in enumerate(reader, start=2):
            rows_read += 1
            if None in row or any(v is None for v in row.values()):
                raise DataFormatError(f"row {rowno}: wrong number of fields")
            raw_vm = row[schema.vm].strip()
            if raw_vm.lower() in MISSING:
                dropped.append(rowno)
                continue
            try:
                v = float(raw_vm)
                t = parse_time(row[schema.minute].strip(), schema.time_format)
                dd = int(row[schema.day]) if has_day else 0
            except ValueError as exc:
                raise DataFormatError(f"row {rowno}: unparseable value ({exc})") from None
            if not math.isfinite(v) or not 0.0 <= t < MINUTES_PER_DAY:
                raise DataFormatError(f"row {rowno}: value out of range")
            s = row[schema.subject].strip()
            labs = [row[c].strip() for _, c in schema.factors]
            if not s or any(not x for x in labs):
                raise DataFormatError(f"row {rowno}: blank subject or factor level")
            subj.append(s)
            day.append(dd)
            minute.append(t)
            vm.append(v)
            labels.append(labs)
    if not vm:
        raise DataFormatError(f"{path}: no usable rows")
    fixed = dict(schema.levels)
    fdefs, codes = [], np.zeros((len(vm), len(schema.factors)), dtype=np.int64)
    for j, (name, _) in enumerate(schema.factors):
        col = [lab[j] for lab in labels]
        levels = tuple(fixed.get(name) or dict.fromkeys(col))
        try:
            f = FactorDef(name, levels)
        except ValueError as exc:
            raise DataFormatError(str(exc)) from None
        lookup = {lv: k for k, lv in enumerate(f.levels)}
        try:
            codes[:, j] = [lookup[x] for x in col]
        except KeyError as exc:
            raise DataFormatError(f"level {exc.args[0]!r} not declared for factor {name!r}") from None
        fdefs.append(f)
    table = ObservationTable(subj, minute, codes, vm, tuple(fdefs), day)
    return table, ReadReport(rows_read, len(dropped), tuple(dropped))


def write_csv(table: ObservationTable, path, schema: CsvSchema | None = None) -> None:
    schema = schema or CsvSchema.with_factors([f.name for f in table.factor_defs])
    cols = dict(schema.factors)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([schema.subject, schema.day, schema.minute, schema.vm] + [cols[f.name] for f in table.factor_defs])
        for i in range(table.n):
            w.writerow([table.subject[i], int(table.day[i]), repr(float(table.time[i])), repr(float(table.response[i]))]
                       + [f.levels[c] for f, c in zip(table.factor_defs, table.codes[i])])


def aggregate_daily(table: ObservationTable, mode: str = "stack_days") -> ObservationTable:
    """``stack_days`` keeps every row; ``mean_over_days`` averages each (subject, minute)."""
    if mode == "stack_days":
        return table
    if mode != "mean_over_days":
        raise ValueError(f"unknown aggregation mode {mode!r}")
    order = {}
    for i, key in enumerate(zip(table.subject, table.time)):
        order.setdefault(key, []).append(i)
    subjects = list(dict.fromkeys(table.subject))
    rank = {s: k for k, s in enumerate(subjects)}
    keys = sorted(order, key=lambda k: (rank[k[0]], k[1]))
    first = np.array([order[k][0] for k in keys], dtype=np.int64)
    vm = np.array([table.response[order[k]].mean() for k in keys])
    return ObservationTable(table.subject[first], table.time[first], table.codes[first], vm,
                            table.factor_defs, np.zeros(len(keys), dtype=np.int64))


@dataclass(frozen=True)
class Stats:
    mean: float
    std: float
    min: float
    median: float
    max: float

    @classmethod
    def of(cls, x) -> "Stats":
        x = np.asarray(x, dtype=float)
        std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
        return cls(float(x.mean()), std, float(x.min()), float(np.median(x)), float(x.max()))


@dataclass(frozen=True)
class GroupSummary:
    level: str
    subjects: int
    rows: int
    vm: Stats
    time: Stats
    percentages: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SummaryTable:
    factor: str
    groups: tuple[GroupSummary, ...]

    def to_dict(self) -> dict:
        return {"factor": self.factor, "groups": [asdict(g) for g in self.groups]}

    def to_rows(self) -> list[dict]:
        out = []
        for g in self.groups:
            for var in ("vm", "time"):
                out.append({"group": g.level, "variable": var, "subjects": g.subjects, "rows": g.rows,
                            **asdict(getattr(g, var))})
        return out


def summarize(table: ObservationTable, group_factor: str) -> SummaryTable:
    """Per-level statistics of vm and time, plus level percentages of binary factors."""
    try:
        j = table.factor_index(group_factor)
    except KeyError:
        raise ValueError(f"unknown factor {group_factor!r}") from None
    fdef = table.factor_defs[j]
    groups = []
    for code, level in enumerate(fdef.levels):
        rows = np.flatnonzero(table.codes[:, j] == code)
        if rows.size == 0:
            continue
        pct = {}
        for k, other in enumerate(table.factor_defs):
            if k != j and other.K == 2:
                pct[other.name] = {lv: 100.0 * float(np.mean(table.codes[rows, k] == c))
                                   for c, lv in enumerate(other.levels)}
        groups.append(GroupSummary(level, len(np.unique(table.subject[rows])), int(rows.size),
                                   Stats.of(table.response[rows]), Stats.of(table.time[rows]), pct))
    return SummaryTable(group_factor, tuple(groups))


# ---------------------------------------------------------------------------
# synthetic cohorts
# ---------------------------------------------------------------------------

def smooth_window(t, start: float, end: float, ramp: float):
    """1 on ``[start+ramp, end-ramp]``, C1 smoothstep ramps, exactly 0 outside ``(start, end)``."""
    t = np.asarray(t, dtype=float)
    up = np.clip((t - start) / ramp, 0.0, 1.0)
    down = np.clip((end - t) / ramp, 0.0, 1.0)
    s = np.minimum(up, down)
    return s * s * (3.0 - 2.0 * s)


def window_mean(start: float, end: float, ramp: float) -> float:
    """Daily average of :func:`smooth_window` (each ramp integrates to ramp/2)."""
    return (end - start - ramp) / MINUTES_PER_DAY


def _gauss_mean(mu: float, width: float) -> float:
    a = stats.norm.cdf((MINUTES_PER_DAY - mu) / width) - stats.norm.cdf(-mu / width)
    return width * math.sqrt(2.0 * math.pi) * a / MINUTES_PER_DAY


@dataclass(frozen=True, eq=False)
class SyntheticScenario:
    groups: tuple[str, ...]
    eta0: float
    eta1: Callable
    eta2: dict
    eta12: Callable
    delta_profile: Callable | None = None
    sigma_b: float = 0.5
    sigma_eps: float = 1.0
    subjects_per_group: int = 10
    minutes_per_subject: int = 144
    seed: int = 0
    factor: str = "group"

    def eta(self, t, g):
        return self.eta0 + self.eta1(t) + self.eta2[g] + self.eta12(t, g)

    def delta(self, t, g, g_star):
        return self.eta(t, g) - self.eta(t, g_star)


def daily_scenario(groups: Sequence[str] = ("rational", "irrational", "congruent", "incongruent"),
                   baseline: float = 3.0, peak: float = 1.5, peak_minute: float = 720.0, width: float = 200.0,
                   shifts: Sequence[float] | None = None, weights: Sequence[float] | None = None,
                   window: tuple[float, float] = (360.0, 1320.0), ramp: float = 120.0,
                   **kw) -> SyntheticScenario:
    """Scenario with closed-form components satisfying the ANOVA side conditions.

    ``eta1`` is a centered Gaussian bump at ``peak_minute``; group ``g`` adds
    ``shifts[g] + weights[g] * window(t)`` which is split into its main effect
    and interaction. Shifts and weights are centered across groups.
    """
    groups = tuple(groups)
    K = len(groups)
    shifts = np.zeros(K) if shifts is None else np.asarray(shifts, dtype=float)
    if weights is None:
        weights = np.linspace(0.6, -0.6, K)
    weights = np.asarray(weights, dtype=float)
    shifts = shifts - shifts.mean()
    weights = weights - weights.mean()
    gbar = _gauss_mean(peak_minute, width)
    start, end = window
    wbar = window_mean(start, end, ramp)
    sh = dict(zip(groups, shifts))
    wt = dict(zip(groups, weights))

    def eta1(t):
        t = np.asarray(t, dtype=float)
        return peak * (np.exp(-0.5 * ((t - peak_minute) / width) ** 2) - gbar)

    def profile(t):
        return smooth_window(t, start, end, ramp)

    def eta12(t, g):
        return wt[g] * (profile(t) - wbar)

    eta2 = {g: float(sh[g] + wt[g] * wbar) for g in groups}
    return SyntheticScenario(groups, baseline, eta1, eta2, eta12, profile, **kw)


def window_scenario(amplitude: float, window=(360.0, 600.0), ramp: float = 30.0,
                    groups=("a", "b"), **kw) -> SyntheticScenario:
    """Two groups whose difference ``eta(t, a) - eta(t, b)`` is nonzero exactly on ``window``."""
    return daily_scenario(groups, shifts=[0.0, 0.0], weights=[amplitude / 2.0, -amplitude / 2.0],
                          window=window, ramp=ramp, **kw)


@dataclass(frozen=True, eq=False)
class SyntheticTruth:
    scenario: SyntheticScenario
    b: dict

    def eta(self, t, g):
        return self.scenario.eta(t, g)

    def delta(self, t, g, g_star):
        return self.scenario.delta(t, g, g_star)

    def components(self) -> dict:
        s = self.scenario
        return {"eta0": s.eta0, "eta1": s.eta1, "eta2": dict(s.eta2), "eta12": s.eta12}


def synthesize(scenario: SyntheticScenario) -> tuple[ObservationTable, SyntheticTruth]:
    """Draw ``y = eta(t, g) + b_s + eps`` on an even within-day grid per subject."""
    s = scenario
    for name in ("sigma_b", "sigma_eps"):
        v = getattr(s, name)
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"{name} must be finite and nonnegative")
    if s.subjects_per_group < 1 or s.minutes_per_subject < 1:
        raise ValueError("need at least one subject and one minute per subject")
    rng = np.random.default_rng(s.seed)
    times = np.linspace(0.0, MINUTES_PER_DAY, s.minutes_per_subject, endpoint=False)
    subjects, groups = [], []
    for g in s.groups:
        for k in range(s.subjects_per_group):
            subjects.append(f"{g}-{k:03d}")
            groups.append(g)
    b = rng.normal(0.0, s.sigma_b, len(subjects)) if s.sigma_b > 0 else np.zeros(len(subjects))
    T = len(times)
    subj_col = np.repeat(subjects, T)
    code_of = {g: k for k, g in enumerate(s.groups)}
    codes = np.repeat([code_of[g] for g in groups], T)
    time_col = np.tile(times, len(subjects))
    eta = np.concatenate([s.eta(times, g) for g in groups])
    eps = rng.normal(0.0, s.sigma_eps, eta.shape[0]) if s.sigma_eps > 0 else np.zeros_like(eta)
    y = eta + np.repeat(b, T) + eps
    table = ObservationTable(subj_col, time_col, codes[:, None], y, (FactorDef(s.factor, s.groups),))
    return table, SyntheticTruth(s, dict(zip(subjects, b.tolist())))
