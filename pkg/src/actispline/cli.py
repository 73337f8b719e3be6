"""Command-line front end.

Subcommands: fit, components, diff, predict, summary, simulate. Settings come
from command-line flags, then a flat ``key = value`` config file (``--config``),
then built-in defaults. Exit status is 0 on success, 1 on domain or
validation errors and 2 on I/O errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .core import ActisplineError, ModelSpec, TermSpec, ssanova_terms
from .data import CsvSchema, aggregate_daily, daily_scenario, read_csv, summarize, synthesize, write_csv
from .inference import (
    default_grid,
    difference_curve,
    eval_component,
    function_terms,
    group_factor,
    predict_curve,
    significant_regions,
    summarize_fit,
)
from .modelio import atomic_write_text, load_model, save_model
from .solver import fit

log = logging.getLogger("actispline")


@dataclass
class RunConfig:
    input: str | None = None
    out_dir: str = "out"
    model: str | None = None
    grid_minutes: float = 1.0
    level: float = 0.95
    transform: str = "log1p"
    criterion: str = "GCV"
    knots: str = "auto"
    seed: int = 0
    plot: bool = False
    factors: str = "group"
    terms: str | None = None
    time_format: str = "minute"
    aggregate: str = "stack_days"
    col_subject: str = "subject"
    col_day: str = "day"
    col_minute: str = "minute"
    col_vm: str = "vm"
    stage2: bool = True
    factor: str | None = None
    g: str | None = None
    g_star: str | None = None
    # simulate
    groups: str = "rational,irrational,congruent,incongruent"
    subjects_per_group: int = 10
    minutes_per_subject: int = 144
    sigma_b: float = 0.5
    sigma_eps: float = 1.0
    baseline: float = 3.0
    peak: float = 1.5
    shifts: str | None = None
    weights: str | None = None
    window_start: float = 360.0
    window_end: float = 1320.0
    ramp: float = 120.0
    extra: dict = field(default_factory=dict)

    def validate(self):
        if not 0.0 < self.level < 1.0:
            raise ActisplineError("level must lie in (0, 1)")
        if self.grid_minutes <= 0:
            raise ActisplineError("grid-minutes must be positive")

    @property
    def model_path(self) -> Path:
        return Path(self.model) if self.model else Path(self.out_dir) / "model.json"

    def factor_names(self) -> list[str]:
        return [f.strip() for f in self.factors.split(",") if f.strip()]

    def schema(self) -> CsvSchema:
        return CsvSchema(self.col_subject, self.col_day, self.col_minute, self.col_vm,
                         tuple((f, self.extra.get(f"col_{f}", f)) for f in self.factor_names()),
                         self.time_format)

    def model_spec(self) -> ModelSpec:
        if self.terms:
            terms = tuple(TermSpec.parse(tok) for tok in self.terms.split(",") if tok.strip())
        else:
            names = self.factor_names()
            terms = ssanova_terms(names[0] if names else None, names[1:])
        knots = self.knots if self.knots == "auto" else int(self.knots)
        return ModelSpec(terms, self.transform, self.criterion, knots, int(self.seed), self.stage2)


def _coerce(name: str, raw: str):
    types = {f.name: f.type for f in fields(RunConfig)}
    t = str(types.get(name, "str"))
    if t == "bool":
        low = raw.strip().lower()
        if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
            raise ActisplineError(f"config {name}: not a boolean: {raw!r}")
        return low in ("1", "true", "yes", "on")
    try:
        if t == "int":
            return int(raw)
        if t == "float":
            return float(raw)
    except ValueError:
        raise ActisplineError(f"config {name}: bad value {raw!r}") from None
    return raw.strip()


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ActisplineError(f"{path}:{lineno}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    if getattr(args, "config", None):
        for key, raw in read_config(args.config).items():
            if key in known and key != "extra":
                setattr(cfg, key, _coerce(key, raw))
            else:
                cfg.extra[key] = raw
    for key, value in vars(args).items():
        if key in known and value is not None:
            setattr(cfg, key, value)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def _curve_csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def curve_rows(cur, prefix=()):
    keys = cur.labels if cur.labels is not None else [_fmt(g) for g in cur.grid]
    for k, v, s, lo, hi in zip(keys, cur.value, cur.se, cur.lower, cur.upper):
        yield [*prefix, k, _fmt(v), _fmt(s), _fmt(lo), _fmt(hi)]


def _safe(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_." else "_" for ch in name).strip("_")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_fit(cfg: RunConfig) -> int:
    if not cfg.input:
        raise ActisplineError("fit needs --input")
    table, report = read_csv(cfg.input, cfg.schema())
    if report.dropped:
        log.warning("dropped %d row(s) with missing vm", report.dropped)
    table = aggregate_daily(table, cfg.aggregate)
    model = fit(table, cfg.model_spec())
    save_model(model, cfg.model_path)
    rep = summarize_fit(model)
    print(f"n = {rep.n}  knots = {rep.knots}")
    print(f"R2 = {rep.r_squared:.4f}")
    print(f"sigma_eps = {rep.sigma_eps:.6g}")
    if rep.sigma_b is not None:
        print(f"sigma_b = {rep.sigma_b:.6g}")
    print(f"tr(A) = {rep.trace_A:.4f}  {rep.criterion} = {rep.criterion_value:.6g}")
    print(f"model written to {cfg.model_path}")
    return 0


def cmd_components(cfg: RunConfig) -> int:
    model = load_model(cfg.model_path)
    out = Path(cfg.out_dir) / "components"
    grid = default_grid(cfg.grid_minutes)
    for term in function_terms(model):
        name = _safe(term.name)
        if term.kind == "nominal_main":
            cur = eval_component(model, term, level=cfg.level)
            text = _curve_csv(curve_rows(cur), ["level", "value", "se", "lower", "upper"])
        elif term.factor is not None:
            fdef = next(f for f in model.factor_defs if f.name == term.factor)
            rows = []
            for lv in fdef.levels:
                cur = eval_component(model, term, grid, cfg.level, at={term.factor: lv})
                rows += list(curve_rows(cur, prefix=(lv,)))
            text = _curve_csv(rows, ["level", "grid_minute", "value", "se", "lower", "upper"])
        else:
            cur = eval_component(model, term, grid, cfg.level)
            text = _curve_csv(curve_rows(cur), ["grid_minute", "value", "se", "lower", "upper"])
        atomic_write_text(out / f"{name}.csv", text)
    if cfg.plot:
        from .plotting import plot_curves

        curves = _group_curves(model, grid, cfg.level)
        plot_curves(curves, out / "curves.svg", title="estimated daily profile by group",
                    ylabel=f"{model.spec.response_transform}(VM)")
    print(f"components written to {out}")
    return 0


def _group_curves(model, grid, level) -> dict:
    try:
        factor = group_factor(model)
    except ValueError:
        return {"all": predict_curve(model, grid, level=level)}
    fdef = next(f for f in model.factor_defs if f.name == factor)
    return {lv: predict_curve(model, grid, {factor: lv}, level) for lv in fdef.levels}


def cmd_predict(cfg: RunConfig) -> int:
    model = load_model(cfg.model_path)
    grid = default_grid(cfg.grid_minutes)
    curves = _group_curves(model, grid, cfg.level)
    rows = [r for lv, cur in curves.items() for r in curve_rows(cur, prefix=(lv,))]
    out = Path(cfg.out_dir)
    atomic_write_text(out / "predict.csv", _curve_csv(rows, ["level", "grid_minute", "value", "se", "lower", "upper"]))
    if cfg.plot:
        from .plotting import plot_curves

        plot_curves(curves, out / "predict.svg", ylabel=f"{model.spec.response_transform}(VM)")
    print(f"predictions written to {out / 'predict.csv'}")
    return 0


def cmd_diff(cfg: RunConfig) -> int:
    if cfg.g is None or cfg.g_star is None:
        raise ActisplineError("diff needs --g and --g-star")
    model = load_model(cfg.model_path)
    factor = cfg.factor or group_factor(model)
    fdef = next((f for f in model.factor_defs if f.name == factor), None)
    if fdef is None:
        raise ActisplineError(f"unknown factor {factor!r}")
    for lv in (cfg.g, cfg.g_star):
        if lv not in fdef.levels:
            raise ActisplineError(f"unknown level {lv!r} for factor {factor!r}")
    cur = difference_curve(model, cfg.g, cfg.g_star, default_grid(cfg.grid_minutes), cfg.level, factor)
    regions = significant_regions(cur)
    out = Path(cfg.out_dir)
    stem = f"diff_{_safe(cfg.g)}_vs_{_safe(cfg.g_star)}"
    atomic_write_text(out / f"{stem}.csv", _curve_csv(curve_rows(cur), ["grid_minute", "value", "se", "lower", "upper"]))
    atomic_write_text(out / f"regions_{_safe(cfg.g)}_vs_{_safe(cfg.g_star)}.json",
                      json.dumps(regions.to_json(), indent=1))
    if cfg.plot:
        from .plotting import plot_difference

        plot_difference(cur, regions, out / f"{stem}.svg")
    for a, b in regions.intervals:
        print(f"significant: {a:g} - {b:g} min")
    if not regions.intervals:
        print("no significant region")
    return 0


def cmd_summary(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    did = False
    if cfg.input:
        table, _ = read_csv(cfg.input, cfg.schema())
        table = aggregate_daily(table, cfg.aggregate)
        st = summarize(table, cfg.factor or cfg.factor_names()[0])
        rows = st.to_rows()
        header = list(rows[0].keys())
        atomic_write_text(out / "data_summary.csv", _curve_csv([[r[h] for h in header] for r in rows], header))
        atomic_write_text(out / "data_summary.json", json.dumps(st.to_dict(), indent=1))
        print(f"data summary written to {out / 'data_summary.csv'}")
        did = True
    if cfg.model or cfg.model_path.exists() or not did:
        rep = summarize_fit(load_model(cfg.model_path))
        atomic_write_text(out / "fit_summary.json", json.dumps(rep.to_dict(), indent=1))
        print(json.dumps(rep.to_dict(), indent=1))
    return 0


def _floats(text: str | None):
    return None if text is None else [float(x) for x in text.split(",")]


def cmd_simulate(cfg: RunConfig) -> int:
    groups = [g.strip() for g in cfg.groups.split(",") if g.strip()]
    sc = daily_scenario(groups, baseline=cfg.baseline, peak=cfg.peak, shifts=_floats(cfg.shifts),
                        weights=_floats(cfg.weights), window=(cfg.window_start, cfg.window_end), ramp=cfg.ramp,
                        sigma_b=cfg.sigma_b, sigma_eps=cfg.sigma_eps, subjects_per_group=cfg.subjects_per_group,
                        minutes_per_subject=cfg.minutes_per_subject, seed=int(cfg.seed))
    table, truth = synthesize(sc)
    out = Path(cfg.out_dir)
    buf = out / ".demo.csv.tmp"
    out.mkdir(parents=True, exist_ok=True)
    write_csv(table, buf)
    buf.replace(out / "demo.csv")
    minutes = np.unique(table.time)
    truth_doc = {
        "note": "responses are on the analysis scale; fit with transform = identity",
        "groups": groups,
        "minutes": minutes.tolist(),
        "eta0": sc.eta0,
        "eta1": np.asarray(sc.eta1(minutes)).tolist(),
        "eta2": sc.eta2,
        "eta": {g: np.asarray(sc.eta(minutes, g)).tolist() for g in groups},
        "delta": {f"{a}|{b}": np.asarray(sc.delta(minutes, a, b)).tolist()
                  for a, b in itertools.permutations(groups, 2)},
        "b": truth.b,
        "sigma_b": sc.sigma_b,
        "sigma_eps": sc.sigma_eps,
        "seed": sc.seed,
    }
    atomic_write_text(out / "truth.json", json.dumps(truth_doc, indent=1))
    print(f"{table.n} rows written to {out / 'demo.csv'}")
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "components": cmd_components,
    "diff": cmd_diff,
    "predict": cmd_predict,
    "summary": cmd_summary,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--input", help="input CSV")
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--model", help="model file (default OUT_DIR/model.json)")
    common.add_argument("--grid-minutes", dest="grid_minutes", type=float)
    common.add_argument("--level", type=float)
    common.add_argument("--transform", choices=["identity", "log1p"])
    common.add_argument("--criterion", choices=["GCV", "GML"])
    common.add_argument("--knots")
    common.add_argument("--seed", type=int)
    common.add_argument("--plot", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--factor")
    common.add_argument("--factors")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="actispline", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "diff":
            sp.add_argument("--g", required=False)
            sp.add_argument("--g-star", dest="g_star", required=False)
        if name == "simulate":
            sp.add_argument("--groups", help="comma-separated group labels")
            sp.add_argument("--subjects-per-group", dest="subjects_per_group", type=int)
            sp.add_argument("--minutes-per-subject", dest="minutes_per_subject", type=int)
            sp.add_argument("--sigma-b", dest="sigma_b", type=float)
            sp.add_argument("--sigma-eps", dest="sigma_eps", type=float)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ActisplineError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
