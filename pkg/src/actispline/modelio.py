"""JSON persistence of fitted models.

Floats are written with ``repr`` precision, so a saved model reproduces every
inference result of the in-memory one.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import DataFormatError, FactorDef, ModelSpec
from .kernel import CovariatePoints
from .solver import FittedModel, SmoothingParams

FORMAT = "actispline-model/1"


def model_to_dict(model: FittedModel) -> dict:
    knots = None
    if model.knots is not None:
        knots = {"u": model.knots.u.tolist(), "codes": model.knots.codes.tolist()}
    return {
        "format": FORMAT,
        "spec": model.spec.to_dict(),
        "factor_defs": [{"name": f.name, "levels": list(f.levels)} for f in model.factor_defs],
        "knots": knots,
        "d": model.d.tolist(),
        "c": model.c.tolist(),
        "b_hat": model.b_hat.tolist(),
        "subjects": list(model.subjects),
        "params": model.params.to_dict(),
        "sigma2_eps": model.sigma2_eps,
        "sigma2_b": model.sigma2_b,
        "trace_A": model.trace_A,
        "criterion_value": model.criterion_value,
        "r_squared": model.r_squared,
        "n": model.n,
        "null_names": list(model.null_names),
        "y_scale": model.y_scale,
        "jitter": model.jitter,
        "M": model.M.tolist(),
    }


def model_from_dict(d: dict) -> FittedModel:
    if d.get("format") != FORMAT:
        raise DataFormatError("not an actispline model file")
    try:
        fdefs = tuple(FactorDef(f["name"], tuple(f["levels"])) for f in d["factor_defs"])
        knots = None
        if d["knots"] is not None:
            u = np.asarray(d["knots"]["u"], dtype=float)
            codes = np.asarray(d["knots"]["codes"], dtype=np.int64).reshape(u.shape[0], len(fdefs))
            knots = CovariatePoints(u, codes, np.full(u.shape[0], -1, dtype=np.int64), fdefs)
        return FittedModel(
            spec=ModelSpec.from_dict(d["spec"]),
            factor_defs=fdefs,
            knots=knots,
            d=np.asarray(d["d"], dtype=float),
            c=np.asarray(d["c"], dtype=float),
            b_hat=np.asarray(d["b_hat"], dtype=float),
            params=SmoothingParams.from_dict(d["params"]),
            sigma2_eps=float(d["sigma2_eps"]),
            sigma2_b=None if d["sigma2_b"] is None else float(d["sigma2_b"]),
            M=np.asarray(d["M"], dtype=float),
            trace_A=float(d["trace_A"]),
            criterion_value=float(d["criterion_value"]),
            r_squared=float(d["r_squared"]),
            n=int(d["n"]),
            subjects=tuple(d["subjects"]),
            null_names=tuple(d["null_names"]),
            y_scale=float(d["y_scale"]),
            jitter=float(d["jitter"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"corrupt model file: {exc}") from None


def atomic_write_text(path, text: str) -> None:
    """Write to a temporary sibling, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: FittedModel, path) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(model)))


def load_model(path) -> FittedModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read model file {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"corrupt model file {path}: {exc}") from None
    return model_from_dict(d)
