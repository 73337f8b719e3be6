"""Static SVG figures of daily curves with confidence bands.

Figures are 960 x 480 (SVG user units) with the time axis in clock hours.
Each curve line carries the id ``curve-<label>`` and its band ``band-<label>``
so the output can be checked structurally.
"""
from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
from matplotlib.figure import Figure  # noqa: E402

from .inference import CurveEstimate, RegionSet  # noqa: E402
from .modelio import atomic_write_text  # noqa: E402

WIDTH, HEIGHT = 960, 480
_RC = {"svg.hashsalt": "actispline", "svg.fonttype": "none", "font.size": 11}


def _figure():
    fig = Figure(figsize=(WIDTH / 72.0, HEIGHT / 72.0), dpi=72)
    ax = fig.add_subplot(1, 1, 1)
    ax.set_xlim(0, 24)
    ax.set_xticks(range(0, 25, 3))
    ax.set_xlabel("time of day (hours)")
    return fig, ax


def _save(fig, path) -> None:
    import io

    buf = io.StringIO()
    with matplotlib.rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
    atomic_write_text(Path(path), buf.getvalue())


def plot_curves(curves: Mapping[str, CurveEstimate], path, title: str = "", ylabel: str = "estimate") -> None:
    """Overlay one curve per label, each with a shaded band."""
    with matplotlib.rc_context(_RC):
        fig, ax = _figure()
        for k, (label, cur) in enumerate(curves.items()):
            color = f"C{k % 10}"
            hours = cur.grid / 60.0
            band = ax.fill_between(hours, cur.lower, cur.upper, color=color, alpha=0.2, linewidth=0)
            band.set_gid(f"band-{label}")
            (line,) = ax.plot(hours, cur.value, color=color, lw=1.8, label=str(label))
            line.set_gid(f"curve-{label}")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(loc="upper left", frameon=False)
        fig.tight_layout()
    _save(fig, path)


def plot_difference(curve: CurveEstimate, regions: RegionSet, path, title: str = "") -> None:
    """Difference curve with its band, the zero line and shaded significant regions."""
    with matplotlib.rc_context(_RC):
        fig, ax = _figure()
        for a, b in regions.intervals:
            span = ax.axvspan(a / 60.0, b / 60.0, color="0.85", zorder=0)
            span.set_gid("region")
        zero = ax.axhline(0.0, color="k", lw=0.8, ls="--")
        zero.set_gid("zero-line")
        hours = curve.grid / 60.0
        band = ax.fill_between(hours, curve.lower, curve.upper, color="C0", alpha=0.25, linewidth=0)
        band.set_gid("band-difference")
        (line,) = ax.plot(hours, curve.value, color="C0", lw=1.8)
        line.set_gid("curve-difference")
        ax.set_ylabel("difference")
        ax.set_title(title or curve.target)
        fig.tight_layout()
    _save(fig, path)
