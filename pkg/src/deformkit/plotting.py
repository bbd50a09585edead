"""Report figures (matplotlib, Agg backend, byte-stable PNG output)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "savefig.dpi": 120,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "lines.linewidth": 1.2,
}
# no timestamps or version strings in the files
PNG_METADATA = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    fig.savefig(tmp, format="png", metadata=PNG_METADATA)
    plt.close(fig)
    tmp.replace(path)
    return path


def plot_bending_lines(
    lines: Mapping[str, object],
    path: str | Path,
    truth: Sequence[tuple[str, float, float]] = (),
    supports: Sequence[float] = (),
) -> Path:
    """Bending lines in mm against chainage.

    ``lines`` maps labels to objects with ``chainage``/``values`` (metres);
    ``truth`` holds (label, chainage, mm) markers.
    """
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7.0, 3.2))
        for label, line in lines.items():
            ax.plot(line.chainage, np.asarray(line.values) * 1000.0, label=label)
        for s in supports:
            ax.axvline(s, color="0.4", lw=0.8, ls=":")
        for label, c, mm in truth:
            ax.plot([c], [mm], "kv", ms=5)
            ax.annotate(label, (c, mm), textcoords="offset points", xytext=(4, -10), fontsize=8)
        ax.axhline(0.0, color="0.2", lw=0.6)
        ax.set_xlabel("chainage [m]")
        ax.set_ylabel("deformation [mm]")
        ax.legend(loc="lower left")
        fig.tight_layout()
        return _save(fig, path)


def plot_cross_profile(profile, path: str | Path, edges: tuple[float, float] | None = None) -> Path:
    """Cross profile from north (left) to south (right)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 3.0))
        ax.plot(profile.chainage, np.asarray(profile.values) * 1000.0, color="C3")
        if edges is not None:
            ax.set_title(f"north {edges[0] * 1000:.1f} mm, south {edges[1] * 1000:.1f} mm")
        ax.axhline(0.0, color="0.2", lw=0.6)
        ax.set_xlabel("distance from north end [m]")
        ax.set_ylabel("deformation [mm]")
        fig.tight_layout()
        return _save(fig, path)


def plot_deformation_map(rgb: np.ndarray, bounds: Sequence[float], path: str | Path) -> Path:
    """Colour-coded deformation raster (north up) with metric axes."""
    e0, n0, e1, n1 = bounds
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(7.0, 2.6))
        ax.imshow(rgb, extent=(0.0, e1 - e0, 0.0, n1 - n0), interpolation="nearest")
        ax.set_xlabel(f"E - {e0:.1f} [m]")
        ax.set_ylabel(f"N - {n0:.1f} [m]")
        fig.tight_layout()
        return _save(fig, path)


def plot_residuals(table, path: str | Path) -> Path:
    """Checkpoint residual components per point and epoch."""
    labels = [f"{p}/{e}" for p, e in zip(table.ids, table.epochs)]
    x = np.arange(len(labels))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(7.0, 3.0))
        for k, name in enumerate(("E", "N", "H")):
            ax.bar(x + (k - 1) * 0.27, table.values[:, k], width=0.27, label=name)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=90, fontsize=7)
        ax.set_ylabel("error [mm]")
        ax.legend(ncol=3)
        fig.tight_layout()
        return _save(fig, path)
