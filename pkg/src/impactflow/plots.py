"""SVG line plots of scenario outputs (matplotlib, written reproducibly)."""
from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {"svg.hashsalt": "impactflow", "svg.fonttype": "none"}


def _save(fig, path: Path, header_lines) -> Path:
    buf = io.StringIO()
    with matplotlib.rc_context(_RC):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    decl, rest = buf.getvalue().split("\n", 1)
    comments = "".join(f"<!-- {line} -->\n" for line in header_lines)
    path.write_text(f"{decl}\n{comments}{rest}")
    return path


def scenario_plots(result, out: Path, header_lines=()) -> list[Path]:
    files = []
    if result.strategies:
        fig_z, ax_z = plt.subplots(figsize=(5, 3.5))
        fig_p, ax_p = plt.subplots(figsize=(5, 3.5))
        for (a1, phi0), strat in result.strategies.items():
            label = f"alpha1={a1:g}, phi0={phi0:g}"
            ax_z.step(strat.breakpoints[1:], strat.rates, where="pre", label=label)
            ax_p.plot(strat.breakpoints, result.trajectories[(a1, phi0)], label=label)
        ax_z.set_xlabel("time")
        ax_z.set_ylabel("selling rate")
        ax_p.set_xlabel("time")
        ax_p.set_ylabel("holdings")
        ax_z.legend()
        ax_p.legend()
        files.append(_save(fig_z, out / "zeta.svg", header_lines))
        files.append(_save(fig_p, out / "phi.svg", header_lines))
    if result.tc and len({row[0] for row in result.tc}) > 1:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for phi0 in sorted({row[1] for row in result.tc}):
            rows = sorted(r for r in result.tc if r[1] == phi0)
            ax.plot([r[0] for r in rows], [r[5] for r in rows], marker="o", label=f"phi={phi0:g}")
        ax.set_xlabel("alpha1")
        ax.set_ylabel("total impact cost")
        ax.legend()
        files.append(_save(fig, out / "tc.svg", header_lines))
    return files
