"""Figures written as SVG with matplotlib.

Output bytes are reproducible: the SVG id salt is fixed, the date stamp is
dropped and text is emitted as text rather than glyph paths. Bars carry
``gid="bar-<method>-<param>"`` so their geometry can be located in the file.
"""

import io

import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from ._io import atomic_write

STYLE = {
    "svg.hashsalt": "oufit",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 10,
    "axes.labelsize": 10,
    "legend.fontsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "path.simplify": False,
}

PARAM_LABELS = {"mu": "μ", "theta": "θ", "sigma": "σ"}
METHOD_COLORS = {"OLS": "#4C72B0", "Kalman": "#DD8452", "NN": "#55A868"}


def _save(fig, path):
    buf = io.StringIO()
    FigureCanvasSVG(fig)
    fig.savefig(buf, format="svg", metadata={"Date": None})
    with atomic_write(path) as fh:
        fh.write(buf.getvalue())


def render_error_plot(result, path):
    """Grouped bars of mean absolute error: one group per parameter, one bar per method."""
    methods = list(result.methods)
    if not methods:
        raise ValueError("result has no methods to plot")
    params = ("mu", "theta", "sigma")
    width = 0.8 / len(methods)
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(6.0, 4.0))
        ax = fig.add_subplot()
        for j, m in enumerate(methods):
            xs = [i - 0.4 + width * (j + 0.5) for i in range(len(params))]
            bars = ax.bar(xs, list(result.errors[m]), width=width, label=m,
                          color=METHOD_COLORS.get(m, f"C{j}"))
            for bar, p in zip(bars, params):
                bar.set_gid(f"bar-{m}-{p}")
        ax.set_xticks(range(len(params)), [PARAM_LABELS[p] for p in params])
        ax.set_xlabel("parameter")
        ax.set_ylabel("mean absolute error")
        ax.set_title("Average error of each method")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def render_paths_plot(paths, path, max_paths=20):
    """Line plot of up to ``max_paths`` trajectories against time."""
    times = paths.grid.times()
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(6.0, 4.0))
        ax = fig.add_subplot()
        for row in paths.values[:max_paths]:
            ax.plot(times, row, linewidth=0.7, alpha=0.8)
        if paths.params is not None:
            ax.axhline(paths.params.mu, color="black", linestyle="--", linewidth=0.8, label="μ")
            ax.legend(frameon=False)
        ax.set_xlabel("t")
        ax.set_ylabel("X(t)")
        ax.set_title("Simulated OU trajectories")
        fig.tight_layout()
        _save(fig, path)
