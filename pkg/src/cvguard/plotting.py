"""Static SVG rendering of a voltammogram and, optionally, its GPR fit and probes."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import features, gpr  # noqa: E402

PROBE_GID = "probe-features"


def plot_gram(gram, out, with_fit=False, title=None) -> Path:
    if len(gram) == 0:
        raise ValueError("no samples")
    out = Path(out)
    with plt.rc_context({"svg.hashsalt": "cvguard", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.scatter(gram.v, gram.i, s=2, color="0.55", label="measurements", rasterized=False)
        if with_fit:
            model = features.fit_gram(gram)
            grid = features.default_grid(gram.program)
            vq = np.linspace(gram.program.v_min, gram.program.v_max, 200)
            ax.plot(vq, gpr.predict_mean(model, vq), color="C0", lw=1.5, label="GPR mean")
            fv = gpr.predict_mean(model, grid.probe_v)
            (probes,) = ax.plot(grid.probe_v, fv, linestyle="none", marker="D", ms=5,
                                color="C3", label="features")
            probes.set_gid(PROBE_GID)
        ax.set_xlabel("V (volts)")
        ax.set_ylabel("I (amperes)")
        if title:
            ax.set_title(title)
        ax.legend(loc="best", fontsize="small")
        fig.tight_layout()
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out
