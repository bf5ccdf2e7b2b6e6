"""Diagnostic figures written next to a run's CSV trace."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _column(trace, key):
    xs = [r["iteration"] for r in trace if r.get(key) is not None]
    ys = [r[key] for r in trace if r.get(key) is not None]
    return np.asarray(xs), np.asarray(ys, dtype=float)


def plot_trace(trace, path):
    """PSNR, rho and drift norms against the iteration counter."""
    panels = [k for k in ("psnr", "rho") if _column(trace, k)[0].size]
    panels.append("drift")
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(len(panels), 1, figsize=(5, 2.2 * len(panels)), sharex=True, squeeze=False)
        for ax, key in zip(axes[:, 0], panels):
            if key == "psnr":
                ax.plot(*_column(trace, "psnr"), color="k", lw=1)
                ax.set_ylabel("PSNR (dB)")
            elif key == "rho":
                ax.plot(*_column(trace, "rho"), color="C0", lw=1, label=r"$\rho_k$")
                x, y = _column(trace, "rho_bar")
                if x.size:
                    ax.plot(x, y, color="C3", lw=1, ls="--", label=r"$\bar\rho_k$")
                ax.set_yscale("log")
                ax.set_ylabel(r"$\rho$")
                ax.legend(frameon=False)
            else:
                ax.semilogy(*_column(trace, "drift_likelihood"), lw=1, label="likelihood")
                ax.semilogy(*_column(trace, "drift_prior"), lw=1, label="prior")
                ax.set_ylabel("drift norm")
                ax.legend(frameon=False)
        axes[-1, 0].set_xlabel("iteration")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def _show(ax, img, title, vmin=0.0, vmax=1.0):
    img = np.asarray(img)
    if img.shape[0] == 1:
        ax.imshow(img[0], cmap="gray", vmin=vmin, vmax=vmax, interpolation="nearest")
    else:
        ax.imshow(np.clip(np.transpose(img, (1, 2, 0)), 0, 1), interpolation="nearest")
    ax.set_title(title)
    ax.set_axis_off()


def plot_panel(path, truth, measurement, mean, std):
    items = []
    if truth is not None:
        items.append((truth, "ground truth", None))
    items.append((measurement, "measurement", None))
    items.append((mean, "posterior mean", None))
    items.append((std, "pixel std", float(np.max(std)) or 1.0))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(items), figsize=(2.4 * len(items), 2.6))
        for ax, (img, title, vmax) in zip(np.atleast_1d(axes), items):
            if vmax is None:
                _show(ax, img, title)
            else:
                _show(ax, img, title, vmax=vmax)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def render_run_figures(directory, trace, truth, measurement, mean, std):
    """Write ``trace.png`` and ``images.png``; returns the written paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    if trace:
        plot_trace(trace, directory / "trace.png")
        written.append(str(directory / "trace.png"))
    plot_panel(directory / "images.png", truth, measurement, mean, std)
    written.append(str(directory / "images.png"))
    return written
