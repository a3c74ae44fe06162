"""Report figures, rendered off-screen to image files."""
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
    "lines.linewidth": 1.2,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}

METHOD_COLORS = {
    "reference": "k",
    "sws": "#1b9e77",
    "llr": "#d95f02",
    "field": "#7570b3",
    "hybrid": "#e7298a",
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_flow(curves, path, reference=None, title=None):
    """Flow curves per frame; ``curves`` maps a label to a length-N_T array."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        if reference is not None:
            ax.plot(np.asarray(reference), color="k", lw=1.8, label="reference")
        for label, q in curves.items():
            ax.plot(np.asarray(q), color=METHOD_COLORS.get(label), label=label)
        ax.set_xlabel("frame")
        ax.set_ylabel("flow")
        ax.axhline(0.0, color="0.7", lw=0.6, zorder=0)
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_frame_errors(errors, path, title=None):
    """Per-frame absolute flow error, one line per label."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for label, e in errors.items():
            ax.plot(np.asarray(e), marker=".", color=METHOD_COLORS.get(label), label=label)
        ax.set_xlabel("frame")
        ax.set_ylabel("|Q - Q*|")
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_error_vs_accel(table, path, metric="e2"):
    """``table`` maps method to ``{R: error}``; log-2 acceleration axis."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        for method, row in table.items():
            rs = sorted(row)
            ax.plot(rs, [row[r] for r in rs], marker="o", color=METHOD_COLORS.get(method),
                    label=method)
        ax.set_xscale("log", base=2)
        ax.set_xlabel("acceleration R")
        ax.set_ylabel(f"{metric} flow error (%)")
        ax.legend(frameon=False)
        return _save(fig, path)


def plot_montage(images, path, frame=0, roi=None):
    """Magnitude and phase-difference panels for a few reconstructions.

    ``images`` maps a label to ``(u0, u1)`` series; row 1 shows the combined
    magnitude, row 2 the phase difference at ``frame``.
    """
    labels = list(images)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, len(labels), figsize=(2.2 * len(labels), 4.4), squeeze=False)
        vmax = max(np.abs(u0[frame]).max() for u0, _ in images.values())
        for j, label in enumerate(labels):
            u0, u1 = images[label]
            mag = (np.abs(u0[frame]) + np.abs(u1[frame])) / 2
            dphi = np.angle(u1[frame] * np.conj(u0[frame]))
            axes[0, j].imshow(mag.T, cmap="gray", vmin=0, vmax=vmax, origin="lower")
            axes[1, j].imshow(dphi.T, cmap="twilight", vmin=-np.pi, vmax=np.pi, origin="lower")
            if roi is not None:
                axes[0, j].contour(np.asarray(roi, float).T, levels=[0.5], colors="r",
                                   linewidths=0.5)
            axes[0, j].set_title(label)
            for ax in axes[:, j]:
                ax.set_xticks([])
                ax.set_yticks([])
        axes[0, 0].set_ylabel("magnitude")
        axes[1, 0].set_ylabel("phase difference")
        return _save(fig, path)
