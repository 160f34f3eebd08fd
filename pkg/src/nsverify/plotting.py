"""PNG figures next to the CSV outputs.

matplotlib is imported on first use with the non-interactive Agg backend,
so the rest of the package runs without it.
"""

from __future__ import annotations

import numpy as np

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "savefig.dpi": 120,
}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def shrinkage_figure(report, path) -> None:
    """Histogram of S on top, empirical vs expected CDF below.

    Observed in black, the uniform-sampling expectation in red; vertical
    lines mark the two means.
    """
    plt = _pyplot()
    centres, counts = report.histogram()
    width = centres[1] - centres[0] if len(centres) > 1 else 1.0
    s, emp, theo = report.cdf_table()
    dn = report.dim * report.n_live
    # expected bin counts from the CDF differences
    edges = np.append(centres - width / 2, centres[-1] + width / 2)
    from .shrinkage import expected_cdf_s

    expect = len(s) * np.diff(expected_cdf_s(edges, report.dim, report.n_live))

    with plt.rc_context(RC):
        fig, (top, bottom) = plt.subplots(2, 1, figsize=(5, 6), sharex=True)
        top.bar(centres, counts, width=width, color="none", edgecolor="k", label="observed")
        top.step(centres, expect, where="mid", color="r", label="expected")
        top.axvline(float(np.mean(s)), color="k", ls="--")
        top.axvline(1.0 / (dn + 1), color="r", ls="--")
        top.set_ylabel("count")
        top.legend(loc="upper right")
        top.set_title(f"{report.sampler}, d={report.dim}, p={report.ks.p_value:.4f}")

        bottom.plot(s, emp, color="k", label="empirical")
        bottom.plot(s, theo, color="r", label="1 - (1-S)^(dN)")
        bottom.set_xlabel("S = 1 - t^(1/d)")
        bottom.set_ylabel("CDF")
        bottom.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def benchmark_figure(summary, log_zs, log_z_errs, n_evals, path) -> None:
    """Per-run log Z with reported errors, the mean with its two error
    measures, and the evaluation counts beneath."""
    plt = _pyplot()
    runs = np.arange(len(log_zs))
    with plt.rc_context(RC):
        fig, (top, bottom) = plt.subplots(2, 1, figsize=(5, 5), sharex=True,
                                          gridspec_kw={"height_ratios": [2, 1]})
        top.errorbar(runs, log_zs, yerr=log_z_errs, fmt="o", color="0.6", ms=3, label="runs")
        x = len(runs) + 0.5
        top.errorbar([x], [summary.mean_log_z], yerr=[summary.actual_scatter], fmt="none",
                     color="0.6", capsize=6, lw=3, label="A")
        top.errorbar([x], [summary.mean_log_z], yerr=[summary.mean_reported_err], fmt="s",
                     color="k", capsize=3, label="mean, C")
        if summary.true_log_z is not None:
            top.axhline(summary.true_log_z, color="r", ls="--", label="true")
        top.set_ylabel("log Z")
        top.set_title(f"{summary.problem}, {summary.sampler}, N={summary.n_live}")
        top.legend(loc="best")

        bottom.bar(runs, n_evals, color="0.6")
        bottom.axhline(summary.mean_evaluations, color="k", ls="--")
        bottom.set_xlabel("run")
        bottom.set_ylabel("evaluations")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
