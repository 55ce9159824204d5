"""Delimited output and figure rendering for experiment reports.

``metrics.csv`` is long-format: one row per (setup, transmit power, metric)
with mean, standard error and sample count. Figures mirror the three
standard views (angle MSE, cascaded-parameter MSE, spectral efficiency)
as SVG line plots versus transmit power, one series per setup, with an
optional user-supplied baseline series overlaid.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import ConfigError

CSV_COLUMNS = ("setup", "p_t_dbm", "metric", "mean", "stderr", "n")

FIGURES = {
    "fig_mse_angles.svg": (("mse_theta_mr", "mse_phi_rb"), "MSE (rad^2)", True),
    "fig_mse_cascaded.svg": (("mse_delta", "mse_rho_prod"), "MSE", True),
    "fig_se.svg": (("se_est", "se_perfect"), "SE (bits/s/Hz)", False),
}


def preflight_output_dir(path: str) -> None:
    """Create the output directory and prove it is writable."""
    try:
        os.makedirs(path, exist_ok=True)
        probe = os.path.join(path, ".write_probe")
        with open(probe, "w") as fh:
            fh.write("ok")
        os.remove(probe)
    except OSError as exc:
        raise OSError(f"output directory {path!r} is not writable: {exc}") from exc


def _fmt(value) -> str:
    return repr(float(value))


def metrics_rows(report) -> list[tuple]:
    """Flatten an aggregate report into CSV rows (deterministic order)."""
    from .harness import METRIC_FIELDS

    rows = []
    for setup in report.config.setups:
        rows.append((setup, "", "training_overhead", float(report.overheads[setup]), 0.0, 0))
        for p_t in report.config.p_t_sweep_dbm:
            group = report.group(setup, p_t)
            for key in METRIC_FIELDS:
                rows.append((setup, p_t, key, group.mean[key], group.stderr(key), group.count))
            rows.append((setup, p_t, "failed_trials", float(group.n_failed), 0.0, group.count))
    return rows


def write_metrics_csv(report, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for setup, p_t, metric, mean, stderr, n in metrics_rows(report):
            writer.writerow(
                [setup, _fmt(p_t) if p_t != "" else "", metric, _fmt(mean), _fmt(stderr), n]
            )


def read_metrics_csv(path: str) -> list[dict]:
    """Parse a metrics file back into records (floats round-trip exactly)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    "setup": row["setup"],
                    "p_t_dbm": float(row["p_t_dbm"]) if row["p_t_dbm"] else None,
                    "metric": row["metric"],
                    "mean": float(row["mean"]),
                    "stderr": float(row["stderr"]),
                    "n": int(row["n"]),
                }
            )
    return out


def _series(records: list[dict], setup_label: str, metric: str) -> tuple[list, list]:
    pts = sorted(
        (r["p_t_dbm"], r["mean"])
        for r in records
        if r["metric"] == metric and str(r["setup"]) == setup_label and r["p_t_dbm"] is not None
    )
    return [p for p, _ in pts], [m for _, m in pts]


def render_figures(report, out_dir: str, baseline: list[dict] | None = None) -> list[str]:
    """Render the standard metric-versus-power figures to SVG files."""
    records = [
        dict(setup=str(s), p_t_dbm=(p if p != "" else None), metric=m, mean=mean, stderr=se, n=n)
        for (s, p, m, mean, se, n) in metrics_rows(report)
    ]
    written = []
    for fname, (metrics, ylabel, log_y) in FIGURES.items():
        fig, ax = plt.subplots(figsize=(5.5, 4.0))
        for metric in metrics:
            style = "--" if metric is metrics[1] else "-"
            for setup in report.config.setups:
                x, y = _series(records, str(setup), metric)
                if x:
                    ax.plot(x, y, style, marker="o", ms=3, label=f"setup {setup} {metric}")
            if baseline:
                x, y = _series(baseline, "baseline", metric)
                if x:
                    ax.plot(x, y, ":", marker="s", ms=3, color="k", label=f"baseline {metric}")
        if log_y:
            ax.set_yscale("log")
        ax.set_xlabel("transmit power (dBm)")
        ax.set_ylabel(ylabel)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=7)
        fig.tight_layout()
        path = os.path.join(out_dir, fname)
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(path)
    return written


def emit_outputs(report, baseline_csv: str | None = None) -> list[str]:
    """Write metrics.csv, config.json and the SVG figures.

    On any I/O failure the partially written files are removed before the
    error propagates.
    """
    from .harness import config_to_json

    out_dir = report.config.output_dir
    preflight_output_dir(out_dir)
    baseline = read_metrics_csv(baseline_csv) if baseline_csv else None
    written: list[str] = []
    try:
        csv_path = os.path.join(out_dir, "metrics.csv")
        write_metrics_csv(report, csv_path)
        written.append(csv_path)
        cfg_path = os.path.join(out_dir, "config.json")
        with open(cfg_path, "w") as fh:
            fh.write(config_to_json(report.config))
        written.append(cfg_path)
        written.extend(render_figures(report, out_dir, baseline))
    except OSError:
        for path in written:
            try:
                os.remove(path)
            except OSError:
                pass
        raise
    return written
