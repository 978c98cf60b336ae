"""Deterministic result emission: CSV tables, a JSON bundle, a run manifest,
and plot files rendered next to the delimited output.

Byte stability contract: identical config + seed must reproduce identical
CSV/JSON bytes, so floats are written with shortest round-trip repr, dict
keys are sorted, and no timestamps enter the outputs.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import platform

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import scipy  # noqa: E402

from . import __version__  # noqa: E402


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str, header, rows) -> str:
    """RFC-4180 CSV (CRLF, minimal quoting, '.' decimal separator)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL)
        w.writerow(list(header))
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def jsonable(obj):
    """Recursively convert numpy scalars/arrays and complex values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def write_json(path: str, payload) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(jsonable(payload), fh, indent=2, sort_keys=True,
                  allow_nan=False)
        fh.write("\n")
    return path


def config_hash(doc: dict) -> str:
    canon = json.dumps(jsonable(doc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def write_manifest(out_dir: str, doc: dict, seed: int,
                   tolerances: dict | None = None) -> str:
    manifest = {
        "schema_version": doc.get("schema_version"),
        "scenario": doc.get("name", "scenario"),
        "config_sha256": config_hash(doc),
        "seed": seed,
        "tolerances": tolerances or doc.get("tolerances", {}),
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
    }
    return write_json(os.path.join(out_dir, "run-manifest.json"), manifest)


# ---------------------------------------------------------------------------
# Figures: one plot per recognized table, rendered beside the CSVs.


def _col(table, name):
    idx = table["header"].index(name)
    return np.array([row[idx] for row in table["rows"]], dtype=float)


def _fig_loglog(table, xcol, ycol, title, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    x, y = _col(table, xcol), _col(table, ycol)
    ax.loglog(x, y, "o-")
    ax.set_xlabel(xcol)
    ax.set_ylabel(ycol)
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def _fig_eig(table, threshold_rows, path):
    fig, ax = plt.subplots(figsize=(5, 4))
    re = _col(table, "re_eig")
    im = _col(table, "im_eig")
    off = np.array([row[table["header"].index("offender")] == "true"
                    or row[table["header"].index("offender")] is True
                    for row in table["rows"]])
    ax.scatter(re[~off], im[~off], s=12, label="eigenvalues")
    if np.any(off):
        ax.scatter(re[off], im[off], s=20, marker="x", color="red",
                   label="offenders")
    for h, thr in threshold_rows:
        ax.axhline(thr, ls="--", lw=0.8, alpha=0.6)
    ax.set_xlabel("Re")
    ax.set_ylabel("Im")
    ax.set_title("interior-localized spectrum vs h*beta lines")
    ax.legend(loc="best", fontsize=8)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def _fig_compare(table, path):
    fig, ax = plt.subplots(figsize=(6.5, 4))
    names = [row[table["header"].index("symbol")] for row in table["rows"]]
    flow = _col(table, "flow")
    emp = _col(table, "empirical")
    idx = np.arange(len(names))
    ax.bar(idx - 0.2, flow, width=0.4, label="flow formula")
    ax.bar(idx + 0.2, emp, width=0.4, label="empirical")
    ax.set_xticks(idx)
    ax.set_xticklabels(names, rotation=60, fontsize=7, ha="right")
    ax.set_ylabel("pairing")
    ax.set_title("measure comparison")
    ax.legend()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def _fig_lines(table, xcol, title, path, logy=False):
    fig, ax = plt.subplots(figsize=(5, 4))
    x = _col(table, xcol)
    for name in table["header"]:
        if name == xcol:
            continue
        try:
            y = _col(table, name)
        except (ValueError, TypeError):
            continue
        (ax.semilogy if logy else ax.plot)(x, y, label=name, lw=1.0)
    ax.set_xlabel(xcol)
    ax.set_title(title)
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def render_figures(bundle: dict, out_dir: str) -> list:
    """Render the recognized tables to PNG files; returns written paths."""
    written = []
    tables = bundle.get("tables", {})

    def out(name):
        p = os.path.join(out_dir, f"{name}.png")
        written.append(p)
        return p

    for name, table in sorted(tables.items()):
        try:
            if name == "resolvent_scan":
                _fig_loglog(table, "h", "norm", "weighted resolvent norm",
                            out(name))
            elif name == "incoming_scan":
                _fig_loglog(table, "h", "norm", "incoming block norm",
                            out(name))
            elif name == "eig_free":
                thr = [(row[0], row[-1]) for row in
                       bundle.get("results", {}).get("eig-free", {})
                       .get("thresholds", [])]
                _fig_eig(table, thr, out(name))
            elif name == "measure_compare":
                _fig_compare(table, out(name))
            elif name == "cauchy_gaps":
                _fig_loglog(table, "eps", "gap", "limiting absorption ladder",
                            out(name))
            elif name == "radiation":
                _fig_lines(table, "h", "radiation residual", out(name))
            elif name == "damping_windows":
                _fig_lines(table, "sample", "first positive window",
                           out(name))
            elif name == "flow_summary":
                _fig_lines(table, "sample", "flow diagnostics", out(name))
            elif name == "escape_relation":
                _fig_lines(table, "sample", "escape relation residual",
                           out(name), logy=True)
        except (KeyError, ValueError, IndexError):
            continue
    return written


def emit_report(bundle: dict, out_dir: str, formats=("csv", "json"),
                figures: bool = True) -> dict:
    """Write every table as CSV, the bundle as JSON, and the figures."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"csv": [], "json": None, "figures": []}
    if "csv" in formats:
        for name, table in sorted(bundle.get("tables", {}).items()):
            p = os.path.join(out_dir, f"{name}.csv")
            paths["csv"].append(write_csv(p, table["header"], table["rows"]))
    if "json" in formats:
        paths["json"] = write_json(os.path.join(out_dir, "report.json"),
                                   bundle)
    if figures:
        paths["figures"] = render_figures(bundle, out_dir)
    return paths
