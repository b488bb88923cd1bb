"""Batch outputs: per-step CSV logs, the JSON summary and SVG plots."""

from __future__ import annotations

import json
import logging
import math
from itertools import combinations
from pathlib import Path as FsPath

import numpy as np
from scipy import stats

from hound.harness.records import RunRecord, columns, read_csv, write_csv

log = logging.getLogger(__name__)

SCHEMA = "v1"
Z95 = 1.959963984540054

# summary fields aggregated per arm, and which of them get pairwise tests
NUMERIC = ("peak_ratio", "min_az", "max_yaw_accel", "rollovers", "ttc_np", "ttc_p", "distance_m", "duration_s")
COMPARED = ("peak_ratio", "min_az", "ttc_np", "ttc_p", "rollovers")


def mean_ci(values) -> dict:
    """Mean with a normal-approximation 95% interval (``mean +- 1.96 s / sqrt(n)``)."""
    x = np.asarray([v for v in values if v is not None and math.isfinite(v)], dtype=float)
    n = int(x.size)
    if n == 0:
        return {"n": 0, "mean": None, "sd": None, "ci95": [None, None]}
    m = float(x.mean())
    sd = float(x.std(ddof=1)) if n > 1 else 0.0
    half = Z95 * sd / math.sqrt(n)
    return {"n": n, "mean": m, "sd": sd, "ci95": [m - half, m + half]}


def welch(a, b) -> dict:
    """Welch's unequal-variance t-test; ``p`` is None when it is undefined."""
    a = np.asarray([v for v in a if v is not None and math.isfinite(v)], dtype=float)
    b = np.asarray([v for v in b if v is not None and math.isfinite(v)], dtype=float)
    if a.size < 2 or b.size < 2 or (a.var() == 0 and b.var() == 0):
        return {"t": None, "p": None}
    res = stats.ttest_ind(a, b, equal_var=False)
    return {"t": float(res.statistic), "p": float(res.pvalue)}


def _phase_groups(batch: list[RunRecord]) -> dict[tuple[str, str], list[RunRecord]]:
    groups: dict[tuple[str, str], list[RunRecord]] = {}
    for r in batch:
        groups.setdefault((r.meta.get("phase", "main"), r.arm), []).append(r)
    return groups


def summarize_batch(batch: list[RunRecord], scenario: dict | None = None) -> dict:
    """The JSON summary document (schema ``v1``) for a batch of run records."""
    if not batch:
        raise ValueError("empty batch")
    arms: dict[str, dict] = {}
    phases: dict[str, dict] = {}
    for (phase, arm), recs in sorted(_phase_groups(batch).items()):
        recs = sorted(recs, key=lambda r: r.iteration)
        ok = [r for r in recs if not r.meta.get("failed", False)]
        if len(ok) < len(recs):
            log.warning("%s/%s: %d failed iterations excluded", phase, arm, len(recs) - len(ok))
        entry = {
            "iterations": len(recs),
            "failed": len(recs) - len(ok),
            "rollover_rate": float(np.mean([r.summary["rollovers"] > 0 for r in ok])) if ok else None,
            "metrics": {k: mean_ci([r.summary.get(k) for r in ok]) for k in NUMERIC},
        }
        if phase == "broad":
            by_speed: dict[float, list[RunRecord]] = {}
            for r in ok:
                by_speed.setdefault(r.meta["speed_m_s"], []).append(r)
            entry["rollover_rate_by_speed"] = [
                [v, float(np.mean([q.summary["rollovers"] > 0 for q in rs]))] for v, rs in sorted(by_speed.items())
            ]
        (arms if phase == "main" else phases.setdefault(phase, {}))[arm] = entry
    comparisons = []
    main = {arm: [r for r in recs if not r.meta.get("failed", False)]
            for (phase, arm), recs in _phase_groups(batch).items() if phase == "main"}
    for a, b in combinations(sorted(main), 2):
        for key in COMPARED:
            w = welch([r.summary.get(key) for r in main[a]], [r.summary.get(key) for r in main[b]])
            comparisons.append({"a": a, "b": b, "metric": key, **w})
    doc = {
        "schema": SCHEMA,
        "protocol": batch[0].protocol,
        "arms": arms,
        "comparisons": comparisons,
        "iterations": [
            {"arm": r.arm, "iteration": r.iteration, "meta": r.meta, "summary": r.summary}
            for r in sorted(batch, key=lambda r: (r.meta.get("phase", "main"), r.arm, r.iteration))
        ],
    }
    if phases:
        doc["phases"] = phases
    if scenario is not None:
        doc["scenario"] = scenario
    return doc


def _clean(obj):
    """Replace non-finite floats by None so the JSON stays standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return _clean(obj.item())
    return obj


def dumps_json(doc: dict) -> str:
    return json.dumps(_clean(doc), sort_keys=True, indent=2) + "\n"


def write_json(doc: dict, path: str | FsPath) -> None:
    FsPath(path).write_text(dumps_json(doc))


def emit_outputs(batch: list[RunRecord], out_dir: str | FsPath, formats=("csv", "json", "svg"),
                 scenario: dict | None = None) -> list[FsPath]:
    """Write the requested outputs into ``out_dir``; returns the files written.

    Raises:
        ValueError: on an empty batch (before anything is written), or
            when CSV output is requested for records whose rows were dropped.
    """
    if not batch:
        raise ValueError("empty batch: nothing written")
    unknown = set(formats) - {"csv", "json", "svg"}
    if unknown:
        raise ValueError(f"unknown output formats {sorted(unknown)}")
    if "csv" in formats and any(r.rows is None for r in batch):
        raise ValueError("CSV output needs records with their rows")
    doc = summarize_batch(batch, scenario)
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        logs = out / "logs"
        logs.mkdir(exist_ok=True)
        for r in batch:
            p = logs / f"{r.label}.csv"
            write_csv(r.rows, p)
            written.append(p)
    if "json" in formats:
        p = out / "summary.json"
        write_json(doc, p)
        written.append(p)
    if "svg" in formats:
        written.extend(plot_summary(doc, out, logs_dir=out / "logs"))
    return written


# ---------------------------------------------------------------------------
# plots
# ---------------------------------------------------------------------------
def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "hound"
    return plt


def _save(fig, path: FsPath) -> FsPath:
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _bars(plt, arms: dict, key: str, ylabel: str, path: FsPath, rate: bool = False) -> FsPath:
    names = sorted(arms)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if rate:
        vals = [arms[a]["rollover_rate"] or 0.0 for a in names]
        ax.bar(names, vals, color="0.55")
    else:
        ms = [arms[a]["metrics"][key] for a in names]
        vals = [m["mean"] if m["mean"] is not None else 0.0 for m in ms]
        err = [0.0 if m["mean"] is None else m["ci95"][1] - m["mean"] for m in ms]
        ax.bar(names, vals, yerr=err, capsize=4, color="0.55")
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    out = _save(fig, path)
    plt.close(fig)
    return out


def plot_summary(doc: dict, out_dir: str | FsPath, logs_dir: str | FsPath | None = None) -> list[FsPath]:
    """SVG plots for a summary document.

    Isolated batches get bars of rollover rate, peak ratio and minimum
    vertical acceleration (plus rollover rate against speed for a broad
    sweep); in-loop batches get TTC bars and, when the CSV logs are
    available, trajectory overlays; model comparisons get the
    normalised error bars.
    """
    plt = _pyplot()
    out = FsPath(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    proto = doc.get("protocol")
    if proto == "model_compare":
        models = doc["models"]
        keys = ("acceleration", "rotation_rate", "velocity")
        fig, ax = plt.subplots(figsize=(6, 3.5))
        w = 0.8 / len(models)
        for j, m in enumerate(models):
            ax.bar(np.arange(3) + j * w, [doc["normalized"][m][k] for k in keys], w, label=m)
        ax.set_xticks(np.arange(3) + 0.4 - w / 2, keys)
        ax.set_ylabel("normalised L2 error")
        ax.legend()
        fig.tight_layout()
        files.append(_save(fig, out / "model_errors.svg"))
        plt.close(fig)
        return files
    arms = doc["arms"]
    if proto in ("isolated_rollover", "replay"):
        files.append(_bars(plt, arms, "", "rollover rate", out / "rollover_rate.svg", rate=True))
        files.append(_bars(plt, arms, "peak_ratio", "peak |A_y / A_z|", out / "peak_ratio.svg"))
        files.append(_bars(plt, arms, "min_az", "min A_z (m/s^2)", out / "min_az.svg"))
        broad = doc.get("phases", {}).get("broad")
        if broad:
            fig, ax = plt.subplots(figsize=(5, 3.5))
            for a in sorted(broad):
                pts = np.array(broad[a]["rollover_rate_by_speed"])
                ax.plot(pts[:, 0], pts[:, 1], marker="o", label=a)
            ax.set_xlabel("speed (m/s)")
            ax.set_ylabel("rollover rate")
            ax.legend()
            fig.tight_layout()
            files.append(_save(fig, out / "broad_sweep.svg"))
            plt.close(fig)
    if proto == "in_loop":
        files.append(_bars(plt, arms, "ttc_p", "TTC with penalty (s)", out / "ttc_p.svg"))
        files.append(_bars(plt, arms, "ttc_np", "TTC without penalty (s)", out / "ttc_np.svg"))
        files.append(_bars(plt, arms, "rollovers", "rollovers per run", out / "rollovers.svg"))
        logs = FsPath(logs_dir) if logs_dir is not None else None
        if logs is not None and logs.is_dir():
            fig, ax = plt.subplots(figsize=(5, 5))
            styles = {}
            for it in doc["iterations"]:
                label = f"{it['arm']}_{it['iteration']:03d}.csv"
                p = logs / label
                if not p.exists():
                    continue
                c = columns(read_csv(p))
                color = styles.setdefault(it["arm"], f"C{len(styles)}")
                ax.plot(c["x"], c["y"], color=color, lw=0.7, alpha=0.6)
            for arm, color in styles.items():
                ax.plot([], [], color=color, label=arm)
            ax.set_aspect("equal")
            ax.set_xlabel("x (m)")
            ax.set_ylabel("y (m)")
            if styles:
                ax.legend()
            fig.tight_layout()
            files.append(_save(fig, out / "trajectories.svg"))
            plt.close(fig)
    return files


__all__ = [
    "SCHEMA", "mean_ci", "welch", "summarize_batch", "emit_outputs", "plot_summary", "write_json",
    "dumps_json",
]
