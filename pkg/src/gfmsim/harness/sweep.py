"""Cartesian parameter sweeps, summary grids and Markdown reports.

Cell ``i`` (row-major over the axes, replicate ``r`` innermost) runs with
``run.stream = i * replicates + r``; its link seed is stream ``stream`` of
``SeedSequence(run.seed)``. A one-cell sweep therefore equals a plain run.
"""

import copy
import csv
import io
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from gfmsim.harness.engine import run
from gfmsim.harness.presets import build_scenario


@dataclass
class Cell:
    index: int
    replicate: int
    values: tuple
    config: dict
    record: object = None
    error: str | None = None


def set_key(cfg, key, value):
    sec, _, field = key.partition(".")
    cfg[sec][field] = value


def expand(cfg):
    """Per-cell configs in axis order (first axis slowest)."""
    axes = cfg["sweep"]["axes"]
    if not axes:
        raise ValueError("sweep needs at least one axis")
    for key, values in axes.items():
        if len(values) == 0:
            raise ValueError(f"sweep axis {key} is empty")
    reps = int(cfg["sweep"]["replicates"])
    cells = []
    for i, combo in enumerate(itertools.product(*axes.values())):
        for r in range(reps):
            c = copy.deepcopy(cfg)
            for key, value in zip(axes, combo):
                set_key(c, key, value)
            c["run"]["stream"] = i * reps + r
            c["sweep"]["axes"] = {}
            cells.append(Cell(i, r, tuple(combo), c))
    return cells


def _run_cell(cfg):
    try:
        return run(build_scenario(cfg)), None
    except Exception as exc:  # recorded per cell; the sweep carries on
        return None, f"{type(exc).__name__}: {exc}"


def sweep(cfg, jobs=1):
    """Run every cell; results keep axis order regardless of completion order."""
    cells = expand(cfg)
    configs = [c.config for c in cells]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell, configs))
    else:
        results = [_run_cell(c) for c in configs]
    for cell, (rec, err) in zip(cells, results):
        cell.record, cell.error = rec, err
    return cells


def steady_values(rec):
    """Final-window means of Q1, Q2, the PCC voltage magnitude and e_Q."""
    fw = rec["t"] >= rec["t"][-1] - rec.thresholds.final_window
    return {
        "Q1_final": float(np.mean(rec["Q1"][fw])),
        "Q2_final": float(np.mean(rec["Q2"][fw])),
        "vpcc_final": float(np.mean(rec["vpcc_mag"][fw])),
        "eQ_final": float(np.mean(rec.e_Q[fw])),
    }


SUMMARY_FIELDS = ("status", "dQ_max", "dt_r", "behaviour", "stability", "residual_dQ",
                  "voltage_deviation", "Q1_final", "Q2_final", "vpcc_final", "eQ_final",
                  "sent", "dropped", "max_staleness_s")


def cell_row(cell):
    row = {"cell": cell.index, "replicate": cell.replicate, "stream": cell.config["run"]["stream"]}
    if cell.record is None:
        row.update({k: None for k in SUMMARY_FIELDS})
        row["status"] = "error"
        return row
    rec = cell.record
    s = rec.summary()
    row.update({k: s[k] for k in ("status", "dQ_max", "dt_r", "behaviour", "stability",
                                   "residual_dQ", "voltage_deviation")})
    row.update(steady_values(rec))
    row["sent"] = sum(l["sent"] for l in rec.channel_stats)
    row["dropped"] = sum(l["dropped"] for l in rec.channel_stats)
    row["max_staleness_s"] = rec.diagnostics["max_staleness_s"]
    return row


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}" if math.isfinite(v) else str(v)
    return str(v)


def summary_csv(cfg, cells):
    axes = list(cfg["sweep"]["axes"])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["cell", "replicate", "stream", *axes, *SUMMARY_FIELDS])
    for cell in cells:
        row = cell_row(cell)
        w.writerow([row["cell"], row["replicate"], row["stream"], *map(_fmt, cell.values),
                    *(_fmt(row[k]) for k in SUMMARY_FIELDS)])
    return buf.getvalue()


def grid(cfg, cells, field="stability"):
    """2-D array of ``field`` (first replicate) shaped by the first two axes."""
    axes = list(cfg["sweep"]["axes"].values())
    if len(axes) != 2:
        raise ValueError("grid needs exactly two axes")
    out = np.empty((len(axes[0]), len(axes[1])), dtype=object)
    for cell in cells:
        if cell.replicate == 0:
            i, j = divmod(cell.index, len(axes[1]))
            out[i, j] = cell_row(cell)[field]
    return out


def _md_table(header, rows):
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(_fmt(v) if v is not None else "-" for v in r) + " |" for r in rows]
    return "\n".join(lines)


def report_markdown(cfg, cells):
    axes = cfg["sweep"]["axes"]
    names = list(axes)
    out = [f"# Sweep `{cfg['name']}`", "",
           f"{len(cells)} runs, master seed {cfg['run']['seed']}, "
           f"axes: {', '.join(f'{k} ({len(v)})' for k, v in axes.items())}", ""]
    rows = [cell_row(c) for c in cells]
    if len(names) == 2:
        g = grid(cfg, cells)
        out += ["## Stability grid", ""]
        out.append(_md_table([f"{names[0]} \\ {names[1]}", *map(_fmt, axes[names[1]])],
                             [[_fmt(v), *g[i]] for i, v in enumerate(axes[names[0]])]))
        out += ["", "## Restoration time grid (s)", ""]
        t = grid(cfg, cells, "dt_r")
        out.append(_md_table([f"{names[0]} \\ {names[1]}", *map(_fmt, axes[names[1]])],
                             [[_fmt(v), *t[i]] for i, v in enumerate(axes[names[0]])]))
        out.append("")
    if cfg["protocol"]["kind"] == "step":
        out += ["## Transient response", ""]
        out.append(_md_table(
            [*names, "dQ_max (VAr)", "dt_r (s)", "behaviour", "stability", "V dev (V)"],
            [[*c.values, r["dQ_max"], r["dt_r"], r["behaviour"], r["stability"], r["voltage_deviation"]]
             for c, r in zip(cells, rows)]))
    else:
        out += ["## Steady state (final-window means)", ""]
        out.append(_md_table(
            [*names, "Q1 (VAr)", "Q2 (VAr)", "e_Q (VAr)", "v_pcc (V)", "status"],
            [[*c.values, r["Q1_final"], r["Q2_final"], r["eQ_final"], r["vpcc_final"], r["status"]]
             for c, r in zip(cells, rows)]))
    errors = [(c.index, c.error) for c in cells if c.error]
    if errors:
        out += ["", "## Failed cells", ""] + [f"- cell {i}: {e}" for i, e in errors]
    out += ["", "## Channel statistics", ""]
    out.append(_md_table([*names, "sent", "dropped", "max staleness (s)"],
                         [[*c.values, r["sent"], r["dropped"], r["max_staleness_s"]]
                          for c, r in zip(cells, rows)]))
    return "\n".join(out) + "\n"


def run_report_markdown(cfg, rec):
    m = rec.metrics
    d = rec.diagnostics
    out = [f"# Run `{cfg['name']}`", "", f"status: {d['status']} (stopped at t = {d['t_stop']:.4f} s)", "",
           "## Metrics", ""]
    sv = steady_values(rec) if len(rec.data) else {}
    out.append(_md_table(["metric", "value"], [
        ["dQ_max (VAr)", m.get("dQ_max")], ["dt_r (s)", m.get("dt_r")],
        ["behaviour", m.get("behaviour")], ["stability", m.get("stability")],
        ["residual dQ (VAr)", m.get("residual_dQ")], ["voltage deviation (V)", m.get("voltage_deviation")],
        *[[k, v] for k, v in sv.items()],
    ]))
    out += ["", "## Diagnostics", ""]
    out.append(_md_table(["item", "value"], [
        ["saturation counts", d["saturation_counts"]], ["qshare clamp counts", d["qshare_clamps"]],
        ["relay closed at (s)", d["relay_closed_at"]], ["sync phase", d["sync_phase"]],
        ["max staleness (s)", d["max_staleness_s"]],
        ["power filter cutoff (rad/s)", cfg["inv1"]["omega_c_pq"]],
    ]))
    out += ["", "## Channel statistics", ""]
    keys = ("link", "sent", "dropped", "delivered", "in_flight", "max_age_at_delivery_s")
    out.append(_md_table(list(keys), [[s[k] for k in keys] for s in rec.channel_stats]))
    return "\n".join(out) + "\n"
