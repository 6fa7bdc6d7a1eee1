"""Trajectory CSV, metrics report and SVG plots."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

from .coordinator import RunResult

CSV_COLUMNS = ("agent_id", "step", "x", "y", "potential", "phase")

_PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def trajectories_csv(result: RunResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for tr in result.trajectories:
        for s in tr.samples:
            w.writerow((tr.agent_id, s.step, repr(s.x), repr(s.y), repr(s.potential), s.phase.value))
    return buf.getvalue()


def read_trajectories_csv(text: str) -> list[dict]:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append(
            {
                "agent_id": int(row["agent_id"]),
                "step": int(row["step"]),
                "x": float(row["x"]),
                "y": float(row["y"]),
                "potential": float(row["potential"]),
                "phase": row["phase"],
            }
        )
    return rows


def _finite(obj):
    """JSON has no infinities; map them (and NaN) to null."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(_finite(report), indent=2) + "\n"


def write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


# -- SVG -------------------------------------------------------------------


def _svg(width: float, height: float, body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">'
    )
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n"


def trajectory_svg(result: RunResult, px_per_unit: float = 30.0) -> str:
    """Workspace, obstacles, one polyline per agent; kernel-phase segments dashed."""
    sc = result.scenario
    ws = sc.workspace
    pad = 10.0
    W = ws.width * px_per_unit + 2 * pad
    H = ws.height * px_per_unit + 2 * pad

    def xy(x, y):
        return pad + x * px_per_unit, pad + (ws.height - y) * px_per_unit

    body = [
        f'<rect x="{pad}" y="{pad}" width="{ws.width * px_per_unit:.2f}" '
        f'height="{ws.height * px_per_unit:.2f}" fill="none" stroke="black"/>'
    ]
    for o in sc.obstacles:
        cx, cy = xy(*o.center)
        r = max(o.radius * px_per_unit, 2.0)
        body.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:.2f}" fill="#999" stroke="#444"/>')
    for n, tr in enumerate(result.trajectories):
        colour = _PALETTE[n % len(_PALETTE)]
        plan = [xy(s.x, s.y) for s in tr.samples if s.phase.value == "Planning"]
        rest = [xy(s.x, s.y) for s in tr.samples if s.phase.value != "Planning"]
        if plan and rest:
            rest.insert(0, plan[-1])
        for pts, dash in ((plan, ""), (rest, ' stroke-dasharray="4 2"')):
            if len(pts) > 1:
                p = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
                body.append(f'<polyline points="{p}" fill="none" stroke="{colour}" stroke-width="1.2"{dash}/>')
        a = sc.agents[sc.index_of(tr.agent_id)]
        sx, sy = xy(*a.q0)
        tx, ty = xy(*a.qt)
        body.append(f'<circle cx="{sx:.2f}" cy="{sy:.2f}" r="2.5" fill="{colour}"/>')
        body.append(
            f'<rect x="{tx - 3:.2f}" y="{ty - 3:.2f}" width="6" height="6" fill="none" stroke="{colour}"/>'
        )
    return _svg(W, H, body)


def potential_svg(result: RunResult, width: float = 640.0, height: float = 360.0) -> str:
    """Potential-vs-step curves, each normalized by its initial value."""
    pad = 40.0
    steps = max((s.step for tr in result.trajectories for s in tr.samples), default=1) or 1
    body = [
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 8:.0f}" font-size="12" text-anchor="middle">step</text>',
        f'<text x="12" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 12 {height / 2:.0f})" '
        f'text-anchor="middle">potential / initial</text>',
    ]
    for n, tr in enumerate(result.trajectories):
        if not tr.samples:
            continue
        v0 = tr.samples[0].potential
        v0 = v0 if v0 > 0 else 1.0
        pts = []
        for s in tr.samples:
            u = min(max(s.potential / v0, 0.0), 1.5) / 1.5
            pts.append((pad + (width - 2 * pad) * s.step / steps, height - pad - (height - 2 * pad) * u))
        p = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        colour = _PALETTE[n % len(_PALETTE)]
        body.append(f'<polyline points="{p}" fill="none" stroke="{colour}" stroke-width="1"/>')
    return _svg(width, height, body)


def write_run(result: RunResult, out: Path, report: dict, plots: bool = False, prefix: str = "") -> list[Path]:
    """Write ``<prefix>trajectories.csv``, ``<prefix>metrics.json`` and optional SVGs."""
    out = Path(out)
    files = [(out / f"{prefix}trajectories.csv", trajectories_csv(result)), (out / f"{prefix}metrics.json", dumps_report(report))]
    if plots:
        files.append((out / f"{prefix}trajectories.svg", trajectory_svg(result)))
        files.append((out / f"{prefix}potentials.svg", potential_svg(result)))
    for path, text in files:
        write_text(path, text)
    return [p for p, _ in files]
