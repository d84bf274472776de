"""Render markdown (and minimal HTML) summaries from existing result
directories without recomputing anything."""

from __future__ import annotations

import csv
import html
import json
from pathlib import Path


def _table(rows: list[dict]) -> list[str]:
    if not rows:
        return ["(no rows)"]
    keys = list(rows[0].keys())
    lines = ["| " + " | ".join(keys) + " |", "|" + "---|" * len(keys)]
    for r in rows:
        lines.append("| " + " | ".join(_fmt(r.get(k, "")) for k in keys) + " |")
    return lines


def _fmt(v: str) -> str:
    try:
        f = float(v)
    except (TypeError, ValueError):
        return str(v)
    if f.is_integer() and abs(f) < 1e15 and "." not in str(v) and "e" not in str(v):
        return str(v)
    return f"{f:.6g}"


def render_markdown(result_dirs) -> str:
    parts = ["# Experiment report", ""]
    for d in map(Path, result_dirs):
        man_path = d / "manifest.json"
        if not man_path.exists():
            parts += [f"## {d}", "", "missing manifest.json", ""]
            continue
        man = json.loads(man_path.read_text())
        cfg = man["config"]
        dims = cfg["dims"]
        parts += [
            f"## {d.name}: {cfg['kind']} (n={dims['n']}, k={dims['k']}, m={dims['m']})",
            "",
            f"- sampler: {cfg['sampler'].get('kind')}, N = {cfg['Nsamples']}, seed = {cfg['seed']}",
            f"- wall time: {man['wall_time_s']:.1f} s, cap errors: {man.get('cap_errors', 0)}",
            "",
        ]
        summ = d / "summary.csv"
        if summ.exists() and summ.stat().st_size:
            with summ.open() as fh:
                parts += _table(list(csv.DictReader(fh)))
            parts.append("")
        extra = d / "extra.json"
        if extra.exists():
            ex = json.loads(extra.read_text())
            if ex:
                parts += ["```", json.dumps(ex, indent=1, sort_keys=True), "```", ""]
        for svg in sorted(d.glob("*.svg")):
            parts.append(f"![{svg.stem}]({svg.name})")
        parts.append("")
    return "\n".join(parts)


def render_html(markdown: str) -> str:
    body = html.escape(markdown)
    return f"<!doctype html>\n<html><head><meta charset='utf-8'><title>report</title></head>" \
           f"<body><pre>{body}</pre></body></html>\n"


def write_report(result_dirs, out: str | Path, fmt: str = "md") -> Path:
    md = render_markdown(result_dirs)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "html":
        path = out / "report.html"
        path.write_text(render_html(md))
    else:
        path = out / "report.md"
        path.write_text(md)
    return path
