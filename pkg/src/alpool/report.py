"""Report rendering: text table, canonical JSON, CSV, and figures.

The JSON file is the canonical record (sorted keys, full float precision) so
identical experiments produce byte-identical reports; the text table mirrors
the usual summary layout (one row per algorithm, per-target counts and
relative SER reduction); figures land next to the delimited output.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def render_text(report: dict) -> str:
    targets = list(report["config"]["targets"])
    header = ["Algorithm", "Overall #Utt"]
    for target in targets:
        header += [f"{target} #Utt", f"{target} dSER%"]
    header += ["Non-Target #Utt", "Noise #Utt"]

    rows = [header]
    for row in report["algorithms"]:
        cells = [row["algorithm"], f"{row['overall_utt']:.1f}"]
        for target in targets:
            per = row["per_target"][target]
            cells += [f"{per['utt']:.1f}", f"{per['delta_ser_pct']:.2f}"]
        cells += [f"{row['non_target_utt']:.1f}", f"{row['noise_utt']:.1f}"]
        rows.append(cells)

    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = []
    for i, row_cells in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row_cells)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    base = report["baseline"]["per_domain_ser"]
    lines.append("")
    lines.append(
        "baseline SER: "
        + "  ".join(f"{t}={base[t]:.4f}" for t in targets)
        + f"  aggregate={report['baseline']['aggregate_ser']:.4f}"
    )
    for row in report["algorithms"]:
        for other, sig in sorted(row.get("significance_vs", {}).items()):
            lines.append(
                f"{row['algorithm']} vs {other}: delta_ser={sig['delta_ser_pct']:.2f}% "
                f"bootstrap_p={sig['bootstrap_p']:.4g} wilcoxon_p={sig['wilcoxon_p']:.4g}"
            )
    return "\n".join(lines) + "\n"


def render_csv(report: dict) -> str:
    targets = list(report["config"]["targets"])
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(
        ["algorithm", "target", "utt", "ser", "delta_ser_pct", "overall_utt", "non_target_utt", "noise_utt"]
    )
    for row in report["algorithms"]:
        for target in targets:
            per = row["per_target"][target]
            writer.writerow(
                [
                    row["algorithm"],
                    target,
                    repr(per["utt"]),
                    repr(per["ser"]),
                    repr(per["delta_ser_pct"]),
                    repr(row["overall_utt"]),
                    repr(row["non_target_utt"]),
                    repr(row["noise_utt"]),
                ]
            )
    return buf.getvalue()


def render_figures(report: dict, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    targets = list(report["config"]["targets"])
    algorithms = [row["algorithm"] for row in report["algorithms"]]
    paths = []

    fig, ax = plt.subplots(figsize=(1.6 + 1.3 * len(algorithms), 3.4))
    width = 0.8 / max(len(targets), 1)
    for k, target in enumerate(targets):
        deltas = [row["per_target"][target]["delta_ser_pct"] for row in report["algorithms"]]
        xs = [i + k * width for i in range(len(algorithms))]
        ax.bar(xs, deltas, width=width, label=target)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(algorithms))])
    ax.set_xticklabels(algorithms, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("relative SER reduction (%)")
    ax.axhline(0.0, color="black", linewidth=0.6)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out / "delta_ser.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)

    fig, ax = plt.subplots(figsize=(1.6 + 1.3 * len(algorithms), 3.4))
    in_target = [sum(r["per_target"][t]["utt"] for t in targets) for r in report["algorithms"]]
    non_target = [r["non_target_utt"] for r in report["algorithms"]]
    noise = [r["noise_utt"] for r in report["algorithms"]]
    xs = range(len(algorithms))
    ax.bar(xs, in_target, label="in-target")
    ax.bar(xs, non_target, bottom=in_target, label="non-target")
    bottoms = [a + b for a, b in zip(in_target, non_target)]
    ax.bar(xs, noise, bottom=bottoms, label="noise")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(algorithms, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("selected utterances")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = out / "selection_mix.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    paths.append(path)
    return paths


def write_report(report: dict, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "json": out / "report.json",
        "csv": out / "report.csv",
        "txt": out / "report.txt",
    }
    files["json"].write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    files["csv"].write_text(render_csv(report), encoding="utf-8")
    files["txt"].write_text(render_text(report), encoding="utf-8")
    for i, path in enumerate(render_figures(report, out)):
        files[f"figure{i}"] = path
    return files
