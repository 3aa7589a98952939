"""Report rendering: aligned plain-text tables, JSONL records (written by
the pipeline stages) and matplotlib figures saved next to them."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

ABSENT = "-"


def load_reference_scores(source: str = "builtin") -> Optional[dict]:
    """The published full-scale scores used for side-by-side display only."""
    if source == "none":
        return None
    if source == "builtin":
        ref = resources.files("mmtlab").joinpath("data/reference_scores.json")
        return json.loads(ref.read_text(encoding="utf-8"))
    return json.loads(Path(source).read_text(encoding="utf-8"))


def format_table(title: str, row_names: Sequence[str],
                 col_names: Sequence[str],
                 cells: dict[tuple[str, str], str]) -> str:
    """Aligned plain-text table; missing cells get an explicit absence
    marker."""
    widths = [max(len("setup"), *(len(r) for r in row_names))]
    for c in col_names:
        widths.append(max(len(c), *(len(cells.get((r, c), ABSENT))
                                    for r in row_names)))
    lines = [title]
    header = ["setup".ljust(widths[0])]
    header += [c.rjust(widths[i + 1]) for i, c in enumerate(col_names)]
    lines.append("  ".join(header))
    lines.append("-" * len(lines[-1]))
    for r in row_names:
        row = [r.ljust(widths[0])]
        row += [cells.get((r, c), ABSENT).rjust(widths[i + 1])
                for i, c in enumerate(col_names)]
        lines.append("  ".join(row))
    return "\n".join(lines) + "\n"


def write_report(report_dir: Path, cfg, result_rows: list[dict],
                 probe_rows: list[dict]) -> None:
    report_dir.mkdir(parents=True, exist_ok=True)
    variants = [v.value for v in cfg.variants]
    setups = list(cfg.setups)

    bleu_cells = {(r["setup"], r["variant"]): f"{r['bleu']:.2f}"
                  for r in result_rows}
    text = format_table("BLEU on the test set (this run)", setups, variants,
                        bleu_cells)

    reference = load_reference_scores(cfg.reference_display)
    if reference is not None:
        ref_cells = {(s, v): f"{x:.1f}"
                     for s, row in reference["bleu"].items()
                     for v, x in row.items()}
        text += "\n" + format_table(
            "published full-scale reference BLEU (NOT reproduced here)",
            list(reference["bleu"]), ["ORG", "ACT", "ALL"], ref_cells)
    (report_dir / "results.txt").write_text(text, encoding="utf-8")

    if probe_rows:
        probe_setups = sorted({r["setup"] for r in probe_rows},
                              key=setups.index)
        cells = {}
        for r in probe_rows:
            cells[(r["setup"], r["variant"])] = (
                f"{r['congruent_bleu']:.2f}/{r['incongruent_bleu']:.2f}"
                f" ({r['delta']:+.2f})")
        probe_text = format_table(
            "incongruent decoding: congruent/incongruent BLEU (delta)",
            probe_setups, variants, cells)
        if reference is not None:
            ref_cells = {(s, v): f"{x:+.1f}"
                         for s, row in reference["incongruent_delta"].items()
                         for v, x in row.items()}
            probe_text += "\n" + format_table(
                "published full-scale reference deltas (NOT reproduced here)",
                list(reference["incongruent_delta"]), ["ORG", "ACT", "ALL"],
                ref_cells)
        (report_dir / "probe.txt").write_text(probe_text, encoding="utf-8")

    render_figures(report_dir, variants, setups, result_rows, probe_rows)


def render_figures(report_dir: Path, variants: list[str], setups: list[str],
                   result_rows: list[dict], probe_rows: list[dict]) -> None:
    """Bar charts for the BLEU grid and the probe deltas."""
    by_cell = {(r["setup"], r["variant"]): r["bleu"] for r in result_rows}
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(len(variants), 1)
    xs = range(len(setups))
    for j, variant in enumerate(variants):
        vals = [by_cell.get((s, variant), 0.0) for s in setups]
        ax.bar([x + j * width for x in xs], vals, width=width, label=variant)
    ax.set_xticks([x + width * (len(variants) - 1) / 2 for x in xs])
    ax.set_xticklabels(setups, rotation=20, ha="right")
    ax.set_ylabel("BLEU")
    ax.set_title("test BLEU by setup and masking variant")
    ax.legend()
    fig.tight_layout()
    fig.savefig(report_dir / "bleu_scores.png", dpi=120)
    plt.close(fig)

    if not probe_rows:
        return
    labels = [f"{r['setup']}\n{r['variant']}" for r in probe_rows]
    deltas = [r["delta"] for r in probe_rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 4))
    colors = ["#b33" if d < 0 else "#383" for d in deltas]
    ax.bar(range(len(deltas)), deltas, color=colors)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("BLEU delta (incongruent - congruent)")
    ax.set_title("incongruent-decoding probe")
    fig.tight_layout()
    fig.savefig(report_dir / "probe_deltas.png", dpi=120)
    plt.close(fig)


def format_rank_table(scores: dict[str, float]) -> str:
    systems = list(scores)
    width = max(len(s) for s in systems)
    lines = ["human ranking score (share of items judged best or tied best)"]
    for s in systems:
        lines.append(f"{s.ljust(width)}  {scores[s]:.4f}")
    return "\n".join(lines) + "\n"
