"""Timeline rendering of reference versus predicted events for one clip.

Ground truth occupies the upper lane, predictions the lower one. Each
class keeps a stable color; unknown predictions are drawn grey. A JSON
sidecar mirrors everything in the figure.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError  # noqa: E402

UNKNOWN_COLOR = "0.6"
PALETTE = plt.get_cmap("tab10")


def read_event_rows(path: str | Path) -> dict[str, list[dict]]:
    """Parse a prediction/reference TSV keeping labels as strings.

    Rows are clip, onset, offset, label and optionally a score column.
    """
    rows: dict[str, list[dict]] = {}
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 4:
            raise DataError(f"{path}:{line_no}: expected at least 4 columns")
        record = {"onset": float(parts[1]), "offset": float(parts[2]), "label": parts[3]}
        if len(parts) > 4:
            record["score"] = float(parts[4])
        rows.setdefault(parts[0], []).append(record)
    return rows


def render_timeline(predictions_path: str | Path, references_path: str | Path,
                    clip_id: str, out_path: str | Path) -> Path:
    predictions = read_event_rows(predictions_path)
    references = read_event_rows(references_path)
    if clip_id not in references:
        available = sorted(set(references) | set(predictions))
        raise DataError(f"clip {clip_id!r} not found; available: {available}")
    refs = references[clip_id]
    preds = predictions.get(clip_id, [])

    labels = sorted({r["label"] for r in refs} | {p["label"] for p in preds if p["label"] != "unknown"})
    color_of = {label: PALETTE(i % 10) for i, label in enumerate(labels)}
    color_of["unknown"] = UNKNOWN_COLOR

    fig, ax = plt.subplots(figsize=(10, 3.2))
    for lane, events, lane_label in ((1.0, refs, "reference"), (0.0, preds, "predicted")):
        for ev in events:
            ax.barh(lane, ev["offset"] - ev["onset"], left=ev["onset"], height=0.6,
                    color=color_of[ev["label"]], edgecolor="black", linewidth=0.5)
            text = ev["label"]
            if "score" in ev:
                text += f" {ev['score']:.2f}"
            ax.text(ev["onset"], lane, text, fontsize=7, va="center")
    ax.set_yticks([0.0, 1.0])
    ax.set_yticklabels(["predicted", "reference"])
    ax.set_xlabel("time (s)")
    ax.set_title(clip_id)
    span = max([r["offset"] for r in refs] + [p["offset"] for p in preds] + [1.0])
    ax.set_xlim(0, span * 1.02)
    fig.tight_layout()

    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=150)
    plt.close(fig)

    sidecar = out_path.with_suffix(out_path.suffix + ".json")
    sidecar.write_text(json.dumps({
        "clip_id": clip_id,
        "reference": refs,
        "predicted": preds,
    }, indent=2), encoding="utf-8")
    return out_path
