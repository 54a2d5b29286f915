"""Event annotations and their on-disk interchange formats.

Canonical annotation format is a headerless UTF-8 TSV with one event per
row: ``clip_id <TAB> onset <TAB> offset <TAB> label``. Times are seconds
with ``.`` decimal point. Class id 0 is reserved for "unknown" and the
label string ``unknown`` maps to it in prediction files.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from ..errors import ParseError, ValidationError

UNKNOWN_CLASS_ID = 0
UNKNOWN_LABEL = "unknown"


@dataclass(frozen=True)
class EventLabel:
    class_id: int
    onset: float  # seconds
    offset: float  # seconds

    def __post_init__(self):
        if self.class_id < 0:
            raise ValidationError(f"class_id must be >= 0, got {self.class_id}")
        if not 0 <= self.onset < self.offset:
            raise ValidationError(
                f"need 0 <= onset < offset, got onset={self.onset}, offset={self.offset}")

    @property
    def duration(self) -> float:
        return self.offset - self.onset


@dataclass
class ClipAnnotation:
    clip_id: str
    duration: float  # seconds
    events: list[EventLabel] = field(default_factory=list)

    def __post_init__(self):
        if self.duration <= 0:
            raise ValidationError(f"clip {self.clip_id}: duration must be > 0")
        for ev in self.events:
            if ev.offset > self.duration + 1e-9:
                raise ValidationError(
                    f"clip {self.clip_id}: event offset {ev.offset} exceeds duration {self.duration}")

    def classes(self) -> set[int]:
        return {ev.class_id for ev in self.events}

    def with_events(self, events: list[EventLabel]) -> "ClipAnnotation":
        return replace(self, events=list(events))


def load_vocabulary(path: str | Path) -> dict[str, int]:
    """Read ``label <TAB> integer_id`` lines. Id 0 is reserved and rejected."""
    vocab: dict[str, int] = {}
    for line_no, row in _read_rows(path, n_cols=2):
        label, id_text = row
        try:
            class_id = int(id_text)
        except ValueError:
            raise ParseError(path, line_no, f"class id {id_text!r} is not an integer")
        if class_id == UNKNOWN_CLASS_ID:
            raise ValidationError(f"{path}:{line_no}: id 0 is reserved for {UNKNOWN_LABEL!r}")
        if class_id < 0:
            raise ValidationError(f"{path}:{line_no}: class id must be positive")
        if label == UNKNOWN_LABEL:
            raise ValidationError(f"{path}:{line_no}: label {UNKNOWN_LABEL!r} is reserved")
        if label in vocab or class_id in vocab.values():
            raise ValidationError(f"{path}:{line_no}: duplicate label or id")
        vocab[label] = class_id
    return vocab


def save_vocabulary(vocab: dict[str, int], path: str | Path):
    lines = [f"{label}\t{class_id}" for label, class_id in sorted(vocab.items(), key=lambda kv: kv[1])]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_task_map(path: str | Path, vocab: dict[str, int]) -> dict[int, int]:
    """Read ``label <TAB> task_id`` lines into a class_id -> task_id map."""
    class_to_task: dict[int, int] = {}
    for line_no, row in _read_rows(path, n_cols=2):
        label, task_text = row
        if label not in vocab:
            raise ValidationError(f"{path}:{line_no}: label {label!r} not in vocabulary")
        try:
            task_id = int(task_text)
        except ValueError:
            raise ParseError(path, line_no, f"task id {task_text!r} is not an integer")
        if task_id < 1:
            raise ValidationError(f"{path}:{line_no}: task ids start at 1")
        class_to_task[vocab[label]] = task_id
    return class_to_task


def save_task_map(class_to_task: dict[int, int], vocab: dict[str, int], path: str | Path):
    label_of = {cid: label for label, cid in vocab.items()}
    lines = [f"{label_of[cid]}\t{task}" for cid, task in sorted(class_to_task.items())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_annotations(path: str | Path, vocab: dict[str, int],
                     clip_durations: dict[str, float] | None = None) -> list[ClipAnnotation]:
    """Parse an annotation TSV into one ClipAnnotation per distinct clip id.

    Clips appear in first-occurrence order; events keep file order. When
    `clip_durations` is missing an entry (or entirely absent) the clip
    duration is taken as the latest event offset.
    """
    events_by_clip: dict[str, list[EventLabel]] = {}
    for line_no, row in _read_rows(path, n_cols=4):
        clip_id, onset_text, offset_text, label = row
        try:
            onset, offset = float(onset_text), float(offset_text)
        except ValueError:
            raise ParseError(path, line_no, f"non-numeric onset/offset {onset_text!r}, {offset_text!r}")
        if label == UNKNOWN_LABEL:
            class_id = UNKNOWN_CLASS_ID
        elif label in vocab:
            class_id = vocab[label]
        else:
            raise ValidationError(f"{path}:{line_no}: label {label!r} not in vocabulary")
        if not 0 <= onset < offset:
            raise ValidationError(
                f"{path}:{line_no}: need 0 <= onset < offset, got {onset}, {offset}")
        events_by_clip.setdefault(clip_id, []).append(EventLabel(class_id, onset, offset))

    clips = []
    for clip_id, events in events_by_clip.items():
        duration = None if clip_durations is None else clip_durations.get(clip_id)
        if duration is None:
            duration = max(ev.offset for ev in events)
        clips.append(ClipAnnotation(clip_id, duration, events))
    return clips


def save_annotations(clips: list[ClipAnnotation], path: str | Path,
                     vocab: dict[str, int], scores: dict | None = None):
    """Write the 4-column TSV (5 columns with a score map for predictions)."""
    label_of = {cid: label for label, cid in vocab.items()}
    label_of[UNKNOWN_CLASS_ID] = UNKNOWN_LABEL
    lines = []
    for clip in clips:
        for ev in clip.events:
            row = f"{clip.clip_id}\t{ev.onset:.3f}\t{ev.offset:.3f}\t{label_of[ev.class_id]}"
            if scores is not None:
                row += f"\t{scores.get((clip.clip_id, ev), 0.0):.4f}"
            lines.append(row)
    text = "\n".join(lines)
    Path(path).write_text(text + ("\n" if text else ""), encoding="utf-8")


def _read_rows(path: str | Path, n_cols: int):
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) < n_cols:
                raise ParseError(path, line_no, f"expected {n_cols} tab-separated columns, got {len(parts)}")
            yield line_no, parts[:n_cols]
