"""Open-world task splitting.

For task t, classes from tasks <= t are "known" and classes from later
tasks form the unknown pool. Training targets at task t keep only the
classes introduced at t (earlier classes re-enter through the exemplar
buffer); evaluation clips keep every event, with future-class events
relabeled to the unknown id 0. The original future-class ids are kept in
a side table so unknown recall can be grouped by true class.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..errors import ValidationError
from .annotations import UNKNOWN_CLASS_ID, ClipAnnotation, EventLabel


@dataclass
class TaskSplit:
    task_id: int  # 1-based
    known_classes: tuple[int, ...]  # union of classes introduced at tasks <= task_id
    current_classes: tuple[int, ...]  # classes introduced at exactly task_id
    future_classes: tuple[int, ...]  # unknown pool at this task
    train_clips: list[ClipAnnotation] = field(default_factory=list)
    eval_clips: list[ClipAnnotation] = field(default_factory=list)
    # clip_id -> future-class events with their true ids (relabeled 0 in eval_clips)
    eval_unknown_truth: dict[str, list[EventLabel]] = field(default_factory=dict)

    def __post_init__(self):
        if self.task_id < 1:
            raise ValidationError("task ids are 1-based")
        if set(self.known_classes) & set(self.future_classes):
            raise ValidationError("known and future class sets overlap")


def make_task_splits(train_annotations: list[ClipAnnotation],
                     eval_annotations: list[ClipAnnotation],
                     class_to_task: dict[int, int],
                     n_tasks: int) -> list[TaskSplit]:
    """Partition the class set into an ordered task sequence.

    A clip enters task t's training set iff it contains at least one
    event of a class introduced at t; its target list is restricted to
    those classes. Every eval clip is scored at every task.
    """
    if n_tasks < 1:
        raise ValidationError("need at least one task")
    for task_id in class_to_task.values():
        if not 1 <= task_id <= n_tasks:
            raise ValidationError(f"task id {task_id} outside 1..{n_tasks}")

    all_classes = _collect_classes(train_annotations) | _collect_classes(eval_annotations)
    unassigned = all_classes - set(class_to_task) - {UNKNOWN_CLASS_ID}
    if unassigned:
        raise ValidationError(f"classes {sorted(unassigned)} are assigned to no task")

    introduced: dict[int, list[int]] = {t: [] for t in range(1, n_tasks + 1)}
    for class_id, task_id in sorted(class_to_task.items()):
        introduced[task_id].append(class_id)

    splits = []
    known: list[int] = []
    for task_id in range(1, n_tasks + 1):
        current = introduced[task_id]
        known = known + current
        future = [c for c in sorted(class_to_task) if class_to_task[c] > task_id]

        train_clips = []
        for clip in train_annotations:
            kept = [ev for ev in clip.events if ev.class_id in current]
            if kept:
                train_clips.append(clip.with_events(kept))

        eval_clips = []
        unknown_truth: dict[str, list[EventLabel]] = {}
        known_set = set(known)
        for clip in eval_annotations:
            relabeled = []
            for ev in clip.events:
                if ev.class_id in known_set:
                    relabeled.append(ev)
                else:
                    relabeled.append(replace(ev, class_id=UNKNOWN_CLASS_ID))
                    unknown_truth.setdefault(clip.clip_id, []).append(ev)
            eval_clips.append(clip.with_events(relabeled))

        splits.append(TaskSplit(
            task_id=task_id,
            known_classes=tuple(known),
            current_classes=tuple(current),
            future_classes=tuple(future),
            train_clips=train_clips,
            eval_clips=eval_clips,
            eval_unknown_truth=unknown_truth,
        ))
    return splits


def _collect_classes(clips: list[ClipAnnotation]) -> set[int]:
    classes: set[int] = set()
    for clip in clips:
        classes |= clip.classes()
    return classes
