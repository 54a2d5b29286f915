"""Decoding query outputs into event lists and scoring them.

Event predictions are matched to references with a collar rule: onsets
must agree within a fixed tolerance and offsets within the larger of
that tolerance and a fraction of the reference duration. Counting uses
maximum-cardinality one-to-one matching, so reported TP counts equal the
exhaustive optimum on every instance.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .config import CollarConfig, DecodeConfig
from .data.annotations import UNKNOWN_CLASS_ID, ClipAnnotation, EventLabel
from .model.heads import EventPrediction

ScoredEvent = tuple[EventLabel, float]


# ---------------------------------------------------------------------------
# decoding

def decode_predictions(predictions: list[EventPrediction], duration: float,
                       config: DecodeConfig) -> list[ScoredEvent]:
    """Turn per-query predictions into a scored event list for one clip.

    A query emits its best known class when that class's final score
    clears the threshold; otherwise it emits "unknown" when the
    eventness alone clears it. Per-class 1D NMS prunes overlapping
    duplicates, and at most max_events_per_clip survive.
    """
    candidates: list[ScoredEvent] = []
    for pred in predictions:
        known = pred.final_scores[1:]
        if known.size:
            best = int(np.argmax(known))
            best_score = float(known[best])
        else:
            best, best_score = None, -1.0
        if best is not None and best_score > config.score_threshold:
            class_id, score = best + 1, best_score
        elif pred.eventness > config.score_threshold:
            class_id, score = UNKNOWN_CLASS_ID, float(pred.eventness)
        else:
            continue
        onset = max(0.0, (pred.center - pred.width / 2) * duration)
        offset = min(duration, (pred.center + pred.width / 2) * duration)
        if offset - onset <= 1e-6:
            continue
        candidates.append((EventLabel(class_id, onset, offset), score))

    kept: list[ScoredEvent] = []
    by_class: dict[int, list[ScoredEvent]] = defaultdict(list)
    for ev, score in candidates:
        by_class[ev.class_id].append((ev, score))
    for events in by_class.values():
        kept.extend(nms_1d(events, config.nms_iou))
    kept.sort(key=lambda es: -es[1])
    kept = kept[: config.max_events_per_clip]
    kept.sort(key=lambda es: (es[0].onset, es[0].class_id))
    return kept


def nms_1d(scored: list[ScoredEvent], iou_threshold: float) -> list[ScoredEvent]:
    """Greedy non-maximum suppression over intervals of one class."""
    order = sorted(scored, key=lambda es: -es[1])
    kept: list[ScoredEvent] = []
    for ev, score in order:
        if all(interval_iou(ev, other) <= iou_threshold for other, _ in kept):
            kept.append((ev, score))
    return kept


def interval_iou(a: EventLabel, b: EventLabel) -> float:
    inter = max(0.0, min(a.offset, b.offset) - max(a.onset, b.onset))
    union = a.duration + b.duration - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------------------
# collar matching

def collar_compatible(pred: EventLabel, ref: EventLabel, collar: CollarConfig) -> bool:
    offset_tol = max(collar.offset_collar, collar.offset_duration_ratio * ref.duration)
    return (abs(pred.onset - ref.onset) <= collar.onset_collar
            and abs(pred.offset - ref.offset) <= offset_tol)


def max_bipartite_matching(eligible: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-cardinality matching of a boolean (n_left, n_right) matrix
    via augmenting paths; left nodes are processed in order, so ties
    resolve deterministically."""
    n_left, n_right = eligible.shape
    match_of_right = [-1] * n_right

    def try_assign(left: int, visited: list[bool]) -> bool:
        for right in range(n_right):
            if eligible[left, right] and not visited[right]:
                visited[right] = True
                if match_of_right[right] == -1 or try_assign(match_of_right[right], visited):
                    match_of_right[right] = left
                    return True
        return False

    for left in range(n_left):
        try_assign(left, [False] * n_right)
    return [(left, right) for right, left in enumerate(match_of_right) if left != -1]


def _count_matches(preds: list[EventLabel], refs: list[EventLabel],
                   collar: CollarConfig) -> int:
    if not preds or not refs:
        return 0
    eligible = np.zeros((len(refs), len(preds)), dtype=bool)
    for i, ref in enumerate(refs):
        for j, pred in enumerate(preds):
            eligible[i, j] = collar_compatible(pred, ref, collar)
    return len(max_bipartite_matching(eligible))


# ---------------------------------------------------------------------------
# metrics

@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class F1Result:
    counts: dict[int, ClassCounts] = field(default_factory=dict)

    @property
    def per_class_f1(self) -> dict[int, float]:
        return {c: cc.f1 for c, cc in self.counts.items()}

    def macro_f1(self, classes=None) -> float:
        """Macro mean over classes present in references or predictions;
        optionally restricted to a class subset. Empty selection -> 0."""
        pool = [cc.f1 for c, cc in self.counts.items() if classes is None or c in classes]
        return float(np.mean(pool)) if pool else 0.0

    def macro_recall(self, classes=None) -> float:
        pool = [cc.recall for c, cc in self.counts.items() if classes is None or c in classes]
        return float(np.mean(pool)) if pool else 0.0


EventMap = dict[str, list[EventLabel]]


def event_based_f1(predicted: EventMap, reference: EventMap,
                   collar: CollarConfig) -> F1Result:
    """Per-class collar-matched event F1. Classes absent from both sides
    are excluded; empty-versus-empty clips contribute nothing."""
    result = F1Result()
    for clip_id in sorted(set(predicted) | set(reference)):
        preds_by_class = _group_by_class(predicted.get(clip_id, []))
        refs_by_class = _group_by_class(reference.get(clip_id, []))
        for class_id in set(preds_by_class) | set(refs_by_class):
            preds = preds_by_class.get(class_id, [])
            refs = refs_by_class.get(class_id, [])
            tp = _count_matches(preds, refs, collar)
            cc = result.counts.setdefault(class_id, ClassCounts())
            cc.tp += tp
            cc.fp += len(preds) - tp
            cc.fn += len(refs) - tp
    return result


def unknown_recall(predicted_unknowns: EventMap, reference_unknowns: EventMap,
                   collar: CollarConfig) -> tuple[float | None, dict[int, float]]:
    """Macro recall of unknown references, grouped by their true class.

    Every prediction carries the single unknown label, so any prediction
    may match any reference. In "per_class" mode each true class is
    matched independently against the clip's whole prediction pool; in
    "global" mode one maximum matching is computed per clip across all
    classes at once. Returns (macro, per_class); macro is None when
    there are no unknown references at all.
    """
    tp: dict[int, int] = defaultdict(int)
    total: dict[int, int] = defaultdict(int)
    for clip_id, refs in reference_unknowns.items():
        preds = predicted_unknowns.get(clip_id, [])
        refs_by_class = _group_by_class(refs)
        for class_id, class_refs in refs_by_class.items():
            total[class_id] += len(class_refs)
        if collar.unknown_matching == "per_class":
            for class_id, class_refs in refs_by_class.items():
                tp[class_id] += _count_matches(preds, class_refs, collar)
        else:
            ordered = sorted(refs, key=lambda ev: (ev.onset, ev.class_id))
            eligible = np.zeros((len(ordered), len(preds)), dtype=bool)
            for i, ref in enumerate(ordered):
                for j, pred in enumerate(preds):
                    eligible[i, j] = collar_compatible(pred, ref, collar)
            for ref_idx, _ in max_bipartite_matching(eligible):
                tp[ordered[ref_idx].class_id] += 1
    if not total:
        return None, {}
    per_class = {c: tp[c] / total[c] for c in total}
    return float(np.mean(list(per_class.values()))), per_class


def segment_based_f1(predicted: EventMap, reference: EventMap,
                     durations: dict[str, float], segment_length: float = 1.0) -> F1Result:
    """Fixed-grid segment activity F1: a class is active in a segment iff
    one of its events overlaps the segment by any amount."""
    if segment_length <= 0:
        raise ValueError("segment_length must be > 0")
    result = F1Result()
    for clip_id in sorted(set(predicted) | set(reference) | set(durations)):
        duration = durations.get(clip_id)
        if duration is None:
            events = predicted.get(clip_id, []) + reference.get(clip_id, [])
            duration = max((ev.offset for ev in events), default=0.0)
        n_segments = int(np.ceil(duration / segment_length)) if duration > 0 else 0
        pred_active = _active_segments(predicted.get(clip_id, []), n_segments, segment_length)
        ref_active = _active_segments(reference.get(clip_id, []), n_segments, segment_length)
        for class_id in set(pred_active) | set(ref_active):
            p = pred_active.get(class_id, set())
            r = ref_active.get(class_id, set())
            cc = result.counts.setdefault(class_id, ClassCounts())
            cc.tp += len(p & r)
            cc.fp += len(p - r)
            cc.fn += len(r - p)
    return result


def _active_segments(events: list[EventLabel], n_segments: int,
                     segment_length: float) -> dict[int, set[int]]:
    active: dict[int, set[int]] = defaultdict(set)
    for ev in events:
        for seg in range(n_segments):
            seg_start = seg * segment_length
            seg_end = seg_start + segment_length
            if ev.onset < seg_end and ev.offset > seg_start:
                active[ev.class_id].add(seg)
    return active


def tagging_f1(predicted: EventMap, reference: EventMap) -> F1Result:
    """Clip-level class-presence F1."""
    result = F1Result()
    for clip_id in sorted(set(predicted) | set(reference)):
        pred_tags = {ev.class_id for ev in predicted.get(clip_id, [])}
        ref_tags = {ev.class_id for ev in reference.get(clip_id, [])}
        for class_id in pred_tags | ref_tags:
            cc = result.counts.setdefault(class_id, ClassCounts())
            cc.tp += int(class_id in pred_tags and class_id in ref_tags)
            cc.fp += int(class_id in pred_tags and class_id not in ref_tags)
            cc.fn += int(class_id not in pred_tags and class_id in ref_tags)
    return result


def forgetting(f1_cur_prev_task: float, f1_prev_cur_task: float) -> float:
    """Drop on the previous task's classes after adapting to the new one,
    on the 0-100 scale. Quantized to 1e-6 so decimal-percent inputs
    subtract without float dust."""
    return round(f1_cur_prev_task - f1_prev_cur_task, 6)


def _group_by_class(events: list[EventLabel]) -> dict[int, list[EventLabel]]:
    grouped: dict[int, list[EventLabel]] = defaultdict(list)
    for ev in events:
        grouped[ev.class_id].append(ev)
    return grouped


# ---------------------------------------------------------------------------
# report assembly

@dataclass
class MetricsReport:
    """All values are fractions in [0, 1] (forgetting in [-1, 1]);
    serialization reports them multiplied by 100."""

    per_class_f1: dict[int, float] = field(default_factory=dict)
    macro_f1_prev_known: float = 0.0
    macro_f1_cur_known: float = 0.0
    macro_f1_both: float = 0.0
    u_recall: float | None = None
    u_recall_per_class: dict[int, float] = field(default_factory=dict)
    segment_f1: float = 0.0
    tagging_f1: float = 0.0
    forgetting: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        def pct(x):
            return None if x is None else round(100.0 * x, 4)

        return {
            "per_class_f1": {str(c): pct(v) for c, v in sorted(self.per_class_f1.items())},
            "f1_prev_known": pct(self.macro_f1_prev_known),
            "f1_cur_known": pct(self.macro_f1_cur_known),
            "f1_both": pct(self.macro_f1_both),
            "u_recall": pct(self.u_recall),
            "u_recall_per_class": {str(c): pct(v) for c, v in sorted(self.u_recall_per_class.items())},
            "segment_f1": pct(self.segment_f1),
            "tagging_f1": pct(self.tagging_f1),
            "forgetting": {k: pct(v) for k, v in self.forgetting.items()},
        }


def build_report(predicted: EventMap, reference_known: EventMap,
                 reference_unknowns: EventMap, durations: dict[str, float],
                 prev_classes, cur_classes, collar: CollarConfig,
                 forgetting_map: dict[str, float] | None = None) -> MetricsReport:
    """Score one task's predictions.

    `predicted` holds every decoded event; unknown-labeled ones are
    scored against `reference_unknowns` (true future-class ids) and
    known-labeled ones against `reference_known`.
    """
    pred_known = {cid: [e for e in evs if e.class_id != UNKNOWN_CLASS_ID]
                  for cid, evs in predicted.items()}
    pred_unknown = {cid: [e for e in evs if e.class_id == UNKNOWN_CLASS_ID]
                    for cid, evs in predicted.items()}
    ref_known = {cid: [e for e in evs if e.class_id != UNKNOWN_CLASS_ID]
                 for cid, evs in reference_known.items()}

    event_f1 = event_based_f1(pred_known, ref_known, collar)
    u_macro, u_per_class = unknown_recall(pred_unknown, reference_unknowns, collar)
    seg = segment_based_f1(pred_known, ref_known, durations)
    tag = tagging_f1(pred_known, ref_known)

    prev_classes = set(prev_classes)
    cur_classes = set(cur_classes)
    return MetricsReport(
        per_class_f1=event_f1.per_class_f1,
        macro_f1_prev_known=event_f1.macro_f1(prev_classes),
        macro_f1_cur_known=event_f1.macro_f1(cur_classes),
        macro_f1_both=event_f1.macro_f1(prev_classes | cur_classes),
        u_recall=u_macro,
        u_recall_per_class=u_per_class,
        segment_f1=seg.macro_f1(),
        tagging_f1=tag.macro_f1(),
        forgetting=dict(forgetting_map or {}),
    )


def random_unknown_baseline(predicted_unknowns: EventMap, durations: dict[str, float],
                            rng: np.random.Generator,
                            width_range: tuple[float, float] = (0.05, 0.5)) -> EventMap:
    """Count-matched uniform-random unknown predictor.

    For each clip, emits as many unknown events as the model did, with
    centers uniform over the clip and normalized widths uniform over
    `width_range`; used as the chance floor for unknown recall.
    """
    baseline: EventMap = {}
    for clip_id, events in predicted_unknowns.items():
        duration = durations[clip_id]
        fakes = []
        for _ in events:
            width = rng.uniform(*width_range) * duration
            center = rng.uniform(0.0, 1.0) * duration
            onset = max(0.0, center - width / 2)
            offset = min(duration, center + width / 2)
            if offset - onset > 1e-6:
                fakes.append(EventLabel(UNKNOWN_CLASS_ID, onset, offset))
        baseline[clip_id] = fakes
    return baseline
