"""Task-sequenced open-world training.

Pipeline per task t (run directory: runs/<name>/task<t>/):
  1. main training on the clips whose classes were introduced at t,
     mixed with replayed exemplar clips of earlier classes;
  2. exemplar-buffer update for the new classes;
  3. evaluation and metrics.json;
  4. oracle promotion of the next task's labels, then an incremental
     update: the classifier grows to the enlarged class set and the
     model fine-tunes on old exemplars plus new-class exemplars at a
     reduced learning rate.

All randomness flows through one checkpointed numpy generator plus the
global torch RNG, so a run can resume mid-task and finish bit-identical
to an uninterrupted one.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .config import RunConfig, StageSchedule
from .data.annotations import (ClipAnnotation, load_annotations, load_task_map,
                               load_vocabulary)
from .data.mel import compute_mel, load_waveform
from .data.splits import TaskSplit, make_task_splits
from .errors import DataError, TrainingDivergedError, ValidationError
from .evaluation import MetricsReport, build_report, decode_predictions, forgetting
from .losses import (cls_loss, disentangle_loss, diversity_loss, eventness_loss,
                     loc_loss, total_loss)
from .matching import MatchAssignment, hungarian_match, semi_match, targets_from_clip
from .model.detector import OpenWorldDetector, load_checkpoint, save_checkpoint
from .model.heads import final_scores, predictions_from_outputs

log = logging.getLogger(__name__)

PHASE_ORDER = {"finetune": 0, "main": 1}


class FeatureCache:
    """Lazily computed, memoized log-mel features and clip durations.

    Pure with respect to the audio files; safe for any number of
    readers once populated.
    """

    def __init__(self, audio_dir: str | Path, mel_config):
        self.audio_dir = Path(audio_dir)
        self.mel_config = mel_config
        self._mels: dict[str, torch.Tensor] = {}
        self._durations: dict[str, float] = {}

    def mel(self, clip_id: str) -> torch.Tensor:
        if clip_id not in self._mels:
            waveform, sr = load_waveform(self.audio_dir / clip_id)
            self._durations[clip_id] = len(waveform) / sr
            feats = compute_mel(waveform, sr, self.mel_config)
            self._mels[clip_id] = torch.from_numpy(feats)
        return self._mels[clip_id]

    def duration(self, clip_id: str) -> float:
        if clip_id not in self._durations:
            self.mel(clip_id)
        return self._durations[clip_id]


@dataclass
class ExemplarBuffer:
    """Balanced per-class store of whole exemplar clips.

    A class with at least `capacity_per_class` available clips keeps
    exactly that many; rarer classes keep everything available.
    """

    capacity_per_class: int
    per_class: dict[int, list[ClipAnnotation]] = field(default_factory=dict)

    def add_task(self, train_clips: list[ClipAnnotation], class_ids, seed: int):
        """Uniformly sample exemplars for newly introduced classes;
        existing classes are untouched."""
        for class_id in sorted(class_ids):
            candidates = [clip for clip in train_clips if class_id in clip.classes()]
            self.per_class[class_id] = _sample_exemplars(
                candidates, self.capacity_per_class, seed, class_id)

    def replay_clips(self) -> list[ClipAnnotation]:
        return merge_clips(clip for clips in self.per_class.values() for clip in clips)

    def classes(self) -> set[int]:
        return set(self.per_class)

    def is_empty(self) -> bool:
        return not any(self.per_class.values())

    def state(self) -> dict:
        return {c: list(clips) for c, clips in self.per_class.items()}

    def load_state(self, state: dict):
        self.per_class = {int(c): list(clips) for c, clips in state.items()}


def _sample_exemplars(candidates, capacity, seed, class_id):
    take = min(capacity, len(candidates))
    rng = np.random.default_rng([seed, class_id])
    idx = rng.choice(len(candidates), size=take, replace=False)
    return [candidates[i] for i in sorted(idx)]


def select_exemplars(clips: list[ClipAnnotation], class_ids, capacity: int,
                     seed: int) -> list[ClipAnnotation]:
    """Per-class uniform exemplar selection over freshly labeled data."""
    chosen: list[ClipAnnotation] = []
    for class_id in sorted(class_ids):
        candidates = [clip for clip in clips if class_id in clip.classes()]
        chosen.extend(_sample_exemplars(candidates, capacity, seed, class_id))
    return merge_clips(chosen)


def merge_clips(clips) -> list[ClipAnnotation]:
    """Deduplicate by clip id, taking the union of event sets."""
    merged: dict[str, ClipAnnotation] = {}
    for clip in clips:
        if clip.clip_id not in merged:
            merged[clip.clip_id] = clip
        else:
            existing = merged[clip.clip_id]
            events = {(ev.class_id, ev.onset, ev.offset) for ev in existing.events}
            extra = [ev for ev in clip.events
                     if (ev.class_id, ev.onset, ev.offset) not in events]
            if extra:
                merged[clip.clip_id] = existing.with_events(
                    sorted(existing.events + extra, key=lambda e: (e.onset, e.class_id)))
    return list(merged.values())


# ---------------------------------------------------------------------------
# single-phase training loop

@dataclass
class TaskRunState:
    task_id: int
    phase: str  # "main" or "finetune"
    epochs_done: int
    stage: int
    history: list[dict] = field(default_factory=list)


def fit(model: OpenWorldDetector, clips: list[ClipAnnotation], cache: FeatureCache,
        cfg: RunConfig, schedule: StageSchedule, lr: float, stream_rng: np.random.Generator,
        task_id: int, phase: str, task_dir: Path | None = None,
        start_epoch: int = 0, optimizer_state: dict | None = None,
        buffer: "ExemplarBuffer | None" = None) -> TaskRunState:
    """Run one training phase over `clips` with per-epoch checkpoints.

    The optimizer is fresh unless a saved state is provided (resume).
    Every step appends a JSON record to <task_dir>/logs.jsonl.
    """
    if not clips:
        raise DataError(f"task {task_id} {phase}: no training clips")
    optimizer = torch.optim.AdamW(model.parameters(), lr=lr,
                                  weight_decay=cfg.train.weight_decay)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)

    state = TaskRunState(task_id=task_id, phase=phase, epochs_done=start_epoch,
                         stage=2 if schedule.is_stage2(start_epoch) else 1)
    log_fh = None
    if task_dir is not None:
        task_dir.mkdir(parents=True, exist_ok=True)
        log_fh = (task_dir / "logs.jsonl").open("a", encoding="utf-8")

    try:
        model.train()
        for epoch in range(start_epoch, schedule.total_epochs):
            for step, batch in enumerate(_epoch_batches(clips, cache, cfg.train.batch_size,
                                                        stream_rng)):
                batch_id = f"task{task_id}/{phase}/epoch{epoch}/step{step}"
                record = _train_step(model, batch, cache, cfg, schedule, epoch,
                                     optimizer, batch_id)
                record.update({"task": task_id, "phase": phase, "epoch": epoch, "step": step,
                               "batch_id": batch_id})
                state.history.append(record)
                if log_fh is not None:
                    log_fh.write(json.dumps(record) + "\n")
            if log_fh is not None:
                log_fh.flush()
            state.epochs_done = epoch + 1
            state.stage = 2 if schedule.is_stage2(epoch) else 1
            if task_dir is not None:
                save_checkpoint(task_dir / "checkpoints" / "last.pt", model,
                                extra=_resume_state(state, optimizer, stream_rng, buffer,
                                                    cfg.mel))
    finally:
        if log_fh is not None:
            log_fh.close()
    return state


def _resume_state(state: TaskRunState, optimizer, stream_rng, buffer,
                  mel_config=None) -> dict:
    return {
        "task_id": state.task_id,
        "phase": state.phase,
        "epochs_done": state.epochs_done,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "numpy_rng": stream_rng.bit_generator.state,
        "torch_rng": torch.get_rng_state(),
        "buffer": buffer.state() if buffer is not None else {},
        "mel_config": dataclasses.asdict(mel_config) if mel_config is not None else None,
    }


def _epoch_batches(clips, cache: FeatureCache, batch_size: int,
                   rng: np.random.Generator):
    """Shuffled batches of clips with identical mel shapes."""
    order = rng.permutation(len(clips))
    groups: dict[tuple, list[ClipAnnotation]] = {}
    for idx in order:
        clip = clips[int(idx)]
        shape = tuple(cache.mel(clip.clip_id).shape)
        groups.setdefault(shape, []).append(clip)
    for group in groups.values():
        for lo in range(0, len(group), batch_size):
            yield group[lo:lo + batch_size]


def _train_step(model, batch, cache, cfg: RunConfig, schedule, epoch, optimizer,
                batch_id) -> dict:
    mels = torch.stack([cache.mel(clip.clip_id) for clip in batch])
    outputs = model(mels)
    final = outputs[-1]
    if not (torch.isfinite(final["class_logits"]).all()
            and torch.isfinite(final["boxes"]).all()
            and torch.isfinite(final["eventness"]).all()):
        raise TrainingDivergedError(batch_id, "non-finite model outputs")
    targets = [targets_from_clip(clip) for clip in batch]

    components, aux = _batch_losses(outputs, targets, model.gaussian, cfg)
    total, breakdown = total_loss(components, cfg.losses, epoch, schedule)
    if aux is not None:
        total = total + aux
        breakdown["aux"] = float(aux.detach())
    if not torch.isfinite(total):
        raise TrainingDivergedError(batch_id, f"non-finite loss, breakdown={breakdown}")

    optimizer.zero_grad()
    total.backward()
    if cfg.train.grad_clip_norm > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.train.grad_clip_norm)
    optimizer.step()
    # the class-agnostic Gaussian models the population of ALL queries;
    # the eventness objective then pulls matched ones toward its center
    model.gaussian.update(final["q_agn"].detach().reshape(-1, final["q_agn"].shape[-1]))
    breakdown["total_with_aux"] = float(total.detach())
    return breakdown


def _layer_scores(layer: dict) -> torch.Tensor:
    with torch.no_grad():
        probs = F.softmax(layer["class_logits"], dim=-1)
        return final_scores(probs, layer["eventness"])


def _batch_losses(outputs: list[dict], targets, gaussian, cfg: RunConfig):
    """Final-layer losses (with one-to-many adoption) plus one-to-one
    auxiliary losses on earlier decoder layers.

    Returns (components, auxiliary total or None).
    """
    final = outputs[-1]
    batch = len(targets)
    zero = final["q"].sum() * 0.0
    cls_total, loc_total, div_total = zero, zero, zero
    matched_agn = []
    scores = _layer_scores(final)

    for b in range(batch):
        boxes = final["boxes"][b].detach()
        pairs = hungarian_match(scores[b], boxes, targets[b], cfg.cost_weights)
        assignment = semi_match(scores[b], boxes, targets[b], pairs, cfg.thresholds)
        cls_total = cls_total + cls_loss(final["class_logits"][b], assignment,
                                         targets[b].class_ids, cfg.losses.no_event_weight)
        loc_total = loc_total + loc_loss(final["boxes"][b], assignment,
                                         targets[b].boxes, cfg.losses)
        if assignment.matched:
            q_idx = torch.tensor([q for q, _ in assignment.matched])
            matched_agn.append(final["q_agn"][b, q_idx])
        if len(assignment.unmatched) >= 2:
            u_idx = torch.tensor(sorted(assignment.unmatched))
            div_total = div_total + diversity_loss(final["q"][b, u_idx])

    matched_cat = (torch.cat(matched_agn) if matched_agn
                   else final["q_agn"].new_zeros(0, final["q_agn"].shape[-1]))
    components = {
        "cls": cls_total / batch,
        "loc": loc_total / batch,
        "eventness": eventness_loss(matched_cat, gaussian),
        "disentangle": disentangle_loss(final["q_agn"], final["q_spec"]),
        "diversity": div_total / batch,
    }
    aux = None
    if cfg.model.aux_loss and len(outputs) > 1:
        aux = _aux_losses(outputs[:-1], targets, gaussian, cfg)
    return components, aux


def _aux_losses(aux_outputs, targets, gaussian, cfg: RunConfig):
    """One-to-one supervision on intermediate decoder layers (no
    adoption, no diversity term)."""
    total = None
    batch = len(targets)
    for layer in aux_outputs:
        scores = _layer_scores(layer)
        cls_total, loc_total = 0.0, 0.0
        matched_agn = []
        for b, target in enumerate(targets):
            boxes = layer["boxes"][b].detach()
            pairs = hungarian_match(scores[b], boxes, target, cfg.cost_weights)
            unmatched = set(range(layer["boxes"].shape[1])) - {q for q, _ in pairs}
            assignment = MatchAssignment(fully_matched=pairs, semi_matched=[],
                                         unmatched=unmatched)
            cls_total = cls_total + cls_loss(layer["class_logits"][b], assignment,
                                             target.class_ids, cfg.losses.no_event_weight)
            loc_total = loc_total + loc_loss(layer["boxes"][b], assignment,
                                             target.boxes, cfg.losses)
            if pairs:
                q_idx = torch.tensor([q for q, _ in pairs])
                matched_agn.append(layer["q_agn"][b, q_idx])
        layer_total = cls_total / batch + loc_total / batch
        layer_total = layer_total + cfg.losses.lambda_dis * disentangle_loss(
            layer["q_agn"], layer["q_spec"])
        if matched_agn:
            layer_total = layer_total + cfg.losses.lambda_e * eventness_loss(
                torch.cat(matched_agn), gaussian)
        total = layer_total if total is None else total + layer_total
    return total


# ---------------------------------------------------------------------------
# task-level operations

def train_task(model: OpenWorldDetector, task: TaskSplit, buffer: ExemplarBuffer,
               cache: FeatureCache, cfg: RunConfig, stream_rng: np.random.Generator,
               task_dir: Path | None = None, start_epoch: int = 0,
               optimizer_state: dict | None = None) -> TaskRunState:
    """Main training for one task: current-task clips plus replayed
    exemplars of earlier classes."""
    if not task.train_clips:
        raise DataError(f"task {task.task_id}: no training clips")
    clips = merge_clips(list(task.train_clips) + buffer.replay_clips())
    return fit(model, clips, cache, cfg, cfg.schedule, cfg.train.lr, stream_rng,
               task.task_id, "main", task_dir, start_epoch, optimizer_state, buffer)


def incremental_update(model: OpenWorldDetector, buffer: ExemplarBuffer,
                       new_task_exemplars: list[ClipAnnotation], cfg: RunConfig,
                       cache: FeatureCache, stream_rng: np.random.Generator,
                       onboard_task_id: int, n_new_classes: int,
                       task_dir: Path | None = None, start_epoch: int = 0,
                       optimizer_state: dict | None = None,
                       head_already_extended: bool = False) -> TaskRunState:
    """Onboard the next task's classes: grow the classifier (new logit
    rows zero-initialized, prior rows untouched) and fine-tune on the
    balanced union of old exemplars and new-class exemplars at a
    reduced learning rate with a fresh optimizer."""
    if onboard_task_id > 1 and buffer.is_empty():
        raise DataError(f"cannot onboard task {onboard_task_id} with an empty exemplar buffer")
    if not head_already_extended:
        model.extend_classes(n_new_classes)
    clips = merge_clips(buffer.replay_clips() + list(new_task_exemplars))
    lr = cfg.train.lr * cfg.train.finetune_lr_factor
    return fit(model, clips, cache, cfg, cfg.train.finetune, lr, stream_rng,
               onboard_task_id, "finetune", task_dir, start_epoch, optimizer_state, buffer)


def oracle_promote(tasks: list[TaskSplit], t: int,
                   unknown_predictions: dict | None = None) -> tuple[list[ClipAnnotation], list[dict]]:
    """Reveal task t+1's labeled training clips (the simulated human
    oracle) plus a diagnostic list of eval-time unknown predictions that
    temporally overlap references of the newly revealed classes."""
    if t >= len(tasks):
        raise ValidationError(f"task {t} is the last task; nothing to promote")
    current = tasks[t - 1]
    revealed = tasks[t]
    diagnostics = []
    if unknown_predictions:
        new_classes = set(revealed.current_classes)
        for clip_id, preds in sorted(unknown_predictions.items()):
            truth = [ev for ev in current.eval_unknown_truth.get(clip_id, [])
                     if ev.class_id in new_classes]
            for pred in preds:
                for ref in truth:
                    if pred.onset < ref.offset and ref.onset < pred.offset:
                        diagnostics.append({
                            "clip_id": clip_id,
                            "predicted": [round(pred.onset, 3), round(pred.offset, 3)],
                            "revealed_class": ref.class_id,
                            "reference": [round(ref.onset, 3), round(ref.offset, 3)],
                        })
    return list(revealed.train_clips), diagnostics


@torch.no_grad()
def predict_clips(model: OpenWorldDetector, clips: list[ClipAnnotation],
                  cache: FeatureCache, decode_cfg) -> tuple[dict, dict]:
    """Decode event lists for a set of clips.

    Returns (events by clip id, score map keyed by (clip_id, event)).
    """
    was_training = model.training
    model.eval()
    events: dict[str, list] = {}
    scores: dict = {}
    groups: dict[tuple, list[ClipAnnotation]] = {}
    for clip in clips:
        groups.setdefault(tuple(cache.mel(clip.clip_id).shape), []).append(clip)
    for group in groups.values():
        for lo in range(0, len(group), 16):
            chunk = group[lo:lo + 16]
            mels = torch.stack([cache.mel(c.clip_id) for c in chunk])
            outputs = model(mels)
            for b, clip in enumerate(chunk):
                preds = predictions_from_outputs(outputs[-1], b)
                decoded = decode_predictions(preds, cache.duration(clip.clip_id), decode_cfg)
                events[clip.clip_id] = [ev for ev, _ in decoded]
                for ev, score in decoded:
                    scores[(clip.clip_id, ev)] = score
    model.train(was_training)
    return events, scores


# ---------------------------------------------------------------------------
# the full task sequence

def load_workspace(cfg: RunConfig):
    """Resolve annotations, vocabulary, task map, and splits from config paths."""
    data = cfg.data
    for name in ("train_annotations", "eval_annotations", "vocabulary", "task_map", "audio_dir"):
        path = getattr(data, name)
        if not path or not Path(path).exists():
            raise DataError(f"data.{name} missing or not found: {path!r}")
    vocab = load_vocabulary(data.vocabulary)
    class_to_task = load_task_map(data.task_map, vocab)
    missing = set(vocab.values()) - set(class_to_task)
    if missing:
        raise ValidationError(f"classes {sorted(missing)} are assigned to no task")
    cache = FeatureCache(data.audio_dir, cfg.mel)
    durations = {}
    for path in (data.train_annotations, data.eval_annotations):
        for clip_id in _clip_ids_in(path):
            durations[clip_id] = cache.duration(clip_id)
    train = load_annotations(data.train_annotations, vocab, durations)
    evaluation = load_annotations(data.eval_annotations, vocab, durations)
    n_tasks = max(class_to_task.values())
    splits = make_task_splits(train, evaluation, class_to_task, n_tasks)
    _check_contiguous_tasks(splits)
    return vocab, splits, cache


def _clip_ids_in(path):
    ids = []
    seen = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            clip_id = line.split("\t", 1)[0]
            if clip_id not in seen:
                seen.add(clip_id)
                ids.append(clip_id)
    return ids


def _check_contiguous_tasks(splits: list[TaskSplit]):
    # classifier logits are indexed directly by class id, so tasks must
    # introduce ids 1..C in order
    expected = 1
    for split in splits:
        for class_id in sorted(split.current_classes):
            if class_id != expected:
                raise ValidationError(
                    "task splits must introduce contiguous class ids in task order; "
                    f"task {split.task_id} introduces {sorted(split.current_classes)}, "
                    f"expected next id {expected}")
            expected += 1


def run_task_sequence(cfg: RunConfig, run_dir: str | Path,
                      resume: bool = False) -> list[MetricsReport]:
    """Execute the whole open-world protocol and write per-task artifacts."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    vocab, splits, cache = load_workspace(cfg)

    torch.manual_seed(cfg.seed)
    stream_rng = np.random.default_rng(cfg.seed)
    buffer = ExemplarBuffer(cfg.replay.exemplars_per_class)

    resume_at = None
    if resume:
        model, resume_at, buffer, stream_rng = _restore_pipeline(run_dir, cfg, splits)
    else:
        model_cfg = cfg.model
        model_cfg.num_known_classes = len(splits[0].known_classes)
        mel_bins = cfg.mel.n_mels
        model = OpenWorldDetector(model_cfg, mel_bins)

    reports: list[MetricsReport] = []
    prev_cur_f1: float | None = None
    for i, task in enumerate(splits):
        task_dir = run_dir / f"task{task.task_id}"

        if resume_at is not None and task.task_id < resume_at["task_id"]:
            # completed earlier; replay the buffer bookkeeping and reload metrics
            buffer.add_task(task.train_clips, task.current_classes, cfg.seed)
            reports.append(_reload_report(task_dir))
            prev_cur_f1 = reports[-1].macro_f1_cur_known
            continue

        if resume_at is not None and resume_at["task_id"] == task.task_id \
                and resume_at["phase"] == "finetune":
            # interrupted while onboarding this task: finish the fine-tune
            # (head growth happened before the checkpoint), then train fresh
            exemplars = select_exemplars(list(task.train_clips), task.current_classes,
                                         cfg.replay.exemplars_per_class, cfg.seed)
            incremental_update(model, buffer, exemplars, cfg, cache, stream_rng,
                               onboard_task_id=task.task_id,
                               n_new_classes=len(task.current_classes),
                               task_dir=task_dir,
                               start_epoch=resume_at["epochs_done"],
                               optimizer_state=resume_at["optimizer"],
                               head_already_extended=True)
            resume_at = None

        if resume_at is not None and resume_at["task_id"] == task.task_id \
                and resume_at["phase"] == "main":
            train_task(model, task, buffer, cache, cfg, stream_rng, task_dir,
                       start_epoch=resume_at["epochs_done"],
                       optimizer_state=resume_at["optimizer"])
            resume_at = None
        else:
            train_task(model, task, buffer, cache, cfg, stream_rng, task_dir)

        buffer.add_task(task.train_clips, task.current_classes, cfg.seed)
        final_state = TaskRunState(task.task_id, "done", cfg.schedule.total_epochs, 2)
        save_checkpoint(task_dir / "checkpoints" / "final.pt", model,
                        extra=_resume_state(final_state, None, stream_rng, buffer, cfg.mel))

        report, predictions = evaluate_task(model, task, cache, cfg, prev_cur_f1)
        reports.append(report)
        _write_metrics(task_dir, report)
        prev_cur_f1 = report.macro_f1_cur_known

        if i + 1 < len(splits):
            unknown_preds = {cid: [ev for ev in evs if ev.class_id == 0]
                             for cid, evs in predictions.items()}
            revealed, diagnostics = oracle_promote(splits, task.task_id, unknown_preds)
            (task_dir / "promotion_diagnostics.json").write_text(
                json.dumps(diagnostics, indent=2), encoding="utf-8")
            next_task = splits[i + 1]
            exemplars = select_exemplars(revealed, next_task.current_classes,
                                         cfg.replay.exemplars_per_class, cfg.seed)
            incremental_update(model, buffer, exemplars, cfg, cache, stream_rng,
                               onboard_task_id=next_task.task_id,
                               n_new_classes=len(next_task.current_classes),
                               task_dir=run_dir / f"task{next_task.task_id}")
    return reports


def evaluate_task(model, task: TaskSplit, cache: FeatureCache, cfg: RunConfig,
                  prev_cur_f1: float | None):
    """Score one task's eval clips; forgetting compares the previous
    task's current-known F1 with this task's previous-known F1."""
    predictions, _ = predict_clips(model, task.eval_clips, cache, cfg.decode)
    reference = {clip.clip_id: list(clip.events) for clip in task.eval_clips}
    durations = {clip.clip_id: cache.duration(clip.clip_id) for clip in task.eval_clips}
    prev_classes = set(task.known_classes) - set(task.current_classes)
    forgetting_map = {}
    report = build_report(predictions, reference, task.eval_unknown_truth, durations,
                          prev_classes, task.current_classes, cfg.collar)
    if prev_cur_f1 is not None and prev_classes:
        drop = forgetting(100.0 * prev_cur_f1, 100.0 * report.macro_f1_prev_known)
        forgetting_map[f"{task.task_id - 1}->{task.task_id}"] = drop / 100.0
    report.forgetting = forgetting_map
    return report, predictions


def _write_metrics(task_dir: Path, report: MetricsReport):
    task_dir.mkdir(parents=True, exist_ok=True)
    (task_dir / "metrics.json").write_text(
        json.dumps(report.to_dict(), indent=2), encoding="utf-8")


def _reload_report(task_dir: Path) -> MetricsReport:
    raw = json.loads((task_dir / "metrics.json").read_text(encoding="utf-8"))

    def frac(x):
        return None if x is None else x / 100.0

    return MetricsReport(
        per_class_f1={int(c): frac(v) for c, v in raw["per_class_f1"].items()},
        macro_f1_prev_known=frac(raw["f1_prev_known"]),
        macro_f1_cur_known=frac(raw["f1_cur_known"]),
        macro_f1_both=frac(raw["f1_both"]),
        u_recall=frac(raw["u_recall"]),
        u_recall_per_class={int(c): frac(v) for c, v in raw["u_recall_per_class"].items()},
        segment_f1=frac(raw["segment_f1"]),
        tagging_f1=frac(raw["tagging_f1"]),
        forgetting={k: frac(v) for k, v in raw["forgetting"].items()},
    )


def _position_key(extra: dict) -> tuple:
    return (extra["task_id"], PHASE_ORDER.get(extra["phase"], 2), extra["epochs_done"])


def _restore_pipeline(run_dir: Path, cfg: RunConfig, splits):
    """Locate the latest per-epoch checkpoint and restore model, buffer,
    and RNG streams so training continues exactly where it stopped."""
    candidates = sorted(run_dir.glob("task*/checkpoints/last.pt"))
    if not candidates:
        raise DataError(f"no checkpoint to resume from under {run_dir}")
    latest, latest_key = None, None
    for path in candidates:
        _, payload = load_checkpoint(path)
        key = _position_key(payload["extra"])
        if latest_key is None or key > latest_key:
            latest, latest_key = path, key
    model, payload = load_checkpoint(latest)
    extra = payload["extra"]
    buffer = ExemplarBuffer(cfg.replay.exemplars_per_class)
    buffer.load_state(extra["buffer"])
    stream_rng = np.random.default_rng(cfg.seed)
    stream_rng.bit_generator.state = extra["numpy_rng"]
    torch.set_rng_state(torch.as_tensor(extra["torch_rng"], dtype=torch.uint8))
    log.info("resuming at task %s phase %s epoch %s", extra["task_id"], extra["phase"],
             extra["epochs_done"])
    return model, extra, buffer, stream_rng
