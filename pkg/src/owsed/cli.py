"""Command-line entry points.

    owsed synth     --out DIR [--config FILE] [--seed N]
    owsed train     --config FILE [--out DIR] [--resume]
    owsed eval      --checkpoint PT --annotations TSV --audio-dir DIR \
                    --vocab TSV --out DIR [--config FILE]
    owsed infer     --checkpoint PT --audio PATH --vocab TSV --out TSV
    owsed visualize --predictions TSV --references TSV --clip-id ID --out PNG

Every failure prints a single ``E_CODE: message`` line to stderr and
exits nonzero. Config values can be overridden through OWSED_SECTION__KEY
environment variables.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .config import RunConfig, load_config, save_config
from .data.annotations import (UNKNOWN_CLASS_ID, UNKNOWN_LABEL, load_annotations,
                               load_vocabulary, save_annotations)
from .data.mel import compute_mel, load_waveform
from .errors import CheckpointError, DataError, OwsedError
from .evaluation import build_report, decode_predictions
from .model.detector import load_checkpoint
from .model.heads import predictions_from_outputs
from .openworld import FeatureCache, predict_clips, run_task_sequence
from .visualize import render_timeline


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except OwsedError as err:
        print(f"{err.code}: {_one_line(err)}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"E_IO: {_one_line(err)}", file=sys.stderr)
        return 1


def _one_line(err) -> str:
    return " ".join(str(err).split())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="owsed",
                                     description="Open-world sound event detection")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="YAML config (synth section is used)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, help="override config seed")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="run the open-world task sequence")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="run directory (default: <out_dir>/<run_name>)")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint in the run directory")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against annotations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--audio-dir", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="optional config for decode/collar settings")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("infer", help="decode events for raw audio")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--audio", required=True, help="WAV file or directory of WAVs")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="output prediction TSV")
    p.add_argument("--config", help="optional config for decode settings")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("visualize", help="draw reference vs predicted timelines")
    p.add_argument("--predictions", required=True)
    p.add_argument("--references", required=True)
    p.add_argument("--clip-id", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_visualize)
    return parser


def _load_run_config(path: str | None, seed: int | None = None) -> RunConfig:
    cfg = load_config(path) if path else RunConfig()
    if seed is not None:
        cfg.seed = seed
    cfg.validate()
    return cfg


def cmd_synth(args) -> int:
    from .data.synth import write_dataset

    cfg = _load_run_config(args.config, args.seed)
    out_dir = Path(args.out)
    paths = write_dataset(cfg.synth, cfg.seed, out_dir)

    # companion config wired to the generated dataset, ready for `owsed train`
    cfg.data.train_annotations = str(paths["train_annotations"])
    cfg.data.eval_annotations = str(paths["eval_annotations"])
    cfg.data.vocabulary = str(paths["vocabulary"])
    cfg.data.task_map = str(paths["task_map"])
    cfg.data.audio_dir = str(paths["audio_dir"])
    save_config(cfg, out_dir / "dataset_config.yaml")
    print(f"dataset written to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_run_config(args.config, args.seed)
    run_dir = Path(args.out) if args.out else Path(cfg.out_dir) / cfg.run_name
    run_dir.mkdir(parents=True, exist_ok=True)
    reports = run_task_sequence(cfg, run_dir, resume=args.resume)
    save_config(cfg, run_dir / "config.yaml")  # effective config, after class-count fill
    for task_id, report in enumerate(reports, start=1):
        print(f"task {task_id}: {json.dumps(report.to_dict())}")
    print(f"run directory: {run_dir}")
    return 0


def _load_model_and_vocab(checkpoint_path: str, vocab_path: str, cfg: RunConfig):
    """Load a checkpoint, adopting its training-time mel settings so the
    front end matches the model's input size."""
    model, payload = load_checkpoint(checkpoint_path)
    vocab = load_vocabulary(vocab_path)
    if len(vocab) != model.num_known_classes:
        raise CheckpointError(
            f"checkpoint knows {model.num_known_classes} classes but the vocabulary "
            f"defines {len(vocab)}")
    mel_dict = (payload.get("extra") or {}).get("mel_config")
    if mel_dict:
        from .config import MelConfig, dataclass_from_dict

        cfg.mel = dataclass_from_dict(MelConfig, mel_dict, "mel")
    if cfg.mel.n_mels != model.input_bins:
        raise CheckpointError(
            f"model expects {model.input_bins} mel bins but the config provides "
            f"{cfg.mel.n_mels}")
    model.eval()
    return model, vocab


def cmd_eval(args) -> int:
    cfg = _load_run_config(args.config)
    model, vocab = _load_model_and_vocab(args.checkpoint, args.vocab, cfg)

    cache = FeatureCache(args.audio_dir, cfg.mel)
    durations = {}
    clips = load_annotations(args.annotations, vocab)
    if not clips:
        raise DataError(f"no clips found in {args.annotations}")
    for clip in clips:
        durations[clip.clip_id] = cache.duration(clip.clip_id)
    clips = load_annotations(args.annotations, vocab, durations)

    predictions, scores = predict_clips(model, clips, cache, cfg.decode)
    reference = {c.clip_id: [e for e in c.events if e.class_id != UNKNOWN_CLASS_ID]
                 for c in clips}
    unknown_refs = {c.clip_id: [e for e in c.events if e.class_id == UNKNOWN_CLASS_ID]
                    for c in clips}
    unknown_refs = {cid: evs for cid, evs in unknown_refs.items() if evs}
    report = build_report(predictions, reference, unknown_refs, durations,
                          prev_classes=set(), cur_classes=set(vocab.values()),
                          collar=cfg.collar)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2),
                                          encoding="utf-8")
    _write_predictions(out_dir / "predictions.tsv", predictions, scores, vocab, cache)
    print(json.dumps(report.to_dict()))
    return 0


def _write_predictions(path, predictions, scores, vocab, cache):
    from .data.annotations import ClipAnnotation

    clips = [ClipAnnotation(cid, cache.duration(cid), evs)
             for cid, evs in sorted(predictions.items()) if evs]
    save_annotations(clips, path, vocab, scores)


def cmd_infer(args) -> int:
    cfg = _load_run_config(args.config)
    model, vocab = _load_model_and_vocab(args.checkpoint, args.vocab, cfg)

    audio = Path(args.audio)
    wavs = sorted(audio.glob("*.wav")) if audio.is_dir() else [audio]
    if not wavs:
        raise DataError(f"no WAV files under {audio}")

    label_of = {cid: label for label, cid in vocab.items()}
    label_of[UNKNOWN_CLASS_ID] = UNKNOWN_LABEL
    lines = []
    with torch.no_grad():
        for wav in wavs:
            waveform, sr = load_waveform(wav)
            duration = len(waveform) / sr
            mel = torch.from_numpy(compute_mel(waveform, sr, cfg.mel)).unsqueeze(0)
            outputs = model(mel)
            preds = predictions_from_outputs(outputs[-1], 0)
            for ev, score in decode_predictions(preds, duration, cfg.decode):
                lines.append(f"{wav.name}\t{ev.onset:.3f}\t{ev.offset:.3f}"
                             f"\t{label_of[ev.class_id]}\t{score:.4f}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    print(f"wrote {len(lines)} events to {out}")
    return 0


def cmd_visualize(args) -> int:
    out = render_timeline(args.predictions, args.references, args.clip_id, args.out)
    print(f"figure written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
