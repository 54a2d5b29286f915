from .annotations import (UNKNOWN_CLASS_ID, UNKNOWN_LABEL, ClipAnnotation,
                          EventLabel, load_annotations, load_task_map,
                          load_vocabulary, save_annotations, save_task_map,
                          save_vocabulary)
from .mel import FeatureSequence, compute_mel, load_waveform, save_waveform
from .splits import TaskSplit, make_task_splits
from .synth import synth_generate, synth_task_map, synth_vocabulary, write_dataset

__all__ = [
    "UNKNOWN_CLASS_ID", "UNKNOWN_LABEL", "ClipAnnotation", "EventLabel",
    "load_annotations", "load_task_map", "load_vocabulary",
    "save_annotations", "save_task_map", "save_vocabulary",
    "FeatureSequence", "compute_mel", "load_waveform", "save_waveform",
    "TaskSplit", "make_task_splits",
    "synth_generate", "synth_task_map", "synth_vocabulary", "write_dataset",
]
