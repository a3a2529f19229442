# opsc: opcode-sequence smart contract classifier
# Copyright 2026 The opsc Authors.
# Licensed under the Apache License, Version 2.0.
"""Opcode-sequence smart contract vulnerability classifier."""

import json

try:
    from . import _opsc
except ImportError:  # in-tree build: the extension sits in the build directory
    import _opsc

NUM_CLASSES = _opsc.NUM_CLASSES
Error = _opsc.Error
UsageError = _opsc.UsageError
DataError = _opsc.DataError
CheckpointError = _opsc.CheckpointError
NumericalError = _opsc.NumericalError
Classifier = _opsc.Classifier
disassemble = _opsc.disassemble
roc_auc = _opsc.roc_auc
one_cycle_lr = _opsc.one_cycle_lr
discriminative_lrs = _opsc.discriminative_lrs
synth_corpus = _opsc.synth_corpus


def confusion_report(rows, beta=1.0):
    """Metrics for a confusion matrix whose rows are the actual class."""
    return json.loads(_opsc.confusion_report_json(rows, beta))


def report(actual, predicted, scores=None, beta=1.0):
    """Metrics for 0-based class indices; scores are N x 4 row-major."""
    return json.loads(_opsc.report_json(actual, predicted, list(scores or []), beta))


def preset(name):
    return json.loads(_opsc.preset_json(name))


def run(corpus, config=None, out="", pretrain=True):
    """Prepare, pretrain, fine-tune and evaluate on a JSONL corpus file."""
    return json.loads(_opsc.run_json(str(corpus), json.dumps(config or {}), str(out), pretrain))


__all__ = [
    "NUM_CLASSES",
    "CheckpointError",
    "Classifier",
    "DataError",
    "Error",
    "NumericalError",
    "UsageError",
    "confusion_report",
    "discriminative_lrs",
    "disassemble",
    "one_cycle_lr",
    "preset",
    "report",
    "roc_auc",
    "run",
    "synth_corpus",
]
