"""Sweep harness: retrain small models across stage counts and clip lengths.

Each sweep cell trains a fresh single-stream model for a short budget and
records fused plus per-stage held-out accuracy. The output is structural —
tables and curves for comparing configurations, with no accuracy target
attached.
"""

from __future__ import annotations

from .config import fusion_from, model_config_from
from .errors import ConfigError
from .model import FeedbackGCN, fusion_spec
from .training import TrainConfig, evaluate_model, train_model


def _cell_fusion(values, stages):
    """The configured fusion when it fits the cell's stage count, else average."""
    try:
        return fusion_from(values, stages=stages)
    except ConfigError:
        return fusion_spec("average", stages)


def _cell_train_config(values):
    epochs = values["ablation_epochs"]
    drops = tuple(d for d in values["lr_drops"] if d < epochs)
    return TrainConfig(
        batch_size=values["batch_size"],
        lr=values["lr"],
        momentum=values["momentum"],
        lr_drops=drops,
        epochs=epochs,
        seed=values["seed"],
        weight_decay=values["weight_decay"],
        grad_clip=values["grad_clip"],
        sampling_mode=values["sampling_mode"],
    )


def run_ablation(values, train_ds, test_ds, on_cell=None):
    """Run both sweeps; returns a list of row dicts.

    Rows carry: axis ("stages" or "clip_len"), value, train accuracy at the
    last epoch, held-out fused accuracy, and per-stage held-out accuracies.
    """
    stream = values["stream"]
    rows = []
    sweeps = (("stages", values["ablation_stages"]),
              ("clip_len", values["ablation_clip_lens"]))
    for axis, sweep in sweeps:
        for value in sweep:
            cell = dict(values)
            cell[axis] = value
            model = FeedbackGCN(model_config_from(cell, stream, train_ds.num_classes))
            spec = _cell_fusion(cell, cell["stages"])
            tconfig = _cell_train_config(cell)
            report = train_model(train_ds, model, spec, tconfig)
            result = evaluate_model(test_ds, model, spec)
            row = {
                "axis": axis,
                "value": value,
                "train_acc": report.final_train_accuracy,
                "eval_acc": result.accuracy,
                "stage_accs": result.stage_accuracies,
            }
            rows.append(row)
            if on_cell is not None:
                on_cell(row)
    return rows
