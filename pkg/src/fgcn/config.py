"""Run configuration: a flat key=value schema shared by all commands.

Config files hold one ``key=value`` pair per line with ``#`` comments;
command-line ``--set key=value`` overrides are merged on top. Every key is
validated against the schema — unknown keys are rejected by name, values
by type. List-valued keys use comma separation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from .errors import ConfigError
from .graph import named_topology, read_topology, topology_names
from .model import (DEFAULT_CHANNELS, DEFAULT_STRIDES, FUSION_STRATEGIES,
                    ModelConfig, fusion_spec)
from .training import TrainConfig

CONFIG_DIR_ENV = "FGCN_CONFIG_DIR"


@dataclass(frozen=True)
class Key:
    name: str
    kind: str  # int | float | bool | str | int-list | float-list
    default: object
    help: str


RUN_SCHEMA = [
    Key("topology", "str", "toy9", "named topology or path to a topology file"),
    Key("stream", "str", "spatial", "input stream for single-stream runs"),
    Key("two_stream", "bool", True, "train/evaluate spatial and motion streams jointly"),
    Key("alpha", "float", 0.5, "spatial-stream weight in two-stream score fusion"),
    Key("stages", "int", 5, "number of temporal stages"),
    Key("clip_len", "int", 64, "frames per stage clip"),
    Key("sampling_mode", "str", "random", "training clip sampling: random or center"),
    Key("seed", "int", 0, "seed for init, sampling, and shuffling"),
    Key("channels", "int-list", DEFAULT_CHANNELS, "feature stack channel plan"),
    Key("strides", "int-list", DEFAULT_STRIDES, "feature stack temporal stride plan"),
    Key("kernel_t", "int", 9, "temporal kernel of the feature stack"),
    Key("fgcb_layers", "int", 4, "layers in the feedback block"),
    Key("fgcb_kernel_t", "int", 3, "temporal kernel of the feedback block"),
    Key("fusion", "str", "average", "stage fusion strategy"),
    Key("fusion_weights", "float-list", (), "explicit weights for custom fusion"),
    Key("batch_size", "int", 32, "sequences per optimization step"),
    Key("lr", "float", 0.1, "initial learning rate"),
    Key("momentum", "float", 0.9, "momentum coefficient"),
    Key("lr_drops", "int-list", (40, 60), "epochs at which lr is divided by 10"),
    Key("epochs", "int", 80, "training epochs"),
    Key("weight_decay", "float", 0.0, "L2 penalty coefficient (0 = off)"),
    Key("grad_clip", "float", 0.0, "global gradient-norm clip (0 = off)"),
    Key("stop_train_acc", "float", 0.0, "early-stop threshold on train accuracy (0 = off)"),
    Key("stop_patience", "int", 1, "epochs at/above the threshold before stopping"),
    Key("checkpoint_every", "int", 0, "checkpoint cadence in epochs (0 = final only)"),
    Key("train_manifest", "str", "", "manifest of training sequences"),
    Key("test_manifest", "str", "", "manifest of held-out sequences"),
    Key("center", "bool", False, "subtract each body's first-frame center joint"),
    Key("normalize_scale", "bool", False, "rescale coordinates to unit radius"),
    Key("out_dir", "str", "run-out", "directory for reports, figures, checkpoints"),
    Key("ablation_stages", "int-list", (1, 3, 5, 7), "stage counts swept by ablate"),
    Key("ablation_clip_lens", "int-list", (16, 32, 64), "clip lengths swept by ablate"),
    Key("ablation_epochs", "int", 2, "training epochs per ablation cell"),
]

SYNTH_SCHEMA = [
    Key("classes", "int", 4, "number of action classes"),
    Key("train_per_class", "int", 6, "training sequences per class"),
    Key("test_per_class", "int", 4, "held-out sequences per class"),
    Key("frames", "int", 40, "frames per sequence"),
    Key("noise", "float", 0.02, "coordinate noise level"),
    Key("topology", "str", "toy9", "skeleton used by the generator"),
]


def _schema_map(schema):
    return {k.name: k for k in schema}


def _parse_value(key, raw):
    raw = raw.strip()
    try:
        if key.kind == "int":
            return int(raw)
        if key.kind == "float":
            return float(raw)
        if key.kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if key.kind == "int-list":
            return tuple(int(f) for f in raw.split(",")) if raw else ()
        if key.kind == "float-list":
            return tuple(float(f) for f in raw.split(",")) if raw else ()
        return raw
    except ValueError:
        raise ConfigError(f"config key {key.name!r} expects a {key.kind}, got {raw!r}")


def parse_config_file(path):
    """Read raw key=value pairs from a config file."""
    pairs = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {text!r}")
            name, value = text.split("=", 1)
            pairs[name.strip()] = value.strip()
    return pairs


def parse_overrides(items):
    """Turn a list of 'key=value' strings into raw pairs."""
    pairs = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        name, value = item.split("=", 1)
        pairs[name.strip()] = value.strip()
    return pairs


def resolve_config(schema, *raw_layers):
    """Merge raw string layers over the schema defaults, validating every key."""
    known = _schema_map(schema)
    values = {k.name: k.default for k in schema}
    for layer in raw_layers:
        for name, raw in layer.items():
            if name not in known:
                raise ConfigError(f"unknown config key {name!r}")
            values[name] = _parse_value(known[name], raw)
    return values


def find_config_file(path):
    """Resolve a config path, falling back to the config-dir env variable."""
    if os.path.exists(path):
        return path
    base = os.environ.get(CONFIG_DIR_ENV)
    if base:
        candidate = os.path.join(base, path)
        if os.path.exists(candidate):
            return candidate
    raise ConfigError(f"config file {path!r} not found"
                      + (f" (also tried under {base})" if base else ""))


def load_run_config(config_path=None, overrides=None):
    """The merged run configuration for a command invocation."""
    layers = []
    base_dir = None
    if config_path is not None:
        found = find_config_file(config_path)
        layers.append(parse_config_file(found))
        base_dir = os.path.dirname(os.path.abspath(found))
    layers.append(parse_overrides(overrides))
    values = resolve_config(RUN_SCHEMA, *layers)
    values["_base_dir"] = base_dir
    return values


def resolve_path(values, path):
    """Resolve a config-file-relative path against the config's directory."""
    if not path or os.path.isabs(path):
        return path
    base = values.get("_base_dir")
    candidate = os.path.join(base, path) if base else path
    if os.path.exists(candidate):
        return candidate
    return path


def resolve_topology(values):
    name = values["topology"]
    if name in topology_names():
        return named_topology(name)
    return read_topology(resolve_path(values, name))


def model_config_from(values, stream, classes):
    topo = resolve_topology(values)
    return ModelConfig(
        topology=topo,
        stream=stream,
        classes=classes,
        stages=values["stages"],
        clip_len=values["clip_len"],
        channels=tuple(values["channels"]),
        strides=tuple(values["strides"]),
        kernel_t=values["kernel_t"],
        fgcb_layers=values["fgcb_layers"],
        fgcb_kernel_t=values["fgcb_kernel_t"],
        seed=values["seed"],
    )


def train_config_from(values):
    if values["sampling_mode"] not in ("random", "center"):
        raise ConfigError(
            f"sampling_mode must be 'random' or 'center', got {values['sampling_mode']!r}")
    return TrainConfig(
        batch_size=values["batch_size"],
        lr=values["lr"],
        momentum=values["momentum"],
        lr_drops=tuple(values["lr_drops"]),
        epochs=values["epochs"],
        seed=values["seed"],
        weight_decay=values["weight_decay"],
        grad_clip=values["grad_clip"],
        sampling_mode=values["sampling_mode"],
        stop_train_acc=values["stop_train_acc"],
        stop_patience=values["stop_patience"],
        checkpoint_every=values["checkpoint_every"],
    )


def fusion_from(values, stages=None):
    stages = values["stages"] if stages is None else stages
    strategy = values["fusion"]
    if strategy == "custom":
        return fusion_spec(strategy, stages, values["fusion_weights"])
    if strategy not in FUSION_STRATEGIES:
        raise ConfigError(
            f"unknown fusion strategy {strategy!r}, expected one of {FUSION_STRATEGIES}")
    return fusion_spec(strategy, stages)


def synth_spec_from(overrides):
    from .data import SynthSpec

    values = resolve_config(SYNTH_SCHEMA, parse_overrides(overrides))
    return SynthSpec(
        classes=values["classes"],
        train_per_class=values["train_per_class"],
        test_per_class=values["test_per_class"],
        frames=values["frames"],
        noise=values["noise"],
        topology_name=values["topology"],
    )


def config_snapshot(values):
    """Deterministic text rendering of the effective configuration."""
    lines = []
    for key in RUN_SCHEMA:
        value = values[key.name]
        if isinstance(value, tuple):
            rendered = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        else:
            rendered = str(value)
        lines.append(f"{key.name}={rendered}")
    return "\n".join(lines) + "\n"
