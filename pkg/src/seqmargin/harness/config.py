"""Experiment configuration: JSON schema, loading, dataset resolution."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import jsonschema

from ..datamodel import (JointDataset, load_dataset, make_c3_toy, make_fig1_toy,
                         make_fig3_dataset, make_nonseparable, three_task_2d_generator,
                         sample_2d_tasks)
from ..metrics import check_metric_name
from ..trainer import GUARDS, OrderingSchedule, TrainConfig

BUILTINS = {
    "fig1": make_fig1_toy,
    "fig3_contradicting": lambda: make_fig3_dataset("contradicting"),
    "fig3_aligned": lambda: make_fig3_dataset("aligned"),
    "c3": make_c3_toy,
    "disks2d": lambda: sample_2d_tasks(three_task_2d_generator(0)),
    "nonsep": lambda: make_nonseparable(1.0, 0, pair_jitter=0.01),
}
CHECKS = ("T3.3", "T3.4", "T5.2")


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_INT = {"type": "integer"}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "dataset", "train"],
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "minProperties": 1,
            "maxProperties": 1,
            "properties": {
                "builtin": {"enum": sorted(BUILTINS)},
                "file": {"type": "string"},
                "generator": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {
                        "kind": {"enum": ["disks2d", "nonseparable"]},
                        "seed": _INT, "n_per_task": _INT, "resample": {"type": "boolean"},
                        "overlap": _NUM, "M": _INT, "radius": _NUM, "offset": _NUM,
                        "pair_jitter": {"type": ["number", "null"]},
                    },
                    "additionalProperties": False,
                },
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "algorithm": {"enum": ["seqgd", "jointgd", "smm"]},
                "K": {"type": "integer", "minimum": 1},
                "eta": {"oneOf": [{"type": "number", "exclusiveMinimum": 0},
                                  {"type": "string", "pattern": r"^auto(:[0-9.eE+-]+)?$"}]},
                "guard": {"enum": list(GUARDS) + [None]},
                "stages": {"type": ["integer", "null"], "minimum": 1},
                "cycles": {"type": ["integer", "null"], "minimum": 1},
                "w0": {"type": ["array", "null"], "items": _NUM},
                "record_steps": {"type": "boolean"},
                "max_snapshots": {"type": "integer", "minimum": 2},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"kind": {"enum": ["cyclic", "random"]},
                           "seed": {"type": ["integer", "null"]}},
        },
        "metrics": {"type": "array", "items": {"type": "string"}},
        "checks": {"type": "array", "items": {"enum": list(CHECKS)}},
        "bound_constant": {"type": "number", "exclusiveMinimum": 0},
        "out": {"type": ["string", "null"]},
    },
}


@dataclass
class ExperimentConfig:
    name: str
    dataset: dict
    train: TrainConfig
    schedule: dict = field(default_factory=lambda: {"kind": "cyclic", "seed": None})
    metrics: list = field(default_factory=lambda: ["loss_joint"])
    checks: list = field(default_factory=list)
    bound_constant: float = 16.0
    out: str | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = {k: v for k, v in asdict(self.train).items()}
        if d["train"]["w0"] is not None:
            d["train"]["w0"] = [float(x) for x in d["train"]["w0"]]
        return d

    def make_schedule(self, M: int) -> OrderingSchedule:
        return OrderingSchedule(self.schedule.get("kind", "cyclic"), M, self.schedule.get("seed"))


def _path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    return "/".join(parts) if parts else "<root>"


def validate_config(raw: dict) -> ExperimentConfig:
    v = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(v.iter_errors(raw), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise ConfigError(f"config error at {_path(e)}: {e.message}")
    raw = copy.deepcopy(raw)
    for i, m in enumerate(raw.get("metrics", [])):
        try:
            check_metric_name(m)
        except ValueError as exc:
            raise ConfigError(f"config error at metrics/{i}: {exc}") from None
    train = raw["train"]
    if train.get("stages") is None and train.get("cycles") is None:
        raise ConfigError("config error at train: give one of stages or cycles")
    try:
        tc = TrainConfig(**train)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config error at train: {exc}") from None
    sched = {"kind": "cyclic", "seed": None}
    sched.update(raw.get("schedule", {}))
    if sched["kind"] == "random" and sched["seed"] is None:
        raise ConfigError("config error at schedule/seed: random ordering needs a seed")
    return ExperimentConfig(name=raw["name"], dataset=raw["dataset"], train=tc, schedule=sched,
                            metrics=raw.get("metrics", ["loss_joint"]),
                            checks=raw.get("checks", []),
                            bound_constant=raw.get("bound_constant", 16.0), out=raw.get("out"))


def load_config(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return validate_config(raw)


def resolve_dataset(spec: dict, seed: int | None = None):
    """JointDataset (or online provider) for a config's ``dataset`` entry."""
    if "builtin" in spec:
        return BUILTINS[spec["builtin"]]()
    if "file" in spec:
        return load_dataset(spec["file"])
    g = dict(spec["generator"])
    kind = g.pop("kind")
    if seed is not None:
        g["seed"] = seed
    if kind == "disks2d":
        resample = g.pop("resample", False)
        return sample_2d_tasks(three_task_2d_generator(**g), resample=resample)
    return make_nonseparable(**g)


def parse_generator_spec(text: str) -> dict:
    """``"nonseparable:overlap=0.5,seed=3"`` -> dataset entry; bare builtin names work too."""
    name, _, rest = text.partition(":")
    if name in BUILTINS and not rest:
        return {"builtin": name}
    if name not in ("disks2d", "nonseparable"):
        raise ConfigError(f"unknown generator {name!r}")
    g: dict = {"kind": name}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise ConfigError(f"generator option {item!r} is not key=value")
        g[key] = json.loads(val)
    entry = {"generator": g}
    validate_dataset_entry(entry)
    return entry


def validate_dataset_entry(entry: dict) -> None:
    v = jsonschema.Draft202012Validator(SCHEMA["properties"]["dataset"])
    for e in v.iter_errors(entry):
        raise ConfigError(f"config error at dataset/{_path(e)}: {e.message}")


def dataset_from_arg(arg: str) -> JointDataset:
    """Builtin name, generator spec, or dataset file path."""
    if arg in BUILTINS:
        return BUILTINS[arg]()
    if Path(arg).exists():
        return load_dataset(arg)
    return resolve_dataset(parse_generator_spec(arg))
