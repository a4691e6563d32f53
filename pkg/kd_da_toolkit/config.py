"""Experiment configuration: a commented defaults dict, JSON loading and typed config objects.

A config document is a JSON object with the same nesting as ``DEFAULT_EXPERIMENT``;
any key it leaves out keeps its default.
"""

import json
import os
from copy import deepcopy
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Tuple, Union

from .augment import DAScheme
from .distill import DistillConfig, PickConfig, TrainConfig
from .nn import ScheduleConfig

PathLike = Union[str, "os.PathLike[str]"]

TEACHER_LAYERS = ["conv:3:16", "relu", "pool", "conv:16:32", "relu", "pool", "gap", "dense:32:10"]
STUDENT_LAYERS = ["conv:3:8", "relu", "pool", "conv:8:16", "relu", "pool", "gap", "dense:16:10"]

RANKING_SCHEMES = ["identity", "flip", "flip_crop", "cutout", "mixup", "cutmix", "cutmix_pick"]
SCHEME_NAMES = RANKING_SCHEMES + ["cutmix_pick_student", "constant"]

DEFAULT_EXPERIMENT: Dict[str, Any] = {
    "data": {
        "source": "synthetic",          # synthetic | cifar
        "classes": 10,
        "per_class": 200,               # 80% train / 20% test per class
        "side": 16,
        "seed": 0,                      # generator seed (independent of the run seeds)
        "cifar_train": None,            # path of a CIFAR binary train file
        "cifar_test": None,             # path of a CIFAR binary test file
        "cifar_variant": "cifar100",    # cifar10 | cifar100
    },
    "teacher": {
        "layers": TEACHER_LAYERS,
        "checkpoint": "teacher.dgkd",   # relative paths resolve against output_dir
        "seed": 0,
        "batch_size": 64,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "crop_pad": 4,
        "schedule": {
            "base_lr": 0.05,
            "total_epochs": 240,
            "decay_epochs": [150, 180, 210],
            "decay_factor": 0.1,
            "epoch_scale_k": 0.125,     # 30 epochs, decays at 19/23/26
        },
    },
    "student": {
        "layers": STUDENT_LAYERS,
    },
    "distill": {
        "tau": 4.0,
        "alpha": 0.9,
        "batch_size": 64,
        "momentum": 0.9,
        "weight_decay": 5e-4,
        "crop_pad": 4,                  # padding of the standard flip + crop
        "scheme": "cutmix",             # scheme of the `distill` command
        "cutout_length": 8,
        "mix_alpha": 1.0,               # Beta(a, a) for Mixup/CutMix lambda
        "pick_ratio": 0.5,              # share of augmented samples CutMixPick keeps
        "pick_order": "highest",        # highest | lowest entropy first
        "schedule": {
            "base_lr": 0.05,
            "total_epochs": 240,
            "decay_epochs": [150, 180, 210],
            "decay_factor": 0.1,
            "epoch_scale_k": 0.05,      # 12 epochs, decays at 8/9/11
        },
    },
    "metrics": {
        "window_size": 640,             # K, in samples
        "epochs": 10,                   # passes over the composed stream
    },
    "ranking": {
        "schemes": RANKING_SCHEMES,
    },
    "lab": {
        "world_seed": 0,
        "classes": 4,
        "mc_support": 8,
        "mc_N": 16,
        "mc_M": 20000,
        "mc_rhos": [0.0, 0.3, 0.6, 0.9],
        "exact_support": 4,
        "exact_N": 3,
        "exact_rhos": [0.0, 0.25, 0.5, 0.75],
    },
    "seeds": [0, 1, 2],
    "output_dir": "runs",
}


def experiment_defaults() -> Dict[str, Any]:
    """Get a deep copy of the default experiment parameters."""
    return deepcopy(DEFAULT_EXPERIMENT)


@dataclass(frozen=True, slots=True)
class DataSpec:
    source: str = "synthetic"
    classes: int = 10
    per_class: int = 200
    side: int = 16
    seed: int = 0
    cifar_train: Optional[str] = None
    cifar_test: Optional[str] = None
    cifar_variant: str = "cifar100"

    def __post_init__(self) -> None:
        if self.source not in ("synthetic", "cifar"):
            raise ValueError(f"data.source must be 'synthetic' or 'cifar', got '{self.source}'")
        if self.source == "cifar" and not self.cifar_train:
            raise ValueError("data.cifar_train is required when data.source is 'cifar'")


@dataclass(frozen=True, slots=True)
class MetricConfig:
    window_size: int = 640
    epochs: int = 10

    def __post_init__(self) -> None:
        if self.window_size < 1:
            raise ValueError(f"metrics.window_size must be >= 1, got {self.window_size}")
        if self.epochs < 1:
            raise ValueError(f"metrics.epochs must be >= 1, got {self.epochs}")


@dataclass(frozen=True, slots=True)
class LabConfig:
    world_seed: int = 0
    classes: int = 4
    mc_support: int = 8
    mc_N: int = 16
    mc_M: int = 20000
    mc_rhos: Tuple[float, ...] = (0.0, 0.3, 0.6, 0.9)
    exact_support: int = 4
    exact_N: int = 3
    exact_rhos: Tuple[float, ...] = (0.0, 0.25, 0.5, 0.75)

    def __post_init__(self) -> None:
        object.__setattr__(self, "mc_rhos", tuple(float(r) for r in self.mc_rhos))
        object.__setattr__(self, "exact_rhos", tuple(float(r) for r in self.exact_rhos))
        for name in ("mc_rhos", "exact_rhos"):
            rhos = getattr(self, name)
            if any(not 0.0 <= r < 1.0 for r in rhos):
                raise ValueError(f"lab.{name} must lie in [0, 1), got {list(rhos)}")
            if any(b <= a for a, b in zip(rhos, rhos[1:])):
                raise ValueError(f"lab.{name} must be strictly increasing, got {list(rhos)}")
        if self.mc_M < 100:
            raise ValueError(f"lab.mc_M must be >= 100, got {self.mc_M}")
        if min(self.mc_support, self.exact_support, self.mc_N, self.exact_N) < 1 or self.classes < 2:
            raise ValueError("lab supports and sequence lengths must be >= 1 and lab.classes >= 2")


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    data: DataSpec
    teacher_layers: Tuple[str, ...]
    student_layers: Tuple[str, ...]
    teacher_checkpoint: str
    teacher_train: TrainConfig
    distill: DistillConfig
    scheme_name: str
    pick_ratio: float
    pick_order: str
    metrics: MetricConfig
    schemes: Tuple[str, ...]
    lab: LabConfig
    seeds: Tuple[int, ...]
    output_dir: str

    @property
    def teacher_checkpoint_path(self) -> str:
        return os.path.join(self.output_dir, self.teacher_checkpoint)


def _merge(base: Dict[str, Any], update: Dict[str, Any], where: str = "") -> None:
    for key, value in update.items():
        path = f"{where}{key}"
        if key not in base:
            raise ValueError(f"unknown config key '{path}'")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValueError(f"config key '{path}' must be an object")
            _merge(base[key], value, path + ".")
        else:
            base[key] = deepcopy(value)


def set_path(params: Dict[str, Any], dotted: str, value: Any) -> Dict[str, Any]:
    """Nest ``value`` under a dotted key, e.g. ``"distill.tau"`` -> ``{"distill": {"tau": value}}``, into ``params``."""
    keys = dotted.split(".")
    if not all(keys):
        raise ValueError(f"malformed config key '{dotted}'")
    node = params
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ValueError(f"config key '{dotted}' crosses a non-object value")
    node[keys[-1]] = value
    return params


def parse_set_option(option: str) -> Tuple[str, Any]:
    """Split ``key.path=value``; the value is parsed as JSON and kept as a string if that fails."""
    key, sep, raw = option.partition("=")
    if not sep or not key:
        raise ValueError(f"--set expects key.path=value, got '{option}'")
    try:
        return key, json.loads(raw)
    except json.JSONDecodeError:
        return key, raw


def _schedule(cfg: Dict[str, Any]) -> ScheduleConfig:
    return ScheduleConfig(
        base_lr=float(cfg["base_lr"]),
        total_epochs=int(cfg["total_epochs"]),
        decay_epochs=tuple(int(e) for e in cfg["decay_epochs"]),
        decay_factor=float(cfg["decay_factor"]),
        epoch_scale_k=float(cfg["epoch_scale_k"]),
    )


def resolve_scheme(name: str, distill: Dict[str, Any]) -> Tuple[DAScheme, Optional[PickConfig]]:
    """Map a scheme name to its augmentation and optional CutMixPick selection."""
    if name not in SCHEME_NAMES:
        raise ValueError(f"unknown scheme '{name}', expected one of {SCHEME_NAMES}")
    kind = "cutmix" if name.startswith("cutmix") else name
    scheme = DAScheme(
        kind=kind,
        cutout_length=int(distill["cutout_length"]),
        mix_alpha=float(distill["mix_alpha"]),
        crop_pad=int(distill["crop_pad"]),
    )
    if name == "cutmix_pick":
        return scheme, PickConfig(float(distill["pick_ratio"]), "teacher_entropy", distill["pick_order"])
    if name == "cutmix_pick_student":
        return scheme, PickConfig(float(distill["pick_ratio"]), "student_entropy", distill["pick_order"])
    return scheme, None


def build_experiment_config(params: Optional[Dict[str, Any]] = None, **overrides: Any) -> ExperimentConfig:
    """Merge defaults, ``params`` and top-level ``overrides`` into a validated :class:`ExperimentConfig`.

    Raises:
        ValueError: On unknown keys or invalid values.
    """
    cfg = experiment_defaults()
    if params:
        _merge(cfg, params)
    if overrides:
        _merge(cfg, overrides)

    seeds = tuple(int(s) for s in cfg["seeds"])
    if not seeds:
        raise ValueError("seeds must contain at least one seed")
    schemes = tuple(cfg["ranking"]["schemes"])
    if not schemes:
        raise ValueError("ranking.schemes must name at least one scheme")
    for name in schemes:
        resolve_scheme(name, cfg["distill"])

    d = cfg["distill"]
    scheme, pick = resolve_scheme(d["scheme"], d)
    t = cfg["teacher"]
    return ExperimentConfig(
        data=DataSpec(**cfg["data"]),
        teacher_layers=tuple(t["layers"]),
        student_layers=tuple(cfg["student"]["layers"]),
        teacher_checkpoint=str(t["checkpoint"]),
        teacher_train=TrainConfig(
            schedule=_schedule(t["schedule"]),
            batch_size=int(t["batch_size"]),
            seed=int(t["seed"]),
            momentum=float(t["momentum"]),
            weight_decay=float(t["weight_decay"]),
            crop_pad=int(t["crop_pad"]),
        ),
        distill=DistillConfig(
            tau=float(d["tau"]),
            alpha=float(d["alpha"]),
            scheme=scheme,
            pick=pick,
            schedule=_schedule(d["schedule"]),
            batch_size=int(d["batch_size"]),
            seed=seeds[0],
            momentum=float(d["momentum"]),
            weight_decay=float(d["weight_decay"]),
            crop_pad=int(d["crop_pad"]),
        ),
        scheme_name=d["scheme"],
        pick_ratio=float(d["pick_ratio"]),
        pick_order=str(d["pick_order"]),
        metrics=MetricConfig(**cfg["metrics"]),
        schemes=schemes,
        lab=LabConfig(**cfg["lab"]),
        seeds=seeds,
        output_dir=str(cfg["output_dir"]),
    )


def distill_config_for(cfg: ExperimentConfig, scheme_name: str, seed: int) -> DistillConfig:
    """The experiment's distillation settings with another scheme and seed."""
    d = config_to_dict(cfg)["distill"]
    scheme, pick = resolve_scheme(scheme_name, d)
    return replace(cfg.distill, scheme=scheme, pick=pick, seed=seed)


def _schedule_dict(s: ScheduleConfig) -> Dict[str, Any]:
    return {
        "base_lr": s.base_lr,
        "total_epochs": s.total_epochs,
        "decay_epochs": list(s.decay_epochs),
        "decay_factor": s.decay_factor,
        "epoch_scale_k": s.epoch_scale_k,
    }


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    """Serialise back to the document layout of ``DEFAULT_EXPERIMENT``."""
    t, d = cfg.teacher_train, cfg.distill
    lab = cfg.lab
    return {
        "data": {
            "source": cfg.data.source,
            "classes": cfg.data.classes,
            "per_class": cfg.data.per_class,
            "side": cfg.data.side,
            "seed": cfg.data.seed,
            "cifar_train": cfg.data.cifar_train,
            "cifar_test": cfg.data.cifar_test,
            "cifar_variant": cfg.data.cifar_variant,
        },
        "teacher": {
            "layers": list(cfg.teacher_layers),
            "checkpoint": cfg.teacher_checkpoint,
            "seed": t.seed,
            "batch_size": t.batch_size,
            "momentum": t.momentum,
            "weight_decay": t.weight_decay,
            "crop_pad": t.crop_pad,
            "schedule": _schedule_dict(t.schedule),
        },
        "student": {"layers": list(cfg.student_layers)},
        "distill": {
            "tau": d.tau,
            "alpha": d.alpha,
            "batch_size": d.batch_size,
            "momentum": d.momentum,
            "weight_decay": d.weight_decay,
            "crop_pad": d.crop_pad,
            "scheme": cfg.scheme_name,
            "cutout_length": d.scheme.cutout_length,
            "mix_alpha": d.scheme.mix_alpha,
            "pick_ratio": cfg.pick_ratio,
            "pick_order": cfg.pick_order,
            "schedule": _schedule_dict(d.schedule),
        },
        "metrics": {"window_size": cfg.metrics.window_size, "epochs": cfg.metrics.epochs},
        "ranking": {"schemes": list(cfg.schemes)},
        "lab": {
            "world_seed": lab.world_seed,
            "classes": lab.classes,
            "mc_support": lab.mc_support,
            "mc_N": lab.mc_N,
            "mc_M": lab.mc_M,
            "mc_rhos": list(lab.mc_rhos),
            "exact_support": lab.exact_support,
            "exact_N": lab.exact_N,
            "exact_rhos": list(lab.exact_rhos),
        },
        "seeds": list(cfg.seeds),
        "output_dir": cfg.output_dir,
    }


def load_config(path: PathLike, **overrides: Any) -> ExperimentConfig:
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        params = json.load(fh)
    if not isinstance(params, dict):
        raise ValueError(f"{os.fspath(path)}: a config document must be a JSON object")
    return build_experiment_config(params, **overrides)


def dump_config(cfg: ExperimentConfig, path: PathLike) -> None:
    with open(os.fspath(path), "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = [
    "DEFAULT_EXPERIMENT",
    "RANKING_SCHEMES",
    "SCHEME_NAMES",
    "DataSpec",
    "MetricConfig",
    "LabConfig",
    "ExperimentConfig",
    "experiment_defaults",
    "set_path",
    "parse_set_option",
    "resolve_scheme",
    "build_experiment_config",
    "distill_config_for",
    "config_to_dict",
    "load_config",
    "dump_config",
]
