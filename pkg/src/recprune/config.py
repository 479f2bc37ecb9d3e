"""YAML run configuration.

A config file is a mapping with optional sections ``thm1``, ``thm2``,
``pipeline``, ``study`` and ``ablation``; anything left out keeps its
default. Unknown keys anywhere are rejected with their dotted path.

Schema (defaults in brackets)::

    thm1:      n_layers [3], width [64], in_channels [64], s [2], D [64],
               init_std [1.0], n_inputs [4], p_grid [0.01..0.10], seeds [20]
    thm2:      m [2048], c [4], s [2], n [8], labels [sign], p_grid [0.2, 0.36, 0.5],
               seeds [10], eta_factor [0.25], iterations [5000], stop_loss [1e-10],
               criterion [random]
    pipeline:
      data:     n_train [2000], n_test [500], size [32], channels [1], noise [0.05]
      model:    channels [8, 16, 32, 64], hint_stages [3, 4]
      loss:     lambda [10.0], hint_t [0.1]
      pretrain: <optim>   decoder: <optim>   finetune: <optim>
      prune:    rate [0.2], rounds [11], method [modified-lth]
      transfer: tasks [class, pixel], probe [mask-fixed], n_train [1000], n_test [250],
                pixel_size [64], pixel_scale [0.2, 0.4], optim: <optim>
      eval_rounds [null = all rounds]
      upstream_checkpoint [null = train from scratch]
    study:     seeds [0..4], lambdas [0.0, 10.0], round [7]
    ablation:  stage_sets [[], [4], [3, 4], [2, 3, 4], [1, 2, 3, 4]], seeds [0]

    <optim>:   epochs, batch_size, lr, momentum, weight_decay, milestones, gamma, clip_norm
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .autoenc import LossWeights, TrainConfig
from .pruning.lth import LthConfig
from .study import DataConfig, StudyConfig
from .theory.thm1 import Thm1Config
from .theory.thm2 import Thm2Config
from .transfer import TransferConfig


class ConfigError(ValueError):
    pass


def _check_keys(data, allowed, path):
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
    for key in data:
        if key not in allowed:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigError(f"{where}: unknown key (allowed: {', '.join(sorted(allowed))})")
    return data


def _coerce(value, default, path):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _flat(cls, data, path, skip=()):
    """Build a dataclass whose fields are scalars or tuples."""
    base = cls()
    names = [f.name for f in dataclasses.fields(cls) if f.name not in skip]
    data = _check_keys(data, names, path)
    kw = {k: _coerce(v, getattr(base, k), f"{path}.{k}") for k, v in data.items()}
    return replace(base, **kw)


def _optim(data, path, default: TrainConfig) -> TrainConfig:
    names = [f.name for f in dataclasses.fields(TrainConfig) if f.name != "seed"]
    data = _check_keys(data, names, path)
    kw = {}
    for k, v in data.items():
        if k == "clip_norm":
            if v is not None and (isinstance(v, bool) or not isinstance(v, (int, float))):
                raise ConfigError(f"{path}.clip_norm: expected a number or null, got {v!r}")
            kw[k] = None if v is None else float(v)
        else:
            kw[k] = _coerce(v, getattr(default, k), f"{path}.{k}")
    return replace(default, **kw)


@dataclass
class PipelineSection:
    study: StudyConfig = field(default_factory=StudyConfig)
    upstream_checkpoint: str | None = None


@dataclass
class StudySection:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    lambdas: tuple[float, ...] = (0.0, 10.0)
    round: int = 7


@dataclass
class AblationSection:
    stage_sets: tuple = ((), (4,), (3, 4), (2, 3, 4), (1, 2, 3, 4))
    seeds: tuple[int, ...] = (0,)


@dataclass
class RunConfig:
    thm1: Thm1Config = field(default_factory=Thm1Config)
    thm2: Thm2Config = field(default_factory=Thm2Config)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    study: StudySection = field(default_factory=StudySection)
    ablation: AblationSection = field(default_factory=AblationSection)
    raw: dict = field(default_factory=dict)


PIPELINE_KEYS = ("data", "model", "loss", "pretrain", "decoder", "finetune", "prune", "transfer",
                 "eval_rounds", "upstream_checkpoint")


def _pipeline(data, path="pipeline") -> PipelineSection:
    data = _check_keys(data, PIPELINE_KEYS, path)
    sc = StudyConfig(lth=LthConfig(rounds=11))
    sc = replace(sc, data=_flat(DataConfig, data.get("data"), f"{path}.data"))

    model = _check_keys(data.get("model"), ("channels", "hint_stages"), f"{path}.model")
    if "channels" in model:
        sc = replace(sc, channels=_coerce(model["channels"], sc.channels, f"{path}.model.channels"))
    if "hint_stages" in model:
        sc = replace(sc, hint_stages=_coerce(model["hint_stages"], sc.hint_stages, f"{path}.model.hint_stages"))

    loss = _check_keys(data.get("loss"), ("lambda", "hint_t"), f"{path}.loss")
    lam = _coerce(loss.get("lambda", 10.0), 1.0, f"{path}.loss.lambda")
    hint_t = _coerce(loss.get("hint_t", 0.1), 1.0, f"{path}.loss.hint_t")
    try:
        weights = LossWeights(lam, hint_t, sc.hint_stages)
    except ValueError as exc:
        raise ConfigError(f"{path}.loss: {exc}") from exc

    prune = _check_keys(data.get("prune"), ("rate", "rounds", "method"), f"{path}.prune")
    lth = replace(sc.lth, weights=weights,
                  finetune=_optim(data.get("finetune"), f"{path}.finetune", sc.lth.finetune),
                  **{k: _coerce(v, getattr(sc.lth, k), f"{path}.prune.{k}") for k, v in prune.items()})

    tr = _check_keys(data.get("transfer"), [f.name for f in dataclasses.fields(TransferConfig)], f"{path}.transfer")
    tdef = TransferConfig()
    tkw = {k: _coerce(v, getattr(tdef, k), f"{path}.transfer.{k}") for k, v in tr.items() if k != "optim"}
    transfer = replace(tdef, optim=_optim(tr.get("optim"), f"{path}.transfer.optim", tdef.optim), **tkw)

    eval_rounds = data.get("eval_rounds")
    if eval_rounds is not None:
        if not isinstance(eval_rounds, list) or not all(isinstance(r, int) for r in eval_rounds):
            raise ConfigError(f"{path}.eval_rounds: expected a list of integers or null")
        eval_rounds = tuple(eval_rounds)
    sc = replace(sc, lth=lth, transfer=transfer, eval_rounds=eval_rounds,
                 pretrain=_optim(data.get("pretrain"), f"{path}.pretrain", sc.pretrain),
                 decoder=_optim(data.get("decoder"), f"{path}.decoder", sc.decoder))
    try:
        sc.validate()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    ckpt = data.get("upstream_checkpoint")
    if ckpt is not None and not isinstance(ckpt, str):
        raise ConfigError(f"{path}.upstream_checkpoint: expected a path string or null")
    return PipelineSection(sc, ckpt)


def parse_config(data) -> RunConfig:
    data = _check_keys(data, ("thm1", "thm2", "pipeline", "study", "ablation"), "")
    cfg = RunConfig(raw=data)
    cfg.thm1 = _flat(Thm1Config, data.get("thm1"), "thm1")
    cfg.thm2 = _flat(Thm2Config, data.get("thm2"), "thm2")
    for name in ("thm1", "thm2"):
        try:
            getattr(cfg, name).validate()
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    cfg.pipeline = _pipeline(data.get("pipeline"))
    cfg.study = _flat(StudySection, data.get("study"), "study")
    ab = _check_keys(data.get("ablation"), ("stage_sets", "seeds"), "ablation")
    sets = ab.get("stage_sets", AblationSection.stage_sets)
    if not isinstance(sets, (list, tuple)) or not all(isinstance(s, (list, tuple)) for s in sets):
        raise ConfigError("ablation.stage_sets: expected a list of lists")
    seeds = _coerce(ab.get("seeds", [0]), (0,), "ablation.seeds")
    cfg.ablation = AblationSection(tuple(tuple(s) for s in sets), seeds)
    return cfg


def load_config(path) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    return parse_config(data or {})


def _plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    return obj


def echo(cfg: RunConfig, section: str, overrides: dict | None = None) -> dict:
    """Fully resolved settings of one section, for the config echo file."""
    out = {section: _plain(getattr(cfg, section))}
    if overrides:
        out["overrides"] = dict(overrides)
    return out
