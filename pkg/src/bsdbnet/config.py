"""YAML run configuration for ``bsdbnet train``.

Layout (every section optional except ``data``)::

    run_dir: runs/toy          # default: $BSDBNET_RUN_DIR/<file stem>, else ./runs/<file stem>
    model: micro               # a named config, or a mapping:
    #  model: {name: 64-4, d_state: 8}   name is the base, other keys override fields
    optim: {lr: 5.0e-4, max_steps: 500, batch_size: 8}
    loss: {beta: 0.5}
    data:
      toy: true                # or clean_dir / noise_dir with 16 kHz mono WAVs
      n_clips: 8
      seconds: 1.0
      snrs: [-5, 0, 5]
      seed: 0
      val_clips: 0             # > 0 draws a separate validation set
      segment_seconds: null    # random crops per step; null uses whole clips
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .model import ModelConfig, named_config
from .training import TOY_SNRS, LossConfig, OptimConfig, PairDataset, dataset_from_dirs, toy_dataset

RUN_DIR_ENV = "BSDBNET_RUN_DIR"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    toy: bool = False
    clean_dir: str | None = None
    noise_dir: str | None = None
    n_clips: int = 8
    seconds: float = 1.0
    snrs: tuple[float, ...] = TOY_SNRS
    seed: int = 0
    val_clips: int = 0
    segment_seconds: float | None = None

    def validate(self):
        if self.toy:
            if self.clean_dir or self.noise_dir:
                raise ConfigError("data: give either toy: true or clean_dir/noise_dir, not both")
        else:
            for key in ("clean_dir", "noise_dir"):
                value = getattr(self, key)
                if not value:
                    raise ConfigError(f"data.{key} is required unless toy: true")
                if not Path(value).is_dir():
                    raise ConfigError(f"data.{key}: directory {value!r} does not exist")
        if self.n_clips < 1 or self.seconds <= 0 or self.val_clips < 0:
            raise ConfigError("data: n_clips and seconds must be positive, val_clips non-negative")

    def build(self, n_clips: int, seed: int) -> PairDataset:
        if self.toy:
            return toy_dataset(n_clips, self.seconds, self.snrs, seed)
        return dataset_from_dirs(self.clean_dir, self.noise_dir, n_clips, self.seconds, self.snrs, seed)

    def datasets(self) -> tuple[PairDataset, PairDataset | None]:
        train = self.build(self.n_clips, self.seed)
        val = self.build(self.val_clips, self.seed + 1) if self.val_clips else None
        return train, val


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    optim: OptimConfig
    loss: LossConfig
    data: DataConfig
    run_dir: Path
    source: dict = field(default_factory=dict)


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key {section}.{unknown[0]}" if section else f"unknown key {unknown[0]}")


def _mapping(raw, section):
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(raw).__name__}")
    return raw


def _model(raw) -> ModelConfig:
    if raw is None:
        return named_config("micro")
    if isinstance(raw, str):
        try:
            return named_config(raw)
        except ValueError as exc:
            raise ConfigError(f"model: {exc}") from exc
    raw = dict(_mapping(raw, "model"))
    _check_keys("model", raw, {f.name for f in fields(ModelConfig)})
    try:
        name = raw.pop("name", None)
        if name is not None:
            return named_config(name, **_overrides(raw))
        return ModelConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from exc


def _overrides(raw: dict) -> dict:
    out = dict(raw)
    for k in ("band_widths", "encoder_kernel", "dilations"):
        if out.get(k) is not None:
            out[k] = tuple(out[k])
    return out


def parse_run_config(doc: dict, stem: str = "run") -> RunConfig:
    doc = _mapping(doc, "config")
    _check_keys("", doc, {"run_dir", "model", "optim", "loss", "data"})
    model = _model(doc.get("model"))

    optim_raw = _mapping(doc.get("optim"), "optim")
    _check_keys("optim", optim_raw, {f.name for f in fields(OptimConfig)})
    loss_raw = _mapping(doc.get("loss"), "loss")
    _check_keys("loss", loss_raw, {f.name for f in fields(LossConfig)})
    if "data" not in doc:
        raise ConfigError("missing data section")
    data_raw = dict(_mapping(doc["data"], "data"))
    _check_keys("data", data_raw, {f.name for f in fields(DataConfig)})
    if "snrs" in data_raw:
        data_raw["snrs"] = tuple(float(s) for s in data_raw["snrs"])
    try:
        optim = OptimConfig(**optim_raw)
        loss = LossConfig(**loss_raw)
        data = DataConfig(**data_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    data.validate()

    run_dir = doc.get("run_dir")
    if run_dir is None:
        run_dir = Path(os.environ.get(RUN_DIR_ENV, "runs")) / stem
    return RunConfig(model, optim, loss, data, Path(run_dir), doc)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
    return parse_run_config(doc, path.stem)
