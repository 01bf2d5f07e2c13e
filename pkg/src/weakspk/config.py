"""Pipeline configuration: one YAML file holding every module's settings.

Sections mirror the module configs one to one.  Unknown keys are rejected so
that a typo never silently falls back to a default.  ``to_dict`` and
``from_dict`` round-trip exactly, and ``hash`` fingerprints the parsed values
(not the file text), so reformatting a config never changes artifact hashes.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .corpus import CorpusConfig
from .diarization import DiarizationConfig
from .errors import ConfigError
from .io import config_hash
from .mil.aggregation import KINDS
from .mil.training import Stage1Config
from .selection import SelectionConfig
from .supervised import Stage2Config


@dataclass
class PathsConfig:
    corpus_dir: str = "work/corpus"
    work_dir: str = "work"


@dataclass
class Stage1Section:
    """Stage-1 settings plus the list of aggregation functions to train."""

    aggregations: tuple[str, ...] = ("lse", "max")
    train: Stage1Config = field(default_factory=Stage1Config)


@dataclass
class SelectionSection:
    source: str = "lse"
    select: SelectionConfig = field(default_factory=SelectionConfig)


@dataclass
class Stage2Section:
    sub_centers: tuple[int, ...] = (1, 2)
    train: Stage2Config = field(default_factory=Stage2Config)


@dataclass
class EvalConfig:
    trials_per_speaker: int = 100
    max_frames: int = 2000


@dataclass
class PipelineConfig:
    seed: int = 0
    threads: int = 1
    paths: PathsConfig = field(default_factory=PathsConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    diarization: DiarizationConfig = field(default_factory=DiarizationConfig)
    stage1: Stage1Section = field(default_factory=Stage1Section)
    selection: SelectionSection = field(default_factory=SelectionSection)
    stage2: Stage2Section = field(default_factory=Stage2Section)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        self.corpus.validate()
        for kind in self.stage1.aggregations:
            if kind not in KINDS:
                raise ConfigError(f"stage1.aggregations: unknown kind {kind!r}")
        if not self.stage1.aggregations:
            raise ConfigError("stage1.aggregations must not be empty")
        if self.selection.source not in self.stage1.aggregations:
            raise ConfigError(f"selection.source {self.selection.source!r} is not a trained stage-1 model")
        self.stage1.train.aam.validate()
        self.stage1.train.aggregation.validate()
        if any(k < 1 for k in self.stage2.sub_centers):
            raise ConfigError("stage2.sub_centers entries must be >= 1")
        self.stage2.train.validate()
        if self.eval.trials_per_speaker < 2:
            raise ConfigError("eval.trials_per_speaker must be >= 2")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        return self

    def stage1_config(self, kind) -> Stage1Config:
        agg = dataclasses.replace(self.stage1.train.aggregation, kind=kind)
        return dataclasses.replace(self.stage1.train, aggregation=agg)

    def stage2_config(self, sub_centers) -> Stage2Config:
        return dataclasses.replace(self.stage2.train, sub_centers=sub_centers)

    def to_dict(self):
        return _to_plain(self)

    def hash(self) -> str:
        """Fingerprint of everything except ``threads``, which never changes results."""
        d = self.to_dict()
        d.pop("threads")
        return config_hash(d)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    @classmethod
    def from_dict(cls, data) -> PipelineConfig:
        return _from_plain(cls, data or {}, "").validate()

    @classmethod
    def load(cls, path) -> PipelineConfig:
        try:
            data = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    return obj


def _from_plain(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        key = f"{where}.{name}" if where else name
        kwargs[name] = _coerce(hints[name], value, key)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def _coerce(tp, value, key):
    if dataclasses.is_dataclass(tp):
        return _from_plain(tp, value, key)
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list")
        args = typing.get_args(tp)
        elem = args[0] if args else object
        return tuple(_coerce(elem, v, key) for v in value)
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if tp in (int, float, str, bool) and not isinstance(value, tp) or (tp is int and isinstance(value, bool)):
        raise ConfigError(f"{key}: expected {tp.__name__}, got {value!r}")
    return value
