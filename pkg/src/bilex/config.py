"""Experiment configuration: one human-readable file drives the pipeline."""

from __future__ import annotations

import hashlib
import json

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .conditions import ExposureSpec
from .corpus import Language, Speaker


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class ModelSettings:
    kind: str = "ngram"                 # "ngram" or "external"
    ngram_order: int = 3
    ngram_discount: float = 0.75
    sgns_dim: int = 32
    sgns_window: int = 5
    sgns_negatives: int = 5
    sgns_epochs: int = 2
    sgns_lr: float = 0.05
    sgns_max_tokens: int | None = None
    # Path templates for external models; {condition} and {seed} expand.
    score_file: str | None = None
    embed_file: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("ngram", "external"):
            raise ConfigError(f"unknown model kind: {self.kind}")
        if self.kind == "external" and not (self.score_file and self.embed_file):
            raise ConfigError("external model requires score_file and embed_file")


@dataclass(frozen=True)
class EvalSettings:
    suites: tuple[str, ...] = ("perplexity", "minimal_pairs", "word_similarity")
    window: int = 1024
    stride: int = 512
    minimal_pairs_path: str | None = None
    word_pairs_path: str | None = None
    prepend_speaker: Speaker | None = None
    filter_vocabulary: bool = True

    def __post_init__(self) -> None:
        known = {"perplexity", "minimal_pairs", "word_similarity"}
        unknown = set(self.suites) - known
        if unknown:
            raise ConfigError(f"unknown eval suites: {sorted(unknown)}")


@dataclass(frozen=True)
class ConditionEntry:
    name: str
    spec: ExposureSpec
    mirror: str | None = None           # name of the symmetric assignment


@dataclass(frozen=True)
class ExperimentConfig:
    corpora: Mapping[Language, str]
    conditions: tuple[ConditionEntry, ...]
    output_dir: str
    tokenizer_vocab_size: int = 80_000
    model: ModelSettings = field(default_factory=ModelSettings)
    eval: EvalSettings = field(default_factory=EvalSettings)
    seeds: tuple[int, ...] = (42, 0, 1)

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not self.conditions:
            raise ConfigError("at least one condition is required")
        names = [c.name for c in self.conditions]
        if len(set(names)) != len(names):
            raise ConfigError("condition names must be unique")
        for lang in (Language.EN, Language.ES):
            if lang not in self.corpora:
                raise ConfigError(f"corpora must include {lang.value}")
        for entry in self.conditions:
            if entry.mirror is not None and entry.mirror not in names:
                raise ConfigError(f"mirror {entry.mirror!r} of {entry.name!r} is not a condition")

    def condition(self, name: str) -> ConditionEntry:
        for entry in self.conditions:
            if entry.name == name:
                return entry
        raise ConfigError(f"no condition named {name!r}")

    def to_dict(self) -> dict:
        return {
            "corpora": {lang.value: path for lang, path in sorted(self.corpora.items())},
            "conditions": [
                {"name": c.name, "mirror": c.mirror, **c.spec.to_dict()} for c in self.conditions
            ],
            "tokenizer": {"vocab_size": self.tokenizer_vocab_size},
            "model": {
                "kind": self.model.kind,
                "ngram_order": self.model.ngram_order,
                "ngram_discount": self.model.ngram_discount,
                "sgns_dim": self.model.sgns_dim,
                "sgns_window": self.model.sgns_window,
                "sgns_negatives": self.model.sgns_negatives,
                "sgns_epochs": self.model.sgns_epochs,
                "sgns_lr": self.model.sgns_lr,
                "sgns_max_tokens": self.model.sgns_max_tokens,
                "score_file": self.model.score_file,
                "embed_file": self.model.embed_file,
            },
            "eval": {
                "suites": list(self.eval.suites),
                "window": self.eval.window,
                "stride": self.eval.stride,
                "minimal_pairs_path": self.eval.minimal_pairs_path,
                "word_pairs_path": self.eval.word_pairs_path,
                "prepend_speaker": self.eval.prepend_speaker.value if self.eval.prepend_speaker else None,
                "filter_vocabulary": self.eval.filter_vocabulary,
            },
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    def config_hash(self) -> str:
        """Hash of the logical experiment; the output location is excluded."""
        payload = self.to_dict()
        payload.pop("output_dir")
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def _parse_conditions(raw: list) -> tuple[ConditionEntry, ...]:
    entries = []
    for item in raw:
        item = dict(item)
        name = item.pop("name", None)
        mirror = item.pop("mirror", None)
        spec = ExposureSpec.from_dict(item)
        entries.append(ConditionEntry(name or spec.slug(), spec, mirror))
    return tuple(entries)


def config_from_dict(data: Mapping) -> ExperimentConfig:
    try:
        corpora = {Language(k.upper()): str(v) for k, v in data["corpora"].items() if v}
        model_raw = dict(data.get("model", {}))
        eval_raw = dict(data.get("eval", {}))
        prepend = eval_raw.pop("prepend_speaker", None)
        suites = eval_raw.pop("suites", None)
        eval_settings = EvalSettings(
            **({"suites": tuple(suites)} if suites is not None else {}),
            **eval_raw,
            prepend_speaker=Speaker(prepend) if prepend else None,
        )
        return ExperimentConfig(
            corpora=corpora,
            conditions=_parse_conditions(data["conditions"]),
            output_dir=str(data["output_dir"]),
            tokenizer_vocab_size=int(data.get("tokenizer", {}).get("vocab_size", 80_000)),
            model=ModelSettings(**model_raw),
            eval=eval_settings,
            seeds=tuple(int(s) for s in data.get("seeds", (42, 0, 1))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".toml":
        with path.open("rb") as f:
            data = tomllib.load(f)
    else:
        with path.open(encoding="utf-8") as f:
            data = json.load(f)
    return config_from_dict(data)
