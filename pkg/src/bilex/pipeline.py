"""Staged experiment pipeline with hash-verified, resumable artifacts.

Stage order per condition: build-data -> train-tokenizer, then per seed
train-model -> eval -> analyze, then report (aggregation across seeds).
Every stage records an input signature plus content hashes of the files it
wrote; a stage is skipped when both still match, so interrupted or repeated
runs only redo what changed. Timestamps are recorded but never hashed.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import __version__ as TOOL_VERSION
from .bpe import BpeModel, train_bpe
from .conditions import ConditionKind, ExposureSpec, build_condition, compute_val_ids, sample_reduced
from .config import ConditionEntry, ExperimentConfig
from .corpus import Corpus, Language, Speaker, read_corpus, write_corpus
from .embspace import export_plot_data, label_tokens, project_2d
from .evaluation import (
    EvalReport,
    aggregate_runs,
    corpus_vocabulary,
    filter_minimal_pairs,
    filter_word_pairs,
    load_minimal_pairs_tsv,
    load_word_pairs_tsv,
    perplexity,
    score_minimal_pairs,
    word_similarity_eval,
)
from .models import NGramLm, train_ngram, train_sgns
from .models.external import ExternalEmbeddings, ExternalScores

ALL_STAGES = ("build-data", "train-tokenizer", "train-model", "eval", "analyze", "report")


class PipelineError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class MissingManifest(Exception):
    pass


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def hash_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=1)
        f.write("\n")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    config_hash: str
    tool_version: str = TOOL_VERSION
    created_at: str = field(default_factory=_now)
    stages: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "created_at": self.created_at,
            "stages": self.stages,
        }

    def save(self, directory: Path) -> None:
        _write_json(Path(directory) / "manifest.json", self.to_dict())

    @classmethod
    def load(cls, directory: Path) -> "RunManifest":
        path = Path(directory) / "manifest.json"
        if not path.exists():
            raise MissingManifest(f"no manifest at {path}")
        with path.open(encoding="utf-8") as f:
            data = json.load(f)
        manifest = cls(data["config_hash"], data.get("tool_version", "?"))
        manifest.created_at = data.get("created_at", manifest.created_at)
        manifest.stages = data.get("stages", {})
        return manifest


class ExperimentRunner:
    def __init__(self, config: ExperimentConfig, force: bool = False):
        self.config = config
        self.force = force
        self.out = Path(config.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        try:
            self.manifest = RunManifest.load(self.out)
            if self.manifest.config_hash != config.config_hash():
                # Different experiment in the same directory: start fresh.
                self.manifest = RunManifest(config.config_hash())
        except MissingManifest:
            self.manifest = RunManifest(config.config_hash())
        self._corpora: dict[Language, Corpus] | None = None
        self._corpora_hashes: dict[str, str] | None = None
        self._vocab_cache: dict[tuple, list[frozenset[str]]] = {}
        self._model_cache: dict[tuple[str, int], NGramLm] = {}

    # -- inputs ------------------------------------------------------------

    def corpora(self) -> dict[Language, Corpus]:
        if self._corpora is None:
            loaded = {}
            for lang, path in self.config.corpora.items():
                if not Path(path).exists():
                    raise PipelineError("build-data", f"corpus file missing: {path}")
                loaded[lang] = read_corpus(path)
            self._corpora = loaded
        return self._corpora

    def corpora_hashes(self) -> dict[str, str]:
        if self._corpora_hashes is None:
            hashes = {}
            for lang, path in sorted(self.config.corpora.items()):
                if not Path(path).exists():
                    raise PipelineError("build-data", f"corpus file missing: {path}")
                hashes[lang.value] = file_sha256(Path(path))
            self._corpora_hashes = hashes
        return self._corpora_hashes

    # -- stage machinery ----------------------------------------------------

    def _stage(
        self,
        key: str,
        inputs_sig: str,
        artifact_rel_paths: Sequence[str],
        builder: Callable[[], None],
    ) -> dict[str, str]:
        record = self.manifest.stages.get(key)
        if not self.force and record and record.get("inputs") == inputs_sig:
            artifacts = record.get("artifacts", {})
            if set(artifacts) == set(artifact_rel_paths) and all(
                (self.out / rel).exists() and file_sha256(self.out / rel) == digest
                for rel, digest in artifacts.items()
            ):
                return artifacts
        try:
            builder()
        except PipelineError:
            raise
        except Exception as exc:
            raise PipelineError(key, str(exc)) from exc
        artifacts = {rel: file_sha256(self.out / rel) for rel in artifact_rel_paths}
        self.manifest.stages[key] = {
            "inputs": inputs_sig,
            "artifacts": artifacts,
            "completed_at": _now(),
        }
        self.manifest.save(self.out)
        return artifacts

    # -- stages ------------------------------------------------------------

    def build_data(self, entry: ConditionEntry) -> dict[str, str]:
        rel_dir = f"data/{entry.name}"
        rels = [
            f"{rel_dir}/train.txt",
            f"{rel_dir}/train.txt.meta.json",
            f"{rel_dir}/val.txt",
            f"{rel_dir}/val.txt.meta.json",
            f"{rel_dir}/condition.json",
        ]
        sig = hash_json({"spec": entry.spec.to_dict(), "corpora": self.corpora_hashes()})

        def builder() -> None:
            dataset = build_condition(entry.spec, self.corpora())
            write_corpus(dataset.train, self.out / rel_dir / "train.txt")
            write_corpus(dataset.val, self.out / rel_dir / "val.txt")
            _write_json(self.out / rel_dir / "condition.json", dataset.manifest)

        return self._stage(f"build-data/{entry.name}", sig, rels, builder)

    def train_tokenizer(self, entry: ConditionEntry) -> dict[str, str]:
        data_artifacts = self.build_data(entry)
        rel_dir = f"tokenizers/{entry.name}"
        rels = [f"{rel_dir}/vocab.tsv", f"{rel_dir}/merges.tsv", f"{rel_dir}/tokenizer.json"]
        sig = hash_json(
            {
                "vocab_size": self.config.tokenizer_vocab_size,
                "train": data_artifacts[f"data/{entry.name}/train.txt"],
            }
        )

        def builder() -> None:
            train = read_corpus(self.out / "data" / entry.name / "train.txt")
            model = train_bpe(train, vocab_size=self.config.tokenizer_vocab_size)
            model.save(self.out / rel_dir)

        return self._stage(f"train-tokenizer/{entry.name}", sig, rels, builder)

    def train_model(self, entry: ConditionEntry, seed: int) -> dict[str, str]:
        tok_artifacts = self.train_tokenizer(entry)
        if self.config.model.kind == "external":
            return {}
        rel_dir = f"models/{entry.name}/seed{seed}"
        rels = [f"{rel_dir}/ngram.json", f"{rel_dir}/sgns.npz"]
        model_cfg = self.config.to_dict()["model"]
        sig = hash_json({"model": model_cfg, "seed": seed, "tokenizer": tok_artifacts})

        def builder() -> None:
            tokenizer = self._tokenizer(entry)
            train = read_corpus(self.out / "data" / entry.name / "train.txt")
            stream = [t for line in train.lines() for t in tokenizer.encode(line)]
            cfg = self.config.model
            ngram = train_ngram(stream, order=cfg.ngram_order, discount=cfg.ngram_discount)
            _write_json(self.out / rel_dir / "ngram.json", ngram.to_dict())
            sgns = train_sgns(
                stream,
                dim=cfg.sgns_dim,
                window=cfg.sgns_window,
                negatives=cfg.sgns_negatives,
                epochs=cfg.sgns_epochs,
                lr=cfg.sgns_lr,
                seed=seed,
                max_tokens=cfg.sgns_max_tokens,
            )
            (self.out / rel_dir).mkdir(parents=True, exist_ok=True)
            np.savez(
                self.out / rel_dir / "sgns.npz",
                ids=sgns.ids,
                w_in=sgns.w_in,
                w_out=sgns.w_out,
                losses=np.asarray(sgns.epoch_losses),
            )

        return self._stage(f"train-model/{entry.name}/seed{seed}", sig, rels, builder)

    def evaluate(self, entry: ConditionEntry, seed: int) -> dict[str, str]:
        model_artifacts = self.train_model(entry, seed)
        rel = f"eval/{entry.name}/seed{seed}/report.json"
        eval_cfg = self.config.to_dict()["eval"]
        sig = hash_json(
            {
                "eval": eval_cfg,
                "seed": seed,
                "model": model_artifacts or {"external": [self.config.model.score_file, self.config.model.embed_file]},
                "corpora": self.corpora_hashes(),
                "spec": entry.spec.to_dict(),
            }
        )

        def builder() -> None:
            _write_json(self.out / rel, self._run_eval(entry, seed))

        return self._stage(f"eval/{entry.name}/seed{seed}", sig, [rel], builder)

    def analyze(self, entry: ConditionEntry, seed: int) -> dict[str, str]:
        model_artifacts = self.train_model(entry, seed)
        rel_dir = f"analysis/{entry.name}/seed{seed}"
        rels = [f"{rel_dir}/embedding_points.tsv", f"{rel_dir}/label_summary.json"]
        sig = hash_json({"model": model_artifacts, "corpora": self.corpora_hashes(), "seed": seed})

        def builder() -> None:
            tokenizer = self._tokenizer(entry)
            provider = self._embedding_provider(entry, seed)
            if hasattr(provider, "ids"):
                token_ids = [int(t) for t in provider.ids][:20_000]
            else:
                token_ids = list(range(min(provider.vocab_size, tokenizer.vocab_size, 20_000)))
            matrix = np.asarray([provider.vector(t, 0) for t in token_ids])
            labels_all = label_tokens(tokenizer, self.corpora()[Language.EN], self.corpora()[Language.ES])
            labels = [labels_all[t] for t in token_ids]
            projection = project_2d(matrix)
            tsv = export_plot_data(projection.coords_2d(), labels, [tokenizer.id_to_token[t] for t in token_ids])
            out_dir = self.out / rel_dir
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "embedding_points.tsv").write_text(tsv, encoding="utf-8")
            counts: dict[str, int] = {}
            for lab in labels:
                counts[lab.label] = counts.get(lab.label, 0) + 1
            _write_json(
                out_dir / "label_summary.json",
                {"counts": counts, "rank_deficient": projection.rank_deficient},
            )

        return self._stage(f"analyze/{entry.name}/seed{seed}", sig, rels, builder)

    def report(self, entry: ConditionEntry) -> dict[str, str]:
        eval_artifacts = {}
        for seed in self.config.seeds:
            eval_artifacts[seed] = self.evaluate(entry, seed)
        mirror_artifacts = {}
        if entry.mirror:
            mirror_entry = self.config.condition(entry.mirror)
            for seed in self.config.seeds:
                mirror_artifacts[seed] = self.evaluate(mirror_entry, seed)
        rel = f"reports/{entry.name}.json"
        sig = hash_json({"eval": eval_artifacts, "mirror": mirror_artifacts})

        def builder() -> None:
            runs = [self._load_eval(entry.name, seed) for seed in self.config.seeds]
            mirrored = (
                [self._load_eval(entry.mirror, seed) for seed in self.config.seeds]
                if entry.mirror
                else None
            )
            metrics = aggregate_runs(
                [r["metrics"] for r in runs],
                [r["metrics"] for r in mirrored] if mirrored else None,
            )
            report = EvalReport(
                metrics=metrics,
                runs=[r["metrics"] for r in runs],
                filtering=runs[0].get("filtering", {}),
                config={
                    "condition": entry.name,
                    "mirror": entry.mirror,
                    "spec": entry.spec.to_dict(),
                    "config_hash": self.config.config_hash(),
                    "experiment": self.config.to_dict(),
                },
            )
            _write_json(self.out / rel, report.to_dict())

        return self._stage(f"report/{entry.name}", sig, [rel], builder)

    # -- eval internals ------------------------------------------------------

    def _tokenizer(self, entry: ConditionEntry) -> BpeModel:
        return BpeModel.load(self.out / "tokenizers" / entry.name)

    def _scoring_model(self, entry: ConditionEntry, seed: int):
        if self.config.model.kind == "external":
            path = self.config.model.score_file.format(condition=entry.name, seed=seed)
            return ExternalScores(path)
        key = (entry.name, seed)
        if key not in self._model_cache:
            with (self.out / "models" / entry.name / f"seed{seed}" / "ngram.json").open() as f:
                self._model_cache[key] = NGramLm.from_dict(json.load(f))
        return self._model_cache[key]

    def _embedding_provider(self, entry: ConditionEntry, seed: int):
        if self.config.model.kind == "external":
            path = self.config.model.embed_file.format(condition=entry.name, seed=seed)
            return ExternalEmbeddings(path)
        from .models.sgns import SkipGramModel

        data = np.load(self.out / "models" / entry.name / f"seed{seed}" / "sgns.npz")
        return SkipGramModel(
            dim=int(data["w_in"].shape[1]),
            ids=data["ids"],
            w_in=data["w_in"],
            w_out=data["w_out"],
            neg_table=np.zeros(1, dtype=np.int64),
            epoch_losses=[float(x) for x in data["losses"]],
        )

    def _eval_val_corpora(self, spec: ExposureSpec) -> tuple[Corpus, Corpus]:
        corpora = self.corpora()
        en, es = corpora[Language.EN], corpora[Language.ES]
        if spec.word_budget is not None:
            ids = sample_reduced({Language.EN: en, Language.ES: es}, spec.word_budget, spec.seed)
            en, es = en.subset(ids), es.subset(ids)
        val_ids = compute_val_ids(en, spec.seed)
        return en.subset(val_ids), es.subset(val_ids)

    def _baseline_vocab_sets(self, language: Language, spec: ExposureSpec) -> list[frozenset[str]]:
        """Vocabularies of the Mom, Dad, and random baselines for a language."""
        cache_key = (language, spec.seed, spec.word_budget)
        if cache_key in self._vocab_cache:
            return self._vocab_cache[cache_key]
        other = Language.ES if language is Language.EN else Language.EN
        corpora = self.corpora()
        sets = []
        for speaker in (Speaker.MOM, Speaker.DAD):
            baseline = ExposureSpec(
                ConditionKind.BASELINE_BY_SPEAKER,
                language=language,
                speaker_assignment=((Speaker.MOM, language if speaker is Speaker.MOM else other),
                                    (Speaker.DAD, language if speaker is Speaker.DAD else other)),
                seed=spec.seed,
                word_budget=spec.word_budget,
            )
            sets.append(corpus_vocabulary(build_condition(baseline, corpora).train))
        random_baseline = ExposureSpec(
            ConditionKind.BASELINE_RANDOM,
            language=language,
            seed=spec.seed,
            word_budget=spec.word_budget,
        )
        sets.append(corpus_vocabulary(build_condition(random_baseline, corpora).train))
        self._vocab_cache[cache_key] = sets
        return sets

    def _run_eval(self, entry: ConditionEntry, seed: int) -> dict:
        cfg = self.config.eval
        tokenizer = self._tokenizer(entry)
        metrics: dict[str, float] = {}
        filtering: dict[str, dict] = {}
        details: dict[str, dict] = {}

        if "perplexity" in cfg.suites:
            model = self._scoring_model(entry, seed)
            en_val, es_val = self._eval_val_corpora(entry.spec)
            for tag, corpus in (("en", en_val), ("es", es_val)):
                result = perplexity(model, corpus, tokenizer, cfg.window, cfg.stride)
                metrics[f"ppl_{tag}"] = result.ppl
                details[f"ppl_{tag}"] = {
                    "scored_tokens": result.scored_tokens,
                    "oov_tokens": result.oov_tokens,
                }

        if "minimal_pairs" in cfg.suites and cfg.minimal_pairs_path:
            model = self._scoring_model(entry, seed)
            items = load_minimal_pairs_tsv(cfg.minimal_pairs_path)
            if cfg.filter_vocabulary:
                kept = filter_minimal_pairs(items, self._baseline_vocab_sets(Language.EN, entry.spec))
                filtering["minimal_pairs"] = {"kept": kept.kept, "total": kept.total}
                items = list(kept.items)
            result = score_minimal_pairs(
                model, items, tokenizer, prepend_speaker=cfg.prepend_speaker,
                window=cfg.window, stride=cfg.stride,
            )
            metrics["minimal_pairs_accuracy"] = result.accuracy
            details["minimal_pairs"] = {"ties": result.ties, "total": result.total}

        if "word_similarity" in cfg.suites and cfg.word_pairs_path:
            provider = self._embedding_provider(entry, seed)
            items = load_word_pairs_tsv(cfg.word_pairs_path)
            if cfg.filter_vocabulary:
                kept = filter_word_pairs(
                    items,
                    {
                        "EN": self._baseline_vocab_sets(Language.EN, entry.spec),
                        "ES": self._baseline_vocab_sets(Language.ES, entry.spec),
                    },
                )
                filtering["word_pairs"] = {"kept": kept.kept, "total": kept.total}
                items = list(kept.items)
            by_pair: dict[str, list] = {}
            for item in items:
                by_pair.setdefault(item.lang_pair, []).append(item)
            for lang_pair, pair_items in sorted(by_pair.items()):
                result = word_similarity_eval(provider, pair_items, tokenizer)
                if result.best_rho is not None:
                    metrics[f"ws_{lang_pair.lower()}"] = result.best_rho
                details[f"ws_{lang_pair.lower()}"] = {
                    "best_layer": result.best_layer,
                    "pairs_used": result.pairs_used,
                    "pairs_missing": result.pairs_missing,
                    "per_layer": list(result.per_layer),
                }

        return {"metrics": metrics, "filtering": filtering, "details": details, "seed": seed}

    def _load_eval(self, condition_name: str, seed: int) -> dict:
        with (self.out / "eval" / condition_name / f"seed{seed}" / "report.json").open() as f:
            return json.load(f)

    # -- entry point ---------------------------------------------------------

    def run(
        self,
        stages: Iterable[str] | None = None,
        conditions: Iterable[str] | None = None,
    ) -> dict[str, dict]:
        wanted = tuple(stages) if stages else ALL_STAGES
        unknown = set(wanted) - set(ALL_STAGES)
        if unknown:
            raise PipelineError("run", f"unknown stages: {sorted(unknown)}")
        entries = [
            e for e in self.config.conditions if conditions is None or e.name in set(conditions)
        ]
        reports: dict[str, dict] = {}
        for entry in entries:
            if "build-data" in wanted:
                self.build_data(entry)
            if "train-tokenizer" in wanted:
                self.train_tokenizer(entry)
            for seed in self.config.seeds:
                if "train-model" in wanted:
                    self.train_model(entry, seed)
                if "eval" in wanted:
                    self.evaluate(entry, seed)
                if "analyze" in wanted:
                    self.analyze(entry, seed)
            if "report" in wanted:
                self.report(entry)
                with (self.out / "reports" / f"{entry.name}.json").open() as f:
                    reports[entry.name] = json.load(f)
        self.manifest.save(self.out)
        return reports


def run_experiment(
    config: ExperimentConfig,
    force: bool = False,
    stages: Iterable[str] | None = None,
    conditions: Iterable[str] | None = None,
) -> tuple[RunManifest, dict[str, dict]]:
    runner = ExperimentRunner(config, force=force)
    reports = runner.run(stages=stages, conditions=conditions)
    return runner.manifest, reports


def verify_manifest(directory: str | Path) -> list[str]:
    """Recompute artifact hashes; return the paths that diverge (or are gone)."""
    directory = Path(directory)
    manifest = RunManifest.load(directory)
    divergent = []
    for record in manifest.stages.values():
        for rel, digest in record.get("artifacts", {}).items():
            path = directory / rel
            if not path.exists():
                divergent.append(f"{rel} (missing)")
            elif file_sha256(path) != digest:
                divergent.append(rel)
    return sorted(set(divergent))
