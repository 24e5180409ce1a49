"""Stage orchestration with content-addressed manifests.

Every stage reads files from the output directory (plus the review corpus),
writes its outputs, then records a manifest with input/output digests. A
stage whose run id and outputs are unchanged is skipped on the next run.
"""
from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence, TypeVar

import numpy as np

from . import bench as bm
from .clustering import CohesionStats, cluster_group
from .config import PipelineConfig
from .discovery import DiscoveryOutput, discover, discovery_rows, tally_aspects, tally_theme_frequencies
from .domain import (
    GroupKey,
    OpinionError,
    OpinionTuple,
    Review,
    Sentiment,
    Summary,
    ThemeSet,
    group_tuples,
    load_reviews,
    load_theme_set,
    read_jsonl,
    sha256_file,
    stable_hash,
    write_json,
    write_jsonl,
)
from .evaluation import (
    Dimension,
    alignscore_rows,
    aspect_coverage_f1,
    geval_faithfulness,
    identify_themes_in_text,
    pairwise_judge,
    sentiment_bin,
    sentiment_score,
    tally,
)
from .extraction import ExtractionConfig, extract_with_shuffles, refine_precision_audited
from .gateway import Gateway, HttpGateway, MalformedPayload
from .mock import MockGateway
from .prompts import builtin_theme_set
from .refinement import HumanDecisionFile, apply_human_decisions, refine
from .summarization import (
    ClusterBlock,
    EmptyInput,
    OpinionLine,
    order_opinions,
    summarize_product,
    summarize_theme,
    theme_shuffle_seed,
)

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

STAGES = ("discover", "refine", "extract", "cluster", "summarize", "bench-generate", "evaluate")
PAUSE_MARKER = "PAUSED"


class MissingInput(OpinionError, FileNotFoundError):
    pass


class StageStatus(str, enum.Enum):
    COMPLETED = "completed"
    SKIPPED = "skipped"
    PAUSED = "paused"


def _now() -> str:
    # SOURCE_DATE_EPOCH pins manifest timestamps so whole output trees can be diffed
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return when.isoformat(timespec="seconds")


@dataclass
class RunManifest:
    run_id: str
    stage: str
    config_digest: str
    seed: int
    inputs: dict[str, str]
    outputs: dict[str, str] = field(default_factory=dict)
    status: str = StageStatus.COMPLETED.value
    started_at: str = ""
    finished_at: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def load(cls, path: Path) -> "RunManifest | None":
        if not path.is_file():
            return None
        try:
            return cls(**json.loads(path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, TypeError):
            log.warning("ignoring unreadable manifest %s", path)
            return None


def _display_path(path: Path, root: Path) -> str:
    # relative inside the output tree, so moving a run does not change its files
    try:
        return str(path.resolve().relative_to(root.resolve()))
    except ValueError:
        return str(path)


def make_gateway(cfg: PipelineConfig) -> Gateway:
    if cfg.provider == "mock":
        return MockGateway(embed_dim=cfg.mock_embedding_dim)
    return HttpGateway(cfg.provider_config)


def opinion_id(review_id: str, index: int) -> str:
    return f"{review_id}:{index}"


# sections of the config that can change a stage's outputs, on top of the shared ones
_SHARED = ("seed", "provider", "mock_embedding_dim", "provider_config", "models")
_SECTIONS = {
    "discover": ("discovery",),
    "refine": ("refinement", "existing_themes"),
    "extract": ("extraction",),
    "cluster": ("clustering",),
    "summarize": ("summarization",),
    "bench-generate": ("bench",),
    "evaluate": ("evaluation", "bench"),
}


class Pipeline:
    def __init__(self, cfg: PipelineConfig, gateway: Gateway | None = None):
        self.cfg = cfg
        self.gateway = gateway if gateway is not None else make_gateway(cfg)
        self.out = Path(cfg.out_dir)
        self.templates = cfg.templates_dir
        self._stages: dict[str, Callable[[str], StageStatus | None]] = {
            "discover": self._discover,
            "refine": self._refine,
            "extract": self._extract,
            "cluster": self._cluster,
            "summarize": self._summarize,
            "bench-generate": self._bench,
            "evaluate": self._evaluate,
        }

    # --- plumbing -------------------------------------------------------------

    def path(self, name: str) -> Path:
        return self.out / name

    def _map(self, fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
        # results come back in input order whatever the pool size
        if self.cfg.workers == 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
            return list(pool.map(fn, items))

    def _seed(self, stage: str) -> int:
        return stable_hash(self.cfg.seed, stage)

    def _inputs(self, stage: str) -> dict[str, Path]:
        cfg = self.cfg
        reviews = {"reviews": Path(cfg.reviews)}
        p = self.path
        if stage == "discover":
            return reviews
        if stage == "refine":
            d = {"theme_frequencies": p("theme_frequencies.json"), "aspect_frequencies": p("aspect_frequencies.json")}
            if cfg.existing_themes and not cfg.existing_themes.startswith("preset:"):
                d["existing_themes"] = Path(cfg.existing_themes)
            if cfg.decisions_path.is_file():
                d["decisions"] = cfg.decisions_path
            return d
        if stage == "extract":
            return {**reviews, "theme_set": p("theme_set.jsonl")}
        if stage == "cluster":
            return {**reviews, "validated_opinions": p("validated_opinions.jsonl")}
        if stage == "summarize":
            return {"validated_opinions": p("validated_opinions.jsonl"), "clusters": p("clusters.jsonl")}
        if stage == "bench-generate":
            d = {"validated_opinions": p("validated_opinions.jsonl"), "clusters": p("clusters.jsonl")}
            if cfg.bench.patterns_file:
                d["patterns"] = Path(cfg.bench.patterns_file)
            return d
        if stage == "evaluate":
            d = {
                **reviews,
                "validated_opinions": p("validated_opinions.jsonl"),
                "theme_set": p("theme_set.jsonl"),
                "theme_summaries": p("theme_summaries.jsonl"),
                "product_summaries": p("product_summaries.jsonl"),
            }
            if cfg.evaluation.judge_bench and p("bench_variants.jsonl").is_file():
                d["bench_variants"] = p("bench_variants.jsonl")
            return d
        raise KeyError(stage)

    def _manifest_path(self, stage: str) -> Path:
        return self.out / "manifests" / f"{stage}.json"

    def _run_id(self, stage: str, input_digests: Mapping[str, str]) -> str:
        config_digest = self.cfg.digest(*_SHARED, *_SECTIONS[stage])
        h = hashlib.sha256()
        for part in (stage, config_digest, json.dumps(dict(sorted(input_digests.items())))):
            h.update(part.encode("utf-8"))
            h.update(b"\x1f")
        return h.hexdigest()[:16]

    def _up_to_date(self, stage: str, run_id: str) -> bool:
        m = RunManifest.load(self._manifest_path(stage))
        if m is None or m.run_id != run_id or m.status != StageStatus.COMPLETED.value:
            return False
        for name, digest in m.outputs.items():
            f = self.path(name)
            if not f.is_file() or sha256_file(f) != digest:
                return False
        return True

    # --- public entry points ----------------------------------------------------

    def run_stage(self, stage: str, force: bool = False) -> StageStatus:
        if stage not in self._stages:
            raise KeyError(f"unknown stage {stage!r}")
        inputs = self._inputs(stage)
        missing = [str(f) for f in inputs.values() if not f.is_file()]
        if missing:
            raise MissingInput(f"stage {stage}: missing input(s) {', '.join(missing)}")
        digests = {k: sha256_file(v) for k, v in inputs.items()}
        run_id = self._run_id(stage, digests)
        if not force and self._up_to_date(stage, run_id):
            log.info("stage %s is up to date (run %s); skipping", stage, run_id)
            return StageStatus.SKIPPED
        self.out.mkdir(parents=True, exist_ok=True)
        started = _now()
        log.info("stage %s: run %s", stage, run_id)
        self._written: list[str] = []
        status = self._stages[stage](run_id) or StageStatus.COMPLETED
        outputs = {name: sha256_file(self.path(name)) for name in self._written}
        manifest = RunManifest(
            run_id,
            stage,
            self.cfg.digest(*_SHARED, *_SECTIONS[stage]),
            self.cfg.seed,
            digests,
            outputs,
            status.value,
            started,
            _now(),
        )
        self._manifest_path(stage).parent.mkdir(parents=True, exist_ok=True)
        write_json(self._manifest_path(stage), manifest.to_dict())
        return status

    def run_all(self, force: bool = False) -> StageStatus:
        stages = [s for s in STAGES if s != "bench-generate" or self.cfg.bench.enabled]
        for stage in stages:
            status = self.run_stage(stage, force=force)
            if status is StageStatus.PAUSED:
                log.info("paused after %s; write %s and re-run", stage, self.cfg.decisions_path)
                return status
        return StageStatus.COMPLETED

    # --- writers ---------------------------------------------------------------

    def _jsonl(self, name: str, rows: Iterable[dict], run_id: str) -> None:
        write_jsonl(self.path(name), ({**r, "run_id": run_id} for r in rows))
        self._written.append(name)

    def _json(self, name: str, obj: dict, run_id: str) -> None:
        write_json(self.path(name), {**obj, "run_id": run_id})
        self._written.append(name)

    # --- loaders ---------------------------------------------------------------

    def _reviews(self) -> list[Review]:
        # stages emit rows in review_id order regardless of corpus file order
        return sorted(load_reviews(self.cfg.reviews), key=lambda r: r.review_id)

    def _opinions(self) -> list[dict]:
        return read_jsonl(self.path("validated_opinions.jsonl"))

    def _existing_themes(self) -> ThemeSet:
        src = self.cfg.existing_themes
        if not src:
            return ThemeSet()
        if src.startswith("preset:"):
            return builtin_theme_set(src.split(":", 1)[1])
        return load_theme_set(src)

    # --- stages ------------------------------------------------------------------

    def _discover(self, run_id: str) -> None:
        cfg = self.cfg
        reviews = self._reviews()

        def one(review: Review) -> DiscoveryOutput:
            try:
                return discover(
                    review, self.gateway, cfg.discovery.template, cfg.models.discovery,
                    cfg.discovery.examples, self.templates,
                )
            except MalformedPayload as e:
                log.warning("review %s: discovery output unusable (%s)", review.review_id, e)
                return DiscoveryOutput(review.review_id, (), ({"review_id": review.review_id, "reason": str(e)},))

        outputs = self._map(one, reviews)
        self._jsonl("discovery_tuples.jsonl", (row for o in outputs for row in discovery_rows(o)), run_id)
        self._jsonl("discovery_warnings.jsonl", (w for o in outputs for w in o.warnings), run_id)
        self._json("theme_frequencies.json", {"frequencies": tally_theme_frequencies(outputs)}, run_id)
        self._json("aspect_frequencies.json", {"aspects": tally_aspects(outputs)}, run_id)

    def _refine(self, run_id: str) -> StageStatus:
        cfg = self.cfg
        freqs = json.loads(self.path("theme_frequencies.json").read_text(encoding="utf-8"))["frequencies"]
        aspects = json.loads(self.path("aspect_frequencies.json").read_text(encoding="utf-8"))["aspects"]
        result = refine(freqs, aspects, cfg.refinement, self.gateway, self._existing_themes())
        have_decisions = cfg.decisions_path.is_file()
        report = {
            "flagged": result.flag_report,
            "survivors": result.survivors,
            "merged_into": result.merged_into,
            "decisions_file": _display_path(cfg.decisions_path, self.out),
            "decisions_applied": have_decisions,
        }
        self._json("flagged_themes.json", report, run_id)
        marker = self.path(PAUSE_MARKER)
        if cfg.refinement.require_human and result.flagged and not have_decisions:
            self._jsonl("theme_candidates.jsonl", (t.to_dict() for t in result.candidate), run_id)
            marker.write_text(
                f"{len(result.flagged)} flagged theme(s) await review; see flagged_themes.json.\n"
                f"Write {cfg.decisions_path} (merges/splits/drops) and re-run.\n",
                encoding="utf-8",
            )
            return StageStatus.PAUSED
        themes = result.candidate
        if have_decisions:
            themes = apply_human_decisions(themes, HumanDecisionFile.load(cfg.decisions_path))
        if len(themes) == 0:
            raise OpinionError("refinement produced an empty theme set; lower min_frequency or supply existing themes")
        self._jsonl("theme_set.jsonl", (t.to_dict() for t in themes), run_id)
        if marker.exists():
            marker.unlink()
        return StageStatus.COMPLETED

    def _extraction_config(self) -> ExtractionConfig:
        e, m = self.cfg.extraction, self.cfg.models
        return ExtractionConfig(
            k_shuffles=e.k_shuffles,
            shuffle_seed=self._seed("extract"),
            extraction_model=m.extraction,
            validation_model=m.validation,
            template_id=e.template,
            validation_template_id=e.validation_template,
            examples=e.examples,
            validation_examples=e.validation_examples,
        )

    def _extract(self, run_id: str) -> None:
        themes = load_theme_set(self.path("theme_set.jsonl"))
        ecfg = self._extraction_config()

        def one(review: Review):
            outcome = extract_with_shuffles(review, themes, ecfg, self.gateway, self.templates)
            kept, audit = refine_precision_audited(review, outcome.tuples, themes, self.gateway, ecfg, self.templates)
            return review, outcome, kept, audit

        opinions, audits = [], []
        for review, outcome, kept, audit in self._map(one, self._reviews()):
            for i, t in enumerate(kept):
                opinions.append({"opinion_id": opinion_id(review.review_id, i), "product_id": review.product_id, **t.to_dict()})
            audits.append(
                {
                    "review_id": review.review_id,
                    "passes": outcome.passes,
                    "warnings": outcome.warnings,
                    "candidates": len(outcome.tuples),
                    "validation": audit,
                }
            )
        self._jsonl("validated_opinions.jsonl", opinions, run_id)
        self._jsonl("extraction_audit.jsonl", audits, run_id)

    def _cluster(self, run_id: str) -> None:
        rows = self._opinions()
        product_of = {r.review_id: r.product_id for r in self._reviews()}
        ids: dict[tuple, list[str]] = defaultdict(list)
        tuples = []
        for row in rows:
            t = OpinionTuple.from_dict(row)
            tuples.append(t)
        groups = group_tuples(tuples, product_of)
        # group_tuples keeps input order inside a group, so ids line up by position
        for row, t in zip(rows, tuples):
            ids[GroupKey(product_of[t.review_id], t.theme, t.sentiment)].append(row["opinion_id"])
        params = self.cfg.clustering.params()
        n_rep = self.cfg.clustering.n_representatives

        def one(key: GroupKey) -> dict:
            gc = cluster_group(key, groups[key], self.gateway, params, n_rep)
            return gc.to_record(ids[key])

        self._jsonl("clusters.jsonl", self._map(one, list(groups)), run_id)

    def _summarize(self, run_id: str) -> None:
        cfg = self.cfg.summarization
        model = self.cfg.models.summarization
        by_id = {r["opinion_id"]: r for r in self._opinions()}
        records = read_jsonl(self.path("clusters.jsonl"))

        def line(oid: str) -> OpinionLine:
            r = by_id[oid]
            return OpinionLine(oid, Sentiment(r["sentiment"]), r["opinion"])

        per_theme: dict[tuple[str, str], tuple[list, list]] = {}
        for rec in records:
            key = GroupKey.from_dict(rec["group_key"])
            blocks, noise = per_theme.setdefault((key.product_id, key.theme_id), ([], []))
            for c in rec["clusters"]:
                reps = tuple(line(o) for o in c["representative_ids"])
                blocks.append(ClusterBlock(key.sentiment, c["id"], len(c["member_opinion_ids"]), reps))
            noise.extend(line(o) for o in rec["noise_opinion_ids"])

        def theme_job(pt: tuple[str, str]) -> Summary | None:
            product, theme = pt
            blocks, noise = per_theme[pt]
            seed = theme_shuffle_seed(self.cfg.seed, product, theme) if cfg.shuffle else None
            lines = order_opinions(blocks, noise, cfg.include_noise_opinions, seed)
            try:
                return summarize_theme(product, theme, lines, self.gateway, cfg.theme_template, model, self.templates)
            except EmptyInput:
                log.info("no opinions to summarize for %s|%s", product, theme)
                return None

        theme_summaries = [s for s in self._map(theme_job, sorted(per_theme)) if s is not None]
        by_product: dict[str, list[Summary]] = defaultdict(list)
        for s in theme_summaries:
            by_product[s.product_id].append(s)

        def product_job(product: str) -> Summary:
            return summarize_product(
                product, by_product[product], self.gateway, cfg.product_template, model, self.templates
            )

        products = self._map(product_job, sorted(by_product))
        self._jsonl("theme_summaries.jsonl", (s.to_dict() for s in theme_summaries), run_id)
        self._jsonl("product_summaries.jsonl", (s.to_dict() for s in products), run_id)

    def _bench(self, run_id: str) -> None:
        cfg = self.cfg.bench
        by_id = {r["opinion_id"]: r for r in self._opinions()}
        patterns = bm.load_patterns(cfg.patterns_file) if cfg.patterns_file else bm.builtin_patterns()
        seed = self._seed("bench")

        def one(rec: dict):
            key = GroupKey.from_dict(rec["group_key"])
            quality = [
                bm.QualityCluster(c["id"], tuple(bm.Candidate(o, by_id[o]["opinion"]) for o in c["member_opinion_ids"]))
                for c in rec["clusters"]
                if bm.passes_quality(CohesionStats.from_dict(c["cohesion"]))
            ]
            noise = [bm.Candidate(o, by_id[o]["opinion"]) for o in rec["noise_opinion_ids"]]
            if len(quality) + len(noise) < cfg.target:
                return key, None, f"{len(quality)} quality clusters + {len(noise)} noise opinions < {cfg.target}"
            emb = self.gateway.embed_batch([c.text for c in noise]) if noise else np.zeros((0, 1))
            base = bm.strategic_select(quality, noise, emb, cfg.target, seed, key, cfg.lam)
            return key, base, None

        selected, skipped = {}, {}
        for key, base, reason in self._map(one, read_jsonl(self.path("clusters.jsonl"))):
            if base is None:
                skipped[key.slug()] = reason
            else:
                selected[key] = base
        variants = bm.generate_benchmark(selected, patterns, cfg.orderings, seed) if selected else []
        self._jsonl("bench_variants.jsonl", (v.to_dict() for v in variants), run_id)
        self._json(
            "bench_groups.json",
            {
                "selected": {k.slug(): [b.to_dict() for b in v] for k, v in sorted(selected.items())},
                "skipped": dict(sorted(skipped.items())),
            },
            run_id,
        )

    def _evaluate(self, run_id: str) -> None:
        cfg = self.cfg.evaluation
        model = self.cfg.models.evaluation
        reviews = self._reviews()
        themes = load_theme_set(self.path("theme_set.jsonl"))
        opinions = self._opinions()
        theme_summaries = [Summary.from_dict(r) for r in read_jsonl(self.path("theme_summaries.jsonl"))]
        product_summaries = [Summary.from_dict(r) for r in read_jsonl(self.path("product_summaries.jsonl"))]
        texts_of: dict[str, list[str]] = defaultdict(list)
        for r in reviews:
            texts_of[r.product_id].append(r.text)
        source_themes: dict[str, set[str]] = defaultdict(set)
        for o in opinions:
            source_themes[o["product_id"]].add(o["theme"])

        def product_job(s: Summary) -> dict:
            reviews_text = "\n".join(f"Review {i + 1}: {t}" for i, t in enumerate(texts_of[s.product_id]))
            found = identify_themes_in_text(s.text, themes, self.gateway, cfg.identify_template, model, self.templates)
            src = source_themes[s.product_id]
            return {
                "product_id": s.product_id,
                "summary_themes": sorted(found),
                "source_themes": sorted(src),
                "aspect_coverage_f1": aspect_coverage_f1(found, src) if src else None,
                "theme_coverage_count": len(found & set(themes.ids)),
                "geval_faithfulness": geval_faithfulness(
                    reviews_text, s.text, self.gateway, cfg.geval_runs, cfg.geval_template, model, self.templates
                ),
            }

        def sentiment_job(s: Summary) -> dict:
            score = sentiment_score(s.text, self.gateway, model=model, template_dir=self.templates)
            return {"summary_id": s.summary_id, "score": score, "bin": sentiment_bin(score)}

        products = self._map(product_job, product_summaries)
        sentiments = self._map(sentiment_job, theme_summaries)
        bins = {"<50": 0, "50-80": 0, ">80": 0}
        for s in sentiments:
            bins[s["bin"]] += 1

        report = {
            "products": {p["product_id"]: p for p in products},
            "theme_sentiment": sentiments,
            "sentiment_bins": bins,
        }
        if "bench_variants" in self._inputs("evaluate"):
            report.update(self._judge_bench())
        self._json("eval_report.json", report, run_id)

        text_of = {o["opinion_id"]: o["opinion"] for o in opinions}
        rows = []
        for s in product_summaries:
            rows += [{"summary_id": s.summary_id, **r} for r in alignscore_rows("\n".join(texts_of[s.product_id]), s.text)]
        for s in theme_summaries:
            context = "\n".join(text_of[o] for o in s.source_opinion_ids if o in text_of)
            if context:
                rows += [{"summary_id": s.summary_id, **r} for r in alignscore_rows(context, s.text)]
        self._jsonl("alignscore_export.jsonl", rows, run_id)

    def _judge_bench(self) -> dict:
        """Redundant (summary 1) versus deduplicated (summary 2) summaries of the same base opinions."""
        cfg = self.cfg.evaluation
        model = self.cfg.models.evaluation
        variants = read_jsonl(self.path("bench_variants.jsonl"))[: cfg.max_bench_variants]
        if not variants:
            return {"bench_judgements": [], "bench_tallies": {}}

        def summarize(key: GroupKey, texts: Sequence[str], tag: str) -> str:
            lines = [OpinionLine(f"{tag}#{i}", key.sentiment, t) for i, t in enumerate(texts)]
            return summarize_theme(
                key.product_id, key.theme_id, lines, self.gateway, cfg.bench_summary_template, model, self.templates
            ).text

        def job(v: dict) -> list[dict]:
            key = GroupKey.from_dict(v["group_key"])
            base = [b["text"] for b in v["base_opinions"]]
            redundant = summarize(key, v["opinion_sequence"], "seq")
            dedup = summarize(key, base, "base")
            out = []
            for dim in Dimension:
                verdict = pairwise_judge(
                    "\n".join(base), redundant, dedup, dim, self.gateway, cfg.debias_judge, model, self.templates
                )
                out.append(
                    {"group": key.slug(), "pattern_id": v["pattern_id"], "ordering": v["ordering"], **verdict.to_dict()}
                )
            return out

        judgements = [j for js in self._map(job, variants) for j in js]
        tallies = {
            dim.value: tally(j["answer"] for j in judgements if j["dimension"] == dim.value).to_dict() for dim in Dimension
        }
        return {"bench_judgements": judgements, "bench_tallies": tallies}
