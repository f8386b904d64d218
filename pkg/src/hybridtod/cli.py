"""Command-line front end: one subcommand per pipeline stage, plus ``pipeline``.

Every stage reads earlier stage outputs from the output directory, writes
into directories it owns, records input/output hashes in ``run_manifest.json``
and checks its own invariants before reporting success.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import shutil
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .config import VARIANT_MODES, VARIANTS, RunConfig, resolve_config
from .corpus import dump_json, ingest, load_schema, load_snapshot, minicorpus_dir, save_snapshot
from .graph import build_graph, read_edge_list, speaker_mode_summary, write_edge_list
from .maxcut import CutResult, cut_value, maxcut_pipeline
from .metrics import evaluate_run
from .redistribute import (
    apply_plan,
    load_plan,
    load_templates,
    moved_fractions,
    plan_from_cut,
    plan_unstructured_all,
    save_plan,
    verify_information_preservation,
)
from .retrieval import read_rankings_tsv, run_retrieval, success_at_k, write_rankings_tsv
from .seeds import derive_seed
from .serialize import (
    RELEVANT,
    emit_training_set,
    parse_entity,
    serialize_entity,
    write_serialized_entities,
    write_training_set,
)
from .stats import StatsReport, compare_stats, comparison_tsv, corpus_stats, direction_check

log = logging.getLogger("hybridtod")

PIPELINE = ("ingest", "graph", "maxcut", "redistribute", "stats")
LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


class StageError(RuntimeError):
    """A stage ran but one of its invariant checks failed."""


@dataclass
class Stage:
    name: str
    owned: list[str]
    inputs: list[str] = field(default_factory=list)
    checks: dict = field(default_factory=dict)

    def check(self, name: str, ok: bool, detail=None) -> None:
        self.checks[name] = bool(ok) if detail is None else {"ok": bool(ok), "detail": detail}
        if not ok:
            raise StageError(f"{self.name}: check {name!r} failed" + (f": {detail}" if detail is not None else ""))


class Run:
    def __init__(self, config: RunConfig, extra: dict | None = None):
        self.config = config
        self.out = Path(config.output_dir)
        self.extra = extra or {}
        self._templates = None

    def seed(self, stage: str) -> int:
        return derive_seed(self.config.seed, stage)

    @property
    def templates(self):
        if self._templates is None:
            self._templates = load_templates(self.config.templates)
        return self._templates

    def path(self, *parts) -> Path:
        return self.out.joinpath(*parts)

    def variants(self) -> list[str]:
        out = [self.config.variant]
        if self.config.also_unstructured and "unstructured" not in out:
            out.append("unstructured")
        return out

    def require(self, *parts) -> Path:
        p = self.path(*parts)
        if not p.exists():
            raise FileNotFoundError(f"missing {'/'.join(parts)}; run the stage that produces it first")
        return p


# -- hashing and manifests ----------------------------------------------------


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def tree_digests(root: Path, base: Path) -> dict[str, str]:
    if root.is_file():
        return {root.relative_to(base).as_posix(): file_digest(root)}
    return {
        p.relative_to(base).as_posix(): file_digest(p)
        for p in sorted(root.rglob("*"))
        if p.is_file() and p.name != "run_manifest.json"
    }


def _stage_record(run: Run, stage: Stage) -> dict:
    inputs, outputs = {}, {}
    for rel in dict.fromkeys(stage.inputs):
        # inputs outside the output tree are keyed by their own basename
        p = Path(rel) if Path(rel).is_absolute() else run.path(rel)
        if p.exists():
            inputs.update(tree_digests(p, p.parent if Path(rel).is_absolute() else run.out))
    for rel in stage.owned:
        if run.path(rel).exists():
            outputs.update(tree_digests(run.path(rel), run.out))
    return {
        "seed": run.seed(stage.name),
        "inputs": inputs,
        "outputs": outputs,
        "checks": stage.checks,
        "log": f"logs/{stage.name}.log",
    }


def _manifest_head(run: Run) -> dict:
    return {"tool": "hybridtod", "version": __version__, "config": run.config.to_manifest()}


def write_manifests(run: Run, stage: Stage) -> None:
    record = _stage_record(run, stage)
    if run.extra:
        record["options"] = run.extra
    root = run.path("run_manifest.json")
    manifest = _manifest_head(run)
    stages = {}
    if root.exists():
        old = json.loads(root.read_text(encoding="utf-8"))
        if old.get("config") == manifest["config"]:
            stages = old.get("stages", {})
    stages[stage.name] = record
    order = list(PIPELINE) + sorted(set(stages) - set(PIPELINE))
    manifest["stages"] = {k: stages[k] for k in order if k in stages}
    dump_json(manifest, root)
    for rel in stage.owned:
        d = run.path(rel)
        if d.is_dir():
            dump_json({**_manifest_head(run), "stage": stage.name, **record}, d / "run_manifest.json")


# -- stage runner -------------------------------------------------------------


def _quarantine(run: Run, stage: Stage, exc: BaseException) -> Path:
    dest = run.path("failed", stage.name)
    if dest.exists():
        shutil.rmtree(dest)
    dest.mkdir(parents=True)
    for rel in stage.owned:
        src = run.path(rel)
        if src.exists():
            target = dest / rel
            target.parent.mkdir(parents=True, exist_ok=True)
            shutil.move(str(src), str(target))
    (dest / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
    return dest


def run_stage(run: Run, stage: Stage, body) -> None:
    run.out.mkdir(parents=True, exist_ok=True)
    for rel in stage.owned:
        p = run.path(rel)
        if p.is_dir():
            shutil.rmtree(p)
        elif p.exists():
            p.unlink()
    stale = run.path("failed", stage.name)
    if stale.exists():
        shutil.rmtree(stale)
        if not any(stale.parent.iterdir()):
            stale.parent.rmdir()
    run.path("logs").mkdir(exist_ok=True)
    handler = logging.FileHandler(run.path("logs", f"{stage.name}.log"), mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    log.addHandler(handler)
    try:
        log.info("stage %s: seed %d", stage.name, run.seed(stage.name))
        body(run, stage)
        log.info("stage %s: %d checks passed", stage.name, len(stage.checks))
    except Exception as exc:
        log.error("stage %s failed: %s", stage.name, exc)
        handler.close()
        log.removeHandler(handler)
        _quarantine(run, stage, exc)
        raise
    handler.close()
    log.removeHandler(handler)
    write_manifests(run, stage)


# -- stages -------------------------------------------------------------------


def stage_ingest(run: Run, stage: Stage) -> None:
    cfg = run.config
    src = Path(cfg.input) if cfg.input else minicorpus_dir()
    stage.inputs.append(str(src.resolve()))
    schema = load_schema(cfg.schema)
    corpus = ingest(src, schema)
    save_snapshot(corpus, run.path("base"))
    ids = [e.id for e in corpus.entities]
    stage.check("unique_entity_ids", len(ids) == len(set(ids)))
    known = set(ids)
    bad = [
        (d.id, g)
        for s in corpus.splits.values()
        for d in s.dialogs
        for t in d.turns
        for g in t.gold_entities
        if g not in known
    ]
    stage.check("gold_entities_known", not bad, bad[:5] or None)
    stage.check("snapshot_round_trip", load_snapshot(run.path("base")) == corpus)
    pairs = {name: s.n_pairs for name, s in corpus.splits.items()}
    log.info("entities %d; context-response pairs %s", len(ids), pairs)
    log.info("dropped %d dialogs, quarantined %d", len(corpus.report["dropped"]), len(corpus.report["quarantine"]))


def stage_graph(run: Run, stage: Stage) -> None:
    cfg = run.config
    stage.inputs.append("base")
    base = load_snapshot(run.require("base"))
    g = build_graph(base["train"], base.entities, cfg.matcher, cfg.threads)
    write_edge_list(g, run.path("graph", "edges.tsv"))
    lines = ["dialog_id\tturn\tspeaker\tvertex_ids"]
    for u, key in enumerate(g.mentions.keys):
        vs = sorted({v for v, _ in g.mentions.vertex_matches(u)})
        if vs:
            lines.append(f"{key[0]}\t{key[1]}\t{key[2]}\t{','.join(map(str, vs))}")
    run.path("graph", "mentions.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    deg = g.degrees()
    summary = {
        "vertices": g.n_vertices,
        "edges": len(g.edges),
        "total_weight": g.total_weight,
        "mentioned_vertices": int((deg > 0).sum()),
        "matcher": cfg.matcher.to_dict(),
        "speaker_modes": speaker_mode_summary(base["train"], base.entities, cfg.matcher),
    }
    dump_json(summary, run.path("graph", "summary.json"))
    stage.check("edges_ordered_positive", all(0 <= i < j < g.n_vertices and w >= 1 for i, j, w in g.edges))
    stage.check("no_name_vertices", all(v.slot_type != "name" for v in g.vertices))
    expected = sum(len(e.slot_values(include_name=False)) for e in base.entities)
    stage.check("vertex_count", g.n_vertices == expected, None if g.n_vertices == expected else [g.n_vertices, expected])
    log.info("graph: %d vertices, %d edges, total weight %d", g.n_vertices, len(g.edges), g.total_weight)


def stage_maxcut(run: Run, stage: Stage) -> None:
    stage.inputs.append("graph/edges.tsv")
    g = read_edge_list(run.require("graph", "edges.tsv"))
    solver = run.config.solver_for(run.seed("maxcut"))
    cut = maxcut_pipeline(g, solver)
    cut.save(run.path("maxcut", "cut.json"))
    lines = ["vertex\tentity_id\tslot_type\tvalue\tside"]
    for idx, (v, s) in enumerate(zip(g.vertices, cut.side)):
        lines.append(f"{idx}\t{v.entity_id}\t{v.slot_type}\t{v.value}\t{s}")
    run.path("maxcut", "sides.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    edges = [(i, j, w if solver.weighted else 1) for i, j, w in g.edges]
    total = sum(w for _, _, w in edges)
    stage.check("side_covers_vertices", len(cut.side) == g.n_vertices)
    stage.check("cut_value_consistent", abs(cut_value(cut.side, edges) - cut.cut_value) < 1e-9)
    stage.check("cut_within_total", cut.cut_value <= total)
    if cut.sdp_objective is not None:
        slack = 1e-6 * max(total, 1)
        stage.check("cut_within_relaxation", cut.cut_value <= cut.sdp_objective + slack)
    log.info("cut value %s of %s; relaxation %s", cut.cut_value, total, cut.sdp_objective)


def _graph_for_plan(run: Run, base):
    # Rebuild with mentions: the side tie-break needs per-utterance matches.
    g = build_graph(base["train"], base.entities, run.config.matcher, run.config.threads)
    recorded = read_edge_list(run.require("graph", "edges.tsv"))
    if recorded.edges != g.edges or recorded.vertices != g.vertices:
        raise StageError("redistribute: graph/edges.tsv does not match the base snapshot")
    return g


def stage_redistribute(run: Run, stage: Stage) -> None:
    stage.inputs.append("base")
    base = load_snapshot(run.require("base"))
    seed = run.seed("redistribute")
    for variant in run.variants():
        if variant == "unstructured":
            plan = plan_unstructured_all(base.entities)
        else:
            stage.inputs.extend(["graph/edges.tsv", "maxcut/cut.json"])
            g = _graph_for_plan(run, base)
            cut = CutResult.load(run.require("maxcut", "cut.json")) if variant == "hybrid" else None
            plan = plan_from_cut(cut, g, VARIANT_MODES[variant], base.entities)
        variant_corpus, applied = apply_plan(base, plan, run.templates, seed)
        out = run.path(variant)
        save_snapshot(variant_corpus, out)
        save_plan(applied, out / "plan.json")
        report = verify_information_preservation(base, variant_corpus, run.templates)
        dump_json(report.to_json(), out / "preservation.json")
        fractions = moved_fractions(base.entities, applied)
        dump_json(fractions, out / "moved_fractions.json")
        stage.check(f"{variant}_preservation", report.ok, None if report.ok else report.to_json())
        names_ok = all(
            a.name == b.name and a.structured_slots.get("name") == b.structured_slots.get("name")
            for a, b in zip(base.entities, variant_corpus.entities)
        )
        stage.check(f"{variant}_names_structured", names_ok)
        stage.check(f"{variant}_dialogs_unchanged", variant_corpus.splits == base.splits)
        log.info("%s: %d slot-values moved", variant, len(applied.moves))


def stage_stats(run: Run, stage: Stage) -> None:
    from .plots import cut_profile_figure, slot_placement_figure, variant_comparison_figure

    out = run.path("stats")
    out.mkdir(parents=True)
    reports: dict[str, StatsReport] = {}
    for name in ("base",) + VARIANTS:
        if not run.path(name, "entities.json").exists():
            continue
        stage.inputs.append(name)
        rep = corpus_stats(load_snapshot(run.path(name)), run.templates)
        reports[name] = rep
        dump_json(rep.to_json(), out / f"{name}.json")
        (out / f"{name}.txt").write_text(rep.to_text(), encoding="utf-8")
        (out / f"{name}_slot_types.tsv").write_text(rep.to_tsv(), encoding="utf-8")
        slot_placement_figure(rep.to_json(), out / f"{name}_slot_types.png", title=name)
    if "base" not in reports:
        raise FileNotFoundError("missing base snapshot; run ingest first")
    comparison = compare_stats(reports)
    dump_json(comparison, out / "comparison.json")
    (out / "comparison.tsv").write_text(comparison_tsv(comparison), encoding="utf-8")
    variant_comparison_figure(comparison, out / "comparison.png")

    summary = run.path("graph", "summary.json")
    if summary.exists():
        modes = json.loads(summary.read_text(encoding="utf-8"))["speaker_modes"]
        lines = ["speakers\tvertices\tedges\ttotal_weight\tmentioned_vertices"]
        for mode, row in modes.items():
            lines.append(f"{mode}\t{row['vertices']}\t{row['edges']}\t{row['total_weight']}\t{row['mentioned_vertices']}")
        (out / "graph_speaker_modes.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    base_ents = {e.id: e for e in load_snapshot(run.path("base")).entities}
    for name in VARIANTS:
        if name not in reports:
            continue
        plan = load_plan(run.path(name, "plan.json"))
        moved_domains = {base_ents[m.entity_id].domain for m in plan.moves}
        problems = direction_check(reports["base"], reports[name], moved_domains)
        stage.check(f"{name}_direction", not problems, problems or None)
        fractions = json.loads(run.path(name, "moved_fractions.json").read_text(encoding="utf-8"))
        if fractions:
            cut_profile_figure(fractions, out / f"{name}_moved_fractions.png")
            lines = ["slot_type\tvalues\tmoved\tfraction"]
            for slot, row in fractions.items():
                lines.append(f"{slot}\t{row['values']}\t{row['moved']}\t{row['fraction']:.6f}")
            (out / f"{name}_moved_fractions.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for name, rep in reports.items():
        log.info("%s\n%s", name, rep.to_text().rstrip())


def _variant_corpus(run: Run, stage: Stage):
    v = run.config.variant
    stage.inputs.append(v)
    return load_snapshot(run.require(v, "entities.json").parent)


def stage_serialize(run: Run, stage: Stage) -> None:
    corpus = _variant_corpus(run, stage)
    out = run.path("serialized", run.config.variant)
    out.mkdir(parents=True)
    write_serialized_entities(corpus.entities, out / "entities.jsonl")
    bad = []
    for e in corpus.entities:
        text = serialize_entity(e).to_text()
        if serialize_entity(parse_entity(text)).to_text() != text:
            bad.append(e.id)
    stage.check("round_trip", not bad, bad or None)
    log.info("serialized %d entities", len(corpus.entities))


def stage_emit(run: Run, stage: Stage) -> None:
    cfg = run.config
    corpus = _variant_corpus(run, stage)
    seed = run.seed("emit-train")
    result = emit_training_set(corpus, cfg.mix, seed, "train", cfg.context_budget)
    write_training_set(result, run.path("train", cfg.variant), cfg.mix, seed, cfg.context_budget)
    bad = []
    for batch in result.batches:
        pos = sum(1 for ex in batch if ex.task == "entity_retrieval" and ex.target == RELEVANT)
        neg = sum(1 for ex in batch if ex.task == "entity_retrieval" and ex.target != RELEVANT)
        gen = sum(1 for ex in batch if ex.task == "response_generation")
        if (pos, neg, gen) != (cfg.mix.positives_per_batch, cfg.mix.negatives_per_batch, cfg.mix.generation_per_batch):
            bad.append(batch[0].id if batch else None)
    stage.check("batch_composition", not bad, bad[:5] or None)
    log.info("emitted %d batches; skipped %d contexts", len(result.batches), len(result.skipped))


def stage_retrieve(run: Run, stage: Stage) -> None:
    cfg = run.config
    corpus = _variant_corpus(run, stage)
    contexts, rankings = run_retrieval(corpus, "test", cfg.query_mode)
    out = run.path("retrieval", cfg.variant)
    out.mkdir(parents=True)
    write_rankings_tsv(contexts, rankings, out / "rankings.tsv")
    golds = [g for _, _, g in contexts]
    ks = list(range(1, len(corpus.entities) + 1))
    curve = [success_at_k(rankings, golds, k) for k in ks]
    result = {
        "split": "test",
        "query_mode": cfg.query_mode,
        "k1": 1.5,
        "b": 0.75,
        "n_contexts": len(contexts),
        "success@1": 100.0 * curve[0] if curve else 0.0,
        "success@5": 100.0 * success_at_k(rankings, golds, 5),
    }
    dump_json(result, out / "success.json")
    stage.check("success_monotone", all(a <= b for a, b in zip(curve, curve[1:])))
    log.info("success@1 %.2f, success@5 %.2f over %d contexts", result["success@1"], result["success@5"], len(contexts))


def stage_evaluate(run: Run, stage: Stage) -> None:
    from .plots import metrics_figure

    cfg = run.config
    preds = run.extra.get("predictions")
    if not preds:
        raise ValueError("evaluate needs --predictions")
    stage.inputs.append(str(Path(preds).resolve()))
    corpus = _variant_corpus(run, stage)
    rankings = None
    if run.extra.get("rankings"):
        stage.inputs.append(str(Path(run.extra["rankings"]).resolve()))
        rankings = read_rankings_tsv(run.extra["rankings"])
    eval_cfg = {
        "templates": cfg.templates,
        "schema": cfg.schema,
        "matcher": cfg.matcher.to_dict(),
        "query_mode": cfg.query_mode,
    }
    report = evaluate_run(preds, corpus, eval_cfg, rankings, run.templates)
    out = run.path("eval", cfg.variant)
    out.mkdir(parents=True)
    dump_json(report.to_json(), out / "report.json")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    (out / "records.tsv").write_text(report.to_tsv(), encoding="utf-8")
    metrics_figure(report.row(), out / "metrics.png", title=cfg.variant)
    p, r, f = report.precision, report.recall, report.f1
    stage.check("prf_bounds", 0 <= p <= 100 and 0 <= r <= 100 and (f == 0 or min(p, r) - 1e-9 <= f <= max(p, r) + 1e-9))
    log.info("\n%s", report.to_text().rstrip())


STAGES = {
    "ingest": (stage_ingest, lambda run: ["base"]),
    "graph": (stage_graph, lambda run: ["graph"]),
    "maxcut": (stage_maxcut, lambda run: ["maxcut"]),
    "redistribute": (stage_redistribute, lambda run: run.variants()),
    "stats": (stage_stats, lambda run: ["stats"]),
    "serialize": (stage_serialize, lambda run: [f"serialized/{run.config.variant}"]),
    "emit-train": (stage_emit, lambda run: [f"train/{run.config.variant}"]),
    "retrieve": (stage_retrieve, lambda run: [f"retrieval/{run.config.variant}"]),
    "evaluate": (stage_evaluate, lambda run: [f"eval/{run.config.variant}"]),
}


def execute(run: Run, names) -> int:
    for name in names:
        body, owned = STAGES[name]
        try:
            run_stage(run, Stage(name, owned(run)), body)
        except StageError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        except Exception as exc:
            print(f"error: stage {name} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 1
    return 0


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="top-level seed; every stage seed derives from it")
    common.add_argument("--variant", choices=VARIANTS, help="which corpus variant to build or read")
    common.add_argument("--threads", type=int, help="worker cap; never changes outputs")
    common.add_argument("--weighted-cut", action="store_true", default=None, help="use co-occurrence counts as edge weights")
    common.add_argument("--input", help="raw corpus directory (default: bundled mini-corpus)")
    common.add_argument("-o", "--output-dir", dest="output_dir", help="output directory")
    common.add_argument("--templates", help="question/answer template file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hybridtod", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"hybridtod {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "ingest": "read a raw corpus into a canonical snapshot (base/)",
        "stats": "corpus statistics tables and figures for every built variant",
        "graph": "slot-value co-occurrence graph from training dialogs",
        "maxcut": "partition the graph with the low-rank max-cut solver",
        "redistribute": "move one side of the cut into templated FAQs",
        "serialize": "write special-token entity serializations",
        "emit-train": "emit mixed retrieval/generation training batches",
        "retrieve": "BM25 entity retrieval on the test split with success@k",
        "evaluate": "score a prediction file (BLEU, slot P/R/F1)",
        "pipeline": "ingest, graph, maxcut, redistribute and stats in one go",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "evaluate":
            p.add_argument("--predictions", required=True, help="JSONL with context_id and hypothesis")
            p.add_argument("--rankings", help="rankings TSV from the retrieve stage, for success@k")
        if name == "pipeline":
            p.add_argument("--also-unstructured", action="store_true", default=None, help="also build the all-FAQ variant")
        if name in ("retrieve", "evaluate"):
            p.add_argument("--query-mode", choices=("full_context", "last_user"))
    return parser


def config_from_args(args, environ=None) -> RunConfig:
    overrides = {
        "seed": args.seed,
        "variant": args.variant,
        "threads": args.threads,
        "input": args.input,
        "output_dir": args.output_dir,
        "templates": args.templates,
        "weighted_cut": args.weighted_cut,
        "also_unstructured": getattr(args, "also_unstructured", None),
        "query_mode": getattr(args, "query_mode", None),
    }
    return resolve_config(args.config, overrides, environ)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(logging.Formatter(LOG_FORMAT))
    log.addHandler(console)
    log.setLevel(logging.INFO)
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        try:
            config = config_from_args(args)
        except (ValueError, TypeError, OSError) as exc:
            print(f"error: bad configuration: {exc}", file=sys.stderr)
            return 1
        extra = {}
        if args.command == "evaluate":
            extra = {"predictions": args.predictions, "rankings": args.rankings}
        run = Run(config, extra)
        names = PIPELINE if args.command == "pipeline" else (args.command,)
        code = execute(run, names)
        if code == 0:
            print(f"{args.command}: ok ({run.out})")
        return code
    finally:
        log.removeHandler(console)


if __name__ == "__main__":
    sys.exit(main())
