"""Move one side of the cut from structured slots into template-rendered FAQs."""

from __future__ import annotations

import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .corpus import FAQ, NAME_SLOT, Corpus, Entity, dump_json
from .seeds import derive_seed
from .text import normalize

MODES = ("hybrid", "unstructured_all", "none")
_PLACEHOLDER = re.compile(r"\$\{([^}]+)\}")
ENTITY_PLACEHOLDER = "entity name"


class PlanError(ValueError):
    pass


class TemplateError(ValueError):
    pass


@dataclass(frozen=True)
class TemplatePair:
    id: str
    slot_type: str
    question_template: str
    answer_template: str

    @property
    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER.findall(self.question_template)) | set(_PLACEHOLDER.findall(self.answer_template))

    def render(self, entity_name: str, value: str) -> FAQ:
        def fill(t):
            t = t.replace("${" + ENTITY_PLACEHOLDER + "}", entity_name)
            return t.replace("${" + self.slot_type + "}", normalize(value))

        return FAQ(fill(self.question_template), fill(self.answer_template))

    def answer_regex(self, entity_name: str) -> re.Pattern:
        """Regex over a canonical answer; group ``value`` captures the slot value."""
        sentinel_slot, sentinel_name = "\x00slot\x00", "\x00name\x00"
        t = self.answer_template.replace("${" + ENTITY_PLACEHOLDER + "}", sentinel_name)
        t = normalize(t.replace("${" + self.slot_type + "}", sentinel_slot))
        parts = []
        for chunk in re.split("(\x00slot\x00|\x00name\x00)", t):
            if chunk == sentinel_slot:
                parts.append("(?P<value>.+?)")
            elif chunk == sentinel_name:
                parts.append(re.escape(normalize(entity_name)))
            else:
                parts.append(re.escape(chunk))
        return re.compile("^" + "".join(parts) + "$")


def _validate(tp: TemplatePair) -> None:
    allowed = {ENTITY_PLACEHOLDER, tp.slot_type}
    extra = tp.placeholders - allowed
    if extra:
        raise TemplateError(f"template {tp.id}: unknown placeholders {sorted(extra)}")
    if "${" + tp.slot_type + "}" not in tp.answer_template:
        raise TemplateError(f"template {tp.id}: answer lacks ${{{tp.slot_type}}}")


def parse_templates(raw: dict) -> dict[str, list[TemplatePair]]:
    out = {}
    for slot, items in raw["templates"].items():
        pairs = []
        for k, item in enumerate(items):
            tp = TemplatePair(f"{slot}-{k}", slot, item["question"], item["answer"])
            _validate(tp)
            pairs.append(tp)
        if not pairs:
            raise TemplateError(f"slot type {slot!r} has no templates")
        out[slot] = pairs
    return out


def load_templates(path=None) -> dict[str, list[TemplatePair]]:
    """Templates keyed by slot type; the bundled set when ``path`` is None."""
    if path is None:
        text = resources.files("hybridtod").joinpath("data/templates.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_templates(json.loads(text))


def recover_from_answer(answer: str, entity_name: str, templates) -> list[tuple[str, str]]:
    """``(slot_type, canonical value)`` pairs some template could have rendered."""
    canon = normalize(answer)
    found = []
    for slot, pairs in templates.items():
        for tp in pairs:
            m = tp.answer_regex(entity_name).match(canon)
            if m:
                found.append((slot, normalize(m.group("value"))))
    return sorted(set(found))


def recoverable_values(entity: Entity, templates) -> Counter:
    """Multiset of ``(slot_type, canonical value)`` held by the entity in either source."""
    got = Counter()
    for slot, values in entity.structured_slots.items():
        for v in values:
            got[(slot, normalize(v))] += 1
    for faq in entity.faqs:
        for pair in recover_from_answer(faq.answer, entity.name, templates):
            got[pair] += 1
    return got


# -- plans --------------------------------------------------------------------


@dataclass(frozen=True)
class Move:
    entity_id: str
    slot_type: str
    value: str
    template_id: str | None = None
    seed: int | None = None


@dataclass(frozen=True)
class RedistributionPlan:
    mode: str
    moves: tuple[Move, ...]
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "metadata": self.metadata,
            "moves": [
                {"entity_id": m.entity_id, "slot_type": m.slot_type, "value": m.value, "template_id": m.template_id,
                 "seed": m.seed}
                for m in self.moves
            ],
        }

    @classmethod
    def from_json(cls, d: dict) -> "RedistributionPlan":
        moves = tuple(Move(m["entity_id"], m["slot_type"], m["value"], m.get("template_id"), m.get("seed")) for m in d["moves"])
        return cls(d["mode"], moves, d.get("metadata", {}))


def _affected_utterances(graph, vertex_ids: set[int]) -> int:
    idx = graph.mentions
    count = 0
    for u in range(len(idx.matches)):
        if any(v in vertex_ids for cls, _ in idx.matches[u] for v in idx.class_vertices[cls]):
            count += 1
    return count


def plan_from_cut(cut, graph, mode: str = "hybrid", entities=None) -> RedistributionPlan:
    """Turn a cut into a list of slot-values to move.

    In hybrid mode only vertices with at least one edge can move. Side 1
    moves unless both sides hold the same number of such vertices, in which
    case the side touching more training utterances moves (side 1 on a tie).
    """
    if mode not in MODES:
        raise PlanError(f"unknown mode {mode!r}")
    vertices = graph.vertices
    metadata: dict = {"mode": mode}
    if mode == "none":
        chosen = []
    elif mode == "unstructured_all":
        chosen = list(range(len(vertices)))
    else:
        if cut is None or len(cut.side) != len(vertices):
            raise PlanError("cut does not cover the graph vertices")
        deg = graph.degrees()
        mentioned = [v for v in range(len(vertices)) if deg[v] > 0]
        sides = {s: {v for v in mentioned if cut.side[v] == s} for s in (0, 1)}
        moving = 1
        if len(sides[0]) == len(sides[1]) and sides[1]:
            if graph.mentions is not None:
                a0 = _affected_utterances(graph, sides[0])
                a1 = _affected_utterances(graph, sides[1])
                metadata["affected_utterances"] = {"0": a0, "1": a1}
                moving = 0 if a0 > a1 else 1
            else:
                metadata["affected_utterances"] = None
        metadata["moving_side"] = moving
        metadata["side_sizes"] = {"0": len(sides[0]), "1": len(sides[1])}
        metadata["unmentioned_kept"] = len(vertices) - len(mentioned)
        chosen = sorted(sides[moving])

    registry = {e.id: e for e in entities} if entities is not None else None
    moves = []
    seen = set()
    for v in chosen:
        sv = vertices[v]
        if sv.slot_type == NAME_SLOT:
            raise PlanError(f"vertex {v} is a name slot and cannot move")
        key = (sv.entity_id, sv.slot_type, sv.canonical)
        if key in seen:
            raise PlanError(f"duplicate move for {key}")
        seen.add(key)
        if registry is not None:
            ent = registry.get(sv.entity_id)
            if ent is None or not ent.has_value(sv.slot_type, sv.canonical):
                raise PlanError(f"vertex {v} ({sv.entity_id}, {sv.slot_type}={sv.value!r}) not in entity registry")
        moves.append(Move(sv.entity_id, sv.slot_type, sv.value))
    metadata["n_moves"] = len(moves)
    return RedistributionPlan(mode, tuple(moves), metadata)


def plan_unstructured_all(entities) -> RedistributionPlan:
    moves = tuple(Move(sv.entity_id, sv.slot_type, sv.value) for e in entities for sv in e.slot_values(include_name=False))
    return RedistributionPlan("unstructured_all", moves, {"mode": "unstructured_all", "n_moves": len(moves)})


def apply_plan(corpus: Corpus, plan: RedistributionPlan, templates, seed: int = 0) -> tuple[Corpus, RedistributionPlan]:
    """Return the redistributed corpus and the plan with template choices filled in.

    Dialogs are carried over untouched; only entities change.
    """
    missing = sorted({m.slot_type for m in plan.moves} - set(templates))
    if missing:
        raise TemplateError(f"no templates for slot types: {missing}")
    registry = {e.id: e for e in corpus.entities}
    by_entity: dict[str, list[Move]] = {}
    for m in plan.moves:
        if m.entity_id not in registry:
            raise PlanError(f"move references unknown entity {m.entity_id!r}")
        by_entity.setdefault(m.entity_id, []).append(m)

    applied: list[Move] = []
    new_entities = []
    for ent in corpus.entities:
        moves = by_entity.get(ent.id)
        if not moves:
            new_entities.append(ent)
            continue
        slots = {k: list(v) for k, v in ent.structured_slots.items()}
        faqs = list(ent.faqs)
        for m in moves:
            canon = normalize(m.value)
            values = slots.get(m.slot_type, [])
            pos = next((i for i, v in enumerate(values) if normalize(v) == canon), None)
            if pos is None:
                raise PlanError(f"{ent.id} has no {m.slot_type}={m.value!r} to move")
            del values[pos]
            if not values:
                del slots[m.slot_type]
            move_seed = derive_seed(seed, ent.id, m.slot_type, canon)
            tp = random.Random(move_seed).choice(templates[m.slot_type])
            faqs.append(tp.render(ent.name, canon))
            applied.append(Move(m.entity_id, m.slot_type, m.value, tp.id, move_seed))
        new_entities.append(Entity(ent.id, ent.domain, ent.name, slots, tuple(faqs)))

    metadata = dict(plan.metadata)
    metadata["seed"] = seed
    return corpus.with_entities(new_entities), RedistributionPlan(plan.mode, tuple(applied), metadata)


# -- checks -------------------------------------------------------------------


@dataclass
class PreservationReport:
    loss: list[dict] = field(default_factory=list)
    spurious: list[dict] = field(default_factory=list)
    name_violations: list[str] = field(default_factory=list)
    entities_checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.loss and not self.name_violations

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "entities_checked": self.entities_checked,
            "loss": self.loss,
            "name_violations": self.name_violations,
            "spurious": self.spurious,
        }


def verify_information_preservation(original, variant, templates=None) -> PreservationReport:
    """Check every original structured value is still recoverable from the variant.

    A value counts as recovered if it is still a structured slot, or if an
    FAQ answer parses as one of that slot type's templates with that value.
    """
    templates = templates if templates is not None else load_templates()
    orig_ents = original.entities if isinstance(original, Corpus) else tuple(original)
    var_ents = {e.id: e for e in (variant.entities if isinstance(variant, Corpus) else variant)}
    report = PreservationReport()
    for ent in orig_ents:
        report.entities_checked += 1
        expected = Counter((s, normalize(v)) for s, vals in ent.structured_slots.items() for v in vals)
        var = var_ents.get(ent.id)
        if var is None:
            for (slot, value), n in sorted(expected.items()):
                report.loss.append({"entity_id": ent.id, "slot_type": slot, "value": value, "count": n})
            continue
        if normalize(var.name) != normalize(ent.name) or not var.has_value(NAME_SLOT, normalize(ent.name)):
            report.name_violations.append(ent.id)
        got = recoverable_values(var, templates)
        for (slot, value), n in sorted((expected - got).items()):
            report.loss.append({"entity_id": ent.id, "slot_type": slot, "value": value, "count": n})
        for (slot, value), n in sorted((got - expected).items()):
            report.spurious.append({"entity_id": ent.id, "slot_type": slot, "value": value, "count": n})
    return report


def moved_fractions(original_entities, plan: RedistributionPlan) -> dict[str, dict]:
    """Per slot type: how many values exist, how many moved, and the fraction."""
    totals = Counter(sv.slot_type for e in original_entities for sv in e.slot_values(include_name=False))
    moved = Counter(m.slot_type for m in plan.moves)
    return {
        slot: {"values": totals[slot], "moved": moved[slot], "fraction": moved[slot] / totals[slot]}
        for slot in sorted(totals)
    }


def save_plan(plan: RedistributionPlan, path) -> None:
    dump_json(plan.to_json(), Path(path))


def load_plan(path) -> RedistributionPlan:
    return RedistributionPlan.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
