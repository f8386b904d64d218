"""Special-token linearization of entities and contexts, and the mixed
retrieval/generation training-example emitter."""

from __future__ import annotations

import json
import logging
import math
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import FAQ, Corpus, Entity
from .seeds import derive_seed

log = logging.getLogger(__name__)

STRUCT = "<struct>"
UNSTRUCT = "<unstruct>"
SLOT = "<slot>"
VAL = "<val>"
DOC = "<doc>"
USER = "<u>"
SYSTEM = "<r>"
ENTITY = "<entity>"
RETRIEVAL_TASK = "<entity_retrieval_task>"
RESPONSE_TASK = "<response_task>"
RELEVANT = "<relevant>"
IRRELEVANT = "<irrelevant>"

SPECIAL_TOKENS = (
    STRUCT, UNSTRUCT, SLOT, VAL, DOC, USER, SYSTEM, ENTITY, RETRIEVAL_TASK, RESPONSE_TASK, RELEVANT, IRRELEVANT,
)
_SPECIAL_SET = frozenset(SPECIAL_TOKENS)
_SPLIT = re.compile("(" + "|".join(re.escape(t) for t in SPECIAL_TOKENS) + ")")

TASKS = {"entity_retrieval": RETRIEVAL_TASK, "response_generation": RESPONSE_TASK}
DEFAULT_CONTEXT_BUDGET = 512


class TokenStream(tuple):
    """Sequence of segments; a segment is either a special token or plain text.

    Text segments are whitespace-collapsed on construction and may not
    contain a special token, which makes :meth:`to_text` / :meth:`from_text`
    an exact round trip.
    """

    def __new__(cls, segments=()):
        out = []
        for seg in segments:
            if seg in _SPECIAL_SET:
                out.append(seg)
                continue
            text = " ".join(str(seg).split())
            if not text:
                continue
            if _SPLIT.search(text):
                raise ValueError(f"special token inside plain text: {text!r}")
            out.append(text)
        return super().__new__(cls, out)

    def __add__(self, other):
        return TokenStream(tuple(self) + tuple(other))

    @staticmethod
    def is_special(seg: str) -> bool:
        return seg in _SPECIAL_SET

    def to_text(self) -> str:
        return " ".join(self)

    @classmethod
    def from_text(cls, text: str) -> "TokenStream":
        return cls(p.strip() for p in _SPLIT.split(text))

    def plain_text(self) -> str:
        return " ".join(s for s in self if s not in _SPECIAL_SET)


def _plain(text: str) -> str:
    if _SPLIT.search(text):
        raise ValueError(f"special token inside plain text: {text!r}")
    return text


def serialize_entity(e: Entity) -> TokenStream:
    segs = [STRUCT]
    for slot, values in e.structured_slots.items():
        for v in values:
            segs += [SLOT, _plain(slot), VAL, _plain(v)]
    segs.append(UNSTRUCT)
    for faq in e.faqs:
        segs += [DOC, _plain(" ".join(p for p in (faq.question, faq.answer) if p))]
    return TokenStream(segs)


def parse_entity(stream) -> Entity:
    """Inverse of :func:`serialize_entity` up to FAQ question/answer boundaries.

    Each document comes back as a single FAQ whose question holds the whole
    document text; ids and domain are not part of the stream.
    """
    if isinstance(stream, str):
        stream = TokenStream.from_text(stream)
    segs = list(stream)
    if not segs or segs[0] != STRUCT:
        raise ValueError("entity block must start with <struct>")
    slots: dict[str, list[str]] = {}
    i = 1
    while i < len(segs) and segs[i] == SLOT:
        slot = segs[i + 1] if i + 1 < len(segs) and segs[i + 1] not in _SPECIAL_SET else ""
        i += 2 if slot else 1
        if i >= len(segs) or segs[i] != VAL:
            raise ValueError(f"expected <val> after slot {slot!r}")
        value = segs[i + 1] if i + 1 < len(segs) and segs[i + 1] not in _SPECIAL_SET else ""
        i += 2 if value else 1
        slots.setdefault(slot, []).append(value)
    if i >= len(segs) or segs[i] != UNSTRUCT:
        raise ValueError("missing <unstruct>")
    i += 1
    faqs = []
    while i < len(segs):
        if segs[i] != DOC:
            raise ValueError(f"unexpected segment {segs[i]!r} in unstructured block")
        doc = segs[i + 1] if i + 1 < len(segs) and segs[i + 1] not in _SPECIAL_SET else ""
        i += 2 if doc else 1
        faqs.append(FAQ(doc, ""))
    name = slots.get("name", [""])[0]
    return Entity("", "", name, slots, tuple(faqs))


def _context_segments(context: list[str], budget: int | None) -> list[str]:
    if not context or len(context) % 2 == 0:
        raise ValueError("context must be u_1, r_1, ..., u_n (odd length, ending with a user turn)")
    ctx = list(context)
    if budget is not None:
        # drop the oldest (u, r) pairs; the final user turn is always kept
        while len(ctx) > 1 and sum(len(u.split()) for u in ctx) > budget:
            ctx = ctx[2:]
    segs = []
    for k, utt in enumerate(ctx):
        segs += [USER if k % 2 == 0 else SYSTEM, _plain(utt)]
    return segs


def build_retrieval_input(context: list[str], entity: Entity, budget: int | None = DEFAULT_CONTEXT_BUDGET) -> TokenStream:
    return TokenStream([RETRIEVAL_TASK] + _context_segments(context, budget) + [ENTITY]) + serialize_entity(entity)


def build_generation_input(context: list[str], entity: Entity, budget: int | None = DEFAULT_CONTEXT_BUDGET) -> TokenStream:
    return TokenStream([RESPONSE_TASK] + _context_segments(context, budget) + [ENTITY]) + serialize_entity(entity)


def parse_input(stream, entities=None) -> tuple[str, list[str], str | None]:
    """Recover ``(task, utterances, entity id)`` from a task input stream.

    The entity id is found by matching the entity block against the
    serialized ``entities``; it is None if no entity matches.
    """
    if isinstance(stream, str):
        stream = TokenStream.from_text(stream)
    segs = list(stream)
    task = next((t for t, tok in TASKS.items() if segs and segs[0] == tok), None)
    if task is None:
        raise ValueError("stream does not start with a task token")
    try:
        ent_pos = segs.index(ENTITY)
    except ValueError:
        raise ValueError("stream has no <entity> token") from None
    turns = []
    i = 1
    while i < ent_pos:
        if segs[i] not in (USER, SYSTEM):
            raise ValueError(f"unexpected segment {segs[i]!r} in context")
        nxt = segs[i + 1] if i + 1 < ent_pos and segs[i + 1] not in _SPECIAL_SET else ""
        turns.append(nxt)
        i += 2 if nxt else 1
    block = tuple(segs[ent_pos + 1 :])
    entity_id = None
    for e in entities or ():
        if tuple(serialize_entity(e)) == block:
            entity_id = e.id
            break
    return task, turns, entity_id


# -- training examples --------------------------------------------------------


@dataclass(frozen=True)
class MixConfig:
    alpha: float = 0.5
    batch_size: int = 8
    positives_per_batch: int = 2
    negatives_per_batch: int = 2

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        n_ret = self.alpha * self.batch_size
        if abs(n_ret - (self.positives_per_batch + self.negatives_per_batch)) > 1e-9:
            raise ValueError(
                f"positives + negatives ({self.positives_per_batch}+{self.negatives_per_batch}) "
                f"must equal alpha * batch_size ({n_ret:g})"
            )

    @classmethod
    def from_alpha(cls, alpha: float, batch_size: int = 8) -> "MixConfig":
        n_ret = round(alpha * batch_size)
        pos = math.ceil(n_ret / 2)
        return cls(alpha, batch_size, pos, n_ret - pos)

    @classmethod
    def from_dict(cls, d: dict | None) -> "MixConfig":
        d = dict(d or {})
        if set(d) <= {"alpha", "batch_size"}:
            return cls.from_alpha(d.get("alpha", 0.5), d.get("batch_size", 8))
        return cls(**d)

    @property
    def generation_per_batch(self) -> int:
        return self.batch_size - self.positives_per_batch - self.negatives_per_batch

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "batch_size": self.batch_size,
            "positives_per_batch": self.positives_per_batch,
            "negatives_per_batch": self.negatives_per_batch,
        }


@dataclass(frozen=True)
class TrainingExample:
    id: str
    task: str
    input: TokenStream
    target: str
    dialog_id: str
    turn_index: int
    entity_id: str

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "task": self.task,
            "input": self.input.to_text(),
            "target": self.target,
            "meta": {"dialog_id": self.dialog_id, "turn_index": self.turn_index, "entity_id": self.entity_id},
        }


@dataclass
class EmitResult:
    batches: list[list[TrainingExample]]
    skipped: list[dict] = field(default_factory=list)


def _draw(rng: random.Random, pool: list[str], k: int) -> list[str]:
    if k <= 0:
        return []
    if len(pool) >= k:
        return rng.sample(pool, k)
    return [rng.choice(pool) for _ in range(k)]


def emit_training_set(
    corpus: Corpus,
    mix: MixConfig | None = None,
    seed: int = 0,
    split: str = "train",
    budget: int | None = DEFAULT_CONTEXT_BUDGET,
) -> EmitResult:
    """One batch per usable context: positives, negatives, then generation examples.

    Positives come from the turn's gold entities and negatives uniformly
    from non-gold entities of the turn's domain (any domain if that pool is
    empty). Each context draws from its own RNG seeded by
    ``(seed, dialog id, turn index)``, so output does not depend on order.
    """
    mix = mix or MixConfig()
    registry = corpus.entity_map()
    batches = []
    skipped = []
    for dialog in corpus[split].dialogs:
        for t_idx, turn in enumerate(dialog.turns):
            if turn.system is None:
                continue
            gold = list(turn.gold_entities)
            if not gold:
                skipped.append({"dialog_id": dialog.id, "turn_index": t_idx, "reason": "no gold entity"})
                continue
            gold_set = set(gold)
            pool = [e.id for e in corpus.entities if e.domain == turn.domain and e.id not in gold_set]
            if not pool:
                pool = [e.id for e in corpus.entities if e.id not in gold_set]
            if not pool and mix.negatives_per_batch > 0:
                skipped.append({"dialog_id": dialog.id, "turn_index": t_idx, "reason": "no negative entity"})
                continue
            rng = random.Random(derive_seed(seed, dialog.id, t_idx))
            positives = _draw(rng, gold, mix.positives_per_batch)
            negatives = _draw(rng, pool, mix.negatives_per_batch)
            generation = [rng.choice(gold) for _ in range(mix.generation_per_batch)]
            context = dialog.context(t_idx)
            batch = []
            plan = [("entity_retrieval", e, RELEVANT) for e in positives]
            plan += [("entity_retrieval", e, IRRELEVANT) for e in negatives]
            plan += [("response_generation", e, turn.system) for e in generation]
            for k, (task, ent_id, target) in enumerate(plan):
                ent = registry[ent_id]
                build = build_retrieval_input if task == "entity_retrieval" else build_generation_input
                batch.append(
                    TrainingExample(
                        f"{dialog.id}#{t_idx}#{k}", task, build(context, ent, budget), target, dialog.id, t_idx, ent_id,
                    )
                )
            batches.append(batch)
    if skipped:
        log.info("skipped %d contexts without usable gold/negative entities", len(skipped))
    return EmitResult(batches, skipped)


def write_training_set(result: EmitResult, out_dir, mix: MixConfig, seed: int, budget: int | None) -> None:
    """``train.jsonl`` (one example per line) plus ``batches.json``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "train.jsonl", "w", encoding="utf-8") as fh:
        for batch in result.batches:
            for ex in batch:
                fh.write(json.dumps(ex.to_json(), ensure_ascii=False) + "\n")
    manifest = {
        "mix": mix.to_dict(),
        "seed": seed,
        "context_budget": budget,
        "context_truncation": "oldest turns first",
        "entity_sampling": "uniform; positives from gold, negatives from non-gold of the same domain",
        "n_batches": len(result.batches),
        "skipped_contexts": result.skipped,
        "batches": [[ex.id for ex in b] for b in result.batches],
    }
    (out_dir / "batches.json").write_text(json.dumps(manifest, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def write_serialized_entities(entities, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entities:
            fh.write(json.dumps({"entity_id": e.id, "text": serialize_entity(e).to_text()}, ensure_ascii=False) + "\n")
