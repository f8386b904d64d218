"""Response-generation metrics: corpus BLEU and slot-value precision/recall/F1."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import NAME_SLOT, Corpus, Entity
from .graph import MatcherOptions
from .redistribute import recoverable_values
from .retrieval import context_id, success_at_k
from .text import ValueMatcher, normalize, tokenize


# -- BLEU ---------------------------------------------------------------------


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_components(hypotheses, references, max_n: int = 4) -> dict:
    """Clipped n-gram matches, n-gram totals and lengths summed over the corpus."""
    hypotheses = list(hypotheses)
    references = list(references)
    if len(hypotheses) != len(references):
        raise ValueError("hypotheses and references differ in length")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        h, r = tokenize(hyp), tokenize(ref)
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, max_n + 1):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    return {"matches": matches, "totals": totals, "hyp_len": hyp_len, "ref_len": ref_len}


def bleu(hypotheses, references, max_n: int = 4) -> float:
    """Corpus BLEU on a 0..100 scale with uniform weights over 1..max_n.

    A higher-order precision (n >= 2) with no matches is smoothed to
    ``1 / (total + 1)``; unigram precision is never smoothed, so disjoint
    vocabularies score exactly 0.
    """
    c = bleu_components(hypotheses, references, max_n)
    if c["hyp_len"] == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        m, t = c["matches"][n], c["totals"][n]
        if m == 0:
            if n == 0:
                return 0.0
            p = 1.0 / (t + 1)
        else:
            p = m / t
        log_p += math.log(p) / max_n
    hl, rl = c["hyp_len"], c["ref_len"]
    bp = 1.0 if hl > rl else math.exp(1 - rl / hl)
    return 100.0 * bp * math.exp(log_p)


# -- slot matches -------------------------------------------------------------


def structured_slot_types(schema: dict) -> set[str]:
    """Slot types the structured knowledge source carries before redistribution."""
    types = {NAME_SLOT}
    for mapping in schema.get("slots", {}).values():
        types.update(mapping.values())
    return types


class SlotRegistry:
    """Every known ``(slot_type, canonical value)`` pair, matched as one matcher.

    Built from values recoverable in either knowledge source, so the registry
    is the same for a corpus and any information-preserving variant of it.
    """

    def __init__(self, pairs, types=None, options: MatcherOptions | None = None):
        options = options or MatcherOptions()
        by_value: dict[str, set[str]] = {}
        for slot, value in pairs:
            if types is not None and slot not in types:
                continue
            by_value.setdefault(normalize(value), set()).add(slot)
        self.values = sorted(by_value)
        self.slots = [sorted(by_value[v]) for v in self.values]
        self.matcher = ValueMatcher(
            self.values,
            min_length=options.min_length,
            stop_values=tuple(options.stop_values),
            aliases=options.aliases,
        )

    @classmethod
    def from_entities(cls, entities, templates, types=None, options=None) -> "SlotRegistry":
        pairs = set()
        for e in entities:
            pairs.update(recoverable_values(e, templates))
            pairs.add((NAME_SLOT, normalize(e.name)))
        return cls(sorted(pairs), types, options)

    def __len__(self) -> int:
        return len(self.values)

    def match(self, text: str) -> frozenset:
        canon = normalize(text)
        out = set()
        for idx, _ in self.matcher.find(canon):
            for slot in self.slots[idx]:
                out.add((slot, self.values[idx]))
        return frozenset(out)


def extract_slot_matches(response: str, source, types=None, templates=None, options=None) -> frozenset:
    """``(slot_type, canonical value)`` pairs found in ``response``.

    ``source`` is a single Entity, a list of entities, or a prebuilt
    SlotRegistry. Only slot types in ``types`` are reported when given.
    """
    if isinstance(source, SlotRegistry):
        registry = source
    else:
        if templates is None:
            from .redistribute import load_templates

            templates = load_templates()
        entities = [source] if isinstance(source, Entity) else list(source)
        registry = SlotRegistry.from_entities(entities, templates, types, options)
    found = registry.match(response)
    if types is not None:
        found = frozenset(p for p in found if p[0] in types)
    return found


def slot_prf(predicted, gold) -> tuple[float, float, float]:
    """Micro-averaged precision, recall and F1, each in percent."""
    predicted = list(predicted)
    gold = list(gold)
    if len(predicted) != len(gold):
        raise ValueError("predicted and gold differ in length")
    hit = n_pred = n_gold = 0
    for p, g in zip(predicted, gold):
        p, g = set(p), set(g)
        hit += len(p & g)
        n_pred += len(p)
        n_gold += len(g)
    precision = 100.0 * hit / n_pred if n_pred else 0.0
    recall = 100.0 * hit / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


# -- run evaluation -----------------------------------------------------------


@dataclass(frozen=True)
class EvalRecord:
    context_id: str
    hypothesis: str
    reference: str
    selected_entity_id: str | None = None

    def __post_init__(self):
        if not self.reference:
            raise ValueError(f"{self.context_id}: empty reference")


@dataclass
class MetricsReport:
    bleu1: float
    bleu4: float
    precision: float
    recall: float
    f1: float
    n_records: int
    success: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)
    per_record: list = field(default_factory=list)

    COLUMNS = ("success@1", "success@5", "Bleu-1", "Bleu-4", "prec.", "recall", "F1")

    def row(self) -> dict:
        out = {}
        for k in (1, 5):
            if k in self.success:
                out[f"success@{k}"] = 100.0 * self.success[k]
        out.update(
            {
                "Bleu-1": self.bleu1,
                "Bleu-4": self.bleu4,
                "prec.": self.precision,
                "recall": self.recall,
                "F1": self.f1,
            }
        )
        return out

    def to_json(self) -> dict:
        return {
            "metrics": {k: round(v, 6) for k, v in self.row().items()},
            "n_records": self.n_records,
            "metadata": self.metadata,
        }

    def to_text(self) -> str:
        row = self.row()
        cols = [c for c in self.COLUMNS if c in row]
        widths = [max(len(c), 7) for c in cols]
        head = " | ".join(c.rjust(w) for c, w in zip(cols, widths))
        body = " | ".join(f"{row[c]:.2f}".rjust(w) for c, w in zip(cols, widths))
        return f"{head}\n{'-' * len(head)}\n{body}\n"

    def to_tsv(self) -> str:
        lines = ["context_id\tn_pred\tn_gold\tn_hit"]
        for r in self.per_record:
            lines.append(f"{r['context_id']}\t{r['n_pred']}\t{r['n_gold']}\t{r['n_hit']}")
        return "\n".join(lines) + "\n"


def read_predictions(path) -> list[dict]:
    out = []
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{ln}: {exc.msg}") from None
        if "context_id" not in rec or "hypothesis" not in rec:
            raise ValueError(f"{path}:{ln}: need context_id and hypothesis")
        out.append(rec)
    return out


def references(corpus: Corpus, split: str = "test") -> dict[str, str]:
    """Gold system response for every context-response pair of a split."""
    refs = {}
    for d in corpus[split].dialogs:
        for t_idx, turn in enumerate(d.turns):
            if turn.system is not None:
                refs[context_id(d.id, t_idx)] = turn.system
    return refs


def build_records(predictions, corpus: Corpus, split: str = "test") -> list[EvalRecord]:
    refs = references(corpus, split)
    records = []
    for p in predictions:
        cid = p["context_id"]
        if cid not in refs:
            raise KeyError(f"unknown context id {cid!r} for split {split}")
        records.append(EvalRecord(cid, p["hypothesis"], refs[cid], p.get("selected_entity_id")))
    return records


def evaluate_run(predictions, corpus: Corpus, config: dict | None = None, rankings=None, templates=None) -> MetricsReport:
    """Score generated responses against the corpus references.

    ``predictions`` is a JSONL path or a list of ``{context_id, hypothesis}``
    dicts. ``rankings`` maps context ids to Ranking lists; when given, success@1
    and success@5 are added over contexts that have gold entities.
    """
    config = dict(config or {})
    split = config.get("split", "test")
    if isinstance(predictions, (str, Path)):
        predictions = read_predictions(predictions)
    records = build_records(predictions, corpus, split)
    if templates is None:
        from .redistribute import load_templates

        templates = load_templates(config.get("templates"))
    types = set(config["slot_types"]) if config.get("slot_types") else None
    if types is None:
        from .corpus import load_schema

        types = structured_slot_types(load_schema(config.get("schema")))
    options = MatcherOptions.from_dict(config.get("matcher"))
    registry = SlotRegistry.from_entities(corpus.entities, templates, types, options)

    pred_sets, gold_sets, per_record = [], [], []
    for r in records:
        p = registry.match(r.hypothesis)
        g = registry.match(r.reference)
        pred_sets.append(p)
        gold_sets.append(g)
        per_record.append({"context_id": r.context_id, "n_pred": len(p), "n_gold": len(g), "n_hit": len(p & g)})
    hyps = [r.hypothesis for r in records]
    refs = [r.reference for r in records]
    precision, recall, f1 = slot_prf(pred_sets, gold_sets)

    success = {}
    if rankings is not None:
        gold_entities = {}
        for d in corpus[split].dialogs:
            for t_idx, turn in enumerate(d.turns):
                if turn.system is not None and turn.gold_entities:
                    gold_entities[context_id(d.id, t_idx)] = turn.gold_entities
        cids = sorted(c for c in gold_entities if c in rankings)
        for k in (1, 5):
            success[k] = success_at_k([rankings[c] for c in cids], [gold_entities[c] for c in cids], k)

    metadata = {
        "split": split,
        "bleu": "corpus-level, uniform weights, +1 smoothing on zero higher-order matches",
        "gold_slots": "originally structured values matched in the reference response",
        "slot_types": sorted(types),
        "registry_size": len(registry),
        "query_mode": config.get("query_mode", "full_context") if rankings is not None else None,
        "n_missing": len(references(corpus, split)) - len({r.context_id for r in records}),
    }
    return MetricsReport(
        bleu1=bleu(hyps, refs, 1),
        bleu4=bleu(hyps, refs, 4),
        precision=precision,
        recall=recall,
        f1=f1,
        n_records=len(records),
        success=success,
        metadata=metadata,
        per_record=per_record,
    )
