"""Dialog corpus data model, raw-corpus ingestion and snapshot I/O.

Raw input follows MultiWOZ 2.1 dialogs plus DSTC9-style FAQ knowledge (see
``data/FORMAT.md``). Everything downstream reads and writes the canonical
snapshot layout produced by :func:`save_snapshot`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .text import normalize

log = logging.getLogger(__name__)

DOMAINS = ("hotel", "restaurant", "attraction")
SPLITS = ("train", "validation", "test")
NAME_SLOT = "name"

_RAW_SPLIT_FILES = {
    "train": ("train.json",),
    "validation": ("val.json", "validation.json"),
    "test": ("test.json",),
}
_NON_DOMAIN_GOAL_KEYS = {"message", "topic"}


class CorpusParseError(ValueError):
    """Malformed input file; the message carries a ``file:line:col`` locus."""


@dataclass(frozen=True)
class SlotValue:
    entity_id: str
    domain: str
    slot_type: str
    value: str
    source: str = "structured"

    @property
    def canonical(self) -> str:
        return normalize(self.value)


@dataclass(frozen=True)
class FAQ:
    question: str
    answer: str


@dataclass(frozen=True)
class Entity:
    id: str
    domain: str
    name: str
    structured_slots: dict[str, list[str]]
    faqs: tuple[FAQ, ...] = ()

    def slot_values(self, include_name: bool = True) -> list[SlotValue]:
        out = []
        for slot, values in self.structured_slots.items():
            if slot == NAME_SLOT and not include_name:
                continue
            for v in values:
                out.append(SlotValue(self.id, self.domain, slot, v))
        return out

    def has_value(self, slot: str, canonical_value: str) -> bool:
        return any(normalize(v) == canonical_value for v in self.structured_slots.get(slot, ()))


@dataclass(frozen=True)
class Turn:
    """One context-response pair: a user utterance and the system reply."""

    user: str
    system: str | None
    domain: str | None = None
    constraints: dict[str, str] = field(default_factory=dict)
    gold_entities: tuple[str, ...] = ()


@dataclass(frozen=True)
class Dialog:
    id: str
    domains: tuple[str, ...]
    turns: tuple[Turn, ...]
    goal_constraints: dict[str, dict[str, str]] = field(default_factory=dict)
    gold_entities: tuple[str, ...] = ()

    @property
    def n_pairs(self) -> int:
        return sum(1 for t in self.turns if t.system is not None)

    def context(self, turn_index: int) -> list[str]:
        """Utterances ``u_1, r_1, ..., u_n`` ending in user turn ``turn_index``."""
        utts = []
        for t in self.turns[:turn_index]:
            utts.append(t.user)
            utts.append(t.system or "")
        utts.append(self.turns[turn_index].user)
        return utts


@dataclass(frozen=True)
class CorpusSplit:
    name: str
    dialogs: tuple[Dialog, ...]

    @property
    def n_pairs(self) -> int:
        return sum(d.n_pairs for d in self.dialogs)


@dataclass(frozen=True)
class Corpus:
    splits: dict[str, CorpusSplit]
    entities: tuple[Entity, ...]
    report: dict = field(default_factory=dict)

    def __getitem__(self, split: str) -> CorpusSplit:
        return self.splits[split]

    def entity_map(self) -> dict[str, Entity]:
        return {e.id: e for e in self.entities}

    def with_entities(self, entities) -> "Corpus":
        return Corpus(dict(self.splits), tuple(entities), dict(self.report))


# -- schema -------------------------------------------------------------------


def default_schema() -> dict:
    text = resources.files("hybridtod").joinpath("data/schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_schema(path=None) -> dict:
    schema = default_schema()
    if path is not None:
        user = _read_json(Path(path))
        schema.update(user)
    return schema


# -- raw ingestion ------------------------------------------------------------


def _read_json(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusParseError(f"{path}: cannot read: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def _as_values(raw) -> list[str]:
    if raw is None:
        return []
    if isinstance(raw, (list, tuple)):
        vals = []
        for r in raw:
            vals.extend(_as_values(r))
        return vals
    if isinstance(raw, (dict,)):
        return []
    return [" ".join(str(raw).split())]


def _load_entities(corpus_dir: Path, schema: dict) -> list[Entity]:
    entities: list[Entity] = []
    for domain in schema["domains"]:
        path = corpus_dir / "db" / f"{domain}_db.json"
        if not path.exists():
            continue
        records = _read_json(path)
        if not isinstance(records, list):
            raise CorpusParseError(f"{path}:1:1: expected a list of entity records")
        field_map: dict = schema["slots"][domain]
        by_name: dict[str, int] = {}
        for idx, rec in enumerate(records):
            if not isinstance(rec, dict) or "name" not in rec:
                raise CorpusParseError(f"{path}: record {idx} has no 'name' field")
            slots: dict[str, list[str]] = {}
            for db_field, slot in field_map.items():
                seen = set()
                for v in _as_values(rec.get(db_field)):
                    c = normalize(v)
                    if c and c not in seen:
                        seen.add(c)
                        slots.setdefault(slot, []).append(v)
            name_vals = slots.get(NAME_SLOT)
            if not name_vals:
                raise CorpusParseError(f"{path}: record {idx} has an empty name")
            key = normalize(name_vals[0])
            if key in by_name:
                # merge duplicate registry rows into the first occurrence
                first = entities[by_name[key]]
                for slot, vals in slots.items():
                    have = {normalize(v) for v in first.structured_slots.get(slot, [])}
                    for v in vals:
                        if normalize(v) not in have:
                            first.structured_slots.setdefault(slot, []).append(v)
                continue
            ent_id = f"{domain}-{rec.get('id', idx)}"
            by_name[key] = len(entities)
            entities.append(Entity(ent_id, domain, name_vals[0], slots))
    return entities


def _attach_faqs(corpus_dir: Path, entities: list[Entity], report: dict) -> list[Entity]:
    path = corpus_dir / "knowledge.json"
    if not path.exists():
        return entities
    knowledge = _read_json(path)
    if not isinstance(knowledge, dict):
        raise CorpusParseError(f"{path}:1:1: expected an object keyed by domain")
    index = {(e.domain, normalize(e.name)): i for i, e in enumerate(entities)}
    faqs: dict[int, list[FAQ]] = {}
    for domain, items in knowledge.items():
        if not isinstance(items, dict):
            raise CorpusParseError(f"{path}: domain '{domain}' is not an object")
        for key, item in items.items():
            name = item.get("name")
            if name is None:
                continue
            pos = index.get((domain, normalize(name)))
            if pos is None:
                report.setdefault("orphan_faq_entities", []).append(f"{domain}/{name}")
                continue
            docs = item.get("docs", {})
            for doc_key in sorted(docs, key=_doc_sort_key):
                doc = docs[doc_key]
                faqs.setdefault(pos, []).append(FAQ(str(doc["title"]).strip(), str(doc["body"]).strip()))
    return [
        Entity(e.id, e.domain, e.name, e.structured_slots, tuple(faqs.get(i, ()))) for i, e in enumerate(entities)
    ]


def _doc_sort_key(key):
    return (0, int(key), "") if str(key).isdigit() else (1, 0, str(key))


def _act_domains(turn: dict) -> list[str]:
    acts = turn.get("dialog_act") or {}
    out = []
    for act in acts:
        dom = act.split("-", 1)[0].lower()
        if dom not in ("general", "booking") and dom not in out:
            out.append(dom)
    return out


class _DialogBuilder:
    def __init__(self, schema: dict, entities: list[Entity]):
        self.schema = schema
        self.domains = tuple(schema["domains"])
        self.knowledge_domains = set(schema.get("knowledge_domains", self.domains))
        self.policy = schema.get("foreign_domain_policy", "keep")
        self.ignored = {normalize(v) for v in schema.get("ignored_belief_values", [])}
        self.by_domain: dict[str, list[Entity]] = {}
        for e in entities:
            self.by_domain.setdefault(e.domain, []).append(e)

    def goal_domains(self, raw: dict) -> list[str]:
        goal = raw.get("goal") or {}
        doms = [k for k, v in goal.items() if k not in _NON_DOMAIN_GOAL_KEYS and v]
        if not doms:
            for turn in raw.get("log", []):
                for d in _act_domains(turn):
                    if d not in doms:
                        doms.append(d)
        return doms

    def constraints(self, metadata: dict, domain: str) -> dict[str, str]:
        semi = ((metadata or {}).get(domain) or {}).get("semi") or {}
        belief_map = self.schema["belief_slots"].get(domain, {})
        out = {}
        for key, value in semi.items():
            slot = belief_map.get(key)
            if slot is None or not isinstance(value, str):
                continue
            c = normalize(value)
            if c in self.ignored:
                continue
            out[slot] = c
        return out

    def gold(self, domain: str, constraints: dict[str, str]) -> tuple[str, ...]:
        if not constraints:
            return ()
        return tuple(
            e.id
            for e in self.by_domain.get(domain, ())
            if all(e.has_value(s, v) for s, v in constraints.items())
        )

    def build(self, dialog_id: str, raw: dict, path: Path):
        """Return ``(dialog, None)``, ``(None, drop_reason)`` or raise."""
        if not isinstance(raw, dict) or not isinstance(raw.get("log"), list):
            raise CorpusParseError(f"{path}: dialog '{dialog_id}' has no 'log' list")
        goal_doms = self.goal_domains(raw)
        in_set = [d for d in goal_doms if d in self.domains]
        if not in_set:
            return None, "dropped: no hotel/restaurant/attraction domain"
        foreign = [d for d in goal_doms if d not in self.domains]
        if any(d in self.knowledge_domains for d in foreign):
            return None, "dropped: knowledge-bearing domain outside scope"
        if foreign and self.policy == "drop":
            return None, "dropped: foreign domain (policy=drop)"

        log_turns = raw["log"]
        turns = []
        goal_constraints: dict[str, dict[str, str]] = {}
        prev_domain = None
        prev_meta: dict = {}
        for i in range(0, len(log_turns), 2):
            user = log_turns[i]
            sys_turn = log_turns[i + 1] if i + 1 < len(log_turns) else None
            if "text" not in user or (sys_turn is not None and "text" not in sys_turn):
                raise CorpusParseError(f"{path}: dialog '{dialog_id}' turn {i} has no 'text'")
            meta = (sys_turn or {}).get("metadata") or {}
            domain = self._turn_domain(user, sys_turn, meta, prev_meta, in_set)
            foreign_turn = domain is not None and domain not in self.domains
            cons: dict[str, str] = {}
            gold: tuple[str, ...] = ()
            if domain is not None and not foreign_turn:
                cons = self.constraints(meta, domain)
                if NAME_SLOT in cons and not any(
                    normalize(e.name) == cons[NAME_SLOT] for e in self.by_domain.get(domain, ())
                ):
                    return None, f"quarantine: unknown {domain} entity '{cons[NAME_SLOT]}'"
                gold = self.gold(domain, cons)
                if cons:
                    goal_constraints[domain] = cons
            attributed = domain if (domain in self.domains) else (prev_domain or in_set[0])
            turns.append(
                Turn(
                    user=user["text"].strip(),
                    system=None if sys_turn is None else sys_turn["text"].strip(),
                    domain=attributed,
                    constraints=cons,
                    gold_entities=gold,
                )
            )
            prev_domain = attributed
            prev_meta = meta
        dialog_gold: list[str] = []
        for t in turns:
            for g in t.gold_entities:
                if g not in dialog_gold:
                    dialog_gold.append(g)
        return Dialog(dialog_id, tuple(in_set), tuple(turns), goal_constraints, tuple(dialog_gold)), None

    def _turn_domain(self, user, sys_turn, meta, prev_meta, in_set):
        for turn in (user, sys_turn):
            if turn is None:
                continue
            doms = _act_domains(turn)
            if doms:
                known = [d for d in doms if d in self.domains]
                return known[0] if known else doms[0]
        for d in in_set:
            if self.constraints(meta, d) != self.constraints(prev_meta, d):
                return d
        return None


def ingest(corpus_dir, schema_config=None) -> Corpus:
    """Read a raw corpus directory into an in-memory :class:`Corpus`.

    Dialogs outside hotel/restaurant/attraction are dropped; dialogs that
    reference an unknown entity name are quarantined (reported, not fatal).
    """
    corpus_dir = Path(corpus_dir)
    schema = schema_config if isinstance(schema_config, dict) else load_schema(schema_config)
    report: dict = {"dropped": [], "quarantine": []}
    entities = _load_entities(corpus_dir, schema)
    entities = _attach_faqs(corpus_dir, entities, report)
    builder = _DialogBuilder(schema, entities)
    splits = {}
    for split, names in _RAW_SPLIT_FILES.items():
        path = next((corpus_dir / n for n in names if (corpus_dir / n).exists()), None)
        dialogs = []
        if path is not None:
            raw = _read_json(path)
            if not isinstance(raw, dict):
                raise CorpusParseError(f"{path}:1:1: expected an object keyed by dialog id")
            for dialog_id in sorted(raw):
                dialog, reason = builder.build(dialog_id, raw[dialog_id], path)
                if dialog is not None:
                    dialogs.append(dialog)
                elif reason.startswith("quarantine"):
                    report["quarantine"].append({"split": split, "dialog_id": dialog_id, "reason": reason})
                else:
                    report["dropped"].append({"split": split, "dialog_id": dialog_id, "reason": reason})
        splits[split] = CorpusSplit(split, tuple(dialogs))
    if report["quarantine"]:
        log.warning("quarantined %d dialogs", len(report["quarantine"]))
    return Corpus(splits, tuple(entities), report)


# -- snapshot I/O -------------------------------------------------------------


def entity_to_json(e: Entity) -> dict:
    return {
        "id": e.id,
        "domain": e.domain,
        "name": e.name,
        "structured_slots": {k: list(v) for k, v in e.structured_slots.items()},
        "faqs": [{"question": f.question, "answer": f.answer} for f in e.faqs],
    }


def entity_from_json(d: dict) -> Entity:
    return Entity(
        d["id"],
        d["domain"],
        d["name"],
        {k: list(v) for k, v in d["structured_slots"].items()},
        tuple(FAQ(f["question"], f["answer"]) for f in d.get("faqs", [])),
    )


def _dialog_to_json(d: Dialog) -> dict:
    return {
        "id": d.id,
        "domains": list(d.domains),
        "goal_constraints": d.goal_constraints,
        "gold_entities": list(d.gold_entities),
        "turns": [
            {
                "user": t.user,
                "system": t.system,
                "domain": t.domain,
                "constraints": t.constraints,
                "gold_entities": list(t.gold_entities),
            }
            for t in d.turns
        ],
    }


def _dialog_from_json(d: dict) -> Dialog:
    turns = tuple(
        Turn(t["user"], t["system"], t.get("domain"), dict(t.get("constraints", {})), tuple(t.get("gold_entities", ())))
        for t in d["turns"]
    )
    return Dialog(
        d["id"], tuple(d["domains"]), turns, {k: dict(v) for k, v in d.get("goal_constraints", {}).items()},
        tuple(d.get("gold_entities", ())),
    )


def dump_json(obj, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")


def save_snapshot(corpus: Corpus, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_json({"entities": [entity_to_json(e) for e in corpus.entities]}, out_dir / "entities.json")
    for name in SPLITS:
        split = corpus.splits.get(name, CorpusSplit(name, ()))
        dump_json({"split": name, "dialogs": [_dialog_to_json(d) for d in split.dialogs]}, out_dir / f"{name}.json")
    dump_json(corpus.report, out_dir / "ingest_report.json")
    return out_dir


def is_snapshot(path) -> bool:
    path = Path(path)
    return (path / "entities.json").exists() and (path / "train.json").exists()


def load_snapshot(snapshot_dir) -> Corpus:
    snapshot_dir = Path(snapshot_dir)
    ents = _read_json(snapshot_dir / "entities.json")
    entities = tuple(entity_from_json(e) for e in ents["entities"])
    splits = {}
    for name in SPLITS:
        path = snapshot_dir / f"{name}.json"
        raw = _read_json(path) if path.exists() else {"dialogs": []}
        splits[name] = CorpusSplit(name, tuple(_dialog_from_json(d) for d in raw["dialogs"]))
    report_path = snapshot_dir / "ingest_report.json"
    report = _read_json(report_path) if report_path.exists() else {}
    return Corpus(splits, entities, report)


def load_corpus(path, schema_config=None) -> Corpus:
    """Load a snapshot directory, or ingest a raw corpus directory."""
    return load_snapshot(path) if is_snapshot(path) else ingest(path, schema_config)


def minicorpus_dir() -> Path:
    return Path(str(resources.files("hybridtod").joinpath("data/minicorpus")))
