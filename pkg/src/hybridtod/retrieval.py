"""Okapi BM25 entity retrieval over serialized entities, and success@k."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus
from .serialize import serialize_entity
from .text import tokenize

QUERY_MODES = ("full_context", "last_user")


@dataclass(frozen=True)
class EntityIndex:
    entity_ids: tuple[str, ...]
    term_freqs: tuple[Counter, ...]
    doc_lengths: tuple[int, ...]
    doc_freq: dict[str, int]
    avg_doc_length: float
    k1: float = 1.5
    b: float = 0.75

    @property
    def n_docs(self) -> int:
        return len(self.entity_ids)

    def idf(self, term: str) -> float:
        n = self.doc_freq.get(term, 0)
        return math.log((self.n_docs - n + 0.5) / (n + 0.5) + 1.0)


Ranking = list  # of (entity_id, score), sorted by score desc then id asc


def entity_document(entity) -> list[str]:
    return tokenize(serialize_entity(entity).plain_text())


def index_entities(entities, k1: float = 1.5, b: float = 0.75) -> EntityIndex:
    ids, tfs, lens = [], [], []
    df: Counter = Counter()
    for e in entities:
        toks = entity_document(e)
        tf = Counter(toks)
        ids.append(e.id)
        tfs.append(tf)
        lens.append(len(toks))
        df.update(tf.keys())
    avg = sum(lens) / len(lens) if lens else 0.0
    return EntityIndex(tuple(ids), tuple(tfs), tuple(lens), dict(df), avg, k1, b)


def score(context, index: EntityIndex) -> Ranking:
    """Rank every indexed entity against the context.

    ``context`` is a string or a list of utterances (concatenated). Each
    distinct query term contributes ``idf * tf * (k1 + 1) / (tf + k1 * norm)``
    with ``idf = ln((N - df + 0.5) / (df + 0.5) + 1)``.
    """
    text = context if isinstance(context, str) else " ".join(context)
    terms = set(tokenize(text))
    scored = []
    for eid, tf, dl in zip(index.entity_ids, index.term_freqs, index.doc_lengths):
        norm = 1 - index.b + index.b * dl / index.avg_doc_length if index.avg_doc_length else 1.0
        s = 0.0
        for t in terms:
            f = tf.get(t, 0)
            if f:
                s += index.idf(t) * f * (index.k1 + 1) / (f + index.k1 * norm)
        scored.append((eid, s))
    scored.sort(key=lambda p: (-p[1], p[0]))
    return scored


def success_at_k(rankings, gold_sets, k: int) -> float:
    """Fraction of contexts whose top-``k`` entities include a gold entity."""
    rankings = list(rankings)
    gold_sets = list(gold_sets)
    if len(rankings) != len(gold_sets):
        raise ValueError("rankings and gold sets differ in length")
    if not rankings:
        return 0.0
    hits = 0
    for ranking, gold in zip(rankings, gold_sets):
        gold = set(gold)
        if any(eid in gold for eid, _ in ranking[:k]):
            hits += 1
    return hits / len(rankings)


def context_id(dialog_id: str, turn_index: int) -> str:
    return f"{dialog_id}#{turn_index}"


def evaluation_contexts(corpus: Corpus, split: str = "test", mode: str = "full_context"):
    """``(context id, query utterances, gold ids)`` for every turn with gold entities."""
    if mode not in QUERY_MODES:
        raise ValueError(f"query mode must be one of {QUERY_MODES}")
    out = []
    for d in corpus[split].dialogs:
        for t_idx, turn in enumerate(d.turns):
            if turn.system is None or not turn.gold_entities:
                continue
            query = d.context(t_idx) if mode == "full_context" else [turn.user]
            out.append((context_id(d.id, t_idx), query, tuple(turn.gold_entities)))
    return out


def run_retrieval(corpus: Corpus, split: str = "test", mode: str = "full_context", k1: float = 1.5, b: float = 0.75):
    index = index_entities(corpus.entities, k1, b)
    contexts = evaluation_contexts(corpus, split, mode)
    rankings = [score(q, index) for _, q, _ in contexts]
    return contexts, rankings


def write_rankings_tsv(contexts, rankings, path, top_k: int | None = None) -> None:
    lines = ["context_id\trank\tentity_id\tscore"]
    for (cid, _, _), ranking in zip(contexts, rankings):
        for r, (eid, s) in enumerate(ranking[:top_k] if top_k else ranking, start=1):
            lines.append(f"{cid}\t{r}\t{eid}\t{s:.12g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_rankings_tsv(path) -> dict[str, Ranking]:
    out: dict[str, list] = {}
    rows = Path(path).read_text(encoding="utf-8").splitlines()[1:]
    for row in rows:
        cid, rank, eid, s = row.split("\t")
        out.setdefault(cid, []).append((int(rank), eid, float(s)))
    return {cid: [(eid, s) for _, eid, s in sorted(v)] for cid, v in out.items()}
