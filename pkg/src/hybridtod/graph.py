"""Slot-value co-occurrence graph built from training utterances."""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .corpus import CorpusSplit, SlotValue
from .text import DEFAULT_MIN_LENGTH, DEFAULT_STOP_VALUES, ValueMatcher, normalize

SPEAKER_MODES = ("both", "user", "system")


@dataclass(frozen=True)
class MatcherOptions:
    min_length: int = DEFAULT_MIN_LENGTH
    stop_values: tuple[str, ...] = DEFAULT_STOP_VALUES
    aliases: dict = field(default_factory=dict)
    speakers: str = "both"

    @classmethod
    def from_dict(cls, d: dict | None) -> "MatcherOptions":
        d = dict(d or {})
        if "stop_values" in d:
            d["stop_values"] = tuple(d["stop_values"])
        return cls(**d)

    def to_dict(self) -> dict:
        return {
            "min_length": self.min_length,
            "stop_values": list(self.stop_values),
            "aliases": self.aliases,
            "speakers": self.speakers,
        }


@dataclass
class MentionIndex:
    """Per-utterance value matches, kept to audit where each edge came from.

    ``matches[u]`` lists ``(value class, span)`` for utterance ``keys[u]``;
    ``class_vertices[c]`` gives the vertices sharing canonical value ``c``.
    """

    keys: list[tuple[str, int, str]]
    texts: list[str]
    matches: list[list[tuple[int, tuple[int, int]]]]
    class_vertices: list[list[int]]

    def vertex_matches(self, u: int) -> list[tuple[int, tuple[int, int]]]:
        out = []
        for cls, span in self.matches[u]:
            for v in self.class_vertices[cls]:
                out.append((v, span))
        return sorted(out, key=lambda m: (m[0], m[1]))

    def witnesses(self, i: int, j: int) -> list[int]:
        """Utterance indices in which vertices ``i`` and ``j`` are both matched."""
        out = []
        for u in range(len(self.matches)):
            vs = {v for v, _ in self.vertex_matches(u)}
            if i in vs and j in vs:
                out.append(u)
        return out


@dataclass
class CooccurGraph:
    vertices: list[SlotValue]
    edges: list[tuple[int, int, int]]
    mentions: MentionIndex | None = None
    _adj: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def total_weight(self) -> int:
        return sum(w for _, _, w in self.edges)

    def adjacency(self) -> sp.csr_matrix:
        if self._adj is None:
            self._adj = adjacency_matrix(self.n_vertices, self.edges)
        return self._adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_vertices, dtype=np.int64)
        for i, j, _ in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg


def adjacency_matrix(n: int, edges) -> sp.csr_matrix:
    if not edges:
        return sp.csr_matrix((n, n), dtype=np.float64)
    arr = np.asarray(edges, dtype=np.float64)
    i = arr[:, 0].astype(np.int64)
    j = arr[:, 1].astype(np.int64)
    w = arr[:, 2]
    return sp.csr_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n))


def graph_vertices(entities) -> list[SlotValue]:
    """All structured slot-values except the entity name, in registry order."""
    out = []
    for e in entities:
        out.extend(e.slot_values(include_name=False))
    return out


def _value_classes(vertices: list[SlotValue]) -> tuple[list[str], list[list[int]]]:
    classes: dict[str, int] = {}
    members: list[list[int]] = []
    for idx, v in enumerate(vertices):
        c = v.canonical
        if c not in classes:
            classes[c] = len(members)
            members.append([])
        members[classes[c]].append(idx)
    return list(classes), members


def find_mentions(utterance: str, vertices: list[SlotValue], options: MatcherOptions | None = None):
    """Return ``(vertex index, span)`` for every vertex value found in ``utterance``.

    Spans index into the canonical form of the utterance.
    """
    options = options or MatcherOptions()
    values, members = _value_classes(vertices)
    matcher = ValueMatcher(values, options.min_length, options.stop_values, _class_aliases(options.aliases))
    out = []
    for cls, span in matcher.find(normalize(utterance)):
        for v in members[cls]:
            out.append((v, span))
    return sorted(out, key=lambda m: (m[0], m[1]))


def _class_aliases(aliases: dict) -> dict[str, list[str]]:
    return {normalize(k): list(v) for k, v in (aliases or {}).items()}


def training_utterances(split: CorpusSplit, speakers: str = "both") -> list[tuple[tuple[str, int, str], str]]:
    if speakers not in SPEAKER_MODES:
        raise ValueError(f"speakers must be one of {SPEAKER_MODES}, got {speakers!r}")
    out = []
    for d in split.dialogs:
        for t_idx, turn in enumerate(d.turns):
            if speakers in ("both", "user"):
                out.append(((d.id, t_idx, "user"), turn.user))
            if speakers in ("both", "system") and turn.system is not None:
                out.append(((d.id, t_idx, "system"), turn.system))
    return out


def build_graph(
    train_split: CorpusSplit,
    entities,
    options: MatcherOptions | None = None,
    threads: int = 1,
) -> CooccurGraph:
    """Co-occurrence graph over structured slot-values of ``entities``.

    Every unordered pair of distinct vertices matched in the same utterance
    gains one unit of weight.
    """
    options = options or MatcherOptions()
    vertices = graph_vertices(entities)
    values, members = _value_classes(vertices)
    matcher = ValueMatcher(values, options.min_length, options.stop_values, _class_aliases(options.aliases))
    utts = training_utterances(train_split, options.speakers)
    texts = [normalize(t) for _, t in utts]

    if threads > 1 and len(texts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            matches = list(pool.map(matcher.find, texts, chunksize=256))
    else:
        matches = [matcher.find(t) for t in texts]

    # Counts between value classes, expanded to vertices afterwards.
    pair_counts: Counter = Counter()
    self_counts: Counter = Counter()
    for m in matches:
        classes = sorted({cls for cls, _ in m})
        for c in classes:
            self_counts[c] += 1
        for a, b in combinations(classes, 2):
            pair_counts[(a, b)] += 1

    weights: Counter = Counter()
    for (a, b), c in pair_counts.items():
        for va in members[a]:
            for vb in members[b]:
                weights[(min(va, vb), max(va, vb))] += c
    for a, c in self_counts.items():
        for va, vb in combinations(members[a], 2):
            weights[(va, vb)] += c

    edges = sorted((i, j, w) for (i, j), w in weights.items())
    index = MentionIndex([k for k, _ in utts], texts, matches, members)
    return CooccurGraph(vertices, edges, index)


def speaker_mode_summary(train_split: CorpusSplit, entities, options: MatcherOptions | None = None) -> dict:
    """Edge counts under each speaker restriction, for reporting."""
    options = options or MatcherOptions()
    out = {}
    for mode in SPEAKER_MODES:
        opts = MatcherOptions(options.min_length, options.stop_values, options.aliases, mode)
        g = build_graph(train_split, entities, opts)
        out[mode] = {
            "vertices": g.n_vertices,
            "edges": len(g.edges),
            "total_weight": g.total_weight,
            "mentioned_vertices": int((g.degrees() > 0).sum()),
        }
    return out


# -- edge-list file -----------------------------------------------------------


def write_edge_list(graph: CooccurGraph, path) -> None:
    """Vertex table then ``i j w`` lines; tabs separate vertex fields."""
    lines = [f"#vertices {graph.n_vertices}"]
    for idx, v in enumerate(graph.vertices):
        lines.append("\t".join([str(idx), v.entity_id, v.domain, v.slot_type, v.value]))
    lines.append(f"#edges {len(graph.edges)}")
    lines.extend(f"{i} {j} {w}" for i, j, w in graph.edges)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_edge_list(path) -> CooccurGraph:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#vertices "):
        raise ValueError(f"{path}:1: missing '#vertices' header")
    n = int(lines[0].split()[1])
    vertices = []
    for ln, line in enumerate(lines[1 : n + 1], start=2):
        parts = line.split("\t")
        if len(parts) != 5 or int(parts[0]) != len(vertices):
            raise ValueError(f"{path}:{ln}: bad vertex line")
        vertices.append(SlotValue(parts[1], parts[2], parts[3], parts[4]))
    header = lines[n + 1] if len(lines) > n + 1 else ""
    if not header.startswith("#edges "):
        raise ValueError(f"{path}:{n + 2}: missing '#edges' header")
    m = int(header.split()[1])
    edges = []
    for ln, line in enumerate(lines[n + 2 : n + 2 + m], start=n + 3):
        i, j, w = line.split()
        i, j, w = int(i), int(j), int(w)
        if not (0 <= i < j < n) or w < 1:
            raise ValueError(f"{path}:{ln}: bad edge {line!r}")
        edges.append((i, j, w))
    if len(edges) != m:
        raise ValueError(f"{path}: expected {m} edges, found {len(edges)}")
    return CooccurGraph(vertices, edges)
