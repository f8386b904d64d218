from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridtod.corpus import CorpusSplit, Dialog, Entity, SlotValue, Turn
from hybridtod.graph import (
    MatcherOptions,
    build_graph,
    find_mentions,
    read_edge_list,
    speaker_mode_summary,
    write_edge_list,
)

SHORT = {"hotel": "H", "restaurant": "R", "attraction": "A"}

# Enumerated by reading the four kept training dialogs of the mini-corpus
# turn by turn and listing which structured values each utterance mentions.
HAND_EDGES = {
    ("H0.address", "H0.type"): 1,
    ("H0.address", "H2.type"): 1,
    ("H0.area", "H0.type"): 1,
    ("H0.area", "H2.type"): 1,
    ("H0.type", "H2.type"): 2,
    ("H1.pricerange", "H1.type"): 2,
    ("H1.pricerange", "R0.phone"): 1,
    ("H1.pricerange", "R0.price"): 4,
    ("H1.type", "R0.price"): 2,
    ("H2.pricerange", "R1.area"): 2,
    ("H2.pricerange", "R1.cuisine"): 2,
    ("H2.pricerange", "R1.price"): 2,
    ("R0.cuisine", "R2.cuisine"): 2,
    ("R0.phone", "R0.price"): 1,
    ("R1.area", "R1.cuisine"): 2,
    ("R1.area", "R1.price"): 2,
    ("R1.cuisine", "R1.price"): 2,
    ("A1.address", "A1.type"): 1,
}


def label(sv):
    dom, num = sv.entity_id.split("-")
    return f"{SHORT[dom]}{num}.{sv.slot_type}"


@pytest.fixture(scope="module")
def graph(mini):
    return build_graph(mini["train"], mini.entities)


def test_mini_corpus_edges_match_hand_enumeration(graph):
    got = {}
    for i, j, w in graph.edges:
        a, b = sorted([label(graph.vertices[i]), label(graph.vertices[j])])
        got[(a, b)] = w
    want = {tuple(sorted(k)): w for k, w in HAND_EDGES.items()}
    assert got == want
    assert graph.n_vertices == 61


def test_edge_invariants(graph):
    pairs = [(i, j) for i, j, _ in graph.edges]
    assert len(pairs) == len(set(pairs))
    assert all(i < j and w >= 1 for i, j, w in graph.edges)
    assert all(v.slot_type != "name" and v.source == "structured" for v in graph.vertices)
    deg_unit = Counter()
    for i, j, _ in graph.edges:
        deg_unit[i] += 1
        deg_unit[j] += 1
    assert sum(deg_unit.values()) == 2 * len(graph.edges)


def test_every_edge_has_a_witness(graph):
    for i, j, w in graph.edges:
        wit = graph.mentions.witnesses(i, j)
        assert len(wit) == w
        for u in wit:
            text = graph.mentions.texts[u]
            for _, (s, e) in graph.mentions.vertex_matches(u):
                assert 0 <= s < e <= len(text)


def test_find_mentions_address_and_phone():
    verts = [
        SlotValue("hotel-9", "hotel", "address", "21-24 Northampton Road"),
        SlotValue("hotel-9", "hotel", "phone", "01799521660"),
    ]
    got = find_mentions("it is at 21-24 northampton road, phone 01799521660", verts)
    assert sorted(v for v, _ in got) == [0, 1]


def test_find_mentions_empty_and_boundary():
    verts = [SlotValue("r-1", "restaurant", "price", "cheap")]
    assert find_mentions("", verts) == []
    assert find_mentions("cheapside area", verts) == []


def _corpus_for(utterances, entities):
    turns = []
    for k in range(0, len(utterances), 2):
        sys = utterances[k + 1] if k + 1 < len(utterances) else None
        turns.append(Turn(utterances[k], sys, "hotel"))
    return CorpusSplit("train", (Dialog("d1", ("hotel",), tuple(turns), {}, ()),))


ENT = Entity(
    "hotel-1",
    "hotel",
    "alpha lodge",
    {"name": ["alpha lodge"], "area": ["north"], "type": ["guesthouse"], "pricerange": ["cheap"]},
)


def test_triangle_from_one_utterance():
    g = build_graph(_corpus_for(["a cheap guesthouse in the north", "ok"], [ENT]), [ENT])
    assert sorted(w for _, _, w in g.edges) == [1, 1, 1]


def test_repeated_pair_accumulates():
    g = build_graph(_corpus_for(["cheap guesthouse", "a cheap guesthouse"], [ENT]), [ENT])
    assert [w for _, _, w in g.edges] == [2]


def test_speaker_restriction():
    split = _corpus_for(["cheap guesthouse", "north"], [ENT])
    assert len(build_graph(split, [ENT], MatcherOptions(speakers="system")).edges) == 0
    summary = speaker_mode_summary(split, [ENT])
    assert summary["both"]["edges"] == 1 and summary["user"]["edges"] == 1


def test_name_values_never_vertices():
    g = build_graph(_corpus_for(["alpha lodge is cheap", "yes"], [ENT]), [ENT])
    assert all(v.slot_type != "name" for v in g.vertices)
    assert g.edges == []


def test_edge_list_round_trip(graph, tmp_path):
    write_edge_list(graph, tmp_path / "g.tsv")
    back = read_edge_list(tmp_path / "g.tsv")
    assert back.vertices == graph.vertices and back.edges == graph.edges


def test_threads_do_not_change_graph(mini, graph):
    assert build_graph(mini["train"], mini.entities, threads=4).edges == graph.edges


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_removing_a_dialog_never_adds_weight(mini, data):
    dialogs = mini["train"].dialogs
    drop = data.draw(st.integers(0, len(dialogs) - 1))
    full = build_graph(mini["train"], mini.entities)
    part = build_graph(CorpusSplit("train", dialogs[:drop] + dialogs[drop + 1 :]), mini.entities)
    full_w = {(i, j): w for i, j, w in full.edges}
    for i, j, w in part.edges:
        assert w <= full_w.get((i, j), 0)
