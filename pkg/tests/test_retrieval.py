import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridtod.corpus import Entity
from hybridtod.retrieval import (
    evaluation_contexts,
    index_entities,
    read_rankings_tsv,
    run_retrieval,
    score,
    success_at_k,
    write_rankings_tsv,
)

E1 = Entity("r-a", "restaurant", "meze bar", {"name": ["meze bar"], "cuisine": ["turkish"], "area": ["centre"]})
E2 = Entity("r-b", "restaurant", "la margherita", {"name": ["la margherita"], "cuisine": ["italian"], "area": ["west"]})
E3 = Entity(
    "r-c",
    "restaurant",
    "curry garden",
    {"name": ["curry garden"], "cuisine": ["indian"], "area": ["centre"], "price": ["expensive"]},
)
QUERY = "I want a Turkish restaurant, in the centre!"

# Worked by hand: documents of 7, 7 and 9 tokens (avgdl 23/3); "turkish" is
# in one document, "centre" in two, every other query term in none.
IDF_TURKISH = math.log(2.5 / 1.5 + 1)  # ln(8/3)
IDF_CENTRE = math.log(1.5 / 2.5 + 1)  # ln(1.6)
NORM_7 = 0.25 + 0.75 * 21 / 23
NORM_9 = 0.25 + 0.75 * 27 / 23
WANT = [
    ("r-a", (IDF_TURKISH + IDF_CENTRE) * 2.5 / (1 + 1.5 * NORM_7)),
    ("r-c", IDF_CENTRE * 2.5 / (1 + 1.5 * NORM_9)),
    ("r-b", 0.0),
]


def test_bm25_hand_fixture():
    got = score(QUERY, index_entities([E1, E2, E3]))
    assert [e for e, _ in got] == [e for e, _ in WANT]
    for (_, s), (_, w) in zip(got, WANT):
        assert s == pytest.approx(w, abs=1e-9)
    assert WANT[0][1] == pytest.approx(1.5099165742950962, abs=1e-12)
    assert WANT[1][1] == pytest.approx(0.4358904626069322, abs=1e-12)


def test_list_context_equals_joined_string():
    idx = index_entities([E1, E2, E3])
    assert score(["I want a Turkish restaurant,", "in the centre!"], idx) == score(QUERY, idx)


def test_repeated_query_terms_count_once():
    idx = index_entities([E1, E2, E3])
    assert score("turkish turkish centre", idx) == score("turkish centre", idx)


def test_no_overlap_scores_zero_in_id_order():
    got = score("hello there", index_entities([E3, E1, E2]))
    assert got == [("r-a", 0.0), ("r-b", 0.0), ("r-c", 0.0)]


def test_identical_documents_tie_by_id():
    twin = Entity("r-0", "restaurant", "meze bar", dict(E1.structured_slots))
    got = score(QUERY, index_entities([E1, twin, E2]))
    assert [e for e, _ in got[:2]] == ["r-0", "r-a"]
    assert got[0][1] == got[1][1]


def test_empty_index():
    assert score(QUERY, index_entities([])) == []


def test_document_frequency_bounded():
    idx = index_entities([E1, E2, E3])
    assert all(1 <= df <= idx.n_docs for df in idx.doc_freq.values())
    assert idx.doc_lengths == (7, 7, 9)


def test_success_at_k_hand_cases():
    ranking = [("x", 3.0), ("y", 2.0), ("g", 1.0), ("z", 0.5)]
    assert success_at_k([ranking], [{"g"}], 1) == 0.0
    assert success_at_k([ranking], [{"g"}], 2) == 0.0
    assert success_at_k([ranking], [{"g"}], 3) == 1.0
    assert success_at_k([ranking, ranking], [{"x"}, {"q"}], 1) == 0.5
    assert success_at_k([], [], 1) == 0.0
    with pytest.raises(ValueError):
        success_at_k([ranking], [], 1)


def test_success_monotone_in_k(mini):
    contexts, rankings = run_retrieval(mini, "test")
    gold = [g for _, _, g in contexts]
    vals = [success_at_k(rankings, gold, k) for k in range(1, len(mini.entities) + 1)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == 1.0


def test_only_gold_entities_left_gives_perfect_success(mini):
    contexts = evaluation_contexts(mini, "test")
    ents = mini.entity_map()
    for _, query, gold in contexts:
        idx = index_entities([ents[g] for g in gold])
        assert success_at_k([score(query, idx)], [gold], 1) == 1.0


def test_query_modes(mini):
    full = evaluation_contexts(mini, "test", "full_context")
    last = evaluation_contexts(mini, "test", "last_user")
    assert [c for c, _, _ in full] == [c for c, _, _ in last]
    assert all(len(q) == 1 for _, q, _ in last)
    with pytest.raises(ValueError):
        evaluation_contexts(mini, "test", "everything")


def test_rankings_tsv_round_trip(mini, tmp_path):
    contexts, rankings = run_retrieval(mini, "test")
    write_rankings_tsv(contexts, rankings, tmp_path / "r.tsv")
    back = read_rankings_tsv(tmp_path / "r.tsv")
    assert list(back) == [c for c, _, _ in contexts]
    for (cid, _, _), ranking in zip(contexts, rankings):
        assert [e for e, _ in back[cid]] == [e for e, _ in ranking]
        assert all(s == pytest.approx(w, rel=1e-11, abs=1e-12) for (_, s), (_, w) in zip(back[cid], ranking))


words = st.lists(st.sampled_from(["north", "cheap", "thai", "pool", "centre", "museum", "park"]), min_size=1, max_size=4)


@settings(max_examples=80, deadline=None)
@given(st.lists(words, min_size=1, max_size=6), words, st.integers(1, 6))
def test_success_monotone_random(docs, query, gold_idx):
    ents = [Entity(f"e-{i}", "hotel", f"e{i}", {"name": [f"e{i}"], "area": [" ".join(d)]}) for i, d in enumerate(docs)]
    ranking = score(" ".join(query), index_entities(ents))
    gold = {ents[(gold_idx - 1) % len(ents)].id}
    vals = [success_at_k([ranking], [gold], k) for k in range(1, len(ents) + 1)]
    assert vals == sorted(vals) and vals[-1] == 1.0
    assert all(s >= 0 for _, s in ranking)
