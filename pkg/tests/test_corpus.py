import json
import shutil

import pytest

from hybridtod.corpus import (
    FAQ,
    Corpus,
    CorpusParseError,
    CorpusSplit,
    Entity,
    ingest,
    load_snapshot,
    minicorpus_dir,
    save_snapshot,
)
from hybridtod.stats import corpus_stats

MANIFEST = json.loads((minicorpus_dir() / "manifest.json").read_text())


def test_entity_counts_match_manifest(mini):
    by_dom = {}
    for e in mini.entities:
        by_dom[e.domain] = by_dom.get(e.domain, 0) + 1
    want = dict(MANIFEST["entities"])
    assert sum(by_dom.values()) == want.pop("total")
    assert by_dom == want


@pytest.mark.parametrize("split", ["train", "validation", "test"])
def test_pair_counts_match_manifest(mini, split):
    assert mini[split].n_pairs == MANIFEST["context_response_pairs"][split]["total"]
    # independent recount: every system turn is a pair
    assert mini[split].n_pairs == sum(1 for d in mini[split].dialogs for t in d.turns if t.system is not None)


def test_dialog_counts_and_drops(mini):
    for split, n in MANIFEST["dialogs"].items():
        assert len(mini[split].dialogs) == n
    assert [d["dialog_id"] for d in mini.report["dropped"]] == MANIFEST["dropped"]
    assert mini.report["quarantine"] == []


def test_gold_entities_match_manifest(mini):
    got = {}
    for split in ("train", "validation", "test"):
        for d in mini[split].dialogs:
            got[d.id] = [list(t.gold_entities) for t in d.turns if t.system is not None]
    assert got == MANIFEST["turn_gold_entities"]


def test_stats_match_manifest(mini):
    rep = corpus_stats(mini)
    for dom, v in MANIFEST["mean_structured_slot_values"].items():
        assert rep.domains[dom]["mean_structured_slot_values"] == pytest.approx(v)
    for dom, v in MANIFEST["mean_faqs"].items():
        assert rep.domains[dom]["mean_faqs"] == pytest.approx(v)
    for split, row in MANIFEST["context_response_pairs"].items():
        assert rep.pairs[split] == row


def test_stats_single_entity():
    e = Entity("hotel-1", "hotel", "x", {"name": ["x"], "area": ["north"], "type": ["hotel"]}, (FAQ("q", "a"), FAQ("q2", "a2")))
    corpus = Corpus({s: CorpusSplit(s, ()) for s in ("train", "validation", "test")}, (e,), {})
    rep = corpus_stats(corpus)
    assert rep.domains["hotel"]["mean_structured_slot_values"] == 3
    assert rep.domains["hotel"]["mean_faqs"] == 2


def test_empty_corpus(tmp_path):
    (tmp_path / "db").mkdir()
    for name in ("train.json", "val.json", "test.json"):
        (tmp_path / name).write_text("{}")
    for dom in ("hotel", "restaurant", "attraction"):
        (tmp_path / "db" / f"{dom}_db.json").write_text("[]")
    corpus = ingest(tmp_path)
    assert corpus.entities == ()
    assert all(len(corpus[s].dialogs) == 0 for s in ("train", "validation", "test"))


def test_parse_error_has_locus(tmp_path):
    shutil.copytree(minicorpus_dir(), tmp_path / "c")
    (tmp_path / "c" / "test.json").write_text('{\n  "x": [1, 2,,]\n}')
    with pytest.raises(CorpusParseError, match=r"test\.json:2:\d+"):
        ingest(tmp_path / "c")


def test_unknown_entity_is_quarantined(tmp_path):
    shutil.copytree(minicorpus_dir(), tmp_path / "c")
    path = tmp_path / "c" / "test.json"
    raw = json.loads(path.read_text())
    dialog_id = sorted(raw)[0]
    for turn in raw[dialog_id]["log"]:
        meta = turn.get("metadata")
        if meta and "restaurant" in meta:
            meta["restaurant"]["semi"]["name"] = "no such place"
    path.write_text(json.dumps(raw))
    corpus = ingest(tmp_path / "c")
    assert [q["dialog_id"] for q in corpus.report["quarantine"]] == [dialog_id]
    assert all(d.id != dialog_id for d in corpus["test"].dialogs)


def test_ingest_deterministic_and_snapshot_round_trip(mini, tmp_path):
    again = ingest(minicorpus_dir())
    assert again == mini
    save_snapshot(mini, tmp_path / "a")
    save_snapshot(load_snapshot(tmp_path / "a"), tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    assert load_snapshot(tmp_path / "a") == mini


def test_restaurant_fields_renamed(mini):
    r = mini.entity_map()["restaurant-0"]
    assert r.structured_slots["cuisine"] == ["turkish"]
    assert r.structured_slots["price"] == ["expensive"]
    assert "food" not in r.structured_slots


def test_values_unique_per_entity(mini):
    for e in mini.entities:
        keys = [(sv.slot_type, sv.canonical) for sv in e.slot_values()]
        assert len(keys) == len(set(keys))
        assert all(sv.canonical for sv in e.slot_values())
