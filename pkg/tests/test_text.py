from hypothesis import given
from hypothesis import strategies as st

from hybridtod.text import ValueMatcher, find_all, normalize, tokenize


def test_normalize():
    assert normalize("  Meze   Bar. ") == "meze bar"
    assert normalize("Hello!?") == "hello"
    assert normalize("") == ""


def test_tokenize_strips_punctuation_per_token():
    assert tokenize("Yes, the centre.") == ["yes", "the", "centre"]


def test_find_all_respects_token_boundaries():
    assert find_all("the bar is near barnwell", "bar") == [(4, 7)]
    assert find_all("a 4 star", "4") == [(2, 3)]
    assert find_all("cb11ln", "cb1") == []


def test_matcher_suppresses_short_and_stop_values():
    m = ValueMatcher(["yes", "4", "centre", "no"])
    found = m.find("yes it is in the centre and has 4 stars no")
    assert [m.values[i] for i, _ in found] == ["centre"]


def test_matcher_overlapping_values_both_found():
    m = ValueMatcher(["city centre", "centre"])
    got = sorted(m.values[i] for i, _ in m.find("in the city centre"))
    assert got == ["centre", "city centre"]


def test_matcher_aliases():
    m = ValueMatcher(["guesthouse"], aliases={"guesthouse": ["guest house"]})
    assert [i for i, _ in m.find("a nice guest house")] == [0]


@given(st.text(alphabet="ab cd", max_size=30), st.sampled_from(["ab", "abc", "cd a"]))
def test_matcher_agrees_with_find_all(text, value):
    m = ValueMatcher([value], min_length=1, stop_values=())
    spans = [span for _, span in m.find(text)]
    assert spans == find_all(text, value)


@given(st.text(max_size=40))
def test_normalize_idempotent(s):
    assert normalize(normalize(s)) == normalize(s)
