import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridtod import maxcut
from hybridtod.maxcut import (
    CutResult,
    SimpleGraph,
    SolverConfig,
    SolverError,
    brute_force_maxcut,
    cut_value,
    maxcut_pipeline,
    refine_1flip,
    round_cut,
    solve_bm,
)


def naive_maxcut(g, weighted=False):
    """Independent oracle: try every assignment."""
    edges = [(i, j, w if weighted else 1) for i, j, w in g.edges]
    best = 0
    for bits in itertools.product((0, 1), repeat=g.n_vertices):
        best = max(best, sum(w for i, j, w in edges if bits[i] != bits[j]))
    return best


def er_graph(n, p, seed):
    return SimpleGraph.from_networkx(nx.gnp_random_graph(n, p, seed=seed))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.floats(0.0, 1.0), st.integers(0, 10_000), st.booleans())
def test_brute_force_matches_naive_enumeration(n, p, seed, weighted):
    g = nx.gnp_random_graph(n, p, seed=seed)
    rng = np.random.default_rng(seed)
    for u, v in g.edges:
        g[u][v]["w"] = int(rng.integers(1, 5))
    sg = SimpleGraph.from_networkx(g, weight="w")
    res = brute_force_maxcut(sg, weighted)
    assert res.cut_value == naive_maxcut(sg, weighted)
    assert res.cut_value == cut_value(res.side, [(i, j, w if weighted else 1) for i, j, w in sg.edges])


def test_brute_force_refuses_large_graphs():
    with pytest.raises(ValueError):
        brute_force_maxcut(SimpleGraph(25, ()))


@pytest.mark.parametrize("n", range(2, 13))
def test_complete_graph(n):
    assert maxcut_pipeline(SimpleGraph.from_networkx(nx.complete_graph(n))).cut_value == (n // 2) * ((n + 1) // 2)


@pytest.mark.parametrize("n", range(3, 25))
def test_cycles(n):
    want = n if n % 2 == 0 else n - 1
    assert maxcut_pipeline(SimpleGraph.from_networkx(nx.cycle_graph(n))).cut_value == want


@pytest.mark.parametrize("seed", range(10))
def test_bipartite_cuts_every_edge(seed):
    g = nx.bipartite.random_graph(12, 12, 0.3, seed=seed)
    sg = SimpleGraph.from_networkx(g)
    assert maxcut_pipeline(sg).cut_value == len(sg.edges)


def test_empty_and_edgeless_graphs():
    assert maxcut_pipeline(SimpleGraph(0, ())).cut_value == 0
    res = maxcut_pipeline(SimpleGraph(5, ()))
    assert res.cut_value == 0 and res.side == (0,) * 5


def test_single_edge():
    res = maxcut_pipeline(SimpleGraph(2, ((0, 1, 3),)))
    assert res.cut_value == 1
    assert maxcut_pipeline(SimpleGraph(2, ((0, 1, 3),)), SolverConfig(weighted=True)).cut_value == 3


def test_rank_rule():
    cfg = SolverConfig()
    assert cfg.rank_for(1) == 2
    assert cfg.rank_for(10) == 5  # ceil(sqrt(20))
    assert cfg.rank_for(10_000) == 32
    assert SolverConfig(rank=7).rank_for(10) == 7
    with pytest.raises(ValueError):
        SolverConfig(rank=1)


def test_bm_history_monotone_and_bounds():
    g = er_graph(30, 0.3, 1)
    sol = solve_bm(g, SolverConfig(seed=3))
    assert all(b >= a - 1e-12 for a, b in zip(sol.history, sol.history[1:]))
    assert np.allclose(np.linalg.norm(sol.Y, axis=1), 1.0)
    res = maxcut_pipeline(g, SolverConfig(seed=3))
    assert res.cut_value <= res.sdp_objective + 1e-6 * len(g.edges)


def test_rounding_is_thread_and_order_independent():
    g = er_graph(40, 0.2, 5)
    sol = solve_bm(g, SolverConfig(seed=1))
    a = round_cut(sol.Y, g, 64, seed=9, threads=1)
    b = round_cut(sol.Y, g, 64, seed=9, threads=4)
    assert a == b


def test_refine_reaches_one_flip_local_optimum():
    g = er_graph(25, 0.3, 2)
    start = CutResult(tuple([0] * 25), 0)
    res = refine_1flip(start, g)
    for v in range(25):
        flipped = list(res.side)
        flipped[v] = 1 - flipped[v]
        assert cut_value(flipped, [(i, j, 1) for i, j, _ in g.edges]) <= res.cut_value


def test_pipeline_deterministic_for_seed():
    g = er_graph(20, 0.4, 7)
    assert maxcut_pipeline(g, SolverConfig(seed=4)) == maxcut_pipeline(g, SolverConfig(seed=4, threads=3))


def test_fallback_on_solver_error(monkeypatch):
    def boom(graph, config=None):
        raise SolverError("non-finite objective")

    monkeypatch.setattr(maxcut, "solve_bm", boom)
    g = er_graph(10, 0.5, 0)
    res = maxcut_pipeline(g)
    assert res.diagnostics["fallback"] == "greedy"
    assert res.sdp_objective is None
    assert res.cut_value >= len(g.edges) / 2  # 1-flip optimum cuts at least half the edges


def test_cut_result_json_round_trip(tmp_path):
    res = maxcut_pipeline(er_graph(12, 0.5, 3))
    res.save(tmp_path / "c.json")
    assert CutResult.load(tmp_path / "c.json") == res


def test_weighted_mode_uses_weights():
    # heavy edge 0-1 must be cut in weighted mode even at the cost of two light ones
    g = SimpleGraph(3, ((0, 1, 10), (0, 2, 1), (1, 2, 1)))
    assert maxcut_pipeline(g, SolverConfig(weighted=True)).cut_value == 11
