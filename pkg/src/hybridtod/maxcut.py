"""Max-cut via a low-rank (Burer-Monteiro) relaxation, hyperplane rounding
and 1-flip local search, with an exhaustive solver used as an oracle.

Any object exposing ``n_vertices`` and ``edges`` (``(i, j, w)`` triples with
``i < j``) can be cut; :class:`~hybridtod.graph.CooccurGraph` is one.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import adjacency_matrix

log = logging.getLogger(__name__)

BRUTE_FORCE_LIMIT = 24


class SolverError(RuntimeError):
    """Relaxation produced a non-finite objective."""

    def __init__(self, message, last_finite=None):
        super().__init__(message)
        self.last_finite = last_finite


@dataclass(frozen=True)
class SimpleGraph:
    n_vertices: int
    edges: tuple

    @classmethod
    def from_networkx(cls, g, weight=None) -> "SimpleGraph":
        nodes = sorted(g.nodes())
        pos = {v: i for i, v in enumerate(nodes)}
        edges = []
        for u, v, data in g.edges(data=True):
            i, j = sorted((pos[u], pos[v]))
            if i == j:
                continue
            w = data.get(weight, 1) if weight else 1
            edges.append((i, j, w))
        return cls(len(nodes), tuple(sorted(edges)))


@dataclass(frozen=True)
class SolverConfig:
    rank: int | None = None
    max_iter: int = 10000
    grad_tol: float = 1e-6
    rounding_trials: int = 64
    local_search_passes: int | None = None
    seed: int = 0
    weighted: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.rank is not None and self.rank < 2:
            raise ValueError("rank must be >= 2")
        if self.rounding_trials < 1:
            raise ValueError("rounding_trials must be >= 1")

    def rank_for(self, n: int) -> int:
        if self.rank is not None:
            return self.rank
        return max(2, min(32, math.ceil(math.sqrt(2 * n))))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("threads")
        return d

    @classmethod
    def from_dict(cls, d: dict | None) -> "SolverConfig":
        return cls(**(d or {}))


@dataclass
class BMSolution:
    Y: np.ndarray
    objective: float
    iterations: int
    grad_norm: float
    converged: bool
    history: list[float] = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class CutResult:
    side: tuple[int, ...]
    cut_value: float
    sdp_objective: float | None = None
    iterations: int = 0
    seed: int | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "side": list(self.side),
            "cut_value": self.cut_value,
            "sdp_objective": self.sdp_objective,
            "iterations": self.iterations,
            "seed": self.seed,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CutResult":
        return cls(
            tuple(d["side"]), d["cut_value"], d.get("sdp_objective"), d.get("iterations", 0), d.get("seed"),
            d.get("diagnostics", {}),
        )

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CutResult":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _edges(graph, weighted: bool) -> list[tuple[int, int, float]]:
    if weighted:
        return [(i, j, w) for i, j, w in graph.edges]
    return [(i, j, 1) for i, j, _ in graph.edges]


def cut_value(side, edges) -> float:
    return sum(w for i, j, w in edges if side[i] != side[j])


def relaxation_objective(Y: np.ndarray, graph, weighted: bool = False) -> float:
    """``1/2 * sum_w w * (1 - y_i . y_j)`` over edges."""
    total = 0.0
    for i, j, w in _edges(graph, weighted):
        total += w * (1.0 - float(Y[i] @ Y[j]))
    return 0.5 * total


def _normalize_rows(Y: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(Y, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return Y / norms


def solve_bm(graph, config: SolverConfig | None = None) -> BMSolution:
    """Riemannian gradient ascent on the product of unit spheres.

    Steps are accepted only under an Armijo condition, so the recorded
    objective history is non-decreasing.
    """
    config = config or SolverConfig()
    n = graph.n_vertices
    k = config.rank_for(n)
    edges = _edges(graph, config.weighted)
    rng = np.random.default_rng(config.seed)
    Y = _normalize_rows(rng.standard_normal((n, k)))
    if not edges:
        return BMSolution(Y, 0.0, 0, 0.0, True, [0.0])

    W = adjacency_matrix(n, edges)
    total = float(sum(w for _, _, w in edges))

    def objective(Z, WZ):
        return 0.5 * (total - 0.5 * float(np.sum(Z * WZ)))

    WY = W @ Y
    f = objective(Y, WY)
    history = [f]
    step = 1.0 / max(1.0, float(np.abs(W).sum(axis=1).max()))
    gnorm = math.inf
    it = 0
    converged = False
    while it < config.max_iter:
        G = -0.5 * WY
        RG = G - np.sum(G * Y, axis=1, keepdims=True) * Y
        gnorm = float(np.linalg.norm(RG))
        if not math.isfinite(gnorm):
            raise SolverError("non-finite gradient", last_finite=Y)
        if gnorm <= config.grad_tol:
            converged = True
            break
        t = step
        while True:
            Yn = _normalize_rows(Y + t * RG)
            WYn = W @ Yn
            fn = objective(Yn, WYn)
            if not math.isfinite(fn):
                raise SolverError("non-finite objective", last_finite=Y)
            if fn >= f + 1e-4 * t * gnorm * gnorm:
                break
            t *= 0.5
            if t < 1e-20:
                # no ascent direction left at machine precision
                converged = True
                break
        if converged:
            break
        Y, WY, f = Yn, WYn, fn
        history.append(f)
        step = min(2.0 * t, 1e6)
        it += 1
    return BMSolution(Y, f, it, gnorm, converged, history)


def _trial_side(Y: np.ndarray, seed: int, trial: int) -> np.ndarray:
    g = np.random.default_rng([seed, trial]).standard_normal(Y.shape[1])
    return (Y @ g > 0).astype(np.int8)


def round_cut(Y: np.ndarray, graph, trials: int = 64, seed: int = 0, weighted: bool = False, threads: int = 1) -> CutResult:
    """Best of ``trials`` random-hyperplane roundings of the rows of ``Y``.

    Trial ``t`` draws its direction from ``default_rng([seed, t])`` so the
    result does not depend on how trials are scheduled.
    """
    edges = _edges(graph, weighted)
    if edges:
        arr = np.asarray(edges, dtype=np.float64)
        I, J, Wt = arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2]
    else:
        I = J = np.zeros(0, dtype=np.int64)
        Wt = np.zeros(0)

    def run(t):
        side = _trial_side(Y, seed, t)
        return float(Wt[side[I] != side[J]].sum()), side

    if threads > 1 and trials > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(trials)))
    else:
        results = [run(t) for t in range(trials)]
    best_t = max(range(trials), key=lambda t: (results[t][0], -t))
    side = tuple(int(s) for s in results[best_t][1])
    return CutResult(
        side,
        cut_value(side, edges),
        sdp_objective=relaxation_objective(Y, graph, weighted),
        seed=seed,
        diagnostics={"rounding_trials": trials, "best_trial": best_t},
    )


def refine_1flip(cut: CutResult, graph, weighted: bool = False, max_passes: int | None = None) -> CutResult:
    """First-improvement 1-flip local search in ascending vertex order."""
    edges = _edges(graph, weighted)
    n = graph.n_vertices
    side = list(cut.side)
    nbrs: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for i, j, w in edges:
        nbrs[i].append((j, w))
        nbrs[j].append((i, w))
    # gain[i] = weight to same side - weight to other side
    gain = [sum(w if side[j] == side[i] else -w for j, w in nbrs[i]) for i in range(n)]
    flips = 0
    passes = 0
    improved = True
    while improved and (max_passes is None or passes < max_passes):
        improved = False
        passes += 1
        for i in range(n):
            if gain[i] > 1e-12:
                side[i] = 1 - side[i]
                gain[i] = -gain[i]
                for j, w in nbrs[i]:
                    gain[j] += 2 * w if side[j] == side[i] else -2 * w
                flips += 1
                improved = True
    diagnostics = dict(cut.diagnostics)
    diagnostics.update({"refine_flips": flips, "refine_passes": passes})
    return CutResult(tuple(side), cut_value(side, edges), cut.sdp_objective, cut.iterations, cut.seed, diagnostics)


def greedy_cut(graph, weighted: bool = False) -> CutResult:
    edges = _edges(graph, weighted)
    n = graph.n_vertices
    nbrs: list[list[tuple[int, float]]] = [[] for _ in range(n)]
    for i, j, w in edges:
        nbrs[i].append((j, w))
        nbrs[j].append((i, w))
    side = [0] * n
    for i in range(n):
        to0 = sum(w for j, w in nbrs[i] if j < i and side[j] == 0)
        to1 = sum(w for j, w in nbrs[i] if j < i and side[j] == 1)
        side[i] = 1 if to0 > to1 else 0
    return CutResult(tuple(side), cut_value(side, edges), diagnostics={"greedy": True})


def brute_force_maxcut(graph, weighted: bool = False) -> CutResult:
    """Exact optimum by enumeration with vertex 0 fixed to side 0.

    Cut values of all ``2**(n-1)`` assignments are built one vertex at a
    time; among optimal assignments the one with the smallest binary code
    (bit ``v-1`` is vertex ``v``) is returned.
    """
    n = graph.n_vertices
    if n > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force refused: {n} vertices > {BRUTE_FORCE_LIMIT}")
    edges = _edges(graph, weighted)
    if n <= 1:
        return CutResult(tuple([0] * n), 0, diagnostics={"exact": True})
    w = np.zeros((n, n))
    for i, j, wt in edges:
        w[i, j] += wt
        w[j, i] += wt
    cuts = np.zeros(1)
    for v in range(1, n):
        # weight from v to earlier vertices that sit on side 1, per assignment
        on_one = np.zeros(1)
        for u in range(1, v):
            on_one = np.concatenate([on_one, on_one + w[u, v]])
        total = w[:v, v].sum()
        cuts = np.concatenate([cuts + on_one, cuts + (total - on_one)])
    best = int(np.argmax(cuts))
    side = [0] + [(best >> (v - 1)) & 1 for v in range(1, n)]
    return CutResult(tuple(side), cut_value(side, edges), diagnostics={"exact": True})


def maxcut_pipeline(graph, config: SolverConfig | None = None) -> CutResult:
    """Relax, round, refine. Falls back to greedy + refine if the relaxation fails."""
    config = config or SolverConfig()
    n = graph.n_vertices
    if not graph.edges:
        return CutResult(tuple([0] * n), 0, 0.0, 0, config.seed, {"degenerate": True, "weighted": config.weighted})
    try:
        bm = solve_bm(graph, config)
    except SolverError as exc:
        log.warning("relaxation failed (%s); using greedy start", exc)
        start = greedy_cut(graph, config.weighted)
        refined = refine_1flip(start, graph, config.weighted, config.local_search_passes)
        diag = dict(refined.diagnostics)
        diag.update({"fallback": "greedy", "warning": str(exc), "weighted": config.weighted})
        return CutResult(refined.side, refined.cut_value, None, 0, config.seed, diag)
    rounded = round_cut(bm.Y, graph, config.rounding_trials, config.seed, config.weighted, config.threads)
    refined = refine_1flip(rounded, graph, config.weighted, config.local_search_passes)
    diag = dict(refined.diagnostics)
    diag.update(
        {
            "rank": int(bm.Y.shape[1]),
            "bm_converged": bm.converged,
            "bm_grad_norm": bm.grad_norm,
            "rounded_cut": rounded.cut_value,
            "weighted": config.weighted,
        }
    )
    return CutResult(refined.side, refined.cut_value, bm.objective, bm.iterations, config.seed, diag)
