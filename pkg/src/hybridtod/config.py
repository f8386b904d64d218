"""Run configuration: defaults, JSON config file, environment and flag overrides."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .graph import MatcherOptions
from .maxcut import SolverConfig
from .serialize import DEFAULT_CONTEXT_BUDGET, MixConfig

VARIANTS = ("hybrid", "unstructured", "none")
VARIANT_MODES = {"hybrid": "hybrid", "unstructured": "unstructured_all", "none": "none"}
ENV_PREFIX = "HYBRIDTOD_"


@dataclass(frozen=True)
class RunConfig:
    input: str | None = None  # raw corpus dir; None means the bundled mini-corpus
    output_dir: str = "hybridtod-out"
    templates: str | None = None
    schema: str | None = None
    seed: int = 0
    variant: str = "hybrid"
    also_unstructured: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    mix: MixConfig = field(default_factory=MixConfig)
    matcher: MatcherOptions = field(default_factory=MatcherOptions)
    context_budget: int | None = DEFAULT_CONTEXT_BUDGET
    query_mode: str = "full_context"
    threads: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def mode(self) -> str:
        return VARIANT_MODES[self.variant]

    def solver_for(self, stage_seed: int) -> SolverConfig:
        return replace(self.solver, seed=stage_seed, threads=self.threads)

    def to_manifest(self) -> dict:
        """Everything that determines outputs. Threads and output_dir do not."""
        return {
            "input": self.input if self.input is not None else "<bundled minicorpus>",
            "templates": self.templates,
            "schema": self.schema,
            "seed": self.seed,
            "variant": self.variant,
            "also_unstructured": self.also_unstructured,
            "solver": {k: v for k, v in self.solver.to_dict().items() if k != "seed"},
            "mix": self.mix.to_dict(),
            "matcher": self.matcher.to_dict(),
            "context_budget": self.context_budget,
            "query_mode": self.query_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "solver" in d:
            d["solver"] = SolverConfig.from_dict(d["solver"])
        if "mix" in d:
            d["mix"] = MixConfig.from_dict(d["mix"])
        if "matcher" in d:
            d["matcher"] = MatcherOptions.from_dict(d["matcher"])
        return cls(**d)


def _env_overrides(environ) -> dict:
    out = {}
    for key, conv in (
        ("INPUT", str),
        ("OUTPUT_DIR", str),
        ("TEMPLATES", str),
        ("SEED", int),
        ("VARIANT", str),
        ("THREADS", int),
    ):
        val = environ.get(ENV_PREFIX + key)
        if val:
            out[key.lower()] = conv(val)
    if environ.get(ENV_PREFIX + "WEIGHTED_CUT", "").lower() in ("1", "true", "yes"):
        out["weighted_cut"] = True
    return out


def resolve_config(path=None, overrides: dict | None = None, environ=None) -> RunConfig:
    """Defaults, then the config file, then HYBRIDTOD_* variables, then flags."""
    environ = os.environ if environ is None else environ
    path = path or environ.get(ENV_PREFIX + "CONFIG")
    raw: dict = {}
    if path:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    layered = dict(raw)
    for layer in (_env_overrides(environ), overrides or {}):
        for k, v in layer.items():
            if v is None:
                continue
            if k == "weighted_cut":
                if v:
                    layered["solver"] = {**layered.get("solver", {}), "weighted": True}
                continue
            layered[k] = v
    return RunConfig.from_dict(layered)
