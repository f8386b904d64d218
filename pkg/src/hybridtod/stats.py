"""Corpus statistics: entity counts, knowledge-source sizes, slot-type placement."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .corpus import DOMAINS, NAME_SLOT, SPLITS, Corpus
from .redistribute import recover_from_answer


@dataclass
class StatsReport:
    domains: dict
    pairs: dict
    slot_types: dict

    def to_json(self) -> dict:
        return {"domains": self.domains, "context_response_pairs": self.pairs, "slot_types": self.slot_types}

    @classmethod
    def from_json(cls, d: dict) -> "StatsReport":
        return cls(d["domains"], d["context_response_pairs"], d["slot_types"])

    def to_text(self) -> str:
        lines = [f"{'domain':<12}{'entities':>9}{'slots/ent':>11}{'faqs/ent':>10}"]
        for dom, row in self.domains.items():
            lines.append(
                f"{dom:<12}{row['entities']:>9}{row['mean_structured_slot_values']:>11.2f}{row['mean_faqs']:>10.2f}"
            )
        lines.append("")
        lines.append(f"{'split':<12}" + "".join(f"{d:>12}" for d in self.domains) + f"{'total':>9}")
        for split, row in self.pairs.items():
            lines.append(f"{split:<12}" + "".join(f"{row.get(d, 0):>12}" for d in self.domains) + f"{row['total']:>9}")
        return "\n".join(lines) + "\n"

    def to_tsv(self) -> str:
        """One row per (domain, slot type) with structured and unstructured counts."""
        lines = ["domain\tslot_type\tstructured\tunstructured"]
        for dom, slots in self.slot_types.items():
            for slot, c in slots.items():
                lines.append(f"{dom}\t{slot}\t{c['structured']}\t{c['unstructured']}")
        return "\n".join(lines) + "\n"


def corpus_stats(corpus: Corpus, templates=None) -> StatsReport:
    """Per-domain knowledge-source statistics and per-split pair counts.

    Unstructured slot counts come from parsing FAQ answers against the
    templates; without templates every FAQ counts as free text only.
    """
    by_domain: dict[str, list] = {d: [] for d in DOMAINS}
    for e in corpus.entities:
        by_domain.setdefault(e.domain, []).append(e)

    domains, slot_types = {}, {}
    for dom, ents in by_domain.items():
        n = len(ents)
        n_slots = sum(len(e.slot_values(include_name=True)) for e in ents)
        n_faqs = sum(len(e.faqs) for e in ents)
        domains[dom] = {
            "entities": n,
            "mean_structured_slot_values": n_slots / n if n else 0.0,
            "mean_faqs": n_faqs / n if n else 0.0,
        }
        structured, unstructured = Counter(), Counter()
        for e in ents:
            for sv in e.slot_values(include_name=False):
                structured[sv.slot_type] += 1
            if templates:
                for faq in e.faqs:
                    for slot, _ in recover_from_answer(faq.answer, e.name, templates):
                        unstructured[slot] += 1
        slot_types[dom] = {
            s: {"structured": structured[s], "unstructured": unstructured[s]}
            for s in sorted(set(structured) | set(unstructured))
            if s != NAME_SLOT
        }

    pairs = {}
    for split in SPLITS:
        counts = Counter({d: 0 for d in by_domain})
        if split in corpus.splits:
            for dialog in corpus[split].dialogs:
                for turn in dialog.turns:
                    if turn.system is not None:
                        counts[turn.domain] += 1
        row = dict(counts)
        row["total"] = sum(counts.values())
        pairs[split] = row
    return StatsReport(domains, pairs, slot_types)


def compare_stats(reports: dict[str, StatsReport]) -> dict:
    """Side-by-side per-domain means for several corpus variants."""
    out = {}
    for name, rep in reports.items():
        for dom, row in rep.domains.items():
            out.setdefault(dom, {})[name] = {
                "mean_structured_slot_values": row["mean_structured_slot_values"],
                "mean_faqs": row["mean_faqs"],
            }
    return out


def comparison_tsv(comparison: dict) -> str:
    lines = ["domain\tvariant\tmean_structured_slot_values\tmean_faqs"]
    for dom, variants in comparison.items():
        for name, row in variants.items():
            lines.append(f"{dom}\t{name}\t{row['mean_structured_slot_values']:.6f}\t{row['mean_faqs']:.6f}")
    return "\n".join(lines) + "\n"


def direction_check(base: StatsReport, variant: StatsReport, moved_domains) -> list[str]:
    """Domains where a variant failed to trade structured values for FAQs."""
    problems = []
    for dom in sorted(moved_domains):
        b, v = base.domains[dom], variant.domains[dom]
        if not v["mean_structured_slot_values"] < b["mean_structured_slot_values"]:
            problems.append(f"{dom}: structured mean did not fall")
        if not v["mean_faqs"] > b["mean_faqs"]:
            problems.append(f"{dom}: FAQ mean did not rise")
    return problems
