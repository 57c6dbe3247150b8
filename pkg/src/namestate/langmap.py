"""State predictions -> language predictions via a state/language weight table.

The score of a language is its expected comprehension share,
``sum_s P(s) * weight(s, language)``. Weights are per-language shares, not a
distribution, so a state may list several languages with high weight.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Optional

from namestate.errors import DataError

log = logging.getLogger(__name__)

TABLE_HEADER = ("state", "language", "weight", "source")
SOURCES = ("official", "census")


@dataclass(frozen=True)
class LanguageRow:
    state: str
    language: str
    weight: float
    source: str


class LanguageTable:
    def __init__(self, rows: Iterable[LanguageRow]):
        self.rows = list(rows)
        self.by_state: dict[str, dict[str, float]] = {}
        for r in self.rows:
            langs = self.by_state.setdefault(r.state, {})
            if r.language in langs:
                raise DataError(f"duplicate (state, language) pair ({r.state}, {r.language})")
            langs[r.language] = r.weight

    @property
    def states(self) -> list[str]:
        return sorted(self.by_state)

    @property
    def languages(self) -> list[str]:
        return sorted({r.language for r in self.rows})


def parse_table(lines: Iterable[str], origin: str = "<table>",
                registry: Optional[Iterable[str]] = None) -> tuple[LanguageTable, list[str]]:
    """Parse ``state,language,weight,source`` rows; ``#`` lines are comments.

    Returns the table and a list of warnings (states not in ``registry``,
    registry states without any row).
    """
    content = [ln for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(content)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != TABLE_HEADER:
        raise DataError(f"{origin}: expected header {','.join(TABLE_HEADER)}")
    rows, seen = [], set()
    for rowno, row in enumerate(reader, start=1):
        if len(row) != 4:
            raise DataError(f"{origin}: row {rowno}: expected 4 fields, got {len(row)}")
        state, language, weight, source = (f.strip() for f in row)
        try:
            w = float(weight)
        except ValueError:
            raise DataError(f"{origin}: row {rowno}: weight {weight!r} is not a number") from None
        if not 0.0 < w <= 1.0:
            raise DataError(f"{origin}: row {rowno}: weight {w} outside (0, 1]")
        if source not in SOURCES:
            raise DataError(f"{origin}: row {rowno}: source must be one of {SOURCES}, got {source!r}")
        if (state, language) in seen:
            raise DataError(f"{origin}: row {rowno}: duplicate (state, language) ({state}, {language})")
        seen.add((state, language))
        rows.append(LanguageRow(state, language, w, source))
    table = LanguageTable(rows)
    warnings = []
    if registry is not None:
        registry = set(registry)
        unknown = [s for s in table.states if s not in registry]
        if unknown:
            warnings.append(f"{len(unknown)} table states are not in the state registry: {', '.join(unknown)}")
        uncovered = sorted(registry - set(table.states))
        if uncovered:
            warnings.append(f"registry states without language rows: {', '.join(uncovered)}")
    for msg in warnings:
        log.warning(msg)
    return table, warnings


def load_table(path: str | Path, registry: Optional[Iterable[str]] = None) -> tuple[LanguageTable, list[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return parse_table(text.splitlines(), str(path), registry)


def default_table(registry: Optional[Iterable[str]] = None) -> tuple[LanguageTable, list[str]]:
    """The starter table shipped with the package (placeholder census weights)."""
    text = resources.files("namestate").joinpath("data/languages.csv").read_text(encoding="utf-8")
    return parse_table(io.StringIO(text).read().splitlines(), "languages.csv", registry)


def predict_languages(state_probs: Mapping[str, float], table: LanguageTable,
                      k: int = 3) -> list[tuple[str, float]]:
    """Top-k (language, score), ties broken by language name."""
    total = sum(state_probs.values())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"state probabilities sum to {total}, expected 1")
    missing = sorted(s for s in state_probs if s not in table.by_state)
    if missing:
        raise DataError(f"states missing from language table: {', '.join(missing)}")
    scores: dict[str, float] = {}
    for state in sorted(state_probs):
        p = state_probs[state]
        for lang, w in table.by_state[state].items():
            scores[lang] = scores.get(lang, 0.0) + p * w
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(lang, min(s, 1.0)) for lang, s in ranked[:k]]
