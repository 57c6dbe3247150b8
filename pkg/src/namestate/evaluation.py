"""Top-k metrics, baselines, popularity/per-state slices and report writers.

A *predictor* is any callable mapping a list of names to a list of ranked
state lists. Baselines and trained models are wrapped to fit that shape.
"""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from namestate.corpus import NameHistogram, female_share, popularity, top_k_states
from namestate.errors import DataError
from namestate.models import RecurrentModel, predict_proba

Predictor = Callable[[Sequence[str]], list[list[str]]]


@dataclass(frozen=True)
class TopKOutcome:
    name: str
    predicted: tuple[str, ...]
    truth_topk: tuple[str, ...]
    hit: bool
    modal_hit: bool
    popularity: int
    female_share: Optional[float]


@dataclass(frozen=True)
class SliceReport:
    slice_name: str
    n: int
    topk_accuracy: float
    modal_accuracy: float
    note: str = ""


def _ranked_totals(histograms: Iterable[NameHistogram]) -> list[tuple[str, int]]:
    totals: Counter = Counter()
    for h in histograms:
        totals.update(h.state_counts)
    return sorted(totals.items(), key=lambda kv: (-kv[1], kv[0]))


def majority_baseline(histograms: Sequence[NameHistogram]) -> tuple[str, float]:
    """Most populous state by record count and its share of all records."""
    ranked = _ranked_totals(histograms)
    if not ranked:
        raise DataError("majority baseline needs a non-empty corpus")
    grand = sum(c for _, c in ranked)
    state, count = ranked[0]
    return state, count / grand


class MajorityPredictor:
    """Predicts the single most populous state for every name."""

    def __init__(self, train_histograms: Sequence[NameHistogram]):
        self.state, self.share = majority_baseline(train_histograms)

    def __call__(self, names: Sequence[str]) -> list[list[str]]:
        return [[self.state] for _ in names]


class NaiveBayesLookup:
    """Per-name training histograms plus the global state prior."""

    def __init__(self, train_histograms: Sequence[NameHistogram]):
        self.by_name = {h.last_name: h for h in train_histograms}
        self.prior = [s for s, _ in _ranked_totals(train_histograms)]


def naive_bayes_predict(lookup: NaiveBayesLookup, name: str, k: int = 3) -> list[str]:
    """Top-k states of a seen name, padded from the prior; the prior for unseen names."""
    h = lookup.by_name.get(name)
    picks = top_k_states(h, k) if h is not None else []
    for s in lookup.prior:
        if len(picks) >= k:
            break
        if s not in picks:
            picks.append(s)
    return picks


class NaiveBayesPredictor:
    def __init__(self, train_histograms: Sequence[NameHistogram], k: int = 3):
        self.lookup = NaiveBayesLookup(train_histograms)
        self.k = k

    def __call__(self, names: Sequence[str]) -> list[list[str]]:
        return [naive_bayes_predict(self.lookup, n, self.k) for n in names]


class ModelPredictor:
    def __init__(self, model: RecurrentModel, k: int = 3, threads: int = 1):
        self.model, self.k, self.threads = model, k, threads

    def __call__(self, names: Sequence[str]) -> list[list[str]]:
        probs = predict_proba(self.model, list(names), self.threads)
        states = self.model.states
        out = []
        for row in probs:
            order = sorted(range(len(states)), key=lambda i: (-row[i], states[i]))
            out.append([states[i] for i in order[:self.k]])
        return out


def score(outcomes: Sequence[TopKOutcome], slice_name: str, note: str = "") -> SliceReport:
    if not outcomes:
        raise DataError(f"slice {slice_name!r} is empty")
    n = len(outcomes)
    return SliceReport(slice_name, n, sum(o.hit for o in outcomes) / n,
                       sum(o.modal_hit for o in outcomes) / n, note)


def evaluate(predictor: Predictor, test_histograms: Sequence[NameHistogram], k: int = 3):
    """Per-name outcomes (in input order) and the aggregate test-set report.

    A hit means the predicted list shares at least one state with the name's
    true top-k; a modal hit means the first prediction is the modal state.
    """
    if not test_histograms:
        raise DataError("cannot evaluate on an empty test set")
    predictions = predictor([h.last_name for h in test_histograms])
    outcomes = []
    for h, pred in zip(test_histograms, predictions):
        pred = tuple(pred[:k])
        truth = tuple(top_k_states(h, k))
        outcomes.append(TopKOutcome(
            name=h.last_name,
            predicted=pred,
            truth_topk=truth,
            hit=bool(set(pred) & set(truth)),
            modal_hit=bool(pred) and pred[0] == truth[0],
            popularity=popularity(h),
            female_share=female_share(h),
        ))
    return outcomes, score(outcomes, "test")


def slice_weighted_random(outcomes: Sequence[TopKOutcome], n: int = 3000, seed: int = 42) -> SliceReport:
    """Popularity-weighted sample of ``n`` names without replacement."""
    if n >= len(outcomes):
        return score(outcomes, "weighted_random", note=f"requested {n}, used all {len(outcomes)}")
    weights = np.array([o.popularity for o in outcomes], dtype=np.float64)
    rng = np.random.default_rng(seed)
    picked = rng.choice(len(outcomes), size=n, replace=False, p=weights / weights.sum())
    return score([outcomes[i] for i in sorted(picked)], "weighted_random")


def slice_extremes(outcomes: Sequence[TopKOutcome], n: int = 3000) -> tuple[SliceReport, SliceReport]:
    """Reports for the ``n`` most and ``n`` least popular names (ties by name)."""
    ordered = sorted(outcomes, key=lambda o: (o.popularity, o.name))
    note = "" if n < len(ordered) else f"requested {n}, used all {len(ordered)}"
    return score(ordered[-n:], "top", note), score(ordered[:n], "bottom", note)


def per_state_accuracy(outcomes: Sequence[TopKOutcome], per_state_n: int = 1000,
                       seed: int = 42) -> dict[str, SliceReport]:
    """Top-k accuracy per modal state on a seeded sample of up to ``per_state_n`` names."""
    groups: dict[str, list[TopKOutcome]] = {}
    for o in sorted(outcomes, key=lambda o: o.name):
        groups.setdefault(o.truth_topk[0], []).append(o)
    rng = np.random.default_rng(seed)
    out = {}
    for state in sorted(groups):
        members = groups[state]
        if len(members) > per_state_n:
            idx = sorted(rng.choice(len(members), size=per_state_n, replace=False))
            members = [members[i] for i in idx]
        out[state] = score(members, state)
    return out


def pct(x: float) -> str:
    return f"{100.0 * x:.1f}"


TABLE1_HEADER = ("model", "test_set", "weighted_random", "top", "bottom")


def table1_row(label: str, reports: Sequence[SliceReport]) -> tuple[str, ...]:
    return (label,) + tuple(pct(r.topk_accuracy) for r in reports)


def write_table1(path: str | Path, rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE1_HEADER)
        w.writerows(rows)


def write_slices(path: str | Path, label: str, reports: Sequence[SliceReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("model", "slice", "n", "topk_accuracy", "modal_accuracy", "note"))
        for r in reports:
            w.writerow((label, r.slice_name, r.n, pct(r.topk_accuracy), pct(r.modal_accuracy), r.note))


def write_table2(path: str | Path, label: str, per_state: dict[str, SliceReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("state", "n", label))
        for state, r in per_state.items():
            w.writerow((state, r.n, pct(r.topk_accuracy)))


OUTCOME_HEADER = ("name", "predicted", "truth_topk", "hit", "modal_hit", "popularity", "female_share")


def write_outcomes(path: str | Path, outcomes: Iterable[TopKOutcome]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(OUTCOME_HEADER)
        for o in outcomes:
            w.writerow((o.name, "|".join(o.predicted), "|".join(o.truth_topk), int(o.hit), int(o.modal_hit),
                        o.popularity, "" if o.female_share is None else repr(o.female_share)))


def read_outcomes(path: str | Path) -> list[TopKOutcome]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    out = []
    with fh:
        reader = csv.reader(fh)
        if tuple(next(reader, ())) != OUTCOME_HEADER:
            raise DataError(f"{path}: expected header {','.join(OUTCOME_HEADER)}")
        for row in reader:
            try:
                name, pred, truth, hit, modal, pop, fshare = row
                out.append(TopKOutcome(name, tuple(pred.split("|")) if pred else (), tuple(truth.split("|")),
                                       hit == "1", modal == "1", int(pop), float(fshare) if fshare else None))
            except ValueError as exc:
                raise DataError(f"{path}: malformed row {row!r}") from exc
    return out
