"""Per-name state histograms and the by-name train/test split."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from namestate.errors import DataError
from namestate.ingest import SEX_FEMALE, SEX_UNKNOWN, CleanRecord

HISTOGRAM_HEADER = ("last_name", "state", "count", "female_count", "sex_known_count")


@dataclass
class NameHistogram:
    """Record counts for one last name, broken down by state.

    Female and known-sex counts are tracked per state as well so the
    histogram table can be written one row per (name, state) pair.
    """

    last_name: str
    state_counts: dict[str, int] = field(default_factory=dict)
    state_female: dict[str, int] = field(default_factory=dict)
    state_sex_known: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.state_counts.values())

    @property
    def female(self) -> int:
        return sum(self.state_female.values())

    @property
    def sex_known(self) -> int:
        return sum(self.state_sex_known.values())

    def add(self, state: str, sex: str, n: int = 1) -> None:
        self.state_counts[state] = self.state_counts.get(state, 0) + n
        self.state_female.setdefault(state, 0)
        self.state_sex_known.setdefault(state, 0)
        if sex != SEX_UNKNOWN:
            self.state_sex_known[state] += n
            if sex == SEX_FEMALE:
                self.state_female[state] += n

    def merge(self, other: "NameHistogram") -> None:
        for s, c in other.state_counts.items():
            self.state_counts[s] = self.state_counts.get(s, 0) + c
            self.state_female[s] = self.state_female.get(s, 0) + other.state_female.get(s, 0)
            self.state_sex_known[s] = self.state_sex_known.get(s, 0) + other.state_sex_known.get(s, 0)


@dataclass
class SplitCorpus:
    train_pairs: list[tuple[str, str]]
    test_histograms: list[NameHistogram]
    seed: int
    train_fraction: float
    states: list[str]
    train_histograms: list[NameHistogram] = field(default_factory=list)

    @property
    def train_names(self) -> list[str]:
        return [h.last_name for h in self.train_histograms]

    @property
    def test_names(self) -> list[str]:
        return [h.last_name for h in self.test_histograms]


def _aggregate_shard(records: Sequence[CleanRecord]) -> dict[str, NameHistogram]:
    out: dict[str, NameHistogram] = {}
    for r in records:
        h = out.get(r.last_name)
        if h is None:
            h = out[r.last_name] = NameHistogram(r.last_name)
        h.add(r.state, r.sex)
    return out


def aggregate(records: Iterable[CleanRecord], threads: int = 1) -> list[NameHistogram]:
    """One histogram per distinct last name, sorted by name.

    With ``threads > 1`` the records are cut into contiguous shards whose
    partial histograms are merged in shard order; counts are integers so the
    result does not depend on the thread count.
    """
    records = list(records)
    if threads > 1 and len(records) > 1:
        from concurrent.futures import ThreadPoolExecutor

        bounds = np.linspace(0, len(records), threads + 1).astype(int)
        shards = [records[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(_aggregate_shard, shards))
        merged: dict[str, NameHistogram] = {}
        for part in partials:
            for name, h in part.items():
                if name in merged:
                    merged[name].merge(h)
                else:
                    merged[name] = h
    else:
        merged = _aggregate_shard(records)
    return [merged[name] for name in sorted(merged)]


def state_registry(histograms: Iterable[NameHistogram]) -> list[str]:
    return sorted({s for h in histograms for s in h.state_counts})


def popularity(h: NameHistogram) -> int:
    return h.total


def female_share(h: NameHistogram) -> Optional[float]:
    known = h.sex_known
    if known == 0:
        return None
    return h.female / known


def top_k_states(h: NameHistogram, k: int = 3) -> list[str]:
    """States by descending count, ties broken by ascending state identifier."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted(h.state_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [s for s, _ in ranked[:k]]


def split_by_name(histograms: Sequence[NameHistogram], train_fraction: float = 0.8,
                  seed: int = 42) -> SplitCorpus:
    """Seeded by-name split; the train side is expanded to unique (name, state) pairs.

    The first ``ceil(train_fraction * n)`` names of a seeded permutation go to
    training, capped at ``n - 1`` so the test side is never empty.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if len(histograms) < 2:
        raise DataError("need at least 2 distinct last names to split")
    ordered = sorted(histograms, key=lambda h: h.last_name)
    n = len(ordered)
    n_train = min(n - 1, math.ceil(train_fraction * n))
    perm = np.random.default_rng(seed).permutation(n)
    train = sorted((ordered[i] for i in perm[:n_train]), key=lambda h: h.last_name)
    test = sorted((ordered[i] for i in perm[n_train:]), key=lambda h: h.last_name)
    pairs = sorted((h.last_name, s) for h in train for s in h.state_counts)
    return SplitCorpus(
        train_pairs=pairs,
        test_histograms=test,
        seed=seed,
        train_fraction=train_fraction,
        states=state_registry(ordered),
        train_histograms=train,
    )


def write_histograms(histograms: Iterable[NameHistogram], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTOGRAM_HEADER)
        for h in histograms:
            for s in sorted(h.state_counts):
                w.writerow((h.last_name, s, h.state_counts[s], h.state_female[s], h.state_sex_known[s]))


def read_histograms(path: str | Path) -> list[NameHistogram]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    out: dict[str, NameHistogram] = {}
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != HISTOGRAM_HEADER:
            raise DataError(f"{path}: expected header {','.join(HISTOGRAM_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                name, state, count, female, known = row
                count, female, known = int(count), int(female), int(known)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed row {row!r}") from exc
            if count <= 0 or not 0 <= female <= known <= count:
                raise DataError(f"{path}:{lineno}: inconsistent counts {row!r}")
            h = out.setdefault(name, NameHistogram(name))
            if state in h.state_counts:
                raise DataError(f"{path}:{lineno}: duplicate pair ({name}, {state})")
            h.state_counts[state] = count
            h.state_female[state] = female
            h.state_sex_known[state] = known
    return [out[n] for n in sorted(out)]


def write_split(split: SplitCorpus, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# seed={split.seed}\n# train_fraction={split.train_fraction!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("name", "partition"))
        rows = [(n, "train") for n in split.train_names] + [(n, "test") for n in split.test_names]
        for row in sorted(rows):
            w.writerow(row)


def read_split(path: str | Path, histograms: Sequence[NameHistogram]) -> SplitCorpus:
    """Rebuild a SplitCorpus from a manifest and the histogram table it was made from."""
    meta: dict[str, str] = {}
    partition: dict[str, str] = {}
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        else:
            body.append(line)
    reader = csv.reader(body)
    if next(reader, None) != ["name", "partition"]:
        raise DataError(f"{path}: expected header name,partition")
    for row in reader:
        if len(row) != 2 or row[1] not in ("train", "test"):
            raise DataError(f"{path}: malformed row {row!r}")
        partition[row[0]] = row[1]
    by_name = {h.last_name: h for h in histograms}
    missing = sorted(set(partition) - set(by_name))
    if missing:
        raise DataError(f"{path}: {len(missing)} names not in histogram table, e.g. {missing[:3]}")
    train = [by_name[n] for n in sorted(partition) if partition[n] == "train"]
    test = [by_name[n] for n in sorted(partition) if partition[n] == "test"]
    try:
        seed = int(meta.get("seed", "0"))
        fraction = float(meta.get("train_fraction", "0.8"))
    except ValueError as exc:
        raise DataError(f"{path}: bad header block {meta}") from exc
    return SplitCorpus(
        train_pairs=sorted((h.last_name, s) for h in train for s in h.state_counts),
        test_histograms=test,
        seed=seed,
        train_fraction=fraction,
        states=state_registry(histograms),
        train_histograms=train,
    )
