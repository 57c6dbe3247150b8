"""Electoral-roll ingestion: last-name extraction and filtering.

Rows are read from delimited text, the last name is established with the
two-rule heuristic (person's own name first, then the father's/husband's
name), short and non-alphanumeric names are dropped, and finally names
seen fewer than ``floor`` times across the whole input are removed.
"""
from __future__ import annotations

import csv
import logging
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

from namestate.errors import DataError

log = logging.getLogger(__name__)

_VALID_NAME = re.compile(r"[a-z0-9]+")

SEX_FEMALE = "F"
SEX_MALE = "M"
SEX_UNKNOWN = "U"

CLEAN_HEADER = ("last_name", "sex", "state")


@dataclass(frozen=True)
class RawRecord:
    first_name: str
    last_name_field: str
    relative_name: str
    sex: str
    state: str


@dataclass(frozen=True)
class CleanRecord:
    last_name: str
    sex: str
    state: str


@dataclass(frozen=True)
class RollSchema:
    """Column names for each field of a roll file.

    ``first`` and ``state`` are required; the others may be ``None`` when the
    file has no such column.
    """

    first: str = "first_name"
    last: Optional[str] = "last_name"
    relative: Optional[str] = "relative_name"
    sex: Optional[str] = "sex"
    state: str = "state"


def normalize_sex(value: str) -> str:
    v = value.strip().lower()
    if v in ("f", "female"):
        return SEX_FEMALE
    if v in ("m", "male"):
        return SEX_MALE
    return SEX_UNKNOWN


def extract_last_name(full_name: str, relative_name: str) -> Optional[str]:
    """Return the last word of the first multi-word name, or None.

    >>> extract_last_name("anita dhingra", "raj dhingra")
    'dhingra'
    >>> extract_last_name("anita", "raj dhingra")
    'dhingra'
    >>> extract_last_name("anita", "raj") is None
    True
    """
    for name in (full_name, relative_name):
        words = name.split()
        if len(words) >= 2:
            return words[-1]
    return None


def normalize_and_filter(candidate: str) -> Optional[str]:
    """Lowercase a last-name token; None if shorter than 3 or not [a-z0-9]."""
    token = candidate.lower()
    if len(token) < 3:
        return None
    if not _VALID_NAME.fullmatch(token):
        return None
    return token


def apply_frequency_floor(records: Iterable[CleanRecord], floor: int = 3) -> list[CleanRecord]:
    """Keep only records whose last name occurs at least ``floor`` times.

    The input is buffered, so any iterable works. Survivors keep their order.
    """
    buffered = list(records)
    counts = Counter(r.last_name for r in buffered)
    return [r for r in buffered if counts[r.last_name] >= floor]


class RollReader:
    """Iterate over RawRecords of one delimited file.

    Malformed rows (wrong field count, empty state) are skipped and counted in
    ``skipped``; the count is final once iteration is exhausted.
    """

    def __init__(self, path: str | Path, schema: RollSchema = RollSchema(), delimiter: str = ","):
        self.path = Path(path)
        self.schema = schema
        self.delimiter = delimiter
        self.skipped = 0
        self.read = 0

    def _column_index(self, header: list[str]) -> dict[str, Optional[int]]:
        index = {}
        for role in ("first", "last", "relative", "sex", "state"):
            column = getattr(self.schema, role)
            if column is None:
                index[role] = None
                continue
            if column not in header:
                raise DataError(f"{self.path}: missing column {column!r} (mapped to {role})")
            index[role] = header.index(column)
        return index

    def __iter__(self) -> Iterator[RawRecord]:
        try:
            fh = open(self.path, newline="", encoding="utf-8")
        except OSError as exc:
            raise DataError(f"cannot read {self.path}: {exc}") from exc
        with fh:
            reader = csv.reader(fh, delimiter=self.delimiter)
            header = next(reader, None)
            if header is None:
                raise DataError(f"{self.path}: empty file, expected a header row")
            header = [h.strip() for h in header]
            idx = self._column_index(header)
            width = len(header)

            def field(row: list[str], role: str) -> str:
                i = idx[role]
                return "" if i is None else row[i].strip()

            for row in reader:
                if not row:
                    continue
                if len(row) != width or not field(row, "state"):
                    self.skipped += 1
                    continue
                self.read += 1
                yield RawRecord(
                    first_name=field(row, "first"),
                    last_name_field=field(row, "last"),
                    relative_name=field(row, "relative"),
                    sex=normalize_sex(field(row, "sex")),
                    state=field(row, "state"),
                )
        if self.skipped:
            log.warning("%s: skipped %d malformed rows", self.path, self.skipped)


def load_rolls(path: str | Path, schema: RollSchema = RollSchema(), delimiter: str = ",") -> RollReader:
    return RollReader(path, schema, delimiter)


def clean(raw: Iterable[RawRecord]) -> Iterator[CleanRecord]:
    """Extraction and per-token filters; the frequency floor is applied separately."""
    for rec in raw:
        full_name = " ".join(p for p in (rec.first_name, rec.last_name_field) if p)
        candidate = extract_last_name(full_name, rec.relative_name)
        if candidate is None:
            continue
        name = normalize_and_filter(candidate)
        if name is None:
            continue
        yield CleanRecord(name, rec.sex, rec.state)


def preprocess(readers: Iterable[RollReader], floor: int = 3, threads: int = 1) -> list[CleanRecord]:
    """Run the full ingest pipeline over one or more roll files.

    Files are parsed independently (in parallel when ``threads > 1``) and
    concatenated in the given order before the frequency floor.
    """
    readers = list(readers)
    if threads > 1 and len(readers) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda r: list(clean(r)), readers))
    else:
        parts = [list(clean(r)) for r in readers]
    records = [rec for part in parts for rec in part]
    return apply_frequency_floor(records, floor)


def write_clean(records: Iterable[CleanRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CLEAN_HEADER)
        for r in records:
            writer.writerow((r.last_name, r.sex, r.state))


def read_clean(path: str | Path) -> list[CleanRecord]:
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CLEAN_HEADER:
            raise DataError(f"{path}: expected header {','.join(CLEAN_HEADER)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            name, sex, state = row
            if normalize_and_filter(name) != name or not state:
                raise DataError(f"{path}:{lineno}: invalid clean record {row!r}")
            out.append(CleanRecord(name, normalize_sex(sex), state))
        return out
