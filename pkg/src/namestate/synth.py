"""Synthetic electoral-roll corpora with suffix-coded states.

Each last name is a random stem plus a suffix owned by its home state (for
example ``-kar`` for Maharashtra, ``-appa`` for Karnataka). A record lives in
the home state, except with probability ``noise`` it is drawn from the
population weights instead. Rows use the raw roll layout read by
:mod:`namestate.ingest`, mixing three ways of writing the name so that both
last-name extraction rules get exercised.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

ROLL_HEADER = ("first_name", "last_name", "relative_name", "sex", "state")

SUFFIX_BANK: list[tuple[str, tuple[str, ...]]] = [
    ("Uttar Pradesh", ("vedi", "nath", "ansh")),
    ("Maharashtra", ("kar", "wade", "pure")),
    ("Karnataka", ("appa", "gowda", "iah")),
    ("Punjab", ("ngra", "walia", "preet")),
    ("Kerala", ("ttil", "kutty", "ppan")),
    ("Gujarat", ("bhai", "wala", "odia")),
    ("Assam", ("bora", "goi", "hazz")),
    ("Odisha", ("patra", "ssetti", "nanda")),
    ("Bihar", ("jha", "thakur", "mishr")),
    ("Tripura", ("debb", "barma", "tomp")),
    ("Telengana", ("reddy", "rao", "ulu")),
    ("Rajasthan", ("singhv", "meena", "lodh")),
]

_CONSONANTS = "bcdfghjklmnprstvy"
_VOWELS = "aeiou"
_FIRST_F = ("anita", "sunita", "priya", "kavita", "meena", "lata", "asha", "rekha")
_FIRST_M = ("raj", "amit", "sunil", "vijay", "ramesh", "arun", "manoj", "ravi")


@dataclass
class SynthSpec:
    states: list[tuple[str, float]]
    suffixes: dict[str, list[str]]
    n_names: int = 2000
    noise: float = 0.1
    records_min: int = 3
    records_log_mean: float = 1.0
    records_log_sigma: float = 1.0
    female_beta: tuple[float, float] = (2.0, 2.0)
    unknown_sex_rate: float = 0.02
    seed: int = 42
    suffix_weights: Optional[dict[str, list[float]]] = None  # uniform when absent

    def __post_init__(self):
        if any(w <= 0 for _, w in self.states):
            raise ValueError("state weights must be positive")
        if self.n_names < len(self.states):
            raise ValueError("need at least as many names as states")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        missing = [s for s, _ in self.states if not self.suffixes.get(s)]
        if missing:
            raise ValueError(f"no suffixes for states {missing}")
        for state, ws in (self.suffix_weights or {}).items():
            if len(ws) != len(self.suffixes.get(state, ())) or any(w <= 0 for w in ws):
                raise ValueError(f"suffix weights for {state!r} must be positive, one per suffix")
        all_suffixes = [(s, x) for s, xs in self.suffixes.items() for x in xs]
        for s1, a in all_suffixes:
            for s2, b in all_suffixes:
                if s1 != s2 and (a.endswith(b) or b.endswith(a)):
                    raise ValueError(f"suffix {a!r} ({s1}) and {b!r} ({s2}) overlap")


def default_spec(n_states: int = 5, n_names: int = 2000, noise: float = 0.1, seed: int = 42,
                 **kwargs) -> SynthSpec:
    """States from the built-in bank with weights proportional to ``1/sqrt(rank)``."""
    if not 1 <= n_states <= len(SUFFIX_BANK):
        raise ValueError(f"n_states must lie in 1..{len(SUFFIX_BANK)}")
    bank = SUFFIX_BANK[:n_states]
    states = [(name, 1.0 / np.sqrt(rank + 1)) for rank, (name, _) in enumerate(bank)]
    suffixes = {name: list(sfx) for name, sfx in bank}
    return SynthSpec(states=states, suffixes=suffixes, n_names=n_names, noise=noise, seed=seed, **kwargs)


@dataclass
class SynthName:
    name: str
    home: str
    records: list[tuple[str, str]] = field(default_factory=list)  # (state, sex)


def _stem(rng: np.random.Generator) -> str:
    syllables = rng.integers(1, 3)
    return "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))]
                   for _ in range(syllables))


def sample_names(spec: SynthSpec) -> list[SynthName]:
    """Draw names, home states and per-record (state, sex).

    Home states are assigned by quota: each name goes to the state whose
    record total lags furthest behind its population share, so record-level
    state marginals track the weights closely.
    """
    rng = np.random.default_rng(spec.seed)
    names = [s for s, _ in spec.states]
    weights = np.array([w for _, w in spec.states], dtype=np.float64)
    weights /= weights.sum()
    home_records = np.zeros(len(names))
    seen: set[str] = set()
    out = []
    for _ in range(spec.n_names):
        count = max(spec.records_min,
                    int(round(np.exp(rng.normal(spec.records_log_mean, spec.records_log_sigma)))))
        deficit = weights * (home_records.sum() + count) - home_records
        home_i = int(np.argmax(deficit))
        home_records[home_i] += count
        home = names[home_i]
        sfx = spec.suffixes[home]
        sfx_p = None
        if spec.suffix_weights and home in spec.suffix_weights:
            sfx_p = np.asarray(spec.suffix_weights[home], dtype=np.float64)
            sfx_p /= sfx_p.sum()
        while True:
            name = _stem(rng) + sfx[rng.choice(len(sfx), p=sfx_p) if sfx_p is not None else rng.integers(len(sfx))]
            if name not in seen:
                seen.add(name)
                break
        p_female = rng.beta(*spec.female_beta)
        rec = SynthName(name, home)
        for _ in range(count):
            if rng.random() < spec.noise:
                state = names[rng.choice(len(names), p=weights)]
            else:
                state = home
            u = rng.random()
            sex = "" if u < spec.unknown_sex_rate else ("F" if rng.random() < p_female else "M")
            rec.records.append((state, sex))
        out.append(rec)
    return out


def roll_rows(spec: SynthSpec) -> list[tuple[str, str, str, str, str]]:
    rng = np.random.default_rng(spec.seed + 1)
    rows = []
    for sn in sample_names(spec):
        for state, sex in sn.records:
            pool = _FIRST_F if sex == "F" else _FIRST_M
            first = pool[rng.integers(len(pool))]
            father = _FIRST_M[rng.integers(len(_FIRST_M))]
            surname = sn.name.capitalize() if rng.random() < 0.5 else sn.name
            layout = rng.integers(3)
            if layout == 0:  # surname in its own column
                rows.append((first, surname, f"{father} {sn.name}", sex, state))
            elif layout == 1:  # full name in the first-name column
                rows.append((f"{first} {surname}", "", father, sex, state))
            else:  # only the relative's name carries the surname
                rows.append((first, "", f"{father} {surname}", sex, state))
    order = rng.permutation(len(rows))
    return [rows[i] for i in order]


def generate(spec: SynthSpec, path: str | Path) -> int:
    """Write a raw roll file; returns the number of data rows."""
    rows = roll_rows(spec)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROLL_HEADER)
        w.writerows(rows)
    return len(rows)


def suffix_state(spec: SynthSpec, name: str) -> Optional[str]:
    """The state whose suffix ``name`` ends with, if any."""
    for state, sfx in spec.suffixes.items():
        if any(name.endswith(x) for x in sfx):
            return state
    return None
