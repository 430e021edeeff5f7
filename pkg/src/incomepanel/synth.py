"""Synthetic NLSY-style panel with planted income effects.

Income is ``exp(a + b * L)`` where the latent score ``L`` adds up weighted,
standardised per-variable signals, a persistent per-person effect and
per-year noise. ``a`` and ``b`` are fixed from quantiles of ``L`` so the
binned classes land on the requested priors. Rows are written in the same
wide layout as a real extract, including negative non-response codes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dataset import Codebook, WideTable, load_codebook, write_wide_csv
from .features import DEFAULT_BIN_EDGES, load_recode_map

DEFAULT_EFFECTS = {
    "degree": 1.0,
    "occupation": 0.7,
    "sex": 0.5,
    "work_hours": 0.25,
    "age": 0.2,
    "work_weeks": 0.15,
    "parental_hh_income": 0.1,
    "industry": 0.1,
    "race": 0.05,
    "residential_father_grade": 0.05,
    "residential_mother_grade": 0.05,
}
SURVEY_PRIORS = (0.57564, 0.31344, 0.11092)


@dataclass(frozen=True)
class SynthSpec:
    individuals: int = 2000
    years: tuple[int, ...] = (2015, 2017, 2019, 2021)
    effects: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_EFFECTS))
    person_effect: float = 0.6
    noise: float = 0.5
    missing_rate: float = 0.03
    invalid_income_rate: float = 0.1
    class_priors: tuple[float, ...] = SURVEY_PRIORS
    class_edges: tuple[float, ...] = DEFAULT_BIN_EDGES

    def __post_init__(self):
        if not all(np.isfinite(w) for w in self.effects.values()):
            raise ValueError("effect weights must be finite")
        for rate in (self.missing_rate, self.invalid_income_rate):
            if not 0 <= rate < 1:
                raise ValueError("rates must lie in [0, 1)")
        if self.individuals < 1:
            raise ValueError("need at least one individual")
        if len(self.class_priors) != len(self.class_edges) + 1 or abs(sum(self.class_priors) - 1) > 1e-9:
            raise ValueError("class_priors must sum to 1 and have one more entry than class_edges")


def shipped_codebook(years: tuple[int, ...] = (2015, 2017, 2019, 2021)) -> Codebook:
    with resources.as_file(resources.files("incomepanel.data").joinpath("codebook_nlsy97.csv")) as p:
        cb = load_codebook(p)
    if tuple(years) == cb.years:
        return cb
    from dataclasses import replace

    variables = tuple(replace(v, year_suffixes=tuple(years)) if v.repeated else v for v in cb.variables)
    return Codebook.from_variables(variables, source=cb.source)


def _shipped_map(name):
    with resources.as_file(resources.files("incomepanel.data").joinpath(f"{name}.csv")) as p:
        return load_recode_map(p, name)


def _std(a):
    sd = a.std()
    return (a - a.mean()) / sd if sd > 0 else np.zeros_like(a)


def _raw_code(rng, recode, groups):
    """A raw census code drawn uniformly inside each group's first range."""
    first = {}
    for lo, hi, cat in recode.ranges:
        first.setdefault(cat, (lo, hi))
    lo = np.array([first[g][0] for g in groups])
    hi = np.array([first[g][1] for g in groups])
    return lo + np.floor(rng.random(len(groups)) * (hi - lo + 1)).astype(int)


def generate_panel(spec: SynthSpec, seed: int) -> WideTable:
    rng = np.random.default_rng(seed)
    n, years = spec.individuals, tuple(spec.years)
    k = len(years)
    cb = shipped_codebook(years)
    w = {name: spec.effects.get(name, 0.0) for name in DEFAULT_EFFECTS}
    w.update(spec.effects)

    ses = rng.normal(size=n)  # family background, shared by parents' variables
    sex = rng.integers(1, 3, n)
    race = rng.choice(np.arange(1, 6), n, p=[0.5, 0.25, 0.15, 0.05, 0.05])
    degree_latent = 0.4 * ses + rng.normal(size=n)
    degree = np.digitize(degree_latent, np.quantile(degree_latent, [0.08, 0.18, 0.58, 0.66, 0.86, 0.95, 0.98]))
    typical_grade = np.array([10, 12, 12, 14, 16, 18, 20, 20])
    highest_grade = np.clip(typical_grade[degree] + rng.integers(-1, 2, n), 6, 20)

    def grades():
        bio = np.clip(np.round(12 + 1.5 * ses + 2.0 * rng.normal(size=n)), 1, 20)
        swap = rng.random(n) < 0.1
        res = np.where(swap, np.clip(np.round(12 + 2.5 * rng.normal(size=n)), 1, 20), bio)
        return bio, res

    bio_father, res_father = grades()
    bio_mother, res_mother = grades()
    hh_income = np.round(np.exp(11.0 + 0.5 * ses + 0.5 * rng.normal(size=n)))

    occ_map, ind_map = _shipped_map("occupation"), _shipped_map("industry")
    occ_effect = rng.normal(size=len(occ_map.categories) + 1)
    ind_effect = rng.normal(size=len(ind_map.categories) + 1)
    race_effect = rng.normal(size=6)

    birth_month = rng.integers(0, 60, n)  # born 1980-1984
    person = rng.normal(size=n)
    hours_level = rng.normal(1900, 350, n)
    weeks_start = np.maximum(0, rng.normal(400, 120, n))

    occ_group = np.empty((n, k), dtype=int)
    ind_group = np.empty((n, k), dtype=int)
    occ_group[:, 0] = rng.integers(1, len(occ_map.categories) + 1, n)
    ind_group[:, 0] = rng.integers(1, len(ind_map.categories) + 1, n)
    for t in range(1, k):
        move = rng.random(n) < 0.15
        occ_group[:, t] = np.where(move, rng.integers(1, len(occ_map.categories) + 1, n), occ_group[:, t - 1])
        move = rng.random(n) < 0.15
        ind_group[:, t] = np.where(move, rng.integers(1, len(ind_map.categories) + 1, n), ind_group[:, t - 1])

    age = np.empty((n, k))
    weeks = np.empty((n, k))
    hours = np.empty((n, k))
    for t, y in enumerate(years):
        age[:, t] = (y - 1980) * 12 + 6 - birth_month + rng.integers(0, 6, n)
        weeks[:, t] = np.round(weeks_start + (y - years[0]) * 45 + rng.integers(0, 10, n))
        hours[:, t] = np.round(np.clip(hours_level + rng.normal(0, 250, n), 0, 4500))

    static = (
        w["degree"] * _std(degree.astype(float))
        + w["sex"] * np.where(sex == 1, 1.0, -1.0)
        + w["race"] * _std(race_effect[race])
        + w["residential_father_grade"] * _std(res_father)
        + w["residential_mother_grade"] * _std(res_mother)
        + w["parental_hh_income"] * _std(np.log(hh_income))
        + spec.person_effect * person
    )
    latent = (
        static[:, None]
        + w["occupation"] * _std(occ_effect[occ_group])
        + w["industry"] * _std(ind_effect[ind_group])
        + w["age"] * _std(age)
        + w["work_weeks"] * _std(weeks)
        + w["work_hours"] * _std(hours)
        + spec.noise * rng.normal(size=(n, k))
    )
    cuts = np.quantile(latent, np.cumsum(spec.class_priors)[:-1])
    logs = np.log(np.asarray(spec.class_edges))
    if len(cuts) >= 2 and cuts[-1] > cuts[0]:
        slope = (logs[-1] - logs[0]) / (cuts[-1] - cuts[0])
    else:
        slope = 1.0
    income = np.round(np.exp(logs[0] + slope * (latent - cuts[0])))

    def blank(a, rate):
        a = np.asarray(a, dtype=float).copy()
        hit = rng.random(a.shape) < rate
        a[hit] = -rng.integers(1, 6, hit.sum())
        return a

    r = spec.missing_rate
    cells = {
        ("sex", None): blank(sex, r),
        ("race", None): blank(race, r),
        ("degree", None): blank(degree, r),
        ("bio_father_grade", None): blank(bio_father, r),
        ("bio_mother_grade", None): blank(bio_mother, r),
        ("residential_father_grade", None): blank(res_father, r),
        ("residential_mother_grade", None): blank(res_mother, r),
        ("parental_hh_income", None): blank(hh_income, r),
        ("highest_grade", None): blank(highest_grade, r),
    }
    occ_raw = _raw_code(rng, occ_map, occ_group.ravel()).reshape(n, k)
    ind_raw = _raw_code(rng, ind_map, ind_group.ravel()).reshape(n, k)
    repeated = {
        "age": blank(age, r),
        "industry": blank(ind_raw, r),
        "occupation": blank(occ_raw, r),
        "work_weeks": blank(weeks, r),
        "work_hours": blank(hours, r),
        "income": blank(income, spec.invalid_income_rate),
    }
    for name, block in repeated.items():
        for t, y in enumerate(years):
            cells[(name, y)] = block[:, t]
    for a in cells.values():
        a.setflags(write=False)
    ids = np.arange(1, n + 1, dtype=np.int64)
    return WideTable(cb, ids, cells)


def generate_synthetic(spec: SynthSpec, seed: int, path: str | Path) -> WideTable:
    """Write a wide CSV for ``spec`` and return the in-memory table."""
    wide = generate_panel(spec, seed)
    write_wide_csv(wide, path)
    return wide
