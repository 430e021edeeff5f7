"""Flat ``key = value`` experiment configuration.

Lines starting with ``#`` and trailing ``# ...`` comments are ignored.
Every recognised key and its default is listed in ``DEFAULTS``; unknown
keys are an error so typos do not pass silently. Keys of the form
``alias.<variable> = <display name>`` rename variables in report tables.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError

EXPERIMENTS = ("baseline", "compare", "longitudinal", "ablate", "explain")

DEFAULTS: dict[str, str] = {
    "codebook": "",
    "data": "",
    "out": "reports",
    "seed": "",
    "experiment": "compare",
    "models": "majority,forest,svm,mlp",
    "model": "forest",
    "train_fraction": "0.8",
    "group_by_individual": "false",
    "prune_threshold": "0.7",
    "keep_list": "degree,residential_father_grade,residential_mother_grade",
    "one_hot": "true",
    "missing_level": "false",
    "forest.trees": "100",
    "forest.mtry": "auto",
    "forest.min_leaf": "1",
    "forest.max_depth": "none",
    "forest.bootstrap": "true",
    "svm.C": "1.0",
    "svm.kernel": "linear",
    "svm.gamma": "0.01",
    "svm.tol": "0.001",
    "svm.max_iter": "auto",
    "mlp.hidden": "auto",
    "mlp.rate": "0.3",
    "mlp.momentum": "0.2",
    "mlp.epochs": "500",
    "mlp.batch_size": "32",
    "longitudinal.size": "auto",
    "ablate.features": "all",
    "explain.instances": "500",
    "explain.samples": "128",
    "explain.background": "100",
    "synth.individuals": "2000",
    "synth.missing_rate": "0.03",
    "synth.invalid_income_rate": "0.1",
    "synth.person_effect": "0.6",
    "synth.noise": "0.5",
}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataError(f"{origin}: line {lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in DEFAULTS and not key.startswith("alias."):
            raise DataError(f"{origin}: line {lineno}: unknown key {key!r}")
        out[key] = value
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | Path | None = None, **overrides) -> "ExperimentConfig":
        values = dict(DEFAULTS)
        if path is not None:
            values.update(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))
        for key, value in overrides.items():
            if value is None:
                continue
            key = key.replace("__", ".")
            if key not in DEFAULTS and not key.startswith("alias."):
                raise DataError(f"unknown config key {key!r}")
            values[key] = str(value)
        return cls(values)

    def with_values(self, **changes) -> "ExperimentConfig":
        values = dict(self.values)
        for key, value in changes.items():
            values[key.replace("__", ".")] = str(value)
        return ExperimentConfig(values)

    def __getitem__(self, key: str) -> str:
        return self.values.get(key, DEFAULTS.get(key, ""))

    def text(self, key: str) -> str:
        return self[key]

    def integer(self, key: str) -> int | None:
        v = self[key].lower()
        if v in ("auto", "none", ""):
            return None
        try:
            return int(v)
        except ValueError:
            raise DataError(f"config {key}: expected an integer, got {self[key]!r}") from None

    def real(self, key: str) -> float:
        try:
            return float(self[key])
        except ValueError:
            raise DataError(f"config {key}: expected a number, got {self[key]!r}") from None

    def flag(self, key: str) -> bool:
        v = self[key].lower()
        if v in _TRUE:
            return True
        if v in _FALSE:
            return False
        raise DataError(f"config {key}: expected true/false, got {self[key]!r}")

    def names(self, key: str) -> list[str]:
        return [t.strip() for t in self[key].split(",") if t.strip()]

    @property
    def seed(self) -> int:
        seed = self.integer("seed")
        if seed is None:
            raise DataError("a seed is required (config key 'seed' or --seed)")
        return seed

    def alias(self, variable: str) -> str:
        return self.values.get(f"alias.{variable}", variable)

    def canonical(self) -> str:
        """Settings that affect results; file locations are left out."""
        skip = {"out", "codebook", "data"}
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values) if k not in skip)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()

    def check_paths(self) -> None:
        for key in ("codebook", "data"):
            if not self[key]:
                raise DataError(f"config {key!r} is required")
            if not Path(self[key]).exists():
                raise DataError(f"{key} file not found: {self[key]}")
