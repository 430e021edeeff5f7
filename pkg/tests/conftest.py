import shutil
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from incomepanel.synth import SynthSpec, generate_synthetic

TINY_CODEBOOK = """name,role,kind,missing_codes,valid_values,year_suffixes,recode_ref,bin_edges
pid,id,numeric,,,,,
sex,feature,nominal,-1;-2,1:2,,,
grade,feature,numeric,-1;-2,0:20;95,,,
hours,feature,numeric,-1;-2;-3,,2019;2021,,
income,target,numeric,-1;-2,,2019;2021,,50000;100000
"""

TINY_PANEL = """pid,sex,grade,hours#2019,hours#2021,income#2019,income#2021
10,1,12,2000,2100,40000,60000
11,2,-2,1500,-3,120000,-1
12,2,16,,1800,50000,99999
"""


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture
def tiny(tmp_path):
    return write(tmp_path / "codebook.csv", TINY_CODEBOOK), write(tmp_path / "panel.csv", TINY_PANEL)


def shipped_codebook_path(dest: Path) -> Path:
    with resources.as_file(resources.files("incomepanel.data").joinpath("codebook_nlsy97.csv")) as src:
        shutil.copyfile(src, dest)
    return dest


@pytest.fixture(scope="session")
def synth_small(tmp_path_factory):
    """A 400-person synthetic panel and the shipped codebook, on disk."""
    d = tmp_path_factory.mktemp("synth")
    generate_synthetic(SynthSpec(individuals=400), 7, d / "panel.csv")
    return shipped_codebook_path(d / "codebook.csv"), d / "panel.csv"


CRITERIA: list[str] = []


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance lines after the run, outside output capture."""
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
