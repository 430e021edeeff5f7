import numpy as np
import pytest

from incomepanel.cli import main
from incomepanel.config import DEFAULTS, ExperimentConfig, parse_config_text
from incomepanel.dataset import ingest_wide_csv, load_codebook, unroll_longitudinal
from incomepanel.errors import DataError
from incomepanel.evaluation import accuracy
from incomepanel.experiments import (
    class_labels,
    prepare,
    run_ablation,
    run_baseline,
    run_explain,
    run_longitudinal_compare,
    run_model_comparison,
    substream,
)
from incomepanel.features import class_distribution
from incomepanel.synth import SynthSpec, generate_panel, generate_synthetic, shipped_codebook

from conftest import shipped_codebook_path, write

FAST = {"forest.trees": "15", "mlp.epochs": "20", "explain.instances": "40", "explain.samples": "16"}


def config_for(paths, **extra):
    values = dict(FAST, codebook=str(paths[0]), data=str(paths[1]), seed="5")
    values.update({k.replace("__", "."): str(v) for k, v in extra.items()})
    return ExperimentConfig.load(None, **values)


def test_config_parsing(tmp_path):
    text = "# comment\nseed = 3  # trailing\nforest.trees=50\nalias.work_weeks = work tenure\n\n"
    values = parse_config_text(text)
    assert values == {"seed": "3", "forest.trees": "50", "alias.work_weeks": "work tenure"}
    with pytest.raises(DataError, match="line 1: unknown key"):
        parse_config_text("forest.tree = 3")
    with pytest.raises(DataError, match="line 2"):
        parse_config_text("seed = 1\nno equals sign")
    cfg = ExperimentConfig.load(write(tmp_path / "c.txt", text), forest__mtry=4)
    assert cfg.seed == 3 and cfg.integer("forest.trees") == 50 and cfg.integer("forest.mtry") == 4
    assert cfg.alias("work_weeks") == "work tenure" and cfg.alias("age") == "age"
    assert cfg.flag("forest.bootstrap") is True and cfg.integer("forest.max_depth") is None


def test_config_seed_is_mandatory():
    with pytest.raises(DataError, match="seed"):
        ExperimentConfig.load().seed


def test_config_digest_ignores_locations():
    a = ExperimentConfig.load(seed=1, data="/a/x.csv", out="r1")
    b = ExperimentConfig.load(seed=1, data="/b/x.csv", out="r2")
    assert a.digest() == b.digest()
    assert a.digest() != ExperimentConfig.load(seed=2).digest()


def test_every_default_key_documented_in_readme():
    from pathlib import Path

    readme = (Path(__file__).parents[1] / "README.md").read_text(encoding="utf-8")
    missing = [k for k in DEFAULTS if f"`{k}`" not in readme]
    assert not missing


def test_substreams():
    assert substream(1, "split") == substream(1, "split")
    assert len({substream(1, "split"), substream(1, "forest"), substream(2, "split")}) == 3


def test_class_labels():
    assert class_labels((50_000.0, 100_000.0)) == ("Less than 50K", "Between 50K and 100K", "More than 100K")


def test_synth_is_deterministic_and_ingests(tmp_path):
    spec = SynthSpec(individuals=50)
    generate_synthetic(spec, 3, tmp_path / "a.csv")
    generate_synthetic(spec, 3, tmp_path / "b.csv")
    generate_synthetic(spec, 4, tmp_path / "c.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a.csv").read_bytes() != (tmp_path / "c.csv").read_bytes()
    wide = ingest_wide_csv(tmp_path / "a.csv", load_codebook(shipped_codebook_path(tmp_path / "cb.csv")))
    assert len(wide) == 50


def test_synth_zero_noise_single_effect_is_monotone():
    spec = SynthSpec(
        individuals=300, effects={"degree": 1.0}, person_effect=0.0, noise=0.0, missing_rate=0.0, invalid_income_rate=0.0
    )
    # only effects named in the spec are non-zero
    wide = generate_panel(spec, 1)
    long = unroll_longitudinal(wide)
    degree, income = long.column("degree"), long.column("income")
    order = np.argsort(degree, kind="stable")
    d, inc = degree[order], income[order]
    for a, b in zip(np.unique(d), np.unique(d)[1:]):
        assert inc[d == a].max() < inc[d == b].min()


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(missing_rate=1.0)
    with pytest.raises(ValueError):
        SynthSpec(effects={"degree": float("inf")})
    assert shipped_codebook((2001, 2003)).years == (2001, 2003)


@pytest.fixture(scope="module")
def prepared(synth_small):
    cfg = config_for(synth_small)
    return cfg, prepare(cfg)


def test_prepare_prunes_to_eleven_features(prepared):
    _, prep = prepared
    assert len(prep.kept) == 11
    assert "highest_grade" not in prep.kept and "degree" in prep.kept
    assert prep.removed > 0


def test_baseline_equals_test_majority_share(prepared):
    cfg, prep = prepared
    bundle = run_baseline(cfg, prep)
    r = bundle.reports[0]
    actual = prep.matrix.targets[r.test_index]
    train = np.setdiff1d(np.arange(len(prep.matrix)), r.test_index)
    majority = int(np.argmax(np.bincount(prep.matrix.targets[train])))
    assert majority == int(np.argmax(np.bincount(actual)))
    assert r.accuracy == 100.0 * max(class_distribution(actual))
    assert r.weighted_auc == 0.5


def test_comparison_shares_one_split(prepared):
    cfg, prep = prepared
    bundle = run_model_comparison(cfg.with_values(models="majority,forest,mlp"), prep)
    assert [r.name for r in bundle.reports] == ["Majority vote", "Random Forest", "Multilayer Perceptron"]
    first = bundle.reports[0].test_index
    assert all(np.array_equal(r.test_index, first) for r in bundle.reports)
    assert bundle.reports[1].accuracy >= bundle.reports[0].accuracy + 5
    for r in bundle.reports:
        assert accuracy(r.confusion) == r.accuracy
    assert bundle.markdown().count("\n| Random Forest |") == 1


def test_ablation_structure(prepared):
    cfg, prep = prepared
    bundle = run_ablation(cfg, prep)
    assert len(bundle.reports) == 1 + len(prep.kept)
    assert bundle.reports[0].name == "baseline: with all 11 features"
    assert all(np.array_equal(r.test_index, bundle.reports[0].test_index) for r in bundle.reports)
    two = run_ablation(cfg.with_values(**{"ablate.features": "degree,sex", "alias.sex": "gender"}), prep)
    assert [r.name for r in two.reports] == ["baseline: with all 2 features", "without degree", "without gender"]
    with pytest.raises(DataError):
        run_ablation(cfg.with_values(**{"ablate.features": "degree"}), prep)


def test_longitudinal_equal_sizes(prepared):
    cfg, prep = prepared
    bundle = run_longitudinal_compare(cfg, prep)
    t1, t2 = bundle.reports
    assert t1.n_train + t1.n_test == t2.n_train + t2.n_test == bundle.metadata["task_size"]
    assert bundle.metadata["task_size"] % 4 == 0


def test_longitudinal_needs_two_years(prepared):
    cfg, prep = prepared
    one_year = prep.long.take(np.flatnonzero(prep.long.years == 2021))
    from dataclasses import replace

    with pytest.raises(DataError, match="two years"):
        run_longitudinal_compare(cfg, replace(prep, long=one_year))


def test_explain_forest_local_accuracy(prepared):
    cfg, prep = prepared
    bundle = run_explain(cfg, prep)
    assert bundle.metadata["method"] == "tree"
    assert bundle.metadata["max_local_accuracy_gap"] <= 1e-6
    assert len(bundle.shap) == 40
    assert set(bundle.ranking.names) == set(prep.kept)


def test_explain_sampling_for_other_models(prepared):
    cfg, prep = prepared
    bundle = run_explain(cfg.with_values(model="mlp", **{"explain.instances": "5"}), prep)
    assert bundle.metadata["method"] == "sampling"
    assert bundle.metadata["max_local_accuracy_gap"] < 0.2


def run_cli(*args):
    return main([str(a) for a in args])


def test_cli_exit_codes(tmp_path, synth_small, capsys):
    cb, data = synth_small
    assert run_cli() == 1
    assert run_cli("baseline", "--bogus") == 1
    assert run_cli("baseline", "--codebook", cb, "--data", data, "--out", tmp_path) == 1  # no seed
    assert run_cli("baseline", "--codebook", cb, "--data", tmp_path / "none.csv", "--seed", 1, "--out", tmp_path) == 2
    bad = write(tmp_path / "bad.csv", data.read_text().replace("\n1,", "\nx,", 1))
    assert run_cli("ingest", "--codebook", cb, "--data", bad, "--seed", 1, "--out", tmp_path) == 2
    assert run_cli("baseline", "--codebook", cb, "--data", data, "--seed", 1, "--out", tmp_path, "--set", "nope=1") == 2
    args = ["compare", "--codebook", cb, "--data", data, "--seed", 1, "--out", tmp_path]
    assert run_cli(*args, "--set", "models=svm", "--set", "svm.max_iter=2") == 3
    assert run_cli("ingest", "--codebook", cb, "--data", data, "--seed", 1, "--out", tmp_path) == 0
    assert (tmp_path / "long.csv").exists()
    capsys.readouterr()


def test_cli_synth_then_explore(tmp_path):
    assert run_cli("synth", "--seed", 2, "--out", tmp_path / "d", "--set", "synth.individuals=60") == 0
    assert run_cli("explore", "--codebook", tmp_path / "d/codebook.csv", "--data", tmp_path / "d/panel.csv",
                   "--seed", 2, "--out", tmp_path / "r") == 0
    header = (tmp_path / "r/correlation.csv").read_text().splitlines()[0].split(",")
    assert header[0] == "variable" and "income" in header
    assert (tmp_path / "r/kept_features.txt").read_text().splitlines()
