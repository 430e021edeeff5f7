"""Configuration-driven experiment runners and their report bundles.

Every runner is a pure function of the configuration and the input files:
randomness comes from named substreams of the root seed and reports carry
no wall-clock data, so a rerun writes byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .dataset import (
    LongTable,
    balanced_year_sample,
    filter_invalid_target,
    format_cell,
    ingest_wide_csv,
    load_codebook,
    mark_missing,
    unroll_longitudinal,
)
from .errors import DataError
from .evaluation import (
    EvalReport,
    SplitSpec,
    confusion_markdown,
    evaluate_split,
    markdown_table,
    percentage_split,
    write_metrics_csv,
)
from .explain import (
    FeatureRanking,
    ShapMatrix,
    aggregate_matrix,
    mean_abs_ranking,
    sampling_shap,
    shap_summary_export,
    tree_shap_matrix,
)
from .features import (
    DEFAULT_BIN_EDGES,
    CorrelationMatrix,
    DesignMatrix,
    apply_recodes,
    bin_targets,
    correlation_matrix,
    encode_design_matrix,
    find_recode_maps,
    nominal_levels,
    prune_correlated,
)
from .learners import Kernel, fit_forest, fit_majority, fit_mlp, fit_svm_multiclass
from .learners.base import predict
from .learners.forest import ForestModel

MODEL_NAMES = {"majority": "Majority vote", "forest": "Random Forest", "svm": "SVM", "mlp": "Multilayer Perceptron"}


def _money(v: float) -> str:
    return f"{v / 1000:g}K" if v % 1000 == 0 else f"{v:g}"


def class_labels(edges) -> tuple[str, ...]:
    """Row/column names for income bands, e.g. ``Less than 50K``."""
    edges = list(edges)
    labels = [f"Less than {_money(edges[0])}"]
    labels += [f"Between {_money(a)} and {_money(b)}" for a, b in zip(edges, edges[1:])]
    labels.append(f"More than {_money(edges[-1])}")
    return tuple(labels)


def substream(seed: int, name: str) -> int:
    """A 63-bit seed for the named consumer, derived from the root seed."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass(frozen=True)
class Prepared:
    long: LongTable
    correlation: CorrelationMatrix
    kept: tuple[str, ...]
    matrix: DesignMatrix
    removed: int
    uncovered: dict[str, int]


def load_clean(config: ExperimentConfig) -> tuple[LongTable, int, dict[str, int]]:
    """Codebook, ingest, unroll, target filter, missing codes, recodes, binning."""
    config.check_paths()
    cb = load_codebook(config["codebook"])
    wide = ingest_wide_csv(config["data"], cb)
    long = unroll_longitudinal(wide)
    long, removed = filter_invalid_target(long)
    if len(long) == 0:
        raise DataError("no rows left after dropping invalid targets")
    long = mark_missing(long)
    long, uncovered = apply_recodes(long, find_recode_maps(cb, [Path(config["data"]).parent]))
    return bin_targets(long), removed, uncovered


def select_features(config: ExperimentConfig, long: LongTable) -> tuple[CorrelationMatrix, tuple[str, ...]]:
    corr = correlation_matrix(long)
    features = [v.name for v in long.codebook.features]
    kept = prune_correlated(corr.subset(features), config.real("prune_threshold"), config.names("keep_list"))
    return corr, tuple(kept)


def encode(config: ExperimentConfig, long: LongTable, kept, levels=None) -> DesignMatrix:
    return encode_design_matrix(long, kept, config.flag("one_hot"), config.flag("missing_level"), levels)


def prepare(config: ExperimentConfig) -> Prepared:
    long, removed, uncovered = load_clean(config)
    corr, kept = select_features(config, long)
    return Prepared(long, corr, kept, encode(config, long, kept), removed, uncovered)


def split_spec(config: ExperimentConfig) -> SplitSpec:
    return SplitSpec(config.real("train_fraction"), substream(config.seed, "split"), config.flag("group_by_individual"))


def model_fit_fn(config: ExperimentConfig, name: str) -> Callable[[DesignMatrix], object]:
    seed = config.seed
    if name == "majority":
        return fit_majority
    if name == "forest":
        return lambda m: fit_forest(
            m,
            trees=config.integer("forest.trees") or 100,
            mtry=config.integer("forest.mtry"),
            seed=substream(seed, "forest"),
            bootstrap=config.flag("forest.bootstrap"),
            min_leaf=config.integer("forest.min_leaf") or 1,
            max_depth=config.integer("forest.max_depth"),
        )
    if name == "svm":
        kernel = Kernel(config["svm.kernel"], config.real("svm.gamma"))
        return lambda m: fit_svm_multiclass(
            m, config.real("svm.C"), kernel, config.real("svm.tol"), config.integer("svm.max_iter")
        )
    if name == "mlp":
        return lambda m: fit_mlp(
            m,
            hidden=config.integer("mlp.hidden"),
            rate=config.real("mlp.rate"),
            momentum=config.real("mlp.momentum"),
            epochs=config.integer("mlp.epochs") or 500,
            seed=substream(seed, "mlp"),
            batch_size=config.integer("mlp.batch_size"),
        )
    raise DataError(f"unknown model {name!r}; expected one of {', '.join(MODEL_NAMES)}")


@dataclass
class ReportBundle:
    """Everything one experiment writes; ``write`` lays it out on disk."""

    kind: str
    reports: list[EvalReport]
    first_header: str
    metadata: dict
    ids: np.ndarray | None = None
    years: np.ndarray | None = None
    ranking: FeatureRanking | None = None
    shap: ShapMatrix | None = None
    feature_values: dict[str, np.ndarray] = field(default_factory=dict)
    show_confusion: bool = True
    class_names: tuple[str, ...] = class_labels(DEFAULT_BIN_EDGES)

    def markdown(self) -> str:
        parts = [markdown_table(self.reports, self.first_header)]
        if self.show_confusion:
            for r in self.reports:
                parts.append(f"\nConfusion matrix, {r.name}\n\n" + confusion_markdown(r.confusion, self.class_names))
        if self.ranking is not None:
            parts.append("\n| Variable | mean abs SHAP |\n|---|---|\n")
            parts.append("".join(f"| {name} | {value:.6f} |\n" for name, value in self.ranking.items))
        return "".join(parts)

    def write_predictions(self, path: Path) -> None:
        with path.open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            k = self.reports[0].scores.shape[1] if self.reports else 0
            w.writerow(["experiment", "row", "id", "year", "actual", "predicted", *(f"score_{c + 1}" for c in range(k))])
            for r in self.reports:
                for j, row in enumerate(r.test_index):
                    w.writerow(
                        [
                            r.name,
                            int(row),
                            int(self.ids[row]),
                            int(self.years[row]),
                            int(r.actual[j]),
                            int(r.predicted[j]),
                            *(repr(float(s)) for s in r.scores[j]),
                        ]
                    )

    def write(self, out: str | Path) -> list[Path]:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if self.reports:
            p = out / f"{self.kind}_metrics.csv"
            write_metrics_csv(self.reports, p)
            written.append(p)
            p = out / f"{self.kind}_predictions.csv"
            self.write_predictions(p)
            written.append(p)
        p = out / f"{self.kind}_report.md"
        p.write_text(self.markdown(), encoding="utf-8")
        written.append(p)
        if self.ranking is not None:
            p = out / f"{self.kind}_ranking.csv"
            self.ranking.write_csv(p)
            written.append(p)
        if self.shap is not None:
            p = out / f"{self.kind}_shap_summary.csv"
            shap_summary_export(self.shap, self.feature_values, p)
            written.append(p)
        p = out / f"{self.kind}_run.json"
        p.write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written.append(p)
        return written


def _bundle(prep: Prepared, *args, **kw) -> ReportBundle:
    edges = prep.long.codebook.target.bin_edges or DEFAULT_BIN_EDGES
    return ReportBundle(*args, class_names=class_labels(edges), **kw)


def _metadata(config: ExperimentConfig, kind: str, **extra) -> dict:
    meta = {
        "experiment": kind,
        "seed": config.seed,
        "config_sha256": config.digest(),
        "codebook_sha256": file_digest(config["codebook"]),
        "data_sha256": file_digest(config["data"]),
        "version": __version__,
    }
    meta.update(extra)
    return meta


def _evaluate(config, name, label, matrix, train, test) -> EvalReport:
    return evaluate_split(model_fit_fn(config, name), matrix, train, test, label)


def run_baseline(config: ExperimentConfig, prepared: Prepared | None = None) -> ReportBundle:
    """Majority-class model on the configured split."""
    prep = prepared or prepare(config)
    m = prep.matrix
    train, test = percentage_split(len(m), split_spec(config), m.ids)
    report = _evaluate(config, "majority", "Majority vote", m, train, test)
    meta = _metadata(config, "baseline", rows=len(m), rows_removed=prep.removed, kept=list(prep.kept))
    return _bundle(prep, "baseline", [report], "Models", meta, m.ids, m.years)


def run_model_comparison(config: ExperimentConfig, prepared: Prepared | None = None) -> ReportBundle:
    """One report per listed model, all on the same split."""
    names = config.names("models")
    if not names:
        raise DataError("config 'models' lists no model")
    prep = prepared or prepare(config)
    m = prep.matrix
    train, test = percentage_split(len(m), split_spec(config), m.ids)
    reports = [_evaluate(config, n, MODEL_NAMES.get(n, n), m, train, test) for n in names]
    meta = _metadata(config, "compare", rows=len(m), rows_removed=prep.removed, kept=list(prep.kept), models=names)
    return _bundle(prep, "compare", reports, "Models", meta, m.ids, m.years)


def run_longitudinal_compare(config: ExperimentConfig, prepared: Prepared | None = None) -> ReportBundle:
    """Latest-year rows against an equal-size sample balanced over all years.

    Both tasks use the same kept features, nominal levels, model settings
    and split seed. The common size is the latest-year row count (or
    ``longitudinal.size``) rounded down to a multiple of the year count.
    """
    prep = prepared or prepare(config)
    long = prep.long
    years = np.unique(long.years)
    if len(years) < 2:
        raise DataError("longitudinal comparison needs data from at least two years")
    latest = np.flatnonzero(long.years == years[-1])
    size = config.integer("longitudinal.size") or len(latest)
    size = min(size, len(latest)) // len(years) * len(years)
    if size < len(years) * 2:
        raise DataError(f"too few rows for equal-size tasks ({len(latest)} in the latest year)")
    rng = np.random.default_rng(substream(config.seed, "longitudinal.task1"))
    task1 = long.take(np.sort(rng.choice(latest, size=size, replace=False)))
    task2 = balanced_year_sample(long, size, substream(config.seed, "longitudinal.task2"))
    levels = {v.name: nominal_levels(long, v.name) for v in long.codebook.features if v.kind == "nominal"}
    spec = split_spec(config)
    model = config["model"]
    reports, tables = [], []
    for label, table in (("task 1 with latest-year data", task1), ("task 2 with longitudinal data", task2)):
        m = encode(config, table, prep.kept, levels)
        train, test = percentage_split(len(m), spec, m.ids)
        r = _evaluate(config, model, label, m, train, test)
        reports.append(r)
        tables.append(m)
    # the two tasks have different rows, so predictions carry their own ids
    ids = np.concatenate([t.ids for t in tables])
    yrs = np.concatenate([t.years for t in tables])
    reports[1] = replace(reports[1], test_index=reports[1].test_index + len(tables[0]))
    meta = _metadata(config, "longitudinal", task_size=size, years=[int(y) for y in years], model=model, kept=list(prep.kept))
    return _bundle(prep, "longitudinal", reports, "Experiments", meta, ids, yrs)


def run_ablation(config: ExperimentConfig, prepared: Prepared | None = None) -> ReportBundle:
    """The full feature set, then one run per dropped feature, on one split."""
    prep = prepared or prepare(config)
    features = list(prep.kept) if config["ablate.features"] == "all" else config.names("ablate.features")
    unknown = [f for f in features if f not in prep.kept]
    if unknown:
        raise DataError(f"ablation features not among the kept features: {', '.join(unknown)}")
    if len(features) < 2:
        raise DataError("ablation needs at least two features")
    m = prep.matrix.drop_variables(set(prep.kept) - set(features))
    train, test = percentage_split(len(m), split_spec(config), m.ids)
    model = config["model"]
    reports = [_evaluate(config, model, f"baseline: with all {len(features)} features", m, train, test)]
    for f in features:
        reports.append(_evaluate(config, model, f"without {config.alias(f)}", m.drop_variables([f]), train, test))
    meta = _metadata(config, "ablate", model=model, features=features)
    return _bundle(prep, "ablate", reports, "Experiments", meta, m.ids, m.years, show_confusion=False)


def _test_instances(config, test):
    limit = config.integer("explain.instances")
    return test if limit is None else test[:limit]


def run_explain(config: ExperimentConfig, prepared: Prepared | None = None) -> ReportBundle:
    """Fit the configured model, attribute its predicted-class score on
    test rows to source variables and rank them by mean |phi|.

    Forests get exact TreeSHAP; other models permutation sampling against
    a background drawn from the training rows.
    """
    prep = prepared or prepare(config)
    m = prep.matrix
    train, test = percentage_split(len(m), split_spec(config), m.ids)
    name = config["model"]
    fit = model_fit_fn(config, name)
    model = fit(m.take(train))
    rows = _test_instances(config, test)
    X = m.values[rows]
    ids = [f"{int(m.ids[i])}:{int(m.years[i])}" for i in rows]
    labels, scores = predict(model, X)
    if isinstance(model, ForestModel):
        cols = tree_shap_matrix(model, X, labels, ids)
        method = "tree"
    else:
        rng = np.random.default_rng(substream(config.seed, "explain.background"))
        bg_size = min(config.integer("explain.background") or 100, len(train))
        background = m.values[np.sort(rng.choice(train, size=bg_size, replace=False))]
        groups = [[j] for j in range(len(m.columns))]
        samples = config.integer("explain.samples") or 128
        shap_rows = []
        for i, (x, c) in enumerate(zip(X, labels)):
            score = _class_score(model, int(c))
            shap_rows.append(
                sampling_shap(score, x, background, samples, substream(config.seed, f"explain.row{i}"), groups,
                              [col.label for col in m.columns], int(c), ids[i])
            )
        cols = ShapMatrix.from_rows(shap_rows)
        method = "sampling"
    shap = aggregate_matrix(cols, m.columns)
    chosen = scores[np.arange(len(rows)), labels - 1]
    gap = np.abs(shap.base + shap.values.sum(axis=1) - chosen)
    ranking = mean_abs_ranking(shap)
    feature_values = {v: prep.long.column(v)[rows] for v in shap.variables}
    report = evaluate_split(lambda _: model, m, train, test, MODEL_NAMES.get(name, name))
    meta = _metadata(
        config,
        "explain",
        model=name,
        method=method,
        instances=len(rows),
        max_local_accuracy_gap=float(gap.max()) if len(gap) else 0.0,
    )
    return _bundle(
        prep,
        "explain", [report], "Models", meta, m.ids, m.years, ranking, shap, feature_values, show_confusion=False
    )


def _class_score(model, c: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda Z: model.predict_scores(Z)[:, c - 1]


RUNNERS = {
    "baseline": run_baseline,
    "compare": run_model_comparison,
    "longitudinal": run_longitudinal_compare,
    "ablate": run_ablation,
    "explain": run_explain,
}


def run_experiment(config: ExperimentConfig, kind: str | None = None) -> ReportBundle:
    kind = kind or config["experiment"]
    if kind not in RUNNERS:
        raise DataError(f"unknown experiment {kind!r}")
    return RUNNERS[kind](config)


def write_long_csv(long: LongTable, path: str | Path) -> None:
    long.write_csv(path)


def ingest_summary(long: LongTable, removed: int, uncovered: dict[str, int]) -> str:
    counts = np.bincount(long.target.astype(np.int64), minlength=4)[1:]
    lines = [
        f"rows = {len(long)}",
        f"rows_removed_invalid_target = {removed}",
        f"individuals = {len(np.unique(long.ids))}",
        f"years = {','.join(str(int(y)) for y in np.unique(long.years))}",
    ]
    lines += [f"class_{k + 1} = {int(c)} ({format_cell(100.0 * c / len(long))} %)" for k, c in enumerate(counts)]
    lines += [f"uncovered_codes.{name} = {n}" for name, n in sorted(uncovered.items())]
    return "\n".join(lines) + "\n"
