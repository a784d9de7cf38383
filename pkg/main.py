import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

from CatMiner.errors import CatMinerError, DataError, UsageError
from CatMiner.evaluation import (
    corpus_statistics,
    evaluate_predictions,
    fleiss_kappa,
    hypothesis_agreement,
    majority_ground_truth,
    read_assessments,
    render_report,
    report_to_json,
)
from CatMiner.ingest import (
    IngestWarning,
    UnitsDictionary,
    load_corpus,
    load_units,
    parse_corpus_json,
    read_raw_tables,
    records_from_raw,
    write_canonical_corpus,
    write_warnings,
)
from CatMiner.measures import feature_vector, measure_report, parse_combos, parse_mask
from CatMiner.models import FULL_MASK, TableRecord, ValueSet, mask_to_string
from CatMiner.sampler import (
    export_sparse,
    generate_samples,
    holdout_split,
    make_balanced_subfiles,
    read_sample_set,
    read_samples,
    verify_against_brute_force,
    write_samples,
)
from CatMiner.svm import (
    GridSpec,
    SolverOptions,
    best_per_feature_count,
    load_model,
    predict,
    save_model,
    search_feature_combinations,
    write_cv_report,
)
from run_config_manager import RunConfig, RunConfigManager, run_config_manager

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(verbose: bool = False):
    """Configure logging to the run log file and the console"""
    level_name = "DEBUG" if verbose else os.getenv("CATMINER_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(os.getenv("CATMINER_LOG_FILE", "catminer.log")),
            logging.StreamHandler()
        ]
    )


class CliParser(argparse.ArgumentParser):
    """argparse parser whose usage errors become UsageError (exit code 1)"""

    def error(self, message):
        raise UsageError(message)


# ----------------------------------------------------------------------------
# Argument helpers
# ----------------------------------------------------------------------------

def parse_value_counts(text: str) -> ValueSet:
    """'USA:12,Spain:8' -> ValueSet"""
    counts: Dict[str, int] = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        value, sep, count = part.rpartition(":")
        if not sep or not value.strip():
            raise UsageError(f"expected value:count, got '{part}'")
        try:
            number = int(count)
        except ValueError:
            raise UsageError(f"count must be an integer in '{part}'")
        if number < 1:
            raise UsageError(f"count must be positive in '{part}'")
        counts[value.strip()] = counts.get(value.strip(), 0) + number
    if not counts:
        raise UsageError("no values given")
    return ValueSet.from_counts(counts)


def parse_levels(text: Optional[str], evaluators: int) -> List[int]:
    """'5..9', '6' or '5,7,9'; None means every strict-majority level"""
    if not text:
        return list(range(evaluators // 2 + 1, evaluators + 1))
    try:
        if ".." in text:
            low, high = (int(part) for part in text.split("..", 1))
            return list(range(low, high + 1))
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"invalid agreement levels '{text}'; use e.g. 5..9")


def parse_grid(text: str, config: RunConfig) -> GridSpec:
    """'default' or 'nu=0.1,0.3;gamma=0.01,1' (either part optional)"""
    nu_values, gamma_values = config.nu_values, config.gamma_values
    if text and text.strip().lower() != "default":
        for part in filter(None, (p.strip() for p in text.split(";"))):
            key, sep, values = part.partition("=")
            try:
                numbers = [float(v) for v in values.split(",") if v.strip()]
            except ValueError:
                raise UsageError(f"grid values must be numbers in '{part}'")
            if not sep or key.strip() not in ("nu", "gamma"):
                raise UsageError(f"grid part must be nu=... or gamma=..., got '{part}'")
            if key.strip() == "nu":
                nu_values = numbers
            else:
                gamma_values = numbers
    return GridSpec(
        nu_values=tuple(nu_values),
        gamma_values=tuple(gamma_values),
        folds=config.folds,
        refine=config.refine_grid,
    )


def corpus_inputs(path: Optional[str], config: RunConfig) -> List[str]:
    """The positional corpus path, else the configured corpus_paths"""
    if path:
        return [path]
    if not config.corpus_paths:
        raise UsageError("no corpus given; pass a path or set corpus_paths")
    return list(config.corpus_paths)


def load_corpora(
    paths: Sequence[str], fmt: str, units: UnitsDictionary, warnings: Optional[List[IngestWarning]] = None
) -> List[TableRecord]:
    corpus = []
    for path in paths:
        corpus.extend(load_corpus(path, fmt, units, warnings))
    return corpus


def solver_options(config: RunConfig) -> SolverOptions:
    return SolverOptions(tol=config.tol, max_iter=config.max_iter, cache_rows=config.cache_rows)


def ensure_dir(path: str) -> Path:
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


# ----------------------------------------------------------------------------
# Subcommands
# ----------------------------------------------------------------------------

def cmd_ingest(args, manager: RunConfigManager) -> int:
    config = manager.build()
    warnings: List[IngestWarning] = []
    tables = []
    for path in corpus_inputs(args.input, config):
        tables.extend(read_raw_tables(path, args.format, warnings))
    write_canonical_corpus(tables, args.output)
    warnings_path = args.warnings or str(Path(args.output).with_suffix(".warnings.jsonl"))
    write_warnings(warnings, warnings_path)
    logger.info(f"Wrote {len(tables)} tables to {args.output} ({len(warnings)} warnings in {warnings_path})")
    print(f"tables={len(tables)} warnings={len(warnings)}")
    return 0


def cmd_samples(args, manager: RunConfigManager) -> int:
    config = manager.build({"dedupe": True if args.dedupe else None, "units_path": args.units})
    warnings: List[IngestWarning] = []
    corpus = load_corpora(corpus_inputs(args.corpus, config), args.format, load_units(config.units_path), warnings)
    samples = generate_samples(corpus, dedupe=config.dedupe, warnings=warnings)
    if args.verify:
        verify_against_brute_force(corpus, samples)

    ordered = sorted(samples.samples, key=lambda s: (s.table_id, s.attribute))
    write_samples(ordered, args.output)
    if args.sparse:
        export_sparse(ordered, args.sparse)
    if args.warnings:
        write_warnings(warnings, args.warnings)
    print(f"interesting={len(samples.interesting)} non_interesting={len(samples.non_interesting)}")
    return 0


def cmd_features(args, manager: RunConfigManager) -> int:
    values = parse_value_counts(args.values)
    mask = parse_mask(args.mask) if args.mask else FULL_MASK
    if args.json:
        print(json.dumps(measure_report(values, mask), indent=2))
    else:
        vector = feature_vector(values, mask)
        print(json.dumps([round(v, args.precision) for v in vector.values]))
    return 0


def cmd_split(args, manager: RunConfigManager) -> int:
    config = manager.build({"test_fraction": args.test, "subfiles": args.subfiles, "seed": args.seed})
    samples = read_sample_set(args.samples)
    split = holdout_split(samples, config.test_fraction, config.seed)
    subfiles = make_balanced_subfiles(split.train, config.subfiles)

    out = ensure_dir(args.output)
    write_samples(split.train.samples, out / "train.jsonl")
    write_samples(split.test_pos, out / "test_pos.jsonl")
    write_samples(split.test_neg, out / "test_neg.jsonl")
    for index, subfile in enumerate(subfiles, start=1):
        write_samples(subfile.samples, out / f"subfile_{index:02d}.jsonl")
    manager.save_config(config, str(out / "run_config.txt"))
    print(
        f"train={len(split.train)} test_pos={len(split.test_pos)} "
        f"test_neg={len(split.test_neg)} subfiles={len(subfiles)}"
    )
    return 0


def cmd_train(args, manager: RunConfigManager) -> int:
    config = manager.build({
        "seed": args.seed,
        "combos": args.combos,
        "selection_rule": args.rule,
        "jobs": args.jobs,
        "folds": args.folds,
        "refine_grid": False if args.no_refine else None,
    })
    subfile_paths = sorted(Path(args.subfiles).glob("subfile_*.jsonl"))
    if not subfile_paths:
        raise DataError(f"no subfile_*.jsonl files in {args.subfiles}")
    subfiles = [read_sample_set(path) for path in subfile_paths]
    test_pos = read_samples(args.testpos)
    test_neg = read_samples(args.testneg)
    grid = parse_grid(args.grid, config)
    masks = parse_combos(config.combos)
    logger.info(f"Training {len(masks)} feature combinations over {len(subfiles)} subfiles")

    result = search_feature_combinations(
        subfiles,
        test_pos,
        test_neg,
        grid,
        config.seed,
        masks=masks,
        rule=config.selection_rule,
        options=solver_options(config),
        jobs=config.jobs,
    )

    out = ensure_dir(args.output)
    models_dir = ensure_dir(str(out / "models"))
    for mask, best in result.best_by_mask.items():
        save_model(best.model, models_dir / f"{mask_to_string(mask)}.json")
    save_model(result.final.model, out / "final_model.json")
    write_cv_report(result.cv_rows, out / "cv_report.csv")

    def describe(best) -> dict:
        return {
            "mask": mask_to_string(best.mask),
            "features": best.feature_count,
            "subfile": best.subfile + 1,
            "nu": best.nu,
            "gamma": best.gamma,
            "cv_balanced_accuracy": best.cv_score,
            "error_pos": best.errors.error_pos,
            "error_neg": best.errors.error_neg,
        }

    selection = {
        "rule": result.rule,
        "final": describe(result.final),
        "per_mask": [describe(best) for _, best in sorted(result.best_by_mask.items())],
        "per_feature_count": {
            str(count): describe(best)
            for count, best in best_per_feature_count(result.best_by_mask.values(), result.rule).items()
        },
    }
    (out / "selection.json").write_text(json.dumps(selection, indent=2) + "\n", encoding="utf-8")
    manager.save_config(config, str(out / "run_config.txt"))
    final = result.final
    print(
        f"final mask={mask_to_string(final.mask)} nu={final.nu:g} gamma={final.gamma:g} "
        f"error_pos={final.errors.error_pos:.4f} error_neg={final.errors.error_neg:.4f}"
    )
    return 0


def cmd_predict(args, manager: RunConfigManager) -> int:
    config = manager.build({"units_path": args.units})
    model = load_model(args.model)
    try:
        text = Path(args.table).read_text(encoding="utf-8")
    except OSError as e:
        raise DataError(f"{args.table}: cannot read: {e}")
    if text.lstrip().startswith("{"):
        text = f"[{text}]"
    raw_tables = parse_corpus_json(text, args.table)
    if len(raw_tables) != 1:
        raise DataError(f"{args.table}: expected exactly one table, got {len(raw_tables)}")
    records = records_from_raw(raw_tables, load_units(config.units_path))
    if not records:
        raise DataError(f"{args.table}: title is not a 'List of ...' page")

    ranked = []
    for column in records[0].categorical_columns:
        try:
            values = column.value_set()
        except DataError:
            logger.warning(f"Skipping empty column {column.name}")
            continue
        label, decision = predict(model, feature_vector(values))
        ranked.append((decision, column.name, label))
    for decision, name, label in sorted(ranked, key=lambda item: (-item[0], item[1])):
        print(f"{decision:+.6f}\t{label.value}\t{name}")
    return 0


def cmd_evaluate(args, manager: RunConfigManager) -> int:
    config = manager.build({"evaluators": args.evaluators})
    model = load_model(args.model)
    matrix = read_assessments(args.assessments)
    if matrix.evaluators != config.evaluators:
        logger.warning(f"Assessment file has {matrix.evaluators} evaluators, configuration says {config.evaluators}")
    samples = read_samples(args.samples)
    assessed = set(matrix.sample_ids)
    predictions = {
        sample.sample_id: predict(model, sample.features)[0]
        for sample in samples
        if sample.sample_id in assessed
    }

    levels = parse_levels(args.levels, matrix.evaluators)
    reports = {level: evaluate_predictions(predictions, majority_ground_truth(matrix, level)) for level in levels}
    kappa = None
    if len(matrix.sample_ids) >= 2 and matrix.evaluators >= 2:
        kappa = fleiss_kappa(matrix)
    else:
        logger.warning("Skipping Fleiss kappa: it needs at least 2 samples and 2 evaluators")
    print(render_report(reports, matrix.evaluators, kappa, title=f"Model {args.model}"), end="")

    extra = {}
    if args.hypothesis:
        hypothesis = {level: hypothesis_agreement(samples, matrix, level) for level in levels}
        print(render_report(hypothesis, matrix.evaluators, title="Distant-supervision labels"), end="")
        extra["hypothesis"] = json.loads(report_to_json(hypothesis, matrix.evaluators))["levels"]
    if args.output:
        Path(args.output).write_text(report_to_json(reports, matrix.evaluators, kappa, extra), encoding="utf-8")
    return 0


def cmd_stats(args, manager: RunConfigManager) -> int:
    config = manager.build({"units_path": args.units})
    corpus = load_corpora(corpus_inputs(args.corpus, config), args.format, load_units(config.units_path))
    stats = corpus_statistics(corpus)
    print(f"tables={stats.tables}")
    for count, tables in stats.histogram.items():
        print(f"{count}\t{tables}")
    if stats.fit is not None:
        print(f"lambda={stats.fit.lam:.4f} relative_sse={stats.fit.relative_sse:.6f}")
    return 0


# ----------------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------------

def build_parser() -> CliParser:
    common = CliParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = CliParser(prog="catminer", description="Interestingness of categorical table attributes")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)

    p = commands.add_parser("ingest", parents=[common], help="parse a corpus into canonical JSON")
    p.add_argument("input", nargs="?", help="default: corpus_paths from the configuration")
    p.add_argument("--format", choices=["json", "wikitext"], default="json")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--warnings", help="warnings JSONL path (default: <output>.warnings.jsonl)")
    p.set_defaults(handler=cmd_ingest)

    p = commands.add_parser("samples", parents=[common], help="label categorical attributes")
    p.add_argument("corpus", nargs="?", help="default: corpus_paths from the configuration")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--format", choices=["json", "wikitext"], default="json")
    p.add_argument("--units")
    p.add_argument("--dedupe", action="store_true", help="keep only the first table per (subject, attribute)")
    p.add_argument("--verify", action="store_true", help="cross-check labels with an all-pairs scan")
    p.add_argument("--sparse", help="also export '<label> i:v' lines to this path")
    p.add_argument("--warnings")
    p.set_defaults(handler=cmd_samples)

    p = commands.add_parser("features", parents=[common], help="measure vector of value counts")
    p.add_argument("--values", required=True, help="e.g. USA:12,Spain:8")
    p.add_argument("--mask")
    p.add_argument("--precision", type=int, default=4)
    p.add_argument("--json", action="store_true", help="full report with degenerate flags")
    p.set_defaults(handler=cmd_features)

    p = commands.add_parser("split", parents=[common], help="hold-out split and balanced subfiles")
    p.add_argument("samples")
    p.add_argument("--test", type=float)
    p.add_argument("--subfiles", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", default="split")
    p.set_defaults(handler=cmd_split)

    p = commands.add_parser("train", parents=[common], help="grid search and feature-combination search")
    p.add_argument("--subfiles", required=True, help="directory holding subfile_*.jsonl")
    p.add_argument("--testpos", required=True)
    p.add_argument("--testneg", required=True)
    p.add_argument("--grid", default="default")
    p.add_argument("--combos")
    p.add_argument("--rule", choices=["max", "sum"])
    p.add_argument("--jobs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--no-refine", action="store_true")
    p.add_argument("-o", "--output", default="models")
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("predict", parents=[common], help="rank the categorical columns of a table")
    p.add_argument("--model", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--units")
    p.set_defaults(handler=cmd_predict)

    p = commands.add_parser("evaluate", parents=[common], help="compare a model with user assessments")
    p.add_argument("--model", required=True)
    p.add_argument("--assessments", required=True)
    p.add_argument("--samples", required=True, help="sample file holding the assessed samples")
    p.add_argument("--levels", help="e.g. 5..9")
    p.add_argument("--evaluators", type=int)
    p.add_argument("--hypothesis", action="store_true", help="also assess the distant-supervision labels")
    p.add_argument("-o", "--output", help="JSON report path")
    p.set_defaults(handler=cmd_evaluate)

    p = commands.add_parser("stats", parents=[common], help="categorical attributes per table")
    p.add_argument("corpus", nargs="?", help="default: corpus_paths from the configuration")
    p.add_argument("--format", choices=["json", "wikitext"], default="json")
    p.add_argument("--units")
    p.set_defaults(handler=cmd_stats)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging(args.verbose)
        manager = RunConfigManager(args.config) if args.config else run_config_manager
        return args.handler(args, manager)
    except CatMinerError as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        logger.debug("Command failed", exc_info=True)
        error = DataError(f"{e.filename}: {e.strerror}" if e.filename else str(e))
        print(f"error: {type(error).__name__}: {error}", file=sys.stderr)
        return error.exit_code


if __name__ == "__main__":
    sys.exit(main())
