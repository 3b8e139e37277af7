"""Command-line surface: index, select, eval, sweep.

Configuration comes from an optional key=value file plus flags; flags win.
Exit codes: 0 ok, 2 configuration error, 3 backend unreachable, 4 every test
instance failed.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass
from math import fsum
from pathlib import Path

import click

from . import evaluation
from .backends import (
    CachedBackend,
    HttpBackend,
    cache_file_for,
    load_mock_backend,
    load_unigram_backend,
)
from .corpus import Dataset, load_dataset, example_text
from .errors import BackendError, ConfigError, IclSelError
from .evaluation import Report, run_experiment, write_report, write_traces
from .retrieval import (
    Bm25Provider,
    EmbeddingProvider,
    build_bm25,
    load_bm25,
    load_embeddings,
    save_bm25,
    save_embeddings,
)
from .selection import (
    DATA_ONLY_STRATEGIES,
    NORMALIZATIONS,
    ORDERINGS,
    STRATEGIES,
    VALIDATION_POLICIES,
    SelectionConfig,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BACKEND = 3
EXIT_ALL_FAILED = 4

SWEEP_AXES = ("lambda", "k", "n_shot", "ordering", "validation_policy")
_AXIS_FIELD = {
    "lambda": "lambda_",
    "k": "k",
    "n_shot": "n_shot",
    "ordering": "ordering",
    "validation_policy": "validation_policy",
}


def parse_config_file(path: str | Path) -> dict:
    """key = value lines; '#' starts a comment. Values are parsed as int,
    float, or bool when they look like one, strings otherwise."""
    out: dict = {}
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            out[key] = value[1:-1]
            continue
        lowered = value.lower()
        if lowered in ("true", "false"):
            out[key] = lowered == "true"
            continue
        try:
            out[key] = int(value)
            continue
        except ValueError:
            pass
        try:
            out[key] = float(value)
            continue
        except ValueError:
            pass
        out[key] = value
    return out


@dataclass
class RunConfig:
    dataset: str
    retriever: str = "bm25"
    backend: str | None = None
    out: str = "runs"
    concurrency: int = 1
    selection: SelectionConfig = dataclasses.field(default_factory=SelectionConfig)

    def __post_init__(self):
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")


_SELECTION_KEYS = ("strategy", "k", "n_shot", "lambda", "ordering",
                   "validation_policy", "normalization", "seed")


def merge_config(file_values: dict, flag_values: dict) -> dict:
    """File values first, explicit flags on top."""
    merged = dict(file_values)
    merged.update({k: v for k, v in flag_values.items() if v is not None})
    return merged


def build_run_config(values: dict, default_n_shot: int | None = None) -> RunConfig:
    if not values.get("dataset"):
        raise ConfigError("a dataset descriptor is required (--dataset or config file)")
    sel_kwargs = {}
    for key in _SELECTION_KEYS:
        if key in values and values[key] is not None:
            field = "lambda_" if key == "lambda" else key
            sel_kwargs[field] = values[key]
    # dataset descriptors may carry a shot-count default; an explicit value wins
    if "n_shot" not in sel_kwargs and default_n_shot is not None:
        sel_kwargs["n_shot"] = default_n_shot
    return RunConfig(
        dataset=str(values["dataset"]),
        retriever=str(values.get("retriever") or "bm25"),
        backend=values.get("backend"),
        out=str(values.get("out") or "runs"),
        concurrency=int(values.get("concurrency") or 1),
        selection=SelectionConfig(**sel_kwargs),
    )


def build_backend(spec: str | None, check_health: bool = False):
    """Backend spec: mock:PATH | unigram:PATH | http:URL (URL may come from
    ICL_BACKEND_URL). The instance is wrapped in the shared LRU cache, warmed
    from ICL_CACHE_DIR when set."""
    if spec is None or spec == "http":
        url = os.environ.get("ICL_BACKEND_URL")
        if not url:
            raise ConfigError("no backend configured (--backend or ICL_BACKEND_URL)")
        spec = f"http:{url}"
    scheme, _, rest = spec.partition(":")
    if scheme == "mock":
        inner = load_mock_backend(rest)
    elif scheme == "unigram":
        inner = load_unigram_backend(rest)
    elif scheme == "http":
        url = rest if "://" in rest else f"http://{rest}"
        inner = HttpBackend(url)
        if check_health:
            inner.adopt_served_model()
    else:
        raise ConfigError(f"unknown backend scheme {scheme!r} (mock:|unigram:|http:)")
    cached = CachedBackend(inner)
    cache_dir = os.environ.get("ICL_CACHE_DIR")
    if cache_dir:
        cached.load_jsonl(cache_file_for(cache_dir, cached.name))
    return cached


def flush_backend_cache(cached: CachedBackend) -> None:
    cache_dir = os.environ.get("ICL_CACHE_DIR")
    if cache_dir:
        cached.dump_jsonl(cache_file_for(cache_dir, cached.name))


def build_provider(retriever: str, dataset: Dataset, base_dir: Path):
    """Retriever spec: bm25 | bm25:INDEX_PATH | embeddings:PATH."""
    scheme, _, rest = retriever.partition(":")
    if scheme == "bm25":
        if rest:
            index = load_bm25(Path(rest) if Path(rest).is_absolute() else base_dir / rest)
        else:
            index = build_bm25([(ex.id, example_text(ex)) for ex in dataset.train])
        return Bm25Provider(index)
    if scheme == "embeddings":
        if not rest:
            raise ConfigError("embeddings retriever needs a path: embeddings:PATH")
        store = load_embeddings(rest)
        return EmbeddingProvider(store, [ex.id for ex in dataset.train])
    raise ConfigError(f"unknown retriever {retriever!r} (bm25 | embeddings:PATH)")


def _common_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(), default=None,
                     help="key=value config file; flags override it."),
        click.option("--dataset", default=None, help="dataset descriptor JSON."),
        click.option("--retriever", default=None,
                     help="bm25 | bm25:INDEX_PATH | embeddings:PATH."),
        click.option("--backend", default=None, help="mock:PATH | unigram:PATH | http:URL."),
        click.option("--strategy", type=click.Choice(STRATEGIES), default=None),
        click.option("--lambda", "lambda_", type=float, default=None,
                     help="calibration weight in [0, 1]."),
        click.option("--k", type=int, default=None, help="retrieval candidate budget."),
        click.option("--n", "n_shot", type=int, default=None, help="demonstrations per prompt."),
        click.option("--ordering", type=click.Choice(ORDERINGS), default=None),
        click.option("--validation", "validation_policy",
                     type=click.Choice(VALIDATION_POLICIES), default=None),
        click.option("--normalization", type=click.Choice(NORMALIZATIONS), default=None),
        click.option("--seed", type=int, default=None),
        click.option("--out", default=None, help="output directory."),
        click.option("--concurrency", type=int, default=None),
    ]
    for deco in reversed(options):
        fn = deco(fn)
    return fn


def _gather(config_path, **flags) -> dict:
    file_values = parse_config_file(config_path) if config_path else {}
    flags["lambda"] = flags.pop("lambda_", None)
    if flags.get("lambda") is not None and not (0.0 <= flags["lambda"] <= 1.0):
        raise click.UsageError(f"--lambda must be in [0, 1], got {flags['lambda']}")
    return merge_config(file_values, flags)


@click.group()
def main():
    """Demonstration selection and evaluation for in-context learning."""


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@main.command("index")
@_common_options
def cmd_index(config_path, **flags):
    """Build retrieval artifacts for a dataset and write them to --out."""
    try:
        cfg = build_run_config(_gather(config_path, **flags))
        dataset = load_dataset(cfg.dataset)
        out_dir = Path(cfg.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        scheme, _, rest = cfg.retriever.partition(":")
        if scheme == "bm25":
            index = build_bm25([(ex.id, example_text(ex)) for ex in dataset.train])
            target = out_dir / "bm25.json"
            save_bm25(index, target)
            click.echo(f"indexed {index.corpus_size} documents -> {target}")
        elif scheme == "embeddings":
            if not rest:
                raise ConfigError("embeddings retriever needs a path: embeddings:PATH")
            store = load_embeddings(rest)
            missing = [ex.id for ex in dataset.train if ex.id not in store]
            if missing:
                raise ConfigError(
                    f"embedding store {rest} is missing {len(missing)} train ids "
                    f"(first: {missing[:3]})"
                )
            target = out_dir / "embeddings.emb"
            save_embeddings(store, target)
            click.echo(f"validated {len(store.vectors)} vectors (dim {store.dim}) -> {target}")
        else:
            raise ConfigError(f"unknown retriever {cfg.retriever!r}")
    except IclSelError as e:
        _fail(EXIT_CONFIG, str(e))


def _prepare(values: dict, needs_backend: bool):
    """Load the dataset, then finalize the run config against its defaults
    and construct the retrieval provider and backend."""
    if not values.get("dataset"):
        raise ConfigError("a dataset descriptor is required (--dataset or config file)")
    dataset = load_dataset(str(values["dataset"]))
    cfg = build_run_config(values, default_n_shot=dataset.default_n_shot)
    base_dir = Path(cfg.dataset).parent
    provider = None
    if cfg.selection.n_shot > 0 and cfg.selection.strategy != "random":
        provider = build_provider(cfg.retriever, dataset, base_dir)
    backend = None
    if needs_backend:
        backend = build_backend(cfg.backend, check_health=True)
    return cfg, dataset, provider, backend


def _explain_trace(trace: dict) -> str:
    rows = [f"test {trace['test_id']}  strategy={trace['strategy']}  "
            f"validation={trace['validation_id']}"]
    if trace["scored"]:
        rows.append(f"  {'id':>16} {'rank':>4} {'l_v':>10} {'epsilon':>10} {'score':>10}")
        for rec in sorted(trace["scored"], key=lambda r: (r["score"], r["retrieval_rank"])):
            l_v = "-" if rec["l_v"] is None else f"{rec['l_v']:.4f}"
            eps = "-" if rec["epsilon"] is None else f"{rec['epsilon']:.4f}"
            rows.append(f"  {rec['id']:>16} {rec['retrieval_rank']:>4} {l_v:>10} "
                        f"{eps:>10} {rec['score']:.4f}")
    rows.append(f"  prompt order: {' '.join(trace['selected']) or '(empty)'}")
    return "\n".join(rows)


@main.command("select")
@_common_options
@click.option("--test-id", default=None, help="select for one test instance.")
@click.option("--all", "select_all", is_flag=True, help="select for every test instance.")
@click.option("--explain", is_flag=True, help="print the per-candidate score table.")
def cmd_select(config_path, test_id, select_all, explain, **flags):
    """Run demonstration selection and write per-instance traces."""
    try:
        values = _gather(config_path, **flags)
        if not select_all and test_id is None:
            raise click.UsageError("pass --test-id ID or --all")
        needs_backend = values.get("strategy", "dva") not in DATA_ONLY_STRATEGIES
        cfg, dataset, provider, backend = _prepare(values, needs_backend)
    except click.UsageError:
        raise
    except BackendError as e:
        _fail(EXIT_BACKEND, str(e))
    except IclSelError as e:
        _fail(EXIT_CONFIG, str(e))

    tests = dataset.test if select_all else [ex for ex in dataset.test if ex.id == test_id]
    if not tests:
        _fail(EXIT_CONFIG, f"test id {test_id!r} not found in {dataset.name}")
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace_path = out_dir / "trace.jsonl"
    failures = 0
    with trace_path.open("w", encoding="utf-8") as fh:
        for test in tests:
            try:
                _, trace = evaluation.select_for_instance(
                    backend, provider, dataset, test, cfg.selection)
            except IclSelError as e:
                failures += 1
                click.echo(f"instance {test.id} failed: {e}", err=True)
                continue
            fh.write(json.dumps(trace, ensure_ascii=False) + "\n")
            if explain:
                click.echo(_explain_trace(trace))
    if backend is not None:
        flush_backend_cache(backend)
    click.echo(f"wrote {len(tests) - failures} traces -> {trace_path}")
    if failures == len(tests):
        sys.exit(EXIT_ALL_FAILED)


def _print_aggregates(label: str, report: Report):
    parts = []
    for key, value in sorted(report.aggregates.items()):
        shown = value if key == "bleu" else 100.0 * value
        parts.append(f"{key}={shown:.2f}")
    click.echo(f"{label}: {' '.join(parts) or 'no metrics'}  "
               f"({len(report.predictions)} ok, {len(report.failures)} failed)")


@main.command("eval")
@_common_options
@click.option("--seeds", default=None, help="comma-separated seeds; emits one report each plus a mean summary.")
def cmd_eval(config_path, seeds, **flags):
    """Run the full experiment and write report.json + trace.jsonl."""
    try:
        values = _gather(config_path, **flags)
        cfg, dataset, provider, backend = _prepare(values, needs_backend=True)
    except click.UsageError:
        raise
    except BackendError as e:
        _fail(EXIT_BACKEND, str(e))
    except IclSelError as e:
        _fail(EXIT_CONFIG, str(e))

    seed_list = [cfg.selection.seed]
    if seeds:
        try:
            seed_list = [int(s) for s in seeds.split(",") if s.strip()]
        except ValueError:
            raise click.UsageError(f"--seeds must be comma-separated integers, got {seeds!r}")
        if not seed_list:
            raise click.UsageError("--seeds is empty")

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for seed in seed_list:
        sel = dataclasses.replace(cfg.selection, seed=seed)
        report = run_experiment(dataset, sel, backend, provider,
                                concurrency=cfg.concurrency)
        reports.append(report)
        suffix = f"-seed{seed}" if len(seed_list) > 1 else ""
        write_report(report, out_dir / f"report{suffix}.json")
        write_traces(report, out_dir / f"trace{suffix}.jsonl")
        _print_aggregates(f"seed {seed}", report)

    if len(reports) > 1:
        keys = sorted({k for r in reports for k in r.aggregates})
        summary = {
            "seeds": seed_list,
            "mean_aggregates": {
                key: fsum(r.aggregates.get(key, 0.0) for r in reports) / len(reports)
                for key in keys
            },
        }
        with (out_dir / "summary.json").open("w", encoding="utf-8") as fh:
            json.dump(summary, fh, ensure_ascii=False, indent=2)
            fh.write("\n")
        click.echo(f"mean over {len(reports)} seeds: "
                   + " ".join(f"{k}={v:.4f}" for k, v in summary["mean_aggregates"].items()))

    flush_backend_cache(backend)
    if all(not r.predictions for r in reports):
        sys.exit(EXIT_ALL_FAILED)


def _parse_axis_values(axis: str, raw: str) -> list:
    values = [v.strip() for v in raw.split(",") if v.strip()]
    if not values:
        raise click.UsageError("--values is empty")
    if axis == "lambda":
        return [float(v) for v in values]
    if axis in ("k", "n_shot"):
        return [int(v) for v in values]
    return values


@main.command("sweep")
@_common_options
@click.option("--axis", type=click.Choice(SWEEP_AXES), required=True)
@click.option("--values", required=True, help="comma-separated axis values.")
def cmd_sweep(config_path, axis, values, **flags):
    """Evaluate along one configuration axis, reusing the logprob cache, and
    write a CSV of (value, metrics)."""
    try:
        merged = _gather(config_path, **flags)
        axis_values = _parse_axis_values(axis, values)
        cfg, dataset, provider, backend = _prepare(merged, needs_backend=True)
    except click.UsageError:
        raise
    except BackendError as e:
        _fail(EXIT_BACKEND, str(e))
    except IclSelError as e:
        _fail(EXIT_CONFIG, str(e))

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    try:
        for value in axis_values:
            sel = dataclasses.replace(cfg.selection, **{_AXIS_FIELD[axis]: value})
            report = run_experiment(dataset, sel, backend, provider,
                                    concurrency=cfg.concurrency)
            rows.append((value, report))
            _print_aggregates(f"{axis}={value}", report)
    except IclSelError as e:
        _fail(EXIT_CONFIG, str(e))

    keys = sorted({k for _, r in rows for k in r.aggregates})
    csv_path = out_dir / f"sweep-{axis}.csv"
    with csv_path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([axis, *keys])
        for value, report in rows:
            writer.writerow([value, *(report.aggregates.get(k, "") for k in keys)])
    flush_backend_cache(backend)
    click.echo(f"wrote {csv_path}")
    if all(not r.predictions for _, r in rows):
        sys.exit(EXIT_ALL_FAILED)


if __name__ == "__main__":
    main()
