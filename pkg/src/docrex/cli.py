"""Command-line surface for the extraction pipeline.

Subcommands cover the whole loop: ``synth`` (corpus generation), ``gen-ds``
(distantly supervised training examples), ``train`` (relation detector +
resolution self-training), ``extract`` (batch two-stage inference), ``eval``
(metrics tables, delimited dumps, and figures), and ``explain`` (one query,
rendered with its resolution chains).

Every command is a pure function of its inputs and seed.  Artifacts land
under ``<outdir>/<run-id>/`` together with a manifest (input hashes, resolved
config, seed, package version) and a line-delimited JSON log.  Exit codes:
0 ok, 1 configuration error, 2 missing input (the message names the path),
3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .config import ConfigError, coerce_dataclass, load_toml
from .corpus import load_corpus, save_corpus
from .evaluation import (
    GoldError,
    GoldSet,
    all_positive,
    all_positive_metrics,
    evaluate,
    hard_subset,
    summarize_over_seeds,
)
from .inference import (
    InferenceConfig,
    InferenceModels,
    QueryError,
    explain,
    extract,
    load_queries,
    result_to_record,
    run_queries,
)
from .learning import DEFAULT_THRESHOLD, self_train_resolution
from .optim import TrainConfig
from .protocol import (
    ProtocolError,
    RemotePairScorer,
    RemoteRelationScorer,
    parse_address,
)
from .relation import (
    DEFAULT_DIM,
    NativeRelationScorer,
    train_relation_detector,
)
from .report import (
    format_metrics_table,
    render_report,
    training_curve_figure,
)
from .resolution import (
    PairScorer,
    ResolutionGraph,
    load_graph_records,
    save_graph,
)
from .supervision import (
    DSConfig,
    generate_relation_examples,
    load_examples,
    load_kb,
    save_examples,
    save_kb,
)
from .synth import SynthConfig, generate

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 1, 2, 3

_METRIC_NAMES = ("precision", "recall", "f1")


class CliError(Exception):
    code = EXIT_RUNTIME


class UsageError(CliError):
    code = EXIT_CONFIG


class MissingInputError(CliError):
    code = EXIT_MISSING


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(f"{self.prog}: {message}")


class RunContext:
    """Run directory plus the manifest and NDJSON log that live in it."""

    def __init__(self, command: str, args):
        run_id = args.run_id or command
        self.dir = Path(args.outdir) / run_id
        self.dir.mkdir(parents=True, exist_ok=True)
        self._log = (self.dir / "log.ndjson").open("w", encoding="utf-8")
        self.manifest = {
            "command": command,
            "version": __version__,
            "inputs": {},
            "outputs": [],
            "config": {},
        }

    def log(self, event: str, **fields) -> None:
        record = {"ts": round(time.time(), 3), "event": event, **fields}
        self._log.write(json.dumps(record, ensure_ascii=False) + "\n")
        self._log.flush()

    def input_file(self, label: str, path) -> Path:
        if path is None:
            raise UsageError(f"--{label} is required here")
        path = Path(path)
        if not path.is_file():
            raise MissingInputError(f"missing {label} file: {path}")
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        self.manifest["inputs"][label] = {"path": str(path), "sha256": digest}
        return path

    def output(self, name: str) -> Path:
        if name not in self.manifest["outputs"]:
            self.manifest["outputs"].append(name)
        return self.dir / name

    def finish(self, **config) -> None:
        self.manifest["config"].update(config)
        self.manifest["finished_at"] = round(time.time(), 3)
        path = self.dir / "manifest.json"
        path.write_text(
            json.dumps(self.manifest, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        self._log.close()


def _merged_config(cls, table: dict, overrides: dict, where: str):
    data = dict(table)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return coerce_dataclass(cls, data, where=where)


def _config_table(ctx: RunContext, args, *tables: str) -> dict:
    """Load --config (if given) and return it, or the named sub-tables."""
    if getattr(args, "config", None) is None:
        return {name: {} for name in tables} if tables else {}
    path = ctx.input_file("config", args.config)
    data = load_toml(path)
    if not tables:
        return data
    out = {}
    for name in tables:
        sub = data.get(name, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"{path}: [{name}] must be a table")
        out[name] = sub
    unknown = set(data) - set(tables)
    if unknown:
        raise ConfigError(
            f"{path}: unknown tables {sorted(unknown)}; "
            f"expected {sorted(tables)}"
        )
    return out


def _write_jsonl(path: Path, records) -> int:
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            count += 1
    return count


# -- synth ----------------------------------------------------------------


def cmd_synth(args) -> int:
    ctx = RunContext("synth", args)
    table = _config_table(ctx, args)
    overrides = {
        "num_docs": args.num_docs,
        "seed": args.seed,
        "cross_paragraph_fraction": args.cross_paragraph_fraction,
    }
    cfg = _merged_config(SynthConfig, table, overrides, "synth config")
    result = generate(cfg)
    save_corpus(result.documents, ctx.output("corpus.jsonl"))
    GoldSet(result.gold).save(ctx.output("gold.jsonl"))
    save_kb(result.kb, ctx.output("kb.jsonl"))
    _write_jsonl(ctx.output("certificates.jsonl"), result.certificates)
    positives = sum(r["label"] for r in result.gold)
    ctx.log(
        "generated",
        documents=len(result.documents),
        gold_rows=len(result.gold),
        gold_positives=positives,
        certificates=len(result.certificates),
    )
    ctx.finish(**dataclasses.asdict(cfg))
    print(
        f"wrote {len(result.documents)} documents, {len(result.gold)} gold "
        f"rows ({positives} positive) to {ctx.dir}"
    )
    return EXIT_OK


# -- gen-ds ---------------------------------------------------------------


def cmd_gen_ds(args) -> int:
    ctx = RunContext("gen-ds", args)
    table = _config_table(ctx, args)
    overrides = {
        "k_max": args.k_max,
        "negative_ratio": args.negative_ratio,
        "seed": args.seed,
        "relation": args.relation,
    }
    cfg = _merged_config(DSConfig, table, overrides, "distant-supervision config")
    docs = load_corpus(ctx.input_file("corpus", args.corpus))
    kb = load_kb(ctx.input_file("kb", args.kb))
    examples = generate_relation_examples(docs, kb, cfg)
    save_examples(examples, ctx.output("examples.jsonl"))
    positives = sum(1 for ex in examples if ex.label >= 0.5)
    ctx.log("examples", total=len(examples), positives=positives)
    ctx.finish(**dataclasses.asdict(cfg))
    print(
        f"wrote {len(examples)} training examples ({positives} positive) "
        f"to {ctx.dir}"
    )
    return EXIT_OK


# -- train ----------------------------------------------------------------


def cmd_train(args) -> int:
    ctx = RunContext("train", args)
    tables = _config_table(ctx, args, "detector", "pairs", "self_train")
    docs = load_corpus(ctx.input_file("corpus", args.corpus))
    examples = load_examples(ctx.input_file("examples", args.examples))
    if not examples:
        raise CliError("the examples file holds no training examples")

    detector_cfg = _merged_config(
        TrainConfig, tables["detector"], {"seed": args.seed}, "[detector]"
    )
    pairs_cfg = _merged_config(
        TrainConfig,
        {"early_metric": "loss", **tables["pairs"]},
        {"seed": args.seed, "early_metric": args.early_metric},
        "[pairs]",
    )
    loop = dict(tables["self_train"])
    for key, value in (
        ("iterations", args.iterations),
        ("threshold", args.threshold),
        ("dim", args.dim),
    ):
        if value is not None:
            loop[key] = value
    unknown = set(loop) - {"iterations", "threshold", "dim"}
    if unknown:
        raise ConfigError(f"[self_train]: unknown keys {sorted(unknown)}")
    iterations = int(loop.get("iterations", 8))
    threshold = float(loop.get("threshold", DEFAULT_THRESHOLD))
    dim = int(loop.get("dim", DEFAULT_DIM))
    seed = args.seed if args.seed is not None else detector_cfg.seed

    detector, det_history = train_relation_detector(
        examples, detector_cfg, dim=dim
    )
    ctx.log("detector_trained", examples=len(examples), history=det_history[-1])

    trained = self_train_resolution(
        docs,
        iterations=iterations,
        threshold=threshold,
        train_cfg=pairs_cfg,
        dim=dim,
        seed=seed,
    )
    ctx.log("resolution_trained", history=trained.history[-1])

    detector.save(ctx.output("relation.json"))
    if trained.scorer is not None:
        trained.scorer.save(ctx.output("pairs.json"))
    with ctx.output("graphs.jsonl").open("w", encoding="utf-8") as fh:
        for doc_id in sorted(trained.graphs):
            save_graph(trained.graphs[doc_id], fh)
    history = {"detector": det_history, "resolution": trained.history}
    ctx.output("history.json").write_text(
        json.dumps(history, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    links = [rec["links"] for rec in trained.history]
    training_curve_figure(
        {"resolution links": links}, ctx.output("training_curve.png"),
        ylabel="links",
    )
    ctx.finish(
        detector=dataclasses.asdict(detector_cfg),
        pairs=dataclasses.asdict(pairs_cfg),
        self_train={"iterations": iterations, "threshold": threshold,
                    "dim": dim, "seed": seed},
    )
    print(
        f"trained detector on {len(examples)} examples; resolution grew to "
        f"{links[-1]} links over {iterations} iterations; artifacts in {ctx.dir}"
    )
    return EXIT_OK


# -- extract / explain ----------------------------------------------------


def _load_graphs(path: Path, docs_by_id: dict) -> dict:
    graphs: dict[str, ResolutionGraph] = {}
    with path.open(encoding="utf-8") as fh:
        for doc_id, link in load_graph_records(fh):
            if doc_id not in docs_by_id:
                raise CliError(
                    f"graph dump references unknown document {doc_id!r}"
                )
            graph = graphs.get(doc_id)
            if graph is None:
                doc = docs_by_id[doc_id]
                graph = ResolutionGraph(doc_id, nodes=set(doc.mentions))
                graphs[doc_id] = graph
            graph.add_link(link)
    return graphs


def _build_models(ctx: RunContext, args, docs_by_id: dict) -> InferenceModels:
    backend = args.scorer
    if backend == "native":
        relation = NativeRelationScorer.load(
            ctx.input_file("relation-model", args.relation_model)
        )
        pairs = None
        if args.pairs is not None:
            pairs = PairScorer.load(ctx.input_file("pairs", args.pairs))
    elif backend.startswith("external:"):
        address = backend[len("external:"):]
        try:
            parse_address(address)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        relation = RemoteRelationScorer.connect(address)
        pairs = RemotePairScorer(relation.client) if args.remote_pairs else None
        ctx.manifest["inputs"]["scorer"] = {"external": address}
    else:
        raise UsageError(
            f"--scorer must be native or external:<host:port>, got {backend!r}"
        )
    graphs = {}
    if args.graphs is not None:
        graphs = _load_graphs(ctx.input_file("graphs", args.graphs), docs_by_id)
    return InferenceModels(relation=relation, pairs=pairs, graphs=graphs)


def _inference_config(ctx: RunContext, args) -> InferenceConfig:
    table = _config_table(ctx, args)
    overrides = {
        "k_max": args.k_max,
        "threshold": args.threshold,
        "aggregation": args.aggregation,
        "closure": args.closure,
        "always_positive": args.always_positive,
    }
    return _merged_config(InferenceConfig, table, overrides, "inference config")


def cmd_extract(args) -> int:
    ctx = RunContext("extract", args)
    docs = load_corpus(ctx.input_file("corpus", args.corpus))
    docs_by_id = {d.id: d for d in docs}
    queries = load_queries(ctx.input_file("queries", args.queries))
    cfg = _inference_config(ctx, args)
    models = _build_models(ctx, args, docs_by_id)

    def one(query):
        records, _ = run_queries(docs_by_id, [query], models, cfg)
        return records[0]

    jobs = args.jobs or os.cpu_count() or 1
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(one, queries))
    else:
        records = [one(q) for q in queries]

    _write_jsonl(ctx.output("results.jsonl"), records)
    positives = sum(r["decision"] for r in records)
    ctx.log("extracted", queries=len(queries), positives=positives, jobs=jobs)
    ctx.finish(**dataclasses.asdict(cfg))
    print(
        f"answered {len(records)} queries ({positives} positive) "
        f"into {ctx.dir}"
    )
    return EXIT_OK


def cmd_explain(args) -> int:
    ctx = RunContext("explain", args)
    docs = load_corpus(ctx.input_file("corpus", args.corpus))
    docs_by_id = {d.id: d for d in docs}
    if args.doc not in docs_by_id:
        raise CliError(f"document {args.doc!r} is not in the corpus")
    cfg = _inference_config(ctx, args)
    models = _build_models(ctx, args, docs_by_id)
    query = {"drug": args.drug, "gene": args.gene, "mutation": args.mutation}
    result = extract(docs_by_id[args.doc], query, models, cfg)
    if args.json:
        rendered = json.dumps(result_to_record(result), indent=2,
                              sort_keys=True)
        ctx.output("report.json").write_text(rendered + "\n", encoding="utf-8")
    else:
        rendered = explain(result)
        ctx.output("report.txt").write_text(rendered + "\n", encoding="utf-8")
    ctx.log("explained", doc=args.doc, decision=result.decision)
    ctx.finish(**dataclasses.asdict(cfg), query={"doc": args.doc, **query})
    print(rendered)
    return EXIT_OK


# -- eval -----------------------------------------------------------------


def _load_prediction_records(path: Path) -> list:
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CliError(f"{path} line {lineno}: {exc}") from None
    return records


def _metric_row(subset: str, system: str, runs: list) -> dict:
    row = {"subset": subset, "system": system}
    if len(runs) == 1:
        metrics = runs[0]
        row.update({name: metrics[name] for name in _METRIC_NAMES})
        row["counts"] = metrics["counts"]
        if metrics["flags"]:
            row["flags"] = metrics["flags"]
        return row
    summaries = {
        name: summarize_over_seeds([m[name] for m in runs])
        for name in _METRIC_NAMES
    }
    row.update({name: summaries[name]["mean"] for name in _METRIC_NAMES})
    row["sd"] = {name: summaries[name]["sd"] for name in _METRIC_NAMES}
    row["runs"] = len(runs)
    return row


def cmd_eval(args) -> int:
    ctx = RunContext("eval", args)
    rows = []
    gold = None
    if args.gold is not None:
        gold = GoldSet.load(ctx.input_file("gold", args.gold))
        prediction_sets = [
            _load_prediction_records(
                ctx.input_file(f"predictions[{i}]", path)
            )
            for i, path in enumerate(args.predictions or [])
        ]
        subsets = [("full", gold)]
        if args.corpus is not None:
            docs = load_corpus(ctx.input_file("corpus", args.corpus))
            subsets.append(("hard", hard_subset(gold, docs)))
        for name, subset_gold in subsets:
            baseline = evaluate(all_positive(subset_gold), subset_gold)
            rows.append(_metric_row(name, "all-positive", [baseline]))
            if prediction_sets:
                runs = [evaluate(p, subset_gold) for p in prediction_sets]
                rows.append(_metric_row(name, args.system, runs))
    if args.counts is not None:
        path = ctx.input_file("counts", args.counts)
        try:
            counted = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CliError(f"{path}: {exc}") from None
        if not isinstance(counted, dict):
            raise CliError(f"{path}: expected an object of subsets")
        for name, entry in counted.items():
            metrics = all_positive_metrics(
                int(entry["positives"]), int(entry["candidates"])
            )
            rows.append(_metric_row(str(name), "all-positive", [metrics]))
    if not rows:
        raise UsageError("nothing to evaluate: pass --gold and/or --counts")

    table = format_metrics_table(rows)
    render_report(rows, ctx.dir, stem="metrics")
    ctx.log("evaluated", rows=len(rows))
    ctx.finish(system=args.system)
    print(table)
    return EXIT_OK


# -- parser ---------------------------------------------------------------


def _add_run_flags(parser) -> None:
    parser.add_argument("--outdir", default="runs",
                        help="artifact root (default: runs)")
    parser.add_argument("--run-id", default=None,
                        help="run directory name (default: the command name)")


def _add_model_flags(parser) -> None:
    parser.add_argument("--relation-model", default=None,
                        help="native relation scorer parameters (JSON)")
    parser.add_argument("--pairs", default=None,
                        help="native pairwise scorer parameters (JSON)")
    parser.add_argument("--graphs", default=None,
                        help="trained resolution-graph dump (JSONL)")
    parser.add_argument("--scorer", default="native",
                        help="native | external:<host:port>")
    parser.add_argument("--remote-pairs", action="store_true",
                        help="also route pairwise scoring to the external "
                             "endpoint")


def _add_inference_flags(parser) -> None:
    parser.add_argument("--config", default=None,
                        help="inference settings (TOML)")
    parser.add_argument("--k-max", type=int, default=None)
    parser.add_argument("--threshold", type=float, default=None)
    parser.add_argument("--aggregation", default=None,
                        choices=("existential", "noisy_or"))
    parser.add_argument("--closure", action=argparse.BooleanOptionalAction,
                        default=None,
                        help="--no-closure restricts arguments to named "
                             "mentions (paragraph-local ablation)")
    parser.add_argument("--always-positive",
                        action=argparse.BooleanOptionalAction, default=None,
                        help="score every co-occurring pair as positive")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="docrex",
                     description="document-level n-ary relation extraction")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus",
                       description="Generate corpus, gold, knowledge base, "
                                   "and planted-link certificates.")
    p.add_argument("--config", default=None, help="generator settings (TOML)")
    p.add_argument("--num-docs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--cross-paragraph-fraction", type=float, default=None)
    _add_run_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-ds", help="build distant-supervision examples")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kb", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--k-max", type=int, default=None)
    p.add_argument("--negative-ratio", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--relation", default=None)
    _add_run_flags(p)
    p.set_defaults(func=cmd_gen_ds)

    p = sub.add_parser("train", help="train detector and resolution")
    p.add_argument("--corpus", required=True)
    p.add_argument("--examples", required=True)
    p.add_argument("--config", default=None,
                   help="TOML with [detector], [pairs], [self_train] tables")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--threshold", type=float, default=None,
                   help="promotion threshold for learned links")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--early-metric", default=None, choices=("f1", "loss"))
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="answer queries over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--queries", required=True,
                   help="JSONL of {doc, drug, gene, mutation}")
    _add_model_flags(p)
    _add_inference_flags(p)
    p.add_argument("--jobs", type=int, default=None,
                   help="worker threads (default: processor count)")
    _add_run_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("eval", help="score predictions against gold")
    p.add_argument("--gold", default=None)
    p.add_argument("--predictions", nargs="*", default=None,
                   help="one results file per seed; several files report "
                        "mean ± sd")
    p.add_argument("--corpus", default=None,
                   help="corpus file; enables the hard-subset rows")
    p.add_argument("--counts", default=None,
                   help="JSON of {subset: {positives, candidates}} for "
                        "analytic all-positive rows")
    p.add_argument("--system", default="two-stage",
                   help="label for the evaluated system")
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("explain", help="audit one query end to end")
    p.add_argument("--corpus", required=True)
    p.add_argument("--doc", required=True)
    p.add_argument("--drug", required=True)
    p.add_argument("--gene", required=True)
    p.add_argument("--mutation", required=True)
    p.add_argument("--json", action="store_true",
                   help="emit the structured record instead of text")
    _add_model_flags(p)
    _add_inference_flags(p)
    _add_run_flags(p)
    p.set_defaults(func=cmd_explain)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"docrex: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, GoldError) as exc:
        print(f"docrex: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingInputError as exc:
        print(f"docrex: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except FileNotFoundError as exc:
        print(f"docrex: missing input file: {exc.filename}", file=sys.stderr)
        return EXIT_MISSING
    except CliError as exc:
        print(f"docrex: {exc}", file=sys.stderr)
        return exc.code
    except (QueryError, ProtocolError, ValueError, OSError) as exc:
        print(f"docrex: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
