"""Command-line front end.

Exit codes: 0 success, 1 usage/config error, 2 data/index error,
3 provider/transport error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, replace
from functools import cached_property
from pathlib import Path

from .benchbuild import LevelPlan, apply_review, build_benchmark, export_review, select_hardest
from .benchmark import load_benchmark, save_benchmark
from .config import ROLES, Config
from .dense import VectorIndex
from .errors import ConfigError, RagError
from .evaluation import (
    FAILURE_LIMIT,
    CandidateRanker,
    oracle_ranker,
    report_dict,
    reversed_oracle_ranker,
    run_qa_eval,
    run_retrieval_eval,
    sweep,
    write_qa_tsv,
    write_retrieval_tsv,
    write_sweep,
)
from .gateway import Gateway, HttpBackend
from .lexicon import EMPTY, Lexicon, filter_candidates, llm_validate, mine_candidates
from .mock import MockBackend
from .pipeline import SEARCH_COLUMNS, Pipeline, Providers
from .sed import export_training_pairs
from .sparse import InvertedIndex
from .store import Store, default_registry, load_registry, read_documents

log = logging.getLogger("evidencerag")

DEFAULT_K_VALUES = (10, 20, 30, 40)
DEFAULT_C_VALUES = (1, 2, 3, 5)


def dumps(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v).replace("\t", " ").replace("\n", " ")


def search_tsv(rows: list[dict]) -> str:
    lines = ["\t".join(SEARCH_COLUMNS)]
    lines += ["\t".join(_cell(r[c]) for c in SEARCH_COLUMNS) for r in rows]
    return "\n".join(lines)


def search_payload(pipeline: Pipeline, query: str, judge: bool) -> dict:
    return {"query": query, "judge": judge, "results": pipeline.search(query, judge=judge)}


class App:
    """Lazily opened resources shared by the commands of one invocation."""

    def __init__(self, cfg: Config, mock_script: str | None = None):
        self.cfg = cfg
        self._gateways: dict[str, Gateway] = {}
        if mock_script is not None:
            if not Path(mock_script).exists():
                raise ConfigError(f"mock provider script {mock_script} does not exist")
            self.backend = MockBackend.from_file(mock_script)
        else:
            self.backend = HttpBackend()

    def gateway(self, role: str) -> Gateway:
        if role not in self._gateways:
            cache = self.cfg.path("paths.cache_dir")
            self._gateways[role] = Gateway(self.cfg.provider(role), self.backend, cache)
        return self._gateways[role]

    def providers(self) -> Providers:
        return Providers(*(self.gateway(r) for r in ROLES))

    @cached_property
    def lexicon(self) -> Lexicon:
        for key in ("paths.lexicon_file", "paths.seed_lexicon"):
            p = self.cfg.path(key)
            if p is not None and p.exists():
                return Lexicon.load(p)
        return EMPTY

    def registry(self):
        p = self.cfg.path("paths.subfield_registry")
        return load_registry(p) if p is not None else None

    @cached_property
    def store(self) -> Store:
        root = self.cfg.require_path("paths.store_dir")
        store = Store.load(root, registry=self.registry(), lexicon=self.lexicon)
        if len(store) == 0:
            raise RagError(f"store at {root} is empty; run 'ingest' first")
        return store

    @cached_property
    def sparse(self) -> InvertedIndex:
        return InvertedIndex.load(self.cfg.require_path("paths.sparse_index"), self.lexicon)

    @cached_property
    def dense(self) -> VectorIndex:
        return VectorIndex.load(self.cfg.require_path("paths.dense_dir"))

    def pipeline(self, **overrides) -> Pipeline:
        return Pipeline(
            store=self.store,
            sparse=self.sparse,
            dense=self.dense,
            providers=self.providers(),
            retrieval=overrides.get("retrieval", self.cfg.retrieval()),
            sed=self.cfg.sed(),
            generation=overrides.get("generation", self.cfg.generation()),
        )


# -- commands ----------------------------------------------------------------


def cmd_ingest(app: App, args) -> int:
    root = app.cfg.require_path("paths.store_dir", must_exist=False)
    registry = app.registry()
    if args.default_registry:
        registry = default_registry()
    store = Store.load(root, registry=registry, lexicon=app.lexicon)
    policy = app.cfg.chunking()
    gateway = app.gateway("drafter") if policy.mode == "llm_assisted" else None
    docs = read_documents(args.docs)
    if not docs:
        raise RagError(f"no *.txt documents in {args.docs}")
    stats = store.ingest(docs, policy, gateway)
    out = asdict(stats)
    print(dumps(out) if args.json else f"docs={stats.docs} passages={stats.passages} duplicates_dropped={stats.duplicates_dropped}")
    return 0


def cmd_lexicon_mine(app: App, args) -> int:
    cfg = app.cfg
    cands = mine_candidates(
        app.store, cfg.integer("lexicon.max_ngram"), cfg.integer("lexicon.min_freq"), workers=args.workers
    )
    seed_path = cfg.path("paths.seed_lexicon")
    seed = Lexicon.load(seed_path) if seed_path is not None and seed_path.exists() else None
    kept = filter_candidates(cands, cfg.thresholds(), seed)
    out = Path(args.out) if args.out else cfg.require_path("paths.lexicon_file", must_exist=False).with_suffix(".candidates.tsv")
    with open(out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(("term", "frequency", "cohesion_pmi", "left_entropy", "right_entropy"))
        for c in kept:
            w.writerow((c.term, c.frequency, f"{c.cohesion_pmi:.6f}", f"{c.left_entropy:.6f}", f"{c.right_entropy:.6f}"))
    summary = {"mined": len(cands), "kept": len(kept), "candidates_file": str(out)}
    print(dumps(summary) if args.json else f"mined={len(cands)} kept={len(kept)} -> {out}")
    return 0


def cmd_lexicon_validate(app: App, args) -> int:
    cfg = app.cfg
    lex_path = cfg.require_path("paths.lexicon_file", must_exist=False)
    cand_path = Path(args.candidates) if args.candidates else lex_path.with_suffix(".candidates.tsv")
    if not cand_path.exists():
        raise ConfigError(f"candidate file {cand_path} does not exist; run 'lexicon mine' first")
    with open(cand_path, encoding="utf-8", newline="") as fh:
        terms = [row["term"] for row in csv.DictReader(fh, delimiter="\t")]
    entries = llm_validate(terms, app.gateway("judge")) if terms else []
    seed_path = cfg.path("paths.seed_lexicon")
    base = Lexicon.load(seed_path) if seed_path is not None and seed_path.exists() else EMPTY
    lexicon = base.merged(entries)
    lexicon.save(lex_path)
    summary = {"candidates": len(terms), "accepted": len(entries), "size": len(lexicon), "version": lexicon.version}
    print(dumps(summary) if args.json else f"accepted={len(entries)}/{len(terms)} size={len(lexicon)} version={lexicon.version}")
    return 0


def cmd_index_sparse(app: App, args) -> int:
    path = app.cfg.require_path("paths.sparse_index", must_exist=False)
    index = InvertedIndex.build(app.store, app.lexicon, app.cfg.bm25())
    index.save(path)
    summary = {"passages": index.N, "terms": len(index.postings), "avgdl": index.avgdl, "lexicon_version": index.lexicon_version}
    print(dumps(summary) if args.json else f"indexed {index.N} passages, {len(index.postings)} terms -> {path}")
    return 0


def cmd_index_dense(app: App, args) -> int:
    path = app.cfg.require_path("paths.dense_dir", must_exist=False)
    index = VectorIndex.build(app.store, app.gateway("embedder"), app.cfg.integer("dense.batch_size"))
    index.save(path)
    summary = {"passages": len(index), "dim": index.dim, "provider_model_id": index.provider_model_id}
    print(dumps(summary) if args.json else f"embedded {len(index)} passages (dim {index.dim}) -> {path}")
    return 0


def cmd_search(app: App, args) -> int:
    retrieval = app.cfg.retrieval()
    if args.k is not None:
        retrieval = replace(retrieval, pool_k=args.k)
    payload = search_payload(app.pipeline(retrieval=retrieval), args.query, args.judge)
    print(dumps(payload) if args.json else search_tsv(payload["results"]))
    return 0


def cmd_ask(app: App, args) -> int:
    answer = app.pipeline().answer(args.question)
    if args.json:
        print(answer.to_json())
    else:
        print(answer.text)
        if answer.cited_passage_refs:
            print("\nSources: " + ", ".join(answer.cited_passage_refs))
    return 0


def make_ranker(app: App, name: str):
    if name == "oracle":
        return oracle_ranker
    if name == "reversed":
        return reversed_oracle_ranker
    return CandidateRanker(
        name,
        embedder=app.gateway("embedder"),
        sparse=app.sparse if name != "dense" else None,
        judge=app.gateway("judge") if name == "hybrid_sed" else None,
        retrieval=app.cfg.retrieval(),
        sed=app.cfg.sed(),
    )


def _finish(report, args, writer) -> int:
    if args.out:
        writer(report, args.out)
    if args.json:
        print(dumps(report_dict(report)))
    else:
        for key, value in report.means.items():
            print(f"{key}\t{'' if value is None else f'{value:.4f}'}")
        print(f"failed\t{len(report.failures)}")
    if report.failure_rate > FAILURE_LIMIT:
        log.error("%.0f%% of questions failed", 100 * report.failure_rate)
        return 2
    return 0


def cmd_eval_retrieval(app: App, args) -> int:
    items = load_benchmark(args.benchmark, require_candidates=True)
    ranker = make_ranker(app, "oracle" if args.oracle else args.ranker)
    report = run_retrieval_eval(items, ranker, workers=app.cfg.integer("eval.workers"))
    return _finish(report, args, write_retrieval_tsv)


def cmd_eval_qa(app: App, args) -> int:
    items = load_benchmark(args.benchmark)
    report = run_qa_eval(
        items, app.pipeline(), app.gateway("embedder"), app.gateway("judge"), workers=app.cfg.integer("eval.workers")
    )
    return _finish(report, args, write_qa_tsv)


def cmd_sweep(app: App, args) -> int:
    items = load_benchmark(args.benchmark)
    default = DEFAULT_K_VALUES if args.param == "k" else DEFAULT_C_VALUES
    values = [int(v) for v in args.values.split(",")] if args.values else list(default)
    base_r, base_g = app.cfg.retrieval(), app.cfg.generation()

    def make(param: str, value: int) -> Pipeline:
        if param == "k":
            return app.pipeline(retrieval=replace(base_r, pool_k=value))
        return app.pipeline(generation=replace(base_g, context_c=value))

    rows = sweep(
        args.param, values, items, make, app.gateway("embedder"), app.gateway("judge"), app.cfg.integer("eval.workers")
    )
    out = Path(args.out or f"sweep_{args.param}.csv")
    write_sweep(rows, out, out.with_suffix(".tsv"))
    print(dumps(rows) if args.json else out.read_text(encoding="utf-8").rstrip("\n"))
    return 0


def cmd_bench_build(app: App, args) -> int:
    plan = LevelPlan.from_dict(json.loads(args.plan)) if args.plan else LevelPlan()
    built = build_benchmark(
        app.store, app.gateway("drafter"), app.dense, args.n, args.seed, plan, judge=app.gateway("judge")
    )
    items = [b.item for b in built]
    if args.review:
        export_review(built, args.review)
    if args.apply_review:
        items = apply_review(items, args.apply_review)
    save_benchmark(items, args.out)
    summary = {"items": len(items), "benchmark": args.out}
    if args.qa_out:
        hardest = select_hardest(items, args.hardest)
        save_benchmark(hardest, args.qa_out, qa_only=True)
        summary["qa_items"] = len(hardest)
        summary["qa_benchmark"] = args.qa_out
    print(dumps(summary) if args.json else " ".join(f"{k}={v}" for k, v in summary.items()))
    return 0


def cmd_sed_export(app: App, args) -> int:
    items = load_benchmark(args.benchmark, require_candidates=True)
    count = export_training_pairs(items, args.out)
    positives = sum(c.positive for it in items for c in it.candidates)
    summary = {"records": count, "positive": positives, "negative": count - positives, "out": args.out}
    print(dumps(summary) if args.json else f"records={count} positive={positives} negative={count - positives} -> {args.out}")
    return 0


def cmd_serve(app: App, args) -> int:
    from .server import serve

    serve(app.pipeline(), args.host, args.port)
    return 0


# -- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    def globals_parser(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags without clobbering values given before them
        p = _Parser(add_help=False, argument_default=argparse.SUPPRESS if suppress else None)
        p.add_argument("--config", help="config file (default: ./evidencerag.conf if present)")
        p.add_argument("--mock-providers", metavar="SCRIPT", help="answer all provider calls from a mock script")
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.add_argument("-v", "--verbose", action="count")
        return p

    common = globals_parser(True)
    parser = _Parser(prog="evidencerag", description=__doc__.splitlines()[0], parents=[globals_parser(False)])
    parser.set_defaults(json=False, verbose=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="chunk and store documents")
    p.add_argument("docs", help="directory of *.txt files with optional *.meta.json sidecars")
    p.add_argument("--default-registry", action="store_true", help="validate subfields against the bundled registry")
    p.set_defaults(func=cmd_ingest)

    lex = sub.add_parser("lexicon", help="mine or validate the domain lexicon").add_subparsers(
        dest="action", required=True, parser_class=_Parser
    )
    p = lex.add_parser("mine", parents=[common])
    p.add_argument("--out", help="candidate TSV (default: <lexicon_file>.candidates.tsv)")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_lexicon_mine)
    p = lex.add_parser("validate", parents=[common])
    p.add_argument("--candidates", help="candidate TSV from 'lexicon mine'")
    p.set_defaults(func=cmd_lexicon_validate)

    idx = sub.add_parser("index", help="build retrieval indexes").add_subparsers(
        dest="action", required=True, parser_class=_Parser
    )
    idx.add_parser("sparse", parents=[common]).set_defaults(func=cmd_index_sparse)
    idx.add_parser("dense", parents=[common]).set_defaults(func=cmd_index_dense)

    p = sub.add_parser("search", parents=[common], help="show the fused candidate pool for a query")
    p.add_argument("query")
    p.add_argument("--judge", action="store_true", help="also run support judging")
    p.add_argument("-k", type=int, help="override retrieval.pool_k")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("ask", parents=[common], help="answer a question end to end")
    p.add_argument("question")
    p.set_defaults(func=cmd_ask)

    ev = sub.add_parser("eval", help="evaluate against a benchmark").add_subparsers(
        dest="action", required=True, parser_class=_Parser
    )
    p = ev.add_parser("retrieval", parents=[common])
    p.add_argument("--benchmark", required=True)
    p.add_argument(
        "--ranker", default="hybrid_sed", choices=("oracle", "reversed", "dense", "sparse", "hybrid", "hybrid_sed")
    )
    p.add_argument("--oracle", action="store_true", help="shorthand for --ranker oracle")
    p.add_argument("--out", help="per-question TSV report")
    p.set_defaults(func=cmd_eval_retrieval)
    p = ev.add_parser("qa", parents=[common])
    p.add_argument("--benchmark", required=True)
    p.add_argument("--out", help="per-question TSV report")
    p.set_defaults(func=cmd_eval_qa)

    p = sub.add_parser("sweep", parents=[common], help="ablate pool size K or context size C")
    p.add_argument("param", choices=("k", "c"))
    p.add_argument("--benchmark", required=True)
    p.add_argument("--values", help="comma-separated values (default K: 10,20,30,40; C: 1,2,3,5)")
    p.add_argument("--out", help="CSV plot data (a TSV table is written alongside)")
    p.set_defaults(func=cmd_sweep)

    bench = sub.add_parser("bench", help="construct benchmarks").add_subparsers(
        dest="action", required=True, parser_class=_Parser
    )
    p = bench.add_parser("build", parents=[common])
    p.add_argument("--n", type=int, required=True, help="questions to generate")
    p.add_argument("--seed", type=int, required=True, help="sampling seed")
    p.add_argument("--out", required=True, help="retrieval benchmark JSON-lines")
    p.add_argument("--qa-out", help="QA-only benchmark of the hardest items")
    p.add_argument("--hardest", type=int, default=300)
    p.add_argument("--plan", help='per-level counts as JSON, e.g. {"P1":2,...}')
    p.add_argument("--review", help="write a review TSV for human adjudication")
    p.add_argument("--apply-review", help="apply human_level overrides from a review TSV")
    p.set_defaults(func=cmd_bench_build)

    sed = sub.add_parser("sed", help="support discriminator utilities").add_subparsers(
        dest="action", required=True, parser_class=_Parser
    )
    p = sed.add_parser("export-pairs", parents=[common])
    p.add_argument("--benchmark", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sed_export)

    p = sub.add_parser("serve", parents=[common], help="serve search and answers over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        app = App(Config.load(args.config), args.mock_providers)
        return args.func(app, args)
    except RagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
