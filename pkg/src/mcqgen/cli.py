"""Command-line entry point: ``mcqgen <subcommand> ...``.

Exit status: 0 success, 1 usage or configuration error, 2 data error,
3 backend error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional

from . import __version__
from .config import load_config, pipeline_config, train_config
from .core import read_dataset, read_mcq_dataset, write_candidate_audit, write_mcq_dataset
from .errors import ConfigError, EmptyInputError, MCQError
from .evaluation import (MetricsReport, evaluate_runs, format_percent, human_eval_summary,
                         ingest_logs, read_annotations, render_tables, reports_to_json)
from .kg import TripleStore, build_toy_graph, filtered_mrr, train
from .pipeline import build_components, run_pipeline
from .taxonomy import (AuditLog, HttpLLMClient, QuestionWordLexicon, ReplayClient, classify_content_many,
                       classify_type, distribution_report, load_prompt_template)

log = logging.getLogger("mcqgen")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, ensure_ascii=False, sort_keys=False) + "\n", encoding="utf-8")


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.name + suffix)


def _delimited(rows, header, sep: str) -> str:
    import csv
    import io
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=sep, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- subcommands ------------------------------------------------------------------------

def cmd_generate(args, cfg) -> int:
    pcfg = pipeline_config(cfg)
    comp = build_components(cfg)
    out = Path(args.out)
    records = list(read_dataset(args.input))
    result = run_pipeline(records, comp, pcfg, workers=int(cfg["workers"]), fail_fast=bool(cfg["fail_fast"]))
    n_choices = pcfg.distractor_count + 1
    write_mcq_dataset(result.items, out, n_choices=n_choices)
    if cfg.get("audit_log"):
        with open(cfg["audit_log"], "w", encoding="utf-8") as fh:
            write_candidate_audit(result.audit, fh)
    manifest = {
        "version": __version__,
        "command": "generate",
        "input": str(Path(args.input).resolve()),
        "output": str(out.resolve()),
        "audit_log": cfg.get("audit_log"),
        "seeds": {"seed": cfg["seed"], "shuffle_seed_scope": pcfg.shuffle_seed_scope.value},
        "config": cfg,
        **result.manifest,
    }
    _write_json(_sidecar(out, ".manifest.json"), manifest)
    c = result.manifest["counts"]
    print(f"wrote {c['items_out']} items to {out} "
          f"({c['skipped_errors']} skipped, {c['incomplete_dropped']} incomplete dropped)")
    return 0


def cmd_train_kg(args, cfg) -> int:
    tcfg = train_config(cfg)
    store = TripleStore.from_triples(build_toy_graph()) if args.toy else TripleStore.load(args.triples)
    t0 = time.perf_counter()
    result = train(store, tcfg)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    result.embedding.save(out)
    summary = {
        "triples": len(store),
        "entities": len(store.entities),
        "relations": len(store.relations),
        "train": dataclasses.asdict(tcfg),
        "epoch_loss": result.epoch_loss,
        "filtered_mrr": filtered_mrr(result.embedding, store),
        "seconds": elapsed,
    }
    _write_json(_sidecar(out, ".manifest.json"), summary)
    print(f"trained {len(store)} triples, filtered MRR {summary['filtered_mrr']:.4f}, wrote {out}")
    return 0


def _llm_client(llm_cfg: Optional[dict]):
    if not llm_cfg:
        return None
    kind = llm_cfg.get("backend", "http")
    if kind == "replay":
        return ReplayClient.from_file(llm_cfg["path"])
    if kind == "http":
        return HttpLLMClient(llm_cfg.get("endpoint"), model=llm_cfg.get("model"))
    raise ConfigError(f"unknown llm backend {kind!r}")


def cmd_categorize(args, cfg) -> int:
    tax = cfg["taxonomy"]
    lex = tax["lexicon"]
    lexicon = QuestionWordLexicon.builtin(lex) if lex in ("en", "fa") else QuestionWordLexicon.from_file(lex)
    items = [dataclasses.replace(it, qtype=classify_type(it.question, lexicon))
             for it in read_mcq_dataset(args.input)]
    client = _llm_client(tax.get("llm"))
    failures = 0
    if client is not None:
        template = load_prompt_template(tax.get("prompt"))
        audit = AuditLog(cfg["audit_log"]) if cfg.get("audit_log") else None
        labels = classify_content_many(items, client, template, max_in_flight=int(tax["max_in_flight"]),
                                       audit=audit)
        updated = []
        for item, label in zip(items, labels):
            if isinstance(label, MCQError):
                failures += 1
                log.warning("item %s: %s; content left as %s", item.id, label, item.content.value)
                if cfg["fail_fast"]:
                    raise label
                updated.append(item)
            else:
                updated.append(dataclasses.replace(item, content=label))
        items = updated
    out = Path(args.out)
    n_choices = max((len(it.choices) for it in items), default=4)
    write_mcq_dataset(items, out, n_choices=n_choices)
    report = distribution_report(items)
    _write_json(_sidecar(out, ".distribution.json"), report.to_json())
    sys.stdout.write(_delimited(report.rows(), ["axis", "label", "count"], "\t"))
    if failures:
        print(f"{failures} items could not be classified by content", file=sys.stderr)
    return 0


def cmd_evaluate(args, cfg) -> int:
    items = {it.id: it for it in read_mcq_dataset(args.dataset)}
    reports = evaluate_runs(ingest_logs(args.logs), items)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = render_tables(reports, "text")
    (out / "tables.txt").write_text(text, encoding="utf-8")
    (out / "tables.tsv").write_text(render_tables(reports, "tsv"), encoding="utf-8")
    (out / "report.json").write_text(reports_to_json(reports) + "\n", encoding="utf-8")
    if args.annotations:
        valid, distractive = human_eval_summary(read_annotations(args.annotations))
        _write_json(out / "human_eval.json", {"validness": valid, "distractiveness": distractive})
        text += f"Human evaluation: validness {format_percent(valid)}, distractiveness {format_percent(distractive)}\n"
    sys.stdout.write(text)
    return 0


def cmd_report(args, cfg) -> int:
    from .plotting import render_figures

    if not args.evaluation and not args.dataset:
        raise ConfigError("report needs --evaluation and/or --dataset")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sep = "\t" if args.format == "tsv" else ","
    reports, dist = [], None
    if args.evaluation:
        try:
            raw = json.loads(Path(args.evaluation).read_text(encoding="utf-8"))
            reports = [MetricsReport.from_json(r) for r in raw["runs"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise MCQError(f"{args.evaluation}: not an evaluation report ({exc})") from None
        if not reports:
            raise EmptyInputError("evaluation report has no runs")
        (out / f"tables.{args.format}").write_text(render_tables(reports, args.format), encoding="utf-8")
    if args.dataset:
        dist = distribution_report(read_mcq_dataset(args.dataset))
        (out / f"distribution.{args.format}").write_text(
            _delimited(dist.rows(), ["axis", "label", "count"], sep), encoding="utf-8")
    for path in render_figures(out, reports, dist):
        print(path)
    return 0


# -- wiring -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="mcqgen", description="Generate and evaluate multiple-choice questions.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--config", help="YAML/JSON run configuration")
    p.add_argument("--seed", type=int, help="global seed (overrides config)")
    p.add_argument("--workers", type=int, help="worker threads for generate")
    p.add_argument("--fail-fast", action="store_true", default=None, help="abort on the first item error")
    p.add_argument("--audit-log", help="candidate audit (generate) or LLM exchange log (categorize)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="QA dataset -> MCQ dataset")
    g.add_argument("--in", dest="input", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train-kg", help="train ComplEx embeddings on a triple file")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--triples")
    src.add_argument("--toy", action="store_true", help="use the built-in toy graph")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_kg)

    c = sub.add_parser("categorize", help="label MCQ items by type and content")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_categorize)

    e = sub.add_parser("evaluate", help="score model probability logs against an MCQ dataset")
    e.add_argument("--logs", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--annotations", help="human judgements (JSON lines)")
    e.add_argument("--out", required=True, help="output directory")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="delimited tables and figures from saved results")
    r.add_argument("--evaluation", help="report.json written by evaluate")
    r.add_argument("--dataset", help="MCQ dataset for the distribution tables")
    r.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, {"seed": args.seed, "workers": args.workers,
                                        "fail_fast": args.fail_fast, "audit_log": args.audit_log})
        return args.func(args, cfg)
    except MCQError as exc:
        print(f"mcqgen: {exc}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"mcqgen: IO_ERROR: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
