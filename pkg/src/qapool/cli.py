"""Stage-oriented command line: generate → index → infer → eval, plus a
demo-count sweep and a test-set ingest helper. Stages are idempotent and
resumable; every artifact gets a config-snapshot sidecar."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import datagen, evalkit, prompting
from .config import RunConfig, load_config
from .embedding import Embedder, EmbeddingIndex
from .clustering import KMeansModel, fit_kmeans_matrix
from .errors import QapoolError
from .gateway import shared_gateway
from .prompting import Demonstration, PromptFormat
from .selection import SelectionConfig, select

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 2


class StageDependencyError(QapoolError):
    """A stage input artifact is missing; names the path."""


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise StageDependencyError(f"missing artifact {path} (run `qapool {produced_by}` first)")
    return path


def _write_meta(artifact: Path, cfg: RunConfig) -> None:
    meta = {"artifact": artifact.name, "config_snapshot": cfg.raw}
    sidecar = artifact.with_name(artifact.name + ".meta.json")
    tmp = sidecar.with_name(sidecar.name + ".tmp")
    tmp.write_text(json.dumps(meta, ensure_ascii=False, indent=1), encoding="utf-8")
    os.replace(tmp, sidecar)


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _suffixed(path: Path, tag: str) -> Path:
    return path.with_name(f"{path.stem}.{tag}{path.suffix}")


def _load_samples(cfg: RunConfig, test_file: str) -> list[evalkit.TestSample]:
    samples = evalkit.load_dataset(test_file)
    if cfg.subset_n is not None and cfg.subset_n < len(samples):
        samples = evalkit.sample_subset(samples, cfg.subset_n, cfg.seeds.subset)
    return samples


# -- stages ------------------------------------------------------------------


def cmd_generate(cfg: RunConfig) -> int:
    manifest_path = cfg.manifest_path
    if not manifest_path.exists():
        print(f"error: manifest not found: {manifest_path}", file=sys.stderr)
        return EXIT_ERROR
    manifest = datagen.load_manifest(manifest_path)
    gateway = shared_gateway(cfg.backend)
    calls_before = gateway.backend_calls
    cfg.paths.workdir.mkdir(parents=True, exist_ok=True)
    entries, report = datagen.build_dataset(
        manifest,
        gateway,
        cfg.datagen,
        dataset_path=cfg.paths.dataset,
        passages_path=cfg.paths.passages,
    )
    _write_meta(cfg.paths.dataset, cfg)
    _write_meta(cfg.paths.passages, cfg)
    print(report.summary())
    print(f"backend calls: {gateway.backend_calls - calls_before}")
    print(f"dataset: {cfg.paths.dataset} ({len(entries)} records)")
    return EXIT_OK


def _fit_and_save(cfg: RunConfig, index: EmbeddingIndex, k: int, kmeans_path: Path) -> KMeansModel:
    model = fit_kmeans_matrix(index.ids, index.matrix, k, cfg.seeds.kmeans)
    model.save(
        kmeans_path,
        extra={"model_id": cfg.provider.model_id, "config_snapshot": cfg.raw},
    )
    return model


def cmd_index(cfg: RunConfig) -> int:
    _require(cfg.paths.dataset, "generate")
    entries = datagen.load_dataset_file(cfg.paths.dataset)
    if not entries:
        print(f"error: dataset {cfg.paths.dataset} is empty", file=sys.stderr)
        return EXIT_ERROR
    embedder = Embedder(cfg.provider)
    index = EmbeddingIndex.build(
        embedder, [(e.record.record_id, pool_text(e)) for e in entries]
    )
    index.save(cfg.paths.index)
    _write_meta(cfg.paths.index, cfg)
    k = cfg.cluster_k or cfg.selection.k
    model = _fit_and_save(cfg, index, k, cfg.paths.kmeans)
    print(f"indexed {index.count} records at d={index.dimension} (model {index.model_id})")
    print(f"k-means: k={model.k} inertia={model.inertia:.6f} iterations={len(model.inertia_history)}")
    return EXIT_OK


def pool_text(entry: datagen.PoolEntry) -> str:
    """The text embedded for a pool record: the question alone, so pool and
    test questions live in one comparable space. Swap here to experiment."""
    return entry.record.question


def _run_inference(
    cfg: RunConfig,
    samples: list[evalkit.TestSample],
    entries: list[datagen.PoolEntry],
    index: EmbeddingIndex,
    sel_cfg: SelectionConfig,
) -> list[dict]:
    by_id = {e.record.record_id: e for e in entries}
    embedder = Embedder(cfg.provider)
    gateway = shared_gateway(cfg.backend)
    lines = []
    for sample in samples:
        query = embedder.embed(sample.question)
        picked = select(query, index, sel_cfg)
        demos = []
        for rid in picked.demo_ids:
            entry = by_id[rid]
            demos.append(
                Demonstration(
                    question=entry.record.question,
                    answer=entry.record.answer,
                    explanation=entry.record.explanation,
                    passage=entry.passage.passage,
                )
            )
        output = prompting.infer(sample.question, demos, picked.demo_ids, cfg.format, gateway)
        answer = output.parsed_answer
        if cfg.webq_postprocess:
            answer = prompting.postprocess_webq(answer)
        lines.append(
            {
                "id": sample.id,
                "question": sample.question,
                "strategy": picked.strategy,
                "demo_ids": output.demo_ids,
                "similarity_scores": picked.similarity_scores,
                "format": cfg.format.format_id,
                "prompts": list(output.prompts),
                "prompt_sha256": [
                    hashlib.sha256(p.encode("utf-8")).hexdigest() for p in output.prompts
                ],
                "intermediate_text": output.intermediate_text,
                "raw_text": output.raw_text,
                "parsed_answer": answer,
                "parsed_explanation": output.parsed_explanation,
                "parse_failure": output.parse_failure,
            }
        )
    return lines


def cmd_infer(cfg: RunConfig, test_file: str) -> int:
    _require(cfg.paths.dataset, "generate")
    _require(cfg.paths.index, "index")
    _require(cfg.paths.kmeans, "index")
    entries = datagen.load_dataset_file(cfg.paths.dataset)
    index = EmbeddingIndex.load(cfg.paths.index, expected_model_id=cfg.provider.model_id)
    index.kmeans = KMeansModel.load(cfg.paths.kmeans)
    samples = _load_samples(cfg, test_file)
    lines = _run_inference(cfg, samples, entries, index, cfg.selection)
    _atomic_write(
        cfg.paths.runlog, "".join(json.dumps(line, ensure_ascii=False) + "\n" for line in lines)
    )
    _write_meta(cfg.paths.runlog, cfg)
    failures = sum(1 for line in lines if line["parse_failure"])
    print(f"inferred {len(lines)} questions ({failures} parse failures) -> {cfg.paths.runlog}")
    return EXIT_OK


def _evaluate_runlog(cfg: RunConfig, runlog_path: Path, test_file: str) -> evalkit.EvalReport:
    samples = _load_samples(cfg, test_file)
    predictions = {}
    with open(runlog_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                predictions[rec["id"]] = rec["parsed_answer"]
    return evalkit.evaluate(predictions, samples, config_snapshot=cfg.raw)


def cmd_eval(cfg: RunConfig, test_file: str) -> int:
    _require(cfg.paths.runlog, "infer")
    report = _evaluate_runlog(cfg, cfg.paths.runlog, test_file)
    _atomic_write(cfg.paths.report, json.dumps(report.to_json_dict(), ensure_ascii=False, indent=1) + "\n")
    text = evalkit.render_report_text(report, title=f"eval: {Path(test_file).name}")
    _atomic_write(cfg.paths.report.with_suffix(".txt"), text)
    print(text, end="")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, test_file: str, k_list: list[int]) -> int:
    _require(cfg.paths.dataset, "generate")
    entries = datagen.load_dataset_file(cfg.paths.dataset)
    embedder = Embedder(cfg.provider)
    index = EmbeddingIndex.build(embedder, [(e.record.record_id, pool_text(e)) for e in entries])
    index.save(cfg.paths.index)
    _write_meta(cfg.paths.index, cfg)
    samples = _load_samples(cfg, test_file)
    rows = []
    for k in k_list:
        kmeans_path = _suffixed(cfg.paths.kmeans, f"k{k}")
        index.kmeans = _fit_and_save(cfg, index, k, kmeans_path)
        sel_cfg = SelectionConfig(strategy=cfg.selection.strategy, k=k, seed=cfg.selection.seed)
        lines = _run_inference(cfg, samples, entries, index, sel_cfg)
        runlog_path = _suffixed(cfg.paths.runlog, f"k{k}")
        _atomic_write(
            runlog_path, "".join(json.dumps(line, ensure_ascii=False) + "\n" for line in lines)
        )
        _write_meta(runlog_path, cfg)
        report = _evaluate_runlog(cfg, runlog_path, test_file)
        report_path = _suffixed(cfg.paths.report, f"k{k}")
        _atomic_write(report_path, json.dumps(report.to_json_dict(), ensure_ascii=False, indent=1) + "\n")
        rows.append({"k": k, "em": report.aggregate_em, "f1": report.aggregate_f1})
    sweep_path = _suffixed(cfg.paths.report, "sweep")
    _atomic_write(
        sweep_path,
        json.dumps({"rows": rows, "config_snapshot": cfg.raw}, ensure_ascii=False, indent=1) + "\n",
    )
    print(f"{'k':>4}  {'EM':>6}  {'F1':>6}")
    for row in rows:
        print(f"{row['k']:>4}  {100 * row['em']:>6.1f}  {100 * row['f1']:>6.1f}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    count = evalkit.ingest(args.input, args.output, dataset_name=args.dataset_name)
    print(f"wrote {count} canonical records -> {args.output}")
    return EXIT_OK


# -- argument plumbing ---------------------------------------------------------


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    from dataclasses import replace

    selection = cfg.selection
    if getattr(args, "k", None):
        selection = SelectionConfig(strategy=selection.strategy, k=args.k, seed=selection.seed)
    if getattr(args, "strategy", None):
        selection = SelectionConfig(strategy=args.strategy, k=selection.k, seed=selection.seed)
    fmt = cfg.format
    if getattr(args, "format", None):
        fmt = PromptFormat.parse(args.format)
    return replace(cfg, selection=selection, format=fmt)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qapool",
        description="Build an LLM-generated QA pool, select demonstrations per "
        "question, run inference, and score the predictions.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, needs_config=True):
        p = sub.add_parser(name, help=help_text)
        if needs_config:
            p.add_argument("--config", required=True, help="run-config JSON file")
        return p

    add("generate", "build the pseudo QA dataset from the topic manifest")

    p = add("index", "embed the pool and fit the k-means model")
    p.add_argument("--k", type=int, help="override cluster/demo count")

    p = add("infer", "select demos and answer each test question")
    p.add_argument("--test-file", required=True, help="canonical test-set jsonl")
    p.add_argument("--k", type=int, help="override demo count")
    p.add_argument("--strategy", help="override selection strategy")
    p.add_argument("--format", help="override prompt format")

    p = add("eval", "score the run log against gold answers")
    p.add_argument("--test-file", required=True)

    p = add("sweep", "repeat index+infer+eval over several demo counts")
    p.add_argument("--test-file", required=True)
    p.add_argument("--k-list", default="2,4,6,8,10,12,14,16", help="comma-separated demo counts")

    p = add("ingest", "convert a loose QA jsonl into the canonical format", needs_config=False)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--dataset-name", default="")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        if args.command == "ingest":
            return cmd_ingest(args)
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "index":
            return cmd_index(cfg)
        if args.command == "infer":
            return cmd_infer(cfg, args.test_file)
        if args.command == "eval":
            return cmd_eval(cfg, args.test_file)
        if args.command == "sweep":
            k_list = [int(part) for part in args.k_list.split(",") if part.strip()]
            return cmd_sweep(cfg, args.test_file, k_list)
        raise AssertionError(f"unhandled command {args.command}")
    except (QapoolError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
