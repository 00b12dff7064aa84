"""Answer normalization, EM/F1 scoring, test-set loading, and report assembly."""

from __future__ import annotations

import json
import random
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import QapoolError

_ARTICLES = re.compile(r"\b(a|an|the)\b")


class FormatError(QapoolError):
    """A test-set file failed to parse; carries the offending line number."""

    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.line_no = line_no


class MissingPrediction(QapoolError):
    """Evaluation was asked to score samples that have no inference record."""

    def __init__(self, missing_ids: Sequence[str]):
        shown = ", ".join(list(missing_ids)[:5])
        super().__init__(f"{len(missing_ids)} sample(s) without predictions: {shown}")
        self.missing_ids = list(missing_ids)


def _remove_punctuation(text: str) -> str:
    # Unicode category P, so curly quotes and dashes go the same way as ASCII.
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    text = _remove_punctuation(text.lower())
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def _tokens(text: str) -> list[str]:
    return normalize_answer(text).split()


def _scorable_golds(golds: Sequence[str]) -> list[str]:
    if not golds:
        raise ValueError("golds must be non-empty")
    return [g for g in golds if normalize_answer(g)]


def exact_match(prediction: str, golds: Sequence[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold."""
    pred = normalize_answer(prediction)
    kept = _scorable_golds(golds)
    if not kept:
        # Every gold normalizes to nothing: score the prediction's emptiness.
        return int(pred == "")
    return int(any(pred == normalize_answer(g) for g in kept))


def _f1_single(prediction: str, gold: str) -> float:
    pred_toks = _tokens(prediction)
    gold_toks = _tokens(gold)
    if not pred_toks or not gold_toks:
        return float(pred_toks == gold_toks)
    common = Counter(pred_toks) & Counter(gold_toks)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_toks)
    recall = overlap / len(gold_toks)
    return 2 * precision * recall / (precision + recall)


def f1_score(prediction: str, golds: Sequence[str]) -> float:
    """Token-level F1 over normalized tokens, maximized over the golds."""
    kept = _scorable_golds(golds)
    if not kept:
        return float(normalize_answer(prediction) == "")
    return max(_f1_single(prediction, g) for g in kept)


@dataclass(frozen=True)
class TestSample:
    id: str
    question: str
    gold_answers: tuple[str, ...]
    dataset: str = ""


@dataclass(frozen=True)
class SampleScore:
    id: str
    parsed_answer: str
    em: int
    f1: float


@dataclass
class EvalReport:
    per_sample: list[SampleScore]
    aggregate_em: float
    aggregate_f1: float
    config_snapshot: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "aggregate_em": self.aggregate_em,
            "aggregate_f1": self.aggregate_f1,
            "n": len(self.per_sample),
            "per_sample": [
                {"id": s.id, "parsed_answer": s.parsed_answer, "em": s.em, "f1": s.f1}
                for s in self.per_sample
            ],
            "config_snapshot": self.config_snapshot,
        }


def load_dataset(path, format_id: str = "canonical") -> list[TestSample]:
    """Read newline-delimited records {id, question, answers[, dataset]}."""
    if format_id != "canonical":
        raise ValueError(f"unknown test-set format: {format_id!r}")
    samples: list[TestSample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(path, line_no, f"invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise FormatError(path, line_no, "record is not an object")
            for key in ("id", "question", "answers"):
                if key not in rec:
                    raise FormatError(path, line_no, f"missing field {key!r}")
            answers = rec["answers"]
            if not isinstance(answers, list) or not answers:
                raise FormatError(path, line_no, "answers must be a non-empty list")
            sample_id = str(rec["id"])
            if sample_id in seen:
                raise FormatError(path, line_no, f"duplicate id {sample_id!r}")
            seen.add(sample_id)
            samples.append(
                TestSample(
                    id=sample_id,
                    question=str(rec["question"]),
                    gold_answers=tuple(str(a) for a in answers),
                    dataset=str(rec.get("dataset", "")),
                )
            )
    return samples


def ingest(in_path, out_path, dataset_name: str = "") -> int:
    """Convert a loosely-shaped QA jsonl file to the canonical test-set format.

    Accepts records with `question` plus any of: `answers` (list), `answer`
    (string or list), or `answer.aliases`/`answer.value` objects. Aliases are
    kept as additional golds. Returns the number of records written.
    """
    out_lines: list[str] = []
    with open(in_path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(in_path, line_no, f"invalid JSON ({exc.msg})") from exc
            if "question" not in rec:
                raise FormatError(in_path, line_no, "missing field 'question'")
            raw = rec.get("answers", rec.get("answer"))
            if raw is None:
                raise FormatError(in_path, line_no, "no answers / answer field")
            if isinstance(raw, dict):
                answers = [raw.get("value")] if raw.get("value") else []
                answers.extend(raw.get("aliases", []))
            elif isinstance(raw, list):
                answers = list(raw)
            else:
                answers = [raw]
            answers = [str(a) for a in answers if str(a)]
            if not answers:
                raise FormatError(in_path, line_no, "empty answers")
            rid = str(rec.get("id", f"q{line_no - 1:06d}"))
            out = {"id": rid, "question": str(rec["question"]), "answers": answers}
            if dataset_name or rec.get("dataset"):
                out["dataset"] = dataset_name or str(rec["dataset"])
            out_lines.append(json.dumps(out, ensure_ascii=False))
    Path(out_path).write_text("\n".join(out_lines) + "\n", encoding="utf-8")
    return len(out_lines)


def sample_subset(samples: Sequence[TestSample], n: int, seed: int) -> list[TestSample]:
    """Uniform sample without replacement; original order is preserved."""
    if n > len(samples):
        raise ValueError(f"cannot sample {n} from {len(samples)} records")
    picked = sorted(random.Random(seed).sample(range(len(samples)), n))
    return [samples[i] for i in picked]


def evaluate(
    predictions: Mapping[str, str],
    samples: Iterable[TestSample],
    config_snapshot: dict | None = None,
) -> EvalReport:
    """Score predictions (by sample id) against gold answers."""
    samples = list(samples)
    missing = [s.id for s in samples if s.id not in predictions]
    if missing:
        raise MissingPrediction(missing)
    per_sample = []
    for s in samples:
        pred = predictions[s.id]
        per_sample.append(
            SampleScore(
                id=s.id,
                parsed_answer=pred,
                em=exact_match(pred, s.gold_answers),
                f1=f1_score(pred, s.gold_answers),
            )
        )
    n = len(per_sample)
    return EvalReport(
        per_sample=per_sample,
        aggregate_em=sum(s.em for s in per_sample) / n if n else 0.0,
        aggregate_f1=sum(s.f1 for s in per_sample) / n if n else 0.0,
        config_snapshot=dict(config_snapshot or {}),
    )


def render_report_text(report: EvalReport, title: str = "results") -> str:
    """Small fixed-width EM/F1 table, scores as percentages."""
    lines = [
        f"{title}",
        f"{'n':>6}  {'EM':>6}  {'F1':>6}",
        f"{len(report.per_sample):>6}  {100 * report.aggregate_em:>6.1f}  {100 * report.aggregate_f1:>6.1f}",
    ]
    return "\n".join(lines) + "\n"
