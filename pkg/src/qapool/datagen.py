"""Pseudo QA dataset construction: topic examples → wiki-style passages →
entity extraction → questions with a re-answer check → explanations, with
every filter applied before a record is persisted."""

from __future__ import annotations

import hashlib
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import QapoolError
from .evalkit import normalize_answer
from .gateway import CompletionRequest, Gateway

logger = logging.getLogger(__name__)

_LIST_MARKER = re.compile(r"^\s*(?:[-*•·]+|\d+[.)])\s*")


class EmptyGeneration(QapoolError):
    """The backend produced only whitespace where content was required."""


class ExplanationRejected(QapoolError):
    """The explanation lacks the answer span; the record is dropped."""


class GenerationBudgetExhausted(QapoolError):
    """Example listing could not reach its target; carries the partial list."""

    def __init__(self, topic: str, partial: list[str], target: int):
        super().__init__(
            f"topic {topic!r}: collected {len(partial)} of {target} examples before the retry budget ran out"
        )
        self.partial = partial


@dataclass(frozen=True)
class TopicSpec:
    name: str
    target_example_count: int

    def validate(self) -> None:
        if not self.name:
            raise ValueError("topic name is empty")
        if self.target_example_count < 1:
            raise ValueError(f"topic {self.name!r} needs a positive example count")


@dataclass(frozen=True)
class PassageRecord:
    topic: str
    example: str
    passage: str
    generation_id: str


@dataclass(frozen=True)
class QaRecord:
    record_id: str
    question: str
    answer: str
    passage_id: str
    explanation: str
    topic: str


@dataclass(frozen=True)
class PoolEntry:
    """A persisted QA record joined with its source passage."""

    record: QaRecord
    passage: PassageRecord


@dataclass(frozen=True)
class StepParams:
    temperature: float
    max_tokens: int


@dataclass(frozen=True)
class PromptTemplates:
    list_examples: str = "List some {topic}:"
    list_examples_more: str = "List some {topic} (different from {exclusions}):"
    passage: str = "This is a passage from Wikipedia about the {topic}, {example}:"
    entities: str = "Here is a passage: {passage} Extract the named entities in it:"
    question: str = "{passage} {entity} is the answer to the question:"
    reanswer: str = "{passage} Question: {question} The answer is:"
    explanation: str = (
        "Passage: {passage} Question: {question} Answer: {answer} You can refer to "
        "the passage and write a short explanation to this Question-Answer pair:"
    )


@dataclass(frozen=True)
class DatagenConfig:
    examples: StepParams = StepParams(1.0, 100)
    passage: StepParams = StepParams(1.0, 300)
    entities: StepParams = StepParams(0.0, 100)
    question: StepParams = StepParams(0.0, 100)
    double_check: StepParams = StepParams(0.0, 100)
    explanation: StepParams = StepParams(0.7, 80)
    max_answer_words: int = 5
    max_qas_per_passage: int = 10
    example_retry_rounds: int = 20
    workers: int = 1
    # token-id → bias applied to question-generation calls (pronoun bans)
    pronoun_token_bias: tuple[tuple[int, float], ...] = ()
    templates: PromptTemplates = PromptTemplates()


def default_pronoun_bans() -> tuple[dict[str, int], tuple[tuple[int, float], ...]]:
    """Mock-friendly pronoun bans: string→id for the backend, id→bias for
    requests. HTTP backends need real tokenizer ids supplied in config."""
    strings_to_ids = {"they": 9001, "he": 9002, "she": 9003}
    bias = tuple((token_id, -100.0) for token_id in strings_to_ids.values())
    return strings_to_ids, bias


def parse_listing(text: str) -> list[str]:
    """Split a completion into list items on newlines and commas."""
    items = []
    for chunk in re.split(r"[\n,]", text):
        item = _LIST_MARKER.sub("", chunk).strip()
        if item:
            items.append(item)
    return items


def passage_id_for(topic: str, example: str) -> str:
    digest = hashlib.sha256(f"{topic}\x1f{example}".encode("utf-8")).hexdigest()
    return f"p{digest[:15]}"


def record_id_for(passage_id: str, question: str, answer: str) -> str:
    digest = hashlib.sha256(f"{passage_id}\x1f{question}\x1f{answer}".encode("utf-8")).hexdigest()
    return f"r{digest[:15]}"


def list_topic_examples(topic: TopicSpec, llm: Gateway, cfg: DatagenConfig) -> list[str]:
    """Collect at least the target number of distinct examples for a topic.

    The listing prompt is reissued with the accumulated examples as
    exclusions until the target is met or the round budget runs out.
    """
    topic.validate()
    t = cfg.templates
    collected: list[str] = []
    seen: set[str] = set()
    for _ in range(cfg.example_retry_rounds):
        if collected:
            prompt = t.list_examples_more.format(
                topic=topic.name, exclusions=", ".join(collected)
            )
        else:
            prompt = t.list_examples.format(topic=topic.name)
        result = llm.complete(
            CompletionRequest(
                prompt=prompt,
                max_tokens=cfg.examples.max_tokens,
                temperature=cfg.examples.temperature,
            )
        )
        for item in parse_listing(result.text):
            folded = item.casefold()
            if folded not in seen:
                seen.add(folded)
                collected.append(item)
        if len(collected) >= topic.target_example_count:
            return collected
    raise GenerationBudgetExhausted(topic.name, collected, topic.target_example_count)


def generate_passage(topic: str, example: str, llm: Gateway, cfg: DatagenConfig) -> PassageRecord:
    """One wiki-style passage for a (topic, example) pair."""
    if not example:
        raise ValueError("example is empty")
    prompt = cfg.templates.passage.format(topic=topic, example=example)
    result = llm.complete(
        CompletionRequest(
            prompt=prompt,
            max_tokens=cfg.passage.max_tokens,
            temperature=cfg.passage.temperature,
        )
    )
    passage = result.text.strip()
    if not passage:
        raise EmptyGeneration(f"empty passage for ({topic!r}, {example!r})")
    return PassageRecord(
        topic=topic, example=example, passage=passage, generation_id=passage_id_for(topic, example)
    )


def extract_entities(passage: PassageRecord, llm: Gateway, cfg: DatagenConfig) -> list[str]:
    """Candidate answers: entities named by the model and present verbatim
    (case-insensitively) in the passage, deduplicated by normalized form."""
    prompt = cfg.templates.entities.format(passage=passage.passage)
    result = llm.complete(
        CompletionRequest(
            prompt=prompt,
            max_tokens=cfg.entities.max_tokens,
            temperature=cfg.entities.temperature,
        )
    )
    passage_folded = passage.passage.casefold()
    entities: list[str] = []
    seen: set[str] = set()
    for item in parse_listing(result.text):
        norm = normalize_answer(item)
        if not norm or norm in seen:
            continue
        if item.casefold() not in passage_folded:
            continue
        seen.add(norm)
        entities.append(item)
    return entities


def generate_question(
    passage: PassageRecord, entity: str, llm: Gateway, cfg: DatagenConfig
) -> str:
    """A question whose answer is the entity; carries the pronoun bans."""
    if entity.casefold() not in passage.passage.casefold():
        raise ValueError(f"entity {entity!r} does not occur in the passage")
    prompt = cfg.templates.question.format(passage=passage.passage, entity=entity)
    result = llm.complete(
        CompletionRequest(
            prompt=prompt,
            max_tokens=cfg.question.max_tokens,
            temperature=cfg.question.temperature,
            token_bias=dict(cfg.pronoun_token_bias),
        )
    )
    question = result.text.strip()
    if not question:
        raise EmptyGeneration(f"empty question for entity {entity!r}")
    if not question.endswith("?"):
        question += "?"
    return question


def double_check(
    passage: PassageRecord, question: str, entity: str, llm: Gateway, cfg: DatagenConfig
) -> bool:
    """Re-answer the question from the passage; keep the pair only when the
    normalized re-answer recovers the entity."""
    prompt = cfg.templates.reanswer.format(passage=passage.passage, question=question)
    result = llm.complete(
        CompletionRequest(
            prompt=prompt,
            max_tokens=cfg.double_check.max_tokens,
            temperature=cfg.double_check.temperature,
        )
    )
    return normalize_answer(result.text) == normalize_answer(entity)


def generate_explanation(
    passage: PassageRecord, question: str, answer: str, llm: Gateway, cfg: DatagenConfig
) -> str:
    """One-sentence explanation; must contain the answer span (normalized)."""
    prompt = cfg.templates.explanation.format(
        passage=passage.passage, question=question, answer=answer
    )
    result = llm.complete(
        CompletionRequest(
            prompt=prompt,
            max_tokens=cfg.explanation.max_tokens,
            temperature=cfg.explanation.temperature,
        )
    )
    explanation = result.text.strip()
    if not explanation:
        raise ExplanationRejected("empty explanation")
    if normalize_answer(answer) not in normalize_answer(explanation):
        raise ExplanationRejected(f"no answer span {answer!r} in {explanation!r}")
    return explanation


_REJECTION_KEYS = (
    "examples_truncated_topics",
    "empty_passages",
    "answers_too_long",
    "empty_questions",
    "double_check_failed",
    "explanations_rejected",
    "passages_at_cap",
)


@dataclass
class RunReport:
    topics: int = 0
    examples: int = 0
    passages: int = 0
    candidates: int = 0
    records: int = 0
    rejections: dict[str, int] = field(default_factory=lambda: {k: 0 for k in _REJECTION_KEYS})
    item_errors: list[str] = field(default_factory=list)

    def bump(self, key: str, amount: int = 1) -> None:
        self.rejections[key] = self.rejections.get(key, 0) + amount

    def summary(self) -> str:
        lines = [
            f"topics={self.topics} examples={self.examples} passages={self.passages} "
            f"candidates={self.candidates} records={self.records}"
        ]
        lines += [f"  rejected[{k}]={v}" for k, v in self.rejections.items() if v]
        lines += [f"  error: {e}" for e in self.item_errors]
        return "\n".join(lines)


def validate_record(record: QaRecord, passage: PassageRecord, cfg: DatagenConfig) -> None:
    """Assert every persisted-record invariant; raises on violation."""
    if len(record.answer.strip().split()) > cfg.max_answer_words:
        raise ValueError(f"answer {record.answer!r} exceeds {cfg.max_answer_words} words")
    if normalize_answer(record.answer) not in normalize_answer(record.explanation):
        raise ValueError(f"explanation for {record.record_id} lacks the answer span")
    if not record.question.strip() or not record.question.strip().endswith("?"):
        raise ValueError(f"malformed question {record.question!r}")
    if record.passage_id != passage.generation_id:
        raise ValueError("record does not reference its passage")


def _qas_for_passage(
    passage: PassageRecord, llm: Gateway, cfg: DatagenConfig
) -> tuple[list[QaRecord], dict[str, int], int]:
    """Returns (accepted records, local rejection tallies, candidate count).

    Tallies stay local so worker threads never share mutable state."""
    records: list[QaRecord] = []
    tallies: dict[str, int] = {}
    candidates = 0

    def bump(key: str) -> None:
        tallies[key] = tallies.get(key, 0) + 1

    entities = extract_entities(passage, llm, cfg)
    for entity in entities:
        if len(records) >= cfg.max_qas_per_passage:
            bump("passages_at_cap")
            break
        candidates += 1
        if len(entity.strip().split()) > cfg.max_answer_words:
            bump("answers_too_long")
            continue
        try:
            question = generate_question(passage, entity, llm, cfg)
        except EmptyGeneration:
            bump("empty_questions")
            continue
        if not double_check(passage, question, entity, llm, cfg):
            bump("double_check_failed")
            continue
        try:
            explanation = generate_explanation(passage, question, entity, llm, cfg)
        except ExplanationRejected:
            bump("explanations_rejected")
            continue
        record = QaRecord(
            record_id=record_id_for(passage.generation_id, question, entity),
            question=question,
            answer=entity,
            passage_id=passage.generation_id,
            explanation=explanation,
            topic=passage.topic,
        )
        validate_record(record, passage, cfg)
        if any(r.record_id == record.record_id for r in records):
            continue
        records.append(record)
    return records, tallies, candidates


def build_dataset(
    manifest: Sequence[TopicSpec],
    llm: Gateway,
    cfg: DatagenConfig,
    *,
    dataset_path=None,
    passages_path=None,
) -> tuple[list[PoolEntry], RunReport]:
    """Run the full pipeline over a topic manifest.

    Per-item failures are tallied in the run report instead of aborting.
    When output paths are given, records append after the ones already on
    disk (by id), so interrupted runs resume without rewriting history.
    """
    if not manifest:
        raise ValueError("manifest is empty")
    names = [t.name for t in manifest]
    if len(set(names)) != len(names):
        raise ValueError("topic names must be unique")

    report = RunReport(topics=len(manifest))
    items: list[tuple[str, str]] = []
    for topic in manifest:
        try:
            examples = list_topic_examples(topic, llm, cfg)[: topic.target_example_count]
        except GenerationBudgetExhausted as exc:
            report.bump("examples_truncated_topics")
            report.item_errors.append(str(exc))
            examples = exc.partial
        report.examples += len(examples)
        items.extend((topic.name, example) for example in examples)

    def process(item: tuple[str, str]):
        topic_name, example = item
        try:
            passage = generate_passage(topic_name, example, llm, cfg)
        except EmptyGeneration:
            return None
        return passage, _qas_for_passage(passage, llm, cfg)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            outcomes = list(pool.map(process, items))
    else:
        outcomes = [process(item) for item in items]

    entries: list[PoolEntry] = []
    passages: list[PassageRecord] = []
    for (topic_name, example), outcome in zip(items, outcomes):
        if outcome is None:
            report.bump("empty_passages")
            report.item_errors.append(f"empty passage for ({topic_name!r}, {example!r})")
            continue
        passage, (records, tallies, candidates) = outcome
        passages.append(passage)
        report.passages += 1
        report.candidates += candidates
        for key, amount in tallies.items():
            report.bump(key, amount)
        entries.extend(PoolEntry(record=r, passage=passage) for r in records)
    report.records = len(entries)

    if dataset_path is not None:
        append_dataset_file(dataset_path, entries)
    if passages_path is not None:
        append_passages_file(passages_path, passages)
    return entries, report


# -- persistence ------------------------------------------------------------


def entry_to_line(entry: PoolEntry) -> str:
    return json.dumps(
        {
            "record_id": entry.record.record_id,
            "topic": entry.record.topic,
            "example": entry.passage.example,
            "passage": entry.passage.passage,
            "question": entry.record.question,
            "answer": entry.record.answer,
            "explanation": entry.record.explanation,
        },
        ensure_ascii=False,
    )


def append_dataset_file(path, entries: Sequence[PoolEntry]) -> int:
    """Append records not already present; returns how many were written."""
    path = Path(path)
    existing = {e.record.record_id for e in load_dataset_file(path)} if path.exists() else set()
    written = 0
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        for entry in entries:
            if entry.record.record_id in existing:
                continue
            fh.write(entry_to_line(entry) + "\n")
            written += 1
    return written


def append_passages_file(path, passages: Sequence[PassageRecord]) -> int:
    path = Path(path)
    existing: set[str] = set()
    if path.exists():
        with open(path, encoding="utf-8") as fh:
            existing = {json.loads(line)["passage_id"] for line in fh if line.strip()}
    written = 0
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        for p in passages:
            if p.generation_id in existing:
                continue
            fh.write(
                json.dumps(
                    {
                        "passage_id": p.generation_id,
                        "topic": p.topic,
                        "example": p.example,
                        "passage": p.passage,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )
            written += 1
    return written


def load_dataset_file(path) -> list[PoolEntry]:
    entries: list[PoolEntry] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            passage = PassageRecord(
                topic=rec["topic"],
                example=rec["example"],
                passage=rec["passage"],
                generation_id=passage_id_for(rec["topic"], rec["example"]),
            )
            record = QaRecord(
                record_id=rec["record_id"],
                question=rec["question"],
                answer=rec["answer"],
                passage_id=passage.generation_id,
                explanation=rec["explanation"],
                topic=rec["topic"],
            )
            entries.append(PoolEntry(record=record, passage=passage))
    return entries


def load_manifest(path) -> list[TopicSpec]:
    """Topic manifest file: {"topics": [{"name": ..., "target_example_count": ...}]}."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    topics = [
        TopicSpec(name=t["name"], target_example_count=int(t["target_example_count"]))
        for t in data["topics"]
    ]
    for t in topics:
        t.validate()
    names = [t.name for t in topics]
    if len(set(names)) != len(names):
        raise ValueError(f"{path}: duplicate topic names")
    return topics


_DEFAULT_TOPICS = (
    "countries",
    "books",
    "tourist attractions",
    "movies or TV series",
    "actors or actresses",
    "historical events",
    "famous scientists",
    "musicians or bands",
    "paintings or sculptures",
    "rivers",
    "mountains",
    "cities",
    "animals",
    "plants",
    "sports",
    "athletes",
    "inventions",
    "companies",
    "universities",
    "political leaders",
    "wars or battles",
    "languages",
    "foods or dishes",
    "festivals or holidays",
    "landmark buildings",
    "novels' characters",
    "chemical elements",
    "planets or moons",
    "board or video games",
)


def default_manifest(examples_per_topic: int = 100) -> list[TopicSpec]:
    """29 topics: the three canonical ones plus 26 general-knowledge fillers."""
    return [TopicSpec(name, examples_per_topic) for name in _DEFAULT_TOPICS]


def write_manifest(path, topics: Sequence[TopicSpec]) -> None:
    payload = {
        "topics": [
            {"name": t.name, "target_example_count": t.target_example_count} for t in topics
        ]
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=1), encoding="utf-8")
