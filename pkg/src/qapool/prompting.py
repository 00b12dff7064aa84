"""Prompt assembly for the nine demonstration formats, inference against a
completion backend, and prediction parsing. Rendering and parsing share one
layout table so they cannot drift apart."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

from .errors import QapoolError
from .gateway import CompletionRequest, Gateway

logger = logging.getLogger(__name__)

ONE_ITERATION_LAYOUTS = ("QA", "QAE", "QAP", "QEA", "QPA", "QAEP", "QAPE")
TWO_ITERATION_MODES = {"two_P": ("QP", "PQA"), "two_E": ("QE", "EQA")}
FORMAT_IDS = ONE_ITERATION_LAYOUTS + tuple(TWO_ITERATION_MODES)

_LABELS = {"Q": "Question", "A": "Answer", "E": "Explanation", "P": "Passage"}
_SENTENCE_END = (".", "?", "!")
_STOP = "\n\n"

DEFAULT_ANSWER_MAX_TOKENS = 100
DEFAULT_INTERMEDIATE_MAX_TOKENS = 300


class ParseFailure(QapoolError):
    """A completion did not yield an answer under the layout's parse rule."""


@dataclass(frozen=True)
class PromptFormat:
    demo_layout: str
    iterations: str = "one"  # "one" | "two_P" | "two_E"

    def __post_init__(self):
        if self.iterations == "one":
            if self.demo_layout not in ONE_ITERATION_LAYOUTS:
                raise ValueError(f"unknown one-iteration layout {self.demo_layout!r}")
        elif self.iterations in TWO_ITERATION_MODES:
            fixed = TWO_ITERATION_MODES[self.iterations][1]
            if self.demo_layout != fixed:
                raise ValueError(
                    f"{self.iterations} fixes the answer layout to {fixed!r}, got {self.demo_layout!r}"
                )
        else:
            raise ValueError(f"unknown iterations mode {self.iterations!r}")

    @property
    def format_id(self) -> str:
        return self.demo_layout if self.iterations == "one" else self.iterations

    @classmethod
    def parse(cls, format_id: str) -> "PromptFormat":
        fid = format_id.strip()
        if fid.upper() in ONE_ITERATION_LAYOUTS:
            return cls(demo_layout=fid.upper(), iterations="one")
        lowered = fid.lower()
        for mode, (_, answer_layout) in TWO_ITERATION_MODES.items():
            if lowered == mode.lower():
                return cls(demo_layout=answer_layout, iterations=mode)
        raise ValueError(f"unknown prompt format {format_id!r}; choose from {FORMAT_IDS}")


@dataclass(frozen=True)
class Demonstration:
    question: str
    answer: str
    explanation: str = ""
    passage: str = ""


@dataclass
class InferenceOutput:
    raw_text: str
    parsed_answer: str
    parsed_explanation: str | None
    demo_ids: list[str]
    format: PromptFormat
    parse_failure: bool = False
    prompts: tuple[str, ...] = ()
    intermediate_text: str | None = None


def _demo_value(demo: Demonstration, element: str) -> str:
    return {
        "Q": demo.question,
        "A": demo.answer,
        "E": demo.explanation,
        "P": demo.passage,
    }[element]


def _render_demo(layout: str, demo: Demonstration) -> str:
    lines = []
    elements = list(layout)
    i = 0
    while i < len(elements):
        element = elements[i]
        if element == "A":
            # the answer line absorbs every element after it ("answer then X")
            line = f"Answer: {_demo_value(demo, 'A')}"
            for trailing in elements[i + 1 :]:
                if not line.rstrip().endswith(_SENTENCE_END):
                    line += "."
                line += f" {_demo_value(demo, trailing)}"
            lines.append(line)
            break
        lines.append(f"{_LABELS[element]}: {_demo_value(demo, element)}")
        i += 1
    return "\n".join(lines) + _STOP


def _render_test_block(layout: str, question: str, preface: str | None = None) -> str:
    """The final block: any pre-question element, the question, then the cue
    label of the first element the model must produce."""
    q_at = layout.index("Q")
    lines = []
    for element in layout[:q_at]:
        if preface is None:
            raise ValueError(f"layout {layout!r} needs intermediate text before the question")
        lines.append(f"{_LABELS[element]}: {preface}")
    lines.append(f"Question: {question}")
    cue = layout[q_at + 1]
    return "\n".join(lines) + f"\n{_LABELS[cue]}:"


def _first_layout(fmt: PromptFormat) -> str:
    if fmt.iterations == "one":
        return fmt.demo_layout
    return TWO_ITERATION_MODES[fmt.iterations][0]


def assemble_prompt(demos: Sequence[Demonstration], question: str, fmt: PromptFormat) -> str:
    """Render the (first) inference prompt; byte-deterministic."""
    if not demos:
        raise ValueError("at least one demonstration is required")
    layout = _first_layout(fmt)
    body = "".join(_render_demo(layout, d) for d in demos)
    return body + _render_test_block(layout, question)


def assemble_followup_prompt(
    demos: Sequence[Demonstration], question: str, intermediate: str, fmt: PromptFormat
) -> str:
    """Render the second-iteration prompt with the first call's output."""
    if fmt.iterations not in TWO_ITERATION_MODES:
        raise ValueError("follow-up prompts exist only for two-iteration formats")
    if not demos:
        raise ValueError("at least one demonstration is required")
    layout = TWO_ITERATION_MODES[fmt.iterations][1]
    body = "".join(_render_demo(layout, d) for d in demos)
    return body + _render_test_block(layout, question, preface=intermediate)


def _strip_labels(text: str) -> str:
    # a parsed answer must never carry structural labels or the stop marker
    for label in ("Question:", "Answer:", "Explanation:", "Passage:"):
        idx = text.find(label)
        if idx == 0:
            return _strip_labels(text[len(label) :].lstrip())
        if idx > 0:
            text = text[:idx]
    return text.replace(_STOP, " ").strip()


def _split_answer_prefix(text: str) -> tuple[str, str]:
    text = text.strip()
    for i, ch in enumerate(text):
        if ch in _SENTENCE_END or ch == "\n":
            return text[:i], text[i + 1 :].strip()
    return text, ""


def parse_completion(layout: str, text: str) -> tuple[str, str | None, bool]:
    """Extract (answer, explanation-or-None, parse_failure) per layout."""
    stripped = text.strip()
    q_at = layout.index("Q")
    produced = layout[q_at + 1 :]

    if produced == "A":  # QA and both two-iteration answer calls
        answer = _strip_labels(stripped.split("\n", 1)[0])
        return answer, None, not answer
    if produced.startswith("A"):  # answer-then-X: QAE, QAP, QAEP, QAPE
        answer, remainder = _split_answer_prefix(stripped)
        answer = _strip_labels(answer)
        return answer, remainder or None, not answer
    # X-then-answer: QEA, QPA — the completion continues the cue, then the
    # model emits its own "Answer:" line
    marker = "Answer:"
    idx = stripped.find(marker)
    if idx == -1:
        return "", stripped or None, True
    rationale = stripped[:idx].strip()
    answer = _strip_labels(stripped[idx + len(marker) :].strip().split("\n", 1)[0])
    return answer, rationale or None, not answer


def postprocess_webq(prediction: str) -> str:
    """Keep only the first entity of a multi-entity prediction.

    Splits at the earliest ", " or " and ". Single entities whose names
    contain " and " (e.g. "Bonnie and Clyde") are a known false positive.
    """
    cut = len(prediction)
    for sep in (", ", " and "):
        idx = prediction.find(sep)
        if idx != -1:
            cut = min(cut, idx)
    return prediction[:cut].strip()


def infer(
    question: str,
    demos: Sequence[Demonstration],
    demo_ids: Sequence[str],
    fmt: PromptFormat,
    llm: Gateway,
    *,
    answer_max_tokens: int = DEFAULT_ANSWER_MAX_TOKENS,
    intermediate_max_tokens: int = DEFAULT_INTERMEDIATE_MAX_TOKENS,
    temperature: float = 0.0,
    strict: bool = False,
) -> InferenceOutput:
    """Run one- or two-iteration inference for a test question.

    One iteration issues a single completion bounded by the demo separator;
    two-iteration modes first elicit the intermediate passage/explanation,
    then feed it back in front of the question for the answer call.
    """
    stop = (_STOP,)
    first_prompt = assemble_prompt(demos, question, fmt)

    if fmt.iterations == "one":
        result = llm.complete(
            CompletionRequest(
                prompt=first_prompt,
                max_tokens=answer_max_tokens,
                temperature=temperature,
                stop_sequences=stop,
            )
        )
        answer, explanation, failed = parse_completion(fmt.demo_layout, result.text)
        if failed and strict:
            raise ParseFailure(f"no answer recovered from {result.text!r}")
        return InferenceOutput(
            raw_text=result.text,
            parsed_answer=answer,
            parsed_explanation=explanation,
            demo_ids=list(demo_ids),
            format=fmt,
            parse_failure=failed,
            prompts=(first_prompt,),
        )

    intermediate_result = llm.complete(
        CompletionRequest(
            prompt=first_prompt,
            max_tokens=intermediate_max_tokens if fmt.iterations == "two_P" else answer_max_tokens,
            temperature=temperature,
            stop_sequences=stop,
        )
    )
    intermediate = intermediate_result.text.strip()
    second_prompt = assemble_followup_prompt(demos, question, intermediate, fmt)
    result = llm.complete(
        CompletionRequest(
            prompt=second_prompt,
            max_tokens=answer_max_tokens,
            temperature=temperature,
            stop_sequences=stop,
        )
    )
    answer, _, failed = parse_completion(fmt.demo_layout, result.text)
    failed = failed or not intermediate
    if failed and strict:
        raise ParseFailure(f"no answer recovered from {result.text!r}")
    return InferenceOutput(
        raw_text=result.text,
        parsed_answer=answer,
        parsed_explanation=intermediate or None,
        demo_ids=list(demo_ids),
        format=fmt,
        parse_failure=failed,
        prompts=(first_prompt, second_prompt),
        intermediate_text=intermediate or None,
    )
