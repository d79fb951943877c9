"""LLM-based CoT processors: generation, difficulty scoring, rewriting,
answer verification, and RV/CD scoring.

All processors are stateless workers over immutable records and go through
the teacher gateway for every model call, so they run identically against
real endpoints and the scripted mock server. Each stage appends its name to
the record's lineage; re-applying a stage to an already-processed record is
a no-op that makes no model calls.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Optional, Sequence

from .errors import ContractError
from .gateway import ChatRequest, GatewayPool, GatewayTransportError
from .prompts import JudgePromptSet
from .records import Annotations, CoTDraft, CoTRecord, Problem, count_tokens

log = logging.getLogger(__name__)

DIGIT_VOCAB = tuple(str(i) for i in range(10))

# Extra attempts after the first when a judge reply cannot be parsed.
REASK_BUDGET = 2


@dataclass(frozen=True)
class VerifyOutcome:
    decision: str  # kept | discarded
    method: str  # exact | numeric | judge
    detail: str = ""


def parse_judge_label(text: str, vocabulary: Sequence[str]) -> Optional[str]:
    """Return the unique vocabulary label in the reply, or None.

    Matching is case-insensitive on word boundaries; zero or multiple
    distinct matches give None (ambiguous replies are re-asked, not guessed).
    """
    if not vocabulary:
        raise ContractError("parse_judge_label: empty vocabulary")
    found = []
    for label in vocabulary:
        # Word-boundary match; a digit label must not match inside a decimal
        # like "0.5".
        pattern = rf"(?<!\w)(?<!\d\.){re.escape(label)}(?!\w)(?!\.\d)"
        if re.search(pattern, text, flags=re.IGNORECASE):
            found.append(label)
    return found[0] if len(found) == 1 else None


_BOXED = re.compile(r"\\boxed\{([^{}]*)\}")
_ANSWER_LINE = re.compile(r"(?:final answer|answer)\s*[:=]\s*(.+)", re.IGNORECASE)


def extract_final_answer(reply: str) -> str:
    """Pull the final answer out of a teacher generation reply.

    Preference order: last boxed expression, last "Answer:" line, last
    non-empty line.
    """
    boxed = _BOXED.findall(reply)
    if boxed:
        return boxed[-1].strip()
    marked = _ANSWER_LINE.findall(reply)
    if marked:
        return marked[-1].strip()
    lines = [ln.strip() for ln in reply.splitlines() if ln.strip()]
    return lines[-1] if lines else ""


def _strip_numeric_noise(s: str) -> str:
    return s.strip().strip("$").replace(",", "").replace(" ", "")


def parse_numeric(answer: str) -> Optional[Fraction]:
    """Parse an answer string as an exact rational, unwrapping any boxed
    expression first. Returns None for non-numeric answers."""
    boxed = _BOXED.findall(answer)
    candidate = _strip_numeric_noise(boxed[-1] if boxed else answer)
    if not candidate:
        return None
    try:
        return Fraction(candidate)
    except (ValueError, ZeroDivisionError):
        return None


def _normalize_text(s: str) -> str:
    boxed = _BOXED.findall(s)
    if boxed:
        s = boxed[-1]
    return " ".join(s.strip().lower().split())


class CoTProcessors:
    """Processor bundle bound to one gateway and one prompt-set version."""

    def __init__(self, gateway: GatewayPool, prompts: Optional[JudgePromptSet] = None,
                 judge_teacher: Optional[str] = None, judge_enabled: bool = True,
                 max_output_tokens: int = 4096):
        self.gateway = gateway
        self.prompts = prompts or JudgePromptSet.load()
        self.judge_teacher = judge_teacher
        self.judge_enabled = judge_enabled
        self.max_output_tokens = max_output_tokens

    # -- plumbing ----------------------------------------------------------

    def _judge_for(self, record: CoTRecord) -> str:
        # Default judge is the teacher that generated the record.
        return self.judge_teacher or record.draft.teacher_id

    def _ask(self, teacher_id: str, prompt: str, temperature: float = 0.0) -> str:
        result = self.gateway.submit_chat(ChatRequest(
            teacher_id=teacher_id,
            messages=({"role": "user", "content": prompt},),
            temperature=temperature,
            max_output_tokens=self.max_output_tokens,
        ))
        return result.content

    def _ask_label(self, teacher_id: str, prompt: str,
                   vocabulary: Sequence[str]) -> Optional[str]:
        for _ in range(1 + REASK_BUDGET):
            reply = self._ask(teacher_id, prompt)
            label = parse_judge_label(reply, vocabulary)
            if label is not None:
                return label
        return None

    # -- generation --------------------------------------------------------

    def generate_cots(self, problem: Problem, teachers: Sequence[str],
                      temperatures: Sequence[float], per_combo: int = 1) -> list[CoTRecord]:
        """Generate candidate CoTs across all (teacher, temperature) combos.

        Failures for one combo are logged and skipped; the batch never aborts.
        """
        if not temperatures:
            raise ContractError("generate_cots: temperatures must be non-empty")
        if per_combo < 1:
            raise ContractError("generate_cots: per_combo must be >= 1")
        records: list[CoTRecord] = []
        for teacher in teachers:
            for temp in temperatures:
                for i in range(per_combo):
                    try:
                        reply = self._ask(teacher, problem.prompt, temperature=temp)
                    except (GatewayTransportError, ContractError) as e:
                        log.warning("generation failed for %s teacher=%s temp=%s: %s",
                                    problem.id, teacher, temp, e)
                        continue
                    if not reply.strip():
                        log.warning("empty generation for %s teacher=%s temp=%s",
                                    problem.id, teacher, temp)
                        continue
                    records.append(CoTRecord(
                        record_id=f"{problem.id}::{teacher}::t{temp:g}::{i}",
                        problem=problem,
                        draft=CoTDraft(
                            problem_id=problem.id,
                            teacher_id=teacher,
                            temperature=temp,
                            reasoning_text=reply,
                            final_answer=extract_final_answer(reply),
                            token_count=count_tokens(reply),
                        ),
                        annotations=Annotations(),
                        lineage=("generated",),
                    ))
        if not records:
            log.warning("generate_cots: zero successful generations for %s", problem.id)
        return records

    # -- difficulty --------------------------------------------------------

    def score_difficulty(self, record: CoTRecord) -> CoTRecord:
        """Label the record easy/medium/hard via the judge; idempotent."""
        if record.annotations.difficulty is not None and record.has_stage("difficulty_scored"):
            return record
        prompt = self.prompts.render("difficulty", record)
        label = self._ask_label(self._judge_for(record), prompt, ("easy", "medium", "hard"))
        if label is None:
            # Medium is the curriculum's base tier, the least harmful default.
            log.warning("difficulty unparsable for %s, defaulting to medium", record.record_id)
            label = "medium"
        return record.with_annotations(difficulty=label).with_stage("difficulty_scored")

    # -- rewrite -----------------------------------------------------------

    def rewrite_cot(self, record: CoTRecord) -> CoTRecord:
        """One-pass rewrite; only easy and hard records are eligible."""
        if record.annotations.difficulty not in ("easy", "hard"):
            raise ContractError(
                f"rewrite_cot: record {record.record_id} has difficulty "
                f"{record.annotations.difficulty!r}, only easy/hard are rewritten"
            )
        prompt = self.prompts.render("rewrite", record)
        try:
            reply = self._ask(self._judge_for(record), prompt)
        except GatewayTransportError as e:
            log.warning("rewrite failed for %s, passing through: %s", record.record_id, e)
            return record
        if not reply.strip():
            log.warning("empty rewrite for %s, passing through", record.record_id)
            return record
        new_draft = replace(record.draft, reasoning_text=reply, token_count=count_tokens(reply))
        return replace(
            record, draft=new_draft,
            annotations=replace(record.annotations, rewritten=True),
            lineage=record.lineage + ("rewritten",),
        )

    # -- verification ------------------------------------------------------

    def verify_cot(self, record: CoTRecord) -> tuple[CoTRecord, Optional[VerifyOutcome]]:
        """Keep or discard via exact match, numeric equivalence, then judge.

        Without a reference answer and with the judge tier disabled the
        record stays unverified (with a warning).
        """
        if record.has_stage("verified"):
            return record, None
        reference = record.problem.reference_answer
        answer = record.draft.final_answer

        outcome: Optional[VerifyOutcome] = None
        if reference is not None:
            if _normalize_text(answer) == _normalize_text(reference):
                outcome = VerifyOutcome("kept", "exact")
            else:
                a, b = parse_numeric(answer), parse_numeric(reference)
                if a is not None and b is not None:
                    if math.isclose(float(a), float(b), rel_tol=1e-9, abs_tol=1e-12):
                        outcome = VerifyOutcome("kept", "numeric")
                    else:
                        outcome = VerifyOutcome(
                            "discarded", "numeric", f"{float(a)} != {float(b)}")

        if outcome is None and self.judge_enabled:
            prompt = self.prompts.render("verify", record)
            try:
                label = self._ask_label(self._judge_for(record), prompt,
                                        ("equivalent", "different"))
            except GatewayTransportError as e:
                log.warning("judge verification failed for %s: %s", record.record_id, e)
                label = None
            if label == "equivalent":
                outcome = VerifyOutcome("kept", "judge")
            elif label == "different":
                outcome = VerifyOutcome("discarded", "judge", "judge ruled different")

        if outcome is None:
            log.warning("record %s left unverified (no reference, judge unavailable)",
                        record.record_id)
            return record, None
        return (
            record.with_annotations(verified=outcome.decision).with_stage("verified"),
            outcome,
        )

    # -- RV / CD scoring ---------------------------------------------------

    def _score_axis(self, record: CoTRecord, axis: str) -> tuple[CoTRecord, bool]:
        stage = f"{axis}_scored"
        if getattr(record.annotations, axis) is not None and record.has_stage(stage):
            return record, True
        if record.annotations.verified != "kept":
            raise ContractError(
                f"score_{axis}: record {record.record_id} is not verified=kept")
        prompt = self.prompts.render(axis, record)
        label = self._ask_label(self._judge_for(record), prompt, DIGIT_VOCAB)
        if label is None:
            log.warning("%s grade unparsable for %s, quarantined", axis, record.record_id)
            return record, False
        score = int(label) / 9.0
        return record.with_annotations(**{axis: score}).with_stage(stage), True

    def score_rv(self, record: CoTRecord) -> tuple[CoTRecord, bool]:
        """Grade reasoning verbosity on 0..9 and store raw/9; False means
        the judge reply never parsed and the record is quarantined."""
        return self._score_axis(record, "rv")

    def score_cd(self, record: CoTRecord) -> tuple[CoTRecord, bool]:
        """Grade cognitive difficulty on 0..9 and store raw/9."""
        return self._score_axis(record, "cd")
