"""Domain types and the canonical JSONL record format shared by all pipeline stages.

Every stage reads and writes `CoTRecord` values as one JSON object per line.
Serialization is canonical: alphabetical key order, optional fields omitted
(never null), no trailing whitespace. This keeps content hashes stable across
re-runs, which the manifest and checkpoint machinery depend on.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

TASK_DOMAINS = ("math", "code", "science", "other")
DIFFICULTIES = ("easy", "medium", "hard")
VERIFIED_STATES = ("unverified", "kept", "discarded")

# Closed vocabulary of pipeline stage names, in dependency order.
STAGE_NAMES = (
    "generated",
    "difficulty_scored",
    "rewritten",
    "verified",
    "rv_scored",
    "cd_scored",
    "sampled",
)


class RecordParseError(ValueError):
    """Malformed JSON on a record line; carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int = -1):
        super().__init__(message)
        self.offset = offset


class RecordValidationError(ValueError):
    """A structurally valid record that violates a type invariant."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def count_tokens(text: str) -> int:
    """Whitespace-delimited token count, the declared tokenization rule."""
    return len(text.split())


@dataclass(frozen=True)
class Problem:
    id: str
    task_domain: str
    prompt: str
    source: str
    reference_answer: Optional[str] = None


@dataclass(frozen=True)
class CoTDraft:
    problem_id: str
    teacher_id: str
    temperature: float
    reasoning_text: str
    final_answer: str
    token_count: int


@dataclass(frozen=True)
class Annotations:
    difficulty: Optional[str] = None
    rv: Optional[float] = None
    cd: Optional[float] = None
    verified: str = "unverified"
    rewritten: bool = False


@dataclass(frozen=True)
class CoTRecord:
    record_id: str
    problem: Problem
    draft: CoTDraft
    annotations: Annotations = field(default_factory=Annotations)
    lineage: tuple[str, ...] = ("generated",)

    def with_annotations(self, **changes) -> "CoTRecord":
        return replace(self, annotations=replace(self.annotations, **changes))

    def with_stage(self, stage: str) -> "CoTRecord":
        if stage not in STAGE_NAMES:
            raise ValueError(f"unknown stage name: {stage}")
        return replace(self, lineage=self.lineage + (stage,))

    def has_stage(self, stage: str) -> bool:
        return stage in self.lineage


@dataclass(frozen=True)
class StudentProfile:
    """A target student model's score windows and training-set size budget."""

    name: str
    cd_window: tuple[float, float]
    rv_window: tuple[float, float]
    target_size: int

    def __post_init__(self):
        for label, (lo, hi) in (("cd_window", self.cd_window), ("rv_window", self.rv_window)):
            if not (0.0 <= lo <= hi <= 1.0):
                raise ValueError(f"{label} must satisfy 0 <= low <= high <= 1, got ({lo}, {hi})")
        if self.target_size <= 0:
            raise ValueError(f"target_size must be positive, got {self.target_size}")


def _in_unit_interval(v: float) -> bool:
    return isinstance(v, (int, float)) and v == v and 0.0 <= v <= 1.0


def validate_record(record: CoTRecord) -> list[str]:
    """Return all invariant violations, each naming the field and rule.

    Empty list iff the record is valid. Violations are return values, never
    exceptions, so callers can collect them across a whole shard.
    """
    out: list[str] = []
    p, d, a = record.problem, record.draft, record.annotations
    if not record.record_id:
        out.append("record_id is empty")
    if not p.id:
        out.append("problem.id is empty")
    if p.task_domain not in TASK_DOMAINS:
        out.append(f"problem.task_domain not in {set(TASK_DOMAINS)}")
    if d.problem_id != p.id:
        out.append("draft.problem_id does not match problem.id")
    if d.temperature < 0:
        out.append("draft.temperature is negative")
    if not d.reasoning_text:
        out.append("draft.reasoning_text is empty")
    if d.token_count < 0:
        out.append("draft.token_count is negative")
    elif d.token_count != count_tokens(d.reasoning_text):
        out.append("draft.token_count does not match whitespace token count")
    if a.difficulty is not None and a.difficulty not in DIFFICULTIES:
        out.append(f"annotations.difficulty not in {set(DIFFICULTIES)}")
    if a.rv is not None and not _in_unit_interval(a.rv):
        out.append("rv out of [0,1]")
    if a.cd is not None and not _in_unit_interval(a.cd):
        out.append("cd out of [0,1]")
    if a.verified not in VERIFIED_STATES:
        out.append(f"annotations.verified not in {set(VERIFIED_STATES)}")
    if not record.lineage or record.lineage[0] != "generated":
        out.append('lineage must begin with "generated"')
    for stage in record.lineage:
        if stage not in STAGE_NAMES:
            out.append(f"lineage contains unknown stage {stage!r}")
    if a.rewritten and "rewritten" not in record.lineage:
        out.append('rewritten=true but "rewritten" missing from lineage')
    return out


def _problem_dict(p: Problem) -> dict:
    d = {"id": p.id, "task_domain": p.task_domain, "prompt": p.prompt, "source": p.source}
    if p.reference_answer is not None:
        d["reference_answer"] = p.reference_answer
    return d


def _annotations_dict(a: Annotations) -> dict:
    d: dict = {"verified": a.verified, "rewritten": a.rewritten}
    if a.difficulty is not None:
        d["difficulty"] = a.difficulty
    if a.rv is not None:
        d["rv"] = a.rv
    if a.cd is not None:
        d["cd"] = a.cd
    return d


def serialize_record(record: CoTRecord) -> str:
    """Canonical single-line JSON for a validated record.

    Alphabetical key order, absent optionals omitted, UTF-8 with non-ASCII
    preserved, no trailing whitespace. Equal records give byte-equal output.
    """
    violations = validate_record(record)
    if violations:
        raise RecordValidationError(violations)
    obj = {
        "record_id": record.record_id,
        "problem": _problem_dict(record.problem),
        "draft": {
            "problem_id": record.draft.problem_id,
            "teacher_id": record.draft.teacher_id,
            "temperature": record.draft.temperature,
            "reasoning_text": record.draft.reasoning_text,
            "final_answer": record.draft.final_answer,
            "token_count": record.draft.token_count,
        },
        "annotations": _annotations_dict(record.annotations),
        "lineage": list(record.lineage),
    }
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def parse_record(line: str) -> CoTRecord:
    """Parse one JSONL line into a validated CoTRecord.

    Raises RecordParseError (with byte offset) for malformed JSON and
    RecordValidationError for invariant violations.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise RecordParseError(f"malformed JSON at byte {e.pos}: {e.msg}", offset=e.pos) from e
    if not isinstance(obj, dict):
        raise RecordParseError("record line is not a JSON object", offset=0)
    try:
        p = obj["problem"]
        d = obj["draft"]
        a = obj.get("annotations", {})
        record = CoTRecord(
            record_id=obj.get("record_id", ""),
            problem=Problem(
                id=p["id"],
                task_domain=p["task_domain"],
                prompt=p["prompt"],
                source=p["source"],
                reference_answer=p.get("reference_answer"),
            ),
            draft=CoTDraft(
                problem_id=d["problem_id"],
                teacher_id=d["teacher_id"],
                temperature=float(d["temperature"]),
                reasoning_text=d["reasoning_text"],
                final_answer=d["final_answer"],
                token_count=int(d["token_count"]),
            ),
            annotations=Annotations(
                difficulty=a.get("difficulty"),
                rv=a.get("rv"),
                cd=a.get("cd"),
                verified=a.get("verified", "unverified"),
                rewritten=bool(a.get("rewritten", False)),
            ),
            lineage=tuple(obj.get("lineage", ())),
        )
    except (KeyError, TypeError) as e:
        raise RecordValidationError([f"missing or malformed field: {e}"]) from e
    violations = validate_record(record)
    if violations:
        raise RecordValidationError(violations)
    return record


def read_records(path) -> list[CoTRecord]:
    """Read a whole JSONL shard, skipping blank lines."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip("\n")
            if not line:
                continue
            try:
                out.append(parse_record(line))
            except RecordValidationError as e:
                raise RecordValidationError([f"{path}:{lineno}: {v}" for v in e.violations]) from e
            except RecordParseError as e:
                raise RecordParseError(f"{path}:{lineno}: {e}", offset=e.offset) from e
    return out


def write_records(path, records) -> None:
    """Write records as canonical JSONL, one per line."""
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(serialize_record(r))
            f.write("\n")


def parse_problem(line: str) -> Problem:
    """Parse a problem-only JSONL line (pipeline input format)."""
    obj = json.loads(line)
    p = Problem(
        id=obj["id"],
        task_domain=obj["task_domain"],
        prompt=obj["prompt"],
        source=obj.get("source", "unknown"),
        reference_answer=obj.get("reference_answer"),
    )
    if not p.id:
        raise RecordValidationError(["problem.id is empty"])
    if p.task_domain not in TASK_DOMAINS:
        raise RecordValidationError([f"problem.task_domain not in {set(TASK_DOMAINS)}"])
    return p


def read_problems(path) -> list[Problem]:
    problems = []
    seen = set()
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            p = parse_problem(line)
            if p.id in seen:
                raise RecordValidationError([f"duplicate problem id {p.id!r}"])
            seen.add(p.id)
            problems.append(p)
    return problems
