"""Versioned judge prompt templates.

Templates are plain-text files with {placeholder} syntax; the set is hashed
by content so stage reports can record exactly which prompt version produced
an annotation batch.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

from .records import CoTRecord

TEMPLATE_NAMES = ("difficulty", "rewrite", "verify", "rv", "cd")
DEFAULT_TEMPLATE_DIR = Path(__file__).parent / "prompt_templates"


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class JudgePromptSet:
    difficulty: str
    rewrite: str
    verify: str
    rv: str
    cd: str

    @classmethod
    def load(cls, directory=DEFAULT_TEMPLATE_DIR) -> "JudgePromptSet":
        directory = Path(directory)
        texts = {}
        for name in TEMPLATE_NAMES:
            path = directory / f"{name}.txt"
            if not path.exists():
                raise PromptError(f"missing prompt template {path}")
            texts[name] = path.read_text(encoding="utf-8")
        return cls(**texts)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for name in TEMPLATE_NAMES:
            h.update(name.encode())
            h.update(b"\x00")
            h.update(getattr(self, name).encode("utf-8"))
        return h.hexdigest()

    def render(self, name: str, record: CoTRecord) -> str:
        """Fill the named template from a record's fields."""
        template = getattr(self, name)
        try:
            return template.format(
                prompt=record.problem.prompt,
                reasoning=record.draft.reasoning_text,
                answer=record.draft.final_answer,
                reference=record.problem.reference_answer or "",
            )
        except (KeyError, IndexError) as e:
            raise PromptError(f"template {name!r} has unresolvable placeholder: {e}") from e
