"""One-shot generator for tests/data/golden_records.jsonl.

Run from the repo root: python3 tests/gen_golden_fixture.py
The output is checked in and treated as frozen; regenerate only if the
record schema itself changes.
"""

import random
from pathlib import Path

from conftest import make_record

from cotforge.records import serialize_record

DOMAINS = ("math", "code", "science", "other")
DIFFS = (None, "easy", "medium", "hard")


def main():
    rng = random.Random(20250824)
    lines = []
    for i in range(50):
        domain = DOMAINS[i % 4]
        difficulty = DIFFS[rng.randrange(4)]
        verified = rng.choice(["unverified", "kept", "discarded"])
        scored = verified == "kept" and rng.random() < 0.7
        lineage = ["generated"]
        if difficulty is not None:
            lineage.append("difficulty_scored")
        rewritten = difficulty in ("easy", "hard") and rng.random() < 0.5
        if rewritten:
            lineage.append("rewritten")
        if verified != "unverified":
            lineage.append("verified")
        rv = cd = None
        if scored:
            rv = rng.randrange(10) / 9.0
            cd = rng.randrange(10) / 9.0
            lineage += ["rv_scored", "cd_scored"]
        reasoning = " ".join(f"step{j}" for j in range(rng.randrange(3, 40)))
        record = make_record(
            rid=f"gp{i:03d}::teacher-{i % 3}::t{0.2 * (i % 5):g}::0",
            problem_id=f"gp{i:03d}",
            task_domain=domain,
            prompt=f"Golden problem number {i}?",
            reference_answer=str(i * 3) if rng.random() < 0.8 else None,
            teacher_id=f"teacher-{i % 3}",
            temperature=0.2 * (i % 5),
            reasoning=reasoning,
            final_answer=str(i * 3),
            difficulty=difficulty,
            rv=rv,
            cd=cd,
            verified=verified,
            rewritten=rewritten,
            lineage=lineage,
        )
        lines.append(serialize_record(record))
    out = Path(__file__).parent / "data" / "golden_records.jsonl"
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} records to {out}")


if __name__ == "__main__":
    main()
