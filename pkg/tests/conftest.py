import pytest

from cotforge.mockserver import MockTeacherServer, Scenario
from cotforge.records import Annotations, CoTDraft, CoTRecord, Problem, count_tokens


def make_record(
    rid="p1::t1::t0.7::0",
    problem_id="p1",
    task_domain="math",
    prompt="What is 2+2?",
    reference_answer="4",
    teacher_id="t1",
    temperature=0.7,
    reasoning="Add 2 and 2 to get 4.",
    final_answer="4",
    difficulty=None,
    rv=None,
    cd=None,
    verified="unverified",
    rewritten=False,
    lineage=("generated",),
):
    return CoTRecord(
        record_id=rid,
        problem=Problem(
            id=problem_id,
            task_domain=task_domain,
            prompt=prompt,
            source="fixture",
            reference_answer=reference_answer,
        ),
        draft=CoTDraft(
            problem_id=problem_id,
            teacher_id=teacher_id,
            temperature=temperature,
            reasoning_text=reasoning,
            final_answer=final_answer,
            token_count=count_tokens(reasoning),
        ),
        annotations=Annotations(
            difficulty=difficulty, rv=rv, cd=cd, verified=verified, rewritten=rewritten
        ),
        lineage=tuple(lineage),
    )


@pytest.fixture
def mock_server_factory():
    """Start scripted mock servers; all stopped at test teardown."""
    servers = []

    def factory(spec: dict) -> MockTeacherServer:
        server = MockTeacherServer(Scenario(spec)).start()
        servers.append(server)
        return server

    yield factory
    for s in servers:
        s.stop()
