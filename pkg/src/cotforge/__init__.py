"""cotforge: chain-of-thought distillation data pipeline.

Generates, scores, rewrites, verifies, and samples CoT training data via an
elastic pool of teacher endpoints, emits curriculum-ordered training
manifests, and provides the RV/CD reward-shaping math for GRPO-style RL.
"""

from .records import (
    Annotations,
    CoTDraft,
    CoTRecord,
    Problem,
    StudentProfile,
    parse_record,
    serialize_record,
    validate_record,
)
from .gateway import (
    ChatRequest,
    CompletionResult,
    GatewayPool,
    RetryPolicy,
    TeacherEndpoint,
)
from .processors import CoTProcessors, VerifyOutcome, parse_judge_label
from .rewards import (
    RewardBreakdown,
    RewardConfig,
    clip,
    group_advantages,
    pass_at_k,
    reward_cd,
    reward_rv,
    total_reward,
)
from .sampler import (
    CurriculumPhase,
    DatasetManifest,
    build_curriculum,
    length_report,
    target_aware_sample,
    task_rebalance,
)

__version__ = "0.1.0"

__all__ = [
    "Annotations", "CoTDraft", "CoTRecord", "Problem", "StudentProfile",
    "parse_record", "serialize_record", "validate_record",
    "ChatRequest", "CompletionResult", "GatewayPool", "RetryPolicy", "TeacherEndpoint",
    "CoTProcessors", "VerifyOutcome", "parse_judge_label",
    "RewardBreakdown", "RewardConfig", "clip", "group_advantages", "pass_at_k",
    "reward_cd", "reward_rv", "total_reward",
    "CurriculumPhase", "DatasetManifest", "build_curriculum", "length_report",
    "target_aware_sample", "task_rebalance",
]
