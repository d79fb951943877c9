"""Task-aware rebalancing, target-aware subset selection, and curriculum manifests.

All sampling is seeded and without replacement; records are canonically
ordered by record id before any random draw so that identical inputs and
seeds always produce identical manifests (and identical content hashes).
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .records import CoTRecord, DIFFICULTIES, StudentProfile


log = logging.getLogger(__name__)


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetManifest:
    """Deterministic, hash-stamped description of one sampled training set."""

    record_ids: tuple[str, ...]
    counts_per_domain: dict[str, int]
    seed: int
    content_hash: str
    shard_files: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "content_hash": self.content_hash,
            "counts_per_domain": dict(sorted(self.counts_per_domain.items())),
            "record_ids": list(self.record_ids),
            "shard_files": list(self.shard_files),
        }


@dataclass(frozen=True)
class CurriculumPhase:
    phase_index: int
    difficulty_filter: frozenset[str]
    epochs: int
    manifest: DatasetManifest

    def to_dict(self) -> dict:
        d = self.manifest.to_dict()
        d["phase"] = self.phase_index
        d["difficulty_filter"] = sorted(self.difficulty_filter)
        d["epochs"] = self.epochs
        return d


# Phase 1 trains on medium examples for three epochs before moving to hard.
DEFAULT_CURRICULUM: tuple[tuple[frozenset[str], int], ...] = (
    (frozenset({"medium"}), 3),
    (frozenset({"hard"}), 1),
)


def content_hash_for_ids(ids: Sequence[str]) -> str:
    canon = "\n".join(sorted(ids))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def build_manifest(records: Sequence[CoTRecord], seed: int,
                   shard_files: Sequence[str] = ()) -> DatasetManifest:
    ids = sorted(r.record_id for r in records)
    counts: dict[str, int] = defaultdict(int)
    for r in records:
        counts[r.problem.task_domain] += 1
    return DatasetManifest(
        record_ids=tuple(ids),
        counts_per_domain=dict(counts),
        seed=seed,
        content_hash=content_hash_for_ids(ids),
        shard_files=tuple(shard_files),
    )


def _sorted_by_id(records: Iterable[CoTRecord]) -> list[CoTRecord]:
    return sorted(records, key=lambda r: r.record_id)


def task_rebalance(records: Sequence[CoTRecord], policy: str = "uniform_min",
                   quota: Optional[dict[str, int]] = None,
                   seed: int = 0) -> list[CoTRecord]:
    """Downsample each task domain to balance the distribution.

    uniform_min: every domain is downsampled to the smallest domain count.
    quota: each domain is downsampled to min(quota[domain], available);
    quota keys for absent domains are ignored with a warning.
    """
    if not records:
        raise SamplerError("task_rebalance: empty input")
    by_domain: dict[str, list[CoTRecord]] = defaultdict(list)
    for r in records:
        by_domain[r.problem.task_domain].append(r)

    if policy == "uniform_min":
        target = {d: min(len(v) for v in by_domain.values()) for d in by_domain}
    elif policy == "quota":
        if quota is None:
            raise SamplerError("task_rebalance: quota policy requires a quota map")
        missing = [d for d in by_domain if d not in quota]
        if missing:
            raise SamplerError(f"task_rebalance: quota map missing domains {missing}")
        extra = [d for d in quota if d not in by_domain]
        if extra:
            log.warning("task_rebalance: quota names absent domains %s, ignored", extra)
        target = {d: min(quota[d], len(by_domain[d])) for d in by_domain}
    else:
        raise SamplerError(f"task_rebalance: unknown policy {policy!r}")

    rng = random.Random(seed)
    kept: list[CoTRecord] = []
    for domain in sorted(by_domain):
        pool = _sorted_by_id(by_domain[domain])
        kept.extend(rng.sample(pool, target[domain]))
    return _sorted_by_id(kept)


def window_occupancy(records: Sequence[CoTRecord], bins: int = 10) -> dict[str, list[int]]:
    """Histogram of rv and cd scores, used in empty-window error reports."""
    hist = {"rv": [0] * bins, "cd": [0] * bins}
    for r in records:
        for key, v in (("rv", r.annotations.rv), ("cd", r.annotations.cd)):
            if v is not None:
                hist[key][min(int(v * bins), bins - 1)] += 1
    return hist


def target_aware_sample(records: Sequence[CoTRecord], profile: StudentProfile,
                        seed: int = 0) -> DatasetManifest:
    """Select a training subset matched to one student profile.

    Keeps records whose cd and rv fall inside the profile's closed windows,
    then, if over budget, selects per-problem-first: at most one CoT per
    problem is taken before any problem contributes a second, maximizing
    problem diversity under the size cap. Selection is seeded-uniform.
    """
    for r in records:
        if r.annotations.verified != "kept":
            raise SamplerError(f"target_aware_sample: record {r.record_id} is not verified=kept")
        if r.annotations.rv is None or r.annotations.cd is None:
            raise SamplerError(f"target_aware_sample: record {r.record_id} lacks rv/cd scores")

    cd_lo, cd_hi = profile.cd_window
    rv_lo, rv_hi = profile.rv_window
    in_window = [
        r for r in records
        if cd_lo <= r.annotations.cd <= cd_hi and rv_lo <= r.annotations.rv <= rv_hi
    ]
    if not in_window:
        hist = window_occupancy(records)
        raise SamplerError(
            f"target_aware_sample: no records inside windows "
            f"cd={profile.cd_window}, rv={profile.rv_window}; occupancy={hist}"
        )

    if len(in_window) <= profile.target_size:
        return build_manifest(in_window, seed)

    rng = random.Random(seed)
    by_problem: dict[str, list[CoTRecord]] = defaultdict(list)
    for r in _sorted_by_id(in_window):
        by_problem[r.problem.id].append(r)
    for pool in by_problem.values():
        rng.shuffle(pool)

    # Round-robin over problems: every problem yields its first CoT before
    # any problem yields its second.
    selected: list[CoTRecord] = []
    rank = 0
    while len(selected) < profile.target_size:
        tier = [pool[rank] for pool in (by_problem[pid] for pid in sorted(by_problem))
                if rank < len(pool)]
        if not tier:
            break
        if len(selected) + len(tier) <= profile.target_size:
            selected.extend(tier)
        else:
            selected.extend(rng.sample(tier, profile.target_size - len(selected)))
        rank += 1
    return build_manifest(selected, seed)


def build_curriculum(records: Sequence[CoTRecord],
                     schedule: Optional[Sequence[tuple[Iterable[str], int]]] = None,
                     seed: int = 0) -> list[CurriculumPhase]:
    """Partition difficulty-annotated records into ordered training phases.

    Default schedule: medium for 3 epochs, then hard for 1. Each record lands
    in at most one phase (the first whose filter matches it).
    """
    if schedule is None:
        sched = list(DEFAULT_CURRICULUM)
    else:
        sched = [(frozenset(filt), epochs) for filt, epochs in schedule]
    if not sched:
        raise SamplerError("build_curriculum: empty schedule")
    for filt, epochs in sched:
        if not filt or not filt.issubset(set(DIFFICULTIES)):
            raise SamplerError(f"build_curriculum: bad difficulty filter {set(filt)}")
        if epochs < 1:
            raise SamplerError("build_curriculum: epochs must be >= 1")

    claimed: set[str] = set()
    phases: list[CurriculumPhase] = []
    for i, (filt, epochs) in enumerate(sched, start=1):
        matching = [
            r for r in records
            if r.annotations.difficulty in filt and r.record_id not in claimed
        ]
        if not matching:
            raise SamplerError(f"build_curriculum: phase {i} filter {sorted(filt)} matches no records")
        claimed.update(r.record_id for r in matching)
        phases.append(CurriculumPhase(
            phase_index=i,
            difficulty_filter=filt,
            epochs=epochs,
            manifest=build_manifest(matching, seed),
        ))
    return phases


def length_report(records: Sequence[CoTRecord], bucket_key: str = "task_domain") -> dict[str, float]:
    """Mean whitespace token count of the reasoning text per bucket, 2-decimal.

    bucket_key is "task_domain", "difficulty", or "teacher_id". Empty buckets
    are simply absent from the table.
    """
    getters = {
        "task_domain": lambda r: r.problem.task_domain,
        "difficulty": lambda r: r.annotations.difficulty,
        "teacher_id": lambda r: r.draft.teacher_id,
    }
    if bucket_key not in getters:
        raise SamplerError(f"length_report: unknown bucket key {bucket_key!r}")
    get = getters[bucket_key]
    sums: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for r in records:
        key = get(r)
        if key is None:
            continue
        acc = sums[key]
        acc[0] += r.draft.token_count
        acc[1] += 1
    return {k: round(total / n, 2) for k, (total, n) in sorted(sums.items())}


def write_manifest(path, manifest_dict: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest_dict, f, indent=2, sort_keys=True)
        f.write("\n")
