"""Stage orchestration: config loading, per-stage execution over JSONL shards,
checkpoint/resume, and end-to-end runs.

Every stage processes work units (problems or records), appends each finished
unit to a journal file as it completes, and finalizes its output shard with a
write-temp-then-rename so later stages never observe partial shards. A killed
stage resumes from the journal, skipping exactly the completed unit ids, so a
resumed run makes no duplicate teacher calls and produces byte-identical
outputs to a fresh run (outputs are canonically sorted before the final
write).
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import yaml

from .errors import ContractError
from .gateway import GatewayPool, RetryPolicy, TeacherEndpoint
from .processors import CoTProcessors
from .prompts import DEFAULT_TEMPLATE_DIR, JudgePromptSet
from .records import (
    CoTRecord,
    Problem,
    parse_record,
    read_problems,
    serialize_record,
)
from .rewards import RewardConfig
from .sampler import (
    SamplerError,
    StudentProfile,
    build_curriculum,
    length_report,
    target_aware_sample,
    task_rebalance,
    window_occupancy,
    write_manifest,
)

log = logging.getLogger(__name__)

STAGE_ORDER = ("generate", "difficulty", "rewrite", "verify", "rv", "cd", "sample", "curriculum")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A stage aborted; its journal and checkpoint remain resumable."""


@dataclass(frozen=True)
class GenerationConfig:
    teachers: tuple[str, ...]
    temperatures: tuple[float, ...]
    per_combo: int = 1


@dataclass(frozen=True)
class PipelineConfig:
    teachers: tuple[TeacherEndpoint, ...]
    generation: GenerationConfig
    workdir: Path
    problems: Path
    seed: int = 0
    prompts_dir: Path = DEFAULT_TEMPLATE_DIR
    judge_teacher: Optional[str] = None
    judge_enabled: bool = True
    concurrency: dict = field(default_factory=dict)  # stage name -> worker cap
    reward: RewardConfig = field(default_factory=RewardConfig)
    profiles: tuple[StudentProfile, ...] = ()
    schedule: Optional[tuple[tuple[frozenset[str], int], ...]] = None
    rebalance: Optional[dict] = None  # {"policy": ..., "quota": {...}}

    def stage_workers(self, stage: str) -> int:
        return int(self.concurrency.get(stage, 8))


_ENV_PATTERN = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def _interpolate_env(obj):
    if isinstance(obj, str):
        return _ENV_PATTERN.sub(lambda m: os.environ.get(m.group(1), ""), obj)
    if isinstance(obj, list):
        return [_interpolate_env(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _interpolate_env(v) for k, v in obj.items()}
    return obj


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} is not a mapping")
    raw = _interpolate_env(raw)
    base = path.parent

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else base / p

    try:
        teachers = tuple(
            TeacherEndpoint(
                teacher_id=t["teacher_id"],
                node_urls=tuple(t["node_urls"]),
                max_in_flight_per_node=int(t.get("max_in_flight_per_node", 4)),
                request_timeout=float(t.get("request_timeout", 30.0)),
                retry=RetryPolicy(
                    max_attempts=int(t.get("retry", {}).get("max_attempts", 3)),
                    backoff_base=float(t.get("retry", {}).get("backoff_base", 0.05)),
                ),
            )
            for t in raw["teachers"]
        )
        gen = raw["generation"]
        generation = GenerationConfig(
            teachers=tuple(gen["teachers"]),
            temperatures=tuple(float(x) for x in gen["temperatures"]),
            per_combo=int(gen.get("per_combo", 1)),
        )
        reward_raw = raw.get("reward", {})
        reward = RewardConfig(
            lo_rv=float(reward_raw.get("lo_rv", 0.0)),
            hi_rv=float(reward_raw.get("hi_rv", 1.0)),
            lo_cd=float(reward_raw.get("lo_cd", 0.0)),
            hi_cd=float(reward_raw.get("hi_cd", 1.0)),
            lambda_rv=float(reward_raw.get("lambda_rv", 1.0)),
            lambda_cd=float(reward_raw.get("lambda_cd", 1.0)),
        )
        profiles = tuple(
            StudentProfile(
                name=p["name"],
                cd_window=tuple(float(x) for x in p["cd_window"]),
                rv_window=tuple(float(x) for x in p["rv_window"]),
                target_size=int(p["target_size"]),
            )
            for p in raw.get("profiles", [])
        )
        schedule = None
        if "schedule" in raw:
            schedule = tuple(
                (frozenset(s["difficulties"]), int(s.get("epochs", 1)))
                for s in raw["schedule"]
            )
        judge = raw.get("judge", {})
        config = PipelineConfig(
            teachers=teachers,
            generation=generation,
            workdir=resolve(raw["workdir"]),
            problems=resolve(raw["problems"]),
            seed=int(raw.get("seed", 0)),
            prompts_dir=resolve(raw["prompts_dir"]) if "prompts_dir" in raw else DEFAULT_TEMPLATE_DIR,
            judge_teacher=judge.get("teacher_id"),
            judge_enabled=bool(judge.get("enabled", True)),
            concurrency=dict(raw.get("concurrency", {})),
            reward=reward,
            profiles=profiles,
            schedule=schedule,
            rebalance=raw.get("rebalance"),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid config {path}: {e}") from e

    registered = {t.teacher_id for t in config.teachers}
    missing = set(config.generation.teachers) - registered
    if missing:
        raise ConfigError(f"generation teachers not registered: {sorted(missing)}")
    if config.judge_teacher and config.judge_teacher not in registered:
        raise ConfigError(f"judge teacher {config.judge_teacher!r} not registered")
    return config


def build_gateway(config: PipelineConfig) -> GatewayPool:
    return GatewayPool(config.teachers)


def build_processors(config: PipelineConfig, gateway: Optional[GatewayPool] = None) -> CoTProcessors:
    prompts = JudgePromptSet.load(config.prompts_dir)
    return CoTProcessors(
        gateway or build_gateway(config),
        prompts=prompts,
        judge_teacher=config.judge_teacher,
        judge_enabled=config.judge_enabled,
    )


# -- checkpointed stage execution ------------------------------------------


@dataclass
class StageReport:
    stage: str
    n_in: int = 0
    n_out: int = 0
    skipped: int = 0
    discarded: int = 0
    failed: int = 0
    quarantined: int = 0

    def to_dict(self) -> dict:
        return {
            "stage": self.stage, "in": self.n_in, "out": self.n_out,
            "skipped": self.skipped, "discarded": self.discarded,
            "failed": self.failed, "quarantined": self.quarantined,
        }


def _file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


class _Journal:
    """Append-only per-unit results journal; the resume source of truth.

    Each line: {"id", "status", "lines": [canonical record lines]}.
    """

    def __init__(self, path: Path, input_hash: str):
        self.path = path
        self.meta_path = path.with_name(path.name + ".meta.json")
        self.input_hash = input_hash
        self._lock = threading.Lock()
        self.entries: dict[str, dict] = {}
        if self.meta_path.exists() and self.path.exists():
            meta = json.loads(self.meta_path.read_text(encoding="utf-8"))
            if meta.get("input_hash") == input_hash:
                with open(self.path, encoding="utf-8") as f:
                    for line in f:
                        line = line.strip()
                        if line:
                            entry = json.loads(line)
                            self.entries[entry["id"]] = entry
            else:
                # Inputs changed underneath the journal: start over.
                self.path.unlink(missing_ok=True)
        _atomic_write(self.meta_path, json.dumps({"input_hash": input_hash}))
        self._fh = open(self.path, "a", encoding="utf-8")

    def completed_ids(self) -> set[str]:
        return set(self.entries)

    def append(self, unit_id: str, status: str, lines: list[str]) -> None:
        entry = {"id": unit_id, "status": status, "lines": lines}
        with self._lock:
            self.entries[unit_id] = entry
            self._fh.write(json.dumps(entry) + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def close(self) -> None:
        self._fh.close()

    def cleanup(self) -> None:
        self.close()
        self.path.unlink(missing_ok=True)
        self.meta_path.unlink(missing_ok=True)


def _checkpoint_path(out_path: Path) -> Path:
    return out_path.with_name(out_path.name + ".ckpt.json")


def _write_checkpoint(out_path: Path, stage: str, input_hash: str,
                      completed_ids, complete: bool) -> None:
    ckpt = {
        "stage": stage,
        "input_hashes": [input_hash],
        "completed_ids": sorted(completed_ids),
        "complete": complete,
        "timestamp": time.time(),
    }
    _atomic_write(_checkpoint_path(out_path), json.dumps(ckpt, indent=2))


def _stage_already_complete(out_path: Path, input_hash: str) -> bool:
    ckpt_path = _checkpoint_path(out_path)
    if not (out_path.exists() and ckpt_path.exists()):
        return False
    try:
        ckpt = json.loads(ckpt_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    return bool(ckpt.get("complete")) and ckpt.get("input_hashes") == [input_hash]


def _run_units(stage: str, out_path: Path, input_hash: str,
               units: list[tuple[str, object]],
               worker: Callable[[object], tuple[str, list[str]]],
               max_workers: int) -> StageReport:
    """Process units not yet in the journal, then finalize the output shard.

    worker returns (status, canonical record lines). Any worker exception
    aborts the stage after in-flight units settle; completed work stays in
    the journal for resume.
    """
    report = StageReport(stage=stage, n_in=len(units))
    journal = _Journal(out_path.with_name(out_path.name + ".journal"), input_hash)
    done = journal.completed_ids()
    pending = [(uid, unit) for uid, unit in units if uid not in done]
    report.skipped = len(units) - len(pending)

    failure: Optional[BaseException] = None
    if pending:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as pool:
            futures = {pool.submit(worker, unit): uid for uid, unit in pending}
            for fut in concurrent.futures.as_completed(futures):
                uid = futures[fut]
                try:
                    status, lines = fut.result()
                except ContractError:
                    journal.close()
                    raise
                except Exception as e:  # teacher exhaustion etc.
                    # Keep draining so every already-successful unit lands in
                    # the journal; resume then re-pays only the failed ones.
                    if failure is None:
                        failure = e
                        for other in futures:
                            other.cancel()
                    continue
                journal.append(uid, status, lines)
                _write_checkpoint(out_path, stage, input_hash,
                                  journal.completed_ids(), complete=False)

    if failure is not None:
        journal.close()
        raise StageError(f"stage {stage} aborted: {failure}") from failure

    out_lines: list[str] = []
    for entry in journal.entries.values():
        status = entry["status"]
        if status == "discarded":
            report.discarded += 1
        elif status == "failed":
            report.failed += 1
        elif status == "quarantined":
            report.quarantined += 1
        out_lines.extend(entry["lines"])

    out_lines.sort(key=lambda line: json.loads(line)["record_id"])
    _atomic_write(out_path, "".join(line + "\n" for line in out_lines))
    report.n_out = len(out_lines)
    _write_checkpoint(out_path, stage, input_hash, journal.completed_ids(), complete=True)
    journal.cleanup()
    return report


# -- per-stage workers -----------------------------------------------------


def _read_stage_records(path: Path) -> list[CoTRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(parse_record(line))
    return records


def run_stage(config: PipelineConfig, stage: str, in_path, out_path,
              gateway: Optional[GatewayPool] = None) -> StageReport:
    """Run one record-processing stage with checkpoint/resume semantics."""
    if stage not in ("generate", "difficulty", "rewrite", "verify", "rv", "cd"):
        raise ConfigError(f"unknown or non-shard stage {stage!r}")
    in_path, out_path = Path(in_path), Path(out_path)
    if not in_path.exists():
        raise StageError(f"stage {stage}: missing input {in_path}")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    input_hash = _file_hash(in_path)
    if _stage_already_complete(out_path, input_hash):
        n = sum(1 for ln in open(in_path, encoding="utf-8") if ln.strip())
        out_n = sum(1 for ln in open(out_path, encoding="utf-8") if ln.strip())
        return StageReport(stage=stage, n_in=n, n_out=out_n, skipped=n)

    procs = build_processors(config, gateway)
    gen = config.generation

    if stage == "generate":
        problems = sorted(read_problems(in_path), key=lambda p: p.id)

        def worker(problem: Problem) -> tuple[str, list[str]]:
            records = procs.generate_cots(problem, gen.teachers, gen.temperatures, gen.per_combo)
            status = "ok" if records else "failed"
            return status, [serialize_record(r) for r in records]

        units = [(p.id, p) for p in problems]
        return _run_units(stage, out_path, input_hash, units, worker,
                          config.stage_workers(stage))

    records = _read_stage_records(in_path)
    units = [(r.record_id, r) for r in records]

    if stage == "difficulty":
        def worker(r: CoTRecord):
            return "ok", [serialize_record(procs.score_difficulty(r))]
    elif stage == "rewrite":
        def worker(r: CoTRecord):
            if r.annotations.difficulty in ("easy", "hard"):
                r = procs.rewrite_cot(r)
            return "ok", [serialize_record(r)]
    elif stage == "verify":
        def worker(r: CoTRecord):
            verified, outcome = procs.verify_cot(r)
            if outcome is not None and outcome.decision == "discarded":
                return "discarded", []
            if outcome is None and not verified.has_stage("verified"):
                return "failed", []
            return "ok", [serialize_record(verified)]
    elif stage in ("rv", "cd"):
        score = procs.score_rv if stage == "rv" else procs.score_cd

        def worker(r: CoTRecord):
            scored, ok = score(r)
            if not ok:
                return "quarantined", []
            return "ok", [serialize_record(scored)]
    else:  # pragma: no cover
        raise AssertionError(stage)

    return _run_units(stage, out_path, input_hash, units, worker,
                      config.stage_workers(stage))


# -- sampling + curriculum + full pipeline ---------------------------------


def _schedule_or_default(config: PipelineConfig):
    return list(config.schedule) if config.schedule is not None else None


def run_sample(config: PipelineConfig, in_path, workdir: Optional[Path] = None) -> dict:
    """Emit per-profile manifests and curriculum phases from scored records."""
    workdir = Path(workdir or config.workdir)
    records = _read_stage_records(Path(in_path))
    if config.rebalance:
        records = task_rebalance(
            records,
            policy=config.rebalance.get("policy", "uniform_min"),
            quota=config.rebalance.get("quota"),
            seed=config.seed,
        )

    artifacts: dict = {"profiles": {}, "curriculum": []}
    for profile in config.profiles:
        manifest = target_aware_sample(records, profile, seed=config.seed)
        path = workdir / f"manifest_{profile.name}.json"
        write_manifest(path, manifest.to_dict())
        artifacts["profiles"][profile.name] = {
            "path": path.name,  # workdir-relative so summaries compare across runs
            "content_hash": manifest.content_hash,
            "size": len(manifest.record_ids),
        }

    phases = build_curriculum(records, _schedule_or_default(config), seed=config.seed)
    for phase in phases:
        path = workdir / f"curriculum_phase_{phase.phase_index}.json"
        write_manifest(path, phase.to_dict())
        artifacts["curriculum"].append({
            "phase": phase.phase_index,
            "path": path.name,
            "epochs": phase.epochs,
            "difficulty_filter": sorted(phase.difficulty_filter),
            "size": len(phase.manifest.record_ids),
        })
    return artifacts


def run_all(config: PipelineConfig, gateway: Optional[GatewayPool] = None) -> dict:
    """Execute the full stage chain and emit manifests plus a summary report."""
    workdir = config.workdir
    workdir.mkdir(parents=True, exist_ok=True)
    gateway = gateway or build_gateway(config)

    chain = [
        ("generate", config.problems, workdir / "generated.jsonl"),
        ("difficulty", workdir / "generated.jsonl", workdir / "difficulty_scored.jsonl"),
        ("rewrite", workdir / "difficulty_scored.jsonl", workdir / "rewritten.jsonl"),
        ("verify", workdir / "rewritten.jsonl", workdir / "verified.jsonl"),
        ("rv", workdir / "verified.jsonl", workdir / "rv_scored.jsonl"),
        ("cd", workdir / "rv_scored.jsonl", workdir / "cd_scored.jsonl"),
    ]
    reports = []
    for stage, in_path, out_path in chain:
        reports.append(run_stage(config, stage, in_path, out_path, gateway=gateway))

    scored_path = workdir / "cd_scored.jsonl"
    try:
        artifacts = run_sample(config, scored_path)
    except SamplerError as e:
        records = _read_stage_records(scored_path)
        raise StageError(
            f"sample stage failed: {e}; occupancy={window_occupancy(records)}"
        ) from e

    records = _read_stage_records(scored_path)
    n_generated = reports[0].n_out
    n_discarded = sum(r.discarded for r in reports)
    summary = {
        "stages": [r.to_dict() for r in reports],
        "discard_rate": round(n_discarded / n_generated, 4) if n_generated else 0.0,
        "length_report": {
            "task_domain": length_report(records, "task_domain"),
            "difficulty": length_report(records, "difficulty"),
        },
        "window_occupancy": window_occupancy(records),
        "prompt_set_hash": JudgePromptSet.load(config.prompts_dir).content_hash(),
        "artifacts": artifacts,
    }
    _atomic_write(workdir / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
