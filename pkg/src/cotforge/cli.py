"""cotforge command-line interface.

Exit codes: 0 success, 2 config error, 3 stage failure (resumable),
4 contract violation.
"""

from __future__ import annotations

import json
import logging
import sys
from collections import defaultdict

import click

from . import mockserver, pipeline
from .errors import ContractError
from .records import RecordParseError, RecordValidationError, read_records
from .rewards import RewardConfig, group_advantages, pass_at_k, total_reward
from .sampler import SamplerError, length_report

EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_CONTRACT = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_pipeline_config(path):
    try:
        return pipeline.load_config(path)
    except pipeline.ConfigError as e:
        _fail(EXIT_CONFIG, str(e))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose):
    """Chain-of-thought distillation data pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@main.command("run-all")
@click.option("-c", "--config", "config_path", required=True, type=click.Path(exists=True))
def run_all_cmd(config_path):
    """Run the full stage chain and emit manifests plus a summary report."""
    config = _load_pipeline_config(config_path)
    try:
        summary = pipeline.run_all(config)
    except pipeline.StageError as e:
        _fail(EXIT_STAGE, str(e))
    except ContractError as e:
        _fail(EXIT_CONTRACT, str(e))
    click.echo(json.dumps(summary["stages"], indent=2))
    click.echo(f"summary written to {config.workdir / 'summary.json'}")


@main.command("stage")
@click.argument("name")
@click.option("-c", "--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
def stage_cmd(name, config_path, in_path, out_path):
    """Run a single pipeline stage over a JSONL shard."""
    config = _load_pipeline_config(config_path)
    try:
        if name == "sample":
            artifacts = pipeline.run_sample(config, in_path)
            click.echo(json.dumps(artifacts, indent=2))
            return
        report = pipeline.run_stage(config, name, in_path, out_path)
    except pipeline.ConfigError as e:
        _fail(EXIT_CONFIG, str(e))
    except (pipeline.StageError, SamplerError) as e:
        _fail(EXIT_STAGE, str(e))
    except ContractError as e:
        _fail(EXIT_CONTRACT, str(e))
    click.echo(json.dumps(report.to_dict(), indent=2))


@main.group("reward")
def reward_group():
    """Reward-math utilities."""


def _read_jsonl(path):
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


@reward_group.command("eval")
@click.option("--config", "reward_config_path", required=True, type=click.Path(exists=True),
              help="JSON file with lo_rv, hi_rv, lo_cd, hi_cd, lambda_rv, lambda_cd.")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True),
              help="JSONL rows of {r_fmt, r_acc, f_rv, f_cd}.")
@click.option("--out", "out_path", required=True, type=click.Path())
def reward_eval_cmd(reward_config_path, in_path, out_path):
    """Compute reward breakdowns for a JSONL file of score rows."""
    try:
        with open(reward_config_path, encoding="utf-8") as f:
            cfg = RewardConfig(**json.load(f))
    except (OSError, TypeError, ValueError) as e:
        _fail(EXIT_CONFIG, f"bad reward config: {e}")
    try:
        with open(out_path, "w", encoding="utf-8") as out:
            for row in _read_jsonl(in_path):
                b = total_reward(row["r_fmt"], row["r_acc"], row["f_rv"], row["f_cd"], cfg)
                out.write(json.dumps({
                    "r_fmt": b.r_fmt, "r_acc": b.r_acc, "r_rv": b.r_rv,
                    "r_cd": b.r_cd, "total": b.total,
                }, sort_keys=True) + "\n")
    except ContractError as e:
        _fail(EXIT_CONTRACT, str(e))
    except KeyError as e:
        _fail(EXIT_CONFIG, f"input row missing field {e}")


@reward_group.command("advantages")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True),
              help="JSONL rows of {group_id, reward}.")
@click.option("--out", "out_path", required=True, type=click.Path())
def advantages_cmd(in_path, out_path):
    """Compute group-relative advantages over rows sharing a group_id."""
    groups: dict[str, list[dict]] = defaultdict(list)
    for row in _read_jsonl(in_path):
        groups[str(row["group_id"])].append(row)
    try:
        with open(out_path, "w", encoding="utf-8") as out:
            for gid in sorted(groups):
                rows = groups[gid]
                advs = group_advantages([r["reward"] for r in rows])
                for row, adv in zip(rows, advs):
                    out.write(json.dumps({"group_id": gid, "reward": row["reward"],
                                          "advantage": adv}, sort_keys=True) + "\n")
    except ContractError as e:
        _fail(EXIT_CONTRACT, str(e))


@main.group("report")
def report_group():
    """Dataset analysis reports."""


@report_group.command("lengths")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--by", "bucket_key", default="task_domain",
              type=click.Choice(["task_domain", "difficulty", "teacher_id"]))
def lengths_cmd(in_path, bucket_key):
    """Mean CoT token counts per bucket."""
    try:
        records = read_records(in_path)
        table = length_report(records, bucket_key)
    except (RecordParseError, RecordValidationError, SamplerError) as e:
        _fail(EXIT_CONFIG, str(e))
    for key, mean in table.items():
        click.echo(f"{key}\t{mean:.2f}")


@main.command("passk")
@click.option("--n", "n", required=True, type=int, help="Total samples.")
@click.option("--c", "c", required=True, type=int, help="Correct samples.")
@click.option("--k", "k", required=True, type=int, help="Attempts budget.")
def passk_cmd(n, c, k):
    """Unbiased Pass@K estimate from n samples with c correct."""
    try:
        click.echo(f"{pass_at_k(n, c, k):.6f}")
    except ContractError as e:
        _fail(EXIT_CONTRACT, str(e))


@main.command("mock")
@click.option("--scenario", required=True, type=click.Path(exists=True))
@click.option("--port", default=8900, type=int)
def mock_cmd(scenario, port):
    """Serve the scripted mock teacher server (blocks)."""
    mockserver.serve_forever(scenario, port)


if __name__ == "__main__":
    main()
