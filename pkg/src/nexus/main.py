"""
Main entry point of the ``nexus`` command.

Each sub-command has a small handler returning the process exit code.
Results go to stdout (plain JSON with ``--json``); logs and error messages
go to stderr unless ``--json`` asks for the error record on stdout.
"""

from __future__ import annotations

import sys
from typing import TYPE_CHECKING, Any

from pydantic import ValidationError
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from nexus.cli_args_parser import CLIArgs
from nexus.constants import defaults
from nexus.constants.enums import TaskType
from nexus.errors import NexusError, PreconditionViolation
from nexus.evolve import SkillRepository, rank_skills, score_trajectory
from nexus.log import configure_logging
from nexus.model_backend import ReplayBackend, record_session
from nexus.object_store import ObjectStore
from nexus.orchestrator import EXIT_ERROR, EXIT_OK, TaskRunner, make_backend
from nexus.planning import StructuredIntent
from nexus.rlmath import export_sft_dataset
from nexus.run_config import RunConfig, load_config
from nexus.toolhub import ToolRegistry, invoke_tool, parse_manifest
from nexus.trajectory import TRAJECTORIES_DIR, Trajectory, find_trajectory
from nexus.utils import canonical_json

if TYPE_CHECKING:
    from collections.abc import Callable

    from nexus.orchestrator import RunOutcome

console = Console()
err_console = Console(stderr=True)


def main(argv: list[str] | None = None) -> int:
    args = CLIArgs.from_argv(argv)
    configure_logging(args.verbosity)
    handler = _HANDLERS[(args.command, args.action)]
    try:
        return handler(args)
    except NexusError as exc:
        _fail(args, exc.to_record())
    except ValidationError as exc:
        _fail(args, {"error": "invalid_document", "message": str(exc)})
    return EXIT_ERROR


# --------------------------------------------------------------------- #
# run / replay                                                          #
# --------------------------------------------------------------------- #
def _run(args: CLIArgs) -> int:
    config = _config(args)
    runner = TaskRunner(config)
    outcome = runner.run_task(str(args.query), args.expected, args.rollout)
    return _report_run(args, outcome)


def _replay_record(args: CLIArgs) -> int:
    config = _config(args)
    fixture = str(args.fixture)
    backend = make_backend(config)
    recorder = record_session(backend, args.fixture)  # type: ignore[arg-type]
    outcome = TaskRunner(config, recorder).run_task(str(args.query))
    code = _report_run(args, outcome, {"fixture": fixture, "entries": len(recorder)})
    if not args.json_output:
        console.print(f"recorded {len(recorder)} replies to {escape(fixture)}")
    return code


def _replay_verify(args: CLIArgs) -> int:
    config = _config(args)
    replay = ReplayBackend(args.fixture)  # type: ignore[arg-type]
    outcome = TaskRunner(config, replay).run_task(str(args.query))
    extra = {"hits": replay.hits, "misses": replay.misses}
    code = _report_run(args, outcome, extra)
    if not args.json_output:
        console.print(f"replay: {replay.hits} hits, {replay.misses} misses")
    return EXIT_ERROR if replay.misses else code


def _report_run(
    args: CLIArgs,
    outcome: RunOutcome,
    extra: dict[str, Any] | None = None,
) -> int:
    reward = outcome.reward
    path = str(outcome.trajectory_path)
    document: dict[str, Any] = {
        "run_id": outcome.run_id,
        "status": outcome.status.value,
        "exit_code": outcome.exit_code,
        "answer": outcome.answer,
        "trajectory": path,
        "skill_id": outcome.skill_id,
        "reward": reward.model_dump(mode="json") if reward else None,
        **(extra or {}),
    }
    if outcome.error is not None:
        document["error"] = outcome.error
    if args.json_output:
        _emit(document)
    elif outcome.error is not None:
        err_console.print(f"[red]❌ {escape(outcome.error['message'])}[/red]")
        err_console.print(f"trajectory: {escape(path)}")
    else:
        style = "green" if outcome.exit_code == EXIT_OK else "yellow"
        console.print(f"[{style}]{escape(str(outcome.answer))}[/{style}]")
        console.print(f"[dim]{outcome.status.value} · {escape(path)}[/dim]")
        if reward is not None:
            console.print(f"[dim]reward {reward.total}[/dim]")
    return outcome.exit_code


# --------------------------------------------------------------------- #
# tools                                                                 #
# --------------------------------------------------------------------- #
def _tools_add(args: CLIArgs) -> int:
    config = _config(args)
    manifest = parse_manifest(args.manifest.read_bytes())  # type: ignore[union-attr]
    _registry(config).register_tool(manifest)
    target = config.tools_dir / f"{manifest.tool_id}.json"
    text = canonical_json(manifest.model_dump(mode="json")) + "\n"
    target.write_text(text, encoding="utf-8")
    if args.json_output:
        _emit({"tool_id": manifest.tool_id, "path": str(target)})
    else:
        added = f"[green]added {manifest.tool_id}[/green]"
        console.print(f"{added} → {escape(str(target))}")
    return EXIT_OK


def _tools_list(args: CLIArgs) -> int:
    tools = _registry(_config(args)).snapshot()
    if args.json_output:
        _emit([t.model_dump(mode="json") for t in tools])
        return EXIT_OK
    table = Table("tool_id", "class", "domains", "name")
    for t in tools:
        table.add_row(t.tool_id, t.tool_class.value, ", ".join(t.domain_tags), t.name)
    console.print(table)
    return EXIT_OK


def _tools_search(args: CLIArgs) -> int:
    config = _config(args)
    intent = _intent_for(str(args.query), args.domains)
    k = args.k or config.retrieval.k
    ranked = _registry(config).retrieve(intent, str(args.query), k)
    rows = [{"tool_id": r.manifest.tool_id, "score": r.score} for r in ranked]
    if args.json_output:
        _emit(rows)
        return EXIT_OK
    table = Table("rank", "tool_id", "score")
    for rank, row in enumerate(rows, 1):
        table.add_row(str(rank), row["tool_id"], f"{row['score']:.4f}")
    console.print(table)
    return EXIT_OK


def _tools_call(args: CLIArgs) -> int:
    tools_dir = args.tools_dir or _config(args).tools_dir
    registry = ToolRegistry()
    registry.load_dir(tools_dir)
    result = invoke_tool(registry.get(str(args.tool_id)), args.tool_input)
    # always JSON: sandboxed code parses this output
    sys.stdout.write(canonical_json(result) + "\n")
    return EXIT_OK


# --------------------------------------------------------------------- #
# traj                                                                  #
# --------------------------------------------------------------------- #
def _traj_show(args: CLIArgs) -> int:
    config = _config(args)
    trajectory = Trajectory.load(find_trajectory(config.store_dir, args.runs[0]))
    frame = trajectory.steps_frame()
    document = {
        "run_id": trajectory.run_id,
        "query": trajectory.query,
        "loop_mode": trajectory.loop_mode,
        "status": trajectory.status_text,
        "answer": trajectory.final_answer,
        "subtasks": len(trajectory.subtasks),
        "steps": trajectory.total_steps,
        "error_steps": trajectory.error_steps,
        "composite": trajectory.critic.composite if trajectory.critic else None,
        "reward": trajectory.reward.total if trajectory.reward else None,
    }
    if args.json_output:
        _emit({**document, "steps_table": frame.to_dict(orient="records")})
        return EXIT_OK
    for key, value in document.items():
        console.print(f"[bold]{key}[/bold]: {escape(str(value))}")
    if not frame.empty:
        table = Table(*frame.columns)
        for row in frame.itertuples(index=False):
            table.add_row(*(str(v) for v in row))
        console.print(table)
    return EXIT_OK


def _traj_score(args: CLIArgs) -> int:
    config = _config(args)
    trajectory = Trajectory.load(find_trajectory(config.store_dir, args.runs[0]))
    model = make_backend(config) if args.with_model else None
    store = ObjectStore(config.objects_dir, config.store_quota_bytes)
    report = score_trajectory(trajectory, model, store, config.protocol_retries)
    if args.json_output:
        _emit(report.model_dump(mode="json"))
        return EXIT_OK
    for name, value in report.scores.model_dump().items():
        console.print(f"{name}: {value:.3f}")
    composite = f"[bold]composite: {report.composite:.3f}[/bold]"
    console.print(f"{composite} ({report.scored_by.value})")
    return EXIT_OK


def _traj_export_sft(args: CLIArgs) -> int:
    config = _config(args)
    if args.runs:
        paths = [find_trajectory(config.store_dir, ref) for ref in args.runs]
    else:
        paths = sorted((config.store_dir / TRAJECTORIES_DIR).glob("*.jsonl"))
    candidates = [Trajectory.load(p).sft_candidate() for p in paths]
    out, floor = args.out, args.min_reward
    count = export_sft_dataset(candidates, out, floor)  # type: ignore[arg-type]
    if args.json_output:
        _emit({"out": str(out), "records": count, "trajectories": len(paths)})
    else:
        console.print(
            f"wrote {count} records from {len(paths)} trajectories to "
            f"{escape(str(out))}",
        )
    return EXIT_OK


# --------------------------------------------------------------------- #
# skills                                                                #
# --------------------------------------------------------------------- #
def _skills_list(args: CLIArgs) -> int:
    config = _config(args)
    _print_skills(args, _skill_repo(config).skills())
    return EXIT_OK


def _skills_query(args: CLIArgs) -> int:
    config = _config(args)
    repo = _skill_repo(config)
    domains = _intent_for("skills", args.domains).domains
    k = args.k or defaults.SKILLS_IN_CONTEXT
    _print_skills(args, rank_skills(repo.skills(), domains, k))
    return EXIT_OK


def _print_skills(args: CLIArgs, skills: list[Any]) -> None:
    if args.json_output:
        _emit([s.model_dump(mode="json") for s in skills])
        return
    table = Table("skill_id", "domains", "composite", "experience")
    for s in skills:
        table.add_row(
            s.skill_id,
            ", ".join(s.domain_tags),
            f"{s.source_composite:.3f}",
            s.triple.experience,
        )
    console.print(table)


# --------------------------------------------------------------------- #
# Private helpers                                                       #
# --------------------------------------------------------------------- #
def _config(args: CLIArgs) -> RunConfig:
    if args.config is None:
        msg = "this command needs -c CONFIG"
        raise PreconditionViolation(msg)
    return load_config(args.config, args.overrides)


def _registry(config: RunConfig) -> ToolRegistry:
    registry = ToolRegistry()
    registry.load_dir(config.tools_dir)
    return registry


def _skill_repo(config: RunConfig) -> SkillRepository:
    return SkillRepository(config.skills_path, config.evolve.distill_threshold)


def _intent_for(subject: str, domains: tuple[str, ...]) -> StructuredIntent:
    try:
        return StructuredIntent(
            research_subject=subject,
            task_type=TaskType.OTHER,
            domains=list(domains),
        )
    except ValidationError as exc:
        msg = f"unknown domains {list(domains)}"
        raise PreconditionViolation(msg) from exc


def _emit(document: Any) -> None:
    sys.stdout.write(canonical_json(document) + "\n")


def _fail(args: CLIArgs, record: dict[str, str]) -> None:
    if args.json_output:
        _emit(record)
    else:
        err_console.print(f"[red]❌ {escape(record['message'])}[/red]")


_HANDLERS: dict[tuple[str, str | None], Callable[[CLIArgs], int]] = {
    ("run", None): _run,
    ("tools", "add"): _tools_add,
    ("tools", "list"): _tools_list,
    ("tools", "search"): _tools_search,
    ("tools", "call"): _tools_call,
    ("traj", "show"): _traj_show,
    ("traj", "score"): _traj_score,
    ("traj", "export-sft"): _traj_export_sft,
    ("skills", "list"): _skills_list,
    ("skills", "query"): _skills_query,
    ("replay", "record"): _replay_record,
    ("replay", "verify"): _replay_verify,
}

if __name__ == "__main__":
    raise SystemExit(main())
