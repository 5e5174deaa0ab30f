"""Command-line parsing for the nexus runtime.

Public API
~~~~~~~~~~
* :class:`CLIArgs` - immutable dataclass that stores *validated* values.
* The *only* constructor is :meth:`CLIArgs.from_argv`.

Everything else is an implementation detail.
"""

from __future__ import annotations

import argparse
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from rich import print as rprint

from nexus.constants.enums import LoopMode
from nexus.constants.keywords import ENV_TOOLS_DIR


@dataclass(slots=True, frozen=True)
class CLIArgs:
    """Container for validated CLI parameters.

    Attributes
    ----------
    command, action
        Sub-command and, for command groups, its verb (``tools list`` gives
        ``("tools", "list")``; ``run`` has no verb).
    config
        Run config path; every command but ``tools call`` needs one.
    overrides
        ``dotted.key=value`` config overrides, ``--loop-mode`` included.
    json_output
        Print machine-readable JSON instead of rich text.
    verbosity
        Number of ``-v`` flags.
    """

    command: str
    action: str | None = None
    config: Path | None = None
    overrides: tuple[str, ...] = ()
    json_output: bool = False
    verbosity: int = 0
    query: str | None = None
    expected: str | None = None
    rollout: int = 0
    manifest: Path | None = None
    tool_id: str | None = None
    tool_input: dict[str, Any] = field(default_factory=dict)
    tools_dir: Path | None = None
    runs: tuple[str, ...] = ()
    out: Path | None = None
    min_reward: float = 0.0
    with_model: bool = False
    domains: tuple[str, ...] = ()
    k: int | None = None
    fixture: Path | None = None

    @classmethod
    def from_argv(cls, argv: list[str] | None = None) -> CLIArgs:
        """Parse *argv* (or :pydata:`sys.argv[1:]`) and return a
        :class:`CLIArgs` instance.

        Raises
        ------
        SystemExit
            *Exit code 2* - when :pyclass:`argparse.ArgumentParser`
            rejects the syntax.
            *Exit code 1* - custom validation failures.
        """
        ns = _build_parser().parse_args(argv)
        overrides = list(getattr(ns, "overrides", None) or [])
        if getattr(ns, "loop_mode", None):
            overrides.append(f"loop_mode={ns.loop_mode}")
        config = getattr(ns, "config", None)
        if config is not None and not config.is_file():
            rprint(f"[red]❌ config file {config} not found[/red]")
            raise SystemExit(1)

        return cls(
            command=ns.command,
            action=getattr(ns, "action", None),
            config=config,
            overrides=tuple(overrides),
            json_output=ns.json_output,
            verbosity=ns.verbose,
            query=getattr(ns, "query", None),
            expected=getattr(ns, "expected", None),
            rollout=getattr(ns, "rollout", 0),
            manifest=_existing_file(getattr(ns, "manifest", None)),
            tool_id=getattr(ns, "tool_id", None),
            tool_input=_parse_input(getattr(ns, "input", None)),
            tools_dir=_tools_dir(ns),
            runs=tuple(getattr(ns, "runs", None) or ()),
            out=getattr(ns, "out", None),
            min_reward=getattr(ns, "min_reward", 0.0),
            with_model=getattr(ns, "with_model", False),
            domains=tuple(getattr(ns, "domain", None) or ()),
            k=getattr(ns, "k", None),
            fixture=getattr(ns, "fixture", None),
        )


# --------------------------------------------------------------------- #
# Private helpers                                                       #
# --------------------------------------------------------------------- #
def _build_parser() -> argparse.ArgumentParser:  # noqa: PLR0915
    """Return a ready-configured instance of :class:`~argparse.ArgumentParser`."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--json",
        dest="json_output",
        action="store_true",
        help="Machine-readable JSON output",
    )
    common.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="Log more (-v info, -vv debug) to stderr",
    )

    configured = argparse.ArgumentParser(add_help=False)
    configured.add_argument(
        "-c",
        "--config",
        type=Path,
        required=True,
        metavar="CONFIG",
    )
    configured.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a config value, e.g. sandbox.timeout_s=10",
    )
    both = [common, configured]

    parser = argparse.ArgumentParser(
        prog="nexus",
        description="Run and inspect dual-loop scientific research agents.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    # -- run ------------------------------------------------------------
    run = commands.add_parser("run", parents=both, help="Run one query end to end")
    run.add_argument("query", metavar="QUERY")
    run.add_argument(
        "--loop-mode",
        choices=[m.value for m in LoopMode],
        help="Override the config's loop_mode",
    )
    run.add_argument(
        "--expected",
        metavar="ANSWER",
        help="Grade the final answer against ANSWER",
    )
    run.add_argument(
        "--rollout",
        type=_non_negative,
        default=0,
        metavar="N",
        help="Rollout index; each index of a query keeps its own trajectory",
    )

    # -- tools ----------------------------------------------------------
    tools = commands.add_parser("tools", help="Manage and call tools")
    verbs = tools.add_subparsers(dest="action", required=True)
    add = verbs.add_parser("add", parents=both, help="Validate and install a manifest")
    add.add_argument("manifest", type=Path, metavar="MANIFEST")
    verbs.add_parser("list", parents=both, help="List registered tools")
    search = verbs.add_parser("search", parents=both, help="Rank tools for a goal")
    search.add_argument("query", metavar="GOAL")
    search.add_argument(
        "--domain",
        action="append",
        required=True,
        help="Intent domain (repeatable)",
    )
    search.add_argument("-k", type=int, default=None)
    call = verbs.add_parser(
        "call",
        parents=[common],
        help="Invoke a tool and print its JSON result",
    )
    call.add_argument("tool_id", metavar="TOOL_ID")
    call.add_argument("--input", required=True, metavar="JSON")
    call.add_argument(
        "--tools-dir",
        type=Path,
        default=None,
        help=f"Default: ${ENV_TOOLS_DIR}",
    )
    call.add_argument("-c", "--config", type=Path, default=None, metavar="CONFIG")

    # -- traj -----------------------------------------------------------
    traj = commands.add_parser("traj", help="Inspect trajectories")
    verbs = traj.add_subparsers(dest="action", required=True)
    show = verbs.add_parser("show", parents=both, help="Summarize a trajectory")
    show.add_argument("runs", nargs=1, metavar="RUN")
    score = verbs.add_parser("score", parents=both, help="Critic-score a trajectory")
    score.add_argument("runs", nargs=1, metavar="RUN")
    score.add_argument(
        "--with-model",
        action="store_true",
        help="Ask the configured model as critic",
    )
    export = verbs.add_parser(
        "export-sft",
        parents=both,
        help="Write the best rollout per task as an SFT dataset",
    )
    export.add_argument(
        "runs",
        nargs="*",
        metavar="RUN",
        help="Default: every stored trajectory",
    )
    export.add_argument("--out", type=Path, required=True, metavar="FILE")
    export.add_argument("--min-reward", type=float, default=0.0, metavar="R")

    # -- skills ---------------------------------------------------------
    skills = commands.add_parser("skills", help="Inspect the skill repository")
    verbs = skills.add_subparsers(dest="action", required=True)
    verbs.add_parser("list", parents=both, help="List stored skills")
    query = verbs.add_parser("query", parents=both, help="Skills for some domains")
    query.add_argument("--domain", action="append", required=True)
    query.add_argument("-k", type=int, default=None)

    # -- replay ---------------------------------------------------------
    replay = commands.add_parser("replay", help="Record and verify replay fixtures")
    verbs = replay.add_subparsers(dest="action", required=True)
    for verb, text in (
        ("record", "Run with the configured backend and freeze its replies"),
        ("verify", "Re-run from a fixture and report hits and misses"),
    ):
        sub = verbs.add_parser(verb, parents=both, help=text)
        sub.add_argument("query", metavar="QUERY")
        sub.add_argument("--fixture", type=Path, required=True, metavar="JSONL")
    return parser


def _existing_file(path: Path | None) -> Path | None:
    if path is not None and not path.is_file():
        rprint(f"[red]❌ {path} is not a file[/red]")
        raise SystemExit(1)
    return path


def _parse_input(text: str | None) -> dict[str, Any]:
    """Decode ``--input``; it must be a JSON object."""
    if text is None:
        return {}
    try:
        value = json.loads(text)
    except json.JSONDecodeError as exc:
        rprint(f"[red]❌ --input is not valid JSON: {exc}[/red]")
        raise SystemExit(1) from None
    if not isinstance(value, dict):
        rprint("[red]❌ --input must be a JSON object[/red]")
        raise SystemExit(1)
    return value


def _tools_dir(ns: argparse.Namespace) -> Path | None:
    if ns.command != "tools" or ns.action != "call":
        return None
    if ns.tools_dir is not None:
        return ns.tools_dir
    if ns.config is not None:
        return None
    env = os.environ.get(ENV_TOOLS_DIR)
    if not env:
        hint = f"--tools-dir, -c CONFIG or ${ENV_TOOLS_DIR}"
        rprint(f"[red]❌ tools call needs {hint}[/red]")
        raise SystemExit(1)
    return Path(env)


def _non_negative(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        msg = f"not an integer: {text!r}"
        raise argparse.ArgumentTypeError(msg) from None
    if value < 0:
        msg = f"must be >= 0, got {value}"
        raise argparse.ArgumentTypeError(msg)
    return value
