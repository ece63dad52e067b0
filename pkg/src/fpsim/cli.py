"""Command-line entry point.

Exit codes:
  0  success
  1  replay diverged from the recorded log
  2  invalid input (config, personas, corpus, event-log schema)
  3  I/O failure while writing artifacts
  4  reasoning backend unavailable
  5  run cannot be replayed (remote backend)
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .graph import GraphError, read_edge_list
from .metrics import (AGGREGATORS, LogError, observations_from_events, parse_k,
                      pearson_matrix, summary_tsv, superiority_report, write_report)
from .reasoning import BackendError, RemoteBackend, ScriptedBackend, infer_persona
from .simulation import (EVENT_KINDS, ConfigError, SimulationConfig, events_text, load_config,
                         make_backend, make_embedder, run, write_personas, write_run)

EXIT_OK = 0
EXIT_DIVERGED = 1
EXIT_INPUT = 2
EXIT_IO = 3
EXIT_BACKEND = 4
EXIT_NOT_REPLAYABLE = 5

MANIFEST = "manifest.json"
EVENT_FIELDS = ("iteration", "phase", "agent", "kind")

log = logging.getLogger("fpsim")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# -- simulate -----------------------------------------------------------------

def _execute(config: SimulationConfig):
    embedder = make_embedder(config)
    backend = None
    if config.backend == "remote":
        try:
            backend = make_backend(config, embedder)
            assert isinstance(backend, RemoteBackend)
            backend.ping()
        except BackendError as exc:
            raise CliError(str(exc), EXIT_BACKEND) from exc
    try:
        return run(config, backend, embedder)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc


def cmd_simulate(config_path: str | Path, out_dir: str | Path) -> dict:
    config_path = Path(config_path)
    out = Path(out_dir)
    try:
        config = load_config(config_path)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    if not config.personas.exists():
        raise CliError(f"personas file not found: {config.personas}", EXIT_INPUT)
    result = _execute(config)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = write_run(result, out)
        config_copy = out / ("config" + (config_path.suffix or ".toml"))
        config_copy.write_bytes(config_path.read_bytes())
        personas_copy = out / "personas.jsonl"
        personas_copy.write_bytes(config.personas.read_bytes())
        manifest = {
            "fpsim_version": __version__,
            "config_hash": sha256_file(config_path),
            "config_file": config_copy.name,
            "personas_file": personas_copy.name,
            "seed": config.seed,
            "backend": config.backend,
            "embedding": config.embedding,
            "agent_count": result.state.agent_count,
            "iterations": result.state.iteration,
            "duplicate_counter": result.state.duplicate_counter,
            "halt_reason": result.halt_reason,
            "artifacts": [p.name for p in paths] + [config_copy.name, personas_copy.name],
        }
        (out / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write run artifacts to {out}: {exc}", EXIT_IO) from exc
    return manifest


# -- analyze ------------------------------------------------------------------

def read_events(path: Path) -> list[dict]:
    """Parse and schema-check an events.jsonl file."""
    events = []
    try:
        lines = path.read_text(encoding="utf-8").split("\n")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_INPUT) from exc
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, line in enumerate(lines, start=1):
        try:
            d = json.loads(line)
        except ValueError as exc:
            raise CliError(f"{path}: line {lineno}: not valid JSON ({exc.msg})", EXIT_INPUT) from exc
        if not isinstance(d, dict) or any(k not in d for k in EVENT_FIELDS):
            raise CliError(f"{path}: line {lineno}: missing required event fields", EXIT_INPUT)
        if d["kind"] not in EVENT_KINDS:
            raise CliError(f"{path}: line {lineno}: unknown event kind {d['kind']!r}", EXIT_INPUT)
        events.append(d)
    return events


def _latest_snapshot(run_dir: Path) -> Path | None:
    snaps = sorted(run_dir.glob("graph_iter_*.csv"),
                   key=lambda p: int(p.stem.rsplit("_", 1)[1]))
    return snaps[-1] if snaps else None


def cmd_analyze(run: str | Path, ks: Sequence[int | None] = (1, 3, None),
                aggregators: Sequence[str] = AGGREGATORS, out_dir: str | Path | None = None,
                agent_count: int | None = None) -> tuple[list[Path], str]:
    run = Path(run)
    run_dir = run if run.is_dir() else run.parent
    events_path = run / "events.jsonl" if run.is_dir() else run
    events = read_events(events_path)

    manifest_path = run_dir / MANIFEST
    if agent_count is None and manifest_path.exists():
        agent_count = json.loads(manifest_path.read_text(encoding="utf-8"))["agent_count"]
    if agent_count is None:
        ids = [e["agent"] for e in events if isinstance(e["agent"], int)]
        ids += [e["target"] for e in events if e["kind"] == "Follow"]
        agent_count = max(ids, default=-1) + 1
    graph = None
    snap = _latest_snapshot(run_dir) if run.is_dir() else None
    try:
        if snap is not None:
            graph = read_edge_list(snap, agent_count)
        obs = observations_from_events(events, agent_count, graph)
    except (LogError, GraphError) as exc:
        raise CliError(f"{events_path}: {exc}", EXIT_INPUT) from exc

    report = superiority_report(obs, ks, aggregators)
    corr = pearson_matrix(obs.attributes) if agent_count >= 2 else None
    try:
        paths = write_report(report, corr, out_dir or run_dir)
    except OSError as exc:
        raise CliError(f"cannot write report: {exc}", EXIT_IO) from exc
    return paths, summary_tsv(report)


# -- infer-personas -----------------------------------------------------------

def read_corpus(path: Path) -> list[tuple[str, str, list[str]]]:
    """(user_id, ideology_label, posts) triples from a JSON mapping
    ``{user_id: [posts]}`` or JSONL ``{user_id, ideology_label, posts}``."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read corpus {path}: {exc}", EXIT_INPUT) from exc
    users = []
    try:
        data = json.loads(text)
    except ValueError:
        data = None
    if isinstance(data, dict) and "user_id" not in data:
        users = [(str(uid), "", list(posts)) for uid, posts in data.items()]
    else:
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                users.append((str(d["user_id"]), str(d.get("ideology_label", "")),
                              list(d.get("posts") or d.get("corpus") or [])))
            except (ValueError, KeyError, TypeError) as exc:
                raise CliError(f"{path}: line {lineno}: bad corpus record ({exc})",
                               EXIT_INPUT) from exc
    users = [(u, lab, [p for p in posts if isinstance(p, str) and p.strip()])
             for u, lab, posts in users]
    if not users or any(not posts for _, _, posts in users):
        raise CliError(f"{path}: corpus is empty or has users without posts", EXIT_INPUT)
    return users


def cmd_infer_personas(corpus_path: str | Path, out_path: str | Path,
                       backend_name: str = "scripted") -> Path:
    users = read_corpus(Path(corpus_path))
    try:
        backend = RemoteBackend() if backend_name == "remote" else ScriptedBackend()
        personas = [infer_persona(posts, backend, i, label)
                    for i, (_, label, posts) in enumerate(users)]
    except BackendError as exc:
        raise CliError(str(exc), EXIT_BACKEND) from exc
    out = Path(out_path)
    try:
        write_personas(personas, [u for u, _, _ in users], out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}", EXIT_IO) from exc
    return out


# -- replay -------------------------------------------------------------------

def first_difference(a: str, b: str) -> int | None:
    """1-based number of the first line where the texts differ."""
    la, lb = a.split("\n"), b.split("\n")
    for i, (x, y) in enumerate(zip(la, lb), start=1):
        if x != y:
            return i
    if len(la) != len(lb):
        return min(len(la), len(lb)) + 1
    return None


def cmd_replay(run_dir: str | Path) -> tuple[int, str]:
    run_dir = Path(run_dir)
    manifest_path = run_dir / MANIFEST
    if not manifest_path.exists():
        raise CliError(f"no {MANIFEST} in {run_dir}", EXIT_INPUT)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("backend") != "scripted":
        raise CliError(f"run used the {manifest.get('backend')!r} backend and cannot be replayed",
                       EXIT_NOT_REPLAYABLE)
    config_copy = run_dir / manifest["config_file"]
    if sha256_file(config_copy) != manifest["config_hash"]:
        raise CliError(f"{config_copy} does not match the recorded config hash", EXIT_INPUT)
    try:
        config = load_config(config_copy)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    config = replace(config, personas=run_dir / manifest["personas_file"])
    result = _execute(config)
    fresh = events_text(result.events)
    recorded = (run_dir / "events.jsonl").read_bytes()
    if fresh.encode("utf-8") == recorded:
        return EXIT_OK, "replay matches recorded events"
    line = first_difference(fresh, recorded.decode("utf-8", errors="replace"))
    return EXIT_DIVERGED, f"replay diverges from recorded events at line {line}"


# -- argument parsing ---------------------------------------------------------

def _ks(text: str) -> list[int | None]:
    try:
        return [parse_k(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _aggs(text: str) -> list[str]:
    aggs = [t.strip() for t in text.split(",") if t.strip()]
    bad = [a for a in aggs if a not in AGGREGATORS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown aggregator(s): {', '.join(bad)}")
    return aggs


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fpsim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("analyze", help="neighbor-superiority report for a run or event log")
    p.add_argument("--run", required=True, help="run directory or events.jsonl path")
    p.add_argument("--k", type=_ks, default=[1, 3, None], help="restriction levels, e.g. 1,3,inf")
    p.add_argument("--agg", type=_aggs, default=list(AGGREGATORS), help="mean,median")
    p.add_argument("--out", help="report directory (default: the run directory)")
    p.add_argument("--agents", type=int, help="agent count for logs without a manifest")

    p = sub.add_parser("infer-personas", help="build a personas file from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=("scripted", "remote"), default="scripted")

    p = sub.add_parser("replay", help="re-run a scripted run and compare event logs")
    p.add_argument("--run", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            manifest = cmd_simulate(args.config, args.out)
            print(f"halt_reason\t{manifest['halt_reason']}")
            print(f"iterations\t{manifest['iterations']}")
            print(f"manifest\t{Path(args.out) / MANIFEST}")
        elif args.command == "analyze":
            _, summary = cmd_analyze(args.run, args.k, args.agg, args.out, args.agents)
            sys.stdout.write(summary)
        elif args.command == "infer-personas":
            out = cmd_infer_personas(args.corpus, args.out, args.backend)
            print(f"personas\t{out}")
        elif args.command == "replay":
            code, message = cmd_replay(args.run)
            print(message)
            return code
    except CliError as exc:
        print(f"fpsim: error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
