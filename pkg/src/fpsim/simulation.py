"""Iterative simulation: operational phase (every agent decides against a
frozen snapshot), interaction phase (decisions applied in ascending agent id,
who-to-follow, store and memory upkeep) and the saturation stop check.

Artifacts of a run directory:

* ``events.jsonl``: one event per line in (iteration, phase, agent, sequence) order
* ``posts.jsonl``: every post record
* ``graph_iter_<k>.csv``: follower/followee edge list after iteration ``k``
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import rng as rngmod
from .embedding import (DEFAULT_DIM, Embedder, HashingEmbedder, RemoteEmbedder, VectorStore,
                        affinity_matrix, is_near_duplicate, top_k_similar)
from .graph import SocialGraph, edge_list_csv
from .memory import (EngagementStats, MemoryUnit, Post, PostKind, decay_step,
                     promote_to_ltm)
from .reasoning import (Backend, Choice, Decision, FeedItem, FollowCandidate, Persona,
                        RemoteBackend, ScriptedBackend, ScriptedPolicy, build_prompt,
                        infer_persona, validate_decision, InvalidDecision)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

EVENT_KINDS = ("Publish", "Reshare", "Like", "Dislike", "Comment", "Refrain",
               "Follow", "Promotion", "Decay", "Halt")
PHASES = ("action", "follow", "memory", "halt")
HALT_SATURATION = "saturation"
HALT_CAP = "iteration-cap"

_CHOICE_EVENT = {
    Choice.PUBLISH: "Publish", Choice.RESHARE: "Reshare", Choice.LIKE: "Like",
    Choice.DISLIKE: "Dislike", Choice.COMMENT: "Comment", Choice.REFRAIN: "Refrain",
}
_REACTION_FIELD = {
    Choice.RESHARE: "reshares", Choice.LIKE: "likes",
    Choice.DISLIKE: "dislikes", Choice.COMMENT: "comments",
}


class ConfigError(ValueError):
    pass


# -- configuration ------------------------------------------------------------

@dataclass
class RemoteSettings:
    endpoint: str | None = None
    model: str = "llama-3-8b-instruct"
    temperature: float = 0.7
    timeout: float = 60.0
    retries: int = 3
    max_in_flight: int = 4


@dataclass
class SimulationConfig:
    personas: Path
    max_iterations: int = 50
    feed_size: int = 5
    candidate_count: int = 10
    duplicate_threshold: float = 0.99
    tau: float = 0.5
    half_life: float = 3.0
    seed: int = 0
    backend: str = "scripted"
    embedding: str = "hashing"
    embedding_dim: int = DEFAULT_DIM
    feedback_limit: int = 10
    query_posts: int = 3
    workers: int = 1
    scripted: ScriptedPolicy = field(default_factory=ScriptedPolicy)
    remote: RemoteSettings = field(default_factory=RemoteSettings)

    def __post_init__(self):
        self.personas = Path(self.personas)
        if not 0.0 < self.duplicate_threshold < 1.0:
            raise ConfigError("duplicate_threshold must lie in (0, 1)")
        if self.candidate_count < 1:
            raise ConfigError("candidate_count must be at least 1")
        if self.feed_size < 0:
            raise ConfigError("feed_size must be non-negative")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be non-negative")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [0, 1]")
        if self.half_life <= 0:
            raise ConfigError("half_life must be positive")
        if self.backend not in ("scripted", "remote"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.embedding not in ("hashing", "remote"):
            raise ConfigError(f"unknown embedding provider {self.embedding!r}")
        if self.query_posts < 1 or self.workers < 1 or self.feedback_limit < 0:
            raise ConfigError("query_posts and workers must be >= 1, feedback_limit >= 0")

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: Path | None = None) -> SimulationConfig:
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "personas" not in data:
            raise ConfigError("config is missing 'personas'")
        personas = Path(data["personas"])
        if base_dir is not None and not personas.is_absolute():
            personas = base_dir / personas
        data["personas"] = personas
        try:
            if "scripted" in data:
                sp = dict(data["scripted"])
                if "post_length" in sp:
                    sp["post_length"] = tuple(sp["post_length"])
                data["scripted"] = ScriptedPolicy(**sp)
            if "remote" in data:
                data["remote"] = RemoteSettings(**data["remote"])
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["personas"] = str(self.personas)
        d["scripted"] = {f.name: getattr(self.scripted, f.name) for f in fields(self.scripted)}
        d["scripted"]["post_length"] = list(self.scripted.post_length)
        d["remote"] = {f.name: getattr(self.remote, f.name) for f in fields(self.remote)}
        return d


def load_config(path: str | Path) -> SimulationConfig:
    """Read a TOML or JSON config; relative persona paths resolve against
    the config file's directory."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw)
        else:
            data = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return SimulationConfig.from_dict(data, base_dir=path.parent)


@dataclass(frozen=True)
class PersonaRecord:
    user_id: str
    ideology_label: str
    traits: str | None = None
    corpus: tuple[str, ...] | None = None


def load_personas(path: str | Path) -> list[PersonaRecord]:
    """Parse a personas JSONL file: ``{user_id, ideology_label, traits | corpus}``."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"personas file not found: {path}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                rec = PersonaRecord(
                    user_id=str(d["user_id"]),
                    ideology_label=str(d.get("ideology_label", "")),
                    traits=d.get("traits"),
                    corpus=tuple(d["corpus"]) if d.get("corpus") else None,
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: malformed persona ({exc})") from exc
            if not (rec.traits and rec.traits.strip()) and not rec.corpus:
                raise ConfigError(f"{path}:{lineno}: persona needs traits or a corpus")
            records.append(rec)
    return records


def write_personas(personas: Sequence[Persona], user_ids: Sequence[str],
                   path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p, uid in zip(personas, user_ids):
            fh.write(json.dumps({"user_id": uid, "ideology_label": p.ideology_label,
                                 "traits": p.traits}, ensure_ascii=False) + "\n")


# -- events and state ---------------------------------------------------------

@dataclass(frozen=True)
class SimulationEvent:
    iteration: int
    phase: str
    agent: int | None
    kind: str
    target: int | None = None
    post: int | None = None
    content: str | None = None
    reason: str | None = None
    feed: tuple[int, ...] | None = None
    engagement: EngagementStats | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "iteration": self.iteration,
            "phase": self.phase,
            "agent": self.agent,
            "kind": self.kind,
            "target": self.target,
            "post": self.post,
            "content": self.content,
            "reason": self.reason,
            "feed": None if self.feed is None else list(self.feed),
            "engagement": None if self.engagement is None else self.engagement.to_json(),
        }

    def to_line(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> SimulationEvent:
        eng = d.get("engagement")
        feed = d.get("feed")
        return cls(
            iteration=d["iteration"], phase=d["phase"], agent=d["agent"], kind=d["kind"],
            target=d.get("target"), post=d.get("post"), content=d.get("content"),
            reason=d.get("reason"), feed=None if feed is None else tuple(feed),
            engagement=None if eng is None else EngagementStats(**eng),
        )


@dataclass
class SimulationState:
    config: SimulationConfig
    personas: list[Persona]
    user_ids: list[str]
    persona_vectors: np.ndarray
    graph: SocialGraph
    store: VectorStore
    posts: list[Post] = field(default_factory=list)
    stats: list[EngagementStats] = field(default_factory=list)
    memories: list[MemoryUnit] = field(default_factory=list)
    exposure_count: list[int] = field(default_factory=list)
    adoption_count: list[int] = field(default_factory=list)
    interaction_count: np.ndarray | None = None
    duplicate_counter: int = 0
    iteration: int = 0
    events: list[SimulationEvent] = field(default_factory=list)

    @property
    def agent_count(self) -> int:
        return len(self.personas)


@dataclass
class ActionRecord:
    agent: int
    decision: Decision
    feed: tuple[int, ...]


def make_embedder(config: SimulationConfig) -> Embedder:
    if config.embedding == "remote":
        return RemoteEmbedder(dim=None)
    return HashingEmbedder(config.embedding_dim)


def make_backend(config: SimulationConfig, embedder: Embedder,
                 labels: dict[int, str] | None = None) -> Backend:
    if config.backend == "remote":
        r = config.remote
        return RemoteBackend(endpoint=r.endpoint, model=r.model, temperature=r.temperature,
                             timeout=r.timeout, retries=r.retries)
    return ScriptedBackend(config.scripted, embedder, labels)


def initialize(config: SimulationConfig, backend: Backend | None = None,
               embedder: Embedder | None = None) -> tuple[SimulationState, Backend, Embedder]:
    records = load_personas(config.personas)
    if len(records) < 2:
        raise ConfigError(f"need at least 2 personas, got {len(records)}")
    embedder = embedder or make_embedder(config)
    labels = {i: r.ideology_label for i, r in enumerate(records)}
    if backend is None:
        backend = make_backend(config, embedder, labels)
    elif isinstance(backend, ScriptedBackend) and not backend.labels:
        backend.labels = labels
    personas = []
    for i, r in enumerate(records):
        if r.traits and r.traits.strip():
            personas.append(Persona(i, r.traits, r.ideology_label, r.corpus))
        else:
            personas.append(infer_persona(r.corpus, backend, i, r.ideology_label))
    vectors = np.vstack([embedder.embed(p.traits) for p in personas])
    n = len(personas)
    state = SimulationState(
        config=config,
        personas=personas,
        user_ids=[r.user_id for r in records],
        persona_vectors=vectors,
        graph=SocialGraph(n),
        store=VectorStore(vectors.shape[1]),
        memories=[MemoryUnit() for _ in range(n)],
        exposure_count=[0] * n,
        adoption_count=[0] * n,
        interaction_count=np.zeros((n, n), dtype=np.int64),
    )
    return state, backend, embedder


# -- operational phase --------------------------------------------------------

def rag_query(state: SimulationState, agent: int) -> np.ndarray:
    """Mean of the agent's most recent stored post vectors, persona if none."""
    own = state.store.posts_by(agent)[-state.config.query_posts:]
    if not own:
        return state.persona_vectors[agent]
    return np.mean([state.store.vector(p) for p in own], axis=0)


def build_feed(state: SimulationState, agent: int) -> list[FeedItem]:
    if state.config.feed_size == 0:
        return []
    ids = top_k_similar(state.store, rag_query(state, agent), state.config.feed_size,
                        exclude_author=agent)
    return [FeedItem(p, state.posts[p].author, state.posts[p].body) for p in ids]


def _decide_one(state: SimulationState, backend: Backend, agent: int) -> ActionRecord:
    feed = build_feed(state, agent)
    ctx = build_prompt(state.personas[agent], state.memories[agent], feed, state.posts,
                       state.config.feedback_limit)
    stream = rngmod.stream(state.config.seed, agent, state.iteration, "decide")
    decision = backend.decide(ctx, state.personas[agent], stream)
    try:
        validate_decision(decision, ctx)
    except InvalidDecision as exc:
        log.warning("agent %d produced an invalid decision (%s); refraining", agent, exc)
        decision = Decision.refrain("invalid-decision")
    return ActionRecord(agent, decision, tuple(f.post for f in feed))


def operational_phase(state: SimulationState, backend: Backend,
                      workers: int | None = None) -> list[ActionRecord]:
    """One decision per agent, all computed against the iteration-start state.

    Exposure counters are bumped here (one per post shown).
    """
    workers = workers or state.config.workers
    agents = range(state.agent_count)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda a: _decide_one(state, backend, a), agents))
    else:
        records = [_decide_one(state, backend, a) for a in agents]
    for rec in records:
        state.exposure_count[rec.agent] += len(rec.feed)
    return records


# -- interaction phase --------------------------------------------------------

def follow_candidates(state: SimulationState, agent: int, affinity: np.ndarray,
                      in_degrees: Sequence[int]) -> list[FollowCandidate]:
    followed = set(state.graph.followees(agent))
    pool = [b for b in range(state.agent_count) if b != agent and b not in followed]
    pool.sort(key=lambda b: (-affinity[agent, b], b))
    out = []
    for b in pool[:state.config.candidate_count]:
        p = state.personas[b]
        summary = f"{p.traits} ({in_degrees[b]} followers)"
        out.append(FollowCandidate(b, float(affinity[agent, b]), summary, in_degrees[b]))
    return out


def interaction_phase(state: SimulationState, records: Sequence[ActionRecord],
                      backend: Backend, embedder: Embedder) -> list[SimulationEvent]:
    cfg = state.config
    it = state.iteration
    events: list[SimulationEvent] = []
    first_new = len(state.posts)
    records = sorted(records, key=lambda r: r.agent)
    if [r.agent for r in records] != list(range(state.agent_count)):
        raise ValueError("interaction phase needs exactly one decision per agent")

    # 1. materialise actions
    for rec in records:
        a, d = rec.agent, rec.decision
        new_post = None
        if d.choice is Choice.PUBLISH:
            new_post = Post(len(state.posts), a, it, d.content, PostKind.ORIGINAL)
        elif d.choice.targets_post:
            target = state.posts[d.target]
            state.stats[target.id] = state.stats[target.id].bump(_REACTION_FIELD[d.choice])
            state.interaction_count[a, target.author] += 1
            if d.choice is Choice.RESHARE:
                new_post = Post(len(state.posts), a, it, target.body, PostKind.RESHARE, target.id)
                if target.id in rec.feed:
                    state.adoption_count[a] += 1
            elif d.choice is Choice.COMMENT:
                new_post = Post(len(state.posts), a, it, d.content, PostKind.COMMENT, target.id)
        if new_post is not None:
            state.posts.append(new_post)
            state.stats.append(EngagementStats())
        events.append(SimulationEvent(
            it, "action", a, _CHOICE_EVENT[d.choice], target=d.target,
            post=None if new_post is None else new_post.id,
            content=d.content or None, reason=d.reason or None, feed=rec.feed))

    # 2. who to follow (affinities from the iteration-start store)
    affinity = affinity_matrix(state.store, state.persona_vectors)
    in_degrees = [state.graph.in_degree(b) for b in range(state.agent_count)]
    for a in range(state.agent_count):
        candidates = follow_candidates(state, a, affinity, in_degrees)
        stream = rngmod.stream(cfg.seed, a, it, "follow")
        chosen = backend.decide_follows(state.personas[a], candidates, stream).to_follow
        allowed = {c.agent for c in candidates}
        for b in sorted(set(chosen) & allowed):
            if state.graph.follow(a, b):
                events.append(SimulationEvent(it, "follow", a, "Follow", target=b))

    # 3. duplicate check against the iteration-start corpus, then store update
    new_posts = state.posts[first_new:]
    vectors = [embedder.embed(p.body) for p in new_posts]
    for p, v in zip(new_posts, vectors):
        if p.kind is PostKind.ORIGINAL and is_near_duplicate(state.store, v, cfg.duplicate_threshold):
            state.duplicate_counter += 1
    for p, v in zip(new_posts, vectors):
        state.store.add(p.id, v, p.author, p.iteration, original=p.kind is PostKind.ORIGINAL)

    # 4. engagement feedback into the authors' memories
    for p in new_posts:
        state.memories[p.author].add(p.id, state.stats[p.id], it)
    for mem in state.memories:
        mem.refresh(state.stats)

    # 5. promote, then decay
    for a, mem in enumerate(state.memories):
        for pid in promote_to_ltm(mem, cfg.tau):
            events.append(SimulationEvent(it, "memory", a, "Promotion", target=pid,
                                          engagement=state.stats[pid]))
        stream = rngmod.stream(cfg.seed, a, it, "decay")
        for pid in decay_step(mem, it, stream, cfg.half_life):
            events.append(SimulationEvent(it, "memory", a, "Decay", target=pid,
                                          engagement=state.stats[pid]))

    # 6. log
    state.events.extend(events)
    state.iteration += 1
    return events


def check_stop(state: SimulationState) -> str | None:
    """Halt reason if the run should stop now, else None."""
    if state.duplicate_counter >= state.agent_count:
        return HALT_SATURATION
    if state.iteration >= state.config.max_iterations:
        return HALT_CAP
    return None


@dataclass
class RunResult:
    state: SimulationState
    snapshots: list[list[tuple[int, int]]]
    halt_reason: str

    @property
    def events(self) -> list[SimulationEvent]:
        return self.state.events


def run(config: SimulationConfig, backend: Backend | None = None,
        embedder: Embedder | None = None) -> RunResult:
    state, backend, embedder = initialize(config, backend, embedder)
    snapshots: list[list[tuple[int, int]]] = []
    reason = check_stop(state)
    while reason is None:
        records = operational_phase(state, backend)
        interaction_phase(state, records, backend, embedder)
        snapshots.append(state.graph.edges())
        log.info("iteration %d: %d posts, %d edges, %d duplicates", state.iteration - 1,
                 len(state.posts), state.graph.edge_count, state.duplicate_counter)
        reason = check_stop(state)
    state.events.append(SimulationEvent(state.iteration, "halt", None, "Halt", reason=reason))
    return RunResult(state, snapshots, reason)


# -- artifacts ----------------------------------------------------------------

def events_text(events: Iterable[SimulationEvent]) -> str:
    return "".join(e.to_line() + "\n" for e in events)


def write_run(result: RunResult, out_dir: str | Path) -> list[Path]:
    """Write events, posts and per-iteration graph snapshots; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    p = out / "events.jsonl"
    p.write_text(events_text(result.events), encoding="utf-8")
    paths.append(p)
    p = out / "posts.jsonl"
    p.write_text("".join(json.dumps(post.to_json(), ensure_ascii=False) + "\n"
                         for post in result.state.posts), encoding="utf-8")
    paths.append(p)
    n = result.state.agent_count
    for k, edges in enumerate(result.snapshots):
        p = out / f"graph_iter_{k}.csv"
        p.write_text(edge_list_csv(SocialGraph.from_edges(n, edges)), encoding="utf-8")
        paths.append(p)
    return paths
