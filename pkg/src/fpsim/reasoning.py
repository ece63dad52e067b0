"""Agent reasoning: prompt assembly and the backends that turn a prompt into
a Choice-Reason-Content decision or a set of accounts to follow.

Two backends share one interface:

* ``ScriptedBackend`` is a seeded persona policy. Given the same persona,
  context and random stream it always returns the same decision, which is
  what makes runs replayable.
* ``RemoteBackend`` sends the prompt to a chat-completions endpoint and
  parses a JSON reply. Any transport or parse failure degrades to a Refrain
  (or an empty follow list) so the simulation never stalls.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import random
import re
import time
from collections import Counter
from dataclasses import dataclass
from typing import Protocol, Sequence

import httpx

from .embedding import Embedder, cosine
from .memory import EngagementStats, MemoryUnit, Post

log = logging.getLogger(__name__)

ACTIONS = ("publish", "reshare", "like", "dislike", "comment", "refrain")
ACTION_DESCRIPTIONS = {
    "publish": "publish a new post",
    "reshare": "re-share a post from your feed",
    "like": "like a post from your feed",
    "dislike": "dislike a post from your feed",
    "comment": "comment on a post from your feed",
    "refrain": "refrain from interacting this round",
}


class BackendError(RuntimeError):
    pass


class Choice(str, enum.Enum):
    PUBLISH = "publish"
    RESHARE = "reshare"
    LIKE = "like"
    DISLIKE = "dislike"
    COMMENT = "comment"
    REFRAIN = "refrain"

    @property
    def targets_post(self) -> bool:
        return self in (Choice.RESHARE, Choice.LIKE, Choice.DISLIKE, Choice.COMMENT)

    @property
    def has_content(self) -> bool:
        return self in (Choice.PUBLISH, Choice.COMMENT)


@dataclass(frozen=True)
class Persona:
    agent: int
    traits: str
    ideology_label: str = ""
    source_corpus: tuple[str, ...] | None = None

    def __post_init__(self):
        if not self.traits.strip():
            raise ValueError(f"persona {self.agent} has empty traits")


@dataclass(frozen=True)
class FeedItem:
    post: int
    author: int
    body: str


@dataclass(frozen=True)
class PromptContext:
    feedback: tuple[tuple[str, EngagementStats], ...] = ()
    feed: tuple[FeedItem, ...] = ()
    actions: tuple[str, ...] = ACTIONS

    def feed_ids(self) -> list[int]:
        return [f.post for f in self.feed]


@dataclass(frozen=True)
class Decision:
    choice: Choice
    target: int | None = None
    reason: str = ""
    content: str = ""

    @classmethod
    def refrain(cls, reason: str) -> Decision:
        return cls(Choice.REFRAIN, None, reason, "")


@dataclass(frozen=True)
class FollowCandidate:
    agent: int
    affinity: float
    summary: str = ""
    followers: int = 0


@dataclass(frozen=True)
class FollowDecision:
    to_follow: tuple[int, ...] = ()


class InvalidDecision(ValueError):
    pass


def validate_decision(decision: Decision, ctx: PromptContext) -> None:
    """Raise ``InvalidDecision`` unless the decision is well formed for ``ctx``."""
    c = decision.choice
    if c.targets_post:
        if decision.target is None or decision.target not in ctx.feed_ids():
            raise InvalidDecision(f"{c.value} must target a post shown in the feed, got {decision.target}")
    elif decision.target is not None:
        raise InvalidDecision(f"{c.value} takes no target")
    if c.has_content and not decision.content.strip():
        raise InvalidDecision(f"{c.value} requires content")
    if not c.has_content and decision.content:
        raise InvalidDecision(f"{c.value} carries no content")


def build_prompt(persona: Persona, memory: MemoryUnit, feed: Sequence[FeedItem],
                 posts: Sequence[Post], feedback_limit: int = 10) -> PromptContext:
    """Assemble feedback (own posts with their latest engagement, newest
    first), the recommended feed (order preserved) and the action list."""
    feedback = tuple((posts[it.post].body, it.engagement)
                     for it in memory.items()[:feedback_limit])
    return PromptContext(feedback=feedback, feed=tuple(feed))


class Backend(Protocol):
    name: str

    def infer_traits(self, corpus: Sequence[str], ideology_label: str) -> str: ...

    def decide(self, ctx: PromptContext, persona: Persona, rng: random.Random) -> Decision: ...

    def decide_follows(self, persona: Persona, candidates: Sequence[FollowCandidate],
                       rng: random.Random) -> FollowDecision: ...


def infer_persona(corpus: Sequence[str], backend: Backend, agent: int = 0,
                  ideology_label: str = "") -> Persona:
    corpus = [t for t in corpus if t and t.strip()]
    if not corpus:
        raise ValueError("cannot infer a persona from an empty corpus")
    traits = backend.infer_traits(corpus, ideology_label)
    return Persona(agent=agent, traits=traits, ideology_label=ideology_label,
                   source_corpus=tuple(corpus))


# -- scripted backend ---------------------------------------------------------

STOPWORDS = frozenset("""
a an the and or but if of to in on at by for with from as is are was were be been being
it its this that these those i you he she we they me him her us them my your his our their
not no so do does did have has had will would can could should just very than then there here
what which who whom how why when where all any some more most about into over after before
rt amp via ideological alignment frequently discusses engagement style topics
""".split())

_WORD = re.compile(r"[a-z0-9#@][a-z0-9#@_'-]*")


def content_words(text: str) -> list[str]:
    return [w for w in _WORD.findall(text.lower()) if w not in STOPWORDS and len(w) > 1]


def engagement_style(corpus: Sequence[str]) -> str:
    n = len(corpus)
    exclaim = sum(t.count("!") for t in corpus) / n
    question = sum(t.count("?") for t in corpus) / n
    mean_len = sum(len(t.split()) for t in corpus) / n
    if exclaim >= 1.0:
        tone = "outspoken"
    elif question >= 0.5:
        tone = "critical"
    else:
        tone = "supportive"
    return f"{tone}, {'verbose' if mean_len >= 20 else 'concise'}"


@dataclass
class ScriptedPolicy:
    post_prob: float = 0.4
    reshare: float = 0.3
    like: float = 0.4
    dislike: float = 0.1
    comment: float = 0.2
    base_follow_prob: float = 0.5
    follow_popularity: float = 0.0
    post_length: tuple[int, int] = (6, 10)
    fixed_content: str | None = None

    def __post_init__(self):
        for name in ("post_prob", "reshare", "like", "dislike", "comment", "base_follow_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.follow_popularity < 0:
            raise ValueError("follow_popularity must be non-negative")
        if self.reshare + self.like + self.dislike + self.comment <= 0:
            raise ValueError("reaction propensities must not all be zero")
        lo, hi = self.post_length
        if not 1 <= lo <= hi:
            raise ValueError(f"bad post_length {self.post_length}")


class ScriptedBackend:
    """Deterministic persona policy standing in for an LLM.

    Reacts to the feed item it finds most ideologically aligned: cosine
    between persona and post embeddings, scaled by +1 for a same-camp author
    and -0.5 for the other camp.
    """

    name = "scripted"
    SAME_CAMP = 1.0
    OTHER_CAMP = -0.5

    def __init__(self, policy: ScriptedPolicy | None = None, embedder: Embedder | None = None,
                 labels: dict[int, str] | None = None):
        self.policy = policy or ScriptedPolicy()
        self.embedder = embedder
        self.labels = labels or {}

    def infer_traits(self, corpus: Sequence[str], ideology_label: str) -> str:
        counts = Counter(w for text in corpus for w in content_words(text))
        top = [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:8]]
        label = ideology_label or "unlabelled"
        return (f"Ideological alignment: {label}. "
                f"Frequently discusses: {' '.join(top) if top else 'general news'}. "
                f"Engagement style: {engagement_style(corpus)}.")

    def _vocabulary(self, persona: Persona) -> list[str]:
        words = list(dict.fromkeys(content_words(persona.traits)))
        return words or ["news"]

    def _compose(self, persona: Persona, rng: random.Random) -> str:
        if self.policy.fixed_content is not None:
            return self.policy.fixed_content
        vocab = self._vocabulary(persona)
        n = rng.randint(*self.policy.post_length)
        return " ".join(rng.choice(vocab) for _ in range(n))

    def affinity(self, persona: Persona, item: FeedItem) -> float:
        if self.embedder is None:
            raise BackendError("scripted backend needs an embedder to score the feed")
        if not item.body.strip():
            return 0.0
        sim = cosine(self.embedder.embed(persona.traits), self.embedder.embed(item.body))
        same = self.labels.get(item.author) == persona.ideology_label
        return sim * (self.SAME_CAMP if same else self.OTHER_CAMP)

    def decide(self, ctx: PromptContext, persona: Persona, rng: random.Random) -> Decision:
        p = self.policy
        if rng.random() < p.post_prob:
            return Decision(Choice.PUBLISH, None, "wants to share a view", self._compose(persona, rng))
        if not ctx.feed:
            return Decision.refrain("nothing in the feed")
        scores = [self.affinity(persona, item) for item in ctx.feed]
        best = max(range(len(scores)), key=lambda i: (scores[i], -i))
        item = ctx.feed[best]
        weights = [(Choice.RESHARE, p.reshare), (Choice.LIKE, p.like),
                   (Choice.DISLIKE, p.dislike), (Choice.COMMENT, p.comment)]
        u = rng.random() * sum(w for _, w in weights)
        choice = weights[-1][0]
        for c, w in weights:
            if u < w:
                choice = c
                break
            u -= w
        reason = f"most aligned post in feed (score {scores[best]:.3f})"
        content = ""
        if choice is Choice.COMMENT:
            vocab = self._vocabulary(persona)
            content = " ".join(rng.choice(vocab) for _ in range(rng.randint(3, 6)))
        return Decision(choice, item.post, reason, content)

    def decide_follows(self, persona: Persona, candidates: Sequence[FollowCandidate],
                       rng: random.Random) -> FollowDecision:
        """Follow each candidate with probability
        ``base_follow_prob * affinity / max_affinity``, optionally scaled by
        ``((1 + followers) / (1 + max_followers)) ** follow_popularity``."""
        if not candidates:
            return FollowDecision()
        top = max(c.affinity for c in candidates)
        most_followed = max(c.followers for c in candidates)
        beta = self.policy.follow_popularity
        chosen = []
        for c in candidates:
            weight = max(c.affinity, 0.0) / top if top > 0 else 1.0
            if beta:
                weight *= ((1 + c.followers) / (1 + most_followed)) ** beta
            if rng.random() < min(1.0, self.policy.base_follow_prob * weight):
                chosen.append(c.agent)
        return FollowDecision(tuple(chosen))


# -- remote backend -----------------------------------------------------------

def first_json_object(text: str) -> dict:
    """Return the first JSON object embedded in ``text``."""
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", text):
        try:
            obj, _ = decoder.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    raise ValueError("no JSON object in reply")


def render_system_prompt(persona: Persona) -> str:
    return (
        "You are a user of a social media platform. Stay in character.\n"
        f"Your profile: {persona.traits}\n"
        "Answer with a single JSON object and nothing else."
    )


def render_decision_prompt(ctx: PromptContext) -> str:
    lines = ["## Feedback on your previous posts"]
    if not ctx.feedback:
        lines.append("(you have not posted yet)")
    for body, st in ctx.feedback:
        lines.append(f"- \"{body}\" | re-shares: {st.reshares}, likes: {st.likes}, "
                     f"dislikes: {st.dislikes}, comments: {st.comments}")
    lines.append("")
    lines.append("## Your feed")
    if not ctx.feed:
        lines.append("(empty)")
    for item in ctx.feed:
        lines.append(f"- post {item.post} by user {item.author}: \"{item.body}\"")
    lines.append("")
    lines.append("## Available actions")
    for a in ctx.actions:
        lines.append(f"- {a}: {ACTION_DESCRIPTIONS[a]}")
    lines.append("")
    lines.append(
        'Reply as {"choice": <action>, "target": <post id or null>, '
        '"reason": <why>, "content": <text of a new post or comment, else "">}.'
    )
    return "\n".join(lines)


def render_follow_prompt(candidates: Sequence[FollowCandidate]) -> str:
    lines = ["## Who to follow", "These users post content similar to yours:"]
    for c in candidates:
        lines.append(f"- user {c.agent}: {c.summary}")
    lines.append("")
    lines.append('Reply as {"follow": [<user ids you want to follow>]}.')
    return "\n".join(lines)


def parse_decision(reply: str, ctx: PromptContext) -> Decision:
    obj = first_json_object(reply)
    try:
        choice = Choice(str(obj["choice"]).strip().lower())
    except (KeyError, ValueError) as exc:
        raise InvalidDecision(f"bad choice in {obj!r}") from exc
    target = obj.get("target")
    if choice.targets_post:
        try:
            target = int(target)
        except (TypeError, ValueError) as exc:
            raise InvalidDecision(f"bad target {target!r}") from exc
    else:
        target = None
    content = str(obj.get("content") or "") if choice.has_content else ""
    decision = Decision(choice, target, str(obj.get("reason") or ""), content)
    validate_decision(decision, ctx)
    return decision


class RemoteBackend:
    """Chat-completions client (``LLM_ENDPOINT`` / ``LLM_API_KEY``)."""

    name = "remote"

    def __init__(self, endpoint: str | None = None, api_key: str | None = None,
                 model: str = "llama-3-8b-instruct", temperature: float = 0.7,
                 timeout: float = 60.0, retries: int = 3, client: httpx.Client | None = None,
                 backoff: float = 0.5):
        self.endpoint = endpoint or os.environ.get("LLM_ENDPOINT", "")
        if not self.endpoint:
            raise BackendError("no reasoning endpoint configured (set LLM_ENDPOINT)")
        self.api_key = api_key if api_key is not None else os.environ.get("LLM_API_KEY", "")
        self.model = model
        self.temperature = temperature
        self.retries = retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict[str, str]:
        return {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}

    def ping(self) -> None:
        """Raise ``BackendError`` if nothing answers at the endpoint."""
        try:
            self._client.get(self.endpoint, headers=self._headers())
        except httpx.HTTPError as exc:
            raise BackendError(f"reasoning endpoint {self.endpoint} unreachable: {exc}") from exc

    def chat(self, system: str, user: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "system", "content": system},
                         {"role": "user", "content": user}],
            "temperature": self.temperature,
        }
        last: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = self._client.post(self.endpoint, json=payload, headers=self._headers())
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                log.warning("chat attempt %d/%d failed: %r", attempt + 1, self.retries, exc)
                if self.backoff:
                    time.sleep(self.backoff * (attempt + 1))
        raise BackendError(f"chat failed after {self.retries} attempts: {last!r}")

    def infer_traits(self, corpus: Sequence[str], ideology_label: str) -> str:
        posts = "\n".join(f"- {t}" for t in corpus)
        user = (
            "Here are posts written by one social media user:\n"
            f"{posts}\n\n"
            "Describe this user's personality: ideological alignment, key interests and "
            'engagement style. Reply as {"traits": <one paragraph>}.'
        )
        system = "You analyse social media users. Answer with a single JSON object."
        reply = self.chat(system, user)
        try:
            traits = str(first_json_object(reply)["traits"]).strip()
        except (ValueError, KeyError):
            traits = reply.strip()
        if not traits:
            raise BackendError("backend returned empty traits")
        if ideology_label and ideology_label.lower() not in traits.lower():
            traits = f"Ideological alignment: {ideology_label}. {traits}"
        return traits

    def decide(self, ctx: PromptContext, persona: Persona, rng: random.Random) -> Decision:
        system, user = render_system_prompt(persona), render_decision_prompt(ctx)
        for attempt in range(self.retries):
            try:
                reply = self.chat(system, user)
            except BackendError:
                return Decision.refrain("backend-transport-failure")
            try:
                return parse_decision(reply, ctx)
            except (ValueError, InvalidDecision) as exc:
                log.info("unparseable decision (attempt %d): %s", attempt + 1, exc)
        return Decision.refrain("backend-parse-failure")

    def decide_follows(self, persona: Persona, candidates: Sequence[FollowCandidate],
                       rng: random.Random) -> FollowDecision:
        if not candidates:
            return FollowDecision()
        try:
            reply = self.chat(render_system_prompt(persona), render_follow_prompt(candidates))
            picked = first_json_object(reply).get("follow", [])
        except (BackendError, ValueError):
            return FollowDecision()
        valid = {c.agent for c in candidates}
        chosen = []
        for x in picked if isinstance(picked, list) else []:
            try:
                x = int(x)
            except (TypeError, ValueError):
                continue
            if x in valid and x not in chosen:
                chosen.append(x)
        return FollowDecision(tuple(sorted(chosen)))
