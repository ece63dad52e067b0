"""Posts, engagement counters and the per-agent short/long-term memory unit.

An item's removal probability from short-term memory is
``1 - (popularity + recency) / 2`` where popularity is the item's engagement
relative to the most engaged item currently in STM and recency halves every
``half_life`` iterations. Items whose popularity exceeds ``tau`` are copied
into long-term memory before decay runs.
"""
from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field, replace

DEFAULT_HALF_LIFE = 3.0
DEFAULT_TAU = 0.5


class MemoryUnitError(ValueError):
    pass


class PostKind(str, enum.Enum):
    ORIGINAL = "original"
    RESHARE = "reshare"
    COMMENT = "comment"


@dataclass(frozen=True)
class Post:
    id: int
    author: int
    iteration: int
    body: str
    kind: PostKind = PostKind.ORIGINAL
    target: int | None = None

    def __post_init__(self):
        if self.kind is PostKind.ORIGINAL:
            if self.target is not None:
                raise ValueError("original posts have no target")
        elif self.target is None:
            raise ValueError(f"{self.kind.value} post needs a target")
        if self.kind is not PostKind.RESHARE and not self.body.strip():
            raise ValueError(f"{self.kind.value} post needs a non-empty body")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "author": self.author,
            "iteration": self.iteration,
            "kind": self.kind.value,
            "target": self.target,
            "body": self.body,
        }

    @classmethod
    def from_json(cls, d: dict) -> Post:
        return cls(
            id=int(d["id"]),
            author=int(d["author"]),
            iteration=int(d["iteration"]),
            body=d["body"],
            kind=PostKind(d["kind"]),
            target=None if d.get("target") is None else int(d["target"]),
        )


@dataclass(frozen=True)
class EngagementStats:
    reshares: int = 0
    likes: int = 0
    dislikes: int = 0
    comments: int = 0

    @property
    def total(self) -> int:
        return self.reshares + self.likes + self.dislikes + self.comments

    def bump(self, reaction: str) -> EngagementStats:
        """Return a copy with one more ``reaction`` (reshares/likes/dislikes/comments)."""
        return replace(self, **{reaction: getattr(self, reaction) + 1})

    def to_json(self) -> dict:
        return {"reshares": self.reshares, "likes": self.likes,
                "dislikes": self.dislikes, "comments": self.comments}


@dataclass
class MemoryItem:
    post: int
    engagement: EngagementStats
    created_iteration: int


@dataclass
class MemoryUnit:
    stm: list[MemoryItem] = field(default_factory=list)
    ltm: list[MemoryItem] = field(default_factory=list)

    def stm_ids(self) -> list[int]:
        return [it.post for it in self.stm]

    def ltm_ids(self) -> list[int]:
        return [it.post for it in self.ltm]

    def add(self, post: int, engagement: EngagementStats, iteration: int) -> None:
        if any(it.post == post for it in self.stm):
            raise MemoryUnitError(f"post {post} already in STM")
        self.stm.append(MemoryItem(post, engagement, iteration))

    def refresh(self, stats: dict[int, EngagementStats] | list[EngagementStats]) -> None:
        """Overwrite every held snapshot with the latest counters."""
        for it in self.stm:
            it.engagement = stats[it.post]
        for it in self.ltm:
            it.engagement = stats[it.post]

    def items(self) -> list[MemoryItem]:
        """STM and LTM merged by post id, newest post first."""
        merged = {it.post: it for it in self.ltm}
        merged.update({it.post: it for it in self.stm})
        return sorted(merged.values(), key=lambda it: (-it.created_iteration, -it.post))


def _find(mem: MemoryUnit, item: MemoryItem) -> None:
    if not any(it.post == item.post for it in mem.stm):
        raise MemoryUnitError(f"post {item.post} is not in short-term memory")


def popularity(item: MemoryItem, mem: MemoryUnit) -> float:
    _find(mem, item)
    top = max(it.engagement.total for it in mem.stm)
    if top == 0:
        return 0.0
    return item.engagement.total / top


def recency(item: MemoryItem, now: int, half_life: float = DEFAULT_HALF_LIFE) -> float:
    age = now - item.created_iteration
    if age < 0:
        raise MemoryUnitError(f"item created at {item.created_iteration} is in the future of {now}")
    return 2.0 ** (-age / half_life)


def removal_from_scores(p: float, r: float) -> float:
    return 1.0 - (p + r) / 2.0


def removal_probability(item: MemoryItem, mem: MemoryUnit, now: int,
                        half_life: float = DEFAULT_HALF_LIFE) -> float:
    return removal_from_scores(popularity(item, mem), recency(item, now, half_life))


def promote_to_ltm(mem: MemoryUnit, tau: float = DEFAULT_TAU) -> list[int]:
    """Copy every STM item with popularity strictly above ``tau`` into LTM.

    Already-promoted posts get their engagement snapshot refreshed instead of
    a second entry. Returns the newly promoted ids, in STM order.
    """
    if not 0.0 <= tau <= 1.0:
        raise MemoryUnitError(f"tau must lie in [0, 1], got {tau}")
    if not mem.stm:
        return []
    scores = [popularity(it, mem) for it in mem.stm]
    ltm_index = {it.post: i for i, it in enumerate(mem.ltm)}
    promoted = []
    for it, score in zip(mem.stm, scores):
        if score <= tau:
            continue
        copy = MemoryItem(it.post, it.engagement, it.created_iteration)
        if it.post in ltm_index:
            mem.ltm[ltm_index[it.post]] = copy
        else:
            ltm_index[it.post] = len(mem.ltm)
            mem.ltm.append(copy)
            promoted.append(it.post)
    return promoted


def decay_step(mem: MemoryUnit, now: int, rng: random.Random,
               half_life: float = DEFAULT_HALF_LIFE) -> list[int]:
    """Drop each STM item independently with its removal probability.

    All probabilities are computed from the STM as it stands before any
    removal. One uniform draw is consumed per item, in STM order.
    """
    probs = [removal_probability(it, mem, now, half_life) for it in mem.stm]
    kept, removed = [], []
    for it, prob in zip(mem.stm, probs):
        if rng.random() < prob:
            removed.append(it.post)
        else:
            kept.append(it)
    mem.stm = kept
    return removed
