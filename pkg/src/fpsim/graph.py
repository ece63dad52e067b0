"""Directed follower -> followee graph over dense integer agent ids."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable


class GraphError(ValueError):
    pass


class SocialGraph:
    """Append-only directed graph. An edge ``(a, b)`` means *a follows b*.

    Neighbor queries always return ids in ascending order.
    """

    def __init__(self, agent_count: int = 0):
        if agent_count < 0:
            raise GraphError("agent_count must be non-negative")
        self._followees: list[set[int]] = [set() for _ in range(agent_count)]
        self._followers: list[set[int]] = [set() for _ in range(agent_count)]
        self._edge_count = 0

    @property
    def agent_count(self) -> int:
        return len(self._followees)

    @property
    def edge_count(self) -> int:
        return self._edge_count

    def add_agent(self) -> int:
        self._followees.append(set())
        self._followers.append(set())
        return len(self._followees) - 1

    def _check(self, a: int) -> None:
        if not isinstance(a, int) or isinstance(a, bool) or not 0 <= a < self.agent_count:
            raise GraphError(f"invalid agent id {a!r} (agent_count={self.agent_count})")

    def follow(self, a: int, b: int) -> bool:
        """Insert ``a -> b``; returns True iff the edge is new."""
        self._check(a)
        self._check(b)
        if a == b:
            raise GraphError(f"agent {a} cannot follow itself")
        if b in self._followees[a]:
            return False
        self._followees[a].add(b)
        self._followers[b].add(a)
        self._edge_count += 1
        return True

    def has_edge(self, a: int, b: int) -> bool:
        self._check(a)
        self._check(b)
        return b in self._followees[a]

    def followees(self, a: int) -> list[int]:
        self._check(a)
        return sorted(self._followees[a])

    def followers(self, a: int) -> list[int]:
        self._check(a)
        return sorted(self._followers[a])

    def neighbors(self, a: int, side: str) -> list[int]:
        if side == "followee":
            return self.followees(a)
        if side == "follower":
            return self.followers(a)
        raise GraphError(f"unknown side {side!r}")

    def in_degree(self, a: int) -> int:
        self._check(a)
        return len(self._followers[a])

    def out_degree(self, a: int) -> int:
        self._check(a)
        return len(self._followees[a])

    def edges(self) -> list[tuple[int, int]]:
        return [(a, b) for a in range(self.agent_count) for b in sorted(self._followees[a])]

    def copy(self) -> SocialGraph:
        return SocialGraph.from_edges(self.agent_count, self.edges())

    @classmethod
    def from_edges(cls, agent_count: int, edges: Iterable[tuple[int, int]]) -> SocialGraph:
        g = cls(agent_count)
        for a, b in edges:
            g.follow(a, b)
        return g

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SocialGraph):
            return NotImplemented
        return self.agent_count == other.agent_count and self._followees == other._followees

    def __repr__(self) -> str:
        return f"SocialGraph(agents={self.agent_count}, edges={self.edge_count})"


def export_edge_list(g: SocialGraph) -> list[tuple[int, int]]:
    return g.edges()


def edge_list_csv(g: SocialGraph) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["follower", "followee"])
    w.writerows(g.edges())
    return buf.getvalue()


def write_edge_list(g: SocialGraph, path: str | Path) -> None:
    Path(path).write_text(edge_list_csv(g), encoding="utf-8")


def read_edge_list(path: str | Path, agent_count: int | None = None) -> SocialGraph:
    """Load a ``follower,followee`` CSV. Without ``agent_count`` the graph is
    sized to the largest id seen."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["follower", "followee"]:
            raise GraphError(f"{path}: expected header follower,followee, got {header}")
        edges = []
        for lineno, row in enumerate(reader, start=2):
            try:
                a, b = (int(x) for x in row)
            except ValueError as exc:
                raise GraphError(f"{path}:{lineno}: bad edge row {row}") from exc
            edges.append((a, b))
    n = agent_count if agent_count is not None else max((max(e) for e in edges), default=-1) + 1
    return SocialGraph.from_edges(n, edges)
