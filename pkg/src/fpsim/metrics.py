"""Nodal attributes and neighbor-superiority analysis.

An agent *experiences superiority* for an attribute on one side (its
followees or its followers) when its own value is strictly below the mean or
median of those neighbors' values. Agents with no neighbors on that side are
not eligible and are left out of the percentage.

Attributes, per agent:

==========  =========================================================
in_degree   followers
out_degree  followees
NT          originals + reshares authored (comments excluded)
NOT         originals authored
TTR         reshares received on the agent's posts
RPT         TTR / NOT (0 when NOT is 0)
IAR         reshares performed / feed exposures (0 when never exposed)
==========  =========================================================
"""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import SocialGraph

ATTRIBUTES = ("in_degree", "out_degree", "NT", "NOT", "TTR", "RPT", "IAR")
SIDES = ("follower", "followee")
AGGREGATORS = ("mean", "median")
DEFAULT_KS: tuple[int | None, ...] = (1, 3, None)
REACTION_KINDS = ("Reshare", "Like", "Dislike", "Comment")


class LogError(ValueError):
    """Raised for event logs that do not describe a consistent run."""


@dataclass
class NodalAttributes:
    in_degree: list[int]
    out_degree: list[int]
    NT: list[int]
    NOT: list[int]
    TTR: list[int]
    RPT: list[float]
    IAR: list[float]

    @property
    def agent_count(self) -> int:
        return len(self.in_degree)

    def column(self, name: str) -> list[float]:
        if name not in ATTRIBUTES:
            raise KeyError(f"unknown attribute {name!r}")
        return getattr(self, name)

    def rows(self) -> list[dict]:
        return [{a: self.column(a)[i] for a in ATTRIBUTES} for i in range(self.agent_count)]

    @classmethod
    def from_counts(cls, graph: SocialGraph, nt, not_, ttr, adoption, exposure) -> NodalAttributes:
        n = graph.agent_count
        return cls(
            in_degree=[graph.in_degree(a) for a in range(n)],
            out_degree=[graph.out_degree(a) for a in range(n)],
            NT=list(nt), NOT=list(not_), TTR=list(ttr),
            RPT=[ttr[a] / not_[a] if not_[a] > 0 else 0.0 for a in range(n)],
            IAR=[adoption[a] / exposure[a] if exposure[a] > 0 else 0.0 for a in range(n)],
        )


@dataclass
class RunObservations:
    """What the analyzer needs from a run: final graph, attributes and the
    directed interaction counts (``interactions[a][b]``: a's reactions to b's posts)."""
    graph: SocialGraph
    attributes: NodalAttributes
    interactions: np.ndarray
    adoption: list[int]
    exposure: list[int]


def observations_from_state(state) -> RunObservations:
    n = state.agent_count
    nt, not_, ttr = [0] * n, [0] * n, [0] * n
    for p in state.posts:
        if p.kind.value == "original":
            not_[p.author] += 1
            nt[p.author] += 1
        elif p.kind.value == "reshare":
            nt[p.author] += 1
            ttr[state.posts[p.target].author] += 1
    attrs = NodalAttributes.from_counts(state.graph, nt, not_, ttr,
                                        state.adoption_count, state.exposure_count)
    return RunObservations(state.graph, attrs, state.interaction_count.copy(),
                           list(state.adoption_count), list(state.exposure_count))


def observations_from_events(events: Iterable, agent_count: int,
                             graph: SocialGraph | None = None) -> RunObservations:
    """Rebuild every counter from the raw event log.

    ``events`` may be ``SimulationEvent`` objects or their JSON dicts. If
    ``graph`` is given it must agree with the log's Follow events.
    """
    n = agent_count
    nt, not_, ttr = [0] * n, [0] * n, [0] * n
    adoption, exposure = [0] * n, [0] * n
    interactions = np.zeros((n, n), dtype=np.int64)
    author: dict[int, int] = {}
    log_graph = SocialGraph(n)

    for idx, ev in enumerate(events, start=1):
        d = ev if isinstance(ev, Mapping) else ev.to_json()
        kind, a = d["kind"], d["agent"]
        if kind == "Halt":
            continue
        if not isinstance(a, int) or not 0 <= a < n:
            raise LogError(f"event {idx}: agent {a!r} out of range")
        feed = d.get("feed")
        if feed is not None:
            unknown = [p for p in feed if p not in author]
            if unknown:
                raise LogError(f"event {idx}: feed shows unknown posts {unknown}")
            exposure[a] += len(feed)
        if kind == "Publish":
            author[d["post"]] = a
            not_[a] += 1
            nt[a] += 1
        elif kind in REACTION_KINDS:
            target = d["target"]
            if target not in author:
                raise LogError(f"event {idx}: {kind} of unknown post {target}")
            interactions[a, author[target]] += 1
            if kind == "Reshare":
                author[d["post"]] = a
                nt[a] += 1
                ttr[author[target]] += 1
                if feed is None or target in feed:
                    adoption[a] += 1
            elif kind == "Comment":
                author[d["post"]] = a
        elif kind == "Follow":
            try:
                log_graph.follow(a, d["target"])
            except ValueError as exc:
                raise LogError(f"event {idx}: {exc}") from exc

    if graph is not None and graph != log_graph:
        raise LogError("graph snapshot disagrees with the Follow events in the log")
    attrs = NodalAttributes.from_counts(log_graph, nt, not_, ttr, adoption, exposure)
    return RunObservations(log_graph, attrs, interactions, adoption, exposure)


# -- superiority --------------------------------------------------------------

def aggregate(values: Sequence[float], aggregator: str) -> float:
    if aggregator == "mean":
        return math.fsum(values) / len(values)
    if aggregator == "median":
        return statistics.median(values)
    raise ValueError(f"unknown aggregator {aggregator!r}")


def _superiority(values: Sequence[float], neighbor_lists: Sequence[Sequence[int]],
                 aggregator: str) -> tuple[float | None, int]:
    eligible = count = 0
    for own, nbrs in zip(values, neighbor_lists):
        if not nbrs:
            continue
        eligible += 1
        if own < aggregate([values[b] for b in nbrs], aggregator):
            count += 1
    if eligible == 0:
        return None, 0
    return 100.0 * count / eligible, eligible


def neighbor_superiority(attrs: NodalAttributes, graph: SocialGraph, attribute: str,
                         side: str, aggregator: str = "mean") -> tuple[float | None, int]:
    """(percentage of eligible agents experiencing superiority, eligible count).

    The percentage is None when nobody is eligible.
    """
    nbrs = [graph.neighbors(a, side) for a in range(graph.agent_count)]
    return _superiority(attrs.column(attribute), nbrs, aggregator)


def top_k_neighbors(graph: SocialGraph, interactions: np.ndarray, a: int, k: int | None,
                    side: str) -> list[int]:
    """Neighbors on ``side`` ranked by how often ``a`` interacts with them.

    Followee side ranks by a's reactions to b; follower side by b's reactions
    to a. Ties go to the lower id. ``k=None`` keeps every neighbor.
    """
    nbrs = graph.neighbors(a, side)
    if k is None or (isinstance(k, float) and math.isinf(k)):
        return nbrs
    if k < 1:
        raise ValueError("k must be at least 1")
    if side == "followee":
        freq = {b: int(interactions[a, b]) for b in nbrs}
    else:
        freq = {b: int(interactions[b, a]) for b in nbrs}
    return sorted(nbrs, key=lambda b: (-freq[b], b))[:int(k)]


def restricted_superiority(attrs: NodalAttributes, graph: SocialGraph, interactions: np.ndarray,
                           attribute: str, side: str, aggregator: str = "mean",
                           k: int | None = None) -> tuple[float | None, int]:
    nbrs = [top_k_neighbors(graph, interactions, a, k, side) for a in range(graph.agent_count)]
    return _superiority(attrs.column(attribute), nbrs, aggregator)


# -- correlations -------------------------------------------------------------

def _as_integers(values: Sequence[float]) -> list[int]:
    """Scale floats by a common power of two so every value is an exact int."""
    ratios = [Fraction(v).as_integer_ratio() if not isinstance(v, int) else (v, 1) for v in values]
    den = max(d for _, d in ratios)
    return [n * (den // d) for n, d in ratios]


def pearson(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Sample Pearson r, or None if either input is constant.

    Inputs are scaled to exact integers (the scale cancels), so all sums are
    exact and the result is correctly rounded up to the final square root.
    """
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need two equal-length sequences of at least 2 values")
    ix, iy = _as_integers(x), _as_integers(y)
    n = len(ix)
    sx, sy = sum(ix), sum(iy)
    sxy = n * sum(a * b for a, b in zip(ix, iy)) - sx * sy
    sxx = n * sum(a * a for a in ix) - sx * sx
    syy = n * sum(b * b for b in iy) - sy * sy
    if sxx == 0 or syy == 0:
        return None
    r = math.copysign(math.sqrt(float(Fraction(sxy * sxy, sxx * syy))), sxy)
    return max(-1.0, min(1.0, r))


def pearson_matrix(attrs: NodalAttributes) -> list[list[float | None]]:
    if attrs.agent_count < 2:
        raise ValueError("need at least 2 agents for correlations")
    cols = [attrs.column(a) for a in ATTRIBUTES]
    m = len(cols)
    out: list[list[float | None]] = [[None] * m for _ in range(m)]
    for i in range(m):
        for j in range(i, m):
            r = pearson(cols[i], cols[j])
            if i == j and r is not None:
                r = 1.0
            out[i][j] = out[j][i] = r
    return out


# -- report -------------------------------------------------------------------

def k_label(k: int | None) -> str:
    return "inf" if k is None else str(k)


def parse_k(text: str) -> int | None:
    text = text.strip().lower()
    if text in ("inf", "infinity", "all", "∞"):
        return None
    k = int(text)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return k


@dataclass(frozen=True)
class SuperiorityRow:
    attribute: str
    side: str
    aggregator: str
    k: str
    percentage: float | None
    eligible: int


@dataclass
class SuperiorityReport:
    agent_count: int
    rows: list[SuperiorityRow]

    def get(self, attribute: str, side: str, aggregator: str = "mean",
            k: int | None = None) -> SuperiorityRow:
        key = (attribute, side, aggregator, k_label(k))
        for r in self.rows:
            if (r.attribute, r.side, r.aggregator, r.k) == key:
                return r
        raise KeyError(key)

    def to_json(self) -> dict:
        return {"agent_count": self.agent_count, "rows": [asdict(r) for r in self.rows]}

    @classmethod
    def from_json(cls, d: dict) -> SuperiorityReport:
        return cls(d["agent_count"], [SuperiorityRow(**r) for r in d["rows"]])


def superiority_report(obs: RunObservations, ks: Sequence[int | None] = DEFAULT_KS,
                       aggregators: Sequence[str] = AGGREGATORS) -> SuperiorityReport:
    rows = []
    for attribute in ATTRIBUTES:
        for side in SIDES:
            for agg in aggregators:
                for k in ks:
                    pct, eligible = restricted_superiority(
                        obs.attributes, obs.graph, obs.interactions, attribute, side, agg, k)
                    rows.append(SuperiorityRow(attribute, side, agg, k_label(k), pct, eligible))
    return SuperiorityReport(obs.graph.agent_count, rows)


REPORT_COLUMNS = ("attribute", "side", "aggregator", "k", "percentage", "eligible")


def report_csv(report: SuperiorityReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in report.rows:
        w.writerow([r.attribute, r.side, r.aggregator, r.k,
                    "" if r.percentage is None else repr(r.percentage), r.eligible])
    return buf.getvalue()


def correlations_csv(matrix: Sequence[Sequence[float | None]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["attribute", *ATTRIBUTES])
    for name, row in zip(ATTRIBUTES, matrix):
        w.writerow([name, *("" if v is None else repr(v) for v in row)])
    return buf.getvalue()


def write_report(report: SuperiorityReport, correlations: Sequence[Sequence[float | None]] | None,
                 out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.csv", out / "report.json"]
    paths[0].write_text(report_csv(report), encoding="utf-8")
    paths[1].write_text(json.dumps(report.to_json(), indent=1) + "\n", encoding="utf-8")
    if correlations is not None:
        p = out / "correlations.csv"
        p.write_text(correlations_csv(correlations), encoding="utf-8")
        paths.append(p)
    return paths


def summary_tsv(report: SuperiorityReport) -> str:
    """Table-1 style summary over the unrestricted neighbor sets."""
    aggs = sorted({r.aggregator for r in report.rows}, key=AGGREGATORS.index)
    header = ["attribute"] + [f"{agg}_{side}_pct" for agg in aggs for side in SIDES]
    lines = ["\t".join(header)]
    have_inf = any(r.k == "inf" for r in report.rows)
    k = None if have_inf else int(report.rows[0].k)
    for attribute in ATTRIBUTES:
        cells = [attribute]
        for agg in aggs:
            for side in SIDES:
                pct = report.get(attribute, side, agg, k).percentage
                cells.append("NA" if pct is None else f"{pct:.2f}")
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"
