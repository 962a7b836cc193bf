"""Information flow graphs and exact min-cut verification.

A storage system's history (initial placement, failures, newcomers) is
turned into a DAG: a source ``S``, one ``(in, i) -> (out, i)`` edge per
storage node carrying what the node stores, infinite edges from ``S`` to
the initial nodes, and one edge per helper of each newcomer carrying the
helper's upload.  Data collectors are temporary sinks hooked to ``k``
storage outputs with infinite edges.  All capacities are exact
``Fraction`` values in units of the file size.
"""

from __future__ import annotations

import itertools
import math
import random
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from .errors import InvalidEvent, NoThreshold

SOURCE = "S"


def v_in(node: int):
    return ("in", node)


def v_out(node: int):
    return ("out", node)


# ---------------------------------------------------------------------------
# event log


@dataclass(frozen=True)
class Init:
    count: int
    storage: Fraction


@dataclass(frozen=True)
class Fail:
    node: int


@dataclass(frozen=True)
class Join:
    node: int
    download: Fraction
    helpers: tuple[int, ...]
    # None: store min(total download, per-node storage of the initial placement)
    storage: Fraction | None = None


Event = Init | Fail | Join


def _frac(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise InvalidEvent(f"bad rational {text!r}") from exc


def _fmt(x: Fraction) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


@dataclass
class EventLog:
    events: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    @classmethod
    def parse(cls, text: str) -> "EventLog":
        """Read the line format::

            init <n> <perNodeStorage>
            fail <id>
            join <id> <download> <helperId>... [store=<p/q>]
        """
        events = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            op, *args = line.split()
            try:
                if op == "init" and len(args) == 2:
                    events.append(Init(int(args[0]), _frac(args[1])))
                elif op == "fail" and len(args) == 1:
                    events.append(Fail(int(args[0])))
                elif op == "join" and len(args) >= 3:
                    storage = None
                    if args[-1].startswith("store="):
                        storage = _frac(args.pop()[len("store="):])
                    helpers = tuple(int(h) for h in args[2:])
                    events.append(Join(int(args[0]), _frac(args[1]), helpers, storage))
                else:
                    raise InvalidEvent(f"line {lineno}: cannot parse {raw!r}")
            except ValueError as exc:
                raise InvalidEvent(f"line {lineno}: {exc}") from exc
        return cls(events)

    def dumps(self) -> str:
        lines = []
        for ev in self.events:
            if isinstance(ev, Init):
                lines.append(f"init {ev.count} {_fmt(ev.storage)}")
            elif isinstance(ev, Fail):
                lines.append(f"fail {ev.node}")
            else:
                parts = ["join", str(ev.node), _fmt(ev.download), *map(str, ev.helpers)]
                if ev.storage is not None:
                    parts.append(f"store={_fmt(ev.storage)}")
                lines.append(" ".join(parts))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# graph


@dataclass
class StorageNode:
    node: int
    storage: Fraction
    joined: int  # index of the stage at which the node became active
    failed: int | None = None
    helpers: tuple[int, ...] = ()
    download: Fraction = Fraction(0)


@dataclass(frozen=True)
class Edge:
    u: object
    v: object
    cap: Fraction | None  # None means infinite

    @property
    def infinite(self) -> bool:
        return self.cap is None


class FlowGraph:
    """The information flow graph after replaying an :class:`EventLog`.

    ``stages[s]`` is the set of active storage nodes after event ``s``.
    """

    def __init__(self):
        self.nodes: dict[int, StorageNode] = {}
        self.edges: list[Edge] = []
        self.stages: list[frozenset[int]] = []
        self.init_storage: Fraction | None = None

    @property
    def active(self) -> frozenset[int]:
        return self.stages[-1] if self.stages else frozenset()

    @property
    def vertices(self) -> list:
        out = [SOURCE]
        for i in self.nodes:
            out += [v_in(i), v_out(i)]
        return out

    def finite_total(self) -> Fraction:
        return sum((e.cap for e in self.edges if e.cap is not None), Fraction(0))

    def infinity(self) -> Fraction:
        """Sentinel capacity for infinite edges: strictly above all finite capacity."""
        return self.finite_total() + 1

    def capacity(self, u, v) -> Fraction | None:
        for e in self.edges:
            if e.u == u and e.v == v:
                return e.cap
        raise KeyError((u, v))

    def active_at(self, stage: int) -> frozenset[int]:
        return self.stages[stage]

    def join_stage(self, node: int) -> int:
        return self.nodes[node].joined


def build(log: EventLog | Iterable) -> FlowGraph:
    g = FlowGraph()
    active: set[int] = set()
    for stage, ev in enumerate(log):
        if isinstance(ev, Init):
            if g.nodes:
                raise InvalidEvent("init must be the first and only placement")
            if ev.count < 1 or ev.storage < 0:
                raise InvalidEvent(f"bad init {ev}")
            g.init_storage = Fraction(ev.storage)
            for i in range(1, ev.count + 1):
                g.nodes[i] = StorageNode(i, Fraction(ev.storage), stage)
                g.edges.append(Edge(SOURCE, v_in(i), None))
                g.edges.append(Edge(v_in(i), v_out(i), Fraction(ev.storage)))
                active.add(i)
        elif isinstance(ev, Fail):
            if ev.node not in active:
                raise InvalidEvent(f"fail of inactive node {ev.node}")
            active.discard(ev.node)
            g.nodes[ev.node].failed = stage
        elif isinstance(ev, Join):
            if not g.nodes:
                raise InvalidEvent("join before init")
            if ev.node in g.nodes:
                raise InvalidEvent(f"node id {ev.node} already used")
            if len(set(ev.helpers)) != len(ev.helpers) or not ev.helpers:
                raise InvalidEvent(f"join {ev.node}: helpers must be distinct and non-empty")
            for h in ev.helpers:
                if h not in active:
                    raise InvalidEvent(f"join {ev.node}: helper {h} is not active")
            if ev.download < 0:
                raise InvalidEvent("negative download")
            storage = ev.storage
            if storage is None:
                storage = min(ev.download * len(ev.helpers), g.init_storage)
            g.nodes[ev.node] = StorageNode(
                ev.node, Fraction(storage), stage, None, tuple(ev.helpers), Fraction(ev.download)
            )
            for h in ev.helpers:
                g.edges.append(Edge(v_out(h), v_in(ev.node), Fraction(ev.download)))
            g.edges.append(Edge(v_in(ev.node), v_out(ev.node), Fraction(storage)))
            active.add(ev.node)
        else:
            raise InvalidEvent(f"unknown event {ev!r}")
        g.stages.append(frozenset(active))
    return g


# ---------------------------------------------------------------------------
# max-flow


@dataclass(frozen=True)
class CutValue:
    value: Fraction
    witness: tuple[Edge, ...]
    collector: tuple[int, ...] = ()


class _Network:
    """Integer residual network for one graph, reused across collectors.

    Capacities are scaled by the lcm of their denominators so augmenting
    paths run on Python ints; results are scaled back exactly.
    """

    def __init__(self, g: FlowGraph):
        self.g = g
        finite = [e.cap for e in g.edges if e.cap is not None]
        self.scale = math.lcm(*(c.denominator for c in finite)) if finite else 1
        total = sum(int(c * self.scale) for c in finite)
        self.inf = total + 1
        self.index = {v: i for i, v in enumerate(g.vertices)}
        self.sink = len(self.index)
        self.adj: list[list[int]] = [[] for _ in range(self.sink + 1)]
        self.head: list[int] = []
        self.cap: list[int] = []
        self.origin: list[Edge | None] = []
        for e in g.edges:
            c = self.inf if e.cap is None else int(e.cap * self.scale)
            self._add(self.index[e.u], self.index[e.v], c, e)

    def _add(self, u, v, c, origin=None):
        self.adj[u].append(len(self.head))
        self.head.append(v)
        self.cap.append(c)
        self.origin.append(origin)
        self.adj[v].append(len(self.head))
        self.head.append(u)
        self.cap.append(0)
        self.origin.append(None)

    def max_flow(self, collector: Sequence[int], limit: Fraction | None = None):
        """Edmonds-Karp from S to a sink attached to ``collector``.

        Returns (value, witness). With ``limit`` set, stops as soon as the
        flow reaches it and returns witness ``None``.
        """
        base = len(self.head)
        touched = []
        for node in collector:
            u = self.index[v_out(node)]
            touched.append(u)
            self._add(u, self.sink, self.inf)
        try:
            res = self.cap[:]
            head, adj = self.head, self.adj
            src, sink = self.index[SOURCE], self.sink
            stop = None if limit is None else math.ceil(limit * self.scale)
            flow = 0
            n = len(adj)
            while True:
                parent = [-1] * n
                parent[src] = -2
                queue = deque([src])
                while queue and parent[sink] == -1:
                    u = queue.popleft()
                    for e in adj[u]:
                        if res[e] > 0:
                            w = head[e]
                            if parent[w] == -1:
                                parent[w] = e
                                queue.append(w)
                if parent[sink] == -1:
                    break
                push = None
                w = sink
                while w != src:
                    e = parent[w]
                    push = res[e] if push is None else min(push, res[e])
                    w = head[e ^ 1]
                w = sink
                while w != src:
                    e = parent[w]
                    res[e] -= push
                    res[e ^ 1] += push
                    w = head[e ^ 1]
                flow += push
                if stop is not None and flow >= stop:
                    return Fraction(flow, self.scale), None
            # parent[] now marks the residual-reachable side of a minimum cut
            witness = tuple(
                self.origin[e]
                for e in range(0, base, 2)
                if parent[head[e ^ 1]] != -1 and parent[head[e]] == -1
            )
            return Fraction(flow, self.scale), witness
        finally:
            del self.head[base:], self.cap[base:], self.origin[base:]
            for u in touched:
                self.adj[u].pop()
            self.adj[self.sink].clear()


def min_cut(g: FlowGraph, collector: Iterable[int]) -> CutValue:
    """Exact S-to-collector min-cut, with the cut edges as witness."""
    collector = tuple(sorted(collector))
    for node in collector:
        if node not in g.nodes:
            raise KeyError(f"unknown storage node {node}")
    value, witness = _Network(g).max_flow(collector)
    return CutValue(value, witness, collector)


# ---------------------------------------------------------------------------
# collector enumeration


def _twin_classes(graphs: Sequence[FlowGraph]) -> dict[int, int]:
    """Partition storage nodes into twin classes.

    Two nodes are twins when they have the same timeline, the same stored
    amount and identical in/out neighbourhoods with identical capacities in
    every given graph; swapping them is then a graph automorphism, so
    collectors that differ only by swapping twins have equal min-cuts.
    """
    sigs = {}
    for i in graphs[0].nodes:
        sig = []
        for g in graphs:
            node = g.nodes[i]
            ins = sorted(
                (repr(e.u), e.cap is None, e.cap or 0) for e in g.edges if e.v == v_in(i)
            )
            outs = sorted(
                (repr(e.v), e.cap is None, e.cap or 0) for e in g.edges if e.u == v_out(i)
            )
            sig.append((node.storage, node.joined, node.failed, tuple(ins), tuple(outs)))
        sigs[i] = tuple(sig)
    classes: dict = {}
    return {i: classes.setdefault(s, len(classes)) for i, s in sorted(sigs.items())}


def collectors(
    g: FlowGraph, k: int, over_time: bool = False, twins_from: Sequence[FlowGraph] | None = None
) -> list[tuple[int, ...]]:
    """Every k-subset of active nodes, up to twin symmetry.

    With ``over_time`` the union over all stages is returned (a collector may
    arrive at any moment); otherwise only the final active set is used.
    """
    cls = _twin_classes(twins_from or [g])
    stage_sets = g.stages if over_time else [g.active]
    seen = set()
    out = []
    for active in stage_sets:
        if len(active) < k:
            continue
        members: dict[int, list[int]] = {}
        for node in sorted(active):
            members.setdefault(cls[node], []).append(node)
        groups = sorted(members.values())
        for counts in _compositions(k, [len(m) for m in groups]):
            key = frozenset((cls[m[0]], c) for m, c in zip(groups, counts) if c)
            if key in seen:
                continue
            seen.add(key)
            out.append(tuple(sorted(x for m, c in zip(groups, counts) for x in m[:c])))
    return out


def _compositions(total: int, sizes: list[int]):
    """Vectors c with 0 <= c[i] <= sizes[i] and sum(c) == total, lexicographically largest first."""
    if not sizes:
        if total == 0:
            yield ()
        return
    rest = sum(sizes[1:])
    for c in range(min(total, sizes[0]), max(0, total - rest) - 1, -1):
        for tail in _compositions(total - c, sizes[1:]):
            yield (c, *tail)


@dataclass(frozen=True)
class Verification:
    minimum: CutValue
    feasible: bool
    checked: int


def verify_all_collectors(
    g: FlowGraph, k: int, file_size: Fraction | int = 1, over_time: bool = False
) -> Verification:
    """Minimum min-cut over every possible k-node data collector.

    Feasible iff that minimum is at least ``file_size``.
    """
    file_size = Fraction(file_size)
    net = _Network(g)
    best = None
    cs = collectors(g, k, over_time)
    if not cs:
        raise ValueError(f"fewer than k={k} active nodes")
    for c in cs:
        value, witness = net.max_flow(c)
        if best is None or value < best.value:
            best = CutValue(value, witness, c)
    return Verification(best, best.value >= file_size, len(cs))


def find_violation(
    g: FlowGraph, k: int, file_size: Fraction | int = 1, over_time: bool = False
) -> CutValue | None:
    """First collector whose min-cut is below ``file_size``, or None if feasible."""
    file_size = Fraction(file_size)
    net = _Network(g)
    for c in collectors(g, k, over_time):
        value, witness = net.max_flow(c, limit=file_size)
        if value < file_size:
            return CutValue(value, witness, c)
    return None


# ---------------------------------------------------------------------------
# thresholds


Template = Callable[[Fraction], EventLog]


@dataclass(frozen=True)
class Threshold:
    alpha: Fraction
    # collector whose cut is exactly file_size at alpha and below it for any
    # smaller alpha; None when alpha == 0
    witness: tuple[int, ...] | None


def _cut_line(template: Template, alpha: Fraction, witness: Sequence[Edge]):
    """Intercept and slope of the witness cut's capacity as a function of alpha."""

    def total(a):
        g = build(template(a))
        caps = {(e.u, e.v): e.cap for e in g.edges}
        return sum((caps[(e.u, e.v)] for e in witness), Fraction(0))

    c0, c1, c2 = total(alpha), total(alpha + 1), total(alpha + 2)
    if c2 - c1 != c1 - c0:
        raise ValueError("scenario capacities are not affine in alpha")
    slope = c1 - c0
    return c0 - slope * alpha, slope


def find_threshold(
    template: Template,
    k: int,
    file_size: Fraction | int = 1,
    method: str = "newton",
    grid: int | None = None,
    over_time: bool = True,
) -> Threshold:
    """Smallest alpha in [0, 1] making every collector's min-cut >= file_size.

    ``method="newton"`` walks the collectors once; whenever one is short it
    jumps alpha to where that collector's cut line reaches ``file_size``.
    The cut line bounds the concave min-cut from above, so alpha never
    overshoots, and earlier collectors stay satisfied because capacities
    only grow with alpha.  The result is exact.

    ``method="grid"`` bisects over ``j / grid`` and confirms the answer at
    the candidate and one grid step below; it returns the smallest feasible
    grid point, which equals the threshold when the grid is fine enough.
    """
    file_size = Fraction(file_size)
    probe = [build(template(Fraction(1))), build(template(Fraction(1, 3)))]
    if method == "grid":
        return _grid_threshold(template, k, file_size, grid, over_time, probe)
    if method != "newton":
        raise ValueError(f"unknown method {method!r}")

    alpha = Fraction(0)
    g = build(template(alpha))
    cs = collectors(g, k, over_time, twins_from=probe)
    net = _Network(g)
    witness = None
    i = 0
    while i < len(cs):
        value, edges = net.max_flow(cs[i], limit=file_size)
        if value >= file_size:
            i += 1
            continue
        a, b = _cut_line(template, alpha, edges)
        if b <= 0:
            raise NoThreshold(f"collector {cs[i]} cannot reach {file_size} at any alpha")
        nxt = (file_size - a) / b
        if nxt <= alpha:
            raise ValueError("scenario capacities are not monotone in alpha")
        if nxt > 1:
            raise NoThreshold(f"collector {cs[i]} needs alpha = {nxt} > 1")
        alpha, witness = nxt, cs[i]
        net = _Network(build(template(alpha)))
    return Threshold(alpha, witness)


def _grid_threshold(template, k, file_size, grid, over_time, probe):
    if not grid or grid < 1:
        raise ValueError("grid method needs a positive grid denominator")

    def feasible(j):
        g = build(template(Fraction(j, grid)))
        cs = collectors(g, k, over_time, twins_from=probe)
        net = _Network(g)
        return all(net.max_flow(c, limit=file_size)[0] >= file_size for c in cs)

    if not feasible(grid):
        raise NoThreshold("infeasible at alpha = 1")
    lo, hi = -1, grid  # feasible(hi) holds; lo is infeasible or -1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    alpha = Fraction(hi, grid)
    witness = None
    if hi > 0:
        below = build(template(Fraction(hi - 1, grid)))
        v = find_violation(below, k, file_size, over_time)
        assert v is not None, "grid bisection lost monotonicity"
        witness = v.collector
    return Threshold(alpha, witness)


def threshold_alpha(template: Template, k: int, file_size: Fraction | int = 1, **kw) -> Fraction:
    return find_threshold(template, k, file_size, **kw).alpha


# ---------------------------------------------------------------------------
# worst-case collector around one newcomer


@dataclass(frozen=True)
class WorstCase:
    y1: int
    y2: int
    cut: Fraction
    splits: dict  # (y1, y2) -> minimum cut over collectors with that split


def worst_case_collector(g: FlowGraph, newcomer: int) -> WorstCase:
    """Split collectors containing ``newcomer`` by how many of the other k-1
    members are its helpers (y2) or not (y1), and find the weakest split.

    Uses the active set right after the newcomer joined.
    """
    node = g.nodes[newcomer]
    if not node.helpers:
        raise ValueError(f"node {newcomer} is not a newcomer")
    k = len(node.helpers)
    others = g.active_at(node.joined) - {newcomer}
    inside = sorted(others & set(node.helpers))
    outside = sorted(others - set(node.helpers))
    net = _Network(g)
    splits = {}
    for y2 in range(k - 1, -1, -1):
        y1 = k - 1 - y2
        if y2 > len(inside) or y1 > len(outside):
            continue
        best = None
        for a in itertools.combinations(inside, y2):
            for b in itertools.combinations(outside, y1):
                value, _ = net.max_flow((newcomer, *a, *b))
                best = value if best is None else min(best, value)
        splits[(y1, y2)] = best
    if not splits:
        raise ValueError("no collector split is realisable")
    (y1, y2), cut = min(splits.items(), key=lambda kv: (kv[1], kv[0][0]))
    return WorstCase(y1, y2, cut, splits)


# ---------------------------------------------------------------------------
# canned scenarios; each returns a template alpha -> EventLog


def mds_repair_scenario(n: int, k: int, h: int | None = None) -> Template:
    """(n, k) MDS placement, node n fails, a newcomer downloads alpha of a
    fragment (alpha/k of the file) from each of h survivors and stores a
    fragment. h defaults to n - 1 (the OMMDS setting)."""
    h = n - 1 if h is None else h
    if not 1 <= k < n or not 1 <= h <= n - 1:
        raise ValueError(f"bad scenario n={n} k={k} h={h}")
    frag = Fraction(1, k)

    def template(alpha):
        alpha = Fraction(alpha)
        return EventLog(
            [
                Init(n, frag),
                Fail(n),
                Join(n + 1, alpha * frag, tuple(range(1, h + 1)), frag),
            ]
        )

    return template


def ommds_scenario(n: int, k: int) -> Template:
    return mds_repair_scenario(n, k, n - 1)


def fig1_scenario() -> Template:
    """The (4, 3) example: x4 fails, x5 repairs from the three survivors."""
    return mds_repair_scenario(4, 3, 3)


def rc_chain_scenario(n: int, k: int, chain_length: int = 1, seed: int | None = None) -> Template:
    """Regenerating-code placement of n nodes storing alpha each, followed by
    ``chain_length`` rounds of (fail one node, newcomer repairs from k active
    nodes downloading alpha/k from each and storing alpha).

    With ``seed=None`` the victim is always the highest-numbered active node
    and the helpers are the k lowest; otherwise both are drawn at random.
    The random choices do not depend on alpha.
    """
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got n={n} k={k}")
    rng = random.Random(seed)
    plan = []
    active = list(range(1, n + 1))
    nxt = n + 1
    for _ in range(chain_length):
        if seed is None:
            victim = max(active)
        else:
            victim = rng.choice(active)
        active.remove(victim)
        if seed is None:
            helpers = tuple(sorted(active)[:k])
        else:
            helpers = tuple(sorted(rng.sample(active, k)))
        plan.append((victim, nxt, helpers))
        active.append(nxt)
        nxt += 1

    def template(alpha):
        alpha = Fraction(alpha)
        events = [Init(n, alpha)]
        for victim, new, helpers in plan:
            events.append(Fail(victim))
            events.append(Join(new, alpha / k, helpers, alpha))
        return EventLog(events)

    return template


def rc_alpha(k: int) -> Fraction:
    """Regenerating-code fragment size k / (k^2 - k + 1) of the file.

    This is the exact threshold for a single repair round.  Longer chains
    whose helpers include earlier newcomers can need more (up to 2/(k+1)).
    """
    return Fraction(k, k * k - k + 1)
