"""Node availability traces: parsing, failure classification, (f, a) estimation.

A trace lists, per node, sorted half-open up-intervals ``[start, end)`` in
seconds.  The text format is CSV::

    # start=0 end=86400000
    node_id,up_start,up_end
    n1,0,3600
    n1,7200,86400000
    n2,,

``n2,,`` declares a node that was never seen up.  Without the ``# start=``
comment the trace window is the hull of all intervals.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimateUndefined, FormatError, InvalidInput

DAY = 86400.0


@dataclass
class AvailabilityTrace:
    intervals: dict = field(default_factory=dict)  # node id -> list of (start, end)
    start: float = 0.0
    end: float = 0.0

    @property
    def nodes(self):
        return set(self.intervals)

    @property
    def span(self) -> float:
        return self.end - self.start

    def validate(self):
        if self.end < self.start:
            raise FormatError(f"trace ends ({self.end}) before it starts ({self.start})")
        for node, ivs in self.intervals.items():
            prev = -math.inf
            for s, e in ivs:
                if not s < e:
                    raise FormatError(f"{node}: empty or reversed interval [{s}, {e})")
                if s < prev:
                    raise FormatError(f"{node}: intervals unsorted or overlapping at {s}")
                if s < self.start or e > self.end:
                    raise FormatError(f"{node}: interval [{s}, {e}) outside the trace window")
                prev = e
        return self

    def __eq__(self, other):
        if not isinstance(other, AvailabilityTrace):
            return NotImplemented
        return (self.start, self.end) == (other.start, other.end) and {
            n: [tuple(map(float, iv)) for iv in v] for n, v in self.intervals.items()
        } == {n: [tuple(map(float, iv)) for iv in v] for n, v in other.intervals.items()}


def _num(s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise FormatError(f"bad number {s!r}") from None


def parse(text: str) -> AvailabilityTrace:
    intervals: dict = {}
    start = end = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            for tok in line[1:].split():
                key, _, val = tok.partition("=")
                if key == "start":
                    start = _num(val)
                elif key == "end":
                    end = _num(val)
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 3:
            raise FormatError(f"line {lineno}: expected node_id,up_start,up_end")
        if parts[0] == "node_id":
            continue
        node, s, e = parts
        ivs = intervals.setdefault(node, [])
        if s == "" and e == "":
            continue
        ivs.append((_num(s), _num(e)))
    bounds = [x for ivs in intervals.values() for iv in ivs for x in iv]
    if start is None:
        start = min(bounds, default=0.0)
    if end is None:
        end = max(bounds, default=start)
    return AvailabilityTrace(intervals, float(start), float(end)).validate()


def _fmt(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


def serialize(trace: AvailabilityTrace) -> str:
    out = [f"# start={_fmt(trace.start)} end={_fmt(trace.end)}", "node_id,up_start,up_end"]
    for node in sorted(trace.intervals):
        ivs = trace.intervals[node]
        if not ivs:
            out.append(f"{node},,")
        for s, e in ivs:
            out.append(f"{node},{_fmt(s)},{_fmt(e)}")
    return "\n".join(out) + "\n"


def load(path) -> AvailabilityTrace:
    with open(path) as fh:
        return parse(fh.read())


# --- classification ----------------------------------------------------------


class Kind(enum.Enum):
    TRANSIENT = "transient"
    PERMANENT = "permanent"


@dataclass(frozen=True)
class Downtime:
    node: str
    start: float
    end: float
    kind: Kind
    trailing: bool = False

    @property
    def duration(self):
        return self.end - self.start


@dataclass
class FailureClassification:
    t: float
    downtimes: dict  # node -> list of Downtime

    def permanent(self):
        return [d for ds in self.downtimes.values() for d in ds if d.kind is Kind.PERMANENT]

    def detection_time(self, d: Downtime) -> float | None:
        return d.start + self.t if d.kind is Kind.PERMANENT else None


def downtimes(trace: AvailabilityTrace, node) -> list[tuple[float, float, bool]]:
    """Gaps between up-intervals, plus the gap up to the end of the trace.

    Time before a node is first seen is not a downtime: it had not joined.
    """
    ivs = trace.intervals[node]
    gaps = [(e, s2, False) for (_, e), (s2, _) in zip(ivs, ivs[1:]) if s2 > e]
    if ivs and ivs[-1][1] < trace.end:
        gaps.append((ivs[-1][1], trace.end, True))
    return gaps


def classify(trace: AvailabilityTrace, t: float = DAY) -> FailureClassification:
    """Timeout heuristic: a downtime longer than ``t`` is a permanent failure."""
    if not t > 0:
        raise InvalidInput("timeout must be positive")
    out = {}
    for node in sorted(trace.intervals):
        out[node] = [
            Downtime(node, s, e, Kind.PERMANENT if e - s > t else Kind.TRANSIENT, trailing)
            for s, e, trailing in downtimes(trace, node)
        ]
    return FailureClassification(t, out)


# --- estimation ---------------------------------------------------------------


@dataclass(frozen=True)
class ParamEstimate:
    f: float  # fraction of live nodes failing permanently per day
    a: float
    t: float = DAY
    nodes: int = 0
    span_days: float = 0.0


def estimate(trace: AvailabilityTrace, t: float = DAY) -> ParamEstimate:
    """Estimate (f, a) from a trace.

    A node is live from its first up-interval onward, except during
    downtimes classified permanent; with hindsight the whole permanent
    downtime is excluded, not just the part after the timeout expires.
    ``a`` is the time average of up/live over times with live nodes, and
    ``f`` the permanent failures per day over the mean live population.
    """
    if not trace.intervals:
        raise EstimateUndefined("empty trace")
    cls = classify(trace, t)
    up_t, up_d, live_t, live_d = [], [], [], []
    failures = 0
    for node, ivs in trace.intervals.items():
        if not ivs:
            continue
        for s, e in ivs:
            up_t += [s, e]
            up_d += [1, -1]
        live_t.append(ivs[0][0])
        live_d.append(1)
        gone = False
        for d in cls.downtimes[node]:
            if d.kind is not Kind.PERMANENT:
                continue
            failures += 1
            live_t.append(d.start)
            live_d.append(-1)
            if d.trailing:
                gone = True
            else:
                live_t.append(d.end)
                live_d.append(1)
        if not gone:
            live_t.append(trace.end)
            live_d.append(-1)
    lo, hi = trace.start, trace.end
    grid = np.unique(np.concatenate([[lo, hi], up_t, live_t]))
    up = _level_on(grid, up_t, up_d)
    live = _level_on(grid, live_t, live_d)
    dur = np.diff(grid)
    up, live = up[:-1], live[:-1]
    mask = (live > 0) & (dur > 0)
    live_time = float(dur[mask].sum())
    if live_time <= 0:
        raise EstimateUndefined("no live node time in trace")
    a = float((dur[mask] * up[mask] / live[mask]).sum() / live_time)
    span_days = (hi - lo) / DAY
    mean_live = float((dur * live).sum()) / (hi - lo)
    f = failures / span_days / mean_live
    return ParamEstimate(f=f, a=min(1.0, a), t=t, nodes=len(trace.intervals), span_days=span_days)


def _level_on(grid, times, deltas):
    """Value of the counting step function on each [grid[i], grid[i+1])."""
    times = np.asarray(times, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    pos = np.searchsorted(grid, times)
    acc = np.zeros(len(grid))
    np.add.at(acc, pos, deltas)
    return np.cumsum(acc)


# --- PlanetLab cleaning ----------------------------------------------------------


def _mean_level(grid, level, s, e):
    """Mean of a step function over [s, e) for arrays of windows."""
    dur = np.diff(grid)
    cum = np.concatenate([[0.0], np.cumsum(dur * level[:-1])])
    return (np.interp(e, grid, cum) - np.interp(s, grid, cum)) / (e - s)


def clean_planetlab(trace: AvailabilityTrace) -> AvailabilityTrace:
    """Fill downtimes that coincide with system-wide outages.

    A node's downtime is marked up when the mean number of nodes up during
    it is less than half the mean number up over the whole trace.  Filling
    raises the overall mean, so the rule is reapplied until nothing
    changes; the result is a fixed point and cleaning it again is a no-op.
    """
    ivs = {n: list(v) for n, v in trace.intervals.items()}
    if trace.span <= 0:
        return AvailabilityTrace(ivs, trace.start, trace.end)
    while True:
        cur = AvailabilityTrace(ivs, trace.start, trace.end)
        times = [x for v in ivs.values() for iv in v for x in iv]
        deltas = [d for v in ivs.values() for _ in v for d in (1, -1)]
        grid = np.unique(np.concatenate([[trace.start, trace.end], times]))
        level = _level_on(grid, times, deltas)
        overall = _mean_level(grid, level, np.array([trace.start]), np.array([trace.end]))[0]
        gaps = [(n, s, e) for n in ivs for s, e, _ in downtimes(cur, n)]
        if not gaps:
            break
        s = np.array([g[1] for g in gaps])
        e = np.array([g[2] for g in gaps])
        fill = _mean_level(grid, level, s, e) < 0.5 * overall
        if not fill.any():
            break
        for (n, gs, ge), hit in zip(gaps, fill):
            if hit:
                ivs[n].append((gs, ge))
        for n in ivs:
            ivs[n] = _merge(ivs[n])
    return AvailabilityTrace(ivs, trace.start, trace.end)


def _merge(ivs):
    out = []
    for s, e in sorted(ivs):
        if out and s <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], e))
        else:
            out.append((s, e))
    return out


# --- presets and synthetic traces ----------------------------------------------


def presets() -> dict[str, ParamEstimate]:
    """Measured (f per day, a) for four deployed systems."""
    return {
        "PlanetLab": ParamEstimate(0.017, 0.97),
        "MicrosoftPCs": ParamEstimate(0.038, 0.91),
        "Skype": ParamEstimate(0.12, 0.65),
        "Gnutella": ParamEstimate(0.30, 0.38),
    }


def preset(name: str) -> ParamEstimate:
    table = {k.lower(): v for k, v in presets().items()}
    key = name.strip().lower().replace("_", "").replace("-", "")
    if key not in table:
        raise InvalidInput(f"unknown preset {name!r}; choose from {', '.join(presets())}")
    return table[key]


def synth(node_count: int, mean_lifetime: float, up_fraction: float, duration: float,
          seed=None, mean_cycle: float = DAY / 4) -> AvailabilityTrace:
    """Synthetic trace with known parameters.

    Each of ``node_count`` slots holds one node at a time.  A node lives an
    exponential time (mean ``mean_lifetime`` s, ``math.inf`` for never) and
    is replaced by a fresh node id the moment it dies.  While alive it
    alternates exponential up and down periods with means
    ``up_fraction * mean_cycle`` and ``(1 - up_fraction) * mean_cycle``,
    starting up.  So f is about DAY / mean_lifetime and a about up_fraction.
    """
    if node_count < 1 or duration <= 0 or mean_cycle <= 0 or mean_lifetime <= 0:
        raise InvalidInput("synth parameters must be positive")
    if not 0.0 < up_fraction <= 1.0:
        raise InvalidInput("up_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    intervals = {}
    mean_up = up_fraction * mean_cycle
    mean_down = (1.0 - up_fraction) * mean_cycle
    serial = 0
    for slot in range(node_count):
        born = 0.0
        while born < duration:
            life = rng.exponential(mean_lifetime) if math.isfinite(mean_lifetime) else math.inf
            death = min(born + life, duration)
            name = f"s{slot}.{serial}"
            serial += 1
            intervals[name] = _alternate(rng, born, death, mean_up, mean_down)
            born = born + life
    return AvailabilityTrace(intervals, 0.0, float(duration))


def _alternate(rng, born, death, mean_up, mean_down):
    if mean_down == 0:
        return [(born, death)]
    span = death - born
    chunk = max(8, int(2 * span / (mean_up + mean_down)) + 8)
    ups, downs = [], []
    total = 0.0
    while total < span:
        u = rng.exponential(mean_up, chunk)
        d = rng.exponential(mean_down, chunk)
        ups.append(u)
        downs.append(d)
        total += float(u.sum() + d.sum())
    u = np.concatenate(ups)
    d = np.concatenate(downs)
    starts = born + np.concatenate([[0.0], np.cumsum(u + d)[:-1]])
    ends = starts + u
    keep = starts < death
    starts, ends = starts[keep], np.minimum(ends[keep], death)
    ok = ends > starts
    return list(zip(starts[ok].tolist(), ends[ok].tolist()))
