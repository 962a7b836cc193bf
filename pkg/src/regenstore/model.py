"""Closed-form availability / maintenance-bandwidth model.

Each storing node fails permanently with probability ``f`` per day and is
independently available with probability ``a``.  Bandwidth is the expected
number of bytes moved per day to replace lost redundancy.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .codec import Scheme
from .errors import InvalidInput, Unreachable

GB = 10**9


def u_ideal(n: int, k: int, a: float) -> float:
    """P(fewer than k of n independent nodes are up), each up w.p. ``a``.

    Summed in the log domain so large n with tiny tails do not underflow
    to garbage; near 1 it is taken as the complement of the upper tail.
    """
    if not 1 <= k <= n:
        raise InvalidInput(f"need 1 <= k <= n, got k={k} n={n}")
    if not 0.0 <= a <= 1.0:
        raise InvalidInput(f"a must lie in [0, 1], got {a}")
    if a == 1.0:
        return 0.0
    if a == 0.0:
        return 1.0
    la, lb = math.log(a), math.log1p(-a)
    i = np.arange(n + 1)
    logs = (
        math.lgamma(n + 1)
        - np.array([math.lgamma(j + 1) + math.lgamma(n - j + 1) for j in i])
        + i * la
        + (n - i) * lb
    )
    lower = np.logaddexp.reduce(logs[:k])
    upper = np.logaddexp.reduce(logs[k:])
    # whichever tail is smaller is the accurate one
    if lower <= upper:
        return float(min(1.0, math.exp(lower)))
    return float(max(0.0, -math.expm1(upper)))


class Strategy(str, enum.Enum):
    REPLICATION = "replication"
    IDEAL = "ideal"
    HYBRID = "hybrid"
    OMMDS = "ommds"
    RC = "rc"

    @classmethod
    def parse(cls, s):
        if isinstance(s, cls):
            return s
        key = str(s).strip().lower().replace("-", "_")
        aliases = {"ideal_erasure": "ideal", "idealerasure": "ideal", "rep": "replication"}
        return cls(aliases.get(key, key))


def overhead_beta(scheme, n: int | None, k: int) -> Fraction:
    """Bytes downloaded per repair over the MDS fragment size M/k."""
    scheme = Scheme.parse(scheme)
    if k < 1:
        raise InvalidInput("k must be >= 1")
    if scheme is Scheme.MDS_NAIVE:
        return Fraction(k)
    if scheme is Scheme.RC:
        return Fraction(k * k, k * k - k + 1)
    if n is None or n <= k:
        raise InvalidInput("OMMDS overhead needs n > k")
    return Fraction(n - 1, n - k)


@dataclass(frozen=True)
class Environment:
    f: float
    a: float
    M: float = GB

    def __post_init__(self):
        if not 0.0 <= self.f <= 1.0:
            raise InvalidInput(f"f must lie in [0, 1], got {self.f}")
        if not 0.0 < self.a <= 1.0:
            raise InvalidInput(f"a must lie in (0, 1], got {self.a}")
        if not self.M > 0:
            raise InvalidInput("file size must be positive")


@dataclass(frozen=True)
class StrategySpec:
    """A strategy at one redundancy level.

    ``n`` is the number of erasure-coded fragments (the replica count for
    Replication, where ``k`` is forced to 1).  Hybrid keeps one extra full
    replica on top of its n fragments.
    """

    kind: Strategy
    k: int
    n: int

    def __post_init__(self):
        object.__setattr__(self, "kind", Strategy.parse(self.kind))
        if self.kind is Strategy.REPLICATION:
            object.__setattr__(self, "k", 1)
            if self.n < 1:
                raise InvalidInput("need at least one replica")
            return
        if self.k < 1:
            raise InvalidInput("k must be >= 1")
        least = self.k + 1 if self.kind in (Strategy.OMMDS, Strategy.RC) else self.k
        if self.n < least:
            raise InvalidInput(f"{self.kind.value} needs n >= {least}, got n={self.n}")

    @property
    def R(self) -> Fraction:
        if self.kind is Strategy.REPLICATION:
            return Fraction(self.n)
        if self.kind is Strategy.HYBRID:
            return 1 + Fraction(self.n, self.k)
        return Fraction(self.n, self.k)

    @property
    def beta(self) -> Fraction:
        if self.kind is Strategy.OMMDS:
            return overhead_beta(Scheme.OMMDS, self.n, self.k)
        if self.kind is Strategy.RC:
            return overhead_beta(Scheme.RC, self.n, self.k)
        return Fraction(1)

    @property
    def storage_factor(self) -> Fraction:
        """Stored bytes over M."""
        if self.kind is Strategy.RC:
            return self.R * self.beta
        return self.R

    @property
    def bandwidth_factor(self) -> Fraction:
        """Bytes moved per permanent-failure-fraction, over M."""
        if self.kind is Strategy.OMMDS:
            return self.R * self.beta
        return self.storage_factor

    @classmethod
    def with_redundancy(cls, kind, k: int, R) -> "StrategySpec":
        kind = Strategy.parse(kind)
        R = Fraction(R)
        if kind is Strategy.REPLICATION:
            n = R
        elif kind is Strategy.HYBRID:
            n = k * (R - 1)
        else:
            n = k * R
        if n.denominator != 1:
            raise InvalidInput(f"R={R} gives a fractional fragment count for k={k}")
        return cls(kind, k, int(n))


@dataclass(frozen=True)
class TradeoffPoint:
    strategy: StrategySpec
    env: Environment
    bandwidth: float
    unavailability: float
    storage: float
    extra: dict = field(default_factory=dict, compare=False)


def unavailability(spec: StrategySpec, a: float) -> float:
    if spec.kind is Strategy.REPLICATION:
        return (1.0 - a) ** spec.n
    u = u_ideal(spec.n, spec.k, a)
    if spec.kind is Strategy.HYBRID:
        return (1.0 - a) * u
    return u


def evaluate(spec: StrategySpec, env: Environment) -> TradeoffPoint:
    return TradeoffPoint(
        strategy=spec,
        env=env,
        bandwidth=env.f * env.M * float(spec.bandwidth_factor),
        unavailability=unavailability(spec, env.a),
        storage=env.M * float(spec.storage_factor),
    )


def default_range(kind, k: int, n_max: int | None = None) -> range:
    kind = Strategy.parse(kind)
    if kind is Strategy.REPLICATION:
        return range(1, (n_max or 64) + 1)
    lo = k + 1 if kind in (Strategy.OMMDS, Strategy.RC) else k
    return range(lo, (n_max or 40 * k) + 1)


def sweep(kind, k: int, env: Environment, n_values: Iterable[int] | None = None) -> list[TradeoffPoint]:
    """One point per fragment count (replica count for Replication), in order."""
    values = list(default_range(kind, k) if n_values is None else n_values)
    if not values:
        raise InvalidInput("empty redundancy range")
    return [evaluate(StrategySpec(kind, k, n), env) for n in values]


def bandwidth_at_unavailability(kind, k: int, env: Environment, target: float,
                                n_values: Iterable[int] | None = None) -> TradeoffPoint:
    """Cheapest point of the sweep whose unavailability is at most ``target``.

    For every kind except OMMDS this is the smallest sufficient n, since
    bandwidth grows with n.  OMMDS overhead shrinks with n at first, so all
    sufficient points are compared.
    """
    ok = [p for p in sweep(kind, k, env, n_values) if p.unavailability <= target]
    if not ok:
        raise Unreachable(f"{Strategy.parse(kind).value} k={k} cannot reach unavailability {target:g}")
    return min(ok, key=lambda p: (p.bandwidth, p.strategy.n))


def dominated(p: TradeoffPoint, others: Sequence[TradeoffPoint]) -> bool:
    """Weak dominance: some other point is no worse in both coordinates."""
    return any(q.bandwidth <= p.bandwidth and q.unavailability <= p.unavailability for q in others)


# --- CSV -------------------------------------------------------------------

CSV_HEADER = ["strategy", "k", "n", "R", "f", "a", "bandwidth_bytes_per_day", "unavailability", "storage_bytes"]


def _g(x) -> str:
    return f"{float(x):.6g}"


def _frac(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def csv_row(p: TradeoffPoint, extra: Sequence = ()) -> list[str]:
    s = p.strategy
    exact = f"R={_frac(s.R)} beta={_frac(s.beta)}"
    return [s.kind.value, str(s.k), str(s.n), _g(s.R), _g(p.env.f), _g(p.env.a),
            _g(p.bandwidth), _g(p.unavailability), _g(p.storage), *extra, exact]


def write_csv(points: Iterable[TradeoffPoint], fh, extra_header: Sequence[str] = (), header=True):
    import csv

    w = csv.writer(fh, lineterminator="\n")
    if header:
        w.writerow([*CSV_HEADER, *extra_header, "exact"])
    for p in points:
        w.writerow(csv_row(p, [p.extra.get(h, "") for h in extra_header]))
