"""Monte Carlo churn simulation of the maintenance strategies.

Time advances in epochs of one day.  In every epoch each storing node fails
permanently with probability ``f`` and is replaced at once; every node is
then independently up with probability ``a``, and the epoch counts as
unavailable when the file cannot be read from the nodes that are up.

Each trial gets its own child of the root ``SeedSequence``, split again into
independent streams for failures, availability and coding decisions.  Both
modes therefore see the same failures and the same availability for a
given seed; the codec-backed mode only adds real repairs and decodes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from . import codec
from .codec import CodeParams, Scheme
from .errors import InvalidInput, SingularSystem
from .model import Environment, Strategy, StrategySpec, TradeoffPoint


class Mode(str, enum.Enum):
    ACCOUNTING = "accounting"
    CODEC_BACKED = "codec_backed"


@dataclass(frozen=True)
class SimConfig:
    strategy: StrategySpec
    env: Environment
    epochs: int = 365
    trials: int = 200
    seed: int = 0
    mode: Mode = Mode.ACCOUNTING
    block_size: int = 4  # bytes per source block in codec-backed runs

    def __post_init__(self):
        if self.epochs < 1 or self.trials < 1:
            raise InvalidInput("epochs and trials must be >= 1")
        object.__setattr__(self, "mode", Mode(self.mode))


@dataclass
class SimResult:
    mean_bandwidth: float  # bytes per epoch
    mean_unavailability: float
    ci95_bw: float | None
    ci95_unavail: float | None
    trials: int
    epochs: int
    repairs: int = 0
    decode_failures: int | None = None
    decode_attempts: int | None = None
    repair_download: Fraction | None = None  # of M, per repair (codec-backed)
    per_trial_bw: np.ndarray = field(default=None, repr=False)
    per_trial_unavail: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("per_trial_bw")
        d.pop("per_trial_unavail")
        if self.repair_download is not None:
            d["repair_download"] = f"{self.repair_download.numerator}/{self.repair_download.denominator}"
        if self.decode_failures is None:
            for key in ("decode_failures", "decode_attempts", "repair_download"):
                d.pop(key)
        return d

    def point(self, config: SimConfig) -> TradeoffPoint:
        spec = config.strategy
        extra = {
            "ci95_bw": "" if self.ci95_bw is None else f"{self.ci95_bw:.6g}",
            "ci95_unavail": "" if self.ci95_unavail is None else f"{self.ci95_unavail:.6g}",
            "decode_failures": "" if self.decode_failures is None else str(self.decode_failures),
        }
        return TradeoffPoint(spec, config.env, self.mean_bandwidth, self.mean_unavailability,
                             config.env.M * float(spec.storage_factor), extra)


SIM_CSV_EXTRA = ("ci95_bw", "ci95_unavail", "decode_failures")


def _streams(seed, trials):
    """Per trial: (failure, availability, coding) generators."""
    root = np.random.SeedSequence(seed)
    for child in root.spawn(trials):
        yield tuple(np.random.default_rng(s) for s in child.spawn(3))


def units(spec: StrategySpec) -> int:
    """Storing nodes; Hybrid's extra replica is the last one."""
    return spec.n + 1 if spec.kind is Strategy.HYBRID else spec.n


def unit_costs(spec: StrategySpec) -> np.ndarray:
    """Bytes (over M) to replace each storing node."""
    k = spec.k
    if spec.kind is Strategy.REPLICATION:
        return np.ones(spec.n)
    if spec.kind is Strategy.IDEAL:
        return np.full(spec.n, 1.0 / k)
    if spec.kind is Strategy.HYBRID:
        # a fragment is cut from the replica; the replica is rebuilt from k fragments
        return np.concatenate([np.full(spec.n, 1.0 / k), [1.0]])
    if spec.kind is Strategy.OMMDS:
        return np.full(spec.n, float(spec.beta) / k)
    return np.full(spec.n, float(Fraction(k, k * k - k + 1)))


def readable(spec: StrategySpec, up: np.ndarray) -> np.ndarray:
    """Row-wise: can the file be read from the nodes marked up?"""
    if spec.kind is Strategy.REPLICATION:
        return up.any(axis=1)
    frags = up[:, : spec.n].sum(axis=1) >= spec.k
    if spec.kind is Strategy.HYBRID:
        return up[:, spec.n] | frags
    return frags


def _summary(bw, un, trials, epochs, **kw) -> SimResult:
    bw = np.asarray(bw, dtype=float)
    un = np.asarray(un, dtype=float)
    ci_bw = ci_un = None
    if trials >= 30:
        z = 1.959963984540054
        ci_bw = float(z * bw.std(ddof=1) / math.sqrt(trials))
        ci_un = float(z * un.std(ddof=1) / math.sqrt(trials))
    return SimResult(float(bw.mean()), float(un.mean()), ci_bw, ci_un, trials, epochs,
                     per_trial_bw=bw, per_trial_unavail=un, **kw)


def run(config: SimConfig) -> SimResult:
    if config.mode is Mode.CODEC_BACKED:
        return run_codec_backed(config)
    spec, env = config.strategy, config.env
    u = units(spec)
    cost = unit_costs(spec) * env.M
    bw, un = [], []
    repairs = 0
    for fail_rng, avail_rng, _ in _streams(config.seed, config.trials):
        failed = fail_rng.random((config.epochs, u)) < env.f
        up = avail_rng.random((config.epochs, u)) < env.a
        repairs += int(failed.sum())
        bw.append(float((failed * cost).sum()) / config.epochs)
        un.append(np.count_nonzero(~readable(spec, up)) / config.epochs)
    return _summary(bw, un, config.trials, config.epochs, repairs=repairs)


def run_codec_backed(config: SimConfig) -> SimResult:
    """Same churn as :func:`run`, but every repair and read goes through the codec.

    A read picks a random k-subset of the fragments that are up and tries to
    decode it; a rank-deficient subset is a decode failure and makes the
    epoch unavailable on top of the availability rule.
    """
    spec, env = config.strategy, config.env
    if spec.kind not in (Strategy.OMMDS, Strategy.RC):
        raise InvalidInput("codec-backed runs support OMMDS and RC only")
    if spec.n > 20:
        raise InvalidInput("codec-backed runs are limited to n <= 20")
    scheme = Scheme.OMMDS if spec.kind is Strategy.OMMDS else Scheme.RC
    params = CodeParams(spec.k, spec.n, scheme)
    B = params.block_count
    n, k = spec.n, spec.k
    bw, un = [], []
    repairs = failures = attempts = 0
    downloads = set()
    for fail_rng, avail_rng, code_rng in _streams(config.seed, config.trials):
        failed = fail_rng.random((config.epochs, n)) < env.f
        up = avail_rng.random((config.epochs, n)) < env.a
        data = code_rng.integers(0, 256, B * config.block_size, dtype=np.uint8).tobytes()
        frags = codec.encode(data, params, code_rng)
        moved = Fraction(0)
        bad = 0
        for ep in range(config.epochs):
            for victim in np.flatnonzero(failed[ep]):
                victim = int(victim)
                others = [i for i in range(n) if i != victim]
                if scheme is Scheme.RC:
                    helpers = sorted(code_rng.choice(others, k, replace=False).tolist())
                    responses = [codec.helper_respond(frags[h], 1, code_rng) for h in helpers]
                    new = codec.regenerate_rc(responses, params, code_rng, node_id=victim)
                else:
                    responses = [codec.helper_respond(frags[h], 1, code_rng) for h in others]
                    new = codec.regenerate_ommds(responses, params, code_rng, node_id=victim)
                d = Fraction(codec.transferred_blocks(responses), B)
                downloads.add(d)
                moved += d
                frags[victim] = new
                repairs += 1
            live = np.flatnonzero(up[ep])
            if len(live) < k:
                bad += 1
                continue
            pick = code_rng.choice(live, k, replace=False)
            attempts += 1
            try:
                ok = codec.reconstruct([frags[int(i)] for i in pick], params) == data
            except SingularSystem:
                ok = False
            if not ok:
                failures += 1
                bad += 1
        bw.append(float(moved) * env.M / config.epochs)
        un.append(bad / config.epochs)
    download = next(iter(downloads)) if len(downloads) == 1 else None
    return _summary(bw, un, config.trials, config.epochs, repairs=repairs,
                    decode_failures=failures, decode_attempts=attempts, repair_download=download)
