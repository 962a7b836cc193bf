"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (printed, and repeated in the terminal
summary) before asserting, so a failing criterion still reports its detail.
"""

import itertools
import math
import time
from fractions import Fraction as F

import numpy as np
from scipy.stats import binomtest

from regenstore import codec, field, model, sim, trace
from regenstore import flowgraph as fg
from regenstore.codec import CodeParams, Scheme
from regenstore.errors import Unreachable
from regenstore.model import Environment, StrategySpec
from regenstore.sim import Mode, SimConfig
from regenstore.trace import DAY

PRESETS = {name: Environment(p.f, p.a) for name, p in trace.presets().items()}


def rc_closed_form(k):
    # fragment size from the per-helper share: 1/k * 1 / (1 - 1/k + 1/k^2)
    return F(1, k) / (1 - F(1, k) + F(1, k * k))


def cut_is_witness(g, cut):
    return sum((e.cap for e in cut.witness), F(0)) == cut.value


# ---------------------------------------------------------------------------


def test_c01_ommds_threshold_exact(verdict):
    t0 = time.perf_counter()
    got = {(n, k): fg.threshold_alpha(fg.ommds_scenario(n, k), k) for n, k in [(4, 3), (10, 5), (14, 7), (20, 10)]}
    elapsed = time.perf_counter() - t0
    ok = all(a == F(1, n - k) for (n, k), a in got.items()) and elapsed < 60
    shown = " ".join(f"({n},{k})={a}" for (n, k), a in got.items())
    verdict(1, ok, f"{shown} in {elapsed:.1f}s")
    assert ok


def test_c02_rc_threshold_exact(verdict):
    t0 = time.perf_counter()
    problems = []
    for k in range(2, 8):
        want = rc_closed_form(k)
        assert fg.rc_alpha(k) == want
        n = k + 2
        single = fg.find_threshold(fg.rc_chain_scenario(n, k, 1), k)
        if single.alpha != want:
            problems.append(f"k={k} single repair {single.alpha}")
        # just below the threshold some collector is short, with a cut that proves it
        below = fg.build(fg.rc_chain_scenario(n, k, 1)(want - F(1, 10**6)))
        v = fg.verify_all_collectors(below, k)
        if v.feasible or not cut_is_witness(below, v.minimum) or v.minimum.value >= 1:
            problems.append(f"k={k} no witness below threshold")
        for seed in range(10):
            template = fg.rc_chain_scenario(n, k, 20, seed=seed)
            chain = fg.find_threshold(template, k)
            if chain.alpha != want:
                problems.append(f"k={k} chain seed {seed} {chain.alpha}")
            g = fg.build(template(want - F(1, 10**6)))
            v = fg.find_violation(g, k, over_time=True)
            if v is None or not cut_is_witness(g, v):
                problems.append(f"k={k} chain seed {seed} no witness below threshold")
    # the chain threshold is confirmed by grid bisection on a grid that holds
    # both 3/7 and 1/2
    grid = fg.threshold_alpha(fg.rc_chain_scenario(5, 3, 20, seed=0), 3, method="grid", grid=14)
    exact = fg.threshold_alpha(fg.rc_chain_scenario(5, 3, 20, seed=0), 3)
    elapsed = time.perf_counter() - t0
    if grid != exact:
        problems.append(f"grid {grid} != newton {exact}")
    if elapsed >= 300:
        problems.append(f"took {elapsed:.0f}s")
    chains_off = sorted({p.split()[0] for p in problems if "chain seed" in p and "witness" not in p})
    detail = f"{elapsed:.1f}s; " + (
        f"{len(problems)} mismatches, chains above k/(k^2-k+1) for {','.join(chains_off)} "
        f"(e.g. {problems[0]})" if problems else "all exact"
    )
    ok = not problems
    verdict(2, ok, detail)
    assert ok, problems


def test_c03_fig1_cut(verdict):
    template = fg.fig1_scenario()
    bad = []
    for alpha in [F(0), F(1, 3), F(1, 2), F(9, 10), F(1)]:
        g = fg.build(template(alpha))
        overall = fg.verify_all_collectors(g, 3).minimum.value
        # the newcomer (node 5) with two of its helpers
        cut = min((fg.min_cut(g, c) for c in [(1, 2, 5), (1, 3, 5), (2, 3, 5)]), key=lambda c: c.value)
        want = F(2, 3) + alpha / 3
        if not (cut.value == want == overall and cut_is_witness(g, cut)):
            bad.append(alpha)
        # in fragment units (M/3) the same cut reads 2 + alpha
        assert cut.value * 3 == 2 + alpha
    threshold = fg.threshold_alpha(template, 3)
    ok = not bad and threshold == 1
    verdict(3, ok, f"witness cut 2/3 + alpha/3, threshold {threshold}")
    assert ok


def test_c04_download_accounting(verdict):
    found = {}
    for scheme, kind, want, blocks in [(Scheme.OMMDS, "ommds", F(13, 49), 13), (Scheme.RC, "rc", F(7, 43), 7)]:
        params = CodeParams(7, 14, scheme)
        frags = codec.encode(bytes(range(256)) * 2, params, seed=0)
        helpers = frags[1:] if scheme is Scheme.OMMDS else frags[1:8]
        responses = [codec.helper_respond(f, 1, seed=i) for i, f in enumerate(helpers)]
        moved = codec.transferred_blocks(responses)
        r = sim.run(SimConfig(StrategySpec(kind, 7, 14), PRESETS["Skype"], epochs=20, trials=3,
                              seed=1, mode=Mode.CODEC_BACKED))
        found[kind] = (moved, params.block_count, r.repair_download, r.repairs)
        assert moved == blocks and F(moved, params.block_count) == want
        assert r.repairs > 0 and r.repair_download == want
    naive = CodeParams(7, 14, Scheme.MDS_NAIVE).repair_download()
    saving = 1 - found["ommds"][2] / naive
    ok = round(float(found["ommds"][2]), 2) == 0.27 and round(float(saving), 2) == 0.73
    detail = (f"ommds {found['ommds'][0]}/{found['ommds'][1]} blocks, {float(saving):.0%} below naive; "
              f"rc {found['rc'][0]}/{found['rc'][1]} blocks = {float(found['rc'][2]):.3f} M")
    verdict(4, ok, detail)
    assert ok


def test_c05_overhead_factors(verdict):
    want = {7: (F(49, 43), "14%"), 14: (F(196, 183), "7.1%"), 32: (F(1024, 993), "3.1%")}
    got = {k: model.overhead_beta("rc", None, k) for k in want}
    pct = {7: f"{float(got[7] - 1):.0%}", 14: f"{float(got[14] - 1):.1%}", 32: f"{float(got[32] - 1):.1%}"}
    ok = all(got[k] == b and pct[k] == p for k, (b, p) in want.items())
    verdict(5, ok, " ".join(f"k={k}: {got[k]} (+{pct[k]})" for k in want))
    assert ok


def test_c06_codec_reliability(verdict):
    params = CodeParams(7, 14, Scheme.RC)
    rng = np.random.default_rng(2024)
    trials = 1000
    ok_any = ok_new = 0
    for _ in range(trials):
        data = rng.integers(0, 256, params.block_count * 2, dtype=np.uint8).tobytes()
        frags = codec.encode(data, params, rng)
        victim = int(rng.integers(14))
        helpers = rng.choice([i for i in range(14) if i != victim], 7, replace=False)
        responses = [codec.helper_respond(frags[h], 1, rng) for h in helpers]
        frags[victim] = codec.regenerate_rc(responses, params, rng, node_id=victim)
        pick = rng.choice(14, 7, replace=False)
        ok_any += codec.decodable([frags[i] for i in pick]) and \
            codec.reconstruct([frags[i] for i in pick], params) == data
        # the newcomer itself in a random collector
        rest = rng.choice([i for i in range(14) if i != victim], 6, replace=False)
        ok_new += codec.decodable([frags[victim]] + [frags[i] for i in rest])
    rate_any, rate_new = ok_any / trials, ok_new / trials

    infeasible = [
        (fg.fig1_scenario(), 3, F(2, 3)),
        (fg.ommds_scenario(6, 3), 3, F(1, 6)),
        (fg.mds_repair_scenario(6, 2, h=2), 2, F(1, 2)),
        (fg.rc_chain_scenario(5, 3, 1), 3, F(2, 5)),
        (fg.rc_chain_scenario(5, 3, 20, seed=1), 3, fg.rc_alpha(3)),
    ]
    leaks = 0
    runs = 0
    for template, k, alpha in infeasible:
        log = template(alpha)
        v = fg.verify_all_collectors(fg.build(log), k, over_time=False)
        assert not v.feasible
        for seed in range(100):
            B, frags, _ = codec.realize_event_log(log, seed)
            coeffs = np.vstack([frags[i].coeffs for i in v.minimum.collector])
            leaks += field.rank(coeffs) == B
            runs += 1
    ok = rate_any >= 0.99 and rate_new >= 0.99 and leaks == 0
    verdict(6, ok, f"success {rate_any:.1%} (with newcomer {rate_new:.1%}); "
                   f"infeasible witnesses decoded {leaks}/{runs}")
    assert ok


def _matched_ratios(env, k, targets):
    out = []
    for t in targets:
        try:
            rc = model.bandwidth_at_unavailability("rc", k, env, t)
            hy = model.bandwidth_at_unavailability("hybrid", k, env, t)
        except Unreachable:
            continue
        out.append(rc.bandwidth / hy.bandwidth)
    return np.array(out)


def test_c07_tradeoff_model(verdict):
    targets = np.logspace(-6, -2, 81)
    pl = _matched_ratios(PRESETS["PlanetLab"], 7, targets)
    gn = _matched_ratios(PRESETS["Gnutella"], 7, targets)
    savings = 1 - pl
    ok = len(pl) == len(targets) and savings.min() >= 0.15 and savings.max() <= 0.35 and gn.max() >= 1
    verdict(7, ok, f"PlanetLab RC {savings.min():.1%}..{savings.max():.1%} below Hybrid; "
                   f"Gnutella max RC/Hybrid {gn.max():.3f}")
    assert ok


def test_c08_ommds_dominated(verdict):
    env = PRESETS["Skype"]
    undominated = {}
    for k in (7, 14):
        hybrid = model.sweep("hybrid", k, env, range(k, 80 * k + 1))
        undominated[k] = [p.strategy.n for p in model.sweep("ommds", k, env) if not model.dominated(p, hybrid)]
    ok = not any(undominated.values())
    verdict(8, ok, "; ".join(f"k={k}: {len(v)} undominated OMMDS points" for k, v in undominated.items()))
    assert ok


LEVELS = {
    "replication": [2, 3, 4],
    "ideal": [14, 21, 28],
    "ommds": [14, 21, 28],
    "rc": [14, 21, 28],
    "hybrid": [7, 14, 21],
}


def test_c09_model_sim_agreement(verdict):
    t0 = time.perf_counter()
    trials, epochs = 200, 365
    N = trials * epochs
    worst_z, worst_p, bad = 0.0, 1.0, []
    for name, env in PRESETS.items():
        for kind, ns in LEVELS.items():
            for n in ns:
                spec = StrategySpec(kind, 1 if kind == "replication" else 7, n)
                r = sim.run(SimConfig(spec, env, epochs=epochs, trials=trials, seed=0))
                want = model.evaluate(spec, env)
                costs = sim.unit_costs(spec) * env.M
                se = math.sqrt(env.f * (1 - env.f) * float((costs**2).sum()) / N)
                z = abs(r.mean_bandwidth - want.bandwidth) / se if se else 0.0
                hits = int(np.rint(r.per_trial_unavail * epochs).sum())
                p = binomtest(hits, N, want.unavailability).pvalue if 0 < want.unavailability < 1 else 1.0
                worst_z, worst_p = max(worst_z, z), min(worst_p, p)
                if z > 3 or p < 0.0027:
                    bad.append(f"{name} {kind} n={n} z={z:.2f} p={p:.4f}")
    elapsed = time.perf_counter() - t0
    ok = not bad and elapsed < 600
    verdict(9, ok, f"60 configs, worst bandwidth |z| {worst_z:.2f}, "
                   f"worst unavailability p {worst_p:.4f}, {elapsed:.0f}s" + (f"; {bad}" if bad else ""))
    assert ok


def test_c10_estimator_closed_loop(verdict):
    worst = 0.0
    for f, a in [(0.017, 0.97), (0.30, 0.38)]:
        for seed in range(5):
            t = trace.synth(100, DAY / f, a, 1000 * DAY, seed=seed)
            e = trace.estimate(t)
            worst = max(worst, abs(e.f - f) / f, abs(e.a - a) / a)
    ok = worst <= 0.10
    verdict(10, ok, f"worst relative error {worst:.1%}")
    assert ok


def test_c02_parts_that_hold():
    """Not a criterion line: the single-repair threshold and the 2/(k+1)
    ceiling reached by chains, so a regression in either is caught even
    though the chain part of criterion 2 fails."""
    for k in range(2, 8):
        assert fg.threshold_alpha(fg.rc_chain_scenario(k + 2, k, 1), k) == fg.rc_alpha(k)
        for seed in range(3):
            a = fg.threshold_alpha(fg.rc_chain_scenario(k + 2, k, 20, seed=seed), k)
            assert fg.rc_alpha(k) <= a <= F(2, k + 1)


def test_c06_collectors_by_cut():
    # the same chain: every collector decodes exactly when its cut reaches the file
    log = fg.rc_chain_scenario(5, 3, 6, seed=2)(fg.rc_alpha(3))
    g = fg.build(log)
    for seed in range(5):
        B, frags, _ = codec.realize_event_log(log, seed)
        for c in itertools.combinations(sorted(g.active), 3):
            r = field.rank(np.vstack([frags[i].coeffs for i in c]))
            assert r <= fg.min_cut(g, c).value * B
