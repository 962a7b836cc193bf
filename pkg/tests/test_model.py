import math
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from regenstore import model
from regenstore.codec import CodeParams, Scheme
from regenstore.errors import InvalidInput, Unreachable
from regenstore.model import Environment, Strategy, StrategySpec

PLANETLAB = Environment(0.017, 0.97)
GNUTELLA = Environment(0.30, 0.38)
SKYPE = Environment(0.12, 0.65)


def exact_tail(n, k, a):
    a = F(a)
    return sum(math.comb(n, i) * a**i * (1 - a) ** (n - i) for i in range(k))


# --- u_ideal -----------------------------------------------------------------


def test_u_ideal_trivial():
    assert model.u_ideal(10, 4, 1.0) == 0.0
    assert model.u_ideal(10, 4, 0.0) == 1.0
    assert model.u_ideal(1, 1, 0.3) == pytest.approx(0.7, rel=1e-14)


def test_u_ideal_14_7_planetlab_exact():
    want = exact_tail(14, 7, "0.97")
    assert model.u_ideal(14, 7, 0.97) == pytest.approx(float(want), rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 64), st.data(), st.floats(0.01, 0.99))
def test_u_ideal_matches_rational_oracle(n, data, a):
    k = data.draw(st.integers(1, n))
    want = float(exact_tail(n, k, a))
    got = model.u_ideal(n, k, a)
    assert got == pytest.approx(want, rel=1e-10, abs=1e-300)


@pytest.mark.parametrize("n,k,a", [(200, 7, 0.97), (500, 100, 0.38), (1000, 10, 0.65)])
def test_u_ideal_large_n_against_scipy(n, k, a):
    want = stats.binom.cdf(k - 1, n, a)
    got = model.u_ideal(n, k, a)
    if want > 0:
        assert got == pytest.approx(want, rel=1e-8)
    assert got >= 0.0


def test_u_ideal_tiny_tail_in_log_space():
    got = model.u_ideal(120, 7, 0.97)
    assert 0 < got < 1e-150
    assert math.log(got) == pytest.approx(stats.binom.logcdf(6, 120, 0.97), rel=1e-9)


def test_u_ideal_monotonicity():
    for n in range(2, 30):
        for k in range(1, n + 1):
            us = [model.u_ideal(n, k, a) for a in np.linspace(0.05, 0.95, 19)]
            assert all(x >= y - 1e-15 for x, y in zip(us, us[1:]))
            if n > k:
                assert model.u_ideal(n + 1, k, 0.6) <= model.u_ideal(n, k, 0.6) + 1e-15
            if k < n:
                assert model.u_ideal(n, k + 1, 0.6) >= model.u_ideal(n, k, 0.6) - 1e-15


@pytest.mark.parametrize("n,k", [(0, 1), (3, 4), (3, 0)])
def test_u_ideal_bad_args(n, k):
    with pytest.raises(InvalidInput):
        model.u_ideal(n, k, 0.5)


# --- overhead factors ---------------------------------------------------------


def test_overhead_values():
    assert model.overhead_beta("naive", None, 7) == 7
    assert model.overhead_beta("ommds", 14, 7) == F(13, 7)
    assert model.overhead_beta("rc", None, 7) == F(49, 43)
    assert model.overhead_beta("rc", None, 14) == F(196, 183)
    assert model.overhead_beta("rc", None, 32) == F(1024, 993)
    assert round((float(F(196, 183)) - 1) * 100, 1) == 7.1
    assert round((float(F(1024, 993)) - 1) * 100, 1) == 3.1
    assert round((float(F(49, 43)) - 1) * 100) == 14


@pytest.mark.parametrize("scheme", list(Scheme))
@pytest.mark.parametrize("k,n", [(2, 3), (3, 7), (7, 14), (10, 20)])
def test_overhead_matches_codec_block_accounting(scheme, k, n):
    # Route 1: closed form.  Route 2: blocks moved by one repair in the codec geometry.
    p = CodeParams(k, n, scheme)
    blocks_per_repair = {
        Scheme.MDS_NAIVE: p.block_count,
        Scheme.OMMDS: n - 1,
        Scheme.RC: k,
    }[scheme]
    per_mds_fragment = F(blocks_per_repair, p.block_count) / F(1, k)
    assert model.overhead_beta(scheme, n, k) == per_mds_fragment


def test_rc_overhead_bounds_and_limit():
    betas = [model.overhead_beta("rc", None, k) for k in range(1, 200)]
    assert betas[0] == 1
    assert max(betas) == betas[1] == F(4, 3)
    assert all(1 < b <= F(4, 3) for b in betas[1:])
    assert all(x > y for x, y in zip(betas[1:], betas[2:]))


def test_ommds_overhead_approaches_rate_limit():
    for R in (2, 3):
        gaps = [abs(float(model.overhead_beta("ommds", R * k, k)) - 1 / (1 - 1 / R)) for k in (2, 4, 8, 16)]
        assert all(x > y for x, y in zip(gaps, gaps[1:]))


# --- evaluate ---------------------------------------------------------------


def test_strategy_invariants():
    assert StrategySpec.with_redundancy("ideal", 7, 2).n == 14
    assert StrategySpec.with_redundancy("hybrid", 7, 3).n == 14
    assert StrategySpec(Strategy.OMMDS, 7, 14).R == 2
    assert StrategySpec(Strategy.HYBRID, 7, 14).R == 3
    assert StrategySpec(Strategy.REPLICATION, 99, 3).k == 1
    with pytest.raises(InvalidInput):
        StrategySpec(Strategy.RC, 7, 7)
    with pytest.raises(InvalidInput):
        StrategySpec.with_redundancy("ideal", 7, F(8, 5))


def test_environment_validation():
    with pytest.raises(InvalidInput):
        Environment(1.5, 0.5)
    with pytest.raises(InvalidInput):
        Environment(0.1, 0.0)


def test_replication_single_copy():
    env = Environment(0.1, 0.8, 1000)
    p = model.evaluate(StrategySpec("replication", 1, 1), env)
    assert p.unavailability == pytest.approx(0.2)
    assert p.bandwidth == pytest.approx(100)
    assert p.storage == 1000


def test_evaluate_formulas():
    env = Environment(0.05, 0.9, 700)
    n, k = 14, 7
    u = model.u_ideal(n, k, 0.9)
    ideal = model.evaluate(StrategySpec("ideal", k, n), env)
    hyb = model.evaluate(StrategySpec("hybrid", k, n), env)
    om = model.evaluate(StrategySpec("ommds", k, n), env)
    rc = model.evaluate(StrategySpec("rc", k, n), env)
    assert ideal.bandwidth == pytest.approx(0.05 * 2 * 700)
    assert ideal.unavailability == u
    assert hyb.bandwidth == pytest.approx(0.05 * 3 * 700) and hyb.storage == pytest.approx(3 * 700)
    assert hyb.unavailability == pytest.approx(0.1 * u)
    assert om.bandwidth == pytest.approx(ideal.bandwidth * 13 / 7)
    assert om.storage == pytest.approx(ideal.storage)
    assert rc.bandwidth == pytest.approx(ideal.bandwidth * 49 / 43)
    assert rc.storage == pytest.approx(2 * 49 / 43 * 700)
    assert om.unavailability == rc.unavailability == u
    assert hyb.unavailability <= ideal.unavailability


def test_rc_storage_is_n_fragments_of_alpha_c():
    spec = StrategySpec("rc", 7, 14)
    assert spec.storage_factor == 14 * F(7, 43)


def test_replication_sweep_monotone():
    pts = model.sweep("replication", 1, PLANETLAB, range(1, 10))
    assert [p.strategy.n for p in pts] == list(range(1, 10))
    assert all(p.unavailability > q.unavailability for p, q in zip(pts, pts[1:]))
    assert all(p.bandwidth < q.bandwidth for p, q in zip(pts, pts[1:]))


def test_sweep_empty():
    with pytest.raises(InvalidInput):
        model.sweep("rc", 7, PLANETLAB, [])


# --- matched-target comparisons ---------------------------------------------------


def test_target_one_is_minimal_point():
    p = model.bandwidth_at_unavailability("hybrid", 7, PLANETLAB, 1.0)
    assert p.strategy.n == 7
    p = model.bandwidth_at_unavailability("rc", 7, PLANETLAB, 1.0)
    assert p.strategy.n == 8


def test_target_zero_unreachable():
    with pytest.raises(Unreachable):
        model.bandwidth_at_unavailability("rc", 7, PLANETLAB, 0.0, range(8, 60))


def test_planetlab_ratio_at_1e4():
    h = model.bandwidth_at_unavailability("hybrid", 7, PLANETLAB, 1e-4)
    r = model.bandwidth_at_unavailability("rc", 7, PLANETLAB, 1e-4)
    assert 0.70 <= r.bandwidth / h.bandwidth <= 0.85


def test_smallest_sufficient_n_brute_force():
    for target in np.logspace(-8, -1, 15):
        got = model.bandwidth_at_unavailability("hybrid", 7, PLANETLAB, target)
        n = 7
        while (1 - 0.97) * float(exact_tail(n, 7, "0.97")) > target:
            n += 1
        assert got.strategy.n == n


def test_ommds_cheapest_point_not_always_smallest_n():
    # OMMDS overhead falls then rises with n, so the cheapest point can lie past
    # the first sufficient one.
    env = Environment(0.1, 0.99)
    p = model.bandwidth_at_unavailability("ommds", 7, env, 1.0)
    assert p.strategy.n > 8
    ns = range(8, 100)
    assert p.bandwidth == min(model.evaluate(StrategySpec("ommds", 7, n), env).bandwidth for n in ns)


def test_dominance_helper():
    env = Environment(0.1, 0.5)
    a = model.evaluate(StrategySpec("hybrid", 2, 4), env)
    b = model.evaluate(StrategySpec("ommds", 2, 4), env)
    assert model.dominated(b, [a]) and not model.dominated(a, [b])


# --- CSV ---------------------------------------------------------------------


def test_csv_layout():
    import io

    buf = io.StringIO()
    model.write_csv(model.sweep("rc", 7, PLANETLAB, [14]), buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == ",".join(model.CSV_HEADER) + ",exact"
    row = lines[1].split(",")
    assert row[:4] == ["rc", "7", "14", "2"]
    assert row[-1] == "R=2/1 beta=49/43"
    assert float(row[6]) == pytest.approx(0.017 * 2 * 49 / 43 * 1e9, rel=1e-6)
    assert row[6] == f"{0.017 * 2 * 49 / 43 * 1e9:.6g}"
