"""The ``regenstore`` command.

JSON results go to stdout, human-readable notes to stderr.  Exit codes:
0 ok, 1 a verification came out FAIL, 2 bad parameters, 3 file I/O or
unreadable input, 4 decode failure.  ``REGENSTORE_SEED`` sets the default
``--seed``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import codec, model, sim, trace
from . import flowgraph as fg
from .codec import CodeParams, Fragment, Scheme
from .errors import (
    EstimateUndefined,
    FormatError,
    InvalidEvent,
    InvalidInput,
    NoThreshold,
    ProtocolViolation,
    SingularSystem,
    Unreachable,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO, EXIT_DECODE = 0, 1, 2, 3, 4


class CliError(Exception):
    def __init__(self, msg, code=EXIT_USAGE):
        super().__init__(msg)
        self.code = code


def _default_seed():
    raw = os.environ.get("REGENSTORE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"REGENSTORE_SEED must be an integer, got {raw!r}") from None


def _frac(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def _emit(obj):
    json.dump(obj, sys.stdout, sort_keys=True)
    sys.stdout.write("\n")


def _note(msg):
    print(msg, file=sys.stderr)


def _scheme_name(s: Scheme) -> str:
    return {Scheme.MDS_NAIVE: "naive", Scheme.OMMDS: "ommds", Scheme.RC: "rc"}[s]


def frag_name(node_id: int) -> str:
    return f"frag_{node_id}.rgn"


def _read_fragment(path) -> Fragment:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CliError(f"cannot read {path}: {e.strerror}", EXIT_IO) from None
    try:
        return Fragment.from_bytes(raw)
    except InvalidInput as e:
        raise CliError(f"{path}: not a fragment file ({e})", EXIT_IO) from None


def _write(path, data: bytes):
    try:
        Path(path).write_bytes(data)
    except OSError as e:
        raise CliError(f"cannot write {path}: {e.strerror}", EXIT_IO) from None


# --- coding ------------------------------------------------------------------


def cmd_encode(args):
    params = CodeParams(args.k, args.n, Scheme.parse(args.scheme))
    try:
        data = Path(args.file).read_bytes()
    except OSError as e:
        raise CliError(f"cannot read {args.file}: {e.strerror}", EXIT_IO) from None
    frags = codec.encode(data, params, seed=args.seed)
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(f"cannot create {out}: {e.strerror}", EXIT_IO) from None
    total = 0
    for f in frags:
        raw = f.to_bytes()
        _write(out / frag_name(f.node_id), raw)
        total += len(raw)
    _note(f"wrote {len(frags)} fragments to {out}")
    _emit({
        "scheme": _scheme_name(params.scheme),
        "k": params.k,
        "n": params.n,
        "B": params.block_count,
        "block_size": frags[0].block_size,
        "fragment_bytes": frags[0].payload_bytes,
        "fragment_file_bytes": len(frags[0].to_bytes()),
        "total_bytes": total,
    })
    return EXIT_OK


def _load_dir(path) -> dict[int, Fragment]:
    d = Path(path)
    if not d.is_dir():
        raise CliError(f"{d} is not a directory", EXIT_IO)
    frags = {}
    for p in sorted(d.glob("frag_*.rgn")):
        f = _read_fragment(p)
        frags[f.node_id] = f
    return frags


def cmd_repair(args):
    scheme = Scheme.parse(args.scheme)
    frags = _load_dir(args.fragments_dir)
    frags.pop(args.lost_id, None)
    if not frags:
        raise CliError("no fragments found", EXIT_IO)
    params = next(iter(frags.values())).params()
    if params.scheme is not scheme:
        raise CliError(f"fragments are {_scheme_name(params.scheme)}, not {_scheme_name(scheme)}")
    need = params.n - 1 if scheme is Scheme.OMMDS else params.k
    ids = sorted(frags)
    if args.helpers:
        ids = [int(x) for x in args.helpers.split(",")]
        missing = [i for i in ids if i not in frags]
        if missing:
            raise CliError(f"helper fragments not found: {missing}", EXIT_IO)
    if len(ids) < need:
        raise CliError(f"{_scheme_name(scheme)} repair needs {need} helper fragments, found {len(ids)}")
    helpers = ids[:need]
    if scheme is Scheme.MDS_NAIVE:
        used = [frags[i] for i in helpers]
        new = codec.regenerate_naive(used, params, seed=args.seed, node_id=args.lost_id)
        moved_blocks = codec.transferred_blocks(used)
    else:
        rng = np.random.default_rng(args.seed)
        responses = [codec.helper_respond(frags[i], 1, rng) for i in helpers]
        if scheme is Scheme.RC:
            new = codec.regenerate_rc(responses, params, rng, node_id=args.lost_id)
        else:
            new = codec.regenerate_ommds(responses, params, rng, node_id=args.lost_id)
        moved_blocks = codec.transferred_blocks(responses)
    block_size = new.block_size
    out = Path(args.out) if args.out else Path(args.fragments_dir) / frag_name(args.lost_id)
    _write(out, new.to_bytes())
    # beta is measured against an MDS fragment, M/k, with M the padded file
    beta = Fraction(moved_blocks * params.k, params.block_count)
    _note(f"regenerated fragment {args.lost_id} from {len(helpers)} helpers into {out}")
    _emit({
        "scheme": _scheme_name(scheme),
        "lost_id": args.lost_id,
        "helpers": helpers,
        "bytes_downloaded": moved_blocks * block_size,
        "download_fraction": _frac(Fraction(moved_blocks, params.block_count)),
        "beta": _frac(beta),
    })
    return EXIT_OK


def cmd_reconstruct(args):
    frags = [_read_fragment(p) for p in args.fragments]
    params = frags[0].params()
    if len(frags) < params.k:
        raise CliError(f"need at least k={params.k} fragments, got {len(frags)}")
    try:
        data = codec.reconstruct(frags, params)
    except SingularSystem as e:
        raise CliError(f"decode failed: {e}", EXIT_DECODE) from None
    _write(args.out, data)
    _note(f"restored {len(data)} bytes to {args.out}")
    _emit({"bytes": len(data), "sha256": hashlib.sha256(data).hexdigest(), "fragments": len(frags)})
    return EXIT_OK


# --- bounds ------------------------------------------------------------------


def _scenario(args):
    k, n = args.k, args.n
    if args.scenario == "fig1":
        return fg.fig1_scenario(), 3, Fraction(1), {"n": 4, "k": 3}
    if n is None:
        n = 2 * k
    info = {"n": n, "k": k}
    if args.scenario == "ommds":
        return fg.ommds_scenario(n, k), k, Fraction(1, n - k), info
    if args.scenario == "mds-h-equals-k":
        return fg.mds_repair_scenario(n, k, h=k), k, Fraction(1), info
    seed = None if args.chain_length == 1 and args.helper_seed is None else args.helper_seed
    info.update(chain_length=args.chain_length, helper_seed=seed)
    return fg.rc_chain_scenario(n, k, args.chain_length, seed), k, fg.rc_alpha(k), info


def cmd_verify_bounds(args):
    try:
        template, k, expected, info = _scenario(args)
    except ValueError as e:
        raise CliError(str(e)) from None
    try:
        th = fg.find_threshold(template, k, method=args.method, grid=args.grid)
    except NoThreshold as e:
        raise CliError(f"no threshold: {e}", EXIT_FAIL) from None
    ok = th.alpha == expected
    verdict = "PASS" if ok else "FAIL"
    _note(f"{args.scenario}: threshold {_frac(th.alpha)} vs closed form {_frac(expected)}: {verdict}")
    _emit({
        "scenario": args.scenario,
        **info,
        "threshold": _frac(th.alpha),
        "expected": _frac(expected),
        "witness": list(th.witness) if th.witness else None,
        "result": verdict,
    })
    return EXIT_OK if ok else EXIT_FAIL


# --- traces ------------------------------------------------------------------


def cmd_estimate(args):
    try:
        tr = trace.load(args.trace)
    except OSError as e:
        raise CliError(f"cannot read {args.trace}: {e.strerror}", EXIT_IO) from None
    except FormatError as e:
        raise CliError(f"{args.trace}: {e}", EXIT_IO) from None
    if args.clean_planetlab:
        tr = trace.clean_planetlab(tr)
    est = trace.estimate(tr, args.timeout_days * trace.DAY)
    _note(f"{est.nodes} nodes over {est.span_days:g} days")
    _emit({"f": est.f, "a": est.a, "t": args.timeout_days, "nodes": est.nodes, "span_days": est.span_days})
    return EXIT_OK


def cmd_synth(args):
    lifetime = math.inf if args.lifetime_days <= 0 else args.lifetime_days * trace.DAY
    tr = trace.synth(args.nodes, lifetime, args.up_fraction, args.days * trace.DAY,
                     seed=args.seed, mean_cycle=args.cycle_days * trace.DAY)
    text = trace.serialize(tr)
    if args.out:
        _write(args.out, text.encode())
        _note(f"wrote {len(tr.intervals)} nodes to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --- model and simulation -------------------------------------------------------


def _env(args) -> model.Environment:
    if args.preset:
        p = trace.preset(args.preset)
        f, a = p.f, p.a
        if args.f is not None or args.a is not None:
            raise CliError("give either --preset or --f/--a, not both")
    else:
        if args.f is None or args.a is None:
            raise CliError("need --preset or both --f and --a")
        f, a = args.f, args.a
    return model.Environment(f, a, args.file_size)


def _r_range(text: str) -> tuple[Fraction, Fraction]:
    lo, sep, hi = text.partition(":")
    if not sep:
        raise CliError("--r-range takes LO:HI")
    try:
        lo, hi = Fraction(lo), Fraction(hi)
    except (ValueError, ZeroDivisionError):
        raise CliError(f"bad --r-range {text!r}") from None
    if lo > hi:
        raise CliError("--r-range is empty")
    return lo, hi


def _ns_for(kind: model.Strategy, k: int, lo: Fraction, hi: Fraction) -> list[int]:
    if kind is model.Strategy.REPLICATION:
        return [n for n in range(1, math.floor(hi) + 1) if n >= lo]
    out = []
    for n in model.default_range(kind, k, math.floor(hi * k)):
        if lo <= model.StrategySpec(kind, k, n).R <= hi:
            out.append(n)
    return out


def cmd_tradeoff(args):
    env = _env(args)
    kinds = [model.Strategy.parse(s) for s in args.strategies.split(",")]
    lo, hi = _r_range(args.r_range)
    points = []
    for k in args.k:
        for kind in kinds:
            ns = _ns_for(kind, k, lo, hi)
            if ns:
                points += model.sweep(kind, k, env, ns)
    if not points:
        raise CliError("no points in the requested range")
    if args.out:
        try:
            with open(args.out, "w", newline="") as fh:
                model.write_csv(points, fh)
        except OSError as e:
            raise CliError(f"cannot write {args.out}: {e.strerror}", EXIT_IO) from None
        _note(f"wrote {len(points)} rows to {args.out}")
        _emit({"rows": len(points), "out": args.out})
    else:
        model.write_csv(points, sys.stdout)
    return EXIT_OK


def cmd_simulate(args):
    env = _env(args)
    kind = model.Strategy.parse(args.strategy)
    if args.n is not None:
        spec = model.StrategySpec(kind, args.k, args.n)
    else:
        spec = model.StrategySpec.with_redundancy(kind, args.k, Fraction(args.r))
    mode = sim.Mode.CODEC_BACKED if args.codec_backed else sim.Mode.ACCOUNTING
    config = sim.SimConfig(spec, env, args.epochs, args.trials, args.seed, mode)
    result = sim.run(config)
    out = {"strategy": kind.value, "k": spec.k, "n": spec.n, "R": _frac(spec.R), **result.to_dict()}
    if args.out:
        path = Path(args.out)
        fresh = not path.exists() or path.stat().st_size == 0
        try:
            with open(path, "a", newline="") as fh:
                model.write_csv([result.point(config)], fh, sim.SIM_CSV_EXTRA, header=fresh)
        except OSError as e:
            raise CliError(f"cannot write {path}: {e.strerror}", EXIT_IO) from None
    _note(f"{kind.value} k={spec.k} n={spec.n}: unavailability {result.mean_unavailability:.3g}, "
          f"bandwidth {result.mean_bandwidth:.4g} B/day")
    _emit(out)
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    seed = _default_seed()
    p = argparse.ArgumentParser(prog="regenstore", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("encode", help="split a file into n coded fragments")
    e.add_argument("--file", required=True)
    e.add_argument("--k", type=int, required=True)
    e.add_argument("--n", type=int, required=True)
    e.add_argument("--scheme", default="rc", help="rc, ommds or naive")
    e.add_argument("--out-dir", required=True)
    e.add_argument("--seed", type=int, default=seed)
    e.set_defaults(func=cmd_encode)

    r = sub.add_parser("repair", help="regenerate a lost fragment from helpers")
    r.add_argument("--scheme", required=True)
    r.add_argument("--fragments-dir", required=True)
    r.add_argument("--lost-id", type=int, required=True)
    r.add_argument("--helpers", help="comma-separated helper ids (default: lowest ids)")
    r.add_argument("--out", help="output path (default: frag_<lost-id>.rgn in the directory)")
    r.add_argument("--seed", type=int, default=seed)
    r.set_defaults(func=cmd_repair)

    c = sub.add_parser("reconstruct", help="decode the file from k or more fragments")
    c.add_argument("--fragments", nargs="+", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_reconstruct)

    v = sub.add_parser("verify-bounds", help="exact repair-bandwidth threshold of a scenario")
    v.add_argument("--scenario", required=True, choices=["fig1", "ommds", "rc", "mds-h-equals-k"])
    v.add_argument("--k", type=int, default=3)
    v.add_argument("--n", type=int, help="default 2k")
    v.add_argument("--chain-length", type=int, default=1)
    v.add_argument("--helper-seed", type=int, help="random victims and helpers along an rc chain")
    v.add_argument("--method", choices=["newton", "grid"], default="newton")
    v.add_argument("--grid", type=int, default=10**6, help="denominator for --method grid")
    v.set_defaults(func=cmd_verify_bounds)

    t = sub.add_parser("estimate", help="estimate (f, a) from an availability trace")
    t.add_argument("--trace", required=True)
    t.add_argument("--timeout-days", type=float, default=1.0)
    t.add_argument("--clean-planetlab", action="store_true")
    t.set_defaults(func=cmd_estimate)

    s = sub.add_parser("synth", help="generate a synthetic availability trace")
    s.add_argument("--nodes", type=int, default=100)
    s.add_argument("--lifetime-days", type=float, required=True, help="<= 0 means nodes never die")
    s.add_argument("--up-fraction", type=float, required=True)
    s.add_argument("--days", type=float, default=1000)
    s.add_argument("--cycle-days", type=float, default=0.25)
    s.add_argument("--seed", type=int, default=seed)
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    def env_flags(q):
        q.add_argument("--preset", help="PlanetLab, MicrosoftPCs, Skype or Gnutella")
        q.add_argument("--f", type=float)
        q.add_argument("--a", type=float)
        q.add_argument("--file-size", type=float, default=model.GB, help="bytes (default 1e9)")

    o = sub.add_parser("tradeoff", help="bandwidth/unavailability curves as CSV")
    env_flags(o)
    o.add_argument("--k", type=int, nargs="+", default=[7])
    o.add_argument("--strategies", default="replication,ideal,hybrid,ommds,rc")
    o.add_argument("--r-range", default="1:12")
    o.add_argument("--out")
    o.set_defaults(func=cmd_tradeoff)

    m = sub.add_parser("simulate", help="Monte Carlo run of one strategy")
    env_flags(m)
    m.add_argument("--strategy", required=True)
    m.add_argument("--k", type=int, default=7)
    m.add_argument("--r", default="2", help="redundancy factor, e.g. 2 or 15/7")
    m.add_argument("--n", type=int, help="fragment count (overrides --r)")
    m.add_argument("--epochs", type=int, default=365)
    m.add_argument("--trials", type=int, default=200)
    m.add_argument("--seed", type=int, default=seed)
    m.add_argument("--codec-backed", action="store_true")
    m.add_argument("--out", help="append a CSV row here")
    m.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CliError as e:
        _note(f"regenstore: {e}")
        return e.code
    except SystemExit as e:  # argparse
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except (InvalidInput, InvalidEvent, ProtocolViolation, Unreachable, EstimateUndefined, ValueError) as e:
        _note(f"regenstore: {e}")
        return EXIT_USAGE
    except OSError as e:
        _note(f"regenstore: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
