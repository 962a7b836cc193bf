"""Random linear network coding for distributed storage.

A file is padded and split into ``B`` equal blocks.  Every stored or
transmitted block is a GF(256) combination of those ``B`` source blocks,
carried together with its coefficient row, so any node can mix what it
holds without seeing the original data and any collector can decode by
solving the stacked coefficient system.

Block geometry per scheme:

=========  ==============  =====================  =========================
scheme     B               blocks per fragment    repair transfer
=========  ==============  =====================  =========================
naive      k (n - k)       n - k                  k whole fragments (= M)
ommds      k (n - k)       n - k                  1 block from each of n-1
rc         k^2 - k + 1     k                      1 block from each of k
=========  ==============  =====================  =========================
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from . import field
from . import flowgraph as fg
from .errors import InvalidInput, ProtocolViolation, SingularSystem


class Scheme(enum.IntEnum):
    MDS_NAIVE = 0
    OMMDS = 1
    RC = 2

    @classmethod
    def parse(cls, name) -> "Scheme":
        if isinstance(name, cls):
            return name
        key = name.strip().lower().replace("-", "_")
        aliases = {"naive": cls.MDS_NAIVE, "mds_naive": cls.MDS_NAIVE, "mds": cls.MDS_NAIVE,
                   "ommds": cls.OMMDS, "rc": cls.RC}
        try:
            return aliases[key]
        except KeyError:
            raise InvalidInput(f"unknown scheme {name!r}") from None


@dataclass(frozen=True)
class CodeParams:
    k: int
    n: int
    scheme: Scheme = Scheme.RC

    def __post_init__(self):
        if self.k < 1 or self.n <= self.k:
            raise InvalidInput(f"need k >= 1 and n > k, got k={self.k} n={self.n}")
        object.__setattr__(self, "scheme", Scheme(self.scheme))

    @property
    def block_count(self) -> int:
        if self.scheme is Scheme.RC:
            return self.k * self.k - self.k + 1
        return self.k * (self.n - self.k)

    @property
    def blocks_per_fragment(self) -> int:
        return self.k if self.scheme is Scheme.RC else self.n - self.k

    @property
    def fragment_fraction(self) -> Fraction:
        """Fragment size as a fraction of the file."""
        return Fraction(self.blocks_per_fragment, self.block_count)

    def repair_download(self) -> Fraction:
        """Bytes a newcomer downloads per repair, as a fraction of the file."""
        if self.scheme is Scheme.RC:
            return Fraction(self.k, self.block_count)
        if self.scheme is Scheme.OMMDS:
            return Fraction(self.n - 1, self.block_count)
        return Fraction(1)

    def beta(self) -> Fraction:
        """Repair download divided by the MDS fragment size M/k."""
        return self.repair_download() * self.k


@dataclass(frozen=True, eq=False)
class Fragment:
    node_id: int
    coeffs: np.ndarray  # rows x B, uint8
    payload: np.ndarray  # rows x block_size, uint8
    original_length: int
    scheme: Scheme | None = None
    k: int = 0
    n: int = 0

    @property
    def rows(self) -> int:
        return self.coeffs.shape[0]

    @property
    def block_count(self) -> int:
        return self.coeffs.shape[1]

    @property
    def block_size(self) -> int:
        return self.payload.shape[1]

    @property
    def payload_bytes(self) -> int:
        return self.payload.size

    def to_bytes(self) -> bytes:
        if self.scheme is None:
            raise InvalidInput("only fragments of a named scheme can be serialized")
        header = _HEADER.pack(
            MAGIC, int(self.scheme), self.k, self.n, self.block_count, self.rows,
            self.block_size, self.original_length, self.node_id,
        )
        return header + self.coeffs.tobytes() + self.payload.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Fragment":
        if len(data) < _HEADER.size:
            raise InvalidInput("truncated fragment header")
        magic, tag, k, n, b, rows, bs, length, node = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise InvalidInput(f"bad magic {magic!r}")
        off = _HEADER.size
        need = off + rows * b + rows * bs
        if len(data) != need:
            raise InvalidInput(f"fragment length {len(data)}, expected {need}")
        coeffs = np.frombuffer(data, np.uint8, rows * b, off).reshape(rows, b).copy()
        payload = np.frombuffer(data, np.uint8, rows * bs, off + rows * b).reshape(rows, bs).copy()
        try:
            scheme = Scheme(tag)
        except ValueError:
            raise InvalidInput(f"unknown scheme tag {tag}") from None
        return cls(node, coeffs, payload, length, scheme, k, n)

    def params(self) -> CodeParams:
        return CodeParams(self.k, self.n, self.scheme)


@dataclass(frozen=True, eq=False)
class RepairResponse:
    helper_id: int
    coeffs: np.ndarray  # rows x B, composed w.r.t. the source blocks
    payload: np.ndarray
    original_length: int = 0

    @property
    def rows(self) -> int:
        return self.coeffs.shape[0]


MAGIC = b"RGN1"
# magic, scheme, k, n, B, blocks/fragment, block size, original length, node id
_HEADER = struct.Struct("<4sBHHIHIQI")


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def blockify(data: bytes, block_count: int) -> np.ndarray:
    """Zero-pad ``data`` and cut it into ``block_count`` rows of equal size."""
    if not data:
        raise InvalidInput("cannot encode an empty file")
    size = -(-len(data) // block_count)
    buf = np.zeros(block_count * size, dtype=np.uint8)
    buf[: len(data)] = np.frombuffer(data, dtype=np.uint8)
    return buf.reshape(block_count, size)


def encode(data: bytes, params: CodeParams, seed=None) -> list[Fragment]:
    """Split ``data`` into B blocks and give each of n nodes random combinations."""
    rng = _rng(seed)
    blocks = blockify(bytes(data), params.block_count)
    rows = params.blocks_per_fragment
    out = []
    for node in range(params.n):
        coeffs = field.random_nonzero(rng, (rows, params.block_count))
        out.append(
            Fragment(node, coeffs, field.matmul(coeffs, blocks), len(data),
                     params.scheme, params.k, params.n)
        )
    return out


def helper_respond(fragment: Fragment, rows: int = 1, seed=None) -> RepairResponse:
    """Upload ``rows`` fresh random combinations of the helper's stored blocks."""
    if not 1 <= rows <= fragment.rows:
        raise ProtocolViolation(f"requested {rows} rows from a {fragment.rows}-row fragment")
    mix = field.random_nonzero(_rng(seed), (rows, fragment.rows))
    return RepairResponse(
        fragment.node_id,
        field.matmul(mix, fragment.coeffs),
        field.matmul(mix, fragment.payload),
        fragment.original_length,
    )


def regenerate(
    responses: Sequence[RepairResponse],
    store_rows: int,
    node_id: int,
    seed=None,
    params: CodeParams | None = None,
) -> Fragment:
    """Newcomer side of a repair.

    Keeps the received rows verbatim when ``store_rows`` equals their count,
    otherwise stores ``store_rows`` random combinations of them.
    """
    if not responses:
        raise ProtocolViolation("no responses")
    coeffs = np.vstack([r.coeffs for r in responses])
    payload = np.vstack([r.payload for r in responses])
    if store_rows > coeffs.shape[0]:
        raise ProtocolViolation(f"cannot store {store_rows} rows from {coeffs.shape[0]} received")
    if store_rows < coeffs.shape[0]:
        mix = field.random_nonzero(_rng(seed), (store_rows, coeffs.shape[0]))
        coeffs, payload = field.matmul(mix, coeffs), field.matmul(mix, payload)
    if params is None:
        return Fragment(node_id, coeffs, payload, responses[0].original_length)
    return Fragment(node_id, coeffs, payload, responses[0].original_length,
                    params.scheme, params.k, params.n)


def _check_helpers(fragments, params: CodeParams):
    for f in fragments:
        if f.block_count != params.block_count:
            raise ProtocolViolation(f"fragment {f.node_id} has {f.block_count} blocks, "
                                    f"expected {params.block_count}")


def _check_responses(responses, count, params):
    if len(responses) != count or any(r.rows != 1 for r in responses):
        raise ProtocolViolation(f"{params.scheme.name} repair needs exactly {count} "
                                f"single-block responses, got {len(responses)}")
    if len({r.helper_id for r in responses}) != len(responses):
        raise ProtocolViolation("duplicate helper")
    if any(r.coeffs.shape[1] != params.block_count for r in responses):
        raise ProtocolViolation("response block count does not match the code")


def _newcomer_id(ids, node_id):
    return 1 + max(ids) if node_id is None else node_id


def regenerate_rc(responses, params: CodeParams, seed=None, node_id=None) -> Fragment:
    """RC repair: k one-block responses, all stored as the new fragment."""
    if params.scheme is not Scheme.RC:
        raise ProtocolViolation("regenerate_rc needs an RC code")
    _check_responses(responses, params.k, params)
    node_id = _newcomer_id([r.helper_id for r in responses], node_id)
    return regenerate(responses, params.k, node_id, seed, params)


def regenerate_ommds(responses, params: CodeParams, seed=None, node_id=None) -> Fragment:
    """OMMDS repair: n-1 one-block responses mixed down to n-k stored blocks."""
    if params.scheme is not Scheme.OMMDS:
        raise ProtocolViolation("regenerate_ommds needs an OMMDS code")
    _check_responses(responses, params.n - 1, params)
    node_id = _newcomer_id([r.helper_id for r in responses], node_id)
    return regenerate(responses, params.n - params.k, node_id, seed, params)


def regenerate_naive(fragments: Sequence[Fragment], params: CodeParams, seed=None, node_id=None):
    """Download k whole fragments, decode the file, encode one fresh fragment."""
    if len(fragments) != params.k:
        raise ProtocolViolation(f"naive repair needs exactly k={params.k} fragments")
    _check_helpers(fragments, params)
    blocks = decode_blocks(fragments)
    rng = _rng(seed)
    coeffs = field.random_nonzero(rng, (params.blocks_per_fragment, params.block_count))
    return Fragment(_newcomer_id([f.node_id for f in fragments], node_id), coeffs, field.matmul(coeffs, blocks),
                    fragments[0].original_length, params.scheme, params.k, params.n)


def decode_blocks(fragments: Iterable[Fragment]) -> np.ndarray:
    fragments = list(fragments)
    coeffs = np.vstack([f.coeffs for f in fragments])
    payload = np.vstack([f.payload for f in fragments])
    return field.solve(coeffs, payload)


def reconstruct(fragments: Sequence[Fragment], params: CodeParams | None = None) -> bytes:
    """Recover the original bytes from (at least) k fragments.

    Raises :class:`SingularSystem` when the stacked coefficients have rank
    below B, i.e. the collector cannot decode.
    """
    fragments = list(fragments)
    if not fragments:
        raise InvalidInput("no fragments")
    params = params or fragments[0].params()
    if len(fragments) < params.k:
        raise InvalidInput(f"need at least k={params.k} fragments, got {len(fragments)}")
    _check_helpers(fragments, params)
    if len({f.original_length for f in fragments}) != 1:
        raise InvalidInput("fragments disagree on the original length")
    blocks = decode_blocks(fragments)
    return blocks.tobytes()[: fragments[0].original_length]


def decodable(fragments: Iterable[Fragment]) -> bool:
    fragments = list(fragments)
    coeffs = np.vstack([f.coeffs for f in fragments])
    return field.rank(coeffs) == coeffs.shape[1]


def transferred_blocks(items: Iterable[Fragment | RepairResponse]) -> int:
    return sum(x.coeffs.shape[0] for x in items)


# ---------------------------------------------------------------------------
# realising an information flow graph as an actual code


def realize_event_log(log, seed=None, block_size: int = 0):
    """Run random linear network coding over an event log from ``flowgraph``.

    Capacities are turned into whole blocks using the lcm of their
    denominators as the number of source blocks ``B`` (the file is 1).
    Initial nodes get random combinations of the source; each newcomer
    receives ``download * B`` fresh combinations from every helper and
    keeps ``storage * B`` of them (verbatim if it keeps them all).  A
    newcomer never keeps more rows than it received; extra rows could only
    be dependent ones.

    Returns ``(B, fragments, source)``: fragments are keyed by node id,
    inactive ones included, and ``source`` is the random B x block_size
    file.  ``block_size=0`` tracks coefficients only.
    """
    g = fg.build(log)
    caps = [e.cap for e in g.edges if e.cap is not None]
    B = math.lcm(*(c.denominator for c in caps), 1)
    rng = _rng(seed)
    source = rng.integers(0, 256, size=(B, block_size), dtype=np.uint8)
    frags: dict[int, Fragment] = {}
    for ev in log:
        if isinstance(ev, fg.Init):
            rows = int(ev.storage * B)
            for i in range(1, ev.count + 1):
                c = field.random_nonzero(rng, (rows, B))
                frags[i] = Fragment(i, c, field.matmul(c, source), B * block_size)
        elif isinstance(ev, fg.Join):
            per = int(ev.download * B)
            responses = [helper_respond(frags[h], per, rng) for h in ev.helpers if per > 0]
            rows = min(int(g.nodes[ev.node].storage * B), per * len(responses))
            if rows == 0 or not responses:
                frags[ev.node] = Fragment(ev.node, np.zeros((0, B), np.uint8),
                                          np.zeros((0, block_size), np.uint8), B * block_size)
            else:
                frags[ev.node] = regenerate(responses, rows, ev.node, rng)
    return B, frags, source
