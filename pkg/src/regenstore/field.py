"""Arithmetic and linear algebra over GF(2^8).

Elements are ints in [0, 255] (or numpy ``uint8`` arrays), read as
polynomials over GF(2) reduced modulo x^8 + x^4 + x^3 + x^2 + 1 (0x11D).
Multiplication goes through log/antilog tables; matrices are plain 2-D
``uint8`` arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import SingularSystem

MODULUS = 0x11D
GENERATOR = 0x02
ORDER = 256


def _build_tables():
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= MODULUS
    exp[255:510] = exp[:255]
    return exp, log


EXP, LOG = _build_tables()

# Full product table; MUL[a, b] == mul(a, b). 64 KiB, used for vectorised row ops.
MUL = EXP[(LOG[:, None] + LOG[None, :]) % 255].astype(np.uint8)
MUL[0, :] = 0
MUL[:, 0] = 0
INV = np.zeros(256, dtype=np.uint8)
INV[1:] = EXP[(255 - LOG[1:]) % 255]


def add(a: int, b: int) -> int:
    return a ^ b


sub = add


def mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return int(EXP[LOG[a] + LOG[b]])


def inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(INV[a])


def div(a: int, b: int) -> int:
    return mul(a, inv(b))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product ``a @ b`` over GF(256)."""
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.uint8)
    for j in range(a.shape[1]):
        col = a[:, j]
        if not col.any():
            continue
        out ^= MUL[col[:, None], b[j][None, :]]
    return out


def identity(n: int) -> np.ndarray:
    return np.eye(n, dtype=np.uint8)


def _reduce(m: np.ndarray, ncols: int):
    """Gauss-Jordan elimination on a copy of ``m`` over its first ``ncols`` columns.

    Pivot rule: walk columns left to right, take the first row at or below
    the current pivot row with a nonzero entry. Returns (reduced, pivots).
    """
    m = np.array(m, dtype=np.uint8, copy=True)
    rows = m.shape[0]
    pivots = []
    r = 0
    for c in range(ncols):
        if r == rows:
            break
        nz = np.flatnonzero(m[r:, c])
        if nz.size == 0:
            continue
        p = r + int(nz[0])
        if p != r:
            m[[r, p]] = m[[p, r]]
        m[r] = MUL[INV[m[r, c]], m[r]]
        factors = m[:, c].copy()
        factors[r] = 0
        hit = np.flatnonzero(factors)
        if hit.size:
            m[hit] ^= MUL[factors[hit][:, None], m[r][None, :]]
        pivots.append(c)
        r += 1
    return m, pivots


def rank(m: np.ndarray) -> int:
    m = np.asarray(m, dtype=np.uint8)
    if m.size == 0:
        return 0
    return len(_reduce(m, m.shape[1])[1])


def solve(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``m @ x = rhs`` for x.

    ``m`` may have more rows than columns, but must have full column rank;
    otherwise :class:`SingularSystem` is raised.
    """
    m = np.asarray(m, dtype=np.uint8)
    rhs = np.asarray(rhs, dtype=np.uint8)
    if rhs.ndim == 1:
        return solve(m, rhs[:, None])[:, 0]
    rows, cols = m.shape
    if rhs.shape[0] != rows:
        raise ValueError(f"rhs has {rhs.shape[0]} rows, matrix has {rows}")
    if rows < cols:
        raise SingularSystem(f"underdetermined: {rows} equations, {cols} unknowns")
    reduced, pivots = _reduce(np.hstack([m, rhs]), cols)
    if len(pivots) < cols:
        raise SingularSystem(f"rank {len(pivots)} < {cols}")
    if reduced[cols:, cols:].any():
        raise SingularSystem("inconsistent overdetermined system")
    return reduced[:cols, cols:].copy()


def random_nonzero(rng: np.random.Generator, shape) -> np.ndarray:
    """Coefficients drawn uniformly from the 255 nonzero field elements."""
    return rng.integers(1, 256, size=shape, dtype=np.uint8)
