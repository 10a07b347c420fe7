"""Deterministic seeded randomness and pre-generated noise tables.

Every stochastic object in the library is keyed by ``(seed, stream_id)``
plus a fixed domain tag, through numpy's ``SeedSequence``/``Philox``
counter-based generator.  Streams with distinct keys are statistically
independent, and the same key always reproduces the identical bit
sequence regardless of how many workers are running or in which order
streams are consumed.

Noise tables (Brownian increments for the Euler engine, standard
normals for the exponential-integrator engine) are generated once per
(chain, time slice) and are immutable afterwards: every Picard diagonal
reads the same values, which is what makes the sequential fine-grid
schemes exact fixed points of the parallel updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import struct

import numpy as np

from .schedule import DiscretizationScheme

_MASK64 = (1 << 64) - 1

# domain tags keep direct draws and the per-slice table substreams disjoint
_TAG_DIRECT = 0x00D1
_TAG_BROWNIAN = 0x00B0
_TAG_XI = 0x00E1

_MAGIC = b"PPKT"
_FORMAT_VERSION = 1


def _philox(entropy: list[int]) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


@dataclass
class RngStream:
    """A deterministic substream keyed by (seed, stream_id).

    ``counter`` records the number of values drawn so far; it is
    bookkeeping only (the underlying Philox state advances itself).
    """

    seed: int
    stream_id: int
    counter: int = 0
    _gen: np.random.Generator = field(repr=False, default=None)

    def __post_init__(self):
        self.seed = int(self.seed) & _MASK64
        self.stream_id = int(self.stream_id) & _MASK64
        if self._gen is None:
            self._gen = _philox([self.seed, self.stream_id, _TAG_DIRECT])


def make_rng(seed: int, stream_id: int = 0) -> RngStream:
    """Create a stream positioned at counter 0."""
    return RngStream(seed=seed, stream_id=stream_id)


def standard_normal_vec(rng: RngStream, d: int) -> np.ndarray:
    """Draw d i.i.d. N(0,1) entries and advance the stream."""
    if d < 1:
        raise ValueError(f"invalid dimension d={d}, must be >= 1")
    out = rng._gen.standard_normal(int(d))
    rng.counter += int(d)
    return out


def _slice_normals(seed: int, stream_id: int, tag: int, n: int,
                   rows: int, d: int) -> np.ndarray:
    """(rows, d) standard normals for one slice, keyed independently of
    when or where the slice is materialized."""
    g = _philox([seed & _MASK64, stream_id & _MASK64, tag, n])
    return g.standard_normal((rows, d))


class BrownianTable:
    """Pre-generated Brownian motion on a discretization grid.

    ``w[n][m]`` is the increment of the path from the start of slice n
    to grid node m (so ``w[n][0] == 0``), and ``steps[n][m]`` is the
    per-step increment ``w[n][m+1] - w[n][m]``, drawn fresh as
    N(0, eps[n][m] I_d).  ``w`` is the cumulative sum of ``steps`` by
    construction, so nested consistency is exact, not statistical.

    Slices may be materialized lazily; values do not depend on the
    materialization order.  Arrays are frozen once built.
    """

    def __init__(self, seed: int, stream_id: int, scheme: DiscretizationScheme,
                 d: int, lazy: bool = False):
        if d < 1:
            raise ValueError(f"invalid dimension d={d}, must be >= 1")
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.scheme = scheme
        self.d = int(d)
        self._steps: list[np.ndarray | None] = [None] * scheme.num_slices
        self._w: list[np.ndarray | None] = [None] * scheme.num_slices
        if not lazy:
            for n in range(scheme.num_slices):
                self._materialize(n)

    def _materialize(self, n: int) -> None:
        eps = self.scheme.eps[n]
        z = _slice_normals(self.seed, self.stream_id, _TAG_BROWNIAN, n,
                           eps.shape[0], self.d)
        steps = np.sqrt(eps)[:, None] * z
        w = np.vstack((np.zeros((1, self.d)), np.cumsum(steps, axis=0)))
        steps.flags.writeable = False
        w.flags.writeable = False
        self._steps[n] = steps
        self._w[n] = w

    def w(self, n: int) -> np.ndarray:
        """Cumulative increments for slice n, shape (M_n + 1, d)."""
        if self._w[n] is None:
            self._materialize(n)
        return self._w[n]

    def steps(self, n: int) -> np.ndarray:
        """Per-step increments for slice n, shape (M_n, d)."""
        if self._steps[n] is None:
            self._materialize(n)
        return self._steps[n]

    def release(self, n: int) -> None:
        """Drop slice n's arrays (rematerialized bit-identically on demand)."""
        if not getattr(self, "_releasable", True):
            return
        self._steps[n] = None
        self._w[n] = None


class XiTable:
    """Pre-generated i.i.d. standard normal vectors, one per (slice, step).

    ``xi[n][m]`` for m in [0, M_n) drives the m-th sub-step of slice n in
    the exponential-integrator engine; reused by every Picard diagonal.
    """

    def __init__(self, seed: int, stream_id: int, scheme: DiscretizationScheme,
                 d: int, lazy: bool = False):
        if d < 1:
            raise ValueError(f"invalid dimension d={d}, must be >= 1")
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        self.scheme = scheme
        self.d = int(d)
        self._xi: list[np.ndarray | None] = [None] * scheme.num_slices
        if not lazy:
            for n in range(scheme.num_slices):
                self._materialize(n)

    def _materialize(self, n: int) -> None:
        rows = self.scheme.eps[n].shape[0]
        xi = _slice_normals(self.seed, self.stream_id, _TAG_XI, n, rows, self.d)
        xi.flags.writeable = False
        self._xi[n] = xi

    def xi(self, n: int) -> np.ndarray:
        """Normals for slice n, shape (M_n, d)."""
        if self._xi[n] is None:
            self._materialize(n)
        return self._xi[n]

    def release(self, n: int) -> None:
        if not getattr(self, "_releasable", True):
            return
        self._xi[n] = None


def build_brownian_table(rng: RngStream, scheme: DiscretizationScheme, d: int,
                         lazy: bool = False) -> BrownianTable:
    """Brownian table keyed by the stream's identity (not its position)."""
    return BrownianTable(rng.seed, rng.stream_id, scheme, d, lazy=lazy)


def build_xi_table(rng: RngStream, scheme: DiscretizationScheme, d: int,
                   lazy: bool = False) -> XiTable:
    return XiTable(rng.seed, rng.stream_id, scheme, d, lazy=lazy)


def zero_brownian_table(scheme: DiscretizationScheme, d: int) -> BrownianTable:
    """All-zero path (drift-only dynamics; used by hand-checked tests)."""
    table = BrownianTable.__new__(BrownianTable)
    table.seed = 0
    table.stream_id = 0
    table.scheme = scheme
    table.d = int(d)
    table._releasable = False
    table._steps = []
    table._w = []
    for n in range(scheme.num_slices):
        m = scheme.eps[n].shape[0]
        steps = np.zeros((m, d))
        w = np.zeros((m + 1, d))
        steps.flags.writeable = False
        w.flags.writeable = False
        table._steps.append(steps)
        table._w.append(w)
    return table


def zero_xi_table(scheme: DiscretizationScheme, d: int) -> XiTable:
    table = XiTable.__new__(XiTable)
    table.seed = 0
    table.stream_id = 0
    table.scheme = scheme
    table.d = int(d)
    table._releasable = False
    table._xi = []
    for n in range(scheme.num_slices):
        m = scheme.eps[n].shape[0]
        xi = np.zeros((m, d))
        xi.flags.writeable = False
        table._xi.append(xi)
    return table


# ---------------------------------------------------------------------------
# binary dump/restore
#
# layout: magic "PPKT", version u32, d u32, N u32, M-per-slice u32[N],
# then per slice M_n records of d little-endian float64 (the per-step
# increments for a Brownian table, the xi vectors for a xi table).
# ---------------------------------------------------------------------------

def _table_rows(table) -> list[np.ndarray]:
    if isinstance(table, BrownianTable):
        return [table.steps(n) for n in range(table.scheme.num_slices)]
    if isinstance(table, XiTable):
        return [table.xi(n) for n in range(table.scheme.num_slices)]
    raise TypeError(f"cannot dump object of type {type(table).__name__}")


def dump_table(table, path) -> None:
    """Write a noise table to a binary file; round trip is bit-exact."""
    rows = _table_rows(table)
    n_slices = len(rows)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _FORMAT_VERSION, table.d, n_slices))
        fh.write(struct.pack(f"<{n_slices}I", *(r.shape[0] for r in rows)))
        for r in rows:
            fh.write(np.ascontiguousarray(r, dtype="<f8").tobytes())


def _read_header(fh):
    magic = fh.read(4)
    if magic != _MAGIC:
        raise ValueError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    version, d, n_slices = struct.unpack("<III", fh.read(12))
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported table format version {version}")
    ms = struct.unpack(f"<{n_slices}I", fh.read(4 * n_slices))
    return d, n_slices, ms


def _read_payload(path, scheme: DiscretizationScheme):
    with open(path, "rb") as fh:
        d, n_slices, ms = _read_header(fh)
        if n_slices != scheme.num_slices:
            raise ValueError(f"table has {n_slices} slices, scheme has "
                             f"{scheme.num_slices}")
        rows = []
        for n, m in enumerate(ms):
            expect = scheme.eps[n].shape[0]
            if m != expect:
                raise ValueError(f"slice {n}: table has {m} steps, scheme "
                                 f"has {expect}")
            buf = fh.read(8 * m * d)
            rows.append(np.frombuffer(buf, dtype="<f8").reshape(m, d).copy())
    return d, rows


def load_brownian_table(path, scheme: DiscretizationScheme) -> BrownianTable:
    """Restore a Brownian table; cumulative sums are recomputed exactly."""
    d, rows = _read_payload(path, scheme)
    table = BrownianTable.__new__(BrownianTable)
    table.seed = 0
    table.stream_id = 0
    table.scheme = scheme
    table.d = d
    table._releasable = False
    table._steps = []
    table._w = []
    for steps in rows:
        w = np.vstack((np.zeros((1, d)), np.cumsum(steps, axis=0)))
        steps.flags.writeable = False
        w.flags.writeable = False
        table._steps.append(steps)
        table._w.append(w)
    return table


def load_xi_table(path, scheme: DiscretizationScheme) -> XiTable:
    d, rows = _read_payload(path, scheme)
    table = XiTable.__new__(XiTable)
    table.seed = 0
    table.stream_id = 0
    table.scheme = scheme
    table.d = d
    table._releasable = False
    table._xi = []
    for xi in rows:
        xi.flags.writeable = False
        table._xi.append(xi)
    return table
