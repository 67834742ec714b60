"""Blockwise domain decomposition, rank topology and SPMD exchange fabrics.

Every worker runs the same program on its own block (SPMD). Communication
goes through a small Fabric abstraction: point-to-point plane messages for
halo exchange plus deterministic collective reductions. Two realizations
are provided: an in-process hub for worker threads and a local-socket
fabric for OS processes. The numerics never know which one is active.
"""

from __future__ import annotations

import os
import pickle
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .grid import FACES, BlockExtent, Grid3, HaloField

__all__ = [
    "Topology",
    "Fabric",
    "NullFabric",
    "ThreadHub",
    "ThreadFabric",
    "SocketFabric",
    "FabricError",
    "CollectiveMismatch",
    "PartitionError",
    "partition_grid",
    "derive_coarse_extent",
    "Exchanger",
    "halo_exchange",
    "DistContext",
    "PhaseTimers",
]


class PartitionError(ValueError):
    pass


class FabricError(RuntimeError):
    pass


class CollectiveMismatch(FabricError):
    """Workers disagreed on the collective call sequence."""


@dataclass(frozen=True)
class Topology:
    """Cartesian worker layout; ranks follow x-line lexicographic order."""

    npx0: int
    npy0: int
    npz0: int

    @property
    def np(self) -> int:
        return self.npx0 * self.npy0 * self.npz0

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.npx0, self.npy0, self.npz0)

    def rank_of(self, npx: int, npy: int, npz: int) -> int:
        if not (0 <= npx < self.npx0 and 0 <= npy < self.npy0 and 0 <= npz < self.npz0):
            raise PartitionError(f"coords {(npx, npy, npz)} outside {self.dims}")
        return npx + npy * self.npx0 + npz * self.npx0 * self.npy0

    def coords_of(self, rank: int) -> tuple[int, int, int]:
        if not 0 <= rank < self.np:
            raise PartitionError(f"rank {rank} outside 0..{self.np - 1}")
        npx = rank % self.npx0
        npy = (rank // self.npx0) % self.npy0
        npz = rank // (self.npx0 * self.npy0)
        return (npx, npy, npz)

    def neighbor(self, rank: int, face: tuple[int, int]):
        """Rank of the face neighbor, or None at the physical boundary."""
        dim, side = face
        coords = list(self.coords_of(rank))
        coords[dim] += side
        if not 0 <= coords[dim] < self.dims[dim]:
            return None
        return self.rank_of(*coords)


def _split_1d(n: int, parts: int) -> list[tuple[int, int]]:
    """Contiguous balanced split of 1..n into `parts` ranges (sizes differ <= 1)."""
    if parts > n:
        raise PartitionError(f"cannot split {n} vertices over {parts} workers")
    bounds = [(p * n) // parts for p in range(parts + 1)]
    return [(bounds[p] + 1, bounds[p + 1]) for p in range(parts)]


def partition_grid(grid: Grid3, topo: Topology) -> list[BlockExtent]:
    """Blockwise partition of the global grid, one extent per rank.

    Cut lines fall between vertices, so adjacent blocks own adjacent global
    vertices. Per-direction sizes differ by at most one.
    """
    sx = _split_1d(grid.n1, topo.npx0)
    sy = _split_1d(grid.n2, topo.npy0)
    sz = _split_1d(grid.n3, topo.npz0)
    extents = []
    for rank in range(topo.np):
        px, py, pz = topo.coords_of(rank)
        extents.append(BlockExtent(sx[px][0], sy[py][0], sz[pz][0],
                                   sx[px][1], sy[py][1], sz[pz][1]))
    return extents


def derive_coarse_extent(fine: BlockExtent) -> BlockExtent:
    """Coarse block owned by the same rank under global-grid coarsening.

    Coarse vertex i corresponds to fine vertex 2i-1; the coarse block is the
    set of coarse vertices whose fine image lies in the fine block. Keeping
    this alignment guarantees transfer stencils reach at most one halo
    plane. The result may be empty for very thin blocks, which callers must
    reject (level-incompatible).
    """
    clo = tuple((lo + 2) // 2 for lo in fine.lo)   # ceil((lo+1)/2)
    chi = tuple((hi + 1) // 2 for hi in fine.hi)   # floor((hi+1)/2)
    return BlockExtent(clo[0], clo[1], clo[2], chi[0], chi[1], chi[2])


# ---------------------------------------------------------------------------
# Fabrics
# ---------------------------------------------------------------------------

class Fabric:
    """SPMD exchange primitives for one worker.

    Point-to-point messages between a fixed pair are delivered in order.
    Collectives are called by all workers in the same sequence; a sequence
    tag guards against mismatched call ordering. allreduce_sum returns the
    identical value on every worker (fixed rank-order summation).
    """

    rank: int = 0
    np: int = 1

    def send(self, dest: int, tag, payload) -> None:
        raise NotImplementedError

    def recv(self, src: int, tag):
        raise NotImplementedError

    def allreduce_sum(self, value):
        raise NotImplementedError

    def barrier(self) -> None:
        raise NotImplementedError

    def gather(self, obj, root: int = 0):
        raise NotImplementedError

    def bcast(self, obj, root: int = 0):
        raise NotImplementedError

    def close(self) -> None:
        pass


class NullFabric(Fabric):
    """Single-worker fabric: collectives are identities, no neighbors exist."""

    rank = 0
    np = 1

    def send(self, dest, tag, payload):
        raise FabricError("single worker has no peers")

    def recv(self, src, tag):
        raise FabricError("single worker has no peers")

    def allreduce_sum(self, value):
        return value

    def barrier(self):
        pass

    def gather(self, obj, root=0):
        return [obj]

    def bcast(self, obj, root=0):
        return obj


def _rank_order_sum(parts):
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


class _SpinBarrier:
    """Reusable barrier that spins with GIL yields instead of sleeping on a
    condition variable.

    Workers rendezvous every few hundred microseconds (each dot product is a
    collective), where condition-variable wakeups cost whole scheduler
    quanta. `os.sched_yield()` drops both the GIL and the CPU, so a waiting
    worker is rescheduled immediately even on a single core.
    """

    def __init__(self, n: int, timeout: float):
        self.n = n
        self.timeout = timeout
        self.count = 0
        self.gen = 0
        self.broken = False
        self._lock = threading.Lock()

    def wait(self) -> None:
        with self._lock:
            if self.broken:
                raise FabricError("collective barrier broken (worker failure)")
            gen = self.gen
            self.count += 1
            if self.count == self.n:
                self.count = 0
                self.gen += 1
                return
        deadline = time.monotonic() + self.timeout
        while self.gen == gen and not self.broken:
            if time.monotonic() > deadline:
                self.abort()
                raise FabricError("collective barrier timeout (deadlock or "
                                  "worker failure)")
            os.sched_yield()
        if self.broken:
            raise FabricError("collective barrier broken (worker failure)")

    def abort(self) -> None:
        self.broken = True


class ThreadHub:
    """Shared state for an in-process (thread) fabric.

    allreduce: every rank deposits its partial, then each rank sums the
    slots in rank order 0..np-1 — a fixed deterministic reduction giving
    bit-identical results on all workers.

    Slot arrays are double-buffered by collective parity so a single
    barrier per collective is enough: a rank racing ahead writes the other
    buffer, and it cannot start collective k+2 (reusing this buffer) until
    every rank has passed the barrier for k+1 — i.e. after all readers of
    collective k are done.
    """

    def __init__(self, np_: int, timeout: float = 600.0):
        self.np = np_
        self.timeout = timeout
        self.slots = ([None] * np_, [None] * np_)
        self.coll_tags = ([None] * np_, [None] * np_)
        self.barrier = _SpinBarrier(np_, timeout)
        self.queues = {}
        for src in range(np_):
            for dst in range(np_):
                if src != dst:
                    self.queues[(src, dst)] = deque()

    def fabric(self, rank: int) -> "ThreadFabric":
        return ThreadFabric(self, rank)


class ThreadFabric(Fabric):
    def __init__(self, hub: ThreadHub, rank: int):
        self.hub = hub
        self.rank = rank
        self.np = hub.np
        self._coll_seq = 0

    def send(self, dest, tag, payload):
        # deque.append is atomic under the GIL; single producer per pair
        self.hub.queues[(self.rank, dest)].append((tag, payload))

    def recv(self, src, tag):
        q = self.hub.queues[(src, self.rank)]
        deadline = time.monotonic() + self.hub.timeout
        while True:
            try:
                got_tag, payload = q.popleft()
                break
            except IndexError:
                if time.monotonic() > deadline:
                    raise FabricError(
                        f"recv timeout: rank {self.rank} waiting on {src} "
                        f"tag {tag}") from None
                os.sched_yield()
        if got_tag != tag:
            raise CollectiveMismatch(
                f"rank {self.rank} expected tag {tag} from {src}, got {got_tag}")
        return payload

    def _wait(self):
        self.hub.barrier.wait()

    def _collective(self, kind, value):
        self._coll_seq += 1
        side = self._coll_seq % 2
        tag = (kind, self._coll_seq)
        self.hub.coll_tags[side][self.rank] = tag
        self.hub.slots[side][self.rank] = value
        self._wait()
        if any(t != tag for t in self.hub.coll_tags[side]):
            raise CollectiveMismatch(
                f"collective ordering mismatch: {self.hub.coll_tags[side]}")
        return list(self.hub.slots[side])

    def allreduce_sum(self, value):
        return _rank_order_sum(self._collective("allreduce", value))

    def barrier(self):
        self._collective("barrier", None)

    def gather(self, obj, root=0):
        parts = self._collective("gather", obj)
        return parts if self.rank == root else None

    def bcast(self, obj, root=0):
        parts = self._collective("bcast", obj if self.rank == root else None)
        return parts[root]


class SocketFabric(Fabric):
    """Full-mesh fabric over local sockets for OS-process workers.

    Uses Unix domain sockets in a rendezvous directory by default, or TCP on
    127.0.0.1 starting at `port_base` when given. Collectives funnel through
    rank 0 which sums partials in rank order (deterministic, and identical
    to the thread fabric's reduction order).
    """

    _HDR = struct.Struct("<Q")

    def __init__(self, rank: int, np_: int, rendezvous: str, port_base: int | None = None,
                 timeout: float = 600.0):
        self.rank = rank
        self.np = np_
        self.timeout = timeout
        self._coll_seq = 0
        self._peers: dict[int, socket.socket] = {}
        self._pending: dict[int, list] = {r: [] for r in range(np_)}
        if np_ == 1:
            return

        if port_base is not None:
            listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            listener.bind(("127.0.0.1", port_base + rank))
        else:
            listener = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
            listener.bind(os.path.join(rendezvous, f"rank{rank}.sock"))
        listener.listen(np_)
        listener.settimeout(timeout)

        # Ranks below connect to us; we connect to ranks above.
        for _ in range(rank):
            conn, _addr = listener.accept()
            peer = self._recv_raw_sock(conn)
            self._peers[peer] = conn
        for peer in range(rank + 1, np_):
            s = self._connect(peer, rendezvous, port_base)
            self._send_raw_sock(s, self.rank)
            self._peers[peer] = s
        listener.close()
        for s in self._peers.values():
            s.settimeout(timeout)

    def _connect(self, peer, rendezvous, port_base):
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                if port_base is not None:
                    s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
                    s.connect(("127.0.0.1", port_base + peer))
                else:
                    s = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
                    s.connect(os.path.join(rendezvous, f"rank{peer}.sock"))
                return s
            except (ConnectionRefusedError, FileNotFoundError):
                if time.monotonic() > deadline:
                    raise FabricError(f"rank {self.rank} could not reach rank {peer}")
                time.sleep(0.01)

    @classmethod
    def _send_raw_sock(cls, s, obj):
        blob = pickle.dumps(obj, protocol=pickle.HIGHEST_PROTOCOL)
        s.sendall(cls._HDR.pack(len(blob)) + blob)

    @classmethod
    def _recv_raw_sock(cls, s):
        hdr = cls._read_exact(s, cls._HDR.size)
        (n,) = cls._HDR.unpack(hdr)
        return pickle.loads(cls._read_exact(s, n))

    @staticmethod
    def _read_exact(s, n):
        chunks = []
        while n:
            try:
                chunk = s.recv(min(n, 1 << 20))
            except socket.timeout:
                raise FabricError("socket recv timeout (deadlock?)") from None
            if not chunk:
                raise FabricError("peer closed connection")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def send(self, dest, tag, payload):
        self._send_raw_sock(self._peers[dest], (tag, payload))

    def recv(self, src, tag):
        pending = self._pending[src]
        for i, (t, p) in enumerate(pending):
            if t == tag:
                return pending.pop(i)[1]
        while True:
            got_tag, payload = self._recv_raw_sock(self._peers[src])
            if got_tag == tag:
                return payload
            pending.append((got_tag, payload))

    def _collective(self, kind, value):
        self._coll_seq += 1
        tag = ("coll", kind, self._coll_seq)
        if self.rank == 0:
            parts = [value]
            for r in range(1, self.np):
                parts.append(self.recv(r, tag))
            return parts
        self.send(0, tag, value)
        return None

    def _fanout(self, result):
        tag = ("bcast", self._coll_seq)
        if self.rank == 0:
            for r in range(1, self.np):
                self.send(r, tag, result)
            return result
        return self.recv(0, tag)

    def allreduce_sum(self, value):
        parts = self._collective("allreduce", value)
        total = _rank_order_sum(parts) if self.rank == 0 else None
        return self._fanout(total)

    def barrier(self):
        self._collective("barrier", None)
        self._fanout(None)

    def gather(self, obj, root=0):
        parts = self._collective("gather", obj)
        if root == 0:
            return parts if self.rank == 0 else None
        handed = self._fanout(parts)
        return handed if self.rank == root else None

    def bcast(self, obj, root=0):
        # route through rank 0, which fans out to everyone
        parts = self._collective("bcast", obj if self.rank == root else None)
        return self._fanout(parts[root] if self.rank == 0 else None)

    def close(self):
        for s in self._peers.values():
            try:
                s.close()
            except OSError:
                pass


# ---------------------------------------------------------------------------
# Halo exchange
# ---------------------------------------------------------------------------

class Exchanger:
    """Per-rank halo exchange for one level's block layout.

    Faces are exchanged dimension by dimension (x, then y, then z), each
    plane carrying the full array extent in the other directions including
    already-filled ghost lines. Two staged passes therefore populate the
    edge and corner ghosts needed by the 27-point transfer stencils, with
    only face-neighbor communication.
    """

    def __init__(self, topo: Topology, rank: int, fabric: Fabric, timers=None):
        self.topo = topo
        self.rank = rank
        self.fabric = fabric
        self.timers = timers
        self.coords = topo.coords_of(rank)
        self.neighbors = {face: topo.neighbor(rank, face) for face in FACES}
        self._seq = 0

    def is_physical(self, face: tuple[int, int]) -> bool:
        return self.neighbors[face] is None

    def exchange(self, field: HaloField) -> None:
        t0 = time.perf_counter()
        self._seq += 1
        data = field.data
        for dim in range(3):
            lo_face, hi_face = (dim, -1), (dim, +1)
            lo_nb, hi_nb = self.neighbors[lo_face], self.neighbors[hi_face]
            send_lo = _plane(data, dim, 1)
            send_hi = _plane(data, dim, data.shape[dim] - 2)
            # even/odd ordering along this dimension avoids send/recv cycles
            parity = self.coords[dim] % 2
            steps = [(lo_nb, lo_face, send_lo, 0),
                     (hi_nb, hi_face, send_hi, data.shape[dim] - 1)]
            if parity:
                steps.reverse()
            for nb, face, plane, ghost_idx in steps:
                if nb is None:
                    continue
                tag = ("halo", self._seq, dim, face[1])
                # plane.copy(), not a view: the in-process fabric passes
                # objects by reference and the sender may mutate the field
                # before the receiver drains its queue
                self.fabric.send(nb, tag, plane.copy())
                recv_tag = ("halo", self._seq, dim, -face[1])
                _plane(data, dim, ghost_idx)[...] = self.fabric.recv(nb, recv_tag)
        field.mark_halo_valid()
        if self.timers is not None:
            self.timers.add("halo", time.perf_counter() - t0)

    def zero_physical_ghosts(self, field: HaloField) -> None:
        data = field.data
        for dim in range(3):
            if self.is_physical((dim, -1)):
                _plane(data, dim, 0)[...] = 0.0
            if self.is_physical((dim, +1)):
                _plane(data, dim, data.shape[dim] - 1)[...] = 0.0


def _plane(data: np.ndarray, dim: int, idx: int) -> np.ndarray:
    sl = [slice(None)] * 3
    sl[dim] = idx
    return data[tuple(sl)]


def halo_exchange(field: HaloField, topo: Topology, rank: int, fabric: Fabric) -> None:
    """One-shot halo exchange (see Exchanger for the staged-plane protocol)."""
    Exchanger(topo, rank, fabric).exchange(field)


# ---------------------------------------------------------------------------
# Phase timers and distributed context
# ---------------------------------------------------------------------------

class PhaseTimers:
    """Accumulated wall-clock per phase (matvec, precond, halo, dot, ...)."""

    def __init__(self):
        self.totals: dict[str, float] = {}

    def add(self, phase: str, dt: float) -> None:
        self.totals[phase] = self.totals.get(phase, 0.0) + dt

    def timing(self, phase: str):
        return _TimerCtx(self, phase)


class _TimerCtx:
    def __init__(self, timers, phase):
        self.timers = timers
        self.phase = phase

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.timers.add(self.phase, time.perf_counter() - self.t0)
        return False


class DistContext:
    """Worker-local handle bundling rank, topology, fabric and timers.

    Provides the global inner product and norms over owned regions. The
    reduction order is fixed per layout, so results are deterministic but
    may differ across layouts at rounding level.
    """

    def __init__(self, topo: Topology, rank: int, fabric: Fabric,
                 grid: Grid3 | None = None, extent: BlockExtent | None = None,
                 timers: PhaseTimers | None = None):
        self.topo = topo
        self.rank = rank
        self.fabric = fabric
        self.grid = grid
        self.extent = extent
        self.timers = timers if timers is not None else PhaseTimers()

    @property
    def np(self) -> int:
        return self.topo.np

    def dot(self, u: np.ndarray, v: np.ndarray) -> complex:
        """Global conjugated inner product sum(conj(u) * v) over owned regions."""
        t0 = time.perf_counter()
        local = np.vdot(u, v)
        out = complex(self.fabric.allreduce_sum(local))
        self.timers.add("dot", time.perf_counter() - t0)
        return out

    def norm(self, u: np.ndarray) -> float:
        d = self.dot(u, u)
        return float(np.sqrt(max(d.real, 0.0)))

    def random_owned(self, rng: np.random.Generator) -> np.ndarray:
        """Owned slice of a global random complex field (layout-independent values)."""
        g, e = self.grid, self.extent
        full = rng.standard_normal((g.n1, g.n2, g.n3)) \
            + 1j * rng.standard_normal((g.n1, g.n2, g.n3))
        return np.ascontiguousarray(
            full[e.lo1 - 1:e.hi1, e.lo2 - 1:e.hi2, e.lo3 - 1:e.hi3])


class SequentialVectorContext:
    """Minimal context for plain 1-D vectors (dense tests, no partitioning)."""

    np = 1
    rank = 0

    def __init__(self, n: int):
        self.n = n
        self.timers = PhaseTimers()

    def dot(self, u, v):
        return complex(np.vdot(u, v))

    def norm(self, u):
        return float(np.linalg.norm(u))

    def random_owned(self, rng):
        return rng.standard_normal(self.n) + 1j * rng.standard_normal(self.n)
